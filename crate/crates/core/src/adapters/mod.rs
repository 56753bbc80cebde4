//! Covariate injection blocks and the ablation variants built from them.
//!
//! The input block (IIB) corrects token embeddings with past covariates, the
//! output block (OIB) corrects next-token logits with future covariates. Both
//! are residual: `surface + FFN(features)`, with the FFN's last layer starting
//! at zero so a freshly attached model reproduces its backbone exactly.

mod block;
mod composite;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use block::{BlockCache, InjectionBlock, Projection};
pub use composite::{attach, parameter_count, CompositeModel, ParameterCount, StepOutput, TrainingWindow};

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::nn::params::{visit_child, visit_child_mut, Parameters};
use crate::nn::rng::RngStream;
use crate::nn::FfnParams;
use crate::tokenizer::TokenizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdapterVariant {
    #[serde(rename = "IIB_OIB")]
    IibOib,
    #[serde(rename = "IIB_only")]
    IibOnly,
    #[serde(rename = "OIB_only")]
    OibOnly,
    #[serde(rename = "FF_IIB_OIB")]
    FfIibOib,
    #[serde(rename = "FF_IIB")]
    FfIib,
    #[serde(rename = "FF_OIB")]
    FfOib,
    #[serde(rename = "NC")]
    Nc,
    #[serde(rename = "FF_NC")]
    FfNc,
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "HS")]
    Hs,
    #[serde(rename = "OL")]
    Ol,
    #[serde(rename = "NL")]
    Nl,
    #[serde(rename = "NL_NR")]
    NlNr,
    #[serde(rename = "POINT_OIB")]
    PointOib,
}

impl AdapterVariant {
    pub const ALL: [AdapterVariant; 14] = [
        AdapterVariant::IibOib,
        AdapterVariant::IibOnly,
        AdapterVariant::OibOnly,
        AdapterVariant::FfIibOib,
        AdapterVariant::FfIib,
        AdapterVariant::FfOib,
        AdapterVariant::Nc,
        AdapterVariant::FfNc,
        AdapterVariant::Rs,
        AdapterVariant::Hs,
        AdapterVariant::Ol,
        AdapterVariant::Nl,
        AdapterVariant::NlNr,
        AdapterVariant::PointOib,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdapterVariant::IibOib => "IIB_OIB",
            AdapterVariant::IibOnly => "IIB_only",
            AdapterVariant::OibOnly => "OIB_only",
            AdapterVariant::FfIibOib => "FF_IIB_OIB",
            AdapterVariant::FfIib => "FF_IIB",
            AdapterVariant::FfOib => "FF_OIB",
            AdapterVariant::Nc => "NC",
            AdapterVariant::FfNc => "FF_NC",
            AdapterVariant::Rs => "RS",
            AdapterVariant::Hs => "HS",
            AdapterVariant::Ol => "OL",
            AdapterVariant::Nl => "NL",
            AdapterVariant::NlNr => "NL_NR",
            AdapterVariant::PointOib => "POINT_OIB",
        }
    }

    /// FF variants always update the backbone alongside the adapters.
    pub fn is_full_finetune(self) -> bool {
        matches!(
            self,
            AdapterVariant::FfIibOib | AdapterVariant::FfIib | AdapterVariant::FfOib | AdapterVariant::FfNc
        )
    }

    pub fn is_point(self) -> bool {
        self == AdapterVariant::PointOib
    }

    /// False for the variants whose output cannot depend on covariates.
    pub fn uses_covariates(self) -> bool {
        !matches!(self, AdapterVariant::Nc | AdapterVariant::FfNc | AdapterVariant::Hs)
    }
}

impl fmt::Display for AdapterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdapterVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdapterVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown adapter variant `{s}`")))
    }
}

/// Adapter sizes. `hidden` is shared by every linear projection and by the
/// FFN hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterHyper {
    pub hidden: usize,
    pub covariate_dim: usize,
    /// Bin layout used to turn logits into the point forecast of `POINT_OIB`.
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
}

impl Default for AdapterHyper {
    fn default() -> Self {
        Self {
            hidden: 32,
            covariate_dim: 1,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub covariate_dim: usize,
    pub iib: Option<InjectionBlock>,
    pub oib: Option<InjectionBlock>,
    /// `c x vocab` matrix of the residual linear variant.
    pub rs_cov: Option<Matrix>,
    pub point: Option<InjectionBlock>,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Split,
    StateOnly,
    Joint,
    Concat(bool),
}

fn build_block(shape: Shape, state_dim: usize, c: usize, out: usize, h: usize, rng: &mut RngStream) -> InjectionBlock {
    let proj = match shape {
        Shape::Split => Projection::Split {
            state: Matrix::uniform_init(state_dim, h, rng),
            cov: Matrix::uniform_init(c, h, rng),
        },
        Shape::StateOnly => Projection::StateOnly {
            state: Matrix::uniform_init(state_dim, h, rng),
        },
        Shape::Joint => Projection::Joint {
            weight: Matrix::uniform_init(state_dim + c, 2 * h, rng),
        },
        Shape::Concat(relu) => Projection::Concat { relu },
    };
    let width = proj.feature_dim(state_dim, c);
    InjectionBlock {
        proj,
        ffn: FfnParams::new_zero_output(width, h, out, rng),
    }
}

impl AdapterParams {
    /// Fresh adapters for `variant` on a backbone with the given widths.
    pub fn init(variant: AdapterVariant, d_model: usize, vocab: usize, hyper: &AdapterHyper, rng: &mut RngStream) -> Result<Self> {
        let (h, c) = (hyper.hidden, hyper.covariate_dim);
        if h == 0 || d_model == 0 || vocab == 0 {
            return Err(Error::Config("adapter and backbone widths must be positive".into()));
        }
        use AdapterVariant as V;
        let (iib, oib) = match variant {
            V::IibOib | V::FfIibOib => (Some(Shape::Split), Some(Shape::Split)),
            V::IibOnly | V::FfIib => (Some(Shape::Split), None),
            V::OibOnly | V::FfOib => (None, Some(Shape::Split)),
            V::Nc | V::FfNc => (Some(Shape::StateOnly), Some(Shape::StateOnly)),
            V::Hs => (None, Some(Shape::StateOnly)),
            V::Ol => (Some(Shape::Joint), Some(Shape::Joint)),
            V::Nl => (Some(Shape::Concat(true)), Some(Shape::Concat(true))),
            V::NlNr => (Some(Shape::Concat(false)), Some(Shape::Concat(false))),
            V::Rs | V::PointOib => (None, None),
        };
        let iib = iib.map(|s| build_block(s, d_model, c, d_model, h, rng));
        let oib = oib.map(|s| build_block(s, d_model, c, vocab, h, rng));
        let rs_cov = (variant == V::Rs).then(|| Matrix::zeros(c, vocab));
        let point = (variant == V::PointOib).then(|| {
            let proj = Projection::SplitPoint {
                state: Matrix::uniform_init(d_model, h, rng),
                cov: Matrix::uniform_init(c, h, rng),
                point: Matrix::uniform_init(1, h, rng),
            };
            InjectionBlock {
                proj,
                ffn: FfnParams::new_zero_output(3 * h, h, 1, rng),
            }
        });
        Ok(Self {
            covariate_dim: c,
            iib,
            oib,
            rs_cov,
            point,
        })
    }

    /// Applies the input block (if any) to `rows` embeddings.
    pub fn adjust_embeddings(&self, emb: &[f64], d: usize, cov: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut out = emb.to_vec();
        if let Some(b) = &self.iib {
            let (delta, _) = b.forward_rows(emb, d, cov, self.covariate_dim, &[], rows)?;
            out.iter_mut().zip(&delta).for_each(|(o, v)| *o += v);
        }
        Ok(out)
    }

    /// Adds the output block and residual-linear corrections to `rows`
    /// logit vectors computed from hidden states `h`.
    pub fn adjust_logits(&self, h: &[f64], d: usize, cov: &[f64], logits: &mut [f64], rows: usize) -> Result<()> {
        let c = self.covariate_dim;
        if let Some(b) = &self.oib {
            let (delta, _) = b.forward_rows(h, d, cov, c, &[], rows)?;
            if delta.len() != logits.len() {
                return Err(Error::shape("output block width does not match the vocabulary"));
            }
            logits.iter_mut().zip(&delta).for_each(|(o, v)| *o += v);
        }
        if let Some(w) = &self.rs_cov {
            let v = w.cols();
            if cov.len() != rows * c || logits.len() != rows * v {
                return Err(Error::shape("residual covariate map does not match its inputs"));
            }
            crate::nn::matrix::gemm(rows, c, v, 1.0, cov, false, w.data(), false, 1.0, logits);
        }
        Ok(())
    }
}

impl Parameters for AdapterParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        if let Some(b) = &self.iib {
            visit_child("iib", b, f);
        }
        if let Some(b) = &self.oib {
            visit_child("oib", b, f);
        }
        if let Some(m) = &self.rs_cov {
            visit_child("rs_cov", m, f);
        }
        if let Some(b) = &self.point {
            visit_child("point", b, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let Some(b) = &mut self.iib {
            visit_child_mut("iib", b, f);
        }
        if let Some(b) = &mut self.oib {
            visit_child_mut("oib", b, f);
        }
        if let Some(m) = &mut self.rs_cov {
            visit_child_mut("rs_cov", m, f);
        }
        if let Some(b) = &mut self.point {
            visit_child_mut("point", b, f);
        }
    }
}

fn missing(block: &str) -> Error {
    Error::Config(format!("adapter has no {block} block"))
}

/// `h_emb + FFN(ReLU(h_emb W_emb ⊕ x_past W_cov))` for one position.
pub fn iib_forward(h_emb: &[f64], x_past: &[f64], p: &AdapterParams) -> Result<Vec<f64>> {
    if p.iib.is_none() {
        return Err(missing("input"));
    }
    p.adjust_embeddings(h_emb, h_emb.len(), x_past, 1)
}

/// `h_out W_out + FFN(ReLU(h_out W_out' ⊕ x_future W_cov))` for one position.
pub fn oib_forward(h_out: &[f64], x_future: &[f64], w_out: &Matrix, p: &AdapterParams) -> Result<Vec<f64>> {
    if p.oib.is_none() && p.rs_cov.is_none() {
        return Err(missing("output"));
    }
    let mut logits = w_out.vec_mul(h_out)?;
    p.adjust_logits(h_out, h_out.len(), x_future, &mut logits, 1)?;
    Ok(logits)
}

/// `ẑ + FFN(ReLU(h_out W_out' ⊕ x_future W_cov ⊕ ẑ W_p))`.
pub fn oib_point_forward(h_out: &[f64], x_future: &[f64], z_hat: f64, p: &AdapterParams) -> Result<f64> {
    let b = p.point.as_ref().ok_or_else(|| missing("point"))?;
    if !z_hat.is_finite() {
        return Err(Error::Input("point forecast must be finite".into()));
    }
    let (delta, _) = b.forward_rows(h_out, h_out.len(), x_future, p.covariate_dim, &[z_hat], 1)?;
    Ok(z_hat + delta[0])
}

/// Splits a `t x c` covariate matrix (row-major) into non-overlapping patches
/// of `patch_dim` consecutive rows, right-padding with zero rows. Returns a
/// `ceil(t / patch_dim) x (patch_dim * c)` matrix.
pub fn patch_covariates(covariates: &[f64], t: usize, c: usize, patch_dim: usize) -> Result<Matrix> {
    if patch_dim == 0 || covariates.len() != t * c {
        return Err(Error::shape(format!(
            "cannot patch {} values as {t}x{c} with patch size {patch_dim}",
            covariates.len()
        )));
    }
    let n = t.div_ceil(patch_dim);
    let mut data = covariates.to_vec();
    data.resize(n * patch_dim * c, 0.0);
    Matrix::from_vec(n, patch_dim * c, data)
}
