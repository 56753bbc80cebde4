use serde::{Deserialize, Serialize};

use super::{AdapterHyper, AdapterParams, AdapterVariant};
use crate::backbone::BackboneParams;
use crate::error::{Error, Result};
use crate::nn::matrix::gemm;
use crate::nn::params::{visit_child, visit_child_mut, Parameters};
use crate::nn::rng::RngStream;
use crate::nn::{softmax, softmax_cross_entropy};
use crate::tokenizer::TokenizerConfig;

/// Backbone plus one adapter variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeModel {
    pub backbone: BackboneParams,
    pub adapters: AdapterParams,
    pub variant: AdapterVariant,
    pub freeze_backbone: bool,
    pub tokenizer: TokenizerConfig,
}

/// One training example: `tokens[j + 1]` is predicted from `tokens[..=j]`.
/// `covariates` holds one row of `c` values per token, already aligned with
/// the tokens; `values` are the scaled reals behind the tokens (only read by
/// the point variant).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub tokens: Vec<usize>,
    pub covariates: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutput {
    Logits(Vec<f64>),
    Point(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub trainable: usize,
    pub frozen: usize,
}

/// Wraps `backbone` with freshly initialized adapters for `variant`. The
/// residual FFN outputs start at zero, so the result initially computes
/// exactly what the backbone computes. FF variants ignore `freeze`.
pub fn attach(
    backbone: BackboneParams,
    variant: AdapterVariant,
    hyper: &AdapterHyper,
    freeze: bool,
    rng: &mut RngStream,
) -> Result<CompositeModel> {
    let cfg = backbone.config;
    if variant.is_point() && hyper.tokenizer.num_bins != cfg.vocab_size {
        return Err(Error::Config(format!(
            "tokenizer has {} bins but the backbone vocabulary is {}",
            hyper.tokenizer.num_bins, cfg.vocab_size
        )));
    }
    let adapters = AdapterParams::init(variant, cfg.d_model, cfg.vocab_size, hyper, rng)?;
    Ok(CompositeModel {
        backbone,
        adapters,
        variant,
        freeze_backbone: freeze && !variant.is_full_finetune(),
        tokenizer: hyper.tokenizer,
    })
}

pub fn parameter_count(model: &CompositeModel) -> ParameterCount {
    let a = model.adapters.num_params();
    let b = model.backbone.num_params();
    if model.freeze_backbone {
        ParameterCount { trainable: a, frozen: b }
    } else {
        ParameterCount { trainable: a + b, frozen: 0 }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl CompositeModel {
    pub fn covariate_dim(&self) -> usize {
        self.adapters.covariate_dim
    }

    /// Token embeddings after the input block, for `tokens` with their
    /// aligned covariate rows.
    pub fn embed_rows(&self, tokens: &[usize], cov: &[f64]) -> Result<Vec<f64>> {
        let emb = self.backbone.embed_sequence(tokens)?;
        self.adapters
            .adjust_embeddings(&emb, self.backbone.config.d_model, cov, tokens.len())
    }

    /// Next-token logits from hidden states, corrected with the covariates of
    /// the predicted positions.
    pub fn output_logits(&self, h: &[f64], cov_next: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut logits = self.backbone.logits_rows(h, rows);
        self.adapters
            .adjust_logits(h, self.backbone.config.d_model, cov_next, &mut logits, rows)?;
        Ok(logits)
    }

    /// Expected bin center (scaled units) under the softmax of each logit row,
    /// together with the probabilities.
    pub fn expected_values(&self, logits: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let v = self.backbone.config.vocab_size;
        let centers = self.tokenizer.centers();
        let mut probs = Vec::with_capacity(rows * v);
        let mut z = Vec::with_capacity(rows);
        for r in 0..rows {
            let p = softmax(&logits[r * v..(r + 1) * v]);
            z.push(p.iter().zip(&centers).map(|(a, b)| a * b).sum());
            probs.extend(p);
        }
        (z, probs)
    }

    /// Point forecasts (scaled units) of the point variant.
    pub fn point_rows(&self, h: &[f64], cov_next: &[f64], rows: usize) -> Result<Vec<f64>> {
        let logits = self.backbone.logits_rows(h, rows);
        let (z, _) = self.expected_values(&logits, rows);
        match &self.adapters.point {
            Some(b) => {
                let d = self.backbone.config.d_model;
                let (delta, _) = b.forward_rows(h, d, cov_next, self.covariate_dim(), &z, rows)?;
                Ok(z.iter().zip(&delta).map(|(a, b)| a + b).collect())
            }
            None => Ok(z),
        }
    }

    /// Output for the step following `tokens`. `past_covs` has one row per
    /// token; `future_cov` is the covariate row of the predicted step.
    pub fn variant_forward(&self, tokens: &[usize], past_covs: &[f64], future_cov: &[f64]) -> Result<StepOutput> {
        let c = self.covariate_dim();
        if past_covs.len() != tokens.len() * c || future_cov.len() != c {
            return Err(Error::shape("covariate rows do not match the token context"));
        }
        let d = self.backbone.config.d_model;
        let n = tokens.len();
        let emb = self.embed_rows(tokens, past_covs)?;
        let (h, _) = self.backbone.forward_hidden(&emb, n)?;
        let last = &h[(n - 1) * d..];
        if self.variant.is_point() {
            Ok(StepOutput::Point(self.point_rows(last, future_cov, 1)?[0]))
        } else {
            Ok(StepOutput::Logits(self.output_logits(last, future_cov, 1)?))
        }
    }

    /// Mean training loss over one window: cross-entropy of every next token,
    /// or squared error of every next value for the point variant. Gradients
    /// of that mean are accumulated into `grads` when given; frozen backbone
    /// entries of `grads` are never touched.
    pub fn window_loss(&self, w: &TrainingWindow, grads: Option<&mut CompositeModel>) -> Result<f64> {
        let t = w.tokens.len();
        let c = self.covariate_dim();
        if t < 2 {
            return Err(Error::Input("a window needs at least two tokens".into()));
        }
        if w.covariates.len() != t * c {
            return Err(Error::shape(format!(
                "window has {} covariate values for {t} tokens of width {c}",
                w.covariates.len()
            )));
        }
        let point = self.variant.is_point();
        if point && w.values.len() != t {
            return Err(Error::shape("point training needs one value per token"));
        }
        let n = t - 1;
        let (d, v) = (self.backbone.config.d_model, self.backbone.config.vocab_size);
        let x_in = &w.covariates[..n * c];
        let x_out = &w.covariates[c..];

        let mut emb = self.backbone.embed_sequence(&w.tokens[..n])?;
        let iib_cache = match &self.adapters.iib {
            Some(b) => {
                let (delta, cache) = b.forward_rows(&emb, d, x_in, c, &[], n)?;
                add_into(&mut emb, &delta);
                Some(cache)
            }
            None => None,
        };
        let (h, seq_cache) = self.backbone.forward_hidden(&emb, n)?;
        let mut logits = self.backbone.logits_rows(&h, n);

        let mut dlogits = vec![0.0; n * v];
        let mut dh = vec![0.0; n * d];
        let want_grads = grads.is_some();
        let mut grads = grads;
        let loss;
        if point {
            let block = self.adapters.point.as_ref().ok_or_else(|| Error::Config("point variant without point block".into()))?;
            let (z, probs) = self.expected_values(&logits, n);
            let (delta, cache) = block.forward_rows(&h, d, x_out, c, &z, n)?;
            let mut err = Vec::with_capacity(n);
            let mut total = 0.0;
            for j in 0..n {
                let e = z[j] + delta[j] - w.values[j + 1];
                total += e * e;
                err.push(e);
            }
            loss = total / n as f64;
            if let Some(g) = grads.as_deref_mut() {
                let df: Vec<f64> = err.iter().map(|e| 2.0 * e / n as f64).collect();
                let gp = g.adapters.point.as_mut().expect("gradient layout matches model");
                let (ds, dz) = block.backward_rows(&cache, &df, gp);
                dh = ds;
                let centers = self.tokenizer.centers();
                for j in 0..n {
                    let dzhat = df[j] + dz[j];
                    for k in 0..v {
                        dlogits[j * v + k] = dzhat * probs[j * v + k] * (centers[k] - z[j]);
                    }
                }
            }
        } else {
            let oib_cache = match &self.adapters.oib {
                Some(b) => {
                    let (delta, cache) = b.forward_rows(&h, d, x_out, c, &[], n)?;
                    add_into(&mut logits, &delta);
                    Some(cache)
                }
                None => None,
            };
            if let Some(rs) = &self.adapters.rs_cov {
                gemm(n, c, v, 1.0, x_out, false, rs.data(), false, 1.0, &mut logits);
            }
            let mut total = 0.0;
            for j in 0..n {
                let (l, g) = softmax_cross_entropy(&logits[j * v..(j + 1) * v], w.tokens[j + 1])?;
                total += l;
                for (dst, src) in dlogits[j * v..(j + 1) * v].iter_mut().zip(&g) {
                    *dst = src / n as f64;
                }
            }
            loss = total / n as f64;
            if let Some(g) = grads.as_deref_mut() {
                if let (Some(b), Some(cache)) = (&self.adapters.oib, &oib_cache) {
                    let gb = g.adapters.oib.as_mut().expect("gradient layout matches model");
                    let (ds, _) = b.backward_rows(cache, &dlogits, gb);
                    dh = ds;
                }
                if let Some(grs) = g.adapters.rs_cov.as_mut() {
                    gemm(c, n, v, 1.0, x_out, true, &dlogits, false, 1.0, grs.data_mut());
                }
            }
        }

        if !want_grads {
            return Ok(loss);
        }
        let g = grads.expect("checked above");
        let train_backbone = !self.freeze_backbone;
        if !train_backbone && iib_cache.is_none() {
            return Ok(loss);
        }
        if train_backbone {
            gemm(d, n, v, 1.0, &h, true, &dlogits, false, 1.0, g.backbone.w_out.data_mut());
        }
        gemm(n, v, d, 1.0, &dlogits, false, self.backbone.w_out.data(), true, 1.0, &mut dh);
        let mut demb = self
            .backbone
            .backward_hidden(&seq_cache, &dh, train_backbone.then_some(&mut g.backbone));
        if let (Some(b), Some(cache)) = (&self.adapters.iib, &iib_cache) {
            let gb = g.adapters.iib.as_mut().expect("gradient layout matches model");
            let (ds, _) = b.backward_rows(cache, &demb, gb);
            add_into(&mut demb, &ds);
        }
        if train_backbone {
            for (j, &tok) in w.tokens[..n].iter().enumerate() {
                add_into(g.backbone.tok_emb.row_mut(tok), &demb[j * d..(j + 1) * d]);
            }
        }
        Ok(loss)
    }

    /// Mean of [`CompositeModel::window_loss`] over a batch, with gradients of
    /// that mean accumulated into `grads`.
    pub fn batch_loss(&self, windows: &[TrainingWindow], grads: Option<&mut CompositeModel>) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let scale = 1.0 / windows.len() as f64;
        let mut total = 0.0;
        let mut local = grads.as_ref().map(|g| g.zeros_like());
        for w in windows {
            total += self.window_loss(w, local.as_mut())?;
        }
        if let (Some(g), Some(mut l)) = (grads, local) {
            crate::nn::params::scale(&mut l, scale);
            crate::nn::params::accumulate(g, &l);
        }
        Ok(total * scale)
    }
}

impl Parameters for CompositeModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        visit_child("adapters", &self.adapters, f);
        if !self.freeze_backbone {
            visit_child("backbone", &self.backbone, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_child_mut("adapters", &mut self.adapters, f);
        if !self.freeze_backbone {
            visit_child_mut("backbone", &mut self.backbone, f);
        }
    }

    /// Zeroes frozen backbone entries too, so a gradient buffer never carries
    /// parameter values.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.adapters.fill_zero();
        z.backbone.fill_zero();
        z
    }
}
