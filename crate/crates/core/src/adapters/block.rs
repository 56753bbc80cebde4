use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::{gemm, Matrix};
use crate::nn::params::{visit_child, visit_child_mut, Parameters};
use crate::nn::FfnCache;
use crate::nn::FfnParams;

/// How a block turns its inputs (state `s`, covariate `x`, optional point
/// forecast `z`) into the features fed to its FFN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Projection {
    /// `ReLU(s Ws ⊕ x Wc)`
    Split { state: Matrix, cov: Matrix },
    /// `ReLU(s Ws)`
    StateOnly { state: Matrix },
    /// `ReLU((s ⊕ x) W)`
    Joint { weight: Matrix },
    /// `ReLU(s ⊕ x)`, or plain `s ⊕ x` when `relu` is false.
    Concat { relu: bool },
    /// `ReLU(s Ws ⊕ x Wc ⊕ z Wp)`
    SplitPoint { state: Matrix, cov: Matrix, point: Matrix },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    State,
    Cov,
    Point,
    StateCov,
}

impl Projection {
    fn segments(&self) -> Vec<(Source, &Matrix)> {
        match self {
            Projection::Split { state, cov } => vec![(Source::State, state), (Source::Cov, cov)],
            Projection::StateOnly { state } => vec![(Source::State, state)],
            Projection::Joint { weight } => vec![(Source::StateCov, weight)],
            Projection::Concat { .. } => Vec::new(),
            Projection::SplitPoint { state, cov, point } => {
                vec![(Source::State, state), (Source::Cov, cov), (Source::Point, point)]
            }
        }
    }

    fn segments_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Projection::Split { state, cov } => vec![state, cov],
            Projection::StateOnly { state } => vec![state],
            Projection::Joint { weight } => vec![weight],
            Projection::Concat { .. } => Vec::new(),
            Projection::SplitPoint { state, cov, point } => vec![state, cov, point],
        }
    }

    fn applies_relu(&self) -> bool {
        !matches!(self, Projection::Concat { relu: false })
    }

    /// Width of the feature vector handed to the FFN.
    pub fn feature_dim(&self, state_dim: usize, cov_dim: usize) -> usize {
        match self {
            Projection::Concat { .. } => state_dim + cov_dim,
            _ => self.segments().iter().map(|(_, m)| m.cols()).sum(),
        }
    }

    /// Whether the block reads the covariate input at all.
    pub fn uses_covariates(&self) -> bool {
        !matches!(self, Projection::StateOnly { .. })
    }
}

/// Residual correction `FFN(projection(s, x[, z]))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionBlock {
    pub proj: Projection,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    rows: usize,
    state_dim: usize,
    cov_dim: usize,
    state: Vec<f64>,
    cov: Vec<f64>,
    point: Vec<f64>,
    pre: Vec<f64>,
    ffn: FfnCache,
}

fn concat_rows(a: &[f64], a_w: usize, b: &[f64], b_w: usize, rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (a_w + b_w));
    for r in 0..rows {
        out.extend_from_slice(&a[r * a_w..(r + 1) * a_w]);
        out.extend_from_slice(&b[r * b_w..(r + 1) * b_w]);
    }
    out
}

impl InjectionBlock {
    fn source<'a>(&self, src: Source, state: &'a [f64], cov: &'a [f64], point: &'a [f64], dims: (usize, usize, usize)) -> Cow<'a, [f64]> {
        let (rows, d, c) = dims;
        match src {
            Source::State => Cow::Borrowed(state),
            Source::Cov => Cow::Borrowed(cov),
            Source::Point => Cow::Borrowed(point),
            Source::StateCov => Cow::Owned(concat_rows(state, d, cov, c, rows)),
        }
    }

    fn source_width(src: Source, d: usize, c: usize) -> usize {
        match src {
            Source::State => d,
            Source::Cov => c,
            Source::Point => 1,
            Source::StateCov => d + c,
        }
    }

    /// Applies the block to `rows` stacked inputs. `state` is `rows x d`,
    /// `cov` is `rows x c` and `point` is either empty or has `rows` entries.
    pub fn forward_rows(
        &self,
        state: &[f64],
        state_dim: usize,
        cov: &[f64],
        cov_dim: usize,
        point: &[f64],
        rows: usize,
    ) -> Result<(Vec<f64>, BlockCache)> {
        if state.len() != rows * state_dim || cov.len() != rows * cov_dim {
            return Err(Error::shape(format!(
                "block inputs of {} and {} values do not match {rows} rows of widths {state_dim} and {cov_dim}",
                state.len(),
                cov.len()
            )));
        }
        let needs_point = matches!(self.proj, Projection::SplitPoint { .. });
        if needs_point && point.len() != rows {
            return Err(Error::shape("point projection needs one point forecast per row"));
        }
        let width = self.proj.feature_dim(state_dim, cov_dim);
        let mut pre = vec![0.0; rows * width];
        match &self.proj {
            Projection::Concat { .. } => pre = concat_rows(state, state_dim, cov, cov_dim, rows),
            proj => {
                let mut offset = 0;
                let mut block = Vec::new();
                for (src, m) in proj.segments() {
                    let in_w = Self::source_width(src, state_dim, cov_dim);
                    if m.rows() != in_w {
                        return Err(Error::shape(format!(
                            "projection expects {} inputs, got {in_w}",
                            m.rows()
                        )));
                    }
                    let input = self.source(src, state, cov, point, (rows, state_dim, cov_dim));
                    let k = m.cols();
                    block.clear();
                    block.resize(rows * k, 0.0);
                    gemm(rows, in_w, k, 1.0, &input, false, m.data(), false, 0.0, &mut block);
                    for r in 0..rows {
                        pre[r * width + offset..r * width + offset + k].copy_from_slice(&block[r * k..(r + 1) * k]);
                    }
                    offset += k;
                }
            }
        }
        if self.ffn.in_dim() != width {
            return Err(Error::shape(format!(
                "FFN takes {} inputs but the projection yields {width}",
                self.ffn.in_dim()
            )));
        }
        let feat: Cow<[f64]> = if self.proj.applies_relu() {
            Cow::Owned(pre.iter().map(|v| v.max(0.0)).collect())
        } else {
            Cow::Borrowed(&pre)
        };
        let (out, ffn) = self.ffn.forward_rows(&feat, rows)?;
        Ok((
            out,
            BlockCache {
                rows,
                state_dim,
                cov_dim,
                state: state.to_vec(),
                cov: cov.to_vec(),
                point: point.to_vec(),
                pre,
                ffn,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradients
    /// with respect to the state rows and the point inputs (empty when the
    /// block takes no point forecast).
    pub fn backward_rows(&self, cache: &BlockCache, dout: &[f64], grads: &mut InjectionBlock) -> (Vec<f64>, Vec<f64>) {
        let (rows, d, c) = (cache.rows, cache.state_dim, cache.cov_dim);
        let mut dpre = self.ffn.backward_rows(&cache.ffn, dout, &mut grads.ffn);
        if self.proj.applies_relu() {
            for (g, p) in dpre.iter_mut().zip(&cache.pre) {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let width = self.proj.feature_dim(d, c);
        let mut ds = vec![0.0; rows * d];
        let mut dz = Vec::new();
        if let Projection::Concat { .. } = self.proj {
            for r in 0..rows {
                ds[r * d..(r + 1) * d].copy_from_slice(&dpre[r * width..r * width + d]);
            }
            return (ds, dz);
        }
        let mut grad_mats = grads.proj.segments_mut();
        let mut offset = 0;
        for (i, (src, m)) in self.proj.segments().into_iter().enumerate() {
            let in_w = Self::source_width(src, d, c);
            let k = m.cols();
            let mut block = vec![0.0; rows * k];
            for r in 0..rows {
                block[r * k..(r + 1) * k].copy_from_slice(&dpre[r * width + offset..r * width + offset + k]);
            }
            offset += k;
            let input = self.source(src, &cache.state, &cache.cov, &cache.point, (rows, d, c));
            gemm(in_w, rows, k, 1.0, &input, true, &block, false, 1.0, grad_mats[i].data_mut());
            match src {
                Source::Cov => {}
                Source::State => {
                    gemm(rows, k, d, 1.0, &block, false, m.data(), true, 1.0, &mut ds);
                }
                Source::Point => {
                    dz = vec![0.0; rows];
                    gemm(rows, k, 1, 1.0, &block, false, m.data(), true, 0.0, &mut dz);
                }
                Source::StateCov => {
                    let mut dj = vec![0.0; rows * in_w];
                    gemm(rows, k, in_w, 1.0, &block, false, m.data(), true, 0.0, &mut dj);
                    for r in 0..rows {
                        for j in 0..d {
                            ds[r * d + j] += dj[r * in_w + j];
                        }
                    }
                }
            }
        }
        (ds, dz)
    }
}

impl Parameters for InjectionBlock {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        match &self.proj {
            Projection::Split { state, cov } => {
                visit_child("state", state, f);
                visit_child("cov", cov, f);
            }
            Projection::StateOnly { state } => visit_child("state", state, f),
            Projection::Joint { weight } => visit_child("weight", weight, f),
            Projection::Concat { .. } => {}
            Projection::SplitPoint { state, cov, point } => {
                visit_child("state", state, f);
                visit_child("cov", cov, f);
                visit_child("point", point, f);
            }
        }
        visit_child("ffn", &self.ffn, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        match &mut self.proj {
            Projection::Split { state, cov } => {
                visit_child_mut("state", state, f);
                visit_child_mut("cov", cov, f);
            }
            Projection::StateOnly { state } => visit_child_mut("state", state, f),
            Projection::Joint { weight } => visit_child_mut("weight", weight, f),
            Projection::Concat { .. } => {}
            Projection::SplitPoint { state, cov, point } => {
                visit_child_mut("state", state, f);
                visit_child_mut("cov", cov, f);
                visit_child_mut("point", point, f);
            }
        }
        visit_child_mut("ffn", &mut self.ffn, f);
    }
}
