use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::{add_col_sums, add_row_bias, gemm, Matrix};
use crate::nn::params::{visit_child, visit_child_mut, Parameters};
use crate::nn::rng::RngStream;

/// Two linear maps with a ReLU in between: `max(0, x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct FfnCache {
    rows: usize,
    input: Vec<f64>,
    pre: Vec<f64>,
}

impl FfnParams {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            w1: Matrix::uniform_init(in_dim, hidden, rng),
            b1: vec![0.0; hidden],
            w2: Matrix::uniform_init(hidden, out_dim, rng),
            b2: vec![0.0; out_dim],
        }
    }

    /// Same as [`FfnParams::new`] but with the output layer set to zero, so the
    /// network initially outputs exactly zero.
    pub fn new_zero_output(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            w1: Matrix::uniform_init(in_dim, hidden, rng),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, out_dim),
            b2: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.cols()
    }

    fn check(&self) -> Result<()> {
        if self.b1.len() != self.hidden_dim()
            || self.w2.rows() != self.hidden_dim()
            || self.b2.len() != self.out_dim()
        {
            return Err(Error::shape("inconsistent FFN parameter shapes"));
        }
        Ok(())
    }

    /// Applies the network to each row of the `rows x in_dim` buffer `x`.
    pub fn forward_rows(&self, x: &[f64], rows: usize) -> Result<(Vec<f64>, FfnCache)> {
        self.check()?;
        if x.len() != rows * self.in_dim() {
            return Err(Error::shape(format!(
                "FFN input has {} values, expected {}x{}",
                x.len(),
                rows,
                self.in_dim()
            )));
        }
        let (h, o) = (self.hidden_dim(), self.out_dim());
        let mut pre = vec![0.0; rows * h];
        gemm(rows, self.in_dim(), h, 1.0, x, false, self.w1.data(), false, 0.0, &mut pre);
        add_row_bias(&mut pre, &self.b1);
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mut out = vec![0.0; rows * o];
        gemm(rows, h, o, 1.0, &act, false, self.w2.data(), false, 0.0, &mut out);
        add_row_bias(&mut out, &self.b2);
        Ok((
            out,
            FfnCache {
                rows,
                input: x.to_vec(),
                pre,
            },
        ))
    }

    /// Back-propagates `dout` (`rows x out_dim`), accumulating parameter
    /// gradients into `grads` and returning the gradient w.r.t. the input.
    pub fn backward_rows(&self, cache: &FfnCache, dout: &[f64], grads: &mut FfnParams) -> Vec<f64> {
        let rows = cache.rows;
        let (i, h, o) = (self.in_dim(), self.hidden_dim(), self.out_dim());
        debug_assert_eq!(dout.len(), rows * o);
        let act: Vec<f64> = cache.pre.iter().map(|v| v.max(0.0)).collect();
        gemm(h, rows, o, 1.0, &act, true, dout, false, 1.0, grads.w2.data_mut());
        add_col_sums(dout, &mut grads.b2);
        let mut dpre = vec![0.0; rows * h];
        gemm(rows, o, h, 1.0, dout, false, self.w2.data(), true, 0.0, &mut dpre);
        for (d, p) in dpre.iter_mut().zip(&cache.pre) {
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        gemm(i, rows, h, 1.0, &cache.input, true, &dpre, false, 1.0, grads.w1.data_mut());
        add_col_sums(&dpre, &mut grads.b1);
        let mut dx = vec![0.0; rows * i];
        gemm(rows, h, i, 1.0, &dpre, false, self.w1.data(), true, 0.0, &mut dx);
        dx
    }
}

impl Parameters for FfnParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        visit_child("w1", &self.w1, f);
        f("b1", &self.b1);
        visit_child("w2", &self.w2, f);
        f("b2", &self.b2);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_child_mut("w1", &mut self.w1, f);
        f("b1", &mut self.b1);
        visit_child_mut("w2", &mut self.w2, f);
        f("b2", &mut self.b2);
    }
}

/// `max(0, x W1 + b1) W2 + b2` for a single row vector.
pub fn ffn_forward(x: &[f64], p: &FfnParams) -> Result<Vec<f64>> {
    p.forward_rows(x, 1).map(|(out, _)| out)
}

/// Gradients of `upstream · ffn_forward(x)` w.r.t. `x` and every parameter.
pub fn ffn_backward(x: &[f64], p: &FfnParams, upstream: &[f64]) -> Result<(Vec<f64>, FfnParams)> {
    if upstream.len() != p.out_dim() {
        return Err(Error::shape(format!(
            "upstream gradient has length {}, expected {}",
            upstream.len(),
            p.out_dim()
        )));
    }
    let (_, cache) = p.forward_rows(x, 1)?;
    let mut grads = p.zeros_like();
    let dx = p.backward_rows(&cache, upstream, &mut grads);
    Ok((dx, grads))
}
