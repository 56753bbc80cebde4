//! Small decoder-only categorical next-token forecaster.
//!
//! Exposes the three surfaces the covariate adapters attach to: the token
//! embedding table, the final hidden state and the output projection.

mod pretrain;
mod transformer;

pub use pretrain::{pretrain, PretrainConfig, PretrainOutcome};
pub use transformer::{KvCache, SeqCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::{gemm, Matrix};
use crate::nn::params::{visit_child, visit_child_mut, Parameters};
use crate::nn::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Number of positions the model can attend over (context + horizon).
    pub context_length: usize,
    pub vocab_size: usize,
    pub horizon: usize,
    pub ffn_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            context_length: 128,
            vocab_size: 300,
            horizon: 24,
            ffn_dim: 256,
        }
    }
}

impl BackboneConfig {
    /// One-layer, eight-wide model for gradient checks.
    pub fn tiny(vocab_size: usize, context_length: usize) -> Self {
        Self {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            context_length,
            vocab_size,
            horizon: 1,
            ffn_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context_length < self.horizon || self.horizon == 0 {
            return Err(Error::Config(format!(
                "context_length {} must be >= horizon {} >= 1",
                self.context_length, self.horizon
            )));
        }
        if self.vocab_size < 2 || self.ffn_dim == 0 {
            return Err(Error::Config("vocab_size >= 2 and ffn_dim >= 1 required".into()));
        }
        Ok(())
    }

    /// Observed values fed before the first forecast step.
    pub fn forecast_context(&self) -> usize {
        (self.context_length - self.horizon).max(1)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub w_qkv: Matrix,
    pub b_qkv: Vec<f64>,
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w_fc: Matrix,
    pub b_fc: Vec<f64>,
    pub w_proj: Matrix,
    pub b_proj: Vec<f64>,
}

impl LayerParams {
    fn new(cfg: &BackboneConfig, rng: &mut RngStream) -> Self {
        let d = cfg.d_model;
        Self {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            w_qkv: Matrix::uniform_init(d, 3 * d, rng),
            b_qkv: vec![0.0; 3 * d],
            w_o: Matrix::uniform_init(d, d, rng),
            b_o: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            w_fc: Matrix::uniform_init(d, cfg.ffn_dim, rng),
            b_fc: vec![0.0; cfg.ffn_dim],
            w_proj: Matrix::uniform_init(cfg.ffn_dim, d, rng),
            b_proj: vec![0.0; d],
        }
    }
}

impl Parameters for LayerParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        f("ln1_gain", &self.ln1_gain);
        f("ln1_bias", &self.ln1_bias);
        visit_child("w_qkv", &self.w_qkv, f);
        f("b_qkv", &self.b_qkv);
        visit_child("w_o", &self.w_o, f);
        f("b_o", &self.b_o);
        f("ln2_gain", &self.ln2_gain);
        f("ln2_bias", &self.ln2_bias);
        visit_child("w_fc", &self.w_fc, f);
        f("b_fc", &self.b_fc);
        visit_child("w_proj", &self.w_proj, f);
        f("b_proj", &self.b_proj);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("ln1_gain", &mut self.ln1_gain);
        f("ln1_bias", &mut self.ln1_bias);
        visit_child_mut("w_qkv", &mut self.w_qkv, f);
        f("b_qkv", &mut self.b_qkv);
        visit_child_mut("w_o", &mut self.w_o, f);
        f("b_o", &mut self.b_o);
        f("ln2_gain", &mut self.ln2_gain);
        f("ln2_bias", &mut self.ln2_bias);
        visit_child_mut("w_fc", &mut self.w_fc, f);
        f("b_fc", &mut self.b_fc);
        visit_child_mut("w_proj", &mut self.w_proj, f);
        f("b_proj", &mut self.b_proj);
    }
}

/// All backbone weights. Token embedding and output projection are untied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Vec<f64>,
    pub lnf_bias: Vec<f64>,
    pub w_out: Matrix,
}

fn embedding_init(rows: usize, d: usize, rng: &mut RngStream) -> Matrix {
    let bound = 1.0 / (d as f64).sqrt();
    let data = (0..rows * d).map(|_| rng.uniform(-bound, bound)).collect();
    Matrix::from_vec(rows, d, data).expect("embedding shape")
}

impl BackboneParams {
    pub fn init(config: BackboneConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        Ok(Self {
            tok_emb: embedding_init(config.vocab_size, d, rng),
            pos_emb: embedding_init(config.context_length, d, rng),
            layers: (0..config.n_layers)
                .map(|_| LayerParams::new(&config, rng))
                .collect(),
            lnf_gain: vec![1.0; d],
            lnf_bias: vec![0.0; d],
            w_out: Matrix::uniform_init(d, config.vocab_size, rng),
            config,
        })
    }

    /// Embedding row of `token`.
    pub fn embed(&self, token: usize) -> Result<&[f64]> {
        if token >= self.config.vocab_size {
            return Err(Error::Index {
                index: token,
                limit: self.config.vocab_size,
            });
        }
        Ok(self.tok_emb.row(token))
    }

    /// Embeddings of a token sequence as a `len x d_model` buffer.
    pub fn embed_sequence(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(tokens.len() * self.config.d_model);
        for &t in tokens {
            out.extend_from_slice(self.embed(t)?);
        }
        Ok(out)
    }

    /// `h · W_out` for a single hidden state.
    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.w_out.vec_mul(h)
    }

    /// `H · W_out` for a `rows x d_model` buffer.
    pub fn logits_rows(&self, h: &[f64], rows: usize) -> Vec<f64> {
        let (d, v) = (self.config.d_model, self.config.vocab_size);
        let mut out = vec![0.0; rows * v];
        gemm(rows, d, v, 1.0, h, false, self.w_out.data(), false, 0.0, &mut out);
        out
    }
}

impl Parameters for BackboneParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        visit_child("tok_emb", &self.tok_emb, f);
        visit_child("pos_emb", &self.pos_emb, f);
        for (i, l) in self.layers.iter().enumerate() {
            visit_child(&format!("layers.{i}"), l, f);
        }
        f("lnf_gain", &self.lnf_gain);
        f("lnf_bias", &self.lnf_bias);
        visit_child("w_out", &self.w_out, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_child_mut("tok_emb", &mut self.tok_emb, f);
        visit_child_mut("pos_emb", &mut self.pos_emb, f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            visit_child_mut(&format!("layers.{i}"), l, f);
        }
        f("lnf_gain", &mut self.lnf_gain);
        f("lnf_bias", &mut self.lnf_bias);
        visit_child_mut("w_out", &mut self.w_out, f);
    }
}
