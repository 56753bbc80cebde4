use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BackboneParams};
use crate::error::{Error, Result};
use crate::nn::adam::{adam_step, AdamState};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::matrix::gemm;
use crate::nn::params::{scale, Parameters};
use crate::nn::rng::RngStream;
use crate::tokenizer::TokenizerConfig;
use crate::windows::sample_token_window;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: BackboneParams,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

impl BackboneParams {
    /// Mean next-token cross-entropy over `tokens[1..]` given `tokens[..len-1]`.
    /// Gradients of that mean are accumulated into `grads` when given.
    pub fn sequence_loss(&self, tokens: &[usize], grads: Option<&mut BackboneParams>) -> Result<f64> {
        if tokens.len() < 2 {
            return Err(Error::Input("need at least two tokens".into()));
        }
        let t = tokens.len() - 1;
        let (d, v) = (self.config.d_model, self.config.vocab_size);
        let emb = self.embed_sequence(&tokens[..t])?;
        let (h, cache) = self.forward_hidden(&emb, t)?;
        let logits = self.logits_rows(&h, t);
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; t * v];
        for i in 0..t {
            let (l, g) = softmax_cross_entropy(&logits[i * v..(i + 1) * v], tokens[i + 1])?;
            loss += l;
            for (dst, src) in dlogits[i * v..(i + 1) * v].iter_mut().zip(&g) {
                *dst = src / t as f64;
            }
        }
        if let Some(grads) = grads {
            gemm(d, t, v, 1.0, &h, true, &dlogits, false, 1.0, grads.w_out.data_mut());
            let mut dh = vec![0.0; t * d];
            gemm(t, v, d, 1.0, &dlogits, false, self.w_out.data(), true, 0.0, &mut dh);
            let demb = self.backward_hidden(&cache, &dh, Some(grads));
            for (i, &tok) in tokens[..t].iter().enumerate() {
                for (g, x) in grads.tok_emb.row_mut(tok).iter_mut().zip(&demb[i * d..(i + 1) * d]) {
                    *g += x;
                }
            }
        }
        Ok(loss / t as f64)
    }
}

/// Trains a fresh backbone on covariate-free series by next-token
/// cross-entropy over randomly sampled windows.
pub fn pretrain(
    corpus: &[Vec<f64>],
    config: BackboneConfig,
    tokenizer: &TokenizerConfig,
    settings: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if corpus.is_empty() || corpus.iter().all(|s| s.len() < 2) {
        return Err(Error::Input("pretraining corpus is empty".into()));
    }
    if config.vocab_size != tokenizer.num_bins {
        return Err(Error::Config(format!(
            "vocab_size {} differs from tokenizer bins {}",
            config.vocab_size, tokenizer.num_bins
        )));
    }
    let mut params = BackboneParams::init(config, &mut RngStream::new(settings.seed, 0))?;
    let mut batch_rng = RngStream::new(settings.seed, 1);
    let mut adam = AdamState::new(settings.lr);
    let mut losses = Vec::with_capacity(settings.steps);
    let usable: Vec<&Vec<f64>> = corpus.iter().filter(|s| s.len() >= 2).collect();
    for step in 0..settings.steps {
        let mut grads = params.zeros_like();
        let mut total = 0.0;
        for _ in 0..settings.batch_size {
            let series = usable[batch_rng.int_inclusive(0, usable.len() - 1)];
            let (tokens, _) = sample_token_window(
                series,
                series.len(),
                config.context_length + 1,
                config.forecast_context(),
                tokenizer,
                &mut batch_rng,
            )?;
            total += params.sequence_loss(&tokens, Some(&mut grads))?;
        }
        let loss = total / settings.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("pretraining loss {loss}"),
            });
        }
        scale(&mut grads, 1.0 / settings.batch_size as f64);
        adam_step(&mut params, &grads, &mut adam).map_err(|e| Error::Training {
            step,
            reason: e.to_string(),
        })?;
        losses.push(loss);
        if step % 100 == 0 {
            log::debug!("pretrain step {step}: loss {loss:.4}");
        }
    }
    Ok(PretrainOutcome { params, losses })
}
