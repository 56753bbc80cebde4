//! Pre-norm causal transformer stack: full-sequence forward/backward for
//! training and a key/value-cached single-position step for decoding.

use crate::backbone::{BackboneParams, LayerParams};
use crate::error::{Error, Result};
use crate::nn::matrix::{add_col_sums, add_row_bias, gemm};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = xh * gain[j] + bias[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates gain/bias gradients when given.
fn layer_norm_backward(
    dy: &[f64],
    d: usize,
    cache: &LnCache,
    gain: &[f64],
    grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let rows = dy.len() / d;
    if let Some((dg, db)) = grads {
        for r in 0..rows {
            for j in 0..d {
                dg[j] += dy[r * d + j] * cache.xhat[r * d + j];
                db[j] += dy[r * d + j];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for j in 0..d {
            dxhat[j] = dy[r * d + j] * gain[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[r * d + j] = cache.rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    u: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    v2: Vec<f64>,
    fc_pre: Vec<f64>,
    fc_act: Vec<f64>,
}

/// Activations of a full-sequence forward pass.
#[derive(Debug, Clone)]
pub struct SeqCache {
    len: usize,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

impl SeqCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn attention(qkv: &[f64], t: usize, d: usize, n_heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; n_heads * t * t];
    let mut ctx = vec![0.0; t * d];
    for h in 0..n_heads {
        for i in 0..t {
            let q = &qkv[i * 3 * d + h * dh..i * 3 * d + (h + 1) * dh];
            let p = &mut probs[(h * t + i) * t..(h * t + i) * t + i + 1];
            let mut max = f64::NEG_INFINITY;
            for (j, pj) in p.iter_mut().enumerate() {
                let k = &qkv[j * 3 * d + d + h * dh..j * 3 * d + d + (h + 1) * dh];
                let s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                *pj = s;
                max = max.max(s);
            }
            let mut sum = 0.0;
            for pj in p.iter_mut() {
                *pj = (*pj - max).exp();
                sum += *pj;
            }
            let out = &mut ctx[i * d + h * dh..i * d + (h + 1) * dh];
            for (j, pj) in p.iter_mut().enumerate() {
                *pj /= sum;
                let v = &qkv[j * 3 * d + 2 * d + h * dh..j * 3 * d + 2 * d + (h + 1) * dh];
                for (o, vv) in out.iter_mut().zip(v) {
                    *o += *pj * vv;
                }
            }
        }
    }
    (probs, ctx)
}

fn attention_backward(qkv: &[f64], probs: &[f64], dctx: &[f64], t: usize, d: usize, n_heads: usize) -> Vec<f64> {
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dqkv = vec![0.0; t * 3 * d];
    let mut dp = vec![0.0; t];
    for h in 0..n_heads {
        for i in 0..t {
            let p = &probs[(h * t + i) * t..(h * t + i) * t + i + 1];
            let dc = &dctx[i * d + h * dh..i * d + (h + 1) * dh];
            let mut dot = 0.0;
            for j in 0..=i {
                let v = &qkv[j * 3 * d + 2 * d + h * dh..j * 3 * d + 2 * d + (h + 1) * dh];
                dp[j] = dc.iter().zip(v).map(|(a, b)| a * b).sum();
                dot += p[j] * dp[j];
                let dv = &mut dqkv[j * 3 * d + 2 * d + h * dh..j * 3 * d + 2 * d + (h + 1) * dh];
                for (x, g) in dv.iter_mut().zip(dc) {
                    *x += p[j] * g;
                }
            }
            for j in 0..=i {
                let ds = p[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for e in 0..dh {
                    let qi = qkv[i * 3 * d + h * dh + e];
                    let kj = qkv[j * 3 * d + d + h * dh + e];
                    dqkv[i * 3 * d + h * dh + e] += ds * kj;
                    dqkv[j * 3 * d + d + h * dh + e] += ds * qi;
                }
            }
        }
    }
    dqkv
}

impl BackboneParams {
    /// Runs the causal stack over `len` input embeddings (`len x d_model`,
    /// position embeddings not yet added) and returns the final hidden
    /// states `h_out` together with the activations needed for backward.
    pub fn forward_hidden(&self, embedded: &[f64], len: usize) -> Result<(Vec<f64>, SeqCache)> {
        let cfg = &self.config;
        let d = cfg.d_model;
        if len == 0 || len > cfg.context_length {
            return Err(Error::Input(format!(
                "sequence length {len} outside 1..={}",
                cfg.context_length
            )));
        }
        if embedded.len() != len * d {
            return Err(Error::shape(format!(
                "embedded input has {} values, expected {len}x{d}",
                embedded.len()
            )));
        }
        let mut x: Vec<f64> = embedded
            .iter()
            .zip(&self.pos_emb.data()[..len * d])
            .map(|(e, p)| e + p)
            .collect();
        let mut caches = Vec::with_capacity(cfg.n_layers);
        for layer in &self.layers {
            let (cache, out) = layer_forward(layer, &x, len, d, cfg.n_heads, cfg.ffn_dim);
            caches.push(cache);
            x = out;
        }
        let (h, lnf) = layer_norm(&x, d, &self.lnf_gain, &self.lnf_bias);
        Ok((
            h,
            SeqCache {
                len,
                layers: caches,
                lnf,
            },
        ))
    }

    /// Back-propagates `dh` (gradient w.r.t. `h_out`) through the stack.
    /// Parameter gradients (position embeddings, blocks, final norm) are
    /// accumulated into `grads` when given; the gradient w.r.t. the input
    /// embeddings is always returned.
    pub fn backward_hidden(&self, cache: &SeqCache, dh: &[f64], mut grads: Option<&mut BackboneParams>) -> Vec<f64> {
        let cfg = &self.config;
        let (d, t) = (cfg.d_model, cache.len);
        let mut dx = layer_norm_backward(
            dh,
            d,
            &cache.lnf,
            &self.lnf_gain,
            grads
                .as_deref_mut()
                .map(|g| (g.lnf_gain.as_mut_slice(), g.lnf_bias.as_mut_slice())),
        );
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let lg = grads.as_deref_mut().map(|g| &mut g.layers[li]);
            dx = layer_backward(layer, &cache.layers[li], dx, t, d, cfg.n_heads, cfg.ffn_dim, lg);
        }
        if let Some(g) = grads {
            for (gp, v) in g.pos_emb.data_mut()[..t * d].iter_mut().zip(&dx) {
                *gp += v;
            }
        }
        dx
    }

    /// Processes one new position for each of `caches.len()` independent
    /// sequences. `embedded` holds one input embedding per sequence; all
    /// caches must currently hold the same number of positions.
    pub fn decode_step(&self, caches: &mut [KvCache], embedded: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let (d, nh) = (cfg.d_model, cfg.n_heads);
        let dh = d / nh;
        let s = caches.len();
        if embedded.len() != s * d {
            return Err(Error::shape("decode input does not match cache count"));
        }
        let Some(first) = caches.first() else {
            return Ok(Vec::new());
        };
        let pos = first.len;
        if caches.iter().any(|c| c.len != pos) {
            return Err(Error::Input("caches at different positions".into()));
        }
        if pos >= cfg.context_length {
            return Err(Error::Input(format!(
                "position {pos} exceeds context length {}",
                cfg.context_length
            )));
        }
        let mut x: Vec<f64> = Vec::with_capacity(s * d);
        for r in 0..s {
            x.extend(embedded[r * d..(r + 1) * d].iter().zip(self.pos_emb.row(pos)).map(|(e, p)| e + p));
        }
        let scale = 1.0 / (dh as f64).sqrt();
        for (li, layer) in self.layers.iter().enumerate() {
            let (u, _) = layer_norm(&x, d, &layer.ln1_gain, &layer.ln1_bias);
            let mut qkv = vec![0.0; s * 3 * d];
            gemm(s, d, 3 * d, 1.0, &u, false, layer.w_qkv.data(), false, 0.0, &mut qkv);
            add_row_bias(&mut qkv, &layer.b_qkv);
            let mut ctx = vec![0.0; s * d];
            let mut scores = vec![0.0; pos + 1];
            for (r, cache) in caches.iter_mut().enumerate() {
                let row = &qkv[r * 3 * d..(r + 1) * 3 * d];
                cache.k[li].extend_from_slice(&row[d..2 * d]);
                cache.v[li].extend_from_slice(&row[2 * d..]);
                let (ks, vs) = (&cache.k[li], &cache.v[li]);
                for h in 0..nh {
                    let q = &row[h * dh..(h + 1) * dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let k = &ks[j * d + h * dh..j * d + (h + 1) * dh];
                        *sc = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(*sc);
                    }
                    let mut sum = 0.0;
                    for sc in scores.iter_mut() {
                        *sc = (*sc - max).exp();
                        sum += *sc;
                    }
                    let out = &mut ctx[r * d + h * dh..r * d + (h + 1) * dh];
                    for (j, sc) in scores.iter().enumerate() {
                        let p = sc / sum;
                        let v = &vs[j * d + h * dh..j * d + (h + 1) * dh];
                        for (o, vv) in out.iter_mut().zip(v) {
                            *o += p * vv;
                        }
                    }
                }
            }
            let mut att = vec![0.0; s * d];
            gemm(s, d, d, 1.0, &ctx, false, layer.w_o.data(), false, 0.0, &mut att);
            add_row_bias(&mut att, &layer.b_o);
            for (a, b) in x.iter_mut().zip(&att) {
                *a += b;
            }
            let mlp = mlp_forward(layer, &x, s, d, cfg.ffn_dim).0;
            for (a, b) in x.iter_mut().zip(&mlp) {
                *a += b;
            }
        }
        for c in caches.iter_mut() {
            c.len += 1;
        }
        Ok(layer_norm(&x, d, &self.lnf_gain, &self.lnf_bias).0)
    }
}

/// Returns `(mlp output, ln2 cache, ln2 output, fc pre-activation, fc activation)`.
fn mlp_forward(
    layer: &LayerParams,
    x: &[f64],
    t: usize,
    d: usize,
    f: usize,
) -> (Vec<f64>, LnCache, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (v2, ln2) = layer_norm(x, d, &layer.ln2_gain, &layer.ln2_bias);
    let mut fc_pre = vec![0.0; t * f];
    gemm(t, d, f, 1.0, &v2, false, layer.w_fc.data(), false, 0.0, &mut fc_pre);
    add_row_bias(&mut fc_pre, &layer.b_fc);
    let fc_act: Vec<f64> = fc_pre.iter().map(|v| gelu(*v)).collect();
    let mut out = vec![0.0; t * d];
    gemm(t, f, d, 1.0, &fc_act, false, layer.w_proj.data(), false, 0.0, &mut out);
    add_row_bias(&mut out, &layer.b_proj);
    (out, ln2, v2, fc_pre, fc_act)
}

fn layer_forward(layer: &LayerParams, x: &[f64], t: usize, d: usize, nh: usize, f: usize) -> (LayerCache, Vec<f64>) {
    let (u, ln1) = layer_norm(x, d, &layer.ln1_gain, &layer.ln1_bias);
    let mut qkv = vec![0.0; t * 3 * d];
    gemm(t, d, 3 * d, 1.0, &u, false, layer.w_qkv.data(), false, 0.0, &mut qkv);
    add_row_bias(&mut qkv, &layer.b_qkv);
    let (probs, ctx) = attention(&qkv, t, d, nh);
    let mut h: Vec<f64> = x.to_vec();
    gemm(t, d, d, 1.0, &ctx, false, layer.w_o.data(), false, 1.0, &mut h);
    add_row_bias(&mut h, &layer.b_o);
    let (mlp, ln2, v2, fc_pre, fc_act) = mlp_forward(layer, &h, t, d, f);
    for (a, b) in h.iter_mut().zip(&mlp) {
        *a += b;
    }
    (
        LayerCache {
            ln1,
            u,
            qkv,
            probs,
            ctx,
            ln2,
            v2,
            fc_pre,
            fc_act,
        },
        h,
    )
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    layer: &LayerParams,
    c: &LayerCache,
    dout: Vec<f64>,
    t: usize,
    d: usize,
    nh: usize,
    f: usize,
    mut grads: Option<&mut LayerParams>,
) -> Vec<f64> {
    // MLP branch
    if let Some(g) = grads.as_deref_mut() {
        gemm(f, t, d, 1.0, &c.fc_act, true, &dout, false, 1.0, g.w_proj.data_mut());
        add_col_sums(&dout, &mut g.b_proj);
    }
    let mut dfc = vec![0.0; t * f];
    gemm(t, d, f, 1.0, &dout, false, layer.w_proj.data(), true, 0.0, &mut dfc);
    for (g, p) in dfc.iter_mut().zip(&c.fc_pre) {
        *g *= gelu_grad(*p);
    }
    if let Some(g) = grads.as_deref_mut() {
        gemm(d, t, f, 1.0, &c.v2, true, &dfc, false, 1.0, g.w_fc.data_mut());
        add_col_sums(&dfc, &mut g.b_fc);
    }
    let mut dv2 = vec![0.0; t * d];
    gemm(t, f, d, 1.0, &dfc, false, layer.w_fc.data(), true, 0.0, &mut dv2);
    let dmid_ln = layer_norm_backward(
        &dv2,
        d,
        &c.ln2,
        &layer.ln2_gain,
        grads
            .as_deref_mut()
            .map(|g| (g.ln2_gain.as_mut_slice(), g.ln2_bias.as_mut_slice())),
    );
    let mut dmid = dout;
    for (a, b) in dmid.iter_mut().zip(&dmid_ln) {
        *a += b;
    }
    // attention branch
    if let Some(g) = grads.as_deref_mut() {
        gemm(d, t, d, 1.0, &c.ctx, true, &dmid, false, 1.0, g.w_o.data_mut());
        add_col_sums(&dmid, &mut g.b_o);
    }
    let mut dctx = vec![0.0; t * d];
    gemm(t, d, d, 1.0, &dmid, false, layer.w_o.data(), true, 0.0, &mut dctx);
    let dqkv = attention_backward(&c.qkv, &c.probs, &dctx, t, d, nh);
    if let Some(g) = grads.as_deref_mut() {
        gemm(d, t, 3 * d, 1.0, &c.u, true, &dqkv, false, 1.0, g.w_qkv.data_mut());
        add_col_sums(&dqkv, &mut g.b_qkv);
    }
    let mut du = vec![0.0; t * d];
    gemm(t, 3 * d, d, 1.0, &dqkv, false, layer.w_qkv.data(), true, 0.0, &mut du);
    let dx_ln = layer_norm_backward(
        &du,
        d,
        &c.ln1,
        &layer.ln1_gain,
        grads.map(|g| (g.ln1_gain.as_mut_slice(), g.ln1_bias.as_mut_slice())),
    );
    for (a, b) in dmid.iter_mut().zip(&dx_ln) {
        *a += b;
    }
    dmid
}

/// Per-layer keys and values of already processed positions.
#[derive(Debug, Clone)]
pub struct KvCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn new(params: &BackboneParams) -> Self {
        let n = params.config.n_layers;
        let cap = params.config.context_length * params.config.d_model;
        Self {
            k: (0..n).map(|_| Vec::with_capacity(cap)).collect(),
            v: (0..n).map(|_| Vec::with_capacity(cap)).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
