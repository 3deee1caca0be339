//! Forward and backward passes of the pre-norm decoder stack.
//!
//! Activations are row-major `(batch * seq) x width` buffers. The backward
//! pass is written out by hand against the cached activations of a
//! [`ForwardPass`].

use rand::Rng;

use super::config::ModelConfig;
use super::params::Parameters;
use super::real::{gemm, Mat, MatMut, Real};
use super::LmError;
use crate::tokenizer::TokenId;

/// Target id meaning "do not score this position".
pub const IGNORE: TokenId = TokenId::MAX;

const LN_EPS: f64 = 1e-5;

/// Row-major `rows x cols` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Logits<F> {
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub(crate) struct LayerCache<F> {
    xhat1: Vec<F>,
    rstd1: Vec<F>,
    h1: Vec<F>,
    pub(crate) qkv: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    drop_attn: Option<Vec<F>>,
    xhat2: Vec<F>,
    rstd2: Vec<F>,
    h2: Vec<F>,
    fc: Vec<F>,
    act: Vec<F>,
    drop_mlp: Option<Vec<F>>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardPass<F> {
    pub batch: usize,
    pub seq: usize,
    tokens: Vec<TokenId>,
    drop_emb: Option<Vec<F>>,
    pub(crate) layers: Vec<LayerCache<F>>,
    xhatf: Vec<F>,
    rstdf: Vec<F>,
    hf: Vec<F>,
    pub logits: Logits<F>,
}

pub(crate) fn check_tokens(config: &ModelConfig, tokens: &[TokenId], seq: usize) -> Result<(), LmError> {
    if seq == 0 || tokens.is_empty() {
        return Err(LmError::EmptySequence);
    }
    if seq > config.context_length {
        return Err(LmError::SequenceTooLong { len: seq, max: config.context_length });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(LmError::TokenOutOfRange { id, vocab_size: config.vocab_size });
    }
    Ok(())
}

pub(crate) fn layer_norm<F: Real>(x: &[F], w: &[F], b: &[F], d: usize) -> (Vec<F>, Vec<F>, Vec<F>) {
    let n = x.len() / d;
    let mut out = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); n];
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(LN_EPS);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let r = F::one() / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            out[i * d + j] = h * w[j] + b[j];
        }
    }
    (out, xhat, rstd)
}

/// Accumulates into `dx`, `dw` and `db`.
fn layer_norm_backward<F: Real>(
    dout: &[F],
    xhat: &[F],
    rstd: &[F],
    w: &[F],
    d: usize,
    dx: &mut [F],
    dw: &mut [F],
    db: &mut [F],
) {
    let inv_d = F::from_f64(1.0 / d as f64);
    for (i, &r) in rstd.iter().enumerate() {
        let dy = &dout[i * d..(i + 1) * d];
        let xh = &xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for j in 0..d {
            let g = dy[j] * w[j];
            mean_dxhat += g;
            mean_dxhat_xhat += g * xh[j];
            dw[j] += dy[j] * xh[j];
            db[j] += dy[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        for j in 0..d {
            let g = dy[j] * w[j];
            dx[i * d + j] += r * (g - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

/// `x * w + b` for `n` rows.
pub(crate) fn linear<F: Real>(x: &[F], n: usize, d_in: usize, w: &[F], b: &[F]) -> Vec<F> {
    let d_out = b.len();
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(Mat::new(x, n, d_in), Mat::new(w, d_in, d_out), F::one(), MatMut::new(&mut y, n, d_out));
    y
}

/// Returns `dx`; accumulates weight and bias gradients.
fn linear_backward<F: Real>(
    dy: &[F],
    x: &[F],
    n: usize,
    d_in: usize,
    d_out: usize,
    w: &[F],
    dw: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    gemm(Mat::new(x, n, d_in).t(), Mat::new(dy, n, d_out), F::one(), MatMut::new(dw, d_in, d_out));
    for row in dy.chunks_exact(d_out) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut dx = vec![F::zero(); n * d_in];
    gemm(Mat::new(dy, n, d_out), Mat::new(w, d_in, d_out).t(), F::zero(), MatMut::new(&mut dx, n, d_in));
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    let inner = F::from_f64(GELU_C) * (x + F::from_f64(GELU_A) * x * x * x);
    half * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::from_f64(3.0) * a * x * x)
}

/// Softmax over `row[..=limit]`; entries after `limit` become zero.
pub(crate) fn causal_softmax_row<F: Real>(row: &mut [F], limit: usize) {
    let max = row[..=limit].iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in &mut row[..=limit] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut row[..=limit] {
        *v /= sum;
    }
    for v in &mut row[limit + 1..] {
        *v = F::zero();
    }
}

fn dropout_mask<F: Real, R: Rng>(len: usize, p: f32, rng: &mut R) -> Vec<F> {
    let keep = F::from_f64(1.0 / (1.0 - p as f64));
    (0..len)
        .map(|_| if rng.gen::<f32>() < p { F::zero() } else { keep })
        .collect()
}

fn apply_mask<F: Real>(x: &mut [F], mask: &Option<Vec<F>>) {
    if let Some(mask) = mask {
        for (v, &m) in x.iter_mut().zip(mask) {
            *v *= m;
        }
    }
}

impl<F: Real> Parameters<F> {
    fn slice(&self, r: &std::ops::Range<usize>) -> &[F] {
        &self.data[r.clone()]
    }

    /// Logits for one sequence, dropout off.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Logits<F>, LmError> {
        let pass = self.forward_pass::<rand::rngs::ThreadRng>(tokens, 1, tokens.len(), None)?;
        Ok(pass.logits)
    }

    /// Runs `batch` sequences of length `seq` (row-major in `tokens`).
    ///
    /// Dropout is applied only when `rng` is given and the config asks for it.
    pub fn forward_pass<R: Rng>(
        &self,
        tokens: &[TokenId],
        batch: usize,
        seq: usize,
        mut rng: Option<&mut R>,
    ) -> Result<ForwardPass<F>, LmError> {
        let c = &self.config;
        check_tokens(c, tokens, seq)?;
        assert_eq!(tokens.len(), batch * seq, "token buffer does not match batch shape");
        let (d, dm, nh, hd) = (c.d_model, c.d_mlp(), c.n_heads, c.head_dim());
        let n = batch * seq;
        let p_drop = c.dropout;
        let mut mask = |len: usize| match rng.as_deref_mut() {
            Some(rng) if p_drop > 0.0 => Some(dropout_mask::<F, R>(len, p_drop, rng)),
            _ => None,
        };

        let wte = self.slice(&self.layout.wte);
        let wpe = self.slice(&self.layout.wpe);
        let mut x = vec![F::zero(); n * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let t = i % seq;
            let e = &wte[tok as usize * d..(tok as usize + 1) * d];
            let p = &wpe[t * d..(t + 1) * d];
            for j in 0..d {
                x[i * d + j] = e[j] + p[j];
            }
        }
        let drop_emb = mask(n * d);
        apply_mask(&mut x, &drop_emb);

        let scale = F::from_f64(1.0 / (hd as f64).sqrt());
        let mut layers = Vec::with_capacity(c.n_layers);
        for slots in &self.layout.layers {
            let (h1, xhat1, rstd1) = layer_norm(&x, self.slice(&slots.ln1_w), self.slice(&slots.ln1_b), d);
            let qkv = linear(&h1, n, d, self.slice(&slots.qkv_w), self.slice(&slots.qkv_b));

            let mut probs = vec![F::zero(); batch * nh * seq * seq];
            let mut att = vec![F::zero(); n * d];
            for b in 0..batch {
                let qkv_b = &qkv[b * seq * 3 * d..(b + 1) * seq * 3 * d];
                for h in 0..nh {
                    let q = Mat::cols_of(qkv_b, seq, 3 * d, h * hd, hd);
                    let k = Mat::cols_of(qkv_b, seq, 3 * d, d + h * hd, hd);
                    let v = Mat::cols_of(qkv_b, seq, 3 * d, 2 * d + h * hd, hd);
                    let pr = &mut probs[(b * nh + h) * seq * seq..(b * nh + h + 1) * seq * seq];
                    gemm(q, k.t(), F::zero(), MatMut::new(pr, seq, seq));
                    for i in 0..seq {
                        let row = &mut pr[i * seq..(i + 1) * seq];
                        for s in &mut row[..=i] {
                            *s *= scale;
                        }
                        causal_softmax_row(row, i);
                    }
                    let att_b = &mut att[b * seq * d..(b + 1) * seq * d];
                    gemm(Mat::new(pr, seq, seq), v, F::zero(), MatMut::cols_of(att_b, seq, d, h * hd, hd));
                }
            }

            let mut y = linear(&att, n, d, self.slice(&slots.proj_w), self.slice(&slots.proj_b));
            let drop_attn = mask(n * d);
            apply_mask(&mut y, &drop_attn);
            for (xv, yv) in x.iter_mut().zip(&y) {
                *xv += *yv;
            }

            let (h2, xhat2, rstd2) = layer_norm(&x, self.slice(&slots.ln2_w), self.slice(&slots.ln2_b), d);
            let fc = linear(&h2, n, d, self.slice(&slots.fc_w), self.slice(&slots.fc_b));
            let act: Vec<F> = fc.iter().map(|&v| gelu(v)).collect();
            let mut m = linear(&act, n, dm, self.slice(&slots.fc_proj_w), self.slice(&slots.fc_proj_b));
            let drop_mlp = mask(n * d);
            apply_mask(&mut m, &drop_mlp);
            for (xv, mv) in x.iter_mut().zip(&m) {
                *xv += *mv;
            }

            layers.push(LayerCache {
                xhat1,
                rstd1,
                h1,
                qkv,
                probs,
                att,
                drop_attn,
                xhat2,
                rstd2,
                h2,
                fc,
                act,
                drop_mlp,
            });
        }

        let (hf, xhatf, rstdf) = layer_norm(&x, self.slice(&self.layout.lnf_w), self.slice(&self.layout.lnf_b), d);
        let v_size = c.vocab_size;
        let mut logits = vec![F::zero(); n * v_size];
        gemm(Mat::new(&hf, n, d), Mat::new(wte, v_size, d).t(), F::zero(), MatMut::new(&mut logits, n, v_size));

        Ok(ForwardPass {
            batch,
            seq,
            tokens: tokens.to_vec(),
            drop_emb,
            layers,
            xhatf,
            rstdf,
            hf,
            logits: Logits { rows: n, cols: v_size, data: logits },
        })
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient of the loss with respect to the logits.
    pub fn backward(&self, pass: &ForwardPass<F>, dlogits: &[F]) -> Vec<F> {
        let c = &self.config;
        let (d, dm, nh, hd) = (c.d_model, c.d_mlp(), c.n_heads, c.head_dim());
        let (batch, seq) = (pass.batch, pass.seq);
        let n = batch * seq;
        let v_size = c.vocab_size;
        let lay = &self.layout;
        let mut grads = vec![F::zero(); self.data.len()];
        let wte = self.slice(&lay.wte);

        // Tied output projection.
        gemm(
            Mat::new(dlogits, n, v_size).t(),
            Mat::new(&pass.hf, n, d),
            F::one(),
            MatMut::new(&mut grads[lay.wte.clone()], v_size, d),
        );
        let mut dhf = vec![F::zero(); n * d];
        gemm(Mat::new(dlogits, n, v_size), Mat::new(wte, v_size, d), F::zero(), MatMut::new(&mut dhf, n, d));

        let mut dx = vec![F::zero(); n * d];
        {
            let (dw, db) = two_ranges(&mut grads, &lay.lnf_w, &lay.lnf_b);
            layer_norm_backward(&dhf, &pass.xhatf, &pass.rstdf, self.slice(&lay.lnf_w), d, &mut dx, dw, db);
        }

        let scale = F::from_f64(1.0 / (hd as f64).sqrt());
        for (slots, cache) in lay.layers.iter().zip(&pass.layers).rev() {
            // MLP branch.
            let mut dm_out = dx.clone();
            apply_mask(&mut dm_out, &cache.drop_mlp);
            let dact = {
                let (dw, db) = two_ranges(&mut grads, &slots.fc_proj_w, &slots.fc_proj_b);
                linear_backward(&dm_out, &cache.act, n, dm, d, self.slice(&slots.fc_proj_w), dw, db)
            };
            let dfc: Vec<F> = dact.iter().zip(&cache.fc).map(|(&g, &f)| g * gelu_grad(f)).collect();
            let dh2 = {
                let (dw, db) = two_ranges(&mut grads, &slots.fc_w, &slots.fc_b);
                linear_backward(&dfc, &cache.h2, n, d, dm, self.slice(&slots.fc_w), dw, db)
            };
            {
                let (dw, db) = two_ranges(&mut grads, &slots.ln2_w, &slots.ln2_b);
                layer_norm_backward(&dh2, &cache.xhat2, &cache.rstd2, self.slice(&slots.ln2_w), d, &mut dx, dw, db);
            }

            // Attention branch.
            let mut dy = dx.clone();
            apply_mask(&mut dy, &cache.drop_attn);
            let datt = {
                let (dw, db) = two_ranges(&mut grads, &slots.proj_w, &slots.proj_b);
                linear_backward(&dy, &cache.att, n, d, d, self.slice(&slots.proj_w), dw, db)
            };
            let mut dqkv = vec![F::zero(); n * 3 * d];
            let mut dp = vec![F::zero(); seq * seq];
            for b in 0..batch {
                let qkv_b = &cache.qkv[b * seq * 3 * d..(b + 1) * seq * 3 * d];
                let datt_b = &datt[b * seq * d..(b + 1) * seq * d];
                let dqkv_b = &mut dqkv[b * seq * 3 * d..(b + 1) * seq * 3 * d];
                for h in 0..nh {
                    let pr = &cache.probs[(b * nh + h) * seq * seq..(b * nh + h + 1) * seq * seq];
                    let q = Mat::cols_of(qkv_b, seq, 3 * d, h * hd, hd);
                    let k = Mat::cols_of(qkv_b, seq, 3 * d, d + h * hd, hd);
                    let v = Mat::cols_of(qkv_b, seq, 3 * d, 2 * d + h * hd, hd);
                    let dout = Mat::cols_of(datt_b, seq, d, h * hd, hd);

                    gemm(dout, v.t(), F::zero(), MatMut::new(&mut dp, seq, seq));
                    gemm(Mat::new(pr, seq, seq).t(), dout, F::zero(), MatMut::cols_of(dqkv_b, seq, 3 * d, 2 * d + h * hd, hd));
                    for i in 0..seq {
                        let p_row = &pr[i * seq..(i + 1) * seq];
                        let dp_row = &mut dp[i * seq..(i + 1) * seq];
                        let dot: F = (0..=i).map(|j| p_row[j] * dp_row[j]).sum();
                        for j in 0..=i {
                            dp_row[j] = p_row[j] * (dp_row[j] - dot) * scale;
                        }
                        for v in &mut dp_row[i + 1..] {
                            *v = F::zero();
                        }
                    }
                    gemm(Mat::new(&dp, seq, seq), k, F::zero(), MatMut::cols_of(dqkv_b, seq, 3 * d, h * hd, hd));
                    gemm(Mat::new(&dp, seq, seq).t(), q, F::zero(), MatMut::cols_of(dqkv_b, seq, 3 * d, d + h * hd, hd));
                }
            }
            let dh1 = {
                let (dw, db) = two_ranges(&mut grads, &slots.qkv_w, &slots.qkv_b);
                linear_backward(&dqkv, &cache.h1, n, d, 3 * d, self.slice(&slots.qkv_w), dw, db)
            };
            {
                let (dw, db) = two_ranges(&mut grads, &slots.ln1_w, &slots.ln1_b);
                layer_norm_backward(&dh1, &cache.xhat1, &cache.rstd1, self.slice(&slots.ln1_w), d, &mut dx, dw, db);
            }
        }

        apply_mask(&mut dx, &pass.drop_emb);
        for (i, &tok) in pass.tokens.iter().enumerate() {
            let t = i % seq;
            let row = &dx[i * d..(i + 1) * d];
            let te = lay.wte.start + tok as usize * d;
            for j in 0..d {
                grads[te + j] += row[j];
            }
            let pe = lay.wpe.start + t * d;
            for j in 0..d {
                grads[pe + j] += row[j];
            }
        }
        grads
    }

    /// Mean next-token loss and its parameter gradient for one batch.
    pub fn loss_and_grad(
        &self,
        tokens: &[TokenId],
        targets: &[TokenId],
        batch: usize,
        seq: usize,
        rng: Option<&mut impl Rng>,
    ) -> Result<(f64, Vec<F>), LmError> {
        let mut pass = self.forward_pass(tokens, batch, seq, rng)?;
        let mut dlogits = std::mem::take(&mut pass.logits.data);
        let loss = cross_entropy_grad_in_place(&mut dlogits, pass.logits.cols, targets)?;
        let grads = self.backward(&pass, &dlogits);
        Ok((loss, grads))
    }
}

fn two_ranges<'a, F>(
    data: &'a mut [F],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [F], &'a mut [F]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (left, right) = data.split_at_mut(b.start);
    (&mut left[a.clone()], &mut right[..b.end - b.start])
}

/// Mean cross-entropy (natural log) over positions whose target is not [`IGNORE`].
pub fn cross_entropy<F: Real>(logits: &Logits<F>, targets: &[TokenId]) -> Result<f64, LmError> {
    let mut scratch = logits.data.clone();
    cross_entropy_grad_in_place(&mut scratch, logits.cols, targets)
}

/// Computes the loss and overwrites `logits` with its gradient.
pub(crate) fn cross_entropy_grad_in_place<F: Real>(
    logits: &mut [F],
    vocab: usize,
    targets: &[TokenId],
) -> Result<f64, LmError> {
    assert_eq!(logits.len(), targets.len() * vocab, "targets do not match logits");
    let counted = targets.iter().filter(|&&t| t != IGNORE).count();
    if counted == 0 {
        return Err(LmError::NothingToPredict);
    }
    let inv = F::from_f64(1.0 / counted as f64);
    let mut total = 0.0f64;
    for (row, &target) in logits.chunks_exact_mut(vocab).zip(targets) {
        if target == IGNORE {
            row.fill(F::zero());
            continue;
        }
        let target_logit = row[target as usize];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        total += sum.as_f64().ln() + (max - target_logit).as_f64();
        for v in row.iter_mut() {
            *v = *v / sum * inv;
        }
        row[target as usize] -= inv;
    }
    Ok(total / counted as f64)
}

/// Softmax of one logits row.
pub fn softmax<F: Real>(row: &[F]) -> Vec<F> {
    let mut out = row.to_vec();
    causal_softmax_row(&mut out, row.len() - 1);
    out
}
