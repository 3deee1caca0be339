//! Incremental decoding with a key/value cache.

use super::model::{check_tokens, gelu, layer_norm, linear};
use super::params::Parameters;
use super::real::{gemm, Mat, MatMut, Real};
use super::LmError;
use crate::tokenizer::TokenId;

/// Cached keys and values for the tokens seen so far.
pub struct DecodeState<F> {
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
    len: usize,
}

impl<F: Real> DecodeState<F> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<F: Real> Parameters<F> {
    /// Runs a whole window at once; returns the cache and the last row of logits.
    pub fn prefill(&self, tokens: &[TokenId]) -> Result<(DecodeState<F>, Vec<F>), LmError> {
        let pass = self.forward_pass::<rand::rngs::ThreadRng>(tokens, 1, tokens.len(), None)?;
        let d = self.config.d_model;
        let mut keys = Vec::with_capacity(self.config.n_layers);
        let mut values = Vec::with_capacity(self.config.n_layers);
        for layer in &pass.layers {
            let mut k = Vec::with_capacity(self.config.context_length * d);
            let mut v = Vec::with_capacity(self.config.context_length * d);
            for row in layer.qkv.chunks_exact(3 * d) {
                k.extend_from_slice(&row[d..2 * d]);
                v.extend_from_slice(&row[2 * d..]);
            }
            keys.push(k);
            values.push(v);
        }
        let last = pass.logits.row(tokens.len() - 1).to_vec();
        Ok((DecodeState { keys, values, len: tokens.len() }, last))
    }

    /// Appends one token and returns the logits for the next position.
    pub fn decode_step(&self, state: &mut DecodeState<F>, token: TokenId) -> Result<Vec<F>, LmError> {
        let c = &self.config;
        let pos = state.len;
        check_tokens(c, &[token], pos + 1)?;
        let (d, dm, nh, hd) = (c.d_model, c.d_mlp(), c.n_heads, c.head_dim());
        let lay = &self.layout;
        let wte = &self.data[lay.wte.clone()];
        let wpe = &self.data[lay.wpe.clone()];
        let mut x: Vec<F> = (0..d)
            .map(|j| wte[token as usize * d + j] + wpe[pos * d + j])
            .collect();

        let scale = F::from_f64(1.0 / (hd as f64).sqrt());
        let len = pos + 1;
        let mut scores = vec![F::zero(); len];
        for (l, slots) in lay.layers.iter().enumerate() {
            let (h1, _, _) = layer_norm(&x, &self.data[slots.ln1_w.clone()], &self.data[slots.ln1_b.clone()], d);
            let qkv = linear(&h1, 1, d, &self.data[slots.qkv_w.clone()], &self.data[slots.qkv_b.clone()]);
            state.keys[l].extend_from_slice(&qkv[d..2 * d]);
            state.values[l].extend_from_slice(&qkv[2 * d..]);
            let keys = &state.keys[l];
            let values = &state.values[l];

            let mut att = vec![F::zero(); d];
            for h in 0..nh {
                let q = &qkv[h * hd..(h + 1) * hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * d + h * hd..j * d + (h + 1) * hd];
                    *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<F>() * scale;
                }
                super::model::causal_softmax_row(&mut scores, len - 1);
                let out = &mut att[h * hd..(h + 1) * hd];
                for (j, &p) in scores.iter().enumerate() {
                    let v = &values[j * d + h * hd..j * d + (h + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(v) {
                        *o += p * vv;
                    }
                }
            }
            let y = linear(&att, 1, d, &self.data[slots.proj_w.clone()], &self.data[slots.proj_b.clone()]);
            for (xv, yv) in x.iter_mut().zip(&y) {
                *xv += *yv;
            }
            let (h2, _, _) = layer_norm(&x, &self.data[slots.ln2_w.clone()], &self.data[slots.ln2_b.clone()], d);
            let act: Vec<F> = linear(&h2, 1, d, &self.data[slots.fc_w.clone()], &self.data[slots.fc_b.clone()])
                .into_iter()
                .map(gelu)
                .collect();
            let m = linear(&act, 1, dm, &self.data[slots.fc_proj_w.clone()], &self.data[slots.fc_proj_b.clone()]);
            for (xv, mv) in x.iter_mut().zip(&m) {
                *xv += *mv;
            }
        }
        state.len = len;

        let (hf, _, _) = layer_norm(&x, &self.data[lay.lnf_w.clone()], &self.data[lay.lnf_b.clone()], d);
        let mut logits = vec![F::zero(); c.vocab_size];
        gemm(Mat::new(&hf, 1, d), Mat::new(wte, c.vocab_size, d).t(), F::zero(), MatMut::new(&mut logits, 1, c.vocab_size));
        Ok(logits)
    }
}
