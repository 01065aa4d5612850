use super::config::{LmConfig, PositionMode};
use super::params::Params;
use crate::corpus::TokenId;
use crate::error::{ForgeError, Result};
use crate::scalar::Scalar;

const NORM_EPS: f64 = 1e-6;
const ROPE_BASE: f64 = 10000.0;

/// `out (m×n) = beta*out + a (m×k) · b (k×n)`, all row-major.
fn mm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, out: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, out, n as isize, 1);
}

/// `out (k×n) += aᵀ · b` with `a (m×k)`, `b (m×n)`.
fn mm_at_b<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    T::gemm(k, m, n, T::one(), a, 1, k as isize, b, n as isize, 1, T::one(), out, n as isize, 1);
}

/// `out (m×k) = beta*out + a · bᵀ` with `a (m×n)`, `b (k×n)`.
fn mm_a_bt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], beta: T, out: &mut [T]) {
    T::gemm(m, n, k, T::one(), a, n as isize, 1, b, 1, n as isize, beta, out, k as isize, 1);
}

/// Per-row RMS normalization. Returns the inverse RMS of every row.
fn rmsnorm<T: Scalar>(x: &[T], gain: &[T], out: &mut [T]) -> Vec<T> {
    let d = gain.len();
    let eps = T::lit(NORM_EPS);
    let dt = T::from_usize(d).unwrap();
    x.chunks_exact(d)
        .zip(out.chunks_exact_mut(d))
        .map(|(row, o)| {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dt;
            let r = T::one() / (ms + eps).sqrt();
            for ((o, &v), &g) in o.iter_mut().zip(row).zip(gain) {
                *o = v * r * g;
            }
            r
        })
        .collect()
}

/// Accumulates the gain gradient and adds the input gradient into `dx`.
fn rmsnorm_backward<T: Scalar>(x: &[T], gain: &[T], inv: &[T], dy: &[T], dgain: &mut [T], dx: &mut [T]) {
    let d = gain.len();
    let dt = T::from_usize(d).unwrap();
    let mut dxhat = vec![T::zero(); d];
    for (((row, dyr), dxr), &r) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).zip(inv) {
        let mut dot = T::zero();
        for i in 0..d {
            let xhat = row[i] * r;
            dgain[i] += dyr[i] * xhat;
            dxhat[i] = dyr[i] * gain[i];
            dot += dxhat[i] * xhat;
        }
        let mean = dot / dt;
        for i in 0..d {
            dxr[i] += r * (dxhat[i] - row[i] * r * mean);
        }
    }
}

struct Rope<T> {
    cos: Vec<T>,
    sin: Vec<T>,
    half: usize,
}

impl<T: Scalar> Rope<T> {
    fn new(seq: usize, head_dim: usize) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(seq * half);
        let mut sin = Vec::with_capacity(seq * half);
        for t in 0..seq {
            for i in 0..half {
                let theta = (t as f64) * ROPE_BASE.powf(-((2 * i) as f64) / head_dim as f64);
                cos.push(T::lit(theta.cos()));
                sin.push(T::lit(theta.sin()));
            }
        }
        Rope { cos, sin, half }
    }

    /// Rotate every head of every row in place; `inverse` applies the
    /// transpose, which is what the backward pass needs.
    fn apply(&self, x: &mut [T], seq: usize, n_heads: usize, head_dim: usize, inverse: bool) {
        let d = n_heads * head_dim;
        for (n, row) in x.chunks_exact_mut(d).enumerate() {
            let t = n % seq;
            for h in 0..n_heads {
                let v = &mut row[h * head_dim..(h + 1) * head_dim];
                for i in 0..self.half {
                    let (c, s) = (self.cos[t * self.half + i], self.sin[t * self.half + i]);
                    let s = if inverse { -s } else { s };
                    let (a, b) = (v[2 * i], v[2 * i + 1]);
                    v[2 * i] = a * c - b * s;
                    v[2 * i + 1] = a * s + b * c;
                }
            }
        }
    }
}

fn silu_parts<T: Scalar>(a: T) -> (T, T) {
    let sig = T::one() / (T::one() + (-a).exp());
    (a * sig, sig * (T::one() + a * (T::one() - sig)))
}

struct LayerCache<T> {
    x_in: Vec<T>,
    inv1: Vec<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    x_mid: Vec<T>,
    inv2: Vec<T>,
    h2: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache<T> {
    ids: Vec<TokenId>,
    batch: usize,
    seq: usize,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    inv_final: Vec<T>,
    h_final: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
    pub fn seq(&self) -> usize {
        self.seq
    }
}

fn check_inputs(cfg: &LmConfig, ids: &[TokenId], batch: usize, seq: usize) -> Result<()> {
    if seq == 0 || batch == 0 || ids.len() != batch * seq {
        return Err(ForgeError::invalid(format!(
            "expected {batch}×{seq} token ids, got {}",
            ids.len()
        )));
    }
    if seq > cfg.max_seq_len && cfg.positions == PositionMode::Learned {
        return Err(ForgeError::invalid(format!(
            "sequence length {seq} exceeds max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(ForgeError::invalid(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn ensure_finite<T: Scalar>(x: &[T], layer: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ForgeError::NonFinite { layer: layer.to_string() })
    }
}

/// Forward pass over a `batch × seq` block of ids. Returns logits
/// (`batch·seq × vocab`) and the cache for [`backward`].
pub fn forward_cached<T: Scalar>(
    p: &Params<T>,
    ids: &[TokenId],
    batch: usize,
    seq: usize,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    let cfg = &p.config;
    check_inputs(cfg, ids, batch, seq)?;
    let (d, nh, hd, f, vs) = (cfg.dim, cfg.n_heads, cfg.head_dim, cfg.ffn_dim, cfg.vocab_size);
    let n = batch * seq;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let rope = (cfg.positions == PositionMode::Rotary).then(|| Rope::<T>::new(seq, hd));

    let mut x = vec![T::zero(); n * d];
    for (r, (row, &id)) in x.chunks_exact_mut(d).zip(ids).enumerate() {
        row.copy_from_slice(&p.tok_emb[id as usize * d..(id as usize + 1) * d]);
        if cfg.positions == PositionMode::Learned {
            let t = r % seq;
            for (v, &pe) in row.iter_mut().zip(&p.pos_emb[t * d..(t + 1) * d]) {
                *v += pe;
            }
        }
    }

    let mut caches = Vec::with_capacity(cfg.n_layers);
    for (li, lp) in p.layers.iter().enumerate() {
        let x_in = x.clone();
        let mut h1 = vec![T::zero(); n * d];
        let inv1 = rmsnorm(&x_in, &lp.attn_norm, &mut h1);
        let mut q = vec![T::zero(); n * d];
        let mut k = vec![T::zero(); n * d];
        let mut v = vec![T::zero(); n * d];
        mm(n, d, d, &h1, &lp.wq, T::zero(), &mut q);
        mm(n, d, d, &h1, &lp.wk, T::zero(), &mut k);
        mm(n, d, d, &h1, &lp.wv, T::zero(), &mut v);
        if let Some(rope) = &rope {
            rope.apply(&mut q, seq, nh, hd, false);
            rope.apply(&mut k, seq, nh, hd, false);
        }
        let mut probs = vec![T::zero(); batch * nh * seq * seq];
        let mut att = vec![T::zero(); n * d];
        for b in 0..batch {
            for h in 0..nh {
                let base = b * seq * d + h * hd;
                let pm = &mut probs[(b * nh + h) * seq * seq..(b * nh + h + 1) * seq * seq];
                T::gemm(seq, hd, seq, scale, &q[base..], d as isize, 1, &k[base..], 1, d as isize, T::zero(), pm, seq as isize, 1);
                for i in 0..seq {
                    let row = &mut pm[i * seq..(i + 1) * seq];
                    let mut mx = T::neg_infinity();
                    for (j, &s) in row.iter().enumerate() {
                        if cfg.mask.allows(i, j) && s > mx {
                            mx = s;
                        }
                    }
                    let mut sum = T::zero();
                    for (j, s) in row.iter_mut().enumerate() {
                        if cfg.mask.allows(i, j) {
                            *s = (*s - mx).exp();
                            sum += *s;
                        } else {
                            *s = T::zero();
                        }
                    }
                    for s in row.iter_mut() {
                        *s /= sum;
                    }
                }
                T::gemm(seq, seq, hd, T::one(), pm, seq as isize, 1, &v[base..], d as isize, 1, T::zero(), &mut att[base..], d as isize, 1);
            }
        }
        mm(n, d, d, &att, &lp.wo, T::one(), &mut x);
        ensure_finite(&x, &format!("layers.{li}.attn"))?;

        let x_mid = x.clone();
        let mut h2 = vec![T::zero(); n * d];
        let inv2 = rmsnorm(&x_mid, &lp.ffn_norm, &mut h2);
        let mut gate = vec![T::zero(); n * f];
        let mut up = vec![T::zero(); n * f];
        mm(n, d, f, &h2, &lp.w_gate, T::zero(), &mut gate);
        mm(n, d, f, &h2, &lp.w_up, T::zero(), &mut up);
        let act: Vec<T> = gate.iter().zip(&up).map(|(&g, &u)| silu_parts(g).0 * u).collect();
        mm(n, f, d, &act, &lp.w_down, T::one(), &mut x);
        ensure_finite(&x, &format!("layers.{li}.ffn"))?;
        caches.push(LayerCache {
            x_in,
            inv1,
            h1,
            q,
            k,
            v,
            probs,
            att,
            x_mid,
            inv2,
            h2,
            gate,
            up,
            act,
        });
    }

    let mut h_final = vec![T::zero(); n * d];
    let inv_final = rmsnorm(&x, &p.final_norm, &mut h_final);
    let mut logits = vec![T::zero(); n * vs];
    if cfg.tied_embeddings {
        mm_a_bt(n, d, vs, &h_final, &p.tok_emb, T::zero(), &mut logits);
    } else {
        mm(n, d, vs, &h_final, &p.lm_head, T::zero(), &mut logits);
    }
    ensure_finite(&logits, "lm_head")?;
    Ok((
        logits,
        ForwardCache {
            ids: ids.to_vec(),
            batch,
            seq,
            layers: caches,
            x_final: x,
            inv_final,
            h_final,
        },
    ))
}

/// Logits only.
pub fn forward<T: Scalar>(p: &Params<T>, ids: &[TokenId], batch: usize, seq: usize) -> Result<Vec<T>> {
    forward_cached(p, ids, batch, seq).map(|(l, _)| l)
}

/// Gradients of all parameters given the gradient of the logits.
pub fn backward<T: Scalar>(p: &Params<T>, cache: &ForwardCache<T>, dlogits: &[T]) -> Params<T> {
    let cfg = &p.config;
    let (d, nh, hd, f, vs) = (cfg.dim, cfg.n_heads, cfg.head_dim, cfg.ffn_dim, cfg.vocab_size);
    let (batch, seq) = (cache.batch, cache.seq);
    let n = batch * seq;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let rope = (cfg.positions == PositionMode::Rotary).then(|| Rope::<T>::new(seq, hd));
    let mut g = p.zeros_like();

    let mut dh = vec![T::zero(); n * d];
    if cfg.tied_embeddings {
        mm(n, vs, d, dlogits, &p.tok_emb, T::zero(), &mut dh);
        mm_at_b(n, vs, d, dlogits, &cache.h_final, &mut g.tok_emb);
    } else {
        mm_a_bt(n, vs, d, dlogits, &p.lm_head, T::zero(), &mut dh);
        mm_at_b(n, d, vs, &cache.h_final, dlogits, &mut g.lm_head);
    }
    let mut dx = vec![T::zero(); n * d];
    rmsnorm_backward(&cache.x_final, &p.final_norm, &cache.inv_final, &dh, &mut g.final_norm, &mut dx);

    let mut dtmp = vec![T::zero(); n * d];
    for li in (0..cfg.n_layers).rev() {
        let lp = &p.layers[li];
        let lc = &cache.layers[li];
        let lg = &mut g.layers[li];

        // feed-forward
        let mut dact = vec![T::zero(); n * f];
        mm_a_bt(n, d, f, &dx, &lp.w_down, T::zero(), &mut dact);
        mm_at_b(n, f, d, &lc.act, &dx, &mut lg.w_down);
        let mut dgate = vec![T::zero(); n * f];
        let mut dup = vec![T::zero(); n * f];
        for i in 0..n * f {
            let (s, ds) = silu_parts(lc.gate[i]);
            dup[i] = dact[i] * s;
            dgate[i] = dact[i] * lc.up[i] * ds;
        }
        mm_a_bt(n, f, d, &dgate, &lp.w_gate, T::zero(), &mut dtmp);
        mm_a_bt(n, f, d, &dup, &lp.w_up, T::one(), &mut dtmp);
        mm_at_b(n, d, f, &lc.h2, &dgate, &mut lg.w_gate);
        mm_at_b(n, d, f, &lc.h2, &dup, &mut lg.w_up);
        rmsnorm_backward(&lc.x_mid, &lp.ffn_norm, &lc.inv2, &dtmp, &mut lg.ffn_norm, &mut dx);

        // attention
        let mut datt = vec![T::zero(); n * d];
        mm_a_bt(n, d, d, &dx, &lp.wo, T::zero(), &mut datt);
        mm_at_b(n, d, d, &lc.att, &dx, &mut lg.wo);
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dp = vec![T::zero(); seq * seq];
        for b in 0..batch {
            for h in 0..nh {
                let base = b * seq * d + h * hd;
                let pm = &lc.probs[(b * nh + h) * seq * seq..(b * nh + h + 1) * seq * seq];
                T::gemm(seq, hd, seq, T::one(), &datt[base..], d as isize, 1, &lc.v[base..], 1, d as isize, T::zero(), &mut dp, seq as isize, 1);
                T::gemm(seq, seq, hd, T::one(), pm, 1, seq as isize, &datt[base..], d as isize, 1, T::zero(), &mut dv[base..], d as isize, 1);
                for i in 0..seq {
                    let prow = &pm[i * seq..(i + 1) * seq];
                    let drow = &mut dp[i * seq..(i + 1) * seq];
                    let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                    for (ds, &pv) in drow.iter_mut().zip(prow) {
                        *ds = pv * (*ds - dot);
                    }
                }
                T::gemm(seq, seq, hd, scale, &dp, seq as isize, 1, &lc.k[base..], d as isize, 1, T::zero(), &mut dq[base..], d as isize, 1);
                T::gemm(seq, seq, hd, scale, &dp, 1, seq as isize, &lc.q[base..], d as isize, 1, T::zero(), &mut dk[base..], d as isize, 1);
            }
        }
        if let Some(rope) = &rope {
            rope.apply(&mut dq, seq, nh, hd, true);
            rope.apply(&mut dk, seq, nh, hd, true);
        }
        mm_a_bt(n, d, d, &dq, &lp.wq, T::zero(), &mut dtmp);
        mm_a_bt(n, d, d, &dk, &lp.wk, T::one(), &mut dtmp);
        mm_a_bt(n, d, d, &dv, &lp.wv, T::one(), &mut dtmp);
        mm_at_b(n, d, d, &lc.h1, &dq, &mut lg.wq);
        mm_at_b(n, d, d, &lc.h1, &dk, &mut lg.wk);
        mm_at_b(n, d, d, &lc.h1, &dv, &mut lg.wv);
        rmsnorm_backward(&lc.x_in, &lp.attn_norm, &lc.inv1, &dtmp, &mut lg.attn_norm, &mut dx);
    }

    for (r, (row, &id)) in dx.chunks_exact(d).zip(&cache.ids).enumerate() {
        let id = id as usize;
        for (gv, &v) in g.tok_emb[id * d..(id + 1) * d].iter_mut().zip(row) {
            *gv += v;
        }
        if cfg.positions == PositionMode::Learned {
            let t = r % seq;
            for (gv, &v) in g.pos_emb[t * d..(t + 1) * d].iter_mut().zip(row) {
                *gv += v;
            }
        }
    }
    g
}

/// Mean token cross-entropy over positions where `mask` is set, plus the
/// gradient with respect to the logits. Errors when nothing is selected.
pub fn cross_entropy<T: Scalar>(logits: &[T], targets: &[TokenId], mask: &[bool], vocab: usize) -> Result<(T, Vec<T>)> {
    if logits.len() != targets.len() * vocab || mask.len() != targets.len() {
        return Err(ForgeError::invalid("logits, targets and mask disagree in length"));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(ForgeError::invalid("loss mask selects no tokens"));
    }
    let inv = T::one() / T::from_usize(count).unwrap();
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = T::zero();
    for (i, ((row, &t), &m)) in logits.chunks_exact(vocab).zip(targets).zip(mask).enumerate() {
        if !m {
            continue;
        }
        if t as usize >= vocab {
            return Err(ForgeError::invalid(format!("target id {t} outside vocabulary of {vocab}")));
        }
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - mx).exp()).sum();
        let lse = mx + sum.ln();
        total += lse - row[t as usize];
        let g = &mut grad[i * vocab..(i + 1) * vocab];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - lse).exp() * inv;
        }
        g[t as usize] -= inv;
    }
    Ok((total * inv, grad))
}

/// Per-position log-probability of each target under the logits.
pub fn target_log_probs<T: Scalar>(logits: &[T], targets: &[TokenId], vocab: usize) -> Vec<T> {
    logits
        .chunks_exact(vocab)
        .zip(targets)
        .map(|(row, &t)| {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - mx).exp()).sum();
            row[t as usize] - mx - sum.ln()
        })
        .collect()
}

/// Loss and gradients with explicit inputs, targets and mask, all
/// `batch × seq`.
pub fn loss_with_targets<T: Scalar>(
    p: &Params<T>,
    inputs: &[TokenId],
    targets: &[TokenId],
    mask: &[bool],
    batch: usize,
    seq: usize,
) -> Result<(T, Params<T>)> {
    let (logits, cache) = forward_cached(p, inputs, batch, seq)?;
    let (loss, dlogits) = cross_entropy(&logits, targets, mask, p.config.vocab_size)?;
    Ok((loss, backward(p, &cache, &dlogits)))
}

/// Next-token loss on `batch` rows of `len` tokens. `mask[t]` marks token
/// `t` as a prediction target (predicted from tokens `< t`); position 0 is
/// never a target.
pub fn loss_and_grads<T: Scalar>(
    p: &Params<T>,
    tokens: &[TokenId],
    mask: &[bool],
    batch: usize,
    len: usize,
) -> Result<(T, Params<T>)> {
    if len < 2 || tokens.len() != batch * len || mask.len() != tokens.len() {
        return Err(ForgeError::invalid("tokens and mask must be batch × len with len >= 2"));
    }
    let seq = len - 1;
    let mut inputs = Vec::with_capacity(batch * seq);
    let mut targets = Vec::with_capacity(batch * seq);
    let mut tmask = Vec::with_capacity(batch * seq);
    for b in 0..batch {
        let row = &tokens[b * len..(b + 1) * len];
        inputs.extend_from_slice(&row[..seq]);
        targets.extend_from_slice(&row[1..]);
        tmask.extend_from_slice(&mask[b * len + 1..(b + 1) * len]);
    }
    loss_with_targets(p, &inputs, &targets, &tmask, batch, seq)
}

#[cfg(test)]
mod tests {
    use super::super::config::MaskMode;
    use super::*;
    use rand::{Rng as _, SeedableRng};

    fn tiny(positions: PositionMode, tied: bool, mask: MaskMode) -> LmConfig {
        LmConfig {
            vocab_size: 11,
            n_layers: 2,
            dim: 8,
            n_heads: 2,
            head_dim: 4,
            ffn_dim: 12,
            max_seq_len: 6,
            mask,
            positions,
            tied_embeddings: tied,
            init_std: 0.4,
            seed: 3,
            ..Default::default()
        }
    }

    fn grad_check(cfg: LmConfig) {
        let p = Params::<f64>::init(&cfg).unwrap();
        let mut rng = crate::rng::Rng::seed_from_u64(9);
        let (batch, len) = (2, 6);
        let tokens: Vec<u32> = (0..batch * len).map(|_| rng.random_range(0..11)).collect();
        let mask: Vec<bool> = (0..batch * len).map(|i| i % 3 != 1).collect();
        let (_, grads) = loss_and_grads(&p, &tokens, &mask, batch, len).unwrap();
        let names: Vec<String> = p.groups().into_iter().map(|(n, _)| n).collect();
        let analytic: Vec<Vec<f64>> = grads.groups().into_iter().map(|(_, g)| g.clone()).collect();
        let h = 1e-5;
        for (gi, name) in names.iter().enumerate() {
            let len_g = analytic[gi].len();
            for idx in (0..len_g).step_by(1 + len_g / 7) {
                let mut plus = p.clone();
                plus.groups_mut()[gi].1[idx] += h;
                let mut minus = p.clone();
                minus.groups_mut()[gi].1[idx] -= h;
                let lp = loss_and_grads(&plus, &tokens, &mask, batch, len).unwrap().0;
                let lm = loss_and_grads(&minus, &tokens, &mask, batch, len).unwrap().0;
                let num = (lp - lm) / (2.0 * h);
                let ana = analytic[gi][idx];
                let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-7);
                assert!(rel < 1e-4, "{name}[{idx}]: numeric {num} analytic {ana} rel {rel}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        grad_check(tiny(PositionMode::Learned, false, MaskMode::Causal));
    }

    #[test]
    fn gradients_match_with_rope_and_tied_head() {
        grad_check(tiny(PositionMode::Rotary, true, MaskMode::Causal));
    }

    #[test]
    fn gradients_match_with_block_causal_mask() {
        grad_check(tiny(PositionMode::Learned, false, MaskMode::BlockCausal { block: 2 }));
    }

    #[test]
    fn causal_logits_ignore_future_tokens() {
        let p = Params::<f64>::init(&tiny(PositionMode::Learned, false, MaskMode::Causal)).unwrap();
        let a = forward(&p, &[1, 2, 3, 4], 1, 4).unwrap();
        let b = forward(&p, &[1, 2, 3, 9], 1, 4).unwrap();
        assert_eq!(&a[..3 * 11], &b[..3 * 11]);
        assert_ne!(&a[3 * 11..], &b[3 * 11..]);
    }

    #[test]
    fn block_causal_sees_within_block() {
        let p = Params::<f64>::init(&tiny(PositionMode::Learned, false, MaskMode::BlockCausal { block: 2 })).unwrap();
        let a = forward(&p, &[1, 2, 3, 4], 1, 4).unwrap();
        let b = forward(&p, &[1, 2, 3, 9], 1, 4).unwrap();
        assert_eq!(&a[..2 * 11], &b[..2 * 11]);
        assert_ne!(&a[2 * 11..3 * 11], &b[2 * 11..3 * 11]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_vocab() {
        let logits = vec![0.0f64; 3 * 5];
        let (loss, grad) = cross_entropy(&logits, &[0, 1, 2], &[true, true, false], 5).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!(grad[10..].iter().all(|&g| g == 0.0));
        assert!(cross_entropy(&logits, &[0, 1, 2], &[false; 3], 5).is_err());
    }

    #[test]
    fn rejects_out_of_range_ids_and_lengths() {
        let p = Params::<f32>::init(&tiny(PositionMode::Learned, false, MaskMode::Causal)).unwrap();
        assert!(forward(&p, &[1, 99], 1, 2).is_err());
        assert!(forward(&p, &[1; 7], 1, 7).is_err());
        assert!(forward(&p, &[1; 5], 1, 4).is_err());
    }

    #[test]
    fn nan_weights_report_layer() {
        let mut p = Params::<f32>::init(&tiny(PositionMode::Learned, false, MaskMode::Causal)).unwrap();
        p.layers[1].w_down[0] = f32::NAN;
        match forward(&p, &[1, 2, 3], 1, 3) {
            Err(ForgeError::NonFinite { layer }) => assert_eq!(layer, "layers.1.ffn"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn f32_and_f64_forward_agree() {
        let cfg = tiny(PositionMode::Rotary, false, MaskMode::Causal);
        let p64 = Params::<f64>::init(&cfg).unwrap();
        let p32: Params<f32> = p64.cast();
        let a = forward(&p64, &[1, 2, 3, 4, 5], 1, 5).unwrap();
        let b = forward(&p32, &[1, 2, 3, 4, 5], 1, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }
}
