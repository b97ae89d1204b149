//! Layer primitives with explicit backward passes. Activations are
//! row-major `rows × width` matrices.

use rand::Rng;

use super::params::{LinearAt, NormAt};
use super::scalar::{matmul, matmul_at, matmul_bt, Scalar};

const NORM_EPS: f64 = 1e-5;

pub(crate) fn linear_fwd<S: Scalar>(p: &[S], l: LinearAt, x: &[S], rows: usize) -> Vec<S> {
    let bias = &p[l.b..l.b + l.dout];
    let mut y: Vec<S> = Vec::with_capacity(rows * l.dout);
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    matmul(rows, l.din, l.dout, x, &p[l.w..l.w + l.din * l.dout], &mut y, true);
    y
}

/// Accumulates weight gradients into `g` and returns `dx`.
pub(crate) fn linear_bwd<S: Scalar>(p: &[S], g: &mut [S], l: LinearAt, x: &[S], dy: &[S], rows: usize) -> Vec<S> {
    matmul_at(l.din, rows, l.dout, x, dy, &mut g[l.w..l.w + l.din * l.dout], true);
    let gb = &mut g[l.b..l.b + l.dout];
    for row in dy.chunks_exact(l.dout) {
        for (a, &b) in gb.iter_mut().zip(row) {
            *a = *a + b;
        }
    }
    let mut dx = vec![S::zero(); rows * l.din];
    matmul_bt(rows, l.dout, l.din, dy, &p[l.w..l.w + l.din * l.dout], &mut dx, false);
    dx
}

pub(crate) struct NormCache<S> {
    xhat: Vec<S>,
    rstd: Vec<S>,
}

pub(crate) fn norm_fwd<S: Scalar>(p: &[S], n: NormAt, x: &[S], d: usize) -> (Vec<S>, NormCache<S>) {
    let gain = &p[n.g..n.g + d];
    let bias = &p[n.b..n.b + d];
    let rows = x.len() / d;
    let mut y = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    let inv_d = S::from_f64(1.0 / d as f64);
    let eps = S::from_f64(NORM_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<S>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
        let rs = (var + eps).sqrt().recip();
        rstd.push(rs);
        for i in 0..d {
            let h = (row[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = gain[i] * h + bias[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub(crate) fn norm_bwd<S: Scalar>(p: &[S], g: &mut [S], n: NormAt, cache: &NormCache<S>, dy: &[S], d: usize) -> Vec<S> {
    let gain = &p[n.g..n.g + d];
    let inv_d = S::from_f64(1.0 / d as f64);
    let mut dx = vec![S::zero(); dy.len()];
    let mut dxhat = vec![S::zero(); d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = S::zero();
        let mut mean_dxhat_xhat = S::zero();
        for i in 0..d {
            g[n.g + i] = g[n.g + i] + dyr[i] * xh[i];
            g[n.b + i] = g[n.b + i] + dyr[i];
            dxhat[i] = dyr[i] * gain[i];
            mean_dxhat = mean_dxhat + dxhat[i];
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat[i] * xh[i];
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        for i in 0..d {
            dx[r * d + i] = rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Dropout source; inactive without an RNG or at rate 0.
pub(crate) struct Dropout<'a, R> {
    pub rng: Option<&'a mut R>,
    pub rate: f64,
}

impl<R: Rng> Dropout<'_, R> {
    pub fn mask<S: Scalar>(&mut self, n: usize) -> Option<Vec<S>> {
        let rate = self.rate;
        match self.rng.as_mut() {
            Some(rng) if rate > 0.0 => Some(dropout_mask(&mut **rng, n, rate)),
            _ => None,
        }
    }
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1/(1-p)`.
pub(crate) fn dropout_mask<S: Scalar, R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<S> {
    let keep = S::from_f64(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep })
        .collect()
}

pub(crate) fn apply_mask<S: Scalar>(x: &mut [S], mask: Option<&Vec<S>>) {
    if let Some(m) = mask {
        for (a, &b) in x.iter_mut().zip(m) {
            *a = *a * b;
        }
    }
}

pub(crate) fn add_into<S: Scalar>(acc: &mut [S], x: &[S]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a = *a + b;
    }
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = sum.recip();
    row.iter_mut().for_each(|v| *v = *v * inv);
}

/// One attention block: query rows `[q_off, q_off + q_len)` attend to key
/// rows `[k_off, k_off + k_len)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Segment {
    pub q_off: usize,
    pub q_len: usize,
    pub k_off: usize,
    pub k_len: usize,
}

pub(crate) struct AttnCache<S> {
    /// Per (segment, head): softmax probabilities and optional dropout mask.
    probs: Vec<(Vec<S>, Option<Vec<S>>)>,
}

/// Multi-head scaled dot-product attention over packed sequences. With
/// `causal`, query `i` of a segment sees keys `0..=i`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_fwd<S: Scalar, R: Rng>(
    q: &[S],
    k: &[S],
    v: &[S],
    d: usize,
    heads: usize,
    segs: &[Segment],
    causal: bool,
    dropout: &mut Dropout<'_, R>,
) -> (Vec<S>, AttnCache<S>) {
    let dh = d / heads;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let rows = q.len() / d;
    let mut out = vec![S::zero(); rows * d];
    let mut probs = Vec::with_capacity(segs.len() * heads);
    for s in segs {
        for h in 0..heads {
            let mut p = vec![S::zero(); s.q_len * s.k_len];
            S::gemm(
                s.q_len,
                dh,
                s.k_len,
                scale,
                &q[s.q_off * d + h * dh..],
                (d, 1),
                &k[s.k_off * d + h * dh..],
                (1, d),
                S::zero(),
                &mut p,
                (s.k_len, 1),
            );
            for (i, row) in p.chunks_exact_mut(s.k_len).enumerate() {
                if causal {
                    let visible = i + 1;
                    softmax_in_place(&mut row[..visible]);
                    row[visible..].fill(S::zero());
                } else {
                    softmax_in_place(row);
                }
            }
            let mask = dropout.mask(p.len());
            let used = match &mask {
                Some(m) => p.iter().zip(m).map(|(&a, &b)| a * b).collect(),
                None => p.clone(),
            };
            S::gemm(
                s.q_len,
                s.k_len,
                dh,
                S::one(),
                &used,
                (s.k_len, 1),
                &v[s.k_off * d + h * dh..],
                (d, 1),
                S::zero(),
                &mut out[s.q_off * d + h * dh..],
                (d, 1),
            );
            probs.push((p, mask));
        }
    }
    (out, AttnCache { probs })
}

/// Returns `(dq, dk, dv)`; `dk`/`dv` have the key rows' shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_bwd<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    d: usize,
    heads: usize,
    segs: &[Segment],
    cache: &AttnCache<S>,
    dout: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let dh = d / heads;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut dq = vec![S::zero(); q.len()];
    let mut dk = vec![S::zero(); k.len()];
    let mut dv = vec![S::zero(); v.len()];
    let mut slot = 0;
    for s in segs {
        for h in 0..heads {
            let (p, mask) = &cache.probs[slot];
            slot += 1;
            let used: Vec<S> = match mask {
                Some(m) => p.iter().zip(m).map(|(&a, &b)| a * b).collect(),
                None => p.clone(),
            };
            let mut dp = vec![S::zero(); p.len()];
            S::gemm(
                s.q_len,
                dh,
                s.k_len,
                S::one(),
                &dout[s.q_off * d + h * dh..],
                (d, 1),
                &v[s.k_off * d + h * dh..],
                (1, d),
                S::zero(),
                &mut dp,
                (s.k_len, 1),
            );
            S::gemm(
                s.k_len,
                s.q_len,
                dh,
                S::one(),
                &used,
                (1, s.k_len),
                &dout[s.q_off * d + h * dh..],
                (d, 1),
                S::one(),
                &mut dv[s.k_off * d + h * dh..],
                (d, 1),
            );
            apply_mask(&mut dp, mask.as_ref());
            for (dr, pr) in dp.chunks_exact_mut(s.k_len).zip(p.chunks_exact(s.k_len)) {
                let dot: S = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                for (a, &b) in dr.iter_mut().zip(pr) {
                    *a = b * (*a - dot);
                }
            }
            S::gemm(
                s.q_len,
                s.k_len,
                dh,
                scale,
                &dp,
                (s.k_len, 1),
                &k[s.k_off * d + h * dh..],
                (d, 1),
                S::one(),
                &mut dq[s.q_off * d + h * dh..],
                (d, 1),
            );
            S::gemm(
                s.k_len,
                s.q_len,
                dh,
                scale,
                &dp,
                (1, s.k_len),
                &q[s.q_off * d + h * dh..],
                (d, 1),
                S::one(),
                &mut dk[s.k_off * d + h * dh..],
                (d, 1),
            );
        }
    }
    (dq, dk, dv)
}

/// Sinusoidal position encoding row for `pos`.
pub(crate) fn position_row(pos: usize, d: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate().take(d) {
        let freq = (-((j / 2 * 2) as f64 / d as f64) * 10000f64.ln()).exp();
        let angle = pos as f64 * freq;
        *o = if j % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}
