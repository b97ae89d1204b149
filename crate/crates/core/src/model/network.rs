//! Teacher-forced forward pass over a packed batch and its backward pass.

use rand_chacha::ChaCha8Rng;

use super::ops::*;
use super::params::{AttnAt, FfnAt, NormAt};
use super::scalar::{matmul, matmul_at, matmul_bt, Scalar};
use super::Model;
use crate::error::{Error, Result};
use crate::subword::{BOS_ID, EOS_ID};

/// Source and target token ids. The target excludes BOS/EOS; the decoder
/// reads `BOS y` and predicts `y EOS`.
pub type Pair = (Vec<u32>, Vec<u32>);

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    /// Label-smoothed cross-entropy summed over predicted tokens.
    pub loss_sum: f64,
    /// Plain negative log-likelihood summed over predicted tokens.
    pub nll_sum: f64,
    pub tokens: usize,
}

impl LossStats {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.tokens.max(1) as f64
    }

    pub fn mean_nll(&self) -> f64 {
        self.nll_sum / self.tokens.max(1) as f64
    }

    pub fn merge(&mut self, other: LossStats) {
        self.loss_sum += other.loss_sum;
        self.nll_sum += other.nll_sum;
        self.tokens += other.tokens;
    }
}

pub(crate) struct Packed {
    pub src: Vec<u32>,
    pub src_pos: Vec<usize>,
    pub dec: Vec<u32>,
    pub dec_pos: Vec<usize>,
    pub labels: Vec<u32>,
    pub enc_segs: Vec<Segment>,
    pub dec_segs: Vec<Segment>,
    pub cross_segs: Vec<Segment>,
}

impl Packed {
    pub fn new(batch: &[Pair], vocab: usize) -> Result<Self> {
        let mut p = Packed {
            src: Vec::new(),
            src_pos: Vec::new(),
            dec: Vec::new(),
            dec_pos: Vec::new(),
            labels: Vec::new(),
            enc_segs: Vec::new(),
            dec_segs: Vec::new(),
            cross_segs: Vec::new(),
        };
        for (src, tgt) in batch {
            if src.is_empty() {
                return Err(Error::Shape("empty source sequence".into()));
            }
            if let Some(&id) = src.iter().chain(tgt).find(|&&id| id as usize >= vocab) {
                return Err(Error::InvalidTokenId { id, size: vocab });
            }
            let (so, to) = (p.src.len(), p.dec.len());
            let (sl, tl) = (src.len(), tgt.len() + 1);
            p.src.extend_from_slice(src);
            p.src_pos.extend(0..sl);
            p.dec.push(BOS_ID);
            p.dec.extend_from_slice(tgt);
            p.dec_pos.extend(0..tl);
            p.labels.extend_from_slice(tgt);
            p.labels.push(EOS_ID);
            p.enc_segs.push(Segment {
                q_off: so,
                q_len: sl,
                k_off: so,
                k_len: sl,
            });
            p.dec_segs.push(Segment {
                q_off: to,
                q_len: tl,
                k_off: to,
                k_len: tl,
            });
            p.cross_segs.push(Segment {
                q_off: to,
                q_len: tl,
                k_off: so,
                k_len: sl,
            });
        }
        Ok(p)
    }
}

pub(crate) struct EmbedCache<S> {
    mask: Option<Vec<S>>,
}

pub(crate) struct AttnSub<S> {
    norm: NormCache<S>,
    h: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    attn: AttnCache<S>,
    ctx: Vec<S>,
    resid: Option<Vec<S>>,
}

pub(crate) struct FfnSub<S> {
    norm: NormCache<S>,
    h: Vec<S>,
    z: Vec<S>,
    hidden_mask: Option<Vec<S>>,
    u: Vec<S>,
    resid: Option<Vec<S>>,
}

pub(crate) struct EncoderOut<S> {
    /// Embedding output followed by each layer's output.
    pub reps: Vec<Vec<S>>,
    /// Memory per decoder layer (a single shared entry without mixing).
    pub memories: Vec<Vec<S>>,
    embed: EmbedCache<S>,
    layers: Vec<(AttnSub<S>, FfnSub<S>)>,
    mem_norms: Vec<NormCache<S>>,
    mix: Vec<Vec<S>>,
}

impl<S: Scalar> Model<S> {
    pub(super) fn embed_fwd(
        &self,
        table: usize,
        tokens: &[u32],
        pos: &[usize],
        drop: &mut Dropout<'_, ChaCha8Rng>,
    ) -> (Vec<S>, EmbedCache<S>) {
        let d = self.config.d_model;
        let scale = S::from_f64((d as f64).sqrt());
        let mut pe = vec![0.0f64; d];
        let mut x = vec![S::zero(); tokens.len() * d];
        for (r, (&t, &p)) in tokens.iter().zip(pos).enumerate() {
            position_row(p, d, &mut pe);
            let e = &self.params[table + t as usize * d..table + (t as usize + 1) * d];
            for i in 0..d {
                x[r * d + i] = e[i] * scale + S::from_f64(pe[i]);
            }
        }
        let mask = drop.mask(x.len());
        apply_mask(&mut x, mask.as_ref());
        (x, EmbedCache { mask })
    }

    fn embed_bwd(&self, g: &mut [S], table: usize, tokens: &[u32], cache: &EmbedCache<S>, mut dx: Vec<S>) {
        let d = self.config.d_model;
        let scale = S::from_f64((d as f64).sqrt());
        apply_mask(&mut dx, cache.mask.as_ref());
        for (r, &t) in tokens.iter().enumerate() {
            let ge = &mut g[table + t as usize * d..table + (t as usize + 1) * d];
            for i in 0..d {
                ge[i] = ge[i] + dx[r * d + i] * scale;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attn_sub_fwd(
        &self,
        x: &[S],
        memory: Option<&[S]>,
        norm: NormAt,
        at: AttnAt,
        segs: &[Segment],
        causal: bool,
        drop: &mut Dropout<'_, ChaCha8Rng>,
    ) -> (Vec<S>, AttnSub<S>) {
        let c = &self.config;
        let (d, p) = (c.d_model, &self.params[..]);
        let rows = x.len() / d;
        let (h, norm_cache) = norm_fwd(p, norm, x, d);
        let q = linear_fwd(p, at.q, &h, rows);
        let kv_src = memory.unwrap_or(&h);
        let kv_rows = kv_src.len() / d;
        let k = linear_fwd(p, at.k, kv_src, kv_rows);
        let v = linear_fwd(p, at.v, kv_src, kv_rows);
        let (ctx, attn) = attention_fwd(&q, &k, &v, d, c.heads, segs, causal, drop);
        let mut a = linear_fwd(p, at.o, &ctx, rows);
        let resid = drop.mask(a.len());
        apply_mask(&mut a, resid.as_ref());
        add_into(&mut a, x);
        (
            a,
            AttnSub {
                norm: norm_cache,
                h,
                q,
                k,
                v,
                attn,
                ctx,
                resid,
            },
        )
    }

    /// Returns `dx` and, for cross-attention, the memory gradient.
    #[allow(clippy::too_many_arguments)]
    fn attn_sub_bwd(
        &self,
        g: &mut [S],
        sub: &AttnSub<S>,
        memory: Option<&[S]>,
        norm: NormAt,
        at: AttnAt,
        segs: &[Segment],
        dx_out: &[S],
    ) -> (Vec<S>, Option<Vec<S>>) {
        let c = &self.config;
        let (d, p) = (c.d_model, &self.params[..]);
        let rows = dx_out.len() / d;
        let mut da = dx_out.to_vec();
        apply_mask(&mut da, sub.resid.as_ref());
        let dctx = linear_bwd(p, g, at.o, &sub.ctx, &da, rows);
        let (dq, dk, dv) = attention_bwd(&sub.q, &sub.k, &sub.v, d, c.heads, segs, &sub.attn, &dctx);
        let mut dh = linear_bwd(p, g, at.q, &sub.h, &dq, rows);
        let kv_src = memory.unwrap_or(&sub.h);
        let kv_rows = kv_src.len() / d;
        let mut dkv = linear_bwd(p, g, at.k, kv_src, &dk, kv_rows);
        add_into(&mut dkv, &linear_bwd(p, g, at.v, kv_src, &dv, kv_rows));
        let dmem = if memory.is_some() {
            Some(dkv)
        } else {
            add_into(&mut dh, &dkv);
            None
        };
        let mut dx = norm_bwd(p, g, norm, &sub.norm, &dh, d);
        add_into(&mut dx, dx_out);
        (dx, dmem)
    }

    fn ffn_sub_fwd(&self, x: &[S], norm: NormAt, at: FfnAt, drop: &mut Dropout<'_, ChaCha8Rng>) -> (Vec<S>, FfnSub<S>) {
        let (d, p) = (self.config.d_model, &self.params[..]);
        let rows = x.len() / d;
        let (h, norm_cache) = norm_fwd(p, norm, x, d);
        let z = linear_fwd(p, at.up, &h, rows);
        let mut u: Vec<S> = z.iter().map(|&v| v.max(S::zero())).collect();
        let hidden_mask = drop.mask(u.len());
        apply_mask(&mut u, hidden_mask.as_ref());
        let mut f = linear_fwd(p, at.down, &u, rows);
        let resid = drop.mask(f.len());
        apply_mask(&mut f, resid.as_ref());
        add_into(&mut f, x);
        (
            f,
            FfnSub {
                norm: norm_cache,
                h,
                z,
                hidden_mask,
                u,
                resid,
            },
        )
    }

    fn ffn_sub_bwd(&self, g: &mut [S], sub: &FfnSub<S>, norm: NormAt, at: FfnAt, dx_out: &[S]) -> Vec<S> {
        let (d, p) = (self.config.d_model, &self.params[..]);
        let rows = dx_out.len() / d;
        let mut df = dx_out.to_vec();
        apply_mask(&mut df, sub.resid.as_ref());
        let mut du = linear_bwd(p, g, at.down, &sub.u, &df, rows);
        apply_mask(&mut du, sub.hidden_mask.as_ref());
        for (a, &z) in du.iter_mut().zip(&sub.z) {
            if z <= S::zero() {
                *a = S::zero();
            }
        }
        let dh = linear_bwd(p, g, at.up, &sub.h, &du, rows);
        let mut dx = norm_bwd(p, g, norm, &sub.norm, &dh, d);
        add_into(&mut dx, dx_out);
        dx
    }

    /// Softmax weights over encoder representations for decoder layer `j`.
    pub(crate) fn mix_weights(&self, j: usize) -> Option<Vec<S>> {
        let off = self.layout.at.mix?;
        let n = self.config.encoder_layers + 1;
        let mut w = self.params[off + j * n..off + (j + 1) * n].to_vec();
        softmax_in_place(&mut w);
        Some(w)
    }

    pub(crate) fn encode_packed(
        &self,
        tokens: &[u32],
        pos: &[usize],
        segs: &[Segment],
        drop: &mut Dropout<'_, ChaCha8Rng>,
    ) -> EncoderOut<S> {
        let at = &self.layout.at;
        let d = self.config.d_model;
        let (x0, embed) = self.embed_fwd(at.src_embed, tokens, pos, drop);
        let mut reps = vec![x0];
        let mut layers = Vec::with_capacity(at.enc.len());
        for l in &at.enc {
            let x = reps.last().expect("embedding output");
            let (x, a) = self.attn_sub_fwd(x, None, l.ln1, l.attn, segs, false, drop);
            let (x, f) = self.ffn_sub_fwd(&x, l.ln2, l.ffn, drop);
            layers.push((a, f));
            reps.push(x);
        }
        let p = &self.params[..];
        let mut memories = Vec::new();
        let mut mem_norms = Vec::new();
        let mut mix = Vec::new();
        if at.mix.is_some() {
            for j in 0..self.config.decoder_layers {
                let w = self.mix_weights(j).expect("mixing enabled");
                let mut acc: Vec<S> = reps[0].iter().map(|&r| r * w[0]).collect();
                for (rep, &wi) in reps.iter().zip(&w).skip(1) {
                    for (a, &r) in acc.iter_mut().zip(rep) {
                        *a = *a + wi * r;
                    }
                }
                let (m, cache) = norm_fwd(p, at.enc_norm, &acc, d);
                memories.push(m);
                mem_norms.push(cache);
                mix.push(w);
            }
        } else {
            let (m, cache) = norm_fwd(p, at.enc_norm, reps.last().expect("encoder output"), d);
            memories.push(m);
            mem_norms.push(cache);
        }
        EncoderOut {
            reps,
            memories,
            embed,
            layers,
            mem_norms,
            mix,
        }
    }

    fn memory_for<'e>(&self, enc: &'e EncoderOut<S>, j: usize) -> &'e [S] {
        &enc.memories[if self.layout.at.mix.is_some() { j } else { 0 }]
    }

    /// Returns label-smoothed loss statistics, accumulating the gradient of
    /// the mean per-token loss into `grad` when given.
    pub(crate) fn run(
        &self,
        batch: &[Pair],
        rng: Option<&mut ChaCha8Rng>,
        grad: Option<&mut [S]>,
    ) -> Result<LossStats> {
        let c = &self.config;
        let at = &self.layout.at;
        let d = c.d_model;
        let vsize = c.vocab_size;
        let packed = Packed::new(batch, vsize)?;
        let mut drop = Dropout { rng, rate: c.dropout };

        let enc = self.encode_packed(&packed.src, &packed.src_pos, &packed.enc_segs, &mut drop);
        let (mut y, dec_embed) = self.embed_fwd(at.tgt_embed, &packed.dec, &packed.dec_pos, &mut drop);
        let mut dec_caches = Vec::with_capacity(at.dec.len());
        for (j, l) in at.dec.iter().enumerate() {
            let (y1, s) = self.attn_sub_fwd(&y, None, l.ln1, l.self_attn, &packed.dec_segs, true, &mut drop);
            let mem = self.memory_for(&enc, j);
            let (y2, x) = self.attn_sub_fwd(&y1, Some(mem), l.ln2, l.cross, &packed.cross_segs, false, &mut drop);
            let (y3, f) = self.ffn_sub_fwd(&y2, l.ln3, l.ffn, &mut drop);
            dec_caches.push((s, x, f));
            y = y3;
        }
        let p = &self.params[..];
        let (h, final_norm) = norm_fwd(p, at.dec_norm, &y, d);
        let rows = packed.labels.len();
        let mut logits = vec![S::zero(); rows * vsize];
        matmul_bt(
            rows,
            d,
            vsize,
            &h,
            &p[at.out_proj..at.out_proj + vsize * d],
            &mut logits,
            false,
        );

        // Logits become dL/dlogits in place.
        let eps = c.label_smoothing;
        let mut stats = LossStats {
            tokens: rows,
            ..LossStats::default()
        };
        let inv_rows = S::from_f64(1.0 / rows as f64);
        let uniform = S::from_f64(eps / vsize as f64);
        let peak = S::from_f64(1.0 - eps);
        for (row, &label) in logits.chunks_exact_mut(vsize).zip(&packed.labels) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max.to_f64() + row.iter().map(|&v| (v - max).to_f64().exp()).sum::<f64>().ln();
            let nll = lse - row[label as usize].to_f64();
            let mean_logp = row.iter().map(|&v| v.to_f64()).sum::<f64>() / vsize as f64 - lse;
            stats.nll_sum += nll;
            stats.loss_sum += (1.0 - eps) * nll - eps * mean_logp;
            let lse = S::from_f64(lse);
            for v in row.iter_mut() {
                *v = ((*v - lse).exp() - uniform) * inv_rows;
            }
            row[label as usize] = row[label as usize] - peak * inv_rows;
        }
        if !stats.loss_sum.is_finite() {
            return Ok(stats);
        }
        let Some(g) = grad else {
            return Ok(stats);
        };

        let dlogits = logits;
        matmul_at(
            vsize,
            rows,
            d,
            &dlogits,
            &h,
            &mut g[at.out_proj..at.out_proj + vsize * d],
            true,
        );
        let mut dh = vec![S::zero(); rows * d];
        matmul(
            rows,
            vsize,
            d,
            &dlogits,
            &p[at.out_proj..at.out_proj + vsize * d],
            &mut dh,
            false,
        );
        std::mem::drop(dlogits);
        let mut dy = norm_bwd(p, g, at.dec_norm, &final_norm, &dh, d);

        let mut dmem: Vec<Vec<S>> = enc.memories.iter().map(|m| vec![S::zero(); m.len()]).collect();
        for (j, l) in at.dec.iter().enumerate().rev() {
            let (s, x, f) = &dec_caches[j];
            let dy2 = self.ffn_sub_bwd(g, f, l.ln3, l.ffn, &dy);
            let mem = self.memory_for(&enc, j);
            let (dy1, dm) = self.attn_sub_bwd(g, x, Some(mem), l.ln2, l.cross, &packed.cross_segs, &dy2);
            let slot = if at.mix.is_some() { j } else { 0 };
            add_into(&mut dmem[slot], &dm.expect("cross-attention memory gradient"));
            let (dy0, _) = self.attn_sub_bwd(g, s, None, l.ln1, l.self_attn, &packed.dec_segs, &dy1);
            dy = dy0;
        }
        self.embed_bwd(g, at.tgt_embed, &packed.dec, &dec_embed, dy);

        let le = c.encoder_layers;
        let mut drep: Vec<Vec<S>> = enc.reps.iter().map(|r| vec![S::zero(); r.len()]).collect();
        if let Some(mix_off) = at.mix {
            for (j, dm) in dmem.iter().enumerate() {
                let ds = norm_bwd(p, g, at.enc_norm, &enc.mem_norms[j], dm, d);
                let w = &enc.mix[j];
                let dw: Vec<S> = enc
                    .reps
                    .iter()
                    .map(|r| r.iter().zip(&ds).map(|(&a, &b)| a * b).sum())
                    .collect();
                let dot: S = w.iter().zip(&dw).map(|(&a, &b)| a * b).sum();
                for i in 0..=le {
                    for (a, &b) in drep[i].iter_mut().zip(&ds) {
                        *a = *a + w[i] * b;
                    }
                    let gi = mix_off + j * (le + 1) + i;
                    g[gi] = g[gi] + w[i] * (dw[i] - dot);
                }
            }
        } else {
            drep[le] = norm_bwd(p, g, at.enc_norm, &enc.mem_norms[0], &dmem[0], d);
        }
        let mut dx = std::mem::take(&mut drep[le]);
        for (i, l) in at.enc.iter().enumerate().rev() {
            let (a, f) = &enc.layers[i];
            let dmid = self.ffn_sub_bwd(g, f, l.ln2, l.ffn, &dx);
            let (din, _) = self.attn_sub_bwd(g, a, None, l.ln1, l.attn, &packed.enc_segs, &dmid);
            dx = din;
            add_into(&mut dx, &drep[i]);
        }
        self.embed_bwd(g, at.src_embed, &packed.src, &enc.embed, dx);
        Ok(stats)
    }

    /// Teacher-forced logits, `Σ(|y|+1) × vocab_size`, without dropout.
    pub fn logits(&self, batch: &[Pair]) -> Result<Vec<S>> {
        let c = &self.config;
        let at = &self.layout.at;
        let packed = Packed::new(batch, c.vocab_size)?;
        let mut drop = Dropout::<ChaCha8Rng> { rng: None, rate: 0.0 };
        let enc = self.encode_packed(&packed.src, &packed.src_pos, &packed.enc_segs, &mut drop);
        let (mut y, _) = self.embed_fwd(at.tgt_embed, &packed.dec, &packed.dec_pos, &mut drop);
        for (j, l) in at.dec.iter().enumerate() {
            let (y1, _) = self.attn_sub_fwd(&y, None, l.ln1, l.self_attn, &packed.dec_segs, true, &mut drop);
            let (y2, _) = self.attn_sub_fwd(
                &y1,
                Some(self.memory_for(&enc, j)),
                l.ln2,
                l.cross,
                &packed.cross_segs,
                false,
                &mut drop,
            );
            y = self.ffn_sub_fwd(&y2, l.ln3, l.ffn, &mut drop).0;
        }
        let p = &self.params[..];
        let (h, _) = norm_fwd(p, at.dec_norm, &y, c.d_model);
        let rows = packed.labels.len();
        let mut logits = vec![S::zero(); rows * c.vocab_size];
        matmul_bt(
            rows,
            c.d_model,
            c.vocab_size,
            &h,
            &p[at.out_proj..at.out_proj + c.vocab_size * c.d_model],
            &mut logits,
            false,
        );
        Ok(logits)
    }
}
