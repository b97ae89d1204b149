//! Autoregressive decoding with cached keys and values.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::*;
use super::scalar::{matmul_bt, Scalar};
use super::Model;
use crate::error::{Error, Result};
use crate::subword::{BOS_ID, EOS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeOptions {
    /// 1 decodes greedily.
    pub beam: usize,
    /// Output budget: `max_len_ratio * source_len + max_len_extra` tokens.
    pub max_len_ratio: f64,
    pub max_len_extra: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam: 1,
            max_len_ratio: 2.0,
            max_len_extra: 10,
        }
    }
}

impl DecodeOptions {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn beam(width: usize) -> Self {
        Self {
            beam: width,
            ..Self::default()
        }
    }

    fn max_len(&self, src_len: usize) -> usize {
        (self.max_len_ratio * src_len as f64) as usize + self.max_len_extra
    }
}

/// Per-source cross-attention keys and values, one pair per decoder layer.
struct SourceState<S> {
    cross: Vec<(Vec<S>, Vec<S>)>,
}

#[derive(Clone)]
struct Hyp<S> {
    src: usize,
    tokens: Vec<u32>,
    score: f64,
    keys: Vec<Vec<S>>,
    values: Vec<Vec<S>>,
}

impl<S: Scalar> Model<S> {
    fn check_sources(&self, sources: &[Vec<u32>]) -> Result<()> {
        for s in sources {
            match s.first() {
                Some(&t) if self.config.is_tag(t) => {}
                _ => return Err(Error::MissingTag),
            }
            if let Some(&id) = s.iter().find(|&&id| id as usize >= self.config.vocab_size) {
                return Err(Error::InvalidTokenId {
                    id,
                    size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn prepare_sources(&self, sources: &[Vec<u32>]) -> Vec<SourceState<S>> {
        let d = self.config.d_model;
        let mut tokens = Vec::new();
        let mut pos = Vec::new();
        let mut segs = Vec::new();
        for s in sources {
            segs.push(Segment {
                q_off: tokens.len(),
                q_len: s.len(),
                k_off: tokens.len(),
                k_len: s.len(),
            });
            tokens.extend_from_slice(s);
            pos.extend(0..s.len());
        }
        let mut drop = Dropout::<ChaCha8Rng> { rng: None, rate: 0.0 };
        let enc = self.encode_packed(&tokens, &pos, &segs, &mut drop);
        let p = &self.params[..];
        let per_layer: Vec<(Vec<S>, Vec<S>)> = self
            .layout
            .at
            .dec
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let mem = &enc.memories[if self.layout.at.mix.is_some() { j } else { 0 }];
                let rows = mem.len() / d;
                (linear_fwd(p, l.cross.k, mem, rows), linear_fwd(p, l.cross.v, mem, rows))
            })
            .collect();
        segs.iter()
            .map(|s| SourceState {
                cross: per_layer
                    .iter()
                    .map(|(k, v)| {
                        let r = s.k_off * d..(s.k_off + s.k_len) * d;
                        (k[r.clone()].to_vec(), v[r].to_vec())
                    })
                    .collect(),
            })
            .collect()
    }

    /// Feeds each hypothesis its last token and returns next-token
    /// log-probabilities, `hyps.len() × vocab_size`.
    fn step(&self, sources: &[SourceState<S>], hyps: &mut [Hyp<S>]) -> Vec<f64> {
        let c = &self.config;
        let at = &self.layout.at;
        let (d, p) = (c.d_model, &self.params[..]);
        let rows = hyps.len();
        let tokens: Vec<u32> = hyps.iter().map(|h| *h.tokens.last().unwrap_or(&BOS_ID)).collect();
        let pos: Vec<usize> = hyps.iter().map(|h| h.tokens.len()).collect();
        let mut drop = Dropout::<ChaCha8Rng> { rng: None, rate: 0.0 };
        let (mut x, _) = self.embed_fwd(at.tgt_embed, &tokens, &pos, &mut drop);
        for (j, l) in at.dec.iter().enumerate() {
            let (h, _) = norm_fwd(p, l.ln1, &x, d);
            let q = linear_fwd(p, l.self_attn.q, &h, rows);
            let k = linear_fwd(p, l.self_attn.k, &h, rows);
            let v = linear_fwd(p, l.self_attn.v, &h, rows);
            let mut ctx = vec![S::zero(); rows * d];
            for (r, hyp) in hyps.iter_mut().enumerate() {
                hyp.keys[j].extend_from_slice(&k[r * d..(r + 1) * d]);
                hyp.values[j].extend_from_slice(&v[r * d..(r + 1) * d]);
                let t = hyp.keys[j].len() / d;
                let seg = [Segment {
                    q_off: 0,
                    q_len: 1,
                    k_off: 0,
                    k_len: t,
                }];
                let (o, _) = attention_fwd(
                    &q[r * d..(r + 1) * d],
                    &hyp.keys[j],
                    &hyp.values[j],
                    d,
                    c.heads,
                    &seg,
                    false,
                    &mut drop,
                );
                ctx[r * d..(r + 1) * d].copy_from_slice(&o);
            }
            let a = linear_fwd(p, l.self_attn.o, &ctx, rows);
            add_into(&mut x, &a);

            let (h, _) = norm_fwd(p, l.ln2, &x, d);
            let q = linear_fwd(p, l.cross.q, &h, rows);
            for (r, hyp) in hyps.iter().enumerate() {
                let (ck, cv) = &sources[hyp.src].cross[j];
                let seg = [Segment {
                    q_off: 0,
                    q_len: 1,
                    k_off: 0,
                    k_len: ck.len() / d,
                }];
                let (o, _) = attention_fwd(&q[r * d..(r + 1) * d], ck, cv, d, c.heads, &seg, false, &mut drop);
                ctx[r * d..(r + 1) * d].copy_from_slice(&o);
            }
            let a = linear_fwd(p, l.cross.o, &ctx, rows);
            add_into(&mut x, &a);

            let (h, _) = norm_fwd(p, l.ln3, &x, d);
            let z = linear_fwd(p, l.ffn.up, &h, rows);
            let u: Vec<S> = z.iter().map(|&v| v.max(S::zero())).collect();
            let f = linear_fwd(p, l.ffn.down, &u, rows);
            add_into(&mut x, &f);
        }
        let (h, _) = norm_fwd(p, at.dec_norm, &x, d);
        let vsize = c.vocab_size;
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
        let mut out = Vec::with_capacity(logits.len());
        for row in logits.chunks_exact(vsize) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max).to_f64();
            let lse = max + row.iter().map(|&v| (v.to_f64() - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|&v| v.to_f64() - lse));
        }
        out
    }

    fn new_hyp(&self, src: usize) -> Hyp<S> {
        let n = self.config.decoder_layers;
        Hyp {
            src,
            tokens: Vec::new(),
            score: 0.0,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
        }
    }

    /// Translates tagged sources. Outputs end with EOS when the model
    /// produced one within the length budget.
    pub fn translate(&self, sources: &[Vec<u32>], opts: &DecodeOptions) -> Result<Vec<Vec<u32>>> {
        if opts.beam == 0 {
            return Err(Error::InvalidConfig("beam width must be positive".into()));
        }
        self.check_sources(sources)?;
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let states = self.prepare_sources(sources);
        if opts.beam == 1 {
            self.greedy(sources, &states, opts)
        } else {
            self.beam_search(sources, &states, opts)
        }
    }

    fn greedy(&self, sources: &[Vec<u32>], states: &[SourceState<S>], opts: &DecodeOptions) -> Result<Vec<Vec<u32>>> {
        let v = self.config.vocab_size;
        let mut out: Vec<Vec<u32>> = vec![Vec::new(); sources.len()];
        let mut active: Vec<Hyp<S>> = (0..sources.len()).map(|i| self.new_hyp(i)).collect();
        active.retain(|h| opts.max_len(sources[h.src].len()) > 0);
        while !active.is_empty() {
            let logp = self.step(states, &mut active);
            let mut next = Vec::with_capacity(active.len());
            for (r, mut hyp) in active.into_iter().enumerate() {
                let row = &logp[r * v..(r + 1) * v];
                let best = argmax(row);
                hyp.tokens.push(best as u32);
                if best as u32 == EOS_ID || hyp.tokens.len() >= opts.max_len(sources[hyp.src].len()) {
                    out[hyp.src] = hyp.tokens;
                } else {
                    next.push(hyp);
                }
            }
            active = next;
        }
        Ok(out)
    }

    fn beam_search(
        &self,
        sources: &[Vec<u32>],
        states: &[SourceState<S>],
        opts: &DecodeOptions,
    ) -> Result<Vec<Vec<u32>>> {
        let v = self.config.vocab_size;
        let k = opts.beam;
        let mut finished: Vec<Vec<(Vec<u32>, f64)>> = vec![Vec::new(); sources.len()];
        let mut active: Vec<Hyp<S>> = (0..sources.len())
            .filter(|&i| opts.max_len(sources[i].len()) > 0)
            .map(|i| self.new_hyp(i))
            .collect();
        while !active.is_empty() {
            let logp = self.step(states, &mut active);
            let mut next = Vec::new();
            let mut start = 0;
            while start < active.len() {
                let src = active[start].src;
                let end = start + active[start..].iter().take_while(|h| h.src == src).count();
                let mut cands: Vec<(f64, usize, u32)> = Vec::new();
                for r in start..end {
                    let row = &logp[r * v..(r + 1) * v];
                    for t in top_k(row, 2 * k) {
                        cands.push((active[r].score + row[t], r, t as u32));
                    }
                }
                cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let max_len = opts.max_len(sources[src].len());
                let mut kept = 0;
                for (rank, &(score, r, t)) in cands.iter().enumerate() {
                    if finished[src].len() >= k || (kept >= k && rank >= k) {
                        break;
                    }
                    let mut tokens = active[r].tokens.clone();
                    tokens.push(t);
                    if t == EOS_ID {
                        if rank < k {
                            finished[src].push((tokens, score));
                        }
                    } else if kept < k {
                        kept += 1;
                        if tokens.len() >= max_len {
                            finished[src].push((tokens, score));
                        } else {
                            let mut h = active[r].clone();
                            h.tokens = tokens;
                            h.score = score;
                            next.push(h);
                        }
                    }
                }
                if finished[src].len() >= k {
                    next.retain(|h: &Hyp<S>| h.src != src);
                }
                start = end;
            }
            active = next;
        }
        Ok(finished
            .into_iter()
            .map(|f| {
                f.into_iter()
                    .fold(None::<(Vec<u32>, f64)>, |best, (toks, score)| {
                        let norm = score / toks.len().max(1) as f64;
                        match best {
                            Some((b, bn)) if bn >= norm => Some((b, bn)),
                            _ => Some((toks, norm)),
                        }
                    })
                    .map(|(t, _)| t)
                    .unwrap_or_default()
            })
            .collect())
    }
}

/// Index of the first maximum.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest entries, ties broken by lower index.
fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let k = k.min(row.len());
    idx.select_nth_unstable_by(k.saturating_sub(1), |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}
