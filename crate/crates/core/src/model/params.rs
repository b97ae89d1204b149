use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearAt {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormAt {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnAt {
    pub q: LinearAt,
    pub k: LinearAt,
    pub v: LinearAt,
    pub o: LinearAt,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnAt {
    pub up: LinearAt,
    pub down: LinearAt,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayerAt {
    pub ln1: NormAt,
    pub attn: AttnAt,
    pub ln2: NormAt,
    pub ffn: FfnAt,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayerAt {
    pub ln1: NormAt,
    pub self_attn: AttnAt,
    pub ln2: NormAt,
    pub cross: AttnAt,
    pub ln3: NormAt,
    pub ffn: FfnAt,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    pub src_embed: usize,
    pub tgt_embed: usize,
    pub out_proj: usize,
    pub enc: Vec<EncLayerAt>,
    pub enc_norm: NormAt,
    pub dec: Vec<DecLayerAt>,
    pub dec_norm: NormAt,
    /// `decoder_layers × (encoder_layers + 1)` mixing logits.
    pub mix: Option<usize>,
}

/// Named tensor table for a configuration.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub(crate) at: Offsets,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo { name, shape, offset });
        offset
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> LinearAt {
        LinearAt {
            w: self.push(format!("{name}.weight"), vec![din, dout]),
            b: self.push(format!("{name}.bias"), vec![dout]),
            din,
            dout,
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormAt {
        NormAt {
            g: self.push(format!("{name}.gain"), vec![d]),
            b: self.push(format!("{name}.bias"), vec![d]),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnAt {
        AttnAt {
            q: self.linear(&format!("{name}.query"), d, d),
            k: self.linear(&format!("{name}.key"), d, d),
            v: self.linear(&format!("{name}.value"), d, d),
            o: self.linear(&format!("{name}.output"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, ff: usize) -> FfnAt {
        FfnAt {
            up: self.linear(&format!("{name}.up"), d, ff),
            down: self.linear(&format!("{name}.down"), ff, d),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let (v, d, ff) = (c.vocab_size, c.d_model, c.ff_dim);
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let (src_embed, tgt_embed, out_proj) = if c.shared_embeddings {
            let e = b.push("embedding".into(), vec![v, d]);
            (e, e, e)
        } else {
            (
                b.push("source_embedding".into(), vec![v, d]),
                b.push("target_embedding".into(), vec![v, d]),
                b.push("output_projection".into(), vec![v, d]),
            )
        };
        let enc = (0..c.encoder_layers)
            .map(|i| EncLayerAt {
                ln1: b.norm(&format!("encoder.{i}.attention_norm"), d),
                attn: b.attn(&format!("encoder.{i}.self_attention"), d),
                ln2: b.norm(&format!("encoder.{i}.ffn_norm"), d),
                ffn: b.ffn(&format!("encoder.{i}.ffn"), d, ff),
            })
            .collect();
        let enc_norm = b.norm("encoder.final_norm", d);
        let dec = (0..c.decoder_layers)
            .map(|i| DecLayerAt {
                ln1: b.norm(&format!("decoder.{i}.attention_norm"), d),
                self_attn: b.attn(&format!("decoder.{i}.self_attention"), d),
                ln2: b.norm(&format!("decoder.{i}.cross_norm"), d),
                cross: b.attn(&format!("decoder.{i}.cross_attention"), d),
                ln3: b.norm(&format!("decoder.{i}.ffn_norm"), d),
                ffn: b.ffn(&format!("decoder.{i}.ffn"), d, ff),
            })
            .collect();
        let dec_norm = b.norm("decoder.final_norm", d);
        let mix = c
            .transparent_attention
            .then(|| b.push("transparent.mix".into(), vec![c.decoder_layers, c.encoder_layers + 1]));
        Layout {
            tensors: b.tensors,
            total: b.total,
            at: Offsets {
                src_embed,
                tgt_embed,
                out_proj,
                enc,
                enc_norm,
                dec,
                dec_norm,
                mix,
            },
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Embeddings ~ U with std `d^-1/2`, weight matrices Xavier-uniform, norm
/// gains 1, biases and mixing logits 0.
pub(crate) fn initialize(layout: &Layout, d_model: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0f64; layout.total];
    for t in &layout.tensors {
        let slot = &mut p[t.offset..t.offset + t.len()];
        let name = t.name.as_str();
        if name.ends_with("embedding") || name == "output_projection" {
            let a = 3f64.sqrt() / (d_model as f64).sqrt();
            slot.iter_mut().for_each(|x| *x = rng.gen_range(-a..a));
        } else if name.ends_with(".weight") {
            let a = (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt();
            slot.iter_mut().for_each(|x| *x = rng.gen_range(-a..a));
        } else if name.ends_with(".gain") {
            slot.fill(1.0);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_total_matches_closed_form() {
        for (shared, transparent) in [(true, false), (false, false), (true, true), (false, true)] {
            let c = ModelConfig {
                shared_embeddings: shared,
                transparent_attention: transparent,
                ..ModelConfig::new(97, 2, 24, 40, 3, (3, 2))
            };
            let l = Layout::new(&c);
            assert_eq!(l.total, c.num_params());
            let covered: usize = l.tensors.iter().map(TensorInfo::len).sum();
            assert_eq!(covered, l.total);
        }
    }

    #[test]
    fn tensors_are_contiguous_and_named_uniquely() {
        let l = Layout::new(&ModelConfig::new(50, 1, 8, 16, 2, (1, 1)));
        let mut end = 0;
        let mut names = std::collections::HashSet::new();
        for t in &l.tensors {
            assert_eq!(t.offset, end);
            end += t.len();
            assert!(names.insert(t.name.clone()));
        }
        assert!(l.get("decoder.0.cross_attention.key.weight").is_some());
    }
}
