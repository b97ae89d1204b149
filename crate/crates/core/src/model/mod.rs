//! Transformer encoder-decoder with pre-layer normalization, trained with
//! hand-written backpropagation over packed variable-length sequences.

mod checkpoint;
mod config;
mod decode;
mod network;
mod ops;
mod params;
mod scalar;

use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;
pub use decode::DecodeOptions;
pub use network::{LossStats, Pair};
pub use params::{Layout, TensorInfo};
pub use scalar::Scalar;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Model<S: Scalar = f32> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<S>,
}

impl<S: Scalar> Model<S> {
    /// Freshly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = params::initialize(&layout, config.d_model, seed)
            .into_iter()
            .map(S::from_f64)
            .collect();
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<S>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        let t = self.layout.get(name)?;
        Some(&self.params[t.offset..t.offset + t.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [S]> {
        let t = self.layout.get(name)?.clone();
        Some(&mut self.params[t.offset..t.offset + t.len()])
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.dropout = rate;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    /// Same model in another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|&p| T::from_f64(p.to_f64())).collect(),
        }
    }

    /// Loss without dropout or gradients.
    pub fn loss(&self, batch: &[Pair]) -> Result<LossStats> {
        self.run(batch, None, None)
    }

    /// Adds the gradient of the mean per-token loss to `grad`. Dropout is
    /// active when `rng` is given.
    pub fn loss_and_grad(&self, batch: &[Pair], rng: Option<&mut ChaCha8Rng>, grad: &mut [S]) -> Result<LossStats> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries for {} parameters",
                grad.len(),
                self.params.len()
            )));
        }
        self.run(batch, rng, Some(grad))
    }
}

#[cfg(test)]
mod tests;
