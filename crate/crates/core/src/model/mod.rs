//! Miniature encoder-decoder transformer with hand-written reverse mode.
//!
//! Pre-norm blocks, sinusoidal positions, ReLU feed-forward layers and a
//! single embedding table shared by the encoder input, the decoder input and
//! the output projection. All parameters live in one flat buffer described
//! by a [`Layout`], which keeps the optimizer, checkpoint averaging and
//! finite-difference checks independent of the network structure.

mod attention;
mod batch;
pub mod checkpoint;
mod config;
mod layout;
mod loss;
mod real;
mod transformer;

pub use attention::{extract_alignment_attention, AttentionRecord};
pub use batch::{Batch, EncodedPair};
pub use config::ModelConfig;
pub use layout::{Layout, Span};
pub use loss::{label_smoothed_loss, LossValue};
pub use real::{gemm, Real};
pub use transformer::{backward, forward, DecoderSession, ForwardOutput, Mode};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Every trainable tensor of the model, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    /// Weights uniform in ±1/sqrt(d_model) from `config.init_seed`; biases
    /// and norm offsets zero, norm scales one.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut data = vec![T::zero(); layout.total];
        let bound = 1.0 / (config.d_model as f64).sqrt();
        let mut rng = SplitMix64::from_labels(config.init_seed, &[crate::rng::label("init")]);
        for (name, span) in layout.entries() {
            let slice = &mut data[span.range()];
            if name.ends_with(".g") {
                slice.fill(T::one());
            } else if name.ends_with(".b") {
                // zero
            } else {
                for v in slice.iter_mut() {
                    *v = T::of((2.0 * rng.next_f64() - 1.0) * bound);
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        Ok(Self {
            config: config.clone(),
            data: vec![T::zero(); layout.total],
            layout,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn tensor(&self, span: Span) -> &[T] {
        &self.data[span.range()]
    }

    pub fn tensor_by_name(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|s| self.tensor(s))
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (name, span) in self.layout.entries() {
            if self.data[span.range()].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    site: format!("{what} tensor {name}"),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Gradients share the parameter layout.
pub type Gradients<T> = ModelParams<T>;
