//! Pluggable segmentation models.
//!
//! A backend splits inference into an image `encode` and a prompt-conditioned
//! `decode`, so callers can keep features for one ROI and decode repeatedly.

mod oracle;
mod tinyvit;
pub mod weights;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3;
use crate::prompts::PromptSet;
use crate::volume::{IntensityVolume, LabelVolume, Shape, Volume, VolumeMeta};

pub use oracle::{OracleBackend, ORACLE_TAU};
pub use tinyvit::{AttentionStats, TinyVit};

/// Pre-threshold scores at model resolution.
pub type LogitVolume = Volume<f32>;

/// Model input geometry plus the tiny ViT's width and depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_shape: Shape,
    pub patch: Shape,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub seed: u64,
    /// Learned absolute position embedding on image tokens.
    pub pos_embed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_shape: [256, 256, 32],
            patch: [16, 16, 4],
            embed_dim: 64,
            depth: 2,
            heads: 4,
            seed: 0,
            pos_embed: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.input_shape[a] == 0
                || self.patch[a] == 0
                || !self.input_shape[a].is_multiple_of(self.patch[a])
            {
                return Err(Error::InvalidConfig(format!(
                    "input shape {:?} is not divisible by patch {:?}",
                    self.input_shape, self.patch
                )));
            }
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "embed_dim must be even and positive".into(),
            ));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Token grid `input_shape / patch`.
    pub fn token_grid(&self) -> Shape {
        [0, 1, 2].map(|a| self.input_shape[a] / self.patch[a])
    }

    pub fn token_count(&self) -> usize {
        self.token_grid().iter().product()
    }
}

/// Identifies the image region features were computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub volume_id: u64,
    pub roi: Box3,
}

/// Encoder output: a `grid` of tokens with `dim` channels each,
/// stored token-major (`data[t * dim + c]`, tokens x-fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    pub grid: Shape,
    pub dim: usize,
    pub data: Vec<f32>,
    /// Shape of the model-space volume that was encoded.
    pub input_shape: Shape,
    /// Set by the caller that knows which volume/ROI was encoded.
    pub fingerprint: Option<FeatureKey>,
}

impl ImageFeatures {
    pub fn token_count(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn token(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// A promptable 3D segmentation model.
///
/// Implementations are immutable and callable from many threads at once.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Model-space shape this backend requires, if fixed.
    fn required_shape(&self) -> Option<Shape> {
        None
    }

    /// Image encoder. Input is a model-space volume with values in `[0, 1]`.
    fn encode(&self, volume: &IntensityVolume) -> Result<ImageFeatures>;

    /// Prompt encoder plus mask decoder. `prompts` are in model space and
    /// `prompts.prior_mask`, if present, is a model-space mask.
    fn decode(&self, features: &ImageFeatures, prompts: &PromptSet) -> Result<LogitVolume>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn required_shape(&self) -> Option<Shape> {
        (**self).required_shape()
    }

    fn encode(&self, volume: &IntensityVolume) -> Result<ImageFeatures> {
        (**self).encode(volume)
    }

    fn decode(&self, features: &ImageFeatures, prompts: &PromptSet) -> Result<LogitVolume> {
        (**self).decode(features, prompts)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn required_shape(&self) -> Option<Shape> {
        (**self).required_shape()
    }

    fn encode(&self, volume: &IntensityVolume) -> Result<ImageFeatures> {
        (**self).encode(volume)
    }

    fn decode(&self, features: &ImageFeatures, prompts: &PromptSet) -> Result<LogitVolume> {
        (**self).decode(features, prompts)
    }
}

/// Voxelwise `logit > t`.
pub fn threshold(l: &LogitVolume, t: f32) -> LabelVolume {
    l.map(|v| (v > t) as u8)
}

/// Wraps a backend and counts every encode/decode call made through it.
pub struct CountingBackend<B> {
    inner: B,
    encodes: AtomicUsize,
    decodes: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            encodes: AtomicUsize::new(0),
            decodes: AtomicUsize::new(0),
        }
    }

    pub fn encodes(&self) -> usize {
        self.encodes.load(Ordering::SeqCst)
    }

    pub fn decodes(&self) -> usize {
        self.decodes.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.encodes.store(0, Ordering::SeqCst);
        self.decodes.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn required_shape(&self) -> Option<Shape> {
        self.inner.required_shape()
    }

    fn encode(&self, volume: &IntensityVolume) -> Result<ImageFeatures> {
        self.encodes.fetch_add(1, Ordering::SeqCst);
        self.inner.encode(volume)
    }

    fn decode(&self, features: &ImageFeatures, prompts: &PromptSet) -> Result<LogitVolume> {
        self.decodes.fetch_add(1, Ordering::SeqCst);
        self.inner.decode(features, prompts)
    }
}

pub(crate) fn logits_from(shape: Shape, data: Vec<f32>) -> LogitVolume {
    Volume::from_parts_unchecked(VolumeMeta::new(shape), data)
}
