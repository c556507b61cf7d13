use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declarative description of a detector topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Preset name, informational.
    pub name: String,
    /// Square input side in pixels.
    pub input_size: usize,
    pub classes: usize,
    /// Predictors per grid cell.
    pub boxes: usize,
    /// Output strides, consecutive powers of two, smallest first.
    pub strides: Vec<usize>,
    /// Base channel count.
    pub width: usize,
    /// Bottleneck repeats per aggregation block.
    pub depth: usize,
    pub aux_enabled: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Toy counterpart of the compact variant.
    pub fn preset_c() -> Self {
        Self {
            name: "c".into(),
            input_size: 160,
            classes: 3,
            boxes: 2,
            strides: vec![8, 16, 32],
            width: 16,
            depth: 1,
            aux_enabled: true,
            seed: 0,
        }
    }

    /// Toy counterpart of the extended variant: wider and deeper.
    pub fn preset_e() -> Self {
        Self {
            name: "e".into(),
            width: 24,
            depth: 2,
            ..Self::preset_c()
        }
    }

    /// A very small configuration for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            name: "tiny".into(),
            input_size: 16,
            classes: 2,
            boxes: 2,
            strides: vec![4, 8],
            width: 4,
            depth: 1,
            aux_enabled: true,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "c" => Ok(Self::preset_c()),
            "e" => Ok(Self::preset_e()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected c, e or tiny)"))),
        }
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_aux(mut self, aux: bool) -> Self {
        self.aux_enabled = aux;
        self
    }

    /// Grid side per scale, `input_size / stride`.
    pub fn grid_sizes(&self) -> Vec<usize> {
        self.strides.iter().map(|s| self.input_size / s).collect()
    }

    /// `(stride, S)` per scale.
    pub fn scales(&self) -> Vec<(usize, usize)> {
        self.strides.iter().map(|&s| (s, self.input_size / s)).collect()
    }

    /// Channels of the backbone stage at `stride`.
    pub fn stage_channels(&self, stride: usize) -> usize {
        let k = stride.trailing_zeros() as usize - 1;
        self.width * (1usize << k.min(2))
    }

    pub fn aux_channels(&self) -> usize {
        2 * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes == 0 || self.boxes == 0 {
            return bad("classes and boxes must be positive".into());
        }
        if self.width == 0 || !self.width.is_multiple_of(2) {
            return bad(format!("width must be positive and even, got {}", self.width));
        }
        if self.strides.is_empty() {
            return bad("at least one output stride required".into());
        }
        for (i, &s) in self.strides.iter().enumerate() {
            if !s.is_power_of_two() || s < 4 {
                return bad(format!("stride {s} must be a power of two >= 4"));
            }
            if i > 0 && s != 2 * self.strides[i - 1] {
                return bad(format!("strides {:?} must double consecutively", self.strides));
            }
            if !self.input_size.is_multiple_of(s) {
                return bad(format!("input size {} not divisible by stride {s}", self.input_size));
            }
        }
        if self.input_size == 0 {
            return bad("input size must be positive".into());
        }
        Ok(())
    }
}
