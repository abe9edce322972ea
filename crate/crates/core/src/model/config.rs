use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Heads attach directly to the iterated features.
    Ssd,
    /// Heads attach to the top-down combined features.
    Fpn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ssd => "ssd",
            Variant::Fpn => "fpn",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssd" => Ok(Variant::Ssd),
            "fpn" => Ok(Variant::Fpn),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

pub const DEFAULT_LEVELS: usize = 6;

/// Declarative architecture description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub width: usize,
    /// Number of inverted-residual blocks inside the shared backbone.
    pub depth: usize,
    pub activation: Activation,
    /// Hidden-width multiplier per block. The first block has no expansion
    /// layer, so its entry must be 1.
    pub expansion: Vec<usize>,
    pub levels: usize,
    pub seed: u64,
    /// Keep separate BN running statistics for every backbone pass.
    pub bn_per_pass: bool,
}

impl ModelConfig {
    /// Frozen defaults. Width 32 uses 8 blocks, wider models 6; the
    /// expansion factors put parameters and multiply-adds of both variants
    /// within the published budgets.
    pub fn preset(variant: Variant, width: usize) -> Self {
        let (depth, expansion) = if width <= 32 {
            (8, vec![1, 1, 1, 1, 2, 2, 2, 2])
        } else {
            (6, vec![1, 1, 1, 1, 2, 2])
        };
        ModelConfig {
            variant,
            width,
            depth,
            activation: Activation::Prelu,
            expansion,
            levels: DEFAULT_LEVELS,
            seed: 0,
            bn_per_pass: false,
        }
    }

    /// Smallest useful model, used for gradient checking.
    pub fn tiny() -> Self {
        ModelConfig {
            variant: Variant::Fpn,
            width: 8,
            depth: 2,
            activation: Activation::Prelu,
            expansion: vec![1, 2],
            levels: 4,
            seed: 0,
            bn_per_pass: false,
        }
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_expansion(mut self, expansion: Vec<usize>) -> Self {
        self.depth = expansion.len();
        self.expansion = expansion;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return bad(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.levels > 24 {
            return bad(format!("levels {} is unreasonably large", self.levels));
        }
        if self.width < 8 {
            return bad(format!("width must be >= 8, got {}", self.width));
        }
        if self.depth < 2 {
            return bad(format!("depth must be >= 2, got {}", self.depth));
        }
        if self.expansion.len() != self.depth {
            return bad(format!("{} expansion factors for depth {}", self.expansion.len(), self.depth));
        }
        if self.expansion.iter().any(|&e| e == 0) {
            return bad("expansion factors must be positive".to_string());
        }
        if self.expansion[0] != 1 {
            return bad("the first block has no expansion layer; its factor must be 1".to_string());
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        1 << (self.levels + 1)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.input_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Indivisible { h, w, multiple: m });
        }
        Ok(())
    }

    /// Strides of the pyramid levels, finest first: 4, 8, ..., 2^(N+1).
    pub fn strides(&self) -> Vec<usize> {
        (1..=self.levels).map(|i| 1 << (i + 1)).collect()
    }

    /// Short name such as `fpn-32-prelu`.
    pub fn name(&self) -> String {
        format!("{}-{}-{}", self.variant, self.width, self.activation)
    }
}
