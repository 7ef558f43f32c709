use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{ArdError, Result};

/// Which earlier trajectory states a query block may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskOption {
    /// Current block only (step distillation).
    M1,
    /// Current block and the one consumed just before it.
    M2,
    /// Current block and the initial noise.
    M3,
    /// Block-wise causal: the whole history.
    M4,
}

impl MaskOption {
    pub const ALL: [MaskOption; 4] = [MaskOption::M1, MaskOption::M2, MaskOption::M3, MaskOption::M4];
}

impl FromStr for MaskOption {
    type Err = ArdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(MaskOption::M1),
            "m2" => Ok(MaskOption::M2),
            "m3" => Ok(MaskOption::M3),
            "m4" => Ok(MaskOption::M4),
            _ => Err(ArdError::config("mask", format!("expected m1..m4, got '{s}'"))),
        }
    }
}

impl fmt::Display for MaskOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MaskOption::M1 => "m1",
            MaskOption::M2 => "m2",
            MaskOption::M3 => "m3",
            MaskOption::M4 => "m4",
        };
        f.write_str(s)
    }
}

/// What the network regresses at step `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionTarget {
    /// The next state `x_{τ_{s−1}}`.
    #[serde(rename = "next")]
    NextSample,
    /// The teacher's predicted clean sample at `τ_s`, converted to the next
    /// state with a deterministic DDIM-style update.
    #[serde(rename = "x0")]
    PredictedX0,
}

impl FromStr for PredictionTarget {
    type Err = ArdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "next" => Ok(PredictionTarget::NextSample),
            "x0" => Ok(PredictionTarget::PredictedX0),
            _ => Err(ArdError::config("target", format!("expected next or x0, got '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub layers: usize,
    pub n_history: usize,
    pub d_model: usize,
    pub heads: usize,
    pub patch: usize,
    /// `(C, H, W)`.
    pub image: (usize, usize, usize),
    pub steps: usize,
    pub mask: MaskOption,
    pub target: PredictionTarget,
    pub num_classes: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_mlp_ratio() -> usize {
    4
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            layers: 8,
            n_history: 2,
            d_model: 64,
            heads: 4,
            patch: 2,
            image: (1, 8, 8),
            steps: 4,
            mask: MaskOption::M4,
            target: PredictionTarget::NextSample,
            num_classes: 4,
            mlp_ratio: 4,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.image;
        let bad = |field: &str, reason: String| Err(ArdError::config(format!("student.{field}"), reason));
        if self.layers == 0 {
            return bad("layers", "must be at least 1".into());
        }
        if self.n_history > self.layers {
            return bad("n_history", format!("{} exceeds layers = {}", self.n_history, self.layers));
        }
        if self.steps == 0 {
            return bad("steps", "must be at least 1".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("heads", format!("d_model = {} not divisible by heads = {}", self.d_model, self.heads));
        }
        if c == 0 || h == 0 || w == 0 {
            return bad("image", "extents must be positive".into());
        }
        if self.patch == 0 || h % self.patch != 0 || w % self.patch != 0 {
            return bad("patch", format!("patch {} does not tile a {h}×{w} image", self.patch));
        }
        if self.num_classes == 0 {
            return bad("num_classes", "must be at least 1".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio", "must be at least 1".into());
        }
        Ok(())
    }

    /// Data dimension `C·H·W`.
    pub fn dim(&self) -> usize {
        self.image.0 * self.image.1 * self.image.2
    }

    /// Tokens per trajectory state.
    pub fn tokens(&self) -> usize {
        (self.image.1 / self.patch) * (self.image.2 / self.patch)
    }

    /// Features per patch token.
    pub fn patch_dim(&self) -> usize {
        self.image.0 * self.patch * self.patch
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}
