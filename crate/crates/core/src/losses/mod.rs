//! Training objectives: hierarchical semantic cross-entropy, the tracking
//! loss, and the mapping loss (depth L1, L1/SSIM color mix, semantics).

mod photometric;
mod semantic;
pub mod ssim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use photometric::{
    color_loss_prime, color_loss_prime_grad, mapping_loss, mapping_loss_with_grad, silhouette_mask, tracking_loss,
    tracking_loss_with_grad, MappingTerms, Observation, SemanticInputs,
};
pub use semantic::{
    cross_level_loss, inter_level_loss, semantic_loss, HeadGrad, SemanticHead, SemanticTarget, SemanticTerms,
};
pub use ssim::{ssim, ssim_with_grad};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("embedding layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch { expected: usize, found: usize },
    #[error("no pixels pass the silhouette mask")]
    EmptyMask,
    #[error("image {width}x{height} is smaller than the SSIM window")]
    TooSmall { width: usize, height: usize },
    #[error("leaf label {0} is not in the tree")]
    UnknownLeaf(u32),
}

/// Loss weights and the semantic schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Inter-level weight once `iteration ≥ eta`.
    pub omega1: f64,
    /// Cross-level weight once `iteration ≥ eta`.
    pub omega2: f64,
    pub omega1_warmup: f64,
    pub omega2_warmup: f64,
    pub eta: usize,
    /// Tracking depth weight.
    pub w1: f64,
    /// Tracking color weight.
    pub w2: f64,
    /// Mapping depth weight.
    pub w3: f64,
    /// Mapping color weight.
    pub w4: f64,
    /// Mapping semantic weight.
    pub w5: f64,
    /// Silhouette threshold of the loss mask.
    pub delta: f64,
    /// SSIM share inside the mapping color term.
    pub ssim_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            omega1: 1.0,
            omega2: 5.0,
            omega1_warmup: 1.0,
            omega2_warmup: 0.0,
            eta: 15,
            w1: 1.0,
            w2: 0.5,
            w3: 1.0,
            w4: 0.5,
            w5: 0.2,
            delta: 0.99,
            ssim_lambda: 0.2,
        }
    }
}

impl LossWeights {
    /// `(ω1, ω2)` in effect at `iteration`.
    pub fn semantic_weights(&self, iteration: usize) -> (f64, f64) {
        if iteration < self.eta {
            (self.omega1_warmup, self.omega2_warmup)
        } else {
            (self.omega1, self.omega2)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("omega1_warmup", self.omega1_warmup),
            ("omega2_warmup", self.omega2_warmup),
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("w4", self.w4),
            ("w5", self.w5),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a finite value ≥ 0, got {v}"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(0.0..=1.0).contains(&self.ssim_lambda) {
            return Err(format!("ssim_lambda must lie in [0, 1], got {}", self.ssim_lambda));
        }
        Ok(())
    }
}
