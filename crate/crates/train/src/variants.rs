//! Loss weights and the additive ablation ladder.

use crate::TrainError;

/// Weights on the four scene-side losses; the action flow-matching loss
/// always has weight 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Local depth anchor.
    pub lambda1: f64,
    /// Global anchor.
    pub lambda2: f64,
    /// Future-scene prediction.
    pub lambda3: f64,
    /// Scene flow matching.
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.04, lambda2: 0.10, lambda3: 0.10, lambda4: 0.01 }
    }
}

impl LossWeights {
    pub fn zeros() -> Self {
        Self { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0 }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// How prior slots are populated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarryMode {
    /// Every trained chunk uses the learned embedding prior.
    EmbedAlways,
    /// Each batch element takes two consecutive chunks: the first trains
    /// with the embedding prior and is also sampled (no gradient) to
    /// produce the detached carried prior for the second.
    CarriedDetachedUnroll,
}

impl CarryMode {
    pub fn name(&self) -> &'static str {
        match self {
            CarryMode::EmbedAlways => "embed-always",
            CarryMode::CarriedDetachedUnroll => "carried-detached-unroll",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s {
            "embed-always" => Ok(CarryMode::EmbedAlways),
            "carried-detached-unroll" => Ok(CarryMode::CarriedDetachedUnroll),
            other => Err(TrainError::Config(format!("unknown carry mode {other}"))),
        }
    }
}

/// The additive ablation ladder. `Prior` reuses the `Geo` checkpoint;
/// the difference is carrying the prior at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    PredRep,
    Geo,
    Prior,
}

impl Variant {
    pub const LADDER: [Variant; 4] = [Variant::Baseline, Variant::PredRep, Variant::Geo, Variant::Prior];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PredRep => "pred_rep",
            Variant::Geo => "geo",
            Variant::Prior => "prior",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "pred_rep" => Ok(Variant::PredRep),
            "geo" => Ok(Variant::Geo),
            "prior" => Ok(Variant::Prior),
            other => Err(TrainError::Config(format!("unknown variant {other}"))),
        }
    }

    pub fn weights(&self) -> LossWeights {
        self.mask_weights(LossWeights::default())
    }

    /// Mask a base weight set down to this rung of the ladder, so a
    /// config override file still shapes the enabled losses.
    pub fn mask_weights(&self, base: LossWeights) -> LossWeights {
        match self {
            Variant::Baseline => LossWeights::zeros(),
            Variant::PredRep => LossWeights { lambda1: 0.0, ..base },
            Variant::Geo | Variant::Prior => base,
        }
    }

    pub fn train_carry_mode(&self) -> CarryMode {
        match self {
            Variant::Baseline => CarryMode::EmbedAlways,
            _ => CarryMode::CarriedDetachedUnroll,
        }
    }

    /// Whether rollouts carry the denoised prior across chunks.
    pub fn eval_carry(&self) -> bool {
        matches!(self, Variant::Prior)
    }

    /// The variant whose training run this one shares.
    pub fn training_alias(&self) -> Variant {
        match self {
            Variant::Prior => Variant::Geo,
            v => *v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_weights_are_additive() {
        assert_eq!(Variant::Baseline.weights(), LossWeights::zeros());
        let pr = Variant::PredRep.weights();
        assert_eq!(pr.lambda1, 0.0);
        assert_eq!(pr.lambda2, 0.10);
        assert_eq!(pr.lambda3, 0.10);
        assert_eq!(pr.lambda4, 0.01);
        assert_eq!(Variant::Geo.weights(), LossWeights::default());
        assert_eq!(Variant::Prior.weights(), Variant::Geo.weights());
        assert_eq!(Variant::Prior.training_alias(), Variant::Geo);
        assert!(Variant::Prior.eval_carry());
        assert!(!Variant::Geo.eval_carry());
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights { lambda1: -0.1, ..Default::default() };
        assert!(w.validate().is_err());
    }
}
