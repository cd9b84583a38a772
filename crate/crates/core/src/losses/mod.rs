//! Training objectives: the multimodal GE2E loss, the triplet baseline, the
//! auxiliary age loss and their multi-task combination.

pub mod age;
pub mod ge2e;
pub mod triplet;

pub use age::{aux_age_loss, AgeHead, AuxOutput, DEFAULT_AGE_HIDDEN};
pub use ge2e::{
    compute_centroids, ge2e_forward_backward, ge2e_mm_loss, similarity_matrix, Ge2eConfig,
    Ge2eOutput, Ge2eParams, SimilarityMatrix, SIM_W_FLOOR,
};
pub use triplet::{batch_hard_triplet_loss, triplet_term, TripletConfig, TripletGrads};

use crate::error::{Error, Result};

/// Weight of the metric-learning loss in the multi-task objective.
pub const DEFAULT_GAMMA: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtlConfig {
    pub gamma: f64,
}

impl Default for MtlConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl MtlConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1], got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }
}

/// `γ · L_G + (1 − γ) · L_AUX`.
pub fn mtl_loss(l_g: f64, l_aux: f64, cfg: MtlConfig) -> f64 {
    if cfg.gamma == 1.0 {
        return l_g;
    }
    if cfg.gamma == 0.0 {
        return l_aux;
    }
    cfg.gamma * l_g + (1.0 - cfg.gamma) * l_aux
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mtl_boundaries_and_value() {
        assert_eq!(mtl_loss(2.5, 7.0, MtlConfig::new(1.0).unwrap()), 2.5);
        assert_eq!(mtl_loss(2.5, 7.0, MtlConfig::new(0.0).unwrap()), 7.0);
        let v = mtl_loss(2.0, 4.0, MtlConfig::default());
        assert!((v - 3.97).abs() < 1e-12);
        assert!(MtlConfig::new(1.5).is_err());
        assert!(MtlConfig::new(-0.1).is_err());
    }

    #[test]
    fn mtl_is_affine_in_gamma() {
        let f = |g: f64| mtl_loss(1.3, 0.4, MtlConfig::new(g).unwrap());
        for g in [0.1, 0.25, 0.6, 0.9] {
            let interp = (1.0 - g) * f(0.0) + g * f(1.0);
            assert!((f(g) - interp).abs() < 1e-12);
        }
    }
}
