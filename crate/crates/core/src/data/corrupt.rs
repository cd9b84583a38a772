use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::UtterancePair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "visual" => Ok(Modality::Visual),
            other => Err(Error::Config(format!(
                "unknown modality `{other}` (expected audio or visual)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionMode {
    Clean,
    /// Embedding replaced by the zero vector.
    Missing,
    /// Additive white Gaussian noise with this standard deviation.
    Awgn {
        sigma: f64,
    },
}

impl CorruptionMode {
    pub fn name(&self) -> &'static str {
        match self {
            CorruptionMode::Clean => "clean",
            CorruptionMode::Missing => "missing",
            CorruptionMode::Awgn { .. } => "awgn",
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            CorruptionMode::Awgn { sigma } => *sigma,
            _ => 0.0,
        }
    }

    /// Parses `clean`, `missing` or `awgn` (the latter needs `sigma`).
    pub fn parse(mode: &str, sigma: Option<f64>) -> Result<Self> {
        match (mode, sigma) {
            ("clean", _) => Ok(CorruptionMode::Clean),
            ("missing", _) => Ok(CorruptionMode::Missing),
            ("awgn", Some(sigma)) if sigma >= 0.0 && sigma.is_finite() => {
                Ok(CorruptionMode::Awgn { sigma })
            }
            ("awgn", Some(sigma)) => Err(Error::Config(format!(
                "awgn sigma must be finite and >= 0, got {sigma}"
            ))),
            ("awgn", None) => Err(Error::Config("awgn corruption needs a sigma".into())),
            (other, _) => Err(Error::Config(format!(
                "unknown corruption mode `{other}` (expected clean, missing or awgn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub modality: Modality,
    pub mode: CorruptionMode,
}

impl CorruptionSpec {
    pub fn new(modality: Modality, mode: CorruptionMode) -> Self {
        Self { modality, mode }
    }

    pub fn apply_to<R: Rng + ?Sized>(&self, values: &mut [f64], rng: &mut R) {
        match self.mode {
            CorruptionMode::Clean => {}
            CorruptionMode::Missing => values.fill(0.0),
            CorruptionMode::Awgn { sigma } => {
                if sigma == 0.0 {
                    return;
                }
                let noise = Normal::new(0.0, sigma).expect("sigma validated non-negative");
                for v in values.iter_mut() {
                    *v += noise.sample(rng);
                }
            }
        }
    }
}

/// Corrupts the targeted modality; the other embedding is left untouched.
pub fn apply_corruption<R: Rng + ?Sized>(
    pair: &UtterancePair,
    spec: &CorruptionSpec,
    rng: &mut R,
) -> UtterancePair {
    let mut out = pair.clone();
    let target = match spec.modality {
        Modality::Audio => &mut out.audio,
        Modality::Visual => &mut out.visual,
    };
    spec.apply_to(target, rng);
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn pair() -> UtterancePair {
        UtterancePair {
            speaker_id: "s".into(),
            utterance_id_audio: "a".into(),
            utterance_id_visual: "b".into(),
            audio: vec![0.1, -0.2, 0.3],
            visual: vec![0.7, 0.8],
        }
    }

    #[test]
    fn clean_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = CorruptionSpec::new(Modality::Audio, CorruptionMode::Clean);
        assert_eq!(apply_corruption(&pair(), &spec, &mut rng), pair());
    }

    #[test]
    fn missing_zeroes_target_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = CorruptionSpec::new(Modality::Audio, CorruptionMode::Missing);
        let out = apply_corruption(&pair(), &spec, &mut rng);
        assert_eq!(out.audio, vec![0.0; 3]);
        assert_eq!(out.visual, pair().visual);
    }

    #[test]
    fn awgn_zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = CorruptionSpec::new(Modality::Visual, CorruptionMode::Awgn { sigma: 0.0 });
        assert_eq!(apply_corruption(&pair(), &spec, &mut rng), pair());
    }

    #[test]
    fn awgn_perturbs_target_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = CorruptionSpec::new(Modality::Visual, CorruptionMode::Awgn { sigma: 0.5 });
        let out = apply_corruption(&pair(), &spec, &mut rng);
        assert_ne!(out.visual, pair().visual);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out.audio), bits(&pair().audio));
    }

    #[test]
    fn awgn_noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = CorruptionSpec::new(Modality::Audio, CorruptionMode::Awgn { sigma: 2.0 });
        let mut v = vec![0.0; 200_000];
        spec.apply_to(&mut v, &mut rng);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 4.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn parse_modes() {
        assert_eq!(
            CorruptionMode::parse("clean", None).unwrap(),
            CorruptionMode::Clean
        );
        assert_eq!(
            CorruptionMode::parse("awgn", Some(0.3)).unwrap(),
            CorruptionMode::Awgn { sigma: 0.3 }
        );
        assert!(CorruptionMode::parse("awgn", None).is_err());
        assert!(CorruptionMode::parse("awgn", Some(-1.0)).is_err());
        assert!(CorruptionMode::parse("blur", None).is_err());
        assert_eq!("visual".parse::<Modality>().unwrap(), Modality::Visual);
    }
}
