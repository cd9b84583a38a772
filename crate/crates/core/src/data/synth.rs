use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, EmbeddingDims, SpeakerRecord, Utterance};
use crate::error::{Error, Result};
use crate::nn::matrix::{dot, norm};
use crate::nn::sigmoid;

/// Standard deviation of the noise added to the anchor-derived age.
const AGE_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Per-coordinate standard deviation of utterance noise around the speaker anchor.
    pub intra_spread: f64,
    /// Fraction of speakers carrying an age label.
    pub label_coverage: f64,
    pub seed: u64,
    pub dims: EmbeddingDims,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 50,
            utterances_per_speaker: 10,
            intra_spread: 0.05,
            label_coverage: 0.8,
            seed: 0,
            dims: EmbeddingDims::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::Config(format!(
                "n_speakers must be >= 2, got {}",
                self.n_speakers
            )));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::Config(format!(
                "utterances_per_speaker must be >= 2, got {}",
                self.utterances_per_speaker
            )));
        }
        if !(self.intra_spread >= 0.0) || !self.intra_spread.is_finite() {
            return Err(Error::Config(format!(
                "intra_spread must be finite and >= 0, got {}",
                self.intra_spread
            )));
        }
        if !(0.0..=1.0).contains(&self.label_coverage) {
            return Err(Error::Config(format!(
                "label_coverage must lie in [0, 1], got {}",
                self.label_coverage
            )));
        }
        if self.dims.audio == 0 || self.dims.visual == 0 {
            return Err(Error::Config(
                "embedding dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn jitter(anchor: &[f64], spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if spread == 0.0 {
        return anchor.to_vec();
    }
    loop {
        let v: Vec<f64> = anchor
            .iter()
            .map(|a| {
                let z: f64 = StandardNormal.sample(rng);
                a + spread * z
            })
            .collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates speakers with anchors on the unit spheres and unit-norm
/// utterance embeddings scattered around them. Pure in `cfg`.
///
/// Ages are `sigmoid(r · [audio_anchor, visual_anchor]) + noise`, clamped to
/// `[0, 1]`, with `r` a fixed standard-normal projection, so they are
/// predictable from the embeddings.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = cfg.dims;
    let projection: Vec<f64> = (0..dims.audio + dims.visual)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    let n_labeled = (cfg.label_coverage * cfg.n_speakers as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_speakers).collect();
    order.shuffle(&mut rng);
    let mut labeled = vec![false; cfg.n_speakers];
    for &i in &order[..n_labeled] {
        labeled[i] = true;
    }

    let width = cfg.n_speakers.to_string().len().max(4);
    let utt_width = cfg.utterances_per_speaker.to_string().len().max(2);
    let mut speakers = Vec::with_capacity(cfg.n_speakers);
    for (s, &is_labeled) in labeled.iter().enumerate() {
        let audio_anchor = unit_gaussian(dims.audio, &mut rng);
        let visual_anchor = unit_gaussian(dims.visual, &mut rng);
        let age_noise: f64 = StandardNormal.sample(&mut rng);
        let age = is_labeled.then(|| {
            let z = dot(&projection[..dims.audio], &audio_anchor)
                + dot(&projection[dims.audio..], &visual_anchor);
            (sigmoid(z) + AGE_NOISE * age_noise).clamp(0.0, 1.0)
        });
        let utterances = (0..cfg.utterances_per_speaker)
            .map(|u| Utterance {
                id: format!("utt{u:0utt_width$}"),
                audio: jitter(&audio_anchor, cfg.intra_spread, &mut rng),
                visual: jitter(&visual_anchor, cfg.intra_spread, &mut rng),
            })
            .collect();
        speakers.push(SpeakerRecord {
            speaker_id: format!("spk{s:0width$}"),
            utterances,
            age,
        });
    }
    Dataset::new(dims, speakers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_speakers: 6,
            utterances_per_speaker: 3,
            dims: EmbeddingDims {
                audio: 8,
                visual: 12,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_spread_repeats_anchor() {
        let ds = generate_synthetic_dataset(&SynthConfig {
            intra_spread: 0.0,
            ..small()
        })
        .unwrap();
        for s in &ds.speakers {
            let first = &s.utterances[0];
            assert!((norm(&first.audio) - 1.0).abs() < 1e-12);
            for u in &s.utterances[1..] {
                assert_eq!(u.audio, first.audio);
                assert_eq!(u.visual, first.visual);
            }
        }
    }

    #[test]
    fn label_coverage_bounds() {
        let none = generate_synthetic_dataset(&SynthConfig {
            label_coverage: 0.0,
            ..small()
        })
        .unwrap();
        assert_eq!(none.labeled_speakers(), 0);
        let all = generate_synthetic_dataset(&SynthConfig {
            label_coverage: 1.0,
            ..small()
        })
        .unwrap();
        assert_eq!(all.labeled_speakers(), 6);
        assert!(all
            .speakers
            .iter()
            .all(|s| (0.0..=1.0).contains(&s.age.unwrap())));
        let half = generate_synthetic_dataset(&SynthConfig {
            label_coverage: 0.5,
            ..small()
        })
        .unwrap();
        assert_eq!(half.labeled_speakers(), 3);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic_dataset(&small()).unwrap();
        let b = generate_synthetic_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn intra_speaker_cosine_exceeds_inter() {
        let ds = generate_synthetic_dataset(&SynthConfig {
            n_speakers: 50,
            utterances_per_speaker: 10,
            intra_spread: 0.05,
            ..SynthConfig::default()
        })
        .unwrap();
        let all: Vec<(usize, Vec<f64>)> = ds
            .speakers
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                s.utterances.iter().map(move |u| {
                    let mut v = u.audio.clone();
                    v.extend_from_slice(&u.visual);
                    (si, v)
                })
            })
            .collect();
        let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let c = dot(&all[i].1, &all[j].1) / (norm(&all[i].1) * norm(&all[j].1));
                if all[i].0 == all[j].0 {
                    intra += c;
                    n_intra += 1;
                } else {
                    inter += c;
                    n_inter += 1;
                }
            }
        }
        let (intra, inter) = (intra / n_intra as f64, inter / n_inter as f64);
        assert!(intra > inter + 0.3, "intra {intra} inter {inter}");
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(generate_synthetic_dataset(&SynthConfig {
            n_speakers: 1,
            ..small()
        })
        .is_err());
        assert!(generate_synthetic_dataset(&SynthConfig {
            utterances_per_speaker: 1,
            ..small()
        })
        .is_err());
        assert!(generate_synthetic_dataset(&SynthConfig {
            label_coverage: 1.2,
            ..small()
        })
        .is_err());
        assert!(generate_synthetic_dataset(&SynthConfig {
            intra_spread: -0.1,
            ..small()
        })
        .is_err());
    }
}
