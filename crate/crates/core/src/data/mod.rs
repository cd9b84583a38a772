//! Speaker embedding datasets: synthetic generation, on-disk manifests,
//! N×M batch sampling, modality corruption and verification trial lists.

mod corrupt;
mod manifest;
mod sampler;
mod synth;
mod trials;

use std::collections::HashMap;

pub use corrupt::{apply_corruption, CorruptionMode, CorruptionSpec, Modality};
pub use manifest::{
    load_embedding_manifest, load_embedding_manifest_with_dims, write_embedding_manifest,
    MANIFEST_FILE, MANIFEST_HEADER,
};
pub use sampler::{sample_batch, sample_batch_synchronized, sample_batch_unsynchronized, Sampling};
pub use synth::{generate_synthetic_dataset, SynthConfig};
pub use trials::{generate_trials, read_trial_list, write_trial_list, Trial};

use crate::error::{Error, Result};

pub const AUDIO_DIM: usize = 256;
pub const VISUAL_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingDims {
    pub audio: usize,
    pub visual: usize,
}

impl Default for EmbeddingDims {
    fn default() -> Self {
        Self {
            audio: AUDIO_DIM,
            visual: VISUAL_DIM,
        }
    }
}

/// One utterance's precomputed audio and visual embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub utterances: Vec<Utterance>,
    /// Normalized age in `[0, 1]`; absent for unlabeled speakers.
    pub age: Option<f64>,
}

/// Audio and visual inputs for one batch slot. The two halves may come from
/// different utterances of the same speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePair {
    pub speaker_id: String,
    pub utterance_id_audio: String,
    pub utterance_id_visual: String,
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
}

impl UtterancePair {
    pub fn synchronized(speaker_id: &str, utt: &Utterance) -> Self {
        Self {
            speaker_id: speaker_id.to_owned(),
            utterance_id_audio: utt.id.clone(),
            utterance_id_visual: utt.id.clone(),
            audio: utt.audio.clone(),
            visual: utt.visual.clone(),
        }
    }

    pub fn is_synchronized(&self) -> bool {
        self.utterance_id_audio == self.utterance_id_visual
    }
}

/// `n_speakers × m_utterances` pairs, speaker-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n_speakers: usize,
    pub m_utterances: usize,
    pub pairs: Vec<UtterancePair>,
    pub age_labels: Vec<Option<f64>>,
    /// Per speaker: set when an unsynchronized batch had to fall back to
    /// synchronized pairs because the speaker has a single utterance.
    pub synchronized_fallback: Vec<bool>,
}

impl Batch {
    pub fn speaker_pairs(&self, speaker: usize) -> &[UtterancePair] {
        let m = self.m_utterances;
        &self.pairs[speaker * m..(speaker + 1) * m]
    }

    /// Speaker index of every pair, in batch order.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.n_speakers)
            .flat_map(|s| std::iter::repeat(s).take(self.m_utterances))
            .collect()
    }

    pub fn any_fallback(&self) -> bool {
        self.synchronized_fallback.iter().any(|&f| f)
    }
}

/// Key used by trial lists: `<speaker_id>/<utterance_id>`.
pub fn utterance_key(speaker_id: &str, utterance_id: &str) -> String {
    format!("{speaker_id}/{utterance_id}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: EmbeddingDims,
    pub speakers: Vec<SpeakerRecord>,
}

impl Dataset {
    /// Validates ids, dimensions, finiteness and age ranges.
    pub fn new(dims: EmbeddingDims, speakers: Vec<SpeakerRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &speakers {
            check_id(&s.speaker_id)?;
            if !seen.insert(s.speaker_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate speaker id `{}`",
                    s.speaker_id
                )));
            }
            if s.utterances.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "speaker `{}` has no utterances",
                    s.speaker_id
                )));
            }
            if let Some(age) = s.age {
                if !(0.0..=1.0).contains(&age) {
                    return Err(Error::InvalidInput(format!(
                        "speaker `{}` has age {age} outside [0, 1]",
                        s.speaker_id
                    )));
                }
            }
            let mut utt_ids = std::collections::HashSet::new();
            for u in &s.utterances {
                check_id(&u.id)?;
                if !utt_ids.insert(u.id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "duplicate utterance `{}`",
                        utterance_key(&s.speaker_id, &u.id)
                    )));
                }
                if u.audio.len() != dims.audio || u.visual.len() != dims.visual {
                    return Err(Error::shape(
                        "Dataset::new",
                        format!("{}-d audio / {}-d visual", dims.audio, dims.visual),
                        format!(
                            "{}-d / {}-d for {}",
                            u.audio.len(),
                            u.visual.len(),
                            utterance_key(&s.speaker_id, &u.id)
                        ),
                    ));
                }
                if u.audio.iter().chain(&u.visual).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "non-finite embedding value in {}",
                        utterance_key(&s.speaker_id, &u.id)
                    )));
                }
            }
        }
        Ok(Self { dims, speakers })
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn utterance_count(&self) -> usize {
        self.speakers.iter().map(|s| s.utterances.len()).sum()
    }

    pub fn labeled_speakers(&self) -> usize {
        self.speakers.iter().filter(|s| s.age.is_some()).count()
    }

    /// Splits off the last `count` speakers.
    pub fn split_tail(&self, count: usize) -> Result<(Dataset, Dataset)> {
        if count > self.len() {
            return Err(Error::Config(format!(
                "cannot hold out {count} of {} speakers",
                self.len()
            )));
        }
        let cut = self.len() - count;
        Ok((
            Dataset {
                dims: self.dims,
                speakers: self.speakers[..cut].to_vec(),
            },
            Dataset {
                dims: self.dims,
                speakers: self.speakers[cut..].to_vec(),
            },
        ))
    }

    /// `(speaker index, utterance index)` by trial-list key.
    pub fn index(&self) -> HashMap<String, (usize, usize)> {
        let mut map = HashMap::with_capacity(self.utterance_count());
        for (si, s) in self.speakers.iter().enumerate() {
            for (ui, u) in s.utterances.iter().enumerate() {
                map.insert(utterance_key(&s.speaker_id, &u.id), (si, ui));
            }
        }
        map
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(|c: char| c.is_whitespace() || c == '/' || c == ',') {
        return Err(Error::InvalidInput(format!(
            "identifier `{id}` must be non-empty without whitespace, '/' or ','"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str) -> Utterance {
        Utterance {
            id: id.into(),
            audio: vec![1.0; 2],
            visual: vec![1.0; 3],
        }
    }

    const DIMS: EmbeddingDims = EmbeddingDims {
        audio: 2,
        visual: 3,
    };

    #[test]
    fn dataset_validation() {
        let ok = SpeakerRecord {
            speaker_id: "a".into(),
            utterances: vec![utt("u1"), utt("u2")],
            age: Some(0.4),
        };
        assert!(Dataset::new(DIMS, vec![ok.clone()]).is_ok());
        assert!(Dataset::new(DIMS, vec![ok.clone(), ok.clone()]).is_err());

        let mut bad_age = ok.clone();
        bad_age.age = Some(1.5);
        assert!(Dataset::new(DIMS, vec![bad_age]).is_err());

        let mut dup = ok.clone();
        dup.utterances.push(utt("u1"));
        assert!(Dataset::new(DIMS, vec![dup]).is_err());

        let mut bad_dim = ok.clone();
        bad_dim.utterances[0].audio.push(0.0);
        assert!(Dataset::new(DIMS, vec![bad_dim]).is_err());

        let mut bad_id = ok;
        bad_id.speaker_id = "a b".into();
        assert!(Dataset::new(DIMS, vec![bad_id]).is_err());
    }

    #[test]
    fn split_and_index() {
        let speakers = (0..5)
            .map(|i| SpeakerRecord {
                speaker_id: format!("s{i}"),
                utterances: vec![utt("u1")],
                age: None,
            })
            .collect();
        let ds = Dataset::new(DIMS, speakers).unwrap();
        let (a, b) = ds.split_tail(2).unwrap();
        assert_eq!((a.len(), b.len()), (3, 2));
        assert_eq!(b.speakers[0].speaker_id, "s3");
        assert!(ds.split_tail(6).is_err());
        assert_eq!(ds.index()["s4/u1"], (4, 0));
    }
}
