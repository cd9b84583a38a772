use rand::seq::index;
use rand::Rng;

use super::{Batch, Dataset, SpeakerRecord, UtterancePair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sampling {
    /// Audio and visual halves drawn from different utterances of the speaker.
    Unsynchronized,
    /// Both halves from the same utterance.
    Synchronized,
}

impl Sampling {
    pub fn as_str(self) -> &'static str {
        match self {
            Sampling::Unsynchronized => "unsync",
            Sampling::Synchronized => "sync",
        }
    }
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsync" | "unsynchronized" => Ok(Sampling::Unsynchronized),
            "sync" | "synchronized" => Ok(Sampling::Synchronized),
            other => Err(Error::Config(format!(
                "unknown sampling `{other}` (expected unsync or sync)"
            ))),
        }
    }
}

/// `m` utterance indices out of `count`: distinct when `count >= m`,
/// otherwise every index once and the remainder drawn uniformly.
fn utterance_slots<R: Rng + ?Sized>(count: usize, m: usize, rng: &mut R) -> Vec<usize> {
    if count >= m {
        index::sample(rng, count, m).into_vec()
    } else {
        let mut slots = index::sample(rng, count, count).into_vec();
        slots.extend((count..m).map(|_| rng.gen_range(0..count)));
        slots
    }
}

fn speaker_pairs<R: Rng + ?Sized>(
    speaker: &SpeakerRecord,
    m: usize,
    sampling: Sampling,
    rng: &mut R,
) -> (Vec<UtterancePair>, bool) {
    let count = speaker.utterances.len();
    let fallback = sampling == Sampling::Unsynchronized && count < 2;
    let pairs = utterance_slots(count, m, rng)
        .into_iter()
        .map(|a| {
            let v = match sampling {
                Sampling::Unsynchronized if count >= 2 => {
                    let r = rng.gen_range(0..count - 1);
                    if r >= a {
                        r + 1
                    } else {
                        r
                    }
                }
                _ => a,
            };
            let (ua, uv) = (&speaker.utterances[a], &speaker.utterances[v]);
            UtterancePair {
                speaker_id: speaker.speaker_id.clone(),
                utterance_id_audio: ua.id.clone(),
                utterance_id_visual: uv.id.clone(),
                audio: ua.audio.clone(),
                visual: uv.visual.clone(),
            }
        })
        .collect();
    (pairs, fallback)
}

/// Draws `n` distinct speakers and `m` pairs per speaker.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    n: usize,
    m: usize,
    sampling: Sampling,
    rng: &mut R,
) -> Result<Batch> {
    if n == 0 || m == 0 {
        return Err(Error::Config(format!(
            "batch needs N >= 1 and M >= 1, got N={n}, M={m}"
        )));
    }
    if dataset.len() < n {
        return Err(Error::InvalidInput(format!(
            "batch needs {n} speakers but the dataset has {}",
            dataset.len()
        )));
    }
    let chosen = index::sample(rng, dataset.len(), n).into_vec();
    let mut batch = Batch {
        n_speakers: n,
        m_utterances: m,
        pairs: Vec::with_capacity(n * m),
        age_labels: Vec::with_capacity(n),
        synchronized_fallback: Vec::with_capacity(n),
    };
    for si in chosen {
        let speaker = &dataset.speakers[si];
        let (pairs, fallback) = speaker_pairs(speaker, m, sampling, rng);
        batch.pairs.extend(pairs);
        batch.age_labels.push(speaker.age);
        batch.synchronized_fallback.push(fallback);
    }
    Ok(batch)
}

pub fn sample_batch_unsynchronized<R: Rng + ?Sized>(
    dataset: &Dataset,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Batch> {
    sample_batch(dataset, n, m, Sampling::Unsynchronized, rng)
}

pub fn sample_batch_synchronized<R: Rng + ?Sized>(
    dataset: &Dataset,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Batch> {
    sample_batch(dataset, n, m, Sampling::Synchronized, rng)
}
