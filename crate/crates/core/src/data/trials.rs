//! Verification trial lists: whitespace-separated `label enroll test` lines,
//! `label` being 1 for same-speaker (target) and 0 for different-speaker.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::{utterance_key, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

pub fn read_trial_list(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trial_list(&text).map_err(|(line, message)| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub(crate) fn parse_trial_list(text: &str) -> std::result::Result<Vec<Trial>, (u64, String)> {
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[..] {
            [] => continue,
            [label, enroll, test] => {
                let target = match label {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err((
                            line_no,
                            format!("trial label must be 0 or 1, got `{other}`"),
                        ))
                    }
                };
                trials.push(Trial {
                    target,
                    enroll: enroll.to_owned(),
                    test: test.to_owned(),
                });
            }
            _ => {
                return Err((
                    line_no,
                    format!("expected `label enroll test`, got {} fields", fields.len()),
                ))
            }
        }
    }
    Ok(trials)
}

pub fn write_trial_list(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in trials {
        out.push_str(if t.target { "1 " } else { "0 " });
        out.push_str(&t.enroll);
        out.push(' ');
        out.push_str(&t.test);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Balanced trials: for every speaker with at least two utterances,
/// `per_speaker` target pairs (distinct utterances) and as many nontarget
/// pairs against random utterances of other speakers.
pub fn generate_trials<R: Rng + ?Sized>(
    dataset: &Dataset,
    per_speaker: usize,
    rng: &mut R,
) -> Result<Vec<Trial>> {
    if dataset.len() < 2 {
        return Err(Error::InvalidInput(
            "trial generation needs at least 2 speakers".into(),
        ));
    }
    let mut trials = Vec::with_capacity(2 * per_speaker * dataset.len());
    for (si, s) in dataset.speakers.iter().enumerate() {
        let count = s.utterances.len();
        if count < 2 {
            continue;
        }
        for _ in 0..per_speaker {
            let a = rng.gen_range(0..count);
            let mut b = rng.gen_range(0..count - 1);
            if b >= a {
                b += 1;
            }
            trials.push(Trial {
                target: true,
                enroll: utterance_key(&s.speaker_id, &s.utterances[a].id),
                test: utterance_key(&s.speaker_id, &s.utterances[b].id),
            });

            let e = rng.gen_range(0..count);
            let mut other = rng.gen_range(0..dataset.len() - 1);
            if other >= si {
                other += 1;
            }
            let o = &dataset.speakers[other];
            let t = rng.gen_range(0..o.utterances.len());
            trials.push(Trial {
                target: false,
                enroll: utterance_key(&s.speaker_id, &s.utterances[e].id),
                test: utterance_key(&o.speaker_id, &o.utterances[t].id),
            });
        }
    }
    if trials.is_empty() {
        return Err(Error::InvalidInput(
            "no speaker has two utterances to form target trials".into(),
        ));
    }
    Ok(trials)
}
