//! Manifest of precomputed embeddings.
//!
//! `manifest.csv` is UTF-8 CSV with header
//! `speaker_id,utterance_id,audio_path,visual_path,age` and one row per
//! utterance. Blob paths are relative to the manifest's directory; each blob
//! is raw little-endian `f32`, exactly 256 (audio) or 512 (visual) values.
//!
//! `age` is blank for unlabeled speakers. Ages are normalized to `[0, 1]`
//! unless the manifest starts with a directive line
//! `# age_range: <min_years> <max_years>`, in which case they are years and
//! are mapped linearly onto `[0, 1]`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, EmbeddingDims, SpeakerRecord, Utterance};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 5] = [
    "speaker_id",
    "utterance_id",
    "audio_path",
    "visual_path",
    "age",
];
const AGE_RANGE_DIRECTIVE: &str = "# age_range:";

fn manifest_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_age_range(path: &Path, first_line: &str) -> Result<Option<(f64, f64)>> {
    let Some(rest) = first_line.trim().strip_prefix(AGE_RANGE_DIRECTIVE) else {
        return Ok(None);
    };
    let bounds: Vec<f64> = rest
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| manifest_err(path, 1, format!("malformed age range `{}`", rest.trim())))?;
    match bounds[..] {
        [lo, hi] if lo.is_finite() && hi.is_finite() && hi > lo => Ok(Some((lo, hi))),
        _ => Err(manifest_err(
            path,
            1,
            format!(
                "age range needs two increasing numbers, got `{}`",
                rest.trim()
            ),
        )),
    }
}

fn read_blob(base: &Path, rel: &str, dim: usize, path: &Path, line: u64) -> Result<Vec<f64>> {
    let blob_path = base.join(rel);
    let bytes = fs::read(&blob_path).map_err(|e| {
        manifest_err(
            path,
            line,
            format!("cannot read blob {}: {e}", blob_path.display()),
        )
    })?;
    if bytes.len() != dim * 4 {
        let got = if bytes.len() % 4 == 0 {
            format!("{} values", bytes.len() / 4)
        } else {
            format!("{} bytes", bytes.len())
        };
        return Err(manifest_err(
            path,
            line,
            format!("blob {rel} has {got}, expected {dim} values"),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(manifest_err(
            path,
            line,
            format!("blob {rel} has non-finite values"),
        ));
    }
    Ok(values)
}

pub fn load_embedding_manifest(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    load_embedding_manifest_with_dims(manifest_path, EmbeddingDims::default())
}

/// Loads a manifest, preserving the order in which speakers and their
/// utterances first appear.
pub fn load_embedding_manifest_with_dims(
    manifest_path: impl AsRef<Path>,
    dims: EmbeddingDims,
) -> Result<Dataset> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let age_range = match text.lines().next() {
        Some(first) => parse_age_range(path, first)?,
        None => None,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut speakers: Vec<SpeakerRecord> = Vec::new();
    let mut by_speaker: HashMap<String, usize> = HashMap::new();
    let mut seen_keys: HashMap<(String, String), u64> = HashMap::new();
    let mut header_seen = false;

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            manifest_err(path, line, format!("malformed CSV: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !header_seen {
            let fields: Vec<&str> = record.iter().map(str::trim).collect();
            if fields != MANIFEST_HEADER {
                return Err(manifest_err(
                    path,
                    line,
                    format!("expected header `{}`", MANIFEST_HEADER.join(",")),
                ));
            }
            header_seen = true;
            continue;
        }
        if record.len() != MANIFEST_HEADER.len() {
            return Err(manifest_err(
                path,
                line,
                format!(
                    "expected {} fields, got {}",
                    MANIFEST_HEADER.len(),
                    record.len()
                ),
            ));
        }
        let speaker_id = record[0].trim();
        let utterance_id = record[1].trim();
        if speaker_id.is_empty() || utterance_id.is_empty() {
            return Err(manifest_err(path, line, "empty speaker or utterance id"));
        }
        if let Some(first) =
            seen_keys.insert((speaker_id.to_owned(), utterance_id.to_owned()), line)
        {
            return Err(manifest_err(
                path,
                line,
                format!("duplicate key {speaker_id}/{utterance_id} (first on line {first})"),
            ));
        }
        let age_field = record[4].trim();
        let age = if age_field.is_empty() {
            None
        } else {
            let raw: f64 = age_field
                .parse()
                .map_err(|_| manifest_err(path, line, format!("malformed age `{age_field}`")))?;
            let age = match age_range {
                Some((lo, hi)) => (raw - lo) / (hi - lo),
                None => raw,
            };
            if !(0.0..=1.0).contains(&age) {
                return Err(manifest_err(
                    path,
                    line,
                    format!("age `{age_field}` maps outside [0, 1]"),
                ));
            }
            Some(age)
        };
        let audio = read_blob(base, record[2].trim(), dims.audio, path, line)?;
        let visual = read_blob(base, record[3].trim(), dims.visual, path, line)?;

        let si = *by_speaker.entry(speaker_id.to_owned()).or_insert_with(|| {
            speakers.push(SpeakerRecord {
                speaker_id: speaker_id.to_owned(),
                utterances: Vec::new(),
                age,
            });
            speakers.len() - 1
        });
        let speaker = &mut speakers[si];
        match (speaker.age, age) {
            (Some(a), Some(b)) if a != b => {
                return Err(manifest_err(
                    path,
                    line,
                    format!("conflicting ages for speaker {speaker_id}"),
                ))
            }
            (None, Some(_)) => speaker.age = age,
            _ => {}
        }
        speaker.utterances.push(Utterance {
            id: utterance_id.to_owned(),
            audio,
            visual,
        });
    }
    if !header_seen && !text.trim().is_empty() {
        return Err(manifest_err(path, 1, "missing header"));
    }
    Dataset::new(dims, speakers).map_err(|e| manifest_err(path, 0, e.to_string()))
}

fn write_blob(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.csv` plus `audio/` and `visual/` blob trees into `dir`.
/// Output bytes depend only on the dataset.
pub fn write_embedding_manifest(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut out = Vec::new();
    writeln!(out, "{}", MANIFEST_HEADER.join(",")).expect("write to Vec");
    for s in &dataset.speakers {
        for u in &s.utterances {
            let audio_rel = format!("audio/{}/{}.f32", s.speaker_id, u.id);
            let visual_rel = format!("visual/{}/{}.f32", s.speaker_id, u.id);
            write_blob(&dir.join(&audio_rel), &u.audio)?;
            write_blob(&dir.join(&visual_rel), &u.visual)?;
            let age = s.age.map(|a| format!("{a}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                s.speaker_id, u.id, audio_rel, visual_rel, age
            )
            .expect("write to Vec");
        }
    }
    fs::write(&manifest_path, out).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SynthConfig};

    fn small_dims() -> EmbeddingDims {
        EmbeddingDims {
            audio: 4,
            visual: 6,
        }
    }

    fn write(dir: &Path, name: &str, values: &[f32]) {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(name), bytes).unwrap();
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(&p, "speaker_id,utterance_id,audio_path,visual_path,age\n").unwrap();
        assert!(load_embedding_manifest(&p).unwrap().is_empty());
        fs::write(&p, "").unwrap();
        assert!(load_embedding_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn short_audio_blob_names_row() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.f32", &[0.5; 255]);
        write(dir.path(), "v.f32", &[0.5; 512]);
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(
            &p,
            "speaker_id,utterance_id,audio_path,visual_path,age\nspk,u1,a.f32,v.f32,0.3\n",
        )
        .unwrap();
        let err = load_embedding_manifest(&p).unwrap_err();
        match &err {
            Error::Manifest { line, message, .. } => {
                assert_eq!(*line, 2);
                assert!(message.contains("255 values"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.f32", &[0.5; 4]);
        write(dir.path(), "v.f32", &[0.5; 6]);
        let p = dir.path().join(MANIFEST_FILE);
        let head = "speaker_id,utterance_id,audio_path,visual_path,age\n";

        fs::write(&p, format!("{head}s,u,a.f32,v.f32,\ns,u,a.f32,v.f32,\n")).unwrap();
        let err = load_embedding_manifest_with_dims(&p, small_dims()).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 3, .. }), "{err}");

        fs::write(&p, format!("{head}s,u,a.f32\n")).unwrap();
        let err = load_embedding_manifest_with_dims(&p, small_dims()).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }), "{err}");

        fs::write(&p, format!("{head}s,u,a.f32,v.f32,old\n")).unwrap();
        assert!(load_embedding_manifest_with_dims(&p, small_dims()).is_err());

        fs::write(&p, format!("{head}s,u,missing.f32,v.f32,\n")).unwrap();
        let err = load_embedding_manifest_with_dims(&p, small_dims()).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }), "{err}");

        fs::write(&p, "speaker,utt\n").unwrap();
        assert!(load_embedding_manifest_with_dims(&p, small_dims()).is_err());

        assert!(matches!(
            load_embedding_manifest(dir.path().join("nope.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn age_range_directive_maps_years() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.f32", &[0.5; 4]);
        write(dir.path(), "v.f32", &[0.5; 6]);
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(
            &p,
            "# age_range: 20 70\nspeaker_id,utterance_id,audio_path,visual_path,age\ns,u,a.f32,v.f32,45\n",
        )
        .unwrap();
        let ds = load_embedding_manifest_with_dims(&p, small_dims()).unwrap();
        assert_eq!(ds.speakers[0].age, Some(0.5));

        fs::write(
            &p,
            "# age_range: 20 70\nspeaker_id,utterance_id,audio_path,visual_path,age\ns,u,a.f32,v.f32,90\n",
        )
        .unwrap();
        assert!(load_embedding_manifest_with_dims(&p, small_dims()).is_err());
    }

    #[test]
    fn round_trip_within_f32() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic_dataset(&SynthConfig {
            n_speakers: 4,
            utterances_per_speaker: 3,
            dims: small_dims(),
            label_coverage: 0.5,
            ..SynthConfig::default()
        })
        .unwrap();
        let p = write_embedding_manifest(&ds, dir.path()).unwrap();
        let back = load_embedding_manifest_with_dims(&p, small_dims()).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.speakers.iter().zip(&back.speakers) {
            assert_eq!(a.speaker_id, b.speaker_id);
            assert_eq!(a.age, b.age);
            for (ua, ub) in a.utterances.iter().zip(&b.utterances) {
                assert_eq!(ua.id, ub.id);
                for (x, y) in ua
                    .audio
                    .iter()
                    .chain(&ua.visual)
                    .zip(ub.audio.iter().chain(&ub.visual))
                {
                    assert_eq!(*y, *x as f32 as f64);
                    assert!((x - y).abs() <= x.abs() * f32::EPSILON as f64);
                }
            }
        }
    }
}
