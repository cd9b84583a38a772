use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::matrix::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialScore {
    pub target: bool,
    pub score: f64,
}

impl TrialScore {
    pub fn new(target: bool, score: f64) -> Self {
        Self { target, score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    /// Mean of the false-positive and false-negative rates at `threshold`.
    pub eer: f64,
    /// Accept iff `score >= threshold`; may be `±∞`.
    pub threshold: f64,
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_score", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= crate::nn::layers::NORM_EPS || nb <= crate::nn::layers::NORM_EPS {
        return Err(Error::degenerate("cosine_score", "zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Threshold sweep over `{-∞} ∪ unique scores ∪ {+∞}`.
///
/// At threshold `t`, FNR is the fraction of targets scoring below `t` and FPR
/// the fraction of nontargets scoring at or above it. The chosen threshold
/// minimizes `|FPR − FNR|` (compared exactly on integer counts), the lowest
/// one winning ties.
pub fn eer(scores: &[TrialScore]) -> Result<Eer> {
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite trial score {}",
            s.score
        )));
    }
    let n_t = scores.iter().filter(|s| s.target).count() as u128;
    let n_n = scores.len() as u128 - n_t;
    if n_t == 0 || n_n == 0 {
        return Err(Error::InvalidInput(
            "EER needs at least one target and one nontarget trial".into(),
        ));
    }
    let mut sorted: Vec<TrialScore> = scores.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    // Rates are fn/n_t and fp/n_n; compare |fp·n_t − fn·n_n| to stay exact.
    let gap = |fn_: u128, fp: u128| (fp * n_t).abs_diff(fn_ * n_n);
    let (mut fn_, mut fp) = (0u128, n_n);
    let mut best = (gap(fn_, fp), f64::NEG_INFINITY, fn_, fp);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        let g = gap(fn_, fp);
        if g < best.0 {
            best = (g, t, fn_, fp);
        }
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].target {
                fn_ += 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
    }
    if gap(fn_, fp) < best.0 {
        best = (gap(fn_, fp), f64::INFINITY, fn_, fp);
    }
    let (_, threshold, fn_, fp) = best;
    let fnr = fn_ as f64 / n_t as f64;
    let fpr = fp as f64 / n_n as f64;
    Ok(Eer {
        eer: (fpr + fnr) / 2.0,
        threshold,
    })
}

/// Writes `label,score` rows in input order.
pub fn write_score_csv(path: impl AsRef<Path>, scores: &[TrialScore]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "label,score").map_err(io)?;
    for s in scores {
        writeln!(w, "{},{}", u8::from(s.target), s.score).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn trials(targets: &[f64], nontargets: &[f64]) -> Vec<TrialScore> {
        targets
            .iter()
            .map(|&s| TrialScore::new(true, s))
            .chain(nontargets.iter().map(|&s| TrialScore::new(false, s)))
            .collect()
    }

    /// Counts every rate pair at thresholds between consecutive sorted scores.
    fn brute_force(scores: &[TrialScore]) -> f64 {
        let mut values: Vec<f64> = scores.iter().map(|s| s.score).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut cands = vec![values[0] - 1.0];
        cands.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        cands.push(values[values.len() - 1] + 1.0);
        let n_t = scores.iter().filter(|s| s.target).count() as f64;
        let n_n = scores.len() as f64 - n_t;
        let mut best = (f64::INFINITY, 0.0);
        for t in cands {
            let fnr = scores.iter().filter(|s| s.target && s.score < t).count() as f64 / n_t;
            let fpr = scores.iter().filter(|s| !s.target && s.score >= t).count() as f64 / n_n;
            if (fpr - fnr).abs() < best.0 {
                best = ((fpr - fnr).abs(), (fpr + fnr) / 2.0);
            }
        }
        best.1
    }

    #[test]
    fn worked_examples() {
        assert_eq!(eer(&trials(&[0.9, 0.8], &[0.2, 0.1])).unwrap().eer, 0.0);
        assert_eq!(eer(&trials(&[0.1], &[0.9])).unwrap().eer, 1.0);
        let r = eer(&trials(&[0.9, 0.8, 0.4], &[0.6, 0.2, 0.1])).unwrap();
        assert_eq!(r.eer, 1.0 / 3.0);
        assert_eq!(r.threshold, 0.6);
    }

    #[test]
    fn single_class_and_non_finite_rejected() {
        assert!(eer(&trials(&[0.3, 0.4], &[])).is_err());
        assert!(eer(&trials(&[], &[0.3])).is_err());
        assert!(eer(&trials(&[f64::NAN], &[0.3])).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for shift in [0.0, 0.5, 2.0] {
            let s: Vec<TrialScore> = (0..300)
                .map(|_| {
                    let target = rng.gen_bool(0.4);
                    // Coarse grid forces tied scores.
                    let raw: f64 = rng.gen::<f64>() + if target { shift } else { 0.0 };
                    TrialScore::new(target, (raw * 40.0).round() / 40.0)
                })
                .collect();
            assert_eq!(eer(&s).unwrap().eer, brute_force(&s));
        }
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<TrialScore> = (0..200)
            .map(|i| TrialScore::new(i % 3 == 0, rng.gen::<f64>() + f64::from(i % 3 == 0) * 0.3))
            .collect();
        let t: Vec<TrialScore> = s
            .iter()
            .map(|x| TrialScore::new(x.target, (3.0 * x.score).exp() - 7.0))
            .collect();
        assert_eq!(eer(&s).unwrap().eer, eer(&t).unwrap().eer);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_score(&[0.6, 0.8], &[0.6, 0.8]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), -1.0);
        assert!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn score_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        write_score_csv(&p, &trials(&[0.5], &[-0.25])).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "label,score\n1,0.5\n0,-0.25\n"
        );
    }
}
