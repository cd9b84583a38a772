use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::fmt_edge;
use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

pub const DEFAULT_BIN_WIDTH: f64 = 0.02;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceDistributions {
    /// Distances over all unordered pairs of the reference speaker's embeddings.
    pub intraclass: Vec<f64>,
    /// Distances from the reference centroid to every other speaker's centroid.
    pub interclass: Vec<f64>,
}

fn centroid(group: &Matrix) -> Vec<f64> {
    let mut c = vec![0.0; group.cols()];
    for row in group.row_iter() {
        for (ci, x) in c.iter_mut().zip(row) {
            *ci += x;
        }
    }
    let n = group.rows() as f64;
    c.iter_mut().for_each(|x| *x /= n);
    c
}

/// `groups[s]` holds speaker `s`'s embeddings, one per row.
pub fn distance_distributions(
    groups: &[Matrix],
    reference: usize,
) -> Result<DistanceDistributions> {
    let Some(refg) = groups.get(reference) else {
        return Err(Error::InvalidInput(format!(
            "reference speaker {reference} out of range for {} speakers",
            groups.len()
        )));
    };
    if refg.rows() < 2 {
        return Err(Error::InvalidInput(format!(
            "reference speaker needs >= 2 embeddings, has {}",
            refg.rows()
        )));
    }
    if let Some(g) = groups
        .iter()
        .find(|g| g.rows() == 0 || g.cols() != refg.cols())
    {
        return Err(Error::shape(
            "distance_distributions",
            format!("non-empty groups of width {}", refg.cols()),
            format!("{}x{}", g.rows(), g.cols()),
        ));
    }
    let mut intraclass = Vec::with_capacity(refg.rows() * (refg.rows() - 1) / 2);
    for a in 0..refg.rows() {
        for b in a + 1..refg.rows() {
            intraclass.push(euclidean(refg.row(a), refg.row(b)));
        }
    }
    let c_ref = centroid(refg);
    let interclass = groups
        .iter()
        .enumerate()
        .filter(|&(s, _)| s != reference)
        .map(|(_, g)| euclidean(&c_ref, &centroid(g)))
        .collect();
    Ok(DistanceDistributions {
        intraclass,
        interclass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub intraclass: usize,
    pub interclass: usize,
}

/// Equal-width bins over `[lo, hi)`; values at or above `hi` land in the last
/// bin and values below `lo` in the first.
pub fn histogram(
    dist: &DistanceDistributions,
    bin_width: f64,
    lo: f64,
    hi: f64,
) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0)
        || !(hi > lo)
        || !bin_width.is_finite()
        || !hi.is_finite()
        || !lo.is_finite()
    {
        return Err(Error::Config(format!(
            "histogram needs bin_width > 0 and lo < hi, got width {bin_width} over [{lo}, {hi}]"
        )));
    }
    let n = ((hi - lo) / bin_width).round().max(1.0) as usize;
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|i| HistogramBin {
            left: lo + i as f64 * bin_width,
            right: if i + 1 == n {
                hi
            } else {
                lo + (i + 1) as f64 * bin_width
            },
            intraclass: 0,
            interclass: 0,
        })
        .collect();
    let index = |d: f64| (((d - lo) / bin_width).floor().max(0.0) as usize).min(n - 1);
    for &d in &dist.intraclass {
        bins[index(d)].intraclass += 1;
    }
    for &d in &dist.interclass {
        bins[index(d)].interclass += 1;
    }
    Ok(bins)
}

/// Writes `bin_left,bin_right,intraclass_count,interclass_count`.
pub fn write_histogram_csv(path: impl AsRef<Path>, bins: &[HistogramBin]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "bin_left,bin_right,intraclass_count,interclass_count").map_err(io)?;
    for b in bins {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_edge(b.left),
            fmt_edge(b.right),
            b.intraclass,
            b.interclass
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn random_groups(sizes: &[usize], dim: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sizes
            .iter()
            .map(|&n| {
                Matrix::from_vec(
                    n,
                    dim,
                    (0..n * dim)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_utterances_and_pair_count() {
        let same = Matrix::from_rows(&[[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]]).unwrap();
        let other = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let d = distance_distributions(&[same, other], 0).unwrap();
        assert_eq!(d.intraclass, vec![0.0; 3]);
        assert_eq!(d.interclass.len(), 1);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let groups = random_groups(&[4, 3, 5, 2], 6, 9);
        let d = distance_distributions(&groups, 2).unwrap();
        let g = &groups[2];
        let mut intra = Vec::new();
        for a in 0..g.rows() {
            for b in 0..g.rows() {
                if a < b {
                    let s: f64 = (0..6).map(|t| (g.get(a, t) - g.get(b, t)).powi(2)).sum();
                    intra.push(s.sqrt());
                }
            }
        }
        assert_eq!(d.intraclass.len(), 10);
        for (x, y) in d.intraclass.iter().zip(&intra) {
            assert!((x - y).abs() < 1e-12);
        }
        let mean = |m: &Matrix, t: usize| {
            (0..m.rows()).map(|r| m.get(r, t)).sum::<f64>() / m.rows() as f64
        };
        let inter: Vec<f64> = [0, 1, 3]
            .iter()
            .map(|&s| {
                (0..6)
                    .map(|t| (mean(g, t) - mean(&groups[s], t)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        for (x, y) in d.interclass.iter().zip(&inter) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_utterances() {
        let groups = random_groups(&[1, 3], 2, 1);
        assert!(distance_distributions(&groups, 0).is_err());
        assert!(distance_distributions(&groups, 5).is_err());
    }

    #[test]
    fn histogram_counts_and_csv() {
        let d = DistanceDistributions {
            intraclass: vec![0.0, 0.01, 0.05, 2.0],
            interclass: vec![1.99, 3.0],
        };
        let bins = histogram(&d, DEFAULT_BIN_WIDTH, 0.0, 2.0).unwrap();
        assert_eq!(bins.len(), 100);
        assert_eq!(bins[0].intraclass, 2);
        assert_eq!(bins[2].intraclass, 1);
        assert_eq!(bins[99].intraclass, 1);
        assert_eq!(bins[99].interclass, 2);
        let total: usize = bins.iter().map(|b| b.intraclass + b.interclass).sum();
        assert_eq!(total, 6);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_histogram_csv(&p, &bins[..4]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "bin_left,bin_right,intraclass_count,interclass_count\n\
             0,0.02,2,0\n0.02,0.04,0,0\n0.04,0.06,1,0\n0.06,0.08,0,0\n"
        );
        assert!(histogram(&d, 0.0, 0.0, 2.0).is_err());
    }
}
