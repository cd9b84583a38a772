//! Multimodal generalized end-to-end loss.
//!
//! For embeddings `e_ji` (speaker `j`, utterance `i`) and centroids `c_k`:
//!
//! ```text
//! S_ji,k = w · cos(e_ji, c_k) + b
//! L      = Σ_ji  1 − σ(S_ji,j) + max_{k≠j} σ(S_ji,k)
//! ```
//!
//! Gradients flow through the centroids back into every embedding.

use crate::error::{Error, Result};
use crate::nn::layers::{sigmoid, NORM_EPS};
use crate::nn::matrix::{axpy, dot, norm, Matrix};
use crate::nn::params::{ParamBlock, ParamBlockMut, ParamSet};

/// Lower clamp for the similarity scale after each optimizer step.
pub const SIM_W_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ge2eParams {
    pub sim_w: f64,
    pub sim_b: f64,
}

impl Default for Ge2eParams {
    fn default() -> Self {
        Self {
            sim_w: 10.0,
            sim_b: -5.0,
        }
    }
}

impl Ge2eParams {
    pub fn clamp(&mut self) {
        self.sim_w = self.sim_w.max(SIM_W_FLOOR);
    }

    pub fn zero() -> Self {
        Self {
            sim_w: 0.0,
            sim_b: 0.0,
        }
    }
}

impl ParamSet for Ge2eParams {
    fn param_blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock::new("sim_w", std::slice::from_ref(&self.sim_w)),
            ParamBlock::new("sim_b", std::slice::from_ref(&self.sim_b)),
        ]
    }

    fn param_blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        vec![
            ParamBlockMut::new("sim_w", std::slice::from_mut(&mut self.sim_w)),
            ParamBlockMut::new("sim_b", std::slice::from_mut(&mut self.sim_b)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ge2eConfig {
    /// Leave `e_ji` out of its own speaker's centroid in the positive term.
    pub exclusive_positive_centroid: bool,
}

/// `(N·M) × N` scaled cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    pub n: usize,
    pub m: usize,
}

impl SimilarityMatrix {
    pub fn new(values: Matrix, n: usize, m: usize) -> Result<Self> {
        if values.shape() != (n * m, n) {
            return Err(Error::shape(
                "SimilarityMatrix",
                format!("{}x{n}", n * m),
                format!("{:?}", values.shape()),
            ));
        }
        if !values.is_finite() {
            return Err(Error::InvalidInput(
                "similarity matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { values, n, m })
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize, k: usize) -> f64 {
        self.values.get(j * self.m + i, k)
    }
}

fn check_batch(embeddings: &Matrix, n: usize, m: usize, op: &'static str) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput(format!(
            "{op}: empty speaker slot (N={n}, M={m})"
        )));
    }
    if embeddings.rows() != n * m {
        return Err(Error::shape(
            op,
            format!("{} rows for N={n}, M={m}", n * m),
            embeddings.rows(),
        ));
    }
    Ok(())
}

/// Mean of each speaker's `m` consecutive rows.
pub fn compute_centroids(embeddings: &Matrix, n: usize, m: usize) -> Result<Matrix> {
    check_batch(embeddings, n, m, "compute_centroids")?;
    let d = embeddings.cols();
    let mut c = Matrix::zeros(n, d);
    for j in 0..n {
        let dst = c.row_mut(j);
        for i in 0..m {
            axpy(1.0, embeddings.row(j * m + i), dst);
        }
        dst.iter_mut().for_each(|v| *v /= m as f64);
    }
    Ok(c)
}

fn cosine(a: &[f64], b: &[f64], op: &'static str) -> Result<(f64, f64, f64)> {
    let (na, nb) = (norm(a), norm(b));
    if !(na > NORM_EPS) || !(nb > NORM_EPS) {
        return Err(Error::degenerate(op, "zero embedding or centroid"));
    }
    Ok((dot(a, b) / (na * nb), na, nb))
}

/// `S_ji,k = sim_w · cos(e_ji, c_k) + sim_b` against the supplied centroids.
pub fn similarity_matrix(
    embeddings: &Matrix,
    centroids: &Matrix,
    m: usize,
    params: Ge2eParams,
) -> Result<SimilarityMatrix> {
    let n = centroids.rows();
    check_batch(embeddings, n, m, "similarity_matrix")?;
    if centroids.cols() != embeddings.cols() {
        return Err(Error::shape(
            "similarity_matrix",
            format!("{}-d centroids", embeddings.cols()),
            centroids.cols(),
        ));
    }
    let mut s = Matrix::zeros(n * m, n);
    for r in 0..n * m {
        for k in 0..n {
            let (cos, _, _) = cosine(embeddings.row(r), centroids.row(k), "similarity_matrix")?;
            s.set(r, k, params.sim_w * cos + params.sim_b);
        }
    }
    SimilarityMatrix::new(s, n, m)
}

/// Column index of the hardest negative in row `r`: largest `σ(S)` over
/// `k ≠ j`, ties to the lowest index.
fn hardest_negative(row: &[f64], j: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (k, &s) in row.iter().enumerate() {
        if k == j {
            continue;
        }
        let v = sigmoid(s);
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    best
}

/// Loss value and `∂L/∂S`. At most two entries per row of the gradient are
/// nonzero: the positive column and the selected hardest negative.
pub fn ge2e_mm_loss(sim: &SimilarityMatrix) -> Result<(f64, Matrix)> {
    let (n, m) = (sim.n, sim.m);
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "GE2E loss needs at least 2 speakers for the negative term, got {n}"
        )));
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n * m, n);
    for j in 0..n {
        for i in 0..m {
            let r = j * m + i;
            let row = sim.values.row(r);
            let neg = hardest_negative(row, j);
            let sp = sigmoid(row[j]);
            let sn = sigmoid(row[neg]);
            loss += 1.0 - sp + sn;
            grad.set(r, j, -sp * (1.0 - sp));
            grad.set(r, neg, sn * (1.0 - sn));
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct Ge2eOutput {
    pub loss: f64,
    pub similarity: SimilarityMatrix,
    /// `∂L/∂embeddings`, same shape as the input.
    pub d_embeddings: Matrix,
    pub d_params: Ge2eParams,
}

/// Full forward and backward pass from embeddings to loss, including the
/// centroid chain rule.
pub fn ge2e_forward_backward(
    embeddings: &Matrix,
    n: usize,
    m: usize,
    params: Ge2eParams,
    cfg: Ge2eConfig,
) -> Result<Ge2eOutput> {
    check_batch(embeddings, n, m, "ge2e")?;
    if cfg.exclusive_positive_centroid && m < 2 {
        return Err(Error::InvalidInput(
            "leave-one-out centroids need at least 2 utterances per speaker".into(),
        ));
    }
    let d = embeddings.cols();
    let centroids = compute_centroids(embeddings, n, m)?;
    let sums = {
        let mut s = centroids.clone();
        s.scale(m as f64);
        s
    };
    // Positive-term centroid for row r; equals the speaker centroid unless leaving one out.
    let positive_centroid = |r: usize, j: usize| -> Vec<f64> {
        if cfg.exclusive_positive_centroid {
            sums.row(j)
                .iter()
                .zip(embeddings.row(r))
                .map(|(s, e)| (s - e) / (m - 1) as f64)
                .collect()
        } else {
            centroids.row(j).to_vec()
        }
    };

    let mut s = Matrix::zeros(n * m, n);
    let mut cosines = Matrix::zeros(n * m, n);
    for j in 0..n {
        for i in 0..m {
            let r = j * m + i;
            let e = embeddings.row(r);
            for k in 0..n {
                let cos = if k == j {
                    cosine(e, &positive_centroid(r, j), "ge2e")?.0
                } else {
                    cosine(e, centroids.row(k), "ge2e")?.0
                };
                cosines.set(r, k, cos);
                s.set(r, k, params.sim_w * cos + params.sim_b);
            }
        }
    }
    let similarity = SimilarityMatrix::new(s, n, m)?;
    let (loss, d_sim) = ge2e_mm_loss(&similarity)?;

    let mut d_params = Ge2eParams::zero();
    let mut d_emb = Matrix::zeros(n * m, d);
    let mut d_centroids = Matrix::zeros(n, d);
    let mut d_exclusive = Matrix::zeros(n * m, d);
    for j in 0..n {
        for i in 0..m {
            let r = j * m + i;
            let e = embeddings.row(r);
            for k in 0..n {
                let ds = d_sim.get(r, k);
                if ds == 0.0 {
                    continue;
                }
                let cos = cosines.get(r, k);
                d_params.sim_w += ds * cos;
                d_params.sim_b += ds;
                let dcos = params.sim_w * ds;
                let exclusive = cfg.exclusive_positive_centroid && k == j;
                let c = if exclusive {
                    positive_centroid(r, j)
                } else {
                    centroids.row(k).to_vec()
                };
                let (ne, nc) = (norm(e), norm(&c));
                let de = d_emb.row_mut(r);
                for t in 0..d {
                    de[t] += dcos * (c[t] / (ne * nc) - cos * e[t] / (ne * ne));
                }
                let dc_target = if exclusive {
                    d_exclusive.row_mut(r)
                } else {
                    d_centroids.row_mut(k)
                };
                for t in 0..d {
                    dc_target[t] += dcos * (e[t] / (ne * nc) - cos * c[t] / (nc * nc));
                }
            }
        }
    }
    for j in 0..n {
        for i in 0..m {
            axpy(1.0 / m as f64, d_centroids.row(j), d_emb.row_mut(j * m + i));
        }
    }
    if cfg.exclusive_positive_centroid {
        let scale = 1.0 / (m - 1) as f64;
        for j in 0..n {
            for i in 0..m {
                let src = d_exclusive.row(j * m + i).to_vec();
                for other in 0..m {
                    if other != i {
                        axpy(scale, &src, d_emb.row_mut(j * m + other));
                    }
                }
            }
        }
    }
    Ok(Ge2eOutput {
        loss,
        similarity,
        d_embeddings: d_emb,
        d_params,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::nn::gradcheck::GradCheck;

    fn unit_rows(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = m.row_mut(r);
            row.iter_mut()
                .for_each(|v| *v = StandardNormal.sample(&mut rng));
            let n = norm(row);
            row.iter_mut().for_each(|v| *v /= n);
        }
        m
    }

    /// Direct loop over the loss definition, independent of the batched code.
    #[allow(clippy::needless_range_loop)]
    fn reference_loss(e: &Matrix, n: usize, m: usize, p: Ge2eParams, exclusive: bool) -> f64 {
        let d = e.cols();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut total = 0.0;
        for j in 0..n {
            for i in 0..m {
                let eji = e.row(j * m + i);
                let mut sims = vec![0.0; n];
                for k in 0..n {
                    let mut c = vec![0.0; d];
                    let mut count = 0.0;
                    for mm in 0..m {
                        if exclusive && k == j && mm == i {
                            continue;
                        }
                        for t in 0..d {
                            c[t] += e.get(k * m + mm, t);
                        }
                        count += 1.0;
                    }
                    c.iter_mut().for_each(|v| *v /= count);
                    let mut num = 0.0;
                    let (mut na, mut nb) = (0.0, 0.0);
                    for t in 0..d {
                        num += eji[t] * c[t];
                        na += eji[t] * eji[t];
                        nb += c[t] * c[t];
                    }
                    sims[k] = p.sim_w * num / (na.sqrt() * nb.sqrt()) + p.sim_b;
                }
                let neg = (0..n)
                    .filter(|&k| k != j)
                    .map(|k| sig(sims[k]))
                    .fold(f64::NEG_INFINITY, f64::max);
                total += 1.0 - sig(sims[j]) + neg;
            }
        }
        total
    }

    #[test]
    fn centroid_cases() {
        let e = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(compute_centroids(&e, 1, 2).unwrap().as_slice(), &[0.5, 0.5]);
        let same = Matrix::from_rows(&[[0.3, 0.4], [0.3, 0.4], [0.3, 0.4]]).unwrap();
        let c = compute_centroids(&same, 1, 3).unwrap();
        assert!((c.get(0, 0) - 0.3).abs() < 1e-15 && (c.get(0, 1) - 0.4).abs() < 1e-15);
        assert!(compute_centroids(&e, 1, 0).is_err());
        assert!(compute_centroids(&e, 2, 2).is_err());
    }

    #[test]
    fn centroids_match_naive_sum() {
        let e = unit_rows(12, 8, 1);
        let c = compute_centroids(&e, 3, 4).unwrap();
        for k in 0..3 {
            for t in 0..8 {
                let mut s = 0.0;
                for i in 0..4 {
                    s += e.get(k * 4 + i, t);
                }
                assert!((c.get(k, t) - s / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn similarity_cases() {
        let e = Matrix::from_rows(&[[0.6, 0.8], [1.0, 0.0]]).unwrap();
        let c = Matrix::from_rows(&[[3.0, 4.0], [0.0, 2.0]]).unwrap();
        let p1 = Ge2eParams {
            sim_w: 1.0,
            sim_b: 0.0,
        };
        let s = similarity_matrix(&e, &c, 1, p1).unwrap();
        assert!((s.values.get(0, 0) - 1.0).abs() < 1e-15);
        let p2 = Ge2eParams {
            sim_w: 10.0,
            sim_b: -5.0,
        };
        let s = similarity_matrix(&e, &c, 1, p2).unwrap();
        assert_eq!(s.values.get(1, 1), -5.0);
        let zero = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            similarity_matrix(&e, &zero, 1, p2),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn similarity_matches_formula() {
        let e = unit_rows(12, 6, 2);
        let c = compute_centroids(&e, 4, 3).unwrap();
        let p = Ge2eParams {
            sim_w: 7.5,
            sim_b: -2.0,
        };
        let s = similarity_matrix(&e, &c, 3, p).unwrap();
        for r in 0..12 {
            for k in 0..4 {
                let (a, b) = (e.row(r), c.row(k));
                let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
                    / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                        * b.iter().map(|x| x * x).sum::<f64>().sqrt());
                assert!((s.values.get(r, k) - (7.5 * cos - 2.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_batch_sums_to_nm() {
        let row = [0.6, 0.0, 0.8];
        let e = Matrix::from_rows(&vec![row; 12]).unwrap();
        let out =
            ge2e_forward_backward(&e, 4, 3, Ge2eParams::default(), Ge2eConfig::default()).unwrap();
        assert!((out.loss - 12.0).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_speakers() {
        let e = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let out =
            ge2e_forward_backward(&e, 2, 2, Ge2eParams::default(), Ge2eConfig::default()).unwrap();
        // 4 · (1 − σ(5) + σ(−5)), evaluated independently.
        assert!((out.loss - 0.05354280739427835).abs() < 1e-6);
    }

    #[test]
    fn rejects_single_speaker() {
        let e = unit_rows(3, 4, 0);
        assert!(
            ge2e_forward_backward(&e, 1, 3, Ge2eParams::default(), Ge2eConfig::default()).is_err()
        );
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let s = Matrix::from_rows(&[[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]]).unwrap();
        let (_, g) = ge2e_mm_loss(&SimilarityMatrix::new(s, 3, 1).unwrap()).unwrap();
        assert!(g.get(0, 1) > 0.0 && g.get(0, 2) == 0.0);
        assert!(g.get(1, 0) > 0.0 && g.get(1, 2) == 0.0);
        assert!(g.get(2, 0) > 0.0 && g.get(2, 1) == 0.0);
    }

    #[test]
    fn matches_reference_loop_and_finite_differences() {
        for exclusive in [false, true] {
            let (n, m, d) = (4, 3, 6);
            let e = unit_rows(n * m, d, 7);
            let p = Ge2eParams {
                sim_w: 3.0,
                sim_b: -1.0,
            };
            let cfg = Ge2eConfig {
                exclusive_positive_centroid: exclusive,
            };
            let out = ge2e_forward_backward(&e, n, m, p, cfg).unwrap();
            let reference = reference_loss(&e, n, m, p, exclusive);
            assert!((out.loss - reference).abs() < 1e-12, "{exclusive}");

            let r = GradCheck::default().run(
                |x| {
                    let em = Matrix::from_vec(n * m, d, x.to_vec()).unwrap();
                    ge2e_forward_backward(&em, n, m, p, cfg).unwrap().loss
                },
                e.as_slice(),
                out.d_embeddings.as_slice(),
            );
            assert!(r.passed(1e-4), "exclusive={exclusive}: {r:?}");
            let r = GradCheck::default().run(
                |x| {
                    let q = Ge2eParams {
                        sim_w: x[0],
                        sim_b: x[1],
                    };
                    ge2e_forward_backward(&e, n, m, q, cfg).unwrap().loss
                },
                &[p.sim_w, p.sim_b],
                &[out.d_params.sim_w, out.d_params.sim_b],
            );
            assert!(r.passed(1e-4), "exclusive={exclusive}: {r:?}");
        }
    }

    proptest! {
        #[test]
        fn loss_bounds_and_gradient_sparsity(seed in any::<u64>(), n in 2usize..5, m in 1usize..4) {
            let e = unit_rows(n * m, 5, seed);
            let out = ge2e_forward_backward(&e, n, m, Ge2eParams::default(), Ge2eConfig::default()).unwrap();
            prop_assert!(out.loss >= 0.0);
            prop_assert!(out.loss <= 2.0 * (n * m) as f64);
            let (_, g) = ge2e_mm_loss(&out.similarity).unwrap();
            for r in 0..n * m {
                prop_assert!(g.row(r).iter().filter(|&&v| v != 0.0).count() <= 2);
            }
        }
    }
}
