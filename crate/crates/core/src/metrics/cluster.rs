//! Silhouette, Calinski-Harabasz and Davies-Bouldin indices (Euclidean).
//! Clusters are visited in order of first appearance, so relabeling leaves
//! every result bit-identical.

use super::distance::euclidean;
use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterIndices {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
}

impl ClusterIndices {
    pub fn compute(points: &Matrix, labels: &[usize]) -> Result<Self> {
        Ok(Self {
            silhouette: silhouette(points, labels)?,
            calinski_harabasz: calinski_harabasz(points, labels)?,
            davies_bouldin: davies_bouldin(points, labels)?,
        })
    }
}

/// Maps each point to a dense cluster index.
fn assign(points: &Matrix, labels: &[usize], op: &'static str) -> Result<(Vec<usize>, usize)> {
    if labels.len() != points.rows() {
        return Err(Error::shape(
            op,
            format!("{} labels", points.rows()),
            labels.len(),
        ));
    }
    let mut seen: Vec<usize> = Vec::new();
    let dense = labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect();
    if seen.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{op} needs at least 2 clusters, got {}",
            seen.len()
        )));
    }
    Ok((dense, seen.len()))
}

fn centroids(points: &Matrix, cluster: &[usize], k: usize) -> (Matrix, Vec<usize>) {
    let mut c = Matrix::zeros(k, points.cols());
    let mut sizes = vec![0usize; k];
    for (row, &ci) in points.row_iter().zip(cluster) {
        sizes[ci] += 1;
        for (x, y) in c.row_mut(ci).iter_mut().zip(row) {
            *x += y;
        }
    }
    for (ci, &n) in sizes.iter().enumerate() {
        c.row_mut(ci).iter_mut().for_each(|x| *x /= n as f64);
    }
    (c, sizes)
}

/// Mean silhouette over all points. Singletons score 0, as does `a = b = 0`.
pub fn silhouette(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let (cluster, k) = assign(points, labels, "silhouette")?;
    let n = points.rows();
    let mut sizes = vec![0usize; k];
    cluster.iter().for_each(|&c| sizes[c] += 1);
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = cluster[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[cluster[j]] += euclidean(points.row(i), points.row(j));
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// `(B / (k − 1)) / (W / (n − k))` with `B`, `W` the between- and
/// within-cluster sums of squared distances.
pub fn calinski_harabasz(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let (cluster, k) = assign(points, labels, "calinski_harabasz")?;
    let n = points.rows();
    let (c, sizes) = centroids(points, &cluster, k);
    let mut mean = vec![0.0; points.cols()];
    for row in points.row_iter() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let between: f64 = (0..k)
        .map(|ci| sizes[ci] as f64 * euclidean(c.row(ci), &mean).powi(2))
        .sum();
    let within: f64 = points
        .row_iter()
        .zip(&cluster)
        .map(|(row, &ci)| euclidean(row, c.row(ci)).powi(2))
        .sum();
    if !(within > 0.0) || n == k {
        return Err(Error::degenerate(
            "calinski_harabasz",
            "zero within-cluster dispersion",
        ));
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Mean over clusters of `max_{j≠i} (s_i + s_j) / d(c_i, c_j)`, with `s_i`
/// the mean distance of cluster `i`'s points to its centroid.
pub fn davies_bouldin(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let (cluster, k) = assign(points, labels, "davies_bouldin")?;
    let (c, sizes) = centroids(points, &cluster, k);
    let mut scatter = vec![0.0; k];
    for (row, &ci) in points.row_iter().zip(&cluster) {
        scatter[ci] += euclidean(row, c.row(ci));
    }
    for (s, &n) in scatter.iter_mut().zip(&sizes) {
        *s /= n as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in (0..k).filter(|&j| j != i) {
            let d = euclidean(c.row(i), c.row(j));
            if !(d > 0.0) {
                return Err(Error::degenerate("davies_bouldin", "coincident centroids"));
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn line(xs: &[f64]) -> Matrix {
        Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn four_point_instance() {
        let p = line(&[0.0, 2.0, 10.0, 12.0]);
        let l = [0, 0, 1, 1];
        assert!((silhouette(&p, &l).unwrap() - 79.0 / 99.0).abs() < 1e-12);
        assert!((calinski_harabasz(&p, &l).unwrap() - 50.0).abs() < 1e-9);
        assert!((davies_bouldin(&p, &l).unwrap() - 0.2).abs() < 1e-12);
        let relabeled = [7, 7, 3, 3];
        assert_eq!(
            ClusterIndices::compute(&p, &l).unwrap(),
            ClusterIndices::compute(&p, &relabeled).unwrap()
        );
    }

    #[test]
    fn coincident_clusters() {
        let p = line(&[1.0, 1.0, 9.0, 9.0]);
        let l = [0, 0, 1, 1];
        assert_eq!(silhouette(&p, &l).unwrap(), 1.0);
        assert_eq!(davies_bouldin(&p, &l).unwrap(), 0.0);
        assert!(calinski_harabasz(&p, &l).is_err());
        let all = line(&[4.0; 4]);
        assert_eq!(silhouette(&all, &l).unwrap(), 0.0);
        assert!(davies_bouldin(&all, &l).is_err());
    }

    #[test]
    fn single_cluster_rejected() {
        let p = line(&[0.0, 1.0]);
        assert!(silhouette(&p, &[0, 0]).is_err());
        assert!(calinski_harabasz(&p, &[0, 0]).is_err());
        assert!(davies_bouldin(&p, &[0, 0]).is_err());
        assert!(silhouette(&p, &[0]).is_err());
    }

    #[test]
    fn silhouette_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let c = i % 2;
            labels.push(c);
            for _ in 0..3 {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(z + 2.5 * c as f64);
            }
        }
        let p = Matrix::from_vec(20, 3, data).unwrap();
        let mut total = 0.0;
        for i in 0..20 {
            let mean_to = |c: usize| {
                let (s, n) = (0..20)
                    .filter(|&j| j != i && labels[j] == c)
                    .fold((0.0, 0), |(s, n), j| {
                        (s + euclidean(p.row(i), p.row(j)), n + 1)
                    });
                s / n as f64
            };
            let a = mean_to(labels[i]);
            let b = mean_to(1 - labels[i]);
            total += (b - a) / a.max(b);
        }
        let s = silhouette(&p, &labels).unwrap();
        assert!((s - total / 20.0).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn singleton_scores_zero() {
        let p = line(&[0.0, 1.0, 5.0]);
        // Points 0 and 1: a = 1, b = 5 and 4.
        let expected = ((5.0 - 1.0) / 5.0 + (4.0 - 1.0) / 4.0) / 3.0;
        assert!((silhouette(&p, &[0, 0, 1]).unwrap() - expected).abs() < 1e-15);
    }
}
