//! Verification scoring, equal error rate, distance distributions and
//! cluster-validity indices.

mod cluster;
mod distance;
mod eer;

pub use cluster::{calinski_harabasz, davies_bouldin, silhouette, ClusterIndices};
pub use distance::{
    distance_distributions, euclidean, histogram, write_histogram_csv, DistanceDistributions,
    HistogramBin, DEFAULT_BIN_WIDTH,
};
pub use eer::{cosine_score, eer, write_score_csv, Eer, TrialScore};

/// Rounds to 12 decimals before printing so grid edges such as `3 × 0.02`
/// serialize as `0.06`.
pub(crate) fn fmt_edge(x: f64) -> String {
    let r = (x * 1e12).round() / 1e12;
    format!("{r}")
}
