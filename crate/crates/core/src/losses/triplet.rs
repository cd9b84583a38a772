//! Squared-distance triplet loss with batch-hard mining, used as the
//! metric-learning baseline.

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 0.2 }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::Config(format!(
                "triplet margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gradients of one triplet term with respect to anchor, positive and negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrads {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)` and its gradients (zero when inactive).
pub fn triplet_term(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    cfg: TripletConfig,
) -> (f64, TripletGrads) {
    let value = sq_dist(anchor, positive) - sq_dist(anchor, negative) + cfg.margin;
    let d = anchor.len();
    if value <= 0.0 {
        return (
            0.0,
            TripletGrads {
                anchor: vec![0.0; d],
                positive: vec![0.0; d],
                negative: vec![0.0; d],
            },
        );
    }
    let mut g = TripletGrads {
        anchor: Vec::with_capacity(d),
        positive: Vec::with_capacity(d),
        negative: Vec::with_capacity(d),
    };
    for t in 0..d {
        g.anchor.push(2.0 * (negative[t] - positive[t]));
        g.positive.push(-2.0 * (anchor[t] - positive[t]));
        g.negative.push(2.0 * (anchor[t] - negative[t]));
    }
    (value, g)
}

/// Sum over anchors of the triplet term with the farthest same-label positive
/// and nearest other-label negative. Ties go to the lowest row index.
/// Returns the loss and `∂L/∂embeddings`.
pub fn batch_hard_triplet_loss(
    embeddings: &Matrix,
    labels: &[usize],
    cfg: TripletConfig,
) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    let rows = embeddings.rows();
    if labels.len() != rows {
        return Err(Error::shape(
            "triplet_loss",
            format!("{rows} labels"),
            labels.len(),
        ));
    }
    let mut dist = vec![0.0; rows * rows];
    for a in 0..rows {
        for b in a + 1..rows {
            let d = sq_dist(embeddings.row(a), embeddings.row(b));
            dist[a * rows + b] = d;
            dist[b * rows + a] = d;
        }
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(rows, embeddings.cols());
    let mut valid = 0usize;
    for a in 0..rows {
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for b in 0..rows {
            if b == a {
                continue;
            }
            let d = dist[a * rows + b];
            if labels[b] == labels[a] {
                if pos.map_or(true, |p| d > dist[a * rows + p]) {
                    pos = Some(b);
                }
            } else if neg.map_or(true, |n| d < dist[a * rows + n]) {
                neg = Some(b);
            }
        }
        let (Some(p), Some(n)) = (pos, neg) else {
            continue;
        };
        valid += 1;
        let (v, g) = triplet_term(embeddings.row(a), embeddings.row(p), embeddings.row(n), cfg);
        if v == 0.0 {
            continue;
        }
        loss += v;
        for (dst, src) in [(a, &g.anchor), (p, &g.positive), (n, &g.negative)] {
            for (x, y) in grad.row_mut(dst).iter_mut().zip(src) {
                *x += y;
            }
        }
    }
    if valid == 0 {
        return Err(Error::InvalidInput(
            "batch has no anchor with both a positive and a negative".into(),
        ));
    }
    Ok((loss, grad))
}
