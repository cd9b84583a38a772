//! Small seeded fixtures shared by unit tests, integration tests and benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fusion::FusionDims;
use crate::model::{Model, ModelDims};
use crate::nn::layers::{l2_normalize, DenseLayer};
use crate::nn::matrix::Matrix;

pub const TINY_DIMS: ModelDims = ModelDims {
    fusion: FusionDims {
        audio_in: 5,
        visual_in: 6,
        hidden: 4,
    },
    age_hidden: 3,
};

/// A gradient-check batch: model, audio rows, visual rows.
pub struct TinyBatch {
    pub model: Model,
    pub audio: Matrix,
    pub visual: Matrix,
    pub seed: u64,
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// True when every output unit is positive on some rows and non-positive on
/// others. A unit positive on every row feeds batchnorm an affine copy of its
/// input, which makes its bias gradient exactly zero and leaves the finite
/// difference as pure rounding noise.
fn mixed_relu(layer: &DenseLayer, x: &Matrix) -> bool {
    let h = layer.forward(x).expect("shapes");
    (0..h.cols()).all(|c| {
        let pos = (0..h.rows()).filter(|&r| h.get(r, c) > 0.0).count();
        pos > 0 && pos < h.rows()
    })
}

fn normalized_rows(x: &Matrix) -> Matrix {
    let rows: Vec<Vec<f64>> = x
        .row_iter()
        .map(|r| l2_normalize(r).expect("nonzero"))
        .collect();
    Matrix::from_rows(&rows).expect("rectangular")
}

/// `rows` pairs at [`TINY_DIMS`] with a nonzero attention layer, redrawn from
/// successive seeds until every ReLU unit sees both signs.
pub fn tiny_batch(seed: u64, rows: usize) -> TinyBatch {
    for s in seed.. {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut model = Model::init(TINY_DIMS, &mut rng);
        for w in model.afn.attention.weight.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = 0.3 * z;
        }
        let audio = gaussian_matrix(rows, TINY_DIMS.fusion.audio_in, &mut rng);
        let visual = gaussian_matrix(rows, TINY_DIMS.fusion.visual_in, &mut rng);
        let Ok((fused, _)) = model.afn.forward_batch(&audio, &visual) else {
            continue;
        };
        if mixed_relu(&model.afn.audio.dense1, &normalized_rows(&audio))
            && mixed_relu(&model.afn.visual.dense1, &normalized_rows(&visual))
            && mixed_relu(&model.age_head.dense1, &fused.embeddings)
        {
            return TinyBatch {
                model,
                audio,
                visual,
                seed: s,
            };
        }
    }
    unreachable!("seed space exhausted")
}
