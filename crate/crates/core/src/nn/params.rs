//! Named views over trainable parameter storage.
//!
//! Every model type exposes its trainable values as an ordered list of flat
//! blocks. Gradient containers reuse the model type itself, so the two lists
//! line up index for index.

#[derive(Debug)]
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a [f64],
}

#[derive(Debug)]
pub struct ParamBlockMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
}

impl<'a> ParamBlock<'a> {
    pub fn new(name: impl Into<String>, values: &'a [f64]) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

impl<'a> ParamBlockMut<'a> {
    pub fn new(name: impl Into<String>, values: &'a mut [f64]) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

pub trait ParamSet {
    fn param_blocks(&self) -> Vec<ParamBlock<'_>>;
    fn param_blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>>;

    fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.values.len()).sum()
    }

    /// Concatenation of all blocks, in order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in self.param_blocks() {
            out.extend_from_slice(b.values);
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`].
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for b in self.param_blocks_mut() {
            let n = b.values.len();
            b.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter vector length");
    }

    fn squared_norm(&self) -> f64 {
        self.param_blocks()
            .iter()
            .flat_map(|b| b.values.iter())
            .map(|v| v * v)
            .sum()
    }

    fn scale_all(&mut self, s: f64) {
        for b in self.param_blocks_mut() {
            b.values.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Prefixes every block name with `prefix.`.
pub fn prefixed<'a>(prefix: &str, blocks: Vec<ParamBlock<'a>>) -> Vec<ParamBlock<'a>> {
    blocks
        .into_iter()
        .map(|b| ParamBlock::new(format!("{prefix}.{}", b.name), b.values))
        .collect()
}

pub fn prefixed_mut<'a>(prefix: &str, blocks: Vec<ParamBlockMut<'a>>) -> Vec<ParamBlockMut<'a>> {
    blocks
        .into_iter()
        .map(|b| ParamBlockMut::new(format!("{prefix}.{}", b.name), b.values))
        .collect()
}
