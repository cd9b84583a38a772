//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field                | type                         |
//! |----------------------|------------------------------|
//! | magic                | 8 bytes `AVSVCKPT`           |
//! | version              | u32 (currently 1)            |
//! | audio_in, visual_in  | u32, u32                     |
//! | hidden, age_hidden   | u32, u32                     |
//! | block count          | u32                          |
//! | per block: name      | u16 length + UTF-8 bytes     |
//! | per block: values    | u32 count + count × f32      |
//!
//! Blocks follow [`ParamSet::param_blocks`] order for [`Model`], then the
//! batchnorm running statistics: `afn.audio.bn`, `afn.visual.bn`, `age.bn`,
//! each as `running_mean` then `running_var`. Loading requires the exact
//! block sequence implied by the header dimensions.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::FusionDims;
use crate::model::{Model, ModelDims};
use crate::nn::batchnorm::Mode;
use crate::nn::params::ParamSet;

pub const MAGIC: &[u8; 8] = b"AVSVCKPT";
pub const VERSION: u32 = 1;
/// Three batchnorm layers, two statistics each.
const RUNNING_STAT_BLOCKS: usize = 6;

fn blocks(model: &Model) -> Vec<(String, &[f64])> {
    let mut v: Vec<(String, &[f64])> = model
        .param_blocks()
        .into_iter()
        .map(|b| (b.name, b.values))
        .collect();
    for (prefix, bn) in [
        ("afn.audio.bn", &model.afn.audio.bn),
        ("afn.visual.bn", &model.afn.visual.bn),
        ("age.bn", &model.age_head.bn),
    ] {
        v.push((format!("{prefix}.running_mean"), &bn.running_mean));
        v.push((format!("{prefix}.running_var"), &bn.running_var));
    }
    v
}

/// Serializes `model`; values are rounded to f32.
pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let dims = model.dims();
    let blocks = blocks(model);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        dims.fusion.audio_in as u32,
        dims.fusion.visual_in as u32,
        dims.fusion.hidden as u32,
        dims.age_hidden as u32,
        blocks.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (name, values) in blocks {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for &x in values {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Parses a checkpoint. The returned model is in eval mode.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "not a model checkpoint (bad magic)".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mut dim = |what| r.u32(what).map(|v| v as usize);
    let dims = ModelDims {
        fusion: FusionDims {
            audio_in: dim("audio_in")?,
            visual_in: dim("visual_in")?,
            hidden: dim("hidden")?,
        },
        age_hidden: dim("age_hidden")?,
    };
    if [
        dims.fusion.audio_in,
        dims.fusion.visual_in,
        dims.fusion.hidden,
        dims.age_hidden,
    ]
    .contains(&0)
    {
        return Err(Error::Checkpoint(format!(
            "zero dimension in header: {dims:?}"
        )));
    }
    let count = r.u32("block count")? as usize;
    // Shapes only; every value is overwritten below.
    let mut model = Model::init(dims, &mut ChaCha8Rng::seed_from_u64(0));
    let expected_names: Vec<(String, usize)> = blocks(&model)
        .into_iter()
        .map(|(n, v)| (n, v.len()))
        .collect();
    if count != expected_names.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} blocks for {dims:?}, found {count}",
            expected_names.len()
        )));
    }
    let mut decoded: Vec<Vec<f64>> = Vec::with_capacity(count);
    for (want_name, want_len) in &expected_names {
        let len = r.u16("block name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "block name")?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        if name != want_name {
            return Err(Error::Checkpoint(format!(
                "expected block `{want_name}`, found `{name}`"
            )));
        }
        let n = r.u32("value count")? as usize;
        if n != *want_len {
            return Err(Error::Checkpoint(format!(
                "block `{name}` has {n} values, expected {want_len}"
            )));
        }
        let raw = r.take(n * 4, name)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "block `{name}` holds non-finite values"
            )));
        }
        decoded.push(values);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last block",
            bytes.len() - r.pos
        )));
    }
    let n_params = decoded.len() - RUNNING_STAT_BLOCKS;
    let flat: Vec<f64> = decoded[..n_params].concat();
    model.assign_flat(&flat);
    let mut stats = decoded.drain(n_params..);
    for bn in [
        &mut model.afn.audio.bn,
        &mut model.afn.visual.bn,
        &mut model.age_head.bn,
    ] {
        bn.running_mean = stats.next().expect("running mean block");
        bn.running_var = stats.next().expect("running variance block");
        if bn.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Checkpoint("negative running variance".into()));
        }
    }
    drop(stats);
    model.ge2e.clamp();
    model.set_mode(Mode::Eval);
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{tiny_batch, TINY_DIMS};

    fn trained_looking() -> Model {
        let mut m = tiny_batch(3, 6).model;
        m.afn.audio.bn.running_mean[1] = 0.25;
        m.age_head.bn.running_var[0] = 2.5;
        m.ge2e.sim_w = 7.5;
        m
    }

    #[test]
    fn round_trip_within_f32() {
        let m = trained_looking();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.dims(), TINY_DIMS);
        for (a, b) in m.flatten().iter().zip(back.flatten()) {
            assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0), "{a} vs {b}");
        }
        assert_eq!(back.afn.audio.bn.running_mean[1], 0.25);
        assert_eq!(back.age_head.bn.running_var[0], 2.5);
        assert_eq!(back.afn.mode(), Mode::Eval);
        // Values already at f32 precision survive bit-exactly.
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn header_and_block_order() {
        let bytes = encode_checkpoint(&trained_looking());
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(
            u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            VERSION
        );
        let name_len = u16::from_le_bytes(bytes[32..34].try_into().unwrap()) as usize;
        assert_eq!(&bytes[34..34 + name_len], b"afn.audio.dense1.weight");
    }

    #[test]
    fn rejects_corruption() {
        let good = encode_checkpoint(&trained_looking());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_checkpoint(&bad_magic).is_err());
        let mut bad_version = good.clone();
        bad_version[8] = 9;
        assert!(decode_checkpoint(&bad_version).is_err());
        assert!(decode_checkpoint(&good[..good.len() - 1]).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(decode_checkpoint(&trailing).is_err());
        // Header claims a wider hidden layer than the blocks hold.
        let mut wrong_dim = good.clone();
        wrong_dim[20] += 1;
        let err = decode_checkpoint(&wrong_dim).unwrap_err().to_string();
        assert!(err.contains("values"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = trained_looking();
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), encode_checkpoint(&m));
        load_checkpoint(&p).unwrap();
        assert!(load_checkpoint(dir.path().join("missing")).is_err());
    }
}
