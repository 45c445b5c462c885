//! Binary checkpoints.
//!
//! Layout (little-endian): magic `FFCKPT01`, a format-version byte, a `u32`
//! count of config entries each stored as `u16` key length, key, `u32` value
//! length, value text; then a `u32` parameter count and per parameter a `u16`
//! name length, name, `u8` rank, `u32` extents and the `f64` payload.

use std::fs;
use std::path::Path;

use super::config::FactFormerConfig;
use super::factformer::FactFormer;
use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::nn::Module;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FFCKPT01";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_checkpoint(model: &FactFormer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    let pairs = model.config().to_pairs();
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    for (k, v) in &pairs {
        out.extend_from_slice(&(k.len() as u16).to_le_bytes());
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        out.extend_from_slice(v.as_bytes());
    }
    let mut count = 0u32;
    model.visit(&mut |_| count += 1);
    out.extend_from_slice(&count.to_le_bytes());
    model.visit(&mut |p| {
        out.extend_from_slice(&(p.name().len() as u16).to_le_bytes());
        out.extend_from_slice(p.name().as_bytes());
        out.push(2);
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

pub fn save_checkpoint(model: &FactFormer, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FactFormer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Rebuilds the model from its embedded config, then overwrites every
/// parameter with the stored values after checking names and shapes.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<FactFormer> {
    let mut r = Reader::new(bytes, path);
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.fail("bad magic, not a checkpoint"));
    }
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let n_cfg = r.u32("config count")?;
    let mut pairs = Vec::with_capacity(n_cfg as usize);
    for _ in 0..n_cfg {
        let kl = r.u16("config key length")? as usize;
        let key = r.string(kl, "config key")?;
        let vl = r.u32("config value length")? as usize;
        let value = r.string(vl, "config value")?;
        pairs.push((key, value));
    }
    let config = FactFormerConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| r.fail(format!("embedded config: {e}")))?;
    let mut model = FactFormer::new(config)?;
    let n_params = r.u32("parameter count")? as usize;
    let mut expected = 0;
    model.visit(&mut |_| expected += 1);
    if n_params != expected {
        return Err(r.fail(format!("{n_params} parameters stored, config implies {expected}")));
    }
    let mut records = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let nl = r.u16("parameter name length")? as usize;
        let name = r.string(nl, "parameter name")?;
        let rank = r.u8("parameter rank")? as usize;
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(r.u32("parameter extent")? as usize);
        }
        let len = extents
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| r.fail(format!("extents of {name} overflow")))?;
        let raw = r.take(len, "parameter payload")?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        records.push((name, extents, values));
    }
    if r.remaining() != 0 {
        return Err(r.fail(format!("{} trailing bytes", r.remaining())));
    }
    let mut mismatch = None;
    let mut it = records.into_iter();
    model.visit_mut(&mut |p| {
        let (name, extents, values) = it.next().expect("count checked above");
        if mismatch.is_some() {
            return;
        }
        if name != p.name() || extents != [p.value.rows(), p.value.cols()] {
            mismatch = Some(format!(
                "stored parameter {name} {extents:?} does not match {} [{}, {}]",
                p.name(),
                p.value.rows(),
                p.value.cols()
            ));
            return;
        }
        p.value.as_mut_slice().copy_from_slice(&values);
    });
    if let Some(m) = mismatch {
        return Err(r.fail(m));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained_like() -> FactFormer {
        let mut m = FactFormer::new(FactFormerConfig {
            grid: vec![4, 4],
            context: 2,
            width: 8,
            depth: 1,
            heads: 2,
            head_dim: 4,
            march_steps: 2,
            seed: 11,
            ..FactFormerConfig::default()
        })
        .unwrap();
        // Perturb so the file does not just mirror the seeded init.
        m.visit_mut(&mut |p| {
            p.value.as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| *v += 1e-3 * (i as f64).cos());
        });
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = trained_like();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back), bytes);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ctx: Vec<_> = (0..2).map(|_| random_field(&[4, 4, 1], &mut rng)).collect();
        assert_eq!(back.predict(&ctx).unwrap(), m.predict(&ctx).unwrap());
    }

    #[test]
    fn rejects_tampering() {
        let bytes = encode_checkpoint(&trained_like());
        let p = Path::new("mem");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode_checkpoint(&bad, p).unwrap_err().to_string().contains("version"));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], p).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let m = trained_like();
        let mut bytes = encode_checkpoint(&m);
        // The first parameter record is encoder.w with extents [2, 8]; claim [2, 7].
        let name = b"encoder.w";
        let at = bytes.windows(name.len()).position(|w| w == name).unwrap() + name.len() + 1 + 4;
        bytes[at..at + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(decode_checkpoint(&bytes, Path::new("mem")).is_err());
    }
}
