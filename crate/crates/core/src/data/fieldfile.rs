//! The `FFLD0001` field file.
//!
//! Layout (little-endian): magic, `u8` spatial ndim, `u8` time flag, `u32`
//! extents (time if flagged, spatial axes, channels), then the `f32` payload
//! in row-major order with the channel fastest.

use std::fs;
use std::path::Path;

use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::tensor::FieldTensor;

pub const FIELD_MAGIC: &[u8; 8] = b"FFLD0001";
const MAX_SPATIAL_DIMS: u8 = 3;

/// Contents of a field file: a single tensor or an ordered trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Tensor(FieldTensor),
    Trajectory(Vec<FieldTensor>),
}

impl FieldData {
    pub fn into_frames(self) -> Vec<FieldTensor> {
        match self {
            FieldData::Tensor(t) => vec![t],
            FieldData::Trajectory(f) => f,
        }
    }
}

fn header(out: &mut Vec<u8>, shape: &[usize], time: Option<usize>) {
    out.extend_from_slice(FIELD_MAGIC);
    out.push((shape.len() - 1) as u8);
    out.push(time.is_some() as u8);
    for e in time.iter().chain(shape) {
        out.extend_from_slice(&(*e as u32).to_le_bytes());
    }
}

fn payload(out: &mut Vec<u8>, t: &FieldTensor) {
    for v in t.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn encode_field(t: &FieldTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * t.shape().len() + 4 * t.as_slice().len());
    header(&mut out, t.shape(), None);
    payload(&mut out, t);
    out
}

pub fn encode_trajectory(frames: &[FieldTensor]) -> Result<Vec<u8>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::contract("a trajectory needs at least one frame"))?;
    if let Some(bad) = frames.iter().position(|f| f.shape() != first.shape()) {
        return Err(Error::contract(format!(
            "frame {bad} has shape {:?}, frame 0 has {:?}",
            frames[bad].shape(),
            first.shape()
        )));
    }
    let mut out = Vec::with_capacity(14 + 4 * first.shape().len() + 4 * first.as_slice().len() * frames.len());
    header(&mut out, first.shape(), Some(frames.len()));
    frames.iter().for_each(|f| payload(&mut out, f));
    Ok(out)
}

pub fn write_field_file(path: &Path, t: &FieldTensor) -> Result<()> {
    fs::write(path, encode_field(t)).map_err(|e| Error::io(path, e))
}

pub fn write_trajectory_file(path: &Path, frames: &[FieldTensor]) -> Result<()> {
    fs::write(path, encode_trajectory(frames)?).map_err(|e| Error::io(path, e))
}

pub fn read_field_file(path: &Path) -> Result<FieldData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes, path)
}

pub fn decode_field(bytes: &[u8], path: &Path) -> Result<FieldData> {
    let mut r = Reader::new(bytes, path);
    if r.take(8, "magic")? != FIELD_MAGIC {
        return Err(r.fail("bad magic, not a field file"));
    }
    let ndim = r.u8("ndim")?;
    if ndim == 0 || ndim > MAX_SPATIAL_DIMS {
        return Err(r.fail(format!("spatial ndim {ndim} outside 1..={MAX_SPATIAL_DIMS}")));
    }
    let time = match r.u8("time flag")? {
        0 => false,
        1 => true,
        f => return Err(r.fail(format!("time flag must be 0 or 1, got {f}"))),
    };
    let frames = if time { r.u32("time extent")? as usize } else { 1 };
    let mut shape = Vec::with_capacity(ndim as usize + 1);
    for a in 0..=ndim {
        shape.push(r.u32(&format!("extent {a}"))? as usize);
    }
    if frames == 0 || shape.contains(&0) {
        return Err(r.fail(format!("zero extent in shape {shape:?} with {frames} frames")));
    }
    let frame_len = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| r.fail(format!("extents {shape:?} overflow")))?;
    let bytes_needed = frame_len
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| r.fail(format!("{frames} frames of {shape:?} overflow")))?;
    let raw = r.take(bytes_needed, "payload")?;
    if r.remaining() != 0 {
        return Err(r.fail(format!("{} trailing bytes after payload", r.remaining())));
    }
    let mut out = Vec::with_capacity(frames);
    for chunk in raw.chunks_exact(4 * frame_len) {
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.push(FieldTensor::new(shape.clone(), data).map_err(|e| r.fail(e.to_string()))?);
    }
    Ok(if time {
        FieldData::Trajectory(out)
    } else {
        FieldData::Tensor(out.pop().unwrap())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_field;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p() -> &'static Path {
        Path::new("mem.ffld")
    }

    #[test]
    fn trajectory_file_size() {
        let frames = vec![FieldTensor::zeros(vec![32, 32, 1]).unwrap(); 16];
        // magic + two flag bytes + four u32 extents + payload
        assert_eq!(encode_trajectory(&frames).unwrap().len(), 8 + 2 + 4 * 4 + 16 * 32 * 32 * 4);
        assert_eq!(encode_trajectory(&frames).unwrap().len(), 65_562);
    }

    #[test]
    fn empty_payload_is_truncation() {
        let mut bytes = encode_field(&FieldTensor::zeros(vec![4, 4, 1]).unwrap());
        bytes.truncate(8 + 2 + 12);
        let err = decode_field(&bytes, p()).unwrap_err();
        assert!(matches!(&err, Error::Format { detail, .. } if detail.contains("truncated payload")));
    }

    #[test]
    fn rejects_bad_headers() {
        let good = encode_field(&FieldTensor::zeros(vec![2, 2, 1]).unwrap());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_field(&bad, p()), Err(Error::Format { .. })));
        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(decode_field(&bad, p()), Err(Error::Format { .. })));
        let mut bad = good.clone();
        bad[9] = 2;
        assert!(matches!(decode_field(&bad, p()), Err(Error::Format { .. })));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode_field(&bad, p()), Err(Error::Format { .. })));
    }

    #[test]
    fn huge_extents_overflow_cleanly() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FIELD_MAGIC);
        bytes.extend_from_slice(&[3, 1]);
        for _ in 0..5 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        let err = decode_field(&bytes, p()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut bytes = encode_field(&FieldTensor::zeros(vec![2, 1]).unwrap());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_field(&bytes, p()), Err(Error::Format { .. })));
    }

    #[test]
    fn file_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ffld");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames: Vec<_> = (0..3).map(|_| random_field(&[4, 5, 2], &mut rng)).collect();
        write_trajectory_file(&path, &frames).unwrap();
        let back = read_field_file(&path).unwrap().into_frames();
        assert_eq!(back.len(), 3);
        assert!(matches!(read_field_file(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_within_f32_precision(seed in 0u64..200, dims in 1usize..4, traj in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut shape: Vec<usize> = (0..dims).map(|a| 2 + (seed as usize + a) % 4).collect();
            shape.push(1 + seed as usize % 3);
            let frames: Vec<_> = (0..if traj { 3 } else { 1 }).map(|_| random_field(&shape, &mut rng)).collect();
            let bytes = if traj { encode_trajectory(&frames).unwrap() } else { encode_field(&frames[0]) };
            let back = decode_field(&bytes, p()).unwrap();
            prop_assert_eq!(matches!(back, FieldData::Trajectory(_)), traj);
            let back = back.into_frames();
            prop_assert_eq!(back.len(), frames.len());
            for (a, b) in back.iter().zip(&frames) {
                prop_assert_eq!(a.shape(), b.shape());
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    prop_assert!((x - y).abs() <= 1.2e-7 * y.abs().max(f64::MIN_POSITIVE));
                }
            }
        }
    }
}
