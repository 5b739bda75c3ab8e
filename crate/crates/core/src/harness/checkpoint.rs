//! Binary parameter checkpoints.
//!
//! Layout: the magic bytes `RPW1`, one version byte, then one record per
//! tensor: name length (u64 LE), UTF-8 name, rank (u8), each extent (u64
//! LE), and the values (f64 LE) in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::diffcore::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"RPW1";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match the model: missing {missing:?}, unexpected {extra:?}")]
    Mismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("tensor {name:?} has shape {found:?}, model expects {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes every parameter in [`ParamSet`] order.
pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamSet) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.dims().len() as u8])?;
        for &d in t.dims() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated,
        _ => CheckpointError::Io(e),
    })
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads every `(name, tensor)` record.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut head = [0u8; 5];
    let mut got = 0;
    while got < 5 {
        match r.read(&mut head[got..])? {
            0 => break,
            k => got += k,
        }
    }
    if got < 4 || &head[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if got < 5 {
        return Err(CheckpointError::Truncated);
    }
    if head[4] != VERSION {
        return Err(CheckpointError::BadVersion(head[4]));
    }
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 1];
        if r.read(&mut first)? == 0 {
            return Ok(out);
        }
        let mut rest = [0u8; 7];
        read_exact(&mut r, &mut rest)?;
        let mut lb = [0u8; 8];
        lb[0] = first[0];
        lb[1..].copy_from_slice(&rest);
        let len = u64::from_le_bytes(lb) as usize;
        if len > 1 << 16 {
            return Err(CheckpointError::Malformed(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Malformed("name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank)?;
        let dims = (0..rank[0]).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.filter(|&n| n < 1 << 32).ok_or_else(|| CheckpointError::Malformed(format!("extents {dims:?}")))?;
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut r, &mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let t = Tensor::new(&dims, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        out.push((name, t));
    }
}

/// Replaces the values of `params` with the checkpoint's. Every model
/// tensor must be present with the same shape, and no extra tensors may
/// appear.
pub fn load_into(params: &mut ParamSet, records: Vec<(String, Tensor)>) -> Result<(), CheckpointError> {
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let extra: Vec<String> = records.iter().filter(|(n, _)| params.id(n).is_none()).map(|(n, _)| n.clone()).collect();
    let missing: Vec<String> = names.iter().filter(|n| !records.iter().any(|(r, _)| r == *n)).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CheckpointError::Mismatch { missing, extra });
    }
    for (name, t) in &records {
        let id = params.id(name).expect("checked above");
        let expected = params.get(id).dims().to_vec();
        if expected != t.dims() {
            return Err(CheckpointError::Shape { name: name.clone(), expected, found: t.dims().to_vec() });
        }
    }
    for (name, t) in records {
        let id = params.id(&name).expect("checked above");
        *params.get_mut(id) = t;
    }
    Ok(())
}

pub fn save(path: &Path, params: &ParamSet) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path, params: &mut ParamSet) -> Result<(), CheckpointError> {
    let bytes = std::fs::read(path)?;
    load_into(params, read_checkpoint(&bytes[..])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        ps.add_uniform("a.w", &[3, 2], 1.0, &mut rng).unwrap();
        ps.add_uniform("a.b", &[2], 1.0, &mut rng).unwrap();
        ps.add("s", Tensor::scalar(0.1 + 0.2).unwrap());
        ps
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ps = params(0);
        let mut first = Vec::new();
        write_checkpoint(&mut first, &ps).unwrap();
        let mut other = params(1);
        load_into(&mut other, read_checkpoint(&first[..]).unwrap()).unwrap();
        for ((_, a), (_, b)) in ps.iter().zip(other.iter()) {
            assert_eq!(a.data(), b.data());
        }
        let mut second = Vec::new();
        write_checkpoint(&mut second, &other).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn header_and_truncation_errors() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &params(0)).unwrap();
        assert!(matches!(read_checkpoint(&b"NOPE\x01"[..]), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(read_checkpoint(&v2[..]), Err(CheckpointError::BadVersion(2))));
        for cut in [5 + 3, 5 + 8 + 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut]), Err(CheckpointError::Truncated)), "cut {cut}");
        }
    }

    #[test]
    fn mismatched_architecture_lists_names() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &params(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut other = ParamSet::new();
        other.add_uniform("a.w", &[3, 2], 1.0, &mut rng).unwrap();
        other.add_uniform("c", &[1], 1.0, &mut rng).unwrap();
        match load_into(&mut other, read_checkpoint(&bytes[..]).unwrap()) {
            Err(CheckpointError::Mismatch { missing, extra }) => {
                assert_eq!(missing, vec!["c".to_string()]);
                assert_eq!(extra, vec!["a.b".to_string(), "s".to_string()]);
            }
            other => panic!("{other:?}"),
        }
        let mut wrong = ParamSet::new();
        wrong.add("a.w", Tensor::zeros(&[2, 3]).unwrap());
        wrong.add("a.b", Tensor::zeros(&[2]).unwrap());
        wrong.add("s", Tensor::scalar(0.0).unwrap());
        assert!(matches!(load_into(&mut wrong, read_checkpoint(&bytes[..]).unwrap()), Err(CheckpointError::Shape { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rpw");
        let ps = params(3);
        save(&path, &ps).unwrap();
        let mut back = params(4);
        load(&path, &mut back).unwrap();
        assert_eq!(ps.values(), back.values());
    }
}
