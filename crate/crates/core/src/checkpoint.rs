//! Parameter checkpoint files.
//!
//! Layout: magic `"CGAN"`, format version (u32), then one entry per
//! parameter in registration order: name length (u16), name bytes, rank (u8),
//! extents (u64 each), payload (little-endian f64). The writer emits
//! parameters in a model's fixed registration order, so saving an unmodified
//! model reproduces a loaded file byte for byte.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::binio::{self, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CGAN";
pub const VERSION: u32 = 1;

fn corrupt(path: &Path, msg: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Serialize named parameters to the checkpoint byte format.
pub fn encode_params(params: &[Tensor]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    binio::write_u32(&mut buf, VERSION).expect("vec write");
    for p in params {
        let name = p.name().ok_or_else(|| {
            Error::CheckpointMismatch(format!("unnamed tensor #{} cannot be saved", p.id))
        })?;
        let name_bytes = name.as_bytes();
        binio::write_u16(&mut buf, name_bytes.len() as u16).expect("vec write");
        buf.extend_from_slice(name_bytes);
        let shape = p.shape();
        buf.push(shape.len() as u8);
        for &e in &shape {
            binio::write_u64(&mut buf, e as u64).expect("vec write");
        }
        for v in p.data().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Write a checkpoint atomically.
pub fn save(path: &Path, params: &[Tensor]) -> Result<()> {
    write_atomic(path, &encode_params(params)?)
}

/// A parameter entry read back from a checkpoint.
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Read all entries of a checkpoint, in file order.
pub fn read_entries(path: &Path) -> Result<Vec<Entry>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    binio::read_exact(&mut r, &mut magic).map_err(|_| corrupt(path, "missing magic"))?;
    if &magic != MAGIC {
        return Err(corrupt(path, "bad magic, not a parameter checkpoint"));
    }
    let version = binio::read_u32(&mut r).map_err(|_| corrupt(path, "missing version"))?;
    if version != VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let mut entries = Vec::new();
    loop {
        let name_len = match binio::read_u16(&mut r) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(_) => return Err(corrupt(path, "truncated entry header")),
        };
        let mut name_bytes = vec![0u8; name_len];
        binio::read_exact(&mut r, &mut name_bytes)
            .map_err(|_| corrupt(path, "truncated parameter name"))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| corrupt(path, "parameter name is not UTF-8"))?;
        let rank = binio::read_u8(&mut r).map_err(|_| corrupt(path, "truncated rank"))?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let e = binio::read_u64(&mut r).map_err(|_| corrupt(path, "truncated extents"))?;
            shape.push(e as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 8];
        r.read_exact(&mut payload)
            .map_err(|_| corrupt(path, format!("truncated payload for {name}")))?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(corrupt(path, format!("non-finite values in {name}")));
        }
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

/// Load a checkpoint into an existing parameter list. Names, order, and
/// shapes must match exactly.
pub fn load_into(path: &Path, params: &[Tensor]) -> Result<()> {
    let entries = read_entries(path)?;
    if entries.len() != params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "{} entries in {} but model has {} parameters",
            entries.len(),
            path.display(),
            params.len()
        )));
    }
    for (entry, p) in entries.iter().zip(params) {
        let pname = p.name().unwrap_or_default();
        if entry.name != pname {
            return Err(Error::CheckpointMismatch(format!(
                "expected parameter {pname}, found {}",
                entry.name
            )));
        }
        if entry.shape != p.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "{}: shape {:?} in file, {:?} in model",
                entry.name,
                entry.shape,
                p.shape()
            )));
        }
        p.set_data(&entry.data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("vdgan-ckpt-test-{}-{}", std::process::id(), name));
        p
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let a = Tensor::param("m.weight", vec![1.0, -2.5, 3.25, 0.125], &[2, 2]).unwrap();
        let b = Tensor::param("m.bias", vec![0.5, -0.5], &[2]).unwrap();
        let params = vec![a, b];
        let path = temp_path("roundtrip");
        save(&path, &params).unwrap();
        let first = std::fs::read(&path).unwrap();

        // mutate, reload, re-save
        params[0].set_data(&[9.0, 9.0, 9.0, 9.0]).unwrap();
        load_into(&path, &params).unwrap();
        assert_eq!(params[0].to_vec(), vec![1.0, -2.5, 3.25, 0.125]);
        save(&path, &params).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Tensor::param("w", vec![1.0, 2.0], &[2]).unwrap();
        let path = temp_path("shape");
        save(&path, &[p]).unwrap();
        let other = Tensor::param("w", vec![1.0, 2.0, 3.0], &[3]).unwrap();
        assert!(load_into(&path, &[other]).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = temp_path("magic");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(read_entries(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
