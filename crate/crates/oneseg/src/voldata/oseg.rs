//! The OSEG binary tensor format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "OSEG" (4 bytes) | version: u32 = 1 | dtype: u32 | ndim: u32 | dims: ndim x u32 | payload
//! ```
//!
//! dtype 0 is f32, dtype 1 is u8. Rank is 3 (slice, row, col) or 4
//! (slice, row, col, channel) and the payload is in C order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"OSEG";
pub const VERSION: u32 = 1;

pub const DTYPE_F32: u32 = 0;
pub const DTYPE_U8: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u32 {
        match self {
            Payload::F32(_) => DTYPE_F32,
            Payload::U8(_) => DTYPE_U8,
        }
    }

    fn elem_size(&self) -> usize {
        match self {
            Payload::F32(_) => 4,
            Payload::U8(_) => 1,
        }
    }
}

/// A raw tensor as stored on disk, before any normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct OsegTensor {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl OsegTensor {
    pub fn new(dims: Vec<usize>, payload: Payload) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.len() != 3 && dims.len() != 4 {
            return Err(Error::validation(format!(
                "OSEG tensors must have rank 3 or 4, got {}",
                dims.len()
            )));
        }
        if payload.len() != n {
            return Err(Error::shape(
                "OSEG payload",
                format!("{n} elements"),
                format!("{} elements", payload.len()),
            ));
        }
        Ok(OsegTensor { dims, payload })
    }

    /// Header length in bytes for this tensor's rank.
    pub fn header_len(&self) -> usize {
        header_len(self.dims.len())
    }

    pub fn file_len(&self) -> usize {
        self.header_len() + self.payload.len() * self.payload.elem_size()
    }
}

pub fn header_len(ndim: usize) -> usize {
    4 + 4 + 4 + 4 + 4 * ndim
}

pub fn write(path: &Path, tensor: &OsegTensor) -> Result<()> {
    let mut buf = Vec::with_capacity(tensor.file_len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&tensor.payload.dtype().to_le_bytes());
    buf.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match &tensor.payload {
        Payload::F32(v) => {
            for &x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        Payload::U8(v) => buf.extend_from_slice(v),
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<OsegTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected: 16,
            actual: bytes.len() as u64,
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: String::from_utf8_lossy(&bytes[0..4]).into_owned(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dtype = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
        return Err(Error::BadDtype {
            path: path.to_path_buf(),
            dtype,
        });
    }
    let ndim = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if ndim != 3 && ndim != 4 {
        return Err(Error::BadRank {
            path: path.to_path_buf(),
            ndim,
        });
    }
    let hdr = header_len(ndim as usize);
    if bytes.len() < hdr {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected: hdr as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for i in 0..ndim as usize {
        let off = 16 + 4 * i;
        dims.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let count: usize = dims.iter().product();
    let elem = if dtype == DTYPE_F32 { 4 } else { 1 };
    let expected = hdr + count * elem;
    if bytes.len() != expected {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let body = &bytes[hdr..];
    let payload = if dtype == DTYPE_F32 {
        let mut v = Vec::with_capacity(count);
        for chunk in body.chunks_exact(4) {
            v.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        Payload::F32(v)
    } else {
        Payload::U8(body.to_vec())
    };
    Ok(OsegTensor { dims, payload })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_arithmetic() {
        // rank-3 header: magic + version + dtype + ndim + 3 dims
        assert_eq!(header_len(3), 28);
        assert_eq!(header_len(4), 32);
        let t = OsegTensor::new(vec![1, 8, 8], Payload::F32(vec![0.0; 64])).unwrap();
        assert_eq!(t.file_len(), 28 + 256);
    }

    #[test]
    fn round_trip_bytes_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let dims = if case % 2 == 0 {
                vec![
                    rng.random_range(1..4usize),
                    rng.random_range(1..9usize),
                    rng.random_range(1..9usize),
                ]
            } else {
                vec![
                    rng.random_range(1..3usize),
                    rng.random_range(1..6usize),
                    rng.random_range(1..6usize),
                    rng.random_range(1..4usize),
                ]
            };
            let n: usize = dims.iter().product();
            let payload = if case % 3 == 0 {
                Payload::U8((0..n).map(|_| rng.random_range(0..=255u32) as u8).collect())
            } else {
                Payload::F32((0..n).map(|_| rng.random_range(-10.0..10.0f32)).collect())
            };
            let t = OsegTensor::new(dims, payload).unwrap();
            let path = dir.path().join(format!("t{case}.oseg"));
            write(&path, &t).unwrap();
            let back = read(&path).unwrap();
            assert_eq!(t, back, "case {case}");
            // and the second write is byte-identical
            let path2 = dir.path().join(format!("t{case}b.oseg"));
            write(&path2, &back).unwrap();
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&path2).unwrap()
            );
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.oseg");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"XSEG");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for d in [1u32, 8, 8] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&vec![0u8; 256]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.oseg");
        let t = OsegTensor::new(vec![2, 8, 8], Payload::F32(vec![0.5; 128])).unwrap();
        write(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read(&path), Err(Error::PayloadSize { .. })));
    }

    #[test]
    fn rejects_bad_dtype_and_rank() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dtype.oseg");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&7u32.to_le_bytes()); // unknown dtype
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for d in [1u32, 8, 8] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read(&path), Err(Error::BadDtype { dtype: 7, .. })));

        let path = dir.path().join("rank.oseg");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes()); // rank 2 unsupported
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read(&path), Err(Error::BadRank { ndim: 2, .. })));
    }
}
