//! Binary block files.
//!
//! Every file starts with a 16-byte header: a 4-byte magic, a little-endian
//! `u32` format version, and two little-endian `u32` dimensions. The payload
//! follows, then a little-endian CRC32 of every preceding byte.
//!
//! * `ZSLF`: dense `rows x cols` row-major `f32` matrix.
//! * `ZSLC`: CSR with counts. `rows` = row count, `cols` = nnz; payload is
//!   `rows + 1` offsets, `nnz` column indices, `nnz` counts, all `u32`.
//! * `ZSLI`: CSR without values, same layout minus the counts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const BLOCK_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const MAGIC_MATRIX: &[u8; 4] = b"ZSLF";
const MAGIC_CSR_COUNTS: &[u8; 4] = b"ZSLC";
const MAGIC_CSR_INDEX: &[u8; 4] = b"ZSLI";

/// Raw CSR arrays as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Option<Vec<u32>>,
}

fn header(magic: &[u8; 4], rows: usize, cols: usize) -> Result<Vec<u8>> {
    let to_u32 = |x: usize| {
        u32::try_from(x).map_err(|_| Error::Shape(format!("dimension {x} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&BLOCK_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols)?.to_le_bytes());
    Ok(out)
}

fn finish(mut bytes: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    bytes
}

pub fn encode_matrix(m: &Matrix<f32>) -> Result<Vec<u8>> {
    let mut bytes = header(MAGIC_MATRIX, m.rows(), m.cols())?;
    bytes.reserve(m.as_slice().len() * 4 + 4);
    for x in m.as_slice() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    Ok(finish(bytes))
}

pub fn encode_csr(csr: &Csr) -> Result<Vec<u8>> {
    let rows = csr.offsets.len().saturating_sub(1);
    let nnz = csr.indices.len();
    let magic = if csr.values.is_some() {
        MAGIC_CSR_COUNTS
    } else {
        MAGIC_CSR_INDEX
    };
    let mut bytes = header(magic, rows, nnz)?;
    for &o in &csr.offsets {
        let o = u32::try_from(o).map_err(|_| Error::Shape("offset exceeds u32".into()))?;
        bytes.extend_from_slice(&o.to_le_bytes());
    }
    for &i in &csr.indices {
        bytes.extend_from_slice(&i.to_le_bytes());
    }
    if let Some(values) = &csr.values {
        for &v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(finish(bytes))
}

struct Checked<'a> {
    magic: [u8; 4],
    rows: usize,
    cols: usize,
    payload: &'a [u8],
}

/// Validates header, length and checksum; `payload_len` maps
/// `(magic, rows, cols)` to the expected payload size in bytes.
fn check<'a>(
    path: &Path,
    bytes: &'a [u8],
    accept: &[&[u8; 4]],
    payload_len: impl Fn(&[u8; 4], usize, usize) -> usize,
) -> Result<Checked<'a>> {
    if bytes.len() < HEADER_LEN + 4 {
        if bytes.len() >= 4 && !accept.iter().any(|m| &bytes[..4] == *m) {
            return Err(Error::BadMagic { path: path.into() });
        }
        return Err(Error::Truncated { path: path.into() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if !accept.contains(&&magic) {
        return Err(Error::BadMagic { path: path.into() });
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    let version = word(1);
    if version != BLOCK_VERSION {
        return Err(Error::VersionMismatch {
            path: path.into(),
            found: version,
            expected: BLOCK_VERSION,
        });
    }
    let (rows, cols) = (word(2) as usize, word(3) as usize);
    let want = HEADER_LEN + payload_len(&magic, rows, cols) + 4;
    if bytes.len() < want {
        return Err(Error::Truncated { path: path.into() });
    }
    if bytes.len() > want {
        return Err(Error::Shape(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - want
        )));
    }
    let body = &bytes[..want - 4];
    let stored = u32::from_le_bytes(bytes[want - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.into(),
            stored,
            computed,
        });
    }
    Ok(Checked {
        magic,
        rows,
        cols,
        payload: &body[HEADER_LEN..],
    })
}

fn u32s(bytes: &[u8]) -> impl Iterator<Item = u32> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<Matrix<f32>> {
    let c = check(path, bytes, &[MAGIC_MATRIX], |_, r, c| r * c * 4)?;
    let data = u32s(c.payload).map(f32::from_bits).collect();
    Ok(Matrix::from_vec(c.rows, c.cols, data))
}

pub fn decode_csr(path: &Path, bytes: &[u8]) -> Result<Csr> {
    let c = check(
        path,
        bytes,
        &[MAGIC_CSR_COUNTS, MAGIC_CSR_INDEX],
        |m, rows, nnz| {
            let vals = if m == MAGIC_CSR_COUNTS { nnz } else { 0 };
            (rows + 1 + nnz + vals) * 4
        },
    )?;
    let mut it = u32s(c.payload);
    let offsets: Vec<usize> = it.by_ref().take(c.rows + 1).map(|x| x as usize).collect();
    let indices: Vec<u32> = it.by_ref().take(c.cols).collect();
    let values = (&c.magic == MAGIC_CSR_COUNTS).then(|| it.collect());
    Ok(Csr {
        offsets,
        indices,
        values,
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix<f32>> {
    decode_matrix(path, &read_file(path)?)
}

pub fn read_csr(path: &Path) -> Result<Csr> {
    decode_csr(path, &read_file(path)?)
}

fn sibling_temp(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = sibling_temp(path);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(|e| Error::io(path, e))
}

/// A directory populated under a temporary name and moved into place by
/// [`AtomicDir::commit`]. Dropping without committing removes it.
pub struct AtomicDir {
    target: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl AtomicDir {
    pub fn create(target: &Path) -> Result<Self> {
        let staging = sibling_temp(target);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(AtomicDir {
            target: target.to_owned(),
            staging,
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.staging.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    }

    /// Replaces any existing target directory.
    pub fn commit(mut self) -> Result<()> {
        if self.target.exists() {
            let old = sibling_temp(&self.target).with_extension("old");
            fs::rename(&self.target, &old).map_err(|e| Error::io(&self.target, e))?;
            fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
            let _ = fs::remove_dir_all(&old);
        } else {
            fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for AtomicDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn header_layout() {
        let m = Matrix::from_vec(1, 2, vec![1.0f32, -2.0]);
        let b = encode_matrix(&m).unwrap();
        assert_eq!(&b[..4], b"ZSLF");
        assert_eq!(b.len(), 16 + 8 + 4);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), -2.0);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let m = Matrix::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]);
        let mut b = encode_matrix(&m).unwrap();
        b[20] ^= 0x40;
        assert!(matches!(decode_matrix(p(), &b), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_and_bad_magic() {
        let m = Matrix::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]);
        let b = encode_matrix(&m).unwrap();
        assert!(matches!(
            decode_matrix(p(), &b[..b.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_matrix(p(), &bad), Err(Error::BadMagic { .. })));
        let mut ver = b;
        ver[4] = 9;
        assert!(matches!(
            decode_matrix(p(), &ver),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    proptest! {
        #[test]
        fn matrix_roundtrip_is_bitwise(rows in 0usize..5, cols in 0usize..5, seed in any::<u64>()) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|k| f32::from_bits((seed.wrapping_mul(k as u64 + 7) >> 7) as u32 & 0x7f7f_ffff))
                .collect();
            let m = Matrix::from_vec(rows, cols, data);
            let back = decode_matrix(p(), &encode_matrix(&m).unwrap()).unwrap();
            prop_assert!(back.bit_eq(&m));
        }

        #[test]
        fn csr_roundtrip(rows in prop::collection::vec(prop::collection::vec(0u32..50, 0..6), 0..6), counts in any::<bool>()) {
            let mut offsets = vec![0];
            let mut indices = Vec::new();
            for r in &rows {
                indices.extend(r);
                offsets.push(indices.len());
            }
            let values = counts.then(|| indices.iter().map(|x| x + 1).collect());
            let csr = Csr { offsets, indices, values };
            prop_assert_eq!(decode_csr(p(), &encode_csr(&csr).unwrap()).unwrap(), csr);
        }
    }
}
