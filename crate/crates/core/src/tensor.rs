//! The PPTN1 binary tensor format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PPTN" 0x01 | dtype u8 (0 = f32, 1 = f64) | rank u8 | rank x u64 dims | row-major payload
//! ```
//!
//! Writing is byte-for-byte deterministic; reading rejects anything that is
//! not exactly one well-formed tensor.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PPTN";
pub const VERSION: u8 = 0x01;
pub const MAX_RANK: usize = 4;

const HEADER_FIXED: usize = 4 + 1 + 1 + 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {found:?}, expected \"PPTN\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("invalid rank {0} (expected 1..={MAX_RANK})")]
    InvalidRank(usize),
    #[error("invalid shape {0:?}: every dimension must be >= 1")]
    InvalidShape(Vec<usize>),
    #[error("dimension product overflows for shape {0:?}")]
    DimOverflow(Vec<u64>),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("payload has {found} scalars but shape {shape:?} needs {expected}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(TensorError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense row-major tensor of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        validate_shape(&shape)?;
        let expected = checked_product(&shape)
            .ok_or_else(|| TensorError::DimOverflow(shape.iter().map(|&d| d as u64).collect()))?;
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F64(data))
    }

    /// Stores a matrix as a rank-2 f64 tensor. Empty dimensions are not representable.
    pub fn from_matrix(m: &Array2<f64>) -> Result<Self, TensorError> {
        let shape = vec![m.nrows(), m.ncols()];
        Self::from_f64(shape, m.iter().copied().collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Widens the payload to f64 (lossless for both dtypes).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    /// Interprets the tensor as a matrix, merging all leading dimensions into rows.
    pub fn to_matrix(&self) -> Array2<f64> {
        let cols = *self.shape.last().expect("rank >= 1");
        let rows = self.len() / cols;
        Array2::from_shape_vec((rows, cols), self.to_f64_vec()).expect("shape checked at construction")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            HEADER_FIXED + 8 * self.shape.len() + self.len() * self.dtype().size(),
        );
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let header = parse_header(bytes)?;
        let payload_len = header
            .count
            .checked_mul(header.dtype.size())
            .ok_or_else(|| TensorError::DimOverflow(header.raw_dims.clone()))?;
        let expected = header
            .offset
            .checked_add(payload_len)
            .ok_or_else(|| TensorError::DimOverflow(header.raw_dims.clone()))?;
        if bytes.len() < expected {
            return Err(TensorError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(TensorError::TrailingBytes(bytes.len() - expected));
        }
        let payload = &bytes[header.offset..expected];
        let data = match header.dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Tensor::new(header.shape, data)
    }
}

/// Metadata of a PPTN1 file without its payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    count: usize,
    offset: usize,
    raw_dims: Vec<u64>,
}

fn parse_header(bytes: &[u8]) -> Result<TensorHeader, TensorError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TensorError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_FIXED {
        return Err(TensorError::Truncated {
            expected: HEADER_FIXED,
            found: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(TensorError::UnsupportedVersion(bytes[4]));
    }
    let dtype = DType::from_code(bytes[5])?;
    let rank = bytes[6] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(TensorError::InvalidRank(rank));
    }
    let offset = HEADER_FIXED + 8 * rank;
    if bytes.len() < offset {
        return Err(TensorError::Truncated {
            expected: offset,
            found: bytes.len(),
        });
    }
    let raw_dims: Vec<u64> = bytes[HEADER_FIXED..offset]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut count: u64 = 1;
    for &d in &raw_dims {
        count = count
            .checked_mul(d)
            .ok_or_else(|| TensorError::DimOverflow(raw_dims.clone()))?;
    }
    let count = usize::try_from(count).map_err(|_| TensorError::DimOverflow(raw_dims.clone()))?;
    let shape: Vec<usize> = raw_dims
        .iter()
        .map(|&d| usize::try_from(d))
        .collect::<Result<_, _>>()
        .map_err(|_| TensorError::DimOverflow(raw_dims.clone()))?;
    validate_shape(&shape)?;
    Ok(TensorHeader {
        dtype,
        shape,
        count,
        offset,
        raw_dims,
    })
}

fn validate_shape(shape: &[usize]) -> Result<(), TensorError> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(TensorError::InvalidRank(shape.len()));
    }
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

fn checked_product(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn io_err(path: &Path, source: std::io::Error) -> TensorError {
    TensorError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&t.to_bytes()).map_err(|e| io_err(path, e))?;
    file.flush().map_err(|e| io_err(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Tensor::from_bytes(&bytes)
}

/// Reads and checks only the header, then verifies the file size matches it.
pub fn read_tensor_header(path: impl AsRef<Path>) -> Result<TensorHeader, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(&bytes)?;
    let expected = header.offset + header.count * header.dtype.size();
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(TensorError::Truncated {
            expected,
            found: bytes.len(),
        }),
        std::cmp::Ordering::Greater => Err(TensorError::TrailingBytes(bytes.len() - expected)),
        std::cmp::Ordering::Equal => Ok(header),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_zero_f32_layout() {
        let t = Tensor::from_f32(vec![1], vec![0.0]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 5 + 1 + 1 + 8 + 4);
        assert_eq!(&bytes[..5], b"PPTN\x01");
        assert_eq!(bytes[5], 0);
        assert_eq!(bytes[6], 1);
        assert_eq!(&bytes[7..15], &1u64.to_le_bytes());
        assert_eq!(&bytes[15..], &[0, 0, 0, 0]);
    }

    #[test]
    fn f64_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pptn");
        let t = Tensor::from_f64(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), t.to_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Tensor::from_f32(vec![1], vec![1.0]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorError::BadMagic { .. })));
    }

    #[test]
    fn unknown_dtype() {
        let mut bytes = Tensor::from_f32(vec![1], vec![1.0]).unwrap().to_bytes();
        bytes[5] = 7;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorError::UnknownDtype(7))));
    }

    #[test]
    fn truncated_payload() {
        let t = Tensor::from_f32(vec![10], vec![1.5; 10]).unwrap();
        let bytes = t.to_bytes();
        let cut = &bytes[..bytes.len() - 4];
        match Tensor::from_bytes(cut) {
            Err(TensorError::Truncated { expected, found }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(found, bytes.len() - 4);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn dim_product_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PPTN\x01");
        bytes.push(1);
        bytes.push(2);
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorError::DimOverflow(_))));
    }

    #[test]
    fn rejects_zero_dims_and_bad_rank() {
        assert!(matches!(
            Tensor::from_f32(vec![2, 0], vec![]),
            Err(TensorError::InvalidShape(_))
        ));
        assert!(matches!(
            Tensor::from_f32(vec![1, 1, 1, 1, 1], vec![0.0]),
            Err(TensorError::InvalidRank(5))
        ));
        assert!(matches!(
            Tensor::from_f32(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = Tensor::from_f32(vec![1], vec![1.0]).unwrap().to_bytes();
        bytes.push(0);
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorError::TrailingBytes(1))));
    }

    #[test]
    fn header_only_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pptn");
        let t = Tensor::from_f32(vec![2, 3, 4, 5], vec![0.25; 120]).unwrap();
        write_tensor(&t, &path).unwrap();
        let h = read_tensor_header(&path).unwrap();
        assert_eq!(h.shape, vec![2, 3, 4, 5]);
        assert_eq!(h.dtype, DType::F32);
    }
}
