//! UIBF binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "UIBF"
//! version u32      1
//! ndim    u32
//! dims    ndim x u64
//! dtype   u32      0 = f32
//! payload product(dims) x f32, row-major
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UIBF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
const MAX_NDIM: usize = 32;
const MAX_HEADER_BYTES: u64 = (12 + 8 * MAX_NDIM + 4) as u64;

/// Dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        let n = element_count(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let header = parse_header(&mut cursor)?;
        let expected = element_count(&header.shape)?;
        let available = cursor.len() / 4;
        if !cursor.len().is_multiple_of(4) || available != expected {
            if available < expected {
                return Err(Error::Truncated {
                    expected,
                    actual: available,
                });
            }
            return Err(Error::Format(format!(
                "payload has {} trailing bytes after {} elements",
                cursor.len() - expected * 4,
                expected
            )));
        }
        let data: Vec<f32> = cursor
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        check_finite(&data)?;
        Ok(Self {
            shape: header.shape,
            data,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {}", path.display(), msg)),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub shape: Vec<usize>,
}

/// Reads only the header of a UIBF file.
pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut full = Vec::new();
    file.take(MAX_HEADER_BYTES)
        .read_to_end(&mut full)
        .map_err(|e| Error::io(path, e))?;
    let mut cursor = full.as_slice();
    parse_header(&mut cursor).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {}", path.display(), msg)),
        other => other,
    })
}

fn parse_header(cursor: &mut &[u8]) -> Result<Header> {
    let magic = take(cursor, 4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic bytes {:?}", magic)));
    }
    let version = take_u32(cursor)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {}", version)));
    }
    let ndim = take_u32(cursor)? as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!("invalid ndim {}", ndim)));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = take_u64(cursor)?;
        let d = usize::try_from(d).map_err(|_| Error::Format(format!("dim {} too large", d)))?;
        shape.push(d);
    }
    let dtype = take_u32(cursor)?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {}", dtype)));
    }
    validate_shape(&shape)?;
    Ok(Header { shape })
}

fn take<'a>(cursor: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if cursor.len() < n {
        return Err(Error::Format("header truncated".into()));
    }
    let (head, rest) = cursor.split_at(n);
    *cursor = rest;
    Ok(head)
}

fn take_u32(cursor: &mut &[u8]) -> Result<u32> {
    let b = take(cursor, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn take_u64(cursor: &mut &[u8]) -> Result<u64> {
    let b = take(cursor, 8)?;
    let mut arr = [0u8; 8];
    arr.copy_from_slice(b);
    Ok(u64::from_le_bytes(arr))
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor needs at least one dimension".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Shape(format!(
            "dimension {} of {:?} is zero",
            pos, shape
        )));
    }
    Ok(())
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {:?} overflows", shape)))
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}
