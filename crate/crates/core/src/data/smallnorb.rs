//! small-NORB binary matrix files: little-endian magic (element type), number
//! of dimensions, at least three dimension sizes, then the raw elements.

use std::path::Path;

use super::{read_maybe_gzip, resolve_maybe_gz, LabeledImageSet, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Matrix of unsigned bytes.
pub const NORB_UBYTE_MAGIC: u32 = 0x1E3D_4C55;
/// Matrix of 32-bit signed integers.
pub const NORB_INT_MAGIC: u32 = 0x1E3D_4C54;

const NORB_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum NorbElements {
    Bytes(Vec<u8>),
    Ints(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NorbMatrix {
    pub dims: Vec<usize>,
    pub elements: NorbElements,
}

fn read_u32_le(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            what: what.to_string(),
            offset: bytes.len(),
            needed: offset + 4 - bytes.len(),
        })
}

pub fn parse_norb_matrix(bytes: &[u8], what: &str) -> Result<NorbMatrix> {
    let magic = read_u32_le(bytes, 0, what)?;
    let elem_size = match magic {
        NORB_UBYTE_MAGIC => 1,
        NORB_INT_MAGIC => 4,
        found => {
            return Err(Error::BadMagic {
                what: what.to_string(),
                expected: NORB_UBYTE_MAGIC,
                found,
            })
        }
    };
    let ndim = read_u32_le(bytes, 4, what)? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Format {
            what: what.to_string(),
            offset: 4,
            detail: format!("implausible dimension count {ndim}"),
        });
    }
    let stored = ndim.max(3);
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..stored {
        let size = read_u32_le(bytes, 8 + 4 * d, what)? as usize;
        if d < ndim {
            dims.push(size);
        }
    }
    let start = 8 + 4 * stored;
    let count: usize = dims.iter().product();
    let end = start + count * elem_size;
    let body = bytes.get(start..end).ok_or_else(|| Error::Truncated {
        what: what.to_string(),
        offset: bytes.len(),
        needed: end - bytes.len(),
    })?;
    let elements = if elem_size == 1 {
        NorbElements::Bytes(body.to_vec())
    } else {
        NorbElements::Ints(
            body.chunks_exact(4)
                .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        )
    };
    Ok(NorbMatrix { dims, elements })
}

pub fn encode_norb_matrix(m: &NorbMatrix) -> Vec<u8> {
    let magic = match m.elements {
        NorbElements::Bytes(_) => NORB_UBYTE_MAGIC,
        NorbElements::Ints(_) => NORB_INT_MAGIC,
    };
    let mut out = Vec::new();
    out.extend_from_slice(&magic.to_le_bytes());
    out.extend_from_slice(&(m.dims.len() as u32).to_le_bytes());
    for d in 0..m.dims.len().max(3) {
        let size = m.dims.get(d).copied().unwrap_or(1);
        out.extend_from_slice(&(size as u32).to_le_bytes());
    }
    match &m.elements {
        NorbElements::Bytes(b) => out.extend_from_slice(b),
        NorbElements::Ints(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

/// Loads a `-dat`/`-cat` pair, keeping the first camera of each stereo pair
/// as a single `[1, H, W]` channel.
pub fn load_smallnorb(dat_path: &Path, cat_path: &Path, split: Split) -> Result<LabeledImageSet> {
    let dat_path = resolve_maybe_gz(dat_path);
    let cat_path = resolve_maybe_gz(cat_path);
    let dat_name = dat_path.display().to_string();
    let cat_name = cat_path.display().to_string();
    let dat = parse_norb_matrix(&read_maybe_gzip(&dat_path)?, &dat_name)?;
    let cat = parse_norb_matrix(&read_maybe_gzip(&cat_path)?, &cat_name)?;
    stereo_to_set(dat, cat, split, &dat_name, &cat_name)
}

pub(crate) fn stereo_to_set(
    dat: NorbMatrix,
    cat: NorbMatrix,
    split: Split,
    dat_name: &str,
    cat_name: &str,
) -> Result<LabeledImageSet> {
    let (n, h, w) = match (&dat.dims[..], &dat.elements) {
        (&[n, 2, h, w], NorbElements::Bytes(_)) => (n, h, w),
        (dims, _) => {
            return Err(Error::Format {
                what: dat_name.to_string(),
                offset: 4,
                detail: format!("expected a byte matrix [N, 2, H, W], found dims {dims:?}"),
            })
        }
    };
    let labels = match (&cat.dims[..], &cat.elements) {
        (&[_], NorbElements::Ints(v)) => v,
        (dims, _) => {
            return Err(Error::Format {
                what: cat_name.to_string(),
                offset: 4,
                detail: format!("expected an int vector, found dims {dims:?}"),
            })
        }
    };
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let labels: Vec<usize> = labels
        .iter()
        .map(|&l| {
            usize::try_from(l)
                .ok()
                .filter(|&l| l < NORB_CLASSES)
                .ok_or_else(|| Error::Format {
                    what: cat_name.to_string(),
                    offset: 20,
                    detail: format!("category {l} outside 0..{NORB_CLASSES}"),
                })
        })
        .collect::<Result<_>>()?;
    let NorbElements::Bytes(bytes) = dat.elements else {
        unreachable!()
    };
    let plane = h * w;
    let images = (0..n)
        .map(|i| {
            let left = &bytes[i * 2 * plane..i * 2 * plane + plane];
            Tensor::new(vec![1, h, w], left.iter().map(|&b| f64::from(b) / 255.0).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledImageSet::new(images, labels, split, "smallnorb", NORB_CLASSES)
}
