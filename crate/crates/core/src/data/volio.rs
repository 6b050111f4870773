//! Reader/writer for the `VOL4` binary volume format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  b"VOL4"
//! version    u16      currently 1
//! dtype      u8       0 = f32 intensities, 1 = i8 labels
//! ndim       u8       currently always 4
//! dims       ndim x u32          (x, y, z, t)
//! spacing    3 x f32 voxel mm, 1 x f32 frame ms
//! annotated  t x u8   label files (dtype 1) only: 1 = frame annotated
//! payload    numel elements, row-major with t fastest
//! ```
//!
//! Round trips are bit-exact: values pass through untouched as raw bytes.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"VOL4";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_I8: u8 = 1;

/// Refuse dims whose payload would exceed this many bytes (4 GiB): a header
/// gone wrong should fail fast, not trigger the OOM killer.
const MAX_PAYLOAD_BYTES: u64 = 4 << 30;

/// Parsed contents of an intensity file.
#[derive(Debug, Clone)]
pub struct IntensityVolume {
    pub dims: [usize; 4],
    pub spacing_mm: [f32; 3],
    pub frame_ms: f32,
    pub data: Vec<f32>,
}

/// Parsed contents of a label file.
#[derive(Debug, Clone)]
pub struct LabelVolume {
    pub dims: [usize; 4],
    pub spacing_mm: [f32; 3],
    pub frame_ms: f32,
    pub annotated: Vec<bool>,
    pub data: Vec<u8>,
}

fn write_header(
    w: &mut impl Write,
    dtype: u8,
    dims: [usize; 4],
    spacing_mm: [f32; 3],
    frame_ms: f32,
) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[dtype, 4])?;
    for d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for s in spacing_mm {
        w.write_all(&s.to_le_bytes())?;
    }
    w.write_all(&frame_ms.to_le_bytes())
}

pub fn write_intensity(
    path: &Path,
    dims: [usize; 4],
    spacing_mm: [f32; 3],
    frame_ms: f32,
    data: &[f32],
) -> Result<()> {
    let numel: usize = dims.iter().product();
    if data.len() != numel {
        return Err(Error::shape(
            "write_intensity",
            format!("dims {:?} need {} values, got {}", dims, numel, data.len()),
        ));
    }
    let wrap = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    write_header(&mut w, DTYPE_F32, dims, spacing_mm, frame_ms).map_err(wrap)?;
    for v in data {
        w.write_all(&v.to_le_bytes()).map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}

pub fn write_labels(
    path: &Path,
    dims: [usize; 4],
    spacing_mm: [f32; 3],
    frame_ms: f32,
    annotated: &[bool],
    data: &[u8],
) -> Result<()> {
    let numel: usize = dims.iter().product();
    if data.len() != numel {
        return Err(Error::shape(
            "write_labels",
            format!("dims {:?} need {} values, got {}", dims, numel, data.len()),
        ));
    }
    if annotated.len() != dims[3] {
        return Err(Error::shape(
            "write_labels",
            format!("{} frames need {} flags, got {}", dims[3], dims[3], annotated.len()),
        ));
    }
    let wrap = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    write_header(&mut w, DTYPE_I8, dims, spacing_mm, frame_ms).map_err(wrap)?;
    let flags: Vec<u8> = annotated.iter().map(|&a| a as u8).collect();
    w.write_all(&flags).map_err(wrap)?;
    // Class ids are stored as i8; ids are small so the cast is lossless.
    w.write_all(data).map_err(wrap)?;
    w.flush().map_err(wrap)
}

struct HeaderOut {
    dtype: u8,
    dims: [usize; 4],
    spacing_mm: [f32; 3],
    frame_ms: f32,
    numel: usize,
}

fn read_exact_or_truncated(
    r: &mut impl Read,
    buf: &mut [u8],
    path: &Path,
    expected_total: u64,
    got_before: u64,
) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    expected: expected_total,
                    got: got_before + filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    Ok(())
}

fn read_header(r: &mut impl Read, path: &Path, elem_size: u64) -> Result<HeaderOut> {
    // Minimum header: magic + version + dtype + ndim + 4 dims + 4 spacing floats.
    let header_len = 4 + 2 + 1 + 1 + 16 + 16;
    let mut head = [0u8; 40];
    read_exact_or_truncated(r, &mut head, path, header_len as u64, 0)?;
    if head[0..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
        });
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dtype = head[6];
    if dtype != DTYPE_F32 && dtype != DTYPE_I8 {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            dtype,
        });
    }
    let ndim = head[7];
    if ndim != 4 {
        return Err(Error::DimensionOverflow {
            path: path.to_path_buf(),
            detail: format!("expected 4 dimensions, header declares {}", ndim),
        });
    }
    let mut dims = [0usize; 4];
    let mut numel: u64 = 1;
    for i in 0..4 {
        let off = 8 + 4 * i;
        let d = u32::from_le_bytes([head[off], head[off + 1], head[off + 2], head[off + 3]]);
        if d == 0 {
            return Err(Error::DimensionOverflow {
                path: path.to_path_buf(),
                detail: format!("dimension {} is zero", i),
            });
        }
        dims[i] = d as usize;
        numel = numel.checked_mul(d as u64).ok_or_else(|| Error::DimensionOverflow {
            path: path.to_path_buf(),
            detail: format!("dims {:?} overflow", dims),
        })?;
    }
    if numel.checked_mul(elem_size).is_none_or(|b| b > MAX_PAYLOAD_BYTES) {
        return Err(Error::DimensionOverflow {
            path: path.to_path_buf(),
            detail: format!("dims {:?} exceed the payload cap", dims),
        });
    }
    let f = |off: usize| f32::from_le_bytes([head[off], head[off + 1], head[off + 2], head[off + 3]]);
    Ok(HeaderOut {
        dtype,
        dims,
        spacing_mm: [f(24), f(28), f(32)],
        frame_ms: f(36),
        numel: numel as usize,
    })
}

/// Error if the reader holds anything beyond the declared payload.
fn expect_eof(r: &mut impl Read, path: &Path, expected: u64) -> Result<()> {
    let mut probe = [0u8; 1];
    loop {
        match r.read(&mut probe) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    expected,
                    got: expected + 1, // at least one trailing byte
                })
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::io(path, e)),
        }
    }
}

pub fn read_intensity(path: &Path) -> Result<IntensityVolume> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let h = read_header(&mut r, path, 4)?;
    if h.dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            dtype: h.dtype,
        });
    }
    let total = 40 + 4 * h.numel as u64;
    let mut bytes = vec![0u8; 4 * h.numel];
    read_exact_or_truncated(&mut r, &mut bytes, path, total, 40)?;
    expect_eof(&mut r, path, total)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(IntensityVolume {
        dims: h.dims,
        spacing_mm: h.spacing_mm,
        frame_ms: h.frame_ms,
        data,
    })
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let h = read_header(&mut r, path, 1)?;
    if h.dtype != DTYPE_I8 {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            dtype: h.dtype,
        });
    }
    let t_len = h.dims[3];
    let total = 40 + t_len as u64 + h.numel as u64;
    let mut flags = vec![0u8; t_len];
    read_exact_or_truncated(&mut r, &mut flags, path, total, 40)?;
    for (t, &f) in flags.iter().enumerate() {
        if f > 1 {
            return Err(Error::Data(format!(
                "{}: annotation flag for frame {} is {}, expected 0 or 1",
                path.display(),
                t,
                f
            )));
        }
    }
    let mut data = vec![0u8; h.numel];
    read_exact_or_truncated(&mut r, &mut data, path, total, 40 + t_len as u64)?;
    expect_eof(&mut r, path, total)?;
    if let Some(&bad) = data.iter().find(|&&v| v > 2) {
        return Err(Error::Data(format!(
            "{}: label id {} out of range (classes are 0..=2)",
            path.display(),
            bad
        )));
    }
    Ok(LabelVolume {
        dims: h.dims,
        spacing_mm: h.spacing_mm,
        frame_ms: h.frame_ms,
        annotated: flags.iter().map(|&f| f == 1).collect(),
        data,
    })
}
