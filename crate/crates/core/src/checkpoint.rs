//! Model checkpoints: `CKPT` binary files that embed the network config and
//! every parameter tensor, so a file alone restores a runnable model.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      4 bytes  b"CKPT"
//! version    u16      currently 1
//! config     u32 byte length + that many bytes of TOML (NetConfig)
//! count      u32      number of parameter records
//! record:    u16 path length + path bytes (dotted, e.g. "enc1.down.weight")
//!            u8 ndim, ndim x u32 dims
//!            numel x f32 payload
//! ```
//!
//! Parameters are stored in visitation order — the same order `build`
//! constructs them — and `load` insists on an exact match of paths, shapes,
//! and count against a skeleton rebuilt from the embedded config. Values are
//! stored as f32: round trips of f32 models are bit-exact.

use crate::error::{Error, Result};
use crate::model::{build, ModelParams, NetConfig};
use crate::scalar::Scalar;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"CKPT";
pub const VERSION: u16 = 1;

pub fn save<S: Scalar>(params: &ModelParams<S>, path: &Path) -> Result<()> {
    let wrap = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    w.write_all(&MAGIC).map_err(wrap)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(wrap)?;
    let config = toml::to_string(&params.config)
        .map_err(|e| Error::Checkpoint(format!("config serialize: {}", e)))?;
    w.write_all(&(config.len() as u32).to_le_bytes()).map_err(wrap)?;
    w.write_all(config.as_bytes()).map_err(wrap)?;
    let visited = params.visit();
    w.write_all(&(visited.len() as u32).to_le_bytes()).map_err(wrap)?;
    for (p, tensor) in visited {
        w.write_all(&(p.len() as u16).to_le_bytes()).map_err(wrap)?;
        w.write_all(p.as_bytes()).map_err(wrap)?;
        let shape = tensor.shape();
        w.write_all(&[shape.len() as u8]).map_err(wrap)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(wrap)?;
        }
        for &v in tensor.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes()).map_err(wrap)?;
        }
    }
    w.flush().map_err(wrap)
}

struct Cursor<'a, R: Read> {
    r: &'a mut R,
    path: &'a Path,
    consumed: u64,
}

impl<'a, R: Read> Cursor<'a, R> {
    fn take(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.r.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Truncated {
                        path: self.path.to_path_buf(),
                        expected: self.consumed + buf.len() as u64,
                        got: self.consumed + filled as u64,
                    })
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::io(self.path, e)),
            }
        }
        self.consumed += buf.len() as u64;
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

pub fn load<S: Scalar>(path: &Path) -> Result<ModelParams<S>> {
    let mut file = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut cur = Cursor {
        r: &mut file,
        path,
        consumed: 0,
    };
    let mut magic = [0u8; 4];
    cur.take(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
        });
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let config_len = cur.u32()? as usize;
    if config_len > 1 << 20 {
        return Err(Error::Checkpoint(format!(
            "config record of {} bytes is implausible",
            config_len
        )));
    }
    let mut config_bytes = vec![0u8; config_len];
    cur.take(&mut config_bytes)?;
    let config_text = std::str::from_utf8(&config_bytes)
        .map_err(|e| Error::Checkpoint(format!("config is not UTF-8: {}", e)))?;
    let config: NetConfig = toml::from_str(config_text)
        .map_err(|e| Error::Checkpoint(format!("config parse: {}", e)))?;
    // Rebuild the skeleton; every stored tensor must slot into it exactly.
    let mut params = build::<S>(&config, 0)?;
    let count = cur.u32()? as usize;
    {
        let mut slots = params.visit_mut();
        if count != slots.len() {
            return Err(Error::Checkpoint(format!(
                "file stores {} parameters, config implies {}",
                count,
                slots.len()
            )));
        }
        for (expected_path, tensor) in slots.iter_mut() {
            let path_len = cur.u16()? as usize;
            let mut path_bytes = vec![0u8; path_len];
            cur.take(&mut path_bytes)?;
            let got_path = std::str::from_utf8(&path_bytes)
                .map_err(|e| Error::Checkpoint(format!("parameter path is not UTF-8: {}", e)))?;
            if got_path != expected_path.as_str() {
                return Err(Error::Checkpoint(format!(
                    "parameter order mismatch: file has {:?} where config implies {:?}",
                    got_path, expected_path
                )));
            }
            let mut ndim = [0u8; 1];
            cur.take(&mut ndim)?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                shape.push(cur.u32()? as usize);
            }
            if shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: stored shape {:?} does not match config shape {:?}",
                    got_path,
                    shape,
                    tensor.shape()
                )));
            }
            for v in tensor.data_mut() {
                *v = S::from_f64(cur.f32()? as f64);
            }
        }
    }
    // Anything after the last record is corruption.
    let mut probe = [0u8; 1];
    match cur.r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Checkpoint(
                "trailing bytes after the last parameter record".into(),
            ))
        }
        Err(e) => return Err(Error::io(path, e)),
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetConfig;
    use std::fs;

    fn tiny() -> NetConfig {
        NetConfig {
            base_filters: 2,
            levels: 2,
            blocks_per_level: vec![1, 1],
            crop: [8, 8, 8, 4],
            ..NetConfig::desk_4d()
        }
    }

    #[test]
    fn round_trip_is_bit_exact_for_f32() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.ckpt");
        let params = build::<f32>(&tiny(), 42).unwrap();
        save(&params, &p).unwrap();
        let loaded = load::<f32>(&p).unwrap();
        assert_eq!(loaded.config, params.config);
        for ((pa, ta), (pb, tb)) in params.visit().iter().zip(loaded.visit().iter()) {
            assert_eq!(pa, pb);
            assert_eq!(ta.shape(), tb.shape());
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn saving_twice_yields_identical_bytes() {
        let d = tempfile::tempdir().unwrap();
        let params = build::<f32>(&tiny(), 3).unwrap();
        let (p1, p2) = (d.path().join("a.ckpt"), d.path().join("b.ckpt"));
        save(&params, &p1).unwrap();
        save(&params, &p2).unwrap();
        assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("bad.ckpt");
        fs::write(&p, b"NOPE\x01\x00").unwrap();
        assert!(matches!(load::<f32>(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn wrong_version_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("v.ckpt");
        let params = build::<f32>(&tiny(), 1).unwrap();
        save(&params, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[4] = 9;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load::<f32>(&p),
            Err(Error::UnsupportedVersion { version: 9, .. })
        ));
    }

    #[test]
    fn truncation_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("t.ckpt");
        let params = build::<f32>(&tiny(), 1).unwrap();
        save(&params, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load::<f32>(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn trailing_garbage_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("g.ckpt");
        let params = build::<f32>(&tiny(), 1).unwrap();
        save(&params, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.extend_from_slice(&[1, 2, 3]);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load::<f32>(&p), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupted_path_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.ckpt");
        let params = build::<f32>(&tiny(), 1).unwrap();
        save(&params, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        // The first parameter path is "init_conv.weight"; flip a byte in it.
        let pos = bytes
            .windows(9)
            .position(|w| w == b"init_conv")
            .expect("path present");
        bytes[pos] = b'X';
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load::<f32>(&p), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn loading_into_f64_preserves_f32_values() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.ckpt");
        let params = build::<f32>(&tiny(), 8).unwrap();
        save(&params, &p).unwrap();
        let wide = load::<f64>(&p).unwrap();
        for ((_, ta), (_, tb)) in params.visit().iter().zip(wide.visit().iter()) {
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(*x as f64, *y);
            }
        }
    }
}
