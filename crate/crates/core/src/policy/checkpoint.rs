//! Checkpoint container: named f64 tensors in a little-endian binary file
//! plus a JSON sidecar (`<file>.json`) holding the policy config.
//!
//! Layout: 8-byte magic `EGRPOCK1`, u32 tensor count, then per tensor a
//! u16 name length, the UTF-8 name, a u8 rank, u64 dims, and the row-major
//! f64 payload. All integers and floats little-endian.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use super::{PolicyConfig, PolicyParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EGRPOCK1";

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn write_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for d in shape {
        buf.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&5u32.to_le_bytes());
    let e = &params.emb;
    write_tensor(&mut buf, "token_embeddings", &[e.nrows(), e.ncols()], e.iter().cloned());
    let w = &params.ctx_w;
    write_tensor(&mut buf, "context_weights", &[w.nrows(), w.ncols()], w.iter().cloned());
    write_tensor(&mut buf, "context_bias", &[params.ctx_b.len()], params.ctx_b.iter().cloned());
    let o = &params.out_w;
    write_tensor(&mut buf, "output_projection", &[o.nrows(), o.ncols()], o.iter().cloned());
    write_tensor(&mut buf, "output_bias", &[params.out_b.len()], params.out_b.iter().cloned());

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    let sidecar = serde_json::to_string_pretty(&params.cfg)
        .map_err(|e| Error::Checkpoint(format!("sidecar serialization failed: {e}")))?;
    std::fs::write(sidecar_path(path), sidecar).map_err(|e| Error::io(sidecar_path(path), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let name_len = self.u16()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("bad tensor name: {e}")))?;
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let raw = self.take(n * 8)?;
        for chunk in raw.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        Ok((name, shape, data))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sidecar = std::fs::read_to_string(sidecar_path(path))
        .map_err(|e| Error::io(sidecar_path(path), e))?;
    let cfg: PolicyConfig = serde_json::from_str(&sidecar)
        .map_err(|e| Error::Checkpoint(format!("bad sidecar: {e}")))?;
    cfg.validate()?;

    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let count = r.u32()?;
    if count != 5 {
        return Err(Error::Checkpoint(format!("expected 5 tensors, found {count}")));
    }

    let mut params = PolicyParams::zeros(cfg)?;
    for _ in 0..count {
        let (name, shape, data) = r.tensor()?;
        let fill2 = |dst: &mut Array2<f64>, shape: &[usize], data: Vec<f64>| -> Result<()> {
            if shape != [dst.nrows(), dst.ncols()] {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {shape:?} does not match config"
                )));
            }
            *dst = Array2::from_shape_vec((shape[0], shape[1]), data).unwrap();
            Ok(())
        };
        let fill1 = |dst: &mut Array1<f64>, shape: &[usize], data: Vec<f64>| -> Result<()> {
            if shape != [dst.len()] {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {shape:?} does not match config"
                )));
            }
            *dst = Array1::from_vec(data);
            Ok(())
        };
        match name.as_str() {
            "token_embeddings" => fill2(&mut params.emb, &shape, data)?,
            "context_weights" => fill2(&mut params.ctx_w, &shape, data)?,
            "context_bias" => fill1(&mut params.ctx_b, &shape, data)?,
            "output_projection" => fill2(&mut params.out_w, &shape, data)?,
            "output_bias" => fill1(&mut params.out_b, &shape, data)?,
            other => return Err(Error::Checkpoint(format!("unknown tensor {other:?}"))),
        }
    }
    Ok(params)
}
