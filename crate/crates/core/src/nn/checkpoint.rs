//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GENLICKP"
//! version  u32      currently 1
//! count    u32      number of tensors
//! repeated count times:
//!   name_len u32, name (utf-8), rows u64, cols u64, rows*cols f64 values (row-major)
//! ```
//!
//! Parameters are stored under their own names; Adam moments under
//! `adam.m/<name>` and `adam.v/<name>`; the optimizer step counter as the 1x1
//! tensor `adam.step`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{GenliError, Result};
use crate::nn::params::ParameterStore;
use crate::nn::tensor::Tensor2D;

pub const MAGIC: &[u8; 8] = b"GENLICKP";
pub const FORMAT_VERSION: u32 = 1;

/// Named tensors in file order.
pub type TensorList = Vec<(String, Tensor2D)>;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor2D)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<TensorList> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GenliError::data("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(GenliError::data(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| GenliError::data("tensor name is not utf-8"))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = vec![0.0; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        out.push((name, Tensor2D::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

impl ParameterStore {
    /// Parameters, Adam moments, and the step counter as a flat tensor list.
    pub fn to_tensors(&self) -> TensorList {
        let mut out: TensorList = self.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for p in self.params() {
            out.push((format!("adam.m/{}", p.name), p.m.clone()));
            out.push((format!("adam.v/{}", p.name), p.v.clone()));
        }
        out.push(("adam.step".to_string(), Tensor2D::filled(1, 1, self.step_count() as f64)));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path)?;
        write_tensors(BufWriter::new(f), &self.to_tensors())
    }

    /// Overwrites values (and optimizer state when present) of an already
    /// constructed store. Every parameter must appear with a matching shape.
    pub fn load_tensors(&mut self, tensors: TensorList) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, t) in tensors {
            let (base, slot) = if let Some(n) = name.strip_prefix("adam.m/") {
                (n, 1)
            } else if let Some(n) = name.strip_prefix("adam.v/") {
                (n, 2)
            } else if name == "adam.step" {
                self.set_step(t.get(0, 0) as u64);
                continue;
            } else {
                (name.as_str(), 0)
            };
            let id = self
                .id(base)
                .ok_or_else(|| GenliError::data(format!("checkpoint tensor {name} is unknown to this model")))?;
            let p = self.param_mut(id);
            if p.value.shape() != t.shape() {
                return Err(GenliError::data(format!(
                    "checkpoint tensor {name} is {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            match slot {
                0 => {
                    p.value = t;
                    seen[id.0] = true;
                }
                1 => p.m = t,
                _ => p.v = t,
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = self.name(crate::nn::ParamId(i)).to_string();
            return Err(GenliError::data(format!("checkpoint is missing parameter {name}")));
        }
        self.zero_grad();
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let f = File::open(path)?;
        self.load_tensors(read_tensors(BufReader::new(f))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_state() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor2D::from_vec(2, 3, vec![1., -2., 3.5, 0., 1e-300, -7.25]).unwrap()).unwrap();
        s.add_embedding("emb", Tensor2D::filled(3, 2, 0.5)).unwrap();
        s.set_step(17);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &s.to_tensors()).unwrap();
        assert_eq!(&buf[..8], MAGIC);

        let mut t = ParameterStore::new();
        t.add("w", Tensor2D::zeros(2, 3)).unwrap();
        t.add_embedding("emb", Tensor2D::zeros(3, 2)).unwrap();
        t.load_tensors(read_tensors(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(t.to_tensors(), s.to_tensors());
    }

    #[test]
    fn shape_mismatch_and_bad_magic_are_errors() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor2D::zeros(2, 2)).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("w".into(), Tensor2D::zeros(1, 2))]).unwrap();
        assert!(s.load_tensors(read_tensors(buf.as_slice()).unwrap()).is_err());
        assert!(read_tensors(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
    }
}
