//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "CRFCNN01"
//! count   u32
//! repeated count times:
//!   name_len u32, name (UTF-8), dtype u8 (0 = f32, 1 = f64),
//!   ndim u32, dims (u32 each), values (row-major, dtype width each)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CRFCNN01";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

pub fn write_tensors<'a, W: Write>(
    mut w: W,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    dtype: Dtype,
) -> Result<()> {
    let entries: Vec<_> = entries.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&u32_of(entries.len(), "tensor count")?.to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&u32_of(name.len(), "name length")?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[dtype as u8])?;
        w.write_all(&u32_of(t.dims().len(), "rank")?.to_le_bytes())?;
        for &d in t.dims() {
            w.write_all(&u32_of(d, "extent")?.to_le_bytes())?;
        }
        match dtype {
            Dtype::F32 => {
                for &v in t.data() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            Dtype::F64 => {
                for &v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
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

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let dtype = Dtype::from_code(code[0])?;
        let ndim = read_u32(&mut r)? as usize;
        let dims = (0..ndim).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        match dtype {
            Dtype::F32 => {
                let mut b = [0u8; 4];
                for _ in 0..n {
                    r.read_exact(&mut b)?;
                    data.push(f32::from_le_bytes(b) as f64);
                }
            }
            Dtype::F64 => {
                let mut b = [0u8; 8];
                for _ in 0..n {
                    r.read_exact(&mut b)?;
                    data.push(f64::from_le_bytes(b));
                }
            }
        }
        let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_tensors(path: impl AsRef<Path>, entries: &[(String, Tensor)], dtype: Dtype) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_tensors(f, entries.iter().map(|(n, t)| (n.as_str(), t)), dtype)
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    read_tensors(BufReader::new(File::open(path)?))
}

pub fn save_params(path: impl AsRef<Path>, params: &ModelParams, dtype: Dtype) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_tensors(f, params.iter().map(|(n, t)| (n.as_str(), t)), dtype)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let mut p = ModelParams::new();
    for (name, t) in load_tensors(path)? {
        p.insert(name, t);
    }
    Ok(p)
}
