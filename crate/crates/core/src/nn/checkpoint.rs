//! `HVCKPT1` checkpoint archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! "HVCKPT1"  u32 n_tensors  record*n_tensors
//! u32 step
//! u32 n_adam  record*n_adam          // "adam.hyper" [4] = lr, beta1, beta2, eps,
//!                                    // then "m.<name>" and "v.<name>" per parameter
//! record = u16 name_len, name bytes, u8 ndim, u32 dims[ndim], f32 payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::adam::{AdamConfig, AdamState};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"HVCKPT1";
const HYPER: &str = "adam.hyper";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    /// Trainable parameters followed by non-trainable buffers.
    pub tensors: ParamStore<T>,
    pub step: u32,
    /// Optimizer state keyed by trainable parameter name; `t == step`.
    pub adam: Option<AdamState<T>>,
}

fn write_record<W: Write, T: Scalar>(w: &mut W, name: &str, t: &Tensor<T>) -> Result<()> {
    let bytes = name.as_bytes();
    let len = u16::try_from(bytes.len())
        .map_err(|_| Error::malformed("checkpoint", format!("name too long: {name}")))?;
    w.write_u16::<LittleEndian>(len)?;
    w.write_all(bytes)?;
    let ndim = u8::try_from(t.ndim())
        .map_err(|_| Error::malformed("checkpoint", format!("{name}: too many dims")))?;
    w.write_u8(ndim)?;
    for &d in t.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::malformed("checkpoint", format!("{name}: dim too large")))?;
        w.write_u32::<LittleEndian>(d)?;
    }
    for &v in t.data() {
        w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
    }
    Ok(())
}

fn read_record<R: Read, T: Scalar>(r: &mut R) -> Result<(String, Tensor<T>)> {
    let len = r.read_u16::<LittleEndian>()? as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::malformed("checkpoint", "tensor name is not UTF-8"))?;
    let ndim = r.read_u8()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(T::lit(r.read_f32::<LittleEndian>()? as f64));
    }
    let t = Tensor::from_vec(&shape, data)
        .map_err(|e| Error::malformed("checkpoint", format!("{name}: {e}")))?;
    Ok((name, t))
}

fn write_store<W: Write, T: Scalar>(w: &mut W, store: &ParamStore<T>) -> Result<()> {
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for (name, t) in store.iter() {
        write_record(w, name, t)?;
    }
    Ok(())
}

pub fn write_checkpoint_to<W: Write, T: Scalar>(w: &mut W, ckpt: &Checkpoint<T>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_store(w, &ckpt.tensors)?;
    w.write_u32::<LittleEndian>(ckpt.step)?;
    match &ckpt.adam {
        None => w.write_u32::<LittleEndian>(0)?,
        Some(adam) => {
            w.write_u32::<LittleEndian>(1 + 2 * adam.m.len() as u32)?;
            let c = adam.config;
            let hyper = Tensor::from_vec(&[4], vec![c.lr, c.beta1, c.beta2, c.eps])?;
            write_record(w, HYPER, &hyper)?;
            for (name, t) in adam.m.iter() {
                write_record(w, &format!("m.{name}"), t)?;
            }
            for (name, t) in adam.v.iter() {
                write_record(w, &format!("v.{name}"), t)?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint_from<R: Read, T: Scalar>(r: &mut R) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::malformed("checkpoint", "bad magic"));
    }
    let n = r.read_u32::<LittleEndian>()?;
    let mut tensors = ParamStore::new();
    for _ in 0..n {
        let (name, t) = read_record(r)?;
        tensors.insert(name, t)?;
    }
    let step = r.read_u32::<LittleEndian>()?;
    let n_adam = r.read_u32::<LittleEndian>()?;
    let adam = if n_adam == 0 {
        None
    } else {
        let (name, hyper) = read_record::<_, f64>(r)?;
        if name != HYPER || hyper.len() != 4 {
            return Err(Error::malformed("checkpoint", "missing adam.hyper record"));
        }
        let h = hyper.data();
        // f32 storage: restore the exact defaults when they round-trip
        let snap = |stored: f64, exact: f64| {
            if stored == exact as f32 as f64 {
                exact
            } else {
                stored
            }
        };
        let d = AdamConfig::default();
        let config = AdamConfig {
            lr: if h[0] == 0.0 { 0.0 } else { snap(h[0], d.lr) },
            beta1: snap(h[1], d.beta1),
            beta2: snap(h[2], d.beta2),
            eps: snap(h[3], d.eps),
        };
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for _ in 1..n_adam {
            let (name, t) = read_record(r)?;
            if let Some(rest) = name.strip_prefix("m.") {
                m.insert(rest, t)?;
            } else if let Some(rest) = name.strip_prefix("v.") {
                v.insert(rest, t)?;
            } else {
                return Err(Error::malformed("checkpoint", format!("unexpected adam record {name}")));
            }
        }
        if !m.same_layout(&v) {
            return Err(Error::malformed("checkpoint", "adam moments disagree"));
        }
        Some(AdamState {
            config,
            t: step as u64,
            m,
            v,
        })
    };
    Ok(Checkpoint {
        tensors,
        step,
        adam,
    })
}

/// Writes atomically: temp file in the target directory, then rename.
pub fn write_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write_checkpoint_to(&mut w, ckpt)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint_from(&mut r)
}
