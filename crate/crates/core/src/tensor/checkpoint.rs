//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "VIAC" | version: u32 | graph kind: u32
//! repeated until EOF:
//!   name_len: u32 | name: UTF-8 | rank: u32 | extents: u64 × rank | values: f32 × numel
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VIAC";
pub const VERSION: u32 = 1;

/// Which graph a checkpoint was saved from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Classifier = 0,
    Pretrain = 1,
}

impl GraphKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            0 => Ok(GraphKind::Classifier),
            1 => Ok(GraphKind::Pretrain),
            other => Err(format_err(format!("unknown graph kind {other}"))),
        }
    }
}

fn format_err(detail: String) -> Error {
    Error::Format {
        what: "checkpoint",
        detail,
    }
}

pub fn write_checkpoint<T: Scalar>(
    w: &mut impl Write,
    store: &ParamStore<T>,
    kind: GraphKind,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(kind as u32).to_le_bytes())?;
    for (_, entry) in store.iter() {
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = entry.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in entry.value.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Named tensors in file order.
pub struct Checkpoint {
    pub kind: GraphKind,
    pub params: Vec<(String, Tensor<f32>)>,
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let kind = GraphKind::from_u32(read_u32(r)?)?;
    let mut params = Vec::new();
    loop {
        let name_len = match read_u32(r) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| format_err(e.to_string()))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push((name, Tensor::new(&shape, values)?));
    }
    Ok(Checkpoint { kind, params })
}

pub fn save<T: Scalar>(
    path: impl AsRef<Path>,
    store: &ParamStore<T>,
    kind: GraphKind,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, store, kind)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

impl Checkpoint {
    /// Overwrites every parameter of `store` whose name appears in the
    /// checkpoint. Returns the number of parameters loaded.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>, strict: bool) -> Result<usize> {
        let mut loaded = 0;
        for (name, value) in &self.params {
            match store.id(name) {
                Some(id) => {
                    store.set(id, value.cast())?;
                    loaded += 1;
                }
                None if strict => {
                    return Err(format_err(format!("unexpected parameter `{name}`")));
                }
                None => {}
            }
        }
        if strict && loaded != store.len() {
            return Err(format_err(format!(
                "checkpoint has {loaded} of {} parameters",
                store.len()
            )));
        }
        Ok(loaded)
    }
}
