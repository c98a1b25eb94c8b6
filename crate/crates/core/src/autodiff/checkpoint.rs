//! Little-endian parameter checkpoint format.
//!
//! ```text
//! "LQG1" | u32 block count | blocks...
//! block: u16 name length | name bytes | u8 dtype (0 = f32, 1 = f64)
//!        | u32 rank | u32 dims[rank] | raw values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamSet;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LQG1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub dtype: DType,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub blocks: Vec<Block>,
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dtype: DType, tensor: Tensor) {
        self.blocks.push(Block {
            name: name.into(),
            dtype,
            tensor,
        });
    }

    /// Adds every block of `params` as f64 under `prefix`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}{name}"), DType::F64, t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &b.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing block '{name}'")))
    }

    /// Collects the blocks starting with `prefix`, with the prefix stripped.
    pub fn params_with_prefix(&self, prefix: &str) -> ParamSet {
        let mut p = ParamSet::new();
        for b in &self.blocks {
            if let Some(rest) = b.name.strip_prefix(prefix) {
                p.push(rest, b.tensor.clone());
            }
        }
        p
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for b in &self.blocks {
            let name = b.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("block name too long: {}", b.name)))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[b.dtype.tag()])?;
            w.write_all(&(b.tensor.rank() as u32).to_le_bytes())?;
            for &d in b.tensor.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            match b.dtype {
                DType::F32 => {
                    for &x in b.tensor.data() {
                        w.write_all(&(x as f32).to_le_bytes())?;
                    }
                }
                DType::F64 => {
                    for &x in b.tensor.data() {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let magic: [u8; 4] = read_exact(r)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let count = u32::from_le_bytes(read_exact(r)?);
        let mut blocks = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let len = u16::from_le_bytes(read_exact(r)?) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)
                .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
            let dtype = match read_exact::<1>(r)?[0] {
                0 => DType::F32,
                1 => DType::F64,
                t => return Err(Error::Checkpoint(format!("unknown dtype tag {t} in '{name}'"))),
            };
            let rank = u32::from_le_bytes(read_exact(r)?) as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(read_exact(r)?) as usize);
            }
            let n = numel(&shape);
            let mut data = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                data.push(match dtype {
                    DType::F32 => f32::from_le_bytes(read_exact(r)?) as f64,
                    DType::F64 => f64::from_le_bytes(read_exact(r)?),
                });
            }
            blocks.push(Block {
                name,
                dtype,
                tensor: Tensor::new(shape, data)?,
            });
        }
        Ok(Checkpoint { blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}
