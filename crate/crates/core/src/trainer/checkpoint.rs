//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KIRA" | version: u32 | section count: u32
//! per section:
//!   name length: u16 | name: utf-8
//!   kind: u8 (0 = f64 tensor, 1 = JSON document)
//!   rank: u8 | dims: u64 * rank        (tensors only)
//!   payload length: u64 | payload
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{KirasError, Result};
use crate::numerics::{Activation, AdamConfig, AdamState, DenseNet, Layer, TrainableNet};

pub const MAGIC: &[u8; 4] = b"KIRA";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Tensor { shape: Vec<usize>, data: Vec<f64> },
    Json(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub payload: Payload,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

fn corrupt(msg: impl Into<String>) -> KirasError {
    KirasError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn push_tensor(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.sections.push(Section {
            name: name.into(),
            payload: Payload::Tensor { shape, data },
        });
    }

    pub fn push_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        self.sections.push(Section {
            name: name.into(),
            payload: Payload::Json(serde_json::to_vec(value)?),
        });
        Ok(())
    }

    fn find(&self, name: &str) -> Result<&Payload> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.payload)
            .ok_or_else(|| corrupt(format!("missing section '{name}'")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.find(name)? {
            Payload::Tensor { shape, data } => Ok((shape, data)),
            Payload::Json(_) => Err(corrupt(format!("section '{name}' is not a tensor"))),
        }
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        match self.find(name)? {
            Payload::Json(bytes) => Ok(serde_json::from_slice(bytes)?),
            Payload::Tensor { .. } => Err(corrupt(format!("section '{name}' is not JSON"))),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for s in &self.sections {
            let name = s.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| corrupt("section name too long"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
            match &s.payload {
                Payload::Tensor { shape, data } => {
                    w.write_all(&[0u8, shape.len() as u8])?;
                    for &d in shape {
                        w.write_all(&(d as u64).to_le_bytes())?;
                    }
                    w.write_all(&((data.len() * 8) as u64).to_le_bytes())?;
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Payload::Json(bytes) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
                    w.write_all(bytes)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| corrupt("file too short"))?;
        if &magic != MAGIC {
            return Err(corrupt("not a KIRA checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(KirasError::CheckpointVersion {
                found: version,
                supported: VERSION,
            });
        }
        let count = read_u32(&mut r)? as usize;
        let mut sections = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2).map_err(|_| corrupt("truncated section header"))?;
            let name = take(&mut r, u16::from_le_bytes(b2) as usize)?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| corrupt("section name is not utf-8"))?;
            let kind = take(&mut r, 1)?[0];
            let payload = match kind {
                0 => {
                    let rank = take(&mut r, 1)?[0] as usize;
                    let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                    let len = read_u64(&mut r)? as usize;
                    let raw = take(&mut r, len)?;
                    if len % 8 != 0 || shape.iter().product::<usize>() * 8 != len {
                        return Err(corrupt(format!("tensor '{name}' has inconsistent shape")));
                    }
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Payload::Tensor { shape, data }
                }
                1 => {
                    let len = read_u64(&mut r)? as usize;
                    Payload::Json(take(&mut r, len)?.to_vec())
                }
                k => return Err(corrupt(format!("unknown section kind {k}"))),
            };
            sections.push(Section { name, payload });
        }
        if !r.is_empty() {
            return Err(corrupt("trailing bytes after last section"));
        }
        Ok(Self { sections })
    }

    /// Writes through a temporary file so an interrupted save never
    /// replaces a good checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("kira.tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(corrupt("truncated checkpoint"));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().expect("4 bytes")))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r, 8)?.try_into().expect("8 bytes")))
}

#[derive(Serialize, Deserialize)]
struct NetMeta {
    activations: Vec<Activation>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    config: AdamConfig,
    step_count: u64,
    tensors: usize,
}

pub fn put_net(ck: &mut Checkpoint, prefix: &str, net: &DenseNet) -> Result<()> {
    ck.push_json(
        format!("{prefix}/meta"),
        &NetMeta {
            activations: net.layers().iter().map(|l| l.activation).collect(),
        },
    )?;
    for (i, l) in net.layers().iter().enumerate() {
        let (o, n) = l.weight.dim();
        ck.push_tensor(format!("{prefix}/{i}/weight"), vec![o, n], l.weight.iter().copied().collect());
        ck.push_tensor(format!("{prefix}/{i}/bias"), vec![o], l.bias.to_vec());
    }
    Ok(())
}

pub fn get_net(ck: &Checkpoint, prefix: &str) -> Result<DenseNet> {
    let meta: NetMeta = ck.json(&format!("{prefix}/meta"))?;
    let mut layers = Vec::with_capacity(meta.activations.len());
    for (i, activation) in meta.activations.into_iter().enumerate() {
        let (ws, w) = ck.tensor(&format!("{prefix}/{i}/weight"))?;
        let (bs, b) = ck.tensor(&format!("{prefix}/{i}/bias"))?;
        if ws.len() != 2 || bs.len() != 1 || bs[0] != ws[0] {
            return Err(corrupt(format!("layer {prefix}/{i} has bad shapes")));
        }
        layers.push(Layer {
            weight: ndarray::Array2::from_shape_vec((ws[0], ws[1]), w.to_vec()).map_err(|e| corrupt(e.to_string()))?,
            bias: ndarray::Array1::from(b.to_vec()),
            activation,
        });
    }
    DenseNet::from_layers(layers)
}

pub fn put_adam(ck: &mut Checkpoint, prefix: &str, adam: &AdamState) -> Result<()> {
    ck.push_json(
        format!("{prefix}/adam"),
        &AdamMeta {
            config: adam.config,
            step_count: adam.step_count,
            tensors: adam.first_moment.len(),
        },
    )?;
    for (j, (m, v)) in adam.first_moment.iter().zip(&adam.second_moment).enumerate() {
        ck.push_tensor(format!("{prefix}/adam/m{j}"), vec![m.len()], m.clone());
        ck.push_tensor(format!("{prefix}/adam/v{j}"), vec![v.len()], v.clone());
    }
    Ok(())
}

pub fn get_adam(ck: &Checkpoint, prefix: &str) -> Result<AdamState> {
    let meta: AdamMeta = ck.json(&format!("{prefix}/adam"))?;
    let mut first_moment = Vec::with_capacity(meta.tensors);
    let mut second_moment = Vec::with_capacity(meta.tensors);
    for j in 0..meta.tensors {
        first_moment.push(ck.tensor(&format!("{prefix}/adam/m{j}"))?.1.to_vec());
        second_moment.push(ck.tensor(&format!("{prefix}/adam/v{j}"))?.1.to_vec());
    }
    Ok(AdamState {
        config: meta.config,
        first_moment,
        second_moment,
        step_count: meta.step_count,
    })
}

pub fn put_trainable(ck: &mut Checkpoint, prefix: &str, t: &TrainableNet) -> Result<()> {
    put_net(ck, prefix, &t.net)?;
    put_adam(ck, prefix, &t.adam)
}

pub fn get_trainable(ck: &Checkpoint, prefix: &str) -> Result<TrainableNet> {
    let net = get_net(ck, prefix)?;
    let adam = get_adam(ck, prefix)?;
    let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    let moment_sizes: Vec<usize> = adam.first_moment.iter().map(|m| m.len()).collect();
    if sizes != moment_sizes {
        return Err(corrupt(format!("optimizer state of '{prefix}' does not match its network")));
    }
    Ok(TrainableNet { net, adam })
}
