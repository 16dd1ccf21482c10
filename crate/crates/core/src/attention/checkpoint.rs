//! `LASR` parameter container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "LASR"  version:u16
//! seq_len:u32 embed_dim:u32 qk_dim:u32 segment_w:u32 gsta_layers:u32
//! ffn_ratio:u32 recent_k:u32 gamma:f32 heads:u32 recency_buckets:u32 flags:u8
//! then until EOF, per tensor:
//!   name_len:u16 name:[u8] rank:u8 dims:[u32; rank] data:[f32; prod(dims)]
//! ```
//!
//! `flags` bit 0 selects the softmax gate, bit 1 disables fusion, bit 2
//! disables the recency embedding.

use std::io::{Read, Write};
use std::path::Path;

use super::config::{GateKind, LaserConfig};
use super::params::{GstaLayerParams, LaserParams, Parameters, RecencyTable, StaParams, TensorView};
use super::AttentionError;
use crate::tensor::{Matrix, Vector};

pub const MAGIC: &[u8; 4] = b"LASR";
pub const VERSION: u16 = 1;
const RECENCY_EDGES: &str = "recency.edges";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_view(name: impl Into<String>, view: TensorView<'_>) -> Self {
        Self {
            name: name.into(),
            dims: view.dims(),
            data: view.data().to_vec(),
        }
    }

    pub fn matrix(&self) -> Result<Matrix, AttentionError> {
        match self.dims[..] {
            [r, c] => Ok(Matrix::from_vec(r, c, self.data.clone())),
            _ => Err(AttentionError::Checkpoint(format!(
                "{} has rank {}, expected 2",
                self.name,
                self.dims.len()
            ))),
        }
    }

    pub fn vector(&self) -> Result<Vector, AttentionError> {
        match self.dims[..] {
            [_] => Ok(Vector::from_vec(self.data.clone())),
            _ => Err(AttentionError::Checkpoint(format!(
                "{} has rank {}, expected 1",
                self.name,
                self.dims.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: LaserConfig,
    pub tensors: Vec<NamedTensor>,
}

fn flags(cfg: &LaserConfig) -> u8 {
    let mut f = 0u8;
    if cfg.gate == GateKind::Softmax {
        f |= 1;
    }
    if !cfg.use_fusion {
        f |= 2;
    }
    if !cfg.use_recency {
        f |= 4;
    }
    f
}

fn corrupt(msg: impl Into<String>) -> AttentionError {
    AttentionError::Checkpoint(msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AttentionError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, AttentionError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, AttentionError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, AttentionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, AttentionError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            c.seq_len,
            c.embed_dim,
            c.qk_dim,
            c.segment_w,
            c.gsta_layers,
            c.ffn_ratio,
            c.recent_k,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.gamma.to_le_bytes());
        out.extend_from_slice(&(c.heads as u32).to_le_bytes());
        out.extend_from_slice(&(c.recency_buckets as u32).to_le_bytes());
        out.push(flags(c));
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, AttentionError> {
        let mut cur = Cursor { buf, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(corrupt("bad magic, expected LASR"));
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let mut ints = [0usize; 7];
        for v in &mut ints {
            *v = cur.u32()? as usize;
        }
        let gamma = cur.f32()?;
        let heads = cur.u32()? as usize;
        let recency_buckets = cur.u32()? as usize;
        let f = cur.u8()?;
        let config = LaserConfig {
            seq_len: ints[0],
            embed_dim: ints[1],
            qk_dim: ints[2],
            segment_w: ints[3],
            gsta_layers: ints[4],
            ffn_ratio: ints[5],
            recent_k: ints[6],
            gamma,
            heads,
            recency_buckets,
            gate: if f & 1 != 0 { GateKind::Softmax } else { GateKind::Sigmoid },
            use_fusion: f & 2 == 0,
            use_recency: f & 4 == 0,
        };
        let mut tensors = Vec::new();
        while cur.pos < buf.len() {
            let n = cur.u16()? as usize;
            let name = String::from_utf8(cur.take(n)?.to_vec())
                .map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let rank = cur.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(cur.u32()? as usize);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt(format!("{name}: dims overflow")))?;
            let bytes = cur.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| corrupt(format!("{name}: payload overflow")))?,
            )?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        Ok(Self { config, tensors })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), AttentionError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AttentionError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AttentionError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AttentionError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor, AttentionError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))
    }
}

impl LaserParams {
    /// Learnable tensors plus the recency bucket edges.
    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .tensors()
            .into_iter()
            .map(|(n, v)| NamedTensor::from_view(n, v))
            .collect();
        out.push(NamedTensor {
            name: RECENCY_EDGES.into(),
            dims: vec![self.recency.bucket_edges.len()],
            data: self.recency.bucket_edges.clone(),
        });
        out
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, AttentionError> {
        let cfg = &ckpt.config;
        let m = |n: &str| ckpt.get(n).and_then(NamedTensor::matrix);
        let v = |n: &str| ckpt.get(n).and_then(NamedTensor::vector);
        let sta = StaParams {
            w_q: m("sta.w_q")?,
            w_k: m("sta.w_k")?,
            w_v: m("sta.w_v")?,
            ffn_w1: m("sta.ffn_w1")?,
            ffn_b1: v("sta.ffn_b1")?,
            ffn_w2: m("sta.ffn_w2")?,
            ffn_b2: v("sta.ffn_b2")?,
            ln_gain: v("sta.ln_gain")?,
            ln_bias: v("sta.ln_bias")?,
        };
        let gsta = (0..cfg.gsta_layers)
            .map(|l| {
                Ok(GstaLayerParams {
                    w_q: m(&format!("gsta.{l}.w_q"))?,
                    w_k: m(&format!("gsta.{l}.w_k"))?,
                    w_v: m(&format!("gsta.{l}.w_v"))?,
                })
            })
            .collect::<Result<Vec<_>, AttentionError>>()?;
        let table = m("recency.table")?;
        let edges = v(RECENCY_EDGES)?.into_vec();
        if table.rows() != edges.len() + 1 || !edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(corrupt("recency table and edges disagree"));
        }
        let params = Self {
            sta,
            gsta,
            recency: RecencyTable::with_edges(table, edges),
        };
        let expect = LaserParams::zeros(cfg);
        for ((n, a), (_, b)) in params.tensors().iter().zip(expect.tensors().iter()) {
            if a.dims() != b.dims() {
                return Err(corrupt(format!("{n}: dims {:?}, config implies {:?}", a.dims(), b.dims())));
            }
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut cfg = LaserConfig::new(20, 8, 4, 5, 2);
        cfg.gate = GateKind::Softmax;
        cfg.use_recency = false;
        let p = LaserParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let ck = Checkpoint {
            config: cfg.clone(),
            tensors: p.to_named_tensors(),
        };
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"LASR");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(LaserParams::from_checkpoint(&back).unwrap(), p);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let cfg = LaserConfig::new(20, 8, 4, 5, 1);
        let ck = Checkpoint {
            config: cfg,
            tensors: vec![],
        };
        let mut b = ck.to_bytes();
        b.extend_from_slice(&[5, 0, b'a']);
        assert!(Checkpoint::from_bytes(&b).is_err());
    }
}
