//! Binary checkpoint format.
//!
//! ```text
//! "JPGN" | version u32 | count u32
//! count × { name_len u32 | name utf-8 | dtype u8 | rank u8 | dims u32[rank] | payload }
//! meta_len u32 | meta JSON | rng seed [u8; 32] | rng word position u128
//! ```
//! All integers and payloads are little-endian. dtype 0 is f32, 1 is f64; a tensor is
//! written as f32 whenever that is lossless.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, UNet, UNetConfig};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"JPGN";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Pfu,
    Gen,
    Uaf,
}

impl NetKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            NetKind::Pfu => "pfu",
            NetKind::Gen => "gen",
            NetKind::Uaf => "uaf",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: NetKind,
    pub net: UNetConfig,
    pub kernel_size: usize,
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn from_net(kind: NetKind, net: &UNet, kernel_size: usize, train: Option<&TrainConfig>, rng: &ChaCha8Rng) -> Self {
        Checkpoint {
            meta: CheckpointMeta { kind, net: net.config().clone(), kernel_size, train: train.cloned() },
            tensors: net.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            rng: RngState::of(rng),
        }
    }

    /// Rebuilds the network described by the metadata and loads the stored parameters.
    pub fn to_unet(&self) -> Result<UNet> {
        let mut net = UNet::new(self.meta.net.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut store = ParamStore::default();
        for (p, (name, value)) in net.params().iter().zip(&self.tensors) {
            if &p.name != name {
                return Err(Error::shape("checkpoint", format!("expected tensor `{}`, found `{name}`", p.name)));
            }
            store.push(name.clone(), value.clone(), p.trainable);
        }
        if self.tensors.len() != net.params().len() {
            return Err(Error::shape(
                "checkpoint",
                format!("{} tensors for a network with {}", self.tensors.len(), net.params().len()),
            ));
        }
        net.load_params(store)?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let lossless = t.data().iter().all(|&v| (v as f32) as f64 == v || v.is_nan());
            out.push(if lossless { DTYPE_F32 } else { DTYPE_F64 });
            out.push(t.dims().len() as u8);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            if lossless {
                t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes()));
            } else {
                t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch { found: version, expected: VERSION });
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let dtype = r.take(1, "dtype")?[0];
            let rank = r.take(1, "rank")?[0] as usize;
            let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = match dtype {
                DTYPE_F32 => r
                    .take(n * 4, "f32 payload")?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                DTYPE_F64 => r
                    .take(n * 8, "f64 payload")?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                other => return Err(Error::Format(format!("unknown dtype tag {other} for `{name}`"))),
            };
            tensors.push((name, Tensor::new(dims, data)?));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { meta, tensors, rng: RngState { seed, word_pos } })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("checkpoint ended while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Checkpoint::from_bytes(&bytes)
}
