//! Binary checkpoints: a text manifest followed by named little-endian
//! tensors. Round trips are bit-exact.
//!
//! Layout: magic `KVCK`, `u32` version, `u32` manifest length and UTF-8
//! `key=value` lines, `u32` tensor count, then per tensor `u32` name length,
//! name, `u8` flags (bit 0 = trainable), `u32` rank, `u64` dims, `f64` data.

use std::fs;
use std::path::Path;

use kvae_autodiff::Tensor;

use crate::error::{CoreError, Result};
use crate::kvae::{KvaeModel, ModelConfig};
use crate::params::ParamStore;
use crate::train::{Adam, TrainState};

const MAGIC: &[u8; 4] = b"KVCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub manifest: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.manifest.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key).ok_or_else(|| CoreError::Checkpoint(format!("manifest lacks {key:?}")))?;
        v.parse().map_err(|_| CoreError::Checkpoint(format!("bad value {v:?} for {key:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut text = String::new();
        for (k, v) in &self.manifest {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(CoreError::Checkpoint(format!("manifest entry {k:?} cannot be stored")));
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(u8::from(t.trainable));
            out.extend_from_slice(&(t.value.rank() as u32).to_le_bytes());
            for &d in t.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CoreError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| CoreError::Checkpoint("manifest is not UTF-8".into()))?;
        let manifest = text
            .lines()
            .map(|line| {
                line.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| CoreError::Checkpoint(format!("bad manifest line {line:?}")))
            })
            .collect::<Result<_>>()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CoreError::Checkpoint("tensor name is not UTF-8".into()))?;
            let trainable = r.take(1)?[0] & 1 == 1;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let size = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let size = size.filter(|&s| s.saturating_mul(8) <= bytes.len()).ok_or_else(|| {
                CoreError::Checkpoint(format!("tensor {name:?} has an impossible shape {shape:?}"))
            })?;
            let data = (0..size).map(|_| r.f64()).collect::<Result<_>>()?;
            let value = Tensor::new(&shape, data).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
            tensors.push(NamedTensor { name, trainable, value });
        }
        if r.pos != bytes.len() {
            return Err(CoreError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { manifest, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CoreError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, ck.to_bytes()?).map_err(|source| CoreError::Io { path: path.to_path_buf(), source })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| CoreError::Io { path: path.to_path_buf(), source })?;
    Checkpoint::from_bytes(&bytes)
}

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

/// Packs parameters and optimizer state. `extra` lands in the manifest
/// after the training counters.
pub fn pack(model: &KvaeModel, state: &TrainState, extra: &[(String, String)]) -> Checkpoint {
    let mut manifest = vec![
        ("seed".to_string(), state.seed.to_string()),
        ("epoch".to_string(), state.epoch.to_string()),
        ("adam_step".to_string(), state.adam.step.to_string()),
        ("skipped_steps".to_string(), state.skipped_steps.to_string()),
    ];
    manifest.extend_from_slice(extra);
    let mut tensors: Vec<NamedTensor> = model
        .params
        .iter()
        .map(|p| NamedTensor { name: format!("{PARAM}{}", p.name), trainable: p.trainable, value: p.value.clone() })
        .collect();
    for (i, name) in state.adam.names.iter().enumerate() {
        tensors.push(NamedTensor { name: format!("{ADAM_M}{name}"), trainable: false, value: state.adam.m[i].clone() });
        tensors.push(NamedTensor { name: format!("{ADAM_V}{name}"), trainable: false, value: state.adam.v[i].clone() });
    }
    Checkpoint { manifest, tensors }
}

/// Rebuilds a model (validated against `config`) and its training state.
pub fn unpack(ck: &Checkpoint, config: ModelConfig) -> Result<(KvaeModel, TrainState)> {
    let mut params = ParamStore::new();
    for t in ck.tensors.iter().filter(|t| t.name.starts_with(PARAM)) {
        params.insert(&t.name[PARAM.len()..], t.value.clone(), t.trainable)?;
    }
    let model = KvaeModel::with_params(config, params)?;
    let mut adam = Adam::new(&model);
    adam.step = ck.parse("adam_step")?;
    let find = |prefix: &str, name: &str| -> Result<Tensor> {
        let key = format!("{prefix}{name}");
        ck.tensors
            .iter()
            .find(|t| t.name == key)
            .map(|t| t.value.clone())
            .ok_or_else(|| CoreError::Checkpoint(format!("missing optimizer tensor {key:?}")))
    };
    for (i, name) in adam.names.clone().iter().enumerate() {
        adam.m[i] = find(ADAM_M, name)?;
        adam.v[i] = find(ADAM_V, name)?;
        if adam.m[i].shape() != model.params.value(name)?.shape() || adam.v[i].shape() != adam.m[i].shape() {
            return Err(CoreError::Checkpoint(format!("optimizer state for {name:?} has the wrong shape")));
        }
    }
    let state =
        TrainState { seed: ck.parse("seed")?, epoch: ck.parse("epoch")?, adam, skipped_steps: ck.parse("skipped_steps")? };
    Ok((model, state))
}
