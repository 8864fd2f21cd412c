//! Versioned weight container.
//!
//! ```text
//! offset   size  field
//! 0        8     magic b"REFSRCKP"
//! 8        4     format version, u32 little-endian (currently 1)
//! 12       4     header length H, u32 little-endian
//! 16       H     header: UTF-8 JSON, see [`Header`]
//! 16 + H   ...   payload
//! ```
//!
//! The payload walks `header.modules` in order and, inside each module, its
//! `params` in order. Every parameter contributes `numel = Π shape` f32
//! little-endian values, followed, when the module has `optimizer: true`,
//! by `numel` Adam first moments and `numel` second moments. Nothing
//! follows the last parameter.

use std::path::Path;

use refsr_core::nn::ParamStore;
use serde::{Deserialize, Serialize};

use crate::io::{atomic_write, read};
use crate::{Failure, Result};

pub const MAGIC: &[u8; 8] = b"REFSRCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamMeta {
    pub name: String,
    pub shape: [usize; 4],
    pub frozen: bool,
    pub lr_scale: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleMeta {
    /// Position in the bundle: `matcher`, `teacher`, `sr`, `critic`, `vsr`.
    pub role: String,
    pub architecture_id: String,
    /// Everything needed to rebuild the network before loading values.
    pub arch: serde_json::Value,
    /// Adam steps taken.
    pub adam_step: u64,
    pub optimizer: bool,
    pub params: Vec<ParamMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    /// `teacher`, `student`, `image-sr` or `video-sr`.
    pub kind: String,
    pub seed: u64,
    /// Resolved training configuration.
    pub config: serde_json::Value,
    pub config_fingerprint: String,
    pub modules: Vec<ModuleMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Module {
    pub meta: ModuleMeta,
    pub values: Vec<Vec<f32>>,
    /// Adam moments; empty when the module carries no optimizer state.
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Module {
    pub fn capture(role: &str, architecture_id: String, arch: serde_json::Value, store: &ParamStore, optimizer: bool) -> Self {
        let params = store.params();
        let meta = ModuleMeta {
            role: role.into(),
            architecture_id,
            arch,
            adam_step: store.step,
            optimizer,
            params: params
                .iter()
                .map(|p| ParamMeta { name: p.name.clone(), shape: p.value.shape(), frozen: p.frozen, lr_scale: p.lr_scale })
                .collect(),
        };
        let pick = |f: &dyn Fn(&refsr_core::nn::Param) -> Vec<f32>| params.iter().map(f).collect::<Vec<_>>();
        Self {
            meta,
            values: pick(&|p| p.value.data().to_vec()),
            m: if optimizer { pick(&|p| p.m.clone()) } else { Vec::new() },
            v: if optimizer { pick(&|p| p.v.clone()) } else { Vec::new() },
        }
    }

    /// Load values (and optimizer state when present) into a store built
    /// for the same architecture.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if store.params().len() != self.meta.params.len() {
            return Err(Failure::invalid(format!(
                "{} module has {} parameters, the network expects {}",
                self.meta.role,
                self.meta.params.len(),
                store.params().len()
            )));
        }
        for (i, (p, meta)) in store.params_mut().iter_mut().zip(&self.meta.params).enumerate() {
            if p.name != meta.name || p.value.shape() != meta.shape {
                return Err(Failure::invalid(format!(
                    "{} parameter {i}: checkpoint has {} {:?}, network expects {} {:?}",
                    self.meta.role,
                    meta.name,
                    meta.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(&self.values[i]);
            p.frozen = meta.frozen;
            p.lr_scale = meta.lr_scale;
            if self.meta.optimizer {
                p.m.copy_from_slice(&self.m[i]);
                p.v.copy_from_slice(&self.v[i]);
            }
        }
        store.step = self.meta.adam_step;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub modules: Vec<Module>,
}

fn push_f32(out: &mut Vec<u8>, xs: &[f32]) {
    out.extend(xs.iter().flat_map(|v| v.to_le_bytes()));
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, config: serde_json::Value, config_fingerprint: String, modules: Vec<Module>) -> Self {
        let header = Header {
            kind: kind.into(),
            seed,
            config,
            config_fingerprint,
            modules: modules.iter().map(|m| m.meta.clone()).collect(),
        };
        Self { header, modules }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for m in &self.modules {
            for i in 0..m.values.len() {
                push_f32(&mut out, &m.values[i]);
                if m.meta.optimizer {
                    push_f32(&mut out, &m.m[i]);
                    push_f32(&mut out, &m.v[i]);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Failure::invalid(format!("not a valid checkpoint: {msg}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let mut pos = 16 + hlen;
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let chunk = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated payload"))?;
            pos += 4 * n;
            Ok(chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let mut modules = Vec::with_capacity(header.modules.len());
        for meta in &header.modules {
            let (mut values, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
            for p in &meta.params {
                let n = p.shape.iter().product();
                values.push(take(n)?);
                if meta.optimizer {
                    m.push(take(n)?);
                    v.push(take(n)?);
                }
            }
            modules.push(Module { meta: meta.clone(), values, m, v });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { header, modules })
    }

    /// Read `path`; absence is a missing `what` (e.g. "student checkpoint").
    pub fn load(path: &Path, what: &str) -> Result<Self> {
        Self::from_bytes(&read(path, what)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn module(&self, role: &str) -> Result<&Module> {
        self.modules
            .iter()
            .find(|m| m.meta.role == role)
            .ok_or_else(|| Failure::invalid(format!("{} checkpoint has no {role} module", self.header.kind)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use refsr_core::nn::Adam;
    use refsr_core::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::from_vec([1, 1, 2, 2], vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE]));
        s.add("b", Tensor::from_vec([3, 1, 1, 1], vec![0.25, 0.5, 0.75]));
        s
    }

    #[test]
    fn round_trip_with_optimizer_state() {
        let mut s = store();
        s.params_mut()[0].grad = Tensor::full([1, 1, 2, 2], 0.5);
        s.adam_step(&Adam::new(0.1));
        let m = Module::capture("sr", "x".into(), serde_json::json!({"c": 1}), &s, true);
        let ck = Checkpoint::new("image-sr", 7, serde_json::json!({}), "f".into(), vec![m]);
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let mut fresh = store();
        back.module("sr").unwrap().restore(&mut fresh).unwrap();
        assert_eq!(fresh.step, 1);
        for (a, b) in fresh.params().iter().zip(s.params()) {
            assert_eq!((a.value.data(), &a.m, &a.v), (b.value.data(), &b.m, &b.v));
        }
        // 7 values, each with two moments.
        assert_eq!(bytes.len(), 16 + u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize + 4 * 21);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let ck = Checkpoint::new("teacher", 0, serde_json::json!(null), String::new(), vec![Module::capture("m", "x".into(), serde_json::json!(null), &store(), false)]);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Checkpoint::from_bytes(&v2).is_err());
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros([1, 1, 2, 2]));
        assert!(ck.module("m").unwrap().restore(&mut other).is_err());
        assert!(ck.module("critic").is_err());
    }
}
