//! Binary checkpoint container.
//!
//! Layout: `b"LFCK"`, `u32` version, `u64` header length, a JSON header
//! describing the network and every array, then the arrays as little-endian
//! `f32` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{ActorCritic, NetRole, NetworkSpec};
use super::PolicyError;

const MAGIC: &[u8; 4] = b"LFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    net: NetRole,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    step: u64,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ActorCritic<f32>,
    /// Environment steps consumed when the checkpoint was written.
    pub step: u64,
    /// Free-form run metadata (action kind, config digest, ...).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PolicyError> {
        let m = &self.model;
        let arrays = [(NetRole::Policy, &m.policy), (NetRole::Value, &m.value)]
            .into_iter()
            .flat_map(|(net, set)| {
                set.arrays.iter().map(move |a| ArrayEntry {
                    net,
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                })
            })
            .collect();
        let header = Header {
            spec: m.spec.clone(),
            step: self.step,
            meta: self.meta.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + json.len() + 4 * m.num_params());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for x in m.policy.iter().chain(m.value.iter()) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint, PolicyError> {
        let bad = |m: &str| PolicyError::Checkpoint(m.to_string());
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        header.spec.validate()?;

        let mut model = ActorCritic::<f32>::zeros(header.spec.clone());
        let expected: Vec<_> = [NetRole::Policy, NetRole::Value]
            .into_iter()
            .flat_map(|net| header.spec.param_shapes(net).into_iter().map(move |(n, s)| (net, n, s)))
            .collect();
        if expected.len() != header.arrays.len() {
            return Err(bad("array count does not match the network spec"));
        }
        for ((net, name, shape), e) in expected.iter().zip(&header.arrays) {
            if *net != e.net || *name != e.name || *shape != e.shape {
                return Err(PolicyError::Checkpoint(format!(
                    "array {:?}/{} has shape {:?}, spec requires {:?}/{} {:?}",
                    e.net, e.name, e.shape, net, name, shape
                )));
            }
        }
        let data = &body[hlen..];
        if data.len() != 4 * model.num_params() {
            return Err(PolicyError::Checkpoint(format!(
                "payload has {} bytes, expected {}",
                data.len(),
                4 * model.num_params()
            )));
        }
        let mut chunks = data.chunks_exact(4);
        for x in model.policy.iter_mut().chain(model.value.iter_mut()) {
            *x = f32::from_le_bytes(chunks.next().expect("length checked").try_into().expect("4 bytes"));
        }
        if !model.is_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(Checkpoint {
            model,
            step: header.step,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        // write-then-rename so readers never see a partial file
        let tmp = path.with_extension("tmp");
        self.write_to(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, PolicyError> {
        Checkpoint::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Loads and requires the stored network to have exactly `spec`.
    pub fn load_for(path: &Path, spec: &NetworkSpec) -> Result<Checkpoint, PolicyError> {
        let ck = Checkpoint::load(path)?;
        if &ck.model.spec != spec {
            return Err(PolicyError::Checkpoint(format!(
                "checkpoint network {:?} does not match {:?}",
                ck.model.spec, spec
            )));
        }
        Ok(ck)
    }
}
