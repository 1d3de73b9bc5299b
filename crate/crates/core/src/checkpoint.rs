//! Checkpoint files: `DGCK` magic, a format version, a JSON header and the
//! raw little-endian `f64` tensor bodies.

use std::collections::BTreeMap;
use std::path::Path;

use autograd::{AdamState, NamedTensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors grouped by owner (`generator`, `local`, `global`, `phi`),
/// optimizer moments and training counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Training configuration in its `key = value` text form.
    pub config_text: String,
    pub config_hash: String,
    pub epoch: u64,
    pub step: u64,
    pub groups: BTreeMap<String, Vec<NamedTensor>>,
    pub optimizers: BTreeMap<String, AdamState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_text: String,
    config_hash: String,
    epoch: u64,
    step: u64,
    /// Optimizer name → steps taken.
    optimizer_steps: BTreeMap<String, u64>,
    tensors: Vec<TensorEntry>,
}

fn moments_group(opt: &str, which: &str) -> String {
    format!("adam.{opt}.{which}")
}

impl Checkpoint {
    pub fn group(&self, name: &str) -> Result<&[NamedTensor]> {
        self.groups
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::State(format!("checkpoint has no {name} parameters")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut body: Vec<&NamedTensor> = Vec::new();
        let mut all: Vec<(String, &Vec<NamedTensor>)> = self.groups.iter().map(|(k, v)| (k.clone(), v)).collect();
        for (opt, state) in &self.optimizers {
            all.push((moments_group(opt, "m"), &state.first_moments));
            all.push((moments_group(opt, "v"), &state.second_moments));
        }
        for (group, list) in &all {
            for t in list.iter() {
                if t.data.len() != t.shape.iter().product::<usize>() {
                    return Err(Error::shape(format!("tensor {} does not match its shape", t.name)));
                }
                tensors.push(TensorEntry {
                    group: group.clone(),
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                });
                body.push(t);
            }
        }
        let header = Header {
            config_text: self.config_text.clone(),
            config_hash: self.config_hash.clone(),
            epoch: self.epoch,
            step: self.step,
            optimizer_steps: self.optimizers.iter().map(|(k, v)| (k.clone(), v.step)).collect(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in body {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Migration(format!(
                "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Parse("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        let mut at = header_end;
        let mut groups: BTreeMap<String, Vec<NamedTensor>> = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = at + n * 8;
            if end > bytes.len() {
                return Err(Error::Parse(format!("checkpoint body truncated at {}", entry.name)));
            }
            let data = bytes[at..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            at = end;
            groups.entry(entry.group).or_default().push(NamedTensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        if at != bytes.len() {
            return Err(Error::Parse("trailing bytes after checkpoint body".into()));
        }
        let mut optimizers = BTreeMap::new();
        for (opt, step) in header.optimizer_steps {
            let m = groups.remove(&moments_group(&opt, "m")).unwrap_or_default();
            let v = groups.remove(&moments_group(&opt, "v")).unwrap_or_default();
            optimizers.insert(
                opt,
                AdamState {
                    step,
                    first_moments: m,
                    second_moments: v,
                },
            );
        }
        Ok(Checkpoint {
            config_text: header.config_text,
            config_hash: header.config_hash,
            epoch: header.epoch,
            step: header.step,
            groups,
            optimizers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let t = |name: &str, data: Vec<f64>| NamedTensor {
            name: name.into(),
            shape: vec![data.len()],
            data,
        };
        let mut groups = BTreeMap::new();
        groups.insert("generator".into(), vec![t("a", vec![1.5, -0.0, f64::MIN_POSITIVE]), t("b", vec![])]);
        let mut optimizers = BTreeMap::new();
        optimizers.insert(
            "generator".into(),
            AdamState {
                step: 3,
                first_moments: vec![t("a", vec![0.1, 0.2, 0.3])],
                second_moments: vec![t("a", vec![1e-300, 2.0, 3.0])],
            },
        );
        Checkpoint {
            config_text: "seed = 1\n".into(),
            config_hash: "abc".into(),
            epoch: 2,
            step: 9,
            groups,
            optimizers,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"DGCK");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.groups["generator"][0].data[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn other_versions_need_migration() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Migration(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
