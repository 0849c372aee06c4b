//! Named latent hierarchies stored in the checkpoint container.

use std::path::Path;

use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::diffusion::LatentRecord;
use crate::error::{Error, Result};
use crate::vecset::LatentHierarchy;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatentSet {
    pub names: Vec<String>,
    pub hierarchies: Vec<LatentHierarchy<f32>>,
    /// One condition vector per entry; empty vectors when unconditioned.
    pub conds: Vec<Vec<f64>>,
}

impl LatentSet {
    pub fn push(&mut self, name: impl Into<String>, latents: LatentHierarchy<f32>, cond: Vec<f64>) {
        self.names.push(name.into());
        self.hierarchies.push(latents);
        self.conds.push(cond);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_levels(&self) -> usize {
        self.hierarchies.first().map_or(0, |h| h.levels.len())
    }

    pub fn records(&self) -> Vec<LatentRecord> {
        self.hierarchies.iter().zip(&self.conds).map(|(h, c)| LatentRecord { latents: h.clone(), cond: c.clone() }).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({ "kind": "latents", "names": self.names, "levels": self.num_levels(), "conds": self.conds });
        let mut ckpt = Checkpoint::new(meta);
        for (i, h) in self.hierarchies.iter().enumerate() {
            for (l, z) in h.levels.iter().enumerate() {
                ckpt.push(format!("{i}/level{}", l + 1), z);
            }
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.get("kind").and_then(|k| k.as_str()) != Some("latents") {
            return Err(Error::Format("file does not hold latents".into()));
        }
        let names: Vec<String> = serde_json::from_value(ckpt.meta["names"].clone())?;
        let conds: Vec<Vec<f64>> = serde_json::from_value(ckpt.meta["conds"].clone())?;
        let levels = ckpt.meta["levels"].as_u64().ok_or_else(|| Error::Format("latent file lacks a level count".into()))? as usize;
        if conds.len() != names.len() {
            return Err(Error::Format("latent file has mismatched name and condition lists".into()));
        }
        let hierarchies = (0..names.len())
            .map(|i| {
                let levels = (1..=levels)
                    .map(|l| ckpt.get(&format!("{i}/level{l}")).cloned().ok_or_else(|| Error::Format(format!("latent file lacks entry {i} level {l}"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(LatentHierarchy { levels })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { names, hierarchies, conds })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&LatentHierarchy<f32>> {
        self.names.iter().position(|n| n == name).map(|i| &self.hierarchies[i])
    }
}
