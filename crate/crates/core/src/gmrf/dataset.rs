use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GmrfError, ModelSpec, Theta};

/// One contaminated observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRecord {
    pub replicate: usize,
    /// Observation index within the replicate.
    pub index: usize,
    pub original: f64,
    pub value: f64,
}

/// Replicated observations of a model.
///
/// Serialized as JSON with fields `model` (kind, lattice, covariates,
/// obs_indices), optional `truth` and `seed`, `replicates` (one array of
/// `m` values per replicate) and `outliers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Theta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub replicates: Vec<Vec<f64>>,
    #[serde(default)]
    pub outliers: Vec<OutlierRecord>,
}

impl Dataset {
    pub fn new(model: ModelSpec, replicates: Vec<Vec<f64>>) -> Self {
        Dataset { model, truth: None, seed: None, replicates, outliers: Vec::new() }
    }

    pub fn n_replicates(&self) -> usize {
        self.replicates.len()
    }

    pub fn validate(&self) -> Result<(), GmrfError> {
        self.model.validate()?;
        let m = self.model.n_obs();
        if self.replicates.is_empty() {
            return Err(GmrfError::InvalidDataset("no replicates".into()));
        }
        for (r, y) in self.replicates.iter().enumerate() {
            if y.len() != m {
                return Err(GmrfError::InvalidDataset(format!(
                    "replicate {r} has {} values, expected {m}",
                    y.len()
                )));
            }
            if let Some(v) = y.iter().find(|v| !v.is_finite()) {
                return Err(GmrfError::InvalidDataset(format!("replicate {r} holds {v}")));
            }
        }
        for o in &self.outliers {
            if o.replicate >= self.replicates.len() || o.index >= m {
                return Err(GmrfError::InvalidDataset(format!(
                    "outlier record ({}, {}) out of range",
                    o.replicate, o.index
                )));
            }
        }
        if let Some(t) = &self.truth {
            self.model.check_theta(t)?;
        }
        Ok(())
    }

    pub fn to_json_writer<W: Write>(&self, w: W) -> Result<(), GmrfError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_json_reader<R: Read>(r: R) -> Result<Self, GmrfError> {
        let d: Dataset = serde_json::from_reader(r)?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<(), GmrfError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_json_writer(f)
    }

    pub fn load(path: &Path) -> Result<Self, GmrfError> {
        Self::from_json_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// CSV with columns `replicate,node_index,s1,s2,value,is_outlier`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GmrfError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "node_index", "s1", "s2", "value", "is_outlier"])?;
        for (r, y) in self.replicates.iter().enumerate() {
            for (j, v) in y.iter().enumerate() {
                let node = self.model.obs_node(j);
                let (s1, s2) = self.model.lattice.coords(node);
                let flagged = self.outliers.iter().any(|o| o.replicate == r && o.index == j);
                out.serialize((r, node, s1, s2, v, flagged))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
