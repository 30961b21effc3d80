//! Replicated simulation studies: estimator distributions under
//! contamination, asymptotic standard deviation tables, runtime scaling and
//! predictive comparisons.
//!
//! Every study is a pure function of its configuration. Random draws come
//! from streams keyed by `derive_seed(seed, [repetition, ...])`, so results
//! do not depend on the number of worker threads.

mod predictive;
mod runtime;
mod stats;
mod study;
mod tables;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimators::{EstimateError, FitOptions, Method};
use crate::gmrf::{latent_design, synthetic_covariates, GmrfError, Lattice, ModelKind, ModelSpec, Theta};
use crate::scoring::ScoringRule;

pub use predictive::{predictive_metrics, predictive_study, PredictiveMetrics, PredictiveResult, PredictiveRow, Protocol};
pub use runtime::{runtime_scaling, RuntimeConfig, RuntimeResult, RuntimeRow, Slope};
pub use stats::{median, quantile, sample_sd};
pub use study::{run_estimation_study, summarize, EstimateRow, StudyResult, SummaryRow};
pub use tables::{godambe_table, GodambeTable, GodambeTableConfig, GodambeTableRow};

/// Build identifier written to manifests.
pub const VERSION: &str = concat!("loos ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] GmrfError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Contaminate `k` replicates with one outlier `|y_i| + magnitude` each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierPlan {
    pub k: usize,
    pub magnitude: f64,
}

impl OutlierPlan {
    pub fn clean() -> Self {
        OutlierPlan { k: 0, magnitude: 0.0 }
    }
}

impl fmt::Display for OutlierPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={},K={}", self.k, self.magnitude)
    }
}

impl FromStr for OutlierPlan {
    type Err = ExperimentError;

    /// Parses `k=10,K=5`; `k=0` needs no magnitude.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExperimentError::Config(format!("outlier plan '{s}' is not of the form k=<count>,K=<magnitude>"));
        let mut k = None;
        let mut magnitude = None;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(bad)?;
            match key.trim() {
                "k" => k = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
                "K" => magnitude = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let k = k.ok_or_else(bad)?;
        match magnitude {
            Some(m) => Ok(OutlierPlan { k, magnitude: m }),
            None if k == 0 => Ok(OutlierPlan::clean()),
            None => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    #[default]
    Estimation,
    Predictive,
}

/// Configuration shared by the estimation and predictive studies.
///
/// In TOML every key is optional and falls back to [`StudyConfig::default`]:
///
/// ```toml
/// study = "estimation"      # or "predictive"
/// model = "direct"          # direct | latent | nonstationary
/// tau = 0.16
/// kappa = 1.75
/// sigma_eps = 0.5           # latent models only
/// beta = []                 # intercept and covariate coefficients
/// covariates = false        # attach the two synthetic covariates
/// nx = 20
/// ny = 22
/// n_obs = 300               # latent observation (training) nodes
/// n_test = 60               # predictive study test nodes
/// replicates = 10
/// repetitions = 100
/// outliers = [{ k = 0, magnitude = 0 }, { k = 10, magnitude = 5 }]
/// methods = ["ml", "loos:log", "loos:rcrps:2"]
/// init_offset = 0.2
/// seed = 1
/// [fit]
/// xtol = 1e-6
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub study: StudyKind,
    pub model: ModelKind,
    pub tau: f64,
    pub kappa: f64,
    pub sigma_eps: Option<f64>,
    pub beta: Vec<f64>,
    pub covariates: bool,
    pub nx: usize,
    pub ny: usize,
    pub n_obs: usize,
    pub n_test: usize,
    pub replicates: usize,
    pub repetitions: usize,
    pub outliers: Vec<OutlierPlan>,
    pub methods: Vec<Method>,
    /// Fits start at the truth shifted by this amount in every log-parameter.
    pub init_offset: f64,
    pub seed: Option<u64>,
    pub fit: FitOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            study: StudyKind::Estimation,
            model: ModelKind::Direct,
            tau: 0.16,
            kappa: 1.75,
            sigma_eps: None,
            beta: Vec::new(),
            covariates: false,
            nx: 20,
            ny: 22,
            n_obs: 300,
            n_test: 60,
            replicates: 10,
            repetitions: 100,
            outliers: vec![OutlierPlan::clean()],
            methods: Method::all(),
            init_offset: 0.2,
            seed: None,
            fit: FitOptions::default(),
        }
    }
}

pub const PRESETS: [&str; 5] = ["fig2", "fig4", "fig5", "predictive", "covariates"];

impl StudyConfig {
    /// Named configurations for the direct (`fig2`), latent (`fig4`) and
    /// non-stationary (`fig5`) estimation studies, the predictive study, and a
    /// direct model with a covariate mean.
    pub fn preset(name: &str) -> Result<Self, ExperimentError> {
        let plans = |ks: &[usize], magnitude: f64| -> Vec<OutlierPlan> {
            ks.iter().map(|&k| if k == 0 { OutlierPlan::clean() } else { OutlierPlan { k, magnitude } }).collect()
        };
        let base = StudyConfig::default();
        Ok(match name {
            "fig2" => StudyConfig { outliers: plans(&[0, 5, 10], 5.0), ..base },
            "fig4" => StudyConfig {
                model: ModelKind::Latent,
                sigma_eps: Some(0.5),
                outliers: plans(&[0, 10], 5.0),
                ..base
            },
            "fig5" => StudyConfig {
                model: ModelKind::Nonstationary,
                sigma_eps: Some(0.5),
                outliers: plans(&[0, 10], 5.0),
                ..base
            },
            "predictive" => StudyConfig {
                study: StudyKind::Predictive,
                model: ModelKind::Latent,
                sigma_eps: Some(0.5),
                outliers: vec![OutlierPlan::clean(), OutlierPlan { k: 10, magnitude: 5.0 }, OutlierPlan { k: 10, magnitude: 10.0 }],
                methods: vec![Method::Ml, Method::Loos(ScoringRule::Root)],
                ..base
            },
            "covariates" => StudyConfig {
                covariates: true,
                beta: vec![0.5, 1.0, -0.7],
                methods: vec![Method::Ml, Method::Loos(ScoringRule::Log), Method::Loos(ScoringRule::Root)],
                ..base
            },
            other => {
                return Err(ExperimentError::Config(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |m: String| Err(ExperimentError::Config(m));
        if self.seed.is_none() {
            return err("seed is required".into());
        }
        if self.replicates == 0 || self.repetitions == 0 {
            return err("replicates and repetitions must be positive".into());
        }
        if self.methods.is_empty() {
            return err("methods must not be empty".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite() && self.kappa > 0.0 && self.kappa.is_finite()) {
            return err(format!("tau = {} and kappa = {} must be positive", self.tau, self.kappa));
        }
        match (self.model.is_latent(), self.sigma_eps) {
            (true, Some(s)) if s > 0.0 && s.is_finite() => {}
            (true, _) => return err(format!("{} model needs a positive sigma_eps", self.model)),
            (false, Some(_)) => return err("sigma_eps is only used by latent models".into()),
            (false, None) => {}
        }
        if self.outliers.is_empty() {
            return err("outliers must list at least one plan (k = 0 for clean data)".into());
        }
        for p in &self.outliers {
            if p.k > self.replicates {
                return err(format!("outlier plan {p} contaminates more than {} replicates", self.replicates));
            }
            if p.k > 0 && !(p.magnitude > 0.0 && p.magnitude.is_finite()) {
                return err(format!("outlier plan {p} needs a positive magnitude"));
            }
        }
        if !(self.init_offset.is_finite()) {
            return err("init_offset must be finite".into());
        }
        if self.study == StudyKind::Predictive {
            if !self.model.is_latent() {
                return err("the predictive study needs a latent model".into());
            }
            if self.n_test == 0 {
                return err("the predictive study needs test nodes".into());
            }
            if !self.methods.contains(&Method::Ml) || !self.methods.iter().any(|m| matches!(m, Method::Loos(_))) {
                return err("the predictive study needs ml and one loos method".into());
            }
        }
        self.truth()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn lattice(&self) -> Result<Lattice, ExperimentError> {
        Ok(Lattice::new(self.nx, self.ny, [0.0, 10.0], [0.0, 10.0])?)
    }

    pub fn truth(&self) -> Result<Theta, ExperimentError> {
        let mut t = Theta::from_natural(self.tau, self.kappa).with_beta(self.beta.clone());
        if let Some(s) = self.sigma_eps {
            t = t.with_sigma_eps(s);
        }
        t.validate()?;
        Ok(t)
    }

    /// Truth shifted by `init_offset` in every coordinate.
    pub fn init(&self) -> Result<Theta, ExperimentError> {
        let t = self.truth()?;
        let x: Vec<f64> = t.to_vec().iter().map(|v| v + self.init_offset).collect();
        Ok(t.with_values(&x)?)
    }

    /// The fitted model and, for latent kinds, the held-out test nodes.
    pub fn model_spec(&self) -> Result<(ModelSpec, Vec<usize>), ExperimentError> {
        let lattice = self.lattice()?;
        let (mut model, test) = if self.model.is_latent() {
            let n_test = if self.study == StudyKind::Predictive { self.n_test } else { 0 };
            let (train, test) = latent_design(&lattice, self.n_obs, n_test, self.seed())?;
            (ModelSpec::latent(self.model, lattice, train)?, test)
        } else {
            (ModelSpec::direct(lattice), Vec::new())
        };
        if self.covariates {
            model = model.clone().with_covariates(synthetic_covariates(&model.lattice))?;
        }
        model.check_theta(&self.truth()?)?;
        Ok((model, test))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).unwrap_or_default().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Key-value text file describing how a set of outputs was produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.push("version", VERSION);
        m.push("command", command);
        m
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (k, v) in &self.entries {
            writeln!(f, "{k} {v}")?;
        }
        f.flush()?;
        Ok(())
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} {v}")?;
        }
        Ok(())
    }
}

pub(crate) fn write_csv_rows<T: Serialize, W: Write>(w: W, rows: &[T]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, ExperimentError> {
    let mut buf = Vec::new();
    write_csv_rows(&mut buf, rows)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outlier_plan_parsing() {
        assert_eq!("k=10,K=5".parse::<OutlierPlan>().unwrap(), OutlierPlan { k: 10, magnitude: 5.0 });
        assert_eq!("k=0".parse::<OutlierPlan>().unwrap(), OutlierPlan::clean());
        assert!("k=3".parse::<OutlierPlan>().is_err());
        assert!("n=3,K=2".parse::<OutlierPlan>().is_err());
    }

    #[test]
    fn presets_validate_once_seeded() {
        for name in PRESETS {
            let mut c = StudyConfig::preset(name).unwrap();
            assert!(c.validate().is_err(), "{name} without seed");
            c.seed = Some(3);
            c.validate().unwrap();
            c.model_spec().unwrap();
        }
        assert!(StudyConfig::preset("fig9").is_err());
    }

    #[test]
    fn init_is_offset_truth() {
        let c = StudyConfig { seed: Some(1), ..StudyConfig::preset("fig4").unwrap() };
        let t = c.truth().unwrap().to_vec();
        let i = c.init().unwrap().to_vec();
        assert_eq!(t.len(), 3);
        for (a, b) in t.iter().zip(&i) {
            assert!((b - a - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = StudyConfig { seed: Some(1), ..StudyConfig::default() };
        let b = StudyConfig { seed: Some(2), ..StudyConfig::default() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
