use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, ExperimentError, Manifest};
use crate::estimators::{godambe_for_methods, GodambeOptions, GodambeResult, Method};
use crate::gmrf::{Lattice, ModelSpec, Theta};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GodambeTableConfig {
    /// Parameter points as `(tau, kappa)`.
    pub thetas: Vec<(f64, f64)>,
    pub methods: Vec<Method>,
    pub n_sims: usize,
    pub fd_step: f64,
    pub nx: usize,
    pub ny: usize,
    pub seed: Option<u64>,
}

impl Default for GodambeTableConfig {
    fn default() -> Self {
        GodambeTableConfig {
            thetas: vec![(0.16, 1.75), ((-1.6f64).exp(), 1.04f64.exp())],
            methods: Method::all(),
            n_sims: 1000,
            fd_step: 1e-4,
            nx: 20,
            ny: 22,
            seed: None,
        }
    }
}

/// Asymptotic standard deviations of one parameter at one point, one entry
/// per method.
#[derive(Debug, Clone, PartialEq)]
pub struct GodambeTableRow {
    pub tau: f64,
    pub kappa: f64,
    pub parameter: String,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GodambeTable {
    pub config: GodambeTableConfig,
    pub methods: Vec<Method>,
    pub rows: Vec<GodambeTableRow>,
    pub results: Vec<Vec<GodambeResult>>,
}

/// Godambe standard deviations of the direct model for every point and
/// method. All methods at a point share the simulated datasets.
pub fn godambe_table(config: &GodambeTableConfig, exec: Execution) -> Result<GodambeTable, ExperimentError> {
    if config.seed.is_none() {
        return Err(ExperimentError::Config("seed is required".into()));
    }
    if config.thetas.is_empty() || config.methods.is_empty() {
        return Err(ExperimentError::Config("thetas and methods must be non-empty".into()));
    }
    let model = ModelSpec::direct(Lattice::new(config.nx, config.ny, [0.0, 10.0], [0.0, 10.0])?);
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (t, &(tau, kappa)) in config.thetas.iter().enumerate() {
        let theta = Theta::from_natural(tau, kappa);
        theta.validate()?;
        let opts = GodambeOptions {
            n_sims: config.n_sims,
            seed: crate::rng::derive_seed(config.seed.unwrap_or_default(), &[t as u64]),
            fd_step: config.fd_step,
            replicates_per_sim: 1,
            exec,
        };
        let res = godambe_for_methods(&theta, &model, &config.methods, &opts)?;
        for (p, name) in theta.param_names().into_iter().enumerate() {
            rows.push(GodambeTableRow { tau, kappa, parameter: name, sd: res.iter().map(|r| r.asymptotic_sd[p]).collect() });
        }
        results.push(res);
    }
    Ok(GodambeTable { config: config.clone(), methods: config.methods.clone(), rows, results })
}

impl GodambeTable {
    pub fn column(&self, method: &Method) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }

    pub fn row(&self, point: usize, parameter: &str) -> Option<&GodambeTableRow> {
        let (tau, kappa) = *self.config.thetas.get(point)?;
        self.rows.iter().find(|r| r.tau == tau && r.kappa == kappa && r.parameter == parameter)
    }

    /// CSV with header `tau,kappa,parameter,<method labels...>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["tau".to_string(), "kappa".to_string(), "parameter".to_string()];
        header.extend(self.methods.iter().map(|m| m.label().to_string()));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.tau.to_string(), r.kappa.to_string(), r.parameter.clone()];
            rec.extend(r.sd.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `godambe.csv` and `manifest.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest, ExperimentError> {
        std::fs::create_dir_all(dir)?;
        let mut bytes = Vec::new();
        self.write_csv(&mut bytes)?;
        std::fs::write(dir.join("godambe.csv"), &bytes)?;
        let mut m = Manifest::new("godambe");
        m.push("config_sha256", sha256_hex(serde_json::to_string(&self.config)?.as_bytes()));
        m.push("seed", self.config.seed.unwrap_or_default());
        m.push("point_seed_rule", "derive_seed(seed, [point])");
        m.push("n_sims", self.config.n_sims);
        m.push("results_sha256", sha256_hex(&bytes));
        m.write(&dir.join("manifest.txt"))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoringRule;

    #[test]
    fn single_method_table() {
        let cfg = GodambeTableConfig {
            thetas: vec![(0.5, 1.0)],
            methods: vec![Method::Loos(ScoringRule::Log)],
            n_sims: 100,
            nx: 5,
            ny: 5,
            seed: Some(2),
            ..GodambeTableConfig::default()
        };
        let t = godambe_table(&cfg, Execution::Parallel).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].sd.len(), 1);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "tau,kappa,parameter,Slog");
        assert_eq!(text.lines().count(), 3);
    }
}
