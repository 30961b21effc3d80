//! Lattice GMRF models: finite-element precision matrices, parameters,
//! model specifications, simulation and outlier contamination.
//!
//! Nodes are numbered row-major: node `i` sits at column `i % nx` and row
//! `i / nx`, with coordinates `s = (x0 + col*hx, y0 + row*hy)`.

mod dataset;
mod fem;
mod sample;

pub use dataset::{Dataset, OutlierRecord};
pub use fem::{build_fem_matrices, build_precision, interpret_params, FemMatrices, PrecisionBuilder};
pub use sample::{
    inject_outliers, latent_design, sample_direct, sample_fields, sample_latent, synthetic_covariates,
};

use crate::linalg::LinalgError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Smallest allowed `sqrt|s1|` in the non-stationary scale `tau_i`.
pub const NONSTATIONARY_TAU_FLOOR: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum GmrfError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    nx: usize,
    ny: usize,
    x_range: [f64; 2],
    y_range: [f64; 2],
}

impl Lattice {
    pub fn new(nx: usize, ny: usize, x_range: [f64; 2], y_range: [f64; 2]) -> Result<Self, GmrfError> {
        let l = Lattice { nx, ny, x_range, y_range };
        l.validate()?;
        Ok(l)
    }

    /// 20 x 22 nodes over `[0, 10]^2`.
    pub fn study_default() -> Self {
        Lattice { nx: 20, ny: 22, x_range: [0.0, 10.0], y_range: [0.0, 10.0] }
    }

    /// Square lattice over `[0, 10]^2` with `side^2` nodes.
    pub fn square(side: usize) -> Result<Self, GmrfError> {
        Self::new(side, side, [0.0, 10.0], [0.0, 10.0])
    }

    pub fn validate(&self) -> Result<(), GmrfError> {
        if self.nx < 2 || self.ny < 2 {
            return Err(GmrfError::InvalidLattice(format!(
                "need at least 2 nodes per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        for (name, r) in [("x", self.x_range), ("y", self.y_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[1] > r[0]) {
                return Err(GmrfError::InvalidLattice(format!("bad {name} range {r:?}")));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn x_range(&self) -> [f64; 2] {
        self.x_range
    }

    pub fn y_range(&self) -> [f64; 2] {
        self.y_range
    }

    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn hx(&self) -> f64 {
        (self.x_range[1] - self.x_range[0]) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y_range[1] - self.y_range[0]) / (self.ny - 1) as f64
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.nx + col
    }

    /// `(col, row)` of node `i`.
    pub fn position(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }

    pub fn coords(&self, i: usize) -> (f64, f64) {
        let (c, r) = self.position(i);
        (self.x_range[0] + c as f64 * self.hx(), self.y_range[0] + r as f64 * self.hy())
    }

    pub fn is_interior(&self, i: usize) -> bool {
        let (c, r) = self.position(i);
        c > 0 && r > 0 && c + 1 < self.nx && r + 1 < self.ny
    }

    pub fn area(&self) -> f64 {
        (self.x_range[1] - self.x_range[0]) * (self.y_range[1] - self.y_range[0])
    }
}

/// Model parameters on the log scale.
///
/// The optimizer works on [`Theta::to_vec`], ordered
/// `log_tau, log_kappa, [log_sigma_eps], beta...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub log_tau: f64,
    pub log_kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_sigma_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
}

impl Theta {
    pub fn from_natural(tau: f64, kappa: f64) -> Self {
        Theta { log_tau: tau.ln(), log_kappa: kappa.ln(), log_sigma_eps: None, beta: Vec::new() }
    }

    pub fn with_sigma_eps(mut self, sigma_eps: f64) -> Self {
        self.log_sigma_eps = Some(sigma_eps.ln());
        self
    }

    pub fn with_beta(mut self, beta: Vec<f64>) -> Self {
        self.beta = beta;
        self
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    pub fn sigma_eps(&self) -> Option<f64> {
        self.log_sigma_eps.map(f64::exp)
    }

    pub fn dim(&self) -> usize {
        2 + usize::from(self.log_sigma_eps.is_some()) + self.beta.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.log_tau, self.log_kappa];
        v.extend(self.log_sigma_eps);
        v.extend_from_slice(&self.beta);
        v
    }

    /// Rebuilds a parameter of the same shape as `self` from `v`.
    pub fn with_values(&self, v: &[f64]) -> Result<Theta, GmrfError> {
        if v.len() != self.dim() {
            return Err(GmrfError::InvalidParameter(format!(
                "expected {} values, got {}",
                self.dim(),
                v.len()
            )));
        }
        let mut k = 2;
        let log_sigma_eps = self.log_sigma_eps.map(|_| {
            k += 1;
            v[2]
        });
        Ok(Theta { log_tau: v[0], log_kappa: v[1], log_sigma_eps, beta: v[k..].to_vec() })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["log_tau".to_string(), "log_kappa".to_string()];
        if self.log_sigma_eps.is_some() {
            names.push("log_sigma_eps".to_string());
        }
        names.extend((0..self.beta.len()).map(|k| format!("beta{k}")));
        names
    }

    /// Checks that every parameter maps to a finite positive (or finite)
    /// natural value.
    pub fn validate(&self) -> Result<(), GmrfError> {
        let mut logs = vec![("log_tau", self.log_tau), ("log_kappa", self.log_kappa)];
        logs.extend(self.log_sigma_eps.map(|s| ("log_sigma_eps", s)));
        for (name, v) in logs {
            let e = v.exp();
            if !(v.is_finite() && e.is_finite() && e > 0.0) {
                return Err(GmrfError::InvalidParameter(format!("{name} = {v}")));
            }
        }
        if let Some(b) = self.beta.iter().find(|b| !b.is_finite()) {
            return Err(GmrfError::InvalidParameter(format!("beta = {b}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Direct,
    Latent,
    Nonstationary,
}

impl ModelKind {
    pub fn is_latent(self) -> bool {
        !matches!(self, ModelKind::Direct)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Direct => "direct",
            ModelKind::Latent => "latent",
            ModelKind::Nonstationary => "nonstationary",
        })
    }
}

impl FromStr for ModelKind {
    type Err = GmrfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(ModelKind::Direct),
            "latent" => Ok(ModelKind::Latent),
            "nonstationary" | "latent-nonstationary" => Ok(ModelKind::Nonstationary),
            other => Err(GmrfError::InvalidModel(format!("unknown model kind '{other}'"))),
        }
    }
}

/// A model: lattice, observation design and optional covariates.
///
/// `covariates` holds columns of length `n` (one per covariate); with
/// covariates the mean is `beta0 + sum_k beta_k x_k` and `beta` must have
/// one more entry than there are columns. Without covariates `beta` may be
/// empty (zero mean) or hold a single intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub lattice: Lattice,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covariates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obs_indices: Vec<usize>,
}

impl ModelSpec {
    pub fn direct(lattice: Lattice) -> Self {
        ModelSpec { kind: ModelKind::Direct, lattice, covariates: Vec::new(), obs_indices: Vec::new() }
    }

    pub fn latent(kind: ModelKind, lattice: Lattice, obs_indices: Vec<usize>) -> Result<Self, GmrfError> {
        let m = ModelSpec { kind, lattice, covariates: Vec::new(), obs_indices };
        m.validate()?;
        Ok(m)
    }

    pub fn with_covariates(mut self, covariates: Vec<Vec<f64>>) -> Result<Self, GmrfError> {
        self.covariates = covariates;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GmrfError> {
        self.lattice.validate()?;
        let n = self.lattice.n();
        match self.kind {
            ModelKind::Direct => {
                if !self.obs_indices.is_empty() {
                    return Err(GmrfError::InvalidModel("direct models observe every node".into()));
                }
            }
            _ => {
                if self.obs_indices.is_empty() {
                    return Err(GmrfError::InvalidModel("latent model needs observation indices".into()));
                }
                let mut seen = vec![false; n];
                for &i in &self.obs_indices {
                    if i >= n {
                        return Err(GmrfError::InvalidModel(format!("observation index {i} >= {n}")));
                    }
                    if std::mem::replace(&mut seen[i], true) {
                        return Err(GmrfError::InvalidModel(format!("duplicate observation index {i}")));
                    }
                }
            }
        }
        if let Some(c) = self.covariates.iter().find(|c| c.len() != n) {
            return Err(GmrfError::InvalidModel(format!(
                "covariate column has length {}, lattice has {n} nodes",
                c.len()
            )));
        }
        Ok(())
    }

    /// Number of observations per replicate.
    pub fn n_obs(&self) -> usize {
        match self.kind {
            ModelKind::Direct => self.lattice.n(),
            _ => self.obs_indices.len(),
        }
    }

    /// Node index of observation `j`.
    pub fn obs_node(&self, j: usize) -> usize {
        match self.kind {
            ModelKind::Direct => j,
            _ => self.obs_indices[j],
        }
    }

    /// Checks that `theta` has the shape this model needs.
    pub fn check_theta(&self, theta: &Theta) -> Result<(), GmrfError> {
        if self.kind.is_latent() != theta.log_sigma_eps.is_some() {
            return Err(GmrfError::InvalidParameter(format!(
                "{} model {} a noise parameter",
                self.kind,
                if self.kind.is_latent() { "needs" } else { "takes no" }
            )));
        }
        let p = self.covariates.len();
        let ok = if p == 0 { theta.beta.len() <= 1 } else { theta.beta.len() == p + 1 };
        if !ok {
            return Err(GmrfError::InvalidParameter(format!(
                "beta has {} entries for {p} covariates",
                theta.beta.len()
            )));
        }
        Ok(())
    }

    /// Mean of the field at every node.
    pub fn node_mean(&self, theta: &Theta) -> Vec<f64> {
        let n = self.lattice.n();
        let Some((&b0, rest)) = theta.beta.split_first() else {
            return vec![0.0; n];
        };
        let mut mu = vec![b0; n];
        for (b, col) in rest.iter().zip(&self.covariates) {
            for (m, x) in mu.iter_mut().zip(col) {
                *m += b * x;
            }
        }
        mu
    }

    /// Mean of each observation.
    pub fn obs_mean(&self, theta: &Theta) -> Vec<f64> {
        let mu = self.node_mean(theta);
        match self.kind {
            ModelKind::Direct => mu,
            _ => self.obs_indices.iter().map(|&i| mu[i]).collect(),
        }
    }
}
