//! Leave-one-out scoring (LOOS) and likelihood objectives, Nelder-Mead
//! fitting and Godambe sandwich variances.
//!
//! Objectives are positively oriented and scaled per observation per
//! replicate: the LOOS value is the mean over replicates of the mean over
//! observations of `S(P_{i|-i}, y_i)`, and the likelihood value is the mean
//! log-density per observation.

mod conditionals;
mod godambe;
mod optimize;
mod report;

pub use conditionals::{
    latent_predictive, loo_conditionals, loo_conditionals_direct, loo_conditionals_from_precision,
    loo_conditionals_latent,
};
pub use godambe::{fd_gradient_hessian, godambe, godambe_for_methods, sandwich, GodambeOptions, GodambeResult};
pub use optimize::{fit, nelder_mead, FitOptions, FitResult, NelderMeadOutcome};
pub use report::{fit_csv_rows, godambe_csv_rows, write_report_csv, ReportRow};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gmrf::{Dataset, GmrfError, PrecisionBuilder, Theta};
use crate::linalg::{cholesky_sparse, dot, LinalgError};
use crate::par::{map_range, pairwise_mean, Execution};
use crate::scoring::{score_parts, ScoreError, ScoringRule};
use conditionals::{DirectSystem, LatentSystem};

/// Base value returned for infeasible parameters; the magnitude of the
/// violation is subtracted from it.
pub const PENALTY: f64 = -1e10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, thiserror::Error)]
pub enum EstimateError {
    #[error(transparent)]
    Model(#[from] GmrfError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("conditional precision {value} at observation {index} is not positive")]
    NonPositiveConditional { index: usize, value: f64 },
    #[error("sensitivity matrix is singular along {direction}")]
    SingularSensitivity { direction: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown method '{0}' (valid: ml, loos:log, loos:crps, loos:scrps, loos:root, loos:rcrps:<c>)")]
    UnknownMethod(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// An estimation method: maximum likelihood or LOOS under a scoring rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Ml,
    Loos(ScoringRule),
}

impl Method {
    /// ML followed by LOOS under every rule (rCRPS with cutoff 2).
    pub fn all() -> Vec<Method> {
        std::iter::once(Method::Ml).chain(ScoringRule::ALL.into_iter().map(Method::Loos)).collect()
    }

    /// Short column label: LL, Slog, SCRPS, Sroot, CRPS, rCRPS.
    pub fn label(&self) -> &'static str {
        match self {
            Method::Ml => "LL",
            Method::Loos(ScoringRule::Log) => "Slog",
            Method::Loos(ScoringRule::Scrps) => "SCRPS",
            Method::Loos(ScoringRule::Root) => "Sroot",
            Method::Loos(ScoringRule::Crps) => "CRPS",
            Method::Loos(ScoringRule::Rcrps { .. }) => "rCRPS",
        }
    }

    pub fn objective_kind(&self) -> ObjectiveKind {
        match self {
            Method::Ml => ObjectiveKind::LogLikelihood,
            Method::Loos(r) => ObjectiveKind::Loos(*r),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Ml => f.write_str("ml"),
            Method::Loos(r) => write!(f, "loos:{r}"),
        }
    }
}

impl FromStr for Method {
    type Err = EstimateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        if t == "ml" {
            return Ok(Method::Ml);
        }
        match t.strip_prefix("loos:") {
            Some(rule) => rule
                .parse::<ScoringRule>()
                .map(Method::Loos)
                .map_err(|_| EstimateError::UnknownMethod(s.to_string())),
            None => Err(EstimateError::UnknownMethod(s.to_string())),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    Loos(ScoringRule),
    LogLikelihood,
}

/// An objective over the replicates of a dataset.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    kind: ObjectiveKind,
    data: &'a Dataset,
    builder: PrecisionBuilder,
    exec: Execution,
}

impl<'a> Objective<'a> {
    pub fn new(kind: ObjectiveKind, data: &'a Dataset) -> Result<Self, EstimateError> {
        data.validate()?;
        Ok(Objective { kind, data, builder: PrecisionBuilder::new(&data.model)?, exec: Execution::default() })
    }

    pub fn for_method(method: Method, data: &'a Dataset) -> Result<Self, EstimateError> {
        Self::new(method.objective_kind(), data)
    }

    /// Reuses an already assembled precision builder for `data.model`.
    pub fn with_builder(kind: ObjectiveKind, data: &'a Dataset, builder: PrecisionBuilder) -> Result<Self, EstimateError> {
        if builder.n() != data.model.lattice.n() {
            return Err(EstimateError::InvalidInput("precision builder does not match the model".into()));
        }
        Ok(Objective { kind, data, builder, exec: Execution::default() })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Number of observation terms behind one value: `m` times replicates.
    pub fn n_terms(&self) -> usize {
        self.data.model.n_obs() * self.data.n_replicates()
    }

    /// Exact objective value; infeasible parameters are errors.
    pub fn evaluate(&self, theta: &Theta) -> Result<f64, EstimateError> {
        let model = &self.data.model;
        model.check_theta(theta)?;
        let q = self.builder.precision(theta)?;
        let reps = &self.data.replicates;
        let per_rep: Vec<Result<f64, EstimateError>> = match (self.kind, model.kind.is_latent()) {
            (ObjectiveKind::Loos(rule), false) => {
                let sys = DirectSystem::new(q, &model.node_mean(theta))?;
                map_range(self.exec, reps.len(), |r| {
                    let d = sys.residuals(&reps[r])?;
                    Ok(mean_score(&rule, &d, sys.sd()))
                })
            }
            (ObjectiveKind::Loos(rule), true) => {
                let sys = LatentSystem::new(&q, model, theta)?;
                map_range(self.exec, reps.len(), |r| {
                    let d = sys.residuals(&reps[r])?;
                    Ok(mean_score(&rule, &d, sys.sd()))
                })
            }
            (ObjectiveKind::LogLikelihood, false) => {
                let log_det = cholesky_sparse(&q)?.log_det();
                let mu = model.node_mean(theta);
                let n = mu.len() as f64;
                map_range(self.exec, reps.len(), |r| {
                    let res: Vec<f64> = reps[r].iter().zip(&mu).map(|(y, m)| y - m).collect();
                    let quad = dot(&res, &q.spmv(&res)?);
                    Ok((0.5 * log_det - 0.5 * quad) / n - 0.5 * LN_2PI)
                })
            }
            (ObjectiveKind::LogLikelihood, true) => {
                let log_det_q = cholesky_sparse(&q)?.log_det();
                let sys = LatentSystem::new(&q, model, theta)?;
                let m = model.n_obs() as f64;
                let s2 = sys.s2();
                // log|Sigma_Y| = log|Q_post| - log|Q| + m log s2
                let log_det = sys.factor().log_det() - log_det_q + m * s2.ln();
                map_range(self.exec, reps.len(), |r| {
                    let (res, s) = sys.solve_residual(&reps[r])?;
                    let v: Vec<f64> = sys.obs().iter().zip(&res).map(|(&i, ri)| s[i] * ri / s2).collect();
                    let quad = dot(&res, &res) / s2 - v.iter().sum::<f64>();
                    Ok((-0.5 * log_det - 0.5 * quad) / m - 0.5 * LN_2PI)
                })
            }
        };
        let vals = per_rep.into_iter().collect::<Result<Vec<f64>, _>>()?;
        Ok(pairwise_mean(&vals))
    }

    /// Objective value with the penalty policy applied: infeasible or
    /// non-finite evaluations return `PENALTY - violation`.
    pub fn penalized(&self, theta: &Theta) -> f64 {
        match self.evaluate(theta) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => PENALTY - 1.0,
            Err(e) => PENALTY - violation(&e, theta),
        }
    }
}

/// Whether `value` came from the penalty policy.
pub fn is_penalty(value: f64) -> bool {
    value <= PENALTY
}

fn violation(e: &EstimateError, theta: &Theta) -> f64 {
    let mag = match e {
        EstimateError::Linalg(LinalgError::NotPositiveDefinite { value, .. }) => value.abs(),
        EstimateError::Model(GmrfError::Linalg(LinalgError::NotPositiveDefinite { value, .. })) => value.abs(),
        EstimateError::NonPositiveConditional { value, .. } => value.abs(),
        EstimateError::Model(GmrfError::InvalidParameter(_)) => {
            theta.to_vec().iter().map(|v| if v.is_finite() { v.abs() } else { 1e9 }).fold(0.0, f64::max)
        }
        _ => 1.0,
    };
    if mag.is_finite() {
        mag.clamp(1e-12, 1e9)
    } else {
        1e9
    }
}

fn mean_score(rule: &ScoringRule, d: &[f64], sd: &[f64]) -> f64 {
    let s: Vec<f64> = d.iter().zip(sd).map(|(&di, &si)| score_parts(rule, di, si)).collect();
    pairwise_mean(&s)
}

/// LOOS objective value at `theta`.
pub fn loos_objective(theta: &Theta, objective: &Objective<'_>) -> Result<f64, EstimateError> {
    match objective.kind {
        ObjectiveKind::Loos(_) => objective.evaluate(theta),
        ObjectiveKind::LogLikelihood => Err(EstimateError::InvalidInput("objective is not a LOOS objective".into())),
    }
}

/// Log-likelihood per observation at `theta`.
pub fn loglik_objective(theta: &Theta, objective: &Objective<'_>) -> Result<f64, EstimateError> {
    match objective.kind {
        ObjectiveKind::LogLikelihood => objective.evaluate(theta),
        ObjectiveKind::Loos(_) => Err(EstimateError::InvalidInput("objective is not a likelihood objective".into())),
    }
}

/// Mean log-density per coordinate of `y` under `N(mu, Q^-1)`.
pub fn log_density_precision(q: &crate::linalg::SparseMatrix, mu: &[f64], y: &[f64]) -> Result<f64, EstimateError> {
    let n = q.n_rows();
    if mu.len() != n || y.len() != n {
        return Err(EstimateError::InvalidInput("mean or data length does not match the precision".into()));
    }
    let log_det = cholesky_sparse(q)?.log_det();
    let res: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let quad = dot(&res, &q.spmv(&res)?);
    Ok((0.5 * log_det - 0.5 * quad) / n as f64 - 0.5 * LN_2PI)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_strings() {
        for m in Method::all() {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("loos:rcrps:2".parse::<Method>().unwrap(), Method::Loos(ScoringRule::Rcrps { cutoff: 2.0 }));
        assert_eq!("ML".parse::<Method>().unwrap(), Method::Ml);
        assert!("loos:foo".parse::<Method>().is_err());
        assert!("crps".parse::<Method>().is_err());
        let labels: Vec<&str> = Method::all().iter().map(|m| m.label()).collect();
        assert_eq!(labels, ["LL", "Slog", "SCRPS", "Sroot", "CRPS", "rCRPS"]);
    }

    #[test]
    fn ln_2pi() {
        assert!((LN_2PI - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }
}
