use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mean, median};
use super::study::{contaminate, fit_methods, repetition_seed, study_manifest, EstimateRow};
use super::{csv_bytes, sha256_hex, ExperimentError, OutlierPlan, StudyConfig, StudyKind};
use crate::estimators::{latent_predictive, loo_conditionals, Method};
use crate::gmrf::{Dataset, ModelSpec, PrecisionBuilder, Theta};
use crate::par::{map_range, pairwise_mean, Execution};
use crate::scoring::{score, GaussPredictive, ScoringRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Leave-one-out predictions of the (possibly contaminated) training data.
    TrainLoo,
    /// Predictions of clean held-out observations given the training data.
    Test,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::TrainLoo => "train_loo",
            Protocol::Test => "test",
        })
    }
}

/// Mean Root score (positively oriented) and RMSE of the predictive means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveMetrics {
    pub root: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRow {
    pub repetition: usize,
    pub outliers: usize,
    pub magnitude: f64,
    pub protocol: Protocol,
    pub metric: String,
    pub loos: f64,
    pub ml: f64,
    /// `100 (S_loos - S_ml) / |S_ml|` with the RMSE entered as `S = -RMSE`,
    /// so positive values favour the LOOS fit for both metrics.
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummaryRow {
    pub outliers: usize,
    pub magnitude: f64,
    pub protocol: Protocol,
    pub metric: String,
    pub n: usize,
    pub mean_rel_diff: f64,
    pub median_rel_diff: f64,
    pub share_positive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveResult {
    pub config: StudyConfig,
    pub rows: Vec<PredictiveRow>,
    pub estimates: Vec<EstimateRow>,
}

fn metrics(preds: &[Vec<GaussPredictive>], ys: &[Vec<f64>]) -> PredictiveMetrics {
    let mut scores = Vec::new();
    let mut sq = Vec::new();
    for (p, y) in preds.iter().zip(ys) {
        for (pi, &yi) in p.iter().zip(y) {
            scores.push(score(&ScoringRule::Root, pi, yi));
            sq.push((pi.mu() - yi).powi(2));
        }
    }
    PredictiveMetrics { root: pairwise_mean(&scores), rmse: pairwise_mean(&sq).sqrt() }
}

/// Training leave-one-out and held-out metrics of the fit `theta`.
///
/// `train[r]` are the observations of replicate `r` at `model`'s observation
/// nodes and `test[r]` the matching values at `test_nodes`.
pub fn predictive_metrics(
    theta: &Theta,
    model: &ModelSpec,
    train: &[Vec<f64>],
    test_nodes: &[usize],
    test: &[Vec<f64>],
) -> Result<(PredictiveMetrics, PredictiveMetrics), ExperimentError> {
    if train.len() != test.len() {
        return Err(ExperimentError::Config("training and test replicate counts differ".into()));
    }
    let loo = train.iter().map(|y| loo_conditionals(theta, y, model)).collect::<Result<Vec<_>, _>>()?;
    let held = train
        .iter()
        .map(|y| latent_predictive(theta, y, model, test_nodes))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((metrics(&loo, train), metrics(&held, test)))
}

fn rel_diff(loos: f64, ml: f64) -> f64 {
    100.0 * (loos - ml) / ml.abs()
}

fn rows_for(repetition: usize, plan: OutlierPlan, loos: Option<(PredictiveMetrics, PredictiveMetrics)>, ml: Option<(PredictiveMetrics, PredictiveMetrics)>) -> Vec<PredictiveRow> {
    let mut out = Vec::with_capacity(4);
    for protocol in [Protocol::TrainLoo, Protocol::Test] {
        let pick = |m: Option<(PredictiveMetrics, PredictiveMetrics)>| {
            m.map(|(a, b)| if protocol == Protocol::TrainLoo { a } else { b })
                .unwrap_or(PredictiveMetrics { root: f64::NAN, rmse: f64::NAN })
        };
        let (l, m) = (pick(loos), pick(ml));
        for (metric, lv, mv, rel) in [
            ("root", l.root, m.root, rel_diff(l.root, m.root)),
            ("rmse", l.rmse, m.rmse, rel_diff(-l.rmse, -m.rmse)),
        ] {
            out.push(PredictiveRow {
                repetition,
                outliers: plan.k,
                magnitude: plan.magnitude,
                protocol,
                metric: metric.to_string(),
                loos: lv,
                ml: mv,
                rel_diff: rel,
            });
        }
    }
    out
}

/// Fits ML and the first LOOS method of `config.methods` to training data at
/// `n_obs` nodes and compares their predictions of the training data (leave
/// one out) and of clean observations at `n_test` held-out nodes.
///
/// Training and test observations in a replicate share one latent field
/// draw. Outliers are injected into the training data only.
pub fn predictive_study(
    config: &StudyConfig,
    exec: Execution,
    on_done: &(dyn Fn(usize) + Sync),
) -> Result<PredictiveResult, ExperimentError> {
    config.validate()?;
    if config.study != StudyKind::Predictive {
        return Err(ExperimentError::Config("predictive_study needs study = \"predictive\"".into()));
    }
    let (model, test_nodes) = config.model_spec()?;
    let mut joint = model.clone();
    joint.obs_indices.extend_from_slice(&test_nodes);
    joint.validate()?;
    let m = model.n_obs();
    let truth = config.truth()?;
    let init = config.init()?;
    let names = truth.param_names();
    let loos = *config
        .methods
        .iter()
        .find(|m| matches!(m, Method::Loos(_)))
        .ok_or_else(|| ExperimentError::Config("no loos method".into()))?;
    let methods = [loos, Method::Ml];
    let builder = PrecisionBuilder::new(&model)?;

    type Rep = (Vec<PredictiveRow>, Vec<EstimateRow>);
    let per_rep = map_range(exec, config.repetitions, |rep| -> Result<Rep, ExperimentError> {
        let data_seed = repetition_seed(config, rep);
        let all = joint.simulate(&truth, config.replicates, data_seed)?;
        let train: Vec<Vec<f64>> = all.replicates.iter().map(|y| y[..m].to_vec()).collect();
        let test: Vec<Vec<f64>> = all.replicates.iter().map(|y| y[m..].to_vec()).collect();
        let mut clean = Dataset::new(model.clone(), train);
        clean.truth = Some(truth.clone());
        clean.seed = Some(data_seed);
        let mut rows = Vec::new();
        let mut estimates = Vec::new();
        for (pi, &plan) in config.outliers.iter().enumerate() {
            let data = contaminate(&clean, plan, pi, data_seed)?;
            let fits = fit_methods(&data, &methods, &builder, &init, &config.fit);
            let evals: Vec<Option<(PredictiveMetrics, PredictiveMetrics)>> = fits
                .iter()
                .map(|f| {
                    f.as_ref()
                        .ok()
                        .and_then(|f| predictive_metrics(&f.theta_hat, &model, &data.replicates, &test_nodes, &test).ok())
                })
                .collect();
            rows.extend(rows_for(rep, plan, evals[0], evals[1]));
            for (method, f) in methods.iter().zip(&fits) {
                for (j, name) in names.iter().enumerate() {
                    let (estimate, wall_time_s, n_eval, converged) = match f {
                        Ok(f) => (f.theta_hat.to_vec()[j], f.wall_time_s, f.n_evaluations, f.converged),
                        Err(_) => (f64::NAN, 0.0, 0, false),
                    };
                    estimates.push(EstimateRow {
                        repetition: rep,
                        outliers: plan.k,
                        magnitude: plan.magnitude,
                        method: method.to_string(),
                        parameter: name.clone(),
                        estimate,
                        wall_time_s,
                        n_eval,
                        converged,
                    });
                }
            }
        }
        on_done(rep);
        Ok((rows, estimates))
    });
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for r in per_rep {
        let (a, b) = r?;
        rows.extend(a);
        estimates.extend(b);
    }
    Ok(PredictiveResult { config: config.clone(), rows, estimates })
}

impl PredictiveResult {
    pub fn rel_diffs(&self, plan: OutlierPlan, protocol: Protocol, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.outliers == plan.k && r.magnitude == plan.magnitude && r.protocol == protocol && r.metric == metric)
            .map(|r| r.rel_diff)
            .collect()
    }

    pub fn summary(&self) -> Vec<PredictiveSummaryRow> {
        let mut out = Vec::new();
        for &plan in &self.config.outliers {
            for protocol in [Protocol::TrainLoo, Protocol::Test] {
                for metric in ["root", "rmse"] {
                    let d = self.rel_diffs(plan, protocol, metric);
                    let finite: Vec<f64> = d.iter().copied().filter(|v| v.is_finite()).collect();
                    out.push(PredictiveSummaryRow {
                        outliers: plan.k,
                        magnitude: plan.magnitude,
                        protocol,
                        metric: metric.to_string(),
                        n: finite.len(),
                        mean_rel_diff: mean(&finite),
                        median_rel_diff: median(&finite),
                        share_positive: finite.iter().filter(|&&v| v > 0.0).count() as f64 / finite.len().max(1) as f64,
                    });
                }
            }
        }
        out
    }

    pub fn results_digest(&self) -> Result<String, ExperimentError> {
        let stripped: Vec<EstimateRow> = self.estimates.iter().map(|r| EstimateRow { wall_time_s: 0.0, ..r.clone() }).collect();
        let mut bytes = csv_bytes(&self.rows)?;
        bytes.extend(csv_bytes(&stripped)?);
        Ok(sha256_hex(&bytes))
    }

    /// Writes `predictive.csv`, `predictive_summary.csv`, `estimates.csv` and
    /// `manifest.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<super::Manifest, ExperimentError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("predictive.csv"), csv_bytes(&self.rows)?)?;
        std::fs::write(dir.join("predictive_summary.csv"), csv_bytes(&self.summary())?)?;
        std::fs::write(dir.join("estimates.csv"), csv_bytes(&self.estimates)?)?;
        let manifest = study_manifest(&self.config, "study", &self.results_digest()?);
        manifest.write(&dir.join("manifest.txt"))?;
        Ok(manifest)
    }
}
