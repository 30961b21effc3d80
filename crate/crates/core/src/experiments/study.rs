use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mean, median, quantile, sample_sd};
use super::{csv_bytes, sha256_hex, ExperimentError, Manifest, OutlierPlan, StudyConfig, StudyKind};
use crate::estimators::{fit, FitOptions, FitResult, Method, Objective};
use crate::gmrf::{inject_outliers, Dataset, PrecisionBuilder, Theta};
use crate::par::{map_range, Execution};
use crate::rng::derive_seed;

const PLAN_TAG: u64 = 17;

/// One estimate of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub repetition: usize,
    pub outliers: usize,
    pub magnitude: f64,
    pub method: String,
    pub parameter: String,
    pub estimate: f64,
    pub wall_time_s: f64,
    pub n_eval: usize,
    pub converged: bool,
}

/// Distribution of one parameter's estimates for one method and outlier plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub outliers: usize,
    pub magnitude: f64,
    pub method: String,
    pub parameter: String,
    pub truth: f64,
    pub n: usize,
    pub n_converged: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub sd: f64,
    /// Median of `|estimate - truth|`.
    pub median_abs_error: f64,
    pub mean_wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub rows: Vec<EstimateRow>,
    pub summary: Vec<SummaryRow>,
}

impl StudyResult {
    /// Summary entry for a plan, method and parameter.
    pub fn summary_for(&self, plan: OutlierPlan, method: &Method, parameter: &str) -> Option<&SummaryRow> {
        let label = method.to_string();
        self.summary
            .iter()
            .find(|s| s.outliers == plan.k && s.magnitude == plan.magnitude && s.method == label && s.parameter == parameter)
    }

    /// Hash of every column except the wall times.
    pub fn results_digest(&self) -> Result<String, ExperimentError> {
        let stripped: Vec<EstimateRow> = self.rows.iter().map(|r| EstimateRow { wall_time_s: 0.0, ..r.clone() }).collect();
        Ok(sha256_hex(&csv_bytes(&stripped)?))
    }

    /// Writes `estimates.csv`, `summary.csv` and `manifest.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest, ExperimentError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("estimates.csv"), csv_bytes(&self.rows)?)?;
        std::fs::write(dir.join("summary.csv"), csv_bytes(&self.summary)?)?;
        let manifest = study_manifest(&self.config, "study", &self.results_digest()?);
        manifest.write(&dir.join("manifest.txt"))?;
        Ok(manifest)
    }
}

pub(crate) fn study_manifest(config: &StudyConfig, command: &str, digest: &str) -> Manifest {
    let mut m = Manifest::new(command);
    m.push("config_sha256", config.hash());
    m.push("seed", config.seed());
    m.push("repetition_seed_rule", "derive_seed(seed, [repetition])");
    let seeds: Vec<String> = (0..config.repetitions).map(|r| repetition_seed(config, r).to_string()).collect();
    m.push("repetition_seeds", seeds.join(","));
    m.push("results_sha256", digest);
    m
}

pub(crate) fn repetition_seed(config: &StudyConfig, repetition: usize) -> u64 {
    derive_seed(config.seed(), &[repetition as u64])
}

pub(crate) fn contaminate(clean: &Dataset, plan: OutlierPlan, plan_index: usize, data_seed: u64) -> Result<Dataset, ExperimentError> {
    if plan.k == 0 {
        return Ok(clean.clone());
    }
    Ok(inject_outliers(clean, plan.k, plan.magnitude, derive_seed(data_seed, &[PLAN_TAG, plan_index as u64]))?)
}

/// Fits every method to `data`; failures are returned per method.
pub(crate) fn fit_methods(
    data: &Dataset,
    methods: &[Method],
    builder: &PrecisionBuilder,
    init: &Theta,
    options: &FitOptions,
) -> Vec<Result<FitResult, ExperimentError>> {
    methods
        .iter()
        .map(|m| {
            let obj = Objective::with_builder(m.objective_kind(), data, builder.clone())?.with_execution(Execution::Sequential);
            Ok(fit(&obj, init, options)?)
        })
        .collect()
}

fn rows_for(repetition: usize, plan: OutlierPlan, method: &Method, names: &[String], fit: &Result<FitResult, ExperimentError>) -> Vec<EstimateRow> {
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (estimate, wall_time_s, n_eval, converged) = match fit {
                Ok(f) => (f.theta_hat.to_vec()[j], f.wall_time_s, f.n_evaluations, f.converged),
                Err(_) => (f64::NAN, 0.0, 0, false),
            };
            EstimateRow {
                repetition,
                outliers: plan.k,
                magnitude: plan.magnitude,
                method: method.to_string(),
                parameter: name.clone(),
                estimate,
                wall_time_s,
                n_eval,
                converged,
            }
        })
        .collect()
}

/// Simulates, contaminates and fits `config.repetitions` datasets.
///
/// Repetition `r` draws its data from `derive_seed(seed, [r])`; every outlier
/// plan contaminates the same clean draw, and every method starts from
/// `config.init()`. Rows come out sorted by repetition, plan, method and
/// parameter whatever the execution mode. `on_done` is called with each
/// finished repetition index.
pub fn run_estimation_study(
    config: &StudyConfig,
    exec: Execution,
    on_done: &(dyn Fn(usize) + Sync),
) -> Result<StudyResult, ExperimentError> {
    config.validate()?;
    if config.study != StudyKind::Estimation {
        return Err(ExperimentError::Config("run_estimation_study needs study = \"estimation\"".into()));
    }
    let (model, _) = config.model_spec()?;
    let truth = config.truth()?;
    let init = config.init()?;
    let names = truth.param_names();
    let builder = PrecisionBuilder::new(&model)?;

    let per_rep = map_range(exec, config.repetitions, |rep| -> Result<Vec<EstimateRow>, ExperimentError> {
        let data_seed = repetition_seed(config, rep);
        let clean = model.simulate(&truth, config.replicates, data_seed)?;
        let mut rows = Vec::new();
        for (pi, &plan) in config.outliers.iter().enumerate() {
            let data = contaminate(&clean, plan, pi, data_seed)?;
            let fits = fit_methods(&data, &config.methods, &builder, &init, &config.fit);
            for (method, f) in config.methods.iter().zip(&fits) {
                rows.extend(rows_for(rep, plan, method, &names, f));
            }
        }
        on_done(rep);
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    let summary = summarize(config, &rows)?;
    Ok(StudyResult { config: config.clone(), rows, summary })
}

/// Recomputes the summary block from long-form rows, in config order.
pub fn summarize(config: &StudyConfig, rows: &[EstimateRow]) -> Result<Vec<SummaryRow>, ExperimentError> {
    let truth = config.truth()?;
    let names = truth.param_names();
    let tv = truth.to_vec();
    let mut out = Vec::new();
    for plan in &config.outliers {
        for method in &config.methods {
            let label = method.to_string();
            for (name, &t) in names.iter().zip(&tv) {
                let sel: Vec<&EstimateRow> = rows
                    .iter()
                    .filter(|r| r.outliers == plan.k && r.magnitude == plan.magnitude && r.method == label && &r.parameter == name)
                    .collect();
                let est: Vec<f64> = sel.iter().map(|r| r.estimate).collect();
                let err: Vec<f64> = est.iter().map(|e| (e - t).abs()).collect();
                let times: Vec<f64> = sel.iter().map(|r| r.wall_time_s).collect();
                let (q25, q75) = (quantile(&est, 0.25), quantile(&est, 0.75));
                out.push(SummaryRow {
                    outliers: plan.k,
                    magnitude: plan.magnitude,
                    method: label.clone(),
                    parameter: name.clone(),
                    truth: t,
                    n: sel.len(),
                    n_converged: sel.iter().filter(|r| r.converged).count(),
                    mean: mean(&est),
                    median: median(&est),
                    q25,
                    q75,
                    iqr: q75 - q25,
                    sd: sample_sd(&est),
                    median_abs_error: median(&err),
                    mean_wall_time_s: mean(&times),
                });
            }
        }
    }
    Ok(out)
}
