use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::stats::median;
use super::{csv_bytes, ExperimentError, Manifest};
use crate::estimators::{fit, FitOptions, Method, Objective};
use crate::gmrf::{Dataset, Lattice, ModelSpec, PrecisionBuilder, Theta};
use crate::par::{with_threads, Execution};
use crate::rng::{derive_seed, stream};
use crate::scoring::ScoringRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// Target node counts; each maps to the square lattice with side
    /// `round(sqrt(n))` over `[0, 10]^2`.
    pub sizes: Vec<usize>,
    pub tau: f64,
    pub kappa: f64,
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Timed samples per size and method (after one warm-up evaluation).
    pub n_timing: usize,
    /// Each timed sample repeats the evaluation until it spans at least
    /// this many seconds and reports the per-evaluation time.
    pub min_sample_s: f64,
    /// A warm-up evaluation slower than this is itself the reported time.
    pub single_eval_above_s: f64,
    /// Full fits are timed only on lattices with at most this many nodes.
    pub fit_max_n: usize,
    pub init_offset: f64,
    pub seed: Option<u64>,
    pub fit: FitOptions,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            sizes: vec![400, 1600, 6400, 25600],
            tau: 0.16,
            kappa: 1.75,
            replicates: 10,
            methods: vec![Method::Ml, Method::Loos(ScoringRule::Root)],
            n_timing: 5,
            min_sample_s: 0.02,
            single_eval_above_s: 20.0,
            fit_max_n: 1600,
            init_offset: 0.2,
            seed: None,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub n: usize,
    pub method: String,
    /// `eval` for one objective evaluation, `fit` for a full optimization.
    pub measure: String,
    pub seconds: f64,
    /// Timed samples behind `seconds` (their median).
    pub samples: usize,
}

/// Least-squares slope of `log(seconds)` against `log(n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub method: String,
    pub measure: String,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeResult {
    pub config: RuntimeConfig,
    pub rows: Vec<RuntimeRow>,
    pub slopes: Vec<Slope>,
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.seed.is_none() {
            return err("seed is required");
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return err("sizes must be non-empty and strictly increasing");
        }
        if self.sizes[0] < 4 {
            return err("sizes must be at least 4");
        }
        if self.methods.is_empty() || self.replicates == 0 || self.n_timing == 0 {
            return err("methods, replicates and n_timing must be non-empty");
        }
        Ok(())
    }

    pub fn lattice(n: usize) -> Result<Lattice, ExperimentError> {
        let side = ((n as f64).sqrt().round() as usize).max(2);
        Ok(Lattice::square(side)?)
    }
}

fn time_evaluation(obj: &Objective<'_>, theta: &Theta, cfg: &RuntimeConfig) -> Result<(f64, usize), ExperimentError> {
    let t0 = Instant::now();
    obj.evaluate(theta)?;
    let warm = t0.elapsed().as_secs_f64();
    if warm > cfg.single_eval_above_s {
        return Ok((warm, 1));
    }
    let reps = ((cfg.min_sample_s / warm.max(1e-9)).ceil() as usize).clamp(1, 100_000);
    let mut samples = Vec::with_capacity(cfg.n_timing);
    for _ in 0..cfg.n_timing {
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(obj.evaluate(std::hint::black_box(theta))?);
        }
        samples.push(t.elapsed().as_secs_f64() / reps as f64);
    }
    Ok((median(&samples), cfg.n_timing))
}

fn fit_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        f64::NAN
    }
}

/// Times single objective evaluations for every size and method, and full
/// fits up to `fit_max_n`, on one worker thread.
///
/// Evaluation timings use standard normal pseudo-data (the cost does not
/// depend on the values); fits use data simulated from the model.
pub fn runtime_scaling(config: &RuntimeConfig, on_size: &(dyn Fn(usize) + Sync)) -> Result<RuntimeResult, ExperimentError> {
    config.validate()?;
    let seed = config.seed.unwrap_or_default();
    let truth = Theta::from_natural(config.tau, config.kappa);
    truth.validate()?;
    let init = truth.with_values(&truth.to_vec().iter().map(|v| v + config.init_offset).collect::<Vec<_>>())?;
    with_threads(1, || {
        let mut rows = Vec::new();
        for &n in &config.sizes {
            let model = ModelSpec::direct(RuntimeConfig::lattice(n)?);
            let nodes = model.lattice.n();
            let builder = PrecisionBuilder::new(&model)?;
            let noise_seed = derive_seed(seed, &[nodes as u64]);
            let replicates = (0..config.replicates)
                .map(|r| {
                    let mut rng = stream(noise_seed, r as u64);
                    (0..nodes).map(|_| rng.sample(StandardNormal)).collect()
                })
                .collect();
            let pseudo = Dataset::new(model.clone(), replicates);
            let simulated = if nodes <= config.fit_max_n { Some(model.simulate(&truth, config.replicates, noise_seed)?) } else { None };
            for method in &config.methods {
                let obj = Objective::with_builder(method.objective_kind(), &pseudo, builder.clone())?.with_execution(Execution::Sequential);
                let (seconds, samples) = time_evaluation(&obj, &truth, config)?;
                rows.push(RuntimeRow { n: nodes, method: method.to_string(), measure: "eval".into(), seconds, samples });
                if let Some(data) = &simulated {
                    let obj = Objective::with_builder(method.objective_kind(), data, builder.clone())?.with_execution(Execution::Sequential);
                    let f = fit(&obj, &init, &config.fit)?;
                    rows.push(RuntimeRow { n: nodes, method: method.to_string(), measure: "fit".into(), seconds: f.wall_time_s, samples: 1 });
                }
            }
            on_size(nodes);
        }
        let mut slopes = Vec::new();
        for method in &config.methods {
            for measure in ["eval", "fit"] {
                let pts: Vec<(usize, f64)> = rows
                    .iter()
                    .filter(|r| r.method == method.to_string() && r.measure == measure)
                    .map(|r| (r.n, r.seconds))
                    .collect();
                if pts.len() >= 2 {
                    slopes.push(Slope { method: method.to_string(), measure: measure.into(), slope: fit_slope(&pts) });
                }
            }
        }
        Ok(RuntimeResult { config: config.clone(), rows, slopes })
    })
}

impl RuntimeResult {
    pub fn slope(&self, method: &Method, measure: &str) -> Option<f64> {
        let label = method.to_string();
        self.slopes.iter().find(|s| s.method == label && s.measure == measure).map(|s| s.slope)
    }

    /// Seconds per evaluation for `method`, in size order.
    pub fn eval_times(&self, method: &Method) -> Vec<(usize, f64)> {
        let label = method.to_string();
        self.rows.iter().filter(|r| r.method == label && r.measure == "eval").map(|r| (r.n, r.seconds)).collect()
    }

    /// Writes `runtime.csv` and `manifest.txt` (with the slopes) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest, ExperimentError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runtime.csv"), csv_bytes(&self.rows)?)?;
        let mut m = Manifest::new("benchmark");
        m.push("config_sha256", super::sha256_hex(serde_json::to_string(&self.config)?.as_bytes()));
        m.push("seed", self.config.seed.unwrap_or_default());
        m.push("threads", 1);
        let sizes: Vec<String> = self.config.sizes.iter().map(|s| s.to_string()).collect();
        m.push("sizes", sizes.join(","));
        for s in &self.slopes {
            m.push(&format!("slope_{}_{}", s.method, s.measure), format!("{:.4}", s.slope));
        }
        m.write(&dir.join("manifest.txt"))?;
        Ok(m)
    }
}
