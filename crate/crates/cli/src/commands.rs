use std::fs;
use std::path::Path;

use loos_core::estimators::{fit_csv_rows, write_report_csv, FitOptions, Method, Objective};
use loos_core::experiments::{
    godambe_table, predictive_study, run_estimation_study, runtime_scaling, sha256_hex, GodambeTableConfig, Manifest,
    OutlierPlan, RuntimeConfig, StudyConfig, StudyKind,
};
use loos_core::gmrf::{inject_outliers, interpret_params, Dataset, Theta};
use loos_core::par::{with_threads, Execution};
use serde::de::DeserializeOwned;

use crate::error::CliError;
use crate::{BenchmarkArgs, FitArgs, GodambeArgs, ModelArgs, SimulateArgs, StudyArgs};

pub fn with_pool(threads: Option<usize>, f: impl FnOnce() -> Result<(), CliError> + Send) -> Result<(), CliError> {
    match threads {
        Some(n) => with_threads(n, f),
        None => f(),
    }
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn parse_methods(list: &[String]) -> Result<Vec<Method>, CliError> {
    list.iter().map(|s| s.parse::<Method>().map_err(CliError::from)).collect()
}

fn missing_seed() -> CliError {
    CliError::usage("missing required flag --seed (or `seed` in the config file)")
}

fn apply_model_args(cfg: &mut StudyConfig, a: &ModelArgs) -> Result<(), CliError> {
    if let Some(m) = a.model {
        cfg.model = m;
        if !m.is_latent() {
            cfg.sigma_eps = None;
        } else if cfg.sigma_eps.is_none() {
            cfg.sigma_eps = Some(0.5);
        }
    }
    let point = match (&a.theta, &a.log_theta) {
        (Some(t), _) => Some(t.clone()),
        (None, Some(l)) => Some(l.iter().map(|v| v.exp()).collect()),
        (None, None) => None,
    };
    if let Some(p) = point {
        if !(2..=3).contains(&p.len()) {
            return Err(CliError::usage(format!("--theta/--log-theta needs 2 or 3 values, got {}", p.len())));
        }
        cfg.tau = p[0];
        cfg.kappa = p[1];
        if let Some(&s) = p.get(2) {
            cfg.sigma_eps = Some(s);
        }
    }
    if let Some(v) = a.tau {
        cfg.tau = v;
    }
    if let Some(v) = a.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = a.sigma_eps {
        cfg.sigma_eps = Some(v);
    }
    if let Some(b) = &a.beta {
        cfg.beta = b.clone();
    }
    if a.covariates {
        cfg.covariates = true;
    }
    if let Some(v) = a.nx {
        cfg.nx = v;
    }
    if let Some(v) = a.ny {
        cfg.ny = v;
    }
    if let Some(v) = a.n_obs {
        cfg.n_obs = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
    }
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = match &a.model.config {
        Some(p) => read_toml::<StudyConfig>(p)?,
        None => StudyConfig::default(),
    };
    apply_model_args(&mut cfg, &a.model)?;
    if let Some(r) = a.reps {
        cfg.replicates = r;
    }
    if let Some(p) = a.outliers {
        cfg.outliers = vec![p];
    }
    cfg.study = StudyKind::Estimation;
    let seed = cfg.seed.ok_or_else(missing_seed)?;
    cfg.validate()?;
    let (model, _) = cfg.model_spec()?;
    let truth = cfg.truth()?;
    let mut data = model.simulate(&truth, cfg.replicates, seed)?;
    let plan = cfg.outliers.iter().copied().find(|p| p.k > 0).unwrap_or(OutlierPlan::clean());
    if plan.k > 0 {
        data = inject_outliers(&data, plan.k, plan.magnitude, seed)?;
    }

    fs::create_dir_all(&a.out)?;
    let mut json = Vec::new();
    data.to_json_writer(&mut json)?;
    fs::write(a.out.join("dataset.json"), &json)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    fs::write(a.out.join("dataset.csv"), &csv)?;
    let mut m = Manifest::new("simulate");
    m.push("config_sha256", cfg.hash());
    m.push("seed", seed);
    m.push("outliers", plan);
    m.push("dataset_sha256", sha256_hex(&json));
    m.write(&a.out.join("manifest.txt"))?;

    let (sd, range) = interpret_params(&truth);
    println!("model            {}", model.kind);
    println!("nodes            {}", model.lattice.n());
    println!("observations     {}", model.n_obs());
    println!("replicates       {}", data.n_replicates());
    println!("marginal_sd      {sd:.4}");
    println!("practical_range  {range:.4}");
    println!("outliers         {}", data.outliers.len());
    for o in &data.outliers {
        println!("  replicate {} index {}: {:.4} -> {:.4}", o.replicate, o.index, o.original, o.value);
    }
    println!("wrote            {}", a.out.join("dataset.json").display());
    Ok(())
}

fn template_theta(data: &Dataset) -> Theta {
    if let Some(t) = &data.truth {
        return t.clone();
    }
    let mut t = Theta::from_natural(1.0, 1.0);
    if data.model.kind.is_latent() {
        t = t.with_sigma_eps(1.0);
    }
    if !data.model.covariates.is_empty() {
        t = t.with_beta(vec![0.0; data.model.covariates.len() + 1]);
    }
    t
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let method: Method = a.method.parse()?;
    let data = Dataset::load(&a.data)?;
    let template = template_theta(&data);
    let init = match &a.init {
        Some(v) => template.with_values(v)?,
        None if data.truth.is_some() => template.with_values(&template.to_vec().iter().map(|x| x + 0.2).collect::<Vec<_>>())?,
        None => template,
    };
    let mut opts = FitOptions::default();
    if let Some(v) = a.xtol {
        opts.xtol = v;
    }
    if let Some(v) = a.ftol {
        opts.ftol = v;
    }
    if a.max_evals.is_some() {
        opts.max_evals = a.max_evals;
    }
    let objective = Objective::for_method(method, &data)?;
    let mut result = loos_core::estimators::fit(&objective, &init, &opts)?;
    if a.negate {
        result.objective_value = -result.objective_value;
    }
    let report = result.report(&method);
    print!("{report}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("fit.txt"), &report)?;
        let f = fs::File::create(dir.join("fit.csv"))?;
        write_report_csv(f, &fit_csv_rows(&method, &result))?;
    }
    Ok(())
}

pub fn study(a: StudyArgs) -> Result<(), CliError> {
    let mut cfg = match (&a.model.config, &a.preset) {
        (Some(p), _) => read_toml::<StudyConfig>(p)?,
        (None, Some(name)) => StudyConfig::preset(name)?,
        (None, None) => StudyConfig::default(),
    };
    apply_model_args(&mut cfg, &a.model)?;
    if let Some(v) = a.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = a.replicates {
        cfg.replicates = v;
    }
    if !a.outliers.is_empty() {
        cfg.outliers = a.outliers.clone();
    }
    if let Some(m) = &a.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(v) = a.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = a.init_offset {
        cfg.init_offset = v;
    }
    if cfg.seed.is_none() {
        return Err(missing_seed());
    }
    let total = cfg.repetitions;
    let log = |r: usize| eprintln!("repetition {} of {total} done", r + 1);
    match cfg.study {
        StudyKind::Estimation => {
            let r = run_estimation_study(&cfg, Execution::Parallel, &log)?;
            r.write(&a.out)?;
            println!("{:<10} {:<14} {:<14} {:>10} {:>10} {:>10}", "outliers", "method", "parameter", "median", "iqr", "sd");
            for s in &r.summary {
                println!(
                    "{:<10} {:<14} {:<14} {:>10.4} {:>10.4} {:>10.4}",
                    format!("{}x{}", s.outliers, s.magnitude),
                    s.method,
                    s.parameter,
                    s.median,
                    s.iqr,
                    s.sd
                );
            }
        }
        StudyKind::Predictive => {
            let r = predictive_study(&cfg, Execution::Parallel, &log)?;
            r.write(&a.out)?;
            println!("{:<10} {:<10} {:<6} {:>10} {:>10} {:>9}", "outliers", "protocol", "metric", "mean_rel", "median_rel", "positive");
            for s in r.summary() {
                println!(
                    "{:<10} {:<10} {:<6} {:>10.3} {:>10.3} {:>9.2}",
                    format!("{}x{}", s.outliers, s.magnitude),
                    s.protocol.to_string(),
                    s.metric,
                    s.mean_rel_diff,
                    s.median_rel_diff,
                    s.share_positive
                );
            }
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn parse_point(s: &str, log: bool) -> Result<(f64, f64), CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("cannot parse point '{s}'")))?;
    if v.len() != 2 {
        return Err(CliError::usage(format!("point '{s}' needs two values")));
    }
    Ok(if log { (v[0].exp(), v[1].exp()) } else { (v[0], v[1]) })
}

pub fn godambe(a: GodambeArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_toml::<GodambeTableConfig>(p)?,
        None => GodambeTableConfig::default(),
    };
    let mut points = Vec::new();
    for t in &a.theta {
        points.push(parse_point(t, false)?);
    }
    for t in &a.log_theta {
        points.push(parse_point(t, true)?);
    }
    if !points.is_empty() {
        cfg.thetas = points;
    }
    if let Some(v) = a.nsims {
        cfg.n_sims = v;
    }
    if let Some(m) = &a.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(v) = a.fd_step {
        cfg.fd_step = v;
    }
    if let Some(v) = a.nx {
        cfg.nx = v;
    }
    if let Some(v) = a.ny {
        cfg.ny = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
    }
    if cfg.seed.is_none() {
        return Err(missing_seed());
    }
    let table = godambe_table(&cfg, Execution::Parallel)?;
    table.write(&a.out)?;
    table.write_csv(std::io::stdout().lock())?;
    Ok(())
}

pub fn benchmark(a: BenchmarkArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_toml::<RuntimeConfig>(p)?,
        None => RuntimeConfig::default(),
    };
    if let Some(v) = &a.sizes {
        cfg.sizes = v.clone();
    }
    if let Some(m) = &a.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(v) = a.replicates {
        cfg.replicates = v;
    }
    if let Some(v) = a.n_timing {
        cfg.n_timing = v;
    }
    if let Some(v) = a.fit_max_n {
        cfg.fit_max_n = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
    }
    if cfg.seed.is_none() {
        return Err(missing_seed());
    }
    let r = runtime_scaling(&cfg, &|n| eprintln!("n = {n} timed"))?;
    r.write(&a.out)?;
    println!("{:>7} {:<12} {:<6} {:>12}", "n", "method", "measure", "seconds");
    for row in &r.rows {
        println!("{:>7} {:<12} {:<6} {:>12.6}", row.n, row.method, row.measure, row.seconds);
    }
    for s in &r.slopes {
        println!("slope {} {} {:.3}", s.method, s.measure, s.slope);
    }
    Ok(())
}
