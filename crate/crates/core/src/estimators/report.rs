use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EstimateError, FitResult, GodambeResult, Method};

/// One CSV line of a fit or Godambe report. For fits `value` is the
/// estimate; for Godambe reports it is the asymptotic standard deviation and
/// the timing columns are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub rule: String,
    pub parameter: String,
    pub value: f64,
    pub wall_time_s: Option<f64>,
    pub n_eval: Option<usize>,
    pub converged: Option<bool>,
}

fn rule_name(method: &Method) -> String {
    match method {
        Method::Ml => "none".to_string(),
        Method::Loos(r) => r.to_string(),
    }
}

pub fn fit_csv_rows(method: &Method, fit: &FitResult) -> Vec<ReportRow> {
    fit.theta_hat
        .param_names()
        .into_iter()
        .zip(fit.theta_hat.to_vec())
        .map(|(parameter, value)| ReportRow {
            method: method.to_string(),
            rule: rule_name(method),
            parameter,
            value,
            wall_time_s: Some(fit.wall_time_s),
            n_eval: Some(fit.n_evaluations),
            converged: Some(fit.converged),
        })
        .collect()
}

pub fn godambe_csv_rows(method: &Method, g: &GodambeResult) -> Vec<ReportRow> {
    g.param_names
        .iter()
        .zip(&g.asymptotic_sd)
        .map(|(parameter, &value)| ReportRow {
            method: method.to_string(),
            rule: rule_name(method),
            parameter: parameter.clone(),
            value,
            wall_time_s: None,
            n_eval: None,
            converged: None,
        })
        .collect()
}

/// Writes rows under the header
/// `method,rule,parameter,value,wall_time_s,n_eval,converged`.
pub fn write_report_csv<W: Write>(w: W, rows: &[ReportRow]) -> Result<(), EstimateError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

impl FitResult {
    /// Plain-text summary.
    pub fn report(&self, method: &Method) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method            {method}");
        for (name, v) in self.theta_hat.param_names().iter().zip(self.theta_hat.to_vec()) {
            let _ = writeln!(s, "{name:<17} {v:.6}");
        }
        let _ = writeln!(s, "objective         {:.10}", self.objective_value);
        let _ = writeln!(s, "evaluations       {}", self.n_evaluations);
        let _ = writeln!(s, "converged         {}", self.converged);
        let _ = writeln!(s, "wall_time_s       {:.4}", self.wall_time_s);
        s
    }
}

impl GodambeResult {
    pub fn report(&self, method: &Method) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method            {method}  ({} simulated datasets)", self.n_sims);
        for (name, sd) in self.param_names.iter().zip(&self.asymptotic_sd) {
            let _ = writeln!(s, "sd {name:<14} {sd:.6}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::Theta;

    #[test]
    fn csv_layout() {
        let fit = FitResult {
            theta_hat: Theta::from_natural(0.16, 1.75),
            objective_value: -1.0,
            n_evaluations: 42,
            converged: true,
            wall_time_s: 0.5,
        };
        let rows = fit_csv_rows(&"loos:rcrps:2".parse().unwrap(), &fit);
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "method,rule,parameter,value,wall_time_s,n_eval,converged");
        assert!(lines.next().unwrap().starts_with("loos:rcrps:2,rcrps:2,log_tau,"));
        assert!(fit.report(&Method::Ml).contains("evaluations       42"));
    }
}
