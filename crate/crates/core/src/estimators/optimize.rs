use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{is_penalty, EstimateError, Objective};
use crate::gmrf::Theta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub xtol: f64,
    pub ftol: f64,
    /// Evaluation budget; `None` means `500 * p`.
    pub max_evals: Option<usize>,
    pub initial_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { xtol: 1e-6, ftol: 1e-6, max_evals: None, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    pub converged: bool,
}

/// Maximizes `f` with the Nelder-Mead simplex method (reflection 1,
/// expansion 2, contraction 1/2, shrink 1/2).
///
/// The initial simplex is `x0` plus `initial_step` along each axis.
/// Convergence requires both the simplex diameter (max-norm distance of every
/// vertex from the best) below `xtol` and the spread of values below `ftol`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &FitOptions) -> NelderMeadOutcome {
    let p = x0.len();
    let budget = opts.max_evals.unwrap_or(500 * p.max(1));
    let n_evals = std::cell::Cell::new(0usize);
    // minimize g = -f; NaN is treated as worst
    let mut g = |x: &[f64]| {
        n_evals.set(n_evals.get() + 1);
        let v = -f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    simplex.push(x0.to_vec());
    for j in 0..p {
        let mut x = x0.to_vec();
        x[j] += opts.initial_step;
        simplex.push(x);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|x| g(x)).collect();
    let mut converged = false;

    loop {
        let mut order: Vec<usize> = (0..=p).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        vals = order.iter().map(|&k| vals[k]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = vals[p] - vals[0];
        if diameter < opts.xtol && spread < opts.ftol {
            converged = true;
            break;
        }
        if n_evals.get() >= budget || p == 0 {
            break;
        }

        let centroid: Vec<f64> = (0..p).map(|j| simplex[..p].iter().map(|x| x[j]).sum::<f64>() / p as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[p]).map(|(c, w)| c + t * (w - c)).collect()
        };

        let xr = along(-1.0);
        let fr = g(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = g(&xe);
            if fe < fr {
                simplex[p] = xe;
                vals[p] = fe;
            } else {
                simplex[p] = xr;
                vals[p] = fr;
            }
            continue;
        }
        if fr < vals[p - 1] {
            simplex[p] = xr;
            vals[p] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[p] {
            let xc = along(-0.5);
            let fc = g(&xc);
            (xc, if fc <= fr { Some(fc) } else { None })
        } else {
            let xc = along(0.5);
            let fc = g(&xc);
            (xc, if fc < vals[p] { Some(fc) } else { None })
        };
        if let Some(fc) = fc {
            simplex[p] = xc;
            vals[p] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for k in 1..=p {
            let x: Vec<f64> = best.iter().zip(&simplex[k]).map(|(b, v)| b + 0.5 * (v - b)).collect();
            vals[k] = g(&x);
            simplex[k] = x;
        }
    }

    let value = -vals[0];
    NelderMeadOutcome {
        x: simplex.swap_remove(0),
        value,
        n_evals: n_evals.get(),
        converged: converged && !is_penalty(value) && value.is_finite(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub objective_value: f64,
    pub n_evaluations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

/// Maximizes `objective` over log-parameters from `init`.
pub fn fit(objective: &Objective<'_>, init: &Theta, options: &FitOptions) -> Result<FitResult, EstimateError> {
    objective.data().model.check_theta(init)?;
    let x0 = init.to_vec();
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(EstimateError::InvalidInput(format!("initial value {x0:?} is not finite")));
    }
    let start = Instant::now();
    let out = nelder_mead(
        |x| match init.with_values(x) {
            Ok(t) => objective.penalized(&t),
            Err(_) => super::PENALTY - 1.0,
        },
        &x0,
        options,
    );
    let wall_time_s = start.elapsed().as_secs_f64();
    Ok(FitResult {
        theta_hat: init.with_values(&out.x)?,
        objective_value: out.value,
        n_evaluations: out.n_evals,
        converged: out.converged,
        wall_time_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let target = [0.3, -1.2];
        let out = nelder_mead(
            |x| -((x[0] - target[0]).powi(2) + 3.0 * (x[1] - target[1]).powi(2)),
            &[0.0, 0.0],
            &FitOptions { xtol: 1e-8, ftol: 1e-12, ..FitOptions::default() },
        );
        assert!(out.converged);
        assert!((out.x[0] - target[0]).abs() < 1e-4 && (out.x[1] - target[1]).abs() < 1e-4, "{:?}", out.x);
    }

    #[test]
    fn rosenbrock_in_budget() {
        let out = nelder_mead(
            |x| -(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)),
            &[-1.2, 1.0],
            &FitOptions { max_evals: Some(2000), xtol: 1e-8, ftol: 1e-12, ..FitOptions::default() },
        );
        assert!((out.x[0] - 1.0).abs() < 1e-3 && (out.x[1] - 1.0).abs() < 1e-3, "{:?}", out.x);
    }

    #[test]
    fn budget_exhaustion_reports_not_converged() {
        let out = nelder_mead(|x| -(x[0] - 5.0).powi(2), &[0.0], &FitOptions { max_evals: Some(5), ..FitOptions::default() });
        assert!(!out.converged);
        assert!(out.n_evals <= 7);
    }

    #[test]
    fn penalty_plateau_never_converges() {
        let out = nelder_mead(|_| super::super::PENALTY - 1.0, &[0.0, 0.0], &FitOptions::default());
        assert!(!out.converged);
    }
}
