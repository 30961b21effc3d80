use serde::{Deserialize, Serialize};

use super::{EstimateError, Method, Objective};
use crate::gmrf::{Dataset, ModelSpec, PrecisionBuilder, Theta};
use crate::linalg::{symmetric_eigen, DenseMatrix};
use crate::par::{map_range, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GodambeOptions {
    pub n_sims: usize,
    pub seed: u64,
    /// Central-difference step relative to `max(1, |theta_j|)`.
    pub fd_step: f64,
    /// Replicates in each simulated dataset.
    pub replicates_per_sim: usize,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for GodambeOptions {
    fn default() -> Self {
        GodambeOptions { n_sims: 1000, seed: 1, fd_step: 1e-4, replicates_per_sim: 1, exec: Execution::default() }
    }
}

/// Sandwich `V = K^-1 J K^-T` from per-dataset score gradients and Hessians.
#[derive(Debug, Clone, PartialEq)]
pub struct GodambeResult {
    pub param_names: Vec<String>,
    pub j: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
    pub asymptotic_sd: Vec<f64>,
    pub n_sims: usize,
}

/// Central-difference gradient and nested central-difference Hessian of `f`
/// at `x`, with step `rel_step * max(1, |x_j|)` in coordinate `j`.
pub fn fd_gradient_hessian<F: Fn(&[f64]) -> Result<f64, EstimateError>>(
    f: F,
    x: &[f64],
    rel_step: f64,
) -> Result<(Vec<f64>, DenseMatrix), EstimateError> {
    let p = x.len();
    let h: Vec<f64> = x.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let at = |moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(j, t) in moves {
            y[j] += t * h[j];
        }
        f(&y)
    };
    let f0 = f(x)?;
    let mut grad = vec![0.0; p];
    let mut hess = DenseMatrix::zeros(p, p);
    for j in 0..p {
        let (fp, fm) = (at(&[(j, 1.0)])?, at(&[(j, -1.0)])?);
        grad[j] = (fp - fm) / (2.0 * h[j]);
        let (fpp, fmm) = (at(&[(j, 2.0)])?, at(&[(j, -2.0)])?);
        hess[(j, j)] = (fpp - 2.0 * f0 + fmm) / (4.0 * h[j] * h[j]);
        for k in 0..j {
            let v = (at(&[(j, 1.0), (k, 1.0)])? - at(&[(j, 1.0), (k, -1.0)])? - at(&[(j, -1.0), (k, 1.0)])?
                + at(&[(j, -1.0), (k, -1.0)])?)
                / (4.0 * h[j] * h[k]);
            hess[(j, k)] = v;
            hess[(k, j)] = v;
        }
    }
    Ok((grad, hess))
}

/// `J = mean g g^T`, `K = mean H`, `V = K^-1 J K^-T`.
pub fn sandwich(param_names: Vec<String>, grads: &[Vec<f64>], hessians: &[DenseMatrix]) -> Result<GodambeResult, EstimateError> {
    let p = param_names.len();
    if grads.is_empty() || grads.len() != hessians.len() {
        return Err(EstimateError::InvalidInput(format!(
            "{} gradients and {} Hessians",
            grads.len(),
            hessians.len()
        )));
    }
    if grads.iter().any(|g| g.len() != p) || hessians.iter().any(|h| h.rows() != p || h.cols() != p) {
        return Err(EstimateError::InvalidInput("derivative dimensions do not match the parameter".into()));
    }
    let n = grads.len() as f64;
    let mut j = DenseMatrix::zeros(p, p);
    let mut k = DenseMatrix::zeros(p, p);
    for (g, h) in grads.iter().zip(hessians) {
        for a in 0..p {
            for b in 0..p {
                j[(a, b)] += g[a] * g[b] / n;
                k[(a, b)] += 0.5 * (h[(a, b)] + h[(b, a)]) / n;
            }
        }
    }
    let (vals, vecs) = symmetric_eigen(&k)?;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some((idx, _)) = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| !(v.abs() > 1e-10 * scale) || !v.is_finite())
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    {
        let direction = (0..p)
            .map(|r| format!("{:+.3}*{}", vecs[(r, idx)], param_names[r]))
            .collect::<Vec<_>>()
            .join(" ");
        return Err(EstimateError::SingularSensitivity { direction });
    }
    let k_inv = k.inverse()?;
    let v = k_inv.matmul(&j)?.matmul(&k_inv.transpose())?;
    let v = DenseMatrix::from_vec(p, p, (0..p * p).map(|e| 0.5 * (v[(e / p, e % p)] + v[(e % p, e / p)])).collect())?;
    let asymptotic_sd = (0..p).map(|a| v[(a, a)].max(0.0).sqrt()).collect();
    Ok(GodambeResult { param_names, j, k, v, asymptotic_sd, n_sims: grads.len() })
}

/// Godambe matrices at `theta0` for each method, all evaluated on the same
/// simulated datasets. The per-dataset criterion is the objective summed over
/// observations and replicates.
pub fn godambe_for_methods(
    theta0: &Theta,
    model: &ModelSpec,
    methods: &[Method],
    opts: &GodambeOptions,
) -> Result<Vec<GodambeResult>, EstimateError> {
    if opts.n_sims < 100 {
        return Err(EstimateError::InvalidInput(format!("need at least 100 simulated datasets, got {}", opts.n_sims)));
    }
    if opts.replicates_per_sim == 0 || !(opts.fd_step > 0.0 && opts.fd_step.is_finite()) {
        return Err(EstimateError::InvalidInput("bad replicate count or finite-difference step".into()));
    }
    model.check_theta(theta0)?;
    let all = model.simulate(theta0, opts.n_sims * opts.replicates_per_sim, opts.seed)?;
    let sims: Vec<Dataset> = all
        .replicates
        .chunks(opts.replicates_per_sim)
        .map(|c| Dataset::new(model.clone(), c.to_vec()))
        .collect();
    let builder = PrecisionBuilder::new(model)?;
    let x0 = theta0.to_vec();
    methods
        .iter()
        .map(|method| {
            let derivs = map_range(opts.exec, sims.len(), |s| {
                let obj = Objective::with_builder(method.objective_kind(), &sims[s], builder.clone())?
                    .with_execution(Execution::Sequential);
                let scale = obj.n_terms() as f64;
                fd_gradient_hessian(|x| Ok(scale * obj.evaluate(&theta0.with_values(x)?)?), &x0, opts.fd_step)
            });
            let (grads, hessians): (Vec<_>, Vec<_>) = derivs.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
            sandwich(theta0.param_names(), &grads, &hessians)
        })
        .collect()
}

/// Godambe matrices for a single method.
pub fn godambe(theta0: &Theta, model: &ModelSpec, method: Method, opts: &GodambeOptions) -> Result<GodambeResult, EstimateError> {
    Ok(godambe_for_methods(theta0, model, &[method], opts)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_derivatives_of_polynomial() {
        let f = |x: &[f64]| Ok(x[0].powi(3) + 2.0 * x[0] * x[1] - x[1] * x[1]);
        let (g, h) = fd_gradient_hessian(f, &[1.5, -0.5], 1e-4).unwrap();
        assert!((g[0] - (3.0 * 2.25 - 1.0)).abs() < 1e-6 && (g[1] - (3.0 + 1.0)).abs() < 1e-6);
        assert!((h[(0, 0)] - 9.0).abs() < 1e-5 && (h[(0, 1)] - 2.0).abs() < 1e-5 && (h[(1, 1)] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn singular_sensitivity_names_direction() {
        let h = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let err = sandwich(vec!["a".into(), "b".into()], &[vec![1.0, 0.0]], &[h]).unwrap_err();
        match err {
            EstimateError::SingularSensitivity { direction } => {
                assert!(direction.contains("*a") && direction.contains("*b"), "{direction}");
            }
            other => panic!("{other}"),
        }
    }
}
