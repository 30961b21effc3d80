//! Leave-one-out predictive distributions `Y_i | Y_-i`.

use super::EstimateError;
use crate::gmrf::{ModelSpec, PrecisionBuilder, Theta};
use crate::linalg::{cholesky_sparse, CholeskyFactor, SparseMatrix};
use crate::scoring::GaussPredictive;

/// Leave-one-out residuals `d_i = E[Y_i | y_-i] - y_i` and standard
/// deviations for a direct model, from
/// `E[X_i | x_-i] = y_i + ((Q mu)_i - (Q y)_i) / Q_ii`, `sd = Q_ii^-1/2`.
///
/// Costs two sparse matrix-vector products and no factorization.
pub(crate) struct DirectSystem {
    q: SparseMatrix,
    qmu: Vec<f64>,
    q_diag: Vec<f64>,
    sd: Vec<f64>,
}

impl DirectSystem {
    pub(crate) fn new(q: SparseMatrix, mu: &[f64]) -> Result<Self, EstimateError> {
        let q_diag = q.diag();
        if let Some((i, &v)) = q_diag.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
            return Err(EstimateError::NonPositiveConditional { index: i, value: v });
        }
        let qmu = q.spmv(mu)?;
        let sd = q_diag.iter().map(|v| v.sqrt().recip()).collect();
        Ok(DirectSystem { q, qmu, q_diag, sd })
    }

    pub(crate) fn sd(&self) -> &[f64] {
        &self.sd
    }

    pub(crate) fn residuals(&self, y: &[f64]) -> Result<Vec<f64>, EstimateError> {
        let qy = self.q.spmv(y)?;
        Ok(self
            .qmu
            .iter()
            .zip(&qy)
            .zip(&self.q_diag)
            .map(|((a, b), d)| (a - b) / d)
            .collect())
    }
}

/// Observation marginal of a latent model through its precision
/// `P = I/s2 - A Q_post^-1 A^T / s2^2`, `Q_post = Q + A^T A / s2`, where
/// `s2 = sigma_eps^2`. Leave-one-out conditionals follow from
/// `E[Y_i | y_-i] = y_i - (P r)_i / P_ii`, `sd = P_ii^-1/2`, `r = y - A mu`.
pub(crate) struct LatentSystem {
    factor: CholeskyFactor,
    obs: Vec<usize>,
    n: usize,
    s2: f64,
    p_diag: Vec<f64>,
    sd: Vec<f64>,
    mu_obs: Vec<f64>,
}

impl LatentSystem {
    pub(crate) fn new(q: &SparseMatrix, model: &ModelSpec, theta: &Theta) -> Result<Self, EstimateError> {
        let sigma = theta
            .sigma_eps()
            .ok_or_else(|| EstimateError::InvalidInput("latent model without sigma_eps".into()))?;
        let s2 = sigma * sigma;
        let q_post = add_to_diagonal(q, &model.obs_indices, 1.0 / s2)?;
        let factor = cholesky_sparse(&q_post)?;
        let inv_diag = factor.inverse_diagonal(&model.obs_indices)?;
        let mut p_diag = Vec::with_capacity(inv_diag.len());
        for (j, v) in inv_diag.iter().enumerate() {
            let p = 1.0 / s2 - v / (s2 * s2);
            if !(p > 0.0 && p.is_finite()) {
                return Err(EstimateError::NonPositiveConditional { index: j, value: p });
            }
            p_diag.push(p);
        }
        let sd = p_diag.iter().map(|p: &f64| p.sqrt().recip()).collect();
        Ok(LatentSystem {
            factor,
            obs: model.obs_indices.clone(),
            n: q.n_rows(),
            s2,
            p_diag,
            sd,
            mu_obs: model.obs_mean(theta),
        })
    }

    pub(crate) fn sd(&self) -> &[f64] {
        &self.sd
    }

    pub(crate) fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// `r = y - A mu` and `s = Q_post^-1 A^T r / s2`.
    pub(crate) fn solve_residual(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EstimateError> {
        if y.len() != self.obs.len() {
            return Err(EstimateError::InvalidInput(format!(
                "replicate has {} values, model observes {}",
                y.len(),
                self.obs.len()
            )));
        }
        let r: Vec<f64> = y.iter().zip(&self.mu_obs).map(|(a, b)| a - b).collect();
        let mut v = vec![0.0; self.n];
        for (&i, &ri) in self.obs.iter().zip(&r) {
            v[i] = ri / self.s2;
        }
        let s = self.factor.solve(&v)?;
        Ok((r, s))
    }

    pub(crate) fn residuals(&self, y: &[f64]) -> Result<Vec<f64>, EstimateError> {
        let (r, s) = self.solve_residual(y)?;
        Ok(self
            .obs
            .iter()
            .zip(&r)
            .zip(&self.p_diag)
            .map(|((&i, &ri), &p)| -((ri - s[i]) / self.s2) / p)
            .collect())
    }

    pub(crate) fn s2(&self) -> f64 {
        self.s2
    }

    pub(crate) fn obs(&self) -> &[usize] {
        &self.obs
    }
}

/// `q + value * sum_{i in idx} e_i e_i^T`.
pub(crate) fn add_to_diagonal(q: &SparseMatrix, idx: &[usize], value: f64) -> Result<SparseMatrix, EstimateError> {
    let mut out = q.clone();
    let row_ptr = q.row_ptr().to_vec();
    let col_idx = q.col_idx().to_vec();
    let vals = out.values_mut();
    for &i in idx {
        let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
        let k = cols
            .binary_search(&i)
            .map_err(|_| EstimateError::InvalidInput(format!("precision has no diagonal entry {i}")))?;
        vals[row_ptr[i] + k] += value;
    }
    Ok(out)
}

fn to_predictives(y: &[f64], d: &[f64], sd: &[f64]) -> Result<Vec<GaussPredictive>, EstimateError> {
    y.iter()
        .zip(d)
        .zip(sd)
        .map(|((yi, di), s)| GaussPredictive::new(yi + di, *s).map_err(EstimateError::from))
        .collect()
}

/// `X_i | X_-i = y_-i` for `X ~ N(mu, Q^-1)`, without factorizing `Q`.
pub fn loo_conditionals_from_precision(q: &SparseMatrix, mu: &[f64], y: &[f64]) -> Result<Vec<GaussPredictive>, EstimateError> {
    if mu.len() != q.n_rows() || y.len() != q.n_rows() {
        return Err(EstimateError::InvalidInput(format!(
            "precision is {0}x{0} but mean and data have lengths {1} and {2}",
            q.n_rows(),
            mu.len(),
            y.len()
        )));
    }
    let sys = DirectSystem::new(q.clone(), mu)?;
    to_predictives(y, &sys.residuals(y)?, sys.sd())
}

/// `X_i | X_-i = y_-i` for every node of a direct model.
pub fn loo_conditionals_direct(theta: &Theta, y: &[f64], model: &ModelSpec) -> Result<Vec<GaussPredictive>, EstimateError> {
    model.check_theta(theta)?;
    if model.kind.is_latent() {
        return Err(EstimateError::InvalidInput("direct conditionals need a direct model".into()));
    }
    if y.len() != model.n_obs() {
        return Err(EstimateError::InvalidInput(format!(
            "y has {} values, model has {} nodes",
            y.len(),
            model.n_obs()
        )));
    }
    let q = PrecisionBuilder::new(model)?.precision(theta)?;
    let sys = DirectSystem::new(q, &model.node_mean(theta))?;
    to_predictives(y, &sys.residuals(y)?, sys.sd())
}

/// `Y_i | Y_-i = y_-i` for every observation of a latent model.
pub fn loo_conditionals_latent(theta: &Theta, y: &[f64], model: &ModelSpec) -> Result<Vec<GaussPredictive>, EstimateError> {
    model.check_theta(theta)?;
    if !model.kind.is_latent() {
        return Err(EstimateError::InvalidInput("latent conditionals need a latent model".into()));
    }
    let q = PrecisionBuilder::new(model)?.precision(theta)?;
    let sys = LatentSystem::new(&q, model, theta)?;
    to_predictives(y, &sys.residuals(y)?, sys.sd())
}

/// `X_j + eps | Y = y` at the given nodes of a latent model: mean
/// `mu_j + (Q_post^-1 A^T r / s2)_j`, variance `(Q_post^-1)_jj + s2`. These are
/// predictions for new noisy observations at nodes not in the training
/// design.
pub fn latent_predictive(
    theta: &Theta,
    y: &[f64],
    model: &ModelSpec,
    nodes: &[usize],
) -> Result<Vec<GaussPredictive>, EstimateError> {
    model.check_theta(theta)?;
    if !model.kind.is_latent() {
        return Err(EstimateError::InvalidInput("latent prediction needs a latent model".into()));
    }
    let n = model.lattice.n();
    if let Some(&j) = nodes.iter().find(|&&j| j >= n) {
        return Err(EstimateError::InvalidInput(format!("prediction node {j} >= {n}")));
    }
    let q = PrecisionBuilder::new(model)?.precision(theta)?;
    let sys = LatentSystem::new(&q, model, theta)?;
    let (_, s) = sys.solve_residual(y)?;
    let var = sys.factor.inverse_diagonal(nodes)?;
    let mu = model.node_mean(theta);
    nodes
        .iter()
        .zip(&var)
        .map(|(&j, v)| GaussPredictive::new(mu[j] + s[j], (v + sys.s2).sqrt()).map_err(EstimateError::from))
        .collect()
}

/// Leave-one-out conditionals for either model kind.
pub fn loo_conditionals(theta: &Theta, y: &[f64], model: &ModelSpec) -> Result<Vec<GaussPredictive>, EstimateError> {
    if model.kind.is_latent() {
        loo_conditionals_latent(theta, y, model)
    } else {
        loo_conditionals_direct(theta, y, model)
    }
}
