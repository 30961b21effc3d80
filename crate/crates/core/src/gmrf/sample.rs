use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, GmrfError, Lattice, ModelSpec, OutlierRecord, Theta};
use crate::linalg::{cholesky_sparse, SparseMatrix};
use crate::par::{map_range, Execution};
use crate::rng::{derive_seed, stream};

const NOISE_TAG: u64 = 1;
const OUTLIER_TAG: u64 = 2;
const DESIGN_TAG: u64 = 3;

/// Draws `n_reps` fields `x = mu + L^-T z` with `L L^T = Q`. Replicate `r`
/// uses stream `(seed, r)`.
pub fn sample_fields(
    q: &SparseMatrix,
    mu: &[f64],
    n_reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>, GmrfError> {
    let n = q.n_rows();
    if mu.len() != n {
        return Err(GmrfError::InvalidModel(format!("mean has length {}, precision is {n}x{n}", mu.len())));
    }
    let f = cholesky_sparse(q)?;
    map_range(exec, n_reps, |r| {
        let mut rng = stream(seed, r as u64);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = f.solve_upper(&z)?;
        for (xi, m) in x.iter_mut().zip(mu) {
            *xi += m;
        }
        Ok(x)
    })
    .into_iter()
    .collect()
}

/// Direct observations `y = x` of every node.
pub fn sample_direct(
    model: &ModelSpec,
    q: &SparseMatrix,
    mu: &[f64],
    n_reps: usize,
    seed: u64,
) -> Result<Dataset, GmrfError> {
    model.validate()?;
    if model.kind.is_latent() {
        return Err(GmrfError::InvalidModel("sample_direct needs a direct model".into()));
    }
    let replicates = sample_fields(q, mu, n_reps, seed, Execution::default())?;
    Ok(Dataset::new(model.clone(), replicates))
}

/// Noisy observations `y = A x + sigma_eps e` at the model's observation
/// nodes. Noise for replicate `r` comes from its own stream.
pub fn sample_latent(
    model: &ModelSpec,
    q: &SparseMatrix,
    mu: &[f64],
    sigma_eps: f64,
    n_reps: usize,
    seed: u64,
) -> Result<Dataset, GmrfError> {
    model.validate()?;
    if !model.kind.is_latent() {
        return Err(GmrfError::InvalidModel("sample_latent needs a latent model".into()));
    }
    if !(sigma_eps.is_finite() && sigma_eps > 0.0) {
        return Err(GmrfError::InvalidParameter(format!("sigma_eps = {sigma_eps}")));
    }
    let fields = sample_fields(q, mu, n_reps, seed, Execution::default())?;
    let noise_seed = derive_seed(seed, &[NOISE_TAG]);
    let replicates = fields
        .iter()
        .enumerate()
        .map(|(r, x)| {
            let mut rng = stream(noise_seed, r as u64);
            model
                .obs_indices
                .iter()
                .map(|&i| x[i] + sigma_eps * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Ok(Dataset::new(model.clone(), replicates))
}

/// Contaminates `n_contaminated` distinct replicates (uniform without
/// replacement) by replacing one uniformly chosen observation `y_i` with
/// `|y_i| + magnitude`.
pub fn inject_outliers(
    data: &Dataset,
    n_contaminated: usize,
    magnitude: f64,
    seed: u64,
) -> Result<Dataset, GmrfError> {
    let n_reps = data.replicates.len();
    if n_contaminated > n_reps {
        return Err(GmrfError::InvalidDataset(format!(
            "cannot contaminate {n_contaminated} of {n_reps} replicates"
        )));
    }
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(GmrfError::InvalidParameter(format!("outlier magnitude {magnitude}")));
    }
    let mut out = data.clone();
    if n_contaminated == 0 {
        return Ok(out);
    }
    let m = data.model.n_obs();
    let mut rng = stream(derive_seed(seed, &[OUTLIER_TAG]), 0);
    let mut reps = sample_indices(&mut rng, n_reps, n_contaminated).into_vec();
    reps.sort_unstable();
    for r in reps {
        let index = rng.gen_range(0..m);
        let original = out.replicates[r][index];
        let value = original.abs() + magnitude;
        out.replicates[r][index] = value;
        out.outliers.push(OutlierRecord { replicate: r, index, original, value });
    }
    Ok(out)
}

/// Disjoint training and test node sets drawn uniformly from the interior
/// nodes, each returned in increasing order.
pub fn latent_design(
    lattice: &Lattice,
    m_train: usize,
    m_test: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), GmrfError> {
    let interior: Vec<usize> = (0..lattice.n()).filter(|&i| lattice.is_interior(i)).collect();
    if m_train == 0 || m_train + m_test > interior.len() {
        return Err(GmrfError::InvalidModel(format!(
            "cannot place {m_train} + {m_test} observations on {} interior nodes",
            interior.len()
        )));
    }
    let mut rng = stream(derive_seed(seed, &[DESIGN_TAG]), 0);
    let picks = sample_indices(&mut rng, interior.len(), m_train + m_test).into_vec();
    let mut train: Vec<usize> = picks[..m_train].iter().map(|&k| interior[k]).collect();
    let mut test: Vec<usize> = picks[m_train..].iter().map(|&k| interior[k]).collect();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Two smooth synthetic covariates: a terrain-like surface and a linear
/// north-south gradient, both of order one.
pub fn synthetic_covariates(lattice: &Lattice) -> Vec<Vec<f64>> {
    let [x0, x1] = lattice.x_range();
    let [y0, y1] = lattice.y_range();
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let (wx, wy) = (x1 - x0, y1 - y0);
    let coords: Vec<(f64, f64)> = (0..lattice.n()).map(|i| lattice.coords(i)).collect();
    let terrain = coords
        .iter()
        .map(|&(s1, s2)| {
            let (u, v) = ((s1 - cx) / wx, (s2 - cy) / wy);
            (-8.0 * (u * u + v * v)).exp() + 0.3 * (6.0 * u).sin() * (4.0 * v).cos()
        })
        .collect();
    let gradient = coords.iter().map(|&(_, s2)| 2.0 * (s2 - cy) / wy).collect();
    vec![terrain, gradient]
}

impl ModelSpec {
    /// Convenience: samples a dataset at `theta` with the model's own mean.
    pub fn simulate(&self, theta: &Theta, n_reps: usize, seed: u64) -> Result<Dataset, GmrfError> {
        self.check_theta(theta)?;
        let q = super::PrecisionBuilder::new(self)?.precision(theta)?;
        let mu = self.node_mean(theta);
        let mut d = match theta.sigma_eps() {
            Some(s) => sample_latent(self, &q, &mu, s, n_reps, seed)?,
            None => sample_direct(self, &q, &mu, n_reps, seed)?,
        };
        d.truth = Some(theta.clone());
        d.seed = Some(seed);
        Ok(d)
    }
}
