use std::f64::consts::PI;

use super::{GmrfError, Lattice, ModelKind, ModelSpec, Theta, NONSTATIONARY_TAU_FLOOR};
use crate::linalg::SparseMatrix;

/// Lumped mass matrix `C` (diagonal) and stiffness matrix `G` of a lattice.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub c: SparseMatrix,
    pub g: SparseMatrix,
}

impl FemMatrices {
    pub fn c_diag(&self) -> Vec<f64> {
        self.c.diag()
    }
}

/// Mass and stiffness matrices with natural (Neumann) boundary.
///
/// `C_ii` is the area of the dual cell of node `i`: `hx*hy`, halved on an
/// edge, quartered at a corner. `G` is the 5-point stencil of `-Laplace`
/// assembled edge by edge with weights `hy/hx` (horizontal edges) and
/// `hx/hy` (vertical edges); boundary edges carry half weight.
pub fn build_fem_matrices(lattice: &Lattice) -> Result<FemMatrices, GmrfError> {
    lattice.validate()?;
    let (nx, ny) = (lattice.nx(), lattice.ny());
    let (hx, hy) = (lattice.hx(), lattice.hy());
    let n = lattice.n();
    let half = |on_edge: bool| if on_edge { 0.5 } else { 1.0 };

    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let (col, row) = lattice.position(i);
        c.push(hx * hy * half(col == 0 || col == nx - 1) * half(row == 0 || row == ny - 1));
    }

    let mut trip = Vec::with_capacity(5 * n);
    let mut edge = |a: usize, b: usize, w: f64| {
        trip.push((a, a, w));
        trip.push((b, b, w));
        trip.push((a, b, -w));
        trip.push((b, a, -w));
    };
    for row in 0..ny {
        for col in 0..nx {
            let i = lattice.index(col, row);
            if col + 1 < nx {
                edge(i, i + 1, hy / hx * half(row == 0 || row == ny - 1));
            }
            if row + 1 < ny {
                edge(i, i + nx, hx / hy * half(col == 0 || col == nx - 1));
            }
        }
    }
    Ok(FemMatrices {
        c: SparseMatrix::diagonal(&c),
        g: SparseMatrix::from_triplets(n, n, trip)?,
    })
}

/// Builds `Q(theta)` quickly for many parameter values on a fixed lattice.
///
/// `Q = D (kappa^4 C + 2 kappa^2 G + G C^-1 G) D` with `D = tau I` for
/// stationary models and `D = diag(tau0 * w_i)`,
/// `w_i = max(sqrt|s_i1|, floor)` for the non-stationary model. The sparsity
/// pattern and the three coefficient arrays are computed once.
#[derive(Debug, Clone)]
pub struct PrecisionBuilder {
    pattern: SparseMatrix,
    c: Vec<f64>,
    g: Vec<f64>,
    gcg: Vec<f64>,
    // w_i * w_j per stored entry
    weights: Option<Vec<f64>>,
}

impl PrecisionBuilder {
    pub fn new(model: &ModelSpec) -> Result<Self, GmrfError> {
        let fem = build_fem_matrices(&model.lattice)?;
        let weights = match model.kind {
            ModelKind::Nonstationary => Some(
                (0..model.lattice.n())
                    .map(|i| model.lattice.coords(i).0.abs().sqrt().max(NONSTATIONARY_TAU_FLOOR))
                    .collect(),
            ),
            _ => None,
        };
        Self::from_fem(&fem, weights)
    }

    /// `node_weights` scales row and column `i` by `w_i`.
    pub fn from_fem(fem: &FemMatrices, node_weights: Option<Vec<f64>>) -> Result<Self, GmrfError> {
        let cd = fem.c.diag();
        if let Some(v) = cd.iter().find(|&&v| !(v > 0.0)) {
            return Err(GmrfError::InvalidModel(format!("mass matrix entry {v} not positive")));
        }
        let inv_c = SparseMatrix::diagonal(&cd.iter().map(|v| 1.0 / v).collect::<Vec<_>>());
        let gcg = fem.g.matmul(&inv_c)?.matmul(&fem.g)?;
        let n = cd.len();
        let pattern = SparseMatrix::from_triplets(
            n,
            n,
            (0..n).flat_map(|i| {
                let (cols, _) = gcg.row(i);
                std::iter::once((i, i, 0.0)).chain(cols.iter().map(move |&j| (i, j, 0.0))).collect::<Vec<_>>()
            }),
        )?;
        let mut c = Vec::with_capacity(pattern.nnz());
        let mut g = Vec::with_capacity(pattern.nnz());
        let mut gg = Vec::with_capacity(pattern.nnz());
        let mut ww = node_weights.as_ref().map(|_| Vec::with_capacity(pattern.nnz()));
        for i in 0..n {
            let (cols, _) = pattern.row(i);
            for &j in cols {
                let (a, b) = (i.min(j), i.max(j));
                c.push(if i == j { cd[i] } else { 0.0 });
                g.push(fem.g.get(a, b));
                // upper-triangle value used for both entries keeps Q exactly symmetric
                gg.push(gcg.get(a, b));
                if let (Some(w), Some(nw)) = (ww.as_mut(), node_weights.as_ref()) {
                    w.push(nw[a] * nw[b]);
                }
            }
        }
        Ok(PrecisionBuilder { pattern, c, g, gcg: gg, weights: ww })
    }

    pub fn n(&self) -> usize {
        self.pattern.n_rows()
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    /// Precision for natural `tau` (or `tau0`) and `kappa`.
    pub fn precision_natural(&self, tau: f64, kappa: f64) -> Result<SparseMatrix, GmrfError> {
        if !(tau.is_finite() && tau > 0.0 && kappa.is_finite() && kappa > 0.0) {
            return Err(GmrfError::InvalidParameter(format!("tau = {tau}, kappa = {kappa}")));
        }
        let t2 = tau * tau;
        let k2 = kappa * kappa;
        let (a, b) = (k2 * k2, 2.0 * k2);
        let mut q = self.pattern.clone();
        let vals = q.values_mut();
        for (e, v) in vals.iter_mut().enumerate() {
            let base = t2 * (a * self.c[e] + b * self.g[e] + self.gcg[e]);
            *v = match &self.weights {
                Some(w) => base * w[e],
                None => base,
            };
        }
        if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
            return Err(GmrfError::InvalidParameter(format!(
                "precision entry {v} for tau = {tau}, kappa = {kappa}"
            )));
        }
        Ok(q)
    }

    pub fn precision(&self, theta: &Theta) -> Result<SparseMatrix, GmrfError> {
        theta.validate()?;
        self.precision_natural(theta.tau(), theta.kappa())
    }
}

/// `Q(theta)` for `model` from its mass and stiffness matrices.
pub fn build_precision(theta: &Theta, model: &ModelSpec, fem: &FemMatrices) -> Result<SparseMatrix, GmrfError> {
    let weights = match model.kind {
        ModelKind::Nonstationary => Some(
            (0..model.lattice.n())
                .map(|i| model.lattice.coords(i).0.abs().sqrt().max(NONSTATIONARY_TAU_FLOOR))
                .collect(),
        ),
        _ => None,
    };
    PrecisionBuilder::from_fem(fem, weights)?.precision(theta)
}

/// Marginal standard deviation `1/sqrt(4 pi kappa^2 tau^2)` and practical
/// range `sqrt(8)/kappa` of the stationary field.
pub fn interpret_params(theta: &Theta) -> (f64, f64) {
    let (tau, kappa) = (theta.tau(), theta.kappa());
    ((4.0 * PI * kappa * kappa * tau * tau).recip().sqrt(), 8f64.sqrt() / kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cholesky, symmetric_eigen};

    fn unit(nx: usize, ny: usize) -> Lattice {
        Lattice::new(nx, ny, [0.0, (nx - 1) as f64], [0.0, (ny - 1) as f64]).unwrap()
    }

    #[test]
    fn degenerate_lattice_rejected() {
        assert!(Lattice::new(1, 2, [0.0, 1.0], [0.0, 1.0]).is_err());
        assert!(Lattice::new(2, 2, [1.0, 1.0], [0.0, 1.0]).is_err());
    }

    #[test]
    fn two_by_two() {
        let fem = build_fem_matrices(&unit(2, 2)).unwrap();
        assert_eq!(fem.c_diag(), vec![0.25; 4]);
        for s in fem.g.spmv(&[1.0; 4]).unwrap() {
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn mass_sums_to_area_and_g_is_psd() {
        let l = Lattice::new(7, 4, [-1.0, 2.0], [0.0, 5.0]).unwrap();
        let fem = build_fem_matrices(&l).unwrap();
        assert!((fem.c_diag().iter().sum::<f64>() - l.area()).abs() < 1e-12);
        let fem = build_fem_matrices(&unit(5, 5)).unwrap();
        let gd = fem.g.to_dense();
        assert!(gd.is_symmetric(0.0));
        let (vals, _) = symmetric_eigen(&gd).unwrap();
        assert!(vals[0] >= -1e-10);
        assert!(vals[1] > 1e-3);
        // interior row of the 5-point stencil
        let i = 12;
        assert_eq!(fem.g.get(i, i), 4.0);
        assert_eq!(fem.g.row(i).0.len(), 5);
    }

    #[test]
    fn builder_matches_product_form() {
        let l = Lattice::new(6, 5, [0.0, 3.0], [0.0, 2.0]).unwrap();
        let fem = build_fem_matrices(&l).unwrap();
        let (tau, kappa) = (0.7, 1.3);
        let q = build_precision(&Theta::from_natural(tau, kappa), &ModelSpec::direct(l.clone()), &fem).unwrap();
        let c = fem.c.to_dense();
        let k = c.scaled(kappa * kappa).data().iter().zip(fem.g.to_dense().data()).map(|(a, b)| a + b).collect();
        let k = crate::linalg::DenseMatrix::from_vec(l.n(), l.n(), k).unwrap();
        let cinv = crate::linalg::DenseMatrix::from_diagonal(&fem.c_diag().iter().map(|v| 1.0 / v).collect::<Vec<_>>());
        let oracle = k.matmul(&cinv).unwrap().matmul(&k).unwrap().scaled(tau * tau);
        let qd = q.to_dense();
        assert!(qd.max_abs_diff(&oracle) < 1e-10 * oracle.norm_inf());
        assert!(qd.is_symmetric(0.0));
        let interior = l.index(3, 2);
        assert_eq!(q.row(interior).0.len(), 13);
    }

    #[test]
    fn zero_stiffness_reduces_to_scaled_mass() {
        let l = unit(2, 2);
        let mut fem = build_fem_matrices(&l).unwrap();
        fem.g = SparseMatrix::from_triplets(4, 4, Vec::new()).unwrap();
        let b = PrecisionBuilder::from_fem(&fem, None).unwrap();
        let (tau, kappa) = (0.5, 2.0);
        let q = b.precision_natural(tau, kappa).unwrap();
        for i in 0..4 {
            assert!((q.get(i, i) - tau * tau * kappa.powi(4) * 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn center_variance_near_continuum_value() {
        let l = Lattice::study_default();
        let theta = Theta::from_natural(0.16, 1.75);
        let q = build_precision(&theta, &ModelSpec::direct(l.clone()), &build_fem_matrices(&l).unwrap()).unwrap();
        let f = cholesky(&q.to_dense()).unwrap();
        let center = l.index(l.nx() / 2, l.ny() / 2);
        let var = f.inverse_diagonal(&[center]).unwrap()[0];
        let target = 1.0 / (4.0 * PI * 1.75f64.powi(2) * 0.16f64.powi(2));
        assert!((var / target - 1.0).abs() < 0.15, "{var} vs {target}");
    }

    #[test]
    fn constant_weights_match_stationary() {
        let l = Lattice::new(5, 6, [0.0, 4.0], [0.0, 5.0]).unwrap();
        let fem = build_fem_matrices(&l).unwrap();
        let stat = PrecisionBuilder::from_fem(&fem, None).unwrap().precision_natural(0.8, 1.1).unwrap();
        let ns = PrecisionBuilder::from_fem(&fem, Some(vec![1.0; l.n()]))
            .unwrap()
            .precision_natural(0.8, 1.1)
            .unwrap();
        assert!(stat.to_dense().max_abs_diff(&ns.to_dense()) <= 1e-12);
    }

    #[test]
    fn nonstationary_is_spd_and_uses_floor() {
        let l = Lattice::new(8, 8, [0.0, 7.0], [0.0, 7.0]).unwrap();
        let model = ModelSpec::latent(ModelKind::Nonstationary, l.clone(), vec![9, 10]).unwrap();
        let q = PrecisionBuilder::new(&model).unwrap().precision(&Theta::from_natural(0.3, 1.2).with_sigma_eps(0.1)).unwrap();
        let (vals, _) = symmetric_eigen(&q.to_dense()).unwrap();
        assert!(vals[0] > 0.0);
        let stat = PrecisionBuilder::new(&ModelSpec::direct(l.clone())).unwrap().precision_natural(0.3, 1.2).unwrap();
        // node 0 has s1 = 0, node 1 has s1 = 1
        assert!((q.get(0, 0) / stat.get(0, 0) - 1e-6).abs() < 1e-18);
        assert!((q.get(1, 1) / stat.get(1, 1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let b = PrecisionBuilder::new(&ModelSpec::direct(unit(3, 3))).unwrap();
        assert!(b.precision(&Theta { log_tau: f64::NAN, log_kappa: 0.0, log_sigma_eps: None, beta: vec![] }).is_err());
        assert!(b.precision(&Theta { log_tau: 800.0, log_kappa: 0.0, log_sigma_eps: None, beta: vec![] }).is_err());
        assert!(b.precision_natural(1e200, 1e200).is_err());
    }

    #[test]
    fn interpretation() {
        let (sd, range) = interpret_params(&Theta::from_natural(0.16, 1.75));
        assert!((sd - 1.0076).abs() < 1e-3 && (range - 1.6162).abs() < 1e-3);
        let kappa = 2.0;
        let tau = 1.0 / ((4.0 * PI).sqrt() * kappa * 0.5);
        assert!((interpret_params(&Theta::from_natural(tau, kappa)).0 - 0.5).abs() < 1e-14);
        assert!((interpret_params(&Theta::from_natural(1.0, 8f64.sqrt())).1 - 1.0).abs() < 1e-15);
    }
}
