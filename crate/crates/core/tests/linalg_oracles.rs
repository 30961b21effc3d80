//! Dense kernels against nalgebra.

use loos_core::estimators::loo_conditionals_from_precision;
use loos_core::linalg::{cholesky, conditional_gauss_dense, loo_inverse_update, DenseMatrix, SparseMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * (0.1 + rng.gen_range(0.0..1.0))
}

fn to_dense(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_vec(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).unwrap()
}

fn drop_index(m: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    m.clone().remove_row(i).remove_column(i)
}

#[test]
fn woodbury_reduced_inverse_on_random_spd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.gen_range(2..=50);
        let s = random_spd(n, &mut rng);
        let s_inv = s.clone().try_inverse().unwrap();
        let i = rng.gen_range(0..n);
        let got = loo_inverse_update(&to_dense(&s_inv), &to_dense(&s), i).unwrap();
        let want = drop_index(&s, i).try_inverse().unwrap();
        let scale = want.amax();
        for r in 0..n - 1 {
            for c in 0..n - 1 {
                let err = (got[(r, c)] - want[(r, c)]).abs() / scale;
                assert!(err < 1e-8, "case {case} n={n} i={i} ({r},{c}): rel err {err}");
            }
        }
    }
}

#[test]
fn dense_conditional_matches_precision_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.gen_range(2..=30);
        let s = random_spd(n, &mut rng);
        let q = s.clone().try_inverse().unwrap();
        let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let qs = SparseMatrix::from_triplets(n, n, (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| (r, c, q[(r, c)]))).unwrap();
        let prec = loo_conditionals_from_precision(&qs, &mu, &y).unwrap();
        let sd = to_dense(&s);
        for i in 0..n {
            let c = conditional_gauss_dense(&mu, &sd, &y, i).unwrap();
            assert!((c.mu() - prec[i].mu()).abs() < 1e-9 * (1.0 + c.mu().abs()), "{} vs {}", c.mu(), prec[i].mu());
            assert!((c.sigma() - prec[i].sigma()).abs() < 1e-9 * (1.0 + c.sigma()));
        }
    }
}

#[test]
fn cholesky_log_det_and_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [1usize, 5, 127, 128, 129, 300] {
        let s = random_spd(n, &mut rng);
        let f = cholesky(&to_dense(&s)).unwrap();
        let l = s.clone().cholesky().unwrap().l();
        let want: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
        assert!((f.log_det() - want).abs() < 1e-9 * want.abs().max(1.0), "n={n}");
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = f.solve(&b).unwrap();
        let r = &s * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.amax() < 1e-8, "n={n}: residual {}", r.amax());
    }
}

#[test]
fn sparse_matvec_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40;
    let trip: Vec<(usize, usize, f64)> =
        (0..200).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(-1.0..1.0))).collect();
    let s = SparseMatrix::from_triplets(n, n, trip.iter().copied()).unwrap();
    let mut d = DMatrix::<f64>::zeros(n, n);
    for &(r, c, v) in &trip {
        d[(r, c)] += v;
    }
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let got = s.spmv(&x).unwrap();
    let want = &d * nalgebra::DVector::from_vec(x);
    for i in 0..n {
        assert!((got[i] - want[i]).abs() < 1e-12);
    }
}
