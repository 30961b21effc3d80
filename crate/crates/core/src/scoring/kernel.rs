//! Sample-based generalized kernel scores.
//!
//! For an outer function `h` and kernel `g` the score is
//!
//! ```text
//! S(P, y) = h(E g(X, X')) + 2 h'(E g(X, X')) (E g(X, y) - E g(X, X'))
//! ```
//!
//! Here both expectations are replaced by sample estimates: `E g(X, y)` by a
//! plain mean and `E g(X, X')` by the U-statistic over distinct pairs, which
//! is unbiased. Pair sums are computed in `O(n log n)` on sorted samples.
//!
//! The kernel is `|x - y|`, or `min(|x - y|, c)` when a cutoff is given.
//! With `h(x) = -log x` the raw value equals `2 SCRPS + 2`; it is reported
//! as `(S - 2) / 2` so that it sits on the same scale as [`super::ScoringRule::Scrps`].

use super::ScoreError;

/// Outer function of the kernel score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelOuter {
    /// `h(x) = -x / 2` (CRPS, rCRPS)
    NegHalfX,
    /// `h(x) = -log x` (SCRPS)
    NegLog,
    /// `h(x) = -sqrt x` (root score)
    NegSqrt,
}

/// Monte Carlo estimate with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl KernelOuter {
    /// `(h, h', h'')` at `x`.
    fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            KernelOuter::NegHalfX => (-0.5 * x, -0.5, 0.0),
            KernelOuter::NegLog => (-x.ln(), -1.0 / x, 1.0 / (x * x)),
            KernelOuter::NegSqrt => {
                let r = x.sqrt();
                (-r, -0.5 / r, 0.25 / (x * r))
            }
        }
    }

    fn needs_positive(self) -> bool {
        !matches!(self, KernelOuter::NegHalfX)
    }
}

/// Evaluates the generalized kernel score of `y` from `samples` of `P`.
pub fn kernel_score_mc(
    outer: KernelOuter,
    cutoff: Option<f64>,
    samples: &[f64],
    y: f64,
) -> Result<McEstimate, ScoreError> {
    let n = samples.len();
    if n < 2 {
        return Err(ScoreError::TooFewSamples(n));
    }
    if let Some(c) = cutoff {
        if !(c.is_finite() && c > 0.0) {
            return Err(ScoreError::InvalidCutoff(c));
        }
    }
    if samples.iter().any(|x| !x.is_finite()) || !y.is_finite() {
        return Err(ScoreError::InvalidInput("samples and y must be finite".into()));
    }
    let g = |d: f64| match cutoff {
        Some(c) => d.abs().min(c),
        None => d.abs(),
    };

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let psi = pair_means(&sorted, cutoff);
    let to_y: Vec<f64> = sorted.iter().map(|&x| g(x - y)).collect();

    let nf = n as f64;
    let e_y = to_y.iter().sum::<f64>() / nf;
    let e_pair = psi.iter().sum::<f64>() / nf;
    if outer.needs_positive() && !(e_pair > 0.0) {
        return Err(ScoreError::NonPositivePairExpectation(e_pair));
    }

    let (h, h1, h2) = outer.eval(e_pair);
    let mut value = h + 2.0 * h1 * (e_y - e_pair);
    let d_ey = 2.0 * h1;
    let d_epair = -h1 + 2.0 * h2 * (e_y - e_pair);

    // First-order (Hoeffding) projection of the estimator onto single samples.
    let mut ss = 0.0;
    for (a, b) in to_y.iter().zip(&psi) {
        let t = d_ey * (a - e_y) + d_epair * 2.0 * (b - e_pair);
        ss += t * t;
    }
    let mut std_error = (ss / (nf - 1.0) / nf).sqrt();

    if outer == KernelOuter::NegLog {
        value = 0.5 * (value - 2.0);
        std_error *= 0.5;
    }
    Ok(McEstimate { value, std_error })
}

/// For each sorted sample `x_k`, the mean of `g(x_k, x_j)` over `j != k`.
fn pair_means(sorted: &[f64], cutoff: Option<f64>) -> Vec<f64> {
    let n = sorted.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in sorted {
        acc += x;
        prefix.push(acc);
    }
    let range_sum = |lo: usize, hi: usize| prefix[hi] - prefix[lo];
    let denom = (n - 1) as f64;
    (0..n)
        .map(|k| {
            let x = sorted[k];
            let total = match cutoff {
                None => {
                    let below = x * k as f64 - range_sum(0, k);
                    let above = range_sum(k + 1, n) - x * (n - k - 1) as f64;
                    below + above
                }
                Some(c) => {
                    // window of j with |x - x_j| < c
                    let lo = sorted.partition_point(|&v| v <= x - c);
                    let hi = sorted.partition_point(|&v| v < x + c);
                    let lo = lo.min(k);
                    let hi = hi.max(k + 1);
                    let below = x * (k - lo) as f64 - range_sum(lo, k);
                    let above = range_sum(k + 1, hi) - x * (hi - k - 1) as f64;
                    let outside = (lo + (n - hi)) as f64;
                    below + above + c * outside
                }
            };
            total / denom
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_pair_means(xs: &[f64], cutoff: Option<f64>) -> Vec<f64> {
        let g = |d: f64| cutoff.map_or(d.abs(), |c| d.abs().min(c));
        let n = xs.len();
        (0..n)
            .map(|k| {
                (0..n).filter(|&j| j != k).map(|j| g(xs[k] - xs[j])).sum::<f64>() / (n - 1) as f64
            })
            .collect()
    }

    #[test]
    fn pair_means_match_brute_force() {
        let mut xs = vec![0.3, -1.2, 2.5, 0.31, -0.7, 4.0, 4.0, -3.3, 1.1, 0.0];
        xs.sort_by(f64::total_cmp);
        for cutoff in [None, Some(0.5), Some(2.0), Some(100.0)] {
            let fast = pair_means(&xs, cutoff);
            let slow = brute_pair_means(&xs, cutoff);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{cutoff:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            kernel_score_mc(KernelOuter::NegLog, None, &[1.0], 0.0),
            Err(ScoreError::TooFewSamples(1))
        ));
        assert!(matches!(
            kernel_score_mc(KernelOuter::NegLog, None, &[1.0, 1.0, 1.0], 0.0),
            Err(ScoreError::NonPositivePairExpectation(_))
        ));
        assert!(matches!(
            kernel_score_mc(KernelOuter::NegSqrt, None, &[2.0, 2.0], 0.0),
            Err(ScoreError::NonPositivePairExpectation(_))
        ));
        // CRPS outer tolerates a degenerate sample
        let e = kernel_score_mc(KernelOuter::NegHalfX, None, &[2.0, 2.0], 0.0).unwrap();
        assert_eq!(e.value, -2.0);
        assert!(kernel_score_mc(KernelOuter::NegHalfX, Some(-1.0), &[0.0, 1.0], 0.0).is_err());
    }
}
