//! Small statistical helpers shared across estimator code.
//!
//! All Monte Carlo reductions go through [`pairwise_sum`] so that results do
//! not depend on how path work was scheduled across threads: per-path
//! statistics are collected in path order and reduced deterministically.

use crate::error::{LabError, Result};
use ndarray::ArrayView2;

/// Pairwise (cascade) summation. Numerically more stable than a naive fold
/// and independent of accumulation chunking.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (n − 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub sd: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let m = mean(xs);
        let sd = sample_variance(xs).max(0.0).sqrt();
        Estimate {
            mean: m,
            stderr: sd / (xs.len() as f64).sqrt(),
            sd,
            n: xs.len(),
        }
    }
}

/// Ordinary least squares of `y` on a low-degree polynomial in `x`;
/// returns coefficients `[c0, c1, ..., c_degree]`. Intended for tiny systems
/// (quadratic fits over a handful of grid points).
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    let k = degree + 1;
    let n = x.len();
    assert!(n >= k, "polyfit needs at least degree+1 points");
    let mut design = nalgebra::DMatrix::<f64>::zeros(n, k);
    for (i, &xi) in x.iter().enumerate() {
        let mut pow = 1.0;
        for j in 0..k {
            design[(i, j)] = pow;
            pow *= xi;
        }
    }
    let rhs = nalgebra::DVector::<f64>::from_column_slice(y);
    let svd = design.svd(true, true);
    let sol = svd
        .solve(&rhs, 1.0e-14)
        .expect("polyfit SVD solve cannot fail with computed factors");
    sol.iter().copied().collect()
}

/// What to do when the cross-sectional design matrix is rank deficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankPolicy {
    /// Zero out the deficient directions (minimum-norm least squares) and
    /// report how many were dropped. Appropriate for backward-induction
    /// regressions where degenerate scenarios legitimately collapse columns
    /// (a deterministic market makes every non-constant feature constant).
    DropDegenerate,
    /// Fail with a numerical-failure error carrying the condition number.
    Error,
}

/// Result of a multi-target cross-sectional least-squares fit.
#[derive(Debug, Clone)]
pub struct CrossSectionFit {
    /// Fitted values, one vector per target, in target order.
    pub fitted: Vec<Vec<f64>>,
    /// Coefficients per target in the *raw* feature space (column 0 is the
    /// intercept), with zero entries for dropped directions.
    pub coefficients: Vec<Vec<f64>>,
    /// Ratio of largest to smallest singular value of the standardized
    /// design (infinite when the design is exactly singular).
    pub condition_number: f64,
    /// Number of singular directions below the rank threshold.
    pub dropped_directions: usize,
}

const RANK_RELATIVE_TOLERANCE: f64 = 1.0e-10;

/// Least squares of several targets on one shared feature matrix.
///
/// `features` is `(n_samples, n_features)` and **column 0 must be the
/// intercept column of ones**; the remaining columns are standardized
/// internally (centered and scaled) before the singular value decomposition,
/// so the rank threshold is scale free. Fitted values are exact projections
/// onto the span of the kept directions; coefficients are mapped back to the
/// raw feature scale.
pub fn cross_section_fit(
    features: ArrayView2<'_, f64>,
    targets: &[&[f64]],
    policy: RankPolicy,
) -> Result<CrossSectionFit> {
    let (n, k) = (features.nrows(), features.ncols());
    if k == 0 || n == 0 {
        return Err(LabError::invalid("regression needs a nonempty design"));
    }
    if n < k {
        return Err(LabError::invalid(format!(
            "regression needs at least as many samples as features ({n} < {k})"
        )));
    }
    for target in targets {
        if target.len() != n {
            return Err(LabError::shape(format!(
                "regression target has {} samples, design has {n}",
                target.len()
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(LabError::numerical(
                "cross-section regression",
                "target contains a non-finite value",
            ));
        }
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(LabError::numerical(
            "cross-section regression",
            "feature matrix contains a non-finite value",
        ));
    }
    if features.column(0).iter().any(|&v| v != 1.0) {
        return Err(LabError::invalid(
            "feature column 0 must be the intercept column of ones",
        ));
    }

    // Standardize columns 1.. so the rank decision does not depend on units.
    let mut col_mean = vec![0.0; k];
    let mut col_sd = vec![1.0; k];
    let mut degenerate = vec![false; k];
    for j in 1..k {
        let col: Vec<f64> = features.column(j).iter().copied().collect();
        let m = mean(&col);
        let sd = sample_variance(&col).max(0.0).sqrt();
        col_mean[j] = m;
        col_sd[j] = sd;
        degenerate[j] = !(sd > 1.0e-12 * m.abs().max(1.0));
    }
    let mut design = nalgebra::DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 1..k {
            design[(i, j)] = if degenerate[j] {
                0.0
            } else {
                (features[(i, j)] - col_mean[j]) / col_sd[j]
            };
        }
    }

    let svd = design.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let s_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let threshold = RANK_RELATIVE_TOLERANCE * s_max;
    let dropped = svd
        .singular_values
        .iter()
        .filter(|&&s| s < threshold)
        .count();
    let condition_number = if s_min > 0.0 {
        s_max / s_min
    } else {
        f64::INFINITY
    };
    if policy == RankPolicy::Error && dropped > 0 {
        return Err(LabError::numerical(
            "cross-section regression",
            format!(
                "rank-deficient design: condition number {condition_number:.3e}, \
                 {dropped} of {k} directions dropped over {n} samples"
            ),
        ));
    }

    let u = svd.u.as_ref().expect("SVD computed with u");
    let v_t = svd.v_t.as_ref().expect("SVD computed with v_t");
    let mut fitted = Vec::with_capacity(targets.len());
    let mut coefficients = Vec::with_capacity(targets.len());
    for target in targets {
        let rhs = nalgebra::DVector::<f64>::from_column_slice(target);
        // Minimum-norm solution: beta = V diag(1/s)|kept U^T y.
        let mut uty = u.transpose() * &rhs;
        for (i, s) in svd.singular_values.iter().enumerate() {
            uty[i] = if *s >= threshold { uty[i] / s } else { 0.0 };
        }
        let beta_std = v_t.transpose() * uty;
        let fit = &design * &beta_std;
        let mut beta_raw = vec![0.0; k];
        let mut intercept = beta_std[0];
        for j in 1..k {
            if !degenerate[j] {
                beta_raw[j] = beta_std[j] / col_sd[j];
                intercept -= beta_std[j] * col_mean[j] / col_sd[j];
            }
        }
        beta_raw[0] = intercept;
        fitted.push(fit.iter().copied().collect());
        coefficients.push(beta_raw);
    }
    Ok(CrossSectionFit {
        fitted,
        coefficients,
        condition_number,
        dropped_directions: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn pairwise_matches_exact_sum_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn pairwise_is_chunking_independent() {
        // The function is deterministic for a given slice; reordering the
        // slice is the only way to change the result.
        let xs: Vec<f64> = (0..4097).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let a = pairwise_sum(&xs);
        let b = pairwise_sum(&xs);
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_of_constant_has_zero_stderr() {
        let e = Estimate::from_samples(&[2.5; 100]);
        assert_eq!(e.mean, 2.5);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn polyfit_recovers_exact_quadratic() {
        let x = [-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2];
        let y: Vec<f64> = x.iter().map(|&t| 1.5 - 0.25 * t + 3.0 * t * t).collect();
        let coef = polyfit(&x, &y, 2);
        assert!((coef[0] - 1.5).abs() < 1e-12);
        assert!((coef[1] + 0.25).abs() < 1e-12);
        assert!((coef[2] - 3.0).abs() < 1e-10);
    }

    fn toy_design(n: usize) -> Array2<f64> {
        let mut x = Array2::zeros((n, 3));
        for i in 0..n {
            let xi = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            x[[i, 0]] = 1.0;
            x[[i, 1]] = xi;
            x[[i, 2]] = xi * xi;
        }
        x
    }

    #[test]
    fn cross_section_fit_is_exact_on_spanned_target() {
        let x = toy_design(50);
        let y: Vec<f64> = (0..50)
            .map(|i| 2.0 + 3.0 * x[[i, 1]] - 1.25 * x[[i, 2]])
            .collect();
        let fit = cross_section_fit(x.view(), &[&y], RankPolicy::Error).unwrap();
        assert_eq!(fit.dropped_directions, 0);
        for (f, t) in fit.fitted[0].iter().zip(&y) {
            assert!((f - t).abs() < 1e-10);
        }
        assert!((fit.coefficients[0][0] - 2.0).abs() < 1e-9);
        assert!((fit.coefficients[0][1] - 3.0).abs() < 1e-9);
        assert!((fit.coefficients[0][2] + 1.25).abs() < 1e-9);
    }

    #[test]
    fn cross_section_fit_constant_target_is_its_mean() {
        let x = toy_design(40);
        let y = vec![0.75; 40];
        let fit = cross_section_fit(x.view(), &[&y], RankPolicy::Error).unwrap();
        for f in &fit.fitted[0] {
            assert!((f - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_section_fit_duplicate_column_policies() {
        let n = 30;
        let mut x = Array2::zeros((n, 3));
        for i in 0..n {
            let xi = i as f64 / n as f64;
            x[[i, 0]] = 1.0;
            x[[i, 1]] = xi;
            x[[i, 2]] = 2.0 * xi; // exact duplicate direction
        }
        let y: Vec<f64> = (0..n).map(|i| 1.0 + x[[i, 1]]).collect();

        let err = cross_section_fit(x.view(), &[&y], RankPolicy::Error).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("condition number"), "message was: {msg}");

        let fit = cross_section_fit(x.view(), &[&y], RankPolicy::DropDegenerate).unwrap();
        assert!(fit.dropped_directions >= 1);
        for (f, t) in fit.fitted[0].iter().zip(&y) {
            assert!((f - t).abs() < 1e-10, "projection should still span target");
        }
    }

    #[test]
    fn cross_section_fit_degenerate_scenario_collapses_to_mean() {
        // Every non-constant feature is constant across samples: the fit must
        // reduce to the sample mean instead of failing.
        let n = 25;
        let mut x = Array2::zeros((n, 3));
        for i in 0..n {
            x[[i, 0]] = 1.0;
            x[[i, 1]] = 0.4;
            x[[i, 2]] = -3.0;
        }
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let fit = cross_section_fit(x.view(), &[&y], RankPolicy::DropDegenerate).unwrap();
        let m = mean(&y);
        for f in &fit.fitted[0] {
            assert!((f - m).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_section_fit_rejects_bad_inputs() {
        let x = toy_design(10);
        let y = vec![1.0; 9];
        assert!(cross_section_fit(x.view(), &[&y], RankPolicy::Error).is_err());
        let mut bad = toy_design(10);
        bad[[0, 0]] = 0.0;
        let y10 = vec![1.0; 10];
        assert!(cross_section_fit(bad.view(), &[&y10], RankPolicy::Error).is_err());
    }
}
