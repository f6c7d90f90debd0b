//! Parametric reference estimators: polynomial least squares, polynomial
//! two-stage least squares, and a first-stage instrument-strength F test.
//!
//! These are the comparators the flexible model is judged against. They use
//! textbook formulas on purpose; anything clever belongs elsewhere.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::RegressionSample;

/// Polynomial design: powers 1..=degree, optional intercept column first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PolySpec {
    pub degree: usize,
    pub intercept: bool,
}

impl PolySpec {
    pub fn new(degree: usize, intercept: bool) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument(
                "polynomial degree must be at least 1".into(),
            ));
        }
        Ok(PolySpec { degree, intercept })
    }

    fn powers(&self) -> Vec<u32> {
        (1..=self.degree as u32).collect()
    }
}

/// Fitted polynomial with coefficient standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct PolyFit {
    /// Intercept first when present, then coefficients on the given powers.
    pub coef: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Powers of the regressor matching the non-intercept coefficients.
    pub powers: Vec<u32>,
    pub intercept: bool,
    pub residual_variance: f64,
    pub n: usize,
}

impl PolyFit {
    /// Evaluate the fitted mean at one regressor value.
    pub fn predict_one(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        let mut idx = 0;
        if self.intercept {
            acc += self.coef[0];
            idx = 1;
        }
        for (k, &p) in self.powers.iter().enumerate() {
            acc += self.coef[idx + k] * x.powi(p as i32);
        }
        acc
    }

    pub fn predict(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.predict_one(x)).collect()
    }
}

/// Two-stage least squares output: second-stage fit plus first-stage fits.
#[derive(Debug, Clone, Serialize)]
pub struct TwoSlsFit {
    pub second_stage: PolyFit,
    /// One first-stage fit per instrumented power, in power order.
    pub first_stage: Vec<PolyFit>,
}

impl TwoSlsFit {
    pub fn predict(&self, xs: &[f64]) -> Vec<f64> {
        self.second_stage.predict(xs)
    }
}

fn power_design(x: &[f64], powers: &[u32], intercept: bool) -> DMatrix<f64> {
    let p = powers.len() + usize::from(intercept);
    let mut m = DMatrix::zeros(x.len(), p);
    for (i, &xi) in x.iter().enumerate() {
        let mut j = 0;
        if intercept {
            m[(i, 0)] = 1.0;
            j = 1;
        }
        for (k, &pw) in powers.iter().enumerate() {
            m[(i, j + k)] = xi.powi(pw as i32);
        }
    }
    m
}

/// Least squares via SVD with a rank check.
///
/// Returns the coefficient vector and `(X'X)^{-1}` for standard errors.
fn solve_ls(x: &DMatrix<f64>, y: &DVector<f64>, context: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    if x.nrows() < p {
        return Err(Error::InvalidArgument(format!(
            "{context}: {} rows for {p} coefficients",
            x.nrows()
        )));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let tol = smax * (x.nrows().max(p) as f64) * f64::EPSILON;
    if !(smin > tol) {
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        return Err(Error::RankDeficient {
            context: context.to_string(),
            cond,
        });
    }
    let coef = svd
        .solve(y, tol)
        .map_err(|e| Error::Numeric {
            context: context.to_string(),
            detail: e.to_string(),
        })?;
    let xtx = x.transpose() * x;
    let xtx_inv = xtx.try_inverse().ok_or_else(|| Error::Numeric {
        context: context.to_string(),
        detail: "normal matrix not invertible despite rank check".into(),
    })?;
    Ok((coef, xtx_inv))
}

fn fit_poly_on(
    y: &[f64],
    x: &[f64],
    powers: &[u32],
    intercept: bool,
    context: &str,
) -> Result<PolyFit> {
    let design = power_design(x, powers, intercept);
    let yv = DVector::from_column_slice(y);
    let (coef, xtx_inv) = solve_ls(&design, &yv, context)?;
    let n = y.len();
    let p = coef.len();
    let resid = &yv - &design * &coef;
    let dof = n.saturating_sub(p).max(1);
    let s2 = resid.norm_squared() / dof as f64;
    let std_err = (0..p).map(|j| (s2 * xtx_inv[(j, j)]).sqrt()).collect();
    Ok(PolyFit {
        coef: coef.iter().copied().collect(),
        std_err,
        powers: powers.to_vec(),
        intercept,
        residual_variance: s2,
        n,
    })
}

/// Polynomial least squares of flow on occupancy.
pub fn fit_pols(sample: &RegressionSample, spec: PolySpec) -> Result<PolyFit> {
    fit_poly_on(
        &sample.q,
        &sample.o,
        &spec.powers(),
        spec.intercept,
        "polynomial least squares",
    )
}

/// Polynomial two-stage least squares with a polynomial first stage.
///
/// Each occupancy power is projected on `{1, z, ..., z^first_stage_degree}`;
/// the second stage regresses flow on the fitted powers. Standard errors use
/// the conventional 2SLS formula: residuals from the real regressors with
/// the projected-design normal matrix.
pub fn fit_2sls(
    sample: &RegressionSample,
    spec: PolySpec,
    first_stage_degree: usize,
) -> Result<TwoSlsFit> {
    fit_2sls_terms(sample, &spec.powers(), spec.intercept, first_stage_degree)
}

/// Two-stage least squares on an explicit set of occupancy powers.
pub fn fit_2sls_terms(
    sample: &RegressionSample,
    powers: &[u32],
    intercept: bool,
    first_stage_degree: usize,
) -> Result<TwoSlsFit> {
    if powers.is_empty() {
        return Err(Error::InvalidArgument(
            "two-stage least squares needs at least one regressor power".into(),
        ));
    }
    if first_stage_degree == 0 {
        return Err(Error::InvalidArgument(
            "first-stage degree must be at least 1".into(),
        ));
    }
    let n = sample.len();
    let fs_powers: Vec<u32> = (1..=first_stage_degree as u32).collect();

    let mut first_stage = Vec::with_capacity(powers.len());
    let mut projected = DMatrix::zeros(n, powers.len() + usize::from(intercept));
    if intercept {
        projected.column_mut(0).fill(1.0);
    }
    let off = usize::from(intercept);
    for (k, &pw) in powers.iter().enumerate() {
        let target: Vec<f64> = sample.o.iter().map(|&oi| oi.powi(pw as i32)).collect();
        let fit = fit_poly_on(
            &target,
            &sample.z,
            &fs_powers,
            true,
            &format!("first stage for occupancy power {pw}"),
        )?;
        let fitted = fit.predict(&sample.z);
        for (i, &v) in fitted.iter().enumerate() {
            projected[(i, off + k)] = v;
        }
        first_stage.push(fit);
    }

    let yv = DVector::from_column_slice(&sample.q);
    let (coef, xtx_inv) = solve_ls(&projected, &yv, "second stage")?;

    // Residuals from the actual regressors, not the projections.
    let real = power_design(&sample.o, powers, intercept);
    let resid = &yv - &real * &coef;
    let p = coef.len();
    let dof = n.saturating_sub(p).max(1);
    let s2 = resid.norm_squared() / dof as f64;
    let std_err = (0..p).map(|j| (s2 * xtx_inv[(j, j)]).sqrt()).collect();

    Ok(TwoSlsFit {
        second_stage: PolyFit {
            coef: coef.iter().copied().collect(),
            std_err,
            powers: powers.to_vec(),
            intercept,
            residual_variance: s2,
            n,
        },
        first_stage,
    })
}

/// Instrument strength for one occupancy bin.
#[derive(Debug, Clone, Serialize)]
pub struct BinStrength {
    pub label: String,
    pub n: usize,
    /// F statistic for the instrument in `o ~ 1 + z`; `None` when skipped.
    pub f_stat: Option<f64>,
    pub strong: Option<bool>,
}

/// First-stage F diagnostics over occupancy bins.
#[derive(Debug, Clone, Serialize)]
pub struct FtestReport {
    pub bins: Vec<BinStrength>,
    pub critical: f64,
}

impl FtestReport {
    pub fn all_strong(&self) -> bool {
        self.bins
            .iter()
            .all(|b| b.strong.unwrap_or(false) || b.f_stat.is_none())
    }
}

/// Minimum rows for a bin to be tested rather than skipped.
pub const MIN_BIN_ROWS: usize = 30;

/// Conventional strong-instrument cutoff.
pub const F_CRITICAL: f64 = 10.0;

/// F statistic for adding `z` to an intercept-only model of `o`.
///
/// With a single instrument this equals the squared t statistic on `z`.
pub fn first_stage_f(o: &[f64], z: &[f64]) -> Result<f64> {
    let n = o.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "F test needs at least 3 rows, got {n}"
        )));
    }
    if z.len() != n {
        return Err(Error::InvalidArgument(
            "F test inputs have mismatched lengths".into(),
        ));
    }
    let o_mean = o.iter().sum::<f64>() / n as f64;
    let rss0: f64 = o.iter().map(|&v| (v - o_mean).powi(2)).sum();
    let fit = fit_poly_on(o, z, &[1], true, "first-stage F regression")?;
    let fitted = fit.predict(z);
    let rss1: f64 = o
        .iter()
        .zip(&fitted)
        .map(|(&v, &f)| (v - f).powi(2))
        .sum();
    let denom = rss1 / (n as f64 - 2.0);
    if denom <= 0.0 {
        return Err(Error::Numeric {
            context: "first-stage F".into(),
            detail: "zero residual variance".into(),
        });
    }
    Ok((rss0 - rss1) / denom)
}

/// Run the F diagnostic on the full sample and occupancy bins split at the
/// given points. `splits = [15.0]` produces bins `o <= 15` and `o > 15`.
pub fn weak_instrument_ftest(sample: &RegressionSample, splits: &[f64]) -> Result<FtestReport> {
    let mut sorted_splits = splits.to_vec();
    if sorted_splits.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite bin split".into()));
    }
    sorted_splits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted_splits.dedup();

    let mut bins: Vec<(String, Vec<usize>)> = Vec::new();
    bins.push(("all".into(), (0..sample.len()).collect()));
    let mut lo = f64::NEG_INFINITY;
    for (k, &s) in sorted_splits.iter().enumerate() {
        let label = if k == 0 {
            format!("o <= {s}")
        } else {
            format!("{lo} < o <= {s}")
        };
        let idx: Vec<usize> = (0..sample.len())
            .filter(|&i| sample.o[i] > lo && sample.o[i] <= s)
            .collect();
        bins.push((label, idx));
        lo = s;
    }
    if let Some(&last) = sorted_splits.last() {
        let idx: Vec<usize> = (0..sample.len()).filter(|&i| sample.o[i] > last).collect();
        bins.push((format!("o > {last}"), idx));
    }

    let mut out = Vec::with_capacity(bins.len());
    for (label, idx) in bins {
        if idx.len() < MIN_BIN_ROWS {
            out.push(BinStrength {
                label,
                n: idx.len(),
                f_stat: None,
                strong: None,
            });
            continue;
        }
        let o: Vec<f64> = idx.iter().map(|&i| sample.o[i]).collect();
        let z: Vec<f64> = idx.iter().map(|&i| sample.z[i]).collect();
        let f = first_stage_f(&o, &z)?;
        out.push(BinStrength {
            label,
            n: idx.len(),
            f_stat: Some(f),
            strong: Some(f > F_CRITICAL),
        });
    }
    Ok(FtestReport {
        bins: out,
        critical: F_CRITICAL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(rng: &mut ChaCha20Rng, sd: f64) -> f64 {
        Normal::new(0.0, sd).unwrap().sample(rng)
    }

    #[test]
    fn exact_quadratic_is_recovered() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| 2.0 - 3.0 * v + 0.5 * v * v).collect();
        let s = RegressionSample::synthetic(y, x.clone(), x).unwrap();
        let fit = fit_pols(&s, PolySpec::new(2, true).unwrap()).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-9);
        assert!((fit.coef[1] + 3.0).abs() < 1e-9);
        assert!((fit.coef[2] - 0.5).abs() < 1e-9);
        assert!(fit.residual_variance < 1e-16);
        assert!((fit.predict_one(2.0) - (2.0 - 6.0 + 2.0)).abs() < 1e-9);
    }

    #[test]
    fn self_instrumenting_matches_least_squares() {
        // With z = o the projection is (numerically) the identity on the
        // design, so both estimators solve the same normal equations.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let o: Vec<f64> = (0..400).map(|_| rng.random_range(0.5..9.5)).collect();
        let q: Vec<f64> = o
            .iter()
            .map(|&v| 1.0 + 2.0 * v - 0.3 * v * v + noise(&mut rng, 0.5))
            .collect();
        let s = RegressionSample::synthetic(q, o.clone(), o).unwrap();
        let spec = PolySpec::new(2, true).unwrap();
        let ols = fit_pols(&s, spec).unwrap();
        let tsls = fit_2sls(&s, spec, 2).unwrap();
        for j in 0..3 {
            assert!(
                (ols.coef[j] - tsls.second_stage.coef[j]).abs() < 1e-6,
                "coef {j}: {} vs {}",
                ols.coef[j],
                tsls.second_stage.coef[j]
            );
        }
    }

    #[test]
    fn instrumenting_removes_simultaneity_bias() {
        // o and q share an unobserved shock; z moves o but not the shock.
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let n = 4000;
        let mut o = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for _ in 0..n {
            let zi = rng.random_range(0.0..1.0);
            let u = noise(&mut rng, 1.0);
            let oi = 1.0 + 2.0 * zi + u;
            let qi = 3.0 + 1.5 * oi + 2.0 * u + noise(&mut rng, 0.2);
            o.push(oi);
            q.push(qi);
            z.push(zi);
        }
        let s = RegressionSample::synthetic(q, o, z).unwrap();
        let spec = PolySpec::new(1, true).unwrap();
        let ols = fit_pols(&s, spec).unwrap();
        let tsls = fit_2sls(&s, spec, 1).unwrap();
        // Endogeneity pushes the least-squares slope far above 1.5.
        assert!(ols.coef[1] > 2.5, "ols slope {}", ols.coef[1]);
        let slope = tsls.second_stage.coef[1];
        let se = tsls.second_stage.std_err[1];
        assert!(
            (slope - 1.5).abs() < 3.0 * se,
            "2sls slope {slope} se {se}"
        );
    }

    #[test]
    fn constant_regressor_is_rank_deficient() {
        let o = vec![2.0; 40];
        let q: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let z = o.clone();
        let s = RegressionSample::synthetic(q, o, z).unwrap();
        let err = fit_pols(&s, PolySpec::new(2, true).unwrap()).unwrap_err();
        match err {
            Error::RankDeficient { cond, .. } => assert!(cond > 1e12 || cond.is_infinite()),
            other => panic!("expected rank deficiency, got {other}"),
        }
    }

    #[test]
    fn f_statistic_equals_squared_t() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let z: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..4.0)).collect();
        let o: Vec<f64> = z
            .iter()
            .map(|&v| 0.5 + 0.8 * v + noise(&mut rng, 0.7))
            .collect();
        let f = first_stage_f(&o, &z).unwrap();
        let fit = fit_poly_on(&o, &z, &[1], true, "t check").unwrap();
        let t = fit.coef[1] / fit.std_err[1];
        assert!((f - t * t).abs() < 1e-10 * f.max(1.0), "{f} vs {}", t * t);
    }

    #[test]
    fn bins_split_and_small_bins_are_skipped() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let mut o = Vec::new();
        let mut z = Vec::new();
        for _ in 0..100 {
            let zi = rng.random_range(0.0..1.0);
            o.push(5.0 + 8.0 * zi + noise(&mut rng, 0.3));
            z.push(zi);
        }
        // Only a handful of rows above the split.
        for i in 0..5 {
            o.push(20.0 + i as f64);
            z.push(0.5);
        }
        let q = vec![1.0; o.len()];
        let s = RegressionSample::synthetic(q, o, z).unwrap();
        let report = weak_instrument_ftest(&s, &[15.0]).unwrap();
        assert_eq!(report.bins.len(), 3);
        assert_eq!(report.bins[0].label, "all");
        assert!(report.bins[1].f_stat.is_some());
        assert_eq!(report.bins[2].n, 5);
        assert!(report.bins[2].f_stat.is_none(), "small bin must be skipped");
        assert!(report.bins[2].strong.is_none());
    }

    #[test]
    fn strong_and_weak_instruments_classify() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let n = 500;
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let o_strong: Vec<f64> = z.iter().map(|&v| 3.0 * v + noise(&mut rng, 0.2)).collect();
        let o_weak: Vec<f64> = (0..n).map(|_| noise(&mut rng, 1.0)).collect();
        let f_strong = first_stage_f(&o_strong, &z).unwrap();
        let f_weak = first_stage_f(&o_weak, &z).unwrap();
        assert!(f_strong > F_CRITICAL, "strong F = {f_strong}");
        assert!(f_weak < F_CRITICAL, "weak F = {f_weak}");
    }
}
