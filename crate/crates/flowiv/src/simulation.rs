//! Monte Carlo benchmark with a known truth, plus two small textbook bias
//! demonstrations (omitted variable, reverse causality).
//!
//! The benchmark generates
//!
//! ```text
//! y = -40 x^4 + 40 x^3 + 30 w^4 + e2
//! x = 3.5 z + 2.1 w + e1
//! ```
//!
//! with `z, w ~ U[0,1]` independent and Gaussian errors. `w` is the
//! confounder: it moves both `x` and `y` but is hidden from every
//! estimator, so regressions of `y` on `x` alone are biased while `z`
//! remains a clean instrument. The structural target `s(x) = -40x^4 + 40x^3`
//! is analytic, which makes every error measure an oracle comparison.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_2sls, fit_2sls_terms, fit_pols, PolySpec};
use crate::error::{Error, Result};
use crate::ingest::RegressionSample;
use crate::npiv::{fit_np, fit_npiv, McmcConfig, MixtureSpec, SplinePriors};
use crate::splines::KnotVector;
use crate::summary::quantile_sorted;

/// The four estimators compared in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// Two-stage least squares with a quadratic flow equation (misspecified).
    TwoSlsQuadratic,
    /// Two-stage least squares on the true powers {3, 4}.
    TwoSlsTrue,
    /// Flexible Bayes fit that ignores the instrument.
    BayesNp,
    /// Flexible Bayes fit with the instrument.
    BayesNpiv,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::TwoSlsQuadratic,
        Estimator::TwoSlsTrue,
        Estimator::BayesNp,
        Estimator::BayesNpiv,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Estimator::TwoSlsQuadratic => "2sls_quadratic",
            Estimator::TwoSlsTrue => "2sls_true",
            Estimator::BayesNp => "bayes_np",
            Estimator::BayesNpiv => "bayes_npiv",
        }
    }

    pub fn parse(s: &str) -> Result<Estimator> {
        match s {
            "2sls_quadratic" => Ok(Estimator::TwoSlsQuadratic),
            "2sls_true" => Ok(Estimator::TwoSlsTrue),
            "bayes_np" => Ok(Estimator::BayesNp),
            "bayes_npiv" => Ok(Estimator::BayesNpiv),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator '{other}'; expected one of 2sls_quadratic, 2sls_true, bayes_np, bayes_npiv"
            ))),
        }
    }
}

/// Benchmark configuration. Coefficients default to the fixed design and
/// exist as fields only so the no-confounding variant can be expressed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    /// Variance of both error terms.
    pub error_var: f64,
    pub coef_x4: f64,
    pub coef_x3: f64,
    pub coef_w4: f64,
    /// Instrument loading in the first stage.
    pub load_z: f64,
    /// Confounder loading in the first stage; 0 removes endogeneity.
    pub load_w: f64,
    pub estimators: Vec<Estimator>,
    /// Use the long thinned sampler profile instead of the short one.
    pub paper_profile: bool,
    pub grid_points: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 10_000,
            seed: 1,
            error_var: 0.5,
            coef_x4: -40.0,
            coef_x3: 40.0,
            coef_w4: 30.0,
            load_z: 3.5,
            load_w: 2.1,
            estimators: Estimator::ALL.to_vec(),
            paper_profile: false,
            grid_points: 200,
        }
    }
}

impl SimConfig {
    pub fn validated(self) -> Result<Self> {
        if self.n < 100 {
            return Err(Error::Config(format!(
                "benchmark needs at least 100 observations, got {}",
                self.n
            )));
        }
        if !(self.error_var > 0.0) {
            return Err(Error::Config("error variance must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimator list is empty".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("comparison grid needs at least 2 points".into()));
        }
        Ok(self)
    }

    /// Structural curve without the confounder term or noise.
    pub fn true_structural(&self, x: f64) -> f64 {
        self.coef_x4 * x.powi(4) + self.coef_x3 * x.powi(3)
    }

    fn mcmc(&self, seed: u64) -> McmcConfig {
        let mut cfg = if self.paper_profile {
            McmcConfig::mc_paper(seed)
        } else {
            McmcConfig::desk(seed)
        };
        cfg.grid_points = self.grid_points;
        cfg
    }
}

/// Generated benchmark data. The confounder is kept outside the sample the
/// estimators receive; only oracle code may look at it.
#[derive(Debug, Clone)]
pub struct McData {
    pub sample: RegressionSample,
    pub w: Vec<f64>,
}

/// Disjoint deterministic seed streams per (replication, lane).
pub fn derive_seed(base: u64, rep: u64, lane: u64) -> u64 {
    let mut x = base
        .wrapping_add(rep.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(lane.wrapping_mul(0xD1B5_4A32_D192_ED03));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

/// Draw one benchmark dataset.
pub fn generate_mc_data(cfg: &SimConfig) -> Result<McData> {
    generate_mc_data_rep(cfg, 0)
}

/// Draw the dataset for a given replication index.
pub fn generate_mc_data_rep(cfg: &SimConfig, rep: u64) -> Result<McData> {
    let cfg = cfg.clone().validated()?;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, rep, 0));
    let noise = Normal::new(0.0, cfg.error_var.sqrt()).map_err(|e| Error::Numeric {
        context: "benchmark noise".into(),
        detail: e.to_string(),
    })?;
    let n = cfg.n;
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for _ in 0..n {
        let zi: f64 = rng.random_range(0.0..1.0);
        let wi: f64 = rng.random_range(0.0..1.0);
        let e1 = noise.sample(&mut rng);
        let e2 = noise.sample(&mut rng);
        let xi = cfg.load_z * zi + cfg.load_w * wi + e1;
        let yi = cfg.true_structural(xi) + cfg.coef_w4 * wi.powi(4) + e2;
        y.push(yi);
        x.push(xi);
        z.push(zi);
        w.push(wi);
    }
    Ok(McData {
        sample: RegressionSample::synthetic(y, x, z)?,
        w,
    })
}

/// One estimator's result within a comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub estimator: Estimator,
    /// Mean-centered fitted curve on the common grid; `None` on failure.
    pub fitted: Option<Vec<f64>>,
    pub rmse: Option<f64>,
    pub runtime_secs: f64,
    pub error: Option<String>,
}

/// Full benchmark output: shared grid, centered truth, one row per
/// estimator in the order requested.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonResult {
    pub grid: Vec<f64>,
    /// Centered truth curve on the grid.
    pub truth: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
    pub config: SimConfig,
}

impl ComparisonResult {
    pub fn rmse_of(&self, est: Estimator) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.estimator == est)
            .and_then(|r| r.rmse)
    }
}

fn center(curve: &mut [f64]) {
    let m = curve.iter().sum::<f64>() / curve.len() as f64;
    for v in curve.iter_mut() {
        *v -= m;
    }
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Fit one estimator and evaluate it on the grid (uncentered).
fn fit_on_grid(
    est: Estimator,
    data: &McData,
    grid: &[f64],
    cfg: &SimConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let sample = &data.sample;
    match est {
        Estimator::TwoSlsQuadratic => {
            // Instrument powers match the regressor powers.
            let fit = fit_2sls(sample, PolySpec::new(2, true)?, 2)?;
            Ok(fit.predict(grid))
        }
        Estimator::TwoSlsTrue => {
            let fit = fit_2sls_terms(sample, &[3, 4], true, 4)?;
            Ok(fit.predict(grid))
        }
        Estimator::BayesNp => {
            let knots = KnotVector::from_data(&sample.o, 20, 3)?;
            let fit = fit_np(
                sample,
                knots,
                &SplinePriors::default(),
                &MixtureSpec::default(),
                &cfg.mcmc(seed),
            )?;
            Ok(mean_of(&fit.predict_s_draws(grid)))
        }
        Estimator::BayesNpiv => {
            let knots_s = KnotVector::from_data(&sample.o, 20, 3)?;
            let knots_h = KnotVector::from_data(&sample.z, 20, 3)?;
            let fit = fit_npiv(
                sample,
                knots_s,
                knots_h,
                &SplinePriors::default(),
                &MixtureSpec::default(),
                &cfg.mcmc(seed),
            )?;
            Ok(mean_of(&fit.predict_s_draws(grid)))
        }
    }
}

fn mean_of(curves: &[Vec<f64>]) -> Vec<f64> {
    let g = curves[0].len();
    let mut m = vec![0.0; g];
    for c in curves {
        for (mj, cj) in m.iter_mut().zip(c) {
            *mj += cj;
        }
    }
    for mj in &mut m {
        *mj /= curves.len() as f64;
    }
    m
}

/// Run every requested estimator on one generated dataset and score each
/// against the centered analytic truth on the central 98% of observed x.
///
/// Estimators run concurrently; each owns a seed derived from the base seed
/// and its position, so results do not depend on scheduling. A failing
/// estimator contributes an error row instead of aborting the run.
pub fn run_mc_comparison(cfg: &SimConfig) -> Result<ComparisonResult> {
    let cfg = cfg.clone().validated()?;
    let data = generate_mc_data_rep(&cfg, 0)?;

    let mut sorted_x = data.sample.o.clone();
    sorted_x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = quantile_sorted(&sorted_x, 0.01);
    let hi = quantile_sorted(&sorted_x, 0.99);
    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|j| lo + (hi - lo) * j as f64 / (cfg.grid_points - 1) as f64)
        .collect();

    let mut truth: Vec<f64> = grid.iter().map(|&x| cfg.true_structural(x)).collect();
    center(&mut truth);

    let rows: Vec<ComparisonRow> = cfg
        .estimators
        .par_iter()
        .enumerate()
        .map(|(idx, &est)| {
            let started = Instant::now();
            let seed = derive_seed(cfg.seed, 0, 1 + idx as u64);
            let outcome = fit_on_grid(est, &data, &grid, &cfg, seed);
            let runtime_secs = started.elapsed().as_secs_f64();
            match outcome {
                Ok(mut fitted) => {
                    center(&mut fitted);
                    let r = rmse(&fitted, &truth);
                    ComparisonRow {
                        estimator: est,
                        fitted: Some(fitted),
                        rmse: Some(r),
                        runtime_secs,
                        error: None,
                    }
                }
                Err(e) => ComparisonRow {
                    estimator: est,
                    fitted: None,
                    rmse: None,
                    runtime_secs,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(ComparisonResult {
        grid,
        truth,
        rows,
        config: cfg,
    })
}

/// Omitted-variable-bias demonstration.
#[derive(Debug, Clone, Serialize)]
pub struct OvbDemo {
    pub beta: f64,
    pub alpha: f64,
    /// Regression coefficient of the omitted variable on the regressor.
    pub delta: f64,
    /// `beta + delta * alpha`.
    pub predicted_slope: f64,
    pub empirical_slope: f64,
    pub slope_se: f64,
}

/// Regress `q = beta*o + alpha*w + noise` on `o` alone, where
/// `w = delta*o + e`. The fitted slope estimates `beta + delta*alpha`, not
/// `beta`: the regressor picks up the omitted variable's contribution in
/// proportion to their association.
pub fn ovb_demo(n: usize, beta: f64, alpha: f64, delta: f64, seed: u64) -> Result<OvbDemo> {
    if n < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "bias demonstration needs n >= 10000 for a stable slope, got {n}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let norm = Normal::new(0.0, 1.0).expect("unit normal");
    let mut o = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for _ in 0..n {
        let oi: f64 = norm.sample(&mut rng);
        let wi = delta * oi + norm.sample(&mut rng);
        let qi = beta * oi + alpha * wi + norm.sample(&mut rng);
        o.push(oi);
        q.push(qi);
    }
    let sample = RegressionSample::synthetic(q, o.clone(), o)?;
    let fit = fit_pols(&sample, PolySpec::new(1, true)?)?;
    Ok(OvbDemo {
        beta,
        alpha,
        delta,
        predicted_slope: beta + delta * alpha,
        empirical_slope: fit.coef[1],
        slope_se: fit.std_err[1],
    })
}

/// Reverse-causality demonstration on a simultaneous pair.
#[derive(Debug, Clone, Serialize)]
pub struct ReverseCausalityDemo {
    pub beta: f64,
    pub gamma: f64,
    /// `gamma * var(xi) / (1 - beta*gamma)` with unit error variances.
    pub predicted_cov: f64,
    pub empirical_cov: f64,
    pub cov_se: f64,
    pub ols_slope: f64,
    pub slope_se: f64,
}

/// Simulate `q = beta*o + xi` and `o = gamma*q + psi` jointly and report
/// how the feedback correlates the error `xi` with the regressor `o`,
/// which is what biases the least-squares slope.
pub fn reverse_causality_demo(
    n: usize,
    beta: f64,
    gamma: f64,
    seed: u64,
) -> Result<ReverseCausalityDemo> {
    if n < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "bias demonstration needs n >= 10000 for a stable slope, got {n}"
        )));
    }
    let feedback = beta * gamma;
    if feedback.abs() >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "simultaneous system is unstable: |beta*gamma| = {} >= 1",
            feedback.abs()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let norm = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = 1.0 / (1.0 - feedback);
    let mut o = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = norm.sample(&mut rng);
        let p: f64 = norm.sample(&mut rng);
        // Solved form of the simultaneous pair.
        let oi = scale * (gamma * x + p);
        let qi = scale * (beta * p + x);
        o.push(oi);
        q.push(qi);
        xi.push(x);
    }
    let o_mean = o.iter().sum::<f64>() / n as f64;
    let xi_mean = xi.iter().sum::<f64>() / n as f64;
    let prods: Vec<f64> = o
        .iter()
        .zip(&xi)
        .map(|(&oi, &x)| (oi - o_mean) * (x - xi_mean))
        .collect();
    let empirical_cov = prods.iter().sum::<f64>() / (n as f64 - 1.0);
    let prod_var = prods
        .iter()
        .map(|&p| (p - empirical_cov).powi(2))
        .sum::<f64>()
        / (n as f64 - 1.0);
    let cov_se = (prod_var / n as f64).sqrt();

    let sample = RegressionSample::synthetic(q, o.clone(), o)?;
    let fit = fit_pols(&sample, PolySpec::new(1, true)?)?;
    Ok(ReverseCausalityDemo {
        beta,
        gamma,
        predicted_cov: gamma / (1.0 - feedback),
        empirical_cov,
        cov_se,
        ols_slope: fit.coef[1],
        slope_se: fit.std_err[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_curve_values() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.true_structural(0.0), 0.0);
        // -40/16 + 40/8 = 2.5 at x = 0.5.
        assert!((cfg.true_structural(0.5) - 2.5).abs() < 1e-12);
        assert!((cfg.true_structural(1.0) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn generated_data_is_deterministic_and_shaped() {
        let cfg = SimConfig {
            n: 500,
            seed: 99,
            ..SimConfig::default()
        };
        let a = generate_mc_data(&cfg).unwrap();
        let b = generate_mc_data(&cfg).unwrap();
        assert_eq!(a.sample.q, b.sample.q);
        assert_eq!(a.sample.o, b.sample.o);
        assert_eq!(a.sample.z, b.sample.z);
        assert_eq!(a.w, b.w);
        assert_eq!(a.w.len(), 500);
        let c = generate_mc_data(&SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.sample.q, c.sample.q);
        // Ranges: z, w in [0,1); x centered near 3.5/2 + 2.1/2 = 2.8.
        assert!(a.sample.z.iter().all(|&z| (0.0..1.0).contains(&z)));
        assert!(a.w.iter().all(|&w| (0.0..1.0).contains(&w)));
        let x_mean = a.sample.o.iter().sum::<f64>() / 500.0;
        assert!((x_mean - 2.8).abs() < 0.2, "x mean {x_mean}");
    }

    #[test]
    fn confounder_mean_matches_uniform_moment() {
        // E[30 w^4] = 30/5 = 6 is the constant absorbed by centering.
        let cfg = SimConfig {
            n: 60_000,
            seed: 5,
            ..SimConfig::default()
        };
        let data = generate_mc_data(&cfg).unwrap();
        let m = data.w.iter().map(|&w| 30.0 * w.powi(4)).sum::<f64>() / 60_000.0;
        assert!((m - 6.0).abs() < 0.15, "mean {m}");
    }

    #[test]
    fn seed_streams_are_disjoint() {
        let s = derive_seed(7, 0, 0);
        assert_eq!(s, derive_seed(7, 0, 0));
        assert_ne!(s, derive_seed(7, 0, 1));
        assert_ne!(s, derive_seed(7, 1, 0));
        assert_ne!(derive_seed(7, 1, 2), derive_seed(7, 2, 1));
    }

    #[test]
    fn comparison_runs_fast_estimators() {
        let cfg = SimConfig {
            n: 2_000,
            seed: 3,
            estimators: vec![Estimator::TwoSlsQuadratic, Estimator::TwoSlsTrue],
            grid_points: 50,
            ..SimConfig::default()
        };
        let result = run_mc_comparison(&cfg).unwrap();
        assert_eq!(result.rows.len(), 2);
        assert_eq!(result.grid.len(), 50);
        let truth_mean: f64 = result.truth.iter().sum::<f64>() / 50.0;
        assert!(truth_mean.abs() < 1e-9, "truth must be centered");
        for row in &result.rows {
            assert!(row.error.is_none(), "{:?}: {:?}", row.estimator, row.error);
            assert!(row.rmse.unwrap().is_finite());
            assert!(row.runtime_secs >= 0.0);
            let f = row.fitted.as_ref().unwrap();
            assert_eq!(f.len(), 50);
            let fm: f64 = f.iter().sum::<f64>() / 50.0;
            assert!(fm.abs() < 1e-9, "fitted curves must be centered");
        }
        // The correctly specified model dominates the misspecified quadratic.
        let r_true = result.rmse_of(Estimator::TwoSlsTrue).unwrap();
        let r_quad = result.rmse_of(Estimator::TwoSlsQuadratic).unwrap();
        assert!(r_true < r_quad, "true {r_true} vs quadratic {r_quad}");
    }

    #[test]
    fn comparison_is_deterministic() {
        let cfg = SimConfig {
            n: 1_500,
            seed: 8,
            estimators: vec![Estimator::TwoSlsTrue],
            grid_points: 40,
            ..SimConfig::default()
        };
        let a = run_mc_comparison(&cfg).unwrap();
        let b = run_mc_comparison(&cfg).unwrap();
        assert_eq!(a.rows[0].fitted, b.rows[0].fitted);
        assert_eq!(a.rows[0].rmse, b.rows[0].rmse);
    }

    #[test]
    fn omitted_variable_bias_matches_formula() {
        let demo = ovb_demo(40_000, 3.0, 2.0, 0.8, 31).unwrap();
        assert!((demo.predicted_slope - 4.6).abs() < 1e-12);
        assert!(
            (demo.empirical_slope - demo.predicted_slope).abs() < 3.0 * demo.slope_se,
            "slope {} vs {}",
            demo.empirical_slope,
            demo.predicted_slope
        );

        let clean = ovb_demo(40_000, 3.0, 0.0, 0.8, 32).unwrap();
        assert!((clean.empirical_slope - 3.0).abs() < 3.0 * clean.slope_se);

        // Opposite signs of the loading and the effect bias the slope down.
        let neg = ovb_demo(40_000, 3.0, 2.0, -0.8, 33).unwrap();
        assert!(neg.empirical_slope < 3.0);
    }

    #[test]
    fn reverse_causality_matches_solved_system() {
        let demo = reverse_causality_demo(40_000, 0.5, 0.5, 41).unwrap();
        let want = 0.5 / 0.75;
        assert!((demo.predicted_cov - want).abs() < 1e-12);
        assert!(
            (demo.empirical_cov - want).abs() < 3.0 * demo.cov_se,
            "cov {} vs {want} (se {})",
            demo.empirical_cov,
            demo.cov_se
        );
        assert!(demo.empirical_cov > 0.0);
        // Feedback pushes the least-squares slope off beta.
        assert!((demo.ols_slope - 0.5).abs() > 3.0 * demo.slope_se);

        let none = reverse_causality_demo(40_000, 0.5, 0.0, 42).unwrap();
        assert!(none.empirical_cov.abs() < 3.0 * none.cov_se);
        assert!((none.ols_slope - 0.5).abs() < 3.0 * none.slope_se);

        assert!(reverse_causality_demo(40_000, 2.0, 0.5, 43).is_err());
    }
}
