//! Gibbs samplers for the flow curve: an instrumented fit that models the
//! occupancy and flow errors jointly, and an exogenous fit that ignores the
//! instrument.
//!
//! The instrumented model is
//!
//! ```text
//! q_i = S(o_i) + e2_i        (flow on occupancy, penalized spline)
//! o_i = h(z_i) + e1_i        (occupancy on instrument, penalized spline)
//! (e1_i, e2_i) ~ truncated stick-breaking mixture of bivariate Gaussians
//! ```
//!
//! Dependence between `e1` and `e2` inside mixture components is what
//! carries the endogeneity correction: conditioning the flow equation on the
//! realized occupancy error shifts `q` by the component regression of `e2`
//! on `e1`. Every block update below is conjugate.
//!
//! Intercept identification: a constant can move freely between the spline
//! level and the mixture mean, so after each sweep the weight-averaged
//! mixture mean is transferred into the spline coefficients. The basis sums
//! to one at every point, which makes the transfer exact.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RegressionSample;
use crate::mixture::{
    update_assignments, update_assignments_margin, update_components, update_components_margin,
    update_sticks_and_concentration, update_sticks_and_concentration_margin, MarginState,
    MixtureDraw, MixturePrior, MixtureState, DEFAULT_TRUNCATION,
};
use crate::splines::{Design, KnotVector, PenaltyMatrix};
use crate::summary::{simultaneous_band, CurveBand};

/// Sweep counts and output controls for one sampler run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total Gibbs sweeps, including burn-in.
    pub draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Evaluation grid size for retained curves.
    pub grid_points: usize,
    pub seed: u64,
    /// Band miscoverage level; 0.05 gives 95% bands.
    pub delta: f64,
}

impl McmcConfig {
    /// Full-length run for final results.
    pub fn paper(seed: u64) -> Self {
        McmcConfig {
            draws: 50_000,
            burn_in: 15_000,
            thin: 10,
            grid_points: 200,
            seed,
            delta: 0.05,
        }
    }

    /// Short run for iteration and tests.
    pub fn desk(seed: u64) -> Self {
        McmcConfig {
            draws: 5_000,
            burn_in: 1_000,
            thin: 4,
            grid_points: 200,
            seed,
            delta: 0.05,
        }
    }

    /// Heavier thinning for repeated simulation fits.
    pub fn mc_paper(seed: u64) -> Self {
        McmcConfig {
            draws: 40_000,
            burn_in: 10_000,
            thin: 40,
            grid_points: 200,
            seed,
            delta: 0.05,
        }
    }

    /// Number of retained draws: sweep `s` (0-based) is kept when
    /// `s >= burn_in` and `(s - burn_in + 1)` is a multiple of `thin`.
    pub fn retained(&self) -> usize {
        (self.draws.saturating_sub(self.burn_in)) / self.thin
    }

    pub fn validated(self) -> Result<Self> {
        if self.draws <= self.burn_in {
            return Err(Error::Config(format!(
                "draws {} must exceed burn-in {}",
                self.draws, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        if self.retained() < 100 {
            return Err(Error::Config(format!(
                "configuration retains only {} draws; at least 100 are needed for stable bands",
                self.retained()
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid needs at least 2 points".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "band level delta {} outside (0, 1)",
                self.delta
            )));
        }
        Ok(self)
    }
}

/// Smoothness and intercept priors shared by both spline blocks.
///
/// Each penalty weight follows `tau^2 ~ InvGamma(tau_shape, tau_rate)`; the
/// small rate keeps the prior diffuse so the data set the smoothness. The
/// penalty null space (level and trend) gets an almost-flat Gaussian prior
/// with variance `intercept_var`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplinePriors {
    pub tau_shape: f64,
    pub tau_rate: f64,
    pub intercept_var: f64,
    /// Difference order of the roughness penalty.
    pub penalty_order: usize,
}

impl Default for SplinePriors {
    fn default() -> Self {
        SplinePriors {
            tau_shape: 1.0,
            tau_rate: 0.005,
            intercept_var: 1e6,
            penalty_order: 2,
        }
    }
}

impl SplinePriors {
    pub fn validated(self) -> Result<Self> {
        if !(self.tau_shape > 0.0 && self.tau_rate > 0.0 && self.intercept_var > 0.0) {
            return Err(Error::Config(
                "spline prior hyperparameters must be positive".into(),
            ));
        }
        if self.penalty_order == 0 {
            return Err(Error::Config("penalty order must be at least 1".into()));
        }
        Ok(self)
    }
}

/// How to set the inverse-Wishart scale for the error mixture.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum CovScale {
    /// Diagonal of the residual variances from the penalized least-squares
    /// initialization. Adapts the prior to the data's units.
    FromResiduals,
    /// Explicit scale matrix.
    Fixed([[f64; 2]; 2]),
}

/// Error-mixture prior with the scale left symbolic until data arrive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub mu0: [f64; 2],
    /// Prior precision multiplier on component means.
    pub tau: f64,
    /// Inverse-Wishart shape; must exceed 1.
    pub shape: f64,
    pub cov_scale: CovScale,
    pub zeta_shape: f64,
    pub zeta_rate: f64,
    pub truncation: usize,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            mu0: [0.0, 0.0],
            tau: 1.0,
            shape: 4.0,
            cov_scale: CovScale::FromResiduals,
            zeta_shape: 1.0,
            zeta_rate: 1.0,
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

impl MixtureSpec {
    /// Concrete bivariate prior given initialization residual variances.
    fn resolve(&self, v1: f64, v2: f64) -> Result<MixturePrior> {
        let scale = match self.cov_scale {
            CovScale::FromResiduals => [[v1, 0.0], [0.0, v2]],
            CovScale::Fixed(s) => s,
        };
        MixturePrior {
            mu0: self.mu0,
            tau: self.tau,
            shape: self.shape,
            scale,
            zeta_shape: self.zeta_shape,
            zeta_rate: self.zeta_rate,
            truncation: self.truncation,
        }
        .validated()
    }
}

/// Retained posterior draws from either sampler.
///
/// Curves are stored draw-major: `s_curves[d][j]` is draw `d` evaluated at
/// `grid_s[j]`. First-stage fields are `None` for the exogenous fit.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub grid_s: Vec<f64>,
    pub s_curves: Vec<Vec<f64>>,
    pub grid_h: Option<Vec<f64>>,
    pub h_curves: Option<Vec<Vec<f64>>>,
    /// Flow-spline coefficients per draw.
    pub beta: Vec<Vec<f64>>,
    /// First-stage coefficients per draw.
    pub gamma: Option<Vec<Vec<f64>>>,
    pub tau2_s: Vec<f64>,
    pub tau2_h: Option<Vec<f64>>,
    pub mixture: Vec<MixtureDraw>,
    /// Error pairs `(e1, e2)` per draw; `e1` is zero for the exogenous fit.
    pub residuals: Vec<Vec<[f64; 2]>>,
    pub knots_s: KnotVector,
    pub knots_h: Option<KnotVector>,
    pub config: McmcConfig,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.s_curves.len()
    }

    /// Posterior mean of the flow curve on `grid_s`.
    pub fn mean_s_curve(&self) -> Vec<f64> {
        mean_curve(&self.s_curves)
    }

    /// Simultaneous band for the flow curve at the configured level.
    pub fn structural_band(&self) -> Result<CurveBand> {
        simultaneous_band(&self.grid_s, &self.s_curves, self.config.delta)
    }

    /// Simultaneous band for the first-stage curve, when it exists.
    pub fn first_stage_band(&self) -> Result<Option<CurveBand>> {
        match (&self.grid_h, &self.h_curves) {
            (Some(grid), Some(curves)) => {
                Ok(Some(simultaneous_band(grid, curves, self.config.delta)?))
            }
            _ => Ok(None),
        }
    }

    /// Evaluate every retained flow curve at arbitrary points.
    pub fn predict_s_draws(&self, xs: &[f64]) -> Vec<Vec<f64>> {
        let design = Design::new(&self.knots_s, xs);
        self.beta
            .iter()
            .map(|b| design.predict(&DVector::from_column_slice(b)))
            .collect()
    }
}

fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.len().max(1) as f64;
    let g = curves.first().map(Vec::len).unwrap_or(0);
    let mut m = vec![0.0; g];
    for c in curves {
        for (mj, &cj) in m.iter_mut().zip(c) {
            *mj += cj;
        }
    }
    for mj in &mut m {
        *mj /= n;
    }
    m
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

/// Add the smoothness and level priors to a cross-product matrix in place.
fn add_priors(xtwx: &mut DMatrix<f64>, penalty: &PenaltyMatrix, tau2: f64, intercept_var: f64) {
    let k = penalty.matrix();
    let ridge = 1.0 / intercept_var;
    let inv_tau2 = 1.0 / tau2;
    for j in 0..xtwx.ncols() {
        for i in 0..xtwx.nrows() {
            xtwx[(i, j)] += k[(i, j)] * inv_tau2;
        }
        xtwx[(j, j)] += ridge;
    }
}

/// Posterior mean and precision of a Gaussian coefficient block.
///
/// For weights `w`, targets `t`, penalty `K`, and ridge `1/intercept_var`,
/// the precision is `X'WX + K/tau2 + I/intercept_var` and the mean solves
/// `precision * mean = X'Wt`. This is the exact quantity the samplers draw
/// from; it is exposed so fits can be checked against direct linear algebra.
pub fn gaussian_block_moments(
    design: &Design,
    weights: &[f64],
    targets: &[f64],
    penalty: &PenaltyMatrix,
    tau2: f64,
    intercept_var: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if weights.len() != design.n_rows() || targets.len() != design.n_rows() {
        return Err(Error::InvalidArgument(
            "weights and targets must match the design rows".into(),
        ));
    }
    if penalty.dim() != design.dim() {
        return Err(Error::InvalidArgument(
            "penalty dimension must match the design".into(),
        ));
    }
    let p = design.dim();
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwt = DVector::zeros(p);
    design.weighted_normal_eqs(weights, targets, &mut xtwx, &mut xtwt);
    add_priors(&mut xtwx, penalty, tau2, intercept_var);
    let chol = cholesky_with_jitter(&xtwx, "block moments")?;
    let mean = chol.solve(&xtwt);
    Ok((mean.iter().copied().collect(), xtwx))
}

/// Cholesky with escalating diagonal jitter for near-singular precisions.
fn cholesky_with_jitter(q: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(q.clone()) {
        return Ok(ch);
    }
    let scale = q.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    for _ in 0..4 {
        let mut qj = q.clone();
        for i in 0..qj.nrows() {
            qj[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(qj) {
            return Ok(ch);
        }
        jitter *= 100.0;
    }
    Err(Error::Numeric {
        context: context.into(),
        detail: "coefficient precision is not positive definite".into(),
    })
}

/// Draw from `N(Q^{-1} l, Q^{-1})` given assembled `Q` and `l`.
fn sample_gaussian_block(
    xtwx: &DMatrix<f64>,
    xtwt: &DVector<f64>,
    rng: &mut ChaCha20Rng,
    context: &str,
) -> Result<DVector<f64>> {
    let chol = cholesky_with_jitter(xtwx, context)?;
    let mean = chol.solve(xtwt);
    let z = DVector::from_iterator(
        xtwt.len(),
        (0..xtwt.len()).map(|_| -> f64 { StandardNormal.sample(rng) }),
    );
    // Q = LL'; solving L' x = z gives x with covariance Q^{-1}.
    let noise = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numeric {
            context: context.into(),
            detail: "triangular solve failed".into(),
        })?;
    Ok(mean + noise)
}

/// Penalized least squares at unit penalty weight, for initialization.
fn penalized_ls(
    design: &Design,
    y: &[f64],
    penalty: &PenaltyMatrix,
    intercept_var: f64,
) -> Result<DVector<f64>> {
    let ones = vec![1.0; y.len()];
    let (mean, _) = gaussian_block_moments(design, &ones, y, penalty, 1.0, intercept_var)?;
    Ok(DVector::from_vec(mean))
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|&x| (x - mean).powi(2)).sum();
    (ss / (n - 1.0).max(1.0)).max(1e-12)
}

/// Conjugate penalty-weight draw: `InvGamma(shape + rank/2, rate + quad/2)`.
fn sample_tau2(
    penalty: &PenaltyMatrix,
    coef: &DVector<f64>,
    priors: &SplinePriors,
    rng: &mut ChaCha20Rng,
) -> Result<f64> {
    let shape = priors.tau_shape + penalty.rank() as f64 / 2.0;
    let rate = priors.tau_rate + penalty.quad_form(coef) / 2.0;
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numeric {
        context: "penalty weight update".into(),
        detail: e.to_string(),
    })?;
    let draw: f64 = g.sample(rng);
    if !(draw > 0.0) {
        return Err(Error::Numeric {
            context: "penalty weight update".into(),
            detail: "gamma draw underflowed to zero".into(),
        });
    }
    Ok(1.0 / draw)
}

struct RetentionPlan {
    burn_in: usize,
    thin: usize,
}

impl RetentionPlan {
    fn keep(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

/// Per-component conditional regression parameters, refreshed once a sweep.
struct CompCache {
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    /// Regression slope of e2 on e1 within the component.
    slope: Vec<f64>,
    /// Conditional variance of e2 given e1.
    cvar: Vec<f64>,
    /// Elements of the component precision matrix used by the first stage.
    omega11: Vec<f64>,
    omega12: Vec<f64>,
}

impl CompCache {
    fn new(h: usize) -> Self {
        CompCache {
            mu1: vec![0.0; h],
            mu2: vec![0.0; h],
            slope: vec![0.0; h],
            cvar: vec![0.0; h],
            omega11: vec![0.0; h],
            omega12: vec![0.0; h],
        }
    }

    fn refresh(&mut self, state: &MixtureState) {
        for (c, comp) in state.comps.iter().enumerate() {
            let cond = comp.conditional(0.0);
            let s11 = comp.cov[0][0];
            let b = comp.cov[0][1] / s11;
            let v = cond.var;
            self.mu1[c] = comp.mean[0];
            self.mu2[c] = comp.mean[1];
            self.slope[c] = b;
            self.cvar[c] = v;
            self.omega11[c] = 1.0 / s11 + b * b / v;
            self.omega12[c] = -b / v;
        }
    }
}

/// Instrumented fit: flow and first-stage curves with a joint error mixture.
pub fn fit_npiv(
    sample: &RegressionSample,
    knots_s: KnotVector,
    knots_h: KnotVector,
    priors: &SplinePriors,
    mixture: &MixtureSpec,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    let config = config.clone().validated()?;
    let priors = priors.clone().validated()?;
    let n = sample.len();
    let mut warnings = Vec::new();

    let design_s = Design::new(&knots_s, &sample.o);
    let design_h = Design::new(&knots_h, &sample.z);
    for (name, d) in [("occupancy", &design_s), ("instrument", &design_h)] {
        if d.clamped() > 0 {
            warnings.push(format!(
                "{} values outside the knot span for {} rows; basis evaluated at the boundary",
                d.clamped(),
                name
            ));
        }
    }
    let penalty_s = PenaltyMatrix::new(design_s.dim(), priors.penalty_order)?;
    let penalty_h = PenaltyMatrix::new(design_h.dim(), priors.penalty_order)?;

    let mut beta = penalized_ls(&design_s, &sample.q, &penalty_s, priors.intercept_var)?;
    let mut gamma = penalized_ls(&design_h, &sample.o, &penalty_h, priors.intercept_var)?;
    let mut eps1: Vec<f64> = (0..n)
        .map(|i| sample.o[i] - design_h.predict_one(i, &gamma))
        .collect();
    let mut eps2: Vec<f64> = (0..n)
        .map(|i| sample.q[i] - design_s.predict_one(i, &beta))
        .collect();
    let prior = mixture.resolve(sample_variance(&eps1), sample_variance(&eps2))?;
    let mut state = MixtureState::init(n, &prior);

    let (s_lo, s_hi) = knots_s.bounds();
    let (h_lo, h_hi) = knots_h.bounds();
    let grid_s = linspace(s_lo, s_hi, config.grid_points);
    let grid_h = linspace(h_lo, h_hi, config.grid_points);
    let grid_design_s = Design::new(&knots_s, &grid_s);
    let grid_design_h = Design::new(&knots_h, &grid_h);

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut tau2_s = 1.0;
    let mut tau2_h = 1.0;
    let mut cache = CompCache::new(state.truncation());

    let plan = RetentionPlan {
        burn_in: config.burn_in,
        thin: config.thin,
    };
    let retained = config.retained();
    let mut out = PosteriorDraws {
        grid_s,
        s_curves: Vec::with_capacity(retained),
        grid_h: Some(grid_h),
        h_curves: Some(Vec::with_capacity(retained)),
        beta: Vec::with_capacity(retained),
        gamma: Some(Vec::with_capacity(retained)),
        tau2_s: Vec::with_capacity(retained),
        tau2_h: Some(Vec::with_capacity(retained)),
        mixture: Vec::with_capacity(retained),
        residuals: Vec::with_capacity(retained),
        knots_s,
        knots_h: Some(knots_h),
        config: config.clone(),
        warnings: Vec::new(),
    };

    let ph = design_h.dim();
    let ps = design_s.dim();
    let mut xtwx_h = DMatrix::zeros(ph, ph);
    let mut xtwt_h = DVector::zeros(ph);
    let mut xtwx_s = DMatrix::zeros(ps, ps);
    let mut xtwt_s = DVector::zeros(ps);
    let mut w = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut pairs = vec![[0.0f64; 2]; n];

    for sweep in 0..config.draws {
        cache.refresh(&state);

        // First-stage coefficients. The full conditional sees both the
        // occupancy equation and the feedback of e1 into the flow equation
        // through the joint error density.
        for i in 0..n {
            let c = state.assign[i];
            let o11 = cache.omega11[c];
            let o12 = cache.omega12[c];
            let num = o11 * (sample.o[i] - cache.mu1[c]) + o12 * (eps2[i] - cache.mu2[c]);
            w[i] = o11;
            t[i] = num / o11;
        }
        design_h.weighted_normal_eqs(&w, &t, &mut xtwx_h, &mut xtwt_h);
        add_priors(&mut xtwx_h, &penalty_h, tau2_h, priors.intercept_var);
        gamma = sample_gaussian_block(&xtwx_h, &xtwt_h, &mut rng, "first-stage coefficients")
            .map_err(|e| sweep_error(sweep, "first stage", e))?;
        for i in 0..n {
            eps1[i] = sample.o[i] - design_h.predict_one(i, &gamma);
        }

        // Flow coefficients given the realized first-stage errors: each
        // observation's flow is shifted by the component-conditional mean of
        // e2 given e1 and weighted by the conditional precision.
        for i in 0..n {
            let c = state.assign[i];
            let shift = cache.mu2[c] + cache.slope[c] * (eps1[i] - cache.mu1[c]);
            w[i] = 1.0 / cache.cvar[c];
            t[i] = sample.q[i] - shift;
        }
        design_s.weighted_normal_eqs(&w, &t, &mut xtwx_s, &mut xtwt_s);
        add_priors(&mut xtwx_s, &penalty_s, tau2_s, priors.intercept_var);
        beta = sample_gaussian_block(&xtwx_s, &xtwt_s, &mut rng, "flow coefficients")
            .map_err(|e| sweep_error(sweep, "flow curve", e))?;
        for i in 0..n {
            eps2[i] = sample.q[i] - design_s.predict_one(i, &beta);
        }

        for i in 0..n {
            pairs[i] = [eps1[i], eps2[i]];
        }
        update_assignments(&pairs, &mut state, &mut rng)
            .map_err(|e| sweep_error(sweep, "mixture assignments", e))?;
        update_components(&pairs, &mut state, &prior, &mut rng)
            .map_err(|e| sweep_error(sweep, "mixture components", e))?;
        update_sticks_and_concentration(&mut state, &prior, &mut rng);

        tau2_s = sample_tau2(&penalty_s, &beta, &priors, &mut rng)
            .map_err(|e| sweep_error(sweep, "flow penalty", e))?;
        tau2_h = sample_tau2(&penalty_h, &gamma, &priors, &mut rng)
            .map_err(|e| sweep_error(sweep, "first-stage penalty", e))?;

        // Transfer the mixture's marginal mean into the spline levels.
        let m = state.marginal_mean();
        state.shift_means(m);
        for g in gamma.iter_mut() {
            *g += m[0];
        }
        for b in beta.iter_mut() {
            *b += m[1];
        }
        for i in 0..n {
            eps1[i] -= m[0];
            eps2[i] -= m[1];
            pairs[i] = [eps1[i], eps2[i]];
        }

        if plan.keep(sweep) {
            out.s_curves.push(grid_design_s.predict(&beta));
            out.h_curves
                .as_mut()
                .expect("joint fit stores first-stage curves")
                .push(grid_design_h.predict(&gamma));
            out.beta.push(beta.iter().copied().collect());
            out.gamma
                .as_mut()
                .expect("joint fit stores first-stage coefficients")
                .push(gamma.iter().copied().collect());
            out.tau2_s.push(tau2_s);
            out.tau2_h
                .as_mut()
                .expect("joint fit stores first-stage penalties")
                .push(tau2_h);
            out.mixture.push(MixtureDraw::from_joint(&state));
            out.residuals.push(pairs.clone());
        }
    }

    debug_assert_eq!(out.s_curves.len(), retained);
    out.warnings = warnings;
    Ok(out)
}

/// Exogenous fit: the flow curve alone, with a univariate error mixture.
///
/// This deliberately ignores the instrument, so any simultaneity in the data
/// biases it; it exists as the comparison point for the instrumented fit.
pub fn fit_np(
    sample: &RegressionSample,
    knots_s: KnotVector,
    priors: &SplinePriors,
    mixture: &MixtureSpec,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    let config = config.clone().validated()?;
    let priors = priors.clone().validated()?;
    let n = sample.len();
    let mut warnings = Vec::new();

    let design_s = Design::new(&knots_s, &sample.o);
    if design_s.clamped() > 0 {
        warnings.push(format!(
            "{} occupancy values outside the knot span; basis evaluated at the boundary",
            design_s.clamped()
        ));
    }
    let penalty_s = PenaltyMatrix::new(design_s.dim(), priors.penalty_order)?;

    let mut beta = penalized_ls(&design_s, &sample.q, &penalty_s, priors.intercept_var)?;
    let mut eps2: Vec<f64> = (0..n)
        .map(|i| sample.q[i] - design_s.predict_one(i, &beta))
        .collect();
    let prior = mixture
        .resolve(1.0, sample_variance(&eps2))?
        .margin();
    let mut state = MarginState::init(n, &prior);

    let (s_lo, s_hi) = knots_s.bounds();
    let grid_s = linspace(s_lo, s_hi, config.grid_points);
    let grid_design_s = Design::new(&knots_s, &grid_s);

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut tau2_s = 1.0;

    let plan = RetentionPlan {
        burn_in: config.burn_in,
        thin: config.thin,
    };
    let retained = config.retained();
    let mut out = PosteriorDraws {
        grid_s,
        s_curves: Vec::with_capacity(retained),
        grid_h: None,
        h_curves: None,
        beta: Vec::with_capacity(retained),
        gamma: None,
        tau2_s: Vec::with_capacity(retained),
        tau2_h: None,
        mixture: Vec::with_capacity(retained),
        residuals: Vec::with_capacity(retained),
        knots_s,
        knots_h: None,
        config: config.clone(),
        warnings: Vec::new(),
    };

    let ps = design_s.dim();
    let mut xtwx = DMatrix::zeros(ps, ps);
    let mut xtwt = DVector::zeros(ps);
    let mut w = vec![0.0; n];
    let mut t = vec![0.0; n];

    for sweep in 0..config.draws {
        for i in 0..n {
            let c = state.assign[i];
            let comp = state.comps[c];
            w[i] = 1.0 / comp.var;
            t[i] = sample.q[i] - comp.mean;
        }
        design_s.weighted_normal_eqs(&w, &t, &mut xtwx, &mut xtwt);
        add_priors(&mut xtwx, &penalty_s, tau2_s, priors.intercept_var);
        beta = sample_gaussian_block(&xtwx, &xtwt, &mut rng, "flow coefficients")
            .map_err(|e| sweep_error(sweep, "flow curve", e))?;
        for i in 0..n {
            eps2[i] = sample.q[i] - design_s.predict_one(i, &beta);
        }

        update_assignments_margin(&eps2, &mut state, &mut rng)
            .map_err(|e| sweep_error(sweep, "mixture assignments", e))?;
        update_components_margin(&eps2, &mut state, &prior, &mut rng)
            .map_err(|e| sweep_error(sweep, "mixture components", e))?;
        update_sticks_and_concentration_margin(&mut state, &prior, &mut rng);

        tau2_s = sample_tau2(&penalty_s, &beta, &priors, &mut rng)
            .map_err(|e| sweep_error(sweep, "flow penalty", e))?;

        let m = state.marginal_mean();
        state.shift_means(m);
        for b in beta.iter_mut() {
            *b += m;
        }
        for e in eps2.iter_mut() {
            *e -= m;
        }

        if plan.keep(sweep) {
            out.s_curves.push(grid_design_s.predict(&beta));
            out.beta.push(beta.iter().copied().collect());
            out.tau2_s.push(tau2_s);
            out.mixture.push(MixtureDraw::from_margin(&state));
            out.residuals.push(eps2.iter().map(|&e| [0.0, e]).collect());
        }
    }

    debug_assert_eq!(out.s_curves.len(), retained);
    out.warnings = warnings;
    Ok(out)
}

fn sweep_error(sweep: usize, block: &'static str, err: Error) -> Error {
    Error::Diverged {
        sweep,
        block,
        detail: err.to_string(),
    }
}
