//! Truncated Dirichlet process mixture of Gaussians for regression errors.
//!
//! The error density is a stick-breaking mixture truncated at `H` sticks,
//!
//! ```text
//! (e1, e2) ~ sum_c pi_c N(mu_c, Sigma_c),    pi_c = v_c prod_{j<c} (1 - v_j),
//! v_c ~ Beta(1, zeta)  (c < H),  v_H = 1,    zeta ~ Gamma(a, b),
//! ```
//!
//! with a conjugate normal-inverse-Wishart base measure
//!
//! ```text
//! mu | Sigma ~ N(mu0, Sigma / tau),   Sigma ~ IW(shape s, scale S).
//! ```
//!
//! The inverse-Wishart is parameterized so that `E[Sigma] = S / (s - 1)`
//! holds in every dimension used here (effective degrees of freedom
//! `s + dim`), which is why `s > 1` is required. All updates are blocked
//! Gibbs steps: component assignment by multinomial sampling over log
//! weights, component moments from the conjugate posterior, sticks from
//! Beta full conditionals, and the concentration from its Gamma conjugate.
//!
//! A univariate variant of the same family covers the exogenous fit, where
//! the first-stage residual is identically zero and only the flow-equation
//! error margin is modeled.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Truncation level used when no override is configured.
pub const DEFAULT_TRUNCATION: usize = 25;

/// Prior for the bivariate mixture with a concrete inverse-Wishart scale.
#[derive(Debug, Clone)]
pub struct MixturePrior {
    pub mu0: [f64; 2],
    /// Prior precision multiplier on the component mean.
    pub tau: f64,
    /// Inverse-Wishart shape; the mean `scale / (shape - 1)` needs `> 1`.
    pub shape: f64,
    pub scale: [[f64; 2]; 2],
    pub zeta_shape: f64,
    pub zeta_rate: f64,
    pub truncation: usize,
}

impl MixturePrior {
    pub fn validated(self) -> Result<Self> {
        if self.truncation < 2 {
            return Err(Error::InvalidArgument(
                "mixture truncation must be at least 2".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(
                "mean precision multiplier tau must be positive".into(),
            ));
        }
        if !(self.shape > 1.0) {
            return Err(Error::InvalidArgument(
                "inverse-Wishart shape must exceed 1 for the mean to exist".into(),
            ));
        }
        if !(self.zeta_shape > 0.0 && self.zeta_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "concentration Gamma hyperparameters must be positive".into(),
            ));
        }
        let s = &self.scale;
        let sym = (s[0][1] - s[1][0]).abs() <= 1e-12 * (1.0 + s[0][1].abs());
        let spd = s[0][0] > 0.0 && s[0][0] * s[1][1] - s[0][1] * s[1][0] > 0.0;
        if !sym || !spd {
            return Err(Error::InvalidArgument(
                "inverse-Wishart scale must be symmetric positive definite".into(),
            ));
        }
        Ok(self)
    }

    /// Univariate margin of the base measure for the flow-error component.
    pub fn margin(&self) -> MarginPrior {
        MarginPrior {
            mu0: self.mu0[1],
            tau: self.tau,
            shape: self.shape,
            scale: self.scale[1][1],
            zeta_shape: self.zeta_shape,
            zeta_rate: self.zeta_rate,
            truncation: self.truncation,
        }
    }
}

/// Univariate counterpart of [`MixturePrior`].
#[derive(Debug, Clone)]
pub struct MarginPrior {
    pub mu0: f64,
    pub tau: f64,
    pub shape: f64,
    pub scale: f64,
    pub zeta_shape: f64,
    pub zeta_rate: f64,
    pub truncation: usize,
}

/// One bivariate Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub mean: [f64; 2],
    /// Symmetric covariance entries: [[s11, s12], [s12, s22]].
    pub cov: [[f64; 2]; 2],
}

/// Conditional moments of `e2` given an observed `e1` within one component.
#[derive(Debug, Clone, Copy)]
pub struct CondMoments {
    pub mean: f64,
    pub var: f64,
}

impl Component {
    /// Gaussian conditioning of the second coordinate on the first:
    /// mean `m2 + (s12/s11)(e1 - m1)`, variance `s22 - s12^2/s11`.
    pub fn conditional(&self, e1: f64) -> CondMoments {
        let s11 = self.cov[0][0];
        let s12 = self.cov[0][1];
        let s22 = self.cov[1][1];
        let slope = s12 / s11;
        let var = (s22 - s12 * slope).max(1e-12 * s22.max(f64::MIN_POSITIVE));
        CondMoments {
            mean: self.mean[1] + slope * (e1 - self.mean[0]),
            var,
        }
    }

    fn chol(&self) -> Option<Chol2> {
        chol2(self.cov)
    }
}

/// One univariate Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginComponent {
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Copy)]
struct Chol2 {
    l11: f64,
    l21: f64,
    l22: f64,
}

fn chol2(cov: [[f64; 2]; 2]) -> Option<Chol2> {
    if !(cov[0][0] > 0.0) {
        return None;
    }
    let l11 = cov[0][0].sqrt();
    let l21 = cov[0][1] / l11;
    let rest = cov[1][1] - l21 * l21;
    if !(rest > 0.0) {
        return None;
    }
    Some(Chol2 {
        l11,
        l21,
        l22: rest.sqrt(),
    })
}

const LOG_2PI: f64 = 1.8378770664093453;

impl Chol2 {
    fn log_density(&self, d1: f64, d2: f64) -> f64 {
        let u1 = d1 / self.l11;
        let u2 = (d2 - self.l21 * u1) / self.l22;
        -LOG_2PI - (self.l11 * self.l22).ln() - 0.5 * (u1 * u1 + u2 * u2)
    }
}

/// Mixture state for the bivariate error model.
#[derive(Debug, Clone)]
pub struct MixtureState {
    pub comps: Vec<Component>,
    /// Stick variables; the final entry is pinned at 1 by truncation.
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    /// Component index per observation.
    pub assign: Vec<usize>,
    pub zeta: f64,
}

impl MixtureState {
    /// Deterministic start: every observation in the first component, prior
    /// mean moments everywhere, uniform weights, unit concentration.
    pub fn init(n_obs: usize, prior: &MixturePrior) -> MixtureState {
        let h = prior.truncation;
        let prior_cov = scale_mat2(prior.scale, 1.0 / (prior.shape - 1.0));
        let comps = vec![
            Component {
                mean: prior.mu0,
                cov: prior_cov,
            };
            h
        ];
        let sticks = uniform_sticks(h);
        let weights = stick_breaking(&sticks).expect("uniform sticks are valid");
        MixtureState {
            comps,
            sticks,
            weights,
            assign: vec![0; n_obs],
            zeta: 1.0,
        }
    }

    pub fn truncation(&self) -> usize {
        self.comps.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut n = vec![0usize; self.truncation()];
        for &c in &self.assign {
            n[c] += 1;
        }
        n
    }

    pub fn occupied(&self) -> usize {
        self.counts().iter().filter(|&&n| n > 0).count()
    }

    /// Weight-averaged mean of the mixture, the quantity recentered away to
    /// keep the spline intercepts identified.
    pub fn marginal_mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (w, c) in self.weights.iter().zip(&self.comps) {
            m[0] += w * c.mean[0];
            m[1] += w * c.mean[1];
        }
        m
    }

    /// Shift every component mean by `-delta`, preserving the likelihood
    /// when the regression intercepts absorb `+delta`.
    pub fn shift_means(&mut self, delta: [f64; 2]) {
        for c in &mut self.comps {
            c.mean[0] -= delta[0];
            c.mean[1] -= delta[1];
        }
    }
}

/// Univariate mixture state for the exogenous fit.
#[derive(Debug, Clone)]
pub struct MarginState {
    pub comps: Vec<MarginComponent>,
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub assign: Vec<usize>,
    pub zeta: f64,
}

impl MarginState {
    pub fn init(n_obs: usize, prior: &MarginPrior) -> MarginState {
        let h = prior.truncation;
        let comps = vec![
            MarginComponent {
                mean: prior.mu0,
                var: prior.scale / (prior.shape - 1.0),
            };
            h
        ];
        let sticks = uniform_sticks(h);
        let weights = stick_breaking(&sticks).expect("uniform sticks are valid");
        MarginState {
            comps,
            sticks,
            weights,
            assign: vec![0; n_obs],
            zeta: 1.0,
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut n = vec![0usize; self.comps.len()];
        for &c in &self.assign {
            n[c] += 1;
        }
        n
    }

    pub fn occupied(&self) -> usize {
        self.counts().iter().filter(|&&n| n > 0).count()
    }

    pub fn marginal_mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.comps)
            .map(|(w, c)| w * c.mean)
            .sum()
    }

    pub fn shift_means(&mut self, delta: f64) {
        for c in &mut self.comps {
            c.mean -= delta;
        }
    }
}

/// Sticks that produce (numerically) uniform weights.
fn uniform_sticks(h: usize) -> Vec<f64> {
    (0..h).map(|c| 1.0 / (h - c) as f64).collect()
}

/// Map stick variables to mixture weights.
///
/// The final weight is the leftover mass `1 - sum(previous)` rather than
/// the literal product, so the returned weights sum to 1.0 exactly in
/// floating point (the last stick is pinned at 1 under truncation either
/// way).
pub fn stick_breaking(sticks: &[f64]) -> Result<Vec<f64>> {
    if sticks.is_empty() {
        return Err(Error::InvalidArgument("no stick variables".into()));
    }
    for &v in sticks {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "stick variable {v} outside (0, 1]"
            )));
        }
    }
    let h = sticks.len();
    let mut weights = Vec::with_capacity(h);
    let mut remaining = 1.0f64;
    let mut partial = 0.0f64;
    for &v in &sticks[..h - 1] {
        let w = v * remaining;
        weights.push(w);
        partial += w;
        remaining *= 1.0 - v;
    }
    weights.push((1.0 - partial).max(0.0));
    Ok(weights)
}

/// Draw a component index from unnormalized log weights.
///
/// `log_w` entries of `-inf` are never selected. The scratch buffer avoids
/// per-observation allocation in the assignment sweep.
fn sample_categorical(log_w: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(m.is_finite(), "all components excluded");
    let mut total = 0.0;
    for &lw in log_w {
        total += (lw - m).exp();
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (c, &lw) in log_w.iter().enumerate() {
        acc += (lw - m).exp();
        if u < acc {
            return c;
        }
    }
    log_w.len() - 1
}

/// Resample every observation's component assignment.
pub fn update_assignments(
    resid: &[[f64; 2]],
    state: &mut MixtureState,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let h = state.truncation();
    let mut log_pi = vec![f64::NEG_INFINITY; h];
    let mut chols: Vec<Option<Chol2>> = Vec::with_capacity(h);
    for c in 0..h {
        let w = state.weights[c];
        let ch = state.comps[c].chol();
        if w > 0.0 {
            if ch.is_none() {
                return Err(Error::Numeric {
                    context: "mixture assignment".into(),
                    detail: format!("component {c} covariance lost positive definiteness"),
                });
            }
            log_pi[c] = w.ln();
        }
        chols.push(ch);
    }
    let mut log_w = vec![0.0; h];
    for (i, e) in resid.iter().enumerate() {
        for c in 0..h {
            log_w[c] = match (&chols[c], log_pi[c]) {
                (Some(ch), lp) if lp > f64::NEG_INFINITY => {
                    lp + ch.log_density(e[0] - state.comps[c].mean[0], e[1] - state.comps[c].mean[1])
                }
                _ => f64::NEG_INFINITY,
            };
        }
        state.assign[i] = sample_categorical(&log_w, rng);
    }
    Ok(())
}

pub fn update_assignments_margin(
    resid: &[f64],
    state: &mut MarginState,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let h = state.comps.len();
    let mut log_pi = vec![f64::NEG_INFINITY; h];
    for c in 0..h {
        if state.weights[c] > 0.0 {
            if !(state.comps[c].var > 0.0) {
                return Err(Error::Numeric {
                    context: "mixture assignment".into(),
                    detail: format!("component {c} variance became nonpositive"),
                });
            }
            log_pi[c] = state.weights[c].ln();
        }
    }
    let mut log_w = vec![0.0; h];
    for (i, &e) in resid.iter().enumerate() {
        for c in 0..h {
            log_w[c] = if log_pi[c] > f64::NEG_INFINITY {
                let v = state.comps[c].var;
                let d = e - state.comps[c].mean;
                log_pi[c] - 0.5 * (LOG_2PI + v.ln() + d * d / v)
            } else {
                f64::NEG_INFINITY
            };
        }
        state.assign[i] = sample_categorical(&log_w, rng);
    }
    Ok(())
}

/// Conjugate normal-inverse-Wishart posterior parameters.
#[derive(Debug, Clone, Copy)]
pub struct NiwPosterior {
    pub tau_n: f64,
    pub mu_n: [f64; 2],
    pub shape_n: f64,
    pub scale_n: [[f64; 2]; 2],
}

/// Closed-form posterior for one component given the raw moments of the
/// observations assigned to it (count, coordinate sums, and raw second
/// moments). Zero counts return the base measure unchanged.
pub fn niw_posterior(
    prior: &MixturePrior,
    n: usize,
    sum: [f64; 2],
    sum_sq: [[f64; 2]; 2],
) -> NiwPosterior {
    if n == 0 {
        return NiwPosterior {
            tau_n: prior.tau,
            mu_n: prior.mu0,
            shape_n: prior.shape,
            scale_n: prior.scale,
        };
    }
    let nf = n as f64;
    let mean = [sum[0] / nf, sum[1] / nf];
    // Scatter around the subset mean from raw moments.
    let mut scatter = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            scatter[a][b] = sum_sq[a][b] - nf * mean[a] * mean[b];
        }
    }
    let tau_n = prior.tau + nf;
    let mu_n = [
        (prior.tau * prior.mu0[0] + nf * mean[0]) / tau_n,
        (prior.tau * prior.mu0[1] + nf * mean[1]) / tau_n,
    ];
    let shrink = prior.tau * nf / tau_n;
    let d = [mean[0] - prior.mu0[0], mean[1] - prior.mu0[1]];
    let mut scale_n = prior.scale;
    for a in 0..2 {
        for b in 0..2 {
            scale_n[a][b] += scatter[a][b] + shrink * d[a] * d[b];
        }
    }
    NiwPosterior {
        tau_n,
        mu_n,
        shape_n: prior.shape + nf,
        scale_n,
    }
}

fn scale_mat2(m: [[f64; 2]; 2], k: f64) -> [[f64; 2]; 2] {
    [[m[0][0] * k, m[0][1] * k], [m[1][0] * k, m[1][1] * k]]
}

fn inv2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det > 0.0) {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Draw `Sigma ~ IW(shape, scale)` for a 2x2 scale via the Bartlett
/// decomposition of the Wishart draw on `scale^-1`, with effective degrees
/// of freedom `shape + 2`.
fn sample_iw2(shape: f64, scale: [[f64; 2]; 2], rng: &mut ChaCha20Rng) -> Option<[[f64; 2]; 2]> {
    let nu = shape + 2.0;
    let inv = inv2(scale)?;
    let c = chol2(inv)?;
    let a11 = ChiSquared::new(nu).ok()?.sample(rng).sqrt();
    let a21: f64 = StandardNormal.sample(rng);
    let a22 = ChiSquared::new(nu - 1.0).ok()?.sample(rng).sqrt();
    // L = C * A, lower triangular; W = L L' ~ Wishart(nu, scale^-1).
    let l11 = c.l11 * a11;
    let l21 = c.l21 * a11 + c.l22 * a21;
    let l22 = c.l22 * a22;
    let w11 = l11 * l11;
    let w21 = l21 * l11;
    let w22 = l21 * l21 + l22 * l22;
    inv2([[w11, w21], [w21, w22]])
}

fn sample_iw1(shape: f64, scale: f64, rng: &mut ChaCha20Rng) -> Option<f64> {
    let nu = shape + 1.0;
    let g = ChiSquared::new(nu).ok()?.sample(rng);
    if g > 0.0 {
        Some(scale / g)
    } else {
        None
    }
}

/// Redraw every component's moments from the conjugate posterior given the
/// current assignments. Empty components draw from the base measure, which
/// is the same formula with zero counts.
pub fn update_components(
    resid: &[[f64; 2]],
    state: &mut MixtureState,
    prior: &MixturePrior,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let h = state.truncation();
    let mut n = vec![0usize; h];
    let mut sum = vec![[0.0f64; 2]; h];
    let mut sum_sq = vec![[[0.0f64; 2]; 2]; h];
    for (e, &c) in resid.iter().zip(&state.assign) {
        n[c] += 1;
        sum[c][0] += e[0];
        sum[c][1] += e[1];
        sum_sq[c][0][0] += e[0] * e[0];
        sum_sq[c][0][1] += e[0] * e[1];
        sum_sq[c][1][1] += e[1] * e[1];
    }
    for c in 0..h {
        sum_sq[c][1][0] = sum_sq[c][0][1];
        let post = niw_posterior(prior, n[c], sum[c], sum_sq[c]);
        let cov = sample_iw2(post.shape_n, post.scale_n, rng)
            .or_else(|| {
                // Jittered retry for a borderline scale matrix.
                let mut s = post.scale_n;
                s[0][0] += 1e-8;
                s[1][1] += 1e-8;
                sample_iw2(post.shape_n, s, rng)
            })
            .ok_or_else(|| Error::Numeric {
                context: "mixture component update".into(),
                detail: format!("inverse-Wishart draw failed for component {c}"),
            })?;
        let ch = chol2(scale_mat2(cov, 1.0 / post.tau_n)).ok_or_else(|| Error::Numeric {
            context: "mixture component update".into(),
            detail: format!("mean covariance not positive definite for component {c}"),
        })?;
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let mean = [
            post.mu_n[0] + ch.l11 * z1,
            post.mu_n[1] + ch.l21 * z1 + ch.l22 * z2,
        ];
        state.comps[c] = Component { mean, cov };
    }
    Ok(())
}

pub fn update_components_margin(
    resid: &[f64],
    state: &mut MarginState,
    prior: &MarginPrior,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let h = state.comps.len();
    let mut n = vec![0usize; h];
    let mut sum = vec![0.0f64; h];
    let mut sum_sq = vec![0.0f64; h];
    for (&e, &c) in resid.iter().zip(&state.assign) {
        n[c] += 1;
        sum[c] += e;
        sum_sq[c] += e * e;
    }
    for c in 0..h {
        let (tau_n, mu_n, shape_n, scale_n) = if n[c] == 0 {
            (prior.tau, prior.mu0, prior.shape, prior.scale)
        } else {
            let nf = n[c] as f64;
            let mean = sum[c] / nf;
            let scatter = sum_sq[c] - nf * mean * mean;
            let tau_n = prior.tau + nf;
            let d = mean - prior.mu0;
            (
                tau_n,
                (prior.tau * prior.mu0 + nf * mean) / tau_n,
                prior.shape + nf,
                prior.scale + scatter + prior.tau * nf / tau_n * d * d,
            )
        };
        let var = sample_iw1(shape_n, scale_n, rng).ok_or_else(|| Error::Numeric {
            context: "mixture component update".into(),
            detail: format!("inverse-gamma draw failed for component {c}"),
        })?;
        let z: f64 = StandardNormal.sample(rng);
        state.comps[c] = MarginComponent {
            mean: mu_n + (var / tau_n).sqrt() * z,
            var,
        };
    }
    Ok(())
}

/// Beta full conditionals for the sticks followed by the Gamma conjugate
/// update of the concentration.
fn sticks_and_zeta_from_counts(
    counts: &[usize],
    zeta: f64,
    zeta_shape: f64,
    zeta_rate: f64,
    rng: &mut ChaCha20Rng,
) -> (Vec<f64>, Vec<f64>, f64) {
    let h = counts.len();
    let mut tail = vec![0usize; h];
    for c in (0..h - 1).rev() {
        tail[c] = tail[c + 1] + counts[c + 1];
    }
    let mut sticks = Vec::with_capacity(h);
    let mut log_one_minus = 0.0;
    for c in 0..h - 1 {
        let a = 1.0 + counts[c] as f64;
        let b = zeta + tail[c] as f64;
        let v = Beta::new(a, b).expect("valid Beta parameters").sample(rng);
        let v = v.clamp(1e-12, 1.0 - 1e-12);
        log_one_minus += (1.0 - v).ln();
        sticks.push(v);
    }
    sticks.push(1.0);
    let weights = stick_breaking(&sticks).expect("sampled sticks are valid");
    let shape = zeta_shape + (h - 1) as f64;
    let rate = zeta_rate - log_one_minus;
    let new_zeta = Gamma::new(shape, 1.0 / rate)
        .expect("valid Gamma parameters")
        .sample(rng);
    (sticks, weights, new_zeta)
}

pub fn update_sticks_and_concentration(
    state: &mut MixtureState,
    prior: &MixturePrior,
    rng: &mut ChaCha20Rng,
) {
    let counts = state.counts();
    let (sticks, weights, zeta) = sticks_and_zeta_from_counts(
        &counts,
        state.zeta,
        prior.zeta_shape,
        prior.zeta_rate,
        rng,
    );
    state.sticks = sticks;
    state.weights = weights;
    state.zeta = zeta;
}

pub fn update_sticks_and_concentration_margin(
    state: &mut MarginState,
    prior: &MarginPrior,
    rng: &mut ChaCha20Rng,
) {
    let counts = state.counts();
    let (sticks, weights, zeta) = sticks_and_zeta_from_counts(
        &counts,
        state.zeta,
        prior.zeta_shape,
        prior.zeta_rate,
        rng,
    );
    state.sticks = sticks;
    state.weights = weights;
    state.zeta = zeta;
}

/// Compact per-draw mixture summary retained by the samplers.
#[derive(Debug, Clone)]
pub enum MixtureDraw {
    Joint {
        zeta: f64,
        occupied: usize,
        weights: Vec<f64>,
        comps: Vec<Component>,
    },
    Margin {
        zeta: f64,
        occupied: usize,
        weights: Vec<f64>,
        comps: Vec<MarginComponent>,
    },
}

impl MixtureDraw {
    pub fn from_joint(state: &MixtureState) -> MixtureDraw {
        MixtureDraw::Joint {
            zeta: state.zeta,
            occupied: state.occupied(),
            weights: state.weights.clone(),
            comps: state.comps.clone(),
        }
    }

    pub fn from_margin(state: &MarginState) -> MixtureDraw {
        MixtureDraw::Margin {
            zeta: state.zeta,
            occupied: state.occupied(),
            weights: state.weights.clone(),
            comps: state.comps.clone(),
        }
    }

    pub fn zeta(&self) -> f64 {
        match self {
            MixtureDraw::Joint { zeta, .. } | MixtureDraw::Margin { zeta, .. } => *zeta,
        }
    }

    pub fn occupied(&self) -> usize {
        match self {
            MixtureDraw::Joint { occupied, .. } | MixtureDraw::Margin { occupied, .. } => *occupied,
        }
    }

    /// Joint density at `(e1, e2)` for bivariate draws; `None` for margins.
    pub fn joint_density(&self, e1: f64, e2: f64) -> Option<f64> {
        match self {
            MixtureDraw::Joint { weights, comps, .. } => {
                let mut dens = 0.0;
                for (w, comp) in weights.iter().zip(comps) {
                    if *w <= 0.0 {
                        continue;
                    }
                    if let Some(ch) = comp.chol() {
                        dens += w
                            * ch.log_density(e1 - comp.mean[0], e2 - comp.mean[1])
                                .exp();
                    }
                }
                Some(dens)
            }
            MixtureDraw::Margin { .. } => None,
        }
    }

    /// Mean and covariance of the mixture itself (for grid sizing).
    pub fn joint_moments(&self) -> Option<([f64; 2], [[f64; 2]; 2])> {
        match self {
            MixtureDraw::Joint { weights, comps, .. } => {
                let mut m = [0.0; 2];
                for (w, c) in weights.iter().zip(comps) {
                    m[0] += w * c.mean[0];
                    m[1] += w * c.mean[1];
                }
                let mut v = [[0.0; 2]; 2];
                for (w, c) in weights.iter().zip(comps) {
                    for a in 0..2 {
                        for b in 0..2 {
                            v[a][b] += w * (c.cov[a][b] + c.mean[a] * c.mean[b]);
                        }
                    }
                }
                for a in 0..2 {
                    for b in 0..2 {
                        v[a][b] -= m[a] * m[b];
                    }
                }
                Some((m, v))
            }
            MixtureDraw::Margin { .. } => None,
        }
    }
}
