//! Posterior curve summaries: pointwise intervals, simultaneous bands, and
//! the averaged error density.
//!
//! The simultaneous band inflates the pointwise interval half-widths around
//! the pointwise mean by a single factor `lambda >= 1`, chosen as the
//! smallest value (bisection resolution 1e-4) at which at least a `1 - delta`
//! fraction of the retained curves lies entirely inside the band. Quantiles
//! use linear interpolation between order statistics throughout.

use crate::error::{Error, Result};
use crate::mixture::MixtureDraw;

/// Posterior band for one curve on an evaluation grid.
#[derive(Debug, Clone)]
pub struct CurveBand {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub pw_lo: Vec<f64>,
    pub pw_hi: Vec<f64>,
    pub sim_lo: Vec<f64>,
    pub sim_hi: Vec<f64>,
    /// Band level delta: pointwise intervals at quantiles delta/2, 1-delta/2
    /// and simultaneous coverage target 1-delta.
    pub delta: f64,
    /// Inflation factor applied to the pointwise half-widths.
    pub lambda: f64,
}

impl CurveBand {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Empirical quantile with linear interpolation between order statistics:
/// position `h = (n - 1) p` in the zero-indexed sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Per-grid-point mean and central interval at level `1 - delta`.
pub fn pointwise_summary(
    curves: &[Vec<f64>],
    delta: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    validate_curves(curves, delta)?;
    let g = curves[0].len();
    let r = curves.len();
    let mut mean = vec![0.0; g];
    let mut lo = vec![0.0; g];
    let mut hi = vec![0.0; g];
    let mut column = vec![0.0; r];
    for j in 0..g {
        let mut acc = 0.0;
        for (i, c) in curves.iter().enumerate() {
            column[i] = c[j];
            acc += c[j];
        }
        mean[j] = acc / r as f64;
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite curve values"));
        lo[j] = quantile_sorted(&column, delta / 2.0);
        hi[j] = quantile_sorted(&column, 1.0 - delta / 2.0);
    }
    Ok((mean, lo, hi))
}

fn validate_curves(curves: &[Vec<f64>], delta: f64) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::EmptyInput("no retained curves".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "band level delta {delta} outside (0, 1)"
        )));
    }
    let g = curves[0].len();
    if g == 0 {
        return Err(Error::EmptyInput("empty evaluation grid".into()));
    }
    for c in curves {
        if c.len() != g {
            return Err(Error::InvalidArgument(
                "curves have mismatched grid lengths".into(),
            ));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "curve summary".into(),
                detail: "non-finite curve value".into(),
            });
        }
    }
    Ok(())
}

/// Fraction of curves lying entirely inside `mean ± lambda * halfwidth`.
fn containment(
    curves: &[Vec<f64>],
    mean: &[f64],
    hw_lo: &[f64],
    hw_hi: &[f64],
    lambda: f64,
) -> f64 {
    let mut inside = 0usize;
    'curve: for c in curves {
        for j in 0..mean.len() {
            if c[j] < mean[j] - lambda * hw_lo[j] || c[j] > mean[j] + lambda * hw_hi[j] {
                continue 'curve;
            }
        }
        inside += 1;
    }
    inside as f64 / curves.len() as f64
}

/// Build the full band for a set of retained curves on a shared grid.
pub fn simultaneous_band(grid: &[f64], curves: &[Vec<f64>], delta: f64) -> Result<CurveBand> {
    validate_curves(curves, delta)?;
    if grid.len() != curves[0].len() {
        return Err(Error::InvalidArgument(
            "grid length does not match curves".into(),
        ));
    }
    let (mean, pw_lo, pw_hi) = pointwise_summary(curves, delta)?;
    let g = grid.len();
    // Half-widths around the mean; skewed draws can put a quantile on the
    // wrong side of the mean, so widths are floored at zero.
    let hw_lo: Vec<f64> = (0..g).map(|j| (mean[j] - pw_lo[j]).max(0.0)).collect();
    let hw_hi: Vec<f64> = (0..g).map(|j| (pw_hi[j] - mean[j]).max(0.0)).collect();

    let target = 1.0 - delta;
    let lambda = if containment(curves, &mean, &hw_lo, &hw_hi, 1.0) >= target {
        1.0
    } else {
        let mut hi = 2.0;
        while containment(curves, &mean, &hw_lo, &hw_hi, hi) < target {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::DegenerateBand(
                    "no inflation reaches the target containment; a zero-width \
                     pointwise interval conflicts with varying draws"
                        .into(),
                ));
            }
        }
        let mut lo = hi / 2.0;
        while hi - lo > 1e-4 {
            let mid = 0.5 * (lo + hi);
            if containment(curves, &mean, &hw_lo, &hw_hi, mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };

    let sim_lo: Vec<f64> = (0..g).map(|j| mean[j] - lambda * hw_lo[j]).collect();
    let sim_hi: Vec<f64> = (0..g).map(|j| mean[j] + lambda * hw_hi[j]).collect();
    Ok(CurveBand {
        grid: grid.to_vec(),
        mean,
        pw_lo,
        pw_hi,
        sim_lo,
        sim_hi,
        delta,
        lambda,
    })
}

/// Fraction of curves fully inside the simultaneous band at an alternative
/// inflation factor; exposed for containment checks.
pub fn band_containment_at(band: &CurveBand, curves: &[Vec<f64>], lambda: f64) -> f64 {
    let g = band.grid.len();
    let hw_lo: Vec<f64> = (0..g)
        .map(|j| (band.mean[j] - band.pw_lo[j]).max(0.0))
        .collect();
    let hw_hi: Vec<f64> = (0..g)
        .map(|j| (band.pw_hi[j] - band.mean[j]).max(0.0))
        .collect();
    containment(curves, &band.mean, &hw_lo, &hw_hi, lambda)
}

/// Rectangular evaluation grid for the joint error density.
#[derive(Debug, Clone)]
pub struct DensityGridSpec {
    pub e1_range: (f64, f64),
    pub e2_range: (f64, f64),
    pub n1: usize,
    pub n2: usize,
}

impl DensityGridSpec {
    /// Span the averaged mixture moments by `spread` marginal standard
    /// deviations in each direction.
    pub fn from_draws(draws: &[MixtureDraw], n1: usize, n2: usize, spread: f64) -> Result<Self> {
        let mut m = [0.0f64; 2];
        let mut v = [0.0f64; 2];
        let mut count = 0usize;
        for d in draws {
            if let Some((mean, cov)) = d.joint_moments() {
                m[0] += mean[0];
                m[1] += mean[1];
                v[0] += cov[0][0] + mean[0] * mean[0];
                v[1] += cov[1][1] + mean[1] * mean[1];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyInput(
                "no bivariate mixture draws for density grid sizing".into(),
            ));
        }
        let c = count as f64;
        m[0] /= c;
        m[1] /= c;
        let sd1 = (v[0] / c - m[0] * m[0]).max(1e-12).sqrt();
        let sd2 = (v[1] / c - m[1] * m[1]).max(1e-12).sqrt();
        Ok(DensityGridSpec {
            e1_range: (m[0] - spread * sd1, m[0] + spread * sd1),
            e2_range: (m[1] - spread * sd2, m[1] + spread * sd2),
            n1,
            n2,
        })
    }
}

/// Posterior mean error density on a rectangular grid.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// Row-major over (e1 index, e2 index).
    pub density: Vec<f64>,
    /// Approximate probability mass captured inside the grid rectangle.
    pub coverage: f64,
    /// Set when more than 5% of the posterior mass falls outside the grid.
    pub truncated: bool,
}

/// Average the truncated-mixture density over all retained bivariate draws.
pub fn error_density_grid(draws: &[MixtureDraw], spec: &DensityGridSpec) -> Result<DensityGrid> {
    if spec.n1 < 2 || spec.n2 < 2 {
        return Err(Error::InvalidArgument(
            "density grid needs at least 2 points per axis".into(),
        ));
    }
    let joint: Vec<&MixtureDraw> = draws
        .iter()
        .filter(|d| matches!(d, MixtureDraw::Joint { .. }))
        .collect();
    if joint.is_empty() {
        return Err(Error::EmptyInput(
            "no bivariate mixture draws for the error density".into(),
        ));
    }
    let lin = |r: (f64, f64), n: usize, i: usize| r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64;
    let e1: Vec<f64> = (0..spec.n1).map(|i| lin(spec.e1_range, spec.n1, i)).collect();
    let e2: Vec<f64> = (0..spec.n2).map(|i| lin(spec.e2_range, spec.n2, i)).collect();
    let mut density = vec![0.0f64; spec.n1 * spec.n2];
    let rf = joint.len() as f64;
    for d in &joint {
        for (i, &a) in e1.iter().enumerate() {
            for (j, &b) in e2.iter().enumerate() {
                density[i * spec.n2 + j] += d.joint_density(a, b).expect("joint draw") / rf;
            }
        }
    }
    let cell = (e1[1] - e1[0]) * (e2[1] - e2[0]);
    let coverage: f64 = density.iter().sum::<f64>() * cell;
    Ok(DensityGrid {
        e1,
        e2,
        density,
        coverage: coverage.min(1.0),
        truncated: coverage < 0.95,
    })
}
