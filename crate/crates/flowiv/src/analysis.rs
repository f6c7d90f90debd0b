//! Capacity quantities read off a fitted flow curve: the flow maximum, the
//! occupancy where it occurs, the post-peak flow drop, and whether the drop
//! is supported by the credible bands rather than by sampling noise.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::summary::CurveBand;

/// Tuning for capacity extraction.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CapacityOptions {
    /// Minimum fraction of observations within one grid cell of a grid
    /// point for the point to count as data-supported.
    pub density_floor: f64,
    /// Occupancy-point search window beyond the peak for the drop minimum.
    pub window: f64,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        CapacityOptions {
            density_floor: 0.005,
            window: 10.0,
        }
    }
}

/// Three-valued answer for band-based significance calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Tri {
    Yes,
    No,
    /// The data are too sparse where the call would be made.
    Indeterminate,
}

/// Capacity summary for one fitted curve. Flow units follow the input
/// (vehicles per 5 minutes); the hourly figure is exactly 12 times it.
#[derive(Debug, Clone, Serialize)]
pub struct CapacityReport {
    /// Occupancy at maximum fitted flow, percent.
    pub o_critical: f64,
    /// Maximum fitted flow, veh/5min.
    pub capacity_per_5min: f64,
    /// Maximum fitted flow, veh/hr.
    pub capacity_per_hr: f64,
    /// The maximum sits at the edge of the data-supported range, so the
    /// curve may simply be rising into unobserved territory.
    pub boundary: bool,
    /// Occupancy of the post-peak flow minimum within the search window.
    pub o_post_drop: Option<f64>,
    /// Fitted flow at that minimum, veh/5min.
    pub flow_post_drop: Option<f64>,
    /// 100 * (q_c - q*) / q_c.
    pub drop_percent: Option<f64>,
    /// Does the band at the peak clear the band at the minimum?
    pub significant: Tri,
    /// Some data-supported point beyond the minimum sits significantly
    /// lower still: the curve keeps falling as occupancy grows.
    pub backward_bend: bool,
    /// Number of grid points that met the density floor.
    pub supported_points: usize,
}

/// Data support per grid point: the fraction of observations within one
/// grid cell of the point must reach the floor.
pub fn adequate_density(grid: &[f64], occupancies: &[f64], floor: f64) -> Vec<bool> {
    let cell = if grid.len() > 1 {
        grid[1] - grid[0]
    } else {
        f64::INFINITY
    };
    let n = occupancies.len().max(1) as f64;
    grid.iter()
        .map(|&g| {
            let count = occupancies.iter().filter(|&&o| (o - g).abs() <= cell).count();
            count as f64 / n >= floor
        })
        .collect()
}

/// Locate the flow maximum over data-supported grid points.
///
/// Returns `(o_c, q_c, boundary)`. Ties go to the smaller occupancy. The
/// boundary flag is raised when the maximum is the first or last supported
/// point, where a genuine interior peak cannot be distinguished from a
/// curve still rising at the edge of the data.
pub fn extract_capacity(
    band: &CurveBand,
    occupancies: &[f64],
    opts: &CapacityOptions,
) -> Result<(f64, f64, bool)> {
    let supported = adequate_density(&band.grid, occupancies, opts.density_floor);
    let idx = argmax_supported(band, &supported)?;
    let first = supported.iter().position(|&s| s).expect("argmax implies one");
    let last = supported.iter().rposition(|&s| s).expect("argmax implies one");
    Ok((band.grid[idx], band.mean[idx], idx == first || idx == last))
}

fn argmax_supported(band: &CurveBand, supported: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for j in 0..band.len() {
        if !supported[j] {
            continue;
        }
        if best.map(|b| band.mean[j] > band.mean[b]).unwrap_or(true) {
            best = Some(j);
        }
    }
    best.ok_or_else(|| {
        Error::InsufficientDensity(
            "no grid point meets the data-density floor; cannot place the capacity".into(),
        )
    })
}

/// Full capacity report: peak, post-peak minimum, drop, and significance.
///
/// The minimum is the argmin of the posterior mean over grid points in
/// `(o_c, o_c + window]`. The drop is significant when the simultaneous
/// lower band at the peak exceeds the simultaneous upper band at the
/// minimum; if the minimum falls where the data are too sparse the call is
/// indeterminate instead. The backward-bend flag reports whether some
/// data-supported point beyond the minimum sits significantly below it.
pub fn capacity_report(
    band: &CurveBand,
    occupancies: &[f64],
    opts: &CapacityOptions,
) -> Result<CapacityReport> {
    if !(opts.density_floor >= 0.0 && opts.density_floor < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density floor {} outside [0, 1)",
            opts.density_floor
        )));
    }
    if !(opts.window > 0.0) {
        return Err(Error::InvalidArgument(
            "capacity search window must be positive".into(),
        ));
    }
    let supported = adequate_density(&band.grid, occupancies, opts.density_floor);
    let peak = argmax_supported(band, &supported)?;
    let first = supported.iter().position(|&s| s).expect("peak implies one");
    let last = supported.iter().rposition(|&s| s).expect("peak implies one");
    let o_c = band.grid[peak];
    let q_c = band.mean[peak];

    // Post-peak minimum over the raw window; data support is judged after.
    let mut min_idx: Option<usize> = None;
    for j in (peak + 1)..band.len() {
        let o = band.grid[j];
        if o <= o_c || o > o_c + opts.window {
            continue;
        }
        if min_idx.map(|m| band.mean[j] < band.mean[m]).unwrap_or(true) {
            min_idx = Some(j);
        }
    }

    let mut report = CapacityReport {
        o_critical: o_c,
        capacity_per_5min: q_c,
        capacity_per_hr: 12.0 * q_c,
        boundary: peak == first || peak == last,
        o_post_drop: None,
        flow_post_drop: None,
        drop_percent: None,
        significant: Tri::Indeterminate,
        backward_bend: false,
        supported_points: supported.iter().filter(|&&s| s).count(),
    };

    let Some(star) = min_idx else {
        return Ok(report);
    };
    let q_star = band.mean[star];
    report.o_post_drop = Some(band.grid[star]);
    report.flow_post_drop = Some(q_star);
    if q_c > 0.0 {
        report.drop_percent = Some(100.0 * (q_c - q_star) / q_c);
    }

    report.significant = if !supported[star] {
        Tri::Indeterminate
    } else if band.sim_lo[peak] > band.sim_hi[star] {
        Tri::Yes
    } else {
        Tri::No
    };

    report.backward_bend = (star + 1..band.len())
        .any(|j| supported[j] && band.sim_hi[j] < band.sim_lo[star]);

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Band over occupancy [0, 40] whose mean rises linearly to `peak_q` at
    /// occupancy 17, drops to `post_q`, then stays flat; constant half-width
    /// bands around it.
    fn drop_band(points: usize, peak_q: f64, post_q: f64, half_width: f64) -> CurveBand {
        let grid: Vec<f64> = (0..points)
            .map(|j| 40.0 * j as f64 / (points - 1) as f64)
            .collect();
        let mean: Vec<f64> = grid
            .iter()
            .map(|&o| {
                if o <= 17.0 {
                    peak_q * o / 17.0
                } else {
                    post_q
                }
            })
            .collect();
        band_around(grid, mean, half_width)
    }

    fn band_around(grid: Vec<f64>, mean: Vec<f64>, hw: f64) -> CurveBand {
        CurveBand {
            pw_lo: mean.iter().map(|m| m - hw / 2.0).collect(),
            pw_hi: mean.iter().map(|m| m + hw / 2.0).collect(),
            sim_lo: mean.iter().map(|m| m - hw).collect(),
            sim_hi: mean.iter().map(|m| m + hw).collect(),
            grid,
            mean,
            delta: 0.05,
            lambda: 2.0,
        }
    }

    fn dense_occupancies(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn triangular_drop_is_located_and_judged() {
        let band = drop_band(201, 500.0, 450.0, 8.0);
        let occ = dense_occupancies(0.0, 40.0, 4000);
        let opts = CapacityOptions::default();
        let report = capacity_report(&band, &occ, &opts).unwrap();
        // Grid step is 0.2, so the peak lands within one cell of 17.
        assert!((report.o_critical - 17.0).abs() <= 0.2 + 1e-12);
        assert!((report.drop_percent.unwrap() - 10.0).abs() < 2.0);
        assert_eq!(report.significant, Tri::Yes);
        assert!(!report.boundary);
        assert_eq!(report.capacity_per_hr, 12.0 * report.capacity_per_5min);
        assert!(report.o_post_drop.unwrap() > report.o_critical);
    }

    #[test]
    fn five_times_wider_bands_lose_significance() {
        let band = drop_band(201, 500.0, 450.0, 40.0);
        let occ = dense_occupancies(0.0, 40.0, 4000);
        let report = capacity_report(&band, &occ, &CapacityOptions::default()).unwrap();
        assert!((report.drop_percent.unwrap() - 10.0).abs() < 2.0);
        assert_eq!(report.significant, Tri::No);
    }

    #[test]
    fn worked_non_overlap_example() {
        // Peak 500 and minimum 450 with simultaneous half-width 10:
        // 490 > 460 so the drop is significant.
        let band = drop_band(201, 500.0, 450.0, 10.0);
        let occ = dense_occupancies(0.0, 40.0, 4000);
        let report = capacity_report(&band, &occ, &CapacityOptions::default()).unwrap();
        assert_eq!(report.significant, Tri::Yes);
    }

    #[test]
    fn monotone_curve_flags_boundary() {
        let grid: Vec<f64> = (0..101).map(|j| j as f64 / 2.5).collect();
        let mean: Vec<f64> = grid.iter().map(|&o| 10.0 * o).collect();
        let band = band_around(grid, mean, 5.0);
        let occ = dense_occupancies(0.0, 40.0, 2000);
        let (o_c, q_c, boundary) =
            extract_capacity(&band, &occ, &CapacityOptions::default()).unwrap();
        assert!(boundary);
        assert!((o_c - 40.0).abs() < 1e-12);
        assert!((q_c - 400.0).abs() < 1e-12);
    }

    #[test]
    fn flat_posterior_ties_break_to_smaller_occupancy() {
        let grid: Vec<f64> = (0..51).map(|j| j as f64).collect();
        let mean = vec![100.0; 51];
        let band = band_around(grid, mean, 5.0);
        let occ = dense_occupancies(0.0, 50.0, 2000);
        let (o_c, _, boundary) =
            extract_capacity(&band, &occ, &CapacityOptions::default()).unwrap();
        assert_eq!(o_c, 0.0);
        assert!(boundary);
    }

    #[test]
    fn sparse_tail_is_excluded_from_the_peak() {
        // Huge fitted values beyond occupancy 30, but all observations live
        // in [0, 20]: the peak must come from the supported region.
        let grid: Vec<f64> = (0..101).map(|j| 40.0 * j as f64 / 100.0).collect();
        let mean: Vec<f64> = grid
            .iter()
            .map(|&o| if o > 30.0 { 9000.0 } else { 500.0 - (o - 17.0).powi(2) })
            .collect();
        let band = band_around(grid.clone(), mean, 4.0);
        let occ = dense_occupancies(0.0, 20.0, 3000);
        let (o_c, _, _) = extract_capacity(&band, &occ, &CapacityOptions::default()).unwrap();
        assert!((o_c - 17.0).abs() <= 0.4 + 1e-12, "o_c = {o_c}");
    }

    #[test]
    fn sparse_minimum_is_indeterminate() {
        let band = drop_band(201, 500.0, 450.0, 8.0);
        // Observations stop right at the peak; the window beyond is empty.
        let occ = dense_occupancies(0.0, 17.0, 2000);
        let report = capacity_report(&band, &occ, &CapacityOptions::default()).unwrap();
        assert_eq!(report.significant, Tri::Indeterminate);
        assert!(report.o_post_drop.is_some());
    }

    #[test]
    fn no_supported_points_is_an_error() {
        let band = drop_band(201, 500.0, 450.0, 8.0);
        let occ = vec![300.0; 50]; // all observations far off the grid
        let err = capacity_report(&band, &occ, &CapacityOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientDensity(_)));
    }

    #[test]
    fn backward_bend_detected_when_curve_keeps_falling() {
        // Rise to (10, 500), fall to 450 at 15, keep falling to 300 by 40.
        let grid: Vec<f64> = (0..201).map(|j| 40.0 * j as f64 / 200.0).collect();
        let mean: Vec<f64> = grid
            .iter()
            .map(|&o| {
                if o <= 10.0 {
                    50.0 * o
                } else if o <= 15.0 {
                    500.0 - 10.0 * (o - 10.0)
                } else {
                    450.0 - 6.0 * (o - 15.0)
                }
            })
            .collect();
        let band = band_around(grid, mean, 8.0);
        let occ = dense_occupancies(0.0, 40.0, 4000);
        let report = capacity_report(&band, &occ, &CapacityOptions::default()).unwrap();
        assert_eq!(report.significant, Tri::Yes);
        assert!(report.backward_bend);

        // Same shape but flat after the drop: no bend.
        let flat = drop_band(201, 500.0, 450.0, 8.0);
        let r2 = capacity_report(&flat, &occ, &CapacityOptions::default()).unwrap();
        assert!(!r2.backward_bend);
    }

    #[test]
    fn scale_and_shift_equivariance() {
        let band = drop_band(201, 500.0, 450.0, 8.0);
        let occ = dense_occupancies(0.0, 40.0, 4000);
        let opts = CapacityOptions::default();
        let base = capacity_report(&band, &occ, &opts).unwrap();

        // Flow scale by k.
        let k = 3.5;
        let scaled = CurveBand {
            grid: band.grid.clone(),
            mean: band.mean.iter().map(|v| v * k).collect(),
            pw_lo: band.pw_lo.iter().map(|v| v * k).collect(),
            pw_hi: band.pw_hi.iter().map(|v| v * k).collect(),
            sim_lo: band.sim_lo.iter().map(|v| v * k).collect(),
            sim_hi: band.sim_hi.iter().map(|v| v * k).collect(),
            delta: band.delta,
            lambda: band.lambda,
        };
        let s = capacity_report(&scaled, &occ, &opts).unwrap();
        assert_eq!(s.o_critical, base.o_critical);
        assert_eq!(s.o_post_drop, base.o_post_drop);
        assert!((s.capacity_per_5min - k * base.capacity_per_5min).abs() < 1e-9);
        assert!((s.drop_percent.unwrap() - base.drop_percent.unwrap()).abs() < 1e-9);
        assert_eq!(s.significant, base.significant);

        // Occupancy shift by c.
        let c = 7.0;
        let shifted = CurveBand {
            grid: band.grid.iter().map(|v| v + c).collect(),
            ..band.clone()
        };
        let occ_shifted: Vec<f64> = occ.iter().map(|v| v + c).collect();
        let t = capacity_report(&shifted, &occ_shifted, &opts).unwrap();
        assert!((t.o_critical - (base.o_critical + c)).abs() < 1e-9);
        assert!(
            (t.o_post_drop.unwrap() - (base.o_post_drop.unwrap() + c)).abs() < 1e-9
        );
        assert_eq!(t.significant, base.significant);
    }

    #[test]
    fn significant_implies_positive_drop() {
        for hw in [2.0, 8.0, 20.0, 40.0] {
            for post in [350.0, 450.0, 499.0, 500.0] {
                let band = drop_band(201, 500.0, post, hw);
                let occ = dense_occupancies(0.0, 40.0, 4000);
                let r = capacity_report(&band, &occ, &CapacityOptions::default()).unwrap();
                if r.significant == Tri::Yes {
                    assert!(r.drop_percent.unwrap() > 0.0);
                }
            }
        }
    }
}
