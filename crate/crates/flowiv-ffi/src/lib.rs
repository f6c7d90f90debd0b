//! C interface over the flowiv estimators.
//!
//! Every entry point is panic-safe: panics are caught at the boundary and
//! reported as `FLOWIV_STATUS_PANIC`. Functions that can fail return a
//! status code and write results through out-pointers; the most recent
//! failure message for the calling thread is available from
//! [`flowiv_last_error_message`]. Handles returned by `_new` and `_fit`
//! functions own their data and must be released with the matching
//! `_free`; passing null to a `_free` is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use flowiv::analysis::{capacity_report, CapacityOptions, Tri};
use flowiv::ingest::RegressionSample;
use flowiv::npiv::{fit_np, fit_npiv, McmcConfig, MixtureSpec, PosteriorDraws, SplinePriors};
use flowiv::splines::KnotVector;
use flowiv::summary::CurveBand;
use flowiv::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowivStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    EmptyInput = 3,
    Numeric = 4,
    Diverged = 5,
    InsufficientDensity = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Which column of a fitted band to copy out.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowivCurve {
    Grid = 0,
    Mean = 1,
    PointwiseLo = 2,
    PointwiseHi = 3,
    SimultaneousLo = 4,
    SimultaneousHi = 5,
}

/// Three-valued significance call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowivTri {
    No = 0,
    Yes = 1,
    Indeterminate = 2,
}

/// Sampler and basis settings; get defaults from
/// [`flowiv_fit_options_default`] and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FlowivFitOptions {
    /// Total Gibbs sweeps including burn-in.
    pub draws: u64,
    pub burn_in: u64,
    /// Keep every `thin`-th post-burn-in sweep.
    pub thin: u64,
    /// Evaluation grid size for retained curves.
    pub grid_points: u64,
    pub seed: u64,
    /// Band miscoverage level in (0, 0.5]; 0.05 gives 95% bands.
    pub delta: f64,
    /// Interior knot count for each spline basis.
    pub interior_knots: u64,
    /// Spline degree (3 is cubic).
    pub degree: u64,
    /// Truncation level of the error mixture.
    pub truncation: u64,
    /// Skip the first stage and fit flow on occupancy alone.
    pub exogenous: bool,
}

/// Capacity summary in the flow units of the input (per 5 minutes).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FlowivCapacity {
    pub o_critical: f64,
    pub capacity_per_5min: f64,
    pub capacity_per_hr: f64,
    /// Peak sits on the edge of the data-supported range.
    pub boundary: bool,
    /// The post-peak fields below are meaningful only when true.
    pub has_drop: bool,
    pub o_post_drop: f64,
    pub flow_post_drop: f64,
    pub drop_percent: f64,
    pub significant: FlowivTri,
    pub backward_bend: bool,
    pub supported_points: u64,
}

/// Owned regression data; create with [`flowiv_sample_new`].
pub struct FlowivSample {
    inner: RegressionSample,
}

/// A completed fit: retained draws plus the summarized bands.
pub struct FlowivFit {
    draws: PosteriorDraws,
    band: CurveBand,
    first_stage: Option<CurveBand>,
    occupancies: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = clean);
}

fn status_of(err: &Error) -> FlowivStatus {
    match err {
        Error::Io { .. } | Error::Csv(_) => FlowivStatus::Io,
        Error::Schema(_) | Error::Config(_) | Error::InvalidArgument(_) => {
            FlowivStatus::InvalidArgument
        }
        Error::EmptyInput(_) => FlowivStatus::EmptyInput,
        Error::DegenerateSupport(_)
        | Error::RankDeficient { .. }
        | Error::Numeric { .. }
        | Error::DegenerateBand(_) => FlowivStatus::Numeric,
        Error::Diverged { .. } => FlowivStatus::Diverged,
        Error::InsufficientDensity(_) => FlowivStatus::InsufficientDensity,
        Error::Stage { source, .. } => status_of(source),
    }
}

fn fail(err: Error) -> FlowivStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Run a closure behind the unwind barrier, translating panics.
fn guarded(body: impl FnOnce() -> FlowivStatus) -> FlowivStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".into());
            set_error(&format!("internal panic: {msg}"));
            FlowivStatus::Panic
        }
    }
}

macro_rules! require {
    ($ptr:expr, $name:literal) => {
        if $ptr.is_null() {
            set_error(concat!($name, " is null"));
            return FlowivStatus::NullArgument;
        }
    };
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn flowiv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the calling thread's most recent failure. The pointer stays
/// valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn flowiv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Build a sample from parallel arrays of flow, occupancy, and instrument,
/// each `len` long. On success writes an owned handle to `out`.
///
/// # Safety
/// `q`, `o`, and `z` must point to `len` readable doubles; `out` must be a
/// valid write target.
#[no_mangle]
pub unsafe extern "C" fn flowiv_sample_new(
    q: *const f64,
    o: *const f64,
    z: *const f64,
    len: usize,
    out: *mut *mut FlowivSample,
) -> FlowivStatus {
    require!(out, "out");
    require!(q, "q");
    require!(o, "o");
    require!(z, "z");
    let q = std::slice::from_raw_parts(q, len);
    let o = std::slice::from_raw_parts(o, len);
    let z = std::slice::from_raw_parts(z, len);
    guarded(|| {
        match RegressionSample::synthetic(q.to_vec(), o.to_vec(), z.to_vec()) {
            Ok(sample) => {
                *out = Box::into_raw(Box::new(FlowivSample { inner: sample }));
                FlowivStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of observations in the sample; 0 for null.
///
/// # Safety
/// `sample` must be null or a live handle from [`flowiv_sample_new`].
#[no_mangle]
pub unsafe extern "C" fn flowiv_sample_len(sample: *const FlowivSample) -> usize {
    if sample.is_null() {
        0
    } else {
        (*sample).inner.len()
    }
}

/// Release a sample handle.
///
/// # Safety
/// `sample` must be null or an unreleased handle from
/// [`flowiv_sample_new`].
#[no_mangle]
pub unsafe extern "C" fn flowiv_sample_free(sample: *mut FlowivSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Default sampler settings: the short profile with cubic splines.
#[no_mangle]
pub extern "C" fn flowiv_fit_options_default() -> FlowivFitOptions {
    let desk = McmcConfig::desk(0);
    FlowivFitOptions {
        draws: desk.draws as u64,
        burn_in: desk.burn_in as u64,
        thin: desk.thin as u64,
        grid_points: desk.grid_points as u64,
        seed: desk.seed,
        delta: desk.delta,
        interior_knots: 20,
        degree: 3,
        truncation: 25,
        exogenous: false,
    }
}

/// Fit the model and write an owned fit handle to `out`.
///
/// # Safety
/// `sample` must be a live handle, `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn flowiv_fit(
    sample: *const FlowivSample,
    options: *const FlowivFitOptions,
    out: *mut *mut FlowivFit,
) -> FlowivStatus {
    require!(out, "out");
    require!(sample, "sample");
    require!(options, "options");
    let sample = &(*sample).inner;
    let opts = *options;
    guarded(|| match run_fit(sample, &opts) {
        Ok(fit) => {
            *out = Box::into_raw(Box::new(fit));
            FlowivStatus::Ok
        }
        Err(e) => fail(e),
    })
}

fn run_fit(sample: &RegressionSample, opts: &FlowivFitOptions) -> Result<FlowivFit, Error> {
    let config = McmcConfig {
        draws: opts.draws as usize,
        burn_in: opts.burn_in as usize,
        thin: opts.thin as usize,
        grid_points: opts.grid_points as usize,
        seed: opts.seed,
        delta: opts.delta,
    };
    let priors = SplinePriors::default();
    let mixture = MixtureSpec {
        truncation: opts.truncation as usize,
        ..MixtureSpec::default()
    };
    let interior = opts.interior_knots as usize;
    let degree = opts.degree as usize;
    let knots_s = KnotVector::from_data(&sample.o, interior, degree)?;
    let draws = if opts.exogenous {
        fit_np(sample, knots_s, &priors, &mixture, &config)?
    } else {
        let knots_h = KnotVector::from_data(&sample.z, interior, degree)?;
        fit_npiv(sample, knots_s, knots_h, &priors, &mixture, &config)?
    };
    let band = draws.structural_band()?;
    let first_stage = draws.first_stage_band()?;
    Ok(FlowivFit {
        draws,
        band,
        first_stage,
        occupancies: sample.o.clone(),
    })
}

/// Release a fit handle.
///
/// # Safety
/// `fit` must be null or an unreleased handle from [`flowiv_fit`].
#[no_mangle]
pub unsafe extern "C" fn flowiv_fit_free(fit: *mut FlowivFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Grid length of the fitted bands; 0 for null.
///
/// # Safety
/// `fit` must be null or a live handle from [`flowiv_fit`].
#[no_mangle]
pub unsafe extern "C" fn flowiv_fit_grid_len(fit: *const FlowivFit) -> usize {
    if fit.is_null() {
        0
    } else {
        (*fit).band.len()
    }
}

/// Number of retained posterior draws; 0 for null.
///
/// # Safety
/// `fit` must be null or a live handle from [`flowiv_fit`].
#[no_mangle]
pub unsafe extern "C" fn flowiv_fit_draw_count(fit: *const FlowivFit) -> usize {
    if fit.is_null() {
        0
    } else {
        (*fit).draws.n_draws()
    }
}

/// Copy one band column into `out` (capacity `cap` doubles). The flow band
/// is the default; set `first_stage` for the instrument equation, which
/// exists only on instrumented fits.
///
/// # Safety
/// `fit` must be a live handle and `out` must point to `cap` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn flowiv_fit_curve(
    fit: *const FlowivFit,
    curve: FlowivCurve,
    first_stage: bool,
    out: *mut f64,
    cap: usize,
) -> FlowivStatus {
    require!(fit, "fit");
    require!(out, "out");
    let fit = &*fit;
    let band = if first_stage {
        match &fit.first_stage {
            Some(b) => b,
            None => {
                set_error("fit has no first-stage band; it was exogenous");
                return FlowivStatus::InvalidArgument;
            }
        }
    } else {
        &fit.band
    };
    let column: &[f64] = match curve {
        FlowivCurve::Grid => &band.grid,
        FlowivCurve::Mean => &band.mean,
        FlowivCurve::PointwiseLo => &band.pw_lo,
        FlowivCurve::PointwiseHi => &band.pw_hi,
        FlowivCurve::SimultaneousLo => &band.sim_lo,
        FlowivCurve::SimultaneousHi => &band.sim_hi,
    };
    if cap < column.len() {
        set_error("output buffer shorter than the band grid");
        return FlowivStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(column.as_ptr(), out, column.len());
    FlowivStatus::Ok
}

/// Capacity analysis of the fitted flow band. Pass non-positive
/// `density_floor` or `window` to use the defaults (0.005 and 10 occupancy
/// points).
///
/// # Safety
/// `fit` must be a live handle and `out` a valid write target.
#[no_mangle]
pub unsafe extern "C" fn flowiv_fit_capacity(
    fit: *const FlowivFit,
    density_floor: f64,
    window: f64,
    out: *mut FlowivCapacity,
) -> FlowivStatus {
    require!(fit, "fit");
    require!(out, "out");
    let fit = &*fit;
    guarded(|| {
        let defaults = CapacityOptions::default();
        let opts = CapacityOptions {
            density_floor: if density_floor > 0.0 {
                density_floor
            } else {
                defaults.density_floor
            },
            window: if window > 0.0 { window } else { defaults.window },
        };
        match capacity_report(&fit.band, &fit.occupancies, &opts) {
            Ok(report) => {
                *out = FlowivCapacity {
                    o_critical: report.o_critical,
                    capacity_per_5min: report.capacity_per_5min,
                    capacity_per_hr: report.capacity_per_hr,
                    boundary: report.boundary,
                    has_drop: report.o_post_drop.is_some(),
                    o_post_drop: report.o_post_drop.unwrap_or(f64::NAN),
                    flow_post_drop: report.flow_post_drop.unwrap_or(f64::NAN),
                    drop_percent: report.drop_percent.unwrap_or(f64::NAN),
                    significant: match report.significant {
                        Tri::No => FlowivTri::No,
                        Tri::Yes => FlowivTri::Yes,
                        Tri::Indeterminate => FlowivTri::Indeterminate,
                    },
                    backward_bend: report.backward_bend,
                    supported_points: report.supported_points as u64,
                };
                FlowivStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
