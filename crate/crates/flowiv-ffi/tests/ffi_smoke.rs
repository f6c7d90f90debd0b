//! Drives the C entry points the way a foreign caller would: through raw
//! pointers and status codes.

use std::ffi::CStr;
use std::ptr;

use flowiv_ffi::{
    flowiv_fit, flowiv_fit_capacity, flowiv_fit_curve, flowiv_fit_draw_count,
    flowiv_fit_free, flowiv_fit_grid_len, flowiv_fit_options_default,
    flowiv_last_error_message, flowiv_sample_free, flowiv_sample_len, flowiv_sample_new,
    flowiv_version, FlowivCapacity, FlowivCurve, FlowivFit, FlowivSample, FlowivStatus,
    FlowivTri,
};

/// Deterministic synthetic detector data with a mild flow-occupancy curve
/// and a correlated instrument.
fn make_data(n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut q = Vec::with_capacity(n);
    let mut o = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut unit = move || {
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        (state.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..n {
        let zi = unit() * 20.0;
        let oi = 2.0 + 0.8 * zi + 4.0 * (unit() - 0.5);
        let qi = 5.0 + 2.0 * oi - 0.04 * oi * oi + 2.0 * (unit() - 0.5);
        q.push(qi);
        o.push(oi);
        z.push(zi);
    }
    (q, o, z)
}

unsafe fn new_sample(q: &[f64], o: &[f64], z: &[f64]) -> *mut FlowivSample {
    let mut handle: *mut FlowivSample = ptr::null_mut();
    let status = flowiv_sample_new(q.as_ptr(), o.as_ptr(), z.as_ptr(), q.len(), &mut handle);
    assert_eq!(status, FlowivStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn small_options(seed: u64) -> flowiv_ffi::FlowivFitOptions {
    let mut opts = flowiv_fit_options_default();
    opts.draws = 400;
    opts.burn_in = 100;
    opts.thin = 3;
    opts.grid_points = 50;
    opts.interior_knots = 8;
    opts.seed = seed;
    opts
}

#[test]
fn full_fit_roundtrip() {
    unsafe {
        let (q, o, z) = make_data(600);
        let sample = new_sample(&q, &o, &z);
        assert_eq!(flowiv_sample_len(sample), 600);

        let opts = small_options(9);
        let mut fit: *mut FlowivFit = ptr::null_mut();
        let status = flowiv_fit(sample, &opts, &mut fit);
        assert_eq!(status, FlowivStatus::Ok, "fit failed: {}", last_error());

        let g = flowiv_fit_grid_len(fit);
        assert_eq!(g, 50);
        assert_eq!(flowiv_fit_draw_count(fit), 100);

        let mut grid = vec![0.0; g];
        let mut lo = vec![0.0; g];
        let mut mean = vec![0.0; g];
        let mut hi = vec![0.0; g];
        for (kind, buf) in [
            (FlowivCurve::Grid, &mut grid),
            (FlowivCurve::SimultaneousLo, &mut lo),
            (FlowivCurve::Mean, &mut mean),
            (FlowivCurve::SimultaneousHi, &mut hi),
        ] {
            let status = flowiv_fit_curve(fit, kind, false, buf.as_mut_ptr(), g);
            assert_eq!(status, FlowivStatus::Ok);
        }
        for j in 0..g {
            assert!(grid[j].is_finite());
            assert!(lo[j] <= mean[j] && mean[j] <= hi[j], "band order at {j}");
            if j > 0 {
                assert!(grid[j] > grid[j - 1], "grid must increase");
            }
        }

        // The instrumented fit also carries a first-stage band.
        let status =
            flowiv_fit_curve(fit, FlowivCurve::Mean, true, mean.as_mut_ptr(), g);
        assert_eq!(status, FlowivStatus::Ok);

        let mut cap = std::mem::zeroed::<FlowivCapacity>();
        let status = flowiv_fit_capacity(fit, 0.0, 0.0, &mut cap);
        assert_eq!(status, FlowivStatus::Ok, "capacity: {}", last_error());
        assert_eq!(cap.capacity_per_hr, 12.0 * cap.capacity_per_5min);
        assert!(cap.supported_points > 0);
        assert!(matches!(
            cap.significant,
            FlowivTri::No | FlowivTri::Yes | FlowivTri::Indeterminate
        ));

        flowiv_fit_free(fit);
        flowiv_sample_free(sample);
    }
}

#[test]
fn same_seed_gives_identical_curves() {
    unsafe {
        let (q, o, z) = make_data(400);
        let sample = new_sample(&q, &o, &z);
        let opts = small_options(31);

        let mut curves = Vec::new();
        for _ in 0..2 {
            let mut fit: *mut FlowivFit = ptr::null_mut();
            assert_eq!(flowiv_fit(sample, &opts, &mut fit), FlowivStatus::Ok);
            let g = flowiv_fit_grid_len(fit);
            let mut mean = vec![0.0; g];
            assert_eq!(
                flowiv_fit_curve(fit, FlowivCurve::Mean, false, mean.as_mut_ptr(), g),
                FlowivStatus::Ok
            );
            curves.push(mean);
            flowiv_fit_free(fit);
        }
        assert_eq!(curves[0], curves[1]);
        flowiv_sample_free(sample);
    }
}

#[test]
fn exogenous_fit_has_no_first_stage() {
    unsafe {
        let (q, o, z) = make_data(400);
        let sample = new_sample(&q, &o, &z);
        let mut opts = small_options(7);
        opts.exogenous = true;

        let mut fit: *mut FlowivFit = ptr::null_mut();
        assert_eq!(flowiv_fit(sample, &opts, &mut fit), FlowivStatus::Ok);
        let g = flowiv_fit_grid_len(fit);
        let mut buf = vec![0.0; g];
        let status = flowiv_fit_curve(fit, FlowivCurve::Mean, true, buf.as_mut_ptr(), g);
        assert_eq!(status, FlowivStatus::InvalidArgument);
        assert!(last_error().contains("first-stage"));

        flowiv_fit_free(fit);
        flowiv_sample_free(sample);
    }
}

#[test]
fn error_paths_report_status_and_message() {
    unsafe {
        // Null pointers are refused outright.
        let status = flowiv_sample_new(
            ptr::null(),
            ptr::null(),
            ptr::null(),
            0,
            ptr::null_mut(),
        );
        assert_eq!(status, FlowivStatus::NullArgument);

        // Non-finite data is rejected with a message.
        let q = [1.0, f64::NAN];
        let o = [1.0, 2.0];
        let z = [1.0, 2.0];
        let mut handle: *mut FlowivSample = ptr::null_mut();
        let status = flowiv_sample_new(q.as_ptr(), o.as_ptr(), z.as_ptr(), 2, &mut handle);
        assert_eq!(status, FlowivStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        // Bad sampler settings fail before any work happens.
        let (q, o, z) = make_data(300);
        let sample = new_sample(&q, &o, &z);
        let mut opts = small_options(1);
        opts.delta = 0.0;
        let mut fit: *mut FlowivFit = ptr::null_mut();
        let status = flowiv_fit(sample, &opts, &mut fit);
        assert_eq!(status, FlowivStatus::InvalidArgument);
        assert!(fit.is_null());

        // Undersized output buffers are caught, not overrun.
        opts = small_options(1);
        assert_eq!(flowiv_fit(sample, &opts, &mut fit), FlowivStatus::Ok);
        let mut tiny = [0.0f64; 3];
        let status =
            flowiv_fit_curve(fit, FlowivCurve::Mean, false, tiny.as_mut_ptr(), tiny.len());
        assert_eq!(status, FlowivStatus::BufferTooSmall);

        // Frees accept null.
        flowiv_fit_free(ptr::null_mut());
        flowiv_sample_free(ptr::null_mut());

        flowiv_fit_free(fit);
        flowiv_sample_free(sample);
    }
}

#[test]
fn version_and_header_are_published() {
    let version = unsafe { CStr::from_ptr(flowiv_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));

    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/flowiv.h");
    let text = std::fs::read_to_string(header).expect("generated header must exist");
    for symbol in [
        "flowiv_sample_new",
        "flowiv_fit",
        "flowiv_fit_curve",
        "flowiv_fit_capacity",
        "flowiv_last_error_message",
        "FLOWIV_STATUS_OK",
    ] {
        assert!(text.contains(symbol), "header is missing {symbol}");
    }
}

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(flowiv_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}
