//! C ABI over trajflow checkpoints.
//!
//! Every function returns a [`TfStatus`]. On failure a message is kept per
//! thread and can be read with [`tf_last_error_message`]. Positions are
//! interleaved `x, y` pairs in world meters.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajflow::data::{Point, TrajectoryWindow};
use trajflow::inference::{additive_fusion, density_raster, GridSpec};
use trajflow::model::{load_checkpoint, DensityUnits, FlowModel, Formulation};
use trajflow::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    Version = 6,
    Io = 7,
    Panic = 8,
}

/// Opaque loaded model.
pub struct TfModel {
    inner: FlowModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> TfStatus {
    match err {
        Error::Config(_) => TfStatus::Config,
        Error::Contract(_) | Error::Range { .. } => TfStatus::InvalidArgument,
        Error::Version(_) => TfStatus::Version,
        Error::Io { .. } => TfStatus::Io,
        Error::Numeric(_) | Error::Nonconvergence { .. } | Error::Divergence { .. } | Error::Domain(_) => {
            TfStatus::Numeric
        }
        Error::Format(_) | Error::Parse { .. } | Error::Degenerate(_) | Error::Dimension { .. } => TfStatus::Data,
    }
}

struct Failure(TfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TfStatus::InvalidArgument, msg.into())
}

unsafe fn model_ref<'a>(m: *const TfModel) -> Result<&'a FlowModel, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn points<'a>(xy: *const f64, n: usize, what: &str) -> Result<Vec<Point>, Failure> {
    if xy.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(xy, 2 * n).chunks(2).map(|c| [c[0], c[1]]).collect())
}

unsafe fn out_slice<'a>(out: *mut f64, n: usize) -> Result<&'a mut [f64], Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    Ok(slice::from_raw_parts_mut(out, n))
}

/// Preprocessed window from world-space observations.
unsafe fn window(model: &FlowModel, obs_xy: *const f64, n_obs: usize, frame_period: f64) -> Result<TrajectoryWindow, Failure> {
    let obs = points(obs_xy, n_obs, "observations")?;
    if !(frame_period > 0.0) {
        return Err(invalid("frame_period must be positive"));
    }
    let raw = TrajectoryWindow::new("ffi", "ffi", 0, frame_period, obs, Vec::new())?;
    Ok(model.pipeline.apply(raw)?)
}

/// Most recent error message on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a JSON checkpoint. `*out` receives a handle to free with
/// [`tf_model_free`].
///
/// # Safety
/// `path` must be a valid nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_load(path: *const c_char, out: *mut *mut TfModel) -> TfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let inner = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(TfModel { inner }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`tf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_model_free(model: *mut TfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Forecast horizon `S` in steps.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_horizon(model: *const TfModel, out: *mut usize) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.horizon();
        Ok(())
    })
}

/// 1 for a marginal model, 0 for a joint one.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_is_marginal(model: *const TfModel, out: *mut i32) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = i32::from(m.config.formulation == Formulation::Marginal);
        Ok(())
    })
}

/// World-space log-density at `n_query` points, forecast time `s ∈ (0, S]`.
///
/// # Safety
/// `obs_xy` holds `2·n_obs` values, `query_xy` holds `2·n_query` and `out`
/// has room for `n_query`.
#[no_mangle]
pub unsafe extern "C" fn tf_model_log_prob(
    model: *const TfModel,
    obs_xy: *const f64,
    n_obs: usize,
    frame_period: f64,
    query_xy: *const f64,
    n_query: usize,
    s: f64,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let w = window(m, obs_xy, n_obs, frame_period)?;
        let q = points(query_xy, n_query, "queries")?;
        let out = out_slice(out, n_query)?;
        let lp = m.log_prob_world_points(&w, &q, s, DensityUnits::World)?;
        out.copy_from_slice(&lp);
        Ok(())
    })
}

/// `n` world-space samples at forecast time `s`, written as `2·n` values.
///
/// # Safety
/// `obs_xy` holds `2·n_obs` values and `out_xy` has room for `2·n`.
#[no_mangle]
pub unsafe extern "C" fn tf_model_sample(
    model: *const TfModel,
    obs_xy: *const f64,
    n_obs: usize,
    frame_period: f64,
    s: f64,
    n: usize,
    seed: u64,
    out_xy: *mut f64,
) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let w = window(m, obs_xy, n_obs, frame_period)?;
        let out = out_slice(out_xy, 2 * n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = m.sample_future(&w, s, n, &mut rng)?;
        for (o, p) in out.chunks_mut(2).zip(pts) {
            o.copy_from_slice(&p);
        }
        Ok(())
    })
}

/// Grid extent and resolution, mirroring the library's grid spec.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TfGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: usize,
}

impl From<TfGridSpec> for GridSpec {
    fn from(g: TfGridSpec) -> Self {
        GridSpec {
            x_min: g.x_min,
            x_max: g.x_max,
            y_min: g.y_min,
            y_max: g.y_max,
            resolution: g.resolution,
        }
    }
}

/// Occupancy over a grid, `resolution²` values, row 0 at the lowest `y`.
/// With `oversample == 0` this is the density at time `s`; otherwise it is
/// the fused grid over the whole horizon and `s` is ignored.
///
/// # Safety
/// `obs_xy` holds `2·n_obs` values and `out` has room for `resolution²`.
#[no_mangle]
pub unsafe extern "C" fn tf_model_grid(
    model: *const TfModel,
    obs_xy: *const f64,
    n_obs: usize,
    frame_period: f64,
    spec: TfGridSpec,
    s: f64,
    oversample: usize,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let w = window(m, obs_xy, n_obs, frame_period)?;
        let spec = GridSpec::from(spec);
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(invalid(errs.join("; ")));
        }
        let n = spec.resolution;
        let out = out_slice(out, n.checked_mul(n).ok_or_else(|| invalid("resolution overflows"))?)?;
        let grid = if oversample == 0 {
            density_raster(m, &w, s, &spec)?
        } else {
            additive_fusion(m, &w, oversample, &spec)?
        };
        out.copy_from_slice(&grid.values);
        Ok(())
    })
}
