//! C interface to no2est.
//!
//! Every function returns a [`No2Status`]; on failure the message is
//! available from [`no2_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::path::Path;
use std::ptr;

use chrono::NaiveDate;
use no2est::artifacts;
use no2est::config::RunConfig;
use no2est::fit::{fit_linear, DesignRow};
use no2est::geom::Point;
use no2est::ingest;
use no2est::interp::{idw, DailySeries};
use no2est::pipeline;
use no2est::predict::{FittedModel, PredictionMode, Predictor, Target};
use no2est::traffic::{self, RingSpec, SubSegment};
use no2est::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum No2Status {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

/// A road network already split into sub-segments.
pub struct No2Roads {
    subsegments: Vec<SubSegment>,
}

/// A fitted model ready for prediction.
pub struct No2Model {
    predictor: Predictor,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> No2Status {
    match e {
        Error::Io { .. } => No2Status::Io,
        e if e.is_numerical() => No2Status::Numerical,
        _ => No2Status::InvalidInput,
    }
}

struct Fail(No2Status, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(No2Status::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(No2Status::InvalidInput, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Fail> + UnwindSafe>(f: F) -> No2Status {
    match catch_unwind(f) {
        Ok(Ok(())) => {
            set_error("");
            No2Status::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&format!("internal error: {msg}"));
            No2Status::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{name} is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn no2_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn no2_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a roads CSV and splits it into pieces of at most about `target_len`
/// meters.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn no2_roads_load(path: *const c_char, target_len: f64, out: *mut *mut No2Roads) -> No2Status {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let roads = ingest::load_roads(path_arg(path, "path")?)?;
        let subsegments = traffic::subdivide_all(&roads, target_len)?;
        *out = Box::into_raw(Box::new(No2Roads { subsegments }));
        Ok(())
    })
}

/// # Safety
/// `roads` must come from [`no2_roads_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn no2_roads_free(roads: *mut No2Roads) {
    if !roads.is_null() {
        drop(Box::from_raw(roads));
    }
}

/// Number of sub-segments in the network.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn no2_roads_len(roads: *const No2Roads, out_len: *mut usize) -> No2Status {
    guard(|| {
        let roads = roads.as_ref().ok_or_else(|| null("roads"))?;
        let out = out_len.as_mut().ok_or_else(|| null("out_len"))?;
        *out = roads.subsegments.len();
        Ok(())
    })
}

/// Ring exposure at `(x, y)`. `boundaries` holds `n_boundaries` ascending
/// distances starting at 0; `out_w` receives `n_boundaries - 1` values
/// divided by `scale`.
///
/// # Safety
/// Arrays must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn no2_exposure(
    roads: *const No2Roads,
    x: f64,
    y: f64,
    boundaries: *const f64,
    n_boundaries: usize,
    scale: f64,
    out_w: *mut f64,
) -> No2Status {
    guard(|| {
        let roads = roads.as_ref().ok_or_else(|| null("roads"))?;
        let rings = RingSpec::new(slice_arg(boundaries, n_boundaries, "boundaries")?.to_vec())?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(invalid(format!("scale must be positive, got {scale}")));
        }
        if out_w.is_null() {
            return Err(null("out_w"));
        }
        let p = Point::new(x, y);
        if !p.is_finite() {
            return Err(invalid("location is not finite"));
        }
        let w = traffic::exposure_at(p, &roads.subsegments, &rings);
        let out = std::slice::from_raw_parts_mut(out_w, w.len());
        for (o, v) in out.iter_mut().zip(w) {
            *o = v / scale;
        }
        Ok(())
    })
}

/// Inverse-distance interpolation of one day's station values at `(x, y)`.
/// NaN entries in `values` mark stations without a value that day.
///
/// # Safety
/// Arrays must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn no2_idw(
    station_x: *const f64,
    station_y: *const f64,
    values: *const f64,
    n: usize,
    x: f64,
    y: f64,
    power: f64,
    out: *mut f64,
) -> No2Status {
    guard(|| {
        let sx = slice_arg(station_x, n, "station_x")?;
        let sy = slice_arg(station_y, n, "station_y")?;
        let v = slice_arg(values, n, "values")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let day = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let stations: Vec<DailySeries> = (0..n)
            .map(|i| DailySeries {
                station_id: i.to_string(),
                location: Point::new(sx[i], sy[i]),
                values: if v[i].is_nan() { Default::default() } else { [(day, v[i])].into_iter().collect() },
            })
            .collect();
        *out = idw(Point::new(x, y), &stations, day, power)?;
        Ok(())
    })
}

/// Pooled OLS of `y` on `[1, x, w]`. `w` is row-major `n x k`. `out_coef` and
/// `out_se` receive `k + 2` values; `out_adj_r2` may be null.
///
/// # Safety
/// Arrays must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn no2_fit_linear(
    y: *const f64,
    x: *const f64,
    w: *const f64,
    n: usize,
    k: usize,
    out_coef: *mut f64,
    out_se: *mut f64,
    out_adj_r2: *mut f64,
) -> No2Status {
    guard(|| {
        let y = slice_arg(y, n, "y")?;
        let x = slice_arg(x, n, "x")?;
        let w = slice_arg(w, n * k, "w")?;
        if out_coef.is_null() || out_se.is_null() {
            return Err(null("out_coef/out_se"));
        }
        let rows: Vec<DesignRow> = (0..n)
            .map(|i| DesignRow { site_id: i.to_string(), y: y[i], x: x[i], w: w[i * k..(i + 1) * k].to_vec() })
            .collect();
        let f = fit_linear(&rows)?;
        let coef = std::slice::from_raw_parts_mut(out_coef, k + 2);
        let se = std::slice::from_raw_parts_mut(out_se, k + 2);
        for (j, c) in f.coefficients.iter().enumerate() {
            coef[j] = c.estimate;
            se[j] = c.std_error;
        }
        if let Some(a) = out_adj_r2.as_mut() {
            *a = f.adjusted_r2;
        }
        Ok(())
    })
}

/// Loads a model from `fit.json`; spatial fits also need `draws.csv`
/// (`draws_csv` may be null otherwise).
///
/// # Safety
/// Strings must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn no2_model_load(
    fit_json: *const c_char,
    draws_csv: *const c_char,
    out: *mut *mut No2Model,
) -> No2Status {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let fit = path_arg(fit_json, "fit_json")?;
        let draws = if draws_csv.is_null() { None } else { Some(path_arg(draws_csv, "draws_csv")?) };
        let (_, model): (_, FittedModel) = artifacts::load_model(fit, draws)?;
        let predictor = Predictor::new(&model)?;
        *out = Box::into_raw(Box::new(No2Model { predictor }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`no2_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn no2_model_free(model: *mut No2Model) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of exposure covariates the model expects.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn no2_model_n_exposures(model: *const No2Model, out: *mut usize) -> No2Status {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.predictor.n_exposures();
        Ok(())
    })
}

/// Daily prediction at a site. `site_id` may be null for a new site; pass
/// NaN coordinates when the location is unknown. `conditional` selects
/// kriged random intercepts at new sites (spatial models).
///
/// # Safety
/// `w` must hold `k` elements; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn no2_model_predict(
    model: *const No2Model,
    site_id: *const c_char,
    x: f64,
    y: f64,
    idw_ppb: f64,
    w: *const f64,
    k: usize,
    conditional: bool,
    out_log: *mut f64,
    out_ppb: *mut f64,
) -> No2Status {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let id = if site_id.is_null() {
            ""
        } else {
            CStr::from_ptr(site_id).to_str().map_err(|_| invalid("site_id is not UTF-8"))?
        };
        let location = Point::new(x, y);
        let target = Target { site_id: id, location: location.is_finite().then_some(location) };
        let mode = if conditional { PredictionMode::Conditional } else { PredictionMode::Marginal };
        let b = m.predictor.random_intercept(&target, mode)?;
        let log = m.predictor.linear_predictor(b, idw_ppb, slice_arg(w, k, "w")?)?;
        if let Some(o) = out_log.as_mut() {
            *o = log;
        }
        if let Some(o) = out_ppb.as_mut() {
            *o = log.exp();
        }
        Ok(())
    })
}

/// Runs every pipeline stage from a config file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn no2_run_pipeline(config_path: *const c_char) -> No2Status {
    guard(|| {
        let cfg = RunConfig::load(path_arg(config_path, "config_path")?)?;
        pipeline::run_pipeline(cfg).map_err(|e| Fail(status_of(&e.source), e.to_string()))?;
        Ok(())
    })
}
