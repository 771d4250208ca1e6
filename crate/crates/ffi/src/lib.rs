//! C ABI over `volcraft`.
//!
//! Every function returns a [`VcStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and read with
//! [`vc_last_error_message`]. Models are opaque `VcModel*` handles owned by
//! the caller and released with [`vc_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use volcraft::calibration::{calibrate_latent, LatentCalibrationConfig};
use volcraft::error::ErrorCategory;
use volcraft::heston::{heston_call_price, HestonParams};
use volcraft::surfaces::{bs_call_price, implied_vol, Observation};
use volcraft::vae::VaeModel;
use volcraft::VolError;

/// Status codes; the numeric values match the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    Panic = 5,
}

/// Opaque model handle.
pub struct VcModel {
    inner: VaeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: VcStatus, message: impl Into<String>) -> VcStatus {
    set_error(message);
    status
}

fn from_vol(e: VolError) -> VcStatus {
    let status = match e.category() {
        ErrorCategory::Data => VcStatus::DataError,
        ErrorCategory::Numerical => VcStatus::NumericalError,
    };
    fail(status, e.to_string())
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), VcStatus>) -> VcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VcStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(VcStatus::Panic, "internal panic"),
    }
}

fn vol<T>(r: volcraft::Result<T>) -> Result<T, VcStatus> {
    r.map_err(from_vol)
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], VcStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(VcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], VcStatus> {
    if p.is_null() {
        return Err(fail(VcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn model<'a>(m: *const VcModel) -> Result<&'a VaeModel, VcStatus> {
    m.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| fail(VcStatus::NullPointer, "model handle is null"))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), VcStatus> {
    if out.is_null() {
        return Err(fail(VcStatus::NullPointer, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), VcStatus> {
    if got != want {
        return Err(fail(
            VcStatus::InvalidArgument,
            format!("{what} has length {got}, expected {want}"),
        ));
    }
    Ok(())
}

/// Last error message on this thread, or NULL. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_model_load(path: *const c_char, out: *mut *mut VcModel) -> VcStatus {
    guard(|| {
        if path.is_null() {
            return Err(fail(VcStatus::NullPointer, "path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(VcStatus::InvalidArgument, "path is not UTF-8"))?;
        let inner = vol(VaeModel::load(path))?;
        write(out, Box::into_raw(Box::new(VcModel { inner })))
    })
}

/// Parse a model from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_model_from_json(
    json: *const c_char,
    out: *mut *mut VcModel,
) -> VcStatus {
    guard(|| {
        if json.is_null() {
            return Err(fail(VcStatus::NullPointer, "json is null"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| fail(VcStatus::InvalidArgument, "json is not UTF-8"))?;
        let inner = vol(VaeModel::from_json(text))?;
        write(out, Box::into_raw(Box::new(VcModel { inner })))
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from a `vc_model_*` constructor and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn vc_model_free(model: *mut VcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent dimension and number of grid points.
///
/// # Safety
/// `model` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_model_dims(
    model: *const VcModel,
    latent_dim: *mut usize,
    grid_len: *mut usize,
) -> VcStatus {
    guard(|| {
        let m = self::model(model)?;
        write(latent_dim, m.latent_dim())?;
        write(grid_len, m.grid().len())
    })
}

/// Decode `z` onto the model grid, maturity-major.
///
/// # Safety
/// `z` holds `z_len` doubles; `out_vols` has room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_model_decode(
    model: *const VcModel,
    z: *const f64,
    z_len: usize,
    out_vols: *mut f64,
    out_len: usize,
) -> VcStatus {
    guard(|| {
        let m = self::model(model)?;
        check_len(z_len, m.latent_dim(), "z")?;
        check_len(out_len, m.grid().len(), "out_vols")?;
        let vols = vol(m.decode_surface(slice(z, z_len, "z")?))?;
        slice_mut(out_vols, out_len, "out_vols")?.copy_from_slice(&vols);
        Ok(())
    })
}

/// Decode `z` at arbitrary `(maturity, delta)` points.
///
/// # Safety
/// `maturities`, `deltas` and `out_vols` each hold `n` doubles; `z` holds `z_len`.
#[no_mangle]
pub unsafe extern "C" fn vc_model_decode_at(
    model: *const VcModel,
    z: *const f64,
    z_len: usize,
    maturities: *const f64,
    deltas: *const f64,
    n: usize,
    out_vols: *mut f64,
) -> VcStatus {
    guard(|| {
        let m = self::model(model)?;
        check_len(z_len, m.latent_dim(), "z")?;
        let coords: Vec<(f64, f64)> = slice(maturities, n, "maturities")?
            .iter()
            .copied()
            .zip(slice(deltas, n, "deltas")?.iter().copied())
            .collect();
        let vols = vol(m.decode_at(slice(z, z_len, "z")?, &coords))?;
        slice_mut(out_vols, n, "out_vols")?.copy_from_slice(&vols);
        Ok(())
    })
}

/// Encoder mean of a full grid surface.
///
/// # Safety
/// `vols` holds `n` doubles; `out_mean` has room for `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_model_encode(
    model: *const VcModel,
    vols: *const f64,
    n: usize,
    out_mean: *mut f64,
    d: usize,
) -> VcStatus {
    guard(|| {
        let m = self::model(model)?;
        check_len(d, m.latent_dim(), "out_mean")?;
        let code = vol(m.encode(slice(vols, n, "vols")?))?;
        slice_mut(out_mean, d, "out_mean")?.copy_from_slice(&code.mean);
        Ok(())
    })
}

/// Complete a surface from `n` observations by multi-start latent calibration.
///
/// Writes the fitted latent point, the completed grid vols and the objective value.
///
/// # Safety
/// `maturities`, `deltas`, `vols` hold `n` doubles; `out_z` has `z_len` and
/// `out_vols` `out_len` doubles of room; `out_objective` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn vc_model_complete(
    model: *const VcModel,
    maturities: *const f64,
    deltas: *const f64,
    vols: *const f64,
    n: usize,
    starts: usize,
    seed: u64,
    out_z: *mut f64,
    z_len: usize,
    out_vols: *mut f64,
    out_len: usize,
    out_objective: *mut f64,
) -> VcStatus {
    guard(|| {
        let m = self::model(model)?;
        check_len(z_len, m.latent_dim(), "out_z")?;
        check_len(out_len, m.grid().len(), "out_vols")?;
        let (t, d, v) = (
            slice(maturities, n, "maturities")?,
            slice(deltas, n, "deltas")?,
            slice(vols, n, "vols")?,
        );
        let obs: Vec<Observation> = (0..n)
            .map(|i| Observation {
                maturity: t[i],
                delta: d[i],
                vol: v[i],
            })
            .collect();
        let config = LatentCalibrationConfig {
            starts,
            seed,
            ..LatentCalibrationConfig::default()
        };
        let fit = vol(calibrate_latent(m, &obs, &config))?;
        slice_mut(out_z, z_len, "out_z")?.copy_from_slice(&fit.z);
        slice_mut(out_vols, out_len, "out_vols")?.copy_from_slice(fit.completed_surface.as_flat());
        if !out_objective.is_null() {
            out_objective.write(fit.objective_value);
        }
        Ok(())
    })
}

/// Black-Scholes call price.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_bs_call_price(
    spot: f64,
    strike: f64,
    rate: f64,
    maturity: f64,
    vol: f64,
    out: *mut f64,
) -> VcStatus {
    guard(|| {
        write(
            out,
            self::vol(bs_call_price(spot, strike, rate, maturity, vol))?,
        )
    })
}

/// Black-Scholes implied vol of a call price.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_implied_vol(
    price: f64,
    spot: f64,
    strike: f64,
    rate: f64,
    maturity: f64,
    out: *mut f64,
) -> VcStatus {
    guard(|| write(out, vol(implied_vol(price, spot, strike, rate, maturity))?))
}

/// Semi-analytic Heston call price.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_heston_call_price(
    kappa: f64,
    theta: f64,
    sigma_v: f64,
    rho: f64,
    v0: f64,
    rate: f64,
    spot: f64,
    strike: f64,
    maturity: f64,
    out: *mut f64,
) -> VcStatus {
    guard(|| {
        let params = vol(HestonParams::new(kappa, theta, sigma_v, rho, v0, rate))?;
        write(
            out,
            vol(heston_call_price(&params, spot, strike, maturity))?,
        )
    })
}
