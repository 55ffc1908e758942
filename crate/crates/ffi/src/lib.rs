//! C ABI for the mlrp toolkit.
//!
//! Every fallible function returns an [`MlrpStatus`]. On failure the message
//! is kept per thread and read back with [`mlrp_last_error_message`]. Objects
//! cross the boundary as opaque handles owned by the caller and released with
//! the matching `*_free` function. Panics never unwind into C; they surface
//! as [`MlrpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mlrp::diffnet::{Checkpoint, NetConfig, Points};
use mlrp::fdsolver::{solve_scattered, PmlSpec, WavefieldGrid};
use mlrp::gridmodel::{generate_layered_model, load_model, save_model, SourceSpec, VelocityModel};
use mlrp::meta::Adapted;
use mlrp::specfun;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlrpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Model = 4,
    Solver = 5,
    Network = 6,
    Panic = 7,
}

/// Velocity model handle.
pub struct MlrpModel(VelocityModel);

/// Complex wavefield on a model grid.
pub struct MlrpWavefield(WavefieldGrid);

/// Trained network loaded from a checkpoint.
pub struct MlrpNetwork {
    config: NetConfig,
    params: Adapted,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MlrpStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Self(MlrpStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Self(MlrpStatus::InvalidArgument, msg.into())
    }
}

impl From<mlrp::gridmodel::ModelError> for Failure {
    fn from(e: mlrp::gridmodel::ModelError) -> Self {
        let status = match e {
            mlrp::gridmodel::ModelError::Io { .. } => MlrpStatus::Io,
            _ => MlrpStatus::Model,
        };
        Self(status, e.to_string())
    }
}

impl From<mlrp::fdsolver::FdError> for Failure {
    fn from(e: mlrp::fdsolver::FdError) -> Self {
        let status = match e {
            mlrp::fdsolver::FdError::Io(_) => MlrpStatus::Io,
            mlrp::fdsolver::FdError::Invalid(_) | mlrp::fdsolver::FdError::Model(_) => MlrpStatus::InvalidArgument,
            _ => MlrpStatus::Solver,
        };
        Self(status, e.to_string())
    }
}

impl From<mlrp::diffnet::DiffnetError> for Failure {
    fn from(e: mlrp::diffnet::DiffnetError) -> Self {
        let status = match e {
            mlrp::diffnet::DiffnetError::Io { .. } => MlrpStatus::Io,
            _ => MlrpStatus::Network,
        };
        Self(status, e.to_string())
    }
}

impl From<mlrp::meta::MetaError> for Failure {
    fn from(e: mlrp::meta::MetaError) -> Self {
        Self(MlrpStatus::Network, e.to_string())
    }
}

impl From<specfun::SpecfunError> for Failure {
    fn from(e: specfun::SpecfunError) -> Self {
        Self(MlrpStatus::InvalidArgument, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure as the thread's last error and maps it to a
/// status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MlrpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            MlrpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            MlrpStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn mlrp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mlrp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out_value` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn mlrp_bessel_j0(x: f64, out_value: *mut f64) -> MlrpStatus {
    guard(|| {
        *out(out_value, "out_value")? = specfun::bessel_j0(x)?;
        Ok(())
    })
}

/// # Safety
/// `out_value` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn mlrp_bessel_y0(x: f64, out_value: *mut f64) -> MlrpStatus {
    guard(|| {
        *out(out_value, "out_value")? = specfun::bessel_y0(x)?;
        Ok(())
    })
}

/// Analytic background field at `(x, z)` for a source at `(xs, zs)`; all
/// lengths in km, `omega` in rad/s and `v0` in km/s.
///
/// # Safety
/// `out_re` and `out_im` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_background_wavefield(
    x: f64,
    z: f64,
    xs: f64,
    zs: f64,
    omega: f64,
    v0: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> MlrpStatus {
    guard(|| {
        let re = out(out_re, "out_re")?;
        let im = out(out_im, "out_im")?;
        let u = specfun::background_wavefield((x, z), (xs, zs), omega, v0)?;
        (*re, *im) = (u.re, u.im);
        Ok(())
    })
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Homogeneous model of `extent_x` by `extent_z` km at grid `spacing` km.
///
/// # Safety
/// `out_model` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_model_constant(
    extent_x: f64,
    extent_z: f64,
    spacing: f64,
    velocity: f64,
    out_model: *mut *mut MlrpModel,
) -> MlrpStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = boxed(MlrpModel(VelocityModel::constant((extent_x, extent_z), spacing, velocity)?));
        Ok(())
    })
}

/// Random horizontally layered model with `n_layers` layers.
///
/// # Safety
/// `out_model` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_model_layered(
    seed: u64,
    extent_x: f64,
    extent_z: f64,
    n_layers: usize,
    out_model: *mut *mut MlrpModel,
) -> MlrpStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = boxed(MlrpModel(generate_layered_model(seed, (extent_x, extent_z), n_layers)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be null or a NUL-terminated string; `out_model` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_model_load(path: *const c_char, out_model: *mut *mut MlrpModel) -> MlrpStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = boxed(MlrpModel(load_model(path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mlrp_model_save(model: *const MlrpModel, path: *const c_char) -> MlrpStatus {
    guard(|| {
        save_model(&handle(model, "model")?.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Grid node counts along x and z.
///
/// # Safety
/// `model` must be null or a live handle; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_model_dims(model: *const MlrpModel, out_nx: *mut usize, out_nz: *mut usize) -> MlrpStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        *out(out_nx, "out_nx")? = m.nx();
        *out(out_nz, "out_nz")? = m.nz();
        Ok(())
    })
}

/// Velocity in km/s at `(x, z)` km.
///
/// # Safety
/// `model` must be null or a live handle; `out_value` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_model_velocity_at(
    model: *const MlrpModel,
    x: f64,
    z: f64,
    out_value: *mut f64,
) -> MlrpStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        if !m.contains(x, z) {
            return Err(Failure::invalid(format!("({x}, {z}) lies outside the model")));
        }
        *out(out_value, "out_value")? = m.velocity_at(x, z);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlrp_model_free(model: *mut MlrpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// FD scattered field for a point source at `(xs, zs)` km and `freq` Hz, with
/// `pml_cells` absorbing cells outside each side of the model.
///
/// # Safety
/// `model` must be null or a live handle; `out_field` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_solve_scattered(
    model: *const MlrpModel,
    xs: f64,
    zs: f64,
    freq: f64,
    pml_cells: usize,
    out_field: *mut *mut MlrpWavefield,
) -> MlrpStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let slot = out(out_field, "out_field")?;
        if !(freq > 0.0 && freq.is_finite()) {
            return Err(Failure::invalid(format!("frequency must be positive, got {freq}")));
        }
        let pml = PmlSpec::with_thickness(pml_cells);
        let grid = solve_scattered(m, SourceSpec::new(xs, zs), 2.0 * std::f64::consts::PI * freq, &pml)?;
        *slot = boxed(MlrpWavefield(grid));
        Ok(())
    })
}

/// # Safety
/// `path` must be null or NUL-terminated; `out_field` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_wavefield_load(path: *const c_char, out_field: *mut *mut MlrpWavefield) -> MlrpStatus {
    guard(|| {
        let slot = out(out_field, "out_field")?;
        *slot = boxed(MlrpWavefield(WavefieldGrid::load(path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a live handle; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mlrp_wavefield_save(field: *const MlrpWavefield, path: *const c_char) -> MlrpStatus {
    guard(|| {
        handle(field, "field")?.0.save(path_arg(path)?)?;
        Ok(())
    })
}

/// Node counts and frequency in Hz.
///
/// # Safety
/// `field` must be null or a live handle; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_wavefield_dims(
    field: *const MlrpWavefield,
    out_nx: *mut usize,
    out_nz: *mut usize,
    out_freq: *mut f64,
) -> MlrpStatus {
    guard(|| {
        let w = &handle(field, "field")?.0;
        *out(out_nx, "out_nx")? = w.nx;
        *out(out_nz, "out_nz")? = w.nz;
        *out(out_freq, "out_freq")? = w.freq;
        Ok(())
    })
}

/// Copies the field as interleaved `(re, im)` pairs, z fastest. `len` is the
/// capacity of `buf` in doubles and must be at least `2 * nx * nz`.
///
/// # Safety
/// `field` must be null or a live handle; `buf` null or writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mlrp_wavefield_values(field: *const MlrpWavefield, buf: *mut f64, len: usize) -> MlrpStatus {
    guard(|| {
        let w = &handle(field, "field")?.0;
        let need = 2 * w.values.len();
        if len < need {
            return Err(Failure::invalid(format!("buffer holds {len} doubles, {need} needed")));
        }
        if buf.is_null() {
            return Err(Failure::null("buf"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (pair, v) in dst.chunks_exact_mut(2).zip(&w.values) {
            pair[0] = v.re;
            pair[1] = v.im;
        }
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlrp_wavefield_free(field: *mut MlrpWavefield) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Loads a checkpoint that can produce a wavefield: a fine-tuned LRPINN, a
/// meta-trained network with its hypernetwork, or a vanilla PINN.
///
/// # Safety
/// `path` must be null or NUL-terminated; `out_net` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_network_load(path: *const c_char, out_net: *mut *mut MlrpNetwork) -> MlrpStatus {
    guard(|| {
        let slot = out(out_net, "out_net")?;
        let (config, params) = Adapted::from_checkpoint(Checkpoint::load(path_arg(path)?)?)?;
        *slot = boxed(MlrpNetwork { config, params });
        Ok(())
    })
}

/// Predicts the scattered field at `n` points. Inputs are arrays of length
/// `n`; `out` receives `2 * n` doubles as interleaved `(re, im)` pairs.
///
/// # Safety
/// `net` must be null or a live handle; each input null or readable for `n`
/// doubles; `out` null or writable for `2 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mlrp_network_predict(
    net: *const MlrpNetwork,
    n: usize,
    x: *const f64,
    z: *const f64,
    xs: *const f64,
    zs: *const f64,
    freq: f64,
    out_values: *mut f64,
) -> MlrpStatus {
    guard(|| {
        let net = handle(net, "net")?;
        let points = Points { x: slice(x, n, "x")?, z: slice(z, n, "z")?, xs: slice(xs, n, "xs")?, zs: slice(zs, n, "zs")? };
        if n > 0 && out_values.is_null() {
            return Err(Failure::null("out_values"));
        }
        let pred = net.params.predict(&points, &net.config, freq)?;
        if n > 0 {
            let dst = std::slice::from_raw_parts_mut(out_values, 2 * n);
            for (pair, row) in dst.chunks_exact_mut(2).zip(pred.outer_iter()) {
                pair[0] = row[0];
                pair[1] = row[1];
            }
        }
        Ok(())
    })
}

/// Hidden layers, width and rank of a loaded network.
///
/// # Safety
/// `net` must be null or a live handle; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn mlrp_network_shape(
    net: *const MlrpNetwork,
    out_layers: *mut usize,
    out_width: *mut usize,
    out_rank: *mut usize,
) -> MlrpStatus {
    guard(|| {
        let net = handle(net, "net")?;
        let cfg = net.params.config(&net.config);
        *out(out_layers, "out_layers")? = cfg.layers;
        *out(out_width, "out_width")? = cfg.width;
        *out(out_rank, "out_rank")? = cfg.rank;
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlrp_network_free(net: *mut MlrpNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
