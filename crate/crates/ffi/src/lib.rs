//! C bindings for flowlab.
//!
//! Every fallible function returns a [`FlowlabStatus`]. On failure the
//! message is kept per thread and can be read with
//! [`flowlab_last_error_message`] until the next failing call on that thread.
//! Objects cross the boundary as opaque pointers created by a `*_new`
//! function and released by the matching `*_free`. Strings returned to the
//! caller are owned and must be released with [`flowlab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use flowlab::flow::shift_factor;
use flowlab::lab::{self, Check, ExperimentSpec, RunOptions};
use flowlab::manifold::{make_embedding, GlyphDistribution, Letter, OrthonormalEmbedding};
use flowlab::numeric::Tensor;
use flowlab::LabError;

/// Result of a call. The first four values match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowlabStatus {
    Ok = 0,
    CheckFailed = 1,
    InvalidConfig = 2,
    RuntimeFailure = 3,
    NullArgument = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

/// Built-in checks for [`flowlab_verify`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowlabCheck {
    Decomposition = 0,
    Gradients = 1,
    Shift = 2,
}

/// Opaque sampler for the built-in glyph distribution.
pub struct FlowlabGlyph(GlyphDistribution);

/// Opaque `h × l` orthonormal embedding.
pub struct FlowlabEmbedding(OrthonormalEmbedding);

/// Opaque validated experiment spec.
pub struct FlowlabSpec(ExperimentSpec);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Lab(LabError),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Lab(e)
    }
}

fn status_of(e: &LabError) -> FlowlabStatus {
    match e.exit_code() {
        1 => FlowlabStatus::CheckFailed,
        2 => FlowlabStatus::InvalidConfig,
        _ => FlowlabStatus::RuntimeFailure,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FlowlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlowlabStatus::Ok,
        Ok(Err(Failure::Lab(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(arg))) => {
            set_error(format!("`{arg}` must not be NULL"));
            FlowlabStatus::NullArgument
        }
        Ok(Err(Failure::Utf8(arg))) => {
            set_error(format!("`{arg}` is not valid UTF-8"));
            FlowlabStatus::InvalidUtf8
        }
        Err(_) => {
            set_error("internal panic");
            FlowlabStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, name: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("interior NULs removed")
        .into_raw()
}

/// Message of the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn flowlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn flowlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn flowlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Timestep shift factor `√(channels·patch² / 16)`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn flowlab_shift_factor(channels: u64, patch: u64, out: *mut f64) -> FlowlabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = shift_factor(channels, patch)?;
        Ok(())
    })
}

/// Load the built-in "PS" glyph distribution.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn flowlab_glyph_new(out: *mut *mut FlowlabGlyph) -> FlowlabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(FlowlabGlyph(GlyphDistribution::builtin()?)));
        Ok(())
    })
}

/// Draw `n` points. `points` receives `2n` doubles in row-major order and
/// `labels`, if not NULL, receives `n` bytes (0 for P, 1 for S).
///
/// # Safety
/// `glyph` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn flowlab_glyph_sample(
    glyph: *const FlowlabGlyph,
    n: usize,
    seed: u64,
    points: *mut f64,
    labels: *mut u8,
) -> FlowlabStatus {
    guard(|| {
        let g = handle(glyph, "glyph")?;
        let dst = slice_mut(points, 2 * n, "points")?;
        let sample = g.0.sample(n, seed)?;
        dst.copy_from_slice(sample.points.data());
        if !labels.is_null() {
            let out = std::slice::from_raw_parts_mut(labels, n);
            for (o, l) in out.iter_mut().zip(&sample.labels) {
                *o = (*l == Letter::S) as u8;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `glyph` must be NULL or a handle from [`flowlab_glyph_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowlab_glyph_free(glyph: *mut FlowlabGlyph) {
    if !glyph.is_null() {
        drop(Box::from_raw(glyph));
    }
}

/// Random `h × l` matrix with orthonormal columns, `1 ≤ l < h`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn flowlab_embedding_new(
    h: usize,
    l: usize,
    seed: u64,
    out: *mut *mut FlowlabEmbedding,
) -> FlowlabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(FlowlabEmbedding(make_embedding(h, l, seed)?)));
        Ok(())
    })
}

/// Ambient and intrinsic dimensions of an embedding.
///
/// # Safety
/// `q` must be a live handle; `h` and `l` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn flowlab_embedding_dims(
    q: *const FlowlabEmbedding,
    h: *mut usize,
    l: *mut usize,
) -> FlowlabStatus {
    guard(|| {
        let q = handle(q, "q")?;
        *out_ptr(h, "h")? = q.0.ambient_dim();
        *out_ptr(l, "l")? = q.0.intrinsic_dim();
        Ok(())
    })
}

/// Map `n` rows of width `l` to width `h` (`x = Qz`).
///
/// # Safety
/// `q` must be a live handle; `z` holds `n·l` doubles, `x` room for `n·h`.
#[no_mangle]
pub unsafe extern "C" fn flowlab_embedding_embed(
    q: *const FlowlabEmbedding,
    z: *const f64,
    n: usize,
    x: *mut f64,
) -> FlowlabStatus {
    guard(|| {
        let q = &handle(q, "q")?.0;
        let (h, l) = (q.ambient_dim(), q.intrinsic_dim());
        let src = Tensor::matrix(n, l, slice(z, n * l, "z")?.to_vec())?;
        slice_mut(x, n * h, "x")?.copy_from_slice(q.embed(&src)?.data());
        Ok(())
    })
}

/// Map `n` rows of width `h` to width `l` (`z = Qᵀx`).
///
/// # Safety
/// `q` must be a live handle; `x` holds `n·h` doubles, `z` room for `n·l`.
#[no_mangle]
pub unsafe extern "C" fn flowlab_embedding_project(
    q: *const FlowlabEmbedding,
    x: *const f64,
    n: usize,
    z: *mut f64,
) -> FlowlabStatus {
    guard(|| {
        let q = &handle(q, "q")?.0;
        let (h, l) = (q.ambient_dim(), q.intrinsic_dim());
        let src = Tensor::matrix(n, h, slice(x, n * h, "x")?.to_vec())?;
        slice_mut(z, n * l, "z")?.copy_from_slice(q.project(&src)?.data());
        Ok(())
    })
}

/// # Safety
/// `q` must be NULL or a handle from [`flowlab_embedding_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowlab_embedding_free(q: *mut FlowlabEmbedding) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Parse and validate a JSON experiment spec.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn flowlab_spec_from_json(json: *const c_char, out: *mut *mut FlowlabSpec) -> FlowlabStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(FlowlabSpec(ExperimentSpec::from_json(text)?)));
        Ok(())
    })
}

/// Hex SHA-256 of the canonical spec, as an owned string.
///
/// # Safety
/// `spec` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn flowlab_spec_config_hash(spec: *const FlowlabSpec, out: *mut *mut c_char) -> FlowlabStatus {
    guard(|| {
        let spec = handle(spec, "spec")?;
        *out_ptr(out, "out")? = owned_string(spec.0.config_hash());
        Ok(())
    })
}

/// Run the spec's recipe into `out_dir`, sequentially and deterministically.
/// On success `manifest_json`, if not NULL, receives the manifest as an owned
/// string.
///
/// # Safety
/// `spec` must be a live handle and `out_dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn flowlab_run(
    spec: *const FlowlabSpec,
    out_dir: *const c_char,
    manifest_json: *mut *mut c_char,
) -> FlowlabStatus {
    guard(|| {
        let spec = handle(spec, "spec")?;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let manifest = lab::run(&spec.0, &RunOptions::new(dir))?;
        if let Some(out) = manifest_json.as_mut() {
            *out = owned_string(serde_json::to_string(&manifest).map_err(LabError::from)?);
        }
        Ok(())
    })
}

/// # Safety
/// `spec` must be NULL or a handle from [`flowlab_spec_from_json`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn flowlab_spec_free(spec: *mut FlowlabSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Run a built-in check. Returns `CheckFailed` when a tolerance is exceeded;
/// the JSON report is produced either way if `report_json` is not NULL.
///
/// # Safety
/// `report_json` must be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn flowlab_verify(check: FlowlabCheck, report_json: *mut *mut c_char) -> FlowlabStatus {
    guard(|| {
        let check = match check {
            FlowlabCheck::Decomposition => Check::Decomposition,
            FlowlabCheck::Gradients => Check::Gradients,
            FlowlabCheck::Shift => Check::Shift,
        };
        let report = lab::verify(check)?;
        if let Some(out) = report_json.as_mut() {
            *out = owned_string(serde_json::to_string(&report).map_err(LabError::from)?);
        }
        if !report.passed {
            return Err(LabError::Check(format!(
                "{check:?} exceeded tolerance {}: worst {}",
                report.tolerance, report.worst
            ))
            .into());
        }
        Ok(())
    })
}
