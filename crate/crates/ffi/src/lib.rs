//! C ABI over `aebound`: trained-model handles, reconstruction metrics and
//! the closed-form bounds.
//!
//! Every fallible function returns an [`AebStatus`]; on failure the message
//! is kept per thread and can be copied out with [`aeb_last_error_message`].
//! Models are opaque [`AebModel`] handles released with [`aeb_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use aebound::bounds::{self, BoundInputs};
use aebound::losses::{self, MarginConfig};
use aebound::matrix::Matrix;
use aebound::nn::NetworkParams;
use aebound::{checkpoint, geometry, Error};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AebStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    Numeric = 6,
    Panic = 7,
}

/// A loaded autoencoder.
pub struct AebModel {
    params: NetworkParams,
}

/// Generalization bound quantities of one model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AebBound {
    pub complexity: f64,
    pub delta_term: f64,
    pub delta_term_normalized: f64,
    pub margin_bound_g1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> AebStatus {
    match e {
        Error::Dimension { .. } => AebStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::Config(_) => AebStatus::InvalidArgument,
        Error::MissingFile(_) | Error::Io(_) => AebStatus::Io,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::Checkpoint(_)
        | Error::Schema(_)
        | Error::Json(_) => AebStatus::Parse,
        Error::Degenerate(_) | Error::Numeric(_) => AebStatus::Numeric,
    }
}

struct Fail(AebStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AebStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic for [`aeb_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AebStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AebStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            AebStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn model<'a>(p: *const AebModel) -> Result<&'a AebModel, Fail> {
    p.as_ref().ok_or_else(|| null("model"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AebStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn boxed(params: NetworkParams) -> *mut AebModel {
    Box::into_raw(Box::new(AebModel { params }))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator; an empty message means the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn aeb_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a JSON checkpoint from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_model_load(path: *const c_char, out: *mut *mut AebModel) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = c_str(path, "path")?;
        *out = boxed(checkpoint::load(Path::new(path))?);
        Ok(())
    })
}

/// Parses a checkpoint from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_model_from_json(
    json: *const c_char,
    out: *mut *mut AebModel,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let text = c_str(json, "json")?;
        *out = boxed(checkpoint::from_json(text)?);
        Ok(())
    })
}

/// Releases a model. Null is accepted.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aeb_model_free(model: *mut AebModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width, code width, number of weight matrices and largest layer width.
///
/// # Safety
/// `model` must be a live handle; each out pointer must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_model_dims(
    model: *const AebModel,
    input_dim: *mut usize,
    code_dim: *mut usize,
    depth: *mut usize,
    max_width: *mut usize,
) -> AebStatus {
    guard(|| {
        let p = &self::model(model)?.params;
        for (ptr, v) in [
            (input_dim, p.input_dim()),
            (code_dim, p.code_dim()),
            (depth, p.depth()),
            (max_width, p.max_width()),
        ] {
            if let Some(r) = ptr.as_mut() {
                *r = v;
            }
        }
        Ok(())
    })
}

unsafe fn apply(
    model: *const AebModel,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
    f: fn(&NetworkParams, &[f64]) -> aebound::Result<Vec<f64>>,
) -> AebStatus {
    guard(|| {
        let p = &self::model(model)?.params;
        let x = slice(x, x_len, "x")?;
        let y = f(p, x)?;
        if out_len != y.len() {
            return Err(Error::Dimension {
                context: "output buffer",
                expected: y.len(),
                got: out_len,
            }
            .into());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(y.as_ptr(), out, y.len());
        Ok(())
    })
}

/// Reconstruction `f(x)`; `out_len` must equal the input width.
///
/// # Safety
/// `x` valid for `x_len` reads, `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn aeb_model_forward(
    model: *const AebModel,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> AebStatus {
    apply(model, x, x_len, out, out_len, NetworkParams::forward)
}

/// Code `enc(x)`; `out_len` must equal the code width.
///
/// # Safety
/// As for [`aeb_model_forward`].
#[no_mangle]
pub unsafe extern "C" fn aeb_model_encode(
    model: *const AebModel,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> AebStatus {
    apply(model, x, x_len, out, out_len, NetworkParams::encode)
}

/// Decoding `dec(z)`; `out_len` must equal the input width.
///
/// # Safety
/// As for [`aeb_model_forward`].
#[no_mangle]
pub unsafe extern "C" fn aeb_model_decode(
    model: *const AebModel,
    z: *const f64,
    z_len: usize,
    out: *mut f64,
    out_len: usize,
) -> AebStatus {
    apply(model, z, z_len, out, out_len, NetworkParams::decode)
}

/// Spectral complexity term for inputs of L2 norm at most `b`.
///
/// # Safety
/// `model` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_model_complexity(
    model: *const AebModel,
    b: f64,
    out: *mut f64,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = bounds::complexity_term(&self::model(model)?.params, b)?;
        Ok(())
    })
}

/// Margin generalization bound for a model trained on `m` samples.
///
/// # Safety
/// `model` live, `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn aeb_model_generalization_bound(
    model: *const AebModel,
    b: f64,
    m: usize,
    delta: f64,
    gamma1: f64,
    gamma2: f64,
    margin_loss_hat_g2: f64,
    out: *mut AebBound,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let p = &self::model(model)?.params;
        let margins = MarginConfig::new(gamma1, gamma2)?;
        let inputs = BoundInputs::for_network(p, b, m, delta, margins);
        let g = bounds::generalization_bound(p, &inputs, margin_loss_hat_g2)?;
        *out = AebBound {
            complexity: g.complexity,
            delta_term: g.delta_term,
            delta_term_normalized: g.delta_term_normalized,
            margin_bound_g1: g.margin_bound_g1,
        };
        Ok(())
    })
}

/// Decoder Lipschitz upper bound (spectral norm product, 1/4 per sigmoid).
///
/// # Safety
/// `model` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_model_lipschitz_upper(
    model: *const AebModel,
    out: *mut f64,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = geometry::lipschitz_upper(&self::model(model)?.params)?;
        Ok(())
    })
}

/// γ-margin loss of one reconstruction; `x` must be binary.
///
/// # Safety
/// `x` and `xhat` valid for `len` reads, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_margin_loss(
    x: *const f64,
    xhat: *const f64,
    len: usize,
    gamma: f64,
    out: *mut f64,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = losses::margin_loss(slice(x, len, "x")?, slice(xhat, len, "xhat")?, gamma)?;
        Ok(())
    })
}

/// `R(r, γ)`, the squared-error bound implied by margin loss `r`.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_r_bound(
    r: f64,
    gamma: f64,
    input_dim: usize,
    out: *mut f64,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = bounds::r_to_se_bound(r, gamma, input_dim)?;
        Ok(())
    })
}

/// `√R(r, γ)`.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_mu_bound_worst(
    r: f64,
    gamma: f64,
    input_dim: usize,
    out: *mut f64,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = bounds::mu_bound_worst(r, gamma, input_dim)?;
        Ok(())
    })
}

/// μ bound under symmetrically distributed errors.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_mu_bound_symmetric(
    r: f64,
    gamma: f64,
    input_dim: usize,
    out: *mut f64,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = bounds::mu_bound_symmetric(r, gamma, input_dim)?;
        Ok(())
    })
}

/// Largest singular value of a row-major `rows × cols` matrix. `converged`
/// may be null.
///
/// # Safety
/// `values` valid for `rows * cols` reads, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_spectral_norm(
    values: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    converged: *mut bool,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(AebStatus::InvalidArgument, "matrix size overflows".into()))?;
        let w = Matrix::new(rows, cols, slice(values, n, "values")?.to_vec())?;
        let s = bounds::spectral_norm_default(&w);
        *out = s.value;
        if let Some(c) = converged.as_mut() {
            *c = s.converged;
        }
        Ok(())
    })
}

/// `((ln m)²/m)^{1/n} / ((ln m)²/m)^{1/n_b}`.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aeb_improvement_factor(
    m: usize,
    n: usize,
    n_b: usize,
    out: *mut f64,
) -> AebStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = bounds::improvement_factor(m, n, n_b)?;
        Ok(())
    })
}
