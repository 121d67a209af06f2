//! C ABI for the `frk` library.
//!
//! Conventions:
//! - Opaque handles (`FrkModel`) created and destroyed by this library.
//! - Every fallible call returns an `i32` status (`FRK_OK == 0`); the last
//!   error message is kept per thread and read with [`frk_last_error`].
//! - Strings returned through out-pointers are heap-allocated C strings the
//!   caller releases with [`frk_string_free`].
//!
//! The matching header lives at `include/frk.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use frk::error::Error;
use frk::freqparam::{allocate_keep_total, compression_report, keep_floors};
use frk::nn::{ArchPlan, ModelGraph};
use frk::{Rng, Tensor};

pub const FRK_OK: i32 = 0;
pub const FRK_ERR_INTERNAL: i32 = 1;
pub const FRK_ERR_IO_PARSE: i32 = 2;
pub const FRK_ERR_VALIDATION: i32 = 3;
pub const FRK_ERR_USAGE: i32 = 4;
pub const FRK_ERR_NULL_POINTER: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::Format(_) => FRK_ERR_IO_PARSE,
        Error::Divergence { .. } => FRK_ERR_INTERNAL,
        _ => FRK_ERR_VALIDATION,
    }
}

fn fail(e: Error) -> i32 {
    set_error(&e.to_string());
    status_of(&e)
}

/// Runs a closure, converting panics into `FRK_ERR_INTERNAL`.
fn guarded(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            FRK_ERR_INTERNAL
        }
    }
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().ok()
}

/// Opaque model handle.
pub struct FrkModel {
    inner: ModelGraph,
}

/// Message for the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn frk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn frk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned through an out-parameter of
/// this library, or null.
#[no_mangle]
pub unsafe extern "C" fn frk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Builds a He-initialized FR model: `arch` is one of "alexnet",
/// "efficientnetb0", "lenet5".
///
/// # Safety
/// `arch` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frk_model_build(
    arch: *const c_char,
    num_classes: u32,
    seed: u64,
    out: *mut *mut FrkModel,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return FRK_ERR_NULL_POINTER;
        }
        let Some(arch) = (unsafe { cstr(arch) }) else {
            set_error("arch is null or not UTF-8");
            return FRK_ERR_NULL_POINTER;
        };
        let plan = match arch {
            "alexnet" => ArchPlan::alexnet(num_classes as usize),
            "efficientnetb0" => ArchPlan::efficientnet_b0(num_classes as usize),
            "lenet5" => ArchPlan::lenet5(num_classes as usize),
            other => {
                set_error(&format!("unknown architecture {other:?}"));
                return FRK_ERR_USAGE;
            }
        };
        match ModelGraph::build(plan, &mut Rng::from_seed(seed)) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(FrkModel { inner: model })) };
                FRK_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads a model from a checkpoint directory.
///
/// # Safety
/// `dir` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frk_model_load(dir: *const c_char, out: *mut *mut FrkModel) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return FRK_ERR_NULL_POINTER;
        }
        let Some(dir) = (unsafe { cstr(dir) }) else {
            set_error("dir is null or not UTF-8");
            return FRK_ERR_NULL_POINTER;
        };
        match ModelGraph::load(Path::new(dir)) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(FrkModel { inner: model })) };
                FRK_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must be a handle from this library, or null.
#[no_mangle]
pub unsafe extern "C" fn frk_model_free(model: *mut FrkModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

unsafe fn model_ref<'a>(model: *const FrkModel) -> Option<&'a FrkModel> {
    unsafe { model.as_ref() }
}

/// Total trainable parameter count.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frk_model_param_total(model: *const FrkModel, out: *mut u64) -> i32 {
    guarded(|| {
        let (Some(m), false) = (unsafe { model_ref(model) }, out.is_null()) else {
            set_error("null pointer");
            return FRK_ERR_NULL_POINTER;
        };
        unsafe { *out = m.inner.param_total() as u64 };
        FRK_OK
    })
}

/// Currently kept coefficient count.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frk_model_kept_total(model: *const FrkModel, out: *mut u64) -> i32 {
    guarded(|| {
        let (Some(m), false) = (unsafe { model_ref(model) }, out.is_null()) else {
            set_error("null pointer");
            return FRK_ERR_NULL_POINTER;
        };
        unsafe { *out = m.inner.kept_total() as u64 };
        FRK_OK
    })
}

fn truncate_model(model: &mut ModelGraph, keeps: &[usize]) -> Result<(), Error> {
    let mut idx = 0;
    let mut err = None;
    model.for_each_param_mut(&mut |_, p| {
        if err.is_none() {
            if let Err(e) = p.apply_truncation(keeps[idx].min(p.keep())) {
                err = Some(e);
            }
        }
        idx += 1;
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Truncates every parameter to `max(1, ceil(fraction · size))` kept
/// zigzag-prefix coefficients.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn frk_model_truncate_fraction(
    model: *mut FrkModel,
    keep_fraction: f64,
) -> i32 {
    guarded(|| {
        let Some(m) = (unsafe { model.as_mut() }) else {
            set_error("model is null");
            return FRK_ERR_NULL_POINTER;
        };
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            set_error("keep fraction must lie in (0,1]");
            return FRK_ERR_USAGE;
        }
        let sizes: Vec<usize> = m.inner.named_params().iter().map(|(_, p)| p.total()).collect();
        let keeps = keep_floors(&sizes, keep_fraction);
        match truncate_model(&mut m.inner, &keeps) {
            Ok(()) => FRK_OK,
            Err(e) => fail(e),
        }
    })
}

/// Truncates the model to exactly `keep_total` coefficients overall,
/// apportioned across parameters proportionally to size (minimum 1 each).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn frk_model_truncate_total(model: *mut FrkModel, keep_total: u64) -> i32 {
    guarded(|| {
        let Some(m) = (unsafe { model.as_mut() }) else {
            set_error("model is null");
            return FRK_ERR_NULL_POINTER;
        };
        let sizes: Vec<usize> = m.inner.named_params().iter().map(|(_, p)| p.total()).collect();
        match allocate_keep_total(&sizes, keep_total as usize)
            .and_then(|keeps| truncate_model(&mut m.inner, &keeps))
        {
            Ok(()) => FRK_OK,
            Err(e) => fail(e),
        }
    })
}

/// Writes the model checkpoint (parameter files + manifest + architecture).
///
/// # Safety
/// `model` must be a live handle; `dir` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn frk_model_save(model: *const FrkModel, dir: *const c_char) -> i32 {
    guarded(|| {
        let (Some(m), Some(dir)) = (unsafe { model_ref(model) }, unsafe { cstr(dir) }) else {
            set_error("null pointer");
            return FRK_ERR_NULL_POINTER;
        };
        match m.inner.save(Path::new(dir)) {
            Ok(()) => FRK_OK,
            Err(e) => fail(e),
        }
    })
}

/// JSON compression report (per-parameter kept counts plus the global
/// ratio); the string goes to `out` and must be freed with
/// [`frk_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frk_model_compression_report(
    model: *const FrkModel,
    out: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        let (Some(m), false) = (unsafe { model_ref(model) }, out.is_null()) else {
            set_error("null pointer");
            return FRK_ERR_NULL_POINTER;
        };
        match compression_report(&m.inner.named_params()) {
            Ok(report) => {
                let json = serde_json_string(&report);
                unsafe { *out = CString::new(json).unwrap().into_raw() };
                FRK_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Eval-mode forward pass on a batch-1 input of `len` values laid out
/// row-major for the model's canonical input shape; writes `out_len` logits.
///
/// # Safety
/// `model` must be a live handle; `input` must point to `len` doubles and
/// `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn frk_model_forward(
    model: *const FrkModel,
    input: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> i32 {
    guarded(|| {
        let Some(m) = (unsafe { model_ref(model) }) else {
            set_error("model is null");
            return FRK_ERR_NULL_POINTER;
        };
        if input.is_null() || out.is_null() {
            set_error("null buffer");
            return FRK_ERR_NULL_POINTER;
        }
        let shape = m.inner.plan.canonical_input();
        let expected: usize = shape.iter().product();
        if len != expected {
            set_error(&format!("input must have {expected} values, got {len}"));
            return FRK_ERR_VALIDATION;
        }
        let data = unsafe { std::slice::from_raw_parts(input, len) }.to_vec();
        let x = match Tensor::from_vec(&shape, data) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        match m.inner.forward_eval(&x) {
            Ok(y) => {
                if y.len() != out_len {
                    set_error(&format!("output has {} values, buffer holds {out_len}", y.len()));
                    return FRK_ERR_VALIDATION;
                }
                unsafe {
                    ptr::copy_nonoverlapping(y.data().as_ptr(), out, out_len);
                }
                FRK_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Scores a prediction file against 5-reference ground truth; returns the
/// report JSON through `out` (free with [`frk_string_free`]).
///
/// # Safety
/// Paths must be valid NUL-terminated strings; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frk_evaluate_files(
    test_json: *const c_char,
    prediction_json: *const c_char,
    out: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        let (Some(test), Some(pred), false) = (
            unsafe { cstr(test_json) },
            unsafe { cstr(prediction_json) },
            out.is_null(),
        ) else {
            set_error("null pointer");
            return FRK_ERR_NULL_POINTER;
        };
        let run = || -> Result<String, Error> {
            let truth = frk::dataio::read_captions(Path::new(test))?;
            let preds = frk::dataio::read_predictions(Path::new(pred))?;
            let report = frk::metrics::score_corpus(&preds, &truth)?;
            Ok(serde_json_string(&report))
        };
        match run() {
            Ok(json) => {
                unsafe { *out = CString::new(json).unwrap().into_raw() };
                FRK_OK
            }
            Err(e) => fail(e),
        }
    })
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn build_truncate_report_save_load() {
        let arch = CString::new("lenet5").unwrap();
        let mut handle: *mut FrkModel = ptr::null_mut();
        let rc = unsafe { frk_model_build(arch.as_ptr(), 10, 7, &mut handle) };
        assert_eq!(rc, FRK_OK);
        let mut total = 0u64;
        assert_eq!(
            unsafe { frk_model_param_total(handle, &mut total) },
            FRK_OK
        );
        assert_eq!(total, 61_706);

        assert_eq!(unsafe { frk_model_truncate_total(handle, 776) }, FRK_OK);
        let mut kept = 0u64;
        assert_eq!(unsafe { frk_model_kept_total(handle, &mut kept) }, FRK_OK);
        assert_eq!(kept, 776);

        let mut report: *mut c_char = ptr::null_mut();
        assert_eq!(
            unsafe { frk_model_compression_report(handle, &mut report) },
            FRK_OK
        );
        let text = unsafe { CStr::from_ptr(report) }.to_str().unwrap().to_string();
        assert!(text.contains("\"total_kept\": 776"));
        unsafe { frk_string_free(report) };

        let dir = tempfile::tempdir().unwrap();
        let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(unsafe { frk_model_save(handle, cdir.as_ptr()) }, FRK_OK);
        unsafe { frk_model_free(handle) };

        let mut loaded: *mut FrkModel = ptr::null_mut();
        assert_eq!(unsafe { frk_model_load(cdir.as_ptr(), &mut loaded) }, FRK_OK);
        let mut kept2 = 0u64;
        assert_eq!(unsafe { frk_model_kept_total(loaded, &mut kept2) }, FRK_OK);
        assert_eq!(kept2, 776);

        // forward pass over the canonical 1x1x32x32 input stays finite
        let input = vec![0.25f64; 1 * 1 * 32 * 32];
        let mut logits = vec![0.0f64; 10];
        assert_eq!(
            unsafe {
                frk_model_forward(loaded, input.as_ptr(), input.len(), logits.as_mut_ptr(), 10)
            },
            FRK_OK
        );
        assert!(logits.iter().all(|v| v.is_finite()));
        unsafe { frk_model_free(loaded) };
    }

    #[test]
    fn errors_set_status_and_message() {
        let arch = CString::new("not-an-arch").unwrap();
        let mut handle: *mut FrkModel = ptr::null_mut();
        let rc = unsafe { frk_model_build(arch.as_ptr(), 10, 0, &mut handle) };
        assert_eq!(rc, FRK_ERR_USAGE);
        let msg = unsafe { CStr::from_ptr(frk_last_error()) }.to_str().unwrap();
        assert!(msg.contains("not-an-arch"));

        let rc = unsafe { frk_model_build(ptr::null(), 10, 0, &mut handle) };
        assert_eq!(rc, FRK_ERR_NULL_POINTER);

        let mut out = 0u64;
        assert_eq!(
            unsafe { frk_model_param_total(ptr::null(), &mut out) },
            FRK_ERR_NULL_POINTER
        );

        let missing = CString::new("/definitely/missing/dir").unwrap();
        let mut loaded: *mut FrkModel = ptr::null_mut();
        assert_eq!(
            unsafe { frk_model_load(missing.as_ptr(), &mut loaded) },
            FRK_ERR_IO_PARSE
        );
    }

    #[test]
    fn evaluate_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let test_path = dir.path().join("test.json");
        let pred_path = dir.path().join("prediction.json");
        std::fs::write(
            &test_path,
            r#"{"img": ["sos a cat eos", "sos a cat eos", "sos a cat eos", "sos a cat eos", "sos a cat eos"]}"#,
        )
        .unwrap();
        std::fs::write(&pred_path, r#"{"img": "a cat"}"#).unwrap();
        let ctest = CString::new(test_path.to_str().unwrap()).unwrap();
        let cpred = CString::new(pred_path.to_str().unwrap()).unwrap();
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(
            unsafe { frk_evaluate_files(ctest.as_ptr(), cpred.as_ptr(), &mut out) },
            FRK_OK
        );
        let json = unsafe { CStr::from_ptr(out) }.to_str().unwrap();
        assert!(json.contains("\"bleu_1\": 1.0"));
        unsafe { frk_string_free(out) };
    }
}
