//! C ABI for the evaluation library.
//!
//! The surface covers the pieces other languages most plausibly want to
//! call: the classification metrics (weighted accuracy, unweighted
//! accuracy, weighted F1), mean absolute error, and label-space
//! operations (alias-aware resolution and cross-corpus class mapping).
//!
//! Conventions:
//! - Every fallible function returns a [`PlbStatus`]; results come back
//!   through `out` pointers that are written only on `PLB_STATUS_OK`.
//! - Handles are opaque. Create them with the `_new` functions, release
//!   them with the matching `_free`; `_free` ignores null.
//! - Returned `const char *` values point at storage owned by the handle
//!   (or at static storage) and must not be freed; they stay valid until
//!   the owning handle is freed.
//! - No function panics across the boundary; internal failures surface as
//!   `PLB_STATUS_INTERNAL`.

use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use paralbench::metrics::{mae_metric, ua, wa, wf1, ConfusionMatrix};
use paralbench::registry::{build_label_mapping, resolve_label, LabelSpace};
use paralbench::HarnessError;

/// Result code for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlbStatus {
    /// Success; `out` parameters hold results.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument value was rejected (empty class list, duplicate
    /// classes, non-finite regression values, ...).
    InvalidArgument = 3,
    /// An index argument was outside the valid range.
    OutOfRange = 4,
    /// The operation needs at least one sample.
    Empty = 5,
    /// Two parallel arrays disagreed on length.
    LengthMismatch = 6,
    /// The label did not resolve to any class of the space.
    UnknownLabel = 7,
    /// No class of the test space mapped onto the train space.
    NoOverlap = 8,
    /// Unexpected internal failure (a bug, never routine).
    Internal = 99,
}

/// Classification metric selector for [`plb_evaluator_metric`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlbMetric {
    /// Overall fraction of correct predictions (weighted accuracy).
    WeightedAccuracy = 0,
    /// Mean of per-class recalls over classes with support (unweighted
    /// accuracy / balanced accuracy).
    UnweightedAccuracy = 1,
    /// Support-weighted mean of per-class F1 scores.
    WeightedF1 = 2,
}

/// Opaque canonicalized label space with alias-aware resolution.
pub struct PlbLabelSpace {
    space: LabelSpace,
    /// NUL-terminated copies of the canonical class names, index-aligned.
    class_names: Vec<CString>,
    name: CString,
}

/// Opaque accumulator of (reference, prediction) class-index pairs.
pub struct PlbEvaluator {
    classes: usize,
    refs: Vec<usize>,
    preds: Vec<usize>,
}

// ---------------------------------------------------------------------------
// helpers

fn guarded(f: impl FnOnce() -> PlbStatus) -> PlbStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(PlbStatus::Internal)
}

/// Borrow a C string as UTF-8, mapping failures to status codes.
///
/// # Safety
/// `ptr` must be null or point at a NUL-terminated string.
unsafe fn utf8<'a>(ptr: *const c_char) -> Result<&'a str, PlbStatus> {
    if ptr.is_null() {
        return Err(PlbStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| PlbStatus::InvalidUtf8)
}

fn status_of(error: &HarnessError) -> PlbStatus {
    match error {
        HarnessError::UnknownLabel { .. } => PlbStatus::UnknownLabel,
        HarnessError::EmptyLabelMapping { .. } => PlbStatus::NoOverlap,
        HarnessError::ShapeMismatch { .. } => PlbStatus::LengthMismatch,
        HarnessError::NonFinite(_) => PlbStatus::InvalidArgument,
        HarnessError::InvalidTaskSpec { .. } => PlbStatus::InvalidArgument,
        _ => PlbStatus::Internal,
    }
}

// ---------------------------------------------------------------------------
// library information

/// Library version as a static NUL-terminated string. Never freed.
#[no_mangle]
pub extern "C" fn plb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Static human-readable description of a status code. Never freed.
#[no_mangle]
pub extern "C" fn plb_status_message(status: PlbStatus) -> *const c_char {
    let text: &'static str = match status {
        PlbStatus::Ok => "ok\0",
        PlbStatus::NullArgument => "a required pointer argument was null\0",
        PlbStatus::InvalidUtf8 => "a string argument was not valid UTF-8\0",
        PlbStatus::InvalidArgument => "an argument value was rejected\0",
        PlbStatus::OutOfRange => "an index was outside the valid range\0",
        PlbStatus::Empty => "the operation needs at least one sample\0",
        PlbStatus::LengthMismatch => "parallel arrays disagree on length\0",
        PlbStatus::UnknownLabel => "the label resolves to no class of the space\0",
        PlbStatus::NoOverlap => "the label spaces share no classes\0",
        PlbStatus::Internal => "internal failure\0",
    };
    text.as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// label spaces

/// Create a label space from `class_count` class-name strings.
///
/// Names are canonicalized (case-folded, punctuation-stripped) and the
/// space resolves common emotion-vocabulary aliases, so later lookups of
/// e.g. `"Happy"` can land on a class declared as `"happiness"`.
///
/// # Safety
/// `name` must be NUL-terminated; `class_names` must point at
/// `class_count` NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plb_label_space_new(
    name: *const c_char,
    class_names: *const *const c_char,
    class_count: usize,
    out: *mut *mut PlbLabelSpace,
) -> PlbStatus {
    guarded(|| {
        if out.is_null() || (class_names.is_null() && class_count > 0) {
            return PlbStatus::NullArgument;
        }
        let name = match utf8(name) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let mut classes = Vec::with_capacity(class_count);
        for i in 0..class_count {
            match utf8(*class_names.add(i)) {
                Ok(s) => classes.push(s.to_string()),
                Err(status) => return status,
            }
        }
        let space = match LabelSpace::new(name, &classes, &BTreeMap::new()) {
            Ok(space) => space,
            Err(e) => return status_of(&e),
        };
        let class_names: Vec<CString> = space
            .classes()
            .iter()
            .map(|c| CString::new(c.as_str()).expect("canonical names contain no NUL"))
            .collect();
        let handle = Box::new(PlbLabelSpace {
            name: CString::new(space.name()).expect("space names contain no NUL"),
            class_names,
            space,
        });
        *out = Box::into_raw(handle);
        PlbStatus::Ok
    })
}

/// Release a label space. Null is ignored.
///
/// # Safety
/// `space` must be null or a pointer from [`plb_label_space_new`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn plb_label_space_free(space: *mut PlbLabelSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Number of classes; 0 for null.
///
/// # Safety
/// `space` must be null or a live label-space handle.
#[no_mangle]
pub unsafe extern "C" fn plb_label_space_len(space: *const PlbLabelSpace) -> usize {
    space.as_ref().map_or(0, |s| s.space.len())
}

/// The space's name; owned by the handle. Null for null input.
///
/// # Safety
/// `space` must be null or a live label-space handle.
#[no_mangle]
pub unsafe extern "C" fn plb_label_space_name(space: *const PlbLabelSpace) -> *const c_char {
    space
        .as_ref()
        .map_or(std::ptr::null(), |s| s.name.as_ptr())
}

/// Resolve a raw label spelling to its class index.
///
/// # Safety
/// `space` must be a live handle, `raw` NUL-terminated, `out_index` valid.
#[no_mangle]
pub unsafe extern "C" fn plb_label_space_resolve(
    space: *const PlbLabelSpace,
    raw: *const c_char,
    out_index: *mut usize,
) -> PlbStatus {
    guarded(|| {
        let Some(handle) = space.as_ref() else {
            return PlbStatus::NullArgument;
        };
        if out_index.is_null() {
            return PlbStatus::NullArgument;
        }
        let raw = match utf8(raw) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match resolve_label(&handle.space, raw) {
            Ok(index) => {
                *out_index = index;
                PlbStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Canonical name of class `index`; owned by the handle.
///
/// # Safety
/// `space` must be a live handle and `out_name` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plb_label_space_class_name(
    space: *const PlbLabelSpace,
    index: usize,
    out_name: *mut *const c_char,
) -> PlbStatus {
    guarded(|| {
        let Some(handle) = space.as_ref() else {
            return PlbStatus::NullArgument;
        };
        if out_name.is_null() {
            return PlbStatus::NullArgument;
        }
        match handle.class_names.get(index) {
            Some(name) => {
                *out_name = name.as_ptr();
                PlbStatus::Ok
            }
            None => PlbStatus::OutOfRange,
        }
    })
}

/// Map every class of `test` onto a class of `train` by canonical name:
/// writes one entry per test class into `out_map` (length `map_len`,
/// which must equal the test space's class count) — the train-space class
/// index, or -1 for classes with no counterpart. Fails with
/// `PLB_STATUS_NO_OVERLAP` when nothing maps.
///
/// # Safety
/// `train` and `test` must be live handles and `out_map` must point at
/// `map_len` writable entries.
#[no_mangle]
pub unsafe extern "C" fn plb_label_mapping(
    train: *const PlbLabelSpace,
    test: *const PlbLabelSpace,
    out_map: *mut i64,
    map_len: usize,
) -> PlbStatus {
    guarded(|| {
        let (Some(train), Some(test)) = (train.as_ref(), test.as_ref()) else {
            return PlbStatus::NullArgument;
        };
        if out_map.is_null() {
            return PlbStatus::NullArgument;
        }
        if map_len != test.space.len() {
            return PlbStatus::LengthMismatch;
        }
        let mapping = match build_label_mapping(&train.space, &test.space) {
            Ok(mapping) => mapping,
            Err(e) => return status_of(&e),
        };
        for (i, target) in mapping.index_map().into_iter().enumerate() {
            *out_map.add(i) = target.map_or(-1, |idx| idx as i64);
        }
        PlbStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// classification metrics

/// Create an evaluator over `classes` classes (must be at least 1).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plb_evaluator_new(
    classes: usize,
    out: *mut *mut PlbEvaluator,
) -> PlbStatus {
    guarded(|| {
        if out.is_null() {
            return PlbStatus::NullArgument;
        }
        if classes == 0 {
            return PlbStatus::InvalidArgument;
        }
        *out = Box::into_raw(Box::new(PlbEvaluator {
            classes,
            refs: Vec::new(),
            preds: Vec::new(),
        }));
        PlbStatus::Ok
    })
}

/// Release an evaluator. Null is ignored.
///
/// # Safety
/// `eval` must be null or a pointer from [`plb_evaluator_new`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn plb_evaluator_free(eval: *mut PlbEvaluator) {
    if !eval.is_null() {
        drop(Box::from_raw(eval));
    }
}

/// Record one (reference, prediction) pair of class indices.
///
/// # Safety
/// `eval` must be a live evaluator handle.
#[no_mangle]
pub unsafe extern "C" fn plb_evaluator_add(
    eval: *mut PlbEvaluator,
    reference: usize,
    prediction: usize,
) -> PlbStatus {
    guarded(|| {
        let Some(eval) = eval.as_mut() else {
            return PlbStatus::NullArgument;
        };
        if reference >= eval.classes || prediction >= eval.classes {
            return PlbStatus::OutOfRange;
        }
        eval.refs.push(reference);
        eval.preds.push(prediction);
        PlbStatus::Ok
    })
}

/// Record `n` pairs from parallel arrays. Rejects the whole batch if any
/// index is out of range, leaving the evaluator unchanged.
///
/// # Safety
/// `eval` must be a live handle; `references` and `predictions` must each
/// point at `n` readable entries.
#[no_mangle]
pub unsafe extern "C" fn plb_evaluator_add_batch(
    eval: *mut PlbEvaluator,
    references: *const usize,
    predictions: *const usize,
    n: usize,
) -> PlbStatus {
    guarded(|| {
        let Some(eval) = eval.as_mut() else {
            return PlbStatus::NullArgument;
        };
        if n == 0 {
            return PlbStatus::Ok;
        }
        if references.is_null() || predictions.is_null() {
            return PlbStatus::NullArgument;
        }
        let refs = std::slice::from_raw_parts(references, n);
        let preds = std::slice::from_raw_parts(predictions, n);
        if refs
            .iter()
            .chain(preds.iter())
            .any(|&idx| idx >= eval.classes)
        {
            return PlbStatus::OutOfRange;
        }
        eval.refs.extend_from_slice(refs);
        eval.preds.extend_from_slice(preds);
        PlbStatus::Ok
    })
}

/// Number of recorded pairs; 0 for null.
///
/// # Safety
/// `eval` must be null or a live evaluator handle.
#[no_mangle]
pub unsafe extern "C" fn plb_evaluator_count(eval: *const PlbEvaluator) -> usize {
    eval.as_ref().map_or(0, |e| e.refs.len())
}

/// Forget all recorded pairs, keeping the class count.
///
/// # Safety
/// `eval` must be null or a live evaluator handle.
#[no_mangle]
pub unsafe extern "C" fn plb_evaluator_reset(eval: *mut PlbEvaluator) {
    if let Some(eval) = eval.as_mut() {
        eval.refs.clear();
        eval.preds.clear();
    }
}

/// Compute one classification metric over the recorded pairs.
///
/// # Safety
/// `eval` must be a live handle and `out_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plb_evaluator_metric(
    eval: *const PlbEvaluator,
    metric: PlbMetric,
    out_value: *mut f64,
) -> PlbStatus {
    guarded(|| {
        let Some(eval) = eval.as_ref() else {
            return PlbStatus::NullArgument;
        };
        if out_value.is_null() {
            return PlbStatus::NullArgument;
        }
        if eval.refs.is_empty() {
            return PlbStatus::Empty;
        }
        let cm = match ConfusionMatrix::from_labels(&eval.refs, &eval.preds, eval.classes) {
            Ok(cm) => cm,
            Err(e) => return status_of(&e),
        };
        *out_value = match metric {
            PlbMetric::WeightedAccuracy => wa(&cm),
            PlbMetric::UnweightedAccuracy => ua(&cm),
            PlbMetric::WeightedF1 => wf1(&cm),
        };
        PlbStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// regression metrics

/// Mean absolute error over `n` reference/prediction pairs.
///
/// # Safety
/// `references` and `predictions` must each point at `n` readable values
/// and `out_value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plb_mae(
    references: *const f64,
    predictions: *const f64,
    n: usize,
    out_value: *mut f64,
) -> PlbStatus {
    guarded(|| {
        if out_value.is_null() {
            return PlbStatus::NullArgument;
        }
        if n == 0 {
            return PlbStatus::Empty;
        }
        if references.is_null() || predictions.is_null() {
            return PlbStatus::NullArgument;
        }
        let refs = std::slice::from_raw_parts(references, n);
        let preds = std::slice::from_raw_parts(predictions, n);
        match mae_metric(refs, preds) {
            Ok(value) => {
                *out_value = value;
                PlbStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}
