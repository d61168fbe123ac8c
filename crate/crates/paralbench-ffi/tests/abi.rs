//! Exercises the C ABI through its public entry points, cross-checking
//! metric values against the underlying library.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use paralbench_ffi::*;

fn cstrings(names: &[&str]) -> (Vec<CString>, Vec<*const c_char>) {
    let owned: Vec<CString> = names.iter().map(|n| CString::new(*n).unwrap()).collect();
    let ptrs: Vec<*const c_char> = owned.iter().map(|c| c.as_ptr()).collect();
    (owned, ptrs)
}

fn new_space(name: &str, classes: &[&str]) -> *mut PlbLabelSpace {
    let name = CString::new(name).unwrap();
    let (_owned, ptrs) = cstrings(classes);
    let mut space: *mut PlbLabelSpace = ptr::null_mut();
    let status = unsafe {
        plb_label_space_new(name.as_ptr(), ptrs.as_ptr(), ptrs.len(), &mut space)
    };
    assert_eq!(status, PlbStatus::Ok);
    assert!(!space.is_null());
    space
}

#[test]
fn version_is_a_static_semver_string() {
    let version = unsafe { CStr::from_ptr(plb_version()) }.to_str().unwrap();
    assert_eq!(version.split('.').count(), 3, "{version}");
}

#[test]
fn status_messages_exist_for_every_code() {
    for status in [
        PlbStatus::Ok,
        PlbStatus::NullArgument,
        PlbStatus::InvalidUtf8,
        PlbStatus::InvalidArgument,
        PlbStatus::OutOfRange,
        PlbStatus::Empty,
        PlbStatus::LengthMismatch,
        PlbStatus::UnknownLabel,
        PlbStatus::NoOverlap,
        PlbStatus::Internal,
    ] {
        let message = unsafe { CStr::from_ptr(plb_status_message(status)) };
        assert!(!message.to_str().unwrap().is_empty());
    }
}

#[test]
fn label_spaces_resolve_aliases_and_report_names() {
    let space = new_space("emotion4", &["Anger", "happiness", "sadness", "neutral"]);
    unsafe {
        assert_eq!(plb_label_space_len(space), 4);
        let name = CStr::from_ptr(plb_label_space_name(space)).to_str().unwrap();
        assert_eq!(name, "emotion4");

        // Canonicalization: case-insensitive exact names.
        let mut index = usize::MAX;
        let raw = CString::new("ANGER").unwrap();
        assert_eq!(
            plb_label_space_resolve(space, raw.as_ptr(), &mut index),
            PlbStatus::Ok
        );
        assert_eq!(index, 0);

        // Alias table: "happy" lands on the class declared "happiness".
        let raw = CString::new("happy").unwrap();
        assert_eq!(
            plb_label_space_resolve(space, raw.as_ptr(), &mut index),
            PlbStatus::Ok
        );
        assert_eq!(index, 1);

        // Unknown labels are a distinct status, not a poisoned handle.
        let raw = CString::new("boredom").unwrap();
        assert_eq!(
            plb_label_space_resolve(space, raw.as_ptr(), &mut index),
            PlbStatus::UnknownLabel
        );

        // Class names come back canonicalized and index-aligned.
        let mut name_ptr: *const c_char = ptr::null();
        assert_eq!(
            plb_label_space_class_name(space, 0, &mut name_ptr),
            PlbStatus::Ok
        );
        assert_eq!(CStr::from_ptr(name_ptr).to_str().unwrap(), "anger");
        assert_eq!(
            plb_label_space_class_name(space, 4, &mut name_ptr),
            PlbStatus::OutOfRange
        );

        plb_label_space_free(space);
    }
}

#[test]
fn label_space_construction_rejects_bad_input() {
    unsafe {
        let mut space: *mut PlbLabelSpace = ptr::null_mut();
        let name = CString::new("bad").unwrap();

        // No classes.
        assert_eq!(
            plb_label_space_new(name.as_ptr(), ptr::null(), 0, &mut space),
            PlbStatus::InvalidArgument
        );

        // Duplicate classes after canonicalization.
        let (_owned, ptrs) = cstrings(&["Anger", "anger"]);
        assert_eq!(
            plb_label_space_new(name.as_ptr(), ptrs.as_ptr(), ptrs.len(), &mut space),
            PlbStatus::InvalidArgument
        );

        // Null output pointer.
        let (_owned, ptrs) = cstrings(&["a", "b"]);
        assert_eq!(
            plb_label_space_new(name.as_ptr(), ptrs.as_ptr(), ptrs.len(), ptr::null_mut()),
            PlbStatus::NullArgument
        );

        // Invalid UTF-8 in a class name.
        let bad = [0xffu8, 0];
        let bad_ptrs = [bad.as_ptr() as *const c_char];
        assert_eq!(
            plb_label_space_new(name.as_ptr(), bad_ptrs.as_ptr(), 1, &mut space),
            PlbStatus::InvalidUtf8
        );

        // Freeing null is a no-op.
        plb_label_space_free(ptr::null_mut());
    }
}

#[test]
fn label_mapping_marks_dropped_classes() {
    // Train on a 4-class space; the 5-class test space keeps 4 classes and
    // drops the one with no counterpart.
    let train = new_space("train4", &["anger", "happiness", "sadness", "neutral"]);
    let test = new_space(
        "test5",
        &["neutral", "anger", "joy", "sadness", "disgust"],
    );
    unsafe {
        let mut map = [i64::MIN; 5];
        assert_eq!(
            plb_label_mapping(train, test, map.as_mut_ptr(), map.len()),
            PlbStatus::Ok
        );
        // joy aliases onto happiness; disgust has no counterpart.
        assert_eq!(map, [3, 0, 1, 2, -1]);

        // Length must match the test space exactly.
        assert_eq!(
            plb_label_mapping(train, test, map.as_mut_ptr(), 4),
            PlbStatus::LengthMismatch
        );

        // Disjoint spaces refuse to map at all.
        let colors = new_space("colors", &["red", "green"]);
        let mut tiny = [0i64; 2];
        assert_eq!(
            plb_label_mapping(train, colors, tiny.as_mut_ptr(), tiny.len()),
            PlbStatus::NoOverlap
        );
        plb_label_space_free(colors);
        plb_label_space_free(train);
        plb_label_space_free(test);
    }
}

#[test]
fn evaluator_metrics_match_the_library() {
    let refs: Vec<usize> = vec![0, 0, 0, 1, 1, 2, 2, 2, 2, 2];
    let preds: Vec<usize> = vec![0, 0, 1, 1, 0, 2, 2, 2, 1, 0];
    let classes = 3;

    let mut eval: *mut PlbEvaluator = ptr::null_mut();
    unsafe {
        assert_eq!(plb_evaluator_new(classes, &mut eval), PlbStatus::Ok);

        // Metrics over an empty evaluator are a distinct status.
        let mut value = f64::NAN;
        assert_eq!(
            plb_evaluator_metric(eval, PlbMetric::WeightedAccuracy, &mut value),
            PlbStatus::Empty
        );

        // Mix single and batch insertion.
        assert_eq!(plb_evaluator_add(eval, refs[0], preds[0]), PlbStatus::Ok);
        assert_eq!(
            plb_evaluator_add_batch(eval, refs[1..].as_ptr(), preds[1..].as_ptr(), refs.len() - 1),
            PlbStatus::Ok
        );
        assert_eq!(plb_evaluator_count(eval), refs.len());

        let cm = paralbench::metrics::ConfusionMatrix::from_labels(&refs, &preds, classes).unwrap();
        for (metric, expected) in [
            (PlbMetric::WeightedAccuracy, paralbench::metrics::wa(&cm)),
            (PlbMetric::UnweightedAccuracy, paralbench::metrics::ua(&cm)),
            (PlbMetric::WeightedF1, paralbench::metrics::wf1(&cm)),
        ] {
            let mut value = f64::NAN;
            assert_eq!(plb_evaluator_metric(eval, metric, &mut value), PlbStatus::Ok);
            assert_eq!(value, expected, "{metric:?} must match the library");
        }

        // Out-of-range indices are rejected and batches are all-or-nothing.
        assert_eq!(plb_evaluator_add(eval, 3, 0), PlbStatus::OutOfRange);
        let bad_refs = [0usize, 7];
        let bad_preds = [0usize, 0];
        assert_eq!(
            plb_evaluator_add_batch(eval, bad_refs.as_ptr(), bad_preds.as_ptr(), 2),
            PlbStatus::OutOfRange
        );
        assert_eq!(plb_evaluator_count(eval), refs.len());

        // Reset keeps the handle usable.
        plb_evaluator_reset(eval);
        assert_eq!(plb_evaluator_count(eval), 0);
        assert_eq!(plb_evaluator_add(eval, 2, 2), PlbStatus::Ok);
        let mut value = f64::NAN;
        assert_eq!(
            plb_evaluator_metric(eval, PlbMetric::WeightedAccuracy, &mut value),
            PlbStatus::Ok
        );
        assert_eq!(value, 1.0);

        plb_evaluator_free(eval);
        plb_evaluator_free(ptr::null_mut());
    }
}

#[test]
fn evaluator_construction_validates_arguments() {
    unsafe {
        let mut eval: *mut PlbEvaluator = ptr::null_mut();
        assert_eq!(plb_evaluator_new(0, &mut eval), PlbStatus::InvalidArgument);
        assert_eq!(plb_evaluator_new(2, ptr::null_mut()), PlbStatus::NullArgument);
        assert_eq!(plb_evaluator_add(ptr::null_mut(), 0, 0), PlbStatus::NullArgument);
        assert_eq!(plb_evaluator_count(ptr::null()), 0);
    }
}

#[test]
fn mae_matches_the_library_and_validates_input() {
    let refs = [1.0, 2.0, 3.5, -1.0];
    let preds = [1.5, 2.0, 3.0, 1.0];
    unsafe {
        let mut value = f64::NAN;
        assert_eq!(
            plb_mae(refs.as_ptr(), preds.as_ptr(), refs.len(), &mut value),
            PlbStatus::Ok
        );
        let expected = paralbench::metrics::mae_metric(&refs, &preds).unwrap();
        assert_eq!(value, expected);

        assert_eq!(
            plb_mae(refs.as_ptr(), preds.as_ptr(), 0, &mut value),
            PlbStatus::Empty
        );
        assert_eq!(
            plb_mae(ptr::null(), preds.as_ptr(), 4, &mut value),
            PlbStatus::NullArgument
        );

        let with_nan = [1.0, f64::NAN];
        assert_eq!(
            plb_mae(with_nan.as_ptr(), preds.as_ptr(), 2, &mut value),
            PlbStatus::InvalidArgument
        );
    }
}

#[test]
fn generated_header_declares_the_full_surface() {
    let header_path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/paralbench.h");
    let header = std::fs::read_to_string(header_path)
        .expect("build script generates include/paralbench.h");
    for needle in [
        "PARALBENCH_H",
        "typedef struct PlbEvaluator PlbEvaluator;",
        "typedef struct PlbLabelSpace PlbLabelSpace;",
        "PLB_STATUS_OK",
        "PLB_METRIC_WEIGHTED_F1",
        "plb_version",
        "plb_status_message",
        "plb_label_space_new",
        "plb_label_space_resolve",
        "plb_label_mapping",
        "plb_evaluator_new",
        "plb_evaluator_add_batch",
        "plb_evaluator_metric",
        "plb_mae",
    ] {
        assert!(header.contains(needle), "header is missing `{needle}`");
    }
}
