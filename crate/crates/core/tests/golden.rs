//! Every file format checked byte for byte against `tests/golden/`.

mod common;

#[test]
fn formats_match_golden_files() {
    let bad = common::check_golden();
    assert!(bad.is_empty(), "golden mismatch: {bad:?} (rerun with EXTD_BLESS=1 after an intended change)");
}

#[test]
fn formats_are_stable_across_renders() {
    assert_eq!(common::golden_outputs(), common::golden_outputs());
}
