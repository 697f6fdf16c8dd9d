mod common;

use common::*;
use lusnet_core::model::CLASS_ORDER_FILE;
use lusnet_service::{load_ensemble, ServiceError};

#[test]
fn loads_fold_directories_in_order() {
    let dir = tempfile::tempdir().unwrap();
    for fold in [1, 0] {
        bundle(fold, fold as u64 + 5).save(&dir.path().join(format!("fold{fold}"))).unwrap();
    }
    std::fs::create_dir(dir.path().join("notes")).unwrap();
    let ensemble = load_ensemble(dir.path()).unwrap();
    assert_eq!(ensemble.len(), 2);
    assert_eq!(ensemble.folds(), vec![0, 1]);
    assert_eq!(ensemble.model_version().len(), 16);
}

#[test]
fn empty_directory_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_ensemble(dir.path()), Err(ServiceError::NoModels(_))));
}

#[test]
fn class_order_mismatch_names_the_offender() {
    let dir = tempfile::tempdir().unwrap();
    for fold in 0..2 {
        bundle(fold, 1).save(&dir.path().join(format!("fold{fold}"))).unwrap();
    }
    std::fs::write(
        dir.path().join("fold1").join(CLASS_ORDER_FILE),
        r#"["healthy","covid19","pneumonia"]"#,
    )
    .unwrap();
    match load_ensemble(dir.path()) {
        Err(ServiceError::ClassOrder(msg)) => assert!(msg.contains("fold1"), "{msg}"),
        other => panic!("expected class order error, got {other:?}"),
    }
}
