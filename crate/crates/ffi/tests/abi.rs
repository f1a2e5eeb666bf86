//! Behavior of the C ABI exercised from Rust.

use std::ffi::CStr;
use std::ptr;

use optseq_ffi::*;

fn last_error() -> String {
    // SAFETY: os_last_error always returns a valid C string.
    unsafe { CStr::from_ptr(os_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn design_and_policy_round_trip() {
    let mut model = ptr::null_mut();
    assert_eq!(os_model_iid(1.0, 1.0, &mut model), OsStatus::Ok);
    unsafe {
        let mut design = ptr::null_mut();
        assert_eq!(os_design(model, 0.1, 0.1, 101, 1, &mut design), OsStatus::Ok);
        let (mut l0, mut l1, mut e) = (0.0, 0.0, 0.0);
        assert_eq!(os_design_lambda(design, &mut l0, &mut l1), OsStatus::Ok);
        assert_eq!(os_design_expected_run_length(design, &mut e), OsStatus::Ok);
        assert!(l0 > 0.0 && l1 > 0.0 && e > 1.0);

        let mut n = 0usize;
        assert_eq!(os_design_num_cells(design, &mut n), OsStatus::Ok);
        let mut rho = vec![0.0; n];
        assert_eq!(os_design_rho(design, rho.as_mut_ptr(), n - 1), OsStatus::BufferTooSmall);
        assert!(last_error().contains("needed"));
        assert_eq!(os_design_rho(design, rho.as_mut_ptr(), n), OsStatus::Ok);
        assert!(rho.iter().all(|&v| v >= 0.0));

        let mut policy = ptr::null_mut();
        assert_eq!(os_design_policy(design, &mut policy), OsStatus::Ok);
        let unit = OsStatistic {
            kind: OsStatisticKind::Unit,
            value: 0.0,
        };
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(os_policy_thresholds(policy, unit, &mut a, &mut b), OsStatus::Ok);
        assert!(b < 0.0 && 0.0 < a);
        let mut decision = 7;
        assert_eq!(os_policy_decide(policy, a + 0.1, unit, &mut decision), OsStatus::Ok);
        assert_eq!(decision, 1);
        assert_eq!(os_policy_decide(policy, 0.0, unit, &mut decision), OsStatus::Ok);
        assert_eq!(decision, -1);

        let mut sim = OsSimulation::default();
        assert_eq!(os_simulate(policy, model, 0, 1000, 5, &mut sim), OsStatus::Ok);
        assert_eq!(sim.runs, 1000);
        assert_eq!(os_simulate(policy, model, 2, 1000, 5, &mut sim), OsStatus::InvalidArgument);

        os_policy_free(policy);
        os_design_free(design);
        os_model_free(model);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut model = ptr::null_mut();
    assert_eq!(os_model_iid(1.0, -1.0, &mut model), OsStatus::InvalidArgument);
    assert!(model.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(os_model_iid(1.0, 1.0, ptr::null_mut()), OsStatus::NullPointer);
    assert_eq!(os_model_iid(1.0, 1.0, &mut model), OsStatus::Ok);
    assert!(last_error().is_empty());
    unsafe {
        let mut design = ptr::null_mut();
        assert_eq!(os_design(ptr::null(), 0.1, 0.1, 51, 1, &mut design), OsStatus::NullPointer);
        assert_eq!(os_design(model, 1.5, 0.1, 51, 1, &mut design), OsStatus::InvalidArgument);
        assert_eq!(os_design(model, 0.1, 0.1, 50, 1, &mut design), OsStatus::InvalidArgument);
        assert_eq!(os_design(model, 0.49, 0.49, 51, 1, &mut design), OsStatus::TrivialTest);
        assert!(design.is_null());

        let mut wald = ptr::null_mut();
        assert_eq!(os_policy_wald(0.1, 0.1, &mut wald), OsStatus::Ok);
        let state = OsStatistic {
            kind: OsStatisticKind::State,
            value: 3.0,
        };
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(os_policy_thresholds(wald, state, &mut a, &mut b), OsStatus::InvalidArgument);
        assert_eq!(os_policy_wald(0.6, 0.6, &mut wald), OsStatus::InvalidArgument);
        os_policy_free(wald);
        os_model_free(model);
        // Freeing null is a no-op.
        os_model_free(ptr::null_mut());
        os_design_free(ptr::null_mut());
        os_policy_free(ptr::null_mut());
    }
}

#[test]
fn chain_model_from_arrays() {
    let p0 = [0.5, 0.5];
    let p1 = [0.8, 0.2, 0.2, 0.8];
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(os_model_chain(1.0, p0.as_ptr(), p1.as_ptr(), &mut model), OsStatus::Ok);
        assert_eq!(os_model_chain(1.0, ptr::null(), p1.as_ptr(), &mut model), OsStatus::NullPointer);
        let bad = [0.8, 0.3, 0.2, 0.8];
        let mut other = ptr::null_mut();
        assert_eq!(os_model_chain(1.0, p0.as_ptr(), bad.as_ptr(), &mut other), OsStatus::InvalidArgument);
        os_model_free(model);
    }
}
