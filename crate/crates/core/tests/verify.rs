use cpl_core::sdifp::{projection_jacobians, AffineParams, MomentEstimate, ProjectionJacobians};
use cpl_core::verify::{run, VerifyOptions};

fn flipped_dalpha_dmu2(m: &MomentEstimate<f64>, a: &AffineParams<f64>, eps: f64) -> ProjectionJacobians<f64> {
    let mut j = projection_jacobians(m, a, eps);
    j.da_dmu2 = -j.da_dmu2;
    j
}

#[test]
fn clean_build_passes_every_check() {
    let report = run(&VerifyOptions::default());
    assert!(report.checks.len() >= 25, "only {} checks", report.checks.len());
    assert!(report.passed(), "{}", report.render());
    let text = report.render();
    assert!(text.contains(&format!("{} checks, 0 failed", report.checks.len())));
}

#[test]
fn sign_flip_in_the_jacobian_is_caught() {
    let report = run(&VerifyOptions { jacobians: flipped_dalpha_dmu2, ..Default::default() });
    let check = report.get("jacobian_dalpha_dmu2_vs_fd").expect("jacobian check present");
    assert!(!check.passed, "{check:?}");
    assert!(check.observed > check.tolerance);
    assert!(!report.passed());
    assert!(report.render().contains("FAIL jacobian_dalpha_dmu2_vs_fd"));
}
