use debias_core::oracle::{self, DescentOptions};
use debias_core::projection::{calibrated_projection, calibration_loss, equalization_loss, equalize_embedding};
use nalgebra::DMatrix;

#[test]
fn descent_agrees_with_closed_form() {
    let c = oracle::check_calibration_oracle(11, 20, 32, 8);
    assert!(c.passed, "{c:?}");
    let e = oracle::check_equalization_oracle(12, 20, 32, 8);
    assert!(e.passed, "{e:?}");
}

#[test]
fn closed_form_is_a_minimum() {
    let mut rng = oracle::rng(3);
    let d = 6;
    let pairs = oracle::random_pairs(&mut rng, d, 4, 0.4);
    let p0 = DMatrix::identity(d, d);
    let r = calibrated_projection(&p0, &pairs, 10.0).unwrap();
    let best = calibration_loss(&r.p_star, &p0, &pairs, 10.0).unwrap();
    for _ in 0..20 {
        let noise = DMatrix::from_fn(d, d, |_, _| oracle::gaussian_vector(&mut rng, 1)[0] * 1e-3);
        assert!(calibration_loss(&(&r.p_star + noise), &p0, &pairs, 10.0).unwrap() > best);
    }
    let z0 = oracle::unit_vector(&mut rng, d);
    let z = equalize_embedding(&z0, &pairs, 10.0).unwrap();
    let gd = oracle::descend_equalization(&z0, &pairs, 10.0, DescentOptions::default());
    let lz = equalization_loss(&z, &z0, &pairs, 10.0).unwrap();
    assert!(lz <= equalization_loss(&gd.minimizer, &z0, &pairs, 10.0).unwrap() + 1e-12);
}

#[test]
fn suite_is_reproducible() {
    assert_eq!(oracle::run_suite(5), oracle::run_suite(5));
}
