use std::f64::consts::PI;

use bhm_core::nalgebra::{DMatrix, DVector};
use bhm_core::splinefit::SplineModel;
use bhm_core::transforms::{MonotoneMap, Transform, TransformError, TransformKind};

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let x = a + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    sum * h / 3.0
}

fn model_on_unit(coeffs: Vec<f64>) -> SplineModel {
    let len = coeffs.len();
    SplineModel {
        order: (len - 1) as u32,
        breakpoints: vec![0.0, 1.0],
        piece_coeffs: vec![coeffs],
        theta: DVector::zeros(len),
        free_cov: DMatrix::zeros(len, len),
        param_map: vec![DMatrix::identity(len, len)],
    }
}

#[test]
fn forward_frozen_values() {
    let arctan = Transform::new(TransformKind::Arctan, 0.0).unwrap();
    let (y, w) = arctan.forward(1.0).unwrap();
    assert!((y - 0.5).abs() <= 1e-15);
    assert!((w - (2.0 / PI) / 2.0).abs() <= 1e-15, "1/x' = (2/π)/(1+x²) at x=1");

    let exp = Transform::new(TransformKind::Exp, 0.0).unwrap();
    let (y, w) = exp.forward(0.0).unwrap();
    assert_eq!(y, 0.0);
    assert_eq!(w, 1.0);

    let ident = Transform::new(TransformKind::Identity, 0.5).unwrap();
    let (y, w) = ident.forward(4.0).unwrap();
    assert_eq!(y, 4.0);
    assert_eq!(w, 2.0);

    // weight composes the power and the Jacobian factor
    let t = Transform::new(TransformKind::Arctan, 0.5).unwrap();
    let (_, w) = t.forward(4.0).unwrap();
    assert!((w - 2.0 * (2.0 / PI) / 17.0).abs() <= 1e-14);

    // the divergent endpoint records weight zero, legally
    let (_, w) = t.forward(0.0).unwrap();
    assert_eq!(w, 0.0);
}

#[test]
fn inverse_scale_frozen_values() {
    let arctan = Transform::new(TransformKind::Arctan, 0.0).unwrap();
    assert!((arctan.inverse_scale(0.5).unwrap() - 1.0 / PI).abs() <= 1e-15);

    let exp = Transform::new(TransformKind::Exp, 0.0).unwrap();
    assert_eq!(exp.inverse_scale(0.0).unwrap(), 1.0);
    assert!((exp.inverse_scale(0.25).unwrap() - 0.75).abs() <= 1e-15);

    let ident = Transform::identity();
    for y in [0.0, 0.3, 0.999, 5.0] {
        assert_eq!(ident.inverse_scale(y).unwrap(), 1.0);
    }
}

#[test]
fn round_trip_within_conditioning() {
    // |x_of(y_of(x)) - x| is bounded by the map's own sensitivity to one
    // rounding of y: tol = 1e-12·x + 8ε·(x + x'(y)·max(1, y)). The exp map
    // saturates y = 1 in f64 near x ≈ 36, so its grid stops at 30.
    let eps = f64::EPSILON;
    let check = |kind: TransformKind, lo: f64, hi: f64| {
        let n = 600;
        for i in 0..=n {
            let x = lo * (hi / lo).powf(i as f64 / n as f64);
            let y = kind.y_of(x);
            let back = kind.x_of(y);
            let tol = 1e-12 * x + 8.0 * eps * (x + kind.x_prime(y) * y.abs().max(1.0));
            assert!((back - x).abs() <= tol, "{kind:?} x={x:e}: {back:e}, tol {tol:e}");
        }
    };
    check(TransformKind::Arctan, 1e-6, 1e6);
    check(TransformKind::Exp, 1e-6, 30.0);
    check(TransformKind::Identity, 1e-6, 1e6);

    // in the benign middle of the range the round trip is at machine level
    for x in [1e-3, 0.1, 1.0, 7.0, 250.0] {
        let y = TransformKind::Arctan.y_of(x);
        assert!((TransformKind::Arctan.x_of(y) - x).abs() <= 1e-12 * x);
    }
    for x in [1e-2, 0.1, 1.0, 5.0] {
        let y = TransformKind::Exp.y_of(x);
        assert!((TransformKind::Exp.x_of(y) - x).abs() <= 1e-12 * x);
    }
}

#[test]
fn restore_identity_is_eval() {
    let m = model_on_unit(vec![2.0, 0.5]);
    let t = Transform::identity();
    for x in [0.0, 0.25, 0.9, 1.0] {
        let u = 2.0 * x - 1.0;
        assert!((t.restore(&m, x).unwrap() - (2.0 + 0.5 * u)).abs() <= 1e-15);
    }
}

#[test]
fn restore_divides_by_the_weight_only() {
    // the Jacobian was already folded into the recorded values, so a
    // constant fit in y restores to c / x^p
    let m = model_on_unit(vec![3.0]);
    let exp = Transform::new(TransformKind::Exp, 0.0).unwrap();
    for x in [0.1, 1.0, 10.0] {
        assert!((exp.restore(&m, x).unwrap() - 3.0).abs() <= 1e-14);
    }
    let t = Transform::new(TransformKind::Arctan, 0.5).unwrap();
    for x in [0.25, 1.0, 4.0] {
        assert!((t.restore(&m, x).unwrap() - 3.0 / x.sqrt()).abs() <= 1e-13);
    }
}

#[test]
fn restored_integral_changes_variables_exactly() {
    // ∫ restore(x) dx over [x(y0), x(y1)] = ∫ g(y)·x'(y)/x(y)^p dy
    let g = model_on_unit(vec![1.0, 0.5, -0.2]);
    let t = Transform::new(TransformKind::Arctan, 0.5).unwrap();
    let (y0, y1) = (0.2, 0.8);
    let kind = t.kind;
    let (x0, x1) = (kind.x_of(y0), kind.x_of(y1));
    let lhs = simpson(|x| t.restore(&g, x).unwrap(), x0, x1, 4000);
    let rhs = simpson(
        |y| {
            let u = 2.0 * y - 1.0;
            let gy = 1.0 + 0.5 * u - 0.2 * u * u;
            gy * kind.x_prime(y) / kind.x_of(y).sqrt()
        },
        y0,
        y1,
        4000,
    );
    assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs(), "{lhs} vs {rhs}");
}

#[test]
fn error_cases() {
    assert_eq!(
        Transform::new(TransformKind::Arctan, -0.5).unwrap_err(),
        TransformError::BadPower
    );
    let t = Transform::new(TransformKind::Arctan, 0.5).unwrap();
    assert!(matches!(t.forward(-1.0), Err(TransformError::BadInput { .. })));
    assert!(matches!(t.inverse_scale(1.0), Err(TransformError::OutOfRange { .. })));
    assert!(matches!(t.inverse_scale(-0.1), Err(TransformError::OutOfRange { .. })));
    let m = model_on_unit(vec![1.0]);
    assert_eq!(t.restore(&m, 0.0), Err(TransformError::DivergentPoint));
    assert!(matches!(t.restore(&m, -2.0), Err(TransformError::BadInput { .. })));
}
