//! Properties of the spherical interpolation path.

use ltx_core::generate::{interpolation_path, slerp};
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b));
    c.clamp(-1.0, 1.0).acos()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d).prop_filter("non-zero", |v| norm(v) > 0.1)
}

proptest! {
    #[test]
    fn endpoints_are_exact(a in vector(8), b in vector(8)) {
        prop_assume!(angle(&a, &b) < std::f64::consts::PI - 1e-3);
        prop_assert_eq!(slerp(&a, &b, 0.0).unwrap(), a.clone());
        prop_assert_eq!(slerp(&a, &b, 1.0).unwrap(), b.clone());
    }

    #[test]
    fn unit_vectors_move_at_constant_angular_speed(a in vector(6), b in vector(6), k in 0usize..=10) {
        let (a, b) = (unit(a), unit(b));
        let omega = angle(&a, &b);
        prop_assume!(omega > 1e-3 && omega < std::f64::consts::PI - 1e-3);
        let t = k as f64 / 10.0;
        let z = slerp(&a, &b, t).unwrap();
        prop_assert!((norm(&z) - 1.0).abs() < 1e-9);
        prop_assert!((angle(&a, &z) - t * omega).abs() < 1e-6);
        prop_assert!((angle(&z, &b) - (1.0 - t) * omega).abs() < 1e-6);
    }

    #[test]
    fn path_has_requested_length_and_endpoints(a in vector(4), b in vector(4), steps in 2usize..12) {
        prop_assume!(angle(&a, &b) < std::f64::consts::PI - 1e-3);
        let p = interpolation_path(&a, &b, steps).unwrap();
        prop_assert_eq!(p.len(), steps);
        prop_assert_eq!(&p[0], &a);
        prop_assert_eq!(&p[steps - 1], &b);
    }
}

#[test]
fn degenerate_inputs() {
    let a = [1.0, 0.0];
    assert_eq!(slerp(&a, &a, 0.3).unwrap(), vec![1.0, 0.0]);
    assert!(slerp(&a, &[-1.0, 0.0], 0.5).is_err());
    assert!(slerp(&a, &[0.0, 0.0], 0.5).is_err());
    assert!(slerp(&a, &[1.0], 0.5).is_err());
    assert!(interpolation_path(&a, &[0.0, 1.0], 0).is_err());
    assert_eq!(interpolation_path(&a, &[0.0, 1.0], 1).unwrap(), vec![vec![1.0, 0.0]]);
}
