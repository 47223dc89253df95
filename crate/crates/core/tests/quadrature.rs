use approx::assert_relative_eq;
use proptest::prelude::*;
use saddle_core::activation::Activation;
use saddle_core::escape_laws::escape_closed_form_balanced;
use saddle_core::quadrature::{
    adaptive_integrate, gauss_hermite, gauss_legendre, log_substituted_escape_integrand, QuadTolerance,
};

fn tol() -> QuadTolerance {
    QuadTolerance::default()
}

fn double_factorial(k: u32) -> f64 {
    (1..=k).rev().step_by(2).map(f64::from).product()
}

#[test]
fn single_node_rule() {
    let r = gauss_hermite(1).unwrap();
    assert_eq!(r.nodes, vec![0.0]);
    assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-15);
}

#[test]
fn fourth_moment_and_stein() {
    assert_relative_eq!(gauss_hermite(64).unwrap().expect(|g| g.powi(4)), 3.0, epsilon = 1e-10);
    let r = gauss_hermite(128).unwrap();
    let t = Activation::tanh();
    assert!((r.expect(|g| t.sigma_prime(g)) - r.expect(|g| g * t.sigma(g))).abs() <= 1e-10);
}

#[test]
fn node_count_bounds() {
    assert!(gauss_hermite(0).is_err());
    assert!(gauss_hermite(513).is_err());
    assert!(gauss_hermite(512).is_ok());
}

#[test]
fn monomial_exactness() {
    for n in [2usize, 5, 10, 20, 40] {
        let r = gauss_hermite(n).unwrap();
        for k in 0..(2 * n as i32) {
            let want = match k {
                0 => 1.0,
                _ if k % 2 == 1 => 0.0,
                _ => double_factorial(k as u32 - 1),
            };
            let got = r.expect(|g| g.powi(k));
            let scale = r.expect(|g| g.abs().powi(k));
            assert!((got - want).abs() <= 1e-12 * scale.max(1.0), "n={n} k={k}: {got} vs {want}");
        }
    }
}

#[test]
fn rule_shape() {
    for n in [1usize, 7, 32, 128, 256] {
        let r = gauss_hermite(n).unwrap();
        assert!(r.weights.iter().all(|&w| w > 0.0));
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let mut sorted = r.nodes.clone();
        sorted.sort_by(f64::total_cmp);
        for (a, b) in sorted.iter().zip(sorted.iter().rev()) {
            assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn legendre_on_unit_interval() {
    let r = gauss_legendre(8).unwrap();
    let s: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(15)).sum();
    assert_relative_eq!(s, 1.0 / 16.0, epsilon = 1e-14);
}

#[test]
fn adaptive_examples() {
    assert_relative_eq!(adaptive_integrate(|_| 1.0, 0.0, 1.0, tol()).unwrap().value, 1.0, epsilon = 1e-14);
    let r = adaptive_integrate(|s| 1.0 / (1.0 + s * s), 0.0, 1.0, tol()).unwrap();
    assert!((r.value - std::f64::consts::FRAC_PI_4).abs() <= 1e-10);
    assert!(r.abs_error_estimate <= 1e-10);
    let eps = 0.1f64;
    let r = adaptive_integrate(|y| y.powf(-1.5), eps * eps, 1.0, tol()).unwrap();
    assert!((r.value - 18.0).abs() <= 1e-8);
}

#[test]
fn adaptive_reports_budget_exhaustion() {
    let t = QuadTolerance {
        abs_tol: 1e-15,
        rel_tol: 1e-15,
        max_evaluations: 200,
    };
    assert!(adaptive_integrate(|x: f64| (1.0 / x).sin(), 1e-3, 1.0, t).is_err());
}

#[test]
fn log_substitution_examples() {
    let sub = log_substituted_escape_integrand(0.1, 1.0);
    let (a, b) = sub.limits();
    assert_eq!(a, 0.0);
    assert_relative_eq!(b, 10f64.ln(), epsilon = 1e-15);
    let v = sub.integrate(|y| 1.0 / y, tol()).unwrap().value;
    assert_relative_eq!(v, 2.0 * 10f64.ln(), epsilon = 1e-12);
    assert_eq!(log_substituted_escape_integrand(1.0, 1.0).integrate(|y| 1.0 / y, tol()).unwrap().value, 0.0);
}

#[test]
fn balanced_escape_integral_matches_closed_form() {
    // L = 4 balanced: dY / (2 K Y^2) over [eps^2, 1].
    let (eps, k) = (0.05, 0.3);
    let sub = log_substituted_escape_integrand(eps, 1.0);
    let v = sub.integrate(|y| 1.0 / (2.0 * k * y * y), tol()).unwrap().value;
    let cf = escape_closed_form_balanced(4, eps, k).unwrap();
    assert!((v / cf - 1.0).abs() <= 1e-8);
}

proptest! {
    #[test]
    fn splitting_invariance(c in 0.05f64..0.95, w in 0.5f64..4.0) {
        let f = |x: f64| (w * x).sin() * (-x * x).exp() + 1.0;
        let whole = adaptive_integrate(f, 0.0, 1.0, tol()).unwrap();
        let left = adaptive_integrate(f, 0.0, c, tol()).unwrap();
        let right = adaptive_integrate(f, c, 1.0, tol()).unwrap();
        prop_assert!((whole.value - left.value - right.value).abs() <= 2.0 * 1e-10 * whole.value.abs().max(1.0));
    }

    #[test]
    fn substitution_agrees_with_direct(eps in 0.05f64..0.9, p in 0.2f64..1.4) {
        let f = |y: f64| y.powf(-p);
        let direct = adaptive_integrate(f, eps * eps, 1.0, tol()).unwrap().value;
        let sub = log_substituted_escape_integrand(eps, 1.0).integrate(f, tol()).unwrap().value;
        prop_assert!((direct / sub - 1.0).abs() <= 1e-8);
    }
}

#[test]
fn two_node_legendre() {
    let r = gauss_legendre(2).unwrap();
    let a = 0.5 - 0.5 / 3f64.sqrt();
    let mut n = r.nodes.clone();
    n.sort_by(f64::total_cmp);
    assert!((n[0] - a).abs() < 1e-15 && (n[1] - (1.0 - a)).abs() < 1e-15);
    assert!((r.weights[0] - 0.5).abs() < 1e-15);
}

#[test]
fn empty_interval_is_zero() {
    assert_eq!(adaptive_integrate(|x| x, 1.0, 1.0, tol()).unwrap().value, 0.0);
    assert!(adaptive_integrate(|x| x, 1.0, 0.0, tol()).is_err());
}
