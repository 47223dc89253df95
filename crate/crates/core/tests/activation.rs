use approx::assert_relative_eq;
use proptest::prelude::*;
use saddle_core::activation::{
    center_class_d, classify, euler_deficit, hermite_moments, Activation, ActivationClass,
};
use saddle_core::error::Error;

fn all() -> Vec<Activation> {
    Activation::shipped().iter().map(|n| Activation::by_name(n).unwrap()).collect()
}

#[test]
fn euler_deficit_values() {
    assert_eq!(euler_deficit(&Activation::linear(), 0.7), 0.0);
    let z = 0.01;
    assert_relative_eq!(euler_deficit(&Activation::tanh(), z), -(2.0 / 3.0) * z * z * z, max_relative = 1e-2);
    let cubic = Activation::polynomial("cubic", &[0.0, 1.0, 0.0, 1.0]).unwrap();
    assert_relative_eq!(euler_deficit(&cubic, 1.0), 2.0, epsilon = 1e-14);
}

#[test]
fn classification_of_shipped_set() {
    let expect = [
        ("linear", ActivationClass::A),
        ("tanh", ActivationClass::B(3)),
        ("erf", ActivationClass::B(3)),
        ("sin", ActivationClass::B(3)),
        ("gelu", ActivationClass::C),
        ("swish", ActivationClass::C),
        ("sigmoid", ActivationClass::D),
        ("softplus", ActivationClass::D),
    ];
    for (name, class) in expect {
        assert_eq!(classify(&Activation::by_name(name).unwrap()).unwrap(), class, "{name}");
    }
    assert_eq!(expect.len(), Activation::shipped().len());
}

#[test]
fn thin_family_is_rejected() {
    let even_quartic = Activation::polynomial("quartic", &[0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(matches!(classify(&even_quartic), Err(Error::HypothesisViolation(_))));
}

#[test]
fn hermite_moment_values() {
    assert_relative_eq!(hermite_moments(&Activation::linear(), 128).unwrap().h_sigma, 1.0, epsilon = 1e-12);
    let erf = hermite_moments(&Activation::erf(), 128).unwrap();
    assert_relative_eq!(erf.h_sigma, 2.0 / (3.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    let tanh = hermite_moments(&Activation::tanh(), 128).unwrap().h_sigma;
    let oracle = hermite_moments(&Activation::tanh(), 256).unwrap().h_sigma;
    assert!(tanh > 0.0 && tanh < 1.0);
    assert_relative_eq!(tanh, 0.605_705_509_602, epsilon = 1e-10);
    assert_relative_eq!(tanh, oracle, epsilon = 1e-12);
    assert!(hermite_moments(&Activation::tanh(), 16).is_err());
}

#[test]
fn stein_identity_and_positivity() {
    for act in all() {
        let m = hermite_moments(&act, 128).unwrap();
        assert!((m.h_sigma - m.e_sigma_prime).abs() <= 1e-10, "{}", act.name);
        match classify(&act).unwrap() {
            ActivationClass::B(_) => {
                assert!(m.h_sigma > 0.0);
                assert_eq!(m.gamma_c, 0.0, "{}", act.name);
            }
            ActivationClass::C => assert!(m.h_sigma > 0.0),
            _ => {}
        }
    }
}

#[test]
fn class_b_cubic_moments_are_positive() {
    for name in ["tanh", "erf", "sin"] {
        let m = hermite_moments(&Activation::by_name(name).unwrap(), 256).unwrap();
        assert!(m.h_sigma_q > 0.0, "{name}: {}", m.h_sigma_q);
    }
}

#[test]
fn centering_class_d() {
    let (s, c) = center_class_d(&Activation::sigmoid()).unwrap();
    assert_relative_eq!(c, 0.5);
    assert_eq!(s.sigma(0.0), 0.0);
    assert!(matches!(classify(&s).unwrap(), ActivationClass::B(_)));
    let (sp, c) = center_class_d(&Activation::softplus()).unwrap();
    assert_relative_eq!(c, 2f64.ln(), epsilon = 1e-15);
    assert!(sp.sigma(0.0).abs() < 1e-15);
    assert_eq!(classify(&sp).unwrap(), ActivationClass::C);
    assert!(matches!(center_class_d(&Activation::tanh()), Err(Error::NotClassD(_))));
}

#[test]
fn deficit_leading_coefficient() {
    for act in all() {
        let Ok(ActivationClass::B(_) | ActivationClass::C) = classify(&act) else { continue };
        let q = act.q.unwrap() as i32;
        let target = (q as f64 - 1.0) * act.a_q;
        let r = |z: f64| euler_deficit(&act, z) / z.powi(q);
        // One Richardson step removes the next even/odd order.
        let extrapolated = 2.0 * r(1e-3) - r(2e-3);
        assert_relative_eq!(extrapolated, target, max_relative = 1e-2);
        assert_relative_eq!(r(1e-2), target, max_relative = 5e-2);
    }
}

#[test]
fn unknown_name_is_an_error() {
    assert!(Activation::by_name("relu").is_err());
}

proptest! {
    #[test]
    fn derivative_matches_central_difference(u in -2.0f64..2.0) {
        for act in all() {
            let h = 1e-5;
            let fd = (act.sigma(u + h) - act.sigma(u - h)) / (2.0 * h);
            let d = act.sigma_prime(u);
            prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1e-3), "{} at {u}", act.name);
        }
    }

    #[test]
    fn odd_activations_are_odd(u in -3.0f64..3.0) {
        for act in all().into_iter().filter(|a| a.is_odd) {
            prop_assert!((act.sigma(-u) + act.sigma(u)).abs() <= 1e-12, "{}", act.name);
        }
    }

    #[test]
    fn slope_at_origin_is_nonzero(i in 0usize..8) {
        let act = all().swap_remove(i);
        prop_assert!(act.alpha != 0.0);
        prop_assert!((act.sigma_prime(0.0) - act.alpha).abs() < 1e-14);
    }
}
