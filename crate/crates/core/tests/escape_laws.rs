use approx::assert_relative_eq;
use proptest::prelude::*;
use saddle_core::activation::{classify, Activation, ActivationClass};
use saddle_core::error::Error;
use saddle_core::escape_laws::{
    critical_depth_prediction, escape_closed_form_balanced, escape_closed_form_balanced_to, escape_integral,
    k_sigma, master_deviation, prediction_table, resonance_correction, resonance_lambda, shell_integrals,
    universality_rescale, InitProfile, Regime, ResonanceCorrection,
};
use saddle_core::ode::OdeOptions;
use saddle_core::reduced_flow::{EscapeSpec, ReducedFlow, ReducedFlowConfig, RhsKind};

#[test]
fn closed_form_examples() {
    assert_relative_eq!(escape_closed_form_balanced(2, 0.1, 1.0).unwrap(), 10f64.ln(), epsilon = 1e-14);
    assert_relative_eq!(escape_closed_form_balanced(3, 0.1, 1.0).unwrap(), 9.0, epsilon = 1e-12);
    for l in 2..8 {
        let t = escape_closed_form_balanced(l, 1.0 - 1e-12, 1.0).unwrap();
        assert!(t.abs() < 1e-9, "L={l}: {t}");
    }
    assert_relative_eq!(escape_closed_form_balanced(5, 0.1, 2.0).unwrap(), 999.0 / 6.0, max_relative = 1e-13);
    assert!(escape_closed_form_balanced(1, 0.1, 1.0).is_err());
    assert!(escape_closed_form_balanced(3, 0.1, 0.0).is_err());
    assert!(escape_closed_form_balanced_to(3, 0.5, 1.0, 0.3).is_err());
}

#[test]
fn balanced_integral_matches_closed_form() {
    for l in 2..=7 {
        for eps in [0.3, 0.05, 0.01] {
            let p = InitProfile::bottleneck(l, l, eps, 1.0).unwrap();
            let q = escape_integral(&p, 0.7, 1.0).unwrap();
            let c = escape_closed_form_balanced(l, eps, 0.7).unwrap();
            assert_relative_eq!(q, c, max_relative = 1e-8);
        }
    }
}

#[test]
fn hierarchy_tracks_power_law() {
    let p = InitProfile::bottleneck(6, 3, 0.01, 1.0).unwrap();
    let q = escape_integral(&p, 1.0, 1.0).unwrap();
    let law = critical_depth_prediction(&p, 1.0).unwrap();
    assert_eq!(law.regime, Regime::Power);
    assert_eq!(law.exponent, Some(1));
    assert!((q / law.t_lead - 1.0).abs() <= 0.05, "{q} vs {}", law.t_lead);
}

#[test]
fn critical_depth_branches() {
    let k = 0.8;
    let p = InitProfile::from_scales(&[0.01, 1.2, 0.9, 1.5]).unwrap();
    let r1 = critical_depth_prediction(&p, k).unwrap();
    assert_eq!(r1.regime, Regime::Constant);
    assert_relative_eq!(r1.t_lead, 1.0 / (k * 1.2 * 0.9 * 1.5), max_relative = 1e-14);
    let p = InitProfile::from_scales(&[0.01, 0.01, 0.9, 1.5]).unwrap();
    let r2 = critical_depth_prediction(&p, k).unwrap();
    assert_eq!(r2.regime, Regime::Log);
    assert_relative_eq!(r2.t_lead, 100f64.ln() / (k * 0.9 * 1.5), max_relative = 1e-14);
    let p = InitProfile::bottleneck(6, 5, 0.05, 1.0).unwrap();
    let r5 = critical_depth_prediction(&p, 1.0).unwrap();
    assert_relative_eq!(r5.t_lead, 8000.0 / 3.0, max_relative = 1e-12);
    assert_eq!(r5.exponent, Some(3));
}

#[test]
fn weak_hierarchy_is_rejected() {
    let p = InitProfile::bottleneck(5, 2, 0.2, 1.0).unwrap();
    assert!(matches!(critical_depth_prediction(&p, 1.0), Err(Error::HierarchyTooWeak { .. })));
    let p = InitProfile::bottleneck(5, 2, 0.01, 5.0).unwrap();
    assert!(critical_depth_prediction(&p, 1.0).is_err());
    let p = InitProfile::bottleneck(4, 4, 0.2, 1.0).unwrap();
    assert_eq!(critical_depth_prediction(&p, 1.0).unwrap().regime, Regime::Power);
}

#[test]
fn profile_construction() {
    let p = InitProfile::from_scales(&[1.0, 0.1, 0.5, 0.1]).unwrap();
    assert_eq!(p.r, 2);
    assert_eq!(p.s, vec![0.1, 0.1, 0.5, 1.0]);
    let gaps = p.gaps();
    assert_eq!(gaps[0], 0.0);
    assert_relative_eq!(gaps[2], 0.99, epsilon = 1e-15);
    assert!(InitProfile::from_scales(&[0.1]).is_err());
    assert!(InitProfile::from_scales(&[0.1, 0.0]).is_err());
    assert!(InitProfile::bottleneck(3, 4, 0.1, 1.0).is_err());
}

#[test]
fn two_layer_integral_is_logarithmic() {
    let p = InitProfile::bottleneck(2, 2, 1e-3, 1.0).unwrap();
    assert_relative_eq!(escape_integral(&p, 1.0, 1.0).unwrap(), 1000f64.ln(), max_relative = 1e-10);
}

#[test]
fn shell_sum_equals_integral() {
    let p = InitProfile::from_scales(&[0.01, 0.05, 0.2, 0.6, 1.0]).unwrap();
    let total = escape_integral(&p, 1.0, 1.0).unwrap();
    let shells = shell_integrals(&p, 1.0, 1.0).unwrap();
    assert_eq!(shells.len(), 4);
    let sum: f64 = shells.iter().sum();
    assert!((sum - total).abs() <= 2e-10 * total.max(1.0), "{sum} vs {total}");
}

#[test]
fn bottleneck_ratio_per_halving() {
    for r in 3..=5 {
        let t = |eps| escape_integral(&InitProfile::bottleneck(6, r, eps, 1.0).unwrap(), 1.0, 1.0).unwrap();
        let ratio = t(0.0025) / t(0.005);
        let want = 2f64.powi(r as i32 - 2);
        assert!((ratio / want - 1.0).abs() < 0.05, "r={r}: {ratio}");
    }
}

#[test]
fn resonance_cases() {
    let lam = resonance_lambda(&Activation::tanh()).unwrap();
    assert!(lam != 0.0);
    match resonance_correction(4, 3, lam, 0.5, 0.01) {
        ResonanceCorrection::Log(v) => assert_relative_eq!(v, -(lam / 0.5) * 100f64.ln(), max_relative = 1e-14),
        other => panic!("{other:?}"),
    }
    assert_eq!(resonance_correction(5, 3, lam, 0.5, 0.01), ResonanceCorrection::Power { order: 2 });
    assert!(matches!(resonance_correction(3, 2, 0.1, 0.5, 0.01), ResonanceCorrection::Log(_)));
    assert_eq!(resonance_lambda(&Activation::linear()).unwrap(), 0.0);
}

#[test]
fn rescale_is_k_times_t() {
    let act = Activation::erf();
    let k = k_sigma(&act, 4, 1.5, 64.0).unwrap();
    assert_relative_eq!(universality_rescale(100.0, &act, 4, 1.5, 64.0).unwrap(), 100.0 * k, max_relative = 1e-15);
    assert_eq!(
        universality_rescale(7.0, &act, 4, 1.0, 64.0).unwrap(),
        universality_rescale(7.0, &act, 4, 1.0, 64.0).unwrap()
    );
}

fn rescaled_escape(act: Activation, eps: f64) -> f64 {
    let (l, n, theta) = (4, 64.0, 0.5);
    let f = ReducedFlow::new(ReducedFlowConfig::new(l, n, 1.0, act.clone())).unwrap();
    let t = f.escape_time(&[eps; 4], RhsKind::Exact, EscapeSpec::x1(theta), 1e9, OdeOptions::default()).unwrap();
    universality_rescale(t, &act, l, 1.0, n).unwrap()
}

#[test]
fn class_b_collapse() {
    let a = rescaled_escape(Activation::tanh(), 0.05);
    let b = rescaled_escape(Activation::erf(), 0.05);
    assert!((a / b - 1.0).abs() < 0.02, "{a} vs {b}");
}

#[test]
fn class_c_deviation_is_linear_in_eps() {
    let gelu = Activation::gelu();
    assert_eq!(classify(&gelu).unwrap(), ActivationClass::C);
    let dev = |eps| master_deviation(rescaled_escape(gelu.clone(), eps), 4, eps, 0.5).unwrap().abs();
    let ratio = dev(0.1) / dev(0.01);
    assert!(ratio > 5.0 && ratio < 20.0, "{ratio}");
}

#[test]
fn prediction_table_rows() {
    let rows = prediction_table(6, 3, 1.0, 1.0, &[0.01, 0.02]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_relative_eq!(rows[0].t_lead, 100.0, max_relative = 1e-14);
    assert_relative_eq!(rows[1].t_lead, 50.0, max_relative = 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn integral_decreases_in_eps(e in 0.005f64..0.05, f in 1.1f64..3.0) {
        let t = |eps| escape_integral(&InitProfile::bottleneck(5, 3, eps, 1.0).unwrap(), 1.0, 1.0).unwrap();
        prop_assert!(t(e * f) < t(e));
    }

    #[test]
    fn integral_decreases_in_each_scale(
        s in proptest::collection::vec(0.2f64..1.0, 4),
        i in 0usize..4,
        bump in 1.05f64..1.5,
    ) {
        let mut scales = vec![0.02];
        scales.extend(&s);
        let base = escape_integral(&InitProfile::from_scales(&scales).unwrap(), 1.0, 1.0).unwrap();
        scales[i + 1] = (scales[i + 1] * bump).min(0.999);
        let bigger = escape_integral(&InitProfile::from_scales(&scales).unwrap(), 1.0, 1.0).unwrap();
        prop_assert!(bigger <= base);
    }
}
