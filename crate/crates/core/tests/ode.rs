use approx::assert_relative_eq;
use proptest::prelude::*;
use saddle_core::error::Error;
use saddle_core::fit::{log_grid, loglog_slope, ols};
use saddle_core::ode::{Dopri5, OdeOptions};

const NO_EVENT: Option<fn(f64, &[f64]) -> f64> = None;

#[test]
fn exponential_event() {
    let s = Dopri5::default()
        .solve(|_, y, d| d[0] = y[0], 0.0, &[0.01], 100.0, Some(|_: f64, y: &[f64]| y[0] - 1.0), &[], false)
        .unwrap();
    let ev = s.event.unwrap();
    assert!((ev.t - 100f64.ln()).abs() < 1e-9, "{}", ev.t);
    assert!((ev.y[0] - 1.0).abs() < 1e-8);
    assert_eq!(s.t, ev.t);
}

#[test]
fn missed_event_runs_to_end() {
    let s = Dopri5::default()
        .solve(|_, y, d| d[0] = y[0], 0.0, &[0.01], 1.0, Some(|_: f64, y: &[f64]| y[0] - 1.0), &[], false)
        .unwrap();
    assert!(s.event.is_none());
    assert_eq!(s.t, 1.0);
    assert_relative_eq!(s.y[0], 0.01 * 1f64.exp(), max_relative = 1e-11);
}

#[test]
fn harmonic_snapshots_and_dense() {
    let s = Dopri5::new(OdeOptions { rel_tol: 1e-10, abs_tol: 1e-12, ..Default::default() })
        .solve(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            0.0,
            &[0.0, 1.0],
            6.0,
            NO_EVENT,
            &[0.3, 1.7, 4.1],
            true,
        )
        .unwrap();
    assert_eq!(s.snapshots.len(), 3);
    for (t, y) in &s.snapshots {
        assert!((y[0] - t.sin()).abs() < 1e-8, "{t} {}", y[0]);
    }
    let dense = s.dense.unwrap();
    let mut out = [0.0; 2];
    for t in [0.05, 2.2, 5.9] {
        dense.eval_into(t, &mut out);
        assert!((out[0] - f64::sin(t)).abs() < 1e-8 && (out[1] - f64::cos(t)).abs() < 1e-8);
    }
}

#[test]
fn backward_in_time() {
    let s = Dopri5::default().solve(|_, y, d| d[0] = -y[0], 1.0, &[1.0], 0.0, NO_EVENT, &[], false).unwrap();
    assert!((s.y[0] - 1f64.exp()).abs() < 1e-10);
}

#[test]
fn finite_time_blowup_is_reported() {
    let r = Dopri5::default().solve(|_, y, d| d[0] = y[0] * y[0], 0.0, &[1.0], 2.0, NO_EVENT, &[], false);
    assert!(r.is_err());
}

#[test]
fn time_dependent_field() {
    // y' = t y, y(0) = 1: y = exp(t^2 / 2).
    let s = Dopri5::default().solve(|t, y, d| d[0] = t * y[0], 0.0, &[1.0], 2.0, NO_EVENT, &[], false).unwrap();
    assert_relative_eq!(s.y[0], 2f64.exp(), max_relative = 1e-11);
}

#[test]
fn power_law_fit_is_exact() {
    let xs = log_grid(0.01, 1.0, 7);
    let ys: Vec<f64> = xs.iter().map(|x| 5.0 * x.powf(-3.0)).collect();
    let f = loglog_slope(&xs, &ys).unwrap();
    assert_relative_eq!(f.slope, -3.0, epsilon = 1e-12);
    assert_relative_eq!(f.intercept, 5f64.ln(), epsilon = 1e-11);
    assert!(f.stderr < 1e-12);
    assert_eq!(f.n_points, 7);
    assert_relative_eq!(f.window.0, 0.01, max_relative = 1e-12);
}

#[test]
fn fit_errors() {
    assert!(matches!(ols(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InsufficientPoints(2))));
    assert!(ols(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(ols(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    assert!(loglog_slope(&[1.0, 2.0, 0.0], &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn grid_endpoints() {
    let g = log_grid(1e-2, 10f64.powf(-0.75), 20);
    assert_eq!(g.len(), 20);
    assert_relative_eq!(g[0], 1e-2, max_relative = 1e-14);
    assert_relative_eq!(g[19], 10f64.powf(-0.75), max_relative = 1e-14);
    assert!(g.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(log_grid(0.3, 0.5, 1), vec![0.3]);
}

proptest! {
    #[test]
    fn slope_is_scale_invariant(c in 0.01f64..100.0, p in -4.0f64..4.0, noise in proptest::collection::vec(-0.1f64..0.1, 6)) {
        let xs = log_grid(0.01, 1.0, 6);
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| x.powf(p) * n.exp()).collect();
        let scaled: Vec<f64> = ys.iter().map(|y| c * y).collect();
        let a = loglog_slope(&xs, &ys).unwrap().slope;
        let b = loglog_slope(&xs, &scaled).unwrap().slope;
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn linear_decay_matches_exp(k in 0.1f64..5.0, t in 0.1f64..3.0) {
        let s = Dopri5::default().solve(|_, y, d| d[0] = -k * y[0], 0.0, &[1.0], t, NO_EVENT, &[], false).unwrap();
        prop_assert!((s.y[0] - (-k * t).exp()).abs() <= 1e-11);
    }
}
