use proptest::prelude::*;
use tdnode::discretization::{build_dm, build_p, dp_dtau, tap_for, HistoryGrid, Scheme};

const H: f64 = 0.05;

fn affine(a: f64, b: f64, m: usize, t: f64) -> HistoryGrid {
    HistoryGrid::from_signal(1, m, H, t, |s| vec![a + b * s])
}

proptest! {
    #[test]
    fn difference_rows_sum_to_zero(m in 2usize..40, n in 1usize..3) {
        for scheme in [Scheme::Central, Scheme::ForwardEuler] {
            let dm = build_dm(scheme, n, m, H).unwrap();
            for r in 0..dm.matrix().rows() {
                let s: f64 = dm.matrix().row(r).map(|(_, v)| v).sum();
                prop_assert!(s.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn interpolation_rows_sum_to_one(m in 2usize..40, fracs in prop::collection::vec(0.0f64..=1.0, 1..4)) {
        let tau_max = m as f64 * H;
        let delays: Vec<f64> = fracs.iter().map(|f| f * tau_max).collect();
        let p = build_p(&delays, 1, m, H).unwrap();
        for r in 0..p.matrix().rows() {
            let s: f64 = p.matrix().row(r).map(|(_, v)| v).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_signals_are_reproduced(a in -2.0f64..2.0, b in -3.0f64..3.0, t in -5.0f64..5.0, frac in 0.0f64..=1.0) {
        let m = 30;
        let x = affine(a, b, m, t);
        let tau = frac * m as f64 * H;
        let p = build_p(&[0.0, tau], 1, m, H).unwrap();
        let z = p.apply(&x.values);
        prop_assert!((z[0] - (a + b * t)).abs() < 1e-12);
        prop_assert!((z[1] - (a + b * (t - tau))).abs() < 1e-11);
        let dm = build_dm(Scheme::Central, 1, m, H).unwrap();
        let d = dm.apply(&x.values);
        // interior rows hold d/dt of x(t - j h)
        for j in 0..m - 1 {
            prop_assert!((d[j] - b).abs() < 1e-9, "row {} = {}", j, d[j]);
        }
    }

    #[test]
    fn interpolation_is_continuous_across_nodes(j in 1usize..29) {
        let m = 30;
        let x = HistoryGrid::from_signal(1, m, H, 0.0, |s| vec![(3.0 * s).sin()]);
        let node = j as f64 * H;
        let left = build_p(&[node - 1e-12], 1, m, H).unwrap().apply(&x.values)[0];
        let at = build_p(&[node], 1, m, H).unwrap().apply(&x.values)[0];
        let tap = tap_for(node, m, H).unwrap();
        prop_assert_eq!((tap.j, tap.alpha), (j, 0.0));
        prop_assert!((left - at).abs() < 1e-9);
    }

    #[test]
    fn delay_derivative_matches_differences(frac in 0.02f64..0.98, j in 0usize..29) {
        let m = 30;
        let tau = (j as f64 + frac) * H;
        let x = HistoryGrid::from_signal(1, m, H, 0.0, |s| vec![1.0 + 0.4 * (2.0 * s).cos()]);
        let dp = dp_dtau(&[0.0, tau], 1, m, H).unwrap();
        let analytic = dp[1].mul_vec(&x.values)[1];
        let eps = 1e-7;
        let up = build_p(&[0.0, tau + eps], 1, m, H).unwrap().apply(&x.values)[1];
        let down = build_p(&[0.0, tau - eps], 1, m, H).unwrap().apply(&x.values)[1];
        prop_assert!((analytic - (up - down) / (2.0 * eps)).abs() < 1e-6);
        // the other delay's derivative touches nothing in row 1
        prop_assert!(dp[0].mul_vec(&x.values)[1] == 0.0);
    }
}

#[test]
fn upper_boundary_uses_last_interval() {
    let tap = tap_for(1.5, 30, H).unwrap();
    assert_eq!((tap.j, tap.alpha), (29, 1.0));
    assert!(tap_for(1.6, 30, H).is_err());
}
