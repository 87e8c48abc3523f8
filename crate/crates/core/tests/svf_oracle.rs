use ctlpv_core::svf::{svf_filter, svf_pair, svf_warmup_length, SvfConfig};
use ctlpv_core::Error;
use proptest::prelude::*;

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

// Continuous-time response of 1/(s + nu) to a staircase, as the sum of the
// exact contributions of each held segment.
fn staircase_response(u: &[f64], nu: f64, dt: f64) -> Vec<f64> {
    (0..u.len())
        .map(|k| {
            let tk = k as f64 * dt;
            (0..k)
                .map(|j| {
                    let start = j as f64 * dt;
                    let end = start + dt;
                    u[j] * ((-nu * (tk - end)).exp() - (-nu * (tk - start)).exp()) / nu
                })
                .sum()
        })
        .collect()
}

#[test]
fn constant_input_closed_forms() {
    for (nu, dt, c) in [(1e-3, 0.1, 2.5), (0.5, 1.0, -1.0), (2.0, 0.01, 3.6)] {
        let cfg = SvfConfig::new(nu, dt).unwrap();
        let u = vec![c; 5000];
        let f0 = svf_filter(&u, &cfg, 0).unwrap();
        let f1 = svf_filter(&u, &cfg, 1).unwrap();
        for k in 0..u.len() {
            let t = k as f64 * dt;
            let y0 = c / nu * -(-nu * t).exp_m1();
            let y1 = c * (-nu * t).exp();
            assert!((f0[k] - y0).abs() <= 1e-12 * (c / nu).abs(), "k={k}");
            assert!((f1[k] - y1).abs() <= 1e-12 * c.abs(), "k={k}");
        }
    }
}

#[test]
fn step_input_closed_form() {
    let (nu, dt, c, k0) = (0.05, 0.1, 1.7, 300usize);
    let cfg = SvfConfig::new(nu, dt).unwrap();
    let u: Vec<f64> = (0..4000).map(|k| if k < k0 { 0.0 } else { c }).collect();
    let f0 = svf_filter(&u, &cfg, 0).unwrap();
    let f1 = svf_filter(&u, &cfg, 1).unwrap();
    for k in 0..u.len() {
        let (y0, y1) = if k <= k0 {
            (0.0, if k == k0 { c } else { 0.0 })
        } else {
            let t = (k - k0) as f64 * dt;
            (c / nu * -(-nu * t).exp_m1(), c * (-nu * t).exp())
        };
        assert!((f0[k] - y0).abs() <= 1e-12 * c / nu, "k={k}");
        assert!((f1[k] - y1).abs() <= 1e-12 * c, "k={k}");
    }
}

#[test]
fn held_exponential_matches_geometric_sum() {
    for (nu, a, dt) in [(1e-3, 0.02, 0.1), (0.3, 0.05, 0.5), (0.2, 0.2 + 1e-3, 1.0)] {
        let cfg = SvfConfig::new(nu, dt).unwrap();
        let u: Vec<f64> = (0..3000).map(|k| (-a * k as f64 * dt).exp()).collect();
        let f0 = svf_filter(&u, &cfg, 0).unwrap();
        let r = (-nu * dt).exp();
        let q = (-a * dt).exp();
        let gain = -(-nu * dt).exp_m1() / nu;
        let exact: Vec<f64> = (0..u.len())
            .map(|k| gain * (r.powi(k as i32) - q.powi(k as i32)) / (r - q))
            .collect();
        let scale = max_abs(&exact);
        for k in 0..u.len() {
            assert!(
                (f0[k] - exact[k]).abs() <= 1e-12 * scale,
                "nu={nu} a={a} k={k}: {} vs {}",
                f0[k],
                exact[k]
            );
        }
    }
}

#[test]
fn dc_gain_after_long_input() {
    let (nu, dt) = (1e-3, 0.1);
    let cfg = SvfConfig::new(nu, dt).unwrap();
    // e^(-nu t) < 1e-6 needs nu t > 13.8; the warm-up alone only reaches e^-5
    let n = (14.0 / (nu * dt)) as usize + 1;
    let f0 = svf_filter(&vec![3.2; n], &cfg, 0).unwrap();
    assert!((nu * f0[n - 1] - 3.2).abs() / 3.2 < 1e-6);
    let w = svf_warmup_length(&cfg);
    let rel = (nu * f0[w] - 3.2).abs() / 3.2;
    assert!((rel - (-5.0f64).exp()).abs() < 1e-9);
}

#[test]
fn warmup_lengths() {
    let w = |nu, dt| svf_warmup_length(&SvfConfig::new(nu, dt).unwrap());
    assert_eq!(w(1e-3, 1.0), 5000);
    assert_eq!(w(1e-4, 1.0), 50000);
    assert_eq!(w(0.5, 1.0), 10);
    assert_eq!(w(1e-3, 0.1), 50000);
}

#[test]
fn rejects_bad_configuration() {
    assert!(matches!(
        SvfConfig::new(0.0, 0.1),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        SvfConfig::new(1e-3, -1.0),
        Err(Error::InvalidInput(_))
    ));
    let cfg = SvfConfig::new(1e-3, 0.1).unwrap();
    assert!(matches!(
        svf_filter(&[1.0], &cfg, 2),
        Err(Error::InvalidOrder { order: 2, max: 1 })
    ));
}

fn staircase() -> impl Strategy<Value = (Vec<f64>, f64, f64)> {
    (
        prop::collection::vec(-5.0..5.0f64, 1..400),
        1e-3..2.0f64,
        prop::sample::select(vec![0.01, 0.1, 1.0]),
    )
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 200,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn piecewise_constant_input_is_filtered_exactly((u, nu, dt) in staircase()) {
        let cfg = SvfConfig::new(nu, dt).unwrap();
        let f0 = svf_filter(&u, &cfg, 0).unwrap();
        let exact = staircase_response(&u, nu, dt);
        let scale = max_abs(&u) / nu;
        for k in 0..u.len() {
            prop_assert!((f0[k] - exact[k]).abs() <= 1e-12 * scale, "k={} {} vs {}", k, f0[k], exact[k]);
        }
    }

    #[test]
    fn derivative_tap_identity((u, nu, dt) in staircase()) {
        let cfg = SvfConfig::new(nu, dt).unwrap();
        let f0 = svf_filter(&u, &cfg, 0).unwrap();
        let f1 = svf_filter(&u, &cfg, 1).unwrap();
        for k in 0..u.len() {
            // f1 is formed as u - nu f0, so adding nu f0 back is one rounding away
            let terms = u[k].abs().max((nu * f0[k]).abs());
            prop_assert!((f1[k] + nu * f0[k] - u[k]).abs() <= 2.0 * f64::EPSILON * terms);
        }
        let (p0, p1) = svf_pair(&u, &cfg);
        prop_assert_eq!(p0, f0);
        prop_assert_eq!(p1, f1);
    }

    #[test]
    fn linearity((u, nu, dt) in staircase(), alpha in -3.0..3.0f64, beta in -3.0..3.0f64, seed in 0u64..1000) {
        let cfg = SvfConfig::new(nu, dt).unwrap();
        let w: Vec<f64> = (0..u.len()).map(|k| ((k as u64 * 7919 + seed) % 97) as f64 / 10.0 - 4.8).collect();
        let mix: Vec<f64> = u.iter().zip(&w).map(|(a, b)| alpha * a + beta * b).collect();
        for j in 0..=1 {
            let lhs = svf_filter(&mix, &cfg, j).unwrap();
            let fu = svf_filter(&u, &cfg, j).unwrap();
            let fw = svf_filter(&w, &cfg, j).unwrap();
            let scale = (alpha.abs() * max_abs(&u) + beta.abs() * max_abs(&w)) * if j == 0 { 1.0 / nu } else { 1.0 };
            for k in 0..u.len() {
                prop_assert!((lhs[k] - alpha * fu[k] - beta * fw[k]).abs() <= 1e-12 * scale.max(1e-300));
            }
        }
    }
}
