use ctlpv_core::bspline::{SplineBasis, SplineCurve};
use ctlpv_core::ecm_sim::default_truth;
use ctlpv_core::identify::jump_operator;
use ctlpv_core::Error;
use proptest::prelude::*;

// Straight transcription of the Cox-de Boor recursion with 0/0 := 0 and the
// last nonempty interval closed on the right.
fn cox_de_boor(knots: &[f64], i: usize, p: usize, z: f64) -> f64 {
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let last = *knots.last().unwrap();
        if a < b && (a <= z && z < b || z == last && b == last) {
            return 1.0;
        }
        return 0.0;
    }
    let mut out = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 != 0.0 {
        out += (z - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, z);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 != 0.0 {
        out += (knots[i + p + 1] - z) / d2 * cox_de_boor(knots, i + 1, p - 1, z);
    }
    out
}

fn naive_basis(basis: &SplineBasis, z: f64) -> Vec<f64> {
    (0..basis.len())
        .map(|i| cox_de_boor(basis.knots(), i, basis.degree(), z))
        .collect()
}

fn basis_strategy() -> impl Strategy<Value = SplineBasis> {
    (0.0..0.5f64, 0.1..1.0f64, 1usize..=100)
        .prop_map(|(lo, w, n)| SplineBasis::clamped_uniform(lo, lo + w, n).unwrap())
}

fn basis_and_point() -> impl Strategy<Value = (SplineBasis, f64)> {
    basis_strategy().prop_flat_map(|b| {
        let (lo, hi) = b.domain();
        (Just(b), lo..=hi)
    })
}

fn spacing(b: &SplineBasis) -> f64 {
    let (lo, hi) = b.domain();
    (hi - lo) / b.n_segments() as f64
}

// Left and right limits of the derivatives at a knot via the exact Taylor
// expansion of each adjacent cubic piece about its midpoint.
fn one_sided(b: &SplineBasis, mid: f64, delta: f64, order: usize) -> Vec<f64> {
    let ders: Vec<Vec<f64>> = (0..=3)
        .map(|d| {
            if d == 0 {
                b.eval_basis(mid).unwrap()
            } else {
                b.eval_basis_derivative(mid, d).unwrap()
            }
        })
        .collect();
    let fact = [1.0, 1.0, 2.0, 6.0];
    (0..b.len())
        .map(|i| {
            (order..=3)
                .map(|j| ders[j][i] * delta.powi((j - order) as i32) / fact[j - order])
                .sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn partition_of_unity((b, z) in basis_and_point()) {
        let g = b.eval_basis(z).unwrap();
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_support_and_nonnegativity((b, z) in basis_and_point()) {
        let g = b.eval_basis(z).unwrap();
        let knots = b.knots();
        let p = b.degree();
        for (i, &v) in g.iter().enumerate() {
            prop_assert!(v >= 0.0);
            if z < knots[i] || z > knots[i + p + 1] {
                prop_assert_eq!(v, 0.0);
            }
        }
        prop_assert!(g.iter().filter(|v| **v != 0.0).count() <= p + 1);
    }

    #[test]
    fn matches_naive_recursion((b, z) in basis_and_point()) {
        let fast = b.eval_basis(z).unwrap();
        let slow = naive_basis(&b, z);
        for (f, s) in fast.iter().zip(&slow) {
            prop_assert!((f - s).abs() < 1e-12, "{} vs {}", f, s);
        }
    }

    #[test]
    fn derivatives_match_finite_differences(b in basis_strategy(), u in 0.0..1.0f64, d in 1usize..=2) {
        let step = 1e-6;
        let delta = spacing(&b);
        let (lo, _) = b.domain();
        // stay clear of knots so the stencil sees a single cubic piece
        let seg = ((u * b.n_segments() as f64) as usize).min(b.n_segments() - 1);
        let frac = 0.05 + 0.9 * (u * b.n_segments() as f64).fract();
        let z = lo + (seg as f64 + frac) * delta;
        let exact = b.eval_basis_derivative(z, d).unwrap();
        // a second difference at this step is dominated by rounding, so the
        // second derivative is checked against differences of the first
        let below = |z: f64| {
            if d == 1 {
                b.eval_basis(z).unwrap()
            } else {
                b.eval_basis_derivative(z, 1).unwrap()
            }
        };
        let plus = below(z + step);
        let minus = below(z - step);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..b.len() {
            let fd = (plus[i] - minus[i]) / (2.0 * step);
            if exact[i] != 0.0 {
                let rel = (fd - exact[i]).abs() / exact[i].abs().max(scale);
                prop_assert!(rel < 1e-5, "d={} i={} fd={} exact={} rel={}", d, i, fd, exact[i], rel);
            }
        }
    }

    #[test]
    fn second_order_continuity_at_knots(b in basis_strategy(), pick in 0usize..1000) {
        prop_assume!(b.n_segments() >= 2);
        let delta = spacing(&b);
        let (lo, _) = b.domain();
        let j = 1 + pick % (b.n_segments() - 1);
        let knot = lo + j as f64 * delta;
        let left_mid = knot - 0.5 * delta;
        let right_mid = knot + 0.5 * delta;
        for order in 0..=2 {
            let left = one_sided(&b, left_mid, 0.5 * delta, order);
            let right = one_sided(&b, right_mid, -0.5 * delta, order);
            let scale = delta.powi(-(order as i32));
            for (l, r) in left.iter().zip(&right) {
                prop_assert!((l - r).abs() <= 1e-9 * scale, "order {} {} vs {}", order, l, r);
            }
        }
    }

    #[test]
    fn third_derivative_constant_per_interval(b in basis_strategy(), pick in 0usize..1000) {
        let delta = spacing(&b);
        let (lo, _) = b.domain();
        let j = pick % b.n_segments();
        let first = b.eval_basis_derivative(lo + (j as f64 + 0.1) * delta, 3).unwrap();
        for frac in [0.3, 0.5, 0.7, 0.9] {
            let other = b.eval_basis_derivative(lo + (j as f64 + frac) * delta, 3).unwrap();
            let scale = delta.powi(-3);
            for (a, c) in first.iter().zip(&other) {
                prop_assert!((a - c).abs() <= 1e-9 * scale);
            }
        }
    }
}

#[test]
fn third_derivative_exactly_constant_on_reference_basis() {
    let b = SplineBasis::clamped_uniform(0.0, 1.0, 4).unwrap();
    for j in 0..4 {
        let base = j as f64 * 0.25;
        let values: Vec<Vec<f64>> = [0.02, 0.07, 0.12, 0.17, 0.22]
            .iter()
            .map(|o| b.eval_basis_derivative(base + o, 3).unwrap())
            .collect();
        for v in &values[1..] {
            assert_eq!(v, &values[0], "interval {j}");
        }
    }
}

#[test]
fn reference_basis_against_naive_recursion() {
    let b = SplineBasis::clamped_uniform(0.0, 1.0, 4).unwrap();
    assert_eq!(
        b.knots(),
        &[0.0, 0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0]
    );
    let fast = b.eval_basis(0.3).unwrap();
    let slow = naive_basis(&b, 0.3);
    for (f, s) in fast.iter().zip(&slow) {
        assert!((f - s).abs() < 1e-15);
    }
    // hand values on [0.25, 0.5) at z = 0.3
    assert!(fast[0] == 0.0 && fast[5] == 0.0 && fast[6] == 0.0);
}

#[test]
fn counts_and_endpoints() {
    let b = SplineBasis::clamped_uniform(0.0, 0.8, 80).unwrap();
    assert_eq!(b.len(), 83);
    let k = b.knots();
    for j in 3..83 {
        assert!((k[j + 1] - k[j] - 0.01).abs() < 1e-12);
    }
    let g = b.eval_basis(0.0).unwrap();
    assert_eq!(g[0], 1.0);
    assert!(g[1..].iter().all(|v| *v == 0.0));
    let g = b.eval_basis(0.8).unwrap();
    assert_eq!(g[82], 1.0);

    let bez = SplineBasis::clamped_uniform(0.0, 1.0, 1).unwrap();
    assert_eq!(bez.len(), 4);
    let z: f64 = 0.3;
    let g = bez.eval_basis(z).unwrap();
    let bern = [
        (1.0 - z).powi(3),
        3.0 * z * (1.0 - z).powi(2),
        3.0 * z * z * (1.0 - z),
        z.powi(3),
    ];
    for (a, c) in g.iter().zip(&bern) {
        assert!((a - c).abs() < 1e-15);
    }
}

#[test]
fn derivative_integrates_to_endpoint_difference() {
    let b = SplineBasis::clamped_uniform(0.1, 0.9, 7).unwrap();
    let (lo, hi) = b.domain();
    let n = b.n_segments();
    let w = (hi - lo) / n as f64;
    // two-point Gauss-Legendre is exact for the quadratic pieces of g'
    let nodes = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let mut integral = vec![0.0; b.len()];
    for j in 0..n {
        for x in nodes {
            let d = b.eval_basis_derivative(lo + (j as f64 + x) * w, 1).unwrap();
            for (acc, v) in integral.iter_mut().zip(d) {
                *acc += 0.5 * w * v;
            }
        }
    }
    let g_hi = b.eval_basis(hi).unwrap();
    let g_lo = b.eval_basis(lo).unwrap();
    for i in 0..b.len() {
        assert!((integral[i] - (g_hi[i] - g_lo[i])).abs() < 1e-6);
    }
}

#[test]
fn basis_matrix_rows() {
    let b = SplineBasis::clamped_uniform(0.0, 1.0, 10).unwrap();
    let z: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
    let g = b.basis_matrix(&z).unwrap();
    assert_eq!(g.shape(), (201, 13));
    for (k, &zk) in z.iter().enumerate() {
        let row: Vec<f64> = g.row(k).iter().copied().collect();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().filter(|v| **v != 0.0).count() <= 4);
        assert_eq!(row, b.eval_basis(zk).unwrap());
    }
    let single = b.basis_matrix(&[0.37]).unwrap();
    assert_eq!(
        single.row(0).iter().copied().collect::<Vec<_>>(),
        b.eval_basis(0.37).unwrap()
    );
    match b.basis_matrix(&[0.2, 0.5, 1.2]) {
        Err(Error::OutOfDomain { index, .. }) => assert_eq!(index, Some(2)),
        other => panic!("expected OutOfDomain, got {other:?}"),
    }
}

#[test]
fn derivative_errors() {
    let b = SplineBasis::clamped_uniform(0.0, 1.0, 4).unwrap();
    assert!(matches!(
        b.eval_basis_derivative(0.5, 4),
        Err(Error::InvalidOrder { order: 4, max: 3 })
    ));
    assert!(matches!(
        b.eval_basis_derivative(-0.1, 1),
        Err(Error::OutOfDomain { .. })
    ));
    assert!(matches!(
        SplineBasis::clamped_uniform(0.5, 0.5, 4),
        Err(Error::InvalidRange(_))
    ));
}

#[test]
fn knot_matrix_rows_jump_across_knots() {
    let b = SplineBasis::clamped_uniform(0.0, 1.0, 4).unwrap();
    let g3 = b.third_derivative_knot_matrix().unwrap();
    assert_eq!(g3.shape(), (4, 7));
    for j in 0..3 {
        let knot = 0.25 * (j + 1) as f64;
        let left = b.eval_basis_derivative(knot - 0.1, 3).unwrap();
        let right = b.eval_basis_derivative(knot + 0.1, 3).unwrap();
        for i in 0..7 {
            let diff = g3[(j + 1, i)] - g3[(j, i)];
            assert!((diff - (right[i] - left[i])).abs() < 1e-9);
        }
    }
}

const CUBIC: [f64; 4] = [1.0, -2.0, 0.5, -3.0];

fn cubic(z: f64) -> f64 {
    CUBIC[0] + CUBIC[1] * z + CUBIC[2] * z * z + CUBIC[3] * z * z * z
}

// Control points of a global cubic from its polar form at consecutive knot
// triples.
fn blossom_control_points(b: &SplineBasis) -> Vec<f64> {
    let k = b.knots();
    (0..b.len())
        .map(|i| {
            let (u, v, w) = (k[i + 1], k[i + 2], k[i + 3]);
            CUBIC[0]
                + CUBIC[1] * (u + v + w) / 3.0
                + CUBIC[2] * (u * v + u * w + v * w) / 3.0
                + CUBIC[3] * u * v * w
        })
        .collect()
}

#[test]
fn jump_operator_annihilates_global_cubic() {
    let b = SplineBasis::clamped_uniform(0.0, 0.8, 80).unwrap();
    let exact = blossom_control_points(&b);
    let curve = SplineCurve::new(b.clone(), exact.clone()).unwrap();
    for k in 0..=100 {
        let z = 0.8 * k as f64 / 100.0;
        assert!((curve.eval(z).unwrap() - cubic(z)).abs() < 1e-13);
    }
    // entries of the operator grow like 1/spacing^3, so measure the jumps
    // against the size of the terms that cancel
    let op = jump_operator(&b).unwrap();
    let c = nalgebra::DVector::from_column_slice(&exact);
    let scale = op.abs().row_sum().amax() * c.amax();
    assert!(
        (&op * &c).amax() < 1e-9 * scale,
        "{}",
        (&op * &c).amax() / scale
    );

    let unit = SplineBasis::clamped_uniform(0.0, 1.0, 4).unwrap();
    let c = nalgebra::DVector::from_vec(blossom_control_points(&unit));
    assert!((jump_operator(&unit).unwrap() * c).amax() < 1e-9);

    // a least-squares fit recovers the same control points
    let z: Vec<f64> = (0..2000).map(|k| 0.8 * k as f64 / 1999.0).collect();
    let y: Vec<f64> = z.iter().map(|&z| cubic(z)).collect();
    let fitted = SplineCurve::fit(b, &z, &y, 0.0).unwrap();
    for (f, e) in fitted.control_points().iter().zip(&exact) {
        assert!((f - e).abs() < 1e-11);
    }
}

#[test]
fn curve_identities() {
    let b = SplineBasis::clamped_uniform(0.0, 1.0, 9).unwrap();
    let flat = SplineCurve::constant(b.clone(), 2.5);
    for k in 0..=50 {
        assert!((flat.eval(k as f64 / 50.0).unwrap() - 2.5).abs() < 1e-12);
    }
    let c: Vec<f64> = (0..b.len()).map(|i| (i as f64).sin()).collect();
    let curve = SplineCurve::new(b, c.clone()).unwrap();
    assert_eq!(curve.eval(0.0).unwrap(), c[0]);
    assert!((curve.eval(1.0).unwrap() - c[c.len() - 1]).abs() < 1e-15);
    assert!(matches!(curve.eval(1.5), Err(Error::OutOfDomain { .. })));
}

#[test]
fn fitted_ocv_tracks_truth() {
    let truth = default_truth();
    let b = SplineBasis::clamped_uniform(0.0, 0.8, 80).unwrap();
    let z: Vec<f64> = (0..8001).map(|k| 0.8 * k as f64 / 8000.0).collect();
    let v: Vec<f64> = z.iter().map(|&z| truth.voc(z)).collect();
    let curve = SplineCurve::fit(b, &z, &v, 0.0).unwrap();
    let worst = z
        .iter()
        .filter(|z| **z >= 0.05)
        .map(|&z| (curve.eval(z).unwrap() - truth.voc(z)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "max deviation {worst}");
}
