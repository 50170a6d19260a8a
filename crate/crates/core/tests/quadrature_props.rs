use proptest::prelude::*;

use steinvar::quadrature::{beta_fn, beta_integral, beta_integral_series, BetaIntegralSpec, BetaIntegrator};

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn z_zero_is_the_beta_function(b in 0.05f64..8.0, c in 0.05f64..8.0, m in -4.0f64..4.0) {
        let v = beta_integral(BetaIntegralSpec::new(b, c, m, 0.0)).unwrap().value;
        prop_assert!(rel(v, beta_fn(b, c)) < 1e-12, "{v} vs {}", beta_fn(b, c));
    }

    #[test]
    fn z_one_merges_exponents(b in 0.05f64..8.0, c in 0.05f64..8.0, m in -2.0f64..4.0) {
        prop_assume!(c + m > 0.05);
        let v = beta_integral(BetaIntegralSpec::new(b, c, m, 1.0)).unwrap().value;
        prop_assert!(rel(v, beta_fn(b, c + m)) < 1e-10);
    }

    #[test]
    fn monotone_in_z(b in 0.1f64..6.0, c in 0.1f64..6.0, m in 0.1f64..4.0, z1 in 0.0f64..0.99, dz in 0.001f64..0.5) {
        let z2 = (z1 + dz).min(0.999);
        prop_assume!(z2 > z1);
        let integrator = BetaIntegrator::new(b, c).unwrap();
        // (1 - zt)^m decreases in z for m > 0 and increases for m < 0
        let lo = integrator.integral(m, z1).unwrap().value;
        let hi = integrator.integral(m, z2).unwrap().value;
        prop_assert!(hi < lo);
        let lo = integrator.integral(-m, z1).unwrap().value;
        let hi = integrator.integral(-m, z2).unwrap().value;
        prop_assert!(hi > lo);
    }

    #[test]
    fn quadrature_agrees_with_series(b in 0.2f64..6.0, c in 0.2f64..6.0, m in -3.0f64..3.0, z in 0.0f64..0.9) {
        let spec = BetaIntegralSpec::new(b, c, m, z);
        let q = beta_integral(spec).unwrap().value;
        let s = beta_integral_series(spec).unwrap();
        prop_assert!(rel(q, s) < 1e-10, "{spec:?}: {q} vs {s}");
    }

    #[test]
    fn pair_matches_single_integrals(b in 0.2f64..5.0, c in 0.2f64..5.0, m in 0.0f64..4.0, z in 0.0f64..0.99) {
        let integrator = BetaIntegrator::new(b, c).unwrap();
        let (i0, i1) = integrator.integral_pair(m, z).unwrap();
        prop_assert!(rel(i0, integrator.integral(m, z).unwrap().value) < 1e-12);
        prop_assert!(rel(i1, integrator.integral(m + 1.0, z).unwrap().value) < 1e-12);
    }
}

#[test]
fn integer_exponents_match_polynomial_expansion() {
    // b = 2, c = 1, m = 2: ∫ t (1 - zt)^2 dt = 1/2 - 2z/3 + z^2/4
    for z in [0.0, 0.3, 0.77, 1.0] {
        let v = beta_integral(BetaIntegralSpec::new(2.0, 1.0, 2.0, z)).unwrap().value;
        let exact = 0.5 - 2.0 * z / 3.0 + z * z / 4.0;
        assert!((v - exact).abs() < 1e-14, "z = {z}: {v} vs {exact}");
    }
}
