//! Identities of the spherical Bessel, Hankel and Legendre functions.

use approx::assert_relative_eq;
use bsm_core::sphmath::{
    legendre_p, sph_derivative, spherical_bessel_j, spherical_bessel_y, spherical_hankel_h1,
    SphKind,
};
use proptest::prelude::*;

#[test]
fn closed_forms_at_low_order() {
    for &x in &[0.3, 1.0, 4.5, 17.0, 250.0] {
        let (s, c) = (f64::sin(x), f64::cos(x));
        assert_relative_eq!(
            spherical_bessel_j(0, x).unwrap(),
            s / x,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            spherical_bessel_j(1, x).unwrap(),
            s / (x * x) - c / x,
            max_relative = 1e-11
        );
        assert_relative_eq!(
            spherical_bessel_y(0, x).unwrap(),
            -c / x,
            max_relative = 1e-13
        );
        let j2 = (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
        assert!(
            (spherical_bessel_j(2, x).unwrap() - j2).abs() < 1e-12 * (1.0 + j2.abs()) / x.min(1.0)
        );
    }
}

#[test]
fn origin_values() {
    assert_eq!(spherical_bessel_j(0, 0.0).unwrap(), 1.0);
    assert_eq!(spherical_bessel_j(3, 0.0).unwrap(), 0.0);
    assert!(spherical_bessel_j(0, -1.0).is_err());
    assert!(spherical_bessel_j(500, 1.0).is_err());
}

proptest! {
    /// `j_n y_{n-1} - j_{n-1} y_n = 1 / x^2`.
    #[test]
    fn cross_product_wronskian(n in 1usize..40, x in 0.5f64..80.0) {
        let jn = spherical_bessel_j(n, x).unwrap();
        let jm = spherical_bessel_j(n - 1, x).unwrap();
        let yn = spherical_bessel_y(n, x).unwrap();
        let ym = spherical_bessel_y(n - 1, x).unwrap();
        let lhs = jn * ym - jm * yn;
        let scale = (jn * ym).abs().max((jm * yn).abs()).max(1.0 / (x * x));
        prop_assert!((lhs - 1.0 / (x * x)).abs() < 1e-10 * scale, "n {} x {}: {} vs {}", n, x, lhs, 1.0 / (x * x));
    }

    /// `f_{n-1} + f_{n+1} = (2n+1)/x f_n` for `j` in its oscillatory range.
    #[test]
    fn three_term_recurrence(n in 1usize..30, x in 1.0f64..60.0) {
        let f = |k| spherical_bessel_j(k, x).unwrap();
        let lhs = f(n - 1) + f(n + 1);
        let rhs = (2 * n + 1) as f64 / x * f(n);
        let scale = f(n - 1).abs().max(f(n + 1).abs()).max(rhs.abs()).max(1e-300);
        prop_assert!((lhs - rhs).abs() < 1e-9 * scale);
    }

    /// `h_n = j_n + i y_n` and `h_n' = h_{n-1} - (n+1)/x h_n`.
    #[test]
    fn hankel_parts_and_derivative(n in 1usize..30, x in 0.5f64..50.0) {
        let h = spherical_hankel_h1(n, x).unwrap();
        prop_assert!((h.re - spherical_bessel_j(n, x).unwrap()).abs() <= 1e-12 * h.norm());
        prop_assert!((h.im - spherical_bessel_y(n, x).unwrap()).abs() <= 1e-12 * h.norm());
        let d = sph_derivative(SphKind::HankelH1, n, x).unwrap();
        let expect = spherical_hankel_h1(n - 1, x).unwrap() - h * ((n + 1) as f64 / x);
        prop_assert!((d - expect).norm() <= 1e-10 * expect.norm().max(1e-300));
    }

    /// `|P_n(x)| <= 1` on `[-1, 1]`, `P_n(1) = 1`, `P_n(-x) = (-1)^n P_n(x)`.
    #[test]
    fn legendre_bounds_and_parity(n in 0usize..150, x in -1.0f64..1.0) {
        let p = legendre_p(n, x).unwrap();
        prop_assert!(p.abs() <= 1.0 + 1e-12);
        prop_assert!((legendre_p(n, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!((legendre_p(n, -x).unwrap() - sign * p).abs() < 1e-12);
    }
}
