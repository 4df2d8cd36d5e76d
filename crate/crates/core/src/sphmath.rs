//! Spherical Bessel/Hankel functions, their derivatives and Legendre
//! polynomials for real arguments.
//!
//! Time convention: every frequency-domain quantity in this crate assumes a
//! harmonic time dependence `e^{-i 2 pi f t}`, so outgoing spherical waves
//! are described by the Hankel function of the first kind
//! `h_n^(1)(x) = j_n(x) + i y_n(x)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Complex = Complex64;

/// Highest order accepted by the public functions.
pub const MAX_ORDER: usize = 200;
/// Largest argument accepted by the public functions.
pub const MAX_ARGUMENT: f64 = 1.0e4;

/// Below this argument the Bessel functions take their values at the origin.
const TINY: f64 = 1.0e-12;

/// Derivative target for [`sph_derivative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphKind {
    BesselJ,
    HankelH1,
}

fn check(n: usize, x: f64) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::domain(format!("order {n} exceeds {MAX_ORDER}")));
    }
    if !(0.0..=MAX_ARGUMENT).contains(&x) {
        return Err(Error::domain(format!(
            "argument {x} outside [0, {MAX_ARGUMENT}]"
        )));
    }
    Ok(())
}

/// `j_n(x)` for `n <= MAX_ORDER`, `0 <= x <= MAX_ARGUMENT`.
pub fn spherical_bessel_j(n: usize, x: f64) -> Result<f64> {
    check(n, x)?;
    Ok(bessel_j_array(n, x)[n])
}

/// `y_n(x)`, the spherical Neumann function. Singular at the origin.
pub fn spherical_bessel_y(n: usize, x: f64) -> Result<f64> {
    check(n, x)?;
    if x <= 0.0 {
        return Err(Error::domain("y_n is singular at x = 0"));
    }
    let y = bessel_y_array(n, x)[n];
    if !y.is_finite() {
        return Err(Error::domain(format!("y_{n}({x}) overflows")));
    }
    Ok(y)
}

/// `h_n^(1)(x) = j_n(x) + i y_n(x)`.
pub fn spherical_hankel_h1(n: usize, x: f64) -> Result<Complex> {
    check(n, x)?;
    if x <= 0.0 {
        return Err(Error::domain("h_n is singular at x = 0"));
    }
    let j = bessel_j_array(n, x)[n];
    let y = spherical_bessel_y(n, x)?;
    Ok(Complex::new(j, y))
}

/// Derivative with respect to the argument, via
/// `f_n'(x) = f_{n-1}(x) - (n+1)/x f_n(x)` and `f_0' = -f_1`.
pub fn sph_derivative(kind: SphKind, n: usize, x: f64) -> Result<Complex> {
    check(n + 1, x)?;
    match kind {
        SphKind::BesselJ => spherical_bessel_j_derivative(n, x).map(Complex::from),
        SphKind::HankelH1 => {
            if x <= 0.0 {
                return Err(Error::domain("h_n' is singular at x = 0"));
            }
            let j = bessel_j_array(n + 1, x);
            let y = bessel_y_array(n + 1, x);
            let h = |k: usize| Complex::new(j[k], y[k]);
            let d = if n == 0 {
                -h(1)
            } else {
                h(n - 1) - h(n) * ((n as f64 + 1.0) / x)
            };
            if !(d.re.is_finite() && d.im.is_finite()) {
                return Err(Error::domain(format!("h_{n}'({x}) overflows")));
            }
            Ok(d)
        }
    }
}

/// `j_n'(x)`, including the limits at the origin.
pub fn spherical_bessel_j_derivative(n: usize, x: f64) -> Result<f64> {
    check(n + 1, x)?;
    if x < TINY {
        return Ok(if n == 1 { 1.0 / 3.0 } else { 0.0 });
    }
    let j = bessel_j_array(n + 1, x);
    Ok(if n == 0 {
        -j[1]
    } else {
        j[n - 1] - (n as f64 + 1.0) / x * j[n]
    })
}

/// Legendre polynomial `P_n(x)` by Bonnet's recurrence.
pub fn legendre_p(n: usize, x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::domain(format!(
            "legendre argument {x} outside [-1, 1]"
        )));
    }
    Ok(legendre_array(n, x)[n])
}

/// `P_0(x) ..= P_nmax(x)`. The caller guarantees `|x| <= 1`.
pub fn legendre_array(nmax: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(nmax + 1);
    p.push(1.0);
    if nmax == 0 {
        return p;
    }
    p.push(x);
    for n in 1..nmax {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * p[n] - nf * p[n - 1]) / (nf + 1.0);
        p.push(next);
    }
    p
}

/// `j_0(x) ..= j_nmax(x)`.
///
/// Forward recurrence is used when every requested order is below the
/// argument; otherwise Miller's downward recurrence, normalized with
/// `sum (2n+1) j_n^2 = 1`.
pub fn bessel_j_array(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x < TINY {
        out[0] = 1.0;
        return out;
    }
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    let j1 = s / (x * x) - c / x;
    if x > nmax as f64 {
        out[0] = j0;
        if nmax >= 1 {
            out[1] = j1;
        }
        for n in 1..nmax {
            out[n + 1] = (2.0 * n as f64 + 1.0) / x * out[n] - out[n - 1];
        }
        return out;
    }

    let top = nmax.max(x.ceil() as usize);
    let start = top + 20 + (40.0 * top as f64).sqrt().ceil() as usize;
    let mut f = vec![0.0; start + 2];
    f[start] = 1.0e-30;
    for n in (1..=start).rev() {
        f[n - 1] = (2.0 * n as f64 + 1.0) / x * f[n] - f[n + 1];
        if f[n - 1].abs() > 1.0e100 {
            for v in &mut f[n - 1..] {
                *v *= 1.0e-100;
            }
        }
    }
    let norm: f64 = f
        .iter()
        .enumerate()
        .map(|(n, v)| (2.0 * n as f64 + 1.0) * v * v)
        .sum::<f64>()
        .sqrt();
    let mut scale = 1.0 / norm;
    let reference_sign = if j0.abs() >= j1.abs() {
        j0.signum() * f[0].signum()
    } else {
        j1.signum() * f[1].signum()
    };
    scale *= reference_sign;
    for (o, v) in out.iter_mut().zip(&f) {
        *o = v * scale;
    }
    out
}

/// `y_0(x) ..= y_nmax(x)` by forward recurrence (stable for the dominant
/// solution). Entries overflow to infinity for large orders at small `x`.
pub fn bessel_y_array(nmax: usize, x: f64) -> Vec<f64> {
    let (s, c) = x.sin_cos();
    let mut out = vec![0.0; nmax + 1];
    out[0] = -c / x;
    if nmax >= 1 {
        out[1] = -c / (x * x) - s / x;
    }
    for n in 1..nmax {
        out[n + 1] = (2.0 * n as f64 + 1.0) / x * out[n] - out[n - 1];
    }
    out
}

/// `h_n^(1)(x) / h_n^(1)'(x)` for `n = 0 ..= nmax`, computed from the ratio
/// recurrence `q_{n+1} = 1 / ((2n+1)/x - q_n)` with `q_n = h_{n-1} / h_n`,
/// which never overflows. Requires `x > 0`.
pub fn hankel_h1_log_derivative_inverse(nmax: usize, x: f64) -> Vec<Complex> {
    let i = Complex::i();
    // q_1 = h_0 / h_1 = i x / (x + i)
    let mut q = i * x / (Complex::new(x, 1.0));
    let mut out = Vec::with_capacity(nmax + 1);
    // h_0' = -h_1
    out.push(-q);
    for n in 1..=nmax {
        let nf = n as f64;
        // h_n' / h_n = q_n - (n+1)/x
        out.push((q - (nf + 1.0) / x).inv());
        q = ((2.0 * nf + 1.0) / x - q).inv();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn bessel_j_at_origin_and_zero_crossing() {
        assert_eq!(spherical_bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(spherical_bessel_j(1, 0.0).unwrap(), 0.0);
        assert!(spherical_bessel_j(0, PI).unwrap().abs() < 1e-15);
    }

    #[test]
    fn hankel_low_orders() {
        let h = spherical_hankel_h1(0, 1.0).unwrap();
        assert!((h.re - 1f64.sin()).abs() < 1e-15);
        assert!((h.im + 1f64.cos()).abs() < 1e-15);
        let h = spherical_hankel_h1(0, PI / 2.0).unwrap();
        assert!((h.re - 2.0 / PI).abs() < 1e-15);
        assert!(h.im.abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(spherical_bessel_j(MAX_ORDER + 1, 1.0).is_err());
        assert!(spherical_bessel_j(0, -1.0).is_err());
        assert!(spherical_bessel_j(0, f64::NAN).is_err());
        assert!(spherical_hankel_h1(0, 0.0).is_err());
        assert!(legendre_p(2, 1.5).is_err());
        // y_200(0.1) overflows f64
        assert!(spherical_hankel_h1(200, 0.1).is_err());
    }

    #[test]
    fn derivative_identities() {
        for &x in &[0.5, 1.0, 2.0] {
            let d = spherical_bessel_j_derivative(0, x).unwrap();
            assert!((d + spherical_bessel_j(1, x).unwrap()).abs() < 1e-15);
        }
        assert!((spherical_bessel_j_derivative(1, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn legendre_values() {
        for n in 0..30 {
            assert!((legendre_p(n, 1.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(legendre_p(1, 0.5).unwrap(), 0.5);
        assert_eq!(legendre_p(2, 0.0).unwrap(), -0.5);
    }

    #[test]
    fn miller_and_forward_agree_at_switch() {
        // x just above and below nmax takes different branches
        for &x in &[9.5, 10.5, 30.0] {
            let a = bessel_j_array(10, x);
            let b = bessel_j_array(40, x);
            for n in 0..=10 {
                assert!(
                    rel(a[n], b[n]) < 1e-11 || (a[n] - b[n]).abs() < 1e-16,
                    "n={n} x={x}"
                );
            }
        }
    }

    #[test]
    fn hankel_ratio_matches_direct() {
        for &x in &[0.3, 1.0, 7.0, 37.0] {
            let r = hankel_h1_log_derivative_inverse(20, x);
            for (n, rn) in r.iter().enumerate() {
                let h = spherical_hankel_h1(n, x).unwrap();
                let d = sph_derivative(SphKind::HankelH1, n, x).unwrap();
                let direct = h / d;
                assert!((rn - direct).norm() / direct.norm() < 1e-10, "n={n} x={x}");
            }
        }
    }
}
