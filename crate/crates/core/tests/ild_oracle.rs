//! Gammatone-weighted ILD against a fine-quadrature reference.

use bsm_core::hrtf::SphericalGrid;
use bsm_core::imagls::ild_curve;
use bsm_core::{Complex, IldSpec};
use nalgebra::DMatrix;

/// Peak-normalized 4th-order gammatone power response, written out
/// independently of the library.
fn gammatone_power(f0: f64, f: f64) -> f64 {
    let erb = 24.7 * (4.37 * f0 / 1000.0 + 1.0);
    let u = (f - f0) / (1.019 * erb);
    1.0 / (1.0 + u * u).powi(4)
}

/// Composite Simpson integral of `g` over `[a, b]` with `n` (even) panels.
fn simpson(g: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = g(a) + g(b);
    for i in 1..n {
        s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn left_power(f: f64, l: usize) -> f64 {
    (1.0 + 0.3 * l as f64) * (1.0 + 0.5 * (f / 3000.0).sin()).powi(2) * (-(f / 9000.0)).exp()
}

fn right_power(f: f64, l: usize) -> f64 {
    0.7 + 0.2 * ((f + 400.0 * l as f64) / 1700.0).cos()
}

#[test]
fn ild_matches_fine_quadrature() {
    let (lo, hi) = (1500.0, 12000.0);
    let fs = 48000.0;
    let n = 4096;
    let freqs: Vec<f64> = (0..=n / 2).map(|k| k as f64 * fs / n as f64).collect();
    let dirs = SphericalGrid::horizontal_ring(3);
    let spec = IldSpec::erb_spaced(lo, hi, 1.0, dirs.clone()).unwrap();
    let l_spec = DMatrix::from_fn(dirs.len(), freqs.len(), |l, f| {
        Complex::new(left_power(freqs[f], l).sqrt(), 0.0)
    });
    let r_spec = DMatrix::from_fn(dirs.len(), freqs.len(), |l, f| {
        Complex::new(0.0, right_power(freqs[f], l).sqrt())
    });
    let ild = ild_curve(&l_spec, &r_spec, &spec, &freqs, 0.0).unwrap();
    // The grid band starts and ends on bins; integrate the oracle over the
    // same bin-aligned interval.
    let a = freqs.iter().copied().find(|&f| f >= lo).unwrap();
    let b = freqs.iter().copied().rfind(|&f| f <= hi).unwrap();
    let mut worst = 0.0f64;
    for (c, &f0) in spec.centers_hz.iter().enumerate() {
        for l in 0..dirs.len() {
            let pl = simpson(|f| gammatone_power(f0, f) * left_power(f, l), a, b, 200_000);
            let pr = simpson(
                |f| gammatone_power(f0, f) * right_power(f, l),
                a,
                b,
                200_000,
            );
            let oracle = 10.0 * (pl / pr).log10();
            worst = worst.max((ild[(l, c)] - oracle).abs());
        }
    }
    // Trapezoid rule on an 11.7 Hz grid against narrow (>= 190 Hz) bands.
    assert!(worst < 1e-3, "max deviation {worst} dB");
}

#[test]
fn equal_ears_give_zero_ild_and_gain_shows_up_exactly() {
    let freqs: Vec<f64> = (0..200).map(|k| 100.0 + 50.0 * k as f64).collect();
    let dirs = SphericalGrid::horizontal_ring(4);
    let spec = IldSpec::erb_spaced(1000.0, 8000.0, 2.0, dirs.clone()).unwrap();
    let s = DMatrix::from_fn(4, freqs.len(), |l, f| {
        Complex::new(1.0 + (l + f) as f64 * 0.01, 0.5)
    });
    let zero = ild_curve(&s, &s, &spec, &freqs, 0.0).unwrap();
    assert!(zero.iter().all(|v| v.abs() < 1e-12));
    let louder = s.map(|x| x * 2.0);
    let six = ild_curve(&louder, &s, &spec, &freqs, 0.0).unwrap();
    assert!(six.iter().all(|v| (v - 20.0 * 2f64.log10()).abs() < 1e-12));
}
