//! Design methods on a small rigid-sphere problem.

use bsm_core::design::{
    apply_covariance_constraint, magls_filters, mse_filters, rendered_covariance,
    target_covariance, MaglsSettings,
};
use bsm_core::hrtf::{default_ears, synthetic_sphere_hrtf, SphericalGrid};
use bsm_core::imagls::{imagls_loss, optimize_imagls_from};
use bsm_core::metrics::{
    estimated_binaural, ild_error_report, magnitude_error_db, nmse_db, target_binaural,
};
use bsm_core::{ArrayGeometry, Complex, DesignProblem, FilterBank, IldSpec, ImaglsConfig};
use proptest::prelude::*;

const RING: usize = 24;

fn problem(radius: f64, noise: f64) -> DesignProblem {
    let fs = 48000.0;
    let freqs: Vec<f64> = (0..=64).map(|k| k as f64 * fs / 128.0).collect();
    let grid = SphericalGrid::fibonacci(80)
        .unwrap()
        .with_horizontal_ring(RING);
    let hrtf = synthetic_sphere_hrtf(radius, default_ears(), grid, freqs, fs).unwrap();
    DesignProblem::from_geometry(&ArrayGeometry::semicircular6(), hrtf, noise).unwrap()
}

fn ild_spec() -> IldSpec {
    IldSpec::erb_spaced(1500.0, 8000.0, 1.0, SphericalGrid::horizontal_ring(RING)).unwrap()
}

fn mag_error(bank: &FilterBank, p: &DesignProblem) -> Vec<f64> {
    let z = estimated_binaural(bank, &p.steering).unwrap();
    magnitude_error_db(&z, &target_binaural(&p.hrtf), p.weights()).unwrap()
}

#[test]
fn mse_has_the_lowest_complex_error() {
    let p = problem(0.0875, 1e-4);
    let mse = mse_filters(&p).unwrap();
    let magls = magls_filters(&p, &MaglsSettings::default()).unwrap().bank;
    let target = target_binaural(&p.hrtf);
    let e_mse = nmse_db(
        &estimated_binaural(&mse, &p.steering).unwrap(),
        &target,
        p.weights(),
    )
    .unwrap();
    let e_magls = nmse_db(
        &estimated_binaural(&magls, &p.steering).unwrap(),
        &target,
        p.weights(),
    )
    .unwrap();
    for (a, b) in e_mse.iter().zip(&e_magls) {
        assert!(a <= &(b + 1e-9), "{a} > {b}");
    }
}

#[test]
fn magls_beats_mse_in_magnitude_above_crossover() {
    let p = problem(0.0875, 1e-4);
    let mse = mag_error(&mse_filters(&p).unwrap(), &p);
    let raw = magls_filters(&p, &MaglsSettings::default()).unwrap().bank;
    let constrained = apply_covariance_constraint(&raw, &p).unwrap();
    for (bank, name) in [(&raw, "raw"), (&constrained, "constrained")] {
        let e = mag_error(bank, &p);
        for (b, f) in p.frequencies().iter().enumerate() {
            if *f >= 1500.0 {
                assert!(e[b] <= mse[b], "{name} {f} Hz: {} > {}", e[b], mse[b]);
            }
        }
    }
}

#[test]
fn imagls_trades_magnitude_for_ild() {
    let p = problem(0.0875, 1e-4);
    let magls = apply_covariance_constraint(
        &magls_filters(&p, &MaglsSettings::default()).unwrap().bank,
        &p,
    )
    .unwrap();
    let mut cfg = ImaglsConfig::new(0.1, ild_spec());
    cfg.max_iter = 150;
    let out = optimize_imagls_from(&p, &cfg, &magls).unwrap();
    assert!(out.last.total < out.initial.total);
    let report = ild_error_report(
        &p.hrtf,
        &[("magls", &magls), ("imagls", &out.bank)],
        &cfg.ild_spec,
        &p.steering,
        1e-12,
    )
    .unwrap();
    let gain = report.methods[0].mean_ild_error_db() - report.methods[1].mean_ild_error_db();
    assert!(gain > 0.5, "ILD gain {gain} dB");
    // Outside the band the warm start is untouched.
    for (b, f) in p.frequencies().iter().enumerate() {
        if *f < 1500.0 || *f > 8000.0 {
            assert_eq!(out.bank.coeffs[b], magls.coeffs[b]);
        }
    }
}

fn random_bank(p: &DesignProblem, seed: u64) -> FilterBank {
    let mut b = mse_filters(p).unwrap();
    let mut s = seed | 1;
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for c in &mut b.coeffs {
        for v in c.iter_mut() {
            *v = Complex::new(next(), next());
        }
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Any bank with full-rank rendered outputs is corrected exactly.
    #[test]
    fn covariance_constraint_is_exact(seed in 1u64..u64::MAX, radius in 0.07f64..0.1) {
        let p = problem(radius, 1e-3);
        let fixed = apply_covariance_constraint(&random_bank(&p, seed), &p).unwrap();
        for bin in 0..p.num_bins() {
            let r = rendered_covariance(&fixed, &p, bin);
            let t = target_covariance(&p, bin);
            let scale = t[0][0].norm() + t[1][1].norm();
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((r[i][j] - t[i][j]).norm() < 1e-10 * scale);
                }
            }
        }
    }

    /// A common phase per bin and ear changes neither magnitudes nor ILDs.
    #[test]
    fn loss_ignores_common_phase(seed in 1u64..u64::MAX, phase in -3.1f64..3.1) {
        let p = problem(0.0875, 1e-3);
        let bank = random_bank(&p, seed);
        let cfg = ImaglsConfig::new(0.5, ild_spec());
        let a = imagls_loss(&bank, &p, &cfg).unwrap();
        let b = imagls_loss(&bank.scaled(Complex::from_polar(1.0, phase)), &p, &cfg).unwrap();
        prop_assert!((a.total - b.total).abs() <= 1e-10 * a.total);
    }

    /// The exchange objective never increases between accepted iterates.
    #[test]
    fn exchange_is_monotone(noise in 1e-5f64..1e-1, phase in -3.0f64..3.0) {
        let p = problem(0.0875, noise);
        let settings = MaglsSettings { init_phase_rad: phase, record_history: true, max_iter: 300, ..MaglsSettings::default() };
        let out = magls_filters(&p, &settings).unwrap();
        for h in out.histories.iter().flat_map(|x| x.iter()) {
            for i in 1..h.len().saturating_sub(1) {
                prop_assert!(h[i] <= h[i - 1]);
            }
        }
    }
}
