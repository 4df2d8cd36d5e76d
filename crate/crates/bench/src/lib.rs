//! Shared fixtures for the design benchmarks.

use bsm_core::hrtf::{default_ears, synthetic_sphere_hrtf, SphericalGrid};
use bsm_core::{ArrayGeometry, DesignProblem, IldSpec, ImaglsConfig};

/// Sample rate of every fixture.
pub const SAMPLE_RATE_HZ: f64 = 48000.0;

/// Horizontal directions of the fixture grid.
pub const RING: usize = 24;

/// A rigid-sphere design problem: the six-microphone semicircular array and
/// a synthetic head, `directions` spiral directions plus a horizontal ring,
/// on the one-sided grid of an `fft_size`-point transform.
pub fn sphere_problem(directions: usize, fft_size: usize) -> DesignProblem {
    let freqs: Vec<f64> = (0..=fft_size / 2)
        .map(|k| k as f64 * SAMPLE_RATE_HZ / fft_size as f64)
        .collect();
    let grid = SphericalGrid::fibonacci(directions)
        .expect("fixture grid")
        .with_horizontal_ring(RING);
    let hrtf = synthetic_sphere_hrtf(0.0875, default_ears(), grid, freqs, SAMPLE_RATE_HZ)
        .expect("fixture HRTF");
    DesignProblem::from_geometry(&ArrayGeometry::semicircular6(), hrtf, 1e-4)
        .expect("fixture problem")
}

/// iMagLS settings over 1.5-8 kHz on the fixture ring.
pub fn imagls_config(lambda: f64, max_iter: usize) -> ImaglsConfig {
    let spec = IldSpec::erb_spaced(1500.0, 8000.0, 1.0, SphericalGrid::horizontal_ring(RING))
        .expect("fixture ILD spec");
    let mut cfg = ImaglsConfig::new(lambda, spec);
    cfg.max_iter = max_iter;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_dimensions() {
        let p = sphere_problem(40, 64);
        assert_eq!(p.num_bins(), 33);
        assert_eq!(p.num_mics(), 6);
        assert_eq!(p.hrtf.grid.len(), 40 + RING);
    }

    #[test]
    fn fixture_config_is_valid() {
        let cfg = imagls_config(0.1, 5);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.max_iter, 5);
    }
}
