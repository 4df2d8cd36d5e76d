//! Small deterministic fixtures shared by the unit tests.

use nalgebra::DMatrix;
use serde_json::Map;

use crate::design::DesignProblem;
use crate::gammatone::IldSpec;
use crate::hrtf::{HrtfSet, SphericalGrid};
use crate::sphmath::Complex;

/// xorshift64* stream in `[-1, 1)`.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        let v = self.0.wrapping_mul(0x2545_f491_4f6c_dd1d);
        (v >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    pub fn complex(&mut self) -> Complex {
        Complex::new(self.next(), self.next())
    }

    pub fn matrix(&mut self, r: usize, c: usize) -> DMatrix<Complex> {
        DMatrix::from_fn(r, c, |_, _| self.complex())
    }
}

/// Random problem with `k` weighted directions plus a `ring`-point
/// horizontal ring, `m` microphones and `freqs.len()` bins.
pub fn random_problem(
    seed: u64,
    k: usize,
    ring: usize,
    m: usize,
    freqs: Vec<f64>,
    rho: f64,
) -> DesignProblem {
    let mut rng = Lcg(seed.wrapping_mul(2_654_435_761).max(1));
    let grid = SphericalGrid::fibonacci(k)
        .unwrap()
        .with_horizontal_ring(ring);
    let kk = grid.len();
    let f = freqs.len();
    let left = rng.matrix(kk, f).map(|x| x + Complex::new(1.5, 0.0));
    let right = rng.matrix(kk, f).map(|x| x + Complex::new(1.0, 0.5));
    let hrtf = HrtfSet::new(grid, freqs, left, right, 48000.0, Map::new()).unwrap();
    let steering = (0..f).map(|_| rng.matrix(m, kk)).collect();
    DesignProblem::new(steering, hrtf, rho).unwrap()
}

pub fn ring_spec(
    problem: &DesignProblem,
    ring: usize,
    centers: Vec<f64>,
    lo: f64,
    hi: f64,
) -> IldSpec {
    let dirs = SphericalGrid::horizontal_ring(ring);
    assert!(problem.hrtf.grid.len() >= ring);
    IldSpec::new(centers, lo, hi, dirs).unwrap()
}
