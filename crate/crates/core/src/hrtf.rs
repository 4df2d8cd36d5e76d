//! HRTF sets, spherical grids and the native `BSMD` container.
//!
//! Container layout (little-endian):
//!
//! ```text
//! "BSMD" | u32 version=1 | u32 K | u32 F | f64 sample_rate
//! f64 theta[K] | f64 phi[K] | f64 weight[K] | f64 freq[F]
//! left  (re, im) f64 pairs, K*F, row-major over (direction, frequency)
//! right (re, im) f64 pairs, K*F
//! u32 length | UTF-8 JSON metadata
//! ```

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{Map, Value};

use crate::array::{steering_matrices, ArrayGeometry, Baffle, Direction};
use crate::container::{all_finite, Reader, Writer};
use crate::error::{Error, Result};
use crate::sphmath::Complex;

pub const HRTF_MAGIC: [u8; 4] = *b"BSMD";
pub const HRTF_VERSION: u32 = 1;

/// Directions with normalized quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGrid {
    directions: Vec<Direction>,
    weights: Vec<f64>,
}

impl SphericalGrid {
    pub fn new(directions: Vec<Direction>, weights: Vec<f64>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::dims("grid needs at least one direction"));
        }
        if directions.len() != weights.len() {
            return Err(Error::dims(format!(
                "{} directions but {} weights",
                directions.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidData(
                "grid weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidData(format!(
                "grid weights sum to {sum}, expected 1"
            )));
        }
        for d in &directions {
            Direction::new(d.theta, d.phi)?;
        }
        Ok(SphericalGrid {
            directions,
            weights,
        })
    }

    pub fn uniform(directions: Vec<Direction>) -> Result<Self> {
        let n = directions.len().max(1);
        Self::new(directions, vec![1.0 / n as f64; n])
    }

    /// Near-uniform spiral grid with equal weights.
    pub fn fibonacci(n: usize) -> Result<Self> {
        let golden = PI * (3.0 - 5f64.sqrt());
        let dirs = (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                Direction::new(z.acos(), golden * i as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::uniform(dirs)
    }

    /// `count` equally spaced horizontal directions starting at `phi = 0`.
    pub fn horizontal_ring(count: usize) -> Vec<Direction> {
        (0..count)
            .map(|l| Direction::horizontal(2.0 * PI * l as f64 / count as f64))
            .collect()
    }

    /// Appends a horizontal ring at zero quadrature weight. The ring then
    /// serves the ILD evaluation without biasing direction averages.
    pub fn with_horizontal_ring(mut self, count: usize) -> Self {
        let ring = Self::horizontal_ring(count);
        self.weights.extend(std::iter::repeat_n(0.0, ring.len()));
        self.directions.extend(ring);
        self
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Index of the direction with the smallest great-circle distance to
    /// `query`; the lowest index wins ties.
    pub fn nearest_direction(&self, query: &Direction) -> usize {
        let mut best = 0;
        let mut best_cos = f64::NEG_INFINITY;
        for (i, d) in self.directions.iter().enumerate() {
            let c = d.cos_angle(query);
            if c > best_cos {
                best_cos = c;
                best = i;
            }
        }
        best
    }

    /// Indices with `|theta - 90 deg| <= tolerance_deg`, sorted by `phi`.
    pub fn horizontal_subset(&self, tolerance_deg: f64) -> Result<(Vec<usize>, Vec<Direction>)> {
        if !(tolerance_deg >= 0.0) {
            return Err(Error::domain("tolerance must be non-negative"));
        }
        let tol = tolerance_deg.to_radians();
        let mut idx: Vec<usize> = (0..self.len())
            .filter(|&i| (self.directions[i].theta - PI / 2.0).abs() <= tol + 1e-12)
            .collect();
        if idx.is_empty() {
            return Err(Error::NoHorizontalDirections { tolerance_deg });
        }
        idx.sort_by(|&a, &b| {
            self.directions[a]
                .phi
                .total_cmp(&self.directions[b].phi)
                .then(a.cmp(&b))
        });
        let dirs = idx.iter().map(|&i| self.directions[i]).collect();
        Ok((idx, dirs))
    }
}

/// Left/right ear responses on a direction grid, `K x F` each.
#[derive(Debug, Clone, PartialEq)]
pub struct HrtfSet {
    pub grid: SphericalGrid,
    pub frequencies_hz: Vec<f64>,
    pub left: DMatrix<Complex>,
    pub right: DMatrix<Complex>,
    pub sample_rate_hz: f64,
    pub metadata: Map<String, Value>,
}

impl HrtfSet {
    pub fn new(
        grid: SphericalGrid,
        frequencies_hz: Vec<f64>,
        left: DMatrix<Complex>,
        right: DMatrix<Complex>,
        sample_rate_hz: f64,
        metadata: Map<String, Value>,
    ) -> Result<Self> {
        let set = HrtfSet {
            grid,
            frequencies_hz,
            left,
            right,
            sample_rate_hz,
            metadata,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.grid.len();
        let f = self.frequencies_hz.len();
        if f == 0 {
            return Err(Error::dims("HRTF set has no frequencies"));
        }
        for (name, m) in [("left", &self.left), ("right", &self.right)] {
            if m.nrows() != k || m.ncols() != f {
                return Err(Error::dims(format!(
                    "{name} ear is {}x{}, expected {k}x{f}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if !all_finite(m.iter()) {
                return Err(Error::InvalidData(format!(
                    "{name} ear has non-finite entries"
                )));
            }
        }
        if let Some(i) = self.frequencies_hz.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneFrequencies(i + 1));
        }
        if self
            .frequencies_hz
            .iter()
            .any(|f| !f.is_finite() || *f < 0.0)
        {
            return Err(Error::InvalidData(
                "frequencies must be finite and non-negative".into(),
            ));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidData("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn num_directions(&self) -> usize {
        self.grid.len()
    }

    pub fn num_frequencies(&self) -> usize {
        self.frequencies_hz.len()
    }

    /// Responses for one ear (`0` = left, `1` = right).
    pub fn ear(&self, ear: usize) -> &DMatrix<Complex> {
        if ear == 0 {
            &self.left
        } else {
            &self.right
        }
    }

    pub fn horizontal_subset(&self, tolerance_deg: f64) -> Result<(Vec<usize>, Vec<Direction>)> {
        self.grid.horizontal_subset(tolerance_deg)
    }

    pub fn nearest_direction(&self, query: &Direction) -> usize {
        self.grid.nearest_direction(query)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let k = self.num_directions();
        let f = self.num_frequencies();
        let mut w = Writer::default();
        w.bytes(&HRTF_MAGIC);
        w.u32(HRTF_VERSION);
        w.u32(to_u32(k)?);
        w.u32(to_u32(f)?);
        w.f64(self.sample_rate_hz);
        w.f64s(self.grid.directions.iter().map(|d| d.theta));
        w.f64s(self.grid.directions.iter().map(|d| d.phi));
        w.f64s(self.grid.weights.iter().copied());
        w.f64s(self.frequencies_hz.iter().copied());
        for m in [&self.left, &self.right] {
            for row in m.row_iter() {
                w.complexes(row.iter());
            }
        }
        w.json(&self.metadata)?;
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(HRTF_MAGIC)?;
        let version = r.u32("version")?;
        if version != HRTF_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let k = r.u32("direction count")? as usize;
        let f = r.u32("frequency count")? as usize;
        if k == 0 || f == 0 {
            return Err(Error::dims(format!("empty set: K = {k}, F = {f}")));
        }
        let sample_rate_hz = r.f64("sample rate")?;
        let theta = r.f64s(k, "theta")?;
        let phi = r.f64s(k, "phi")?;
        let mut weights = r.f64s(k, "weights")?;
        let frequencies_hz = r.f64s(f, "frequencies")?;
        let left = r.complexes(k * f, "left ear")?;
        let right = r.complexes(k * f, "right ear")?;
        let mut metadata = r.json()?;
        r.finish()?;

        if weights.iter().all(|w| *w == 0.0) {
            weights = vec![1.0 / k as f64; k];
            metadata.insert(
                "warning_weights".into(),
                Value::from("no quadrature weights stored; using uniform 1/K"),
            );
        }
        let directions = theta
            .iter()
            .zip(&phi)
            .map(|(&t, &p)| {
                if !(0.0..=PI).contains(&t) || !(-PI..PI).contains(&p) {
                    return Err(Error::InvalidData(format!(
                        "direction ({t}, {p}) out of range"
                    )));
                }
                Direction::new(t, p)
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = SphericalGrid::new(directions, weights)?;
        HrtfSet::new(
            grid,
            frequencies_hz,
            DMatrix::from_row_iterator(k, f, left),
            DMatrix::from_row_iterator(k, f, right),
            sample_rate_hz,
            metadata,
        )
    }

    pub fn save_native(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load_native(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::dims(format!("count {n} exceeds u32")))
}

/// Default "ear" positions of the synthetic head: on the horizontal plane
/// at +-100 degrees azimuth.
pub fn default_ears() -> (Direction, Direction) {
    (
        Direction::horizontal(100f64.to_radians()),
        Direction::horizontal(-100f64.to_radians()),
    )
}

/// Analytic HRTF surrogate: a rigid sphere of `radius_m` with pressure
/// receivers at the two ear directions. Each response is the rigid-sphere
/// steering entry of the corresponding ear.
pub fn synthetic_sphere_hrtf(
    radius_m: f64,
    ears: (Direction, Direction),
    grid: SphericalGrid,
    frequencies_hz: Vec<f64>,
    sample_rate_hz: f64,
) -> Result<HrtfSet> {
    let head = ArrayGeometry::new(radius_m, vec![ears.0, ears.1], Baffle::RigidSphere)?;
    let k = grid.len();
    let f = frequencies_hz.len();
    let steering = steering_matrices(&head, &frequencies_hz, grid.directions());
    let mut left = DMatrix::zeros(k, f);
    let mut right = DMatrix::zeros(k, f);
    for (fi, s) in steering.iter().enumerate() {
        for ki in 0..k {
            left[(ki, fi)] = s.entries[(0, ki)];
            right[(ki, fi)] = s.entries[(1, ki)];
        }
    }
    let mut metadata = Map::new();
    metadata.insert("source".into(), Value::from("synthetic_rigid_sphere"));
    metadata.insert("head_radius_m".into(), Value::from(radius_m));
    metadata.insert(
        "ears_deg".into(),
        Value::from(vec![
            ears.0.theta.to_degrees(),
            ears.0.phi.to_degrees(),
            ears.1.theta.to_degrees(),
            ears.1.phi.to_degrees(),
        ]),
    );
    HrtfSet::new(grid, frequencies_hz, left, right, sample_rate_hz, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> HrtfSet {
        let grid = SphericalGrid::fibonacci(20)
            .unwrap()
            .with_horizontal_ring(0);
        let grid = SphericalGrid::new(grid.directions().to_vec(), grid.weights().to_vec()).unwrap();
        synthetic_sphere_hrtf(
            0.0875,
            default_ears(),
            grid,
            vec![500.0, 1000.0, 3000.0],
            48000.0,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let set = small_set();
        let bytes = set.to_bytes().unwrap();
        let back = HrtfSet::from_bytes(&bytes).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn load_errors_are_distinct() {
        let bytes = small_set().to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            HrtfSet::from_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));

        assert!(matches!(
            HrtfSet::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));

        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(
            HrtfSet::from_bytes(&bad),
            Err(Error::UnsupportedVersion(7))
        ));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(
            HrtfSet::from_bytes(&bad),
            Err(Error::DimensionMismatch(_))
        ));

        // swap the first two frequencies
        let k = 20;
        let freq_off = 4 + 4 + 4 + 4 + 8 + 3 * 8 * k;
        let mut bad = bytes.clone();
        let (a, b) = bad[freq_off..freq_off + 16].split_at_mut(8);
        a.swap_with_slice(b);
        assert!(matches!(
            HrtfSet::from_bytes(&bad),
            Err(Error::NonMonotoneFrequencies(1))
        ));
    }

    #[test]
    fn save_to_unwritable_path_fails() {
        let set = small_set();
        let err = set.save_native("/nonexistent-dir/x.bsmd").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn horizontal_subset_cases() {
        let ring = SphericalGrid::uniform(SphericalGrid::horizontal_ring(8)).unwrap();
        let (idx, dirs) = ring.horizontal_subset(0.0).unwrap();
        assert_eq!(idx.len(), 8);
        assert!(dirs.windows(2).all(|w| w[0].phi < w[1].phi));

        let polar = SphericalGrid::uniform(vec![
            Direction::new(0.0, 0.0).unwrap(),
            Direction::new(PI, 0.0).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            polar.horizontal_subset(0.0),
            Err(Error::NoHorizontalDirections { .. })
        ));
    }

    #[test]
    fn nearest_direction_cases() {
        let g = SphericalGrid::fibonacci(50).unwrap();
        for (i, d) in g.directions().iter().enumerate() {
            assert_eq!(g.nearest_direction(d), i);
        }
        let one =
            SphericalGrid::uniform(vec![Direction::from_degrees(30.0, 10.0).unwrap()]).unwrap();
        let antipode = Direction::from_degrees(150.0, -170.0).unwrap();
        assert_eq!(one.nearest_direction(&antipode), 0);
    }

    #[test]
    fn synthetic_set_is_mirror_symmetric() {
        let dirs: Vec<Direction> = SphericalGrid::fibonacci(30)
            .unwrap()
            .directions()
            .iter()
            .flat_map(|d| [*d, d.mirrored()])
            .collect();
        let grid = SphericalGrid::uniform(dirs).unwrap();
        let set = synthetic_sphere_hrtf(
            0.09,
            default_ears(),
            grid,
            vec![200.0, 2000.0, 9000.0],
            48000.0,
        )
        .unwrap();
        for k in (0..set.num_directions()).step_by(2) {
            for f in 0..3 {
                assert_eq!(set.left[(k, f)], set.right[(k + 1, f)]);
            }
        }
    }

    #[test]
    fn weights_must_be_normalized() {
        let d = vec![Direction::horizontal(0.0), Direction::horizontal(1.0)];
        assert!(SphericalGrid::new(d.clone(), vec![0.5, 0.4]).is_err());
        assert!(SphericalGrid::new(d, vec![0.5, 0.5]).is_ok());
    }
}
