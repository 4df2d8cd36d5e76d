//! Microphone-array geometry and plane-wave steering vectors for
//! microphones mounted on a rigid sphere (or suspended in free field).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphmath::{bessel_j_array, hankel_h1_log_derivative_inverse, legendre_array, Complex};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Upper bound returned by [`truncation_order`].
pub const MAX_TRUNCATION_ORDER: usize = 120;

/// A direction on the unit sphere. `theta` is the colatitude measured from
/// the positive vertical axis, `phi` the azimuth measured counterclockwise
/// from the frontal (sagittal) axis, so `phi > 0` is the listener's left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    /// Validates `theta` and wraps `phi` into `[-pi, pi)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::domain("direction components must be finite"));
        }
        if !(-1e-12..=PI + 1e-12).contains(&theta) {
            return Err(Error::domain(format!("colatitude {theta} outside [0, pi]")));
        }
        Ok(Direction {
            theta: theta.clamp(0.0, PI),
            phi: wrap_phi(phi),
        })
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        Self::new(theta_deg.to_radians(), phi_deg.to_radians())
    }

    pub fn horizontal(phi: f64) -> Self {
        Direction {
            theta: PI / 2.0,
            phi: wrap_phi(phi),
        }
    }

    /// Reflection across the sagittal (median) plane.
    pub fn mirrored(&self) -> Self {
        Direction {
            theta: self.theta,
            phi: wrap_phi(-self.phi),
        }
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Cosine of the angle between two directions, clamped to `[-1, 1]`.
    pub fn cos_angle(&self, other: &Direction) -> f64 {
        let c = self.theta.cos() * other.theta.cos()
            + self.theta.sin() * other.theta.sin() * (self.phi - other.phi).cos();
        c.clamp(-1.0, 1.0)
    }

    pub fn great_circle(&self, other: &Direction) -> f64 {
        self.cos_angle(other).acos()
    }
}

fn wrap_phi(phi: f64) -> f64 {
    if (-PI..PI).contains(&phi) {
        return phi;
    }
    let mut p = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if p >= PI {
        p -= 2.0 * PI;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baffle {
    RigidSphere,
    Open,
}

impl std::str::FromStr for Baffle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rigid_sphere" | "rigid" => Ok(Baffle::RigidSphere),
            "open" => Ok(Baffle::Open),
            other => Err(Error::InvalidData(format!("unknown baffle {other:?}"))),
        }
    }
}

impl std::fmt::Display for Baffle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Baffle::RigidSphere => "rigid_sphere",
            Baffle::Open => "open",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub radius_m: f64,
    pub mic_directions: Vec<Direction>,
    pub baffle: Baffle,
}

impl ArrayGeometry {
    pub fn new(radius_m: f64, mic_directions: Vec<Direction>, baffle: Baffle) -> Result<Self> {
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(Error::domain(format!("radius {radius_m} must be positive")));
        }
        if mic_directions.is_empty() {
            return Err(Error::domain("array needs at least one microphone"));
        }
        for d in &mic_directions {
            Direction::new(d.theta, d.phi)?;
        }
        Ok(ArrayGeometry {
            radius_m,
            mic_directions,
            baffle,
        })
    }

    /// Six microphones on the horizontal plane of a 10 cm rigid sphere at
    /// azimuths +-22, +-45 and +-65 degrees, ordered left/right in pairs.
    pub fn semicircular6() -> Self {
        let mics = [22.0, -22.0, 45.0, -45.0, 65.0, -65.0]
            .iter()
            .map(|&p| Direction::from_degrees(90.0, p).expect("static geometry"))
            .collect();
        ArrayGeometry {
            radius_m: 0.10,
            mic_directions: mics,
            baffle: Baffle::RigidSphere,
        }
    }

    pub fn num_mics(&self) -> usize {
        self.mic_directions.len()
    }

    pub fn ka(&self, freq_hz: f64) -> f64 {
        2.0 * PI * freq_hz * self.radius_m / SPEED_OF_SOUND
    }

    /// Parses the plain-text geometry format:
    ///
    /// ```text
    /// radius_m = 0.10
    /// baffle = rigid_sphere
    /// mic = 90, 22
    /// mic = 90, -22
    /// ```
    ///
    /// Angles are `theta_deg, phi_deg`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut radius = None;
        let mut baffle = Baffle::RigidSphere;
        let mut mics = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad =
                |what: &str| Error::InvalidData(format!("geometry line {}: {what}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            match key.trim() {
                "radius_m" => {
                    radius = Some(value.trim().parse::<f64>().map_err(|_| bad("bad radius"))?);
                }
                "baffle" => baffle = value.parse()?,
                "mic" => {
                    let parts: Vec<_> = value.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(bad("mic needs theta_deg, phi_deg"));
                    }
                    let t: f64 = parts[0].parse().map_err(|_| bad("bad theta"))?;
                    let p: f64 = parts[1].parse().map_err(|_| bad("bad phi"))?;
                    mics.push(Direction::from_degrees(t, p)?);
                }
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        let radius =
            radius.ok_or_else(|| Error::InvalidData("geometry is missing radius_m".into()))?;
        ArrayGeometry::new(radius, mics, baffle)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = format!("radius_m = {}\nbaffle = {}\n", self.radius_m, self.baffle);
        for d in &self.mic_directions {
            let _ = writeln!(s, "mic = {}, {}", d.theta.to_degrees(), d.phi.to_degrees());
        }
        s
    }
}

/// Modal radial function `b_n(ka)`.
///
/// Rigid sphere: `4 pi (-i)^n [j_n(ka) - j_n'(ka) / h_n'(ka) * h_n(ka)]`,
/// open sphere: `4 pi (-i)^n j_n(ka)`. The `(-i)^n` factor makes the
/// incident field `exp(-i k r . u)` of a wave arriving from direction `u`
/// under the `e^{-i 2 pi f t}` convention, so the sphere is loudest on the
/// side facing the source.
pub fn radial_function_bn(n: usize, ka: f64, baffle: Baffle) -> Result<Complex> {
    if !(ka.is_finite() && ka >= 0.0) || ka > crate::sphmath::MAX_ARGUMENT {
        return Err(Error::domain(format!("ka = {ka} out of range")));
    }
    if n > crate::sphmath::MAX_ORDER {
        return Err(Error::domain(format!("order {n} too large")));
    }
    Ok(radial_functions(n, ka, baffle)[n])
}

/// `b_0(ka) ..= b_nmax(ka)`.
pub fn radial_functions(nmax: usize, ka: f64, baffle: Baffle) -> Vec<Complex> {
    let four_pi = 4.0 * PI;
    if ka == 0.0 {
        let mut out = vec![Complex::new(0.0, 0.0); nmax + 1];
        out[0] = Complex::new(four_pi, 0.0);
        return out;
    }
    let j = bessel_j_array(nmax + 1, ka);
    let ratio = match baffle {
        Baffle::RigidSphere => Some(hankel_h1_log_derivative_inverse(nmax, ka)),
        Baffle::Open => None,
    };
    (0..=nmax)
        .map(|n| {
            let phase = minus_i_pow(n);
            let radial = match &ratio {
                None => Complex::new(j[n], 0.0),
                Some(r) => {
                    let jd = if n == 0 {
                        -j[1]
                    } else {
                        j[n - 1] - (n as f64 + 1.0) / ka * j[n]
                    };
                    Complex::new(j[n], 0.0) - r[n] * jd
                }
            };
            phase * radial * four_pi
        })
        .collect()
}

fn minus_i_pow(n: usize) -> Complex {
    match n % 4 {
        0 => Complex::new(1.0, 0.0),
        1 => Complex::new(0.0, -1.0),
        2 => Complex::new(-1.0, 0.0),
        _ => Complex::new(0.0, 1.0),
    }
}

/// Smallest `N >= ceil(ka) + 10` at which `|b_N| / max_{n<=N} |b_n|` drops
/// below `1e-12`, capped at [`MAX_TRUNCATION_ORDER`].
pub fn truncation_order(ka: f64) -> usize {
    let floor = (ka.max(0.0).ceil() as usize + 10).min(MAX_TRUNCATION_ORDER);
    let b = radial_functions(MAX_TRUNCATION_ORDER, ka.max(0.0), Baffle::RigidSphere);
    let mut peak = 0.0f64;
    for (n, bn) in b.iter().enumerate() {
        let mag = bn.norm();
        peak = peak.max(mag);
        if n >= floor && mag < 1e-12 * peak {
            return n;
        }
    }
    MAX_TRUNCATION_ORDER
}

/// Pressure at each microphone for a unit plane wave arriving from `source`,
/// referenced to the incident wave at the sphere centre:
/// `v_m = sum_n b_n(ka) (2n+1)/(4 pi) P_n(cos angle(mic_m, source))`.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    freq_hz: f64,
    source: &Direction,
    order: usize,
) -> Vec<Complex> {
    let b = radial_functions(order, geometry.ka(freq_hz), geometry.baffle);
    steering_from_radial(geometry, &b, source)
}

fn steering_from_radial(
    geometry: &ArrayGeometry,
    b: &[Complex],
    source: &Direction,
) -> Vec<Complex> {
    let order = b.len() - 1;
    geometry
        .mic_directions
        .iter()
        .map(|mic| {
            let p = legendre_array(order, mic.cos_angle(source));
            b.iter()
                .zip(&p)
                .enumerate()
                .map(|(n, (bn, pn))| bn * ((2.0 * n as f64 + 1.0) / (4.0 * PI) * pn))
                .sum()
        })
        .collect()
}

/// Steering vectors for every direction of a grid at one frequency. Column
/// `k` belongs to `grid[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMatrix {
    pub frequency_hz: f64,
    pub order: usize,
    /// Set when `order < ceil(ka)`; the entries are then under-resolved.
    pub truncation_warning: bool,
    pub entries: DMatrix<Complex>,
}

impl SteeringMatrix {
    pub fn num_mics(&self) -> usize {
        self.entries.nrows()
    }

    pub fn num_directions(&self) -> usize {
        self.entries.ncols()
    }
}

pub fn steering_matrix(
    geometry: &ArrayGeometry,
    freq_hz: f64,
    grid: &[Direction],
    order: usize,
) -> SteeringMatrix {
    let ka = geometry.ka(freq_hz);
    let b = radial_functions(order, ka, geometry.baffle);
    let m = geometry.num_mics();
    let mut entries = DMatrix::zeros(m, grid.len());
    for (k, dir) in grid.iter().enumerate() {
        for (row, v) in steering_from_radial(geometry, &b, dir)
            .into_iter()
            .enumerate()
        {
            entries[(row, k)] = v;
        }
    }
    SteeringMatrix {
        frequency_hz: freq_hz,
        order,
        truncation_warning: (order as f64) < ka.ceil(),
        entries,
    }
}

/// Steering matrices over a frequency list, each at its own
/// [`truncation_order`].
pub fn steering_matrices(
    geometry: &ArrayGeometry,
    freqs: &[f64],
    grid: &[Direction],
) -> Vec<SteeringMatrix> {
    freqs
        .par_iter()
        .map(|&f| steering_matrix(geometry, f, grid, truncation_order(geometry.ka(f))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphmath::spherical_bessel_j;

    #[test]
    fn radial_limits() {
        let b = radial_function_bn(0, 1e-8, Baffle::RigidSphere).unwrap();
        assert!((b - Complex::new(4.0 * PI, 0.0)).norm() < 1e-6);
        let b = radial_function_bn(0, 1.0, Baffle::Open).unwrap();
        assert!((b.re - 4.0 * PI * 1f64.sin()).abs() < 1e-13 && b.im.abs() < 1e-15);
        assert_eq!(
            radial_function_bn(3, 0.0, Baffle::RigidSphere).unwrap(),
            Complex::new(0.0, 0.0)
        );
    }

    #[test]
    fn truncation_rule() {
        assert_eq!(truncation_order(0.0), 10);
        let n10 = truncation_order(10.0);
        assert!(n10 >= 20);
        assert!(truncation_order(37.0) < MAX_TRUNCATION_ORDER);
    }

    #[test]
    fn long_wavelength_steering_is_unity() {
        let g = ArrayGeometry::semicircular6();
        let f = 1e-4 * SPEED_OF_SOUND / (2.0 * PI * g.radius_m);
        let src = Direction::from_degrees(40.0, 130.0).unwrap();
        for v in steering_vector(&g, f, &src, 10) {
            assert!((v - 1.0).norm() < 1e-3);
        }
    }

    #[test]
    fn facing_microphone_is_loudest() {
        let g = ArrayGeometry::new(
            0.1,
            vec![
                Direction::from_degrees(90.0, 90.0).unwrap(),
                Direction::from_degrees(90.0, -90.0).unwrap(),
            ],
            Baffle::RigidSphere,
        )
        .unwrap();
        let src = Direction::from_degrees(90.0, 90.0).unwrap();
        let v = steering_vector(&g, 8000.0, &src, 40);
        assert!(v[0].norm() > 1.5 && v[1].norm() < 1.0, "{v:?}");
    }

    #[test]
    fn open_sphere_is_a_plane_wave() {
        // b_n = 4 pi (-i)^n j_n reproduces exp(-i k r . u) exactly.
        let mic = Direction::from_degrees(70.0, 30.0).unwrap();
        let g = ArrayGeometry::new(0.1, vec![mic], Baffle::Open).unwrap();
        let src = Direction::from_degrees(120.0, -50.0).unwrap();
        let f = 3000.0;
        let v = steering_vector(&g, f, &src, 40)[0];
        let kr = g.ka(f);
        let expected = Complex::new(0.0, -kr * mic.cos_angle(&src)).exp();
        assert!((v - expected).norm() < 1e-12);
        assert!(
            (spherical_bessel_j(0, kr).unwrap() * 4.0 * PI
                - radial_function_bn(0, kr, Baffle::Open).unwrap().re)
                .abs()
                < 1e-13
        );
    }

    #[test]
    fn geometry_file_round_trip() {
        let g = ArrayGeometry::semicircular6();
        let parsed = ArrayGeometry::parse(&g.to_config_string()).unwrap();
        assert_eq!(parsed.num_mics(), 6);
        for (a, b) in parsed.mic_directions.iter().zip(&g.mic_directions) {
            assert!((a.theta - b.theta).abs() < 1e-12 && (a.phi - b.phi).abs() < 1e-12);
        }
        assert!(ArrayGeometry::parse("baffle = open\nmic = 90, 0\n").is_err());
        assert!(ArrayGeometry::parse("radius_m = 0.1\nspeaker = 1\n").is_err());
    }

    #[test]
    fn phi_wraps_into_half_open_range() {
        let d = Direction::new(1.0, PI).unwrap();
        assert!((d.phi + PI).abs() < 1e-15);
        assert_eq!(Direction::horizontal(-PI).mirrored().phi, -PI);
        assert!(Direction::new(4.0, 0.0).is_err());
    }
}
