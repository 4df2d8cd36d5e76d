//! Error metrics versus frequency and incident angle.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bank::FilterBank;
use crate::design::render_bin;
use crate::error::{Error, Result};
use crate::gammatone::IldSpec;
use crate::hrtf::HrtfSet;
use crate::imagls::{horizontal_indices, ild_curve};
use crate::sphmath::Complex;

/// Lower clamp for every dB value in reports.
pub const DB_FLOOR: f64 = -300.0;

/// Ear signals of a single plane wave from every grid direction,
/// `[left, right]`, each `K x F`.
pub type Binaural = [DMatrix<Complex>; 2];

fn to_db(x: f64) -> f64 {
    if x > 0.0 {
        (10.0 * x.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// `z(f, k) = c(f)^H v(f, k)` for both ears.
pub fn estimated_binaural(bank: &FilterBank, steering: &[DMatrix<Complex>]) -> Result<Binaural> {
    if steering.len() != bank.num_bins() {
        return Err(Error::dims(format!(
            "{} steering bins for {} filter bins",
            steering.len(),
            bank.num_bins()
        )));
    }
    let k = steering[0].ncols();
    let mut out = [
        DMatrix::zeros(k, bank.num_bins()),
        DMatrix::zeros(k, bank.num_bins()),
    ];
    for (f, v) in steering.iter().enumerate() {
        if v.nrows() != bank.num_mics() || v.ncols() != k {
            return Err(Error::dims(format!(
                "steering bin {f} is {}x{}",
                v.nrows(),
                v.ncols()
            )));
        }
        for e in 0..2 {
            let z = render_bin(v, &bank.coeffs[f].column(e).into_owned());
            out[e].set_column(f, &z);
        }
    }
    Ok(out)
}

/// Target ear signals `p = h` of an HRTF set.
pub fn target_binaural(hrtf: &HrtfSet) -> Binaural {
    [hrtf.left.clone(), hrtf.right.clone()]
}

fn normalized_error(
    z: &Binaural,
    p: &Binaural,
    weights: &[f64],
    err: impl Fn(Complex, Complex) -> f64,
) -> Result<Vec<f64>> {
    let (k, f) = p[0].shape();
    if z[0].shape() != (k, f)
        || z[1].shape() != (k, f)
        || p[1].shape() != (k, f)
        || weights.len() != k
    {
        return Err(Error::dims(
            "estimate, target and weights disagree".to_string(),
        ));
    }
    (0..f)
        .map(|fi| {
            let mut acc = 0.0;
            for e in 0..2 {
                let mut num = 0.0;
                let mut den = 0.0;
                for ki in 0..k {
                    let pv = p[e][(ki, fi)];
                    num += weights[ki] * err(pv, z[e][(ki, fi)]);
                    den += weights[ki] * pv.norm_sqr();
                }
                if den == 0.0 {
                    return Err(Error::DegeneratePower(format!(
                        "zero target power at bin {fi}, ear {e}"
                    )));
                }
                acc += 0.5 * num / den;
            }
            Ok(to_db(acc))
        })
        .collect()
}

/// Normalized complex error per bin in dB: the ratio
/// `sum_k w |p - z|^2 / sum_k w |p|^2`, averaged over ears before the dB
/// conversion.
pub fn nmse_db(z: &Binaural, p: &Binaural, weights: &[f64]) -> Result<Vec<f64>> {
    normalized_error(z, p, weights, |p, z| (p - z).norm_sqr())
}

/// Normalized magnitude error per bin in dB, with `(|p| - |z|)^2` in the
/// numerator.
pub fn magnitude_error_db(z: &Binaural, p: &Binaural, weights: &[f64]) -> Result<Vec<f64>> {
    normalized_error(z, p, weights, |p, z| {
        let d = p.norm() - z.norm();
        d * d
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub name: String,
    pub nmse_db: Vec<f64>,
    pub mag_error_db: Vec<f64>,
    /// ILD in dB, `[l][c]`.
    pub ild_db: Vec<Vec<f64>>,
    /// `|ILD_target - ILD_method|` averaged over directions, per center.
    pub ild_error_db_vs_freq: Vec<f64>,
    /// Same, averaged over centers, per horizontal direction.
    pub ild_error_db_vs_angle: Vec<f64>,
}

impl MethodReport {
    pub fn mean_ild_error_db(&self) -> f64 {
        mean(&self.ild_error_db_vs_freq)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub frequencies_hz: Vec<f64>,
    pub centers_hz: Vec<f64>,
    /// Azimuth of every horizontal direction in degrees, `(-180, 180]`.
    pub phi_deg: Vec<f64>,
    pub ild_target_db: Vec<Vec<f64>>,
    pub methods: Vec<MethodReport>,
}

fn phi_degrees(phi: f64) -> f64 {
    let d = phi.to_degrees();
    if d <= -180.0 + 1e-9 {
        180.0
    } else {
        d
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Full evaluation of several banks against an HRTF set. `steering[f]` is
/// the `M x K` steering matrix on the HRTF grid at bin `f`.
pub fn ild_error_report(
    target: &HrtfSet,
    banks: &[(&str, &FilterBank)],
    spec: &IldSpec,
    steering: &[DMatrix<Complex>],
    eps: f64,
) -> Result<EvalReport> {
    let freqs = &target.frequencies_hz;
    let p = target_binaural(target);
    let horizontal = horizontal_indices(target, spec)?;
    let pick = |m: &DMatrix<Complex>| {
        DMatrix::from_fn(horizontal.len(), m.ncols(), |l, f| m[(horizontal[l], f)])
    };
    let ild_target = ild_curve(&pick(&p[0]), &pick(&p[1]), spec, freqs, eps)?;
    let (nl, nc) = ild_target.shape();

    let mut methods = Vec::with_capacity(banks.len());
    for (name, bank) in banks {
        if &bank.frequencies_hz != freqs {
            return Err(Error::GridMismatch(format!(
                "bank {name} frequencies differ from the HRTF set"
            )));
        }
        let z = estimated_binaural(bank, steering)?;
        let ild = ild_curve(&pick(&z[0]), &pick(&z[1]), spec, freqs, eps)?;
        let err = DMatrix::from_fn(nl, nc, |l, c| (ild_target[(l, c)] - ild[(l, c)]).abs());
        methods.push(MethodReport {
            name: name.to_string(),
            nmse_db: nmse_db(&z, &p, target.grid.weights())?,
            mag_error_db: magnitude_error_db(&z, &p, target.grid.weights())?,
            ild_db: rows(&ild),
            ild_error_db_vs_freq: (0..nc).map(|c| err.column(c).mean()).collect(),
            ild_error_db_vs_angle: (0..nl).map(|l| err.row(l).mean()).collect(),
        });
    }
    Ok(EvalReport {
        frequencies_hz: freqs.clone(),
        centers_hz: spec.centers_hz.clone(),
        phi_deg: spec
            .horizontal_directions
            .iter()
            .map(|d| phi_degrees(d.phi))
            .collect(),
        ild_target_db: rows(&ild_target),
        methods,
    })
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Indices of horizontal directions with `0 <= phi <= 180` degrees,
    /// sorted by angle.
    pub fn half_plane(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.phi_deg.len())
            .filter(|&i| self.phi_deg[i] >= 0.0 && self.phi_deg[i] <= 180.0)
            .collect();
        idx.sort_by(|&a, &b| self.phi_deg[a].total_cmp(&self.phi_deg[b]));
        idx
    }

    /// Copy keeping only the bins in `[lo, hi]` for the per-bin curves.
    pub fn restricted(&self, lo: f64, hi: f64) -> EvalReport {
        let keep: Vec<usize> = (0..self.frequencies_hz.len())
            .filter(|&i| self.frequencies_hz[i] >= lo && self.frequencies_hz[i] <= hi)
            .collect();
        let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let mut out = self.clone();
        out.frequencies_hz = pick(&self.frequencies_hz);
        for (m, src) in out.methods.iter_mut().zip(&self.methods) {
            m.nmse_db = pick(&src.nmse_db);
            m.mag_error_db = pick(&src.mag_error_db);
        }
        out
    }

    /// Mean over the horizontal directions with `|phi|` in `[lo, hi]`
    /// degrees of a per-direction curve.
    pub fn angle_mean(&self, curve: &[f64], lo: f64, hi: f64) -> f64 {
        let v: Vec<f64> = self
            .phi_deg
            .iter()
            .zip(curve)
            .filter(|(p, _)| p.abs() >= lo && p.abs() <= hi)
            .map(|(_, v)| *v)
            .collect();
        mean(&v)
    }

    /// Mean over the bins in `[lo, hi]` of a per-bin dB curve.
    pub fn band_mean(&self, curve: &[f64], lo: f64, hi: f64) -> f64 {
        let v: Vec<f64> = self
            .frequencies_hz
            .iter()
            .zip(curve)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, v)| *v)
            .collect();
        mean(&v)
    }

    fn header(&self, first: &str, prefix: &str) -> String {
        let mut h = first.to_string();
        for m in &self.methods {
            h.push_str(&format!(",{prefix}{}", m.name));
        }
        h
    }

    /// `freq_hz,nmse_db_<method>...`
    pub fn write_nmse_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.header("freq_hz", "nmse_db_"))?;
        for (i, f) in self.frequencies_hz.iter().enumerate() {
            write!(out, "{f}")?;
            for m in &self.methods {
                write!(out, ",{}", m.nmse_db[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// `freq_hz,mag_err_db_<method>...`
    pub fn write_magnitude_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.header("freq_hz", "mag_err_db_"))?;
        for (i, f) in self.frequencies_hz.iter().enumerate() {
            write!(out, "{f}")?;
            for m in &self.methods {
                write!(out, ",{}", m.mag_error_db[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// `f0_hz,ild_err_db_<method>...`
    pub fn write_ild_freq_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.header("f0_hz", "ild_err_db_"))?;
        for (i, f) in self.centers_hz.iter().enumerate() {
            write!(out, "{f}")?;
            for m in &self.methods {
                write!(out, ",{}", m.ild_error_db_vs_freq[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// `phi_deg,ild_db_target,ild_db_<method>...,ild_err_db_<method>...`
    /// over `0..=180` degrees; ILDs are averaged over centers.
    pub fn write_ild_angle_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut h = String::from("phi_deg,ild_db_target");
        for m in &self.methods {
            h.push_str(&format!(",ild_db_{}", m.name));
        }
        for m in &self.methods {
            h.push_str(&format!(",ild_err_db_{}", m.name));
        }
        writeln!(out, "{h}")?;
        for l in self.half_plane() {
            write!(out, "{},{}", self.phi_deg[l], mean(&self.ild_target_db[l]))?;
            for m in &self.methods {
                write!(out, ",{}", mean(&m.ild_db[l]))?;
            }
            for m in &self.methods {
                write!(out, ",{}", m.ild_error_db_vs_angle[l])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(k: usize, f: usize, seed: f64) -> Binaural {
        let m = |s: f64| {
            DMatrix::from_fn(k, f, |a, b| {
                Complex::new((a as f64 + s).sin() + 1.5, (b as f64 * s).cos())
            })
        };
        [m(seed), m(seed + 0.3)]
    }

    #[test]
    fn nmse_reference_values() {
        let p = pair(5, 3, 0.7);
        let w = vec![0.2; 5];
        assert!(nmse_db(&p, &p, &w).unwrap().iter().all(|v| *v == DB_FLOOR));
        let zero = [DMatrix::zeros(5, 3), DMatrix::zeros(5, 3)];
        for v in nmse_db(&zero, &p, &w).unwrap() {
            assert!(v.abs() < 1e-12);
        }
        let flipped = [-p[0].clone(), -p[1].clone()];
        for v in nmse_db(&flipped, &p, &w).unwrap() {
            assert!((v - 10.0 * 4f64.log10()).abs() < 1e-12);
        }
    }

    #[test]
    fn magnitude_error_ignores_phase() {
        let p = pair(4, 2, 0.1);
        let w = vec![0.25; 4];
        let rot = |m: &DMatrix<Complex>| {
            DMatrix::from_fn(4, 2, |a, b| {
                m[(a, b)] * Complex::from_polar(1.0, a as f64 * 0.9 + b as f64)
            })
        };
        let z = [rot(&p[0]), rot(&p[1])];
        assert!(magnitude_error_db(&z, &p, &w)
            .unwrap()
            .iter()
            .all(|v| *v == DB_FLOOR));
        let zero = [DMatrix::zeros(4, 2), DMatrix::zeros(4, 2)];
        for v in magnitude_error_db(&zero, &p, &w).unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_target_power_is_an_error() {
        let zero: Binaural = [DMatrix::zeros(3, 2), DMatrix::zeros(3, 2)];
        assert!(matches!(
            nmse_db(&zero, &zero, &[0.5, 0.25, 0.25]),
            Err(Error::DegeneratePower(_))
        ));
    }
}
