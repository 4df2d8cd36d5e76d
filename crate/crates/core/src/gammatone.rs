//! Zero-phase gammatone power weighting on the ERB scale, used to
//! band-integrate ear powers for interaural level differences.

use serde::{Deserialize, Serialize};

use crate::array::Direction;
use crate::error::{Error, Result};

/// Glasberg & Moore equivalent rectangular bandwidth in Hz.
pub fn erb_bandwidth(f0_hz: f64) -> Result<f64> {
    if !(f0_hz.is_finite() && f0_hz > 0.0) {
        return Err(Error::domain(format!(
            "center frequency {f0_hz} must be positive"
        )));
    }
    Ok(24.7 * (4.37 * f0_hz / 1000.0 + 1.0))
}

/// ERB-rate (ERB number) of a frequency.
pub fn erb_rate(f_hz: f64) -> f64 {
    21.4 * (4.37 * f_hz / 1000.0 + 1.0).log10()
}

pub fn erb_rate_inverse(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

/// Peak-normalized squared magnitude of a 4th-order gammatone filter,
/// `[1 + ((f - f0) / b)^2]^-4` with `b = 1.019 ERB(f0)`.
pub fn gammatone_weight(f0_hz: f64, f_hz: f64) -> Result<f64> {
    let b = 1.019 * erb_bandwidth(f0_hz)?;
    if !(f_hz.is_finite() && f_hz >= 0.0) {
        return Err(Error::domain(format!(
            "frequency {f_hz} must be non-negative"
        )));
    }
    Ok(weight_with_bandwidth(f0_hz, b, f_hz))
}

pub(crate) fn weight_with_bandwidth(f0: f64, b: f64, f: f64) -> f64 {
    let u = (f - f0) / b;
    (1.0 + u * u).powi(-4)
}

/// Centers at integer multiples of `step_erb` on the ERB-rate scale that
/// fall inside `[f_lo, f_hi]`. When no multiple falls inside, the single
/// ERB-rate midpoint of the band is returned.
pub fn erb_spaced_centers(f_lo: f64, f_hi: f64, step_erb: f64) -> Result<Vec<f64>> {
    if !(f_lo > 0.0 && f_hi > f_lo && f_hi.is_finite()) {
        return Err(Error::domain(format!("invalid band [{f_lo}, {f_hi}]")));
    }
    if !(step_erb > 0.0 && step_erb.is_finite()) {
        return Err(Error::domain("ERB step must be positive"));
    }
    let (e_lo, e_hi) = (erb_rate(f_lo), erb_rate(f_hi));
    let first = (e_lo / step_erb).ceil() as i64;
    let last = (e_hi / step_erb).floor() as i64;
    let centers: Vec<f64> = (first..=last)
        .map(|i| erb_rate_inverse(i as f64 * step_erb).clamp(f_lo, f_hi))
        .collect();
    if centers.is_empty() {
        return Ok(vec![erb_rate_inverse(0.5 * (e_lo + e_hi)).clamp(f_lo, f_hi)]);
    }
    Ok(centers)
}

/// Band and directions for the gammatone-weighted ILD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IldSpec {
    pub centers_hz: Vec<f64>,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub horizontal_directions: Vec<Direction>,
}

impl IldSpec {
    pub fn new(
        centers_hz: Vec<f64>,
        band_lo_hz: f64,
        band_hi_hz: f64,
        horizontal_directions: Vec<Direction>,
    ) -> Result<Self> {
        if !(band_lo_hz < band_hi_hz) {
            return Err(Error::domain("ILD band must satisfy f1 < f2"));
        }
        if centers_hz.is_empty() {
            return Err(Error::domain("ILD spec needs at least one center"));
        }
        if centers_hz.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("ILD centers must be strictly increasing"));
        }
        if centers_hz
            .iter()
            .any(|c| *c < band_lo_hz || *c > band_hi_hz)
        {
            return Err(Error::domain("ILD centers must lie inside the band"));
        }
        if horizontal_directions.is_empty() {
            return Err(Error::domain("ILD spec needs at least one direction"));
        }
        Ok(IldSpec {
            centers_hz,
            band_lo_hz,
            band_hi_hz,
            horizontal_directions,
        })
    }

    /// ERB-spaced centers over `[lo, hi]` with the given directions.
    pub fn erb_spaced(
        lo: f64,
        hi: f64,
        step_erb: f64,
        horizontal_directions: Vec<Direction>,
    ) -> Result<Self> {
        Self::new(
            erb_spaced_centers(lo, hi, step_erb)?,
            lo,
            hi,
            horizontal_directions,
        )
    }
}

/// Gammatone weights folded with trapezoid quadrature weights over a
/// frequency grid restricted to the ILD band: `out[c][f]`.
///
/// Bins outside `[band_lo, band_hi]` get zero weight; the trapezoid rule is
/// applied to the in-band bins in grid order.
pub fn band_weights(spec: &IldSpec, freqs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let inband: Vec<usize> = (0..freqs.len())
        .filter(|&i| freqs[i] >= spec.band_lo_hz && freqs[i] <= spec.band_hi_hz)
        .collect();
    let mut trap = vec![0.0; freqs.len()];
    for w in inband.windows(2) {
        let h = freqs[w[1]] - freqs[w[0]];
        trap[w[0]] += 0.5 * h;
        trap[w[1]] += 0.5 * h;
    }
    if inband.len() == 1 {
        trap[inband[0]] = 1.0;
    }
    spec.centers_hz
        .iter()
        .map(|&c| {
            let b = 1.019 * erb_bandwidth(c)?;
            Ok(freqs
                .iter()
                .zip(&trap)
                .map(|(&f, &t)| {
                    if t > 0.0 {
                        t * weight_with_bandwidth(c, b, f)
                    } else {
                        0.0
                    }
                })
                .collect())
        })
        .collect()
}
