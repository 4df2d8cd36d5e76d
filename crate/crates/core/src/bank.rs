//! Per-bin BSM filter coefficients and the `BSMF` container.
//!
//! Container layout (little-endian):
//!
//! ```text
//! "BSMF" | u32 version=1 | u32 kind | u32 F | u32 M | f64 crossover_hz
//! f64 freq[F]
//! coefficients (re, im) f64 pairs, ordered bin, microphone, ear (F*M*2)
//! u32 length | UTF-8 JSON metadata
//! ```
//!
//! `kind` is 0 = mse, 1 = magls, 2 = imagls, 3 = fir (see
//! [`crate::render::FirSet`] for the FIR payload).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::container::{all_finite, Reader, Writer};
use crate::error::{Error, Result};
use crate::sphmath::Complex;

pub const BANK_MAGIC: [u8; 4] = *b"BSMF";
pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Mse,
    Magls,
    Imagls,
}

impl DesignKind {
    pub fn tag(self) -> u32 {
        match self {
            DesignKind::Mse => 0,
            DesignKind::Magls => 1,
            DesignKind::Imagls => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(DesignKind::Mse),
            1 => Ok(DesignKind::Magls),
            2 => Ok(DesignKind::Imagls),
            other => Err(Error::InvalidData(format!(
                "bank kind tag {other} is not a filter design"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Mse => "mse",
            DesignKind::Magls => "magls",
            DesignKind::Imagls => "imagls",
        }
    }
}

/// BSM coefficients: one `M x 2` matrix (left column, right column) per
/// frequency bin. The ear signal is `z = c^H x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub frequencies_hz: Vec<f64>,
    pub coeffs: Vec<DMatrix<Complex>>,
    pub kind: DesignKind,
    pub crossover_hz: f64,
    pub metadata: Map<String, Value>,
}

impl FilterBank {
    pub fn new(
        frequencies_hz: Vec<f64>,
        coeffs: Vec<DMatrix<Complex>>,
        kind: DesignKind,
        crossover_hz: f64,
        metadata: Map<String, Value>,
    ) -> Result<Self> {
        let bank = FilterBank {
            frequencies_hz,
            coeffs,
            kind,
            crossover_hz,
            metadata,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.frequencies_hz.len();
        if f == 0 || self.coeffs.len() != f {
            return Err(Error::dims(format!(
                "{} frequencies but {} coefficient bins",
                f,
                self.coeffs.len()
            )));
        }
        let m = self.coeffs[0].nrows();
        if m == 0 {
            return Err(Error::dims("bank has no microphones"));
        }
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.nrows() != m || c.ncols() != 2 {
                return Err(Error::dims(format!(
                    "bin {i} is {}x{}, expected {m}x2",
                    c.nrows(),
                    c.ncols()
                )));
            }
            if !all_finite(c.iter()) {
                return Err(Error::InvalidData(format!(
                    "bin {i} has non-finite coefficients"
                )));
            }
        }
        if let Some(i) = self.frequencies_hz.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneFrequencies(i + 1));
        }
        let (lo, hi) = (self.frequencies_hz[0], self.frequencies_hz[f - 1]);
        if !(self.crossover_hz >= lo && self.crossover_hz <= hi) {
            return Err(Error::InvalidData(format!(
                "crossover {} Hz outside [{lo}, {hi}]",
                self.crossover_hz
            )));
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.coeffs.len()
    }

    pub fn scaled(&self, s: Complex) -> FilterBank {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            *c *= s;
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(&BANK_MAGIC);
        w.u32(BANK_VERSION);
        w.u32(self.kind.tag());
        w.u32(self.num_bins() as u32);
        w.u32(self.num_mics() as u32);
        w.f64(self.crossover_hz);
        w.f64s(self.frequencies_hz.iter().copied());
        for c in &self.coeffs {
            for m in 0..c.nrows() {
                w.complexes([&c[(m, 0)], &c[(m, 1)]]);
            }
        }
        w.json(&self.metadata)?;
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(BANK_MAGIC)?;
        let version = r.u32("version")?;
        if version != BANK_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind = DesignKind::from_tag(r.u32("kind")?)?;
        let f = r.u32("bin count")? as usize;
        let m = r.u32("microphone count")? as usize;
        if f == 0 || m == 0 {
            return Err(Error::dims(format!("empty bank: F = {f}, M = {m}")));
        }
        let crossover_hz = r.f64("crossover")?;
        let freqs = r.f64s(f, "frequencies")?;
        let flat = r.complexes(f * m * 2, "coefficients")?;
        let metadata = r.json()?;
        r.finish()?;
        let coeffs = flat
            .chunks_exact(m * 2)
            .map(|bin| DMatrix::from_row_slice(m, 2, bin))
            .collect();
        FilterBank::new(freqs, coeffs, kind, crossover_hz, metadata)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
