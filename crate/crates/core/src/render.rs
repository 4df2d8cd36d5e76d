//! Time-domain rendering: crossover merging, FIR conversion, overlap-add
//! convolution and microphone-signal simulation.
//!
//! Spectra in this crate follow the `e^{-i 2 pi f t}` convention. A
//! coefficient `c` applied as `z = c^H x` therefore acts on real signals
//! through the ordinary DSP-convention response `c` itself, and a steering
//! entry `v` acts through `conj(v)`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde_json::{Map, Value};

use crate::array::{steering_vector, truncation_order, ArrayGeometry, Direction};
use crate::bank::{FilterBank, BANK_MAGIC, BANK_VERSION};
use crate::container::{all_finite, Reader, Writer};
use crate::error::{Error, Result};
use crate::sphmath::Complex;

/// Shortest FIR accepted by [`filters_to_fir`].
pub const MIN_TAPS: usize = 128;
pub const DEFAULT_TAPS: usize = 1024;
/// Kind tag of an FIR payload inside a `BSMF` container.
pub const FIR_KIND_TAG: u32 = 3;

/// Crossfade weight of the high bank: 0 below `fc / sqrt 2`, 1 above
/// `fc * sqrt 2`, raised cosine in log frequency in between.
pub fn crossfade_weight(f: f64, crossover_hz: f64) -> f64 {
    let lo = crossover_hz / std::f64::consts::SQRT_2;
    if f <= lo {
        0.0
    } else if f >= 2.0 * lo {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * (f / lo).log2()).cos()
    }
}

/// Joins a low-frequency bank and a high-frequency bank. A crossover below
/// the grid returns `high`, one above the grid returns `low`; otherwise the
/// per-bin coefficients are blended with [`crossfade_weight`].
pub fn crossover_merge(
    low: &FilterBank,
    high: &FilterBank,
    crossover_hz: f64,
) -> Result<FilterBank> {
    if low.frequencies_hz != high.frequencies_hz {
        return Err(Error::GridMismatch(
            "crossover banks use different frequency grids".into(),
        ));
    }
    if low.num_mics() != high.num_mics() {
        return Err(Error::dims(format!(
            "{} vs {} microphones",
            low.num_mics(),
            high.num_mics()
        )));
    }
    if !crossover_hz.is_finite() {
        return Err(Error::domain("crossover must be finite"));
    }
    let freqs = &high.frequencies_hz;
    let (f_lo, f_hi) = (freqs[0], freqs[freqs.len() - 1]);
    let mut out = high.clone();
    if crossover_hz < f_lo {
        out.crossover_hz = f_lo;
    } else if crossover_hz > f_hi {
        out.coeffs = low.coeffs.clone();
        out.crossover_hz = f_hi;
    } else {
        for (i, f) in freqs.iter().enumerate() {
            let w = crossfade_weight(*f, crossover_hz);
            out.coeffs[i] = low.coeffs[i].map(|c| c * (1.0 - w)) + high.coeffs[i].map(|c| c * w);
        }
        out.crossover_hz = crossover_hz;
    }
    out.metadata
        .insert("crossover_low".into(), Value::from(low.kind.name()));
    out.metadata
        .insert("crossover_hz".into(), Value::from(crossover_hz));
    out.metadata.insert(
        "crossover_shape".into(),
        Value::from("raised cosine, one octave, log frequency"),
    );
    out.validate()?;
    Ok(out)
}

/// Real FIR filters, `filters[m][ear]` of `taps` samples each.
#[derive(Debug, Clone, PartialEq)]
pub struct FirSet {
    pub sample_rate_hz: f64,
    pub taps: usize,
    pub filters: Vec<[Vec<f64>; 2]>,
    pub metadata: Map<String, Value>,
}

impl FirSet {
    pub fn num_mics(&self) -> usize {
        self.filters.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::dims("FIR set has no channels"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidData(format!(
                "sample rate {}",
                self.sample_rate_hz
            )));
        }
        for (m, pair) in self.filters.iter().enumerate() {
            for h in pair {
                if h.len() != self.taps {
                    return Err(Error::dims(format!(
                        "channel {m} has {} taps, expected {}",
                        h.len(),
                        self.taps
                    )));
                }
                if !h.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidData(format!(
                        "channel {m} has non-finite taps"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `BSMF`-style container with kind tag 3:
    /// `"BSMF" | u32 version | u32 kind=3 | u32 taps | u32 M | f64 fs |
    /// f64 taps ordered microphone, ear, sample | u32 length | JSON`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(&BANK_MAGIC);
        w.u32(BANK_VERSION);
        w.u32(FIR_KIND_TAG);
        w.u32(self.taps as u32);
        w.u32(self.num_mics() as u32);
        w.f64(self.sample_rate_hz);
        for pair in &self.filters {
            for h in pair {
                w.f64s(h.iter().copied());
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
        let kind = r.u32("kind")?;
        if kind != FIR_KIND_TAG {
            return Err(Error::InvalidData(format!(
                "kind tag {kind} is not an FIR set"
            )));
        }
        let taps = r.u32("taps")? as usize;
        let m = r.u32("microphone count")? as usize;
        let sample_rate_hz = r.f64("sample rate")?;
        let flat = r.f64s(taps * m * 2, "filters")?;
        let metadata = r.json()?;
        r.finish()?;
        let filters = flat
            .chunks_exact(2 * taps.max(1))
            .map(|c| [c[..taps].to_vec(), c[taps..].to_vec()])
            .collect();
        let set = FirSet {
            sample_rate_hz,
            taps,
            filters,
            metadata,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn check_taps(taps: usize) -> Result<()> {
    if !taps.is_power_of_two() {
        return Err(Error::InvalidTaps(taps));
    }
    if taps < MIN_TAPS {
        return Err(Error::InsufficientTaps {
            taps,
            min: MIN_TAPS,
        });
    }
    Ok(())
}

/// Periodic Hann window, equal to 1 at `n = len / 2`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Locates a bank grid on a DFT grid `k * fs / n` and returns `(n, k0)`,
/// the DFT size and the index of the first bank frequency.
fn dft_layout(freqs: &[f64], fs: f64) -> Result<(usize, usize)> {
    if freqs.len() < 2 {
        return Err(Error::GridMismatch("need at least two bins".into()));
    }
    let df = freqs[1] - freqs[0];
    let n_real = fs / df;
    let n = n_real.round() as usize;
    let tol = 1e-6;
    if !(df > 0.0) || (n_real - n as f64).abs() > tol * n_real || n < 2 || !n.is_multiple_of(2) {
        return Err(Error::GridMismatch(format!(
            "spacing {df} Hz does not divide fs = {fs} Hz into an even DFT"
        )));
    }
    let k0_real = freqs[0] / df;
    let k0 = k0_real.round() as usize;
    if (k0_real - k0 as f64).abs() > tol {
        return Err(Error::GridMismatch(format!(
            "first bin {} Hz is off the DFT grid",
            freqs[0]
        )));
    }
    for (i, f) in freqs.iter().enumerate() {
        let expect = (k0 + i) as f64 * df;
        if (f - expect).abs() > tol * df.max(1.0) {
            return Err(Error::GridMismatch(format!(
                "bin {i} at {f} Hz, expected {expect} Hz"
            )));
        }
    }
    if k0 + freqs.len() - 1 > n / 2 {
        return Err(Error::GridMismatch(
            "grid extends past the Nyquist frequency".into(),
        ));
    }
    Ok((n, k0))
}

/// Real part with the magnitude kept, for the DC and Nyquist bins.
fn realify(c: Complex) -> Complex {
    let sign = if c.re < 0.0 { -1.0 } else { 1.0 };
    Complex::new(sign * c.norm(), 0.0)
}

/// Impulse response of a one-sided response given on bins
/// `k0..k0 + spectrum.len()` of an `n`-point DFT. Missing bins hold the
/// nearest edge value. The result is centered at `taps / 2`, truncated or
/// zero-padded to `taps`, and Hann windowed.
fn one_sided_to_fir(
    spectrum: &[Complex],
    k0: usize,
    n: usize,
    taps: usize,
    ifft: &Arc<dyn Fft<f64>>,
) -> Vec<f64> {
    let half = n / 2;
    let mut full = vec![Complex::new(0.0, 0.0); n];
    let last = spectrum.len() - 1;
    for k in 0..=half {
        let idx = k.saturating_sub(k0).min(last);
        full[k] = spectrum[idx];
    }
    full[0] = realify(full[0]);
    full[half] = realify(full[half]);
    for k in 1..half {
        full[n - k] = full[k].conj();
    }
    ifft.process(&mut full);
    let scale = 1.0 / n as f64;
    let center = taps / 2;
    let window = hann(taps);
    (0..taps)
        .map(|t| {
            let offset = t as isize - center as isize;
            if offset.unsigned_abs() >= half && offset != -(half as isize) {
                return 0.0;
            }
            let idx = offset.rem_euclid(n as isize) as usize;
            full[idx].re * scale * window[t]
        })
        .collect()
}

/// Converts a bank into real FIR filters of length `taps` at sample rate
/// `fs`. The bank grid must lie on a DFT grid of `fs`.
pub fn filters_to_fir(bank: &FilterBank, taps: usize, fs: f64) -> Result<FirSet> {
    check_taps(taps)?;
    let (n, k0) = dft_layout(&bank.frequencies_hz, fs)?;
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let filters = (0..bank.num_mics())
        .map(|m| {
            let ear = |e: usize| {
                let spec: Vec<Complex> = bank.coeffs.iter().map(|c| c[(m, e)]).collect();
                one_sided_to_fir(&spec, k0, n, taps, &ifft)
            };
            [ear(0), ear(1)]
        })
        .collect();
    let mut metadata = Map::new();
    metadata.insert("source_kind".into(), Value::from(bank.kind.name()));
    metadata.insert("dft_size".into(), Value::from(n));
    metadata.insert("window".into(), Value::from("hann"));
    metadata.insert("delay_samples".into(), Value::from(taps / 2));
    Ok(FirSet {
        sample_rate_hz: fs,
        taps,
        filters,
        metadata,
    })
}

/// Multichannel real audio, `samples[channel][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelAudio {
    pub sample_rate_hz: f64,
    pub samples: Vec<Vec<f64>>,
}

/// Sample encoding of written WAVE files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Pcm24,
    Float32,
}

impl MultichannelAudio {
    pub fn new(sample_rate_hz: f64, samples: Vec<Vec<f64>>) -> Result<Self> {
        let audio = MultichannelAudio {
            sample_rate_hz,
            samples,
        };
        audio.validate()?;
        Ok(audio)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::dims("audio has no channels"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidData(format!(
                "sample rate {}",
                self.sample_rate_hz
            )));
        }
        let n = self.samples[0].len();
        if self.samples.iter().any(|c| c.len() != n) {
            return Err(Error::dims("channels differ in length"));
        }
        if !self.samples.iter().all(|c| c.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidData("non-finite samples".into()));
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads PCM 8/16/24/32-bit integer or 32-bit float WAVE data, scaled
    /// to `[-1, 1]`.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        let interleaved: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()?,
            hound::SampleFormat::Int => {
                let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f64 * scale))
                    .collect::<std::result::Result<_, _>>()?
            }
        };
        let mut samples = vec![Vec::with_capacity(interleaved.len() / channels.max(1)); channels];
        for frame in interleaved.chunks_exact(channels) {
            for (c, v) in frame.iter().enumerate() {
                samples[c].push(*v);
            }
        }
        MultichannelAudio::new(f64::from(spec.sample_rate), samples)
    }

    /// Writes the audio; integer formats clip to `[-1, 1]`.
    pub fn write_wav(&self, path: impl AsRef<Path>, format: WavFormat) -> Result<()> {
        self.validate()?;
        let rate = self.sample_rate_hz.round();
        if (rate - self.sample_rate_hz).abs() > 1e-9 || rate > f64::from(u32::MAX) {
            return Err(Error::InvalidData(format!(
                "sample rate {} is not an integer",
                self.sample_rate_hz
            )));
        }
        let (bits, sample_format) = match format {
            WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
            WavFormat::Pcm24 => (24, hound::SampleFormat::Int),
            WavFormat::Float32 => (32, hound::SampleFormat::Float),
        };
        let spec = hound::WavSpec {
            channels: u16::try_from(self.num_channels())
                .map_err(|_| Error::dims("too many channels"))?,
            sample_rate: rate as u32,
            bits_per_sample: bits,
            sample_format,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        let full_scale = ((1i64 << (bits - 1)) - 1) as f64;
        for n in 0..self.len() {
            for c in &self.samples {
                match format {
                    WavFormat::Float32 => writer.write_sample(c[n] as f32)?,
                    _ => writer.write_sample((c[n].clamp(-1.0, 1.0) * full_scale).round() as i32)?,
                }
            }
        }
        writer.finalize()?;
        Ok(())
    }
}

/// FFT convolution engine: sums `inputs[m] * filters[m][o]` over `m` for
/// every output `o` by overlap-add. Output length is `N + taps - 1`.
fn overlap_add(
    inputs: &[Vec<f64>],
    filters: &[Vec<&[f64]>],
    outputs: usize,
    taps: usize,
) -> Vec<Vec<f64>> {
    let n = inputs[0].len();
    let out_len = n + taps - 1;
    let fft_len = (2 * taps).next_power_of_two();
    let block = fft_len - taps + 1;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);
    let spectra: Vec<Vec<Vec<Complex>>> = filters
        .iter()
        .map(|per_out| {
            per_out
                .iter()
                .map(|h| {
                    let mut buf: Vec<Complex> = h.iter().map(|v| Complex::new(*v, 0.0)).collect();
                    buf.resize(fft_len, Complex::new(0.0, 0.0));
                    fwd.process(&mut buf);
                    buf
                })
                .collect()
        })
        .collect();
    let mut out = vec![vec![0.0; out_len]; outputs];
    let scale = 1.0 / fft_len as f64;
    let mut start = 0;
    while start < n {
        let end = (start + block).min(n);
        let blocks: Vec<Vec<Complex>> = inputs
            .par_iter()
            .map(|x| {
                let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
                for (b, v) in buf.iter_mut().zip(&x[start..end]) {
                    *b = Complex::new(*v, 0.0);
                }
                fwd.process(&mut buf);
                buf
            })
            .collect();
        for (o, y) in out.iter_mut().enumerate() {
            let mut acc = vec![Complex::new(0.0, 0.0); fft_len];
            for (m, xb) in blocks.iter().enumerate() {
                for ((a, x), h) in acc.iter_mut().zip(xb).zip(&spectra[m][o]) {
                    *a += x * h;
                }
            }
            inv.process(&mut acc);
            let valid = (end - start + taps - 1).min(out_len - start);
            for (i, a) in acc.iter().take(valid).enumerate() {
                y[start + i] += a.re * scale;
            }
        }
        start = end;
    }
    out
}

/// Renders microphone signals to binaural stereo,
/// `out[e] = sum_m fir[m][e] * x_m`, of length `N + taps - 1`.
pub fn render_binaural(audio: &MultichannelAudio, fir: &FirSet) -> Result<MultichannelAudio> {
    audio.validate()?;
    fir.validate()?;
    if audio.num_channels() != fir.num_mics() {
        return Err(Error::ChannelMismatch {
            expected: fir.num_mics(),
            got: audio.num_channels(),
        });
    }
    if (audio.sample_rate_hz - fir.sample_rate_hz).abs() > 1e-9 {
        return Err(Error::InvalidData(format!(
            "audio at {} Hz, filters at {} Hz",
            audio.sample_rate_hz, fir.sample_rate_hz
        )));
    }
    let filters: Vec<Vec<&[f64]>> = fir
        .filters
        .iter()
        .map(|pair| vec![pair[0].as_slice(), pair[1].as_slice()])
        .collect();
    let samples = overlap_add(&audio.samples, &filters, 2, fir.taps);
    MultichannelAudio::new(audio.sample_rate_hz, samples)
}

/// FIR filters from a source in direction `direction` to every microphone,
/// built from the steering responses on the `taps`-point DFT grid.
pub fn steering_firs(
    geometry: &ArrayGeometry,
    direction: &Direction,
    fs: f64,
    taps: usize,
) -> Result<Vec<Vec<f64>>> {
    check_taps(taps)?;
    if !(fs > 0.0) {
        return Err(Error::domain("sample rate must be positive"));
    }
    let half = taps / 2;
    let responses: Vec<Vec<Complex>> = (0..=half)
        .into_par_iter()
        .map(|k| {
            let f = k as f64 * fs / taps as f64;
            let order = truncation_order(geometry.ka(f));
            steering_vector(geometry, f, direction, order)
        })
        .collect();
    let ifft = FftPlanner::new().plan_fft_inverse(taps);
    let firs = (0..geometry.num_mics())
        .map(|m| {
            let spec: Vec<Complex> = responses.iter().map(|v| v[m].conj()).collect();
            one_sided_to_fir(&spec, 0, taps, taps, &ifft)
        })
        .collect::<Vec<_>>();
    if !firs.iter().all(|h| {
        all_finite(
            h.iter()
                .map(|v| Complex::new(*v, 0.0))
                .collect::<Vec<_>>()
                .iter(),
        )
    }) {
        return Err(Error::InvalidData("steering FIR is not finite".into()));
    }
    Ok(firs)
}

/// Microphone signals for a far-field source signal arriving from
/// `direction`, of length `N + taps - 1` (the filters add `taps / 2`
/// samples of delay).
pub fn simulate_mic_signals(
    geometry: &ArrayGeometry,
    source: &[f64],
    direction: &Direction,
    fs: f64,
    taps: usize,
) -> Result<MultichannelAudio> {
    if source.is_empty() {
        return Err(Error::dims("empty source signal"));
    }
    let firs = steering_firs(geometry, direction, fs, taps)?;
    let filters: Vec<Vec<&[f64]>> = vec![firs.iter().map(|h| h.as_slice()).collect()];
    let samples = overlap_add(&[source.to_vec()], &filters, firs.len(), taps);
    MultichannelAudio::new(fs, samples)
}

/// Evaluates an FIR at frequency `f`: `sum_t h[t] e^{-i 2 pi f t / fs}`.
pub fn fir_response(h: &[f64], f: f64, fs: f64) -> Complex {
    h.iter()
        .enumerate()
        .map(|(t, v)| Complex::from_polar(*v, -2.0 * std::f64::consts::PI * f * t as f64 / fs))
        .sum()
}

/// Flat or otherwise synthetic banks for tests and smoke runs.
pub fn constant_bank(freqs: Vec<f64>, value: DMatrix<Complex>) -> Result<FilterBank> {
    let f0 = freqs[0];
    let coeffs = vec![value; freqs.len()];
    FilterBank::new(freqs, coeffs, crate::bank::DesignKind::Mse, f0, Map::new())
}
