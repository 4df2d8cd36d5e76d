//! ILD-informed magnitude least squares.
//!
//! All bins inside the optimization band are solved jointly because the
//! gammatone-weighted ILD integrates ear power across frequency. The loss is
//!
//! ```text
//! total = 1/2 (mag_l + mag_r) + lambda * ild
//! mag_e = mean_f [ sum_k w_k (|p_e| - |z_e|)^2 / sum_k w_k |p_e|^2 ]
//! ild   = mean_{l, f0} | ILD_target(l, f0) - ILD_rendered(l, f0) |
//! ```
//!
//! where every `|.|` is smoothed as `sqrt(|x|^2 + eps)` and the ILD is
//! `10 log10` of the ratio of gammatone-weighted band powers (trapezoid sums
//! over the in-band bins, `eps` added to each power).
//!
//! The parameters are the real and imaginary parts of every in-band
//! coefficient; gradients are assembled from the Wirtinger derivative
//! `dL/dRe c + i dL/dIm c = 2 dL/dc*`.

pub mod lbfgs;

use std::f64::consts::LN_10;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::bank::{DesignKind, FilterBank};
use crate::design::{
    apply_covariance_constraint, check_bank, magls_filters, mse_filters, DesignProblem,
    MaglsSettings,
};
use crate::error::{Error, Result};
use crate::gammatone::{band_weights, IldSpec};
use crate::hrtf::HrtfSet;
use crate::sphmath::Complex;

use self::lbfgs::{minimize, LbfgsSettings, Objective, Termination};

const DB_PER_NEPER_POWER: f64 = 10.0 / LN_10;

/// Starting point of the quasi-Newton run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// MagLS variable exchange followed by the covariance constraint.
    Magls,
    Mse,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImaglsConfig {
    pub lambda: f64,
    pub ild_spec: IldSpec,
    pub smoothing_eps: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub lbfgs_memory: usize,
    pub init: InitKind,
    /// Applied to the optimized bank before it is returned.
    pub covariance_constraint: bool,
    /// Settings for the MagLS warm start.
    pub magls: MaglsSettings,
}

impl ImaglsConfig {
    pub fn new(lambda: f64, ild_spec: IldSpec) -> Self {
        ImaglsConfig {
            lambda,
            ild_spec,
            smoothing_eps: 1e-12,
            max_iter: 500,
            grad_tol: 1e-6,
            lbfgs_memory: 10,
            init: InitKind::Magls,
            covariance_constraint: false,
            magls: MaglsSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain("lambda must be finite and non-negative"));
        }
        if !(self.smoothing_eps > 0.0) {
            return Err(Error::domain("smoothing eps must be positive"));
        }
        if !(self.grad_tol > 0.0) || self.lbfgs_memory == 0 {
            return Err(Error::domain("grad_tol and lbfgs_memory must be positive"));
        }
        Ok(())
    }
}

/// `sqrt(|x|^2 + eps)`.
pub fn smooth_abs(x: Complex, eps: f64) -> f64 {
    (x.norm_sqr() + eps).sqrt()
}

/// Components of the loss. `total = (mag_left + mag_right) / 2 + lambda * ild_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mag_left: f64,
    pub mag_right: f64,
    pub ild_term: f64,
}

/// ILD in dB for every (direction, center): `out[(l, c)]`.
///
/// `left`/`right` are `L x F` spectra on `freqs`. The band integrals are
/// trapezoid sums over the bins inside `[band_lo, band_hi]` with the
/// gammatone weight of each center; `eps` is added to every band power.
pub fn ild_curve(
    left: &DMatrix<Complex>,
    right: &DMatrix<Complex>,
    spec: &IldSpec,
    freqs: &[f64],
    eps: f64,
) -> Result<DMatrix<f64>> {
    if left.shape() != right.shape() || left.ncols() != freqs.len() {
        return Err(Error::dims(format!(
            "ILD spectra {:?} / {:?} for {} frequencies",
            left.shape(),
            right.shape(),
            freqs.len()
        )));
    }
    let g = band_weights(spec, freqs)?;
    let mut out = DMatrix::zeros(left.nrows(), g.len());
    for l in 0..left.nrows() {
        for (c, gc) in g.iter().enumerate() {
            let mut pl = 0.0;
            let mut pr = 0.0;
            for (f, &wf) in gc.iter().enumerate() {
                if wf > 0.0 {
                    pl += wf * left[(l, f)].norm_sqr();
                    pr += wf * right[(l, f)].norm_sqr();
                }
            }
            if pr == 0.0 {
                return Err(Error::DegeneratePower(format!(
                    "zero right-ear band power at direction {l}, center {} Hz",
                    spec.centers_hz[c]
                )));
            }
            out[(l, c)] = DB_PER_NEPER_POWER * ((pl + eps) / (pr + eps)).ln();
        }
    }
    Ok(out)
}

/// Precomputed data for evaluating the loss on the in-band bins.
pub struct ImaglsObjective<'a> {
    problem: &'a DesignProblem,
    lambda: f64,
    eps: f64,
    /// Problem bin index of every optimized bin.
    bins: Vec<usize>,
    /// Grid indices of the ILD directions.
    horizontal: Vec<usize>,
    /// Grid indices with non-zero quadrature weight.
    weighted: Vec<usize>,
    /// `gamma[c][j]`: gammatone times trapezoid weight of optimized bin `j`.
    gamma: Vec<Vec<f64>>,
    /// Smoothed target magnitudes `[bin][ear][k]` (weighted directions only).
    target_mag: Vec<[Vec<f64>; 2]>,
    /// Weighted target power `[bin][ear]`.
    target_power: Vec<[f64; 2]>,
    /// Target ILD `[l][c]`.
    target_ild: DMatrix<f64>,
    num_mics: usize,
}

/// Grid index of each ILD direction; the directions must be grid points.
pub fn horizontal_indices(hrtf: &HrtfSet, spec: &IldSpec) -> Result<Vec<usize>> {
    spec.horizontal_directions
        .iter()
        .map(|d| {
            let i = hrtf.nearest_direction(d);
            let dist = hrtf.grid.directions()[i].great_circle(d);
            if dist > 1e-9 {
                return Err(Error::InvalidData(format!(
                    "ILD direction ({:.4}, {:.4}) rad is not on the HRTF grid",
                    d.theta, d.phi
                )));
            }
            Ok(i)
        })
        .collect()
}

/// Problem bins with `band_lo <= f < band_hi`.
pub fn band_bins(freqs: &[f64], spec: &IldSpec) -> Vec<usize> {
    (0..freqs.len())
        .filter(|&i| freqs[i] >= spec.band_lo_hz && freqs[i] < spec.band_hi_hz)
        .collect()
}

impl<'a> ImaglsObjective<'a> {
    pub fn new(problem: &'a DesignProblem, config: &ImaglsConfig) -> Result<Self> {
        config.validate()?;
        let spec = &config.ild_spec;
        let eps = config.smoothing_eps;
        let bins = band_bins(problem.frequencies(), spec);
        if bins.is_empty() {
            return Err(Error::domain("no design bins inside the optimization band"));
        }
        let horizontal = horizontal_indices(&problem.hrtf, spec)?;
        let w = problem.weights();
        let weighted: Vec<usize> = (0..w.len()).filter(|&k| w[k] > 0.0).collect();
        let freqs: Vec<f64> = bins.iter().map(|&b| problem.frequencies()[b]).collect();
        let gamma = band_weights(spec, &freqs)?;

        let mut target_mag = Vec::with_capacity(bins.len());
        let mut target_power = Vec::with_capacity(bins.len());
        for &b in &bins {
            let mut mags: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            let mut pow = [0.0; 2];
            for e in 0..2 {
                let h = problem.hrtf.ear(e);
                mags[e] = weighted
                    .iter()
                    .map(|&k| smooth_abs(h[(k, b)], eps))
                    .collect();
                pow[e] = weighted.iter().map(|&k| w[k] * h[(k, b)].norm_sqr()).sum();
                if pow[e] == 0.0 {
                    return Err(Error::DegeneratePower(format!(
                        "zero target power at {} Hz, ear {e}",
                        problem.frequencies()[b]
                    )));
                }
            }
            target_mag.push(mags);
            target_power.push(pow);
        }
        let pick = |e: usize| {
            DMatrix::from_fn(horizontal.len(), bins.len(), |l, j| {
                problem.hrtf.ear(e)[(horizontal[l], bins[j])]
            })
        };
        let target_ild = ild_curve(&pick(0), &pick(1), spec, &freqs, eps)?;
        Ok(ImaglsObjective {
            problem,
            lambda: config.lambda,
            eps,
            bins,
            horizontal,
            weighted,
            gamma,
            target_mag,
            target_power,
            target_ild,
            num_mics: problem.num_mics(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.bins.len() * 2 * self.num_mics * 2
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    fn coeff(&self, x: &[f64], j: usize, e: usize, m: usize) -> Complex {
        let i = ((j * 2 + e) * self.num_mics + m) * 2;
        Complex::new(x[i], x[i + 1])
    }

    /// Packs the in-band coefficients of a bank.
    pub fn pack(&self, bank: &FilterBank) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.num_params());
        for &b in &self.bins {
            for e in 0..2 {
                for m in 0..self.num_mics {
                    let c = bank.coeffs[b][(m, e)];
                    x.push(c.re);
                    x.push(c.im);
                }
            }
        }
        x
    }

    /// Writes packed parameters back into a copy of `bank`.
    pub fn unpack(&self, x: &[f64], bank: &FilterBank) -> FilterBank {
        let mut out = bank.clone();
        for (j, &b) in self.bins.iter().enumerate() {
            for e in 0..2 {
                for m in 0..self.num_mics {
                    out.coeffs[b][(m, e)] = self.coeff(x, j, e, m);
                }
            }
        }
        out
    }

    /// Loss breakdown and, when `grad` is given, its gradient.
    pub fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> LossBreakdown {
        let m = self.num_mics;
        let nb = self.bins.len();
        let nl = self.horizontal.len();
        let w = self.problem.weights();
        let eps = self.eps;
        let want_grad = grad.is_some();

        struct BinPass {
            mag: [f64; 2],
            /// Rendered horizontal signals `[ear][l]`.
            zh: [Vec<Complex>; 2],
            /// Magnitude-term gradient `[ear][m]`.
            grad: [Vec<Complex>; 2],
        }

        // Pass 1: per-bin magnitude term and horizontal renderings.
        let passes: Vec<BinPass> = (0..nb)
            .into_par_iter()
            .map(|j| {
                let v = &self.problem.steering[self.bins[j]];
                let mut mag = [0.0; 2];
                let mut zh: [Vec<Complex>; 2] = [Vec::new(), Vec::new()];
                let mut g: [Vec<Complex>; 2] = [
                    vec![Complex::new(0.0, 0.0); m],
                    vec![Complex::new(0.0, 0.0); m],
                ];
                for e in 0..2 {
                    let c: Vec<Complex> = (0..m).map(|mi| self.coeff(x, j, e, mi).conj()).collect();
                    let scale = 1.0 / (nb as f64 * self.target_power[j][e]);
                    let mut acc = 0.0;
                    for (idx, &k) in self.weighted.iter().enumerate() {
                        let col = v.column(k);
                        let z: Complex = c.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                        let sz = smooth_abs(z, eps);
                        let d = self.target_mag[j][e][idx] - sz;
                        acc += w[k] * d * d;
                        if want_grad {
                            // d total / d|z|^2 for this direction
                            let gp = 0.5 * scale * w[k] * (sz - self.target_mag[j][e][idx]) / sz;
                            let f = z.conj() * (2.0 * gp);
                            for (gm, vm) in g[e].iter_mut().zip(col.iter()) {
                                *gm += f * vm;
                            }
                        }
                    }
                    mag[e] = acc * scale;
                    zh[e] = self
                        .horizontal
                        .iter()
                        .map(|&k| c.iter().zip(v.column(k).iter()).map(|(a, b)| a * b).sum())
                        .collect();
                }
                BinPass { mag, zh, grad: g }
            })
            .collect();

        let mag_left: f64 = passes.iter().map(|p| p.mag[0]).sum();
        let mag_right: f64 = passes.iter().map(|p| p.mag[1]).sum();

        // Pass 2: band powers and ILD term.
        let nc = self.gamma.len();
        let norm = 1.0 / (nl * nc) as f64;
        let mut ild = 0.0;
        // d total / d|zh_e(l, j)|^2
        let mut dpow = [DMatrix::<f64>::zeros(nl, nb), DMatrix::<f64>::zeros(nl, nb)];
        for l in 0..nl {
            for c in 0..nc {
                let gc = &self.gamma[c];
                let mut p = [eps, eps];
                for (j, &gw) in gc.iter().enumerate() {
                    if gw > 0.0 {
                        p[0] += gw * passes[j].zh[0][l].norm_sqr();
                        p[1] += gw * passes[j].zh[1][l].norm_sqr();
                    }
                }
                let est = DB_PER_NEPER_POWER * (p[0] / p[1]).ln();
                let d = self.target_ild[(l, c)] - est;
                let err = (d * d + eps).sqrt();
                ild += err;
                if want_grad && self.lambda != 0.0 {
                    // d err / d est = -d / err
                    let common = self.lambda * norm * (-d / err) * DB_PER_NEPER_POWER;
                    let a0 = common / p[0];
                    let a1 = -common / p[1];
                    for (j, &gw) in gc.iter().enumerate() {
                        if gw > 0.0 {
                            dpow[0][(l, j)] += a0 * gw;
                            dpow[1][(l, j)] += a1 * gw;
                        }
                    }
                }
            }
        }
        let ild_term = ild * norm;

        if let Some(grad) = grad {
            let chunk = 2 * m * 2;
            grad.par_chunks_mut(chunk).enumerate().for_each(|(j, out)| {
                let v = &self.problem.steering[self.bins[j]];
                for e in 0..2 {
                    let mut g = passes[j].grad[e].clone();
                    for (l, &k) in self.horizontal.iter().enumerate() {
                        let gp = dpow[e][(l, j)];
                        if gp != 0.0 {
                            let f = passes[j].zh[e][l].conj() * (2.0 * gp);
                            for (gm, vm) in g.iter_mut().zip(v.column(k).iter()) {
                                *gm += f * vm;
                            }
                        }
                    }
                    for (mi, gm) in g.iter().enumerate() {
                        out[(e * m + mi) * 2] = gm.re;
                        out[(e * m + mi) * 2 + 1] = gm.im;
                    }
                }
            });
        }

        LossBreakdown {
            total: 0.5 * (mag_left + mag_right) + self.lambda * ild_term,
            mag_left,
            mag_right,
            ild_term,
        }
    }
}

impl Objective for ImaglsObjective<'_> {
    type Detail = LossBreakdown;

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> (f64, LossBreakdown) {
        let b = self.evaluate(x, Some(grad));
        (b.total, b)
    }
}

/// Loss of a full bank (only the in-band bins contribute).
pub fn imagls_loss(
    bank: &FilterBank,
    problem: &DesignProblem,
    config: &ImaglsConfig,
) -> Result<LossBreakdown> {
    check_bank(bank, problem)?;
    let obj = ImaglsObjective::new(problem, config)?;
    Ok(obj.evaluate(&obj.pack(bank), None))
}

/// Gradient with respect to every coefficient of `bank`, as complex
/// numbers `dL/dRe c + i dL/dIm c`; zero outside the optimization band.
pub fn imagls_gradient(
    bank: &FilterBank,
    problem: &DesignProblem,
    config: &ImaglsConfig,
) -> Result<Vec<DMatrix<Complex>>> {
    check_bank(bank, problem)?;
    let obj = ImaglsObjective::new(problem, config)?;
    let mut g = vec![0.0; obj.num_params()];
    obj.evaluate(&obj.pack(bank), Some(&mut g));
    let m = problem.num_mics();
    let mut out = vec![DMatrix::zeros(m, 2); problem.num_bins()];
    for (j, &b) in obj.bins().iter().enumerate() {
        for e in 0..2 {
            for mi in 0..m {
                let i = ((j * 2 + e) * m + mi) * 2;
                out[b][(mi, e)] = Complex::new(g[i], g[i + 1]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub total: f64,
    pub mag_l: f64,
    pub mag_r: f64,
    pub ild: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct ImaglsOutcome {
    pub bank: FilterBank,
    pub initial: LossBreakdown,
    pub last: LossBreakdown,
    pub history: Vec<HistoryRow>,
    pub termination: Termination,
    /// Set when the run ended on a line-search failure.
    pub warning: bool,
}

impl ImaglsOutcome {
    /// Iteration history as CSV: `iter,total,mag_l,mag_r,ild,grad_norm,step`.
    pub fn write_history_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iter,total,mag_l,mag_r,ild,grad_norm,step")?;
        for r in &self.history {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter, r.total, r.mag_l, r.mag_r, r.ild, r.grad_norm, r.step
            )?;
        }
        Ok(())
    }
}

/// Builds the warm start selected by `config.init`.
pub fn initial_bank(problem: &DesignProblem, config: &ImaglsConfig) -> Result<FilterBank> {
    match config.init {
        InitKind::Magls => {
            let magls = magls_filters(problem, &config.magls)?.bank;
            apply_covariance_constraint(&magls, problem)
        }
        InitKind::Mse => mse_filters(problem),
        InitKind::Zeros => {
            let mut b = mse_filters(problem)?;
            for c in &mut b.coeffs {
                c.fill(Complex::new(0.0, 0.0));
            }
            Ok(b)
        }
    }
}

pub fn optimize_imagls(problem: &DesignProblem, config: &ImaglsConfig) -> Result<ImaglsOutcome> {
    let init = initial_bank(problem, config)?;
    optimize_imagls_from(problem, config, &init)
}

/// Quasi-Newton minimization of the joint loss starting from `init`. Bins
/// outside the band keep the coefficients of `init`.
pub fn optimize_imagls_from(
    problem: &DesignProblem,
    config: &ImaglsConfig,
    init: &FilterBank,
) -> Result<ImaglsOutcome> {
    check_bank(init, problem)?;
    let mut obj = ImaglsObjective::new(problem, config)?;
    let settings = LbfgsSettings {
        memory: config.lbfgs_memory,
        max_iter: config.max_iter,
        grad_tol: config.grad_tol,
        ..LbfgsSettings::default()
    };
    let x0 = obj.pack(init);
    let report = minimize(&mut obj, x0, &settings);
    let history: Vec<HistoryRow> = report
        .history
        .iter()
        .map(|r| HistoryRow {
            iter: r.iter,
            total: r.value,
            mag_l: r.detail.mag_left,
            mag_r: r.detail.mag_right,
            ild: r.detail.ild_term,
            grad_norm: r.grad_norm,
            step: r.step,
        })
        .collect();
    let initial = report.history[0].detail;
    let last = report
        .history
        .last()
        .expect("history holds the start")
        .detail;
    let mut bank = obj.unpack(&report.x, init);
    bank.kind = DesignKind::Imagls;
    bank.crossover_hz = bank.frequencies_hz[0];
    let mut meta = Map::new();
    meta.insert("design".into(), Value::from("imagls"));
    meta.insert("lambda".into(), Value::from(config.lambda));
    meta.insert("smoothing_eps".into(), Value::from(config.smoothing_eps));
    meta.insert("max_iter".into(), Value::from(config.max_iter));
    meta.insert("grad_tol".into(), Value::from(config.grad_tol));
    meta.insert("lbfgs_memory".into(), Value::from(config.lbfgs_memory));
    meta.insert("init".into(), serde_json::to_value(config.init)?);
    meta.insert(
        "band_hz".into(),
        json!([config.ild_spec.band_lo_hz, config.ild_spec.band_hi_hz]),
    );
    meta.insert("ild_centers_hz".into(), json!(config.ild_spec.centers_hz));
    meta.insert(
        "ild_directions".into(),
        Value::from(config.ild_spec.horizontal_directions.len()),
    );
    meta.insert("iterations".into(), Value::from(report.history.len() - 1));
    meta.insert("evaluations".into(), Value::from(report.evaluations));
    meta.insert(
        "termination".into(),
        serde_json::to_value(report.termination)?,
    );
    meta.insert("initial_loss".into(), serde_json::to_value(initial)?);
    meta.insert("final_loss".into(), serde_json::to_value(last)?);
    let warning = report.termination == Termination::LineSearchFailure;
    if warning {
        meta.insert(
            "warning".into(),
            Value::from("line search failed; returning best iterate"),
        );
    }
    bank.metadata = meta;
    if config.covariance_constraint {
        bank = apply_covariance_constraint(&bank, problem)?;
    }
    Ok(ImaglsOutcome {
        bank,
        initial,
        last,
        history,
        termination: report.termination,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hrtf::SphericalGrid;
    use crate::testutil::{random_problem, ring_spec, Lcg};

    fn freqs() -> Vec<f64> {
        (0..16).map(|i| 1500.0 + 250.0 * i as f64).collect()
    }

    fn setup(seed: u64, lambda: f64) -> (DesignProblem, ImaglsConfig) {
        let p = random_problem(seed, 20, 6, 4, freqs(), 1e-3);
        let spec = ring_spec(&p, 6, vec![2000.0, 3000.0, 4000.0], 1500.0, 5000.0);
        let mut cfg = ImaglsConfig::new(lambda, spec);
        cfg.smoothing_eps = 1e-10;
        (p, cfg)
    }

    #[test]
    fn lambda_zero_is_pure_magnitude() {
        let (p, cfg) = setup(1, 0.0);
        let bank = mse_filters(&p).unwrap();
        let l = imagls_loss(&bank, &p, &cfg).unwrap();
        assert_eq!(l.total, 0.5 * (l.mag_left + l.mag_right));
        assert!(l.ild_term > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p, cfg) = setup(2, 0.3);
        let obj = ImaglsObjective::new(&p, &cfg).unwrap();
        let mut rng = Lcg(99);
        let x: Vec<f64> = obj
            .pack(&mse_filters(&p).unwrap())
            .iter()
            .map(|v| v + 0.05 * rng.next())
            .collect();
        let mut g = vec![0.0; x.len()];
        obj.evaluate(&x, Some(&mut g));
        for t in 0..30 {
            let i = (t * 37 + 5) % x.len();
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (obj.evaluate(&xp, None).total - obj.evaluate(&xm, None).total) / (2.0 * h);
            let scale = g[i].abs().max(1e-6);
            assert!(
                (fd - g[i]).abs() / scale < 1e-5,
                "coordinate {i}: analytic {} vs fd {fd}",
                g[i]
            );
        }
    }

    #[test]
    fn exact_reproduction_is_stationary() {
        let k = 12;
        let mut rng = Lcg(5);
        let grid = SphericalGrid::fibonacci(k - 4)
            .unwrap()
            .with_horizontal_ring(4);
        let f = freqs();
        let left = rng.matrix(k, f.len()).map(|x| x + Complex::new(2.0, 0.0));
        let right = rng.matrix(k, f.len()).map(|x| x + Complex::new(2.0, 0.0));
        let hrtf = HrtfSet::new(grid, f.clone(), left, right, 48000.0, Map::new()).unwrap();
        let p = DesignProblem::new(vec![DMatrix::identity(k, k); f.len()], hrtf, 0.0).unwrap();
        let spec = ring_spec(&p, 4, vec![2000.0, 4000.0], 1500.0, 5000.0);
        let cfg = ImaglsConfig::new(1.0, spec);
        let bank = FilterBank::new(
            f.clone(),
            (0..f.len())
                .map(|b| DMatrix::from_fn(k, 2, |m, e| p.hrtf.ear(e)[(m, b)].conj()))
                .collect(),
            DesignKind::Mse,
            f[0],
            Map::new(),
        )
        .unwrap();
        let l = imagls_loss(&bank, &p, &cfg).unwrap();
        assert!(l.mag_left < 1e-20 && l.mag_right < 1e-20);
        assert!(l.ild_term <= 1.01e-6, "{}", l.ild_term);
        let g = imagls_gradient(&bank, &p, &cfg).unwrap();
        assert!(g.iter().all(|m| m.norm() < 1e-9));
    }

    #[test]
    fn common_phase_leaves_loss_unchanged() {
        let (p, cfg) = setup(3, 0.5);
        let bank = mse_filters(&p).unwrap();
        let a = imagls_loss(&bank, &p, &cfg).unwrap();
        let b = imagls_loss(&bank.scaled(Complex::from_polar(1.0, 0.7)), &p, &cfg).unwrap();
        assert!((a.total - b.total).abs() < 1e-12 * a.total);
    }

    #[test]
    fn optimizer_reduces_loss_and_keeps_out_of_band_bins() {
        let (p, mut cfg) = setup(4, 0.1);
        cfg.max_iter = 40;
        let out = optimize_imagls(&p, &cfg).unwrap();
        assert!(out.last.total < out.initial.total);
        assert!(out.history.windows(2).all(|w| w[1].total <= w[0].total));
        let init = initial_bank(&p, &cfg).unwrap();
        let last = p.num_bins() - 1; // 5250 Hz, outside [1500, 5000)
        assert_eq!(out.bank.coeffs[last], init.coeffs[last]);
        let mut csv = Vec::new();
        out.write_history_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("iter,total,mag_l,mag_r,ild,grad_norm,step\n"));
    }

    #[test]
    fn off_grid_ild_direction_is_rejected() {
        let (p, mut cfg) = setup(5, 0.1);
        cfg.ild_spec.horizontal_directions[0] = crate::array::Direction::horizontal(0.123);
        assert!(matches!(
            ImaglsObjective::new(&p, &cfg),
            Err(Error::InvalidData(_))
        ));
    }
}
