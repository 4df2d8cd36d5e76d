//! Baseline BSM designs: closed-form MSE, MagLS by variable exchange, and
//! the diffuse-field covariance constraint.
//!
//! The diffuse sound field is modelled by the quadrature weights `w` of the
//! HRTF grid, so every "expectation" below is `sum_k w_k (...)`. With
//! `V` the `M x K` steering matrix, `W = diag(w)` and `rho` the
//! noise-to-signal power ratio, the MSE filters are
//! `c = (V W V^H + rho I)^-1 V W h*`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::array::{steering_matrices, ArrayGeometry};
use crate::bank::{DesignKind, FilterBank};
use crate::error::{Error, Result};
use crate::hrtf::HrtfSet;
use crate::sphmath::Complex;

/// Steering matrices and target HRTFs on a shared grid and frequency list.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    /// One `M x K` matrix per frequency bin.
    pub steering: Vec<DMatrix<Complex>>,
    pub hrtf: HrtfSet,
    /// Noise-to-signal power ratio `sigma_n^2 / sigma_s^2`.
    pub noise_ratio: f64,
}

impl DesignProblem {
    pub fn new(steering: Vec<DMatrix<Complex>>, hrtf: HrtfSet, noise_ratio: f64) -> Result<Self> {
        let p = DesignProblem {
            steering,
            hrtf,
            noise_ratio,
        };
        p.validate()?;
        Ok(p)
    }

    /// Computes the steering matrices of `geometry` on the HRTF grid.
    pub fn from_geometry(
        geometry: &ArrayGeometry,
        hrtf: HrtfSet,
        noise_ratio: f64,
    ) -> Result<Self> {
        let steering = steering_matrices(geometry, &hrtf.frequencies_hz, hrtf.grid.directions())
            .into_iter()
            .map(|s| s.entries)
            .collect();
        Self::new(steering, hrtf, noise_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_ratio.is_finite() && self.noise_ratio >= 0.0) {
            return Err(Error::domain("noise ratio must be finite and non-negative"));
        }
        let f = self.hrtf.num_frequencies();
        let k = self.hrtf.num_directions();
        if self.steering.len() != f {
            return Err(Error::dims(format!(
                "{} steering bins for {f} HRTF bins",
                self.steering.len()
            )));
        }
        let m = self.steering[0].nrows();
        for (i, v) in self.steering.iter().enumerate() {
            if v.nrows() != m || v.ncols() != k || m == 0 {
                return Err(Error::dims(format!(
                    "steering bin {i} is {}x{}, expected {m}x{k}",
                    v.nrows(),
                    v.ncols()
                )));
            }
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.steering[0].nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.steering.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.hrtf.frequencies_hz
    }

    pub fn weights(&self) -> &[f64] {
        self.hrtf.grid.weights()
    }

    /// Target responses of one ear at one bin (`K` entries).
    pub fn target(&self, bin: usize, ear: usize) -> DVector<Complex> {
        self.hrtf.ear(ear).column(bin).into_owned()
    }

    /// Same problem restricted to a subset of bins.
    pub fn select_bins(&self, bins: &[usize]) -> Result<DesignProblem> {
        let h = &self.hrtf;
        let pick =
            |m: &DMatrix<Complex>| DMatrix::from_fn(m.nrows(), bins.len(), |k, j| m[(k, bins[j])]);
        let hrtf = HrtfSet::new(
            h.grid.clone(),
            bins.iter().map(|&b| h.frequencies_hz[b]).collect(),
            pick(&h.left),
            pick(&h.right),
            h.sample_rate_hz,
            h.metadata.clone(),
        )?;
        DesignProblem::new(
            bins.iter().map(|&b| self.steering[b].clone()).collect(),
            hrtf,
            self.noise_ratio,
        )
    }
}

/// Rendered ear signals `z_k = c^H v_k` for every direction of a bin.
pub fn render_bin(steering: &DMatrix<Complex>, c: &DVector<Complex>) -> DVector<Complex> {
    // (V^H c)^* = c^H V
    steering.ad_mul(c).map(|x| x.conj())
}

/// Cholesky factor of a Hermitian positive (semi)definite matrix with
/// escalating diagonal loading.
pub(crate) struct HermitianSolver {
    chol: Cholesky<Complex, Dyn>,
    /// Total diagonal loading added, absolute.
    pub loading: f64,
}

const LOADING_STEPS: [f64; 3] = [1e-12, 1e-10, 1e-8];

impl HermitianSolver {
    /// Returns `None` when even the strongest loading fails.
    pub fn factor(a: &DMatrix<Complex>) -> Option<Self> {
        let n = a.nrows();
        let trace: f64 = (0..n).map(|i| a[(i, i)].re).sum();
        if !(trace > 0.0 && trace.is_finite()) {
            return None;
        }
        let pivot_floor = 1e-14 * trace;
        let attempt = |load: f64| {
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += load;
            }
            let chol = Cholesky::new(m)?;
            let l = chol.l_dirty();
            let ok = (0..n).all(|i| {
                let d = l[(i, i)].re;
                d * d > pivot_floor
            });
            ok.then_some(HermitianSolver {
                chol,
                loading: load,
            })
        };
        std::iter::once(0.0)
            .chain(LOADING_STEPS.iter().map(|s| s * trace))
            .find_map(attempt)
    }

    pub fn solve(&self, b: &DMatrix<Complex>) -> DMatrix<Complex> {
        self.chol.solve(b)
    }
}

/// `V W V^H + rho I` and `V W` for one bin.
fn normal_matrix(
    v: &DMatrix<Complex>,
    w: &[f64],
    rho: f64,
) -> (DMatrix<Complex>, DMatrix<Complex>) {
    let mut vw = v.clone();
    for (k, mut col) in vw.column_iter_mut().enumerate() {
        col *= Complex::from(w[k]);
    }
    let mut a = &vw * v.adjoint();
    for i in 0..a.nrows() {
        a[(i, i)] += rho;
    }
    // enforce exact Hermitian symmetry
    let a = (&a + a.adjoint()) * Complex::from(0.5);
    (a, vw)
}

fn factor_bin(problem: &DesignProblem, bin: usize) -> Result<(HermitianSolver, DMatrix<Complex>)> {
    let (a, vw) = normal_matrix(
        &problem.steering[bin],
        problem.weights(),
        problem.noise_ratio,
    );
    let solver = HermitianSolver::factor(&a).ok_or(Error::SingularSystem {
        bin,
        freq_hz: problem.frequencies()[bin],
    })?;
    Ok((solver, vw))
}

/// Closed-form MSE filters, per bin.
pub fn mse_filters(problem: &DesignProblem) -> Result<FilterBank> {
    let bins: Vec<(DMatrix<Complex>, f64)> = (0..problem.num_bins())
        .into_par_iter()
        .map(|bin| {
            let (solver, vw) = factor_bin(problem, bin)?;
            let k = problem.hrtf.num_directions();
            let rhs_targets = DMatrix::from_fn(k, 2, |kk, e| problem.hrtf.ear(e)[(kk, bin)].conj());
            let c = solver.solve(&(&vw * rhs_targets));
            Ok((c, solver.loading))
        })
        .collect::<Result<_>>()?;
    let loadings: Vec<f64> = bins.iter().map(|b| b.1).collect();
    let mut meta = Map::new();
    meta.insert("design".into(), Value::from("mse"));
    meta.insert("noise_ratio".into(), Value::from(problem.noise_ratio));
    meta.insert("diagonal_loading".into(), json!(loadings));
    FilterBank::new(
        problem.frequencies().to_vec(),
        bins.into_iter().map(|b| b.0).collect(),
        DesignKind::Mse,
        problem.frequencies()[0],
        meta,
    )
}

/// How the variable-exchange iteration decides it has converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceMode {
    /// Stop when `previous - current < tol`.
    Absolute,
    /// Stop when `previous - current < tol * previous`.
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaglsSettings {
    pub init_phase_rad: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub tolerance_mode: ToleranceMode,
    /// Keep the full per-bin loss sequence in [`MaglsOutcome::histories`].
    pub record_history: bool,
}

impl Default for MaglsSettings {
    fn default() -> Self {
        MaglsSettings {
            init_phase_rad: std::f64::consts::FRAC_PI_2,
            tol: 1e-20,
            max_iter: 100_000,
            tolerance_mode: ToleranceMode::Absolute,
            record_history: false,
        }
    }
}

/// Result of one variable-exchange run for a single bin and ear.
#[derive(Debug, Clone)]
pub struct ExchangeRun {
    pub coeffs: DVector<Complex>,
    /// Exchange objective of every computed iterate, in order.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Exchange objective of the returned coefficients.
    pub final_loss: f64,
    /// `sum_k w_k (|h_k| - |z_k|)^2` of the returned coefficients.
    pub magnitude_loss: f64,
    /// Set when the last iterate increased the objective at roundoff level
    /// and was discarded.
    pub stopped_on_increase: bool,
}

#[derive(Debug, Clone)]
pub struct MaglsOutcome {
    pub bank: FilterBank,
    /// `histories[bin][ear]`, empty unless requested.
    pub histories: Vec<[Vec<f64>; 2]>,
}

/// Variable exchange for one bin/ear. The objective
/// `sum_k w_k | |h_k| e^{i phi_k} - z_k |^2 + rho' ||c||^2` (with `rho'`
/// including any diagonal loading) is non-increasing: the phase update is
/// its exact minimizer over `phi`, the quadratic solve over `c`.
fn exchange(
    solver: &HermitianSolver,
    vw: &DMatrix<Complex>,
    v: &DMatrix<Complex>,
    w: &[f64],
    rho: f64,
    target_mag: &[f64],
    settings: &MaglsSettings,
) -> ExchangeRun {
    let k = target_mag.len();
    let rho_eff = rho + solver.loading;
    let mut phase = vec![Complex::from_polar(1.0, settings.init_phase_rad); k];
    let mut best: Option<(DVector<Complex>, f64, f64)> = None;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut stopped_on_increase = false;
    for _ in 0..settings.max_iter.max(1) {
        iterations += 1;
        let t = DMatrix::from_fn(k, 1, |kk, _| (phase[kk] * target_mag[kk]).conj());
        let c: DVector<Complex> = solver.solve(&(vw * t)).column(0).into_owned();
        let z = render_bin(v, &c);
        let mut mag_loss = 0.0;
        for kk in 0..k {
            let d = target_mag[kk] - z[kk].norm();
            mag_loss += w[kk] * d * d;
        }
        let loss = mag_loss + rho_eff * c.norm_squared();
        if settings.record_history {
            history.push(loss);
        }
        if let Some((_, prev, _)) = &best {
            let prev = *prev;
            if loss > prev {
                stopped_on_increase = true;
                break;
            }
            let decrease = prev - loss;
            best = Some((c, loss, mag_loss));
            let threshold = match settings.tolerance_mode {
                ToleranceMode::Absolute => settings.tol,
                ToleranceMode::Relative => settings.tol * prev,
            };
            if decrease < threshold {
                break;
            }
        } else {
            best = Some((c, loss, mag_loss));
        }
        for kk in 0..k {
            let n = z[kk].norm();
            if n > 0.0 {
                phase[kk] = z[kk] / n;
            }
        }
    }
    let (coeffs, final_loss, magnitude_loss) = best.expect("at least one iteration");
    ExchangeRun {
        coeffs,
        history,
        iterations,
        final_loss,
        magnitude_loss,
        stopped_on_increase,
    }
}

/// Runs the exchange for one bin and ear (exposed for diagnostics/tests).
pub fn magls_exchange_bin(
    problem: &DesignProblem,
    bin: usize,
    ear: usize,
    settings: &MaglsSettings,
) -> Result<ExchangeRun> {
    let (solver, vw) = factor_bin(problem, bin)?;
    let mags: Vec<f64> = problem.target(bin, ear).iter().map(|h| h.norm()).collect();
    Ok(exchange(
        &solver,
        &vw,
        &problem.steering[bin],
        problem.weights(),
        problem.noise_ratio,
        &mags,
        settings,
    ))
}

/// MagLS filters by variable exchange, independently per bin and ear.
pub fn magls_filters(problem: &DesignProblem, settings: &MaglsSettings) -> Result<MaglsOutcome> {
    if !(settings.tol > 0.0) {
        return Err(Error::domain("MagLS tolerance must be positive"));
    }
    let runs: Vec<[ExchangeRun; 2]> = (0..problem.num_bins())
        .into_par_iter()
        .map(|bin| {
            let (solver, vw) = factor_bin(problem, bin)?;
            let run = |ear| {
                let mags: Vec<f64> = problem.target(bin, ear).iter().map(|h| h.norm()).collect();
                exchange(
                    &solver,
                    &vw,
                    &problem.steering[bin],
                    problem.weights(),
                    problem.noise_ratio,
                    &mags,
                    settings,
                )
            };
            Ok([run(0), run(1)])
        })
        .collect::<Result<_>>()?;

    let m = problem.num_mics();
    let coeffs = runs
        .iter()
        .map(|[l, r]| DMatrix::from_fn(m, 2, |i, e| if e == 0 { l.coeffs[i] } else { r.coeffs[i] }))
        .collect();
    let mut meta = Map::new();
    meta.insert("design".into(), Value::from("magls"));
    meta.insert("noise_ratio".into(), Value::from(problem.noise_ratio));
    meta.insert(
        "init_phase_rad".into(),
        Value::from(settings.init_phase_rad),
    );
    meta.insert("tol".into(), Value::from(settings.tol));
    meta.insert("max_iter".into(), Value::from(settings.max_iter));
    meta.insert(
        "tolerance_mode".into(),
        serde_json::to_value(settings.tolerance_mode)?,
    );
    meta.insert(
        "iterations".into(),
        json!(runs
            .iter()
            .map(|r| [r[0].iterations, r[1].iterations])
            .collect::<Vec<_>>()),
    );
    meta.insert(
        "final_loss".into(),
        json!(runs
            .iter()
            .map(|r| [r[0].final_loss, r[1].final_loss])
            .collect::<Vec<_>>()),
    );
    let bank = FilterBank::new(
        problem.frequencies().to_vec(),
        coeffs,
        DesignKind::Magls,
        problem.frequencies()[0],
        meta,
    )?;
    let histories = runs
        .into_iter()
        .map(|[l, r]| [l.history, r.history])
        .collect();
    Ok(MaglsOutcome { bank, histories })
}

type Mat2 = [[Complex; 2]; 2];

/// `A^H diag(w) A` for a `K x 2` matrix given as two columns.
fn weighted_gram(cols: [&[Complex]; 2], w: &[f64]) -> Mat2 {
    let mut r = [[Complex::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = cols[i]
                .iter()
                .zip(cols[j])
                .zip(w)
                .map(|((a, b), &wk)| a.conj() * b * wk)
                .sum();
        }
    }
    r
}

/// Lower Cholesky factor of a 2x2 Hermitian positive definite matrix.
fn chol2(r: &Mat2) -> Option<Mat2> {
    let a = r[0][0].re;
    if !(a > 0.0) {
        return None;
    }
    let l00 = a.sqrt();
    let l10 = r[1][0] / l00;
    let d = r[1][1].re - l10.norm_sqr();
    if !(d > 0.0) {
        return None;
    }
    let zero = Complex::new(0.0, 0.0);
    Some([[Complex::from(l00), zero], [l10, Complex::from(d.sqrt())]])
}

/// Lower factor `L` with `L L^H = A^H diag(w) A` for a `K x 2` matrix,
/// from a QR factorization of `diag(sqrt(w)) A` (Gram-Schmidt with one
/// reorthogonalization). Unlike a Cholesky factorization of the Gram
/// matrix this does not square the condition number, which matters at low
/// frequencies where both ear signals are nearly collinear. `l11` is zero
/// for exactly collinear columns.
fn gram_factor(cols: [&[Complex]; 2], w: &[f64]) -> Mat2 {
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a: Vec<Complex> = cols[0].iter().zip(&sw).map(|(x, s)| x * s).collect();
    let mut b: Vec<Complex> = cols[1].iter().zip(&sw).map(|(x, s)| x * s).collect();
    let zero = Complex::new(0.0, 0.0);
    let r00 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let mut r01 = zero;
    if r00 > 0.0 {
        for _ in 0..2 {
            let s: Complex = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum::<Complex>() / r00;
            for (y, x) in b.iter_mut().zip(&a) {
                *y -= x * (s / r00);
            }
            r01 += s;
        }
    }
    let r11 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    [[Complex::from(r00), zero], [r01.conj(), Complex::from(r11)]]
}

fn factor_is_invertible(l: &Mat2) -> bool {
    l[0][0].re > 0.0
        && l[1][1].re > 0.0
        && l.iter()
            .flatten()
            .all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Cholesky factor of `r + rel * trace / 2 * I`, with the loading used.
fn chol2_loaded(mut r: Mat2, rel: f64) -> Option<(Mat2, f64)> {
    let loading = rel * (r[0][0].re + r[1][1].re) / 2.0;
    r[0][0] += loading;
    r[1][1] += loading;
    chol2(&r).map(|l| (l, loading))
}

/// Second-column to first-column norm ratio below which a pair of signals
/// is treated as collinear.
const RANK_ONE_REL: f64 = 1e-13;

/// For collinear rendered signals `sqrt(W) Z = q e` and a rank-one target
/// `L_t L_t^H = u^H u` (rows `e`, `u` read off the factors), the map
/// `X = e^H u / |e|^2` gives `(Z X)^H W (Z X) = u^H u` exactly.
fn rank_one_correction(le: &Mat2, lt: &Mat2) -> Mat2 {
    let e = [le[0][0], le[1][0].conj()];
    let u = [lt[0][0], lt[1][0].conj()];
    let n = e[0].norm_sqr() + e[1].norm_sqr();
    let mut x = [[Complex::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            x[i][j] = e[i].conj() * u[j] / n;
        }
    }
    x
}

/// `L_e^{-H} L_t^H` for lower-triangular `L_e`, `L_t`.
fn correction(le: &Mat2, lt: &Mat2) -> Mat2 {
    // U = L_e^H is upper triangular; solve U X = L_t^H.
    let u00 = le[0][0].conj();
    let u01 = le[1][0].conj();
    let u11 = le[1][1].conj();
    let b = [
        [lt[0][0].conj(), lt[1][0].conj()],
        [lt[0][1].conj(), lt[1][1].conj()],
    ];
    let mut x = [[Complex::new(0.0, 0.0); 2]; 2];
    for j in 0..2 {
        x[1][j] = b[1][j] / u11;
        x[0][j] = (b[0][j] - u01 * x[1][j]) / u00;
    }
    x
}

/// Forces the rendered diffuse-field covariance `Z^H W Z` of every bin to
/// equal the target `H^H W H` by a 2x2 right-multiplication of the
/// rendered signals (`Z <- Z X`), applied to the filters as `C <- C X*`.
pub fn apply_covariance_constraint(
    bank: &FilterBank,
    problem: &DesignProblem,
) -> Result<FilterBank> {
    check_bank(bank, problem)?;
    let w = problem.weights();
    let results: Vec<(DMatrix<Complex>, f64)> = (0..problem.num_bins())
        .into_par_iter()
        .map(|bin| {
            let c = &bank.coeffs[bin];
            let v = &problem.steering[bin];
            let zl = render_bin(v, &c.column(0).into_owned());
            let zr = render_bin(v, &c.column(1).into_owned());
            let hl = problem.target(bin, 0);
            let hr = problem.target(bin, 1);
            let singular = || Error::SingularSystem {
                bin,
                freq_hz: problem.frequencies()[bin],
            };
            // A rank-one target (identical ears, e.g. at DC) is fine. The
            // rendered factor must be inverted; when the rendered signals
            // are collinear too, the rank-one map between the two is exact,
            // otherwise a small diagonal loading is the fallback.
            let lt = gram_factor([hl.as_slice(), hr.as_slice()], w);
            if !(lt[0][0].re > 0.0) {
                return Err(singular());
            }
            let le = gram_factor([zl.as_slice(), zr.as_slice()], w);
            let rank_one = |l: &Mat2| l[1][1].re <= RANK_ONE_REL * l[0][0].re;
            let (x, loading) = if factor_is_invertible(&le) && !rank_one(&le) {
                (correction(&le, &lt), 0.0)
            } else if le[0][0].re > 0.0 && rank_one(&lt) {
                (rank_one_correction(&le, &lt), 0.0)
            } else {
                let re = weighted_gram([zl.as_slice(), zr.as_slice()], w);
                let (le, loading) = chol2_loaded(re, 1e-10).ok_or_else(singular)?;
                (correction(&le, &lt), loading)
            };
            let xc = DMatrix::from_fn(2, 2, |i, j| x[i][j].conj());
            Ok((c * xc, loading))
        })
        .collect::<Result<_>>()?;
    let mut out = bank.clone();
    let loadings: Vec<f64> = results.iter().map(|r| r.1).collect();
    out.coeffs = results.into_iter().map(|r| r.0).collect();
    out.metadata
        .insert("covariance_constraint".into(), Value::from(true));
    out.metadata
        .insert("covariance_loading".into(), json!(loadings));
    out.validate()?;
    Ok(out)
}

pub(crate) fn check_bank(bank: &FilterBank, problem: &DesignProblem) -> Result<()> {
    if bank.num_bins() != problem.num_bins() || bank.num_mics() != problem.num_mics() {
        return Err(Error::dims(format!(
            "bank is {} bins x {} mics, problem is {} x {}",
            bank.num_bins(),
            bank.num_mics(),
            problem.num_bins(),
            problem.num_mics()
        )));
    }
    if bank.frequencies_hz != problem.frequencies() {
        return Err(Error::GridMismatch(
            "bank and problem frequencies differ".into(),
        ));
    }
    Ok(())
}

/// Rendered diffuse covariance `Z^H W Z` of a bin (row-major 2x2).
pub fn rendered_covariance(
    bank: &FilterBank,
    problem: &DesignProblem,
    bin: usize,
) -> [[Complex; 2]; 2] {
    let c = &bank.coeffs[bin];
    let v = &problem.steering[bin];
    let zl = render_bin(v, &c.column(0).into_owned());
    let zr = render_bin(v, &c.column(1).into_owned());
    weighted_gram([zl.as_slice(), zr.as_slice()], problem.weights())
}

/// Target diffuse covariance `H^H W H` of a bin.
pub fn target_covariance(problem: &DesignProblem, bin: usize) -> [[Complex; 2]; 2] {
    let hl = problem.target(bin, 0);
    let hr = problem.target(bin, 1);
    weighted_gram([hl.as_slice(), hr.as_slice()], problem.weights())
}
