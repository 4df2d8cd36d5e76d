//! Experiment stages shared by the subcommands: problem setup, the three
//! designs (with the λ sweep), and the evaluation summary.

use bsm_core::design::{
    apply_covariance_constraint, magls_filters, mse_filters, DesignProblem, MaglsSettings,
};
use bsm_core::gammatone::IldSpec;
use bsm_core::hrtf::{synthetic_sphere_hrtf, HrtfSet, SphericalGrid};
use bsm_core::imagls::{initial_bank, optimize_imagls_from, ImaglsConfig, ImaglsOutcome};
use bsm_core::metrics::{ild_error_report, EvalReport};
use bsm_core::{ArrayGeometry, Direction, FilterBank};
use serde::Serialize;

use crate::config::{ExperimentConfig, HrtfSource};
use crate::error::CliError;

/// Everything a design or evaluation run needs, built from a config.
pub struct Setup {
    pub geometry: ArrayGeometry,
    pub problem: DesignProblem,
    pub ild_spec: IldSpec,
    /// True when the HRTF comes from a measured (file) set.
    pub measured: bool,
}

pub fn load_geometry(cfg: &ExperimentConfig) -> Result<ArrayGeometry, CliError> {
    match &cfg.array.file {
        Some(path) => Ok(ArrayGeometry::load(path)?),
        None => Ok(ArrayGeometry::semicircular6()),
    }
}

pub fn build_setup(cfg: &ExperimentConfig, log: &dyn Fn(&str)) -> Result<Setup, CliError> {
    let geometry = load_geometry(cfg)?;
    let h = &cfg.hrtf;
    let (hrtf, ild_dirs, measured) = match h.source {
        HrtfSource::Synthetic => {
            let grid = SphericalGrid::fibonacci(h.grid_directions)?
                .with_horizontal_ring(h.horizontal_directions);
            let freqs: Vec<f64> = (0..=h.fft_size / 2)
                .map(|k| k as f64 * h.sample_rate_hz / h.fft_size as f64)
                .collect();
            let ears = (
                Direction::horizontal(h.ear_azimuth_deg.to_radians()),
                Direction::horizontal(-h.ear_azimuth_deg.to_radians()),
            );
            log(&format!(
                "synthetic head: {} + {} directions, {} bins",
                h.grid_directions,
                h.horizontal_directions,
                freqs.len()
            ));
            let set = synthetic_sphere_hrtf(h.head_radius_m, ears, grid, freqs, h.sample_rate_hz)?;
            (
                set,
                SphericalGrid::horizontal_ring(h.horizontal_directions),
                false,
            )
        }
        HrtfSource::File => {
            let path = h.path.as_ref().expect("validated");
            let set = HrtfSet::load_native(path)?;
            let (_, dirs) = set.horizontal_subset(h.horizontal_tolerance_deg)?;
            log(&format!(
                "HRTF file {}: {} directions ({} horizontal), {} bins",
                path.display(),
                set.num_directions(),
                dirs.len(),
                set.num_frequencies()
            ));
            (set, dirs, true)
        }
    };
    let band_hi = cfg
        .design
        .band_hi_hz
        .min(*hrtf.frequencies_hz.last().expect("non-empty"));
    let ild_spec = IldSpec::erb_spaced(
        cfg.design.band_lo_hz,
        band_hi,
        cfg.imagls.erb_step,
        ild_dirs,
    )?;
    log("computing steering matrices");
    let problem = DesignProblem::from_geometry(&geometry, hrtf, cfg.design.noise_ratio)?;
    Ok(Setup {
        geometry,
        problem,
        ild_spec,
        measured,
    })
}

pub fn magls_settings(cfg: &ExperimentConfig) -> MaglsSettings {
    MaglsSettings {
        init_phase_rad: cfg.magls.init_phase_rad,
        tol: cfg.magls.tol,
        max_iter: cfg.magls.max_iter,
        tolerance_mode: cfg.magls.tolerance_mode,
        record_history: false,
    }
}

pub fn imagls_config(cfg: &ExperimentConfig, setup: &Setup, lambda: f64) -> ImaglsConfig {
    let i = &cfg.imagls;
    let mut c = ImaglsConfig::new(lambda, setup.ild_spec.clone());
    c.smoothing_eps = i.smoothing_eps;
    c.max_iter = i.max_iter;
    c.grad_tol = i.grad_tol;
    c.lbfgs_memory = i.lbfgs_memory;
    c.init = i.init;
    c.covariance_constraint = i.covariance_constraint;
    c.magls = magls_settings(cfg);
    c
}

/// One row of the λ sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub ild_error_db: f64,
    pub ild_gain_db: f64,
    pub mag_error_db: f64,
    pub mag_degradation_db: f64,
    pub admissible: bool,
    pub iterations: usize,
    pub final_loss: f64,
}

pub struct Designs {
    pub mse: FilterBank,
    pub magls: FilterBank,
    /// One outcome per λ, in sweep order.
    pub imagls: Vec<(f64, ImaglsOutcome)>,
    pub sweep: Vec<SweepRow>,
    pub selected: usize,
    /// False when no sweep entry met the magnitude limits.
    pub selection_admissible: bool,
}

impl Designs {
    pub fn selected_imagls(&self) -> &ImaglsOutcome {
        &self.imagls[self.selected].1
    }
}

/// Sweep selection: the largest ILD gain among entries whose magnitude
/// error in the selection band degrades by at most the allowed amount and
/// stays below the ceiling; if none qualifies, the smallest degradation.
pub fn select_lambda(rows: &[SweepRow]) -> (usize, bool) {
    let admissible = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.admissible)
        .max_by(|a, b| {
            a.1.ild_gain_db
                .total_cmp(&b.1.ild_gain_db)
                .then(b.0.cmp(&a.0))
        });
    match admissible {
        Some((i, _)) => (i, true),
        None => {
            let i = rows
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    a.1.mag_degradation_db
                        .total_cmp(&b.1.mag_degradation_db)
                        .then(a.0.cmp(&b.0))
                })
                .map(|(i, _)| i)
                .unwrap_or(0);
            (i, false)
        }
    }
}

pub fn run_designs(
    cfg: &ExperimentConfig,
    setup: &Setup,
    log: &dyn Fn(&str),
) -> Result<Designs, CliError> {
    let p = &setup.problem;
    log("designing MSE filters");
    let mse = mse_filters(p)?;
    log("designing MagLS filters");
    let mut magls = magls_filters(p, &magls_settings(cfg))?.bank;
    if cfg.magls.covariance_constraint {
        magls = apply_covariance_constraint(&magls, p)?;
    }
    let lambdas = cfg.lambdas();
    let base_cfg = imagls_config(cfg, setup, lambdas[0]);
    // The MagLS warm start is the baseline bank itself.
    let init = if base_cfg.init == bsm_core::InitKind::Magls {
        magls.clone()
    } else {
        initial_bank(p, &base_cfg)?
    };
    let (lo, hi) = (cfg.design.band_lo_hz, cfg.imagls.selection_hi_hz);
    let base = evaluate_banks(setup, &[("magls", &magls)])?;
    let base_ild = base.methods[0].mean_ild_error_db();
    let base_mag = base.band_mean(&base.methods[0].mag_error_db, lo, hi);

    let mut imagls = Vec::with_capacity(lambdas.len());
    let mut sweep = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        log(&format!("optimizing iMagLS, lambda = {lambda}"));
        let out = optimize_imagls_from(p, &imagls_config(cfg, setup, lambda), &init)?;
        if out.warning {
            log(&format!(
                "warning: lambda = {lambda}: line search failed, keeping best iterate"
            ));
        }
        let r = evaluate_banks(setup, &[("imagls", &out.bank)])?;
        let ild = r.methods[0].mean_ild_error_db();
        let mag = r.band_mean(&r.methods[0].mag_error_db, lo, hi);
        let degradation = mag - base_mag;
        sweep.push(SweepRow {
            lambda,
            ild_error_db: ild,
            ild_gain_db: base_ild - ild,
            mag_error_db: mag,
            mag_degradation_db: degradation,
            admissible: degradation <= cfg.imagls.max_mag_degradation_db
                && mag < cfg.imagls.mag_ceiling_db,
            iterations: out.history.len() - 1,
            final_loss: out.last.total,
        });
        imagls.push((lambda, out));
    }
    let (selected, selection_admissible) = select_lambda(&sweep);
    log(&format!("selected lambda = {}", sweep[selected].lambda));
    Ok(Designs {
        mse,
        magls,
        imagls,
        sweep,
        selected,
        selection_admissible,
    })
}

pub fn evaluate_banks(
    setup: &Setup,
    banks: &[(&str, &FilterBank)],
) -> Result<EvalReport, CliError> {
    Ok(ild_error_report(
        &setup.problem.hrtf,
        banks,
        &setup.ild_spec,
        &setup.problem.steering,
        1e-12,
    )?)
}

/// Band and angle averages of one method.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub name: String,
    pub ild_error_db: f64,
    pub ild_error_front_db: f64,
    pub ild_error_rear_db: f64,
    pub mag_error_selection_band_db: f64,
    pub mag_error_band_db: f64,
    pub nmse_band_db: f64,
}

/// Comparison of iMagLS against MagLS and MagLS against MSE.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub band_hz: [f64; 2],
    pub selection_band_hz: [f64; 2],
    pub front_deg: [f64; 2],
    pub rear_deg: [f64; 2],
    pub methods: Vec<MethodSummary>,
    pub ild_gain_db: Option<f64>,
    pub mag_degradation_db: Option<f64>,
    pub front_gain_db: Option<f64>,
    pub rear_gain_db: Option<f64>,
    /// Bins in the band where MagLS magnitude error exceeds MSE's.
    pub magls_worse_than_mse_bins: Option<usize>,
    pub measured_hrtf: bool,
    /// Whether the ILD gain lies within the literature reference band;
    /// `None` for synthetic HRTFs.
    pub reference_band_reached: Option<bool>,
}

impl Summary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.name == name)
    }
}

pub fn summarize(cfg: &ExperimentConfig, report: &EvalReport, measured: bool) -> Summary {
    let (lo, hi) = (cfg.design.band_lo_hz, cfg.design.band_hi_hz);
    let sel_hi = cfg.imagls.selection_hi_hz;
    let e = &cfg.evaluate;
    let methods: Vec<MethodSummary> = report
        .methods
        .iter()
        .map(|m| MethodSummary {
            name: m.name.clone(),
            ild_error_db: m.mean_ild_error_db(),
            ild_error_front_db: report.angle_mean(
                &m.ild_error_db_vs_angle,
                e.front_deg[0],
                e.front_deg[1],
            ),
            ild_error_rear_db: report.angle_mean(
                &m.ild_error_db_vs_angle,
                e.rear_deg[0],
                e.rear_deg[1],
            ),
            mag_error_selection_band_db: report.band_mean(&m.mag_error_db, lo, sel_hi),
            mag_error_band_db: report.band_mean(&m.mag_error_db, lo, hi),
            nmse_band_db: report.band_mean(&m.nmse_db, lo, hi),
        })
        .collect();
    let find = |n: &str| methods.iter().find(|m| m.name == n);
    let pair = find("magls").zip(find("imagls"));
    let ild_gain_db = pair.map(|(a, b)| a.ild_error_db - b.ild_error_db);
    let magls_worse_than_mse_bins =
        report
            .method("mse")
            .zip(report.method("magls"))
            .map(|(mse, magls)| {
                report
                    .frequencies_hz
                    .iter()
                    .enumerate()
                    .filter(|(i, f)| {
                        **f >= lo && **f <= hi && magls.mag_error_db[*i] > mse.mag_error_db[*i]
                    })
                    .count()
            });
    Summary {
        band_hz: [lo, hi],
        selection_band_hz: [lo, sel_hi],
        front_deg: e.front_deg,
        rear_deg: e.rear_deg,
        ild_gain_db,
        mag_degradation_db: pair
            .map(|(a, b)| b.mag_error_selection_band_db - a.mag_error_selection_band_db),
        front_gain_db: pair.map(|(a, b)| a.ild_error_front_db - b.ild_error_front_db),
        rear_gain_db: pair.map(|(a, b)| a.ild_error_rear_db - b.ild_error_rear_db),
        magls_worse_than_mse_bins,
        measured_hrtf: measured,
        reference_band_reached: if measured {
            ild_gain_db.map(|g| (g - e.reference_ild_gain_db).abs() <= e.reference_tolerance_db)
        } else {
            None
        },
        methods,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(lambda: f64, gain: f64, deg: f64, ok: bool) -> SweepRow {
        SweepRow {
            lambda,
            ild_error_db: 0.0,
            ild_gain_db: gain,
            mag_error_db: -12.0,
            mag_degradation_db: deg,
            admissible: ok,
            iterations: 1,
            final_loss: 0.0,
        }
    }

    #[test]
    fn selection_prefers_admissible_gain() {
        let rows = [
            row(0.01, 1.0, 0.5, true),
            row(0.03, 1.8, 0.9, true),
            row(0.1, 2.5, 3.0, false),
        ];
        assert_eq!(select_lambda(&rows), (1, true));
    }

    #[test]
    fn selection_falls_back_to_least_degradation() {
        let rows = [row(0.1, 2.5, 3.0, false), row(0.3, 3.0, 5.0, false)];
        assert_eq!(select_lambda(&rows), (0, false));
    }
}
