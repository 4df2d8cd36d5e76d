//! Subcommand implementations. Each returns the manifest it wrote.

use std::path::{Path, PathBuf};

use bsm_core::bank::BANK_MAGIC;
use bsm_core::render::{
    crossover_merge, filters_to_fir, render_binaural, simulate_mic_signals, FirSet, FIR_KIND_TAG,
};
use bsm_core::{Direction, FilterBank, MultichannelAudio};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, HrtfSource};
use crate::error::CliError;
use crate::manifest::Manifest;
use crate::pipeline::{
    build_setup, evaluate_banks, load_geometry, run_designs, summarize, Summary,
};

pub const MANIFEST: &str = "manifest.json";
pub const EVAL_MANIFEST: &str = "evaluate_manifest.json";
pub const SUMMARY: &str = "summary.json";
pub const NMSE_CSV: &str = "nmse.csv";
pub const MAG_CSV: &str = "magnitude_error.csv";
pub const ILD_FREQ_CSV: &str = "ild_error_freq.csv";
pub const ILD_ANGLE_CSV: &str = "ild_error_angle.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const HISTORY_CSV: &str = "imagls_history.csv";
pub const BANK_NAMES: [&str; 3] = ["mse", "magls", "imagls"];

/// Progress messages go to stderr when verbose.
pub struct Logger {
    pub verbose: bool,
}

impl Logger {
    pub fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("bsm: {msg}");
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(dir.join(name), buf).map_err(|e| CliError::Data(format!("{name}: {e}")))
}

fn add_config_inputs(
    m: &mut Manifest,
    cfg: &ExperimentConfig,
    config_path: Option<&Path>,
) -> Result<(), CliError> {
    if let Some(p) = config_path {
        m.add_input(p)?;
    }
    if let Some(p) = &cfg.array.file {
        m.add_input(p)?;
    }
    if cfg.hrtf.source == HrtfSource::File {
        if let Some(p) = &cfg.hrtf.path {
            m.add_input(p)?;
        }
    }
    Ok(())
}

pub fn bank_file(name: &str) -> String {
    format!("{name}.bsmf")
}

/// Designs MSE, MagLS and iMagLS banks (one iMagLS bank per swept λ) plus
/// the crossover-merged banks, and writes them with a manifest.
pub fn cmd_design(
    cfg: &ExperimentConfig,
    config_path: Option<&Path>,
    out: &Path,
    log: &Logger,
) -> Result<Manifest, CliError> {
    create_dir(out)?;
    let say = |m: &str| log.log(m);
    let setup = build_setup(cfg, &say)?;
    let designs = run_designs(cfg, &setup, &say)?;
    let mut manifest = Manifest::new("design", cfg);
    add_config_inputs(&mut manifest, cfg, config_path)?;

    let selected = designs.selected_imagls();
    let mut banks: Vec<(String, FilterBank)> = vec![
        ("mse".into(), designs.mse.clone()),
        ("magls".into(), designs.magls.clone()),
        ("imagls".into(), selected.bank.clone()),
    ];
    let xo = cfg.design.crossover_hz;
    banks.push((
        "mse_magls".into(),
        crossover_merge(&designs.mse, &designs.magls, xo)?,
    ));
    banks.push((
        "mse_imagls".into(),
        crossover_merge(&designs.mse, &selected.bank, xo)?,
    ));
    let sweeping = designs.imagls.len() > 1;
    if sweeping {
        for (lambda, o) in &designs.imagls {
            banks.push((format!("imagls_lambda_{lambda}"), o.bank.clone()));
        }
    }
    for (name, bank) in &banks {
        let file = bank_file(name);
        bank.save(out.join(&file))?;
        manifest.add_output(out, &file)?;
    }
    write_file(out, HISTORY_CSV, |b| selected.write_history_csv(b))?;
    manifest.add_output(out, HISTORY_CSV)?;
    write_file(out, SWEEP_CSV, |b| {
        use std::io::Write;
        writeln!(b, "lambda,ild_error_db,ild_gain_db,mag_error_db,mag_degradation_db,admissible,iterations,final_loss,selected")?;
        for (i, r) in designs.sweep.iter().enumerate() {
            writeln!(
                b,
                "{},{},{},{},{},{},{},{},{}",
                r.lambda,
                r.ild_error_db,
                r.ild_gain_db,
                r.mag_error_db,
                r.mag_degradation_db,
                r.admissible,
                r.iterations,
                r.final_loss,
                i == designs.selected
            )?;
        }
        Ok(())
    })?;
    manifest.add_output(out, SWEEP_CSV)?;
    manifest.results = json!({
        "selected_lambda": designs.sweep[designs.selected].lambda,
        "selection_admissible": designs.selection_admissible,
        "sweep": designs.sweep,
        "imagls_initial_loss": selected.initial,
        "imagls_final_loss": selected.last,
        "imagls_termination": selected.termination,
        "num_bins": setup.problem.num_bins(),
        "num_directions": setup.problem.hrtf.num_directions(),
        "ild_directions": setup.ild_spec.horizontal_directions.len(),
        "ild_centers_hz": setup.ild_spec.centers_hz,
    });
    manifest.write(&out.join(MANIFEST))?;
    Ok(manifest)
}

/// Evaluates the `mse`, `magls` and `imagls` banks found in `banks_dir`
/// and writes the four CSV reports and a summary into `out`.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    config_path: Option<&Path>,
    banks_dir: &Path,
    out: &Path,
    log: &Logger,
) -> Result<(Manifest, Summary), CliError> {
    create_dir(out)?;
    let mut manifest = Manifest::new("evaluate", cfg);
    add_config_inputs(&mut manifest, cfg, config_path)?;
    let mut banks = Vec::new();
    for name in BANK_NAMES {
        let path = banks_dir.join(bank_file(name));
        if !path.exists() {
            return Err(CliError::Data(format!(
                "missing bank file {}",
                path.display()
            )));
        }
        banks.push((name, FilterBank::load(&path)?));
        manifest.add_input(&path)?;
    }
    let say = |m: &str| log.log(m);
    let setup = build_setup(cfg, &say)?;
    say("evaluating banks");
    let refs: Vec<(&str, &FilterBank)> = banks.iter().map(|(n, b)| (*n, b)).collect();
    let report = evaluate_banks(&setup, &refs)?;
    let summary = summarize(cfg, &report, setup.measured);
    let band = report.restricted(cfg.design.band_lo_hz, cfg.design.band_hi_hz);
    write_file(out, NMSE_CSV, |b| band.write_nmse_csv(b))?;
    write_file(out, MAG_CSV, |b| band.write_magnitude_csv(b))?;
    write_file(out, ILD_FREQ_CSV, |b| band.write_ild_freq_csv(b))?;
    write_file(out, ILD_ANGLE_CSV, |b| band.write_ild_angle_csv(b))?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(out.join(SUMMARY), text)?;
    for name in [NMSE_CSV, MAG_CSV, ILD_FREQ_CSV, ILD_ANGLE_CSV, SUMMARY] {
        manifest.add_output(out, name)?;
    }
    manifest.results = serde_json::to_value(&summary)?;
    manifest.write(&out.join(EVAL_MANIFEST))?;
    Ok((manifest, summary))
}

/// Parses a CSV with a header row and numeric or boolean cells into
/// named columns.
fn read_csv_columns(path: &Path) -> Result<Vec<(String, Vec<Value>)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{} is empty", path.display())))?;
    let mut cols: Vec<(String, Vec<Value>)> = header
        .split(',')
        .map(|h| (h.trim().to_string(), Vec::new()))
        .collect();
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(CliError::Data(format!(
                "{}: row {} has {} cells",
                path.display(),
                row + 1,
                cells.len()
            )));
        }
        for (col, cell) in cols.iter_mut().zip(cells) {
            let cell = cell.trim();
            let v = if let Ok(x) = cell.parse::<f64>() {
                json!(x)
            } else if let Ok(b) = cell.parse::<bool>() {
                json!(b)
            } else {
                return Err(CliError::Data(format!(
                    "{}: bad cell `{cell}`",
                    path.display()
                )));
            };
            col.1.push(v);
        }
    }
    Ok(cols)
}

/// Merges the evaluation CSVs and summaries of `input` into a single
/// plot-ready `bundle.json` plus a plain-text `report.txt`.
pub fn cmd_report(input: &Path, out: &Path) -> Result<Manifest, CliError> {
    create_dir(out)?;
    let summary_path = input.join(SUMMARY);
    let summary: Value = serde_json::from_str(
        &std::fs::read_to_string(&summary_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", summary_path.display())))?,
    )?;
    let eval_manifest: Value = match std::fs::read_to_string(input.join(EVAL_MANIFEST)) {
        Ok(t) => serde_json::from_str(&t)?,
        Err(_) => Value::Null,
    };
    let cfg: ExperimentConfig = match eval_manifest.get("config") {
        Some(c) => serde_json::from_value(c.clone()).map_err(|e| CliError::Data(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    let mut manifest = Manifest::new("report", &cfg);
    let mut curves = serde_json::Map::new();
    for (key, name) in [
        ("nmse", NMSE_CSV),
        ("magnitude_error", MAG_CSV),
        ("ild_error_freq", ILD_FREQ_CSV),
        ("ild_error_angle", ILD_ANGLE_CSV),
        ("sweep", SWEEP_CSV),
    ] {
        let path = input.join(name);
        if !path.exists() {
            if key == "sweep" {
                continue;
            }
            return Err(CliError::Data(format!("missing {}", path.display())));
        }
        manifest.add_input(&path)?;
        let cols = read_csv_columns(&path)?;
        curves.insert(
            key.into(),
            Value::Object(
                cols.into_iter()
                    .map(|(k, v)| (k, Value::Array(v)))
                    .collect(),
            ),
        );
    }
    manifest.add_input(&summary_path)?;
    let bundle = json!({ "summary": summary, "curves": curves });
    let mut text = serde_json::to_string_pretty(&bundle)?;
    text.push('\n');
    std::fs::write(out.join("bundle.json"), text)?;
    std::fs::write(out.join("report.txt"), report_text(&summary))?;
    manifest.add_output(out, "bundle.json")?;
    manifest.add_output(out, "report.txt")?;
    manifest.results = summary;
    manifest.write(&out.join("report_manifest.json"))?;
    Ok(manifest)
}

fn report_text(summary: &Value) -> String {
    let num = |v: &Value| {
        v.as_f64()
            .map(|x| format!("{x:.2}"))
            .unwrap_or_else(|| "n/a".into())
    };
    let mut s = String::new();
    s.push_str(
        "method    ild_err_db  front_db  rear_db  mag_err_sel_db  mag_err_band_db  nmse_band_db\n",
    );
    if let Some(methods) = summary["methods"].as_array() {
        for m in methods {
            s.push_str(&format!(
                "{:<9} {:>10} {:>9} {:>8} {:>15} {:>16} {:>13}\n",
                m["name"].as_str().unwrap_or("?"),
                num(&m["ild_error_db"]),
                num(&m["ild_error_front_db"]),
                num(&m["ild_error_rear_db"]),
                num(&m["mag_error_selection_band_db"]),
                num(&m["mag_error_band_db"]),
                num(&m["nmse_band_db"]),
            ));
        }
    }
    s.push_str(&format!(
        "\nILD gain imagls vs magls: {} dB (front {} dB, rear {} dB)\n",
        num(&summary["ild_gain_db"]),
        num(&summary["front_gain_db"]),
        num(&summary["rear_gain_db"])
    ));
    s.push_str(&format!(
        "magnitude degradation in selection band: {} dB\n",
        num(&summary["mag_degradation_db"])
    ));
    let reference = match summary["reference_band_reached"].as_bool() {
        Some(true) => "reached",
        Some(false) => "not reached",
        None => "not applicable (synthetic HRTF)",
    };
    s.push_str(&format!(
        "reference ILD gain band 3.8 +- 1.5 dB: {reference}\n"
    ));
    s
}

/// Reads the first four bytes and the kind tag of a `BSMF` file.
fn is_fir_file(path: &Path) -> Result<bool, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if bytes.len() < 12 || bytes[..4] != BANK_MAGIC {
        return Err(CliError::Data(format!(
            "{} is not a BSMF file",
            path.display()
        )));
    }
    Ok(u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) == FIR_KIND_TAG)
}

/// Renders a multichannel recording to binaural stereo with a bank (per-bin
/// filters are converted to FIRs first) or an FIR set.
pub fn cmd_render(
    bank: &Path,
    wav_in: &Path,
    wav_out: &Path,
    taps: usize,
    cfg: &ExperimentConfig,
) -> Result<Manifest, CliError> {
    let audio = MultichannelAudio::read_wav(wav_in)?;
    let fir = if is_fir_file(bank)? {
        FirSet::load(bank)?
    } else {
        filters_to_fir(&FilterBank::load(bank)?, taps, audio.sample_rate_hz)?
    };
    let stereo = render_binaural(&audio, &fir)?;
    stereo.write_wav(wav_out, bsm_core::render::WavFormat::Float32)?;
    let mut manifest = Manifest::new("render", cfg);
    manifest.add_input(bank)?;
    manifest.add_input(wav_in)?;
    let dir = wav_out.parent().unwrap_or(Path::new("."));
    let name = wav_out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    manifest.add_output(dir, &name)?;
    manifest.results =
        json!({ "taps": fir.taps, "sample_rate_hz": fir.sample_rate_hz, "samples": stereo.len() });
    manifest.write(&sidecar(wav_out))?;
    Ok(manifest)
}

/// Parses `theta,phi` in degrees.
pub fn parse_direction(text: &str) -> Result<Direction, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| CliError::Config(format!("bad direction `{text}`")))
    };
    match parts.as_slice() {
        [t, p] => Direction::from_degrees(parse(t)?, parse(p)?)
            .map_err(|e| CliError::Config(e.to_string())),
        _ => Err(CliError::Config(format!(
            "direction must be `theta_deg,phi_deg`, got `{text}`"
        ))),
    }
}

/// Simulates the microphone signals of a far-field source.
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    geometry_path: Option<&Path>,
    direction: &Direction,
    wav_in: &Path,
    wav_out: &Path,
    taps: usize,
) -> Result<Manifest, CliError> {
    let geometry = match geometry_path {
        Some(p) => bsm_core::ArrayGeometry::load(p)?,
        None => load_geometry(cfg)?,
    };
    let source = MultichannelAudio::read_wav(wav_in)?;
    if source.num_channels() != 1 {
        return Err(CliError::Data(format!(
            "source must be mono, got {} channels",
            source.num_channels()
        )));
    }
    let mics = simulate_mic_signals(
        &geometry,
        &source.samples[0],
        direction,
        source.sample_rate_hz,
        taps,
    )?;
    mics.write_wav(wav_out, bsm_core::render::WavFormat::Float32)?;
    let mut manifest = Manifest::new("simulate", cfg);
    if let Some(p) = geometry_path {
        manifest.add_input(p)?;
    }
    manifest.add_input(wav_in)?;
    let dir = wav_out.parent().unwrap_or(Path::new("."));
    let name = wav_out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    manifest.add_output(dir, &name)?;
    manifest.results = json!({
        "direction_deg": [direction.theta.to_degrees(), direction.phi.to_degrees()],
        "taps": taps,
        "channels": mics.num_channels(),
    });
    manifest.write(&sidecar(wav_out))?;
    Ok(manifest)
}

/// `<file>.manifest.json` next to an output file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
