//! End-to-end runs of the `bsm` binary on the seconds-scale configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsm"))
        .args(args)
        .output()
        .expect("spawn bsm")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.cfg")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn design_and_evaluate(config: &Path, out: &Path) {
    let o = bsm(&["design", "--config", s(config), "--out", s(out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bsm(&["evaluate", "--config", s(config), "--out", s(out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn write_mono_wav(path: &Path, samples: &[f64], fs: u32) {
    let audio = bsm_core::MultichannelAudio::new(fs as f64, vec![samples.to_vec()]).unwrap();
    audio
        .write_wav(path, bsm_core::render::WavFormat::Float32)
        .unwrap();
}

#[test]
fn design_evaluate_report_produce_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    design_and_evaluate(&smoke_config(), &out);
    for f in [
        "mse.bsmf",
        "magls.bsmf",
        "imagls.bsmf",
        "mse_magls.bsmf",
        "mse_imagls.bsmf",
        "imagls_lambda_0.01.bsmf",
        "imagls_lambda_0.1.bsmf",
        "imagls_history.csv",
        "sweep.csv",
        "manifest.json",
        "nmse.csv",
        "magnitude_error.csv",
        "ild_error_freq.csv",
        "ild_error_angle.csv",
        "summary.json",
        "evaluate_manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let header = |f: &str| {
        std::fs::read_to_string(out.join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(
        header("nmse.csv"),
        "freq_hz,nmse_db_mse,nmse_db_magls,nmse_db_imagls"
    );
    assert_eq!(
        header("magnitude_error.csv"),
        "freq_hz,mag_err_db_mse,mag_err_db_magls,mag_err_db_imagls"
    );
    assert_eq!(
        header("ild_error_freq.csv"),
        "f0_hz,ild_err_db_mse,ild_err_db_magls,ild_err_db_imagls"
    );
    assert_eq!(
        header("ild_error_angle.csv"),
        "phi_deg,ild_db_target,ild_db_mse,ild_db_magls,ild_db_imagls,ild_err_db_mse,ild_err_db_magls,ild_err_db_imagls"
    );
    assert_eq!(
        header("imagls_history.csv"),
        "iter,total,mag_l,mag_r,ild,grad_norm,step"
    );

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "bsm");
    assert_eq!(manifest["command"], "design");
    assert_eq!(manifest["outputs"]["mse.bsmf"].as_str().unwrap().len(), 64);

    let o = bsm(&["report", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bundle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report/bundle.json")).unwrap())
            .unwrap();
    assert!(
        bundle["curves"]["nmse"]["freq_hz"]
            .as_array()
            .unwrap()
            .len()
            > 10
    );
    let text = std::fs::read_to_string(out.join("report/report.txt")).unwrap();
    assert!(text.contains("not applicable (synthetic HRTF)"));
}

#[test]
fn rerun_from_manifest_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    design_and_evaluate(&smoke_config(), &a);
    design_and_evaluate(&a.join("manifest.json"), &b);
    for f in [
        "mse.bsmf",
        "magls.bsmf",
        "imagls.bsmf",
        "nmse.csv",
        "ild_error_angle.csv",
        "summary.json",
        "sweep.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn flags_override_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bsm(&[
        "design",
        "--config",
        s(&smoke_config()),
        "--out",
        s(&out),
        "--lambda",
        "0.05",
        "--crossover-hz",
        "2000",
        "--threads",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["imagls"]["lambda"], 0.05);
    assert_eq!(
        m["config"]["imagls"]["lambda_sweep"]
            .as_array()
            .unwrap()
            .len(),
        0
    );
    assert_eq!(m["config"]["design"]["crossover_hz"], 2000.0);
    assert_eq!(m["results"]["selected_lambda"], 0.05);
    assert!(!out.join("imagls_lambda_0.05.bsmf").exists());
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = bsm(&[
        "evaluate",
        "--config",
        s(&smoke_config()),
        "--out",
        s(&d.join("empty")),
    ]);
    assert_eq!(o.status.code(), Some(3));

    let bad = d.join("bad.cfg");
    std::fs::write(&bad, "[design]\nnoise_ratio = -1.0\n").unwrap();
    assert_eq!(
        bsm(&["design", "--config", s(&bad), "--out", s(&d.join("x"))])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(&bad, "[unknown]\n").unwrap();
    assert_eq!(
        bsm(&["design", "--config", s(&bad), "--out", s(&d.join("x"))])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        bsm(&[
            "design",
            "--config",
            s(&d.join("none.cfg")),
            "--out",
            s(&d.join("x"))
        ])
        .status
        .code(),
        Some(2)
    );

    let garbage = d.join("garbage.bsmf");
    std::fs::write(&garbage, b"not a bank").unwrap();
    let wav = d.join("in.wav");
    write_mono_wav(&wav, &[0.0; 64], 48000);
    let o = bsm(&["render", s(&garbage), s(&wav), "--out", s(&d.join("o.wav"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_then_render_produces_stereo() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = d.join("run");
    let o = bsm(&["design", "--config", s(&smoke_config()), "--out", s(&out)]);
    assert!(o.status.success());

    let src = d.join("src.wav");
    let mut impulse = vec![0.0; 2048];
    impulse[0] = 0.5;
    write_mono_wav(&src, &impulse, 48000);
    let mics = d.join("mics.wav");
    let o = bsm(&[
        "simulate",
        s(&src),
        "--direction",
        "90,-30",
        "--out",
        s(&mics),
        "--config",
        s(&smoke_config()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = bsm_core::MultichannelAudio::read_wav(&mics).unwrap();
    assert_eq!(m.num_channels(), 6);

    let bin = d.join("bin.wav");
    let o = bsm(&[
        "render",
        s(&out.join("mse_imagls.bsmf")),
        s(&mics),
        "--out",
        s(&bin),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stereo = bsm_core::MultichannelAudio::read_wav(&bin).unwrap();
    assert_eq!(stereo.num_channels(), 2);
    let energy: Vec<f64> = stereo
        .samples
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum())
        .collect();
    // Source on the right: the right ear must be louder.
    assert!(energy[1] > energy[0], "{energy:?}");
    assert!(d.join("bin.wav.manifest.json").exists());

    // Silence renders to silence.
    let silent = d.join("silent.wav");
    bsm_core::MultichannelAudio::new(48000.0, vec![vec![0.0; 512]; 6])
        .unwrap()
        .write_wav(&silent, bsm_core::render::WavFormat::Float32)
        .unwrap();
    let o = bsm(&[
        "render",
        s(&out.join("mse.bsmf")),
        s(&silent),
        "--out",
        s(&d.join("s.wav")),
    ]);
    assert!(o.status.success());
    let st = bsm_core::MultichannelAudio::read_wav(d.join("s.wav")).unwrap();
    assert!(st.samples.iter().flatten().all(|&x| x == 0.0));
}
