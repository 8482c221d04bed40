#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn spec(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name)
}

/// Runs the binary inside `dir`, so relative paths in reports stay stable.
pub fn koopreg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopreg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Full pipeline into `dir/out`: synth, every simulation scenario, verify.
pub fn pipeline(dir: &Path) {
    let spec = spec("example.spec");
    let spec = spec.to_str().unwrap();
    let base = ["--out-dir", "out"];
    for cmd in ["check", "lift", "synth"] {
        let out = koopreg(dir, &[&[cmd, spec][..], &base].concat());
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let ctrl = ["--controller", "out/controller.json"];
    for (model, scenario) in [
        ("bilinear", "undisturbed"),
        ("bilinear", "disturbed"),
        ("nonlinear", "disturbed"),
        ("bilinear", "error"),
    ] {
        let args = [
            &["simulate", spec, "--model", model, "--scenario", scenario, "--certificate", "out/certificate.json"][..],
            &base,
            &ctrl,
        ]
        .concat();
        let out = koopreg(dir, &args);
        assert_eq!(code(&out), 0, "simulate {model} {scenario}");
    }
    let out = koopreg(dir, &[&["verify", spec, "--certificate", "out/certificate.json"][..], &base, &ctrl].concat());
    assert_eq!(code(&out), 0, "verify: {}", String::from_utf8_lossy(&out.stdout));
}
