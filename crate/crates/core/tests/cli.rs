use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gga_core::eval::DetectionReport;

const SUBCOMMANDS: [&str; 8] = ["gen", "train", "attack", "csm", "fit-detector", "detect", "eval", "landscape"];

fn gga(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gga"))
        .args(args)
        .env("GGA_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/blobs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn assert_close(a: f64, b: f64, what: &str) {
    assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{what}: {a} vs {b}");
}

fn assert_reports_match(got: &DetectionReport, want: &DetectionReport) {
    let (g, w) = (&got.row, &want.row);
    for (a, b, what) in [(g.auroc, w.auroc, "auroc"), (g.aupr_in, w.aupr_in, "aupr_in"), (g.aupr_out, w.aupr_out, "aupr_out")] {
        assert_close(a, b, what);
    }
    assert_eq!(got.tags.len(), want.tags.len());
    for (a, b) in got.tags.iter().zip(&want.tags) {
        assert_eq!((&a.tag, a.count), (&b.tag, b.count));
        assert_close(a.tnr, b.tnr, &a.tag);
        assert_close(a.auroc, b.auroc, &a.tag);
    }
    assert_close(got.threshold, want.threshold, "threshold");
    assert_eq!(got.positives, want.positives);
}

#[test]
fn help_exits_zero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gga(&["--help"], dir.path()).status.code(), Some(0));
    for sub in SUBCOMMANDS {
        let out = gga(&[sub, "--help"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gga(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = gga(&["attack", "--model", "nope.ggam", "--data", "nope.ggad", "--spec", "pgd"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let bad_spec = gga(&["attack", "--model", &fixture("model.ggam"), "--data", &fixture("test.ggad"), "--spec", "pgd:eps=-1"], dir.path());
    assert_eq!(bad_spec.status.code(), Some(1));
    let wrong_kind = gga(&["attack", "--model", &fixture("test.ggad"), "--data", &fixture("test.ggad"), "--spec", "pgd"], dir.path());
    assert_eq!(wrong_kind.status.code(), Some(2));
}

#[test]
fn eval_reproduces_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = gga(
        &[
            "--seed", "7", "eval",
            "--model", &fixture("model.ggam"),
            "--detector", &fixture("detector.ggal"),
            "--clean", &fixture("test.ggad"),
            "--untrusted", &fixture("pgd.ggad"), &fixture("noise.ggad"),
            "-o", "report",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let got = DetectionReport::from_json(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let want = DetectionReport::from_json(&std::fs::read_to_string(fixture("golden-report.json")).unwrap()).unwrap();
    assert_reports_match(&got, &want);
    for f in ["report.csv", "report-tags.csv", "report.json.manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn manifest_rerun_is_bit_identical() {
    let first = tempfile::tempdir().unwrap();
    let out = gga(
        &["--seed", "11", "attack", "--model", &fixture("model.ggam"), "--data", &fixture("test.ggad"), "--spec", "pgd:eps=0.1:iters=10", "--limit", "40", "-o", "adv.ggad"],
        first.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&first.path().join("adv.ggad.manifest.json"));
    assert_eq!(m["seed"], 11);
    let argv: Vec<String> = m["argv"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let second = tempfile::tempdir().unwrap();
    let args: Vec<&str> = argv[1..].iter().map(String::as_str).collect();
    assert_eq!(gga(&args, second.path()).status.code(), Some(0));
    let a = std::fs::read(first.path().join("adv.ggad")).unwrap();
    let b = std::fs::read(second.path().join("adv.ggad")).unwrap();
    assert_eq!(a, b);
    let hash = m["outputs"].as_object().unwrap().values().next().unwrap().as_str().unwrap().to_string();
    assert_eq!(hash, manifest(&second.path().join("adv.ggad.manifest.json"))["outputs"].as_object().unwrap().values().next().unwrap().as_str().unwrap());
    assert_eq!(m["inputs"].as_object().unwrap().len(), 2);
}

#[cfg(unix)]
#[test]
fn full_pipeline_is_deterministic_and_matches_golden() {
    let run = || -> PathBuf {
        let dir = tempfile::tempdir().unwrap().keep();
        let status = Command::new("sh")
            .arg(fixture("pipeline.sh"))
            .arg(env!("CARGO_BIN_EXE_gga"))
            .arg(&dir)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        dir
    };
    let (a, b) = (run(), run());
    for f in ["train.ggad", "model.ggam", "pgd.ggad", "detector.ggal", "report.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let got = DetectionReport::from_json(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let want = DetectionReport::from_json(&std::fs::read_to_string(fixture("golden-report.json")).unwrap()).unwrap();
    assert_reports_match(&got, &want);
    for d in [a, b] {
        std::fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn config_file_sits_below_explicit_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.toml");
    std::fs::write(&cfg, "n = 30\nclasses = 3\ndim = 4\nseparation = 3.0\n").unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    let out = gga(&["--config", &cfg, "gen", "--n", "12", "-o", "a.ggad"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ds = gga_core::data::LabeledDataset::load(dir.path().join("a.ggad")).unwrap();
    assert_eq!((ds.len(), ds.num_classes(), ds.input_shape().unwrap()), (12, 3, &[4usize][..]));
    std::fs::write(dir.path().join("bad.toml"), "no_such_flag = 1\n").unwrap();
    let bad = dir.path().join("bad.toml").to_string_lossy().into_owned();
    assert_eq!(gga(&["--config", &bad, "gen"], dir.path()).status.code(), Some(1));
}

#[test]
fn stages_chain_without_editing() {
    let dir = tempfile::tempdir().unwrap();
    let ok = |args: &[&str]| {
        let out = gga(args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    let model = fixture("model.ggam");
    let test = fixture("test.ggad");
    let csm = ok(&["csm", "--model", &model, "--data", &test, "--index", "2", "--top-n", "3", "--pgm", "m.pgm"]);
    let text = String::from_utf8_lossy(&csm.stdout).into_owned();
    assert_eq!(text.lines().next(), Some("3"));
    assert!(std::fs::read(dir.path().join("m.pgm")).unwrap().starts_with(b"P5"));
    ok(&["detect", "--model", &model, "--detector", &fixture("detector.ggal"), "--data", &fixture("noise.ggad"), "-o", "s.csv"]);
    let scores = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(scores.lines().count(), 151);
    ok(&["attack", "--model", &model, "--data", &test, "--spec", "boundary:eps=0.3:iters=10", "--limit", "10", "-o", "b.ggad"]);
    let b = dir.path().join("b.ggad").to_string_lossy().into_owned();
    ok(&["eval", "--model", &model, "--clean", &test, "--untrusted", &b, "--msp", "-o", "msp"]);
    ok(&["landscape", "--model", &model, "--data", &test, "--samples", "3", "--injections", "20", "-o", "z.csv"]);
    ok(&["landscape", "--model", &model, "--data", &test, "--probe", "surface", "--spec", "pgd:eps=0.2", "--grid", "5", "-o", "s.csv"]);
    let surface = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(surface.lines().count(), 26);
}
