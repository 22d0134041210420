use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sadl_cli::DensityFile;
use tempfile::TempDir;

fn sadl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sadl")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parses `key=value` tokens from one output line.
fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|t| t.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line:?}"))
        .parse()
        .unwrap()
}

#[test]
fn empty_annotations_give_zero_sum_and_black_heatmap() {
    let dir = TempDir::new().unwrap();
    let ann = write(&dir, "a.json", r#"{"width": 32, "height": 32, "points": []}"#);
    let (out, pgm) = (dir.path().join("d.bin"), dir.path().join("h.pgm"));
    let o = sadl(&["gen-density", "--annotations", s(&ann), "--beta", "8", "--out", s(&out), "--heatmap", s(&pgm)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "sum=0.000000\n");
    let bytes = fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
    assert!(bytes[13..].iter().all(|&b| b == 0));
    assert_eq!(bytes.len(), 13 + 32 * 32);
    assert_eq!(DensityFile::read(&out).unwrap().values, vec![0.0; 1024]);
}

#[test]
fn interior_head_integrates_to_one() {
    let dir = TempDir::new().unwrap();
    let ann = write(&dir, "a.json", r#"{"width": 64, "height": 48, "points": [[30.2, 25.7]]}"#);
    let out = dir.path().join("d.bin");
    let o = sadl(&["gen-density", "--annotations", s(&ann), "--beta", "8", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!((field(stdout(&o).trim(), "sum") - 1.0).abs() <= 1e-4);

    let o = sadl(&["gen-density", "--annotations", s(&ann), "--scale", "2", "--beta", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let f = DensityFile::read(&out).unwrap();
    assert_eq!((f.scale, f.factor, f.width, f.height), (2, 2, 32, 24));
}

#[test]
fn malformed_annotations_exit_2_without_output() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.bin");
    for text in [
        "{not json",
        r#"{"width": 32, "points": []}"#,
        r#"{"width": 32, "height": 32, "points": [[40, 1]]}"#,
    ] {
        let ann = write(&dir, "a.json", text);
        let o = sadl(&["gen-density", "--annotations", s(&ann), "--beta", "8", "--out", s(&out)]);
        assert_eq!(code(&o), 2, "{text}");
        assert!(!out.exists());
        let err = String::from_utf8(o.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
    }
}

#[test]
fn io_failures_exit_3() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    let o = sadl(&["gen-density", "--annotations", s(&missing), "--beta", "8", "--out", "x.bin"]);
    assert_eq!(code(&o), 3);

    let ann = write(&dir, "a.json", r#"{"width": 8, "height": 8}"#);
    let unwritable = dir.path().join("no/such/dir/d.bin");
    let o = sadl(&["gen-density", "--annotations", s(&ann), "--beta", "8", "--out", s(&unwritable)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&sadl(&["gen-density"])), 2);
    assert_eq!(code(&sadl(&["no-such-command"])), 2);
    assert_eq!(code(&sadl(&["verify", "--suite", "everything"])), 2);
    let dir = TempDir::new().unwrap();
    let ann = write(&dir, "a.json", r#"{"width": 8, "height": 8}"#);
    let out = dir.path().join("d.bin");
    let o = sadl(&["gen-density", "--annotations", s(&ann), "--beta", "-1", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

fn mean_preds(dir: &TempDir, ann: &Path) -> Vec<PathBuf> {
    // With alpha = beta1 = 8 the expected density at scale s is a Gaussian
    // of variance 8 + 8 / 2^(s-1).
    [(1, "16"), (2, "12"), (3, "10")]
        .iter()
        .map(|(scale, var)| {
            let p = dir.path().join(format!("mean{scale}.bin"));
            let o = sadl(&[
                "gen-density", "--annotations", s(ann), "--scale", &scale.to_string(), "--beta", var, "--out", s(&p),
            ]);
            assert_eq!(code(&o), 0);
            p
        })
        .collect()
}

#[test]
fn loss_of_mean_maps_is_small() {
    let dir = TempDir::new().unwrap();
    let ann = write(&dir, "a.json", r#"{"width": 192, "height": 192, "points": [[90.0, 100.0]]}"#);
    let preds = mean_preds(&dir, &ann);
    let mut args = vec!["loss", "--annotations", s(&ann), "--pred"];
    args.extend(preds.iter().map(|p| s(p)));
    let o = sadl(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    for (s, line) in lines[..3].iter().enumerate() {
        assert!(line.starts_with(&format!("scale={} quad=", s + 1)));
    }
    assert!(field(lines[3], "total") <= 1e-2, "{text}");
}

#[test]
fn loss_of_zero_maps_counts_every_head_on_every_scale() {
    let dir = TempDir::new().unwrap();
    let ann = write(&dir, "a.json", r#"{"width": 40, "height": 36, "points": [[5, 5], [20, 18], [33.5, 30]]}"#);
    let cfg = write(&dir, "c.json", r#"{"num_scales": 2, "alpha": 4}"#);
    let preds: Vec<PathBuf> = [(1u32, 40u32, 36u32), (2, 20, 18)]
        .iter()
        .map(|&(scale, w, h)| {
            let p = dir.path().join(format!("zero{scale}.bin"));
            DensityFile {
                scale,
                factor: 1 << (scale - 1),
                width: w,
                height: h,
                values: vec![0.0; (w * h) as usize],
            }
            .write(&p)
            .unwrap();
            p
        })
        .collect();
    let o = sadl(&["loss", "--annotations", s(&ann), "--config", s(&cfg), "--pred", s(&preds[0]), s(&preds[1])]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reg: f64 = stdout(&o).lines().filter(|l| l.starts_with("scale=")).map(|l| field(l, "reg")).sum();
    assert!((reg - 6.0).abs() <= 1e-9, "{reg}");
}

#[test]
fn loss_rejects_mismatched_predictions() {
    let dir = TempDir::new().unwrap();
    let ann = write(&dir, "a.json", r#"{"width": 32, "height": 32, "points": [[10, 10]]}"#);
    let preds = mean_preds(&dir, &ann);
    // Scales out of order.
    let o = sadl(&["loss", "--annotations", s(&ann), "--pred", s(&preds[1]), s(&preds[0]), s(&preds[2])]);
    assert_eq!(code(&o), 2);
    // Too few scales.
    let o = sadl(&["loss", "--annotations", s(&ann), "--pred", s(&preds[0])]);
    assert_eq!(code(&o), 2);
    // Grid of a different image.
    let other = write(&dir, "b.json", r#"{"width": 30, "height": 32}"#);
    let o = sadl(&["loss", "--annotations", s(&other), "--pred", s(&preds[0]), s(&preds[1]), s(&preds[2])]);
    assert_eq!(code(&o), 2);
    // Truncated density file.
    let bytes = fs::read(&preds[0]).unwrap();
    fs::write(&preds[0], &bytes[..bytes.len() - 3]).unwrap();
    let o = sadl(&["loss", "--annotations", s(&ann), "--pred", s(&preds[0]), s(&preds[1]), s(&preds[2])]);
    assert_eq!(code(&o), 2);
}

fn assert_all_pass(o: &Output) {
    let text = stdout(o);
    assert_eq!(code(o), 0, "{text}");
    assert!(!text.is_empty());
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn verify_suites_pass_on_seed_7() {
    assert_all_pass(&sadl(&["verify", "--suite", "lowrank", "--seed", "7"]));
    assert_all_pass(&sadl(&["verify", "--suite", "gradient", "--seed", "7"]));
    assert_all_pass(&sadl(&["verify", "--suite", "moments", "--seed", "7", "--samples", "100000", "--instances", "4"]));
}

#[test]
fn corrupted_tolerance_fails_verification() {
    let o = sadl(&["verify", "--suite", "lowrank", "--seed", "7", "--tolerance-scale", "-1"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL ")));
}

#[test]
fn fit_is_deterministic_and_writes_heatmaps() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        &dir,
        "spec.json",
        r#"{"width": 32, "height": 32, "heads": {"fixed": 4}, "jitter_alpha": 2.0, "seed": 3}"#,
    );
    let run = |tag: &str| {
        let report = dir.path().join(format!("report{tag}.json"));
        let maps = dir.path().join(format!("maps{tag}"));
        let o = sadl(&["fit", "--spec", s(&spec), "--report", s(&report), "--heatmaps", s(&maps)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let pgms: Vec<Vec<u8>> = (1..=3).map(|k| fs::read(maps.join(format!("scale{k}.pgm"))).unwrap()).collect();
        (stdout(&o), fs::read(report).unwrap(), pgms)
    };
    let first = run("a");
    assert_eq!(first, run("b"));

    let report: serde_json::Value = serde_json::from_slice(&first.1).unwrap();
    assert_eq!(report["gt_count"], 4);
    assert_eq!(report["counts"].as_array().unwrap().len(), 3);
    assert!(report["trajectory"].as_array().unwrap().len() >= 2);
    assert!(first.2[0].starts_with(b"P5\n32 32\n255\n"));
    assert!(first.2[2].starts_with(b"P5\n8 8\n255\n"));
}

#[test]
fn fit_from_annotations() {
    let dir = TempDir::new().unwrap();
    let ann = write(&dir, "a.json", r#"{"width": 24, "height": 24, "points": [[12, 12]]}"#);
    let cfg = write(&dir, "c.json", r#"{"num_scales": 1}"#);
    let report = dir.path().join("r.json");
    let o = sadl(&["fit", "--annotations", s(&ann), "--config", s(&cfg), "--report", s(&report)]);
    assert_eq!(code(&o), 0);
    let count = field(stdout(&o).lines().next().unwrap(), "count");
    assert!((count - 1.0).abs() <= 0.05, "{count}");
    assert_eq!(code(&sadl(&["fit", "--report", s(&report)])), 2);
}

#[test]
fn sweep_tables() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "spec.json", r#"{"width": 32, "height": 32, "heads": {"fixed": 3}}"#);
    let out = dir.path().join("t.csv");

    let o = sadl(&["sweep", "--alpha-grid", "8", "--beta-grid", "8", "--seeds", "2", "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(&out).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert_eq!(table.lines().next().unwrap(), "alpha,beta1,mae");

    let o = sadl(&[
        "sweep", "--alpha-grid", "2,8,32", "--beta-grid", "2,8,32", "--seeds", "2", "--spec", s(&spec), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let table = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<f64>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r[2].is_finite() && r[2] >= 0.0));
    assert_eq!((rows[1][0], rows[1][1]), (2.0, 8.0));

    let o = sadl(&["sweep", "--alpha-grid", "8", "--beta-grid", "8", "--seeds", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}
