use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_MODEL: &str = "depth=2\nbase_channels=4\nds_scales=2\ndisc_base_channels=4\ndisc_depth=2\n";

fn aranet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aranet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = aranet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small_dataset(root: &Path) -> PathBuf {
    let data = root.join("data");
    ok(&["phantom", "gen", "--n", "4", "--seed", "3", "--grid", "2,16,16", "--split", "2,1,1", "--out", s(&data)]);
    let cfg = root.join("small.cfg");
    std::fs::write(&cfg, SMALL_MODEL).unwrap();
    data
}

#[test]
fn phantom_gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["phantom", "gen", "--n", "10", "--seed", "7", "--grid", "2,16,16", "--out", s(out)]);
    }
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn phantom_gen_honours_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["phantom", "gen", "--n", "10", "--split", "8,1,1", "--grid", "1,16,16", "--out", s(dir.path())]);
    assert!(stdout.contains("train 8, val 1, test 1"), "{stdout}");
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let count = |split: &str| manifest.lines().filter(|l| l.split_whitespace().nth(1) == Some(split)).count();
    assert_eq!((count("train"), count("val"), count("test")), (8, 1, 1));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aranet(&["phantom", "gen", "--n", "0", "--out", s(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("nowhere");
    let out = aranet(&["train", "--data", s(&missing), "--out", s(&dir.path().join("m.ackpt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
    let v = dir.path().join("v.dvol");
    let out = aranet(&["eval", "--pred", s(&v), "--truth", s(&v), "--masks", s(dir.path()), "--out", s(&v)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--prescription"));
    assert_eq!(aranet(&["train", "--arm", "resnet"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ackpt");
    std::fs::write(&bad, b"ARACKPT1 but not really").unwrap();
    let data = small_dataset(dir.path());
    let case = data.join("case_000");
    let out = aranet(&["predict", "--ckpt", s(&bad), "--sample", s(&case), "--out", s(&dir.path().join("p.dvol"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unet_log_has_zero_adversarial_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let ckpt = dir.path().join("unet.ackpt");
    let log = dir.path().join("unet.csv");
    let cfg = dir.path().join("small.cfg");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--arm", "unet", "--steps", "3", "--out", s(&ckpt), "--log", s(&log)]);
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header, ["step", "total", "l_g", "l_final", "l_ds", "l_adv_g", "l_adv_d"]);
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[5] == 0.0 && r[6] == 0.0));
}

#[test]
fn resumed_run_reproduces_the_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("small.cfg");
    let p = |n: &str| dir.path().join(n);
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--steps", "4", "--out", s(&p("full.ackpt")), "--log", s(&p("full.csv"))]);
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--steps", "2", "--out", s(&p("half.ackpt")), "--log", s(&p("split.csv"))]);
    ok(&[
        "train", "--data", s(&data), "--config", s(&cfg), "--steps", "4", "--resume", s(&p("half.ackpt")), "--out", s(&p("resumed.ackpt")),
        "--log", s(&p("split.csv")),
    ]);
    assert_eq!(std::fs::read(p("full.csv")).unwrap(), std::fs::read(p("split.csv")).unwrap());
    assert_eq!(std::fs::read(p("full.ackpt")).unwrap(), std::fs::read(p("resumed.ackpt")).unwrap());
}

#[test]
fn config_file_loses_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("steps.cfg");
    std::fs::write(&cfg, format!("{SMALL_MODEL}steps=7\narm=unet\n")).unwrap();
    let log = dir.path().join("l.csv");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--steps", "2", "--out", s(&dir.path().join("m.ackpt")), "--log", s(&log)]);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);
    std::fs::write(&cfg, "depth=two\n").unwrap();
    let out = aranet(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("m.ackpt"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_eval_report_and_diffmap() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("small.cfg");
    let p = |n: &str| dir.path().join(n);
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--steps", "2", "--out", s(&p("m.ackpt"))]);
    let case = data.join("case_000");
    ok(&["predict", "--ckpt", s(&p("m.ackpt")), "--sample", s(&case), "--out", s(&p("pred.dvol"))]);
    assert!(std::fs::read(p("pred.dvol")).unwrap().starts_with(b"DVOL1 shape=2,16,16 "));

    let truth = case.join("dose.dvol");
    ok(&["eval", "--pred", s(&truth), "--truth", s(&truth), "--masks", s(&case), "--prescription", "45", "--out", s(&p("self.csv"))]);
    let csv = std::fs::read_to_string(p("self.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "structure,kind,D98,D95,D50,D2,Dmean,V50,CI,HI");
    let ape: Vec<&str> = csv.lines().filter(|l| l.split(',').nth(1) == Some("ape_percent")).collect();
    assert_eq!(ape.len(), 6);
    for row in ape {
        assert!(row.split(',').skip(2).all(|v| v.is_empty() || v == "0.000"), "{row}");
    }
    assert!(csv.lines().next().is_some_and(|_| csv.lines().nth(1).unwrap().starts_with("ptv,truth")));

    ok(&["eval", "--pred", s(&p("pred.dvol")), "--truth", s(&truth), "--masks", s(&case), "--prescription", "45", "--out", s(&p("pred.csv"))]);

    let table = p("table.csv");
    let stdout = ok(&["report", "--ckpt", s(&p("m.ackpt")), "--data", s(&data), "--split", "train", "--out", s(&table)]);
    assert!(stdout.starts_with("metric,mean_percent,std_percent\nD95,"));
    let text = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let (body, footer) = rows.split_at(rows.len() - 1);
    assert_eq!(footer[0][0], "mean");
    for col in 1..footer[0].len() {
        let mean = body.iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>() / body.len() as f64;
        assert!((mean - footer[0][col].parse::<f64>().unwrap()).abs() < 1e-5);
    }

    let stdout = ok(&["diffmap", "--pred", s(&truth), "--truth", s(&truth), "--out", s(&p("same.pgm"))]);
    assert_eq!(stdout.trim(), "max_abs_diff_gy,0");
    let pgm = std::fs::read(p("same.pgm")).unwrap();
    let header = b"P5\n16 32\n255\n";
    assert!(pgm.starts_with(header));
    assert!(pgm[header.len()..].iter().all(|&v| v == 0));
    assert_eq!(pgm.len(), header.len() + 16 * 32);
    ok(&["diffmap", "--pred", s(&p("pred.dvol")), "--truth", s(&truth), "--out", s(&p("diff.pgm"))]);
}
