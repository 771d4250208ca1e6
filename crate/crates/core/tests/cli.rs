use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use volcraft::datagen::default_corpus_spec;

fn volcraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volcraft"))
        .args(args)
        .env("VOLCRAFT_THREADS", "2")
        .output()
        .expect("spawn volcraft")
}

fn ok(args: &[&str]) -> Output {
    let out = volcraft(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is a JSON error")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// Two assets, 40 days: small enough to train in a second.
fn small_corpus(dir: &Path) -> PathBuf {
    let mut spec = default_corpus_spec(3);
    spec.assets.truncate(2);
    for a in &mut spec.assets {
        a.n_days = 40;
    }
    let spec_path = dir.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let data = dir.join("data");
    ok(&[
        "gen-data",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    data
}

fn tiny_model(dir: &Path, data: &Path, name: &str, decoder: &str) -> String {
    let out = p(dir, name);
    let train = p(data, "train.csv");
    ok(&[
        "train",
        "--surfaces",
        &train,
        "--latent-dim",
        "2",
        "--epochs",
        "15",
        "--seed",
        "4",
        "--out",
        &out,
        "--decoder",
        decoder,
        "--lr",
        "3e-3",
        "--batch-size",
        "16",
        "--hidden",
        "16",
    ]);
    out
}

#[test]
fn help_lists_flags_and_exits_zero() {
    for (cmd, flag) in [
        ("ingest", "--quotes"),
        ("gen-data", "--out-dir"),
        ("train", "--lambda-but"),
        ("complete", "--observations"),
        ("encode", "--surfaces"),
        ("generate", "--n"),
        ("interpolate", "--corners"),
        ("check-arb", "--z"),
        ("bench-mask", "--ks"),
        ("bench-heston", "--surfaces"),
    ] {
        let out = ok(&[cmd, "--help"]);
        assert!(
            String::from_utf8_lossy(&out.stdout).contains(flag),
            "{cmd} help lacks {flag}"
        );
    }
}

#[test]
fn usage_errors_exit_two_with_json() {
    let out = volcraft(&[
        "train",
        "--surfaces",
        "x.csv",
        "--out",
        "m.json",
        "--no-such-flag",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");

    let out = Command::new(env!("CARGO_BIN_EXE_volcraft"))
        .args(["gen-data", "--out-dir", "unused"])
        .env("VOLCRAFT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = volcraft(&[
        "encode",
        "--model",
        &p(dir.path(), "missing.json"),
        "--surfaces",
        "x",
        "--out",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "data");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("missing.json"));

    let bad = p(dir.path(), "bad.csv");
    std::fs::write(&bad, "asset_id,date,vol\nA,2020-01-01,0.1\n").unwrap();
    let out = volcraft(&["check-arb", "--surfaces", &bad]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ingest_builds_grid_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let tenors = [
        "0.019178082191780823",
        "0.0822",
        "0.1644",
        "0.2466",
        "0.4932",
        "0.7397",
        "1",
        "3",
    ];
    let mut csv = String::from(
        "asset_id,date,tenor_years,atm,rr25,bf25,rr10,bf10,forward,dom_rate,for_rate\n",
    );
    for t in tenors {
        csv.push_str(&format!(
            "EURUSD,2020-03-02,{t},0.08,-0.01,0.002,-0.018,0.006,1.1,0.01,0.0\n"
        ));
    }
    let quotes = p(dir.path(), "quotes.csv");
    std::fs::write(&quotes, &csv).unwrap();
    let out = p(dir.path(), "surfaces.csv");
    ok(&["ingest", "--quotes", &quotes, "--out", &out]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 41);
    // 25-delta call wing: atm + bf25 + rr25/2
    assert!(text
        .lines()
        .any(|l| l.starts_with("EURUSD,2020-03-02,1,0.25,0.077")));

    std::fs::write(&quotes, csv.replace("0.0822", "0.05")).unwrap();
    let out = volcraft(&[
        "ingest",
        "--quotes",
        &quotes,
        "--out",
        &p(dir.path(), "x.csv"),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_corpus(d);
    let again = d.join("again");
    std::fs::create_dir(&again).unwrap();
    let data2 = small_corpus(&again);
    for f in ["train.csv", "validation.csv"] {
        assert_eq!(
            std::fs::read(data.join(f)).unwrap(),
            std::fs::read(data2.join(f)).unwrap()
        );
    }

    let m1 = tiny_model(d, &data, "m1.json", "pointwise");
    let m2 = tiny_model(d, &data, "m2.json", "pointwise");
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    let validation = p(&data, "validation.csv");

    let runs: Vec<Vec<Vec<u8>>> = (0..2)
        .map(|r| {
            let f = |name: &str| p(d, &format!("{r}-{name}"));
            ok(&[
                "generate",
                "--model",
                &m1,
                "--n",
                "4",
                "--seed",
                "9",
                "--out",
                &f("gen.csv"),
                "--report",
                &f("gen.json"),
            ]);
            ok(&[
                "encode",
                "--model",
                &m1,
                "--surfaces",
                &validation,
                "--out",
                &f("enc.csv"),
            ]);
            ok(&[
                "interpolate",
                "--model",
                &m1,
                "--corners",
                "-1,0;1,0",
                "--steps",
                "3",
                "--out",
                &f("line.csv"),
            ]);
            ok(&[
                "complete",
                "--model",
                &m1,
                "--observations",
                &validation,
                "--out",
                &f("comp.csv"),
                "--report",
                &f("comp.json"),
                "--starts",
                "2",
            ]);
            ok(&[
                "check-arb",
                "--surfaces",
                &f("gen.csv"),
                "--out",
                &f("arb.json"),
            ]);
            ok(&[
                "bench-mask",
                "--models",
                &m1,
                "--surfaces",
                &validation,
                "--ks",
                "5,40",
                "--seed",
                "2",
                "--max-surfaces",
                "3",
                "--starts",
                "2",
                "--out",
                &f("mask.csv"),
            ]);
            [
                "gen.csv",
                "gen.json",
                "enc.csv",
                "line.csv",
                "comp.csv",
                "comp.json",
                "arb.json",
                "mask.csv",
            ]
            .iter()
            .map(|n| std::fs::read(f(n)).unwrap())
            .collect()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);

    let generated = String::from_utf8(runs[0][0].clone()).unwrap();
    assert_eq!(generated.lines().count(), 1 + 4 * 40);
    assert!(generated
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("sample-0001,1970-01-01,"));
    let enc = String::from_utf8(runs[0][2].clone()).unwrap();
    assert_eq!(enc.lines().next().unwrap(), "asset_id,date,z_0,z_1");
    let mask = String::from_utf8(runs[0][7].clone()).unwrap();
    assert_eq!(mask.lines().count(), 3);
}

#[test]
fn model_point_check_and_grid_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_corpus(d);
    let grid = tiny_model(d, &data, "grid.json", "grid");

    let out = ok(&["check-arb", "--model", &grid, "--z", "0,0"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report[0]["asset_id"], "decoded");
    assert!(report[0]["passed"].is_boolean());

    let obs = p(d, "offgrid.csv");
    std::fs::write(
        &obs,
        "asset_id,date,maturity_years,delta,vol\nA,2020-01-01,0.3,0.5,0.1\nA,2020-01-01,1,0.25,0.1\n",
    )
    .unwrap();
    let out = volcraft(&[
        "complete",
        "--model",
        &grid,
        "--observations",
        &obs,
        "--out",
        &p(d, "c.csv"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["kind"], "data");

    let out = volcraft(&[
        "interpolate",
        "--model",
        &grid,
        "--corners",
        "0,0;1,1;2,2",
        "--out",
        &p(d, "i.csv"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn heston_bench_reports_per_asset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_corpus(d);
    let model = tiny_model(d, &data, "m.json", "pointwise");
    let out = p(d, "heston.csv");
    ok(&[
        "bench-heston",
        "--surfaces",
        &p(&data, "validation.csv"),
        "--model",
        &model,
        "--out",
        &out,
        "--max-surfaces",
        "1",
        "--heston-starts",
        "1",
        "--vae-starts",
        "2",
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "asset_id,n_surfaces,heston_mae_bps,vae_mae_bps,heston_failures,vae_failures"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "1");
    assert!(row[2].parse::<f64>().unwrap() >= 0.0);
    assert!(row[3].parse::<f64>().unwrap() >= 0.0);
}
