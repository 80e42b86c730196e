use std::path::Path;

use vgnn_cli::dispatch;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["vgnn"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_into(dir: &Path, seed: &str) {
    assert_eq!(run(&["synth", "--seed", seed, "--cells", "16", "--days", "8", "--out", p(dir)]), 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["train", "--no-such-flag"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["graph", "--delta", "abc"]), 2);
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["ablate", "--help"]), 0);
}

#[test]
fn stage_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.bin");
    assert_eq!(run(&["graph", "--demand", p(&missing), "--out", p(&dir.path().join("g.json"))]), 1);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "gamma = 1\n").unwrap();
    assert_eq!(run(&["--config", p(&cfg), "synth", "--out", p(dir.path())]), 1);
}

#[test]
fn synth_is_deterministic_with_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_into(a.path(), "7");
    synth_into(b.path(), "7");
    for f in ["demand.bin", "demand.bin.meta", "od.bin", "labels.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap_or_else(|_| panic!("{f}"));
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["synth"]["cells"], 16);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));

    let c = tempfile::tempdir().unwrap();
    synth_into(c.path(), "8");
    assert_ne!(
        std::fs::read(a.path().join("demand.bin")).unwrap(),
        std::fs::read(c.path().join("demand.bin")).unwrap()
    );
}

#[test]
fn graph_train_eval_ablate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d, "3");
    let demand = d.join("demand.bin");
    let od = d.join("od.bin");
    let graphs = d.join("graphs.json");
    let graphs2 = d.join("graphs2.json");
    for out in [&graphs, &graphs2] {
        let code = run(&["graph", "--demand", p(&demand), "--od", p(&od), "--delta", "1", "--epsilon", "0.5", "--out", p(out)]);
        assert_eq!(code, 0);
    }
    assert_eq!(std::fs::read(&graphs).unwrap(), std::fs::read(&graphs2).unwrap());
    assert!(d.join("graphs.json.manifest.json").exists());

    let tiny = ["--epochs", "1", "--c1", "6", "--heads", "2"];
    let ckpt = d.join("ckpt");
    let mut args = vec!["train", "--demand", p(&demand), "--graphs", p(&graphs), "--seed", "5", "--out", p(&ckpt)];
    args.extend(tiny);
    assert_eq!(run(&args), 0);
    for f in ["model.json", "model.vgnt", "variant.json", "history.csv", "manifest.json"] {
        assert!(ckpt.join(f).exists(), "{f}");
    }

    let report = d.join("report");
    let code = run(&["eval", "--demand", p(&demand), "--graphs", p(&graphs), "--checkpoint", p(&ckpt), "--out", p(&report)]);
    assert_eq!(code, 0);
    let table = std::fs::read_to_string(report.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,rmse,mae,mape_top10");
    assert!(lines[1].starts_with("HistoricMean,") && lines[2].starts_with("LastValue,") && lines[3].starts_with("DMVST-GNN,"));
    assert!(report.join("predictions.csv").exists());

    let abl = d.join("ablation");
    let mut args = vec![
        "ablate", "--demand", p(&demand), "--graphs", p(&graphs), "--seeds", "1,2", "--variants", "D-GNN,DMVST-GNN", "--out",
        p(&abl),
    ];
    args.extend(tiny);
    assert_eq!(run(&args), 0);
    let runs = std::fs::read_to_string(abl.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    let summary = std::fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn mobility_variant_without_od_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d, "3");
    let graphs = d.join("graphs.json");
    assert_eq!(run(&["graph", "--demand", p(&d.join("demand.bin")), "--out", p(&graphs)]), 0);
    let code = run(&[
        "ablate", "--demand", p(&d.join("demand.bin")), "--graphs", p(&graphs), "--variants", "M-GNN", "--epochs", "1",
        "--out", p(&d.join("abl")),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn ingest_csv_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = d.join("trips.csv");
    std::fs::write(
        &csv,
        "\"Date/Time\",\"Lat\",\"Lon\",\"Base\"\n\
         4/1/2014 0:11:00,40.05,-73.95,B1\n\
         4/1/2014 0:17:00,40.15,-73.95,B1\n\
         4/1/2014 1:21:00,40.15,-73.85,B1\n\
         4/1/2014 2:28:00,41.50,-73.85,B1\n",
    )
    .unwrap();
    let out = d.join("demand.bin");
    let code = run(&[
        "ingest", "--input", p(&csv), "--grid", "2x2", "--bounds", "40.0,40.2,-74.0,-73.8", "--bin", "3600", "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    let demand = vgnn_core::ingest::format::read_demand(&out).unwrap();
    assert_eq!((demand.slots(), demand.units(), demand.total()), (3, 4, 3));
    assert_eq!(demand.get(0, 0), 1);
    assert_eq!(demand.get(0, 2), 1);
    assert_eq!(demand.get(1, 3), 1);
    assert!(d.join("demand.bin.manifest.json").exists());
}

#[test]
fn check_suites_pass() {
    assert_eq!(run(&["check"]), 0);
}
