use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cutrack_cli::{RunConfig, TrackResults};
use cutrack_core::adaformer::EncoderConfig;
use cutrack_core::datasets::read_dataset;
use cutrack_core::trackers::Paradigm;
use serde_json::json;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cutrack"));
    c.env_remove("CUTRACK_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_config() -> serde_json::Value {
    let encoder = EncoderConfig::uniform(
        Paradigm::Motion.input_dim(),
        &[16, 8],
        &[0.5, 0.9],
        &[6, 8],
        4,
        6,
    );
    json!({
        "paradigm": "motion",
        "encoder": encoder,
        "head_hidden": 8,
        "n_t": 16,
        "n_s": 32,
        "train": { "steps": 3, "batch": 2 },
        "data": { "sequences": 2, "frames": 4 },
        "eval_data": { "sequences": 2, "frames": 4, "seed": 5 }
    })
}

fn write_config(dir: &Path, name: &str, v: &serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen (both splits) → train → track → eval; returns the metrics path.
fn plain_run(dir: &Path, cfg: &Path) -> PathBuf {
    let (train, eval) = (dir.join("train"), dir.join("eval"));
    ok(&run(&["gen", "--config", s(cfg), "--out", s(&train)]));
    ok(&run(&[
        "gen",
        "--config",
        s(cfg),
        "--out",
        s(&eval),
        "--split",
        "eval",
    ]));
    let model = dir.join("model.cutm");
    ok(&run(&[
        "train",
        "--config",
        s(cfg),
        "--data",
        s(&train),
        "--out",
        s(&model),
        "--log",
        s(&dir.join("losses.csv")),
    ]));
    let results = dir.join("results.json");
    ok(&run(&[
        "track",
        "--model",
        s(&model),
        "--data",
        s(&eval),
        "--out",
        s(&results),
    ]));
    let metrics = dir.join("metrics.csv");
    ok(&run(&[
        "eval",
        "--results",
        s(&results),
        "--data",
        s(&eval),
        "--out",
        s(&metrics),
    ]));
    metrics
}

#[test]
fn absent_keys_take_defaults() {
    let cfg = RunConfig::parse("{}").unwrap();
    assert_eq!(cfg.alpha, 1.0);
    assert_eq!(cfg.beta, 0.4);
    assert!(
        cfg.ablation.adaformer_on
            && cfg.ablation.unified_inputs_on
            && cfg.ablation.unified_objective_on
    );
    cfg.validate().unwrap();
    assert_eq!(RunConfig::default(), cfg);
}

#[test]
fn unknown_key_exits_2_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = tiny_config();
    v["train"]["learning_rate"] = json!(0.1);
    let cfg = write_config(dir.path(), "c.json", &v);
    let out = run(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("train.learning_rate"),
        "{}",
        stderr(&out)
    );

    let cfg = write_config(dir.path(), "top.json", &json!({ "alpah": 1.0 }));
    let out = run(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpah"), "{}", stderr(&out));
}

#[test]
fn invalid_values_exit_2_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    for (key, value, expect) in [
        ("alpha", json!(-1.0), "`alpha`"),
        ("beta", json!(1.5), "`beta`"),
        ("paradigm", json!("ostrich"), "`paradigm`"),
    ] {
        let mut v = tiny_config();
        v[key] = value;
        let cfg = write_config(dir.path(), "c.json", &v);
        let out = run(&[
            "gen",
            "--config",
            s(&cfg),
            "--out",
            s(&dir.path().join("d")),
        ]);
        assert_eq!(out.status.code(), Some(2), "{key}");
        assert!(stderr(&out).contains(expect), "{key}: {}", stderr(&out));
    }
    let mut v = tiny_config();
    v["train"]["steps"] = json!(0);
    let cfg = write_config(dir.path(), "c.json", &v);
    let out = run(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`train`"), "{}", stderr(&out));
}

#[test]
fn missing_files_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    let out = run(&[
        "gen",
        "--config",
        s(&nowhere),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&nowhere),
        "--out",
        s(&dir.path().join("m.cutm")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&[
        "track",
        "--model",
        s(&nowhere),
        "--data",
        s(dir.path()),
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&[
        "eval",
        "--results",
        s(&nowhere),
        "--data",
        s(dir.path()),
        "--out",
        s(&dir.path().join("m.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_seed_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    let out = bin()
        .args([
            "gen",
            "--config",
            s(&cfg),
            "--out",
            s(&dir.path().join("d")),
        ])
        .env("CUTRACK_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("CUTRACK_SEED"));
}

#[test]
fn gradcheck_passes_and_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grad.csv");
    let out = run(&["gradcheck", "--seeds", "1", "--out", s(&csv)]);
    ok(&out);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
    assert!(
        text.contains("Siamese head loss")
            && text.contains("Motion head loss")
            && text.contains("adaformer block")
    );
    let out = run(&["gradcheck", "--seeds", "1", "--tol-factor", "1e-30"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_is_byte_identical_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    let data = dir.path().join("train");
    ok(&run(&["gen", "--config", s(&cfg), "--out", s(&data)]));
    let files = |sub: &str| {
        let m = dir.path().join(sub).join("model.cutm");
        ok(&run(&[
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&data),
            "--out",
            s(&m),
        ]));
        let blob = cutrack_core::autograd::model_io::blob_path(&m);
        (std::fs::read(&m).unwrap(), std::fs::read(blob).unwrap())
    };
    assert_eq!(files("a"), files("b"));

    // the environment seed reaches training
    let m = dir.path().join("c.cutm");
    ok(&bin()
        .args([
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&data),
            "--out",
            s(&m),
        ])
        .env("CUTRACK_SEED", "5")
        .output()
        .unwrap());
    let blob = |p: &Path| std::fs::read(cutrack_core::autograd::model_io::blob_path(p)).unwrap();
    assert_ne!(blob(&m), blob(&dir.path().join("a").join("model.cutm")));
}

#[test]
fn eval_of_ground_truth_results_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = plain_run(
        dir.path(),
        &write_config(dir.path(), "c.json", &tiny_config()),
    );
    assert!(metrics.exists());
    let eval = dir.path().join("eval");
    let mut results = TrackResults::read(&dir.path().join("results.json")).unwrap();
    let seqs = read_dataset(&eval).unwrap();
    for (r, seq) in results.sequences.iter_mut().zip(&seqs) {
        assert_eq!(r.sequence_id, seq.sequence_id);
        r.boxes = seq.target_boxes().unwrap().iter().map(Into::into).collect();
    }
    let gt = dir.path().join("gt.json");
    std::fs::write(&gt, serde_json::to_vec(&results).unwrap()).unwrap();
    let out_csv = dir.path().join("gt.csv");
    ok(&run(&[
        "eval",
        "--results",
        s(&gt),
        "--data",
        s(&eval),
        "--out",
        s(&out_csv),
    ]));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mean = text.lines().last().unwrap();
    assert!(mean.starts_with("Mean,"), "{text}");
    let cols: Vec<f64> = mean
        .split(',')
        .skip(2)
        .map(|c| c.parse().unwrap())
        .collect();
    assert!(
        (cols[0] - 100.0).abs() < 1e-9 && (cols[1] - 100.0).abs() < 1e-9,
        "{mean}"
    );
}

#[test]
fn degenerate_sweep_matches_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    let metrics = plain_run(&dir.path().join("plain"), &cfg);
    let sweep = dir.path().join("sweep");
    ok(&run(&[
        "sweep",
        "--config",
        s(&cfg),
        "--param",
        "alpha",
        "--values",
        "1.0",
        "--out",
        s(&sweep),
    ]));
    assert_eq!(
        std::fs::read(sweep.join("alpha_1.0").join("metrics.csv")).unwrap(),
        std::fs::read(&metrics).unwrap()
    );
    assert_eq!(
        std::fs::read(sweep.join("alpha_1.0").join("seed_0").join("losses.csv")).unwrap(),
        std::fs::read(dir.path().join("plain").join("losses.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_one_metrics_file_per_value_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    let out = dir.path().join("sweep");
    ok(&run(&[
        "sweep",
        "--config",
        s(&cfg),
        "--param",
        "beta",
        "--values",
        "0.3,0.5",
        "--seeds",
        "0,1",
        "--out",
        s(&out),
        "--jobs",
        "2",
    ]));
    for v in ["0.3", "0.5"] {
        assert!(out.join(format!("beta_{v}")).join("metrics.csv").exists());
        for seed in [0, 1] {
            assert!(out
                .join(format!("beta_{v}"))
                .join(format!("seed_{seed}"))
                .join("metrics.csv")
                .exists());
        }
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().nth(1).unwrap().starts_with("beta,0.3,2,"));
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    let out = run(&[
        "sweep",
        "--config",
        s(&cfg),
        "--param",
        "alpha",
        "--values",
        "0.5,x",
        "--out",
        s(&dir.path().join("bad")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn output_schemas_match_golden() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "c.json", &tiny_config());
    let metrics = plain_run(d, &cfg);
    ok(&run(&[
        "stats",
        "--data",
        s(&d.join("eval")),
        "--out",
        s(&d.join("stats")),
    ]));
    ok(&run(&[
        "sweep",
        "--config",
        s(&cfg),
        "--param",
        "alpha",
        "--values",
        "1.0",
        "--out",
        s(&d.join("sweep")),
    ]));
    let bench = d.join("latency.csv");
    ok(&run(&[
        "bench",
        "--model",
        s(&d.join("model.cutm")),
        "--sizes",
        "48,96",
        "--runs",
        "3",
        "--warmup",
        "1",
        "--out",
        s(&bench),
    ]));
    let grad = d.join("grad.csv");
    ok(&run(&["gradcheck", "--seeds", "1", "--out", s(&grad)]));

    let results: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("results.json")).unwrap()).unwrap();
    let keys = |v: &serde_json::Value| {
        v.as_object()
            .unwrap()
            .keys()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    };
    let seq = &results["sequences"][0];
    let mut stats: Vec<String> = std::fs::read_dir(d.join("stats"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| {
            n.starts_with("Car_")
                || n.starts_with("Pedestrian_")
                || n.starts_with("Van_")
                || n.starts_with("Cyclist_")
        })
        .map(|n| n.split_once('_').unwrap().1.to_string())
        .collect();
    stats.sort();
    stats.dedup();
    let stats_file = std::fs::read_dir(d.join("stats"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();

    let actual = [
        format!("metrics.csv: {}", header(&metrics)),
        format!("losses.csv: {}", header(&d.join("losses.csv"))),
        format!("results.json: {}", keys(&results)),
        format!("results.json sequence: {}", keys(seq)),
        format!("results.json box: {}", keys(&seq["boxes"][0])),
        format!("results.json diagnostics: {}", keys(&seq["diagnostics"][0])),
        format!("stats files: {}", stats.join(",")),
        format!("stats csv: {}", header(&stats_file)),
        format!(
            "summary.csv: {}",
            header(&d.join("sweep").join("summary.csv"))
        ),
        format!("runs.csv: {}", header(&d.join("sweep").join("runs.csv"))),
        format!("latency.csv: {}", header(&bench)),
        format!("gradcheck.csv: {}", header(&grad)),
    ]
    .join("\n")
        + "\n";
    let golden = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
        .join("schemas.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &actual).unwrap();
    }
    assert_eq!(actual, std::fs::read_to_string(&golden).unwrap());
}
