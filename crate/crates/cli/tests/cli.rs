use std::path::Path;
use std::process::{Command, Output};

fn mmhb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmhb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    let o = mmhb(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen-dataset", "train", "search", "sweep", "latency"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(mmhb(&[]).status.code(), Some(1));
    assert_eq!(mmhb(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mmhb(&["sweep", "--config", "x.cfg", "--bogus"]).status.code(), Some(1));
}

#[test]
fn missing_config_names_the_path() {
    let o = mmhb(&["sweep", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.cfg"));
}

#[test]
fn bad_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "sweep.trials = 0\n").unwrap();
    assert_eq!(
        mmhb(&["sweep", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(1)
    );
    std::fs::write(&cfg, "sweep.methods = algorithm1\n").unwrap();
    let o = mmhb(&["sweep", "--config", cfg.to_str().unwrap(), "--methods", "magic"]);
    assert_eq!(o.status.code(), Some(1));
    let o = mmhb(&["sweep", "--config", cfg.to_str().unwrap(), "--methods", "cnn_mimo"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_dataset_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "train.dataset = d.cmm\ntrain.out = m.cmmw\n").unwrap();
    std::fs::write(dir.path().join("d.cmm"), b"CMM1 definitely not a dataset").unwrap();
    let o = mmhb(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

const TINY: &str = "seed = 5
system.n_t = 8
system.n_r = 3
system.users = 2
system.paths = 3
system.bits = 3
dataset.scenarios = 6
dataset.corruptions = 2
dataset.snr_train_db = 15,25
dataset.out = d.cmm
train.dataset = d.cmm
train.out = cnn.cmmw
train.filters = 4
train.fc_units = 16
train.dropout = 0
train.batch_size = 8
train.epochs = 3
train.mlp_hidden = 16
train.mlp_dropout = 0
sweep.source = dataset
sweep.dataset = d.cmm
sweep.cnn_model = cnn.cmmw
sweep.mlp_model = mlp.cmmw
sweep.axis = snr_test
sweep.values = 10,20
sweep.trials = 4
sweep.methods = algorithm1,cnn_mimo,mlp,no_interference,random
latency.repetitions = 5
";

fn pipeline(dir: &Path, threads: &str) -> (Vec<u8>, String) {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();
    let ok = |args: &[&str]| {
        let o = mmhb(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    ok(&["gen-dataset", "--config", c, "--threads", threads]);
    ok(&["train", "--config", c]);
    let mlp = dir.join("mlp.cmmw");
    ok(&[
        "train",
        "--config",
        c,
        "--methods",
        "mlp",
        "--out",
        mlp.to_str().unwrap(),
    ]);
    assert!(dir.join("cnn.cmmw.meta").exists());
    let csv = dir.join("out.csv");
    ok(&[
        "sweep",
        "--config",
        c,
        "--out",
        csv.to_str().unwrap(),
        "--threads",
        threads,
    ]);
    (
        std::fs::read(dir.join("d.cmm")).unwrap(),
        std::fs::read_to_string(csv).unwrap(),
    )
}

#[test]
fn end_to_end_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (data_a, csv_a) = pipeline(a.path(), "1");
    let (data_b, csv_b) = pipeline(b.path(), "3");
    assert_eq!(data_a, data_b);
    assert_eq!(csv_a, csv_b);

    let lines: Vec<&str> = csv_a.lines().collect();
    assert_eq!(lines[0], "sweep,method,mean_rate,std_rate,trials,time_ms");
    assert_eq!(lines.len(), 1 + 2 * 5);
    for m in ["algorithm1", "cnn_mimo", "mlp", "no_interference", "random"] {
        assert!(lines.iter().any(|l| l.split(',').nth(1) == Some(m)), "row for {m}");
    }

    let cfg = a.path().join("tiny.cfg");
    let o = mmhb(&["search", "--config", cfg.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("scenario,q_f,q_w,rate,visited\n0,"));

    let o = mmhb(&[
        "latency",
        "--config",
        cfg.to_str().unwrap(),
        "--methods",
        "algorithm1,cnn_mimo",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}
