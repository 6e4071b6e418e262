//! End-to-end checks of the command-line front end against small
//! synthetic IDX datasets.

use std::path::{Path, PathBuf};

fn write_idx_dataset(dir: &Path, prefix: &str, n: usize, num_classes: usize) -> (PathBuf, PathBuf) {
    // 2x2 images whose single bright pixel cycles with the label.
    let mut images = Vec::new();
    images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&2u32.to_be_bytes());
    images.extend_from_slice(&2u32.to_be_bytes());
    let mut labels = Vec::new();
    labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        let label = i % num_classes;
        labels.push(label as u8);
        for p in 0..4 {
            images.push(if p == label % 4 { 250 } else { 3 });
        }
    }
    let images_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    std::fs::write(&images_path, images).unwrap();
    std::fs::write(&labels_path, labels).unwrap();
    (images_path, labels_path)
}

struct Env {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train_images: PathBuf,
    train_labels: PathBuf,
    test_images: PathBuf,
    test_labels: PathBuf,
}

fn env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (train_images, train_labels) = write_idx_dataset(&root, "train", 600, 10);
    let (test_images, test_labels) = write_idx_dataset(&root, "test", 100, 10);
    Env {
        _dir: dir,
        root,
        train_images,
        train_labels,
        test_images,
        test_labels,
    }
}

fn run_cli(args: &[String]) -> i32 {
    fedswarm::cli::main(args)
}

fn base_args(env: &Env, out: &Path) -> Vec<String> {
    [
        "--train-images",
        env.train_images.to_str().unwrap(),
        "--train-labels",
        env.train_labels.to_str().unwrap(),
        "--test-images",
        env.test_images.to_str().unwrap(),
        "--test-labels",
        env.test_labels.to_str().unwrap(),
        "--hidden",
        "12",
        "--epochs",
        "1",
        "--batch",
        "16",
        "--rounds",
        "3",
        "--k",
        "4",
        "--mu",
        "0.5",
        "--epsilon",
        "inf",
        "--out",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn run_writes_trace_and_config_echo() {
    let env = env();
    let out = env.root.join("run1");
    let mut args = vec!["run".to_string()];
    args.extend(base_args(&env, &out));
    assert_eq!(run_cli(&args), 0);

    let csv = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4); // header + 3 rounds
    assert!(csv.starts_with("round,policy,accuracy"));

    let echo = std::fs::read_to_string(out.join("config.resolved.txt")).unwrap();
    assert!(echo.contains("mu = 0.5"));
    assert!(echo.contains("k = 4"));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);

    for line in std::fs::read_to_string(out.join("selections.jsonl"))
        .unwrap()
        .lines()
    {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("chosen").is_some());
        assert!(v.get("n3").is_some());
        assert!(v.get("infeasible").is_some());
    }
}

#[test]
fn identical_runs_produce_identical_traces() {
    let env = env();
    let out_a = env.root.join("a");
    let out_b = env.root.join("b");
    for out in [&out_a, &out_b] {
        let mut args = vec!["run".to_string()];
        args.extend(base_args(&env, out));
        args.extend(["--seed".to_string(), "77".to_string()]);
        assert_eq!(run_cli(&args), 0);
    }
    for file in ["trace.csv", "trace.json", "selections.jsonl"] {
        assert_eq!(
            std::fs::read(out_a.join(file)).unwrap(),
            std::fs::read(out_b.join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn sweep_writes_cells_and_summary() {
    let env = env();
    let out = env.root.join("sweep");
    let mut args = vec!["sweep".to_string()];
    args.extend(base_args(&env, &out));
    // Override the singletons with sweep lists.
    args.extend([
        "--mu".to_string(),
        "0.0,0.5".to_string(),
        "--policy".to_string(),
        "SA,BL3".to_string(),
    ]);
    assert_eq!(run_cli(&args), 0);

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "mu,policy,K,rounds,final_accuracy,total_energy_j,mean_selected"
    );
    assert_eq!(lines.len(), 5); // header + 2x2 cells
    for cell in ["mu0_SA_k4", "mu0_BL3_k4", "mu0.5_SA_k4", "mu0.5_BL3_k4"] {
        assert!(out.join(cell).join("trace.csv").exists(), "{cell} missing");
    }
}

#[test]
fn select_only_solves_worked_instance() {
    let dir = tempfile::tempdir().unwrap();
    let census = dir.path().join("census.json");
    std::fs::write(
        &census,
        r#"[
            {"id": 0, "counts": [5, 5, 0], "battery_level": 0.9},
            {"id": 1, "counts": [0, 0, 5], "battery_level": 0.8},
            {"id": 2, "counts": [4, 4, 4], "battery_level": 0.5}
        ]"#,
    )
    .unwrap();
    let args: Vec<String> = [
        "select-only",
        "--census",
        census.to_str().unwrap(),
        "--beta-th",
        "0.4",
        "--epsilon",
        "inf",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    assert_eq!(run_cli(&args), 0);
    // The printed JSON went to stdout; re-solve through the library to
    // pin the expected set.
    let outcome = {
        use fedswarm::data::ClassCensus;
        use fedswarm::select::*;
        let censuses = vec![
            ClassCensus {
                counts_per_class: vec![5, 5, 0],
                total: 10,
            },
            ClassCensus {
                counts_per_class: vec![0, 0, 5],
                total: 5,
            },
            ClassCensus {
                counts_per_class: vec![4, 4, 4],
                total: 12,
            },
        ];
        let uavs = vec![
            UavInfo {
                id: 0,
                battery_level: 0.9,
                recharging: false,
                power_watts: 1.0,
            },
            UavInfo {
                id: 1,
                battery_level: 0.8,
                recharging: false,
                power_watts: 1.0,
            },
            UavInfo {
                id: 2,
                battery_level: 0.5,
                recharging: false,
                power_watts: 1.0,
            },
        ];
        let cfg = SelectionConfig {
            battery_threshold: 0.4,
            deviation_threshold: f64::INFINITY,
            num_classes: 3,
            ..SelectionConfig::default()
        };
        select(&uavs, &censuses, &cfg).unwrap()
    };
    match outcome {
        fedswarm::select::SelectionOutcome::Feasible(r) => assert_eq!(r.chosen, vec![2]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_inputs_exit_nonzero() {
    let env = env();
    // Unknown flag.
    let mut args = vec!["run".to_string()];
    args.extend(base_args(&env, &env.root.join("x")));
    args.extend(["--frobnicate".to_string(), "1".to_string()]);
    assert_ne!(run_cli(&args), 0);

    // Unreadable dataset path.
    let mut args = vec!["run".to_string()];
    args.extend(base_args(&env, &env.root.join("y")));
    args.extend([
        "--train-images".to_string(),
        "/nonexistent/file".to_string(),
    ]);
    assert_ne!(run_cli(&args), 0);

    // Invalid config value.
    let mut args = vec!["run".to_string()];
    args.extend(base_args(&env, &env.root.join("z")));
    args.extend(["--mu".to_string(), "2.0".to_string()]);
    assert_ne!(run_cli(&args), 0);
}

#[test]
fn config_file_with_flag_overrides() {
    let env = env();
    let conf = env.root.join("exp.conf");
    std::fs::write(
        &conf,
        format!(
            "train_images = {}\ntrain_labels = {}\ntest_images = {}\ntest_labels = {}\n\
             k = 4\nmu = 0.2\nrounds = 2\nhidden = 12\nlocal_epochs = 1\n\
             deviation_threshold = inf\nout_dir = {}\n",
            env.train_images.display(),
            env.train_labels.display(),
            env.test_images.display(),
            env.test_labels.display(),
            env.root.join("from_conf").display()
        ),
    )
    .unwrap();
    let args: Vec<String> = [
        "run",
        "--config",
        conf.to_str().unwrap(),
        "--mu",
        "0.5", // flag wins over file
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    assert_eq!(run_cli(&args), 0);
    let echo = std::fs::read_to_string(env.root.join("from_conf/config.resolved.txt")).unwrap();
    assert!(echo.contains("mu = 0.5"));
    assert!(echo.contains("rounds = 2"));
}

#[test]
fn verify_suites_pass() {
    assert_eq!(run_cli(&["verify".to_string()]), 0);
}

#[test]
fn model_checkpoints_roundtrip_through_cli() {
    let env = env();
    let ckpt = env.root.join("model.bin");
    let out_save = env.root.join("save");
    let mut args = vec!["run".to_string()];
    args.extend(base_args(&env, &out_save));
    args.extend([
        "--save-model".to_string(),
        ckpt.to_str().unwrap().to_string(),
    ]);
    assert_eq!(run_cli(&args), 0);
    let saved = fedswarm::fl::load_model(&ckpt).unwrap();
    assert_eq!(saved.layer_sizes(), &[4, 12, 10]);

    // Resuming from the checkpoint and training zero rounds returns it
    // bit-for-bit.
    let out_load = env.root.join("load");
    let mut args = vec!["run".to_string()];
    args.extend(base_args(&env, &out_load));
    args.extend([
        "--load-model".to_string(),
        ckpt.to_str().unwrap().to_string(),
        "--rounds".to_string(),
        "0".to_string(),
        "--save-model".to_string(),
        env.root.join("model2.bin").to_str().unwrap().to_string(),
    ]);
    assert_eq!(run_cli(&args), 0);
    let reloaded = fedswarm::fl::load_model(env.root.join("model2.bin")).unwrap();
    assert_eq!(reloaded.values(), saved.values());
}
