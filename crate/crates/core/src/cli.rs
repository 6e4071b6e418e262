//! Command-line front end: single runs, parameter sweeps, standalone
//! selection, and the built-in verification suites.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::config::ExperimentConfig;
use crate::data::{load_idx, ClassCensus, Dataset, DeviationMetric};
use crate::error::{Error, Result};
use crate::select::{brute_force_oracle, select, SelectionConfig, UavInfo};
use crate::sim;

const USAGE: &str = "\
fedswarm - federated learning simulator for energy-constrained UAV swarms

USAGE:
    fedswarm <COMMAND> [FLAGS]

COMMANDS:
    run          Run a single experiment and write trace files
    sweep        Run a cartesian sweep over --mu / --m / --policy
    select-only  Solve one selection instance from a census JSON file
    verify       Run the built-in property and oracle suites

COMMON FLAGS (run, sweep):
    --config PATH            key = value config file (flags override it)
    --train-images PATH      --train-labels PATH
    --test-images PATH       --test-labels PATH
    --policy P               proposed | SA | BL1 | BL2 | BL3 | WORST
    --mu X                   class imbalance rate in [0, 0.9]
    --k N                    swarm size
    --rounds N               communication rounds
    --seed N                 RNG seed
    --out DIR                output directory
    --lr X  --epochs N  --batch N
    --beta-th X  --epsilon X  --max-enum N
    --round-duration-s X  --battery-capacity-j X  --recharge-rounds N
    --partition-mode M       uniform-within-active | skewed-within-active
    --deviation M            normalized | paper-literal
    --idle-drain M           none | hover
    --reselect-every N  --worst-m N  --hidden A,B  --speeds id:v,...
    --save-model PATH  --load-model PATH

SWEEP FLAGS:
    --mu A,B,...             sweep values (also accepts a single value)
    --m A,B,...              swarm sizes to sweep (sets k per cell)
    --policy A,B,...         policies to sweep

SELECT-ONLY FLAGS:
    --census PATH            JSON: [{\"id\":0,\"counts\":[..],\"battery_level\":0.9}, ...]
    --beta-th X  --epsilon X  --num-classes N  --deviation M  --oracle
";

/// Entry point; returns the process exit code.
pub fn main(args: &[String]) -> i32 {
    let mut args = args.iter().map(String::as_str);
    let command = match args.next() {
        Some("-h") | Some("--help") | None => {
            print!("{USAGE}");
            return if std::env::args().len() > 1 { 0 } else { 2 };
        }
        Some(cmd) => cmd,
    };
    let rest: Vec<&str> = args.collect();
    let outcome = match command {
        "run" => run_cmd(&rest),
        "sweep" => sweep_cmd(&rest),
        "select-only" => select_only_cmd(&rest),
        "verify" => return verify_cmd(),
        other => Err(Error::Config(format!(
            "unknown command '{other}' (try --help)"
        ))),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn flag_to_key(flag: &str) -> Option<&'static str> {
    Some(match flag {
        "--train-images" => "train_images",
        "--train-labels" => "train_labels",
        "--test-images" => "test_images",
        "--test-labels" => "test_labels",
        "--policy" => "policy",
        "--mu" => "mu",
        "--k" => "k",
        "--rounds" => "rounds",
        "--seed" => "seed",
        "--out" => "out_dir",
        "--lr" => "learning_rate",
        "--epochs" => "local_epochs",
        "--batch" => "minibatch_size",
        "--hidden" => "hidden",
        "--beta-th" => "battery_threshold",
        "--epsilon" => "deviation_threshold",
        "--max-enum" => "max_enumeration_uavs",
        "--deviation" => "deviation_metric",
        "--round-duration-s" => "round_duration_s",
        "--battery-capacity-j" => "battery_capacity_j",
        "--recharge-rounds" => "recharge_rounds",
        "--partition-mode" => "partition_mode",
        "--idle-drain" => "idle_drain",
        "--reselect-every" => "reselect_every",
        "--worst-m" => "worst_m",
        "--speeds" => "speeds",
        "--save-model" => "save_model",
        "--load-model" => "load_model",
        _ => return None,
    })
}

/// Splits argv into (flag, value) pairs.
fn flag_pairs<'a>(args: &[&'a str]) -> Result<Vec<(&'a str, &'a str)>> {
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(&flag) = it.next() {
        if !flag.starts_with("--") {
            return Err(Error::Config(format!("unexpected argument '{flag}'")));
        }
        let value = it
            .next()
            .ok_or_else(|| Error::Config(format!("flag {flag} needs a value")))?;
        pairs.push((flag, *value));
    }
    Ok(pairs)
}

/// Builds a config from `--config` plus flag overrides; unknown flags in
/// `extra` are passed through untouched for the caller to interpret.
fn build_config<'a>(
    args: &[&'a str],
    extra: &mut Vec<(&'a str, &'a str)>,
) -> Result<ExperimentConfig> {
    let pairs = flag_pairs(args)?;
    let mut config = match pairs.iter().find(|(f, _)| *f == "--config") {
        Some((_, path)) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for (flag, value) in pairs {
        if flag == "--config" {
            continue;
        }
        match flag_to_key(flag) {
            Some(key) => config.set(key, value)?,
            None => extra.push((flag, value)),
        }
    }
    Ok(config)
}

fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let train = load_idx(&config.train_images, &config.train_labels)?;
    let test = load_idx(&config.test_images, &config.test_labels)?;
    Ok((train, test))
}

/// Writes the trace, selection log and resolved config for one run.
fn write_outputs(dir: &Path, config: &ExperimentConfig, result: &sim::RunResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    sim::write_trace_csv(dir.join("trace.csv"), &result.rounds)?;
    sim::write_trace_json(dir.join("trace.json"), &result.rounds)?;
    sim::write_selections_jsonl(dir.join("selections.jsonl"), &result.selections)?;
    std::fs::write(dir.join("config.resolved.txt"), config.echo()).map_err(|source| Error::Io {
        path: dir.join("config.resolved.txt"),
        source,
    })?;
    if let Some(path) = &config.save_model {
        crate::fl::save_model(path, &result.final_model)?;
    }
    Ok(())
}

fn run_cmd(args: &[&str]) -> Result<()> {
    let mut extra = Vec::new();
    let config = build_config(args, &mut extra)?;
    if let Some((flag, _)) = extra.first() {
        return Err(Error::Config(format!("unknown flag '{flag}'")));
    }
    config.validate()?;
    let (train, test) = load_datasets(&config)?;
    let result = sim::run(&config, &train, &test)?;
    write_outputs(&config.out_dir, &config, &result)?;
    let last = result.rounds.last();
    println!(
        "run complete: rounds={} final_accuracy={} total_energy_j={} out={}",
        result.rounds.len(),
        last.map_or("n/a".into(), |m| format!("{:.4}", m.test_accuracy)),
        last.map_or("n/a".into(), |m| format!(
            "{:.1}",
            m.cumulative_energy_joules
        )),
        config.out_dir.display()
    );
    Ok(())
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Config(format!("cannot parse '{s}': {e}")))
        })
        .collect()
}

fn sweep_cmd(args: &[&str]) -> Result<()> {
    // Pull the sweepable axes out first; everything else configures the
    // base experiment exactly like `run`.
    let pairs = flag_pairs(args)?;
    let mut mus: Option<Vec<f64>> = None;
    let mut swarm_sizes: Option<Vec<usize>> = None;
    let mut policies: Option<Vec<crate::select::SelectionPolicy>> = None;
    let mut config_args: Vec<&str> = Vec::new();
    for (flag, value) in pairs {
        match flag {
            "--mu" => mus = Some(parse_list(value)?),
            "--m" => swarm_sizes = Some(parse_list(value)?),
            "--policy" => policies = Some(parse_list(value)?),
            _ => {
                config_args.push(flag);
                config_args.push(value);
            }
        }
    }
    let mut extra = Vec::new();
    let base = build_config(&config_args, &mut extra)?;
    if let Some((flag, _)) = extra.first() {
        return Err(Error::Config(format!("unknown flag '{flag}'")));
    }
    let mus = mus.unwrap_or_else(|| vec![base.mu]);
    let swarm_sizes = swarm_sizes.unwrap_or_else(|| vec![base.k]);
    let policies = policies.unwrap_or_else(|| vec![base.policy]);

    {
        let mut probe = base.clone();
        probe.mu = mus[0];
        probe.k = swarm_sizes[0];
        probe.policy = policies[0];
        probe.validate()?;
    }
    let (train, test) = load_datasets(&base)?;

    let sweep_root = base.out_dir.clone();
    let summary_path = sweep_root.join("summary.csv");
    std::fs::create_dir_all(&sweep_root).map_err(|source| Error::Io {
        path: sweep_root.clone(),
        source,
    })?;
    let mut summary =
        String::from("mu,policy,K,rounds,final_accuracy,total_energy_j,mean_selected\n");
    for &mu in &mus {
        for &k in &swarm_sizes {
            for &policy in &policies {
                let mut cell = base.clone();
                cell.mu = mu;
                cell.k = k;
                cell.policy = policy;
                cell.out_dir = sweep_root.join(format!("mu{mu}_{policy}_k{k}"));
                cell.validate()?;
                let result = sim::run(&cell, &train, &test)?;
                write_outputs(&cell.out_dir, &cell, &result)?;
                let final_accuracy = result.rounds.last().map_or(f64::NAN, |m| m.test_accuracy);
                let total_energy = result
                    .rounds
                    .last()
                    .map_or(0.0, |m| m.cumulative_energy_joules);
                let mean_selected = if result.rounds.is_empty() {
                    0.0
                } else {
                    result
                        .rounds
                        .iter()
                        .map(|m| m.selected.len() as f64)
                        .sum::<f64>()
                        / result.rounds.len() as f64
                };
                summary.push_str(&format!(
                    "{mu},{policy},{k},{},{final_accuracy:.6},{total_energy:.3},{mean_selected:.3}\n",
                    result.rounds.len(),
                ));
                println!("sweep cell mu={mu} policy={policy} k={k}: accuracy={final_accuracy:.4}");
            }
        }
    }
    std::fs::write(&summary_path, summary).map_err(|source| Error::Io {
        path: summary_path.clone(),
        source,
    })?;
    println!("sweep complete: summary at {}", summary_path.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CensusEntry {
    id: usize,
    counts: Vec<usize>,
    battery_level: f64,
    #[serde(default)]
    recharging: bool,
}

fn select_only_cmd(args: &[&str]) -> Result<()> {
    let pairs = flag_pairs(args)?;
    let mut census_path: Option<PathBuf> = None;
    let mut sel_cfg = SelectionConfig::default();
    let mut num_classes: Option<usize> = None;
    let mut use_oracle = false;
    for (flag, value) in pairs {
        match flag {
            "--census" => census_path = Some(value.into()),
            "--beta-th" => sel_cfg.battery_threshold = parse_flag(flag, value)?,
            "--epsilon" => sel_cfg.deviation_threshold = parse_flag(flag, value)?,
            "--num-classes" => num_classes = Some(parse_flag(flag, value)?),
            "--max-enum" => sel_cfg.max_enumeration_uavs = parse_flag(flag, value)?,
            "--deviation" => {
                sel_cfg.deviation_metric = DeviationMetric::from_str(value)?;
            }
            "--oracle" => use_oracle = parse_flag(flag, value)?,
            other => return Err(Error::Config(format!("unknown flag '{other}'"))),
        }
    }
    let path =
        census_path.ok_or_else(|| Error::Config("select-only needs --census FILE".into()))?;
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let entries: Vec<CensusEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if entries.is_empty() {
        return Err(Error::Config("census file holds no UAVs".into()));
    }

    let max_id = entries.iter().map(|e| e.id).max().unwrap();
    let width = entries.iter().map(|e| e.counts.len()).max().unwrap();
    sel_cfg.num_classes = num_classes.unwrap_or(width);
    let hover = crate::power::hover_power(&crate::power::PowerParams::default());
    let mut censuses = vec![
        ClassCensus {
            counts_per_class: vec![0; width],
            total: 0,
        };
        max_id + 1
    ];
    let mut uavs = Vec::with_capacity(entries.len());
    for e in &entries {
        let mut counts = e.counts.clone();
        counts.resize(width, 0);
        censuses[e.id] = ClassCensus {
            total: counts.iter().sum(),
            counts_per_class: counts,
        };
        uavs.push(UavInfo {
            id: e.id,
            battery_level: e.battery_level,
            recharging: e.recharging,
            power_watts: hover,
        });
    }
    let outcome = if use_oracle {
        brute_force_oracle(&uavs, &censuses, &sel_cfg)?
    } else {
        select(&uavs, &censuses, &sel_cfg)?
    };
    let json = serde_json::to_string_pretty(&outcome)
        .map_err(|e| Error::Config(format!("cannot serialize outcome: {e}")))?;
    println!("{json}");
    Ok(())
}

fn parse_flag<T: FromStr>(flag: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{flag}: cannot parse '{value}': {e}")))
}

// ---------------------------------------------------------------------------
// verify: the built-in suites behind `fedswarm verify`.
// ---------------------------------------------------------------------------

type Suite = fn() -> std::result::Result<(), String>;

fn verify_cmd() -> i32 {
    let suites: Vec<(&str, Suite)> = vec![
        ("power-model", verify_power_model),
        ("mlp-shape", verify_mlp_shape),
        ("gradient-finite-differences", verify_gradients),
        ("selection-oracle", verify_selection_oracle),
        ("imbalance-semantics", verify_imbalance_semantics),
        ("fedavg-degeneracy", verify_fedavg_degeneracy),
        ("battery-cycle", verify_battery_cycle),
        ("trace-determinism", verify_trace_determinism),
    ];
    let mut failures = 0;
    for (name, suite) in suites {
        match suite() {
            Ok(()) => println!("VERIFY {name}: PASS"),
            Err(why) => {
                failures += 1;
                println!("VERIFY {name}: FAIL ({why})");
            }
        }
    }
    if failures == 0 {
        println!("VERIFY: all suites passed");
        0
    } else {
        println!("VERIFY: {failures} suite(s) failed");
        1
    }
}

fn check(ok: bool, why: &str) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why.to_string())
    }
}

fn verify_power_model() -> std::result::Result<(), String> {
    use crate::power::*;
    let p = PowerParams::default();
    check(
        (blade_profile_power(&p) - 18.035).abs() <= 0.01,
        &format!("blade profile power {}", blade_profile_power(&p)),
    )?;
    check(
        (induced_power(&p) - 560.8).abs() <= 0.1,
        &format!("induced power {}", induced_power(&p)),
    )?;
    check(
        (hover_power(&p) - 578.8).abs() <= 0.2,
        &format!("hover power {}", hover_power(&p)),
    )?;
    let cruise = propulsion_power(&p, 18.46).map_err(|e| e.to_string())?;
    check(
        (cruise - 328.6).abs() <= 0.5,
        &format!("cruise power {cruise}"),
    )?;
    check(
        propulsion_power(&p, 0.0).map_err(|e| e.to_string())? == hover_power(&p),
        "hover identity",
    )
}

fn verify_mlp_shape() -> std::result::Result<(), String> {
    let model = crate::fl::init_model(&[784, 200, 200, 10], 42);
    check(
        model.num_params() == 199_210,
        &format!("parameter count {}", model.num_params()),
    )?;
    let zero = crate::fl::ModelParams::zeros(&[8, 10]);
    let input = [0.3; 8];
    let batch = vec![(&input[..], 3usize)];
    let (loss, _) = crate::fl::local_loss_and_gradient(&zero, &batch).map_err(|e| e.to_string())?;
    check(
        (loss - 10.0f64.ln()).abs() < 1e-12,
        &format!("zero-model loss {loss}"),
    )
}

/// Central-difference gradient check over seeded small models. Models
/// whose ReLU pre-activations sit within the step of the kink are
/// regenerated: finite differences are invalid across the kink.
fn verify_gradients() -> std::result::Result<(), String> {
    use rand::{Rng, SeedableRng};
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    let mut models_checked = 0;
    while models_checked < 50 {
        seed += 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xF00D + seed);
        let model = crate::fl::init_model(&[6, 5, 4, 3], 0xF00D + seed);
        let batch_data: Vec<(Vec<f64>, usize)> = (0..8)
            .map(|_| {
                (
                    (0..6).map(|_| rng.gen_range(0.05..1.0)).collect(),
                    rng.gen_range(0..3),
                )
            })
            .collect();
        let batch: Vec<(&[f64], usize)> =
            batch_data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        if !preactivations_clear_of_kink(&model, &batch, 10.0 * h) {
            continue;
        }
        models_checked += 1;
        let (_, analytic) =
            crate::fl::local_loss_and_gradient(&model, &batch).map_err(|e| e.to_string())?;
        #[allow(clippy::needless_range_loop)] // p perturbs a cloned parameter vector
        for p in 0..model.num_params() {
            let mut plus = model.clone();
            plus.values_mut()[p] += h;
            let mut minus = model.clone();
            minus.values_mut()[p] -= h;
            let (lp, _) =
                crate::fl::local_loss_and_gradient(&plus, &batch).map_err(|e| e.to_string())?;
            let (lm, _) =
                crate::fl::local_loss_and_gradient(&minus, &batch).map_err(|e| e.to_string())?;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[p];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    check(worst < 1e-5, &format!("max relative error {worst:.3e}"))
}

/// True when every hidden pre-activation stays at least `margin` away
/// from zero for every batch input.
fn preactivations_clear_of_kink(
    model: &crate::fl::ModelParams,
    batch: &[(&[f64], usize)],
    margin: f64,
) -> bool {
    let sizes = model.layer_sizes().to_vec();
    for (input, _) in batch {
        let mut a: Vec<f64> = input.to_vec();
        let mut offset = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let w = &model.values()[offset..offset + n_in * n_out];
            let b = &model.values()[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut z = b.to_vec();
            for (i, &x) in a.iter().enumerate() {
                for j in 0..n_out {
                    z[j] += x * w[i * n_out + j];
                }
            }
            let last = l + 1 == sizes.len() - 1;
            if !last {
                if z.iter().any(|v| v.abs() <= margin) {
                    return false;
                }
                a = z.iter().map(|&v| v.max(0.0)).collect();
            }
        }
    }
    true
}

fn verify_selection_oracle() -> std::result::Result<(), String> {
    use rand::{Rng, SeedableRng};
    let mut agreements = 0;
    let mut seed = 0u64;
    while agreements < 200 {
        seed += 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xBEEF + seed);
        let k = rng.gen_range(2..=10);
        let num_classes = rng.gen_range(3..=10);
        let censuses: Vec<ClassCensus> = (0..k)
            .map(|_| {
                let mut counts = vec![0usize; num_classes];
                for _ in 0..rng.gen_range(1..=num_classes) {
                    let class = rng.gen_range(0..num_classes);
                    counts[class] += rng.gen_range(1..40);
                }
                ClassCensus {
                    total: counts.iter().sum(),
                    counts_per_class: counts,
                }
            })
            .collect();
        let uavs: Vec<UavInfo> = (0..k)
            .map(|id| UavInfo {
                id,
                battery_level: rng.gen_range(0.05..1.0),
                recharging: rng.gen_bool(0.1),
                power_watts: 578.8,
            })
            .collect();
        let cfg = SelectionConfig {
            battery_threshold: rng.gen_range(0.1..0.6),
            deviation_threshold: rng.gen_range(0.3..1.6),
            num_classes,
            ..SelectionConfig::default()
        };
        let ours = select(&uavs, &censuses, &cfg);
        let oracle = brute_force_oracle(&uavs, &censuses, &cfg);
        use crate::select::SelectionOutcome::*;
        match (ours, oracle) {
            (Ok(Feasible(a)), Ok(Feasible(b))) => {
                if a.chosen != b.chosen || a.n3 != b.n3 || a.coverage_target != b.coverage_target {
                    return Err(format!(
                        "instance {seed}: {:?} vs oracle {:?}",
                        a.chosen, b.chosen
                    ));
                }
                agreements += 1;
            }
            (Ok(Infeasible(a)), Ok(Infeasible(b))) => {
                if a.best_coverage != b.best_coverage {
                    return Err(format!("instance {seed}: infeasibility diagnostics differ"));
                }
                agreements += 1;
            }
            (Err(Error::NoAvailableUavs), Err(Error::NoAvailableUavs)) => {}
            other => return Err(format!("instance {seed}: outcome mismatch {other:?}")),
        }
    }
    Ok(())
}

fn synthetic_dataset(n: usize, num_classes: usize, feature_len: usize) -> Dataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31337);
    let mut features = Vec::with_capacity(n * feature_len);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % num_classes) as u8;
        labels.push(label);
        for j in 0..feature_len {
            let bump = if j % num_classes == label as usize {
                0.9
            } else {
                0.05
            };
            features.push((bump + 0.05 * rng.gen::<f64>()).min(1.0));
        }
    }
    Dataset::from_parts(features, feature_len, labels, num_classes).unwrap()
}

fn verify_imbalance_semantics() -> std::result::Result<(), String> {
    let ds = synthetic_dataset(2000, 10, 4);
    for (mu, expected) in [(0.0, 10), (0.2, 8), (0.5, 5), (0.9, 1)] {
        let shards = crate::data::partition(
            &ds,
            10,
            mu,
            crate::data::PartitionMode::UniformWithinActive,
            11,
        )
        .map_err(|e| e.to_string())?;
        for shard in &shards {
            let active = crate::data::census(shard, &ds)
                .active_classes()
                .cardinality();
            check(
                active == expected,
                &format!(
                    "mu={mu}: uav {} has {active} active classes",
                    shard.owner_uav
                ),
            )?;
        }
    }
    Ok(())
}

fn verify_fedavg_degeneracy() -> std::result::Result<(), String> {
    let ds = synthetic_dataset(64, 4, 6);
    let shard = crate::data::Shard {
        owner_uav: 0,
        sample_indices: (0..ds.len()).collect(),
    };
    let tc = crate::fl::TrainConfig {
        learning_rate: 0.05,
        local_epochs: 1,
        minibatch_size: ds.len(),
        rng_seed: 3,
    };
    let mut fed = crate::fl::init_model(&[6, 8, 4], 10);
    let mut central = fed.clone();
    let batch_data: Vec<(&[f64], usize)> = (0..ds.len())
        .map(|i| (ds.feature(i), ds.label(i)))
        .collect();
    for _ in 0..20 {
        let updated = crate::fl::local_update(&fed, &shard, &ds, &tc).map_err(|e| e.to_string())?;
        fed = crate::fl::aggregate(&[updated], &[ds.len()]).map_err(|e| e.to_string())?;
        let (_, grad) =
            crate::fl::local_loss_and_gradient(&central, &batch_data).map_err(|e| e.to_string())?;
        for (w, g) in central.values_mut().iter_mut().zip(&grad) {
            *w -= 0.05 * g;
        }
    }
    let drift = fed
        .values()
        .iter()
        .zip(central.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    check(drift < 1e-12, &format!("max per-element drift {drift:.3e}"))
}

fn verify_battery_cycle() -> std::result::Result<(), String> {
    use crate::power::{drain_battery, Battery};
    let mut battery = Battery::full(1000.0);
    for _ in 0..25 {
        battery = drain_battery(battery, 20.0, 1.0);
    }
    check(battery.level() == 0.5, "25 exact 2% drains reach level 0.5")?;
    check(
        battery.level() >= 0.5,
        "boundary level must stay available under a closed threshold",
    )?;
    battery = drain_battery(battery, 20.0, 1.0);
    check(
        battery.level() < 0.5,
        "the 26th drain crosses the threshold",
    )
}

fn verify_trace_determinism() -> std::result::Result<(), String> {
    let ds = synthetic_dataset(200, 10, 6);
    let cfg = ExperimentConfig {
        k: 4,
        rounds: 3,
        hidden: vec![16],
        local_epochs: 1,
        minibatch_size: 8,
        deviation_threshold: f64::INFINITY,
        ..ExperimentConfig::default()
    };
    let a = sim::run(&cfg, &ds, &ds).map_err(|e| e.to_string())?;
    let b = sim::run(&cfg, &ds, &ds).map_err(|e| e.to_string())?;
    check(a.rounds == b.rounds, "round metrics differ between runs")?;
    check(
        a.final_model.values() == b.final_model.values(),
        "final models differ between runs",
    )
}
