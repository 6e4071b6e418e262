//! Round-by-round experiment orchestration.
//!
//! Each communication round proceeds as: select participants among the
//! deployed UAVs, run local training on every selected shard, aggregate
//! the weighted average into the new global model, drain the selected
//! batteries, process recharge transitions, and evaluate on the test
//! set. Recharge bookkeeping runs at the end of the round, so a UAV that
//! falls below the battery threshold misses exactly `recharge_rounds`
//! rounds before redeploying at full charge.
//!
//! Local updates for distinct UAVs are independent; they run on a thread
//! pool but are aggregated in ascending id order, so traces are
//! bit-identical regardless of the parallel schedule.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, IdleDrain};
use crate::data::{census, partition, ClassCensus, Dataset, PartitionMode, Shard};
use crate::error::{Error, Result};
use crate::fl::{aggregate, dataset_loss, evaluate, init_model, local_update, ModelParams};
use crate::power::{drain_battery, propulsion_power, Battery, PowerParams};
use crate::select::{
    available, baseline_select, select, SelectionOutcome, SelectionPolicy, UavInfo,
};

/// Whether a UAV is flying or sitting at the docking station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UavStatus {
    Deployed,
    Recharging,
}

/// Full state of one swarm member.
#[derive(Debug, Clone)]
pub struct UavState {
    pub id: usize,
    /// Meters; z is the altitude.
    pub position: (f64, f64, f64),
    /// Forward speed; 0 means hovering.
    pub speed_m_s: f64,
    pub battery: Battery,
    pub shard: Arc<Shard>,
    pub status: UavStatus,
}

impl UavState {
    pub fn is_deployed(&self) -> bool {
        self.status == UavStatus::Deployed
    }
}

/// Everything recorded about one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round_index: usize,
    pub test_accuracy: f64,
    /// Mean cross-entropy of the freshly aggregated model over the
    /// selected shards.
    pub train_loss: f64,
    pub selected: Vec<usize>,
    /// Size of the available set at selection time.
    pub num_available: usize,
    pub cumulative_energy_joules: f64,
    pub selection_policy: SelectionPolicy,
}

/// Structured record of one selection event. Rounds that reuse a cached
/// selection replay the original event's fields (psi included) with the
/// current round number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub round: usize,
    pub psi: Vec<usize>,
    pub n3: usize,
    pub coverage_target: usize,
    pub chosen: Vec<usize>,
    pub total_power_watts: f64,
    pub candidates_examined: u64,
    /// True when the deviation constraint was unsatisfiable and the round
    /// fell back to the coverage-only relaxation.
    pub infeasible: bool,
    /// True when the greedy large-swarm path produced the set.
    pub heuristic: bool,
}

/// Spawns the swarm: seeded positions in a 1 km disc at 100 m altitude,
/// full batteries, and one dataset shard per UAV.
pub fn init_swarm(
    k: usize,
    seed: u64,
    power_params: &PowerParams,
    dataset: &Dataset,
    mu: f64,
    mode: PartitionMode,
    battery_capacity_j: f64,
) -> Result<Vec<UavState>> {
    power_params.validate()?;
    let shards = partition(dataset, k, mu, mode, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x9e37, 0));
    Ok(shards
        .into_iter()
        .map(|shard| {
            let radius = 1000.0 * rng.gen::<f64>().sqrt();
            let angle = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
            UavState {
                id: shard.owner_uav,
                position: (radius * angle.cos(), radius * angle.sin(), 100.0),
                speed_m_s: 0.0,
                battery: Battery::full(battery_capacity_j),
                shard: Arc::new(shard),
                status: UavStatus::Deployed,
            }
        })
        .collect())
}

/// Deterministic stream splitter for per-UAV, per-round seeds.
pub fn mix_seed(global: u64, stream: u64, index: u64) -> u64 {
    let mut x = global
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

const STREAM_INIT_MODEL: u64 = 1;
const STREAM_LOCAL_UPDATE: u64 = 2;
const STREAM_BASELINE: u64 = 3;

fn uav_infos(swarm: &[UavState], power_params: &PowerParams) -> Result<Vec<UavInfo>> {
    swarm
        .iter()
        .map(|u| {
            Ok(UavInfo {
                id: u.id,
                battery_level: u.battery.level(),
                recharging: u.status == UavStatus::Recharging,
                power_watts: propulsion_power(power_params, u.speed_m_s)?,
            })
        })
        .collect()
}

/// Runs the configured policy over the deployed UAVs for one round.
///
/// An instance whose deviation constraint cannot be met never aborts the
/// round: the coverage-only relaxation picks the set and the record is
/// marked infeasible.
pub fn select_for_round(
    swarm: &[UavState],
    censuses: &[ClassCensus],
    cfg: &ExperimentConfig,
    num_classes: usize,
    round: usize,
) -> Result<(Vec<usize>, SelectionRecord)> {
    let infos = uav_infos(swarm, &cfg.power)?;
    let mut sel_cfg = cfg.selection_config();
    sel_cfg.num_classes = num_classes;
    let psi = available(&infos, sel_cfg.battery_threshold);

    let record = |chosen: Vec<usize>,
                  n3: usize,
                  coverage: usize,
                  power: f64,
                  examined: u64,
                  infeasible: bool,
                  heuristic: bool| SelectionRecord {
        round,
        psi: psi.clone(),
        n3,
        coverage_target: coverage,
        chosen,
        total_power_watts: power,
        candidates_examined: examined,
        infeasible,
        heuristic,
    };

    match cfg.policy {
        SelectionPolicy::Proposed => match select(&infos, censuses, &sel_cfg)? {
            SelectionOutcome::Feasible(r) => {
                let rec = record(
                    r.chosen.clone(),
                    r.n3,
                    r.coverage_target,
                    r.total_power_watts,
                    r.candidates_examined,
                    false,
                    r.heuristic,
                );
                Ok((r.chosen, rec))
            }
            SelectionOutcome::Infeasible(report) => {
                // Coverage-only relaxation; always solvable since the full
                // available set attains the coverage target.
                let relaxed = crate::select::SelectionConfig {
                    deviation_threshold: f64::INFINITY,
                    ..sel_cfg
                };
                match select(&infos, censuses, &relaxed)? {
                    SelectionOutcome::Feasible(r) => {
                        let rec = record(
                            r.chosen.clone(),
                            r.n3,
                            r.coverage_target,
                            r.total_power_watts,
                            report.candidates_examined + r.candidates_examined,
                            true,
                            r.heuristic,
                        );
                        Ok((r.chosen, rec))
                    }
                    SelectionOutcome::Infeasible(_) => {
                        unreachable!("coverage-only relaxation cannot be infeasible")
                    }
                }
            }
        },
        kind => {
            let chosen = baseline_select(
                kind,
                &infos,
                censuses,
                &sel_cfg,
                mix_seed(cfg.seed, STREAM_BASELINE, round as u64),
                cfg.worst_m,
            )?;
            let coverage = crate::data::class_union(censuses, &chosen).cardinality();
            let power: f64 = chosen
                .iter()
                .map(|&k| infos.iter().find(|u| u.id == k).unwrap().power_watts)
                .sum();
            let n3 = chosen.len();
            let rec = record(chosen.clone(), n3, coverage, power, 0, false, false);
            Ok((chosen, rec))
        }
    }
}

/// Output of a single simulated round.
#[derive(Debug)]
pub struct StepOutput {
    pub swarm: Vec<UavState>,
    pub model: ModelParams,
    pub metrics: RoundMetrics,
    pub selection: SelectionRecord,
}

/// Advances the simulation by one communication round.
#[allow(clippy::too_many_arguments)]
pub fn step(
    swarm: &[UavState],
    model: &ModelParams,
    round_index: usize,
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    censuses: &[ClassCensus],
    cumulative_energy_joules: f64,
    cached_selection: Option<&(Vec<usize>, SelectionRecord)>,
) -> Result<StepOutput> {
    if !swarm.iter().any(UavState::is_deployed) {
        return Err(Error::SwarmDepleted(round_index));
    }

    let (chosen, mut selection) = match cached_selection {
        Some((chosen, record)) => (chosen.clone(), record.clone()),
        None => select_for_round(swarm, censuses, cfg, test.num_classes(), round_index)?,
    };
    selection.round = round_index;
    // Availability is a per-round metric even when the selection itself
    // is reused from an earlier round.
    let num_available = swarm
        .iter()
        .filter(|u| u.is_deployed() && u.battery.level() >= cfg.battery_threshold)
        .count();

    // Local training on every selected shard, aggregated in id order.
    let updates: Vec<(ModelParams, usize)> = chosen
        .par_iter()
        .map(|&k| {
            let tc = cfg.train_config(mix_seed(
                cfg.seed,
                STREAM_LOCAL_UPDATE,
                (round_index as u64) << 20 | k as u64,
            ));
            local_update(model, &swarm[k].shard, train, &tc)
                .map(|m| (m, swarm[k].shard.sample_indices.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (models, counts): (Vec<ModelParams>, Vec<usize>) = updates.into_iter().unzip();
    let new_model = aggregate(&models, &counts)?;

    // Battery drain and the energy metric cover the selected UAVs; idle
    // hover drain (if configured) affects batteries only.
    let mut new_swarm = swarm.to_vec();
    let mut round_energy = 0.0;
    for &k in &chosen {
        let power = propulsion_power(&cfg.power, new_swarm[k].speed_m_s)?;
        let energy = power * cfg.round_duration_s;
        new_swarm[k].battery = drain_battery(new_swarm[k].battery, power, cfg.round_duration_s);
        round_energy += energy;
    }
    if cfg.idle_drain == IdleDrain::Hover {
        for u in new_swarm.iter_mut() {
            if u.is_deployed() && !chosen.contains(&u.id) {
                let power = propulsion_power(&cfg.power, u.speed_m_s)?;
                u.battery = drain_battery(u.battery, power, cfg.round_duration_s);
            }
        }
    }

    // End-of-round recharge bookkeeping: long-recharging UAVs tick first,
    // then freshly drained ones leave for the dock.
    for u in new_swarm.iter_mut() {
        if u.status == UavStatus::Recharging {
            u.battery.recharge_rounds_left -= 1;
            if u.battery.recharge_rounds_left == 0 {
                u.battery = Battery::full(u.battery.capacity_joules);
                u.status = UavStatus::Deployed;
            }
        }
    }
    for u in new_swarm.iter_mut() {
        if u.is_deployed() && u.battery.level() < cfg.battery_threshold {
            u.status = UavStatus::Recharging;
            u.battery.recharge_rounds_left = cfg.recharge_rounds;
        }
    }

    // Evaluation and the training-loss metric run on the new model.
    let selected_indices: Vec<usize> = chosen
        .iter()
        .flat_map(|&k| swarm[k].shard.sample_indices.iter().copied())
        .collect();
    let (test_accuracy, train_loss) = rayon::join(
        || evaluate(&new_model, test),
        || dataset_loss(&new_model, train, &selected_indices),
    );

    let metrics = RoundMetrics {
        round_index,
        test_accuracy,
        train_loss,
        selected: chosen,
        num_available,
        cumulative_energy_joules: cumulative_energy_joules + round_energy,
        selection_policy: cfg.policy,
    };
    Ok(StepOutput {
        swarm: new_swarm,
        model: new_model,
        metrics,
        selection,
    })
}

/// A completed experiment: per-round metrics, selection records, and the
/// final global model.
#[derive(Debug)]
pub struct RunResult {
    pub rounds: Vec<RoundMetrics>,
    pub selections: Vec<SelectionRecord>,
    pub final_model: ModelParams,
}

/// Runs a full experiment against pre-loaded datasets.
pub fn run(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    cfg.validate()?;
    let mut swarm = init_swarm(
        cfg.k,
        cfg.seed,
        &cfg.power,
        train,
        cfg.mu,
        cfg.partition_mode,
        cfg.battery_capacity_j,
    )?;
    for &(id, speed) in &cfg.uav_speeds {
        if let Some(u) = swarm.iter_mut().find(|u| u.id == id) {
            u.speed_m_s = speed;
        }
    }
    let censuses: Vec<ClassCensus> = swarm.iter().map(|u| census(&u.shard, train)).collect();

    let mut model = match &cfg.load_model {
        Some(path) => crate::fl::load_model(path)?,
        None => {
            let mut sizes = vec![train.feature_len()];
            sizes.extend_from_slice(&cfg.hidden);
            sizes.push(train.num_classes().max(test.num_classes()));
            init_model(&sizes, mix_seed(cfg.seed, STREAM_INIT_MODEL, 0))
        }
    };
    if model.layer_sizes()[0] != train.feature_len() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} input features, dataset provides {}",
            model.layer_sizes()[0],
            train.feature_len()
        )));
    }

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut selections = Vec::with_capacity(cfg.rounds);
    let mut cumulative_energy = 0.0;
    let mut cached: Option<(Vec<usize>, SelectionRecord)> = None;

    for round in 0..cfg.rounds {
        let reuse = round % cfg.reselect_every != 0
            && cached.as_ref().is_some_and(|(chosen, _)| {
                chosen.iter().all(|&k| {
                    swarm[k].is_deployed() && swarm[k].battery.level() >= cfg.battery_threshold
                })
            });
        if !reuse {
            cached = None;
        }
        let out = step(
            &swarm,
            &model,
            round,
            cfg,
            train,
            test,
            &censuses,
            cumulative_energy,
            cached.as_ref(),
        )?;
        cached = Some((out.metrics.selected.clone(), out.selection.clone()));
        swarm = out.swarm;
        model = out.model;
        cumulative_energy = out.metrics.cumulative_energy_joules;
        rounds.push(out.metrics);
        selections.push(out.selection);
    }

    Ok(RunResult {
        rounds,
        selections,
        final_model: model,
    })
}

/// One row per round:
/// `round,policy,accuracy,loss,m_available,n_selected,selected_ids,cum_energy_j`.
pub fn write_trace_csv(path: impl AsRef<Path>, rounds: &[RoundMetrics]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    writeln!(
        file,
        "round,policy,accuracy,loss,m_available,n_selected,selected_ids,cum_energy_j"
    )
    .map_err(io_err)?;
    for m in rounds {
        let ids = m
            .selected
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            file,
            "{},{},{:.6},{:.6},{},{},{},{:.3}",
            m.round_index,
            m.selection_policy,
            m.test_accuracy,
            m.train_loss,
            m.num_available,
            m.selected.len(),
            ids,
            m.cumulative_energy_joules
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// The same trace as a JSON array.
pub fn write_trace_json(path: impl AsRef<Path>, rounds: &[RoundMetrics]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let text = serde_json::to_string_pretty(rounds)
        .map_err(|e| Error::Config(format!("trace serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(io_err)
}

/// One JSON selection record per line.
pub fn write_selections_jsonl(
    path: impl AsRef<Path>,
    selections: &[SelectionRecord],
) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for s in selections {
        let line = serde_json::to_string(s)
            .map_err(|e| Error::Config(format!("selection serialization failed: {e}")))?;
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}
