//! Energy- and coverage-aware UAV selection.
//!
//! The solver picks the cheapest subset of available UAVs whose shards
//! collectively cover the required classes while keeping the class
//! distribution close to uniform:
//!
//! 1. `available` drops UAVs below the battery threshold or at the dock;
//! 2. `coverage_target` lowers the required class count to what the
//!    available swarm can actually reach;
//! 3. `filter_combinations` enumerates subsets, keeps those meeting the
//!    coverage and deviation constraints, and retains only the minimal
//!    cardinality `N_3` (with homogeneous hover power that minimizes
//!    total power);
//! 4. `battery_tiebreak` maximizes the minimum battery level, then the
//!    sum of levels, then takes the lexicographically smallest id set.
//!
//! Above `max_enumeration_uavs` the solver switches to a greedy cover and
//! labels the result as heuristic. [`brute_force_oracle`] re-solves small
//! instances with independent set machinery for differential testing, and
//! [`baseline_select`] provides the comparison policies.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{class_union, deviation, ClassCensus, DeviationMetric};
use crate::error::{Error, Result};

/// Snapshot of one UAV as the selector sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavInfo {
    pub id: usize,
    /// Battery level in [0, 1].
    pub battery_level: f64,
    /// True while the UAV sits at the docking station.
    pub recharging: bool,
    /// Propulsion power draw if selected, in watts.
    pub power_watts: f64,
}

/// Thresholds and limits of the selection problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Minimum battery level for a UAV to count as available.
    pub battery_threshold: f64,
    /// Upper bound on the class-distribution deviation of a candidate set.
    pub deviation_threshold: f64,
    pub num_classes: usize,
    /// Largest available set solved exactly; beyond this the greedy
    /// fallback runs and results are flagged as heuristic.
    pub max_enumeration_uavs: usize,
    pub deviation_metric: DeviationMetric,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            battery_threshold: 0.2,
            deviation_threshold: 0.5,
            num_classes: 10,
            max_enumeration_uavs: 20,
            deviation_metric: DeviationMetric::Normalized,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.battery_threshold > 0.0 && self.battery_threshold < 1.0) {
            return Err(Error::Config(format!(
                "battery threshold must lie in (0, 1), got {}",
                self.battery_threshold
            )));
        }
        if !(self.deviation_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "deviation threshold must be non-negative, got {}",
                self.deviation_threshold
            )));
        }
        if self.num_classes == 0 || self.num_classes > 64 {
            return Err(Error::Config(format!(
                "selection supports 1..=64 classes, got {}",
                self.num_classes
            )));
        }
        if self.max_enumeration_uavs > 63 {
            return Err(Error::Config(
                "exhaustive enumeration is capped at 63 UAVs".into(),
            ));
        }
        Ok(())
    }
}

/// Selection policies: the proposed solver plus the comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionPolicy {
    /// Coverage/deviation-constrained minimal selection.
    Proposed,
    /// Select every available UAV (plain federated averaging).
    SelectAll,
    /// A seeded random covering subset, not cardinality-minimized.
    Baseline1,
    /// The `N_3` highest-battery UAVs, ignoring classes.
    Baseline2,
    /// The single highest-battery UAV.
    Baseline3,
    /// Adversarial pick of maximally class-overlapping UAVs.
    WorstCase,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "SA" | "sa" | "select-all" => Ok(Self::SelectAll),
            "BL1" | "bl1" => Ok(Self::Baseline1),
            "BL2" | "bl2" => Ok(Self::Baseline2),
            "BL3" | "bl3" => Ok(Self::Baseline3),
            "WORST" | "worst" => Ok(Self::WorstCase),
            other => Err(Error::Config(format!("unknown policy '{other}'"))),
        }
    }
}

impl std::fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Proposed => "proposed",
            Self::SelectAll => "SA",
            Self::Baseline1 => "BL1",
            Self::Baseline2 => "BL2",
            Self::Baseline3 => "BL3",
            Self::WorstCase => "WORST",
        };
        write!(f, "{name}")
    }
}

/// A feasible selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Chosen UAV ids, ascending.
    pub chosen: Vec<usize>,
    /// The class count actually required: the full class count when
    /// reachable, otherwise the best the available swarm can do.
    pub coverage_target: usize,
    /// Minimal feasible cardinality.
    pub n3: usize,
    pub candidates_examined: u64,
    pub total_power_watts: f64,
    /// True when the greedy fallback produced the set.
    pub heuristic: bool,
}

/// Why no candidate satisfied the constraints, with the closest misses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleReport {
    pub coverage_target: usize,
    /// Largest class-union cardinality reached by any candidate.
    pub best_coverage: usize,
    /// Smallest deviation among candidates that reached the coverage
    /// target (infinite if none did).
    pub min_deviation: f64,
    pub candidates_examined: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SelectionOutcome {
    Feasible(SelectionResult),
    Infeasible(InfeasibleReport),
}

impl SelectionOutcome {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Self::Infeasible(_))
    }
}

/// Ids of deployed UAVs at or above the battery threshold, ascending.
pub fn available(uavs: &[UavInfo], battery_threshold: f64) -> Vec<usize> {
    let mut psi: Vec<usize> = uavs
        .iter()
        .filter(|u| !u.recharging && u.battery_level >= battery_threshold)
        .map(|u| u.id)
        .collect();
    psi.sort_unstable();
    psi
}

/// The coverage the available set can achieve: the full class count if
/// some subset reaches it, otherwise the union over all of psi (the
/// maximum over subsets is attained by the whole set).
pub fn coverage_target(
    censuses: &[ClassCensus],
    psi: &[usize],
    num_classes: usize,
) -> Result<usize> {
    if psi.is_empty() {
        return Err(Error::EmptyUavSet);
    }
    let union = class_union(censuses, psi).cardinality();
    Ok(union.min(num_classes))
}

/// Survivors of the coverage and deviation constraints at minimal
/// cardinality, or the infeasibility diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterOutcome {
    Candidates {
        /// All constraint-satisfying sets of cardinality exactly `n3`,
        /// each ascending, in lexicographic order.
        sets: Vec<Vec<usize>>,
        n3: usize,
        examined: u64,
    },
    Infeasible {
        best_coverage: usize,
        min_deviation: f64,
        examined: u64,
    },
}

/// Exhaustively enumerates the non-empty subsets of `psi`.
pub fn filter_combinations(
    psi: &[usize],
    censuses: &[ClassCensus],
    coverage_target: usize,
    deviation_threshold: f64,
    metric: DeviationMetric,
) -> Result<FilterOutcome> {
    if psi.is_empty() {
        return Err(Error::EmptyUavSet);
    }
    assert!(psi.len() <= 63, "enumeration needs |psi| <= 63");

    // Per-member constants: the set deviation decomposes into
    // sum(q_k * d_k) / sum(q_k) over members.
    let mut masks = Vec::with_capacity(psi.len());
    let mut q = Vec::with_capacity(psi.len());
    let mut qd = Vec::with_capacity(psi.len());
    for &k in psi {
        if censuses[k].total == 0 {
            return Err(Error::ZeroSampleUav(k));
        }
        masks.push(censuses[k].active_classes().as_bits());
        let total = censuses[k].total as f64;
        q.push(total);
        qd.push(total * deviation(censuses, &[k], metric)?);
    }

    let m = psi.len();
    let subsets: u64 = (1u64 << m) - 1;
    let mut best_coverage = 0usize;
    let mut min_deviation = f64::INFINITY;
    let mut n3 = usize::MAX;
    for mask in 1..=subsets {
        let mut union = 0u64;
        let mut q_sum = 0.0;
        let mut qd_sum = 0.0;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            union |= masks[i];
            q_sum += q[i];
            qd_sum += qd[i];
            bits &= bits - 1;
        }
        let coverage = union.count_ones() as usize;
        best_coverage = best_coverage.max(coverage);
        if coverage == coverage_target {
            let dev = qd_sum / q_sum;
            min_deviation = min_deviation.min(dev);
            if dev <= deviation_threshold {
                n3 = n3.min(mask.count_ones() as usize);
            }
        }
    }

    if n3 == usize::MAX {
        return Ok(FilterOutcome::Infeasible {
            best_coverage,
            min_deviation,
            examined: subsets,
        });
    }

    let mut sets = Vec::new();
    for mask in 1..=subsets {
        if mask.count_ones() as usize != n3 {
            continue;
        }
        let mut union = 0u64;
        let mut q_sum = 0.0;
        let mut qd_sum = 0.0;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            union |= masks[i];
            q_sum += q[i];
            qd_sum += qd[i];
            bits &= bits - 1;
        }
        if union.count_ones() as usize == coverage_target && qd_sum / q_sum <= deviation_threshold {
            let ids: Vec<usize> = (0..m)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| psi[i])
                .collect();
            sets.push(ids);
        }
    }
    sets.sort();
    Ok(FilterOutcome::Candidates {
        sets,
        n3,
        examined: subsets,
    })
}

/// Picks the candidate maximizing the minimum battery level, then the sum
/// of levels, then the lexicographically smallest id set.
pub fn battery_tiebreak(candidates: &[Vec<usize>], battery_levels: &[f64]) -> Vec<usize> {
    assert!(!candidates.is_empty(), "tie-break needs candidates");
    let mut best: Option<(&Vec<usize>, f64, f64)> = None;
    for set in candidates {
        let min = set
            .iter()
            .map(|&k| battery_levels[k])
            .fold(f64::INFINITY, f64::min);
        let sum: f64 = set.iter().map(|&k| battery_levels[k]).sum();
        let better = match &best {
            None => true,
            Some((cur, cur_min, cur_sum)) => {
                if min != *cur_min {
                    min > *cur_min
                } else if sum != *cur_sum {
                    sum > *cur_sum
                } else {
                    set < *cur
                }
            }
        };
        if better {
            best = Some((set, min, sum));
        }
    }
    best.unwrap().0.clone()
}

fn dense_levels_and_power(uavs: &[UavInfo]) -> (Vec<f64>, Vec<f64>) {
    let top = uavs.iter().map(|u| u.id).max().map_or(0, |m| m + 1);
    let mut levels = vec![0.0; top];
    let mut power = vec![0.0; top];
    for u in uavs {
        levels[u.id] = u.battery_level;
        power[u.id] = u.power_watts;
    }
    (levels, power)
}

/// Full selection pipeline over the currently available UAVs.
pub fn select(
    uavs: &[UavInfo],
    censuses: &[ClassCensus],
    config: &SelectionConfig,
) -> Result<SelectionOutcome> {
    config.validate()?;
    let psi = available(uavs, config.battery_threshold);
    if psi.is_empty() {
        return Err(Error::NoAvailableUavs);
    }
    let target = coverage_target(censuses, &psi, config.num_classes)?;
    let (levels, power) = dense_levels_and_power(uavs);

    if psi.len() <= config.max_enumeration_uavs {
        match filter_combinations(
            &psi,
            censuses,
            target,
            config.deviation_threshold,
            config.deviation_metric,
        )? {
            FilterOutcome::Candidates { sets, n3, examined } => {
                let chosen = battery_tiebreak(&sets, &levels);
                let total_power_watts = chosen.iter().map(|&k| power[k]).sum();
                Ok(SelectionOutcome::Feasible(SelectionResult {
                    chosen,
                    coverage_target: target,
                    n3,
                    candidates_examined: examined,
                    total_power_watts,
                    heuristic: false,
                }))
            }
            FilterOutcome::Infeasible {
                best_coverage,
                min_deviation,
                examined,
            } => Ok(SelectionOutcome::Infeasible(InfeasibleReport {
                coverage_target: target,
                best_coverage,
                min_deviation,
                candidates_examined: examined,
            })),
        }
    } else {
        greedy_select(&psi, censuses, target, config, &levels, &power)
    }
}

/// Greedy cover for swarms too large to enumerate: repeatedly add the UAV
/// contributing the most uncovered classes (ties: higher battery, then
/// lower id), then apply the deviation check.
fn greedy_select(
    psi: &[usize],
    censuses: &[ClassCensus],
    target: usize,
    config: &SelectionConfig,
    levels: &[f64],
    power: &[f64],
) -> Result<SelectionOutcome> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut union = 0u64;
    let mut remaining: Vec<usize> = psi.to_vec();
    let mut examined = 0u64;
    while (union.count_ones() as usize) < target && !remaining.is_empty() {
        let mut best: Option<(usize, usize, f64)> = None; // (idx, gain, level)
        for (idx, &k) in remaining.iter().enumerate() {
            examined += 1;
            let gain = ((censuses[k].active_classes().as_bits() | union).count_ones()
                - union.count_ones()) as usize;
            let better = match best {
                None => true,
                Some((_, best_gain, best_level)) => {
                    gain > best_gain || (gain == best_gain && levels[k] > best_level)
                }
            };
            if better {
                best = Some((idx, gain, levels[k]));
            }
        }
        let (idx, _, _) = best.unwrap();
        let k = remaining.remove(idx);
        union |= censuses[k].active_classes().as_bits();
        chosen.push(k);
    }
    chosen.sort_unstable();
    let coverage = union.count_ones() as usize;
    let dev = deviation(censuses, &chosen, config.deviation_metric)?;
    if coverage < target || dev > config.deviation_threshold {
        return Ok(SelectionOutcome::Infeasible(InfeasibleReport {
            coverage_target: target,
            best_coverage: coverage,
            min_deviation: if coverage == target {
                dev
            } else {
                f64::INFINITY
            },
            candidates_examined: examined,
        }));
    }
    let total_power_watts = chosen.iter().map(|&k| power[k]).sum();
    Ok(SelectionOutcome::Feasible(SelectionResult {
        n3: chosen.len(),
        chosen,
        coverage_target: target,
        candidates_examined: examined,
        total_power_watts,
        heuristic: true,
    }))
}

/// Independent exhaustive re-solve for differential testing. Shares no
/// set machinery with [`select`]: unions use ordered sets instead of bit
/// masks and the deviation is recomputed from scratch per subset.
pub fn brute_force_oracle(
    uavs: &[UavInfo],
    censuses: &[ClassCensus],
    config: &SelectionConfig,
) -> Result<SelectionOutcome> {
    config.validate()?;
    let mut psi: Vec<usize> = uavs
        .iter()
        .filter(|u| !u.recharging && u.battery_level >= config.battery_threshold)
        .map(|u| u.id)
        .collect();
    psi.sort_unstable();
    if psi.is_empty() {
        return Err(Error::NoAvailableUavs);
    }
    if psi.len() > 15 {
        return Err(Error::Config(format!(
            "oracle is limited to 15 available UAVs, got {}",
            psi.len()
        )));
    }
    for &k in &psi {
        if censuses[k].total == 0 {
            return Err(Error::ZeroSampleUav(k));
        }
    }

    let union_of = |set: &[usize]| -> BTreeSet<usize> {
        let mut classes = BTreeSet::new();
        for &k in set {
            for (class, &count) in censuses[k].counts_per_class.iter().enumerate() {
                if count > 0 {
                    classes.insert(class);
                }
            }
        }
        classes
    };
    let deviation_of = |set: &[usize]| -> f64 {
        let n: f64 = set.iter().map(|&k| censuses[k].total as f64).sum();
        set.iter()
            .map(|&k| {
                let c = &censuses[k];
                let q = c.total as f64;
                let inner: f64 = match config.deviation_metric {
                    DeviationMetric::Normalized => c
                        .counts_per_class
                        .iter()
                        .map(|&x| (x as f64 / q - 1.0 / c.counts_per_class.len() as f64).abs())
                        .sum(),
                    DeviationMetric::PaperLiteral => {
                        let mean = c.counts_per_class.iter().sum::<usize>() as f64 / q;
                        c.counts_per_class
                            .iter()
                            .map(|&x| (x as f64 - mean).abs())
                            .sum()
                    }
                };
                q / n * inner
            })
            .sum()
    };

    let target = union_of(&psi).len().min(config.num_classes);
    let (levels, power) = dense_levels_and_power(uavs);

    let m = psi.len();
    let subsets: u64 = (1u64 << m) - 1;
    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    let mut best_coverage = 0usize;
    let mut min_deviation = f64::INFINITY;
    for mask in 1..=subsets {
        let set: Vec<usize> = (0..m)
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| psi[i])
            .collect();
        let coverage = union_of(&set).len();
        best_coverage = best_coverage.max(coverage);
        if coverage != target {
            continue;
        }
        let dev = deviation_of(&set);
        min_deviation = min_deviation.min(dev);
        if dev > config.deviation_threshold {
            continue;
        }
        let min_level = set.iter().map(|&k| levels[k]).fold(f64::INFINITY, f64::min);
        let sum_level: f64 = set.iter().map(|&k| levels[k]).sum();
        let better = match &best {
            None => true,
            Some((cur, cur_min, cur_sum)) => {
                if set.len() != cur.len() {
                    set.len() < cur.len()
                } else if min_level != *cur_min {
                    min_level > *cur_min
                } else if sum_level != *cur_sum {
                    sum_level > *cur_sum
                } else {
                    set < *cur
                }
            }
        };
        if better {
            best = Some((set, min_level, sum_level));
        }
    }

    match best {
        Some((chosen, _, _)) => {
            let total_power_watts = chosen.iter().map(|&k| power[k]).sum();
            Ok(SelectionOutcome::Feasible(SelectionResult {
                n3: chosen.len(),
                coverage_target: target,
                candidates_examined: subsets,
                total_power_watts,
                heuristic: false,
                chosen,
            }))
        }
        None => Ok(SelectionOutcome::Infeasible(InfeasibleReport {
            coverage_target: target,
            best_coverage,
            min_deviation,
            candidates_examined: subsets,
        })),
    }
}

/// Runs one of the baseline policies. `worst_m` is only read by the
/// worst-case policy and gives the number of UAVs it must pick.
pub fn baseline_select(
    kind: SelectionPolicy,
    uavs: &[UavInfo],
    censuses: &[ClassCensus],
    config: &SelectionConfig,
    seed: u64,
    worst_m: usize,
) -> Result<Vec<usize>> {
    config.validate()?;
    let psi = available(uavs, config.battery_threshold);
    if psi.is_empty() {
        return Err(Error::NoAvailableUavs);
    }
    let (levels, _) = dense_levels_and_power(uavs);
    let by_battery_desc = |ids: &[usize]| -> Vec<usize> {
        let mut sorted = ids.to_vec();
        sorted.sort_by(|&a, &b| levels[b].partial_cmp(&levels[a]).unwrap().then(a.cmp(&b)));
        sorted
    };

    match kind {
        SelectionPolicy::Proposed => Err(Error::Config(
            "the proposed policy is handled by select()".into(),
        )),
        SelectionPolicy::SelectAll => Ok(psi),
        SelectionPolicy::Baseline1 => {
            let target = coverage_target(censuses, &psi, config.num_classes)?;
            let mut order = psi.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
            let mut chosen = Vec::new();
            let mut union = crate::data::ClassSet::empty();
            for k in order {
                if union.cardinality() >= target {
                    break;
                }
                union = union.union(censuses[k].active_classes());
                chosen.push(k);
            }
            chosen.sort_unstable();
            Ok(chosen)
        }
        SelectionPolicy::Baseline2 => {
            let n3 = match select(uavs, censuses, config)? {
                SelectionOutcome::Feasible(result) => result.n3,
                // Deviation-infeasible instance: match the size of the
                // coverage-only relaxation instead.
                SelectionOutcome::Infeasible(_) => {
                    let relaxed = SelectionConfig {
                        deviation_threshold: f64::INFINITY,
                        ..*config
                    };
                    match select(uavs, censuses, &relaxed)? {
                        SelectionOutcome::Feasible(result) => result.n3,
                        SelectionOutcome::Infeasible(_) => {
                            unreachable!("coverage target is attained by the full available set")
                        }
                    }
                }
            };
            let mut chosen: Vec<usize> = by_battery_desc(&psi).into_iter().take(n3).collect();
            chosen.sort_unstable();
            Ok(chosen)
        }
        SelectionPolicy::Baseline3 => Ok(vec![by_battery_desc(&psi)[0]]),
        SelectionPolicy::WorstCase => {
            if worst_m == 0 {
                return Err(Error::Config("worst-case policy needs m >= 1".into()));
            }
            let m = worst_m.min(psi.len());
            let overlap = |a: usize, b: usize| -> usize {
                censuses[a]
                    .active_classes()
                    .intersection(censuses[b].active_classes())
                    .cardinality()
            };
            let mut chosen: Vec<usize> = Vec::with_capacity(m);
            if m == 1 {
                // The most redundant single UAV: largest total overlap
                // with the rest of the swarm.
                let k = psi
                    .iter()
                    .copied()
                    .max_by_key(|&a| {
                        let total: usize = psi
                            .iter()
                            .filter(|&&b| b != a)
                            .map(|&b| overlap(a, b))
                            .sum();
                        (total, std::cmp::Reverse(a))
                    })
                    .unwrap();
                chosen.push(k);
            } else {
                let mut best_pair = (psi[0], psi[1], 0usize);
                let mut found = false;
                for (i, &a) in psi.iter().enumerate() {
                    for &b in &psi[i + 1..] {
                        let o = overlap(a, b);
                        if !found || o > best_pair.2 {
                            best_pair = (a, b, o);
                            found = true;
                        }
                    }
                }
                chosen.push(best_pair.0);
                chosen.push(best_pair.1);
                while chosen.len() < m {
                    let k = psi
                        .iter()
                        .copied()
                        .filter(|k| !chosen.contains(k))
                        .max_by_key(|&a| {
                            let total: usize = chosen.iter().map(|&b| overlap(a, b)).sum();
                            (total, std::cmp::Reverse(a))
                        })
                        .unwrap();
                    chosen.push(k);
                }
            }
            chosen.sort_unstable();
            Ok(chosen)
        }
    }
}
