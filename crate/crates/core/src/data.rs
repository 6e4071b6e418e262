//! Dataset ingestion and class-imbalanced partitioning across a swarm.
//!
//! Datasets arrive as big-endian IDX files (magic 0x00000803 for images,
//! 0x00000801 for labels). The partitioner hands every UAV an equal number
//! of samples drawn from a limited set of "active" classes; the imbalance
//! rate `mu` controls how many classes stay active per UAV:
//! `c = max(1, round((1 - mu) * L))`.
//!
//! Active classes are assigned by a seeded rotation: UAV k gets classes
//! `{(rank_k * stride + rot + j) mod L : j < c}` with `stride = max(1, L/K)`,
//! where `rot` and the UAV order `rank` are drawn from the seed. This keeps
//! collective coverage achievable at moderate swarm sizes while different
//! seeds vary which UAVs overlap.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// An immutable labeled dataset with flattened feature vectors in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    feature_len: usize,
    labels: Vec<u8>,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset from raw parts, checking shape invariants.
    pub fn from_parts(
        features: Vec<f64>,
        feature_len: usize,
        labels: Vec<u8>,
        num_classes: usize,
    ) -> Result<Self> {
        if feature_len == 0 || features.len() != labels.len() * feature_len {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values do not form {} vectors of length {}",
                features.len(),
                labels.len(),
                feature_len
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                num_classes,
            });
        }
        Ok(Self {
            features,
            feature_len,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Feature vector of sample `i`.
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_len..(i + 1) * self.feature_len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }
}

fn read_be_u32(buf: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let bytes = buf
        .get(offset..offset + 4)
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header field at byte {offset} missing"),
        })?;
    Ok(u32::from_be_bytes(bytes.try_into().unwrap()))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an image/label IDX file pair into a [`Dataset`].
///
/// Pixels are scaled by 1/255; the class count is inferred from the
/// largest label present.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let image_buf = read_file(images_path)?;
    let magic = read_be_u32(&image_buf, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::WrongMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let n_images = read_be_u32(&image_buf, 4, images_path)? as usize;
    let rows = read_be_u32(&image_buf, 8, images_path)? as usize;
    let cols = read_be_u32(&image_buf, 12, images_path)? as usize;
    let feature_len = rows * cols;
    let expected = 16 + n_images * feature_len;
    if image_buf.len() != expected {
        return Err(Error::Truncated {
            path: images_path.to_path_buf(),
            detail: format!(
                "expected {expected} bytes for {n_images} images of {rows}x{cols}, found {}",
                image_buf.len()
            ),
        });
    }

    let label_buf = read_file(labels_path)?;
    let magic = read_be_u32(&label_buf, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::WrongMagic {
            path: labels_path.to_path_buf(),
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let n_labels = read_be_u32(&label_buf, 4, labels_path)? as usize;
    if label_buf.len() != 8 + n_labels {
        return Err(Error::Truncated {
            path: labels_path.to_path_buf(),
            detail: format!(
                "expected {} bytes for {n_labels} labels, found {}",
                8 + n_labels,
                label_buf.len()
            ),
        });
    }
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let features: Vec<f64> = image_buf[16..]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels = label_buf[8..].to_vec();
    let num_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Dataset::from_parts(features, feature_len, labels, num_classes)
}

/// The slice of a dataset owned by one UAV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub owner_uav: usize,
    pub sample_indices: Vec<usize>,
}

/// How samples are spread over a UAV's active classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionMode {
    /// Every active class receives an equal share.
    UniformWithinActive,
    /// Active-class shares follow a seeded geometric decay (ratio 0.5),
    /// so a few classes dominate each shard.
    SkewedWithinActive,
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-within-active" | "uniform" => Ok(Self::UniformWithinActive),
            "skewed-within-active" | "skewed" => Ok(Self::SkewedWithinActive),
            other => Err(Error::Config(format!("unknown partition mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::UniformWithinActive => write!(f, "uniform-within-active"),
            Self::SkewedWithinActive => write!(f, "skewed-within-active"),
        }
    }
}

/// Splits `total` into `parts` shares decaying geometrically with ratio
/// 0.5, rounded by largest remainder so they sum to `total` exactly.
fn geometric_shares(total: usize, parts: usize) -> Vec<usize> {
    let weight_sum: f64 = (0..parts).map(|j| 0.5f64.powi(j as i32)).sum();
    let raw: Vec<f64> = (0..parts)
        .map(|j| total as f64 * 0.5f64.powi(j as i32) / weight_sum)
        .collect();
    let mut shares: Vec<usize> = raw.iter().map(|&r| r as usize).collect();
    let assigned: usize = shares.iter().sum();
    let mut fracs: Vec<(usize, f64)> = raw
        .iter()
        .enumerate()
        .map(|(j, &r)| (j, r - shares[j] as f64))
        .collect();
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(j, _) in fracs.iter().take(total - assigned) {
        shares[j] += 1;
    }
    shares
}

/// Number of active classes implied by imbalance rate `mu`.
pub fn active_class_count(mu: f64, num_classes: usize) -> usize {
    (((1.0 - mu) * num_classes as f64).round() as usize)
        .max(1)
        .min(num_classes)
}

/// Splits a dataset across `num_uavs` UAVs under imbalance rate `mu`.
///
/// Every UAV ends up with the same total sample count; leftover samples
/// are dropped rather than redistributed. Shards are pairwise disjoint.
pub fn partition(
    dataset: &Dataset,
    num_uavs: usize,
    imbalance_rate: f64,
    mode: PartitionMode,
    seed: u64,
) -> Result<Vec<Shard>> {
    if !(0.0..=0.9).contains(&imbalance_rate) {
        return Err(Error::ImbalanceOutOfRange(imbalance_rate));
    }
    if num_uavs == 0 || num_uavs > dataset.len() {
        return Err(Error::TooManyUavs {
            samples: dataset.len(),
            uavs: num_uavs,
        });
    }
    let num_classes = dataset.num_classes();
    let active = active_class_count(imbalance_rate, num_classes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per-class index pools, each in a seeded order.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for i in 0..dataset.len() {
        pools[dataset.label(i)].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    // Seeded rotation plus a seeded UAV order decide the active classes.
    let rotation = rng.gen_range(0..num_classes);
    let mut uav_order: Vec<usize> = (0..num_uavs).collect();
    uav_order.shuffle(&mut rng);
    let mut rank = vec![0usize; num_uavs];
    for (pos, &uav) in uav_order.iter().enumerate() {
        rank[uav] = pos;
    }
    let stride = (num_classes / num_uavs).max(1);
    let actives: Vec<Vec<usize>> = (0..num_uavs)
        .map(|k| {
            let mut classes: Vec<usize> = (0..active)
                .map(|j| (rank[k] * stride + rotation + j) % num_classes)
                .collect();
            classes.sort_unstable();
            classes
        })
        .collect();

    // Per-UAV per-class targets.
    let per_uav = dataset.len() / num_uavs;
    let mut wants: Vec<Vec<usize>> = vec![vec![0; num_classes]; num_uavs];
    match mode {
        PartitionMode::UniformWithinActive => {
            let base = per_uav / active;
            let remainder = per_uav % active;
            for (k, classes) in actives.iter().enumerate() {
                for (slot, &class) in classes.iter().enumerate() {
                    wants[k][class] = base + usize::from(slot < remainder);
                }
            }
        }
        PartitionMode::SkewedWithinActive => {
            let shares = geometric_shares(per_uav, active);
            for (k, classes) in actives.iter().enumerate() {
                let mut order = classes.clone();
                order.shuffle(&mut rng);
                for (j, &class) in order.iter().enumerate() {
                    wants[k][class] = shares[j];
                }
            }
        }
    }

    // Scale down over-subscribed classes proportionally to what the pool
    // can actually supply.
    for class in 0..num_classes {
        let demand: usize = wants.iter().map(|w| w[class]).sum();
        let supply = pools[class].len();
        if demand > supply {
            for w in &mut wants {
                w[class] = w[class] * supply / demand;
            }
        }
    }

    // Equalize totals: trim over-endowed UAVs down to the common minimum,
    // taking from their currently largest classes.
    let totals: Vec<usize> = wants.iter().map(|w| w.iter().sum()).collect();
    let target = *totals.iter().min().unwrap();
    for (k, total) in totals.into_iter().enumerate() {
        let mut surplus = total - target;
        while surplus > 0 {
            let class = actives[k]
                .iter()
                .copied()
                .max_by_key(|&l| (wants[k][l], l))
                .unwrap();
            wants[k][class] -= 1;
            surplus -= 1;
        }
    }

    // Draw from the shuffled pools; a cursor per class keeps shards disjoint.
    let mut cursor = vec![0usize; num_classes];
    let shards = (0..num_uavs)
        .map(|k| {
            let mut indices = Vec::with_capacity(target);
            for &class in &actives[k] {
                let take = wants[k][class];
                indices.extend_from_slice(&pools[class][cursor[class]..cursor[class] + take]);
                cursor[class] += take;
            }
            Shard {
                owner_uav: k,
                sample_indices: indices,
            }
        })
        .collect();
    Ok(shards)
}

/// Per-class sample counts of one shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCensus {
    pub counts_per_class: Vec<usize>,
    pub total: usize,
}

impl ClassCensus {
    /// Classes with at least one sample.
    pub fn active_classes(&self) -> ClassSet {
        let mut set = ClassSet::empty();
        for (class, &count) in self.counts_per_class.iter().enumerate() {
            if count > 0 {
                set.insert(class);
            }
        }
        set
    }
}

/// Counts the labels of a shard's samples.
pub fn census(shard: &Shard, dataset: &Dataset) -> ClassCensus {
    let mut counts = vec![0usize; dataset.num_classes()];
    for &i in &shard.sample_indices {
        counts[dataset.label(i)] += 1;
    }
    ClassCensus {
        total: shard.sample_indices.len(),
        counts_per_class: counts,
    }
}

/// A set of class ids backed by a 64-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassSet(u64);

impl ClassSet {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn insert(&mut self, class: usize) {
        assert!(class < 64, "class sets support at most 64 classes");
        self.0 |= 1 << class;
    }

    pub fn contains(&self, class: usize) -> bool {
        class < 64 && self.0 & (1 << class) != 0
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        Self(self.0 & other.0)
    }

    pub fn cardinality(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn classes(&self) -> Vec<usize> {
        (0..64).filter(|&c| self.contains(c)).collect()
    }

    pub fn as_bits(&self) -> u64 {
        self.0
    }
}

impl FromIterator<usize> for ClassSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let mut set = Self::empty();
        for class in iter {
            set.insert(class);
        }
        set
    }
}

/// Union of active class sets over the given UAVs.
pub fn class_union(censuses: &[ClassCensus], uav_set: &[usize]) -> ClassSet {
    uav_set
        .iter()
        .map(|&k| censuses[k].active_classes())
        .fold(ClassSet::empty(), ClassSet::union)
}

/// Which form of the class-distribution deviation to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviationMetric {
    /// Sample-weighted distance between each member's class distribution
    /// and the uniform distribution over all L classes. Zero exactly when
    /// every member is uniform; at most 2(L-1)/L.
    Normalized,
    /// Audit variant: per-class counts compared against the per-UAV mean
    /// O_k = (1/Q_k) * sum_l C_{k,l}, exactly as sometimes written. Since
    /// that mean is identically 1, the value grows with shard size and is
    /// kept only for side-by-side inspection.
    PaperLiteral,
}

impl std::str::FromStr for DeviationMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(Error::Config(format!("unknown deviation metric '{other}'"))),
        }
    }
}

impl std::fmt::Display for DeviationMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Normalized => write!(f, "normalized"),
            Self::PaperLiteral => write!(f, "paper-literal"),
        }
    }
}

/// Class-distribution deviation of a UAV set from uniformity.
pub fn deviation(
    censuses: &[ClassCensus],
    uav_set: &[usize],
    metric: DeviationMetric,
) -> Result<f64> {
    if uav_set.is_empty() {
        return Err(Error::EmptyUavSet);
    }
    for &k in uav_set {
        if censuses[k].total == 0 {
            return Err(Error::ZeroSampleUav(k));
        }
    }
    let n: f64 = uav_set.iter().map(|&k| censuses[k].total as f64).sum();
    let mut sum = 0.0;
    for &k in uav_set {
        let c = &censuses[k];
        let q = c.total as f64;
        let per_uav: f64 = match metric {
            DeviationMetric::Normalized => {
                let uniform = 1.0 / c.counts_per_class.len() as f64;
                c.counts_per_class
                    .iter()
                    .map(|&count| (count as f64 / q - uniform).abs())
                    .sum()
            }
            DeviationMetric::PaperLiteral => {
                let mean = c.counts_per_class.iter().sum::<usize>() as f64 / q;
                c.counts_per_class
                    .iter()
                    .map(|&count| (count as f64 - mean).abs())
                    .sum()
            }
        };
        sum += q / n * per_uav;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Balanced synthetic dataset: `per_class` samples of each class,
    /// feature = label scaled into [0, 1].
    pub(crate) fn balanced_dataset(num_classes: usize, per_class: usize) -> Dataset {
        let n = num_classes * per_class;
        let mut labels = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % num_classes) as u8;
            labels.push(label);
            features.push(f64::from(label) / num_classes as f64);
        }
        Dataset::from_parts(features, 1, labels, num_classes).unwrap()
    }

    fn write_idx_pair(
        dir: &std::path::Path,
        images_magic: u32,
        labels_magic: u32,
        n_images: usize,
        n_labels: usize,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = Vec::new();
        img.extend_from_slice(&images_magic.to_be_bytes());
        img.extend_from_slice(&(n_images as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend(std::iter::repeat(128u8).take(n_images * 4));
        let mut lab = Vec::new();
        lab.extend_from_slice(&labels_magic.to_be_bytes());
        lab.extend_from_slice(&(n_labels as u32).to_be_bytes());
        lab.extend((0..n_labels).map(|i| (i % 3) as u8));
        let images_path = dir.join("images-idx3-ubyte");
        let labels_path = dir.join("labels-idx1-ubyte");
        std::fs::write(&images_path, img).unwrap();
        std::fs::write(&labels_path, lab).unwrap();
        (images_path, labels_path)
    }

    #[test]
    fn load_idx_parses_valid_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labs) = write_idx_pair(dir.path(), IMAGES_MAGIC, LABELS_MAGIC, 9, 9);
        let ds = load_idx(&imgs, &labs).unwrap();
        assert_eq!(ds.len(), 9);
        assert_eq!(ds.feature_len(), 4);
        assert_eq!(ds.num_classes(), 3);
        assert!((ds.feature(0)[0] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn load_idx_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labs) = write_idx_pair(dir.path(), LABELS_MAGIC, LABELS_MAGIC, 4, 4);
        match load_idx(&imgs, &labs) {
            Err(Error::WrongMagic {
                found, expected, ..
            }) => {
                assert_eq!(found, LABELS_MAGIC);
                assert_eq!(expected, IMAGES_MAGIC);
            }
            other => panic!("expected WrongMagic, got {other:?}"),
        }
    }

    #[test]
    fn load_idx_rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labs) = write_idx_pair(dir.path(), IMAGES_MAGIC, LABELS_MAGIC, 100, 99);
        match load_idx(&imgs, &labs) {
            Err(Error::CountMismatch { images, labels }) => {
                assert_eq!((images, labels), (100, 99));
            }
            other => panic!("expected CountMismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_idx_rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labs) = write_idx_pair(dir.path(), IMAGES_MAGIC, LABELS_MAGIC, 4, 4);
        let mut bytes = std::fs::read(&imgs).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&imgs, bytes).unwrap();
        assert!(matches!(
            load_idx(&imgs, &labs),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn active_class_count_tracks_mu() {
        for (mu, expected) in [(0.0, 10), (0.2, 8), (0.5, 5), (0.7, 3), (0.8, 2), (0.9, 1)] {
            assert_eq!(active_class_count(mu, 10), expected, "mu={mu}");
        }
    }

    #[test]
    fn partition_mu_semantics_across_swarm() {
        let ds = balanced_dataset(10, 1000);
        for (mu, expected) in [(0.0, 10), (0.2, 8), (0.5, 5), (0.9, 1)] {
            let shards = partition(&ds, 10, mu, PartitionMode::UniformWithinActive, 7).unwrap();
            for shard in &shards {
                let c = census(shard, &ds);
                assert_eq!(
                    c.active_classes().cardinality(),
                    expected,
                    "mu={mu} uav={}",
                    shard.owner_uav
                );
            }
        }
    }

    #[test]
    fn partition_equal_totals_and_disjoint() {
        let ds = balanced_dataset(10, 997);
        let shards = partition(&ds, 7, 0.5, PartitionMode::UniformWithinActive, 3).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.sample_indices.len()).collect();
        assert!(sizes.windows(2).all(|w| w[0] == w[1]), "sizes {sizes:?}");
        let mut seen = std::collections::HashSet::new();
        for shard in &shards {
            for &i in &shard.sample_indices {
                assert!(i < ds.len());
                assert!(seen.insert(i), "index {i} appears twice");
            }
        }
        assert!(seen.len() <= ds.len());
    }

    #[test]
    fn partition_is_deterministic_and_seed_sensitive() {
        let ds = balanced_dataset(10, 100);
        let a = partition(&ds, 5, 0.5, PartitionMode::UniformWithinActive, 11).unwrap();
        let b = partition(&ds, 5, 0.5, PartitionMode::UniformWithinActive, 11).unwrap();
        assert_eq!(a, b);
        let c = partition(&ds, 5, 0.5, PartitionMode::UniformWithinActive, 12).unwrap();
        assert_ne!(a, c);
        // Different seeds keep per-UAV active-class counts and totals.
        for (sa, sc) in a.iter().zip(&c) {
            assert_eq!(sa.sample_indices.len(), sc.sample_indices.len());
            assert_eq!(
                census(sa, &ds).active_classes().cardinality(),
                census(sc, &ds).active_classes().cardinality()
            );
        }
    }

    #[test]
    fn partition_uniform_share_example() {
        // 12000 samples, 1200 per class, two UAVs at mu=0.5: disjoint
        // 5-class shards with exactly 1200 samples in each active class.
        let ds = balanced_dataset(10, 1200);
        let shards = partition(&ds, 2, 0.5, PartitionMode::UniformWithinActive, 5).unwrap();
        for shard in &shards {
            assert_eq!(shard.sample_indices.len(), 6000);
            let c = census(shard, &ds);
            let nonzero: Vec<usize> = c
                .counts_per_class
                .iter()
                .copied()
                .filter(|&x| x > 0)
                .collect();
            assert_eq!(nonzero, vec![1200; 5]);
        }
    }

    #[test]
    fn geometric_shares_halve_and_sum_exactly() {
        let shares = geometric_shares(20000, 5);
        assert_eq!(shares.iter().sum::<usize>(), 20000);
        // 20000 / 1.9375 * [1, 0.5, 0.25, 0.125, 0.0625]
        assert_eq!(shares, vec![10323, 5161, 2581, 1290, 645]);
        for w in shares.windows(2) {
            let ratio = w[1] as f64 / w[0] as f64;
            assert!((ratio - 0.5).abs() < 0.001, "shares {shares:?}");
        }
    }

    #[test]
    fn partition_skewed_concentrates_mass() {
        let ds = balanced_dataset(10, 4000);
        let shards = partition(&ds, 10, 0.5, PartitionMode::SkewedWithinActive, 9).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.sample_indices.len()).collect();
        assert!(sizes.windows(2).all(|w| w[0] == w[1]), "sizes {sizes:?}");
        for shard in &shards {
            let c = census(shard, &ds);
            let nonzero: Vec<usize> = c
                .counts_per_class
                .iter()
                .copied()
                .filter(|&x| x > 0)
                .collect();
            assert_eq!(nonzero.len(), 5);
            // Class pools cap the head of the decay, but the shard must
            // stay visibly lopsided, unlike the uniform mode.
            let max = *nonzero.iter().max().unwrap();
            let min = *nonzero.iter().min().unwrap();
            assert!(
                max as f64 >= 2.0 * min as f64,
                "expected severe imbalance, got {nonzero:?}"
            );
        }
    }

    #[test]
    fn partition_rejects_bad_inputs() {
        let ds = balanced_dataset(4, 5);
        assert!(matches!(
            partition(&ds, 3, 1.2, PartitionMode::UniformWithinActive, 0),
            Err(Error::ImbalanceOutOfRange(_))
        ));
        assert!(matches!(
            partition(&ds, 21, 0.0, PartitionMode::UniformWithinActive, 0),
            Err(Error::TooManyUavs { .. })
        ));
    }

    #[test]
    fn census_counts_labels() {
        let ds = balanced_dataset(10, 10);
        let empty = Shard {
            owner_uav: 0,
            sample_indices: vec![],
        };
        let c = census(&empty, &ds);
        assert_eq!(c.total, 0);
        assert!(c.counts_per_class.iter().all(|&x| x == 0));

        // 50 samples all of label 3: labels repeat 0..9, so 3, 13, 23, ...
        let threes = Shard {
            owner_uav: 1,
            sample_indices: (0..50).map(|j| 3 + 10 * (j % 10)).collect(),
        };
        let c = census(&threes, &ds);
        assert_eq!(c.total, 50);
        assert_eq!(c.counts_per_class[3], 50);
        assert_eq!(c.counts_per_class.iter().sum::<usize>(), 50);
    }

    fn census_of(counts: &[usize]) -> ClassCensus {
        ClassCensus {
            total: counts.iter().sum(),
            counts_per_class: counts.to_vec(),
        }
    }

    #[test]
    fn class_union_examples() {
        let censuses = vec![
            census_of(&[5, 5, 0]),
            census_of(&[0, 0, 7]),
            census_of(&[1, 1, 1]),
        ];
        assert_eq!(class_union(&censuses, &[0, 1]).cardinality(), 3);
        assert_eq!(class_union(&censuses, &[0]), censuses[0].active_classes());
        let singles: Vec<ClassCensus> = (0..10)
            .map(|c| {
                let mut counts = vec![0; 10];
                counts[c] = 1;
                census_of(&counts)
            })
            .collect();
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(class_union(&singles, &all).cardinality(), 10);
    }

    #[test]
    fn deviation_examples() {
        // Perfectly uniform UAVs: zero deviation.
        let uniform = vec![census_of(&[10, 10, 10, 10]), census_of(&[3, 3, 3, 3])];
        let d = deviation(&uniform, &[0, 1], DeviationMetric::Normalized).unwrap();
        assert!(d.abs() < 1e-15);

        // One UAV, all mass in one of two classes.
        let skew2 = vec![census_of(&[8, 0])];
        let d = deviation(&skew2, &[0], DeviationMetric::Normalized).unwrap();
        assert!((d - 1.0).abs() < 1e-12);

        // One UAV, all mass in one of ten classes: 0.9 + 9 * 0.1 = 1.8.
        let mut counts = vec![0; 10];
        counts[4] = 123;
        let skew10 = vec![census_of(&counts)];
        let d = deviation(&skew10, &[0], DeviationMetric::Normalized).unwrap();
        assert!((d - 1.8).abs() < 1e-12);
    }

    #[test]
    fn deviation_error_paths() {
        let censuses = vec![census_of(&[1, 1]), census_of(&[0, 0])];
        assert!(matches!(
            deviation(&censuses, &[], DeviationMetric::Normalized),
            Err(Error::EmptyUavSet)
        ));
        assert!(matches!(
            deviation(&censuses, &[0, 1], DeviationMetric::Normalized),
            Err(Error::ZeroSampleUav(1))
        ));
    }

    #[test]
    fn deviation_paper_literal_variant() {
        // O_k evaluates to 1, so each class contributes |count - 1|.
        let censuses = vec![census_of(&[4, 0])];
        let d = deviation(&censuses, &[0], DeviationMetric::PaperLiteral).unwrap();
        assert!((d - 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn deviation_bounded_by_max(counts in prop::collection::vec(0usize..50, 2..12)) {
            prop_assume!(counts.iter().sum::<usize>() > 0);
            let num_classes = counts.len();
            let censuses = vec![census_of(&counts)];
            let d = deviation(&censuses, &[0], DeviationMetric::Normalized).unwrap();
            let max = 2.0 * (num_classes as f64 - 1.0) / num_classes as f64;
            prop_assert!(d >= -1e-15 && d <= max + 1e-12);
        }

        #[test]
        fn census_totals_match_shard_sizes(
            k in 1usize..8,
            mu in 0.0..0.9f64,
            seed in 0u64..50,
        ) {
            let ds = balanced_dataset(10, 200);
            let shards = partition(&ds, k, mu, PartitionMode::UniformWithinActive, seed).unwrap();
            let mut total = 0;
            for shard in &shards {
                let c = census(shard, &ds);
                prop_assert_eq!(c.total, shard.sample_indices.len());
                prop_assert_eq!(c.counts_per_class.iter().sum::<usize>(), c.total);
                total += c.total;
            }
            prop_assert!(total <= ds.len());
        }
    }
}
