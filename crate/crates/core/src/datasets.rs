//! Experimental splits: the intervention partition of real trials into a
//! set covered by the synthetic interventions and its complement, 60/20/20
//! splits, fixed-size synthetic/real ratio mixes and class-balanced
//! generalization sets.
//!
//! Every builder is a pure function of its inputs and a seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{canonicalize_name, LabeledCorpus, LabeledTrial};
use crate::label::Label;
use crate::llm_gateway::SyntheticTrial;
use crate::pipeline::SyntheticCorpus;

pub const RATIO_TRAIN_SIZE: usize = 3358;
pub const RATIO_EVAL_SIZE: usize = 1349;
pub const SYNTHETIC_FRACTIONS: [f64; 6] = [1.0, 0.8, 0.6, 0.4, 0.2, 0.0];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("datasets: need at least {needed} items, got {available}")]
    TooFewItems { needed: usize, available: usize },
    #[error("datasets: {pool} pool has {available} items, {needed} needed")]
    PoolTooSmall {
        pool: String,
        needed: usize,
        available: usize,
    },
    #[error("datasets: only one class present, cannot balance")]
    SingleClass,
    #[error("datasets: synthetic fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("datasets: split {name} uses {id} in both {first} and {second}")]
    Overlap {
        name: String,
        id: String,
        first: &'static str,
        second: &'static str,
    },
    #[error("datasets: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Synthetic,
}

/// What a split refers to: an id, its label and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataItem {
    pub id: String,
    pub label: Label,
    pub source: Source,
}

impl DataItem {
    pub fn real(id: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            label,
            source: Source::Real,
        }
    }

    pub fn synthetic(id: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            label,
            source: Source::Synthetic,
        }
    }
}

impl From<&LabeledTrial> for DataItem {
    fn from(t: &LabeledTrial) -> Self {
        DataItem::real(t.trial_id(), t.label)
    }
}

impl From<&SyntheticTrial> for DataItem {
    fn from(t: &SyntheticTrial) -> Self {
        DataItem::synthetic(&t.trial_id, t.label)
    }
}

pub fn synthetic_items(corpus: &SyntheticCorpus) -> Vec<DataItem> {
    corpus.iter().map(DataItem::from).collect()
}

/// Real trials split by whether they share an intervention with the
/// synthetic corpus (`set_a`) or not (`set_b`). Corpus order is kept.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AbPartition {
    pub set_a: Vec<DataItem>,
    pub set_b: Vec<DataItem>,
}

pub fn partition_ab<S: AsRef<str>>(corpus: &LabeledCorpus, synthetic_names: &[S]) -> AbPartition {
    let names: HashSet<String> = synthetic_names.iter().map(|n| canonicalize_name(n.as_ref())).collect();
    let mut partition = AbPartition::default();
    for trial in corpus {
        let hit = trial
            .interventions()
            .iter()
            .any(|n| names.contains(&canonicalize_name(n)));
        if hit {
            partition.set_a.push(trial.into());
        } else {
            partition.set_b.push(trial.into());
        }
    }
    partition
}

/// Sizes of a 60/20/20 split: floor, floor, remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 6 / 10;
    let val = n * 2 / 10;
    (train, val, n - train - val)
}

/// Shuffle with `seed`, then cut into train/val/test by [`split_sizes`].
pub fn split_60_20_20<T: Clone>(items: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.len() < 5 {
        return Err(DatasetError::TooFewItems {
            needed: 5,
            available: items.len(),
        });
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val, _) = split_sizes(items.len());
    let test = shuffled.split_off(train + val);
    let val = shuffled.split_off(train);
    Ok((shuffled, val, test))
}

/// Synthetic side of a ratio mix, rounded down.
pub fn synthetic_count(fraction: f64, train_size: usize) -> usize {
    (fraction * train_size as f64 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMix {
    pub fraction: f64,
    pub train: Vec<DataItem>,
    pub composition: Composition,
}

/// One training set per fraction, in the order given.
///
/// Each pool is shuffled once and every mix takes a prefix, so a mix with
/// more synthetic data contains all synthetic items of the smaller ones.
pub fn build_ratio_mixes(
    synthetic_pool: &[DataItem],
    real_pool: &[DataItem],
    train_size: usize,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<RatioMix>> {
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(DatasetError::InvalidFraction(f));
        }
    }
    let max_syn = fractions
        .iter()
        .map(|&f| synthetic_count(f, train_size))
        .max()
        .unwrap_or(0);
    let max_real = fractions
        .iter()
        .map(|&f| train_size - synthetic_count(f, train_size))
        .max()
        .unwrap_or(0);
    check_pool("synthetic", synthetic_pool.len(), max_syn)?;
    check_pool("real", real_pool.len(), max_real)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut syn = synthetic_pool.to_vec();
    syn.shuffle(&mut rng);
    let mut real = real_pool.to_vec();
    real.shuffle(&mut rng);

    Ok(fractions
        .iter()
        .map(|&fraction| {
            let s = synthetic_count(fraction, train_size);
            let r = train_size - s;
            let mut train = syn[..s].to_vec();
            train.extend_from_slice(&real[..r]);
            RatioMix {
                fraction,
                train,
                composition: Composition { synthetic: s, real: r },
            }
        })
        .collect())
}

fn check_pool(pool: &str, available: usize, needed: usize) -> Result<()> {
    if available < needed {
        return Err(DatasetError::PoolTooSmall {
            pool: pool.into(),
            needed,
            available,
        });
    }
    Ok(())
}

fn by_label(items: &[DataItem]) -> (Vec<DataItem>, Vec<DataItem>) {
    items.iter().cloned().partition(|i| i.label.is_success())
}

/// Reduce the larger class to the size of the smaller one by seeded
/// uniform sampling. Output is positives then negatives, each in input order.
pub fn downsample_balance(items: &[DataItem], seed: u64) -> Result<Vec<DataItem>> {
    let (pos, neg) = by_label(items);
    if pos.is_empty() || neg.is_empty() {
        return Err(DatasetError::SingleClass);
    }
    let m = pos.len().min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reduce = |side: Vec<DataItem>| {
        if side.len() == m {
            return side;
        }
        let mut keep = rand::seq::index::sample(&mut rng, side.len(), m).into_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| side[i].clone()).collect::<Vec<_>>()
    };
    let mut out = reduce(pos);
    out.extend(reduce(neg));
    Ok(out)
}

/// Draw `size` items whose class mix follows `items` as closely as integer
/// counts allow (largest remainder). Returns (drawn, rest).
pub fn stratified_sample(
    items: &[DataItem],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<DataItem>, Vec<DataItem>)> {
    check_pool("evaluation", items.len(), size)?;
    let (pos, neg) = by_label(items);
    let n = items.len();
    let exact_pos = if n == 0 {
        0.0
    } else {
        size as f64 * pos.len() as f64 / n as f64
    };
    let mut take_pos = exact_pos.floor() as usize;
    let mut take_neg = size - take_pos;
    if take_neg > neg.len() {
        take_neg = neg.len();
        take_pos = size - take_neg;
    } else if exact_pos - exact_pos.floor() >= 0.5 && take_pos < pos.len() && take_neg > 0 {
        take_pos += 1;
        take_neg -= 1;
    }
    let mut drawn = Vec::with_capacity(size);
    let mut rest = Vec::with_capacity(n - size);
    for (side, k) in [(pos, take_pos), (neg, take_neg)] {
        let chosen: BTreeSet<usize> = rand::seq::index::sample(rng, side.len(), k).into_iter().collect();
        for (i, item) in side.into_iter().enumerate() {
            if chosen.contains(&i) {
                drawn.push(item);
            } else {
                rest.push(item);
            }
        }
    }
    drawn.shuffle(rng);
    Ok((drawn, rest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Composition {
    pub synthetic: usize,
    pub real: usize,
}

impl Composition {
    pub fn of(items: &[DataItem]) -> Self {
        let synthetic = items.iter().filter(|i| i.source == Source::Synthetic).count();
        Self {
            synthetic,
            real: items.len() - synthetic,
        }
    }
}

/// One train/val/test configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub train: Vec<DataItem>,
    pub val: Vec<DataItem>,
    pub test: Vec<DataItem>,
    pub composition: Composition,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(
        name: impl Into<String>,
        train: Vec<DataItem>,
        val: Vec<DataItem>,
        test: Vec<DataItem>,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            composition: Composition::of(&train),
            train,
            val,
            test,
            seed,
        };
        spec.check_disjoint()?;
        Ok(spec)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let parts: [(&'static str, &[DataItem]); 3] =
            [("train", &self.train), ("val", &self.val), ("test", &self.test)];
        let mut owner: BTreeMap<&str, &'static str> = BTreeMap::new();
        for (part, items) in parts {
            for item in items {
                if let Some(first) = owner.insert(&item.id, part) {
                    return Err(DatasetError::Overlap {
                        name: self.name.clone(),
                        id: item.id.clone(),
                        first,
                        second: part,
                    });
                }
            }
        }
        Ok(())
    }

    /// `{name, train, val, test, composition, seed}` with id lists.
    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[DataItem]| v.iter().map(|i| i.id.clone()).collect();
        SplitManifest {
            name: self.name.clone(),
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
            composition: self.composition,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub composition: Composition,
    pub seed: u64,
}

/// Write one `<name>.json` per spec into `dir`; returns the paths written.
pub fn write_split_manifests(dir: &Path, specs: &[SplitSpec]) -> Result<Vec<PathBuf>> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(specs.len());
    for spec in specs {
        let path = dir.join(format!("{}.json", spec.name));
        let mut json = serde_json::to_string_pretty(&spec.manifest()).expect("manifest serializes");
        json.push('\n');
        fs::write(&path, json).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    InDistribution,
    Ratio,
    Generalization,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::InDistribution => "in_distribution",
            ExperimentKind::Ratio => "ratio",
            ExperimentKind::Generalization => "generalization",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioConfig {
    pub train_size: usize,
    pub eval_size: usize,
    pub fractions: Vec<f64>,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            train_size: RATIO_TRAIN_SIZE,
            eval_size: RATIO_EVAL_SIZE,
            fractions: SYNTHETIC_FRACTIONS.to_vec(),
        }
    }
}

/// Build all splits of one experiment.
///
/// * in-distribution: synthetic-only, real-only and hybrid trains sharing
///   val/test from a 60/20/20 split of `set_a`;
/// * ratio: one spec per fraction over stratified val/test drawn from `set_a`;
/// * generalization: trains from `set_a` and/or synthetic data, val/test from
///   the two halves of the shuffled, balanced `set_b`.
pub fn build_experiment(
    kind: ExperimentKind,
    partition: &AbPartition,
    synthetic: &[DataItem],
    seed: u64,
    ratio: &RatioConfig,
) -> Result<Vec<SplitSpec>> {
    let prefix = kind.as_str();
    let trio = |train_real: &[DataItem], val: Vec<DataItem>, test: Vec<DataItem>| -> Result<Vec<SplitSpec>> {
        let mut hybrid = synthetic.to_vec();
        hybrid.extend_from_slice(train_real);
        Ok(vec![
            SplitSpec::new(
                format!("{prefix}-synthetic_only"),
                synthetic.to_vec(),
                val.clone(),
                test.clone(),
                seed,
            )?,
            SplitSpec::new(
                format!("{prefix}-real_only"),
                train_real.to_vec(),
                val.clone(),
                test.clone(),
                seed,
            )?,
            SplitSpec::new(format!("{prefix}-hybrid"), hybrid, val, test, seed)?,
        ])
    };
    match kind {
        ExperimentKind::InDistribution => {
            let (train, val, test) = split_60_20_20(&partition.set_a, seed)?;
            trio(&train, val, test)
        }
        ExperimentKind::Generalization => {
            let mut balanced = downsample_balance(&partition.set_b, seed)?;
            balanced.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let test = balanced.split_off(balanced.len() / 2);
            trio(&partition.set_a, balanced, test)
        }
        ExperimentKind::Ratio => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_pool("real", partition.set_a.len(), 2 * ratio.eval_size)?;
            let (val, rest) = stratified_sample(&partition.set_a, ratio.eval_size, &mut rng)?;
            let (test, real_pool) = stratified_sample(&rest, ratio.eval_size, &mut rng)?;
            let mixes = build_ratio_mixes(synthetic, &real_pool, ratio.train_size, &ratio.fractions, seed)?;
            mixes
                .into_iter()
                .map(|m| {
                    let pct = (m.fraction * 100.0).round() as u32;
                    SplitSpec::new(format!("{prefix}-{pct:03}"), m.train, val.clone(), test.clone(), seed)
                })
                .collect()
        }
    }
}
