//! Layer-grid heatmaps and their aggregation into SyncR².
//!
//! For every (source layer, target layer) cell a ridge map is fitted on the
//! training rows and scored by test-set R². Per source layer the best (or
//! top-k mean) cell is kept, optionally clamped at zero, and averaged over
//! source layers; the two directions are then averaged.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairsets::{build_family, enforce_budget, split, Direction, PairCondition, PairFamily, SplitPlan};
use crate::regression::{r2_uniform, AffineMap, Predictor, RidgeFactor, RidgeOptions, DEFAULT_LAMBDA};
use crate::repstore::{Corpus, ModelPair, Relationship};
use crate::scalar::Real;

/// Scenario sources whose interactions mix relationship types.
pub const PARTITION_SOURCES: [&str; 3] = ["social_iqa", "social_chemistry", "normbank"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    /// Number of best target layers averaged per source layer.
    pub k: usize,
    /// Clamp each per-layer aggregate at zero.
    pub clamp: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Self { k: 1, clamp: true }
    }
}

/// Test-set R² over the full layer grid for one direction and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynchronyHeatmap<T> {
    pub pair: ModelPair,
    pub direction: Direction,
    pub condition: PairCondition,
    pub seed: u64,
    /// Rows are source layers, columns target layers.
    pub grid: Array2<T>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Mean of the `k` largest entries of every row, optionally clamped at zero,
/// averaged over rows.
pub fn syncr2_directional<T: Real>(grid: ArrayView2<'_, T>, variant: Variant) -> Result<T> {
    let (rows, cols) = grid.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Shape("empty heatmap".into()));
    }
    if variant.k == 0 || variant.k > cols {
        return Err(Error::invalid("k", format!("must lie in 1..={cols}, got {}", variant.k)));
    }
    let mut total = T::zero();
    let mut buf: Vec<T> = Vec::with_capacity(cols);
    for row in grid.rows() {
        buf.clear();
        buf.extend(row.iter().copied());
        buf.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        let mut agg = buf[..variant.k].iter().copied().sum::<T>() / T::of_usize(variant.k);
        if variant.clamp {
            agg = agg.max(T::zero());
        }
        total += agg;
    }
    Ok(total / T::of_usize(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub forward: f64,
    pub backward: f64,
    pub symmetric: f64,
}

/// Seed-averaged SyncR² in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncScore {
    pub condition: PairCondition,
    pub forward_direction: Direction,
    pub forward: f64,
    pub backward: f64,
    pub symmetric: f64,
    pub standard_error: f64,
    pub forward_standard_error: f64,
    pub backward_standard_error: f64,
    pub per_seed: Vec<SeedScore>,
    pub variant: Variant,
}

/// Sample standard deviation over `sqrt(n)`; zero for fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    var.sqrt() / (n as f64).sqrt()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Combines per-seed heatmaps of opposite directions into one score.
pub fn syncr2_symmetric<T: Real>(
    forward: &[SynchronyHeatmap<T>],
    backward: &[SynchronyHeatmap<T>],
    variant: Variant,
) -> Result<SyncScore> {
    if forward.is_empty() || forward.len() != backward.len() {
        return Err(Error::ConditionMismatch(format!(
            "{} forward heatmaps vs {} backward",
            forward.len(),
            backward.len()
        )));
    }
    let condition = forward[0].condition;
    let fdir = forward[0].direction;
    let mut per_seed = Vec::with_capacity(forward.len());
    for (f, b) in forward.iter().zip(backward) {
        if f.condition != condition || b.condition != condition {
            return Err(Error::ConditionMismatch("heatmaps come from different conditions".into()));
        }
        if f.direction != fdir || b.direction != fdir.reversed() {
            return Err(Error::ConditionMismatch("heatmap directions are not opposite".into()));
        }
        if f.seed != b.seed || f.pair != b.pair {
            return Err(Error::ConditionMismatch(format!(
                "forward seed {} / pair {} vs backward seed {} / pair {}",
                f.seed, f.pair, b.seed, b.pair
            )));
        }
        let fw = syncr2_directional(f.grid.view(), variant)?.to_f64_lossy();
        let bw = syncr2_directional(b.grid.view(), variant)?.to_f64_lossy();
        per_seed.push(SeedScore {
            seed: f.seed,
            forward: fw,
            backward: bw,
            symmetric: 0.5 * (fw + bw),
        });
    }
    let fw: Vec<f64> = per_seed.iter().map(|s| s.forward).collect();
    let bw: Vec<f64> = per_seed.iter().map(|s| s.backward).collect();
    let sym: Vec<f64> = per_seed.iter().map(|s| s.symmetric).collect();
    Ok(SyncScore {
        condition,
        forward_direction: fdir,
        forward: mean(&fw),
        backward: mean(&bw),
        symmetric: mean(&sym),
        standard_error: standard_error(&sym),
        forward_standard_error: standard_error(&fw),
        backward_standard_error: standard_error(&bw),
        per_seed,
        variant,
    })
}

/// Shared settings for every pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub lambda: f64,
    pub standardize: bool,
    /// Split policy, train fraction and sample budget; the seed is supplied
    /// per run.
    pub plan: SplitPlan,
    /// Keep going with fewer rows than the budget instead of failing.
    pub allow_insufficient: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            standardize: false,
            plan: SplitPlan::default(),
            allow_insufficient: false,
        }
    }
}

/// Heatmaps for the full test set and for any requested test subsets.
#[derive(Debug, Clone)]
pub struct GridResult<T> {
    pub grid: Array2<T>,
    /// One grid per subset, in request order.
    pub subsets: Vec<Array2<T>>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Callback receiving every fitted map (for persisting them).
pub type MapSink<'a, T> = &'a (dyn Fn(&AffineMap<T>) -> Result<()> + Sync);

/// Fits every cell of the grid on `train` and scores it on `test`.
///
/// `subsets` hold positions into `test`; each yields its own grid from the
/// same fitted maps. Source layers are processed in parallel, one
/// factorisation each.
pub fn evaluate_grid<T: Real>(
    family: &PairFamily<'_>,
    train: &[usize],
    test: &[usize],
    subsets: &[Vec<usize>],
    config: &PipelineConfig,
    sink: Option<MapSink<'_, T>>,
) -> Result<GridResult<T>> {
    let ls = family.source_layers();
    let lt = family.target_layers();
    let opts = RidgeOptions {
        lambda: T::of(config.lambda),
        standardize: config.standardize,
    };
    let rows: Vec<(Vec<T>, Vec<Vec<T>>)> = (0..ls)
        .into_par_iter()
        .map(|l_src| -> Result<(Vec<T>, Vec<Vec<T>>)> {
            let x_train = family.source_matrix::<T>(l_src, Some(train))?;
            let x_test = family.source_matrix::<T>(l_src, Some(test))?;
            let factor = RidgeFactor::new(x_train.view(), opts)?;
            let mut cells = Vec::with_capacity(lt);
            let mut sub_cells = vec![Vec::with_capacity(lt); subsets.len()];
            for l_tgt in 0..lt {
                let y_train = family.target_matrix::<T>(l_tgt, Some(train))?;
                let map = factor.fit(y_train.view())?.with_layers(l_src, l_tgt);
                let y_test = family.target_matrix::<T>(l_tgt, Some(test))?;
                let pred = map.predict(x_test.view())?;
                cells.push(r2_uniform(y_test.view(), pred.view())?);
                for (s, pos) in subsets.iter().enumerate() {
                    let yt = y_test.select(Axis(0), pos);
                    let yp = pred.select(Axis(0), pos);
                    sub_cells[s].push(r2_uniform(yt.view(), yp.view())?);
                }
                if let Some(sink) = sink {
                    sink(&map)?;
                }
            }
            Ok((cells, sub_cells))
        })
        .collect::<Result<_>>()?;

    let mut grid = Array2::zeros((ls, lt));
    let mut subs = vec![Array2::zeros((ls, lt)); subsets.len()];
    for (l, (cells, sub_cells)) in rows.into_iter().enumerate() {
        grid.row_mut(l).assign(&ndarray::Array1::from(cells));
        for (s, c) in sub_cells.into_iter().enumerate() {
            subs[s].row_mut(l).assign(&ndarray::Array1::from(c));
        }
    }
    Ok(GridResult {
        grid,
        subsets: subs,
        n_train: train.len(),
        n_test: test.len(),
    })
}

/// Budgeted, split family ready for grid evaluation.
pub struct PreparedFamily<'c> {
    pub family: PairFamily<'c>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn prepare_family<'c>(
    corpus: &'c Corpus,
    pair: &ModelPair,
    direction: Direction,
    condition: PairCondition,
    config: &PipelineConfig,
    seed: u64,
) -> Result<PreparedFamily<'c>> {
    let family = build_family(corpus, pair, direction, condition)?;
    let rows = enforce_budget(family.meta(), config.plan.sample_budget, seed, config.allow_insufficient)?;
    let s = split(family.meta(), &rows, &config.plan.with_seed(seed))?;
    Ok(PreparedFamily {
        family,
        train: s.train,
        test: s.test,
    })
}

/// Budget, split and grid fit for one direction, condition and seed.
pub fn compute_heatmap<T: Real>(
    corpus: &Corpus,
    pair: &ModelPair,
    direction: Direction,
    condition: PairCondition,
    config: &PipelineConfig,
    seed: u64,
) -> Result<SynchronyHeatmap<T>> {
    compute_heatmap_with(corpus, pair, direction, condition, config, seed, None)
}

pub fn compute_heatmap_with<T: Real>(
    corpus: &Corpus,
    pair: &ModelPair,
    direction: Direction,
    condition: PairCondition,
    config: &PipelineConfig,
    seed: u64,
    sink: Option<MapSink<'_, T>>,
) -> Result<SynchronyHeatmap<T>> {
    let prep = prepare_family(corpus, pair, direction, condition, config, seed)?;
    let res = evaluate_grid(&prep.family, &prep.train, &prep.test, &[], config, sink)?;
    Ok(SynchronyHeatmap {
        pair: pair.clone(),
        direction,
        condition,
        seed,
        grid: res.grid,
        n_train: res.n_train,
        n_test: res.n_test,
    })
}

/// Heatmaps of both directions for each seed, plus their score.
#[derive(Debug, Clone)]
pub struct ConditionRun<T> {
    pub forward: Vec<SynchronyHeatmap<T>>,
    pub backward: Vec<SynchronyHeatmap<T>>,
    pub score: SyncScore,
}

pub fn score_condition<T: Real>(
    corpus: &Corpus,
    pair: &ModelPair,
    condition: PairCondition,
    config: &PipelineConfig,
    seeds: &[u64],
    variant: Variant,
) -> Result<ConditionRun<T>> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let mut forward = Vec::with_capacity(seeds.len());
    let mut backward = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        forward.push(compute_heatmap(corpus, pair, Direction::AToB, condition, config, seed)?);
        backward.push(compute_heatmap(corpus, pair, Direction::BToA, condition, config, seed)?);
    }
    let score = syncr2_symmetric(&forward, &backward, variant)?;
    Ok(ConditionRun {
        forward,
        backward,
        score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub experimental: SyncScore,
    pub passive: Option<SyncScore>,
    pub lags: BTreeMap<usize, SyncScore>,
    pub warnings: Vec<String>,
}

/// Experimental score next to the passive-reader and lag-k controls, all
/// with the same budget, split policy, λ and seeds.
pub fn run_controls(
    corpus: &Corpus,
    pair: &ModelPair,
    lags: &[usize],
    config: &PipelineConfig,
    seeds: &[u64],
    variant: Variant,
) -> Result<ControlReport> {
    if let Some(k) = lags.iter().find(|&&k| k == 0) {
        return Err(Error::invalid("lags", format!("lag {k} is the experimental condition; use k >= 1")));
    }
    let experimental = score_condition::<f64>(corpus, pair, PairCondition::Experimental, config, seeds, variant)?.score;
    let mut warnings = Vec::new();
    let passive = match score_condition::<f64>(corpus, pair, PairCondition::PassiveControl, config, seeds, variant) {
        Ok(run) => Some(run.score),
        Err(Error::ConditionMismatch(msg)) => {
            let msg = format!("passive control omitted: {msg}");
            log::warn!("{msg}");
            warnings.push(msg);
            None
        }
        Err(e) => return Err(e),
    };
    let mut lag_scores = BTreeMap::new();
    let unique: BTreeSet<usize> = lags.iter().copied().collect();
    for k in unique {
        let run = score_condition::<f64>(corpus, pair, PairCondition::Lag(k), config, seeds, variant)?;
        lag_scores.insert(k, run.score);
    }
    Ok(ControlReport {
        experimental,
        passive,
        lags: lag_scores,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionScore {
    pub relationship: Relationship,
    pub forward: f64,
    pub backward: f64,
    pub symmetric: f64,
    pub standard_error: f64,
    /// Symmetric score per subsample seed.
    pub per_seed: Vec<SeedScore>,
    pub subset_size_forward: usize,
    pub subset_size_backward: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub train_seed: u64,
    pub subsample_seeds: Vec<u64>,
    pub source_filter: Option<Vec<String>>,
    pub scores: BTreeMap<Relationship, PartitionScore>,
    pub warnings: Vec<String>,
}

fn normalize_source(s: &str) -> String {
    s.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

struct DirectionPartition<T> {
    by_rel: BTreeMap<Relationship, Vec<Vec<T>>>,
    size: usize,
}

fn partition_direction<T: Real>(
    corpus: &Corpus,
    pair: &ModelPair,
    direction: Direction,
    config: &PipelineConfig,
    train_seed: u64,
    subsample_seeds: &[u64],
    variant: Variant,
    warnings: &mut Vec<String>,
    filter: Option<&BTreeSet<String>>,
) -> Result<DirectionPartition<T>> {
    let prep = prepare_family(corpus, pair, direction, PairCondition::Experimental, config, train_seed)?;
    let meta = prep.family.meta();

    let mut groups: BTreeMap<Relationship, Vec<usize>> = BTreeMap::new();
    for (pos, &row) in prep.test.iter().enumerate() {
        let m = &meta[row];
        if let Some(f) = filter {
            if !f.contains(&normalize_source(&m.scenario_source)) {
                continue;
            }
        }
        groups.entry(m.relationship).or_default().push(pos);
    }
    let present: BTreeSet<Relationship> = meta.iter().map(|m| m.relationship).collect();
    for rel in &present {
        if !groups.contains_key(rel) {
            let msg = format!("{direction}: relationship {rel} has no test rows and was excluded");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    groups.retain(|rel, rows| {
        if rows.len() < 2 {
            let msg = format!("{direction}: relationship {rel} has fewer than 2 test rows and was excluded");
            log::warn!("{msg}");
            warnings.push(msg);
            false
        } else {
            true
        }
    });
    let Some(size) = groups.values().map(Vec::len).min() else {
        return Err(Error::EmptyDataset(format!("{direction}: no test rows left after partitioning")));
    };

    let mut subsets = Vec::new();
    let mut keys = Vec::new();
    for (ord, (rel, rows)) in groups.iter().enumerate() {
        for &s in subsample_seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            rng.set_stream(ord as u64 + 1);
            let mut pick: Vec<usize> = sample(&mut rng, rows.len(), size).into_iter().map(|i| rows[i]).collect();
            pick.sort_unstable();
            subsets.push(pick);
            keys.push(*rel);
        }
    }
    let res = evaluate_grid::<T>(&prep.family, &prep.train, &prep.test, &subsets, config, None)?;
    let mut by_rel: BTreeMap<Relationship, Vec<Vec<T>>> = BTreeMap::new();
    for (rel, grid) in keys.into_iter().zip(res.subsets) {
        let v = syncr2_directional(grid.view(), variant)?;
        by_rel.entry(rel).or_default().push(vec![v]);
    }
    Ok(DirectionPartition { by_rel, size })
}

/// Re-scores maps trained on the full training split on equal-sized,
/// per-relationship subsets of the test rows, averaged over subsample
/// seeds.
pub fn evaluate_partitioned(
    corpus: &Corpus,
    pair: &ModelPair,
    config: &PipelineConfig,
    train_seed: u64,
    subsample_seeds: &[u64],
    variant: Variant,
) -> Result<PartitionReport> {
    if subsample_seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one subsample seed"));
    }
    let mut warnings = Vec::new();
    let has_sources = corpus.for_pair(pair).any(|i| !i.meta.scenario_source.trim().is_empty());
    let filter: Option<BTreeSet<String>> =
        has_sources.then(|| PARTITION_SOURCES.iter().map(|s| s.to_string()).collect());

    let fwd = partition_direction::<f64>(
        corpus,
        pair,
        Direction::AToB,
        config,
        train_seed,
        subsample_seeds,
        variant,
        &mut warnings,
        filter.as_ref(),
    )?;
    let bwd = partition_direction::<f64>(
        corpus,
        pair,
        Direction::BToA,
        config,
        train_seed,
        subsample_seeds,
        variant,
        &mut warnings,
        filter.as_ref(),
    )?;

    let mut scores = BTreeMap::new();
    for (rel, f_vals) in &fwd.by_rel {
        let Some(b_vals) = bwd.by_rel.get(rel) else {
            let msg = format!("relationship {rel} lacks backward test rows and was excluded");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        };
        let per_seed: Vec<SeedScore> = subsample_seeds
            .iter()
            .zip(f_vals.iter().zip(b_vals))
            .map(|(&seed, (f, b))| SeedScore {
                seed,
                forward: f[0],
                backward: b[0],
                symmetric: 0.5 * (f[0] + b[0]),
            })
            .collect();
        let sym: Vec<f64> = per_seed.iter().map(|s| s.symmetric).collect();
        scores.insert(
            *rel,
            PartitionScore {
                relationship: *rel,
                forward: mean(&per_seed.iter().map(|s| s.forward).collect::<Vec<_>>()),
                backward: mean(&per_seed.iter().map(|s| s.backward).collect::<Vec<_>>()),
                symmetric: mean(&sym),
                standard_error: standard_error(&sym),
                per_seed,
                subset_size_forward: fwd.size,
                subset_size_backward: bwd.size,
            },
        );
    }
    Ok(PartitionReport {
        train_seed,
        subsample_seeds: subsample_seeds.to_vec(),
        source_filter: filter.map(|f| f.into_iter().collect()),
        scores,
        warnings,
    })
}

/// Full pipeline once per sample budget.
pub fn sample_size_sweep(
    corpus: &Corpus,
    pair: &ModelPair,
    budgets: &[usize],
    config: &PipelineConfig,
    seeds: &[u64],
    variant: Variant,
) -> Result<BTreeMap<usize, SyncScore>> {
    let mut out = BTreeMap::new();
    for &b in budgets {
        let mut cfg = *config;
        cfg.plan.sample_budget = b;
        cfg.allow_insufficient = false;
        let run = score_condition::<f64>(corpus, pair, PairCondition::Experimental, &cfg, seeds, variant)?;
        out.insert(b, run.score);
    }
    Ok(out)
}
