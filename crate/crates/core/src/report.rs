//! Run configuration and the JSON/CSV shapes written by the pipeline.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoding::{Alignment, DistKind};
use crate::error::{Error, Result};
use crate::pairsets::{SplitPlan, SplitPolicy, DEFAULT_SAMPLE_BUDGET, DEFAULT_TRAIN_FRACTION};
use crate::regression::DEFAULT_LAMBDA;
use crate::stats::FamilyReport;
use crate::synchrony::{ControlReport, PartitionReport, PipelineConfig, SyncScore, SynchronyHeatmap, Variant};

/// Every knob of a run, flat, as read from a JSON config and overridden by
/// command-line flags. Serialised verbatim into each output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// `model_a:model_b`; may be omitted when the corpus holds one pair.
    pub pair: Option<String>,
    pub lambda: f64,
    pub standardize: bool,
    pub split_policy: SplitPolicy,
    pub train_fraction: f64,
    pub sample_budget: usize,
    pub allow_insufficient: bool,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub clamp: bool,
    pub lags: Vec<usize>,
    pub budgets: Vec<usize>,
    pub subsample_seeds: Vec<u64>,
    pub passive_reversed: bool,
    pub save_maps: bool,
    pub affect: Option<PathBuf>,
    pub kind: DistKind,
    pub alignment: Alignment,
    pub layer: Option<usize>,
    pub scores: Option<PathBuf>,
    pub sync: Option<PathBuf>,
    pub covariates: Vec<String>,
    pub permutations: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            pair: None,
            lambda: DEFAULT_LAMBDA,
            standardize: false,
            split_policy: SplitPolicy::InteractionDisjoint,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            sample_budget: DEFAULT_SAMPLE_BUDGET,
            allow_insufficient: false,
            seeds: vec![0, 1, 2],
            k: 1,
            clamp: true,
            lags: Vec::new(),
            budgets: Vec::new(),
            subsample_seeds: vec![0, 1, 2],
            passive_reversed: false,
            save_maps: false,
            affect: None,
            kind: DistKind::Emotion,
            alignment: Alignment::SelfCurrent,
            layer: None,
            scores: None,
            sync: None,
            covariates: Vec::new(),
            permutations: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if self.lags.contains(&0) {
            return Err(Error::invalid("lags", "lags must be >= 1"));
        }
        self.split_plan().validate()
    }

    pub fn variant(&self) -> Variant {
        Variant {
            k: self.k,
            clamp: self.clamp,
        }
    }

    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            policy: self.split_policy,
            train_fraction: self.train_fraction,
            seed: self.seeds.first().copied().unwrap_or(0),
            sample_budget: self.sample_budget,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            lambda: self.lambda,
            standardize: self.standardize,
            plan: self.split_plan(),
            allow_insufficient: self.allow_insufficient,
        }
    }
}

/// Common wrapper of every JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub corpus_hash: Option<&'a str>,
    pub warnings: &'a [String],
    pub result: &'a T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(
        command: &'a str,
        config: &'a RunConfig,
        corpus_hash: Option<&'a str>,
        warnings: &'a [String],
        result: &'a T,
    ) -> Self {
        Self {
            tool: "syncr2",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            corpus_hash,
            warnings,
            result,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRecord {
    pub pair: String,
    pub direction: crate::pairsets::Direction,
    pub condition: crate::pairsets::PairCondition,
    pub seed: u64,
    pub source_layers: usize,
    pub target_layers: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// `grid[source][target]`.
    pub grid: Vec<Vec<f64>>,
}

impl From<&SynchronyHeatmap<f64>> for HeatmapRecord {
    fn from(h: &SynchronyHeatmap<f64>) -> Self {
        Self {
            pair: h.pair.to_string(),
            direction: h.direction,
            condition: h.condition,
            seed: h.seed,
            source_layers: h.grid.nrows(),
            target_layers: h.grid.ncols(),
            n_train: h.n_train,
            n_test: h.n_test,
            grid: h.grid.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

fn csv_string(build: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::Shape(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Shape(e.to_string()))
}

/// Grid as CSV: one row per source layer, one column per target layer.
pub fn heatmap_csv(h: &SynchronyHeatmap<f64>) -> Result<String> {
    csv_string(|w| {
        let mut header = vec!["source_layer".to_string()];
        header.extend((0..h.grid.ncols()).map(|t| format!("target_{t}")));
        w.write_record(&header)?;
        for (l, row) in h.grid.rows().into_iter().enumerate() {
            let mut rec = vec![l.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

fn score_rows(w: &mut csv::Writer<Vec<u8>>, condition: &str, lag: usize, s: &SyncScore) -> Result<()> {
    for p in &s.per_seed {
        w.write_record([
            condition.to_string(),
            lag.to_string(),
            p.seed.to_string(),
            p.forward.to_string(),
            p.backward.to_string(),
            p.symmetric.to_string(),
        ])?;
    }
    Ok(())
}

/// Long format: condition, lag, seed, forward, backward, symmetric.
pub fn controls_long_csv(r: &ControlReport) -> Result<String> {
    csv_string(|w| {
        w.write_record(["condition", "lag", "seed", "forward", "backward", "symmetric"])?;
        score_rows(w, "experimental", 0, &r.experimental)?;
        if let Some(p) = &r.passive {
            score_rows(w, "passive", 0, p)?;
        }
        for (k, s) in &r.lags {
            score_rows(w, "lag", *k, s)?;
        }
        Ok(())
    })
}

/// Long format: relationship, seed, forward, backward, symmetric.
pub fn partition_long_csv(r: &PartitionReport) -> Result<String> {
    csv_string(|w| {
        w.write_record(["relationship", "seed", "forward", "backward", "symmetric"])?;
        for (rel, s) in &r.scores {
            for p in &s.per_seed {
                w.write_record([
                    rel.to_string(),
                    p.seed.to_string(),
                    p.forward.to_string(),
                    p.backward.to_string(),
                    p.symmetric.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

/// Long format: budget, seed, forward, backward, symmetric.
pub fn sweep_long_csv(r: &std::collections::BTreeMap<usize, SyncScore>) -> Result<String> {
    csv_string(|w| {
        w.write_record(["budget", "seed", "forward", "backward", "symmetric"])?;
        for (b, s) in r {
            for p in &s.per_seed {
                w.write_record([
                    b.to_string(),
                    p.seed.to_string(),
                    p.forward.to_string(),
                    p.backward.to_string(),
                    p.symmetric.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

pub fn family_csv(r: &FamilyReport) -> Result<String> {
    csv_string(|w| {
        w.write_record(["family", "composite", "n", "r", "p", "partial_r", "partial_p", "partial_df", "permutation_p"])?;
        for f in &r.results {
            let (pr, pp, pdf) = match &f.partial {
                Some(p) => (p.r.to_string(), p.p_two_sided.to_string(), p.df.to_string()),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                f.family.clone(),
                f.composite.clone(),
                f.pearson.n.to_string(),
                f.pearson.r.to_string(),
                f.pearson.p_two_sided.to_string(),
                pr,
                pp,
                pdf,
                f.permutation_p.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_flat_keys() {
        let c = RunConfig::default();
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.train_fraction, 0.8);
        assert_eq!(c.sample_budget, 6500);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.variant(), Variant { k: 1, clamp: true });
        let parsed: RunConfig = serde_json::from_str(r#"{"lambda": 0.5, "k": 2, "split_policy": "persona_disjoint"}"#).unwrap();
        assert_eq!(parsed.lambda, 0.5);
        assert_eq!(parsed.split_policy, SplitPolicy::PersonaDisjoint);
        assert!(serde_json::from_str::<RunConfig>(r#"{"lamda": 0.5}"#).is_err());
        assert!(RunConfig { k: 0, ..RunConfig::default() }.validate().is_err());
    }

    #[test]
    fn heatmap_csv_layout() {
        let h = SynchronyHeatmap {
            pair: crate::repstore::ModelPair::new("a", "b"),
            direction: crate::pairsets::Direction::AToB,
            condition: crate::pairsets::PairCondition::Experimental,
            seed: 0,
            grid: ndarray::array![[0.5, -0.25], [1.0, 0.0]],
            n_train: 1,
            n_test: 1,
        };
        let s = heatmap_csv(&h).unwrap();
        assert_eq!(s, "source_layer,target_0,target_1\n0,0.5,-0.25\n1,1,0\n");
        let rec = HeatmapRecord::from(&h);
        assert_eq!(rec.grid[1], vec![1.0, 0.0]);
    }
}
