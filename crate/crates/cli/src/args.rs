use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use syncr2_core::decoding::{Alignment, DistKind};
use syncr2_core::pairsets::SplitPolicy;
use syncr2_core::report::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "syncr2", version, about = "Layer-to-layer predictive synchrony between two agents")]
pub struct Cli {
    /// Worker threads (falls back to SYNCR2_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus (and optional affect sidecars / score table).
    Validate(Common),
    /// Generate a synthetic corpus with planted coupling.
    Synthgen(SynthArgs),
    /// Per-seed layer-grid heatmaps in both directions.
    Heatmap(HeatmapArgs),
    /// Seed-averaged symmetric SyncR².
    Syncr2(Common),
    /// Experimental score next to passive-reader and lag controls.
    Controls(ControlArgs),
    /// Scores per relationship category on equal-size test subsets.
    Partition(PartitionArgs),
    /// SyncR² as a function of the sample budget.
    Sweep(SweepArgs),
    /// Decode emotion/action distributions from hidden states.
    Decode(DecodeArgs),
    /// Correlate synchrony with performance, per model family.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Interaction,
    Persona,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Emotion,
    Action,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlignArg {
    SelfCurrent,
    PartnerPrevious,
    PartnerNext,
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config with flat keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// modelA:modelB
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    pub split_policy: Option<PolicyArg>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub sample_budget: Option<usize>,
    /// Use all rows when fewer than the budget are available.
    #[arg(long)]
    pub allow_insufficient: bool,
    #[arg(long)]
    pub standardize: bool,
    /// Top-k targets averaged per source layer.
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep negative per-layer aggregates.
    #[arg(long)]
    pub no_clamp: bool,
    #[arg(long)]
    pub affect: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Output directory; JSON goes to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// CouplingSpec JSON; defaults are used when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Directory that receives the corpus.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub interactions: Option<usize>,
    #[arg(long)]
    pub passive_attenuation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub common: Common,
    /// Write every fitted map as a REPM file under <output>/maps.
    #[arg(long)]
    pub save_maps: bool,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub lags: Option<Vec<usize>>,
    /// Also score the interactive source against the partner's passive reader.
    #[arg(long)]
    pub passive_reversed: bool,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub subsample_seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, value_enum)]
    pub alignment: Option<AlignArg>,
    #[arg(long)]
    pub layer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Synchrony per pair_id: JSON object or CSV with pair_id,syncr2.
    #[arg(long)]
    pub sync: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long)]
    pub permutations: Option<usize>,
}

impl Common {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.corpus {
            c.corpus = Some(v.clone());
        }
        if let Some(v) = &self.pair {
            c.pair = Some(v.clone());
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = &self.seeds {
            c.seeds = v.clone();
        }
        if let Some(v) = self.split_policy {
            c.split_policy = match v {
                PolicyArg::Interaction => SplitPolicy::InteractionDisjoint,
                PolicyArg::Persona => SplitPolicy::PersonaDisjoint,
            };
        }
        if let Some(v) = self.train_fraction {
            c.train_fraction = v;
        }
        if let Some(v) = self.sample_budget {
            c.sample_budget = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        c.allow_insufficient |= self.allow_insufficient;
        c.standardize |= self.standardize;
        if self.no_clamp {
            c.clamp = false;
        }
        if let Some(v) = &self.affect {
            c.affect = Some(v.clone());
        }
        if let Some(v) = &self.scores {
            c.scores = Some(v.clone());
        }
        if let Some(v) = &self.output {
            c.output = Some(v.clone());
        }
        Ok(c)
    }
}

impl From<KindArg> for DistKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Emotion => DistKind::Emotion,
            KindArg::Action => DistKind::Action,
        }
    }
}

impl From<AlignArg> for Alignment {
    fn from(a: AlignArg) -> Self {
        match a {
            AlignArg::SelfCurrent => Alignment::SelfCurrent,
            AlignArg::PartnerPrevious => Alignment::PartnerPrevious,
            AlignArg::PartnerNext => Alignment::PartnerNext,
        }
    }
}
