mod args;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use serde::Serialize;

use args::{Cli, Command, Common};
use syncr2_core::decoding::{load_affect_dir, run_decode, DecodeConfig, DecodeReport};
use syncr2_core::pairsets::{Direction, PairCondition};
use syncr2_core::regression::write_map;
use syncr2_core::report::{self, Envelope, HeatmapRecord, RunConfig};
use syncr2_core::repstore::{load_corpus, Corpus, ModelPair};
use syncr2_core::stats::{correlate_by_family, FamilyReport, PermutationOptions, ScoreTable};
use syncr2_core::synchrony::{
    compute_heatmap_with, evaluate_partitioned, run_controls, sample_size_sweep, score_condition, syncr2_symmetric,
    ControlReport, SyncScore,
};
use syncr2_core::synthlab::{analytic_syncr2, generate_to_dir, read_spec, CouplingSpec};
use syncr2_core::{AffineMap64, Error, ErrorKind};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::kind) {
        Some(ErrorKind::Validation) => 2,
        Some(ErrorKind::Numeric) => 4,
        Some(ErrorKind::Data) | None => 3,
    }
}

fn invalid(field: &str, reason: &str) -> anyhow::Error {
    Error::Validation {
        field: field.into(),
        reason: reason.into(),
    }
    .into()
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("SYNCR2_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| invalid("SYNCR2_THREADS", "expected a positive integer"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(invalid("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Validate(c) => validate(&c),
        Command::Synthgen(a) => synthgen(&a),
        Command::Heatmap(a) => heatmap(&a.common, a.save_maps),
        Command::Syncr2(c) => syncr2(&c),
        Command::Controls(a) => controls(&a),
        Command::Partition(a) => partition(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Decode(a) => decode(&a),
        Command::Stats(a) => stats(&a),
    }
}

/// Resolved config plus the loaded corpus and pair.
struct Loaded {
    cfg: RunConfig,
    corpus: Corpus,
    pair: ModelPair,
    hash: String,
}

fn load(cfg: RunConfig) -> anyhow::Result<Loaded> {
    cfg.validate()?;
    let root = cfg.corpus.clone().ok_or_else(|| invalid("corpus", "required (flag or config)"))?;
    let corpus = load_corpus(&root).with_context(|| format!("loading corpus {}", root.display()))?;
    let requested = cfg.pair.as_deref().map(ModelPair::parse).transpose()?;
    let pair = corpus.resolve_pair(requested.as_ref())?;
    let hash = corpus.content_hash();
    Ok(Loaded {
        cfg,
        corpus,
        pair,
        hash,
    })
}

/// Writes `<output>/<command>.json` and extra files, or prints the JSON to
/// stdout when no output directory is set. The summary goes to stdout in the
/// first case and to stderr in the second.
fn emit<T: Serialize>(
    command: &str,
    cfg: &RunConfig,
    hash: Option<&str>,
    warnings: &[String],
    result: &T,
    extra: &[(String, String)],
    summary: &str,
) -> anyhow::Result<()> {
    let json = report::to_json(&Envelope::new(command, cfg, hash, warnings, result))?;
    for w in warnings {
        log::warn!("{w}");
    }
    match &cfg.output {
        Some(dir) => {
            report::write_text(dir.join(format!("{command}.json")), &json)?;
            for (name, text) in extra {
                report::write_text(dir.join(name), text)?;
            }
            print!("{summary}");
        }
        None => {
            print!("{json}");
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn score_line(label: &str, s: &SyncScore) -> String {
    format!(
        "{label:<14} SyncR2 {:.4} ± {:.4}  (fwd {:.4}, bwd {:.4}, {} seeds)\n",
        s.symmetric,
        s.standard_error,
        s.forward,
        s.backward,
        s.per_seed.len()
    )
}

#[derive(Serialize)]
struct ValidateResult {
    interactions: usize,
    model_pairs: Vec<String>,
    passive_interactions: usize,
    layers_a: Vec<usize>,
    layers_b: Vec<usize>,
    affect_sidecars: Option<usize>,
    score_rows: Option<usize>,
}

fn validate(c: &Common) -> anyhow::Result<()> {
    let cfg = c.resolve()?;
    cfg.validate()?;
    let root = cfg.corpus.clone().ok_or_else(|| invalid("corpus", "required (flag or config)"))?;
    let corpus = load_corpus(&root).with_context(|| format!("loading corpus {}", root.display()))?;
    let mut layers_a: Vec<usize> = corpus.interactions().map(|i| i.a.layers()).collect();
    let mut layers_b: Vec<usize> = corpus.interactions().map(|i| i.b.layers()).collect();
    layers_a.sort_unstable();
    layers_a.dedup();
    layers_b.sort_unstable();
    layers_b.dedup();
    let affect = match &cfg.affect {
        Some(dir) => Some(load_affect_dir(dir)?.len()),
        None => None,
    };
    let scores = match &cfg.scores {
        Some(p) => Some(ScoreTable::from_path(p)?.rows.len()),
        None => None,
    };
    let res = ValidateResult {
        interactions: corpus.len(),
        model_pairs: corpus.model_pairs().iter().map(ToString::to_string).collect(),
        passive_interactions: corpus
            .interactions()
            .filter(|i| i.passive_a.is_some() || i.passive_b.is_some())
            .count(),
        layers_a,
        layers_b,
        affect_sidecars: affect,
        score_rows: scores,
    };
    let hash = corpus.content_hash();
    let mut summary = format!(
        "corpus ok: {} interactions, {} with passive traces, pairs [{}]\nhash {}\n",
        res.interactions,
        res.passive_interactions,
        res.model_pairs.join(", "),
        hash
    );
    if let Some(n) = res.affect_sidecars {
        summary.push_str(&format!("affect sidecars ok: {n}\n"));
    }
    if let Some(n) = res.score_rows {
        summary.push_str(&format!("score table ok: {n} rows\n"));
    }
    emit("validate", &cfg, Some(&hash), corpus.warnings(), &res, &[], &summary)
}

#[derive(Serialize)]
struct SynthResult<'a> {
    spec: &'a CouplingSpec,
    directory: &'a Path,
    interactions: usize,
    analytic_syncr2: Option<f64>,
}

fn synthgen(a: &args::SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &a.spec {
        Some(p) => read_spec(p)?,
        None => CouplingSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.signal {
        spec.signal = v;
    }
    if let Some(v) = a.interactions {
        spec.interactions = v;
    }
    if let Some(v) = a.passive_attenuation {
        spec.passive_attenuation = Some(v);
    }
    spec.validate()?;
    let corpus = generate_to_dir(&spec, &a.out)?;
    let hash = corpus.content_hash();
    let analytic = analytic_syncr2(&spec, PairCondition::Experimental).ok();
    let res = SynthResult {
        spec: &spec,
        directory: &a.out,
        interactions: corpus.len(),
        analytic_syncr2: analytic,
    };
    let cfg = RunConfig {
        corpus: Some(a.out.clone()),
        pair: Some(format!("{}:{}", spec.model_a, spec.model_b)),
        ..RunConfig::default()
    };
    let json = report::to_json(&Envelope::new("synthgen", &cfg, Some(&hash), &[], &res))?;
    report::write_text(a.out.join("synthgen.json"), &json)?;
    print!(
        "wrote {} interactions to {}\nhash {}\n",
        res.interactions,
        a.out.display(),
        hash
    );
    if let Some(v) = analytic {
        println!("analytic SyncR2 {v:.4}");
    }
    Ok(())
}

#[derive(Serialize)]
struct HeatmapResult {
    heatmaps: Vec<HeatmapRecord>,
    score: SyncScore,
    saved_maps: usize,
}

fn heatmap(c: &Common, save_maps: bool) -> anyhow::Result<()> {
    let mut cfg = c.resolve()?;
    cfg.save_maps |= save_maps;
    if cfg.save_maps && cfg.output.is_none() {
        return Err(invalid("save_maps", "needs an output directory"));
    }
    let l = load(cfg)?;
    let pcfg = l.cfg.pipeline();
    let saved = std::sync::atomic::AtomicUsize::new(0);
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    let mut extra = Vec::new();
    for &seed in &l.cfg.seeds {
        for dir in [Direction::AToB, Direction::BToA] {
            let maps_dir: Option<PathBuf> = l
                .cfg
                .output
                .as_ref()
                .filter(|_| l.cfg.save_maps)
                .map(|o| o.join("maps").join(format!("{}_seed{seed}", dir)));
            if let Some(d) = &maps_dir {
                std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            }
            let sink = |m: &AffineMap64| -> syncr2_core::Result<()> {
                let d = maps_dir.as_ref().expect("sink only installed with a directory");
                let name = format!(
                    "s{:03}_t{:03}.repm",
                    m.source_layer.unwrap_or(0),
                    m.target_layer.unwrap_or(0)
                );
                write_map(m, d.join(name))?;
                saved.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                Ok(())
            };
            let h = compute_heatmap_with::<f64>(
                &l.corpus,
                &l.pair,
                dir,
                PairCondition::Experimental,
                &pcfg,
                seed,
                maps_dir.as_ref().map(|_| &sink as syncr2_core::synchrony::MapSink<'_, f64>),
            )?;
            extra.push((format!("heatmap_{dir}_seed{seed}.csv"), report::heatmap_csv(&h)?));
            match dir {
                Direction::AToB => fwd.push(h),
                Direction::BToA => bwd.push(h),
            }
        }
    }
    let score = syncr2_symmetric(&fwd, &bwd, l.cfg.variant())?;
    let heatmaps: Vec<HeatmapRecord> = fwd.iter().chain(&bwd).map(HeatmapRecord::from).collect();
    let res = HeatmapResult {
        heatmaps,
        score,
        saved_maps: saved.into_inner(),
    };
    let h0 = &res.heatmaps[0];
    let mut summary = format!(
        "{} heatmaps, {}x{} layers, n_train {}, n_test {}\n",
        res.heatmaps.len(),
        h0.source_layers,
        h0.target_layers,
        h0.n_train,
        h0.n_test
    );
    summary.push_str(&score_line("experimental", &res.score));
    if res.saved_maps > 0 {
        summary.push_str(&format!("saved {} maps\n", res.saved_maps));
    }
    emit("heatmap", &l.cfg, Some(&l.hash), l.corpus.warnings(), &res, &extra, &summary)
}

fn syncr2(c: &Common) -> anyhow::Result<()> {
    let l = load(c.resolve()?)?;
    let run = score_condition::<f64>(
        &l.corpus,
        &l.pair,
        PairCondition::Experimental,
        &l.cfg.pipeline(),
        &l.cfg.seeds,
        l.cfg.variant(),
    )?;
    let summary = format!("pair {}\n{}", l.pair, score_line("experimental", &run.score));
    emit("syncr2", &l.cfg, Some(&l.hash), l.corpus.warnings(), &run.score, &[], &summary)
}

#[derive(Serialize)]
struct ControlsResult {
    #[serde(flatten)]
    report: ControlReport,
    passive_reversed: Option<SyncScore>,
}

fn controls(a: &args::ControlArgs) -> anyhow::Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(l) = &a.lags {
        cfg.lags = l.clone();
    }
    cfg.passive_reversed |= a.passive_reversed;
    let l = load(cfg)?;
    let pcfg = l.cfg.pipeline();
    let report = run_controls(&l.corpus, &l.pair, &l.cfg.lags, &pcfg, &l.cfg.seeds, l.cfg.variant())?;
    let reversed = if l.cfg.passive_reversed {
        Some(
            score_condition::<f64>(
                &l.corpus,
                &l.pair,
                PairCondition::PassiveReversed,
                &pcfg,
                &l.cfg.seeds,
                l.cfg.variant(),
            )?
            .score,
        )
    } else {
        None
    };
    let mut summary = score_line("experimental", &report.experimental);
    if let Some(p) = &report.passive {
        summary.push_str(&score_line("passive", p));
    }
    for (k, s) in &report.lags {
        summary.push_str(&score_line(&format!("lag {k}"), s));
    }
    if let Some(r) = &reversed {
        summary.push_str(&score_line("passive rev.", r));
    }
    let csv = report::controls_long_csv(&report)?;
    let mut warnings = l.corpus.warnings().to_vec();
    warnings.extend(report.warnings.iter().cloned());
    let res = ControlsResult {
        report,
        passive_reversed: reversed,
    };
    emit(
        "controls",
        &l.cfg,
        Some(&l.hash),
        &warnings,
        &res,
        &[("controls.csv".into(), csv)],
        &summary,
    )
}

fn partition(a: &args::PartitionArgs) -> anyhow::Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(s) = &a.subsample_seeds {
        cfg.subsample_seeds = s.clone();
    }
    let l = load(cfg)?;
    let train_seed = l.cfg.seeds.first().copied().unwrap_or(0);
    let rep = evaluate_partitioned(
        &l.corpus,
        &l.pair,
        &l.cfg.pipeline(),
        train_seed,
        &l.cfg.subsample_seeds,
        l.cfg.variant(),
    )?;
    let mut summary = String::new();
    if let Some(f) = &rep.source_filter {
        summary.push_str(&format!("sources: {}\n", f.join(", ")));
    }
    for (rel, s) in &rep.scores {
        summary.push_str(&format!(
            "{:<14} SyncR2 {:.4} ± {:.4}  (subset {}/{})\n",
            rel.to_string(),
            s.symmetric,
            s.standard_error,
            s.subset_size_forward,
            s.subset_size_backward
        ));
    }
    let csv = report::partition_long_csv(&rep)?;
    let mut warnings = l.corpus.warnings().to_vec();
    warnings.extend(rep.warnings.iter().cloned());
    emit(
        "partition",
        &l.cfg,
        Some(&l.hash),
        &warnings,
        &rep,
        &[("partition.csv".into(), csv)],
        &summary,
    )
}

fn sweep(a: &args::SweepArgs) -> anyhow::Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(b) = &a.budgets {
        cfg.budgets = b.clone();
    }
    let l = load(cfg)?;
    let res = sample_size_sweep(
        &l.corpus,
        &l.pair,
        &l.cfg.budgets,
        &l.cfg.pipeline(),
        &l.cfg.seeds,
        l.cfg.variant(),
    )?;
    let summary: String = res.iter().map(|(b, s)| score_line(&format!("budget {b}"), s)).collect();
    let csv = report::sweep_long_csv(&res)?;
    emit(
        "sweep",
        &l.cfg,
        Some(&l.hash),
        l.corpus.warnings(),
        &res,
        &[("sweep.csv".into(), csv)],
        &summary,
    )
}

fn decode(a: &args::DecodeArgs) -> anyhow::Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(k) = a.kind {
        cfg.kind = k.into();
    }
    if let Some(al) = a.alignment {
        cfg.alignment = al.into();
    }
    if let Some(layer) = a.layer {
        cfg.layer = Some(layer);
    }
    let l = load(cfg)?;
    let dir = l.cfg.affect.clone().ok_or_else(|| invalid("affect", "required (flag or config)"))?;
    let affect = load_affect_dir(&dir)?;
    let dcfg = DecodeConfig {
        kind: l.cfg.kind,
        alignment: l.cfg.alignment,
        layer: l.cfg.layer,
        lambda: l.cfg.lambda,
        plan: l.cfg.split_plan(),
        ..DecodeConfig::default()
    };
    let rep: DecodeReport = run_decode(&l.corpus, &affect, &l.pair, &dcfg, &l.cfg.seeds)?;
    let summary = format!(
        "{} / {} at layer {}: test KL {:.4} ± {:.4}, baseline {:.4} ± {:.4}, {} rows skipped\n",
        rep.kind,
        rep.alignment,
        rep.layer,
        rep.mean_test_kl,
        rep.test_kl_standard_error,
        rep.baseline_kl,
        rep.baseline_kl_standard_error,
        rep.skipped_rows
    );
    emit("decode", &l.cfg, Some(&l.hash), l.corpus.warnings(), &rep, &[], &summary)
}

fn read_sync(path: &Path) -> anyhow::Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let map: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(map)
}

fn sync_from_table(table: &ScoreTable) -> anyhow::Result<BTreeMap<String, f64>> {
    if !table.columns.iter().any(|c| c == "syncr2") {
        return Err(invalid("sync", "pass --sync or add a syncr2 column to the score table"));
    }
    table
        .rows
        .iter()
        .map(|r| {
            let raw = r.extra.get("syncr2").map(String::as_str).unwrap_or("");
            let v: f64 = raw
                .parse()
                .map_err(|_| invalid("syncr2", &format!("pair {}: not a number: {raw:?}", r.pair_id)))?;
            Ok((r.pair_id.clone(), v))
        })
        .collect()
}

fn stats(a: &args::StatsArgs) -> anyhow::Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(s) = &a.sync {
        cfg.sync = Some(s.clone());
    }
    if let Some(c) = &a.covariates {
        cfg.covariates = c.clone();
    }
    if let Some(p) = a.permutations {
        cfg.permutations = Some(p);
    }
    cfg.validate()?;
    let path = cfg.scores.clone().ok_or_else(|| invalid("scores", "required (flag or config)"))?;
    let table = ScoreTable::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let sync = match &cfg.sync {
        Some(p) => read_sync(p)?,
        None => sync_from_table(&table)?,
    };
    let perms = cfg.permutations.map(|n| PermutationOptions {
        permutations: n,
        seed: cfg.seeds.first().copied().unwrap_or(0),
    });
    let rep: FamilyReport = correlate_by_family(&sync, &table, &cfg.covariates, perms)?;
    let mut summary = String::new();
    for f in &rep.results {
        summary.push_str(&format!(
            "{:<16} {:<12} n={:<3} r={:+.3} p={:.3e}",
            f.family, f.composite, f.pearson.n, f.pearson.r, f.pearson.p_two_sided
        ));
        if let Some(p) = &f.partial {
            summary.push_str(&format!("  partial r={:+.3} p={:.3e}", p.r, p.p_two_sided));
        }
        summary.push('\n');
    }
    let csv = report::family_csv(&rep)?;
    emit(
        "stats",
        &cfg,
        None,
        &rep.warnings,
        &rep,
        &[("stats.csv".into(), csv)],
        &summary,
    )
}
