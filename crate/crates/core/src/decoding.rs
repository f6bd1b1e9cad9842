//! Linear readout of emotion/action distributions from hidden states,
//! scored by KL divergence against the train-mean distribution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::column_means;
use crate::pairsets::{split, SampleMeta, SplitPlan};
use crate::regression::{fit_ridge, AffineMap, Predictor, DEFAULT_LAMBDA};
use crate::repstore::{AgentRole, Corpus, ModelPair};
use crate::scalar::Real;
use crate::synchrony::standard_error;

pub const EMOTIONS: [&str; 8] = [
    "Joy",
    "Trust",
    "Fear",
    "Surprise",
    "Sadness",
    "Disgust",
    "Anger",
    "Anticipation",
];
pub const ACTIONS: [&str; 5] = ["Assertive", "Directive", "Commissive", "Expressive", "Declaration"];

/// Additive smoothing before logarithms and in KL denominators.
pub const SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Emotion,
    Action,
}

impl DistKind {
    pub fn width(self) -> usize {
        self.vocabulary().len()
    }

    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            DistKind::Emotion => &EMOTIONS,
            DistKind::Action => &ACTIONS,
        }
    }
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistKind::Emotion => "emotion",
            DistKind::Action => "action",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Agent's own distribution at the same turn.
    SelfCurrent,
    /// Partner's distribution at turn t - 1.
    PartnerPrevious,
    /// Partner's distribution at turn t + 1.
    PartnerNext,
}

impl Alignment {
    pub const ALL: [Alignment; 3] = [Alignment::SelfCurrent, Alignment::PartnerPrevious, Alignment::PartnerNext];
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alignment::SelfCurrent => "self_current",
            Alignment::PartnerPrevious => "partner_previous",
            Alignment::PartnerNext => "partner_next",
        })
    }
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows<T: Real>(logits: ArrayView2<'_, T>) -> Result<Array2<T>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("logits", "non-finite value"));
    }
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / total);
    }
    Ok(out)
}

/// Softmax over a fixed vocabulary; rejects rows of the wrong width.
pub fn softmax_targets<T: Real>(logits: ArrayView2<'_, T>, kind: DistKind) -> Result<Array2<T>> {
    if logits.ncols() != kind.width() {
        return Err(Error::Shape(format!(
            "{kind} logits need {} columns, got {}",
            kind.width(),
            logits.ncols()
        )));
    }
    softmax_rows(logits)
}

/// Checks that every row is a probability vector (sum 1 within 1e-6).
pub fn validate_distributions<T: Real>(p: ArrayView2<'_, T>) -> Result<()> {
    for (i, row) in p.rows().into_iter().enumerate() {
        if row.iter().any(|&v| !v.is_finite() || v < T::zero()) {
            return Err(Error::invalid("distribution", format!("row {i} has a negative or non-finite entry")));
        }
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > T::of(1e-6) {
            return Err(Error::invalid("distribution", format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// `sum p_i ln(p_i / q_i)` in nats, with `0 ln(0/q) = 0`.
pub fn kl_divergence<T: Real>(p: ArrayView1<'_, T>, q: ArrayView1<'_, T>) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    let mut total = T::zero();
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > T::zero() {
            if !(qi > T::zero()) {
                return Err(Error::invalid("q", "zero probability where p is positive"));
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(T::zero()))
}

/// `(q + eps) / (1 + K eps)`.
pub fn smooth<T: Real>(q: ArrayView1<'_, T>) -> Array1<T> {
    let eps = T::of(SMOOTHING);
    let denom = T::one() + T::of_usize(q.len()) * eps;
    q.mapv(|v| (v + eps) / denom)
}

fn mean_kl<T: Real>(p: ArrayView2<'_, T>, q: ArrayView2<'_, T>) -> Result<T> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!("targets {:?} vs predictions {:?}", p.dim(), q.dim())));
    }
    if p.nrows() == 0 {
        return Err(Error::EmptyDataset("no test distributions".into()));
    }
    let mut total = T::zero();
    for (pr, qr) in p.rows().into_iter().zip(q.rows()) {
        total += kl_divergence(pr, smooth(qr).view())?;
    }
    Ok(total / T::of_usize(p.nrows()))
}

/// Mean KL of each test target from the (smoothed) training-mean
/// distribution.
pub fn baseline_report<T: Real>(train: ArrayView2<'_, T>, test: ArrayView2<'_, T>) -> Result<T> {
    if train.nrows() == 0 || test.nrows() == 0 {
        return Err(Error::EmptyDataset("baseline needs train and test targets".into()));
    }
    if train.ncols() != test.ncols() {
        return Err(Error::Shape(format!("train width {} vs test width {}", train.ncols(), test.ncols())));
    }
    let q = smooth(column_means(train).view());
    let mut total = T::zero();
    for row in test.rows() {
        total += kl_divergence(row, q.view())?;
    }
    Ok(total / T::of_usize(test.nrows()))
}

/// Ridge readout onto smoothed log-probabilities; predictions are mapped
/// back through a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub map: AffineMap<T>,
}

pub fn fit_decoder<T: Real>(x: ArrayView2<'_, T>, p: ArrayView2<'_, T>, lambda: T) -> Result<Decoder<T>> {
    if x.nrows() < 2 {
        return Err(Error::InsufficientData {
            available: x.nrows(),
            required: 2,
        });
    }
    validate_distributions(p)?;
    let eps = T::of(SMOOTHING);
    let logp = p.mapv(|v| (v + eps).ln());
    Ok(Decoder {
        map: fit_ridge(x, logp.view(), lambda)?,
    })
}

impl<T: Real> Decoder<T> {
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        softmax_rows(self.map.predict(x)?.view())
    }

    /// Mean test KL of the targets from the predicted distributions.
    pub fn test_kl(&self, x: ArrayView2<'_, T>, p: ArrayView2<'_, T>) -> Result<T> {
        let q = self.predict(x)?;
        mean_kl(p, q.view())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeSplitScore {
    pub test_kl: f64,
    pub baseline_kl: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Fits on the training rows and reports decoder and baseline KL on the
/// test rows.
pub fn evaluate_decoder<T: Real>(
    x_train: ArrayView2<'_, T>,
    p_train: ArrayView2<'_, T>,
    x_test: ArrayView2<'_, T>,
    p_test: ArrayView2<'_, T>,
    lambda: T,
) -> Result<DecodeSplitScore> {
    let dec = fit_decoder(x_train, p_train, lambda)?;
    validate_distributions(p_test)?;
    Ok(DecodeSplitScore {
        test_kl: dec.test_kl(x_test, p_test)?.to_f64_lossy(),
        baseline_kl: baseline_report(p_train, p_test)?.to_f64_lossy(),
        n_train: x_train.nrows(),
        n_test: x_test.nrows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectTurn {
    pub turn: usize,
    pub agent_role: AgentRole,
    pub emotion_logits: Vec<f64>,
    pub action_logits: Vec<f64>,
}

/// Per-interaction sidecar with emotion/action logits for each agent turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectSidecar {
    pub interaction_id: String,
    pub turns: Vec<AffectTurn>,
}

impl AffectSidecar {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.turns {
            if t.emotion_logits.len() != EMOTIONS.len() || t.action_logits.len() != ACTIONS.len() {
                return Err(Error::invalid(
                    "affect",
                    format!(
                        "{} turn {} ({}): expected 8 emotion and 5 action logits, got {} and {}",
                        self.interaction_id,
                        t.turn,
                        t.agent_role,
                        t.emotion_logits.len(),
                        t.action_logits.len()
                    ),
                ));
            }
            if t.emotion_logits.iter().chain(&t.action_logits).any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "affect",
                    format!("{} turn {} ({}): non-finite logit", self.interaction_id, t.turn, t.agent_role),
                ));
            }
            if !seen.insert((t.agent_role, t.turn)) {
                return Err(Error::invalid(
                    "affect",
                    format!("{} turn {} ({}) listed twice", self.interaction_id, t.turn, t.agent_role),
                ));
            }
        }
        Ok(())
    }

    pub fn distribution(&self, role: AgentRole, turn: usize, kind: DistKind) -> Option<Array1<f64>> {
        let t = self.turns.iter().find(|t| t.agent_role == role && t.turn == turn)?;
        let logits = match kind {
            DistKind::Emotion => &t.emotion_logits,
            DistKind::Action => &t.action_logits,
        };
        let row = Array2::from_shape_vec((1, logits.len()), logits.clone()).ok()?;
        softmax_rows(row.view()).ok().map(|p| p.index_axis_move(Axis(0), 0))
    }
}

pub fn read_affect(path: impl AsRef<Path>) -> Result<AffectSidecar> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let side: AffectSidecar = serde_json::from_str(&text)?;
    side.validate()?;
    Ok(side)
}

pub fn write_affect(side: &AffectSidecar, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(side)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads every `*.json` sidecar in a directory, keyed by interaction id.
pub fn load_affect_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, AffectSidecar>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let side = read_affect(&p)?;
        if out.contains_key(&side.interaction_id) {
            return Err(Error::DuplicateInteraction(side.interaction_id));
        }
        out.insert(side.interaction_id.clone(), side);
    }
    Ok(out)
}

/// Aligned (representation, distribution) rows.
#[derive(Debug, Clone)]
pub struct DecodeDataset<T> {
    pub x: Array2<T>,
    pub p: Array2<T>,
    pub meta: Vec<SampleMeta>,
    pub skipped: usize,
}

/// Pairs each agent turn's layer vector with the distribution selected by
/// `alignment`. Turns without a matching sidecar entry are skipped.
pub fn assemble<T: Real>(
    corpus: &Corpus,
    affect: &BTreeMap<String, AffectSidecar>,
    pair: &ModelPair,
    kind: DistKind,
    alignment: Alignment,
    layer: usize,
    roles: &[AgentRole],
) -> Result<DecodeDataset<T>> {
    let mut xs: Vec<T> = Vec::new();
    let mut ps: Vec<T> = Vec::new();
    let mut meta = Vec::new();
    let mut skipped = 0usize;
    let mut dim = None;
    for inter in corpus.for_pair(pair) {
        let Some(side) = affect.get(&inter.meta.interaction_id) else {
            skipped += inter.turns() * roles.len();
            continue;
        };
        for &role in roles {
            let trace = inter.trace(role);
            if layer >= trace.layers() {
                return Err(Error::invalid(
                    "layer",
                    format!("layer {layer} out of range for {} layers", trace.layers()),
                ));
            }
            if *dim.get_or_insert(trace.dim()) != trace.dim() {
                return Err(Error::Shape("representation width differs between interactions".into()));
            }
            for t in 0..trace.turns() {
                let (who, turn) = match alignment {
                    Alignment::SelfCurrent => (role, Some(t)),
                    Alignment::PartnerPrevious => (role.partner(), t.checked_sub(1)),
                    Alignment::PartnerNext => (role.partner(), Some(t + 1)),
                };
                let Some(dist) = turn.and_then(|u| side.distribution(who, u, kind)) else {
                    skipped += 1;
                    continue;
                };
                xs.extend(trace.vector(t, layer).iter().map(|&v| T::of(v as f64)));
                ps.extend(dist.iter().map(|&v| T::of(v)));
                meta.push(SampleMeta {
                    interaction_id: inter.meta.interaction_id.clone(),
                    source_turn: t,
                    target_turn: turn.unwrap_or(t),
                    persona_pair_id: inter.meta.persona_pair_id.clone(),
                    relationship: inter.meta.relationship,
                    scenario_source: inter.meta.scenario_source.clone(),
                });
            }
        }
    }
    if meta.is_empty() {
        return Err(Error::EmptyDataset(format!("no aligned {kind} rows for {alignment}")));
    }
    let n = meta.len();
    let d = dim.unwrap_or(0);
    Ok(DecodeDataset {
        x: Array2::from_shape_vec((n, d), xs).map_err(|e| Error::Shape(e.to_string()))?,
        p: Array2::from_shape_vec((n, kind.width()), ps).map_err(|e| Error::Shape(e.to_string()))?,
        meta,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub kind: DistKind,
    pub alignment: Alignment,
    /// Layer to read from; `None` means the middle layer.
    pub layer: Option<usize>,
    pub lambda: f64,
    pub plan: SplitPlan,
    pub roles: Vec<AgentRole>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            kind: DistKind::Emotion,
            alignment: Alignment::SelfCurrent,
            layer: None,
            lambda: DEFAULT_LAMBDA,
            plan: SplitPlan::default(),
            roles: vec![AgentRole::A, AgentRole::B],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeSeed {
    pub seed: u64,
    pub test_kl: f64,
    pub baseline_kl: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub kind: DistKind,
    pub alignment: Alignment,
    pub layer: usize,
    pub mean_test_kl: f64,
    pub baseline_kl: f64,
    pub test_kl_standard_error: f64,
    pub baseline_kl_standard_error: f64,
    pub per_seed: Vec<DecodeSeed>,
    pub skipped_rows: usize,
}

/// Group-disjoint split per seed, decoder fit, KL against the baseline.
pub fn run_decode(
    corpus: &Corpus,
    affect: &BTreeMap<String, AffectSidecar>,
    pair: &ModelPair,
    config: &DecodeConfig,
    seeds: &[u64],
) -> Result<DecodeReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let layers = corpus
        .for_pair(pair)
        .next()
        .map(|i| i.a.layers())
        .ok_or_else(|| Error::EmptyDataset(format!("no interactions for {pair}")))?;
    let layer = config.layer.unwrap_or(layers / 2);
    let ds = assemble::<f64>(corpus, affect, pair, config.kind, config.alignment, layer, &config.roles)?;
    let all: Vec<usize> = (0..ds.meta.len()).collect();
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let s = split(&ds.meta, &all, &config.plan.with_seed(seed))?;
        let score = evaluate_decoder(
            ds.x.select(Axis(0), &s.train).view(),
            ds.p.select(Axis(0), &s.train).view(),
            ds.x.select(Axis(0), &s.test).view(),
            ds.p.select(Axis(0), &s.test).view(),
            config.lambda,
        )?;
        per_seed.push(DecodeSeed {
            seed,
            test_kl: score.test_kl,
            baseline_kl: score.baseline_kl,
            n_train: score.n_train,
            n_test: score.n_test,
        });
    }
    let tk: Vec<f64> = per_seed.iter().map(|s| s.test_kl).collect();
    let bk: Vec<f64> = per_seed.iter().map(|s| s.baseline_kl).collect();
    Ok(DecodeReport {
        kind: config.kind,
        alignment: config.alignment,
        layer,
        mean_test_kl: tk.iter().sum::<f64>() / tk.len() as f64,
        baseline_kl: bk.iter().sum::<f64>() / bk.len() as f64,
        test_kl_standard_error: standard_error(&tk),
        baseline_kl_standard_error: standard_error(&bk),
        per_seed,
        skipped_rows: ds.skipped,
    })
}
