//! Directional (source, target) datasets built from a corpus.
//!
//! A [`PairFamily`] fixes the rows, i.e. which (interaction, source turn,
//! target turn) triples take part, for one model pair, direction and
//! condition. Every layer pair of the grid is a view of the same rows, so a
//! single budget draw and a single split are shared by the whole heatmap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repstore::{AgentRole, Corpus, Interaction, ModelPair, Relationship, RepresentationTrace};
use crate::scalar::Real;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_SAMPLE_BUDGET: usize = 6500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AToB,
    BToA,
}

impl Direction {
    pub fn source_role(self) -> AgentRole {
        match self {
            Direction::AToB => AgentRole::A,
            Direction::BToA => AgentRole::B,
        }
    }

    pub fn target_role(self) -> AgentRole {
        self.source_role().partner()
    }

    /// Turn offset between source and target before any lag: B speaks after
    /// A within a round, so B's turn t is paired with A's turn t + 1.
    fn base_offset(self) -> usize {
        match self {
            Direction::AToB => 0,
            Direction::BToA => 1,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::AToB => Direction::BToA,
            Direction::BToA => Direction::AToB,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AToB => "A_to_B",
            Direction::BToA => "B_to_A",
        })
    }
}

/// Which representations are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum PairCondition {
    /// Temporally aligned pairs from the two interacting agents.
    Experimental,
    /// Source is the passive reader standing in for the source agent.
    PassiveControl,
    /// Reversed probe: the interactive source predicts the partner's passive
    /// reader. Not part of the standard controls.
    PassiveReversed,
    /// Target shifted `k >= 1` further turns into the future.
    Lag(usize),
}

impl PairCondition {
    pub fn lag(self) -> usize {
        match self {
            PairCondition::Lag(k) => k,
            _ => 0,
        }
    }

    pub fn validate(self) -> Result<()> {
        if let PairCondition::Lag(0) = self {
            return Err(Error::invalid("lag", "lag control needs k >= 1"));
        }
        Ok(())
    }
}

impl fmt::Display for PairCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairCondition::Experimental => f.write_str("experimental"),
            PairCondition::PassiveControl => f.write_str("passive_control"),
            PairCondition::PassiveReversed => f.write_str("passive_reversed"),
            PairCondition::Lag(k) => write!(f, "lag_{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub direction: Direction,
    pub condition: PairCondition,
    pub source_layer: usize,
    pub target_layer: usize,
}

/// Provenance of one dataset row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub interaction_id: String,
    /// Zero-based source turn.
    pub source_turn: usize,
    /// Zero-based target turn.
    pub target_turn: usize,
    pub persona_pair_id: String,
    pub relationship: Relationship,
    pub scenario_source: String,
}

#[derive(Debug, Clone)]
pub struct PairDataset<T> {
    pub x: Array2<T>,
    pub y: Array2<T>,
    pub meta: Vec<SampleMeta>,
    pub spec: PairSpec,
}

#[derive(Debug, Clone)]
struct RowRef {
    interaction: usize,
    source_turn: usize,
    target_turn: usize,
}

/// Rows shared by every layer pair of one (model pair, direction, condition).
#[derive(Debug, Clone)]
pub struct PairFamily<'c> {
    pub pair: ModelPair,
    pub direction: Direction,
    pub condition: PairCondition,
    interactions: Vec<&'c Interaction>,
    rows: Vec<RowRef>,
    meta: Vec<SampleMeta>,
    source_layers: usize,
    target_layers: usize,
    source_dim: usize,
    target_dim: usize,
    warnings: Vec<String>,
}

fn source_trace<'a>(it: &'a Interaction, dir: Direction, cond: PairCondition) -> Option<&'a RepresentationTrace> {
    match cond {
        PairCondition::PassiveControl => it.passive(dir.source_role()),
        _ => Some(it.trace(dir.source_role())),
    }
}

fn target_trace<'a>(it: &'a Interaction, dir: Direction, cond: PairCondition) -> Option<&'a RepresentationTrace> {
    match cond {
        PairCondition::PassiveReversed => it.passive(dir.target_role()),
        _ => Some(it.trace(dir.target_role())),
    }
}

/// Builds the row family for one model pair, direction and condition.
///
/// Experimental A→B rows are `(h^A_t, h^B_t)`; B→A rows are
/// `(h^B_t, h^A_{t+1})`; a lag of `k` moves the target a further `k` turns.
pub fn build_family<'c>(
    corpus: &'c Corpus,
    pair: &ModelPair,
    direction: Direction,
    condition: PairCondition,
) -> Result<PairFamily<'c>> {
    condition.validate()?;
    let offset = direction.base_offset() + condition.lag();
    let mut interactions = Vec::new();
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    let mut warnings = Vec::new();
    let mut shape: Option<(usize, usize, usize, usize)> = None;
    let mut skipped_passive = 0usize;

    for it in corpus.for_pair(pair) {
        let (Some(src), Some(tgt)) = (source_trace(it, direction, condition), target_trace(it, direction, condition))
        else {
            skipped_passive += 1;
            continue;
        };
        let s = (src.layers(), src.dim(), tgt.layers(), tgt.dim());
        match shape {
            None => shape = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::Shape(format!(
                    "interaction {:?} has layer/dim shape {:?}, expected {:?}",
                    it.meta.interaction_id, s, prev
                )))
            }
            _ => {}
        }
        let turns = it.turns();
        if turns <= offset {
            continue;
        }
        let idx = interactions.len();
        interactions.push(it);
        for t in 0..(turns - offset) {
            rows.push(RowRef {
                interaction: idx,
                source_turn: t,
                target_turn: t + offset,
            });
            meta.push(SampleMeta {
                interaction_id: it.meta.interaction_id.clone(),
                source_turn: t,
                target_turn: t + offset,
                persona_pair_id: it.meta.persona_pair_id.clone(),
                relationship: it.meta.relationship,
                scenario_source: it.meta.scenario_source.clone(),
            });
        }
    }

    if skipped_passive > 0 {
        let msg = format!("{skipped_passive} interactions lack passive-reader traces for {condition}");
        if rows.is_empty() {
            return Err(Error::ConditionMismatch(msg));
        }
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let Some((source_layers, source_dim, target_layers, target_dim)) = shape else {
        return Err(Error::EmptyDataset(format!("no interactions for pair {pair}")));
    };
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{direction} {condition}: no interaction has more than {offset} turns"
        )));
    }
    Ok(PairFamily {
        pair: pair.clone(),
        direction,
        condition,
        interactions,
        rows,
        meta,
        source_layers,
        target_layers,
        source_dim,
        target_dim,
        warnings,
    })
}

/// Single layer-pair dataset over all rows.
pub fn build_pairs<T: Real>(corpus: &Corpus, pair: &ModelPair, spec: PairSpec) -> Result<PairDataset<T>> {
    let fam = build_family(corpus, pair, spec.direction, spec.condition)?;
    fam.dataset(spec.source_layer, spec.target_layer, None)
}

impl<'c> PairFamily<'c> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn source_layers(&self) -> usize {
        self.source_layers
    }

    pub fn target_layers(&self) -> usize {
        self.target_layers
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn gather<T: Real>(&self, layer: usize, rows: Option<&[usize]>, source: bool) -> Result<Array2<T>> {
        let (layers, dim) = if source {
            (self.source_layers, self.source_dim)
        } else {
            (self.target_layers, self.target_dim)
        };
        if layer >= layers {
            return Err(Error::invalid(
                if source { "source_layer" } else { "target_layer" },
                format!("{layer} out of range 0..{layers}"),
            ));
        }
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..self.rows.len()).collect();
                &all
            }
        };
        let mut out = Array2::<T>::zeros((rows.len(), dim));
        for (o, &r) in rows.iter().enumerate() {
            let row = &self.rows[r];
            let it = self.interactions[row.interaction];
            let (trace, turn) = if source {
                (source_trace(it, self.direction, self.condition), row.source_turn)
            } else {
                (target_trace(it, self.direction, self.condition), row.target_turn)
            };
            let v = trace.expect("row built from an available trace").vector(turn, layer);
            for (dst, &src) in out.row_mut(o).iter_mut().zip(v) {
                *dst = T::of(src as f64);
            }
        }
        Ok(out)
    }

    /// Source-layer matrix restricted to `rows` (all rows when `None`).
    pub fn source_matrix<T: Real>(&self, layer: usize, rows: Option<&[usize]>) -> Result<Array2<T>> {
        self.gather(layer, rows, true)
    }

    pub fn target_matrix<T: Real>(&self, layer: usize, rows: Option<&[usize]>) -> Result<Array2<T>> {
        self.gather(layer, rows, false)
    }

    pub fn dataset<T: Real>(&self, source_layer: usize, target_layer: usize, rows: Option<&[usize]>) -> Result<PairDataset<T>> {
        let x = self.source_matrix(source_layer, rows)?;
        let y = self.target_matrix(target_layer, rows)?;
        let meta = match rows {
            Some(r) => r.iter().map(|&i| self.meta[i].clone()).collect(),
            None => self.meta.clone(),
        };
        Ok(PairDataset {
            x,
            y,
            meta,
            spec: PairSpec {
                direction: self.direction,
                condition: self.condition,
                source_layer,
                target_layer,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    InteractionDisjoint,
    PersonaDisjoint,
}

impl SplitPolicy {
    fn group_of(self, m: &SampleMeta) -> &str {
        match self {
            SplitPolicy::InteractionDisjoint => &m.interaction_id,
            SplitPolicy::PersonaDisjoint => &m.persona_pair_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub policy: SplitPolicy,
    pub train_fraction: f64,
    pub seed: u64,
    pub sample_budget: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            policy: SplitPolicy::InteractionDisjoint,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
            sample_budget: DEFAULT_SAMPLE_BUDGET,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction", "must lie in (0, 1)"));
        }
        if self.sample_budget == 0 {
            return Err(Error::invalid("sample_budget", "must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Row indices (into the family or subset they were computed from).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_groups: Vec<String>,
    pub test_groups: Vec<String>,
}

/// Group-disjoint train/test split over `meta[rows]`.
///
/// Groups are shuffled with the plan's seed; the training side takes the
/// shuffled prefix whose row share is closest to the requested fraction,
/// ties going to the larger training side. Both sides keep at least one
/// group.
pub fn split(meta: &[SampleMeta], rows: &[usize], plan: &SplitPlan) -> Result<Split> {
    plan.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset("nothing to split".into()));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for &r in rows {
        *sizes.entry(plan.policy.group_of(&meta[r])).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(Error::TooFewGroups {
            required: 2,
            found: sizes.len(),
        });
    }
    let mut groups: Vec<&str> = sizes.keys().copied().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));

    let total = rows.len() as f64;
    let mut best = (1usize, f64::INFINITY);
    let mut acc = 0usize;
    for (k, g) in groups.iter().enumerate().take(groups.len() - 1) {
        acc += sizes[g];
        let err = (acc as f64 / total - plan.train_fraction).abs();
        if err <= best.1 + 1e-12 {
            best = (k + 1, err);
        }
    }
    let n_train = best.0;
    let train_set: BTreeSet<&str> = groups[..n_train].iter().copied().collect();
    let mut out = Split {
        train: Vec::new(),
        test: Vec::new(),
        train_groups: train_set.iter().map(|s| s.to_string()).collect(),
        test_groups: groups[n_train..].iter().map(|s| s.to_string()).collect(),
    };
    out.test_groups.sort();
    for &r in rows {
        if train_set.contains(plan.policy.group_of(&meta[r])) {
            out.train.push(r);
        } else {
            out.test.push(r);
        }
    }
    Ok(out)
}

/// Persisted form of a split, so independent runs can reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub plan: SplitPlan,
    pub train_group_ids: Vec<String>,
    pub test_group_ids: Vec<String>,
}

impl SplitFile {
    pub fn from_split(plan: SplitPlan, s: &Split) -> Self {
        Self {
            plan,
            train_group_ids: s.train_groups.clone(),
            test_group_ids: s.test_groups.clone(),
        }
    }

    /// Re-applies stored group assignments. Rows whose group is in neither
    /// list are dropped.
    pub fn apply(&self, meta: &[SampleMeta], rows: &[usize]) -> Split {
        let train: BTreeSet<&str> = self.train_group_ids.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.test_group_ids.iter().map(String::as_str).collect();
        let mut out = Split {
            train: Vec::new(),
            test: Vec::new(),
            train_groups: self.train_group_ids.clone(),
            test_groups: self.test_group_ids.clone(),
        };
        for &r in rows {
            let g = self.plan.policy.group_of(&meta[r]);
            if train.contains(g) {
                out.train.push(r);
            } else if test.contains(g) {
                out.test.push(r);
            }
        }
        out
    }
}

/// Caps the row count at `budget`.
///
/// Whole interactions are drawn in a seeded random order until the budget is
/// reached; the last one drawn is trimmed from its final turns. Returned
/// indices are sorted. With fewer rows than the budget this fails unless
/// `allow_insufficient` is set, in which case every row is kept.
pub fn enforce_budget(
    meta: &[SampleMeta],
    budget: usize,
    seed: u64,
    allow_insufficient: bool,
) -> Result<Vec<usize>> {
    if budget == 0 {
        return Err(Error::invalid("sample_budget", "must be positive"));
    }
    let n = meta.len();
    if n <= budget {
        if n < budget && !allow_insufficient {
            return Err(Error::InsufficientData {
                available: n,
                required: budget,
            });
        }
        return Ok((0..n).collect());
    }
    let mut by_interaction: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        by_interaction.entry(&m.interaction_id).or_default().push(i);
    }
    let mut ids: Vec<&str> = by_interaction.keys().copied().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = Vec::with_capacity(budget);
    for id in ids {
        let rows = &by_interaction[id];
        let room = budget - chosen.len();
        chosen.extend_from_slice(&rows[..rows.len().min(room)]);
        if chosen.len() == budget {
            break;
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repstore::{ManifestEntry, RepresentationTrace, TraceCondition, TraceRecord};

    pub(crate) fn corpus(n: usize, turns: usize, personas: &[&str]) -> Corpus {
        let mut recs = Vec::new();
        for i in 0..n {
            let id = format!("int{i:03}");
            for role in [AgentRole::A, AgentRole::B] {
                let values = (0..turns * 2 * 3)
                    .map(|k| (k as f32) + if role == AgentRole::A { 0.0 } else { 1000.0 } + i as f32 * 10_000.0)
                    .collect();
                let model = if role == AgentRole::A { "ma" } else { "mb" };
                recs.push(TraceRecord {
                    entry: ManifestEntry {
                        file: format!("{id}_{role}.repd"),
                        interaction_id: id.clone(),
                        scenario_id: "s".into(),
                        scenario_source: "social_iqa".into(),
                        relationship: "friend".into(),
                        persona_pair_id: personas[i % personas.len()].into(),
                        seed: 0,
                        model_a: "ma".into(),
                        model_b: "mb".into(),
                        turn_count: turns,
                        agent_role: role,
                        condition: TraceCondition::Interactive,
                    },
                    trace: RepresentationTrace::new(model, &id, role, TraceCondition::Interactive, turns, 2, 3, values)
                        .unwrap(),
                });
            }
        }
        Corpus::from_records("mem", recs).unwrap()
    }

    fn pair() -> ModelPair {
        ModelPair::new("ma", "mb")
    }

    #[test]
    fn row_counts_follow_offsets() {
        let c = corpus(1, 8, &["p"]);
        let count = |d, cond| build_family(&c, &pair(), d, cond).unwrap().len();
        assert_eq!(count(Direction::AToB, PairCondition::Experimental), 8);
        assert_eq!(count(Direction::AToB, PairCondition::Lag(3)), 5);
        assert_eq!(count(Direction::BToA, PairCondition::Experimental), 7);
        assert_eq!(count(Direction::BToA, PairCondition::Lag(2)), 5);
    }

    #[test]
    fn lag_beyond_turns_is_empty() {
        let c = corpus(2, 4, &["p"]);
        assert!(matches!(
            build_family(&c, &pair(), Direction::AToB, PairCondition::Lag(4)),
            Err(Error::EmptyDataset(_))
        ));
        assert!(build_family(&c, &pair(), Direction::AToB, PairCondition::Lag(0)).is_err());
    }

    #[test]
    fn passive_without_traces_is_condition_mismatch() {
        let c = corpus(2, 4, &["p"]);
        assert!(matches!(
            build_family(&c, &pair(), Direction::AToB, PairCondition::PassiveControl),
            Err(Error::ConditionMismatch(_))
        ));
    }

    #[test]
    fn rows_pair_the_right_turns() {
        let c = corpus(1, 4, &["p"]);
        let ds: PairDataset<f64> = build_pairs(
            &c,
            &pair(),
            PairSpec {
                direction: Direction::BToA,
                condition: PairCondition::Experimental,
                source_layer: 1,
                target_layer: 0,
            },
        )
        .unwrap();
        let it = c.get("int000").unwrap();
        for (r, m) in ds.meta.iter().enumerate() {
            assert_eq!(m.target_turn, m.source_turn + 1);
            assert_eq!(ds.x[[r, 0]], it.b.vector(m.source_turn, 1)[0] as f64);
            assert_eq!(ds.y[[r, 2]], it.a.vector(m.target_turn, 0)[2] as f64);
        }
    }

    #[test]
    fn interaction_split_ten_by_eight() {
        let c = corpus(10, 8, &["p"]);
        let fam = build_family(&c, &pair(), Direction::AToB, PairCondition::Experimental).unwrap();
        let rows: Vec<usize> = (0..fam.len()).collect();
        let s = split(fam.meta(), &rows, &SplitPlan::default()).unwrap();
        assert_eq!(s.train_groups.len(), 8);
        assert_eq!(s.test_groups.len(), 2);
        assert_eq!(s.train.len(), 64);
        assert!(s.train_groups.iter().all(|g| !s.test_groups.contains(g)));
    }

    #[test]
    fn persona_split_keeps_personas_whole() {
        let personas = ["p1", "p1", "p1", "p1", "p1", "p1", "p2", "p2", "p2", "p2"];
        let c = corpus(10, 4, &personas);
        let fam = build_family(&c, &pair(), Direction::AToB, PairCondition::Experimental).unwrap();
        let rows: Vec<usize> = (0..fam.len()).collect();
        let plan = SplitPlan {
            policy: SplitPolicy::PersonaDisjoint,
            ..SplitPlan::default()
        };
        let s = split(fam.meta(), &rows, &plan).unwrap();
        assert_eq!(s.train_groups.len(), 1);
        assert_eq!(s.test_groups.len(), 1);
        let side = |p: &str| s.train_groups.iter().any(|g| g == p);
        assert_ne!(side("p1"), side("p2"));
    }

    #[test]
    fn single_group_cannot_split() {
        let c = corpus(1, 4, &["p"]);
        let fam = build_family(&c, &pair(), Direction::AToB, PairCondition::Experimental).unwrap();
        let rows: Vec<usize> = (0..fam.len()).collect();
        assert!(matches!(
            split(fam.meta(), &rows, &SplitPlan::default()),
            Err(Error::TooFewGroups { found: 1, .. })
        ));
    }

    #[test]
    fn split_file_round_trip() {
        let c = corpus(10, 3, &["p"]);
        let fam = build_family(&c, &pair(), Direction::AToB, PairCondition::Experimental).unwrap();
        let rows: Vec<usize> = (0..fam.len()).collect();
        let plan = SplitPlan::default().with_seed(9);
        let s = split(fam.meta(), &rows, &plan).unwrap();
        let file = SplitFile::from_split(plan, &s);
        let text = serde_json::to_string(&file).unwrap();
        let back: SplitFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.apply(fam.meta(), &rows), s);
    }

    #[test]
    fn budget_cases() {
        let c = corpus(1000, 8, &["p"]);
        let fam = build_family(&c, &pair(), Direction::AToB, PairCondition::Experimental).unwrap();
        assert_eq!(fam.len(), 8000);
        let kept = enforce_budget(fam.meta(), 6500, 3, false).unwrap();
        assert_eq!(kept.len(), 6500);
        // at most one interaction is partially kept
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for &r in &kept {
            *per.entry(&fam.meta()[r].interaction_id).or_default() += 1;
        }
        assert!(per.values().filter(|&&n| n != 8).count() <= 1);
        // partial interaction keeps its leading turns
        for (id, &n) in &per {
            let turns: Vec<usize> = kept
                .iter()
                .filter(|&&r| fam.meta()[r].interaction_id == *id)
                .map(|&r| fam.meta()[r].source_turn)
                .collect();
            assert_eq!(turns, (0..n).collect::<Vec<_>>());
        }

        let sub: Vec<SampleMeta> = kept.iter().map(|&r| fam.meta()[r].clone()).collect();
        assert_eq!(enforce_budget(&sub, 6500, 3, false).unwrap(), (0..6500).collect::<Vec<_>>());

        let small = &fam.meta()[..5000];
        assert!(matches!(
            enforce_budget(small, 6500, 0, false),
            Err(Error::InsufficientData { available: 5000, required: 6500 })
        ));
        assert_eq!(enforce_budget(small, 6500, 0, true).unwrap().len(), 5000);
    }
}
