//! REPD representation dumps and the corpus manifest.
//!
//! A REPD file is
//!
//! ```text
//! 0..4     magic "REPD"
//! 4..8     format version, u32 LE (= 1)
//! 8..12    header length H, u32 LE
//! 12..12+H UTF-8 JSON header
//! ...      turns * layers * dim f32 LE, turn-major, then layer, then dim
//! ```
//!
//! A corpus is a directory with a `manifest.json` listing one entry per trace
//! file. Interactions are indexed by id in sorted order, so the manifest
//! order never affects downstream row order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const REPD_MAGIC: [u8; 4] = *b"REPD";
pub const REPD_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const PREAMBLE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    A,
    B,
}

impl AgentRole {
    pub fn partner(self) -> Self {
        match self {
            AgentRole::A => AgentRole::B,
            AgentRole::B => AgentRole::A,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::A => "A",
            AgentRole::B => "B",
        })
    }
}

/// Whether a trace was recorded from a generating agent or from a reader
/// that only consumed the same dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceCondition {
    Interactive,
    PassiveReader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relationship {
    Strangers,
    KnowByName,
    Acquaintance,
    Friend,
    Romantic,
    Family,
    Unknown,
}

impl Relationship {
    pub const ALL: [Relationship; 7] = [
        Relationship::Strangers,
        Relationship::KnowByName,
        Relationship::Acquaintance,
        Relationship::Friend,
        Relationship::Romantic,
        Relationship::Family,
        Relationship::Unknown,
    ];

    /// Maps free-form labels onto the closed set; anything unrecognised is
    /// `Unknown`.
    pub fn normalize(label: &str) -> Self {
        let key: String = label
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let key = key.trim_matches('_');
        match key {
            "stranger" | "strangers" => Relationship::Strangers,
            "know_by_name" | "know_by_names" | "knowbyname" => Relationship::KnowByName,
            "acquaintance" | "acquaintances" => Relationship::Acquaintance,
            "friend" | "friends" | "friendship" => Relationship::Friend,
            "romantic" | "romantic_relationship" | "romantic_relationships" | "couple" => {
                Relationship::Romantic
            }
            "family" | "family_member" | "family_members" => Relationship::Family,
            _ => Relationship::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relationship::Strangers => "strangers",
            Relationship::KnowByName => "know_by_name",
            Relationship::Acquaintance => "acquaintance",
            Relationship::Friend => "friend",
            Relationship::Romantic => "romantic",
            Relationship::Family => "family",
            Relationship::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Relationship {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One agent's final-prompt-token hidden states for one interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationTrace {
    pub model_id: String,
    pub interaction_id: String,
    pub agent_role: AgentRole,
    pub condition: TraceCondition,
    turns: usize,
    layers: usize,
    dim: usize,
    values: Vec<f32>,
}

impl RepresentationTrace {
    pub fn new(
        model_id: impl Into<String>,
        interaction_id: impl Into<String>,
        agent_role: AgentRole,
        condition: TraceCondition,
        turns: usize,
        layers: usize,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let trace = Self {
            model_id: model_id.into(),
            interaction_id: interaction_id.into(),
            agent_role,
            condition,
            turns,
            layers,
            dim,
            values,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.is_empty() {
            return Err(Error::invalid("model_id", "must not be empty"));
        }
        if self.interaction_id.is_empty() {
            return Err(Error::invalid("interaction_id", "must not be empty"));
        }
        for (name, v) in [("turns", self.turns), ("layers", self.layers), ("dim", self.dim)] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        let expected = self.turns * self.layers * self.dim;
        if self.values.len() != expected {
            return Err(Error::invalid(
                "values",
                format!("expected {} entries, found {}", expected, self.values.len()),
            ));
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            let (turn, layer, dim) = self.coords(pos);
            return Err(Error::NonFinite { turn, layer, dim });
        }
        Ok(())
    }

    fn coords(&self, flat: usize) -> (usize, usize, usize) {
        let per_turn = self.layers * self.dim;
        (flat / per_turn, (flat % per_turn) / self.dim, flat % self.dim)
    }

    pub fn turns(&self) -> usize {
        self.turns
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Hidden vector at `turn`, `layer` (both zero-based).
    pub fn vector(&self, turn: usize, layer: usize) -> &[f32] {
        let start = (turn * self.layers + layer) * self.dim;
        &self.values[start..start + self.dim]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&ReprHeader {
            model_id: self.model_id.clone(),
            interaction_id: self.interaction_id.clone(),
            agent_role: self.agent_role,
            condition: self.condition,
            turns: self.turns,
            layers: self.layers,
            dim: self.dim,
            dtype: "f32le".into(),
            layout: "turn-layer-dim".into(),
        })?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + self.values.len() * 4);
        out.extend_from_slice(&REPD_MAGIC);
        out.extend_from_slice(&REPD_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_container(bytes, REPD_MAGIC, REPD_VERSION)?;
        let h: ReprHeader =
            serde_json::from_slice(header).map_err(|e| Error::Header(e.to_string()))?;
        if h.dtype != "f32le" {
            return Err(Error::Header(format!("unsupported dtype {:?}", h.dtype)));
        }
        if h.layout != "turn-layer-dim" {
            return Err(Error::Header(format!("unsupported layout {:?}", h.layout)));
        }
        for (name, v) in [("turns", h.turns), ("layers", h.layers), ("dim", h.dim)] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        let count = h
            .turns
            .checked_mul(h.layers)
            .and_then(|v| v.checked_mul(h.dim))
            .ok_or_else(|| Error::Header("declared shape overflows".into()))?;
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::Header("declared shape overflows".into()))?;
        if payload.len() < expected {
            return Err(Error::Truncated {
                section: "payload",
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::TrailingBytes {
                extra: payload.len() - expected,
            });
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(
            h.model_id,
            h.interaction_id,
            h.agent_role,
            h.condition,
            h.turns,
            h.layers,
            h.dim,
            values,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReprHeader {
    model_id: String,
    interaction_id: String,
    agent_role: AgentRole,
    condition: TraceCondition,
    turns: usize,
    layers: usize,
    dim: usize,
    dtype: String,
    layout: String,
}

/// Splits a magic/version/header-length container into header and payload.
/// Shared with the fitted-map sidecar format.
pub(crate) fn split_container(bytes: &[u8], magic: [u8; 4], version: u32) -> Result<(&[u8], &[u8])> {
    if bytes.len() < PREAMBLE {
        if bytes.len() >= 4 && bytes[..4] != magic {
            return Err(Error::BadMagic {
                expected: magic,
                found: [bytes[0], bytes[1], bytes[2], bytes[3]],
            });
        }
        return Err(Error::Truncated {
            section: "preamble",
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let v = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if v != version {
        return Err(Error::VersionMismatch {
            expected: version,
            found: v,
        });
    }
    let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let rest = &bytes[PREAMBLE..];
    if rest.len() < hlen {
        return Err(Error::Truncated {
            section: "header",
            expected: hlen,
            found: rest.len(),
        });
    }
    Ok(rest.split_at(hlen))
}

pub fn write_trace(trace: &RepresentationTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = trace.to_bytes()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<RepresentationTrace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RepresentationTrace::from_bytes(&bytes)
}

/// One row of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub interaction_id: String,
    #[serde(default)]
    pub scenario_id: String,
    #[serde(default)]
    pub scenario_source: String,
    #[serde(default = "unknown_label")]
    pub relationship: String,
    #[serde(default)]
    pub persona_pair_id: String,
    pub seed: i64,
    pub model_a: String,
    pub model_b: String,
    pub turn_count: usize,
    pub agent_role: AgentRole,
    pub condition: TraceCondition,
}

fn unknown_label() -> String {
    "unknown".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InteractionMeta {
    pub interaction_id: String,
    pub scenario_id: String,
    pub scenario_source: String,
    pub relationship: Relationship,
    pub persona_pair_id: String,
    pub seed: i64,
    pub model_a: String,
    pub model_b: String,
    pub turn_count: usize,
}

impl InteractionMeta {
    fn from_entry(e: &ManifestEntry) -> Self {
        Self {
            interaction_id: e.interaction_id.clone(),
            scenario_id: e.scenario_id.clone(),
            scenario_source: e.scenario_source.clone(),
            relationship: Relationship::normalize(&e.relationship),
            persona_pair_id: e.persona_pair_id.clone(),
            seed: e.seed,
            model_a: e.model_a.clone(),
            model_b: e.model_b.clone(),
            turn_count: e.turn_count,
        }
    }

    pub fn model_pair(&self) -> ModelPair {
        ModelPair::new(&self.model_a, &self.model_b)
    }
}

/// Ordered (agent A model, agent B model) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelPair {
    pub model_a: String,
    pub model_b: String,
}

impl ModelPair {
    pub fn new(a: &str, b: &str) -> Self {
        Self {
            model_a: a.to_string(),
            model_b: b.to_string(),
        }
    }

    /// Parses `modelA:modelB`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok(Self::new(a, b)),
            _ => Err(Error::invalid("pair", format!("expected modelA:modelB, got {s:?}"))),
        }
    }
}

impl fmt::Display for ModelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.model_a, self.model_b)
    }
}

/// Both agents' traces for one interaction, plus passive-reader traces
/// when they were recorded.
#[derive(Debug, Clone)]
pub struct Interaction {
    pub meta: InteractionMeta,
    pub a: Arc<RepresentationTrace>,
    pub b: Arc<RepresentationTrace>,
    pub passive_a: Option<Arc<RepresentationTrace>>,
    pub passive_b: Option<Arc<RepresentationTrace>>,
}

impl Interaction {
    pub fn trace(&self, role: AgentRole) -> &RepresentationTrace {
        match role {
            AgentRole::A => &self.a,
            AgentRole::B => &self.b,
        }
    }

    pub fn passive(&self, role: AgentRole) -> Option<&RepresentationTrace> {
        match role {
            AgentRole::A => self.passive_a.as_deref(),
            AgentRole::B => self.passive_b.as_deref(),
        }
    }

    pub fn turns(&self) -> usize {
        self.a.turns()
    }
}

/// Validated, immutable collection of interactions.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Vec<ManifestEntry>,
    interactions: BTreeMap<String, Interaction>,
    warnings: Vec<String>,
}

/// A trace plus the manifest row that introduced it.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub entry: ManifestEntry,
    pub trace: RepresentationTrace,
}

impl Corpus {
    /// Indexes already-loaded traces. Interactions without both interactive
    /// traces are dropped and reported through [`Corpus::warnings`].
    pub fn from_records(root: impl Into<PathBuf>, records: Vec<TraceRecord>) -> Result<Self> {
        let mut manifest = Vec::with_capacity(records.len());
        let mut slots: BTreeMap<String, Vec<TraceRecord>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for rec in records {
            let e = &rec.entry;
            if !seen.insert((e.interaction_id.clone(), e.agent_role, e.condition)) {
                return Err(Error::DuplicateInteraction(e.interaction_id.clone()));
            }
            check_entry_matches(&rec)?;
            manifest.push(rec.entry.clone());
            slots.entry(e.interaction_id.clone()).or_default().push(rec);
        }

        let mut interactions = BTreeMap::new();
        let mut warnings = Vec::new();
        for (id, recs) in slots {
            let first = &recs[0].entry;
            for r in &recs[1..] {
                let e = &r.entry;
                if e.seed != first.seed
                    || e.model_a != first.model_a
                    || e.model_b != first.model_b
                    || e.turn_count != first.turn_count
                {
                    return Err(Error::Manifest(format!(
                        "entries of interaction {id:?} disagree on seed, models or turn_count"
                    )));
                }
            }
            let meta = InteractionMeta::from_entry(first);
            let mut a = None;
            let mut b = None;
            let mut pa = None;
            let mut pb = None;
            for r in recs {
                let slot = match (r.entry.agent_role, r.entry.condition) {
                    (AgentRole::A, TraceCondition::Interactive) => &mut a,
                    (AgentRole::B, TraceCondition::Interactive) => &mut b,
                    (AgentRole::A, TraceCondition::PassiveReader) => &mut pa,
                    (AgentRole::B, TraceCondition::PassiveReader) => &mut pb,
                };
                *slot = Some(Arc::new(r.trace));
            }
            let (Some(a), Some(b)) = (a, b) else {
                let msg = format!("interaction {id:?} is missing a partner trace and was excluded");
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            };
            for t in [Some(&a), Some(&b), pa.as_ref(), pb.as_ref()].into_iter().flatten() {
                if t.turns() != meta.turn_count {
                    return Err(Error::Manifest(format!(
                        "interaction {id:?}: trace has {} turns, manifest says {}",
                        t.turns(),
                        meta.turn_count
                    )));
                }
            }
            for (role, p) in [(AgentRole::A, &pa), (AgentRole::B, &pb)] {
                if let Some(p) = p {
                    let own = if role == AgentRole::A { &a } else { &b };
                    if p.layers() != own.layers() || p.dim() != own.dim() {
                        return Err(Error::Manifest(format!(
                            "interaction {id:?}: passive trace of {role} has a different shape"
                        )));
                    }
                }
            }
            interactions.insert(
                id,
                Interaction {
                    meta,
                    a,
                    b,
                    passive_a: pa,
                    passive_b: pb,
                },
            );
        }
        Ok(Self {
            root: root.into(),
            manifest,
            interactions,
            warnings,
        })
    }

    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.interactions.values()
    }

    pub fn get(&self, id: &str) -> Option<&Interaction> {
        self.interactions.get(id)
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Distinct model pairs, sorted.
    pub fn model_pairs(&self) -> Vec<ModelPair> {
        let set: BTreeSet<ModelPair> = self.interactions().map(|i| i.meta.model_pair()).collect();
        set.into_iter().collect()
    }

    /// Interactions of one model pair, in id order.
    pub fn for_pair<'a>(&'a self, pair: &ModelPair) -> impl Iterator<Item = &'a Interaction> + 'a {
        let pair = pair.clone();
        self.interactions()
            .filter(move |i| i.meta.model_a == pair.model_a && i.meta.model_b == pair.model_b)
    }

    /// Resolves the pair to analyse: the given one, or the only one present.
    pub fn resolve_pair(&self, pair: Option<&ModelPair>) -> Result<ModelPair> {
        let pairs = self.model_pairs();
        match pair {
            Some(p) if pairs.contains(p) => Ok(p.clone()),
            Some(p) => Err(Error::invalid("pair", format!("{p} not present in corpus"))),
            None if pairs.len() == 1 => Ok(pairs[0].clone()),
            None => Err(Error::invalid(
                "pair",
                format!("corpus holds {} model pairs; choose one", pairs.len()),
            )),
        }
    }

    /// SHA-256 over the manifest and every trace, in index order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut entries = self.manifest.clone();
        entries.sort_by(|x, y| {
            (&x.interaction_id, x.agent_role, x.condition).cmp(&(&y.interaction_id, y.agent_role, y.condition))
        });
        h.update(serde_json::to_vec(&entries).unwrap_or_default());
        for i in self.interactions() {
            for t in [Some(&i.a), Some(&i.b), i.passive_a.as_ref(), i.passive_b.as_ref()]
                .into_iter()
                .flatten()
            {
                for v in t.values() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

fn check_entry_matches(rec: &TraceRecord) -> Result<()> {
    let (e, t) = (&rec.entry, &rec.trace);
    if e.interaction_id != t.interaction_id {
        return Err(Error::Manifest(format!(
            "{}: header interaction_id {:?} != manifest {:?}",
            e.file, t.interaction_id, e.interaction_id
        )));
    }
    if e.agent_role != t.agent_role || e.condition != t.condition {
        return Err(Error::Manifest(format!(
            "{}: header role/condition disagree with manifest",
            e.file
        )));
    }
    let expected_model = match e.agent_role {
        AgentRole::A => &e.model_a,
        AgentRole::B => &e.model_b,
    };
    if &t.model_id != expected_model {
        return Err(Error::Manifest(format!(
            "{}: header model {:?} != manifest model {:?}",
            e.file, t.model_id, expected_model
        )));
    }
    Ok(())
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = root.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

pub fn write_manifest(root: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = root.as_ref().join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(entries)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads `root/manifest.json` and every trace it lists.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus> {
    let root = root.as_ref();
    let manifest = read_manifest(root)?;
    let mut records = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let trace = read_trace(root.join(&entry.file))?;
        records.push(TraceRecord { entry, trace });
    }
    Corpus::from_records(root, records)
}
