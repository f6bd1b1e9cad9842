//! Synthetic two-agent corpora with known coupling.
//!
//! Agent A's latent `z_t` and agent B's latent `u_t` are unit-variance
//! Gaussian vectors linked by a chain
//!
//! ```text
//! u_t     = sqrt(s)   M  z_t + sqrt(1 - s)   eps_t
//! z_{t+1} = sqrt(s_b) M' u_t + sqrt(1 - s_b) xi_t
//! ```
//!
//! with random orthogonal `M`, `M'`. Layer `l` of an agent observes its
//! latent through an orthogonal `Q_l` plus optional isotropic noise, so
//! every layer pair carries the same explained variance. A passive reader
//! sees `a z_t + sqrt(1 - a^2) zeta_t` in place of `z_t`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthonormal_columns;
use crate::pairsets::{Direction, PairCondition};
use crate::repstore::{
    write_manifest, write_trace, AgentRole, Corpus, ManifestEntry, Relationship, RepresentationTrace, TraceCondition,
    TraceRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSpec {
    /// Layers of agent A (and of B unless `layers_b` is set).
    pub layers: usize,
    pub layers_b: Option<usize>,
    pub dim: usize,
    pub turns: usize,
    pub interactions: usize,
    /// Signal fraction of the A -> B link.
    pub signal: f64,
    /// Signal fraction of the B -> A link; defaults to `signal`.
    pub backward_signal: Option<f64>,
    /// Observation noise variance added to every layer vector.
    pub noise: f64,
    pub markov_order: usize,
    /// Multiplier applied to both signal fractions per relationship label
    /// (result clamped to [0, 1]).
    pub relationship_multipliers: BTreeMap<String, f64>,
    /// Relationship labels assigned to interactions in rotation.
    pub relationships: Vec<String>,
    /// Scenario sources assigned in rotation.
    pub sources: Vec<String>,
    /// Number of distinct persona pairs; 0 gives every interaction its own.
    pub personas: usize,
    /// Passive-reader attenuation; `None` emits no passive traces.
    pub passive_attenuation: Option<f64>,
    pub model_a: String,
    pub model_b: String,
    pub seed: u64,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        Self {
            layers: 4,
            layers_b: None,
            dim: 16,
            turns: 8,
            interactions: 100,
            signal: 0.75,
            backward_signal: None,
            noise: 0.0,
            markov_order: 1,
            relationship_multipliers: BTreeMap::new(),
            relationships: Vec::new(),
            sources: Vec::new(),
            personas: 0,
            passive_attenuation: None,
            model_a: "synth-a".into(),
            model_b: "synth-b".into(),
            seed: 0,
        }
    }
}

fn unit_interval(field: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(field, format!("must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl CouplingSpec {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("layers", self.layers),
            ("dim", self.dim),
            ("turns", self.turns),
            ("interactions", self.interactions),
            ("markov_order", self.markov_order),
        ] {
            if v == 0 {
                return Err(Error::invalid(f, "must be positive"));
            }
        }
        if self.layers_b == Some(0) {
            return Err(Error::invalid("layers_b", "must be positive"));
        }
        unit_interval("signal", self.signal)?;
        if let Some(sb) = self.backward_signal {
            unit_interval("backward_signal", sb)?;
        }
        if let Some(a) = self.passive_attenuation {
            unit_interval("passive_attenuation", a)?;
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid("noise", format!("must be a finite variance >= 0, got {}", self.noise)));
        }
        for (k, m) in &self.relationship_multipliers {
            if !(*m >= 0.0) || !m.is_finite() {
                return Err(Error::invalid("relationship_multipliers", format!("{k}: {m} is not a finite value >= 0")));
            }
        }
        if self.model_a.is_empty() || self.model_b.is_empty() {
            return Err(Error::invalid("model", "model ids must be non-empty"));
        }
        Ok(())
    }

    pub fn layers_b(&self) -> usize {
        self.layers_b.unwrap_or(self.layers)
    }

    pub fn backward_signal(&self) -> f64 {
        self.backward_signal.unwrap_or(self.signal)
    }

    fn relationship(&self, index: usize) -> String {
        if self.relationships.is_empty() {
            "unknown".into()
        } else {
            self.relationships[index % self.relationships.len()].clone()
        }
    }

    fn multiplier(&self, label: &str) -> f64 {
        let norm = Relationship::normalize(label);
        self.relationship_multipliers
            .iter()
            .find(|(k, _)| Relationship::normalize(k) == norm)
            .map_or(1.0, |(_, m)| *m)
    }

    /// Forward and backward signal fractions of interaction `index`.
    pub fn signals(&self, index: usize) -> (f64, f64) {
        let m = self.multiplier(&self.relationship(index));
        ((self.signal * m).clamp(0.0, 1.0), (self.backward_signal() * m).clamp(0.0, 1.0))
    }

    pub fn interaction_id(&self, index: usize) -> String {
        format!("int{index:05}")
    }
}

struct Structure {
    m_fwd: Array2<f64>,
    m_bwd: Array2<f64>,
    q_a: Vec<Array2<f64>>,
    q_b: Vec<Array2<f64>>,
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Result<Array2<f64>> {
    let g = Array2::from_shape_simple_fn((d, d), || rng.sample::<f64, _>(StandardNormal));
    orthonormal_columns(g.view())
}

fn structure(spec: &CouplingSpec) -> Result<Structure> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let m_fwd = random_orthogonal(&mut rng, d)?;
    let m_bwd = random_orthogonal(&mut rng, d)?;
    let q_a = (0..spec.layers).map(|_| random_orthogonal(&mut rng, d)).collect::<Result<_>>()?;
    let q_b = (0..spec.layers_b()).map(|_| random_orthogonal(&mut rng, d)).collect::<Result<_>>()?;
    Ok(Structure { m_fwd, m_bwd, q_a, q_b })
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal))
}

/// Unit-variance mix of the last `order` vectors (only the newest for 1).
fn recent(history: &[Array1<f64>], order: usize) -> Array1<f64> {
    let take = order.min(history.len());
    let mut acc = history[history.len() - 1].clone();
    for h in history.iter().rev().skip(1).take(take - 1) {
        acc += h;
    }
    acc / (take as f64).sqrt()
}

fn observe(latents: &[Array1<f64>], q: &[Array2<f64>], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sd = noise.sqrt();
    let mut out = Vec::with_capacity(latents.len() * q.len() * latents.first().map_or(0, |l| l.len()));
    for z in latents {
        for ql in q {
            let v = ql.dot(z);
            for x in v.iter() {
                let e = if sd > 0.0 { sd * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                out.push((x + e) as f32);
            }
        }
    }
    out
}

fn attenuate(latents: &[Array1<f64>], a: f64, rng: &mut ChaCha8Rng) -> Vec<Array1<f64>> {
    let rest = (1.0 - a * a).max(0.0).sqrt();
    latents
        .iter()
        .map(|z| z * a + gaussian(rng, z.len()) * rest)
        .collect()
}

fn interaction_records(spec: &CouplingSpec, st: &Structure, index: usize) -> Result<Vec<TraceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let d = spec.dim;
    let (s, sb) = spec.signals(index);
    let (zs, us) = {
        let mut z: Vec<Array1<f64>> = vec![gaussian(&mut rng, d)];
        let mut u: Vec<Array1<f64>> = Vec::with_capacity(spec.turns);
        for t in 0..spec.turns {
            let drive = st.m_fwd.dot(&recent(&z, spec.markov_order));
            u.push(drive * s.sqrt() + gaussian(&mut rng, d) * (1.0 - s).sqrt());
            if t + 1 < spec.turns {
                let drive = st.m_bwd.dot(&recent(&u, spec.markov_order));
                z.push(drive * sb.sqrt() + gaussian(&mut rng, d) * (1.0 - sb).sqrt());
            }
        }
        (z, u)
    };

    let id = spec.interaction_id(index);
    let relationship = spec.relationship(index);
    let source = if spec.sources.is_empty() {
        String::new()
    } else {
        spec.sources[index % spec.sources.len()].clone()
    };
    let persona = if spec.personas == 0 { index } else { index % spec.personas };
    let entry = |role: AgentRole, cond: TraceCondition| ManifestEntry {
        file: format!(
            "{id}_{}_{}.repd",
            role,
            match cond {
                TraceCondition::Interactive => "interactive",
                TraceCondition::PassiveReader => "passive",
            }
        ),
        interaction_id: id.clone(),
        scenario_id: format!("scn{:04}", index),
        scenario_source: source.clone(),
        relationship: relationship.clone(),
        persona_pair_id: format!("pp{persona:04}"),
        seed: spec.seed as i64,
        model_a: spec.model_a.clone(),
        model_b: spec.model_b.clone(),
        turn_count: spec.turns,
        agent_role: role,
        condition: cond,
    };
    let make = |role: AgentRole, cond: TraceCondition, values: Vec<f32>| -> Result<TraceRecord> {
        let (model, layers) = match role {
            AgentRole::A => (&spec.model_a, spec.layers),
            AgentRole::B => (&spec.model_b, spec.layers_b()),
        };
        Ok(TraceRecord {
            entry: entry(role, cond),
            trace: RepresentationTrace::new(model.clone(), id.clone(), role, cond, spec.turns, layers, d, values)?,
        })
    };

    let mut out = vec![
        make(AgentRole::A, TraceCondition::Interactive, observe(&zs, &st.q_a, spec.noise, &mut rng))?,
        make(AgentRole::B, TraceCondition::Interactive, observe(&us, &st.q_b, spec.noise, &mut rng))?,
    ];
    if let Some(a) = spec.passive_attenuation {
        let pa = attenuate(&zs, a, &mut rng);
        let pb = attenuate(&us, a, &mut rng);
        out.push(make(AgentRole::A, TraceCondition::PassiveReader, observe(&pa, &st.q_a, spec.noise, &mut rng))?);
        out.push(make(AgentRole::B, TraceCondition::PassiveReader, observe(&pb, &st.q_b, spec.noise, &mut rng))?);
    }
    Ok(out)
}

/// All trace records of the corpus, in interaction order.
pub fn generate_records(spec: &CouplingSpec) -> Result<Vec<TraceRecord>> {
    spec.validate()?;
    let st = structure(spec)?;
    let per: Vec<Vec<TraceRecord>> = (0..spec.interactions)
        .into_par_iter()
        .map(|i| interaction_records(spec, &st, i))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// In-memory corpus; bit-reproducible for a given spec.
pub fn generate(spec: &CouplingSpec) -> Result<Corpus> {
    Corpus::from_records("<synthetic>", generate_records(spec)?)
}

/// Same corpus with passive-reader traces attenuated by `a`.
pub fn generate_passive_variant(spec: &CouplingSpec, a: f64) -> Result<Corpus> {
    let mut s = spec.clone();
    s.passive_attenuation = Some(a);
    generate(&s)
}

/// Writes REPD files and `manifest.json` into `dir` and returns the corpus
/// rooted there.
pub fn generate_to_dir(spec: &CouplingSpec, dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records = generate_records(spec)?;
    for r in &records {
        write_trace(&r.trace, dir.join(&r.entry.file))?;
    }
    let entries: Vec<ManifestEntry> = records.iter().map(|r| r.entry.clone()).collect();
    write_manifest(dir, &entries)?;
    Corpus::from_records(dir, records)
}

/// Population test R² of every grid cell under a linear map pooled over
/// all interactions (order-1 coupling only).
pub fn analytic_r2(spec: &CouplingSpec, direction: Direction, condition: PairCondition) -> Result<f64> {
    spec.validate()?;
    if spec.markov_order != 1 {
        return Err(Error::invalid("markov_order", "closed-form values exist for order 1 only"));
    }
    condition.validate()?;
    let mut coef = 0.0;
    for i in 0..spec.interactions {
        let (s, sb) = spec.signals(i);
        let (first, k) = match (direction, condition) {
            (Direction::AToB, PairCondition::Lag(k)) => (s, k),
            (Direction::BToA, PairCondition::Lag(k)) => (sb, k),
            (Direction::AToB, _) => (s, 0),
            (Direction::BToA, _) => (sb, 0),
        };
        let mut c = first.sqrt() * (s * sb).sqrt().powi(k as i32);
        if matches!(condition, PairCondition::PassiveControl | PairCondition::PassiveReversed) {
            let a = spec
                .passive_attenuation
                .ok_or_else(|| Error::invalid("passive_attenuation", "spec has no passive traces"))?;
            c *= a;
        }
        coef += c;
    }
    coef /= spec.interactions as f64;
    let var = 1.0 + spec.noise;
    Ok(coef * coef / (var * var))
}

/// Clamped symmetric SyncR² implied by [`analytic_r2`]; the grid is flat, so
/// the top-k variant does not matter.
pub fn analytic_syncr2(spec: &CouplingSpec, condition: PairCondition) -> Result<f64> {
    let f = analytic_r2(spec, Direction::AToB, condition)?;
    let b = analytic_r2(spec, Direction::BToA, condition)?;
    Ok(0.5 * (f.max(0.0) + b.max(0.0)))
}

pub fn read_spec(path: impl AsRef<Path>) -> Result<CouplingSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: CouplingSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}
