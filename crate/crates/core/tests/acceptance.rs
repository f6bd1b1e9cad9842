//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use syncr2_core::decoding::{
    assemble, fit_decoder, run_decode, softmax_rows, AffectSidecar, AffectTurn, Alignment, DecodeConfig, DistKind,
};
use syncr2_core::pairsets::{build_family, enforce_budget, Direction, PairCondition, SplitPlan};
use syncr2_core::regression::{fit_ridge, fit_ridge_family, r2_uniform, Predictor};
use syncr2_core::repstore::{AgentRole, Corpus, ModelPair, RepresentationTrace, TraceCondition};
use syncr2_core::report::to_json;
use syncr2_core::stats::{partial_correlation, pearson, t_two_sided_p};
use syncr2_core::synchrony::{
    run_controls, score_condition, syncr2_directional, syncr2_symmetric, PipelineConfig, SynchronyHeatmap, Variant,
};
use syncr2_core::synthlab::{analytic_r2, analytic_syncr2, generate, generate_passive_variant, CouplingSpec};
use syncr2_core::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

// ---------------------------------------------------------------- ridge

/// Minimises ||Y - X W - 1 b||^2 + lambda ||W||^2 by Nesterov-accelerated
/// gradient descent with adaptive restart.
fn gd_ridge(x: &Array2<f64>, y: &Array2<f64>, lambda: f64) -> (Array2<f64>, Array1<f64>) {
    let (n, d) = x.dim();
    let mut xa = Array2::ones((n, d + 1));
    xa.slice_mut(s![.., ..d]).assign(x);
    let gram = xa.t().dot(&xa);
    let xty = xa.t().dot(y);
    let mut pen = Array2::<f64>::zeros((d + 1, d + 1));
    for i in 0..d {
        pen[[i, i]] = lambda;
    }
    let h = &gram + &pen;
    // largest eigenvalue by power iteration
    let mut v = Array1::from_elem(d + 1, 1.0);
    let mut l = 0.0;
    for _ in 0..500 {
        let hv = h.dot(&v);
        l = hv.dot(&hv).sqrt();
        v = hv / l;
    }
    let step = 1.0 / (l * 1.01);
    let grad = |theta: &Array2<f64>| h.dot(theta) - &xty;
    let mut theta = Array2::<f64>::zeros((d + 1, y.ncols()));
    let mut prev = theta.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let look = &theta + &((&theta - &prev) * momentum);
        let g = grad(&look);
        let next = &look - &(&g * step);
        // restart when the momentum direction opposes the gradient
        if (&g * &(&next - &theta)).sum() > 0.0 {
            t = 1.0;
        } else {
            t = t_next;
        }
        prev = std::mem::replace(&mut theta, next);
        let gn = grad(&theta).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gn < 1e-11 {
            break;
        }
    }
    let w = theta.slice(s![..d, ..]).to_owned();
    let b = theta.row(d).to_owned();
    (w, b)
}

fn criterion_ridge() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let lambda = 0.1;
    let (mut worst_w, mut worst_res) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(20..=200);
        let ds = rng.random_range(2..=64);
        let dt = rng.random_range(1..=32);
        let x = gaussian(&mut rng, n, ds) + rng.random_range(-2.0..2.0);
        let w_true = gaussian(&mut rng, ds, dt);
        let y = x.dot(&w_true) + gaussian(&mut rng, n, dt) * 0.5 + 1.5;
        let map = fit_ridge(x.view(), y.view(), lambda).unwrap();
        let (w_gd, b_gd) = gd_ridge(&x, &y, lambda);
        worst_w = worst_w
            .max(max_abs_diff(map.weights.view(), w_gd.view()))
            .max(max_abs_diff(map.intercept.view().insert_axis(Axis(0)), b_gd.view().insert_axis(Axis(0))));
        // (Xc'Xc + lambda I) W - Xc'Yc
        let xc = &x - &x.mean_axis(Axis(0)).unwrap();
        let yc = &y - &y.mean_axis(Axis(0)).unwrap();
        let lhs = xc.t().dot(&xc).dot(&map.weights) + &map.weights * lambda;
        let rhs = xc.t().dot(&yc);
        worst_res = worst_res.max(max_abs_diff(lhs.view(), rhs.view()));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_w < 1e-6 && worst_res < 1e-8 && secs < 30.0,
        format!("max |closed form - GD| = {worst_w:.2e}, normal-equation residual = {worst_res:.2e}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- R²

fn criterion_r2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mean_scores = Vec::new();
    let mut perfect_scores = Vec::new();
    for _ in 0..20 {
        let n = rng.random_range(2..300);
        let d = rng.random_range(1..20);
        let y = gaussian(&mut rng, n, d) * rng.random_range(0.01..100.0) + rng.random_range(-50.0..50.0);
        let mut mean_pred = Array2::zeros((n, d));
        for j in 0..d {
            let m = y.column(j).iter().fold(0.0, |a, &v| a + v) / n as f64;
            mean_pred.column_mut(j).fill(m);
        }
        mean_scores.push(r2_uniform(y.view(), mean_pred.view()).unwrap());
        perfect_scores.push(r2_uniform(y.view(), y.view()).unwrap());
    }
    let hand: f64 = r2_uniform(
        Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap().view(),
        Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 5.0]).unwrap().view(),
    )
    .unwrap();
    let pass = mean_scores.iter().all(|&v| v == 0.0) && perfect_scores.iter().all(|&v| v == 1.0) && (hand - 0.8).abs() <= 1e-12;
    outcome(
        pass,
        format!(
            "mean predictor exactly 0: {}, perfect exactly 1: {}, hand case = {hand:.15}",
            mean_scores.iter().all(|&v| v == 0.0),
            perfect_scores.iter().all(|&v| v == 1.0)
        ),
    )
}

// ---------------------------------------------------------------- factorisation reuse

fn criterion_family() -> Outcome {
    const L: usize = 32;
    const D: usize = 256;
    const N: usize = 6500;
    let lambda = 0.1;
    let source = |l: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + l as u64);
        gaussian(&mut rng, N, D)
    };
    let targets: Vec<Array2<f64>> = (0..L)
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(4000 + m as u64);
            gaussian(&mut rng, N, D)
        })
        .collect();

    let start = Instant::now();
    let mut family = Vec::with_capacity(L);
    for l in 0..L {
        let x = source(l);
        family.push(fit_ridge_family(x.view(), targets.iter().map(|t| t.view()), lambda).unwrap());
    }
    let grid_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut worst = 0.0f64;
    for (l, maps) in family.iter().enumerate() {
        let x = source(l);
        for (m, fam) in maps.iter().enumerate() {
            let single = fit_ridge(x.view(), targets[m].view(), lambda).unwrap();
            let scale = single.weights.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            let dev = max_abs_diff(fam.weights.view(), single.weights.view()) / scale;
            let bscale = single.intercept.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            let bdev = fam
                .intercept
                .iter()
                .zip(single.intercept.iter())
                .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()))
                / bscale;
            worst = worst.max(dev).max(bdev);
        }
    }
    let single_secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && grid_secs < 120.0,
        format!(
            "max relative deviation = {worst:.2e}; family grid {grid_secs:.1} s on {} thread(s) (per-target fits {single_secs:.1} s)",
            rayon::current_num_threads()
        ),
    )
}

// ---------------------------------------------------------------- synthetic ground truth

fn truth_spec(signal: f64) -> CouplingSpec {
    CouplingSpec {
        layers: 6,
        dim: 16,
        turns: 8,
        interactions: 1000,
        signal,
        seed: 11,
        ..CouplingSpec::default()
    }
}

fn criterion_truth(heatmaps: &mut Vec<SynchronyHeatmap<f64>>) -> Outcome {
    let seeds = [0u64, 1, 2];
    let cfg = PipelineConfig::default();
    let variant = Variant::default();
    let spec = truth_spec(0.75);
    let corpus = generate(&spec).unwrap();
    let pair = ModelPair::new(&spec.model_a, &spec.model_b);
    let run = score_condition::<f64>(&corpus, &pair, PairCondition::Experimental, &cfg, &seeds, variant).unwrap();
    let best: Vec<f64> = run
        .forward
        .iter()
        .chain(&run.backward)
        .map(|h| h.grid.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
        .collect();
    let best_mean = best.iter().sum::<f64>() / best.len() as f64;
    let target = analytic_syncr2(&spec, PairCondition::Experimental).unwrap();
    heatmaps.extend(run.forward.iter().chain(&run.backward).cloned());

    let null = truth_spec(0.0);
    let null_corpus = generate(&null).unwrap();
    let null_run = score_condition::<f64>(&null_corpus, &pair, PairCondition::Experimental, &cfg, &seeds, variant).unwrap();
    heatmaps.extend(null_run.forward.iter().chain(&null_run.backward).cloned());

    let pass = (best_mean - 0.75).abs() <= 0.05
        && best.iter().all(|b| (b - 0.75).abs() <= 0.05)
        && (run.score.symmetric - target).abs() <= 0.05
        && null_run.score.symmetric < 0.02;
    outcome(
        pass,
        format!(
            "s=0.75: best-cell R2 = {best_mean:.4} (per heatmap {:.4}..{:.4}), SyncR2 = {:.4} +- {:.4} vs analytic {target:.4}; s=0: SyncR2 = {:.4}",
            best.iter().cloned().fold(f64::INFINITY, f64::min),
            best.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            run.score.symmetric,
            run.score.standard_error,
            null_run.score.symmetric
        ),
    )
}

// ---------------------------------------------------------------- controls

/// Tolerance subtracted from the analytic lag gap to obtain the planted margin.
const MARGIN_TOLERANCE: f64 = 0.05;

fn criterion_controls(heatmaps: &mut Vec<SynchronyHeatmap<f64>>) -> Outcome {
    let spec = CouplingSpec {
        layers: 4,
        dim: 16,
        turns: 16,
        interactions: 600,
        signal: 0.75,
        seed: 23,
        ..CouplingSpec::default()
    };
    let seeds = [0u64, 1, 2];
    let cfg = PipelineConfig::default();
    let corpus = generate_passive_variant(&spec, 0.0).unwrap();
    let pair = ModelPair::new(&spec.model_a, &spec.model_b);
    let report = run_controls(&corpus, &pair, &[1, 2, 3, 4], &cfg, &seeds, Variant::default()).unwrap();
    let exp = report.experimental.symmetric;
    let exp_analytic = analytic_syncr2(&spec, PairCondition::Experimental).unwrap();
    let mut pass = true;
    let mut parts = vec![format!("lag0 = {exp:.4}")];
    for (k, s) in &report.lags {
        let margin = exp_analytic - analytic_syncr2(&spec, PairCondition::Lag(*k)).unwrap() - MARGIN_TOLERANCE;
        let gap = exp - s.symmetric;
        pass &= gap >= margin;
        parts.push(format!("lag{k} = {:.4} (gap {gap:.3} >= margin {margin:.3})", s.symmetric));
    }
    let passive = report.passive.as_ref().map(|p| p.symmetric);
    pass &= passive.is_some_and(|p| p < 0.02);
    parts.push(format!("passive(a=0) = {:.4}", passive.unwrap_or(f64::NAN)));

    for k in [1usize, 4] {
        let run = score_condition::<f64>(&corpus, &pair, PairCondition::Lag(k), &cfg, &[0], Variant::default()).unwrap();
        heatmaps.extend(run.forward.into_iter().chain(run.backward));
    }
    outcome(pass, parts.join(", "))
}

// ---------------------------------------------------------------- variant algebra

fn criterion_variants(heatmaps: &mut Vec<SynchronyHeatmap<f64>>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for i in 0..200 {
        let rows = rng.random_range(1..12);
        let cols = rng.random_range(1..12);
        let grid = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.0));
        heatmaps.push(SynchronyHeatmap {
            pair: ModelPair::new("r", "r"),
            direction: Direction::AToB,
            condition: PairCondition::Experimental,
            seed: i,
            grid,
            n_train: 0,
            n_test: 0,
        });
    }
    let tol = 1e-12;
    let mut violations = 0usize;
    for h in heatmaps.iter() {
        let cols = h.grid.ncols();
        let score = |k, clamp| syncr2_directional(h.grid.view(), Variant { k, clamp }).unwrap();
        for clamp in [true, false] {
            let top1 = score(1, clamp);
            let topl = score(cols, clamp);
            for k in 1..=cols {
                let v = score(k, clamp);
                if v > top1 + tol || v < topl - tol {
                    violations += 1;
                }
            }
        }
        for k in 1..=cols {
            let c = score(k, true);
            let u = score(k, false);
            if c < u - tol || !(0.0..=1.0).contains(&c) {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{} heatmaps checked, {violations} violations", heatmaps.len()),
    )
}

// ---------------------------------------------------------------- statistics

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = Array2::zeros((n, 2 * n));
    m.slice_mut(s![.., ..n]).assign(a);
    for i in 0..n {
        m[[i, n + i]] = 1.0;
    }
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
        if p != c {
            for k in 0..2 * n {
                m.swap([c, k], [p, k]);
            }
        }
        let piv = m[[c, c]];
        for k in 0..2 * n {
            m[[c, k]] /= piv;
        }
        for i in 0..n {
            if i != c {
                let f = m[[i, c]];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[[i, k]] -= f * m[[c, k]];
                    }
                }
            }
        }
    }
    m.slice(s![.., n..]).to_owned()
}

/// Partial correlation of the first two columns given the rest, from the
/// inverse of the correlation matrix.
fn oracle_partial(cols: &[Vec<f64>]) -> f64 {
    let p = cols.len();
    let mut r = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            r[[i, j]] = if i == j { 1.0 } else { oracle_pearson(&cols[i], &cols[j]) };
        }
    }
    let prec = invert(&r);
    -prec[[0, 1]] / (prec[[0, 0]] * prec[[1, 1]]).sqrt()
}

/// Two-sided Student-t tail by quadrature: with u = sqrt(df) tan(theta) the
/// density is proportional to cos(theta)^(df-1) on (-pi/2, pi/2).
fn oracle_t_p(t: f64, df: f64) -> f64 {
    let f = |th: f64| th.cos().powf(df - 1.0);
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    let theta = (t.abs() / df.sqrt()).atan();
    let tail = simpson(theta, half, 200_000);
    let total = simpson(0.0, half, 200_000);
    tail / total
}

fn criterion_stats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut worst_r, mut worst_partial) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(10..60);
        let k = rng.random_range(1..4);
        let z = gaussian(&mut rng, n, k);
        let x: Array1<f64> = z.sum_axis(Axis(1)) * 0.7 + gaussian(&mut rng, n, 1).column(0).to_owned();
        let y: Array1<f64> = z.column(0).to_owned() * -0.4 + &x * 0.3 + gaussian(&mut rng, n, 1).column(0).to_owned();
        let r = pearson(x.view(), y.view()).unwrap().r;
        worst_r = worst_r.max((r - oracle_pearson(x.as_slice().unwrap(), y.as_slice().unwrap())).abs());
        let names: Vec<String> = (0..k).map(|i| format!("z{i}")).collect();
        let pr = partial_correlation(x.view(), y.view(), z.view(), &names).unwrap().r;
        let mut cols = vec![x.to_vec(), y.to_vec()];
        cols.extend(z.columns().into_iter().map(|c| c.to_vec()));
        worst_partial = worst_partial.max((pr - oracle_partial(&cols)).abs());
    }

    let n = 5000;
    let c = gaussian(&mut rng, n, 1);
    let x = (&c * 2.0 + gaussian(&mut rng, n, 1) * 0.3).column(0).to_owned();
    let y = (&c * -1.5 + gaussian(&mut rng, n, 1) * 0.3).column(0).to_owned();
    let plain = pearson(x.view(), y.view()).unwrap().r;
    let planted = partial_correlation(x.view(), y.view(), c.view(), &["ifeval".into()]).unwrap().r;

    let mut worst_p = 0.0f64;
    for df in 1..=50 {
        for &t in &[0.05, 0.3, 1.0, 1.7, 2.5, 4.0, 8.0, 25.0] {
            let p = t_two_sided_p(t, df as f64).unwrap();
            worst_p = worst_p.max((p - oracle_t_p(t, df as f64)).abs());
        }
    }
    outcome(
        worst_r < 1e-10 && worst_partial < 1e-10 && planted.abs() < 0.05 && worst_p < 1e-8,
        format!(
            "pearson dev {worst_r:.1e}, partial dev {worst_partial:.1e}, planted confound r {plain:.3} -> partial {planted:.4}, p-value dev {worst_p:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- decoding

fn affect_for(corpus: &Corpus, layer: usize, a: &Array2<f64>, c: &Array1<f64>, null_seed: Option<u64>) -> BTreeMap<String, AffectSidecar> {
    let mut rng = null_seed.map(ChaCha8Rng::seed_from_u64);
    let mut out = BTreeMap::new();
    for inter in corpus.interactions() {
        let mut turns = Vec::new();
        for role in [AgentRole::A, AgentRole::B] {
            let trace = inter.trace(role);
            for t in 0..trace.turns() {
                let h: Array1<f64> = match rng.as_mut() {
                    Some(r) => Array1::from_shape_simple_fn(trace.dim(), || r.sample(StandardNormal)),
                    None => trace.vector(t, layer).iter().map(|&v| v as f64).collect(),
                };
                let logits = h.dot(a) + c;
                turns.push(AffectTurn {
                    turn: t,
                    agent_role: role,
                    emotion_logits: logits.to_vec(),
                    action_logits: vec![0.0; 5],
                });
            }
        }
        out.insert(
            inter.meta.interaction_id.clone(),
            AffectSidecar {
                interaction_id: inter.meta.interaction_id.clone(),
                turns,
            },
        );
    }
    out
}

fn criterion_decoding() -> Outcome {
    let spec = CouplingSpec {
        layers: 2,
        dim: 16,
        turns: 8,
        interactions: 300,
        seed: 31,
        ..CouplingSpec::default()
    };
    let corpus = generate(&spec).unwrap();
    let pair = ModelPair::new(&spec.model_a, &spec.model_b);
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let a = gaussian(&mut rng, 16, 8) * 0.35;
    let c = gaussian(&mut rng, 1, 8).row(0).to_owned() * 0.5;
    let cfg = DecodeConfig {
        kind: DistKind::Emotion,
        alignment: Alignment::SelfCurrent,
        layer: Some(1),
        ..DecodeConfig::default()
    };
    let seeds = [0u64, 1, 2];
    let planted = run_decode(&corpus, &affect_for(&corpus, 1, &a, &c, None), &pair, &cfg, &seeds).unwrap();
    let null = run_decode(&corpus, &affect_for(&corpus, 1, &a, &c, Some(909)), &pair, &cfg, &seeds).unwrap();

    let affect = affect_for(&corpus, 1, &a, &c, None);
    let ds = assemble::<f64>(&corpus, &affect, &pair, DistKind::Emotion, Alignment::SelfCurrent, 1, &[AgentRole::A, AgentRole::B]).unwrap();
    let dec = fit_decoder(ds.x.view(), ds.p.view(), 0.1).unwrap();
    let mut probe = ds.x.clone();
    probe.append(Axis(0), (&ds.x.slice(s![..50, ..]) * 1e3).view()).unwrap();
    probe.append(Axis(0), (&ds.x.slice(s![..50, ..]) * -1e6).view()).unwrap();
    let pred = dec.predict(probe.view()).unwrap();
    let worst_sum = pred.rows().into_iter().fold(0.0f64, |m, r| m.max((r.sum() - 1.0).abs()));
    let nonneg = pred.iter().all(|&v| v >= 0.0);

    let reduction = 1.0 - planted.mean_test_kl / planted.baseline_kl;
    let pass = reduction >= 0.5 && null.mean_test_kl >= null.baseline_kl - 0.02 && worst_sum <= 1e-6 && nonneg;
    outcome(
        pass,
        format!(
            "planted: KL {:.4} vs baseline {:.4} ({:.0}% lower); null: KL {:.4} vs baseline {:.4}; max |sum - 1| = {worst_sum:.1e}",
            planted.mean_test_kl,
            planted.baseline_kl,
            100.0 * reduction,
            null.mean_test_kl,
            null.baseline_kl
        ),
    )
}

// ---------------------------------------------------------------- determinism and formats

fn criterion_determinism() -> Outcome {
    let mut failures = Vec::new();
    let spec = CouplingSpec {
        layers: 3,
        dim: 8,
        turns: 6,
        interactions: 60,
        seed: 5,
        passive_attenuation: Some(0.5),
        ..CouplingSpec::default()
    };
    let cfg = PipelineConfig {
        allow_insufficient: true,
        ..PipelineConfig::default()
    };
    let pair = ModelPair::new(&spec.model_a, &spec.model_b);
    let json = || {
        let corpus = generate(&spec).unwrap();
        let report = run_controls(&corpus, &pair, &[1, 2], &cfg, &[0, 1, 2], Variant::default()).unwrap();
        (to_json(&report).unwrap(), corpus.content_hash())
    };
    let (a, ha) = json();
    let (b, hb) = json();
    if a != b || ha != hb {
        failures.push("controls JSON differs between runs".to_string());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let (t, l, d) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..9));
        let values: Vec<f32> = (0..t * l * d).map(|_| rng.random_range(-1e6f32..1e6f32)).collect();
        let tr = RepresentationTrace::new("m", "i", AgentRole::B, TraceCondition::PassiveReader, t, l, d, values).unwrap();
        let bytes = tr.to_bytes().unwrap();
        let back = RepresentationTrace::from_bytes(&bytes).unwrap();
        let same_bits = back.values().iter().zip(tr.values()).all(|(x, y)| x.to_bits() == y.to_bits());
        if back != tr || !same_bits || back.to_bytes().unwrap() != bytes {
            failures.push("REPD round trip is not bitwise".into());
        }
    }

    let base = RepresentationTrace::new("m", "i", AgentRole::A, TraceCondition::Interactive, 2, 2, 2, vec![0.5; 8])
        .unwrap()
        .to_bytes()
        .unwrap();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(format!("{name} did not raise its designated error"));
        }
    };
    let mut bad = base.clone();
    bad[0] = b'X';
    expect("bad magic", matches!(RepresentationTrace::from_bytes(&bad), Err(Error::BadMagic { .. })));
    let mut bad = base.clone();
    bad[4] = 9;
    expect("version", matches!(RepresentationTrace::from_bytes(&bad), Err(Error::VersionMismatch { .. })));
    expect(
        "truncated payload",
        matches!(RepresentationTrace::from_bytes(&base[..base.len() - 1]), Err(Error::Truncated { .. })),
    );
    let mut bad = base.clone();
    bad.push(0);
    expect("trailing bytes", matches!(RepresentationTrace::from_bytes(&bad), Err(Error::TrailingBytes { .. })));
    let mut bad = base.clone();
    let n = bad.len();
    bad[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    expect("non-finite", matches!(RepresentationTrace::from_bytes(&bad), Err(Error::NonFinite { .. })));
    expect(
        "shape",
        RepresentationTrace::new("m", "i", AgentRole::A, TraceCondition::Interactive, 2, 2, 2, vec![0.0; 7]).is_err(),
    );

    let corpus = generate(&spec).unwrap();
    let no_passive = generate(&CouplingSpec {
        passive_attenuation: None,
        ..spec.clone()
    })
    .unwrap();
    expect(
        "missing passive traces",
        matches!(
            build_family(&no_passive, &pair, Direction::AToB, PairCondition::PassiveControl),
            Err(Error::ConditionMismatch(_))
        ),
    );
    let fam = build_family(&corpus, &pair, Direction::AToB, PairCondition::Experimental).unwrap();
    expect(
        "budget above data",
        matches!(enforce_budget(fam.meta(), 1_000_000, 0, false), Err(Error::InsufficientData { .. })),
    );
    expect("lag 0", matches!(PairCondition::Lag(0).validate(), Err(Error::Validation { .. })));
    expect(
        "split fraction",
        matches!(
            SplitPlan {
                train_fraction: 1.5,
                ..SplitPlan::default()
            }
            .validate(),
            Err(Error::Validation { .. })
        ),
    );
    let g = Array2::from_elem((2, 3), 0.1);
    expect(
        "k out of range",
        matches!(syncr2_directional(g.view(), Variant { k: 4, clamp: true }), Err(Error::Validation { .. })),
    );
    let h = |dir, cond| SynchronyHeatmap {
        pair: pair.clone(),
        direction: dir,
        condition: cond,
        seed: 0,
        grid: g.clone(),
        n_train: 0,
        n_test: 0,
    };
    expect(
        "mismatched conditions",
        matches!(
            syncr2_symmetric(&[h(Direction::AToB, PairCondition::Experimental)], &[h(Direction::BToA, PairCondition::Lag(1))], Variant::default()),
            Err(Error::ConditionMismatch(_))
        ),
    );
    let x = Array2::from_shape_vec((3, 2), vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
    expect(
        "rank deficiency",
        matches!(fit_ridge(x.view(), x.view(), 0.0), Err(Error::RankDeficient { .. })),
    );
    let v = Array1::from(vec![1.0, 2.0, 3.0]);
    let flat = Array1::from(vec![1.0, 1.0, 1.0]);
    expect("constant input", matches!(pearson(v.view(), flat.view()), Err(Error::UndefinedCorrelation(_))));
    expect(
        "covariate explains x",
        matches!(
            partial_correlation(
                Array1::from(vec![1.0, 2.0, 4.0, 3.0, 7.0]).view(),
                Array1::from(vec![2.0, 1.0, 5.0, 3.0, 6.0]).view(),
                Array2::from_shape_vec((5, 1), vec![1.0, 2.0, 4.0, 3.0, 7.0]).unwrap().view(),
                &["x".into()]
            ),
            Err(Error::UndefinedCorrelation(_))
        ),
    );
    expect(
        "kl dimension mismatch",
        matches!(
            syncr2_core::decoding::kl_divergence(Array1::from(vec![0.5, 0.5]).view(), Array1::from(vec![1.0]).view()),
            Err(Error::Shape(_))
        ),
    );
    expect(
        "vocabulary width",
        matches!(
            syncr2_core::decoding::softmax_targets(Array2::<f64>::zeros((1, 3)).view(), DistKind::Emotion),
            Err(Error::Shape(_))
        ),
    );
    let _ = softmax_rows::<f64>;
    let dup_csv = "pair_id,model_a,model_b,family,perf_overall,perf_goal\np,a,b,cross_family,1,2\np,a,b,cross_family,1,2\n";
    expect(
        "duplicate score row",
        matches!(syncr2_core::stats::ScoreTable::from_reader(dup_csv.as_bytes()), Err(Error::ScoreTable(_))),
    );
    let pred = fit_ridge(Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap().view(), Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap().view(), 0.1).unwrap();
    expect(
        "predict width",
        matches!(pred.predict(Array2::<f64>::zeros((2, 2)).view()), Err(Error::Shape(_))),
    );

    let hashes_equal = ha == hb;
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("controls JSON byte-identical ({} bytes, corpus hash stable: {hashes_equal}); REPD bitwise; all error cases raised", a.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let mut heatmaps = Vec::new();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Vec<SynchronyHeatmap<f64>>) -> Outcome>)> = vec![
        ("ridge correctness", Box::new(|_| criterion_ridge())),
        ("R2 semantics", Box::new(|_| criterion_r2())),
        ("factorization reuse", Box::new(|_| criterion_family())),
        ("synthetic ground truth", Box::new(criterion_truth)),
        ("control behavior", Box::new(criterion_controls)),
        ("variant algebra", Box::new(criterion_variants)),
        ("statistics oracles", Box::new(|_| criterion_stats())),
        ("decoding", Box::new(|_| criterion_decoding())),
        ("determinism and formats", Box::new(|_| criterion_determinism())),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let idx = i + 1;
        if only.is_some_and(|o| o != idx) {
            continue;
        }
        let start = Instant::now();
        let out = run(&mut heatmaps);
        let status = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!("{status} [{idx}] {name}: {} ({:.1} s)", out.detail, start.elapsed().as_secs_f64());
    }
    if only.is_none() {
        println!(
            "DOC  [10] published headline values (SyncR2 0.75 +- 0.01 for the same-model pair, per-family r 0.88/0.89/0.99, partial correlations) need the original 7B-model corpora; see README"
        );
    }
    // keep the analytic helper exercised even when only one criterion runs
    let _ = analytic_r2;
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
