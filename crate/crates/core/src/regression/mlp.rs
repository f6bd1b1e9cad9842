//! Two-layer ReLU baseline trained with AdamW.

use ndarray::{Array, Array1, Array2, ArrayView2, Axis, Dimension, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, Predictor};
use crate::error::{Error, Result};
use crate::linalg::column_means;
use crate::scalar::Real;

pub const DEFAULT_HIDDEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Mini-batch size; `None` trains on the full batch every step.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Standardise inputs and targets with training statistics.
    pub standardize: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            learning_rate: 1e-4,
            weight_decay: 0.1,
            epochs: 200,
            batch_size: Some(64),
            seed: 0,
            standardize: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Affine1<T> {
    shift: Array1<T>,
    scale: Array1<T>,
}

/// `relu(x W1 + b1) W2 + b2`, with optional input/output standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpMap<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    input_norm: Option<Affine1<T>>,
    output_norm: Option<Affine1<T>>,
}

#[derive(Debug, Clone)]
pub struct MlpFit<T> {
    pub map: MlpMap<T>,
    /// Mean training loss (MSE on the fitted scale) per epoch.
    pub losses: Vec<T>,
}

impl<T: Real> MlpMap<T> {
    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    fn forward_raw(&self, x: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
        let pre = x.dot(&self.w1) + &self.b1.view().insert_axis(Axis(0));
        let h = pre.mapv(|v| v.max(T::zero()));
        let out = h.dot(&self.w2) + &self.b2.view().insert_axis(Axis(0));
        (pre, out)
    }
}

impl<T: Real> Predictor<T> for MlpMap<T> {
    fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "mlp expects {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let xs = match &self.input_norm {
            Some(n) => (&x - &n.shift.view().insert_axis(Axis(0))) / &n.scale.view().insert_axis(Axis(0)),
            None => x.to_owned(),
        };
        let (_, mut out) = self.forward_raw(xs.view());
        if let Some(n) = &self.output_norm {
            out = out * &n.scale.view().insert_axis(Axis(0)) + &n.shift.view().insert_axis(Axis(0));
        }
        Ok(out)
    }
}

fn standardizer<T: Real>(a: ArrayView2<'_, T>) -> Affine1<T> {
    let shift = column_means(a);
    let n = T::of_usize(a.nrows());
    let scale = Array1::from_iter(a.axis_iter(Axis(1)).zip(shift.iter()).map(|(c, &m)| {
        let var = c.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
        if var > T::zero() {
            var.sqrt()
        } else {
            T::one()
        }
    }));
    Affine1 { shift, scale }
}

struct Moments<T, D: Dimension> {
    m: Array<T, D>,
    v: Array<T, D>,
}

impl<T: Real, D: Dimension> Moments<T, D> {
    fn like(p: &Array<T, D>) -> Self {
        Self {
            m: Array::zeros(p.raw_dim()),
            v: Array::zeros(p.raw_dim()),
        }
    }

    /// AdamW: bias-corrected Adam step plus decoupled weight decay.
    fn step(&mut self, p: &mut Array<T, D>, g: &Array<T, D>, t: i32, cfg: &MlpConfig) {
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let lr = T::of(cfg.learning_rate);
        let decay = T::one() - lr * T::of(cfg.weight_decay);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let eps = T::of(cfg.eps);
        Zip::from(p)
            .and(g)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
            });
    }
}

/// Trains the two-layer map. Deterministic for a given seed.
pub fn fit_mlp<T: Real>(x: ArrayView2<'_, T>, y: ArrayView2<'_, T>, cfg: &MlpConfig) -> Result<MlpFit<T>> {
    let (n, d_in) = x.dim();
    if y.nrows() != n {
        return Err(Error::Shape(format!("x has {n} rows, y has {}", y.nrows())));
    }
    if n < 2 {
        return Err(Error::invalid("rows", format!("mlp needs at least 2 rows, got {n}")));
    }
    if cfg.hidden == 0 {
        return Err(Error::invalid("hidden", "must be positive"));
    }
    if matches!(cfg.batch_size, Some(0)) {
        return Err(Error::invalid("batch_size", "must be positive"));
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let d_out = y.ncols();
    let h = cfg.hidden;

    let (input_norm, output_norm) = if cfg.standardize {
        (Some(standardizer(x)), Some(standardizer(y)))
    } else {
        (None, None)
    };
    let xs = match &input_norm {
        Some(s) => (&x - &s.shift.view().insert_axis(Axis(0))) / &s.scale.view().insert_axis(Axis(0)),
        None => x.to_owned(),
    };
    let ys = match &output_norm {
        Some(s) => (&y - &s.shift.view().insert_axis(Axis(0))) / &s.scale.view().insert_axis(Axis(0)),
        None => y.to_owned(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| T::of(rng.random_range(-bound..bound)))
    };
    let w1 = uniform(d_in, h, d_in);
    let b1 = uniform(1, h, d_in).index_axis_move(Axis(0), 0);
    let w2 = uniform(h, d_out, h);
    let b2 = uniform(1, d_out, h).index_axis_move(Axis(0), 0);
    let mut map = MlpMap {
        w1,
        b1,
        w2,
        b2,
        input_norm,
        output_norm,
    };

    let mut mw1 = Moments::like(&map.w1);
    let mut mb1 = Moments::like(&map.b1);
    let mut mw2 = Moments::like(&map.w2);
    let mut mb2 = Moments::like(&map.b2);
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;

    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(batch) {
            let xb = xs.select(Axis(0), chunk);
            let yb = ys.select(Axis(0), chunk);
            let (pre, out) = map.forward_raw(xb.view());
            let diff = out - &yb;
            let count = T::of_usize(diff.len());
            epoch_loss += diff.iter().map(|&v| v * v).sum::<T>() / T::of_usize(d_out.max(1));

            let g_out = diff * (T::of(2.0) / count);
            let hidden = pre.mapv(|v| v.max(T::zero()));
            let g_w2 = hidden.t().dot(&g_out);
            let g_b2 = g_out.sum_axis(Axis(0));
            let mut g_h = g_out.dot(&map.w2.t());
            Zip::from(&mut g_h).and(&pre).for_each(|g, &p| {
                if p <= T::zero() {
                    *g = T::zero();
                }
            });
            let g_w1 = xb.t().dot(&g_h);
            let g_b1 = g_h.sum_axis(Axis(0));

            step += 1;
            mw1.step(&mut map.w1, &g_w1, step, cfg);
            mb1.step(&mut map.b1, &g_b1, step, cfg);
            mw2.step(&mut map.w2, &g_w2, step, cfg);
            mb2.step(&mut map.b2, &g_b2, step, cfg);
        }
        let mean_loss = epoch_loss / T::of_usize(n);
        if !mean_loss.is_finite() || map.w1.iter().chain(map.w2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        losses.push(mean_loss);
    }
    Ok(MlpFit { map, losses })
}
