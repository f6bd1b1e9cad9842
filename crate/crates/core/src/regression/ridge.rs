use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{check_finite, r2_uniform, Predictor};
use crate::error::{Error, Result};
use crate::linalg::{center, Cholesky};
use crate::scalar::Real;

pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// `(XcᵀXc + λI) W = XcᵀYc`, a `D_src × D_src` system.
    PrimalCholesky,
    /// `W = Xcᵀ (XcXcᵀ + λI)⁻¹ Yc`, an `N × N` system; used when `D_src > N`.
    DualForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeOptions<T> {
    pub lambda: T,
    /// Scale source columns to unit variance before fitting. The returned map
    /// still acts on raw inputs.
    pub standardize: bool,
}

impl<T: Real> Default for RidgeOptions<T> {
    fn default() -> Self {
        Self {
            lambda: T::of(DEFAULT_LAMBDA),
            standardize: false,
        }
    }
}

impl<T: Real> RidgeOptions<T> {
    pub fn lambda(lambda: T) -> Self {
        Self {
            lambda,
            standardize: false,
        }
    }
}

/// `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap<T> {
    pub weights: Array2<T>,
    pub intercept: Array1<T>,
    pub lambda: T,
    pub source_layer: Option<usize>,
    pub target_layer: Option<usize>,
}

impl<T: Real> AffineMap<T> {
    pub fn new(weights: Array2<T>, intercept: Array1<T>, lambda: T) -> Result<Self> {
        if weights.ncols() != intercept.len() {
            return Err(Error::Shape(format!(
                "weights are {:?} but intercept has {} entries",
                weights.dim(),
                intercept.len()
            )));
        }
        Ok(Self {
            weights,
            intercept,
            lambda,
            source_layer: None,
            target_layer: None,
        })
    }

    pub fn with_layers(mut self, source: usize, target: usize) -> Self {
        self.source_layer = Some(source);
        self.target_layer = Some(target);
        self
    }
}

impl<T: Real> Predictor<T> for AffineMap<T> {
    fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "map expects {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weights) + &self.intercept.view().insert_axis(Axis(0)))
    }
}

/// Factorised ridge system for one source matrix; reusable for any number of
/// targets sharing its rows.
#[derive(Debug, Clone)]
pub struct RidgeFactor<T> {
    x_mean: Array1<T>,
    x_scale: Option<Array1<T>>,
    xc: Array2<T>,
    chol: Cholesky<T>,
    lambda: T,
    solver: Solver,
}

impl<T: Real> RidgeFactor<T> {
    pub fn new(x: ArrayView2<'_, T>, opts: RidgeOptions<T>) -> Result<Self> {
        let (n, d) = x.dim();
        if n < 2 {
            return Err(Error::invalid("rows", format!("ridge needs at least 2 rows, got {n}")));
        }
        if d == 0 {
            return Err(Error::invalid("columns", "source has no columns"));
        }
        if !(opts.lambda >= T::zero()) || !opts.lambda.is_finite() {
            return Err(Error::invalid("lambda", "must be finite and non-negative"));
        }
        check_finite("x", x)?;
        let (x_mean, mut xc) = center(x);
        let x_scale = if opts.standardize {
            let nt = T::of_usize(n);
            let scale = xc.map_axis(Axis(0), |c| {
                let sd = (c.dot(&c) / nt).sqrt();
                if sd > T::zero() {
                    sd
                } else {
                    T::one()
                }
            });
            xc /= &scale.view().insert_axis(Axis(0));
            Some(scale)
        } else {
            None
        };
        let solver = if d > n { Solver::DualForm } else { Solver::PrimalCholesky };
        let mut gram = match solver {
            Solver::PrimalCholesky => xc.t().dot(&xc),
            Solver::DualForm => xc.dot(&xc.t()),
        };
        for i in 0..gram.nrows() {
            gram[[i, i]] += opts.lambda;
        }
        let chol = Cholesky::factor(gram.view())?;
        Ok(Self {
            x_mean,
            x_scale,
            xc,
            chol,
            lambda: opts.lambda,
            solver,
        })
    }

    pub fn solver(&self) -> Solver {
        self.solver
    }

    pub fn rows(&self) -> usize {
        self.xc.nrows()
    }

    pub fn fit(&self, y: ArrayView2<'_, T>) -> Result<AffineMap<T>> {
        if y.nrows() != self.rows() {
            return Err(Error::Shape(format!(
                "target has {} rows, source has {}",
                y.nrows(),
                self.rows()
            )));
        }
        check_finite("y", y)?;
        let (y_mean, yc) = center(y);
        let mut w = match self.solver {
            Solver::PrimalCholesky => self.chol.solve(self.xc.t().dot(&yc).view())?,
            Solver::DualForm => self.xc.t().dot(&self.chol.solve(yc.view())?),
        };
        if let Some(scale) = &self.x_scale {
            w /= &scale.view().insert_axis(Axis(1));
        }
        let b = &y_mean - &self.x_mean.dot(&w);
        AffineMap::new(w, b, self.lambda)
    }
}

/// Centered ridge regression with an unpenalised intercept.
pub fn fit_ridge<T: Real>(x: ArrayView2<'_, T>, y: ArrayView2<'_, T>, lambda: T) -> Result<AffineMap<T>> {
    fit_ridge_with(x, y, RidgeOptions::lambda(lambda))
}

pub fn fit_ridge_with<T: Real>(x: ArrayView2<'_, T>, y: ArrayView2<'_, T>, opts: RidgeOptions<T>) -> Result<AffineMap<T>> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!("x has {} rows, y has {}", x.nrows(), y.nrows())));
    }
    RidgeFactor::new(x, opts)?.fit(y)
}

/// Fits every target against the same source with one factorisation.
pub fn fit_ridge_family<'a, T, I>(x: ArrayView2<'_, T>, targets: I, lambda: T) -> Result<Vec<AffineMap<T>>>
where
    T: Real,
    I: IntoIterator<Item = ArrayView2<'a, T>>,
{
    let mut targets = targets.into_iter().peekable();
    if targets.peek().is_none() {
        return Ok(Vec::new());
    }
    let factor = RidgeFactor::new(x, RidgeOptions::lambda(lambda))?;
    targets.map(|y| factor.fit(y)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_r2: f64,
    pub test_r2: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub solver: Solver,
}

/// Fits on the training rows and scores both sides.
pub fn fit_and_evaluate<T: Real>(
    train_x: ArrayView2<'_, T>,
    train_y: ArrayView2<'_, T>,
    test_x: ArrayView2<'_, T>,
    test_y: ArrayView2<'_, T>,
    opts: RidgeOptions<T>,
) -> Result<(AffineMap<T>, FitReport)> {
    let factor = RidgeFactor::new(train_x, opts)?;
    let map = factor.fit(train_y)?;
    let train_r2 = r2_uniform(train_y, map.predict(train_x)?.view())?;
    let test_r2 = r2_uniform(test_y, map.predict(test_x)?.view())?;
    Ok((
        map,
        FitReport {
            train_r2: train_r2.to_f64_lossy(),
            test_r2: test_r2.to_f64_lossy(),
            n_train: train_x.nrows(),
            n_test: test_x.nrows(),
            solver: factor.solver(),
        },
    ))
}
