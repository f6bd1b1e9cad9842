//! Predictive maps between layer representations.

mod metrics;
mod mlp;
mod ridge;
mod sidecar;

pub use metrics::r2_uniform;
pub use mlp::{fit_mlp, MlpConfig, MlpFit, MlpMap, DEFAULT_HIDDEN};
pub use ridge::{
    fit_and_evaluate, fit_ridge, fit_ridge_family, fit_ridge_with, AffineMap, FitReport, RidgeFactor, RidgeOptions,
    Solver, DEFAULT_LAMBDA,
};
pub use sidecar::{read_map, write_map, MAP_MAGIC};

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::scalar::Real;

/// Anything that maps source rows to predicted target rows.
pub trait Predictor<T: Real> {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>>;
}

pub(crate) fn check_finite<T: Real>(name: &str, a: ArrayView2<'_, T>) -> Result<()> {
    if let Some(((r, c), _)) = a.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(crate::Error::invalid(name, format!("non-finite entry at ({r}, {c})")));
    }
    Ok(())
}
