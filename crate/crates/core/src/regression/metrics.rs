use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniformly weighted multi-output coefficient of determination.
///
/// Each output column scores `1 - SS_res / SS_tot` against the evaluation
/// set's own column mean; the result is the plain mean over columns. A
/// constant column scores 1 when predicted exactly and 0 otherwise.
pub fn r2_uniform<T: Real>(y_true: ArrayView2<'_, T>, y_pred: ArrayView2<'_, T>) -> Result<T> {
    if y_true.dim() != y_pred.dim() {
        return Err(Error::Shape(format!(
            "r2: truth is {:?}, prediction is {:?}",
            y_true.dim(),
            y_pred.dim()
        )));
    }
    let (n, d) = y_true.dim();
    if n < 2 {
        return Err(Error::invalid("rows", format!("r2 needs at least 2 rows, got {n}")));
    }
    if d == 0 {
        return Err(Error::invalid("columns", "r2 needs at least one output"));
    }
    let nt = T::of_usize(n);
    let mut total = T::zero();
    for j in 0..d {
        let col = y_true.column(j);
        let pred = y_pred.column(j);
        let mean = col.iter().fold(T::zero(), |a, &v| a + v) / nt;
        let mut ss_tot = T::zero();
        let mut ss_res = T::zero();
        for (&y, &p) in col.iter().zip(pred.iter()) {
            ss_tot += (y - mean) * (y - mean);
            ss_res += (y - p) * (y - p);
        }
        let score = if ss_tot > T::zero() {
            T::one() - ss_res / ss_tot
        } else if ss_res == T::zero() {
            T::one()
        } else {
            T::zero()
        };
        total += score;
    }
    Ok(total / T::of_usize(d))
}
