//! Dense kernels shared by the regression and statistics code.
//!
//! Everything works on row-major `ndarray` matrices; the heavy lifting goes
//! through `dot`, which dispatches to an optimised GEMM for `f32`/`f64`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

const BLOCK: usize = 64;

/// Lower-triangular Cholesky factor `A = L Lᵀ` of a symmetric positive
/// definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Array2<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factorises `a`, reading only its lower triangle.
    ///
    /// Left-looking blocked variant: each panel of `BLOCK` columns is updated
    /// with one matrix product against the already factored columns, then
    /// finished column by column.
    pub fn factor(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut w = a.to_owned();
        let max_diag = (0..n).map(|i| w[[i, i]].abs()).fold(T::zero(), T::max);
        let tol = T::epsilon() * T::of_usize(n.max(1)) * max_diag;

        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + BLOCK).min(n);
            if j0 > 0 {
                let upd = w
                    .slice(s![j0.., ..j0])
                    .dot(&w.slice(s![j0..j1, ..j0]).t());
                let mut panel = w.slice_mut(s![j0.., j0..j1]);
                panel -= &upd;
            }
            for j in j0..j1 {
                let mut d = w[[j, j]];
                for k in j0..j {
                    d -= w[[j, k]] * w[[j, k]];
                }
                if !(d > tol) || !d.is_finite() {
                    return Err(Error::RankDeficient {
                        pivot: j,
                        hint: "use a regularisation strength lambda > 0",
                    });
                }
                let piv = d.sqrt();
                w[[j, j]] = piv;
                for i in (j + 1)..n {
                    let mut v = w[[i, j]];
                    for k in j0..j {
                        v -= w[[i, k]] * w[[j, k]];
                    }
                    w[[i, j]] = v / piv;
                }
            }
            j0 = j1;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                w[[i, j]] = T::zero();
            }
        }
        Ok(Self { l: w })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor_matrix(&self) -> &Array2<T> {
        &self.l
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::Shape(format!(
                "right-hand side has {} rows, factor is {}x{}",
                b.nrows(),
                n,
                n
            )));
        }
        let mut x = b.as_standard_layout().into_owned();
        self.forward(&mut x);
        self.backward(&mut x);
        Ok(x)
    }

    fn forward(&self, b: &mut Array2<T>) {
        let n = self.dim();
        let m = b.ncols();
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + BLOCK).min(n);
            if j0 > 0 {
                let upd = self.l.slice(s![j0..j1, ..j0]).dot(&b.slice(s![..j0, ..]));
                let mut blk = b.slice_mut(s![j0..j1, ..]);
                blk -= &upd;
            }
            let data = b.as_slice_mut().expect("standard layout");
            for i in j0..j1 {
                let (lo, hi) = data.split_at_mut(i * m);
                let row_i = &mut hi[..m];
                for k in j0..i {
                    let c = self.l[[i, k]];
                    if c != T::zero() {
                        axpy(row_i, -c, &lo[k * m..(k + 1) * m]);
                    }
                }
                let inv = T::one() / self.l[[i, i]];
                row_i.iter_mut().for_each(|v| *v *= inv);
            }
            j0 = j1;
        }
    }

    fn backward(&self, b: &mut Array2<T>) {
        let n = self.dim();
        let m = b.ncols();
        let mut j1 = n;
        while j1 > 0 {
            let j0 = j1.saturating_sub(BLOCK);
            if j1 < n {
                let upd = self
                    .l
                    .slice(s![j1.., j0..j1])
                    .t()
                    .dot(&b.slice(s![j1.., ..]));
                let mut blk = b.slice_mut(s![j0..j1, ..]);
                blk -= &upd;
            }
            let data = b.as_slice_mut().expect("standard layout");
            for i in (j0..j1).rev() {
                let (lo, hi) = data.split_at_mut((i + 1) * m);
                let row_i = &mut lo[i * m..];
                for k in (i + 1)..j1 {
                    let c = self.l[[k, i]];
                    if c != T::zero() {
                        let off = (k - i - 1) * m;
                        axpy(row_i, -c, &hi[off..off + m]);
                    }
                }
                let inv = T::one() / self.l[[i, i]];
                row_i.iter_mut().for_each(|v| *v *= inv);
            }
            j1 = j0;
        }
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn column_means<T: Real>(x: ArrayView2<'_, T>) -> Array1<T> {
    let n = T::of_usize(x.nrows().max(1));
    x.sum_axis(Axis(0)).mapv(|v| v / n)
}

/// Returns `(column means, x - means)`.
pub fn center<T: Real>(x: ArrayView2<'_, T>) -> (Array1<T>, Array2<T>) {
    let mean = column_means(x);
    let centered = &x - &mean.view().insert_axis(Axis(0));
    (mean, centered)
}

/// Orthonormal basis for the column space of `a` (thin Q of a QR
/// factorisation), by modified Gram–Schmidt with one reorthogonalisation
/// pass. Fails when the columns are numerically dependent.
pub fn orthonormal_columns<T: Real>(a: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let (n, p) = a.dim();
    let mut q = a.to_owned();
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = T::epsilon() * T::of_usize(n.max(p).max(1)) * T::of(16.0) * scale;
    for j in 0..p {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let qk = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-proj, &qk);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if !(norm > tol * T::of_usize(n).sqrt()) {
            return Err(Error::RankDeficient {
                pivot: j,
                hint: "columns are linearly dependent",
            });
        }
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(q)
}

/// Residual of `y` after projection onto the span of the orthonormal
/// columns of `q`.
pub fn residualize<T: Real>(q: ArrayView2<'_, T>, y: ArrayView1<'_, T>) -> Array1<T> {
    let mut r = y.to_owned();
    for _pass in 0..2 {
        let coef = q.t().dot(&r);
        r = &r - &q.dot(&coef);
    }
    r
}

pub fn max_abs<T: Real>(a: ArrayView2<'_, T>) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}
