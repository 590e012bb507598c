//! Small dense helpers shared by the local, root and oracle solves.

use nalgebra::{DMatrix, DVector, Dyn, LU};

/// Condition estimates above this are treated as numerically singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

const RUIZ_PASSES: usize = 30;
const RUIZ_TOLERANCE: f64 = 1e-3;

/// LU factorization of a symmetrically equilibrated square matrix.
///
/// The matrix `K` is scaled as `S K S` by symmetric Ruiz iterations, each
/// dividing row and column `i` by the square root of their largest entry;
/// solves undo the scaling. The condition estimate is the
/// 1-norm condition number of the scaled matrix.
#[derive(Clone, Debug)]
pub struct Factorization {
    lu: LU<f64, Dyn, Dyn>,
    scale: DVector<f64>,
    condition: f64,
}

impl Factorization {
    /// Factors `mat`, estimating its condition number. Returns `None` when a
    /// row is identically zero or a pivot vanishes.
    pub fn new(mat: &DMatrix<f64>) -> Option<Self> {
        Self::build(mat, true)
    }

    /// Factors without forming the explicit inverse for the condition
    /// estimate; `condition()` reports NaN.
    pub fn without_condition(mat: &DMatrix<f64>) -> Option<Self> {
        Self::build(mat, false)
    }

    fn build(mat: &DMatrix<f64>, estimate: bool) -> Option<Self> {
        assert!(mat.is_square(), "factorization needs a square matrix");
        let n = mat.nrows();
        let mut scale = DVector::from_element(n, 1.0);
        let mut scaled = mat.clone();
        for _ in 0..RUIZ_PASSES {
            let mut worst = 0.0_f64;
            for i in 0..n {
                let r = scaled.row(i).amax().max(scaled.column(i).amax());
                if r == 0.0 || !r.is_finite() {
                    return None;
                }
                worst = worst.max((1.0 - r).abs());
                scale[i] /= r.sqrt();
            }
            scaled = DMatrix::from_fn(n, n, |i, j| scale[i] * mat[(i, j)] * scale[j]);
            if worst < RUIZ_TOLERANCE {
                break;
            }
        }
        let lu = scaled.clone().lu();
        let condition = if estimate {
            let inverse = lu.try_inverse()?;
            let c = one_norm(&scaled) * one_norm(&inverse);
            if !c.is_finite() {
                return None;
            }
            c
        } else {
            if !lu.is_invertible() {
                return None;
            }
            f64::NAN
        };
        Some(Self {
            lu,
            scale,
            condition,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let scaled = rhs.component_mul(&self.scale);
        let y = self
            .lu
            .solve(&scaled)
            .expect("factorization checked invertible");
        y.component_mul(&self.scale)
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = rhs.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        let mut y = self
            .lu
            .solve(&scaled)
            .expect("factorization checked invertible");
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        y
    }
}

pub fn one_norm(mat: &DMatrix<f64>) -> f64 {
    mat.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(mat: &DMatrix<f64>) -> f64 {
    mat.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Largest absolute entry of `A - A^T`.
pub fn symmetry_defect(mat: &DMatrix<f64>) -> f64 {
    if !mat.is_square() {
        return f64::INFINITY;
    }
    let mut worst = 0.0_f64;
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            worst = worst.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
    }
    worst
}

/// `||a - b|| / max(||b||, floor)` in the Euclidean norm.
pub fn relative_difference(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

pub fn stack(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}
