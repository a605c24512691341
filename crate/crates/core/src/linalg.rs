//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

/// Moore-Penrose pseudo-inverse of a `rows x cols` matrix, kept in thin SVD
/// form `A = U S V^T` restricted to the numerically non-zero singular values.
///
/// Singular values below `max(rows, cols) * eps * s_max` are treated as zero.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    /// `rows x r`
    u: DMatrix<f64>,
    /// `r`
    s: DVector<f64>,
    /// `cols x r`
    v: DMatrix<f64>,
}

impl PseudoInverse {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Self {
                u: DMatrix::zeros(rows, 0),
                s: DVector::zeros(0),
                v: DMatrix::zeros(cols, 0),
            };
        }
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("U requested");
        let v_t = svd.v_t.expect("V^T requested");
        let sv = &svd.singular_values;
        let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = rows.max(cols) as f64 * f64::EPSILON * s_max;
        let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > cutoff).collect();
        let r = keep.len();
        let mut ur = DMatrix::zeros(rows, r);
        let mut vr = DMatrix::zeros(cols, r);
        let mut sr = DVector::zeros(r);
        for (k, &i) in keep.iter().enumerate() {
            ur.set_column(k, &u.column(i));
            vr.set_column(k, &v_t.row(i).transpose());
            sr[k] = sv[i];
        }
        Self { u: ur, s: sr, v: vr }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `A^+ b`
    pub fn apply(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut coef = self.u.tr_mul(b);
        coef.component_div_assign(&self.s);
        &self.v * coef
    }

    /// `A^+ A v`: orthogonal projection onto the row space of `A`.
    pub fn project_row_space(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.v * self.v.tr_mul(v)
    }
}

/// Cholesky factorization of a symmetric positive definite matrix, or `None`.
pub fn cholesky(a: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(a)
}

/// Solves `(X^T X / T + lambda I) w = X^T y / T` given the Gram statistics
/// `xtx = X^T X` and `xty = X^T y`. Returns `None` if the system is not
/// numerically positive definite.
pub fn solve_normal_equations(xtx: &DMatrix<f64>, xty: &DVector<f64>, t: usize, lambda: f64) -> Option<DVector<f64>> {
    let scale = 1.0 / t as f64;
    let mut a = xtx * scale;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let chol = cholesky(a)?;
    Some(chol.solve(&(xty * scale)))
}

/// Matrix with iid standard normal entries, filled column by column.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(rng.sample::<f64, _>(StandardNormal));
    }
    DMatrix::from_vec(rows, cols, data)
}

pub fn standard_normal_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
