//! Small dense linear algebra: row-major matrices, products, a cyclic Jacobi
//! eigensolver for symmetric input, and a Cholesky solver.
//!
//! Everything here targets desk-scale problems (at most a few dozen
//! columns), so the implementations favour verifiability over speed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Off-diagonal magnitude below which Jacobi iteration stops.
pub const JACOBI_OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Sweep cap for the Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Allowed asymmetry `|a_ij - a_ji|` for input to [`eigen_symmetric`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative pivot floor for [`solve_spd`]; pivots at or below
/// `PIVOT_REL_TOL * max|diag|` are treated as non-positive.
pub const PIVOT_REL_TOL: f64 = 1e-12;
/// Components with magnitude below this are skipped when choosing the
/// sign-defining entry of an eigenvector.
pub const SIGN_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (|a[{row}][{col}] - a[{col}][{row}]| = {gap:e})")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("jacobi iteration did not converge within {sweeps} sweeps (max off-diagonal {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
}

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, checking shape and finiteness.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(pos / cols, pos % cols));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::DimensionMismatch("ragged rows".into()));
        }
        Mat::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if v.len() != self.cols {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v` without materializing the transpose.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if v.len() != self.rows {
            return Err(NumericsError::DimensionMismatch(format!(
                "transpose of {}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    /// Largest absolute entry-wise difference to `other` (same shape assumed).
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat, NumericsError> {
    if a.cols != b.rows {
        return Err(NumericsError::DimensionMismatch(format!(
            "{}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out[(i, j)] += aik * b[(k, j)];
            }
        }
    }
    if let Some(pos) = out.data.iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite(pos / out.cols, pos % out.cols));
    }
    Ok(out)
}

/// Eigenvalues sorted descending, with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigenResult {
    /// Eigenvector `k` (column `k` of `vectors`).
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }

    /// `V · diag(λ) · Vᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let scaled = matmul(&self.vectors, &Mat::diag(&self.values)).expect("square shapes");
        matmul(&scaled, &self.vectors.transpose()).expect("square shapes")
    }
}

fn max_off_diagonal(a: &Mat) -> f64 {
    let n = a.rows;
    let mut off = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            off = off.max(a[(i, j)].abs());
        }
    }
    off
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Output eigenvalues are sorted descending and each eigenvector's first
/// non-negligible component is made positive, so repeated calls on the same
/// input agree exactly.
pub fn eigen_symmetric(input: &Mat) -> Result<EigenResult, NumericsError> {
    let n = input.rows;
    if n != input.cols {
        return Err(NumericsError::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            input.rows, input.cols
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (input[(i, j)] - input[(j, i)]).abs();
            if gap > SYMMETRY_TOL {
                return Err(NumericsError::NotSymmetric { row: i, col: j, gap });
            }
        }
    }

    // Work on the symmetrized copy so tiny input asymmetries cannot leak in.
    let mut a = input.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = Mat::identity(n);

    let mut sweeps = 0;
    loop {
        let off = max_off_diagonal(&a);
        if off < JACOBI_OFF_DIAGONAL_TOL {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(NumericsError::NoConvergence { sweeps, off });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Rotation angle from the stable tangent formula.
                let theta = (aqq - app) / (2.0 * apq);
                // f64::signum(0.0) is 1.0, so theta == 0 gives a 45 degree rotation.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));

    let values: Vec<f64> = order.iter().map(|&k| a[(k, k)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let sign = col
            .iter()
            .find(|x| x.abs() > SIGN_ZERO_TOL)
            .map_or(1.0, |x| x.signum());
        for (i, x) in col.iter().enumerate() {
            vectors[(i, dst)] = sign * x;
        }
    }
    Ok(EigenResult { values, vectors })
}

/// Lower-triangular Cholesky factor `L` with `a = L·Lᵀ`.
pub fn cholesky(a: &Mat) -> Result<Mat, NumericsError> {
    let n = a.rows;
    if n != a.cols {
        return Err(NumericsError::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = PIVOT_REL_TOL * scale;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(NumericsError::NotPositiveDefinite { column: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `a·x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd(a: &Mat, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if b.len() != a.rows {
        return Err(NumericsError::DimensionMismatch(format!(
            "{}x{} system with right-hand side of length {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    let l = cholesky(a)?;
    let n = a.rows;
    // forward: L·y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - (0..i).map(|k| l[(i, k)] * y[k]).sum::<f64>();
        y[i] = s / l[(i, i)];
    }
    // back: Lᵀ·x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s = y[i] - ((i + 1)..n).map(|k| l[(k, i)] * x[k]).sum::<f64>();
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_symmetric(n: usize, seed: u64) -> Mat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn identity_times_matrix() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&Mat::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Mat::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 2);
        assert!(matches!(matmul(&a, &b), Err(NumericsError::DimensionMismatch(_))));
    }

    #[test]
    fn eigen_of_diagonal() {
        let r = eigen_symmetric(&Mat::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(r.values, vec![3.0, 1.0]);
        assert_eq!(r.vector(0), vec![0.0, 1.0]);
        assert_eq!(r.vector(1), vec![1.0, 0.0]);
    }

    #[test]
    fn eigen_two_by_two() {
        // char. polynomial (2-λ)² - 1 = 0 → λ = 3, 1
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let r = eigen_symmetric(&a).unwrap();
        assert!((r.values[0] - 3.0).abs() < 1e-12);
        assert!((r.values[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = r.vector(0);
        let v1 = r.vector(1);
        assert!((v0[0] - h).abs() < 1e-12 && (v0[1] - h).abs() < 1e-12);
        assert!((v1[0] - h).abs() < 1e-12 && (v1[1] + h).abs() < 1e-12);
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(eigen_symmetric(&a), Err(NumericsError::NotSymmetric { .. })));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let x = solve_spd(&Mat::identity(3), &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
        let a = Mat::diag(&[4.0, 9.0]);
        let x = solve_spd(&a, &[8.0, 27.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(NumericsError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn from_row_major_rejects_nan() {
        assert!(matches!(
            Mat::from_row_major(1, 2, vec![1.0, f64::NAN]),
            Err(NumericsError::NonFinite(0, 1))
        ));
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in any::<u64>(), n in 1usize..5, m in 1usize..5, p in 1usize..5, q in 1usize..5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |r: usize, c: usize| {
                Mat::from_row_major(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
            };
            let a = gen(n, m);
            let b = gen(m, p);
            let c = gen(p, q);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-9);
        }

        #[test]
        fn spectral_theorem_holds(seed in any::<u64>(), n in 1usize..8) {
            let a = random_symmetric(n, seed);
            let r = eigen_symmetric(&a).unwrap();
            let vtv = matmul(&r.vectors.transpose(), &r.vectors).unwrap();
            prop_assert!(vtv.max_abs_diff(&Mat::identity(n)) < 1e-9);
            prop_assert!((r.values.iter().sum::<f64>() - a.trace()).abs() < 1e-9);
            prop_assert!(r.reconstruct().max_abs_diff(&a) < 1e-8);
            prop_assert!(r.values.windows(2).all(|w| w[0] >= w[1]));
            for k in 0..n {
                let v = r.vector(k);
                let av = a.mul_vec(&v).unwrap();
                for i in 0..n {
                    prop_assert!((av[i] - r.values[k] * v[i]).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn solve_spd_recovers_rhs(seed in any::<u64>(), n in 1usize..8) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mat::from_row_major(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let mut a = matmul(&m.transpose(), &m).unwrap();
            for i in 0..n {
                a[(i, i)] += 0.5;
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = solve_spd(&a, &b).unwrap();
            let back = a.mul_vec(&x).unwrap();
            let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let resid = back.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(resid / norm_b < 1e-8);
        }
    }
}
