//! Dense kernels on row-major slices.

use crate::error::{Error, Result};

/// `a (m×k) · b (k×n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` where `a` is `m×k` and `b` is `n×k`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] = dot(a_row, b_row);
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factors `a + ridge·I`. Only the lower triangle of `a` is read.
    pub fn factor(a: &[f64], n: usize, ridge: f64) -> Result<Self> {
        let mut lower = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = a[j * n + j] + ridge;
            for p in 0..j {
                diag -= lower[j * n + p] * lower[j * n + p];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Singular { pivot: j });
            }
            let ljj = diag.sqrt();
            lower[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for p in 0..j {
                    s -= lower[i * n + p] * lower[j * n + p];
                }
                lower[i * n + j] = s / ljj;
            }
        }
        Ok(Self { n, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A·X = B` for `B` of shape `n×k`.
    pub fn solve(&self, b: &[f64], k: usize) -> Vec<f64> {
        let n = self.n;
        let l = &self.lower;
        let mut x = b.to_vec();
        // forward: L·y = b
        for i in 0..n {
            for p in 0..i {
                let lip = l[i * n + p];
                if lip == 0.0 {
                    continue;
                }
                for c in 0..k {
                    x[i * k + c] -= lip * x[p * k + c];
                }
            }
            let lii = l[i * n + i];
            for c in 0..k {
                x[i * k + c] /= lii;
            }
        }
        // backward: Lᵀ·x = y
        for i in (0..n).rev() {
            for p in i + 1..n {
                let lpi = l[p * n + i];
                if lpi == 0.0 {
                    continue;
                }
                for c in 0..k {
                    x[i * k + c] -= lpi * x[p * k + c];
                }
            }
            let lii = l[i * n + i];
            for c in 0..k {
                x[i * k + c] /= lii;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3×2
        let ab = matmul(&a, &b, 2, 3, 2);
        assert_eq!(ab, vec![58.0, 64.0, 139.0, 154.0]);
        let at = transpose(&a, 2, 3);
        assert_eq!(matmul_tn(&at, &b, 3, 2, 2), ab);
        let bt = transpose(&b, 3, 2);
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 2), ab);
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        // second leading minor is zero
        let a = [1.0, 1.0, 1.0, 1.0];
        match Cholesky::factor(&a, 2, 0.0) {
            Err(Error::Singular { pivot }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Cholesky::factor(&a, 2, 1e-6).is_ok());
    }

    #[test]
    fn cholesky_solves_multiple_columns() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let chol = Cholesky::factor(&a, 2, 0.0).unwrap();
        let b = [2.0, 0.0, 1.0, 1.0]; // columns e.g. [2,1] and [0,1]
        let x = chol.solve(&b, 2);
        let back = matmul(&a, &x, 2, 2, 2);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
