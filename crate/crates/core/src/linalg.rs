//! Small dense symmetric systems used by the row solves.

use nalgebra::{DMatrix, DVector};

/// A dense `dim x dim` symmetric matrix, stored in full.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    /// `self += coef * x x^T`
    pub fn add_outer(&mut self, coef: f64, x: &[f64]) {
        if coef == 0.0 {
            return;
        }
        let d = self.dim;
        for (r, &xr) in x.iter().enumerate() {
            let s = coef * xr;
            let row = &mut self.data[r * d..(r + 1) * d];
            for (dst, &xc) in row.iter_mut().zip(x) {
                *dst += s * xc;
            }
        }
    }

    /// `self += coef * other`
    pub fn add_scaled(&mut self, coef: f64, other: &SymMatrix) {
        if coef == 0.0 {
            return;
        }
        for (dst, &src) in self.data.iter_mut().zip(&other.data) {
            *dst += coef * src;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|r| {
                self.data[r * d..(r + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `tr(self * other)`; both symmetric so this is the elementwise sum.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Weighted second-moment matrix `sum_i w_i x_i x_i^T` over rows.
    pub fn gram<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a [f64])>,
    {
        let mut g = Self::zeros(dim);
        for (w, x) in rows {
            g.add_outer(w, x);
        }
        g
    }
}

/// Outcome of a symmetric positive definite solve.
pub struct Solved {
    pub x: Vec<f64>,
    /// Set when the system was not positive definite and jitter was added.
    pub jittered: bool,
}

pub const SINGULAR_JITTER: f64 = 1e-10;

/// Solve `a x = b` by Cholesky; on failure retry with `a + 1e-10 I`, and as a
/// last resort fall back to an SVD least-squares solve.
pub fn solve_spd(a: &SymMatrix, b: &[f64]) -> Solved {
    let d = a.dim;
    let m = DMatrix::from_row_slice(d, d, &a.data);
    let rhs = DVector::from_column_slice(b);
    if let Some(ch) = m.clone().cholesky() {
        return Solved {
            x: ch.solve(&rhs).as_slice().to_vec(),
            jittered: false,
        };
    }
    let mut jit = m.clone();
    for i in 0..d {
        jit[(i, i)] += SINGULAR_JITTER;
    }
    if let Some(ch) = jit.clone().cholesky() {
        return Solved {
            x: ch.solve(&rhs).as_slice().to_vec(),
            jittered: true,
        };
    }
    let x = jit
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map(|v| v.as_slice().to_vec())
        .unwrap_or_else(|_| vec![0.0; d]);
    Solved { x, jittered: true }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut a = SymMatrix::scaled_identity(2, 2.0);
        a.add_outer(1.0, &[1.0, 1.0]);
        // [[3,1],[1,3]] x = [4,4] -> x = [1,1]
        let s = solve_spd(&a, &[4.0, 4.0]);
        assert!(!s.jittered);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_gets_jitter() {
        let a = SymMatrix::zeros(2);
        let s = solve_spd(&a, &[0.0, 0.0]);
        assert!(s.jittered);
        assert_eq!(s.x, vec![0.0, 0.0]);
    }

    #[test]
    fn trace_product_matches_explicit() {
        let mut a = SymMatrix::zeros(2);
        a.add_outer(1.0, &[1.0, 2.0]);
        let mut b = SymMatrix::zeros(2);
        b.add_outer(1.0, &[3.0, -1.0]);
        // tr(x x^T y y^T) = (x.y)^2 = 1
        assert!((a.trace_product(&b) - 1.0).abs() < 1e-12);
    }
}
