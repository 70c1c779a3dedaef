//! Small dense symmetric positive-definite helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// A factored SPD system `M x = b`.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        m.clone()
            .cholesky()
            .map(|chol| SpdFactor { chol })
            .ok_or(Error::NotPositiveDefinite)
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `‖a‖_{M⁻¹} = √(aᵀ M⁻¹ a)`, evaluated as `‖L⁻¹ a‖₂` with `M = L Lᵀ`.
    pub fn inv_norm(&self, a: &[f64]) -> f64 {
        let l = self.chol.l_dirty();
        let n = a.len();
        let mut y = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = a[i];
            for (j, yj) in y.iter().enumerate().take(i) {
                s -= l[(i, j)] * yj;
            }
            let yi = s / l[(i, i)];
            y[i] = yi;
            acc += yi * yi;
        }
        acc.sqrt()
    }
}

/// Accumulates `a aᵀ` into `gram`. Float products commute, so the result
/// stays exactly symmetric.
pub(crate) fn add_outer(gram: &mut DMatrix<f64>, a: &[f64]) {
    let d = a.len();
    let data = gram.as_mut_slice();
    for j in 0..d {
        let aj = a[j];
        let col = &mut data[j * d..(j + 1) * d];
        for (g, ai) in col.iter_mut().zip(a) {
            *g += ai * aj;
        }
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub(crate) fn distance(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}
