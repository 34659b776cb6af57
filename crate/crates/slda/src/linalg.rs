//! Dense symmetric positive-definite factorization and multivariate Gaussian
//! sampling, parameterized by the precision matrix.
//!
//! The classifier update needs one draw from `N(mu, P⁻¹)` per sweep where `P`
//! is a small dense precision matrix. Factoring `P = LLᵀ` and solving two
//! triangular systems gives the same draw as inverting `P` explicitly, with
//! better numerics.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square data of length n*n")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({i},{j}): {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("matrix is not positive definite (pivot {pivot} at column {col})")]
    NotSpd { col: usize, pivot: f64 },
    #[error("dimension mismatch: vector length {vec}, matrix dimension {mat}")]
    DimensionMismatch { vec: usize, mat: usize },
}

/// Row-major dense symmetric matrix, validated on construction.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SpdMatrix {
    /// Wraps row-major data, checking squareness and symmetry to a 1e-12
    /// relative tolerance. Positive definiteness is established by
    /// [`SpdMatrix::cholesky`].
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != n * n {
            return Err(LinalgError::NotSquare {
                rows: n,
                cols: data.len().checked_div(n).unwrap_or(0),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let a = data[i * n + j];
                let b = data[j * n + i];
                let scale = a.abs().max(b.abs());
                if (a - b).abs() > 1e-12 * scale.max(1.0) {
                    return Err(LinalgError::NotSymmetric { i, j, a, b });
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Factors `self = LLᵀ` with `L` lower triangular and a positive diagonal.
    pub fn cholesky(&self) -> Result<CholeskyFactor, LinalgError> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = self.data[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d.is_nan() || d <= 0.0 {
                return Err(LinalgError::NotSpd { col: j, pivot: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(CholeskyFactor { n, l })
    }
}

/// Lower-triangular Cholesky factor `L` with `LLᵀ` equal to the factored
/// matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Solves `L x = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check_len(b)?;
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.l[i * n + k] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        Ok(x)
    }

    /// Solves `Lᵀ x = b` by backward substitution.
    pub fn solve_transposed(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check_len(b)?;
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        Ok(x)
    }

    /// Solves `LLᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let y = self.solve_lower(b)?;
        self.solve_transposed(&y)
    }

    fn check_len(&self, b: &[f64]) -> Result<(), LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                vec: b.len(),
                mat: self.n,
            });
        }
        Ok(())
    }
}

/// One draw from `N(mu, precision⁻¹)`.
///
/// With `LLᵀ = precision` and `u ~ N(0, I)`, the draw is `mu + L⁻ᵀ u`; no
/// explicit inversion is performed.
pub fn sample_mvn<R: Rng + ?Sized>(
    mu: &[f64],
    precision: &SpdMatrix,
    rng: &mut R,
) -> Result<Vec<f64>, LinalgError> {
    if mu.len() != precision.dim() {
        return Err(LinalgError::DimensionMismatch {
            vec: mu.len(),
            mat: precision.dim(),
        });
    }
    let chol = precision.cholesky()?;
    sample_mvn_with_factor(mu, &chol, rng)
}

/// Same draw as [`sample_mvn`] but reusing an existing factor of the
/// precision matrix.
pub fn sample_mvn_with_factor<R: Rng + ?Sized>(
    mu: &[f64],
    precision_chol: &CholeskyFactor,
    rng: &mut R,
) -> Result<Vec<f64>, LinalgError> {
    let u: Vec<f64> = (0..precision_chol.dim())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let x = precision_chol.solve_transposed(&u)?;
    Ok(mu.iter().zip(&x).map(|(m, v)| m + v).collect())
}
