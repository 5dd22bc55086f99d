//! Rotation parametrization via the Cayley transform.
//!
//! A parameter vector `theta` fills the strict upper triangle of a skew-symmetric
//! matrix `A` (row-major). The basis is `W = (I + A)(I - A)^{-1}`, which is
//! orthogonal with determinant +1 for every skew `A`, and equals `I` at `A = 0`.
//! Rows of `W` are the detector directions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Number of free parameters for a `dim x dim` skew-symmetric matrix.
pub fn param_count(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewParams {
    dim: usize,
    theta: Vec<f64>,
}

impl SkewParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            theta: vec![0.0; param_count(dim)],
        }
    }

    pub fn new(dim: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != param_count(dim) {
            return Err(Error::Shape(format!(
                "theta has {} entries, D = {} needs {}",
                theta.len(),
                dim,
                param_count(dim)
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("theta contains non-finite entries".into()));
        }
        Ok(Self { dim, theta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn skew(&self) -> DMatrix<f64> {
        fill_skew(&self.theta, self.dim)
    }

    pub fn basis(&self, detectors: usize) -> Result<BasisMatrix> {
        let mut b = cayley(&self.skew())?;
        b.set_detectors(detectors)?;
        Ok(b)
    }
}

/// Orthogonal `D x D` matrix whose first `detectors` rows are the detector directions.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    w: DMatrix<f64>,
    /// `(I - A)^{-1}`, kept for the gradient pull-back.
    inv: DMatrix<f64>,
    detectors: usize,
}

impl BasisMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn detectors(&self) -> usize {
        self.detectors
    }

    pub fn residual_rows(&self) -> usize {
        self.dim() - self.detectors
    }

    pub fn set_detectors(&mut self, detectors: usize) -> Result<()> {
        if detectors == 0 || detectors > self.dim() {
            return Err(Error::InvalidConfig(format!(
                "detector count {} must lie in 1..={}",
                detectors,
                self.dim()
            )));
        }
        self.detectors = detectors;
        Ok(())
    }

    /// The `I x D` block of detector directions.
    pub fn detector_rows(&self) -> DMatrix<f64> {
        self.w.rows(0, self.detectors).into_owned()
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.w)
    }
}

/// Builds the skew-symmetric matrix whose strict upper triangle is `theta` (row-major).
pub fn skew_from_params(theta: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    if theta.len() != param_count(dim) {
        return Err(Error::Shape(format!(
            "theta has {} entries, D = {} needs {}",
            theta.len(),
            dim,
            param_count(dim)
        )));
    }
    Ok(fill_skew(theta, dim))
}

fn fill_skew(theta: &[f64], dim: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for r in 0..dim {
        for c in r + 1..dim {
            a[(r, c)] = theta[k];
            a[(c, r)] = -theta[k];
            k += 1;
        }
    }
    a
}

/// Cayley transform `W = (I + A)(I - A)^{-1}`.
pub fn cayley(a: &DMatrix<f64>) -> Result<BasisMatrix> {
    let dim = a.nrows();
    if a.ncols() != dim {
        return Err(Error::Shape(format!(
            "Cayley transform needs a square matrix, got {}x{}",
            dim,
            a.ncols()
        )));
    }
    let eye = DMatrix::<f64>::identity(dim, dim);
    let inv = (&eye - a)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("I - A is singular; input is not skew-symmetric".into()))?;
    let w = (&eye + a) * &inv;
    Ok(BasisMatrix {
        w,
        inv,
        detectors: dim,
    })
}

/// Pulls `dL/dW` back to `dL/dtheta`.
///
/// With `B = (I - A)^{-1}`, `dW = (I + W) dA B`, so `dL/dA = (I + W)^T G B^T`;
/// each theta entry collects `dL/dA[r,c] - dL/dA[c,r]`.
pub fn grad_pullback(dl_dw: &DMatrix<f64>, basis: &BasisMatrix) -> Result<Vec<f64>> {
    let dim = basis.dim();
    if dl_dw.shape() != (dim, dim) {
        return Err(Error::Shape(format!(
            "dL/dW is {:?}, basis is {}x{}",
            dl_dw.shape(),
            dim,
            dim
        )));
    }
    let eye = DMatrix::<f64>::identity(dim, dim);
    let h = (&eye + &basis.w).transpose() * dl_dw * basis.inv.transpose();
    let mut grad = Vec::with_capacity(param_count(dim));
    for r in 0..dim {
        for c in r + 1..dim {
            grad.push(h[(r, c)] - h[(c, r)]);
        }
    }
    Ok(grad)
}

/// Convenience form taking raw parameters.
pub fn grad_pullback_theta(dl_dw: &DMatrix<f64>, theta: &[f64], dim: usize) -> Result<Vec<f64>> {
    let basis = cayley(&skew_from_params(theta, dim)?)?;
    grad_pullback(dl_dw, &basis)
}

/// `max |W^T W - I|`.
pub fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    let n = w.ncols();
    let gram = w.transpose() * w;
    let mut err = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { 1.0 } else { 0.0 };
            err = err.max((gram[(r, c)] - target).abs());
        }
    }
    err
}
