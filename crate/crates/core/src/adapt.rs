//! PCA projection and CORAL second-order alignment between feature domains.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn to_na(x: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]])
}

fn to_nd(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn column_mean(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("non-empty matrix")
}

/// Unbiased sample covariance of the rows of `x`.
pub fn covariance(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = column_mean(x);
    let centered = &x - &mean;
    centered.t().dot(&centered) / (x.nrows() as f64 - 1.0)
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// Orthonormal rows, shape `(k, d)`.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

pub fn pca_fit(x: ArrayView2<'_, f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::input("PCA needs at least 2 rows"));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::param(format!(
            "PCA components must lie in 1..={}, got {k}",
            (n - 1).min(d)
        )));
    }
    let mean = column_mean(x);
    let (values, vectors) = sorted_eigen(to_na(covariance(x).view()));
    let mut components = Array2::zeros((k, d));
    for c in 0..k {
        let col = vectors.column(c);
        // Sign convention: the largest-magnitude loading is positive.
        let pivot = (0..d).fold(0, |best, i| if col[i].abs() > col[best].abs() { i } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[[c, i]] = sign * col[i];
        }
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: values[..k].iter().map(|v| v.max(0.0)).collect(),
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::shape("PCA input width", self.dim(), x.ncols()));
        }
        Ok((&x - &self.mean).dot(&self.components.t()))
    }

    pub fn inverse_transform(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.n_components() {
            return Err(Error::shape("PCA scores width", self.n_components(), z.ncols()));
        }
        Ok(z.dot(&self.components) + &self.mean)
    }
}

pub fn pca_transform(model: &PcaModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.transform(x)
}

/// Affine map carrying source-domain rows onto the target domain's mean and
/// covariance: `(x - μ_s) C_s^{-1/2} C_t^{1/2} + μ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoralTransform {
    pub source_mean: Array1<f64>,
    pub target_mean: Array1<f64>,
    pub source_whitener: Array2<f64>,
    pub target_colorer: Array2<f64>,
    pub ridge: f64,
}

/// Symmetric power `m^p` with eigenvalues floored at `floor`.
fn symmetric_power(m: &DMatrix<f64>, p: f64, floor: f64) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(m.clone());
    let scaled = DVector::from_iterator(values.len(), values.iter().map(|v| v.max(floor).powf(p)));
    &vectors * DMatrix::from_diagonal(&scaled) * vectors.transpose()
}

fn regularized_cov(x: ArrayView2<'_, f64>, ridge: f64, which: &str) -> Result<DMatrix<f64>> {
    let d = x.ncols();
    let c = to_na(covariance(x).view()) + DMatrix::identity(d, d) * ridge;
    let (values, _) = sorted_eigen(c.clone());
    let top = values[0].abs().max(f64::MIN_POSITIVE);
    let bottom = *values.last().expect("non-empty");
    if ridge == 0.0 && bottom <= 1e-12 * top {
        return Err(Error::Singular(format!(
            "{which} covariance is singular (smallest eigenvalue {bottom:e}); use a positive ridge"
        )));
    }
    Ok(c)
}

pub fn coral_fit(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    ridge: f64,
) -> Result<CoralTransform> {
    if source.ncols() != target.ncols() {
        return Err(Error::shape("CORAL feature width", source.ncols(), target.ncols()));
    }
    let d = source.ncols();
    for (name, m) in [("source", source), ("target", target)] {
        if m.nrows() < d + 1 {
            return Err(Error::input(format!(
                "CORAL {name} needs at least {} rows, got {}",
                d + 1,
                m.nrows()
            )));
        }
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::param(format!("ridge must be non-negative, got {ridge}")));
    }
    let cs = regularized_cov(source, ridge, "source")?;
    let ct = regularized_cov(target, ridge, "target")?;
    let floor = ridge.max(f64::MIN_POSITIVE);
    Ok(CoralTransform {
        source_mean: column_mean(source),
        target_mean: column_mean(target),
        source_whitener: to_nd(&symmetric_power(&cs, -0.5, floor)),
        target_colorer: to_nd(&symmetric_power(&ct, 0.5, floor)),
        ridge,
    })
}

impl CoralTransform {
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.source_mean.len() {
            return Err(Error::shape("CORAL input width", self.source_mean.len(), x.ncols()));
        }
        Ok((&x - &self.source_mean)
            .dot(&self.source_whitener)
            .dot(&self.target_colorer)
            + &self.target_mean)
    }
}

pub fn coral_apply(t: &CoralTransform, source: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    t.apply(source)
}

/// Relative Frobenius distance `‖a - b‖ / ‖b‖`.
pub fn relative_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    diff / b.mapv(|v| v * v).sum().sqrt()
}
