use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Flattened 4×4 average pooling of a `(c, h, w)` image: `16·c` features.
pub fn toy_features(image: &Tensor) -> Result<Vec<f64>> {
    let s = image.shape();
    if s.len() != 3 || !s[1].is_multiple_of(4) || s[2] != s[1] {
        return Err(Error::shape(
            "toy_features",
            format!("{s:?}, expected square (c, h, w) with side divisible by 4"),
        ));
    }
    let batch = image.clone().reshape(vec![1, s[0], s[1], s[2]])?;
    Ok(tensor::avgpool(&batch, s[1] / 4)?.into_data())
}

/// Sample mean and unbiased covariance; adds `1e-6·I` when there are
/// fewer than `dim + 1` samples.
pub fn gaussian_fit(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = features.len();
    let d = features
        .first()
        .map(Vec::len)
        .ok_or(Error::Empty("gaussian_fit"))?;
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::shape(
            "gaussian_fit",
            "ragged or empty feature vectors",
        ));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = centered.transpose() * &centered / denom;
    if n < d + 1 {
        for j in 0..d {
            cov[(j, j)] += 1e-6;
        }
    }
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`.
pub fn frechet_gaussian_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = gaussian_fit(a)?;
    let (mb, cb) = gaussian_fit(b)?;
    if ma.len() != mb.len() {
        return Err(Error::shape(
            "frechet",
            format!("feature sizes {} and {}", ma.len(), mb.len()),
        ));
    }
    let ra = sym_sqrt(&ca);
    let mut inner = &ra * &cb * &ra;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let dist = (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(dist.max(0.0))
}
