use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const NEG_EIGEN_TOL: f64 = -1e-8;
const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

/// Sample mean and unbiased covariance of the rows.
pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    let d = samples.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::InvalidInput("embeddings must be nonempty".into()));
    }
    if n <= d {
        return Err(Error::InvalidInput(format!("{n} samples for dimension {d}: need more samples than dimensions")));
    }
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Shape("embeddings have differing lengths".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x;
    for j in 0..d {
        let m = mean[j];
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

fn eigenvalues(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::try_new(sym, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))
}

fn clamp_eigen(lambda: f64) -> Result<f64> {
    if lambda < NEG_EIGEN_TOL {
        Err(Error::Numerical(format!("eigenvalue {lambda} is significantly negative")))
    } else {
        Ok(lambda.max(0.0))
    }
}

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2(Σ1Σ2)^{1/2})`.
///
/// `Σ1Σ2` is similar to the symmetric `Σ1^{1/2} Σ2 Σ1^{1/2}`, so the trace of
/// its square root is the sum of square roots of that matrix's eigenvalues.
pub fn frechet_from_moments(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    if mu1.len() != mu2.len() || s1.shape() != s2.shape() || s1.nrows() != mu1.len() {
        return Err(Error::Shape("Gaussian moments have mismatched dimensions".into()));
    }
    let e1 = eigenvalues(s1.clone())?;
    let roots = e1
        .eigenvalues
        .iter()
        .map(|&l| clamp_eigen(l).map(f64::sqrt))
        .collect::<Result<Vec<_>>>()?;
    let sqrt1 = &e1.eigenvectors * DMatrix::from_diagonal(&DVector::from_vec(roots)) * e1.eigenvectors.transpose();
    let m = &sqrt1 * s2 * &sqrt1;
    let tr_sqrt: f64 = eigenvalues(m)?
        .eigenvalues
        .iter()
        .map(|&l| clamp_eigen(l).map(f64::sqrt))
        .sum::<Result<f64>>()?;
    let diff = mu1 - mu2;
    Ok(diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * tr_sqrt)
}

pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (m1, s1) = fit_gaussian(a)?;
    let (m2, s2) = fit_gaussian(b)?;
    frechet_from_moments(&m1, &s1, &m2, &s2)
}
