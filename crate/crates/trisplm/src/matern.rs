//! Matern (nu = 1) covariance and exact Gaussian random field sampling via
//! Cholesky factorization of the covariance matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::cholesky_lower_blocked;
use crate::mesh::Point;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("covariance matrix is not positive definite, even after adding jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
}

/// Modified Bessel function K_1, via the Abramowitz & Stegun polynomial
/// approximations (9.8.3, 9.8.7, 9.8.8); absolute error below 1e-7.
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "K_1 needs a positive argument");
    if x <= 2.0 {
        let t = x / 3.75;
        let t2 = t * t;
        // x^-1 I_1(x)
        let i1_over_x = 0.5
            + t2 * (0.87890594
                + t2 * (0.51498869
                    + t2 * (0.15084934 + t2 * (0.02658733 + t2 * (0.00301532 + t2 * 0.00032411)))));
        let i1 = x * i1_over_x;
        let u = x * x / 4.0;
        // x K_1(x)
        let xk1 = x * (x / 2.0).ln() * i1
            + 1.0
            + u * (0.15443144
                + u * (-0.67278579
                    + u * (-0.18156897
                        + u * (-0.01919402 + u * (-0.00110404 + u * (-0.00004686))))));
        xk1 / x
    } else {
        let u = 2.0 / x;
        let poly = 1.25331414
            + u * (0.23498619
                + u * (-0.03655620
                    + u * (0.01504268 + u * (-0.00780353 + u * (0.00325614 + u * (-0.00068245))))));
        poly * (-x).exp() / x.sqrt()
    }
}

/// Matern covariance with smoothness nu = 1:
/// C(h) = variance * (h / range) K_1(h / range), C(0) = variance.
#[derive(Debug, Clone, Copy)]
pub struct MaternCovariance {
    pub variance: f64,
    pub range: f64,
    /// Added to the diagonal; keeps the factorization of dense covariance
    /// matrices of smooth fields positive definite.
    pub nugget: f64,
}

impl MaternCovariance {
    pub fn new(variance: f64, range: f64, nugget: f64) -> Self {
        MaternCovariance { variance, range, nugget }
    }

    /// Correlation at distance h (1 at h = 0).
    pub fn correlation(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 1.0;
        }
        let s = h / self.range;
        s * bessel_k1(s)
    }

    pub fn covariance(&self, h: f64) -> f64 {
        self.variance * self.correlation(h)
    }
}

/// Exact sampler for a stationary Gaussian field at a fixed point set: the
/// covariance matrix is factored once and each draw costs one triangular
/// matrix-vector product.
pub struct FieldSampler {
    chol_lower: DMatrix<f64>,
}

impl FieldSampler {
    pub fn new(points: &[Point], cov: &MaternCovariance) -> Result<Self, FieldError> {
        let n = points.len();
        let mut c = DMatrix::zeros(n, n);
        for j in 0..n {
            c[(j, j)] = cov.variance + cov.nugget;
            for i in (j + 1)..n {
                let v = cov.covariance(points[i].dist(points[j]));
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        if cholesky_lower_blocked(&mut c, 96) {
            return Ok(FieldSampler { chol_lower: c });
        }
        // One jitter escalation before giving up.
        let jitter = 1e-8 * cov.variance.max(1.0);
        let mut c = DMatrix::zeros(n, n);
        for j in 0..n {
            c[(j, j)] = cov.variance + cov.nugget + jitter;
            for i in (j + 1)..n {
                let v = cov.covariance(points[i].dist(points[j]));
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        if cholesky_lower_blocked(&mut c, 96) {
            Ok(FieldSampler { chol_lower: c })
        } else {
            Err(FieldError::NotPositiveDefinite { jitter })
        }
    }

    pub fn len(&self) -> usize {
        self.chol_lower.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One field realization at the sampler's points.
    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        &self.chol_lower * z
    }
}
