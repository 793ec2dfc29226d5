//! Wrapped normal distribution on the Poincaré disk.
//!
//! A draw `v ~ N(0, Σ)` in the origin tangent plane is transported to the
//! mean and pushed through the exponential map there. Densities are reported
//! both against Euclidean coordinates of the disk (what importance weights
//! need) and against the hyperbolic area element.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::geometry::{exp_map, log_map, parallel_transport_from_origin, DiskPoint, TangentVector};
use crate::real::Real;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean point and lower Cholesky factor `[l11, l21, l22]` of the tangent covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WrappedNormalParams<T = f64> {
    pub mean: DiskPoint<T>,
    pub chol: [T; 3],
}

impl WrappedNormalParams<f64> {
    /// From a symmetric positive-definite 2x2 covariance.
    pub fn new(mean: DiskPoint, cov: [[f64; 2]; 2]) -> Result<Self, Error> {
        if (cov[0][1] - cov[1][0]).abs() > 1e-12 * (cov[0][0].abs() + cov[1][1].abs()) {
            return Err(Error::InvalidParameter("covariance is not symmetric".into()));
        }
        let l11 = cov[0][0].sqrt();
        let l21 = cov[1][0] / l11;
        let r = cov[1][1] - l21 * l21;
        if !(cov[0][0] > 0.0 && r > 0.0 && l21.is_finite()) {
            return Err(Error::InvalidParameter("covariance is not positive definite".into()));
        }
        Ok(Self { mean, chol: [l11, l21, r.sqrt()] })
    }

    pub fn isotropic(mean: DiskPoint, variance: f64) -> Result<Self, Error> {
        Self::new(mean, [[variance, 0.0], [0.0, variance]])
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        let [a, b, c] = self.chol;
        [[a * a, a * b], [a * b, b * b + c * c]]
    }
}

impl<T: Real> WrappedNormalParams<T> {
    /// Diagonal covariance `diag(sx^2, sy^2)` given standard deviations.
    pub fn diagonal(mean: DiskPoint<T>, sx: T, sy: T) -> Self {
        Self { mean, chol: [sx, T::zero(), sy] }
    }

    fn apply_chol(&self, eps: [T; 2]) -> TangentVector<T> {
        let [a, b, c] = self.chol;
        TangentVector::new(a * eps[0], b * eps[0] + c * eps[1])
    }

    fn solve_chol(&self, v: &TangentVector<T>) -> [T; 2] {
        let [a, b, c] = self.chol;
        let e0 = v.vx / a;
        [e0, (v.vy - b * e0) / c]
    }

    /// Deterministic part of sampling: maps a standard normal pair to the
    /// tangent draw and the disk point.
    pub fn push_forward(&self, eps: [T; 2]) -> (DiskPoint<T>, TangentVector<T>) {
        let v = self.apply_chol(eps);
        let u = parallel_transport_from_origin(&v, &self.mean);
        (exp_map(&self.mean, &u), v)
    }

    /// Log density of the point reached from tangent draw `v`, against
    /// Euclidean coordinates of the disk.
    pub fn log_density_from_tangent(&self, v: &TangentVector<T>) -> T {
        let e = self.solve_chol(v);
        let [a, _, c] = self.chol;
        let log_gauss = -(e[0] * e[0] + e[1] * e[1]) * 0.5 - (a * c).abs().ln() - LN_2PI;
        log_gauss - projection_log_det(&self.mean, v).log_det
    }

    /// Recovers the origin-plane tangent draw that maps to `point`.
    pub fn tangent_of(&self, point: &DiskPoint<T>) -> TangentVector<T> {
        let u = log_map(&self.mean, point);
        u.scale(T::one() / (T::one() - self.mean.norm2()))
    }
}

/// Samples `(point, tangent_draw)`.
pub fn wn_sample<R: Rng + ?Sized>(params: &WrappedNormalParams, rng: &mut R) -> (DiskPoint, TangentVector) {
    let eps = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    params.push_forward(eps)
}

/// Log density against Euclidean coordinates `dx dy`.
pub fn wn_log_density_euclidean<T: Real>(point: &DiskPoint<T>, params: &WrappedNormalParams<T>) -> T {
    params.log_density_from_tangent(&params.tangent_of(point))
}

/// Log density against the hyperbolic area element `λ_z^2 dx dy`.
pub fn wn_log_density<T: Real>(point: &DiskPoint<T>, params: &WrappedNormalParams<T>) -> T {
    wn_log_density_euclidean(point, params) - point.lambda().ln() * 2.0
}

/// Log-determinant of the sampling map, split as transport then exp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionJacobian<T = f64> {
    pub log_det: T,
    pub log_det_exp: T,
    pub log_det_pt: T,
}

/// Jacobian of `v ↦ exp_mean((1-|mean|^2) v)`.
///
/// With `b = 1-|mean|^2`, `u = b v`, `x = b|u|` and `z` the image: transport
/// contributes `2 log b`; the radial map `u ↦ tanh(x) û` has determinant
/// `b^2 sinh(x) / (x cosh^3 x)`; the Möbius translation by the mean has
/// `((1-|z|^2) cosh^2 x)^2`. Together:
/// `2 log b + ln_sinhc(x) + ln_cosh(x) + 2 log(1-|z|^2)` for the exp part.
pub fn projection_log_det<T: Real>(mean: &DiskPoint<T>, tangent: &TangentVector<T>) -> ProjectionJacobian<T> {
    let b = T::one() - mean.norm2();
    let log_det_pt = b.ln() * 2.0;
    let u = parallel_transport_from_origin(tangent, mean);
    let z = exp_map(mean, &u);
    let x = b * u.norm();
    let log_det_exp = b.ln() * 2.0 + x.ln_sinhc() + ln_cosh(x) + (T::one() - z.norm2()).ln() * 2.0;
    ProjectionJacobian { log_det: log_det_exp + log_det_pt, log_det_exp, log_det_pt }
}

fn ln_cosh<T: Real>(x: T) -> T {
    let a = x.abs();
    a + ((a * -2.0).exp() + 1.0).ln() - std::f64::consts::LN_2
}
