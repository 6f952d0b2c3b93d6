//! Closed-form bivariate max-stable quantities.
//!
//! Exponent functions V, their partial derivatives, bivariate densities,
//! extremal coefficients theta = V(1,1) and the tail dependence coefficient
//! chi = 2 - theta, for the Brown-Resnick and extremal-t families.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Student-t distribution with cached normalization; degrees of freedom may
/// be non-integer.
#[derive(Debug, Clone)]
pub struct TDist {
    dof: f64,
    ln_norm: f64,
}

impl TDist {
    pub fn new(dof: f64) -> Result<Self> {
        if !(dof > 0.0) {
            return Err(Error::Domain(format!("degrees of freedom {dof} must be > 0")));
        }
        Ok(TDist {
            dof,
            ln_norm: ln_gamma(0.5 * (dof + 1.0))
                - ln_gamma(0.5 * dof)
                - 0.5 * (dof * std::f64::consts::PI).ln(),
        })
    }

    /// CDF through the regularized incomplete beta evaluated away from its
    /// unstable endpoint: `T(x) = 1/2 + sign(x)/2 * I_{x^2/(dof+x^2)}(1/2, dof/2)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.5;
        }
        let z = x * x / (self.dof + x * x);
        let half_tail = 0.5 * beta_reg(0.5, 0.5 * self.dof, z);
        if x > 0.0 {
            0.5 + half_tail
        } else {
            0.5 - half_tail
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (self.ln_norm - 0.5 * (self.dof + 1.0) * (x * x / self.dof).ln_1p()).exp()
    }

    /// Derivative of the density.
    pub fn dpdf(&self, x: f64) -> f64 {
        -self.pdf(x) * (self.dof + 1.0) * x / (self.dof + x * x)
    }
}

/// Dependence of a single site pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairDependence {
    BrownResnick { gamma: f64 },
    ExtremalT { rho: f64, nu: f64 },
}

impl PairDependence {
    fn validate(&self) -> Result<()> {
        match *self {
            PairDependence::BrownResnick { gamma } => {
                if !(gamma >= 0.0) || !gamma.is_finite() {
                    return Err(Error::Domain(format!("variogram value {gamma} must be finite and >= 0")));
                }
            }
            PairDependence::ExtremalT { rho, nu } => {
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(Error::Domain(format!("correlation {rho} outside [-1, 1]")));
                }
                if !(nu > 0.0) {
                    return Err(Error::Domain(format!("nu = {nu} must be > 0")));
                }
            }
        }
        Ok(())
    }
}

fn check_positive(z1: f64, z2: f64) -> Result<()> {
    if !(z1 > 0.0 && z2 > 0.0) {
        return Err(Error::Domain(format!("exponent function needs z1, z2 > 0, got ({z1}, {z2})")));
    }
    Ok(())
}

/// Brown-Resnick bivariate exponent function
/// `V(z1,z2) = Phi(b/2 - log(z1/z2)/b)/z1 + Phi(b/2 - log(z2/z1)/b)/z2`
/// with `b = sqrt(2 gamma)`; at gamma = 0 the complete-dependence limit
/// `1/min(z1,z2)`.
pub fn v_br(z1: f64, z2: f64, gamma: f64) -> Result<f64> {
    check_positive(z1, z2)?;
    PairDependence::BrownResnick { gamma }.validate()?;
    if gamma == 0.0 {
        return Ok(1.0 / z1.min(z2));
    }
    let b = (2.0 * gamma).sqrt();
    let lr = (z2 / z1).ln();
    Ok(norm_cdf(0.5 * b + lr / b) / z1 + norm_cdf(0.5 * b - lr / b) / z2)
}

/// Extremal-t bivariate exponent function with
/// `a = sqrt((1 - rho^2) / (nu + 1))`; at rho = 1 the complete-dependence
/// limit `1/min(z1,z2)`.
pub fn v_et(z1: f64, z2: f64, rho: f64, nu: f64) -> Result<f64> {
    check_positive(z1, z2)?;
    PairDependence::ExtremalT { rho, nu }.validate()?;
    if rho == 1.0 {
        return Ok(1.0 / z1.min(z2));
    }
    let a = ((1.0 - rho * rho) / (nu + 1.0)).sqrt();
    let t = TDist::new(nu + 1.0)?;
    let u = (z2 / z1).powf(1.0 / nu);
    Ok(t.cdf((u - rho) / a) / z1 + t.cdf((1.0 / u - rho) / a) / z2)
}

/// Pairwise extremal coefficient `theta = V(1,1) = 2 Phi(sqrt(gamma/2))`.
pub fn theta_br(gamma: f64) -> f64 {
    2.0 * norm_cdf((0.5 * gamma).sqrt())
}

/// Pairwise extremal coefficient `theta = V(1,1) = 2 T_{nu+1}((1-rho)/a)`.
pub fn theta_et(rho: f64, nu: f64) -> f64 {
    if rho >= 1.0 {
        return 1.0;
    }
    if rho <= -1.0 {
        return 2.0;
    }
    let a = ((1.0 - rho * rho) / (nu + 1.0)).sqrt();
    let t = TDist::new(nu + 1.0).expect("nu + 1 > 0");
    2.0 * t.cdf((1.0 - rho) / a)
}

/// Tail dependence coefficient `chi = 2 - theta`.
pub fn chi_pair(theta: f64) -> f64 {
    2.0 - theta
}

/// Extremal coefficient of a [`PairDependence`].
pub fn theta_pair(pair: &PairDependence) -> f64 {
    match *pair {
        PairDependence::BrownResnick { gamma } => theta_br(gamma),
        PairDependence::ExtremalT { rho, nu } => theta_et(rho, nu),
    }
}

/// Exponent function of a [`PairDependence`].
pub fn exponent(z1: f64, z2: f64, pair: &PairDependence) -> Result<f64> {
    match *pair {
        PairDependence::BrownResnick { gamma } => v_br(z1, z2, gamma),
        PairDependence::ExtremalT { rho, nu } => v_et(z1, z2, rho, nu),
    }
}

/// V and its first and mixed second partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct VPartials {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

/// Analytic partials of the Brown-Resnick exponent function. The cross terms
/// of dV/dz1 cancel through `phi(w1) z2 = phi(w2) z1`, leaving
/// `dV/dz1 = -Phi(w1)/z1^2` and `d2V/dz1dz2 = -phi(w1)/(b z1^2 z2)`.
pub fn v_br_partials(z1: f64, z2: f64, gamma: f64) -> Result<VPartials> {
    check_positive(z1, z2)?;
    if !(gamma > 0.0) {
        return Err(Error::Degenerate(format!(
            "gamma = {gamma}: the Brown-Resnick pair density needs gamma > 0"
        )));
    }
    let b = (2.0 * gamma).sqrt();
    let lr = (z2 / z1).ln();
    let w1 = 0.5 * b + lr / b;
    let w2 = 0.5 * b - lr / b;
    let v = norm_cdf(w1) / z1 + norm_cdf(w2) / z2;
    Ok(VPartials {
        v,
        d1: -norm_cdf(w1) / (z1 * z1),
        d2: -norm_cdf(w2) / (z2 * z2),
        d12: -norm_pdf(w1) / (b * z1 * z1 * z2),
    })
}

/// Analytic partials of the extremal-t exponent function.
pub fn v_et_partials(z1: f64, z2: f64, rho: f64, nu: f64) -> Result<VPartials> {
    check_positive(z1, z2)?;
    PairDependence::ExtremalT { rho, nu }.validate()?;
    if rho.abs() == 1.0 {
        return Err(Error::Degenerate(format!(
            "rho = {rho}: the extremal-t pair density needs |rho| < 1"
        )));
    }
    let a = ((1.0 - rho * rho) / (nu + 1.0)).sqrt();
    let t = TDist::new(nu + 1.0)?;
    let u = (z2 / z1).powf(1.0 / nu);
    let v1 = (u - rho) / a;
    let v2 = (1.0 / u - rho) / a;
    let (big_t1, big_t2) = (t.cdf(v1), t.cdf(v2));
    let (t1, t2) = (t.pdf(v1), t.pdf(v2));
    let (dt1, dt2) = (t.dpdf(v1), t.dpdf(v2));
    let an = a * nu;

    let v = big_t1 / z1 + big_t2 / z2;
    let d1 = -big_t1 / (z1 * z1) - t1 * u / (an * z1 * z1) + t2 / (an * u * z1 * z2);
    let d2 = -big_t2 / (z2 * z2) - t2 / (an * u * z2 * z2) + t1 * u / (an * z1 * z2);
    let d12 = -t1 * u / (an * z1 * z1 * z2)
        - dt1 * u * u / (an * an * z1 * z1 * z2)
        - t1 * u / (an * nu * z1 * z1 * z2)
        - dt2 / (an * an * u * u * z1 * z2 * z2)
        - t2 * (1.0 + 1.0 / nu) / (an * u * z1 * z2 * z2);
    Ok(VPartials { v, d1, d2, d12 })
}

/// Partials of the exponent function of a [`PairDependence`].
pub fn exponent_partials(z1: f64, z2: f64, pair: &PairDependence) -> Result<VPartials> {
    match *pair {
        PairDependence::BrownResnick { gamma } => v_br_partials(z1, z2, gamma),
        PairDependence::ExtremalT { rho, nu } => v_et_partials(z1, z2, rho, nu),
    }
}

/// Bivariate max-stable density
/// `f(z1,z2) = exp(-V) (dV/dz1 dV/dz2 - d2V/dz1dz2)`.
///
/// Degenerate pairs (gamma = 0 or |rho| = 1) have no planar Lebesgue density
/// and are rejected.
pub fn pair_density(z1: f64, z2: f64, pair: &PairDependence) -> Result<f64> {
    let p = exponent_partials(z1, z2, pair)?;
    Ok((-p.v).exp() * (p.d1 * p.d2 - p.d12).max(0.0))
}

/// Log of [`pair_density`]; `-inf` when the density underflows.
pub fn log_pair_density(z1: f64, z2: f64, pair: &PairDependence) -> Result<f64> {
    let p = exponent_partials(z1, z2, pair)?;
    let bracket = p.d1 * p.d2 - p.d12;
    if bracket <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-p.v + bracket.ln())
}

/// A pair prepared for repeated density evaluation (shared Student-t
/// normalization across calls).
#[derive(Debug, Clone)]
pub enum PreparedPair {
    Br { gamma: f64, b: f64 },
    Et { rho: f64, nu: f64, a: f64, t: TDist },
}

impl PreparedPair {
    pub fn new(pair: &PairDependence) -> Result<Self> {
        pair.validate()?;
        match *pair {
            PairDependence::BrownResnick { gamma } => {
                if gamma == 0.0 {
                    return Err(Error::Degenerate("gamma = 0".into()));
                }
                Ok(PreparedPair::Br { gamma, b: (2.0 * gamma).sqrt() })
            }
            PairDependence::ExtremalT { rho, nu } => {
                if rho.abs() == 1.0 {
                    return Err(Error::Degenerate(format!("rho = {rho}")));
                }
                Ok(PreparedPair::Et {
                    rho,
                    nu,
                    a: ((1.0 - rho * rho) / (nu + 1.0)).sqrt(),
                    t: TDist::new(nu + 1.0)?,
                })
            }
        }
    }

    /// Log density; `-inf` on underflow. Positivity of the arguments is the
    /// caller's contract.
    pub fn log_density(&self, z1: f64, z2: f64) -> f64 {
        match self {
            PreparedPair::Br { b, .. } => {
                let lr = (z2 / z1).ln();
                let w1 = 0.5 * b + lr / b;
                let w2 = 0.5 * b - lr / b;
                let (p1, p2) = (norm_cdf(w1), norm_cdf(w2));
                let v = p1 / z1 + p2 / z2;
                let bracket = p1 * p2 / (z1 * z1 * z2 * z2) + norm_pdf(w1) / (b * z1 * z1 * z2);
                if bracket <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                -v + bracket.ln()
            }
            PreparedPair::Et { rho, nu, a, t } => {
                let u = (z2 / z1).powf(1.0 / nu);
                let v1 = (u - rho) / a;
                let v2 = (1.0 / u - rho) / a;
                let (big_t1, big_t2) = (t.cdf(v1), t.cdf(v2));
                let (t1, t2) = (t.pdf(v1), t.pdf(v2));
                let (dt1, dt2) = (t.dpdf(v1), t.dpdf(v2));
                let an = a * nu;
                let v = big_t1 / z1 + big_t2 / z2;
                let d1 = -big_t1 / (z1 * z1) - t1 * u / (an * z1 * z1) + t2 / (an * u * z1 * z2);
                let d2 = -big_t2 / (z2 * z2) - t2 / (an * u * z2 * z2) + t1 * u / (an * z1 * z2);
                let d12 = -t1 * u / (an * z1 * z1 * z2)
                    - dt1 * u * u / (an * an * z1 * z1 * z2)
                    - t1 * u / (an * nu * z1 * z1 * z2)
                    - dt2 / (an * an * u * u * z1 * z2 * z2)
                    - t2 * (1.0 + 1.0 / nu) / (an * u * z1 * z2 * z2);
                let bracket = d1 * d2 - d12;
                if bracket <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                -v + bracket.ln()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn student_t_cdf_matches_closed_forms() {
        // T1 = 1/2 + atan(x)/pi, T2 = 1/2 + x / (2 sqrt(2 + x^2)),
        // T3 = 1/2 + (x/sqrt(3)/(1+x^2/3) + atan(x/sqrt(3)))/pi.
        let t1 = TDist::new(1.0).unwrap();
        let t2 = TDist::new(2.0).unwrap();
        let t3 = TDist::new(3.0).unwrap();
        for x in [-8.0, -2.5, -0.3, 0.0, 0.7, 1.41421356, 3.0, 12.0] {
            assert_relative_eq!(
                t1.cdf(x),
                0.5 + x.atan() / std::f64::consts::PI,
                epsilon = 1e-12
            );
            assert_relative_eq!(t2.cdf(x), 0.5 + x / (2.0 * (2.0 + x * x).sqrt()), epsilon = 1e-12);
            let s = x / 3f64.sqrt();
            assert_relative_eq!(
                t3.cdf(x),
                0.5 + (s / (1.0 + s * s) + s.atan()) / std::f64::consts::PI,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn student_t_cdf_matches_quadrature_at_noninteger_dof() {
        // Composite Simpson over the density, absolute target 1e-12.
        for dof in [2.5, 5.3] {
            let t = TDist::new(dof).unwrap();
            for x in [-3.2, -0.9, 0.0, 0.4, 1.7, 2.2, 4.8, 7.5, 20.0, 60.0] {
                let (lo, hi) = (-2000.0, x);
                let n = 2_000_000;
                let h = (hi - lo) / n as f64;
                let mut s = t.pdf(lo) + t.pdf(hi);
                for i in 1..n {
                    let w = if i % 2 == 0 { 2.0 } else { 4.0 };
                    s += w * t.pdf(lo + i as f64 * h);
                }
                let tail = 1.0 - t.cdf(-lo); // mass beyond the truncation, by symmetry
                let quad = s * h / 3.0 + tail;
                assert!(
                    (t.cdf(x) - quad).abs() < 1e-12,
                    "dof={dof} x={x}: cdf={} quad={}",
                    t.cdf(x),
                    quad
                );
            }
        }
    }

    #[test]
    fn student_t_pdf_matches_derivative_of_cdf() {
        let t = TDist::new(3.7).unwrap();
        let h = 1e-4;
        for x in [-4.0, -1.0, 0.0, 0.5, 2.5] {
            let fd = (t.cdf(x + h) - t.cdf(x - h)) / (2.0 * h);
            assert_relative_eq!(t.pdf(x), fd, max_relative = 1e-6);
            let fd2 = (t.pdf(x + h) - t.pdf(x - h)) / (2.0 * h);
            assert_relative_eq!(t.dpdf(x), fd2, max_relative = 1e-6, epsilon = 1e-10);
        }
    }

    #[test]
    fn v_br_limits() {
        // Independence limit: gamma huge, z1 = z2 = 1 -> 2.
        assert_relative_eq!(v_br(1.0, 1.0, 1e8).unwrap(), 2.0, epsilon = 1e-12);
        // Complete dependence: gamma = 0 -> 1/min.
        assert_relative_eq!(v_br(1.0, 2.0, 0.0).unwrap(), 1.0);
        // gamma = 2 => b = 2, z1 = z2 = 1 -> 2 Phi(1).
        assert_relative_eq!(v_br(1.0, 1.0, 2.0).unwrap(), 2.0 * norm_cdf(1.0), epsilon = 1e-14);
        assert_relative_eq!(v_br(1.0, 1.0, 2.0).unwrap(), 1.682689492137, epsilon = 1e-10);
        assert!(v_br(0.0, 1.0, 1.0).is_err());
        assert!(v_br(1.0, -2.0, 1.0).is_err());
    }

    #[test]
    fn v_et_limits_and_schlather_oracle() {
        assert_relative_eq!(v_et(1.0, 1.0, 1.0, 3.0).unwrap(), 1.0);
        // nu = 1 is the Schlather case: theta = 1 + sqrt((1 - rho)/2).
        let schlather = |rho: f64| 1.0 + ((1.0 - rho) / 2.0).sqrt();
        assert_relative_eq!(v_et(1.0, 1.0, 0.0, 1.0).unwrap(), schlather(0.0), epsilon = 1e-12);
        assert_relative_eq!(v_et(1.0, 1.0, 0.0, 1.0).unwrap(), 1.707106781187, epsilon = 1e-10);
        assert_relative_eq!(v_et(1.0, 1.0, 0.5, 1.0).unwrap(), 1.5, epsilon = 1e-12);
        for rho in [-0.8, -0.2, 0.3, 0.9] {
            assert_relative_eq!(theta_et(rho, 1.0), schlather(rho), epsilon = 1e-12);
        }
        assert!(v_et(1.0, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn theta_values() {
        assert_relative_eq!(theta_br(0.0), 1.0);
        assert_relative_eq!(theta_br(1e9), 2.0, epsilon = 1e-12);
        assert_relative_eq!(theta_br(2.0), 2.0 * norm_cdf(1.0), epsilon = 1e-14);
        assert_relative_eq!(theta_et(0.0, 1.0), 1.0 + 0.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(theta_et(1.0, 2.0), 1.0);
        assert_eq!(theta_et(-1.0, 2.0), 2.0);
    }

    #[test]
    fn chi_is_two_minus_theta() {
        assert_eq!(chi_pair(1.0), 1.0);
        assert_eq!(chi_pair(2.0), 0.0);
        assert_relative_eq!(chi_pair(theta_br(2.0)), 2.0 - 2.0 * norm_cdf(1.0));
        assert_relative_eq!(chi_pair(1.682689), 0.317311, epsilon = 1e-6);
    }

    #[test]
    fn theta_monotonicity() {
        // theta_br nondecreasing in gamma, theta_et nonincreasing in rho.
        let gammas: Vec<f64> = (0..60).map(|i| i as f64 * 0.25).collect();
        for w in gammas.windows(2) {
            assert!(theta_br(w[1]) >= theta_br(w[0]) - 1e-14);
        }
        let rhos: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 * 0.05).collect();
        for nu in [0.5, 1.0, 4.0, 15.0] {
            for w in rhos.windows(2) {
                assert!(theta_et(w[1], nu) <= theta_et(w[0], nu) + 1e-12);
            }
        }
    }

    fn random_pairs(n: usize, seed: u64) -> Vec<PairDependence> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    PairDependence::BrownResnick { gamma: rng.random_range(0.05..6.0) }
                } else {
                    PairDependence::ExtremalT {
                        rho: rng.random_range(-0.9..0.99),
                        nu: rng.random_range(0.3..12.0),
                    }
                }
            })
            .collect()
    }

    #[test]
    fn partials_match_central_finite_differences() {
        // 50 random points per the dependence draw, rel. tol 1e-5. The first
        // partials are differenced from V itself; the mixed partial is
        // differenced from the (already verified) analytic d1, which keeps
        // the cancellation noise below the tolerance.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for pair in random_pairs(50, 9) {
            let z1 = rng.random_range(0.2..5.0);
            let z2 = rng.random_range(0.2..5.0);
            let p = exponent_partials(z1, z2, &pair).unwrap();
            let h1 = 1e-5 * z1.max(1.0);
            let h2 = 1e-5 * z2.max(1.0);
            let vf = |a: f64, b: f64| exponent(a, b, &pair).unwrap();
            let fd1 = (vf(z1 + h1, z2) - vf(z1 - h1, z2)) / (2.0 * h1);
            let fd2 = (vf(z1, z2 + h2) - vf(z1, z2 - h2)) / (2.0 * h2);
            assert_relative_eq!(p.d1, fd1, max_relative = 1e-5);
            assert_relative_eq!(p.d2, fd2, max_relative = 1e-5);
            let d1f = |b: f64| exponent_partials(z1, b, &pair).unwrap().d1;
            let fd12 = (d1f(z2 + h2) - d1f(z2 - h2)) / (2.0 * h2);
            assert_relative_eq!(p.d12, fd12, max_relative = 1e-5, epsilon = 1e-11);
        }
    }

    #[test]
    fn exponent_euler_identity() {
        // Homogeneity of order -1 gives z1 d1 + z2 d2 = -V.
        for pair in random_pairs(20, 3) {
            let (z1, z2) = (0.8, 2.6);
            let p = exponent_partials(z1, z2, &pair).unwrap();
            assert_relative_eq!(z1 * p.d1 + z2 * p.d2, -p.v, max_relative = 1e-9);
        }
    }

    #[test]
    fn exponent_homogeneity_and_bounds() {
        for pair in random_pairs(30, 17) {
            for (z1, z2) in [(1.0, 1.0), (0.3, 2.0), (5.0, 0.1)] {
                let v = exponent(z1, z2, &pair).unwrap();
                for t in [0.5, 2.0, 13.0] {
                    assert_relative_eq!(exponent(t * z1, t * z2, &pair).unwrap(), v / t, max_relative = 1e-12);
                }
                assert!(v >= (1.0 / z1).max(1.0 / z2) - 1e-12);
                assert!(v <= 1.0 / z1 + 1.0 / z2 + 1e-12);
            }
        }
    }

    #[test]
    fn exponent_marginal_consistency() {
        // V(z, inf) = 1/z, evaluated at z2 = 1e12.
        for pair in random_pairs(10, 23) {
            for z in [0.5, 1.0, 3.0] {
                assert_relative_eq!(exponent(z, 1e12, &pair).unwrap(), 1.0 / z, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn density_is_symmetric_and_matches_cdf_differences() {
        let pair = PairDependence::BrownResnick { gamma: 1.0 };
        let f = pair_density(1.0, 1.5, &pair).unwrap();
        assert_relative_eq!(f, pair_density(1.5, 1.0, &pair).unwrap(), max_relative = 1e-12);
        // Mixed second difference of exp(-V) at (1.0, 1.5), step 1e-4.
        let h = 1e-4;
        let cdf = |a: f64, b: f64| (-v_br(a, b, 1.0).unwrap()).exp();
        let fd = (cdf(1.0 + h, 1.5 + h) - cdf(1.0 + h, 1.5 - h) - cdf(1.0 - h, 1.5 + h)
            + cdf(1.0 - h, 1.5 - h))
            / (4.0 * h * h);
        assert_relative_eq!(f, fd, max_relative = 1e-4);

        let pair = PairDependence::ExtremalT { rho: 0.4, nu: 2.3 };
        let f = pair_density(0.8, 2.0, &pair).unwrap();
        assert_relative_eq!(f, pair_density(2.0, 0.8, &pair).unwrap(), max_relative = 1e-12);
        let cdf = |a: f64, b: f64| (-v_et(a, b, 0.4, 2.3).unwrap()).exp();
        let fd = (cdf(0.8 + h, 2.0 + h) - cdf(0.8 + h, 2.0 - h) - cdf(0.8 - h, 2.0 + h)
            + cdf(0.8 - h, 2.0 - h))
            / (4.0 * h * h);
        assert_relative_eq!(f, fd, max_relative = 1e-4);
    }

    #[test]
    fn degenerate_pairs_have_no_density() {
        assert!(matches!(
            pair_density(1.0, 2.0, &PairDependence::BrownResnick { gamma: 0.0 }),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            pair_density(1.0, 2.0, &PairDependence::ExtremalT { rho: 1.0, nu: 2.0 }),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn prepared_pair_agrees_with_direct_density() {
        for pair in random_pairs(12, 5) {
            let prep = PreparedPair::new(&pair).unwrap();
            for (z1, z2) in [(0.4, 0.9), (1.0, 1.0), (3.0, 0.2), (10.0, 14.0)] {
                let direct = log_pair_density(z1, z2, &pair).unwrap();
                assert_relative_eq!(prep.log_density(z1, z2), direct, max_relative = 1e-12);
            }
        }
    }
}
