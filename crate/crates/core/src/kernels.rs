//! Variogram and correlation kernels.
//!
//! Stationary power kernels (isotropic and geometrically anisotropic), the two
//! covariate constructions (a power-sum form and its Bernstein-transform
//! generalization that allows bounded variograms), the five named
//! non-stationary variants M1/M2/M3/M_BD/M_HG and the nugget wrappers. All
//! kernels are pure functions of immutable parameters and safe to evaluate in
//! parallel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DependenceSpec, Family, Structure};
use crate::sites::SitePoint;

/// Threshold below which the exponent ratio of the Bernstein form switches to
/// its analytic limit; avoids catastrophic cancellation near alpha = 0.
const ALPHA_RATIO_LIMIT: f64 = 1e-8;

/// 2x2 anisotropy matrix `diag(q1, q2) * R(theta)` with rotation
/// `R(theta) = [[cos, sin], [-sin, cos]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyMatrix2D {
    q1: f64,
    q2: f64,
    theta: f64,
}

impl AnisotropyMatrix2D {
    pub fn new(q1: f64, q2: f64, theta: f64) -> Result<Self> {
        if !(q1 > 0.0 && q2 > 0.0) {
            return Err(Error::Domain(format!("anisotropy needs q1, q2 > 0, got ({q1}, {q2})")));
        }
        if !(-std::f64::consts::FRAC_PI_4..=std::f64::consts::FRAC_PI_4).contains(&theta) {
            return Err(Error::Domain(format!("rotation angle {theta} outside [-pi/4, pi/4]")));
        }
        Ok(AnisotropyMatrix2D { q1, q2, theta })
    }

    /// Isotropic scaling `q * I` as a degenerate anisotropy.
    pub fn isotropic(q: f64) -> Result<Self> {
        Self::new(q, q, 0.0)
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    pub fn q2(&self) -> f64 {
        self.q2
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Materialized matrix entries, row-major.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        [[self.q1 * c, self.q1 * s], [-self.q2 * s, self.q2 * c]]
    }

    /// `|| A h ||` for a separation vector h.
    pub fn scaled_norm(&self, hx: f64, hy: f64) -> f64 {
        let m = self.matrix();
        let u = m[0][0] * hx + m[0][1] * hy;
        let v = m[1][0] * hx + m[1][1] * hy;
        u.hypot(v)
    }
}

fn sep(a: &[f64], b: &[f64]) -> (f64, f64) {
    (a[0] - b[0], a[1] - b[1])
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Power variogram `(||q (x-y)||)^alpha0`.
pub fn vario_iso(x: &[f64], y: &[f64], q: f64, alpha0: f64) -> f64 {
    (q * euclidean(x, y)).powf(alpha0)
}

/// Powered exponential correlation `exp(-(||q (x-y)||)^alpha0)`.
pub fn corr_iso(x: &[f64], y: &[f64], q: f64, alpha0: f64) -> f64 {
    (-vario_iso(x, y, q, alpha0)).exp()
}

/// Anisotropic power variogram `||A (x-y)||^alpha0`, planar coordinates.
pub fn vario_aniso(x: &[f64], y: &[f64], a: &AnisotropyMatrix2D, alpha0: f64) -> f64 {
    let (hx, hy) = sep(x, y);
    a.scaled_norm(hx, hy).powf(alpha0)
}

/// One covariate block of the power-sum construction: an index subset of the
/// covariate vector, a scale matrix on that subset and a power exponent.
#[derive(Debug, Clone)]
pub struct CovariateTerm {
    pub indices: Vec<usize>,
    pub scale: DMatrix<f64>,
    pub alpha: f64,
}

/// Power-sum kernel over coordinates and covariate blocks:
/// `gamma(x,y) = (||A0 (x-y)||^{a0} + sum_j ||A_j (c(x)_Ij - c(y)_Ij)||^{a_j})^beta`.
///
/// Valid for any real matrices when all power exponents lie in (0, 2] and
/// beta in (0, 1]. Overlapping index sets keep the kernel valid but hurt
/// identifiability, so construction only warns about them.
#[derive(Debug, Clone)]
pub struct PowerSumKernel {
    pub a0: DMatrix<f64>,
    pub alpha0: f64,
    pub terms: Vec<CovariateTerm>,
    pub beta: f64,
}

impl PowerSumKernel {
    pub fn new(
        a0: DMatrix<f64>,
        alpha0: f64,
        terms: Vec<CovariateTerm>,
        beta: f64,
    ) -> Result<Self> {
        if !a0.is_square() {
            return Err(Error::Domain("A0 must be square".into()));
        }
        check_power("alpha0", alpha0)?;
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Domain(format!("beta = {beta} outside (0, 1]")));
        }
        for (j, t) in terms.iter().enumerate() {
            check_power(&format!("alpha{}", j + 1), t.alpha)?;
            if t.scale.nrows() != t.indices.len() || !t.scale.is_square() {
                return Err(Error::Domain(format!(
                    "scale matrix of covariate term {} must be {}x{}",
                    j + 1,
                    t.indices.len(),
                    t.indices.len()
                )));
            }
        }
        for i in 0..terms.len() {
            for j in (i + 1)..terms.len() {
                if terms[i].indices.iter().any(|x| terms[j].indices.contains(x)) {
                    log::warn!(
                        "covariate index sets {} and {} overlap; the kernel stays valid but parameters may not be identifiable",
                        i + 1,
                        j + 1
                    );
                }
            }
        }
        Ok(PowerSumKernel { a0, alpha0, terms, beta })
    }

    /// Inner sum before the outer beta power.
    pub fn inner(&self, x: SitePoint, y: SitePoint) -> f64 {
        let d = self.a0.nrows();
        let h = DVector::from_fn(d, |i, _| x.coords[i] - y.coords[i]);
        let mut g = (&self.a0 * h).norm().powf(self.alpha0);
        for t in &self.terms {
            let dc = DVector::from_fn(t.indices.len(), |i, _| {
                x.covariates[t.indices[i]] - y.covariates[t.indices[i]]
            });
            g += (&t.scale * dc).norm().powf(t.alpha);
        }
        g
    }

    /// The power-sum variogram itself.
    pub fn vario(&self, x: SitePoint, y: SitePoint) -> f64 {
        self.inner(x, y).powf(self.beta)
    }

    /// Bernstein-transformed variogram
    /// `((1 + g^beta)^{alpha/beta} - 1) / (2^{alpha/beta} - 1)` with
    /// `alpha in (-inf, 1]`; bounded for negative alpha. The removable
    /// singularity at alpha = 0 is evaluated through its limit
    /// `log2(1 + g^beta)`.
    pub fn vario_bernstein(&self, x: SitePoint, y: SitePoint, alpha: f64) -> Result<f64> {
        if alpha > 1.0 {
            return Err(Error::Domain(format!("alpha = {alpha} outside (-inf, 1]")));
        }
        Ok(bernstein_transform(self.vario(x, y), alpha / self.beta))
    }
}

fn check_power(name: &str, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::Domain(format!("{name} = {alpha} outside (0, 2]")));
    }
    Ok(())
}

/// `((1 + gb)^r - 1) / (2^r - 1)` with the analytic limit `log2(1 + gb)` for
/// |r| below [`ALPHA_RATIO_LIMIT`]; `gb` is the already-beta-powered inner sum.
fn bernstein_transform(g_beta: f64, ratio: f64) -> f64 {
    if ratio.abs() < ALPHA_RATIO_LIMIT {
        return g_beta.ln_1p() / std::f64::consts::LN_2;
    }
    ((1.0 + g_beta).powf(ratio) - 1.0) / (2f64.powf(ratio) - 1.0)
}

/// Non-stationary variant M1: common power on spatial and covariate parts,
/// `||A0 (x-y)||^{a0} + (q3 |c(x)-c(y)|)^{a0}` with the first covariate.
pub fn vario_m1(x: SitePoint, y: SitePoint, a0: &AnisotropyMatrix2D, alpha0: f64, q3: f64) -> f64 {
    let (hx, hy) = sep(x.coords, y.coords);
    let dc = (q3 * (x.covariates[0] - y.covariates[0])).abs();
    a0.scaled_norm(hx, hy).powf(alpha0) + dc.powf(alpha0)
}

/// Non-stationary variant M2:
/// `(||A0 (x-y)||^{a0} + (q3 |c(x)-c(y)|)^{a1})^beta`.
pub fn vario_m2(
    x: SitePoint,
    y: SitePoint,
    a0: &AnisotropyMatrix2D,
    alpha0: f64,
    alpha1: f64,
    q3: f64,
    beta: f64,
) -> f64 {
    m2_inner(x, y, a0, alpha0, alpha1, q3).powf(beta)
}

fn m2_inner(
    x: SitePoint,
    y: SitePoint,
    a0: &AnisotropyMatrix2D,
    alpha0: f64,
    alpha1: f64,
    q3: f64,
) -> f64 {
    let (hx, hy) = sep(x.coords, y.coords);
    let dc = (q3 * (x.covariates[0] - y.covariates[0])).abs();
    a0.scaled_norm(hx, hy).powf(alpha0) + dc.powf(alpha1)
}

/// Non-stationary variant M3: the Bernstein form of M2's inner sum, planar
/// coordinates and a single covariate.
pub fn vario_m3(
    x: SitePoint,
    y: SitePoint,
    a0: &AnisotropyMatrix2D,
    alpha0: f64,
    alpha1: f64,
    q3: f64,
    beta: f64,
    alpha: f64,
) -> f64 {
    let g_beta = m2_inner(x, y, a0, alpha0, alpha1, q3).powf(beta);
    bernstein_transform(g_beta, alpha / beta)
}

/// Link-parameterized locally anisotropic correlation (M_HG). The local
/// ranges use log links and the local anisotropy a tanh link, keeping
/// `w_x, w_y > 0` and `delta in (-1, 1)` under unconstrained optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HgParams {
    pub a_wx: f64,
    pub b_wx: f64,
    pub a_wy: f64,
    pub b_wy: f64,
    pub a_del: f64,
    pub b_del: f64,
    pub alpha: f64,
}

impl HgParams {
    /// Local kernel matrix entries (w_x^2, w_x w_y delta, w_y^2) at one site.
    fn omega(&self, covariate: f64) -> (f64, f64, f64) {
        let wx = (self.a_wx + self.b_wx * covariate).exp();
        let wy = (self.a_wy + self.b_wy * covariate).exp();
        let delta = (self.a_del + self.b_del * covariate).tanh();
        (wx * wx, wx * wy * delta, wy * wy)
    }
}

/// Locally anisotropic correlation with spatially varying 2x2 kernel
/// matrices:
/// `|O(x)|^{1/4} |O(y)|^{1/4} |(O(x)+O(y))/2|^{-1/2} exp(-Q(x,y)^{alpha/2})`
/// with `Q` the quadratic form of the averaged matrix inverse.
pub fn corr_hg(x: SitePoint, y: SitePoint, p: &HgParams) -> Result<f64> {
    check_power("alpha", p.alpha)?;
    let (xx1, xy1, yy1) = p.omega(x.covariates[0]);
    let (xx2, xy2, yy2) = p.omega(y.covariates[0]);
    let det1 = xx1 * yy1 - xy1 * xy1;
    let det2 = xx2 * yy2 - xy2 * xy2;
    // Averaged matrix.
    let m11 = 0.5 * (xx1 + xx2);
    let m12 = 0.5 * (xy1 + xy2);
    let m22 = 0.5 * (yy1 + yy2);
    let det_m = m11 * m22 - m12 * m12;
    if !(det_m.is_finite() && det_m > 0.0 && det1 > 0.0 && det2 > 0.0) {
        return Err(Error::Numerical(format!(
            "averaged local kernel matrix is not invertible (det = {det_m})"
        )));
    }
    let (hx, hy) = sep(x.coords, y.coords);
    let q_form = (m22 * hx * hx - 2.0 * m12 * hx * hy + m11 * hy * hy) / det_m;
    let prefactor = (det1 * det2).powf(0.25) / det_m.sqrt();
    Ok(prefactor * (-q_form.powf(0.5 * p.alpha)).exp())
}

/// `exp(-gamma)`: a valid correlation whenever `gamma` is a valid variogram.
pub fn corr_from_vario(gamma: f64) -> f64 {
    (-gamma).exp()
}

/// Nugget wrapper for variograms: `nug * 1{x != y} + gamma_tilde`.
pub fn add_nugget_vario(gamma_tilde: f64, nug: f64, same_site: bool) -> f64 {
    if same_site {
        0.0
    } else {
        nug + gamma_tilde
    }
}

/// Nugget wrapper for correlations: `nug * 1{x == y} + (1 - nug) * rho_tilde`.
pub fn add_nugget_corr(rho_tilde: f64, nug: f64, same_site: bool) -> f64 {
    if same_site {
        1.0
    } else {
        (1.0 - nug) * rho_tilde
    }
}

/// A dependence spec compiled into an evaluatable kernel.
#[derive(Debug, Clone)]
pub struct Kernel {
    family: Family,
    form: KernelForm,
    nug: f64,
    nu: Option<f64>,
}

#[derive(Debug, Clone)]
enum KernelForm {
    Iso { q: f64, alpha0: f64 },
    Aniso { a: AnisotropyMatrix2D, alpha0: f64 },
    M1 { a: AnisotropyMatrix2D, alpha0: f64, q3: f64 },
    M2 { a: AnisotropyMatrix2D, alpha0: f64, alpha1: f64, q3: f64, beta: f64 },
    M3 { a: AnisotropyMatrix2D, alpha0: f64, alpha1: f64, q3: f64, beta: f64, alpha: f64 },
    Mhg(HgParams),
}

impl Kernel {
    /// Compile a validated spec. M_BD is materialized as M2 with both power
    /// exponents pinned at 2.
    pub fn from_spec(spec: &DependenceSpec) -> Result<Self> {
        spec.validate()?;
        let v = |name: &str| spec.value(name);
        let aniso = || -> Result<AnisotropyMatrix2D> {
            AnisotropyMatrix2D::new(v("q1")?, v("q2")?, v("theta")?)
        };
        let form = match spec.structure() {
            Structure::Iso => KernelForm::Iso { q: v("q")?, alpha0: v("alpha0")? },
            Structure::Aniso => KernelForm::Aniso { a: aniso()?, alpha0: v("alpha0")? },
            Structure::M1 => KernelForm::M1 { a: aniso()?, alpha0: v("alpha0")?, q3: v("q3")? },
            Structure::M2 => KernelForm::M2 {
                a: aniso()?,
                alpha0: v("alpha0")?,
                alpha1: v("alpha1")?,
                q3: v("q3")?,
                beta: v("beta")?,
            },
            Structure::M3 => KernelForm::M3 {
                a: aniso()?,
                alpha0: v("alpha0")?,
                alpha1: v("alpha1")?,
                q3: v("q3")?,
                beta: v("beta")?,
                alpha: v("alpha")?,
            },
            Structure::Mbd => KernelForm::M2 {
                a: aniso()?,
                alpha0: 2.0,
                alpha1: 2.0,
                q3: v("q3")?,
                beta: v("beta")?,
            },
            Structure::Mhg => KernelForm::Mhg(HgParams {
                a_wx: v("a_wx")?,
                b_wx: v("b_wx")?,
                a_wy: v("a_wy")?,
                b_wy: v("b_wy")?,
                a_del: v("a_del")?,
                b_del: v("b_del")?,
                alpha: v("alpha0")?,
            }),
        };
        let nu = match spec.family() {
            Family::ExtremalT => Some(v("nu")?),
            Family::BrownResnick => None,
        };
        Ok(Kernel { family: spec.family(), form, nug: v("nug")?, nu })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn nu(&self) -> Option<f64> {
        self.nu
    }

    /// Continuous part gamma_tilde, before the nugget. Not defined for M_HG,
    /// whose natural scale is a correlation.
    fn base_vario(&self, x: SitePoint, y: SitePoint) -> Result<f64> {
        match &self.form {
            KernelForm::Iso { q, alpha0 } => Ok(vario_iso(x.coords, y.coords, *q, *alpha0)),
            KernelForm::Aniso { a, alpha0 } => Ok(vario_aniso(x.coords, y.coords, a, *alpha0)),
            KernelForm::M1 { a, alpha0, q3 } => Ok(vario_m1(x, y, a, *alpha0, *q3)),
            KernelForm::M2 { a, alpha0, alpha1, q3, beta } => {
                Ok(vario_m2(x, y, a, *alpha0, *alpha1, *q3, *beta))
            }
            KernelForm::M3 { a, alpha0, alpha1, q3, beta, alpha } => {
                Ok(vario_m3(x, y, a, *alpha0, *alpha1, *q3, *beta, *alpha))
            }
            KernelForm::Mhg(_) => Err(Error::Validation(
                "M_HG has no variogram form; use the correlation".into(),
            )),
        }
    }

    /// Continuous part rho_tilde, before the nugget.
    fn base_corr(&self, x: SitePoint, y: SitePoint) -> Result<f64> {
        match &self.form {
            KernelForm::Mhg(p) => corr_hg(x, y, p),
            _ => Ok(corr_from_vario(self.base_vario(x, y)?)),
        }
    }

    /// Nugget-wrapped variogram; requires the Brown-Resnick family.
    pub fn vario(&self, x: SitePoint, y: SitePoint) -> Result<f64> {
        if self.family != Family::BrownResnick {
            return Err(Error::Validation("variogram requested from an extremal-t kernel".into()));
        }
        let same = x.coords == y.coords;
        Ok(add_nugget_vario(if same { 0.0 } else { self.base_vario(x, y)? }, self.nug, same))
    }

    /// Nugget-wrapped correlation; requires the extremal-t family.
    pub fn corr(&self, x: SitePoint, y: SitePoint) -> Result<f64> {
        if self.family != Family::ExtremalT {
            return Err(Error::Validation("correlation requested from a Brown-Resnick kernel".into()));
        }
        let same = x.coords == y.coords;
        Ok(add_nugget_corr(if same { 1.0 } else { self.base_corr(x, y)? }, self.nug, same))
    }

    /// Family-appropriate pairwise dependence for a site pair.
    pub fn pair_dependence(&self, x: SitePoint, y: SitePoint) -> Result<crate::bivariate::PairDependence> {
        match self.family {
            Family::BrownResnick => Ok(crate::bivariate::PairDependence::BrownResnick {
                gamma: self.vario(x, y)?,
            }),
            Family::ExtremalT => Ok(crate::bivariate::PairDependence::ExtremalT {
                rho: self.corr(x, y)?,
                nu: self.nu.expect("ET kernel carries nu"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn point<'a>(coords: &'a [f64], covariates: &'a [f64]) -> SitePoint<'a> {
        SitePoint { coords, covariates }
    }

    #[test]
    fn iso_vario_basics() {
        // gamma(s, s) = 0
        assert_eq!(vario_iso(&[1.0, 2.0], &[1.0, 2.0], 0.7, 1.5), 0.0);
        // q = 1, alpha0 = 2, distance 3 -> 9
        assert_relative_eq!(vario_iso(&[0.0, 0.0], &[3.0, 0.0], 1.0, 2.0), 9.0);
        // q = 0.5, alpha0 = 1, distance 4 -> 2
        assert_relative_eq!(vario_iso(&[0.0, 0.0], &[0.0, 4.0], 0.5, 1.0), 2.0);
    }

    #[test]
    fn iso_corr_basics() {
        assert_eq!(corr_iso(&[1.0, 1.0], &[1.0, 1.0], 0.3, 1.0), 1.0);
        let d = std::f64::consts::LN_2;
        assert_relative_eq!(corr_iso(&[0.0, 0.0], &[d, 0.0], 1.0, 1.0), 0.5, epsilon = 1e-14);
        assert_relative_eq!(corr_iso(&[0.0, 0.0], &[1e9, 0.0], 1.0, 1.0), 0.0);
    }

    #[test]
    fn aniso_reduces_to_iso_and_evaluates() {
        let a = AnisotropyMatrix2D::isotropic(0.5).unwrap();
        for (x, y) in [([0.0, 0.0], [3.0, 4.0]), ([1.0, -2.0], [5.0, 0.3])] {
            assert_relative_eq!(
                vario_aniso(&x, &y, &a, 1.3),
                vario_iso(&x, &y, 0.5, 1.3),
                epsilon = 1e-14
            );
        }
        let a = AnisotropyMatrix2D::new(2.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(vario_aniso(&[1.0, 0.0], &[0.0, 0.0], &a, 1.0), 2.0);
    }

    #[test]
    fn aniso_rotation_identity() {
        // gamma with separation h and angle theta equals gamma with R(theta) h and angle 0.
        let theta = 0.4;
        let a_rot = AnisotropyMatrix2D::new(1.7, 0.6, theta).unwrap();
        let a_axis = AnisotropyMatrix2D::new(1.7, 0.6, 0.0).unwrap();
        let (s, c) = theta.sin_cos();
        for h in [[10.0, 3.0], [-4.0, 7.5], [0.2, -0.1]] {
            let rotated = [c * h[0] + s * h[1], -s * h[0] + c * h[1]];
            assert_relative_eq!(
                vario_aniso(&h, &[0.0, 0.0], &a_rot, 1.4),
                vario_aniso(&rotated, &[0.0, 0.0], &a_axis, 1.4),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn power_sum_kernel_matches_hand_value() {
        // A0 = I, alpha0 = 2, ||x-y|| = 1, one scalar covariate with scale 1,
        // alpha1 = 1, |dc| = 3, beta = 0.5 -> (1 + 3)^0.5 = 2.
        let k = PowerSumKernel::new(
            DMatrix::identity(2, 2),
            2.0,
            vec![CovariateTerm {
                indices: vec![0],
                scale: DMatrix::from_element(1, 1, 1.0),
                alpha: 1.0,
            }],
            0.5,
        )
        .unwrap();
        let x = point(&[0.0, 0.0], &[0.0]);
        let y = point(&[1.0, 0.0], &[3.0]);
        assert_relative_eq!(k.vario(x, y), 2.0, epsilon = 1e-14);
        assert_eq!(k.vario(x, x), 0.0);
    }

    #[test]
    fn power_sum_degenerate_covariate_reduces_to_aniso() {
        let a = AnisotropyMatrix2D::new(1.2, 0.7, 0.2).unwrap();
        let m = a.matrix();
        let a0 = DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]]);
        let k = PowerSumKernel::new(
            a0,
            1.5,
            vec![CovariateTerm {
                indices: vec![0],
                scale: DMatrix::from_element(1, 1, 3.0),
                alpha: 1.0,
            }],
            1.0,
        )
        .unwrap();
        // Equal covariates: the covariate term vanishes and beta = 1.
        let x = point(&[12.0, -3.0], &[0.4]);
        let y = point(&[-1.0, 8.0], &[0.4]);
        assert_relative_eq!(k.vario(x, y), vario_aniso(x.coords, y.coords, &a, 1.5), epsilon = 1e-12);
    }

    #[test]
    fn bernstein_form_fixed_points() {
        // g = 0 -> 0 for any alpha; g^beta = 1 -> 1 for any alpha.
        for alpha in [-3.0, -0.5, 0.0, 0.4, 1.0] {
            assert_relative_eq!(bernstein_transform(0.0, alpha / 0.7), 0.0);
            assert_relative_eq!(bernstein_transform(1.0, alpha / 0.7), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn bernstein_negative_alpha_is_bounded() {
        let beta = 0.8;
        for alpha in [-0.5, -2.0, -7.0] {
            let limit = 1.0 / (1.0 - 2f64.powf(alpha / beta));
            let far = bernstein_transform(1e12, alpha / beta);
            assert!(far <= limit * (1.0 + 1e-12), "far={far} limit={limit}");
            assert_relative_eq!(far, limit, epsilon = 1e-3);
        }
        // alpha >= 0: unbounded along growing separation.
        assert!(bernstein_transform(1e12, 0.9 / 0.8) > 1e3);
    }

    #[test]
    fn bernstein_limit_branch_is_continuous() {
        let g_beta: f64 = 2.3;
        let exact = g_beta.ln_1p() / std::f64::consts::LN_2;
        assert_relative_eq!(bernstein_transform(g_beta, 1e-9), exact, epsilon = 1e-7);
        assert_relative_eq!(bernstein_transform(g_beta, -1e-9), exact, epsilon = 1e-7);
        assert_relative_eq!(bernstein_transform(g_beta, 2e-8), exact, epsilon = 1e-6);
    }

    #[test]
    fn m_nesting_identities() {
        let a = AnisotropyMatrix2D::new(0.03, 0.011, -0.3).unwrap();
        let x = point(&[10.0, 40.0], &[0.9]);
        let y = point(&[-25.0, 4.0], &[0.2]);
        // M2 with beta = 1 and alpha1 = alpha0 equals M1.
        assert_relative_eq!(
            vario_m2(x, y, &a, 1.3, 1.3, 0.7, 1.0),
            vario_m1(x, y, &a, 1.3, 0.7),
            epsilon = 1e-13
        );
        // M1 with q3 = 0 equals the anisotropic variogram.
        assert_relative_eq!(
            vario_m1(x, y, &a, 1.3, 0.0),
            vario_aniso(x.coords, y.coords, &a, 1.3),
            epsilon = 1e-13
        );
        assert_eq!(vario_m1(x, x, &a, 1.3, 0.7), 0.0);
    }

    #[test]
    fn m3_matches_independent_bernstein_evaluation() {
        // M3 evaluated against a from-scratch evaluation of the Bernstein
        // form at random inputs, with alpha = beta reducing to M2 up to the
        // normalization.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a = AnisotropyMatrix2D::new(
                rng.random_range(0.005..0.1),
                rng.random_range(0.005..0.1),
                rng.random_range(-0.7..0.7),
            )
            .unwrap();
            let alpha0 = rng.random_range(0.3..2.0);
            let alpha1 = rng.random_range(0.3..2.0);
            let q3 = rng.random_range(0.0..3.0);
            let beta = rng.random_range(0.2..1.0);
            let alpha = rng.random_range(-2.0..1.0);
            let xc = [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)];
            let yc = [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)];
            let xa = [rng.random_range(0.0..1.5)];
            let ya = [rng.random_range(0.0..1.5)];
            let x = point(&xc, &xa);
            let y = point(&yc, &ya);

            let g = m2_inner(x, y, &a, alpha0, alpha1, q3);
            let direct = ((1.0 + g.powf(beta)).powf(alpha / beta) - 1.0)
                / (2f64.powf(alpha / beta) - 1.0);
            assert_relative_eq!(
                vario_m3(x, y, &a, alpha0, alpha1, q3, beta, alpha),
                direct,
                max_relative = 1e-12
            );

            // alpha = beta: M3 = ((1 + g^beta) - 1)/(2 - 1) = M2.
            assert_relative_eq!(
                vario_m3(x, y, &a, alpha0, alpha1, q3, beta, beta),
                vario_m2(x, y, &a, alpha0, alpha1, q3, beta),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn hg_diagonal_is_one() {
        let p = HgParams {
            a_wx: 3.0,
            b_wx: 0.5,
            a_wy: 2.5,
            b_wy: -0.3,
            a_del: 0.2,
            b_del: 0.1,
            alpha: 1.2,
        };
        let x = point(&[5.0, 9.0], &[0.8]);
        assert_relative_eq!(corr_hg(x, x, &p).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn hg_constant_kernel_reduces_to_powered_exponential() {
        // Omega(s) = w^2 I everywhere collapses to corr_iso with range w.
        let w: f64 = 35.0;
        let p = HgParams {
            a_wx: w.ln(),
            b_wx: 0.0,
            a_wy: w.ln(),
            b_wy: 0.0,
            a_del: 0.0,
            b_del: 0.0,
            alpha: 1.4,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let xc = [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)];
            let yc = [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)];
            let x = point(&xc, &[0.1]);
            let y = point(&yc, &[1.2]);
            assert_relative_eq!(
                corr_hg(x, y, &p).unwrap(),
                corr_iso(&xc, &yc, 1.0 / w, 1.4),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn hg_isotropic_constant_ranges_match_iso_with_delta_zero() {
        // delta == 0 and equal constant ranges: same as the constant-kernel
        // reduction; checked through the anisotropic diagonal as well.
        let p = HgParams {
            a_wx: 3.2,
            b_wx: 0.0,
            a_wy: 3.2,
            b_wy: 0.0,
            a_del: 0.0,
            b_del: 0.0,
            alpha: 0.9,
        };
        let x = point(&[0.0, 0.0], &[0.0]);
        let y = point(&[40.0, -12.0], &[1.5]);
        let w = 3.2f64.exp();
        assert_relative_eq!(
            corr_hg(x, y, &p).unwrap(),
            corr_iso(x.coords, y.coords, 1.0 / w, 0.9),
            max_relative = 1e-12
        );
    }

    #[test]
    fn nugget_wrappers() {
        // Same site: gamma = 0 and rho = 1 regardless of the nugget.
        assert_eq!(add_nugget_vario(123.0, 0.4, true), 0.0);
        assert_eq!(add_nugget_corr(0.2, 0.4, true), 1.0);
        // Zero nugget: identity wrappers.
        assert_eq!(add_nugget_vario(1.0, 0.0, false), 1.0);
        assert_eq!(add_nugget_corr(0.5, 0.0, false), 0.5);
        // Distinct sites.
        assert_relative_eq!(add_nugget_vario(1.0, 0.3, false), 1.3);
        assert_relative_eq!(add_nugget_corr(0.5, 0.3, false), 0.35);
    }

    #[test]
    fn kernel_from_spec_dispatches() {
        let spec = DependenceSpec::new(
            Family::BrownResnick,
            Structure::Iso,
            &[("q", 0.05), ("alpha0", 1.0), ("nug", 0.2)],
        )
        .unwrap();
        let kernel = Kernel::from_spec(&spec).unwrap();
        let x = point(&[0.0, 0.0], &[0.0]);
        let y = point(&[20.0, 0.0], &[0.0]);
        assert_relative_eq!(kernel.vario(x, y).unwrap(), 0.2 + 1.0, epsilon = 1e-12);
        assert_eq!(kernel.vario(x, x).unwrap(), 0.0);
        assert!(kernel.corr(x, y).is_err());
    }

    #[test]
    fn mbd_is_m2_with_squared_exponents() {
        let mut params = vec![
            ("q1", 0.02),
            ("q2", 0.05),
            ("theta", 0.1),
            ("q3", 0.8),
            ("beta", 0.6),
            ("nug", 0.0),
        ];
        let mbd = DependenceSpec::new(Family::BrownResnick, Structure::Mbd, &params).unwrap();
        params.extend_from_slice(&[("alpha0", 2.0), ("alpha1", 2.0)]);
        let m2 = DependenceSpec::new(Family::BrownResnick, Structure::M2, &params).unwrap();
        let (kb, k2) = (Kernel::from_spec(&mbd).unwrap(), Kernel::from_spec(&m2).unwrap());
        let x = point(&[0.0, 0.0], &[0.1]);
        let y = point(&[35.0, -12.0], &[0.9]);
        assert_relative_eq!(kb.vario(x, y).unwrap(), k2.vario(x, y).unwrap(), epsilon = 1e-13);
    }
}
