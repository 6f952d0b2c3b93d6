//! Numerical definiteness certification for dependence kernels.
//!
//! Variograms must be conditionally negative definite (quadratic form
//! `sum a_i a_j gamma(s_i, s_j) <= 0` over contrasts with `sum a_i = 0`),
//! correlations positive semi-definite. Both properties are checked over
//! random site/covariate draws through two routes: random contrast vectors
//! (always including the extremal eigenvector, so the routes agree) and an
//! eigen-decomposition -- of the doubly-centered matrix `-1/2 H G H` for the
//! CND case, of the correlation matrix itself for the PSD case.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sites::{SitePoint, SiteSet};

/// Relative tolerance of the certification; double-precision eigensolvers on
/// small matrices cannot certify tighter.
pub const DEFINITENESS_TOL: f64 = 1e-8;

const N_RANDOM_CONTRASTS: usize = 8;

/// Outcome of a definiteness check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefinitenessReport {
    pub n_trials: usize,
    /// Smallest eigenvalue seen across trials (of `-1/2 H G H` for CND, of
    /// the correlation matrix for PSD).
    pub min_eigenvalue: f64,
    /// Worst quadratic-form value across trials: the maximum of `a' G a` for
    /// CND (should be <= tol), the minimum of `a' P a` for PSD (>= -tol).
    pub worst_contrast_value: f64,
    pub passed: bool,
    /// Whether the eigenvalue route and the contrast route reached the same
    /// verdict on every trial.
    pub routes_agreed: bool,
    /// Serialized site/covariate draw of the first failing trial.
    pub failing_config: Option<String>,
}

/// Random site configurations: uniform coordinates over a box with a uniform
/// scalar covariate (altitude in km). Defaults mimic the study regions'
/// extent: [0, 300]^2 km with altitude in [0, 1.5] km.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SiteGenerator {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub alt_range: (f64, f64),
}

impl Default for SiteGenerator {
    fn default() -> Self {
        SiteGenerator {
            x_range: (0.0, 300.0),
            y_range: (0.0, 300.0),
            alt_range: (0.0, 1.5),
        }
    }
}

impl SiteGenerator {
    pub fn sample(&self, n_sites: usize, rng: &mut impl Rng) -> SiteSet {
        loop {
            let coords: Vec<Vec<f64>> = (0..n_sites)
                .map(|_| {
                    vec![
                        rng.random_range(self.x_range.0..self.x_range.1),
                        rng.random_range(self.y_range.0..self.y_range.1),
                    ]
                })
                .collect();
            let covariates: Vec<Vec<f64>> = (0..n_sites)
                .map(|_| vec![rng.random_range(self.alt_range.0..self.alt_range.1)])
                .collect();
            let ids = (0..n_sites).map(|i| format!("g{i}")).collect();
            // Coincident draws have probability zero; retry just in case.
            if let Ok(sites) = SiteSet::new(ids, coords, covariates) {
                return sites;
            }
        }
    }
}

/// Kernel signature accepted by the checks.
pub type PairKernel<'a> = dyn Fn(SitePoint, SitePoint) -> Result<f64> + Sync + 'a;

struct TrialOutcome {
    min_eig: f64,
    worst_contrast: f64,
    eig_pass: bool,
    contrast_pass: bool,
    config: Option<String>,
}

fn kernel_matrix(kernel: &PairKernel, sites: &SiteSet) -> Result<DMatrix<f64>> {
    let k = sites.len();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = kernel(sites.point(i), sites.point(j))?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "kernel returned {v} at sites {:?} / {:?}",
                    sites.coords(i),
                    sites.coords(j)
                )));
            }
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn matrix_tol(m: &DMatrix<f64>) -> f64 {
    DEFINITENESS_TOL * m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()))
}

fn unit_normal_vector(k: usize, rng: &mut impl Rng) -> DVector<f64> {
    let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        DVector::from_element(k, (k as f64).sqrt().recip())
    }
}

fn center(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.map(|x| x - mean)
}

fn cnd_trial(kernel: &PairKernel, sites: &SiteSet, rng: &mut impl Rng) -> Result<TrialOutcome> {
    let g = kernel_matrix(kernel, sites)?;
    let k = g.nrows();
    let tol = matrix_tol(&g);

    // B = -1/2 H G H; CND of G is equivalent to B being PSD.
    let ones = DMatrix::from_element(k, k, 1.0 / k as f64);
    let h = DMatrix::identity(k, k) - ones;
    let b = -0.5 * (&h * &g * &h);
    let eigen = nalgebra::SymmetricEigen::new(b.clone());
    let (mut min_eig, mut min_idx) = (f64::INFINITY, 0);
    for (i, &ev) in eigen.eigenvalues.iter().enumerate() {
        if ev < min_eig {
            min_eig = ev;
            min_idx = i;
        }
    }

    // Contrast route: random zero-sum unit vectors plus the extremal
    // eigenvector (already zero-sum up to numerical noise).
    let mut contrasts: Vec<DVector<f64>> = (0..N_RANDOM_CONTRASTS)
        .map(|_| {
            let c = center(&unit_normal_vector(k, rng));
            let n = c.norm();
            if n > 1e-12 {
                c / n
            } else {
                c
            }
        })
        .collect();
    let v_min = center(&eigen.eigenvectors.column(min_idx).into_owned());
    let n = v_min.norm();
    if n > 1e-12 {
        contrasts.push(v_min / n);
    }
    let worst_contrast = contrasts
        .iter()
        .map(|a| (a.transpose() * &g * a)[(0, 0)])
        .fold(f64::NEG_INFINITY, f64::max);

    // For a unit zero-sum contrast: a' G a = -2 a' B a >= -2 min_eig.
    let eig_pass = -2.0 * min_eig <= tol;
    let contrast_pass = worst_contrast <= tol;
    Ok(TrialOutcome {
        min_eig,
        worst_contrast,
        eig_pass,
        contrast_pass,
        config: None,
    })
}

fn psd_trial(kernel: &PairKernel, sites: &SiteSet, rng: &mut impl Rng) -> Result<TrialOutcome> {
    let p = kernel_matrix(kernel, sites)?;
    let k = p.nrows();
    let tol = matrix_tol(&p);

    let eigen = nalgebra::SymmetricEigen::new(p.clone());
    let (mut min_eig, mut min_idx) = (f64::INFINITY, 0);
    for (i, &ev) in eigen.eigenvalues.iter().enumerate() {
        if ev < min_eig {
            min_eig = ev;
            min_idx = i;
        }
    }

    let mut contrasts: Vec<DVector<f64>> =
        (0..N_RANDOM_CONTRASTS).map(|_| unit_normal_vector(k, rng)).collect();
    contrasts.push(eigen.eigenvectors.column(min_idx).into_owned());
    let worst_contrast = contrasts
        .iter()
        .map(|a| (a.transpose() * &p * a)[(0, 0)])
        .fold(f64::INFINITY, f64::min);

    let eig_pass = min_eig >= -tol;
    let contrast_pass = worst_contrast >= -tol;
    Ok(TrialOutcome {
        min_eig,
        worst_contrast,
        eig_pass,
        contrast_pass,
        config: None,
    })
}

fn run_trials(
    kernel: &PairKernel,
    generator: &SiteGenerator,
    n_sites: usize,
    n_trials: usize,
    seed: u64,
    cnd: bool,
) -> Result<DefinitenessReport> {
    if cnd && n_sites < 2 {
        return Err(Error::Validation("CND checks need at least 2 sites".into()));
    }
    if n_sites == 0 {
        return Err(Error::Validation("definiteness checks need at least 1 site".into()));
    }
    if n_trials == 0 {
        return Err(Error::Validation("n_trials must be >= 1".into()));
    }
    let outcomes: Vec<Result<TrialOutcome>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let sites = generator.sample(n_sites, &mut rng);
            let mut out = if cnd {
                cnd_trial(kernel, &sites, &mut rng)
            } else {
                psd_trial(kernel, &sites, &mut rng)
            }?;
            if !(out.eig_pass && out.contrast_pass) {
                out.config = Some(
                    serde_json::to_string(&serde_json::json!({
                        "trial": trial,
                        "seed": seed,
                        "sites": sites,
                    }))
                    .unwrap_or_default(),
                );
            }
            Ok(out)
        })
        .collect();

    let mut min_eigenvalue = f64::INFINITY;
    let mut worst_contrast = if cnd { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut passed = true;
    let mut routes_agreed = true;
    let mut failing_config = None;
    for out in outcomes {
        let out = out?;
        min_eigenvalue = min_eigenvalue.min(out.min_eig);
        worst_contrast = if cnd {
            worst_contrast.max(out.worst_contrast)
        } else {
            worst_contrast.min(out.worst_contrast)
        };
        // CND verdicts come from the contrast route, PSD verdicts from the
        // eigenvalue route.
        let trial_pass = if cnd { out.contrast_pass } else { out.eig_pass };
        if !trial_pass && failing_config.is_none() {
            failing_config = out.config.clone();
        }
        passed &= trial_pass;
        routes_agreed &= out.eig_pass == out.contrast_pass;
    }
    Ok(DefinitenessReport {
        n_trials,
        min_eigenvalue,
        worst_contrast_value: worst_contrast,
        passed,
        routes_agreed,
        failing_config,
    })
}

/// Certify conditional negative definiteness of a variogram over random
/// site/covariate draws.
pub fn check_cnd(
    vario: &PairKernel,
    generator: &SiteGenerator,
    n_sites: usize,
    n_trials: usize,
    seed: u64,
) -> Result<DefinitenessReport> {
    run_trials(vario, generator, n_sites, n_trials, seed, true)
}

/// Certify positive semi-definiteness of a correlation kernel over random
/// site/covariate draws.
pub fn check_psd(
    corr: &PairKernel,
    generator: &SiteGenerator,
    n_sites: usize,
    n_trials: usize,
    seed: u64,
) -> Result<DefinitenessReport> {
    run_trials(corr, generator, n_sites, n_trials, seed, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{corr_from_vario, vario_iso};

    #[test]
    fn power_variogram_is_cnd() {
        let kernel: &PairKernel =
            &|a: SitePoint, b: SitePoint| Ok(vario_iso(a.coords, b.coords, 0.02, 1.5));
        let report = check_cnd(kernel, &SiteGenerator::default(), 8, 200, 1).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.routes_agreed);
        assert!(report.failing_config.is_none());
    }

    #[test]
    fn negated_distance_fails_cnd() {
        let kernel: &PairKernel =
            &|a: SitePoint, b: SitePoint| Ok(-vario_iso(a.coords, b.coords, 1.0, 1.0));
        let report = check_cnd(kernel, &SiteGenerator::default(), 8, 50, 2).unwrap();
        assert!(!report.passed);
        assert!(report.worst_contrast_value > 0.0);
        assert!(report.failing_config.is_some());
    }

    #[test]
    fn two_site_contrast_identity() {
        // With a = (1, -1) the quadratic form is -2 gamma(s1, s2) <= 0.
        let kernel: &PairKernel =
            &|a: SitePoint, b: SitePoint| Ok(vario_iso(a.coords, b.coords, 0.5, 1.0));
        let report = check_cnd(kernel, &SiteGenerator::default(), 2, 100, 3).unwrap();
        assert!(report.passed);
        assert!(report.worst_contrast_value <= 0.0);
    }

    #[test]
    fn exp_of_power_variogram_is_psd() {
        let kernel: &PairKernel = &|a: SitePoint, b: SitePoint| {
            Ok(corr_from_vario(vario_iso(a.coords, b.coords, 0.02, 1.5)))
        };
        let report = check_psd(kernel, &SiteGenerator::default(), 8, 200, 4).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.routes_agreed);
    }

    #[test]
    fn oscillating_kernel_fails_psd_in_2d() {
        let kernel: &PairKernel = &|a: SitePoint, b: SitePoint| {
            let d: f64 = a
                .coords
                .iter()
                .zip(b.coords)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            Ok((10.0 * d).cos())
        };
        let report = check_psd(kernel, &SiteGenerator::default(), 8, 50, 5).unwrap();
        assert!(!report.passed);
        assert!(report.min_eigenvalue < 0.0);
    }

    #[test]
    fn single_site_psd_identity() {
        let kernel: &PairKernel = &|_a: SitePoint, _b: SitePoint| Ok(1.0);
        let report = check_psd(kernel, &SiteGenerator::default(), 1, 10, 7).unwrap();
        assert!(report.passed);
        assert!((report.min_eigenvalue - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_kernel_is_numerical_error() {
        let kernel: &PairKernel = &|a: SitePoint, b: SitePoint| {
            Ok(if a.coords == b.coords { 0.0 } else { f64::NAN })
        };
        assert!(matches!(
            check_cnd(kernel, &SiteGenerator::default(), 4, 5, 6),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let kernel: &PairKernel =
            &|a: SitePoint, b: SitePoint| Ok(vario_iso(a.coords, b.coords, 0.02, 1.0));
        let r1 = check_cnd(kernel, &SiteGenerator::default(), 6, 20, 42).unwrap();
        let r2 = check_cnd(kernel, &SiteGenerator::default(), 6, 20, 42).unwrap();
        assert_eq!(r1.min_eigenvalue, r2.min_eigenvalue);
        assert_eq!(r1.worst_contrast_value, r2.worst_contrast_value);
    }
}
