//! Exact finite-site simulation of max-stable processes.
//!
//! Sweeps the sites in order; at site j it generates a decreasing Poisson
//! sequence of amplitudes (intensity `u^-2 du`) and, for each amplitude, an
//! extremal function anchored at j (value 1 there). A function is accepted
//! only when it does not exceed the running maximum at any earlier site, and
//! the anchor's sequence stops once its amplitude falls below the running
//! maximum at site j. The accepted functions' pointwise maximum is an exact
//! draw with unit Frechet margins.
//!
//! Anchored draws reuse a single Cholesky factor: for Brown-Resnick the
//! increment field anchored at site 0 yields every anchor's conditional
//! Gaussian by subtraction; for extremal-t the anchored Student field is the
//! conditional residual of one global Gaussian draw divided by an independent
//! chi-square amplitude.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bivariate::PairDependence;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::model::{DependenceSpec, Family};
use crate::panel::{BlockMaximaPanel, MarginState};
use crate::sites::SiteSet;
use crate::validity::DEFINITENESS_TOL;

/// Hard cap on Poisson arrivals per anchor site; hitting it indicates a
/// degenerate spec and raises an error rather than truncating silently.
const MAX_ARRIVALS_PER_ANCHOR: usize = 1_000_000;

/// Largest simulatable grid (quadratic matrix cost).
const MAX_GRID_NODES: usize = 10_000;

#[derive(Debug, Clone)]
enum Machinery {
    BrownResnick {
        gamma: DMatrix<f64>,
        /// Cholesky factor of the increment covariance anchored at site 0,
        /// (k-1) x (k-1); absent for a single site.
        chol: Option<DMatrix<f64>>,
    },
    ExtremalT {
        sigma: DMatrix<f64>,
        chol: DMatrix<f64>,
        nu: f64,
    },
}

/// Pairwise dependence matrix of a site set plus the per-family machinery to
/// draw extremal functions anchored at any site.
#[derive(Debug, Clone)]
pub struct GaussianPairFactory {
    machinery: Machinery,
    k: usize,
}

fn warn_if_invalid(matrix: &DMatrix<f64>, is_vario: bool) {
    let k = matrix.nrows();
    let scale = matrix.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let min_eig = if is_vario {
        let ones = DMatrix::from_element(k, k, 1.0 / k as f64);
        let h = DMatrix::identity(k, k) - ones;
        let b = -0.5 * (&h * matrix * &h);
        nalgebra::SymmetricEigen::new(b).eigenvalues.min()
    } else {
        nalgebra::SymmetricEigen::new(matrix.clone()).eigenvalues.min()
    };
    if min_eig < -DEFINITENESS_TOL * scale {
        log::warn!(
            "pairwise {} matrix fails its definiteness check (min eigenvalue {min_eig:.3e})",
            if is_vario { "variogram" } else { "correlation" }
        );
    }
}

impl GaussianPairFactory {
    /// Materialize the pairwise matrix for a spec on a site set and prepare
    /// the anchored samplers.
    pub fn from_spec(sites: &SiteSet, spec: &DependenceSpec) -> Result<Self> {
        let kernel = Kernel::from_spec(spec)?;
        let k = sites.len();
        match spec.family() {
            Family::BrownResnick => {
                let mut gamma = DMatrix::zeros(k, k);
                for i in 0..k {
                    for j in (i + 1)..k {
                        let g = kernel.vario(sites.point(i), sites.point(j))?;
                        gamma[(i, j)] = g;
                        gamma[(j, i)] = g;
                    }
                }
                warn_if_invalid(&gamma, true);
                let chol = if k > 1 {
                    // Increment covariance anchored at site 0:
                    // K[i,l] = gamma[i,0] + gamma[l,0] - gamma[i,l], i,l >= 1.
                    let kk = DMatrix::from_fn(k - 1, k - 1, |i, l| {
                        gamma[(i + 1, 0)] + gamma[(l + 1, 0)] - gamma[(i + 1, l + 1)]
                    });
                    Some(
                        kk.cholesky()
                            .ok_or_else(|| {
                                Error::Simulation(
                                    "Cholesky of the anchored increment covariance failed; \
                                     add a nugget or jitter to regularize the variogram"
                                        .into(),
                                )
                            })?
                            .l(),
                    )
                } else {
                    None
                };
                Ok(GaussianPairFactory {
                    machinery: Machinery::BrownResnick { gamma, chol },
                    k,
                })
            }
            Family::ExtremalT => {
                let mut sigma = DMatrix::identity(k, k);
                for i in 0..k {
                    for j in (i + 1)..k {
                        let r = kernel.corr(sites.point(i), sites.point(j))?;
                        sigma[(i, j)] = r;
                        sigma[(j, i)] = r;
                    }
                }
                warn_if_invalid(&sigma, false);
                let chol = sigma
                    .clone()
                    .cholesky()
                    .ok_or_else(|| {
                        Error::Simulation(
                            "Cholesky of the pairwise correlation matrix failed; \
                             add a nugget or jitter to regularize the correlation"
                                .into(),
                        )
                    })?
                    .l();
                Ok(GaussianPairFactory {
                    machinery: Machinery::ExtremalT {
                        sigma,
                        chol,
                        nu: kernel.nu().expect("extremal-t kernel carries nu"),
                    },
                    k,
                })
            }
        }
    }

    pub fn n_sites(&self) -> usize {
        self.k
    }

    /// Pairwise dependence between two site indices.
    pub fn pair(&self, i: usize, j: usize) -> PairDependence {
        match &self.machinery {
            Machinery::BrownResnick { gamma, .. } => {
                PairDependence::BrownResnick { gamma: gamma[(i, j)] }
            }
            Machinery::ExtremalT { sigma, nu, .. } => {
                PairDependence::ExtremalT { rho: sigma[(i, j)], nu: *nu }
            }
        }
    }

    /// Draw the extremal function anchored at site `anchor` into `y`
    /// (y[anchor] == 1).
    fn extremal_function(&self, anchor: usize, rng: &mut impl Rng, y: &mut [f64]) {
        match &self.machinery {
            Machinery::BrownResnick { gamma, chol } => {
                // Increment field anchored at site 0 from one triangular
                // multiply, then re-anchor at `anchor` by subtraction:
                // Y_i = exp(eps_i - eps_anchor - gamma[i, anchor]).
                let k = self.k;
                if k == 1 {
                    y[0] = 1.0;
                    return;
                }
                let l = chol.as_ref().expect("k > 1 has a factor");
                let n = DVector::from_fn(k - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
                let eps_tail = l * n;
                let eps = |i: usize| if i == 0 { 0.0 } else { eps_tail[i - 1] };
                let ea = eps(anchor);
                for i in 0..k {
                    y[i] = (eps(i) - ea - gamma[(i, anchor)]).exp();
                }
                y[anchor] = 1.0;
            }
            Machinery::ExtremalT { sigma, chol, nu } => {
                // Conditional residual of a global Gaussian draw given its
                // anchor coordinate, Studentized by an independent
                // chi-square: T_i = rho_i,a + (eps_i - rho_i,a eps_a)/sqrt(S),
                // S ~ chi^2(nu + 1); then Y_i = max(0, T_i)^nu.
                let k = self.k;
                let n = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let eps = chol * n;
                let s: f64 = ChiSquared::new(nu + 1.0).expect("nu + 1 > 0").sample(rng);
                let inv_sqrt_s = s.sqrt().recip();
                let ea = eps[anchor];
                for i in 0..k {
                    let rho = sigma[(i, anchor)];
                    let t = rho + (eps[i] - rho * ea) * inv_sqrt_s;
                    y[i] = if t > 0.0 { t.powf(*nu) } else { 0.0 };
                }
                y[anchor] = 1.0;
            }
        }
    }

    /// One exact replicate of (Z(s_1), ..., Z(s_k)).
    pub fn simulate_one(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let k = self.k;
        let mut z = vec![0.0; k];
        let mut y = vec![0.0; k];
        for j in 0..k {
            let mut cum: f64 = rng.sample(Exp1);
            let mut zeta = 1.0 / cum;
            let mut arrivals = 0usize;
            while zeta > z[j] {
                arrivals += 1;
                if arrivals > MAX_ARRIVALS_PER_ANCHOR {
                    return Err(Error::Simulation(format!(
                        "anchor {j} exceeded {MAX_ARRIVALS_PER_ANCHOR} Poisson arrivals; the spec looks degenerate"
                    )));
                }
                self.extremal_function(j, rng, &mut y);
                if (0..j).all(|l| zeta * y[l] < z[l]) {
                    for i in 0..k {
                        z[i] = z[i].max(zeta * y[i]);
                    }
                }
                let e: f64 = rng.sample(Exp1);
                cum += e;
                zeta = 1.0 / cum;
            }
        }
        Ok(z)
    }
}

/// Exact simulation of `n_reps` independent replicates on a site set,
/// returned as a unit-Frechet panel (row = replicate).
pub fn simulate_exact(
    sites: &SiteSet,
    spec: &DependenceSpec,
    n_reps: usize,
    seed: u64,
) -> Result<BlockMaximaPanel> {
    if n_reps == 0 {
        return Err(Error::Validation("n_reps must be >= 1".into()));
    }
    let factory = GaussianPairFactory::from_spec(sites, spec)?;
    simulate_exact_from(&factory, n_reps, seed)
}

/// Exact simulation from a pre-built factory.
pub fn simulate_exact_from(
    factory: &GaussianPairFactory,
    n_reps: usize,
    seed: u64,
) -> Result<BlockMaximaPanel> {
    let k = factory.n_sites();
    let rows: Vec<Result<Vec<f64>>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            factory.simulate_one(&mut rng)
        })
        .collect();
    let mut values = Vec::with_capacity(n_reps * k);
    for row in rows {
        values.extend(row?);
    }
    BlockMaximaPanel::new(
        (1..=n_reps as i64).collect(),
        values,
        vec![false; n_reps * k],
        k,
        MarginState::UnitFrechet,
    )
}

/// Fast path: one bivariate Brown-Resnick draw with variogram `gamma`.
///
/// Scalar specialization of the site sweep: the anchored increment is a
/// single Gaussian with variance `2 gamma` and mean `-gamma`.
pub fn simulate_br_pair(gamma: f64, rng: &mut impl Rng) -> (f64, f64) {
    let sd = (2.0 * gamma).sqrt();

    // Anchor 0: exactly one accepted function (its value at site 0 is the
    // largest Poisson amplitude).
    let e0: f64 = rng.sample(Exp1);
    let zeta0 = 1.0 / e0;
    let n: f64 = rng.sample(StandardNormal);
    let mut z0 = zeta0;
    let mut z1 = zeta0 * (sd * n - gamma).exp();

    // Anchor 1: accept functions that stay below the running maximum at
    // site 0; the first acceptance ends the sweep.
    let mut cum: f64 = rng.sample(Exp1);
    let mut zeta = 1.0 / cum;
    while zeta > z1 {
        let n: f64 = rng.sample(StandardNormal);
        let y0 = (sd * n - gamma).exp();
        if zeta * y0 < z0 {
            z0 = z0.max(zeta * y0);
            z1 = zeta;
            break;
        }
        let e: f64 = rng.sample(Exp1);
        cum += e;
        zeta = 1.0 / cum;
    }
    (z0, z1)
}

/// Altitude covariate over a grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum AltitudeField {
    Constant(f64),
    /// Linear interpolation `base + gx * x + gy * y` (km of altitude per km).
    Plane { base: f64, gx: f64, gy: f64 },
}

impl AltitudeField {
    fn at(&self, x: f64, y: f64) -> f64 {
        match *self {
            AltitudeField::Constant(c) => c,
            AltitudeField::Plane { base, gx, gy } => base + gx * x + gy * y,
        }
    }
}

/// Rectangular simulation grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub altitude: AltitudeField,
}

/// Materialize grid nodes as a site set with interpolated covariates.
pub fn grid_sites(grid: &GridSpec) -> Result<SiteSet> {
    if grid.nx < 1 || grid.ny < 1 {
        return Err(Error::Validation("grid needs nx, ny >= 1".into()));
    }
    let nodes = grid.nx * grid.ny;
    if nodes > MAX_GRID_NODES {
        return Err(Error::Resource(format!(
            "grid of {nodes} nodes exceeds the {MAX_GRID_NODES}-node cap (quadratic matrix cost)"
        )));
    }
    let step = |range: (f64, f64), n: usize, i: usize| {
        if n == 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
        }
    };
    let mut ids = Vec::with_capacity(nodes);
    let mut coords = Vec::with_capacity(nodes);
    let mut covariates = Vec::with_capacity(nodes);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let x = step(grid.x_range, grid.nx, ix);
            let y = step(grid.y_range, grid.ny, iy);
            ids.push(format!("n{ix}_{iy}"));
            coords.push(vec![x, y]);
            covariates.push(vec![grid.altitude.at(x, y)]);
        }
    }
    SiteSet::new(ids, coords, covariates)
}

/// Exact simulation on a grid; returns the node set and the replicate panel.
pub fn simulate_field_grid(
    grid: &GridSpec,
    spec: &DependenceSpec,
    n_reps: usize,
    seed: u64,
) -> Result<(SiteSet, BlockMaximaPanel)> {
    let sites = grid_sites(grid)?;
    let panel = simulate_exact(&sites, spec, n_reps, seed)?;
    Ok((sites, panel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bivariate::{theta_br, theta_et};
    use crate::empirical::{empirical_theta_fmad, ks_distance_unit_frechet};
    use crate::model::Structure;

    fn two_sites(distance: f64) -> SiteSet {
        SiteSet::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.0, 0.0], vec![distance, 0.0]],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap()
    }

    fn iso_spec(family: Family, q: f64, alpha0: f64, nug: f64, nu: Option<f64>) -> DependenceSpec {
        let mut params = vec![("q", q), ("alpha0", alpha0), ("nug", nug)];
        if let Some(nu) = nu {
            params.push(("nu", nu));
        }
        DependenceSpec::new(family, Structure::Iso, &params).unwrap()
    }

    #[test]
    fn single_site_margin_is_unit_frechet() {
        let sites = SiteSet::new(vec!["a".into()], vec![vec![0.0, 0.0]], vec![vec![0.0]]).unwrap();
        let spec = iso_spec(Family::BrownResnick, 0.05, 1.0, 0.0, None);
        let panel = simulate_exact(&sites, &spec, 10_000, 7).unwrap();
        let sample = panel.column(0);
        let d = ks_distance_unit_frechet(&sample);
        assert!(d < 1.36 / (10_000f64).sqrt(), "KS distance {d}");
    }

    #[test]
    fn br_pair_theta_matches_theory() {
        // gamma = 2 at distance 40 with q = 0.05, alpha0 = 2... use q so that
        // (q*40)^1 = 2: q = 0.05.
        let sites = two_sites(40.0);
        let spec = iso_spec(Family::BrownResnick, 0.05, 1.0, 0.0, None);
        let panel = simulate_exact(&sites, &spec, 10_000, 11).unwrap();
        let theta_hat = empirical_theta_fmad(&panel.column(0), &panel.column(1)).unwrap();
        let theta = theta_br(2.0);
        assert!((theta_hat - theta).abs() < 0.05, "theta_hat={theta_hat} theta={theta}");
    }

    #[test]
    fn et_pair_theta_matches_schlather() {
        // nu = 1, rho = 0: theta = 1 + sqrt(1/2).
        let sites = two_sites(1000.0);
        let spec = DependenceSpec::new(
            Family::ExtremalT,
            Structure::Iso,
            &[("q", 0.0069), ("alpha0", 1.0), ("nug", 0.0), ("nu", 1.0)],
        )
        .unwrap();
        // rho = exp(-(0.0069 * 1000)) ~ 0.001; force exact independence via a
        // huge distance instead: use corr ~ 0.
        let panel = simulate_exact(&sites, &spec, 10_000, 13).unwrap();
        let theta_hat = empirical_theta_fmad(&panel.column(0), &panel.column(1)).unwrap();
        let rho = (-(0.0069f64 * 1000.0)).exp();
        let theta = theta_et(rho, 1.0);
        assert!((theta_hat - theta).abs() < 0.05, "theta_hat={theta_hat} theta={theta}");
    }

    #[test]
    fn br_pair_fast_path_matches_theory() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let gamma = 1.0;
        let n = 20_000;
        let mut c0 = Vec::with_capacity(n);
        let mut c1 = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b) = simulate_br_pair(gamma, &mut rng);
            c0.push(a);
            c1.push(b);
        }
        assert!(ks_distance_unit_frechet(&c0) < 1.36 / (n as f64).sqrt() * 1.2);
        assert!(ks_distance_unit_frechet(&c1) < 1.36 / (n as f64).sqrt() * 1.2);
        let theta_hat = empirical_theta_fmad(&c0, &c1).unwrap();
        assert!((theta_hat - theta_br(gamma)).abs() < 0.05);
    }

    #[test]
    fn deterministic_under_seed() {
        let sites = two_sites(25.0);
        let spec = iso_spec(Family::ExtremalT, 0.02, 1.5, 0.1, Some(3.0));
        let a = simulate_exact(&sites, &spec, 50, 99).unwrap();
        let b = simulate_exact(&sites, &spec, 50, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_exact(&sites, &spec, 50, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_matrix_advises_nugget() {
        // alpha0 = 2 without nugget makes the increment field linear; on
        // collinear sites the anchored covariance is rank deficient and
        // Cholesky fails.
        let k = 5;
        let sites = SiteSet::new(
            (0..k).map(|i| format!("s{i}")).collect(),
            (0..k).map(|i| vec![10.0 * i as f64, 0.0]).collect(),
            vec![vec![0.0]; k],
        )
        .unwrap();
        let spec = iso_spec(Family::BrownResnick, 0.01, 2.0, 0.0, None);
        match simulate_exact(&sites, &spec, 5, 1) {
            Err(Error::Simulation(msg)) => assert!(msg.contains("nugget")),
            other => panic!("expected SimulationError, got {other:?}"),
        }
    }

    #[test]
    fn grid_reduces_to_site_simulation() {
        let grid = GridSpec {
            x_range: (0.0, 10.0),
            y_range: (0.0, 10.0),
            nx: 2,
            ny: 2,
            altitude: AltitudeField::Constant(0.4),
        };
        let spec = iso_spec(Family::BrownResnick, 0.05, 1.0, 0.1, None);
        let (sites, panel) = simulate_field_grid(&grid, &spec, 3, 5).unwrap();
        assert_eq!(sites.len(), 4);
        assert_eq!(panel.n_sites(), 4);
        assert_eq!(panel.n_years(), 3);
        // Same nodes as a hand-built site set, same seed -> same draw.
        let manual = simulate_exact(&sites, &spec, 3, 5).unwrap();
        assert_eq!(panel, manual);
    }

    #[test]
    fn grid_cap_is_enforced() {
        let grid = GridSpec {
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            nx: 101,
            ny: 101,
            altitude: AltitudeField::Constant(0.0),
        };
        assert!(matches!(grid_sites(&grid), Err(Error::Resource(_))));
    }

    #[test]
    fn max_stability_at_desk_scale() {
        // Component-wise max of m = 5 replicates over m has unit Frechet
        // margins again; check the KS band per site.
        let sites = two_sites(30.0);
        let spec = iso_spec(Family::BrownResnick, 0.03, 1.2, 0.05, None);
        let m = 5;
        let groups = 2000;
        let panel = simulate_exact(&sites, &spec, m * groups, 23).unwrap();
        for s in 0..2 {
            let col = panel.column(s);
            let maxed: Vec<f64> = (0..groups)
                .map(|g| {
                    (0..m)
                        .map(|r| col[g * m + r])
                        .fold(f64::NEG_INFINITY, f64::max)
                        / m as f64
                })
                .collect();
            let d = ks_distance_unit_frechet(&maxed);
            assert!(d < 1.36 / (groups as f64).sqrt(), "site {s}: KS {d}");
        }
    }
}
