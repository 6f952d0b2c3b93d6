//! Composite pairwise-likelihood inference.
//!
//! The objective is the pairwise log-likelihood: the sum over years and
//! ordered site pairs (each unordered pair counts twice) of the log bivariate
//! density. Fitting runs Nelder-Mead on box-transformed parameters through an
//! ordered stage plan, each stage freeing a subset of parameters and starting
//! from the previous optimum, with randomized restarts around each stage's
//! solution. Model comparison uses Takeuchi's criterion with the sandwich
//! penalty `2 tr(J H^-1)`, scores and Hessian taken by central differences
//! and years treated as independent replicates. A parametric bootstrap closes
//! the loop through the exact simulator.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bivariate::PreparedPair;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::model::{DependenceSpec, Structure};
use crate::optim::{NelderMead, Transform};
use crate::panel::{BlockMaximaPanel, MarginState};
use crate::simulate::simulate_exact;
use crate::sites::SiteSet;

/// Tolerance of the per-stage monotonicity assertion.
const STAGE_TOL: f64 = 1e-9;

/// Complete observations of one site pair.
struct PairData {
    i: usize,
    j: usize,
    /// (year index, z_i, z_j) for years where both sites are observed.
    obs: Vec<(usize, f64, f64)>,
}

fn build_pair_data(panel: &BlockMaximaPanel) -> Vec<PairData> {
    let k = panel.n_sites();
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let obs: Vec<(usize, f64, f64)> = (0..panel.n_years())
                .filter_map(|m| match (panel.value(m, i), panel.value(m, j)) {
                    (Some(a), Some(b)) => Some((m, a, b)),
                    _ => None,
                })
                .collect();
            pairs.push(PairData { i, j, obs });
        }
    }
    pairs
}

/// Per-pair log-likelihood contributions (already doubled for the
/// ordered-pair convention); `None` entry values never occur -- degenerate
/// pairs come back as `-inf`.
fn pair_loglik_terms(kernel: &Kernel, sites: &SiteSet, pairs: &[PairData]) -> Result<Vec<f64>> {
    let eval_pair = |p: &PairData| -> Result<f64> {
        let dep = kernel.pair_dependence(sites.point(p.i), sites.point(p.j))?;
        let prepared = match PreparedPair::new(&dep) {
            Ok(prep) => prep,
            Err(Error::Degenerate(_)) => return Ok(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        };
        let mut sum = 0.0;
        for &(_, z1, z2) in &p.obs {
            sum += prepared.log_density(z1, z2);
        }
        Ok(2.0 * sum)
    };
    // Parallel over pairs, ordered collection, sequential reduction by the
    // caller: results are bit-identical across thread schedules.
    if pairs.len() >= 32 {
        pairs.par_iter().map(eval_pair).collect()
    } else {
        pairs.iter().map(eval_pair).collect()
    }
}

fn loglik_from_pairs(kernel: &Kernel, sites: &SiteSet, pairs: &[PairData]) -> Result<f64> {
    Ok(pair_loglik_terms(kernel, sites, pairs)?.iter().sum())
}

fn loglik_by_year_from_pairs(
    kernel: &Kernel,
    sites: &SiteSet,
    pairs: &[PairData],
    n_years: usize,
) -> Result<Vec<f64>> {
    let per_pair: Vec<Result<Vec<(usize, f64)>>> = pairs
        .par_iter()
        .map(|p| {
            let dep = kernel.pair_dependence(sites.point(p.i), sites.point(p.j))?;
            let prepared = match PreparedPair::new(&dep) {
                Ok(prep) => prep,
                Err(Error::Degenerate(_)) => {
                    return Ok(p.obs.iter().map(|&(m, _, _)| (m, f64::NEG_INFINITY)).collect())
                }
                Err(e) => return Err(e),
            };
            Ok(p.obs
                .iter()
                .map(|&(m, z1, z2)| (m, 2.0 * prepared.log_density(z1, z2)))
                .collect())
        })
        .collect();
    let mut by_year = vec![0.0; n_years];
    for terms in per_pair {
        for (m, v) in terms? {
            by_year[m] += v;
        }
    }
    Ok(by_year)
}

fn validate_loglik_inputs(
    panel: &BlockMaximaPanel,
    sites: &SiteSet,
    spec: &DependenceSpec,
) -> Result<()> {
    if panel.margin_state() != MarginState::UnitFrechet {
        return Err(Error::Domain(
            "pairwise likelihood needs unit-Frechet margins; transform the panel first".into(),
        ));
    }
    if panel.n_sites() != sites.len() {
        return Err(Error::Validation("panel and site set disagree on the number of sites".into()));
    }
    if sites.len() < 2 {
        return Err(Error::Validation("pairwise likelihood needs at least 2 sites".into()));
    }
    spec.validate()
}

/// Pairwise log-likelihood of a panel under a dependence spec.
///
/// Sums `log f(z_m(s_i), z_m(s_j))` over years m and ordered pairs i != j
/// (each unordered pair twice); year-pairs with a missing member are skipped.
pub fn pairwise_loglik(
    panel: &BlockMaximaPanel,
    sites: &SiteSet,
    spec: &DependenceSpec,
) -> Result<f64> {
    validate_loglik_inputs(panel, sites, spec)?;
    let kernel = Kernel::from_spec(spec)?;
    loglik_from_pairs(&kernel, sites, &build_pair_data(panel))
}

/// Per-year contributions to the pairwise log-likelihood (the blocks treated
/// as independent replicates by the information estimators).
pub fn pairwise_loglik_by_year(
    panel: &BlockMaximaPanel,
    sites: &SiteSet,
    spec: &DependenceSpec,
) -> Result<Vec<f64>> {
    validate_loglik_inputs(panel, sites, spec)?;
    let kernel = Kernel::from_spec(spec)?;
    loglik_by_year_from_pairs(&kernel, sites, &build_pair_data(panel), panel.n_years())
}

/// One optimization stage: a label and the parameters it frees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage {
    pub label: String,
    pub free: Vec<String>,
}

/// Ordered optimization stages. The final stage must free every non-fixed
/// parameter and the union of all stages must cover them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    /// Single all-free stage.
    pub fn single() -> Self {
        StagePlan {
            stages: vec![Stage { label: "all".into(), free: Vec::new() }],
        }
    }

    /// The staged defaults: M1 warms up the spatial part with the covariate
    /// scale pinned, then frees the covariate scale, then everything; the
    /// other structures run one all-free stage (their warm starts come from
    /// nested-model optima).
    pub fn default_for(spec: &DependenceSpec) -> Self {
        match spec.structure() {
            Structure::M1 => {
                let spatial: Vec<String> = spec
                    .free_names()
                    .iter()
                    .filter(|n| **n != "q3")
                    .map(|n| n.to_string())
                    .collect();
                StagePlan {
                    stages: vec![
                        Stage { label: "spatial".into(), free: spatial },
                        Stage { label: "covariate-scale".into(), free: vec!["q3".into()] },
                        Stage { label: "all".into(), free: Vec::new() },
                    ],
                }
            }
            _ => StagePlan::single(),
        }
    }

    /// Resolve against a spec: empty stage lists mean "all free parameters";
    /// fixed parameters are dropped from every stage.
    fn resolve(&self, spec: &DependenceSpec) -> Result<Vec<(String, Vec<String>)>> {
        let free_names: Vec<String> = spec.free_names().iter().map(|n| n.to_string()).collect();
        if free_names.is_empty() {
            return Err(Error::Validation("every parameter is fixed; nothing to fit".into()));
        }
        let mut resolved = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let free: Vec<String> = if stage.free.is_empty() {
                free_names.clone()
            } else {
                for name in &stage.free {
                    if !spec.names().contains(&name.as_str()) {
                        return Err(Error::Validation(format!(
                            "stage '{}' frees unknown parameter '{}'",
                            stage.label, name
                        )));
                    }
                }
                stage
                    .free
                    .iter()
                    .filter(|n| free_names.contains(n))
                    .cloned()
                    .collect()
            };
            if free.is_empty() {
                return Err(Error::Validation(format!(
                    "stage '{}' frees no (non-fixed) parameters",
                    stage.label
                )));
            }
            resolved.push((stage.label.clone(), free));
        }
        let last = &resolved.last().expect("at least one stage").1;
        if free_names.iter().any(|n| !last.contains(n)) {
            return Err(Error::Validation("the final stage must free all non-fixed parameters".into()));
        }
        let union: Vec<&String> = resolved.iter().flat_map(|(_, f)| f.iter()).collect();
        if free_names.iter().any(|n| !union.contains(&n)) {
            return Err(Error::Validation("stages must jointly cover all non-fixed parameters".into()));
        }
        Ok(resolved)
    }
}

/// Optimizer configuration for [`fit`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub optimizer: NelderMead,
    /// Randomized restarts around each stage's optimum.
    pub restarts: usize,
    /// Standard deviation of the restart perturbation (transformed space).
    pub restart_spread: f64,
    /// Seed of the restart perturbations.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            optimizer: NelderMead {
                max_evals: 1200,
                x_tol: 1e-6,
                f_tol: 1e-9,
                init_step: 0.4,
            },
            restarts: 3,
            restart_spread: 0.3,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// A lighter budget for simulation studies: fewer restarts, same
    /// tolerances.
    pub fn fast() -> Self {
        FitConfig {
            restarts: 1,
            ..FitConfig::default()
        }
    }
}

/// Result of a staged pairwise-likelihood fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub spec: DependenceSpec,
    pub loglik: f64,
    pub tic: Option<f64>,
    pub converged: bool,
    /// (stage label, log-likelihood after the stage).
    pub stage_trace: Vec<(String, f64)>,
    /// Score covariance J (filled by [`tic`]).
    pub score_cov: Option<Vec<Vec<f64>>>,
    /// Negative Hessian H of the pairwise log-likelihood (filled by [`tic`]).
    pub hessian: Option<Vec<Vec<f64>>>,
    pub n_evals: usize,
}

/// Maximize the pairwise log-likelihood through a stage plan.
pub fn fit(
    panel: &BlockMaximaPanel,
    sites: &SiteSet,
    spec: &DependenceSpec,
    plan: &StagePlan,
    cfg: &FitConfig,
) -> Result<FitReport> {
    validate_loglik_inputs(panel, sites, spec)?;
    let stages = plan.resolve(spec)?;
    let pairs = build_pair_data(panel);

    let mut current = spec.clone();
    let mut stage_trace = Vec::with_capacity(stages.len());
    let mut n_evals = 0usize;
    let mut converged = false;
    let mut restart_rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    for (label, free) in &stages {
        let transforms: Vec<Transform> = free
            .iter()
            .map(|name| {
                let (lo, hi) = current.bound(name).expect("validated name");
                Transform::for_bounds(lo, hi)
            })
            .collect();
        let t0: Vec<f64> = free
            .iter()
            .zip(&transforms)
            .map(|(name, tr)| tr.to_unbounded(current.value(name).expect("validated name")))
            .collect();

        let objective = |t: &[f64]| -> f64 {
            let mut trial = current.clone();
            for ((name, tr), &tv) in free.iter().zip(&transforms).zip(t) {
                if trial.set_value(name, tr.to_bounded(tv)).is_err() {
                    return f64::INFINITY;
                }
            }
            let kernel = match Kernel::from_spec(&trial) {
                Ok(k) => k,
                Err(_) => return f64::INFINITY,
            };
            match loglik_from_pairs(&kernel, sites, &pairs) {
                Ok(ll) => -ll,
                Err(_) => f64::INFINITY,
            }
        };

        let f_init = objective(&t0);
        n_evals += 1;
        if !f_init.is_finite() {
            return Err(Error::Initialization {
                stage: label.clone(),
                reason: "pairwise log-likelihood is not finite at the initial point".into(),
            });
        }

        let mut best = cfg.optimizer.minimize(objective, &t0);
        n_evals += best.n_evals;
        for _ in 0..cfg.restarts {
            let perturbed: Vec<f64> = best
                .x
                .iter()
                .map(|&t| {
                    t + cfg.restart_spread * restart_rng.sample::<f64, _>(rand_distr::StandardNormal)
                })
                .collect();
            let retry = cfg.optimizer.minimize(objective, &perturbed);
            n_evals += retry.n_evals;
            if retry.f < best.f {
                best = retry;
            }
        }

        assert!(
            best.f <= f_init + STAGE_TOL,
            "stage '{label}' decreased the log-likelihood ({} -> {})",
            -f_init,
            -best.f
        );
        for ((name, tr), &tv) in free.iter().zip(&transforms).zip(&best.x) {
            current.set_value(name, tr.to_bounded(tv))?;
        }
        stage_trace.push((label.clone(), -best.f));
        converged = best.converged;
    }

    let loglik = stage_trace.last().expect("at least one stage").1;
    Ok(FitReport {
        spec: current,
        loglik,
        tic: None,
        converged,
        stage_trace,
        score_cov: None,
        hessian: None,
        n_evals,
    })
}

/// Warm-start a larger structure from a nested model's optimum. Parameters
/// shared by name are copied; the rest encode the nesting point (q1 = q2 = q,
/// theta = 0, alpha1 = alpha0, beta = 1, alpha = beta, q3 small, HG log
/// ranges at -log q).
pub fn init_from_nested(child: &mut DependenceSpec, parent: &DependenceSpec) -> Result<()> {
    let parent_names = parent.names();
    let get = |name: &str| parent.value(name);
    for name in child.names().to_vec() {
        if parent_names.contains(&name) {
            let v = get(name)?;
            set_clamped(child, name, v)?;
        }
    }
    if !parent_names.contains(&"q1") && parent_names.contains(&"q") {
        let q = get("q")?;
        for name in ["q1", "q2"] {
            if child.names().contains(&name) {
                set_clamped(child, name, q)?;
            }
        }
        if child.names().contains(&"theta") {
            set_clamped(child, "theta", 0.0)?;
        }
        if child.structure() == Structure::Mhg {
            set_clamped(child, "a_wx", -q.ln())?;
            set_clamped(child, "a_wy", -q.ln())?;
        }
    }
    if child.names().contains(&"alpha1") && !parent_names.contains(&"alpha1") {
        set_clamped(child, "alpha1", get("alpha0").unwrap_or(1.0))?;
    }
    if child.names().contains(&"beta") && !parent_names.contains(&"beta") {
        set_clamped(child, "beta", 1.0)?;
    }
    if child.names().contains(&"alpha") && !parent_names.contains(&"alpha") {
        let beta = child.value("beta").unwrap_or(1.0);
        set_clamped(child, "alpha", beta)?;
    }
    if child.names().contains(&"q3") && !parent_names.contains(&"q3") {
        set_clamped(child, "q3", 0.05)?;
    }
    Ok(())
}

fn set_clamped(spec: &mut DependenceSpec, name: &str, value: f64) -> Result<()> {
    let (lo, hi) = spec.bound(name)?;
    let w = (hi - lo).max(1e-12);
    let v = if lo.is_finite() && hi.is_finite() {
        value.clamp(lo + 1e-9 * w, hi - 1e-9 * w)
    } else {
        value.clamp(lo, hi)
    };
    spec.set_value(name, v)
}

/// Neutral starting values for a refit that must not peek at the truth:
/// inverse median pairwise distance for the range parameters, defaults
/// elsewhere.
pub fn neutral_start(template: &DependenceSpec, sites: &SiteSet) -> Result<DependenceSpec> {
    let k = sites.len();
    let mut dists: Vec<f64> = (0..k)
        .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
        .map(|(i, j)| sites.distance(i, j))
        .collect();
    dists.sort_by(f64::total_cmp);
    let median = if dists.is_empty() { 50.0 } else { dists[dists.len() / 2] };
    let q0 = (1.0 / median.max(1e-6)).clamp(1e-4, 1.0);

    let mut start = DependenceSpec::with_defaults(template.family(), template.structure())?;
    for name in template.names().to_vec() {
        let (lo, hi) = template.bound(name)?;
        start.set_bound(name, lo, hi)?;
    }
    let fixed = template.fixed_names();
    start.set_fixed(&fixed)?;
    for name in ["q", "q1", "q2"] {
        if start.names().contains(&name) {
            set_clamped(&mut start, name, q0)?;
        }
    }
    if start.structure() == Structure::Mhg {
        set_clamped(&mut start, "a_wx", -q0.ln())?;
        set_clamped(&mut start, "a_wy", -q0.ln())?;
    }
    // Fixed parameters keep the template's (true) values: they are not
    // estimated, so the refit may legitimately know them.
    for name in fixed {
        let v = template.value(name)?;
        set_clamped(&mut start, name, v)?;
    }
    Ok(start)
}

/// Options of the TIC computation.
#[derive(Debug, Clone)]
pub struct TicConfig {
    /// Fall back to a pseudo-inverse when the Hessian is numerically
    /// singular (a warning is logged).
    pub pseudo_inverse_fallback: bool,
}

impl Default for TicConfig {
    fn default() -> Self {
        TicConfig { pseudo_inverse_fallback: false }
    }
}

/// Sandwich estimate: negative Hessian H, score covariance J and the penalty
/// `2 tr(J H^-1)`.
#[derive(Debug, Clone)]
pub struct Sandwich {
    pub hessian: DMatrix<f64>,
    pub score_cov: DMatrix<f64>,
    pub penalty: f64,
}

/// Central-difference sandwich for an objective given as per-block
/// log-likelihood contributions. `f(psi)` returns the per-block vector;
/// blocks are treated as independent replicates.
pub fn sandwich_penalty(
    per_block: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    psi: &[f64],
    steps: &[f64],
    pseudo_inverse_fallback: bool,
) -> Result<Sandwich> {
    let p = psi.len();
    if steps.len() != p {
        return Err(Error::Validation("steps and psi must have equal length".into()));
    }
    let f0_blocks = per_block(psi)?;
    let f0: f64 = f0_blocks.iter().sum();
    if !f0.is_finite() {
        return Err(Error::Numerical("objective not finite at the optimum".into()));
    }

    // One +/- pair per parameter serves both the scores and the Hessian
    // diagonal.
    let mut plus_blocks = Vec::with_capacity(p);
    let mut minus_blocks = Vec::with_capacity(p);
    for i in 0..p {
        let mut up = psi.to_vec();
        up[i] += steps[i];
        let mut down = psi.to_vec();
        down[i] -= steps[i];
        plus_blocks.push(per_block(&up)?);
        minus_blocks.push(per_block(&down)?);
    }

    let n_blocks = f0_blocks.len();
    let mut j = DMatrix::zeros(p, p);
    for m in 0..n_blocks {
        let mut score = vec![0.0; p];
        for i in 0..p {
            score[i] = (plus_blocks[i][m] - minus_blocks[i][m]) / (2.0 * steps[i]);
        }
        for a in 0..p {
            for b in 0..p {
                j[(a, b)] += score[a] * score[b];
            }
        }
    }

    let mut hess = DMatrix::zeros(p, p);
    for i in 0..p {
        let f_plus: f64 = plus_blocks[i].iter().sum();
        let f_minus: f64 = minus_blocks[i].iter().sum();
        hess[(i, i)] = (f_plus - 2.0 * f0 + f_minus) / (steps[i] * steps[i]);
    }
    for a in 0..p {
        for b in (a + 1)..p {
            let mut x = psi.to_vec();
            x[a] += steps[a];
            x[b] += steps[b];
            let fpp: f64 = per_block(&x)?.iter().sum();
            x[b] -= 2.0 * steps[b];
            let fpm: f64 = per_block(&x)?.iter().sum();
            x[a] -= 2.0 * steps[a];
            let fmm: f64 = per_block(&x)?.iter().sum();
            x[b] += 2.0 * steps[b];
            let fmp: f64 = per_block(&x)?.iter().sum();
            let v = (fpp - fpm - fmp + fmm) / (4.0 * steps[a] * steps[b]);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    let h = -hess;

    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let condition = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
    let singular = !(min_abs > 1e-12 * max_abs) || !condition.is_finite();
    if singular && !pseudo_inverse_fallback {
        return Err(Error::Tic { condition });
    }
    if singular {
        log::warn!("TIC Hessian numerically singular (condition {condition:.3e}); using a pseudo-inverse");
    }
    // H^-1 (or its pseudo-inverse) through the eigen decomposition.
    let mut h_inv = DMatrix::zeros(p, p);
    for idx in 0..p {
        let lambda = eig.eigenvalues[idx];
        if lambda.abs() <= 1e-12 * max_abs {
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        for a in 0..p {
            for b in 0..p {
                h_inv[(a, b)] += v[a] * v[b] / lambda;
            }
        }
    }
    let trace = (&j * &h_inv).trace();
    let penalty = 2.0 * trace;

    // With H positive definite and J PSD the penalty trace is nonnegative.
    if eig.eigenvalues.iter().all(|&l| l > 0.0) && penalty < -1e-8 {
        return Err(Error::Numerical(format!(
            "negative TIC penalty {penalty} despite a positive-definite Hessian"
        )));
    }
    Ok(Sandwich { hessian: h, score_cov: j, penalty })
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Takeuchi's information criterion `-2 l + 2 tr(J H^-1)` for a converged
/// fit; fills the report's TIC, score covariance and Hessian fields.
pub fn tic(
    panel: &BlockMaximaPanel,
    sites: &SiteSet,
    report: &mut FitReport,
    cfg: &TicConfig,
) -> Result<f64> {
    if !report.converged {
        return Err(Error::Validation("TIC needs a converged fit".into()));
    }
    if panel.n_years() < 2 {
        return Err(Error::Validation("TIC needs at least two years (independent blocks)".into()));
    }
    let spec = report.spec.clone();
    let free = spec.free_names();
    // A parameter pinned against a bound leaves no room for a derivative
    // stencil and contributes no quadratic direction at the optimum; such
    // directions are dropped from the sandwich with a warning.
    let mut included: Vec<usize> = Vec::with_capacity(free.len());
    let mut steps: Vec<f64> = Vec::with_capacity(free.len());
    for (idx, name) in free.iter().enumerate() {
        let v = spec.value(name).expect("own name");
        let (lo, hi) = spec.bound(name).expect("own name");
        let h = (1e-4 * v.abs()).max(1e-5);
        let h = h.min(0.45 * (hi - v).max(0.0)).min(0.45 * (v - lo).max(0.0));
        if h < 1e-8 {
            log::warn!("TIC: parameter '{name}' sits at a bound and is excluded from the penalty");
            continue;
        }
        included.push(idx);
        steps.push(h);
    }
    if included.is_empty() {
        return Err(Error::Tic { condition: f64::INFINITY });
    }
    let psi: Vec<f64> = included
        .iter()
        .map(|&i| spec.value(free[i]).expect("own name"))
        .collect();

    let pairs = build_pair_data(panel);
    let per_block = |p: &[f64]| -> Result<Vec<f64>> {
        let mut trial = spec.clone();
        for (&i, &v) in included.iter().zip(p) {
            trial.set_value(free[i], v)?;
        }
        let kernel = Kernel::from_spec(&trial)?;
        loglik_by_year_from_pairs(&kernel, sites, &pairs, panel.n_years())
    };

    let sandwich = sandwich_penalty(&per_block, &psi, &steps, cfg.pseudo_inverse_fallback)?;
    let value = -2.0 * report.loglik + sandwich.penalty;
    // Embed the included block into full #free x #free matrices.
    let p_full = free.len();
    let mut j_full = DMatrix::zeros(p_full, p_full);
    let mut h_full = DMatrix::zeros(p_full, p_full);
    for (a, &ia) in included.iter().enumerate() {
        for (b, &ib) in included.iter().enumerate() {
            j_full[(ia, ib)] = sandwich.score_cov[(a, b)];
            h_full[(ia, ib)] = sandwich.hessian[(a, b)];
        }
    }
    report.tic = Some(value);
    report.score_cov = Some(matrix_rows(&j_full));
    report.hessian = Some(matrix_rows(&h_full));
    Ok(value)
}

/// One parameter's bootstrap summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub name: String,
    pub truth: f64,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

/// Parametric-bootstrap table (per-parameter mean and spread over converged
/// replicates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapTable {
    pub rows: Vec<BootstrapRow>,
    pub n_reps: usize,
    pub n_converged: usize,
}

/// Parametric bootstrap: simulate panels from `spec`, refit each from a
/// neutral start with the given plan, and summarize the estimates.
/// Non-converged replicates are excluded and counted.
pub fn bootstrap(
    spec: &DependenceSpec,
    sites: &SiteSet,
    n_years: usize,
    n_reps: usize,
    seed: u64,
    plan: &StagePlan,
    cfg: &FitConfig,
) -> Result<BootstrapTable> {
    if n_reps == 0 {
        return Err(Error::Validation("n_reps must be >= 1".into()));
    }
    if n_years < 2 {
        return Err(Error::Validation("bootstrap needs n_years >= 2".into()));
    }
    spec.validate()?;
    let start = neutral_start(spec, sites)?;

    let estimates: Vec<Result<Option<Vec<f64>>>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(rep as u64 + 1));
            let panel = simulate_exact(sites, spec, n_years, rep_seed)?;
            let mut rep_cfg = cfg.clone();
            rep_cfg.seed = rep_seed;
            match fit(&panel, sites, &start, plan, &rep_cfg) {
                Ok(report) if report.converged => {
                    Ok(Some(report.spec.values().to_vec()))
                }
                Ok(_) => Ok(None),
                // A failed replicate fit counts as non-converged.
                Err(Error::Initialization { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut done = Vec::with_capacity(n_reps);
    for e in estimates {
        done.push(e?);
    }
    let converged: Vec<&Vec<f64>> = done.iter().flatten().collect();
    let n_converged = converged.len();
    if n_converged * 2 < n_reps {
        return Err(Error::Bootstrap(format!(
            "{} of {} replicates failed to converge",
            n_reps - n_converged,
            n_reps
        )));
    }

    let names = spec.names();
    let mut rows = Vec::with_capacity(names.len());
    for (idx, name) in names.iter().enumerate() {
        let vals: Vec<f64> = converged.iter().map(|v| v[idx]).collect();
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        let sd = (vals.len() >= 2).then(|| {
            let m = mean.expect("nonempty");
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        });
        rows.push(BootstrapRow {
            name: name.to_string(),
            truth: spec.values()[idx],
            mean,
            sd,
        });
    }
    Ok(BootstrapTable { rows, n_reps, n_converged })
}
