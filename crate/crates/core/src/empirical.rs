//! Marginal GEV handling and nonparametric dependence diagnostics.
//!
//! Site-wise GEV maximum likelihood, the probability-integral transform to
//! unit Frechet margins, rank-based extremal-coefficient estimation through
//! the F-madogram and the distance-vs-theta diagnostic table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bivariate::theta_pair;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::model::DependenceSpec;
use crate::optim::NelderMead;
use crate::panel::{BlockMaximaPanel, MarginState};
use crate::sites::SiteSet;

/// Shape threshold below which the Gumbel limit is used.
const XI_GUMBEL_EPS: f64 = 1e-6;

/// Estimator clip: theta_hat is confined to [1, 2 + 0.5] so estimator noise
/// stays visible without absurd values.
const THETA_CLIP_TOL: f64 = 0.5;

/// GEV parameters (shape, location, scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub xi: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl GevParams {
    pub fn new(xi: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !xi.is_finite() || !mu.is_finite() {
            return Err(Error::Domain(format!(
                "invalid GEV parameters (xi={xi}, mu={mu}, sigma={sigma})"
            )));
        }
        Ok(GevParams { xi, mu, sigma })
    }

    /// Distribution function G(x) in [0, 1].
    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        if self.xi.abs() < XI_GUMBEL_EPS {
            (-(-z).exp()).exp()
        } else {
            let t = 1.0 + self.xi * z;
            if t <= 0.0 {
                // Below the lower endpoint (xi > 0) or above the upper (xi < 0).
                if self.xi > 0.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                (-t.powf(-1.0 / self.xi)).exp()
            }
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        if self.xi.abs() < XI_GUMBEL_EPS {
            -self.sigma.ln() - z - (-z).exp()
        } else {
            let t = 1.0 + self.xi * z;
            if t <= 0.0 {
                return f64::NEG_INFINITY;
            }
            -self.sigma.ln() - (1.0 + 1.0 / self.xi) * t.ln() - t.powf(-1.0 / self.xi)
        }
    }
}

fn gev_negloglik(data: &[f64], xi: f64, mu: f64, sigma: f64) -> f64 {
    match GevParams::new(xi, mu, sigma) {
        Ok(p) => -data.iter().map(|&x| p.log_pdf(x)).sum::<f64>(),
        Err(_) => f64::INFINITY,
    }
}

/// Site-wise GEV maximum likelihood with an explicit error label.
pub fn gev_fit_labeled(sample: &[f64], site: &str) -> Result<GevParams> {
    let data: Vec<f64> = sample.iter().copied().filter(|v| v.is_finite()).collect();
    if data.len() < 20 {
        return Err(Error::InsufficientData(format!(
            "GEV fit needs >= 20 observations, got {}",
            data.len()
        )));
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return Err(Error::MarginFit {
            site: site.to_string(),
            reason: "sample is (numerically) constant; scale degenerates".into(),
        });
    }

    // Moment start at the Gumbel solution.
    let sigma0 = sd * 6f64.sqrt() / std::f64::consts::PI;
    let mu0 = mean - 0.57722 * sigma0;
    let objective = |p: &[f64]| gev_negloglik(&data, p[0], p[1], p[2].exp());
    let nm = NelderMead {
        max_evals: 2000,
        x_tol: 1e-8,
        f_tol: 1e-10,
        init_step: 0.2,
    };
    let mut best = nm.minimize(objective, &[0.1, mu0, sigma0.ln()]);
    if !best.converged {
        // One retry from a lighter-tailed start.
        let retry = nm.minimize(objective, &[-0.1, mu0, sigma0.ln()]);
        if retry.f < best.f {
            best = retry;
        }
    }
    if !best.converged || !best.f.is_finite() {
        return Err(Error::MarginFit {
            site: site.to_string(),
            reason: format!("maximum likelihood did not converge ({} evals)", best.n_evals),
        });
    }
    let xi = if best.x[0].abs() < XI_GUMBEL_EPS { 0.0 } else { best.x[0] };
    GevParams::new(xi, best.x[1], best.x[2].exp())
}

/// GEV maximum likelihood for a single sample.
pub fn gev_fit(sample: &[f64]) -> Result<GevParams> {
    gev_fit_labeled(sample, "sample")
}

/// Fit a GEV margin to every site column of a raw panel.
pub fn fit_margins(panel: &BlockMaximaPanel, sites: &SiteSet) -> Result<Vec<GevParams>> {
    if panel.n_sites() != sites.len() {
        return Err(Error::Validation("panel and site set disagree on the number of sites".into()));
    }
    (0..sites.len())
        .into_par_iter()
        .map(|s| gev_fit_labeled(&panel.column(s), &sites.ids()[s]))
        .collect()
}

/// Transform a raw panel to unit Frechet margins: `z -> -1/log G(z)`.
///
/// Probabilities of exactly 0 or 1 are clipped to the nearest representable
/// probability with a logged warning.
pub fn to_unit_frechet(panel: &BlockMaximaPanel, margins: &[GevParams]) -> Result<BlockMaximaPanel> {
    if panel.margin_state() != MarginState::Raw {
        return Err(Error::Validation("panel is already on the unit Frechet scale".into()));
    }
    if margins.len() != panel.n_sites() {
        return Err(Error::Validation(format!(
            "{} margins for a {}-site panel",
            margins.len(),
            panel.n_sites()
        )));
    }
    let mut clipped = 0usize;
    let out = panel.map_values(MarginState::UnitFrechet, |_, s, v| {
        let mut g = margins[s].cdf(v);
        if g <= 0.0 || g >= 1.0 {
            clipped += 1;
            g = g.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        }
        -1.0 / g.ln()
    })?;
    if clipped > 0 {
        log::warn!("to_unit_frechet clipped {clipped} cell(s) at the support boundary");
    }
    Ok(out)
}

/// Ranks 1..n of a sample (ties keep input order, which only arises for
/// exactly equal values).
fn ranks(sample: &[f64]) -> Vec<f64> {
    let n = sample.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sample[a].total_cmp(&sample[b]).then(a.cmp(&b)));
    let mut r = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        r[idx] = (rank + 1) as f64;
    }
    r
}

/// F-madogram estimator of the pairwise extremal coefficient.
///
/// With rank-based empirical CDFs (ranks over n+1), the madogram
/// `nu = sum |F_i - F_j| / (2n)` maps to `theta = (1 + 2 nu)/(1 - 2 nu)`,
/// clipped to [1, 2.5].
pub fn empirical_theta_fmad(col_i: &[f64], col_j: &[f64]) -> Result<f64> {
    if col_i.len() != col_j.len() {
        return Err(Error::Validation("paired samples must have equal length".into()));
    }
    let n = col_i.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "F-madogram needs >= 10 complete pairs, got {n}"
        )));
    }
    let denom = (n + 1) as f64;
    let fi = ranks(col_i);
    let fj = ranks(col_j);
    let nu: f64 = fi
        .iter()
        .zip(&fj)
        .map(|(a, b)| ((a - b) / denom).abs())
        .sum::<f64>()
        / (2.0 * n as f64);
    let theta = (1.0 + 2.0 * nu) / (1.0 - 2.0 * nu);
    Ok(theta.clamp(1.0, 2.0 + THETA_CLIP_TOL))
}

/// F-madogram estimate for a site pair of a panel, using complete year pairs.
pub fn theta_fmad_panel(panel: &BlockMaximaPanel, i: usize, j: usize) -> Result<f64> {
    let years = panel.complete_pairs(i, j);
    let xi: Vec<f64> = years.iter().map(|&m| panel.value(m, i).unwrap()).collect();
    let xj: Vec<f64> = years.iter().map(|&m| panel.value(m, j).unwrap()).collect();
    empirical_theta_fmad(&xi, &xj)
}

/// One row of the distance diagnostic: a site pair, its separation, the
/// empirical extremal coefficient and the fitted models' theoretical values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaDistanceRow {
    pub site_i: String,
    pub site_j: String,
    pub distance_km: f64,
    pub theta_empirical: f64,
    pub theta_model: Vec<f64>,
}

/// Empirical vs model extremal coefficients over all site pairs. For
/// non-stationary models the theoretical value uses each pair's own
/// covariates.
pub fn theta_vs_distance(
    panel: &BlockMaximaPanel,
    sites: &SiteSet,
    specs: &[&DependenceSpec],
) -> Result<Vec<ThetaDistanceRow>> {
    if panel.n_sites() != sites.len() {
        return Err(Error::Validation("panel and site set disagree on the number of sites".into()));
    }
    let kernels: Vec<Kernel> = specs.iter().map(|s| Kernel::from_spec(s)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            let theta_empirical = theta_fmad_panel(panel, i, j)?;
            let theta_model = kernels
                .iter()
                .map(|k| Ok(theta_pair(&k.pair_dependence(sites.point(i), sites.point(j))?)))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(ThetaDistanceRow {
                site_i: sites.ids()[i].clone(),
                site_j: sites.ids()[j].clone(),
                distance_km: sites.distance(i, j),
                theta_empirical,
                theta_model,
            });
        }
    }
    Ok(rows)
}

/// Kolmogorov-Smirnov distance of a sample to the unit Frechet law
/// `F(z) = exp(-1/z)`.
pub fn ks_distance_unit_frechet(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let f = if z > 0.0 { (-1.0 / z).exp() } else { 0.0 };
            let hi = ((i + 1) as f64 / n - f).abs();
            let lo = (f - i as f64 / n).abs();
            hi.max(lo)
        })
        .fold(0.0, f64::max)
}
