//! Derivative-free minimization: Nelder-Mead on box-transformed parameters.
//!
//! Box constraints are removed by a per-coordinate bijection onto the real
//! line (logit for two-sided bounds, shifted log for one-sided, identity
//! otherwise); the simplex then moves unconstrained.

/// Bijection between a box interval and the real line.
#[derive(Debug, Clone, Copy)]
pub enum Transform {
    /// `x = lo + (hi - lo) * sigmoid(t)` for a finite interval.
    Logit { lo: f64, hi: f64 },
    /// `x = lo + exp(t)` for `[lo, inf)`.
    LogShift { lo: f64 },
    /// `x = hi - exp(-t)` for `(-inf, hi]`.
    NegLogShift { hi: f64 },
    Identity,
}

impl Transform {
    pub fn for_bounds(lo: f64, hi: f64) -> Self {
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => Transform::Logit { lo, hi },
            (true, false) => Transform::LogShift { lo },
            (false, true) => Transform::NegLogShift { hi },
            (false, false) => Transform::Identity,
        }
    }

    /// Map a bounded value to the real line; values at or beyond the bounds
    /// are nudged inside first.
    pub fn to_unbounded(&self, x: f64) -> f64 {
        match *self {
            Transform::Logit { lo, hi } => {
                let w = hi - lo;
                let x = x.clamp(lo + 1e-10 * w, hi - 1e-10 * w);
                let p = (x - lo) / w;
                (p / (1.0 - p)).ln()
            }
            Transform::LogShift { lo } => (x - lo).max(1e-12).ln(),
            Transform::NegLogShift { hi } => -((hi - x).max(1e-12)).ln(),
            Transform::Identity => x,
        }
    }

    pub fn to_bounded(&self, t: f64) -> f64 {
        match *self {
            // The coordinate is capped so iterates stay strictly inside the
            // box (about 5e-12 of the width away from either end): close
            // enough to the bound that a pinned parameter is numerically
            // inert, far enough that the value remains distinguishable from
            // the bound itself.
            Transform::Logit { lo, hi } => {
                let t = t.clamp(-26.0, 26.0);
                lo + (hi - lo) / (1.0 + (-t).exp())
            }
            Transform::LogShift { lo } => lo + t.exp(),
            Transform::NegLogShift { hi } => hi - (-t).exp(),
            Transform::Identity => t,
        }
    }
}

/// Nelder-Mead configuration.
#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Simplex diameter tolerance in the (transformed) parameter space.
    pub x_tol: f64,
    /// Spread tolerance of the objective values over the simplex.
    pub f_tol: f64,
    /// Initial step along each coordinate.
    pub init_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evals: 2000,
            x_tol: 1e-7,
            f_tol: 1e-9,
            init_step: 0.4,
        }
    }
}

/// Minimization outcome.
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    /// Simplex collapsed below the tolerances before the budget ran out.
    pub converged: bool,
}

impl NelderMead {
    /// Minimize `f` starting from `x0` (unconstrained coordinates).
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64]) -> OptimResult {
        let n = x0.len();
        assert!(n >= 1, "cannot optimize over zero parameters");
        const ALPHA: f64 = 1.0; // reflection
        const GAMMA: f64 = 2.0; // expansion
        const RHO: f64 = 0.5; // contraction
        const SIGMA: f64 = 0.5; // shrink

        let mut n_evals = 0usize;
        let mut eval = |x: &[f64], n_evals: &mut usize| -> f64 {
            *n_evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let fx0 = eval(x0, &mut n_evals);
        simplex.push((x0.to_vec(), fx0));
        for i in 0..n {
            let mut xi = x0.to_vec();
            xi[i] += self.init_step;
            let fi = eval(&xi, &mut n_evals);
            simplex.push((xi, fi));
        }

        let mut converged = false;
        while n_evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;

            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .fold(0.0f64, f64::max);
            // Both the simplex extent and the value spread must collapse;
            // either alone stalls on symmetric straddles or flat plateaus.
            if diameter < self.x_tol && (worst - best).abs() < self.f_tol * (1.0 + best.abs()) {
                converged = true;
                break;
            }

            // Centroid of all but the worst point.
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / n as f64;
                }
            }

            let worst_x = simplex[n].0.clone();
            let reflect: Vec<f64> = centroid
                .iter()
                .zip(&worst_x)
                .map(|(c, w)| c + ALPHA * (c - w))
                .collect();
            let f_reflect = eval(&reflect, &mut n_evals);

            if f_reflect < simplex[0].1 {
                // Try to expand.
                let expand: Vec<f64> = centroid
                    .iter()
                    .zip(&worst_x)
                    .map(|(c, w)| c + GAMMA * ALPHA * (c - w))
                    .collect();
                let f_expand = eval(&expand, &mut n_evals);
                simplex[n] = if f_expand < f_reflect {
                    (expand, f_expand)
                } else {
                    (reflect, f_reflect)
                };
            } else if f_reflect < simplex[n - 1].1 {
                simplex[n] = (reflect, f_reflect);
            } else {
                // Contract (outside if the reflection improved on the worst).
                let (anchor, f_anchor) = if f_reflect < simplex[n].1 {
                    (&reflect, f_reflect)
                } else {
                    (&worst_x, simplex[n].1)
                };
                let contract: Vec<f64> = centroid
                    .iter()
                    .zip(anchor)
                    .map(|(c, a)| c + RHO * (a - c))
                    .collect();
                let f_contract = eval(&contract, &mut n_evals);
                if f_contract < f_anchor {
                    simplex[n] = (contract, f_contract);
                } else {
                    // Shrink toward the best point.
                    let best_x = simplex[0].0.clone();
                    for (x, fx) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&best_x) {
                            *xi = bi + SIGMA * (*xi - bi);
                        }
                        *fx = eval(x, &mut n_evals);
                    }
                }
            }
        }

        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        OptimResult {
            x: simplex[0].0.clone(),
            f: simplex[0].1,
            n_evals,
            converged,
        }
    }
}
