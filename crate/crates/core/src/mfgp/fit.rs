//! Maximum-likelihood hyperparameter search.
//!
//! Nelder–Mead over the logarithms of every kernel variance, squared
//! lengthscale and scaling factor. Noise variances and prior means are held at
//! their initial values. The search is deterministic given its inputs.

use serde::{Deserialize, Serialize};

use super::{log_marginal_likelihood, FidelityDataset, MfgpHyper};
use crate::error::{Error, Result};

pub const DEFAULT_FIT_BUDGET: usize = 500;

const INITIAL_STEP: f64 = 0.5;
const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;
/// Stop once the simplex objective spread falls below this.
const SPREAD_TOL: f64 = 1e-10;

/// Box constraints applied to every parameter of a kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBounds {
    pub variance: (f64, f64),
    pub lengthscale_sq: (f64, f64),
    pub rho: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            variance: (1e-3, 1e3),
            lengthscale_sq: (1e-4, 10.0),
            rho: (1e-3, 1e2),
        }
    }
}

impl FitBounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("variance", self.variance),
            ("lengthscale_sq", self.lengthscale_sq),
            ("rho", self.rho),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidHyper(format!(
                    "{name} bounds must be a positive interval, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub hyper: MfgpHyper,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    /// False when no improving step was found and `hyper` is the input.
    pub improved: bool,
    pub evaluations: usize,
}

/// Log-space parameter layout: `[ln v², ln l²]` per level, then `ln ρ`.
struct Layout<'a> {
    template: &'a MfgpHyper,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> Layout<'a> {
    fn new(template: &'a MfgpHyper, bounds: &FitBounds) -> Self {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for _ in &template.kernels {
            lower.extend([bounds.variance.0.ln(), bounds.lengthscale_sq.0.ln()]);
            upper.extend([bounds.variance.1.ln(), bounds.lengthscale_sq.1.ln()]);
        }
        for _ in &template.rho {
            lower.push(bounds.rho.0.ln());
            upper.push(bounds.rho.1.ln());
        }
        Self {
            template,
            lower,
            upper,
        }
    }

    fn encode(&self, hyper: &MfgpHyper) -> Vec<f64> {
        let mut v: Vec<f64> = hyper
            .kernels
            .iter()
            .flat_map(|k| [k.variance.ln(), k.lengthscale_sq.ln()])
            .chain(hyper.rho.iter().map(|r| r.ln()))
            .collect();
        self.project(&mut v);
        v
    }

    fn decode(&self, v: &[f64]) -> MfgpHyper {
        let mut h = self.template.clone();
        let levels = h.kernels.len();
        for (i, k) in h.kernels.iter_mut().enumerate() {
            k.variance = v[2 * i].exp();
            k.lengthscale_sq = v[2 * i + 1].exp();
        }
        for (j, r) in h.rho.iter_mut().enumerate() {
            *r = v[2 * levels + j].exp();
        }
        h
    }

    fn project(&self, v: &mut [f64]) {
        for ((x, lo), hi) in v.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// Maximizes the log marginal likelihood starting from `init`, spending at
/// most `budget` likelihood evaluations.
pub fn fit_hyperparameters(
    datasets: &[FidelityDataset],
    init: &MfgpHyper,
    bounds: &FitBounds,
    budget: usize,
) -> Result<FitOutcome> {
    bounds.validate()?;
    let initial_log_likelihood = log_marginal_likelihood(init, datasets)?;
    let layout = Layout::new(init, bounds);
    let mut evaluations = 1;
    let objective = |v: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        match log_marginal_likelihood(&layout.decode(v), datasets) {
            Ok(l) if l.is_finite() => -l,
            _ => f64::INFINITY,
        }
    };

    let start = layout.encode(init);
    let dim = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = objective(&start, &mut evaluations);
    simplex.push((start.clone(), f0));
    for d in 0..dim {
        let mut v = start.clone();
        // step inward if the upward step would leave the box
        v[d] += if v[d] + INITIAL_STEP <= layout.upper[d] {
            INITIAL_STEP
        } else {
            -INITIAL_STEP
        };
        layout.project(&mut v);
        let f = objective(&v, &mut evaluations);
        simplex.push((v, f));
    }

    while evaluations < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if worst.is_finite() && (worst - best).abs() <= SPREAD_TOL * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..dim].iter().map(|(v, _)| v[d]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut v: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            layout.project(&mut v);
            v
        };

        let reflected = along(REFLECT);
        let fr = objective(&reflected, &mut evaluations);
        if fr < simplex[0].1 {
            let expanded = along(EXPAND);
            let fe = objective(&expanded, &mut evaluations);
            simplex[dim] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[dim].1 {
            let c = along(CONTRACT);
            let f = objective(&c, &mut evaluations);
            (c, f)
        } else {
            let c = along(-CONTRACT);
            let f = objective(&c, &mut evaluations);
            (c, f)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let mut v: Vec<f64> = anchor
                .iter()
                .zip(&entry.0)
                .map(|(a, x)| a + SHRINK * (x - a))
                .collect();
            layout.project(&mut v);
            let f = objective(&v, &mut evaluations);
            *entry = (v, f);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (best_v, best_f) = &simplex[0];
    let best_ll = -best_f;
    // negligible gains are treated as no improvement
    if best_ll.is_finite()
        && best_ll > initial_log_likelihood + 1e-9 * (1.0 + initial_log_likelihood.abs())
    {
        Ok(FitOutcome {
            hyper: layout.decode(best_v),
            log_likelihood: best_ll,
            initial_log_likelihood,
            improved: true,
            evaluations,
        })
    } else {
        log::warn!("hyperparameter search found no improving step; keeping the initial values");
        Ok(FitOutcome {
            hyper: init.clone(),
            log_likelihood: initial_log_likelihood,
            initial_log_likelihood,
            improved: false,
            evaluations,
        })
    }
}
