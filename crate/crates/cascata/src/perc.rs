//! Percolation composition and critical-exponent estimation.
//!
//! Composing a cascade with an independent beta-model field prunes it:
//! each vertex survives with probability b^-beta and is scaled by b^beta,
//! so the composite entropy index is the base index plus beta. Mass
//! survival degrades as beta grows; the beta at which the composite
//! degenerates is 1 minus the base index, which measures the dimension of
//! the support of the base cascade in base-b units.
//!
//! [`survival_curve`] estimates the probability that composite mass
//! survives to a given depth. [`critical_beta`] brackets the degeneracy
//! threshold by bisection; each probe classifies the composite by the
//! Monte Carlo drift of its size-biased spine walk, which is the finite-
//! depth statistic that actually resolves the mass-degeneracy transition
//! at desk scale (a survival fraction at these depths only sees the much
//! later path-extinction transition).

use crate::cascade::{expand, CascadeRealization};
use crate::gen::GeneratorModel;
use crate::rng::{derive_seed, derive_seed2};
use crate::spine::size_biased_walk_mean_logb;
use crate::tree::DEFAULT_NODE_CAP;
use crate::util::mean_se;
use crate::weights::{weighted_masses_product, WeightSystem, WeightedMasses};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Multiply a (possibly weighted) realization by an independent beta-model
/// field keyed by `perc_seed`. Equivalent to weighting by the product of
/// `f` and a percolation system, and bitwise identical to it.
pub fn compose(
    r: &CascadeRealization,
    f: &WeightSystem,
    beta: f64,
    perc_seed: u64,
) -> Result<WeightedMasses> {
    let perc = WeightSystem::Percolation { beta, seed: perc_seed };
    weighted_masses_product(r, &[f, &perc])
}

/// Survival probability estimate at one pruning exponent.
#[derive(Clone, Debug, Serialize)]
pub struct SurvivalPoint {
    pub beta: f64,
    pub survivors: usize,
    pub replicates: usize,
    pub p_hat: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SurvivalCurve {
    pub depth: usize,
    /// Mass threshold actually applied; zero means exact-extinction
    /// detection.
    pub threshold: f64,
    pub points: Vec<SurvivalPoint>,
}

/// Threshold policy: extinction is exactly representable whenever the
/// pruning field or the base law has an atom at zero, so the default
/// tests mass > 0; only a strictly positive composite falls back to the
/// small-mass proxy epsilon = b^-depth.
fn survival_threshold(
    model: &GeneratorModel,
    f: &WeightSystem,
    beta: f64,
    depth: usize,
    epsilon: Option<f64>,
) -> f64 {
    if let Some(e) = epsilon {
        return e;
    }
    let exact_zero = beta > 0.0 || model.has_zero_atom() || f.can_vanish();
    if exact_zero {
        0.0
    } else {
        f64::from(model.branching().get()).powi(-(depth as i32))
    }
}

/// Estimate p(beta) = P(composite mass at `depth` exceeds the survival
/// threshold) over a beta grid, with binomial standard errors. Seeds are
/// derived per (grid point, replicate).
pub fn survival_curve(
    model: &GeneratorModel,
    f: &WeightSystem,
    depth: usize,
    replicates: usize,
    betas: &[f64],
    epsilon: Option<f64>,
    seed: u64,
) -> Result<SurvivalCurve> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("survival curve needs replicates >= 1".into()));
    }
    model.branching().level_count(depth, DEFAULT_NODE_CAP)?;
    let mut points = Vec::with_capacity(betas.len());
    let mut threshold_out = 0.0;
    for (i, &beta) in betas.iter().enumerate() {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta = {beta} must be >= 0")));
        }
        let threshold = survival_threshold(model, f, beta, depth, epsilon);
        threshold_out = threshold;
        let survived: Vec<bool> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let s = derive_seed2(seed, i as u64, rep as u64);
                let r = expand(model, depth, s)?;
                let masses = compose(&r, f, beta, derive_seed(s, u64::MAX))?;
                Ok(masses.total_mass(depth)? > threshold)
            })
            .collect::<Result<_>>()?;
        let survivors = survived.iter().filter(|&&s| s).count();
        let p_hat = survivors as f64 / replicates as f64;
        points.push(SurvivalPoint {
            beta,
            survivors,
            replicates,
            p_hat,
            se: (p_hat * (1.0 - p_hat) / replicates as f64).sqrt(),
        });
    }
    Ok(SurvivalCurve { depth, threshold: threshold_out, points })
}

/// Survival fractions at every level up to `depth` for a single beta;
/// used to compare pruning against branching-process oracles.
pub fn survival_by_depth(
    model: &GeneratorModel,
    f: &WeightSystem,
    beta: f64,
    depth: usize,
    replicates: usize,
    epsilon: Option<f64>,
    seed: u64,
) -> Result<Vec<SurvivalPoint>> {
    model.branching().level_count(depth, DEFAULT_NODE_CAP)?;
    let threshold = survival_threshold(model, f, beta, depth, epsilon);
    let alive: Vec<Vec<bool>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let s = derive_seed2(seed, 0, rep as u64);
            let r = expand(model, depth, s)?;
            let masses = compose(&r, f, beta, derive_seed(s, u64::MAX))?;
            (0..=depth)
                .map(|n| Ok(masses.total_mass(n)? > threshold))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..=depth)
        .map(|n| {
            let survivors = alive.iter().filter(|a| a[n]).count();
            let p_hat = survivors as f64 / replicates as f64;
            SurvivalPoint {
                beta,
                survivors,
                replicates,
                p_hat,
                se: (p_hat * (1.0 - p_hat) / replicates as f64).sqrt(),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProbeVerdict {
    Nondegenerate,
    Degenerate,
    Boundary,
    Ambiguous,
}

/// One bisection probe: composite drift estimated from fresh size-biased
/// walks at this beta.
#[derive(Clone, Debug, Serialize)]
pub struct BetaProbe {
    pub beta: f64,
    pub drift_mean: f64,
    pub drift_se: f64,
    pub replicates: usize,
    pub verdict: ProbeVerdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalBetaReport {
    pub lo: f64,
    pub hi: f64,
    pub point: f64,
    pub tolerance: f64,
    pub evaluations: Vec<BetaProbe>,
}

fn probe(
    model: &GeneratorModel,
    base_shift: f64,
    beta: f64,
    steps: usize,
    replicates: usize,
    seed: u64,
    attempt: u64,
) -> BetaProbe {
    let drifts: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let s = derive_seed2(seed, beta.to_bits() ^ attempt, rep as u64);
            size_biased_walk_mean_logb(model, steps, s) + base_shift + beta - 1.0
        })
        .collect();
    let (mean, se) = mean_se(&drifts);
    let verdict = if se == 0.0 {
        if mean == 0.0 {
            ProbeVerdict::Boundary
        } else if mean < 0.0 {
            ProbeVerdict::Nondegenerate
        } else {
            ProbeVerdict::Degenerate
        }
    } else if mean + 4.0 * se < 0.0 {
        ProbeVerdict::Nondegenerate
    } else if mean - 4.0 * se > 0.0 {
        ProbeVerdict::Degenerate
    } else {
        ProbeVerdict::Ambiguous
    };
    BetaProbe { beta, drift_mean: mean, drift_se: se, replicates, verdict }
}

/// Bracket the pruning exponent at which the composite cascade degenerates.
///
/// Each probe classifies the composite at one beta by the sign of the
/// estimated spine-walk drift (base drift plus beta, since the size-biased
/// pruning variable is the constant b^beta). The drift is linear in beta
/// with slope one, so an ambiguous probe at `m` localizes the threshold to
/// `m - drift +- 4 SE` directly; per the bracketing rule an ambiguous
/// probe doubles its replicates once before falling back to that band.
pub fn critical_beta(
    model: &GeneratorModel,
    f: &WeightSystem,
    depth: usize,
    replicates: usize,
    tolerance: f64,
    seed: u64,
) -> Result<CriticalBetaReport> {
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance = {tolerance} must be > 0")));
    }
    if replicates < 100 {
        return Err(Error::InvalidParameter("critical_beta needs at least 100 replicates".into()));
    }
    f.validate(model.branching())?;
    let base_shift = match f {
        WeightSystem::Percolation { beta, .. } => *beta,
        _ => 0.0,
    };
    let steps = depth.max(8);
    let mut evals: Vec<BetaProbe> = Vec::new();
    let mut run =
        |beta: f64, reps: usize, attempt: u64, evals: &mut Vec<BetaProbe>| -> BetaProbe {
            let p = probe(model, base_shift, beta, steps, reps, seed, attempt);
            evals.push(p.clone());
            p
        };

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let at_lo = run(lo, replicates, 0, &mut evals);
    match at_lo.verdict {
        ProbeVerdict::Nondegenerate => {}
        ProbeVerdict::Boundary => {
            return Ok(CriticalBetaReport { lo, hi: lo, point: lo, tolerance, evaluations: evals })
        }
        ProbeVerdict::Degenerate => {
            return Err(Error::NotBracketed {
                lo,
                hi,
                detail: format!(
                    "composite drift at beta = 0 is {:.4} > 0: the base model is degenerate",
                    at_lo.drift_mean
                ),
            })
        }
        ProbeVerdict::Ambiguous => {
            return Err(Error::NotBracketed {
                lo,
                hi,
                detail: "drift at beta = 0 is statistically indistinguishable from critical; \
                         increase replicates or depth"
                    .into(),
            })
        }
    }
    let at_hi = run(hi, replicates, 0, &mut evals);
    match at_hi.verdict {
        ProbeVerdict::Degenerate => {}
        ProbeVerdict::Boundary => {
            return Ok(CriticalBetaReport { lo: hi, hi, point: hi, tolerance, evaluations: evals })
        }
        ProbeVerdict::Nondegenerate => {
            return Err(Error::NotBracketed {
                lo,
                hi,
                detail: "composite still nondegenerate at beta = 1".into(),
            })
        }
        ProbeVerdict::Ambiguous => {
            // the threshold sits within the ambiguity band around 1
            let band_lo = (hi - at_hi.drift_mean - 4.0 * at_hi.drift_se).max(lo);
            let band_hi = (hi - at_hi.drift_mean + 4.0 * at_hi.drift_se).min(hi);
            if band_hi - band_lo <= tolerance {
                return Ok(CriticalBetaReport {
                    lo: band_lo,
                    hi: band_hi,
                    point: (hi - at_hi.drift_mean).clamp(band_lo, band_hi),
                    tolerance,
                    evaluations: evals,
                });
            }
            return Err(Error::Inconclusive(
                "drift at beta = 1 too noisy to bracket; increase replicates or depth".into(),
            ));
        }
    }

    let mut guard = 0;
    while hi - lo > tolerance {
        guard += 1;
        if guard > 64 {
            return Err(Error::Inconclusive("bisection failed to converge".into()));
        }
        let mid = 0.5 * (lo + hi);
        let mut p = run(mid, replicates, 0, &mut evals);
        if p.verdict == ProbeVerdict::Ambiguous {
            p = run(mid, replicates * 2, 1, &mut evals);
        }
        match p.verdict {
            ProbeVerdict::Nondegenerate => lo = mid,
            ProbeVerdict::Degenerate => hi = mid,
            ProbeVerdict::Boundary => {
                return Ok(CriticalBetaReport { lo: mid, hi: mid, point: mid, tolerance, evaluations: evals })
            }
            ProbeVerdict::Ambiguous => {
                // drift(beta) = drift(mid) + (beta - mid): solve for zero
                let band_lo = (mid - p.drift_mean - 4.0 * p.drift_se).max(lo);
                let band_hi = (mid - p.drift_mean + 4.0 * p.drift_se).min(hi);
                if band_hi - band_lo <= tolerance {
                    return Ok(CriticalBetaReport {
                        lo: band_lo,
                        hi: band_hi,
                        point: (mid - p.drift_mean).clamp(band_lo, band_hi),
                        tolerance,
                        evaluations: evals,
                    });
                }
                return Err(Error::Inconclusive(format!(
                    "drift at beta = {mid:.4} ambiguous after doubling replicates \
                     (band width {:.4} > tolerance {tolerance})",
                    band_hi - band_lo
                )));
            }
        }
    }
    Ok(CriticalBetaReport {
        lo,
        hi,
        point: 0.5 * (lo + hi),
        tolerance,
        evaluations: evals,
    })
}
