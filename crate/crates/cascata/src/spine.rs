//! Size-biased spine sampling and the decompositions built on it.
//!
//! A spine realization draws a uniform boundary path, gives the vertices
//! along it size-biased weights, and expands every subtree hanging off the
//! path under the ordinary law. Total weighted mass then splits exactly
//! into the spine term plus one term per branch level, which yields:
//!
//! - [`SpineRealization::total_mass`]: mass assembled from the spine,
//!   equal to the full-expansion value on the coupled realization;
//! - [`SpineRealization::submartingale_trajectory`]: the off-spine
//!   submartingale M_n with predictable part ((b-1)/b) sum c_j, and the
//!   sandwich `spine term <= mass <= spine term + sup_j R_j * M_n`;
//! - [`nondegeneracy_verdict`]: exact classification by the entropy index,
//!   cross-checked by two spine Monte Carlo diagnostics.

use crate::cascade::{
    expand_overlaid, expand_walk, CascadeRealization, LevelOverlay, SpineOverlayData,
};
use crate::gen::{GeneratorLaw, GeneratorModel, ModelSampler, RootNode};
use crate::rng::{derive_seed, NodeRng, StreamTag};
use crate::tree::{Branching, TreeAddress, DEFAULT_NODE_CAP};
use crate::util::{lse, mean_se, ols};
use crate::weights::WeightSystem;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Exactness tolerance for classifying an entropy index as boundary.
const BOUNDARY_TOL: f64 = 1e-9;

/// One spine realization: path digits, size-biased spine data, the weight
/// system values along the path, and per-branch-level aggregates of the
/// off-spine subtrees (enough to assemble masses and submartingales at
/// every level without retaining the subtrees themselves).
#[derive(Clone, Debug)]
pub struct SpineRealization {
    model: GeneratorModel,
    f: WeightSystem,
    seed: u64,
    depth: usize,
    digits: Vec<u8>,
    spine_ln_w: Vec<f64>,
    spine_states: Option<Vec<u16>>,
    vector_groups: Option<Vec<Vec<f64>>>,
    component: Option<u16>,
    spine_ln_f: Vec<f64>,
    /// prefix[n] = sum of spine ln-weights through depth n (root included).
    prefix_ln_w: Vec<f64>,
    /// ws[j][r] = ln sum over the b-1 sibling subtrees at branch level j of
    /// their level-r weighted sums W_s (prod W along the path) F, with F
    /// evaluated at global addresses.
    sib_ws: Vec<Vec<f64>>,
}

/// Sample a spine realization: the path is uniform, spine weights follow
/// the size-biased law (the size-biased chain for Markov kernels, the
/// tilted sibling vector for vector laws), and off-spine subtrees follow
/// the ordinary law, all keyed by global addresses under `seed`.
pub fn sample_spine(
    model: &GeneratorModel,
    f: &WeightSystem,
    depth: usize,
    seed: u64,
) -> Result<SpineRealization> {
    let b = model.branching();
    b.level_count(depth, DEFAULT_NODE_CAP)?;
    f.validate(b)?;

    let bn = b.get() as usize;
    let sampler = ModelSampler::new(model, seed);

    let mut path_rng = NodeRng::for_address(seed, StreamTag::SpinePath, &[]);
    let digits: Vec<u8> = (0..depth).map(|_| path_rng.next_digit(b.get())).collect();

    let root = sampler.root_node_size_biased();
    let mut spine_ln_w = Vec::with_capacity(depth + 1);
    let mut spine_states: Vec<u16> = Vec::new();
    let markov = root.state.is_some();
    spine_ln_w.push(root.ln_w);
    if markov {
        spine_states.push(root.state.unwrap());
    }

    let mut vector_groups: Option<Vec<Vec<f64>>> = sampler.is_vector().then(Vec::new);
    for n in 1..=depth {
        if let Some(groups) = vector_groups.as_mut() {
            let group = sampler.children_vector_size_biased(&digits[..n - 1], digits[n - 1]);
            spine_ln_w.push(group[digits[n - 1] as usize]);
            groups.push(group);
        } else {
            let parent_state = markov.then(|| spine_states[n - 1]);
            let (w, s) = sampler.child_size_biased(&digits[..n], parent_state);
            spine_ln_w.push(w);
            if markov {
                spine_states.push(s.expect("markov spine state"));
            }
        }
    }

    let mut prefix_ln_w = Vec::with_capacity(depth + 1);
    let mut acc = 0.0;
    for &w in &spine_ln_w {
        acc += w;
        prefix_ln_w.push(acc);
    }

    let spine_ln_f: Vec<f64> = (0..=depth)
        .map(|n| f.ln_value(&digits[..n], &spine_ln_w[..=n], b))
        .collect();

    // realized root mass: E[W F] at the root degenerates to this value
    // under the shipped (ancestry-deterministic at the root) rules
    if spine_ln_w[0] + spine_ln_f[0] == f64::NEG_INFINITY {
        return Err(Error::ZeroRootMass);
    }

    // off-spine subtrees, aggregated into per-branch-level weighted sums
    let mut sib_ws: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut gdigits: Vec<u8> = Vec::new();
    for j in 0..depth {
        let m = depth - j - 1;
        let mut terms: Vec<Vec<f64>> = vec![Vec::new(); m + 1];
        for d in 0..bn as u8 {
            if d == digits[j] {
                continue;
            }
            gdigits.clear();
            gdigits.extend_from_slice(&digits[..j]);
            gdigits.push(d);
            let sib_addr = TreeAddress::from_digits(b, gdigits.clone())?;

            let sib_root = if let Some(groups) = &vector_groups {
                RootNode { ln_w: groups[j][d as usize], state: None }
            } else {
                let parent_state = markov.then(|| spine_states[j]);
                let (w, s) = sampler.child(&gdigits, parent_state);
                RootNode { ln_w: w, state: s }
            };

            let sub = expand_walk(&sampler, &sib_addr, sib_root, m, None);

            // cumulative path sums from the sibling root down
            let mut cum: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
            cum.push(vec![sub.ln_w[0][0]]);
            for r in 0..m {
                let prev = &cum[r];
                let w = &sub.ln_w[r + 1];
                let mut next = vec![0.0f64; w.len()];
                for (child, wc) in w.iter().enumerate() {
                    next[child] = prev[child / bn] + wc;
                }
                cum.push(next);
            }

            // F at each subtree vertex, with ancestry = spine prefix + path
            let mut ancestry: Vec<f64> = Vec::with_capacity(depth + 1);
            for (r, cum_level) in cum.iter().enumerate() {
                for (idx, &path_sum) in cum_level.iter().enumerate() {
                    gdigits.truncate(j + 1);
                    let mut i = idx;
                    gdigits.resize(j + 1 + r, 0);
                    for slot in (0..r).rev() {
                        gdigits[j + 1 + slot] = (i % bn) as u8;
                        i /= bn;
                    }
                    ancestry.clear();
                    ancestry.extend_from_slice(&spine_ln_w[..=j]);
                    ancestry.push(sub.ln_w[0][0]);
                    let mut a = 0usize;
                    for (lvl, &dd) in gdigits[j + 1..].iter().enumerate() {
                        a = a * bn + dd as usize;
                        ancestry.push(sub.ln_w[lvl + 1][a]);
                    }
                    let lnf = f.ln_value(&gdigits, &ancestry, b);
                    let term = path_sum + lnf;
                    if term > f64::NEG_INFINITY {
                        terms[r].push(term);
                    }
                }
            }
        }
        sib_ws.push(terms.into_iter().map(|t| lse(&t)).collect());
    }

    Ok(SpineRealization {
        model: model.clone(),
        f: f.clone(),
        seed,
        depth,
        digits,
        spine_ln_w,
        spine_states: markov.then_some(spine_states),
        vector_groups,
        component: sampler.component(),
        spine_ln_f,
        prefix_ln_w,
        sib_ws,
    })
}

impl SpineRealization {
    pub fn model(&self) -> &GeneratorModel {
        &self.model
    }

    pub fn weight_system(&self) -> &WeightSystem {
        &self.f
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    pub fn mixture_component(&self) -> Option<u16> {
        self.component
    }

    /// Spine generator weight at depth n (size-biased draw).
    pub fn spine_weight(&self, n: usize) -> f64 {
        self.spine_ln_w[n].exp()
    }

    pub fn spine_ln_weights(&self) -> &[f64] {
        &self.spine_ln_w
    }

    /// ln of the level-n density factor `prod W_{t|j} F_{t|n}`.
    pub fn ln_rn_derivative(&self, n: usize) -> f64 {
        self.prefix_ln_w[n] + self.spine_ln_f[n]
    }

    fn check_level(&self, n: usize) -> Result<()> {
        if n > self.depth {
            return Err(Error::ResolutionMismatch { level: n, depth: self.depth });
        }
        Ok(())
    }

    fn ln_spine_term(&self, n: usize) -> f64 {
        self.prefix_ln_w[n] - n as f64 * self.model.branching().ln() + self.spine_ln_f[n]
    }

    /// Weighted total mass at level n assembled from the spine term plus
    /// the off-spine branch terms; equals the full-expansion value on the
    /// coupled realization.
    pub fn total_ln_mass(&self, n: usize) -> Result<f64> {
        self.check_level(n)?;
        let ln_b = self.model.branching().ln();
        let mut terms = Vec::with_capacity(n + 1);
        terms.push(self.ln_spine_term(n));
        for j in 0..n {
            terms.push(self.prefix_ln_w[j] - n as f64 * ln_b + self.sib_ws[j][n - j - 1]);
        }
        Ok(lse(&terms))
    }

    pub fn total_mass(&self, n: usize) -> Result<f64> {
        Ok(self.total_ln_mass(n)?.exp())
    }

    /// Masses at every level through the sampled depth.
    pub fn masses(&self) -> Vec<f64> {
        (0..=self.depth)
            .map(|n| self.total_mass(n).expect("level within depth"))
            .collect()
    }

    /// The off-spine submartingale M_n for constants `c` (one per branch
    /// level), its predictable part A_n, and the sandwich around the mass.
    pub fn submartingale_trajectory(&self, c: &[f64]) -> Result<SubmartingaleTrajectory> {
        if c.len() < self.depth {
            return Err(Error::InvalidParameter(format!(
                "need {} submartingale constants, got {}",
                self.depth,
                c.len()
            )));
        }
        if c.iter().take(self.depth).any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidParameter("c_j must be finite and nonnegative".into()));
        }
        if c.iter().take(self.depth.max(1)).all(|&x| x == 0.0) {
            return Err(Error::DegenerateBoundConstants);
        }
        let b = self.model.branching();
        let ln_b = b.ln();
        let bf = f64::from(b.get());

        let mut m = Vec::with_capacity(self.depth + 1);
        let mut a = Vec::with_capacity(self.depth + 1);
        let mut lower = Vec::with_capacity(self.depth + 1);
        let mut mass = Vec::with_capacity(self.depth + 1);
        let mut upper = Vec::with_capacity(self.depth + 1);

        for n in 0..=self.depth {
            let mut mn = 0.0;
            for j in 0..n {
                mn += c[j] * (-((n - j) as f64) * ln_b + self.sib_ws[j][n - j - 1]).exp();
            }
            m.push(mn);
            a.push((bf - 1.0) / bf * c[..n].iter().sum::<f64>());

            let spine = self.ln_spine_term(n).exp();
            lower.push(spine);
            mass.push(self.total_mass(n)?);
            let mut sup_r = 0.0f64;
            for j in 0..n {
                let num = (self.prefix_ln_w[j] - j as f64 * ln_b).exp();
                let r = if c[j] > 0.0 {
                    num / c[j]
                } else if num > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                sup_r = sup_r.max(r);
            }
            upper.push(if n == 0 { spine } else { spine + sup_r * mn });
        }

        Ok(SubmartingaleTrajectory {
            c: c[..self.depth].to_vec(),
            m,
            a,
            lower,
            mass,
            upper,
        })
    }
}

/// The submartingale path M_n with its predictable part and the per-level
/// sandwich `lower <= mass <= upper`.
#[derive(Clone, Debug, Serialize)]
pub struct SubmartingaleTrajectory {
    pub c: Vec<f64>,
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    pub lower: Vec<f64>,
    pub mass: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SubmartingaleTrajectory {
    /// Check both inequalities at every level with a small relative slack
    /// for roundoff; the bounds are arithmetic identities per realization.
    pub fn bound_check(&self) -> BoundReport {
        let slack = 1e-9;
        let mut per_level = Vec::with_capacity(self.mass.len());
        let mut violations = 0usize;
        for n in 0..self.mass.len() {
            let lower_ok = self.lower[n] <= self.mass[n] * (1.0 + slack) + f64::MIN_POSITIVE;
            let upper_ok = self.mass[n] <= self.upper[n] * (1.0 + slack) + f64::MIN_POSITIVE;
            if !(lower_ok && upper_ok) {
                violations += 1;
            }
            per_level.push(LevelBounds { level: n, lower_ok, upper_ok });
        }
        BoundReport { per_level, violations }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelBounds {
    pub level: usize,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub per_level: Vec<LevelBounds>,
    pub violations: usize,
}

/// Choice of submartingale constants c_j.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum CSequence {
    Constant { value: f64 },
    /// c_j = c^-j; summable for c > 1.
    Geometric { c: f64 },
}

impl CSequence {
    pub fn values(&self, depth: usize) -> Result<Vec<f64>> {
        match self {
            CSequence::Constant { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(Error::InvalidParameter("constant c must be finite and >= 0".into()));
                }
                Ok(vec![*value; depth])
            }
            CSequence::Geometric { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(Error::InvalidParameter("geometric c must be > 0".into()));
                }
                Ok((0..depth).map(|j| c.powi(-(j as i32))).collect())
            }
        }
    }
}

/// Replay a spine realization inside a full expansion: spine vertices take
/// their size-biased draws (whole sibling groups for vector laws), every
/// other vertex re-draws from its keyed stream. The result is the coupled
/// realization whose weighted masses the spine assembly reproduces.
pub fn expand_with_spine(spine: &SpineRealization) -> Result<CascadeRealization> {
    let b = spine.model.branching();
    let bn = b.get() as u64;
    let mut levels = Vec::with_capacity(spine.depth);
    let mut idx: u64 = 0;
    for n in 1..=spine.depth {
        let digit = spine.digits[n - 1];
        if let Some(groups) = &spine.vector_groups {
            levels.push(LevelOverlay::SiblingGroup {
                parent_index: idx,
                ln_w: groups[n - 1].clone(),
            });
            idx = idx * bn + u64::from(digit);
        } else {
            idx = idx * bn + u64::from(digit);
            levels.push(LevelOverlay::Node {
                index: idx,
                ln_w: spine.spine_ln_w[n],
                state: spine.spine_states.as_ref().map(|s| s[n]),
            });
        }
    }
    let overlay = SpineOverlayData {
        levels,
        root: Some(RootNode {
            ln_w: spine.spine_ln_w[0],
            state: spine.spine_states.as_ref().map(|s| s[0]),
        }),
    };
    expand_overlaid(&spine.model, spine.depth, spine.seed, Some(&overlay))
}

/// Mean of log_b W along a size-biased spine walk of `steps` levels. Runs
/// on a sequential keyed stream, so arbitrarily deep walks cost no tree.
pub(crate) fn size_biased_walk_mean_logb(model: &GeneratorModel, steps: usize, seed: u64) -> f64 {
    let b = model.branching();
    let ln_b = b.ln();
    let mut stream = NodeRng::for_address(seed, StreamTag::SpinePath, &[]);
    let mut sum = 0.0;
    match model.law() {
        GeneratorLaw::Scalar(law) => {
            for _ in 0..steps {
                sum += law.sample_ln_size_biased(&mut stream, b);
            }
        }
        GeneratorLaw::Mixture(mix) => {
            let mut crng = NodeRng::for_address(seed, StreamTag::MixtureComponent, &[]);
            let law = &mix.components()[mix.draw_component(&mut crng) as usize];
            for _ in 0..steps {
                sum += law.sample_ln_size_biased(&mut stream, b);
            }
        }
        GeneratorLaw::Markov(m) => {
            let mut root_rng = NodeRng::for_address(seed, StreamTag::Weight, &[]);
            let mut state = m.draw_initial_state(&mut root_rng);
            for _ in 0..steps {
                state = m.draw_child_state_size_biased(&mut stream, state);
                sum += m.states()[state as usize].ln();
            }
        }
        GeneratorLaw::Vector(v) => {
            for _ in 0..steps {
                let d = stream.next_digit(b.get());
                let group = v.sample_children_ln_size_biased(&mut stream, b, d as usize);
                sum += group[d as usize];
            }
        }
    }
    sum / (steps as f64 * ln_b)
}

/// Three-way nondegeneracy classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Nondegenerate,
    /// Entropy index exactly one; degenerate, at the critical point.
    Boundary,
    Degenerate,
}

fn classify(index: f64) -> Verdict {
    if (index - 1.0).abs() <= BOUNDARY_TOL {
        Verdict::Boundary
    } else if index < 1.0 {
        Verdict::Nondegenerate
    } else {
        Verdict::Degenerate
    }
}

/// Monte Carlo drift of the spine walk: per-replicate mean of
/// log_b W - 1, whose sign estimates the verdict.
#[derive(Clone, Debug, Serialize)]
pub struct DriftDiagnostic {
    pub mean: f64,
    pub se: f64,
    pub replicates: usize,
    pub steps: usize,
}

/// Monte Carlo growth of the weighted total mass under the spine law:
/// per-replicate least-squares slope of log_b mass against level. Bounded
/// trajectories (slope near or below zero) support nondegeneracy; growth
/// supports degeneracy.
#[derive(Clone, Debug, Serialize)]
pub struct MassGrowthDiagnostic {
    pub slope_mean: f64,
    pub slope_se: f64,
    pub replicates: usize,
    pub depth: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracyReport {
    pub verdict: Verdict,
    /// Exact entropy index (prior mean for mixtures).
    pub entropy_index: f64,
    /// Index used for classification; for mixtures the minimum component
    /// index, since mass survives when any prior-charged component does.
    pub classification_index: f64,
    pub component_indices: Option<Vec<f64>>,
    pub drift: DriftDiagnostic,
    pub mass_growth: MassGrowthDiagnostic,
    /// Whether the Monte Carlo diagnostics avoid contradicting the exact
    /// classification at four standard errors.
    pub consistent: bool,
}

/// Classify degeneracy exactly from the entropy index and cross-check by
/// spine Monte Carlo. The weight system enters only the mass-growth
/// diagnostic; a percolation rule also shifts both the index and the walk
/// drift by its beta.
pub fn nondegeneracy_verdict(
    model: &GeneratorModel,
    f: &WeightSystem,
    depth: usize,
    replicates: usize,
    seed: u64,
) -> Result<NondegeneracyReport> {
    f.validate(model.branching())?;
    let beta_shift = match f {
        WeightSystem::Percolation { beta, .. } => *beta,
        _ => 0.0,
    };
    let entropy_index = model.entropy_index()? + beta_shift;
    let component_indices = model
        .component_entropy_indices()
        .map(|v| v.iter().map(|i| i + beta_shift).collect::<Vec<f64>>());
    let classification_index = component_indices
        .as_ref()
        .map(|v| v.iter().copied().fold(f64::INFINITY, f64::min))
        .unwrap_or(entropy_index);
    let verdict = classify(classification_index);

    // diagnostic (a): growth of the weighted mass under the spine law
    let growth_reps = replicates.min(200).max(2);
    let slopes: Vec<f64> = (0..growth_reps)
        .into_par_iter()
        .map(|rep| {
            let s = sample_spine(model, f, depth, derive_seed(seed, 1_000_000 + rep as u64))?;
            let ln_b = model.branching().ln();
            let xs: Vec<f64> = (0..=depth).map(|n| n as f64).collect();
            let ys: Vec<f64> = (0..=depth)
                .map(|n| s.total_ln_mass(n).map(|v| v / ln_b))
                .collect::<Result<_>>()?;
            Ok(ols(&xs, &ys).0)
        })
        .collect::<Result<_>>()?;
    let (slope_mean, slope_se) = mean_se(&slopes);

    // diagnostic (b): drift of the spine random walk
    let steps = depth.max(64);
    let drifts: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            size_biased_walk_mean_logb(model, steps, derive_seed(seed, rep as u64)) + beta_shift
                - 1.0
        })
        .collect();
    let (drift_mean, drift_se) = mean_se(&drifts);

    // MC estimates target the prior-mean index; contradiction means a CI
    // strictly on the wrong side of it
    let expected_drift = entropy_index - 1.0;
    let drift_ok = (drift_mean - expected_drift).abs() <= 4.0 * drift_se + 1e-12;
    let growth_ok = match classify(entropy_index) {
        Verdict::Nondegenerate => slope_mean - 4.0 * slope_se <= BOUNDARY_TOL,
        Verdict::Degenerate => slope_mean + 4.0 * slope_se >= -BOUNDARY_TOL,
        Verdict::Boundary => true,
    };

    Ok(NondegeneracyReport {
        verdict,
        entropy_index,
        classification_index,
        component_indices,
        drift: DriftDiagnostic {
            mean: drift_mean,
            se: drift_se,
            replicates,
            steps,
        },
        mass_growth: MassGrowthDiagnostic {
            slope_mean,
            slope_se,
            replicates: growth_reps,
            depth,
        },
        consistent: drift_ok && growth_ok,
    })
}

/// Replicate means of the increments M_{n+1} - M_n against the predictable
/// target ((b-1)/b) c_n.
#[derive(Clone, Debug, Serialize)]
pub struct DoobReport {
    pub target: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub replicates: usize,
}

impl DoobReport {
    pub fn worst_sigma(&self) -> f64 {
        self.target
            .iter()
            .zip(self.mean.iter().zip(&self.se))
            .map(|(t, (m, s))| (m - t).abs() / s.max(1e-300))
            .fold(0.0, f64::max)
    }
}

/// Monte Carlo check of the Doob decomposition of M_n under the spine law.
pub fn doob_check(
    model: &GeneratorModel,
    f: &WeightSystem,
    depth: usize,
    replicates: usize,
    c: &CSequence,
    seed: u64,
) -> Result<DoobReport> {
    let cs = c.values(depth)?;
    let bf = f64::from(model.branching().get());
    let increments: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let s = sample_spine(model, f, depth, derive_seed(seed, rep as u64))?;
            let t = s.submartingale_trajectory(&cs)?;
            Ok((0..depth).map(|n| t.m[n + 1] - t.m[n]).collect())
        })
        .collect::<Result<_>>()?;
    let mut mean = Vec::with_capacity(depth);
    let mut se = Vec::with_capacity(depth);
    for n in 0..depth {
        let level: Vec<f64> = increments.iter().map(|inc| inc[n]).collect();
        let (m, s) = mean_se(&level);
        mean.push(m);
        se.push(s);
    }
    let target = (0..depth).map(|n| (bf - 1.0) / bf * cs[n]).collect();
    Ok(DoobReport { target, mean, se, replicates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::expand;
    use crate::gen::{ExchangeableMixtureLaw, MarkovKernelLaw, ScalarLaw, VectorLaw};
    use crate::weights::weighted_masses;
    use approx::assert_relative_eq;

    fn b2() -> Branching {
        Branching::new(2).unwrap()
    }

    fn scalar_model(law: ScalarLaw) -> GeneratorModel {
        GeneratorModel::new(b2(), GeneratorLaw::Scalar(law)).unwrap()
    }

    #[test]
    fn constant_spine_is_flat() {
        let m = scalar_model(ScalarLaw::constant());
        let s = sample_spine(&m, &WeightSystem::Unit, 8, 3).unwrap();
        for n in 0..=8 {
            assert_eq!(s.spine_weight(n), 1.0);
            assert_relative_eq!(s.total_mass(n).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spine_weight_law_is_size_biased() {
        // two_point(0.5, 1.5, 1/2): spine atoms 0.5 w.p. 1/4, 1.5 w.p. 3/4
        let m = scalar_model(ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap());
        let mut heavy = 0usize;
        let mut total = 0usize;
        for rep in 0..2000 {
            let s = sample_spine(&m, &WeightSystem::Unit, 6, derive_seed(51, rep)).unwrap();
            for n in 1..=6 {
                total += 1;
                if s.spine_weight(n) > 1.0 {
                    heavy += 1;
                }
            }
        }
        let p = heavy as f64 / total as f64;
        let se = (0.75 * 0.25 / total as f64).sqrt();
        assert!((p - 0.75).abs() <= 4.0 * se, "heavy-atom frequency {p}");

        // beta model: spine weights are the constant b^beta
        let m = scalar_model(ScalarLaw::beta_model(1.2).unwrap());
        let s = sample_spine(&m, &WeightSystem::Unit, 6, 77).unwrap();
        for n in 1..=6 {
            assert_relative_eq!(s.spine_weight(n), 2f64.powf(1.2), epsilon = 1e-12);
        }
    }

    fn coupling_models() -> Vec<GeneratorModel> {
        vec![
            scalar_model(ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap()),
            scalar_model(ScalarLaw::lognormal(0.4).unwrap()),
            scalar_model(ScalarLaw::beta_model(0.6).unwrap()),
            GeneratorModel::new(
                b2(),
                GeneratorLaw::Markov(
                    MarkovKernelLaw::new(
                        vec![0.4, 1.0, 1.6],
                        vec![0.25, 0.5, 0.25],
                        vec![
                            vec![0.10, 0.80, 0.10],
                            vec![0.30, 0.40, 0.30],
                            vec![0.45, 0.10, 0.45],
                        ],
                    )
                    .unwrap(),
                ),
            )
            .unwrap(),
            GeneratorModel::new(
                b2(),
                GeneratorLaw::Mixture(
                    ExchangeableMixtureLaw::new(
                        vec![0.6, 0.4],
                        vec![
                            ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap(),
                            ScalarLaw::lognormal(0.25 * std::f64::consts::LN_2).unwrap(),
                        ],
                    )
                    .unwrap(),
                ),
            )
            .unwrap(),
            GeneratorModel::new(
                b2(),
                GeneratorLaw::Vector(VectorLaw::Atoms {
                    atoms: vec![vec![0.5, 1.5], vec![1.5, 0.5], vec![1.0, 1.0]],
                    probs: vec![0.3, 0.3, 0.4],
                }),
            )
            .unwrap(),
        ]
    }

    #[test]
    fn spine_assembly_matches_overlaid_expansion() {
        let systems = [
            WeightSystem::Unit,
            WeightSystem::Threshold { d: 0.9, k: 1.0 },
            WeightSystem::Percolation { beta: 0.3, seed: 555 },
        ];
        for model in coupling_models() {
            for f in &systems {
                for seed in [1u64, 2, 3] {
                    let s = sample_spine(&model, f, 8, seed).unwrap();
                    let full = expand_with_spine(&s).unwrap();
                    let w = weighted_masses(&full, f).unwrap();
                    for n in 0..=8 {
                        let a = s.total_mass(n).unwrap();
                        let b = w.total_mass(n).unwrap();
                        let denom = a.max(b).max(f64::MIN_POSITIVE);
                        assert!(
                            (a - b).abs() / denom <= 1e-12 || (a == 0.0 && b == 0.0),
                            "coupling mismatch at level {n}: spine {a} vs full {b} ({model:?}, {f:?})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn off_spine_weights_agree_with_plain_expansion_for_iid_laws() {
        let model = scalar_model(ScalarLaw::lognormal(0.3).unwrap());
        let seed = 99;
        let s = sample_spine(&model, &WeightSystem::Unit, 7, seed).unwrap();
        let plain = expand(&model, 7, seed).unwrap();
        let overlaid = expand_with_spine(&s).unwrap();
        let b = 2usize;
        let mut spine_idx = 0usize;
        for n in 1..=7 {
            spine_idx = spine_idx * b + s.digits()[n - 1] as usize;
            let pw = plain.level_ln_weights(n).unwrap();
            let ow = overlaid.level_ln_weights(n).unwrap();
            for i in 0..pw.len() {
                if i == spine_idx {
                    continue;
                }
                assert_eq!(pw[i].to_bits(), ow[i].to_bits(), "level {n} node {i}");
            }
        }
    }

    #[test]
    fn mixture_component_is_shared_between_spine_and_expansion() {
        let model = &coupling_models()[4];
        for seed in 0..20 {
            let s = sample_spine(model, &WeightSystem::Unit, 4, seed).unwrap();
            let r = expand(model, 4, seed).unwrap();
            assert_eq!(s.mixture_component(), r.mixture_component());
        }
    }

    #[test]
    fn constant_model_submartingale_equals_predictable_part() {
        let m = scalar_model(ScalarLaw::constant());
        let s = sample_spine(&m, &WeightSystem::Unit, 10, 5).unwrap();
        let c: Vec<f64> = (0..10).map(|j| 1.25f64.powi(-(j as i32))).collect();
        let t = s.submartingale_trajectory(&c).unwrap();
        for n in 0..=10 {
            assert_relative_eq!(t.m[n], t.a[n], epsilon = 1e-12);
        }
        assert_eq!(t.bound_check().violations, 0);
    }

    #[test]
    fn sandwich_holds_realization_wise() {
        let models = [
            scalar_model(ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap()),
            scalar_model(ScalarLaw::lognormal(0.5 * std::f64::consts::LN_2).unwrap()),
            scalar_model(ScalarLaw::beta_model(1.2).unwrap()),
        ];
        let cs = CSequence::Geometric { c: 2f64.powf(0.4) };
        for (k, m) in models.iter().enumerate() {
            let c = cs.values(8).unwrap();
            for rep in 0..500 {
                let s = sample_spine(m, &WeightSystem::Unit, 8, derive_seed(k as u64, rep)).unwrap();
                let t = s.submartingale_trajectory(&c).unwrap();
                assert_eq!(t.bound_check().violations, 0, "model {k} rep {rep}");
            }
        }
    }

    #[test]
    fn doob_increments_match_target() {
        let m = scalar_model(ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap());
        let report = doob_check(
            &m,
            &WeightSystem::Unit,
            6,
            4000,
            &CSequence::Constant { value: 1.0 },
            909,
        )
        .unwrap();
        assert!(
            report.worst_sigma() <= 4.0,
            "doob increments off target: {:?} vs {:?}",
            report.mean,
            report.target
        );
    }

    #[test]
    fn all_zero_constants_are_rejected() {
        let m = scalar_model(ScalarLaw::constant());
        let s = sample_spine(&m, &WeightSystem::Unit, 4, 0).unwrap();
        let err = s.submartingale_trajectory(&[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::DegenerateBoundConstants));
    }

    #[test]
    fn vanishing_root_mass_is_an_error() {
        let m = scalar_model(ScalarLaw::constant());
        // threshold with k < 1 kills the root weight value
        let f = WeightSystem::Threshold { d: 0.0, k: 0.5 };
        assert!(matches!(
            sample_spine(&m, &f, 4, 0),
            Err(Error::ZeroRootMass)
        ));
        let f = WeightSystem::RatioTilt { tilt: vec![0.0, 0.0] };
        assert!(matches!(
            sample_spine(&m, &f, 4, 0),
            Err(Error::ZeroRootMass)
        ));
    }

    #[test]
    fn verdict_panel_is_exact_and_consistent() {
        let cases: Vec<(GeneratorModel, Verdict)> = vec![
            (scalar_model(ScalarLaw::constant()), Verdict::Nondegenerate),
            (
                scalar_model(ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap()),
                Verdict::Nondegenerate,
            ),
            (scalar_model(ScalarLaw::beta_model(0.5).unwrap()), Verdict::Nondegenerate),
            (scalar_model(ScalarLaw::beta_model(1.2).unwrap()), Verdict::Degenerate),
            (
                scalar_model(ScalarLaw::lognormal(3.0 * std::f64::consts::LN_2).unwrap()),
                Verdict::Degenerate,
            ),
            (
                scalar_model(ScalarLaw::two_point(0.0, 2.0, 0.5).unwrap()),
                Verdict::Boundary,
            ),
        ];
        for (model, expected) in cases {
            let report = nondegeneracy_verdict(&model, &WeightSystem::Unit, 10, 400, 31).unwrap();
            assert_eq!(report.verdict, expected, "{model:?}");
            assert!(report.consistent, "diagnostics contradict exact verdict for {model:?}");
        }
    }

    #[test]
    fn percolation_weights_shift_the_verdict() {
        let m = scalar_model(ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap());
        let f = WeightSystem::Percolation { beta: 0.9, seed: 4 };
        let report = nondegeneracy_verdict(&m, &f, 8, 400, 77).unwrap();
        // 0.18872 + 0.9 > 1
        assert_eq!(report.verdict, Verdict::Degenerate);
        assert!(report.consistent);
    }
}
