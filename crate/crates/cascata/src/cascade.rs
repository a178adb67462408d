//! Seeded, depth-limited cascade realizations.
//!
//! [`expand`] samples every generator weight down to a fixed depth and
//! derives the cylinder masses `lambda_n(cyl) = b^-n prod W` in log space,
//! with exact negative infinity for dead cylinders. The walker is shared
//! with the spine module, which expands off-spine subtrees through the same
//! code path so that coupled realizations agree bitwise.

use crate::gen::{GeneratorModel, ModelSampler, RootNode};
use crate::rng::derive_seed;
use crate::tree::{Branching, TreeAddress, DEFAULT_NODE_CAP};
use crate::util::lse;
use crate::{Error, Result};
use rayon::prelude::*;

/// Per-level overlay applied while walking: used to implant spine draws
/// into a full expansion so the two decompositions of mass can be compared
/// on the same realization.
#[derive(Clone, Debug)]
pub(crate) enum LevelOverlay {
    /// Replace the single spine node at this level.
    Node { index: u64, ln_w: f64, state: Option<u16> },
    /// Vector laws draw whole sibling groups at the parent, so the overlay
    /// replaces the group of b children below the spine prefix.
    SiblingGroup { parent_index: u64, ln_w: Vec<f64> },
}

#[derive(Clone, Debug, Default)]
pub(crate) struct SpineOverlayData {
    /// Overlay for levels 1..=depth, indexed by level - 1.
    pub levels: Vec<LevelOverlay>,
    pub root: Option<RootNode>,
}

/// Raw level data produced by the walker: node log-weights and, for Markov
/// laws, the state index per node. Level r of a subtree rooted at depth d
/// holds the b^r descendants at global depth d + r.
pub(crate) struct SubtreeLevels {
    pub ln_w: Vec<Vec<f64>>,
    pub states: Option<Vec<Vec<u16>>>,
}

/// Expand the descendants of `root_addr` (whose own draw is `root`) down
/// `depth` further levels. All draws are keyed by global addresses.
pub(crate) fn expand_walk(
    sampler: &ModelSampler<'_>,
    root_addr: &TreeAddress,
    root: RootNode,
    depth: usize,
    overlay: Option<&SpineOverlayData>,
) -> SubtreeLevels {
    let b = sampler.model().branching().get() as usize;
    let markov = root.state.is_some();
    let mut ln_w: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    let mut states: Vec<Vec<u16>> = Vec::new();
    ln_w.push(vec![root.ln_w]);
    if markov {
        states.push(vec![root.state.unwrap()]);
    }

    let mut digits: Vec<u8> = root_addr.digits().to_vec();
    let base_depth = digits.len();

    for level in 0..depth {
        let parents = ln_w[level].len();
        let mut next_w = vec![0.0f64; parents * b];
        let mut next_s = if markov { vec![0u16; parents * b] } else { Vec::new() };
        digits.resize(base_depth + level + 1, 0);

        // decode the path digits for parent 0 of this level
        for p in 0..parents {
            // write the relative digits of parent p into the buffer
            let mut idx = p;
            for slot in (0..level).rev() {
                digits[base_depth + slot] = (idx % b) as u8;
                idx /= b;
            }

            let group = if sampler.is_vector() {
                let parent_digits = &digits[..base_depth + level];
                let from_overlay = overlay.and_then(|o| {
                    o.levels.get(level).and_then(|l| match l {
                        LevelOverlay::SiblingGroup { parent_index, ln_w }
                            if *parent_index == p as u64 && base_depth == 0 =>
                        {
                            Some(ln_w.clone())
                        }
                        _ => None,
                    })
                });
                Some(from_overlay.unwrap_or_else(|| sampler.children_vector(parent_digits)))
            } else {
                None
            };

            for j in 0..b {
                digits[base_depth + level] = j as u8;
                let child = p * b + j;
                let overlaid = overlay.and_then(|o| {
                    if base_depth != 0 {
                        return None;
                    }
                    o.levels.get(level).and_then(|l| match l {
                        LevelOverlay::Node { index, ln_w, state } if *index == child as u64 => {
                            Some((*ln_w, *state))
                        }
                        _ => None,
                    })
                });
                if let Some((w, s)) = overlaid {
                    next_w[child] = w;
                    if markov {
                        next_s[child] = s.expect("markov overlay carries a state");
                    }
                } else if let Some(group) = &group {
                    next_w[child] = group[j];
                } else {
                    let parent_state = if markov { Some(states[level][p]) } else { None };
                    let (w, s) = sampler.child(&digits[..base_depth + level + 1], parent_state);
                    next_w[child] = w;
                    if markov {
                        next_s[child] = s.expect("markov child carries a state");
                    }
                }
            }
        }
        ln_w.push(next_w);
        if markov {
            states.push(next_s);
        }
    }

    SubtreeLevels {
        ln_w,
        states: if markov { Some(states) } else { None },
    }
}

/// One realization of a cascade to finite depth: all generator weights and
/// the derived cylinder masses, in log space.
#[derive(Clone, Debug)]
pub struct CascadeRealization {
    model: GeneratorModel,
    seed: u64,
    depth: usize,
    ln_w: Vec<Vec<f64>>,
    ln_mass: Vec<Vec<f64>>,
    states: Option<Vec<Vec<u16>>>,
    component: Option<u16>,
}

/// Expand a cascade realization to `depth` levels under the default node cap.
pub fn expand(model: &GeneratorModel, depth: usize, seed: u64) -> Result<CascadeRealization> {
    expand_overlaid(model, depth, seed, None)
}

pub(crate) fn expand_overlaid(
    model: &GeneratorModel,
    depth: usize,
    seed: u64,
    overlay: Option<&SpineOverlayData>,
) -> Result<CascadeRealization> {
    let b = model.branching();
    b.level_count(depth, DEFAULT_NODE_CAP)?;

    let sampler = ModelSampler::new(model, seed);
    let root = overlay
        .and_then(|o| o.root)
        .unwrap_or_else(|| sampler.root_node());
    let levels = expand_walk(&sampler, &TreeAddress::root(b), root, depth, overlay);

    let ln_b = b.ln();
    let bn = b.get() as usize;
    let mut ln_mass: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    ln_mass.push(vec![levels.ln_w[0][0]]);
    for n in 0..depth {
        let prev = &ln_mass[n];
        let w = &levels.ln_w[n + 1];
        let mut next = vec![0.0f64; w.len()];
        for (child, wc) in w.iter().enumerate() {
            next[child] = prev[child / bn] - ln_b + wc;
        }
        ln_mass.push(next);
    }

    Ok(CascadeRealization {
        model: model.clone(),
        seed,
        depth,
        ln_w: levels.ln_w,
        ln_mass,
        states: levels.states,
        component: sampler.component(),
    })
}

impl CascadeRealization {
    pub fn model(&self) -> &GeneratorModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> Branching {
        self.model.branching()
    }

    /// The mixture component realized by this expansion, if any.
    pub fn mixture_component(&self) -> Option<u16> {
        self.component
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level > self.depth {
            return Err(Error::ResolutionMismatch { level, depth: self.depth });
        }
        Ok(())
    }

    fn check_addr(&self, addr: &TreeAddress) -> Result<()> {
        if addr.depth() > self.depth {
            return Err(Error::DepthExceeded { addr_depth: addr.depth(), depth: self.depth });
        }
        if addr.branching() != self.branching() {
            return Err(Error::InvalidParameter(
                "address branching does not match the realization".into(),
            ));
        }
        Ok(())
    }

    /// ln of the generator weight at a vertex.
    pub fn ln_weight(&self, addr: &TreeAddress) -> Result<f64> {
        self.check_addr(addr)?;
        Ok(self.ln_w[addr.depth()][addr.level_index() as usize])
    }

    /// ln of the cylinder mass `lambda_n(cyl)` at a vertex of depth n.
    pub fn ln_cylinder_mass(&self, addr: &TreeAddress) -> Result<f64> {
        self.check_addr(addr)?;
        Ok(self.ln_mass[addr.depth()][addr.level_index() as usize])
    }

    /// Cylinder mass in linear space.
    pub fn cylinder_mass(&self, addr: &TreeAddress) -> Result<f64> {
        Ok(self.ln_cylinder_mass(addr)?.exp())
    }

    pub fn level_ln_masses(&self, level: usize) -> Result<&[f64]> {
        self.check_level(level)?;
        Ok(&self.ln_mass[level])
    }

    pub fn level_ln_weights(&self, level: usize) -> Result<&[f64]> {
        self.check_level(level)?;
        Ok(&self.ln_w[level])
    }

    pub(crate) fn level_states(&self, level: usize) -> Option<&[u16]> {
        self.states.as_ref().map(|s| s[level].as_slice())
    }

    /// ln of the total mass at a level.
    pub fn total_ln_mass(&self, level: usize) -> Result<f64> {
        self.check_level(level)?;
        Ok(lse(&self.ln_mass[level]))
    }

    /// Total mass `lambda_n(T)` at a level.
    pub fn total_mass(&self, level: usize) -> Result<f64> {
        Ok(self.total_ln_mass(level)?.exp())
    }

    /// The total-mass path n -> lambda_n(T) through the expanded depth.
    pub fn trajectory(&self) -> MassTrajectory {
        MassTrajectory {
            masses: (0..=self.depth)
                .map(|n| self.total_mass(n).expect("level within depth"))
                .collect(),
        }
    }

    /// Integrate a simple function that is constant on level-`level`
    /// cylinders against the depth-limited measure: `values[i]` is the
    /// function value on the i-th cylinder in lexicographic order.
    pub fn integrate(&self, level: usize, values: &[f64]) -> Result<f64> {
        self.check_level(level)?;
        let want = self.branching().level_count(level, u64::MAX)? as usize;
        if values.len() != want {
            return Err(Error::InvalidParameter(format!(
                "expected {want} cylinder values at level {level}, got {}",
                values.len()
            )));
        }
        // restricted deepest-level mass per level-`level` cylinder: the
        // descendants form a contiguous index block
        let deepest = &self.ln_mass[self.depth];
        let block = deepest.len() / want;
        let mut out = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let cell = lse(&deepest[i * block..(i + 1) * block]).exp();
            out += v * cell;
        }
        Ok(out)
    }

    /// Number of cylinders with positive mass at a level.
    pub fn alive_count(&self, level: usize) -> Result<usize> {
        self.check_level(level)?;
        Ok(self.ln_mass[level]
            .iter()
            .filter(|&&m| m > f64::NEG_INFINITY)
            .count())
    }
}

/// Total-mass trajectory of one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct MassTrajectory {
    pub masses: Vec<f64>,
}

impl MassTrajectory {
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn final_mass(&self) -> f64 {
        *self.masses.last().expect("trajectory has level 0")
    }
}

/// Trajectories of independent replicates with per-replicate derived seeds;
/// replicate r uses `derive_seed(seed, r)`. Parallel but order-stable.
pub fn replicate_trajectories(
    model: &GeneratorModel,
    depth: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<MassTrajectory>> {
    model.branching().level_count(depth, DEFAULT_NODE_CAP)?;
    (0..replicates)
        .into_par_iter()
        .map(|r| Ok(expand(model, depth, derive_seed(seed, r as u64))?.trajectory()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{GeneratorLaw, ScalarLaw};
    use crate::util::mean_se;
    use approx::assert_relative_eq;

    fn b2() -> Branching {
        Branching::new(2).unwrap()
    }

    fn model(law: ScalarLaw) -> GeneratorModel {
        GeneratorModel::new(b2(), GeneratorLaw::Scalar(law)).unwrap()
    }

    #[test]
    fn constant_cascade_is_haar() {
        let m = model(ScalarLaw::constant());
        let r = expand(&m, 6, 1).unwrap();
        for n in 0..=6 {
            assert_relative_eq!(r.total_mass(n).unwrap(), 1.0, epsilon = 1e-12);
        }
        let addr = TreeAddress::from_digits(b2(), vec![0, 1]).unwrap();
        assert_relative_eq!(r.cylinder_mass(&addr).unwrap(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(
            r.cylinder_mass(&TreeAddress::root(b2())).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn masses_are_additive_within_a_realization() {
        let m = model(ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap());
        let r = expand(&m, 10, 7).unwrap();
        let b = 2usize;
        for n in 0..10 {
            let coarse = r.level_ln_masses(n).unwrap().to_vec();
            let fine = r.level_ln_masses(n + 1).unwrap();
            for (i, &lm) in coarse.iter().enumerate() {
                let kids = lse(&fine[i * b..(i + 1) * b]);
                let (a, c) = (lm.exp(), kids.exp());
                assert!(
                    (a - c).abs() <= 1e-12 * a.max(c).max(1e-300),
                    "additivity at level {n} node {i}: {a} vs {c}"
                );
            }
        }
    }

    #[test]
    fn expansion_is_deterministic_bitwise() {
        let m = model(ScalarLaw::lognormal(0.4).unwrap());
        let r1 = expand(&m, 8, 13).unwrap();
        let r2 = expand(&m, 8, 13).unwrap();
        for n in 0..=8 {
            let a = r1.level_ln_weights(n).unwrap();
            let b = r2.level_ln_weights(n).unwrap();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn critical_beta_model_level_one_distribution() {
        // beta = 1, b = 2: lambda_1(T) in {0, 1, 2} with probs 1/4, 1/2, 1/4
        let m = model(ScalarLaw::beta_model(1.0).unwrap());
        let reps = 40_000;
        let mut counts = [0usize; 3];
        for r in 0..reps {
            let real = expand(&m, 1, derive_seed(404, r as u64)).unwrap();
            let mass = real.total_mass(1).unwrap();
            let bucket = mass.round() as usize;
            counts[bucket] += 1;
        }
        let expect = [0.25, 0.5, 0.25];
        for (k, &c) in counts.iter().enumerate() {
            let p = c as f64 / reps as f64;
            let se = (expect[k] * (1.0 - expect[k]) / reps as f64).sqrt();
            assert!(
                (p - expect[k]).abs() <= 4.0 * se,
                "mass atom {k}: {p} vs {}",
                expect[k]
            );
        }
    }

    #[test]
    fn martingale_mean_mass_is_one() {
        for law in [
            ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap(),
            ScalarLaw::lognormal(0.5 * std::f64::consts::LN_2).unwrap(),
        ] {
            let m = model(law);
            let trajs = replicate_trajectories(&m, 12, 600, 2024).unwrap();
            let finals: Vec<f64> = trajs.iter().map(|t| t.final_mass()).collect();
            let (mean, se) = mean_se(&finals);
            assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
        }
    }

    #[test]
    fn integrate_simple_functions() {
        let m = model(ScalarLaw::constant());
        let r = expand(&m, 5, 3).unwrap();
        // f = 1
        assert_relative_eq!(r.integrate(0, &[1.0]).unwrap(), 1.0, epsilon = 1e-12);
        // f = indicator of the first level-1 cylinder
        assert_relative_eq!(r.integrate(1, &[1.0, 0.0]).unwrap(), 0.5, epsilon = 1e-12);

        // indicator integrates to the restricted mass for a random cascade
        let m = model(ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap());
        let r = expand(&m, 6, 9).unwrap();
        let masses = r.level_ln_masses(2).unwrap().to_vec();
        for (i, &lm) in masses.iter().enumerate() {
            let mut f = vec![0.0; 4];
            f[i] = 1.0;
            let integral = r.integrate(2, &f).unwrap();
            // integral at depth 6 restricted to the cylinder equals the sum
            // over its descendants, which the martingale keeps near lm only
            // in expectation; within one realization compare to the direct
            // descendant sum
            let deepest = r.level_ln_masses(6).unwrap();
            let block = deepest.len() / 4;
            let direct = lse(&deepest[i * block..(i + 1) * block]).exp();
            assert_relative_eq!(integral, direct, max_relative = 1e-12);
            let _ = lm;
        }
    }

    #[test]
    fn depth_and_resolution_errors() {
        let m = model(ScalarLaw::constant());
        let r = expand(&m, 3, 0).unwrap();
        let deep = TreeAddress::from_digits(b2(), vec![0, 0, 0, 0]).unwrap();
        assert!(matches!(r.cylinder_mass(&deep), Err(Error::DepthExceeded { .. })));
        assert!(matches!(r.total_mass(4), Err(Error::ResolutionMismatch { .. })));
        assert!(matches!(expand(&m, 40, 0), Err(Error::NodeCapExceeded { .. })));
    }
}
