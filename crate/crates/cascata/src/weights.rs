//! Weight systems perturbing a cascade, and additive mass splits.
//!
//! A weight system attaches a nonnegative multiplier `F` to each vertex as
//! a function of the generator weights along that vertex's ancestry (plus,
//! for the percolation rule, its own independent pruning field). Weighted
//! cylinder masses are `lambda_{F,n}(cyl) = b^-n (prod W) F`. When F takes
//! values in [0, 1] the system and its complement `1 - F` split every
//! cylinder mass exactly in two; [`kahane_split`] materializes that split
//! and checks the bound on every evaluation.

use crate::cascade::CascadeRealization;
use crate::gen::GeneratorModel;
use crate::rng::{derive_seed, NodeRng, StreamTag};
use crate::tree::{Branching, TreeAddress};
use crate::util::{lse, mean_se};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Shipped weight rules. `Complement` wraps a decomposition-valued rule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum WeightSystem {
    /// F = 1: the unweighted cascade.
    Unit,
    /// Indicator of `lambda_n(cyl) * b^(n d) <= k`, a tilted running-mass
    /// cutoff along the ancestry.
    Threshold { d: f64, k: f64 },
    /// Product of independent beta-model variables B along the ancestry:
    /// each vertex is kept with probability b^-beta and scaled by b^beta.
    /// Keyed by its own seed so it is independent of the generator field.
    Percolation { beta: f64, seed: u64 },
    /// Ratio-type rule F = Q'/Q for the component martingale that tilts by
    /// the first digit: F equals `tilt[first digit]` below the root and the
    /// tilt average at the root.
    RatioTilt { tilt: Vec<f64> },
    Complement(Box<WeightSystem>),
}

impl WeightSystem {
    pub fn validate(&self, b: Branching) -> Result<()> {
        match self {
            WeightSystem::Unit => Ok(()),
            WeightSystem::Threshold { d, k } => {
                if !d.is_finite() {
                    return Err(Error::InvalidParameter("threshold d must be finite".into()));
                }
                if !(k.is_finite() && *k > 0.0) {
                    return Err(Error::InvalidParameter(format!("threshold k = {k} must be > 0")));
                }
                Ok(())
            }
            WeightSystem::Percolation { beta, .. } => {
                if !(beta.is_finite() && *beta >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "percolation beta = {beta} must be >= 0"
                    )));
                }
                Ok(())
            }
            WeightSystem::RatioTilt { tilt } => {
                if tilt.len() != b.get() as usize {
                    return Err(Error::InvalidParameter(format!(
                        "ratio tilt needs {} entries, got {}",
                        b.get(),
                        tilt.len()
                    )));
                }
                if tilt.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(Error::InvalidParameter("ratio tilt entries must lie in [0, 1]".into()));
                }
                Ok(())
            }
            WeightSystem::Complement(inner) => {
                if !inner.is_decomposition() {
                    return Err(Error::InvalidParameter(
                        "complement requires a [0, 1]-valued weight system".into(),
                    ));
                }
                inner.validate(b)
            }
        }
    }

    /// Whether the rule is structurally [0, 1]-valued.
    pub fn is_decomposition(&self) -> bool {
        match self {
            WeightSystem::Unit | WeightSystem::Threshold { .. } | WeightSystem::RatioTilt { .. } => true,
            WeightSystem::Percolation { .. } => false,
            WeightSystem::Complement(inner) => inner.is_decomposition(),
        }
    }

    /// Whether F can evaluate to exactly zero.
    pub fn can_vanish(&self) -> bool {
        match self {
            WeightSystem::Unit => false,
            WeightSystem::Threshold { .. } | WeightSystem::Percolation { .. } => true,
            WeightSystem::RatioTilt { tilt } => tilt.iter().any(|&t| t == 0.0),
            WeightSystem::Complement(inner) => match inner.as_ref() {
                WeightSystem::Unit => true,
                WeightSystem::Threshold { .. } => true,
                WeightSystem::RatioTilt { tilt } => tilt.iter().any(|&t| t == 1.0),
                other => other.can_vanish(),
            },
        }
    }

    /// ln F at the vertex named by `digits`, whose ancestry generator
    /// log-weights (root included) are `ancestry_ln_w`. The rule sees only
    /// this ancestry slice, which is what keeps every shipped rule
    /// measurable with respect to the path sigma-field.
    pub(crate) fn ln_value(&self, digits: &[u8], ancestry_ln_w: &[f64], b: Branching) -> f64 {
        debug_assert_eq!(ancestry_ln_w.len(), digits.len() + 1);
        match self {
            WeightSystem::Unit => 0.0,
            WeightSystem::Threshold { d, k } => {
                let n = digits.len() as f64;
                let ln_mass: f64 = ancestry_ln_w.iter().sum::<f64>() - n * b.ln();
                if ln_mass + n * d * b.ln() <= k.ln() {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            WeightSystem::Percolation { beta, seed } => {
                // B at the root is pinned to 1, matching the generator
                // convention; each deeper prefix draws its own keyed B.
                let bf = f64::from(b.get());
                let keep = bf.powf(-beta);
                for j in 1..=digits.len() {
                    let mut rng = NodeRng::for_address(*seed, StreamTag::Percolation, &digits[..j]);
                    if rng.next_f64() >= keep {
                        return f64::NEG_INFINITY;
                    }
                }
                digits.len() as f64 * beta * b.ln()
            }
            WeightSystem::RatioTilt { tilt } => {
                if digits.is_empty() {
                    (tilt.iter().sum::<f64>() / tilt.len() as f64).ln()
                } else {
                    tilt[digits[0] as usize].ln()
                }
            }
            WeightSystem::Complement(inner) => {
                let f = inner.ln_value(digits, ancestry_ln_w, b).exp();
                (1.0 - f).max(0.0).ln()
            }
        }
    }

    /// Linear F with the decomposition bound checked; errors name the
    /// offending vertex.
    pub(crate) fn decomposition_value(
        &self,
        digits: &[u8],
        ancestry_ln_w: &[f64],
        b: Branching,
    ) -> Result<f64> {
        let f = self.ln_value(digits, ancestry_ln_w, b).exp();
        if !(0.0..=1.0 + 1e-12).contains(&f) {
            let address = TreeAddress::from_digits(b, digits.to_vec())
                .map(|a| a.to_string())
                .unwrap_or_else(|_| format!("{digits:?}"));
            return Err(Error::WeightBoundViolated { address, value: f });
        }
        Ok(f.min(1.0))
    }
}

/// The complement system `1 - F`; requires a [0, 1]-valued rule.
pub fn complement(f: &WeightSystem) -> Result<WeightSystem> {
    if !f.is_decomposition() {
        return Err(Error::InvalidParameter(
            "complement requires a [0, 1]-valued weight system".into(),
        ));
    }
    Ok(match f {
        WeightSystem::Complement(inner) => inner.as_ref().clone(),
        other => WeightSystem::Complement(Box::new(other.clone())),
    })
}

/// Per-level weighted cylinder masses in log space.
#[derive(Clone, Debug)]
pub struct WeightedMasses {
    b: Branching,
    depth: usize,
    ln: Vec<Vec<f64>>,
}

impl WeightedMasses {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn level_ln_masses(&self, level: usize) -> Result<&[f64]> {
        if level > self.depth {
            return Err(Error::ResolutionMismatch { level, depth: self.depth });
        }
        Ok(&self.ln[level])
    }

    pub fn total_ln_mass(&self, level: usize) -> Result<f64> {
        Ok(lse(self.level_ln_masses(level)?))
    }

    pub fn total_mass(&self, level: usize) -> Result<f64> {
        Ok(self.total_ln_mass(level)?.exp())
    }

    pub fn trajectory(&self) -> Vec<f64> {
        (0..=self.depth)
            .map(|n| self.total_mass(n).expect("level within depth"))
            .collect()
    }

    pub(crate) fn from_levels(b: Branching, ln: Vec<Vec<f64>>) -> Self {
        WeightedMasses { b, depth: ln.len() - 1, ln }
    }

    pub fn branching(&self) -> Branching {
        self.b
    }
}

/// Visit every vertex of a realization with its digits and ancestry
/// log-weights assembled, shallowest level first.
fn for_each_vertex<F>(r: &CascadeRealization, mut visit: F) -> Result<()>
where
    F: FnMut(usize, usize, &[u8], &[f64]) -> Result<()>,
{
    let b = r.branching().get() as usize;
    let mut digits: Vec<u8> = Vec::with_capacity(r.depth());
    let mut ancestry: Vec<f64> = Vec::with_capacity(r.depth() + 1);
    for level in 0..=r.depth() {
        let count = r.level_ln_masses(level)?.len();
        for idx in 0..count {
            digits.clear();
            ancestry.clear();
            // decode digits and collect ancestor weights from the stored levels
            let mut i = idx;
            digits.resize(level, 0);
            for slot in (0..level).rev() {
                digits[slot] = (i % b) as u8;
                i /= b;
            }
            let mut a = 0usize;
            ancestry.push(r.level_ln_weights(0)?[0]);
            for (j, &d) in digits.iter().enumerate() {
                a = a * b + d as usize;
                ancestry.push(r.level_ln_weights(j + 1)?[a]);
            }
            visit(level, idx, &digits, &ancestry)?;
        }
    }
    Ok(())
}

/// Weighted cylinder masses under the product of the given systems.
pub fn weighted_masses_product(
    r: &CascadeRealization,
    systems: &[&WeightSystem],
) -> Result<WeightedMasses> {
    let b = r.branching();
    for s in systems {
        s.validate(b)?;
    }
    let mut ln: Vec<Vec<f64>> = (0..=r.depth())
        .map(|n| r.level_ln_masses(n).map(|m| m.to_vec()))
        .collect::<Result<_>>()?;
    for_each_vertex(r, |level, idx, digits, ancestry| {
        for s in systems {
            ln[level][idx] += s.ln_value(digits, ancestry, b);
        }
        Ok(())
    })?;
    Ok(WeightedMasses::from_levels(b, ln))
}

/// Weighted cylinder masses `lambda_{F,n}` for one system.
pub fn weighted_masses(r: &CascadeRealization, f: &WeightSystem) -> Result<WeightedMasses> {
    weighted_masses_product(r, &[f])
}

/// Split every cylinder mass into the F part and the complement part,
/// checking 0 <= F <= 1 at every vertex. The two parts add back to the
/// unweighted masses exactly up to roundoff.
pub fn kahane_split(
    r: &CascadeRealization,
    f: &WeightSystem,
) -> Result<(WeightedMasses, WeightedMasses)> {
    let b = r.branching();
    f.validate(b)?;
    if !f.is_decomposition() {
        return Err(Error::InvalidParameter(
            "kahane_split requires a [0, 1]-valued weight system".into(),
        ));
    }
    let mut part: Vec<Vec<f64>> = (0..=r.depth())
        .map(|n| r.level_ln_masses(n).map(|m| m.to_vec()))
        .collect::<Result<_>>()?;
    let mut co = part.clone();
    for_each_vertex(r, |level, idx, digits, ancestry| {
        let fv = f.decomposition_value(digits, ancestry, b)?;
        part[level][idx] += fv.ln();
        co[level][idx] += (1.0 - fv).ln();
        Ok(())
    })?;
    Ok((
        WeightedMasses::from_levels(b, part),
        WeightedMasses::from_levels(b, co),
    ))
}

/// General ratio route: given the per-level ln masses of a component
/// martingale dominated by the cascade (component <= mass per cylinder),
/// split by F = component / mass. Dead cylinders take F = 0.
pub fn kahane_split_from_component(
    r: &CascadeRealization,
    component_ln: &WeightedMasses,
) -> Result<(WeightedMasses, WeightedMasses)> {
    if component_ln.depth() != r.depth() {
        return Err(Error::InvalidParameter(
            "component masses must match the realization depth".into(),
        ));
    }
    let b = r.branching();
    let mut part: Vec<Vec<f64>> = Vec::with_capacity(r.depth() + 1);
    let mut co: Vec<Vec<f64>> = Vec::with_capacity(r.depth() + 1);
    for n in 0..=r.depth() {
        let mass = r.level_ln_masses(n)?;
        let comp = component_ln.level_ln_masses(n)?;
        let mut p = vec![f64::NEG_INFINITY; mass.len()];
        let mut c = vec![f64::NEG_INFINITY; mass.len()];
        for i in 0..mass.len() {
            if mass[i] == f64::NEG_INFINITY {
                if comp[i] != f64::NEG_INFINITY {
                    return Err(Error::WeightBoundViolated {
                        address: TreeAddress::from_level_index(b, n, i as u64)?.to_string(),
                        value: f64::INFINITY,
                    });
                }
                continue;
            }
            let f = (comp[i] - mass[i]).exp();
            if !(0.0..=1.0 + 1e-12).contains(&f) {
                return Err(Error::WeightBoundViolated {
                    address: TreeAddress::from_level_index(b, n, i as u64)?.to_string(),
                    value: f,
                });
            }
            let f = f.min(1.0);
            p[i] = mass[i] + f.ln();
            c[i] = mass[i] + (1.0 - f).ln();
        }
        part.push(p);
        co.push(c);
    }
    Ok((
        WeightedMasses::from_levels(b, part),
        WeightedMasses::from_levels(b, co),
    ))
}

/// Largest relative violation of `part + co = mass` over all cylinders of
/// all levels.
pub fn additivity_max_rel_error(
    r: &CascadeRealization,
    part: &WeightedMasses,
    co: &WeightedMasses,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for n in 0..=r.depth() {
        let mass = r.level_ln_masses(n)?;
        let p = part.level_ln_masses(n)?;
        let c = co.level_ln_masses(n)?;
        for i in 0..mass.len() {
            let m = mass[i].exp();
            let s = p[i].exp() + c[i].exp();
            let denom = m.max(s).max(f64::MIN_POSITIVE);
            let rel = (m - s).abs() / denom;
            if m == 0.0 && s == 0.0 {
                continue;
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Per-level replicate means of the weighted total mass, for checking that
/// a rule preserves the mass expectation across levels.
#[derive(Clone, Debug, Serialize)]
pub struct MartingaleDiagnostic {
    pub depth: usize,
    pub replicates: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Largest |mean_n - mean_0| / (4 max(se_n, se_0)); <= 1 passes.
    pub worst_drift: f64,
}

pub fn martingale_diagnostic(
    model: &GeneratorModel,
    f: &WeightSystem,
    depth: usize,
    replicates: usize,
    seed: u64,
) -> Result<MartingaleDiagnostic> {
    let trajs: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let r = crate::cascade::expand(model, depth, derive_seed(seed, rep as u64))?;
            Ok(weighted_masses(&r, f)?.trajectory())
        })
        .collect::<Result<_>>()?;

    let mut mean = Vec::with_capacity(depth + 1);
    let mut se = Vec::with_capacity(depth + 1);
    for n in 0..=depth {
        let level: Vec<f64> = trajs.iter().map(|t| t[n]).collect();
        let (m, s) = mean_se(&level);
        mean.push(m);
        se.push(s);
    }
    let mut worst = 0.0f64;
    for n in 1..=depth {
        let spread = 4.0 * se[n].max(se[0]).max(1e-300);
        worst = worst.max((mean[n] - mean[0]).abs() / spread);
    }
    Ok(MartingaleDiagnostic {
        depth,
        replicates,
        mean,
        se,
        worst_drift: worst,
    })
}
