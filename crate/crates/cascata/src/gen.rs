//! Generator laws for cascade weights, their size-biased companions, and
//! exact moment functionals.
//!
//! Every law is mean-one by construction: scalar laws satisfy `E[W] = 1`,
//! vector laws `E[(1/b) sum_j W_j] = 1`, Markov kernels have mean-one rows,
//! and mixture components are each mean-one. Constructors validate this to
//! a relative tolerance of 1e-12 and reject anything else.
//!
//! Sampling is a pure function of `(model, address, ancestry, seed)` via
//! the address-keyed streams in [`crate::rng`]. The per-node draw protocol
//! (which stream, how many words) is fixed here so that full expansions,
//! spine simulations, and pruned walks of the same seed stay coupled.

use crate::rng::{NodeRng, StreamTag};
use crate::tree::Branching;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

const MEAN_ONE_TOL: f64 = 1e-12;

fn check_mean_one(mean: f64, what: &str) -> Result<()> {
    if (mean - 1.0).abs() > MEAN_ONE_TOL {
        return Err(Error::InvalidLaw(format!(
            "{what} must be mean-one; got mean {mean:.17}"
        )));
    }
    Ok(())
}

fn check_probability_vector(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidLaw(format!("{what} is empty")));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidLaw(format!("{what} has entry {p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > MEAN_ONE_TOL {
        return Err(Error::InvalidLaw(format!("{what} sums to {sum:.17}, not 1")));
    }
    Ok(())
}

/// `w ln w` with the `w = 0` limit.
#[inline]
fn xlnx(w: f64) -> f64 {
    if w > 0.0 {
        w * w.ln()
    } else {
        0.0
    }
}

/// Inverse-CDF draw over atoms with the given (not necessarily normalized)
/// masses; the final atom absorbs the rounding tail.
fn draw_atom(u: f64, masses: &[f64]) -> usize {
    let total: f64 = masses.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, &m) in masses.iter().enumerate() {
        acc += m;
        if target < acc {
            return i;
        }
    }
    masses.len() - 1
}

/// Law of a single nonnegative mean-one generator weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScalarLaw {
    /// W = 1 almost surely.
    Constant,
    /// W = w0 with probability 1 - p1, w1 with probability p1.
    TwoPoint { w0: f64, w1: f64, p1: f64 },
    /// W = b^beta with probability b^-beta, else 0.
    BetaModel { beta: f64 },
    /// ln W = sigma Z - sigma^2 / 2 for standard normal Z.
    LogNormal { sigma2: f64 },
    /// Finite support with explicit probabilities.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl ScalarLaw {
    pub fn constant() -> Self {
        ScalarLaw::Constant
    }

    pub fn two_point(w0: f64, w1: f64, p1: f64) -> Result<Self> {
        let law = ScalarLaw::TwoPoint { w0, w1, p1 };
        law.validate(Branching::new(2)?)?;
        Ok(law)
    }

    pub fn beta_model(beta: f64) -> Result<Self> {
        let law = ScalarLaw::BetaModel { beta };
        law.validate(Branching::new(2)?)?;
        Ok(law)
    }

    pub fn lognormal(sigma2: f64) -> Result<Self> {
        let law = ScalarLaw::LogNormal { sigma2 };
        law.validate(Branching::new(2)?)?;
        Ok(law)
    }

    pub fn discrete(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let law = ScalarLaw::Discrete { values, probs };
        law.validate(Branching::new(2)?)?;
        Ok(law)
    }

    /// Structural and mean-one validation. The branching number matters
    /// only for the beta model, whose support depends on b.
    pub fn validate(&self, b: Branching) -> Result<()> {
        match self {
            ScalarLaw::Constant => Ok(()),
            ScalarLaw::TwoPoint { w0, w1, p1 } => {
                if *w0 < 0.0 || *w1 < 0.0 {
                    return Err(Error::InvalidLaw("two_point values must be nonnegative".into()));
                }
                if !(0.0..=1.0).contains(p1) {
                    return Err(Error::InvalidLaw(format!("two_point p1 = {p1} outside [0, 1]")));
                }
                check_mean_one((1.0 - p1) * w0 + p1 * w1, "two_point")
            }
            ScalarLaw::BetaModel { beta } => {
                if !beta.is_finite() || *beta < 0.0 {
                    return Err(Error::InvalidLaw(format!("beta_model exponent {beta} must be >= 0")));
                }
                let _ = b;
                Ok(())
            }
            ScalarLaw::LogNormal { sigma2 } => {
                if !sigma2.is_finite() || *sigma2 <= 0.0 {
                    return Err(Error::InvalidLaw(format!("lognormal sigma2 = {sigma2} must be > 0")));
                }
                Ok(())
            }
            ScalarLaw::Discrete { values, probs } => {
                if values.len() != probs.len() {
                    return Err(Error::InvalidLaw("discrete values/probs length mismatch".into()));
                }
                if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::InvalidLaw("discrete values must be finite and nonnegative".into()));
                }
                check_probability_vector(probs, "discrete probs")?;
                let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                check_mean_one(mean, "discrete")
            }
        }
    }

    /// Exact E[W] (1 after validation; used in diagnostics and messages).
    pub fn mean(&self, b: Branching) -> f64 {
        match self {
            ScalarLaw::Constant => 1.0,
            ScalarLaw::TwoPoint { w0, w1, p1 } => (1.0 - p1) * w0 + p1 * w1,
            ScalarLaw::BetaModel { beta } => {
                let bf = f64::from(b.get());
                bf.powf(*beta) * bf.powf(-beta)
            }
            ScalarLaw::LogNormal { .. } => 1.0,
            ScalarLaw::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
        }
    }

    /// Exact entropy index E[W log_b W].
    pub fn entropy_index(&self, b: Branching) -> f64 {
        let ln_b = b.ln();
        match self {
            ScalarLaw::Constant => 0.0,
            ScalarLaw::TwoPoint { w0, w1, p1 } => {
                ((1.0 - p1) * xlnx(*w0) + p1 * xlnx(*w1)) / ln_b
            }
            ScalarLaw::BetaModel { beta } => *beta,
            ScalarLaw::LogNormal { sigma2 } => sigma2 / (2.0 * ln_b),
            ScalarLaw::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| p * xlnx(*v)).sum::<f64>() / ln_b
            }
        }
    }

    /// Exact E[W^h] for h > 0 (finite for every shipped law).
    pub fn moment(&self, h: f64, b: Branching) -> f64 {
        match self {
            ScalarLaw::Constant => 1.0,
            ScalarLaw::TwoPoint { w0, w1, p1 } => {
                let pow = |w: f64| if w > 0.0 { w.powf(h) } else { 0.0 };
                (1.0 - p1) * pow(*w0) + p1 * pow(*w1)
            }
            ScalarLaw::BetaModel { beta } => f64::from(b.get()).powf(beta * (h - 1.0)),
            ScalarLaw::LogNormal { sigma2 } => (h * (h - 1.0) * sigma2 / 2.0).exp(),
            ScalarLaw::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| if *v > 0.0 { p * v.powf(h) } else { 0.0 })
                .sum(),
        }
    }

    pub fn has_zero_atom(&self) -> bool {
        match self {
            ScalarLaw::Constant | ScalarLaw::LogNormal { .. } => false,
            ScalarLaw::TwoPoint { w0, w1, p1 } => {
                (*w0 == 0.0 && *p1 < 1.0) || (*w1 == 0.0 && *p1 > 0.0)
            }
            ScalarLaw::BetaModel { beta } => *beta > 0.0,
            ScalarLaw::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .any(|(v, p)| *v == 0.0 && *p > 0.0),
        }
    }

    /// Atoms of the size-biased law `x q(dx)` for finitely supported laws,
    /// as (value, probability) pairs with zero atoms removed.
    pub fn size_biased_atoms(&self, b: Branching) -> Option<Vec<(f64, f64)>> {
        let atoms: Vec<(f64, f64)> = match self {
            ScalarLaw::Constant => vec![(1.0, 1.0)],
            ScalarLaw::TwoPoint { w0, w1, p1 } => {
                vec![(*w0, (1.0 - p1) * w0), (*w1, p1 * w1)]
            }
            ScalarLaw::BetaModel { beta } => {
                let w = f64::from(b.get()).powf(*beta);
                vec![(w, 1.0)]
            }
            ScalarLaw::LogNormal { .. } => return None,
            ScalarLaw::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| (*v, v * p))
                .collect(),
        };
        let total: f64 = atoms.iter().map(|(_, m)| m).sum();
        Some(
            atoms
                .into_iter()
                .filter(|(_, m)| *m > 0.0)
                .map(|(v, m)| (v, m / total))
                .collect(),
        )
    }

    /// ln W under the ordinary law. Draw protocol: constant takes no words;
    /// two-point, beta, and discrete take one uniform; lognormal takes one
    /// normal (two words).
    pub(crate) fn sample_ln(&self, rng: &mut NodeRng, b: Branching) -> f64 {
        match self {
            ScalarLaw::Constant => 0.0,
            ScalarLaw::TwoPoint { w0, w1, p1 } => {
                let u = rng.next_f64();
                let w = if u < 1.0 - p1 { *w0 } else { *w1 };
                w.ln()
            }
            ScalarLaw::BetaModel { beta } => {
                let bf = f64::from(b.get());
                if rng.next_f64() < bf.powf(-beta) {
                    beta * b.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScalarLaw::LogNormal { sigma2 } => {
                let sigma = sigma2.sqrt();
                sigma * rng.next_standard_normal() - sigma2 / 2.0
            }
            ScalarLaw::Discrete { values, probs } => {
                let i = draw_atom(rng.next_f64(), probs);
                values[i].ln()
            }
        }
    }

    /// ln W under the size-biased law `x q(dx)`. The lognormal case shifts
    /// the log-mean by +sigma^2 and reuses the same normal variate as the
    /// ordinary draw, giving a monotone per-node coupling.
    pub(crate) fn sample_ln_size_biased(&self, rng: &mut NodeRng, b: Branching) -> f64 {
        match self {
            ScalarLaw::Constant => 0.0,
            ScalarLaw::TwoPoint { w0, w1, p1 } => {
                let masses = [(1.0 - p1) * w0, p1 * w1];
                let i = draw_atom(rng.next_f64(), &masses);
                (if i == 0 { *w0 } else { *w1 }).ln()
            }
            ScalarLaw::BetaModel { beta } => beta * b.ln(),
            ScalarLaw::LogNormal { sigma2 } => {
                let sigma = sigma2.sqrt();
                sigma * rng.next_standard_normal() + sigma2 / 2.0
            }
            ScalarLaw::Discrete { values, probs } => {
                let masses: Vec<f64> = values.iter().zip(probs).map(|(v, p)| v * p).collect();
                let i = draw_atom(rng.next_f64(), &masses);
                values[i].ln()
            }
        }
    }
}

/// Joint law of the b sibling weights below one vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum VectorLaw {
    /// Independent coordinates, each mean-one.
    Product { coordinates: Vec<ScalarLaw> },
    /// Finite list of (vector, probability) atoms with grand mean one.
    Atoms { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
}

impl VectorLaw {
    pub fn validate(&self, b: Branching) -> Result<()> {
        let bn = b.get() as usize;
        match self {
            VectorLaw::Product { coordinates } => {
                if coordinates.len() != bn {
                    return Err(Error::InvalidLaw(format!(
                        "vector product law has {} coordinates for branching {bn}",
                        coordinates.len()
                    )));
                }
                for law in coordinates {
                    law.validate(b)?;
                }
                Ok(())
            }
            VectorLaw::Atoms { atoms, probs } => {
                check_probability_vector(probs, "vector atom probs")?;
                if atoms.len() != probs.len() {
                    return Err(Error::InvalidLaw("vector atoms/probs length mismatch".into()));
                }
                for v in atoms {
                    if v.len() != bn {
                        return Err(Error::InvalidLaw(format!(
                            "vector atom of length {} for branching {bn}",
                            v.len()
                        )));
                    }
                    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                        return Err(Error::InvalidLaw("vector atoms must be finite and nonnegative".into()));
                    }
                }
                let grand_mean: f64 = atoms
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * v.iter().sum::<f64>() / bn as f64)
                    .sum();
                check_mean_one(grand_mean, "vector law (1/b) sum of coordinates")
            }
        }
    }

    /// E[W_j] for coordinate j.
    pub fn coordinate_mean(&self, j: usize, b: Branching) -> f64 {
        match self {
            VectorLaw::Product { coordinates } => coordinates[j].mean(b),
            VectorLaw::Atoms { atoms, probs } => {
                atoms.iter().zip(probs).map(|(v, p)| p * v[j]).sum()
            }
        }
    }

    /// Entropy index (1/b) sum_j E[W_j log_b W_j].
    pub fn entropy_index(&self, b: Branching) -> f64 {
        let bn = b.get() as usize;
        match self {
            VectorLaw::Product { coordinates } => {
                coordinates.iter().map(|c| c.entropy_index(b)).sum::<f64>() / bn as f64
            }
            VectorLaw::Atoms { atoms, probs } => {
                let ln_b = b.ln();
                atoms
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * v.iter().map(|&x| xlnx(x)).sum::<f64>())
                    .sum::<f64>()
                    / (bn as f64 * ln_b)
            }
        }
    }

    pub fn has_zero_atom(&self) -> bool {
        match self {
            VectorLaw::Product { coordinates } => coordinates.iter().any(|c| c.has_zero_atom()),
            VectorLaw::Atoms { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .any(|(v, p)| *p > 0.0 && v.iter().any(|&x| x == 0.0)),
        }
    }

    /// ln of the b child weights below one vertex. Product coordinates are
    /// drawn in index order from the parent's vector stream.
    pub(crate) fn sample_children_ln(&self, rng: &mut NodeRng, b: Branching) -> Vec<f64> {
        match self {
            VectorLaw::Product { coordinates } => {
                coordinates.iter().map(|c| c.sample_ln(rng, b)).collect()
            }
            VectorLaw::Atoms { atoms, probs } => {
                let i = draw_atom(rng.next_f64(), probs);
                atoms[i].iter().map(|&x| x.ln()).collect()
            }
        }
    }

    /// Size-biased sibling vector given that the spine continues through
    /// digit `d`: the joint law is reweighted by the coordinate W_d (and
    /// normalized by its mean). Product laws keep off-spine coordinates at
    /// their ordinary law and size-bias coordinate d only.
    pub(crate) fn sample_children_ln_size_biased(
        &self,
        rng: &mut NodeRng,
        b: Branching,
        d: usize,
    ) -> Vec<f64> {
        match self {
            VectorLaw::Product { coordinates } => coordinates
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    if j == d {
                        c.sample_ln_size_biased(rng, b)
                    } else {
                        c.sample_ln(rng, b)
                    }
                })
                .collect(),
            VectorLaw::Atoms { atoms, probs } => {
                let masses: Vec<f64> = atoms.iter().zip(probs).map(|(v, p)| p * v[d]).collect();
                if masses.iter().sum::<f64>() <= 0.0 {
                    // coordinate d is almost surely dead; the spine carries no mass
                    return atoms[0].iter().map(|_| f64::NEG_INFINITY).collect();
                }
                let i = draw_atom(rng.next_f64(), &masses);
                atoms[i].iter().map(|&x| x.ln()).collect()
            }
        }
    }
}

/// Finite-state Markov kernel: a node's weight is the value attached to its
/// state, and children draw their states conditionally independently from
/// the parent's row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovKernelLaw {
    states: Vec<f64>,
    p0: Vec<f64>,
    transitions: Vec<Vec<f64>>,
}

impl MarkovKernelLaw {
    pub fn new(states: Vec<f64>, p0: Vec<f64>, transitions: Vec<Vec<f64>>) -> Result<Self> {
        let law = MarkovKernelLaw { states, p0, transitions };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.states.len();
        if k == 0 {
            return Err(Error::InvalidLaw("markov law has no states".into()));
        }
        if k > u16::MAX as usize {
            return Err(Error::InvalidLaw("markov law has too many states".into()));
        }
        if self.states.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidLaw("markov state values must be finite and nonnegative".into()));
        }
        check_probability_vector(&self.p0, "markov initial distribution")?;
        if self.p0.len() != k {
            return Err(Error::InvalidLaw("markov p0 length does not match state count".into()));
        }
        let m0: f64 = self.p0.iter().zip(&self.states).map(|(p, w)| p * w).sum();
        check_mean_one(m0, "markov initial distribution")?;
        if self.transitions.len() != k {
            return Err(Error::InvalidLaw("markov transition row count does not match state count".into()));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidLaw(format!("markov row {i} has wrong length")));
            }
            check_probability_vector(row, &format!("markov row {i}"))?;
            let mean: f64 = row.iter().zip(&self.states).map(|(q, w)| q * w).sum();
            check_mean_one(mean, &format!("markov row {i}"))?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn initial(&self) -> &[f64] {
        &self.p0
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    /// Row i of the size-biased chain: transition masses q_ij w_j, which
    /// sum to one exactly by the mean-one row invariant.
    pub fn size_biased_row(&self, i: usize) -> Vec<f64> {
        self.transitions[i]
            .iter()
            .zip(&self.states)
            .map(|(q, w)| q * w)
            .collect()
    }

    /// Stationary distribution of the size-biased chain by damped power
    /// iteration (the lazy chain shares its stationary vector and always
    /// converges on a finite state space).
    pub fn size_biased_stationary(&self) -> Result<Vec<f64>> {
        let k = self.states.len();
        let rows: Vec<Vec<f64>> = (0..k).map(|i| self.size_biased_row(i)).collect();
        let mut pi = vec![1.0 / k as f64; k];
        for _ in 0..200_000 {
            let mut next = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    next[j] += pi[i] * rows[i][j];
                }
            }
            let total: f64 = next.iter().sum();
            let mut delta = 0.0;
            for j in 0..k {
                let v = 0.5 * pi[j] + 0.5 * next[j] / total;
                delta += (v - pi[j]).abs();
                pi[j] = v;
            }
            if delta < 1e-14 {
                return Ok(pi);
            }
        }
        Err(Error::Inconclusive(
            "size-biased stationary distribution did not converge".into(),
        ))
    }

    /// Entropy index as the stationary average of the size-biased one-step
    /// mean of log_b W.
    pub fn entropy_index(&self, b: Branching) -> Result<f64> {
        let pi = self.size_biased_stationary()?;
        let ln_b = b.ln();
        let mut out = 0.0;
        for (i, &pi_i) in pi.iter().enumerate() {
            let step: f64 = self.transitions[i]
                .iter()
                .zip(&self.states)
                .map(|(q, w)| q * xlnx(*w))
                .sum();
            out += pi_i * step;
        }
        Ok(out / ln_b)
    }

    pub fn has_zero_atom(&self) -> bool {
        // reachable zero-weight state
        self.states.iter().enumerate().any(|(j, &w)| {
            w == 0.0
                && (self.p0[j] > 0.0 || self.transitions.iter().any(|row| row[j] > 0.0))
        })
    }

    pub(crate) fn draw_initial_state(&self, rng: &mut NodeRng) -> u16 {
        draw_atom(rng.next_f64(), &self.p0) as u16
    }

    pub(crate) fn draw_child_state(&self, rng: &mut NodeRng, parent: u16) -> u16 {
        draw_atom(rng.next_f64(), &self.transitions[parent as usize]) as u16
    }

    pub(crate) fn draw_child_state_size_biased(&self, rng: &mut NodeRng, parent: u16) -> u16 {
        let row = self.size_biased_row(parent as usize);
        draw_atom(rng.next_f64(), &row) as u16
    }
}

/// Exchangeable family: one component is drawn per realization, then every
/// node weight is i.i.d. from that component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeableMixtureLaw {
    prior: Vec<f64>,
    components: Vec<ScalarLaw>,
}

impl ExchangeableMixtureLaw {
    pub fn new(prior: Vec<f64>, components: Vec<ScalarLaw>) -> Result<Self> {
        let law = ExchangeableMixtureLaw { prior, components };
        law.validate(Branching::new(2)?)?;
        Ok(law)
    }

    pub fn validate(&self, b: Branching) -> Result<()> {
        check_probability_vector(&self.prior, "mixture prior")?;
        if self.prior.len() != self.components.len() {
            return Err(Error::InvalidLaw("mixture prior/components length mismatch".into()));
        }
        for c in &self.components {
            c.validate(b)?;
        }
        Ok(())
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn components(&self) -> &[ScalarLaw] {
        &self.components
    }

    /// Prior-mean entropy index. Because every component is mean-one, the
    /// component prior is unchanged under size-biasing, so this is also the
    /// across-realization average of the per-spine index.
    pub fn entropy_index(&self, b: Branching) -> f64 {
        self.prior
            .iter()
            .zip(&self.components)
            .map(|(p, c)| p * c.entropy_index(b))
            .sum()
    }

    pub fn component_indices(&self, b: Branching) -> Vec<f64> {
        self.components.iter().map(|c| c.entropy_index(b)).collect()
    }

    pub fn has_zero_atom(&self) -> bool {
        self.prior
            .iter()
            .zip(&self.components)
            .any(|(p, c)| *p > 0.0 && c.has_zero_atom())
    }

    pub(crate) fn draw_component(&self, rng: &mut NodeRng) -> u16 {
        draw_atom(rng.next_f64(), &self.prior) as u16
    }
}

/// The law of the whole generator family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeneratorLaw {
    Scalar(ScalarLaw),
    Vector(VectorLaw),
    Markov(MarkovKernelLaw),
    Mixture(ExchangeableMixtureLaw),
}

/// Root weight convention. The mass formulas multiply the root weight in,
/// so the default pins it to 1 and lets every law share one code path; the
/// override draws it from the law like any other node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootWeight {
    Unit,
    Law,
}

/// A generator law together with its branching number and root convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    b: Branching,
    law: GeneratorLaw,
    root: RootWeight,
}

impl GeneratorModel {
    pub fn new(b: Branching, law: GeneratorLaw) -> Result<Self> {
        GeneratorModel::with_root(b, law, RootWeight::Unit)
    }

    pub fn with_root(b: Branching, law: GeneratorLaw, root: RootWeight) -> Result<Self> {
        match &law {
            GeneratorLaw::Scalar(s) => s.validate(b)?,
            GeneratorLaw::Vector(v) => {
                v.validate(b)?;
                if root == RootWeight::Law {
                    return Err(Error::InvalidParameter(
                        "vector laws draw weights per sibling group; the root stays at 1".into(),
                    ));
                }
            }
            GeneratorLaw::Markov(m) => m.validate()?,
            GeneratorLaw::Mixture(m) => m.validate(b)?,
        }
        Ok(GeneratorModel { b, law, root })
    }

    #[inline]
    pub fn branching(&self) -> Branching {
        self.b
    }

    #[inline]
    pub fn law(&self) -> &GeneratorLaw {
        &self.law
    }

    #[inline]
    pub fn root_weight(&self) -> RootWeight {
        self.root
    }

    /// Exact entropy index E[W log_b W]; for Markov laws the stationary
    /// average under the size-biased chain, for mixtures the prior mean.
    pub fn entropy_index(&self) -> Result<f64> {
        match &self.law {
            GeneratorLaw::Scalar(s) => Ok(s.entropy_index(self.b)),
            GeneratorLaw::Vector(v) => Ok(v.entropy_index(self.b)),
            GeneratorLaw::Markov(m) => m.entropy_index(self.b),
            GeneratorLaw::Mixture(m) => Ok(m.entropy_index(self.b)),
        }
    }

    /// Per-component entropy indices when the law is a mixture.
    pub fn component_entropy_indices(&self) -> Option<Vec<f64>> {
        match &self.law {
            GeneratorLaw::Mixture(m) => Some(m.component_indices(self.b)),
            _ => None,
        }
    }

    pub fn has_zero_atom(&self) -> bool {
        match &self.law {
            GeneratorLaw::Scalar(s) => s.has_zero_atom(),
            GeneratorLaw::Vector(v) => v.has_zero_atom(),
            GeneratorLaw::Markov(m) => m.has_zero_atom(),
            GeneratorLaw::Mixture(m) => m.has_zero_atom(),
        }
    }

    pub fn is_vector(&self) -> bool {
        matches!(self.law, GeneratorLaw::Vector(_))
    }
}

/// Moment index chi_b(h) = log_b E[W^h] - (h - 1): negative means the
/// corresponding moment of the limit mass is finite.
pub fn moment_index(law: &ScalarLaw, h: f64, b: Branching) -> Result<f64> {
    if !(h > 1.0) {
        return Err(Error::InvalidParameter(format!("moment index needs h > 1, got {h}")));
    }
    let m = law.moment(h, b);
    if !m.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(m.ln() / b.ln() - (h - 1.0))
}

/// Per-realization sampling facade: resolves the mixture component once,
/// then hands out per-node draws keyed by address.
#[derive(Clone)]
pub(crate) struct ModelSampler<'m> {
    model: &'m GeneratorModel,
    seed: u64,
    component: Option<u16>,
}

/// Root draw outcome: ln weight plus the state index for Markov laws.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RootNode {
    pub ln_w: f64,
    pub state: Option<u16>,
}

impl<'m> ModelSampler<'m> {
    pub fn new(model: &'m GeneratorModel, seed: u64) -> Self {
        let component = match model.law() {
            GeneratorLaw::Mixture(m) => {
                let mut rng = NodeRng::for_address(seed, StreamTag::MixtureComponent, &[]);
                Some(m.draw_component(&mut rng))
            }
            _ => None,
        };
        ModelSampler { model, seed, component }
    }

    pub fn model(&self) -> &'m GeneratorModel {
        self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn component(&self) -> Option<u16> {
        self.component
    }

    pub fn is_vector(&self) -> bool {
        self.model.is_vector()
    }

    fn b(&self) -> Branching {
        self.model.branching()
    }

    fn scalar_for_node(&self) -> Option<&ScalarLaw> {
        match self.model.law() {
            GeneratorLaw::Scalar(s) => Some(s),
            GeneratorLaw::Mixture(m) => {
                Some(&m.components()[self.component.expect("component resolved") as usize])
            }
            _ => None,
        }
    }

    /// Root node under the ordinary law.
    pub fn root_node(&self) -> RootNode {
        self.root_node_impl(false)
    }

    /// Root node for the spine: the weight (when drawn from the law) is
    /// size-biased, as is the Markov initial state.
    pub fn root_node_size_biased(&self) -> RootNode {
        self.root_node_impl(true)
    }

    fn root_node_impl(&self, size_biased: bool) -> RootNode {
        let mut rng = NodeRng::for_address(self.seed, StreamTag::Weight, &[]);
        match self.model.law() {
            GeneratorLaw::Markov(m) => {
                // the root state seeds the chain even when the root weight is pinned to 1
                let state = if size_biased && self.model.root_weight() == RootWeight::Law {
                    let masses: Vec<f64> =
                        m.initial().iter().zip(m.states()).map(|(p, w)| p * w).collect();
                    draw_atom(rng.next_f64(), &masses) as u16
                } else {
                    m.draw_initial_state(&mut rng)
                };
                let ln_w = match self.model.root_weight() {
                    RootWeight::Unit => 0.0,
                    RootWeight::Law => m.states()[state as usize].ln(),
                };
                RootNode { ln_w, state: Some(state) }
            }
            GeneratorLaw::Vector(_) => RootNode { ln_w: 0.0, state: None },
            _ => {
                let ln_w = match self.model.root_weight() {
                    RootWeight::Unit => 0.0,
                    RootWeight::Law => {
                        let law = self.scalar_for_node().expect("scalar-like law");
                        if size_biased {
                            law.sample_ln_size_biased(&mut rng, self.b())
                        } else {
                            law.sample_ln(&mut rng, self.b())
                        }
                    }
                };
                RootNode { ln_w, state: None }
            }
        }
    }

    /// Draw a non-root, non-vector node keyed by its address digits, given
    /// the parent's Markov state when applicable.
    pub fn child(&self, digits: &[u8], parent_state: Option<u16>) -> (f64, Option<u16>) {
        let mut rng = NodeRng::for_address(self.seed, StreamTag::Weight, digits);
        match self.model.law() {
            GeneratorLaw::Markov(m) => {
                let s = m.draw_child_state(&mut rng, parent_state.expect("markov parent state"));
                (m.states()[s as usize].ln(), Some(s))
            }
            _ => {
                let law = self.scalar_for_node().expect("scalar-like law");
                (law.sample_ln(&mut rng, self.b()), None)
            }
        }
    }

    /// Size-biased variant of [`child`](Self::child), used on the spine.
    pub fn child_size_biased(&self, digits: &[u8], parent_state: Option<u16>) -> (f64, Option<u16>) {
        let mut rng = NodeRng::for_address(self.seed, StreamTag::Weight, digits);
        match self.model.law() {
            GeneratorLaw::Markov(m) => {
                let s = m.draw_child_state_size_biased(
                    &mut rng,
                    parent_state.expect("markov parent state"),
                );
                (m.states()[s as usize].ln(), Some(s))
            }
            _ => {
                let law = self.scalar_for_node().expect("scalar-like law");
                (law.sample_ln_size_biased(&mut rng, self.b()), None)
            }
        }
    }

    /// Sibling-vector draw below `parent_digits` (vector laws only).
    pub fn children_vector(&self, parent_digits: &[u8]) -> Vec<f64> {
        let mut rng = NodeRng::for_address(self.seed, StreamTag::VectorDraw, parent_digits);
        match self.model.law() {
            GeneratorLaw::Vector(v) => v.sample_children_ln(&mut rng, self.b()),
            _ => unreachable!("children_vector on a non-vector law"),
        }
    }

    /// Size-biased sibling vector given the spine digit.
    pub fn children_vector_size_biased(&self, parent_digits: &[u8], spine_digit: u8) -> Vec<f64> {
        let mut rng = NodeRng::for_address(self.seed, StreamTag::VectorDraw, parent_digits);
        match self.model.law() {
            GeneratorLaw::Vector(v) => {
                v.sample_children_ln_size_biased(&mut rng, self.b(), spine_digit as usize)
            }
            _ => unreachable!("children_vector_size_biased on a non-vector law"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn b2() -> Branching {
        Branching::new(2).unwrap()
    }

    #[test]
    fn constructors_enforce_mean_one() {
        assert!(ScalarLaw::two_point(0.5, 1.5, 0.5).is_ok());
        assert!(ScalarLaw::two_point(0.5, 1.4, 0.5).is_err());
        assert!(ScalarLaw::discrete(vec![0.2, 1.2], vec![0.2, 0.8]).is_ok());
        assert!(ScalarLaw::discrete(vec![0.2, 1.2], vec![0.3, 0.7]).is_err());
        assert!(ScalarLaw::lognormal(0.0).is_err());
        assert!(ScalarLaw::beta_model(-0.1).is_err());
    }

    #[test]
    fn entropy_index_frozen_values() {
        assert_eq!(ScalarLaw::constant().entropy_index(b2()), 0.0);
        assert_eq!(ScalarLaw::beta_model(0.7).unwrap().entropy_index(b2()), 0.7);

        // direct finite sum: 0.25 log2 0.5 + 0.75 log2 1.5
        let direct = 0.25 * 0.5f64.log2() * 2.0 + 1.5 * 1.5f64.log2() * 0.5;
        let law = ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap();
        assert_relative_eq!(law.entropy_index(b2()), direct, max_relative = 1e-14);
        assert_relative_eq!(law.entropy_index(b2()), 0.18872187554086717, epsilon = 1e-12);

        // sigma^2 = 0.5 ln 2 gives index 1/4
        let sigma2 = 0.5 * std::f64::consts::LN_2;
        let ln = ScalarLaw::lognormal(sigma2).unwrap();
        assert_relative_eq!(ln.entropy_index(b2()), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn lognormal_entropy_matches_quadrature_oracle() {
        // E[W ln W] with W = exp(sigma Z - sigma^2/2) by Simpson quadrature in z
        let sigma2 = 0.5 * std::f64::consts::LN_2;
        let sigma = sigma2.sqrt();
        let f = |z: f64| {
            let w = (sigma * z - sigma2 / 2.0).exp();
            let phi = (-0.5 * z * z).exp() / (std::f64::consts::TAU).sqrt();
            w * (sigma * z - sigma2 / 2.0) * phi
        };
        let (lo, hi, n) = (-10.0, 10.0, 20_000);
        let h = (hi - lo) / n as f64;
        let mut integral = f(lo) + f(hi);
        for i in 1..n {
            let z = lo + i as f64 * h;
            integral += if i % 2 == 1 { 4.0 * f(z) } else { 2.0 * f(z) };
        }
        integral *= h / 3.0;
        let oracle = integral / std::f64::consts::LN_2;
        let law = ScalarLaw::lognormal(sigma2).unwrap();
        assert_relative_eq!(law.entropy_index(b2()), oracle, epsilon = 1e-9);
    }

    #[test]
    fn moment_index_examples() {
        // constant, h = 2: log_b 1 - 1 = -1
        assert_eq!(moment_index(&ScalarLaw::constant(), 2.0, b2()).unwrap(), -1.0);
        // beta model: chi = beta - 1 at h = 2, b = 2
        let beta = ScalarLaw::beta_model(0.6).unwrap();
        assert_relative_eq!(moment_index(&beta, 2.0, b2()).unwrap(), -0.4, epsilon = 1e-12);
        // lognormal sigma^2 = ln 2 at h = 2: E[W^2] = 2, chi = 0 (boundary)
        let ln = ScalarLaw::lognormal(std::f64::consts::LN_2).unwrap();
        assert_relative_eq!(moment_index(&ln, 2.0, b2()).unwrap(), 0.0, epsilon = 1e-12);
        assert!(moment_index(&ln, 1.0, b2()).is_err());
    }

    #[test]
    fn lognormal_second_moment_matches_quadrature() {
        let sigma2 = std::f64::consts::LN_2;
        let sigma = sigma2.sqrt();
        let f = |z: f64| {
            let w = (sigma * z - sigma2 / 2.0).exp();
            let phi = (-0.5 * z * z).exp() / (std::f64::consts::TAU).sqrt();
            w * w * phi
        };
        let (lo, hi, n) = (-12.0, 12.0, 24_000);
        let h = (hi - lo) / n as f64;
        let mut integral = f(lo) + f(hi);
        for i in 1..n {
            let z = lo + i as f64 * h;
            integral += if i % 2 == 1 { 4.0 * f(z) } else { 2.0 * f(z) };
        }
        integral *= h / 3.0;
        let law = ScalarLaw::LogNormal { sigma2 };
        assert_relative_eq!(law.moment(2.0, b2()), integral, epsilon = 1e-8);
        assert_relative_eq!(law.moment(2.0, b2()), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn size_biased_atoms_by_reweighting_oracle() {
        // two_point(0, 2, 1/2): reweighting w * p kills the zero atom
        let law = ScalarLaw::two_point(0.0, 2.0, 0.5).unwrap();
        let atoms = law.size_biased_atoms(b2()).unwrap();
        assert_eq!(atoms, vec![(2.0, 1.0)]);

        // constant is a fixed point
        let atoms = ScalarLaw::constant().size_biased_atoms(b2()).unwrap();
        assert_eq!(atoms, vec![(1.0, 1.0)]);

        // beta model: point mass at b^beta, almost surely positive
        let atoms = ScalarLaw::beta_model(1.0).unwrap().size_biased_atoms(b2()).unwrap();
        assert_eq!(atoms, vec![(2.0, 1.0)]);

        // generic reweighting w * p renormalized
        let law = ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap();
        let atoms = law.size_biased_atoms(b2()).unwrap();
        assert_relative_eq!(atoms[0].1, 0.25, epsilon = 1e-15);
        assert_relative_eq!(atoms[1].1, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn empirical_means_within_monte_carlo_error() {
        let b = b2();
        let laws = [
            ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap(),
            ScalarLaw::beta_model(0.5).unwrap(),
            ScalarLaw::lognormal(0.5 * std::f64::consts::LN_2).unwrap(),
            ScalarLaw::discrete(vec![0.0, 0.8, 2.2], vec![0.25, 0.5, 0.25]).unwrap(),
        ];
        for (k, law) in laws.iter().enumerate() {
            let mut rng = NodeRng::for_address(1000 + k as u64, StreamTag::Weight, &[]);
            let n = 1_000_000usize;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for _ in 0..n {
                let w = law.sample_ln(&mut rng, b).exp();
                sum += w;
                sum2 += w * w;
            }
            let mean = sum / n as f64;
            let var = sum2 / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - 1.0).abs() <= 4.0 * se,
                "law {k} empirical mean {mean} off by more than 4 SE {se}"
            );
        }
    }

    #[test]
    fn size_bias_identity_for_bounded_test_functions() {
        // E_sb[g(W)] = E[W g(W)] for g = identity and a threshold indicator
        let b = b2();
        let law = ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap();
        let n = 400_000usize;

        let mut sb_g1 = 0.0;
        let mut sb_g2 = 0.0;
        let mut rng = NodeRng::for_address(77, StreamTag::Weight, &[1]);
        for _ in 0..n {
            let w = law.sample_ln_size_biased(&mut rng, b).exp();
            sb_g1 += w;
            sb_g2 += f64::from(w > 1.0);
        }

        let mut p_g1 = 0.0;
        let mut p_g2 = 0.0;
        let mut rng = NodeRng::for_address(78, StreamTag::Weight, &[0]);
        for _ in 0..n {
            let w = law.sample_ln(&mut rng, b).exp();
            p_g1 += w * w;
            p_g2 += w * f64::from(w > 1.0);
        }

        // generous envelope: both sides carry Monte Carlo noise
        let tol = 4.0 * 1.5 / (n as f64).sqrt();
        assert!((sb_g1 / n as f64 - p_g1 / n as f64).abs() < tol);
        assert!((sb_g2 / n as f64 - p_g2 / n as f64).abs() < tol);
    }

    #[test]
    fn size_biased_reciprocal_mean_is_one() {
        // for strictly positive laws E_sb[1/W] = E[W / W] = 1
        let b = b2();
        let law = ScalarLaw::lognormal(0.3).unwrap();
        let mut rng = NodeRng::for_address(5, StreamTag::Weight, &[]);
        let n = 400_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = (-law.sample_ln_size_biased(&mut rng, b)).exp();
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0).abs() <= 4.0 * se, "E_sb[1/W] = {mean}");
    }

    #[test]
    fn markov_two_state_mean_one_rows_are_forced() {
        // with two states the mean-one constraint pins both rows
        let law = MarkovKernelLaw::new(
            vec![0.5, 1.5],
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        )
        .unwrap();
        assert_relative_eq!(law.entropy_index(b2()).unwrap(), 0.18872187554086717, epsilon = 1e-10);

        let bad = MarkovKernelLaw::new(
            vec![0.5, 1.5],
            vec![0.5, 0.5],
            vec![vec![0.6, 0.4], vec![0.5, 0.5]],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn markov_three_state_entropy_matches_dense_solve() {
        // states w = (0.4, 1.0, 1.6); rows of the form (q, 1-2q, q) are mean-one
        let states = vec![0.4, 1.0, 1.6];
        let rows = vec![
            vec![0.10, 0.80, 0.10],
            vec![0.30, 0.40, 0.30],
            vec![0.45, 0.10, 0.45],
        ];
        let law = MarkovKernelLaw::new(states.clone(), vec![0.25, 0.5, 0.25], rows.clone()).unwrap();

        // oracle: solve pi (P - I) = 0 with sum pi = 1 by 3x3 elimination
        let p: Vec<Vec<f64>> = (0..3).map(|i| law.size_biased_row(i)).collect();
        // unknowns pi0, pi1, pi2; equations from columns 0 and 1 plus normalization
        let a = [
            [p[0][0] - 1.0, p[1][0], p[2][0]],
            [p[0][1], p[1][1] - 1.0, p[2][1]],
            [1.0, 1.0, 1.0],
        ];
        let rhs = [0.0, 0.0, 1.0];
        // Cramer's rule
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&a);
        let mut pi = [0.0; 3];
        for j in 0..3 {
            let mut m = a;
            for i in 0..3 {
                m[i][j] = rhs[i];
            }
            pi[j] = det(&m) / d;
        }
        let ln2 = std::f64::consts::LN_2;
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                oracle += pi[i] * rows[i][j] * xlnx(states[j]);
            }
        }
        oracle /= ln2;
        assert_relative_eq!(law.entropy_index(b2()).unwrap(), oracle, epsilon = 1e-9);

        let stat = law.size_biased_stationary().unwrap();
        for j in 0..3 {
            assert_relative_eq!(stat[j], pi[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn mixture_prior_is_preserved_and_indices_average() {
        let mix = ExchangeableMixtureLaw::new(
            vec![0.6, 0.4],
            vec![
                ScalarLaw::two_point(0.5, 1.5, 0.5).unwrap(),
                ScalarLaw::lognormal(0.25 * std::f64::consts::LN_2).unwrap(),
            ],
        )
        .unwrap();
        let idx = mix.entropy_index(b2());
        assert_relative_eq!(idx, 0.6 * 0.18872187554086717 + 0.4 * 0.125, epsilon = 1e-12);
    }

    #[test]
    fn vector_law_validation_and_index() {
        let b = b2();
        // asymmetric atoms with grand mean one: (1/2)(0.5 + 1.5)/2 + ...
        let v = VectorLaw::Atoms {
            atoms: vec![vec![0.5, 1.5], vec![1.5, 0.5]],
            probs: vec![0.5, 0.5],
        };
        v.validate(b).unwrap();
        assert_relative_eq!(v.coordinate_mean(0, b), 1.0, epsilon = 1e-15);
        // per-atom entropy contribution matches the two_point index
        assert_relative_eq!(v.entropy_index(b), 0.18872187554086717, epsilon = 1e-12);

        let bad = VectorLaw::Atoms {
            atoms: vec![vec![0.5, 1.6], vec![1.5, 0.5]],
            probs: vec![0.5, 0.5],
        };
        assert!(bad.validate(b).is_err());
    }

    #[test]
    fn address_keyed_draws_replay_bitwise() {
        let model = GeneratorModel::new(
            b2(),
            GeneratorLaw::Scalar(ScalarLaw::lognormal(0.3).unwrap()),
        )
        .unwrap();
        let s = ModelSampler::new(&model, 99);
        let (w1, _) = s.child(&[0, 1, 1], None);
        let (w2, _) = s.child(&[0, 1, 1], None);
        assert_eq!(w1.to_bits(), w2.to_bits());
        let (w3, _) = s.child(&[0, 1, 0], None);
        assert_ne!(w1.to_bits(), w3.to_bits());
    }
}
