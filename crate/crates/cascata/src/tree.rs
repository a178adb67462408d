//! Addressing and geometry of the b-ary tree and its boundary.
//!
//! Vertices are finite digit strings over `{0, .., b-1}`; the empty string
//! is the root. A depth-n vertex names the cylinder of boundary points that
//! share its first n digits, so the level-n vertices partition the boundary.
//! The boundary carries the ultrametric `rho(s, t) = b^(-a)` where `a` is
//! the position (1-based) of the first differing digit.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Digits are stored as bytes, which caps the branching number.
pub const MAX_BRANCHING: u32 = 256;

/// Default cap on full-level enumeration and expansion, in nodes per level.
/// Spine-based operations are not subject to this cap.
pub const DEFAULT_NODE_CAP: u64 = 1 << 24;

/// Branching number of the tree, at least 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Branching(u32);

impl Branching {
    pub fn new(b: u32) -> Result<Self> {
        if b < 2 {
            return Err(Error::InvalidParameter(format!(
                "branching number must be at least 2, got {b}"
            )));
        }
        if b > MAX_BRANCHING {
            return Err(Error::InvalidParameter(format!(
                "branching number {b} exceeds the supported maximum {MAX_BRANCHING}"
            )));
        }
        Ok(Branching(b))
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    /// Natural log of b; the unit for log-space mass bookkeeping.
    #[inline]
    pub fn ln(self) -> f64 {
        f64::from(self.0).ln()
    }

    /// b^n as a node count, or an error when it exceeds `cap`.
    pub fn level_count(self, n: usize, cap: u64) -> Result<u64> {
        let mut count: u64 = 1;
        for _ in 0..n {
            count = count
                .checked_mul(u64::from(self.0))
                .filter(|&c| c <= cap)
                .ok_or(Error::NodeCapExceeded {
                    depth: n,
                    b: self.0,
                    cap,
                })?;
        }
        Ok(count)
    }
}

/// A vertex of the b-ary tree: the root is the empty digit string, and a
/// depth-n vertex also names the level-n cylinder of the boundary.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeAddress {
    b: Branching,
    digits: Vec<u8>,
}

impl TreeAddress {
    pub fn root(b: Branching) -> Self {
        TreeAddress { b, digits: Vec::new() }
    }

    pub fn from_digits(b: Branching, digits: Vec<u8>) -> Result<Self> {
        for &d in &digits {
            if u32::from(d) >= b.get() {
                return Err(Error::DigitOutOfRange {
                    digit: u32::from(d),
                    b: b.get(),
                });
            }
        }
        Ok(TreeAddress { b, digits })
    }

    #[inline]
    pub fn branching(&self) -> Branching {
        self.b
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.digits.len()
    }

    #[inline]
    pub fn is_root(&self) -> bool {
        self.digits.is_empty()
    }

    #[inline]
    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    /// The child obtained by appending digit `j`.
    pub fn child(&self, j: u32) -> Result<TreeAddress> {
        if j >= self.b.get() {
            return Err(Error::DigitOutOfRange { digit: j, b: self.b.get() });
        }
        let mut digits = Vec::with_capacity(self.digits.len() + 1);
        digits.extend_from_slice(&self.digits);
        digits.push(j as u8);
        Ok(TreeAddress { b: self.b, digits })
    }

    pub fn parent(&self) -> Option<TreeAddress> {
        if self.digits.is_empty() {
            return None;
        }
        Some(TreeAddress {
            b: self.b,
            digits: self.digits[..self.digits.len() - 1].to_vec(),
        })
    }

    /// The depth-n prefix. Panics if `n` exceeds the depth.
    pub fn prefix(&self, n: usize) -> TreeAddress {
        assert!(n <= self.digits.len(), "prefix depth exceeds address depth");
        TreeAddress {
            b: self.b,
            digits: self.digits[..n].to_vec(),
        }
    }

    /// Lexicographic rank of this address among the addresses of its level.
    pub fn level_index(&self) -> u64 {
        let b = u64::from(self.b.get());
        self.digits.iter().fold(0u64, |acc, &d| acc * b + u64::from(d))
    }

    /// Inverse of [`level_index`](Self::level_index) at a given depth.
    pub fn from_level_index(b: Branching, depth: usize, mut index: u64) -> Result<Self> {
        let total = b.level_count(depth, u64::MAX)?;
        if index >= total {
            return Err(Error::InvalidParameter(format!(
                "level index {index} out of range for depth {depth}"
            )));
        }
        let base = u64::from(b.get());
        let mut digits = vec![0u8; depth];
        for slot in digits.iter_mut().rev() {
            *slot = (index % base) as u8;
            index /= base;
        }
        Ok(TreeAddress { b, digits })
    }
}

impl fmt::Display for TreeAddress {
    /// Canonical textual form: digits joined by dots, the root as `@`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.digits.is_empty() {
            return write!(f, "@");
        }
        let mut first = true;
        for d in &self.digits {
            if !first {
                write!(f, ".")?;
            }
            write!(f, "{d}")?;
            first = false;
        }
        Ok(())
    }
}

impl fmt::Debug for TreeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TreeAddress({self})")
    }
}

/// Boundary ultrametric evaluated on two digit strings compared over their
/// common horizon: `b^{-a}` with `a` the 1-based index of the first
/// mismatch, and 0 when no compared digit differs.
pub fn ultrametric_distance(s: &[u8], t: &[u8], b: Branching) -> f64 {
    let horizon = s.len().min(t.len());
    for i in 0..horizon {
        if s[i] != t[i] {
            return f64::from(b.get()).powi(-((i + 1) as i32));
        }
    }
    0.0
}

/// All b^n addresses of depth n in lexicographic order, subject to `cap`.
pub fn enumerate_level(b: Branching, n: usize, cap: u64) -> Result<Vec<TreeAddress>> {
    let count = b.level_count(n, cap)?;
    let mut out = Vec::with_capacity(count as usize);
    let mut digits = vec![0u8; n];
    loop {
        out.push(TreeAddress { b, digits: digits.clone() });
        // odometer increment
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if u32::from(digits[i]) + 1 < b.get() {
                digits[i] += 1;
                for d in digits[i + 1..].iter_mut() {
                    *d = 0;
                }
                break;
            }
        }
    }
}
