//! Multi-indices: integer vectors naming a mixed partial derivative.
//!
//! A [`MultiIndex`] `S = (s_1, …, s_d)` stands for the operator
//! `∂^{|S|} / ∂x_1^{s_1} ⋯ ∂x_d^{s_d}`; the zero index is the identity.
//!
//! Indices are totally ordered by *graded lexicographic* order: first by total
//! order, then, within a grade, by the variable string they spell. With
//! variables `a, b`, the order runs `1, a, b, aa, ab, bb, aaa, …`, which is
//! `(0,0) < (1,0) < (0,1) < (2,0) < (1,1) < (0,2) < (3,0) < …`. Every place
//! in the crate that iterates over indices uses this order, so lower orders
//! are always visited before the higher ones that depend on them.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};

/// Default cap on the total derivative order handled by the expansion machinery.
pub const DEFAULT_MAX_ORDER: usize = 6;

/// A vector of non-negative derivative orders, one per input variable.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(orders: impl Into<Vec<u32>>) -> Self {
        MultiIndex(orders.into())
    }

    /// The identity operator in `dim` variables.
    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// First derivative with respect to variable `var`.
    pub fn unit(dim: usize, var: usize) -> Self {
        let mut orders = vec![0; dim];
        orders[var] = 1;
        MultiIndex(orders)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total derivative order `|S|`.
    pub fn order(&self) -> usize {
        self.0.iter().map(|&s| s as usize).sum()
    }

    pub fn orders(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&s| s == 0)
    }

    /// If this is a unit index `I_i`, returns `i`.
    pub fn unit_var(&self) -> Option<usize> {
        if self.order() != 1 {
            return None;
        }
        self.0.iter().position(|&s| s == 1)
    }

    /// Componentwise `self ≤ other`.
    pub fn is_below(&self, other: &MultiIndex) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(p, s)| p <= s)
    }

    pub fn add(&self, other: &MultiIndex) -> Result<MultiIndex> {
        check_dim(self.dim(), other.dim())?;
        Ok(MultiIndex(
            self.0.iter().zip(&other.0).map(|(p, q)| p + q).collect(),
        ))
    }

    /// `self − other`, or `None` when some component would go negative.
    pub fn sub(&self, other: &MultiIndex) -> Result<Option<MultiIndex>> {
        check_dim(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(s, p)| s.checked_sub(*p))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex))
    }

    /// `C_S^P = ∏ binom(S_i, P_i)`: the number of ways to pick a block with
    /// count-vector `P` out of the slots of `S`.
    pub fn coefficient(&self, part: &MultiIndex) -> Result<u64> {
        check_dim(self.dim(), part.dim())?;
        if !part.is_below(self) {
            return Err(Error::Domain(format!("{part} is not below {self}")));
        }
        let mut acc: u128 = 1;
        for (&s, &p) in self.0.iter().zip(&part.0) {
            acc = acc
                .checked_mul(binomial(s, p)?)
                .ok_or_else(|| Error::Domain(format!("coefficient C_{self}^{part} overflows")))?;
        }
        u64::try_from(acc)
            .map_err(|_| Error::Domain(format!("coefficient C_{self}^{part} overflows")))
    }

    /// Every index `R` with `R ≤ self` componentwise, in graded-lex order.
    pub fn below(&self) -> Vec<MultiIndex> {
        let mut out = vec![Vec::with_capacity(self.dim())];
        for &s in &self.0 {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..=s).map(move |k| {
                        let mut v = prefix.clone();
                        v.push(k);
                        v
                    })
                })
                .collect();
        }
        let mut out: Vec<MultiIndex> = out.into_iter().map(MultiIndex).collect();
        out.sort();
        out
    }

    /// All ordered pairs `(P, Q)` with `P + Q = self`, ordered by `P`.
    pub fn decompositions(&self) -> Vec<(MultiIndex, MultiIndex)> {
        self.below()
            .into_iter()
            .map(|p| {
                let q = MultiIndex(self.0.iter().zip(&p.0).map(|(s, p)| s - p).collect());
                (p, q)
            })
            .collect()
    }

    /// Slot list: variable `i` repeated `S_i` times.
    pub fn slots(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(var, &n)| std::iter::repeat_n(var, n as usize))
            .collect()
    }

    /// Variable-name spelling, e.g. `(2,1)` → `"aab"`. The zero index is empty.
    pub fn label(&self) -> String {
        let slots = self.slots();
        if self.dim() <= 26 {
            slots.iter().map(|&v| (b'a' + v as u8) as char).collect()
        } else {
            slots.iter().map(|v| format!("x{}", v + 1)).collect()
        }
    }
}

fn binomial(n: u32, k: u32) -> Result<u128> {
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step
        acc = acc
            .checked_mul(n - i)
            .ok_or_else(|| Error::Domain("binomial coefficient overflows".into()))?
            / (i + 1);
    }
    Ok(acc)
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order()
            .cmp(&other.order())
            .then_with(|| {
                // Within a grade, more weight on earlier variables sorts first.
                for (s, o) in self.0.iter().zip(&other.0) {
                    match o.cmp(s) {
                        Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                Ordering::Equal
            })
            .then_with(|| self.0.len().cmp(&other.0.len()))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| {
                Error::Parse(format!("multi-index must look like \"(2,0)\", got {s:?}"))
            })?;
        let orders = inner
            .split(',')
            .map(|part| {
                part.trim().parse::<u32>().map_err(|_| {
                    Error::Parse(format!("bad component {part:?} in multi-index {s:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiIndex(orders))
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A sorted set of distinct multi-indices sharing one dimension.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct IndexSet {
    dim: usize,
    indices: Vec<MultiIndex>,
}

impl IndexSet {
    pub fn new(indices: impl IntoIterator<Item = MultiIndex>) -> Result<Self> {
        let mut indices: Vec<MultiIndex> = indices.into_iter().collect();
        let dim = indices
            .first()
            .map(MultiIndex::dim)
            .ok_or_else(|| Error::Contract("index set must not be empty".into()))?;
        for idx in &indices {
            check_dim(dim, idx.dim())?;
        }
        indices.sort();
        indices.dedup();
        Ok(IndexSet { dim, indices })
    }

    /// Every index of total order at most `max_order` in `dim` variables.
    pub fn full(dim: usize, max_order: u32) -> Self {
        let corner = MultiIndex(vec![max_order; dim]);
        let indices = corner
            .below()
            .into_iter()
            .filter(|i| i.order() <= max_order as usize)
            .collect();
        IndexSet { dim, indices }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.indices.iter()
    }

    pub fn as_slice(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn contains(&self, idx: &MultiIndex) -> bool {
        self.position(idx).is_some()
    }

    /// Position of `idx` in graded-lex order.
    pub fn position(&self, idx: &MultiIndex) -> Option<usize> {
        self.indices.binary_search(idx).ok()
    }

    pub fn max_order(&self) -> usize {
        self.indices
            .iter()
            .map(MultiIndex::order)
            .max()
            .unwrap_or(0)
    }

    /// Smallest superset closed under componentwise `≤`.
    pub fn downward_closure(&self) -> IndexSet {
        let mut all: Vec<MultiIndex> = self.indices.iter().flat_map(MultiIndex::below).collect();
        all.sort();
        all.dedup();
        IndexSet {
            dim: self.dim,
            indices: all,
        }
    }

    pub fn is_downward_closed(&self) -> bool {
        self.indices
            .iter()
            .all(|s| s.below().iter().all(|r| self.contains(r)))
    }
}

impl<'a> IntoIterator for &'a IndexSet {
    type Item = &'a MultiIndex;
    type IntoIter = std::slice::Iter<'a, MultiIndex>;

    fn into_iter(self) -> Self::IntoIter {
        self.indices.iter()
    }
}
