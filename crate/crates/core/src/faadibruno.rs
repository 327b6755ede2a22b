//! Symbolic expansion of `D^S σ(z)` for a scalar activation `σ` of an inner
//! function `z` of several variables.
//!
//! The expansion follows the combinatorial chain rule: list the derivative
//! slots of `S` (variable `i` repeated `S_i` times), enumerate every set
//! partition of those slots, and emit `σ^(#blocks) · ∏_blocks D^{B} z`, where
//! `B` is the count-vector of the block. Slots belonging to the same variable
//! are distinguishable during enumeration; collecting like terms afterwards
//! produces the integer multiplicities (`6σ'''z_a²z_aa` in `D^(4,0)σ`).
//!
//! The result is a small polynomial in the activation derivatives and the
//! inner derivatives `D^P z`, kept in a canonical form so expansions can be
//! compared exactly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::multiindex::{IndexSet, MultiIndex, DEFAULT_MAX_ORDER};

/// One monomial `coeff · σ^(sigma_order) · ∏ (D^P z)^e`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExpansionTerm {
    pub coeff: u64,
    pub sigma_order: usize,
    /// Distinct nonzero indices with their exponents, sorted graded-lex.
    #[serde(serialize_with = "serialize_factors")]
    pub factors: Vec<(MultiIndex, u32)>,
}

impl ExpansionTerm {
    /// Number of partition blocks this term stands for.
    pub fn block_count(&self) -> usize {
        self.factors.iter().map(|(_, e)| *e as usize).sum()
    }

    /// Total derivative order carried by the factors.
    pub fn weight(&self) -> usize {
        self.factors
            .iter()
            .map(|(p, e)| p.order() * *e as usize)
            .sum()
    }

    fn key(&self) -> (usize, Vec<(MultiIndex, u32)>) {
        (self.sigma_order, self.factors.clone())
    }
}

fn serialize_factors<S: serde::Serializer>(
    factors: &[(MultiIndex, u32)],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Factor<'a> {
        index: &'a MultiIndex,
        exponent: u32,
    }
    serializer.collect_seq(factors.iter().map(|(index, exponent)| Factor {
        index,
        exponent: *exponent,
    }))
}

/// A collected sum of [`ExpansionTerm`]s.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Expansion {
    /// The index `S` whose `D^S σ` this expansion was derived from.
    pub target: MultiIndex,
    pub terms: Vec<ExpansionTerm>,
}

impl Expansion {
    /// Builds an expansion from raw terms, collecting like terms and sorting.
    pub fn collect(
        target: MultiIndex,
        terms: impl IntoIterator<Item = ExpansionTerm>,
    ) -> Expansion {
        let mut acc: BTreeMap<(usize, Vec<(MultiIndex, u32)>), u64> = BTreeMap::new();
        for t in terms {
            if t.coeff == 0 {
                continue;
            }
            *acc.entry(t.key()).or_insert(0) += t.coeff;
        }
        let terms = acc
            .into_iter()
            .map(|((sigma_order, factors), coeff)| ExpansionTerm {
                coeff,
                sigma_order,
                factors,
            })
            .collect();
        Expansion { target, terms }
    }

    pub fn terms(&self) -> &[ExpansionTerm] {
        &self.terms
    }

    pub fn max_sigma_order(&self) -> usize {
        self.terms.iter().map(|t| t.sigma_order).max().unwrap_or(0)
    }

    pub fn coeff_sum(&self) -> u64 {
        self.terms.iter().map(|t| t.coeff).sum()
    }

    /// Every distinct factor index appearing in the expansion.
    pub fn factor_indices(&self) -> Vec<MultiIndex> {
        let mut v: Vec<MultiIndex> = self
            .terms
            .iter()
            .flat_map(|t| t.factors.iter().map(|(p, _)| p.clone()))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Multiplies every coefficient by `c`.
    pub fn scaled(mut self, c: u64) -> Expansion {
        for t in &mut self.terms {
            t.coeff *= c;
        }
        if c == 0 {
            self.terms.clear();
        }
        self
    }

    /// `∂/∂z` of the expansion, holding every factor `D^P z` fixed: each
    /// activation derivative order goes up by one.
    pub fn z_derivative(&self) -> Expansion {
        Expansion {
            target: self.target.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| ExpansionTerm {
                    sigma_order: t.sigma_order + 1,
                    ..t.clone()
                })
                .collect(),
        }
    }

    /// Partial derivative with respect to the factor `D^P z`, treating all
    /// factors as independent variables (power rule on every term).
    pub fn differentiate_factor(&self, factor: &MultiIndex) -> Expansion {
        let terms = self.terms.iter().filter_map(|t| {
            let pos = t.factors.iter().position(|(p, _)| p == factor)?;
            let exponent = t.factors[pos].1;
            let mut factors = t.factors.clone();
            if exponent == 1 {
                factors.remove(pos);
            } else {
                factors[pos].1 -= 1;
            }
            Some(ExpansionTerm {
                coeff: t.coeff * exponent as u64,
                sigma_order: t.sigma_order,
                factors,
            })
        });
        Expansion::collect(self.target.clone(), terms.collect::<Vec<_>>())
    }

    /// Numeric value given `sigma[k] = σ^(k)(z)` and a lookup for `D^P z`.
    ///
    /// Terms are summed left to right in canonical order.
    pub fn evaluate(&self, sigma: &[f64], z: impl Fn(&MultiIndex) -> Option<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for t in &self.terms {
            let s = *sigma.get(t.sigma_order).ok_or_else(|| {
                Error::IncompleteInput(format!(
                    "activation derivative of order {} not supplied",
                    t.sigma_order
                ))
            })?;
            let mut v = t.coeff as f64 * s;
            for (p, e) in &t.factors {
                let zp =
                    z(p).ok_or_else(|| Error::IncompleteInput(format!("no value for D^{p} z")))?;
                v *= zp.powi(*e as i32);
            }
            acc += v;
        }
        Ok(acc)
    }

    /// Resolves factor indices to positions in `closure` for fast evaluation.
    pub fn compile(&self, closure: &IndexSet) -> Result<CompiledExpansion> {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let factors = t
                    .factors
                    .iter()
                    .map(|(p, e)| {
                        closure.position(p).map(|pos| (pos, *e)).ok_or_else(|| {
                            Error::Contract(format!("closure lacks factor index {p}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(CompiledTerm {
                    coeff: t.coeff as f64,
                    sigma_order: t.sigma_order,
                    factors,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledExpansion { terms })
    }
}

fn sigma_symbol(order: usize) -> String {
    match order {
        0..=4 => format!("σ{}", "'".repeat(order)),
        k => format!("σ^({k})"),
    }
}

impl fmt::Display for Expansion {
    /// Highest activation order first, e.g. `σ''·z_a^2 + σ'·z_aa`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut order: Vec<&ExpansionTerm> = self.terms.iter().collect();
        order.sort_by_key(|t| std::cmp::Reverse(t.sigma_order));
        for (i, t) in order.into_iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            if t.coeff != 1 {
                write!(f, "{}·", t.coeff)?;
            }
            f.write_str(&sigma_symbol(t.sigma_order))?;
            for (p, e) in &t.factors {
                write!(f, "·z_{}", p.label())?;
                if *e > 1 {
                    write!(f, "^{e}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CompiledTerm {
    pub coeff: f64,
    pub sigma_order: usize,
    /// (closure position, exponent)
    pub factors: Vec<(usize, u32)>,
}

/// An [`Expansion`] with factors resolved to closure positions.
#[derive(Clone, Debug)]
pub struct CompiledExpansion {
    pub terms: Vec<CompiledTerm>,
}

impl CompiledExpansion {
    /// Evaluates the expansion elementwise over flat arrays: `sigma[k][e]` and
    /// `z[pos][e]` for element `e`, writing into `out`.
    pub fn evaluate_into(&self, sigma: &[&[f64]], z: &[&[f64]], out: &mut [f64]) {
        for (e, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for t in &self.terms {
                let mut v = t.coeff * sigma[t.sigma_order][e];
                for &(pos, exp) in &t.factors {
                    v *= pow_small(z[pos][e], exp);
                }
                acc += v;
            }
            *o = acc;
        }
    }

    pub fn max_sigma_order(&self) -> usize {
        self.terms.iter().map(|t| t.sigma_order).max().unwrap_or(0)
    }
}

#[inline]
fn pow_small(x: f64, e: u32) -> f64 {
    match e {
        1 => x,
        2 => x * x,
        _ => x.powi(e as i32),
    }
}

/// Every partition of the slots `0..n`, each as a list of blocks.
///
/// Partitions are generated in restricted-growth-string order; blocks are
/// listed by their smallest element.
pub fn set_partitions(n: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    set_partitions_capped(n, DEFAULT_MAX_ORDER)
}

pub fn set_partitions_capped(n: usize, cap: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    if n > cap {
        return Err(Error::Limit {
            what: "partition size",
            value: n,
            cap,
        });
    }
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    grow(&mut labels, 0, 0, &mut out);
    Ok(out)
}

fn grow(labels: &mut [usize], pos: usize, used: usize, out: &mut Vec<Vec<Vec<usize>>>) {
    if pos == labels.len() {
        let mut blocks = vec![Vec::new(); used];
        for (slot, &b) in labels.iter().enumerate() {
            blocks[b].push(slot);
        }
        out.push(blocks);
        return;
    }
    for b in 0..=used {
        labels[pos] = b;
        grow(labels, pos + 1, used.max(b + 1), out);
    }
}

/// The collected expansion of `D^S σ(z)`.
pub fn expand(target: &MultiIndex) -> Result<Expansion> {
    expand_capped(target, DEFAULT_MAX_ORDER)
}

pub fn expand_capped(target: &MultiIndex, cap: usize) -> Result<Expansion> {
    let slots = target.slots();
    let dim = target.dim();
    let partitions = set_partitions_capped(slots.len(), cap)?;
    let terms = partitions.into_iter().map(|blocks| {
        let mut counts: Vec<MultiIndex> = blocks
            .iter()
            .map(|block| {
                let mut c = vec![0u32; dim];
                for &slot in block {
                    c[slots[slot]] += 1;
                }
                MultiIndex::new(c)
            })
            .collect();
        counts.sort();
        let mut factors: Vec<(MultiIndex, u32)> = Vec::new();
        for c in counts {
            match factors.last_mut() {
                Some((p, e)) if *p == c => *e += 1,
                _ => factors.push((c, 1)),
            }
        }
        ExpansionTerm {
            coeff: 1,
            sigma_order: blocks.len(),
            factors,
        }
    });
    Ok(Expansion::collect(
        target.clone(),
        terms.collect::<Vec<_>>(),
    ))
}

/// `∂ D^S σ / ∂ D^P z = C_S^P · ∂/∂z D^{S−P} σ`.
pub fn partial_wrt(target: &MultiIndex, factor: &MultiIndex) -> Result<Expansion> {
    if factor.is_zero() {
        return Err(Error::Domain("factor index must be nonzero".into()));
    }
    let rest = target
        .sub(factor)?
        .ok_or_else(|| Error::Domain(format!("{factor} is not below {target}")))?;
    let c = target.coefficient(factor)?;
    let mut e = expand(&rest)?.z_derivative().scaled(c);
    e.target = target.clone();
    Ok(e)
}

/// Memoized expansions keyed by multi-index.
///
/// Lookups take a read lock; a miss upgrades to the write lock, so population
/// is serialized while warm reads proceed concurrently.
#[derive(Debug)]
pub struct ExpansionCache {
    max_order: usize,
    entries: RwLock<HashMap<MultiIndex, Arc<Expansion>>>,
}

impl Default for ExpansionCache {
    fn default() -> Self {
        Self::with_max_order(DEFAULT_MAX_ORDER)
    }
}

impl ExpansionCache {
    pub fn with_max_order(max_order: usize) -> Self {
        ExpansionCache {
            max_order,
            entries: RwLock::new(HashMap::new()),
        }
    }

    /// Process-wide cache with the default order cap.
    pub fn shared() -> &'static ExpansionCache {
        static SHARED: OnceLock<ExpansionCache> = OnceLock::new();
        SHARED.get_or_init(ExpansionCache::default)
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn get(&self, target: &MultiIndex) -> Result<Arc<Expansion>> {
        if let Some(e) = self
            .entries
            .read()
            .expect("expansion cache poisoned")
            .get(target)
        {
            return Ok(Arc::clone(e));
        }
        let mut entries = self.entries.write().expect("expansion cache poisoned");
        if let Some(e) = entries.get(target) {
            return Ok(Arc::clone(e));
        }
        let e = Arc::new(expand_capped(target, self.max_order)?);
        entries.insert(target.clone(), Arc::clone(&e));
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("expansion cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
