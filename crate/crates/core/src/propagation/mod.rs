//! Forward propagation of output derivatives and the matching backward pass.
//!
//! # Layout
//!
//! Every quantity is batched over collocation points: a layer's `D^s z` is a
//! `(points × neurons)` matrix, and a [`DerivTable`] holds one such matrix
//! per index of the closure, per layer. Layers are numbered as in the
//! network: `1..=depth` are hidden, `depth + 1` is the output.
//!
//! # Forward
//!
//! At layer 1, `z_1 = A · W_1ᵀ`, `D^{I_i} z_1` is column `i` of `W_1` for
//! every point, and every index of order two or more is zero. Above that,
//! `D^s z_{n+1} = D^s σ(z_n + t_n) · W_{n+1}ᵀ`, with `D^s σ` evaluated from its
//! cached expansion. Indices are visited in graded-lex order.
//!
//! # Backward
//!
//! Seeds `∂E/∂D^s u` on the output are pulled back one layer at a time:
//!
//! ```text
//! ∂E/∂D^r z_n = Σ_{s ≥ r} C_s^r · [∂/∂z D^{s−r} σ](z_n) · (∂E/∂D^s z_{n+1} · W_{n+1})
//! ∂E/∂W_{n+1} = Σ_r (∂E/∂D^r z_{n+1})ᵀ · D^r σ(z_n)
//! ∂E/∂t_n     = Σ_points ∂E/∂z_n
//! ∂E/∂W_1     = (∂E/∂z_1)ᵀ · A + Σ_i e_i ⊗ Σ_points ∂E/∂D^{I_i} z_1
//! ```
//!
//! The adjoints of one layer depend only on the next layer's, so there is no
//! ordering constraint inside a layer.

mod twod;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde_json::{json, Value};

pub use twod::{backward_2d_order2, forward_2d_order2, TWO_D_INDICES};

use crate::error::{check_dim, Error, Result};
use crate::faadibruno::{CompiledExpansion, ExpansionCache};
use crate::multiindex::{IndexSet, MultiIndex};
use crate::network::{Network, MAX_ACTIVATION_ORDER};

/// Output-layer seeds `∂E/∂D^s u`, one `(points × outputs)` matrix per index.
pub type SeedAdjoints = BTreeMap<MultiIndex, Array2<f64>>;

/// Zero seeds for every index of `closure`.
pub fn zero_seeds(closure: &IndexSet, points: usize, outputs: usize) -> SeedAdjoints {
    closure
        .iter()
        .map(|s| (s.clone(), Array2::zeros((points, outputs))))
        .collect()
}

/// Per-layer derivatives of the pre-activations with respect to the inputs.
#[derive(Clone, Debug)]
pub struct DerivTable {
    pub(crate) closure: IndexSet,
    pub(crate) inputs: Array2<f64>,
    /// `z[l][pos]`: layer `l + 1`, closure index at `pos`.
    pub(crate) z: Vec<Vec<Array2<f64>>>,
    /// `sigma[h][k]`: `σ^(k)(z + t)` on hidden layer `h + 1`.
    pub(crate) sigma: Vec<Vec<Array2<f64>>>,
    /// `activated[h][pos]`: `D^s σ(z + t)` on hidden layer `h + 1`.
    pub(crate) activated: Vec<Vec<Array2<f64>>>,
}

impl DerivTable {
    pub fn closure(&self) -> &IndexSet {
        &self.closure
    }

    pub fn points(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    /// Number of non-input layers (hidden layers plus output).
    pub fn layers(&self) -> usize {
        self.z.len()
    }

    /// `D^s z` on `layer` (1-based; the last layer is the output).
    pub fn get(&self, layer: usize, idx: &MultiIndex) -> Option<&Array2<f64>> {
        let pos = self.closure.position(idx)?;
        self.z.get(layer.checked_sub(1)?).map(|l| &l[pos])
    }

    /// `D^s u` on the output layer, `(points × outputs)`.
    pub fn output(&self, idx: &MultiIndex) -> Option<&Array2<f64>> {
        self.get(self.layers(), idx)
    }

    /// `D^s σ(z + t)` on hidden layer `layer` (1-based).
    pub fn activated(&self, layer: usize, idx: &MultiIndex) -> Option<&Array2<f64>> {
        let pos = self.closure.position(idx)?;
        self.activated.get(layer.checked_sub(1)?).map(|l| &l[pos])
    }

    /// Diagnostic dump: layer → index → matrix.
    pub fn to_json(&self) -> Value {
        let layers: Vec<Value> = self
            .z
            .iter()
            .enumerate()
            .map(|(l, mats)| {
                let derivs: serde_json::Map<String, Value> = self
                    .closure
                    .iter()
                    .zip(mats)
                    .map(|(idx, m)| (idx.to_string(), matrix_json(m)))
                    .collect();
                json!({ "layer": l + 1, "derivatives": derivs })
            })
            .collect();
        json!({
            "closure": self.closure.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "points": self.points(),
            "layers": layers,
        })
    }
}

fn matrix_json(m: &Array2<f64>) -> Value {
    Value::Array(m.rows().into_iter().map(|r| json!(r.to_vec())).collect())
}

/// `∂E/∂D^r z_n` for every hidden layer and every closure index.
#[derive(Clone, Debug)]
pub struct AdjointTable {
    pub(crate) closure: IndexSet,
    /// `adjoints[h][pos]` for hidden layer `h + 1`.
    pub(crate) adjoints: Vec<Vec<Array2<f64>>>,
}

impl AdjointTable {
    pub fn get(&self, layer: usize, idx: &MultiIndex) -> Option<&Array2<f64>> {
        let pos = self.closure.position(idx)?;
        self.adjoints.get(layer.checked_sub(1)?).map(|l| &l[pos])
    }
}

/// Loss gradients, shaped like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub thresholds: Vec<Array1<f64>>,
    pub output_bias: Option<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Gradients {
        Gradients {
            weights: net
                .weights()
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            thresholds: net
                .thresholds()
                .iter()
                .map(|t| Array1::zeros(t.len()))
                .collect(),
            output_bias: net.output_bias().map(|b| Array1::zeros(b.len())),
        }
    }

    /// Rebuilds gradients from a flat vector in [`Network::params`] order.
    pub fn from_flat(net: &Network, flat: &[f64]) -> Result<Gradients> {
        check_dim(net.param_count(), flat.len())?;
        let mut g = Gradients::zeros_like(net);
        for (dst, src) in g.values_mut().zip(flat) {
            *dst = *src;
        }
        Ok(g)
    }

    /// Values in [`Network::params`] order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .chain(self.thresholds.iter().flat_map(|t| t.iter().copied()))
            .chain(self.output_bias.iter().flat_map(|b| b.iter().copied()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(self.thresholds.iter_mut().flat_map(|t| t.iter_mut()))
            .chain(self.output_bias.iter_mut().flat_map(|b| b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.values_mut().for_each(|v| *v *= c);
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise difference.
    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.values()
            .zip(other.values())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Precomputed forward/backward kernels for one derivative closure.
///
/// Building a propagator fetches every expansion it needs from an
/// [`ExpansionCache`] once; forward and backward calls afterwards do no
/// symbolic work and can run concurrently on disjoint batches.
#[derive(Clone, Debug)]
pub struct Propagator {
    closure: IndexSet,
    /// `D^s σ` for every closure index.
    expansions: Vec<CompiledExpansion>,
    /// `∂/∂z D^q σ` for every closure index.
    kernels: Vec<CompiledExpansion>,
    /// For each `r`: every `(pos of s, pos of s − r, C_s^r)` with `s ≥ r`.
    pullbacks: Vec<Vec<(usize, usize, f64)>>,
    /// Position of the unit index `I_i`, when it is in the closure.
    units: Vec<Option<usize>>,
    sigma_orders: usize,
}

impl Propagator {
    pub fn new(closure: &IndexSet) -> Result<Propagator> {
        Self::with_cache(closure, ExpansionCache::shared())
    }

    pub fn with_cache(closure: &IndexSet, cache: &ExpansionCache) -> Result<Propagator> {
        if !closure.is_downward_closed() {
            return Err(Error::Contract(format!(
                "closure {:?} is not downward-closed",
                closure.as_slice()
            )));
        }
        let max = closure.max_order();
        if max + 1 > MAX_ACTIVATION_ORDER {
            return Err(Error::Limit {
                what: "derivative order (+1 for the backward pass)",
                value: max + 1,
                cap: MAX_ACTIVATION_ORDER,
            });
        }
        let mut expansions = Vec::with_capacity(closure.len());
        let mut kernels = Vec::with_capacity(closure.len());
        for s in closure {
            let e = cache.get(s)?;
            expansions.push(e.compile(closure)?);
            kernels.push(e.z_derivative().compile(closure)?);
        }
        let pullbacks = closure
            .iter()
            .map(|r| {
                closure
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| r.is_below(s))
                    .map(|(s_pos, s)| {
                        let q = s.sub(r)?.expect("r ≤ s");
                        let q_pos = closure.position(&q).expect("closure is downward-closed");
                        Ok((s_pos, q_pos, s.coefficient(r)? as f64))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = closure.dim();
        let units = (0..dim)
            .map(|i| closure.position(&MultiIndex::unit(dim, i)))
            .collect();
        Ok(Propagator {
            closure: closure.clone(),
            expansions,
            kernels,
            pullbacks,
            units,
            sigma_orders: max + 2,
        })
    }

    pub fn closure(&self) -> &IndexSet {
        &self.closure
    }

    pub fn forward(&self, net: &Network, inputs: ArrayView2<'_, f64>) -> Result<DerivTable> {
        check_dim(self.closure.dim(), net.input_dim())?;
        check_dim(net.input_dim(), inputs.ncols())?;
        let points = inputs.nrows();
        let nidx = self.closure.len();
        let w1 = &net.weights()[0];

        let mut first = Vec::with_capacity(nidx);
        for s in &self.closure {
            let m = if s.is_zero() {
                standard(inputs.dot(&w1.t()))
            } else if let Some(i) = s.unit_var() {
                let col = w1.column(i);
                Array2::from_shape_fn((points, w1.nrows()), |(_, a)| col[a])
            } else {
                Array2::zeros((points, w1.nrows()))
            };
            first.push(m);
        }
        check_finite(1, &self.closure, &first)?;

        let mut z = vec![first];
        let mut sigma = Vec::with_capacity(net.depth());
        let mut activated = Vec::with_capacity(net.depth());
        let mut table = vec![0.0; self.sigma_orders];
        for h in 0..net.depth() {
            let zh = &z[h];
            let width = zh[0].ncols();
            let act = net.activations()[h];
            let t = &net.thresholds()[h];

            let mut sig: Vec<Array2<f64>> = (0..self.sigma_orders)
                .map(|_| Array2::zeros((points, width)))
                .collect();
            for p in 0..points {
                for k in 0..width {
                    act.derivative_table_into(zh[0][[p, k]] + t[k], &mut table)?;
                    for (order, v) in table.iter().enumerate() {
                        sig[order][[p, k]] = *v;
                    }
                }
            }

            let sig_slices: Vec<&[f64]> = sig
                .iter()
                .map(|m| m.as_slice().expect("standard layout"))
                .collect();
            let z_slices: Vec<&[f64]> = zh
                .iter()
                .map(|m| m.as_slice().expect("standard layout"))
                .collect();
            let mut act_h = Vec::with_capacity(nidx);
            for e in &self.expansions {
                let mut out = Array2::zeros((points, width));
                e.evaluate_into(
                    &sig_slices,
                    &z_slices,
                    out.as_slice_mut().expect("standard layout"),
                );
                act_h.push(out);
            }

            let w = &net.weights()[h + 1];
            let mut next: Vec<Array2<f64>> =
                act_h.iter().map(|a| standard(a.dot(&w.t()))).collect();
            if h + 1 == net.depth() {
                if let Some(b) = net.output_bias() {
                    next[0] += b;
                }
            }
            check_finite(h + 2, &self.closure, &next)?;
            sigma.push(sig);
            activated.push(act_h);
            z.push(next);
        }

        Ok(DerivTable {
            closure: self.closure.clone(),
            inputs: inputs.to_owned(),
            z,
            sigma,
            activated,
        })
    }

    pub fn backward(
        &self,
        net: &Network,
        table: &DerivTable,
        seeds: &SeedAdjoints,
    ) -> Result<Gradients> {
        self.backward_with_adjoints(net, table, seeds)
            .map(|(g, _)| g)
    }

    /// Like [`Propagator::backward`], also returning every hidden-layer adjoint.
    pub fn backward_with_adjoints(
        &self,
        net: &Network,
        table: &DerivTable,
        seeds: &SeedAdjoints,
    ) -> Result<(Gradients, AdjointTable)> {
        if table.closure != self.closure {
            return Err(Error::Contract(
                "derivative table was built for a different closure".into(),
            ));
        }
        check_dim(net.depth() + 1, table.layers())?;
        let points = table.points();
        let mut adj = collect_seeds(&self.closure, seeds, points, net.output_dim())?;

        let mut grads = Gradients::zeros_like(net);
        if let Some(b) = grads.output_bias.as_mut() {
            *b = adj[0].sum_axis(Axis(0));
        }
        let mut hidden_adjoints = vec![Vec::new(); net.depth()];

        for h in (0..net.depth()).rev() {
            let w = &net.weights()[h + 1];
            let act = &table.activated[h];
            let gw = &mut grads.weights[h + 1];
            for (a, s) in adj.iter().zip(act) {
                *gw += &a.t().dot(s);
            }

            let pulled: Vec<Array2<f64>> = adj.iter().map(|a| a.dot(w)).collect();
            let width = w.ncols();
            let sig_slices: Vec<&[f64]> = table.sigma[h]
                .iter()
                .map(|m| m.as_slice().expect("standard layout"))
                .collect();
            let z_slices: Vec<&[f64]> = table.z[h]
                .iter()
                .map(|m| m.as_slice().expect("standard layout"))
                .collect();
            let kernels: Vec<Array2<f64>> = self
                .kernels
                .iter()
                .map(|k| {
                    let mut out = Array2::zeros((points, width));
                    k.evaluate_into(
                        &sig_slices,
                        &z_slices,
                        out.as_slice_mut().expect("standard layout"),
                    );
                    out
                })
                .collect();

            let next_adj: Vec<Array2<f64>> = self
                .pullbacks
                .iter()
                .map(|terms| {
                    let mut out = Array2::zeros((points, width));
                    for &(s_pos, q_pos, c) in terms {
                        Zip::from(&mut out)
                            .and(&kernels[q_pos])
                            .and(&pulled[s_pos])
                            .for_each(|o, &k, &g| *o += c * k * g);
                    }
                    out
                })
                .collect();
            check_finite(h + 1, &self.closure, &next_adj)?;

            grads.thresholds[h] = next_adj[0].sum_axis(Axis(0));
            adj = next_adj.clone();
            hidden_adjoints[h] = next_adj;
        }

        // z_1 = W_1 · A, D^{I_i} z_1 = W_1[:, i], higher derivatives vanish.
        let gw1 = &mut grads.weights[0];
        *gw1 += &adj[0].t().dot(&table.inputs);
        for (i, unit) in self.units.iter().enumerate() {
            if let Some(pos) = unit {
                let col_sum = adj[*pos].sum_axis(Axis(0));
                let mut col = gw1.column_mut(i);
                col += &col_sum;
            }
        }

        Ok((
            grads,
            AdjointTable {
                closure: self.closure.clone(),
                adjoints: hidden_adjoints,
            },
        ))
    }
}

fn collect_seeds(
    closure: &IndexSet,
    seeds: &SeedAdjoints,
    points: usize,
    outputs: usize,
) -> Result<Vec<Array2<f64>>> {
    if let Some(extra) = seeds.keys().find(|k| !closure.contains(k)) {
        return Err(Error::Contract(format!(
            "seed for {extra} is outside the closure"
        )));
    }
    closure
        .iter()
        .map(|s| {
            let m = seeds
                .get(s)
                .ok_or_else(|| Error::Contract(format!("missing seed adjoint for {s}")))?;
            if m.dim() != (points, outputs) {
                return Err(Error::Dimension {
                    expected: points * outputs,
                    got: m.len(),
                });
            }
            Ok(m.as_standard_layout().into_owned())
        })
        .collect()
}

fn check_finite(layer: usize, closure: &IndexSet, mats: &[Array2<f64>]) -> Result<()> {
    if cfg!(debug_assertions) {
        for (idx, m) in closure.iter().zip(mats) {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    layer,
                    index: idx.clone(),
                });
            }
        }
    }
    Ok(())
}

/// One-shot forward pass; prefer a reusable [`Propagator`] in loops.
/// Row-major copy when a matrix product came back in another layout (it
/// can for single-column operands); the kernels read contiguous rows.
fn standard(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}

pub fn forward(
    net: &Network,
    inputs: ArrayView2<'_, f64>,
    closure: &IndexSet,
) -> Result<DerivTable> {
    Propagator::new(closure)?.forward(net, inputs)
}

/// One-shot backward pass over a table produced by [`forward`].
pub fn backward(net: &Network, table: &DerivTable, seeds: &SeedAdjoints) -> Result<Gradients> {
    Propagator::new(table.closure())?.backward(net, table, seeds)
}

#[cfg(test)]
mod tests;
