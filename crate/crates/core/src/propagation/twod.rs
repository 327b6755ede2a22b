//! Hand-written forward and backward passes for two inputs `(a, b)` and
//! derivatives up to second order.
//!
//! Nothing here touches the expansion machinery: every recurrence is spelled
//! out. It exists to cross-check the general engine.

use ndarray::{Array2, ArrayView2, Axis};

use super::{collect_seeds, DerivTable, Gradients, SeedAdjoints};
use crate::error::{check_dim, Error, Result};
use crate::multiindex::{IndexSet, MultiIndex};
use crate::network::Network;

/// `(0,0) (1,0) (0,1) (2,0) (1,1) (0,2)`, in table order.
pub const TWO_D_INDICES: [[u32; 2]; 6] = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];

const V: usize = 0;
const A: usize = 1;
const B: usize = 2;
const AA: usize = 3;
const AB: usize = 4;
const BB: usize = 5;

fn closure() -> IndexSet {
    IndexSet::new(TWO_D_INDICES.iter().map(|o| MultiIndex::new(o.to_vec()))).expect("non-empty")
}

pub fn forward_2d_order2(net: &Network, inputs: ArrayView2<'_, f64>) -> Result<DerivTable> {
    check_dim(2, net.input_dim())?;
    check_dim(2, inputs.ncols())?;
    let closure = closure();
    debug_assert!(closure
        .iter()
        .zip(TWO_D_INDICES)
        .all(|(i, o)| i.orders() == o));
    let points = inputs.nrows();
    let w1 = &net.weights()[0];
    let width = w1.nrows();

    // z_1 = W·A; ∂z_1/∂a, ∂z_1/∂b are the weight columns; second derivatives vanish.
    let mut layer = vec![Array2::zeros((points, width)); 6];
    for p in 0..points {
        for al in 0..width {
            layer[V][[p, al]] = w1[[al, 0]] * inputs[[p, 0]] + w1[[al, 1]] * inputs[[p, 1]];
            layer[A][[p, al]] = w1[[al, 0]];
            layer[B][[p, al]] = w1[[al, 1]];
        }
    }

    let mut z = vec![layer];
    let mut sigma = Vec::new();
    let mut activated = Vec::new();
    for h in 0..net.depth() {
        let zh = &z[h];
        let width = zh[V].ncols();
        let act = net.activations()[h];
        let t = &net.thresholds()[h];
        let mut sig = vec![Array2::zeros((points, width)); 4];
        let mut out = vec![Array2::zeros((points, width)); 6];
        for p in 0..points {
            for k in 0..width {
                let d = act.derivative_table(zh[V][[p, k]] + t[k], 3)?;
                for (o, v) in d.iter().enumerate() {
                    sig[o][[p, k]] = *v;
                }
                let (s0, s1, s2) = (d[0], d[1], d[2]);
                let (za, zb) = (zh[A][[p, k]], zh[B][[p, k]]);
                out[V][[p, k]] = s0;
                out[A][[p, k]] = s1 * za;
                out[B][[p, k]] = s1 * zb;
                out[AA][[p, k]] = s2 * za * za + s1 * zh[AA][[p, k]];
                out[AB][[p, k]] = s2 * za * zb + s1 * zh[AB][[p, k]];
                out[BB][[p, k]] = s2 * zb * zb + s1 * zh[BB][[p, k]];
            }
        }
        let w = &net.weights()[h + 1];
        let mut next: Vec<Array2<f64>> = out.iter().map(|o| o.dot(&w.t())).collect();
        if h + 1 == net.depth() {
            if let Some(b) = net.output_bias() {
                next[V] += b;
            }
        }
        sigma.push(sig);
        activated.push(out);
        z.push(next);
    }

    Ok(DerivTable {
        closure,
        inputs: inputs.to_owned(),
        z,
        sigma,
        activated,
    })
}

pub fn backward_2d_order2(
    net: &Network,
    table: &DerivTable,
    seeds: &SeedAdjoints,
) -> Result<Gradients> {
    check_dim(2, net.input_dim())?;
    if table.closure != closure() {
        return Err(Error::Contract(
            "two-variable path needs the six second-order indices".into(),
        ));
    }
    check_dim(net.depth() + 1, table.layers())?;
    let points = table.points();
    let mut adj = collect_seeds(&table.closure, seeds, points, net.output_dim())?;
    let mut grads = Gradients::zeros_like(net);
    if let Some(b) = grads.output_bias.as_mut() {
        *b = adj[V].sum_axis(Axis(0));
    }

    for h in (0..net.depth()).rev() {
        let w = &net.weights()[h + 1];
        let act = &table.activated[h];

        // ∂E/∂W: each output derivative contributes its adjoint times the
        // matching D^s σ of the layer below.
        let gw = &mut grads.weights[h + 1];
        for (tau, mut row) in gw.rows_mut().into_iter().enumerate() {
            for (th, g) in row.iter_mut().enumerate() {
                for p in 0..points {
                    for s in 0..6 {
                        *g += adj[s][[p, tau]] * act[s][[p, th]];
                    }
                }
            }
        }

        let g: Vec<Array2<f64>> = adj.iter().map(|a| a.dot(w)).collect();
        let zh = &table.z[h];
        let sig = &table.sigma[h];
        let width = w.ncols();
        let mut next = vec![Array2::zeros((points, width)); 6];
        for p in 0..points {
            for th in 0..width {
                let (s1, s2, s3) = (sig[1][[p, th]], sig[2][[p, th]], sig[3][[p, th]]);
                let (za, zb) = (zh[A][[p, th]], zh[B][[p, th]]);
                let (zaa, zab, zbb) = (zh[AA][[p, th]], zh[AB][[p, th]], zh[BB][[p, th]]);
                let gs = |s: usize| g[s][[p, th]];

                // values: every next-layer quantity depends on z through σ^(k)
                next[V][[p, th]] = gs(V) * s1
                    + gs(A) * s2 * za
                    + gs(B) * s2 * zb
                    + gs(AA) * (s3 * za * za + s2 * zaa)
                    + gs(AB) * (s3 * za * zb + s2 * zab)
                    + gs(BB) * (s3 * zb * zb + s2 * zbb);
                // first derivatives: the squared terms carry the factor 2
                next[A][[p, th]] = gs(A) * s1 + gs(AA) * 2.0 * s2 * za + gs(AB) * s2 * zb;
                next[B][[p, th]] = gs(B) * s1 + gs(BB) * 2.0 * s2 * zb + gs(AB) * s2 * za;
                // second derivatives appear only linearly, next to σ'
                next[AA][[p, th]] = gs(AA) * s1;
                next[AB][[p, th]] = gs(AB) * s1;
                next[BB][[p, th]] = gs(BB) * s1;
            }
        }
        grads.thresholds[h] = next[V].sum_axis(Axis(0));
        adj = next;
    }

    let gw1 = &mut grads.weights[0];
    let inputs = &table.inputs;
    for al in 0..gw1.nrows() {
        for p in 0..points {
            gw1[[al, 0]] += adj[V][[p, al]] * inputs[[p, 0]] + adj[A][[p, al]];
            gw1[[al, 1]] += adj[V][[p, al]] * inputs[[p, 1]] + adj[B][[p, al]];
        }
    }
    Ok(grads)
}
