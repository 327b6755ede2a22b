//! Independent reference computations used to verify the engine.
//!
//! None of these share code with the expansion-based forward/backward
//! passes: they only read the network's parameters and call the activation
//! function itself.

use ndarray::{Array2, ArrayView2};

use crate::error::{check_dim, Result};
use crate::multiindex::MultiIndex;
use crate::network::{Activation, Network};
use crate::propagation::Gradients;

/// Central-difference gradient of `loss` with respect to every parameter.
pub fn fd_weight_gradients(net: &Network, loss: impl Fn(&Network) -> f64, step: f64) -> Gradients {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = net.clone();
    let n = net.param_count();
    let mut flat = Vec::with_capacity(n);
    for i in 0..n {
        let orig = nth_param(&mut probe, i);
        *nth_param_mut(&mut probe, i) = orig + step;
        let up = loss(&probe);
        *nth_param_mut(&mut probe, i) = orig - step;
        let down = loss(&probe);
        *nth_param_mut(&mut probe, i) = orig;
        flat.push((up - down) / (2.0 * step));
    }
    Gradients::from_flat(net, &flat).expect("length matches parameter count")
}

fn nth_param(net: &mut Network, i: usize) -> f64 {
    *nth_param_mut(net, i)
}

fn nth_param_mut(net: &mut Network, i: usize) -> &mut f64 {
    net.params_mut().nth(i).expect("parameter index in range")
}

/// `D^S u` at one input point, by nesting first-order forward-mode
/// propagation `|S|` times.
///
/// Each nesting level adds one nilpotent direction `ε_j` (`ε_j² = 0`) seeded
/// on the input variable that slot `j` of `S` differentiates. The coefficient
/// of `ε_1 ⋯ ε_|S|` in the output is the requested mixed partial.
pub fn nested_first_order_oracle(
    net: &Network,
    input: &[f64],
    target: &MultiIndex,
) -> Result<Vec<f64>> {
    check_dim(net.input_dim(), target.dim())?;
    nested_slots_oracle(net, input, &target.slots())
}

/// Mixed partial `∂/∂x_{slots[k−1]} ⋯ ∂/∂x_{slots[0]} u`, differentiating in
/// the given variable order.
pub fn nested_slots_oracle(net: &Network, input: &[f64], slots: &[usize]) -> Result<Vec<f64>> {
    check_dim(net.input_dim(), input.len())?;
    if let Some(&bad) = slots.iter().find(|&&v| v >= net.input_dim()) {
        return Err(crate::error::Error::Dimension {
            expected: net.input_dim(),
            got: bad + 1,
        });
    }
    let levels = slots.len();
    let vars: Vec<Nested> = input
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut v = Nested::constant(levels, x);
            for (j, &var) in slots.iter().enumerate() {
                if var == i {
                    v.c[1 << j] = 1.0;
                }
            }
            v
        })
        .collect();

    let w1 = &net.weights()[0];
    let mut z: Vec<Nested> = (0..w1.nrows())
        .map(|a| {
            let mut acc = Nested::constant(levels, 0.0);
            for (i, v) in vars.iter().enumerate() {
                acc.axpy(w1[[a, i]], v);
            }
            acc
        })
        .collect();
    for h in 0..net.depth() {
        let act = net.activations()[h];
        let t = &net.thresholds()[h];
        let hidden: Vec<Nested> = z
            .iter()
            .enumerate()
            .map(|(k, zk)| {
                let mut arg = zk.clone();
                arg.c[0] += t[k];
                apply(act, &arg)
            })
            .collect();
        let w = &net.weights()[h + 1];
        z = (0..w.nrows())
            .map(|r| {
                let mut acc = Nested::constant(levels, 0.0);
                for (k, hk) in hidden.iter().enumerate() {
                    acc.axpy(w[[r, k]], hk);
                }
                acc
            })
            .collect();
    }
    let top = (1usize << levels) - 1;
    Ok(z.iter()
        .enumerate()
        .map(|(o, v)| {
            v.c[top]
                + if top == 0 {
                    net.output_bias().map_or(0.0, |b| b[o])
                } else {
                    0.0
                }
        })
        .collect())
}

/// Element of the algebra generated by `levels` nilpotent directions.
/// Component `c[m]` multiplies `∏_{j ∈ m} ε_j` (bitmask `m`).
#[derive(Clone, Debug)]
struct Nested {
    levels: usize,
    c: Vec<f64>,
}

impl Nested {
    fn constant(levels: usize, x: f64) -> Nested {
        let mut c = vec![0.0; 1 << levels];
        c[0] = x;
        Nested { levels, c }
    }

    fn axpy(&mut self, a: f64, x: &Nested) {
        for (s, v) in self.c.iter_mut().zip(&x.c) {
            *s += a * v;
        }
    }

    fn mul(&self, other: &Nested) -> Nested {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        for (m, out) in c.iter_mut().enumerate() {
            // sum over submasks s of m
            let mut s = m;
            loop {
                *out += self.c[s] * other.c[m ^ s];
                if s == 0 {
                    break;
                }
                s = (s - 1) & m;
            }
        }
        Nested {
            levels: self.levels,
            c,
        }
    }

    fn split(&self) -> (Nested, Nested) {
        let half = self.c.len() / 2;
        (
            Nested {
                levels: self.levels - 1,
                c: self.c[..half].to_vec(),
            },
            Nested {
                levels: self.levels - 1,
                c: self.c[half..].to_vec(),
            },
        )
    }

    fn join(lo: Nested, hi: Nested) -> Nested {
        let mut c = lo.c;
        c.extend(hi.c);
        Nested {
            levels: lo.levels + 1,
            c,
        }
    }

    fn plus_scalar(mut self, a: f64) -> Nested {
        self.c[0] += a;
        self
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Nested {
        Nested {
            levels: self.levels,
            c: self.c.iter().map(|&x| f(x)).collect(),
        }
    }
}

#[derive(Clone, Copy)]
enum Func {
    Tanh,
    Sigmoid,
    Sin,
    Cos,
}

fn apply(kind: Activation, x: &Nested) -> Nested {
    let f = match kind {
        Activation::Tanh => Func::Tanh,
        Activation::Sigmoid => Func::Sigmoid,
        Activation::Sin => Func::Sin,
    };
    eval(f, x)
}

/// `f(lo + ε·hi) = f(lo) + ε · f'(lo) · hi`, recursing on the top direction.
fn eval(f: Func, x: &Nested) -> Nested {
    if x.levels == 0 {
        let v = x.c[0];
        let y = match f {
            Func::Tanh => Activation::Tanh.apply(v),
            Func::Sigmoid => Activation::Sigmoid.apply(v),
            Func::Sin => Activation::Sin.apply(v),
            Func::Cos => v.cos(),
        };
        return Nested::constant(0, y);
    }
    let (lo, hi) = x.split();
    let value = eval(f, &lo);
    let slope = match f {
        Func::Tanh => value.mul(&value).map(|v| -v).plus_scalar(1.0),
        Func::Sigmoid => value.mul(&value.map(|v| -v).plus_scalar(1.0)),
        Func::Sin => eval(Func::Cos, &lo),
        Func::Cos => eval(Func::Sin, &lo).map(|v| -v),
    };
    Nested::join(value, slope.mul(&hi))
}

/// Textbook backpropagation of output adjoints `∂E/∂u` through the plain
/// network, for losses that depend on output values only.
pub fn plain_backprop(
    net: &Network,
    inputs: ArrayView2<'_, f64>,
    output_adjoint: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    check_dim(net.input_dim(), inputs.ncols())?;
    check_dim(net.output_dim(), output_adjoint.ncols())?;
    check_dim(inputs.nrows(), output_adjoint.nrows())?;
    let mut grads = Gradients::zeros_like(net);
    let depth = net.depth();
    for p in 0..inputs.nrows() {
        // forward, keeping pre-activations (with thresholds) and activations
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(depth);
        let mut post: Vec<Vec<f64>> = vec![inputs.row(p).to_vec()];
        for h in 0..depth {
            let w = &net.weights()[h];
            let x = &post[h];
            let t = &net.thresholds()[h];
            let act = net.activations()[h];
            let zt: Vec<f64> = (0..w.nrows())
                .map(|r| (0..w.ncols()).map(|c| w[[r, c]] * x[c]).sum::<f64>() + t[r])
                .collect();
            post.push(zt.iter().map(|&v| act.apply(v)).collect());
            pre.push(zt);
        }

        let mut delta: Vec<f64> = output_adjoint.row(p).to_vec();
        if let Some(b) = grads.output_bias.as_mut() {
            for (g, d) in b.iter_mut().zip(&delta) {
                *g += d;
            }
        }
        for l in (0..=depth).rev() {
            let w = &net.weights()[l];
            let x = &post[l];
            let gw = &mut grads.weights[l];
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    gw[[r, c]] += delta[r] * x[c];
                }
            }
            if l == 0 {
                break;
            }
            let act = net.activations()[l - 1];
            let below: Vec<f64> = (0..w.ncols())
                .map(|c| {
                    let back: f64 = (0..w.nrows()).map(|r| w[[r, c]] * delta[r]).sum();
                    back * act.derivative_table(pre[l - 1][c], 1).expect("order 1")[1]
                })
                .collect();
            for (g, d) in grads.thresholds[l - 1].iter_mut().zip(&below) {
                *g += d;
            }
            delta = below;
        }
    }
    Ok(grads)
}

/// Sum of `½ u²` over the batch, a values-only loss whose output adjoint is `u`.
pub fn half_square_loss(net: &Network, inputs: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    let mut adj = Array2::zeros((inputs.nrows(), net.output_dim()));
    let mut e = 0.0;
    for (p, row) in inputs.rows().into_iter().enumerate() {
        let u = net.forward_plain(row.as_slice().unwrap_or(&row.to_vec()))?;
        for (o, v) in u.iter().enumerate() {
            e += 0.5 * v * v;
            adj[[p, o]] = *v;
        }
    }
    Ok((e, adj))
}
