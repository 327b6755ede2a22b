//! Activation functions with exact derivative tables of arbitrary order.
//!
//! `tanh` and the logistic sigmoid satisfy `u' = g(u)` for a quadratic `g`
//! (`1 − u²` and `u − u²`), so every derivative is a polynomial in `u`:
//! `P_0(u) = u`, `P_{k+1}(u) = P_k'(u) · g(u)`. The polynomials are built
//! once and evaluated with Horner's scheme. `sin` cycles with period four.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest derivative order a [`derivative_table`] may request.
pub const MAX_ACTIVATION_ORDER: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Sin,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Sin => x.sin(),
        }
    }

    pub fn max_order(self) -> usize {
        MAX_ACTIVATION_ORDER
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Sigmoid => 1,
            Activation::Sin => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Sin),
            _ => None,
        }
    }

    /// `[σ(x), σ'(x), …, σ^(m)(x)]`.
    pub fn derivative_table(self, x: f64, m: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; m + 1];
        self.derivative_table_into(x, &mut out)?;
        Ok(out)
    }

    /// Fills `out[k] = σ^(k)(x)` for `k < out.len()`.
    pub fn derivative_table_into(self, x: f64, out: &mut [f64]) -> Result<()> {
        let m = out.len().saturating_sub(1);
        if m > MAX_ACTIVATION_ORDER {
            return Err(Error::Limit {
                what: "activation derivative order",
                value: m,
                cap: MAX_ACTIVATION_ORDER,
            });
        }
        match self {
            Activation::Tanh => horner_table(tanh_polys(), x.tanh(), out),
            Activation::Sigmoid => horner_table(sigmoid_polys(), sigmoid(x), out),
            Activation::Sin => {
                let (s, c) = x.sin_cos();
                for (k, o) in out.iter_mut().enumerate() {
                    *o = [s, c, -s, -c][k % 4];
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Sin => "sin",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "sin" => Ok(Activation::Sin),
            other => Err(Error::Parse(format!("unknown activation {other:?}"))),
        }
    }
}

/// Free-function form of [`Activation::derivative_table`].
pub fn derivative_table(kind: Activation, x: f64, m: usize) -> Result<Vec<f64>> {
    kind.derivative_table(x, m)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

type Polys = Vec<Vec<f64>>;

fn tanh_polys() -> &'static Polys {
    static P: OnceLock<Polys> = OnceLock::new();
    P.get_or_init(|| derivative_polys(&[1.0, 0.0, -1.0]))
}

fn sigmoid_polys() -> &'static Polys {
    static P: OnceLock<Polys> = OnceLock::new();
    P.get_or_init(|| derivative_polys(&[0.0, 1.0, -1.0]))
}

/// Polynomials `P_k` (coefficients in ascending powers) for `u' = g(u)`.
fn derivative_polys(g: &[f64]) -> Polys {
    let mut polys = vec![vec![0.0, 1.0]];
    for _ in 0..MAX_ACTIVATION_ORDER {
        let p = polys.last().unwrap();
        let dp: Vec<f64> = p
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| i as f64 * c)
            .collect();
        let mut next = vec![0.0; dp.len() + g.len() - 1];
        for (i, a) in dp.iter().enumerate() {
            for (j, b) in g.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        polys.push(next);
    }
    polys
}

fn horner_table(polys: &Polys, u: f64, out: &mut [f64]) {
    for (o, p) in out.iter_mut().zip(polys) {
        *o = p.iter().rev().fold(0.0, |acc, c| acc * u + c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_zero() {
        assert_eq!(
            Activation::Tanh.derivative_table(0.0, 2).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(
            Activation::Sin.derivative_table(0.0, 4).unwrap(),
            vec![0.0, 1.0, 0.0, -1.0, 0.0]
        );
        let s = Activation::Sigmoid.derivative_table(0.0, 2).unwrap();
        assert_eq!(s, vec![0.5, 0.25, 0.0]);
    }

    #[test]
    fn order_cap() {
        assert!(matches!(
            Activation::Tanh.derivative_table(0.1, MAX_ACTIVATION_ORDER + 1),
            Err(Error::Limit { .. })
        ));
        assert_eq!(
            Activation::Sin
                .derivative_table(0.1, MAX_ACTIVATION_ORDER)
                .unwrap()
                .len(),
            MAX_ACTIVATION_ORDER + 1
        );
    }

    #[test]
    fn known_closed_forms() {
        // tanh'' = -2 tanh sech², tanh''' = -2 sech²(1 - 3 tanh²)
        let x: f64 = 0.7;
        let t = x.tanh();
        let sech2 = 1.0 - t * t;
        let table = Activation::Tanh.derivative_table(x, 3).unwrap();
        assert!((table[1] - sech2).abs() < 1e-15);
        assert!((table[2] + 2.0 * t * sech2).abs() < 1e-15);
        assert!((table[3] + 2.0 * sech2 * (1.0 - 3.0 * t * t)).abs() < 1e-14);
    }

    /// Central difference of order `k` with one Richardson step (`h` and `2h`).
    fn fd_derivative(f: impl Fn(f64) -> f64, x: f64, k: usize, h: f64) -> f64 {
        let central = |h: f64| -> f64 {
            // k-th central difference: Σ (-1)^j C(k,j) f(x + (k/2 - j)h) / h^k
            let mut acc = 0.0;
            let mut binom = 1.0;
            for j in 0..=k {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * binom * f(x + (k as f64 / 2.0 - j as f64) * h);
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
            acc / h.powi(k as i32)
        };
        (4.0 * central(h) - central(2.0 * h)) / 3.0
    }

    #[test]
    fn tables_match_finite_differences() {
        for kind in [Activation::Tanh, Activation::Sigmoid, Activation::Sin] {
            for i in 0..=40 {
                let x = -2.0 + 0.1 * i as f64;
                let table = kind.derivative_table(x, 4).unwrap();
                assert_eq!(table[0], kind.apply(x));
                for (k, &exact) in table.iter().enumerate().take(4).skip(1) {
                    let fd = fd_derivative(|y| kind.apply(y), x, k, 1e-3);
                    let err = (fd - exact).abs();
                    assert!(
                        err <= 1e-5 * exact.abs().max(1.0),
                        "{kind} k={k} x={x}: {exact} vs {fd}"
                    );
                }
                // order 4 at x = 0.5 from order-1 differences of the exact order-3 entry
                if (x - 0.5).abs() < 1e-12 {
                    let d3 = |y: f64| kind.derivative_table(y, 3).unwrap()[3];
                    let fd = fd_derivative(d3, x, 1, 1e-3);
                    assert!((fd - table[4]).abs() <= 1e-6 * table[4].abs().max(1.0));
                }
            }
        }
    }
}
