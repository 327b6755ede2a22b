//! A small catalog of named point functions for coefficients, right-hand
//! sides, boundary targets, and exact solutions.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar function of one collocation point.
#[derive(Clone)]
pub struct PointFn(Arc<PointClosure>);

type PointClosure = dyn Fn(&[f64]) -> f64 + Send + Sync;

impl PointFn {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> PointFn {
        PointFn(Arc::new(f))
    }

    pub fn constant(c: f64) -> PointFn {
        PointFn::new(move |_| c)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

impl fmt::Debug for PointFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PointFn")
    }
}

/// Serializable description of a [`PointFn`]: a bare number or a named
/// catalog entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FnSpec {
    Const(f64),
    Named(NamedFn),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case", deny_unknown_fields)]
pub enum NamedFn {
    Constant {
        value: f64,
    },
    /// `Σ coeff · ∏ x_i^{powers_i}`
    Polynomial {
        terms: Vec<Monomial>,
    },
    /// `amplitude · π^pi_power · ∏ sin(freq_i π x_i)`
    SinProduct {
        amplitude: f64,
        #[serde(default)]
        pi_power: i32,
        freq: Vec<f64>,
    },
    /// `amplitude · π^pi_power · ∏ cos(freq_i π x_i)`
    CosProduct {
        amplitude: f64,
        #[serde(default)]
        pi_power: i32,
        freq: Vec<f64>,
    },
    /// `amplitude · exp(−|x − center|² / (2 width²))`
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    /// `Σ terms`
    Sum {
        terms: Vec<FnSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl FnSpec {
    /// Builds the function for inputs of dimension `dim`.
    pub fn build(&self, dim: usize) -> Result<PointFn> {
        let check = |what: &str, len: usize| {
            if len == dim {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{what} has {len} entries, input dimension is {dim}"
                )))
            }
        };
        Ok(match self.clone() {
            FnSpec::Const(c) | FnSpec::Named(NamedFn::Constant { value: c }) => {
                PointFn::constant(c)
            }
            FnSpec::Named(NamedFn::Polynomial { terms }) => {
                for t in &terms {
                    check("polynomial powers", t.powers.len())?;
                }
                PointFn::new(move |x| {
                    terms
                        .iter()
                        .map(|t| {
                            t.coeff
                                * x.iter()
                                    .zip(&t.powers)
                                    .map(|(x, &p)| x.powi(p as i32))
                                    .product::<f64>()
                        })
                        .sum()
                })
            }
            FnSpec::Named(NamedFn::SinProduct {
                amplitude,
                pi_power,
                freq,
            }) => {
                check("sin_product freq", freq.len())?;
                let scale = amplitude * PI.powi(pi_power);
                PointFn::new(move |x| {
                    scale
                        * x.iter()
                            .zip(&freq)
                            .map(|(x, f)| (f * PI * x).sin())
                            .product::<f64>()
                })
            }
            FnSpec::Named(NamedFn::CosProduct {
                amplitude,
                pi_power,
                freq,
            }) => {
                check("cos_product freq", freq.len())?;
                let scale = amplitude * PI.powi(pi_power);
                PointFn::new(move |x| {
                    scale
                        * x.iter()
                            .zip(&freq)
                            .map(|(x, f)| (f * PI * x).cos())
                            .product::<f64>()
                })
            }
            FnSpec::Named(NamedFn::Gaussian {
                amplitude,
                center,
                width,
            }) => {
                check("gaussian center", center.len())?;
                if width <= 0.0 {
                    return Err(Error::Config("gaussian width must be positive".into()));
                }
                PointFn::new(move |x| {
                    let r2: f64 = x.iter().zip(&center).map(|(x, c)| (x - c).powi(2)).sum();
                    amplitude * (-r2 / (2.0 * width * width)).exp()
                })
            }
            FnSpec::Named(NamedFn::Sum { terms }) => {
                let parts = terms
                    .iter()
                    .map(|t| t.build(dim))
                    .collect::<Result<Vec<_>>>()?;
                PointFn::new(move |x| parts.iter().map(|f| f.eval(x)).sum())
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_values() {
        let f = FnSpec::Named(NamedFn::SinProduct {
            amplitude: -2.0,
            pi_power: 2,
            freq: vec![1.0, 1.0],
        })
        .build(2)
        .unwrap();
        let want = -2.0 * PI * PI * (0.5 * PI).sin() * (0.25 * PI).sin();
        assert!((f.eval(&[0.5, 0.25]) - want).abs() < 1e-15);

        let p = FnSpec::Named(NamedFn::Polynomial {
            terms: vec![
                Monomial {
                    coeff: 2.0,
                    powers: vec![2, 0],
                },
                Monomial {
                    coeff: -1.0,
                    powers: vec![1, 1],
                },
            ],
        })
        .build(2)
        .unwrap();
        assert_eq!(p.eval(&[3.0, 2.0]), 18.0 - 6.0);

        assert_eq!(FnSpec::Const(4.5).build(3).unwrap().eval(&[0.0; 3]), 4.5);
        let g = FnSpec::Named(NamedFn::Gaussian {
            amplitude: 2.0,
            center: vec![0.0],
            width: 1.0,
        })
        .build(1)
        .unwrap();
        assert!((g.eval(&[1.0]) - 2.0 * (-0.5f64).exp()).abs() < 1e-15);

        let sum: FnSpec =
            serde_json::from_str(r#"{"fn": "sum", "terms": [1.5, {"fn": "cos_product", "amplitude": 2.0, "freq": [1]}]}"#)
                .unwrap();
        assert!((sum.build(1).unwrap().eval(&[0.5]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let f = FnSpec::Named(NamedFn::CosProduct {
            amplitude: 1.0,
            pi_power: 0,
            freq: vec![1.0],
        });
        assert!(matches!(f.build(2), Err(Error::Config(_))));
    }

    #[test]
    fn parses_from_json_forms() {
        let v: FnSpec = serde_json::from_str("3.5").unwrap();
        assert_eq!(v, FnSpec::Const(3.5));
        let v: FnSpec =
            serde_json::from_str(r#"{"fn": "sin_product", "amplitude": 1.0, "freq": [1, 2]}"#)
                .unwrap();
        assert!(matches!(
            v,
            FnSpec::Named(NamedFn::SinProduct { pi_power: 0, .. })
        ));
        assert!(serde_json::from_str::<FnSpec>(
            r#"{"fn": "sin_product", "amplitude": 1.0, "freq": [1], "bogus": 1}"#
        )
        .is_err());
    }
}
