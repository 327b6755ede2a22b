//! TOML problem configuration.
//!
//! ```toml
//! [problem]
//! input_dim = 2
//! rhs = { fn = "sin_product", amplitude = -2.0, pi_power = 2, freq = [1, 1] }
//! terms = [{ index = "(2,0)" }, { index = "(0,2)" }]
//!
//! [domain]
//! interior_points = 400
//! boundary_points = 160
//!
//! [[boundary]]
//! face = "all"
//! target = 0.0
//!
//! [network]
//! shape = [2, 20, 20, 1]
//! activation = "tanh"
//!
//! [optimizer]
//! kind = "rprop"
//! iterations = 5000
//!
//! [run]
//! seed = 1
//! ```

use std::path::Path;

use derivprop::training::{
    BoundaryCondition, BoxDomain, FnSpec, OperatorTerm, OptimizerConfig, OptimizerKind, PdeProblem,
};
use derivprop::{Activation, Error, MultiIndex, Network, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    #[serde(default)]
    pub domain: DomainSection,
    #[serde(default)]
    pub boundary: Vec<BoundarySection>,
    pub network: NetworkSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub run: RunSection,
    /// SHA-256 of the file contents, hex encoded.
    #[serde(skip)]
    pub digest: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub input_dim: usize,
    pub terms: Vec<TermSection>,
    #[serde(default = "zero_fn")]
    pub rhs: FnSpec,
    #[serde(default = "one")]
    pub lambda: f64,
    pub exact: Option<FnSpec>,
}

/// One operator term: `coeff · D^index u`, or `coeff · ∏ D^f u` over `factors`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    pub index: Option<MultiIndex>,
    pub factors: Option<Vec<MultiIndex>>,
    #[serde(default = "one_fn")]
    pub coeff: FnSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    #[serde(default = "default_interior")]
    pub interior_points: usize,
    #[serde(default = "default_boundary")]
    pub boundary_points: usize,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection {
            lower: None,
            upper: None,
            interior_points: default_interior(),
            boundary_points: default_boundary(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    /// `"a-"`, `"b+"`, ... or `"all"`.
    pub face: String,
    #[serde(default = "zero_fn")]
    pub target: FnSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub shape: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    pub learning_rate: Option<f64>,
    pub eta_plus: Option<f64>,
    pub eta_minus: Option<f64>,
    pub delta0: Option<f64>,
    pub delta_min: Option<f64>,
    pub delta_max: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub batch_size: Option<usize>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            kind: default_kind(),
            learning_rate: None,
            eta_plus: None,
            eta_minus: None,
            delta0: None,
            delta_min: None,
            delta_max: None,
            iterations: default_iterations(),
            batch_size: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub report_grid: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            report_grid: default_grid(),
        }
    }
}

fn zero_fn() -> FnSpec {
    FnSpec::Const(0.0)
}
fn one_fn() -> FnSpec {
    FnSpec::Const(1.0)
}
fn one() -> f64 {
    1.0
}
fn default_interior() -> usize {
    400
}
fn default_boundary() -> usize {
    160
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_kind() -> String {
    "rprop".into()
}
fn default_iterations() -> usize {
    1000
}
fn default_grid() -> usize {
    41
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.digest = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        config.problem()?;
        config.optimizer()?;
        if config.network.shape.first() != Some(&config.problem.input_dim) {
            return Err(Error::Config(format!(
                "network shape {:?} does not start with input_dim {}",
                config.network.shape, config.problem.input_dim
            )));
        }
        Ok(config)
    }

    pub fn problem(&self) -> Result<PdeProblem> {
        let p = &self.problem;
        let dim = p.input_dim;
        let domain = BoxDomain::new(
            self.domain.lower.clone().unwrap_or_else(|| vec![0.0; dim]),
            self.domain.upper.clone().unwrap_or_else(|| vec![1.0; dim]),
        )?;
        let terms = p
            .terms
            .iter()
            .map(|t| {
                let factors = match (&t.index, &t.factors) {
                    (Some(i), None) => vec![i.clone()],
                    (None, Some(f)) if !f.is_empty() => f.clone(),
                    _ => {
                        return Err(Error::Config(
                            "each term needs exactly one of `index` or `factors`".into(),
                        ))
                    }
                };
                Ok(OperatorTerm {
                    coeff: t.coeff.build(dim)?,
                    factors,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut boundary = Vec::new();
        for b in &self.boundary {
            let faces = if b.face == "all" {
                domain.faces()
            } else {
                vec![b
                    .face
                    .parse()
                    .map_err(|e: Error| Error::Config(e.to_string()))?]
            };
            for face in faces {
                boundary.push(BoundaryCondition {
                    face,
                    target: b.target.build(dim)?,
                });
            }
        }
        let problem = PdeProblem {
            input_dim: dim,
            terms,
            rhs: p.rhs.build(dim)?,
            domain,
            boundary,
            lambda: p.lambda,
            interior_points: self.domain.interior_points,
            boundary_points: self.domain.boundary_points,
            exact: p.exact.as_ref().map(|e| e.build(dim)).transpose()?,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig> {
        let o = &self.optimizer;
        let kind = match o.kind.as_str() {
            "gd" => OptimizerKind::Gd {
                learning_rate: o
                    .learning_rate
                    .ok_or_else(|| Error::Config("gd needs `learning_rate`".into()))?,
            },
            "rprop" => {
                let OptimizerKind::Rprop {
                    eta_plus,
                    eta_minus,
                    delta0,
                    delta_min,
                    delta_max,
                } = OptimizerKind::rprop()
                else {
                    unreachable!()
                };
                OptimizerKind::Rprop {
                    eta_plus: o.eta_plus.unwrap_or(eta_plus),
                    eta_minus: o.eta_minus.unwrap_or(eta_minus),
                    delta0: o.delta0.unwrap_or(delta0),
                    delta_min: o.delta_min.unwrap_or(delta_min),
                    delta_max: o.delta_max.unwrap_or(delta_max),
                }
            }
            other => return Err(Error::Config(format!("unknown optimizer kind {other:?}"))),
        };
        let config = OptimizerConfig {
            kind,
            iterations: o.iterations,
            batch_size: o.batch_size,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn network(&self, seed: u64) -> Result<Network> {
        Network::new(&self.network.shape, self.network.activation, seed)
    }
}
