//! Gradient descent and iRprop⁻.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::propagation::Gradients;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Gd {
        learning_rate: f64,
    },
    Rprop {
        #[serde(default = "defaults::eta_plus")]
        eta_plus: f64,
        #[serde(default = "defaults::eta_minus")]
        eta_minus: f64,
        #[serde(default = "defaults::delta0")]
        delta0: f64,
        #[serde(default = "defaults::delta_min")]
        delta_min: f64,
        #[serde(default = "defaults::delta_max")]
        delta_max: f64,
    },
}

mod defaults {
    pub fn eta_plus() -> f64 {
        1.2
    }
    pub fn eta_minus() -> f64 {
        0.5
    }
    pub fn delta0() -> f64 {
        0.01
    }
    pub fn delta_min() -> f64 {
        1e-9
    }
    pub fn delta_max() -> f64 {
        1.0
    }
}

impl OptimizerKind {
    pub fn rprop() -> OptimizerKind {
        OptimizerKind::Rprop {
            eta_plus: defaults::eta_plus(),
            eta_minus: defaults::eta_minus(),
            delta0: defaults::delta0(),
            delta_min: defaults::delta_min(),
            delta_max: defaults::delta_max(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub iterations: usize,
    /// Collocation rows per iteration; `None` uses every row.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl OptimizerConfig {
    pub fn rprop(iterations: usize) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::rprop(),
            iterations,
            batch_size: None,
        }
    }

    pub fn gd(learning_rate: f64, iterations: usize) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::Gd { learning_rate },
            iterations,
            batch_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self.kind {
            OptimizerKind::Gd { learning_rate } => {
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    return bad(format!(
                        "learning rate must be positive, got {learning_rate}"
                    ));
                }
            }
            OptimizerKind::Rprop {
                eta_plus,
                eta_minus,
                delta0,
                delta_min,
                delta_max,
            } => {
                if !(eta_plus > 1.0 && 1.0 > eta_minus && eta_minus > 0.0) {
                    return bad(format!(
                        "need η⁺ > 1 > η⁻ > 0, got η⁺ = {eta_plus}, η⁻ = {eta_minus}"
                    ));
                }
                if !(0.0 < delta_min
                    && delta_min <= delta0
                    && delta0 <= delta_max
                    && delta_max.is_finite())
                {
                    return bad(format!(
                        "need 0 < Δmin ≤ Δ0 ≤ Δmax, got {delta_min}, {delta0}, {delta_max}"
                    ));
                }
            }
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }
}

/// Optimizer state across iterations.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Gd { learning_rate: f64 },
    Rprop(Rprop),
}

impl Optimizer {
    pub fn new(config: &OptimizerConfig, params: usize) -> Result<Optimizer> {
        config.validate()?;
        Ok(match config.kind {
            OptimizerKind::Gd { learning_rate } => Optimizer::Gd { learning_rate },
            OptimizerKind::Rprop {
                eta_plus,
                eta_minus,
                delta0,
                delta_min,
                delta_max,
            } => Optimizer::Rprop(Rprop {
                eta_plus,
                eta_minus,
                delta_min,
                delta_max,
                steps: vec![delta0; params],
                previous: vec![0.0; params],
            }),
        })
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        match self {
            Optimizer::Gd { learning_rate } => {
                for (w, g) in net.params_mut().zip(grads.values()) {
                    *w -= *learning_rate * g;
                }
            }
            Optimizer::Rprop(r) => r.step(net, grads),
        }
    }
}

/// iRprop⁻: per-parameter steps grow by η⁺ while the gradient keeps its
/// sign; on a sign change the step shrinks by η⁻ and that parameter is left
/// alone for the iteration.
#[derive(Clone, Debug)]
pub struct Rprop {
    eta_plus: f64,
    eta_minus: f64,
    delta_min: f64,
    delta_max: f64,
    steps: Vec<f64>,
    previous: Vec<f64>,
}

impl Rprop {
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients) {
        let state = self.steps.iter_mut().zip(self.previous.iter_mut());
        for ((w, g), (delta, prev)) in net.params_mut().zip(grads.values()).zip(state) {
            let trend = g * *prev;
            if trend > 0.0 {
                *delta = (*delta * self.eta_plus).min(self.delta_max);
            } else if trend < 0.0 {
                *delta = (*delta * self.eta_minus).max(self.delta_min);
                *prev = 0.0;
                continue;
            }
            if g > 0.0 {
                *w -= *delta;
            } else if g < 0.0 {
                *w += *delta;
            }
            *prev = g;
        }
    }
}
