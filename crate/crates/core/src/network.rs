//! Feedforward network container.
//!
//! Layer 0 is the input. Hidden layer `n` (1-based) holds pre-activations
//! `z_n = W_n · σ(z_{n−1} + t_{n−1})`, except `z_1 = W_1 · A`, which sees the
//! raw input. The output layer is linear: no activation, and by default no
//! threshold.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use crate::activation::{derivative_table, Activation, MAX_ACTIVATION_ORDER};
use crate::error::{check_dim, Error, Result};

const MAGIC: &[u8; 4] = b"DPNN";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    shape: Vec<usize>,
    activations: Vec<Activation>,
    /// `weights[n]` maps layer `n` to layer `n + 1`; shape `(width_{n+1}, width_n)`.
    weights: Vec<Array2<f64>>,
    /// One vector per hidden layer, added inside the activation argument.
    thresholds: Vec<Array1<f64>>,
    output_bias: Option<Array1<f64>>,
    seed: Option<u64>,
}

impl Network {
    /// Glorot-uniform weights, zero thresholds, deterministic in `seed`.
    ///
    /// `shape` lists the layer widths from input to output and needs at least
    /// one hidden layer.
    pub fn new(shape: &[usize], activation: Activation, seed: u64) -> Result<Network> {
        validate_shape(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = shape
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..=limit))
            })
            .collect();
        Ok(Network {
            shape: shape.to_vec(),
            activations: vec![activation; shape.len() - 2],
            weights,
            thresholds: shape[1..shape.len() - 1]
                .iter()
                .map(|&n| Array1::zeros(n))
                .collect(),
            output_bias: None,
            seed: Some(seed),
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(
        activations: Vec<Activation>,
        weights: Vec<Array2<f64>>,
        thresholds: Vec<Array1<f64>>,
        output_bias: Option<Array1<f64>>,
    ) -> Result<Network> {
        let first = weights
            .first()
            .ok_or_else(|| Error::Config("network needs at least one weight matrix".into()))?;
        let mut shape = vec![first.ncols()];
        for w in &weights {
            check_dim(*shape.last().unwrap(), w.ncols())?;
            shape.push(w.nrows());
        }
        validate_shape(&shape)?;
        check_dim(shape.len() - 2, activations.len())?;
        check_dim(shape.len() - 2, thresholds.len())?;
        for (t, &n) in thresholds.iter().zip(&shape[1..]) {
            check_dim(n, t.len())?;
        }
        if let Some(b) = &output_bias {
            check_dim(*shape.last().unwrap(), b.len())?;
        }
        let net = Network {
            shape,
            activations,
            weights,
            thresholds,
            output_bias,
            seed: None,
        };
        if !net.params().all(f64::is_finite) {
            return Err(Error::Config("network parameters must be finite".into()));
        }
        Ok(net)
    }

    /// Adds a zero-initialized threshold on the linear output layer.
    pub fn with_output_bias(mut self) -> Network {
        self.output_bias = Some(Array1::zeros(self.output_dim()));
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.shape.len() - 2
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn thresholds(&self) -> &[Array1<f64>] {
        &self.thresholds
    }

    pub fn thresholds_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.thresholds
    }

    pub fn output_bias(&self) -> Option<&Array1<f64>> {
        self.output_bias.as_ref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Parameters in canonical order: weight matrices (row-major, input side
    /// first), then hidden thresholds, then the output bias if present.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .chain(self.thresholds.iter().flat_map(|t| t.iter().copied()))
            .chain(self.output_bias.iter().flat_map(|b| b.iter().copied()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(self.thresholds.iter_mut().flat_map(|t| t.iter_mut()))
            .chain(self.output_bias.iter_mut().flat_map(|b| b.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Array2::len).sum::<usize>()
            + self.thresholds.iter().map(Array1::len).sum::<usize>()
            + self.output_bias.as_ref().map_or(0, Array1::len)
    }

    /// Plain evaluation of the network at one input point.
    pub fn forward_plain(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), input.len())?;
        let affine = |w: &Array2<f64>, x: &[f64]| -> Vec<f64> {
            w.rows()
                .into_iter()
                .map(|row| row.iter().zip(x).fold(0.0, |acc, (w, x)| acc + w * x))
                .collect()
        };
        let mut z = affine(&self.weights[0], input);
        for n in 0..self.depth() {
            let act = self.activations[n];
            let h: Vec<f64> = z
                .iter()
                .zip(&self.thresholds[n])
                .map(|(z, t)| act.apply(z + t))
                .collect();
            z = affine(&self.weights[n + 1], &h);
        }
        if let Some(b) = &self.output_bias {
            z.iter_mut().zip(b).for_each(|(z, b)| *z += b);
        }
        Ok(z)
    }

    /// Serializes to the versioned little-endian binary model format.
    pub fn save(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &w in &self.shape {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        out.extend(self.activations.iter().map(|a| a.code()));
        match self.seed {
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.to_le_bytes());
            }
            None => {
                out.push(0);
                out.extend_from_slice(&0u64.to_le_bytes());
            }
        }
        out.push(self.output_bias.is_some() as u8);
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Network> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {version}"
            )));
        }
        let layers = r.u32()? as usize;
        if !(3..=1024).contains(&layers) {
            return Err(Error::Format(format!("implausible layer count {layers}")));
        }
        let shape = (0..layers)
            .map(|_| r.u64().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        validate_shape(&shape).map_err(|e| Error::Format(e.to_string()))?;
        let activations = r
            .take(layers - 2)?
            .iter()
            .map(|&c| {
                Activation::from_code(c)
                    .ok_or_else(|| Error::Format(format!("unknown activation code {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let has_seed = r.u8()?;
        let seed = r.u64()?;
        let has_bias = r.u8()?;
        if has_seed > 1 || has_bias > 1 {
            return Err(Error::Format("corrupt flag byte".into()));
        }
        let count = r.u64()? as usize;

        let mut net = Network {
            weights: shape
                .windows(2)
                .map(|w| Array2::zeros((w[1], w[0])))
                .collect(),
            thresholds: shape[1..layers - 1]
                .iter()
                .map(|&n| Array1::zeros(n))
                .collect(),
            output_bias: (has_bias == 1).then(|| Array1::zeros(shape[layers - 1])),
            activations,
            shape,
            seed: (has_seed == 1).then_some(seed),
        };
        if count != net.param_count() {
            return Err(Error::Format(format!(
                "parameter count {count} does not match shape ({})",
                net.param_count()
            )));
        }
        if r.bytes.len() - r.pos != 8 * count {
            return Err(Error::Format(format!(
                "expected {} parameter bytes, found {}",
                8 * count,
                r.bytes.len() - r.pos
            )));
        }
        for p in net.params_mut() {
            *p = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
        Ok(net)
    }

    /// JSON sidecar describing the model file.
    pub fn metadata(&self, config_digest: Option<&str>) -> ModelMetadata {
        ModelMetadata {
            format_version: FORMAT_VERSION,
            shape: self.shape.clone(),
            activations: self.activations.iter().map(ToString::to_string).collect(),
            output_bias: self.output_bias.is_some(),
            seed: self.seed,
            parameters: self.param_count(),
            config_digest: config_digest.map(str::to_owned),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelMetadata {
    pub format_version: u32,
    pub shape: Vec<usize>,
    pub activations: Vec<String>,
    pub output_bias: bool,
    pub seed: Option<u64>,
    pub parameters: usize,
    pub config_digest: Option<String>,
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 3 {
        return Err(Error::Config(format!(
            "shape {shape:?} needs input, at least one hidden layer, and output"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::Config(format!(
            "shape {shape:?} has a zero-width layer"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("model file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
