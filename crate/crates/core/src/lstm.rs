//! LSTM benchmark network: stacked gated-memory layers with a dense scalar
//! head, sharing the scalar abstraction, trainer, and metrics stack with the
//! mass-conserving networks.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Forcing;
use crate::real::Real;

/// Architecture of a stacked LSTM: input feature count and hidden width per
/// layer. Layer k > 1 consumes layer k−1's hidden sequence; the dense head
/// reads the final layer only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl LstmSpec {
    /// Single-layer network on (precipitation, PET) features.
    pub fn single(hidden: usize) -> LstmSpec {
        LstmSpec {
            input_dim: 2,
            hidden: vec![hidden],
        }
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        if self.input_dim == 0 {
            return Err(LstmError::BadSpec("input_dim must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&n| n == 0) {
            return Err(LstmError::BadSpec(
                "hidden must list at least one positive width".into(),
            ));
        }
        Ok(())
    }

    /// Input dimension seen by each layer.
    fn layer_inputs(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len());
        let mut d = self.input_dim;
        for &n in &self.hidden {
            dims.push(d);
            d = n;
        }
        dims
    }
}

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("invalid architecture: {0}")]
    BadSpec(String),
    #[error("parameter vector has {found} entries, architecture needs {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("feature row {row} has {found} values, architecture needs {expected}")]
    FeatureWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("simulation produced a non-finite value at timestep {timestep}")]
    NonFinite { timestep: usize },
}

/// Gate order used everywhere: input, forget, cell-candidate, output.
pub const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

/// One gate's affine map: input weights (n×d, row-major), recurrent weights
/// (n×n, row-major), bias (n).
#[derive(Clone, Debug)]
pub struct GateParams<R> {
    pub input_w: Vec<R>,
    pub recur_w: Vec<R>,
    pub bias: Vec<R>,
}

#[derive(Clone, Debug)]
pub struct LayerParams<R> {
    pub gates: [GateParams<R>; 4],
}

#[derive(Clone, Debug)]
pub struct LstmParams<R> {
    pub layers: Vec<LayerParams<R>>,
    pub head_w: Vec<R>,
    pub head_bias: R,
}

/// Trainable parameter count: 4·n·(d + n + 1) per layer plus the (n+1)-sized
/// dense head on the last layer.
pub fn count_parameters(spec: &LstmSpec) -> usize {
    let dims = spec.layer_inputs();
    let gates: usize = spec
        .hidden
        .iter()
        .zip(&dims)
        .map(|(&n, &d)| 4 * n * (d + n + 1))
        .sum();
    gates + spec.hidden.last().unwrap() + 1
}

/// Named parameter blocks in flat-vector order, as (key, length) pairs.
/// Layers are 1-based in keys; gate fields follow [`GATE_NAMES`] order.
pub fn block_names(spec: &LstmSpec) -> Vec<(String, usize)> {
    let dims = spec.layer_inputs();
    let mut blocks = Vec::new();
    for (k, (&n, &d)) in spec.hidden.iter().zip(&dims).enumerate() {
        for gate in GATE_NAMES {
            blocks.push((format!("{}/{}/input_w", k + 1, gate), n * d));
            blocks.push((format!("{}/{}/recur_w", k + 1, gate), n * n));
            blocks.push((format!("{}/{}/bias", k + 1, gate), n));
        }
    }
    blocks.push(("head/w".into(), *spec.hidden.last().unwrap()));
    blocks.push(("head/bias".into(), 1));
    blocks
}

/// Reads a flat parameter vector in [`block_names`] order.
pub fn unpack<R: Real>(spec: &LstmSpec, flat: &[R]) -> Result<LstmParams<R>, LstmError> {
    spec.validate()?;
    let expected = count_parameters(spec);
    if flat.len() != expected {
        return Err(LstmError::ShapeMismatch {
            expected,
            found: flat.len(),
        });
    }
    let dims = spec.layer_inputs();
    let mut pos = 0;
    let mut take = |len: usize| {
        let slice = flat[pos..pos + len].to_vec();
        pos += len;
        slice
    };
    let mut layers = Vec::with_capacity(spec.hidden.len());
    for (&n, &d) in spec.hidden.iter().zip(&dims) {
        let mut gates = Vec::with_capacity(4);
        for _ in 0..4 {
            gates.push(GateParams {
                input_w: take(n * d),
                recur_w: take(n * n),
                bias: take(n),
            });
        }
        layers.push(LayerParams {
            gates: match gates.try_into() {
                Ok(four) => four,
                Err(_) => unreachable!("exactly four gates"),
            },
        });
    }
    let head_w = take(*spec.hidden.last().unwrap());
    let head_bias = take(1)[0];
    Ok(LstmParams {
        layers,
        head_w,
        head_bias,
    })
}

/// Inverse of [`unpack`]; value-exact.
pub fn pack(spec: &LstmSpec, params: &LstmParams<f64>) -> Vec<f64> {
    let mut flat = Vec::with_capacity(count_parameters(spec));
    for layer in &params.layers {
        for gate in &layer.gates {
            flat.extend_from_slice(&gate.input_w);
            flat.extend_from_slice(&gate.recur_w);
            flat.extend_from_slice(&gate.bias);
        }
    }
    flat.extend_from_slice(&params.head_w);
    flat.push(params.head_bias);
    debug_assert_eq!(flat.len(), count_parameters(spec));
    flat
}

/// Default initialization: every parameter uniform in [−1/√n, 1/√n] with n
/// the owning layer's hidden width (the head uses the last layer's width).
pub fn init_params(spec: &LstmSpec, rng: &mut impl Rng) -> Vec<f64> {
    let dims = spec.layer_inputs();
    let mut flat = Vec::with_capacity(count_parameters(spec));
    for (&n, &d) in spec.hidden.iter().zip(&dims) {
        let s = 1.0 / (n as f64).sqrt();
        for _ in 0..4 * n * (d + n + 1) {
            flat.push(rng.random_range(-s..s));
        }
    }
    let s = 1.0 / (*spec.hidden.last().unwrap() as f64).sqrt();
    for _ in 0..spec.hidden.last().unwrap() + 1 {
        flat.push(rng.random_range(-s..s));
    }
    flat
}

/// The memory-cell recursion shared with mass-conserving nodes: new cell =
/// forget·cell + input·candidate.
pub fn cell_update<R: Real>(f: R, c: R, i: R, g: R) -> R {
    f * c + i * g
}

/// (precipitation, PET) feature rows for driving the network from forcing.
pub fn features_from_forcing(forcing: &Forcing) -> Vec<Vec<f64>> {
    forcing
        .precip
        .iter()
        .zip(&forcing.pet)
        .map(|(&p, &e)| vec![p, e])
        .collect()
}

struct LayerScratch<R> {
    c: Vec<R>,
    h: Vec<R>,
    new_c: Vec<R>,
    new_h: Vec<R>,
}

fn forward_impl<R: Real, F: FnMut(usize, &[LayerScratch<R>])>(
    spec: &LstmSpec,
    params: &LstmParams<R>,
    features: &[Vec<f64>],
    mut record: F,
) -> Result<Vec<R>, LstmError> {
    spec.validate()?;
    for (row, x) in features.iter().enumerate() {
        if x.len() != spec.input_dim {
            return Err(LstmError::FeatureWidth {
                row,
                expected: spec.input_dim,
                found: x.len(),
            });
        }
    }
    let zero = params.head_bias.constant(0.0);
    let mut layers: Vec<LayerScratch<R>> = spec
        .hidden
        .iter()
        .map(|&n| LayerScratch {
            c: vec![zero; n],
            h: vec![zero; n],
            new_c: vec![zero; n],
            new_h: vec![zero; n],
        })
        .collect();
    let dims = spec.layer_inputs();
    let mut y_series = Vec::with_capacity(features.len());

    for (t, x) in features.iter().enumerate() {
        for l in 0..layers.len() {
            let n = spec.hidden[l];
            let d = dims[l];
            for j in 0..n {
                let mut pre = [zero; 4];
                for (g, gate) in params.layers[l].gates.iter().enumerate() {
                    let mut acc = gate.bias[j];
                    if l == 0 {
                        for (k, &xv) in x.iter().enumerate() {
                            acc = acc + gate.input_w[j * d + k].mul_c(xv);
                        }
                    } else {
                        // Split borrow: layer l reads layer l−1's hidden.
                        let (prev, _) = layers.split_at(l);
                        for (k, &hv) in prev[l - 1].h.iter().enumerate() {
                            acc = acc + gate.input_w[j * d + k] * hv;
                        }
                    }
                    for (k, &hv) in layers[l].h.iter().enumerate() {
                        acc = acc + gate.recur_w[j * n + k] * hv;
                    }
                    pre[g] = acc;
                }
                let i_gate = pre[0].sigmoid();
                let f_gate = pre[1].sigmoid();
                let g_cand = pre[2].tanh();
                let o_gate = pre[3].sigmoid();
                let c_new = cell_update(f_gate, layers[l].c[j], i_gate, g_cand);
                layers[l].new_c[j] = c_new;
                layers[l].new_h[j] = o_gate * c_new.tanh();
            }
            let layer = &mut layers[l];
            std::mem::swap(&mut layer.c, &mut layer.new_c);
            std::mem::swap(&mut layer.h, &mut layer.new_h);
        }
        let mut y = params.head_bias;
        for (k, &hv) in layers.last().unwrap().h.iter().enumerate() {
            y = y + params.head_w[k] * hv;
        }
        for layer in &layers {
            if layer.c.iter().any(|c| !c.value().is_finite()) {
                return Err(LstmError::NonFinite { timestep: t });
            }
        }
        if !y.value().is_finite() {
            return Err(LstmError::NonFinite { timestep: t });
        }
        record(t, &layers);
        y_series.push(y);
    }
    Ok(y_series)
}

/// Runs the network over a feature sequence and returns the scalar output
/// series. Cell and hidden states start at zero.
pub fn forward<R: Real>(
    spec: &LstmSpec,
    params: &LstmParams<R>,
    features: &[Vec<f64>],
) -> Result<Vec<R>, LstmError> {
    forward_impl(spec, params, features, |_, _| {})
}

/// Full state trajectory for interpretability exports: per timestep, per
/// layer, per unit cell and hidden values.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    pub y: Vec<f64>,
    /// cells[t][layer][unit]
    pub cells: Vec<Vec<Vec<f64>>>,
    pub hidden: Vec<Vec<Vec<f64>>>,
}

pub fn trace(
    spec: &LstmSpec,
    params: &LstmParams<f64>,
    features: &[Vec<f64>],
) -> Result<LstmTrace, LstmError> {
    let mut cells = Vec::with_capacity(features.len());
    let mut hidden = Vec::with_capacity(features.len());
    let y = forward_impl(spec, params, features, |_, layers| {
        cells.push(layers.iter().map(|l| l.c.clone()).collect());
        hidden.push(layers.iter().map(|l| l.h.clone()).collect());
    })?;
    Ok(LstmTrace { y, cells, hidden })
}
