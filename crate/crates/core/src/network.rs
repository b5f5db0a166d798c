//! Networks of mass-conserving nodes: input/output mixing variants, state
//! sharing across gates, multi-layer routing, simulation, parameter
//! bookkeeping, and interpretability exports.
//!
//! Mixing variants differ only in how catchment input is distributed onto
//! first-layer nodes and how node outputs aggregate to streamflow:
//!
//! * `Di`  - input weights on the simplex (softmax), output weights 1
//! * `Ds`  - input weights 1, output weights on the simplex (softmax)
//! * `Dir` - input weights positive (exp) without the sum constraint, output 1
//! * `Dsr` - input weights 1, output weights positive (exp) unconstrained
//! * `Mlb` - unconstrained input and output weights with biases; negative
//!   node inputs are clamped to 0, aggregated streamflow may go negative
//!
//! In multi-layer networks every node of layer `l > 1` receives the
//! unweighted sum of all layer `l-1` outputs. All states advance
//! simultaneously: gates across every layer read time-`t` states before any
//! update is applied.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{water_year, Forcing};
use crate::node::{
    compute_gates, gate_scales, node_step, GateScales, GateValues, NodeFluxes, NodeParams, Sharing,
};
use crate::real::Real;

/// Output-gate level above which a node is considered activated in gate-curve
/// exports.
pub const ACTIVATION_LEVEL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetworkType {
    #[serde(rename = "di")]
    Di,
    #[serde(rename = "ds")]
    Ds,
    #[serde(rename = "dir")]
    Dir,
    #[serde(rename = "dsr")]
    Dsr,
    #[serde(rename = "mlb")]
    Mlb,
}

impl NetworkType {
    pub const ALL: [NetworkType; 5] = [
        NetworkType::Di,
        NetworkType::Ds,
        NetworkType::Dir,
        NetworkType::Dsr,
        NetworkType::Mlb,
    ];
}

/// Architecture of a network; the trainable parameter set is fully determined
/// by this description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub ntype: NetworkType,
    pub sharing: Sharing,
    /// Nodes per layer, input side first. One to three layers.
    pub layer_sizes: Vec<usize>,
    /// Whether `Mlb` input mixing carries per-node input biases. Ignored for
    /// the other variants.
    #[serde(default = "default_true")]
    pub mlb_input_bias_enabled: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid network spec: {0}")]
    BadSpec(String),
    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("coefficient frozen by sharing mode {sharing:?} is nonzero at layer {layer}, node {node}")]
    FrozenNonzero {
        sharing: Sharing,
        layer: usize,
        node: usize,
    },
    #[error("forcing length mismatch: {precip} precipitation vs {pet} pet values")]
    ForcingMismatch { precip: usize, pet: usize },
    #[error("non-finite value at timestep {timestep}: {what}")]
    NonFinite { timestep: usize, what: String },
    #[error("{0}")]
    BadOptions(String),
}

impl NetworkSpec {
    pub fn new(ntype: NetworkType, sharing: Sharing, layer_sizes: Vec<usize>) -> Self {
        NetworkSpec {
            ntype,
            sharing,
            layer_sizes,
            mlb_input_bias_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.layer_sizes.is_empty() || self.layer_sizes.len() > 3 {
            return Err(SimError::BadSpec(format!(
                "expected 1 to 3 layers, got {}",
                self.layer_sizes.len()
            )));
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(SimError::BadSpec("every layer needs at least one node".into()));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn first_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn final_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn has_input_logits(&self) -> bool {
        match self.ntype {
            NetworkType::Di => self.first_width() > 1,
            NetworkType::Dir | NetworkType::Mlb => true,
            NetworkType::Ds | NetworkType::Dsr => false,
        }
    }

    fn has_input_biases(&self) -> bool {
        self.ntype == NetworkType::Mlb && self.mlb_input_bias_enabled
    }

    fn has_output_logits(&self) -> bool {
        match self.ntype {
            NetworkType::Ds => self.final_width() > 1,
            NetworkType::Dsr | NetworkType::Mlb => true,
            NetworkType::Di | NetworkType::Dir => false,
        }
    }

    fn has_output_bias(&self) -> bool {
        self.ntype == NetworkType::Mlb
    }
}

/// Input/output mixing parameters. All arrays are kept at full length for
/// every variant; entries a variant does not use are frozen at 0 and excluded
/// from the trainable layout.
#[derive(Clone, Debug)]
pub struct MixingParams<R> {
    pub in_logits: Vec<R>,
    pub in_biases: Vec<R>,
    pub out_logits: Vec<R>,
    pub out_bias: R,
}

/// Full parameter set of a network.
#[derive(Clone, Debug)]
pub struct NetworkParams<R> {
    pub layers: Vec<Vec<NodeParams<R>>>,
    pub mixing: MixingParams<R>,
}

impl<R: Real> NetworkParams<R> {
    /// Structure filled with a single value everywhere.
    pub fn filled(spec: &NetworkSpec, value: R) -> Self {
        let layers = spec
            .layer_sizes
            .iter()
            .map(|&width| {
                (0..width)
                    .map(|_| NodeParams {
                        out_bias: value,
                        out_state_coef: vec![value; width],
                        loss_bias: value,
                        loss_pet_coef: value,
                        loss_state_coef: vec![value; width],
                        logit_out: value,
                        logit_loss: value,
                        logit_rem: value,
                    })
                    .collect()
            })
            .collect();
        NetworkParams {
            layers,
            mixing: MixingParams {
                in_logits: vec![value; spec.first_width()],
                in_biases: vec![value; spec.first_width()],
                out_logits: vec![value; spec.final_width()],
                out_bias: value,
            },
        }
    }
}

impl NetworkParams<f64> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        NetworkParams::filled(spec, 0.0)
    }
}

// ── trainable parameter layout ──

/// One trainable slot in the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Node {
        layer: usize,
        node: usize,
        field: NodeField,
    },
    Mixing(MixField),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeField {
    OutBias,
    OutStateCoef(usize),
    LossBias,
    LossPetCoef,
    LossStateCoef(usize),
    LogitOut,
    LogitLoss,
    LogitRem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixField {
    InLogit(usize),
    InBias(usize),
    OutLogit(usize),
    OutBias,
}

/// Ordered list of trainable slots. The order defines the flat vector used by
/// the trainer and gradient checks.
pub fn parameter_layout(spec: &NetworkSpec) -> Vec<Slot> {
    let mut slots = Vec::new();
    for (layer, &width) in spec.layer_sizes.iter().enumerate() {
        for node in 0..width {
            let mut push = |field: NodeField| slots.push(Slot::Node { layer, node, field });
            push(NodeField::OutBias);
            if spec.sharing.output_gate_shared() {
                for j in 0..width {
                    push(NodeField::OutStateCoef(j));
                }
            } else {
                push(NodeField::OutStateCoef(node));
            }
            push(NodeField::LossBias);
            push(NodeField::LossPetCoef);
            if spec.sharing.loss_gate_shared() {
                for j in 0..width {
                    push(NodeField::LossStateCoef(j));
                }
            } else {
                push(NodeField::LossStateCoef(node));
            }
            push(NodeField::LogitOut);
            push(NodeField::LogitLoss);
            push(NodeField::LogitRem);
        }
    }
    if spec.has_input_logits() {
        for j in 0..spec.first_width() {
            slots.push(Slot::Mixing(MixField::InLogit(j)));
        }
    }
    if spec.has_input_biases() {
        for j in 0..spec.first_width() {
            slots.push(Slot::Mixing(MixField::InBias(j)));
        }
    }
    if spec.has_output_logits() {
        for k in 0..spec.final_width() {
            slots.push(Slot::Mixing(MixField::OutLogit(k)));
        }
    }
    if spec.has_output_bias() {
        slots.push(Slot::Mixing(MixField::OutBias));
    }
    slots
}

/// Number of trainable parameters of the architecture.
pub fn count_parameters(spec: &NetworkSpec) -> usize {
    parameter_layout(spec).len()
}

fn slot_ref<'a, R>(params: &'a mut NetworkParams<R>, slot: &Slot) -> &'a mut R {
    match *slot {
        Slot::Node { layer, node, field } => {
            let p = &mut params.layers[layer][node];
            match field {
                NodeField::OutBias => &mut p.out_bias,
                NodeField::OutStateCoef(j) => &mut p.out_state_coef[j],
                NodeField::LossBias => &mut p.loss_bias,
                NodeField::LossPetCoef => &mut p.loss_pet_coef,
                NodeField::LossStateCoef(j) => &mut p.loss_state_coef[j],
                NodeField::LogitOut => &mut p.logit_out,
                NodeField::LogitLoss => &mut p.logit_loss,
                NodeField::LogitRem => &mut p.logit_rem,
            }
        }
        Slot::Mixing(field) => match field {
            MixField::InLogit(j) => &mut params.mixing.in_logits[j],
            MixField::InBias(j) => &mut params.mixing.in_biases[j],
            MixField::OutLogit(k) => &mut params.mixing.out_logits[k],
            MixField::OutBias => &mut params.mixing.out_bias,
        },
    }
}

/// Expands a flat trainable vector into full structured parameters; frozen
/// entries become 0.
pub fn unpack<R: Real>(spec: &NetworkSpec, flat: &[R]) -> Result<NetworkParams<R>, SimError> {
    let layout = parameter_layout(spec);
    if flat.len() != layout.len() {
        return Err(SimError::ShapeMismatch(format!(
            "expected {} trainable values, got {}",
            layout.len(),
            flat.len()
        )));
    }
    let zero = flat[0].constant(0.0);
    let mut params = NetworkParams::filled(spec, zero);
    for (slot, &v) in layout.iter().zip(flat) {
        *slot_ref(&mut params, slot) = v;
    }
    Ok(params)
}

/// Collapses structured parameters to the flat trainable vector.
pub fn pack(spec: &NetworkSpec, params: &NetworkParams<f64>) -> Result<Vec<f64>, SimError> {
    validate_params(spec, params)?;
    let mut params = params.clone();
    Ok(parameter_layout(spec)
        .iter()
        .map(|slot| *slot_ref(&mut params, slot))
        .collect())
}

/// Checks array shapes against the spec and that every entry frozen by the
/// sharing mode or mixing variant is exactly 0.
pub fn validate_params<R: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<R>,
) -> Result<(), SimError> {
    spec.validate()?;
    if params.layers.len() != spec.n_layers() {
        return Err(SimError::ShapeMismatch(format!(
            "expected {} layers, got {}",
            spec.n_layers(),
            params.layers.len()
        )));
    }
    for (layer, (&width, nodes)) in spec.layer_sizes.iter().zip(&params.layers).enumerate() {
        if nodes.len() != width {
            return Err(SimError::ShapeMismatch(format!(
                "layer {layer}: expected {width} nodes, got {}",
                nodes.len()
            )));
        }
        for (node, p) in nodes.iter().enumerate() {
            if p.out_state_coef.len() != width || p.loss_state_coef.len() != width {
                return Err(SimError::ShapeMismatch(format!(
                    "layer {layer}, node {node}: coefficient vectors must have length {width}"
                )));
            }
            for j in 0..width {
                if j == node {
                    continue;
                }
                let out_frozen = !spec.sharing.output_gate_shared()
                    && p.out_state_coef[j].value() != 0.0;
                let loss_frozen = !spec.sharing.loss_gate_shared()
                    && p.loss_state_coef[j].value() != 0.0;
                if out_frozen || loss_frozen {
                    return Err(SimError::FrozenNonzero {
                        sharing: spec.sharing,
                        layer,
                        node,
                    });
                }
            }
        }
    }
    let mix = &params.mixing;
    if mix.in_logits.len() != spec.first_width()
        || mix.in_biases.len() != spec.first_width()
        || mix.out_logits.len() != spec.final_width()
    {
        return Err(SimError::ShapeMismatch("mixing arrays".into()));
    }
    if !spec.has_input_biases() && mix.in_biases.iter().any(|b| b.value() != 0.0) {
        return Err(SimError::ShapeMismatch(
            "input biases must be 0 for this variant".into(),
        ));
    }
    if !spec.has_output_bias() && mix.out_bias.value() != 0.0 {
        return Err(SimError::ShapeMismatch(
            "output bias must be 0 for this variant".into(),
        ));
    }
    Ok(())
}

// ── weight realization ──

fn softmax<R: Real>(xs: &[R]) -> Vec<R> {
    let mut m = xs[0];
    for &x in &xs[1..] {
        m = m.max(x);
    }
    let exps: Vec<R> = xs.iter().map(|&x| (x - m).exp()).collect();
    let mut total = exps[0];
    for &e in &exps[1..] {
        total = total + e;
    }
    exps.iter().map(|&e| e / total).collect()
}

/// Realized input weights from the mixing parameters.
pub fn realized_input_weights<R: Real>(spec: &NetworkSpec, mix: &MixingParams<R>) -> Vec<R> {
    let anchor = mix.out_bias;
    match spec.ntype {
        NetworkType::Di => softmax(&mix.in_logits),
        NetworkType::Ds | NetworkType::Dsr => vec![anchor.constant(1.0); spec.first_width()],
        NetworkType::Dir => mix.in_logits.iter().map(|&l| l.exp()).collect(),
        NetworkType::Mlb => mix.in_logits.clone(),
    }
}

/// Realized output weights from the mixing parameters.
pub fn realized_output_weights<R: Real>(spec: &NetworkSpec, mix: &MixingParams<R>) -> Vec<R> {
    let anchor = mix.out_bias;
    match spec.ntype {
        NetworkType::Di | NetworkType::Dir => vec![anchor.constant(1.0); spec.final_width()],
        NetworkType::Ds => softmax(&mix.out_logits),
        NetworkType::Dsr => mix.out_logits.iter().map(|&l| l.exp()).collect(),
        NetworkType::Mlb => mix.out_logits.clone(),
    }
}

// ── simulation ──

/// Forward-run controls. The masks exist for the pruning harness: a `false`
/// entry silences a final-layer node's realized output weight or its input.
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Initial states per layer; zeros when absent.
    pub initial_states: Option<Vec<Vec<f64>>>,
    /// Final-layer output-weight mask; `false` forces the realized weight to 0
    /// without renormalizing the survivors.
    pub final_out_mask: Option<Vec<bool>>,
    /// With `final_out_mask`, rescale surviving realized output weights by the
    /// survivor sum. Off by default.
    pub renormalize_survivors: bool,
    /// Final-layer input mask; `false` forces the node's input to 0.
    pub final_input_mask: Option<Vec<bool>>,
}

/// Observer of per-step simulation internals; see [`simulate_trace`].
pub trait StepSink<R: Real> {
    fn record(
        &mut self,
        t: usize,
        states: &[Vec<R>],
        gates: &[Vec<GateValues<R>>],
        fluxes: &[Vec<NodeFluxes<R>>],
        q: R,
    );
}

/// Sink that discards everything; used for plain streamflow simulation.
pub struct NoSink;

impl<R: Real> StepSink<R> for NoSink {
    fn record(
        &mut self,
        _t: usize,
        _states: &[Vec<R>],
        _gates: &[Vec<GateValues<R>>],
        _fluxes: &[Vec<NodeFluxes<R>>],
        _q: R,
    ) {
    }
}

/// Everything a forward run produces besides per-step internals.
pub struct ForwardOutput<R> {
    pub q: Vec<R>,
    /// States after the last step, per layer.
    pub final_states: Vec<Vec<R>>,
    /// Realized final-layer output weights after any pruning mask.
    pub out_weights: Vec<R>,
}

/// Simulates the network over the forcing and returns the streamflow series.
/// All layers advance from time-`t` states simultaneously. Aborts with the
/// offending timestep as soon as any state or output turns non-finite.
pub fn forward<R: Real, S: StepSink<R>>(
    spec: &NetworkSpec,
    params: &NetworkParams<R>,
    forcing: &Forcing,
    options: &ForwardOptions,
    sink: &mut S,
) -> Result<ForwardOutput<R>, SimError> {
    validate_params(spec, params)?;
    if forcing.precip.len() != forcing.pet.len() {
        return Err(SimError::ForcingMismatch {
            precip: forcing.precip.len(),
            pet: forcing.pet.len(),
        });
    }
    let n_layers = spec.n_layers();
    let final_layer = n_layers - 1;
    let final_width = spec.final_width();
    let zero = params.mixing.out_bias.constant(0.0);

    if let Some(mask) = &options.final_out_mask {
        if mask.len() != final_width {
            return Err(SimError::BadOptions("output mask length".into()));
        }
    }
    if let Some(mask) = &options.final_input_mask {
        if mask.len() != final_width {
            return Err(SimError::BadOptions("input mask length".into()));
        }
    }

    let in_weights = realized_input_weights(spec, &params.mixing);
    let mut out_weights = realized_output_weights(spec, &params.mixing);
    if let Some(mask) = &options.final_out_mask {
        if options.renormalize_survivors {
            let mut survivor_sum = zero;
            for (k, &keep) in mask.iter().enumerate() {
                if keep {
                    survivor_sum = survivor_sum + out_weights[k];
                }
            }
            for (k, &keep) in mask.iter().enumerate() {
                out_weights[k] = if keep { out_weights[k] / survivor_sum } else { zero };
            }
        } else {
            for (k, &keep) in mask.iter().enumerate() {
                if !keep {
                    out_weights[k] = zero;
                }
            }
        }
    }

    let scales: Vec<Vec<GateScales<R>>> = params
        .layers
        .iter()
        .map(|nodes| nodes.iter().map(gate_scales).collect())
        .collect();

    let mut states: Vec<Vec<R>> = match &options.initial_states {
        Some(init) => {
            if init.len() != n_layers
                || init.iter().zip(&spec.layer_sizes).any(|(s, &w)| s.len() != w)
            {
                return Err(SimError::BadOptions("initial state shape".into()));
            }
            init.iter()
                .map(|layer| layer.iter().map(|&x| zero.constant(x)).collect())
                .collect()
        }
        None => spec.layer_sizes.iter().map(|&w| vec![zero; w]).collect(),
    };

    let steps = forcing.precip.len();
    let mut q_series = Vec::with_capacity(steps);
    let mut next_states: Vec<Vec<R>> = states.clone();
    let mut gates_buf: Vec<Vec<GateValues<R>>> = Vec::with_capacity(n_layers);
    let mut fluxes_buf: Vec<Vec<NodeFluxes<R>>> = Vec::with_capacity(n_layers);

    for t in 0..steps {
        let u = forcing.precip[t];
        let pet = forcing.pet[t];
        gates_buf.clear();
        fluxes_buf.clear();

        let mut prev_output_sum = zero;
        for layer in 0..n_layers {
            let width = spec.layer_sizes[layer];
            let mut layer_gates = Vec::with_capacity(width);
            let mut layer_fluxes = Vec::with_capacity(width);
            let mut output_sum = zero;
            for node in 0..width {
                let mut input = if layer == 0 {
                    let w = in_weights[node];
                    match spec.ntype {
                        NetworkType::Mlb => {
                            let raw = if spec.mlb_input_bias_enabled {
                                w.mul_c(u) + params.mixing.in_biases[node]
                            } else {
                                w.mul_c(u)
                            };
                            raw.relu()
                        }
                        _ => w.mul_c(u),
                    }
                } else {
                    prev_output_sum
                };
                if layer == final_layer {
                    if let Some(mask) = &options.final_input_mask {
                        if !mask[node] {
                            input = zero;
                        }
                    }
                }
                let (next, fluxes, gates) = node_step(
                    &params.layers[layer][node],
                    &scales[layer][node],
                    node,
                    &states[layer],
                    input,
                    pet,
                    spec.sharing,
                );
                next_states[layer][node] = next;
                output_sum = output_sum + fluxes.output;
                layer_gates.push(gates);
                layer_fluxes.push(fluxes);
            }
            prev_output_sum = output_sum;
            gates_buf.push(layer_gates);
            fluxes_buf.push(layer_fluxes);
        }

        let mut q = out_weights[0] * fluxes_buf[final_layer][0].output;
        for (k, f) in fluxes_buf[final_layer].iter().enumerate().skip(1) {
            q = q + out_weights[k] * f.output;
        }
        if spec.ntype == NetworkType::Mlb {
            q = q + params.mixing.out_bias;
        }

        sink.record(t, &states, &gates_buf, &fluxes_buf, q);

        for layer in 0..n_layers {
            for node in 0..spec.layer_sizes[layer] {
                let v = next_states[layer][node].value();
                if !v.is_finite() {
                    return Err(SimError::NonFinite {
                        timestep: t,
                        what: format!("state of layer {layer}, node {node} became {v}"),
                    });
                }
            }
        }
        if !q.value().is_finite() {
            return Err(SimError::NonFinite {
                timestep: t,
                what: format!("aggregated streamflow became {}", q.value()),
            });
        }

        std::mem::swap(&mut states, &mut next_states);
        q_series.push(q);
    }
    Ok(ForwardOutput {
        q: q_series,
        final_states: states,
        out_weights,
    })
}

/// Streamflow-only simulation.
pub fn simulate_q<R: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<R>,
    forcing: &Forcing,
    options: &ForwardOptions,
) -> Result<Vec<R>, SimError> {
    forward(spec, params, forcing, options, &mut NoSink).map(|out| out.q)
}

/// Full per-step internals of a plain simulation; indices are
/// `[timestep][layer][node]`, states are those the step started from.
#[derive(Clone, Debug)]
pub struct SimTrace {
    pub q: Vec<f64>,
    pub states: Vec<Vec<Vec<f64>>>,
    pub g_out: Vec<Vec<Vec<f64>>>,
    pub g_loss_con: Vec<Vec<Vec<f64>>>,
    pub out_flux: Vec<Vec<Vec<f64>>>,
    pub loss_flux: Vec<Vec<Vec<f64>>>,
    pub in_flux: Vec<Vec<Vec<f64>>>,
    /// States after the final step.
    pub final_states: Vec<Vec<f64>>,
    /// Realized final-layer output weights (after any pruning mask).
    pub out_weights: Vec<f64>,
    /// Aggregation bias (`Mlb` only, otherwise 0).
    pub out_bias: f64,
}

struct TraceSink {
    trace: SimTrace,
}

impl StepSink<f64> for TraceSink {
    fn record(
        &mut self,
        _t: usize,
        states: &[Vec<f64>],
        gates: &[Vec<GateValues<f64>>],
        fluxes: &[Vec<NodeFluxes<f64>>],
        q: f64,
    ) {
        self.trace.q.push(q);
        self.trace.states.push(states.to_vec());
        self.trace
            .g_out
            .push(gates.iter().map(|l| l.iter().map(|g| g.g_out).collect()).collect());
        self.trace.g_loss_con.push(
            gates
                .iter()
                .map(|l| l.iter().map(|g| g.g_loss_con).collect())
                .collect(),
        );
        self.trace
            .out_flux
            .push(fluxes.iter().map(|l| l.iter().map(|f| f.output).collect()).collect());
        self.trace
            .loss_flux
            .push(fluxes.iter().map(|l| l.iter().map(|f| f.loss).collect()).collect());
        self.trace
            .in_flux
            .push(fluxes.iter().map(|l| l.iter().map(|f| f.input).collect()).collect());
    }
}

/// Simulation that additionally records every state, gate and flux.
pub fn simulate_trace(
    spec: &NetworkSpec,
    params: &NetworkParams<f64>,
    forcing: &Forcing,
    options: &ForwardOptions,
) -> Result<SimTrace, SimError> {
    let mut sink = TraceSink {
        trace: SimTrace {
            q: Vec::new(),
            states: Vec::new(),
            g_out: Vec::new(),
            g_loss_con: Vec::new(),
            out_flux: Vec::new(),
            loss_flux: Vec::new(),
            in_flux: Vec::new(),
            final_states: Vec::new(),
            out_weights: Vec::new(),
            out_bias: 0.0,
        },
    };
    let output = forward(spec, params, forcing, options, &mut sink)?;
    let mut trace = sink.trace;
    trace.final_states = output.final_states;
    trace.out_weights = output.out_weights;
    trace.out_bias = if spec.has_output_bias() {
        params.mixing.out_bias
    } else {
        0.0
    };
    Ok(trace)
}

// ── interpretability exports ──

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("no node at layer {layer}, index {node}")]
    NoSuchNode { layer: usize, node: usize },
    #[error("water year {0} not present in the trace")]
    NoSuchWaterYear(i32),
    #[error("trace and date ranges disagree: {0}")]
    Misaligned(String),
    #[error("empty x grid")]
    EmptyGrid,
}

/// Output-gate response curve of one node as a function of its own state.
#[derive(Clone, Debug)]
pub struct GateCurve {
    pub x: Vec<f64>,
    pub g_out: Vec<f64>,
    /// Smallest grid state with `g_out > ACTIVATION_LEVEL`, if any.
    pub activation_threshold: Option<f64>,
    /// Softmax plateau of the output gate (the curve's upper asymptote).
    pub plateau: f64,
}

/// Sweeps the node's own state over `x_grid` with every other state in its
/// layer held at `context_state` and evaporative demand held at `pet`.
pub fn export_gate_curve(
    spec: &NetworkSpec,
    params: &NetworkParams<f64>,
    layer: usize,
    node: usize,
    x_grid: &[f64],
    context_state: f64,
    pet: f64,
) -> Result<GateCurve, ExportError> {
    if layer >= spec.n_layers() || node >= spec.layer_sizes[layer] {
        return Err(ExportError::NoSuchNode { layer, node });
    }
    if x_grid.is_empty() {
        return Err(ExportError::EmptyGrid);
    }
    let p = &params.layers[layer][node];
    let scales = gate_scales(p);
    let width = spec.layer_sizes[layer];
    let mut states = vec![context_state; width];
    let mut g_out = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        states[node] = x;
        let g = compute_gates(p, &scales, node, &states, pet, spec.sharing);
        g_out.push(g.g_out);
    }
    let activation_threshold = x_grid
        .iter()
        .zip(&g_out)
        .find(|(_, &g)| g > ACTIVATION_LEVEL)
        .map(|(&x, _)| x);
    Ok(GateCurve {
        x: x_grid.to_vec(),
        g_out,
        activation_threshold,
        plateau: scales.kappa_out,
    })
}

/// One water-year of per-node diagnostics: states, output-gate values, the
/// running per-path streamflow contributions, and their shares of the
/// respective totals. Shares are 0 wherever the total is not positive.
#[derive(Clone, Debug)]
pub struct TimeseriesTable {
    pub dates: Vec<NaiveDate>,
    /// Column name paired with its values; rows align with `dates`.
    pub columns: Vec<(String, Vec<f64>)>,
}

/// Builds the diagnostics table for `wy`. `dates` describe the trace rows
/// starting at `offset` (earlier rows are warm-up and never exported).
pub fn export_timeseries(
    spec: &NetworkSpec,
    trace: &SimTrace,
    dates: &[NaiveDate],
    offset: usize,
    wy: i32,
) -> Result<TimeseriesTable, ExportError> {
    if trace.q.len() != offset + dates.len() {
        return Err(ExportError::Misaligned(format!(
            "{} trace rows vs offset {} + {} dates",
            trace.q.len(),
            offset,
            dates.len()
        )));
    }
    let row_range: Vec<usize> = (0..dates.len()).filter(|&i| water_year(dates[i]) == wy).collect();
    if row_range.is_empty() {
        return Err(ExportError::NoSuchWaterYear(wy));
    }

    let node_ids: Vec<(usize, usize)> = spec
        .layer_sizes
        .iter()
        .enumerate()
        .flat_map(|(l, &w)| (0..w).map(move |n| (l, n)))
        .collect();
    let final_layer = spec.n_layers() - 1;
    let rows = row_range.len();

    let mut dates_out = Vec::with_capacity(rows);
    let mut states: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); node_ids.len()];
    let mut state_share: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); node_ids.len()];
    let mut gouts: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); node_ids.len()];
    let mut gout_share: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); node_ids.len()];
    let mut cum: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); spec.final_width()];
    let mut cum_share: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); spec.final_width()];

    let mut running = vec![0.0; spec.final_width()];
    for &i in &row_range {
        let t = offset + i;
        dates_out.push(dates[i]);

        let state_total: f64 = node_ids
            .iter()
            .map(|&(l, n)| trace.states[t][l][n])
            .sum();
        let gout_total: f64 = node_ids.iter().map(|&(l, n)| trace.g_out[t][l][n]).sum();
        for (slot, &(l, n)) in node_ids.iter().enumerate() {
            let x = trace.states[t][l][n];
            states[slot].push(x);
            state_share[slot].push(share(x, state_total));
            let g = trace.g_out[t][l][n];
            gouts[slot].push(g);
            gout_share[slot].push(share(g, gout_total));
        }

        for k in 0..spec.final_width() {
            running[k] += trace.out_weights[k] * trace.out_flux[t][final_layer][k];
        }
        let cum_total: f64 = running.iter().sum();
        for k in 0..spec.final_width() {
            cum[k].push(running[k]);
            cum_share[k].push(share(running[k], cum_total));
        }
    }

    let mut columns = Vec::new();
    for (slot, &(l, n)) in node_ids.iter().enumerate() {
        columns.push((format!("X_{}_{}", l + 1, n + 1), std::mem::take(&mut states[slot])));
    }
    for (slot, &(l, n)) in node_ids.iter().enumerate() {
        columns.push((
            format!("Xshare_{}_{}", l + 1, n + 1),
            std::mem::take(&mut state_share[slot]),
        ));
    }
    for (slot, &(l, n)) in node_ids.iter().enumerate() {
        columns.push((format!("GO_{}_{}", l + 1, n + 1), std::mem::take(&mut gouts[slot])));
    }
    for (slot, &(l, n)) in node_ids.iter().enumerate() {
        columns.push((
            format!("GOshare_{}_{}", l + 1, n + 1),
            std::mem::take(&mut gout_share[slot]),
        ));
    }
    for k in 0..spec.final_width() {
        columns.push((
            format!("cumQ_{}_{}", final_layer + 1, k + 1),
            std::mem::take(&mut cum[k]),
        ));
    }
    for k in 0..spec.final_width() {
        columns.push((
            format!("cumQshare_{}_{}", final_layer + 1, k + 1),
            std::mem::take(&mut cum_share[k]),
        ));
    }
    Ok(TimeseriesTable {
        dates: dates_out,
        columns,
    })
}

fn share(value: f64, total: f64) -> f64 {
    if total > 0.0 {
        value / total
    } else {
        0.0
    }
}
