//! The mass-conserving node: a single storage element whose outflows are
//! controlled by gates living on the probability simplex.
//!
//! Per step, with state `X >= 0`, input `U >= 0` and evaporative demand
//! `pet >= 0`:
//!
//! ```text
//! g_out      = kappa_out  * sigmoid(s_out)
//! g_loss_raw = kappa_loss * sigmoid(s_loss)
//! g_loss_con = g_loss_raw - relu(g_loss_raw - pet / max(X, STATE_FLOOR))
//! g_rem      = 1 - g_out - g_loss_con
//! O = g_out * X,  L = g_loss_con * X,  X' = g_rem * X + U
//! ```
//!
//! `kappa_out`, `kappa_loss` come from a softmax over three logits, so the
//! unconstrained gates already sum below 1; the demand cap only ever moves
//! mass from the loss gate to the retention gate. Conservation `X' - X =
//! U - O - L` holds exactly up to rounding.

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Divisor floor in the evaporative-demand cap `pet / max(X, STATE_FLOOR)`.
pub const STATE_FLOOR: f64 = 1e-9;

/// Which gates of each node read the states of its whole layer rather than
/// its own state only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sharing {
    /// Each gate sees its own node's state only.
    #[serde(rename = "none")]
    None,
    /// Loss gates see all states in the layer.
    #[serde(rename = "sal")]
    Sal,
    /// Output gates see all states in the layer.
    #[serde(rename = "sao")]
    Sao,
    /// Both gates see all states in the layer.
    #[serde(rename = "salo")]
    Salo,
}

impl Sharing {
    pub const ALL: [Sharing; 4] = [Sharing::None, Sharing::Sal, Sharing::Sao, Sharing::Salo];

    pub fn output_gate_shared(self) -> bool {
        matches!(self, Sharing::Sao | Sharing::Salo)
    }

    pub fn loss_gate_shared(self) -> bool {
        matches!(self, Sharing::Sal | Sharing::Salo)
    }
}

/// Trainable parameters of one node. The coefficient vectors span the node's
/// layer; entries for states a gate does not read are frozen at 0 so that the
/// layout is uniform across sharing modes.
#[derive(Clone, Debug)]
pub struct NodeParams<R> {
    pub out_bias: R,
    pub out_state_coef: Vec<R>,
    pub loss_bias: R,
    pub loss_pet_coef: R,
    pub loss_state_coef: Vec<R>,
    pub logit_out: R,
    pub logit_loss: R,
    pub logit_rem: R,
}

/// Softmax plateaus of the output and loss gates; time-invariant per node.
#[derive(Clone, Copy, Debug)]
pub struct GateScales<R> {
    pub kappa_out: R,
    pub kappa_loss: R,
}

/// Gate values for one step. All lie in [0, 1];
/// `g_out + g_loss_con + g_rem = 1` up to rounding.
#[derive(Clone, Copy, Debug)]
pub struct GateValues<R> {
    pub g_out: R,
    pub g_loss_raw: R,
    pub g_loss_con: R,
    pub g_rem: R,
}

/// Mass fluxes of one step.
#[derive(Clone, Copy, Debug)]
pub struct NodeFluxes<R> {
    pub output: R,
    pub loss: R,
    pub input: R,
    pub pet: f64,
}

/// Stabilized softmax plateaus from the three gate logits.
pub fn gate_scales<R: Real>(p: &NodeParams<R>) -> GateScales<R> {
    let m = p.logit_out.max(p.logit_loss).max(p.logit_rem);
    let e_out = (p.logit_out - m).exp();
    let e_loss = (p.logit_loss - m).exp();
    let e_rem = (p.logit_rem - m).exp();
    let total = e_out + e_loss + e_rem;
    GateScales {
        kappa_out: e_out / total,
        kappa_loss: e_loss / total,
    }
}

/// Linear pre-activation `bias + sum coef[j] * states[j]` over the states the
/// gate reads: all of `states` when `shared`, otherwise `states[own]` only.
fn gate_signal<R: Real>(bias: R, coef: &[R], states: &[R], own: usize, shared: bool) -> R {
    debug_assert_eq!(coef.len(), states.len());
    if shared {
        let mut s = bias;
        for (c, x) in coef.iter().zip(states) {
            s = s + *c * *x;
        }
        s
    } else {
        bias + coef[own] * states[own]
    }
}

/// Gate values for the node at `own` given the states of its layer.
pub fn compute_gates<R: Real>(
    p: &NodeParams<R>,
    scales: &GateScales<R>,
    own: usize,
    layer_states: &[R],
    pet: f64,
    sharing: Sharing,
) -> GateValues<R> {
    let s_out = gate_signal(
        p.out_bias,
        &p.out_state_coef,
        layer_states,
        own,
        sharing.output_gate_shared(),
    );
    let s_loss = gate_signal(
        p.loss_bias,
        &p.loss_state_coef,
        layer_states,
        own,
        sharing.loss_gate_shared(),
    ) + p.loss_pet_coef.mul_c(pet);

    let g_out = scales.kappa_out * s_out.sigmoid();
    let g_loss_raw = scales.kappa_loss * s_loss.sigmoid();

    // Demand cap: the realized loss can never exceed pet. Capping the gate at
    // pet / max(X, floor) makes L = g_loss_con * X <= pet in both branches of
    // the max.
    let cap = layer_states[own].max(layer_states[own].constant(STATE_FLOOR));
    let cap = cap.rdiv_c(pet);
    let g_loss_con = g_loss_raw - (g_loss_raw - cap).relu();

    // Recomputed from the capped value so the simplex closes exactly.
    let g_rem = (g_out + g_loss_con).rsub_c(1.0);

    GateValues {
        g_out,
        g_loss_raw,
        g_loss_con,
        g_rem,
    }
}

/// One step of the node: returns the next state with the step's fluxes and
/// gates. `input` must be nonnegative.
pub fn node_step<R: Real>(
    p: &NodeParams<R>,
    scales: &GateScales<R>,
    own: usize,
    layer_states: &[R],
    input: R,
    pet: f64,
    sharing: Sharing,
) -> (R, NodeFluxes<R>, GateValues<R>) {
    let gates = compute_gates(p, scales, own, layer_states, pet, sharing);
    let x = layer_states[own];
    let output = gates.g_out * x;
    let loss = gates.g_loss_con * x;
    let next = gates.g_rem * x + input;
    debug_assert!(
        !next.value().is_finite() || next.value() >= 0.0,
        "state must stay nonnegative"
    );
    (
        next,
        NodeFluxes {
            output,
            loss,
            input,
            pet,
        },
        gates,
    )
}

/// One step of a linear reservoir: a node whose output gate is the constant
/// `kappa` in (0, 1) and whose loss gate is off. Returns `(next, output)`.
pub fn linear_reservoir_step(kappa: f64, state: f64, input: f64) -> (f64, f64) {
    assert!(
        kappa > 0.0 && kappa < 1.0,
        "reservoir constant must lie in (0, 1), got {kappa}"
    );
    let output = kappa * state;
    ((1.0 - kappa) * state + input, output)
}
