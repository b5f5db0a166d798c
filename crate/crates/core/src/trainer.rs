//! Full-batch Adam training of the 1−KGE objective with multi-restart
//! selection, plus the noise-based and stagewise initialization schemes for
//! growing architectures from trained smaller ones.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::dataio::{Forcing, SplitLabel, SplitMask};
use crate::lstm::{self, LstmSpec};
use crate::metrics::{kge_parts, KgeParts, MetricsError};
use crate::network::{self, parameter_layout, MixField, NetworkSpec, NodeField, SimError, Slot};
use crate::node::NodeParams;
use crate::real::Real;
use crate::seeding::substream;

/// Noise magnitudes (fraction of each trained parameter) cycled across
/// restarts when growing a single node into a shared layer.
pub const NOISE_FRACTIONS: [f64; 4] = [0.025, 0.05, 0.10, 0.20];

/// Standard deviation of freshly initialized cross-node sharing
/// coefficients.
pub const CROSS_COEF_SD: f64 = 0.025;

const MAX_EPOCHS: usize = 3000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub restarts: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Fixed noise fraction for the shared-layer initialization; `None`
    /// cycles through [`NOISE_FRACTIONS`] across restarts.
    pub noise_fraction: Option<f64>,
    /// Evaluate restarts on the global thread pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 1000,
            restarts: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            noise_fraction: None,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadConfig(
                "learning_rate must be positive and finite".into(),
            ));
        }
        if self.epochs > MAX_EPOCHS {
            return Err(TrainError::BadConfig(format!(
                "epochs capped at {MAX_EPOCHS}, got {}",
                self.epochs
            )));
        }
        if self.restarts == 0 {
            return Err(TrainError::BadConfig("restarts must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::BadConfig(format!("{name} must lie in [0, 1)")));
            }
        }
        if let Some(f) = self.noise_fraction {
            if !(0.025..=0.20).contains(&f) {
                return Err(TrainError::BadConfig(
                    "noise_fraction must lie in [0.025, 0.20]".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("training data is degenerate: {0}")]
    Data(#[from] MetricsError),
    #[error("initialization cannot embed: {0}")]
    BadEmbedding(String),
    #[error("all {restarts} restarts diverged; first failure: {first_reason}")]
    AllRestartsDiverged {
        restarts: usize,
        first_reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Why a simulation could not produce usable output.
#[derive(Clone, Debug)]
pub enum SimFailure {
    /// Numerical blowup; the restart is abandoned.
    Diverged { reason: String },
    /// Structural problem; training cannot proceed at all.
    Invalid(String),
}

/// A model the trainer can optimize: it knows its parameter count, draws its
/// own initialization, and simulates the full (spin-up-extended) series for
/// either scalar type.
pub trait TrainableModel {
    fn n_params(&self) -> usize;
    fn init_params(&self, restart: usize, rng: &mut ChaCha12Rng) -> Result<Vec<f64>, TrainError>;
    fn simulate<R: Real>(&self, flat: &[R]) -> Result<Vec<R>, SimFailure>;
}

/// Timesteps (as indices into the simulated series) paired with their
/// observations, for one evaluation subset.
#[derive(Clone, Debug)]
pub struct EvalSlice {
    pub indices: Vec<usize>,
    pub obs: Vec<f64>,
}

impl EvalSlice {
    /// Gathers a split subset, shifting indices past the spin-up prefix.
    pub fn from_split(mask: &SplitMask, label: SplitLabel, obs: &[f64], offset: usize) -> Self {
        assert_eq!(mask.labels.len(), obs.len());
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, &l) in mask.labels.iter().enumerate() {
            if l == label {
                indices.push(offset + i);
                values.push(obs[i]);
            }
        }
        EvalSlice {
            indices,
            obs: values,
        }
    }

    /// The whole record past the spin-up prefix.
    pub fn full_record(obs: &[f64], offset: usize) -> Self {
        EvalSlice {
            indices: (0..obs.len()).map(|i| offset + i).collect(),
            obs: obs.to_vec(),
        }
    }
}

/// KGE of the simulated series restricted to one evaluation subset.
pub fn slice_kge<R: Real>(q: &[R], slice: &EvalSlice) -> Result<KgeParts<R>, MetricsError> {
    let gathered: Vec<R> = slice.indices.iter().map(|&i| q[i]).collect();
    kge_parts(&gathered, &slice.obs)
}

// ── Adam ──

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step in place.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

// ── initialization schemes ──

/// Uniform(−1, 1) over every trainable slot.
pub fn init_uniform(n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Grows a trained single node into a single shared layer: each node's base
/// parameters are the trained values plus Gaussian noise scaled by
/// `noise_fraction` of each value's magnitude; cross-node sharing
/// coefficients draw from N(0, 0.025); mixing parameters draw from
/// N(0, noise_fraction).
pub fn init_single_layer_sharing(
    trained: &NodeParams<f64>,
    spec: &NetworkSpec,
    noise_fraction: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>, TrainError> {
    if spec.n_layers() != 1 {
        return Err(TrainError::BadEmbedding(
            "shared-layer initialization applies to single-layer networks".into(),
        ));
    }
    if !(0.0..=0.20).contains(&noise_fraction) {
        return Err(TrainError::BadConfig(
            "noise_fraction must lie in [0, 0.20]".into(),
        ));
    }
    let cross = Normal::new(0.0, CROSS_COEF_SD).expect("fixed sd");
    let mixing = Normal::new(0.0, noise_fraction).expect("validated sd");
    let noisy = |base: f64, rng: &mut ChaCha12Rng| -> f64 {
        let sd = noise_fraction * base.abs();
        base + Normal::new(0.0, sd).expect("nonnegative sd").sample(rng)
    };
    let flat = parameter_layout(spec)
        .iter()
        .map(|slot| match *slot {
            Slot::Node { node, field, .. } => match field {
                NodeField::OutBias => noisy(trained.out_bias, rng),
                NodeField::OutStateCoef(j) if j == node => {
                    noisy(trained.out_state_coef[0], rng)
                }
                NodeField::LossStateCoef(j) if j == node => {
                    noisy(trained.loss_state_coef[0], rng)
                }
                NodeField::OutStateCoef(_) | NodeField::LossStateCoef(_) => cross.sample(rng),
                NodeField::LossBias => noisy(trained.loss_bias, rng),
                NodeField::LossPetCoef => noisy(trained.loss_pet_coef, rng),
                NodeField::LogitOut => noisy(trained.logit_out, rng),
                NodeField::LogitLoss => noisy(trained.logit_loss, rng),
                NodeField::LogitRem => noisy(trained.logit_rem, rng),
            },
            Slot::Mixing(_) => mixing.sample(rng),
        })
        .collect();
    Ok(flat)
}

/// Stagewise growth: parameters whose slot exists in the smaller trained
/// architecture are copied verbatim; everything newly added draws from
/// Uniform(−1, 1). The smaller architecture must be a node-wise prefix with
/// the same type and sharing mode.
pub fn init_stagewise(
    prev_spec: &NetworkSpec,
    prev_flat: &[f64],
    new_spec: &NetworkSpec,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>, TrainError> {
    if prev_spec.ntype != new_spec.ntype
        || prev_spec.sharing != new_spec.sharing
        || prev_spec.mlb_input_bias_enabled != new_spec.mlb_input_bias_enabled
    {
        return Err(TrainError::BadEmbedding(
            "network type, sharing mode, and bias variant must match".into(),
        ));
    }
    if prev_spec.n_layers() > new_spec.n_layers() {
        return Err(TrainError::BadEmbedding(
            "grown network must have at least as many layers".into(),
        ));
    }
    for (l, (&p, &n)) in prev_spec
        .layer_sizes
        .iter()
        .zip(&new_spec.layer_sizes)
        .enumerate()
    {
        if p > n {
            return Err(TrainError::BadEmbedding(format!(
                "layer {} shrinks from {} to {} nodes",
                l + 1,
                p,
                n
            )));
        }
    }
    let prev_layout = parameter_layout(prev_spec);
    if prev_flat.len() != prev_layout.len() {
        return Err(TrainError::Invalid(format!(
            "trained vector has {} values, smaller architecture needs {}",
            prev_flat.len(),
            prev_layout.len()
        )));
    }
    // Output mixing refers to the final layer, which only corresponds when
    // the depth is unchanged.
    let same_final_layer = prev_spec.n_layers() == new_spec.n_layers();
    let lookup = |slot: &Slot| -> Option<f64> {
        if matches!(
            slot,
            Slot::Mixing(MixField::OutLogit(_)) | Slot::Mixing(MixField::OutBias)
        ) && !same_final_layer
        {
            return None;
        }
        prev_layout
            .iter()
            .position(|s| s == slot)
            .map(|i| prev_flat[i])
    };
    Ok(parameter_layout(new_spec)
        .iter()
        .map(|slot| lookup(slot).unwrap_or_else(|| rng.random_range(-1.0..1.0)))
        .collect())
}

// ── trainable model adapters ──

/// How a mass-conserving model draws its restart initializations.
#[derive(Clone, Debug)]
pub enum InitStrategy {
    Uniform,
    SingleLayerSharing {
        trained: NodeParams<f64>,
        noise_fraction: Option<f64>,
    },
    Stagewise {
        prev_spec: NetworkSpec,
        prev_flat: Vec<f64>,
    },
}

pub struct McpModel {
    pub spec: NetworkSpec,
    pub forcing: Forcing,
    pub init: InitStrategy,
}

impl TrainableModel for McpModel {
    fn n_params(&self) -> usize {
        network::count_parameters(&self.spec)
    }

    fn init_params(&self, restart: usize, rng: &mut ChaCha12Rng) -> Result<Vec<f64>, TrainError> {
        match &self.init {
            InitStrategy::Uniform => Ok(init_uniform(self.n_params(), rng)),
            InitStrategy::SingleLayerSharing {
                trained,
                noise_fraction,
            } => {
                let fraction = noise_fraction
                    .unwrap_or(NOISE_FRACTIONS[restart % NOISE_FRACTIONS.len()]);
                init_single_layer_sharing(trained, &self.spec, fraction, rng)
            }
            InitStrategy::Stagewise {
                prev_spec,
                prev_flat,
            } => init_stagewise(prev_spec, prev_flat, &self.spec, rng),
        }
    }

    fn simulate<R: Real>(&self, flat: &[R]) -> Result<Vec<R>, SimFailure> {
        let params =
            network::unpack(&self.spec, flat).map_err(|e| SimFailure::Invalid(e.to_string()))?;
        network::simulate_q(&self.spec, &params, &self.forcing, &Default::default()).map_err(
            |e| match e {
                SimError::NonFinite { .. } => SimFailure::Diverged {
                    reason: e.to_string(),
                },
                other => SimFailure::Invalid(other.to_string()),
            },
        )
    }
}

pub struct LstmModel {
    pub spec: LstmSpec,
    pub features: Vec<Vec<f64>>,
}

impl TrainableModel for LstmModel {
    fn n_params(&self) -> usize {
        lstm::count_parameters(&self.spec)
    }

    fn init_params(&self, _restart: usize, rng: &mut ChaCha12Rng) -> Result<Vec<f64>, TrainError> {
        Ok(lstm::init_params(&self.spec, rng))
    }

    fn simulate<R: Real>(&self, flat: &[R]) -> Result<Vec<R>, SimFailure> {
        let params =
            lstm::unpack(&self.spec, flat).map_err(|e| SimFailure::Invalid(e.to_string()))?;
        lstm::forward(&self.spec, &params, &self.features).map_err(|e| match e {
            lstm::LstmError::NonFinite { .. } => SimFailure::Diverged {
                reason: e.to_string(),
            },
            other => SimFailure::Invalid(other.to_string()),
        })
    }
}

// ── training ──

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_kge: f64,
    pub select_kge_ss: f64,
}

#[derive(Clone, Debug)]
pub enum RestartOutcome {
    Converged {
        params: Vec<f64>,
        train_kge: f64,
        select_kge_ss: f64,
    },
    Diverged {
        epoch: usize,
        reason: String,
    },
}

#[derive(Clone, Debug)]
pub struct RestartResult {
    pub restart: usize,
    pub history: Vec<EpochRecord>,
    pub outcome: RestartOutcome,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub restarts: Vec<RestartResult>,
    pub best_restart: usize,
    pub best_params: Vec<f64>,
    pub best_train_kge: f64,
    pub best_select_kge_ss: f64,
}

fn run_restart<M: TrainableModel>(
    model: &M,
    config: &TrainConfig,
    train_slice: &EvalSlice,
    select_slice: &EvalSlice,
    restart: usize,
) -> RestartResult {
    let diverged = |history: Vec<EpochRecord>, epoch: usize, reason: String| RestartResult {
        restart,
        history,
        outcome: RestartOutcome::Diverged { epoch, reason },
    };
    let mut rng = substream(config.seed, "restart", restart as u64);
    let mut flat = match model.init_params(restart, &mut rng) {
        Ok(flat) => flat,
        Err(e) => return diverged(Vec::new(), 0, e.to_string()),
    };
    let mut adam = AdamState::new(flat.len());
    let mut tape = Tape::new();
    let mut history = Vec::with_capacity(config.epochs + 1);

    for epoch in 0..config.epochs {
        tape.clear();
        let lifted: Vec<_> = flat.iter().map(|&p| tape.lift(p)).collect();
        let q = match model.simulate(&lifted) {
            Ok(q) => q,
            Err(SimFailure::Diverged { reason }) => return diverged(history, epoch, reason),
            Err(SimFailure::Invalid(reason)) => return diverged(history, epoch, reason),
        };
        let train_parts = match slice_kge(&q, train_slice) {
            Ok(p) => p,
            Err(e) => return diverged(history, epoch, e.to_string()),
        };
        let loss = train_parts.kge.rsub_c(1.0);
        if !loss.value().is_finite() {
            return diverged(history, epoch, "non-finite loss".into());
        }
        let q_vals: Vec<f64> = q.iter().map(|v| v.value()).collect();
        let select_parts = match slice_kge(&q_vals, select_slice) {
            Ok(p) => p,
            Err(e) => return diverged(history, epoch, e.to_string()),
        };
        history.push(EpochRecord {
            epoch,
            loss: loss.value(),
            train_kge: train_parts.kge.value(),
            select_kge_ss: select_parts.kge_ss,
        });
        let grads = tape.backward(loss);
        let g: Vec<f64> = lifted.iter().map(|&v| grads.wrt(v)).collect();
        if g.iter().any(|x| !x.is_finite()) {
            return diverged(history, epoch, "non-finite gradient".into());
        }
        adam_update(
            &mut flat,
            &g,
            &mut adam,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
        );
    }

    // Final metrics on the plain path, which matches the taped primals
    // bitwise.
    let q = match model.simulate::<f64>(&flat) {
        Ok(q) => q,
        Err(SimFailure::Diverged { reason }) | Err(SimFailure::Invalid(reason)) => {
            return diverged(history, config.epochs, reason)
        }
    };
    let train_parts = match slice_kge(&q, train_slice) {
        Ok(p) => p,
        Err(e) => return diverged(history, config.epochs, e.to_string()),
    };
    let select_parts = match slice_kge(&q, select_slice) {
        Ok(p) => p,
        Err(e) => return diverged(history, config.epochs, e.to_string()),
    };
    if !train_parts.kge.is_finite() || !select_parts.kge_ss.is_finite() {
        return diverged(history, config.epochs, "non-finite final metric".into());
    }
    history.push(EpochRecord {
        epoch: config.epochs,
        loss: 1.0 - train_parts.kge,
        train_kge: train_parts.kge,
        select_kge_ss: select_parts.kge_ss,
    });
    RestartResult {
        restart,
        history,
        outcome: RestartOutcome::Converged {
            params: flat,
            train_kge: train_parts.kge,
            select_kge_ss: select_parts.kge_ss,
        },
    }
}

/// Trains with independent restarts and returns every history plus the
/// restart whose selection-subset KGE_ss is highest (ties to the lowest
/// restart index). Restart RNG streams derive from the master seed, so the
/// result is identical whether restarts run serially or in parallel.
pub fn train<M: TrainableModel + Sync>(
    model: &M,
    train_slice: &EvalSlice,
    select_slice: &EvalSlice,
    config: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    config.validate()?;
    for (name, slice) in [("train", train_slice), ("select", select_slice)] {
        kge_parts::<f64>(&slice.obs, &slice.obs)
            .map_err(|e| TrainError::BadConfig(format!("{name} subset: {e}")))?;
    }
    // Structural initialization problems (bad embeddings) fail every restart
    // identically; surface them before burning compute.
    let mut probe = substream(config.seed, "init-probe", 0);
    model.init_params(0, &mut probe)?;

    let run = |r: usize| run_restart(model, config, train_slice, select_slice, r);
    let restarts: Vec<RestartResult> = if config.parallel {
        (0..config.restarts).into_par_iter().map(run).collect()
    } else {
        (0..config.restarts).map(run).collect()
    };

    let mut best: Option<(usize, f64, f64)> = None;
    for r in &restarts {
        if let RestartOutcome::Converged {
            train_kge,
            select_kge_ss,
            ..
        } = r.outcome
        {
            if best.is_none_or(|(_, _, s)| select_kge_ss > s) {
                best = Some((r.restart, train_kge, select_kge_ss));
            }
        }
    }
    let Some((best_restart, best_train_kge, best_select_kge_ss)) = best else {
        let first_reason = restarts
            .iter()
            .find_map(|r| match &r.outcome {
                RestartOutcome::Diverged { reason, .. } => Some(reason.clone()),
                _ => None,
            })
            .unwrap_or_else(|| "unknown".into());
        return Err(TrainError::AllRestartsDiverged {
            restarts: config.restarts,
            first_reason,
        });
    };
    let best_params = match &restarts[best_restart].outcome {
        RestartOutcome::Converged { params, .. } => params.clone(),
        RestartOutcome::Diverged { .. } => unreachable!("best restart converged"),
    };
    Ok(TrainResult {
        restarts,
        best_restart,
        best_params,
        best_train_kge,
        best_select_kge_ss,
    })
}

/// Writes `restart,epoch,loss,train_kge,select_kge_ss` rows for every
/// recorded epoch of every restart, including partially diverged ones.
pub fn write_train_log(
    path: &Path,
    meta: Option<&str>,
    result: &TrainResult,
) -> Result<(), TrainError> {
    let io_err = |source: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    if let Some(meta) = meta {
        writeln!(file, "# {meta}").map_err(io_err)?;
    }
    writeln!(file, "restart,epoch,loss,train_kge,select_kge_ss").map_err(io_err)?;
    for restart in &result.restarts {
        for rec in &restart.history {
            writeln!(
                file,
                "{},{},{},{},{}",
                restart.restart, rec.epoch, rec.loss, rec.train_kge, rec.select_kge_ss
            )
            .map_err(io_err)?;
        }
        if let RestartOutcome::Diverged { epoch, reason } = &restart.outcome {
            writeln!(file, "# restart {} diverged at epoch {epoch}: {reason}", restart.restart)
                .map_err(io_err)?;
        }
    }
    Ok(())
}
