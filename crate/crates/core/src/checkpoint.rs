//! Model parameter files: JSON documents holding the architecture block,
//! named parameter arrays, and the provenance fields (config hash, seed).
//! Keys are sorted and floats written in shortest round-trip form, so saving
//! is deterministic and loading is value-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lstm::{self, LstmSpec};
use crate::network::{self, NetworkParams, NetworkSpec};

/// Architecture block; the JSON tag doubles as the model kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SpecBlock {
    Mcp(NetworkSpec),
    Lstm(LstmSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub spec: SpecBlock,
    pub config_hash: String,
    pub seed: u64,
    /// Parameter arrays keyed `<layer>/<node>/<field>` (mass-conserving
    /// networks) or `<layer>/<gate>/<field>` (LSTM), plus the mixing or head
    /// blocks.
    pub params: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parameter file is missing key '{0}'")]
    MissingKey(String),
    #[error("parameter file has unexpected key '{0}'")]
    UnexpectedKey(String),
    #[error("key '{key}' has {found} values, expected {expected}")]
    WrongLength {
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("key '{0}' contains a non-finite value")]
    NonFinite(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

impl SpecBlock {
    fn kind(&self) -> &'static str {
        match self {
            SpecBlock::Mcp(_) => "mcp",
            SpecBlock::Lstm(_) => "lstm",
        }
    }
}

fn insert_checked(
    map: &mut BTreeMap<String, Vec<f64>>,
    key: String,
    values: Vec<f64>,
) -> Result<(), CheckpointError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CheckpointError::NonFinite(key));
    }
    map.insert(key, values);
    Ok(())
}

/// Named key/length pairs a mass-conserving checkpoint must contain.
fn mcp_expected_keys(spec: &NetworkSpec) -> Vec<(String, usize)> {
    let mut keys = Vec::new();
    for (l, &width) in spec.layer_sizes.iter().enumerate() {
        for j in 0..width {
            let base = format!("{}/{}", l + 1, j + 1);
            keys.push((format!("{base}/out_bias"), 1));
            keys.push((format!("{base}/out_state_coef"), width));
            keys.push((format!("{base}/loss_bias"), 1));
            keys.push((format!("{base}/loss_pet_coef"), 1));
            keys.push((format!("{base}/loss_state_coef"), width));
            keys.push((format!("{base}/logit_out"), 1));
            keys.push((format!("{base}/logit_loss"), 1));
            keys.push((format!("{base}/logit_rem"), 1));
        }
    }
    let first = spec.first_width();
    let last = spec.final_width();
    keys.push(("mixing/in_logits".into(), first));
    keys.push(("mixing/in_biases".into(), first));
    keys.push(("mixing/out_logits".into(), last));
    keys.push(("mixing/out_bias".into(), 1));
    keys
}

/// Builds a checkpoint from mass-conserving network parameters.
pub fn from_mcp(
    spec: &NetworkSpec,
    params: &NetworkParams<f64>,
    config_hash: &str,
    seed: u64,
) -> Result<Checkpoint, CheckpointError> {
    network::validate_params(spec, params).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let mut map = BTreeMap::new();
    for (l, layer) in params.layers.iter().enumerate() {
        for (j, node) in layer.iter().enumerate() {
            let base = format!("{}/{}", l + 1, j + 1);
            insert_checked(&mut map, format!("{base}/out_bias"), vec![node.out_bias])?;
            insert_checked(
                &mut map,
                format!("{base}/out_state_coef"),
                node.out_state_coef.clone(),
            )?;
            insert_checked(&mut map, format!("{base}/loss_bias"), vec![node.loss_bias])?;
            insert_checked(
                &mut map,
                format!("{base}/loss_pet_coef"),
                vec![node.loss_pet_coef],
            )?;
            insert_checked(
                &mut map,
                format!("{base}/loss_state_coef"),
                node.loss_state_coef.clone(),
            )?;
            insert_checked(&mut map, format!("{base}/logit_out"), vec![node.logit_out])?;
            insert_checked(&mut map, format!("{base}/logit_loss"), vec![node.logit_loss])?;
            insert_checked(&mut map, format!("{base}/logit_rem"), vec![node.logit_rem])?;
        }
    }
    insert_checked(&mut map, "mixing/in_logits".into(), params.mixing.in_logits.clone())?;
    insert_checked(&mut map, "mixing/in_biases".into(), params.mixing.in_biases.clone())?;
    insert_checked(&mut map, "mixing/out_logits".into(), params.mixing.out_logits.clone())?;
    insert_checked(&mut map, "mixing/out_bias".into(), vec![params.mixing.out_bias])?;
    Ok(Checkpoint {
        spec: SpecBlock::Mcp(spec.clone()),
        config_hash: config_hash.to_string(),
        seed,
        params: map,
    })
}

/// Builds a checkpoint from a flat LSTM parameter vector.
pub fn from_lstm(
    spec: &LstmSpec,
    flat: &[f64],
    config_hash: &str,
    seed: u64,
) -> Result<Checkpoint, CheckpointError> {
    let expected = lstm::count_parameters(spec);
    if flat.len() != expected {
        return Err(CheckpointError::WrongLength {
            key: "<flat vector>".into(),
            expected,
            found: flat.len(),
        });
    }
    let mut map = BTreeMap::new();
    let mut pos = 0;
    for (key, len) in lstm::block_names(spec) {
        insert_checked(&mut map, key, flat[pos..pos + len].to_vec())?;
        pos += len;
    }
    Ok(Checkpoint {
        spec: SpecBlock::Lstm(spec.clone()),
        config_hash: config_hash.to_string(),
        seed,
        params: map,
    })
}

fn take_block(
    map: &BTreeMap<String, Vec<f64>>,
    key: &str,
    expected: usize,
) -> Result<Vec<f64>, CheckpointError> {
    let values = map
        .get(key)
        .ok_or_else(|| CheckpointError::MissingKey(key.to_string()))?;
    if values.len() != expected {
        return Err(CheckpointError::WrongLength {
            key: key.to_string(),
            expected,
            found: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CheckpointError::NonFinite(key.to_string()));
    }
    Ok(values.clone())
}

fn check_no_extra_keys(
    map: &BTreeMap<String, Vec<f64>>,
    expected: &[(String, usize)],
) -> Result<(), CheckpointError> {
    for key in map.keys() {
        if !expected.iter().any(|(k, _)| k == key) {
            return Err(CheckpointError::UnexpectedKey(key.clone()));
        }
    }
    Ok(())
}

impl Checkpoint {
    /// Extracts a validated mass-conserving model.
    pub fn as_mcp(&self) -> Result<(NetworkSpec, NetworkParams<f64>), CheckpointError> {
        let spec = match &self.spec {
            SpecBlock::Mcp(spec) => spec.clone(),
            other => {
                return Err(CheckpointError::WrongKind {
                    expected: "mcp",
                    found: other.kind(),
                })
            }
        };
        spec.validate()
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        let expected = mcp_expected_keys(&spec);
        check_no_extra_keys(&self.params, &expected)?;
        let mut params = NetworkParams::zeros(&spec);
        for (l, &width) in spec.layer_sizes.iter().enumerate() {
            for j in 0..width {
                let base = format!("{}/{}", l + 1, j + 1);
                let node = &mut params.layers[l][j];
                node.out_bias = take_block(&self.params, &format!("{base}/out_bias"), 1)?[0];
                node.out_state_coef =
                    take_block(&self.params, &format!("{base}/out_state_coef"), width)?;
                node.loss_bias = take_block(&self.params, &format!("{base}/loss_bias"), 1)?[0];
                node.loss_pet_coef =
                    take_block(&self.params, &format!("{base}/loss_pet_coef"), 1)?[0];
                node.loss_state_coef =
                    take_block(&self.params, &format!("{base}/loss_state_coef"), width)?;
                node.logit_out = take_block(&self.params, &format!("{base}/logit_out"), 1)?[0];
                node.logit_loss = take_block(&self.params, &format!("{base}/logit_loss"), 1)?[0];
                node.logit_rem = take_block(&self.params, &format!("{base}/logit_rem"), 1)?[0];
            }
        }
        params.mixing.in_logits =
            take_block(&self.params, "mixing/in_logits", spec.first_width())?;
        params.mixing.in_biases =
            take_block(&self.params, "mixing/in_biases", spec.first_width())?;
        params.mixing.out_logits =
            take_block(&self.params, "mixing/out_logits", spec.final_width())?;
        params.mixing.out_bias = take_block(&self.params, "mixing/out_bias", 1)?[0];
        network::validate_params(&spec, &params)
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        Ok((spec, params))
    }

    /// Extracts a validated LSTM as (spec, flat parameter vector).
    pub fn as_lstm(&self) -> Result<(LstmSpec, Vec<f64>), CheckpointError> {
        let spec = match &self.spec {
            SpecBlock::Lstm(spec) => spec.clone(),
            other => {
                return Err(CheckpointError::WrongKind {
                    expected: "lstm",
                    found: other.kind(),
                })
            }
        };
        spec.validate()
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        let blocks = lstm::block_names(&spec);
        check_no_extra_keys(&self.params, &blocks)?;
        let mut flat = Vec::with_capacity(lstm::count_parameters(&spec));
        for (key, len) in &blocks {
            flat.extend(take_block(&self.params, key, *len)?);
        }
        Ok((spec, flat))
    }
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let io_err = |source: std::io::Error| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut text = serde_json::to_string_pretty(checkpoint)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err)
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}
