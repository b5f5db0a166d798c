//! Post-training ablation of flow paths (output masking only) or whole nodes
//! (also severing shared-state couplings and input), with exhaustive
//! enumeration of removal sets ranked by median annual KGE_ss. No retraining.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{build_spinup, DataError, Dataset};
use crate::metrics::{annual_distribution, MetricsError};
use crate::network::{simulate_q, ForwardOptions, NetworkParams, NetworkSpec, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Zero the removed nodes' realized output weights; their states still
    /// evolve and still feed shared gates.
    PathOnly,
    /// Additionally zero every cross-node coupling that references a removed
    /// node and cut the removed nodes' input.
    FullNode,
}

impl fmt::Display for PruneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneMode::PathOnly => "path_only",
            PruneMode::FullNode => "full_node",
        })
    }
}

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("removed set must be nonempty")]
    EmptyRemoval,
    #[error("node index {0} out of range for final layer of width {1}")]
    BadIndex(usize, usize),
    #[error("cannot remove all {0} final-layer nodes")]
    AllRemoved(usize),
    #[error("removal count must satisfy 1 <= k < {n}, got {k}")]
    BadK { k: usize, n: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("case {removed:?} could not be scored: {source}")]
    Score {
        removed: Vec<usize>,
        source: MetricsError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Parameters plus forward options realizing one ablation case. The removed
/// nodes stay in the structure (couplings zeroed, aggregation masked) so the
/// parameter file remains comparable to the parent.
#[derive(Clone, Debug)]
pub struct PrunedModel {
    pub params: NetworkParams<f64>,
    pub options: ForwardOptions,
}

fn keep_mask(n: usize, removed: &[usize]) -> Result<Vec<bool>, PruneError> {
    if removed.is_empty() {
        return Err(PruneError::EmptyRemoval);
    }
    let set: BTreeSet<usize> = removed.iter().copied().collect();
    if let Some(&bad) = set.iter().find(|&&j| j >= n) {
        return Err(PruneError::BadIndex(bad, n));
    }
    if set.len() == n {
        return Err(PruneError::AllRemoved(n));
    }
    Ok((0..n).map(|j| !set.contains(&j)).collect())
}

/// Builds the ablated view of `parent` with the given final-layer nodes
/// removed. `renormalize` rescales surviving realized output weights by the
/// survivor sum; the default protocol leaves the lost output mass lost.
pub fn prune(
    spec: &NetworkSpec,
    parent: &NetworkParams<f64>,
    removed: &[usize],
    mode: PruneMode,
    renormalize: bool,
) -> Result<PrunedModel, PruneError> {
    let n = spec.final_width();
    let keep = keep_mask(n, removed)?;
    let mut params = parent.clone();
    let mut options = ForwardOptions {
        final_out_mask: Some(keep.clone()),
        renormalize_survivors: renormalize,
        ..Default::default()
    };
    if mode == PruneMode::FullNode {
        options.final_input_mask = Some(keep.clone());
        let final_layer = spec.n_layers() - 1;
        for (j, node) in params.layers[final_layer].iter_mut().enumerate() {
            for k in 0..n {
                if k != j && (!keep[k] || !keep[j]) {
                    node.out_state_coef[k] = 0.0;
                    node.loss_state_coef[k] = 0.0;
                }
            }
        }
    }
    Ok(PrunedModel { params, options })
}

/// One scored removal case; `removed` is ascending and zero-based.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneRow {
    pub removed: Vec<usize>,
    pub mode: PruneMode,
    pub median_kge_ss: f64,
    pub min_kge_ss: f64,
    pub q25: f64,
    pub q75: f64,
}

/// One-based, `+`-joined rendering of a removal set for reports.
pub fn format_removed(removed: &[usize]) -> String {
    removed
        .iter()
        .map(|j| (j + 1).to_string())
        .collect::<Vec<_>>()
        .join("+")
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Scores every size-`k` removal set over the full record's annual KGE_ss
/// distribution and returns the best case plus the complete leaderboard,
/// ranked by median (descending), ties broken by removed-index order.
pub fn enumerate_and_select(
    spec: &NetworkSpec,
    parent: &NetworkParams<f64>,
    k: usize,
    mode: PruneMode,
    renormalize: bool,
    ds: &Dataset,
    parallel: bool,
) -> Result<(PruneRow, Vec<PruneRow>), PruneError> {
    let n = spec.final_width();
    if k == 0 || k >= n {
        return Err(PruneError::BadK { k, n });
    }
    let spin = build_spinup(ds)?;
    let score = |removed: &Vec<usize>| -> Result<PruneRow, PruneError> {
        let pruned = prune(spec, parent, removed, mode, renormalize)?;
        let q = simulate_q::<f64>(spec, &pruned.params, &spin.forcing, &pruned.options)?;
        let annual = annual_distribution(&q[spin.offset..], &ds.flow, &ds.dates).map_err(
            |source| PruneError::Score {
                removed: removed.clone(),
                source,
            },
        )?;
        Ok(PruneRow {
            removed: removed.clone(),
            mode,
            median_kge_ss: annual.stats.median,
            min_kge_ss: annual.stats.min,
            q25: annual.stats.p25,
            q75: annual.stats.p75,
        })
    };
    let cases = combinations(n, k);
    let mut rows: Vec<PruneRow> = if parallel {
        cases
            .par_iter()
            .map(score)
            .collect::<Result<Vec<_>, _>>()?
    } else {
        cases.iter().map(score).collect::<Result<Vec<_>, _>>()?
    };
    rows.sort_by(|a, b| {
        b.median_kge_ss
            .total_cmp(&a.median_kge_ss)
            .then_with(|| a.removed.cmp(&b.removed))
    });
    Ok((rows[0].clone(), rows))
}

/// Writes `removed_indices,mode,median_kge_ss,min_kge_ss,q25,q75` rows in
/// leaderboard order.
pub fn write_leaderboard_csv(
    path: &Path,
    meta: Option<&str>,
    rows: &[PruneRow],
) -> Result<(), PruneError> {
    let io_err = |source: std::io::Error| PruneError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    if let Some(meta) = meta {
        writeln!(file, "# {meta}").map_err(io_err)?;
    }
    writeln!(file, "removed_indices,mode,median_kge_ss,min_kge_ss,q25,q75").map_err(io_err)?;
    for row in rows {
        writeln!(
            file,
            "{},{},{},{},{},{}",
            format_removed(&row.removed),
            row.mode,
            row.median_kge_ss,
            row.min_kge_ss,
            row.q25,
            row.q75
        )
        .map_err(io_err)?;
    }
    Ok(())
}
