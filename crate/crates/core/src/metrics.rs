//! Kling-Gupta efficiency metrics: the component decomposition used as the
//! training objective, annual distributions over water-years, and
//! flow-magnitude group breakdowns for evaluation reports.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::dataio::complete_water_years;
use crate::real::Real;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 points to compute KGE, got {n}")]
    TooFew { n: usize },
    #[error("observed series is constant; KGE is undefined")]
    ConstantObs,
    #[error("observed series has zero mean; KGE is undefined")]
    ZeroMeanObs,
    #[error("simulated series is constant; correlation is undefined")]
    ConstantSim,
    #[error("no complete water-year in the evaluation range")]
    NoCompleteYears,
    #[error("every complete water-year was degenerate")]
    AllYearsDegenerate,
    #[error("flow group {group} has {n} points; need at least 2")]
    EmptyFlowGroup { group: usize, n: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// KGE pieces built generically so the same code produces scalar values and
/// differentiable values for the training objective.
#[derive(Clone, Copy, Debug)]
pub struct KgeParts<R> {
    pub rho: R,
    pub alpha: R,
    pub beta: R,
    pub kge: R,
    pub kge_ss: R,
}

/// Full component set reported in evaluation tables.
#[derive(Clone, Copy, Debug)]
pub struct KgeComponents {
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kge: f64,
    pub kge_ss: f64,
    pub alpha_star: f64,
    pub beta_star: f64,
}

impl From<KgeParts<f64>> for KgeComponents {
    fn from(p: KgeParts<f64>) -> Self {
        KgeComponents {
            rho: p.rho,
            alpha: p.alpha,
            beta: p.beta,
            kge: p.kge,
            kge_ss: p.kge_ss,
            alpha_star: 1.0 - (1.0 - p.alpha).abs(),
            beta_star: 1.0 - (1.0 - p.beta).abs(),
        }
    }
}

/// Skill-score rescaling of KGE: 0 corresponds to the mean-flow benchmark,
/// 1 to a perfect fit.
pub fn kge_ss_from_kge(kge: f64) -> f64 {
    1.0 - (1.0 - kge) / SQRT_2
}

/// KGE with components over paired series, using population (1/N) moments
/// computed in two passes with fixed left-to-right accumulation order.
/// Degeneracy checks run on plain values before any differentiable record is
/// written, so a failed call leaves a tape untouched.
pub fn kge_parts<R: Real>(sim: &[R], obs: &[f64]) -> Result<KgeParts<R>, MetricsError> {
    assert_eq!(sim.len(), obs.len(), "sim and obs must pair one-to-one");
    let n = sim.len();
    if n < 2 {
        return Err(MetricsError::TooFew { n });
    }
    let nf = n as f64;
    let inv_n = 1.0 / nf;

    let mu_o = obs.iter().sum::<f64>() * inv_n;
    let var_o = obs.iter().map(|&o| (o - mu_o) * (o - mu_o)).sum::<f64>() * inv_n;
    if var_o == 0.0 {
        return Err(MetricsError::ConstantObs);
    }
    if mu_o == 0.0 {
        return Err(MetricsError::ZeroMeanObs);
    }
    let sigma_o = var_o.sqrt();

    let mu_s_val = sim.iter().map(|s| s.value()).sum::<f64>() * inv_n;
    let var_s_val = sim
        .iter()
        .map(|s| (s.value() - mu_s_val) * (s.value() - mu_s_val))
        .sum::<f64>()
        * inv_n;
    if var_s_val == 0.0 {
        return Err(MetricsError::ConstantSim);
    }

    let mut sum_s = sim[0];
    for s in &sim[1..] {
        sum_s = sum_s + *s;
    }
    let mu_s = sum_s.mul_c(inv_n);

    let d0 = sim[0] - mu_s;
    let mut var_acc = d0 * d0;
    let mut cov_acc = d0.mul_c(obs[0] - mu_o);
    for i in 1..n {
        let d = sim[i] - mu_s;
        var_acc = var_acc + d * d;
        cov_acc = cov_acc + d.mul_c(obs[i] - mu_o);
    }
    let sigma_s = var_acc.mul_c(inv_n).sqrt();
    let cov = cov_acc.mul_c(inv_n);

    let rho = cov.mul_c(1.0 / sigma_o) / sigma_s;
    let alpha = sigma_s.mul_c(1.0 / sigma_o);
    let beta = mu_s.mul_c(1.0 / mu_o);

    let er = rho.add_c(-1.0);
    let ea = alpha.add_c(-1.0);
    let eb = beta.add_c(-1.0);
    let kge = (er * er + ea * ea + eb * eb).sqrt().rsub_c(1.0);
    let kge_ss = kge.rsub_c(1.0).mul_c(1.0 / SQRT_2).rsub_c(1.0);

    Ok(KgeParts {
        rho,
        alpha,
        beta,
        kge,
        kge_ss,
    })
}

/// KGE restricted to the given timestep indices; equals [`kge_parts`] on the
/// explicitly extracted subseries by construction.
pub fn kge_masked<R: Real>(
    sim: &[R],
    obs: &[f64],
    indices: &[usize],
) -> Result<KgeParts<R>, MetricsError> {
    let sub_sim: Vec<R> = indices.iter().map(|&i| sim[i]).collect();
    let sub_obs: Vec<f64> = indices.iter().map(|&i| obs[i]).collect();
    kge_parts(&sub_sim, &sub_obs)
}

/// Linear-interpolation percentile between order statistics (the common
/// "type 7" rule). `sorted` must already be ascending.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&p));
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Order statistics of a sample; the summary shape used for annual skill
/// distributions.
#[derive(Clone, Copy, Debug)]
pub struct DistStats {
    pub min: f64,
    pub p5: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
}

impl DistStats {
    pub fn from_values(values: &[f64]) -> DistStats {
        assert!(!values.is_empty());
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        DistStats {
            min: sorted[0],
            p5: percentile(&sorted, 0.05),
            p25: percentile(&sorted, 0.25),
            median: percentile(&sorted, 0.50),
            p75: percentile(&sorted, 0.75),
            p95: percentile(&sorted, 0.95),
            max: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AnnualValue {
    pub wy: i32,
    pub kge_ss: f64,
}

/// Per-water-year skill and its summary statistics. Years whose observations
/// make the metric undefined are excluded and listed with the reason.
#[derive(Clone, Debug)]
pub struct AnnualDistribution {
    pub values: Vec<AnnualValue>,
    pub skipped: Vec<(i32, String)>,
    pub stats: DistStats,
}

/// KGE_ss per complete water-year (October through September, whole-year
/// timesteps with no split mask), with interpolated percentile summaries.
pub fn annual_distribution(
    sim: &[f64],
    obs: &[f64],
    dates: &[NaiveDate],
) -> Result<AnnualDistribution, MetricsError> {
    assert_eq!(sim.len(), obs.len());
    assert_eq!(sim.len(), dates.len());
    let spans = complete_water_years(dates);
    if spans.is_empty() {
        return Err(MetricsError::NoCompleteYears);
    }
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for span in spans {
        let range = span.start..span.start + span.len;
        match kge_parts::<f64>(&sim[range.clone()], &obs[range]) {
            Ok(parts) => values.push(AnnualValue {
                wy: span.wy,
                kge_ss: parts.kge_ss,
            }),
            Err(e) => skipped.push((span.wy, e.to_string())),
        }
    }
    if values.is_empty() {
        return Err(MetricsError::AllYearsDegenerate);
    }
    let stats = DistStats::from_values(
        &values.iter().map(|v| v.kge_ss).collect::<Vec<f64>>(),
    );
    Ok(AnnualDistribution {
        values,
        skipped,
        stats,
    })
}

/// One observed-flow magnitude group. `components` is absent when the group's
/// observations make KGE undefined (for example an all-zero low-flow group);
/// the reason lands in `note` instead of a NaN in any output.
#[derive(Clone, Debug)]
pub struct FlowGroup {
    pub group: usize,
    pub n: usize,
    pub components: Option<KgeComponents>,
    pub note: Option<String>,
}

/// KGE components within five observed-flow magnitude groups split at the
/// 20/40/60/80th percentiles of the observations. A timestep whose flow
/// equals a boundary joins the lower group.
pub fn flow_group_metrics(sim: &[f64], obs: &[f64]) -> Result<Vec<FlowGroup>, MetricsError> {
    assert_eq!(sim.len(), obs.len());
    if obs.len() < 10 {
        return Err(MetricsError::TooFew { n: obs.len() });
    }
    let mut sorted = obs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bounds: Vec<f64> = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .map(|&p| percentile(&sorted, p))
        .collect();
    let group_of = |q: f64| bounds.iter().position(|&b| q <= b).unwrap_or(4);

    let mut groups = Vec::with_capacity(5);
    for g in 0..5 {
        let idx: Vec<usize> = (0..obs.len()).filter(|&i| group_of(obs[i]) == g).collect();
        if idx.len() < 2 {
            return Err(MetricsError::EmptyFlowGroup {
                group: g + 1,
                n: idx.len(),
            });
        }
        let (components, note) = match kge_masked::<f64>(sim, obs, &idx) {
            Ok(parts) => (Some(KgeComponents::from(parts)), None),
            Err(e) => (None, Some(e.to_string())),
        };
        groups.push(FlowGroup {
            group: g + 1,
            n: idx.len(),
            components,
            note,
        });
    }
    Ok(groups)
}

/// Overall metrics for one evaluation scope (a split subset or the full
/// record).
#[derive(Clone, Debug)]
pub struct ScopeMetrics {
    pub scope: String,
    pub n: usize,
    pub components: KgeComponents,
}

/// Everything an evaluation run reports: per-scope components, the annual
/// KGE_ss distribution, and the flow-group breakdown.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub overall: Vec<ScopeMetrics>,
    pub annual: AnnualDistribution,
    pub flow_groups: Vec<FlowGroup>,
}

pub const ANNUAL_STAT_ROWS: [&str; 6] = [
    "KGE_ss^min",
    "KGE_ss^5%",
    "KGE_ss^25%",
    "KGE_ss^median",
    "KGE_ss^75%",
    "KGE_ss^95%",
];

/// Writes the report as one tidy CSV. Stat rows carry their value in the
/// kge_ss column; exactly the six annual stat rows and five flow-group rows
/// appear.
pub fn write_report_csv(
    path: &Path,
    meta: Option<&str>,
    report: &MetricsReport,
) -> Result<(), MetricsError> {
    let io_err = |source: std::io::Error| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    if let Some(meta) = meta {
        writeln!(file, "# {meta}").map_err(io_err)?;
    }
    writeln!(
        file,
        "section,scope,stat,n,rho,alpha,beta,kge,kge_ss,alpha_star,beta_star,note"
    )
    .map_err(io_err)?;
    let write_components =
        |file: &mut std::fs::File, section: &str, scope: &str, n: usize, c: &KgeComponents| {
            writeln!(
                file,
                "{section},{scope},,{n},{},{},{},{},{},{},{},",
                c.rho, c.alpha, c.beta, c.kge, c.kge_ss, c.alpha_star, c.beta_star
            )
        };
    for scope in &report.overall {
        write_components(&mut file, "overall", &scope.scope, scope.n, &scope.components)
            .map_err(io_err)?;
    }
    let s = &report.annual.stats;
    let stat_values = [s.min, s.p5, s.p25, s.median, s.p75, s.p95];
    for (label, value) in ANNUAL_STAT_ROWS.iter().zip(stat_values) {
        writeln!(
            file,
            "annual,all,{label},{},,,,,{value},,,",
            report.annual.values.len()
        )
        .map_err(io_err)?;
    }
    for group in &report.flow_groups {
        let scope = format!("group{}", group.group);
        match &group.components {
            Some(c) => {
                write_components(&mut file, "flow_group", &scope, group.n, c).map_err(io_err)?
            }
            None => writeln!(
                file,
                "flow_group,{scope},,{},,,,,,,,{}",
                group.n,
                group.note.as_deref().unwrap_or_default()
            )
            .map_err(io_err)?,
        }
    }
    for (wy, reason) in &report.annual.skipped {
        writeln!(file, "annual_skipped,wy{wy},,,,,,,,,,{reason}").map_err(io_err)?;
    }
    Ok(())
}
