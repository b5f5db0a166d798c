//! One function per subcommand. Each resolves its inputs through [`Ctx`],
//! stamps every output file with the run's config hash and seed, and prints a
//! one-line summary to stdout.

use std::io::Write;
use std::path::PathBuf;

use mcpnet::checkpoint::{self, SpecBlock};
use mcpnet::dataio::{
    self, build_spinup, load_csv, read_split_csv, split, write_dataset_csv, write_split_csv,
    Dataset, SplitLabel,
};
use mcpnet::lstm::{self, LstmSpec};
use mcpnet::metrics::{
    annual_distribution, flow_group_metrics, kge_masked, kge_parts, write_report_csv,
    MetricsReport, ScopeMetrics,
};
use mcpnet::network::{
    self, export_gate_curve, export_timeseries, simulate_trace, ForwardOptions, NetworkSpec,
    NetworkType, SimTrace,
};
use mcpnet::node::Sharing;
use mcpnet::pruning::{enumerate_and_select, format_removed, write_leaderboard_csv, PruneMode};
use mcpnet::trainer::{train, write_train_log, EvalSlice, InitStrategy, LstmModel, McpModel};

use crate::{CliError, Ctx};

fn output_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::OutputIo {
        path: path.display().to_string(),
        source,
    }
}

pub fn cmd_split(ctx: &Ctx, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let data_path = ctx.data_path(data)?;
    let ds = load_csv(&data_path)?;
    let mask = split(&ds.flow);
    let meta = ctx.meta("split", &serde_json::json!({ "rows": ds.len() }));
    let out_path = match out {
        Some(p) => p,
        None => ctx.out_dir(None)?.join("split.csv"),
    };
    write_split_csv(&out_path, &ds.dates, &mask, Some(&meta))?;
    let (train, test, select) = mask.counts();
    println!("train={train} test={test} select={select}");
    println!("wrote {}", out_path.display());
    Ok(())
}

pub struct TrainArgs {
    pub data: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub restarts: Option<usize>,
    pub learning_rate: Option<f64>,
    pub parallel: Option<bool>,
    pub init_single_node: Option<PathBuf>,
    pub init_stagewise: Option<PathBuf>,
    pub noise_fraction: Option<f64>,
}

/// Initialization resolved from the growth flags, plus the parent
/// checkpoint's hash for the settings stamp.
fn resolve_init(args: &TrainArgs) -> Result<(InitStrategy, &'static str, Option<String>), CliError> {
    match (&args.init_single_node, &args.init_stagewise) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "choose one of --init-single-node and --init-stagewise".into(),
        )),
        (Some(path), None) => {
            let ck = checkpoint::load(path)?;
            let (prev_spec, prev_params) = ck.as_mcp()?;
            if prev_spec.layer_sizes != vec![1] {
                return Err(CliError::Usage(format!(
                    "--init-single-node needs a trained single-node checkpoint, found layers {:?}",
                    prev_spec.layer_sizes
                )));
            }
            Ok((
                InitStrategy::SingleLayerSharing {
                    trained: prev_params.layers[0][0].clone(),
                    noise_fraction: args.noise_fraction,
                },
                "single_node_growth",
                Some(ck.config_hash),
            ))
        }
        (None, Some(path)) => {
            let ck = checkpoint::load(path)?;
            let (prev_spec, prev_params) = ck.as_mcp()?;
            let prev_flat = network::pack(&prev_spec, &prev_params)?;
            Ok((
                InitStrategy::Stagewise {
                    prev_spec,
                    prev_flat,
                },
                "stagewise",
                Some(ck.config_hash),
            ))
        }
        (None, None) => Ok((InitStrategy::Uniform, "uniform", None)),
    }
}

pub fn cmd_train(ctx: &Ctx, args: TrainArgs) -> Result<(), CliError> {
    let data_path = ctx.data_path(args.data.clone())?;
    let ds = load_csv(&data_path)?;
    let mask = match args.split.clone().or_else(|| ctx.config.split.clone()) {
        Some(path) => read_split_csv(&path, &ds)?,
        None => split(&ds.flow),
    };

    let mut tc = ctx.config.train.clone().unwrap_or_default();
    tc.seed = ctx.seed;
    if let Some(v) = args.epochs {
        tc.epochs = v;
    }
    if let Some(v) = args.restarts {
        tc.restarts = v;
    }
    if let Some(v) = args.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = args.parallel {
        tc.parallel = v;
    }
    if let Some(v) = args.noise_fraction {
        tc.noise_fraction = Some(v);
    }

    let model_block = ctx.config.model.clone().ok_or_else(|| {
        CliError::Usage(r#"no model: set config.model to {"mcp": ...} or {"lstm": ...}"#.into())
    })?;
    let spin = build_spinup(&ds)?;
    let train_slice = EvalSlice::from_split(&mask, SplitLabel::Train, &ds.flow, spin.offset);
    let select_slice = EvalSlice::from_split(&mask, SplitLabel::Select, &ds.flow, spin.offset);
    let out_dir = ctx.out_dir(args.out_dir.clone())?;

    let (init, init_kind, parent_hash) = resolve_init(&args)?;
    let settings = serde_json::json!({
        "model": model_block,
        "train": tc,
        "init": { "kind": init_kind, "parent_hash": parent_hash },
    });
    let hash = ctx.hash("train", &settings);
    let meta = format!("config_hash={hash} seed={}", ctx.seed);

    let (result, ck) = match &model_block {
        SpecBlock::Mcp(spec) => {
            let model = McpModel {
                spec: spec.clone(),
                forcing: spin.forcing.clone(),
                init,
            };
            let result = train(&model, &train_slice, &select_slice, &tc)?;
            let params = network::unpack(spec, &result.best_params)?;
            let ck = checkpoint::from_mcp(spec, &params, &hash, ctx.seed)?;
            (result, ck)
        }
        SpecBlock::Lstm(spec) => {
            if !matches!(init, InitStrategy::Uniform) {
                return Err(CliError::Usage(
                    "--init-single-node and --init-stagewise grow mass-conserving networks, \
                     not LSTMs"
                        .into(),
                ));
            }
            let model = LstmModel {
                spec: spec.clone(),
                features: lstm::features_from_forcing(&spin.forcing),
            };
            let result = train(&model, &train_slice, &select_slice, &tc)?;
            let ck = checkpoint::from_lstm(spec, &result.best_params, &hash, ctx.seed)?;
            (result, ck)
        }
    };

    let ck_path = out_dir.join("checkpoint.json");
    checkpoint::save(&ck_path, &ck)?;
    let log_path = out_dir.join("train_log.csv");
    write_train_log(&log_path, Some(&meta), &result)?;
    println!(
        "best_restart={} train_kge={} select_kge_ss={}",
        result.best_restart, result.best_train_kge, result.best_select_kge_ss
    );
    println!("wrote {} and {}", ck_path.display(), log_path.display());
    Ok(())
}

/// Per-timestep diagnostic columns of a mass-conserving trace, grouped by
/// kind and 1-based like every other export.
fn mcp_trace_columns(spec: &NetworkSpec, trace: &SimTrace, offset: usize) -> Vec<(String, Vec<f64>)> {
    let steps = trace.q.len();
    let mut columns = Vec::new();
    let kinds: [(&str, &Vec<Vec<Vec<f64>>>); 5] = [
        ("X", &trace.states),
        ("GO", &trace.g_out),
        ("GLcon", &trace.g_loss_con),
        ("O", &trace.out_flux),
        ("L", &trace.loss_flux),
    ];
    for (prefix, values) in kinds {
        for (l, width) in spec.layer_sizes.iter().enumerate() {
            for j in 0..*width {
                let series: Vec<f64> = (offset..steps).map(|t| values[t][l][j]).collect();
                columns.push((format!("{prefix}_{}_{}", l + 1, j + 1), series));
            }
        }
    }
    columns
}

fn lstm_trace_columns(spec: &LstmSpec, trace: &lstm::LstmTrace, offset: usize) -> Vec<(String, Vec<f64>)> {
    let steps = trace.y.len();
    let mut columns = Vec::new();
    let kinds: [(&str, &Vec<Vec<Vec<f64>>>); 2] = [("c", &trace.cells), ("h", &trace.hidden)];
    for (prefix, values) in kinds {
        for (l, width) in spec.hidden.iter().enumerate() {
            for u in 0..*width {
                let series: Vec<f64> = (offset..steps).map(|t| values[t][l][u]).collect();
                columns.push((format!("{prefix}_{}_{}", l + 1, u + 1), series));
            }
        }
    }
    columns
}

fn write_trace_csv(
    path: &std::path::Path,
    meta: &str,
    ds: &Dataset,
    q: &[f64],
    columns: &[(String, Vec<f64>)],
) -> Result<(), CliError> {
    let err = output_err(path);
    let mut file = std::fs::File::create(path).map_err(&err)?;
    writeln!(file, "# {meta}").map_err(&err)?;
    let names: Vec<&str> = columns.iter().map(|(name, _)| name.as_str()).collect();
    writeln!(file, "date,q_sim,q_obs,{}", names.join(",")).map_err(&err)?;
    for i in 0..ds.len() {
        let row: Vec<String> = columns.iter().map(|(_, v)| v[i].to_string()).collect();
        writeln!(
            file,
            "{},{},{},{}",
            ds.dates[i],
            q[i],
            ds.flow[i],
            row.join(",")
        )
        .map_err(&err)?;
    }
    Ok(())
}

pub fn cmd_evaluate(
    ctx: &Ctx,
    checkpoint: PathBuf,
    data: Option<PathBuf>,
    split_path: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let data_path = ctx.data_path(data)?;
    let ds = load_csv(&data_path)?;
    let mask = match split_path.or_else(|| ctx.config.split.clone()) {
        Some(path) => Some(read_split_csv(&path, &ds)?),
        None => None,
    };
    let ck = checkpoint::load(&checkpoint)?;
    let spin = build_spinup(&ds)?;
    let out_dir = ctx.out_dir(out_dir)?;
    let settings = serde_json::json!({
        "checkpoint_hash": ck.config_hash,
        "scoped": mask.is_some(),
    });
    let meta = ctx.meta("evaluate", &settings);

    let (q, columns) = match &ck.spec {
        SpecBlock::Mcp(_) => {
            let (spec, params) = ck.as_mcp()?;
            let trace = simulate_trace(&spec, &params, &spin.forcing, &ForwardOptions::default())?;
            let q = trace.q[spin.offset..].to_vec();
            let columns = mcp_trace_columns(&spec, &trace, spin.offset);
            (q, columns)
        }
        SpecBlock::Lstm(_) => {
            let (spec, flat) = ck.as_lstm()?;
            let params = lstm::unpack(&spec, &flat)?;
            let features = lstm::features_from_forcing(&spin.forcing);
            let trace = lstm::trace(&spec, &params, &features)?;
            let q = trace.y[spin.offset..].to_vec();
            let columns = lstm_trace_columns(&spec, &trace, spin.offset);
            (q, columns)
        }
    };

    let mut overall = vec![ScopeMetrics {
        scope: "full".into(),
        n: ds.len(),
        components: kge_parts::<f64>(&q, &ds.flow)?.into(),
    }];
    if let Some(mask) = &mask {
        for label in [SplitLabel::Train, SplitLabel::Test, SplitLabel::Select] {
            let indices = mask.indices(label);
            overall.push(ScopeMetrics {
                scope: label.to_string(),
                n: indices.len(),
                components: kge_masked(&q, &ds.flow, &indices)?.into(),
            });
        }
    }
    let annual = annual_distribution(&q, &ds.flow, &ds.dates)?;
    let flow_groups = flow_group_metrics(&q, &ds.flow)?;
    let report = MetricsReport {
        overall,
        annual,
        flow_groups,
    };

    let report_path = out_dir.join("report.csv");
    write_report_csv(&report_path, Some(&meta), &report)?;

    let annual_path = out_dir.join("annual.csv");
    let err = output_err(&annual_path);
    let mut file = std::fs::File::create(&annual_path).map_err(&err)?;
    writeln!(file, "# {meta}").map_err(&err)?;
    writeln!(file, "wy,kge_ss,note").map_err(&err)?;
    for v in &report.annual.values {
        writeln!(file, "{},{},", v.wy, v.kge_ss).map_err(&err)?;
    }
    for (wy, reason) in &report.annual.skipped {
        writeln!(file, "{wy},,{}", reason.replace(',', ";")).map_err(&err)?;
    }
    drop(file);

    let trace_path = out_dir.join("trace.csv");
    write_trace_csv(&trace_path, &meta, &ds, &q, &columns)?;

    for scope in &report.overall {
        println!(
            "{}: n={} kge={} kge_ss={}",
            scope.scope, scope.n, scope.components.kge, scope.components.kge_ss
        );
    }
    println!(
        "wrote {}, {}, {}",
        report_path.display(),
        annual_path.display(),
        trace_path.display()
    );
    Ok(())
}

pub fn cmd_prune(
    ctx: &Ctx,
    checkpoint: PathBuf,
    data: Option<PathBuf>,
    k: usize,
    mode: PruneMode,
    renormalize: bool,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let data_path = ctx.data_path(data)?;
    let ds = load_csv(&data_path)?;
    let ck = checkpoint::load(&checkpoint)?;
    let (spec, params) = ck.as_mcp()?;
    let out_dir = ctx.out_dir(out_dir)?;
    let (best, rows) = enumerate_and_select(&spec, &params, k, mode, renormalize, &ds, true)?;
    let settings = serde_json::json!({
        "checkpoint_hash": ck.config_hash,
        "k": k,
        "mode": mode,
        "renormalize": renormalize,
    });
    let meta = ctx.meta("prune", &settings);
    let out_path = out_dir.join("leaderboard.csv");
    write_leaderboard_csv(&out_path, Some(&meta), &rows)?;
    println!(
        "cases={} best_removed={} median_kge_ss={}",
        rows.len(),
        format_removed(&best.removed),
        best.median_kge_ss
    );
    println!("wrote {}", out_path.display());
    Ok(())
}

pub struct GateArgs {
    pub checkpoint: PathBuf,
    pub layer: usize,
    pub node: usize,
    pub x_max: f64,
    pub points: usize,
    pub context: f64,
    pub pet: f64,
    pub out: Option<PathBuf>,
}

pub fn cmd_export_gates(ctx: &Ctx, args: GateArgs) -> Result<(), CliError> {
    if args.points < 2 {
        return Err(CliError::Usage("need at least 2 grid points".into()));
    }
    if args.layer == 0 || args.node == 0 {
        return Err(CliError::Usage("--layer and --node are 1-based".into()));
    }
    if !(args.x_max > 0.0) {
        return Err(CliError::Usage("--x-max must be positive".into()));
    }
    let ck = checkpoint::load(&args.checkpoint)?;
    let (spec, params) = ck.as_mcp()?;
    // Endpoints are exact: i/(points-1) is 0 at i=0 and 1 at i=points-1.
    let grid: Vec<f64> = (0..args.points)
        .map(|i| args.x_max * i as f64 / (args.points - 1) as f64)
        .collect();
    let curve = export_gate_curve(
        &spec,
        &params,
        args.layer - 1,
        args.node - 1,
        &grid,
        args.context,
        args.pet,
    )?;
    let settings = serde_json::json!({
        "checkpoint_hash": ck.config_hash,
        "layer": args.layer,
        "node": args.node,
        "x_max": args.x_max,
        "points": args.points,
        "context": args.context,
        "pet": args.pet,
    });
    let meta = ctx.meta("export-gates", &settings);
    let out_path = match args.out {
        Some(p) => p,
        None => ctx.out_dir(None)?.join("gate_curve.csv"),
    };
    let err = output_err(&out_path);
    let mut file = std::fs::File::create(&out_path).map_err(&err)?;
    writeln!(file, "# {meta}").map_err(&err)?;
    match curve.activation_threshold {
        Some(x) => writeln!(file, "# activation_threshold={x}").map_err(&err)?,
        None => writeln!(file, "# activation_threshold=none").map_err(&err)?,
    }
    writeln!(file, "# plateau={}", curve.plateau).map_err(&err)?;
    writeln!(file, "x_mm,g_out").map_err(&err)?;
    for (x, g) in curve.x.iter().zip(&curve.g_out) {
        writeln!(file, "{x},{g}").map_err(&err)?;
    }
    println!("wrote {}", out_path.display());
    Ok(())
}

pub fn cmd_export_timeseries(
    ctx: &Ctx,
    checkpoint: PathBuf,
    data: Option<PathBuf>,
    wy: i32,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let data_path = ctx.data_path(data)?;
    let ds = load_csv(&data_path)?;
    let ck = checkpoint::load(&checkpoint)?;
    let (spec, params) = ck.as_mcp()?;
    let spin = build_spinup(&ds)?;
    let trace = simulate_trace(&spec, &params, &spin.forcing, &ForwardOptions::default())?;
    let table = export_timeseries(&spec, &trace, &ds.dates, spin.offset, wy)?;
    let settings = serde_json::json!({ "checkpoint_hash": ck.config_hash, "wy": wy });
    let meta = ctx.meta("export-timeseries", &settings);
    let out_path = match out {
        Some(p) => p,
        None => ctx.out_dir(None)?.join(format!("timeseries_wy{wy}.csv")),
    };
    let err = output_err(&out_path);
    let mut file = std::fs::File::create(&out_path).map_err(&err)?;
    writeln!(file, "# {meta}").map_err(&err)?;
    let names: Vec<&str> = table.columns.iter().map(|(name, _)| name.as_str()).collect();
    writeln!(file, "date,{}", names.join(",")).map_err(&err)?;
    for (i, date) in table.dates.iter().enumerate() {
        let row: Vec<String> = table.columns.iter().map(|(_, v)| v[i].to_string()).collect();
        writeln!(file, "{date},{}", row.join(",")).map_err(&err)?;
    }
    println!(
        "wrote {} ({} rows, {} columns)",
        out_path.display(),
        table.dates.len(),
        table.columns.len()
    );
    Ok(())
}

fn parse_usize_list(text: &str, flag: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{flag}: cannot parse {part:?} as a width")))
        })
        .collect()
}

pub fn cmd_count_params(
    ctx: &Ctx,
    model_file: Option<PathBuf>,
    ntype: Option<String>,
    sharing: Option<String>,
    layers: Option<String>,
    lstm_hidden: Option<String>,
) -> Result<(), CliError> {
    let block: SpecBlock = if let Some(path) = model_file {
        let text = std::fs::read_to_string(&path).map_err(|source| CliError::ConfigIo {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CliError::ConfigParse {
            path: path.display().to_string(),
            source,
        })?
    } else if let Some(hidden) = lstm_hidden {
        SpecBlock::Lstm(LstmSpec {
            input_dim: 2,
            hidden: parse_usize_list(&hidden, "--lstm-hidden")?,
        })
    } else if let Some(name) = ntype {
        let ntype: NetworkType = serde_json::from_str(&format!("\"{name}\""))
            .map_err(|_| CliError::Usage(format!("unknown --ntype {name:?}")))?;
        let sharing: Sharing = match sharing {
            Some(name) => serde_json::from_str(&format!("\"{name}\""))
                .map_err(|_| CliError::Usage(format!("unknown --sharing {name:?}")))?,
            None => Sharing::None,
        };
        let layers = layers
            .ok_or_else(|| CliError::Usage("--layers is required with --ntype".into()))?;
        SpecBlock::Mcp(NetworkSpec::new(
            ntype,
            sharing,
            parse_usize_list(&layers, "--layers")?,
        ))
    } else if let Some(block) = ctx.config.model.clone() {
        block
    } else {
        return Err(CliError::Usage(
            "describe a model: --model-file, --ntype/--layers, --lstm-hidden, or config.model"
                .into(),
        ));
    };
    let count = match &block {
        SpecBlock::Mcp(spec) => {
            spec.validate()?;
            network::count_parameters(spec)
        }
        SpecBlock::Lstm(spec) => {
            spec.validate()?;
            lstm::count_parameters(spec)
        }
    };
    println!("{count}");
    Ok(())
}

pub fn cmd_synth(
    ctx: &Ctx,
    years: Option<usize>,
    start_wy: Option<i32>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = ctx.config.synth.clone().unwrap_or_default();
    if let Some(v) = years {
        cfg.years = v;
    }
    if let Some(v) = start_wy {
        cfg.start_wy = v;
    }
    if cfg.years == 0 {
        return Err(CliError::Usage("--years must be at least 1".into()));
    }
    if !(cfg.wet_day_prob > 0.0 && cfg.wet_day_prob < 1.0) {
        return Err(CliError::Usage(
            "synth.wet_day_prob must lie strictly between 0 and 1".into(),
        ));
    }
    if !(cfg.mean_wet_depth > 0.0) {
        return Err(CliError::Usage("synth.mean_wet_depth must be positive".into()));
    }
    let (gen_spec, gen_params) = dataio::default_generator();
    let ds = dataio::synth_generate(&cfg, &gen_spec, &gen_params, ctx.seed)?;
    let meta = ctx.meta("synth", &cfg);
    let out_path = match out {
        Some(p) => p,
        None => ctx.out_dir(None)?.join("synth.csv"),
    };
    write_dataset_csv(&out_path, &ds, Some(&meta))?;
    println!(
        "rows={} water_years={} wrote {}",
        ds.len(),
        cfg.years,
        out_path.display()
    );
    Ok(())
}
