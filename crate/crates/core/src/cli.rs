//! Command-line pipeline. Each subcommand runs one stage, reads the
//! artifacts of earlier stages from the output directory, and writes its
//! own as versioned JSON/CSV. Every error path prints a single
//! `error[CODE]: message` line and exits with the code family of the cause
//! (2 config, 3 data, 4 numeric).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::backtest::{compute_metrics, render_table, topk_backtest, MetricsReport};
use crate::config::{parse_override_args, RunConfig};
use crate::error::{Error, Result};
use crate::panel::{compute_labels, load_panel, normalize, IngestSchema, ReturnLabels, StockPanel};
use crate::predictor::{
    build_train_data, predict_scores, train, ModelCheckpoint, PredictorParams, TraceRow,
    TrainProgress,
};
use crate::sipr::{harvest_segments, kmeans_cluster, segment_series, PatternLibrary, Segmentation};
use crate::swt::{init_filters, tokenize_window, Basis, FilterBank, FilterCheckpoint};

#[derive(Parser)]
#[command(name = "wavesift", version, about = "Pattern-guided wavelet tokenization and cross-sectional backtesting for stock panels", max_term_width = 100)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Fit the pattern library on the index series of the training window
    Cluster(StageArgs),
    /// Match every stock's series against the fitted library
    Segment(StageArgs),
    /// Write the token matrix of the last training window
    Tokenize(StageArgs),
    /// Run two-stage training, resuming from checkpoints when present
    Train(StageArgs),
    /// Score the test days and evaluate the top-K strategy
    Backtest(BacktestArgs),
    /// Render and rank saved metrics reports
    Report(ReportArgs),
}

#[derive(Args)]
pub struct StageArgs {
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for artifacts (overrides `out.dir`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Disable pattern-guided patch positions; use the pure stride grid
    #[arg(long)]
    pub no_sipr: bool,
    /// Use this wavelet basis with frozen taps (haar or db4)
    #[arg(long, value_name = "BASIS")]
    pub fixed_wavelet: Option<String>,
    /// Trailing `--key value` or `--key=value` config overrides
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Model checkpoint (default: OUT/model.json)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Filter checkpoint (default: OUT/filters.json); may come from a run
    /// on a different market
    #[arg(long)]
    pub filters: Option<PathBuf>,
    /// Pattern library (default: OUT/library.json)
    #[arg(long)]
    pub library: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Metrics files; the first is ranked against the rest
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Cluster(args) => cmd_cluster(&load_run_config(&args)?),
        Cmd::Segment(args) => cmd_segment(&load_run_config(&args)?),
        Cmd::Tokenize(args) => cmd_tokenize(&load_run_config(&args)?),
        Cmd::Train(args) => cmd_train(&load_run_config(&args)?),
        Cmd::Backtest(args) => {
            let cfg = load_run_config(&args.stage)?;
            cmd_backtest(&cfg, args.model.as_deref(), args.filters.as_deref(), args.library.as_deref())
        }
        Cmd::Report(args) => cmd_report(&args.reports),
    }
}

fn load_run_config(args: &StageArgs) -> Result<RunConfig> {
    let overrides = parse_override_args(&args.overrides)?;
    let mut cfg = RunConfig::load(Some(&args.config), &overrides)?;
    let fixed: Option<Basis> = match &args.fixed_wavelet {
        Some(s) => Some(s.parse()?),
        None => None,
    };
    cfg.apply_ablations(args.no_sipr, fixed);
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Loaded panel plus the derived quantities every stage needs.
struct Inputs {
    panel: StockPanel,
    norm: StockPanel,
    labels: ReturnLabels,
    /// First day index at or past `split.valid_start`.
    train_end: usize,
    /// First day index at or past `split.test_start`.
    test_begin: usize,
    /// Stock the pattern library is fitted on.
    index_stock: usize,
    price_idx: usize,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let schema =
        IngestSchema { required_features: Some(vec![cfg.price_feature.clone()]) };
    let panel = load_panel(&cfg.data_path, &schema)?;
    let train_end = panel.calendar.partition_point(|d| *d < cfg.valid_start);
    let test_begin = panel.calendar.partition_point(|d| *d < cfg.test_start);
    if train_end < 2 {
        return Err(Error::Config(format!(
            "fewer than 2 days before split.valid_start {}",
            cfg.valid_start
        )));
    }
    if test_begin >= panel.num_days() {
        return Err(Error::Config(format!(
            "no days at or after split.test_start {}",
            cfg.test_start
        )));
    }
    let labels = compute_labels(&panel, &cfg.price_feature)?;
    let norm = normalize(&panel, (panel.calendar[0], panel.calendar[train_end - 1]))?;
    let index_stock = match &cfg.index_symbol {
        Some(sym) => panel.symbol_index(sym)?,
        None => 0,
    };
    let price_idx = panel.feature_index(&cfg.price_feature)?;
    Ok(Inputs { panel, norm, labels, train_end, test_begin, index_stock, price_idx })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// On-disk format for per-stock segmentations.
pub const SEGMENTATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentationFile {
    pub format_version: u32,
    /// Feature the segment matching ran on.
    pub feature: String,
    pub symbols: Vec<String>,
    pub series_len: usize,
    pub segmentations: Vec<Segmentation>,
}

/// On-disk format for the tokenize stage output.
pub const TOKENS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct TokensFile {
    pub format_version: u32,
    pub window_start: usize,
    pub window_len: usize,
    pub patch_len: usize,
    pub levels: usize,
    pub symbols: Vec<String>,
    pub feature_names: Vec<String>,
    /// Patch start positions per stock, within the window.
    pub positions: Vec<Vec<usize>>,
    /// `tokens[stock][feature]` is a positions x patch_len*(levels+1) matrix.
    pub tokens: Vec<Vec<Vec<Vec<f64>>>>,
}

fn segment_all(cfg: &RunConfig, inputs: &Inputs, library: &PatternLibrary) -> Result<Vec<Segmentation>> {
    let mut segs = Vec::with_capacity(inputs.panel.num_stocks());
    for s in 0..inputs.panel.num_stocks() {
        let series = inputs.norm.series(s, inputs.price_idx);
        segs.push(segment_series(&series, library)?);
    }
    let _ = cfg;
    Ok(segs)
}

/// Returns the per-stock segmentations when pattern guidance is on, loading
/// `segmentation.json` if it matches the panel and computing (and saving)
/// it otherwise.
fn ensure_segmentations(cfg: &RunConfig, inputs: &Inputs) -> Result<Option<Vec<Segmentation>>> {
    if !cfg.sipr_enabled {
        return Ok(None);
    }
    let path = cfg.out_dir.join("segmentation.json");
    if path.exists() {
        let file: SegmentationFile = read_json(&path)?;
        if file.format_version != SEGMENTATION_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "segmentation format {} unsupported (current {})",
                file.format_version, SEGMENTATION_FORMAT_VERSION
            )));
        }
        if file.symbols == inputs.panel.symbols
            && file.series_len == inputs.panel.num_days()
            && file.feature == cfg.price_feature
        {
            return Ok(Some(file.segmentations));
        }
        log::warn!("segmentation.json does not match the panel; recomputing");
    }
    let library = load_library(cfg, None)?;
    let segs = segment_all(cfg, inputs, &library)?;
    write_segmentations(cfg, inputs, &segs)?;
    Ok(Some(segs))
}

fn write_segmentations(cfg: &RunConfig, inputs: &Inputs, segs: &[Segmentation]) -> Result<PathBuf> {
    let path = cfg.out_dir.join("segmentation.json");
    let file = SegmentationFile {
        format_version: SEGMENTATION_FORMAT_VERSION,
        feature: cfg.price_feature.clone(),
        symbols: inputs.panel.symbols.clone(),
        series_len: inputs.panel.num_days(),
        segmentations: segs.to_vec(),
    };
    write_json(&path, &file)?;
    Ok(path)
}

fn load_library(cfg: &RunConfig, explicit: Option<&Path>) -> Result<PatternLibrary> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("library.json"));
    if !path.exists() {
        return Err(Error::Data(format!(
            "pattern library {} not found; run the cluster stage first",
            path.display()
        )));
    }
    PatternLibrary::load(&path)
}

fn fresh_bank(cfg: &RunConfig, channels: usize) -> Result<FilterBank> {
    let pair = init_filters(cfg.basis, cfg.basis.taps())?;
    if cfg.per_channel {
        FilterBank::per_channel(pair, channels)
    } else {
        Ok(FilterBank::shared(pair))
    }
}

fn cmd_cluster(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let series = inputs.norm.series(inputs.index_stock, inputs.price_idx);
    let train_series = &series[..inputs.train_end];
    let segments = harvest_segments(
        train_series,
        cfg.cluster.l_min,
        cfg.cluster.l_max,
        cfg.cluster.stride,
    )?;
    let library = kmeans_cluster(&segments, &cfg.cluster)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("library.json");
    library.save(&path)?;
    println!(
        "wrote {}: {} centroids fitted on {} segments of '{}', inertia {:.6}",
        path.display(),
        library.centroids.len(),
        segments.len(),
        inputs.panel.symbols[inputs.index_stock],
        library.inertia
    );
    Ok(())
}

fn cmd_segment(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let library = load_library(cfg, None)?;
    let segs = segment_all(cfg, &inputs, &library)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = write_segmentations(cfg, &inputs, &segs)?;
    let total: usize = segs.iter().map(|s| s.lengths.len()).sum();
    println!(
        "wrote {}: {} series segmented into {} segments",
        path.display(),
        segs.len(),
        total
    );
    Ok(())
}

fn cmd_tokenize(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let segs = ensure_segmentations(cfg, &inputs)?;
    let w = cfg.train.window_len;
    if inputs.train_end < w {
        return Err(Error::Data(format!(
            "training region has {} days, shorter than the window {w}",
            inputs.train_end
        )));
    }
    let window_start = inputs.train_end - w;
    let bank = fresh_bank(cfg, inputs.panel.num_features())?;
    let window = inputs.norm.values.slice(s![.., .., window_start..window_start + w]);
    let coeffs = tokenize_window(window, &bank, cfg.train.levels, cfg.train.padding)?;

    let p = cfg.train.patch.patch_len;
    let s1 = cfg.train.levels + 1;
    let mut positions = Vec::new();
    let mut tokens = Vec::new();
    for s in 0..inputs.panel.num_stocks() {
        let pos = crate::patch::extraction_points(
            segs.as_ref().map(|v| &v[s]),
            window_start,
            w,
            p,
            cfg.train.patch.stride,
            cfg.train.patch.drop_crossing,
        )?;
        let mut per_feature = Vec::new();
        for f in 0..inputs.panel.num_features() {
            let mut rows = Vec::with_capacity(pos.len());
            for point in &pos {
                let mut row = vec![0.0; p * s1];
                for t in 0..p {
                    for lev in 0..s1 {
                        row[t * s1 + lev] = coeffs[(s, f, point.position + t, lev)];
                    }
                }
                rows.push(row);
            }
            per_feature.push(rows);
        }
        positions.push(pos.iter().map(|pt| pt.position).collect());
        tokens.push(per_feature);
    }

    let path = cfg.out_dir.join("tokens.json");
    let file = TokensFile {
        format_version: TOKENS_FORMAT_VERSION,
        window_start,
        window_len: w,
        patch_len: p,
        levels: cfg.train.levels,
        symbols: inputs.panel.symbols.clone(),
        feature_names: inputs.panel.feature_names.clone(),
        positions,
        tokens,
    };
    write_json(&path, &file)?;
    println!(
        "wrote {}: window [{}, {}) tokenized for {} stocks x {} features, token dim {}",
        path.display(),
        window_start,
        window_start + w,
        inputs.panel.num_stocks(),
        inputs.panel.num_features(),
        p * s1
    );
    Ok(())
}

fn write_trace(path: &Path, rows: &[TraceRow], append: bool) -> Result<()> {
    let exists = path.exists();
    let mut writer = if append && exists {
        csv::WriterBuilder::new().has_headers(false).from_writer(
            std::fs::OpenOptions::new().append(true).open(path)?,
        )
    } else {
        csv::Writer::from_path(path)?
    };
    if !(append && exists) {
        writer.write_record(["epoch", "stage", "loss"])?;
    }
    for row in rows {
        writer.write_record([
            row.epoch.to_string(),
            row.stage.to_string(),
            format!("{}", row.loss),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let segs = ensure_segmentations(cfg, &inputs)?;

    let model_path = cfg.out_dir.join("model.json");
    let filters_path = cfg.out_dir.join("filters.json");
    let trace_path = cfg.out_dir.join("trace.csv");
    let resuming = model_path.exists() && filters_path.exists();

    let (mut params, mut progress, mut bank) = if resuming {
        let checkpoint = ModelCheckpoint::load(&model_path)?;
        let (bank, levels) = FilterCheckpoint::load(&filters_path)?.into_bank()?;
        if levels != cfg.train.levels {
            return Err(Error::Config(format!(
                "filter checkpoint was built for {levels} levels, config wants {}",
                cfg.train.levels
            )));
        }
        log::info!(
            "resuming from stage1={} stage2={}",
            checkpoint.progress.stage1_done,
            checkpoint.progress.stage2_done
        );
        (checkpoint.params, checkpoint.progress, bank)
    } else {
        (
            PredictorParams::init(
                cfg.train.patch.patch_len,
                cfg.train.dim,
                cfg.train.levels,
                cfg.seed,
            ),
            TrainProgress::default(),
            fresh_bank(cfg, inputs.panel.num_features())?,
        )
    };

    let panel_train = inputs.norm.slice_days(0, inputs.train_end)?;
    let labels_train =
        ReturnLabels { values: inputs.labels.values.slice(s![.., ..inputs.train_end - 1]).to_owned() };
    let data = build_train_data(&panel_train, &labels_train, segs.as_deref(), &cfg.train, &bank)?;

    let trace = train(&data, &mut params, &mut bank, &cfg.train, &mut progress)?;

    write_trace(&trace_path, &trace, resuming)?;
    ModelCheckpoint::new(params, progress).save(&model_path)?;
    FilterCheckpoint::new(&bank, cfg.train.levels).save(&filters_path)?;

    if trace.is_empty() {
        println!("nothing to do: checkpoints already cover the configured epochs");
    } else {
        for stage in [1u8, 2] {
            let stage_rows: Vec<&TraceRow> = trace.iter().filter(|r| r.stage == stage).collect();
            if let (Some(first), Some(last)) = (stage_rows.first(), stage_rows.last()) {
                println!(
                    "stage {stage}: {} epochs, loss {:.6} -> {:.6}",
                    stage_rows.len(),
                    first.loss,
                    last.loss
                );
            }
        }
    }
    println!(
        "wrote {}, {}, {} ({} samples, {} labeled)",
        model_path.display(),
        filters_path.display(),
        trace_path.display(),
        data.samples.len(),
        data.samples.iter().filter(|s| s.label.is_some()).count()
    );
    Ok(())
}

fn cmd_backtest(
    cfg: &RunConfig,
    model: Option<&Path>,
    filters: Option<&Path>,
    library: Option<&Path>,
) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let model_path =
        model.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("model.json"));
    let filters_path =
        filters.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("filters.json"));
    for (path, stage) in [(&model_path, "train"), (&filters_path, "train")] {
        if !path.exists() {
            return Err(Error::Data(format!(
                "{} not found; run the {stage} stage first or pass an explicit path",
                path.display()
            )));
        }
    }
    let checkpoint = ModelCheckpoint::load(&model_path)?;
    let params = checkpoint.params;
    let (bank, levels) = FilterCheckpoint::load(&filters_path)?.into_bank()?;
    if levels != cfg.train.levels {
        return Err(Error::Config(format!(
            "filter checkpoint was built for {levels} levels, config wants {}",
            cfg.train.levels
        )));
    }
    if params.patch_len != cfg.train.patch.patch_len
        || params.dim != cfg.train.dim
        || params.levels != cfg.train.levels
    {
        return Err(Error::Config(
            "model checkpoint dimensions disagree with the configuration".into(),
        ));
    }
    if !bank.is_shared() && bank.num_pairs() != inputs.panel.num_features() {
        return Err(Error::Config(format!(
            "filter checkpoint has {} channels but the panel has {} features",
            bank.num_pairs(),
            inputs.panel.num_features()
        )));
    }

    let segs = if cfg.sipr_enabled {
        let lib = load_library(cfg, library)?;
        Some(segment_all(cfg, &inputs, &lib)?)
    } else {
        None
    };

    let w = cfg.train.window_len;
    let t_total = inputs.panel.num_days();
    let first = inputs.test_begin.max(w - 1);
    if first + 1 >= t_total {
        return Err(Error::Data(
            "no test day has both a full trailing window and a next-day return".into(),
        ));
    }
    let scored: Vec<usize> = (first..t_total - 1).collect();

    let bench_idx = match &cfg.benchmark_symbol {
        Some(sym) => Some(inputs.panel.symbol_index(sym)?),
        None => None,
    };
    let universe: Vec<usize> =
        (0..inputs.panel.num_stocks()).filter(|s| Some(*s) != bench_idx).collect();
    if universe.len() < cfg.top_k {
        return Err(Error::Config(format!(
            "top_k {} exceeds the {}-stock universe",
            cfg.top_k,
            universe.len()
        )));
    }

    let mut scores = ndarray::Array2::<f64>::zeros((scored.len(), universe.len()));
    let mut returns = ndarray::Array2::<f64>::zeros((scored.len(), universe.len()));
    for (row, &t) in scored.iter().enumerate() {
        let window_start = t + 1 - w;
        let window = inputs.norm.values.slice(s![.., .., window_start..t + 1]);
        let day_scores =
            predict_scores(window, segs.as_deref(), window_start, &params, &bank, &cfg.train)?;
        for (col, &s) in universe.iter().enumerate() {
            scores[(row, col)] = day_scores[s];
            returns[(row, col)] = inputs.labels.values[(s, t)];
        }
    }
    let dates: Vec<chrono::NaiveDate> = scored.iter().map(|&t| inputs.panel.calendar[t]).collect();
    let curve = topk_backtest(&dates, &scores, &returns, cfg.top_k)?;

    let bench_returns: Option<Vec<f64>> =
        bench_idx.map(|b| scored.iter().map(|&t| inputs.labels.values[(b, t)]).collect());
    let report = compute_metrics(&curve, cfg.periods_per_year, bench_returns.as_deref())?;
    for warning in &report.warnings {
        log::warn!("{warning}");
    }

    let equity_path = cfg.out_dir.join("equity.csv");
    let mut writer = csv::Writer::from_path(&equity_path)?;
    writer.write_record(["date", "daily_return", "equity"])?;
    for i in 0..curve.dates.len() {
        writer.write_record([
            curve.dates[i].to_string(),
            format!("{}", curve.daily_returns[i]),
            format!("{}", curve.equity[i]),
        ])?;
    }
    writer.flush()?;

    let metrics_path = cfg.out_dir.join("metrics.json");
    write_json(&metrics_path, &report)?;
    let table = render_table(&[("strategy".to_string(), &report)]);
    let table_path = cfg.out_dir.join("metrics.txt");
    std::fs::write(&table_path, &table)?;

    print!("{table}");
    println!(
        "scored {} days over {} stocks (top {}); wrote {}, {}, {}",
        scored.len(),
        universe.len(),
        cfg.top_k,
        equity_path.display(),
        metrics_path.display(),
        table_path.display()
    );
    Ok(())
}

fn cmd_report(paths: &[PathBuf]) -> Result<()> {
    let mut named: Vec<(String, MetricsReport)> = Vec::new();
    for path in paths {
        let report: MetricsReport = read_json(path)?;
        let name = path
            .to_string_lossy()
            .trim_end_matches(".json")
            .trim_end_matches("/metrics")
            .to_string();
        named.push((name, report));
    }
    let rows: Vec<(String, &MetricsReport)> =
        named.iter().map(|(n, r)| (n.clone(), r)).collect();
    print!("{}", render_table(&rows));
    if named.len() > 1 {
        let (first, rest) = named.split_first().expect("non-empty");
        let rankings = crate::backtest::compare_reports((&first.0, &first.1), rest);
        println!();
        for r in &rankings {
            let direction = if r.higher_is_better { "higher" } else { "lower" };
            println!(
                "{}: '{}' ranks {} of {} ({} is better)",
                r.metric,
                first.0,
                r.candidate_rank,
                named.len(),
                direction
            );
        }
    }
    Ok(())
}
