//! `lapdetect`: file-based front end to the lookahead-bias toolkit.
//!
//! Data goes to files or stdout. Failures print one JSON object on stderr,
//! `{"error": <kind>, "message": <text>}`, and exit nonzero (2 for a missing
//! input, 3 for an input that no longer matches a recorded manifest, 1
//! otherwise). Every run writes one manifest.

mod manifest;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lapdetect::detection::{
    detect_with_spec, histogram_export, horserace_spec, pairs_bootstrap_with, run_size_interaction,
    write_histogram_csv, BootstrapConfig, BootstrapResult, Covariate, DetectionConfig, DetectionReport,
};
use lapdetect::lap::{batch_lap, read_lap_csv, read_prompts_jsonl, write_lap_csv, LapRow};
use lapdetect::panel::{
    build_capex_panel, build_return_panel, mark_small, read_csv_rows, read_panel_csv, split_periods, standardize,
    write_drop_log, write_panel_csv, BuildOptions, CallEvent, CapexRow, ClusterBy, Column, HeadlineEvent,
    MarketCapRow, MarketCapTable, PanelDataset, PromptInputs, ReturnRow, ReturnTable, SplitConfig,
};
use lapdetect::parser::{
    parse_capex_response, parse_headline_response, read_verdict_csv, write_verdict_csv, VerdictRow,
};
use lapdetect::regression::{fit, FitResult, RegressionSpec, Term};
use lapdetect::report::{render_table, ReportOptions};
use lapdetect::simulator::{
    empirical_mse, generate, prop1_oracle, prop1_spec, write_mse_csv, write_truth_csv, DgpConfig,
};
use serde::{Deserialize, Serialize};

use manifest::{CliError, Run};

#[derive(Parser)]
#[command(name = "lapdetect", version, about = "Detect lookahead bias in LLM forecasts")]
struct Cli {
    /// Worker threads for bootstrap and batch LAP. Results do not depend on it.
    #[arg(long, global = true, env = "LAPDETECT_THREADS")]
    threads: Option<usize>,

    /// Where to write the run manifest [default: <first output>.manifest.json,
    /// or lapdetect-<subcommand>.manifest.json when output goes to stdout]
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Refuse to run if an input differs from the hash recorded in this
    /// earlier manifest.
    #[arg(long, global = true)]
    check_manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score prompts: bottom-K% token probability per prompt.
    Lap(LapArgs),
    /// Parse completions into verdict scores.
    Parse(ParseArgs),
    /// Join events, LAP, verdicts and outcomes into a panel.
    BuildPanel(BuildPanelArgs),
    /// Fit the interaction regression and decide.
    Detect(DetectArgs),
    /// Pairs bootstrap of one coefficient.
    Bootstrap(BootstrapArgs),
    /// Generate a synthetic panel from a data-generating process.
    Simulate(SimulateArgs),
    /// Render fits as an aligned text table.
    Report(ReportArgs),
}

impl Command {
    /// The `--out` file, which names the default manifest.
    fn primary_output(&self) -> Option<&Path> {
        match self {
            Command::Lap(a) => a.out.as_deref(),
            Command::Parse(a) => a.out.as_deref(),
            Command::BuildPanel(a) => Some(&a.out),
            Command::Detect(a) => a.out.as_deref(),
            Command::Bootstrap(a) => a.out.as_deref(),
            Command::Simulate(a) => a.out.as_deref(),
            Command::Report(a) => a.out.as_deref(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Lap(_) => "lap",
            Command::Parse(_) => "parse",
            Command::BuildPanel(_) => "build-panel",
            Command::Detect(_) => "detect",
            Command::Bootstrap(_) => "bootstrap",
            Command::Simulate(_) => "simulate",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Args, Serialize)]
struct LapArgs {
    /// Scored-prompt JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    /// LAP CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    k_percent: f64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PromptKind {
    Headline,
    Capex,
}

#[derive(Args, Serialize)]
struct ParseArgs {
    /// Scored-prompt JSONL; `response_text` is parsed.
    #[arg(long = "in")]
    input: PathBuf,
    /// Verdict CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "headline")]
    kind: PromptKind,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PanelKind {
    Returns,
    Capex,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ClusterArg {
    Time,
    Entity,
}

#[derive(Args, Serialize)]
struct BuildPanelArgs {
    #[arg(long, value_enum, default_value = "returns")]
    kind: PanelKind,
    /// Events CSV: prompt_id,entity_id,timestamp (returns) or
    /// prompt_id,entity_id,quarter (capex).
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    lap: PathBuf,
    #[arg(long)]
    verdicts: PathBuf,
    /// Scored-prompt JSONL supplying first-token probabilities.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// entity_id,date,return_pct
    #[arg(long, required_if_eq("kind", "returns"))]
    returns: Option<PathBuf>,
    /// entity_id,quarter,capex_pct
    #[arg(long, required_if_eq("kind", "capex"))]
    capex: Option<PathBuf>,
    /// entity_id,date,mktcap; sets the small-firm flag.
    #[arg(long)]
    market_caps: Option<PathBuf>,
    /// Average same-entity same-day rows.
    #[arg(long)]
    aggregate_daily: bool,
    #[arg(long, value_enum, default_value = "time")]
    cluster_by: ClusterArg,
    /// Also write <out>.in_sample.csv and <out>.out_of_sample.csv using the
    /// named preset (`llama2`) or a JSON split file.
    #[arg(long)]
    split: Option<String>,
    /// Standardize outcome, llm and lap within every panel written.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
    /// CSV of dropped rows with reasons.
    #[arg(long)]
    drop_log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Model {
    /// llm, lap and llm:lap with the baseline alongside.
    Interaction,
    /// Adds the small-firm flag and its interactions.
    Size,
    /// A competing covariate, with or without LAP.
    Horserace,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CovariateArg {
    FirstTokenProb,
    Confidence,
}

#[derive(Args, Serialize)]
struct DetectArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Regression spec JSON; must contain llm and llm:lap.
    #[arg(long, conflicts_with = "config")]
    spec: Option<PathBuf>,
    /// Detection config JSON (fe, cluster, alpha).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum, default_value = "interaction")]
    model: Model,
    #[arg(long, value_enum, required_if_eq("model", "horserace"))]
    covariate: Option<CovariateArg>,
    /// Horse race without the LAP terms.
    #[arg(long)]
    without_lap: bool,
    /// JSON output [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BootstrapArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Regression spec JSON [default: two-way FE interaction model clustered by time]
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "llm:lap")]
    term: String,
    /// Replicates.
    #[arg(long = "B", default_value_t = 999)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Value whose one-sided p-value against the draws is reported.
    #[arg(long, allow_hyphen_values = true)]
    reference: Option<f64>,
    /// Resample whole clusters instead of rows.
    #[arg(long)]
    cluster_resample: bool,
    /// Histogram CSV of the draws.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// JSON output [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Data-generating process JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Panel CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hidden quantities per observation.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Forecast MSE by L, with the analytic value.
    #[arg(long)]
    mse: Option<PathBuf>,
    /// JSON comparing the observable partial covariance with its structural value.
    #[arg(long)]
    prop1: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    /// Fit JSON files: a fit, a list of fits or a detection report.
    #[arg(required = true)]
    fits: Vec<PathBuf>,
    /// Text output [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dependent_label: Option<String>,
    #[arg(long)]
    entity_fe_label: Option<String>,
    #[arg(long)]
    time_fe_label: Option<String>,
}

fn invalid(path: &Path, e: impl std::fmt::Display) -> anyhow::Error {
    CliError::new("InvalidInput", format!("{}: {e}", path.display())).into()
}

fn read_json<T: serde::de::DeserializeOwned>(run: &mut Run, path: &Path) -> Result<T> {
    let data = run.read(path)?;
    serde_json::from_slice(&data).map_err(|e| invalid(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> lapdetect::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn read_panel(run: &mut Run, path: &Path) -> Result<PanelDataset> {
    let data = run.read(path)?;
    Ok(read_panel_csv(data.as_slice())?)
}

fn cmd_lap(run: &mut Run, a: &LapArgs) -> Result<()> {
    let data = run.read(&a.input)?;
    let prompts = read_prompts_jsonl(data.as_slice())?;
    let rows: Vec<LapRow> = batch_lap(&prompts, a.k_percent)?
        .iter()
        .map(|(id, s)| LapRow::new(id, s))
        .collect();
    let out = csv_bytes(|b| write_lap_csv(b, &rows))?;
    run.write(a.out.as_deref(), &out)
}

fn cmd_parse(run: &mut Run, a: &ParseArgs) -> Result<()> {
    let data = run.read(&a.input)?;
    let prompts = read_prompts_jsonl(data.as_slice())?;
    let rows: Vec<VerdictRow> = prompts
        .iter()
        .map(|p| match a.kind {
            PromptKind::Headline => VerdictRow::from_result(&p.prompt_id, &parse_headline_response(&p.response_text)),
            PromptKind::Capex => VerdictRow::from_result(&p.prompt_id, &parse_capex_response(&p.response_text)),
        })
        .collect();
    let out = csv_bytes(|b| write_verdict_csv(b, &rows))?;
    run.write(a.out.as_deref(), &out)
}

fn csv_rows<T: serde::de::DeserializeOwned>(run: &mut Run, path: &Path, what: &str) -> Result<Vec<T>> {
    let data = run.read(path)?;
    read_csv_rows(data.as_slice(), what).map_err(|e| invalid(path, e))
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

const STANDARDIZED: [Column; 3] = [Column::Outcome, Column::Llm, Column::Lap];

fn cmd_build_panel(run: &mut Run, a: &BuildPanelArgs) -> Result<()> {
    let laps = {
        let data = run.read(&a.lap)?;
        read_lap_csv(data.as_slice())?
    };
    let verdicts = {
        let data = run.read(&a.verdicts)?;
        read_verdict_csv(data.as_slice())?
    };
    let first_token_probs: HashMap<String, f64> = match &a.prompts {
        Some(p) => {
            let data = run.read(p)?;
            read_prompts_jsonl(data.as_slice())?
                .into_iter()
                .filter_map(|p| Some((p.prompt_id.clone(), p.first_token_prob()?)))
                .collect()
        }
        None => HashMap::new(),
    };
    let inputs = PromptInputs {
        laps: &laps,
        verdicts: &verdicts,
        first_token_probs: &first_token_probs,
    };
    let options = BuildOptions {
        aggregate_daily: a.aggregate_daily,
        cluster_by: match a.cluster_by {
            ClusterArg::Time => ClusterBy::Time,
            ClusterArg::Entity => ClusterBy::Entity,
        },
    };
    let mut build = match a.kind {
        PanelKind::Returns => {
            let events: Vec<HeadlineEvent> = csv_rows(run, &a.events, "events")?;
            let path = a.returns.as_deref().context("--returns is required")?;
            let returns: Vec<ReturnRow> = csv_rows(run, path, "returns")?;
            build_return_panel(&events, &inputs, &ReturnTable::from_rows(returns), options)
        }
        PanelKind::Capex => {
            let events: Vec<CallEvent> = csv_rows(run, &a.events, "events")?;
            let path = a.capex.as_deref().context("--capex is required")?;
            let capex: Vec<CapexRow> = csv_rows(run, path, "capex")?;
            build_capex_panel(&events, &inputs, &capex, options)
        }
    };
    if let Some(path) = &a.market_caps {
        let caps: Vec<MarketCapRow> = csv_rows(run, path, "market caps")?;
        build.panel = mark_small(&build.panel, &MarketCapTable::from_rows(caps));
    }

    let finish = |p: PanelDataset| -> Result<PanelDataset> {
        Ok(if a.standardize { standardize(&p, &STANDARDIZED)? } else { p })
    };
    let split = match a.split.as_deref() {
        None => None,
        Some("llama2") => Some(SplitConfig::llama2()),
        Some(path) => Some(read_json::<SplitConfig>(run, Path::new(path))?),
    };
    if let Some(split) = split {
        let (ins, oos) = split_periods(&build.panel, &split)?;
        for (part, suffix) in [(ins, "in_sample"), (oos, "out_of_sample")] {
            let part = finish(part)?;
            let out = csv_bytes(|b| write_panel_csv(b, &part))?;
            run.write(Some(&sibling(&a.out, suffix)), &out)?;
        }
    }
    let panel = finish(build.panel.clone())?;
    let out = csv_bytes(|b| write_panel_csv(b, &panel))?;
    run.write(Some(&a.out), &out)?;
    if let Some(path) = &a.drop_log {
        let out = csv_bytes(|b| write_drop_log(b, &build.dropped))?;
        run.write(Some(path), &out)?;
    }
    eprintln!(
        "{} input rows: {} kept, {} dropped, {} merged",
        build.n_input,
        build.panel.len(),
        build.dropped.len(),
        build.n_merged
    );
    Ok(())
}

fn detection_config(run: &mut Run, path: Option<&Path>, alpha: Option<f64>) -> Result<DetectionConfig> {
    let mut config = match path {
        Some(p) => read_json(run, p)?,
        None => DetectionConfig::default(),
    };
    if let Some(a) = alpha {
        config.alpha = a;
    }
    Ok(config)
}

#[derive(Serialize)]
#[serde(untagged)]
enum DetectOutput {
    Report(Box<DetectionReport>),
    Fit(Box<FitResult>),
}

fn cmd_detect(run: &mut Run, a: &DetectArgs) -> Result<()> {
    let panel = read_panel(run, &a.panel)?;
    let config = detection_config(run, a.config.as_deref(), a.alpha)?;
    let output = match a.model {
        Model::Interaction => {
            let spec = match &a.spec {
                Some(p) => read_json::<RegressionSpec>(run, p)?,
                None => config.interaction_spec(),
            };
            run.config["resolved_spec"] = serde_json::to_value(&spec)?;
            DetectOutput::Report(Box::new(detect_with_spec(&panel, &spec, config.alpha)?))
        }
        Model::Size => DetectOutput::Fit(Box::new(run_size_interaction(&panel, &config)?)),
        Model::Horserace => {
            let covariate = match a.covariate {
                Some(CovariateArg::FirstTokenProb) => Covariate::FirstTokenProb,
                Some(CovariateArg::Confidence) => Covariate::Confidence,
                None => bail!(CliError::new("InvalidInput", "--covariate is required for a horse race")),
            };
            let spec = horserace_spec(covariate, !a.without_lap, &config);
            DetectOutput::Fit(Box::new(fit(&spec, &panel)?))
        }
    };
    run.config["detection"] = serde_json::to_value(&config)?;
    run.write(a.out.as_deref(), &to_json(&output)?)
}

#[derive(Serialize)]
struct BootstrapOutput {
    #[serde(flatten)]
    result: BootstrapResult,
    reference: Option<f64>,
    p_value: Option<f64>,
}

fn cmd_bootstrap(run: &mut Run, a: &BootstrapArgs) -> Result<()> {
    let panel = read_panel(run, &a.panel)?;
    let spec = match &a.spec {
        Some(p) => read_json::<RegressionSpec>(run, p)?,
        None => DetectionConfig::default().interaction_spec(),
    };
    let focal: Term = a
        .term
        .parse()
        .map_err(|e| CliError::new("InvalidInput", format!("--term: {e}")))?;
    run.seed = Some(a.seed);
    run.config["resolved_spec"] = serde_json::to_value(&spec)?;
    let config = BootstrapConfig {
        cluster_resample: a.cluster_resample,
        ..BootstrapConfig::new(a.b, a.seed)
    };
    let result = pairs_bootstrap_with(&panel, &spec, &focal, &config)?;
    if result.instability_warning {
        eprintln!(
            "warning: {} degenerate draws were redrawn across {} replicates",
            result.degenerate_redraws, result.b
        );
    }
    if let Some(path) = &a.histogram {
        let hist = histogram_export(&result, a.bins, a.reference)?;
        let out = csv_bytes(|b| write_histogram_csv(b, &hist))?;
        run.write(Some(path), &out)?;
    }
    let output = BootstrapOutput {
        p_value: a.reference.map(|r| result.p_one_sided(r)),
        reference: a.reference,
        result,
    };
    run.write(a.out.as_deref(), &to_json(&output)?)
}

fn cmd_simulate(run: &mut Run, a: &SimulateArgs) -> Result<()> {
    let mut config: DgpConfig = read_json(run, &a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    run.seed = Some(config.seed);
    run.config["dgp"] = serde_json::to_value(&config)?;
    let sim = generate(&config)?;
    if let Some(path) = &a.truth {
        let out = csv_bytes(|b| write_truth_csv(b, &sim))?;
        run.write(Some(path), &out)?;
    }
    if let Some(path) = &a.mse {
        let rows = empirical_mse(&sim);
        let out = csv_bytes(|b| write_mse_csv(b, &rows))?;
        run.write(Some(path), &out)?;
    }
    if let Some(path) = &a.prop1 {
        run.write(Some(path), &to_json(&prop1_oracle(&sim, &prop1_spec())?)?)?;
    }
    let out = csv_bytes(|b| write_panel_csv(b, &sim.panel))?;
    run.write(a.out.as_deref(), &out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FitDocument {
    Report(Box<DetectionReport>),
    Many(Vec<FitResult>),
    One(Box<FitResult>),
}

fn cmd_report(run: &mut Run, a: &ReportArgs) -> Result<()> {
    let mut fits = Vec::new();
    for path in &a.fits {
        match read_json::<FitDocument>(run, path)? {
            FitDocument::Report(r) => fits.extend([r.baseline, r.full]),
            FitDocument::Many(v) => fits.extend(v),
            FitDocument::One(f) => fits.push(*f),
        }
    }
    let defaults = ReportOptions::default();
    let options = ReportOptions {
        dependent_label: a.dependent_label.clone().unwrap_or(defaults.dependent_label),
        entity_fe_label: a.entity_fe_label.clone().unwrap_or(defaults.entity_fe_label),
        time_fe_label: a.time_fe_label.clone().unwrap_or(defaults.time_fe_label),
    };
    run.write(a.out.as_deref(), render_table(&fits, &options).as_bytes())
}

fn dispatch(run: &mut Run, command: &Command) -> Result<()> {
    let args = match command {
        Command::Lap(a) => serde_json::to_value(a),
        Command::Parse(a) => serde_json::to_value(a),
        Command::BuildPanel(a) => serde_json::to_value(a),
        Command::Detect(a) => serde_json::to_value(a),
        Command::Bootstrap(a) => serde_json::to_value(a),
        Command::Simulate(a) => serde_json::to_value(a),
        Command::Report(a) => serde_json::to_value(a),
    }?;
    run.config = serde_json::json!({ "args": args });
    match command {
        Command::Lap(a) => cmd_lap(run, a),
        Command::Parse(a) => cmd_parse(run, a),
        Command::BuildPanel(a) => cmd_build_panel(run, a),
        Command::Detect(a) => cmd_detect(run, a),
        Command::Bootstrap(a) => cmd_bootstrap(run, a),
        Command::Simulate(a) => cmd_simulate(run, a),
        Command::Report(a) => cmd_report(run, a),
    }
}

/// Error kind and exit code for a failure.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    if let Some(e) = err.downcast_ref::<CliError>() {
        let code = match e.kind {
            "InputNotFound" => 2,
            "ManifestMismatch" => 3,
            _ => 1,
        };
        return (e.kind, code);
    }
    if let Some(e) = err.downcast_ref::<lapdetect::Error>() {
        return (e.kind(), 1);
    }
    ("Error", 1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    let mut run = Run::new(cli.command.name());

    let result = (|| {
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::new("InvalidInput", format!("--threads: {e}")))?;
        }
        if let Some(path) = &cli.check_manifest {
            run.expect_inputs_of(path)?;
        }
        dispatch(&mut run, &cli.command)
    })();

    let failure = result.as_ref().err().map(|e| (classify(e), format!("{e:#}")));
    let manifest_path = cli.manifest.clone().unwrap_or_else(|| match cli.command.primary_output() {
        Some(p) => PathBuf::from(format!("{}.manifest.json", p.display())),
        None => PathBuf::from(format!("lapdetect-{}.manifest.json", run.subcommand)),
    });
    let manifest = run.finish(threads, failure.as_ref().map(|((kind, _), _)| kind.to_string()));
    let written = to_json(&manifest).and_then(|bytes| {
        std::fs::write(&manifest_path, bytes).with_context(|| format!("writing {}", manifest_path.display()))
    });

    let failure = match (failure, written) {
        (Some(f), _) => Some(f),
        (None, Err(e)) => Some((("IoError", 1), format!("{e:#}"))),
        (None, Ok(())) => None,
    };
    match failure {
        None => ExitCode::SUCCESS,
        Some(((kind, code), message)) => {
            eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
            ExitCode::from(code)
        }
    }
}
