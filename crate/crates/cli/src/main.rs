//! `beamsense` — command-line front end for the WLAN sensing pipeline.
//! Subcommands compose over newline-delimited JSON streams: `simulate`
//! makes labeled frames, `sanitize`/`aoa`/`features` transform them,
//! `train`/`detect`/`eval` run the motion detector, `publish` streams
//! events over TCP, and `eval-suite` reproduces the bundled experiment
//! tables. Exit codes: 0 success, 1 data/runtime error, 2 bad config.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beamsense::eval::{render_table1, render_table2, run_suite, ExperimentPlan};
use beamsense::{
    evaluate, publish_events, read_feature_vectors, synthesize_sequence, train_svm, write_record,
    DetectionEvent, DetectorMode, Error, FrameReader, Pipeline, PipelineConfig, PublisherConfig,
    RecordReader, Result, Scenario, SvmModel,
};

#[derive(Parser)]
#[command(name = "beamsense", version, about = "Beam-space WLAN sensing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled CSI frame stream
    Simulate(SimulateArgs),
    /// Remove the per-frame phase slope and offset from a frame stream
    Sanitize(IoArgs),
    /// Track per-window AoA estimates over a frame stream
    Aoa(PipelineArgs),
    /// Extract per-window motion features from a frame stream
    Features(FeaturesArgs),
    /// Fit the SVM detector on a labeled feature file
    Train(TrainArgs),
    /// Run motion detection over a frame stream
    Detect(DetectArgs),
    /// Score a trained model against a labeled feature file
    Eval(EvalArgs),
    /// Stream an event file to a TCP endpoint as JSON lines
    Publish(PublishArgs),
    /// Run a two-setup evaluation plan and write the report tables
    EvalSuite(SuiteArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario description (TOML)
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of frames
    #[arg(long)]
    frames: Option<u64>,
    /// Output file (default: stdout)
    #[arg(short, long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IoArgs {
    /// Input frame stream (default: stdin)
    #[arg(value_name = "FILE")]
    input: Option<PathBuf>,
    /// Output file (default: stdout)
    #[arg(short, long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Input frame stream (default: stdin)
    #[arg(value_name = "FILE")]
    input: Option<PathBuf>,
    /// Pipeline configuration (TOML); built-in defaults when omitted
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output file (default: stdout)
    #[arg(short, long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Also write the per-window AoA estimates here
    #[arg(long, value_name = "FILE")]
    aoa: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled feature file (default: stdin)
    #[arg(value_name = "FILE")]
    input: Option<PathBuf>,
    /// Pipeline configuration (TOML); built-in defaults when omitted
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Corpus name recorded in the model
    #[arg(long, default_value = "training")]
    name: String,
    /// Output file (default: stdout)
    #[arg(short, long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Input frame stream (default: stdin)
    #[arg(value_name = "FILE")]
    input: Option<PathBuf>,
    /// Pipeline configuration (TOML); built-in defaults when omitted
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Trained model (required unless the config selects threshold mode)
    #[arg(short, long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Event output file (default: stdout)
    #[arg(short, long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also publish events to this TCP endpoint
    #[arg(long, value_name = "HOST:PORT")]
    endpoint: Option<String>,
    /// Print the published lines instead of connecting
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Labeled feature file (default: stdin)
    #[arg(value_name = "FILE")]
    input: Option<PathBuf>,
    /// Trained model
    #[arg(short, long, value_name = "FILE")]
    model: PathBuf,
}

#[derive(Args)]
struct PublishArgs {
    /// Event file (default: stdin)
    #[arg(value_name = "FILE")]
    input: Option<PathBuf>,
    /// Target TCP endpoint
    #[arg(long, value_name = "HOST:PORT", required_unless_present = "dry_run")]
    endpoint: Option<String>,
    /// Print the lines instead of connecting
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SuiteArgs {
    /// Experiment plan (TOML); the bundled desk plan when omitted
    #[arg(long, value_name = "FILE")]
    plan: Option<PathBuf>,
    /// Report directory
    #[arg(short, long, value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Sanitize(a) => sanitize(a),
        Command::Aoa(a) => aoa(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::Publish(a) => publish(a),
        Command::EvalSuite(a) => eval_suite(a),
    }
}

fn open_input(path: &Option<PathBuf>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(fs::File::open(p)?)),
        None => Box::new(BufReader::new(io::stdin())),
    })
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout())),
    })
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_toml(&fs::read_to_string(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_model(path: &Path) -> Result<SvmModel> {
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Data(format!("model parse: {e}")))
}

fn pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("serialize: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Feeds a frame stream through the pipeline; records that already carry
/// sanitization parameters skip the regression stage.
fn run_over_stream(
    cfg: &PipelineConfig,
    input: &Option<PathBuf>,
    model: Option<SvmModel>,
    mut on_event: impl FnMut(&DetectionEvent) -> Result<()>,
) -> Result<Pipeline> {
    let mut pipeline = Pipeline::new(cfg, model)?;
    let reader = FrameReader::with_expected_shape(
        open_input(input)?,
        cfg.num_antennas,
        cfg.num_subcarriers,
    );
    for record in reader {
        let record = record?;
        let events = if record.tau_hat_s.is_some() || record.xi_hat_rad.is_some() {
            pipeline.push_sanitized(record.to_sanitized()?)?
        } else {
            pipeline.push(record.to_frame()?)?
        };
        for event in &events {
            on_event(event)?;
        }
    }
    Ok(pipeline)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut scenario = Scenario::from_toml(&fs::read_to_string(&a.scenario)?)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(frames) = a.frames {
        scenario.num_frames = frames;
    }
    let frames = synthesize_sequence(&scenario)?;
    let mut out = open_output(&a.out)?;
    for frame in &frames {
        write_record(&mut out, &beamsense::FrameRecord::from_frame(frame))?;
    }
    out.flush()?;
    Ok(())
}

fn sanitize(a: IoArgs) -> Result<()> {
    let reader = FrameReader::new(open_input(&a.input)?);
    let mut out = open_output(&a.out)?;
    for record in reader {
        let sanitized = beamsense::sanitize_frame(&record?.to_frame()?)?;
        write_record(&mut out, &beamsense::FrameRecord::from_sanitized(&sanitized))?;
    }
    out.flush()?;
    Ok(())
}

fn aoa(a: PipelineArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let pipeline = run_over_stream(&cfg, &a.input, None, |_| Ok(()))?;
    let mut out = open_output(&a.out)?;
    for est in pipeline.aoa_estimates() {
        write_record(&mut out, est)?;
    }
    out.flush()?;
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let cfg = load_config(&a.pipeline.config)?;
    let pipeline = run_over_stream(&cfg, &a.pipeline.input, None, |_| Ok(()))?;
    let mut out = open_output(&a.pipeline.out)?;
    for fv in pipeline.features() {
        write_record(&mut out, fv)?;
    }
    out.flush()?;
    if let Some(path) = &a.aoa {
        let mut writer = io::BufWriter::new(fs::File::create(path)?);
        for est in pipeline.aoa_estimates() {
            write_record(&mut writer, est)?;
        }
        writer.flush()?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let corpus = read_feature_vectors(open_input(&a.input)?)?;
    let model = train_svm(&corpus, &cfg.feature_layout()?, &cfg.train_options(), &a.name)?;
    let mut out = open_output(&a.out)?;
    out.write_all(pretty_json(&model)?.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn detect(a: DetectArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let model = match (&a.model, cfg.detector) {
        (Some(path), _) => Some(load_model(path)?),
        (None, DetectorMode::Threshold) => None,
        (None, DetectorMode::Svm) => {
            return Err(Error::Config("svm detector mode needs --model".into()))
        }
    };
    let mut out = open_output(&a.out)?;
    let wants_publish = a.endpoint.is_some() || a.dry_run;
    let mut published: Vec<DetectionEvent> = Vec::new();
    run_over_stream(&cfg, &a.input, model, |event| {
        write_record(&mut out, event)?;
        if wants_publish {
            published.push(event.clone());
        }
        Ok(())
    })?;
    out.flush()?;
    if wants_publish {
        let mut pcfg = PublisherConfig::new(a.endpoint.clone().unwrap_or_default());
        pcfg.dry_run = a.dry_run;
        let report = publish_events(&pcfg, &published)?;
        eprintln!(
            "published {} events ({} dropped, {} reconnects)",
            report.sent, report.dropped, report.reconnects
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let corpus = read_feature_vectors(open_input(&a.input)?)?;
    let report = evaluate(&model, &corpus)?;
    io::stdout().write_all(pretty_json(&report)?.as_bytes())?;
    Ok(())
}

fn publish(a: PublishArgs) -> Result<()> {
    let reader: RecordReader<_, DetectionEvent> = RecordReader::new(open_input(&a.input)?);
    let events = reader.collect::<Result<Vec<_>>>()?;
    let mut pcfg = PublisherConfig::new(a.endpoint.clone().unwrap_or_default());
    pcfg.dry_run = a.dry_run;
    let report = publish_events(&pcfg, &events)?;
    eprintln!(
        "published {} events ({} dropped, {} reconnects)",
        report.sent, report.dropped, report.reconnects
    );
    Ok(())
}

fn eval_suite(a: SuiteArgs) -> Result<()> {
    let plan = match &a.plan {
        Some(path) => ExperimentPlan::from_toml(&fs::read_to_string(path)?)?,
        None => ExperimentPlan::default_plan()?,
    };
    let outcome = run_suite(&plan, &a.out)?;
    print!("{}", render_table1(&outcome.table1));
    println!();
    print!("{}", render_table2(&outcome.table2));
    println!();
    println!("reports written to {}", a.out.display());
    if !outcome.violations.is_empty() {
        for v in &outcome.violations {
            eprintln!("ordering violated: {v}");
        }
        return Err(Error::Data(format!(
            "{} ordering check(s) failed",
            outcome.violations.len()
        )));
    }
    Ok(())
}
