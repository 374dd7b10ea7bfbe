//! `pmu`: uncertainty propagation and stream safety evaluation from the
//! command line.
//!
//! Machine-readable JSON goes to stdout, human summaries to stderr.
//! Exit codes: 0 success/compliant, 1 computation error, 2 violations
//! (or under-coverage) found, 64 usage error. Seeds are always explicit
//! flags; there is deliberately no environment-variable fallback.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pmu_core::distributions::InputSet;
use pmu_core::pipeline::config::{NoiseSpec, PipelineConfig};
use pmu_core::pipeline::frame::{load_frames, save_frames, Frame};
use pmu_core::pipeline::synth::{synth_generate, TrajectoryKind, TrajectorySpec, SPEED_PRESETS};
use pmu_core::pipeline::validate::validate_against_ground_truth;
use pmu_core::pipeline::{evaluate_stream, EvaluationTrace};
use pmu_core::{
    conserved_series, estimate_typeb, propagate_correlated, propagate_mc, ConservationSpec,
    McConfig, MeasurementModel, PropagationResult, TypeBEstimate,
};

const EXIT_VIOLATIONS: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "pmu",
    version,
    about = "Propagated measurement uncertainty: one-shot propagation, stream safety \
             evaluation, synthetic streams, ground-truth validation, and uncertainty \
             estimation from conserved quantities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate input uncertainties through a measurement model once
    Propagate(PropagateArgs),
    /// Evaluate a recorded stream against safety limits
    Evaluate(EvaluateArgs),
    /// Generate a matched true/measured synthetic stream pair
    Synth(SynthArgs),
    /// Check claimed uncertainties against a ground-truth stream
    Validate(ValidateArgs),
    /// Estimate uncertainty from a series that should be constant
    Typeb(TypebArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => return exit_for_clap(err),
    };
    let outcome = match &cli.command {
        Command::Propagate(args) => run_propagate(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Synth(args) => run_synth(args),
        Command::Validate(args) => run_validate(args),
        Command::Typeb(args) => run_typeb(args),
    };
    match outcome {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

/// clap reserves exit code 2 for argument errors; our contract gives 2 to
/// safety violations, so usage problems are remapped to 64.
fn exit_for_clap(err: clap::Error) -> ExitCode {
    use clap::error::ErrorKind;
    let informational = matches!(
        err.kind(),
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
    );
    let _ = err.print();
    if informational {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_USAGE)
    }
}

enum CliError {
    /// Bad flags or missing files: exit 64.
    Usage(String),
    /// The computation itself failed: exit 1.
    Failure(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(err: E) -> Self {
        CliError::Failure(err.to_string())
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|err| {
        if err.kind() == std::io::ErrorKind::NotFound {
            CliError::Usage(format!("no such file: {}", path.display()))
        } else {
            CliError::Failure(format!("{}: {err}", path.display()))
        }
    })
}

fn load_stream(path: &Path) -> Result<Vec<Frame>, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("no such file: {}", path.display())));
    }
    load_frames(path).map_err(|err| CliError::Failure(format!("{}: {err}", path.display())))
}

/// Prints `value` as pretty JSON on stdout and returns the rendered text
/// so callers can write the identical bytes to a file.
fn emit<T: Serialize>(value: &T) -> Result<String, CliError> {
    let json = serde_json::to_string_pretty(value)?;
    println!("{json}");
    Ok(json)
}

// --- propagate ---------------------------------------------------------

#[derive(Args)]
struct PropagateArgs {
    /// Input distributions as JSON: {"inputs":[{"name":...,"kind":"gaussian",
    /// "mean":...,"std":...},...],"covariance":[[...],...]?}
    #[arg(long)]
    inputs: PathBuf,
    /// Builtin model name (distance3d, relative-speed) or an s-expression
    /// over the input names, e.g. "(add x (mul 2 y))"
    #[arg(long)]
    model: String,
    /// Monte-Carlo propagation (the default)
    #[arg(long, conflicts_with = "analytic")]
    mc: bool,
    /// First-order analytic propagation instead of sampling
    #[arg(long)]
    analytic: bool,
    /// Monte-Carlo trial count
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Monte-Carlo seed; required unless --analytic
    #[arg(long)]
    seed: Option<u64>,
    /// Coverage probability of the Monte-Carlo interval (analytic always
    /// reports the 95% k = 1.96 interval)
    #[arg(long, default_value_t = 0.95)]
    coverage: f64,
    /// Write the sorted Monte-Carlo output sample here, one value per line
    #[arg(long)]
    dump_sample: Option<PathBuf>,
}

fn run_propagate(args: &PropagateArgs) -> Result<ExitCode, CliError> {
    let inputs = InputSet::from_json(&read_input(&args.inputs)?).map_err(CliError::Failure)?;
    let model = resolve_model(&args.model, inputs.names())?;

    let result = if args.analytic {
        propagate_correlated(&model, &inputs)?
    } else {
        let seed = args
            .seed
            .ok_or_else(|| CliError::Usage("--seed is required for Monte-Carlo runs".into()))?;
        let cfg = McConfig {
            trials: args.trials,
            seed,
            coverage: args.coverage,
            retain_sample: args.dump_sample.is_some(),
        };
        propagate_mc(&model, &inputs, &cfg)?
    };

    if let Some(path) = &args.dump_sample {
        dump_sample(path, &result)?;
    }
    emit(&result)?;
    eprintln!(
        "{}: estimate {} u_prop {} interval [{}, {}] at {}",
        result.method.as_str(),
        result.estimate,
        result.u_prop,
        result.interval.0,
        result.interval.1,
        result.coverage,
    );
    Ok(ExitCode::SUCCESS)
}

/// A builtin name wins; anything else is parsed as an expression over the
/// declared input names.
fn resolve_model(spec: &str, input_names: &[String]) -> Result<MeasurementModel, CliError> {
    let spec = spec.trim();
    if let Some(model) = MeasurementModel::builtin(spec) {
        return Ok(model);
    }
    MeasurementModel::parse(spec, input_names)
        .map_err(|err| CliError::Failure(format!("model {spec:?}: {err}")))
}

fn dump_sample(path: &Path, result: &PropagationResult) -> Result<(), CliError> {
    let sample = result
        .sample
        .as_ref()
        .ok_or_else(|| CliError::Usage("--dump-sample needs a Monte-Carlo run".into()))?;
    let mut text = String::with_capacity(sample.len() * 20);
    for value in sample {
        writeln!(text, "{value}").expect("string write");
    }
    fs::write(path, text).map_err(|err| CliError::Failure(format!("{}: {err}", path.display())))?;
    Ok(())
}

// --- evaluate ----------------------------------------------------------

#[derive(Args)]
struct EvaluateArgs {
    /// Frame stream: CSV with header t,entity,x,y,z or JSON-lines
    #[arg(long)]
    stream: PathBuf,
    /// Pipeline configuration JSON (pair, noise, model, limits, mc, ...)
    #[arg(long)]
    config: PathBuf,
    /// Also write the stdout report to this file
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write a per-frame CSV trace (one row per frame) for plotting
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn run_evaluate(args: &EvaluateArgs) -> Result<ExitCode, CliError> {
    let frames = load_stream(&args.stream)?;
    let config = PipelineConfig::from_json(&read_input(&args.config)?)?;
    let trace = evaluate_stream(&frames, &config)?;

    let json = emit(&trace)?;
    if let Some(path) = &args.report {
        fs::write(path, format!("{json}\n"))
            .map_err(|err| CliError::Failure(format!("{}: {err}", path.display())))?;
    }
    if let Some(path) = &args.trace {
        write_trace_csv(path, &trace)?;
    }

    let report = &trace.report;
    eprintln!(
        "{} frames at {:.2} fps: {} violation(s), PFDH {:e}/h vs threshold {:e}/h -> {}",
        report.frames,
        trace.f_p,
        report.violations,
        report.pfdh,
        report.threshold,
        if report.compliant { "compliant" } else { "NOT compliant" },
    );
    eprintln!(
        "noise model: relative {} absolute {} m velocity_coeff {} correlation {}",
        config.noise.relative,
        config.noise.absolute,
        config.noise.velocity_coeff,
        config.noise.correlation,
    );
    if report.violations > 0 {
        Ok(ExitCode::from(EXIT_VIOLATIONS))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

/// One row per frame. Speed columns are empty on the first frame, which
/// has no backward difference.
fn write_trace_csv(path: &Path, trace: &EvaluationTrace) -> Result<(), CliError> {
    let mut text = String::from("t,distance,u_distance,speed,u_speed,verdict,margin\n");
    for frame in &trace.frames {
        let (speed, u_speed) = match &frame.speed {
            Some(s) => (s.estimate.to_string(), s.u_prop.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            frame.t,
            frame.distance.estimate,
            frame.distance.u_prop,
            speed,
            u_speed,
            if frame.safe { "safe" } else { "violation" },
            frame.margin,
        )
        .expect("string write");
    }
    fs::write(path, text).map_err(|err| CliError::Failure(format!("{}: {err}", path.display())))
}

// --- synth -------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum PathShape {
    Linear,
    Circular,
}

#[derive(Args)]
struct SynthArgs {
    /// Frame rate in frames per second
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Stream length in seconds
    #[arg(long)]
    duration: f64,
    /// Noise seed; mandatory so runs are reproducible by construction
    #[arg(long)]
    seed: u64,
    /// Path geometry for the moving entity
    #[arg(long, value_enum, default_value_t = PathShape::Linear)]
    path: PathShape,
    /// Linear path start, "x,y,z" in meters
    #[arg(long, value_parser = parse_vec3, default_value = "1.2,0.0,0.8")]
    from: [f64; 3],
    /// Linear path end
    #[arg(long, value_parser = parse_vec3, default_value = "1.2,2.0,0.8")]
    to: [f64; 3],
    /// Circle center (circular path orbits in the XY plane)
    #[arg(long, value_parser = parse_vec3, default_value = "0.0,1.5,0.8")]
    center: [f64; 3],
    /// Circle radius in meters
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Constant path speed in m/s; overrides --speed-preset
    #[arg(long, conflicts_with = "speed_preset")]
    speed: Option<f64>,
    /// Speed preset 1..=3 (slow, medium, fast); default 2
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    speed_preset: Option<u8>,
    /// Name of the moving, noise-carrying entity
    #[arg(long, default_value = "human")]
    entity: String,
    /// Static exactly-known entity as "name=x,y,z"; repeatable.
    /// Defaults to robot=0,0,0.8 when omitted
    #[arg(long = "static", value_parser = parse_static)]
    static_entities: Vec<(String, [f64; 3])>,
    /// Camera noise relative to coordinate magnitude
    #[arg(long, default_value_t = 0.0)]
    relative: f64,
    /// Camera noise floor in meters
    #[arg(long, default_value_t = 1e-3)]
    absolute: f64,
    /// Velocity-proportional noise per meter travelled between frames
    #[arg(long, default_value_t = 0.0)]
    velocity_coeff: f64,
    /// Correlation between camera and velocity noise terms
    #[arg(long, default_value_t = 0.5)]
    correlation: f64,
    /// Ground-truth output stream (.csv or .jsonl)
    #[arg(long)]
    out_true: PathBuf,
    /// Measured (noisy) output stream
    #[arg(long)]
    out_measured: PathBuf,
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    frames: usize,
    f_p: f64,
    duration: f64,
    seed: u64,
    entity: &'a str,
    speed: f64,
    out_true: &'a Path,
    out_measured: &'a Path,
}

fn run_synth(args: &SynthArgs) -> Result<ExitCode, CliError> {
    let speed = match (args.speed, args.speed_preset) {
        (Some(v), _) => v,
        (None, Some(i)) => SPEED_PRESETS[usize::from(i) - 1],
        (None, None) => SPEED_PRESETS[1],
    };
    let kind = match args.path {
        PathShape::Linear => TrajectoryKind::Linear {
            from: args.from,
            to: args.to,
        },
        PathShape::Circular => TrajectoryKind::Circular {
            center: args.center,
            radius: args.radius,
        },
    };
    let mut static_entities: std::collections::BTreeMap<String, [f64; 3]> =
        args.static_entities.iter().cloned().collect();
    if static_entities.is_empty() {
        static_entities.insert("robot".into(), [0.0, 0.0, 0.8]);
    }
    let spec = TrajectorySpec {
        kind,
        speed,
        entity: args.entity.clone(),
        static_entities,
    };
    let noise = NoiseSpec {
        relative: args.relative,
        absolute: args.absolute,
        velocity_coeff: args.velocity_coeff,
        correlation: args.correlation,
    };

    let (truth, measured) = synth_generate(&spec, &noise, args.fps, args.duration, args.seed)?;
    save_frames(&args.out_true, &truth)?;
    save_frames(&args.out_measured, &measured)?;

    emit(&SynthSummary {
        frames: truth.len(),
        f_p: args.fps,
        duration: args.duration,
        seed: args.seed,
        entity: &args.entity,
        speed,
        out_true: &args.out_true,
        out_measured: &args.out_measured,
    })?;
    eprintln!(
        "wrote {} frames at {} fps ({} moving at {} m/s) to {} and {}",
        truth.len(),
        args.fps,
        args.entity,
        speed,
        args.out_true.display(),
        args.out_measured.display(),
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_vec3(text: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z; got {} component(s)", parts.len()));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("{part:?}: {e}"))?;
        if !slot.is_finite() {
            return Err(format!("{part:?}: coordinates must be finite"));
        }
    }
    Ok(out)
}

fn parse_static(text: &str) -> Result<(String, [f64; 3]), String> {
    let (name, coords) = text
        .split_once('=')
        .ok_or_else(|| "expected name=x,y,z".to_string())?;
    if name.is_empty() {
        return Err("entity name is empty".into());
    }
    Ok((name.to_string(), parse_vec3(coords)?))
}

// --- validate ----------------------------------------------------------

#[derive(Args)]
struct ValidateArgs {
    /// Ground-truth stream (the synth --out-true file)
    #[arg(long = "true")]
    truth: PathBuf,
    /// Measured stream the claims are evaluated on
    #[arg(long)]
    measured: PathBuf,
    /// Pipeline configuration JSON; its noise section is the claim under test
    #[arg(long)]
    config: PathBuf,
}

fn run_validate(args: &ValidateArgs) -> Result<ExitCode, CliError> {
    let truth = load_stream(&args.truth)?;
    let measured = load_stream(&args.measured)?;
    let config = PipelineConfig::from_json(&read_input(&args.config)?)?;

    let trace = evaluate_stream(&measured, &config)?;
    let record = validate_against_ground_truth(
        &truth,
        &measured,
        &trace,
        config.mc.coverage,
        config.containment,
    )?;

    emit(&record)?;
    eprintln!(
        "containment {}/{} = {:.4} at coverage {}; mean PMU {:.6} m vs ground-truth std {:.6} m",
        record.contained,
        record.frames,
        record.containment_rate,
        record.coverage,
        record.mean_pmu,
        record.ground_truth_std,
    );
    if record.under_covered {
        eprintln!("claimed uncertainty is too small for the scatter actually present");
        Ok(ExitCode::from(EXIT_VIOLATIONS))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

// --- typeb -------------------------------------------------------------

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).multiple(false)))]
struct TypebArgs {
    /// Plain series file, one measured value per line
    #[arg(long, group = "source")]
    series: Option<PathBuf>,
    /// Frame stream to extract conserved segment lengths from
    #[arg(long, group = "source", requires = "conservation")]
    frames: Option<PathBuf>,
    /// Conservation spec JSON {"name","jointA","jointB"}, or an array of them
    #[arg(long, conflicts_with = "series")]
    conservation: Option<PathBuf>,
}

#[derive(Serialize)]
struct NamedEstimate {
    name: String,
    #[serde(flatten)]
    estimate: TypeBEstimate,
}

fn run_typeb(args: &TypebArgs) -> Result<ExitCode, CliError> {
    if let Some(path) = &args.series {
        let series = parse_series(&read_input(path)?)?;
        let estimate = estimate_typeb(&series)?;
        emit(&estimate)?;
        eprint_estimate("series", &estimate);
        return Ok(ExitCode::SUCCESS);
    }

    let frames_path = args.frames.as_ref().expect("clap enforces the group");
    let conservation_path = args
        .conservation
        .as_ref()
        .expect("clap enforces the dependency");
    let frames = load_stream(frames_path)?;
    let specs = parse_conservation(&read_input(conservation_path)?)?;

    let mut estimates = Vec::with_capacity(specs.len());
    for spec in &specs {
        let series = conserved_series(&frames, spec)?;
        let estimate = estimate_typeb(&series)?;
        eprint_estimate(&spec.name, &estimate);
        estimates.push(NamedEstimate {
            name: spec.name.clone(),
            estimate,
        });
    }
    emit(&estimates)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_series(text: &str) -> Result<Vec<f64>, CliError> {
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: f64 = line
            .parse()
            .map_err(|e| CliError::Failure(format!("series line {}: {e}", idx + 1)))?;
        values.push(value);
    }
    Ok(values)
}

/// Accepts a single spec object or an array of them.
fn parse_conservation(text: &str) -> Result<Vec<ConservationSpec>, CliError> {
    if let Ok(specs) = serde_json::from_str::<Vec<ConservationSpec>>(text) {
        return Ok(specs);
    }
    let single: ConservationSpec = serde_json::from_str(text)?;
    Ok(vec![single])
}

fn eprint_estimate(name: &str, estimate: &TypeBEstimate) {
    match estimate.relative {
        Some(rel) => eprintln!(
            "{name}: mean {:.6}, scatter {:.6} ({:.2}% of mean) over {} samples",
            estimate.mean,
            estimate.absolute,
            rel * 100.0,
            estimate.samples,
        ),
        None => eprintln!(
            "{name}: mean {:.6}, scatter {:.6} over {} samples (relative figure undefined near zero mean)",
            estimate.mean, estimate.absolute, estimate.samples,
        ),
    }
}
