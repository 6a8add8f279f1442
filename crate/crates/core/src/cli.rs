//! Batch experiment driver: the user-facing surface of the crate.
//!
//! Every experiment is described by a single JSON document (see
//! [`ExperimentConfig`]); the binary's subcommand selects the experiment
//! kind, `--set key=value` flags override individual fields, and all
//! results land in the configured output directory as CSV files with a
//! commented header plus a `summary.json`. Runs are deterministic given
//! their config: re-running reproduces every CSV byte for byte apart from
//! the `runtime_s` column (flagged `volatile` in the header).

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    evolve_state_recorded, evolve_state_snapshots, propagate_gate, GateSystem, IntegratorConfig,
    Observables, DEFAULT_DT,
};
use crate::hilbert::{cat_state, FockSpace, Parity, StateVector};
use crate::metrics::{
    average_fidelity, average_fidelity_loss, gate_fidelity, loss_infidelity_estimate, mean_photon_state,
    minimum_time, wigner_state, FidelityReport, WignerGridSpec,
};
use crate::model::{CounterVariant, GateKind, GateProblem, PhysicalConstants};
use crate::optimizer::{
    calibrate_detuning, optimize_gate, optimize_gate_scheduled, scaled_pulse_fidelity,
    GateOptimizerOptions, OptimizationResult,
};
use crate::pulses::{
    analytic_pulse, apply_perturbation, PulseCoefficients, PulseFile, PulseMeta, PulsePerturbation,
    Waveform,
};
use crate::{Error, Result};

/// Name of the only environment variable the tool reads: the requested
/// worker count for sweeps. This build executes sweeps on one thread, so
/// the value is validated and logged but does not change the results.
pub const WORKERS_ENV: &str = "KPO_GATES_WORKERS";

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// The eight things this tool can do. The binary subcommand must agree with
/// the `experiment` field of the config it is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GateTimeSweep,
    Optimize,
    Trajectory,
    AngleSweep,
    RobustnessGrid,
    LossSweep,
    Wigner,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentKind::GateTimeSweep => "gate_time_sweep",
            ExperimentKind::Optimize => "optimize",
            ExperimentKind::Trajectory => "trajectory",
            ExperimentKind::AngleSweep => "angle_sweep",
            ExperimentKind::RobustnessGrid => "robustness_grid",
            ExperimentKind::LossSweep => "loss_sweep",
            ExperimentKind::Wigner => "wigner",
        };
        f.write_str(s)
    }
}

/// Where the drive waveform comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformSource {
    /// Closed-form pulse (sine / raised cosine) for the configured gate.
    Analytic,
    /// Fourier coefficients loaded from `pulse_file`.
    Optimized,
}

/// Inclusive uniform grid `start, start+step, …, stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !self.start.is_finite() || self.stop < self.start {
            return Err(Error::InvalidConfig(format!(
                "invalid grid: start {}, stop {}, step {}",
                self.start, self.stop, self.step
            )));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        // Grids are human-entered decimals (e.g. 0.1 spacing); round each
        // point to 1e-9 so accumulated binary error does not leak into
        // outputs or hashes.
        Ok((0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

/// One experiment, fully described. All physical quantities are
/// dimensionless: times in `1/K`, rates (`κ`, `Δ`, amplitudes) in `K`.
/// Unknown fields are rejected so typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Which experiment to run; must match the CLI subcommand.
    pub experiment: ExperimentKind,
    pub gate: GateKind,
    /// Counter-drive choice for waveforms that use one.
    #[serde(default = "default_counter")]
    pub counter: CounterVariant,
    /// Target rotation angle in radians; defaults to `π` for Rz and `π/2`
    /// for Rx / Rzz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    /// Waveform source for experiments that propagate a single pulse.
    #[serde(default = "default_waveform")]
    pub waveform: WaveformSource,
    /// Pulse JSON produced by `optimize`; required when `waveform` is
    /// `optimized`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_file: Option<PathBuf>,
    /// Model constants; defaults to `K = 1`, `p = 4K` (`α = 2`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<PhysicalConstants>,
    /// Fock cutoff per mode; defaults to 40 (single mode) / 24 (two modes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
    /// Integration step in `1/K`; defaults to 1e-4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Gate time `K·T` for single-pulse experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kt: Option<f64>,
    /// Gate-time grid for `gate_time_sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kt_grid: Option<GridSpec>,
    /// Rx detuning `Δ/K`; calibrated automatically when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Subset of sweep variants; defaults to all four
    /// (`analytic`, `analytic+counter`, `optimized`, `optimized+counter`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<String>>,
    /// Infidelity threshold used for `KT_min` and contour extraction.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Decreasing gate-time schedule for warm-started optimization; the
    /// last entry is the reported gate time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    /// Optimizer overrides merged over the per-gate defaults
    /// (e.g. `{"restarts": 0, "bfgs": {"max_iterations": 200}}`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<serde_json::Value>,
    /// Loss rates `κ/K` for `loss_sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_grid: Option<Vec<f64>>,
    /// Integration step for Lindblad propagation; defaults to 1e-3
    /// (single mode) / 2e-3 (two modes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_dt: Option<f64>,
    /// Pulse scale factors for `angle_sweep`; defaults to 0.0..1.0 in
    /// steps of 0.1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    /// Relative amplitude errors on `g0` for `robustness_grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0_grid: Option<Vec<f64>>,
    /// Relative amplitude errors on `g1` for `robustness_grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1_grid: Option<Vec<f64>>,
    /// Times (in `1/K`) at which Wigner snapshots are taken.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
    /// Initial states: `cat_plus`, `cat_minus` or `vacuum`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_states: Option<Vec<String>>,
    /// Phase-space grid for Wigner output; defaults to ±4.5, step 0.05.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wigner: Option<WignerGridSpec>,
    /// Record every n-th integrator step in trajectories (auto when
    /// omitted: ≈1000 rows).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Seed for optimizer restart perturbations.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Free-form comment echoed into outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn default_counter() -> CounterVariant {
    CounterVariant::Standard
}

fn default_waveform() -> WaveformSource {
    WaveformSource::Analytic
}

fn default_threshold() -> f64 {
    1e-3
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    7
}

impl ExperimentConfig {
    /// Parses a config document, reporting JSON syntax and schema errors
    /// with the line/column they occur at.
    pub fn from_json(raw: &str) -> Result<Self> {
        serde_json::from_str(raw)
            .map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    pub fn constants(&self) -> PhysicalConstants {
        self.constants.unwrap_or_default()
    }

    /// Rotation angle, defaulting to the standard angle of the gate
    /// (`π` for Rz, `π/2` for Rx and Rzz).
    pub fn angle(&self) -> f64 {
        self.angle.unwrap_or(match self.gate {
            GateKind::Rz => std::f64::consts::PI,
            _ => std::f64::consts::FRAC_PI_2,
        })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
            .unwrap_or(if self.gate.is_two_mode() { 24 } else { 40 })
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(DEFAULT_DT)
    }

    pub fn loss_dt(&self) -> f64 {
        self.loss_dt
            .unwrap_or(if self.gate.is_two_mode() { 2e-3 } else { 1e-3 })
    }

    /// Canonical compact JSON used for hashing: every field that affects
    /// results. The output directory and the free-form note are excluded,
    /// so the same experiment hashes identically wherever it writes.
    pub fn canonical_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("note");
        }
        Ok(serde_json::to_string(&value)?)
    }

    /// SHA-256 of the canonical JSON, lowercase hex.
    pub fn hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json()?.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }

    fn validate(&self) -> Result<()> {
        if let Some(kt) = self.kt {
            if !(kt > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "kt must be positive, got {kt}"
                )));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "dt must be positive, got {dt}"
                )));
            }
        }
        if let Some(c) = self.cutoff {
            if c < 4 {
                return Err(Error::InvalidConfig(format!(
                    "cutoff must be at least 4, got {c}"
                )));
            }
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if let Some(gs) = &self.kt_grid {
            gs.values()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

/// Batch simulator and pulse optimizer for Kerr-parametric-oscillator
/// qubit gates.
#[derive(Debug, Parser)]
#[command(name = "kpo-gates", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Common arguments of every subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Path to the experiment config JSON.
    #[arg(long, short)]
    pub config: PathBuf,

    /// Override one config field: KEY=VALUE with the value parsed as JSON
    /// (falling back to a string); dotted keys descend into objects.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,

    /// Override the output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    /// Override the pulse file.
    #[arg(long)]
    pub pulse: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep gate time; per variant, emit 1-F̄(KT) and the minimum gate
    /// time reaching the threshold.
    GateTimeSweep(RunArgs),
    /// Optimize the pulse waveform for one gate; emits pulse JSON,
    /// iteration trace, waveform samples and a summary.
    Optimize(RunArgs),
    /// Propagate cat states through a pulse, recording observables and
    /// optional Wigner snapshots.
    Trajectory(RunArgs),
    /// Scale an optimized pulse by λ and report the calibrated angle and
    /// fidelity per λ.
    AngleSweep(RunArgs),
    /// Map 1-F̄ over relative amplitude errors (δ0, δ1) and extract the
    /// threshold contour.
    RobustnessGrid(RunArgs),
    /// Sweep the single-photon loss rate; emits the gate curve, the
    /// no-gate reference and the closed-form estimate.
    LossSweep(RunArgs),
    /// Compute Wigner functions of prepared (optionally evolved) states.
    Wigner(RunArgs),
    /// Parse, validate and echo the resolved config without running.
    ValidateConfig(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::GateTimeSweep(a)
            | Command::Optimize(a)
            | Command::Trajectory(a)
            | Command::AngleSweep(a)
            | Command::RobustnessGrid(a)
            | Command::LossSweep(a)
            | Command::Wigner(a)
            | Command::ValidateConfig(a) => a,
        }
    }

    fn expected_kind(&self) -> Option<ExperimentKind> {
        match self {
            Command::GateTimeSweep(_) => Some(ExperimentKind::GateTimeSweep),
            Command::Optimize(_) => Some(ExperimentKind::Optimize),
            Command::Trajectory(_) => Some(ExperimentKind::Trajectory),
            Command::AngleSweep(_) => Some(ExperimentKind::AngleSweep),
            Command::RobustnessGrid(_) => Some(ExperimentKind::RobustnessGrid),
            Command::LossSweep(_) => Some(ExperimentKind::LossSweep),
            Command::Wigner(_) => Some(ExperimentKind::Wigner),
            Command::ValidateConfig(_) => None,
        }
    }
}

/// Entry point used by the binary: parses `std::env::args`, runs, prints
/// the summary JSON to stdout on success or an error JSON to stderr on
/// failure, and returns the exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(&e, code));
            code
        }
    }
}

/// Exit code policy: 2 for configuration/validation problems, 1 for
/// runtime failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::Invalid(_) | Error::PulseMismatch(_) | Error::Json(_) => 2,
        _ => 1,
    }
}

/// Machine-readable error rendering written to stderr (single line).
pub fn error_json(e: &Error, code: i32) -> String {
    let kind = match e {
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::InvalidMode { .. } => "invalid_mode",
        Error::NotHermitian { .. } => "not_hermitian",
        Error::TimeOutOfRange { .. } => "time_out_of_range",
        Error::NonFinite(_) => "non_finite",
        Error::Invalid(_) => "invalid_value",
        Error::InvalidConfig(_) => "invalid_config",
        Error::CalibrationFailed(_) => "calibration_failed",
        Error::PulseMismatch(_) => "pulse_mismatch",
        Error::StepCheckFailed { .. } => "step_check_failed",
        Error::Json(_) => "json",
        Error::Io(_) => "io",
    };
    serde_json::json!({
        "error": { "kind": kind, "message": e.to_string(), "exit_code": code }
    })
    .to_string()
}

/// Loads the config named by `args`, applies `--set`/flag overrides, checks
/// it against the subcommand and runs the experiment. Returns the summary
/// value that is also written to `summary.json` in the output directory.
pub fn run(cli: &Cli) -> Result<serde_json::Value> {
    check_workers_env()?;
    let args = cli.command.args();
    let config = load_config(args)?;
    if let Some(expected) = cli.command.expected_kind() {
        if config.experiment != expected {
            return Err(Error::InvalidConfig(format!(
                "config declares experiment '{}' but the subcommand expects '{expected}'",
                config.experiment
            )));
        }
    }
    config.validate()?;
    let ctx = Ctx::new(config)?;
    match cli.command {
        Command::ValidateConfig(_) => cmd_validate(&ctx),
        Command::GateTimeSweep(_) => cmd_gate_time_sweep(&ctx),
        Command::Optimize(_) => cmd_optimize(&ctx),
        Command::Trajectory(_) => cmd_trajectory(&ctx),
        Command::AngleSweep(_) => cmd_angle_sweep(&ctx),
        Command::RobustnessGrid(_) => cmd_robustness_grid(&ctx),
        Command::LossSweep(_) => cmd_loss_sweep(&ctx),
        Command::Wigner(_) => cmd_wigner(&ctx),
    }
}

fn check_workers_env() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().map_err(|_| {
            Error::InvalidConfig(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))
        })?;
        if n == 0 {
            return Err(Error::InvalidConfig(format!(
                "{WORKERS_ENV} must be a positive integer, got 0"
            )));
        }
        log::info!("{WORKERS_ENV}={n} requested; this build runs sweeps on a single thread");
    }
    Ok(())
}

/// Reads and parses the config file, then applies `--set` and flag
/// overrides. Without overrides, schema errors carry the line/column of
/// the original file.
pub fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let raw = fs::read_to_string(&args.config).map_err(|e| {
        Error::InvalidConfig(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let mut config = if args.sets.is_empty() {
        ExperimentConfig::from_json(&raw)?
    } else {
        let mut value: serde_json::Value = serde_json::from_str(&raw)
            .map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        for set in &args.sets {
            let (key, val) = parse_set(set)?;
            apply_set(&mut value, &key, val)?;
        }
        serde_json::from_value(value)
            .map_err(|e| Error::InvalidConfig(format!("config after --set overrides: {e}")))?
    };
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(pulse) = &args.pulse {
        config.pulse_file = Some(pulse.clone());
    }
    Ok(config)
}

fn parse_set(s: &str) -> Result<(String, serde_json::Value)> {
    let (key, val) = s.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("--set expects KEY=VALUE, got '{s}'"))
    })?;
    if key.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "--set expects a nonempty key, got '{s}'"
        )));
    }
    let value = serde_json::from_str(val)
        .unwrap_or_else(|_| serde_json::Value::String(val.to_string()));
    Ok((key.to_string(), value))
}

fn apply_set(root: &mut serde_json::Value, key: &str, val: serde_json::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("--set {key}: '{part}' is not an object"))
        })?;
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let last = parts[parts.len() - 1];
    let obj = cur.as_object_mut().ok_or_else(|| {
        Error::InvalidConfig(format!("--set {key}: parent of '{last}' is not an object"))
    })?;
    obj.insert(last.to_string(), val);
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared experiment context
// ---------------------------------------------------------------------------

/// A validated config plus everything derived from it that the commands
/// share: hash, constants, output directory.
struct Ctx {
    cfg: ExperimentConfig,
    hash: String,
    constants: PhysicalConstants,
}

impl Ctx {
    fn new(cfg: ExperimentConfig) -> Result<Self> {
        let hash = cfg.hash()?;
        let constants = cfg.constants();
        // Every quantity this tool reads and writes is dimensionless in
        // units of K, so K itself is pinned to 1; the working point moves
        // through the pump strength p (alpha² = p/K).
        if (constants.k - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "the command-line tool works in units of the Kerr coefficient and requires \
                 constants.k = 1 (got {}); adjust p instead (alpha² = p/K)",
                constants.k
            )));
        }
        Ok(Self {
            cfg,
            hash,
            constants,
        })
    }

    fn problem(&self, counter: CounterVariant) -> Result<GateProblem> {
        GateProblem::new(
            self.cfg.gate,
            counter,
            self.cfg.angle(),
            self.constants,
            self.cfg.cutoff(),
        )
    }

    fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig::with_dt(self.cfg.dt())
    }

    /// Commented CSV header: tool version, config hash, experiment line,
    /// units, optional extras, column list.
    fn csv_header(&self, columns: &[&str], extra: &[String], volatile: bool) -> String {
        let mut s = String::new();
        s.push_str(&format!("# tool: kpo-gates v{TOOL_VERSION}\n"));
        s.push_str(&format!("# config_hash: {}\n", self.hash));
        s.push_str(&format!(
            "# experiment: {} gate: {} counter: {} angle_rad: {:.12}\n",
            self.cfg.experiment,
            self.cfg.gate.label(),
            self.cfg.counter.label(),
            self.cfg.angle()
        ));
        s.push_str("# units: time in 1/K, rates and amplitudes in K\n");
        for e in extra {
            s.push_str(&format!("# {e}\n"));
        }
        if volatile {
            s.push_str("# volatile_columns: runtime_s\n");
        }
        s.push_str(&format!("# columns: {}\n", columns.join(",")));
        s
    }

    fn write_file(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.cfg.out_dir)?;
        let path = self.cfg.out_dir.join(name);
        fs::write(&path, contents)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// Writes `summary.json` (config echo + hash + results) and returns the
    /// same value for stdout.
    fn finish_summary(&self, mut body: serde_json::Map<String, serde_json::Value>) -> Result<serde_json::Value> {
        body.insert("tool_version".into(), TOOL_VERSION.into());
        body.insert("config_hash".into(), self.hash.clone().into());
        body.insert("config".into(), serde_json::to_value(&self.cfg)?);
        let value = serde_json::Value::Object(body);
        self.write_file("summary.json", &format!("{:#}\n", value))?;
        Ok(value)
    }

    /// Loads the configured pulse file and checks its provenance against
    /// the experiment: gate, counter, angle, gate time and constants must
    /// all agree.
    fn load_pulse(&self) -> Result<(PulseFile, PulseCoefficients)> {
        let path = self.cfg.pulse_file.as_ref().ok_or_else(|| {
            Error::InvalidConfig("pulse_file is required for this experiment".into())
        })?;
        let raw = fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read pulse file {}: {e}", path.display()))
        })?;
        let pulse = PulseFile::from_json(&raw)?;
        if pulse.gate != self.cfg.gate {
            return Err(Error::PulseMismatch(format!(
                "pulse was produced for gate '{}', experiment wants '{}'",
                pulse.gate.label(),
                self.cfg.gate.label()
            )));
        }
        if pulse.counter != self.cfg.counter {
            return Err(Error::PulseMismatch(format!(
                "pulse uses counter '{}', experiment wants '{}'",
                pulse.counter.label(),
                self.cfg.counter.label()
            )));
        }
        if (pulse.angle - self.cfg.angle()).abs() > 1e-9 {
            return Err(Error::PulseMismatch(format!(
                "pulse angle {:.12} differs from experiment angle {:.12}",
                pulse.angle,
                self.cfg.angle()
            )));
        }
        if let Some(kt) = self.cfg.kt {
            if (pulse.t_k - kt).abs() > 1e-9 {
                return Err(Error::PulseMismatch(format!(
                    "pulse gate time {} differs from configured kt {}",
                    pulse.t_k, kt
                )));
            }
        }
        if let Some(c) = &pulse.meta.constants {
            if (c.k - self.constants.k).abs() > 1e-12 || (c.p - self.constants.p).abs() > 1e-12 {
                return Err(Error::PulseMismatch(format!(
                    "pulse constants (K={}, p={}) differ from experiment (K={}, p={})",
                    c.k, c.p, self.constants.k, self.constants.p
                )));
            }
        }
        let coeffs = pulse.coefficients()?;
        Ok((pulse, coeffs))
    }

    /// The waveform a single-pulse experiment propagates, together with its
    /// gate time and (for analytic Rx) the detuning used.
    fn waveform(&self) -> Result<(Waveform, f64, Option<f64>)> {
        match self.cfg.waveform {
            WaveformSource::Optimized => {
                let (pulse, coeffs) = self.load_pulse()?;
                Ok((Waveform::Fourier(coeffs), pulse.t_k, None))
            }
            WaveformSource::Analytic => {
                let kt = self.cfg.kt.ok_or_else(|| {
                    Error::InvalidConfig("kt is required for analytic waveforms".into())
                })?;
                let delta = self.resolve_delta(self.cfg.counter, kt)?;
                let wf = analytic_pulse(
                    self.cfg.gate,
                    self.cfg.angle(),
                    delta,
                    kt,
                    self.cfg.counter != CounterVariant::None,
                    self.constants,
                )?;
                Ok((wf, kt, delta))
            }
        }
    }

    /// Detuning for analytic Rx pulses: the configured value, or a grid +
    /// golden-section calibration at reduced resolution.
    fn resolve_delta(&self, counter: CounterVariant, kt: f64) -> Result<Option<f64>> {
        if self.cfg.gate != GateKind::Rx {
            return Ok(None);
        }
        if let Some(d) = self.cfg.delta {
            return Ok(Some(d * self.constants.k));
        }
        let problem = self.problem(counter)?;
        let reduced = problem.with_cutoff(self.cfg.cutoff().min(24))?;
        let config = IntegratorConfig::with_dt(1e-3);
        let (delta, fbar) = calibrate_detuning(&reduced, kt, &config)?;
        log::info!(
            "calibrated Rx detuning at KT={kt}: delta/K = {:.6}, 1-F = {:.3e}",
            delta / self.constants.k,
            1.0 - fbar
        );
        Ok(Some(delta))
    }

    /// Optimizer options: per-gate defaults, `final_dt` aligned with the
    /// experiment `dt`, then the free-form `optimizer` overrides merged on
    /// top (unknown keys are rejected).
    fn optimizer_options(&self) -> Result<GateOptimizerOptions> {
        let mut defaults = GateOptimizerOptions::for_kind(self.cfg.gate);
        defaults.final_dt = self.cfg.dt();
        defaults.seed = self.cfg.seed;
        let mut base = serde_json::to_value(defaults)?;
        if let Some(overlay) = &self.cfg.optimizer {
            merge_over(&mut base, overlay, "optimizer")?;
        }
        serde_json::from_value(base)
            .map_err(|e| Error::InvalidConfig(format!("optimizer overrides: {e}")))
    }

    fn initial_states(&self, defaults: &[&str]) -> Vec<String> {
        self.cfg
            .initial_states
            .clone()
            .unwrap_or_else(|| defaults.iter().map(|s| s.to_string()).collect())
    }

    fn named_state(&self, space: FockSpace, name: &str) -> Result<StateVector> {
        let alpha = self.constants.alpha();
        match name {
            "cat_plus" => cat_state(space, alpha, Parity::Even),
            "cat_minus" => cat_state(space, alpha, Parity::Odd),
            "vacuum" => Ok(StateVector::vacuum(space)),
            other => Err(Error::InvalidConfig(format!(
                "unknown initial state '{other}' (expected cat_plus, cat_minus or vacuum)"
            ))),
        }
    }

    fn require_single_mode(&self, what: &str) -> Result<()> {
        if self.cfg.gate.is_two_mode() {
            return Err(Error::InvalidConfig(format!(
                "{what} is provided for single-mode gates; got '{}'",
                self.cfg.gate.label()
            )));
        }
        Ok(())
    }
}

/// Merges `overlay` over `base`, descending into objects; keys that do not
/// exist in `base` are an error so typos in overrides fail loudly.
fn merge_over(base: &mut serde_json::Value, overlay: &serde_json::Value, path: &str) -> Result<()> {
    match overlay {
        serde_json::Value::Object(fields) => {
            let obj = base.as_object_mut().ok_or_else(|| {
                Error::InvalidConfig(format!("{path}: expected a scalar, got an object"))
            })?;
            for (k, v) in fields {
                match obj.get_mut(k) {
                    Some(slot) => merge_over(slot, v, &format!("{path}.{k}"))?,
                    None => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown field {path}.{k}"
                        )))
                    }
                }
            }
            Ok(())
        }
        other => {
            *base = other.clone();
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// validate-config
// ---------------------------------------------------------------------------

fn cmd_validate(ctx: &Ctx) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "valid": true,
        "experiment": ctx.cfg.experiment.to_string(),
        "config_hash": ctx.hash,
        "config": serde_json::to_value(&ctx.cfg)?,
    }))
}

// ---------------------------------------------------------------------------
// gate-time-sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SweepVariant {
    source: WaveformSource,
    with_counter: bool,
}

impl SweepVariant {
    const ALL: [SweepVariant; 4] = [
        SweepVariant { source: WaveformSource::Analytic, with_counter: false },
        SweepVariant { source: WaveformSource::Analytic, with_counter: true },
        SweepVariant { source: WaveformSource::Optimized, with_counter: false },
        SweepVariant { source: WaveformSource::Optimized, with_counter: true },
    ];

    fn label(&self) -> &'static str {
        match (self.source, self.with_counter) {
            (WaveformSource::Analytic, false) => "analytic",
            (WaveformSource::Analytic, true) => "analytic+counter",
            (WaveformSource::Optimized, false) => "optimized",
            (WaveformSource::Optimized, true) => "optimized+counter",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown variant '{s}' (expected analytic, analytic+counter, optimized or optimized+counter)"
                ))
            })
    }
}

struct SweepRow {
    variant: &'static str,
    kt: f64,
    report: FidelityReport,
    max_g0_over_k: f64,
    max_g1_over_k: f64,
    delta_over_k: f64,
    runtime_s: f64,
}

fn cmd_gate_time_sweep(ctx: &Ctx) -> Result<serde_json::Value> {
    let grid = ctx
        .cfg
        .kt_grid
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("kt_grid is required for gate_time_sweep".into()))?
        .values()?;
    let variants: Vec<SweepVariant> = match &ctx.cfg.variants {
        Some(names) => names
            .iter()
            .map(|s| SweepVariant::parse(s))
            .collect::<Result<_>>()?,
        None => SweepVariant::ALL.to_vec(),
    };
    let integrator = ctx.integrator();
    let k = ctx.constants.k;
    let mut rows: Vec<SweepRow> = Vec::new();

    for variant in &variants {
        let counter = if variant.with_counter {
            if ctx.cfg.counter == CounterVariant::None {
                CounterVariant::Standard
            } else {
                ctx.cfg.counter
            }
        } else {
            CounterVariant::None
        };
        let problem = ctx.problem(counter)?;
        match variant.source {
            WaveformSource::Analytic => {
                for &kt in &grid {
                    let started = Instant::now();
                    let delta = ctx.resolve_delta(counter, kt)?;
                    let wf = analytic_pulse(
                        ctx.cfg.gate,
                        ctx.cfg.angle(),
                        delta,
                        kt,
                        variant.with_counter,
                        ctx.constants,
                    )?;
                    let report = gate_fidelity(&problem, &wf, &integrator)?;
                    let (m0, m1) = wf.max_amplitudes(2001)?;
                    rows.push(SweepRow {
                        variant: variant.label(),
                        kt,
                        report,
                        max_g0_over_k: m0 / k,
                        max_g1_over_k: m1 / k,
                        delta_over_k: delta.unwrap_or(0.0) / k,
                        runtime_s: started.elapsed().as_secs_f64(),
                    });
                    log::info!(
                        "{} KT={kt:.3}: 1-F = {:.3e}",
                        variant.label(),
                        report.infidelity
                    );
                }
            }
            WaveformSource::Optimized => {
                let options = ctx.optimizer_options()?;
                let mut warm: Option<PulseCoefficients> = None;
                // Walk the grid from long gates to short ones so each point
                // starts from the previous optimum; short gate times have
                // optima that cold starts miss.
                let mut descending = grid.clone();
                descending.sort_by(|a, b| b.partial_cmp(a).expect("finite grid"));
                for &kt in &descending {
                    let started = Instant::now();
                    let result = optimize_gate(
                        &problem,
                        kt,
                        ctx.cfg.delta.map(|d| d * k),
                        warm.as_ref(),
                        &options,
                    )?;
                    warm = Some(result.pulse.clone());
                    log::info!(
                        "{} KT={kt:.3}: 1-F = {:.3e} ({} iterations)",
                        variant.label(),
                        result.report.infidelity,
                        result.iterations
                    );
                    rows.push(SweepRow {
                        variant: variant.label(),
                        kt,
                        report: result.report,
                        max_g0_over_k: result.max_g0_over_k,
                        max_g1_over_k: result.max_g1_over_k,
                        delta_over_k: result.delta.unwrap_or(0.0) / k,
                        runtime_s: started.elapsed().as_secs_f64(),
                    });
                }
            }
        }
    }

    // Deterministic output order: variant, then gate time ascending.
    let variant_rank = |label: &str| {
        SweepVariant::ALL
            .iter()
            .position(|v| v.label() == label)
            .expect("known label")
    };
    rows.sort_by(|a, b| {
        variant_rank(a.variant)
            .cmp(&variant_rank(b.variant))
            .then(a.kt.partial_cmp(&b.kt).expect("finite kt"))
    });

    let columns = [
        "variant",
        "kt",
        "infidelity",
        "fbar",
        "leakage",
        "max_g0_over_k",
        "max_g1_over_k",
        "delta_over_k",
        "runtime_s",
    ];
    let mut csv = ctx.csv_header(
        &columns,
        &[format!("threshold: {:e}", ctx.cfg.threshold)],
        true,
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.3}\n",
            r.variant,
            r.kt,
            r.report.infidelity,
            r.report.fbar,
            r.report.leakage,
            r.max_g0_over_k,
            r.max_g1_over_k,
            r.delta_over_k,
            r.runtime_s
        ));
    }
    ctx.write_file("gate_time_sweep.csv", &csv)?;

    let mut kt_min = serde_json::Map::new();
    for variant in &variants {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.variant == variant.label())
            .map(|r| (r.kt, r.report.infidelity))
            .collect();
        kt_min.insert(
            variant.label().to_string(),
            match minimum_time(&points, ctx.cfg.threshold) {
                Some(t) => serde_json::json!(t),
                None => serde_json::Value::Null,
            },
        );
    }

    let mut body = serde_json::Map::new();
    body.insert("kt_min".into(), serde_json::Value::Object(kt_min));
    body.insert("threshold".into(), ctx.cfg.threshold.into());
    body.insert("points".into(), rows.len().into());
    body.insert(
        "variants".into(),
        serde_json::to_value(variants.iter().map(|v| v.label()).collect::<Vec<_>>())?,
    );
    ctx.finish_summary(body)
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

fn cmd_optimize(ctx: &Ctx) -> Result<serde_json::Value> {
    let started = Instant::now();
    let problem = ctx.problem(ctx.cfg.counter)?;
    let options = ctx.optimizer_options()?;
    let k = ctx.constants.k;
    let delta = ctx.cfg.delta.map(|d| d * k);

    let result: OptimizationResult = match &ctx.cfg.schedule {
        Some(schedule) => optimize_gate_scheduled(&problem, schedule, delta, &options)?,
        None => {
            let kt = ctx.cfg.kt.ok_or_else(|| {
                Error::InvalidConfig("optimize needs kt (or a schedule)".into())
            })?;
            optimize_gate(&problem, kt, delta, None, &options)?
        }
    };
    let wall_time_s = started.elapsed().as_secs_f64();
    let kt = result.pulse.t_total();

    // Pulse artifact with provenance.
    let meta = PulseMeta {
        config_hash: ctx.hash.clone(),
        tool_version: TOOL_VERSION.to_string(),
        infidelity: Some(result.report.infidelity),
        max_g_over_k: Some(result.max_g0_over_k.max(result.max_g1_over_k)),
        constants: Some(ctx.constants),
    };
    let pulse_file = PulseFile::from_coefficients(
        ctx.cfg.gate,
        ctx.cfg.counter,
        ctx.cfg.angle(),
        &result.pulse,
        meta,
    );
    ctx.write_file("pulse.json", &format!("{}\n", pulse_file.to_json()?))?;

    // Objective value after every accepted iteration (stages concatenated
    // for scheduled runs).
    let mut trace_csv = ctx.csv_header(&["iteration", "objective"], &[], false);
    for (i, v) in result.trace.iter().enumerate() {
        trace_csv.push_str(&format!("{i},{v:.12e}\n"));
    }
    ctx.write_file("trace.csv", &trace_csv)?;

    // Waveform samples of the final pulse.
    let mut wf_csv = ctx.csv_header(&["t_k", "g0_over_k", "g1_over_k"], &[], false);
    let samples = 1000usize;
    for i in 0..=samples {
        let t = result.pulse.t_total() * i as f64 / samples as f64;
        wf_csv.push_str(&format!(
            "{:.6},{:.12e},{:.12e}\n",
            t * k,
            result.pulse.eval_g0(t)? / k,
            result.pulse.eval_g1(t)? / k
        ));
    }
    ctx.write_file("waveform.csv", &wf_csv)?;

    let max_g_over_k = result.max_g0_over_k.max(result.max_g1_over_k);
    let mut body = serde_json::Map::new();
    body.insert("kt".into(), kt.into());
    body.insert("infidelity".into(), result.report.infidelity.into());
    body.insert("fbar".into(), result.report.fbar.into());
    body.insert("leakage".into(), result.report.leakage.into());
    body.insert("max_g0_over_k".into(), result.max_g0_over_k.into());
    body.insert("max_g1_over_k".into(), result.max_g1_over_k.into());
    body.insert("max_g_over_k".into(), max_g_over_k.into());
    body.insert("amplitude_bound_over_k".into(), options.amplitude_bound.into());
    body.insert(
        "amplitude_bound_exceeded".into(),
        (max_g_over_k > options.amplitude_bound).into(),
    );
    body.insert("iterations".into(), result.iterations.into());
    body.insert("evaluations".into(), result.evaluations.into());
    body.insert("starts_used".into(), result.starts_used.into());
    body.insert("converged".into(), result.converged.into());
    body.insert("reduced_objective".into(), result.reduced_objective.into());
    body.insert("seed_objective".into(), result.seed_objective.into());
    if let Some(d) = result.delta {
        body.insert("delta_over_k".into(), (d / k).into());
    }
    body.insert("wall_time_s".into(), wall_time_s.into());
    ctx.finish_summary(body)
}

// ---------------------------------------------------------------------------
// trajectory
// ---------------------------------------------------------------------------

fn state_file_tag(name: &str) -> String {
    name.replace(|c: char| !c.is_ascii_alphanumeric(), "_")
}

fn time_file_tag(t: f64) -> String {
    format!("{t:.4}").replace('.', "p").replace('-', "m")
}

fn cmd_trajectory(ctx: &Ctx) -> Result<serde_json::Value> {
    ctx.require_single_mode("trajectory")?;
    let (waveform, kt, delta) = ctx.waveform()?;
    let problem = ctx.problem(ctx.cfg.counter)?;
    let system = GateSystem::for_problem(&problem, &waveform)?;
    let observables = Observables::for_problem(&problem)?;
    let base = ctx.integrator();
    let steps = (kt / base.dt).round() as usize;
    let stride = ctx
        .cfg
        .record_stride
        .unwrap_or_else(|| (steps / 1000).max(1));
    let config = IntegratorConfig {
        record_stride: stride,
        ..base
    };

    let names = ctx.initial_states(&["cat_plus", "cat_minus"]);
    let snapshot_times = ctx.cfg.snapshot_times.clone().unwrap_or_default();
    let spec = ctx.cfg.wigner.unwrap_or_default();
    let mut states_summary = serde_json::Map::new();
    let mut files = Vec::new();

    for name in &names {
        let psi0 = ctx.named_state(problem.space, name)?;
        let (psi_final, trajectory) = evolve_state_recorded(&system, &psi0, &config, &observables)?;
        let header = ctx.csv_header(
            &["t_k", "norm_or_trace", "qubit_population", "mean_photon_mode1"],
            &[format!("initial_state: {name}")],
            false,
        );
        // Trajectory::to_csv carries its own column comment; keep only the
        // data rows under our header.
        let body: String = trajectory
            .to_csv()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let fname = format!("trajectory_{}.csv", state_file_tag(name));
        ctx.write_file(&fname, &format!("{header}{body}"))?;
        files.push(fname);

        let mut snap_reports = Vec::new();
        if !snapshot_times.is_empty() {
            let mut times = snapshot_times.clone();
            times.sort_by(|a, b| a.partial_cmp(b).expect("finite snapshot times"));
            let snaps = evolve_state_snapshots(&system, &psi0, &config, &times)?;
            for (t, psi) in &snaps {
                let grid = wigner_state(&psi.normalized()?, &spec)?;
                let fname = format!(
                    "wigner_{}_t{}.csv",
                    state_file_tag(name),
                    time_file_tag(*t)
                );
                let header = ctx.csv_header(
                    &["x", "y", "wigner"],
                    &[format!("initial_state: {name}"), format!("t_k: {t:.6}")],
                    false,
                );
                let body: String = grid
                    .to_csv()
                    .lines()
                    .filter(|l| !l.starts_with('#'))
                    .map(|l| format!("{l}\n"))
                    .collect();
                ctx.write_file(&fname, &format!("{header}{body}"))?;
                files.push(fname);
                snap_reports.push(serde_json::json!({
                    "t_k": t,
                    "mean_photon": mean_photon_state(&psi.normalized()?, 0)?,
                    "wigner_integral": grid.integral(),
                }));
            }
        }

        let mid = trajectory
            .points
            .iter()
            .min_by(|a, b| {
                let da = (a.t - kt / 2.0).abs();
                let db = (b.t - kt / 2.0).abs();
                da.partial_cmp(&db).expect("finite times")
            })
            .map(|p| serde_json::json!({
                "t_k": p.t,
                "qubit_population": p.qubit_population,
                "mean_photon": p.mean_photon[0],
            }));
        let last = trajectory.points.last();
        states_summary.insert(
            name.clone(),
            serde_json::json!({
                "final_norm": psi_final.norm(),
                "final_qubit_population": last.map(|p| p.qubit_population),
                "final_mean_photon": last.map(|p| p.mean_photon[0]),
                "min_mean_photon": trajectory
                    .points
                    .iter()
                    .map(|p| p.mean_photon[0])
                    .fold(f64::INFINITY, f64::min),
                "mid_gate": mid,
                "snapshots": snap_reports,
            }),
        );
    }

    let mut body = serde_json::Map::new();
    body.insert("kt".into(), kt.into());
    if let Some(d) = delta {
        body.insert("delta_over_k".into(), (d / ctx.constants.k).into());
    }
    body.insert("states".into(), serde_json::Value::Object(states_summary));
    body.insert("files".into(), serde_json::to_value(files)?);
    ctx.finish_summary(body)
}

// ---------------------------------------------------------------------------
// angle-sweep
// ---------------------------------------------------------------------------

fn cmd_angle_sweep(ctx: &Ctx) -> Result<serde_json::Value> {
    let (pulse, coeffs) = ctx.load_pulse()?;
    let problem = ctx.problem(ctx.cfg.counter)?;
    let waveform = Waveform::Fourier(coeffs);
    let integrator = ctx.integrator();
    let lambdas = ctx
        .cfg
        .lambda_grid
        .clone()
        .unwrap_or_else(|| (0..=10).map(|i| i as f64 / 10.0).collect());

    let mut rows = Vec::new();
    for &lambda in &lambdas {
        let started = Instant::now();
        let (angle, report) = scaled_pulse_fidelity(&problem, &waveform, lambda, &integrator)?;
        log::info!(
            "lambda={lambda:.3}: angle = {angle:.6} rad, 1-F = {:.3e}",
            report.infidelity
        );
        rows.push((lambda, angle, report, started.elapsed().as_secs_f64()));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite lambda"));

    let columns = [
        "lambda",
        "calibrated_angle_rad",
        "infidelity",
        "fbar",
        "leakage",
        "runtime_s",
    ];
    let mut csv = ctx.csv_header(
        &columns,
        &[format!("reference_angle_rad: {:.12}", pulse.angle)],
        true,
    );
    for (lambda, angle, report, runtime) in &rows {
        csv.push_str(&format!(
            "{:.6},{:.12e},{:.12e},{:.12e},{:.12e},{:.3}\n",
            lambda, angle, report.infidelity, report.fbar, report.leakage, runtime
        ));
    }
    ctx.write_file("angle_sweep.csv", &csv)?;

    let max_infidelity = rows
        .iter()
        .map(|(_, _, r, _)| r.infidelity)
        .fold(f64::NEG_INFINITY, f64::max);
    let unit = rows.iter().find(|(l, ..)| (*l - 1.0).abs() < 1e-12);
    let angle_error_at_unit = unit.map(|(_, angle, ..)| {
        let two_pi = std::f64::consts::TAU;
        let diff = (angle - pulse.angle).rem_euclid(two_pi);
        diff.min(two_pi - diff)
    });

    let mut body = serde_json::Map::new();
    body.insert("points".into(), rows.len().into());
    body.insert("max_infidelity".into(), max_infidelity.into());
    body.insert(
        "all_below_threshold".into(),
        (max_infidelity < ctx.cfg.threshold).into(),
    );
    body.insert("threshold".into(), ctx.cfg.threshold.into());
    if let Some(err) = angle_error_at_unit {
        body.insert("angle_error_at_unit_lambda_rad".into(), err.into());
    }
    ctx.finish_summary(body)
}

// ---------------------------------------------------------------------------
// robustness-grid
// ---------------------------------------------------------------------------

fn cmd_robustness_grid(ctx: &Ctx) -> Result<serde_json::Value> {
    let (_pulse, coeffs) = ctx.load_pulse()?;
    let problem = ctx.problem(ctx.cfg.counter)?;
    let waveform = Waveform::Fourier(coeffs);
    let integrator = ctx.integrator();
    let d0s = ctx
        .cfg
        .delta0_grid
        .clone()
        .unwrap_or_else(|| (-4..=4).map(|i| i as f64 * 0.005).collect());
    let d1s = ctx
        .cfg
        .delta1_grid
        .clone()
        .unwrap_or_else(|| (-4..=4).map(|i| i as f64 * 0.025).collect());

    let evaluate = |d0: f64, d1: f64| -> Result<FidelityReport> {
        let perturbed = apply_perturbation(&waveform, PulsePerturbation::deltas(d0, d1));
        let u = propagate_gate(&problem, &perturbed, &integrator)?;
        average_fidelity(&u, &problem.u_ideal)
    };

    let mut rows = Vec::new();
    for &d1 in &d1s {
        for &d0 in &d0s {
            let started = Instant::now();
            let report = evaluate(d0, d1)?;
            rows.push((d0, d1, report, started.elapsed().as_secs_f64()));
        }
        log::info!("robustness row delta1={d1:.4} done");
    }

    let columns = ["delta0", "delta1", "infidelity", "fbar", "leakage", "runtime_s"];
    let mut csv = ctx.csv_header(
        &columns,
        &[format!("threshold: {:e}", ctx.cfg.threshold)],
        true,
    );
    for (d0, d1, report, runtime) in &rows {
        csv.push_str(&format!(
            "{:.6},{:.6},{:.12e},{:.12e},{:.12e},{:.3}\n",
            d0, d1, report.infidelity, report.fbar, report.leakage, runtime
        ));
    }
    ctx.write_file("robustness_grid.csv", &csv)?;

    // Threshold contour: linear interpolation of crossings along both grid
    // directions.
    let value_at = |i0: usize, i1: usize| rows[i1 * d0s.len() + i0].2.infidelity;
    let threshold = ctx.cfg.threshold;
    let mut contour: Vec<(f64, f64)> = Vec::new();
    for (i1, &d1) in d1s.iter().enumerate() {
        for i0 in 0..d0s.len().saturating_sub(1) {
            let (a, b) = (value_at(i0, i1), value_at(i0 + 1, i1));
            if (a - threshold) * (b - threshold) < 0.0 {
                let f = (threshold - a) / (b - a);
                contour.push((d0s[i0] + f * (d0s[i0 + 1] - d0s[i0]), d1));
            }
        }
    }
    for (i0, &d0) in d0s.iter().enumerate() {
        for i1 in 0..d1s.len().saturating_sub(1) {
            let (a, b) = (value_at(i0, i1), value_at(i0, i1 + 1));
            if (a - threshold) * (b - threshold) < 0.0 {
                let f = (threshold - a) / (b - a);
                contour.push((d0, d1s[i1] + f * (d1s[i1 + 1] - d1s[i1])));
            }
        }
    }
    contour.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite deltas")
            .then(a.0.partial_cmp(&b.0).expect("finite deltas"))
    });
    let mut contour_csv = ctx.csv_header(
        &["delta0", "delta1"],
        &[format!(
            "infidelity contour at threshold {:e}, linearly interpolated",
            threshold
        )],
        false,
    );
    for (d0, d1) in &contour {
        contour_csv.push_str(&format!("{d0:.6},{d1:.6}\n"));
    }
    ctx.write_file("robustness_contour.csv", &contour_csv)?;

    // Stationarity at the origin, measured with a dedicated small step.
    let h = 1e-3;
    let g0 = (evaluate(h, 0.0)?.infidelity - evaluate(-h, 0.0)?.infidelity) / (2.0 * h);
    let g1 = (evaluate(0.0, h)?.infidelity - evaluate(0.0, -h)?.infidelity) / (2.0 * h);
    let origin = evaluate(0.0, 0.0)?;

    let mut body = serde_json::Map::new();
    body.insert("threshold".into(), threshold.into());
    body.insert("points".into(), rows.len().into());
    body.insert("contour_points".into(), contour.len().into());
    body.insert("origin_infidelity".into(), origin.infidelity.into());
    body.insert("origin_gradient".into(), serde_json::json!([g0, g1]));
    body.insert(
        "origin_stationary".into(),
        (g0.abs() < 1e-2 && g1.abs() < 1e-2).into(),
    );
    ctx.finish_summary(body)
}

// ---------------------------------------------------------------------------
// loss-sweep
// ---------------------------------------------------------------------------

fn cmd_loss_sweep(ctx: &Ctx) -> Result<serde_json::Value> {
    let kappas = ctx
        .cfg
        .kappa_grid
        .clone()
        .ok_or_else(|| Error::InvalidConfig("kappa_grid is required for loss_sweep".into()))?;
    let (waveform, kt, _delta) = ctx.waveform()?;
    let problem = ctx.problem(ctx.cfg.counter)?;
    // The no-gate reference: identical KPOs idle for the same time. Angle
    // zero makes the ideal gate the identity; the zero waveform drives
    // nothing.
    let idle_problem = GateProblem::new(
        ctx.cfg.gate,
        CounterVariant::None,
        0.0,
        ctx.constants,
        ctx.cfg.cutoff(),
    )?;
    let idle_waveform = Waveform::Fourier(PulseCoefficients::zero(kt, 1)?);
    let config = IntegratorConfig::with_dt(ctx.cfg.loss_dt());
    let k = ctx.constants.k;
    let alpha = ctx.constants.alpha();
    let n_kpo = ctx.cfg.gate.modes();

    let mut rows = Vec::new();
    for &kappa_over_k in &kappas {
        let started = Instant::now();
        let kappa = kappa_over_k * k;
        let gate = 1.0 - average_fidelity_loss(&problem, &waveform, kappa, &config)?;
        let idle = 1.0 - average_fidelity_loss(&idle_problem, &idle_waveform, kappa, &config)?;
        let estimate = loss_infidelity_estimate(alpha, kappa, kt, n_kpo);
        log::info!(
            "kappa/K={kappa_over_k:.3e}: gate 1-F = {gate:.3e}, no gate {idle:.3e}, estimate {estimate:.3e}"
        );
        rows.push((kappa_over_k, gate, idle, estimate, started.elapsed().as_secs_f64()));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite kappa"));

    let columns = [
        "kappa_over_k",
        "infidelity_loss",
        "infidelity_loss_no_gate",
        "estimate_no_gate",
        "runtime_s",
    ];
    let mut csv = ctx.csv_header(&columns, &[format!("kt: {kt}")], true);
    for (kappa, gate, idle, estimate, runtime) in &rows {
        csv.push_str(&format!(
            "{:.6e},{:.12e},{:.12e},{:.12e},{:.3}\n",
            kappa, gate, idle, estimate, runtime
        ));
    }
    ctx.write_file("loss_sweep.csv", &csv)?;

    let mut body = serde_json::Map::new();
    body.insert("kt".into(), kt.into());
    body.insert("points".into(), rows.len().into());
    body.insert(
        "min_infidelity_loss".into(),
        rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min).into(),
    );

    // Two-mode sweeps run at a reduced cutoff by default; report how much
    // the largest-κ point moves when the cutoff grows by 4.
    if ctx.cfg.gate.is_two_mode() {
        if let Some(&(kappa_over_k, base, ..)) = rows.last() {
            let refined_problem = problem.with_cutoff(ctx.cfg.cutoff() + 4)?;
            let refined =
                1.0 - average_fidelity_loss(&refined_problem, &waveform, kappa_over_k * k, &config)?;
            let rel = if base != 0.0 {
                (refined - base).abs() / base.abs()
            } else {
                0.0
            };
            body.insert(
                "cutoff_convergence".into(),
                serde_json::json!({
                    "kappa_over_k": kappa_over_k,
                    "cutoff": ctx.cfg.cutoff(),
                    "infidelity_loss": base,
                    "cutoff_refined": ctx.cfg.cutoff() + 4,
                    "infidelity_loss_refined": refined,
                    "relative_delta": rel,
                }),
            );
        }
    }
    ctx.finish_summary(body)
}

// ---------------------------------------------------------------------------
// wigner
// ---------------------------------------------------------------------------

fn cmd_wigner(ctx: &Ctx) -> Result<serde_json::Value> {
    ctx.require_single_mode("wigner")?;
    let spec = ctx.cfg.wigner.unwrap_or_default();
    let names = ctx.initial_states(&["cat_plus"]);
    let mut files = Vec::new();
    let mut reports = serde_json::Map::new();

    match &ctx.cfg.snapshot_times {
        None => {
            // Static states: no evolution involved.
            let space = FockSpace::single(ctx.cfg.cutoff());
            for name in &names {
                let psi = ctx.named_state(space, name)?;
                let grid = wigner_state(&psi, &spec)?;
                let fname = format!("wigner_{}.csv", state_file_tag(name));
                let header = ctx.csv_header(
                    &["x", "y", "wigner"],
                    &[format!("initial_state: {name}")],
                    false,
                );
                let body: String = grid
                    .to_csv()
                    .lines()
                    .filter(|l| !l.starts_with('#'))
                    .map(|l| format!("{l}\n"))
                    .collect();
                ctx.write_file(&fname, &format!("{header}{body}"))?;
                files.push(fname);
                reports.insert(
                    name.clone(),
                    serde_json::json!({
                        "integral": grid.integral(),
                        "min_value": grid.min_value(),
                        "peak_at_origin": grid.value_at(0.0, 0.0),
                    }),
                );
            }
        }
        Some(times) => {
            let (waveform, _kt, _delta) = ctx.waveform()?;
            let problem = ctx.problem(ctx.cfg.counter)?;
            let system = GateSystem::for_problem(&problem, &waveform)?;
            let config = ctx.integrator();
            let mut sorted = times.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite snapshot times"));
            for name in &names {
                let psi0 = ctx.named_state(problem.space, name)?;
                let snaps = evolve_state_snapshots(&system, &psi0, &config, &sorted)?;
                let mut snap_reports = Vec::new();
                for (t, psi) in &snaps {
                    let grid = wigner_state(&psi.normalized()?, &spec)?;
                    let fname = format!(
                        "wigner_{}_t{}.csv",
                        state_file_tag(name),
                        time_file_tag(*t)
                    );
                    let header = ctx.csv_header(
                        &["x", "y", "wigner"],
                        &[format!("initial_state: {name}"), format!("t_k: {t:.6}")],
                        false,
                    );
                    let body: String = grid
                        .to_csv()
                        .lines()
                        .filter(|l| !l.starts_with('#'))
                        .map(|l| format!("{l}\n"))
                        .collect();
                    ctx.write_file(&fname, &format!("{header}{body}"))?;
                    files.push(fname);
                    snap_reports.push(serde_json::json!({
                        "t_k": t,
                        "integral": grid.integral(),
                        "min_value": grid.min_value(),
                        "mean_photon": mean_photon_state(&psi.normalized()?, 0)?,
                    }));
                }
                reports.insert(name.clone(), serde_json::json!({ "snapshots": snap_reports }));
            }
        }
    }

    let mut body = serde_json::Map::new();
    body.insert("states".into(), serde_json::Value::Object(reports));
    body.insert("files".into(), serde_json::to_value(files)?);
    body.insert("grid".into(), serde_json::to_value(spec)?);
    ctx.finish_summary(body)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(experiment: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment,
            gate: GateKind::Rz,
            counter: CounterVariant::Standard,
            angle: None,
            waveform: WaveformSource::Analytic,
            pulse_file: None,
            constants: None,
            cutoff: None,
            dt: None,
            kt: Some(1.0),
            kt_grid: None,
            delta: None,
            variants: None,
            threshold: 1e-3,
            schedule: None,
            optimizer: None,
            kappa_grid: None,
            loss_dt: None,
            lambda_grid: None,
            delta0_grid: None,
            delta1_grid: None,
            snapshot_times: None,
            initial_states: None,
            wigner: None,
            record_stride: None,
            out_dir: PathBuf::from("out"),
            seed: 7,
            note: None,
        }
    }

    #[test]
    fn grid_spec_includes_both_endpoints() {
        let g = GridSpec { start: 0.5, stop: 1.0, step: 0.1 };
        let vals = g.values().unwrap();
        assert_eq!(vals.len(), 6);
        assert!((vals[0] - 0.5).abs() < 1e-12);
        assert!((vals[5] - 1.0).abs() < 1e-12);
        assert!(GridSpec { start: 1.0, stop: 0.0, step: 0.1 }.values().is_err());
    }

    #[test]
    fn config_parsing_rejects_unknown_fields_with_location() {
        let raw = r#"{
            "experiment": "optimize",
            "gate": "rz",
            "ktt": 0.5
        }"#;
        let err = ExperimentConfig::from_json(raw).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ktt"), "missing offending field: {msg}");
        assert!(msg.contains("line"), "missing location: {msg}");
    }

    #[test]
    fn config_defaults_fill_in_gate_specific_values() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "optimize", "gate": "rzz_two_mode_squeezing"}"#,
        )
        .unwrap();
        assert!((cfg.angle() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(cfg.cutoff(), 24);
        assert_eq!(cfg.counter, CounterVariant::Standard);
        let rz = ExperimentConfig::from_json(r#"{"experiment": "optimize", "gate": "rz"}"#).unwrap();
        assert!((rz.angle() - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(rz.cutoff(), 40);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = base_config(ExperimentKind::Optimize);
        let b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = a.clone();
        c.kt = Some(0.5);
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        // Where the results land (and free-form notes) do not change what
        // the experiment is.
        let mut d = a.clone();
        d.out_dir = PathBuf::from("elsewhere");
        d.note = Some("scratch run".into());
        assert_eq!(a.hash().unwrap(), d.hash().unwrap());
    }

    #[test]
    fn set_overrides_descend_into_nested_objects() {
        let mut value = serde_json::json!({"optimizer": {"restarts": 3}});
        let (k, v) = parse_set("optimizer.restarts=0").unwrap();
        apply_set(&mut value, &k, v).unwrap();
        assert_eq!(value["optimizer"]["restarts"], serde_json::json!(0));
        let (k, v) = parse_set("note=hello world").unwrap();
        apply_set(&mut value, &k, v).unwrap();
        assert_eq!(value["note"], serde_json::json!("hello world"));
        assert!(parse_set("no-equals-sign").is_err());
    }

    #[test]
    fn optimizer_overrides_merge_and_reject_unknown_keys() {
        let mut cfg = base_config(ExperimentKind::Optimize);
        cfg.optimizer = Some(serde_json::json!({
            "restarts": 0,
            "bfgs": {"max_iterations": 5}
        }));
        let ctx = Ctx::new(cfg).unwrap();
        let opts = ctx.optimizer_options().unwrap();
        assert_eq!(opts.restarts, 0);
        assert_eq!(opts.bfgs.max_iterations, 5);
        // Defaults survive for everything not mentioned.
        assert_eq!(opts.n_f, GateOptimizerOptions::for_kind(GateKind::Rz).n_f);

        let mut bad = base_config(ExperimentKind::Optimize);
        bad.optimizer = Some(serde_json::json!({"restartz": 1}));
        let ctx = Ctx::new(bad).unwrap();
        let err = ctx.optimizer_options().unwrap_err();
        assert!(err.to_string().contains("restartz"));
    }

    #[test]
    fn pulse_provenance_mismatches_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let coeffs = PulseCoefficients::zero(0.5, 3).unwrap();
        let pulse = PulseFile::from_coefficients(
            GateKind::Rz,
            CounterVariant::Standard,
            std::f64::consts::PI,
            &coeffs,
            PulseMeta::default(),
        );
        let path = dir.path().join("pulse.json");
        fs::write(&path, pulse.to_json().unwrap()).unwrap();

        let mut cfg = base_config(ExperimentKind::AngleSweep);
        cfg.pulse_file = Some(path.clone());
        cfg.kt = Some(0.5);
        let ctx = Ctx::new(cfg.clone()).unwrap();
        assert!(ctx.load_pulse().is_ok());

        // Wrong gate.
        let mut wrong = cfg.clone();
        wrong.gate = GateKind::Rx;
        let err = Ctx::new(wrong).unwrap().load_pulse().unwrap_err();
        assert!(matches!(err, Error::PulseMismatch(_)), "{err}");

        // Wrong gate time.
        let mut wrong = cfg.clone();
        wrong.kt = Some(0.6);
        let err = Ctx::new(wrong).unwrap().load_pulse().unwrap_err();
        assert!(matches!(err, Error::PulseMismatch(_)), "{err}");

        // Wrong counter.
        let mut wrong = cfg;
        wrong.counter = CounterVariant::None;
        let err = Ctx::new(wrong).unwrap().load_pulse().unwrap_err();
        assert!(matches!(err, Error::PulseMismatch(_)), "{err}");
    }

    #[test]
    fn subcommand_and_config_experiment_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(
            &path,
            r#"{"experiment": "optimize", "gate": "rz", "kt": 0.5}"#,
        )
        .unwrap();
        let cli = Cli {
            command: Command::Wigner(RunArgs {
                config: path,
                sets: vec![],
                out_dir: None,
                pulse: None,
            }),
        };
        let err = run(&cli).unwrap_err();
        assert!(err.to_string().contains("wigner"), "{err}");
    }

    #[test]
    fn error_json_is_machine_readable() {
        let e = Error::InvalidConfig("bad".into());
        let code = exit_code(&e);
        assert_eq!(code, 2);
        let v: serde_json::Value = serde_json::from_str(&error_json(&e, code)).unwrap();
        assert_eq!(v["error"]["kind"], "invalid_config");
        assert_eq!(v["error"]["exit_code"], 2);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 1);
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in SweepVariant::ALL {
            assert_eq!(SweepVariant::parse(v.label()).unwrap(), v);
        }
        assert!(SweepVariant::parse("annealed").is_err());
    }
}
