//! Command-line front end: declarative TOML configuration, run/sweep/compare
//! orchestration, and CSV/JSON file emission.
//!
//! Subcommands:
//!
//! * `run` — single operating point with the configured method; writes time
//!   series / spectra / S-parameters as applicable plus a JSON run report.
//! * `sweep` — gain curve over a signal-frequency grid with one method.
//! * `compare` — the same grid evaluated by all three methods, merged into
//!   one CSV with a column per method.
//! * `device-info` — closed-form device summary as JSON on stdout.
//! * `netlist export` — the constructed netlist as JSON.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure,
//! 3 partial sweep (some points failed, some succeeded).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    cme_gain, gain_point, idler_frequency, signal_power_dbm, spectrum, sweep_gain, GainCurve,
    GainExtraction, GainMethod, SweepSpec,
};
use crate::device::{
    fold_flux, snail_effective_inductance, snail_taylor_coefficients, SnailParams, TwpaDeviceSpec,
};
use crate::hbal::{small_signal_sparams, solve_pump, sparams_to_csv, HbSettings};
use crate::netlist::{build_snail_twpa, build_through, FluxBias, FluxBiasScheme};
use crate::transient::{simulate, DriveSpec, SolverSettings, Tone};
use crate::{Error, Result};

/// Environment variable overriding the output directory (lower precedence
/// than the `--output-dir` flag, higher than the config file).
pub const OUTPUT_DIR_ENV: &str = "TWPASIM_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

// ---------------------------------------------------------------------------
// Configuration document

/// Which engine(s) a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    Transient,
    HarmonicBalance,
    Cme,
    Compare,
}

impl MethodChoice {
    fn as_str(self) -> &'static str {
        match self {
            MethodChoice::Transient => "transient",
            MethodChoice::HarmonicBalance => "harmonic-balance",
            MethodChoice::Cme => "cme",
            MethodChoice::Compare => "compare",
        }
    }
}

/// Custom device description (alternative to `preset`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub cell: SnailParams,
    pub n_cells: usize,
    #[serde(default = "default_port_impedance")]
    pub port_impedance: f64,
    #[serde(default = "default_true")]
    pub alternating_polarity: bool,
}

fn default_port_impedance() -> f64 {
    50.0
}

fn default_true() -> bool {
    true
}

/// Pump and signal tones. Unset pump power falls back to the benchmark
/// defaults: −79 dBm near zero flux, −78 dBm near half a flux quantum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveConfig {
    pub pump_frequency_hz: f64,
    pub pump_power_dbm: Option<f64>,
    pub pump_phase_rad: f64,
    pub signal_frequency_hz: f64,
    pub signal_power_dbm: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            pump_frequency_hz: 4.415e9,
            pump_power_dbm: None,
            pump_phase_rad: 0.0,
            signal_frequency_hz: 4.215e9,
            signal_power_dbm: -110.0,
        }
    }
}

/// Uniform signal-frequency grid for `sweep` and `compare`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub points: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        // 51 points spanning DC to 10 GHz; out-of-band points are recorded
        // as per-point failures rather than aborting the sweep.
        SweepGrid {
            start_hz: 0.0,
            stop_hz: 10.0e9,
            points: 51,
        }
    }
}

/// The full declarative run configuration (TOML). Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Named preset; currently `snail-250`. Mutually exclusive with `device`.
    pub preset: Option<String>,
    pub device: Option<DeviceConfig>,
    /// External flux per cell in units of Φ₀ (folded into (−0.5, 0.5]).
    pub flux: f64,
    pub flux_scheme: FluxBiasScheme,
    pub method: MethodChoice,
    pub drive: DriveConfig,
    pub sweep: Option<SweepGrid>,
    pub transient: SolverSettings,
    pub hb: HbSettings,
    pub extraction: GainExtraction,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            device: None,
            flux: 0.0,
            flux_scheme: FluxBiasScheme::PhaseSource,
            method: MethodChoice::Transient,
            drive: DriveConfig::default(),
            sweep: None,
            transient: SolverSettings::default(),
            hb: HbSettings::default(),
            extraction: GainExtraction::default(),
            output_dir: None,
        }
    }
}

/// Parse and validate a configuration document.
pub fn parse_config(document: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(document).map_err(|e| Error::config(format!("config parse: {e}")))?;
    cfg.resolve()?; // surface validation errors eagerly
    Ok(cfg)
}

/// Everything a handler needs, resolved from the config.
pub struct ResolvedConfig {
    pub spec: TwpaDeviceSpec,
    pub pump: Tone,
    pub signal: Tone,
}

impl RunConfig {
    /// Resolve presets and defaults into a validated device spec and tones.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let flux = fold_flux(self.flux);
        let bias = FluxBias::new(self.flux_scheme, flux);
        let spec = match (&self.preset, &self.device) {
            (Some(name), None) => match name.as_str() {
                "snail-250" => TwpaDeviceSpec::snail250(bias),
                other => {
                    return Err(Error::config(format!(
                        "unknown preset '{other}' (available: snail-250)"
                    )))
                }
            },
            (None, Some(dev)) => TwpaDeviceSpec {
                cell: dev.cell,
                n_cells: dev.n_cells,
                port_impedance: dev.port_impedance,
                flux_bias: bias,
                alternating_polarity: dev.alternating_polarity,
            },
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "specify either `preset` or `[device]`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    "missing device: set `preset = \"snail-250\"` or a `[device]` table",
                ))
            }
        };
        spec.validate()?;
        let pump_dbm = self.drive.pump_power_dbm.unwrap_or({
            // Benchmark defaults: −79 dBm near zero flux, −78 dBm near Φ₀/2.
            if flux.abs() >= 0.375 {
                -78.0
            } else {
                -79.0
            }
        });
        Ok(ResolvedConfig {
            spec,
            pump: Tone {
                frequency: self.drive.pump_frequency_hz,
                power_dbm: pump_dbm,
                phase: self.drive.pump_phase_rad,
            },
            signal: Tone {
                frequency: self.drive.signal_frequency_hz,
                power_dbm: self.drive.signal_power_dbm,
                phase: 0.0,
            },
        })
    }

    fn sweep_spec(&self, pump: Tone) -> SweepSpec {
        let grid = self.sweep.unwrap_or_default();
        let mut sw = SweepSpec::linspace(grid.start_hz, grid.stop_hz, grid.points, pump);
        sw.extraction = self.extraction;
        sw.solver = self.transient;
        sw.hb = self.hb;
        sw
    }
}

// ---------------------------------------------------------------------------
// Run report

/// Machine-readable record of what a command did. The file manifest lists
/// only files actually written.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub method: String,
    pub wall_seconds: f64,
    pub points_total: usize,
    pub points_failed: usize,
    pub diagnostics: Vec<String>,
    pub files: Vec<String>,
}

impl RunReport {
    fn new(command: &str, method: MethodChoice) -> Self {
        RunReport {
            command: command.to_string(),
            method: method.as_str().to_string(),
            wall_seconds: 0.0,
            points_total: 0,
            points_failed: 0,
            diagnostics: Vec::new(),
            files: Vec::new(),
        }
    }
}

/// Writes output files into one directory, tracking the manifest.
struct Emitter {
    dir: PathBuf,
    files: Vec<String>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        fs::write(self.dir.join(name), content)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, mut report: RunReport, started: Instant) -> Result<RunReport> {
        report.wall_seconds = started.elapsed().as_secs_f64();
        report.files = self.files.clone();
        report.files.push("report.json".to_string());
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::config(format!("report serialization: {e}")))?;
        self.write("report.json", &json)?;
        report.files = self.files;
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// Argument grammar

#[derive(Parser, Debug)]
#[command(
    name = "twpasim",
    about = "SNAIL traveling-wave parametric amplifier simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to the TOML configuration document.
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Validate the config and print the execution plan without running.
    #[arg(long)]
    dry_run: bool,
    /// Sweep-point concurrency (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (overrides TWPASIM_OUTPUT_DIR and the config).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a single operating point with the configured method.
    Run(CommonArgs),
    /// Compute a gain curve over the configured signal-frequency grid.
    Sweep(CommonArgs),
    /// Evaluate the grid with all three methods and merge the curves.
    Compare(CommonArgs),
    /// Print a closed-form device summary as JSON.
    DeviceInfo {
        #[arg(long, short = 'c')]
        config: PathBuf,
    },
    /// Netlist inspection.
    Netlist {
        #[command(subcommand)]
        command: NetlistCommand,
    },
}

#[derive(Debug, Subcommand)]
enum NetlistCommand {
    /// Write the constructed netlist as JSON (stdout unless --out is given).
    Export {
        #[arg(long, short = 'c')]
        config: PathBuf,
        /// Omit junction shunt resistors (the harmonic-balance variant).
        #[arg(long)]
        lossless: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Entry point used by the `twpasim` binary; returns the process exit code.
pub fn main() -> i32 {
    run_cli(std::env::args_os())
}

/// Testable CLI driver.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

type CliResult = std::result::Result<i32, (i32, String)>;

fn config_err<T>(e: Error) -> std::result::Result<T, (i32, String)> {
    Err((EXIT_CONFIG, e.to_string()))
}

fn solver_err<T>(e: Error) -> std::result::Result<T, (i32, String)> {
    Err((EXIT_SOLVER, e.to_string()))
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run(args) => with_setup(&args, "run", cmd_run),
        Command::Sweep(args) => with_setup(&args, "sweep", cmd_sweep),
        Command::Compare(args) => with_setup(&args, "compare", cmd_compare),
        Command::DeviceInfo { config } => cmd_device_info(&config),
        Command::Netlist {
            command: NetlistCommand::Export {
                config,
                lossless,
                out,
            },
        } => cmd_netlist_export(&config, lossless, out.as_deref()),
    }
}

fn load_config(path: &Path) -> std::result::Result<RunConfig, (i32, String)> {
    let text = fs::read_to_string(path)
        .map_err(|e| (EXIT_CONFIG, format!("read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))
}

fn resolve_output_dir(args: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    args.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("twpasim-out"))
}

fn with_setup(
    args: &CommonArgs,
    name: &str,
    body: fn(&RunConfig, &ResolvedConfig, &mut Emitter, &mut RunReport) -> CliResult,
) -> CliResult {
    let cfg = load_config(&args.config)?;
    let resolved = cfg.resolve().or_else(config_err)?;
    let out_dir = resolve_output_dir(args, &cfg);
    if let Some(jobs) = args.jobs {
        // Ignore the error: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    if args.dry_run {
        print_plan(name, &cfg, &resolved, &out_dir);
        return Ok(EXIT_OK);
    }
    let started = Instant::now();
    let mut emitter = Emitter::new(&out_dir).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let mut report = RunReport::new(name, cfg.method);
    let code = body(&cfg, &resolved, &mut emitter, &mut report)?;
    let report = emitter
        .finish(report, started)
        .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    println!(
        "{name} finished in {:.2} s; {} file(s) in {}",
        report.wall_seconds,
        report.files.len(),
        out_dir.display()
    );
    Ok(code)
}

fn print_plan(name: &str, cfg: &RunConfig, resolved: &ResolvedConfig, out_dir: &Path) {
    let grid = cfg.sweep.unwrap_or_default();
    println!("plan: {name}");
    println!("  method:          {}", cfg.method.as_str());
    println!(
        "  device:          {} cells, flux {:+.3} Φ₀ ({:?})",
        resolved.spec.n_cells, resolved.spec.flux_bias.target_flux, cfg.flux_scheme
    );
    println!(
        "  pump:            {:.4} GHz at {:.1} dBm",
        resolved.pump.frequency / 1e9,
        resolved.pump.power_dbm
    );
    match name {
        "run" => println!(
            "  signal:          {:.4} GHz at {:.1} dBm",
            resolved.signal.frequency / 1e9,
            resolved.signal.power_dbm
        ),
        _ => println!(
            "  grid:            {} points, {:.3}–{:.3} GHz",
            grid.points,
            grid.start_hz / 1e9,
            grid.stop_hz / 1e9
        ),
    }
    println!("  output dir:      {} (not written)", out_dir.display());
}

// ---------------------------------------------------------------------------
// Subcommand bodies

fn cmd_run(
    cfg: &RunConfig,
    r: &ResolvedConfig,
    em: &mut Emitter,
    report: &mut RunReport,
) -> CliResult {
    report.points_total = 1;
    let f_s = r.signal.frequency;
    match cfg.method {
        MethodChoice::Cme => {
            let gain = cme_gain(&r.spec, r.pump, f_s).or_else(solver_err)?;
            report
                .diagnostics
                .push(format!("cme gain at {:.4} GHz: {gain:.3} dB", f_s / 1e9));
            println!("cme gain: {gain:.3} dB");
        }
        MethodChoice::HarmonicBalance => {
            let net = build_snail_twpa(&r.spec, true).or_else(config_err)?;
            let state = solve_pump(&net, r.pump, &cfg.hb).or_else(solver_err)?;
            let sp = small_signal_sparams(&state, f_s, cfg.hb.n_modes).or_else(solver_err)?;
            em.write("sparams.csv", &sparams_to_csv(std::slice::from_ref(&sp)))
                .or_else(config_err)?;
            report.diagnostics.push(format!(
                "pump residual {:.3e}, {} continuation stage(s), gain {:.3} dB",
                state.residual_norm,
                state.continuation_stages,
                sp.gain_db()
            ));
            println!("harmonic-balance gain: {:.3} dB", sp.gain_db());
        }
        MethodChoice::Transient => {
            // Full physical model (RSJ shunts included): time series and
            // spectrum, plus the gain referred to a through calibration.
            let net = build_snail_twpa(&r.spec, false).or_else(config_err)?;
            let drive = DriveSpec {
                tones: vec![r.pump, r.signal],
                total_time: cfg.extraction.total_time,
                record: Default::default(),
            };
            let ts = simulate(&net, &drive, &cfg.transient).or_else(solver_err)?;
            em.write("timeseries.csv", &ts.to_csv()).or_else(config_err)?;
            let out = ts.signal("I(Pout)").expect("port current is recorded");
            let dt = ts.time[1] - ts.time[0];
            let tail = (ts.time.len() as f64 * cfg.extraction.settle_fraction) as usize;
            let spec_out = spectrum(&out.samples[tail..], dt).or_else(solver_err)?;
            em.write("spectrum.csv", &spec_out.to_csv()).or_else(config_err)?;

            let through = build_through(r.spec.port_impedance);
            let ts_ref = simulate(&through, &drive, &cfg.transient).or_else(solver_err)?;
            let gain = gain_point(
                &ts_ref,
                &ts,
                r.pump.frequency,
                f_s,
                r.spec.port_impedance,
                cfg.extraction.settle_fraction,
            )
            .or_else(solver_err)?;
            let f_i = idler_frequency(r.pump.frequency, f_s);
            let idler = signal_power_dbm(
                &ts,
                r.pump.frequency,
                f_i,
                r.spec.port_impedance,
                cfg.extraction.settle_fraction,
            )
            .or_else(solver_err)?;
            report.diagnostics.push(format!(
                "gain at {:.4} GHz: {gain:.3} dB; idler at {:.4} GHz: {idler:.1} dBm",
                f_s / 1e9,
                f_i / 1e9
            ));
            println!("transient gain (incl. losses): {gain:.3} dB");
        }
        MethodChoice::Compare => {
            let curves = compare_curves(
                cfg,
                r,
                &SweepSpec {
                    signal_frequencies: vec![f_s],
                    pump: r.pump,
                    extraction: cfg.extraction,
                    solver: cfg.transient,
                    hb: cfg.hb,
                },
                em,
                report,
            )?;
            return Ok(curve_exit_code(&curves));
        }
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(
    cfg: &RunConfig,
    r: &ResolvedConfig,
    em: &mut Emitter,
    report: &mut RunReport,
) -> CliResult {
    let method = match cfg.method {
        MethodChoice::Transient => GainMethod::Transient,
        MethodChoice::HarmonicBalance => GainMethod::HarmonicBalance,
        MethodChoice::Cme => GainMethod::CoupledMode,
        MethodChoice::Compare => {
            return Err((
                EXIT_CONFIG,
                "method = \"compare\" is served by the `compare` subcommand".into(),
            ))
        }
    };
    let sw = cfg.sweep_spec(r.pump);
    let curve = sweep_gain(&r.spec, method, &sw).or_else(solver_err)?;
    log_curve(&curve, report);
    em.write(&format!("gain_{}.csv", cfg.method.as_str()), &curve.to_csv())
        .or_else(config_err)?;
    report.points_total = sw.signal_frequencies.len();
    report.points_failed = curve.failures.len();
    Ok(curve_exit_code(std::slice::from_ref(&curve)))
}

fn cmd_compare(
    cfg: &RunConfig,
    r: &ResolvedConfig,
    em: &mut Emitter,
    report: &mut RunReport,
) -> CliResult {
    let sw = cfg.sweep_spec(r.pump);
    let curves = compare_curves(cfg, r, &sw, em, report)?;
    Ok(curve_exit_code(&curves))
}

fn compare_curves(
    cfg: &RunConfig,
    r: &ResolvedConfig,
    sw: &SweepSpec,
    em: &mut Emitter,
    report: &mut RunReport,
) -> std::result::Result<Vec<GainCurve>, (i32, String)> {
    let methods = [
        GainMethod::CoupledMode,
        GainMethod::Transient,
        GainMethod::HarmonicBalance,
    ];
    let mut curves = Vec::new();
    for method in methods {
        let curve = sweep_gain(&r.spec, method, sw).or_else(solver_err)?;
        log_curve(&curve, report);
        em.write(&format!("gain_{method}.csv"), &curve.to_csv())
            .or_else(config_err)?;
        curves.push(curve);
    }
    em.write("compare.csv", &merged_csv(&sw.signal_frequencies, &curves, r, cfg))
        .or_else(config_err)?;
    report.points_total = sw.signal_frequencies.len() * methods.len();
    report.points_failed = curves.iter().map(|c| c.failures.len()).sum();
    Ok(curves)
}

/// One merged CSV with a gain column per method; failed points are blank.
fn merged_csv(grid: &[f64], curves: &[GainCurve], r: &ResolvedConfig, cfg: &RunConfig) -> String {
    let mut out = format!(
        "# f_p_Hz={:.9e} pump_dBm={} flux={}\n",
        r.pump.frequency, r.pump.power_dbm, cfg.flux
    );
    out.push_str("f_s_Hz");
    for c in curves {
        out.push_str(&format!(",{}_dB", c.method.to_string().replace('-', "_")));
    }
    out.push('\n');
    for &f_s in grid {
        out.push_str(&format!("{f_s:.9e}"));
        for c in curves {
            match c.gain_at(f_s) {
                Some(g) => out.push_str(&format!(",{g:.6}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

fn log_curve(curve: &GainCurve, report: &mut RunReport) {
    for p in &curve.points {
        println!(
            "{} f_s={:.4} GHz gain={:+.3} dB",
            curve.method,
            p.signal_frequency / 1e9,
            p.gain_db
        );
    }
    for f in &curve.failures {
        let line = format!(
            "{} f_s={:.4} GHz failed: {}",
            curve.method,
            f.signal_frequency / 1e9,
            f.message
        );
        println!("{line}");
        report.diagnostics.push(line);
    }
}

fn curve_exit_code(curves: &[GainCurve]) -> i32 {
    let failed: usize = curves.iter().map(|c| c.failures.len()).sum();
    let ok: usize = curves.iter().map(|c| c.points.len()).sum();
    if failed == 0 {
        EXIT_OK
    } else if ok == 0 {
        EXIT_SOLVER
    } else {
        EXIT_PARTIAL
    }
}

// ---------------------------------------------------------------------------
// device-info and netlist export

fn cmd_device_info(config: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let r = cfg.resolve().or_else(config_err)?;
    let json = device_info_json(&r.spec).or_else(config_err)?;
    println!("{json}");
    Ok(EXIT_OK)
}

/// Closed-form device summary: effective inductance, Taylor coefficients,
/// normal resistance, predicted propagation time N√(L·C_g), and the
/// characteristic impedance √(L/C_g).
pub fn device_info_json(spec: &TwpaDeviceSpec) -> Result<String> {
    let flux = spec.flux_bias.target_flux;
    let l_eff = snail_effective_inductance(&spec.cell, flux)?;
    let taylor = snail_taylor_coefficients(&spec.cell, flux, 4)?;
    let c_g = spec.cell.ground_capacitance;
    let t_prop = spec.n_cells as f64 * (l_eff * c_g).sqrt();
    let value = serde_json::json!({
        "n_cells": spec.n_cells,
        "flux_phi0": flux,
        "l_eff_H": l_eff,
        "c2": taylor[0],
        "c3": taylor[1],
        "c4": taylor[2],
        "r_n_ohm": spec.cell.large_junction.normal_resistance,
        "t_prop_s": t_prop,
        "z_char_ohm": (l_eff / c_g).sqrt(),
        "port_impedance_ohm": spec.port_impedance,
    });
    serde_json::to_string_pretty(&value)
        .map_err(|e| Error::config(format!("device info serialization: {e}")))
}

fn cmd_netlist_export(config: &Path, lossless: bool, out: Option<&Path>) -> CliResult {
    let cfg = load_config(config)?;
    let r = cfg.resolve().or_else(config_err)?;
    let net = build_snail_twpa(&r.spec, lossless).or_else(config_err)?;
    let json = net.to_json_string().or_else(config_err)?;
    match out {
        Some(path) => {
            fs::write(path, &json).map_err(|e| (EXIT_CONFIG, format!("write {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    const PRESET_CFG: &str = "preset = \"snail-250\"\n";

    #[test]
    fn preset_fills_benchmark_values() {
        let cfg = parse_config(PRESET_CFG).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.spec.n_cells, 250);
        assert_eq!(r.spec.cell.large_junction.critical_current, 1.47e-6);
        assert_eq!(r.spec.cell.junction_ratio, 0.05);
        assert_eq!(r.spec.cell.large_junction.capacitance, 31e-15);
        assert_eq!(r.spec.cell.ground_capacitance, 550e-15);
        assert_eq!(r.pump.power_dbm, -79.0);
    }

    #[test]
    fn half_flux_defaults_to_minus_78_dbm() {
        let cfg = parse_config("preset = \"snail-250\"\nflux = 0.5\n").unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.pump.power_dbm, -78.0);
        // An explicit power wins over the preset default.
        let cfg =
            parse_config("preset = \"snail-250\"\nflux = 0.5\n[drive]\npump_power_dbm = -80\n")
                .unwrap();
        assert_eq!(cfg.resolve().unwrap().pump.power_dbm, -80.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("preset = \"snail-250\"\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn negative_capacitance_is_rejected() {
        let doc = r#"
[device]
n_cells = 10
[device.cell]
junction_ratio = 0.05
n_large = 3
ground_capacitance = -550e-15
[device.cell.large_junction]
critical_current = 1.47e-6
capacitance = 31e-15
"#;
        let err = parse_config(doc).unwrap_err();
        assert!(err.to_string().contains("capacitance"), "{err}");
    }

    #[test]
    fn missing_device_and_unknown_preset_are_config_errors() {
        assert!(parse_config("").is_err());
        assert!(parse_config("preset = \"snail-9000\"\n").is_err());
    }

    #[test]
    fn flux_is_folded_into_first_period() {
        let cfg = parse_config("preset = \"snail-250\"\nflux = 1.25\n").unwrap();
        let r = cfg.resolve().unwrap();
        assert!((r.spec.flux_bias.target_flux - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dry_run_prints_plan_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.toml");
        std::fs::write(&cfg_path, PRESET_CFG).unwrap();
        let out_dir = dir.path().join("out");
        let code = run_cli([
            "twpasim",
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
            "--dry-run",
        ]);
        assert_eq!(code, EXIT_OK);
        assert!(!out_dir.exists());
    }

    #[test]
    fn bad_config_exits_with_code_1() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.toml");
        std::fs::write(&cfg_path, "preset = \"nope\"\n").unwrap();
        let code = run_cli(["twpasim", "run", "--config", cfg_path.to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG);
        // Missing file is also a config error.
        let code = run_cli(["twpasim", "run", "--config", "/nonexistent/cfg.toml"]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn cme_run_writes_report_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.toml");
        std::fs::write(&cfg_path, "preset = \"snail-250\"\nmethod = \"cme\"\n").unwrap();
        let out_dir = dir.path().join("out");
        let code = run_cli([
            "twpasim",
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        let report: RunReport =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report.method, "cme");
        // The manifest lists exactly the files that exist.
        for f in &report.files {
            assert!(out_dir.join(f).exists(), "missing {f}");
        }
        assert!(report.files.contains(&"report.json".to_string()));
    }

    #[test]
    fn cme_sweep_is_deterministic_and_marks_partial() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.toml");
        // The 0–10 GHz default grid includes out-of-band points, so a CME
        // sweep is necessarily partial.
        std::fs::write(
            &cfg_path,
            "preset = \"snail-250\"\nmethod = \"cme\"\n[sweep]\nstart_hz = 1e8\nstop_hz = 10e9\npoints = 21\n",
        )
        .unwrap();
        let run = |out: &Path| {
            let code = run_cli([
                "twpasim",
                "sweep",
                "--config",
                cfg_path.to_str().unwrap(),
                "--output-dir",
                out.to_str().unwrap(),
            ]);
            (code, std::fs::read_to_string(out.join("gain_cme.csv")).unwrap())
        };
        let (code_a, csv_a) = run(&dir.path().join("a"));
        let (code_b, csv_b) = run(&dir.path().join("b"));
        assert_eq!(code_a, EXIT_PARTIAL);
        assert_eq!(code_a, code_b);
        assert_eq!(csv_a, csv_b, "data files must be byte-identical");
        assert!(csv_a.lines().any(|l| l.starts_with("f_s_Hz")));
    }

    #[test]
    fn device_info_reports_table_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.toml");
        std::fs::write(&cfg_path, PRESET_CFG).unwrap();
        let cfg = load_config(&cfg_path).unwrap();
        let r = cfg.resolve().unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&device_info_json(&r.spec).unwrap()).unwrap();
        let l_eff = json["l_eff_H"].as_f64().unwrap();
        assert!((l_eff - 584e-12).abs() < 0.01 * 584e-12, "L_eff = {l_eff}");
        let rn = json["r_n_ohm"].as_f64().unwrap();
        assert!((rn - 224.5).abs() < 0.01 * 224.5, "R_N = {rn}");
        let t_prop = json["t_prop_s"].as_f64().unwrap();
        assert!((t_prop - 4.48e-9).abs() < 0.05e-9, "t_prop = {t_prop}");
        assert_eq!(json["c3"].as_f64().unwrap(), 0.0); // flux 0 → no 3WM
    }

    #[test]
    fn netlist_export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.toml");
        std::fs::write(&cfg_path, PRESET_CFG).unwrap();
        let out = dir.path().join("net.json");
        let code = run_cli([
            "twpasim",
            "netlist",
            "export",
            "--config",
            cfg_path.to_str().unwrap(),
            "--lossless",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        let net =
            crate::netlist::Netlist::from_json_str(&std::fs::read_to_string(&out).unwrap())
                .unwrap();
        assert!(crate::netlist::validate(&net).is_empty());
    }
}
