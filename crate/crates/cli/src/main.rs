//! Command-line front end for the two-atom simulator.
//!
//! Subcommands cover the dipole-dipole coupling functions, the drive-frame
//! resonance analysis, the three entangling protocols and parameter sweeps.
//! Run outputs go to `--out` as `trajectory.csv` / `summary.json` /
//! `sweep.csv`; table-like queries print JSON to stdout. All rates are in
//! units of `gamma13` and all times in `1/gamma13`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 degenerate steady state.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use dimer_sim::hilbert::{dicke_anti, dicke_sym, Ket};
use dimer_sim::rddi::{couplings_for_pair, GeometryConfig, SystemConfig};
use dimer_sim::schemes::{
    resolve, resonance_table, run_scheme, sweep, Preset, ResonanceRow, RunResult, SchemeConfig,
    SchemeKind, SweepAxisSpec, SweepTable,
};
use dimer_sim::solvers::Trajectory;
use dimer_sim::Error;

#[derive(Parser)]
#[command(
    name = "dimer",
    version,
    about = "Two dipole-dipole coupled three-level atoms under biharmonic driving",
    long_about = "Couplings, drive-frame spectra and entangling-transfer protocols for a pair \
                  of three-level atoms sharing a radiation field.\n\
                  Units: rates in gamma13, times in 1/gamma13 (gamma13 = 1).\n\
                  Exit codes: 0 success, 2 configuration error, 3 solver failure, \
                  4 degenerate steady state."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the dipole-dipole couplings of both transitions as JSON.
    Couplings(CouplingsArgs),
    /// Print the drive-free spectrum and the laser resonance table as JSON.
    Spectrum(RunArgs),
    /// Run the sequential two-pulse transfer; writes trajectory.csv and summary.json.
    Raman(RunArgs),
    /// Run the adiabatic-passage transfer; writes trajectory.csv and summary.json.
    Stirap(RunArgs),
    /// Pump toward the steady state; writes summary.json, plus trajectory.csv
    /// when the config asks for the relaxation trajectory.
    Pump(RunArgs),
    /// Evaluate a parameter grid; writes sweep.csv.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CouplingsArgs {
    /// Dimensionless separation k13 * R of the 1 <-> 3 transition.
    #[arg(long, value_name = "PHI", allow_negative_numbers = true)]
    phi: f64,
    /// Both dipoles parallel to each other and perpendicular to the
    /// interatomic axis (the default geometry).
    #[arg(long)]
    perp: bool,
    /// Dipole orientation of atom 1 as three comma-separated components.
    #[arg(long, value_name = "X,Y,Z", value_delimiter = ',', allow_negative_numbers = true)]
    e1: Option<Vec<f64>>,
    /// Dipole orientation of atom 2.
    #[arg(long, value_name = "X,Y,Z", value_delimiter = ',', allow_negative_numbers = true)]
    e2: Option<Vec<f64>>,
    /// Direction of the interatomic axis.
    #[arg(long, value_name = "X,Y,Z", value_delimiter = ',', allow_negative_numbers = true)]
    e_r: Option<Vec<f64>>,
    /// Decay rate of the 2 <-> 3 transition in units of gamma13.
    #[arg(long, value_name = "RATE", default_value_t = 1.0)]
    gamma23: f64,
    /// Wavenumber ratio k23 / k13.
    #[arg(long, value_name = "RATIO", default_value_t = 1.0)]
    freq_ratio: f64,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; scheme-appropriate defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for the run artifacts.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Drive parameter set, overriding the config file's choice.
    #[arg(long, value_name = "eq5|eq6|eq7|eq8sym|eq8asym")]
    preset: Option<String>,
    /// Recompute the detunings from the drive-free spectrum (on, default)
    /// or keep the nominal values (off).
    #[arg(long, value_name = "on|off")]
    auto_resonance: Option<OnOff>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep file: {"base": <run config>, "axes": [{"param": NAME, "values": [..]}]}.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory for sweep.csv.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Grid points evaluated in parallel; 0 means one per core. The output
    /// is identical for every value.
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Drive parameter set, overriding the base config's choice.
    #[arg(long, value_name = "eq5|eq6|eq7|eq8sym|eq8asym")]
    preset: Option<String>,
    /// Recompute the detunings from the drive-free spectrum (on, default)
    /// or keep the nominal values (off).
    #[arg(long, value_name = "on|off")]
    auto_resonance: Option<OnOff>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

/// A failure ready for the shell: message on stderr, code in `$?`.
struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_)
            | Error::AtomIndex(_)
            | Error::LevelIndex(_)
            | Error::DegeneratePair(_)
            | Error::AmbiguousLabel(_)
            | Error::Inversion(_) => 2,
            Error::DegenerateSteadyState(_) => 4,
            Error::StepUnderflow { .. }
            | Error::NonFiniteState { .. }
            | Error::NoNullVector { .. }
            | Error::TimeDependentGenerator(_) => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Couplings(args) => cmd_couplings(&args),
        Command::Spectrum(args) => cmd_spectrum(&args),
        Command::Raman(args) => cmd_run(&args, SchemeKind::Raman),
        Command::Stirap(args) => cmd_run(&args, SchemeKind::Stirap),
        Command::Pump(args) => cmd_run(&args, SchemeKind::Pumping),
        Command::Sweep(args) => cmd_sweep(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

// ---------------------------------------------------------------------------
// Config loading

/// Allowed keys of each JSON object, mirroring the config structs. Parsing
/// is strict either way; this pass exists to report every unknown key at
/// once instead of stopping at the first.
#[derive(Clone, Copy)]
enum Node {
    Any,
    Obj(&'static [(&'static str, Node)]),
    List(&'static Node),
}

const GEOMETRY_KEYS: Node = Node::Obj(&[("e1", Node::Any), ("e2", Node::Any), ("e_r", Node::Any)]);

const SYSTEM_KEYS: Node = Node::Obj(&[
    ("gamma13", Node::Any),
    ("gamma23", Node::Any),
    ("phi13", Node::Any),
    ("freq_ratio", Node::Any),
    ("geometry", GEOMETRY_KEYS),
]);

const JITTER_KEYS: Node = Node::Obj(&[("rate", Node::Any), ("mode", Node::Any)]);

const SCHEME_KEYS: Node = Node::Obj(&[
    ("preset", Node::Any),
    ("system", SYSTEM_KEYS),
    ("amplitude", Node::Any),
    ("pulse_width", Node::Any),
    ("auto_resonance", Node::Any),
    ("alpha13", Node::Any),
    ("alpha23", Node::Any),
    ("delta13", Node::Any),
    ("delta23", Node::Any),
    ("jitter", JITTER_KEYS),
    ("master_equation", Node::Any),
    ("samples_per_stage", Node::Any),
    ("relaxation_time", Node::Any),
    ("rel_tol", Node::Any),
    ("abs_tol", Node::Any),
    ("max_step", Node::Any),
]);

const AXIS_KEYS: Node = Node::Obj(&[("param", Node::Any), ("values", Node::Any)]);

const SWEEP_KEYS: Node =
    Node::Obj(&[("base", SCHEME_KEYS), ("axes", Node::List(&AXIS_KEYS))]);

fn collect_unknown(value: &Value, node: Node, path: &str, out: &mut Vec<String>) {
    let join = |key: &str| {
        if path.is_empty() { key.to_string() } else { format!("{path}.{key}") }
    };
    match node {
        Node::Any => {}
        Node::Obj(allowed) => {
            if let Value::Object(map) = value {
                for (key, sub) in map {
                    match allowed.iter().find(|(k, _)| k == key) {
                        Some((_, inner)) => collect_unknown(sub, *inner, &join(key), out),
                        None => out.push(join(key)),
                    }
                }
            }
        }
        Node::List(inner) => {
            if let Value::Array(items) = value {
                for (i, item) in items.iter().enumerate() {
                    collect_unknown(item, *inner, &format!("{path}[{i}]"), out);
                }
            }
        }
    }
}

fn parse_json_file(path: &Path, schema: Node) -> Result<Value, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(2, format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| fail(2, format!("config {} is not valid JSON: {e}", path.display())))?;
    let mut unknown = Vec::new();
    collect_unknown(&value, schema, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(fail(
            2,
            format!("config {}: unknown field(s) {}", path.display(), unknown.join(", ")),
        ));
    }
    Ok(value)
}

fn parse_preset(name: &str) -> Result<Preset, Failure> {
    Preset::from_str(name).map_err(Failure::from)
}

/// Builds the effective config from the file (or preset defaults) plus the
/// flag overrides shared by all run-style commands.
fn load_scheme_config(
    config_path: Option<&Path>,
    preset: Option<&str>,
    auto_resonance: Option<OnOff>,
) -> Result<SchemeConfig, Failure> {
    let mut config = match config_path {
        Some(path) => {
            let value = parse_json_file(path, SCHEME_KEYS)?;
            serde_json::from_value::<SchemeConfig>(value)
                .map_err(|e| fail(2, format!("config {}: {e}", path.display())))?
        }
        None => match preset {
            Some(name) => SchemeConfig::new(parse_preset(name)?),
            None => return Err(fail(2, "either --config or --preset is required")),
        },
    };
    if let Some(name) = preset {
        config.preset = parse_preset(name)?;
    }
    if let Some(flag) = auto_resonance {
        config.auto_resonance = flag == OnOff::On;
    }
    Ok(config)
}

fn expect_kind(config: &SchemeConfig, want: SchemeKind) -> Result<(), Failure> {
    if config.preset.kind() == want {
        Ok(())
    } else {
        Err(fail(
            2,
            format!(
                "preset {} belongs to the {} protocol, not {want}",
                config.preset,
                config.preset.kind()
            ),
        ))
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_couplings(args: &CouplingsArgs) -> Result<(), Failure> {
    let mut geometry = GeometryConfig::default();
    // --perp is the default orientation; listing it is allowed for clarity
    // but mixing it with explicit vectors would be ambiguous.
    if args.perp && (args.e1.is_some() || args.e2.is_some() || args.e_r.is_some()) {
        return Err(fail(2, "--perp conflicts with explicit --e1/--e2/--e_r vectors"));
    }
    for (name, given, slot) in [
        ("e1", &args.e1, &mut geometry.e1),
        ("e2", &args.e2, &mut geometry.e2),
        ("e_r", &args.e_r, &mut geometry.e_r),
    ] {
        if let Some(v) = given {
            *slot = <[f64; 3]>::try_from(v.as_slice())
                .map_err(|_| fail(2, format!("--{name} needs exactly three components")))?;
        }
    }
    let system = SystemConfig {
        gamma23: args.gamma23,
        phi13: args.phi,
        freq_ratio: args.freq_ratio,
        geometry,
        ..SystemConfig::default()
    };
    let couplings = couplings_for_pair(&system)?;
    println!("{}", to_pretty_json(&couplings)?);
    Ok(())
}

/// Spectrum dump: drive-free eigenenergies by symmetry label plus every
/// laser-addressable line with its coupling element and frame mismatch.
#[derive(Serialize)]
struct SpectrumReport<'a> {
    config: &'a SchemeConfig,
    target: String,
    alpha13: f64,
    alpha23: f64,
    delta13: f64,
    delta23: f64,
    amplitude: f64,
    /// Eigenenergies of the drive-free Hamiltonian, gamma13 units.
    spectrum: Vec<SpectrumLine>,
    resonances: Vec<ResonanceRow>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct SpectrumLine {
    state: String,
    energy: f64,
}

fn cmd_spectrum(args: &RunArgs) -> Result<(), Failure> {
    let config =
        load_scheme_config(args.config.as_deref(), args.preset.as_deref(), args.auto_resonance)?;
    let resolved = resolve(&config)?;
    let report = SpectrumReport {
        config: &config,
        target: resolved.target.to_string(),
        alpha13: resolved.alphas.0,
        alpha23: resolved.alphas.1,
        delta13: resolved.deltas.0,
        delta23: resolved.deltas.1,
        amplitude: resolved.amplitude,
        spectrum: resolved
            .spectrum
            .iter()
            .map(|(label, energy)| SpectrumLine { state: label.to_string(), energy: *energy })
            .collect(),
        resonances: resonance_table(&resolved),
        warnings: resolved.warnings,
    };
    println!("{}", to_pretty_json(&report)?);
    Ok(())
}

/// What summary.json holds: the effective config (sufficient to repeat the
/// run exactly) and everything the run reported.
#[derive(Serialize)]
struct SummaryFile<'a> {
    config: &'a SchemeConfig,
    summary: &'a dimer_sim::schemes::RunSummary,
}

fn cmd_run(args: &RunArgs, kind: SchemeKind) -> Result<(), Failure> {
    let config =
        load_scheme_config(args.config.as_deref(), args.preset.as_deref(), args.auto_resonance)?;
    expect_kind(&config, kind)?;
    let result = run_scheme(&config)?;
    write_run_outputs(&args.out, &config, &result)
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let value = parse_json_file(&args.config, SWEEP_KEYS)?;
    let file: SweepFile = serde_json::from_value(value)
        .map_err(|e| fail(2, format!("config {}: {e}", args.config.display())))?;
    let mut base = file.base;
    if let Some(name) = &args.preset {
        base.preset = parse_preset(name)?;
    }
    if let Some(flag) = args.auto_resonance {
        base.auto_resonance = flag == OnOff::On;
    }
    let table = sweep(&base, &file.axes, args.jobs)?;
    write_file(&args.out, "sweep.csv", &render_sweep_csv(&table))?;
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    if !table.rows.is_empty() && failed == table.rows.len() {
        return Err(fail(3, format!("all {failed} grid points failed; see sweep.csv")));
    }
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    base: SchemeConfig,
    axes: Vec<SweepAxisSpec>,
}

// ---------------------------------------------------------------------------
// Output rendering

/// 17 significant digits: parsing the text back reproduces the exact double.
fn full(x: f64) -> String {
    format!("{x:.16e}")
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| fail(3, format!("cannot serialize: {e}")))
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| fail(3, format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, content)
        .map_err(|e| fail(3, format!("cannot write {}: {e}", path.display())))
}

fn write_run_outputs(
    dir: &Path,
    config: &SchemeConfig,
    result: &RunResult,
) -> Result<(), Failure> {
    let summary = SummaryFile { config, summary: &result.summary };
    let mut json = to_pretty_json(&summary)?;
    json.push('\n');
    write_file(dir, "summary.json", &json)?;
    if let Some(traj) = &result.trajectory {
        write_file(dir, "trajectory.csv", &render_trajectory_csv(traj)?)?;
    }
    Ok(())
}

fn render_trajectory_csv(traj: &Trajectory) -> Result<String, Failure> {
    let targets: Vec<Ket> = [dicke_sym(1, 2), dicke_anti(1, 2), dicke_sym(1, 3), dicke_anti(1, 3)]
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(Failure::from)?;
    let fids: Vec<Vec<f64>> = targets.iter().map(|t| traj.fidelity_series(t)).collect();
    let pops = traj.populations();

    let mut out = String::new();
    out.push_str("# time in 1/gamma13; populations in the flat product basis |ab>; gamma13 = 1\n");
    out.push_str("time,p11,p12,p13,p21,p22,p23,p31,p32,p33,fid_s12,fid_a12,fid_s13,fid_a13\n");
    for (i, t) in traj.times.iter().enumerate() {
        write!(out, "{}", full(*t)).unwrap();
        for p in pops[i] {
            write!(out, ",{}", full(p)).unwrap();
        }
        for series in &fids {
            write!(out, ",{}", full(series[i].clamp(0.0, 1.0))).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// One CSV field; quotes anything that would break the row structure.
fn csv_field(s: &str) -> String {
    let flat = s.replace(['\n', '\r'], " ");
    if flat.contains(',') || flat.contains('"') {
        format!("\"{}\"", flat.replace('"', "\"\""))
    } else {
        flat
    }
}

fn render_sweep_csv(table: &SweepTable) -> String {
    let mut out = String::new();
    out.push_str("# one row per grid point; rates in gamma13 units, times in 1/gamma13\n");
    out.push_str("index");
    for axis in &table.axes {
        write!(out, ",{axis}").unwrap();
    }
    out.push_str(",fidelity,error\n");
    for row in &table.rows {
        write!(out, "{}", row.index).unwrap();
        for v in &row.values {
            write!(out, ",{}", full(*v)).unwrap();
        }
        match (&row.fidelity, &row.error) {
            (Some(f), _) => write!(out, ",{},", full(f.clamp(0.0, 1.0))).unwrap(),
            (None, Some(e)) => write!(out, ",,{}", csv_field(e)).unwrap(),
            (None, None) => out.push_str(",,"),
        }
        out.push('\n');
    }
    out
}
