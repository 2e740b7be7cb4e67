use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;
use shf_core::exterior::Form;
use shf_core::stable::{validate_su3_with, ANALYTIC_TOL};
use shf_core::torus::{analyze, TorusSpec, DEFAULT_GRID};
use shf_core::ts3::{build_structure_with, stenzel_solve, BuiltStructure, Profile};
use shf_core::Error;

/// Largest |Scal| accepted for a Stenzel run on `[0.1, t_max]`.
const STENZEL_SCAL_TOL: f64 = 1e-5;
const STENZEL_WINDOW_START: f64 = 0.1;

#[derive(Parser)]
#[command(
    name = "shf",
    version,
    about = "Numerical SU(3)-structure and symplectic half-flat diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Tolerance for the pointwise SU(3) checks.
    #[arg(long, global = true, default_value_t = ANALYTIC_TOL)]
    tol: f64,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSON file holding `{"omega": <form>, "psi": <form>}`.
    Validate { input: PathBuf },
    /// Build the invariant structure on TS³ from a profile function.
    Ts3 {
        /// Expression in `t`, or `cosh` for −cosh(t).
        #[arg(long, allow_hyphen_values = true)]
        f1: String,
        #[arg(long, default_value_t = 3.0)]
        t_max: f64,
        /// Odd number of nodes on [−t_max, t_max].
        #[arg(long, default_value_t = 601)]
        samples: usize,
    },
    /// Diagnose the torus family built from a(x1), b(x2), c(x3).
    Torus {
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        a: String,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        b: String,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        c: String,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
    },
    /// Integrate the Calabi–Yau profile and sweep it.
    Stenzel {
        #[arg(long = "f1-at-0", allow_hyphen_values = true)]
        f1_at_0: f64,
        #[arg(long, default_value_t = 2.0)]
        t_max: f64,
        #[arg(long, default_value_t = 401)]
        samples: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// A nonzero exit with `key=value` diagnostics for stderr.
struct Failure {
    code: u8,
    fields: Vec<(&'static str, String)>,
}

impl Failure {
    fn new(code: u8, kind: &str) -> Self {
        Failure {
            code,
            fields: vec![("error", kind.to_string())],
        }
    }

    fn with(mut self, key: &'static str, value: impl Display) -> Self {
        self.fields.push((key, value.to_string()));
        self
    }

    fn input(message: impl Display) -> Self {
        Failure::new(2, "invalid_input").with("message", message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(p) => Failure::new(2, "parse")
                .with("position", p.position)
                .with("expected", p.expected)
                .with("found", p.found),
            Error::InvalidInput(m) => Failure::input(m),
            Error::Json(m) => Failure::new(2, "malformed_json").with("message", m),
            Error::AdmissibilityFailure {
                reason,
                first_violation_t,
            } => {
                let f = Failure::new(1, "admissibility");
                let f = match first_violation_t {
                    Some(t) => f.with("first_violation_t", t),
                    None => f,
                };
                f.with("reason", reason)
            }
            Error::ValidationFailure { t, check, residual } => Failure::new(1, "validation")
                .with("t", t)
                .with("check", check)
                .with("residual", format!("{residual:e}")),
            Error::PeriodicityViolation(name) => {
                Failure::new(1, "periodicity").with("function", name)
            }
            Error::OdeFailure { last_t, reason } => Failure::new(1, "ode")
                .with("last_t", last_t)
                .with("reason", reason),
            other => Failure::new(1, "invalid_structure").with("message", other),
        }
    }
}

fn quote(value: &str) -> String {
    if !value.is_empty() && !value.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        value.to_string()
    } else {
        format!("{value:?}")
    }
}

fn diagnostics(fields: &[(&str, String)]) {
    let line: Vec<String> = fields
        .iter()
        .map(|(k, v)| format!("{k}={}", quote(v)))
        .collect();
    eprintln!("{}", line.join(" "));
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    let written = match out {
        Some(path) => fs::write(path, bytes),
        None => io::stdout().lock().write_all(bytes),
    };
    written.map_err(|e| Failure::new(2, "io").with("message", e))
}

fn json_bytes(value: &impl serde::Serialize) -> Result<Vec<u8>, Failure> {
    // Value maps are ordered, so keys come out sorted
    let v =
        serde_json::to_value(value).map_err(|e| Failure::new(1, "serialize").with("message", e))?;
    let mut s = serde_json::to_string_pretty(&v).expect("Value always serializes");
    s.push('\n');
    Ok(s.into_bytes())
}

fn sweep_bytes(built: &BuiltStructure, format: Format) -> Result<Vec<u8>, Failure> {
    match format {
        Format::Csv => Ok(built.to_csv().into_bytes()),
        Format::Json => json_bytes(built),
    }
}

fn json_only(format: Option<Format>, command: &str) -> Result<(), Failure> {
    match format {
        Some(Format::Csv) => Err(Failure::input(format!("{command} only writes JSON"))),
        _ => Ok(()),
    }
}

fn validate(cli: &Cli, input: &Path) -> Result<Vec<(&'static str, String)>, Failure> {
    json_only(cli.format, "validate")?;
    let text = fs::read_to_string(input).map_err(|e| Failure::new(2, "io").with("message", e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Json(e.to_string()))?;
    let form = |key: &str| -> Result<Form, Failure> {
        let v = doc
            .get(key)
            .ok_or_else(|| Error::Json(format!("missing field `{key}`")))?;
        Ok(serde_json::from_value(v.clone()).map_err(|e| Error::Json(format!("{key}: {e}")))?)
    };
    let (omega, psi) = (form("omega")?, form("psi")?);
    let data = validate_su3_with(&omega, &psi, cli.tol).map_err(|e| match e {
        Error::DegreeMismatch { .. } | Error::FrameMismatch(..) => Failure::input(e),
        other => other.into(),
    })?;
    emit(cli.out.as_deref(), &json_bytes(&data)?)?;
    match data.checks.first_failure() {
        None => Ok(vec![("status", "valid".into()), ("P", data.p.to_string())]),
        Some(check) => {
            let key = match check {
                "compatibility" => "compatibility",
                "stability" => "s_squared",
                "normalization" => "normalization",
                _ => "min_eigenvalue",
            };
            Err(Failure::new(1, "invalid_structure")
                .with("check", check)
                .with("residual", format!("{:e}", data.residual(key))))
        }
    }
}

fn ts3(
    cli: &Cli,
    f1: &str,
    t_max: f64,
    samples: usize,
) -> Result<Vec<(&'static str, String)>, Failure> {
    let profile = match f1 {
        "cosh" => Profile::cosh(t_max, samples)?,
        src => Profile::parse(src, t_max, samples)?,
    };
    let built = build_structure_with(&profile, cli.tol)?;
    emit(
        cli.out.as_deref(),
        &sweep_bytes(&built, cli.format.unwrap_or(Format::Csv))?,
    )?;
    let sigma_sup = built
        .samples
        .iter()
        .filter_map(|s| s.torsion.as_ref())
        .map(|t| t.sigma.max_abs())
        .fold(0.0f64, f64::max);
    Ok(vec![
        ("status", "ok".into()),
        ("samples", built.samples.len().to_string()),
        ("sigma_sup", format!("{sigma_sup:e}")),
    ])
}

fn torus(
    cli: &Cli,
    a: &str,
    b: &str,
    c: &str,
    grid: usize,
) -> Result<Vec<(&'static str, String)>, Failure> {
    json_only(cli.format, "torus")?;
    let spec = TorusSpec::parse(a, b, c)?
        .with_grid(grid)?
        .with_tol(cli.tol)?;
    let report = analyze(&spec)?;
    emit(cli.out.as_deref(), &json_bytes(&report)?)?;
    Ok(vec![
        ("status", "ok".into()),
        ("strict", report.strict.to_string()),
        ("dim_lower_bound", report.dim_lower_bound.to_string()),
    ])
}

fn stenzel(
    cli: &Cli,
    f1_at_0: f64,
    t_max: f64,
    samples: usize,
) -> Result<Vec<(&'static str, String)>, Failure> {
    let profile = stenzel_solve(f1_at_0, t_max, samples)?;
    let built = build_structure_with(&profile, cli.tol)?;
    emit(
        cli.out.as_deref(),
        &sweep_bytes(&built, cli.format.unwrap_or(Format::Csv))?,
    )?;
    let max_scal = built
        .samples
        .iter()
        .filter(|s| s.t >= STENZEL_WINDOW_START - 1e-12)
        .map(|s| s.scal_sigma.abs())
        .fold(0.0f64, f64::max);
    if max_scal < STENZEL_SCAL_TOL {
        Ok(vec![
            ("status", "ok".into()),
            ("max_abs_scal", format!("{max_scal:e}")),
        ])
    } else {
        Err(Failure::new(1, "not_scalar_flat").with("max_abs_scal", format!("{max_scal:e}")))
    }
}

fn run(cli: &Cli) -> Result<Vec<(&'static str, String)>, Failure> {
    if !(cli.tol > 0.0 && cli.tol.is_finite()) {
        return Err(Failure::input(format!(
            "tolerance must be positive, got {}",
            cli.tol
        )));
    }
    match &cli.command {
        Command::Validate { input } => validate(cli, input),
        Command::Ts3 { f1, t_max, samples } => ts3(cli, f1, *t_max, *samples),
        Command::Torus { a, b, c, grid } => torus(cli, a, b, c, *grid),
        Command::Stenzel {
            f1_at_0,
            t_max,
            samples,
        } => stenzel(cli, *f1_at_0, *t_max, *samples),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            diagnostics(&summary);
            ExitCode::SUCCESS
        }
        Err(f) => {
            diagnostics(&f.fields);
            ExitCode::from(f.code)
        }
    }
}
