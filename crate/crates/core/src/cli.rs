//! Command-line surface.
//!
//! Exit codes: 0 when a verdict (or other requested output) was produced,
//! 2 on malformed input or invalid arguments, 3 when a numerical step failed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::certify::{self, CertificateFile, SeparabilityCertificate};
use crate::engine::{self, RobustSource, ThresholdOptions, Verdict, VerdictKind};
use crate::error::{Error, Result};
use crate::gaussian::{self, BipartiteCM, CmFile, Purity};
use crate::matlin::ToleranceConfig;
use crate::ppt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gaussep",
    version,
    about = "Separability of bipartite Gaussian states"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Relative tolerance of positivity tests.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol_psd: f64,
    /// Relative eigenvalue cutoff of the pseudoinverse.
    #[arg(long, global = true, default_value_t = 1e-12)]
    pub tol_pinv: f64,
    /// Absolute margin required by the stopping tests.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub margin: f64,
    #[arg(long, global = true, default_value_t = engine::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide separable / entangled.
    Check {
        #[arg(long)]
        input: PathBuf,
        /// Decide through `gamma ± eps 1` instead of `gamma` alone.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Emit a separability certificate or an entanglement witness.
    Certify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Verdict and step count along `gamma + eps P`.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        /// JSON array of rows; identity when omitted.
        #[arg(long)]
        perturbation: Option<PathBuf>,
        /// Explicit comma-separated values.
        #[arg(
            long,
            value_delimiter = ',',
            conflicts_with = "eps_grid",
            required_unless_present = "eps_grid"
        )]
        eps: Vec<f64>,
        /// `lo:hi:points`, optionally followed by `:log` (default) or `:lin`.
        #[arg(long)]
        eps_grid: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Smallest `eps` making `gamma + eps P` separable.
    Threshold {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        perturbation: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-12)]
        width: f64,
        #[arg(long, default_value_t = 1e6)]
        eps_max: f64,
    },
    /// Generate a correlation matrix file.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum GenKind {
    /// Two-mode squeezed vacuum.
    Tmss {
        #[arg(long)]
        r: f64,
    },
    /// Random state from a seeded generator.
    Random {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, conflicts_with = "mixed")]
        pure: bool,
        #[arg(long)]
        mixed: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Product of random local states (C = 0).
    Product {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Input(String),
    Numerical(String),
}

type Outcome<T> = std::result::Result<T, Failure>;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(&cli) {
        Ok(text) => match emit(&cli.common.output, &text, stdout) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                EXIT_INPUT
            }
        },
        Err(Failure::Input(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_INPUT
        }
        Err(Failure::Numerical(msg)) => {
            let _ = writeln!(stderr, "numerical failure: {msg}");
            EXIT_NUMERICAL
        }
    }
}

fn emit(path: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> std::io::Result<()> {
    match path {
        Some(p) => fs::write(p, text),
        None => stdout.write_all(text.as_bytes()),
    }
}

fn execute(cli: &Cli) -> Outcome<String> {
    let c = &cli.common;
    let tol = ToleranceConfig::new(c.tol_psd, c.tol_pinv, c.margin)?;
    if c.max_iter == 0 {
        return Err(Failure::Input("max-iter must be at least 1".into()));
    }
    match &cli.command {
        Command::Check { input, eps } => cmd_check(&read_cm(input, &tol)?, &tol, c.max_iter, *eps),
        Command::Certify { input, eps } => {
            cmd_certify(&read_cm(input, &tol)?, &tol, c.max_iter, *eps)
        }
        Command::Sweep {
            input,
            perturbation,
            eps,
            eps_grid,
            format,
        } => {
            let gamma = read_cm(input, &tol)?;
            let p = read_perturbation(perturbation.as_deref(), gamma.dim())?;
            let grid = match eps_grid {
                Some(spec) => parse_grid(spec)?,
                None => eps.clone(),
            };
            if grid.iter().any(|e| e.is_nan() || *e <= 0.0) {
                return Err(Failure::Input("eps values must be positive".into()));
            }
            let points = engine::sweep(&gamma, &p, &grid, &tol, c.max_iter)?;
            Ok(match format {
                Format::Csv => {
                    let mut out = String::from("eps,verdict,steps\n");
                    for pt in &points {
                        out.push_str(&format!("{:e},{},{}\n", pt.eps, pt.verdict, pt.steps));
                    }
                    out
                }
                Format::Json => to_json(&serde_json::to_value(&points).map_err(Error::from)?),
            })
        }
        Command::Threshold {
            input,
            perturbation,
            width,
            eps_max,
        } => {
            let gamma = read_cm(input, &tol)?;
            let p = read_perturbation(perturbation.as_deref(), gamma.dim())?;
            let opts = ThresholdOptions {
                width: *width,
                eps_max: *eps_max,
                max_iter: c.max_iter,
                ..ThresholdOptions::default()
            };
            let t = engine::find_threshold(&gamma, &p, &tol, &opts)?;
            let ppt_eps = ppt::ppt_threshold(&gamma, &p, &tol, *width, *eps_max).ok();
            Ok(to_json(&json!({
                "eps": t.eps,
                "lo": t.lo,
                "hi": t.hi,
                "bisection_steps": t.history.len(),
                "stopped_undecided": t.stopped_undecided,
                "ppt_threshold": ppt_eps,
            })))
        }
        Command::Gen { kind } => {
            let bip = match kind {
                GenKind::Tmss { r } => {
                    if !r.is_finite() {
                        return Err(Failure::Input("r must be finite".into()));
                    }
                    gaussian::tmss(*r)
                }
                GenKind::Random {
                    n, m, pure, seed, ..
                } => {
                    let purity = if *pure { Purity::Pure } else { Purity::Mixed };
                    gaussian::random_cm(*n, *m, purity, *seed)?
                }
                GenKind::Product { n, m, seed } => {
                    let fx = gaussian::random_separable(*n, *m, 0.0, *seed)?;
                    gaussian::product(&fx.gamma_a, &fx.gamma_b)?
                }
            };
            Ok(with_newline(CmFile::from_bipartite(&bip).to_json()))
        }
    }
}

fn read_cm(path: &Path, tol: &ToleranceConfig) -> Outcome<BipartiteCM> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let file =
        CmFile::parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(file.to_bipartite(tol)?)
}

fn read_perturbation(path: Option<&Path>, dim: usize) -> Outcome<DMatrix<f64>> {
    let Some(path) = path else {
        return Ok(DMatrix::identity(dim, dim));
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(gaussian::rows_to_matrix(&rows)?)
}

/// Parses `lo:hi:points[:log|:lin]`; a trailing `(log)` is also accepted.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::InvalidParameter(format!("eps-grid {spec:?}: {why}"));
    let trimmed = spec.trim();
    let (body, suffix_log) = match trimmed.strip_suffix("(log)") {
        Some(b) => (b, true),
        None => (trimmed, false),
    };
    let parts: Vec<&str> = body.split(':').collect();
    let log = match (parts.len(), parts.get(3).copied()) {
        (3, _) => true,
        (4, Some("log")) if !suffix_log => true,
        (4, Some("lin")) if !suffix_log => false,
        _ => return Err(bad("expected lo:hi:points[:log|:lin]")),
    };
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| bad("lo is not a number"))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| bad("hi is not a number"))?;
    let points: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| bad("points is not an integer"))?;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
        return Err(bad("need 0 < lo < hi"));
    }
    if points < 2 {
        return Err(bad("need at least 2 points"));
    }
    let step = 1.0 / (points - 1) as f64;
    let grid: Vec<f64> = (0..points)
        .map(|k| {
            let t = k as f64 * step;
            if log {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect();
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("grid is not strictly increasing at double precision"));
    }
    Ok(grid)
}

fn verdict_json(v: &Verdict) -> serde_json::Map<String, Value> {
    let mut obj = serde_json::Map::new();
    obj.insert("verdict".into(), json!(v.kind));
    obj.insert("step".into(), json!(v.step));
    obj.insert("margin".into(), json!(v.margin));
    obj.insert("c_opnorm_history".into(), json!(v.trace.c_opnorm_history()));
    obj
}

struct Decision {
    /// The run whose trace backs the verdict.
    run: Verdict,
    source: Option<RobustSource>,
    kind: VerdictKind,
}

fn run_decision(
    gamma: &BipartiteCM,
    tol: &ToleranceConfig,
    max_iter: usize,
    eps: Option<f64>,
) -> Outcome<Decision> {
    match eps {
        None => {
            let run = engine::decide(gamma, tol, max_iter)?;
            Ok(Decision {
                kind: run.kind,
                source: None,
                run,
            })
        }
        Some(eps) => {
            let r = engine::decide_robust(gamma, tol, eps, max_iter)?;
            let run = match r.deciding() {
                Some(v) => v.clone(),
                None => r.plain.clone().unwrap_or_else(|| r.plus.clone()),
            };
            Ok(Decision {
                run,
                source: r.source,
                kind: r.kind,
            })
        }
    }
}

fn cmd_check(
    gamma: &BipartiteCM,
    tol: &ToleranceConfig,
    max_iter: usize,
    eps: Option<f64>,
) -> Outcome<String> {
    let Decision {
        run: v,
        source,
        kind,
    } = run_decision(gamma, tol, max_iter, eps)?;
    let mut obj = verdict_json(&v);
    obj.insert("verdict".into(), json!(kind));
    if let Some(eps) = eps {
        obj.insert("eps".into(), json!(eps));
        obj.insert("source".into(), json!(source));
    }
    Ok(to_json(&Value::Object(obj)))
}

fn cmd_certify(
    gamma: &BipartiteCM,
    tol: &ToleranceConfig,
    max_iter: usize,
    eps: Option<f64>,
) -> Outcome<String> {
    let Decision {
        run: v,
        source,
        kind,
    } = run_decision(gamma, tol, max_iter, eps)?;
    match kind {
        VerdictKind::Separable => {
            let cert = certify::reconstruct(&v.trace, tol)?;
            // A certificate for gamma - eps 1 also bounds gamma from below.
            let cert = match source {
                Some(RobustSource::Minus) => {
                    SeparabilityCertificate::from_blocks(gamma, cert.gamma_a, cert.gamma_b)?
                }
                _ => cert,
            };
            let check = certify::verify_certificate(gamma, &cert, tol)?;
            if !check.valid {
                return Err(Failure::Numerical(format!(
                    "reconstructed certificate fails verification, margins {:?}",
                    check.margins
                )));
            }
            let file = CertificateFile::new(&cert, &check);
            Ok(to_json(&serde_json::to_value(&file).map_err(Error::from)?))
        }
        VerdictKind::Entangled => {
            let w = certify::entanglement_witness(&v).expect("entangled verdict has a witness");
            let mut obj = verdict_json(&v);
            obj.insert("verdict".into(), json!(kind));
            obj.insert(
                "witness".into(),
                serde_json::to_value(&w).map_err(Error::from)?,
            );
            if let Some(eps) = eps {
                obj.insert("eps".into(), json!(eps));
                obj.insert("source".into(), json!(source));
            }
            Ok(to_json(&Value::Object(obj)))
        }
        VerdictKind::Undecided => {
            let mut obj = verdict_json(&v);
            obj.insert("verdict".into(), json!(kind));
            Ok(to_json(&Value::Object(obj)))
        }
    }
}

fn to_json(v: &Value) -> String {
    with_newline(serde_json::to_string_pretty(v).expect("json value serializes"))
}

fn with_newline(mut s: String) -> String {
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(spec: &str) -> Vec<f64> {
        parse_grid(spec).unwrap()
    }

    #[test]
    fn log_grid_is_default() {
        let g = grid("1e-3:1e-1:3");
        assert_eq!(g.len(), 3);
        assert!((g[1] - 1e-2).abs() < 1e-15);
        assert_eq!(grid("1e-3:1e-1:3(log)"), g);
        assert_eq!(grid("1e-3:1e-1:3:log"), g);
    }

    #[test]
    fn linear_grid() {
        assert_eq!(grid("1:3:3:lin"), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn bad_grids_rejected() {
        for spec in [
            "0:1:3",
            "2:1:3",
            "1:2:1",
            "1:2",
            "a:2:3",
            "1:2:3:cubic",
            "1:2:3:lin(log)",
        ] {
            assert!(parse_grid(spec).is_err(), "{spec}");
        }
    }
}
