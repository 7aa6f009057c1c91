// SPDX-License-Identifier: Apache-2.0
//! `hmlab`: run experiments, check exponent regions, compute symbol norms and
//! apply stored symbols. Exit code 0 on pass, 1 on a failed verdict, 2 on error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmlab::experiment::{run_experiment, selftest, ExperimentConfig};
use hmlab::grid::GridFunction;
use hmlab::harness::{write_atomic, Verdict};
use hmlab::multiplier::{apply_multilinear, load_symbol};
use hmlab::norms::{a_norm_report, ANormOptions, KRange, SobolevSpec};
use hmlab::region::{
    binding_subset, necessity_check, parse_rational, sufficiency_check, ExactPoint, ExponentPoint, RegionVerdict,
    Scalar,
};
use hmlab::{Error, Result};
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "hmlab", version, about = "Multilinear multiplier laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the CSV and JSON outputs.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        budget_secs: Option<f64>,
    },
    /// Evaluate the sufficient and necessary conditions at one exponent point.
    CheckRegion(RegionArgs),
    /// Symbol norm of a stored symbol.
    ANorm {
        symbol: PathBuf,
        /// Smoothness per parameter.
        #[arg(long, num_args = 1.., required = true)]
        s: Vec<f64>,
        #[arg(long)]
        u: f64,
        /// Inclusive dilation range per parameter as `lo:hi`; default scans every dilation meeting the support.
        #[arg(long, num_args = 1..)]
        k: Vec<String>,
    },
    /// Apply a stored symbol to stored grid functions.
    Apply {
        symbol: PathBuf,
        #[arg(num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dealias: bool,
    },
    /// Run the core invariant suite.
    Selftest,
}

#[derive(clap::Args)]
struct RegionArgs {
    /// JSON file with `l`, `u`, `s`, `p` and optionally `n`; values may be strings such as "3/2".
    #[arg(long, conflicts_with_all = ["l", "u", "s", "p"])]
    file: Option<PathBuf>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    u: Option<String>,
    /// Smoothness indices `s_j` (divided by `n` internally).
    #[arg(long, num_args = 1..)]
    s: Vec<String>,
    /// Exponents `p_i`, one per argument.
    #[arg(long, num_args = 1..)]
    p: Vec<String>,
    /// Dimension of each argument.
    #[arg(long, default_value_t = 1)]
    n: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    l: usize,
    u: serde_json::Value,
    s: Vec<serde_json::Value>,
    p: Vec<serde_json::Value>,
    #[serde(default = "one")]
    n: usize,
}

fn one() -> usize {
    1
}

#[derive(Serialize)]
struct RegionOutput {
    exact: bool,
    admissible: bool,
    sufficiency: RegionVerdict,
    necessity: RegionVerdict,
    binding_subset: Vec<usize>,
    binding_threshold: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run {
            config,
            seed,
            output,
            budget_secs,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if output.is_some() {
                cfg.output = output;
            }
            if budget_secs.is_some() {
                cfg.budget_secs = budget_secs;
            }
            let report = run_experiment(&cfg)?;
            print_json(&report)?;
            Ok(report.verdict == Verdict::Pass)
        }
        Command::CheckRegion(args) => check_region(args),
        Command::ANorm { symbol, s, u, k } => {
            let m = load_symbol(&symbol)?;
            let range = if k.is_empty() {
                KRange::Auto
            } else {
                KRange::Explicit(k.iter().map(|r| parse_k_range(r)).collect::<Result<_>>()?)
            };
            let spec = SobolevSpec::new(s, u)?;
            let report = a_norm_report(&m, &[spec], &range, &ANormOptions::default())?;
            print_json(&serde_json::json!({
                "a_norm": report.values[0],
                "argmax": report.argmax[0],
                "dilations_scanned": report.scans.len(),
            }))?;
            Ok(true)
        }
        Command::Apply {
            symbol,
            inputs,
            out,
            dealias,
        } => {
            let m = load_symbol(&symbol)?;
            let fs = inputs.iter().map(|p| read_function(p)).collect::<Result<Vec<_>>>()?;
            let result = apply_multilinear(&m, &fs, dealias)?;
            write_atomic(&out, serde_json::to_string(&result)?.as_bytes())?;
            Ok(true)
        }
        Command::Selftest => {
            let checks = selftest()?;
            let mut ok = true;
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {}: {:.3e} (limit {:.1e})", c.name, c.value, c.threshold);
                ok &= c.passed;
            }
            Ok(ok)
        }
    }
}

fn parse_k_range(text: &str) -> Result<(i32, i32)> {
    let bad = || Error::Config(format!("--k: expected lo:hi, got {text}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn read_function(path: &Path) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn value_text(v: &serde_json::Value) -> Result<String> {
    match v {
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::String(s) => Ok(s.clone()),
        other => Err(Error::Config(format!("expected a number, got {other}"))),
    }
}

fn check_region(args: RegionArgs) -> Result<bool> {
    let (l, u, s, p, n) = match &args.file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let f: RegionFile = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let s = f.s.iter().map(value_text).collect::<Result<Vec<_>>>()?;
            let p = f.p.iter().map(value_text).collect::<Result<Vec<_>>>()?;
            (f.l, value_text(&f.u)?, s, p, f.n)
        }
        None => {
            let missing = |what: &str| Error::Config(format!("--{what} is required without --file"));
            (
                args.l.ok_or_else(|| missing("l"))?,
                args.u.clone().ok_or_else(|| missing("u"))?,
                args.s.clone(),
                args.p.clone(),
                args.n,
            )
        }
    };
    if p.len() != l {
        return Err(Error::Config(format!("--p: need l = {l} exponents, got {}", p.len())));
    }
    if n == 0 {
        return Err(Error::Config("--n: must be positive".into()));
    }
    let exact = |v: &[String]| v.iter().map(|x| parse_rational(x)).collect::<Option<Vec<Rational64>>>();
    let out = match (parse_rational(&u), exact(&s), exact(&p)) {
        (Some(u), Some(s), Some(p)) if p.iter().all(|x| *x.numer() != 0) => {
            let nn = Rational64::from_integer(n as i64);
            let pt: ExactPoint = ExponentPoint::new(
                u,
                s.into_iter().map(|x| x / nn).collect(),
                p.into_iter().map(|x| x.recip()).collect(),
            )?;
            evaluate(&pt, true)
        }
        _ => {
            let float = |v: &[String]| {
                v.iter()
                    .map(|x| x.parse::<f64>().map_err(|_| Error::Config(format!("not a number: {x}"))))
                    .collect::<Result<Vec<f64>>>()
            };
            let u: f64 = u.parse().map_err(|_| Error::Config(format!("--u: not a number: {u}")))?;
            let pt = ExponentPoint::new(
                u,
                float(&s)?.into_iter().map(|x| x / n as f64).collect(),
                float(&p)?.into_iter().map(|x| 1.0 / x).collect(),
            )?;
            evaluate(&pt, false)
        }
    };
    print_json(&out)?;
    Ok(out.admissible)
}

fn evaluate<T: Scalar>(pt: &ExponentPoint<T>, exact: bool) -> RegionOutput {
    let sufficiency = sufficiency_check(pt);
    let necessity = necessity_check(pt);
    let (set, threshold) = binding_subset(pt);
    RegionOutput {
        exact,
        admissible: sufficiency.admissible,
        sufficiency,
        necessity,
        binding_subset: set.members(pt.l).map(|i| i + 1).collect(),
        binding_threshold: threshold,
    }
}
