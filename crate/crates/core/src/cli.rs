//! Command-line front end. Every successful run prints one JSON
//! [`RunReport`] on standard output; test outcomes are data, never exit
//! codes.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or validation error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::advisor::{advise, parse_control_set, AdvisorInput, TopologyLabel};
use crate::error::Result;
use crate::io::{berkeley_analysis, binary_xy_table, read_table, sha256_hex, RunReport, Schema};
use crate::procedures::{iv_ternary, tec_ternary};
use crate::sim::{run_pcd_study, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "ternary", version, about = "Three-outcome tests for partially identifiable causal queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Is P(Y=1 | do(X=1)) at least c? Reads an `x,y,count` table with 0/1 labels.
    Tec {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha1: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha2: f64,
    },
    /// IV-inequality ternary test on a `z,x,y,count` table with binary z.
    Iv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 2000)]
        bootstrap: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo PCD study of the efficacy test; writes the curve CSV.
    SimulatePcd {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recommend two-stage plans from region topology labels
    /// (cno, onc, clopen, neither) and a control set such as `r0,r2`.
    Advise {
        #[arg(long)]
        r0: String,
        #[arg(long)]
        r1: String,
        #[arg(long)]
        r2: String,
        #[arg(long, default_value = "none")]
        control_set: String,
    },
    /// IV analysis of the bundled Berkeley admissions data.
    Berkeley {
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 2000)]
        bootstrap: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn resolve_seed(seed: Option<u64>, err: &mut dyn Write) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        let _ = writeln!(err, "no --seed given; using seed {s}");
        s
    })
}

fn execute(command: Command, echo: Vec<String>, err: &mut dyn Write) -> Result<RunReport> {
    match command {
        Command::Tec { data, c, alpha1, alpha2 } => {
            let bytes = fs::read(&data)?;
            let labeled = read_table(bytes.as_slice(), Schema::WithoutZ)?;
            let table = binary_xy_table(&labeled)?;
            let result = tec_ternary(&table, c, alpha1, alpha2)?;
            let payload = json!({ "table": table, "alpha1": alpha1, "alpha2": alpha2, "test": result });
            Ok(RunReport::new(echo, Some(sha256_hex(&bytes)), None, payload))
        }
        Command::Iv { data, alpha, bootstrap, seed } => {
            let bytes = fs::read(&data)?;
            let labeled = read_table(bytes.as_slice(), Schema::WithZ)?;
            let seed = resolve_seed(seed, err);
            let result = iv_ternary(&labeled.table, alpha, bootstrap, seed)?;
            let payload = json!({
                "categories": labeled.categories,
                "alpha": alpha,
                "bootstrap": bootstrap,
                "test": result,
            });
            Ok(RunReport::new(echo, Some(sha256_hex(&bytes)), Some(seed), payload))
        }
        Command::SimulatePcd { config, out, seed } => {
            let bytes = fs::read(&config)?;
            let mut cfg: SimConfig = serde_json::from_slice(&bytes)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let study = run_pcd_study(&cfg)?;
            let mut csv = Vec::new();
            study.write_csv(&mut csv)?;
            fs::write(&out, &csv)?;
            let payload = json!({
                "curve_file": out.display().to_string(),
                "curve_digest": sha256_hex(&csv),
                "config": cfg,
                "excluded": study.excluded,
            });
            Ok(RunReport::new(echo, Some(sha256_hex(&bytes)), Some(cfg.seed), payload))
        }
        Command::Advise { r0, r1, r2, control_set } => {
            let labels = [r0.parse::<TopologyLabel>()?, r1.parse()?, r2.parse()?];
            let input = AdvisorInput::new(labels, parse_control_set(&control_set)?)?;
            let payload = json!({
                "labels": labels,
                "control_set": input.control().iter().map(|r| r.to_string()).collect::<Vec<_>>(),
                "recommendations": advise(&input),
            });
            Ok(RunReport::new(echo, None, None, payload))
        }
        Command::Berkeley { alpha, bootstrap, seed } => {
            let seed = resolve_seed(seed, err);
            let mut report = berkeley_analysis(alpha, bootstrap, seed)?;
            report.command = echo;
            Ok(report)
        }
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let echo = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, echo, err).and_then(|r| r.to_json()) {
        Ok(json) => match out.write_all(json.as_bytes()) {
            Ok(()) => 0,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                1
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}
