//! `sumfree`: experiment runner for the random greedy sum-free process.
//!
//! Exit codes: 0 on success, 1 when a requested check fails, 2 on bad
//! configuration or I/O trouble. All commands are deterministic given their
//! flags; multi-run commands derive seeds as `seed + run index`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sumfree::engine::Mode;
use sumfree::generic;
use sumfree::harness::{self, HarnessError};

#[derive(Parser)]
#[command(
    name = "sumfree",
    version,
    about = "Random greedy maximal sum-free subsets of Z_m: simulation and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Exact incremental ledger of all tracked counts.
    Full,
    /// Statuses only; edge counts that need the ledger stay empty.
    Lean,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Lean => Mode::Lean,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one realization and write its trajectory.
    Simulate {
        /// Ring modulus m (the process runs in Z_m).
        #[arg(long)]
        m: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// Horizon coefficient: stop after round(c sqrt(n ln n)) steps, n = m/2.
        #[arg(long, conflicts_with = "until_termination")]
        c: Option<f64>,
        /// Run until no open element remains.
        #[arg(long)]
        until_termination: bool,
        /// Snapshot every this many steps (default: every step up to m = 4096,
        /// every 16 beyond).
        #[arg(long)]
        cadence: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Aggregate many runs at one modulus.
    Ensemble {
        #[arg(long)]
        m: u64,
        /// Base seed; run i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of runs.
        #[arg(long, default_value_t = 8)]
        seeds: u32,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        #[arg(long, conflicts_with = "until_termination")]
        c: Option<f64>,
        #[arg(long)]
        until_termination: bool,
        #[arg(long)]
        cadence: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean pair count at the horizon across sizes, with slope fit and
    /// uniform baseline.
    PairsScaling {
        /// Sizes n (the modulus is 2n), strictly ascending, at least 4.
        #[arg(long, value_delimiter = ',', default_value = "4096,8192,16384,32768,65536")]
        n_list: Vec<u64>,
        #[arg(long, default_value_t = 16)]
        runs: u32,
        /// Horizon coefficient (default sqrt(1/3)).
        #[arg(long)]
        c: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify the eight envelope variation inequalities at a given scale.
    Variation {
        #[arg(long, default_value_t = 1e8)]
        n: f64,
        #[arg(long, default_value_t = 1e-3)]
        grid_step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay full-ledger runs through the from-scratch oracle.
    OracleVerify {
        #[arg(long, default_value_t = 4)]
        m_min: u64,
        #[arg(long, default_value_t = 40)]
        m_max: u64,
        /// Runs per modulus; run i uses seed + i.
        #[arg(long, default_value_t = 5)]
        seeds: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst normalized band deviations over full runs to the horizon.
    Envelope {
        #[arg(long, default_value_t = 4096)]
        m: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        cadence: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the generic greedy engine on an explicit hypergraph (JSON with
    /// fields num_vertices, edges, optional label) and report the
    /// independence result plus degree/codegree diagnostics.
    Generic {
        /// Path to the hypergraph JSON.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Slack exponent for the degree/codegree hypothesis checks.
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn stop_spec(c: Option<f64>, until_termination: bool) -> harness::StopSpec {
    if until_termination {
        harness::StopSpec::Termination
    } else {
        harness::StopSpec::Horizon {
            c: c.unwrap_or_else(harness::default_c),
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn emit_json<C: Serialize, R: Serialize>(
    out: Option<&Path>,
    command: &'static str,
    config: C,
    result: R,
) -> Result<(), HarnessError> {
    let artifact = harness::artifact(command, config, result);
    let mut text = serde_json::to_string_pretty(&artifact).expect("reports serialize");
    text.push('\n');
    emit(out, &text)
}

fn run(command: Command) -> Result<bool, HarnessError> {
    match command {
        Command::Simulate {
            m,
            seed,
            mode,
            c,
            until_termination,
            cadence,
            out,
            format,
        } => {
            let cfg = harness::SimulateConfig {
                m,
                seed,
                mode: mode.into(),
                stop: stop_spec(c, until_termination),
                cadence,
            };
            let record = harness::run_one(&cfg)?;
            match format {
                FormatArg::Csv => emit(out.as_deref(), &harness::csv_string(&record)?)?,
                FormatArg::Json => emit_json(out.as_deref(), "simulate", cfg, &record)?,
            }
            Ok(true)
        }
        Command::Ensemble {
            m,
            seed,
            seeds,
            mode,
            c,
            until_termination,
            cadence,
            out,
        } => {
            let cfg = harness::EnsembleConfig {
                m,
                seed0: seed,
                runs: seeds,
                mode: mode.into(),
                stop: stop_spec(c, until_termination),
                cadence,
            };
            let report = harness::ensemble(&cfg)?;
            emit_json(out.as_deref(), "ensemble", cfg, &report)?;
            Ok(true)
        }
        Command::PairsScaling {
            n_list,
            runs,
            c,
            seed,
            out,
        } => {
            let cfg = harness::PairsScalingConfig {
                n_list,
                runs,
                c: c.unwrap_or_else(harness::default_c),
                seed0: seed,
            };
            let report = harness::pairs_scaling(&cfg)?;
            emit_json(out.as_deref(), "pairs-scaling", &cfg, &report)?;
            Ok(true)
        }
        Command::Variation { n, grid_step, out } => {
            let cfg = harness::VariationConfig { n, grid_step };
            let reports = harness::variation_report(&cfg)?;
            let all_hold = reports.iter().all(|r| r.holds);
            for r in &reports {
                eprintln!(
                    "{}: {}  margin_min {:.6e} at t = {:.3}",
                    r.id.name(),
                    if r.holds { "holds" } else { "FAILS" },
                    r.margin_min,
                    r.argmin_t
                );
            }
            emit_json(out.as_deref(), "variation", cfg, &reports)?;
            Ok(all_hold)
        }
        Command::OracleVerify {
            m_min,
            m_max,
            seeds,
            seed,
            out,
        } => {
            let cfg = harness::OracleVerifyConfig {
                m_min,
                m_max,
                seeds_per_m: seeds,
                seed0: seed,
            };
            let report = harness::oracle_verify(&cfg)?;
            let clean = report.is_clean();
            if !clean {
                for f in &report.failures {
                    eprintln!("m = {}, seed = {}, step {}: {}", f.m, f.seed, f.step, f.what);
                }
            }
            emit_json(out.as_deref(), "oracle-verify", cfg, &report)?;
            Ok(clean)
        }
        Command::Envelope {
            m,
            seeds,
            seed,
            c,
            cadence,
            out,
        } => {
            let cfg = harness::EnvelopeConfig {
                m,
                seed0: seed,
                runs: seeds,
                c: c.unwrap_or_else(harness::default_c),
                cadence,
            };
            let report = harness::envelope_report(&cfg)?;
            let pass = report.all_deviations_below_one && report.d1_within_bound;
            eprintln!(
                "max |dev|: Q {:.4}, E2 {:.4}, E3 {:.4}; max D1 {} (bound {:.2})",
                report.max_abs_dev_q,
                report.max_abs_dev_e2,
                report.max_abs_dev_e3,
                report.max_d1,
                report.d1_bound
            );
            emit_json(out.as_deref(), "envelope", cfg, &report)?;
            Ok(pass)
        }
        Command::Generic {
            input,
            seed,
            eps,
            out,
        } => {
            let text = fs::read_to_string(&input)?;
            let hypergraph = generic::Hypergraph::from_json(&text)
                .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
            let run = generic::greedy_run(&hypergraph, seed);
            let hypotheses = generic::check_thm1_hypotheses(&hypergraph, eps);
            #[derive(Serialize)]
            struct GenericConfig<'a> {
                input: &'a Path,
                seed: u64,
                eps: f64,
            }
            #[derive(Serialize)]
            struct GenericResult {
                final_size: usize,
                run: generic::GreedyRun,
                hypotheses: generic::Thm1Report,
            }
            let result = GenericResult {
                final_size: run.final_set.len(),
                run,
                hypotheses,
            };
            emit_json(
                out.as_deref(),
                "generic",
                GenericConfig {
                    input: &input,
                    seed,
                    eps,
                },
                result,
            )?;
            Ok(true)
        }
    }
}
