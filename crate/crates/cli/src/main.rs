use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cran_core::baselines::{run_baseline, BaselineMethod};
use cran_core::error::CoreError;
use cran_core::network::{generate_instance, NetworkConfig, NetworkInstance, PowerModel};
use cran_core::stage1::{usc_select_users, Stage1Settings};
use cran_core::stage2::{rln_solve_with, EvalSettings, Evaluator};
use cran_sim::harness::{self, admit, AdmissionMethod, ExperimentSpec, RlnOptions};
use cran_sim::verify::verify_instance;
use cran_sim::{BaselineOutput, SolveReport, Stage1Report};
use serde::Serialize;

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "cran-sim", version, about = "Joint user admission and RRH selection for C-RAN downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a network instance and write it as JSON.
    Generate {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage I: admit the largest feasible user set.
    Stage1 {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "usc")]
        method: AdmissionMethod,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage I followed by RLN RRH selection and power minimization.
    Solve {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        rln: RlnArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every dual-solver iteration (lambda, mu, f, KKT residuals) as JSONL.
        #[arg(long)]
        dual_trace: Option<PathBuf>,
    },
    /// Stage I followed by one comparison RRH-selection method.
    Baseline {
        #[command(flatten)]
        input: InputArgs,
        /// exhaustive, successive, greedy or full_coop.
        #[arg(long)]
        method: BaselineMethod,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo experiment described by a JSON file.
    Sweep {
        /// Experiment file; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-trial records, one JSON object per line.
        #[arg(long)]
        jsonl: Option<PathBuf>,
        /// Per-(sweep value, method) summary.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the invariant checks on one instance.
    Verify {
        #[command(flatten)]
        input: InputArgs,
        /// Seed for the random test points.
        #[arg(long, default_value_t = 0)]
        check_seed: u64,
    },
}

#[derive(Args)]
struct NetArgs {
    /// NetworkConfig JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// PowerModel JSON.
    #[arg(long)]
    power_model: Option<PathBuf>,
    #[arg(long)]
    num_rrhs: Option<usize>,
    #[arg(long)]
    num_users: Option<usize>,
    #[arg(long)]
    tx_antennas: Option<usize>,
    #[arg(long)]
    rx_antennas: Option<usize>,
    #[arg(long)]
    streams: Option<usize>,
    #[arg(long)]
    candidate_size: Option<usize>,
    /// Per-user rate target in nats/s/Hz.
    #[arg(long)]
    rate_min: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InputArgs {
    /// Instance JSON written by `generate`; otherwise one is generated.
    #[arg(long, conflicts_with_all = ["config", "power_model", "num_rrhs", "num_users", "tx_antennas",
        "rx_antennas", "streams", "candidate_size", "seed"])]
    instance: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Args)]
struct RlnArgs {
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    theta_off: Option<f64>,
}

impl RlnArgs {
    fn options(&self) -> RlnOptions {
        let d = RlnOptions::default();
        RlnOptions {
            n_max: self.n_max.unwrap_or(d.n_max),
            delta: self.delta.unwrap_or(d.delta),
            theta_off: self.theta_off.unwrap_or(d.theta_off),
        }
    }
}

#[derive(Debug)]
enum Failure {
    Core(CoreError),
    Io(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

impl NetArgs {
    fn build(&self) -> Result<NetworkInstance, Failure> {
        let mut cfg: NetworkConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => NetworkConfig::default(),
        };
        let pm: PowerModel = match &self.power_model {
            Some(p) => read_json(p)?,
            None => PowerModel::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { cfg.$f = v; } )*};
        }
        set!(num_rrhs, num_users, tx_antennas, rx_antennas, streams, candidate_size, rate_min);
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        Ok(generate_instance(&cfg, &pm)?)
    }
}

impl InputArgs {
    fn load(&self) -> Result<NetworkInstance, Failure> {
        let inst = match &self.instance {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
                NetworkInstance::from_json(&text)?
            }
            None => self.net.build()?,
        };
        Ok(match (&self.instance, self.net.rate_min) {
            (Some(_), Some(r)) => inst.with_rate_min(r),
            _ => inst,
        })
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let mut w: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    serde_json::to_writer(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Generate { net, out } => {
            let inst = net.build()?;
            match out {
                Some(p) => std::fs::write(p, inst.to_json()? + "\n")?,
                None => println!("{}", inst.to_json()?),
            }
            Ok(0)
        }
        Command::Stage1 { input, method, out } => {
            let inst = input.load()?;
            let res = admit(&inst, method, &Stage1Settings::default())?;
            emit(&Stage1Report::from(&res), out.as_deref())?;
            Ok(if res.admitted_users.is_empty() { EXIT_INFEASIBLE } else { 0 })
        }
        Command::Solve { input, rln, out, dual_trace } => {
            let inst = input.load()?;
            let adm = usc_select_users(&inst, &Stage1Settings::default())?;
            if adm.admitted_users.is_empty() {
                emit(&Stage1Report::from(&adm), out.as_deref())?;
                return Ok(EXIT_INFEASIBLE);
            }
            let eval = Evaluator::new(&inst, &adm.admitted_users, EvalSettings::default());
            let mut settings = rln.options().settings();
            settings.wmmse.record_dual_trace = dual_trace.is_some();
            let res = rln_solve_with(&eval, &adm.precoders, &settings)?;
            if let Some(p) = dual_trace {
                let mut w = BufWriter::new(File::create(p)?);
                harness::write_jsonl(&mut w, &res.dual_trace)?;
                w.flush()?;
            }
            emit(&SolveReport::new(&inst, &adm.admitted_users, &res), out.as_deref())?;
            Ok(if res.converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Baseline { input, method, out } => {
            let inst = input.load()?;
            let adm = usc_select_users(&inst, &Stage1Settings::default())?;
            if adm.admitted_users.is_empty() {
                emit(&Stage1Report::from(&adm), out.as_deref())?;
                return Ok(EXIT_INFEASIBLE);
            }
            let eval = Evaluator::new(&inst, &adm.admitted_users, EvalSettings::default());
            let rep = run_baseline(method, &eval)?;
            emit(&BaselineOutput::new(&adm.admitted_users, &rep), out.as_deref())?;
            Ok(if rep.converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Sweep { spec, trials, seed, jsonl, csv } => {
            let mut spec: ExperimentSpec = match spec {
                Some(p) => read_json(&p)?,
                None => ExperimentSpec::default(),
            };
            if let Some(t) = trials {
                spec.trials = t;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let records = harness::sweep(&spec)?;
            if let Some(p) = jsonl {
                let mut w = BufWriter::new(File::create(p)?);
                harness::write_jsonl(&mut w, &records)?;
                w.flush()?;
            }
            let summary = harness::summarize(&records);
            match csv {
                Some(p) => harness::write_csv(File::create(p)?, &summary)?,
                None => harness::write_csv(io::stdout().lock(), &summary)?,
            }
            Ok(0)
        }
        Command::Verify { input, check_seed } => {
            let inst = input.load()?;
            let report = verify_instance(&inst, check_seed)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if report.passed() { 0 } else { EXIT_VERIFY_FAILED })
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CoreError::Infeasible(_) => EXIT_INFEASIBLE,
                CoreError::NotConverged(_) => EXIT_NOT_CONVERGED,
                _ => 1,
            })
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
