use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use chanswitch::experiment::{self, PolicyVariant, SweepParam, SweepSpec, DEFAULT_THRESHOLDS};
use chanswitch::metrics::{TransferChannel, TransferModel};
use chanswitch::trace::TraceSink;
use chanswitch::{FachDiscipline, PolicyKind, ScenarioConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chanswitch", version, about = "FACH/DCH channel switching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write a CSV row.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the event trace here (`time kind subject detail` per line).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep a threshold across policies and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// s, t_h, or threshold (whichever the policy reads).
        #[arg(long, default_value = "threshold")]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
        values: Vec<u64>,
        /// Policies, e.g. `qs,fs,fs+las,qsfs,fsdch,mt`.
        #[arg(long, value_delimiter = ',', default_value = "qs,fs,qsfs,fsdch,mt")]
        policies: Vec<PolicyVariant>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Rank policies by their best mean response time over a threshold sweep.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "qs,fs,qsfs,fsdch,mt")]
        policies: Vec<PolicyVariant>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
        values: Vec<u64>,
    },
    /// Closed-form transfer times of a burst on FACH and DCH.
    Calc {
        n_packets: u64,
        packet_bytes: u32,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key = value scenario file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    scheduler: Option<FachDiscipline>,
    #[arg(long)]
    n_tcp: Option<usize>,
    #[arg(long)]
    n_dch: Option<usize>,
    #[arg(long)]
    s: Option<u64>,
    #[arg(long)]
    t_h: Option<u64>,
    #[arg(long)]
    t_out: Option<f64>,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig, chanswitch::Error> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.duration {
            cfg.duration_s = v;
        }
        if let Some(v) = self.policy {
            cfg.policy = v;
        }
        if let Some(v) = self.scheduler {
            cfg.scheduler = v;
        }
        if let Some(v) = self.n_tcp {
            cfg.n_tcp = v;
        }
        if let Some(v) = self.n_dch {
            cfg.n_dch = v;
        }
        if let Some(v) = self.s {
            cfg.s = v;
        }
        if let Some(v) = self.t_h {
            cfg.t_h = v;
        }
        if let Some(v) = self.t_out {
            cfg.t_out = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<chanswitch::Error> for Failure {
    fn from(e: chanswitch::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).context("writing to stdout"),
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, trace } => {
            let cfg = common.scenario()?;
            let sink = match &trace {
                Some(p) => {
                    let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
                    TraceSink::writer(Box::new(BufWriter::new(f)))
                }
                None => TraceSink::Off,
            };
            let summary = experiment::run(&cfg, sink)?;
            if !summary.has_data() {
                eprintln!("warning: no burst was generated after the warmup cutoff; response metrics are nan");
            }
            let text = format!("{}\n{}\n", experiment::CSV_HEADER, summary.csv_row());
            write_output(common.out.as_deref(), &text)?;
        }
        Command::Sweep { common, param, values, policies, seeds } => {
            let cfg = common.scenario()?;
            let spec = SweepSpec { param, values, policies, seeds };
            let result = experiment::sweep(&spec, &cfg)?;
            write_output(common.out.as_deref(), &result.to_csv())?;
        }
        Command::Compare { common, policies, seeds, values } => {
            let cfg = common.scenario()?;
            let cmp = experiment::compare(&policies, &cfg, &seeds, &values)?;
            for w in &cmp.warnings {
                eprintln!("warning: {w}");
            }
            let best = cmp.best_row();
            eprintln!(
                "best: {} at threshold {} with mean response {:.4} s",
                best.policy, best.best.value, best.best.mean_response_s
            );
            write_output(common.out.as_deref(), &cmp.to_csv())?;
        }
        Command::Calc { n_packets, packet_bytes } => {
            let m = TransferModel::default();
            let est = |ch, cbr, setup| m.estimate_transfer_time(n_packets, packet_bytes, ch, cbr, setup);
            let fach_cbr = est(TransferChannel::Fach, true, false).map_err(chanswitch::Error::from)?;
            let fach_idle = est(TransferChannel::Fach, false, false).map_err(chanswitch::Error::from)?;
            let dch_setup = est(TransferChannel::Dch, false, true).map_err(chanswitch::Error::from)?;
            let dch_bare = est(TransferChannel::Dch, false, false).map_err(chanswitch::Error::from)?;
            println!("{n_packets} packets x {packet_bytes} bytes");
            println!("{:<22}{:>12}", "channel", "seconds");
            println!("{:<22}{:>12.6}", "fach, cbr active", fach_cbr);
            println!("{:<22}{:>12.6}", "fach, no cbr", fach_idle);
            println!("{:<22}{:>12.6}", "dch, with setup", dch_setup);
            println!("{:<22}{:>12.6}", "dch, no setup", dch_bare);
            println!("speedup fach+cbr / dch+setup: {:.3}", fach_cbr / dch_setup);
            println!("speedup fach / dch+setup:     {:.3}", fach_idle / dch_setup);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
