use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lobsift_core::book::{apply_exclusion, reconstruct_book, write_snapshots};
use lobsift_core::ingest::write_tick_file;
use lobsift_core::pipeline::{
    read_report, run_pipeline_with_jobs, write_outputs, InputSpec, RunConfig, RunOutput, Session,
};
use lobsift_core::signals::{compute_signals, write_signals, TradeSigning, WindowGrid};
use lobsift_core::synth::generate_session;
use lobsift_core::units::parse_duration;
use lobsift_core::{Error, FilterSpec, SignalVariant, TickSize};

#[derive(Parser, Debug)]
#[command(name = "lobsift", version, about = "Structural filtration of order-book event streams")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the cell grid.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct TickArgs {
    /// Tick CSV file.
    ticks: PathBuf,
    /// Trading date, YYYY-MM-DD.
    #[arg(long)]
    date: NaiveDate,
    #[arg(long, default_value = "")]
    instrument: String,
    #[arg(long, default_value = "0.05")]
    tick_size: TickSize,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Session start as time of day, e.g. `33600s`.
    #[arg(long, value_parser = duration)]
    session_start: Option<i64>,
    #[arg(long, value_parser = duration)]
    session_end: Option<i64>,
}

impl TickArgs {
    fn input(&self) -> InputSpec {
        InputSpec {
            path: self.ticks.clone(),
            date: self.date,
            instrument: self.instrument.clone(),
            tick_size: self.tick_size,
            lenient: self.lenient,
            session_start: self.session_start,
            session_end: self.session_end,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Variant {
    Book,
    Trade,
}

impl From<Variant> for SignalVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Book => SignalVariant::BookObi,
            Variant::Trade => SignalVariant::TradeObi,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Signing {
    Tick,
    Quote,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a tick file and write per-order lifecycles.
    Ingest(TickArgs),
    /// Generate a synthetic session from the `[synthetic]` table.
    Simulate,
    /// Apply one filter and write the filtered stream, excluded ids and book.
    Filter {
        #[command(flatten)]
        tick: TickArgs,
        /// `UF`, `LF-500ms`, `MF-3`, `MTF-50ms`, ...
        #[arg(long, default_value = "UF")]
        filter: FilterSpec,
    },
    /// Windowed imbalance and return signals for one filter.
    Signals {
        #[command(flatten)]
        tick: TickArgs,
        #[arg(long, default_value = "UF")]
        filter: FilterSpec,
        /// Overrides the configured trade signing.
        #[arg(long, value_enum)]
        signing: Option<Signing>,
    },
    /// Score tables for the configured grid, without per-cell artifacts.
    Score {
        /// Tick files replacing the configured inputs (need `--date`).
        ticks: Vec<PathBuf>,
        #[arg(long)]
        date: Option<NaiveDate>,
    },
    /// Fit the regime point process for one filter and variant.
    Hawkes {
        #[command(flatten)]
        tick: TickArgs,
        #[arg(long, default_value = "UF")]
        filter: FilterSpec,
        #[arg(long, value_enum, default_value = "book")]
        variant: Variant,
    },
    /// Full pipeline with tables and per-cell artifacts.
    Run,
    /// Re-render tables from a `report.json`.
    Report {
        report: PathBuf,
    },
}

fn duration(s: &str) -> Result<i64, String> {
    parse_duration(s).ok_or_else(|| format!("bad duration `{s}`"))
}

/// Exit 1 for configuration and input errors, 2 when some cells failed.
enum Failure {
    Config(anyhow::Error),
    Partial(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.into())
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        let g = cfg.synthetic.get_or_insert_with(Default::default);
        g.seed = seed;
        cfg.seeds.clear();
    }
    Ok(cfg)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn finish(out: &RunOutput, dir: &Path) -> Result<(), Failure> {
    let written = write_outputs(dir, out)?;
    for p in &written {
        println!("{}", p.display());
    }
    if out.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(out.failures.len()))
    }
}

fn single_cell(cfg: &mut RunConfig, tick: &TickArgs, filter: FilterSpec) {
    cfg.inputs = vec![tick.input()];
    cfg.synthetic = None;
    cfg.filters = vec![filter];
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Ingest(tick) => {
            let session = Session::from_input(&tick.input())?;
            let path = cli.out.join("lifecycles.jsonl");
            let mut w = create(&path)?;
            for l in session.lifecycles.values() {
                serde_json::to_writer(&mut w, l).map_err(anyhow::Error::from)?;
                w.write_all(b"\n").map_err(anyhow::Error::from)?;
            }
            w.flush().map_err(anyhow::Error::from)?;
            println!(
                "{} events, {} orders -> {}",
                session.events.len(),
                session.lifecycles.len(),
                path.display()
            );
        }
        Command::Simulate => {
            let cfg = load_config(cli)?;
            let g = cfg.synthetic.clone().unwrap_or_default();
            let g = lobsift_core::GeneratorConfig {
                seed: cli.seed.unwrap_or(g.seed),
                ..g
            };
            let s = generate_session(&g)?;
            let ticks = cli.out.join(format!("{}_{}.csv", g.instrument, s.meta.date_tag()));
            write_tick_file(&ticks, &s.events, g.tick_size)?;
            let planted = cli.out.join("planted.json");
            let mut w = create(&planted)?;
            serde_json::to_writer_pretty(&mut w, &s.planted).map_err(anyhow::Error::from)?;
            w.flush().map_err(anyhow::Error::from)?;
            println!("{} events, {} orders -> {}", s.events.len(), s.planted.len(), ticks.display());
        }
        Command::Filter { tick, filter } => {
            let session = Session::from_input(&tick.input())?;
            let excl = filter.exclusions(&session.lifecycles);
            let stream = apply_exclusion(&session.events, &excl);
            let label = filter.label();
            write_tick_file(cli.out.join(format!("filtered_{label}.csv")), &stream.events, tick.tick_size)?;
            excl.write_oid_list(create(&cli.out.join(format!("excluded_{label}.txt")))?)
                .map_err(anyhow::Error::from)?;
            let book = reconstruct_book(&stream);
            write_snapshots(create(&cli.out.join(format!("book_{label}.csv")))?, &book.snapshots, tick.tick_size)?;
            println!(
                "{label}: excluded {} of {} orders, kept {} of {} events, {} clamped book updates",
                excl.len(),
                session.lifecycles.len(),
                stream.events.len(),
                session.events.len(),
                book.clamped
            );
        }
        Command::Signals { tick, filter, signing } => {
            let cfg = load_config(cli)?;
            let session = Session::from_input(&tick.input())?;
            let stream = apply_exclusion(&session.events, &filter.exclusions(&session.lifecycles));
            let grid = WindowGrid::new(
                session.meta.session_start,
                session.meta.session_end,
                cfg.h,
                cfg.stride,
                cfg.xi,
                cfg.sub_step,
            )?;
            let rule = match signing {
                Some(Signing::Tick) => TradeSigning::TickRule,
                Some(Signing::Quote) => TradeSigning::QuoteRule,
                None => cfg.trade_signing,
            };
            let signals = compute_signals(&stream, &grid, rule);
            let path = cli.out.join(format!("signals_{}.csv", filter.label()));
            write_signals(create(&path)?, &signals)?;
            let missing = signals.iter().filter(|w| w.obi.is_none()).count();
            let no_trades = signals.iter().filter(|w| w.trade_obi.is_none()).count();
            println!(
                "{} windows ({missing} without activity, {no_trades} without trades) -> {}",
                signals.len(),
                path.display()
            );
        }
        Command::Score { ticks, date } => {
            let mut cfg = load_config(cli)?;
            if !ticks.is_empty() {
                let date = date.context("--date is required with tick files")?;
                cfg.inputs = ticks
                    .iter()
                    .map(|p| InputSpec {
                        path: p.clone(),
                        date,
                        instrument: String::new(),
                        tick_size: TickSize::default(),
                        lenient: false,
                        session_start: None,
                        session_end: None,
                    })
                    .collect();
                cfg.synthetic = None;
            }
            cfg.artifacts = false;
            let out = run_pipeline_with_jobs(&cfg, cli.jobs)?;
            finish(&out, &cli.out)?;
        }
        Command::Hawkes { tick, filter, variant } => {
            let mut cfg = load_config(cli)?;
            single_cell(&mut cfg, tick, *filter);
            cfg.variants = vec![(*variant).into()];
            cfg.artifacts = true;
            let out = run_pipeline_with_jobs(&cfg, cli.jobs)?;
            let label = filter.label();
            let variant: SignalVariant = (*variant).into();
            if let Some(report) = out.reports.iter().find(|r| r.filter_label == label) {
                for a in out.artifacts.iter().filter(|a| a.filter_label == label) {
                    for (_, k) in a.kernels.iter().filter(|(v, _)| *v == variant) {
                        let path = cli.out.join(format!("kernel_{label}_{}.json", variant.tag()));
                        let mut w = create(&path)?;
                        k.write_json(&mut w)?;
                        w.flush().map_err(anyhow::Error::from)?;
                        println!(
                            "S_phi {:.6}, spectral radius {:.4}, converged {} -> {}",
                            report.headline.s_phi.unwrap_or(f64::NAN),
                            k.spectral_radius,
                            k.converged,
                            path.display()
                        );
                    }
                }
            }
            if !out.failures.is_empty() {
                return Err(Failure::Partial(out.failures.len()));
            }
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let out = run_pipeline_with_jobs(&cfg, cli.jobs)?;
            finish(&out, &cli.out)?;
        }
        Command::Report { report } => {
            let out = read_report(report)?;
            finish(&out, &cli.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors, which is reserved for failed cells
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(n)) => {
            eprintln!("{n} cell(s) failed");
            ExitCode::from(2)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
