//! `mtroute` command line.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 backend
//! failure, 3 internal invariant violation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtroute::config::{load_engines, QeSource, StudyConfig};
use mtroute::harness::report::{self, AuditWriter};
use mtroute::harness::{baseline_best_mt, ExperimentReport, FullEnsembleSummary, RunKey};
use mtroute::simulation::{generate_corpus, write_corpus};
use mtroute::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "mtroute", version, about = "Cost-aware MT engine routing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Route the corpus once with a single (max_mts, alpha, seed).
    Run(Common),
    /// Run the full (max_mts x alpha x repetition) study.
    Grid(Common),
    /// Evaluate the full-ensemble and best-single-engine baselines.
    Baselines(Common),
    /// Rebuild all report tables from the audit trail in --out.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configured synthetic corpus as JSON lines.
    Corpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_mts: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Router seed for `run`, base seed for `grid`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `sim` or `http:URL`.
    #[arg(long)]
    qe: Option<String>,
    /// TOML file with `[[engine]]` entries.
    #[arg(long)]
    engines: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<StudyConfig> {
    match path {
        Some(p) => StudyConfig::load(p),
        None => Ok(StudyConfig::default()),
    }
}

impl Common {
    fn study(&self) -> Result<StudyConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(m) = self.max_mts {
            cfg.router.max_mts = m;
            cfg.grid.max_mts = vec![m];
        }
        if let Some(a) = self.alpha {
            cfg.router.alpha = a;
            cfg.grid.alpha = vec![a];
        }
        if let Some(s) = self.seed {
            cfg.router.seed = s;
            cfg.grid.base_seed = s;
        }
        if let Some(r) = self.repetitions {
            cfg.grid.repetitions = r;
        }
        if let Some(c) = &self.corpus {
            cfg.corpus = Some(c.clone());
        }
        if let Some(q) = &self.qe {
            cfg.qe = q.parse::<QeSource>()?;
        }
        if let Some(e) = &self.engines {
            cfg.engines = load_engines(e)?;
            cfg.simulation.corpus.n_engines = cfg.engines.len();
        }
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, report: &ExperimentReport) -> Result<()> {
    report.check_invariants()?;
    if let Some(dir) = out {
        report::write_report(dir, report)?;
    }
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    write!(w, "{}", report::baselines_csv(report))?;
    write!(w, "{}", report::cells_csv(report))?;
    Ok(())
}

fn run(args: &Common, grid: bool) -> Result<()> {
    let cfg = args.study()?;
    let ex = cfg.experiment()?;
    let audit = match &args.out {
        Some(dir) => Some(AuditWriter::create(dir)?),
        None => None,
    };
    if let Some(a) = &audit {
        a.write_manifest(&cfg.grid, &ex.engines)?;
    }
    let sink = |key: &RunKey, records: &[mtroute::harness::AuditRecord]| match &audit {
        Some(a) => a.write_run(key, records),
        None => Ok(()),
    };
    let (report, baseline) = if grid {
        for (m, _) in cfg.grid.cells(ex.engines.len()) {
            mtroute::validate_config(
                mtroute::RouterConfig {
                    max_mts: m,
                    ..cfg.router.clone()
                },
                &ex.engines,
            )?;
        }
        ex.run_grid(&cfg.grid, sink)?
    } else {
        let key = RunKey {
            max_mts: cfg.router.max_mts,
            alpha: cfg.router.alpha,
            repetition: 0,
            seed: cfg.router.seed,
        };
        ex.run_single(key, &cfg.grid, sink)?
    };
    if let Some(a) = &audit {
        a.write_baseline(&baseline)?;
    }
    emit(args.out.as_deref(), &report)
}

fn baselines(args: &Common) -> Result<()> {
    let cfg = args.study()?;
    let ex = cfg.experiment()?;
    let records = ex.baseline_full_ensemble()?;
    let full = FullEnsembleSummary::from_records(&records);
    let best = baseline_best_mt(&ex.requests, &ex.engines, ex.oracle.as_ref())?;
    if let Some(dir) = &args.out {
        let audit = AuditWriter::create(dir)?;
        audit.write_baseline(&records)?;
    }
    println!("baseline,engine,total_cost,mean_quality,engine_calls,qe_calls");
    println!(
        "full_ensemble,,{},{},{},{}",
        full.total_cost, full.mean_quality, full.engine_calls, full.qe_calls
    );
    println!(
        "best_mt,{},{},{},{},0",
        best.engine,
        best.total_cost,
        best.mean_quality,
        ex.requests.len()
    );
    Ok(())
}

fn corpus(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let requests = generate_corpus(&cfg.simulation.corpus)?;
    let mut w = BufWriter::new(File::create(out)?);
    write_corpus(&mut w, Some(&cfg.simulation.corpus), &requests)?;
    w.flush()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(&args, false),
        Command::Grid(args) => run(&args, true),
        Command::Baselines(args) => baselines(&args),
        Command::Report { out } => {
            let report = report::recompute(&out)?;
            emit(Some(&out), &report)
        }
        Command::Corpus { config, out } => corpus(config.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    // clap's own usage errors would exit with 2, which is reserved for
    // backend failures here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtroute: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Backend => 2,
        ErrorClass::Internal => 3,
    }
}
