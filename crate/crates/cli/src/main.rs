use std::path::PathBuf;
use std::process::ExitCode;

use acr_core::config::RunConfig;
use acr_core::ids::QueryId;
use acr_core::pipeline::{self, ErrorClass, PipelineError, ReportFormat, System};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "acr", version, about = "Cohort retrieval benchmark: generate, index, query, score")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory. For `synth` this is where the benchmark goes.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Benchmark directory read by the other commands.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Print errors as one JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate ontology, corpus, abstractions, query bank and gold.
    Synth,
    /// Chunk and embed the corpus into a vector index.
    Index,
    /// Extract, consolidate and index patient events; writes the conflict log.
    BuildKb,
    /// Run one system over the bank and write its cohort file.
    Query {
        #[arg(long, value_enum)]
        system: SystemArg,
        /// Run a single query instead of the whole bank.
        #[arg(long)]
        query_id: Option<String>,
    },
    /// Score cohort files against gold.
    Eval {
        /// Systems whose cohort files under <out>/cohorts are scored (default: all present).
        #[arg(long = "system", value_enum)]
        systems: Vec<SystemArg>,
        /// Extra cohort files as NAME=PATH.
        #[arg(long = "cohorts")]
        cohorts: Vec<String>,
        /// Score even if a cohort file was produced under another configuration.
        #[arg(long)]
        force: bool,
    },
    /// Paraphrase, intersection and subtype checks on one cohort file.
    Consistency {
        #[arg(long, value_enum, conflicts_with = "cohorts")]
        system: Option<SystemArg>,
        #[arg(long)]
        cohorts: Option<PathBuf>,
    },
    /// Render a saved evaluation report.
    Report {
        #[arg(long, value_enum, default_value = "md")]
        format: FormatArg,
        /// Report JSON (default: <out>/report.json).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SystemArg {
    Retriever,
    Read,
    Symbolic,
}

impl From<SystemArg> for System {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Retriever => System::Retriever,
            SystemArg::Read => System::Read,
            SystemArg::Symbolic => System::Symbolic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Md,
    Csv,
}

fn load_config(g: &Global, is_synth: bool) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.data {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(o) = &g.out {
        if is_synth {
            cfg.paths.data_dir = o.clone();
        } else {
            cfg.paths.out_dir = o.clone();
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = load_config(g, matches!(cli.command, Command::Synth))?;
    pipeline::init_jobs(g.jobs);
    match &cli.command {
        Command::Synth => {
            let b = pipeline::synth(&cfg)?;
            println!(
                "wrote {} patients, {} documents, {} queries to {}",
                b.corpus.n_patients(),
                b.corpus.n_documents(),
                b.bank.len(),
                cfg.paths.data_dir.display()
            );
        }
        Command::Index => {
            let s = pipeline::index(&cfg)?;
            println!("indexed {} chunks (d={}, {})", s.n_chunks, s.dim, s.fingerprint);
        }
        Command::BuildKb => {
            let s = pipeline::build_kb(&cfg)?;
            println!(
                "KB: {} patients, {} events, {} conflicts logged",
                s.n_patients, s.n_events, s.n_conflicts
            );
        }
        Command::Query { system, query_id } => {
            let q = query_id.as_deref().map(QueryId::from);
            let run = pipeline::query(&cfg, (*system).into(), q.as_ref(), g.jobs)?;
            if let Some(q) = &q {
                let c = &run.cohorts[q];
                println!("{}", serde_json::to_string(&c.members())?);
            } else {
                println!(
                    "{}: {} cohorts written to {}",
                    run.system.as_str(),
                    run.cohorts.len(),
                    cfg.paths.out_dir.join(pipeline::COHORTS_DIR).display()
                );
            }
        }
        Command::Eval {
            systems,
            cohorts,
            force,
        } => {
            let dir = cfg.paths.out_dir.join(pipeline::COHORTS_DIR);
            let mut inputs: Vec<(String, PathBuf)> = Vec::new();
            let chosen: Vec<System> = if systems.is_empty() && cohorts.is_empty() {
                System::ALL
                    .into_iter()
                    .filter(|s| dir.join(s.cohort_file()).exists())
                    .collect()
            } else {
                systems.iter().map(|&s| s.into()).collect()
            };
            for s in chosen {
                inputs.push((s.as_str().to_string(), dir.join(s.cohort_file())));
            }
            for spec in cohorts {
                let (name, path) = spec
                    .split_once('=')
                    .with_context(|| format!("--cohorts expects NAME=PATH, got {spec:?}"))
                    .map_err(Usage)?;
                inputs.push((name.to_string(), PathBuf::from(path)));
            }
            if inputs.is_empty() {
                return Err(Usage(anyhow::anyhow!("no cohort files to score; run `acr query` first")).into());
            }
            let report = pipeline::eval(&cfg, &inputs, *force)?;
            for s in &report.systems {
                for c in &s.categories {
                    let f1 = c.cohort_retrieval.map_or("–".to_string(), |p| format!("{:.3}", p.f1));
                    println!("{:<10} {:<7} n={:<3} F1={}", s.system, c.category.as_str(), c.n_queries, f1);
                }
            }
            println!("report written to {}", cfg.paths.out_dir.join(pipeline::REPORT_FILE).display());
        }
        Command::Consistency { system, cohorts } => {
            let path = match (system, cohorts) {
                (_, Some(p)) => p.clone(),
                (Some(s), None) => cfg
                    .paths
                    .out_dir
                    .join(pipeline::COHORTS_DIR)
                    .join(System::from(*s).cohort_file()),
                (None, None) => return Err(Usage(anyhow::anyhow!("give --system or --cohorts")).into()),
            };
            let r = pipeline::consistency(&cfg, &path)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            println!(
                "violations: paraphrase {}, intersection {}, subtype {}",
                r.paraphrase_violations(),
                r.intersection_violations(),
                r.subtype_violations()
            );
        }
        Command::Report { format, input } => {
            let path = input
                .clone()
                .unwrap_or_else(|| cfg.paths.out_dir.join(pipeline::REPORT_FILE));
            let fmt = match format {
                FormatArg::Json => ReportFormat::Json,
                FormatArg::Md => ReportFormat::Markdown,
                FormatArg::Csv => ReportFormat::Csv,
            };
            print!("{}", pipeline::render_report(&path, fmt)?);
        }
    }
    Ok(())
}

/// Marks an argument problem found after clap parsing.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Usage {}

fn classify(err: &anyhow::Error) -> ErrorClass {
    if err.downcast_ref::<Usage>().is_some() {
        return ErrorClass::Usage;
    }
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return p.class();
    }
    if err.downcast_ref::<acr_core::config::ConfigError>().is_some() {
        return ErrorClass::Usage;
    }
    ErrorClass::Data
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::External => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let class = classify(&err);
            if cli.global.json_errors {
                let msg = serde_json::json!({
                    "error": describe(&err),
                    "class": class,
                    "exit_code": exit_code(class),
                });
                eprintln!("{msg}");
            } else {
                eprintln!("error: {}", describe(&err));
            }
            ExitCode::from(exit_code(class))
        }
    }
}
