//! Command-line interface. Exit codes: 0 on success, 1 on usage errors,
//! 2 on runtime errors.

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use syntheval_core::divergence::DEFAULT_TOP_K;
use syntheval_core::lexicon::Lexicon;
use syntheval_core::ngram::{DEFAULT_MIN_COUNT, DEFAULT_N_MAX, DEFAULT_N_MIN};
use syntheval_core::perturb::{AffixPosition, PerturbationSpec, DEFAULT_TYPO_VARIANTS, NONSENSE_MAX_LEN, NONSENSE_MIN_LEN};
use syntheval_core::protocol::{
    BackendDescriptor, GenerationConfig, DEFAULT_MAX_IN_FLIGHT, DEFAULT_MAX_TOKENS, DEFAULT_TIMEOUT_MS, DEFAULT_TOP_P,
};
use syntheval_core::query::{SamplingStrategy, DEFAULT_QUERY_WORDS};

use crate::backend::HttpBackend;
use crate::catalog;
use crate::mock_server::{self, MockModel};
use crate::report::{load_results, render_report, ReportFormat};
use crate::service::{self, AppState, ServiceConfig, DEFAULT_JOB_WORKERS};
use crate::store::{write_records, Clock, Stage, Workspace};
use crate::workflow::{self, AnalyzeArgs, PromptMode, Run, SampleArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "syntheval", version, about = "Behavioral testing workbench for binary text classifiers")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Workspace root; relative paths are resolved against it.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Run name; artifacts go to `<run-dir>/runs/<run-id>/<stage>/`.
    #[arg(long, global = true, default_value = "default")]
    pub run_id: String,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, env = "SYNTHEVAL_BACKEND_URL")]
    pub backend_url: Option<String>,
    #[arg(long, global = true)]
    pub model_id: Option<String>,
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_IN_FLIGHT)]
    pub max_in_flight: usize,
    #[arg(long, global = true, default_value_t = DEFAULT_TIMEOUT_MS)]
    pub timeout_ms: u64,
    /// Zero all manifest timestamps so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample seeding queries from a corpus, one sentence per line.
    SampleQueries {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_QUERY_WORDS)]
        k: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "first-k")]
        strategy: Strategy,
    },
    /// Generate continuations for sampled queries.
    Generate {
        /// Defaults to the sample stage output of this run.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOP_P)]
        top_p: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
        max_tokens: usize,
    },
    /// Predict label distributions for a dataset with one model.
    Predict {
        /// Defaults to the generate stage output of this run.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "sentiment")]
        task: String,
        #[arg(long, value_enum, default_value = "fewshot")]
        prompt: PromptMode,
    },
    /// Rank examples by task/reference disagreement.
    Rank {
        #[arg(long)]
        task_preds: PathBuf,
        #[arg(long)]
        ref_preds: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        k: usize,
    },
    /// Count n-grams over the ranked hard subset.
    Analyze {
        /// Defaults to the rank stage output of this run.
        #[arg(long)]
        ranked: Option<PathBuf>,
        /// Defaults to the generate stage output of this run.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_N_MIN)]
        n_min: usize,
        #[arg(long, default_value_t = DEFAULT_N_MAX)]
        n_max: usize,
        #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
        min_count: usize,
    },
    /// Print the number of cases a template expands to.
    Expand {
        /// Template file, or a name in `<run-dir>/templates`.
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        lexicons: Option<PathBuf>,
        /// Also write every case to this JSONL file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a template against one model.
    Verify {
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        lexicons: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "fewshot")]
        prompt: PromptMode,
    },
    /// Render verification results as a table.
    Report {
        /// Defaults to the verify stage directory of this run.
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the workbench REST service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Model backend as `MODEL_ID=URL`; repeatable. `--model-id` with
        /// `--backend-url` adds one more.
        #[arg(long = "backend", value_parser = parse_backend)]
        backends: Vec<(String, String)>,
        #[arg(long, default_value_t = DEFAULT_JOB_WORKERS)]
        workers: usize,
        #[arg(long, value_enum, default_value = "fewshot")]
        prompt: PromptMode,
    },
    /// Run a mock model server from a rule file.
    ServeMock {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value_t = 8081)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
    /// Write perturbation lexicons.
    #[command(subcommand)]
    Perturb(PerturbCommand),
}

#[derive(Debug, Subcommand)]
pub enum PerturbCommand {
    /// Distinct one-edit misspellings of a term.
    Typo {
        #[arg(long)]
        term: String,
        #[arg(long, default_value_t = DEFAULT_TYPO_VARIANTS)]
        n: usize,
        /// Lexicon name; the file is `<run-dir>/lexicons/<NAME>.lex`.
        #[arg(long)]
        name: String,
    },
    /// Letter-free random strings for prefixes or suffixes.
    Nonsense {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = NONSENSE_MIN_LEN)]
        min_len: usize,
        #[arg(long, default_value_t = NONSENSE_MAX_LEN)]
        max_len: usize,
        #[arg(long)]
        name: String,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Strategy {
    FirstK,
    RandomK,
}

impl From<Strategy> for SamplingStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::FirstK => SamplingStrategy::FirstK,
            Strategy::RandomK => SamplingStrategy::RandomK,
        }
    }
}

fn parse_backend(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((id, url)) if !id.is_empty() && !url.is_empty() => Ok((id.into(), url.into())),
        _ => Err(format!("expected MODEL_ID=URL, got {s:?}")),
    }
}

/// Missing or inconsistent flags that clap cannot check itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl Global {
    fn workspace(&self) -> Result<Workspace> {
        let dir = self.run_dir.as_ref().ok_or_else(|| usage("--run-dir is required for this command"))?;
        Ok(Workspace::new(dir))
    }

    fn clock(&self) -> Clock {
        if self.deterministic {
            Clock::Zero
        } else {
            Clock::System
        }
    }

    fn run(&self) -> Result<Run> {
        Ok(Run::new(self.workspace()?, &self.run_id, self.clock()))
    }

    fn descriptor(&self, model_id: &str, url: &str) -> BackendDescriptor {
        let mut d = BackendDescriptor::new(model_id, url);
        d.max_in_flight = self.max_in_flight;
        d.timeout_ms = self.timeout_ms;
        d
    }

    fn backend(&self) -> Result<HttpBackend> {
        let url = self.backend_url.as_deref().ok_or_else(|| usage("--backend-url (or SYNTHEVAL_BACKEND_URL) is required"))?;
        let model_id = self.model_id.as_deref().ok_or_else(|| usage("--model-id is required"))?;
        Ok(HttpBackend::new(self.descriptor(model_id, url))?)
    }
}

fn lexicons_for(ws: &Workspace, given: Option<&Path>) -> Result<syntheval_core::lexicon::LexiconSet> {
    let dir = given.map(|p| ws.resolve(p)).unwrap_or_else(|| ws.lexicons_dir());
    Ok(catalog::load_lexicon_dir(dir)?)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
}

fn execute(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::SampleQueries { corpus, k, n, strategy } => {
            let run = g.run()?;
            let args = SampleArgs { corpus: run.ws.resolve(corpus), k_words: k, n_queries: n, seed: g.seed, strategy: strategy.into() };
            let (path, queries) = workflow::sample(&run, &args)?;
            writeln!(out, "{} queries -> {}", queries.len(), path.display())?;
        }
        Command::Generate { queries, top_p, max_tokens } => {
            let run = g.run()?;
            let backend = g.backend()?;
            let queries = queries.map(|q| run.ws.resolve(q)).unwrap_or_else(|| run.queries_path());
            let config = GenerationConfig { top_p, max_tokens, seed: Some(g.seed) };
            let s = runtime()?.block_on(workflow::generate(&run, &queries, &backend, &config, g.max_in_flight))?;
            writeln!(
                out,
                "{} queries: {} examples, {} dropped, {} errors, {} carried over -> {}",
                s.queries,
                s.examples,
                s.dropped,
                s.errors,
                s.resumed,
                run.dataset_path().display()
            )?;
        }
        Command::Predict { dataset, task, prompt } => {
            let run = g.run()?;
            let backend = g.backend()?;
            let dataset = dataset.map(|d| run.ws.resolve(d)).unwrap_or_else(|| run.dataset_path());
            let spec = workflow::task_spec(&task, prompt)?;
            let path = runtime()?.block_on(workflow::predict(&run, &dataset, &backend, &spec, prompt, g.max_in_flight))?;
            writeln!(out, "predictions -> {}", path.display())?;
        }
        Command::Rank { task_preds, ref_preds, k } => {
            let run = g.run()?;
            let (path, ranked) = workflow::rank(&run, &run.ws.resolve(task_preds), &run.ws.resolve(ref_preds), k)?;
            writeln!(out, "{} ranked -> {}", ranked.len(), path.display())?;
        }
        Command::Analyze { ranked, dataset, n_min, n_max, min_count } => {
            let run = g.run()?;
            let args = AnalyzeArgs {
                ranked: ranked.map(|p| run.ws.resolve(p)).unwrap_or_else(|| run.ranked_path()),
                dataset: dataset.map(|p| run.ws.resolve(p)).unwrap_or_else(|| run.dataset_path()),
                n_min,
                n_max,
                min_count,
            };
            let (path, stats) = workflow::analyze(&run, &args)?;
            writeln!(out, "{} n-grams -> {}", stats.len(), path.display())?;
            for s in stats.iter().take(10) {
                writeln!(out, "{:>6}  {}", s.count, s.ngram.join(" "))?;
            }
        }
        Command::Expand { template, lexicons, out: cases_out } => {
            let ws = g.workspace()?;
            let template = catalog::load_template(workflow::locate_template(&ws, &template)?)?;
            let lexicons = lexicons_for(&ws, lexicons.as_deref())?;
            let count = syntheval_core::template::expansion_count(&template, &lexicons)?;
            writeln!(out, "{count}")?;
            if let Some(path) = cases_out {
                let cases = workflow::expand_cases(&template, &lexicons)?;
                write_records(ws.resolve(path), &cases)?;
            }
        }
        Command::Verify { template, lexicons, prompt } => {
            let run = g.run()?;
            let backend = g.backend()?;
            let template = catalog::load_template(workflow::locate_template(&run.ws, &template)?)?;
            let lexicons = lexicons_for(&run.ws, lexicons.as_deref())?;
            let v = runtime()?.block_on(workflow::verify(&run, &template, &lexicons, &backend, prompt, g.max_in_flight, None))?;
            writeln!(
                out,
                "{} / {}: {}/{} correct ({:.2}%) -> {}",
                v.result.template_name,
                v.result.model_id,
                v.result.n_correct,
                v.result.n_cases,
                v.result.accuracy_pct,
                v.path.display()
            )?;
        }
        Command::Report { results, format, out: report_out } => {
            let run = g.run()?;
            let dir = results.map(|p| run.ws.resolve(p)).unwrap_or_else(|| run.stage_dir(Stage::Verify));
            let doc = render_report(&load_results(&dir)?, format);
            match report_out {
                Some(path) => {
                    let path = run.ws.resolve(path);
                    std::fs::write(&path, doc).with_context(|| format!("writing {}", path.display()))?;
                }
                None => out.write_all(doc.as_bytes())?,
            }
        }
        Command::Serve { port, host, mut backends, workers, prompt } => {
            let ws = g.workspace()?;
            if let (Some(id), Some(url)) = (&g.model_id, &g.backend_url) {
                backends.push((id.clone(), url.clone()));
            }
            let clients = backends
                .iter()
                .map(|(id, url)| HttpBackend::new(g.descriptor(id, url)))
                .collect::<Result<Vec<_>, _>>()?;
            let config = ServiceConfig {
                ws,
                run_id: g.run_id.clone(),
                clock: g.clock(),
                prompt_mode: prompt,
                max_in_flight: g.max_in_flight,
                job_workers: workers,
            };
            runtime()?.block_on(async {
                let addr = SocketAddr::new(host, port);
                let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
                tracing::info!(%addr, "workbench service listening");
                service::serve(listener, AppState::new(config, clients), shutdown_signal()).await?;
                anyhow::Ok(())
            })?;
        }
        Command::ServeMock { rules, port, host } => {
            let rules = match &g.run_dir {
                Some(dir) => Workspace::new(dir).resolve(rules),
                None => rules,
            };
            let model = MockModel::from_rule_file(&rules)?;
            runtime()?.block_on(async {
                let addr = SocketAddr::new(host, port);
                let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
                tracing::info!(%addr, model = %model.model_id, "mock backend listening");
                axum::serve(listener, mock_server::router(std::sync::Arc::new(model)))
                    .with_graceful_shutdown(shutdown_signal())
                    .await?;
                anyhow::Ok(())
            })?;
        }
        Command::Perturb(cmd) => {
            let ws = g.workspace()?;
            let (name, spec) = match cmd {
                PerturbCommand::Typo { term, n, name } => (name, PerturbationSpec::Typo { term, n_variants: n, seed: g.seed }),
                PerturbCommand::Nonsense { count, min_len, max_len, name } => (
                    name,
                    PerturbationSpec::NonsenseAffix { count, min_len, max_len, position: AffixPosition::Suffix, seed: g.seed },
                ),
            };
            let lexicon = Lexicon::new(&name, spec.entries()?)?;
            let dir = ws.lexicons_dir();
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{name}.lex"));
            std::fs::write(&path, lexicon.to_lex_string())?;
            writeln!(out, "{} entries -> {}", lexicon.len(), path.display())?;
        }
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.global.verbose);
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("\n{}", <Cli as clap::CommandFactory>::command().render_usage());
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

/// Helper for tests and embedding: runs a command line and captures stdout.
pub fn run_captured<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| anyhow!(e.to_string()))?;
    let mut buf = Vec::new();
    execute(cli, &mut buf)?;
    String::from_utf8(buf).map_err(|e| anyhow!(e))
}
