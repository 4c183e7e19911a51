// SPDX-License-Identifier: MIT OR Apache-2.0

//! `east` command-line entry point.

use std::collections::BTreeMap;
use std::fs;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use east::analysis::{self, PlotFormat, Stopwords};
use east::backend::scripted::ScriptedBackend;
use east::backend::server::ReferenceServer;
use east::backend::toy::ToyTransformer;
use east::backend::Backend;
use east::prompting::Transcript;
use east::runner::config::ExperimentConfig;
use east::runner::interaction::{run_many, write_interaction, InteractionOptions};
use east::runner::{self as runner, runlog};
use east::seed::{self, stream};
use east::steering::{self, load_vector, save_vector};
use east::{Error, Prompt, Result};

#[derive(Debug, Parser)]
#[command(name = "east", version, about = "Entropy-driven activation steering for bandit agents")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override a configuration key, e.g. `--set experiment.horizon=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Format of tables written to the output directory.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn plot(self) -> PlotFormat {
        match self {
            Format::Csv => PlotFormat::Csv,
            Format::Json => PlotFormat::Json,
        }
    }

    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ServeBackend {
    Toy,
    Scripted,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Play interactions and write run logs, cumulative actions and entropy curves.
    Run {
        /// Number of runs (default: experiment.k_runs).
        #[arg(long)]
        runs: Option<usize>,
        /// Steer with this vector file.
        #[arg(long)]
        vector: Option<PathBuf>,
        /// Steering multiplier (default: experiment.beta).
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Run K interactions capturing activations at experiment.layer.
    Collect {
        #[arg(long, conflicts_with = "from_runs")]
        runs: Option<usize>,
        /// Re-capture activations with the configured backend along logged runs
        /// instead of playing new ones.
        #[arg(long, value_name = "DIR")]
        from_runs: Option<PathBuf>,
    },
    /// Compute the steering vector from a collected run directory.
    Vector {
        #[arg(long, value_name = "DIR")]
        runs: PathBuf,
    },
    /// Write a feature-shuffled control copy of a vector (seeded by --seed).
    Shuffle {
        #[arg(long)]
        vector: PathBuf,
    },
    /// Evaluate a vector at every grid multiplier over an evaluation prompt set.
    Eval {
        #[arg(long)]
        vector: PathBuf,
        /// Prompt set (JSON lines of transcripts); generated from the eval section when omitted.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Run interactions at every grid temperature.
    SweepTemp {
        /// Runs per temperature (default: grid.runs_per_temperature).
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Rebuild the vector at every grid layer from logged runs and evaluate it.
    SweepLayers {
        #[arg(long, value_name = "DIR")]
        runs: PathBuf,
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Token-level probability of trace.target_arm along one generated completion.
    Trace {
        /// Transcript (JSON) to continue; an empty transcript when omitted.
        #[arg(long, conflicts_with = "run")]
        transcript: Option<PathBuf>,
        /// Continue the prompt of step `--step` of this run log instead.
        #[arg(long, requires = "step")]
        run: Option<PathBuf>,
        #[arg(long, requires = "run")]
        step: Option<u32>,
        #[arg(long)]
        vector: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Relative word frequencies between two corpora (bundled examples by default).
    Words {
        /// Corpus files: one JSON string or raw text per line.
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        /// Use every completion in these run directories instead.
        #[arg(long, requires = "b_runs", conflicts_with_all = ["a", "b"])]
        a_runs: Option<PathBuf>,
        #[arg(long, requires = "a_runs")]
        b_runs: Option<PathBuf>,
    },
    /// Serve a local backend over the wire protocol on the loopback interface.
    ServeReference {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        #[arg(long, value_enum, default_value = "toy")]
        backend: ServeBackend,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Run { .. } => "run",
            Command::Collect { .. } => "collect",
            Command::Vector { .. } => "vector",
            Command::Shuffle { .. } => "shuffle",
            Command::Eval { .. } => "eval",
            Command::SweepTemp { .. } => "sweep-temp",
            Command::SweepLayers { .. } => "sweep-layers",
            Command::Trace { .. } => "trace",
            Command::Words { .. } => "words",
            Command::ServeReference { .. } => "serve-reference",
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn interaction_options(cfg: &ExperimentConfig) -> InteractionOptions {
    InteractionOptions::new(
        cfg.experiment.scenario,
        cfg.bandit_config(0),
        cfg.experiment.m,
        cfg.sampling(0),
    )
}

/// Output directory bookkeeping: every written file is hashed into the
/// manifest.
struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_owned(),
            files: BTreeMap::new(),
        })
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.dir.join(rel))?;
        self.files.insert(rel.to_owned(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        fs::write(self.path(rel)?, text)?;
        self.record(rel)
    }

    fn table<R: analysis::PlotRow + Clone>(&mut self, stem: &str, rows: &[R], format: Format) -> Result<String> {
        let rel = format!("{stem}.{}", format.ext());
        analysis::emit_plot_data(rows, &self.path(&rel)?, format.plot())?;
        self.record(&rel)?;
        Ok(rel)
    }

    fn runs(&mut self, subdir: &str, runs: &[runner::Interaction]) -> Result<()> {
        let dir = self.path(&format!("{subdir}/x"))?.parent().unwrap().to_owned();
        for r in runs {
            write_interaction(&dir, r)?;
            let id = &r.log.header.run_id;
            self.record(&format!("{subdir}/{id}.jsonl"))?;
            if let Some(name) = &r.log.header.activation_file {
                self.record(&format!("{subdir}/{name}"))?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    seed: u64,
    version: &'a str,
    git_describe: Option<&'a str>,
    config: &'a ExperimentConfig,
    files: &'a BTreeMap<String, String>,
}

fn write_manifest(out: &mut Outputs, cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    out.write_text("config.toml", &cfg.to_toml_string()?)?;
    let describe = env!("EAST_GIT_DESCRIBE");
    let manifest = Manifest {
        command: cli.command.name(),
        argv: std::env::args().collect(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        git_describe: (!describe.is_empty()).then_some(describe),
        config: cfg,
        files: &out.files,
    };
    fs::write(out.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// A run directory, or an output directory holding one under `runs/`.
fn run_dir(p: &Path) -> PathBuf {
    let nested = p.join("runs");
    if nested.is_dir() {
        nested
    } else {
        p.to_owned()
    }
}

fn read_logs(dir: &Path) -> Result<Vec<runlog::RunLog>> {
    let logs: Vec<_> = runlog::read_dir(&run_dir(dir))?.into_iter().map(|(_, l)| l).collect();
    if logs.is_empty() {
        return Err(Error::InvalidArgument(format!("no run logs in {}", dir.display())));
    }
    Ok(logs)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn aborted_error(logs: &[&runlog::RunLog]) -> Result<()> {
    match logs.iter().find(|l| l.is_aborted()) {
        Some(l) => {
            let runlog::Termination::Aborted { t, message } = &l.termination else {
                unreachable!()
            };
            Err(Error::Transport(format!("{} aborted at step {t}: {message}", l.header.run_id)))
        }
        None => Ok(()),
    }
}

/// Evaluation prompts from a file, or generated (and saved) from the
/// configuration's eval section.
fn eval_prompts(
    path: Option<&Path>,
    backend: &dyn Backend,
    cfg: &ExperimentConfig,
    out: &mut Outputs,
) -> Result<Vec<Transcript>> {
    if let Some(p) = path {
        return runner::read_prompts(p);
    }
    let (prompts, _) = runner::make_eval_prompt_set(
        backend,
        &interaction_options(cfg),
        &cfg.eval.environments,
        cfg.eval.runs_per_env,
        cfg.eval.n_prompts,
        cfg.eval.prompt_seed,
    )?;
    runner::write_prompts(&prompts, &out.path("prompts.jsonl")?)?;
    out.record("prompts.jsonl")?;
    Ok(prompts)
}

fn eval_seed(cfg: &ExperimentConfig) -> u64 {
    seed::split(cfg.seed, stream::EVAL_SAMPLER, 0)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if let Command::ServeReference { port, host, backend } = &cli.command {
        let b: Arc<dyn Backend> = match backend {
            ServeBackend::Toy => Arc::new(ToyTransformer::new(cfg.backend.toy.clone())?),
            ServeBackend::Scripted => Arc::new(ScriptedBackend::new(cfg.backend.scripted.clone())?),
        };
        let server = ReferenceServer::spawn(b, SocketAddr::new(*host, *port))?;
        println!("{}", server.url());
        server.join();
        return Ok(());
    }
    if let Command::Words { a, b, a_runs, b_runs } = &cli.command {
        let mut out = Outputs::new(&cli.out)?;
        let (ca, cb) = match (a, b, a_runs, b_runs) {
            (Some(a), Some(b), _, _) => (
                analysis::parse_corpus(&fs::read_to_string(a)?),
                analysis::parse_corpus(&fs::read_to_string(b)?),
            ),
            (_, _, Some(a), Some(b)) => (
                analysis::corpus_from_logs(&read_logs(a)?),
                analysis::corpus_from_logs(&read_logs(b)?),
            ),
            _ => (
                analysis::parse_corpus(analysis::DEFAULT_RESPONSES),
                analysis::parse_corpus(analysis::STEERED_RESPONSES),
            ),
        };
        let report = analysis::word_frequency_report(&ca, &cb, &Stopwords::bundled())?;
        out.table("words", &report.words, cli.format)?;
        print_json(&serde_json::json!({
            "total_a": report.total_a,
            "total_b": report.total_b,
            "stopwords": report.stopwords_id,
            "top_a": report.words.iter().take(10).map(|w| &w.word).collect::<Vec<_>>(),
            "top_b": report.words.iter().rev().take(10).map(|w| &w.word).collect::<Vec<_>>(),
        }))?;
        return write_manifest(&mut out, cli, &cfg);
    }

    let mut out = Outputs::new(&cli.out)?;
    let backend = cfg.backend.build()?;
    let backend: &dyn Backend = backend.as_ref();
    let n_arms = cfg.n_arms();
    match &cli.command {
        Command::Run { runs, vector, beta } => {
            let mut opts = interaction_options(&cfg);
            if let Some(p) = vector {
                opts = opts.with_steering(load_vector(p)?, beta.unwrap_or(cfg.experiment.beta));
            }
            let n = runs.unwrap_or(cfg.experiment.k_runs);
            let results = run_many(backend, &opts, cfg.seed, 0, n)?;
            out.runs("runs", &results)?;
            let logs: Vec<_> = results.iter().map(|r| r.log.clone()).collect();
            aborted_error(&logs.iter().collect::<Vec<_>>())?;
            if n_arms == 2 {
                out.table("cumulative", &analysis::cumulative_rows(&logs)?, cli.format)?;
            }
            let curve = analysis::entropy_over_time(&logs, 1000, seed::split(cfg.seed, stream::BOOTSTRAP, 0))?;
            out.table("entropy_over_time", &curve, cli.format)?;
            print_json(&serde_json::json!({
                "runs": logs.len(),
                "steps": logs.iter().map(|l| l.steps.len()).sum::<usize>(),
                "all_invalid": logs.iter().filter(|l| matches!(l.termination, runlog::Termination::AllInvalid { .. })).count(),
            }))?;
        }
        Command::Collect { runs, from_runs } => {
            let results = match from_runs {
                Some(dir) => runner::recapture_runs(backend, &read_logs(dir)?, cfg.experiment.layer)?,
                None => {
                    let k = runs.unwrap_or(cfg.experiment.k_runs);
                    let opts = interaction_options(&cfg).with_capture(cfg.experiment.layer);
                    run_many(backend, &opts, cfg.seed, 0, k)?
                }
            };
            out.runs("runs", &results)?;
            aborted_error(&results.iter().map(|r| &r.log).collect::<Vec<_>>())?;
            let pairs: Vec<_> = results
                .iter()
                .map(|r| (r.log.clone(), r.activations.clone().expect("capture enabled")))
                .collect();
            let ds = runner::dataset_from_runs(&pairs)?;
            let summary = serde_json::json!({
                "dataset_hash": ds.content_hash(),
                "layer": ds.layer,
                "dim": ds.dim(),
                "n_runs": ds.runs.len(),
                "n_samples": ds.n_samples(),
                "n_excluded": ds.n_excluded,
            });
            out.write_text("dataset.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
            print_json(&summary)?;
        }
        Command::Vector { runs } => {
            let ds = runner::dataset_from_dir(&run_dir(runs))?;
            let v = steering::compute_steering_vector(&ds)?;
            save_vector(&v, &out.path("vector.east")?)?;
            out.record("vector.east")?;
            print_json(&serde_json::json!({
                "layer": v.layer,
                "dim": v.dim(),
                "normalizer": v.normalizer,
                "l2_norm": east::numeric::l2_norm(&v.values),
                "metadata": v.metadata,
            }))?;
        }
        Command::Shuffle { vector } => {
            let v = load_vector(vector)?;
            let s = steering::shuffle_features(&v, cfg.seed);
            save_vector(&s, &out.path("shuffled.east")?)?;
            out.record("shuffled.east")?;
            print_json(&serde_json::json!({ "layer": s.layer, "dim": s.dim(), "shuffle_seed": cfg.seed }))?;
        }
        Command::Eval { vector, prompts } => {
            let v = load_vector(vector)?;
            let prompts = eval_prompts(prompts.as_deref(), backend, &cfg, &mut out)?;
            let rows = runner::eval_steering(
                backend,
                &prompts,
                &v,
                &cfg.grid.multipliers,
                cfg.experiment.m_eval,
                &cfg.sampling(0),
                n_arms,
                eval_seed(&cfg),
            )?;
            out.table("entropy", &rows, cli.format)?;
            print_json(&rows)?;
        }
        Command::SweepTemp { runs } => {
            let n = runs.unwrap_or(cfg.grid.runs_per_temperature);
            let results = runner::temperature_sweep(backend, &interaction_options(&cfg), &cfg.grid.temperatures, n, cfg.seed)?;
            for (i, r) in results.iter().enumerate() {
                let wrapped: Vec<runner::Interaction> = r
                    .runs
                    .iter()
                    .map(|l| runner::Interaction {
                        log: l.clone(),
                        activations: None,
                    })
                    .collect();
                out.runs(&format!("temperature-{i:02}"), &wrapped)?;
                if n_arms == 2 {
                    out.table(&format!("cumulative-{i:02}"), &analysis::cumulative_rows(&r.runs)?, cli.format)?;
                }
            }
            let rows = analysis::temperature_rows(&results);
            out.table("temperature", &rows, cli.format)?;
            print_json(&rows)?;
        }
        Command::SweepLayers { runs, prompts } => {
            let logs = read_logs(runs)?;
            let prompts = eval_prompts(prompts.as_deref(), backend, &cfg, &mut out)?;
            let layers = cfg.grid.layers_for(backend.info().n_layers);
            let (vectors, rows) = runner::sweep_layers(
                backend,
                &logs,
                &layers,
                &cfg.grid.multipliers,
                &prompts,
                cfg.experiment.m_eval,
                &cfg.sampling(0),
                n_arms,
                eval_seed(&cfg),
            )?;
            for v in &vectors {
                let rel = format!("vectors/layer-{:03}.east", v.layer);
                save_vector(v, &out.path(&rel)?)?;
                out.record(&rel)?;
            }
            out.table("layers", &rows, cli.format)?;
            print_json(&rows)?;
        }
        Command::Trace {
            transcript,
            run,
            step,
            vector,
            beta,
        } => {
            let tr = match (transcript, run, step) {
                (Some(p), _, _) => Transcript::from_json(&fs::read_to_string(p)?)?,
                (None, Some(log), Some(t)) => runlog::RunLog::read(log)?.transcript_at(*t)?,
                _ => Transcript::new(cfg.experiment.scenario, cfg.experiment.horizon),
            };
            let spec = match vector {
                Some(p) => Some(load_vector(p)?.spec(beta.unwrap_or(cfg.experiment.beta))),
                None => None,
            };
            let points = runner::action_probability_trace(
                backend,
                &Prompt::from_transcript(&tr),
                &cfg.sampling(0),
                spec.as_ref(),
                cfg.trace.s,
                cfg.trace.target_arm,
                tr.scenario,
                n_arms,
                cfg.seed,
            )?;
            out.table("trace", &points, cli.format)?;
            print_json(&serde_json::json!({
                "tokens": points.len(),
                "text": points.iter().map(|p| p.token.as_str()).collect::<String>(),
            }))?;
        }
        Command::Words { .. } | Command::ServeReference { .. } => unreachable!(),
    }
    write_manifest(&mut out, cli, &cfg)
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("EAST_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            tracing::warn!("could not size the thread pool: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e {
                Error::Config(_) => ("config", 2),
                _ => ("runtime", 1),
            };
            let body = serde_json::json!({ "error": { "kind": kind, "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
