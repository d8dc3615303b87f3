//! The `inbedder` command line. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backend::synthetic::MASK_TOKEN;
use crate::backend::ArchitectureMode;
use crate::benchmarks::synthesis::{promote, synthesize_benchmark_items, HttpChatClient, Recipe, ReviewEntry};
use crate::benchmarks::{self as bench, CriterionInstructions};
use crate::clustering::ClusterAssignment;
use crate::dataprep;
use crate::embfile;
use crate::encoding::filter::default_stopwords;
use crate::encoding::{EncodingSpec, FilterConfig, Method};
use crate::error::{Error, Result};
use crate::interpretation::explain_clusters;
use crate::pipeline::{BackendSpec, Backends, Pipeline, BACKEND_URL_ENV, DEFAULT_SEED, DEFAULT_TOP_K};
use crate::prompting::PromptTemplate;
use crate::service::{self, ServiceConfig, ServiceState};

pub const CONFIG_ENV: &str = "INBEDDER_CONFIG";

#[derive(Parser, Debug)]
#[command(name = "inbedder", version, about = "Instruction-following text embeddings from generated answers")]
struct Cli {
    /// synthetic:FILE, replay:FILE or an http(s) URL of a generation server
    #[arg(long, global = true)]
    backend: Option<String>,
    /// TOML config file (default: $INBEDDER_CONFIG)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Prompt template file; overrides the backend's template
    #[arg(long, global = true)]
    template: Option<PathBuf>,
    /// Capture every backend call into a replay file
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed a corpus under one instruction into an INBDEMB1 file
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the generated answers, one JSON string per line
        #[arg(long)]
        answers: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Score a benchmark and print JSON
    Eval {
        #[command(subcommand)]
        task: EvalTask,
    },
    /// Cluster a corpus under an instruction and explain the clusters
    Cluster {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Label view used for histograms and entropy ordering
        #[arg(long)]
        gold_view: Option<String>,
        /// Write the report as JSON instead of a table
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        assignment_out: Option<PathBuf>,
        #[arg(long)]
        generations_out: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Explain an existing assignment from its generations
    Explain {
        /// One JSON string per line
        #[arg(long)]
        generations: PathBuf,
        /// A JSON label array or a saved assignment object
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        /// Gold labels, one JSON string per line
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn QA triplets into training examples
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One stopword per line (default: built-in English list)
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        mlm: bool,
        #[arg(long, default_value = MASK_TOKEN)]
        mask_token: String,
    },
    /// Run the HTTP job API
    Serve {
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long)]
        max_jobs: Option<usize>,
        #[arg(long)]
        max_retained: Option<usize>,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        cors_origin: Option<String>,
    },
    /// Expose the configured backend over the /v1 generation protocol
    ServeBackend {
        #[arg(long)]
        addr: Option<SocketAddr>,
    },
    /// Draft benchmark items with a chat model into a review file
    Synthesize {
        #[arg(long)]
        recipe: Recipe,
        /// Seed items, one JSON object per line
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        model: String,
        #[arg(long)]
        review: PathBuf,
    },
    /// Collect the generated items of a review file
    Promote {
        #[arg(long)]
        review: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum EvalTask {
    Triplet {
        #[arg(long)]
        data: PathBuf,
        /// Require the full 12,320-triplet release
        #[arg(long)]
        check_counts: bool,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Sts {
        #[arg(long)]
        data: PathBuf,
        /// Require the full 2,758-pair release
        #[arg(long)]
        check_counts: bool,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Cluster {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Robustness {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct SpecArgs {
    #[arg(long, default_value = "avg-gen")]
    method: Method,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    layer: i64,
    /// `english` or a JSON filter file; avg-gen only
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long)]
    mode: Option<ArchitectureMode>,
    #[arg(long)]
    mask_count: Option<usize>,
    #[arg(long)]
    normalize_reencoded: bool,
}

impl SpecArgs {
    fn build(&self) -> Result<EncodingSpec> {
        let mut s = EncodingSpec::new(self.method);
        s.layer = self.layer;
        s.filter = match self.filter.as_deref() {
            None => None,
            Some("english") => Some(FilterConfig::english()),
            Some(path) => Some(FilterConfig::from_file(Path::new(path))?),
        };
        if let Some(n) = self.samples {
            s.n_samples = n;
        }
        if let Some(t) = self.temperature {
            s.temperature = t;
        }
        if let Some(n) = self.max_new_tokens {
            s.max_new_tokens = n;
        }
        if let Some(b) = self.token_budget {
            s.token_budget = b;
        }
        s.architecture_mode = self.mode;
        if let Some(m) = self.mask_count {
            s.mask_count = m;
        }
        s.normalize_reencoded = self.normalize_reencoded;
        s.validate()?;
        Ok(s)
    }
}

/// Settings read from the TOML config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub backend: Option<String>,
    pub template: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub serve: ServeConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: Option<SocketAddr>,
    pub max_concurrent_jobs: Option<usize>,
    pub max_retained_jobs: Option<usize>,
    pub snapshot: Option<PathBuf>,
    pub cors_origin: Option<String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        toml::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Flag, then environment, then config file.
pub fn resolve_backend(flag: Option<&str>, env: Option<&str>, config: Option<&str>) -> Result<BackendSpec> {
    flag.or(env)
        .or(config)
        .ok_or_else(|| Error::Usage(format!("no backend: pass --backend, set {BACKEND_URL_ENV} or add `backend` to the config file")))?
        .parse()
}

struct Ctx {
    cli_backend: Option<String>,
    template: Option<PathBuf>,
    record: Option<PathBuf>,
    config: Config,
}

impl Ctx {
    fn backends(&self) -> Result<Backends> {
        let env = std::env::var(BACKEND_URL_ENV).ok();
        let spec = resolve_backend(self.cli_backend.as_deref(), env.as_deref(), self.config.backend.as_deref())?;
        log::debug!("backend {spec:?}");
        Backends::open(&spec, self.config.max_in_flight.unwrap_or(4))
    }

    fn template(&self) -> Result<Option<PromptTemplate>> {
        self.template
            .as_ref()
            .or(self.config.template.as_ref())
            .map(|p| PromptTemplate::from_file(p))
            .transpose()
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.config.seed).unwrap_or(DEFAULT_SEED)
    }

    /// Runs `f` on a pipeline, saving a replay file afterwards when recording.
    fn with_pipeline<T>(&self, f: impl FnOnce(&Pipeline) -> Result<T>) -> Result<T> {
        let backends = self.backends()?;
        let template = self.template()?;
        match &self.record {
            None => f(&Pipeline::new(backends, template)),
            Some(path) => {
                let (backends, rec) = backends.recording();
                let out = f(&Pipeline::new(backends, template))?;
                rec.store().write(path)?;
                log::info!("recorded backend calls to {}", path.display());
                Ok(out)
            }
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    write_output(out, &json_text(value)?)
}

fn write_string_lines(path: &Path, lines: &[String]) -> Result<()> {
    dataprep::write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?), lines)
}

fn read_string_lines(path: &Path) -> Result<Vec<String>> {
    read_json_lines(path)
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AssignmentFile {
    Labels(Vec<usize>),
    Full(ClusterAssignment),
}

fn read_assignment(path: &Path) -> Result<ClusterAssignment> {
    match serde_json::from_str(&std::fs::read_to_string(path)?)? {
        AssignmentFile::Full(a) => Ok(a),
        AssignmentFile::Labels(labels) => {
            let k = labels.iter().max().map_or(0, |m| m + 1);
            Ok(ClusterAssignment {
                labels,
                k,
                inertia: f64::NAN,
                seed: 0,
            })
        }
    }
}

fn read_stopwords(path: Option<&Path>) -> Result<BTreeSet<String>> {
    match path {
        None => Ok(default_stopwords()),
        Some(p) => Ok(std::fs::read_to_string(p)?
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect()),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let config = config_path.as_deref().map(Config::load).transpose()?.unwrap_or_default();
    let ctx = Ctx {
        cli_backend: cli.backend,
        template: cli.template,
        record: cli.record,
        config,
    };
    match cli.command {
        Command::Embed {
            corpus,
            instruction,
            out,
            answers,
            spec,
        } => {
            let spec = spec.build()?;
            let docs = bench::load_corpus(&corpus)?;
            let texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();
            let encoded = ctx.with_pipeline(|p| p.embed_corpus(&texts, &instruction, &spec))?;
            let embeddings: Vec<_> = encoded.iter().map(|e| e.embedding.clone()).collect();
            embfile::save(&out, &embeddings)?;
            if let Some(path) = answers {
                let joined: Vec<String> = encoded.iter().map(|e| e.answers.join("\n")).collect();
                write_string_lines(&path, &joined)?;
            }
            log::info!("wrote {} embeddings to {}", embeddings.len(), out.display());
        }
        Command::Eval { task } => match task {
            EvalTask::Triplet {
                data,
                check_counts,
                spec,
                out,
            } => {
                let spec = spec.build()?;
                let examples = if check_counts {
                    bench::load_intent_emotion(&data)?
                } else {
                    bench::load_triplets(&data)?
                };
                let scores = ctx.with_pipeline(|p| bench::run_triplet_benchmark(&examples, &p.encoder(&spec)?))?;
                write_json(out.as_deref(), &scores)?;
            }
            EvalTask::Sts {
                data,
                check_counts,
                spec,
                out,
            } => {
                let spec = spec.build()?;
                let pairs = if check_counts {
                    bench::load_instruct_stsb(&data)?
                } else {
                    bench::load_pairs(&data)?
                };
                let score = ctx.with_pipeline(|p| bench::run_sts_benchmark(&pairs, &p.encoder(&spec)?))?;
                write_json(out.as_deref(), &score)?;
            }
            EvalTask::Cluster {
                corpus,
                manifest,
                seed,
                spec,
                out,
            } => {
                let spec = spec.build()?;
                let task = bench::load_clustering_task(&corpus, &manifest)?;
                let seed = ctx.seed(seed);
                let scores = ctx.with_pipeline(|p| bench::run_multiview_clustering(&task, &p.encoder(&spec)?, seed))?;
                write_json(out.as_deref(), &scores)?;
            }
            EvalTask::Robustness { manifest, seed, spec, out } => {
                let spec = spec.build()?;
                let suite = bench::load_robustness_suite(&manifest)?;
                let seed = ctx.seed(seed);
                let scores = ctx.with_pipeline(|p| bench::run_robustness_suite(&suite, &p.encoder(&spec)?, seed))?;
                write_json(out.as_deref(), &scores)?;
            }
        },
        Command::Cluster {
            corpus,
            instruction,
            k,
            top_k,
            seed,
            gold_view,
            json,
            out,
            assignment_out,
            generations_out,
            spec,
        } => {
            let spec = spec.build()?;
            let docs = bench::load_corpus(&corpus)?;
            let gold = gold_view
                .as_ref()
                .map(|v| {
                    docs.iter()
                        .map(|d| {
                            d.labels.get(v).cloned().ok_or_else(|| Error::Dataset {
                                path: corpus.display().to_string(),
                                line: 0,
                                message: format!("document {} has no label for view {v}", d.id),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            let texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();
            let seed = ctx.seed(seed);
            let outcome =
                ctx.with_pipeline(|p| p.cluster(&texts, &instruction, &spec, k, seed, top_k.unwrap_or(DEFAULT_TOP_K)))?;
            let report = match &gold {
                Some(g) => outcome.report.clone().with_gold(&outcome.assignment, g)?,
                None => outcome.report.clone(),
            };
            if json {
                write_json(out.as_deref(), &report)?;
            } else {
                write_output(out.as_deref(), &report.render_table())?;
            }
            if let Some(p) = assignment_out {
                std::fs::write(p, json_text(&outcome.assignment)?)?;
            }
            if let Some(p) = generations_out {
                write_string_lines(&p, &outcome.generations)?;
            }
        }
        Command::Explain {
            generations,
            assignment,
            top_k,
            gold,
            json,
            out,
        } => {
            let generations = read_string_lines(&generations)?;
            let assignment = read_assignment(&assignment)?;
            let mut report = explain_clusters(&generations, &assignment, top_k)?;
            if let Some(g) = gold {
                report = report.with_gold(&assignment, &read_string_lines(&g)?)?;
            }
            if json {
                write_json(out.as_deref(), &report)?;
            } else {
                write_output(out.as_deref(), &report.render_table())?;
            }
        }
        Command::Prep {
            input,
            out,
            stopwords,
            mlm,
            mask_token,
        } => {
            let stopwords = read_stopwords(stopwords.as_deref())?;
            let template = ctx.template()?.unwrap_or_default();
            let reader = BufReader::new(std::fs::File::open(&input)?);
            let triplets = dataprep::read_qa_jsonl(reader, &input.display().to_string())?;
            let writer = std::io::BufWriter::new(std::fs::File::create(&out)?);
            let report = if mlm {
                let ex: Vec<_> = triplets
                    .iter()
                    .map(|t| dataprep::format_mlm_training_example(t, &template, &stopwords, &mask_token, dataprep::whitespace_tokens))
                    .collect::<Result<_>>()?;
                dataprep::write_jsonl(writer, &ex)?;
                let targets: Vec<String> = ex.iter().map(|e| e.targets.join(" ")).collect();
                dataprep::PrepReport {
                    examples: ex.len(),
                    mean_target_tokens: dataprep::mean_target_tokens(targets.iter().map(String::as_str)),
                }
            } else {
                let ex: Vec<_> = triplets
                    .iter()
                    .map(|t| dataprep::format_training_example(t, &template, &stopwords))
                    .collect::<Result<_>>()?;
                dataprep::write_jsonl(writer, &ex)?;
                dataprep::PrepReport {
                    examples: ex.len(),
                    mean_target_tokens: dataprep::mean_target_tokens(ex.iter().map(|e| e.target.as_str())),
                }
            };
            write_json(None, &report)?;
        }
        Command::Serve {
            addr,
            max_jobs,
            max_retained,
            snapshot,
            cors_origin,
        } => {
            let sc = &ctx.config.serve;
            let defaults = ServiceConfig::default();
            let config = ServiceConfig {
                max_concurrent_jobs: max_jobs.or(sc.max_concurrent_jobs).unwrap_or(defaults.max_concurrent_jobs),
                max_retained_jobs: max_retained.or(sc.max_retained_jobs).unwrap_or(defaults.max_retained_jobs),
                snapshot: snapshot.or_else(|| sc.snapshot.clone()),
                cors_origin: cors_origin.or_else(|| sc.cors_origin.clone()),
            };
            let addr = addr.or(sc.addr).unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
            let pipeline = Pipeline::new(ctx.backends()?, ctx.template()?);
            let state = ServiceState::new(pipeline, config)?;
            runtime()?.block_on(service::serve(service::router(state), addr))?;
        }
        Command::ServeBackend { addr } => {
            let b = ctx.backends()?;
            let addr = addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8081)));
            runtime()?.block_on(service::serve(service::backend_server::router(b.generator, b.embedder), addr))?;
        }
        Command::Synthesize {
            recipe,
            seeds,
            endpoint,
            model,
            review,
        } => {
            let seeds: Vec<serde_json::Value> = read_json_lines(&seeds)?;
            let client = HttpChatClient::from_env(&endpoint, &model)?;
            let entries = synthesize_benchmark_items(&seeds, &client, recipe, &CriterionInstructions::default())?;
            dataprep::write_jsonl(std::io::BufWriter::new(std::fs::File::create(&review)?), &entries)?;
            let flagged = entries.iter().filter(|e| e.error.is_some()).count();
            log::info!("{} seeds, {flagged} flagged for review", entries.len());
        }
        Command::Promote { review, out } => {
            let entries: Vec<ReviewEntry> = read_json_lines(&review)?;
            let items = promote(&entries);
            dataprep::write_jsonl(std::io::BufWriter::new(std::fs::File::create(&out)?), &items)?;
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default()).filter_level(level).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
