mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tapestry_core::agreement::{agreement_report, load_coder_csv, pair_coders, Method, Population};
use tapestry_core::clustering::{EmbeddingProvider, NgramHashEmbedder};
use tapestry_core::gateway::{
    CompletionRequest, Gateway, GatewayError, HttpGateway, ProviderConfig, Recorder, ScriptedStub,
};
use tapestry_core::project::{
    Audience, DirStore, Project, ProjectDir, ReportOptions, Role, RunRecord, RunStatus,
    StatementRef,
};
use tapestry_core::review::EditRequest;
use tapestry_core::transcript::{ColumnMap, IngestOptions, InputFormat, ResearchObjective};
use tapestry_core::workflow::{
    new_token, project_topics, Actor, ClusteringRequest, ExtractionRequest, ProjectService,
    Providers, ServiceError, Workspace,
};
use tapestry_core::{Clock, ClusterId, FixedClock, ProjectId, SystemClock, TranscriptId};
use tapestry_server::{AppState, TokenTable};

use crate::config::{CliConfig, Profile};
use crate::output::{Failure, Format};

/// Thematic analysis of interview transcripts: topic extraction, clustering
/// and human review.
#[derive(Parser)]
#[command(name = "tapestry", version)]
struct Cli {
    /// Project directory.
    #[arg(long, global = true, env = "TAPESTRY_PROJECT")]
    project: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// TOML configuration file.
    #[arg(long, global = true, env = "TAPESTRY_CONFIG")]
    config: Option<PathBuf>,
    /// Name recorded as the author of edits.
    #[arg(long, global = true, env = "TAPESTRY_ACTOR", default_value = "cli")]
    actor: String,
    /// Answer model calls from a recorded stub directory.
    #[arg(long, global = true, conflicts_with = "synthetic")]
    stub: Option<PathBuf>,
    /// Record every model response into this directory, adding to what is
    /// already there.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    /// Use the built-in deterministic offline model.
    #[arg(long, global = true)]
    synthetic: bool,
    /// Pin every timestamp to this unix millisecond value.
    #[arg(long, global = true, hide = true)]
    fixed_clock: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a project in the --project directory.
    Init {
        #[arg(long)]
        name: String,
        /// Project id; defaults to the directory name.
        #[arg(long)]
        id: Option<String>,
    },
    /// Summarize the project.
    Status,
    /// Add one interview transcript.
    Ingest(IngestArgs),
    /// Manage research objectives.
    #[command(subcommand)]
    Objectives(ObjectivesCmd),
    /// Extract topics from interviewee statements.
    Extract {
        /// Maximum topics per statement.
        #[arg(long = "t")]
        max_topics: Option<usize>,
        /// Preceding turns shown to the model as context.
        #[arg(long = "c")]
        context_turns: Option<usize>,
        /// Re-extract only these transcripts.
        #[arg(long = "transcript")]
        transcripts: Vec<String>,
    },
    /// Cluster and name the extracted topics.
    Cluster {
        #[arg(long)]
        min_cluster_size: Option<usize>,
        #[arg(long)]
        min_samples: Option<usize>,
    },
    /// List clusters by size.
    Clusters,
    /// Follow a statement forward or a cluster back to its evidence.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Export or import review sheets.
    #[command(subcommand)]
    Review(ReviewCmd),
    /// Apply one edit given as a JSON file.
    Edit {
        file: PathBuf,
        #[arg(long)]
        expected_version: Option<u64>,
    },
    /// Acceptance counts and rating distributions.
    Stats,
    /// Inter-coder agreement from coder files.
    Agree(AgreeArgs),
    /// Export the researcher report or a stakeholder summary.
    Report {
        #[arg(long, value_enum, default_value_t = AudienceArg::Full)]
        audience: AudienceArg,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long, default_value_t = 3)]
        quotes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the project's topics as a coder file.
    CoderSheet {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask a question answered from transcript quotes.
    Chat { question: String },
    /// Create a read-only share link token.
    Share,
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        /// Directory holding one subdirectory per project.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Files served outside /v1, such as the browser UI.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct IngestArgs {
    file: PathBuf,
    #[arg(long, default_value = "speaker")]
    speaker_col: String,
    #[arg(long, default_value = "text")]
    text_col: String,
    #[arg(long)]
    timestamp_col: Option<String>,
    /// Speaker value that marks interviewee turns.
    #[arg(long)]
    interviewee: String,
    /// Participant label; defaults to the interviewee value.
    #[arg(long)]
    participant: Option<String>,
    /// Defaults to jsonl for .jsonl files and csv otherwise.
    #[arg(long, value_enum)]
    input_format: Option<InputFormatArg>,
}

#[derive(Subcommand)]
enum ObjectivesCmd {
    /// Replace the objectives from a JSON file and/or `--ro ID=TEXT` pairs.
    Set {
        file: Option<PathBuf>,
        #[arg(long = "ro", value_name = "ID=TEXT")]
        ro: Vec<String>,
    },
    Show,
}

#[derive(Subcommand)]
enum TraceCmd {
    Statement { transcript: String, index: usize },
    Cluster { cluster: String },
}

#[derive(Subcommand)]
enum ReviewCmd {
    /// Write a reviewer's sheet as CSV.
    Export {
        #[arg(long)]
        reviewer: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Import a filled-in sheet. Any invalid row rejects the whole file.
    Import {
        file: PathBuf,
        /// Reviewer for rows that leave the reviewer column empty.
        #[arg(long)]
        reviewer: Option<String>,
    },
}

#[derive(Args)]
struct AgreeArgs {
    /// Coder A file, or `@project` for the project's own topics.
    #[arg(long)]
    a: String,
    /// Coder B file, or `@project`.
    #[arg(long)]
    b: String,
    #[arg(long, default_value = "population 1")]
    label: String,
    /// Second population, compared with the first by Welch's t-test.
    #[arg(long, requires = "b2")]
    a2: Option<String>,
    #[arg(long, requires = "a2")]
    b2: Option<String>,
    #[arg(long, default_value = "population 2")]
    label2: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    method: MethodArg,
    /// Also print the per-statement table.
    #[arg(long)]
    statements: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormatArg {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Semantic,
}

#[derive(Clone, Copy, ValueEnum)]
enum AudienceArg {
    Full,
    Summary,
}

/// Stands in when no model is configured, so commands that never call one
/// still work.
struct Unconfigured;

impl Gateway for Unconfigured {
    fn complete(&self, _req: &CompletionRequest) -> Result<String, GatewayError> {
        Err(GatewayError::InvalidRequest(
            "no model provider configured (use --synthetic, --stub, a config profile or TAPESTRY_LLM_ENDPOINT)".into(),
        ))
    }
}

type Recording = (Arc<Recorder<Arc<dyn Gateway>>>, PathBuf);

struct Models {
    providers: Providers,
    configured: bool,
    recorder: Option<Recording>,
}

impl Models {
    fn build(cli: &Cli, cfg: &CliConfig) -> Result<Self> {
        let mut configured = true;
        let (gateway, embedder): (Arc<dyn Gateway>, Arc<dyn EmbeddingProvider>) =
            if let Some(dir) = &cli.stub {
                let stub = ScriptedStub::load(dir)
                    .with_context(|| format!("loading stub {}", dir.display()))?;
                (Arc::new(stub), Arc::new(NgramHashEmbedder))
            } else if cli.synthetic {
                Profile::Synthetic.build()?
            } else if let Some(p) = cfg.selected_profile() {
                p.build()?
            } else if let Some(pc) = ProviderConfig::from_env() {
                (Arc::new(HttpGateway::new(pc)?), Arc::new(NgramHashEmbedder))
            } else {
                configured = false;
                (Arc::new(Unconfigured), Arc::new(NgramHashEmbedder))
            };
        let (gateway, recorder) = match &cli.record {
            Some(dir) => {
                let rec = Arc::new(Recorder::new(gateway));
                let g: Arc<dyn Gateway> = rec.clone();
                (g, Some((rec, dir.clone())))
            }
            None => (gateway, None),
        };
        Ok(Self {
            providers: Providers { gateway, embedder },
            configured,
            recorder,
        })
    }

    fn require(&self) -> Result<()> {
        if !self.configured {
            bail!(ServiceError::Validation(
                "this command calls a model: pass --synthetic or --stub DIR, select a config profile, or set TAPESTRY_LLM_ENDPOINT".into()
            ));
        }
        Ok(())
    }

    fn save_recording(&self) -> Result<()> {
        if let Some((rec, dir)) = &self.recorder {
            rec.append(dir)
                .with_context(|| format!("writing recording to {}", dir.display()))?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    let cli = Cli::parse();
    let format = cli.format;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => output::report_error(&e, format),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let models = Models::build(&cli, &cfg)?;
    let clock: Arc<dyn Clock> = match cli.fixed_clock {
        Some(ms) => Arc::new(FixedClock(ms)),
        None => Arc::new(SystemClock),
    };
    let result = dispatch(&cli, &cfg, &models, clock);
    // A partial recording is still useful for diagnosing a failed run.
    let saved = models.save_recording();
    result.and(saved)
}

fn project_dir(cli: &Cli, cfg: &CliConfig) -> Result<PathBuf> {
    cli.project
        .clone()
        .or_else(|| cfg.project_root.clone())
        .ok_or_else(|| {
            anyhow!(ServiceError::Validation(
                "no project directory: pass --project DIR".into()
            ))
        })
}

fn open(
    cli: &Cli,
    cfg: &CliConfig,
    models: &Models,
    clock: Arc<dyn Clock>,
) -> Result<ProjectService> {
    let dir = ProjectDir::new(project_dir(cli, cfg)?);
    if !dir.exists() {
        return Err(ServiceError::NotFound(format!(
            "no project at {} (run `tapestry init` first)",
            dir.path().display()
        ))
        .into());
    }
    Ok(ProjectService::open(
        Box::new(dir),
        clock,
        models.providers.clone(),
    )?)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, content).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli, cfg: &CliConfig, models: &Models, clock: Arc<dyn Clock>) -> Result<()> {
    let actor = Actor::lead(cli.actor.clone());
    let fmt = cli.format;
    match &cli.command {
        Command::Init { name, id } => {
            let path = project_dir(cli, cfg)?;
            let id = match id {
                Some(id) => id.clone(),
                None => path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .map(str::to_string)
                    .ok_or_else(|| {
                        anyhow!(ServiceError::Validation(
                            "cannot derive a project id; pass --id".into()
                        ))
                    })?,
            };
            DirStore::validate_id(&id).map_err(ServiceError::from)?;
            let p = Project::new(
                ProjectId::new(id),
                name.trim(),
                cfg.settings(),
                clock.now_ms(),
            );
            ProjectDir::new(&path)
                .create(&p)
                .map_err(ServiceError::from)?;
            output::emit(fmt, &p.meta, |m| {
                format!("created project {} at {}\n", m.id, path.display())
            })
        }
        Command::Serve {
            listen,
            data_dir,
            static_dir,
        } => serve(cli, cfg, models, clock, listen, data_dir, static_dir),
        Command::Agree(args) => agree(cli, cfg, models, clock, args),
        cmd => {
            if matches!(
                cmd,
                Command::Extract { .. } | Command::Cluster { .. } | Command::Chat { .. }
            ) {
                models.require()?;
            }
            let svc = open(cli, cfg, models, clock)?;
            project_command(&svc, &actor, fmt, cmd)
        }
    }
}

fn project_command(svc: &ProjectService, actor: &Actor, fmt: Format, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Status => output::emit(fmt, &output::status(&svc.snapshot()), output::status_text),
        Command::Ingest(a) => {
            let raw = read(&a.file)?;
            let format = match a.input_format {
                Some(InputFormatArg::Csv) => InputFormat::Csv,
                Some(InputFormatArg::Jsonl) => InputFormat::Jsonl,
                None if a
                    .file
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("jsonl")) =>
                {
                    InputFormat::Jsonl
                }
                None => InputFormat::Csv,
            };
            let opts = IngestOptions {
                mapping: ColumnMap {
                    speaker: a.speaker_col.clone(),
                    text: a.text_col.clone(),
                    timestamp: a.timestamp_col.clone(),
                    interviewee: a.interviewee.clone(),
                },
                participant_label: a
                    .participant
                    .clone()
                    .unwrap_or_else(|| a.interviewee.clone()),
                source_name: a
                    .file
                    .file_name()
                    .and_then(|n| n.to_str())
                    .map(str::to_string),
            };
            let (t, commit) = svc.ingest(actor, &raw, format, &opts)?;
            let statements = t.turns.iter().filter(|x| t.is_statement(x.index)).count();
            output::emit(fmt, &t, |t| {
                format!(
                    "ingested {} ({}): {} turns, {} statements; version {}\n",
                    t.id,
                    t.participant_label,
                    t.turns.len(),
                    statements,
                    commit.version
                )
            })
        }
        Command::Objectives(ObjectivesCmd::Show) => {
            let p = svc.snapshot();
            output::emit(fmt, &p.state.objectives, |os| output::objectives_text(os))
        }
        Command::Objectives(ObjectivesCmd::Set { file, ro }) => {
            let mut objectives: Vec<ResearchObjective> = match file {
                Some(f) => serde_json::from_str(&read(f)?)
                    .map_err(|e| ServiceError::Validation(format!("{}: {e}", f.display())))?,
                None => Vec::new(),
            };
            for pair in ro {
                let (id, text) = pair.split_once('=').ok_or_else(|| {
                    ServiceError::Validation(format!("--ro expects ID=TEXT, got `{pair}`"))
                })?;
                objectives.push(ResearchObjective::new(id.trim(), text.trim()));
            }
            if objectives.is_empty() {
                bail!(ServiceError::Validation(
                    "give an objectives file or at least one --ro".into()
                ));
            }
            let (objectives, _) = svc.set_objectives(actor, &objectives)?;
            output::emit(fmt, &objectives, |os| output::objectives_text(os))
        }
        Command::Extract {
            max_topics,
            context_turns,
            transcripts,
        } => {
            let req = ExtractionRequest {
                transcript_ids: transcripts
                    .iter()
                    .map(|t| TranscriptId::new(t.as_str()))
                    .collect(),
                max_topics: *max_topics,
                context_turns: *context_turns,
            };
            finish_run(fmt, svc.extract(actor, &req)?)
        }
        Command::Cluster {
            min_cluster_size,
            min_samples,
        } => {
            let req = ClusteringRequest {
                min_cluster_size: *min_cluster_size,
                min_samples: *min_samples,
            };
            finish_run(fmt, svc.cluster(actor, &req)?)
        }
        Command::Clusters => {
            output::emit(fmt, &svc.clusters(actor)?, |cs| output::clusters_text(cs))
        }
        Command::Trace(TraceCmd::Statement { transcript, index }) => {
            let s = StatementRef {
                transcript_id: TranscriptId::new(transcript.as_str()),
                statement_index: *index,
            };
            output::emit(fmt, &svc.trace_statement(actor, &s)?, output::forward_text)
        }
        Command::Trace(TraceCmd::Cluster { cluster }) => {
            let t = svc.trace_cluster(actor, &ClusterId::new(cluster.as_str()))?;
            output::emit(fmt, &t, output::backward_text)
        }
        Command::Review(ReviewCmd::Export { reviewer, out }) => {
            write_or_print(out.as_deref(), &svc.review_sheet(actor, reviewer)?)
        }
        Command::Review(ReviewCmd::Import { file, reviewer }) => {
            let s = svc.import_reviews(actor, &read(file)?, reviewer.as_deref())?;
            output::emit(fmt, &s, |s| {
                format!(
                    "imported {} review rows and {} cluster ratings ({} unchanged); version {}\n",
                    s.records, s.cluster_reviews, s.unchanged, s.version
                )
            })
        }
        Command::Edit {
            file,
            expected_version,
        } => {
            let req: EditRequest = serde_json::from_str(&read(file)?)
                .map_err(|e| ServiceError::Validation(format!("{}: {e}", file.display())))?;
            let commit = svc.submit_edit(actor, &req, *expected_version)?;
            output::emit(fmt, &commit, |c| {
                let ids: Vec<&str> = c.event_ids.iter().map(|e| e.as_str()).collect();
                format!("committed {}; version {}\n", ids.join(", "), c.version)
            })
        }
        Command::Stats => {
            let stats = output::Stats {
                acceptance: svc.acceptance(actor)?,
                ratings: svc.ratings(actor)?,
                tcn_conflicts: svc.tcn_conflicts(actor)?,
            };
            output::emit(fmt, &stats, output::stats_text)
        }
        Command::Report {
            audience,
            top_k,
            quotes,
            out,
        } => {
            let opts = ReportOptions {
                audience: match audience {
                    AudienceArg::Full => Audience::ResearcherFull,
                    AudienceArg::Summary => Audience::StakeholderSummary,
                },
                top_k: *top_k,
                quotes_per_cluster: *quotes,
            };
            let report = svc.report(actor, &opts)?;
            let body = match fmt {
                Format::Text => tapestry_core::project::render_markdown(&report),
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
            };
            write_or_print(out.as_deref(), &body)
        }
        Command::CoderSheet { out } => write_or_print(out.as_deref(), &svc.coder_sheet(actor)?),
        Command::Chat { question } => {
            output::emit(fmt, &svc.chat(actor, question)?, output::chat_text)
        }
        Command::Share => {
            let (link, _) = svc.create_share(actor)?;
            output::emit(fmt, &link, |l| format!("{}\n", l.token))
        }
        Command::Init { .. } | Command::Serve { .. } | Command::Agree(_) => {
            unreachable!("handled before opening")
        }
    }
}

fn finish_run(fmt: Format, run: RunRecord) -> Result<()> {
    output::emit(fmt, &run, output::run_text)?;
    if run.status == RunStatus::Failed {
        let f = run
            .failure
            .unwrap_or_else(|| tapestry_core::project::RunFailure {
                code: "internal".into(),
                message: "run failed".into(),
            });
        return Err(Failure {
            code: f.code,
            message: format!("run {} failed: {}", run.id, f.message),
        }
        .into());
    }
    Ok(())
}

fn agree(
    cli: &Cli,
    cfg: &CliConfig,
    models: &Models,
    clock: Arc<dyn Clock>,
    args: &AgreeArgs,
) -> Result<()> {
    let mut project = None;
    let mut coder = |spec: &str| -> Result<_> {
        if spec == "@project" {
            if project.is_none() {
                project = Some(open(cli, cfg, models, clock.clone())?.snapshot());
            }
            let p = project.as_ref().expect("opened above");
            return Ok(project_topics(&p.state));
        }
        Ok(load_coder_csv(&read(Path::new(spec))?).map_err(ServiceError::from)?)
    };
    let mut populations = vec![Population {
        label: args.label.clone(),
        pairings: pair_coders(&coder(&args.a)?, &coder(&args.b)?),
    }];
    if let (Some(a2), Some(b2)) = (&args.a2, &args.b2) {
        populations.push(Population {
            label: args.label2.clone(),
            pairings: pair_coders(&coder(a2)?, &coder(b2)?),
        });
    }
    let method = match args.method {
        MethodArg::Exact => Method::Exact,
        MethodArg::Semantic => Method::Semantic,
    };
    if method == Method::Semantic {
        models.require()?;
    }
    let gateway = (method == Method::Semantic).then(|| models.providers.gateway.as_ref());
    let report = agreement_report(&populations, method, gateway).map_err(ServiceError::from)?;
    let statements = args.statements;
    output::emit(cli.format, &report, |r| {
        output::agreement_text(r, statements)
    })
}

#[allow(clippy::too_many_arguments)]
fn serve(
    cli: &Cli,
    cfg: &CliConfig,
    models: &Models,
    clock: Arc<dyn Clock>,
    listen: &Option<String>,
    data_dir: &Option<PathBuf>,
    static_dir: &Option<PathBuf>,
) -> Result<()> {
    let data_dir = data_dir
        .clone()
        .or_else(|| cfg.server.data_dir.clone())
        .or_else(|| {
            project_dir(cli, cfg)
                .ok()
                .and_then(|p| p.parent().map(Path::to_path_buf))
        })
        .unwrap_or_else(|| PathBuf::from("."));
    let listen = listen
        .clone()
        .or_else(|| cfg.server.listen.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".to_string());
    let static_dir = static_dir.clone().or_else(|| cfg.server.static_dir.clone());
    let mut tokens: TokenTable = cfg.tokens.clone();
    if tokens.0.is_empty() {
        let token = new_token();
        eprintln!("no tokens configured; lead token for this session: {token}");
        tokens.insert(token, cli.actor.clone(), Role::Lead);
    }
    let state = AppState {
        workspace: Arc::new(Workspace::new(
            DirStore::new(&data_dir),
            clock,
            models.providers.clone(),
        )),
        tokens: Arc::new(tokens),
    };
    let app = tapestry_server::router(state, static_dir);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        eprintln!(
            "serving {} on http://{}",
            data_dir.display(),
            listener.local_addr()?
        );
        tapestry_server::serve(listener, app).await?;
        Ok(())
    })
}
