use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use pvta::escalation::EscalationStatus;
use pvta::kb::CourseKB;
use pvta::nlu::{validate_workspace, NluError, TrainedModel, Workspace};
use pvta::pipeline::Answer;
use pvta::service::{Engine, EngineError, ServiceConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVALID_WORKSPACE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "pvta",
    version,
    about = "Course assistant: intent classification, dialog and TA escalation"
)]
struct Cli {
    /// Service configuration (TOML).
    #[arg(
        short,
        long,
        global = true,
        env = "PVTA_CONFIG",
        default_value = "pvta.toml"
    )]
    config: PathBuf,
    /// Overrides the workspace path from the config.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Overrides the knowledge-base path from the config.
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    /// Overrides the data directory holding the event logs.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Overrides the escalation threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Check the workspace and knowledge base and report every problem.
    Validate,
    /// Train offline and print a model report.
    Train,
    /// Interactive session on stdin/stdout.
    Chat {
        #[arg(long, default_value = "cli")]
        student: String,
        /// Also print intent and confidence for each turn.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Print the ranked intents for one question.
    Classify { text: Vec<String> },
    /// Cluster student profiles and print the assignment as JSON.
    Cluster {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Inspect or resolve the escalation queue. Do not run while `serve` is
    /// using the same data directory.
    Escalations {
        #[command(subcommand)]
        action: EscalationAction,
    },
}

#[derive(Debug, Subcommand)]
enum EscalationAction {
    List {
        #[arg(long, value_enum, default_value_t = StatusFilter::Pending)]
        status: StatusFilter,
    },
    Resolve {
        id: u64,
        #[arg(long)]
        answer: String,
        #[arg(long)]
        intent: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StatusFilter {
    Pending,
    Resolved,
    All,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(err: EngineError) -> Self {
        let code = match &err {
            EngineError::Config(_) => EXIT_CONFIG,
            EngineError::InvalidWorkspace(violations) => {
                for v in violations {
                    eprintln!("  {v}");
                }
                EXIT_INVALID_WORKSPACE
            }
            EngineError::Nlu(NluError::Io { .. })
            | EngineError::Kb(pvta::kb::KbError::Io { .. }) => EXIT_CONFIG,
            EngineError::Nlu(_) => EXIT_INVALID_WORKSPACE,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, err.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(err: io::Error) -> Self {
        Failure::new(EXIT_FAILURE, err.to_string())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "pvta=info".into()),
        )
        .with_writer(io::stderr)
        .init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, Failure> {
    let mut config =
        ServiceConfig::load(&cli.config).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    config.apply_env();
    if let Some(p) = &cli.workspace {
        config.workspace = p.clone();
    }
    if let Some(p) = &cli.kb {
        config.kb = p.clone();
    }
    if let Some(p) = &cli.data_dir {
        config.data_dir = p.clone();
    }
    if let Some(t) = cli.threshold {
        config.threshold = t;
    }
    if let Command::Serve { host, port } = &cli.command {
        if let Some(h) = host {
            config.host = h.clone();
        }
        if let Some(p) = port {
            config.port = *p;
        }
    }
    config
        .validate()
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Serve { .. } => {
            let engine = Arc::new(Engine::open(config)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(pvta::service::serve(engine))?;
            Ok(())
        }
        Command::Validate => validate(&config),
        Command::Train => train(&config),
        Command::Chat { student, verbose } => chat(Engine::open(config)?, &student, verbose),
        Command::Classify { text } => {
            let engine = Engine::open(config)?;
            let classification = engine.classify(&text.join(" "));
            for s in &classification.ranked {
                println!("{:<24} {:.6}", s.intent, s.confidence);
            }
            Ok(())
        }
        Command::Cluster { k, seed } => {
            let engine = Engine::open(config)?;
            print_json(&engine.clusters(k, seed)?)
        }
        Command::Escalations { action } => {
            let engine = Engine::open(config)?;
            match action {
                EscalationAction::List { status } => {
                    let status = match status {
                        StatusFilter::Pending => Some(EscalationStatus::Pending),
                        StatusFilter::Resolved => Some(EscalationStatus::Resolved),
                        StatusFilter::All => None,
                    };
                    print_json(&engine.escalations(status))
                }
                EscalationAction::Resolve { id, answer, intent } => {
                    print_json(&engine.resolve(id, &answer, &intent)?)
                }
            }
        }
    }
}

fn validate(config: &ServiceConfig) -> Result<(), Failure> {
    let workspace =
        Workspace::load(&config.workspace).map_err(|e| Failure::from(EngineError::from(e)))?;
    if let Err(violations) = validate_workspace(&workspace) {
        return Err(EngineError::InvalidWorkspace(violations).into());
    }
    let kb = CourseKB::load(&config.kb).map_err(|e| Failure::from(EngineError::from(e)))?;
    println!(
        "ok: {} intents, {} examples, {} entities, {} concepts, {} dialog nodes, {} KB paths",
        workspace.intents.len(),
        workspace.example_count(),
        workspace.entities.len(),
        workspace.concept_count(),
        workspace.dialog_nodes.len(),
        kb.len()
    );
    Ok(())
}

fn train(config: &ServiceConfig) -> Result<(), Failure> {
    let workspace =
        Workspace::load(&config.workspace).map_err(|e| Failure::from(EngineError::from(e)))?;
    if let Err(violations) = validate_workspace(&workspace) {
        return Err(EngineError::InvalidWorkspace(violations).into());
    }
    let model = TrainedModel::train(&workspace, config.smoothing)
        .map_err(|e| Failure::from(EngineError::from(e)))?;
    println!(
        "trained revision {}: {} intents, {} examples, vocabulary {}, smoothing {}",
        model.revision(),
        model.intents().len(),
        model.example_count(),
        model.vocabulary().len(),
        model.smoothing()
    );
    for stats in model.intents() {
        println!(
            "  {:<24} examples {:>3}  tokens {:>4}  prior {:.4}",
            stats.name,
            stats.example_count,
            stats.token_total,
            model.prior(&stats.name).unwrap_or(0.0)
        );
    }
    Ok(())
}

fn chat(engine: Engine, student: &str, verbose: bool) -> Result<(), Failure> {
    let session = engine.create_session(student)?;
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    eprintln!("session {session}; empty line or ctrl-d to quit");
    loop {
        write!(stdout, "you> ")?;
        stdout.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        let turn = engine.post_message(&session, line.trim_end())?;
        match &turn.answer {
            Answer::Text(text) => writeln!(stdout, "assistant> {text}")?,
            Answer::PendingEscalation => writeln!(
                stdout,
                "assistant> [forwarded to a teaching assistant, escalation #{}]",
                turn.escalation_id.unwrap_or_default()
            )?,
        }
        if verbose {
            writeln!(
                stdout,
                "  intent {} confidence {:.4}{}",
                turn.classification.top_intent().unwrap_or("-"),
                turn.confidence,
                turn.matched_node_id
                    .as_deref()
                    .map(|n| format!(" node {n}"))
                    .unwrap_or_default()
            )?;
        }
    }
    Ok(())
}
