use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use clarify_core::backend::{cooccur_train, Backend, BackendFamily, CoOccurModel, Endpoint, ExternalBackend, Pooling};
use clarify_core::controller::{question_prompt, Answer, BudgetScope, ControllerConfig, Event, Policy, Session};
use clarify_core::corpus::{
    build_feature_db, load_annotations, load_expressions, load_instances, write_jsonl, ObjectFeaturesDB,
};
use clarify_core::eval::{render_report, run_conditions, EvalCondition, ReportFormat};
use clarify_core::parsing::Lexicon;
use clarify_core::schema::FeatureSchema;
use clarify_core::synth::{ambiguous_world, deterministic_world};

use crate::app::{serve, AppState};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn failure(message: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "clarify",
    version,
    about = "Room and location inference with clarification questions"
)]
pub struct Cli {
    /// Feature schema document; the built-in reference schema when absent.
    #[arg(long, global = true, env = "CLARIFY_SCHEMA")]
    pub schema: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a co-occurrence model from labelled instances.
    Train(TrainArgs),
    /// Score ablation conditions over an expression corpus.
    Eval(EvalArgs),
    /// Interactive session in the terminal.
    Ask(AskArgs),
    /// HTTP session service.
    Serve(ServeArgs),
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a finite number >= 0, got {s}"))
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1], got {s}"))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long, default_value_t = 0.1, value_parser = non_negative)]
    pub alpha: f64,
    #[arg(long, default_value = "additive")]
    pub pooling: Pooling,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Cooccur,
    External,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Inferred from --model / --endpoint when omitted.
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Trained co-occurrence model.
    #[arg(long, conflicts_with = "endpoint")]
    pub model: Option<PathBuf>,
    /// External backend: tcp://host:port or http://host:port.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Override the model's smoothing constant.
    #[arg(long, value_parser = non_negative)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub pooling: Option<Pooling>,
    /// Seconds per external request.
    #[arg(long, default_value_t = 30.0, value_parser = non_negative)]
    pub timeout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Episode,
    PerStage,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    /// Confidence threshold; 0.65 for co-occurrence, 0.99 for external backends.
    #[arg(long, value_parser = unit_interval)]
    pub theta: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub budget: u32,
    #[arg(long, value_enum, default_value = "episode")]
    pub budget_scope: ScopeArg,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// Alias table for the description parser.
    #[arg(long)]
    pub aliases: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("truth").required(true).args(["annotations", "objects"])))]
pub struct EvalArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub control: ControlArgs,
    #[arg(long)]
    pub expressions: PathBuf,
    /// Annotator labels, merged by majority.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Instance documents used directly as the feature database.
    #[arg(long)]
    pub objects: Option<PathBuf>,
    /// `all` or a comma list of none, iterative, random, informative.
    #[arg(long, default_value = "all")]
    pub conditions: String,
    /// Required whenever the random condition runs.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Defaults to csv for `.csv` report paths, markdown otherwise.
    #[arg(long)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub control: ControlArgs,
    /// informative, none, or random:<seed>.
    #[arg(long, default_value = "informative")]
    pub policy: Policy,
    #[arg(long)]
    pub no_iterative: bool,
    /// Description; read from stdin when absent.
    #[arg(long)]
    pub text: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub control: ControlArgs,
    #[arg(long, default_value = "informative")]
    pub policy: Policy,
    #[arg(long)]
    pub no_iterative: bool,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory of static assets served at the root.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub idle_minutes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorldKind {
    Deterministic,
    Ambiguous,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "ambiguous")]
    pub kind: WorldKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    /// Evaluation objects (ambiguous world only).
    #[arg(long, default_value_t = 200)]
    pub eval: usize,
    #[arg(long, default_value_t = 0.8, value_parser = unit_interval)]
    pub reliability: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("no such file: {}", path.display())))
    }
}

fn load_schema(path: Option<&Path>) -> Result<Arc<FeatureSchema>, CliError> {
    match path {
        None => Ok(Arc::new(FeatureSchema::reference())),
        Some(p) => {
            require_file(p)?;
            FeatureSchema::load(p).map(Arc::new).map_err(CliError::failure)
        }
    }
}

fn load_lexicon(schema: Arc<FeatureSchema>, aliases: Option<&Path>) -> Result<Lexicon, CliError> {
    match aliases {
        None => Lexicon::reference(schema),
        Some(p) => {
            require_file(p)?;
            Lexicon::from_alias_file(schema, p)
        }
    }
    .map_err(CliError::failure)
}

pub fn build_backend(schema: Arc<FeatureSchema>, args: &BackendArgs) -> Result<Arc<dyn Backend>, CliError> {
    let kind = match (args.backend, &args.model, &args.endpoint) {
        (Some(k), _, _) => k,
        (None, Some(_), None) => BackendKind::Cooccur,
        (None, None, Some(_)) => BackendKind::External,
        _ => return Err(CliError::usage("give --model or --endpoint")),
    };
    match kind {
        BackendKind::Cooccur => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| CliError::usage("--backend cooccur needs --model"))?;
            if args.endpoint.is_some() {
                return Err(CliError::usage("--endpoint does not apply to --backend cooccur"));
            }
            require_file(path)?;
            let mut model = CoOccurModel::load(schema, path).map_err(CliError::failure)?;
            if let Some(a) = args.alpha {
                model = model.with_alpha(a);
            }
            if let Some(p) = args.pooling {
                model = model.with_pooling(p);
            }
            Ok(Arc::new(model))
        }
        BackendKind::External => {
            let raw = args
                .endpoint
                .as_ref()
                .ok_or_else(|| CliError::usage("--backend external needs --endpoint"))?;
            if args.model.is_some() {
                return Err(CliError::usage("--model does not apply to --backend external"));
            }
            let endpoint: Endpoint = raw.parse().map_err(CliError::usage)?;
            Ok(Arc::new(ExternalBackend::with_timeout(
                schema,
                endpoint,
                Duration::from_secs_f64(args.timeout),
            )))
        }
    }
}

fn controller_config(
    family: BackendFamily,
    c: &ControlArgs,
    policy: Policy,
    iterative: bool,
) -> Result<ControllerConfig, CliError> {
    let mut cfg = ControllerConfig::for_family(family);
    if let Some(t) = c.theta {
        cfg.theta = t;
    }
    cfg.question_budget = c.budget;
    cfg.budget_scope = match c.budget_scope {
        ScopeArg::Episode => BudgetScope::Episode,
        ScopeArg::PerStage => BudgetScope::PerStage,
    };
    cfg.top_k = c.top_k;
    cfg.policy = policy;
    cfg.iterative = iterative;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

fn train(schema: Arc<FeatureSchema>, args: TrainArgs) -> CliResult {
    require_file(&args.instances)?;
    let instances = load_instances(&args.instances).map_err(CliError::failure)?;
    let model = cooccur_train(schema, &instances, args.alpha)
        .map_err(CliError::failure)?
        .with_pooling(args.pooling);
    model.save(&args.out).map_err(CliError::failure)?;
    println!(
        "trained on {} instances: {} count rows, alpha {}, {:?} pooling -> {}",
        model.instance_count(),
        model.row_count(),
        model.alpha(),
        model.pooling(),
        args.out.display()
    );
    Ok(())
}

fn feature_db(schema: Arc<FeatureSchema>, args: &EvalArgs) -> Result<ObjectFeaturesDB, CliError> {
    if let Some(p) = &args.annotations {
        require_file(p)?;
        let records = load_annotations(p).map_err(CliError::failure)?;
        build_feature_db(schema, &records).map_err(CliError::failure)
    } else {
        let p = args.objects.as_ref().expect("clap enforces the group");
        require_file(p)?;
        let instances = load_instances(p).map_err(CliError::failure)?;
        ObjectFeaturesDB::from_instances(schema, &instances).map_err(CliError::failure)
    }
}

fn eval(schema: Arc<FeatureSchema>, args: EvalArgs) -> CliResult {
    let needs_seed = args.conditions.trim() == "all" || args.conditions.split(',').any(|c| c.trim() == "random");
    let seed = match (args.seed, needs_seed) {
        (Some(s), _) => s,
        (None, true) => return Err(CliError::usage("--seed is required for the random condition")),
        (None, false) => 0,
    };
    let conditions = EvalCondition::parse_list(&args.conditions, seed).map_err(CliError::usage)?;
    require_file(&args.expressions)?;
    let backend = build_backend(schema.clone(), &args.backend)?;
    let cfg = controller_config(backend.family(), &args.control, Policy::Informative, true)?;
    let lexicon = load_lexicon(schema.clone(), args.control.aliases.as_deref())?;
    let db = feature_db(schema, &args)?;
    let set = load_expressions(&args.expressions, &lexicon).map_err(CliError::failure)?;
    eprintln!(
        "{} expressions ({} mention a room or location and were discarded, {} blank)",
        set.kept.len(),
        set.discarded.len(),
        set.blank
    );
    let report =
        run_conditions(&set.kept, &lexicon, &db, backend.as_ref(), &cfg, &conditions).map_err(CliError::failure)?;
    let format = args.format.unwrap_or_else(|| match &args.report {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => ReportFormat::Csv,
        _ => ReportFormat::Markdown,
    });
    let doc = render_report(&report, format);
    match &args.report {
        Some(p) => std::fs::write(p, &doc).map_err(|e| CliError::failure(format!("{}: {e}", p.display())))?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn print_ranked(label: &str, ranked: &[(String, f64)]) {
    let shown: Vec<String> = ranked.iter().map(|(v, p)| format!("{v} {p:.3}")).collect();
    println!("{label}: {}", shown.join(", "));
}

fn ask(schema: Arc<FeatureSchema>, args: AskArgs) -> CliResult {
    let backend = build_backend(schema.clone(), &args.backend)?;
    let cfg = controller_config(backend.family(), &args.control, args.policy, !args.no_iterative)?;
    let lexicon = load_lexicon(schema.clone(), args.control.aliases.as_deref())?;
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut read = |prompt: &str| -> Result<Option<String>, CliError> {
        print!("{prompt}");
        std::io::stdout().flush().map_err(CliError::failure)?;
        lines.next().transpose().map_err(CliError::failure)
    };
    let text = match args.text {
        Some(t) => t,
        None => read("Describe the object: ")?.unwrap_or_default(),
    };
    if text.trim().is_empty() {
        return Err(CliError::usage("empty description"));
    }
    let evidence = lexicon.extract_features(&text);
    println!("understood: {evidence}");
    let (mut session, _) = Session::start(backend.as_ref(), evidence, cfg).map_err(CliError::failure)?;
    let mut shown = 0;
    loop {
        let fresh = session.events()[shown..].to_vec();
        shown = session.events().len();
        for event in fresh {
            match event {
                Event::StagePrediction { stage, ranked } => {
                    print_ranked(&format!("{stage:?}").to_lowercase(), &ranked[..ranked.len().min(3)])
                }
                Event::Done { result } => {
                    println!(
                        "room: {}  location: {}  ({} answered, {} skipped)",
                        result.room(),
                        result.location(),
                        result.questions_asked,
                        result.questions_skipped
                    );
                    return Ok(());
                }
                Event::Fault { message } => return Err(CliError::failure(message)),
                Event::Question { .. } => {}
            }
        }
        let feature = session
            .pending_question()
            .expect("session awaits an answer")
            .to_string();
        let values = schema.values(&feature).unwrap_or_default().join(", ");
        let reply = loop {
            let line = read(&format!(
                "{}\n  [{values}] (enter to skip): ",
                question_prompt(&feature)
            ))?;
            let Some(line) = line else {
                break Answer::Skip;
            };
            let token = line.trim();
            if token.is_empty() || token == "skip" {
                break Answer::Skip;
            }
            let a = Answer::from_token(token);
            if let Answer::Value(v) = &a {
                if schema.value_position(&feature, v).is_none() {
                    println!("  `{token}` is not a {feature} value");
                    continue;
                }
            }
            break a;
        };
        session.step(backend.as_ref(), reply).map_err(CliError::failure)?;
    }
}

fn serve_cmd(schema: Arc<FeatureSchema>, args: ServeArgs) -> CliResult {
    let backend = build_backend(schema.clone(), &args.backend)?;
    let cfg = controller_config(backend.family(), &args.control, args.policy, !args.no_iterative)?;
    let lexicon = Arc::new(load_lexicon(schema, args.control.aliases.as_deref())?);
    if let Some(d) = &args.static_dir {
        if !d.is_dir() {
            return Err(CliError::usage(format!("no such directory: {}", d.display())));
        }
    }
    let state =
        Arc::new(AppState::new(backend, lexicon, cfg).with_idle_timeout(Duration::from_secs(args.idle_minutes * 60)));
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::failure)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .map_err(|e| CliError::failure(format!("bind {}:{}: {e}", args.host, args.port)))?;
        eprintln!(
            "listening on http://{}",
            listener.local_addr().map_err(CliError::failure)?
        );
        serve(state, listener, args.static_dir).await.map_err(CliError::failure)
    })
}

fn synth(args: SynthArgs) -> CliResult {
    let corpus = match args.kind {
        WorldKind::Deterministic => deterministic_world(args.seed, args.train),
        WorldKind::Ambiguous => ambiguous_world(args.seed, args.train, args.eval, args.reliability),
    };
    std::fs::create_dir_all(&args.out_dir).map_err(CliError::failure)?;
    let out = |name: &str| args.out_dir.join(name);
    write_jsonl(out("instances.jsonl"), &corpus.train).map_err(CliError::failure)?;
    write_jsonl(out("objects.jsonl"), &corpus.objects).map_err(CliError::failure)?;
    write_jsonl(out("expressions.jsonl"), &corpus.expressions).map_err(CliError::failure)?;
    println!(
        "wrote {} training instances, {} objects and {} expressions to {}",
        corpus.train.len(),
        corpus.objects.len(),
        corpus.expressions.len(),
        args.out_dir.display()
    );
    Ok(())
}

pub fn run(cli: Cli) -> CliResult {
    if let Command::Synth(args) = cli.command {
        return synth(args);
    }
    let schema = load_schema(cli.schema.as_deref())?;
    match cli.command {
        Command::Train(a) => train(schema, a),
        Command::Eval(a) => eval(schema, a),
        Command::Ask(a) => ask(schema, a),
        Command::Serve(a) => serve_cmd(schema, a),
        Command::Synth(_) => unreachable!(),
    }
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
