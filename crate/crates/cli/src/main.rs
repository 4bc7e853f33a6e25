use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use persona_probe::analysis::{
    self, activation_csv, activation_deltas, activation_markdown, compare_pairs, pairs_csv, pairs_markdown,
    plot_data, rank, ranking_markdown, summarize, summary_csv, summary_markdown, GroupBy, ModelPair, QuestionSet,
    RenderOptions,
};
use persona_probe::battery::Battery;
use persona_probe::classifier::{Classifier, NativeModel, RemoteClassifier, TraitScorer};
use persona_probe::generation::{BackendSpec, HttpBackendSpec};
use persona_probe::lexicon::SHIPPED_CORPUS_CSV;
use persona_probe::normalize::{BaselineCache, SentenceMode};
use persona_probe::pipeline::{self, discover_runs, load_runs, AnalysisInput, PipelineError, RunConfig};
use persona_probe::store::Run;
use persona_probe::training::{ingest_corpus, read_corpus, train, TrainConfig};

#[derive(Parser)]
#[command(name = "persona-probe", version, about = "Elicit, score and compare personality traits of language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate completions for every battery prompt into a new run directory
    Elicit(ElicitArgs),
    /// Train the native trait classifier on a labeled CSV corpus
    Train(TrainArgs),
    /// Score the generations of one or more runs
    Score(ScoreArgs),
    /// Write summary statistics and activation deltas as JSON
    Analyze(AnalyzeArgs),
    /// Render tables or plot data from scored runs
    Report(ReportArgs),
    /// Check a battery file (or the built-in battery)
    ValidateBattery {
        #[arg(long)]
        battery: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Args)]
struct ElicitArgs {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    battery: Option<PathBuf>,
    /// Directory that holds run directories
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    parameter_count: Option<u64>,
    /// Mock backend: shift of the target trait on trait-activating prompts
    #[arg(long)]
    effect: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_k: Option<u32>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    /// HTTP backend: completion endpoint URL
    #[arg(long)]
    endpoint: Option<String>,
    /// HTTP backend: model name sent to the endpoint
    #[arg(long)]
    model: Option<String>,
    /// HTTP backend: environment variable holding the bearer token
    #[arg(long)]
    auth_env: Option<String>,
    /// HTTP backend: wrap the stem in a chat message
    #[arg(long)]
    chat: bool,
    /// Continue an incomplete run (id under --out, or a run directory)
    #[arg(long)]
    resume: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// CSV with a text column and cEXT, cNEU, cAGR, cCON, cOPN labels; defaults to the shipped synthetic corpus
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 1e-3)]
    l2: f64,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Also write the held-out evaluation report here
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RunSelection {
    /// Run directory (repeatable)
    #[arg(long = "run")]
    runs: Vec<PathBuf>,
    /// Use every run directory under this root
    #[arg(long)]
    runs_dir: Option<PathBuf>,
}

impl RunSelection {
    fn resolve(&self) -> Result<Vec<Run>, Failure> {
        let mut out = Vec::new();
        if let Some(root) = &self.runs_dir {
            out.extend(discover_runs(root).map_err(Failure::from_pipeline)?);
        }
        for dir in &self.runs {
            out.push(Run::open(dir).map_err(|e| Failure::Config(e.into()))?);
        }
        if out.is_empty() {
            return Err(Failure::Config(anyhow!("no runs selected; pass --run or --runs-dir")));
        }
        Ok(out)
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    runs: RunSelection,
    /// Native model artifact (JSON)
    #[arg(long, conflicts_with = "service")]
    model: Option<PathBuf>,
    /// Base URL of a scoring service
    #[arg(long)]
    service: Option<String>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
    /// Score the completion alone instead of stem + completion
    #[arg(long)]
    completion_only: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    runs: RunSelection,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Summary,
    Activation,
    Ranking,
    Pairs,
    Plotdata,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Standard,
    TraitActivating,
    Both,
}

impl From<SetArg> for QuestionSet {
    fn from(s: SetArg) -> Self {
        match s {
            SetArg::Standard => QuestionSet::Standard,
            SetArg::TraitActivating => QuestionSet::TraitActivating,
            SetArg::Both => QuestionSet::Both,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    runs: RunSelection,
    #[arg(long, value_enum)]
    kind: ReportKind,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    #[arg(long, value_enum, default_value = "both")]
    question_set: SetArg,
    /// base:variant model pair (repeatable)
    #[arg(long = "pair")]
    pairs: Vec<String>,
    /// Comma-separated row order
    #[arg(long, value_delimiter = ',')]
    model_order: Vec<String>,
    /// Show means above 100% as 100.00+%
    #[arg(long)]
    clamp_display: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn from_pipeline(e: PipelineError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
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

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Elicit(a) => elicit(a),
        Command::Train(a) => train_cmd(a),
        Command::Score(a) => score(a),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
        Command::ValidateBattery { battery } => validate_battery(battery.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain, skipping causes already quoted by an outer message.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
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

fn build_config(a: &ElicitArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .map_err(config_err)?;
            serde_json::from_str::<RunConfig>(&text)
                .with_context(|| format!("invalid config {}", path.display()))
                .map_err(config_err)?
        }
        None => match a.backend {
            Some(_) => RunConfig::mock(0, 1, "runs"),
            None => return Err(config_err(anyhow!("pass --config or --backend"))),
        },
    };
    let seed = a.seed.unwrap_or(cfg.seed);
    cfg.seed = seed;
    match a.backend {
        Some(BackendKind::Mock) => {
            let profile = match &cfg.backend {
                BackendSpec::Mock { profile, .. } => profile.clone(),
                _ => Default::default(),
            };
            cfg.backend = BackendSpec::Mock { seed, profile };
        }
        Some(BackendKind::Http) if !matches!(cfg.backend, BackendSpec::HttpCompletion(_)) => {
            let endpoint = a.endpoint.as_deref().ok_or_else(|| config_err(anyhow!("--backend http needs --endpoint")))?;
            let model = a.model.as_deref().ok_or_else(|| config_err(anyhow!("--backend http needs --model")))?;
            cfg.backend = BackendSpec::HttpCompletion(HttpBackendSpec::new(endpoint, model));
        }
        _ => {}
    }
    match &mut cfg.backend {
        BackendSpec::Mock { seed: s, profile } => {
            *s = seed;
            if let Some(e) = a.effect {
                profile.activation_effect = e;
            }
        }
        BackendSpec::HttpCompletion(spec) => {
            if let Some(e) = &a.endpoint {
                spec.endpoint = e.clone();
            }
            if let Some(m) = &a.model {
                spec.model = m.clone();
            }
            if a.auth_env.is_some() {
                spec.auth_env = a.auth_env.clone();
            }
            spec.chat |= a.chat;
        }
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(p) = a.parallelism {
        cfg.parallelism = p;
    }
    if let Some(b) = &a.battery {
        cfg.battery_path = Some(b.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if a.model_id.is_some() {
        cfg.model_id = a.model_id.clone();
    }
    if a.family.is_some() {
        cfg.model_family = a.family.clone();
    }
    if a.parameter_count.is_some() {
        cfg.parameter_count = a.parameter_count;
    }
    if let Some(t) = a.temperature {
        cfg.sampling.temperature = t;
    }
    if let Some(k) = a.top_k {
        cfg.sampling.top_k = k;
    }
    if let Some(p) = a.top_p {
        cfg.sampling.top_p = p;
    }
    if let Some(m) = a.max_tokens {
        cfg.sampling.max_tokens = m;
    }
    Ok(cfg)
}

fn elicit(a: ElicitArgs) -> Result<(), Failure> {
    let outcome = if let Some(id) = &a.resume {
        let root = a.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
        let dir = if Path::new(id).join("manifest.json").is_file() {
            PathBuf::from(id)
        } else {
            root.join(id)
        };
        pipeline::resume(&dir, a.parallelism, None)
    } else {
        let cfg = build_config(&a)?;
        pipeline::run_battery(&cfg, None)
    }
    .map_err(Failure::from_pipeline)?;
    let m = &outcome.manifest;
    println!("run {} ({:?})", m.run_id, m.status);
    println!("dir {}", outcome.run.dir().display());
    println!(
        "generated {} failed {} empty {}",
        m.tallies.generated, m.tallies.failed, m.tallies.skipped_empty
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let corpus = match &a.corpus {
        Some(p) => ingest_corpus(p).map_err(config_err)?,
        None => read_corpus(SHIPPED_CORPUS_CSV.as_bytes()).map_err(config_err)?,
    };
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        seed: a.seed,
        train_fraction: a.train_fraction,
        l2: a.l2,
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        iterations: a.iterations.unwrap_or(defaults.iterations),
    };
    let (model, report) = train(&corpus, &cfg).map_err(config_err)?;
    model.save(&a.out).map_err(|e| Failure::Runtime(e.into()))?;
    println!("classifier {}", model.classifier_id());
    for e in &report.per_trait {
        println!("{:<18} f1 {:.4} precision {:.4} recall {:.4} support {}", e.head.as_str(), e.f1, e.precision, e.recall, e.support);
    }
    if let Some(path) = &a.report {
        let body = serde_json::to_string_pretty(&report).context("serialize report")? + "\n";
        fs::write(path, body).with_context(|| format!("write {}", path.display()))?;
    }
    Ok(())
}

fn score(a: ScoreArgs) -> Result<(), Failure> {
    let runs = a.runs.resolve()?;
    let scorer = match (&a.model, &a.service) {
        (Some(path), None) => Classifier::Native(NativeModel::load(path).map_err(config_err)?),
        (None, Some(url)) => Classifier::Remote(
            RemoteClassifier::connect(url, Duration::from_secs_f64(a.timeout_secs), a.batch_size)
                .map_err(|e| Failure::Runtime(e.into()))?,
        ),
        _ => return Err(config_err(anyhow!("pass exactly one of --model or --service"))),
    };
    let mode = if a.completion_only {
        SentenceMode::CompletionOnly
    } else {
        SentenceMode::StemAndCompletion
    };
    let cache = BaselineCache::new();
    for run in &runs {
        let state = pipeline::score_run(run, &scorer, mode, &cache)
            .map_err(Failure::from_pipeline)
            .map_err(|f| match f {
                Failure::Runtime(e) => Failure::Runtime(e.context(format!("scoring {}", run.dir().display()))),
                other => other,
            })?;
        println!(
            "{} scored {} skipped {}",
            run.dir().display(),
            state.scored,
            state.skipped_empty
        );
    }
    Ok(())
}

fn load(sel: &RunSelection) -> Result<AnalysisInput, Failure> {
    let runs = sel.resolve()?;
    let input = load_runs(&runs).map_err(Failure::from_pipeline)?;
    analysis::check_single_classifier(&input.records).map_err(|e| Failure::Runtime(e.into()))?;
    Ok(input)
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, body)
            .with_context(|| format!("write {}", p.display()))
            .map_err(Failure::Runtime),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let input = load(&a.runs)?;
    let rt = |e: analysis::AnalysisError| Failure::Runtime(e.into());
    let mut sets = serde_json::Map::new();
    for set in [QuestionSet::Both, QuestionSet::Standard, QuestionSet::TraitActivating] {
        let group = GroupBy {
            question_set: set,
            by_category: false,
        };
        let s = summarize(&input.records, &input.skipped, group).map_err(rt)?;
        sets.insert(set.as_str().into(), serde_json::to_value(s).context("serialize")?);
    }
    let by_category = summarize(
        &input.records,
        &input.skipped,
        GroupBy {
            question_set: QuestionSet::Both,
            by_category: true,
        },
    )
    .map_err(rt)?;
    let doc = serde_json::json!({
        "classifier_id": analysis::check_single_classifier(&input.records).map_err(rt)?,
        "std": "population",
        "summaries": sets,
        "by_category": by_category,
        "activation_deltas": activation_deltas(&input.records).map_err(rt)?,
        "models": input.models,
    });
    let body = serde_json::to_string_pretty(&doc).context("serialize")? + "\n";
    emit(a.out.as_deref(), &body)
}

fn parse_pair(s: &str) -> Result<ModelPair, Failure> {
    let (base, variant) = s
        .split_once(':')
        .ok_or_else(|| config_err(anyhow!("--pair {s:?} must look like base:variant")))?;
    Ok(ModelPair {
        base: base.to_string(),
        variant: variant.to_string(),
    })
}

macro_rules! json {
    ($v:expr) => {
        serde_json::to_string_pretty(&$v).map_err(|e| Failure::Runtime(e.into()))? + "\n"
    };
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let input = load(&a.runs)?;
    let rt = |e: analysis::AnalysisError| Failure::Runtime(e.into());
    let opts = RenderOptions {
        model_order: a.model_order.clone(),
        clamp_display: a.clamp_display,
        ..Default::default()
    };
    let group = GroupBy {
        question_set: a.question_set.into(),
        by_category: false,
    };
    let body = match a.kind {
        ReportKind::Summary => {
            let s = summarize(&input.records, &input.skipped, group).map_err(rt)?;
            match a.format {
                Format::Markdown => {
                    let ranking = rank(&s).ok();
                    format!("Means of baseline-adjusted scores; std is population std.\n\n{}", summary_markdown(&s, ranking.as_ref(), &opts))
                }
                Format::Csv => summary_csv(&s),
                Format::Json => json!(s),
            }
        }
        ReportKind::Ranking => {
            let s = summarize(&input.records, &input.skipped, group).map_err(rt)?;
            let table = rank(&s).map_err(rt)?;
            match a.format {
                Format::Markdown | Format::Csv => ranking_markdown(&table),
                Format::Json => json!(table),
            }
        }
        ReportKind::Activation => {
            let d = activation_deltas(&input.records).map_err(rt)?;
            match a.format {
                Format::Markdown => activation_markdown(&d, &opts),
                Format::Csv => activation_csv(&d),
                Format::Json => json!(d),
            }
        }
        ReportKind::Pairs => {
            if a.pairs.is_empty() {
                return Err(config_err(anyhow!("--kind pairs needs at least one --pair base:variant")));
            }
            let pairs = a.pairs.iter().map(|p| parse_pair(p)).collect::<Result<Vec<_>, _>>()?;
            let s = summarize(&input.records, &input.skipped, group).map_err(rt)?;
            let d = compare_pairs(&s, &pairs).map_err(|e| match e {
                analysis::AnalysisError::UnknownModel(_) => config_err(e),
                other => rt(other),
            })?;
            match a.format {
                Format::Markdown => pairs_markdown(&d, &opts),
                Format::Csv => pairs_csv(&d),
                Format::Json => json!(d),
            }
        }
        ReportKind::Plotdata => json!(plot_data(&input.records, &input.models).map_err(rt)?),
    };
    emit(a.out.as_deref(), &body)
}

fn validate_battery(path: Option<&Path>) -> Result<(), Failure> {
    let battery = Battery::load(path).map_err(config_err)?;
    battery.validate().map_err(config_err)?;
    println!("battery {} ok: {} prompts", battery.version, battery.len());
    Ok(())
}
