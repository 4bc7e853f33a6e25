//! Elicit, score and load runs end to end.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::analysis::{ModelInfo, SkippedRecord};
use crate::battery::{Battery, BatteryError};
use crate::classifier::{ClassifierError, TraitScorer};
use crate::generation::{
    fan_out, BackendSpec, CompletionBackend, CompletionError, GenerationError, GenerationRecord, Job,
    SamplingConfig,
};
use crate::normalize::{scored_record, sentence_for, BaselineCache, NormalizationError, ScoredRecord, SentenceMode};
use crate::store::{PromptTally, RecordFilter, Run, RunManifest, RunStatus, RunStore, ScoringState, StoreError, Tallies};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Normalization(#[from] NormalizationError),
    #[error("classifier unreachable after {scored} scored records: {source}")]
    ClassifierUnreachable {
        scored: u64,
        #[source]
        source: ClassifierError,
    },
}

impl PipelineError {
    /// Errors caused by bad input rather than by something failing at run time.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Battery(_)
                | PipelineError::Generation(GenerationError::Config(_))
                | PipelineError::Store(StoreError::UnknownRun(_))
        )
    }
}

fn default_n() -> u32 {
    1
}

fn default_parallelism() -> usize {
    4
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything `elicit` needs; loadable from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: BackendSpec,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default = "default_n")]
    pub n: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Built-in battery when absent.
    #[serde(default)]
    pub battery_path: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the backend's model id on every record.
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub model_family: Option<String>,
    #[serde(default)]
    pub parameter_count: Option<u64>,
}

impl RunConfig {
    pub fn mock(seed: u64, n: u32, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            backend: BackendSpec::Mock {
                seed,
                profile: Default::default(),
            },
            sampling: SamplingConfig::default(),
            n,
            parallelism: default_parallelism(),
            battery_path: None,
            out_dir: out_dir.into(),
            seed,
            model_id: None,
            model_family: None,
            parameter_count: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n == 0 {
            return Err(PipelineError::Config("n must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(PipelineError::Config("parallelism must be at least 1".into()));
        }
        if self.model_id.as_deref().is_some_and(|m| m.trim().is_empty()) {
            return Err(PipelineError::Config("model_id must not be empty".into()));
        }
        self.sampling.validate()?;
        self.backend.validate()?;
        Ok(())
    }
}

/// Result of a finished or interrupted `elicit`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: Run,
    pub manifest: RunManifest,
}

struct Relabeled<'a> {
    inner: &'a dyn CompletionBackend,
    model_id: &'a str,
}

impl CompletionBackend for Relabeled<'_> {
    fn model_id(&self) -> &str {
        self.model_id
    }

    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    fn complete(&self, prompt: &crate::battery::PromptSpec, i: u32, config: &SamplingConfig) -> Result<String, CompletionError> {
        self.inner.complete(prompt, i, config)
    }
}

/// Creates a run directory and generates `n` completions for every prompt.
///
/// Returns an error after recording partial progress if the backend rejects
/// the credentials or `cancel` is raised; the run can then be resumed.
pub fn run_battery(config: &RunConfig, cancel: Option<&AtomicBool>) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let backend = config.backend.build()?;
    run_battery_with(config, backend.as_ref(), cancel)
}

/// [`run_battery`] with an already-built backend; `config.backend` is only recorded.
pub fn run_battery_with(
    config: &RunConfig,
    backend: &dyn CompletionBackend,
    cancel: Option<&AtomicBool>,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let battery = Battery::load(config.battery_path.as_deref())?;
    battery.validate()?;
    let manifest = RunManifest {
        run_id: Uuid::new_v4(),
        battery_version: battery.version.clone(),
        backend: config.backend.clone(),
        sampling: config.sampling.clone(),
        n: config.n,
        parallelism: config.parallelism,
        seed: config.seed,
        model_id: config.model_id.clone().unwrap_or_else(|| backend.model_id().to_string()),
        model_family: config.model_family.clone(),
        parameter_count: config.parameter_count,
        classifier_id: None,
        status: RunStatus::Incomplete,
        tallies: Tallies::default(),
        per_prompt: BTreeMap::new(),
        scoring: None,
        created_at: Utc::now(),
    };
    let run = RunStore::new(&config.out_dir).create(&manifest, &battery)?;
    execute(run, manifest, &battery, backend, cancel)
}

/// Continues an interrupted run, generating only the missing completions.
///
/// Completions already on disk (including failed ones) are kept as they are.
pub fn resume(run_dir: &Path, parallelism: Option<usize>, cancel: Option<&AtomicBool>) -> Result<RunOutcome, PipelineError> {
    let manifest = Run::open(run_dir)?.manifest()?;
    let backend = manifest.backend.build()?;
    resume_with(run_dir, backend.as_ref(), parallelism, cancel)
}

/// [`resume`] with an already-built backend.
pub fn resume_with(
    run_dir: &Path,
    backend: &dyn CompletionBackend,
    parallelism: Option<usize>,
    cancel: Option<&AtomicBool>,
) -> Result<RunOutcome, PipelineError> {
    let run = Run::open(run_dir)?;
    let mut manifest = run.manifest()?;
    if manifest.status == RunStatus::Complete {
        return Ok(RunOutcome { run, manifest });
    }
    if let Some(p) = parallelism {
        if p == 0 {
            return Err(PipelineError::Config("parallelism must be at least 1".into()));
        }
        manifest.parallelism = p;
    }
    let battery = run.battery()?;
    execute(run, manifest, &battery, backend, cancel)
}

fn execute(
    run: Run,
    mut manifest: RunManifest,
    battery: &Battery,
    backend: &dyn CompletionBackend,
    cancel: Option<&AtomicBool>,
) -> Result<RunOutcome, PipelineError> {
    let backend = Relabeled {
        inner: backend,
        model_id: &manifest.model_id.clone(),
    };
    let done: BTreeSet<(String, u32)> = run
        .read_generations(&RecordFilter::default())?
        .into_iter()
        .map(|r| (r.prompt_id, r.completion_index))
        .collect();
    let jobs: Vec<Job> = battery
        .prompts
        .iter()
        .flat_map(|p| (0..manifest.n).map(move |i| Job { prompt: p, completion_index: i }))
        .filter(|j| !done.contains(&(j.prompt.id.clone(), j.completion_index)))
        .collect();

    let result = if jobs.is_empty() {
        Ok(())
    } else {
        let mut writer = run.generation_writer()?;
        fan_out(&backend, &jobs, &manifest.sampling, manifest.parallelism, cancel, |rec| {
            writer.append(&rec).map_err(|e| GenerationError::Sink(e.to_string()))
        })
    };

    let records = run.read_generations(&RecordFilter::default())?;
    tally(&mut manifest, &records);
    let finished = result.is_ok() && records.len() as u64 == manifest.expected_records(battery.len());
    manifest.status = if finished && manifest.tallies.failed == 0 {
        RunStatus::Complete
    } else {
        RunStatus::Incomplete
    };
    run.write_manifest(&manifest)?;
    result?;
    Ok(RunOutcome { run, manifest })
}

fn tally(manifest: &mut RunManifest, records: &[GenerationRecord]) {
    let mut t = Tallies::default();
    let mut per_prompt: BTreeMap<String, PromptTally> = BTreeMap::new();
    for r in records {
        let p = per_prompt.entry(r.prompt_id.clone()).or_default();
        if r.is_error() {
            t.failed += 1;
            p.failed += 1;
        } else {
            t.generated += 1;
            p.succeeded += 1;
            if r.sanitized_text.trim().is_empty() {
                t.skipped_empty += 1;
            }
        }
    }
    manifest.tallies = t;
    manifest.per_prompt = per_prompt;
}

const SCORE_CHUNK: usize = 256;

/// Scores every generation of `run` that has not been scored yet.
///
/// Stem baselines come from `cache`. If the classifier becomes unreachable
/// the scores written so far are kept and the scoring state stays
/// incomplete; calling again picks up where it stopped.
pub fn score_run(
    run: &Run,
    scorer: &dyn TraitScorer,
    mode: SentenceMode,
    cache: &BaselineCache,
) -> Result<ScoringState, PipelineError> {
    let mut manifest = run.manifest()?;
    let classifier_id = scorer.classifier_id().to_string();
    if let Some(state) = &manifest.scoring {
        if state.classifier_id != classifier_id {
            return Err(PipelineError::Config(format!(
                "run {} was scored with {}; refusing to mix in {}",
                manifest.run_id, state.classifier_id, classifier_id
            )));
        }
        if state.sentence_mode != mode {
            return Err(PipelineError::Config(format!(
                "run {} was scored in {:?} mode",
                manifest.run_id, state.sentence_mode
            )));
        }
        if state.status == RunStatus::Complete {
            return Ok(state.clone());
        }
    }
    let battery = run.battery()?;
    let generations = run.read_generations(&RecordFilter::default())?;
    let already: BTreeSet<(String, u32)> = run
        .read_scores(&RecordFilter::default())?
        .into_iter()
        .map(|r| (r.prompt_id, r.completion_index))
        .collect();

    let mut state = ScoringState {
        classifier_id: classifier_id.clone(),
        sentence_mode: mode,
        status: RunStatus::Incomplete,
        scored: already.len() as u64,
        skipped_empty: 0,
    };
    let mut writer = run.score_writer()?;
    let mut pending: Vec<(&GenerationRecord, &crate::battery::PromptSpec, String)> = Vec::new();
    let mut failure = None;

    let mut flush = |pending: &mut Vec<(&GenerationRecord, &crate::battery::PromptSpec, String)>,
                     state: &mut ScoringState|
     -> Result<(), PipelineError> {
        let texts: Vec<&str> = pending.iter().map(|(_, _, s)| s.as_str()).collect();
        let results = scorer.score_batch(&texts);
        for ((rec, prompt, _), res) in pending.drain(..).zip(results) {
            match res {
                Ok(scores) => {
                    let baseline = cache.baseline(prompt, scorer)?;
                    writer.append(&scored_record(rec, prompt, &baseline, scores))?;
                    state.scored += 1;
                }
                Err(ClassifierError::Unscorable) => state.skipped_empty += 1,
                Err(source) => {
                    return Err(PipelineError::ClassifierUnreachable {
                        scored: state.scored,
                        source,
                    })
                }
            }
        }
        Ok(())
    };

    for rec in &generations {
        if already.contains(&(rec.prompt_id.clone(), rec.completion_index)) {
            continue;
        }
        let Some(prompt) = battery.get(&rec.prompt_id) else {
            return Err(PipelineError::Store(StoreError::Invalid(format!(
                "generation for unknown prompt {}",
                rec.prompt_id
            ))));
        };
        if let Err(e) = cache.baseline(prompt, scorer) {
            failure = Some(e.into());
            break;
        }
        match sentence_for(rec, prompt, mode) {
            None => state.skipped_empty += 1,
            Some(sentence) => pending.push((rec, prompt, sentence)),
        }
        if pending.len() >= SCORE_CHUNK {
            if let Err(e) = flush(&mut pending, &mut state) {
                failure = Some(e);
                break;
            }
        }
    }
    if failure.is_none() && !pending.is_empty() {
        failure = flush(&mut pending, &mut state).err();
    }

    if failure.is_none() {
        state.status = RunStatus::Complete;
        manifest.classifier_id = Some(classifier_id);
    }
    manifest.scoring = Some(state.clone());
    run.write_manifest(&manifest)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(state),
    }
}

/// Scored records, skipped completions and model metadata across runs.
#[derive(Debug, Clone, Default)]
pub struct AnalysisInput {
    pub records: Vec<ScoredRecord>,
    pub skipped: Vec<SkippedRecord>,
    pub models: Vec<ModelInfo>,
}

/// Loads every scored run under the given directories.
pub fn load_runs(runs: &[Run]) -> Result<AnalysisInput, PipelineError> {
    let mut input = AnalysisInput::default();
    let mut models: BTreeMap<String, ModelInfo> = BTreeMap::new();
    for run in runs {
        let manifest = run.manifest()?;
        if manifest.scoring.is_none() {
            return Err(PipelineError::Config(format!(
                "run {} has not been scored",
                manifest.run_id
            )));
        }
        let battery = run.battery()?;
        let scores = run.read_scores(&RecordFilter::default())?;
        let scored: BTreeSet<(&str, u32)> = scores
            .iter()
            .map(|r| (r.prompt_id.as_str(), r.completion_index))
            .collect();
        for g in run.read_generations(&RecordFilter::default())? {
            if scored.contains(&(g.prompt_id.as_str(), g.completion_index)) {
                continue;
            }
            if let Some(p) = battery.get(&g.prompt_id) {
                input.skipped.push(SkippedRecord {
                    model_id: g.model_id,
                    prompt_id: g.prompt_id,
                    category: p.category,
                    completion_index: g.completion_index,
                });
            }
        }
        input.records.extend(scores);
        let info = models.entry(manifest.model_id.clone()).or_insert(ModelInfo {
            model_id: manifest.model_id.clone(),
            family: None,
            parameter_count: None,
        });
        info.family = info.family.take().or(manifest.model_family);
        info.parameter_count = info.parameter_count.or(manifest.parameter_count);
    }
    input.models = models.into_values().collect();
    Ok(input)
}

/// Every run directory directly under `root`, in name order.
pub fn discover_runs(root: &Path) -> Result<Vec<Run>, PipelineError> {
    let entries = std::fs::read_dir(root).map_err(|source| StoreError::Io {
        path: root.display().to_string(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(crate::store::MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.into_iter().map(|d| Ok(Run::open(d)?)).collect()
}
