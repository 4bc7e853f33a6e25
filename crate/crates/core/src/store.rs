//! Append-only run directories.
//!
//! ```text
//! <root>/<run_id>/
//!   manifest.json      run description, status and tallies (rewritten atomically)
//!   battery.json       the battery the run used
//!   generations.jsonl  one GenerationRecord per line
//!   scores.jsonl       one ScoredRecord per line
//! ```
//!
//! Each appended line is flushed and synced before `append` returns. A crash
//! can leave at most one torn final line, which readers ignore and writers
//! cut off when they reopen the run. Only one writer may hold a run at a time.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::battery::{Battery, PromptCategory};
use crate::generation::{BackendSpec, GenerationRecord, SamplingConfig};
use crate::normalize::{ScoredRecord, SentenceMode};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BATTERY_FILE: &str = "battery.json";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub generated: u64,
    pub failed: u64,
    pub skipped_empty: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTally {
    pub succeeded: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringState {
    pub classifier_id: String,
    pub sentence_mode: SentenceMode,
    pub status: RunStatus,
    pub scored: u64,
    pub skipped_empty: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: Uuid,
    pub battery_version: String,
    /// Secrets are never stored; HTTP backends keep only the env var name.
    pub backend: BackendSpec,
    pub sampling: SamplingConfig,
    pub n: u32,
    pub parallelism: usize,
    pub seed: u64,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<u64>,
    /// Set once the run has been scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_id: Option<String>,
    pub status: RunStatus,
    pub tallies: Tallies,
    pub per_prompt: BTreeMap<String, PromptTally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring: Option<ScoringState>,
    pub created_at: DateTime<Utc>,
}

impl RunManifest {
    /// Number of completions a finished run holds.
    pub fn expected_records(&self, battery_len: usize) -> u64 {
        battery_len as u64 * u64::from(self.n)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("run {0} already exists")]
    AlreadyExists(String),
    #[error("run {run_id}: {what} is complete; appends are rejected")]
    Closed { run_id: String, what: &'static str },
    #[error("{file} line {line}: {message}")]
    Corrupt {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A directory holding many runs.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &Uuid) -> PathBuf {
        self.root.join(run_id.to_string())
    }

    /// Creates the run directory with its manifest and battery snapshot.
    pub fn create(&self, manifest: &RunManifest, battery: &Battery) -> Result<Run, StoreError> {
        let dir = self.run_dir(&manifest.run_id);
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(StoreError::AlreadyExists(manifest.run_id.to_string()))
            }
            Err(e) => return Err(io_err(&dir)(e)),
        }
        let battery_path = dir.join(BATTERY_FILE);
        fs::write(&battery_path, battery.to_json()).map_err(io_err(&battery_path))?;
        for f in [GENERATIONS_FILE, SCORES_FILE] {
            let p = dir.join(f);
            File::create(&p).map_err(io_err(&p))?;
        }
        let run = Run { dir };
        run.write_manifest(manifest)?;
        Ok(run)
    }

    pub fn open(&self, run_id: &str) -> Result<Run, StoreError> {
        Run::open(self.root.join(run_id))
    }
}

/// Filter for [`Run::read_generations`] and [`Run::read_scores`].
#[derive(Debug, Clone, Default)]
pub struct RecordFilter {
    pub category: Option<PromptCategory>,
    pub model_id: Option<String>,
}

/// Handle on one run directory.
#[derive(Debug, Clone)]
pub struct Run {
    dir: PathBuf,
}

impl Run {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Run, StoreError> {
        let dir = dir.into();
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(StoreError::UnknownRun(dir.display().to_string()));
        }
        Ok(Run { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> Result<RunManifest, StoreError> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            file: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Replaces the manifest atomically (write to a temp file, then rename).
    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), StoreError> {
        let path = self.dir.join(MANIFEST_FILE);
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        body.push('\n');
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(body.as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn battery(&self) -> Result<Battery, StoreError> {
        let path = self.dir.join(BATTERY_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Battery::from_json(&text).map_err(|e| StoreError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Opens an append handle on `generations.jsonl`, cutting off a torn tail.
    pub fn generation_writer(&self) -> Result<JsonlWriter, StoreError> {
        let m = self.manifest()?;
        if m.status == RunStatus::Complete {
            return Err(StoreError::Closed {
                run_id: m.run_id.to_string(),
                what: "generation",
            });
        }
        JsonlWriter::open(self.dir.join(GENERATIONS_FILE))
    }

    /// Opens an append handle on `scores.jsonl`, cutting off a torn tail.
    pub fn score_writer(&self) -> Result<JsonlWriter, StoreError> {
        let m = self.manifest()?;
        if m.scoring.as_ref().is_some_and(|s| s.status == RunStatus::Complete) {
            return Err(StoreError::Closed {
                run_id: m.run_id.to_string(),
                what: "scoring",
            });
        }
        JsonlWriter::open(self.dir.join(SCORES_FILE))
    }

    /// Appends one generation record. Opens and closes the file each call; use
    /// [`Run::generation_writer`] for bulk appends.
    pub fn append_generation(&self, record: &GenerationRecord) -> Result<(), StoreError> {
        self.generation_writer()?.append(record)
    }

    pub fn append_score(&self, record: &ScoredRecord) -> Result<(), StoreError> {
        self.score_writer()?.append(record)
    }

    /// Generation records sorted by (prompt id, completion index).
    pub fn read_generations(&self, filter: &RecordFilter) -> Result<Vec<GenerationRecord>, StoreError> {
        let categories = self.category_lookup(filter)?;
        let mut recs: Vec<GenerationRecord> = read_jsonl(&self.dir.join(GENERATIONS_FILE))?;
        recs.retain(|r| {
            filter.model_id.as_ref().is_none_or(|m| &r.model_id == m)
                && filter
                    .category
                    .is_none_or(|c| categories.get(r.prompt_id.as_str()) == Some(&c))
        });
        recs.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(recs)
    }

    /// Scored records sorted by (model id, prompt id, completion index).
    pub fn read_scores(&self, filter: &RecordFilter) -> Result<Vec<ScoredRecord>, StoreError> {
        let mut recs: Vec<ScoredRecord> = read_jsonl(&self.dir.join(SCORES_FILE))?;
        recs.retain(|r| {
            filter.model_id.as_ref().is_none_or(|m| &r.model_id == m)
                && filter.category.is_none_or(|c| r.category == c)
        });
        recs.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(recs)
    }

    fn category_lookup(&self, filter: &RecordFilter) -> Result<BTreeMap<String, PromptCategory>, StoreError> {
        if filter.category.is_none() {
            return Ok(BTreeMap::new());
        }
        Ok(self
            .battery()?
            .prompts
            .into_iter()
            .map(|p| (p.id, p.category))
            .collect())
    }
}

/// Append handle for one JSONL file.
pub struct JsonlWriter {
    path: PathBuf,
    file: File,
}

impl JsonlWriter {
    pub fn open(path: PathBuf) -> Result<Self, StoreError> {
        repair_torn_tail(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(JsonlWriter { path, file })
    }

    /// Durable once this returns.
    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }
}

/// Truncates a final line that lacks its newline (a write cut short by a crash).
fn repair_torn_tail(path: &Path) -> Result<(), StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_err(path)(e)),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(keep as u64).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

/// Reads every complete line. A torn final line (no newline) is ignored; any
/// other unparsable line is an error naming its line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let read = reader.read_line(&mut buf).map_err(io_err(path))?;
        if read == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let line = buf.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() && complete {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if !complete => break,
            Err(e) => {
                return Err(StoreError::Corrupt {
                    file: path.display().to_string(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::Theme;
    use crate::generation::MockProfile;

    fn manifest() -> RunManifest {
        RunManifest {
            run_id: Uuid::new_v4(),
            battery_version: "v".into(),
            backend: BackendSpec::Mock {
                seed: 1,
                profile: MockProfile::default(),
            },
            sampling: SamplingConfig::default(),
            n: 1,
            parallelism: 1,
            seed: 1,
            model_id: "mock".into(),
            model_family: None,
            parameter_count: None,
            classifier_id: None,
            status: RunStatus::Incomplete,
            tallies: Tallies::default(),
            per_prompt: BTreeMap::new(),
            scoring: None,
            created_at: Utc::now(),
        }
    }

    fn rec(prompt: &str, i: u32, text: &str) -> GenerationRecord {
        GenerationRecord::from_completion(prompt, "mock", "mock", i, text.into())
    }

    #[test]
    fn append_then_read_back_is_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::new(tmp.path());
        let m = manifest();
        let run = store.create(&m, &Battery::builtin()).unwrap();
        let r = rec("std.about_yourself.1", 0, "kind and calm");
        run.append_generation(&r).unwrap();
        let back = run.read_generations(&RecordFilter::default()).unwrap();
        assert_eq!(back, vec![r.clone()]);
        let line = fs::read_to_string(run.dir().join(GENERATIONS_FILE)).unwrap();
        assert_eq!(line, format!("{}\n", serde_json::to_string(&r).unwrap()));
        assert_eq!(run.manifest().unwrap(), m);
    }

    #[test]
    fn appends_after_completion_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::new(tmp.path());
        let mut m = manifest();
        let run = store.create(&m, &Battery::builtin()).unwrap();
        m.status = RunStatus::Complete;
        run.write_manifest(&m).unwrap();
        let err = run.append_generation(&rec("std.about_yourself.1", 0, "x")).unwrap_err();
        assert!(matches!(err, StoreError::Closed { .. }));
    }

    #[test]
    fn reads_are_ordered_and_filtered() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::new(tmp.path());
        let run = store.create(&manifest(), &Battery::builtin()).unwrap();
        let mut w = run.generation_writer().unwrap();
        for (p, i) in [("std.pressure.2", 1), ("act.openness.1", 0), ("std.pressure.2", 0)] {
            w.append(&rec(p, i, "word")).unwrap();
        }
        let all = run.read_generations(&RecordFilter::default()).unwrap();
        let keys: Vec<_> = all.iter().map(|r| (r.prompt_id.clone(), r.completion_index)).collect();
        assert_eq!(
            keys,
            [("act.openness.1".to_string(), 0), ("std.pressure.2".into(), 0), ("std.pressure.2".into(), 1)]
        );
        let pressure = RecordFilter {
            category: Some(PromptCategory::Standard { theme: Theme::Pressure }),
            model_id: None,
        };
        assert_eq!(run.read_generations(&pressure).unwrap().len(), 2);
        let none = RecordFilter {
            category: None,
            model_id: Some("other".into()),
        };
        assert!(run.read_generations(&none).unwrap().is_empty());
    }

    #[test]
    fn empty_run_reads_empty() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunStore::new(tmp.path()).create(&manifest(), &Battery::builtin()).unwrap();
        assert!(run.read_generations(&RecordFilter::default()).unwrap().is_empty());
        assert!(run.read_scores(&RecordFilter::default()).unwrap().is_empty());
    }

    #[test]
    fn corrupt_line_reports_line_number() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunStore::new(tmp.path()).create(&manifest(), &Battery::builtin()).unwrap();
        run.append_generation(&rec("std.pressure.1", 0, "a")).unwrap();
        let path = run.dir().join(GENERATIONS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{not json}\n").unwrap();
        match run.read_generations(&RecordFilter::default()).unwrap_err() {
            StoreError::Corrupt { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn torn_tail_is_ignored_then_repaired() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunStore::new(tmp.path()).create(&manifest(), &Battery::builtin()).unwrap();
        run.append_generation(&rec("std.pressure.1", 0, "a")).unwrap();
        let path = run.dir().join(GENERATIONS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"prompt_id\":\"std.pre").unwrap();
        assert_eq!(run.read_generations(&RecordFilter::default()).unwrap().len(), 1);
        run.append_generation(&rec("std.pressure.1", 1, "b")).unwrap();
        assert_eq!(run.read_generations(&RecordFilter::default()).unwrap().len(), 2);
    }

    #[test]
    fn unknown_run_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(RunStore::new(tmp.path()).open("nope"), Err(StoreError::UnknownRun(_))));
    }

    #[test]
    fn duplicate_create_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::new(tmp.path());
        let m = manifest();
        store.create(&m, &Battery::builtin()).unwrap();
        assert!(matches!(store.create(&m, &Battery::builtin()), Err(StoreError::AlreadyExists(_))));
    }
}
