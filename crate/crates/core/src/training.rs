//! Training and evaluation of the native per-trait classifiers.
//!
//! Corpora use the myPersonality label columns (`cEXT`, `cNEU`, `cAGR`,
//! `cCON`, `cOPN`). Each head is a logistic regression over raw-count TF-IDF
//! features fitted by full-batch gradient descent with L2 regularization and
//! a fixed iteration count, so training is bit-reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    logistic, ClassifierError, NativeModel, PerTrait, TokenizerSpec, TraitScorer, TraitWeights,
};
use crate::traits::Trait;

/// Minimum rows of each class per trait in the training split.
pub const MIN_CLASS_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRow {
    pub text: String,
    /// Labels in [`Trait::HEADS`] order.
    pub labels: [bool; 5],
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledCorpus {
    pub rows: Vec<LabeledRow>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus is missing column {0}")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("trait {head}: training split has {positives} positive and {negatives} negative rows, need at least {MIN_CLASS_ROWS} of each")]
    DegenerateSplit {
        head: Trait,
        positives: usize,
        negatives: usize,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ClassifierError),
}

/// Accepts `0`, `1`, `y`, `n` in any case.
pub fn parse_label(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "y" => Some(true),
        "0" | "n" => Some(false),
        _ => None,
    }
}

pub fn ingest_corpus(path: &Path) -> Result<LabeledCorpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(file)
}

pub fn read_corpus<R: Read>(reader: R) -> Result<LabeledCorpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let text_col = column("text")?;
    let label_cols: Vec<(Trait, &str, usize)> = Trait::HEADS
        .iter()
        .map(|&t| {
            let name = t.corpus_label().expect("heads have labels");
            column(name).map(|i| (t, name, i))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let text = record.get(text_col).unwrap_or("").trim().to_string();
        if text.is_empty() {
            return Err(CorpusError::Row {
                row,
                message: "empty text".into(),
            });
        }
        let mut labels = [false; 5];
        for (slot, (_, name, col)) in labels.iter_mut().zip(&label_cols) {
            let raw = record.get(*col).unwrap_or("");
            *slot = parse_label(raw).ok_or_else(|| CorpusError::Row {
                row,
                message: format!("column {name}: label {raw:?} is not one of 0, 1, y, n"),
            })?;
        }
        rows.push(LabeledRow { text, labels });
    }
    Ok(LabeledCorpus { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub train_fraction: f64,
    /// L2 penalty on coefficients (not the intercept).
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            train_fraction: 0.8,
            l2: 1e-3,
            learning_rate: 0.5,
            iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub train_rows: usize,
    pub eval_rows: usize,
}

/// Confusion counts and derived metrics for one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitEval {
    #[serde(rename = "trait")]
    pub head: Trait,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Positive rows in the evaluated set.
    pub support: usize,
    /// Share of positive rows; exposes class imbalance.
    pub positive_rate: f64,
}

impl TraitEval {
    pub fn from_counts(head: Trait, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let total = tp + fp + fn_ + tn;
        TraitEval {
            head,
            tp,
            fp,
            fn_,
            tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: f1_score(tp, fp, fn_),
            support: tp + fn_,
            positive_rate: ratio(tp + fn_, total),
        }
    }
}

/// `2TP / (2TP + FP + FN)`, zero when there are no positives at all.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        (2 * tp) as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Option<SplitSpec>,
    pub threshold: f64,
    pub per_trait: Vec<TraitEval>,
    /// Rows excluded because their text could not be scored.
    pub unscorable: usize,
}

impl EvalReport {
    pub fn get(&self, head: Trait) -> Option<&TraitEval> {
        self.per_trait.iter().find(|e| e.head == head)
    }
}

/// Scores every row and thresholds each head at `threshold`.
pub fn evaluate<S: TraitScorer + ?Sized>(
    model: &S,
    rows: &[LabeledRow],
    threshold: f64,
) -> EvalReport {
    let mut counts = [[0usize; 4]; 5];
    let mut unscorable = 0;
    for row in rows {
        let Ok(scores) = model.score(&row.text) else {
            unscorable += 1;
            continue;
        };
        for ((c, p), &label) in counts.iter_mut().zip(scores.heads()).zip(&row.labels) {
            let predicted = p >= threshold;
            let slot = match (predicted, label) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            c[slot] += 1;
        }
    }
    EvalReport {
        split: None,
        threshold,
        per_trait: Trait::HEADS
            .iter()
            .zip(counts)
            .map(|(&t, [tp, fp, fn_, tn])| TraitEval::from_counts(t, tp, fp, fn_, tn))
            .collect(),
        unscorable,
    }
}

/// Deterministic shuffle by `seed`; the first `train_fraction` of rows train.
pub fn split_indices(n: usize, seed: u64, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_fraction).floor() as usize;
    let eval = idx.split_off(n_train.min(n));
    (idx, eval)
}

type SparseDoc = Vec<(usize, f64)>;

fn fit_head(docs: &[SparseDoc], labels: &[bool], dims: usize, cfg: &TrainConfig) -> (Vec<f64>, f64) {
    let n = docs.len() as f64;
    let mut w = vec![0.0; dims];
    let mut b = 0.0;
    let mut grad = vec![0.0; dims];
    for _ in 0..cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (doc, &y) in docs.iter().zip(labels) {
            let z = b + doc.iter().map(|&(j, x)| w[j] * x).sum::<f64>();
            let err = logistic(z) - if y { 1.0 } else { 0.0 };
            grad_b += err;
            for &(j, x) in doc {
                grad[j] += err * x;
            }
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= cfg.learning_rate * (gj / n + cfg.l2 * *wj);
        }
        b -= cfg.learning_rate * grad_b / n;
    }
    (w, b)
}

/// Fits all five heads on the training split and evaluates on the held-out rows.
pub fn train(
    corpus: &LabeledCorpus,
    cfg: &TrainConfig,
) -> Result<(NativeModel, EvalReport), TrainingError> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
        return Err(TrainingError::Config(format!(
            "train fraction {} is not in (0, 1]",
            cfg.train_fraction
        )));
    }
    if !(cfg.l2 >= 0.0 && cfg.learning_rate > 0.0 && cfg.iterations > 0) {
        return Err(TrainingError::Config(
            "need l2 >= 0, learning rate > 0 and at least one iteration".into(),
        ));
    }
    let (train_idx, eval_idx) = split_indices(corpus.len(), cfg.seed, cfg.train_fraction);
    let train_rows: Vec<&LabeledRow> = train_idx.iter().map(|&i| &corpus.rows[i]).collect();

    for (h, &head) in Trait::HEADS.iter().enumerate() {
        let positives = train_rows.iter().filter(|r| r.labels[h]).count();
        let negatives = train_rows.len() - positives;
        if positives < MIN_CLASS_ROWS || negatives < MIN_CLASS_ROWS {
            return Err(TrainingError::DegenerateSplit {
                head,
                positives,
                negatives,
            });
        }
    }

    let tokenizer = TokenizerSpec::default();
    let tokenized: Vec<Vec<String>> = train_rows.iter().map(|r| tokenizer.tokenize(&r.text)).collect();
    let vocab: BTreeMap<String, usize> = tokenized
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, i))
        .collect();
    let mut df = vec![0usize; vocab.len()];
    for doc in &tokenized {
        let distinct: BTreeSet<usize> = doc.iter().map(|t| vocab[t]).collect();
        for j in distinct {
            df[j] += 1;
        }
    }
    let n_docs = tokenized.len() as f64;
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    let docs: Vec<SparseDoc> = tokenized
        .iter()
        .map(|doc| {
            let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
            for t in doc {
                *counts.entry(vocab[t]).or_default() += 1.0;
            }
            counts.into_iter().map(|(j, c)| (j, c * idf[j])).collect()
        })
        .collect();

    let fitted: Vec<(Vec<f64>, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..Trait::HEADS.len())
            .map(|h| {
                let labels: Vec<bool> = train_rows.iter().map(|r| r.labels[h]).collect();
                let docs = &docs;
                let dims = vocab.len();
                s.spawn(move || fit_head(docs, &labels, dims, cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread")).collect()
    });

    let heads: [TraitWeights; 5] = std::array::from_fn(|h| TraitWeights {
        vocab: vocab.clone(),
        idf: idf.clone(),
        coef: fitted[h].0.clone(),
        intercept: fitted[h].1,
    });
    let model = NativeModel::new(tokenizer, PerTrait::from_heads(heads))?;

    let eval_rows: Vec<LabeledRow> = eval_idx.iter().map(|&i| corpus.rows[i].clone()).collect();
    let mut report = evaluate(&model, &eval_rows, 0.5);
    report.split = Some(SplitSpec {
        seed: cfg.seed,
        train_fraction: cfg.train_fraction,
        train_rows: train_idx.len(),
        eval_rows: eval_idx.len(),
    });
    Ok((model, report))
}
