//! Aggregate views over scored records.
//!
//! All views use the baseline-adjusted (normalized) values. Standard
//! deviations are population standard deviations. Inputs are put in a
//! canonical order before accumulation, so permuting records never changes
//! an emitted number.

mod plot;
mod render;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::battery::{PromptCategory, ACTIVATING_TARGETS};
use crate::normalize::ScoredRecord;
use crate::traits::Trait;

pub use plot::{plot_data, ModelInfo, PlotData, PLOTDATA_SCHEMA};
pub use render::{
    activation_csv, activation_markdown, pairs_csv, pairs_markdown, ranking_markdown, summary_csv,
    summary_markdown, RenderOptions,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("records mix classifier ids {0} and {1}; scores are not comparable")]
    MixedClassifiers(String, String),
    #[error("model {model_id} has no {set} records")]
    MissingQuestionSet { model_id: String, set: String },
    #[error("ranking needs at least two models, got {0}")]
    TooFewModels(usize),
    #[error("summaries mix question sets or category filters")]
    MixedSummaries,
    #[error("unknown model id {0} in pairing")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionSet {
    Standard,
    TraitActivating,
    Both,
}

impl QuestionSet {
    pub fn contains(self, category: &PromptCategory) -> bool {
        match self {
            QuestionSet::Standard => category.is_standard(),
            QuestionSet::TraitActivating => !category.is_standard(),
            QuestionSet::Both => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionSet::Standard => "standard",
            QuestionSet::TraitActivating => "trait_activating",
            QuestionSet::Both => "both",
        }
    }
}

/// A completion that was generated but not scored (failed or empty after sanitization).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub model_id: String,
    pub prompt_id: String,
    pub category: PromptCategory,
    pub completion_index: u32,
}

/// Running count, mean and sum of squared deviations. Shards merge exactly
/// in the algebraic sense (Chan et al. parallel update).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    /// Population standard deviation.
    pub fn std(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.m2.max(0.0) / self.n as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSummary {
    pub model_id: String,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub question_set: QuestionSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<PromptCategory>,
    /// `None` when no record was scored.
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub n: u64,
    pub skipped: u64,
}

/// How [`summarize`] groups records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupBy {
    pub question_set: QuestionSet,
    /// Split each model further by prompt category.
    pub by_category: bool,
}

impl Default for GroupBy {
    fn default() -> Self {
        GroupBy {
            question_set: QuestionSet::Both,
            by_category: false,
        }
    }
}

/// Fails if records come from more than one classifier.
pub fn check_single_classifier(records: &[ScoredRecord]) -> Result<Option<&str>, AnalysisError> {
    let mut ids = records.iter().map(|r| r.classifier_id.as_str());
    let Some(first) = ids.next() else { return Ok(None) };
    match ids.find(|id| *id != first) {
        Some(other) => {
            let (a, b) = if first < other { (first, other) } else { (other, first) };
            Err(AnalysisError::MixedClassifiers(a.to_string(), b.to_string()))
        }
        None => Ok(Some(first)),
    }
}

fn canonical(records: &[ScoredRecord]) -> Vec<&ScoredRecord> {
    let mut sorted: Vec<&ScoredRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.key().cmp(&b.key()));
    sorted
}

type GroupKey = (String, Option<PromptCategory>);

/// Mean, std and counts per (model, trait[, category]) over the chosen question set.
pub fn summarize(
    records: &[ScoredRecord],
    skipped: &[SkippedRecord],
    group: GroupBy,
) -> Result<Vec<TraitSummary>, AnalysisError> {
    check_single_classifier(records)?;
    let key_of = |model: &str, category: PromptCategory| -> GroupKey {
        (model.to_string(), group.by_category.then_some(category))
    };

    let mut acc: BTreeMap<GroupKey, [Accumulator; 6]> = BTreeMap::new();
    for r in canonical(records) {
        if !group.question_set.contains(&r.category) {
            continue;
        }
        let slots = acc.entry(key_of(&r.model_id, r.category)).or_default();
        for (slot, t) in slots.iter_mut().zip(Trait::ALL) {
            slot.push(r.normalized.get(t));
        }
    }
    let mut skips: BTreeMap<GroupKey, u64> = BTreeMap::new();
    for s in skipped {
        if group.question_set.contains(&s.category) {
            *skips.entry(key_of(&s.model_id, s.category)).or_default() += 1;
        }
    }

    let keys: BTreeSet<&GroupKey> = acc.keys().chain(skips.keys()).collect();
    let mut out = Vec::new();
    for key in keys {
        let slots = acc.get(key).copied().unwrap_or_default();
        for (a, t) in slots.iter().zip(Trait::ALL) {
            out.push(TraitSummary {
                model_id: key.0.clone(),
                trait_: t,
                question_set: group.question_set,
                category: key.1,
                mean: a.mean(),
                std: a.std(),
                n: a.count(),
                skipped: skips.get(key).copied().unwrap_or(0),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationDelta {
    pub model_id: String,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    /// Mean over the prompts that target this trait.
    pub activating_mean: f64,
    /// Mean over every standard prompt.
    pub standard_mean: f64,
    pub delta: f64,
    pub n_activating: u64,
    pub n_standard: u64,
}

/// Per model and activating target: activating mean minus all-standard mean.
pub fn activation_deltas(records: &[ScoredRecord]) -> Result<Vec<ActivationDelta>, AnalysisError> {
    check_single_classifier(records)?;
    let mut standard: BTreeMap<&str, [Accumulator; 6]> = BTreeMap::new();
    let mut activating: BTreeMap<(&str, Trait), Accumulator> = BTreeMap::new();
    let mut models: BTreeSet<&str> = BTreeSet::new();
    for r in canonical(records) {
        models.insert(&r.model_id);
        match r.category {
            PromptCategory::Standard { .. } => {
                let slots = standard.entry(&r.model_id).or_default();
                for (slot, t) in slots.iter_mut().zip(Trait::ALL) {
                    slot.push(r.normalized.get(t));
                }
            }
            PromptCategory::TraitActivating { target } => {
                activating
                    .entry((&r.model_id, target))
                    .or_default()
                    .push(r.normalized.get(target));
            }
        }
    }

    let mut out = Vec::new();
    for model in models {
        let std_slots = standard.get(model).ok_or_else(|| AnalysisError::MissingQuestionSet {
            model_id: model.to_string(),
            set: "standard".into(),
        })?;
        for target in ACTIVATING_TARGETS {
            let act = activating.get(&(model, target)).ok_or_else(|| AnalysisError::MissingQuestionSet {
                model_id: model.to_string(),
                set: format!("trait_activating ({target})"),
            })?;
            let idx = Trait::ALL.iter().position(|t| *t == target).expect("target is a trait");
            let std_acc = &std_slots[idx];
            let activating_mean = act.mean().expect("non-empty");
            let standard_mean = std_acc.mean().expect("non-empty");
            out.push(ActivationDelta {
                model_id: model.to_string(),
                trait_: target,
                activating_mean,
                standard_mean,
                delta: activating_mean - standard_mean,
                n_activating: act.count(),
                n_standard: std_acc.count(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMark {
    Highest,
    Second,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub model_id: String,
    pub mean: Option<f64>,
    pub mark: RankMark,
    /// Another model has exactly the same mean; order among them is by model id.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitRanking {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub entries: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub question_set: QuestionSet,
    pub per_trait: Vec<TraitRanking>,
}

impl RankingTable {
    pub fn for_trait(&self, t: Trait) -> Option<&TraitRanking> {
        self.per_trait.iter().find(|r| r.trait_ == t)
    }

    pub fn mark(&self, t: Trait, model_id: &str) -> RankMark {
        self.for_trait(t)
            .and_then(|r| r.entries.iter().find(|e| e.model_id == model_id))
            .map_or(RankMark::None, |e| e.mark)
    }
}

/// Orders models by mean (descending) for every trait present in `summaries`.
///
/// Summaries must share one question set and carry no category filter.
/// Models without scored records are listed last and never marked.
pub fn rank(summaries: &[TraitSummary]) -> Result<RankingTable, AnalysisError> {
    let Some(first) = summaries.first() else {
        return Err(AnalysisError::TooFewModels(0));
    };
    if summaries
        .iter()
        .any(|s| s.question_set != first.question_set || s.category.is_some())
    {
        return Err(AnalysisError::MixedSummaries);
    }
    let models: BTreeSet<&str> = summaries.iter().map(|s| s.model_id.as_str()).collect();
    if models.len() < 2 {
        return Err(AnalysisError::TooFewModels(models.len()));
    }
    let traits: BTreeSet<Trait> = summaries.iter().map(|s| s.trait_).collect();
    let per_trait = traits
        .into_iter()
        .map(|t| {
            let mut rows: Vec<(&str, Option<f64>)> = summaries
                .iter()
                .filter(|s| s.trait_ == t)
                .map(|s| (s.model_id.as_str(), s.mean))
                .collect();
            rows.sort_by(|a, b| match (a.1, b.1) {
                (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.0.cmp(b.0)),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => a.0.cmp(b.0),
            });
            let entries = rows
                .iter()
                .enumerate()
                .map(|(i, &(model, mean))| {
                    let tied = mean.is_some()
                        && rows.iter().enumerate().any(|(j, other)| j != i && other.1 == mean);
                    let mark = match (i, mean) {
                        (0, Some(_)) => RankMark::Highest,
                        (1, Some(_)) => RankMark::Second,
                        _ => RankMark::None,
                    };
                    RankEntry {
                        model_id: model.to_string(),
                        mean,
                        mark,
                        tied,
                    }
                })
                .collect();
            TraitRanking { trait_: t, entries }
        })
        .collect();
    Ok(RankingTable {
        question_set: first.question_set,
        per_trait,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPair {
    pub base: String,
    pub variant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub base: String,
    pub variant: String,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub base_mean: Option<f64>,
    pub variant_mean: Option<f64>,
    /// `variant_mean - base_mean`; `None` if either side has no records.
    pub delta: Option<f64>,
}

/// Variant-minus-base means per trait for every declared pair.
pub fn compare_pairs(
    summaries: &[TraitSummary],
    pairs: &[ModelPair],
) -> Result<Vec<PairDelta>, AnalysisError> {
    if summaries
        .iter()
        .any(|s| Some(s.question_set) != summaries.first().map(|f| f.question_set) || s.category.is_some())
    {
        return Err(AnalysisError::MixedSummaries);
    }
    let lookup: BTreeMap<(&str, Trait), Option<f64>> = summaries
        .iter()
        .map(|s| ((s.model_id.as_str(), s.trait_), s.mean))
        .collect();
    let known: BTreeSet<&str> = summaries.iter().map(|s| s.model_id.as_str()).collect();
    let traits: BTreeSet<Trait> = summaries.iter().map(|s| s.trait_).collect();
    let mut out = Vec::new();
    for pair in pairs {
        for id in [&pair.base, &pair.variant] {
            if !known.contains(id.as_str()) {
                return Err(AnalysisError::UnknownModel(id.clone()));
            }
        }
        for &t in &traits {
            let base_mean = lookup.get(&(pair.base.as_str(), t)).copied().flatten();
            let variant_mean = lookup.get(&(pair.variant.as_str(), t)).copied().flatten();
            out.push(PairDelta {
                base: pair.base.clone(),
                variant: pair.variant.clone(),
                trait_: t,
                base_mean,
                variant_mean,
                delta: base_mean.zip(variant_mean).map(|(b, v)| v - b),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::Theme;
    use crate::normalize::TraitVector;
    use crate::traits::TraitScores;

    fn rec(model: &str, category: PromptCategory, idx: u32, v: f64) -> ScoredRecord {
        ScoredRecord {
            prompt_id: format!("{}.1", category.slug()),
            category,
            model_id: model.into(),
            completion_index: idx,
            raw_scores: TraitScores::from_heads([v; 5]),
            normalized: TraitVector::from_fn(|_| v),
            classifier_id: "c".into(),
        }
    }

    const STD: PromptCategory = PromptCategory::Standard { theme: Theme::AboutYourself };

    #[test]
    fn two_record_mean_and_population_std() {
        let recs = [rec("m", STD, 0, 0.4), rec("m", STD, 1, 0.6)];
        let s = summarize(&recs, &[], GroupBy::default()).unwrap();
        let open = s.iter().find(|s| s.trait_ == Trait::Openness).unwrap();
        assert!((open.mean.unwrap() - 0.5).abs() < 1e-12);
        assert!((open.std.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(open.n, 2);
    }

    #[test]
    fn all_skipped_group_has_no_mean() {
        let skipped = [SkippedRecord {
            model_id: "m".into(),
            prompt_id: "std.about_yourself.1".into(),
            category: STD,
            completion_index: 0,
        }];
        let s = summarize(&[], &skipped, GroupBy::default()).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|s| s.n == 0 && s.mean.is_none() && s.skipped == 1));
    }

    #[test]
    fn mixed_classifiers_are_refused() {
        let mut b = rec("m", STD, 1, 0.5);
        b.classifier_id = "other".into();
        let recs = [rec("m", STD, 0, 0.5), b];
        assert!(matches!(
            summarize(&recs, &[], GroupBy::default()),
            Err(AnalysisError::MixedClassifiers(..))
        ));
    }

    #[test]
    fn accumulator_merge_matches_sequential() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 / 7.0).collect();
        let mut whole = Accumulator::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (Accumulator::default(), Accumulator::default());
        xs[..17].iter().for_each(|&x| a.push(x));
        xs[17..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count(), whole.count());
        assert!((a.mean().unwrap() - whole.mean().unwrap()).abs() < 1e-12);
        assert!((a.std().unwrap() - whole.std().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_record_delta() {
        let act = PromptCategory::TraitActivating { target: Trait::Openness };
        let mut recs = vec![rec("m", STD, 0, 0.5)];
        recs.push(rec("m", act, 0, 0.7));
        for t in ACTIVATING_TARGETS.into_iter().skip(1) {
            recs.push(rec("m", PromptCategory::TraitActivating { target: t }, 0, 0.5));
        }
        let d = activation_deltas(&recs).unwrap();
        let open = d.iter().find(|d| d.trait_ == Trait::Openness).unwrap();
        assert!((open.delta - 0.2).abs() < 1e-12);
        assert_eq!(open.delta, open.activating_mean - open.standard_mean);
        assert!(d.iter().filter(|d| d.trait_ != Trait::Openness).all(|d| d.delta == 0.0));
    }

    #[test]
    fn missing_set_is_named() {
        let recs = [rec("m", STD, 0, 0.5)];
        let err = activation_deltas(&recs).unwrap_err().to_string();
        assert!(err.contains("trait_activating"), "{err}");
        let recs = [rec("m", PromptCategory::TraitActivating { target: Trait::Openness }, 0, 0.5)];
        let err = activation_deltas(&recs).unwrap_err().to_string();
        assert!(err.contains("standard"), "{err}");
    }

    fn summary(model: &str, t: Trait, mean: f64) -> TraitSummary {
        TraitSummary {
            model_id: model.into(),
            trait_: t,
            question_set: QuestionSet::Both,
            category: None,
            mean: Some(mean),
            std: Some(0.0),
            n: 1,
            skipped: 0,
        }
    }

    #[test]
    fn ties_are_flagged_and_lexicographic() {
        let s = [summary("b", Trait::Openness, 0.5), summary("a", Trait::Openness, 0.5), summary("c", Trait::Openness, 0.1)];
        let table = rank(&s).unwrap();
        let e = &table.for_trait(Trait::Openness).unwrap().entries;
        assert_eq!(e[0].model_id, "a");
        assert_eq!(e[0].mark, RankMark::Highest);
        assert_eq!(e[1].model_id, "b");
        assert_eq!(e[1].mark, RankMark::Second);
        assert!(e[0].tied && e[1].tied && !e[2].tied);
    }

    #[test]
    fn single_model_cannot_be_ranked() {
        assert!(matches!(rank(&[summary("a", Trait::Openness, 0.5)]), Err(AnalysisError::TooFewModels(1))));
    }

    #[test]
    fn pairs_identity_and_unknown() {
        let s = [summary("a", Trait::Openness, 0.4), summary("b", Trait::Openness, 0.3)];
        let same = compare_pairs(&s, &[ModelPair { base: "a".into(), variant: "a".into() }]).unwrap();
        assert!(same.iter().all(|d| d.delta == Some(0.0)));
        let err = compare_pairs(&s, &[ModelPair { base: "zz".into(), variant: "a".into() }]).unwrap_err();
        assert!(matches!(err, AnalysisError::UnknownModel(m) if m == "zz"));
    }
}
