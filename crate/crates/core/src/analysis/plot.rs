use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_single_classifier, Accumulator, AnalysisError};
use crate::battery::{PromptCategory, Theme};
use crate::normalize::ScoredRecord;
use crate::traits::Trait;

/// JSON Schema for [`PlotData`].
pub const PLOTDATA_SCHEMA: &str = include_str!("../../data/plotdata.schema.json");

pub const PLOTDATA_FORMAT: &str = "persona-probe/plotdata/v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub parameter_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub theme: Theme,
    pub prompt_id: String,
    pub mean: f64,
    pub n: u64,
}

/// Per-prompt means over the standard set for one model and trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub family: String,
    pub model_id: String,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub points: Vec<RadarPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub family: String,
    pub model_id: String,
    pub parameter_count: u64,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub mean: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub format: String,
    pub classifier_id: Option<String>,
    pub radar: Vec<RadarSeries>,
    pub scatter: Vec<ScatterPoint>,
}

/// Radar series per model over standard prompts, and trait mean against
/// parameter count for models that declare one.
pub fn plot_data(records: &[ScoredRecord], models: &[ModelInfo]) -> Result<PlotData, AnalysisError> {
    let classifier_id = check_single_classifier(records)?.map(str::to_string);
    let info: BTreeMap<&str, &ModelInfo> = models.iter().map(|m| (m.model_id.as_str(), m)).collect();
    let family = |model: &str| -> String {
        info.get(model)
            .and_then(|m| m.family.clone())
            .unwrap_or_else(|| model.to_string())
    };

    let mut per_prompt: BTreeMap<(&str, Theme, &str), [Accumulator; 6]> = BTreeMap::new();
    let mut per_model: BTreeMap<&str, [Accumulator; 6]> = BTreeMap::new();
    for r in super::canonical(records) {
        let whole = per_model.entry(&r.model_id).or_default();
        for (slot, t) in whole.iter_mut().zip(Trait::ALL) {
            slot.push(r.normalized.get(t));
        }
        if let PromptCategory::Standard { theme } = r.category {
            let slots = per_prompt.entry((&r.model_id, theme, &r.prompt_id)).or_default();
            for (slot, t) in slots.iter_mut().zip(Trait::ALL) {
                slot.push(r.normalized.get(t));
            }
        }
    }

    let mut radar = Vec::new();
    for &model in per_model.keys() {
        for (i, t) in Trait::ALL.into_iter().enumerate() {
            if !Trait::REPORTED.contains(&t) {
                continue;
            }
            let points: Vec<RadarPoint> = per_prompt
                .range((model, Theme::ALL[0], "")..)
                .take_while(|((m, _, _), _)| *m == model)
                .map(|((_, theme, prompt_id), acc)| RadarPoint {
                    theme: *theme,
                    prompt_id: prompt_id.to_string(),
                    mean: acc[i].mean().expect("non-empty"),
                    n: acc[i].count(),
                })
                .collect();
            if !points.is_empty() {
                radar.push(RadarSeries {
                    family: family(model),
                    model_id: model.to_string(),
                    trait_: t,
                    points,
                });
            }
        }
    }

    let mut scatter = Vec::new();
    for (&model, acc) in &per_model {
        let Some(parameter_count) = info.get(model).and_then(|m| m.parameter_count) else {
            continue;
        };
        for (i, t) in Trait::ALL.into_iter().enumerate() {
            if Trait::REPORTED.contains(&t) {
                scatter.push(ScatterPoint {
                    family: family(model),
                    model_id: model.to_string(),
                    parameter_count,
                    trait_: t,
                    mean: acc[i].mean().expect("non-empty"),
                    n: acc[i].count(),
                });
            }
        }
    }

    Ok(PlotData {
        format: PLOTDATA_FORMAT.to_string(),
        classifier_id,
        radar,
        scatter,
    })
}
