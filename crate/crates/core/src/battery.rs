//! The elicitation prompt battery.
//!
//! A battery holds 50 sentence stems: 25 standard interview stems (five per
//! theme) and 25 trait-activating stems (five per target trait). The built-in
//! default reproduces the published stems verbatim, typos included; a
//! spelling-normalized variant lives in `data/battery_normalized.json`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::traits::Trait;

pub const DEFAULT_BATTERY_VERSION: &str = "builtin-v1";

/// Prompts per theme or activating target.
pub const PROMPTS_PER_GROUP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theme {
    AboutYourself,
    CulturalFit,
    StrengthsWeaknesses,
    FuturePlans,
    Pressure,
}

impl Theme {
    pub const ALL: [Theme; 5] = [
        Theme::AboutYourself,
        Theme::CulturalFit,
        Theme::StrengthsWeaknesses,
        Theme::FuturePlans,
        Theme::Pressure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Theme::AboutYourself => "about_yourself",
            Theme::CulturalFit => "cultural_fit",
            Theme::StrengthsWeaknesses => "strengths_weaknesses",
            Theme::FuturePlans => "future_plans",
            Theme::Pressure => "pressure",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Theme::AboutYourself => "Tell me about yourself",
            Theme::CulturalFit => "Cultural fit",
            Theme::StrengthsWeaknesses => "Strengths and weaknesses",
            Theme::FuturePlans => "Plans for the future",
            Theme::Pressure => "Coping under pressure",
        }
    }
}

/// Traits that trait-activating prompts may target.
pub const ACTIVATING_TARGETS: [Trait; 5] = Trait::REPORTED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptCategory {
    Standard { theme: Theme },
    TraitActivating { target: Trait },
}

impl PromptCategory {
    /// All ten categories in canonical battery order.
    pub fn all() -> Vec<PromptCategory> {
        Theme::ALL
            .into_iter()
            .map(|theme| PromptCategory::Standard { theme })
            .chain(
                ACTIVATING_TARGETS
                    .into_iter()
                    .map(|target| PromptCategory::TraitActivating { target }),
            )
            .collect()
    }

    pub fn is_standard(&self) -> bool {
        matches!(self, PromptCategory::Standard { .. })
    }

    /// Slug prefix used for prompt ids, e.g. `std.pressure`.
    pub fn slug(&self) -> String {
        match self {
            PromptCategory::Standard { theme } => format!("std.{}", theme.as_str()),
            PromptCategory::TraitActivating { target } => format!("act.{}", target.as_str()),
        }
    }
}

impl fmt::Display for PromptCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptCategory::Standard { theme } => write!(f, "Standard theme {}", theme.as_str()),
            PromptCategory::TraitActivating { target } => {
                write!(f, "Trait-activating target {}", target.as_str())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: String,
    pub text: String,
    pub category: PromptCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Battery {
    pub version: String,
    pub prompts: Vec<PromptSpec>,
}

/// Which prompts [`Battery::prompts_for`] should return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptFilter {
    All,
    Category(PromptCategory),
}

#[derive(Debug, thiserror::Error)]
pub enum BatteryError {
    #[error("cannot read battery file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed battery file at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Validation(String),
}

const STANDARD_STEMS: [(Theme, [&str; 5]); 5] = [
    (
        Theme::AboutYourself,
        [
            "I would describe myself as",
            "Others would describe me as",
            "My hobbies are",
            "After work, I like to",
            "At the weekend, I usually",
        ],
    ),
    (
        Theme::CulturalFit,
        [
            "My idea workplace would be",
            "I think that working as a team is",
            "When I am involved in a conflict in the workplace, I",
            "I think that workplace socials are",
            "When I am in the office, I like to",
        ],
    ),
    (
        Theme::StrengthsWeaknesses,
        [
            "My strengths are",
            "My weaknesses are",
            "When presented with a challenge, I",
            "I am skilled at",
            "My best quality is",
        ],
    ),
    (
        Theme::FuturePlans,
        [
            "When I think of the future, I",
            "I think that career progression is",
            "In the future, I would like to",
            "I think that the future will be",
            "Through my work, I hope to",
        ],
    ),
    (
        Theme::Pressure,
        [
            "When I have a deadline coming up, I",
            "If I am working on many projects at once, I",
            "Being able to priorities tasks is",
            "When I feel stressed at work, I",
            "When working under pressure, I typically",
        ],
    ),
];

const ACTIVATING_STEMS: [(Trait, [&str; 5]); 5] = [
    (
        Trait::Openness,
        [
            "Learning new information makes me",
            "I think that art is",
            "When I go on vacation, I typically",
            "Trying new foods is something that I",
            "I think that daydreaming is",
        ],
    ),
    (
        Trait::Conscientiousness,
        [
            "I think that perfectionism is",
            "To motivate myself to work, I usually",
            "When it comes to being organised, I typically",
            "I think that having work-related goals is",
            "When making decisions, I typically",
        ],
    ),
    (
        Trait::Extraversion,
        [
            "I think that being active is",
            "During a social situation, I think of myself as",
            "When I am in charge of others, I feel",
            "When I am with a group of people, I",
            "When I am alone, I",
        ],
    ),
    (
        Trait::Agreeableness,
        [
            "When I achieve something, others should",
            "When someone needs help, I",
            "I think that rules are",
            "Confrontations with others are",
            "I feel sympathy for",
        ],
    ),
    (
        Trait::EmotionalStability,
        [
            "When I encounter a stressful situation, I",
            "Being the center of attention makes me feel",
            "My mood most of the time is",
            "My opinion of myself is",
            "When I am craving something, I usually",
        ],
    ),
];

fn prompt_id(category: &PromptCategory, index: usize) -> String {
    format!("{}.{}", category.slug(), index + 1)
}

impl Battery {
    /// The built-in battery with the published stems.
    pub fn builtin() -> Battery {
        let standard = STANDARD_STEMS.iter().flat_map(|(theme, stems)| {
            let category = PromptCategory::Standard { theme: *theme };
            stems.iter().enumerate().map(move |(i, text)| PromptSpec {
                id: prompt_id(&category, i),
                text: (*text).to_string(),
                category,
            })
        });
        let activating = ACTIVATING_STEMS.iter().flat_map(|(target, stems)| {
            let category = PromptCategory::TraitActivating { target: *target };
            stems.iter().enumerate().map(move |(i, text)| PromptSpec {
                id: prompt_id(&category, i),
                text: (*text).to_string(),
                category,
            })
        });
        Battery {
            version: DEFAULT_BATTERY_VERSION.to_string(),
            prompts: standard.chain(activating).collect(),
        }
    }

    /// Loads a battery from `path`, or the built-in default when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Battery, BatteryError> {
        match path {
            None => Ok(Battery::builtin()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| BatteryError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                Battery::from_json(&text)
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Battery, BatteryError> {
        let battery: Battery = serde_json::from_str(text).map_err(|e| BatteryError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        battery.validate()?;
        Ok(battery)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("battery serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), BatteryError> {
        let mut seen = HashSet::new();
        for p in &self.prompts {
            if p.id.is_empty() {
                return Err(BatteryError::Validation(format!(
                    "prompt with text {:?} has an empty id",
                    p.text
                )));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(BatteryError::Validation(format!("duplicate prompt id {}", p.id)));
            }
            if p.text.trim().is_empty() {
                return Err(BatteryError::Validation(format!("prompt {} has empty text", p.id)));
            }
            if !p.text.is_ascii() {
                return Err(BatteryError::Validation(format!(
                    "prompt {} contains non-ASCII text",
                    p.id
                )));
            }
            if let PromptCategory::TraitActivating { target } = p.category {
                if !ACTIVATING_TARGETS.contains(&target) {
                    return Err(BatteryError::Validation(format!(
                        "prompt {} targets {}, which is not an activating target",
                        p.id, target
                    )));
                }
            }
        }
        for category in PromptCategory::all() {
            let count = self.prompts.iter().filter(|p| p.category == category).count();
            if count != PROMPTS_PER_GROUP {
                return Err(BatteryError::Validation(format!(
                    "{category} has {count} prompts, expected {PROMPTS_PER_GROUP}"
                )));
            }
        }
        Ok(())
    }

    pub fn prompts_for(&self, filter: PromptFilter) -> Vec<&PromptSpec> {
        self.prompts
            .iter()
            .filter(|p| match filter {
                PromptFilter::All => true,
                PromptFilter::Category(c) => p.category == c,
            })
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&PromptSpec> {
        self.prompts.iter().find(|p| p.id == id)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_is_valid_and_complete() {
        let b = Battery::builtin();
        b.validate().unwrap();
        assert_eq!(b.len(), 50);
        assert_eq!(b.prompts.iter().filter(|p| p.category.is_standard()).count(), 25);
    }

    #[test]
    fn builtin_contains_published_stems() {
        let b = Battery::builtin();
        let find = |text: &str| b.prompts.iter().find(|p| p.text == text).map(|p| p.category);
        assert_eq!(
            find("I would describe myself as"),
            Some(PromptCategory::Standard { theme: Theme::AboutYourself })
        );
        assert_eq!(
            find("I think that perfectionism is"),
            Some(PromptCategory::TraitActivating { target: Trait::Conscientiousness })
        );
        // typos are kept as published
        assert!(find("My idea workplace would be").is_some());
        assert!(find("Being able to priorities tasks is").is_some());
    }

    #[test]
    fn ids_are_category_slugs() {
        let b = Battery::builtin();
        assert_eq!(b.prompts[0].id, "std.about_yourself.1");
        assert_eq!(b.prompts[49].id, "act.emotional_stability.5");
    }

    #[test]
    fn filter_counts() {
        let b = Battery::builtin();
        let open = PromptCategory::TraitActivating { target: Trait::Openness };
        assert_eq!(b.prompts_for(PromptFilter::Category(open)).len(), 5);
        assert_eq!(b.prompts_for(PromptFilter::All).len(), 50);
        let future = b.prompts_for(PromptFilter::Category(PromptCategory::Standard {
            theme: Theme::FuturePlans,
        }));
        assert!(future.iter().any(|p| p.text == "When I think of the future, I"));
    }

    #[test]
    fn filters_partition_the_battery() {
        let b = Battery::builtin();
        let mut ids: Vec<&str> = PromptCategory::all()
            .into_iter()
            .flat_map(|c| b.prompts_for(PromptFilter::Category(c)))
            .map(|p| p.id.as_str())
            .collect();
        assert_eq!(ids.len(), 50);
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn short_theme_is_rejected_by_name() {
        let mut b = Battery::builtin();
        b.prompts.retain(|p| p.id != "std.pressure.3");
        let err = Battery::from_json(&b.to_json()).unwrap_err();
        assert_eq!(err.to_string(), "Standard theme pressure has 4 prompts, expected 5");
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = Battery::from_json("{\n  \"version\": \"x\",\n  \"prompts\": [ oops ]\n}").unwrap_err();
        match err {
            BatteryError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn neuroticism_is_not_an_activating_target() {
        let mut b = Battery::builtin();
        b.prompts[49].category = PromptCategory::TraitActivating { target: Trait::Neuroticism };
        assert!(matches!(b.validate(), Err(BatteryError::Validation(_))));
    }

    #[test]
    fn json_round_trip() {
        let b = Battery::builtin();
        assert_eq!(Battery::from_json(&b.to_json()).unwrap(), b);
    }

    #[test]
    fn shipped_normalized_variant_is_valid() {
        let text = include_str!("../data/battery_normalized.json");
        let b = Battery::from_json(text).unwrap();
        assert!(b.prompts.iter().any(|p| p.text == "My ideal workplace would be"));
        let builtin = Battery::builtin();
        let ids: Vec<_> = b.prompts.iter().map(|p| &p.id).collect();
        let builtin_ids: Vec<_> = builtin.prompts.iter().map(|p| &p.id).collect();
        assert_eq!(ids, builtin_ids);
    }
}
