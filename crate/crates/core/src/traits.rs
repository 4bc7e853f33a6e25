//! Big Five trait vocabulary and per-text trait score containers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A Big Five trait, plus emotional stability which is derived from neuroticism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
    EmotionalStability,
}

impl Trait {
    /// The five classifier heads, in artifact order.
    pub const HEADS: [Trait; 5] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
    ];

    /// The five traits shown in reports (neuroticism is reported as emotional stability).
    pub const REPORTED: [Trait; 5] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::EmotionalStability,
    ];

    pub const ALL: [Trait; 6] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
        Trait::EmotionalStability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Trait::Openness => "openness",
            Trait::Conscientiousness => "conscientiousness",
            Trait::Extraversion => "extraversion",
            Trait::Agreeableness => "agreeableness",
            Trait::Neuroticism => "neuroticism",
            Trait::EmotionalStability => "emotional_stability",
        }
    }

    /// Column header used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            Trait::Openness => "Openness",
            Trait::Conscientiousness => "Conscientiousness",
            Trait::Extraversion => "Extraversion",
            Trait::Agreeableness => "Agreeableness",
            Trait::Neuroticism => "Neuroticism",
            Trait::EmotionalStability => "Emotional Stability",
        }
    }

    /// myPersonality label column for a classifier head.
    pub fn corpus_label(self) -> Option<&'static str> {
        match self {
            Trait::Openness => Some("cOPN"),
            Trait::Conscientiousness => Some("cCON"),
            Trait::Extraversion => Some("cEXT"),
            Trait::Agreeableness => Some("cAGR"),
            Trait::Neuroticism => Some("cNEU"),
            Trait::EmotionalStability => None,
        }
    }

    pub fn is_head(self) -> bool {
        self != Trait::EmotionalStability
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown trait `{0}`")]
pub struct UnknownTrait(pub String);

impl FromStr for Trait {
    type Err = UnknownTrait;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Trait::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownTrait(s.to_string()))
    }
}

/// Raw classifier probabilities for one text.
///
/// The five heads are independent probabilities; `emotional_stability` is
/// always `1 - neuroticism` and is only ever produced by [`TraitScores::from_heads`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitScores {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
    pub emotional_stability: f64,
}

impl TraitScores {
    /// Builds scores from the five heads in [`Trait::HEADS`] order.
    pub fn from_heads(heads: [f64; 5]) -> Self {
        let [openness, conscientiousness, extraversion, agreeableness, neuroticism] = heads;
        Self {
            openness,
            conscientiousness,
            extraversion,
            agreeableness,
            neuroticism,
            emotional_stability: 1.0 - neuroticism,
        }
    }

    pub fn heads(&self) -> [f64; 5] {
        [
            self.openness,
            self.conscientiousness,
            self.extraversion,
            self.agreeableness,
            self.neuroticism,
        ]
    }

    pub fn get(&self, t: Trait) -> f64 {
        match t {
            Trait::Openness => self.openness,
            Trait::Conscientiousness => self.conscientiousness,
            Trait::Extraversion => self.extraversion,
            Trait::Agreeableness => self.agreeableness,
            Trait::Neuroticism => self.neuroticism,
            Trait::EmotionalStability => self.emotional_stability,
        }
    }
}

/// The five head probabilities as they travel over the scoring wire protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScores {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

impl From<HeadScores> for TraitScores {
    fn from(h: HeadScores) -> Self {
        TraitScores::from_heads([
            h.openness,
            h.conscientiousness,
            h.extraversion,
            h.agreeableness,
            h.neuroticism,
        ])
    }
}

impl From<&TraitScores> for HeadScores {
    fn from(s: &TraitScores) -> Self {
        HeadScores {
            openness: s.openness,
            conscientiousness: s.conscientiousness,
            extraversion: s.extraversion,
            agreeableness: s.agreeableness,
            neuroticism: s.neuroticism,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn es_is_one_minus_neuroticism() {
        let s = TraitScores::from_heads([0.1, 0.2, 0.3, 0.4, 0.0]);
        assert_eq!(s.emotional_stability, 1.0);
        let s = TraitScores::from_heads([0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(s.emotional_stability, 0.5);
    }

    #[test]
    fn trait_names_round_trip() {
        for t in Trait::ALL {
            assert_eq!(t.as_str().parse::<Trait>().unwrap(), t);
        }
        assert!("grit".parse::<Trait>().is_err());
    }

    #[test]
    fn emotional_stability_has_no_corpus_label() {
        assert_eq!(Trait::EmotionalStability.corpus_label(), None);
        let labels: Vec<_> = Trait::HEADS.iter().filter_map(|t| t.corpus_label()).collect();
        assert_eq!(labels, ["cOPN", "cCON", "cEXT", "cAGR", "cNEU"]);
    }
}
