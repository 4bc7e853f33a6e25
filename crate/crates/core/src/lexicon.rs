//! Trait-keyed word lists shared by the mock generator, the synthetic training
//! corpus and the reference lexicon classifier.
//!
//! None of these words occur in the built-in battery stems, so a lexicon
//! classifier scores every bare stem at exactly 0.5.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::traits::Trait;

pub struct TraitLexicon {
    pub head: Trait,
    /// Words marking a high level of the trait.
    pub high: [&'static str; 8],
    /// Words marking a low level of the trait.
    pub low: [&'static str; 8],
}

pub const LEXICONS: [TraitLexicon; 5] = [
    TraitLexicon {
        head: Trait::Openness,
        high: [
            "curious", "imaginative", "artistic", "creative", "inventive", "adventurous",
            "philosophical", "novelty",
        ],
        low: [
            "conventional", "routine", "traditional", "familiar", "predictable", "literal",
            "unadventurous", "habitual",
        ],
    },
    TraitLexicon {
        head: Trait::Conscientiousness,
        high: [
            "organized", "punctual", "diligent", "meticulous", "thorough", "disciplined",
            "planned", "tidy",
        ],
        low: [
            "careless", "sloppy", "messy", "disorganized", "forgetful", "lazy", "procrastinate",
            "haphazard",
        ],
    },
    TraitLexicon {
        head: Trait::Extraversion,
        high: [
            "outgoing", "talkative", "energetic", "party", "sociable", "lively", "assertive",
            "enthusiastic",
        ],
        low: [
            "quiet", "reserved", "shy", "solitary", "introverted", "withdrawn", "reticent",
            "secluded",
        ],
    },
    TraitLexicon {
        head: Trait::Agreeableness,
        high: [
            "kind", "helpful", "compassionate", "generous", "cooperative", "warm", "trusting",
            "gentle",
        ],
        low: [
            "rude", "hostile", "selfish", "stubborn", "critical", "cold", "harsh", "arrogant",
        ],
    },
    TraitLexicon {
        head: Trait::Neuroticism,
        high: [
            "anxious", "worried", "nervous", "tense", "moody", "insecure", "panicky", "irritable",
        ],
        low: [
            "calm", "relaxed", "composed", "steady", "serene", "secure", "unflappable",
            "resilient",
        ],
    },
];

/// Trait-neutral connective words.
pub const FILLER: [&str; 16] = [
    "and", "really", "often", "quite", "the", "day", "people", "things", "very", "always",
    "about", "with", "so", "also", "usually", "mostly",
];

/// Per-word logit weight used by [`crate::classifier::NativeModel::reference_lexicon`].
pub const REFERENCE_WEIGHT: f64 = 0.25;

/// Lexicon words emitted per trait in every mock completion.
pub const SLOTS_PER_TRAIT: usize = 8;

pub fn lexicon_for(head: Trait) -> Option<&'static TraitLexicon> {
    LEXICONS.iter().find(|l| l.head == head)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Expected reference-classifier probability when each of the slots is a high word
/// with probability `p_high`.
pub fn expected_reference_score(p_high: f64) -> f64 {
    let n = SLOTS_PER_TRAIT;
    (0..=n)
        .map(|k| {
            let z = REFERENCE_WEIGHT * (2.0 * k as f64 - n as f64);
            binomial_pmf(n, k, p_high) * logistic(z)
        })
        .sum()
}

/// Slot probability that moves the expected reference score from 0.5 by `effect`.
///
/// `effect` is clamped to what the slot count can express.
pub fn slot_probability_for_effect(effect: f64) -> f64 {
    let target = 0.5 + effect;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected_reference_score(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One row of the synthetic labeled corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticDoc {
    pub text: String,
    /// Labels in [`Trait::HEADS`] order.
    pub labels: [bool; 5],
}

/// Deterministic, perfectly separable corpus: each document carries three words
/// from the high or low list of every trait, according to its labels.
pub fn synthetic_corpus(docs: usize, seed: u64) -> Vec<SyntheticDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs)
        .map(|_| {
            let labels: [bool; 5] = std::array::from_fn(|_| rng.gen_bool(0.5));
            let mut words: Vec<&str> = Vec::new();
            for (lex, &label) in LEXICONS.iter().zip(&labels) {
                let pool = if label { &lex.high } else { &lex.low };
                words.extend(pool.choose_multiple(&mut rng, 3).copied());
            }
            for _ in 0..rng.gen_range(4..10) {
                words.push(FILLER[rng.gen_range(0..FILLER.len())]);
            }
            words.shuffle(&mut rng);
            SyntheticDoc {
                text: words.join(" "),
                labels,
            }
        })
        .collect()
}

/// Renders a corpus in the labeled-corpus CSV format.
pub fn corpus_csv(docs: &[SyntheticDoc]) -> String {
    let mut out = String::from("text,cEXT,cNEU,cAGR,cCON,cOPN\n");
    for d in docs {
        let [o, c, e, a, n] = d.labels.map(u8::from);
        out.push_str(&format!("{},{e},{n},{a},{c},{o}\n", d.text));
    }
    out
}

pub const SHIPPED_CORPUS_DOCS: usize = 200;
pub const SHIPPED_CORPUS_SEED: u64 = 20240;

/// The 200-document corpus shipped as `data/synthetic_corpus.csv`.
pub const SHIPPED_CORPUS_CSV: &str = include_str!("../data/synthetic_corpus.csv");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::Battery;
    use crate::classifier::tokenize;
    use std::collections::HashSet;

    #[test]
    fn lexicons_avoid_battery_stems_and_each_other() {
        let stem_tokens: HashSet<String> = Battery::builtin()
            .prompts
            .iter()
            .flat_map(|p| tokenize(&p.text))
            .collect();
        let mut seen = HashSet::new();
        for lex in &LEXICONS {
            for w in lex.high.iter().chain(&lex.low) {
                assert!(!stem_tokens.contains(*w), "{w} appears in a stem");
                assert!(seen.insert(*w), "{w} listed twice");
                assert_eq!(tokenize(w), vec![w.to_string()]);
            }
        }
        for w in FILLER {
            assert!(!seen.contains(w));
        }
    }

    #[test]
    fn calibration_hits_target() {
        assert!((expected_reference_score(0.5) - 0.5).abs() < 1e-12);
        for effect in [-0.2, 0.0, 0.1, 0.2] {
            let p = slot_probability_for_effect(effect);
            assert!((expected_reference_score(p) - 0.5 - effect).abs() < 1e-9);
        }
    }

    #[test]
    fn shipped_corpus_matches_generator() {
        let expected = corpus_csv(&synthetic_corpus(SHIPPED_CORPUS_DOCS, SHIPPED_CORPUS_SEED));
        assert_eq!(SHIPPED_CORPUS_CSV, expected);
    }
}
