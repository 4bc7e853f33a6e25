//! Deterministic stand-in for a language model.
//!
//! Each completion is built from the trait lexicons: every trait gets
//! [`SLOTS_PER_TRAIT`] words, each drawn from the trait's high list with
//! probability `p` and from its low list otherwise. For standard prompts
//! `p = 0.5` for every trait. For a trait-activating prompt the target's `p`
//! is raised so that the reference lexicon classifier's expected score moves
//! by `activation_effect` (for an emotional-stability target, neuroticism's
//! `p` is lowered by the same amount). Filler words, the odd non-ASCII word,
//! an overlong token and trailing loops give the sanitizer real work.
//!
//! A completion is a pure function of (seed, prompt, completion index,
//! sampling config).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{truncate_tokens, CompletionBackend, CompletionError, GenerationError, SamplingConfig};
use crate::battery::{PromptCategory, PromptSpec};
use crate::lexicon::{slot_probability_for_effect, FILLER, LEXICONS, SLOTS_PER_TRAIT};
use crate::traits::Trait;

const NOISE_WORDS: [&str; 3] = ["café", "naïve", "supercalifragilisticexpialidocious"];
const LOOP_TAIL: &str = "and so on";

/// Vocabulary profile of the mock backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockProfile {
    /// Expected shift of the target trait's reference score on activating prompts.
    pub activation_effect: f64,
}

impl Default for MockProfile {
    fn default() -> Self {
        MockProfile {
            activation_effect: 0.2,
        }
    }
}

impl MockProfile {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(self.activation_effect.abs() <= 0.35) {
            return Err(GenerationError::Config(format!(
                "mock activation_effect {} must be within [-0.35, 0.35]",
                self.activation_effect
            )));
        }
        Ok(())
    }
}

pub struct MockBackend {
    seed: u64,
    model_id: String,
    high_p: f64,
    low_p: f64,
}

impl MockBackend {
    pub fn new(seed: u64, profile: MockProfile) -> Self {
        MockBackend {
            seed,
            model_id: "mock".to_string(),
            high_p: slot_probability_for_effect(profile.activation_effect),
            low_p: slot_probability_for_effect(-profile.activation_effect),
        }
    }

    fn rng_for(&self, prompt: &PromptSpec, index: u32, config: &SamplingConfig) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt.id.as_bytes());
        h.update([0]);
        h.update(prompt.text.as_bytes());
        h.update([0]);
        h.update(prompt.category.slug().as_bytes());
        h.update(index.to_le_bytes());
        h.update(config.temperature.to_bits().to_le_bytes());
        h.update(config.top_k.to_le_bytes());
        h.update(config.top_p.to_bits().to_le_bytes());
        h.update(config.max_tokens.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Probability that a slot of `head` draws from the high list.
    fn slot_probability(&self, category: PromptCategory, head: Trait) -> f64 {
        match category {
            PromptCategory::TraitActivating { target } if target == head => self.high_p,
            PromptCategory::TraitActivating {
                target: Trait::EmotionalStability,
            } if head == Trait::Neuroticism => self.low_p,
            _ => 0.5,
        }
    }

    pub fn completion(&self, prompt: &PromptSpec, index: u32, config: &SamplingConfig) -> String {
        let mut rng = self.rng_for(prompt, index, config);
        let mut words: Vec<&str> = Vec::with_capacity(LEXICONS.len() * SLOTS_PER_TRAIT);
        for lex in &LEXICONS {
            let p = self.slot_probability(prompt.category, lex.head);
            for _ in 0..SLOTS_PER_TRAIT {
                let pool = if rng.gen_bool(p) { &lex.high } else { &lex.low };
                words.push(pool[rng.gen_range(0..pool.len())]);
            }
        }
        words.shuffle(&mut rng);

        let mut out: Vec<&str> = Vec::with_capacity(words.len() * 2 + 8);
        for w in words {
            out.push(w);
            if rng.gen_bool(0.4) {
                out.push(FILLER[rng.gen_range(0..FILLER.len())]);
            }
            if rng.gen_bool(0.01) {
                out.push(NOISE_WORDS[rng.gen_range(0..NOISE_WORDS.len())]);
            }
        }
        let mut text = out.join(" ");
        text.push('.');
        if rng.gen_bool(0.1) {
            for _ in 0..3 {
                text.push(' ');
                text.push_str(LOOP_TAIL);
            }
        }
        truncate_tokens(&text, config.max_tokens as usize).to_string()
    }
}

impl CompletionBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn kind(&self) -> &'static str {
        "mock"
    }

    fn complete(
        &self,
        prompt: &PromptSpec,
        completion_index: u32,
        config: &SamplingConfig,
    ) -> Result<String, CompletionError> {
        Ok(self.completion(prompt, completion_index, config))
    }
}
