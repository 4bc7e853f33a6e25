use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{logistic, ClassifierError, TraitScorer};
use crate::lexicon::{LEXICONS, REFERENCE_WEIGHT};
use crate::traits::{Trait, TraitScores};

/// How text becomes tokens. Stored in the artifact so scoring is self-contained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub lowercase: bool,
    /// Only `non_alphanumeric` is supported.
    pub split: String,
    pub min_token_len: usize,
    pub stemming: bool,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        TokenizerSpec {
            lowercase: true,
            split: "non_alphanumeric".to_string(),
            min_token_len: 2,
            stemming: false,
        }
    }
}

impl TokenizerSpec {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= self.min_token_len)
            .map(|t| if self.lowercase { t.to_lowercase() } else { t.to_string() })
            .collect()
    }

    fn check(&self) -> Result<(), ClassifierError> {
        if self.split != "non_alphanumeric" {
            return Err(ClassifierError::Artifact(format!(
                "unsupported tokenizer split `{}`",
                self.split
            )));
        }
        if self.stemming {
            return Err(ClassifierError::Artifact("stemming is not supported".into()));
        }
        Ok(())
    }
}

/// Tokenizes with the default spec.
pub fn tokenize(text: &str) -> Vec<String> {
    TokenizerSpec::default().tokenize(text)
}

/// One logistic head over TF-IDF features (raw term count times idf).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitWeights {
    pub vocab: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl TraitWeights {
    fn check(&self, head: Trait) -> Result<(), ClassifierError> {
        let n = self.vocab.len();
        if self.idf.len() != n || self.coef.len() != n {
            return Err(ClassifierError::Artifact(format!(
                "{head}: vocab has {n} entries but idf has {} and coef has {}",
                self.idf.len(),
                self.coef.len()
            )));
        }
        let mut seen = vec![false; n];
        for (token, &idx) in &self.vocab {
            if idx >= n || std::mem::replace(&mut seen[idx], true) {
                return Err(ClassifierError::Artifact(format!(
                    "{head}: token {token:?} has invalid or duplicate index {idx}"
                )));
            }
        }
        let finite = self.idf.iter().chain(&self.coef).all(|v| v.is_finite());
        if !finite || !self.intercept.is_finite() {
            return Err(ClassifierError::Artifact(format!("{head}: non-finite weight")));
        }
        Ok(())
    }

    pub fn logit(&self, tokens: &[String]) -> f64 {
        let mut z = self.intercept;
        for t in tokens {
            if let Some(&i) = self.vocab.get(t) {
                z += self.coef[i] * self.idf[i];
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTrait {
    pub openness: TraitWeights,
    pub conscientiousness: TraitWeights,
    pub extraversion: TraitWeights,
    pub agreeableness: TraitWeights,
    pub neuroticism: TraitWeights,
}

impl PerTrait {
    pub fn from_heads(heads: [TraitWeights; 5]) -> Self {
        let [openness, conscientiousness, extraversion, agreeableness, neuroticism] = heads;
        PerTrait {
            openness,
            conscientiousness,
            extraversion,
            agreeableness,
            neuroticism,
        }
    }

    /// Heads in [`Trait::HEADS`] order.
    pub fn heads(&self) -> [&TraitWeights; 5] {
        [
            &self.openness,
            &self.conscientiousness,
            &self.extraversion,
            &self.agreeableness,
            &self.neuroticism,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Artifact {
    tokenizer: TokenizerSpec,
    per_trait: PerTrait,
}

/// The in-process classifier. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NativeModel {
    artifact: Artifact,
    classifier_id: String,
}

impl NativeModel {
    pub fn new(tokenizer: TokenizerSpec, per_trait: PerTrait) -> Result<Self, ClassifierError> {
        tokenizer.check()?;
        for (head, w) in Trait::HEADS.into_iter().zip(per_trait.heads()) {
            w.check(head)?;
        }
        let artifact = Artifact {
            tokenizer,
            per_trait,
        };
        let canonical = serde_json::to_string(&artifact).expect("artifact serializes");
        let classifier_id = format!("sha256:{}", hex::encode(Sha256::digest(canonical.as_bytes())));
        Ok(NativeModel {
            artifact,
            classifier_id,
        })
    }

    /// A model whose every head has zero weights: all probabilities are 0.5.
    pub fn zero(vocab: &[&str]) -> Self {
        let weights = || TraitWeights {
            vocab: vocab.iter().enumerate().map(|(i, t)| (t.to_string(), i)).collect(),
            idf: vec![1.0; vocab.len()],
            coef: vec![0.0; vocab.len()],
            intercept: 0.0,
        };
        let per_trait = PerTrait::from_heads(std::array::from_fn(|_| weights()));
        NativeModel::new(TokenizerSpec::default(), per_trait).expect("zero model is valid")
    }

    /// Hand-set model over the trait lexicons: each high word adds
    /// [`REFERENCE_WEIGHT`] to its head's logit and each low word subtracts it.
    pub fn reference_lexicon() -> Self {
        let heads = LEXICONS.map(|lex| {
            let mut words: Vec<(&str, f64)> = lex
                .high
                .iter()
                .map(|w| (*w, REFERENCE_WEIGHT))
                .chain(lex.low.iter().map(|w| (*w, -REFERENCE_WEIGHT)))
                .collect();
            words.sort_by(|a, b| a.0.cmp(b.0));
            TraitWeights {
                vocab: words.iter().enumerate().map(|(i, (w, _))| (w.to_string(), i)).collect(),
                idf: vec![1.0; words.len()],
                coef: words.iter().map(|(_, c)| *c).collect(),
                intercept: 0.0,
            }
        });
        NativeModel::new(TokenizerSpec::default(), PerTrait::from_heads(heads))
            .expect("reference model is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let artifact: Artifact =
            serde_json::from_str(text).map_err(|e| ClassifierError::Artifact(e.to_string()))?;
        NativeModel::new(artifact.tokenizer, artifact.per_trait)
    }

    /// Canonical serialization; [`NativeModel::classifier_id`] hashes exactly these bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.artifact).expect("artifact serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        })?;
        NativeModel::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn tokenizer(&self) -> &TokenizerSpec {
        &self.artifact.tokenizer
    }

    pub fn per_trait(&self) -> &PerTrait {
        &self.artifact.per_trait
    }
}

impl TraitScorer for NativeModel {
    fn classifier_id(&self) -> &str {
        &self.classifier_id
    }

    fn score(&self, text: &str) -> Result<TraitScores, ClassifierError> {
        if text.trim().is_empty() {
            return Err(ClassifierError::Unscorable);
        }
        let tokens = self.artifact.tokenizer.tokenize(text);
        let heads = self.artifact.per_trait.heads().map(|w| logistic(w.logit(&tokens)));
        Ok(TraitScores::from_heads(heads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("I'm SO well-Organized, a b c 42x"),
            vec!["so", "well", "organized", "42x"]
        );
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = NativeModel::zero(&["organized", "chaotic"]);
        let s = m.score("I am organized").unwrap();
        for v in s.heads() {
            assert_eq!(v, 0.5);
        }
        assert_eq!(s.emotional_stability, 0.5);
    }

    #[test]
    fn empty_text_is_unscorable() {
        let m = NativeModel::zero(&[]);
        assert!(matches!(m.score(""), Err(ClassifierError::Unscorable)));
        assert!(matches!(m.score("  \n"), Err(ClassifierError::Unscorable)));
    }

    #[test]
    fn artifact_round_trips_bit_exactly() {
        let m = NativeModel::reference_lexicon();
        let json = m.to_json();
        let back = NativeModel::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), json);
        assert_eq!(back.classifier_id(), m.classifier_id());
    }

    #[test]
    fn id_ignores_formatting_but_not_weights() {
        let m = NativeModel::reference_lexicon();
        let pretty: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        let pretty = serde_json::to_string_pretty(&pretty).unwrap();
        assert_eq!(NativeModel::from_json(&pretty).unwrap().classifier_id(), m.classifier_id());
        assert_ne!(NativeModel::zero(&[]).classifier_id(), m.classifier_id());
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let mut per_trait = NativeModel::zero(&["a1", "b2"]).per_trait().clone();
        per_trait.extraversion.coef.pop();
        let err = NativeModel::new(TokenizerSpec::default(), per_trait).unwrap_err();
        assert!(err.to_string().contains("extraversion"), "{err}");
    }

    #[test]
    fn oov_tokens_contribute_nothing() {
        let m = NativeModel::reference_lexicon();
        let a = m.score("curious").unwrap();
        let b = m.score("curious zebra xylophone").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reference_model_logit_counts_words() {
        let m = NativeModel::reference_lexicon();
        let s = m.score("curious creative routine anxious").unwrap();
        assert_eq!(s.openness, logistic(REFERENCE_WEIGHT));
        assert_eq!(s.neuroticism, logistic(REFERENCE_WEIGHT));
        assert_eq!(s.emotional_stability, 1.0 - s.neuroticism);
        assert_eq!(s.agreeableness, 0.5);
    }

    #[test]
    fn batch_matches_loop() {
        let m = NativeModel::reference_lexicon();
        let texts: Vec<String> = (0..10)
            .map(|i| format!("text {i} curious calm rude kind tidy {}", "lazy ".repeat(i)))
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let batch = m.score_batch(&refs);
        for (t, b) in refs.iter().zip(batch) {
            assert_eq!(m.score(t).unwrap(), b.unwrap());
        }
        assert_eq!(m.score_batch(&refs[..1])[0].as_ref().unwrap(), &m.score(refs[0]).unwrap());
    }

    proptest! {
        #[test]
        fn scores_are_probabilities(text in "[a-z ]{1,60}") {
            let m = NativeModel::reference_lexicon();
            if let Ok(s) = m.score(&text) {
                for v in s.heads() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert_eq!(s.emotional_stability, 1.0 - s.neuroticism);
            }
        }
    }
}
