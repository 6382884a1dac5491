//! Domain types shared by all pipeline stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{char_len, char_slice, normalize_text};

/// A source item: a passage, a question about it and the short answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub context: String,
    #[serde(default)]
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_start: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl QaRecord {
    pub fn validate(&self) -> Result<()> {
        if normalize_text(&self.answer).is_empty() {
            return Err(Error::InvariantViolation {
                id: self.id.clone(),
                detail: "answer is empty".into(),
            });
        }
        if let Some(start) = self.answer_start {
            let end = start + char_len(&self.answer);
            let matches = char_slice(&self.context, start, end)
                .is_some_and(|span| normalize_text(span) == normalize_text(&self.answer));
            if !matches {
                return Err(Error::SpanMismatch(self.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    FillMask(String),
    StaticEmbedding(String),
}

impl Provenance {
    /// Ordering rank of the provenance class: fill-mask first.
    pub fn class_rank(&self) -> u8 {
        match self {
            Provenance::FillMask(_) => 0,
            Provenance::StaticEmbedding(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FilterStage {
    Pos,
    WrittenForm,
    Ner,
    Dedupe,
}

impl FilterStage {
    pub const ALL: [FilterStage; 4] = [
        FilterStage::Pos,
        FilterStage::WrittenForm,
        FilterStage::Ner,
        FilterStage::Dedupe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterStage::Pos => "POS",
            FilterStage::WrittenForm => "WRITTEN_FORM",
            FilterStage::Ner => "NER",
            FilterStage::Dedupe => "DEDUPE",
        }
    }
}

impl FromStr for FilterStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterStage::ALL
            .into_iter()
            .find(|stage| stage.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown filter stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub stage: FilterStage,
    pub passed: bool,
    pub reason: String,
}

impl FilterVerdict {
    pub fn reject(stage: FilterStage, reason: impl Into<String>) -> Self {
        let reason = reason.into();
        debug_assert!(!reason.is_empty());
        FilterVerdict {
            stage,
            passed: false,
            reason,
        }
    }
}

/// A distractor candidate with its scores and audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub surface: String,
    pub provenance: Provenance,
    pub generator_score: f64,
    pub kg_score: Option<f64>,
    pub context_score: Option<f64>,
    pub fused_score: Option<f64>,
    #[serde(default)]
    pub rejections: Vec<FilterVerdict>,
}

impl Candidate {
    pub fn new(surface: impl Into<String>, provenance: Provenance, generator_score: f64) -> Self {
        Candidate {
            surface: surface.into(),
            provenance,
            generator_score,
            kg_score: None,
            context_score: None,
            fused_score: None,
            rejections: Vec::new(),
        }
    }

    pub fn key(&self) -> String {
        normalize_text(&self.surface)
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let wanted = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(wanted))
                    .ok_or_else(|| Error::Config(format!(concat!("unknown ", stringify!($name), " {:?}"), s)))
            }
        }
    };
}

label_enum!(
    /// Question type, decided by the question word.
    QType {
        What => "WHAT",
        When => "WHEN",
        How => "HOW",
        HowMany => "HOW_MANY",
        Where => "WHERE",
        Who => "WHO",
        Which => "WHICH",
    }
);

label_enum!(
    /// Content category of a question.
    ContentLabel {
        History => "HISTORY",
        Technology => "TECHNOLOGY",
        HealthMedicine => "HEALTH_MEDICINE",
        EconomyCommerce => "ECONOMY_COMMERCE",
        Politics => "POLITICS",
        Geography => "GEOGRAPHY",
        ArtCulture => "ART_CULTURE",
        Science => "SCIENCE",
        Sport => "SPORT",
        Society => "SOCIETY",
        Religion => "RELIGION",
        Others => "OTHERS",
    }
);

label_enum!(
    ItemFlag {
        IncompleteDistractors => "INCOMPLETE_DISTRACTORS",
        FilterRelaxed => "FILTER_RELAXED",
    }
);

/// A finished four-choice question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub question: String,
    pub choices: Vec<String>,
    pub correct_index: usize,
    pub qtype: QType,
    pub content: ContentLabel,
    #[serde(default)]
    pub flags: BTreeSet<ItemFlag>,
}

pub const CHOICE_COUNT: usize = 4;

impl McqItem {
    /// Checks choice count, pairwise distinctness and the correct index.
    /// Items flagged incomplete may carry fewer than four choices.
    pub fn validate(&self) -> Result<()> {
        let violation = |detail: String| Error::InvariantViolation {
            id: self.id.clone(),
            detail,
        };
        let incomplete = self.flags.contains(&ItemFlag::IncompleteDistractors);
        let count_ok = if incomplete {
            (2..=CHOICE_COUNT).contains(&self.choices.len())
        } else {
            self.choices.len() == CHOICE_COUNT
        };
        if !count_ok {
            return Err(violation(format!("{} choices", self.choices.len())));
        }
        if self.correct_index >= self.choices.len() {
            return Err(violation(format!("correct_index {} out of range", self.correct_index)));
        }
        let mut seen = BTreeSet::new();
        for choice in &self.choices {
            let key = normalize_text(choice);
            if key.is_empty() {
                return Err(violation("empty choice".into()));
            }
            if !seen.insert(key) {
                return Err(violation(format!("duplicate choice {choice:?}")));
            }
        }
        Ok(())
    }

    /// Validate and additionally check the correct choice against `answer`.
    pub fn validate_against(&self, answer: &str) -> Result<()> {
        self.validate()?;
        if normalize_text(&self.choices[self.correct_index]) != normalize_text(answer) {
            return Err(Error::InvariantViolation {
                id: self.id.clone(),
                detail: "correct choice differs from the answer".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", content = "seed", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ShuffleScope {
    PerItemId,
    Global(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub kg: f64,
    pub ctx: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { kg: 0.5, ctx: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fillmask_top_k: usize,
    pub embedding_top_k: usize,
    pub distractor_count: usize,
    pub shuffle_seed_scope: ShuffleScope,
    pub relaxation_policy: Vec<FilterStage>,
    pub fusion_weights: FusionWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fillmask_top_k: 20,
            embedding_top_k: 10,
            distractor_count: 3,
            shuffle_seed_scope: ShuffleScope::PerItemId,
            relaxation_policy: vec![FilterStage::Pos, FilterStage::Ner],
            fusion_weights: FusionWeights::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fillmask_top_k == 0 || self.embedding_top_k == 0 || self.distractor_count == 0 {
            return Err(Error::Config("counts must be at least 1".into()));
        }
        if self.distractor_count >= CHOICE_COUNT {
            return Err(Error::Config(format!("distractor_count must be below {CHOICE_COUNT}")));
        }
        let FusionWeights { kg, ctx } = self.fusion_weights;
        if kg < 0.0 || ctx < 0.0 || (kg + ctx - 1.0).abs() > 1e-9 {
            return Err(Error::Config("fusion weights must be non-negative and sum to 1".into()));
        }
        if self.relaxation_policy.contains(&FilterStage::Dedupe) {
            return Err(Error::Config("the dedupe stage cannot be relaxed".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(choices: &[&str], correct: usize) -> McqItem {
        McqItem {
            id: "q1".into(),
            question: "Which city?".into(),
            choices: choices.iter().map(|s| s.to_string()).collect(),
            correct_index: correct,
            qtype: QType::Which,
            content: ContentLabel::Geography,
            flags: BTreeSet::new(),
        }
    }

    #[test]
    fn span_check() {
        let mut rec = QaRecord {
            id: "a".into(),
            context: "Tehran is the capital of Iran.".into(),
            question: String::new(),
            answer: "Iran".into(),
            answer_start: Some(25),
            metadata: BTreeMap::new(),
        };
        rec.validate().unwrap();
        rec.answer_start = Some(0);
        assert!(matches!(rec.validate(), Err(Error::SpanMismatch(id)) if id == "a"));
        rec.answer_start = Some(40);
        assert!(rec.validate().is_err());
    }

    #[test]
    fn item_validation() {
        item(&["a", "b", "c", "d"], 2).validate_against("c").unwrap();
        assert!(item(&["a", "b", "b ", "d"], 0).validate().is_err());
        assert!(item(&["a", "b", "c"], 0).validate().is_err());
        assert!(item(&["a", "b", "c", "d"], 4).validate().is_err());
        assert!(item(&["a", "b", "c", "d"], 1).validate_against("c").is_err());
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for q in QType::ALL {
            assert_eq!(q.as_str().parse::<QType>().unwrap(), *q);
        }
        assert_eq!("how_many".parse::<QType>().unwrap(), QType::HowMany);
        assert_eq!(ContentLabel::ALL.len(), 12);
        assert_eq!(
            serde_json::to_string(&ContentLabel::HealthMedicine).unwrap(),
            "\"HEALTH_MEDICINE\""
        );
    }

    #[test]
    fn config_checks() {
        PipelineConfig::default().validate().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.fusion_weights = FusionWeights { kg: 0.7, ctx: 0.7 };
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.distractor_count = 0;
        assert!(cfg.validate().is_err());
    }
}
