//! Distractor ranking: contextual similarity and KG similarity, min-max
//! normalized per question, fused, then the top few are kept.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::backend::{field, Transport};
use crate::candidates::AnswerSentence;
use crate::error::{Error, Result};
use crate::kg::{entity_similarity, ComplexEmbedding, TripleStore};
use crate::model::{
    Candidate, ContentLabel, FusionWeights, ItemFlag, McqItem, PipelineConfig, QType, QaRecord, ShuffleScope,
};
use crate::text::{char_len, char_slice, cosine, fnv1a, normalize_text};

/// Hidden vector for the target span of a sentence. Adapters over real
/// encoders return the mean of the span's token vectors taken from the
/// output of the second transformer block (the embedding layer is not
/// counted).
pub trait ContextEncoder: Send + Sync {
    fn id(&self) -> &str;
    /// `span` is a `[start, end)` char range.
    fn embed(&self, sentence: &str, span: (usize, usize)) -> Result<Vec<f64>>;
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Deterministic encoder without model weights. Each token maps to a
/// signed bag of hashed character trigrams; the target vector is the mean
/// over span tokens plus a damped mean over the rest of the sentence.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        HashingEncoder { dim: dim.max(1) }
    }

    fn token_vector(&self, token: &str, out: &mut [f64], weight: f64) {
        let padded: Vec<char> = format!("<{token}>").chars().collect();
        for gram in padded.windows(3.min(padded.len())) {
            let s: String = gram.iter().collect();
            let h = fnv1a(s.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            out[(h % self.dim as u64) as usize] += sign * weight;
        }
    }
}

impl Default for HashingEncoder {
    fn default() -> Self {
        HashingEncoder::new(64)
    }
}

impl ContextEncoder for HashingEncoder {
    fn id(&self) -> &str {
        "hashing"
    }

    fn embed(&self, sentence: &str, span: (usize, usize)) -> Result<Vec<f64>> {
        let (start, end) = span;
        let target = char_slice(sentence, start, end)
            .ok_or_else(|| Error::Encoder(format!("span {start}..{end} outside sentence")))?;
        let before = char_slice(sentence, 0, start).unwrap_or("");
        let after = char_slice(sentence, end, char_len(sentence)).unwrap_or("");
        let mut v = vec![0.0; self.dim];
        let target_tokens: Vec<String> = target.split_whitespace().map(|t| t.to_lowercase()).collect();
        if target_tokens.is_empty() {
            return Err(Error::Encoder("empty target span".into()));
        }
        let w = 1.0 / target_tokens.len() as f64;
        for t in &target_tokens {
            self.token_vector(t, &mut v, w);
        }
        let context: Vec<String> = before
            .split_whitespace()
            .chain(after.split_whitespace())
            .map(|t| t.to_lowercase())
            .collect();
        if !context.is_empty() {
            let w = 0.25 / context.len() as f64;
            for t in &context {
                self.token_vector(t, &mut v, w);
            }
        }
        Ok(v)
    }
}

/// Encoder over the external protocol:
/// `{"sentence", "span": [start, end]}` -> `{"vector"}`.
pub struct ExternalEncoder {
    id: String,
    transport: Box<dyn Transport>,
}

impl ExternalEncoder {
    pub fn new(id: impl Into<String>, transport: Box<dyn Transport>) -> Self {
        ExternalEncoder {
            id: id.into(),
            transport,
        }
    }
}

impl ContextEncoder for ExternalEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, sentence: &str, span: (usize, usize)) -> Result<Vec<f64>> {
        let reply = self
            .transport
            .call(&json!({"sentence": sentence, "span": [span.0, span.1]}))
            .map_err(|e| Error::Encoder(e.to_string()))?;
        let values = field(&reply, "vector")
            .map_err(|e| Error::Encoder(e.to_string()))?
            .as_array()
            .ok_or_else(|| Error::Encoder("vector is not an array".into()))?;
        values
            .iter()
            .map(|v| {
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Encoder("vector holds a non-finite value".into()))
            })
            .collect()
    }

    fn concurrent_safe(&self) -> bool {
        self.transport.concurrent_safe()
    }
}

/// Cosine between the answer's vector in `s` and the candidate's vector
/// with the candidate substituted at the answer span.
pub fn context_similarity(enc: &dyn ContextEncoder, s: &AnswerSentence, cand: &str) -> Result<f64> {
    let a = enc.embed(&s.text, (s.start, s.end))?;
    let sub = s.substitute(cand);
    let b = enc.embed(&sub.text, (sub.start, sub.end))?;
    if a.len() != b.len() {
        return Err(Error::Encoder(format!(
            "{} returned vectors of length {} and {}",
            enc.id(),
            a.len(),
            b.len()
        )));
    }
    Ok(cosine(&a, &b))
}

/// Min-max scaling into [0, 1]; a constant (or singleton) series maps to
/// 0.5 and missing entries stay missing.
pub fn minmax_normalize(xs: &[Option<f64>]) -> Vec<Option<f64>> {
    let present = xs.iter().flatten();
    let min = present.clone().copied().fold(f64::INFINITY, f64::min);
    let max = present.copied().fold(f64::NEG_INFINITY, f64::max);
    xs.iter()
        .map(|x| {
            x.map(|x| {
                if max > min {
                    ((x - min) / (max - min)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            })
        })
        .collect()
}

pub fn fuse_scores(kg: Option<f64>, ctx: Option<f64>, weights: FusionWeights) -> Result<f64> {
    match (kg, ctx) {
        (Some(k), Some(c)) => Ok(weights.kg * k + weights.ctx * c),
        (Some(x), None) | (None, Some(x)) => Ok(x),
        (None, None) => Err(Error::BothMissing),
    }
}

/// KG side of ranking: a triple store with trained embeddings.
#[derive(Clone, Copy)]
pub struct KgSimilarity<'a> {
    pub store: &'a TripleStore,
    pub embedding: &'a ComplexEmbedding,
}

/// Fill `kg_score`, `context_score` (both normalized over the pool) and
/// `fused_score` for every candidate.
pub fn score_candidates(
    mut cands: Vec<Candidate>,
    sentence: &AnswerSentence,
    answer: &str,
    encoder: Option<&dyn ContextEncoder>,
    kg: Option<KgSimilarity<'_>>,
    weights: FusionWeights,
) -> Result<Vec<Candidate>> {
    let raw_kg: Vec<Option<f64>> = cands
        .iter()
        .map(|c| kg.and_then(|kg| entity_similarity(kg.store, kg.embedding, answer, &c.surface)))
        .collect();
    let raw_ctx: Vec<Option<f64>> = match encoder {
        Some(enc) => cands
            .iter()
            .map(|c| context_similarity(enc, sentence, &c.surface).map(Some))
            .collect::<Result<_>>()?,
        None => vec![None; cands.len()],
    };
    let kg_norm = minmax_normalize(&raw_kg);
    let ctx_norm = minmax_normalize(&raw_ctx);
    for ((c, k), x) in cands.iter_mut().zip(kg_norm).zip(ctx_norm) {
        c.kg_score = k;
        c.context_score = x;
        c.fused_score = Some(fuse_scores(k, x, weights)?);
    }
    Ok(cands)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub candidate: Candidate,
    pub rank: usize,
}

/// Ranking order: fused score descending, fill-mask before static
/// embedding, generator score descending, surface ascending. Missing
/// fused scores sort last.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    let fused = |c: &Candidate| c.fused_score.unwrap_or(f64::NEG_INFINITY);
    fused(b)
        .total_cmp(&fused(a))
        .then_with(|| a.provenance.class_rank().cmp(&b.provenance.class_rank()))
        .then_with(|| b.generator_score.total_cmp(&a.generator_score))
        .then_with(|| a.surface.cmp(&b.surface))
}

pub fn select_top(mut cands: Vec<Candidate>, n: usize) -> Vec<RankedCandidate> {
    cands.sort_by(rank_order);
    cands
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, candidate)| RankedCandidate { candidate, rank: i + 1 })
        .collect()
}

/// Seed for the choice shuffle: first eight bytes of
/// SHA-256(scope seed || item id).
pub fn shuffle_seed(id: &str, scope: ShuffleScope) -> u64 {
    let mut hasher = Sha256::new();
    if let ShuffleScope::Global(seed) = scope {
        hasher.update(seed.to_le_bytes());
    }
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub fn assemble_mcq(
    rec: &QaRecord,
    question: &str,
    top: &[RankedCandidate],
    qtype: QType,
    cfg: &PipelineConfig,
) -> Result<McqItem> {
    if top.is_empty() {
        return Err(Error::EmptyTop);
    }
    if top.len() > cfg.distractor_count {
        return Err(Error::InvariantViolation {
            id: rec.id.clone(),
            detail: format!("{} distractors, at most {} allowed", top.len(), cfg.distractor_count),
        });
    }
    let answer = normalize_text(&rec.answer);
    let mut choices: Vec<String> = std::iter::once(answer.clone())
        .chain(top.iter().map(|r| r.candidate.surface.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(&rec.id, cfg.shuffle_seed_scope));
    choices.shuffle(&mut rng);
    let correct_index = choices
        .iter()
        .position(|c| *c == answer)
        .expect("answer is among the choices");
    let mut item = McqItem {
        id: rec.id.clone(),
        question: question.to_string(),
        choices,
        correct_index,
        qtype,
        content: ContentLabel::Others,
        flags: Default::default(),
    };
    if top.len() < cfg.distractor_count {
        item.flags.insert(ItemFlag::IncompleteDistractors);
    }
    item.validate_against(&rec.answer)?;
    Ok(item)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Provenance;

    fn fm(s: &str, fused: f64, gen: f64) -> Candidate {
        let mut c = Candidate::new(s, Provenance::FillMask("m".into()), gen);
        c.fused_score = Some(fused);
        c
    }

    fn emb(s: &str, fused: f64, gen: f64) -> Candidate {
        let mut c = Candidate::new(s, Provenance::StaticEmbedding("e".into()), gen);
        c.fused_score = Some(fused);
        c
    }

    struct Fixed(Vec<f64>, Vec<f64>);
    impl ContextEncoder for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn embed(&self, sentence: &str, _: (usize, usize)) -> Result<Vec<f64>> {
            Ok(if sentence.contains("answer") {
                self.0.clone()
            } else {
                self.1.clone()
            })
        }
    }

    #[test]
    fn context_similarity_examples() {
        let s = AnswerSentence::locate("the answer is here", "answer").unwrap();
        let enc = HashingEncoder::default();
        assert!((context_similarity(&enc, &s, "answer").unwrap() - 1.0).abs() < 1e-12);
        let orth = Fixed(vec![1.0, 0.0], vec![0.0, 1.0]);
        assert_eq!(context_similarity(&orth, &s, "other").unwrap(), 0.0);
        let anti = Fixed(vec![1.0, 2.0], vec![-1.0, -2.0]);
        assert!((context_similarity(&anti, &s, "other").unwrap() + 1.0).abs() < 1e-12);
        let bad = Fixed(vec![1.0, 2.0], vec![1.0]);
        assert!(matches!(context_similarity(&bad, &s, "other"), Err(Error::Encoder(_))));
    }

    #[test]
    fn minmax_examples() {
        let f = |xs: &[f64]| minmax_normalize(&xs.iter().map(|&x| Some(x)).collect::<Vec<_>>());
        assert_eq!(f(&[2.0, 4.0, 6.0]), vec![Some(0.0), Some(0.5), Some(1.0)]);
        assert_eq!(f(&[3.0, 3.0]), vec![Some(0.5), Some(0.5)]);
        assert_eq!(f(&[7.0]), vec![Some(0.5)]);
        assert_eq!(
            minmax_normalize(&[None, Some(1.0), Some(3.0)]),
            vec![None, Some(0.0), Some(1.0)]
        );
        assert!(f(&[]).is_empty());
    }

    #[test]
    fn fusion_examples() {
        let w = FusionWeights::default();
        assert!((fuse_scores(Some(0.8), Some(0.6), w).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(fuse_scores(None, Some(0.9), w).unwrap(), 0.9);
        assert!(matches!(fuse_scores(None, None, w), Err(Error::BothMissing)));
    }

    #[test]
    fn tie_breaks() {
        let pool = vec![emb("e", 0.7, 9.0), fm("a", 0.9, 0.1), fm("f", 0.7, 0.1)];
        let top = select_top(pool, 3);
        let order: Vec<&str> = top.iter().map(|r| r.candidate.surface.as_str()).collect();
        assert_eq!(order, vec!["a", "f", "e"]);
        assert_eq!(top.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(select_top(vec![fm("a", 0.1, 0.0), fm("b", 0.2, 0.0)], 3).len(), 2);
        assert!(select_top(vec![], 3).is_empty());
    }

    fn rec() -> QaRecord {
        QaRecord {
            id: "q-7".into(),
            context: "Tehran is the capital of Iran.".into(),
            question: String::new(),
            answer: "Tehran".into(),
            answer_start: Some(0),
            metadata: Default::default(),
        }
    }

    #[test]
    fn assembly() {
        let cfg = PipelineConfig::default();
        let top = select_top(
            vec![fm("Paris", 0.9, 0.0), fm("Kabul", 0.8, 0.0), fm("Baghdad", 0.7, 0.0)],
            3,
        );
        let item = assemble_mcq(&rec(), "Which city?", &top, QType::Which, &cfg).unwrap();
        assert_eq!(item.choices.len(), 4);
        assert_eq!(item.choices.iter().filter(|c| *c == "Tehran").count(), 1);
        assert_eq!(item.choices[item.correct_index], "Tehran");
        assert!(item.flags.is_empty());
        let again = assemble_mcq(&rec(), "Which city?", &top, QType::Which, &cfg).unwrap();
        assert_eq!(item.choices, again.choices);

        let short = assemble_mcq(&rec(), "Which city?", &top[..2], QType::Which, &cfg).unwrap();
        assert!(short.flags.contains(&ItemFlag::IncompleteDistractors));
        assert_eq!(short.choices.len(), 3);
        assert!(matches!(
            assemble_mcq(&rec(), "q", &[], QType::What, &cfg),
            Err(Error::EmptyTop)
        ));
    }

    #[test]
    fn global_scope_changes_seed() {
        assert_ne!(
            shuffle_seed("a", ShuffleScope::PerItemId),
            shuffle_seed("a", ShuffleScope::Global(1))
        );
        assert_eq!(
            shuffle_seed("a", ShuffleScope::Global(1)),
            shuffle_seed("a", ShuffleScope::Global(1))
        );
    }
}
