//! Distractor candidate generation.
//!
//! The short answer is expanded into a declarative answer sentence, the
//! answer span is masked, and fill-mask models propose replacements.
//! Nearest neighbours of the answer in static word-vector tables add a
//! second, context-free source. Both feed one deduplicated pool.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use serde_json::json;

use crate::backend::{field, str_field, Transport};
use crate::error::{Error, Result};
use crate::model::{Candidate, Provenance};
use crate::taxonomy::{keyed_tokens, QuestionWordLexicon};
use crate::text::{char_find, char_len, char_slice, char_splice, cosine, normalize_text};

/// A declarative sentence containing the answer at `[start, end)` (chars).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSentence {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl AnswerSentence {
    /// Locate `answer` in `text`. Falls back to searching the normalized
    /// sentence, in which case the stored text is the normalized one.
    pub fn locate(text: &str, answer: &str) -> Result<Self> {
        let not_located = || Error::AnswerNotLocated {
            answer: answer.to_string(),
            sentence: text.to_string(),
        };
        if answer.is_empty() {
            return Err(not_located());
        }
        if let Some(start) = char_find(text, answer) {
            return Ok(AnswerSentence {
                text: text.to_string(),
                start,
                end: start + char_len(answer),
            });
        }
        let norm_text = normalize_text(text);
        let norm_answer = normalize_text(answer);
        if norm_answer.is_empty() {
            return Err(not_located());
        }
        let start = char_find(&norm_text, &norm_answer).ok_or_else(not_located)?;
        Ok(AnswerSentence {
            end: start + char_len(&norm_answer),
            text: norm_text,
            start,
        })
    }

    pub fn span_text(&self) -> &str {
        char_slice(&self.text, self.start, self.end).unwrap_or("")
    }

    /// The same sentence with `surface` in place of the answer.
    pub fn substitute(&self, surface: &str) -> AnswerSentence {
        AnswerSentence {
            text: char_splice(&self.text, self.start, self.end, surface),
            start: self.start,
            end: self.start + char_len(surface),
        }
    }
}

/// Turns (question, short answer) into a full answer sentence.
pub trait SentenceBuilder: Send + Sync {
    fn id(&self) -> &str;
    fn build(&self, question: &str, answer: &str) -> Result<String>;
}

/// `{"question", "answer"}` -> `{"sentence"}`.
pub struct ExternalSentenceBuilder {
    id: String,
    transport: Box<dyn Transport>,
}

impl ExternalSentenceBuilder {
    pub fn new(id: impl Into<String>, transport: Box<dyn Transport>) -> Self {
        ExternalSentenceBuilder {
            id: id.into(),
            transport,
        }
    }
}

impl SentenceBuilder for ExternalSentenceBuilder {
    fn id(&self) -> &str {
        &self.id
    }

    fn build(&self, question: &str, answer: &str) -> Result<String> {
        let reply = self.transport.call(&json!({"question": question, "answer": answer}))?;
        Ok(str_field(&reply, "sentence")?.to_string())
    }
}

/// Build the answer sentence. Without a builder, the first question word
/// found by the lexicon is replaced by the answer and the question mark is
/// dropped; if no question word is found the answer is appended.
pub fn build_answer_sentence(
    question: &str,
    answer: &str,
    builder: Option<&dyn SentenceBuilder>,
    lexicon: &QuestionWordLexicon,
) -> Result<AnswerSentence> {
    let answer = normalize_text(answer);
    if answer.is_empty() {
        return Err(Error::EmptyField("answer"));
    }
    if normalize_text(question).is_empty() {
        return Err(Error::EmptyField("question"));
    }
    if let Some(builder) = builder {
        let sentence = builder.build(question, &answer)?;
        return AnswerSentence::locate(&sentence, &answer);
    }

    let stripped = normalize_text(question).trim_end_matches(['?', '؟', ' ']).to_string();
    let tokens = keyed_tokens(&stripped);
    let keys: Vec<String> = tokens.iter().map(|(_, k)| k.clone()).collect();
    let mut words: Vec<String> = tokens.into_iter().map(|(t, _)| t).collect();
    match lexicon.find(&keys) {
        Some((entry, at)) => {
            words.splice(at..at + entry.pattern.len(), [answer.clone()]);
        }
        None => words.push(answer.clone()),
    }
    AnswerSentence::locate(&words.join(" "), &answer)
}

/// Replace the answer span with a single mask token.
pub fn mask_answer(sentence: &AnswerSentence, mask_token: &str) -> String {
    char_splice(&sentence.text, sentence.start, sentence.end, mask_token)
}

/// Masked language model proposing fillers for one mask token.
pub trait FillMaskBackend: Send + Sync {
    fn id(&self) -> &str;
    fn mask_token(&self) -> &str;
    /// Up to `k` predictions, best first.
    fn predict(&self, masked: &str, k: usize) -> Result<Vec<(String, f64)>>;
    fn concurrent_safe(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Deserialize)]
struct Prediction {
    token: String,
    score: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct TableSpec {
    id: String,
    #[serde(default = "default_mask")]
    mask_token: String,
    #[serde(default)]
    default: Vec<Prediction>,
    #[serde(default)]
    sentences: HashMap<String, Vec<Prediction>>,
}

fn default_mask() -> String {
    "<mask>".to_string()
}

/// Canned fill-mask predictions keyed by masked sentence, with a default
/// list for sentences not in the table.
#[derive(Debug, Clone)]
pub struct TableFillMask {
    id: String,
    mask_token: String,
    default: Vec<(String, f64)>,
    sentences: HashMap<String, Vec<(String, f64)>>,
}

fn sorted_predictions(preds: Vec<Prediction>) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = preds.into_iter().map(|p| (p.token, p.score)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

impl TableFillMask {
    pub fn new(id: impl Into<String>, mask_token: impl Into<String>, default: Vec<(String, f64)>) -> Self {
        let default = sorted_predictions(
            default
                .into_iter()
                .map(|(token, score)| Prediction { token, score })
                .collect(),
        );
        TableFillMask {
            id: id.into(),
            mask_token: mask_token.into(),
            default,
            sentences: HashMap::new(),
        }
    }

    /// JSON file: `{"id", "mask_token", "default": [{"token","score"}],
    /// "sentences": {masked: [{"token","score"}]}}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: TableSpec =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(TableFillMask {
            id: spec.id,
            mask_token: spec.mask_token,
            default: sorted_predictions(spec.default),
            sentences: spec
                .sentences
                .into_iter()
                .map(|(k, v)| (normalize_text(&k), sorted_predictions(v)))
                .collect(),
        })
    }
}

impl FillMaskBackend for TableFillMask {
    fn id(&self) -> &str {
        &self.id
    }

    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn predict(&self, masked: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let list = self.sentences.get(&normalize_text(masked)).unwrap_or(&self.default);
        Ok(list.iter().take(k).cloned().collect())
    }
}

/// `{"masked", "mask_token", "k"}` -> `{"predictions": [{"token","score"}]}`.
pub struct ExternalFillMask {
    id: String,
    mask_token: String,
    transport: Box<dyn Transport>,
}

impl ExternalFillMask {
    pub fn new(id: impl Into<String>, mask_token: impl Into<String>, transport: Box<dyn Transport>) -> Self {
        ExternalFillMask {
            id: id.into(),
            mask_token: mask_token.into(),
            transport,
        }
    }
}

impl FillMaskBackend for ExternalFillMask {
    fn id(&self) -> &str {
        &self.id
    }

    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn predict(&self, masked: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let reply = self.transport.call(&json!({
            "masked": masked,
            "mask_token": self.mask_token,
            "k": k,
        }))?;
        let preds: Vec<Prediction> = serde_json::from_value(field(&reply, "predictions")?.clone())
            .map_err(|e| Error::Backend(format!("bad predictions: {e}")))?;
        Ok(preds.into_iter().map(|p| (p.token, p.score)).collect())
    }

    fn concurrent_safe(&self) -> bool {
        self.transport.concurrent_safe()
    }
}

/// Top-`k` fill-mask predictions as candidates. Predictions equal to the
/// answer are dropped before truncation.
pub fn fillmask_candidates(
    backend: &dyn FillMaskBackend,
    masked: &str,
    answer: &str,
    k: usize,
) -> Result<Vec<Candidate>> {
    let mask = backend.mask_token();
    match masked.matches(mask).count() {
        0 => return Err(Error::NoMask(mask.to_string())),
        1 => {}
        count => {
            return Err(Error::MultipleMasks {
                token: mask.to_string(),
                count,
            })
        }
    }
    let predictions = backend
        .predict(masked, k + 1)
        .map_err(|e| Error::Backend(format!("{}: {e}", backend.id())))?;
    let mut prev = f64::INFINITY;
    for (_, score) in &predictions {
        if !score.is_finite() || *score > prev {
            return Err(Error::Backend(format!(
                "{}: scores must be finite and non-increasing",
                backend.id()
            )));
        }
        prev = *score;
    }
    let answer_key = normalize_text(answer);
    Ok(predictions
        .into_iter()
        .filter_map(|(token, score)| {
            let surface = normalize_text(&token);
            (!surface.is_empty() && surface != answer_key)
                .then(|| Candidate::new(surface, Provenance::FillMask(backend.id().to_string()), score))
        })
        .take(k)
        .collect())
}

/// Static word vectors, keyed by normalized word.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    pub embedding_id: String,
    dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl WordVectorTable {
    pub fn new(embedding_id: impl Into<String>, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let mut table = WordVectorTable {
            embedding_id: embedding_id.into(),
            dim,
            words: Vec::with_capacity(entries.len()),
            vectors: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
        };
        for (word, vector) in entries {
            table.push(word, vector)?;
        }
        Ok(table)
    }

    fn push(&mut self, word: String, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Config(format!(
                "vector for {word:?} has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        let key = normalize_text(&word);
        if key.is_empty() {
            return Err(Error::Config("empty word in vector table".into()));
        }
        if let Some(&prev) = self.index.get(&key) {
            return Err(Error::DuplicateLabel {
                first: self.words[prev].clone(),
                second: word,
            });
        }
        self.index.insert(key.clone(), self.words.len());
        self.words.push(key);
        self.vectors.push(vector);
        Ok(())
    }

    /// Text format: `word v1 ... vdim` per line, optional `count dim` header.
    pub fn parse(embedding_id: &str, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut declared: Option<(usize, usize)> = None;
        for (no, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if no == 0 && fields.len() == 2 {
                if let (Ok(count), Ok(dim)) = (fields[0].parse(), fields[1].parse()) {
                    declared = Some((count, dim));
                    continue;
                }
            }
            let malformed = |detail: String| Error::MalformedLine { line: no + 1, detail };
            if fields.len() < 2 {
                return Err(malformed("word without vector".into()));
            }
            let vector = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| malformed(format!("{v:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(malformed("non-finite component".into()));
            }
            entries.push((fields[0].to_string(), vector));
        }
        let table = Self::new(embedding_id, entries)?;
        if let Some((count, dim)) = declared {
            if count != table.len() || (table.len() > 0 && dim != table.dim) {
                return Err(Error::Config(format!(
                    "header declares {count}x{dim}, found {}x{}",
                    table.len(),
                    table.dim
                )));
            }
        }
        Ok(table)
    }

    pub fn load(embedding_id: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(embedding_id, &text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(&normalize_text(word))
            .map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }
}

/// The `k` nearest table words to the answer by cosine similarity, ties
/// broken by word. Empty when the answer is not in the table.
pub fn embedding_candidates(table: &WordVectorTable, answer: &str, k: usize) -> Vec<Candidate> {
    let key = normalize_text(answer);
    let Some(&own) = table.index.get(&key) else {
        return Vec::new();
    };
    let target = &table.vectors[own];
    let mut scored: Vec<(usize, f64)> = (0..table.len())
        .filter(|&i| i != own)
        .map(|i| (i, cosine(target, &table.vectors[i])))
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| table.words[a.0].cmp(&table.words[b.0]))
    });
    scored
        .into_iter()
        .take(k)
        .map(|(i, sim)| {
            Candidate::new(
                table.words[i].clone(),
                Provenance::StaticEmbedding(table.embedding_id.clone()),
                sim,
            )
        })
        .collect()
}

fn pool_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.provenance
        .class_rank()
        .cmp(&b.provenance.class_rank())
        .then_with(|| b.generator_score.total_cmp(&a.generator_score))
        .then_with(|| a.surface.cmp(&b.surface))
}

/// Concatenate candidate lists into one pool: deduplicated by normalized
/// surface, answer removed, fill-mask candidates first and each class by
/// descending generator score. Among duplicates the fill-mask occurrence
/// wins, then the higher score.
pub fn merge_pool(lists: Vec<Vec<Candidate>>, answer: &str) -> Vec<Candidate> {
    let answer_key = normalize_text(answer);
    let mut best: HashMap<String, Candidate> = HashMap::new();
    for cand in lists.into_iter().flatten() {
        let key = cand.key();
        if key.is_empty() || key == answer_key {
            continue;
        }
        match best.get(&key) {
            Some(kept)
                if (
                    kept.provenance.class_rank(),
                    std::cmp::Reverse(OrdF64(kept.generator_score)),
                ) <= (
                    cand.provenance.class_rank(),
                    std::cmp::Reverse(OrdF64(cand.generator_score)),
                ) => {}
            _ => {
                best.insert(key, cand);
            }
        }
    }
    let mut pool: Vec<Candidate> = best.into_values().collect();
    pool.sort_by(pool_order);
    pool
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
