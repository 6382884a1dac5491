//! Candidate filtering: syntactic agreement, written-form unification,
//! entity-type agreement and deduplication, with relaxation when too few
//! candidates survive.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{field, Transport};
use crate::candidates::AnswerSentence;
use crate::error::{Error, Result};
use crate::model::{Candidate, FilterStage, FilterVerdict, PipelineConfig};
use crate::numwords::{is_digits_only, normalize_written_form};
use crate::text::{char_len, fold_case, is_punct};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub text: String,
    pub upos: String,
    pub deprel: String,
    /// 1-based index of the syntactic head, 0 for the root.
    #[serde(default)]
    pub head: Option<usize>,
}

/// POS tagger and dependency parser.
pub trait Tagger: Send + Sync {
    fn id(&self) -> &str;
    /// Tokens in sentence order; separated in the input only by optional
    /// whitespace.
    fn tag(&self, sentence: &str) -> Result<Vec<TaggedToken>>;
}

pub trait EntityRecognizer: Send + Sync {
    fn id(&self) -> &str;
    fn labels(&self) -> &[String];
    fn recognize(&self, text: &str, context: Option<&str>) -> Result<Option<String>>;
}

/// Dictionary tagger for tests and offline runs. Lexicon lines are
/// `token<TAB>upos<TAB>deprel`; digits tag as NUM/nummod, punctuation as
/// PUNCT/punct and anything else gets the fallback tags.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    entries: HashMap<String, (String, String)>,
    fallback: (String, String),
}

impl LexiconTagger {
    pub fn new(entries: impl IntoIterator<Item = (String, String, String)>) -> Self {
        LexiconTagger {
            entries: entries
                .into_iter()
                .map(|(tok, upos, dep)| (fold_case(&tok), (upos, dep)))
                .collect(),
            fallback: ("NOUN".into(), "dep".into()),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
                return Err(Error::MalformedLine {
                    line: no + 1,
                    detail: "expected token<TAB>upos<TAB>deprel".into(),
                });
            }
            entries.push((cols[0].to_string(), cols[1].to_string(), cols[2].to_string()));
        }
        Ok(Self::new(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn tags_for(&self, token: &str) -> (String, String) {
        if token.chars().all(is_punct) {
            return ("PUNCT".into(), "punct".into());
        }
        let key = fold_case(token);
        if let Some(tags) = self.entries.get(&key) {
            return tags.clone();
        }
        if is_digits_only(&key) {
            return ("NUM".into(), "nummod".into());
        }
        self.fallback.clone()
    }
}

fn split_punct(word: &str) -> Vec<&str> {
    let core_start = word.find(|c: char| !is_punct(c));
    let Some(start) = core_start else {
        return vec![word];
    };
    let end = word
        .char_indices()
        .rev()
        .find(|(_, c)| !is_punct(*c))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(word.len());
    let mut parts = Vec::with_capacity(3);
    if start > 0 {
        parts.push(&word[..start]);
    }
    parts.push(&word[start..end]);
    if end < word.len() {
        parts.push(&word[end..]);
    }
    parts
}

impl Tagger for LexiconTagger {
    fn id(&self) -> &str {
        "lexicon"
    }

    fn tag(&self, sentence: &str) -> Result<Vec<TaggedToken>> {
        Ok(sentence
            .split_whitespace()
            .flat_map(split_punct)
            .map(|tok| {
                let (upos, deprel) = self.tags_for(tok);
                TaggedToken {
                    text: tok.to_string(),
                    upos,
                    deprel,
                    head: None,
                }
            })
            .collect())
    }
}

/// Dictionary recognizer: `surface<TAB>LABEL` lines, matched after
/// case folding.
#[derive(Debug, Clone)]
pub struct GazetteerRecognizer {
    entries: HashMap<String, String>,
    labels: Vec<String>,
}

impl GazetteerRecognizer {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        let entries: HashMap<String, String> = entries.into_iter().map(|(s, l)| (fold_case(&s), l)).collect();
        let mut labels: Vec<String> = entries.values().cloned().collect();
        labels.sort();
        labels.dedup();
        GazetteerRecognizer { entries, labels }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, label) = line.split_once('\t').ok_or_else(|| Error::MalformedLine {
                line: no + 1,
                detail: "expected surface<TAB>LABEL".into(),
            })?;
            entries.push((surface.to_string(), label.trim().to_string()));
        }
        Ok(Self::new(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

impl EntityRecognizer for GazetteerRecognizer {
    fn id(&self) -> &str {
        "gazetteer"
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn recognize(&self, text: &str, _context: Option<&str>) -> Result<Option<String>> {
        Ok(self.entries.get(&fold_case(text)).cloned())
    }
}

/// `{"sentence"}` -> `{"tokens": [{"text","upos","deprel","head"?}]}`.
pub struct ExternalTagger {
    id: String,
    transport: Box<dyn Transport>,
}

impl ExternalTagger {
    pub fn new(id: impl Into<String>, transport: Box<dyn Transport>) -> Self {
        ExternalTagger {
            id: id.into(),
            transport,
        }
    }
}

impl Tagger for ExternalTagger {
    fn id(&self) -> &str {
        &self.id
    }

    fn tag(&self, sentence: &str) -> Result<Vec<TaggedToken>> {
        let reply = self
            .transport
            .call(&json!({ "sentence": sentence }))
            .map_err(|e| Error::Tagger(e.to_string()))?;
        let tokens = field(&reply, "tokens").map_err(|e| Error::Tagger(e.to_string()))?;
        serde_json::from_value(tokens.clone()).map_err(|e| Error::Tagger(e.to_string()))
    }
}

/// `{"text", "context"}` -> `{"label": str | null}`; labels are declared
/// up front.
pub struct ExternalRecognizer {
    id: String,
    labels: Vec<String>,
    transport: Box<dyn Transport>,
}

impl ExternalRecognizer {
    pub fn new(id: impl Into<String>, labels: Vec<String>, transport: Box<dyn Transport>) -> Self {
        ExternalRecognizer {
            id: id.into(),
            labels,
            transport,
        }
    }
}

impl EntityRecognizer for ExternalRecognizer {
    fn id(&self) -> &str {
        &self.id
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn recognize(&self, text: &str, context: Option<&str>) -> Result<Option<String>> {
        let reply = self
            .transport
            .call(&json!({ "text": text, "context": context }))
            .map_err(|e| Error::Ner(e.to_string()))?;
        match reply.get("label") {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(label)) if label.is_empty() || label == "O" => Ok(None),
            Some(Value::String(label)) => {
                if !self.labels.is_empty() && !self.labels.contains(label) {
                    return Err(Error::Ner(format!("undeclared label {label:?}")));
                }
                Ok(Some(label.clone()))
            }
            Some(other) => Err(Error::Ner(format!("bad label {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerCategory {
    Numbers,
    Others,
    Entity(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerProfile {
    pub upos: String,
    pub deprel: String,
    pub entity: Option<String>,
    pub category: AnswerCategory,
}

/// Char offsets of each token, found by scanning the sentence in order.
fn token_offsets(sentence: &str, tokens: &[TaggedToken]) -> Result<Vec<(usize, usize)>> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut cursor = 0;
    let mut out = Vec::with_capacity(tokens.len());
    for token in tokens {
        while cursor < chars.len() && chars[cursor].is_whitespace() {
            cursor += 1;
        }
        let len = char_len(&token.text);
        let found: String = chars.iter().skip(cursor).take(len).collect();
        if len == 0 || found != token.text {
            return Err(Error::Tagger(format!(
                "token {:?} does not align with the sentence at char {cursor}",
                token.text
            )));
        }
        out.push((cursor, cursor + len));
        cursor += len;
    }
    Ok(out)
}

/// The token standing for the span `[start, end)`: the only overlapping
/// token, or among several the first whose head lies outside the span,
/// or the last one when the tagger gives no heads.
fn span_head<'t>(tokens: &'t [TaggedToken], sentence: &str, start: usize, end: usize) -> Result<&'t TaggedToken> {
    let offsets = token_offsets(sentence, tokens)?;
    let inside: Vec<usize> = offsets
        .iter()
        .enumerate()
        .filter(|(_, (s, e))| *s < end && *e > start)
        .map(|(i, _)| i)
        .collect();
    let (&first, &last) = match (inside.first(), inside.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Tagger("no token covers the answer span".into())),
    };
    if first == last {
        return Ok(&tokens[first]);
    }
    let in_span = |i: usize| inside.contains(&i);
    let head = inside.iter().copied().find(|&i| match tokens[i].head {
        Some(0) => true,
        Some(h) => !in_span(h - 1),
        None => false,
    });
    Ok(&tokens[head.unwrap_or(last)])
}

fn tag_span(tagger: &dyn Tagger, sentence: &AnswerSentence) -> Result<(String, String)> {
    let tokens = tagger.tag(&sentence.text)?;
    let head = span_head(&tokens, &sentence.text, sentence.start, sentence.end)?;
    Ok((head.upos.clone(), head.deprel.clone()))
}

/// Numbers if the written-form-normalized answer is all digits, otherwise
/// the recognizer's entity label, otherwise Others.
pub fn profile_answer(
    sentence: &AnswerSentence,
    tagger: &dyn Tagger,
    ner: &dyn EntityRecognizer,
) -> Result<AnswerProfile> {
    let (upos, deprel) = tag_span(tagger, sentence)?;
    let answer = sentence.span_text();
    let entity = ner.recognize(answer, Some(&sentence.text))?;
    let category = if is_digits_only(&normalize_written_form(answer)) {
        AnswerCategory::Numbers
    } else {
        match &entity {
            Some(label) => AnswerCategory::Entity(label.clone()),
            None => AnswerCategory::Others,
        }
    };
    Ok(AnswerProfile {
        upos,
        deprel,
        entity,
        category,
    })
}

/// Output of one filter stage. Rejected candidates carry the verdict.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filtered {
    pub kept: Vec<Candidate>,
    pub rejected: Vec<Candidate>,
}

impl Filtered {
    fn push(&mut self, mut cand: Candidate, verdict: Option<FilterVerdict>) {
        match verdict {
            None => self.kept.push(cand),
            Some(v) => {
                cand.rejections.push(v);
                self.rejected.push(cand);
            }
        }
    }
}

fn pos_verdict(
    cand: &Candidate,
    sentence: &AnswerSentence,
    profile: &AnswerProfile,
    tagger: &dyn Tagger,
) -> Result<Option<FilterVerdict>> {
    let (upos, deprel) = tag_span(tagger, &sentence.substitute(&cand.surface))?;
    Ok(if upos != profile.upos {
        Some(FilterVerdict::reject(
            FilterStage::Pos,
            format!("upos {upos}≠{}", profile.upos),
        ))
    } else if deprel != profile.deprel {
        Some(FilterVerdict::reject(
            FilterStage::Pos,
            format!("deprel {deprel}≠{}", profile.deprel),
        ))
    } else {
        None
    })
}

/// Keep candidates whose head token, substituted at the answer position,
/// has the answer's UPOS and dependency relation.
pub fn pos_filter(
    cands: Vec<Candidate>,
    sentence: &AnswerSentence,
    profile: &AnswerProfile,
    tagger: &dyn Tagger,
) -> Result<Filtered> {
    let mut out = Filtered::default();
    for cand in cands {
        let verdict = pos_verdict(&cand, sentence, profile, tagger)?;
        out.push(cand, verdict);
    }
    Ok(out)
}

/// Rewrites surfaces into their written-form normalization; rejects
/// nothing.
pub fn written_form_filter(cands: Vec<Candidate>) -> Filtered {
    Filtered {
        kept: cands
            .into_iter()
            .map(|mut c| {
                c.surface = normalize_written_form(&c.surface);
                c
            })
            .collect(),
        rejected: Vec::new(),
    }
}

fn ner_verdict(
    cand: &Candidate,
    profile: &AnswerProfile,
    ner: &dyn EntityRecognizer,
    sentence: Option<&AnswerSentence>,
) -> Result<Option<FilterVerdict>> {
    Ok(match &profile.category {
        AnswerCategory::Others => None,
        AnswerCategory::Numbers => {
            let written = normalize_written_form(&cand.surface);
            (!is_digits_only(&written))
                .then(|| FilterVerdict::reject(FilterStage::Ner, format!("{written:?} is not digits-only")))
        }
        AnswerCategory::Entity(label) => {
            let context = sentence.map(|s| s.substitute(&cand.surface).text);
            let got = ner.recognize(&cand.surface, context.as_deref())?;
            match got {
                Some(ref l) if l == label => None,
                other => Some(FilterVerdict::reject(
                    FilterStage::Ner,
                    format!("entity {}≠{label}", other.as_deref().unwrap_or("NONE")),
                )),
            }
        }
    })
}

/// Entity answers keep candidates of the same entity type; number answers
/// keep digits-only candidates; other answers pass everything.
pub fn ner_filter(
    cands: Vec<Candidate>,
    profile: &AnswerProfile,
    ner: &dyn EntityRecognizer,
    sentence: Option<&AnswerSentence>,
) -> Result<Filtered> {
    let mut out = Filtered::default();
    for cand in cands {
        let verdict = ner_verdict(&cand, profile, ner, sentence)?;
        out.push(cand, verdict);
    }
    Ok(out)
}

fn dedupe_verdict(cand: &Candidate, answer_key: &str, seen: &mut HashSet<String>) -> Option<FilterVerdict> {
    let key = normalize_written_form(&cand.surface);
    if key.is_empty() {
        Some(FilterVerdict::reject(FilterStage::Dedupe, "empty surface"))
    } else if key == answer_key {
        Some(FilterVerdict::reject(FilterStage::Dedupe, "same as the answer"))
    } else if seen.contains(&key) {
        Some(FilterVerdict::reject(
            FilterStage::Dedupe,
            format!("duplicate of {key:?}"),
        ))
    } else {
        seen.insert(key);
        None
    }
}

/// Drops candidates equal to the answer or to an earlier candidate,
/// comparing written-form normalizations.
pub fn dedupe_filter(cands: Vec<Candidate>, answer: &str) -> Filtered {
    let answer_key = normalize_written_form(answer);
    let mut seen = HashSet::new();
    let mut out = Filtered::default();
    for cand in cands {
        let verdict = dedupe_verdict(&cand, &answer_key, &mut seen);
        out.push(cand, verdict);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: FilterStage,
    pub input: usize,
    pub output: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub survivors: Vec<Candidate>,
    pub rejected: Vec<Candidate>,
    pub relaxed: bool,
    /// Stages skipped in the run that produced `survivors`.
    pub dropped: Vec<FilterStage>,
    /// Per-stage counts of that run, in application order.
    pub stages: Vec<StageCount>,
}

/// Everything the stages need about one question.
pub struct FilterContext<'a> {
    pub sentence: &'a AnswerSentence,
    pub answer: &'a str,
    pub profile: &'a AnswerProfile,
    pub tagger: &'a dyn Tagger,
    pub ner: &'a dyn EntityRecognizer,
}

fn run_once(
    cands: &[Candidate],
    pos_verdicts: &[Option<FilterVerdict>],
    ctx: &FilterContext<'_>,
    dropped: &[FilterStage],
) -> Result<FilterOutcome> {
    // Candidates travel with their index into `cands` so cached POS
    // verdicts can be looked up.
    let mut current: Vec<(usize, Candidate)> = cands.iter().cloned().enumerate().collect();
    let mut rejected = Vec::new();
    let mut stages = Vec::new();
    let answer_key = normalize_written_form(ctx.answer);
    for stage in FilterStage::ALL {
        if dropped.contains(&stage) {
            continue;
        }
        let input = current.len();
        let mut kept = Vec::with_capacity(input);
        let mut stage_rejected = Vec::new();
        let mut seen = HashSet::new();
        for (i, mut cand) in current {
            let verdict = match stage {
                FilterStage::Pos => pos_verdicts[i].clone(),
                FilterStage::WrittenForm => {
                    cand.surface = normalize_written_form(&cand.surface);
                    None
                }
                FilterStage::Ner => ner_verdict(&cand, ctx.profile, ctx.ner, Some(ctx.sentence))?,
                FilterStage::Dedupe => dedupe_verdict(&cand, &answer_key, &mut seen),
            };
            match verdict {
                None => kept.push((i, cand)),
                Some(v) => {
                    cand.rejections.push(v);
                    stage_rejected.push(cand);
                }
            }
        }
        stages.push(StageCount {
            stage,
            input,
            output: kept.len(),
            rejected: stage_rejected.len(),
        });
        rejected.extend(stage_rejected);
        current = kept;
    }
    Ok(FilterOutcome {
        survivors: current.into_iter().map(|(_, c)| c).collect(),
        rejected,
        relaxed: !dropped.is_empty(),
        dropped: dropped.to_vec(),
        stages,
    })
}

/// Apply POS, written-form, entity and dedupe stages in that order. When
/// fewer than `cfg.distractor_count` candidates survive, stages listed in
/// `cfg.relaxation_policy` are dropped one at a time, cumulatively, and
/// the pool is refiltered. Dedupe always runs.
pub fn run_filters(cands: Vec<Candidate>, ctx: &FilterContext<'_>, cfg: &PipelineConfig) -> Result<FilterOutcome> {
    // POS always sees the full pool first, so its verdicts are computed
    // once and reused by every relaxation round.
    let pos_verdicts: Vec<Option<FilterVerdict>> = cands
        .iter()
        .map(|c| pos_verdict(c, ctx.sentence, ctx.profile, ctx.tagger))
        .collect::<Result<_>>()?;
    let mut dropped = Vec::new();
    let mut outcome = run_once(&cands, &pos_verdicts, ctx, &dropped)?;
    for stage in &cfg.relaxation_policy {
        if outcome.survivors.len() >= cfg.distractor_count {
            break;
        }
        if *stage == FilterStage::Dedupe || dropped.contains(stage) {
            continue;
        }
        dropped.push(*stage);
        outcome = run_once(&cands, &pos_verdicts, ctx, &dropped)?;
    }
    Ok(outcome)
}
