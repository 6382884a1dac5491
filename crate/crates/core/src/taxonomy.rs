//! Question categorization: rule-based type detection from question words,
//! LLM-assisted content labelling, and label distribution reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{HttpTransport, RetryPolicy, Transport};
use crate::error::{Error, Result};
use crate::model::{ContentLabel, McqItem, QType};
use crate::text::{fold_case, is_punct, word_tokens};
use crate::workers::ordered_map;

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");
pub const DEFAULT_PROMPT: &str = include_str!("../data/content_prompt.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    pub pattern: Vec<String>,
    pub qtype: QType,
}

/// Ordered question-word patterns. Matching is first-hit in priority order:
/// more tokens first, then file order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionWordLexicon {
    entries: Vec<LexiconEntry>,
    pub fallback: QType,
}

impl Default for QuestionWordLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("shipped lexicon parses")
    }
}

impl QuestionWordLexicon {
    pub fn new(entries: Vec<(String, QType)>) -> Result<Self> {
        let mut parsed = Vec::with_capacity(entries.len());
        for (pattern, qtype) in entries {
            let tokens: Vec<String> = fold_case(&pattern)
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            if tokens.is_empty() {
                return Err(Error::Config("empty lexicon pattern".into()));
            }
            parsed.push(LexiconEntry { pattern: tokens, qtype });
        }
        // Stable: file order is kept among equal lengths.
        parsed.sort_by_key(|e| std::cmp::Reverse(e.pattern.len()));
        Ok(QuestionWordLexicon {
            entries: parsed,
            fallback: QType::What,
        })
    }

    /// Parse `pattern<TAB>QTYPE` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (pattern, qtype) = line.split_once('\t').ok_or_else(|| Error::MalformedLine {
                line: no + 1,
                detail: "expected pattern<TAB>QTYPE".into(),
            })?;
            let qtype = qtype.parse().map_err(|_| Error::MalformedLine {
                line: no + 1,
                detail: format!("unknown question type {qtype:?}"),
            })?;
            entries.push((pattern.to_string(), qtype));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    /// First entry (in priority order) occurring in `tokens`, with the
    /// token index where it starts.
    pub fn find(&self, tokens: &[String]) -> Option<(&LexiconEntry, usize)> {
        self.entries.iter().find_map(|entry| {
            tokens
                .windows(entry.pattern.len())
                .position(|w| w == &entry.pattern[..])
                .map(|i| (entry, i))
        })
    }
}

pub fn classify_type(question: &str, lexicon: &QuestionWordLexicon) -> QType {
    let tokens = word_tokens(question);
    lexicon
        .find(&tokens)
        .map(|(entry, _)| entry.qtype)
        .unwrap_or(lexicon.fallback)
}

fn aliases(label: ContentLabel) -> &'static [&'static str] {
    use ContentLabel::*;
    match label {
        History => &["history", "historical", "تاریخ", "تاریخی"],
        Technology => &[
            "technology",
            "technological",
            "tech",
            "فناوری",
            "فن\u{200C}آوری",
            "تکنولوژی",
        ],
        HealthMedicine => &[
            "health and medicine",
            "health_medicine",
            "health",
            "medicine",
            "medical",
            "سلامت",
            "پزشکی",
        ],
        EconomyCommerce => &[
            "economy and commerce",
            "economy_commerce",
            "economy",
            "economic",
            "economics",
            "commerce",
            "اقتصاد",
            "اقتصادی",
            "تجارت",
        ],
        Politics => &["politics", "political", "سیاست", "سیاسی"],
        Geography => &["geography", "geographic", "geographical", "جغرافیا", "جغرافیایی"],
        ArtCulture => &[
            "art and culture",
            "art_culture",
            "art",
            "arts",
            "culture",
            "cultural",
            "هنر",
            "فرهنگ",
            "فرهنگی",
        ],
        Science => &["science", "sciences", "scientific", "علم", "علوم", "علمی"],
        Sport => &["sport", "sports", "ورزش", "ورزشی"],
        Society => &["society", "social", "جامعه", "اجتماعی"],
        Religion => &["religion", "religious", "دین", "دینی", "مذهب", "مذهبی"],
        Others => &["others", "other", "سایر", "متفرقه"],
    }
}

/// Scan a free-text response for label aliases. Exactly one distinct label
/// must be mentioned; otherwise the response is unparseable.
pub fn parse_content_label(response: &str) -> Option<ContentLabel> {
    let tokens = word_tokens(response);
    let mut found: Option<ContentLabel> = None;
    for &label in ContentLabel::ALL {
        let hit = aliases(label).iter().any(|alias| {
            let pattern: Vec<&str> = alias.split(' ').collect();
            tokens
                .windows(pattern.len())
                .any(|w| w.iter().map(String::as_str).eq(pattern.iter().copied()))
        });
        if hit {
            if found.is_some() {
                return None;
            }
            found = Some(label);
        }
    }
    found
}

/// Text completion service used for content labelling.
pub trait LlmClient: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Prompt with `{{question}}` and `{{choices}}` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate(String);

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate(DEFAULT_PROMPT.to_string())
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if !text.contains("{{question}}") || !text.contains("{{choices}}") {
            return Err(Error::Config(
                "prompt template needs {{question}} and {{choices}} slots".into(),
            ));
        }
        Ok(PromptTemplate(text))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::new(std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn render(&self, item: &McqItem) -> String {
        let mut choices = String::new();
        for (i, choice) in item.choices.iter().enumerate() {
            if i > 0 {
                choices.push('\n');
            }
            let _ = write!(choices, "{}) {}", i + 1, choice);
        }
        self.0
            .replace("{{question}}", &item.question)
            .replace("{{choices}}", &choices)
    }
}

/// Ask the client for a content label. Unparseable replies are retried;
/// if no attempt parses, the label is `Others`. `Error::Client` is returned
/// only when every attempt failed at the transport level.
pub fn classify_content(
    item: &McqItem,
    client: &dyn LlmClient,
    template: &PromptTemplate,
    policy: &RetryPolicy,
) -> Result<ContentLabel> {
    let prompt = template.render(item);
    let attempts = policy.max_attempts.max(1);
    let mut delay = policy.initial_backoff_ms;
    let mut got_reply = false;
    let mut last_error = None;
    for attempt in 1..=attempts {
        match client.complete(&prompt) {
            Ok(reply) => {
                got_reply = true;
                if let Some(label) = parse_content_label(&reply) {
                    return Ok(label);
                }
                log::debug!("item {}: unparseable label reply {reply:?}", item.id);
            }
            Err(e) => {
                log::warn!("item {}: client attempt {attempt} failed: {e}", item.id);
                last_error = Some(e);
            }
        }
        if attempt < attempts && delay > 0 {
            std::thread::sleep(Duration::from_millis(delay));
            delay = delay.saturating_mul(2);
        }
    }
    if got_reply {
        Ok(ContentLabel::Others)
    } else {
        Err(Error::Client(last_error.map(|e| e.to_string()).unwrap_or_default()))
    }
}

/// Label many items with at most `max_in_flight` concurrent requests.
pub fn classify_contents(
    items: &[McqItem],
    client: &dyn LlmClient,
    template: &PromptTemplate,
    policy: &RetryPolicy,
    max_in_flight: usize,
) -> Vec<Result<ContentLabel>> {
    ordered_map(items, max_in_flight, |_, item| {
        classify_content(item, client, template, policy)
    })
}

/// Fill `qtype` for every item and, with a client, `content`. Items whose
/// client calls all failed keep `Others`; their errors are returned
/// alongside.
pub fn categorize_items(
    items: &mut [McqItem],
    lexicon: &QuestionWordLexicon,
    client: Option<&dyn LlmClient>,
    template: &PromptTemplate,
    policy: &RetryPolicy,
    max_in_flight: usize,
) -> Vec<(String, Error)> {
    for item in items.iter_mut() {
        item.qtype = classify_type(&item.question, lexicon);
    }
    let Some(client) = client else {
        return Vec::new();
    };
    let labels = classify_contents(items, client, template, policy, max_in_flight);
    let mut errors = Vec::new();
    for (item, label) in items.iter_mut().zip(labels) {
        match label {
            Ok(l) => item.content = l,
            Err(e) => {
                item.content = ContentLabel::Others;
                errors.push((item.id.clone(), e));
            }
        }
    }
    errors
}

/// OpenAI-style chat completion endpoint.
pub struct ChatCompletionClient {
    model: String,
    transport: HttpTransport,
}

pub const ENV_LLM_ENDPOINT: &str = "MCQGEN_LLM_ENDPOINT";
pub const ENV_LLM_API_KEY: &str = "MCQGEN_LLM_API_KEY";
pub const ENV_LLM_MODEL: &str = "MCQGEN_LLM_MODEL";

impl ChatCompletionClient {
    pub fn new(endpoint: &str, api_key: Option<&str>, model: &str) -> Self {
        let mut transport = HttpTransport::new(endpoint, Duration::from_secs(60));
        if let Some(key) = api_key {
            transport = transport.with_header("Authorization", format!("Bearer {key}"));
        }
        ChatCompletionClient {
            model: model.to_string(),
            transport,
        }
    }

    /// Build from the environment; `None` when no endpoint is set.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_LLM_ENDPOINT).ok()?;
        let key = std::env::var(ENV_LLM_API_KEY).ok();
        let model = std::env::var(ENV_LLM_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        Some(Self::new(&endpoint, key.as_deref(), &model))
    }
}

impl LlmClient for ChatCompletionClient {
    fn id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let request = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let reply = self
            .transport
            .call(&request)
            .map_err(|e| Error::Client(e.to_string()))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Client(format!("unexpected completion reply: {reply}")))
    }
}

/// Client speaking `{"prompt"} -> {"response"}` over a transport.
pub struct ExternalLlmClient {
    id: String,
    transport: Box<dyn Transport>,
}

impl ExternalLlmClient {
    pub fn new(id: impl Into<String>, transport: Box<dyn Transport>) -> Self {
        ExternalLlmClient {
            id: id.into(),
            transport,
        }
    }
}

impl LlmClient for ExternalLlmClient {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let reply = self
            .transport
            .call(&json!({ "prompt": prompt }))
            .map_err(|e| Error::Client(e.to_string()))?;
        reply
            .get("response")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Client(format!("reply lacks \"response\": {reply}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ReplayEntry {
    #[serde(rename = "match")]
    needle: String,
    responses: Vec<String>,
}

/// Replays canned responses: the first entry whose `match` text occurs in
/// the prompt answers, stepping through its responses on repeated calls
/// (the last one repeats).
pub struct ReplayClient {
    entries: Vec<ReplayEntry>,
    cursors: Mutex<Vec<usize>>,
}

impl ReplayClient {
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Self {
        let entries: Vec<ReplayEntry> = entries
            .into_iter()
            .map(|(needle, responses)| ReplayEntry { needle, responses })
            .collect();
        let cursors = Mutex::new(vec![0; entries.len()]);
        ReplayClient { entries, cursors }
    }

    /// Transcript lines: `{"match": str, "responses": [str]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut entries = Vec::new();
        for entry in crate::dataset::JsonLines::<ReplayEntry>::open(path)? {
            let (_, e) = entry?;
            entries.push((e.needle, e.responses));
        }
        Ok(Self::new(entries))
    }
}

impl LlmClient for ReplayClient {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let idx = self
            .entries
            .iter()
            .position(|e| prompt.contains(&e.needle))
            .ok_or_else(|| Error::Client("no transcript entry for prompt".into()))?;
        let entry = &self.entries[idx];
        let mut cursors = self.cursors.lock().unwrap_or_else(|p| p.into_inner());
        let at = cursors[idx].min(entry.responses.len().saturating_sub(1));
        cursors[idx] += 1;
        entry
            .responses
            .get(at)
            .cloned()
            .ok_or_else(|| Error::Client("transcript entry has no responses".into()))
    }
}

/// Logs every prompt and reply (or error) as a JSON line.
pub struct AuditedClient<C> {
    inner: C,
    path: PathBuf,
    file: Mutex<std::fs::File>,
}

impl<C: LlmClient> AuditedClient<C> {
    pub fn new(inner: C, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(AuditedClient {
            inner,
            path,
            file: Mutex::new(file),
        })
    }
}

impl<C: LlmClient> LlmClient for AuditedClient<C> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let out = self.inner.complete(prompt);
        let entry = match &out {
            Ok(reply) => json!({"client": self.inner.id(), "prompt": prompt, "response": reply}),
            Err(e) => json!({"client": self.inner.id(), "prompt": prompt, "error": e.to_string()}),
        };
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(file, "{entry}").map_err(|e| Error::io(&self.path, e))?;
        out
    }
}

impl LlmClient for Box<dyn LlmClient> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

/// Label counts over a set of items. Every label appears, zeros included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub total: usize,
    pub qtype: BTreeMap<QType, usize>,
    pub content: BTreeMap<ContentLabel, usize>,
}

impl DistributionReport {
    pub fn from_counts(
        qtype: impl IntoIterator<Item = (QType, usize)>,
        content: impl IntoIterator<Item = (ContentLabel, usize)>,
    ) -> Self {
        let mut report = Self::empty();
        for (label, n) in qtype {
            *report.qtype.entry(label).or_default() += n;
        }
        for (label, n) in content {
            *report.content.entry(label).or_default() += n;
        }
        report.total = report.qtype.values().sum();
        report
    }

    fn empty() -> Self {
        DistributionReport {
            total: 0,
            qtype: QType::ALL.iter().map(|&q| (q, 0)).collect(),
            content: ContentLabel::ALL.iter().map(|&c| (c, 0)).collect(),
        }
    }

    pub fn qtype_sum(&self) -> usize {
        self.qtype.values().sum()
    }

    pub fn content_sum(&self) -> usize {
        self.content.values().sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>8}", "Type", "Count");
        for q in QType::ALL {
            let _ = writeln!(out, "{:<18} {:>8}", q.as_str(), self.qtype[q]);
        }
        let _ = writeln!(out, "\n{:<18} {:>8}", "Content", "Count");
        for c in ContentLabel::ALL {
            let _ = writeln!(out, "{:<18} {:>8}", c.as_str(), self.content[c]);
        }
        let _ = writeln!(out, "\n{:<18} {:>8}", "Total", self.total);
        out
    }
}

pub fn distribution_report<'a>(items: impl IntoIterator<Item = &'a McqItem>) -> DistributionReport {
    let mut report = DistributionReport::empty();
    for item in items {
        report.total += 1;
        *report.qtype.entry(item.qtype).or_default() += 1;
        *report.content.entry(item.content).or_default() += 1;
    }
    report
}

/// Tokens of a question split on whitespace, each paired with its
/// punctuation-stripped lowercase matching key.
pub(crate) fn keyed_tokens(question: &str) -> Vec<(String, String)> {
    crate::text::normalize_text(question)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let key = t.to_lowercase().trim_matches(is_punct).to_string();
            (t.to_string(), key)
        })
        .collect()
}
