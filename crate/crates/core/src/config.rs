//! Run configuration: one TOML file for every stage.
//!
//! Relative paths are resolved against the directory of the config file.
//! Missing sections take their defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{Endpoint, RetryPolicy};
use crate::candidates::{
    ExternalFillMask, ExternalSentenceBuilder, FillMaskBackend, SentenceBuilder, TableFillMask, WordVectorTable,
};
use crate::error::{Error, Result};
use crate::filters::{
    EntityRecognizer, ExternalRecognizer, ExternalTagger, GazetteerRecognizer, LexiconTagger, Tagger,
};
use crate::kg::{ComplexEmbedding, TrainConfig, TripleStore};
use crate::model::PipelineConfig;
use crate::qgen::{ExternalQgBackend, QgBackend, TemplateBackend, DEFAULT_SEP};
use crate::rank::{ContextEncoder, ExternalEncoder, HashingEncoder};
use crate::taxonomy::{
    ChatCompletionClient, ExternalLlmClient, LlmClient, PromptTemplate, QuestionWordLexicon, ReplayClient,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub workers: usize,
    /// When set, seeds KG training and switches choice shuffling to a
    /// global seed.
    pub seed: Option<u64>,
    pub fail_fast: bool,
    /// Also write items with fewer distractors than requested.
    pub keep_incomplete: bool,
    pub audit_log: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            workers: 1,
            seed: None,
            fail_fast: false,
            keep_incomplete: false,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        BackendSection {
            timeout_ms: 30_000,
            max_attempts: retry.max_attempts,
            initial_backoff_ms: retry.initial_backoff_ms,
        }
    }
}

impl BackendSection {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts.max(1),
            initial_backoff_ms: self.initial_backoff_ms,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    fn connect(&self, endpoint: &Endpoint) -> Result<Box<dyn crate::backend::Transport>> {
        endpoint.connect(self.retry(), self.timeout())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QgenSection {
    pub id: String,
    /// Absent: the built-in template generator.
    pub endpoint: Option<Endpoint>,
    pub sep_token: String,
    /// Use the question already present in each record.
    pub bypass: bool,
}

impl Default for QgenSection {
    fn default() -> Self {
        QgenSection {
            id: "template".into(),
            endpoint: None,
            sep_token: DEFAULT_SEP.into(),
            bypass: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSection {
    pub id: String,
    pub endpoint: Endpoint,
}

/// A fill-mask model: either a prediction table file or an external one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FillMaskSection {
    pub id: Option<String>,
    pub table: Option<PathBuf>,
    pub endpoint: Option<Endpoint>,
    pub mask_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub lexicon: Option<PathBuf>,
    pub endpoint: Option<Endpoint>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NerSection {
    pub gazetteer: Option<PathBuf>,
    pub endpoint: Option<Endpoint>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// Absent: the hashing encoder.
    pub endpoint: Option<Endpoint>,
    pub dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            endpoint: None,
            dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgSection {
    pub triples: PathBuf,
    pub embedding: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// Scripted replies for offline runs.
    pub replay: Option<PathBuf>,
    /// `{"prompt"} -> {"response"}` backend.
    pub endpoint: Option<Endpoint>,
    /// Chat-completions endpoint; the key comes from the environment.
    pub chat_url: Option<String>,
    pub model: Option<String>,
    /// Append every prompt and reply to this file.
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategorizeSection {
    pub lexicon: Option<PathBuf>,
    pub prompt: Option<PathBuf>,
    pub llm: Option<LlmSection>,
    pub max_in_flight: usize,
}

impl Default for CategorizeSection {
    fn default() -> Self {
        CategorizeSection {
            lexicon: None,
            prompt: None,
            llm: None,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub pipeline: PipelineConfig,
    pub backend: BackendSection,
    pub qgen: QgenSection,
    pub sentence_builder: Option<ExternalSection>,
    pub fillmask: Vec<FillMaskSection>,
    pub embeddings: Vec<EmbeddingSection>,
    pub tagger: TaggerSection,
    pub ner: NerSection,
    pub encoder: EncoderSection,
    pub kg: Option<KgSection>,
    pub train: TrainConfig,
    pub categorize: CategorizeSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve_opt(base, &mut self.run.audit_log);
        for f in &mut self.fillmask {
            resolve_opt(base, &mut f.table);
        }
        for e in &mut self.embeddings {
            resolve(base, &mut e.path);
        }
        resolve_opt(base, &mut self.tagger.lexicon);
        resolve_opt(base, &mut self.ner.gazetteer);
        if let Some(kg) = &mut self.kg {
            resolve(base, &mut kg.triples);
            resolve(base, &mut kg.embedding);
        }
        resolve_opt(base, &mut self.categorize.lexicon);
        resolve_opt(base, &mut self.categorize.prompt);
        if let Some(llm) = &mut self.categorize.llm {
            resolve_opt(base, &mut llm.replay);
            resolve_opt(base, &mut llm.audit);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.train.validate()?;
        if self.run.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        for f in &self.fillmask {
            if f.table.is_some() == f.endpoint.is_some() {
                return Err(Error::Config(
                    "each fillmask entry needs exactly one of table or endpoint".into(),
                ));
            }
            if f.endpoint.is_some() && f.id.is_none() {
                return Err(Error::Config("external fillmask entries need an id".into()));
            }
        }
        if self.tagger.lexicon.is_some() && self.tagger.endpoint.is_some() {
            return Err(Error::Config("tagger takes a lexicon or an endpoint, not both".into()));
        }
        if self.ner.gazetteer.is_some() && self.ner.endpoint.is_some() {
            return Err(Error::Config("ner takes a gazetteer or an endpoint, not both".into()));
        }
        Ok(())
    }

    /// Apply a seed override: KG training seed and a global shuffle seed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.run.seed = Some(seed);
        self.train.seed = seed;
        self.pipeline.shuffle_seed_scope = crate::model::ShuffleScope::Global(seed);
    }

    pub fn question_lexicon(&self) -> Result<QuestionWordLexicon> {
        match &self.categorize.lexicon {
            Some(p) => QuestionWordLexicon::load(p),
            None => Ok(QuestionWordLexicon::default()),
        }
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate> {
        match &self.categorize.prompt {
            Some(p) => PromptTemplate::load(p),
            None => Ok(PromptTemplate::default()),
        }
    }

    pub fn qgen_backend(&self) -> Result<Box<dyn QgBackend>> {
        Ok(match &self.qgen.endpoint {
            None => Box::new(TemplateBackend),
            Some(ep) => Box::new(ExternalQgBackend::new(&self.qgen.id, self.backend.connect(ep)?)),
        })
    }

    pub fn sentence_builder(&self) -> Result<Option<Box<dyn SentenceBuilder>>> {
        self.sentence_builder
            .as_ref()
            .map(|s| -> Result<Box<dyn SentenceBuilder>> {
                Ok(Box::new(ExternalSentenceBuilder::new(
                    &s.id,
                    self.backend.connect(&s.endpoint)?,
                )))
            })
            .transpose()
    }

    pub fn fillmask_backends(&self) -> Result<Vec<Box<dyn FillMaskBackend>>> {
        self.fillmask
            .iter()
            .map(|f| -> Result<Box<dyn FillMaskBackend>> {
                match (&f.table, &f.endpoint) {
                    (Some(path), _) => {
                        let table = TableFillMask::load(path)?;
                        Ok(Box::new(table))
                    }
                    (None, Some(ep)) => Ok(Box::new(ExternalFillMask::new(
                        f.id.clone().unwrap_or_default(),
                        f.mask_token.clone().unwrap_or_else(|| "[MASK]".into()),
                        self.backend.connect(ep)?,
                    ))),
                    (None, None) => Err(Error::Config("fillmask entry without a source".into())),
                }
            })
            .collect()
    }

    pub fn embedding_tables(&self) -> Result<Vec<WordVectorTable>> {
        self.embeddings
            .iter()
            .map(|e| WordVectorTable::load(&e.id, &e.path))
            .collect()
    }

    /// Without a lexicon or endpoint the tagger still tags digits and
    /// punctuation and calls everything else a noun.
    pub fn tagger(&self) -> Result<Box<dyn Tagger>> {
        Ok(match (&self.tagger.lexicon, &self.tagger.endpoint) {
            (Some(p), _) => Box::new(LexiconTagger::load(p)?),
            (None, Some(ep)) => Box::new(ExternalTagger::new("tagger", self.backend.connect(ep)?)),
            (None, None) => Box::new(LexiconTagger::new(std::iter::empty())),
        })
    }

    pub fn recognizer(&self) -> Result<Box<dyn EntityRecognizer>> {
        Ok(match (&self.ner.gazetteer, &self.ner.endpoint) {
            (Some(p), _) => Box::new(GazetteerRecognizer::load(p)?),
            (None, Some(ep)) => Box::new(ExternalRecognizer::new(
                "ner",
                self.ner.labels.clone(),
                self.backend.connect(ep)?,
            )),
            (None, None) => Box::new(GazetteerRecognizer::new(std::iter::empty())),
        })
    }

    pub fn encoder(&self) -> Result<Box<dyn ContextEncoder>> {
        Ok(match &self.encoder.endpoint {
            None => Box::new(HashingEncoder::new(self.encoder.dim)),
            Some(ep) => Box::new(ExternalEncoder::new("encoder", self.backend.connect(ep)?)),
        })
    }

    pub fn knowledge_graph(&self) -> Result<Option<(TripleStore, ComplexEmbedding)>> {
        self.kg
            .as_ref()
            .map(|kg| {
                let store = TripleStore::load(&kg.triples)?;
                let emb = ComplexEmbedding::load_for(&kg.embedding, &store)?;
                Ok((store, emb))
            })
            .transpose()
    }

    /// `None` when no client is configured; content labels then stay at
    /// their default.
    pub fn llm_client(&self) -> Result<Option<Box<dyn LlmClient>>> {
        let Some(llm) = &self.categorize.llm else {
            return Ok(None);
        };
        let client: Box<dyn LlmClient> = match (&llm.replay, &llm.endpoint, &llm.chat_url) {
            (Some(p), None, None) => Box::new(ReplayClient::load(p)?),
            (None, Some(ep), None) => Box::new(ExternalLlmClient::new("llm", self.backend.connect(ep)?)),
            (None, None, Some(url)) => {
                let key = std::env::var("MCQGEN_LLM_API_KEY").ok();
                let model = llm.model.clone().unwrap_or_else(|| "gpt-4o".into());
                Box::new(ChatCompletionClient::new(url, key.as_deref(), &model))
            }
            (None, None, None) => match ChatCompletionClient::from_env() {
                Some(c) => Box::new(c),
                None => return Ok(None),
            },
            _ => return Err(Error::Config("llm takes one of replay, endpoint or chat_url".into())),
        };
        Ok(Some(match &llm.audit {
            Some(path) => Box::new(crate::taxonomy::AuditedClient::new(client, path.clone())?),
            None => client,
        }))
    }
}
