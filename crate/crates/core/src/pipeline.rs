//! End-to-end generation: question, candidates, filters, ranking and
//! assembly for each record, plus the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::Serialize;

use crate::candidates::{
    build_answer_sentence, embedding_candidates, fillmask_candidates, mask_answer, merge_pool, FillMaskBackend,
    SentenceBuilder, WordVectorTable,
};
use crate::config::RunConfig;
use crate::dataset::{read_dataset, write_json_lines, write_mcq_dataset, AuditEntry};
use crate::error::{Error, Result};
use crate::filters::{profile_answer, run_filters, EntityRecognizer, FilterContext, StageCount, Tagger};
use crate::kg::{ComplexEmbedding, TripleStore};
use crate::model::{FilterStage, ItemFlag, McqItem, PipelineConfig, QaRecord, ShuffleScope};
use crate::qgen::{generate_question, QgBackend};
use crate::rank::{assemble_mcq, score_candidates, select_top, ContextEncoder, KgSimilarity};
use crate::taxonomy::{classify_type, QuestionWordLexicon};
use crate::workers::ordered_map;

/// Every model the pipeline talks to, built once per run.
pub struct Backends {
    pub qgen: Box<dyn QgBackend>,
    pub sentence_builder: Option<Box<dyn SentenceBuilder>>,
    pub fillmask: Vec<Box<dyn FillMaskBackend>>,
    pub embeddings: Vec<WordVectorTable>,
    pub tagger: Box<dyn Tagger>,
    pub ner: Box<dyn EntityRecognizer>,
    pub encoder: Box<dyn ContextEncoder>,
    pub kg: Option<(TripleStore, ComplexEmbedding)>,
    pub lexicon: QuestionWordLexicon,
}

impl Backends {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Backends {
            qgen: cfg.qgen_backend()?,
            sentence_builder: cfg.sentence_builder()?,
            fillmask: cfg.fillmask_backends()?,
            embeddings: cfg.embedding_tables()?,
            tagger: cfg.tagger()?,
            ner: cfg.recognizer()?,
            encoder: cfg.encoder()?,
            kg: cfg.knowledge_graph()?,
            lexicon: cfg.question_lexicon()?,
        })
    }
}

/// Wall-clock spent per stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimes {
    pub question: Duration,
    pub candidates: Duration,
    pub filters: Duration,
    pub ranking: Duration,
}

#[derive(Debug, Clone)]
pub struct ItemOutcome {
    pub item: McqItem,
    pub audit: Vec<AuditEntry>,
    pub pool_size: usize,
    pub stages: Vec<StageCount>,
    pub dropped: Vec<FilterStage>,
    pub times: StageTimes,
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// Run one record through every stage.
pub fn process_record(
    rec: &QaRecord,
    backends: &Backends,
    cfg: &PipelineConfig,
    bypass_question: bool,
) -> Result<ItemOutcome> {
    let mut times = StageTimes::default();
    let question = timed(&mut times.question, || {
        generate_question(backends.qgen.as_ref(), rec, bypass_question)
    })?;

    let (sentence, pool) = timed(&mut times.candidates, || {
        let sentence = build_answer_sentence(
            &question,
            &rec.answer,
            backends.sentence_builder.as_deref(),
            &backends.lexicon,
        )?;
        let mut lists = Vec::new();
        for fm in &backends.fillmask {
            let masked = mask_answer(&sentence, fm.mask_token());
            lists.push(fillmask_candidates(
                fm.as_ref(),
                &masked,
                &rec.answer,
                cfg.fillmask_top_k,
            )?);
        }
        for table in &backends.embeddings {
            lists.push(embedding_candidates(table, &rec.answer, cfg.embedding_top_k));
        }
        Ok((sentence, merge_pool(lists, &rec.answer)))
    })?;
    let pool_size = pool.len();

    let outcome = timed(&mut times.filters, || {
        let profile = profile_answer(&sentence, backends.tagger.as_ref(), backends.ner.as_ref())?;
        let ctx = FilterContext {
            sentence: &sentence,
            answer: &rec.answer,
            profile: &profile,
            tagger: backends.tagger.as_ref(),
            ner: backends.ner.as_ref(),
        };
        run_filters(pool, &ctx, cfg)
    })?;

    let (item, scored_top, rest) = timed(&mut times.ranking, || {
        let kg = backends
            .kg
            .as_ref()
            .map(|(store, embedding)| KgSimilarity { store, embedding });
        let scored = score_candidates(
            outcome.survivors.clone(),
            &sentence,
            &rec.answer,
            Some(backends.encoder.as_ref()),
            kg,
            cfg.fusion_weights,
        )?;
        let top = select_top(scored.clone(), cfg.distractor_count);
        let qtype = classify_type(&question, &backends.lexicon);
        let mut item = assemble_mcq(rec, &question, &top, qtype, cfg)?;
        if outcome.relaxed {
            item.flags.insert(ItemFlag::FilterRelaxed);
        }
        let chosen: Vec<String> = top.iter().map(|r| r.candidate.surface.clone()).collect();
        let rest: Vec<_> = scored.into_iter().filter(|c| !chosen.contains(&c.surface)).collect();
        Ok((item, top, rest))
    })?;

    let mut audit: Vec<AuditEntry> = scored_top
        .iter()
        .map(|r| AuditEntry::new(&rec.id, &r.candidate))
        .collect();
    audit.extend((scored_top.len()..cfg.distractor_count).map(|_| AuditEntry::absent(&rec.id)));
    audit.extend(rest.iter().map(|c| AuditEntry::new(&rec.id, c)));
    audit.extend(outcome.rejected.iter().map(|c| AuditEntry::new(&rec.id, c)));

    Ok(ItemOutcome {
        item,
        audit,
        pool_size,
        stages: outcome.stages,
        dropped: outcome.dropped,
        times,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StageTotals {
    pub input: usize,
    pub output: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ItemFailure {
    /// Record id, or `line N` when the record could not be read.
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub shuffle_scope: ShuffleScope,
    pub train_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub input: PathBuf,
    pub output: PathBuf,
    pub seeds: Seeds,
    pub records_in: usize,
    pub items_generated: usize,
    pub items_written: usize,
    /// Incomplete items left out of the dataset.
    pub items_incomplete_dropped: usize,
    pub items_failed: usize,
    pub items_relaxed: usize,
    pub candidates_pooled: usize,
    /// Per filter stage, summed over items.
    pub filter_stages: BTreeMap<FilterStage, StageTotals>,
    /// How often each stage was dropped by relaxation.
    pub relaxations: BTreeMap<FilterStage, usize>,
    pub failures: Vec<ItemFailure>,
    pub wall_clock_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Count identities that must hold for every run.
    pub fn reconciles(&self) -> bool {
        let stages_ok = self.filter_stages.values().all(|s| s.input == s.output + s.rejected);
        stages_ok
            && self.records_in == self.items_generated + self.items_failed
            && self.items_generated == self.items_written + self.items_incomplete_dropped
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::io(path, e.into()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `out.jsonl` -> `out.jsonl.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Read `input`, generate items, write `output` and its manifest.
/// Failing items are logged and skipped unless `fail_fast` is set.
pub fn generate(cfg: &RunConfig, input: &Path, output: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    let backends = Backends::from_config(cfg)?;
    let setup = started.elapsed();
    let fail_fast = cfg.run.fail_fast;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, rec) in read_dataset(input)?.enumerate() {
        match rec {
            Ok(r) => records.push(r),
            Err(e) if fail_fast => return Err(e),
            Err(e) => {
                warn!("skipping input record {}: {e}", i + 1);
                failures.push(ItemFailure {
                    id: format!("line {}", i + 1),
                    error: e.to_string(),
                });
            }
        }
    }
    let records_in = records.len() + failures.len();

    let stop = AtomicBool::new(false);
    let results = ordered_map(&records, cfg.run.workers, |_, rec| {
        if stop.load(Ordering::Relaxed) {
            return None;
        }
        let out = process_record(rec, &backends, &cfg.pipeline, cfg.qgen.bypass);
        if out.is_err() && fail_fast {
            stop.store(true, Ordering::Relaxed);
        }
        Some(out)
    });

    let mut items = Vec::new();
    let mut audit = Vec::new();
    let mut manifest = RunManifest {
        config: cfg.clone(),
        input: input.to_path_buf(),
        output: output.to_path_buf(),
        seeds: Seeds {
            shuffle_scope: cfg.pipeline.shuffle_seed_scope,
            train_seed: cfg.train.seed,
        },
        records_in,
        items_generated: 0,
        items_written: 0,
        items_incomplete_dropped: 0,
        items_failed: 0,
        items_relaxed: 0,
        candidates_pooled: 0,
        filter_stages: BTreeMap::new(),
        relaxations: BTreeMap::new(),
        failures,
        wall_clock_ms: BTreeMap::new(),
    };
    let mut times = StageTimes::default();
    for (rec, result) in records.iter().zip(results) {
        let outcome = match result {
            Some(Ok(o)) => o,
            Some(Err(e)) if fail_fast => return Err(e),
            Some(Err(e)) => {
                warn!("item {} skipped: {e}", rec.id);
                manifest.failures.push(ItemFailure {
                    id: rec.id.clone(),
                    error: e.to_string(),
                });
                continue;
            }
            None => continue,
        };
        manifest.items_generated += 1;
        manifest.candidates_pooled += outcome.pool_size;
        if outcome.item.flags.contains(&ItemFlag::FilterRelaxed) {
            manifest.items_relaxed += 1;
        }
        for s in &outcome.stages {
            let t = manifest.filter_stages.entry(s.stage).or_default();
            t.input += s.input;
            t.output += s.output;
            t.rejected += s.rejected;
        }
        for stage in &outcome.dropped {
            *manifest.relaxations.entry(*stage).or_default() += 1;
        }
        times.question += outcome.times.question;
        times.candidates += outcome.times.candidates;
        times.filters += outcome.times.filters;
        times.ranking += outcome.times.ranking;
        audit.extend(outcome.audit);
        if outcome.item.flags.contains(&ItemFlag::IncompleteDistractors) && !cfg.run.keep_incomplete {
            manifest.items_incomplete_dropped += 1;
        } else {
            items.push(outcome.item);
        }
    }
    manifest.items_failed = manifest.failures.len();

    let write_start = Instant::now();
    manifest.items_written = write_mcq_dataset(&items, output)?;
    if let Some(path) = &cfg.run.audit_log {
        write_json_lines(&audit, path)?;
    }
    let ms = |d: Duration| d.as_secs_f64() * 1000.0;
    manifest.wall_clock_ms = BTreeMap::from([
        ("setup".to_string(), ms(setup)),
        ("question_generation".to_string(), ms(times.question)),
        ("candidate_generation".to_string(), ms(times.candidates)),
        ("filtering".to_string(), ms(times.filters)),
        ("ranking".to_string(), ms(times.ranking)),
        ("writing".to_string(), ms(write_start.elapsed())),
        ("total".to_string(), ms(started.elapsed())),
    ]);
    manifest.save(manifest_path(output))?;
    info!(
        "{} records in, {} items written, {} failed",
        manifest.records_in, manifest.items_written, manifest.items_failed
    );
    Ok(manifest)
}
