//! Scoring language models on multiple-choice items from per-choice
//! probability logs.
//!
//! Per question: soft score is the probability on the correct choice,
//! confidence is one minus the entropy of the choice distribution divided
//! by `ln c`, and the question counts as hard-correct when the correct
//! choice is the unique argmax. Aggregates are means over questions plus
//! the Pearson correlation between confidence and soft score.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::JsonLines;
use crate::error::{Error, Result};
use crate::model::{ContentLabel, McqItem, QType};

/// Tolerance on the sum of a probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub model_id: String,
    /// Opaque tag, e.g. "16-bit" or "4-bit".
    #[serde(default, rename = "quantization")]
    pub quantization_tag: Option<String>,
    pub probs: Vec<f64>,
    pub correct_index: usize,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<()> {
        if self.probs.len() < 2 {
            return Err(Error::InvariantViolation {
                id: self.item_id.clone(),
                detail: format!("{} choice probabilities", self.probs.len()),
            });
        }
        if self.correct_index >= self.probs.len() {
            return Err(Error::InvariantViolation {
                id: self.item_id.clone(),
                detail: format!("correct_index {} out of range", self.correct_index),
            });
        }
        let in_range = self
            .probs
            .iter()
            .all(|p| p.is_finite() && (-PROB_SUM_TOLERANCE..=1.0 + PROB_SUM_TOLERANCE).contains(p));
        let sum: f64 = self.probs.iter().sum();
        if !in_range || (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::ProbSumViolation(self.item_id.clone()));
        }
        Ok(())
    }

    pub fn score(&self) -> QuestionScore {
        QuestionScore {
            soft: self.probs[self.correct_index],
            confidence: confidence(&self.probs),
            hard: is_unique_argmax(&self.probs, self.correct_index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuestionScore {
    pub soft: f64,
    pub confidence: f64,
    pub hard: bool,
}

#[derive(Debug, Deserialize)]
struct RawEvalLine {
    item_id: String,
    model_id: String,
    #[serde(default)]
    quantization: Option<String>,
    #[serde(default)]
    probs: Option<Vec<f64>>,
    #[serde(default)]
    loglikelihoods: Option<Vec<f64>>,
    correct_index: usize,
}

/// Softmax with the maximum subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn to_record(line: usize, raw: RawEvalLine) -> Result<EvalRecord> {
    let probs = match (raw.probs, raw.loglikelihoods) {
        (Some(p), None) => p,
        (None, Some(ll)) if !ll.is_empty() && ll.iter().all(|x| x.is_finite()) => softmax(&ll),
        (None, Some(_)) => {
            return Err(Error::MalformedLine {
                line,
                detail: "loglikelihoods must be finite and non-empty".into(),
            })
        }
        _ => {
            return Err(Error::MalformedLine {
                line,
                detail: "exactly one of probs or loglikelihoods is required".into(),
            })
        }
    };
    let rec = EvalRecord {
        item_id: raw.item_id,
        model_id: raw.model_id,
        quantization_tag: raw.quantization,
        probs,
        correct_index: raw.correct_index,
    };
    rec.validate()?;
    Ok(rec)
}

/// Stream validated records from an eval log.
pub fn ingest_logs(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<EvalRecord>>> {
    Ok(JsonLines::<RawEvalLine>::open(path)?.map(|r| r.and_then(|(line, raw)| to_record(line, raw))))
}

pub fn ingest_all(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    ingest_logs(path)?.collect()
}

fn is_unique_argmax(probs: &[f64], index: usize) -> bool {
    let p = probs[index];
    probs.iter().enumerate().all(|(i, &q)| i == index || q < p)
}

/// `1 - H(p) / ln c` with `0 ln 0 = 0`, clamped to [0, 1].
pub fn confidence(probs: &[f64]) -> f64 {
    if probs.len() < 2 {
        return 1.0;
    }
    let entropy: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (1.0 - entropy / (probs.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Running sums for all aggregate metrics. Two accumulators over disjoint
/// partitions merge into the accumulator of their union.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub hard: usize,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
    first: Option<(f64, f64)>,
    x_varies: bool,
    y_varies: bool,
}

impl Moments {
    /// `x` is confidence, `y` the soft score.
    pub fn push(&mut self, s: QuestionScore) {
        let (x, y) = (s.confidence, s.soft);
        match self.first {
            None => self.first = Some((x, y)),
            Some((fx, fy)) => {
                self.x_varies |= x != fx;
                self.y_varies |= y != fy;
            }
        }
        self.n += 1;
        self.hard += usize::from(s.hard);
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        let (fa, fb) = (self.first.expect("n > 0"), other.first.expect("n > 0"));
        Moments {
            n: self.n + other.n,
            hard: self.hard + other.hard,
            mean_x: self.mean_x + dx * nb / n,
            mean_y: self.mean_y + dy * nb / n,
            m2_x: self.m2_x + other.m2_x + dx * dx * na * nb / n,
            m2_y: self.m2_y + other.m2_y + dy * dy * na * nb / n,
            c_xy: self.c_xy + other.c_xy + dx * dy * na * nb / n,
            first: Some(fa),
            x_varies: self.x_varies || other.x_varies || fa.0 != fb.0,
            y_varies: self.y_varies || other.y_varies || fa.1 != fb.1,
        }
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Moments {
        let mut m = Moments::default();
        for r in records {
            m.push(r.score());
        }
        m
    }

    fn nonempty(&self) -> Result<()> {
        if self.n == 0 {
            Err(Error::Empty)
        } else {
            Ok(())
        }
    }

    pub fn hard_accuracy(&self) -> Result<f64> {
        self.nonempty()?;
        Ok(self.hard as f64 / self.n as f64)
    }

    pub fn soft_accuracy(&self) -> Result<f64> {
        self.nonempty()?;
        Ok(self.mean_y)
    }

    pub fn mean_confidence(&self) -> Result<f64> {
        self.nonempty()?;
        Ok(self.mean_x)
    }

    /// `None` when either series is exactly constant.
    pub fn correlation(&self) -> Result<Option<f64>> {
        if self.n < 2 {
            return Err(Error::EmptyOrSingleton);
        }
        if !self.x_varies || !self.y_varies || self.m2_x <= 0.0 || self.m2_y <= 0.0 {
            return Ok(None);
        }
        Ok(Some(
            (self.c_xy / (self.m2_x.sqrt() * self.m2_y.sqrt())).clamp(-1.0, 1.0),
        ))
    }
}

pub fn hard_accuracy(records: &[EvalRecord]) -> Result<f64> {
    Moments::from_records(records).hard_accuracy()
}

pub fn soft_accuracy(records: &[EvalRecord]) -> Result<f64> {
    Moments::from_records(records).soft_accuracy()
}

pub fn mean_confidence(records: &[EvalRecord]) -> Result<f64> {
    Moments::from_records(records).mean_confidence()
}

pub fn confidence_soft_correlation(records: &[EvalRecord]) -> Result<Option<f64>> {
    Moments::from_records(records).correlation()
}

/// Accumulate over `workers` contiguous partitions and merge.
pub fn moments_parallel(records: &[EvalRecord], workers: usize) -> Moments {
    let workers = workers.max(1);
    if workers == 1 || records.len() < 2 * workers {
        return Moments::from_records(records);
    }
    let chunk = records.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|part| scope.spawn(move || Moments::from_records(part)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("metric worker panicked"))
            .fold(Moments::default(), |acc, m| acc.merge(&m))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub hard_accuracy: f64,
    pub soft_accuracy: f64,
    pub mean_confidence: f64,
    /// `None` is UNDEFINED: a constant series or a single question.
    pub correlation: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_qtype: BTreeMap<QType, MetricsReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_content: BTreeMap<ContentLabel, MetricsReport>,
}

impl MetricsReport {
    pub fn from_moments(m: &Moments) -> Result<Self> {
        Ok(MetricsReport {
            n: m.n,
            hard_accuracy: m.hard_accuracy()?,
            soft_accuracy: m.soft_accuracy()?,
            mean_confidence: m.mean_confidence()?,
            correlation: if m.n < 2 { None } else { m.correlation()? },
            by_qtype: BTreeMap::new(),
            by_content: BTreeMap::new(),
        })
    }
}

/// Overall report plus per-question-type and per-content sub-reports.
pub fn breakdown(records: &[EvalRecord], items: &HashMap<String, McqItem>) -> Result<MetricsReport> {
    let mut overall = Moments::default();
    let mut by_qtype: BTreeMap<QType, Moments> = BTreeMap::new();
    let mut by_content: BTreeMap<ContentLabel, Moments> = BTreeMap::new();
    for rec in records {
        let item = items
            .get(&rec.item_id)
            .ok_or_else(|| Error::UnknownItem(rec.item_id.clone()))?;
        let s = rec.score();
        overall.push(s);
        by_qtype.entry(item.qtype).or_default().push(s);
        by_content.entry(item.content).or_default().push(s);
    }
    let mut report = MetricsReport::from_moments(&overall)?;
    for (k, m) in by_qtype {
        report.by_qtype.insert(k, MetricsReport::from_moments(&m)?);
    }
    for (k, m) in by_content {
        report.by_content.insert(k, MetricsReport::from_moments(&m)?);
    }
    Ok(report)
}

/// Row label of a model run: model id plus the quantization tag if any.
pub fn run_label(rec: &EvalRecord) -> String {
    match &rec.quantization_tag {
        Some(q) if !q.is_empty() => format!("{} ({q})", rec.model_id),
        _ => rec.model_id.clone(),
    }
}

/// One report per model run, in first-appearance order.
pub fn reports_by_run(
    records: &[EvalRecord],
    items: &HashMap<String, McqItem>,
) -> Result<Vec<(String, MetricsReport)>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<EvalRecord>> = HashMap::new();
    for rec in records {
        let label = run_label(rec);
        if !groups.contains_key(&label) {
            order.push(label.clone());
        }
        groups.entry(label).or_default().push(rec.clone());
    }
    order
        .into_iter()
        .map(|label| {
            let report = breakdown(&groups[&label], items)?;
            Ok((label, report))
        })
        .collect()
}

/// Reports for every model run in an eval log, against the item dataset.
pub fn evaluate_files(logs: impl AsRef<Path>, dataset: impl AsRef<Path>) -> Result<Vec<(String, MetricsReport)>> {
    let records = ingest_all(logs)?;
    if records.is_empty() {
        return Err(Error::Empty);
    }
    let items: HashMap<String, McqItem> = crate::dataset::read_mcq_dataset(dataset)?
        .into_iter()
        .map(|i| (i.id.clone(), i))
        .collect();
    reports_by_run(&records, &items)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Annotation {
    pub item_id: String,
    pub annotator: String,
    pub valid: bool,
    pub distractive: bool,
}

pub fn ingest_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    JsonLines::<Annotation>::open(path)?
        .map(|r| r.map(|(_, a)| a))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HumanEvalSummary {
    pub items: usize,
    /// Percent, already scaled by 100.
    pub valid_pct: f64,
    pub distractive_pct: f64,
}

/// Per item, the majority of annotators decides; an exact tie is negative.
pub fn human_eval_summary(annotations: &[Annotation]) -> Result<HumanEvalSummary> {
    let mut votes: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
    for a in annotations {
        let v = votes.entry(&a.item_id).or_default();
        v.0 += if a.valid { 1 } else { -1 };
        v.1 += if a.distractive { 1 } else { -1 };
    }
    if votes.is_empty() {
        return Err(Error::Empty);
    }
    let n = votes.len();
    let valid = votes.values().filter(|v| v.0 > 0).count();
    let distractive = votes.values().filter(|v| v.1 > 0).count();
    Ok(HumanEvalSummary {
        items: n,
        valid_pct: 100.0 * valid as f64 / n as f64,
        distractive_pct: 100.0 * distractive as f64 / n as f64,
    })
}

/// Round half away from zero at one decimal. A small epsilon absorbs
/// binary representation error (0.4925 * 1000 is 492.49999...).
pub fn round_one_decimal(x: f64) -> f64 {
    let scaled = (x.abs() * 10.0 + 0.5 + 1e-9).floor() / 10.0;
    if scaled == 0.0 {
        0.0
    } else {
        scaled.copysign(x)
    }
}

pub const UNDEFINED_MARK: &str = "—";

/// A fraction as a percentage with one decimal.
pub fn format_pct(x: f64) -> String {
    format!("{:.1}", round_one_decimal(x * 100.0))
}

pub fn format_opt_pct(x: Option<f64>) -> String {
    x.map(format_pct).unwrap_or_else(|| UNDEFINED_MARK.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStyle {
    /// Space-padded columns.
    Plain,
    /// One row per line, cells joined by the delimiter.
    Delimited(char),
}

struct Table {
    title: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self, style: TableStyle, out: &mut String) {
        match style {
            TableStyle::Plain => {
                let widths: Vec<usize> = (0..self.header.len())
                    .map(|c| {
                        std::iter::once(&self.header)
                            .chain(&self.rows)
                            .map(|r| r[c].chars().count())
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                let _ = writeln!(out, "{}", self.title);
                for row in std::iter::once(&self.header).chain(&self.rows) {
                    let cells: Vec<String> = row
                        .iter()
                        .zip(&widths)
                        .enumerate()
                        .map(|(i, (cell, &w))| {
                            let pad = w - cell.chars().count();
                            if i == 0 {
                                format!("{cell}{}", " ".repeat(pad))
                            } else {
                                format!("{}{cell}", " ".repeat(pad))
                            }
                        })
                        .collect();
                    let _ = writeln!(out, "{}", cells.join("  ").trim_end());
                }
            }
            TableStyle::Delimited(d) => {
                let _ = writeln!(out, "# {}", self.title);
                for row in std::iter::once(&self.header).chain(&self.rows) {
                    let _ = writeln!(out, "{}", row.join(&d.to_string()));
                }
            }
        }
    }
}

/// Three tables: overall metrics per run, soft accuracy by question type,
/// soft accuracy by content category. Values are percentages.
pub fn render_tables(reports: &[(String, MetricsReport)], style: TableStyle) -> String {
    let mut tables = vec![Table {
        title: "Table 1: overall metrics (x100)".into(),
        header: ["Model", "N", "Hard Acc.", "Soft Acc.", "Confidence", "Correlation"]
            .map(String::from)
            .to_vec(),
        rows: reports
            .iter()
            .map(|(label, r)| {
                vec![
                    label.clone(),
                    r.n.to_string(),
                    format_pct(r.hard_accuracy),
                    format_pct(r.soft_accuracy),
                    format_pct(r.mean_confidence),
                    format_opt_pct(r.correlation),
                ]
            })
            .collect(),
    }];

    let qtypes: BTreeSet<QType> = reports.iter().flat_map(|(_, r)| r.by_qtype.keys().copied()).collect();
    let qtypes: Vec<QType> = QType::ALL.iter().copied().filter(|q| qtypes.contains(q)).collect();
    tables.push(Table {
        title: "Table 2: soft accuracy by question type (x100)".into(),
        header: std::iter::once("Model".to_string())
            .chain(qtypes.iter().map(|q| q.to_string()))
            .collect(),
        rows: reports
            .iter()
            .map(|(label, r)| {
                std::iter::once(label.clone())
                    .chain(
                        qtypes
                            .iter()
                            .map(|q| format_opt_pct(r.by_qtype.get(q).map(|s| s.soft_accuracy))),
                    )
                    .collect()
            })
            .collect(),
    });

    let contents: BTreeSet<ContentLabel> = reports.iter().flat_map(|(_, r)| r.by_content.keys().copied()).collect();
    let contents: Vec<ContentLabel> = ContentLabel::ALL
        .iter()
        .copied()
        .filter(|c| contents.contains(c))
        .collect();
    tables.push(Table {
        title: "Table 3: soft accuracy by content category (x100)".into(),
        header: std::iter::once("Model".to_string())
            .chain(contents.iter().map(|c| c.to_string()))
            .collect(),
        rows: reports
            .iter()
            .map(|(label, r)| {
                std::iter::once(label.clone())
                    .chain(
                        contents
                            .iter()
                            .map(|c| format_opt_pct(r.by_content.get(c).map(|s| s.soft_accuracy))),
                    )
                    .collect()
            })
            .collect(),
    });

    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        t.render(style, &mut out);
    }
    out
}

pub fn render_human_eval(summary: &HumanEvalSummary, style: TableStyle) -> String {
    let table = Table {
        title: "Human evaluation (%)".into(),
        header: ["Items", "Valid", "Distractive"].map(String::from).to_vec(),
        rows: vec![vec![
            summary.items.to_string(),
            format!("{:.1}", round_one_decimal(summary.valid_pct)),
            format!("{:.1}", round_one_decimal(summary.distractive_pct)),
        ]],
    };
    let mut out = String::new();
    table.render(style, &mut out);
    out
}
