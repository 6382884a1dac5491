//! Knowledge-graph embeddings with the ComplEx model.
//!
//! Entities and relations are complex vectors stored as separate real and
//! imaginary matrices. A triple scores `Re(sum_k w_r[k] * e_h[k] * conj(e_t[k]))`.
//! Training is plain SGD on a logistic loss with uniformly corrupted
//! negatives and L2 on the rows each step touches.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_text;

#[derive(Debug, Clone, Default)]
struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    raw: HashMap<String, String>,
}

impl Vocab {
    fn intern(&mut self, raw: &str) -> Result<usize> {
        let label = normalize_text(raw);
        if label.is_empty() {
            return Err(Error::Config("empty label in triple".into()));
        }
        if let Some(first) = self.raw.get(&label) {
            if first != raw {
                return Err(Error::DuplicateLabel {
                    first: first.clone(),
                    second: raw.to_string(),
                });
            }
        }
        if let Some(&i) = self.index.get(&label) {
            return Ok(i);
        }
        let i = self.labels.len();
        self.raw.insert(label.clone(), raw.to_string());
        self.index.insert(label.clone(), i);
        self.labels.push(label);
        Ok(i)
    }
}

/// Deduplicated (head, relation, tail) triples over interned labels.
/// Indices follow first appearance.
#[derive(Debug, Clone, Default)]
pub struct TripleStore {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<(usize, usize, usize)>,
    seen: HashSet<(usize, usize, usize)>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Two distinct raw labels that normalize identically are an error.
    pub fn insert(&mut self, head: &str, relation: &str, tail: &str) -> Result<bool> {
        let h = self.entities.intern(head)?;
        let r = self.relations.intern(relation)?;
        let t = self.entities.intern(tail)?;
        if self.seen.insert((h, r, t)) {
            self.triples.push((h, r, t));
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// `head<TAB>relation<TAB>tail` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut store = Self::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::MalformedLine {
                    line: no + 1,
                    detail: "expected head<TAB>relation<TAB>tail".into(),
                });
            }
            store.insert(cols[0], cols[1], cols[2])?;
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.labels.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.labels.len()
    }

    pub fn triples(&self) -> &[(usize, usize, usize)] {
        &self.triples
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, triple: (usize, usize, usize)) -> bool {
        self.seen.contains(&triple)
    }

    pub fn entity_index(&self, label: &str) -> Option<usize> {
        self.entities.index.get(&normalize_text(label)).copied()
    }

    pub fn relation_index(&self, label: &str) -> Option<usize> {
        self.relations.index.get(&normalize_text(label)).copied()
    }

    pub fn entity_label(&self, index: usize) -> Option<&str> {
        self.entities.labels.get(index).map(String::as_str)
    }
}

/// Exact match of the normalized surface against entity labels.
pub fn link_entity<'s>(store: &'s TripleStore, surface: &str) -> Option<&'s str> {
    store.entity_index(surface).and_then(|i| store.entity_label(i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexEmbedding {
    pub dim: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    /// Row-major `num_entities x dim`.
    pub entity_re: Vec<f64>,
    pub entity_im: Vec<f64>,
    /// Row-major `num_relations x dim`.
    pub rel_re: Vec<f64>,
    pub rel_im: Vec<f64>,
}

impl ComplexEmbedding {
    pub fn zeros(num_entities: usize, num_relations: usize, dim: usize) -> Self {
        ComplexEmbedding {
            dim,
            num_entities,
            num_relations,
            entity_re: vec![0.0; num_entities * dim],
            entity_im: vec![0.0; num_entities * dim],
            rel_re: vec![0.0; num_relations * dim],
            rel_im: vec![0.0; num_relations * dim],
        }
    }

    /// Uniform in [-0.1, 0.1], filled entity re, entity im, relation re,
    /// relation im.
    pub fn random(num_entities: usize, num_relations: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut emb = Self::zeros(num_entities, num_relations, dim);
        for block in [&mut emb.entity_re, &mut emb.entity_im, &mut emb.rel_re, &mut emb.rel_im] {
            for v in block.iter_mut() {
                *v = rng.gen_range(-0.1..=0.1);
            }
        }
        emb
    }

    fn check(&self, what: &'static str, index: usize, size: usize) -> Result<()> {
        if index >= size {
            return Err(Error::IndexOutOfRange { what, index, size });
        }
        Ok(())
    }

    fn entity(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * self.dim..(i + 1) * self.dim;
        (&self.entity_re[r.clone()], &self.entity_im[r])
    }

    fn relation(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * self.dim..(i + 1) * self.dim;
        (&self.rel_re[r.clone()], &self.rel_im[r])
    }

    fn score_unchecked(&self, h: usize, r: usize, t: usize) -> f64 {
        let (hr, hi) = self.entity(h);
        let (wr, wi) = self.relation(r);
        let (tr, ti) = self.entity(t);
        (0..self.dim)
            .map(|k| wr[k] * (hr[k] * tr[k] + hi[k] * ti[k]) + wi[k] * (hr[k] * ti[k] - hi[k] * tr[k]))
            .sum()
    }

    /// Concatenated `[re | im]` row of an entity.
    pub fn entity_vector(&self, i: usize) -> Vec<f64> {
        let (re, im) = self.entity(i);
        re.iter().chain(im).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        [&self.entity_re, &self.entity_im, &self.rel_re, &self.rel_im]
            .iter()
            .all(|block| block.iter().all(|v| v.is_finite()))
    }

    /// Text format: header `E R dim`, then one row per entity and one per
    /// relation, each `re_1 .. re_dim im_1 .. im_dim` with 17 significant
    /// digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.num_entities, self.num_relations, self.dim);
        let mut row = |re: &[f64], im: &[f64]| {
            let mut first = true;
            for v in re.iter().chain(im) {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        };
        for i in 0..self.num_entities {
            let (re, im) = self.entity(i);
            row(re, im);
        }
        for i in 0..self.num_relations {
            let (re, im) = self.relation(i);
            row(re, im);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let malformed = |line: usize, detail: &str| Error::MalformedLine {
            line: line + 1,
            detail: detail.to_string(),
        };
        let (hno, header) = lines.next().ok_or_else(|| malformed(0, "missing header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| malformed(hno, "header must be `E R dim`"))?;
        let [ne, nr, dim] = dims[..] else {
            return Err(malformed(hno, "header must be `E R dim`"));
        };
        let mut emb = Self::zeros(ne, nr, dim);
        for row in 0..ne + nr {
            let (no, line) = lines.next().ok_or_else(|| malformed(hno, "too few rows"))?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| malformed(no, "bad number"))?;
            if values.len() != 2 * dim {
                return Err(malformed(no, "row length differs from 2*dim"));
            }
            let (re, im) = values.split_at(dim);
            let (dst_re, dst_im, i) = if row < ne {
                (&mut emb.entity_re, &mut emb.entity_im, row)
            } else {
                (&mut emb.rel_re, &mut emb.rel_im, row - ne)
            };
            dst_re[i * dim..(i + 1) * dim].copy_from_slice(re);
            dst_im[i * dim..(i + 1) * dim].copy_from_slice(im);
        }
        if let Some((no, _)) = lines.next() {
            return Err(malformed(no, "trailing rows"));
        }
        if !emb.is_finite() {
            return Err(Error::Config("embedding contains non-finite values".into()));
        }
        Ok(emb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Load and check the sizes against a store.
    pub fn load_for(path: impl AsRef<Path>, store: &TripleStore) -> Result<Self> {
        let emb = Self::load(path)?;
        if emb.num_entities != store.num_entities() || emb.num_relations != store.num_relations() {
            return Err(Error::Config(format!(
                "embedding has {}x{} rows, triple store has {} entities and {} relations",
                emb.num_entities,
                emb.num_relations,
                store.num_entities(),
                store.num_relations()
            )));
        }
        Ok(emb)
    }
}

pub fn complex_score(emb: &ComplexEmbedding, h: usize, r: usize, t: usize) -> Result<f64> {
    emb.check("entity", h, emb.num_entities)?;
    emb.check("relation", r, emb.num_relations)?;
    emb.check("entity", t, emb.num_entities)?;
    Ok(emb.score_unchecked(h, r, t))
}

/// Cosine between the `[re | im]` rows of two linked entities; `None`
/// when either label is not in the store.
pub fn entity_similarity(store: &TripleStore, emb: &ComplexEmbedding, a: &str, b: &str) -> Option<f64> {
    let ia = store.entity_index(a)?;
    let ib = store.entity_index(b)?;
    if ia >= emb.num_entities || ib >= emb.num_entities {
        return None;
    }
    Some(crate::text::cosine(&emb.entity_vector(ia), &emb.entity_vector(ib)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub l2_lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 50,
            learning_rate: 0.05,
            epochs: 100,
            negatives_per_positive: 5,
            l2_lambda: 1e-3,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Config("dim and negatives_per_positive must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2_lambda >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be positive, l2_lambda non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Which parameter row a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Row {
    Entity(usize),
    Relation(usize),
}

/// Sparse gradient: `[d re | d im]` per touched row.
pub type Gradient = BTreeMap<Row, Vec<f64>>;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One training example: a positive triple and its corruptions.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub positive: (usize, usize, usize),
    pub negatives: Vec<(usize, usize, usize)>,
}

/// Loss of one example and its gradient:
/// `softplus(-score(pos)) + sum softplus(score(neg)) + l2 * sum ||row||^2`
/// over the distinct rows the example touches.
pub fn example_loss(emb: &ComplexEmbedding, ex: &Example, l2: f64) -> (f64, Gradient) {
    let d = emb.dim;
    let mut grad: Gradient = BTreeMap::new();
    let mut loss = 0.0;
    let labelled = std::iter::once((ex.positive, 1.0)).chain(ex.negatives.iter().map(|&t| (t, -1.0)));
    for ((h, r, t), label) in labelled {
        let score = emb.score_unchecked(h, r, t);
        loss += softplus(-label * score);
        // d loss / d score
        let g = -label * sigmoid(-label * score);
        let (hr, hi) = emb.entity(h);
        let (wr, wi) = emb.relation(r);
        let (tr, ti) = emb.entity(t);
        let mut dh = vec![0.0; 2 * d];
        let mut dt = vec![0.0; 2 * d];
        let mut dw = vec![0.0; 2 * d];
        for k in 0..d {
            dh[k] = g * (wr[k] * tr[k] + wi[k] * ti[k]);
            dh[d + k] = g * (wr[k] * ti[k] - wi[k] * tr[k]);
            dt[k] = g * (wr[k] * hr[k] - wi[k] * hi[k]);
            dt[d + k] = g * (wr[k] * hi[k] + wi[k] * hr[k]);
            dw[k] = g * (hr[k] * tr[k] + hi[k] * ti[k]);
            dw[d + k] = g * (hr[k] * ti[k] - hi[k] * tr[k]);
        }
        for (row, delta) in [(Row::Entity(h), dh), (Row::Entity(t), dt), (Row::Relation(r), dw)] {
            let acc = grad.entry(row).or_insert_with(|| vec![0.0; 2 * d]);
            for (a, b) in acc.iter_mut().zip(delta) {
                *a += b;
            }
        }
    }
    if l2 > 0.0 {
        for (row, acc) in grad.iter_mut() {
            let (re, im) = match *row {
                Row::Entity(i) => emb.entity(i),
                Row::Relation(i) => emb.relation(i),
            };
            for (k, v) in re.iter().chain(im).enumerate() {
                loss += l2 * v * v;
                acc[k] += 2.0 * l2 * v;
            }
        }
    }
    (loss, grad)
}

fn apply(emb: &mut ComplexEmbedding, grad: &Gradient, lr: f64) {
    let d = emb.dim;
    for (row, g) in grad {
        let (re, im, i) = match *row {
            Row::Entity(i) => (&mut emb.entity_re, &mut emb.entity_im, i),
            Row::Relation(i) => (&mut emb.rel_re, &mut emb.rel_im, i),
        };
        for k in 0..d {
            re[i * d + k] -= lr * g[k];
            im[i * d + k] -= lr * g[d + k];
        }
    }
}

/// Epochs per window when judging loss trends; single epochs are noisy
/// because negatives are resampled every epoch.
pub const LOSS_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub embedding: ComplexEmbedding,
    /// Mean example loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Corrupt head or tail (even odds) with a uniformly drawn entity.
fn corrupt(triple: (usize, usize, usize), num_entities: usize, rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let (h, r, t) = triple;
    let e = rng.gen_range(0..num_entities);
    if rng.gen_bool(0.5) {
        (e, r, t)
    } else {
        (h, r, e)
    }
}

pub fn train_with_history(store: &TripleStore, cfg: &TrainConfig) -> Result<TrainReport> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut emb = ComplexEmbedding::random(store.num_entities(), store.num_relations(), cfg.dim, &mut rng);
    let mut order: Vec<usize> = (0..store.triples().len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let positive = store.triples()[i];
            let negatives = (0..cfg.negatives_per_positive)
                .map(|_| corrupt(positive, store.num_entities(), &mut rng))
                .collect();
            let ex = Example { positive, negatives };
            let (loss, grad) = example_loss(&emb, &ex, cfg.l2_lambda);
            total += loss;
            apply(&mut emb, &grad, cfg.learning_rate);
        }
        epoch_losses.push(total / order.len() as f64);
    }
    Ok(TrainReport {
        embedding: emb,
        epoch_losses,
    })
}

/// Train from a fixed seed; `epochs = 0` returns the initialization.
pub fn train(store: &TripleStore, cfg: &TrainConfig) -> Result<ComplexEmbedding> {
    train_with_history(store, cfg).map(|r| r.embedding)
}

/// Filtered mean reciprocal rank over head and tail prediction for the
/// given triples. Other known true triples are excluded from the
/// competition; ties count against the triple.
pub fn filtered_mrr(store: &TripleStore, emb: &ComplexEmbedding, triples: &[(usize, usize, usize)]) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &(h, r, t) in triples {
        let truth = emb.score_unchecked(h, r, t);
        let mut tail_rank = 1;
        let mut head_rank = 1;
        for e in 0..emb.num_entities {
            if e != t && !store.contains((h, r, e)) && emb.score_unchecked(h, r, e) >= truth {
                tail_rank += 1;
            }
            if e != h && !store.contains((e, r, t)) && emb.score_unchecked(e, r, t) >= truth {
                head_rank += 1;
            }
        }
        sum += 1.0 / tail_rank as f64 + 1.0 / head_rank as f64;
    }
    sum / (2 * triples.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dim(h: (f64, f64), w: (f64, f64), t: (f64, f64)) -> ComplexEmbedding {
        ComplexEmbedding {
            dim: 1,
            num_entities: 2,
            num_relations: 1,
            entity_re: vec![h.0, t.0],
            entity_im: vec![h.1, t.1],
            rel_re: vec![w.0],
            rel_im: vec![w.1],
        }
    }

    #[test]
    fn score_examples() {
        let zero = ComplexEmbedding::zeros(2, 1, 3);
        assert_eq!(complex_score(&zero, 0, 0, 1).unwrap(), 0.0);
        assert_eq!(
            complex_score(&one_dim((1.0, 0.0), (1.0, 0.0), (1.0, 0.0)), 0, 0, 1).unwrap(),
            1.0
        );
        assert_eq!(
            complex_score(&one_dim((0.0, 1.0), (1.0, 0.0), (0.0, 1.0)), 0, 0, 1).unwrap(),
            1.0
        );
        // w = i, h = 1, t = i: i * 1 * conj(i) = i * (-i) = 1
        assert_eq!(
            complex_score(&one_dim((1.0, 0.0), (0.0, 1.0), (0.0, 1.0)), 0, 0, 1).unwrap(),
            1.0
        );
        assert!(matches!(
            complex_score(&zero, 2, 0, 0),
            Err(Error::IndexOutOfRange {
                what: "entity",
                index: 2,
                size: 2
            })
        ));
    }

    #[test]
    fn store_interns_and_dedupes() {
        let store = TripleStore::parse("Tehran\tcapital_of\tIran\nTehran\tcapital_of\tIran\n Tehran \tin\tAsia\n");
        assert!(matches!(store, Err(Error::DuplicateLabel { .. })));
        let store = TripleStore::parse("Tehran\tcapital_of\tIran\nTehran\tcapital_of\tIran\nIran\tin\tAsia\n").unwrap();
        assert_eq!(store.triples().len(), 2);
        assert_eq!(store.num_entities(), 3);
        assert_eq!(store.num_relations(), 2);
        assert_eq!(link_entity(&store, "  Tehran"), Some("Tehran"));
        assert_eq!(link_entity(&store, "Paris"), None);
        assert!(TripleStore::parse("a\tb\n").is_err());
    }

    #[test]
    fn similarity() {
        let store = TripleStore::parse("a\tr\tb\nc\tr\td\n").unwrap();
        let mut emb = ComplexEmbedding::zeros(4, 1, 2);
        emb.entity_re = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        assert_eq!(entity_similarity(&store, &emb, "a", "a"), Some(1.0));
        assert_eq!(entity_similarity(&store, &emb, "a", "b"), Some(0.0));
        assert_eq!(entity_similarity(&store, &emb, "a", "zz"), None);
        let ab = entity_similarity(&store, &emb, "a", "c").unwrap();
        assert_eq!(Some(ab), entity_similarity(&store, &emb, "c", "a"));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let store = TripleStore::parse("a\tr\tb\n").unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            dim: 4,
            ..TrainConfig::default()
        };
        let emb = train(&store, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        assert_eq!(emb, ComplexEmbedding::random(2, 1, 4, &mut rng));
        assert!(emb.entity_re.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn empty_store_rejected() {
        assert!(matches!(
            train(&TripleStore::new(), &TrainConfig::default()),
            Err(Error::EmptyStore)
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = ComplexEmbedding::random(3, 2, 5, &mut rng);
        let back = ComplexEmbedding::from_text(&emb.to_text()).unwrap();
        assert_eq!(back, emb);
        assert!(ComplexEmbedding::from_text("1 1 2\n0 0 0 0\n").is_err());
        assert!(ComplexEmbedding::from_text("1 0 2\n0 0 0\n").is_err());
    }
}
