#![allow(dead_code)]

use std::path::PathBuf;

use mcqgen::eval::EvalRecord;
use mcqgen::filters::{GazetteerRecognizer, LexiconTagger};
use mcqgen::kg::{example_loss, ComplexEmbedding, Example, Row};
use mcqgen::Candidate;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Probabilities from small integer weights so argmax ties happen.
pub fn random_probs(rng: &mut impl Rng, c: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..c).map(|_| rng.gen_range(0..6) as f64).collect();
        let sum: f64 = w.iter().sum();
        if sum > 0.0 {
            return w.iter().map(|x| x / sum).collect();
        }
    }
}

pub fn random_records(rng: &mut impl Rng, n: usize, c: usize) -> Vec<EvalRecord> {
    (0..n)
        .map(|i| EvalRecord {
            item_id: format!("i{i}"),
            model_id: "m".into(),
            quantization_tag: None,
            probs: random_probs(rng, c),
            correct_index: rng.gen_range(0..c),
        })
        .collect()
}

/// Straightforward reimplementation of every metric, no shared code.
pub struct Oracle {
    pub hard: f64,
    pub soft: f64,
    pub mean_conf: f64,
    pub confidences: Vec<f64>,
    pub corr: Option<f64>,
}

pub fn oracle_confidence(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    let v = 1.0 - h / (p.len() as f64).ln();
    v.clamp(0.0, 1.0)
}

pub fn oracle(records: &[EvalRecord]) -> Oracle {
    let n = records.len() as f64;
    let mut hard = 0usize;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        let p = &r.probs;
        let mut strictly_best = true;
        for (j, &q) in p.iter().enumerate() {
            if j != r.correct_index && q >= p[r.correct_index] {
                strictly_best = false;
            }
        }
        if strictly_best {
            hard += 1;
        }
        xs.push(oracle_confidence(p));
        ys.push(p[r.correct_index]);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    let corr = if xs.len() < 2 || constant(&xs) || constant(&ys) {
        None
    } else {
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        Some(sxy / (sxx * syy).sqrt())
    };
    Oracle {
        hard: hard as f64 / n,
        soft: my,
        mean_conf: mx,
        confidences: xs,
        corr,
    }
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() < tol,
        _ => false,
    }
}

/// `a` ranks strictly before `b`: fused score descending (missing last),
/// fill-mask before embedding, generator score descending, surface
/// ascending.
pub fn ranks_before(a: &Candidate, b: &Candidate) -> bool {
    match (a.fused_score, b.fused_score) {
        (Some(x), Some(y)) if x != y => return x > y,
        (Some(_), None) => return true,
        (None, Some(_)) => return false,
        _ => {}
    }
    let (ca, cb) = (a.provenance.class_rank(), b.provenance.class_rank());
    if ca != cb {
        return ca < cb;
    }
    if a.generator_score != b.generator_score {
        return a.generator_score > b.generator_score;
    }
    a.surface < b.surface
}

/// Selection sort with `ranks_before`, first `n`.
pub fn brute_top(mut pool: Vec<Candidate>, n: usize) -> Vec<Candidate> {
    let mut out = Vec::new();
    while out.len() < n && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if ranks_before(&pool[i], &pool[best]) {
                best = i;
            }
        }
        out.push(pool.remove(best));
    }
    out
}

fn param(emb: &mut ComplexEmbedding, row: Row, k: usize) -> &mut f64 {
    let d = emb.dim;
    match row {
        Row::Entity(i) if k < d => &mut emb.entity_re[i * d + k],
        Row::Entity(i) => &mut emb.entity_im[i * d + k - d],
        Row::Relation(i) if k < d => &mut emb.rel_re[i * d + k],
        Row::Relation(i) => &mut emb.rel_im[i * d + k - d],
    }
}

/// Relative error `|a - n| / (|a| + |n|)` between the analytic gradient
/// and central differences, over every parameter of the model.
pub fn gradient_rel_error(emb: &ComplexEmbedding, ex: &Example, l2: f64) -> f64 {
    let (_, grad) = example_loss(emb, ex, l2);
    let eps = 1e-6;
    let rows = (0..emb.num_entities)
        .map(Row::Entity)
        .chain((0..emb.num_relations).map(Row::Relation));
    let mut diff = 0.0;
    let mut norm_a = 0.0;
    let mut norm_n = 0.0;
    for row in rows {
        for k in 0..2 * emb.dim {
            let mut e = emb.clone();
            *param(&mut e, row, k) += eps;
            let up = example_loss(&e, ex, l2).0;
            *param(&mut e, row, k) -= 2.0 * eps;
            let down = example_loss(&e, ex, l2).0;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad.get(&row).map_or(0.0, |g| g[k]);
            diff += (analytic - numeric).powi(2);
            norm_a += analytic * analytic;
            norm_n += numeric * numeric;
        }
    }
    let denom = norm_a.sqrt() + norm_n.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

pub fn random_example(rng: &mut impl Rng, ne: usize, nr: usize) -> Example {
    let mut triple = || (rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne));
    let positive = triple();
    let negatives = (0..3).map(|_| triple()).collect();
    Example { positive, negatives }
}

pub fn random_embedding(rng: &mut impl Rng, ne: usize, nr: usize, dim: usize) -> ComplexEmbedding {
    let mut emb = ComplexEmbedding::zeros(ne, nr, dim);
    for block in [&mut emb.entity_re, &mut emb.entity_im, &mut emb.rel_re, &mut emb.rel_im] {
        for v in block.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    emb
}

/// Deterministic tagger over a small English vocabulary.
pub fn mock_tagger() -> LexiconTagger {
    LexiconTagger::parse(
        "the\tDET\tdet\nwar\tNOUN\tnsubj\nended\tVERB\troot\nin\tADP\tcase\n\
         capital\tNOUN\tnsubj\nis\tAUX\tcop\nshe\tPRON\tnsubj\nwent\tVERB\troot\n\
         to\tADP\tcase\nschool\tNOUN\tobl\nyesterday\tNOUN\tobl\ntoday\tNOUN\tobl\n\
         tomorrow\tNOUN\tobl\nfast\tADV\tadvmod\nquickly\tADV\tadvmod\nslowly\tADV\tadvmod\n\
         tehran\tPROPN\tnsubj\nparis\tPROPN\tnsubj\nrome\tPROPN\tnsubj\nhafez\tPROPN\tnsubj\n\
         saadi\tPROPN\tnsubj\nblue\tADJ\tamod\ntwelve\tNUM\tnummod\ntwenty\tNUM\tnummod\n\
         one\tNUM\tnummod\nhundred\tNUM\tnummod\n",
    )
    .expect("mock lexicon parses")
}

pub fn mock_ner() -> GazetteerRecognizer {
    GazetteerRecognizer::parse("tehran\tLOC\nparis\tLOC\nrome\tLOC\nhafez\tPER\nsaadi\tPER\n")
        .expect("mock gazetteer parses")
}
