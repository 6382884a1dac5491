mod common;

use std::collections::HashMap;

use mcqgen::eval::{breakdown, confidence, moments_parallel, EvalRecord, Moments};
use mcqgen::{ContentLabel, McqItem, QType};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn records(max: usize) -> impl Strategy<Value = Vec<EvalRecord>> {
    (any::<u64>(), 1..=max).prop_map(|(seed, n)| random_records(&mut ChaCha8Rng::seed_from_u64(seed), n, 4))
}

fn same(a: &Moments, b: &Moments) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() < 1e-9;
    a.n == b.n
        && a.hard == b.hard
        && close(a.soft_accuracy().unwrap(), b.soft_accuracy().unwrap())
        && close(a.mean_confidence().unwrap(), b.mean_confidence().unwrap())
        && (a.n < 2 || close_opt(a.correlation().unwrap(), b.correlation().unwrap(), 1e-9))
}

proptest! {
    #[test]
    fn metrics_match_oracle(recs in records(500)) {
        let m = Moments::from_records(&recs);
        let o = oracle(&recs);
        prop_assert!((m.hard_accuracy().unwrap() - o.hard).abs() < 1e-9);
        prop_assert!((m.soft_accuracy().unwrap() - o.soft).abs() < 1e-9);
        prop_assert!((m.mean_confidence().unwrap() - o.mean_conf).abs() < 1e-9);
        prop_assert!(m.soft_accuracy().unwrap() <= 1.0);
        if recs.len() >= 2 {
            let corr = m.correlation().unwrap();
            prop_assert!(close_opt(corr, o.corr, 1e-9));
            if let Some(c) = corr {
                prop_assert!((-1.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn confidence_in_unit_interval(w in prop::collection::vec(0.0f64..10.0, 2..8)) {
        let sum: f64 = w.iter().sum();
        prop_assume!(sum > 0.0);
        let p: Vec<f64> = w.iter().map(|x| x / sum).collect();
        let c = confidence(&p);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((c - oracle_confidence(&p)).abs() < 1e-12);
    }

    #[test]
    fn constant_series_is_undefined(n in 2usize..50, k in 0usize..4) {
        let rec = EvalRecord { item_id: "x".into(), model_id: "m".into(), quantization_tag: None, probs: vec![0.4, 0.3, 0.2, 0.1], correct_index: k };
        let recs = vec![rec; n];
        prop_assert_eq!(Moments::from_records(&recs).correlation().unwrap(), None);
    }

    #[test]
    fn permutation_invariant(recs in records(200), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(same(&Moments::from_records(&recs), &Moments::from_records(&shuffled)));
    }

    #[test]
    fn label_permutation_equivariant(recs in records(200), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let permuted: Vec<EvalRecord> = recs
            .iter()
            .map(|r| {
                let mut perm: Vec<usize> = (0..r.probs.len()).collect();
                perm.shuffle(&mut rng);
                // choice i moves to slot perm[i]
                let mut probs = vec![0.0; r.probs.len()];
                for (i, &p) in r.probs.iter().enumerate() {
                    probs[perm[i]] = p;
                }
                EvalRecord { probs, correct_index: perm[r.correct_index], ..r.clone() }
            })
            .collect();
        prop_assert!(same(&Moments::from_records(&recs), &Moments::from_records(&permuted)));
    }

    #[test]
    fn merge_matches_sequential(recs in records(300), split in any::<prop::sample::Index>(), workers in 1usize..6) {
        let cut = split.index(recs.len() + 1);
        let merged = Moments::from_records(&recs[..cut]).merge(&Moments::from_records(&recs[cut..]));
        let whole = Moments::from_records(&recs);
        prop_assert!(same(&merged, &whole));
        prop_assert!(same(&moments_parallel(&recs, workers), &whole));
    }

    #[test]
    fn breakdown_is_consistent(recs in records(300), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: HashMap<String, McqItem> = recs
            .iter()
            .map(|r| {
                let item = McqItem {
                    id: r.item_id.clone(),
                    question: "q?".into(),
                    choices: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                    correct_index: r.correct_index,
                    qtype: QType::ALL[rng.gen_range(0..QType::ALL.len())],
                    content: ContentLabel::ALL[rng.gen_range(0..ContentLabel::ALL.len())],
                    flags: Default::default(),
                };
                (r.item_id.clone(), item)
            })
            .collect();
        let report = breakdown(&recs, &items).unwrap();
        for subs in [
            report.by_qtype.values().collect::<Vec<_>>(),
            report.by_content.values().collect::<Vec<_>>(),
        ] {
            let n: usize = subs.iter().map(|s| s.n).sum();
            prop_assert_eq!(n, report.n);
            let weighted: f64 = subs.iter().map(|s| s.soft_accuracy * s.n as f64).sum::<f64>() / n as f64;
            prop_assert!((weighted - report.soft_accuracy).abs() < 1e-9);
        }
    }
}
