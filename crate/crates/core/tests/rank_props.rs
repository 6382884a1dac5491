mod common;

use std::collections::HashSet;

use mcqgen::candidates::{embedding_candidates, merge_pool, AnswerSentence, WordVectorTable};
use mcqgen::filters::{profile_answer, run_filters, FilterContext};
use mcqgen::numwords::normalize_written_form;
use mcqgen::rank::{assemble_mcq, fuse_scores, minmax_normalize, select_top};
use mcqgen::text::{cosine, normalize_text};
use mcqgen::{Candidate, FusionWeights, PipelineConfig, Provenance, QType, QaRecord, ShuffleScope};
use proptest::prelude::*;

use common::*;

fn provenance() -> impl Strategy<Value = Provenance> {
    prop_oneof![
        Just(Provenance::FillMask("mlm".into())),
        Just(Provenance::StaticEmbedding("vec".into())),
    ]
}

const WORDS: &[&str] = &[
    "paris",
    "Paris",
    "rome",
    "tehran",
    "today",
    "tomorrow",
    "twenty one",
    "21",
    "blue",
    "fast",
    "quickly",
    " rome ",
];

fn candidate() -> impl Strategy<Value = Candidate> {
    (
        prop::sample::select(WORDS.to_vec()),
        provenance(),
        0u8..5,
        prop::option::of(0u8..5),
    )
        .prop_map(|(s, p, g, f)| {
            let mut c = Candidate::new(s, p, g as f64 / 4.0);
            c.fused_score = f.map(|f| f as f64 / 4.0);
            c
        })
}

fn distinct_pool() -> impl Strategy<Value = Vec<Candidate>> {
    prop::collection::vec(candidate(), 0..20).prop_map(|cs| {
        cs.into_iter()
            .enumerate()
            .map(|(i, mut c)| {
                c.surface = format!("{}{i:02}", c.surface.trim());
                c
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn merge_pool_idempotent_and_clean(lists in prop::collection::vec(prop::collection::vec(candidate(), 0..8), 0..4), answer in prop::sample::select(WORDS.to_vec())) {
        let pool = merge_pool(lists, answer);
        let keys: Vec<String> = pool.iter().map(|c| c.key()).collect();
        let unique: HashSet<&String> = keys.iter().collect();
        prop_assert_eq!(unique.len(), keys.len());
        prop_assert!(!keys.contains(&normalize_text(answer)));
        prop_assert_eq!(merge_pool(vec![pool.clone()], answer), pool);
    }

    #[test]
    fn embedding_neighbours_match_brute_force(
        vectors in prop::collection::vec(prop::collection::vec(-3i8..4, 3), 2..12),
        pick in any::<prop::sample::Index>(),
        k in 1usize..6,
    ) {
        let entries: Vec<(String, Vec<f64>)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("w{i}"), v.iter().map(|&x| x as f64 + 0.5).collect()))
            .collect();
        let table = WordVectorTable::new("t", entries.clone()).unwrap();
        let target = pick.index(entries.len());
        let got: Vec<String> = embedding_candidates(&table, &entries[target].0, k).into_iter().map(|c| c.surface).collect();
        let mut all: Vec<(f64, String)> = entries
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target)
            .map(|(_, (w, v))| (cosine(&entries[target].1, v), w.clone()))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let want: Vec<String> = all.into_iter().take(k).map(|(_, w)| w).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn filters_subset_and_reconcile(
        case in 0usize..3,
        picks in prop::sample::subsequence(WORDS.to_vec(), 0..WORDS.len()),
    ) {
        let (text, answer) = [
            ("she went to school yesterday", "yesterday"),
            ("the capital is Tehran", "Tehran"),
            ("the war ended in 1969", "1969"),
        ][case];
        let tagger = mock_tagger();
        let ner = mock_ner();
        let sentence = AnswerSentence::locate(text, answer).unwrap();
        let profile = profile_answer(&sentence, &tagger, &ner).unwrap();
        let ctx = FilterContext { sentence: &sentence, answer, profile: &profile, tagger: &tagger, ner: &ner };
        let pool: Vec<Candidate> = picks.iter().map(|s| Candidate::new(s.trim(), Provenance::FillMask("m".into()), 0.5)).collect();
        let out = run_filters(pool.clone(), &ctx, &PipelineConfig::default()).unwrap();
        let inputs: HashSet<String> = pool.iter().map(|c| normalize_written_form(&c.surface)).collect();
        prop_assert!(out.survivors.iter().all(|c| inputs.contains(&c.surface)));
        prop_assert_eq!(out.survivors.len() + out.rejected.len(), pool.len());
        prop_assert!(out.rejected.iter().all(|c| !c.rejections.is_empty()));
        let mut flowing = pool.len();
        for s in &out.stages {
            prop_assert_eq!(s.input, flowing);
            prop_assert_eq!(s.output + s.rejected, s.input);
            flowing = s.output;
        }
    }

    #[test]
    fn select_top_is_full_sort_prefix(pool in distinct_pool(), n in 0usize..22) {
        let got: Vec<String> = select_top(pool.clone(), n).into_iter().map(|r| r.candidate.surface).collect();
        let want: Vec<String> = brute_top(pool, n).into_iter().map(|c| c.surface).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn minmax_order_and_range(xs in prop::collection::vec(prop::option::of(-1e6f64..1e6), 0..30)) {
        let norm = minmax_normalize(&xs);
        prop_assert_eq!(norm.len(), xs.len());
        for (i, (a, na)) in xs.iter().zip(&norm).enumerate() {
            prop_assert_eq!(a.is_some(), na.is_some());
            if let Some(v) = na {
                prop_assert!((0.0..=1.0).contains(v));
            }
            for (b, nb) in xs[i..].iter().zip(&norm[i..]) {
                if let (Some(a), Some(b), Some(na), Some(nb)) = (a, b, na, nb) {
                    if a < b { prop_assert!(na <= nb); }
                    if a == b { prop_assert_eq!(na, nb); }
                }
            }
        }
    }

    #[test]
    fn minmax_affine_invariant(xs in prop::collection::vec(prop::option::of(-100.0f64..100.0), 1..20), a in 0.01f64..100.0, b in -1e3f64..1e3) {
        let moved: Vec<Option<f64>> = xs.iter().map(|x| x.map(|x| a * x + b)).collect();
        for (p, q) in minmax_normalize(&xs).iter().zip(minmax_normalize(&moved)) {
            prop_assert!(close_opt(*p, q, 1e-6));
        }
    }

    #[test]
    fn fusion_monotone(k in 0.0f64..1.0, c in 0.0f64..1.0, dk in 0.0f64..1.0, wk in 0.0f64..1.0) {
        let w = FusionWeights { kg: wk, ctx: 1.0 - wk };
        let base = fuse_scores(Some(k), Some(c), w).unwrap();
        prop_assert!(fuse_scores(Some(k + dk), Some(c), w).unwrap() >= base);
        prop_assert!(fuse_scores(Some(k), Some(c + dk), w).unwrap() >= base);
        prop_assert_eq!(fuse_scores(Some(k), None, w).unwrap(), k);
        prop_assert!(fuse_scores(None, None, w).is_err());
    }

    #[test]
    fn assembled_items_hold_the_answer_once(pool in distinct_pool(), id in "[a-z]{1,8}", seed in any::<u64>(), global in any::<bool>()) {
        prop_assume!(!pool.is_empty());
        let cfg = PipelineConfig {
            shuffle_seed_scope: if global { ShuffleScope::Global(seed) } else { ShuffleScope::PerItemId },
            ..PipelineConfig::default()
        };
        let rec = QaRecord { id, context: "ctx".into(), question: "q?".into(), answer: "The Answer".into(), answer_start: None, metadata: Default::default() };
        let top = select_top(pool, cfg.distractor_count);
        let item = assemble_mcq(&rec, "q?", &top, QType::What, &cfg).unwrap();
        prop_assert_eq!(item.choices.iter().filter(|c| *c == "The Answer").count(), 1);
        prop_assert_eq!(&item.choices[item.correct_index], "The Answer");
        prop_assert_eq!(item.choices.len(), top.len() + 1);
        prop_assert_eq!(assemble_mcq(&rec, "q?", &top, QType::What, &cfg).unwrap(), item);
    }
}
