mod common;

use std::sync::Arc;

use common::{accepted, by_template, gateway, item, question_of};
use mvf_core::Execution;
use mvf_pipeline::bench::{
    audit_csv, build_bench, score_item, select_final, visual_dependency_filter, BenchConfig, BLIND_CORRECT,
    BLIND_UNPARSEABLE,
};
use mvf_pipeline::critique::CritiqueRecord;
use mvf_pipeline::llm::{Gateway, LlmError, ResponseCache, RetryPolicy, ScriptedClient, Step};
use mvf_pipeline::mcq::{FilterStage, McqItem, Scores};
use mvf_pipeline::offline::OfflineModel;
use mvf_pipeline::prompts::Template;
use proptest::prelude::*;

fn scored(id: &str, r: u8, v: u8, e: u8) -> McqItem {
    let mut it = item(id, 'A', &["Composition"]);
    it.scores = Some(Scores {
        relevance: r,
        visual_dependency: v,
        expertise: e,
    });
    it
}

#[test]
fn blind_answers_decide_the_dependency_stage() {
    let it = item("img1-q1", 'C', &["Lighting"]);
    for (reply, passed, detail) in [
        ("C", false, BLIND_CORRECT.to_string()),
        ("A) first", true, "blind_wrong:A".to_string()),
        ("I have no idea", true, BLIND_UNPARSEABLE.to_string()),
    ] {
        let gw = gateway(Arc::new(ScriptedClient::constant("m", reply)));
        let r = visual_dependency_filter(&it, &gw).unwrap();
        assert_eq!(r.stage, FilterStage::VisualDependency);
        assert_eq!((r.passed, r.detail), (passed, detail), "{reply}");
    }
}

#[test]
fn seventy_of_a_hundred_blind_answerable_are_removed() {
    let items: Vec<McqItem> = (0..100)
        .map(|i| item(&format!("img{i:03}-q1"), ['A', 'B', 'C', 'D'][i % 4], &["Composition"]))
        .collect();
    let keys: std::collections::HashMap<String, (char, bool)> = items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.question.clone(), (it.answer, i % 10 < 7)))
        .collect();
    let client = by_template(move |t, req| {
        assert_eq!(t, Template::BlindAnswer);
        let (key, answerable) = keys[question_of(&req.prompt)];
        let wrong = if key == 'A' { 'B' } else { 'A' };
        Ok(format!("{}", if answerable { key } else { wrong }))
    });
    let gw = gateway(client);
    let removed = items
        .iter()
        .filter(|it| !visual_dependency_filter(it, &gw).unwrap().passed)
        .count();
    assert_eq!(removed, 70);
    assert_eq!(removed as f64 / items.len() as f64, 0.70);
}

#[test]
fn blind_prompt_holds_only_question_and_options() {
    let critique = "Soft light falls from the left. The crop is tight on the subject. Colors stay muted throughout.";
    let records = vec![CritiqueRecord {
        critique: critique.into(),
        ..accepted("img1", critique)
    }];
    let spy = Arc::new(ScriptedClient::from_fn("spy", |req| {
        mvf_pipeline::llm::LlmClient::complete(&OfflineModel, req)
    }));
    let gw = Gateway::new(spy.clone());
    let cfg = BenchConfig {
        top_critiques: 1,
        per_critique: 5,
        final_k: 3,
        execution: Execution::Sequential,
    };
    build_bench(&records, &gw, &gw.with_tag("small"), &cfg).unwrap();
    let calls = spy.calls();
    let blind: Vec<_> = calls
        .iter()
        .filter(|c| Template::of_prompt(&c.prompt) == Some(Template::BlindAnswer))
        .collect();
    assert_eq!(blind.len(), 5);
    for c in blind {
        assert!(!c.prompt.contains(critique));
        assert!(!c.prompt.contains("/photos/"));
        assert!(!c.prompt.contains("Answer:"), "the key is not shown");
    }
    for c in calls.iter().filter(|c| Template::of_prompt(&c.prompt) != Some(Template::GenerateMcq)) {
        assert!(!c.prompt.contains(critique));
    }
}

#[test]
fn score_examples() {
    let it = item("x-q1", 'A', &["Lighting"]);
    let s = score_item(&it, &gateway(Arc::new(ScriptedClient::constant("m", "8, 9, 7")))).unwrap().unwrap();
    assert_eq!((s.relevance, s.visual_dependency, s.expertise), (8, 9, 7));
    assert_eq!(s.mean(), 8.0);
    for bad in ["11, 9, 7", "8, 9"] {
        assert_eq!(score_item(&it, &gateway(Arc::new(ScriptedClient::constant("m", bad)))).unwrap(), None);
    }
}

#[test]
fn larger_k_keeps_the_pool_and_warns() {
    let pool = vec![scored("a", 5, 5, 5), scored("b", 9, 9, 9)];
    let sel = select_final(&pool, 10);
    assert_eq!(sel.selected.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), vec!["b", "a"]);
    assert_eq!(sel.warnings.len(), 1);
}

#[test]
fn equal_means_prefer_expertise_then_id() {
    let pool = vec![scored("c", 8, 9, 7), scored("a", 8, 7, 9), scored("b", 7, 8, 9), scored("d", 9, 8, 7)];
    let sel = select_final(&pool, 4);
    let ids: Vec<&str> = sel.selected.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids, vec!["a", "b", "c", "d"]);
    assert!(sel.selected.iter().all(|i| i.last_stage().unwrap().stage == FilterStage::Topk));
}

#[test]
fn cap_of_1500_is_deterministic() {
    let pool: Vec<McqItem> = (0..2000)
        .map(|i| scored(&format!("i{i:04}"), (i % 10 + 1) as u8, ((i / 10) % 10 + 1) as u8, ((i / 100) % 10 + 1) as u8))
        .collect();
    let a = select_final(&pool, 1500);
    let mut rev = pool.clone();
    rev.reverse();
    let b = select_final(&rev, 1500);
    assert_eq!(a.selected.len(), 1500);
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.audit, b.audit);
    assert_eq!(a.audit.iter().filter(|r| r.selected).count(), 1500);
    let csv = audit_csv(&a.audit).unwrap();
    assert!(csv.starts_with("rank,id,image_id,relevance,visual_dependency,expertise,mean,selected\n"));
    assert_eq!(csv.lines().count(), 2001);
}

proptest! {
    #[test]
    fn selection_is_a_sorted_prefix(raw in prop::collection::vec((1u8..=10, 1u8..=10, 1u8..=10), 0..60), k in 0usize..70, rot in 0usize..60) {
        let pool: Vec<McqItem> = raw.iter().enumerate().map(|(i, &(r, v, e))| scored(&format!("p{i:02}"), r, v, e)).collect();
        let sel = select_final(&pool, k);
        prop_assert_eq!(sel.selected.len(), k.min(pool.len()));
        for w in sel.ranked.windows(2) {
            let (a, b) = (w[0].scores.unwrap(), w[1].scores.unwrap());
            prop_assert!((a.sum(), a.expertise) >= (b.sum(), b.expertise));
            if (a.sum(), a.expertise) == (b.sum(), b.expertise) {
                prop_assert!(w[0].id < w[1].id);
            }
        }
        let mut rotated = pool.clone();
        if !rotated.is_empty() {
            let n = rot % rotated.len();
            rotated.rotate_left(n);
        }
        prop_assert_eq!(select_final(&rotated, k).selected, sel.selected);
    }
}

fn corpus() -> Vec<CritiqueRecord> {
    let sentences = [
        "The warm light rakes across the wall and the shadows stay open.",
        "The crop is tight and the subject sits on the left third.",
        "Colors are muted and the tone is cool overall.",
        "The focus is crisp on the eyes with a shallow depth of field.",
        "Some vignette was added in processing and it suits the mood.",
        "The story of the moment comes through in the gesture.",
    ];
    (0..20)
        .map(|i| {
            let n = 2 + i % 5;
            let text = (0..n).map(|k| sentences[(i + k) % sentences.len()]).collect::<Vec<_>>().join(" ");
            accepted(&format!("img{i:02}"), &text)
        })
        .collect()
}

#[test]
fn stage_order_is_fixed_in_every_log() {
    let gw = Gateway::new(Arc::new(OfflineModel::new()));
    let cfg = BenchConfig {
        top_critiques: 12,
        per_critique: 5,
        final_k: 20,
        execution: Execution::Parallel,
    };
    let build = build_bench(&corpus(), &gw, &gw.with_tag("small"), &cfg).unwrap();
    assert_eq!(build.counts.critiques, 12);
    assert_eq!(build.counts.generated, 60);
    let c = &build.counts;
    assert!(c.selected <= c.scored && c.scored <= c.after_dependency && c.after_dependency <= c.generated);
    assert_eq!(c.selected, 20.min(c.scored));
    for it in &build.pool {
        let stages: Vec<FilterStage> = it.filter_log.iter().map(|r| r.stage).collect();
        assert!(FilterStage::ORDER.starts_with(&stages) || stages == FilterStage::ORDER[..2]);
        assert!(it.filter_log.iter().rev().skip(1).all(|r| r.passed), "a failed stage ends the log");
    }
    for it in &build.selection.selected {
        let stages: Vec<FilterStage> = it.filter_log.iter().map(|r| r.stage).collect();
        assert_eq!(stages, FilterStage::ORDER);
        assert!(it.filter_log.iter().all(|r| r.passed));
    }
}

#[test]
fn top_critiques_larger_than_corpus_use_everything() {
    let gw = Gateway::new(Arc::new(OfflineModel::new()));
    let cfg = BenchConfig {
        top_critiques: 5000,
        per_critique: 5,
        final_k: 1500,
        execution: Execution::Sequential,
    };
    let build = build_bench(&corpus(), &gw, &gw, &cfg).unwrap();
    assert_eq!(build.counts.critiques, 20);
    assert_eq!(build.counts.generated, 100);
    assert!(build.selection.warnings.iter().any(|w| w.contains("1500")));
}

#[test]
fn warm_cache_rebuild_is_byte_identical() {
    let cache = tempfile::tempdir().unwrap();
    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    let cfg = BenchConfig {
        top_critiques: 15,
        per_critique: 5,
        final_k: 30,
        execution: Execution::Parallel,
    };
    let gw = Gateway::new(Arc::new(OfflineModel::new())).with_cache(ResponseCache::open(cache.path()).unwrap());
    build_bench(&corpus(), &gw, &gw.with_tag("small"), &cfg).unwrap().write(out1.path()).unwrap();

    let down = Arc::new(ScriptedClient::sequence("down", vec![Step::Fail(LlmError::Transport("x".into()))]));
    let warm = Gateway::new(down.clone())
        .with_policy(RetryPolicy::immediate(1))
        .with_cache(ResponseCache::open(cache.path()).unwrap());
    build_bench(&corpus(), &warm, &warm.with_tag("small"), &cfg).unwrap().write(out2.path()).unwrap();
    assert_eq!(down.call_count(), 0);
    for f in ["bench.jsonl", "pool.jsonl", "selection_audit.csv", "bench_counts.json"] {
        assert_eq!(
            std::fs::read(out1.path().join(f)).unwrap(),
            std::fs::read(out2.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
