mod common;

use std::collections::BTreeMap;

use common::item;
use mvf_core::Execution;
use mvf_pipeline::eval::{
    evaluate, parse_csv, render_csv, render_markdown, render_report, AntiOracleClient, Choice, EvalQuery, EvalReport,
    ModelClient, OracleClient, ReportFormat, TopicMergeMap, TopicScore, UniformRandomClient,
};
use mvf_pipeline::llm::LlmError;
use mvf_pipeline::mcq::McqItem;
use proptest::prelude::*;

const TOPICS: [&str; 6] = ["Composition", "Lighting", "Exposure", "Post-Processing", "color", "Zoom"];

fn items(n: usize) -> Vec<McqItem> {
    (0..n)
        .map(|i| {
            let topics: Vec<&str> = (0..1 + i % 3).map(|k| TOPICS[(i + 2 * k) % TOPICS.len()]).collect();
            item(&format!("it{i:05}-q1"), ['A', 'B', 'C', 'D'][(i * 7) % 4], &topics)
        })
        .collect()
}

fn run(client: &dyn ModelClient, items: &[McqItem], merge: &TopicMergeMap) -> EvalReport {
    evaluate(client, items, merge, "fixture", Execution::Parallel).unwrap().report
}

#[test]
fn oracle_and_anti_oracle() {
    let its = items(200);
    let merge = TopicMergeMap::default_columns();
    let oracle = run(&OracleClient::new(&its), &its, &merge);
    assert_eq!(oracle.overall(), 1.0);
    assert!(oracle.per_topic.values().all(|t| t.correct == t.total));
    let anti = run(&AntiOracleClient::new(&its), &its, &merge);
    assert_eq!(anti.overall(), 0.0);
    assert_eq!(anti.unparsed, 0);
}

#[test]
fn uniform_random_is_within_three_sigma() {
    let its = items(10_000);
    let r = run(&UniformRandomClient::new(7), &its, &TopicMergeMap::identity());
    let sigma = (0.25f64 * 0.75 / 10_000.0).sqrt();
    assert!((sigma - 0.0043).abs() < 1e-4);
    assert!((r.overall() - 0.25).abs() <= 3.0 * sigma, "accuracy {}", r.overall());
    assert_eq!(r.total, 10_000);
}

#[test]
fn overlapping_topics_count_in_each_category() {
    let its = vec![item("a-q1", 'A', &["Post-Processing", "Exposure"]), item("b-q1", 'B', &["Exposure", "exposure"])];
    let r = run(&OracleClient::new(&its), &its, &TopicMergeMap::default_columns());
    assert_eq!(r.total, 2);
    assert_eq!(r.per_topic["Exposure"], TopicScore { correct: 2, total: 2 });
    assert_eq!(r.per_topic["Post-Processing"], TopicScore { correct: 1, total: 1 });
    assert!(r.per_topic.values().map(|t| t.total).sum::<usize>() >= r.total);
}

struct Mumbler;

impl ModelClient for Mumbler {
    fn name(&self) -> &str {
        "mumbler"
    }
    fn answer(&self, q: &EvalQuery<'_>) -> Result<String, LlmError> {
        Ok(if q.id.starts_with("it0000") { "hmm".into() } else { "A".into() })
    }
}

#[test]
fn unparsed_answers_count_as_incorrect() {
    let its = items(40);
    let out = evaluate(&Mumbler, &its, &TopicMergeMap::identity(), "f", Execution::Sequential).unwrap();
    assert_eq!(out.report.unparsed, 10);
    assert_eq!(out.report.total, 40);
    let unparsed: Vec<_> = out.items.iter().filter(|r| r.choice == Choice::Unparsed).collect();
    assert!(unparsed.iter().all(|r| !r.correct));
    let expected = its.iter().skip(10).filter(|i| i.answer == 'A').count();
    assert_eq!(out.report.correct, expected);
}

struct Sighted;

impl ModelClient for Sighted {
    fn name(&self) -> &str {
        "sighted"
    }
    fn requires_image(&self) -> bool {
        true
    }
    fn answer(&self, q: &EvalQuery<'_>) -> Result<String, LlmError> {
        assert!(q.image.is_some());
        Ok("A".into())
    }
}

#[test]
fn missing_images_are_skipped_for_image_clients() {
    let dir = tempfile::tempdir().unwrap();
    let present = dir.path().join("present.jpg");
    std::fs::write(&present, b"jpeg").unwrap();
    let mut its = items(3);
    its[0].image_path = Some(present.display().to_string());
    its[1].image_path = Some(dir.path().join("gone.jpg").display().to_string());
    let out = evaluate(&Sighted, &its, &TopicMergeMap::identity(), "f", Execution::Sequential).unwrap();
    assert_eq!(out.report.total, 1);
    assert_eq!(out.report.skipped, 2);
    assert_eq!(out.skipped.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), vec![its[1].id.as_str(), its[2].id.as_str()]);
    let text_only = run(&OracleClient::new(&its), &its, &TopicMergeMap::identity());
    assert_eq!((text_only.total, text_only.skipped), (3, 0));
}

#[test]
fn reports_are_deterministic_across_execution_modes() {
    let its = items(500);
    let merge = TopicMergeMap::default_columns();
    let a = evaluate(&UniformRandomClient::new(3), &its, &merge, "f", Execution::Parallel).unwrap();
    let b = evaluate(&UniformRandomClient::new(3), &its, &merge, "f", Execution::Sequential).unwrap();
    assert_eq!(a, b);
    let c = run(&UniformRandomClient::new(4), &its, &merge);
    assert_ne!(a.report, c, "a different seed gives different answers");
}

#[test]
fn external_items_may_have_two_to_six_options() {
    let mut two = item("x-q1", 'B', &["Zoom"]);
    two.options = [('A', "yes".to_string()), ('B', "no".to_string())].into();
    let mut six = item("y-q1", 'F', &["Zoom"]);
    for l in ['E', 'F'] {
        six.options.insert(l, format!("opt {l}"));
    }
    let its = vec![two, six];
    assert_eq!(run(&OracleClient::new(&its), &its, &TopicMergeMap::identity()).overall(), 1.0);
    let mut one = item("z-q1", 'A', &["Zoom"]);
    one.options = [('A', "only".to_string())].into();
    assert!(evaluate(&OracleClient::new(&[one.clone()]), &[one], &TopicMergeMap::identity(), "f", Execution::Sequential).is_err());
}

fn fixture_report() -> EvalReport {
    serde_json::from_str(include_str!("fixtures/report_fixture.json")).unwrap()
}

#[test]
fn golden_markdown() {
    assert_eq!(render_markdown(&[fixture_report()]), include_str!("fixtures/report_fixture.md"));
    assert_eq!(render_report(&fixture_report(), ReportFormat::Markdown).unwrap(), include_str!("fixtures/report_fixture.md"));
}

#[test]
fn empty_topic_report_has_only_overall() {
    let r = EvalReport {
        model: "m".into(),
        benchmark: "b".into(),
        total: 4,
        correct: 1,
        unparsed: 0,
        skipped: 0,
        per_topic: BTreeMap::new(),
    };
    let md = render_markdown(std::slice::from_ref(&r));
    assert!(md.starts_with("| Model | Overall |\n| --- | ---: |\n| m | 25.00 |\n"));
    let csv = render_csv(&r).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(parse_csv(&csv).unwrap(), r);
}

#[test]
fn csv_layout() {
    let csv = render_csv(&fixture_report()).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,benchmark,category,correct,total,accuracy,unparsed,skipped");
    assert_eq!(lines[1], "fixture-model,fixture-bench,Composition,3,4,75.00,,");
    assert_eq!(lines[4], "fixture-model,fixture-bench,Post-Processing,1,3,33.33,,");
    assert_eq!(lines[6], "fixture-model,fixture-bench,Overall,5,8,62.50,1,1");
}

fn arb_report() -> impl Strategy<Value = EvalReport> {
    (
        "[a-z][a-z ,\"-]{0,12}",
        prop::collection::btree_map("[A-Za-z][A-Za-z ,-]{0,10}", (0usize..50, 0usize..50), 0..8),
        (0usize..100, 0usize..100, 0usize..10, 0usize..10),
    )
        .prop_filter("not the overall label", |(_, topics, _)| !topics.contains_key("Overall"))
        .prop_map(|(model, topics, (c, extra, u, s))| EvalReport {
            model,
            benchmark: "bench".into(),
            total: c + extra,
            correct: c,
            unparsed: u,
            skipped: s,
            per_topic: topics
                .into_iter()
                .map(|(k, (c, e))| (k, TopicScore { correct: c, total: c + e }))
                .collect(),
        })
}

proptest! {
    #[test]
    fn csv_round_trips(r in arb_report()) {
        prop_assert_eq!(parse_csv(&render_csv(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn merging_never_changes_overall(assign in prop::collection::vec(0usize..4, TOPICS.len()), seed in 0u64..50) {
        let its = items(300);
        let targets = ["Alpha", "Beta", "Gamma", "Delta"];
        let merge = TopicMergeMap::from_pairs(TOPICS.iter().zip(&assign).map(|(t, &a)| (t.to_string(), targets[a].to_string())));
        let client = UniformRandomClient::new(seed);
        let merged = run(&client, &its, &merge);
        let plain = run(&client, &its, &TopicMergeMap::identity());
        prop_assert_eq!(merged.overall(), plain.overall());
        prop_assert_eq!((merged.correct, merged.total), (plain.correct, plain.total));
        prop_assert!(merged.per_topic.values().map(|t| t.total).sum::<usize>() >= merged.total);
    }
}
