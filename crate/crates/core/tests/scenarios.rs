use guide_core::agent::{verify_arrival, AgentNote, Verification, DEFAULT_ARRIVAL_THRESHOLD, DEFAULT_RELOC_THRESHOLD};
use guide_core::embed::{place_descriptor, StubEmbedder};
use guide_core::map::Heading;
use guide_core::scenario::{report_metrics, run_scenario, run_suite, EntryBody, RunReport, ScenarioSpec, SuiteOptions};
use guide_core::vector_store::{cosine_similarity, EmbeddingRecord, RecordMeta, StoreKind};

mod common;

use common::{prompt_precedes_flagged_moves, suite};

fn once(name: &str, seed_base: u64) -> Vec<RunReport> {
    run_suite(
        suite(name),
        SuiteOptions {
            repetitions: 1,
            seed_base,
            sigma: None,
        },
    )
    .unwrap()
}

#[test]
fn navigation_suites_meet_expectations() {
    for name in ["house", "office", "bridge", "personalization", "speed"] {
        for r in once(name, 1) {
            assert!(r.passed(), "{}: {:?}", r.name, r.expectation_failures);
            assert!(r.success, "{}: {}", r.name, r.reason);
        }
    }
}

#[test]
fn transcripts_are_reproducible() {
    for name in ["office", "kidnap", "hazard_confusion"] {
        let opts = SuiteOptions {
            repetitions: 2,
            seed_base: 11,
            sigma: Some(0.1),
        };
        let a = run_suite(suite(name), opts).unwrap();
        let b = run_suite(suite(name), opts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.transcript_jsonl(), y.transcript_jsonl(), "{}", x.name);
        }
        assert_eq!(report_metrics(&a).0, report_metrics(&b).0);
    }
}

#[test]
fn kidnaps_are_detected_and_recovered() {
    let reports = once("kidnap", 1);
    let (_, m) = report_metrics(&reports);
    assert_eq!((m.total.detection.hits, m.total.detection.total), (20, 20));
    assert_eq!((m.total.recovery.hits, m.total.recovery.total), (20, 20));
}

#[test]
fn recovery_replans_from_the_relocalized_pose() {
    for r in once("kidnap", 1) {
        let t = &r.transcript;
        let i = t
            .iter()
            .position(|e| matches!(e.body, EntryBody::Note(AgentNote::Relocalized { .. })))
            .unwrap_or_else(|| panic!("{} never relocalized", r.name));
        let EntryBody::Note(AgentNote::Relocalized { node, .. }) = &t[i].body else {
            unreachable!()
        };
        let replan = t[i..].iter().find_map(|e| match &e.body {
            EntryBody::Note(AgentNote::RouteChanged { route, reason }) if reason == "relocalized" => Some(route),
            _ => None,
        });
        let replan = replan.unwrap_or_else(|| panic!("{} did not replan", r.name));
        assert_eq!(&replan.nodes()[0], node, "{}", r.name);
    }
}

#[test]
fn perceptual_aliasing_hides_the_kidnap() {
    let r = &once("aliased", 1)[0];
    assert!(r.passed(), "{:?}", r.expectation_failures);
    assert_eq!(r.detected_kidnap, Some(false));
}

#[test]
fn hazard_prompts_come_before_movement() {
    for name in ["hazard", "hazard_confusion", "bridge"] {
        let reports = run_suite(
            suite(name),
            SuiteOptions {
                repetitions: 5,
                seed_base: 1,
                sigma: None,
            },
        )
        .unwrap();
        for r in &reports {
            assert!(prompt_precedes_flagged_moves(r), "{} seed {}", r.name, r.seed);
        }
    }
}

#[test]
fn hazard_classification_without_confusion_is_exact() {
    let reports = run_suite(
        suite("hazard"),
        SuiteOptions {
            repetitions: 5,
            seed_base: 1,
            sigma: None,
        },
    )
    .unwrap();
    let h = report_metrics(&reports).1.total.hazard;
    assert_eq!((h.tp, h.fp, h.fn_, h.tn), (15, 0, 0, 15));
}

#[test]
fn ablations_fail_or_skip_as_declared() {
    let reports = once("ablation", 1);
    let by = |n: &str| reports.iter().find(|r| r.name == n).unwrap();
    let np = by("no_planner_mock");
    assert!(np.passed() && !np.success, "{}", np.reason);
    assert!(by("no_system_prompt_mock").skipped.is_some());
    if std::env::var(guide_core::gateway::ENV_URL).is_err() {
        assert!(by("remote_house").skipped.is_some());
    }
}

#[test]
fn single_spec_runs_match_the_suite() {
    let spec = ScenarioSpec::load(suite("house").join("house_03.json")).unwrap();
    let r = run_scenario(&spec, 1).unwrap();
    let from_suite = once("house", 1).into_iter().find(|x| x.name == spec.name).unwrap();
    assert_eq!(r, from_suite);
}

fn record(desc: &str) -> EmbeddingRecord {
    EmbeddingRecord {
        id: desc.into(),
        embedding: StubEmbedder::default().base(desc),
        meta: RecordMeta {
            node: common::id("n0"),
            orientation: Heading::EAST,
            kind: StoreKind::Navigational,
            source: desc.into(),
        },
    }
}

#[test]
fn noisy_observations_of_the_right_place_verify() {
    let e = StubEmbedder::default();
    let mut arrived = 0;
    let mut worst_other: f64 = -1.0;
    for trial in 0..1000u64 {
        let place = place_descriptor(&format!("p{}", trial % 50), [0, 90, 180, 270][trial as usize % 4]);
        let rec = record(&place);
        let obs = e.embed(&place, 0.05, trial);
        if matches!(
            verify_arrival(Some(&rec), &obs, DEFAULT_ARRIVAL_THRESHOLD),
            Verification::Arrived { .. }
        ) {
            arrived += 1;
        }
        let other = record(&place_descriptor(&format!("q{trial}"), 0));
        worst_other = worst_other.max(cosine_similarity(&other.embedding, &obs).unwrap());
    }
    assert!(arrived >= 990, "{arrived}/1000");
    assert!(worst_other < DEFAULT_RELOC_THRESHOLD, "{worst_other}");
}
