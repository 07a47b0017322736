mod common;

use std::path::PathBuf;
use std::sync::Arc;

use guide_core::agent::{Agent, AgentDeps, AgentEvent, AgentNote, AgentOutput, Phase, SessionPrefs};
use guide_core::embed::StubEmbedder;
use guide_core::gateway::{Ablations, Decision, MockGateway};
use guide_core::map::{Heading, TopoMap};
use guide_core::simulator::{build_environment_store, Appearance};
use guide_core::vector_store::VectorStore;
use proptest::prelude::*;

const UTTERANCES: [&str; 12] = [
    "take me to the elevator",
    "go to the library",
    "take me to the cafeteria",
    "avoid stairs",
    "avoid noisy areas",
    "stop avoiding stairs",
    "faster",
    "slow down",
    "yes",
    "no, find another way",
    "where am i",
    "sing me a song",
];

const LABELS: [&str; 4] = ["wet_floor_sign", "chair", "barrier", "poster"];

#[derive(Debug, Clone)]
enum Step {
    Say(usize),
    Arrive,
    SeeRecord(usize),
    SeeObject(usize),
    Decide(u64, bool),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0..UTTERANCES.len()).prop_map(Step::Say),
        Just(Step::Arrive),
        (0usize..104).prop_map(Step::SeeRecord),
        (0..LABELS.len()).prop_map(Step::SeeObject),
        (0u64..4, any::<bool>()).prop_map(|(id, p)| Step::Decide(id, p)),
    ]
}

fn office() -> TopoMap {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/maps/office.map");
    TopoMap::load(p).unwrap()
}

fn agent(map: &TopoMap, env: &Arc<VectorStore>) -> Agent {
    Agent::new(
        AgentDeps {
            map: map.clone(),
            env_store: env.clone(),
            gateway: Box::new(MockGateway::new()),
            prefs: SessionPrefs::default(),
            ablations: Ablations::default(),
        },
        common::id("lobby"),
        Heading::NORTH,
    )
    .unwrap()
}

fn to_event(s: &Step, env: &VectorStore) -> AgentEvent {
    match s {
        Step::Say(i) => AgentEvent::UserUtterance {
            text: UTTERANCES[*i].into(),
        },
        Step::Arrive => AgentEvent::ArrivalReport { odometry_distance: 1.0 },
        Step::SeeRecord(i) => AgentEvent::Observation {
            embedding: env.records().nth(i % env.len()).unwrap().embedding.clone(),
            object_labels: vec![],
        },
        Step::SeeObject(i) => AgentEvent::Observation {
            embedding: StubEmbedder::default().base("somewhere"),
            object_labels: vec![LABELS[*i].into()],
        },
        Step::Decide(id, proceed) => AgentEvent::UserDecision {
            prompt_id: *id,
            choice: if *proceed { Decision::Proceed } else { Decision::Reroute },
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transitions_are_total_and_keep_invariants(steps in prop::collection::vec(step(), 1..60)) {
        let map = office();
        let env = Arc::new(build_environment_store(&map, &StubEmbedder::default(), &Appearance::default(), 0.0, 0));
        let mut a = agent(&map, &env);
        let mut b = agent(&map, &env);
        for s in &steps {
            let ev = to_event(s, &env);
            let before = a.state().phase;
            let out = a.handle_event(ev.clone());
            let notes = a.take_notes();
            prop_assert_eq!(&out, &b.handle_event(ev));
            let st = a.state();

            if out.iter().any(|o| matches!(o, AgentOutput::MoveCommand { .. })) {
                prop_assert_eq!(st.phase, Phase::Traversing);
            }
            if before.is_terminal() {
                prop_assert_eq!(st.phase, before);
                let only_say = matches!(out.as_slice(), [AgentOutput::Say { .. }]);
                prop_assert!(only_say);
            }
            prop_assert!(!matches!(st.phase, Phase::Planning | Phase::Recovering));
            if st.phase.has_route() {
                prop_assert!(st.route.is_some());
            }
            if matches!(st.phase, Phase::Idle | Phase::Failed) {
                prop_assert!(st.route.is_none());
            }
            if let Some(r) = &st.route {
                prop_assert!(st.leg_index <= r.len());
            }
            prop_assert_eq!(st.pending_prompt.is_some(), st.phase == Phase::AwaitingDecision);
            for n in &notes {
                let route = match n {
                    AgentNote::RoutePlanned { route } => route,
                    AgentNote::RouteChanged { route, reason } if reason != "avoiding hazard" => route,
                    _ => continue,
                };
                let avoid = &a.prefs().avoid_tags;
                for node in route.nodes().iter().skip(1) {
                    prop_assert!(map.node(node).unwrap().tags.is_disjoint(avoid));
                }
            }
        }
    }
}
