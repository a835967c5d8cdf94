use super::*;
use crate::dataio::ArtifactStore;
use crate::gateway::{CacheKey, ChatRequest, MockProvider, MockReply};
use crate::observer::CalibrationSet;

fn narrative(id: &str, mode: PersonaMode) -> PersonaNarrative {
    PersonaNarrative {
        subject_id: id.into(),
        text: format!("persona of {id}"),
        word_count: 3,
        mode,
        template_version: "tv".into(),
    }
}

/// Scripted world: agents answer with digest-unique tagged replies, the
/// narrator with digest-unique scene text. Digest uniqueness makes every
/// inner thought a sentinel no other prompt can contain by accident.
fn world_mock() -> MockProvider {
    MockProvider::with_responder(|req: &ChatRequest| {
        let digest = CacheKey::compute(req, "t").digest()[..10].to_string();
        let system = &req.messages[0].text;
        if system.contains("LIFE CIRCUMSTANCES") {
            MockReply::Text(format!("scene-{digest}: the kitchen falls quiet."))
        } else if system.contains("numbered lists") {
            MockReply::Text(
                "1. A sudden job relocation offer\n2. A hidden debt surfaces\n3. An aging parent moves in"
                    .into(),
            )
        } else {
            MockReply::Text(format!(
                "<INNER_THOUGHT>private-{digest}</INNER_THOUGHT><RESPONSE>public-{digest}</RESPONSE>"
            ))
        }
    })
}

fn icl() -> CalibrationSet {
    CalibrationSet::divorce_references(vec![
        ("steady couple".into(), true),
        ("volatile couple".into(), false),
    ])
}

fn engine_parts() -> (MockProvider, TemplateLibrary) {
    (world_mock(), TemplateLibrary::builtin())
}

#[test]
fn one_round_speed_date_has_three_agent_turns() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    let traj = engine.simulate_speed_date(&p1, &p2, 1).unwrap();
    assert_eq!(traj.agent_turns().count(), 3);
    assert_eq!(traj.env_turns().count(), 0);
    assert_eq!(traj.mode, TrajectoryMode::SpeedDating);
}

#[test]
fn five_rounds_give_eleven_agent_turns() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    let traj = engine.simulate_speed_date(&p1, &p2, 5).unwrap();
    assert_eq!(traj.turns.len(), 11);
}

#[test]
fn speed_date_speakers_alternate_after_the_opener() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    let traj = engine.simulate_speed_date(&p1, &p2, 4).unwrap();
    let speakers: Vec<&str> = traj.turns.iter().map(|t| t.speaker.label()).collect();
    assert_eq!(speakers[0], "p1");
    for pair in speakers.windows(2) {
        assert_ne!(pair[0], pair[1], "consecutive turns by {}", pair[0]);
    }
}

#[test]
fn partner_context_carries_responses_and_never_inner_thoughts() {
    let (mock, templates) = engine_parts();
    let capture = mock.capture();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    let traj = engine.simulate_speed_date(&p1, &p2, 3).unwrap();

    let opener_response = &traj.turns[0].response;
    let requests = capture.requests();
    // P2's first prompt (request index 1) must quote P1's public opener.
    assert!(requests[1].flat_text().contains(opener_response));

    for turn in traj.agent_turns() {
        let thought = turn.inner_thought.as_deref().unwrap();
        assert!(!thought.is_empty());
        for request in &requests {
            assert!(
                !request.flat_text().contains(thought),
                "inner thought of {} leaked into a prompt",
                turn.speaker.label()
            );
        }
    }
}

#[test]
fn rounds_below_one_are_rejected() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    assert!(matches!(
        engine.simulate_speed_date(&p1, &p2, 0),
        Err(WorldError::BadSchedule(_))
    ));
}

#[test]
fn divorce_personas_cannot_speed_date() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::Divorce);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    assert!(matches!(
        engine.simulate_speed_date(&p1, &p2, 2),
        Err(WorldError::ModeMismatch(_))
    ));
}

#[test]
fn three_events_two_rounds_gives_the_phase_schedule() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p_h = narrative("c1-husband", PersonaMode::Divorce);
    let p_w = narrative("c1-wife", PersonaMode::Divorce);
    let events: Vec<CriticalEvent> = (0..3)
        .map(|i| CriticalEvent::new(format!("e{i}"), format!("stress scenario {i}")))
        .collect();
    let traj = engine
        .simulate_critical_events(&p_h, &p_w, &events, 2, &icl())
        .unwrap();
    assert_eq!(traj.env_turns().count(), 6); // 3 scenes + 3 evolutions
    assert_eq!(traj.agent_turns().count(), 12);
    assert_eq!(traj.scenario_descriptions.len(), 3);
    assert!(traj.env_turns().all(|t| t.inner_thought.is_none()));
}

#[test]
fn minimal_schedule_is_env_h_w_env() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p_h = narrative("c1-husband", PersonaMode::Divorce);
    let p_w = narrative("c1-wife", PersonaMode::Divorce);
    let events = vec![CriticalEvent::new("e0", "a story")];
    let traj = engine
        .simulate_critical_events(&p_h, &p_w, &events, 1, &icl())
        .unwrap();
    let speakers: Vec<&str> = traj.turns.iter().map(|t| t.speaker.label()).collect();
    assert_eq!(speakers, vec!["ENV", "c1-husband", "c1-wife", "ENV"]);
}

#[test]
fn env_prompts_see_public_responses_only() {
    let (mock, templates) = engine_parts();
    let capture = mock.capture();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p_h = narrative("c1-husband", PersonaMode::Divorce);
    let p_w = narrative("c1-wife", PersonaMode::Divorce);
    let events = vec![CriticalEvent::new("e0", "a tense evening")];
    let traj = engine
        .simulate_critical_events(&p_h, &p_w, &events, 1, &icl())
        .unwrap();

    let husband_response = &traj.turns[1].response;
    let wife_response = &traj.turns[2].response;
    let env_requests: Vec<String> = capture
        .requests()
        .iter()
        .filter(|r| r.messages[0].text.contains("LIFE CIRCUMSTANCES"))
        .map(ChatRequest::flat_text)
        .collect();
    assert_eq!(env_requests.len(), 2);
    // The evolution prompt carries both public responses.
    assert!(env_requests[1].contains(husband_response.as_str()));
    assert!(env_requests[1].contains(wife_response.as_str()));
    for prompt in &env_requests {
        for turn in traj.agent_turns() {
            let thought = turn.inner_thought.as_deref().unwrap();
            assert!(!prompt.contains(thought), "narrator prompt saw an inner thought");
        }
    }
}

#[test]
fn parse_failures_are_reprompted_then_fatal() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    // First reply malformed, second well-formed.
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let mock = MockProvider::with_responder(move |_| {
        if counter.fetch_add(1, Ordering::SeqCst) == 0 {
            MockReply::Text("no tags".into())
        } else {
            MockReply::Text("<INNER_THOUGHT>t</INNER_THOUGHT><RESPONSE>r</RESPONSE>".into())
        }
    });
    let capture = mock.capture();
    let templates = TemplateLibrary::builtin();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    let traj = engine.simulate_speed_date(&p1, &p2, 1).unwrap();
    assert_eq!(traj.agent_turns().count(), 3);
    assert!(capture.prompts()[1].contains("Reply again in exactly that format"));

    // Always-malformed output exhausts the retry budget.
    let gw = Gateway::with_mock(MockProvider::constant("still no tags"));
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    match engine.simulate_speed_date(&p1, &p2, 1) {
        Err(WorldError::MalformedTurn { round: 0, speaker, .. }) => assert_eq!(speaker, "p1"),
        other => panic!("expected MalformedTurn, got {other:?}"),
    }
}

#[test]
fn missing_inner_thought_downgrades_to_warning() {
    let mock = MockProvider::with_responder(|req: &ChatRequest| {
        let system = &req.messages[0].text;
        if system.contains("LIFE CIRCUMSTANCES") {
            MockReply::Text("the room".into())
        } else {
            MockReply::Text("<RESPONSE>just the public part</RESPONSE>".into())
        }
    });
    let templates = TemplateLibrary::builtin();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    let traj = engine.simulate_speed_date(&p1, &p2, 1).unwrap();
    assert_eq!(traj.warnings.len(), 3);
    assert!(traj.warnings[0].contains("no INNER_THOUGHT"));
    assert!(traj.agent_turns().all(|t| t.inner_thought.as_deref() == Some("")));
}

#[test]
fn narrator_violations_are_recorded_not_fatal() {
    let mock = MockProvider::with_responder(|req: &ChatRequest| {
        let system = &req.messages[0].text;
        if system.contains("LIFE CIRCUMSTANCES") {
            MockReply::Text("He says everything will be fine. The rain starts.".into())
        } else {
            MockReply::Text("<INNER_THOUGHT>t</INNER_THOUGHT><RESPONSE>r</RESPONSE>".into())
        }
    });
    let templates = TemplateLibrary::builtin();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p_h = narrative("c1-husband", PersonaMode::Divorce);
    let p_w = narrative("c1-wife", PersonaMode::Divorce);
    let events = vec![CriticalEvent::new("e0", "scenario")];
    let traj = engine
        .simulate_critical_events(&p_h, &p_w, &events, 1, &icl())
        .unwrap();
    assert!(traj.warnings.iter().any(|w| w.contains("narrator violation")));
}

#[test]
fn event_generation_yields_categorized_events() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p_h = narrative("c1-husband", PersonaMode::Divorce);
    let p_w = narrative("c1-wife", PersonaMode::Divorce);
    let events = engine.generate_critical_events(&p_h, &p_w, &icl(), 3).unwrap();
    assert_eq!(events.len(), 3);
    assert_eq!(events[0].category, EventCategory::CareerConflict);
    assert_eq!(events[1].category, EventCategory::TrustBreach);
    assert_eq!(events[2].category, EventCategory::CaregiverBurden);

    let one = engine.generate_critical_events(&p_h, &p_w, &icl(), 1).unwrap();
    assert_eq!(one.len(), 1);
}

#[test]
fn trajectory_jsonl_round_trips() {
    let (mock, templates) = engine_parts();
    let gw = Gateway::with_mock(mock);
    let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);
    let traj = engine.simulate_speed_date(&p1, &p2, 2).unwrap();
    let text = traj.to_jsonl();
    let back = Trajectory::from_jsonl(&text).unwrap();
    assert_eq!(back, traj);
}

#[test]
fn replayed_simulation_is_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cache = || ArtifactStore::open(dir.path()).unwrap();
    let templates = TemplateLibrary::builtin();
    let p1 = narrative("p1", PersonaMode::SpeedDating);
    let p2 = narrative("p2", PersonaMode::SpeedDating);

    let record_gw = Gateway::record_with_mock(world_mock(), cache());
    let engine = WorldEngine::new(&record_gw, &templates, None, WorldConfig::default());
    let recorded = engine.simulate_speed_date(&p1, &p2, 3).unwrap();

    let replay = |_: u32| {
        let gw = Gateway::replay(cache());
        let engine = WorldEngine::new(&gw, &templates, None, WorldConfig::default());
        engine.simulate_speed_date(&p1, &p2, 3).unwrap()
    };
    let first = replay(1);
    let second = replay(2);
    assert_eq!(first, second);
    assert_eq!(first.turns, recorded.turns);
}
