mod common;

use std::fs::File;
use std::io::BufReader;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use common::{e, fixtures, inc, out, path, FIG4_QUESTION};
use proptest::prelude::*;
use rtsog_core::gateway::{
    request_key, Backend, CallKind, EoSVerdict, FixtureRecord, GatewayError, LexicalOracle, ModelGateway,
    ReplayBackend, Request, ScoredRelation, SubQuestionSet,
};
use rtsog_core::kg::{EntityId, ReasoningPath, RelationEdge};
use rtsog_core::search::WeightedPath;

fn lexical(targets: &[&str]) -> ModelGateway {
    ModelGateway::new(LexicalOracle::new(targets.iter().map(|t| e(t))))
}

fn subq(q: &str) -> SubQuestionSet {
    SubQuestionSet::identity(q).unwrap()
}

fn sunni_path() -> ReasoningPath {
    path("Afghan_National_Anthem", &[(inc("national_anthem"), "Afghanistan"), (out("religions"), "Sunni_Islam")])
}

#[test]
fn single_subquestion_is_the_question_verbatim() {
    let gw = lexical(&[]);
    let s = gw.decompose(FIG4_QUESTION, &[e("Afghan_National_Anthem")], 1).unwrap();
    assert_eq!(s.subs, vec![FIG4_QUESTION.to_string()]);
    assert_eq!(gw.ledger_snapshot().get(CallKind::Decompose), 1);
    assert_eq!(gw.ledger_snapshot().total(), 1);
}

#[test]
fn decomposition_covers_both_clauses() {
    let gw = lexical(&[]);
    let q = "What country has the national anthem Afghan National Anthem and which religions does it practice?";
    let s = gw.decompose(q, &[e("Afghan_National_Anthem")], 3).unwrap();
    assert!(s.subs.len() >= 2, "{:?}", s.subs);
    assert!(s.subs.iter().any(|x| x.contains("country")));
    assert!(s.subs.iter().any(|x| x.contains("religions")));
}

#[test]
fn filter_keeps_only_relevant_relations() {
    let gw = lexical(&[]);
    let scored = gw.filter_relations(&subq("religion"), &path("A", &[]), &[out("religion"), out("anthem_of")], 7).unwrap();
    assert_eq!(scored, vec![ScoredRelation { edge: out("religion"), score: 1.0 }]);
    assert!(gw.filter_relations(&subq("religion"), &path("A", &[]), &[], 7).unwrap().is_empty());
    assert_eq!(gw.ledger_snapshot().total(), 1, "an empty candidate list costs nothing");
}

#[test]
fn filter_caps_at_width() {
    let gw = lexical(&[]);
    let candidates: Vec<RelationEdge> = (0..10).map(|i| out(&format!("religion_{i}"))).collect();
    let scored = gw.filter_relations(&subq("religion"), &path("A", &[]), &candidates, 7).unwrap();
    assert_eq!(scored.len(), 7);
    assert!(scored.iter().all(|s| candidates.contains(&s.edge)));
}

#[test]
fn lexical_path_scores_on_fig4() {
    // Context tokens include national, anthem, country, religions; "of",
    // "statistics" and "language" are absent.
    let gw = lexical(&["Sunni_Islam"]);
    let s = subq(FIG4_QUESTION);
    let topic = e("Afghan_National_Anthem");
    let afg = path("Afghan_National_Anthem", &[(inc("national_anthem"), "Afghanistan")]);
    let lang = path(
        "Afghan_National_Anthem",
        &[(inc("national_anthem"), "Afghanistan"), (out("official_language"), "Pashto")],
    );
    let stats = path(
        "Afghan_National_Anthem",
        &[(inc("national_anthem"), "Afghanistan"), (out("country.religion_statistics"), "m.0493b56")],
    );
    let scores = gw.score_paths(&s, &topic, &[sunni_path(), afg.clone(), lang, stats]).unwrap();
    let values: Vec<f64> = scores.iter().map(|x| x.score).collect();
    // target; 0.5·1 (national_anthem); 0.5·1 (via the first hop); 0.5·max(1, 2/3)
    assert_eq!(values, vec![1.0, 0.5, 0.5, 0.5]);
    assert_eq!(scores[1].path, afg, "scores keep input order");
}

#[test]
fn score_paths_rejects_empty_and_foreign_candidates() {
    let gw = lexical(&[]);
    assert_eq!(gw.score_paths(&subq("q"), &e("A"), &[]).unwrap_err(), GatewayError::EmptyCandidates);
    assert!(matches!(gw.score_paths(&subq("q"), &e("A"), &[path("B", &[])]), Err(GatewayError::InvalidRequest(_))));
    assert_eq!(gw.ledger_snapshot().total(), 0);
}

#[test]
fn self_critic_stops_only_at_targets() {
    let gw = lexical(&["University_of_Wisconsin-Madison"]);
    let s = subq("What educational institution did Russell Wilson go to?");
    let cvt = path("Russell_Wilson", &[(out("educational_institution"), "m.0hpcv2n")]);
    let uw = cvt.extend(out("institution"), e("University_of_Wisconsin-Madison"));
    assert!(!gw.self_critic(&s, &cvt).unwrap().end_of_search);
    assert!(gw.self_critic(&s, &uw).unwrap().end_of_search);
}

#[test]
fn admission_examples() {
    let gw = lexical(&["Sunni_Islam"]);
    let s = subq(FIG4_QUESTION);
    let sunni = WeightedPath { path: sunni_path(), weight: 0.9 };
    assert!(gw.admit_to_stack(&[], FIG4_QUESTION, &s, &sunni).unwrap());
    assert!(!gw.admit_to_stack(&[sunni_path()], FIG4_QUESTION, &s, &sunni).unwrap(), "duplicate");
    let afg = WeightedPath { path: path("Afghan_National_Anthem", &[(inc("national_anthem"), "Afghanistan")]), weight: 0.8 };
    assert!(gw.admit_to_stack(&[], FIG4_QUESTION, &s, &afg).unwrap(), "relevant and heavy enough");
    assert!(matches!(
        gw.admit_to_stack(&[], FIG4_QUESTION, &s, &WeightedPath { weight: 1.5, ..afg }),
        Err(GatewayError::InvalidRequest(_))
    ));
}

#[test]
fn answer_examples() {
    let gw = lexical(&["Sunni_Islam"]);
    let s = subq(FIG4_QUESTION);
    assert_eq!(gw.generate_answer(&[sunni_path()], FIG4_QUESTION, &s).unwrap(), vec!["Sunni_Islam"]);
    assert!(gw.generate_answer(&[], FIG4_QUESTION, &s).unwrap().is_empty());
    let other = path("Afghan_National_Anthem", &[(inc("anthem"), "Afghanistan"), (out("religion"), "Sunni_Islam")]);
    assert_eq!(gw.generate_answer(&[sunni_path(), other], FIG4_QUESTION, &s).unwrap(), vec!["Sunni_Islam"]);
}

fn fixture_line(request: &Request<'_>, response: serde_json::Value) -> String {
    let rec = FixtureRecord { op: request.op().into(), key: request_key(request), response };
    serde_json::to_string(&rec).unwrap() + "\n"
}

#[test]
fn replay_passes_fixtures_through_and_misses_strictly() {
    let s = subq("q");
    let topic = e("A");
    let p = path("A", &[(out("r"), "B")]);
    let text = fixture_line(
        &Request::ScorePaths { subq: &s, topic: &topic, candidates: std::slice::from_ref(&p) },
        serde_json::json!({ "scores": [0.9] }),
    );
    let gw = ModelGateway::new(ReplayBackend::from_reader(text.as_bytes()).unwrap());
    let scored = gw.score_paths(&s, &topic, std::slice::from_ref(&p)).unwrap();
    assert_eq!(scored[0].score, 0.9);
    assert!(matches!(gw.self_critic(&s, &p), Err(GatewayError::FixtureMiss { .. })));
}

#[test]
fn replayed_golden_run_charges_one_call_per_fixture_entry() {
    let file = File::open(fixtures().join("golden/fig4.replay.jsonl")).unwrap();
    let replay = ReplayBackend::from_reader(BufReader::new(file)).unwrap();
    let entries = replay.record_count() as u64;
    let gw = ModelGateway::new(replay);
    let store = common::fig4();
    rtsog_core::answer(FIG4_QUESTION, &[e("Afghan_National_Anthem")], &store, &gw, &Default::default()).unwrap();
    assert_eq!(gw.ledger_snapshot().total(), entries);
}

#[test]
fn fresh_ledger_is_zero() {
    let gw = lexical(&[]);
    assert_eq!(gw.ledger_snapshot().total(), 0);
    for kind in CallKind::ALL {
        assert_eq!(gw.ledger_snapshot().get(kind), 0);
    }
}

/// A backend that counts its invocations and answers out of range.
#[derive(Default)]
struct Wild {
    calls: AtomicU64,
    score: f64,
}

impl Backend for Wild {
    fn decompose(&self, q: &str, _: &[EntityId], _: usize) -> Result<Vec<String>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(vec![q.to_string()])
    }
    fn filter_relations(
        &self,
        _: &SubQuestionSet,
        _: &ReasoningPath,
        c: &[RelationEdge],
        _: usize,
    ) -> Result<Vec<ScoredRelation>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut out: Vec<ScoredRelation> = c.iter().map(|edge| ScoredRelation { edge: edge.clone(), score: self.score }).collect();
        out.push(ScoredRelation { edge: RelationEdge::outgoing("hallucinated"), score: 1.0 });
        Ok(out)
    }
    fn score_paths(&self, _: &SubQuestionSet, _: &EntityId, c: &[ReasoningPath]) -> Result<Vec<f64>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(vec![self.score; c.len()])
    }
    fn self_critic(&self, _: &SubQuestionSet, _: &ReasoningPath) -> Result<EoSVerdict, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(EoSVerdict { end_of_search: false, rationale: None })
    }
    fn admit(&self, _: &[ReasoningPath], _: &str, _: &SubQuestionSet, _: &WeightedPath) -> Result<bool, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(true)
    }
    fn generate_answer(&self, _: &[ReasoningPath], _: &str, _: &SubQuestionSet) -> Result<Vec<String>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(vec![])
    }
}

proptest! {
    #[test]
    fn scores_are_clamped_and_relations_never_invented(score in -5.0f64..5.0, n in 1usize..6) {
        let backend = Arc::new(Wild { score, ..Default::default() });
        let gw = ModelGateway::from_arc(backend.clone());
        let s = subq("q");
        let candidates: Vec<RelationEdge> = (0..n).map(|i| out(&format!("r{i}"))).collect();
        let scored = gw.filter_relations(&s, &path("A", &[]), &candidates, 7).unwrap();
        prop_assert!(scored.iter().all(|x| candidates.contains(&x.edge) && (0.0..=1.0).contains(&x.score)));
        let paths: Vec<ReasoningPath> = (0..n).map(|i| path("A", &[(out("r"), &format!("B{i}"))])).collect();
        let ps = gw.score_paths(&s, &e("A"), &paths).unwrap();
        prop_assert!(ps.iter().all(|x| (0.0..=1.0).contains(&x.score)));
        gw.self_critic(&s, &paths[0]).unwrap();
        gw.generate_answer(&[], "q", &s).unwrap();
        prop_assert_eq!(gw.ledger_snapshot().total(), backend.calls.load(Ordering::SeqCst));
    }
}

proptest! {
    #[test]
    fn clause_splitting_never_loses_or_panics(
        words in prop::collection::vec(prop::sample::select(vec!["and", "which", "that", "And", "(", ")", "x", "y,", "\"", "é"]), 0..12),
        n in 1usize..5,
    ) {
        let q = words.join(" ");
        let parts = rtsog_core::gateway::split_clauses(&q, n);
        prop_assert!(!parts.is_empty() && parts.len() <= n);
    }
}
