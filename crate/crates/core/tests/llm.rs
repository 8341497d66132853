mod common;

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use common::StubServer;
use divesound::llm::{
    parse_cluster_response, parse_subcategory_response, run_taxonomy_pipeline, ChatBackend, ChatRequest,
    Completion, DropReason, HttpChatClient, LlmError, ParseError, PipelineOptions, RecordingClient, ReplayStore,
    RetryPolicy, API_KEY_ENV,
};
use divesound::parallel;
use divesound::taxonomy::{parse_labels, taxonomy_to_json, validate_taxonomy, Category, SourceLabel};
use proptest::prelude::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture_labels() -> Vec<SourceLabel> {
    parse_labels(&std::fs::read_to_string(fixtures().join("labels.tsv")).unwrap()).unwrap()
}

/// Options matching the CLI defaults, so the same fixtures serve both.
fn fixture_options() -> PipelineOptions {
    PipelineOptions::new("gpt-4")
}

/// Canned answers keyed on the user message, standing in for the model when
/// the replay fixtures are recorded.
struct Scripted;

impl ChatBackend for Scripted {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let user = &request.messages[1].content;
        let content = if user.contains("Category: animals") {
            "Here is the grouping:\n```json\n{\"classes\": [{\"class_name\": \"dog\", \"member_labels\": [\"dog barking\", \"dog howling\"]}, {\"class_name\": \"cat\", \"member_labels\": [\"cat purring\"]}], \"discarded_labels\": []}\n```"
        } else if user.contains("Category: vehicle") {
            "{\"classes\": [{\"class_name\": \"car\", \"member_labels\": [\"car engine starting\"]}, {\"class_name\": \"train\", \"member_labels\": [\"train horn\"]}]}"
        } else if user.contains("Sound event class: dog") {
            "{\"subcategories\": [{\"name\": \"small dog\", \"adjectives\": [\"yappy\", \"high-pitched\"]}, {\"name\": \"large dog\", \"adjectives\": [\"deep\", \"booming\"], \"description\": \"big breeds\"}]}"
        } else if user.contains("Sound event class: cat") {
            "{\"subcategories\": [{\"name\": \"kitten\", \"adjectives\": [\"tiny\", \"squeaky\"]}, {\"name\": \"adult cat\", \"adjectives\": [\"low\", \"rumbling\", \"steady\"]}]}"
        } else if user.contains("Sound event class: car") {
            "{\"subcategories\": [{\"name\": \"sports car\", \"adjectives\": [\"roaring\", \"revving\"]}, {\"name\": \"truck\", \"adjectives\": [\"rumbling\", \"heavy\"]}, {\"name\": \"scooter\", \"adjectives\": [\"buzzing\"]}]}"
        } else if user.contains("Sound event class: train") {
            "{\"subcategories\": [{\"name\": \"steam train\", \"adjectives\": [\"chugging\", \"whistling\"]}, {\"name\": \"subway\", \"adjectives\": [\"screeching\"]}]}"
        } else {
            return Err(LlmError::BadCompletion(format!("unscripted request: {user}")));
        };
        Ok(Completion {
            content: content.to_string(),
            model_id: "gpt-4-0613".into(),
        })
    }
}

#[test]
#[ignore = "rewrites tests/fixtures/replay; run after changing prompt templates"]
fn regenerate_replay_fixtures() {
    let dir = fixtures().join("replay");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    let store = ReplayStore::create(&dir).unwrap();
    let backend = RecordingClient::new(Scripted, store).with_fixed_timestamp(1_700_000_000);
    let out = run_taxonomy_pipeline(&fixture_labels(), &backend, &fixture_options()).unwrap();
    std::fs::write(fixtures().join("expected_taxonomy.json"), taxonomy_to_json(&out.taxonomy)).unwrap();
}

#[test]
fn replay_reproduces_fixture_taxonomy() {
    let store = ReplayStore::open(fixtures().join("replay")).unwrap();
    let out = run_taxonomy_pipeline(&fixture_labels(), &store, &fixture_options()).unwrap();
    let json = taxonomy_to_json(&out.taxonomy);
    let expected = std::fs::read_to_string(fixtures().join("expected_taxonomy.json")).unwrap();
    assert_eq!(json, expected);

    let t = &out.taxonomy;
    let names: Vec<&str> = t.classes.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["dog", "cat", "car"]);
    assert_eq!(t.class("car").unwrap().subcategories.len(), 2);
    assert!(validate_taxonomy(t).is_empty());
    let prov = t.provenance.as_ref().unwrap();
    assert_eq!(prov.model_id, "gpt-4-0613");
    assert_eq!(prov.transcript_hashes.len(), 6);
    assert_eq!(out.report.requests, 6);
    assert_eq!(out.report.dropped_classes.len(), 1);
    assert_eq!(out.report.dropped_classes[0].class_name, "train");
    assert_eq!(out.report.dropped_classes[0].reason, DropReason::TooFewSubcategories { valid: 1 });
    assert_eq!(out.report.rejected_subcategories.len(), 2);
}

#[test]
fn replay_is_byte_deterministic_across_runs_and_threads() {
    let store = ReplayStore::open(fixtures().join("replay")).unwrap();
    let run = |par: usize| {
        let opts = PipelineOptions {
            parallelism: par,
            ..fixture_options()
        };
        taxonomy_to_json(&run_taxonomy_pipeline(&fixture_labels(), &store, &opts).unwrap().taxonomy)
    };
    let first = run(1);
    for par in [1, 2, 4, 8] {
        assert_eq!(run(par), first);
    }
}

#[test]
fn replay_fixture_files_verify() {
    let dir = fixtures().join("replay");
    let store = ReplayStore::open(&dir).unwrap();
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let hash = path.file_stem().unwrap().to_str().unwrap().to_string();
        let t = store.get(&hash).unwrap().unwrap();
        t.verify().unwrap();
        n += 1;
    }
    assert_eq!(n, 6);
}

#[test]
fn replay_miss_names_the_hash() {
    let full = fixtures().join("replay");
    let dir = tempfile::tempdir().unwrap();
    let mut removed = None;
    for entry in std::fs::read_dir(&full).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if removed.is_none() && text.contains("Sound event class: cat") {
            removed = Some(path.file_stem().unwrap().to_str().unwrap().to_string());
            continue;
        }
        std::fs::write(dir.path().join(path.file_name().unwrap()), text).unwrap();
    }
    let missing = removed.unwrap();
    let store = ReplayStore::open(dir.path()).unwrap();
    match run_taxonomy_pipeline(&fixture_labels(), &store, &fixture_options()) {
        Err(LlmError::ReplayMiss(hash)) => assert_eq!(hash, missing),
        other => panic!("expected replay miss, got {other:?}"),
    }
}

#[test]
fn recording_then_replay_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let store = ReplayStore::create(dir.path()).unwrap();
    let opts = PipelineOptions {
        seed: Some(42),
        ..fixture_options()
    };
    let live = run_taxonomy_pipeline(&fixture_labels(), &RecordingClient::new(Scripted, store.clone()), &opts).unwrap();
    let replayed = run_taxonomy_pipeline(&fixture_labels(), &store, &opts).unwrap();
    assert_eq!(live.taxonomy, replayed.taxonomy);
    // A different seed is a different request.
    assert!(matches!(
        run_taxonomy_pipeline(&fixture_labels(), &store, &fixture_options()),
        Err(LlmError::ReplayMiss(_))
    ));
}

#[test]
fn concurrent_store_writes() {
    let dir = tempfile::tempdir().unwrap();
    let store = ReplayStore::create(dir.path()).unwrap();
    let backend = RecordingClient::new(Scripted, store.clone());
    let requests: Vec<ChatRequest> = (0..32)
        .map(|i| {
            ChatRequest::new(
                "gpt-4",
                vec![
                    divesound::llm::ChatMessage::system(format!("s{i}")),
                    divesound::llm::ChatMessage::user("Sound event class: dog"),
                ],
                None,
            )
        })
        .collect();
    parallel::with_threads(8, || {
        parallel::try_map(&requests, |r| backend.complete(r)).unwrap();
    });
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 32);
    for r in &requests {
        assert!(store.get(&r.hash()).unwrap().is_some());
    }
}

fn completion_body(content: &str) -> String {
    serde_json::json!({
        "id": "cmpl-1",
        "model": "gpt-4-0613",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(1),
    }
}

fn simple_request() -> ChatRequest {
    ChatRequest::new("gpt-4", vec![divesound::llm::ChatMessage::user("hi")], Some(1))
}

#[test]
fn http_client_posts_openai_shape() {
    let seen = std::sync::Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let server = StubServer::start(move |req| {
        log.lock().unwrap().push(req.clone());
        (200, completion_body("hello"))
    });
    std::env::set_var(API_KEY_ENV, "sk-test");
    let client = HttpChatClient::new(format!("{}/v1/", server.base_url)).unwrap();
    std::env::remove_var(API_KEY_ENV);
    let c = client.complete(&simple_request()).unwrap();
    assert_eq!(c.content, "hello");
    assert_eq!(c.model_id, "gpt-4-0613");
    let reqs = seen.lock().unwrap();
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(reqs[0].header("authorization"), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&reqs[0].body).unwrap();
    assert_eq!(body["model"], "gpt-4");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["seed"], 1);
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn http_client_gives_up_after_retries() {
    let server = StubServer::start(|_| (500, "{\"error\": \"boom\"}".into()));
    let client = HttpChatClient::new(&server.base_url).unwrap().with_retry(fast_retry());
    match client.complete(&simple_request()) {
        Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(server.hits(), 4);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let client = HttpChatClient::new(common::closed_port_url()).unwrap().with_retry(fast_retry());
    let err = run_taxonomy_pipeline(&fixture_labels(), &client, &fixture_options()).unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 4, .. }), "{err:?}");
    assert!(err.is_network());
}

#[test]
fn client_errors_are_not_retried_but_rate_limits_are() {
    let server = StubServer::start(|_| (400, "{\"error\": \"bad\"}".into()));
    let client = HttpChatClient::new(&server.base_url).unwrap().with_retry(fast_retry());
    assert!(matches!(client.complete(&simple_request()), Err(LlmError::Status { status: 400, .. })));
    assert_eq!(server.hits(), 1);

    let calls = std::sync::atomic::AtomicUsize::new(0);
    let server = StubServer::start(move |_| {
        if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
            (429, "{}".into())
        } else {
            (200, completion_body("ok"))
        }
    });
    let client = HttpChatClient::new(&server.base_url).unwrap().with_retry(fast_retry());
    assert_eq!(client.complete(&simple_request()).unwrap().content, "ok");
    assert_eq!(server.hits(), 2);
}

// Randomized mutations of well-formed answers.

fn label_pool() -> Vec<String> {
    (0..12).map(|i| format!("label {i}")).collect()
}

fn cluster_json(clusters: &[(String, Vec<String>)], discarded: &[String]) -> String {
    let classes: Vec<serde_json::Value> = clusters
        .iter()
        .map(|(n, m)| serde_json::json!({"class_name": n, "member_labels": m}))
        .collect();
    serde_json::json!({"classes": classes, "discarded_labels": discarded}).to_string()
}

#[derive(Debug, Clone)]
enum ClusterMutation {
    None,
    Hallucinate(String),
    Repeat,
    RepeatInDiscarded,
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cluster_parser_invariants(
        assignment in prop::collection::vec(0usize..4, 12),
        mutation in prop_oneof![
            Just(ClusterMutation::None),
            "[a-z]{3,8}".prop_map(ClusterMutation::Hallucinate),
            Just(ClusterMutation::Repeat),
            Just(ClusterMutation::RepeatInDiscarded),
        ],
        prose in "[A-Za-z ,.]{0,30}",
    ) {
        let pool = label_pool();
        // Bucket 3 is "discarded"; buckets 0..3 are clusters.
        let mut clusters: Vec<(String, Vec<String>)> = (0..3).map(|i| (format!("class {i}"), Vec::new())).collect();
        let mut discarded = Vec::new();
        for (label, &b) in pool.iter().zip(&assignment) {
            if b == 3 { discarded.push(label.clone()) } else { clusters[b].1.push(label.clone()) }
        }
        clusters.retain(|(_, m)| !m.is_empty());
        prop_assume!(!clusters.is_empty());
        let mut expect_err = true;
        match &mutation {
            ClusterMutation::None => expect_err = false,
            ClusterMutation::Hallucinate(l) => clusters[0].1.push(format!("{l} (invented)")),
            ClusterMutation::Repeat => {
                let l = clusters[0].1[0].clone();
                if clusters.len() > 1 { clusters[1].1.push(l) } else { clusters[0].1.push(l) }
            }
            ClusterMutation::RepeatInDiscarded => discarded.push(clusters[0].1[0].clone()),
        }
        let raw = format!("{prose}\n{}\n{prose}", cluster_json(&clusters, &discarded));
        let parsed = parse_cluster_response(&raw, Category::Others, &pool);
        match (&mutation, parsed) {
            (_, Ok(r)) => {
                prop_assert!(!expect_err, "mutation {:?} was accepted", mutation);
                let mut all: Vec<&String> = r.clusters.iter().flat_map(|c| &c.member_labels).chain(&r.discarded_labels).collect();
                let n = all.len();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), n, "a label was used twice");
                prop_assert_eq!(n, pool.len(), "members and discarded must partition the input");
                prop_assert!(all.iter().all(|l| pool.contains(l)));
            }
            (ClusterMutation::Hallucinate(_), Err(e)) => prop_assert!(matches!(e, ParseError::Hallucination(_))),
            (ClusterMutation::Repeat | ClusterMutation::RepeatInDiscarded, Err(e)) => prop_assert!(matches!(e, ParseError::DuplicateLabel(_))),
            (ClusterMutation::None, Err(e)) => prop_assert!(false, "clean response rejected: {e}"),
        }
    }

    #[test]
    fn subcategory_parser_invariants(
        items in prop::collection::vec((0usize..5, 0usize..7), 0..8),
    ) {
        let subs: Vec<serde_json::Value> = items
            .iter()
            .map(|&(name, adjs)| serde_json::json!({
                "name": format!("sub {name}"),
                "adjectives": (0..adjs).map(|a| format!("adj{a}")).collect::<Vec<_>>(),
            }))
            .collect();
        let raw = serde_json::json!({"subcategories": subs}).to_string();
        let p = parse_subcategory_response(&raw).unwrap();
        prop_assert_eq!(p.valid.len() + p.violations.len(), items.len());
        let mut names: Vec<&str> = p.valid.iter().map(|s| s.name.as_str()).collect();
        prop_assert!(p.valid.iter().all(|s| (2..=4).contains(&s.adjectives.len())));
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        prop_assert_eq!(names.len(), n);
        let mut first = std::collections::HashSet::new();
        for (i, &(name, adjs)) in items.iter().enumerate() {
            let dup = !first.insert(name);
            let bad = dup || !(2..=4).contains(&adjs);
            let reported = p.violations.iter().any(|v| v.index == i);
            prop_assert_eq!(bad, reported, "item {}", i);
        }
    }

    #[test]
    fn pipeline_output_is_always_valid(
        assignment in prop::collection::vec(0usize..4, 12),
        adjective_counts in prop::collection::vec(0usize..6, 3),
    ) {
        struct Random { assignment: Vec<usize>, adjs: Vec<usize> }
        impl ChatBackend for Random {
            fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
                let user = &request.messages[1].content;
                let content = if user.starts_with("Category:") {
                    let pool = label_pool();
                    let mut clusters: Vec<(String, Vec<String>)> = (0..3).map(|i| (format!("class {i}"), Vec::new())).collect();
                    for (l, &b) in pool.iter().zip(&self.assignment) {
                        if b < 3 { clusters[b].1.push(l.clone()) }
                    }
                    clusters.retain(|(_, m)| !m.is_empty());
                    cluster_json(&clusters, &[])
                } else {
                    let subs: Vec<serde_json::Value> = self.adjs.iter().enumerate().map(|(i, &n)| serde_json::json!({
                        "name": format!("s{i}"),
                        "adjectives": (0..n).map(|a| format!("a{a}")).collect::<Vec<_>>(),
                    })).collect();
                    serde_json::json!({"subcategories": subs}).to_string()
                };
                Ok(Completion { content, model_id: "m".into() })
            }
        }
        let labels: Vec<SourceLabel> = label_pool().into_iter().map(|l| SourceLabel::new(l, Category::Others).unwrap()).collect();
        let backend = Random { assignment, adjs: adjective_counts.clone() };
        let out = run_taxonomy_pipeline(&labels, &backend, &fixture_options()).unwrap();
        prop_assert!(validate_taxonomy(&out.taxonomy).is_empty());
        let valid_subs = adjective_counts.iter().filter(|n| (2..=4).contains(*n)).count();
        if valid_subs < 2 {
            prop_assert!(out.taxonomy.classes.is_empty());
        }
        for c in &out.taxonomy.classes {
            prop_assert_eq!(c.subcategories.len(), valid_subs);
        }
    }
}
