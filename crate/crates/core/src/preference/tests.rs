use super::*;
use crate::data::{Interaction, ItemText, TextCatalog, UserComment};
use crate::llm::{MockRules, Provider};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicUsize, Ordering};

fn item_text(title: &str, category: &str, description: &str) -> ItemText {
    ItemText {
        title: title.into(),
        category: category.into(),
        description: description.into(),
    }
}

fn small_dataset() -> Dataset {
    let mut catalog = TextCatalog::default();
    catalog.items.insert("b1".into(), item_text("T", "C", "D"));
    catalog.items.insert("b2".into(), item_text("Roses", "garden", "Pruning guide"));
    catalog.comments.insert(
        "u1".into(),
        vec![UserComment {
            item_id: Some("b1".into()),
            text: "good".into(),
        }],
    );
    let train = vec![
        Interaction {
            user: 0,
            item: 0,
            timestamp: Some(10),
        },
        Interaction {
            user: 1,
            item: 1,
            timestamp: Some(5),
        },
        Interaction {
            user: 1,
            item: 0,
            timestamp: Some(7),
        },
    ];
    Dataset::new(
        vec!["u1".into(), "u2".into(), "u3".into()],
        vec!["b1".into(), "b2".into(), "b3".into()],
        train,
        vec![],
        vec![],
        catalog,
    )
    .unwrap()
}

#[test]
fn item_body_order() {
    let ds = small_dataset();
    let c = build_config_text(&ds, Subject::Item(0), DEFAULT_TEXT_BUDGET).unwrap();
    assert_eq!(c.body, "T\nC\nD");
}

#[test]
fn user_body_order() {
    let ds = small_dataset();
    let c = build_config_text(&ds, Subject::User(0), DEFAULT_TEXT_BUDGET).unwrap();
    assert_eq!(c.body, "T\nD\ngood");
}

#[test]
fn user_history_is_chronological_and_truncation_keeps_the_tail() {
    let ds = small_dataset();
    let full = build_config_text(&ds, Subject::User(1), DEFAULT_TEXT_BUDGET).unwrap();
    assert_eq!(full.body, "Roses\nPruning guide\n\nT\nD\n");
    let cut = build_config_text(&ds, Subject::User(1), 6).unwrap();
    assert_eq!(cut.body, "\n\nT\nD\n");
    assert_eq!(cut.body.chars().count(), 6);
}

#[test]
fn subject_without_text_or_interactions_is_rejected() {
    let ds = small_dataset();
    for s in [Subject::User(2), Subject::Item(2)] {
        let err = build_config_text(&ds, s, DEFAULT_TEXT_BUDGET).unwrap_err();
        assert!(matches!(err, Error::EmptyText(_)), "{err}");
    }
}

#[test]
fn keyword_parsing_dedups_and_normalizes() {
    assert_eq!(
        parse_keywords("Fantasy, epic fantasy, Fantasy", 10).unwrap(),
        vec!["fantasy", "epic fantasy"]
    );
    assert_eq!(
        parse_keywords("Some preamble\nKeywords:  Space   Opera , hard SF.", 10).unwrap(),
        vec!["space opera", "hard sf"]
    );
    let many: Vec<String> = (0..15).map(|k| format!("kw{k}")).collect();
    let parsed = parse_keywords(&many.join(", "), 10).unwrap();
    assert_eq!(parsed, many[..10].to_vec());
    assert_eq!(parse_keywords("a b c d e f, ok", 10).unwrap(), vec!["ok"]);
    assert!(parse_keywords("", 10).is_none());
    assert!(parse_keywords("Keywords: , ,", 10).is_none());
}

struct Scripted {
    replies: Vec<&'static str>,
    calls: AtomicUsize,
}

impl Provider for Scripted {
    fn model(&self) -> &str {
        "scripted"
    }
    fn embedding_dim(&self) -> usize {
        3
    }
    fn complete(&self, _: &PromptRequest) -> Result<String> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.replies[k.min(self.replies.len() - 1)].to_string())
    }
    fn embed(&self, _: &str) -> Result<Vec<f64>> {
        Ok(vec![0.0; 3])
    }
}

fn scripted(replies: Vec<&'static str>) -> LlmGateway {
    LlmGateway::new(
        Box::new(Scripted {
            replies,
            calls: AtomicUsize::new(0),
        }),
        crate::llm::ResponseCache::in_memory(),
        1,
    )
}

#[test]
fn keywords_reprompt_once() {
    let ds = small_dataset();
    let prompts = PromptSet::default();
    let gw = scripted(vec!["", "Keywords: fantasy"]);
    let kws = keywords_for(&gw, &prompts, &ds, Subject::Item(0), "profile", 10).unwrap();
    assert_eq!(kws, vec!["fantasy"]);

    let gw = scripted(vec!["", "   "]);
    let err = keywords_for(&gw, &prompts, &ds, Subject::Item(0), "profile", 10).unwrap_err();
    assert!(matches!(err, Error::ResponseParse { .. }));
}

fn rules() -> MockRules {
    MockRules::default()
        .with_item("b1", &["fantasy"])
        .with_item("b2", &["gardening", "roses"])
        .with_user("u1", &["fantasy", "epic"])
}

#[test]
fn mock_profiles_and_warm_cache() {
    let ds = small_dataset();
    let prompts = PromptSet::default();
    let gw = LlmGateway::mock(rules());
    let err = generate_profiles(&gw, &ds, &prompts, DEFAULT_TEXT_BUDGET).unwrap_err();
    // u3 and b3 have neither text nor interactions
    match err {
        Error::Failures(list) => {
            assert_eq!(list.len(), 2);
            assert!(list.iter().all(|e| matches!(e, Error::Subject { .. })));
        }
        other => panic!("unexpected {other}"),
    }
}

fn complete_dataset(n_users: usize, n_items: usize) -> Dataset {
    let mut catalog = TextCatalog::default();
    let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
    for (k, id) in items.iter().enumerate() {
        catalog
            .items
            .insert(id.clone(), item_text(&format!("Title {k}"), "books", &format!("About topic {}", k % 4)));
    }
    let train = (0..n_users)
        .flat_map(|u| (0..3).map(move |j| Interaction::new(u, (u + j) % n_items)))
        .collect();
    Dataset::new(
        (0..n_users).map(|u| format!("u{u}")).collect(),
        items,
        train,
        vec![],
        vec![],
        catalog,
    )
    .unwrap()
}

#[test]
fn profiles_complete_under_parallelism_and_cache() {
    let ds = complete_dataset(60, 40);
    let prompts = PromptSet::default();
    let rules = MockRules::default().with_item("i0", &["fantasy"]);
    let gw = LlmGateway::mock(rules);
    let profiles = generate_profiles(&gw, &ds, &prompts, DEFAULT_TEXT_BUDGET).unwrap();
    assert_eq!(profiles.users.len() + profiles.items.len(), 100);
    assert!(profiles.items[0].contains("fantasy"));
    assert!(profiles.users.iter().chain(&profiles.items).all(|p| !p.is_empty()));
    let calls = gw.stats().provider_calls;
    assert_eq!(calls, 100);
    let again = generate_profiles(&gw, &ds, &prompts, DEFAULT_TEXT_BUDGET).unwrap();
    assert_eq!(again, profiles);
    assert_eq!(gw.stats().provider_calls, calls);
}

#[test]
fn knowledge_is_deterministic_and_round_trips() {
    let ds = complete_dataset(6, 5);
    let prompts = PromptSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let head = ProjectionHead::new(64, 8, None, &mut rng);
    let build = || {
        let gw = LlmGateway::mock(MockRules::default());
        build_preference_knowledge(&gw, &ds, &prompts, &head, DEFAULT_TEXT_BUDGET, DEFAULT_MAX_KEYWORDS).unwrap()
    };
    let kp = build();
    assert_eq!(kp.user_embeddings.dim(), (6, 8));
    assert_eq!(kp.item_embeddings.dim(), (5, 8));
    assert!(kp.keywords.users.iter().all(|k| !k.is_empty() && k.len() <= 10));

    let mut a = Vec::new();
    write_preference_knowledge(&mut a, &kp).unwrap();
    let mut b = Vec::new();
    write_preference_knowledge(&mut b, &build()).unwrap();
    assert_eq!(a, b);

    let back = read_preference_knowledge(&mut a.as_slice()).unwrap();
    assert_eq!(back, kp);
}

#[test]
fn zero_text_vector_projects_to_bias() {
    let profiles = Profiles {
        users: vec!["p".into()],
        items: vec!["q".into()],
    };
    let keywords = KeywordSets {
        users: vec![vec!["a".into()]],
        items: vec![vec!["b".into()]],
    };
    let mut head = ProjectionHead::zeros(3, 2);
    head.weight.fill(0.7);
    head.bias = ndarray::arr1(&[0.25, -1.5]);
    let kp = PreferenceKnowledge::new(
        profiles,
        keywords,
        Array2::zeros((1, 3)),
        Array2::zeros((1, 3)),
        &head,
    )
    .unwrap();
    assert_eq!(kp.user_embeddings.row(0).to_vec(), vec![0.25, -1.5]);
}

#[test]
fn dimension_mismatch_is_a_config_error() {
    let ds = complete_dataset(3, 3);
    let gw = LlmGateway::mock(MockRules::default());
    let head = ProjectionHead::zeros(5, 2);
    let profiles = Profiles {
        users: vec!["p".into(); 3],
        items: vec!["p".into(); 3],
    };
    let keywords = KeywordSets {
        users: vec![vec!["k".into()]; 3],
        items: vec![vec!["k".into()]; 3],
    };
    let err = embed_preferences(&gw, &ds, &profiles, &keywords, &head).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn combined_text_format() {
    assert_eq!(
        combined_text("Likes epics.", &["fantasy".into(), "epic fantasy".into()]),
        "Likes epics. | fantasy, epic fantasy"
    );
}

#[test]
fn text_escaping_round_trips() {
    let profiles = Profiles {
        users: vec!["line one\nline\ttwo \\ back".into()],
        items: vec![String::new()],
    };
    let keywords = KeywordSets {
        users: vec![vec!["a b".into(), "c".into()]],
        items: vec![vec![]],
    };
    let head = ProjectionHead::zeros(2, 2);
    let kp = PreferenceKnowledge::new(profiles, keywords, Array2::zeros((1, 2)), Array2::ones((1, 2)), &head).unwrap();
    let mut buf = Vec::new();
    write_preference_knowledge(&mut buf, &kp).unwrap();
    assert_eq!(read_preference_knowledge(&mut buf.as_slice()).unwrap(), kp);
}
