//! Preference knowledge: per-subject configuration texts, LLM profiles,
//! condensed keywords, and projected semantic embeddings.

mod artifact;
pub mod head;

use std::collections::HashSet;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::llm::{LlmGateway, PromptRequest};
use crate::prompts::{one_line, PromptSet};

pub use artifact::{read_preference_knowledge, write_preference_knowledge};
pub use head::{HeadGrad, HiddenLayer, ProjectionHead};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subject {
    User(usize),
    Item(usize),
}

impl Subject {
    pub fn kind(&self) -> &'static str {
        match self {
            Subject::User(_) => "user",
            Subject::Item(_) => "item",
        }
    }

    pub fn external_id<'a>(&self, dataset: &'a Dataset) -> &'a str {
        match *self {
            Subject::User(u) => dataset.user_id(u),
            Subject::Item(i) => dataset.item_id(i),
        }
    }

    pub fn label(&self, dataset: &Dataset) -> String {
        format!("{} {}", self.kind(), self.external_id(dataset))
    }
}

/// All users then all items, in index order.
pub fn all_subjects(dataset: &Dataset) -> Vec<Subject> {
    (0..dataset.num_users())
        .map(Subject::User)
        .chain((0..dataset.num_items()).map(Subject::Item))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigText {
    pub subject: Subject,
    pub body: String,
}

pub const DEFAULT_TEXT_BUDGET: usize = 6000;
pub const DEFAULT_MAX_KEYWORDS: usize = 10;

/// Item body: title, category, description. User body: for each training
/// interaction, oldest first, the item's title and description and the
/// user's comment on it. Fields are newline-joined; an over-budget body
/// keeps its last `budget` characters.
pub fn build_config_text(dataset: &Dataset, subject: Subject, budget: usize) -> Result<ConfigText> {
    let catalog = dataset.catalog();
    let body = match subject {
        Subject::Item(i) => {
            let id = dataset.item_id(i);
            let text = catalog.item(id);
            let has_interactions = !dataset.item_train_users(i).is_empty();
            match text {
                Some(t) => format!("{}\n{}\n{}", t.title, t.category, t.description),
                None if has_interactions => "\n\n".to_string(),
                None => return Err(Error::EmptyText(subject.label(dataset))),
            }
        }
        Subject::User(u) => {
            let user_id = dataset.user_id(u);
            let history = dataset.train_history(u);
            let has_text = catalog.comments.contains_key(user_id)
                || history.iter().any(|x| catalog.item(dataset.item_id(x.item)).is_some());
            if history.is_empty() && !has_text {
                return Err(Error::EmptyText(subject.label(dataset)));
            }
            let segments: Vec<String> = history
                .iter()
                .map(|x| {
                    let item_id = dataset.item_id(x.item);
                    let (title, description) = catalog
                        .item(item_id)
                        .map(|t| (t.title.as_str(), t.description.as_str()))
                        .unwrap_or(("", ""));
                    let comment = catalog.comment_on(user_id, item_id).unwrap_or("");
                    format!("{title}\n{description}\n{comment}")
                })
                .collect();
            segments.join("\n")
        }
    };
    let chars = body.chars().count();
    let body = if chars > budget {
        body.chars().skip(chars - budget).collect()
    } else {
        body
    };
    Ok(ConfigText { subject, body })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Profiles {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl Profiles {
    pub fn get(&self, subject: Subject) -> &str {
        match subject {
            Subject::User(u) => &self.users[u],
            Subject::Item(i) => &self.items[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeywordSet {
    pub subject: Subject,
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeywordSets {
    pub users: Vec<Vec<String>>,
    pub items: Vec<Vec<String>>,
}

impl KeywordSets {
    pub fn get(&self, subject: Subject) -> &[String] {
        match subject {
            Subject::User(u) => &self.users[u],
            Subject::Item(i) => &self.items[i],
        }
    }
}

fn collect_failures<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(e),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(Error::Failures(failures))
    }
}

fn split_by_subject<T>(subjects: &[Subject], values: Vec<T>, nu: usize, ni: usize) -> (Vec<T>, Vec<T>) {
    let mut users: Vec<Option<T>> = (0..nu).map(|_| None).collect();
    let mut items: Vec<Option<T>> = (0..ni).map(|_| None).collect();
    for (s, v) in subjects.iter().zip(values) {
        match *s {
            Subject::User(u) => users[u] = Some(v),
            Subject::Item(i) => items[i] = Some(v),
        }
    }
    (
        users.into_iter().map(|v| v.expect("user covered")).collect(),
        items.into_iter().map(|v| v.expect("item covered")).collect(),
    )
}

/// One profile request per user and item; requests are independent so the
/// subject order has no effect on any profile.
pub fn generate_profiles(
    gateway: &LlmGateway,
    dataset: &Dataset,
    prompts: &PromptSet,
    budget: usize,
) -> Result<Profiles> {
    let subjects = all_subjects(dataset);
    let results = gateway.map_parallel(&subjects, |&subject| {
        let config =
            build_config_text(dataset, subject, budget).map_err(|e| e.with_subject(subject.label(dataset)))?;
        let template = match subject {
            Subject::User(_) => &prompts.profile_user,
            Subject::Item(_) => &prompts.profile_item,
        };
        let (system, user) = template.render(&[
            ("subject_id", subject.external_id(dataset)),
            ("config_text", &config.body),
        ]);
        gateway
            .complete(&PromptRequest::new(system, user, "profile"))
            .map_err(|e| e.with_subject(subject.label(dataset)))
    });
    let texts = collect_failures(results)?;
    let (users, items) = split_by_subject(&subjects, texts, dataset.num_users(), dataset.num_items());
    Ok(Profiles { users, items })
}

/// Lowercases, collapses internal whitespace and strips surrounding
/// punctuation.
pub fn normalize_keyword(raw: &str) -> String {
    let cleaned = raw.trim().trim_matches(|c: char| c.is_ascii_punctuation() && c != '+' && c != '#');
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Keywords from the `Keywords:` line (or the first non-empty line):
/// normalized, entries over five words dropped, deduplicated in order,
/// capped at `max`. `None` when nothing usable remains.
pub fn parse_keywords(response: &str, max: usize) -> Option<Vec<String>> {
    let line = response
        .lines()
        .find_map(|l| {
            let t = l.trim();
            t.get(..9)
                .filter(|p| p.eq_ignore_ascii_case("keywords:"))
                .map(|_| &t[9..])
        })
        .or_else(|| response.lines().find(|l| !l.trim().is_empty()))?;
    let mut seen = HashSet::new();
    let out: Vec<String> = line
        .split(',')
        .map(normalize_keyword)
        .filter(|k| !k.is_empty() && k.split(' ').count() <= 5)
        .filter(|k| seen.insert(k.clone()))
        .take(max)
        .collect();
    (!out.is_empty()).then_some(out)
}

const REPROMPT: &str = "\n\nYour previous answer could not be parsed. Reply with exactly one line of the form `Keywords: <keyword>, <keyword>, ...`.";

fn keywords_for(
    gateway: &LlmGateway,
    prompts: &PromptSet,
    dataset: &Dataset,
    subject: Subject,
    profile: &str,
    max: usize,
) -> Result<Vec<String>> {
    let max_s = max.to_string();
    let (system, user) = prompts.keywords.render(&[
        ("subject_kind", subject.kind()),
        ("subject_id", subject.external_id(dataset)),
        ("profile", profile),
        ("max_keywords", &max_s),
    ]);
    let mut request = PromptRequest::new(system, user, "keywords");
    let first = gateway.complete(&request)?;
    if let Some(k) = parse_keywords(&first, max) {
        return Ok(k);
    }
    request.user_text.push_str(REPROMPT);
    let second = gateway.complete(&request)?;
    parse_keywords(&second, max).ok_or(Error::ResponseParse {
        what: "keyword line",
        raw: second,
    })
}

pub fn condense_keywords(
    gateway: &LlmGateway,
    dataset: &Dataset,
    prompts: &PromptSet,
    profiles: &Profiles,
    max_keywords: usize,
) -> Result<KeywordSets> {
    let subjects = all_subjects(dataset);
    let results = gateway.map_parallel(&subjects, |&subject| {
        keywords_for(gateway, prompts, dataset, subject, profiles.get(subject), max_keywords)
            .map_err(|e| e.with_subject(subject.label(dataset)))
    });
    let sets = collect_failures(results)?;
    let (users, items) = split_by_subject(&subjects, sets, dataset.num_users(), dataset.num_items());
    Ok(KeywordSets { users, items })
}

/// `profile | kw, kw, ...`
pub fn combined_text(profile: &str, keywords: &[String]) -> String {
    format!("{} | {}", one_line(profile), keywords.join(", "))
}

/// K_p: texts, pooled text vectors, and their projections.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceKnowledge {
    pub profiles: Profiles,
    pub keywords: KeywordSets,
    /// Pooled text vectors, rounded to f32 precision (|U| × d_t, |I| × d_t).
    pub user_text: Array2<f64>,
    pub item_text: Array2<f64>,
    /// Projected embeddings under the head used at build time, also rounded
    /// to f32 so the artifact round-trips exactly.
    pub user_embeddings: Array2<f64>,
    pub item_embeddings: Array2<f64>,
}

impl PreferenceKnowledge {
    pub fn new(
        profiles: Profiles,
        keywords: KeywordSets,
        user_text: Array2<f64>,
        item_text: Array2<f64>,
        head: &ProjectionHead,
    ) -> Result<Self> {
        if user_text.ncols() != head.input_dim() || item_text.ncols() != head.input_dim() {
            return Err(Error::Config(format!(
                "text vectors have {} dims but the projection head expects {}",
                user_text.ncols(),
                head.input_dim()
            )));
        }
        let round = |m: Array2<f64>| m.mapv(|v| v as f32 as f64);
        let user_text = round(user_text);
        let item_text = round(item_text);
        let user_embeddings = round(head.forward(user_text.view()));
        let item_embeddings = round(head.forward(item_text.view()));
        let kp = Self {
            profiles,
            keywords,
            user_text,
            item_text,
            user_embeddings,
            item_embeddings,
        };
        if !kp.user_embeddings.iter().chain(kp.item_embeddings.iter()).all(|v| v.is_finite()) {
            return Err(Error::Validation("non-finite preference embedding".into()));
        }
        Ok(kp)
    }

    pub fn num_users(&self) -> usize {
        self.user_text.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.item_text.nrows()
    }

    pub fn text_dim(&self) -> usize {
        self.user_text.ncols()
    }

    pub fn dim(&self) -> usize {
        self.user_embeddings.ncols()
    }

    pub fn combined_text(&self, subject: Subject) -> String {
        combined_text(self.profiles.get(subject), self.keywords.get(subject))
    }
}

/// Embeds `profile | keywords` per subject and projects it with `head`.
pub fn embed_preferences(
    gateway: &LlmGateway,
    dataset: &Dataset,
    profiles: &Profiles,
    keywords: &KeywordSets,
    head: &ProjectionHead,
) -> Result<PreferenceKnowledge> {
    let d_t = gateway.embedding_dim();
    if d_t != head.input_dim() {
        return Err(Error::Config(format!(
            "provider embeds into {d_t} dims but the projection head expects {}",
            head.input_dim()
        )));
    }
    let subjects = all_subjects(dataset);
    let results = gateway.map_parallel(&subjects, |&subject| {
        let text = combined_text(profiles.get(subject), keywords.get(subject));
        gateway
            .embed_text(&text)
            .map_err(|e| e.with_subject(subject.label(dataset)))
    });
    let vectors = collect_failures(results)?;
    let (users, items) = split_by_subject(&subjects, vectors, dataset.num_users(), dataset.num_items());
    let stack = |rows: Vec<Vec<f64>>| {
        let n = rows.len();
        Array2::from_shape_vec((n, d_t), rows.into_iter().flatten().collect()).expect("uniform dims")
    };
    PreferenceKnowledge::new(profiles.clone(), keywords.clone(), stack(users), stack(items), head)
}

/// Profiles, keywords and embeddings in one pass.
pub fn build_preference_knowledge(
    gateway: &LlmGateway,
    dataset: &Dataset,
    prompts: &PromptSet,
    head: &ProjectionHead,
    budget: usize,
    max_keywords: usize,
) -> Result<PreferenceKnowledge> {
    let profiles = generate_profiles(gateway, dataset, prompts, budget)?;
    let keywords = condense_keywords(gateway, dataset, prompts, &profiles, max_keywords)?;
    embed_preferences(gateway, dataset, &profiles, &keywords, head)
}

#[cfg(test)]
mod tests;
