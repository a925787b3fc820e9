//! Relation knowledge: a per-user four-step LLM pipeline over the
//! interaction neighborhood (rate, prune noise, link similar users, explore
//! third-hop interests) and the enriched graph it induces.

mod artifact;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::data::{Dataset, GraphEdge, InteractionGraph};
use crate::error::{Error, Result};
use crate::llm::{LlmGateway, PromptRequest};
use crate::preference::PreferenceKnowledge;
use crate::prompts::{candidate_line, one_line, parse_id_list, PromptSet, PromptTemplate};

pub use artifact::{read_relation_knowledge, write_relation_knowledge};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PreferenceRating {
    High,
    Medium,
    Low,
}

impl PreferenceRating {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().trim_matches(|c: char| c == '*' || c == '.').to_ascii_lowercase().as_str() {
            "high" => Some(Self::High),
            "medium" => Some(Self::Medium),
            "low" => Some(Self::Low),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::High => "High",
            Self::Medium => "Medium",
            Self::Low => "Low",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatedNeighborhood {
    pub user: usize,
    /// First-hop items, most recent first.
    pub entries: Vec<(usize, PreferenceRating)>,
    /// Rating lines naming items outside the neighborhood.
    pub unknown_ids: usize,
}

impl RatedNeighborhood {
    pub fn with(&self, rating: PreferenceRating) -> Vec<usize> {
        self.entries.iter().filter(|(_, r)| *r == rating).map(|(i, _)| *i).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelationConfig {
    pub max_first_hop: usize,
    pub max_second_hop: usize,
    pub max_third_hop: usize,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            max_first_hop: 50,
            max_second_hop: 20,
            max_third_hop: 30,
        }
    }
}

/// Shared inputs of every pipeline step.
pub struct RelationContext<'a> {
    pub gateway: &'a LlmGateway,
    pub prompts: &'a PromptSet,
    pub dataset: &'a Dataset,
    pub knowledge: &'a PreferenceKnowledge,
    pub config: RelationConfig,
}

/// Step output plus the raw responses behind it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step<T> {
    pub value: T,
    pub transcript: String,
}

impl RelationContext<'_> {
    fn user_vars(&self, user: usize) -> (String, String, String) {
        (
            self.dataset.user_id(user).to_string(),
            one_line(&self.knowledge.profiles.users[user]),
            self.knowledge.keywords.users[user].join(", "),
        )
    }

    fn item_line(&self, item: usize) -> String {
        candidate_line("ITEM", self.dataset.item_id(item), &self.knowledge.keywords.items[item])
    }

    fn user_line(&self, user: usize) -> String {
        candidate_line("USER", self.dataset.user_id(user), &self.knowledge.keywords.users[user])
    }

    /// Sends the prompt, reprompting once when `parse` rejects the answer.
    fn ask<T>(
        &self,
        template: &PromptTemplate,
        vars: &[(&str, &str)],
        tag: &str,
        parse: impl Fn(&str) -> Option<T>,
        what: &'static str,
    ) -> Result<Step<T>> {
        let (system, user) = template.render(vars);
        let mut request = PromptRequest::new(system, user, tag);
        let first = self.gateway.complete(&request)?;
        if let Some(v) = parse(&first) {
            return Ok(Step {
                value: v,
                transcript: first,
            });
        }
        request
            .user_text
            .push_str("\n\nYour previous answer could not be parsed. Follow the required output format exactly.");
        let second = self.gateway.complete(&request)?;
        match parse(&second) {
            Some(v) => Ok(Step {
                value: v,
                transcript: format!("{first}\n[reprompt]\n{second}"),
            }),
            None => Err(Error::ResponseParse { what, raw: second }),
        }
    }

    /// First-hop train items, most recent first, capped.
    pub fn first_hop(&self, user: usize) -> Vec<usize> {
        let mut history = self.dataset.train_history(user);
        history.reverse();
        history.into_iter().take(self.config.max_first_hop).map(|x| x.item).collect()
    }
}

/// `item_id: High|Medium|Low` lines. `None` when no line rates a known item.
pub fn parse_ratings(
    response: &str,
    neighborhood: &[usize],
    dataset: &Dataset,
) -> Option<(Vec<(usize, PreferenceRating)>, usize)> {
    let known: HashSet<usize> = neighborhood.iter().copied().collect();
    let mut given: HashMap<usize, PreferenceRating> = HashMap::new();
    let mut unknown = 0;
    for line in response.lines() {
        let Some((id, label)) = line.rsplit_once(':') else {
            continue;
        };
        let Some(rating) = PreferenceRating::parse(label) else {
            continue;
        };
        let id = id.trim().trim_start_matches(['-', '*', ' ']).trim();
        let id = id.strip_prefix("ITEM ").unwrap_or(id).trim();
        match dataset.item_index(id).filter(|i| known.contains(i)) {
            Some(i) => {
                given.entry(i).or_insert(rating);
            }
            None => unknown += 1,
        }
    }
    if given.is_empty() {
        return None;
    }
    let entries = neighborhood
        .iter()
        .map(|&i| (i, given.get(&i).copied().unwrap_or(PreferenceRating::Medium)))
        .collect();
    Some((entries, unknown))
}

/// Ids from the `KEY:` line mapped through `lookup`, restricted to
/// `candidates` (in candidate order).
fn select_ids(
    response: &str,
    key: &str,
    candidates: &[usize],
    lookup: impl Fn(&str) -> Option<usize>,
) -> Option<Vec<usize>> {
    let ids = parse_id_list(response, key)?;
    let named: HashSet<usize> = ids.iter().filter_map(|s| lookup(s)).collect();
    Some(candidates.iter().copied().filter(|c| named.contains(c)).collect())
}

pub fn rate_neighborhood(ctx: &RelationContext, user: usize) -> Result<Step<RatedNeighborhood>> {
    let hop = ctx.first_hop(user);
    if hop.is_empty() {
        return Err(Error::Validation(format!(
            "user {} has no training interactions",
            ctx.dataset.user_id(user)
        )));
    }
    let (uid, profile, keywords) = ctx.user_vars(user);
    let item_lines: Vec<String> = hop.iter().map(|&i| ctx.item_line(i)).collect();
    let step = ctx.ask(
        &ctx.prompts.rate,
        &[
            ("user_id", &uid),
            ("profile", &profile),
            ("keywords", &keywords),
            ("item_lines", &item_lines.join("\n")),
        ],
        "rate",
        |r| parse_ratings(r, &hop, ctx.dataset),
        "item rating lines",
    )?;
    let (entries, unknown_ids) = step.value;
    if unknown_ids > 0 {
        log::warn!("user {uid}: ignored {unknown_ids} rating line(s) naming items outside the neighborhood");
    }
    Ok(Step {
        value: RatedNeighborhood {
            user,
            entries,
            unknown_ids,
        },
        transcript: step.transcript,
    })
}

/// Low-rated items the LLM judges to be noise. No call when nothing is Low.
pub fn identify_noise(ctx: &RelationContext, rated: &RatedNeighborhood) -> Result<Step<Vec<usize>>> {
    let candidates = rated.with(PreferenceRating::Low);
    if candidates.is_empty() {
        return Ok(Step {
            value: Vec::new(),
            transcript: String::new(),
        });
    }
    let (uid, profile, keywords) = ctx.user_vars(rated.user);
    let rating_lines: Vec<String> = rated
        .entries
        .iter()
        .map(|&(i, r)| format!("{}: {}", ctx.dataset.item_id(i), r.as_str()))
        .collect();
    let candidate_lines: Vec<String> = candidates.iter().map(|&i| ctx.item_line(i)).collect();
    ctx.ask(
        &ctx.prompts.noise,
        &[
            ("user_id", &uid),
            ("profile", &profile),
            ("keywords", &keywords),
            ("rating_lines", &rating_lines.join("\n")),
            ("candidate_lines", &candidate_lines.join("\n")),
        ],
        "noise",
        |r| select_ids(r, "NOISE", &candidates, |s| ctx.dataset.item_index(s)),
        "NOISE line",
    )
}

/// Users sharing a High-rated item with `user`, most shared items first
/// (ties by index), capped.
pub fn second_hop(ctx: &RelationContext, rated: &RatedNeighborhood) -> Vec<usize> {
    let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
    for i in rated.with(PreferenceRating::High) {
        for &v in ctx.dataset.item_train_users(i) {
            if v != rated.user {
                *shared.entry(v).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(usize, usize)> = shared.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(ctx.config.max_second_hop).map(|(v, _)| v).collect()
}

pub fn collaborative_enhancement(ctx: &RelationContext, rated: &RatedNeighborhood) -> Result<Step<Vec<usize>>> {
    let candidates = second_hop(ctx, rated);
    if candidates.is_empty() {
        return Ok(Step {
            value: Vec::new(),
            transcript: String::new(),
        });
    }
    let (uid, profile, keywords) = ctx.user_vars(rated.user);
    let high_lines: Vec<String> = rated.with(PreferenceRating::High).iter().map(|&i| ctx.item_line(i)).collect();
    let candidate_lines: Vec<String> = candidates.iter().map(|&v| ctx.user_line(v)).collect();
    ctx.ask(
        &ctx.prompts.collab,
        &[
            ("user_id", &uid),
            ("profile", &profile),
            ("keywords", &keywords),
            ("high_lines", &high_lines.join("\n")),
            ("candidate_lines", &candidate_lines.join("\n")),
        ],
        "collab",
        |r| select_ids(r, "ENHANCE", &candidates, |s| ctx.dataset.user_index(s)),
        "ENHANCE line",
    )
}

/// Train items of the linked users that `user` has not interacted with,
/// most widely shared first (ties by index), capped.
pub fn third_hop(ctx: &RelationContext, user: usize, collab: &[usize]) -> Vec<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in collab {
        for &i in ctx.dataset.positives(crate::data::Split::Train, v) {
            if !ctx.dataset.is_train_positive(user, i) {
                *counts.entry(i).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(ctx.config.max_third_hop).map(|(i, _)| i).collect()
}

pub fn explore_interests(ctx: &RelationContext, user: usize, collab: &[usize]) -> Result<Step<Vec<usize>>> {
    let candidates = third_hop(ctx, user, collab);
    if candidates.is_empty() {
        return Ok(Step {
            value: Vec::new(),
            transcript: String::new(),
        });
    }
    let (uid, profile, keywords) = ctx.user_vars(user);
    let collab_lines: Vec<String> = collab.iter().map(|&v| ctx.user_line(v)).collect();
    let candidate_lines: Vec<String> = candidates.iter().map(|&i| ctx.item_line(i)).collect();
    ctx.ask(
        &ctx.prompts.interests,
        &[
            ("user_id", &uid),
            ("profile", &profile),
            ("keywords", &keywords),
            ("collab_lines", &collab_lines.join("\n")),
            ("candidate_lines", &candidate_lines.join("\n")),
        ],
        "interests",
        |r| select_ids(r, "INTERESTS", &candidates, |s| ctx.dataset.item_index(s)),
        "INTERESTS line",
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserRelations {
    pub user: usize,
    pub rated: RatedNeighborhood,
    pub noise: Vec<usize>,
    pub collab: Vec<usize>,
    pub interests: Vec<usize>,
    pub transcript: String,
}

/// All four steps for one user.
pub fn run_user_pipeline(ctx: &RelationContext, user: usize) -> Result<UserRelations> {
    let rated = rate_neighborhood(ctx, user)?;
    let noise = identify_noise(ctx, &rated.value)?;
    let collab = collaborative_enhancement(ctx, &rated.value)?;
    let interests = explore_interests(ctx, user, &collab.value)?;
    let mut transcript = String::new();
    for (name, text) in [
        ("rate", &rated.transcript),
        ("noise", &noise.transcript),
        ("collab", &collab.transcript),
        ("interests", &interests.transcript),
    ] {
        if !text.is_empty() {
            transcript.push_str(&format!("## {name}\n{}\n", text.trim_end()));
        }
    }
    Ok(UserRelations {
        user,
        rated: rated.value,
        noise: noise.value,
        collab: collab.value,
        interests: interests.value,
        transcript,
    })
}

/// K_r: three edge sets plus per-user transcripts. User-user pairs are
/// stored as `(min, max)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelationKnowledge {
    pub num_users: usize,
    pub num_items: usize,
    pub noise_edges: BTreeSet<(usize, usize)>,
    pub collab_edges: BTreeSet<(usize, usize)>,
    pub interest_edges: BTreeSet<(usize, usize)>,
    pub transcripts: BTreeMap<usize, String>,
}

impl RelationKnowledge {
    pub fn empty(dataset: &Dataset) -> Self {
        Self {
            num_users: dataset.num_users(),
            num_items: dataset.num_items(),
            ..Self::default()
        }
    }

    /// Range checks, noise ⊆ train, interests disjoint from train, and
    /// ordered distinct user pairs.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.num_users != dataset.num_users() || self.num_items != dataset.num_items() {
            return Err(Error::Validation(format!(
                "relation knowledge covers {}×{} but the dataset is {}×{}",
                self.num_users,
                self.num_items,
                dataset.num_users(),
                dataset.num_items()
            )));
        }
        let (nu, ni) = (self.num_users, self.num_items);
        let bounds = |what, index, limit| {
            if index < limit {
                Ok(())
            } else {
                Err(Error::IndexBounds { what, index, limit })
            }
        };
        for &(u, i) in self.noise_edges.iter().chain(&self.interest_edges) {
            bounds("user", u, nu)?;
            bounds("item", i, ni)?;
        }
        for &(a, b) in &self.collab_edges {
            bounds("user", a, nu)?;
            bounds("user", b, nu)?;
            if a >= b {
                return Err(Error::Validation(format!("user pair ({a}, {b}) is not ordered and distinct")));
            }
        }
        if let Some(&(u, i)) = self.noise_edges.iter().find(|&&(u, i)| !dataset.is_train_positive(u, i)) {
            return Err(Error::Validation(format!("noise edge ({u}, {i}) is not a training edge")));
        }
        if let Some(&(u, i)) = self.interest_edges.iter().find(|&&(u, i)| dataset.is_train_positive(u, i)) {
            return Err(Error::Validation(format!("interest edge ({u}, {i}) is already a training edge")));
        }
        Ok(())
    }

    pub fn total_edges(&self) -> usize {
        self.noise_edges.len() + self.collab_edges.len() + self.interest_edges.len()
    }
}

/// Union of per-user outputs.
pub fn assemble_relation_knowledge(dataset: &Dataset, outputs: &[UserRelations]) -> RelationKnowledge {
    let mut kr = RelationKnowledge::empty(dataset);
    for out in outputs {
        let u = out.user;
        kr.noise_edges.extend(out.noise.iter().map(|&i| (u, i)));
        kr.collab_edges.extend(out.collab.iter().map(|&v| (u.min(v), u.max(v))));
        kr.interest_edges.extend(out.interests.iter().map(|&i| (u, i)));
        if !out.transcript.is_empty() {
            kr.transcripts.insert(u, out.transcript.clone());
        }
    }
    kr
}

/// Runs the pipeline for `users` (default: every user with training data)
/// through the gateway's worker pool.
pub fn build_relation_knowledge(ctx: &RelationContext, users: Option<&[usize]>) -> Result<RelationKnowledge> {
    let selected: Vec<usize> = match users {
        Some(list) => list.to_vec(),
        None => (0..ctx.dataset.num_users())
            .filter(|&u| !ctx.dataset.positives(crate::data::Split::Train, u).is_empty())
            .collect(),
    };
    let results = ctx.gateway.map_parallel(&selected, |&u| {
        run_user_pipeline(ctx, u).map_err(|e| e.with_subject(format!("user {}", ctx.dataset.user_id(u))))
    });
    let mut outputs = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Failures(failures));
    }
    Ok(assemble_relation_knowledge(ctx.dataset, &outputs))
}

/// G_rel: training edges minus noise, plus collaborative and interest
/// edges, all with unit weight.
pub fn build_enriched_graph(dataset: &Dataset, kr: &RelationKnowledge) -> Result<InteractionGraph> {
    kr.validate(dataset)?;
    let kept = dataset
        .train()
        .iter()
        .filter(|x| !kr.noise_edges.contains(&x.pair()))
        .map(|x| GraphEdge::UserItem {
            user: x.user,
            item: x.item,
        });
    let collab = kr.collab_edges.iter().map(|&(a, b)| GraphEdge::UserUser { a, b });
    let interests = kr
        .interest_edges
        .iter()
        .map(|&(user, item)| GraphEdge::UserItem { user, item });
    InteractionGraph::new(
        dataset.num_users(),
        dataset.num_items(),
        kept.chain(collab).chain(interests).map(|e| (e, 1.0)),
    )
}
