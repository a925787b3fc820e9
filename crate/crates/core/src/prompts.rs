//! Versioned prompt templates and the structured line formats that the
//! knowledge pipelines write into prompts and read back from responses.
//!
//! Template files carry a `# version: N` header followed by `## system` and
//! `## user` sections. Placeholders are written `{name}`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub version: u32,
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("prompt template {name}: {msg}"));
        let mut lines = text.lines();
        let version = lines
            .next()
            .and_then(|l| l.strip_prefix("# version:"))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("missing `# version: N` header"))?;
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut target: Option<&mut Vec<&str>> = None;
        for line in lines {
            match line.trim() {
                "## system" => target = Some(&mut system),
                "## user" => target = Some(&mut user),
                _ => match target.as_mut() {
                    Some(t) => t.push(line),
                    None if line.trim().is_empty() => {}
                    None => return Err(bad("text before the first section")),
                },
            }
        }
        if system.is_empty() || user.is_empty() {
            return Err(bad("both `## system` and `## user` sections are required"));
        }
        Ok(Self {
            name: name.to_string(),
            version,
            system: system.join("\n").trim().to_string(),
            user: user.join("\n").trim().to_string(),
        })
    }

    /// Substitutes `{key}` placeholders in both sections.
    pub fn render(&self, vars: &[(&str, &str)]) -> (String, String) {
        let fill = |s: &str| {
            let mut out = s.to_string();
            for (k, v) in vars {
                out = out.replace(&format!("{{{k}}}"), v);
            }
            out
        };
        (fill(&self.system), fill(&self.user))
    }
}

#[derive(Clone, Debug)]
pub struct PromptSet {
    pub profile_user: PromptTemplate,
    pub profile_item: PromptTemplate,
    pub keywords: PromptTemplate,
    pub rate: PromptTemplate,
    pub noise: PromptTemplate,
    pub collab: PromptTemplate,
    pub interests: PromptTemplate,
}

const BUILTIN: [(&str, &str); 7] = [
    ("profile_user", include_str!("../assets/prompts/profile_user.txt")),
    ("profile_item", include_str!("../assets/prompts/profile_item.txt")),
    ("keywords", include_str!("../assets/prompts/keywords.txt")),
    ("rate", include_str!("../assets/prompts/rate.txt")),
    ("noise", include_str!("../assets/prompts/noise.txt")),
    ("collab", include_str!("../assets/prompts/collab.txt")),
    ("interests", include_str!("../assets/prompts/interests.txt")),
];

impl Default for PromptSet {
    fn default() -> Self {
        Self::from_sources(|name| Ok(BUILTIN.iter().find(|(n, _)| *n == name).unwrap().1.to_string()))
            .expect("built-in prompt templates parse")
    }
}

impl PromptSet {
    /// Reads `<name>.txt` for each template from `dir`, falling back to the
    /// built-in template when a file is absent.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::from_sources(|name| {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                Ok(std::fs::read_to_string(path)?)
            } else {
                Ok(BUILTIN.iter().find(|(n, _)| *n == name).unwrap().1.to_string())
            }
        })
    }

    fn from_sources(mut source: impl FnMut(&str) -> Result<String>) -> Result<Self> {
        let mut get = |name: &str| -> Result<PromptTemplate> { PromptTemplate::parse(name, &source(name)?) };
        Ok(Self {
            profile_user: get("profile_user")?,
            profile_item: get("profile_item")?,
            keywords: get("keywords")?,
            rate: get("rate")?,
            noise: get("noise")?,
            collab: get("collab")?,
            interests: get("interests")?,
        })
    }

    /// `name:version` pairs, folded into artifact headers.
    pub fn versions(&self) -> String {
        [
            &self.profile_user,
            &self.profile_item,
            &self.keywords,
            &self.rate,
            &self.noise,
            &self.collab,
            &self.interests,
        ]
        .iter()
        .map(|t| format!("{}:{}", t.name, t.version))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// Collapses whitespace runs (including newlines) to single spaces.
pub fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `ITEM <id> | kw, kw` or `USER <id> | kw, kw`.
pub fn candidate_line(kind: &str, id: &str, keywords: &[String]) -> String {
    format!("{kind} {id} | {}", keywords.join(", "))
}

/// Parses lines written by [`candidate_line`].
pub fn parse_candidate_line(line: &str) -> Option<(String, String, Vec<String>)> {
    let (head, kws) = line.split_once('|')?;
    let mut head = head.split_whitespace();
    let kind = head.next()?.to_string();
    let id = head.next()?.to_string();
    let kws = split_list(kws);
    Some((kind, id, kws))
}

/// Value of the first `KEY: value` line.
pub fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(key).and_then(|r| r.strip_prefix(':')))
        .map(str::trim)
}

/// Lines following a `KEY:` header line, up to the next header (a line of
/// uppercase letters and underscores ending in a colon) or end of text.
pub fn section<'a>(text: &'a str, key: &str) -> Vec<&'a str> {
    let header = format!("{key}:");
    let mut lines = text.lines().skip_while(|l| l.trim() != header);
    if lines.next().is_none() {
        return Vec::new();
    }
    lines
        .take_while(|l| !is_header(l))
        .filter(|l| !l.trim().is_empty())
        .collect()
}

fn is_header(line: &str) -> bool {
    let t = line.trim();
    t.len() > 1
        && t.ends_with(':')
        && t[..t.len() - 1].chars().all(|c| c.is_ascii_uppercase() || c == '_')
}

/// Comma-separated values, trimmed, empties dropped.
pub fn split_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Ids from the last `KEY: a, b` line in a response; `none` yields an empty
/// list. `None` when no such line exists.
pub fn parse_id_list(response: &str, key: &str) -> Option<Vec<String>> {
    let value = response
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix(key).and_then(|r| r.strip_prefix(':')))?;
    let value = value.trim();
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        return Some(Vec::new());
    }
    Some(
        split_list(value)
            .into_iter()
            .map(|s| s.trim_matches(|c: char| c == '`' || c == '"' || c == '\'').to_string())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_render() {
        let set = PromptSet::default();
        assert!(set.versions().contains("rate:1"));
        let (sys, user) = set.profile_item.render(&[("subject_id", "b7"), ("config_text", "T\nC\nD")]);
        assert!(sys.contains("Interests:"));
        assert!(user.contains("SUBJECT: item b7"));
        assert_eq!(section(&user, "DETAILS"), vec!["T", "C", "D"]);
    }

    #[test]
    fn sections_and_fields() {
        let text = "TASK: rate\nUSER: u1\nUSER_KEYWORDS: art, painting\nITEMS:\nITEM i1 | art\nITEM i2 | gardening\n";
        assert_eq!(field(text, "USER"), Some("u1"));
        assert_eq!(field(text, "USER_KEYWORDS"), Some("art, painting"));
        let items = section(text, "ITEMS");
        assert_eq!(items.len(), 2);
        assert_eq!(
            parse_candidate_line(items[1]),
            Some(("ITEM".into(), "i2".into(), vec!["gardening".into()]))
        );
        assert!(section(text, "MISSING").is_empty());
    }

    #[test]
    fn id_lists() {
        assert_eq!(parse_id_list("why\nNOISE: i2, i5", "NOISE"), Some(vec!["i2".into(), "i5".into()]));
        assert_eq!(parse_id_list("NOISE: none", "NOISE"), Some(vec![]));
        assert_eq!(parse_id_list("nothing here", "NOISE"), None);
    }

    #[test]
    fn rejects_bad_template() {
        assert!(PromptTemplate::parse("x", "## system\nhi\n## user\nthere").is_err());
        assert!(PromptTemplate::parse("x", "# version: 2\n## system\nhi").is_err());
    }
}
