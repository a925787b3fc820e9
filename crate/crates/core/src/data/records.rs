//! Raw interaction records and the line-oriented input formats.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: Option<u8>,
    pub timestamp: Option<i64>,
}

impl InteractionRecord {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating: None,
            timestamp: None,
        }
    }

    pub fn with_rating(mut self, rating: u8) -> Self {
        self.rating = Some(rating);
        self
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = Some(timestamp);
        self
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.user_id.is_empty() {
            return Err("empty user id".into());
        }
        if self.item_id.is_empty() {
            return Err("empty item id".into());
        }
        if let Some(r) = self.rating {
            if !(1..=5).contains(&r) {
                return Err(format!("rating {r} outside [1,5]"));
            }
        }
        Ok(())
    }
}

/// Parses `user \t item \t rating \t timestamp`; the last two fields may be
/// empty or absent. Blank lines are skipped. Line numbers in errors are 1-based.
pub fn read_interactions<R: BufRead>(reader: R) -> Result<Vec<InteractionRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(Error::Malformed {
                line: line_no,
                message: format!("expected 2 to 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let malformed = |message: String| Error::Malformed {
            line: line_no,
            message,
        };
        let rating = match fields.get(2).map(|s| s.trim()) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<u8>()
                    .map_err(|_| malformed(format!("bad rating {s:?}")))?,
            ),
        };
        let timestamp = match fields.get(3).map(|s| s.trim()) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<i64>()
                    .map_err(|_| malformed(format!("bad timestamp {s:?}")))?,
            ),
        };
        let record = InteractionRecord {
            user_id: fields[0].trim().to_string(),
            item_id: fields[1].trim().to_string(),
            rating,
            timestamp,
        };
        record.validate().map_err(malformed)?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_interactions(records: &[InteractionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let rating = r.rating.map(|v| v.to_string()).unwrap_or_default();
        let ts = r.timestamp.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.user_id, r.item_id, rating, ts));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemText {
    pub title: String,
    pub category: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserComment {
    /// Item the comment refers to; `None` for free comments.
    pub item_id: Option<String>,
    pub text: String,
}

/// Side text keyed by external ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextCatalog {
    pub items: BTreeMap<String, ItemText>,
    pub comments: BTreeMap<String, Vec<UserComment>>,
}

impl TextCatalog {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty() && self.comments.is_empty()
    }

    pub fn item(&self, item_id: &str) -> Option<&ItemText> {
        self.items.get(item_id)
    }

    pub fn comment_on(&self, user_id: &str, item_id: &str) -> Option<&str> {
        self.comments.get(user_id).and_then(|list| {
            list.iter()
                .find(|c| c.item_id.as_deref() == Some(item_id))
                .map(|c| c.text.as_str())
        })
    }

    pub fn set_item_field(&mut self, item_id: &str, field: &str, text: &str) -> std::result::Result<(), String> {
        let entry = self.items.entry(item_id.to_string()).or_default();
        let slot = match field {
            "title" => &mut entry.title,
            "category" => &mut entry.category,
            "description" => &mut entry.description,
            other => return Err(format!("unknown item field {other:?}")),
        };
        if !slot.is_empty() {
            slot.push(' ');
        }
        slot.push_str(text);
        Ok(())
    }
}

/// Parses `kind \t id \t field \t text` lines. Item fields are `title`,
/// `category`, `description`; user comments use `comment:<item_id>` to bind
/// the comment to an item, or bare `comment`.
pub fn read_catalog<R: BufRead>(reader: R) -> Result<TextCatalog> {
    let mut catalog = TextCatalog::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, '\t');
        let (Some(kind), Some(id), Some(field), Some(text)) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Malformed {
                line: line_no,
                message: "expected 4 tab-separated fields".into(),
            });
        };
        let malformed = |message: String| Error::Malformed {
            line: line_no,
            message,
        };
        if id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        match kind {
            "i" => catalog
                .set_item_field(id, field, text)
                .map_err(malformed)?,
            "u" => {
                let item_id = if field == "comment" {
                    None
                } else if let Some(item) = field.strip_prefix("comment:") {
                    Some(item.to_string())
                } else {
                    return Err(malformed(format!("unknown user field {field:?}")));
                };
                catalog
                    .comments
                    .entry(id.to_string())
                    .or_default()
                    .push(UserComment {
                        item_id,
                        text: text.to_string(),
                    });
            }
            other => return Err(malformed(format!("unknown kind {other:?}"))),
        }
    }
    Ok(catalog)
}

pub fn write_catalog(catalog: &TextCatalog) -> String {
    let mut out = String::new();
    for (id, text) in &catalog.items {
        for (field, value) in [
            ("title", &text.title),
            ("category", &text.category),
            ("description", &text.description),
        ] {
            if !value.is_empty() {
                out.push_str(&format!("i\t{id}\t{field}\t{value}\n"));
            }
        }
    }
    for (user, comments) in &catalog.comments {
        for c in comments {
            match &c.item_id {
                Some(item) => out.push_str(&format!("u\t{user}\tcomment:{item}\t{}\n", c.text)),
                None => out.push_str(&format!("u\t{user}\tcomment\t{}\n", c.text)),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_optional_trailing_fields() {
        let input = "u1\ti1\t5\t100\nu2\ti2\t\t\nu3\ti3\n";
        let recs = read_interactions(input.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].rating, Some(5));
        assert_eq!(recs[0].timestamp, Some(100));
        assert_eq!(recs[1].rating, None);
        assert_eq!(recs[2].timestamp, None);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = "u1\ti1\t5\t1\nu2\ti2\t4\t2\nbroken-line\n";
        match read_interactions(input.as_bytes()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed error, got {other:?}"),
        }
        let bad_rating = "u1\ti1\t9\t1\n";
        assert!(matches!(
            read_interactions(bad_rating.as_bytes()),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn catalog_round_trip() {
        let input = "i\tb1\ttitle\tDune\ni\tb1\tcategory\tScience Fiction\n\
                     i\tb1\tdescription\tDesert planet.\nu\tu1\tcomment:b1\tloved it\n";
        let cat = read_catalog(input.as_bytes()).unwrap();
        assert_eq!(cat.item("b1").unwrap().title, "Dune");
        assert_eq!(cat.comment_on("u1", "b1"), Some("loved it"));
        let again = read_catalog(write_catalog(&cat).as_bytes()).unwrap();
        assert_eq!(cat, again);
    }
}
