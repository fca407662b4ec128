//! Delimiter-separated dataset readers (MovieLens-1M `::` files and a generic
//! tab-separated variant for LastFM-shaped dumps).

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::ids::{ItemId, UserId};

use super::demographics::Gender;
use super::{Catalog, Interaction, ItemMeta};

/// Known dataset layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatTag {
    /// `user::item::rating::timestamp`, ratings on a 1–5 scale.
    Movielens,
    /// `user<TAB>item<TAB>weight<TAB>timestamp`, nonnegative weights.
    Tsv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFormat {
    pub delimiter: String,
    pub rating_min: f64,
    /// `None` means unbounded above (play counts).
    pub rating_max: Option<f64>,
}

impl DatasetFormat {
    pub fn movielens() -> Self {
        Self {
            delimiter: "::".into(),
            rating_min: 1.0,
            rating_max: Some(5.0),
        }
    }

    pub fn tsv() -> Self {
        Self {
            delimiter: "\t".into(),
            rating_min: 0.0,
            rating_max: None,
        }
    }

    pub fn from_tag(tag: FormatTag) -> Self {
        match tag {
            FormatTag::Movielens => Self::movielens(),
            FormatTag::Tsv => Self::tsv(),
        }
    }

    pub fn with_delimiter(mut self, delimiter: impl Into<String>) -> Self {
        self.delimiter = delimiter.into();
        self
    }

    fn in_scale(&self, rating: f64) -> bool {
        rating >= self.rating_min && self.rating_max.is_none_or(|max| rating <= max)
    }
}

/// What to do with a malformed line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedPolicy {
    #[default]
    Abort,
    Skip,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LineErrorKind {
    #[error("expected at least {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("empty {0} field")]
    EmptyField(&'static str),
    #[error("non-numeric rating `{0}`")]
    NonNumericRating(String),
    #[error("rating {0} outside the declared scale")]
    RatingOutOfScale(f64),
    #[error("invalid timestamp `{0}`")]
    BadTimestamp(String),
    #[error("timestamp must be positive")]
    NonPositiveTimestamp,
    #[error("unknown gender `{0}`")]
    BadGender(String),
    #[error("invalid age `{0}`")]
    BadAge(String),
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {kind}")]
    Line { line: usize, kind: LineErrorKind },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

/// Records parsed from a file plus the lines dropped under [`MalformedPolicy::Skip`].
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub skipped: Vec<(usize, LineErrorKind)>,
}

/// MovieLens ships latin-1 encoded files; fall back to a byte-to-char mapping
/// when a line is not valid UTF-8.
fn decode_line(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_owned(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

fn parse_lines<R, T, F>(
    mut reader: R,
    policy: MalformedPolicy,
    mut parse: F,
) -> Result<Parsed<T>, ParseError>
where
    R: BufRead,
    F: FnMut(&str) -> Result<Option<T>, LineErrorKind>,
{
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = decode_line(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse(line) {
            Ok(Some(rec)) => records.push(rec),
            Ok(None) => {}
            Err(kind) => match policy {
                MalformedPolicy::Abort => {
                    return Err(ParseError::Line {
                        line: line_no,
                        kind,
                    })
                }
                MalformedPolicy::Skip => {
                    log::warn!("skipping malformed line {line_no}: {kind}");
                    skipped.push((line_no, kind));
                }
            },
        }
    }
    Ok(Parsed { records, skipped })
}

fn fields<'a>(
    line: &'a str,
    delimiter: &str,
    expected: usize,
) -> Result<Vec<&'a str>, LineErrorKind> {
    let parts: Vec<&str> = line.split(delimiter).collect();
    if parts.len() < expected {
        return Err(LineErrorKind::FieldCount {
            expected,
            found: parts.len(),
        });
    }
    Ok(parts)
}

fn nonempty<'a>(s: &'a str, what: &'static str) -> Result<&'a str, LineErrorKind> {
    let s = s.trim();
    if s.is_empty() {
        Err(LineErrorKind::EmptyField(what))
    } else {
        Ok(s)
    }
}

/// Parses a ratings stream, one [`Interaction`] per well-formed line, preserving input order.
pub fn parse_interactions<R: BufRead>(
    reader: R,
    format: &DatasetFormat,
    policy: MalformedPolicy,
) -> Result<Parsed<Interaction>, ParseError> {
    parse_lines(reader, policy, |line| {
        let f = fields(line, &format.delimiter, 4)?;
        let user_id = UserId::new(nonempty(f[0], "user")?);
        let item_id = ItemId::new(nonempty(f[1], "item")?);
        let raw_rating = f[2].trim();
        let rating: f64 = raw_rating
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| LineErrorKind::NonNumericRating(raw_rating.to_owned()))?;
        if !format.in_scale(rating) {
            return Err(LineErrorKind::RatingOutOfScale(rating));
        }
        let raw_ts = f[3].trim();
        let ts: i64 = raw_ts
            .parse()
            .map_err(|_| LineErrorKind::BadTimestamp(raw_ts.to_owned()))?;
        if ts <= 0 {
            return Err(LineErrorKind::NonPositiveTimestamp);
        }
        Ok(Some(Interaction {
            user_id,
            item_id,
            rating,
            timestamp: ts as u64,
        }))
    })
}

/// Writes interactions back in the given format. `parse_interactions` of the
/// output yields the input again.
pub fn serialize_interactions(interactions: &[Interaction], format: &DatasetFormat) -> String {
    let d = &format.delimiter;
    let mut out = String::new();
    for i in interactions {
        out.push_str(&format!(
            "{}{d}{}{d}{}{d}{}\n",
            i.user_id, i.item_id, i.rating, i.timestamp
        ));
    }
    out
}

/// One row of a users file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDemographics {
    pub user_id: UserId,
    pub gender: Gender,
    pub age_years: i64,
}

fn parse_gender(raw: &str) -> Result<Gender, LineErrorKind> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "m" | "male" => Ok(Gender::Male),
        "f" | "female" => Ok(Gender::Female),
        other => Err(LineErrorKind::BadGender(other.to_owned())),
    }
}

/// Parses `user<d>gender<d>age[<d>...]`. Trailing fields (occupation, zip,
/// country) are ignored.
pub fn parse_users<R: BufRead>(
    reader: R,
    delimiter: &str,
    policy: MalformedPolicy,
) -> Result<Parsed<UserDemographics>, ParseError> {
    parse_lines(reader, policy, |line| {
        let f = fields(line, delimiter, 3)?;
        let user_id = UserId::new(nonempty(f[0], "user")?);
        let gender = parse_gender(f[1])?;
        let raw_age = f[2].trim();
        let age_years: i64 = raw_age
            .parse()
            .map_err(|_| LineErrorKind::BadAge(raw_age.to_owned()))?;
        if age_years <= 0 {
            return Err(LineErrorKind::BadAge(raw_age.to_owned()));
        }
        Ok(Some(UserDemographics {
            user_id,
            gender,
            age_years,
        }))
    })
}

/// Splits a trailing `(dddd)` year off a title.
pub fn split_year(title: &str) -> (&str, Option<i32>) {
    let t = title.trim_end();
    let bytes = t.as_bytes();
    if bytes.len() >= 6 && bytes[bytes.len() - 1] == b')' && bytes[bytes.len() - 6] == b'(' {
        let digits = &t[t.len() - 5..t.len() - 1];
        if digits.bytes().all(|b| b.is_ascii_digit()) {
            return (t[..t.len() - 6].trim_end(), digits.parse().ok());
        }
    }
    (t, None)
}

/// Parses `item<d>title[<d>genre|genre...]` into a catalog. A repeated item
/// id is a malformed line.
pub fn parse_catalog<R: BufRead>(
    reader: R,
    delimiter: &str,
    policy: MalformedPolicy,
) -> Result<(Catalog, Vec<(usize, LineErrorKind)>), ParseError> {
    let mut items = BTreeMap::new();
    let parsed = parse_lines(reader, policy, |line| {
        let f = fields(line, delimiter, 2)?;
        let item_id = ItemId::new(nonempty(f[0], "item")?);
        if items.contains_key(&item_id) {
            return Err(LineErrorKind::DuplicateItem(item_id.to_string()));
        }
        let title = nonempty(f[1], "title")?.to_owned();
        let genres = f
            .get(2)
            .map(|g| {
                g.split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            })
            .unwrap_or_default();
        let year = split_year(&title).1;
        items.insert(
            item_id,
            ItemMeta {
                title,
                year,
                genres,
            },
        );
        Ok(Some(()))
    })?;
    Ok((Catalog::from_items(items), parsed.skipped))
}
