//! Turning raw completion text into catalog-matched recommendation lists.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{split_year, Catalog};
use crate::ids::{ItemId, UserId};
use crate::prompts::GridCell;

pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Normalized,
    Fuzzy,
    Unmatched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecEntry {
    pub raw_title: String,
    pub item_id: Option<ItemId>,
    pub match_kind: MatchKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user_id: UserId,
    pub cell: GridCell,
    pub entries: Vec<RecEntry>,
    pub k: usize,
    /// Fewer than `k` entries survived parsing and deduplication.
    pub shortfall: bool,
}

impl RecommendationList {
    /// Matched item per rank position; unmatched entries yield `None`.
    pub fn slots(&self) -> impl Iterator<Item = Option<&ItemId>> {
        self.entries.iter().map(|e| e.item_id.as_ref())
    }

    pub fn unmatched(&self) -> usize {
        self.entries.iter().filter(|e| e.item_id.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractionError {
    #[error("completion contains no numbered or bulleted lines")]
    NoListLines,
}

/// Strips a list marker (`1.`, `2)`, `-`, `*`, `•`, `+`) and returns
/// the rest, or `None` if the line is not a list item.
fn strip_marker(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        let mut chars = rest.chars();
        return match chars.next() {
            Some('.' | ')') => {
                let after = chars.as_str();
                (after.is_empty() || after.starts_with(char::is_whitespace)).then_some(after)
            }
            _ => None,
        };
    }
    for bullet in ["- ", "* ", "• ", "+ ", "· "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    None
}

/// Byte offset just past the first `(dddd)` group, if any.
fn year_end(s: &str) -> Option<usize> {
    let b = s.as_bytes();
    (0..b.len().saturating_sub(5)).find_map(|i| {
        (b[i] == b'(' && b[i + 5] == b')' && b[i + 1..i + 5].iter().all(u8::is_ascii_digit))
            .then_some(i + 6)
    })
}

const QUOTES: &[char] = &['"', '\'', '“', '”', '‘', '’', '«', '»'];

fn clean_title(body: &str) -> String {
    let mut s: String = body.replace("**", "").replace("__", "").replace('`', "");
    if let Some(end) = year_end(&s) {
        s.truncate(end);
    } else {
        for sep in [" — ", " – ", " -- ", "—", "–"] {
            if let Some(pos) = s.find(sep) {
                s.truncate(pos);
            }
        }
    }
    let mut t = s.trim();
    // surrounding quotes, possibly around only the title part: "Heat" (1995)
    loop {
        let before = t;
        if let (Some(first), Some(last)) = (t.chars().next(), t.chars().last()) {
            if t.chars().count() >= 2 && QUOTES.contains(&first) && QUOTES.contains(&last) {
                t = t[first.len_utf8()..t.len() - last.len_utf8()].trim();
            }
        }
        t = t.trim_end_matches([',', ';', '.']).trim();
        if t == before {
            break;
        }
    }
    let (head, year) = split_year(t);
    let head = head.trim().trim_matches(QUOTES).trim();
    match year {
        Some(y) => format!("{head} ({y:04})"),
        None => head.to_string(),
    }
}

/// Extracts list items from a completion, in order, truncated to `k`.
pub fn parse_list(raw: &str, k: usize) -> Result<Vec<String>, ExtractionError> {
    let titles: Vec<String> = raw
        .lines()
        .filter_map(strip_marker)
        .map(clean_title)
        .filter(|t| !t.is_empty())
        .take(k)
        .collect();
    if titles.is_empty() && k > 0 {
        return Err(ExtractionError::NoListLines);
    }
    Ok(titles)
}

/// Canonical comparison key: casefolded, year removed, whitespace
/// collapsed, trailing-article form (`Matrix, The`) turned around.
pub fn normalize_title(title: &str) -> String {
    let (head, _) = split_year(title);
    let folded = head.to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    // keep an alternate-title suffix such as "(Cité des enfants perdus, La)" aside
    let (main, alt) = match collapsed.rfind(" (") {
        Some(pos) if collapsed.ends_with(')') && pos > 0 => collapsed.split_at(pos),
        _ => (collapsed.as_str(), ""),
    };
    for article in [
        "the", "a", "an", "l'", "le", "la", "les", "il", "el", "der", "die", "das",
    ] {
        let suffix = format!(", {article}");
        if let Some(stem) = main.strip_suffix(&suffix) {
            let sep = if article.ends_with('\'') { "" } else { " " };
            return format!("{article}{sep}{stem}{alt}");
        }
    }
    format!("{main}{alt}")
}

/// Normalized key with any alternate-title parenthetical removed.
fn primary_key(key: &str) -> Option<&str> {
    let pos = key.rfind(" (")?;
    (key.ends_with(')') && pos > 0).then(|| &key[..pos])
}

/// Catalog index for repeated title matching.
pub struct TitleMatcher {
    exact: BTreeMap<String, Vec<ItemId>>,
    normalized: BTreeMap<String, Vec<(ItemId, Option<i32>)>>,
    keys: Vec<(String, ItemId)>,
    threshold: f64,
}

impl TitleMatcher {
    pub fn new(catalog: &Catalog, threshold: f64) -> Self {
        let mut exact: BTreeMap<String, Vec<ItemId>> = BTreeMap::new();
        let mut normalized: BTreeMap<String, Vec<(ItemId, Option<i32>)>> = BTreeMap::new();
        let mut keys = Vec::new();
        for (id, meta) in catalog.iter() {
            exact
                .entry(meta.title.clone())
                .or_default()
                .push(id.clone());
            let key = normalize_title(&meta.title);
            if let Some(p) = primary_key(&key) {
                normalized
                    .entry(p.to_string())
                    .or_default()
                    .push((id.clone(), meta.year));
                keys.push((p.to_string(), id.clone()));
            }
            normalized
                .entry(key.clone())
                .or_default()
                .push((id.clone(), meta.year));
            keys.push((key, id.clone()));
        }
        for ids in exact.values_mut() {
            ids.sort();
        }
        for ids in normalized.values_mut() {
            ids.sort();
            ids.dedup();
        }
        Self {
            exact,
            normalized,
            keys,
            threshold,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn match_title(&self, raw: &str) -> (Option<ItemId>, MatchKind) {
        let raw = raw.trim();
        if let Some(ids) = self.exact.get(raw) {
            return (Some(ids[0].clone()), MatchKind::Exact);
        }
        let year = split_year(raw).1;
        let key = normalize_title(raw);
        if key.is_empty() {
            return (None, MatchKind::Unmatched);
        }
        if let Some(cands) = self.normalized.get(&key) {
            let pick = year
                .and_then(|y| cands.iter().find(|(_, cy)| *cy == Some(y)))
                .unwrap_or(&cands[0]);
            return (Some(pick.0.clone()), MatchKind::Normalized);
        }
        let key_len = key.chars().count();
        let mut best: Option<(f64, &ItemId)> = None;
        for (cand, id) in &self.keys {
            let cand_len = cand.chars().count();
            let longest = key_len.max(cand_len) as f64;
            // similarity can be at most 1 - |Δlen| / longest
            if 1.0 - (key_len.abs_diff(cand_len) as f64) / longest < self.threshold {
                continue;
            }
            let sim = strsim::normalized_levenshtein(&key, cand);
            if sim < self.threshold {
                continue;
            }
            best = match best {
                Some((s, b)) if s > sim || (s == sim && b <= id) => Some((s, b)),
                _ => Some((sim, id)),
            };
        }
        match best {
            Some((_, id)) => (Some(id.clone()), MatchKind::Fuzzy),
            None => (None, MatchKind::Unmatched),
        }
    }

    pub fn to_recommendation_list(
        &self,
        titles: &[String],
        user_id: &UserId,
        cell: &GridCell,
        k: usize,
    ) -> RecommendationList {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for raw in titles {
            if entries.len() == k {
                break;
            }
            let (item_id, match_kind) = self.match_title(raw);
            if let Some(id) = &item_id {
                if !seen.insert(id.clone()) {
                    continue;
                }
            }
            entries.push(RecEntry {
                raw_title: raw.clone(),
                item_id,
                match_kind,
            });
        }
        RecommendationList {
            user_id: user_id.clone(),
            cell: cell.clone(),
            shortfall: entries.len() < k,
            entries,
            k,
        }
    }
}

/// One-off match; build a [`TitleMatcher`] when matching many titles.
pub fn match_title(raw: &str, catalog: &Catalog, threshold: f64) -> (Option<ItemId>, MatchKind) {
    TitleMatcher::new(catalog, threshold).match_title(raw)
}

pub fn to_recommendation_list(
    titles: &[String],
    catalog: &Catalog,
    user_id: &UserId,
    cell: &GridCell,
    k: usize,
) -> RecommendationList {
    TitleMatcher::new(catalog, DEFAULT_FUZZY_THRESHOLD)
        .to_recommendation_list(titles, user_id, cell, k)
}

/// Per-cell extraction diagnostics kept in the run manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub exact: usize,
    pub normalized: usize,
    pub fuzzy: usize,
    pub unmatched: usize,
    pub shortfall_lists: usize,
    pub failed: usize,
}

impl ExtractionStats {
    pub fn record(&mut self, list: &RecommendationList) {
        for e in &list.entries {
            match e.match_kind {
                MatchKind::Exact => self.exact += 1,
                MatchKind::Normalized => self.normalized += 1,
                MatchKind::Fuzzy => self.fuzzy += 1,
                MatchKind::Unmatched => self.unmatched += 1,
            }
        }
        if list.shortfall {
            self.shortfall_lists += 1;
        }
    }

    pub fn merge(&mut self, other: &ExtractionStats) {
        self.exact += other.exact;
        self.normalized += other.normalized;
        self.fuzzy += other.fuzzy;
        self.unmatched += other.unmatched;
        self.shortfall_lists += other.shortfall_lists;
        self.failed += other.failed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ItemMeta;
    use crate::profiles::Strategy;
    use crate::prompts::{IclCondition, RankerSpec};

    fn catalog(titles: &[(&str, &str)]) -> Catalog {
        Catalog::from_items(
            titles
                .iter()
                .map(|(id, t)| {
                    (
                        ItemId::from(*id),
                        ItemMeta {
                            title: t.to_string(),
                            year: split_year(t).1,
                            genres: vec![],
                        },
                    )
                })
                .collect(),
        )
    }

    fn cell() -> GridCell {
        GridCell {
            condition: IclCondition::ZeroShot,
            strategy: Strategy::Rand,
            spec: RankerSpec::Neutral,
        }
    }

    #[test]
    fn numbered_lines() {
        let out = parse_list("1. Toy Story (1995)\n2. Heat (1995)", 10).unwrap();
        assert_eq!(out, ["Toy Story (1995)", "Heat (1995)"]);
    }

    #[test]
    fn bulleted_lines_after_preamble() {
        let out = parse_list("Here are picks:\n- Alien\n- Aliens", 10).unwrap();
        assert_eq!(out, ["Alien", "Aliens"]);
    }

    #[test]
    fn refusal_is_an_error() {
        assert_eq!(
            parse_list("I cannot recommend.", 10),
            Err(ExtractionError::NoListLines)
        );
    }

    #[test]
    fn decorations_and_commentary_are_stripped() {
        let raw = "Sure!\n1) **\"Heat\" (1995)** - a tense crime saga\n2. \"Alien\" — sci-fi horror\n3. Fargo (1996).\n10. Se7en";
        assert_eq!(
            parse_list(raw, 10).unwrap(),
            ["Heat (1995)", "Alien", "Fargo (1996)", "Se7en"]
        );
        assert_eq!(parse_list(raw, 2).unwrap().len(), 2);
    }

    #[test]
    fn years_in_titles_are_not_list_markers() {
        assert!(parse_list("1995 was a good year", 5).is_err());
        assert!(parse_list("2001: A Space Odyssey is great", 5).is_err());
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_title("Matrix, The (1999)"), "the matrix");
        assert_eq!(normalize_title("  The   Matrix "), "the matrix");
        assert_eq!(
            normalize_title("City of Lost Children, The (Cité des enfants perdus, La) (1995)"),
            "the city of lost children (cité des enfants perdus, la)"
        );
    }

    #[test]
    fn match_pipeline() {
        let cat = catalog(&[
            ("1", "Toy Story (1995)"),
            ("2", "Matrix, The (1999)"),
            ("3", "Star Wars: Episode IV - A New Hope (1977)"),
            (
                "4",
                "City of Lost Children, The (Cité des enfants perdus, La) (1995)",
            ),
        ]);
        let m = TitleMatcher::new(&cat, 0.9);
        assert_eq!(
            m.match_title("Toy Story (1995)"),
            (Some(ItemId::from("1")), MatchKind::Exact)
        );
        assert_eq!(
            m.match_title("Toy Story"),
            (Some(ItemId::from("1")), MatchKind::Normalized)
        );
        assert_eq!(
            m.match_title("The Matrix (1999)"),
            (Some(ItemId::from("2")), MatchKind::Normalized)
        );
        assert_eq!(
            m.match_title("Matrix, The (1999)"),
            (Some(ItemId::from("2")), MatchKind::Exact)
        );
        assert_eq!(
            m.match_title("Star Wars: Episode IV – A New Hope"),
            (Some(ItemId::from("3")), MatchKind::Fuzzy)
        );
        assert_eq!(
            m.match_title("The City of Lost Children"),
            (Some(ItemId::from("4")), MatchKind::Normalized)
        );
        assert_eq!(
            m.match_title("Totally Invented Movie XIII"),
            (None, MatchKind::Unmatched)
        );
    }

    #[test]
    fn spec_level_match_function() {
        let cat = catalog(&[("1", "Toy Story (1995)")]);
        assert_eq!(match_title("toy story", &cat, 0.9).1, MatchKind::Normalized);
    }

    #[test]
    fn year_disambiguates_remakes_and_ties_go_to_smaller_id() {
        let cat = catalog(&[
            ("7", "Hamlet (1996)"),
            ("3", "Hamlet (1948)"),
            ("5", "Hamlet (1990)"),
        ]);
        let m = TitleMatcher::new(&cat, 0.9);
        assert_eq!(m.match_title("hamlet (1990)").0, Some(ItemId::from("5")));
        assert_eq!(m.match_title("Hamlet").0, Some(ItemId::from("3")));
        let cat = catalog(&[("9", "Abcdefghij"), ("4", "Abcdefghik")]);
        let m = TitleMatcher::new(&cat, 0.85);
        assert_eq!(m.match_title("Abcdefghiz").0, Some(ItemId::from("4")));
    }

    #[test]
    fn list_dedup_retention_truncation() {
        let cat = catalog(&[("1", "Alpha (1990)"), ("2", "Bravo (1991)")]);
        let m = TitleMatcher::new(&cat, 0.9);
        let u = UserId::from("u");
        let t = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();

        let l = m.to_recommendation_list(&t(&["Alpha", "Alpha (1990)", "Bravo"]), &u, &cell(), 10);
        assert_eq!(l.entries.len(), 2);
        assert!(l.shortfall);

        let l =
            m.to_recommendation_list(&t(&["Alpha", "Zzz Hallucinated", "Bravo"]), &u, &cell(), 3);
        assert_eq!(l.entries.len(), 3);
        assert_eq!(l.entries[1].match_kind, MatchKind::Unmatched);
        assert!(!l.shortfall);
        assert_eq!(l.unmatched(), 1);

        let many: Vec<String> = (0..15).map(|i| format!("Unknown {i}")).collect();
        let l = m.to_recommendation_list(&many, &u, &cell(), 10);
        assert_eq!(l.entries.len(), 10);
        assert_eq!(l.entries[9].raw_title, "Unknown 9");
    }
}
