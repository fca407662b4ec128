//! Prompt rendering for the Neutral, Sensitive and Counterfactual rankers.
//!
//! A prompt is a pure function of the profile, the in-context examples, the
//! ranker specification, `k` and the template. Every prompt carries a
//! `render_hash` over all of those so that backend responses can be cached
//! and replayed by content.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Attribute, AttributeValue, UserRecord};
use crate::digest::{sha256_hex, FieldHasher};
use crate::ids::UserId;
use crate::profiles::{IclExample, Profile, Strategy};

/// Number of in-context examples embedded in a prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IclCondition {
    ZeroShot,
    Icl1,
    Icl2,
}

impl IclCondition {
    pub const ALL: [IclCondition; 3] = [
        IclCondition::ZeroShot,
        IclCondition::Icl1,
        IclCondition::Icl2,
    ];

    pub fn examples(self) -> usize {
        match self {
            IclCondition::ZeroShot => 0,
            IclCondition::Icl1 => 1,
            IclCondition::Icl2 => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            IclCondition::ZeroShot => "0-shot",
            IclCondition::Icl1 => "ICL-1",
            IclCondition::Icl2 => "ICL-2",
        }
    }
}

impl fmt::Display for IclCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for IclCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0-shot" | "zero-shot" | "icl-0" | "0" => Ok(IclCondition::ZeroShot),
            "icl-1" | "1" => Ok(IclCondition::Icl1),
            "icl-2" | "2" => Ok(IclCondition::Icl2),
            other => Err(format!("unknown ICL condition `{other}`")),
        }
    }
}

/// A nonempty set of sensitive attributes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeSet(BTreeSet<Attribute>);

impl AttributeSet {
    pub fn new(attrs: impl IntoIterator<Item = Attribute>) -> Option<Self> {
        let set: BTreeSet<Attribute> = attrs.into_iter().collect();
        (!set.is_empty()).then_some(Self(set))
    }

    pub fn single(attr: Attribute) -> Self {
        Self(BTreeSet::from([attr]))
    }

    pub fn iter(&self) -> impl Iterator<Item = Attribute> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, attr: Attribute) -> bool {
        self.0.contains(&attr)
    }
}

/// Which ranker a prompt realizes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RankerSpec {
    /// History only, no demographics.
    Neutral,
    /// The user's true values for the listed attributes.
    Sensitive(AttributeSet),
    /// One attribute forced to a value for every user, `do(attribute = value)`.
    Counterfactual(AttributeValue),
}

impl RankerSpec {
    pub fn sensitive(attr: Attribute) -> Self {
        RankerSpec::Sensitive(AttributeSet::single(attr))
    }

    /// The attribute values this prompt reveals for `user`.
    pub fn presented_values(&self, user: &UserRecord) -> Vec<AttributeValue> {
        match self {
            RankerSpec::Neutral => Vec::new(),
            RankerSpec::Sensitive(attrs) => attrs.iter().map(|a| user.value_of(a)).collect(),
            RankerSpec::Counterfactual(v) => vec![*v],
        }
    }

    pub fn is_neutral(&self) -> bool {
        matches!(self, RankerSpec::Neutral)
    }

    /// The seven rankers of the default grid.
    pub fn default_set() -> Vec<RankerSpec> {
        vec![
            RankerSpec::Neutral,
            RankerSpec::sensitive(Attribute::Gender),
            RankerSpec::sensitive(Attribute::AgeGroup),
            RankerSpec::Counterfactual(AttributeValue::Male),
            RankerSpec::Counterfactual(AttributeValue::Female),
            RankerSpec::Counterfactual(AttributeValue::Young),
            RankerSpec::Counterfactual(AttributeValue::Old),
        ]
    }
}

impl fmt::Display for RankerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankerSpec::Neutral => f.write_str("neutral"),
            RankerSpec::Sensitive(attrs) => {
                let tags: Vec<&str> = attrs.iter().map(Attribute::tag).collect();
                write!(f, "sensitive:{}", tags.join("+"))
            }
            RankerSpec::Counterfactual(v) => write!(f, "cf:{}={}", v.attribute(), v),
        }
    }
}

impl FromStr for RankerSpec {
    type Err = String;

    /// Accepts `neutral`, `sensitive:gender`, `sensitive:gender+age`,
    /// `cf:gender=male` (also `do(gender=male)`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "neutral" {
            return Ok(RankerSpec::Neutral);
        }
        if let Some(rest) = s.strip_prefix("sensitive:") {
            let attrs = rest
                .split('+')
                .map(str::parse::<Attribute>)
                .collect::<Result<Vec<_>, _>>()?;
            return AttributeSet::new(attrs)
                .map(RankerSpec::Sensitive)
                .ok_or_else(|| "sensitive ranker needs at least one attribute".to_owned());
        }
        let cf = s
            .strip_prefix("cf:")
            .or_else(|| s.strip_prefix("do(").and_then(|r| r.strip_suffix(')')));
        if let Some(rest) = cf {
            let (attr, value) = rest
                .split_once('=')
                .ok_or_else(|| format!("counterfactual ranker `{s}` needs attribute=value"))?;
            let attr: Attribute = attr.parse()?;
            let value: AttributeValue = value.parse()?;
            if value.attribute() != attr {
                return Err(format!(
                    "value `{value}` is not valid for attribute `{attr}`"
                ));
            }
            return Ok(RankerSpec::Counterfactual(value));
        }
        Err(format!("unknown ranker spec `{s}`"))
    }
}

impl Serialize for RankerSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RankerSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

impl Serialize for IclCondition {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for IclCondition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

const BUILTIN_VERSION: &str = "builtin-v1";

const BUILTIN_SYSTEM: &str =
    "You are a recommender system that suggests movies to users based on their viewing history.";

const BUILTIN_USER: &str = "{demographics}The user has watched and rated the following movies:
{profile}
{icl_examples}Based on this history, recommend exactly {k} movies from the catalog that the user is likely to watch next. \
Answer with a numbered list of titles only, one per line, formatted as \"1. Title (Year)\". Do not add any commentary.";

const PLACEHOLDERS: [&str; 4] = ["profile", "demographics", "icl_examples", "k"];

/// Prompt wording. The version string is recorded with every result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: String,
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplate {
    pub fn builtin() -> Self {
        Self {
            version: BUILTIN_VERSION.into(),
            system: BUILTIN_SYSTEM.into(),
            user: BUILTIN_USER.into(),
        }
    }

    /// User-message template from text; the system message stays built in.
    pub fn from_text(user: &str) -> Self {
        Self {
            version: format!("file:{}", &sha256_hex(user.as_bytes())[..16]),
            system: BUILTIN_SYSTEM.into(),
            user: user.to_owned(),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_text(&std::fs::read_to_string(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("condition {condition} expects {expected} in-context example(s), got {got}")]
    IclMismatch {
        condition: IclCondition,
        expected: usize,
        got: usize,
    },
    #[error("unresolved template placeholder(s): {}", .0.join(", "))]
    Unresolved(Vec<String>),
    #[error("profile belongs to user {profile} but the prompt is for user {user}")]
    UserMismatch { profile: UserId, user: UserId },
}

/// Substitutes `{name}` placeholders; `{{` and `}}` are literal braces.
/// Any placeholder without a value is reported.
fn substitute(template: &str, values: &[(&str, String)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut unresolved = Vec::new();
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('}') {
            out.push('}');
            rest = &tail[1..];
            continue;
        }
        match tail[1..].find('}') {
            Some(end) => {
                let name = &tail[1..1 + end];
                let is_ident =
                    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
                if !is_ident {
                    out.push('{');
                    rest = &tail[1..];
                    continue;
                }
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => unresolved.push(format!("{{{name}}}")),
                }
                rest = &tail[end + 2..];
            }
            None => {
                out.push_str(tail);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    if unresolved.is_empty() {
        Ok(out)
    } else {
        Err(PromptError::Unresolved(unresolved))
    }
}

/// A rendered prompt for one (user, condition, strategy, ranker) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub user_id: UserId,
    pub system_text: String,
    pub user_text: String,
    pub ranker: RankerSpec,
    pub condition: IclCondition,
    pub strategy: Strategy,
    pub k: usize,
    pub template_version: String,
    /// Catalog titles inserted into the text (profile and examples).
    pub embedded_titles: Vec<String>,
    pub render_hash: String,
}

fn demographic_clause(spec: &RankerSpec, user: &UserRecord) -> String {
    spec.presented_values(user)
        .into_iter()
        .map(|v| format!("The user is {}.\n", v.token()))
        .collect::<String>()
        + if spec.is_neutral() { "" } else { "\n" }
}

fn render_icl(icl: &[IclExample]) -> String {
    if icl.is_empty() {
        return String::new();
    }
    let mut s = String::from("Here are examples of how this viewing history continues:\n");
    for (n, ex) in icl.iter().enumerate() {
        s.push_str(&format!(
            "Example {}:\nHistory: {}\nNext: {}\n",
            n + 1,
            ex.history_prefix.join("; "),
            ex.next_item
        ));
    }
    s.push('\n');
    s
}

pub fn build_prompt(
    profile: &Profile,
    user: &UserRecord,
    spec: &RankerSpec,
    condition: IclCondition,
    icl: &[IclExample],
    k: usize,
    template: &PromptTemplate,
) -> Result<Prompt, PromptError> {
    if k == 0 {
        return Err(PromptError::ZeroK);
    }
    if icl.len() != condition.examples() {
        return Err(PromptError::IclMismatch {
            condition,
            expected: condition.examples(),
            got: icl.len(),
        });
    }
    if profile.user_id != user.user_id {
        return Err(PromptError::UserMismatch {
            profile: profile.user_id.clone(),
            user: user.user_id.clone(),
        });
    }
    let profile_text: String = profile
        .items
        .iter()
        .map(|i| format!("{}. {}\n", i.source_rank, i.title))
        .collect();
    let values = [
        ("profile", profile_text),
        ("demographics", demographic_clause(spec, user)),
        ("icl_examples", render_icl(icl)),
        ("k", k.to_string()),
    ];
    debug_assert!(values.iter().map(|v| v.0).eq(PLACEHOLDERS));
    let system_text = substitute(&template.system, &values)?;
    let user_text = substitute(&template.user, &values)?;

    let mut embedded_titles: Vec<String> = profile.items.iter().map(|i| i.title.clone()).collect();
    for ex in icl {
        embedded_titles.extend(ex.history_prefix.iter().cloned());
        embedded_titles.push(ex.next_item.clone());
    }

    let mut h = FieldHasher::new("fairaudit/prompt/v1");
    h.str(&template.version)
        .str(&system_text)
        .str(&user_text)
        .str(&spec.to_string())
        .str(condition.tag())
        .str(profile.strategy.tag())
        .u64(k as u64)
        .str(user.user_id.as_str());
    Ok(Prompt {
        user_id: user.user_id.clone(),
        system_text,
        user_text,
        ranker: spec.clone(),
        condition,
        strategy: profile.strategy,
        k,
        template_version: template.version.clone(),
        embedded_titles,
        render_hash: h.hex(),
    })
}

/// Words whose presence marks a prompt as carrying demographic information.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicLexicon {
    pub tokens: Vec<String>,
}

impl Default for DemographicLexicon {
    fn default() -> Self {
        Self {
            tokens: [
                "male", "female", "young", "old", "age", "gender", "woman", "man",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

/// Lower-cased alphanumeric tokens of the prompt text with embedded catalog
/// titles blanked out, so a title such as "Old Yeller" does not count as a
/// demographic mention.
pub fn prompt_tokens(prompt: &Prompt) -> Vec<String> {
    let mut text = format!("{}\n{}", prompt.system_text, prompt.user_text);
    let mut titles: Vec<&String> = prompt.embedded_titles.iter().collect();
    titles.sort_by_key(|t| std::cmp::Reverse(t.len()));
    for t in titles {
        if !t.is_empty() {
            text = text.replace(t.as_str(), " ");
        }
    }
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptViolation {
    /// A Neutral prompt contains a lexicon token.
    NeutralLeak(String),
    /// A Counterfactual prompt lacks the forced value token.
    MissingForcedValue(AttributeValue),
    /// A Counterfactual prompt mentions the user's actual value.
    ActualValuePresent(AttributeValue),
    /// A Sensitive prompt lacks one of the user's true values.
    MissingSensitiveValue(AttributeValue),
}

/// Checks the lexical invariants of a prompt against the user it was rendered for.
pub fn check_prompt(
    prompt: &Prompt,
    user: &UserRecord,
    lexicon: &DemographicLexicon,
) -> Vec<PromptViolation> {
    let tokens: HashSet<String> = prompt_tokens(prompt).into_iter().collect();
    let mut out = Vec::new();
    match &prompt.ranker {
        RankerSpec::Neutral => {
            for t in &lexicon.tokens {
                if tokens.contains(&t.to_lowercase()) {
                    out.push(PromptViolation::NeutralLeak(t.clone()));
                }
            }
        }
        RankerSpec::Sensitive(attrs) => {
            for a in attrs.iter() {
                let v = user.value_of(a);
                if !tokens.contains(v.token()) {
                    out.push(PromptViolation::MissingSensitiveValue(v));
                }
            }
        }
        RankerSpec::Counterfactual(forced) => {
            if !tokens.contains(forced.token()) {
                out.push(PromptViolation::MissingForcedValue(*forced));
            }
            let actual = user.value_of(forced.attribute());
            if actual != *forced && tokens.contains(actual.token()) {
                out.push(PromptViolation::ActualValuePresent(actual));
            }
        }
    }
    out
}

/// One (condition, strategy, ranker) combination of the evaluation grid.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub condition: IclCondition,
    pub strategy: Strategy,
    pub spec: RankerSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("grid axis `{0}` is empty")]
pub struct EmptyAxis(pub &'static str);

#[derive(Clone, Debug, Default)]
pub struct Grid {
    pub cells: Vec<GridCell>,
    pub warnings: Vec<String>,
}

/// Full Cartesian product ordered by condition, then strategy, then ranker.
/// Repeated entries on any axis are dropped (first occurrence kept) with a warning.
pub fn expand_condition_grid(
    conditions: &[IclCondition],
    strategies: &[Strategy],
    specs: &[RankerSpec],
) -> Result<Grid, EmptyAxis> {
    fn dedup<T: Clone + PartialEq + fmt::Display>(
        axis: &str,
        xs: &[T],
        warnings: &mut Vec<String>,
    ) -> Vec<T> {
        let mut out: Vec<T> = Vec::with_capacity(xs.len());
        for x in xs {
            if out.contains(x) {
                let msg = format!("duplicate {axis} `{x}` ignored");
                log::warn!("{msg}");
                warnings.push(msg);
            } else {
                out.push(x.clone());
            }
        }
        out
    }
    if conditions.is_empty() {
        return Err(EmptyAxis("conditions"));
    }
    if strategies.is_empty() {
        return Err(EmptyAxis("strategies"));
    }
    if specs.is_empty() {
        return Err(EmptyAxis("rankers"));
    }
    let mut warnings = Vec::new();
    let conditions = dedup("condition", conditions, &mut warnings);
    let strategies = dedup("strategy", strategies, &mut warnings);
    let specs = dedup("ranker", specs, &mut warnings);
    let mut cells = Vec::with_capacity(conditions.len() * strategies.len() * specs.len());
    for &condition in &conditions {
        for &strategy in &strategies {
            for spec in &specs {
                cells.push(GridCell {
                    condition,
                    strategy,
                    spec: spec.clone(),
                });
            }
        }
    }
    Ok(Grid { cells, warnings })
}
