//! Profile sampling strategies and in-context example selection.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, Interaction, UserRecord};
use crate::ids::{ItemId, UserId};

pub const DEFAULT_PROFILE_LENGTH: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_ICL_WINDOW: usize = 5;

/// How history items are chosen for a profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "rand")]
    Rand,
    #[serde(rename = "freq")]
    Freq,
    #[serde(rename = "rec-freq")]
    RecFreq,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Rand, Strategy::Freq, Strategy::RecFreq];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Rand => "rand",
            Strategy::Freq => "freq",
            Strategy::RecFreq => "rec-freq",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rand" | "random" => Ok(Strategy::Rand),
            "freq" => Ok(Strategy::Freq),
            "rec-freq" | "recfreq" | "rec_freq" => Ok(Strategy::RecFreq),
            other => Err(format!("unknown sampling strategy `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileItem {
    pub item_id: ItemId,
    pub title: String,
    pub weight: f64,
    /// 1-based position in the sampled order.
    pub source_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub user_id: UserId,
    pub strategy: Strategy,
    pub items: Vec<ProfileItem>,
    pub sample_seed: u64,
}

/// One (history prefix → next item) demonstration taken from the user's own
/// training timeline.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub history_prefix: Vec<String>,
    pub next_item: String,
    #[serde(skip)]
    pub item_ids: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("user {0} has an empty training history")]
    EmptyTrain(UserId),
    #[error("profile length must be at least 1")]
    ZeroLength,
    #[error("mixing weight alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("item {0} is missing from the catalog")]
    UnknownItem(ItemId),
    #[error("user {user} needs at least {needed} training interactions for {examples} example(s), has {available}")]
    InsufficientHistory {
        user: UserId,
        examples: usize,
        needed: usize,
        available: usize,
    },
    #[error("at most two in-context examples are supported, got {0}")]
    TooManyExamples(usize),
}

fn title_of(catalog: &Catalog, id: &ItemId) -> Result<String, ProfileError> {
    catalog
        .title(id)
        .map(str::to_owned)
        .ok_or_else(|| ProfileError::UnknownItem(id.clone()))
}

/// Descending by score; ties go to the more recent interaction, then the
/// smaller item id.
fn by_score_then_recency(a: (&Interaction, f64), b: (&Interaction, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(b.0.timestamp.cmp(&a.0.timestamp))
        .then_with(|| a.0.item_id.cmp(&b.0.item_id))
}

/// Blended recency/strength score for every train interaction:
/// `alpha * norm_recency + (1 - alpha) * weight / max_weight`.
fn rec_freq_scores(train: &[Interaction], alpha: f64) -> Vec<f64> {
    let min_ts = train.iter().map(|i| i.timestamp).min().unwrap_or(0);
    let max_ts = train.iter().map(|i| i.timestamp).max().unwrap_or(0);
    let max_w = train.iter().map(|i| i.rating).fold(0.0_f64, f64::max);
    train
        .iter()
        .map(|i| {
            let recency = if max_ts > min_ts {
                (i.timestamp - min_ts) as f64 / (max_ts - min_ts) as f64
            } else {
                0.0
            };
            let strength = if max_w > 0.0 { i.rating / max_w } else { 0.0 };
            alpha * recency + (1.0 - alpha) * strength
        })
        .collect()
}

/// Samples up to `length` train items under `strategy`.
///
/// `rand` draws uniformly without replacement with a seeded generator and keeps
/// the draw order. `freq` orders by rating. `rec-freq` orders by the blended
/// score of [`rec_freq_scores`]. Only train interactions are ever read.
pub fn sample_profile(
    user: &UserRecord,
    catalog: &Catalog,
    strategy: Strategy,
    length: usize,
    seed: u64,
    alpha: f64,
) -> Result<Profile, ProfileError> {
    if user.train.is_empty() {
        return Err(ProfileError::EmptyTrain(user.user_id.clone()));
    }
    if length == 0 {
        return Err(ProfileError::ZeroLength);
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ProfileError::BadAlpha(alpha));
    }
    let train = &user.train;
    let take = length.min(train.len());
    let picked: Vec<(&Interaction, f64)> = match strategy {
        Strategy::Rand => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, train.len(), take)
                .into_iter()
                .map(|idx| (&train[idx], train[idx].rating))
                .collect()
        }
        Strategy::Freq => {
            let mut scored: Vec<(&Interaction, f64)> =
                train.iter().map(|i| (i, i.rating)).collect();
            scored.sort_by(|a, b| by_score_then_recency(*a, *b));
            scored.truncate(take);
            scored
        }
        Strategy::RecFreq => {
            let mut scored: Vec<(&Interaction, f64)> =
                train.iter().zip(rec_freq_scores(train, alpha)).collect();
            scored.sort_by(|a, b| by_score_then_recency(*a, *b));
            scored.truncate(take);
            scored
        }
    };
    let items = picked
        .into_iter()
        .enumerate()
        .map(|(pos, (i, weight))| {
            Ok(ProfileItem {
                item_id: i.item_id.clone(),
                title: title_of(catalog, &i.item_id)?,
                weight: weight.max(0.0),
                source_rank: pos + 1,
            })
        })
        .collect::<Result<Vec<_>, ProfileError>>()?;
    Ok(Profile {
        user_id: user.user_id.clone(),
        strategy,
        items,
        sample_seed: seed,
    })
}

/// Builds `n` (0, 1 or 2) examples from the tail of the train timeline: the
/// newest train item is the target of example 1 with the `window` items before
/// it as prefix; example 2 does the same one step earlier.
pub fn select_icl_examples(
    user: &UserRecord,
    catalog: &Catalog,
    n: usize,
    window: usize,
) -> Result<Vec<IclExample>, ProfileError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > 2 {
        return Err(ProfileError::TooManyExamples(n));
    }
    let train = &user.train;
    if train.len() < n + 1 {
        return Err(ProfileError::InsufficientHistory {
            user: user.user_id.clone(),
            examples: n,
            needed: n + 1,
            available: train.len(),
        });
    }
    (0..n)
        .map(|back| {
            let target = train.len() - 1 - back;
            let start = target.saturating_sub(window.max(1));
            let prefix = &train[start..target];
            let mut item_ids: Vec<ItemId> = prefix.iter().map(|i| i.item_id.clone()).collect();
            item_ids.push(train[target].item_id.clone());
            Ok(IclExample {
                history_prefix: prefix
                    .iter()
                    .map(|i| title_of(catalog, &i.item_id))
                    .collect::<Result<_, _>>()?,
                next_item: title_of(catalog, &train[target].item_id)?,
                item_ids,
            })
        })
        .collect()
}

/// Per-user sampling seed derived from a run-level seed.
pub fn user_seed(base: u64, user: &UserId) -> u64 {
    // FNV-1a over the id bytes, mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for b in user.as_str().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
