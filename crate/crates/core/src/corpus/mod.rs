//! Dataset ingestion, per-user temporal split and cohort selection.

mod demographics;
mod parse;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{ItemId, UserId};

pub use demographics::{
    derive_age_group, AgeGroup, Attribute, AttributeValue, Gender, NonPositiveAge,
    DEFAULT_AGE_BOUNDARY,
};
pub use parse::{
    parse_catalog, parse_interactions, parse_users, serialize_interactions, split_year,
    DatasetFormat, FormatTag, LineErrorKind, MalformedPolicy, ParseError, Parsed, UserDemographics,
};

pub const DEFAULT_COHORT_SIZE: usize = 80;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// One timestamped user–item rating event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub rating: f64,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub title: String,
    pub year: Option<i32>,
    pub genres: Vec<String>,
}

/// Item metadata keyed by item id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    items: BTreeMap<ItemId, ItemMeta>,
}

impl Catalog {
    pub fn from_items(items: BTreeMap<ItemId, ItemMeta>) -> Self {
        Self { items }
    }

    pub fn get(&self, id: &ItemId) -> Option<&ItemMeta> {
        self.items.get(id)
    }

    pub fn title(&self, id: &ItemId) -> Option<&str> {
        self.items.get(id).map(|m| m.title.as_str())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&ItemId, &ItemMeta)> {
        self.items.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ItemId> {
        self.items.keys()
    }
}

/// Closed interval of total interaction counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityBand {
    pub min_interactions: usize,
    pub max_interactions: usize,
}

impl ActivityBand {
    pub fn new(min_interactions: usize, max_interactions: usize) -> Self {
        Self {
            min_interactions,
            max_interactions,
        }
    }

    pub fn contains(&self, count: usize) -> bool {
        (self.min_interactions..=self.max_interactions).contains(&count)
    }
}

impl Default for ActivityBand {
    fn default() -> Self {
        Self::new(50, 500)
    }
}

/// A user with demographics and a temporally split history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub gender: Gender,
    pub age_group: AgeGroup,
    pub age_years: i64,
    pub train: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

impl UserRecord {
    pub fn value_of(&self, attribute: Attribute) -> AttributeValue {
        match attribute {
            Attribute::Gender => self.gender.value(),
            Attribute::AgeGroup => self.age_group.value(),
        }
    }

    pub fn total_interactions(&self) -> usize {
        self.train.len() + self.test.len()
    }

    /// Held-out items ordered by rating descending, then timestamp ascending,
    /// then item id. Repeated items keep their first position.
    pub fn ground_truth(&self) -> Vec<ItemId> {
        let mut test: Vec<&Interaction> = self.test.iter().collect();
        test.sort_by(|a, b| {
            b.rating
                .total_cmp(&a.rating)
                .then(a.timestamp.cmp(&b.timestamp))
                .then_with(|| a.item_id.cmp(&b.item_id))
        });
        let mut seen = std::collections::HashSet::new();
        test.into_iter()
            .filter(|i| seen.insert(&i.item_id))
            .map(|i| i.item_id.clone())
            .collect()
    }
}

/// Evaluation cohort drawn from the band-eligible users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub users: Vec<UserRecord>,
    pub selection_seed: u64,
    pub activity_band: ActivityBand,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(String),
    #[error("user has no interactions")]
    NoInteractions,
    #[error("user has {0} interaction(s); the held-out part would be empty")]
    EmptyTest(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CohortError {
    #[error("need {needed} users in the activity band {band_min}..={band_max}, only {eligible} eligible (short by {})", needed - eligible)]
    Shortfall {
        needed: usize,
        eligible: usize,
        band_min: usize,
        band_max: usize,
    },
}

/// Sorts by timestamp (ties by item id) and splits off the first ⌈f·m⌉
/// interactions as train.
pub fn temporal_split(
    mut interactions: Vec<Interaction>,
    train_fraction: f64,
) -> Result<(Vec<Interaction>, Vec<Interaction>), SplitError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SplitError::BadFraction(train_fraction.to_string()));
    }
    let m = interactions.len();
    if m == 0 {
        return Err(SplitError::NoInteractions);
    }
    interactions.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    // The epsilon absorbs representation error such as 0.7 * 10 = 7.000000000000001.
    let n_train = ((train_fraction * m as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, m);
    if n_train == m {
        return Err(SplitError::EmptyTest(m));
    }
    let test = interactions.split_off(n_train);
    Ok((interactions, test))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedUser {
    pub user_id: UserId,
    pub reason: String,
}

/// Users that survived the split plus those that did not, with reasons.
#[derive(Clone, Debug, Default)]
pub struct SplitOutcome {
    pub users: Vec<UserRecord>,
    pub dropped: Vec<DroppedUser>,
}

/// Groups interactions per user, attaches demographics and splits each
/// history. Users without demographics, with a nonpositive age, or with an
/// empty held-out part are dropped with a warning.
pub fn build_user_records(
    interactions: &[Interaction],
    demographics: &[UserDemographics],
    train_fraction: f64,
    age_boundary: u32,
) -> Result<SplitOutcome, SplitError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SplitError::BadFraction(train_fraction.to_string()));
    }
    let demo: BTreeMap<&UserId, &UserDemographics> =
        demographics.iter().map(|d| (&d.user_id, d)).collect();
    let mut per_user: BTreeMap<UserId, Vec<Interaction>> = BTreeMap::new();
    for i in interactions {
        per_user
            .entry(i.user_id.clone())
            .or_default()
            .push(i.clone());
    }
    let mut out = SplitOutcome::default();
    let mut drop = |user_id: UserId, reason: String| {
        log::warn!("dropping user {user_id}: {reason}");
        out.dropped.push(DroppedUser { user_id, reason });
    };
    let mut users = Vec::new();
    for (user_id, rows) in per_user {
        let Some(d) = demo.get(&user_id) else {
            drop(user_id, "no demographics".into());
            continue;
        };
        let age_group = match derive_age_group(d.age_years, age_boundary) {
            Ok(g) => g,
            Err(e) => {
                drop(user_id, e.to_string());
                continue;
            }
        };
        match temporal_split(rows, train_fraction) {
            Ok((train, test)) => users.push(UserRecord {
                user_id,
                gender: d.gender,
                age_group,
                age_years: d.age_years,
                train,
                test,
            }),
            Err(e) => drop(user_id, e.to_string()),
        }
    }
    out.users = users;
    Ok(out)
}

/// Draws `n` users uniformly without replacement from the band-eligible set.
/// The result is a function of the input set (not its order), band, n and seed;
/// the cohort is returned sorted by user id.
pub fn select_cohort(
    all_users: &[UserRecord],
    n: usize,
    band: ActivityBand,
    seed: u64,
) -> Result<Cohort, CohortError> {
    let mut eligible: Vec<&UserRecord> = all_users
        .iter()
        .filter(|u| band.contains(u.total_interactions()))
        .collect();
    eligible.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    if eligible.len() < n {
        return Err(CohortError::Shortfall {
            needed: n,
            eligible: eligible.len(),
            band_min: band.min_interactions,
            band_max: band.max_interactions,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users: Vec<UserRecord> = eligible
        .choose_multiple(&mut rng, n)
        .map(|u| (*u).clone())
        .collect();
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    Ok(Cohort {
        users,
        selection_seed: seed,
        activity_band: band,
    })
}

/// Interaction totals and per-user means over a set of split users.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub users: usize,
    pub train_interactions: usize,
    pub test_interactions: usize,
    pub train_per_user: f64,
    pub test_per_user: f64,
}

pub fn split_stats(users: &[UserRecord]) -> SplitStats {
    let train: usize = users.iter().map(|u| u.train.len()).sum();
    let test: usize = users.iter().map(|u| u.test.len()).sum();
    let n = users.len();
    let per = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    SplitStats {
        users: n,
        train_interactions: train,
        test_interactions: test,
        train_per_user: per(train),
        test_per_user: per(test),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifestEntry {
    pub user_id: UserId,
    pub train: usize,
    pub test: usize,
}

/// Audit record of how a cohort was selected and split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub selection_seed: u64,
    pub activity_band: ActivityBand,
    pub train_fraction: f64,
    pub stats: SplitStats,
    pub users: Vec<SplitManifestEntry>,
    pub dropped: Vec<DroppedUser>,
}

impl SplitManifest {
    pub fn new(cohort: &Cohort, train_fraction: f64, dropped: &[DroppedUser]) -> Self {
        Self {
            selection_seed: cohort.selection_seed,
            activity_band: cohort.activity_band,
            train_fraction,
            stats: split_stats(&cohort.users),
            users: cohort
                .users
                .iter()
                .map(|u| SplitManifestEntry {
                    user_id: u.user_id.clone(),
                    train: u.train.len(),
                    test: u.test.len(),
                })
                .collect(),
            dropped: dropped.to_vec(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("{path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Split(#[from] SplitError),
}

/// Paths to the three files of a MovieLens-style dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub ratings: PathBuf,
    pub users: PathBuf,
    pub items: PathBuf,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub demographics: Vec<UserDemographics>,
    pub catalog: Catalog,
    /// Lines skipped across all files under [`MalformedPolicy::Skip`].
    pub skipped_lines: usize,
}

fn open(path: &Path) -> Result<BufReader<File>, DatasetError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DatasetError::Open {
            path: path.to_owned(),
            source,
        })
}

pub fn load_dataset(
    paths: &DatasetPaths,
    format: &DatasetFormat,
    policy: MalformedPolicy,
) -> Result<Dataset, DatasetError> {
    let wrap = |path: &Path| {
        let path = path.to_owned();
        move |source| DatasetError::Parse { path, source }
    };
    let ratings =
        parse_interactions(open(&paths.ratings)?, format, policy).map_err(wrap(&paths.ratings))?;
    let users =
        parse_users(open(&paths.users)?, &format.delimiter, policy).map_err(wrap(&paths.users))?;
    let (catalog, item_skips) = parse_catalog(open(&paths.items)?, &format.delimiter, policy)
        .map_err(wrap(&paths.items))?;
    Ok(Dataset {
        skipped_lines: ratings.skipped.len() + users.skipped.len() + item_skips.len(),
        interactions: ratings.records,
        demographics: users.records,
        catalog,
    })
}
