//! Versioned TOML configuration of an audit run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{HttpConfig, SyntheticBiasConfig, DEFAULT_MAX_TOKENS};
use crate::corpus::synthetic::SyntheticCorpusConfig;
use crate::corpus::{
    ActivityBand, DatasetFormat, DatasetPaths, FormatTag, MalformedPolicy, DEFAULT_AGE_BOUNDARY,
    DEFAULT_COHORT_SIZE, DEFAULT_TRAIN_FRACTION,
};
use crate::digest::sha256_hex;
use crate::extraction::DEFAULT_FUZZY_THRESHOLD;
use crate::fairness::{FairnessTarget, ThresholdPolicy};
use crate::metrics::{HitMode, Metric, DEFAULT_K};
use crate::profiles::{Strategy, DEFAULT_ALPHA, DEFAULT_ICL_WINDOW, DEFAULT_PROFILE_LENGTH};
use crate::prompts::{IclCondition, RankerSpec};
use crate::stats::TestKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub schema_version: u32,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub cohort: CohortSection,
    #[serde(default)]
    pub profiles: ProfileSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub thresholds: ThresholdPolicy,
    pub backend: BackendSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory that relative paths are resolved against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_format")]
    pub format: FormatTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<PathBuf>,
    #[serde(default)]
    pub malformed: MalformedPolicy,
    /// Generate a seeded corpus instead of reading files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticCorpusConfig>,
}

fn default_format() -> FormatTag {
    FormatTag::Movielens
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    pub size: usize,
    pub band: [usize; 2],
    pub seed: u64,
    pub train_fraction: f64,
    pub age_boundary: u32,
}

impl Default for CohortSection {
    fn default() -> Self {
        let band = ActivityBand::default();
        Self {
            size: DEFAULT_COHORT_SIZE,
            band: [band.min_interactions, band.max_interactions],
            seed: 42,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            age_boundary: DEFAULT_AGE_BOUNDARY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub length: usize,
    pub alpha: f64,
    pub seed: u64,
    pub icl_window: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            length: DEFAULT_PROFILE_LENGTH,
            alpha: DEFAULT_ALPHA,
            seed: 7,
            icl_window: DEFAULT_ICL_WINDOW,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub conditions: Vec<IclCondition>,
    pub strategies: Vec<Strategy>,
    pub rankers: Vec<RankerSpec>,
    /// Prompt template file replacing the built-in wording.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    /// Tokens that must not appear in neutral prompts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<Vec<String>>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            conditions: IclCondition::ALL.to_vec(),
            strategies: Strategy::ALL.to_vec(),
            rankers: RankerSpec::default_set(),
            template: None,
            lexicon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub k: usize,
    pub metrics: Vec<Metric>,
    pub hit_mode: HitMode,
    pub test: TestKind,
    pub fuzzy_threshold: f64,
    pub if_target: FairnessTarget,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            metrics: Metric::ALL.to_vec(),
            hit_mode: HitMode::Binary,
            test: TestKind::WelchT,
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
            if_target: FairnessTarget::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Replay store: read by `replay`, appended to by the others when `record` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_store: Option<PathBuf>,
    #[serde(default)]
    pub record: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticBiasConfig>,
}

fn default_model() -> String {
    "gpt-4o-mini".into()
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

fn default_in_flight() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Abort when more than this share of (user, cell) units fail.
    pub max_failed_fraction: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("audit-out"),
            max_failed_fraction: 0.2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl AuditConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut cfg: AuditConfig =
            toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_format(&self) -> DatasetFormat {
        let f = DatasetFormat::from_tag(self.dataset.format);
        match &self.dataset.delimiter {
            Some(d) => f.with_delimiter(d.clone()),
            None => f,
        }
    }

    pub fn dataset_paths(&self) -> Option<DatasetPaths> {
        let d = &self.dataset;
        Some(DatasetPaths {
            ratings: self.resolve(d.ratings.as_ref()?),
            users: self.resolve(d.users.as_ref()?),
            items: self.resolve(d.items.as_ref()?),
        })
    }

    pub fn activity_band(&self) -> ActivityBand {
        ActivityBand::new(self.cohort.band[0], self.cohort.band[1])
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    /// Content digest of the configuration as written (paths unresolved),
    /// so the same config digests equally on every machine.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let d = &self.dataset;
        match &d.synthetic {
            Some(s) => {
                if s.users == 0 || s.catalog_size == 0 {
                    errs.push("dataset.synthetic needs users and catalog_size > 0".into());
                }
                if s.min_interactions > s.max_interactions || s.max_interactions > s.catalog_size {
                    errs.push("dataset.synthetic needs min_interactions <= max_interactions <= catalog_size".into());
                }
            }
            None => {
                for (name, p) in [
                    ("ratings", &d.ratings),
                    ("users", &d.users),
                    ("items", &d.items),
                ] {
                    match p {
                        None => errs.push(format!(
                            "dataset.{name} is required unless dataset.synthetic is given"
                        )),
                        Some(p) if !self.resolve(p).is_file() => errs.push(format!(
                            "dataset.{name}: {} does not exist",
                            self.resolve(p).display()
                        )),
                        Some(_) => {}
                    }
                }
            }
        }
        if d.delimiter.as_deref() == Some("") {
            errs.push("dataset.delimiter must not be empty".into());
        }
        let c = &self.cohort;
        if c.size == 0 {
            errs.push("cohort.size must be at least 1".into());
        }
        if c.band[0] > c.band[1] {
            errs.push(format!(
                "cohort.band [{}, {}] is reversed",
                c.band[0], c.band[1]
            ));
        }
        if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
            errs.push(format!(
                "cohort.train_fraction {} must lie strictly between 0 and 1",
                c.train_fraction
            ));
        }
        if c.age_boundary == 0 {
            errs.push("cohort.age_boundary must be positive".into());
        }
        let p = &self.profiles;
        if p.length == 0 {
            errs.push("profiles.length must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&p.alpha) {
            errs.push(format!("profiles.alpha {} outside [0, 1]", p.alpha));
        }
        if p.icl_window == 0 {
            errs.push("profiles.icl_window must be at least 1".into());
        }
        let g = &self.grid;
        for (name, empty) in [
            ("conditions", g.conditions.is_empty()),
            ("strategies", g.strategies.is_empty()),
            ("rankers", g.rankers.is_empty()),
        ] {
            if empty {
                errs.push(format!("grid.{name} must not be empty"));
            }
        }
        if let Some(t) = &g.template {
            if !self.resolve(t).is_file() {
                errs.push(format!(
                    "grid.template: {} does not exist",
                    self.resolve(t).display()
                ));
            }
        }
        let e = &self.evaluation;
        if e.k == 0 {
            errs.push("evaluation.k must be at least 1".into());
        }
        if e.metrics.is_empty() {
            errs.push("evaluation.metrics must not be empty".into());
        }
        if !(0.0..=1.0).contains(&e.fuzzy_threshold) {
            errs.push(format!(
                "evaluation.fuzzy_threshold {} outside [0, 1]",
                e.fuzzy_threshold
            ));
        }
        if let Err(m) = self.thresholds.validate() {
            errs.push(format!("thresholds: {m}"));
        }
        let b = &self.backend;
        if b.max_in_flight == 0 {
            errs.push("backend.max_in_flight must be at least 1".into());
        }
        if !(b.temperature >= 0.0 && b.temperature.is_finite()) {
            errs.push("backend.temperature must be a nonnegative number".into());
        }
        match b.kind {
            BackendKind::Replay => match &b.replay_store {
                None => errs.push("backend.replay_store is required for the replay backend".into()),
                Some(p) if !self.resolve(p).is_file() => errs.push(format!(
                    "backend.replay_store: {} does not exist",
                    self.resolve(p).display()
                )),
                Some(_) => {}
            },
            BackendKind::Http => {
                if b.http.as_ref().is_none_or(|h| h.endpoint.trim().is_empty()) {
                    errs.push("backend.http.endpoint is required for the http backend".into());
                }
            }
            BackendKind::Synthetic => {
                if let Some(s) = &b.synthetic {
                    if let Err(m) = s.validate() {
                        errs.push(format!("backend.synthetic: {m}"));
                    }
                }
            }
        }
        if b.record && b.replay_store.is_none() {
            errs.push("backend.record needs backend.replay_store".into());
        }
        let o = &self.output;
        if !(0.0..=1.0).contains(&o.max_failed_fraction) {
            errs.push(format!(
                "output.max_failed_fraction {} outside [0, 1]",
                o.max_failed_fraction
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[dataset.synthetic]
users = 20
catalog_size = 300
min_interactions = 20
max_interactions = 40
train_fraction = 0.8
age_boundary = 35
seed = 1

[backend]
kind = "synthetic"
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = AuditConfig::from_toml(MINIMAL, ".").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.cohort.size, 80);
        assert_eq!(cfg.evaluation.k, 10);
        assert_eq!(cfg.grid.rankers.len(), 7);
        assert_eq!(cfg.thresholds, ThresholdPolicy::default());
        assert_eq!(cfg.output.max_failed_fraction, 0.2);
    }

    #[test]
    fn round_trip_and_digest() {
        let cfg = AuditConfig::from_toml(MINIMAL, ".").unwrap();
        let again = AuditConfig::from_toml(&cfg.to_toml(), ".").unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.digest(), again.digest());
        let moved = AuditConfig::from_toml(MINIMAL, "/elsewhere").unwrap();
        assert_eq!(cfg.digest(), moved.digest());
        let mut other = cfg.clone();
        other.evaluation.k = 5;
        assert_ne!(cfg.digest(), other.digest());
    }

    #[test]
    fn grid_axes_parse_from_strings() {
        let text = format!(
            "{MINIMAL}\n[grid]\nconditions = [\"0-shot\", \"ICL-2\"]\nstrategies = [\"rec-freq\"]\nrankers = [\"neutral\", \"sensitive:age\", \"cf:gender=female\"]\n"
        );
        let cfg = AuditConfig::from_toml(&text, ".").unwrap();
        assert_eq!(
            cfg.grid.conditions,
            vec![IclCondition::ZeroShot, IclCondition::Icl2]
        );
        assert_eq!(cfg.grid.rankers.len(), 3);
    }

    #[test]
    fn problems_are_collected() {
        let text = r#"
schema_version = 2
[dataset]
ratings = "missing.dat"
[cohort]
train_fraction = 1.0
band = [10, 5]
[grid]
conditions = []
[evaluation]
k = 0
[thresholds]
small_bound = 0.2
large_bound = 0.1
alpha = 0.05
[backend]
kind = "replay"
"#;
        let cfg = AuditConfig::from_toml(text, ".").unwrap();
        let ConfigError::Invalid(errs) = cfg.validate().unwrap_err() else {
            panic!()
        };
        let all = errs.join("\n");
        for needle in [
            "schema_version",
            "dataset.ratings",
            "dataset.users",
            "train_fraction",
            "reversed",
            "grid.conditions",
            "evaluation.k",
            "thresholds",
            "replay_store",
        ] {
            assert!(all.contains(needle), "missing {needle} in\n{all}");
        }
    }

    #[test]
    fn unknown_keys_are_syntax_errors() {
        let text = format!("{MINIMAL}\n[evaluation]\nkk = 3\n");
        assert!(matches!(
            AuditConfig::from_toml(&text, "."),
            Err(ConfigError::Syntax(_))
        ));
    }
}
