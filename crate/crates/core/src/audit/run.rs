//! The end-to-end audit pipeline.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{AuditConfig, BackendKind};
use super::AuditError;
use crate::backend::{
    execute_all, Backend, BackendTag, HttpBackend, RankerRequest, RecordingBackend, ReplayBackend,
    ReplayStore, SyntheticBackend,
};
use crate::corpus::{
    build_user_records, load_dataset, select_cohort, synthetic, Attribute, Catalog, Cohort,
    SplitManifest, UserRecord,
};
use crate::extraction::{parse_list, ExtractionStats, TitleMatcher};
use crate::fairness::{intrinsic_fairness, ncsd, nsd, DisparityResult};
use crate::ids::UserId;
use crate::metrics::{benefit, BenefitScore};
use crate::profiles::{
    sample_profile, select_icl_examples, user_seed, IclExample, Profile, Strategy,
};
use crate::prompts::{
    build_prompt, check_prompt, expand_condition_grid, DemographicLexicon, GridCell, Prompt,
    PromptTemplate, PromptViolation, RankerSpec,
};

pub const P_VALUE_SIDEDNESS: &str = "two-sided";

/// Pipeline stage at which a (user, cell) unit failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Profile,
    Prompt,
    PromptCheck,
    Backend,
    Extraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitFailure {
    pub user_id: UserId,
    pub stage: FailureStage,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub user_id: UserId,
    /// Absent when the unit failed before a request was formed.
    pub request_key: Option<String>,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub cell: GridCell,
    pub requests: Vec<RequestTrace>,
    pub extraction: ExtractionStats,
    pub failures: Vec<UnitFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    /// `files` or `synthetic`.
    pub source: String,
    pub catalog_items: usize,
    pub interactions: usize,
    pub users_loaded: usize,
    pub skipped_lines: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub cohort: u64,
    pub profiles: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic_backend: Option<u64>,
}

/// Everything needed to trace and reproduce a run. Wall-clock times are kept
/// out of it so identical inputs give identical bytes; they go to the
/// append-only manifest log instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: AuditConfig,
    pub config_digest: String,
    pub template_version: String,
    pub p_value_sidedness: String,
    pub seeds: Seeds,
    pub dataset: DatasetSummary,
    pub split: SplitManifest,
    pub grid_warnings: Vec<String>,
    pub backend: BackendTag,
    pub model: String,
    pub units: usize,
    pub failed_units: usize,
    pub failed_fraction: f64,
    pub cells: Vec<CellDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub manifest: RunManifest,
    pub disparities: Vec<DisparityResult>,
    pub scores: Vec<BenefitScore>,
}

/// Loaded catalog plus split users, before cohort selection.
pub struct PreparedData {
    pub catalog: Catalog,
    pub users: Vec<UserRecord>,
    pub split_dropped: Vec<crate::corpus::DroppedUser>,
    pub summary: DatasetSummary,
}

pub fn prepare_data(cfg: &AuditConfig) -> Result<PreparedData, AuditError> {
    let c = &cfg.cohort;
    let (interactions, demographics, catalog, source, skipped) = match &cfg.dataset.synthetic {
        Some(sc) => {
            let corpus = synthetic::generate(sc);
            (
                corpus.interactions,
                corpus.demographics,
                corpus.catalog,
                "synthetic",
                0,
            )
        }
        None => {
            let paths = cfg
                .dataset_paths()
                .ok_or_else(|| AuditError::Data("dataset paths are incomplete".into()))?;
            let ds = load_dataset(&paths, &cfg.dataset_format(), cfg.dataset.malformed)
                .map_err(|e| AuditError::Data(e.to_string()))?;
            (
                ds.interactions,
                ds.demographics,
                ds.catalog,
                "files",
                ds.skipped_lines,
            )
        }
    };
    let outcome = build_user_records(
        &interactions,
        &demographics,
        c.train_fraction,
        c.age_boundary,
    )
    .map_err(|e| AuditError::Data(e.to_string()))?;
    let summary = DatasetSummary {
        source: source.into(),
        catalog_items: catalog.len(),
        interactions: interactions.len(),
        users_loaded: outcome.users.len(),
        skipped_lines: skipped,
    };
    Ok(PreparedData {
        catalog,
        users: outcome.users,
        split_dropped: outcome.dropped,
        summary,
    })
}

pub fn choose_cohort(cfg: &AuditConfig, data: &PreparedData) -> Result<Cohort, AuditError> {
    select_cohort(
        &data.users,
        cfg.cohort.size,
        cfg.activity_band(),
        cfg.cohort.seed,
    )
    .map_err(|e| AuditError::Data(e.to_string()))
}

pub fn load_template(cfg: &AuditConfig) -> Result<PromptTemplate, AuditError> {
    match &cfg.grid.template {
        Some(p) => {
            let path = cfg.resolve(p);
            PromptTemplate::from_file(&path)
                .map_err(|e| AuditError::Data(format!("prompt template {}: {e}", path.display())))
        }
        None => Ok(PromptTemplate::builtin()),
    }
}

pub fn lexicon(cfg: &AuditConfig) -> DemographicLexicon {
    match &cfg.grid.lexicon {
        Some(tokens) => DemographicLexicon {
            tokens: tokens.clone(),
        },
        None => DemographicLexicon::default(),
    }
}

/// One (user, cell) prompt, or the reason it could not be produced.
pub struct PlannedUnit {
    pub user_id: UserId,
    pub cell: GridCell,
    pub prompt: Result<Prompt, UnitFailure>,
}

/// Renders every prompt of the grid for the cohort, reusing profiles per
/// (user, strategy) and examples per (user, count).
pub fn plan_prompts(
    cfg: &AuditConfig,
    cohort: &Cohort,
    catalog: &Catalog,
    cells: &[GridCell],
    template: &PromptTemplate,
    lexicon: &DemographicLexicon,
) -> Vec<PlannedUnit> {
    let p = &cfg.profiles;
    let k = cfg.evaluation.k;
    let mut profiles: HashMap<(&UserId, Strategy), Result<Profile, String>> = HashMap::new();
    let mut examples: HashMap<(&UserId, usize), Result<Vec<IclExample>, String>> = HashMap::new();
    let mut out = Vec::with_capacity(cells.len() * cohort.users.len());
    for cell in cells {
        for user in &cohort.users {
            let fail = |stage, message: String| UnitFailure {
                user_id: user.user_id.clone(),
                stage,
                message,
            };
            let profile = profiles
                .entry((&user.user_id, cell.strategy))
                .or_insert_with(|| {
                    let seed = user_seed(p.seed, &user.user_id);
                    sample_profile(user, catalog, cell.strategy, p.length, seed, p.alpha)
                        .map_err(|e| e.to_string())
                })
                .clone();
            let icl = examples
                .entry((&user.user_id, cell.condition.examples()))
                .or_insert_with(|| {
                    select_icl_examples(user, catalog, cell.condition.examples(), p.icl_window)
                        .map_err(|e| e.to_string())
                })
                .clone();
            let prompt = match (profile, icl) {
                (Err(m), _) | (_, Err(m)) => Err(fail(FailureStage::Profile, m)),
                (Ok(profile), Ok(icl)) => {
                    match build_prompt(
                        &profile,
                        user,
                        &cell.spec,
                        cell.condition,
                        &icl,
                        k,
                        template,
                    ) {
                        Err(e) => Err(fail(FailureStage::Prompt, e.to_string())),
                        Ok(prompt) => {
                            let violations = check_prompt(&prompt, user, lexicon);
                            if violations.is_empty() {
                                Ok(prompt)
                            } else {
                                Err(fail(
                                    FailureStage::PromptCheck,
                                    describe_violations(&violations),
                                ))
                            }
                        }
                    }
                }
            };
            out.push(PlannedUnit {
                user_id: user.user_id.clone(),
                cell: cell.clone(),
                prompt,
            });
        }
    }
    out
}

fn describe_violations(v: &[PromptViolation]) -> String {
    v.iter()
        .map(|v| match v {
            PromptViolation::NeutralLeak(t) => format!("neutral prompt contains '{t}'"),
            PromptViolation::MissingForcedValue(x) => {
                format!("forced value '{}' missing", x.token())
            }
            PromptViolation::ActualValuePresent(x) => {
                format!("actual value '{}' present", x.token())
            }
            PromptViolation::MissingSensitiveValue(x) => {
                format!("sensitive value '{}' missing", x.token())
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn make_backend(
    cfg: &AuditConfig,
    cohort: &Cohort,
    catalog: &Catalog,
) -> Result<Box<dyn Backend>, AuditError> {
    let b = &cfg.backend;
    let store = match &b.replay_store {
        Some(p) => Some(Arc::new(
            ReplayStore::open(cfg.resolve(p)).map_err(|e| AuditError::Config(e.to_string()))?,
        )),
        None => None,
    };
    let inner: Box<dyn Backend> = match b.kind {
        BackendKind::Replay => {
            let store = store
                .clone()
                .ok_or_else(|| AuditError::Config("replay backend needs a store".into()))?;
            return Ok(Box::new(ReplayBackend::new(store)));
        }
        BackendKind::Http => Box::new(
            HttpBackend::from_env(b.http.clone().unwrap_or_default())
                .map_err(|e| AuditError::Config(e.to_string()))?,
        ),
        BackendKind::Synthetic => Box::new(
            SyntheticBackend::new(
                cohort.users.iter().cloned(),
                Arc::new(catalog.clone()),
                b.synthetic.clone().unwrap_or_default(),
            )
            .map_err(|e| AuditError::Config(e.to_string()))?,
        ),
    };
    match (b.record, store) {
        (true, Some(store)) => Ok(Box::new(RecordingBackend::new(inner, store, true))),
        _ => Ok(inner),
    }
}

/// Runs the whole audit with the backend named in the config.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditResult, AuditError> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let cohort = choose_cohort(cfg, &data)?;
    let backend = make_backend(cfg, &cohort, &data.catalog)?;
    run_with(cfg, &data, &cohort, backend.as_ref())
}

/// Runs the audit over an already selected cohort with a caller-supplied backend.
pub fn run_with(
    cfg: &AuditConfig,
    data: &PreparedData,
    cohort: &Cohort,
    backend: &dyn Backend,
) -> Result<AuditResult, AuditError> {
    let g = &cfg.grid;
    let grid = expand_condition_grid(&g.conditions, &g.strategies, &g.rankers)
        .map_err(|e| AuditError::Config(e.to_string()))?;
    let template = load_template(cfg)?;
    let units = plan_prompts(
        cfg,
        cohort,
        &data.catalog,
        &grid.cells,
        &template,
        &lexicon(cfg),
    );

    let b = &cfg.backend;
    let requests: Vec<RankerRequest> = units
        .iter()
        .filter_map(|u| u.prompt.as_ref().ok())
        .map(|p| RankerRequest {
            prompt: p.clone(),
            model: b.model.clone(),
            temperature: b.temperature,
            max_tokens: b.max_tokens,
        })
        .collect();
    log::info!(
        "executing {} request(s) on the {} backend",
        requests.len(),
        backend.tag()
    );
    let mut completions = execute_all(backend, &requests, b.max_in_flight).into_iter();
    let mut keys = requests.iter().map(RankerRequest::request_key);

    let matcher = TitleMatcher::new(&data.catalog, cfg.evaluation.fuzzy_threshold);
    let users: HashMap<&UserId, &UserRecord> =
        cohort.users.iter().map(|u| (&u.user_id, u)).collect();
    let k = cfg.evaluation.k;
    let mut cells: BTreeMap<GridCell, CellDiagnostics> = BTreeMap::new();
    let mut scores = Vec::new();
    let mut failed = 0;
    for unit in &units {
        let diag = cells
            .entry(unit.cell.clone())
            .or_insert_with(|| CellDiagnostics {
                cell: unit.cell.clone(),
                requests: Vec::new(),
                extraction: ExtractionStats::default(),
                failures: Vec::new(),
            });
        let fail = |stage, message: String| UnitFailure {
            user_id: unit.user_id.clone(),
            stage,
            message,
        };
        let outcome = match &unit.prompt {
            Err(f) => {
                diag.requests.push(RequestTrace {
                    user_id: unit.user_id.clone(),
                    request_key: None,
                    ok: false,
                });
                Err(f.clone())
            }
            Ok(_) => {
                let key = keys.next().expect("one key per request");
                let completion = completions.next().expect("one completion per request");
                let result = completion
                    .map_err(|e| fail(FailureStage::Backend, e.to_string()))
                    .and_then(|c| {
                        parse_list(&c.text, k).map_err(|e| {
                            diag.extraction.failed += 1;
                            fail(FailureStage::Extraction, e.to_string())
                        })
                    });
                diag.requests.push(RequestTrace {
                    user_id: unit.user_id.clone(),
                    request_key: Some(key),
                    ok: result.is_ok(),
                });
                result
            }
        };
        match outcome {
            Err(f) => {
                failed += 1;
                diag.failures.push(f);
            }
            Ok(titles) => {
                let list = matcher.to_recommendation_list(&titles, &unit.user_id, &unit.cell, k);
                diag.extraction.record(&list);
                let slots: Vec<_> = list.slots().map(|s| s.cloned()).collect();
                let gt = users[&unit.user_id].ground_truth();
                for &metric in &cfg.evaluation.metrics {
                    let value = benefit(metric, &slots, &gt, k, cfg.evaluation.hit_mode).value;
                    scores.push(BenefitScore {
                        user_id: unit.user_id.clone(),
                        cell: unit.cell.clone(),
                        metric,
                        value,
                    });
                }
            }
        }
    }

    let total = units.len();
    let failed_fraction = if total == 0 {
        0.0
    } else {
        failed as f64 / total as f64
    };
    if failed_fraction > cfg.output.max_failed_fraction {
        return Err(AuditError::FailureThreshold {
            failed,
            total,
            limit: cfg.output.max_failed_fraction,
            summary: failure_summary(cells.values()),
        });
    }

    scores.sort_by(|a, b| (&a.cell, &a.user_id, a.metric).cmp(&(&b.cell, &b.user_id, b.metric)));
    let disparities = compute_disparities(cfg, &grid.cells, &scores, &cohort.users);

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        config_digest: cfg.digest(),
        template_version: template.version.clone(),
        p_value_sidedness: P_VALUE_SIDEDNESS.into(),
        seeds: Seeds {
            cohort: cfg.cohort.seed,
            profiles: cfg.profiles.seed,
            corpus: cfg.dataset.synthetic.as_ref().map(|s| s.seed),
            synthetic_backend: (b.kind == BackendKind::Synthetic)
                .then(|| b.synthetic.as_ref().map_or(0, |s| s.seed)),
        },
        dataset: data.summary.clone(),
        split: SplitManifest::new(cohort, cfg.cohort.train_fraction, &data.split_dropped),
        grid_warnings: grid.warnings.clone(),
        backend: backend.tag(),
        model: b.model.clone(),
        units: total,
        failed_units: failed,
        failed_fraction,
        cells: cells.into_values().collect(),
    };
    Ok(AuditResult {
        manifest,
        disparities,
        scores,
    })
}

/// Counts per stage plus the first few messages.
fn failure_summary<'a>(cells: impl Iterator<Item = &'a CellDiagnostics>) -> Vec<String> {
    let mut by_stage: BTreeMap<FailureStage, usize> = BTreeMap::new();
    let mut examples = Vec::new();
    for d in cells {
        for f in &d.failures {
            *by_stage.entry(f.stage).or_default() += 1;
            if examples.len() < 5 {
                examples.push(format!(
                    "{} / user {}: {}",
                    cell_label(&d.cell),
                    f.user_id,
                    f.message
                ));
            }
        }
    }
    let mut out: Vec<String> = by_stage
        .into_iter()
        .map(|(s, n)| format!("{s:?}: {n} unit(s)"))
        .collect();
    out.extend(examples);
    out
}

pub fn cell_label(cell: &GridCell) -> String {
    format!("{}/{}/{}", cell.condition, cell.strategy, cell.spec)
}

/// NSD for every sensitive ranker, NCSD for every counterfactual ranker and
/// IF on the neutral ranker, each for every attribute and metric. Cells
/// without a neutral reference are skipped.
pub fn compute_disparities(
    cfg: &AuditConfig,
    cells: &[GridCell],
    scores: &[BenefitScore],
    users: &[UserRecord],
) -> Vec<DisparityResult> {
    let e = &cfg.evaluation;
    let policy = &cfg.thresholds;
    let mut by_cell: BTreeMap<&GridCell, Vec<BenefitScore>> = BTreeMap::new();
    for s in scores {
        by_cell.entry(&s.cell).or_default().push(s.clone());
    }
    let mut out = Vec::new();
    for cell in cells.iter().filter(|c| c.spec.is_neutral()) {
        let Some(neutral) = by_cell.get(cell) else {
            log::warn!(
                "no scores for {}; its disparities are skipped",
                cell_label(cell)
            );
            continue;
        };
        let targets: Vec<&GridCell> = cells
            .iter()
            .filter(|c| {
                (c.condition, c.strategy) == (cell.condition, cell.strategy) && !c.spec.is_neutral()
            })
            .collect();
        for &metric in &e.metrics {
            for attribute in Attribute::ALL {
                match intrinsic_fairness(
                    neutral,
                    users,
                    attribute,
                    metric,
                    e.test,
                    policy,
                    e.if_target,
                ) {
                    Ok(r) => out.push(r),
                    Err(err) => log::warn!("IF {}: {err}", cell_label(cell)),
                }
                for target in &targets {
                    let Some(t) = by_cell.get(*target) else {
                        continue;
                    };
                    let r = match target.spec {
                        RankerSpec::Sensitive(_) => {
                            nsd(t, neutral, users, attribute, metric, e.test, policy)
                        }
                        RankerSpec::Counterfactual(_) => {
                            ncsd(t, neutral, users, attribute, metric, e.test, policy)
                        }
                        RankerSpec::Neutral => continue,
                    };
                    match r {
                        Ok(r) => out.push(r),
                        Err(err) => log::warn!("{}: {err}", cell_label(target)),
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| disparity_key(a).cmp(&disparity_key(b)));
    out
}

type DisparityKey<'a> = (
    crate::fairness::Notion,
    Attribute,
    &'a RankerSpec,
    crate::metrics::Metric,
    crate::prompts::IclCondition,
    Strategy,
);

/// Report order: notion, attribute, target, metric, then grid position.
pub fn disparity_key(d: &DisparityResult) -> DisparityKey<'_> {
    (
        d.notion,
        d.attribute,
        &d.target,
        d.metric,
        d.condition,
        d.strategy,
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::audit::config::AuditConfig;
    use crate::fairness::Notion;

    pub(crate) fn synthetic_config(users: usize) -> AuditConfig {
        let text = format!(
            r#"
schema_version = 1
[dataset.synthetic]
users = {users}
catalog_size = 400
min_interactions = 25
max_interactions = 60
train_fraction = 0.8
age_boundary = 35
seed = 3
[cohort]
size = {users}
band = [20, 100]
seed = 5
[grid]
conditions = ["0-shot", "ICL-1"]
strategies = ["rand", "freq"]
[backend]
kind = "synthetic"
max_in_flight = 3
[backend.synthetic]
base_quality = 0.6
seed = 9
biases = [{{ value = "old", beta = 0.5 }}]
"#
        );
        AuditConfig::from_toml(&text, ".").unwrap()
    }

    #[test]
    fn synthetic_run_is_deterministic_and_complete() {
        let cfg = synthetic_config(24);
        let a = run_audit(&cfg).unwrap();
        let b = run_audit(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let m = &a.manifest;
        assert_eq!(m.units, 24 * 2 * 2 * 7);
        assert_eq!(m.failed_units, 0);
        assert_eq!(m.cells.len(), 28);
        assert!(m
            .cells
            .iter()
            .all(|c| c.requests.iter().all(|r| r.request_key.is_some())));
        // per (condition, strategy): metrics x attributes x (IF + 6 targets)
        assert_eq!(a.disparities.len(), 4 * 2 * 2 * 7);
        assert!(a.disparities.iter().any(|d| d.notion == Notion::Ncsd));
        assert_eq!(a.scores.len(), m.units * 2);
    }

    #[test]
    fn failures_over_threshold_abort() {
        let mut cfg = synthetic_config(12);
        // a lexicon word that every neutral prompt contains
        cfg.output.max_failed_fraction = 0.0;
        cfg.grid.lexicon = Some(vec!["the".into()]);
        match run_audit(&cfg) {
            Err(AuditError::FailureThreshold {
                failed,
                total,
                summary,
                ..
            }) => {
                assert!(failed > 0 && failed <= total);
                assert!(
                    summary.iter().any(|s| s.contains("PromptCheck")),
                    "{summary:?}"
                );
            }
            other => panic!(
                "expected threshold failure, got {:?}",
                other.map(|r| r.manifest.failed_units)
            ),
        }
    }
}
