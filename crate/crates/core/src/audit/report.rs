//! Rendering an [`AuditResult`] as markdown, CSV, JSON or a colored console table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::run::{disparity_key, AuditResult};
use crate::corpus::Attribute;
use crate::fairness::{DisparityResult, Notion, SeverityLevel};
use crate::metrics::Metric;
use crate::profiles::Strategy;
use crate::prompts::{IclCondition, RankerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
    Console { color: bool },
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" | "structured" => Ok(ReportFormat::Json),
            "console" | "text" => Ok(ReportFormat::Console { color: true }),
            other => Err(format!(
                "unknown report format '{other}' (markdown, csv, json, console)"
            )),
        }
    }
}

pub const TABLE_HEADER: &str = "| Condition | ΔB₁ | ΔB₂ | δ (p-value) | Status |";

/// Four decimals, the precision of every benefit and disparity in the reports.
/// Ties in the binary value round to even; negative zero prints as zero.
pub fn fmt_value(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

pub fn fmt_p(p: f64) -> String {
    if p < 0.0005 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

pub fn render_report(result: &AuditResult, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(result),
        ReportFormat::Csv => render_csv(result),
        ReportFormat::Json => render_json(result),
        ReportFormat::Console { color } => render_console(result, color),
    }
}

pub fn render_json(result: &AuditResult) -> String {
    let mut s = serde_json::to_string_pretty(result).expect("result serializes");
    s.push('\n');
    s
}

type BlockKey = (Notion, Attribute, RankerSpec, Metric);

/// Disparities grouped into report blocks, each keyed by grid position.
fn blocks(
    result: &AuditResult,
) -> BTreeMap<BlockKey, BTreeMap<(IclCondition, Strategy), &DisparityResult>> {
    let mut out: BTreeMap<BlockKey, BTreeMap<_, _>> = BTreeMap::new();
    let mut sorted: Vec<&DisparityResult> = result.disparities.iter().collect();
    sorted.sort_by(|a, b| disparity_key(a).cmp(&disparity_key(b)));
    for d in sorted {
        out.entry((d.notion, d.attribute, d.target.clone(), d.metric))
            .or_default()
            .insert((d.condition, d.strategy), d);
    }
    out
}

/// (condition, strategy) pairs in grid order.
fn grid_rows(result: &AuditResult) -> Vec<(IclCondition, Strategy)> {
    let g = &result.manifest.config.grid;
    let mut rows = Vec::new();
    for c in &g.conditions {
        for s in &g.strategies {
            if !rows.contains(&(*c, *s)) {
                rows.push((*c, *s));
            }
        }
    }
    rows
}

fn severity_css(level: SeverityLevel) -> String {
    format!(
        "<span class=\"sev-{}\">Level{} {}</span>",
        level.color(),
        level.number(),
        level.label()
    )
}

struct Footnotes(Vec<String>);

impl Footnotes {
    fn add(&mut self, text: String) -> String {
        let n = match self.0.iter().position(|t| *t == text) {
            Some(i) => i + 1,
            None => {
                self.0.push(text);
                self.0.len()
            }
        };
        format!("[^{n}]")
    }
}

fn failed_units(
    result: &AuditResult,
    condition: IclCondition,
    strategy: Strategy,
    spec: &RankerSpec,
) -> usize {
    result
        .manifest
        .cells
        .iter()
        .filter(|c| c.cell.condition == condition && c.cell.strategy == strategy)
        .filter(|c| c.cell.spec == *spec || c.cell.spec.is_neutral())
        .map(|c| c.failures.len())
        .sum()
}

fn block_title(key: &BlockKey) -> String {
    let (notion, attribute, target, metric) = key;
    format!("{notion} / {attribute}, target {target}, metric {metric}")
}

fn block_note(notion: Notion, attribute: Attribute) -> String {
    let [a, b] = attribute.values();
    match notion {
        Notion::If => format!(
            "ΔB₁ and ΔB₂ are the neutral ranker's mean benefit for {} and {} measured from the target; δ = ΔB₁ − ΔB₂.",
            a.label(),
            b.label()
        ),
        _ => format!("ΔB₁ = {}, ΔB₂ = {}; δ = ΔB₁ − ΔB₂.", a.label(), b.label()),
    }
}

pub fn render_markdown(result: &AuditResult) -> String {
    let m = &result.manifest;
    let cfg = &m.config;
    let mut out = String::new();
    let mut notes = Footnotes(Vec::new());
    let _ = writeln!(out, "# Fairness audit report\n");
    let _ = writeln!(out, "- Config digest: `{}`", m.config_digest);
    let _ = writeln!(
        out,
        "- Backend: {} (model `{}`), prompt template `{}`",
        m.backend, m.model, m.template_version
    );
    let _ = writeln!(
        out,
        "- Test: {}, {} p-values, alpha {}",
        cfg.evaluation.test.tag(),
        m.p_value_sidedness,
        cfg.thresholds.alpha
    );
    let _ = writeln!(
        out,
        "- Severity: |δ| < {} safe, < {} attention needed, otherwise likely issue; p < alpha is a significant issue",
        cfg.thresholds.small_bound, cfg.thresholds.large_bound
    );
    let _ = writeln!(
        out,
        "- Cohort: {} users; {} units, {} failed ({:.1}%)",
        m.split.users.len(),
        m.units,
        m.failed_units,
        100.0 * m.failed_fraction
    );
    let rows = grid_rows(result);
    for (key, cells) in blocks(result) {
        let (notion, attribute, target, _) = &key;
        let _ = writeln!(out, "\n## {}\n", block_title(&key));
        let _ = writeln!(out, "{}\n", block_note(*notion, *attribute));
        let _ = writeln!(out, "{TABLE_HEADER}");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for (condition, strategy) in &rows {
            let label = format!("{condition}/{strategy}");
            let Some(d) = cells.get(&(*condition, *strategy)) else {
                let failed = failed_units(result, *condition, *strategy, target);
                let n = notes.add(format!("{label}, {target}: no scores ({failed} failed unit(s) in the cell or its neutral reference)"));
                let _ = writeln!(out, "| {label} | n/a{n} | n/a{n} | n/a{n} | n/a |");
                continue;
            };
            let group = |i: usize, notes: &mut Footnotes| match d.groups[i].mean {
                Some(v) => fmt_value(v),
                None => format!(
                    "n/a{}",
                    notes.add(format!(
                        "no scored users with {}",
                        d.groups[i].value.label()
                    ))
                ),
            };
            let g1 = group(0, &mut notes);
            let g2 = group(1, &mut notes);
            let delta = match d.delta {
                None => "n/a".to_string(),
                Some(v) => {
                    let p = match d.p_value() {
                        Some(p) => format!("p={}", fmt_p(p)),
                        None => format!(
                            "p=n/a{}",
                            notes.add(format!(
                                "a group has fewer users than the test needs (n₁={}, n₂={}); severity from |δ| only",
                                d.groups[0].n, d.groups[1].n
                            ))
                        ),
                    };
                    let strong = d
                        .level
                        .is_some_and(|l| l >= SeverityLevel::Level3LikelyIssue);
                    if strong {
                        format!("**{}** ({p})", fmt_value(v))
                    } else {
                        format!("{} ({p})", fmt_value(v))
                    }
                }
            };
            let mut status = d.level.map_or("n/a".to_string(), severity_css);
            if d.excluded_users > 0 {
                status.push_str(&notes.add(format!(
                    "{} user(s) scored on one side only were excluded",
                    d.excluded_users
                )));
            }
            let _ = writeln!(out, "| {label} | {g1} | {g2} | {delta} | {status} |");
        }
    }
    if result.disparities.is_empty() {
        let _ = writeln!(out, "\nNo disparities could be computed.");
    }
    if !notes.0.is_empty() {
        let _ = writeln!(out);
        for (i, t) in notes.0.iter().enumerate() {
            let _ = writeln!(out, "[^{}]: {t}", i + 1);
        }
    }
    out
}

pub const CSV_COLUMNS: [&str; 18] = [
    "notion",
    "attribute",
    "target",
    "metric",
    "condition",
    "strategy",
    "group1",
    "n1",
    "delta_b1",
    "group2",
    "n2",
    "delta_b2",
    "delta",
    "p_value",
    "test",
    "level",
    "p_missing",
    "excluded_users",
];

/// One row per disparity; numbers printed exactly as in the markdown report.
pub fn render_csv(result: &AuditResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    let opt = |x: Option<f64>, f: fn(f64) -> String| x.map(f).unwrap_or_default();
    for d in blocks(result).values().flat_map(|b| b.values()) {
        w.write_record([
            d.notion.tag().to_string(),
            d.attribute.tag().to_string(),
            d.target.to_string(),
            d.metric.tag().to_string(),
            d.condition.tag().to_string(),
            d.strategy.tag().to_string(),
            d.groups[0].value.token().to_string(),
            d.groups[0].n.to_string(),
            opt(d.groups[0].mean, fmt_value),
            d.groups[1].value.token().to_string(),
            d.groups[1].n.to_string(),
            opt(d.groups[1].mean, fmt_value),
            opt(d.delta, fmt_value),
            opt(d.p_value(), fmt_p),
            d.test
                .as_ref()
                .map(|t| t.kind.tag().to_string())
                .unwrap_or_default(),
            d.level
                .map(|l| format!("Level{}", l.number()))
                .unwrap_or_default(),
            d.p_missing.to_string(),
            d.excluded_users.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn ansi(level: SeverityLevel) -> &'static str {
    match level {
        SeverityLevel::Level1Safe => "\x1b[32m",
        SeverityLevel::Level2AttentionNeeded => "\x1b[33m",
        SeverityLevel::Level3LikelyIssue => "\x1b[38;5;208m",
        SeverityLevel::Level4SignificantIssue => "\x1b[1;31m",
    }
}

pub fn render_console(result: &AuditResult, color: bool) -> String {
    let mut out = String::new();
    for (key, cells) in blocks(result) {
        let _ = writeln!(out, "{}", block_title(&key));
        let _ = writeln!(
            out,
            "  {:<16} {:>9} {:>9} {:>20}  status",
            "condition", "dB1", "dB2", "delta (p)"
        );
        for ((c, s), d) in &cells {
            let num = |x: Option<f64>| x.map_or("n/a".to_string(), fmt_value);
            let p = d.p_value().map_or("n/a".to_string(), fmt_p);
            let delta = format!("{} (p={p})", num(d.delta));
            let status = match d.level {
                Some(l) if color => format!("{}{}\x1b[0m", ansi(l), l),
                Some(l) => l.to_string(),
                None => "n/a".into(),
            };
            let _ = writeln!(
                out,
                "  {:<16} {:>9} {:>9} {:>20}  {status}",
                format!("{c}/{s}"),
                num(d.groups[0].mean),
                num(d.groups[1].mean),
                delta
            );
        }
        let _ = writeln!(out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_formatting() {
        assert_eq!(fmt_value(0.0116), "0.0116");
        assert_eq!(fmt_value(-0.019), "-0.0190");
        assert_eq!(fmt_value(-0.00001), "0.0000");
        assert_eq!(fmt_value(0.1181), "0.1181");
        assert_eq!(fmt_p(0.73), "0.730");
        assert_eq!(fmt_p(0.0001), "<0.001");
    }

    #[test]
    fn footnotes_deduplicate() {
        let mut n = Footnotes(Vec::new());
        assert_eq!(n.add("a".into()), "[^1]");
        assert_eq!(n.add("b".into()), "[^2]");
        assert_eq!(n.add("a".into()), "[^1]");
    }

    #[test]
    fn formats_parse() {
        assert_eq!(
            "md".parse::<ReportFormat>().unwrap(),
            ReportFormat::Markdown
        );
        assert_eq!(
            "structured".parse::<ReportFormat>().unwrap(),
            ReportFormat::Json
        );
        assert!("pdf".parse::<ReportFormat>().is_err());
    }
}
