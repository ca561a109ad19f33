//! Report generation over stored trial records: parallel-coordinate plots,
//! importance ranking, learning-curve diagnosis, out-of-memory tables, and
//! the cross-model best-results table.
//!
//! Every function here is a pure map from records to text, with fixed
//! iteration orders and fixed number formatting, so identical inputs always
//! produce byte-identical reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hyperspace::{ParamValue, SearchSpace};
use crate::model::ModelVariant;
use crate::train::{EpochRecord, TrialRecord, TrialStatus};

/// One experiment's records plus the labels reports group by.
#[derive(Clone, Debug)]
pub struct ExperimentEntry {
    pub variant: ModelVariant,
    pub dataset: String,
    pub records: Vec<TrialRecord>,
}

// ---------------------------------------------------------------------------
// learning-curve diagnosis

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveLabel {
    Underfit,
    Overfit,
    Converged,
    Inconclusive,
}

impl CurveLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveLabel::Underfit => "underfit",
            CurveLabel::Overfit => "overfit",
            CurveLabel::Converged => "converged",
            CurveLabel::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for CurveLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which rules fired, for audit alongside the label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CurveEvidence {
    /// 1-based epoch of the first minimum validation loss (0 when empty).
    pub min_val_epoch: usize,
    pub overfit_rule: bool,
    pub underfit_rule: bool,
    pub converged_rule: bool,
    /// Set when fewer than two epochs made diagnosis impossible.
    pub too_few_epochs: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurveDiagnosis {
    pub label: CurveLabel,
    pub evidence: CurveEvidence,
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// Classify a learning curve. Rules apply in order — overfit, underfit,
/// converged — and the first match wins:
///
/// * overfit: the validation minimum falls before the last epoch, the final
///   validation loss is at least 5% above that minimum, and training loss
///   keeps falling (non-increasing) after the minimum.
/// * underfit: the final validation loss is more than 5% above the final
///   training loss while both series are non-increasing overall.
/// * converged: final validation and training losses agree within 5%, and
///   the final validation loss sits within 1% of the lowest validation loss
///   over the last three epochs (the curve has flattened).
pub fn diagnose_curve(epochs: &[EpochRecord]) -> CurveDiagnosis {
    let mut ev = CurveEvidence::default();
    if epochs.len() < 2 {
        ev.too_few_epochs = true;
        ev.min_val_epoch = epochs.first().map(|e| e.epoch).unwrap_or(0);
        return CurveDiagnosis { label: CurveLabel::Inconclusive, evidence: ev };
    }
    let train: Vec<f64> = epochs.iter().map(|e| e.train_loss).collect();
    let val: Vec<f64> = epochs.iter().map(|e| e.val_loss).collect();
    let n = val.len();
    let min_idx = val
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .unwrap();
    ev.min_val_epoch = epochs[min_idx].epoch;
    let min_val = val[min_idx];
    let (final_val, final_train) = (val[n - 1], train[n - 1]);

    ev.overfit_rule = min_idx < n - 1
        && final_val >= 1.05 * min_val
        && non_increasing(&train[min_idx..]);
    if ev.overfit_rule {
        return CurveDiagnosis { label: CurveLabel::Overfit, evidence: ev };
    }
    ev.underfit_rule =
        final_val > 1.05 * final_train && non_increasing(&train) && non_increasing(&val);
    if ev.underfit_rule {
        return CurveDiagnosis { label: CurveLabel::Underfit, evidence: ev };
    }
    let tail = &val[n.saturating_sub(3)..];
    let tail_min = tail.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    ev.converged_rule =
        (final_val - final_train).abs() <= 0.05 * final_train && final_val <= 1.01 * tail_min;
    if ev.converged_rule {
        return CurveDiagnosis { label: CurveLabel::Converged, evidence: ev };
    }
    CurveDiagnosis { label: CurveLabel::Inconclusive, evidence: ev }
}

// ---------------------------------------------------------------------------
// importance ranking

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceRanking {
    /// (parameter, normalized score), descending; ties keep the canonical
    /// parameter order.
    pub ranking: Vec<(String, f64)>,
    /// All observed losses identical: no variance to attribute.
    pub degenerate: bool,
}

/// Score each tuned parameter by one-way explained variance of the
/// validation loss across its observed values, then normalize the scores to
/// sum to one. Parameters observed at a single value score zero. Grouping
/// ignores ordinal magnitudes entirely, so any strictly increasing
/// relabeling of a ladder leaves the ranking unchanged.
pub fn importance_ranking(records: &[TrialRecord]) -> Result<ImportanceRanking> {
    let completed: Vec<&TrialRecord> = records.iter().filter(|r| r.is_completed()).collect();
    if completed.len() < 2 {
        return Err(Error::Analysis(format!(
            "importance needs at least 2 completed trials, found {}",
            completed.len()
        )));
    }
    let names: Vec<String> = completed[0].params.0.keys().cloned().collect();
    let losses: Vec<f64> = completed
        .iter()
        .map(|r| r.val_mse.ok_or_else(|| Error::Analysis("completed trial lacks val_mse".into())))
        .collect::<Result<_>>()?;
    let grand = losses.iter().sum::<f64>() / losses.len() as f64;
    let ss_total: f64 = losses.iter().map(|y| (y - grand) * (y - grand)).sum();
    if ss_total == 0.0 {
        return Ok(ImportanceRanking {
            ranking: names.into_iter().map(|n| (n, 0.0)).collect(),
            degenerate: true,
        });
    }
    let mut raw: Vec<(String, f64)> = Vec::with_capacity(names.len());
    for name in &names {
        // group losses by this parameter's value (values compare exactly)
        let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (r, y) in completed.iter().zip(&losses) {
            let v = r.params.get(name).ok_or_else(|| {
                Error::Analysis(format!("trial {} lacks parameter `{name}`", r.trial_id))
            })?;
            let e = groups.entry(v.to_string()).or_insert((0.0, 0));
            e.0 += y;
            e.1 += 1;
        }
        let score = if groups.len() < 2 {
            0.0
        } else {
            let ss_between: f64 = groups
                .values()
                .map(|(sum, n)| {
                    let mean = sum / *n as f64;
                    *n as f64 * (mean - grand) * (mean - grand)
                })
                .sum();
            ss_between / ss_total
        };
        raw.push((name.clone(), score));
    }
    let total: f64 = raw.iter().map(|(_, s)| s).sum();
    if total > 0.0 {
        for (_, s) in &mut raw {
            *s /= total;
        }
    }
    // descending by score; equal scores keep canonical order (stable sort)
    raw.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Ok(ImportanceRanking { ranking: raw, degenerate: false })
}

pub fn importance_markdown(ranking: &ImportanceRanking) -> String {
    let mut out = String::from("# Hyperparameter importance\n\n");
    out.push_str("Explained variance of validation MSE per parameter (one-way grouping).\n\n");
    if ranking.degenerate {
        out.push_str("All observed losses are identical; no variance to attribute.\n\n");
    }
    out.push_str("| rank | parameter | score |\n|---|---|---|\n");
    for (i, (name, score)) in ranking.ranking.iter().enumerate() {
        let _ = writeln!(out, "| {} | {} | {:.4} |", i + 1, name, score);
    }
    out
}

// ---------------------------------------------------------------------------
// parallel coordinates

const SVG_AXIS_GAP: f64 = 92.0;
const SVG_MARGIN_L: f64 = 56.0;
const SVG_MARGIN_R: f64 = 40.0;
const SVG_MARGIN_T: f64 = 36.0;
const SVG_MARGIN_B: f64 = 64.0;
const SVG_PLOT_H: f64 = 380.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Map each completed trial onto one polyline across one ordinal axis per
/// tuned parameter plus a linear validation-loss axis. Returns an error when
/// no completed records exist.
pub fn parallel_coordinates(records: &[TrialRecord], space: &SearchSpace) -> Result<String> {
    let completed: Vec<&TrialRecord> = records.iter().filter(|r| r.is_completed()).collect();
    render_parallel(&completed, space, "validation loss by configuration")
}

/// The outlier-free companion plot: keeps the `floor(0.95·n)` (at least one)
/// lowest-loss trials.
pub fn parallel_coordinates_trimmed(
    records: &[TrialRecord],
    space: &SearchSpace,
) -> Result<String> {
    let mut completed: Vec<&TrialRecord> = records.iter().filter(|r| r.is_completed()).collect();
    completed.sort_by(|a, b| {
        a.val_mse
            .partial_cmp(&b.val_mse)
            .unwrap()
            .then(a.trial_id.cmp(&b.trial_id))
    });
    let keep = ((completed.len() as f64 * 0.95).floor() as usize).max(1);
    completed.truncate(keep.min(completed.len()));
    completed.sort_by_key(|r| r.trial_id);
    render_parallel(
        &completed,
        space,
        "validation loss by configuration (5% highest-loss trials trimmed)",
    )
}

fn render_parallel(completed: &[&TrialRecord], space: &SearchSpace, title: &str) -> Result<String> {
    if completed.is_empty() {
        return Err(Error::Analysis("no completed trials to plot".into()));
    }
    let n_axes = space.domains().len() + 1;
    let width = SVG_MARGIN_L + SVG_AXIS_GAP * (n_axes - 1) as f64 + SVG_MARGIN_R;
    let height = SVG_MARGIN_T + SVG_PLOT_H + SVG_MARGIN_B;
    let axis_x = |i: usize| SVG_MARGIN_L + SVG_AXIS_GAP * i as f64;
    let y_bottom = SVG_MARGIN_T + SVG_PLOT_H;
    // ordinal 0 sits at the bottom; a single-value axis centers
    let ordinal_y = |ord: usize, len: usize| {
        if len <= 1 {
            SVG_MARGIN_T + SVG_PLOT_H / 2.0
        } else {
            y_bottom - SVG_PLOT_H * ord as f64 / (len - 1) as f64
        }
    };
    let losses: Vec<f64> = completed.iter().map(|r| r.val_mse.unwrap()).collect();
    let (lo, hi) = losses
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let loss_y = |v: f64| {
        if hi > lo {
            y_bottom - SVG_PLOT_H * (v - lo) / (hi - lo)
        } else {
            SVG_MARGIN_T + SVG_PLOT_H / 2.0
        }
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="monospace">"#
    );
    let _ = writeln!(svg, "  <title>{}</title>", esc(title));
    let _ = writeln!(
        svg,
        r#"  <text x="{:.2}" y="20" font-size="12">{}</text>"#,
        SVG_MARGIN_L,
        esc(title)
    );

    let _ = writeln!(svg, r##"  <g class="axes" stroke="#888" stroke-width="1">"##);
    for (i, dom) in space.domains().iter().enumerate() {
        let x = axis_x(i);
        let _ = writeln!(
            svg,
            r#"    <line x1="{x:.2}" y1="{SVG_MARGIN_T:.2}" x2="{x:.2}" y2="{y_bottom:.2}"/>"#
        );
        let _ = writeln!(
            svg,
            r##"    <text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="end" stroke="none" fill="#000" transform="rotate(-35 {x:.2} {:.2})">{}</text>"##,
            y_bottom + 28.0,
            y_bottom + 28.0,
            esc(dom.name())
        );
        for (ord, v) in dom.slice().iter().enumerate() {
            let y = ordinal_y(ord, dom.len());
            let _ = writeln!(
                svg,
                r##"    <text x="{:.2}" y="{:.2}" font-size="8" text-anchor="end" stroke="none" fill="#444">{}</text>"##,
                x - 3.0,
                y + 2.5,
                esc(&v.to_string())
            );
        }
    }
    let xl = axis_x(n_axes - 1);
    let _ = writeln!(
        svg,
        r#"    <line x1="{xl:.2}" y1="{SVG_MARGIN_T:.2}" x2="{xl:.2}" y2="{y_bottom:.2}"/>"#
    );
    let _ = writeln!(
        svg,
        r##"    <text x="{xl:.2}" y="{:.2}" font-size="10" text-anchor="end" stroke="none" fill="#000" transform="rotate(-35 {xl:.2} {:.2})">val_mse</text>"##,
        y_bottom + 28.0,
        y_bottom + 28.0
    );
    for (v, frac) in [(lo, 0.0), ((lo + hi) / 2.0, 0.5), (hi, 1.0)] {
        let y = y_bottom - SVG_PLOT_H * frac;
        let _ = writeln!(
            svg,
            r##"    <text x="{:.2}" y="{:.2}" font-size="8" text-anchor="start" stroke="none" fill="#444">{v:.4}</text>"##,
            xl + 3.0,
            y + 2.5
        );
    }
    let _ = writeln!(svg, "  </g>");

    let _ = writeln!(
        svg,
        r##"  <g class="trials" fill="none" stroke="#3366aa" stroke-width="1" stroke-opacity="0.55">"##
    );
    for r in completed {
        let mut points = String::new();
        for (i, dom) in space.domains().iter().enumerate() {
            let v = r.params.get(dom.name()).ok_or_else(|| {
                Error::Analysis(format!("trial {} lacks parameter `{}`", r.trial_id, dom.name()))
            })?;
            let ord = dom.ordinal_of(v).ok_or_else(|| {
                Error::Analysis(format!(
                    "trial {} value {v} is outside the `{}` domain",
                    r.trial_id,
                    dom.name()
                ))
            })?;
            let _ = write!(points, "{:.2},{:.2} ", axis_x(i), ordinal_y(ord, dom.len()));
        }
        let _ = write!(points, "{:.2},{:.2}", xl, loss_y(r.val_mse.unwrap()));
        let _ = writeln!(svg, r#"    <polyline data-trial-id="{}" points="{points}"/>"#, r.trial_id);
    }
    let _ = writeln!(svg, "  </g>");
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

// ---------------------------------------------------------------------------
// out-of-memory tables

fn whole_percent(numerator: u64, denominator: u64) -> u64 {
    if denominator == 0 {
        0
    } else {
        (200 * numerator + denominator) / (2 * denominator)
    }
}

/// Markdown rate table: rows are model variants, columns datasets, each
/// cell the share of dispatched trials that failed the memory gate,
/// rounded to a whole percent.
pub fn oom_table(entries: &[ExperimentEntry]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for e in entries {
        if !datasets.contains(&e.dataset.as_str()) {
            datasets.push(&e.dataset);
        }
    }
    let mut out = String::from("| model |");
    for d in &datasets {
        let _ = write!(out, " {d} |");
    }
    out.push('\n');
    out.push_str("|---|");
    out.push_str(&"---|".repeat(datasets.len()));
    out.push('\n');
    for variant in ModelVariant::ALL {
        if !entries.iter().any(|e| e.variant == variant) {
            continue;
        }
        let _ = write!(out, "| {variant} |");
        for d in &datasets {
            let mut oom = 0u64;
            let mut total = 0u64;
            for e in entries.iter().filter(|e| e.variant == variant && e.dataset == *d) {
                total += e.records.len() as u64;
                oom += e.records.iter().filter(|r| r.status == TrialStatus::FailedOom).count()
                    as u64;
            }
            if total == 0 {
                out.push_str(" — |");
            } else {
                let _ = write!(out, " {}% |", whole_percent(oom, total));
            }
        }
        out.push('\n');
    }
    out
}

/// One row of the failure-boundary table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryRow {
    pub batch_size: i64,
    /// Smallest max(d_model, d_ff) observed among failures at this batch
    /// size — failures start at or above it.
    pub max_dim: i64,
    /// Smallest min(d_model, d_ff) observed among the same failures.
    pub min_dim: i64,
}

/// Group memory-gate failures by batch size and report the observed lower
/// envelope of the failing width pair. Records without the three relevant
/// parameters are skipped.
pub fn oom_boundary(records: &[TrialRecord]) -> Vec<BoundaryRow> {
    let mut groups: BTreeMap<i64, (i64, i64)> = BTreeMap::new();
    for r in records {
        if r.status != TrialStatus::FailedOom {
            continue;
        }
        let get = |name: &str| match r.params.get(name) {
            Some(ParamValue::Int(i)) => Some(i),
            _ => None,
        };
        let (Some(bs), Some(dm), Some(dff)) = (get("batch_size"), get("d_model"), get("d_ff"))
        else {
            continue;
        };
        let (hi, lo) = (dm.max(dff), dm.min(dff));
        groups
            .entry(bs)
            .and_modify(|(mx, mn)| {
                *mx = (*mx).min(hi);
                *mn = (*mn).min(lo);
            })
            .or_insert((hi, lo));
    }
    groups
        .into_iter()
        .map(|(batch_size, (max_dim, min_dim))| BoundaryRow { batch_size, max_dim, min_dim })
        .collect()
}

pub fn oom_boundary_markdown(rows: &[BoundaryRow]) -> String {
    let mut out =
        String::from("| batch_size | max(d_model, d_ff) | min(d_model, d_ff) |\n|---|---|---|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | ≥{} | ≥{} |", r.batch_size, r.max_dim, r.min_dim);
    }
    out
}

/// Full oom.md body: the rate table plus one boundary section per
/// experiment that recorded gate failures.
pub fn oom_markdown(entries: &[ExperimentEntry]) -> String {
    let mut out = String::from("# Out-of-memory summary\n\n## Failure rate\n\n");
    out.push_str(&oom_table(entries));
    for e in entries {
        let rows = oom_boundary(&e.records);
        if rows.is_empty() {
            continue;
        }
        let _ = write!(out, "\n## Failure boundary: {} on {}\n\n", e.variant, e.dataset);
        out.push_str(&oom_boundary_markdown(&rows));
    }
    out
}

// ---------------------------------------------------------------------------
// best-results table

fn best_completed(records: &[TrialRecord]) -> Option<&TrialRecord> {
    records
        .iter()
        .filter(|r| r.is_completed())
        .min_by(|a, b| {
            a.val_mse
                .partial_cmp(&b.val_mse)
                .unwrap()
                .then(a.trial_id.cmp(&b.trial_id))
        })
}

/// Per dataset, each variant's best trial (by validation MSE): its test
/// MSE/MAE and modeled wall seconds. Within a dataset the lowest test MSE
/// is bold and the second lowest underlined; ties go to the earlier row.
pub fn best_results_table(entries: &[ExperimentEntry]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for e in entries {
        if !datasets.contains(&e.dataset.as_str()) {
            datasets.push(&e.dataset);
        }
    }
    let variants: Vec<ModelVariant> = ModelVariant::ALL
        .into_iter()
        .filter(|v| entries.iter().any(|e| e.variant == *v))
        .collect();

    // cell per (variant, dataset): (test_mse, test_mae, wall_s)
    let cell = |v: ModelVariant, d: &str| -> Option<(f64, f64, f64)> {
        let merged: Vec<TrialRecord> = entries
            .iter()
            .filter(|e| e.variant == v && e.dataset == d)
            .flat_map(|e| e.records.iter().cloned())
            .collect();
        best_completed(&merged).map(|r| {
            (
                r.test_mse.unwrap(),
                r.test_mae.unwrap(),
                r.wall_ms as f64 / 1000.0,
            )
        })
    };

    let mut out = String::from("| model |");
    for d in &datasets {
        let _ = write!(out, " {d} MSE | {d} MAE | {d} time (s) |");
    }
    out.push('\n');
    out.push_str("|---|");
    out.push_str(&"---|".repeat(3 * datasets.len()));
    out.push('\n');

    // per dataset: rank rows by displayed MSE for bold/underline
    let mut marks: BTreeMap<(usize, usize), u8> = BTreeMap::new(); // (ds, row) → 1 best, 2 second
    for (di, d) in datasets.iter().enumerate() {
        let mut ranked: Vec<(usize, f64)> = variants
            .iter()
            .enumerate()
            .filter_map(|(ri, v)| cell(*v, d).map(|(mse, _, _)| (ri, mse)))
            .collect();
        ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        if let Some((ri, _)) = ranked.first() {
            marks.insert((di, *ri), 1);
        }
        if let Some((ri, _)) = ranked.get(1) {
            marks.insert((di, *ri), 2);
        }
    }

    for (ri, v) in variants.iter().enumerate() {
        let _ = write!(out, "| {v} |");
        for (di, d) in datasets.iter().enumerate() {
            match cell(*v, d) {
                None => out.push_str(" — | — | — |"),
                Some((mse, mae, secs)) => {
                    let mse_text = match marks.get(&(di, ri)) {
                        Some(1) => format!("**{mse:.4}**"),
                        Some(2) => format!("<u>{mse:.4}</u>"),
                        _ => format!("{mse:.4}"),
                    };
                    let _ = write!(out, " {mse_text} | {mae:.4} | {secs:.4} |");
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn best_results_markdown(entries: &[ExperimentEntry]) -> String {
    let mut out = String::from(
        "# Best results\n\nBest trial per model and dataset, selected by validation MSE; \
         cells report test-split metrics. Bold marks the lowest MSE per dataset, \
         underline the second lowest.\n\n",
    );
    out.push_str(&best_results_table(entries));
    out
}

// ---------------------------------------------------------------------------
// curves report

/// Markdown table diagnosing every trial's learning curve.
pub fn curves_markdown(records: &[TrialRecord]) -> String {
    let mut out = String::from("# Learning-curve diagnosis\n\n");
    out.push_str("| trial | status | epochs | label | min-val epoch |\n|---|---|---|---|---|\n");
    for r in records {
        if r.is_completed() {
            let d = diagnose_curve(&r.epochs);
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                r.trial_id,
                r.status,
                r.epochs.len(),
                d.label,
                d.evidence.min_val_epoch
            );
        } else {
            let _ = writeln!(
                out,
                "| {} | {} | {} | — | — |",
                r.trial_id,
                r.status,
                r.epochs.len()
            );
        }
    }
    out
}
