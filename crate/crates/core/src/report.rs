//! Tables and SVG charts built from metric records and meta reports. Every
//! cell is either traceable to an input record or an explicit gap.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::meta::{MetaReport, MetaSpace};
use crate::metrics::{Category, MetricId, MetricRecord};

/// Written wherever an input is missing.
pub const GAP: &str = "GAP";

/// Method × metric mean oriented scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub metrics: Vec<String>,
    /// `cells[method][metric]`; `None` when no sample produced a score.
    pub cells: Vec<Vec<Option<f64>>>,
}

fn first_seen<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for id in ids {
        if !out.iter().any(|o| o == id) {
            out.push(id.to_string());
        }
    }
    out
}

/// Mean of per-sample oriented scores, where a sample's score is itself the
/// mean over its evaluated classes.
pub fn score_table(records: &[MetricRecord]) -> ScoreTable {
    let methods = first_seen(records.iter().map(|r| r.method_id.as_str()));
    let metrics = first_seen(records.iter().map(|r| r.metric_id.as_str()));
    let cells = methods
        .iter()
        .map(|m| {
            metrics
                .iter()
                .map(|k| crate::metrics::mean_oriented(records, k, m))
                .collect()
        })
        .collect();
    ScoreTable { methods, metrics, cells }
}

impl ScoreTable {
    /// Per-metric min-max over methods; a column of equal values maps to 0.5
    /// and gaps stay gaps.
    pub fn normalized(&self) -> ScoreTable {
        let mut cells = self.cells.clone();
        for k in 0..self.metrics.len() {
            let col: Vec<f64> = self.cells.iter().filter_map(|row| row[k]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for row in &mut cells {
                if let Some(v) = row[k] {
                    row[k] = Some(if hi > lo { (v - lo) / (hi - lo) } else { 0.5 });
                }
            }
        }
        ScoreTable {
            methods: self.methods.clone(),
            metrics: self.metrics.clone(),
            cells,
        }
    }

    /// Per-method mean over the metrics that have a value.
    pub fn row_means(&self) -> Vec<Option<f64>> {
        self.cells
            .iter()
            .map(|row| {
                let v: Vec<f64> = row.iter().flatten().copied().collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }

    pub fn get(&self, method: &str, metric: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == method)?;
        let k = self.metrics.iter().position(|m| m == metric)?;
        self.cells[i][k]
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| method |");
        for k in &self.metrics {
            write!(out, " {k} |").unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.metrics.len()));
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&self.cells) {
            write!(out, "| {m} |").unwrap();
            for v in row {
                write!(out, " {} |", fmt_cell(*v)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for k in &self.metrics {
            write!(out, ",{k}").unwrap();
        }
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&self.cells) {
            out.push_str(m);
            for v in row {
                write!(out, ",{}", v.map(|v| format!("{v:?}")).unwrap_or_else(|| GAP.into())).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| GAP.to_string())
}

fn fmt_mean_std(m: Option<crate::meta::MeanStd>) -> String {
    m.map(|m| format!("{:.3} ± {:.3}", m.mean, m.std)).unwrap_or_else(|| GAP.to_string())
}

/// Category of a metric spec id such as `irof_mean_lerf`.
pub fn category_of(metric_id: &str) -> Option<Category> {
    let base = metric_id.split('_').next()?;
    base.parse::<MetricId>().ok().map(MetricId::category)
}

pub fn category_color(c: Option<Category>) -> &'static str {
    match c {
        Some(Category::Faithfulness) => "#4e79a7",
        Some(Category::Robustness) => "#f28e2b",
        Some(Category::Localization) => "#59a14f",
        Some(Category::Complexity) => "#e15759",
        Some(Category::Randomization) => "#b07aa1",
        None => "#9d9d9d",
    }
}

/// One bar of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: Option<f64>,
    pub error: Option<f64>,
    pub category: Option<Category>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static bar chart on a `[0,1]` axis. Missing values get a `GAP` label
/// instead of a bar. A category legend is drawn when `legend` is set.
pub fn bar_chart_svg(title: &str, bars: &[Bar], legend: bool) -> String {
    let (left, top, plot_h, bar_w, gap) = (50.0, 40.0, 240.0, 36.0, 14.0);
    let plot_w = bars.len().max(1) as f64 * (bar_w + gap) + gap;
    let legend_w = if legend { 150.0 } else { 0.0 };
    let width = left + plot_w + 20.0 + legend_w;
    let height = top + plot_h + 90.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title)).unwrap();
    let base = top + plot_h;
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let y = base - v * plot_h;
        writeln!(
            s,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{base}" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, left + plot_w).unwrap();
    for (i, bar) in bars.iter().enumerate() {
        let x = left + gap + i as f64 * (bar_w + gap);
        let cx = x + bar_w / 2.0;
        match bar.value {
            Some(v) => {
                let v = v.clamp(0.0, 1.0);
                let h = v * plot_h;
                writeln!(
                    s,
                    r#"<rect class="bar" x="{x}" y="{}" width="{bar_w}" height="{h}" fill="{}"><title>{}: {v:.3}</title></rect>"#,
                    base - h,
                    category_color(bar.category),
                    escape(&bar.label)
                )
                .unwrap();
                if let Some(e) = bar.error.filter(|e| *e > 0.0) {
                    let (y1, y2) = (base - (v - e).max(0.0) * plot_h, base - (v + e).min(1.0) * plot_h);
                    writeln!(s, r#"<line x1="{cx}" y1="{y1}" x2="{cx}" y2="{y2}" stroke="black"/>"#).unwrap();
                }
                writeln!(s, r#"<text x="{cx}" y="{}" text-anchor="middle">{v:.2}</text>"#, base - h - 4.0).unwrap();
            }
            None => {
                writeln!(s, r#"<text class="gap" x="{cx}" y="{}" text-anchor="middle">{GAP}</text>"#, base - 4.0).unwrap();
            }
        }
        writeln!(
            s,
            r#"<text x="{cx}" y="{}" text-anchor="end" transform="rotate(-45 {cx} {})">{}</text>"#,
            base + 14.0,
            base + 14.0,
            escape(&bar.label)
        )
        .unwrap();
    }
    if legend {
        let lx = left + plot_w + 20.0;
        for (i, c) in Category::ALL.into_iter().enumerate() {
            let y = top + i as f64 * 18.0;
            writeln!(
                s,
                r#"<rect class="legend" x="{lx}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                category_color(Some(c)),
                lx + 18.0,
                y + 10.0,
                c.as_str()
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Bars of mean combined MC per metric, in report order.
pub fn mc_bars(meta: &MetaReport) -> Vec<Bar> {
    meta.metrics
        .iter()
        .map(|id| {
            let summary = meta.summary_for(id, MetaSpace::Combined);
            let mc = summary.and_then(|s| s.mc);
            Bar {
                label: id.clone(),
                value: mc.map(|m| m.mean),
                error: mc.map(|m| m.std),
                category: summary.and_then(|s| s.category).or_else(|| category_of(id)),
            }
        })
        .collect()
}

pub fn mc_chart_svg(meta: &MetaReport) -> String {
    bar_chart_svg("Mean MC score per metric", &mc_bars(meta), true)
}

/// Highest mean MC per category; `None` for categories with no scored metric.
pub fn category_winners(meta: &MetaReport) -> BTreeMap<Category, Option<(String, f64)>> {
    let mut out: BTreeMap<Category, Option<(String, f64)>> = Category::ALL.into_iter().map(|c| (c, None)).collect();
    for bar in mc_bars(meta) {
        let (Some(c), Some(v)) = (bar.category, bar.value) else { continue };
        let slot = out.get_mut(&c).expect("every category present");
        if slot.as_ref().is_none_or(|(_, best)| v > *best) {
            *slot = Some((bar.label, v));
        }
    }
    out
}

/// Component table for every metric and space.
pub fn meta_table_markdown(meta: &MetaReport) -> String {
    let mut out = String::from("| metric | space | IAC_NR | IAC_AR | IEC_NR | IEC_AR | MC |\n|---|---|---:|---:|---:|---:|---:|\n");
    for s in &meta.summary {
        let space = match s.space {
            MetaSpace::Input => "input",
            MetaSpace::Model => "model",
            MetaSpace::Combined => "combined",
        };
        writeln!(
            out,
            "| {} | {space} | {} | {} | {} | {} | {} |",
            s.metric_id,
            fmt_mean_std(s.iac_nr),
            fmt_mean_std(s.iac_ar),
            fmt_mean_std(s.iec_nr),
            fmt_mean_std(s.iec_ar),
            fmt_mean_std(s.mc)
        )
        .unwrap();
    }
    out
}

/// Combined MC of the IROF baseline/ordering variants present in the report.
pub fn irof_ablation_markdown(meta: &MetaReport) -> String {
    let mut out = String::from("| baseline | ordering | MC |\n|---|---|---:|\n");
    let mut any = false;
    for id in meta.metrics.iter().filter(|m| m.starts_with("irof_")) {
        let mut parts = id.splitn(3, '_').skip(1);
        let (Some(baseline), Some(order)) = (parts.next(), parts.next()) else { continue };
        any = true;
        let mc = meta.summary_for(id, MetaSpace::Combined).and_then(|s| s.mc);
        writeln!(out, "| {baseline} | {order} | {} |", fmt_mean_std(mc)).unwrap();
    }
    if !any {
        writeln!(out, "| {GAP} | {GAP} | {GAP} |").unwrap();
    }
    out
}

/// Inputs of a consolidated report; any of them may be missing.
pub struct ReportInputs<'a> {
    pub records: Option<&'a [MetricRecord]>,
    pub meta: Option<&'a MetaReport>,
    /// Free-form `key: value` lines echoed at the end (configuration, versions).
    pub echo: Vec<(String, String)>,
}

/// Files of a consolidated report, keyed by file name.
pub fn build_report(inputs: &ReportInputs) -> BTreeMap<String, String> {
    let mut files = BTreeMap::new();
    let mut md = String::from("# Attribution evaluation report\n\n## Method scores\n\n");
    match inputs.records {
        Some(records) => {
            let table = score_table(records);
            let norm = table.normalized();
            md.push_str("Mean oriented scores (higher is better).\n\n");
            md.push_str(&table.to_markdown());
            md.push_str("\nNormalized per metric over methods.\n\n");
            md.push_str(&norm.to_markdown());
            md.push_str("\nNormalized average per method.\n\n| method | average |\n|---|---:|\n");
            for (m, v) in norm.methods.iter().zip(norm.row_means()) {
                writeln!(md, "| {m} | {} |", fmt_cell(v)).unwrap();
            }
            let bars: Vec<Bar> = norm
                .methods
                .iter()
                .zip(norm.row_means())
                .map(|(m, v)| Bar {
                    label: m.clone(),
                    value: v,
                    error: None,
                    category: None,
                })
                .collect();
            files.insert("scores.csv".into(), table.to_csv());
            files.insert("scores_normalized.csv".into(), norm.to_csv());
            files.insert("methods.svg".into(), bar_chart_svg("Normalized average of all metrics", &bars, false));
        }
        None => {
            writeln!(md, "{GAP}: no metric records were given.").unwrap();
        }
    }
    md.push_str("\n## Metric reliability\n\n");
    match inputs.meta {
        Some(meta) => {
            md.push_str(&meta_table_markdown(meta));
            md.push_str("\nMost reliable metric per category (combined MC).\n\n| category | metric | MC |\n|---|---|---:|\n");
            for (c, w) in category_winners(meta) {
                match w {
                    Some((id, v)) => writeln!(md, "| {} | {id} | {v:.3} |", c.as_str()).unwrap(),
                    None => writeln!(md, "| {} | {GAP} | {GAP} |", c.as_str()).unwrap(),
                }
            }
            md.push_str("\n### IROF baseline and ordering\n\n");
            md.push_str(&irof_ablation_markdown(meta));
            md.push_str("\n### Coverage\n\n| iteration | space | mode | skipped | samples |\n|---:|---|---|---:|---:|\n");
            for it in &meta.iterations {
                for c in &it.coverage {
                    writeln!(
                        md,
                        "| {} | {:?} | {:?} | {} | {} |",
                        it.iteration, c.space, c.mode, c.skipped, c.samples
                    )
                    .unwrap();
                }
            }
            files.insert("mc.svg".into(), mc_chart_svg(meta));
        }
        None => {
            writeln!(md, "{GAP}: no meta-evaluation was given.").unwrap();
        }
    }
    if !inputs.echo.is_empty() {
        md.push_str("\n## Configuration\n\n");
        for (k, v) in &inputs.echo {
            writeln!(md, "- {k}: {v}").unwrap();
        }
    }
    files.insert("report.md".into(), md);
    files
}
