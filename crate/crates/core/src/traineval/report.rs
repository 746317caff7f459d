use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::eval::EvalReport;
use super::metrics::{aggregate_mean_std, format_mean_std};
use crate::error::{Error, Result};

/// Runs sharing a configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub variant: String,
    pub clusters: usize,
    pub n_targets: usize,
}

impl GroupKey {
    pub fn of(r: &EvalReport) -> Self {
        Self {
            variant: r.variant.clone(),
            clusters: r.clusters,
            n_targets: r.n_targets,
        }
    }

    pub fn label(&self) -> String {
        format!("{} K={} targets={}", self.variant, self.clusters, self.n_targets)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub key: GroupKey,
    pub runs: usize,
    /// Percent; `None` for the spread of a single run.
    pub top1_mean: f64,
    pub top1_std: Option<f64>,
    pub top5_mean: f64,
    pub top5_std: Option<f64>,
    /// Element-wise mean of the runs' smoothed curves, cut to the shortest.
    pub smoothed: Vec<f64>,
}

fn mean_spread(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.len() == 1 {
        return Ok((values[0], None));
    }
    let (m, s) = aggregate_mean_std(values)?;
    Ok((m, Some(s)))
}

fn cell(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format_mean_std(mean, s),
        None => format!("{mean:.2} ± n/a"),
    }
}

impl GroupSummary {
    pub fn top1_cell(&self) -> String {
        cell(self.top1_mean, self.top1_std)
    }

    pub fn top5_cell(&self) -> String {
        cell(self.top5_mean, self.top5_std)
    }
}

/// Groups reports by configuration. Without `allow_groups` all reports must
/// share one configuration, otherwise [`Error::ConfigMismatch`].
pub fn summarize(reports: &[EvalReport], allow_groups: bool) -> Result<Vec<GroupSummary>> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to summarise".into()));
    }
    let mut groups: BTreeMap<GroupKey, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(GroupKey::of(r)).or_default().push(r);
    }
    if groups.len() > 1 && !allow_groups {
        let names: Vec<String> = groups.keys().map(GroupKey::label).collect();
        return Err(Error::ConfigMismatch(format!(
            "reports mix configurations ({}); pass the group option to compare them",
            names.join("; ")
        )));
    }
    groups
        .into_iter()
        .map(|(key, runs)| {
            let pct = |f: fn(&EvalReport) -> f64| runs.iter().map(|r| 100.0 * f(r)).collect::<Vec<_>>();
            let (top1_mean, top1_std) = mean_spread(&pct(|r| r.top1))?;
            let (top5_mean, top5_std) = mean_spread(&pct(|r| r.top5))?;
            let len = runs.iter().map(|r| r.smoothed_series.len()).min().unwrap_or(0);
            let smoothed = (0..len)
                .map(|i| runs.iter().map(|r| r.smoothed_series[i]).sum::<f64>() / runs.len() as f64)
                .collect();
            Ok(GroupSummary {
                key,
                runs: runs.len(),
                top1_mean,
                top1_std,
                top5_mean,
                top5_std,
                smoothed,
            })
        })
        .collect()
}

/// Markdown table of accuracies in percent, one row per group.
pub fn render_table(groups: &[GroupSummary]) -> String {
    let mut out = String::from("| variant | K | targets | runs | top-1 (%) | top-5 (%) |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for g in groups {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            g.key.variant,
            g.key.clusters,
            g.key.n_targets,
            g.runs,
            g.top1_cell(),
            g.top5_cell()
        );
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot of accuracy curves (fractions, drawn in percent) against step.
pub fn render_svg(series: &[(String, Vec<f64>)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let longest = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0).max(2);
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (longest - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<polyline points="{pad},{pad} {pad},{b} {r},{b}" fill="none" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            pad - 6.0,
            y(v) + 4.0,
            (v * 100.0) as u32
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy (%)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (name, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.iter().enumerate().map(|(j, &v)| format!("{:.1},{:.1}", x(j), y(v))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = pad + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            w - pad - 150.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One smoothed curve per group, labelled by configuration.
pub fn group_series(groups: &[GroupSummary]) -> Vec<(String, Vec<f64>)> {
    groups.iter().map(|g| (g.key.label(), g.smoothed.clone())).collect()
}
