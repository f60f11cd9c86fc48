//! Diagnostics computed from serialized step records.
//!
//! Nothing here touches model state, so every table can be rebuilt from the
//! metrics log of a finished run.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VigorError};
use crate::io::write_atomic;
use crate::reward::accurate_sum;

/// One sampled completion as logged by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub tokens: Vec<u32>,
    pub length: usize,
    pub grad_norm: f64,
    pub signal: f64,
    pub reward: f64,
    pub advantage: f64,
    /// 1 = best (smallest `sqrt(T) ||g||`) within the group.
    pub rank_position: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDump {
    pub prompt_index: usize,
    #[serde(default)]
    pub aborted: bool,
    pub entries: Vec<DumpEntry>,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Only present on evaluation steps.
    pub eval_accuracy: Option<f64>,
    /// Verifier accuracy of the step's rollouts (monitoring only).
    pub train_accuracy: f64,
    pub top25_accuracy: f64,
    pub mean_length: f64,
    pub mean_3gram_repetition: f64,
    pub mean_grad_norm: f64,
    pub mean_signal: f64,
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    /// Norm of the update gradient before clipping.
    pub update_grad_norm: f64,
    pub learning_rate: f64,
    pub skipped: bool,
    pub groups: Vec<GroupDump>,
}

impl StepRecord {
    pub fn entries(&self) -> impl Iterator<Item = &DumpEntry> {
        self.groups.iter().flat_map(|g| g.entries.iter())
    }
}

pub fn read_metrics_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_metrics_log(&text)
}

pub fn parse_metrics_log(text: &str) -> Result<Vec<StepRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(VigorError::from))
        .collect()
}

/// `1 - distinct / total` over the n-grams of `tokens`; 0 when shorter than `n`.
pub fn ngram_repetition_rate<T: Eq + Hash>(tokens: &[T], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    if tokens.len() < n {
        return 0.0;
    }
    let grams: Vec<&[T]> = tokens.windows(n).collect();
    let distinct: HashSet<&[T]> = grams.iter().copied().collect();
    1.0 - distinct.len() as f64 / grams.len() as f64
}

/// Fractional (tie-averaged) ranks starting at 1.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation; `None` for mismatched or constant inputs.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() {
        return None;
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub bin: usize,
    pub count: usize,
    pub mean_length: f64,
    pub mean_grad_norm: f64,
    pub mean_corrected: f64,
}

/// Equal-count bins over `(T, ||g||)` samples sorted by length.
pub fn length_bin_table(samples: &[(usize, f64)], num_bins: usize) -> Result<Vec<LengthBin>> {
    if num_bins == 0 {
        return Err(VigorError::Analysis("need at least one bin".into()));
    }
    let distinct: HashSet<usize> = samples.iter().map(|s| s.0).collect();
    if distinct.len() < num_bins {
        return Err(VigorError::Analysis(format!(
            "{} distinct lengths cannot fill {num_bins} bins",
            distinct.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by_key(|s| s.0);
    let (base, extra) = (sorted.len() / num_bins, sorted.len() % num_bins);
    let mut out = Vec::with_capacity(num_bins);
    let mut start = 0;
    for bin in 0..num_bins {
        let size = base + usize::from(bin < extra);
        let chunk = &sorted[start..start + size];
        start += size;
        let n = size as f64;
        out.push(LengthBin {
            bin: bin + 1,
            count: size,
            mean_length: accurate_sum(chunk.iter().map(|s| s.0 as f64)) / n,
            mean_grad_norm: accurate_sum(chunk.iter().map(|s| s.1)) / n,
            mean_corrected: accurate_sum(chunk.iter().map(|s| (s.0 as f64).sqrt() * s.1)) / n,
        });
    }
    Ok(out)
}

/// `(max - min) / mean`.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (max - min) / mean
}

/// Mean correctness per rank position `1..=G`, averaged over groups.
pub fn rank_accuracy_table(groups: &[GroupDump]) -> Vec<(usize, f64)> {
    let g = groups.iter().map(|g| g.entries.len()).max().unwrap_or(0);
    let mut hits = vec![0usize; g];
    let mut counts = vec![0usize; g];
    for group in groups {
        for e in &group.entries {
            if (1..=g).contains(&e.rank_position) {
                counts[e.rank_position - 1] += 1;
                hits[e.rank_position - 1] += usize::from(e.correct);
            }
        }
    }
    (0..g)
        .filter(|&i| counts[i] > 0)
        .map(|i| (i + 1, hits[i] as f64 / counts[i] as f64))
        .collect()
}

/// Mean correctness of the `ceil(fraction * G)` highest-reward completions
/// per group. Ties are broken by sampling order.
pub fn top_fraction_accuracy(groups: &[GroupDump], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(VigorError::Analysis(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for group in groups {
        let k = (fraction * group.entries.len() as f64).ceil() as usize;
        if k == 0 {
            continue;
        }
        let mut order: Vec<&DumpEntry> = group.entries.iter().collect();
        order.sort_by(|a, b| b.reward.total_cmp(&a.reward));
        hits += order[..k].iter().filter(|e| e.correct).count();
        total += k;
    }
    if total == 0 {
        return Err(VigorError::Analysis("no completions to rank".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Serializes rows to CSV with a header and writes them atomically.
pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| VigorError::Format(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| VigorError::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Minimal line chart of `(x, y)` points.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD / 2.0
    );
    let finite: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    if !finite.is_empty() {
        let (x0, x1) = bounds(finite.iter().map(|p| p.0));
        let (y0, y1) = bounds(finite.iter().map(|p| p.1));
        let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 1.5 * PAD);
        let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let path: Vec<String> = finite
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for (v, y) in [(y0, H - PAD), (y1, PAD)] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#,
                PAD - 4.0
            );
        }
        for (v, x) in [(x0, PAD), (x1, W - PAD / 2.0)] {
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{v}</text>"#,
                H - PAD + 14.0
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        H - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
