use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{ActivationDelta, PairDelta, RankMark, RankingTable, TraitSummary};
use crate::traits::Trait;

#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Row order; models not listed follow in id order.
    pub model_order: Vec<String>,
    pub traits: Vec<Trait>,
    /// Render means above 1 as `100.00+%` and below 0 as `0.00-%`.
    pub clamp_display: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            model_order: Vec::new(),
            traits: Trait::REPORTED.to_vec(),
            clamp_display: false,
        }
    }
}

impl RenderOptions {
    fn ordered_models<'a>(&'a self, present: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
        let present: BTreeSet<&str> = present.collect();
        let mut out: Vec<&str> = self
            .model_order
            .iter()
            .map(String::as_str)
            .filter(|m| present.contains(m))
            .collect();
        out.extend(present.into_iter().filter(|m| !self.model_order.iter().any(|o| o == m)));
        out
    }
}

const EMPTY: &str = "\u{2014}";

fn percent_cell(mean: Option<f64>, clamp: bool) -> String {
    match mean {
        None => EMPTY.to_string(),
        Some(v) if clamp && v > 1.0 => "100.00+%".to_string(),
        Some(v) if clamp && v < 0.0 => "0.00-%".to_string(),
        Some(v) => format!("{}%", crate::normalize::percent(v)),
    }
}

/// Signed difference in percentage points, e.g. `+16.41`.
pub(crate) fn signed_points(delta: f64) -> String {
    let s = format!("{:+.2}", delta * 100.0);
    if s == "-0.00" {
        "+0.00".to_string()
    } else {
        s
    }
}

fn opt_points(delta: Option<f64>) -> String {
    delta.map_or_else(|| EMPTY.to_string(), signed_points)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per model, one column per trait. With a ranking, the highest
/// mean per trait is bold and the second italic.
pub fn summary_markdown(summaries: &[TraitSummary], ranking: Option<&RankingTable>, opts: &RenderOptions) -> String {
    let mut out = String::from("| Model |");
    for t in &opts.traits {
        let _ = write!(out, " {} |", t.title());
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(opts.traits.len()));
    out.push('\n');
    for model in opts.ordered_models(summaries.iter().map(|s| s.model_id.as_str())) {
        let _ = write!(out, "| {model} |");
        for &t in &opts.traits {
            let mean = summaries
                .iter()
                .find(|s| s.model_id == model && s.trait_ == t && s.category.is_none())
                .and_then(|s| s.mean);
            let cell = percent_cell(mean, opts.clamp_display);
            let cell = match ranking.map_or(RankMark::None, |r| r.mark(t, model)) {
                RankMark::Highest => format!("**{cell}**"),
                RankMark::Second => format!("*{cell}*"),
                RankMark::None => cell,
            };
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(summaries: &[TraitSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_id", "trait", "question_set", "category", "mean", "std", "n", "skipped"])
        .expect("in-memory write");
    for s in summaries {
        w.write_record([
            s.model_id.clone(),
            s.trait_.to_string(),
            s.question_set.as_str().to_string(),
            s.category.map(|c| c.slug()).unwrap_or_default(),
            opt_num(s.mean),
            opt_num(s.std),
            s.n.to_string(),
            s.skipped.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn ranking_markdown(table: &RankingTable) -> String {
    let mut out = String::new();
    for r in &table.per_trait {
        let _ = writeln!(out, "### {}\n\n| Rank | Model | Mean |\n|---:|---|---:|", r.trait_.title());
        for (i, e) in r.entries.iter().enumerate() {
            let tie = if e.tied { " (tie)" } else { "" };
            let _ = writeln!(out, "| {} | {}{} | {} |", i + 1, e.model_id, tie, percent_cell(e.mean, false));
        }
        out.push('\n');
    }
    out
}

pub fn activation_markdown(deltas: &[ActivationDelta], opts: &RenderOptions) -> String {
    let mut out = String::from("| Model | Trait | Standard | Trait-activating | Delta |\n|---|---|---:|---:|---:|\n");
    for model in opts.ordered_models(deltas.iter().map(|d| d.model_id.as_str())) {
        for d in deltas.iter().filter(|d| d.model_id == model) {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                d.model_id,
                d.trait_.title(),
                percent_cell(Some(d.standard_mean), opts.clamp_display),
                percent_cell(Some(d.activating_mean), opts.clamp_display),
                signed_points(d.delta)
            );
        }
    }
    out
}

pub fn activation_csv(deltas: &[ActivationDelta]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_id", "trait", "standard_mean", "activating_mean", "delta", "n_standard", "n_activating"])
        .expect("in-memory write");
    for d in deltas {
        w.write_record([
            d.model_id.clone(),
            d.trait_.to_string(),
            d.standard_mean.to_string(),
            d.activating_mean.to_string(),
            d.delta.to_string(),
            d.n_standard.to_string(),
            d.n_activating.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn pairs_markdown(deltas: &[PairDelta], opts: &RenderOptions) -> String {
    let mut out = String::from("| Base | Variant | Trait | Base mean | Variant mean | Delta |\n|---|---|---|---:|---:|---:|\n");
    for d in deltas.iter().filter(|d| opts.traits.contains(&d.trait_)) {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            d.base,
            d.variant,
            d.trait_.title(),
            percent_cell(d.base_mean, opts.clamp_display),
            percent_cell(d.variant_mean, opts.clamp_display),
            opt_points(d.delta)
        );
    }
    out
}

pub fn pairs_csv(deltas: &[PairDelta]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["base", "variant", "trait", "base_mean", "variant_mean", "delta"])
        .expect("in-memory write");
    for d in deltas {
        w.write_record([
            d.base.clone(),
            d.variant.clone(),
            d.trait_.to_string(),
            opt_num(d.base_mean),
            opt_num(d.variant_mean),
            opt_num(d.delta),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
