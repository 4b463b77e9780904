//! Summary statistics over a models × sources × targets grid of one metric,
//! and deterministic table rendering.
//!
//! Ties share credit: every model that attains a target's minimum gets a
//! win, and tied sources receive the mean of the ranks they span.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::{EvalRecord, Metric, RecordStatus};

/// Placeholder for cells without a value.
pub const MISSING: &str = "–";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("rank needs at least 2 source datasets, found {0}")]
    TooFewSources(usize),
    #[error("invalid cell value {value} for {model}/{source_name}/{target}")]
    BadValue { model: String, source_name: String, target: String, value: f64 },
    #[error("table parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsMatrix {
    pub metric: Metric,
    pub models: Vec<String>,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// Indexed `[model][source][target]`, flattened.
    values: Vec<Option<f64>>,
}

impl ResultsMatrix {
    /// An all-missing grid over the sorted, deduplicated axis labels.
    pub fn new(metric: Metric, models: &[String], sources: &[String], targets: &[String]) -> Self {
        let sorted = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>();
        let (models, sources, targets) = (sorted(models), sorted(sources), sorted(targets));
        let n = models.len() * sources.len() * targets.len();
        Self { metric, models, sources, targets, values: vec![None; n] }
    }

    fn idx(&self, m: usize, s: usize, t: usize) -> usize {
        (m * self.sources.len() + s) * self.targets.len() + t
    }

    pub fn get(&self, m: usize, s: usize, t: usize) -> Option<f64> {
        self.values[self.idx(m, s, t)]
    }

    pub fn set(&mut self, m: usize, s: usize, t: usize, v: Option<f64>) -> Result<(), ReportError> {
        if let Some(x) = v {
            if !(x.is_finite() && x >= 0.0) {
                return Err(ReportError::BadValue {
                    model: self.models[m].clone(),
                    source_name: self.sources[s].clone(),
                    target: self.targets[t].clone(),
                    value: x,
                });
            }
        }
        let i = self.idx(m, s, t);
        self.values[i] = v;
        Ok(())
    }

    /// Collects `metric` records with status ok (optionally for a single
    /// horizon). Several records for one cell, e.g. different horizons,
    /// are averaged.
    pub fn from_records(records: &[EvalRecord], metric: Metric, horizon: Option<usize>) -> Result<Self, ReportError> {
        let chosen: Vec<&EvalRecord> = records.iter().filter(|r| r.metric == metric && horizon.is_none_or(|h| r.horizon == h)).collect();
        let axis = |f: fn(&EvalRecord) -> &String| chosen.iter().map(|r| f(r).clone()).collect::<Vec<_>>();
        let mut m = Self::new(metric, &axis(|r| &r.model), &axis(|r| &r.source), &axis(|r| &r.target));
        let mut sums = vec![(0.0, 0usize); m.values.len()];
        for r in &chosen {
            let (Some(v), RecordStatus::Ok) = (r.value, r.status) else { continue };
            let mi = m.models.binary_search(&r.model).expect("axis built from records");
            let si = m.sources.binary_search(&r.source).expect("axis built from records");
            let ti = m.targets.binary_search(&r.target).expect("axis built from records");
            let i = m.idx(mi, si, ti);
            sums[i].0 += v;
            sums[i].1 += 1;
        }
        for mi in 0..m.models.len() {
            for si in 0..m.sources.len() {
                for ti in 0..m.targets.len() {
                    let (sum, n) = sums[m.idx(mi, si, ti)];
                    m.set(mi, si, ti, (n > 0).then(|| sum / n as f64))?;
                }
            }
        }
        Ok(m)
    }

    /// Multiplies every present value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { values: self.values.iter().map(|v| v.map(|x| x * factor)).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub source: String,
    pub model: String,
    pub wins: usize,
    pub targets: usize,
    pub rate: f64,
}

/// Within each source, the share of targets on which each model attains
/// the minimum. Sources with no values at all are skipped.
pub fn win_rate(m: &ResultsMatrix) -> Vec<WinRate> {
    let mut out = Vec::new();
    for (si, source) in m.sources.iter().enumerate() {
        let mut wins = vec![0usize; m.models.len()];
        let mut n_targets = 0;
        for ti in 0..m.targets.len() {
            let cells: Vec<(usize, f64)> = (0..m.models.len()).filter_map(|mi| m.get(mi, si, ti).map(|v| (mi, v))).collect();
            let Some(best) = cells.iter().map(|c| c.1).reduce(f64::min) else { continue };
            n_targets += 1;
            for (mi, v) in cells {
                if v == best {
                    wins[mi] += 1;
                }
            }
        }
        if n_targets == 0 {
            log::info!("source {source} has no results; skipped in win rate");
            continue;
        }
        for (mi, model) in m.models.iter().enumerate() {
            out.push(WinRate { source: source.clone(), model: model.clone(), wins: wins[mi], targets: n_targets, rate: wins[mi] as f64 / n_targets as f64 });
        }
    }
    out
}

/// 1-based ranks of `values` (smaller is better); ties get the mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRank {
    pub source: String,
    pub mean_rank: f64,
    /// `(target, model)` groups the source took part in.
    pub groups: usize,
}

/// Ranks sources within every `(target, model)` group and averages.
pub fn avg_rank(m: &ResultsMatrix) -> Result<Vec<SourceRank>, ReportError> {
    if m.sources.len() < 2 {
        return Err(ReportError::TooFewSources(m.sources.len()));
    }
    let mut sum = vec![0.0; m.sources.len()];
    let mut count = vec![0usize; m.sources.len()];
    for ti in 0..m.targets.len() {
        for mi in 0..m.models.len() {
            let present: Vec<(usize, f64)> = (0..m.sources.len()).filter_map(|si| m.get(mi, si, ti).map(|v| (si, v))).collect();
            let ranks = midranks(&present.iter().map(|p| p.1).collect::<Vec<_>>());
            for ((si, _), r) in present.iter().zip(ranks) {
                sum[*si] += r;
                count[*si] += 1;
            }
        }
    }
    Ok(m.sources
        .iter()
        .enumerate()
        .filter(|(si, _)| count[*si] > 0)
        .map(|(si, s)| SourceRank { source: s.clone(), mean_rank: sum[si] / count[si] as f64, groups: count[si] })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeMetric {
    pub source: String,
    pub model: String,
    /// Mean of `(v - best) / best`; infinite when some target's best is 0
    /// and this cell is not.
    pub value: f64,
    pub targets: usize,
}

/// Relative deviation of `v` from `best`.
pub fn relative_deviation(v: f64, best: f64) -> f64 {
    if best == 0.0 {
        if v == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (v - best) / best
    }
}

pub fn avg_relative_metric(m: &ResultsMatrix) -> Vec<RelativeMetric> {
    let best: Vec<Option<f64>> = (0..m.targets.len())
        .map(|ti| {
            (0..m.models.len()).flat_map(|mi| (0..m.sources.len()).filter_map(move |si| m.get(mi, si, ti))).reduce(f64::min)
        })
        .collect();
    let mut out = Vec::new();
    for (si, source) in m.sources.iter().enumerate() {
        for (mi, model) in m.models.iter().enumerate() {
            let devs: Vec<f64> = (0..m.targets.len())
                .filter_map(|ti| Some(relative_deviation(m.get(mi, si, ti)?, best[ti]?)))
                .collect();
            if devs.is_empty() {
                continue;
            }
            out.push(RelativeMetric { source: source.clone(), model: model.clone(), value: devs.iter().sum::<f64>() / devs.len() as f64, targets: devs.len() });
        }
    }
    out
}

/// A rectangular table of optional numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    fn pivot<T>(items: &[T], row: impl Fn(&T) -> &str, col: impl Fn(&T) -> &str, val: impl Fn(&T) -> f64, row_header: &str) -> Self {
        let rows: BTreeSet<&str> = items.iter().map(&row).collect();
        let cols: BTreeSet<&str> = items.iter().map(&col).collect();
        let columns: Vec<String> = cols.iter().map(|s| s.to_string()).collect();
        let rows = rows
            .iter()
            .map(|r| {
                let cells = cols.iter().map(|c| items.iter().find(|it| row(it) == *r && col(it) == *c).map(&val)).collect();
                (r.to_string(), cells)
            })
            .collect();
        Self { row_header: row_header.into(), columns, rows }
    }

    /// Sources down, models across.
    pub fn from_win_rates(w: &[WinRate]) -> Self {
        Self::pivot(w, |x| &x.source, |x| &x.model, |x| x.rate, "source")
    }

    pub fn from_ranks(r: &[SourceRank]) -> Self {
        Self {
            row_header: "source".into(),
            columns: vec!["rank".into()],
            rows: r.iter().map(|x| (x.source.clone(), vec![Some(x.mean_rank)])).collect(),
        }
    }

    pub fn from_relative(r: &[RelativeMetric]) -> Self {
        Self::pivot(r, |x| &x.source, |x| &x.model, |x| x.value, "source")
    }

    /// `model/source` rows against targets.
    pub fn from_matrix(m: &ResultsMatrix) -> Self {
        let mut rows = Vec::new();
        for (mi, model) in m.models.iter().enumerate() {
            for (si, source) in m.sources.iter().enumerate() {
                rows.push((format!("{model}/{source}"), (0..m.targets.len()).map(|ti| m.get(mi, si, ti)).collect()));
            }
        }
        Self { row_header: "model/source".into(), columns: m.targets.clone(), rows }
    }
}

fn fmt_cell(v: Option<f64>, decimals: Option<usize>) -> String {
    match (v, decimals) {
        (None, _) => MISSING.to_string(),
        (Some(x), _) if x.is_infinite() => "inf".to_string(),
        (Some(x), Some(d)) => format!("{x:.d$}"),
        (Some(x), None) => x.to_string(),
    }
}

pub fn render_markdown(t: &Table, decimals: usize) -> String {
    let mut s = String::new();
    let header: Vec<&str> = std::iter::once(t.row_header.as_str()).chain(t.columns.iter().map(String::as_str)).collect();
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for (name, cells) in &t.rows {
        let body: Vec<String> = cells.iter().map(|c| fmt_cell(*c, Some(decimals))).collect();
        let _ = writeln!(s, "| {name} | {} |", body.join(" | "));
    }
    s
}

/// Full-precision CSV; values parse back to the same bits.
pub fn render_csv(t: &Table) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once(t.row_header.as_str()).chain(t.columns.iter().map(String::as_str)).collect();
    w.write_record(&header).expect("in-memory write");
    for (name, cells) in &t.rows {
        let row: Vec<String> = std::iter::once(name.clone()).chain(cells.iter().map(|c| fmt_cell(*c, None))).collect();
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn parse_csv(text: &str) -> Result<Table, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut recs = rdr.records();
    let header = recs
        .next()
        .ok_or(ReportError::Parse { line: 1, detail: "empty table".into() })?
        .map_err(|e| ReportError::Parse { line: 1, detail: e.to_string() })?;
    let mut it = header.iter();
    let row_header = it.next().unwrap_or_default().to_string();
    let columns: Vec<String> = it.map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in recs.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| ReportError::Parse { line, detail: e.to_string() })?;
        let mut cells = rec.iter();
        let name = cells.next().unwrap_or_default().to_string();
        let values = cells
            .map(|c| {
                if c == MISSING {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| ReportError::Parse { line, detail: format!("bad number '{c}'") })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((name, values));
    }
    Ok(Table { row_header, columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_model_always_wins() {
        let mut m = ResultsMatrix::new(Metric::Mae, &names(&["a"]), &names(&["s"]), &names(&["t1", "t2"]));
        m.set(0, 0, 0, Some(0.3)).unwrap();
        m.set(0, 0, 1, Some(0.1)).unwrap();
        assert_eq!(win_rate(&m)[0].rate, 1.0);
    }

    #[test]
    fn ties_share_wins_and_ranks() {
        let mut m = ResultsMatrix::new(Metric::Mae, &names(&["a", "b"]), &names(&["s"]), &names(&["t1", "t2"]));
        m.set(0, 0, 0, Some(1.0)).unwrap();
        m.set(1, 0, 0, Some(1.0)).unwrap();
        m.set(0, 0, 1, Some(2.0)).unwrap();
        m.set(1, 0, 1, Some(3.0)).unwrap();
        let w = win_rate(&m);
        assert_eq!((w[0].rate, w[1].rate), (1.0, 0.5));
        assert_eq!(midranks(&[2.0, 2.0, 2.0]), vec![2.0; 3]);
        assert_eq!(midranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn relative_deviation_cases() {
        assert_eq!(relative_deviation(2.0, 1.0), 1.0);
        assert_eq!(relative_deviation(0.0, 0.0), 0.0);
        assert!(relative_deviation(1.0, 0.0).is_infinite());
    }

    #[test]
    fn empty_table_renders_header_only() {
        let t = Table::from_win_rates(&[]);
        assert_eq!(render_markdown(&t, 2), "| source |\n|---|\n");
        assert_eq!(parse_csv(&render_csv(&t)).unwrap(), t);
    }

    #[test]
    fn csv_round_trip_keeps_missing_and_infinite() {
        let t = Table { row_header: "source".into(), columns: names(&["a", "b"]), rows: vec![("s".into(), vec![Some(0.1 + 0.2), None]), ("u".into(), vec![Some(f64::INFINITY), Some(0.0)])] };
        assert_eq!(parse_csv(&render_csv(&t)).unwrap(), t);
        assert!(render_markdown(&t, 2).contains("| s | 0.30 | – |"));
    }
}
