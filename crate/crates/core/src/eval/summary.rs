use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};

/// One evaluated (source, target, week, method, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub source: String,
    pub target: String,
    pub week: usize,
    pub method: String,
    pub seed: u64,
    pub auc: f64,
    pub pad: f64,
    /// Target over source student count at the prediction week.
    pub size_ratio: f64,
}

pub const RESULTS_HEADER: [&str; 8] = [
    "source",
    "target",
    "week",
    "method",
    "seed",
    "auc",
    "pad",
    "size_ratio",
];

/// Writes the results table, preceded by `#` comment lines.
pub fn write_results<W: Write>(
    mut out: W,
    comments: &[String],
    results: &[TransferResult],
) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        w.write_record([
            r.source.clone(),
            r.target.clone(),
            r.week.to_string(),
            r.method.clone(),
            r.seed.to_string(),
            format!("{}", r.auc),
            format!("{}", r.pad),
            format!("{}", r.size_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results table; returns the `#` comment lines and the rows.
pub fn read_results<R: BufRead>(input: R) -> Result<(Vec<String>, Vec<TransferResult>)> {
    let mut comments = Vec::new();
    let mut body = String::new();
    for line in input.lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(c) => comments.push(c.strip_prefix(' ').unwrap_or(c).to_string()),
            None => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::invalid(format!(
            "unexpected results header {header:?}"
        )));
    }
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<TransferResult>, _>>()?;
    Ok((comments, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, std, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekRow {
    pub method: String,
    pub week: usize,
    #[serde(flatten)]
    pub stat: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    #[serde(flatten)]
    pub stat: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub source: String,
    pub target: String,
    pub method: String,
    #[serde(flatten)]
    pub stat: Stat,
}

/// One point of the PAD / size-ratio scatter comparing passive and active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub source: String,
    pub target: String,
    pub week: usize,
    pub seed: u64,
    pub pad: f64,
    pub size_ratio: f64,
    pub winner: String,
    /// Winner's AUC (mean of both on a tie) over no-transfer's, when known.
    pub auc_ratio_to_no_transfer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_method: Vec<MethodRow>,
    pub per_week: Vec<WeekRow>,
    pub per_pair: Vec<PairRow>,
    pub scatter: Vec<ScatterRow>,
    /// Cells whose predictor was a constant fallback (in-situ at week 2).
    pub fallback_cells: usize,
}

/// `None` when the AUCs differ by less than 1% of their average.
pub fn winner(a: f64, b: f64) -> Option<bool> {
    if (a - b).abs() < 0.01 * (a + b) / 2.0 {
        None
    } else {
        Some(a > b)
    }
}

pub fn summarize(results: &[TransferResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::invalid("no results to summarize"));
    }
    let mut by_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut by_week: BTreeMap<(&str, usize), Vec<f64>> = BTreeMap::new();
    let mut by_pair: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    let mut cells: BTreeMap<(&str, &str, usize, u64), BTreeMap<&str, &TransferResult>> =
        BTreeMap::new();
    for r in results {
        by_method.entry(&r.method).or_default().push(r.auc);
        by_week.entry((&r.method, r.week)).or_default().push(r.auc);
        by_pair
            .entry((&r.source, &r.target, &r.method))
            .or_default()
            .push(r.auc);
        cells
            .entry((&r.source, &r.target, r.week, r.seed))
            .or_default()
            .insert(&r.method, r);
    }
    let scatter = cells
        .iter()
        .filter_map(|(&(source, target, week, seed), m)| {
            let (p, a) = (m.get("passive")?, m.get("active")?);
            let (name, best) = match winner(p.auc, a.auc) {
                None => ("tie", (p.auc + a.auc) / 2.0),
                Some(true) => ("passive", p.auc),
                Some(false) => ("active", a.auc),
            };
            Some(ScatterRow {
                source: source.to_string(),
                target: target.to_string(),
                week,
                seed,
                pad: p.pad,
                size_ratio: p.size_ratio,
                winner: name.to_string(),
                auc_ratio_to_no_transfer: m.get("no-transfer").map(|n| best / n.auc),
            })
        })
        .collect();
    Ok(Summary {
        per_method: by_method
            .into_iter()
            .map(|(m, v)| MethodRow {
                method: m.to_string(),
                stat: Stat::of(&v),
            })
            .collect(),
        per_week: by_week
            .into_iter()
            .map(|((m, w), v)| WeekRow {
                method: m.to_string(),
                week: w,
                stat: Stat::of(&v),
            })
            .collect(),
        per_pair: by_pair
            .into_iter()
            .map(|((s, t, m), v)| PairRow {
                source: s.to_string(),
                target: t.to_string(),
                method: m.to_string(),
                stat: Stat::of(&v),
            })
            .collect(),
        scatter,
        fallback_cells: results
            .iter()
            .filter(|r| r.method == "in-situ" && r.week == 2)
            .count(),
    })
}

impl Summary {
    pub fn method_mean(&self, method: &str) -> Option<f64> {
        self.per_method
            .iter()
            .find(|r| r.method == method)
            .map(|r| r.stat.mean)
    }

    /// Rows `method,week,mean,std,n`.
    pub fn write_week_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "week", "mean", "std", "n"])?;
        for r in &self.per_week {
            w.write_record([
                r.method.clone(),
                r.week.to_string(),
                format!("{}", r.stat.mean),
                format!("{}", r.stat.std),
                r.stat.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows `source,target,week,seed,pad,size_ratio,winner,auc_ratio_to_no_transfer`.
    pub fn write_scatter_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "source",
            "target",
            "week",
            "seed",
            "pad",
            "size_ratio",
            "winner",
            "auc_ratio_to_no_transfer",
        ])?;
        for r in &self.scatter {
            w.write_record([
                r.source.clone(),
                r.target.clone(),
                r.week.to_string(),
                r.seed.to_string(),
                format!("{}", r.pad),
                format!("{}", r.size_ratio),
                r.winner.clone(),
                r.auc_ratio_to_no_transfer
                    .map_or(String::new(), |v| format!("{v}")),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rows `cohort,week,dropout_percent` for weeks 2..=T.
pub fn write_dropout_table<W: Write>(out: W, cohorts: &[&Cohort]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cohort", "week", "dropout_percent"])?;
    for c in cohorts {
        for (k, pct) in c.dropout_percentages() {
            w.write_record([c.id(), k.to_string(), format!("{pct}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `cohort,week,event_type,mean_count`.
pub fn write_frequency_table<W: Write>(out: W, cohorts: &[&Cohort]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cohort", "week", "event_type", "mean_count"])?;
    for c in cohorts {
        for (k, row) in c.event_frequencies().iter().enumerate() {
            for (e, v) in row.iter().enumerate() {
                w.write_record([
                    c.id(),
                    (k + 1).to_string(),
                    c.vocabulary().names()[e].clone(),
                    format!("{v}"),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
