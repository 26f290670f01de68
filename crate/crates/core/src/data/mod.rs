//! Clickstream ingestion, weekly aggregation, normalization and dropout labels.

mod cohort;
mod events;
mod vocab;

use std::collections::BTreeMap;
use std::path::Path;

pub use cohort::{
    dropout_week_of, label_dropout, normalize, normalize_with, type_maxima, Cohort, DropoutLabels,
    ObservedCohort, StudentSeries, WeekSlice,
};
pub use events::{
    aggregate_weekly, counts_to_records, ingest_events, ingest_reader, parse_timestamp,
    read_weekly_counts, week_of, write_weekly_counts, CountMatrix, EventRecord, IngestFormat,
    IngestOptions, IngestReport, StudentCounts,
};
pub use vocab::{EventVocabulary, DEFAULT_EVENT_TYPES};

use crate::error::{Error, Result};

/// Reads `student_id,attribute,value` rows for one attribute. With
/// `attribute = None` the file must hold a single attribute.
pub fn read_demographics(path: &Path, attribute: Option<&str>) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = BTreeMap::new();
    let mut seen_attr: Option<String> = None;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "expected student_id,attribute,value".into(),
            });
        }
        let attr = &row[1];
        match attribute {
            Some(a) if a != attr => continue,
            Some(_) => {}
            None => match &seen_attr {
                Some(s) if s != attr => {
                    return Err(Error::invalid(format!(
                        "{} holds several attributes; pick one",
                        path.display()
                    )))
                }
                Some(_) => {}
                None => seen_attr = Some(attr.to_string()),
            },
        }
        out.insert(row[0].to_string(), row[2].to_string());
    }
    Ok(out)
}

pub fn write_demographics<W: std::io::Write>(
    out: W,
    attribute: &str,
    values: &BTreeMap<String, String>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student_id", "attribute", "value"])?;
    for (s, v) in values {
        w.write_record([s.as_str(), attribute, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `student_id,dropout_week`.
pub fn write_dropout_weeks<W: std::io::Write>(out: W, rows: &[(String, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student_id", "dropout_week"])?;
    for (s, d) in rows {
        w.write_record([s.clone(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dropout_weeks(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let week = row
            .get(1)
            .and_then(|w| w.parse().ok())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "expected student_id,dropout_week".into(),
            })?;
        out.insert(row[0].to_string(), week);
    }
    Ok(out)
}
