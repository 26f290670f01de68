use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use super::vocab::EventVocabulary;
use crate::error::{Error, Result};

/// A (possibly pre-aggregated) clickstream event. Raw log rows have `count = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub student_id: String,
    pub week: usize,
    pub event_type: String,
    pub count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestFormat {
    /// `student_id,timestamp,event_type`
    RawTimestamped,
    /// `student_id,week,event_type,count`
    WeeklyCounts,
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub format: IngestFormat,
    /// Required for raw logs.
    pub course_start: Option<DateTime<Utc>>,
    pub week_length: TimeDelta,
    pub weeks: usize,
}

impl IngestOptions {
    pub fn weekly(weeks: usize) -> Self {
        Self {
            format: IngestFormat::WeeklyCounts,
            course_start: None,
            week_length: TimeDelta::days(7),
            weeks,
        }
    }

    pub fn raw(course_start: DateTime<Utc>, weeks: usize) -> Self {
        Self {
            format: IngestFormat::RawTimestamped,
            course_start: Some(course_start),
            week_length: TimeDelta::days(7),
            weeks,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub records: Vec<EventRecord>,
    pub unknown_types: usize,
    pub beyond_course: usize,
}

/// Accepts RFC 3339, or a naive `YYYY-MM-DD[THH:MM:SS[.f]]` taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

/// Week number (1-based) of `t` under half-open weeks
/// `[start + (k-1)·len, start + k·len)`. `None` before the start.
pub fn week_of(t: DateTime<Utc>, start: DateTime<Utc>, week_length: TimeDelta) -> Option<usize> {
    let elapsed = (t - start).num_milliseconds();
    let len = week_length.num_milliseconds();
    if elapsed < 0 || len <= 0 {
        return None;
    }
    Some((elapsed / len) as usize + 1)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads an event file. Unknown event types are skipped and counted, as are
/// events after week `weeks`; malformed rows abort with their line number.
pub fn ingest_events(
    path: &Path,
    vocabulary: &EventVocabulary,
    options: &IngestOptions,
) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, path, vocabulary, options)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    path: &Path,
    vocabulary: &EventVocabulary,
    options: &IngestOptions,
) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected: &[&str] = match options.format {
        IngestFormat::RawTimestamped => &["student_id", "timestamp", "event_type"],
        IngestFormat::WeeklyCounts => &["student_id", "week", "event_type", "count"],
    };
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`", expected.join(",")),
        ));
    }
    let start = match (options.format, options.course_start) {
        (IngestFormat::RawTimestamped, None) => {
            return Err(Error::invalid("raw event logs need a course start"))
        }
        (_, s) => s,
    };

    let mut report = IngestReport::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != expected.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields", expected.len()),
            ));
        }
        let student_id = row[0].to_string();
        if student_id.is_empty() {
            return Err(parse_err(path, line, "empty student id"));
        }
        let event_type = row[2].to_string();
        let (week, count) = match options.format {
            IngestFormat::RawTimestamped => {
                let t = parse_timestamp(&row[1])
                    .ok_or_else(|| parse_err(path, line, format!("bad timestamp `{}`", &row[1])))?;
                let week = week_of(t, start.unwrap(), options.week_length).ok_or_else(|| {
                    parse_err(
                        path,
                        line,
                        format!("timestamp `{}` precedes course start", &row[1]),
                    )
                })?;
                (week, 1)
            }
            IngestFormat::WeeklyCounts => {
                let week: usize = row[1]
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("bad week `{}`", &row[1])))?;
                if week == 0 {
                    return Err(parse_err(path, line, "weeks are numbered from 1"));
                }
                let count: u64 = row[3]
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("bad count `{}`", &row[3])))?;
                (week, count)
            }
        };
        if vocabulary.index_of(&event_type).is_none() {
            report.unknown_types += 1;
            continue;
        }
        if week > options.weeks {
            report.beyond_course += 1;
            continue;
        }
        report.records.push(EventRecord {
            student_id,
            week,
            event_type,
            count,
        });
    }
    if report.unknown_types > 0 {
        warn!(
            "{}: skipped {} events of unknown type",
            path.display(),
            report.unknown_types
        );
    }
    if report.beyond_course > 0 {
        warn!(
            "{}: dropped {} events after week {}",
            path.display(),
            report.beyond_course,
            options.weeks
        );
    }
    Ok(report)
}

/// Per-student event counts, `weeks x types`, row-major by week.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    weeks: usize,
    types: usize,
    counts: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(weeks: usize, types: usize) -> Self {
        Self {
            weeks,
            types,
            counts: vec![0; weeks * types],
        }
    }

    pub fn from_vec(weeks: usize, types: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != weeks * types {
            return Err(Error::shape(format!(
                "{} counts for {weeks} weeks x {types} types",
                counts.len()
            )));
        }
        Ok(Self {
            weeks,
            types,
            counts,
        })
    }

    pub fn weeks(&self) -> usize {
        self.weeks
    }

    pub fn types(&self) -> usize {
        self.types
    }

    /// Count of type `e` in 1-based week `k`.
    pub fn get(&self, k: usize, e: usize) -> u64 {
        self.counts[(k - 1) * self.types + e]
    }

    pub fn add(&mut self, k: usize, e: usize, n: u64) {
        self.counts[(k - 1) * self.types + e] += n;
    }

    pub fn set(&mut self, k: usize, e: usize, n: u64) {
        self.counts[(k - 1) * self.types + e] = n;
    }

    pub fn week(&self, k: usize) -> &[u64] {
        &self.counts[(k - 1) * self.types..k * self.types]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }
}

/// Student id to count matrix, ordered by id.
pub type StudentCounts = BTreeMap<String, CountMatrix>;

/// Sums events by student, week and type. Students without events do not appear.
pub fn aggregate_weekly(
    events: &[EventRecord],
    vocabulary: &EventVocabulary,
    weeks: usize,
) -> Result<StudentCounts> {
    let mut out = StudentCounts::new();
    for ev in events {
        let e = vocabulary
            .index_of(&ev.event_type)
            .ok_or_else(|| Error::invalid(format!("unknown event type `{}`", ev.event_type)))?;
        if ev.week == 0 || ev.week > weeks {
            return Err(Error::invalid(format!(
                "event week {} outside 1..={weeks}",
                ev.week
            )));
        }
        if ev.count == 0 {
            continue;
        }
        out.entry(ev.student_id.clone())
            .or_insert_with(|| CountMatrix::zeros(weeks, vocabulary.len()))
            .add(ev.week, e, ev.count);
    }
    Ok(out)
}

/// Flattens counts back into weekly-count records (nonzero cells only).
pub fn counts_to_records(counts: &StudentCounts, vocabulary: &EventVocabulary) -> Vec<EventRecord> {
    let mut out = Vec::new();
    for (id, m) in counts {
        for k in 1..=m.weeks() {
            for (e, name) in vocabulary.names().iter().enumerate() {
                let c = m.get(k, e);
                if c > 0 {
                    out.push(EventRecord {
                        student_id: id.clone(),
                        week: k,
                        event_type: name.clone(),
                        count: c,
                    });
                }
            }
        }
    }
    out
}

pub fn write_weekly_counts<W: std::io::Write>(
    out: W,
    counts: &StudentCounts,
    vocabulary: &EventVocabulary,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student_id", "week", "event_type", "count"])?;
    for r in counts_to_records(counts, vocabulary) {
        w.write_record([
            r.student_id,
            r.week.to_string(),
            r.event_type,
            r.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience: ingest and aggregate a weekly-counts file.
pub fn read_weekly_counts(
    path: &Path,
    vocabulary: &EventVocabulary,
    weeks: usize,
) -> Result<(StudentCounts, IngestReport)> {
    let mut report = ingest_events(path, vocabulary, &IngestOptions::weekly(weeks))?;
    let counts = aggregate_weekly(&report.records, vocabulary, weeks)?;
    report.records.clear();
    Ok((counts, report))
}
