use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::events::{CountMatrix, StudentCounts};
use super::vocab::EventVocabulary;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Normalized weekly event frequencies of one student, `weeks x types`,
/// every entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentSeries {
    pub student_id: String,
    weeks: usize,
    types: usize,
    values: Vec<f64>,
}

impl StudentSeries {
    pub fn weeks(&self) -> usize {
        self.weeks
    }

    pub fn types(&self) -> usize {
        self.types
    }

    /// Feature vector of 1-based week `k`.
    pub fn week(&self, k: usize) -> &[f64] {
        &self.values[(k - 1) * self.types..k * self.types]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `y_k` for k = 1..=T: true once the student has dropped out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutLabels {
    /// In `2..=T+1`; `T+1` means the student never dropped out.
    pub dropout_week: usize,
    y: Vec<bool>,
}

impl DropoutLabels {
    pub fn from_dropout_week(dropout_week: usize, weeks: usize) -> Self {
        let dropout_week = dropout_week.clamp(2, weeks + 1);
        let y = (1..=weeks).map(|k| k >= dropout_week).collect();
        Self { dropout_week, y }
    }

    /// `y_k` for 1-based `k`.
    pub fn at(&self, k: usize) -> bool {
        self.y[k - 1]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.y
    }
}

/// Per-type maxima over all students and weeks.
pub fn type_maxima(counts: &StudentCounts, types: usize) -> Vec<u64> {
    let mut max = vec![0u64; types];
    for m in counts.values() {
        for k in 1..=m.weeks() {
            for (e, &c) in m.week(k).iter().enumerate() {
                max[e] = max[e].max(c);
            }
        }
    }
    max
}

/// Divides each count by its event type's course-wide maximum. Types that
/// never occur stay at zero.
pub fn normalize(counts: &StudentCounts) -> Vec<StudentSeries> {
    let types = counts.values().next().map_or(0, |m| m.types());
    let maxima: Vec<f64> = type_maxima(counts, types)
        .iter()
        .map(|&m| m as f64)
        .collect();
    normalize_with(counts, &maxima)
}

pub fn normalize_with(counts: &StudentCounts, maxima: &[f64]) -> Vec<StudentSeries> {
    counts
        .iter()
        .map(|(id, m)| {
            let values = m
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let mx = maxima[i % m.types()];
                    if mx > 0.0 {
                        (c as f64 / mx).min(1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            StudentSeries {
                student_id: id.clone(),
                weeks: m.weeks(),
                types: m.types(),
                values,
            }
        })
        .collect()
}

/// Dropout week is the week after the last video event, never earlier than 2.
pub fn dropout_week_of(counts: &CountMatrix, vocabulary: &EventVocabulary) -> usize {
    let last_video = (1..=counts.weeks())
        .rev()
        .find(|&k| {
            counts
                .week(k)
                .iter()
                .enumerate()
                .any(|(e, &c)| c > 0 && vocabulary.is_video(e))
        })
        .unwrap_or(0);
    (last_video + 1).max(2)
}

pub fn label_dropout(counts: &StudentCounts, vocabulary: &EventVocabulary) -> Vec<DropoutLabels> {
    counts
        .values()
        .map(|m| DropoutLabels::from_dropout_week(dropout_week_of(m, vocabulary), m.weeks()))
        .collect()
}

/// Features of weeks `1..k-1` and labels `y_k` for one prediction week.
#[derive(Clone, Debug)]
pub struct WeekSlice {
    pub week: usize,
    /// Row indices into the cohort.
    pub students: Vec<usize>,
    /// `[n, k-1, E]`
    pub features: Tensor,
    pub labels: Vec<bool>,
}

impl WeekSlice {
    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> WeekSlice {
        WeekSlice {
            week: self.week,
            students: rows.iter().map(|&r| self.students[r]).collect(),
            features: self.features.select(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// One course offering.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cohort {
    pub course_id: String,
    pub offering_id: String,
    vocabulary: EventVocabulary,
    weeks: usize,
    students: Vec<String>,
    counts: Vec<CountMatrix>,
    series: Vec<StudentSeries>,
    labels: Vec<DropoutLabels>,
    demographics: Option<BTreeMap<String, String>>,
}

impl Cohort {
    pub fn from_counts(
        course_id: impl Into<String>,
        offering_id: impl Into<String>,
        vocabulary: EventVocabulary,
        weeks: usize,
        counts: StudentCounts,
        demographics: Option<BTreeMap<String, String>>,
    ) -> Result<Self> {
        if weeks < 2 {
            return Err(Error::invalid("a course needs at least two weeks"));
        }
        if counts.is_empty() {
            return Err(Error::invalid("cohort has no students"));
        }
        for (id, m) in &counts {
            if m.weeks() != weeks || m.types() != vocabulary.len() {
                return Err(Error::shape(format!(
                    "student {id}: {}x{} counts for a {weeks}x{} course",
                    m.weeks(),
                    m.types(),
                    vocabulary.len()
                )));
            }
        }
        let series = normalize(&counts);
        let labels = label_dropout(&counts, &vocabulary);
        let students = counts.keys().cloned().collect();
        Ok(Self {
            course_id: course_id.into(),
            offering_id: offering_id.into(),
            vocabulary,
            weeks,
            students,
            counts: counts.into_values().collect(),
            series,
            labels,
            demographics,
        })
    }

    pub fn id(&self) -> String {
        if self.offering_id.is_empty() {
            self.course_id.clone()
        } else {
            format!("{}-{}", self.course_id, self.offering_id)
        }
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn weeks(&self) -> usize {
        self.weeks
    }

    pub fn vocabulary(&self) -> &EventVocabulary {
        &self.vocabulary
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn series(&self) -> &[StudentSeries] {
        &self.series
    }

    pub fn labels(&self) -> &[DropoutLabels] {
        &self.labels
    }

    pub fn counts(&self) -> &[CountMatrix] {
        &self.counts
    }

    pub fn demographics(&self) -> Option<&BTreeMap<String, String>> {
        self.demographics.as_ref()
    }

    pub fn set_demographics(&mut self, demographics: BTreeMap<String, String>) {
        self.demographics = Some(demographics);
    }

    pub fn student_counts(&self) -> StudentCounts {
        self.students
            .iter()
            .cloned()
            .zip(self.counts.iter().cloned())
            .collect()
    }

    /// Student rows that are still active in week `k` (`y_k = false`).
    pub fn active_at(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labels[i].at(k)).collect()
    }

    /// `[n, weeks.len(), E]` features of the given students and 1-based weeks.
    pub fn features(&self, rows: &[usize], weeks: std::ops::RangeInclusive<usize>) -> Tensor {
        let e = self.vocabulary.len();
        let span = weeks.clone().count();
        let mut data = Vec::with_capacity(rows.len() * span * e);
        for &r in rows {
            for k in weeks.clone() {
                data.extend_from_slice(self.series[r].week(k));
            }
        }
        Tensor::new(vec![rows.len(), span, e], data).expect("feature shape")
    }

    /// Training/evaluation population for the week-`k` model. With
    /// `at_risk_only`, keeps students with `y_{k-1} = false`.
    pub fn slice_for_week(&self, k: usize, at_risk_only: bool) -> Result<WeekSlice> {
        if k < 2 || k > self.weeks {
            return Err(Error::invalid(format!(
                "prediction week {k} outside 2..={}",
                self.weeks
            )));
        }
        let students: Vec<usize> = if at_risk_only {
            self.active_at(k - 1)
        } else {
            (0..self.len()).collect()
        };
        let features = self.features(&students, 1..=k - 1);
        let labels = students.iter().map(|&i| self.labels[i].at(k)).collect();
        Ok(WeekSlice {
            week: k,
            students,
            features,
            labels,
        })
    }

    /// Students whose demographic attribute equals `value`. Series keep the
    /// parent cohort's normalization.
    pub fn filter_group(&self, value: &str) -> Result<Cohort> {
        let demo = self
            .demographics
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("cohort {} has no demographics", self.id())))?;
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| demo.get(&self.students[i]).is_some_and(|v| v == value))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyGroup(value.to_string()));
        }
        Ok(self.subset(&rows, format!("{}[{value}]", self.offering_id)))
    }

    pub(crate) fn subset(&self, rows: &[usize], offering_id: String) -> Cohort {
        let students: Vec<String> = rows.iter().map(|&i| self.students[i].clone()).collect();
        let demographics = self.demographics.as_ref().map(|d| {
            students
                .iter()
                .filter_map(|s| d.get(s).map(|v| (s.clone(), v.clone())))
                .collect()
        });
        Cohort {
            course_id: self.course_id.clone(),
            offering_id,
            vocabulary: self.vocabulary.clone(),
            weeks: self.weeks,
            counts: rows.iter().map(|&i| self.counts[i].clone()).collect(),
            series: rows.iter().map(|&i| self.series[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
            students,
            demographics,
        }
    }

    /// Distinct demographic values with their student counts.
    pub fn group_sizes(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        if let Some(d) = &self.demographics {
            for s in &self.students {
                if let Some(v) = d.get(s) {
                    *out.entry(v.clone()).or_insert(0) += 1;
                }
            }
        }
        out
    }

    /// Percentage of all students whose dropout week is `k`, for k = 2..=T.
    pub fn dropout_percentages(&self) -> Vec<(usize, f64)> {
        let n = self.len() as f64;
        (2..=self.weeks)
            .map(|k| {
                let c = self.labels.iter().filter(|l| l.dropout_week == k).count();
                (k, 100.0 * c as f64 / n)
            })
            .collect()
    }

    /// Mean raw count per student for every (week, event type).
    pub fn event_frequencies(&self) -> Vec<Vec<f64>> {
        let n = self.len() as f64;
        (1..=self.weeks)
            .map(|k| {
                (0..self.vocabulary.len())
                    .map(|e| self.counts.iter().map(|m| m.get(k, e) as f64).sum::<f64>() / n)
                    .collect()
            })
            .collect()
    }
}

/// Read-only view of a target cohort as known at prediction week `k`: features
/// and dropout labels of weeks before `k` only.
#[derive(Clone, Copy, Debug)]
pub struct ObservedCohort<'a> {
    cohort: &'a Cohort,
    week: usize,
}

impl<'a> ObservedCohort<'a> {
    pub fn new(cohort: &'a Cohort, week: usize) -> Result<Self> {
        if week < 2 || week > cohort.weeks() {
            return Err(Error::invalid(format!(
                "prediction week {week} out of range"
            )));
        }
        Ok(Self { cohort, week })
    }

    pub fn week(&self) -> usize {
        self.week
    }

    pub fn len(&self) -> usize {
        self.cohort.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cohort.is_empty()
    }

    pub fn vocabulary(&self) -> &EventVocabulary {
        self.cohort.vocabulary()
    }

    fn check_week(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.week {
            return Err(Error::invalid(format!(
                "week {k} is not observed before prediction week {}",
                self.week
            )));
        }
        Ok(())
    }

    pub fn features(
        &self,
        rows: &[usize],
        weeks: std::ops::RangeInclusive<usize>,
    ) -> Result<Tensor> {
        self.check_week(*weeks.end())?;
        self.check_week(*weeks.start())?;
        Ok(self.cohort.features(rows, weeks))
    }

    pub fn label(&self, row: usize, k: usize) -> Result<bool> {
        self.check_week(k)?;
        Ok(self.cohort.labels()[row].at(k))
    }

    pub fn active_at(&self, k: usize) -> Result<Vec<usize>> {
        self.check_week(k)?;
        Ok(self.cohort.active_at(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::CountMatrix;

    fn vocab() -> EventVocabulary {
        EventVocabulary::from_pairs(&[("play_video", true), ("problem_check", false)]).unwrap()
    }

    fn one(weeks: usize, video_weeks: &[usize]) -> CountMatrix {
        let mut m = CountMatrix::zeros(weeks, 2);
        for &k in video_weeks {
            m.add(k, 0, 1);
        }
        m.add(1, 1, 1);
        m
    }

    #[test]
    fn label_examples() {
        let v = vocab();
        let l = DropoutLabels::from_dropout_week(dropout_week_of(&one(9, &[1, 3]), &v), 9);
        assert_eq!(l.dropout_week, 4);
        assert_eq!(
            l.as_slice(),
            &[false, false, false, true, true, true, true, true, true]
        );
        let l = DropoutLabels::from_dropout_week(dropout_week_of(&one(9, &[9]), &v), 9);
        assert_eq!(l.dropout_week, 10);
        assert!(l.as_slice().iter().all(|&y| !y));
        assert_eq!(dropout_week_of(&one(9, &[]), &v), 2);
        assert_eq!(dropout_week_of(&one(9, &[1]), &v), 2);
    }

    #[test]
    fn normalize_uses_type_maxima() {
        let mut counts = StudentCounts::new();
        let mut a = CountMatrix::zeros(2, 2);
        a.set(1, 0, 4);
        a.set(2, 0, 2);
        let mut b = CountMatrix::zeros(2, 2);
        b.set(1, 0, 1);
        counts.insert("a".into(), a);
        counts.insert("b".into(), b);
        let s = normalize(&counts);
        assert_eq!(s[0].values(), &[1.0, 0.0, 0.5, 0.0]);
        assert_eq!(s[1].values(), &[0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_type_normalizes_to_one() {
        let mut counts = StudentCounts::new();
        for id in ["a", "b", "c"] {
            let mut m = CountMatrix::zeros(3, 2);
            for k in 1..=3 {
                m.set(k, 1, 5);
            }
            counts.insert(id.into(), m);
        }
        for s in normalize(&counts) {
            for k in 1..=3 {
                assert_eq!(s.week(k), &[0.0, 1.0]);
            }
        }
    }

    fn cohort() -> Cohort {
        let mut counts = StudentCounts::new();
        counts.insert("a".into(), one(4, &[1, 2, 3, 4]));
        counts.insert("b".into(), one(4, &[1]));
        counts.insert("c".into(), one(4, &[1, 2]));
        let demo = [("a", "x"), ("b", "y"), ("c", "x")]
            .iter()
            .map(|(s, v)| (s.to_string(), v.to_string()))
            .collect();
        Cohort::from_counts("c1", "2016", vocab(), 4, counts, Some(demo)).unwrap()
    }

    #[test]
    fn slice_shapes_and_at_risk_filter() {
        let c = cohort();
        let s2 = c.slice_for_week(2, true).unwrap();
        assert_eq!(s2.features.shape(), &[3, 1, 2]);
        assert_eq!(s2.labels, vec![false, true, false]);
        let s4 = c.slice_for_week(4, true).unwrap();
        assert_eq!(s4.features.shape(), &[1, 3, 2]);
        assert_eq!(s4.students, vec![0]);
        let s3 = c.slice_for_week(3, true).unwrap();
        assert_eq!(s3.students, vec![0, 2]);
        assert_eq!(s3.labels, vec![false, true]);
        for &i in &s4.students {
            assert!(!c.labels()[i].at(3));
        }
        let all = c.slice_for_week(4, false).unwrap();
        assert_eq!(all.len(), 3);
        assert!(c.slice_for_week(1, true).is_err());
        assert!(c.slice_for_week(5, true).is_err());
    }

    #[test]
    fn groups_partition_students() {
        let c = cohort();
        let x = c.filter_group("x").unwrap();
        let y = c.filter_group("y").unwrap();
        assert_eq!(x.len() + y.len(), c.len());
        assert_eq!(x.students(), &["a".to_string(), "c".to_string()]);
        assert!(matches!(c.filter_group("z"), Err(Error::EmptyGroup(_))));
        assert_eq!(x.series()[1], c.series()[2]);
    }

    #[test]
    fn observed_view_hides_the_future() {
        let c = cohort();
        let o = ObservedCohort::new(&c, 3).unwrap();
        assert!(o.label(0, 2).is_ok());
        assert!(o.label(0, 3).is_err());
        assert!(o.features(&[0], 1..=3).is_err());
        assert_eq!(o.features(&[0, 1], 1..=2).unwrap().shape(), &[2, 2, 2]);
    }
}
