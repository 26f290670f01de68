//! Experiment grids: config, cohort wiring, cell execution and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{read_demographics, read_weekly_counts, Cohort, EventVocabulary, ObservedCohort};
use crate::error::{Error, Result};
use crate::eval::{
    auc, proxy_a_distance, summarize, write_results, PadConfig, Summary, TransferResult,
};
use crate::synth::{generate_cohort, GeneratorConfig};
use crate::transfer::{
    sub_seed, train_no_transfer, train_transfer, Method, MethodConfig, WeeklyPredictor,
};

/// Where a cohort comes from: a generator config or a weekly-counts file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSource {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<GeneratorConfig>,
    /// `student_id,week,event_type,count` file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<PathBuf>,
    /// Vocabulary file for `counts`; the default vocabulary otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weeks: Option<usize>,
    /// `student_id,attribute,value` file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub source: String,
    pub target: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeekRange {
    pub start: usize,
    pub end: usize,
}

impl WeekRange {
    pub fn weeks(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Group-targeted transfer on one demographic attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub attribute: String,
    /// Values to target; every value present in the target by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub cohorts: Vec<CohortSource>,
    /// Ordered (source, target) pairs; every ordered pair when empty.
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub weeks: WeekRange,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Regenerate synthetic cohorts for every seed (generator seed + run seed).
    #[serde(default)]
    pub resample_synthetic: bool,
    #[serde(default)]
    pub hyper: MethodConfig,
    #[serde(default)]
    pub pad: PadConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".into()
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Experiment(e.to_string()))?;
        Ok(c)
    }

    /// Parses and validates; relative data paths resolve against the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut c = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            for s in &mut c.cohorts {
                for p in [&mut s.counts, &mut s.vocabulary, &mut s.demographics]
                    .into_iter()
                    .flatten()
                {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Experiment(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Experiment(m));
        if self.cohorts.is_empty() {
            return bad("no cohorts".into());
        }
        let mut names = BTreeMap::new();
        for c in &self.cohorts {
            if names.insert(c.name.as_str(), c).is_some() {
                return bad(format!("cohort name {} is used twice", c.name));
            }
            match (&c.synth, &c.counts) {
                (Some(g), None) => {
                    g.validate()?;
                    if c.weeks.is_some() || c.vocabulary.is_some() || c.demographics.is_some() {
                        return bad(format!(
                            "cohort {}: synthetic cohorts take no file options",
                            c.name
                        ));
                    }
                }
                (None, Some(_)) => {
                    if c.weeks.is_none() {
                        return bad(format!(
                            "cohort {}: `weeks` is required with `counts`",
                            c.name
                        ));
                    }
                }
                _ => {
                    return bad(format!(
                        "cohort {}: give exactly one of `synth` or `counts`",
                        c.name
                    ))
                }
            }
        }
        for p in self.resolved_pairs() {
            for n in [&p.source, &p.target] {
                if !names.contains_key(n.as_str()) {
                    return bad(format!("pair refers to unknown cohort {n}"));
                }
            }
            if p.source == p.target {
                return bad(format!(
                    "pair {} -> {} has the same source and target",
                    p.source, p.target
                ));
            }
        }
        if self.resolved_pairs().is_empty() {
            return bad("no (source, target) pairs".into());
        }
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if self.weeks.start < 2 || self.weeks.end < self.weeks.start {
            return bad(format!(
                "week range {}..={} must start at 2 or later",
                self.weeks.start, self.weeks.end
            ));
        }
        for c in &self.cohorts {
            let w = c.synth.as_ref().map(|g| g.weeks).or(c.weeks).unwrap_or(0);
            if w < self.weeks.end {
                return bad(format!(
                    "cohort {} has {w} weeks; the grid needs {}",
                    c.name, self.weeks.end
                ));
            }
        }
        if let Some(g) = &self.group {
            if g.attribute.is_empty() {
                return bad("group attribute is empty".into());
            }
            for c in &self.cohorts {
                if let Some(s) = &c.synth {
                    if !s.groups.is_empty() && s.demographic_attribute != g.attribute {
                        return bad(format!(
                            "cohort {} records attribute {}, not {}",
                            c.name, s.demographic_attribute, g.attribute
                        ));
                    }
                }
            }
        }
        let h = &self.hyper;
        if !(h.train_fraction > 0.0 && h.train_fraction < 1.0) {
            return bad("hyper.train_fraction must lie in (0, 1)".into());
        }
        if h.autoencoder.bottleneck == 0
            || h.tpca_out == 0
            || h.tpca_out >= h.autoencoder.bottleneck
        {
            return bad("need 0 < tpca_out < bottleneck".into());
        }
        Ok(())
    }

    pub fn resolved_pairs(&self) -> Vec<PairSpec> {
        if !self.pairs.is_empty() {
            return self.pairs.clone();
        }
        let mut out = Vec::new();
        for s in &self.cohorts {
            for t in &self.cohorts {
                if s.name != t.name {
                    out.push(PairSpec {
                        source: s.name.clone(),
                        target: t.name.clone(),
                    });
                }
            }
        }
        out
    }

    /// Hyperparameters that differ from the defaults, as `path=value`.
    pub fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let pairs = [
            (
                "hyper",
                serde_json::to_value(&self.hyper),
                serde_json::to_value(MethodConfig::default()),
            ),
            (
                "pad",
                serde_json::to_value(&self.pad),
                serde_json::to_value(PadConfig::default()),
            ),
        ];
        for (root, a, b) in pairs {
            if let (Ok(a), Ok(b)) = (a, b) {
                diff_values(root, &a, &b, &mut out);
            }
        }
        out
    }
}

fn diff_values(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                let p = format!("{path}.{k}");
                match y.get(k) {
                    Some(w) => diff_values(&p, v, w, out),
                    None => out.push(format!("{p}={v}")),
                }
            }
        }
        _ if a != b => out.push(format!("{path}={a}")),
        _ => {}
    }
}

/// Loads one cohort; synthetic cohorts get `seed_offset` added to the
/// generator seed. `attribute` picks the demographic column of a file.
pub fn load_cohort(
    source: &CohortSource,
    seed_offset: u64,
    attribute: Option<&str>,
) -> Result<Cohort> {
    if let Some(g) = &source.synth {
        let mut g = g.clone();
        g.seed = g.seed.wrapping_add(seed_offset);
        return Ok(generate_cohort(&g)?.cohort);
    }
    let path = source
        .counts
        .as_ref()
        .ok_or_else(|| Error::Experiment(format!("cohort {} has no data", source.name)))?;
    let vocabulary = match &source.vocabulary {
        Some(p) => EventVocabulary::load(p)?,
        None => EventVocabulary::default(),
    };
    let weeks = source
        .weeks
        .ok_or_else(|| Error::Experiment(format!("cohort {} needs `weeks`", source.name)))?;
    let (counts, _) = read_weekly_counts(path, &vocabulary, weeks)?;
    let demographics = match &source.demographics {
        Some(p) => Some(read_demographics(p, attribute)?),
        None => None,
    };
    Cohort::from_counts(
        source.name.clone(),
        "",
        vocabulary,
        weeks,
        counts,
        demographics,
    )
}

/// A cell that failed; the rest of the grid still runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub source: String,
    pub target: String,
    pub week: usize,
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub results: Vec<TransferResult>,
    pub failures: Vec<CellFailure>,
}

impl RunOutput {
    pub fn summary(&self) -> Result<Summary> {
        summarize(&self.results)
    }
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Seed of one (source, target, week) cell; shared by every method.
pub fn cell_seed(seed: u64, source: &str, target: &str, week: usize) -> u64 {
    sub_seed(seed ^ fnv1a(&[source, target, &week.to_string()]), 0)
}

/// Scores the target population at `week` with a transfer predictor.
fn score(
    predictor: &WeeklyPredictor,
    target: &Cohort,
    week: usize,
    at_risk: bool,
    rows: Option<&[usize]>,
) -> Result<f64> {
    let slice = target.slice_for_week(week, at_risk)?;
    let slice = match rows {
        Some(keep) => {
            let idx: Vec<usize> = (0..slice.len())
                .filter(|&i| keep.contains(&slice.students[i]))
                .collect();
            slice.subset(&idx)
        }
        None => slice,
    };
    let s = predictor.predict(&slice.features)?;
    auc(&s, &slice.labels)
}

/// One evaluated target: the whole cohort, or a group under either model.
#[derive(Clone)]
struct TargetView {
    label: String,
    cohort: Arc<Cohort>,
    /// Rows of `cohort` to evaluate on (whole-model-on-group rows).
    restrict: Option<Vec<usize>>,
}

struct Cohorts {
    by_seed: BTreeMap<(String, u64), Arc<Cohort>>,
}

impl Cohorts {
    fn get(&self, name: &str, seed: u64) -> Arc<Cohort> {
        self.by_seed[&(name.to_string(), seed)].clone()
    }
}

fn load_all(config: &ExperimentConfig) -> Result<Cohorts> {
    let mut by_seed = BTreeMap::new();
    let seeds: Vec<u64> = if config.resample_synthetic {
        config.seeds.clone()
    } else {
        vec![0]
    };
    let jobs: Vec<(&CohortSource, u64)> = config
        .cohorts
        .iter()
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let loaded: Vec<Result<Cohort>> = jobs
        .par_iter()
        .map(|(c, s)| {
            let offset = if c.synth.is_some() { *s } else { 0 };
            load_cohort(
                c,
                offset,
                config.group.as_ref().map(|g| g.attribute.as_str()),
            )
            .map_err(|e| Error::Experiment(format!("cohort {}: {e}", c.name)))
        })
        .collect();
    for ((c, s), r) in jobs.iter().zip(loaded) {
        let cohort = r?;
        if config.resample_synthetic {
            by_seed.insert((c.name.clone(), *s), Arc::new(cohort));
        } else {
            let a = Arc::new(cohort);
            for &seed in &config.seeds {
                by_seed.insert((c.name.clone(), seed), a.clone());
            }
        }
    }
    Ok(Cohorts { by_seed })
}

/// An evaluated target view and, for a group, the whole-cohort model on that group.
type ViewPair = (TargetView, Option<TargetView>);

fn target_views(
    config: &ExperimentConfig,
    name: &str,
    cohort: &Arc<Cohort>,
) -> Result<Vec<ViewPair>> {
    let whole = TargetView {
        label: name.to_string(),
        cohort: cohort.clone(),
        restrict: None,
    };
    let mut out = vec![(whole, None)];
    let Some(g) = &config.group else {
        return Ok(out);
    };
    let values: Vec<String> = match &g.values {
        Some(v) => v.clone(),
        None => cohort.group_sizes().into_keys().collect(),
    };
    if values.is_empty() {
        return Err(Error::Experiment(format!(
            "target {name} has no {} values",
            g.attribute
        )));
    }
    let demo = cohort.demographics().cloned().unwrap_or_default();
    for v in values {
        let sub = Arc::new(cohort.filter_group(&v)?);
        let rows: Vec<usize> = (0..cohort.len())
            .filter(|&i| demo.get(&cohort.students()[i]).is_some_and(|x| *x == v))
            .collect();
        let targeted = TargetView {
            label: format!("{name}[{v}]"),
            cohort: sub,
            restrict: None,
        };
        let whole_on_group = TargetView {
            label: format!("{name}@{v}"),
            cohort: cohort.clone(),
            restrict: Some(rows),
        };
        out.push((targeted, Some(whole_on_group)));
    }
    Ok(out)
}

struct Unit {
    pair: usize,
    week: usize,
    seed: u64,
    /// Index into the target's views.
    view: usize,
    method: Method,
}

/// Trains and scores one method on one view; returns rows for the view and,
/// for the whole target in group mode, for each whole-model-on-group view.
fn run_unit(
    method: Method,
    source: &Cohort,
    view: &TargetView,
    group_views: &[TargetView],
    week: usize,
    cfg: &MethodConfig,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let at_risk = cfg.at_risk_only;
    let mut out = Vec::new();
    if method.uses_target_labels() {
        let fit = train_no_transfer(
            &view.cohort,
            week,
            method == Method::NoTransferAe,
            cfg,
            seed,
        )?;
        let test = fit.slice.subset(&fit.test_rows);
        let s = fit.predictor.predict(&test.features)?;
        out.push((view.label.clone(), auc(&s, &test.labels)?));
        for g in group_views {
            let keep = g.restrict.as_deref().unwrap_or(&[]);
            let idx: Vec<usize> = (0..test.len())
                .filter(|&i| keep.contains(&test.students[i]))
                .collect();
            let sub = test.subset(&idx);
            let s = fit.predictor.predict(&sub.features)?;
            out.push((g.label.clone(), auc(&s, &sub.labels)?));
        }
        return Ok(out);
    }
    let observed = ObservedCohort::new(&view.cohort, week)?;
    let predictor = train_transfer(method, source, &observed, cfg, seed)?;
    out.push((
        view.label.clone(),
        score(&predictor, &view.cohort, week, at_risk, None)?,
    ));
    for g in group_views {
        out.push((
            g.label.clone(),
            score(&predictor, &g.cohort, week, at_risk, g.restrict.as_deref())?,
        ));
    }
    Ok(out)
}

/// PAD and size ratio between the source and one target view at `week`.
fn domain_stats(
    source: &Cohort,
    view: &TargetView,
    week: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let at_risk = cfg.hyper.at_risk_only;
    let s = source.slice_for_week(week, at_risk)?;
    let mut t = view.cohort.slice_for_week(week, at_risk)?;
    if let Some(keep) = &view.restrict {
        let idx: Vec<usize> = (0..t.len())
            .filter(|&i| keep.contains(&t.students[i]))
            .collect();
        t = t.subset(&idx);
    }
    if s.is_empty() || t.is_empty() {
        return Err(Error::invalid(format!("empty population at week {week}")));
    }
    let ratio = t.len() as f64 / s.len() as f64;
    let flat = |x: &crate::nn::Tensor| {
        x.clone()
            .reshape(vec![x.batch(), x.sample_len()])
            .expect("flatten")
    };
    let pad = proxy_a_distance(
        &flat(&s.features),
        &flat(&t.features),
        &cfg.pad,
        sub_seed(seed, 6),
    )?;
    Ok((pad.pad, ratio))
}

/// Runs the whole grid with `parallel` worker threads (0 = all cores).
/// Rows come back in grid order regardless of scheduling.
pub fn run_experiment(config: &ExperimentConfig, parallel: usize) -> Result<RunOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| run_grid(config))
}

fn run_grid(config: &ExperimentConfig) -> Result<RunOutput> {
    let cohorts = load_all(config)?;
    let pairs = config.resolved_pairs();
    for p in &pairs {
        let (s, t) = (
            cohorts.get(&p.source, config.seeds[0]),
            cohorts.get(&p.target, config.seeds[0]),
        );
        if s.vocabulary() != t.vocabulary() {
            return Err(Error::Experiment(format!(
                "{} and {} use different vocabularies",
                p.source, p.target
            )));
        }
    }

    // Views per (pair, seed).
    let mut views: BTreeMap<(usize, u64), Vec<ViewPair>> = BTreeMap::new();
    for (pi, p) in pairs.iter().enumerate() {
        for &seed in &config.seeds {
            let t = cohorts.get(&p.target, seed);
            views.insert((pi, seed), target_views(config, &p.target, &t)?);
        }
    }

    let mut units = Vec::new();
    for (pi, _) in pairs.iter().enumerate() {
        for week in config.weeks.weeks() {
            for &seed in &config.seeds {
                for view in 0..views[&(pi, seed)].len() {
                    for &method in &config.methods {
                        units.push(Unit {
                            pair: pi,
                            week,
                            seed,
                            view,
                            method,
                        });
                    }
                }
            }
        }
    }

    // Domain statistics per evaluated label.
    let mut stat_jobs: Vec<(usize, usize, u64, TargetView)> = Vec::new();
    for (pi, _) in pairs.iter().enumerate() {
        for week in config.weeks.weeks() {
            for &seed in &config.seeds {
                for (v, twin) in &views[&(pi, seed)] {
                    stat_jobs.push((pi, week, seed, v.clone()));
                    if let Some(t) = twin {
                        stat_jobs.push((pi, week, seed, t.clone()));
                    }
                }
            }
        }
    }
    let stats: Vec<Result<(f64, f64)>> = stat_jobs
        .par_iter()
        .map(|(pi, week, seed, v)| {
            let p = &pairs[*pi];
            let src = cohorts.get(&p.source, *seed);
            domain_stats(
                &src,
                v,
                *week,
                config,
                cell_seed(*seed, &p.source, &v.label, *week),
            )
        })
        .collect();
    let mut stat_map: BTreeMap<(usize, usize, u64, String), (f64, f64)> = BTreeMap::new();
    let mut failures = Vec::new();
    for ((pi, week, seed, v), r) in stat_jobs.iter().zip(stats) {
        match r {
            Ok(x) => {
                stat_map.insert((*pi, *week, *seed, v.label.clone()), x);
            }
            Err(e) => failures.push(CellFailure {
                source: pairs[*pi].source.clone(),
                target: v.label.clone(),
                week: *week,
                method: "pad".into(),
                seed: *seed,
                error: e.to_string(),
            }),
        }
    }

    let outcomes: Vec<Result<Vec<(String, f64)>>> = units
        .par_iter()
        .map(|u| {
            let p = &pairs[u.pair];
            let src = cohorts.get(&p.source, u.seed);
            let (view, _) = &views[&(u.pair, u.seed)][u.view];
            // The whole-target model is also scored on each group.
            let group_views: Vec<TargetView> = if u.view == 0 {
                views[&(u.pair, u.seed)]
                    .iter()
                    .filter_map(|(_, t)| t.clone())
                    .collect()
            } else {
                Vec::new()
            };
            let seed = cell_seed(u.seed, &p.source, &view.label, u.week);
            run_unit(
                u.method,
                &src,
                view,
                &group_views,
                u.week,
                &config.hyper,
                seed,
            )
        })
        .collect();

    let mut results = Vec::new();
    for (u, r) in units.iter().zip(outcomes) {
        let p = &pairs[u.pair];
        let fail = |target: String, e: &Error| CellFailure {
            source: p.source.clone(),
            target,
            week: u.week,
            method: u.method.to_string(),
            seed: u.seed,
            error: e.to_string(),
        };
        match r {
            Ok(rows) => {
                for (label, value) in rows {
                    if let Some(&(pad, ratio)) =
                        stat_map.get(&(u.pair, u.week, u.seed, label.clone()))
                    {
                        results.push(TransferResult {
                            source: p.source.clone(),
                            target: label,
                            week: u.week,
                            method: u.method.to_string(),
                            seed: u.seed,
                            auc: value,
                            pad,
                            size_ratio: ratio,
                        });
                    }
                }
            }
            Err(e) => {
                let label = views[&(u.pair, u.seed)][u.view].0.label.clone();
                failures.push(fail(label, &e));
            }
        }
    }
    Ok(RunOutput {
        config: config.clone(),
        results,
        failures,
    })
}

/// Comment lines embedded at the top of every CSV output.
pub fn provenance(config: &ExperimentConfig) -> Result<Vec<String>> {
    let mut c = vec![
        format!("moocshift {}", env!("CARGO_PKG_VERSION")),
        format!(
            "seeds: {}",
            config
                .seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(",")
        ),
    ];
    let o = config.overrides();
    c.push(format!(
        "overrides: {}",
        if o.is_empty() {
            "none".into()
        } else {
            o.join(" ")
        }
    ));
    c.push(format!("config: {}", serde_json::to_string(config)?));
    Ok(c)
}

/// Recovers the config embedded by [`provenance`].
pub fn config_from_comments(comments: &[String]) -> Result<ExperimentConfig> {
    let line = comments
        .iter()
        .find_map(|c| c.strip_prefix("config: "))
        .ok_or_else(|| Error::invalid("no embedded config"))?;
    Ok(serde_json::from_str(line)?)
}

/// Writes `results.csv`, `failures.csv` (when any), `summary.json`,
/// `per_week.csv` and `scatter.csv` into `dir`.
pub fn write_outputs(dir: &Path, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let comments = provenance(&run.config)?;
    write_results(
        fs::File::create(dir.join("results.csv"))?,
        &comments,
        &run.results,
    )?;
    let failures_path = dir.join("failures.csv");
    if run.failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path)?;
        }
    } else {
        let mut w = csv::Writer::from_path(&failures_path)?;
        for f in &run.failures {
            w.serialize(f)?;
        }
        w.flush()?;
    }
    if !run.results.is_empty() {
        write_summary(dir, &run.config, &run.summary()?)?;
    }
    Ok(())
}

/// Summary JSON plus per-week and scatter plot data.
pub fn write_summary(dir: &Path, config: &ExperimentConfig, summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let comments = provenance(config)?;
    let json = serde_json::json!({ "config": config, "summary": summary });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&json)? + "\n",
    )?;
    let with_comments =
        |name: &str, body: Vec<u8>| write_commented(&dir.join(name), &comments, &body);
    let mut buf = Vec::new();
    summary.write_week_csv(&mut buf)?;
    with_comments("per_week.csv", buf)?;
    let mut buf = Vec::new();
    summary.write_scatter_csv(&mut buf)?;
    with_comments("scatter.csv", buf)?;
    Ok(())
}

/// Loads a named cohort the way [`run_experiment`] does for `seed`.
pub fn cohort_for(config: &ExperimentConfig, name: &str, seed: u64) -> Result<Cohort> {
    let source = config
        .cohorts
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Experiment(format!("no cohort named {name}")))?;
    let offset = if config.resample_synthetic && source.synth.is_some() {
        seed
    } else {
        0
    };
    load_cohort(
        source,
        offset,
        config.group.as_ref().map(|g| g.attribute.as_str()),
    )
}

/// One trained grid cell, with what is needed to score it again later.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellBundle {
    pub config: ExperimentConfig,
    pub source: String,
    pub target: String,
    pub week: usize,
    pub seed: u64,
    /// Held-out target students of a method that trains on target labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_students: Option<Vec<String>>,
    pub predictor: WeeklyPredictor,
}

impl CellBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut b: CellBundle = serde_json::from_str(&fs::read_to_string(path)?)?;
        b.predictor = WeeklyPredictor::from_json(&serde_json::to_string(&b.predictor)?)?;
        Ok(b)
    }
}

/// Trains the (source, target, week, method, seed) cell of a grid exactly
/// as [`run_experiment`] would.
pub fn train_cell(
    config: &ExperimentConfig,
    source: &str,
    target: &str,
    week: usize,
    method: Method,
    seed: u64,
) -> Result<CellBundle> {
    config.validate()?;
    let src = cohort_for(config, source, seed)?;
    let tgt = cohort_for(config, target, seed)?;
    if src.vocabulary() != tgt.vocabulary() {
        return Err(Error::Experiment(format!(
            "{source} and {target} use different vocabularies"
        )));
    }
    let cs = cell_seed(seed, source, target, week);
    let (predictor, test_students) = if method.uses_target_labels() {
        let fit = train_no_transfer(
            &tgt,
            week,
            method == Method::NoTransferAe,
            &config.hyper,
            cs,
        )?;
        let ids = fit
            .test_rows
            .iter()
            .map(|&i| tgt.students()[fit.slice.students[i]].clone())
            .collect();
        (fit.predictor, Some(ids))
    } else {
        let observed = ObservedCohort::new(&tgt, week)?;
        (
            train_transfer(method, &src, &observed, &config.hyper, cs)?,
            None,
        )
    };
    Ok(CellBundle {
        config: config.clone(),
        source: source.into(),
        target: target.into(),
        week,
        seed,
        test_students,
        predictor,
    })
}

/// Scores a trained cell against the target's labels.
pub fn evaluate_cell(bundle: &CellBundle) -> Result<TransferResult> {
    let config = &bundle.config;
    let week = bundle.week;
    let src = cohort_for(config, &bundle.source, bundle.seed)?;
    let tgt = cohort_for(config, &bundle.target, bundle.seed)?;
    let auc = match &bundle.test_students {
        Some(ids) => {
            let slice = tgt.slice_for_week(week, config.hyper.at_risk_only)?;
            let pos: BTreeMap<&str, usize> = (0..slice.len())
                .map(|i| (tgt.students()[slice.students[i]].as_str(), i))
                .collect();
            let rows = ids
                .iter()
                .map(|id| {
                    pos.get(id.as_str()).copied().ok_or_else(|| {
                        Error::Experiment(format!("student {id} is not in {}", bundle.target))
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            let test = slice.subset(&rows);
            auc(&bundle.predictor.predict(&test.features)?, &test.labels)?
        }
        None => score(
            &bundle.predictor,
            &tgt,
            week,
            config.hyper.at_risk_only,
            None,
        )?,
    };
    let view = TargetView {
        label: bundle.target.clone(),
        cohort: Arc::new(tgt),
        restrict: None,
    };
    let (pad, size_ratio) = domain_stats(
        &src,
        &view,
        week,
        config,
        cell_seed(bundle.seed, &bundle.source, &bundle.target, week),
    )?;
    Ok(TransferResult {
        source: bundle.source.clone(),
        target: bundle.target.clone(),
        week,
        method: bundle.predictor.method.to_string(),
        seed: bundle.seed,
        auc,
        pad,
        size_ratio,
    })
}

/// Symmetric PAD between every pair of cohorts at `week`, row-major, in
/// config order. Each unordered pair is estimated once.
pub fn pad_matrix(
    config: &ExperimentConfig,
    week: usize,
    seed: u64,
) -> Result<(Vec<String>, Vec<f64>)> {
    let names: Vec<String> = config.cohorts.iter().map(|c| c.name.clone()).collect();
    let at_risk = config.hyper.at_risk_only;
    let flat = |x: &crate::nn::Tensor| {
        x.clone()
            .reshape(vec![x.batch(), x.sample_len()])
            .expect("flatten")
    };
    let features = names
        .par_iter()
        .map(|n| {
            let c = cohort_for(config, n, seed)?;
            let s = c.slice_for_week(week, at_risk)?;
            if s.is_empty() {
                return Err(Error::invalid(format!(
                    "cohort {n} is empty at week {week}"
                )));
            }
            Ok(flat(&s.features))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = names.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| {
            let s = sub_seed(cell_seed(seed, &names[i], &names[j], week), 6);
            proxy_a_distance(&features[i], &features[j], &config.pad, s).map(|r| r.pad)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut d = vec![0.0; m * m];
    for (&(i, j), v) in pairs.iter().zip(values) {
        d[i * m + j] = v;
        d[j * m + i] = v;
    }
    Ok((names, d))
}

/// Writes `body` to `path` after the provenance lines as `#` comments.
pub fn write_commented(path: &Path, comments: &[String], body: &[u8]) -> Result<()> {
    let mut text = String::new();
    for c in comments {
        text.push_str("# ");
        text.push_str(c);
        text.push('\n');
    }
    text.push_str(std::str::from_utf8(body).map_err(|e| Error::invalid(e.to_string()))?);
    fs::write(path, text)?;
    Ok(())
}
