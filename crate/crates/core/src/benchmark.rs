//! Built-in synthetic benchmark: two offerings each of a lecture course
//! (video events only) and an interactive course (video plus problem and
//! navigation events). Similar pairs transfer between offerings of the
//! lecture course; dissimilar pairs transfer from the interactive course.

use serde::{Deserialize, Serialize};

use crate::experiment::{CohortSource, ExperimentConfig, GroupSpec, PairSpec, WeekRange};
use crate::synth::{GeneratorConfig, StudentGroup};
use crate::transfer::{Method, MethodConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkOptions {
    pub n_students: usize,
    pub weeks: usize,
    pub seeds: Vec<u64>,
    /// Epochs of autoencoder and active training.
    pub representation_epochs: usize,
    /// Epochs of every predictor head.
    pub predictor_epochs: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            n_students: 2000,
            weeks: 6,
            seeds: vec![0, 1, 2, 3, 4],
            representation_epochs: 30,
            predictor_epochs: 60,
        }
    }
}

fn dynamics(g: &mut GeneratorConfig) {
    g.hazard_sensitivity = 2.0;
    g.engagement.persistence = 0.9;
    g.engagement.innovation_sd = 0.35;
    g.dropout_hazard = vec![0.1; g.weeks];
    g.rate_noise = 0.4;
}

/// Lecture course: non-video types never fire. A quarter of the students
/// re-watch heavily (more seeks and pauses) while being less engaged.
pub fn lecture_course(offering: &str, n: usize, weeks: usize, seed: u64) -> GeneratorConfig {
    let mut g = GeneratorConfig::new("lecture", n, weeks, seed);
    g.offering_id = offering.into();
    dynamics(&mut g);
    let e = g.vocabulary.len();
    g.shift.frequency_scale = (0..e)
        .map(|i| if g.vocabulary.is_video(i) { 1.0 } else { 0.0 })
        .collect();
    let mut rewatch = g.profile.clone();
    for (i, name) in g.vocabulary.names().iter().enumerate() {
        match name.as_str() {
            "seek_video" => rewatch.mean[i] *= 2.5,
            "pause_video" => rewatch.mean[i] *= 2.0,
            _ => {}
        }
    }
    g.demographic_attribute = "viewing".into();
    g.groups = vec![
        StudentGroup {
            name: "steady".into(),
            weight: 0.75,
            engagement_offset: 0.0,
            profile: None,
        },
        StudentGroup {
            name: "rewatch".into(),
            weight: 0.25,
            engagement_offset: -0.5,
            profile: Some(rewatch),
        },
    ];
    g
}

/// Interactive course: problem and navigation counts track engagement
/// closely (high rates, independent of the video types).
pub fn interactive_course(offering: &str, n: usize, weeks: usize, seed: u64) -> GeneratorConfig {
    let mut g = GeneratorConfig::new("interactive", n, weeks, seed);
    g.offering_id = offering.into();
    dynamics(&mut g);
    let e = g.vocabulary.len();
    for i in 0..e {
        if !g.vocabulary.is_video(i) {
            g.profile.mean[i] = 20.0;
            g.profile.loading[i] = 0.8;
            for j in 0..e {
                g.correlation[i][j] = 0.0;
                g.correlation[j][i] = 0.0;
            }
        }
    }
    g
}

/// A later run of the same course: more re-watchers, and dropout depends
/// less sharply on engagement.
fn second_offering(mut g: GeneratorConfig) -> GeneratorConfig {
    g.shift.cohort_mixture_weights = Some(vec![0.55, 0.45]);
    g.hazard_sensitivity = 1.5;
    g
}

/// The benchmark grid: pairs lecture-2 → lecture-1 and lecture-1 →
/// lecture-2 (similar), interactive-1 → lecture-1 and interactive-2 →
/// lecture-2 (dissimilar); synthetic cohorts are redrawn per seed.
pub fn benchmark_config(options: &BenchmarkOptions) -> ExperimentConfig {
    let (n, w) = (options.n_students, options.weeks.max(6) + 2);
    let cohort = |name: &str, g: GeneratorConfig| CohortSource {
        name: name.into(),
        synth: Some(g),
        counts: None,
        vocabulary: None,
        weeks: None,
        demographics: None,
    };
    let pair = |s: &str, t: &str| PairSpec {
        source: s.into(),
        target: t.into(),
    };
    let mut hyper = MethodConfig::default();
    hyper.predictor.epochs = options.predictor_epochs;
    hyper.autoencoder.epochs = options.representation_epochs;
    hyper.active.epochs = options.representation_epochs;
    hyper.kmm.max_iter = 200;
    ExperimentConfig {
        name: "benchmark".into(),
        cohorts: vec![
            cohort("L1", lecture_course("1", n, w, 101)),
            cohort("L2", second_offering(lecture_course("2", n, w, 202))),
            cohort("I1", interactive_course("1", n, w, 303)),
            cohort("I2", interactive_course("2", n, w, 404)),
        ],
        pairs: vec![
            pair("L2", "L1"),
            pair("L1", "L2"),
            pair("I1", "L1"),
            pair("I2", "L2"),
        ],
        methods: vec![
            Method::Passive,
            Method::Active,
            Method::Naive,
            Method::InSitu,
            Method::Instance,
            Method::NoTransfer,
        ],
        weeks: WeekRange {
            start: 2,
            end: options.weeks,
        },
        seeds: options.seeds.clone(),
        resample_synthetic: true,
        hyper,
        pad: Default::default(),
        group: None,
        output_dir: None,
    }
}

/// Only video types follow engagement or stop at dropout; every other type
/// is frequent Poisson noise around a fixed rate.
pub fn video_signal_course(n: usize, weeks: usize, seed: u64) -> GeneratorConfig {
    let mut g = GeneratorConfig::new("video-signal", n, weeks, seed);
    dynamics(&mut g);
    g.post_dropout_activity = 1.0;
    g.rate_noise = 0.0;
    for i in 0..g.vocabulary.len() {
        if !g.vocabulary.is_video(i) {
            g.profile.loading[i] = 0.0;
            g.profile.mean[i] *= 8.0;
        }
    }
    g
}

/// Interactive-course target where most students ignore everything but the
/// videos; a `minority_weight` share uses the course like the source does.
/// Groups are reported under the attribute `style`.
pub fn minority_target(n: usize, weeks: usize, minority_weight: f64, seed: u64) -> GeneratorConfig {
    let mut g = interactive_course("target", n, weeks, seed);
    let mut video_only = g.profile.clone();
    for i in 0..g.vocabulary.len() {
        if !g.vocabulary.is_video(i) {
            video_only.mean[i] = 0.0;
        }
    }
    g.demographic_attribute = "style".into();
    g.groups = vec![
        StudentGroup {
            name: "video".into(),
            weight: 1.0 - minority_weight,
            engagement_offset: 0.0,
            profile: Some(video_only),
        },
        StudentGroup {
            name: "mixed".into(),
            weight: minority_weight,
            engagement_offset: 0.0,
            profile: None,
        },
    ];
    g
}

/// Whole-cohort against group-targeted active transfer from an interactive
/// source into [`minority_target`] with a 15% minority.
pub fn minority_config(options: &BenchmarkOptions) -> ExperimentConfig {
    let (n, w) = (options.n_students, options.weeks.max(6) + 2);
    let mut cfg = benchmark_config(options);
    cfg.name = "minority".into();
    cfg.cohorts = vec![
        CohortSource {
            name: "S".into(),
            synth: Some(interactive_course("source", n, w, 505)),
            counts: None,
            vocabulary: None,
            weeks: None,
            demographics: None,
        },
        CohortSource {
            name: "T".into(),
            synth: Some(minority_target(n, w, 0.15, 606)),
            counts: None,
            vocabulary: None,
            weeks: None,
            demographics: None,
        },
    ];
    cfg.pairs = vec![PairSpec {
        source: "S".into(),
        target: "T".into(),
    }];
    cfg.methods = vec![Method::Active];
    cfg.group = Some(GroupSpec {
        attribute: "style".into(),
        values: Some(vec!["mixed".into()]),
    });
    cfg
}
