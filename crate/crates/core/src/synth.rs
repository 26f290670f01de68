//! Synthetic course offerings with controllable domain shift.
//!
//! Every student carries a latent engagement trajectory (an AR(1) process).
//! Weekly event counts are Poisson with a log-rate that is linear in
//! engagement, truncated at a per-type weekly capacity (a course only has so
//! much content). The types of one week are coupled by a Gaussian copula on
//! the correlation matrix.
//! The dropout week is drawn from a per-week hazard scaled by
//! `exp(-sensitivity * engagement)`. From the dropout week on a student emits
//! no video events, and the week before it always contains one, so the
//! labelling rule recovers the sampled dropout week exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::data::{Cohort, CountMatrix, EventVocabulary, StudentCounts};
use crate::error::{Error, Result};

/// Per-event-type rate parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeProfile {
    /// Expected weekly count at zero engagement in week 1.
    pub mean: Vec<f64>,
    /// Log-rate decrease per week.
    pub decay: Vec<f64>,
    /// Sensitivity of the log-rate to latent engagement.
    pub loading: Vec<f64>,
}

impl TypeProfile {
    pub fn default_for(vocabulary: &EventVocabulary) -> Self {
        let e = vocabulary.len();
        let mean = vocabulary
            .names()
            .iter()
            .map(|n| match n.as_str() {
                "play_video" => 40.0,
                "pause_video" => 30.0,
                "seek_video" => 15.0,
                "load_video" => 25.0,
                "speed_change_video" => 8.0,
                "stop_video" => 10.0,
                "problem_check" => 30.0,
                "problem_graded" => 20.0,
                "problem_show" => 10.0,
                "seq_goto" => 20.0,
                "seq_next" => 40.0,
                "seq_prev" => 10.0,
                "page_close" => 15.0,
                _ => 15.0,
            })
            .collect();
        Self {
            mean,
            decay: vec![0.05; e],
            loading: (0..e)
                .map(|i| if vocabulary.is_video(i) { 0.8 } else { 0.5 })
                .collect(),
        }
    }

    fn validate(&self, e: usize, what: &str) -> Result<()> {
        for (name, v) in [
            ("mean", &self.mean),
            ("decay", &self.decay),
            ("loading", &self.loading),
        ] {
            if v.len() != e {
                return Err(Error::invalid(format!(
                    "{what}.{name} has {} entries for {e} event types",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{what}.{name} is not finite")));
            }
        }
        if self.mean.iter().any(|&m| m < 0.0) {
            return Err(Error::invalid(format!("{what}.mean must be nonnegative")));
        }
        Ok(())
    }
}

/// A latent sub-population; its name becomes the student's demographic value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentGroup {
    pub name: String,
    pub weight: f64,
    /// Added to the engagement mean of the group.
    #[serde(default)]
    pub engagement_offset: f64,
    /// Replaces the cohort's type profile for members of this group.
    #[serde(default)]
    pub profile: Option<TypeProfile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngagementDynamics {
    pub initial_sd: f64,
    pub persistence: f64,
    /// Subtracted from the engagement mean every week.
    pub drift: f64,
    pub innovation_sd: f64,
}

impl Default for EngagementDynamics {
    fn default() -> Self {
        Self {
            initial_sd: 1.0,
            persistence: 0.8,
            drift: 0.08,
            innovation_sd: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    /// Multiplies every rate of the given type. Empty means all ones.
    #[serde(default)]
    pub frequency_scale: Vec<f64>,
    /// Blends the correlation matrix toward identity: `(1-p)C + pI`.
    #[serde(default)]
    pub correlation_perturbation: f64,
    /// Overrides the group weights.
    #[serde(default)]
    pub cohort_mixture_weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub course_id: String,
    #[serde(default)]
    pub offering_id: String,
    pub n_students: usize,
    pub weeks: usize,
    #[serde(default)]
    pub vocabulary: EventVocabulary,
    pub profile: TypeProfile,
    /// `E x E` positive semidefinite copula correlation between types.
    pub correlation: Vec<Vec<f64>>,
    /// Weekly cap per type. Empty means three times the profile mean.
    #[serde(default)]
    pub capacity: Vec<u64>,
    /// Standard deviation of extra independent log-rate noise (overdispersion).
    #[serde(default)]
    pub rate_noise: f64,
    #[serde(default)]
    pub engagement: EngagementDynamics,
    /// Base dropout probability for weeks 1..=T (week 1 is ignored).
    pub dropout_hazard: Vec<f64>,
    pub hazard_sensitivity: f64,
    /// Multiplier on non-video rates once a student has dropped out.
    pub post_dropout_activity: f64,
    #[serde(default)]
    pub groups: Vec<StudentGroup>,
    #[serde(default = "default_attribute")]
    pub demographic_attribute: String,
    #[serde(default)]
    pub shift: DomainShift,
    pub seed: u64,
}

fn default_attribute() -> String {
    "group".into()
}

/// Factor-model correlation: one factor shared by every type plus a block
/// factor per group of types. Video types that start with `play`/`pause`
/// share a strong block.
pub fn default_correlation(vocabulary: &EventVocabulary) -> Vec<Vec<f64>> {
    let e = vocabulary.len();
    let block = |i: usize| -> (usize, f64) {
        let n = &vocabulary.names()[i];
        if n == "play_video" || n == "pause_video" {
            (0, 0.9)
        } else if vocabulary.is_video(i) {
            (1, 0.6)
        } else if n.starts_with("problem") {
            (2, 0.7)
        } else {
            (3, 0.6)
        }
    };
    let shared = 0.3;
    let mut c = vec![vec![0.0; e]; e];
    for i in 0..e {
        for j in 0..e {
            if i == j {
                c[i][j] = 1.0;
                continue;
            }
            let (bi, li) = block(i);
            let (bj, lj) = block(j);
            c[i][j] = shared * shared + if bi == bj { li * lj } else { 0.0 };
        }
    }
    c
}

impl GeneratorConfig {
    pub fn new(course_id: impl Into<String>, n_students: usize, weeks: usize, seed: u64) -> Self {
        let vocabulary = EventVocabulary::default();
        Self {
            course_id: course_id.into(),
            offering_id: String::new(),
            n_students,
            weeks,
            profile: TypeProfile::default_for(&vocabulary),
            correlation: default_correlation(&vocabulary),
            capacity: Vec::new(),
            rate_noise: 0.0,
            engagement: EngagementDynamics::default(),
            dropout_hazard: vec![0.12; weeks],
            hazard_sensitivity: 1.0,
            post_dropout_activity: 0.05,
            groups: Vec::new(),
            demographic_attribute: default_attribute(),
            shift: DomainShift::default(),
            vocabulary,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.vocabulary.len();
        if self.n_students == 0 {
            return Err(Error::invalid("n_students must be at least 1"));
        }
        if self.weeks < 2 {
            return Err(Error::invalid("weeks must be at least 2"));
        }
        self.profile.validate(e, "profile")?;
        for g in &self.groups {
            if let Some(p) = &g.profile {
                p.validate(e, &format!("groups[{}].profile", g.name))?;
            }
            if !(g.weight >= 0.0) {
                return Err(Error::invalid("group weights must be nonnegative"));
            }
        }
        if self.dropout_hazard.len() != self.weeks {
            return Err(Error::invalid(format!(
                "dropout_hazard has {} entries for {} weeks",
                self.dropout_hazard.len(),
                self.weeks
            )));
        }
        if self.dropout_hazard.iter().any(|h| !(0.0..=1.0).contains(h)) {
            return Err(Error::invalid("dropout hazards must lie in [0, 1]"));
        }
        if !self.capacity.is_empty() && self.capacity.len() != e {
            return Err(Error::invalid("capacity needs one entry per event type"));
        }
        if !self.shift.frequency_scale.is_empty() && self.shift.frequency_scale.len() != e {
            return Err(Error::invalid(
                "frequency_scale needs one entry per event type",
            ));
        }
        if self.shift.frequency_scale.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::invalid(
                "frequency_scale entries must be nonnegative",
            ));
        }
        if !(0.0..=1.0).contains(&self.shift.correlation_perturbation) {
            return Err(Error::invalid(
                "correlation_perturbation must lie in [0, 1]",
            ));
        }
        if let Some(w) = &self.shift.cohort_mixture_weights {
            if w.len() != self.groups.len() {
                return Err(Error::invalid(
                    "cohort_mixture_weights must match the groups",
                ));
            }
        }
        if !(self.rate_noise >= 0.0) || !(self.post_dropout_activity >= 0.0) {
            return Err(Error::invalid(
                "rate_noise and post_dropout_activity must be nonnegative",
            ));
        }
        self.noise_factor().map(|_| ())
    }

    pub fn effective_capacity(&self) -> Vec<u64> {
        if self.capacity.is_empty() {
            self.profile
                .mean
                .iter()
                .map(|m| (3.0 * m).ceil().max(1.0) as u64)
                .collect()
        } else {
            self.capacity.clone()
        }
    }

    fn effective_correlation(&self) -> Vec<Vec<f64>> {
        let p = self.shift.correlation_perturbation;
        let mut c = self.correlation.clone();
        for (i, row) in c.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (1.0 - p) * *v + if i == j { p } else { 0.0 };
            }
        }
        c
    }

    fn noise_factor(&self) -> Result<Vec<Vec<f64>>> {
        let e = self.vocabulary.len();
        let c = &self.correlation;
        if c.len() != e || c.iter().any(|r| r.len() != e) {
            return Err(Error::invalid(format!("correlation must be {e}x{e}")));
        }
        for i in 0..e {
            for j in 0..i {
                if (c[i][j] - c[j][i]).abs() > 1e-12 || !c[i][j].is_finite() {
                    return Err(Error::invalid("correlation matrix is not symmetric"));
                }
            }
        }
        psd_factor(&self.effective_correlation())
            .ok_or_else(|| Error::invalid("correlation matrix is not positive semidefinite"))
    }
}

/// Lower-triangular `L` with `L Lᵀ = a` for a positive semidefinite `a`.
fn psd_factor(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-10 * scale;
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            // Semidefinite direction: the remaining column must vanish too.
            for i in j + 1..n {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if s.abs() > 1e-7 * scale {
                    return None;
                }
            }
            continue;
        }
        let d = d.sqrt();
        l[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / d;
        }
    }
    Some(l)
}

/// A generated cohort plus the dropout weeks the generator intended.
#[derive(Clone, Debug)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub dropout_weeks: BTreeMap<String, usize>,
    pub groups: BTreeMap<String, String>,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Smallest `n` with `P(N ≤ n) ≥ u` for `N ~ Poisson(rate)`.
pub(crate) fn poisson_quantile(rate: f64, u: f64) -> u64 {
    if !(rate > 0.0) {
        return 0;
    }
    if rate > 1e4 {
        let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
        return (rate + z * rate.sqrt()).round().max(0.0) as u64;
    }
    let mut p = (-rate).exp();
    let mut cdf = p;
    let mut n = 0u64;
    let cap = (rate + 40.0 * rate.sqrt() + 40.0) as u64;
    while cdf < u && n < cap {
        n += 1;
        p *= rate / n as f64;
        cdf += p;
    }
    n
}

pub fn generate_cohort(config: &GeneratorConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let e = config.vocabulary.len();
    let t_max = config.weeks;
    let factor = config.noise_factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let weights: Vec<f64> = match (
        &config.shift.cohort_mixture_weights,
        config.groups.is_empty(),
    ) {
        (_, true) => vec![1.0],
        (Some(w), false) => w.clone(),
        (None, false) => config.groups.iter().map(|g| g.weight).collect(),
    };
    let total_w: f64 = weights.iter().sum();
    if !(total_w > 0.0) {
        return Err(Error::invalid("group weights sum to zero"));
    }
    let scale = |i: usize| config.shift.frequency_scale.get(i).copied().unwrap_or(1.0);
    let first_video = (0..e)
        .find(|&i| config.vocabulary.is_video(i))
        .expect("validated");
    let width = (config.n_students.max(1) - 1).to_string().len().max(4);

    let mut counts = StudentCounts::new();
    let mut dropout_weeks = BTreeMap::new();
    let mut groups = BTreeMap::new();
    let capacity = config.effective_capacity();
    let mut z = vec![0.0; e];
    let mut noise = vec![0.0; e];
    for s in 0..config.n_students {
        let id = format!("{}-{:0width$}", config.course_id, s);
        // Group membership.
        let mut u = rng.random::<f64>() * total_w;
        let mut gi = 0;
        while gi + 1 < weights.len() && u >= weights[gi] {
            u -= weights[gi];
            gi += 1;
        }
        let group = config.groups.get(gi);
        let offset = group.map_or(0.0, |g| g.engagement_offset);
        let profile = group
            .and_then(|g| g.profile.as_ref())
            .unwrap_or(&config.profile);

        // Engagement trajectory.
        let dyn_ = &config.engagement;
        let mut g = vec![0.0; t_max];
        g[0] = offset + dyn_.initial_sd * std_normal.sample(&mut rng);
        for t in 1..t_max {
            let mean = offset - dyn_.drift * t as f64;
            g[t] = mean
                + dyn_.persistence * (g[t - 1] - (mean + dyn_.drift))
                + dyn_.innovation_sd * std_normal.sample(&mut rng);
        }

        // Dropout week.
        let mut dropout = t_max + 1;
        for k in 2..=t_max {
            let p = (config.dropout_hazard[k - 1] * (-config.hazard_sensitivity * g[k - 1]).exp())
                .clamp(0.0, 1.0);
            if rng.random_bool(p) {
                dropout = k;
                break;
            }
        }

        // Counts.
        let mut m = CountMatrix::zeros(t_max, e);
        for k in 1..=t_max {
            for v in z.iter_mut() {
                *v = std_normal.sample(&mut rng);
            }
            for i in 0..e {
                noise[i] = (0..=i).map(|j| factor[i][j] * z[j]).sum();
            }
            let extra: Vec<f64> = (0..e).map(|_| std_normal.sample(&mut rng)).collect();
            for i in 0..e {
                let video = config.vocabulary.is_video(i);
                if k >= dropout && video {
                    continue;
                }
                let log_rate = -profile.decay[i] * (k - 1) as f64
                    + profile.loading[i] * g[k - 1]
                    + config.rate_noise * extra[i]
                    - 0.5 * config.rate_noise * config.rate_noise;
                let mut rate = profile.mean[i] * scale(i) * log_rate.exp();
                if k >= dropout {
                    rate *= config.post_dropout_activity;
                }
                m.set(
                    k,
                    i,
                    poisson_quantile(rate, std_normal_cdf(noise[i])).min(capacity[i]),
                );
            }
            if k + 1 == dropout {
                let any_video = (0..e).any(|i| config.vocabulary.is_video(i) && m.get(k, i) > 0);
                if !any_video {
                    m.set(k, first_video, 1);
                }
            }
        }
        if let Some(g) = group {
            groups.insert(id.clone(), g.name.clone());
        }
        dropout_weeks.insert(id.clone(), dropout);
        counts.insert(id, m);
    }

    let demographics = (!config.groups.is_empty()).then(|| groups.clone());
    let cohort = Cohort::from_counts(
        config.course_id.clone(),
        config.offering_id.clone(),
        config.vocabulary.clone(),
        t_max,
        counts,
        demographics,
    )?;
    Ok(SyntheticCohort {
        cohort,
        dropout_weeks,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dropout_week_of;

    #[test]
    fn zero_hazard_means_nobody_drops_out() {
        let mut cfg = GeneratorConfig::new("c", 300, 9, 1);
        cfg.dropout_hazard = vec![0.0; 9];
        let s = generate_cohort(&cfg).unwrap();
        for l in s.cohort.labels() {
            assert!(l.as_slice().iter().all(|&y| !y));
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let cfg = GeneratorConfig::new("c", 200, 6, 7);
        let a = generate_cohort(&cfg).unwrap();
        let b = generate_cohort(&cfg).unwrap();
        assert_eq!(a.cohort.counts(), b.cohort.counts());
        assert_eq!(a.dropout_weeks, b.dropout_weeks);
    }

    #[test]
    fn labels_recover_generator_dropout_weeks() {
        let cfg = GeneratorConfig::new("c", 1000, 9, 3);
        let s = generate_cohort(&cfg).unwrap();
        for (i, id) in s.cohort.students().iter().enumerate() {
            let m = &s.cohort.counts()[i];
            assert_eq!(
                dropout_week_of(m, s.cohort.vocabulary()),
                s.dropout_weeks[id]
            );
            assert_eq!(s.cohort.labels()[i].dropout_week, s.dropout_weeks[id]);
        }
    }

    #[test]
    fn rejects_indefinite_correlation() {
        let mut cfg = GeneratorConfig::new("c", 10, 4, 0);
        cfg.correlation[0][1] = 1.5;
        cfg.correlation[1][0] = 1.5;
        assert!(generate_cohort(&cfg).is_err());
        let mut cfg = GeneratorConfig::new("c", 10, 4, 0);
        cfg.correlation[0][1] = 0.2;
        assert!(generate_cohort(&cfg).is_err());
    }

    #[test]
    fn semidefinite_correlation_is_accepted() {
        let mut cfg = GeneratorConfig::new("c", 10, 4, 0);
        cfg.correlation[0][1] = 1.0;
        cfg.correlation[1][0] = 1.0;
        for j in 2..13 {
            cfg.correlation[1][j] = cfg.correlation[0][j];
            cfg.correlation[j][1] = cfg.correlation[j][0];
        }
        generate_cohort(&cfg).unwrap();
    }

    #[test]
    fn group_proportions_follow_mixture() {
        let mut cfg = GeneratorConfig::new("c", 5000, 3, 11);
        cfg.groups = ["high_school", "bachelor", "postgraduate"]
            .iter()
            .zip([0.2, 0.5, 0.3])
            .map(|(n, w)| StudentGroup {
                name: n.to_string(),
                weight: w,
                engagement_offset: 0.0,
                profile: None,
            })
            .collect();
        let s = generate_cohort(&cfg).unwrap();
        let sizes = s.cohort.group_sizes();
        for (name, w) in [
            ("high_school", 0.2),
            ("bachelor", 0.5),
            ("postgraduate", 0.3),
        ] {
            let frac = sizes[name] as f64 / 5000.0;
            assert!((frac - w).abs() <= 0.02, "{name}: {frac}");
        }
        let total: usize = ["high_school", "bachelor", "postgraduate"]
            .iter()
            .map(|v| s.cohort.filter_group(v).unwrap().len())
            .sum();
        assert_eq!(total, s.cohort.len());
    }

    #[test]
    fn correlated_pair_has_correlated_counts() {
        let cfg = GeneratorConfig::new("c", 2000, 4, 5);
        assert!(cfg.correlation[0][1] >= 0.9);
        let s = generate_cohort(&cfg).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for m in s.cohort.counts() {
            xs.push(m.get(1, 0) as f64);
            ys.push(m.get(1, 1) as f64);
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!(r >= 0.6, "count correlation {r}");
    }
}
