use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coral::coral_loss;
use super::kmm::{kmm_weights, InstanceWeights, KmmConfig};
use super::predictor::{Head, Method, Representation, WeeklyPredictor};
use crate::data::{Cohort, ObservedCohort, WeekSlice};
use crate::error::{Error, Result};
use crate::nn::{bce_loss, fit_binary, mse_loss, presets, AdamState, Network, Tensor, TrainConfig};
use crate::repr::{
    balanced_order, encode, fit_tpca_and_align, train_autoencoder, AeConfig, AeKind,
    AutoencoderModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    pub epochs: usize,
    /// Total batch; half source, half target.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_pred: f64,
    pub lambda_recon: f64,
    pub lambda_coral: f64,
    pub ae_kind: AeKind,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.001,
            lambda_pred: 0.008,
            lambda_recon: 1.0,
            lambda_coral: 1000.0,
            ae_kind: AeKind::Lstm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    /// Training of every predictor head (LSTM on raw, CNN on embeddings).
    pub predictor: TrainConfig,
    pub autoencoder: AeConfig,
    pub tpca_out: usize,
    pub active: ActiveConfig,
    pub kmm: KmmConfig,
    /// In-situ window; `None` uses the widest window, `k − 2`.
    pub in_situ_window: Option<usize>,
    /// Fraction of the target used for training by the no-transfer baselines.
    pub train_fraction: f64,
    pub at_risk_only: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            predictor: TrainConfig::default(),
            autoencoder: AeConfig::default(),
            tpca_out: 6,
            active: ActiveConfig::default(),
            kmm: KmmConfig::default(),
            in_situ_window: None,
            train_fraction: 0.8,
            at_risk_only: true,
        }
    }
}

/// Seeds for the independent random streams of one cell.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const NET: u64 = 1;
const FIT: u64 = 2;
const AE: u64 = 3;
const SPLIT: u64 = 4;
const KMM: u64 = 5;

/// Target students scored at week `k` and their features; uses only
/// observations before `k`.
pub fn target_population(
    target: &ObservedCohort,
    at_risk_only: bool,
) -> Result<(Vec<usize>, Tensor)> {
    let k = target.week();
    let rows = if at_risk_only {
        target.active_at(k - 1)?
    } else {
        (0..target.len()).collect()
    };
    let x = target.features(&rows, 1..=k - 1)?;
    Ok((rows, x))
}

fn check_slice(slice: &WeekSlice, what: &str) -> Result<()> {
    if slice.is_empty() {
        return Err(Error::invalid(format!(
            "{what} has no students at week {}",
            slice.week
        )));
    }
    Ok(())
}

fn lstm_head(time: usize, channels: usize, seed: u64) -> Result<Network> {
    Network::build(
        presets::lstm_predictor(),
        &[time, channels],
        sub_seed(seed, NET),
    )
}

fn cnn_head(time: usize, channels: usize, seed: u64) -> Result<Network> {
    Network::build(
        presets::cnn_predictor(),
        &[time, channels],
        sub_seed(seed, NET),
    )
}

/// LSTM on raw source features, applied unchanged to the target.
pub fn train_naive(
    source: &Cohort,
    week: usize,
    config: &MethodConfig,
    seed: u64,
) -> Result<WeeklyPredictor> {
    train_weighted(Method::Naive, source, week, None, config, seed)
}

fn train_weighted(
    method: Method,
    source: &Cohort,
    week: usize,
    weights: Option<&[f64]>,
    config: &MethodConfig,
    seed: u64,
) -> Result<WeeklyPredictor> {
    let s = source.slice_for_week(week, config.at_risk_only)?;
    check_slice(&s, "source")?;
    let shape = s.features.sample_shape().to_vec();
    let mut net = lstm_head(shape[0], shape[1], seed)?;
    fit_binary(
        &mut net,
        &s.features,
        &s.labels,
        weights,
        &config.predictor,
        sub_seed(seed, FIT),
    )?;
    Ok(WeeklyPredictor::new(
        method,
        week,
        Representation::Raw,
        Head::Network { network: net },
    ))
}

/// Source students weighted by kernel mean matching toward the target.
pub fn train_instance(
    source: &Cohort,
    target: &ObservedCohort,
    config: &MethodConfig,
    seed: u64,
) -> Result<(WeeklyPredictor, InstanceWeights)> {
    let week = target.week();
    let s = source.slice_for_week(week, config.at_risk_only)?;
    check_slice(&s, "source")?;
    let (_, xt) = target_population(target, config.at_risk_only)?;
    let w = kmm_weights(&s.features, &xt, &config.kmm, sub_seed(seed, KMM))?;
    let p = train_weighted(
        Method::Instance,
        source,
        week,
        Some(&w.weights),
        config,
        seed,
    )?;
    Ok((p, w))
}

/// Autoencoder on the source/target union, T-PCA fit on the target
/// embedding, CNN trained on the aligned source embedding.
pub fn train_passive(
    source: &Cohort,
    target: &ObservedCohort,
    config: &MethodConfig,
    seed: u64,
) -> Result<WeeklyPredictor> {
    let week = target.week();
    let s = source.slice_for_week(week, config.at_risk_only)?;
    check_slice(&s, "source")?;
    let (rows, xt) = target_population(target, config.at_risk_only)?;
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "target has no students at week {week}"
        )));
    }
    let (ae, _) = train_autoencoder(&[&s.features, &xt], &config.autoencoder, sub_seed(seed, AE))?;
    let es = encode(&ae, &s.features)?;
    let et = encode(&ae, &xt)?;
    let aligned = fit_tpca_and_align(&et, &es, config.tpca_out)?;
    let mut net = cnn_head(week - 1, config.tpca_out, seed)?;
    fit_binary(
        &mut net,
        aligned.source.tensor(),
        &s.labels,
        None,
        &config.predictor,
        sub_seed(seed, FIT),
    )?;
    Ok(WeeklyPredictor::new(
        Method::Passive,
        week,
        Representation::AutoencoderTpca {
            model: ae,
            tpca: aligned.model,
        },
        Head::Network { network: net },
    ))
}

/// Loss components averaged over one epoch of active training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActiveLosses {
    pub prediction: f64,
    pub reconstruction: f64,
    pub coral: f64,
    pub total: f64,
}

/// Jointly trains encoder, CNN head and decoder: prediction loss on source
/// batches, reconstruction on target batches, CORAL between the two batch
/// embeddings.
pub fn train_active_model(
    xs: &Tensor,
    ys: &[bool],
    xt: &Tensor,
    config: &ActiveConfig,
    bottleneck: usize,
    seed: u64,
) -> Result<(AutoencoderModel, Network, Vec<ActiveLosses>)> {
    let shape = xs.sample_shape().to_vec();
    if shape.len() != 2 || xt.sample_shape() != shape.as_slice() {
        return Err(Error::shape(format!(
            "source samples {:?} and target samples {:?} differ",
            xs.sample_shape(),
            xt.sample_shape()
        )));
    }
    let (ns, nt) = (xs.batch(), xt.batch());
    if ns < 2 || nt < 2 {
        return Err(Error::invalid(
            "active transfer needs at least two source and target students",
        ));
    }
    let (time, channels) = (shape[0], shape[1]);
    let mut ae = AutoencoderModel::new(
        config.ae_kind,
        time,
        channels,
        bottleneck,
        sub_seed(seed, AE),
    )?;
    let mut head = cnn_head(time, bottleneck, seed)?;
    let lr = config.learning_rate;
    let mut adam_e = AdamState::new(ae.encoder.num_params(), lr);
    let mut adam_d = AdamState::new(ae.decoder.num_params(), lr);
    let mut adam_h = AdamState::new(head.num_params(), lr);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, FIT));
    let half = (config.batch_size / 2).max(2);
    let emb_len = time * bottleneck;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        // Both sides cycled to the larger cohort's length.
        let order = balanced_order(&[ns, nt], &mut rng);
        let (mut src, mut tgt): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| i < ns);
        tgt.iter_mut().for_each(|i| *i -= ns);
        src.shuffle(&mut rng);
        tgt.shuffle(&mut rng);
        let steps = src.len().div_ceil(half);
        let mut sums = ActiveLosses::default();
        for step in 0..steps {
            let sb = &src[step * half..((step + 1) * half).min(src.len())];
            let tb = &tgt[step * half..((step + 1) * half).min(tgt.len())];
            if sb.len() < 2 || tb.len() < 2 {
                continue;
            }
            let (bs, bt) = (sb.len(), tb.len());
            let x_s = xs.select(sb);
            let x_t = xt.select(tb);
            let z = ae.encoder.forward(&Tensor::concat(&[&x_s, &x_t])?)?;
            let (zs, zt) = z.split_at(bs);

            let p = head.forward(&zs.clone().reshape(vec![bs, time, bottleneck])?)?;
            let y: Vec<bool> = sb.iter().map(|&i| ys[i]).collect();
            let (l_pred, g_pred) = bce_loss(p.data(), &y, None)?;
            let gh = head.backward(&Tensor::new(vec![bs, 1], g_pred)?)?;

            let r = ae.decoder.forward(&zt)?;
            let (l_rec, g_rec) = mse_loss(&r, &x_t)?;
            let gd = ae.decoder.backward(&g_rec)?;

            let coral = coral_loss(&zs, &zt)?;
            let total = config.lambda_pred * l_pred
                + config.lambda_recon * l_rec
                + config.lambda_coral * coral.loss;
            if !total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!(
                        "prediction {l_pred}, reconstruction {l_rec}, coral {}",
                        coral.loss
                    ),
                });
            }

            let mut gz = vec![0.0; (bs + bt) * emb_len];
            let (gzs, gzt) = gz.split_at_mut(bs * emb_len);
            for (i, g) in gzs.iter_mut().enumerate() {
                *g = config.lambda_pred * gh.input.data()[i]
                    + config.lambda_coral * coral.grad_source.data()[i];
            }
            for (i, g) in gzt.iter_mut().enumerate() {
                *g = config.lambda_recon * gd.input.data()[i]
                    + config.lambda_coral * coral.grad_target.data()[i];
            }
            let ge = ae
                .encoder
                .backward(&Tensor::new(vec![bs + bt, emb_len], gz)?)?;

            let scaled = |g: &[f64], s: f64| -> Vec<f64> { g.iter().map(|v| v * s).collect() };
            adam_h.update(head.params_mut(), &scaled(&gh.params, config.lambda_pred))?;
            adam_d.update(
                ae.decoder.params_mut(),
                &scaled(&gd.params, config.lambda_recon),
            )?;
            adam_e.update(ae.encoder.params_mut(), &ge.params)?;

            sums.prediction += l_pred;
            sums.reconstruction += l_rec;
            sums.coral += coral.loss;
            sums.total += total;
        }
        let s = steps.max(1) as f64;
        trace.push(ActiveLosses {
            prediction: sums.prediction / s,
            reconstruction: sums.reconstruction / s,
            coral: sums.coral / s,
            total: sums.total / s,
        });
    }
    Ok((ae, head, trace))
}

pub fn train_active(
    source: &Cohort,
    target: &ObservedCohort,
    config: &MethodConfig,
    seed: u64,
) -> Result<WeeklyPredictor> {
    let week = target.week();
    let s = source.slice_for_week(week, config.at_risk_only)?;
    check_slice(&s, "source")?;
    let (_, xt) = target_population(target, config.at_risk_only)?;
    let (ae, head, _) = train_active_model(
        &s.features,
        &s.labels,
        &xt,
        &config.active,
        config.autoencoder.bottleneck,
        seed,
    )?;
    Ok(WeeklyPredictor::new(
        Method::Active,
        week,
        Representation::Autoencoder { model: ae },
        Head::Network { network: head },
    ))
}

/// Self-transfer inside the target: trains on weeks `[k−1−w, k−2]` against
/// the observed dropout of week `k−1`, then predicts week `k` from the
/// window shifted by one. Week 2 has no window and falls back to a constant.
pub fn train_in_situ(
    target: &ObservedCohort,
    config: &MethodConfig,
    seed: u64,
) -> Result<WeeklyPredictor> {
    let k = target.week();
    let constant = |value: f64| {
        let mut p = WeeklyPredictor::new(
            Method::InSitu,
            k,
            Representation::Raw,
            Head::Constant { value },
        );
        p.fallback = true;
        p
    };
    if k < 3 {
        return Ok(constant(0.0));
    }
    let w = match config.in_situ_window {
        Some(0) => return Err(Error::invalid("in-situ window must be at least 1")),
        Some(w) => w.min(k - 2),
        None => k - 2,
    };
    let rows = if config.at_risk_only {
        if k - 2 >= 1 {
            target.active_at(k - 2)?
        } else {
            (0..target.len()).collect()
        }
    } else {
        (0..target.len()).collect()
    };
    if rows.is_empty() {
        return Ok(constant(0.0));
    }
    let x = target.features(&rows, (k - 1 - w)..=(k - 2))?;
    let y = rows
        .iter()
        .map(|&r| target.label(r, k - 1))
        .collect::<Result<Vec<bool>>>()?;
    let rate = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    if rate == 0.0 || rate == 1.0 {
        return Ok(constant(rate));
    }
    let mut net = lstm_head(w, target.vocabulary().len(), seed)?;
    fit_binary(
        &mut net,
        &x,
        &y,
        None,
        &config.predictor,
        sub_seed(seed, FIT),
    )?;
    let mut p = WeeklyPredictor::new(
        Method::InSitu,
        k,
        Representation::Raw,
        Head::Network { network: net },
    );
    p.window = Some(w);
    Ok(p)
}

/// A no-transfer predictor and the held-out rows (indices into the target's
/// week slice) it must be scored on.
#[derive(Clone, Debug)]
pub struct NoTransferFit {
    pub predictor: WeeklyPredictor,
    pub slice: WeekSlice,
    pub test_rows: Vec<usize>,
}

/// Shuffled split of `n` rows into train and test parts.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(n_train.min(n));
    (idx, test)
}

/// Trained on target features and labels (4:1 split).
pub fn train_no_transfer(
    target: &Cohort,
    week: usize,
    use_ae: bool,
    config: &MethodConfig,
    seed: u64,
) -> Result<NoTransferFit> {
    let slice = target.slice_for_week(week, config.at_risk_only)?;
    check_slice(&slice, "target")?;
    let (train, test) = train_test_split(slice.len(), config.train_fraction, sub_seed(seed, SPLIT));
    let tr = slice.subset(&train);
    let predictor = if use_ae {
        let (ae, _) = train_autoencoder(&[&tr.features], &config.autoencoder, sub_seed(seed, AE))?;
        let emb = encode(&ae, &tr.features)?;
        let mut net = cnn_head(week - 1, config.autoencoder.bottleneck, seed)?;
        fit_binary(
            &mut net,
            emb.tensor(),
            &tr.labels,
            None,
            &config.predictor,
            sub_seed(seed, FIT),
        )?;
        WeeklyPredictor::new(
            Method::NoTransferAe,
            week,
            Representation::Autoencoder { model: ae },
            Head::Network { network: net },
        )
    } else {
        let shape = tr.features.sample_shape().to_vec();
        let mut net = lstm_head(shape[0], shape[1], seed)?;
        fit_binary(
            &mut net,
            &tr.features,
            &tr.labels,
            None,
            &config.predictor,
            sub_seed(seed, FIT),
        )?;
        WeeklyPredictor::new(
            Method::NoTransfer,
            week,
            Representation::Raw,
            Head::Network { network: net },
        )
    };
    Ok(NoTransferFit {
        predictor,
        slice,
        test_rows: test,
    })
}

/// Trains any label-free method. Target labels of week `k` and later are
/// not reachable through `target`.
pub fn train_transfer(
    method: Method,
    source: &Cohort,
    target: &ObservedCohort,
    config: &MethodConfig,
    seed: u64,
) -> Result<WeeklyPredictor> {
    if source.vocabulary() != target.vocabulary() {
        return Err(Error::invalid(
            "source and target use different event vocabularies",
        ));
    }
    match method {
        Method::Passive => train_passive(source, target, config, seed),
        Method::Active => train_active(source, target, config, seed),
        Method::Naive => train_naive(source, target.week(), config, seed),
        Method::Instance => train_instance(source, target, config, seed).map(|(p, _)| p),
        Method::InSitu => train_in_situ(target, config, seed),
        Method::NoTransfer | Method::NoTransferAe => Err(Error::invalid(format!(
            "{method} trains on target labels; use train_no_transfer"
        ))),
    }
}
