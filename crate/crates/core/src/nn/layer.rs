use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{self, LstmCache, LstmDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One stage of a feed-forward chain. Shapes exclude the batch axis:
/// sequence layers take `[time, channels]`, `Dense` takes a flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    /// Zero "same" padding, so the sequence length is preserved.
    Conv1d {
        channels: usize,
        kernel: usize,
    },
    Lstm {
        cells: usize,
    },
    /// Forward and backward hidden sequences concatenated on the channel axis.
    BiLstm {
        cells: usize,
    },
    Sigmoid,
    Relu,
    LeakyRelu {
        alpha: f64,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn conv1d(channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d { channels, kernel }
    }

    pub fn lstm(cells: usize) -> Self {
        LayerSpec::Lstm { cells }
    }

    pub fn bilstm(cells: usize) -> Self {
        LayerSpec::BiLstm { cells }
    }

    pub fn leaky_relu(alpha: f64) -> Self {
        LayerSpec::LeakyRelu { alpha }
    }

    pub fn reshape(shape: Vec<usize>) -> Self {
        LayerSpec::Reshape { shape }
    }

    fn config_err(index: usize, message: impl Into<String>) -> Error {
        Error::Config {
            layer: index,
            message: message.into(),
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize], index: usize) -> Result<Vec<usize>> {
        let seq = |what: &str| -> Result<(usize, usize)> {
            match input {
                [t, c] if *t >= 1 && *c >= 1 => Ok((*t, *c)),
                _ => Err(Self::config_err(
                    index,
                    format!("{what} expects a [time, channels] input, got {input:?}"),
                )),
            }
        };
        match self {
            LayerSpec::Dense { units } => {
                if *units == 0 {
                    return Err(Self::config_err(index, "Dense needs at least one unit"));
                }
                match input {
                    [d] if *d >= 1 => Ok(vec![*units]),
                    _ => Err(Self::config_err(
                        index,
                        format!("Dense expects a flat input, got {input:?}"),
                    )),
                }
            }
            LayerSpec::Conv1d { channels, kernel } => {
                if *channels == 0 || *kernel == 0 {
                    return Err(Self::config_err(
                        index,
                        "Conv1D channels and kernel size must be positive",
                    ));
                }
                let (t, _) = seq("Conv1D")?;
                Ok(vec![t, *channels])
            }
            LayerSpec::Lstm { cells } | LayerSpec::BiLstm { cells } => {
                if *cells == 0 {
                    return Err(Self::config_err(index, "LSTM needs at least one cell"));
                }
                let (t, _) = seq("LSTM")?;
                let width = if matches!(self, LayerSpec::BiLstm { .. }) {
                    2 * cells
                } else {
                    *cells
                };
                Ok(vec![t, width])
            }
            LayerSpec::LeakyRelu { alpha } if !(*alpha > 0.0 && *alpha < 1.0) => Err(
                Self::config_err(index, format!("LeakyReLU alpha {alpha} outside (0, 1)")),
            ),
            LayerSpec::Sigmoid | LayerSpec::Relu | LayerSpec::LeakyRelu { .. } => {
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                let want: usize = shape.iter().product();
                let have: usize = input.iter().product();
                if want != have || shape.is_empty() {
                    return Err(Self::config_err(
                        index,
                        format!("cannot reshape {input:?} into {shape:?}"),
                    ));
                }
                Ok(shape.clone())
            }
        }
    }

    pub(crate) fn param_count(&self, input: &[usize]) -> usize {
        match self {
            LayerSpec::Dense { units } => units * (input[0] + 1),
            LayerSpec::Conv1d { channels, kernel } => channels * (kernel * input[1] + 1),
            LayerSpec::Lstm { cells } => lstm::param_count(input[1], *cells),
            LayerSpec::BiLstm { cells } => 2 * lstm::param_count(input[1], *cells),
            _ => 0,
        }
    }

    /// Glorot-uniform weights, zero biases, LSTM forget-gate bias of one.
    pub(crate) fn init<R: Rng>(&self, input: &[usize], params: &mut [f64], rng: &mut R) {
        fn glorot<R: Rng>(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w {
                *v = rng.random_range(-s..=s);
            }
        }
        fn init_lstm<R: Rng>(p: &mut [f64], c: usize, h: usize, rng: &mut R) {
            let (wx, rest) = p.split_at_mut(4 * h * c);
            let (wh, b) = rest.split_at_mut(4 * h * h);
            glorot(wx, c, 4 * h, rng);
            glorot(wh, h, 4 * h, rng);
            b.iter_mut().for_each(|v| *v = 0.0);
            b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        }
        match self {
            LayerSpec::Dense { units } => {
                let d = input[0];
                let (w, b) = params.split_at_mut(units * d);
                glorot(w, d, *units, rng);
                b.iter_mut().for_each(|v| *v = 0.0);
            }
            LayerSpec::Conv1d { channels, kernel } => {
                let c = input[1];
                let (w, b) = params.split_at_mut(channels * kernel * c);
                glorot(w, kernel * c, kernel * channels, rng);
                b.iter_mut().for_each(|v| *v = 0.0);
            }
            LayerSpec::Lstm { cells } => init_lstm(params, input[1], *cells, rng),
            LayerSpec::BiLstm { cells } => {
                let n = lstm::param_count(input[1], *cells);
                let (fwd, bwd) = params.split_at_mut(n);
                init_lstm(fwd, input[1], *cells, rng);
                init_lstm(bwd, input[1], *cells, rng);
            }
            _ => {}
        }
    }

    pub(crate) fn forward(
        &self,
        params: &[f64],
        input: &Tensor,
        out_sample: &[usize],
        record: bool,
    ) -> (Tensor, Option<Cache>) {
        let batch = input.batch();
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(out_sample);
        let x = input.data();
        match self {
            LayerSpec::Dense { units } => {
                let d = input.sample_len();
                let n = *units;
                let (w, bias) = params.split_at(n * d);
                let mut y = vec![0.0; batch * n];
                for b in 0..batch {
                    let xb = &x[b * d..(b + 1) * d];
                    for j in 0..n {
                        let wj = &w[j * d..(j + 1) * d];
                        let mut acc = bias[j];
                        for i in 0..d {
                            acc += wj[i] * xb[i];
                        }
                        y[b * n + j] = acc;
                    }
                }
                let cache = record.then(|| Cache::Input(input.clone()));
                (Tensor::new(out_shape, y).expect("dense shape"), cache)
            }
            LayerSpec::Conv1d { channels, kernel } => {
                let (t, c) = (input.shape()[1], input.shape()[2]);
                let (o, k) = (*channels, *kernel);
                let pad = (k - 1) / 2;
                let (w, bias) = params.split_at(o * k * c);
                let mut y = vec![0.0; batch * t * o];
                for b in 0..batch {
                    for ti in 0..t {
                        let yo = &mut y[(b * t + ti) * o..(b * t + ti + 1) * o];
                        yo.copy_from_slice(bias);
                        for q in 0..k {
                            let src = ti as isize + q as isize - pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let xs = &x[(b * t + src as usize) * c..(b * t + src as usize + 1) * c];
                            for (oc, yv) in yo.iter_mut().enumerate() {
                                let wrow = &w[(oc * k + q) * c..(oc * k + q + 1) * c];
                                let mut acc = 0.0;
                                for i in 0..c {
                                    acc += wrow[i] * xs[i];
                                }
                                *yv += acc;
                            }
                        }
                    }
                }
                let cache = record.then(|| Cache::Input(input.clone()));
                (Tensor::new(out_shape, y).expect("conv shape"), cache)
            }
            LayerSpec::Lstm { cells } => {
                let (t, c) = (input.shape()[1], input.shape()[2]);
                let dims = LstmDims {
                    batch,
                    time: t,
                    channels: c,
                    cells: *cells,
                    reverse: false,
                };
                let mut y = vec![0.0; batch * t * cells];
                let lc = lstm::forward(params, x, dims, &mut y, *cells, 0, record);
                let cache = lc.map(|lc| Cache::Lstm {
                    input: input.clone(),
                    fwd: lc,
                    bwd: None,
                });
                (Tensor::new(out_shape, y).expect("lstm shape"), cache)
            }
            LayerSpec::BiLstm { cells } => {
                let (t, c) = (input.shape()[1], input.shape()[2]);
                let n = lstm::param_count(c, *cells);
                let mut dims = LstmDims {
                    batch,
                    time: t,
                    channels: c,
                    cells: *cells,
                    reverse: false,
                };
                let stride = 2 * cells;
                let mut y = vec![0.0; batch * t * stride];
                let f = lstm::forward(&params[..n], x, dims, &mut y, stride, 0, record);
                dims.reverse = true;
                let r = lstm::forward(&params[n..], x, dims, &mut y, stride, *cells, record);
                let cache = f.zip(r).map(|(f, r)| Cache::Lstm {
                    input: input.clone(),
                    fwd: f,
                    bwd: Some(r),
                });
                (Tensor::new(out_shape, y).expect("bilstm shape"), cache)
            }
            LayerSpec::Sigmoid => {
                let y: Vec<f64> = x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
                let out = Tensor::new(out_shape, y).expect("sigmoid shape");
                let cache = record.then(|| Cache::Output(out.clone()));
                (out, cache)
            }
            LayerSpec::Relu => {
                let y: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
                let cache = record.then(|| Cache::Input(input.clone()));
                (Tensor::new(out_shape, y).expect("relu shape"), cache)
            }
            LayerSpec::LeakyRelu { alpha } => {
                let y: Vec<f64> = x
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { alpha * v })
                    .collect();
                let cache = record.then(|| Cache::Input(input.clone()));
                (Tensor::new(out_shape, y).expect("leaky shape"), cache)
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => {
                let out = input.clone().reshape(out_shape).expect("reshape");
                (out, record.then_some(Cache::Nothing))
            }
        }
    }

    /// Returns the input gradient; parameter gradients are accumulated into
    /// `grad_params`.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        cache: &Cache,
        grad_out: &Tensor,
        in_sample: &[usize],
        grad_params: &mut [f64],
    ) -> Tensor {
        let batch = grad_out.batch();
        let mut in_shape = vec![batch];
        in_shape.extend_from_slice(in_sample);
        let g = grad_out.data();
        match (self, cache) {
            (LayerSpec::Dense { units }, Cache::Input(input)) => {
                let d = input.sample_len();
                let n = *units;
                let x = input.data();
                let (w, _) = params.split_at(n * d);
                let (gw, gb) = grad_params.split_at_mut(n * d);
                let mut dx = vec![0.0; batch * d];
                for b in 0..batch {
                    let xb = &x[b * d..(b + 1) * d];
                    let dxb = &mut dx[b * d..(b + 1) * d];
                    for j in 0..n {
                        let gj = g[b * n + j];
                        if gj == 0.0 {
                            continue;
                        }
                        gb[j] += gj;
                        let wj = &w[j * d..(j + 1) * d];
                        let gwj = &mut gw[j * d..(j + 1) * d];
                        for i in 0..d {
                            gwj[i] += gj * xb[i];
                            dxb[i] += gj * wj[i];
                        }
                    }
                }
                Tensor::new(in_shape, dx).expect("dense grad shape")
            }
            (LayerSpec::Conv1d { channels, kernel }, Cache::Input(input)) => {
                let (t, c) = (input.shape()[1], input.shape()[2]);
                let (o, k) = (*channels, *kernel);
                let pad = (k - 1) / 2;
                let x = input.data();
                let (w, _) = params.split_at(o * k * c);
                let (gw, gb) = grad_params.split_at_mut(o * k * c);
                let mut dx = vec![0.0; batch * t * c];
                for b in 0..batch {
                    for ti in 0..t {
                        let go = &g[(b * t + ti) * o..(b * t + ti + 1) * o];
                        for (oc, &gv) in go.iter().enumerate() {
                            gb[oc] += gv;
                        }
                        for q in 0..k {
                            let src = ti as isize + q as isize - pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let s = (b * t + src as usize) * c;
                            for (oc, &gv) in go.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let wi = (oc * k + q) * c;
                                for i in 0..c {
                                    gw[wi + i] += gv * x[s + i];
                                    dx[s + i] += gv * w[wi + i];
                                }
                            }
                        }
                    }
                }
                Tensor::new(in_shape, dx).expect("conv grad shape")
            }
            (LayerSpec::Lstm { cells }, Cache::Lstm { input, fwd, .. }) => {
                let (t, c) = (input.shape()[1], input.shape()[2]);
                let dims = LstmDims {
                    batch,
                    time: t,
                    channels: c,
                    cells: *cells,
                    reverse: false,
                };
                let mut dx = vec![0.0; batch * t * c];
                lstm::backward(
                    params,
                    input.data(),
                    fwd,
                    dims,
                    g,
                    *cells,
                    0,
                    grad_params,
                    &mut dx,
                );
                Tensor::new(in_shape, dx).expect("lstm grad shape")
            }
            (
                LayerSpec::BiLstm { cells },
                Cache::Lstm {
                    input,
                    fwd,
                    bwd: Some(bwd),
                },
            ) => {
                let (t, c) = (input.shape()[1], input.shape()[2]);
                let n = lstm::param_count(c, *cells);
                let mut dims = LstmDims {
                    batch,
                    time: t,
                    channels: c,
                    cells: *cells,
                    reverse: false,
                };
                let stride = 2 * cells;
                let mut dx = vec![0.0; batch * t * c];
                let (gf, gr) = grad_params.split_at_mut(n);
                lstm::backward(
                    &params[..n],
                    input.data(),
                    fwd,
                    dims,
                    g,
                    stride,
                    0,
                    gf,
                    &mut dx,
                );
                dims.reverse = true;
                lstm::backward(
                    &params[n..],
                    input.data(),
                    bwd,
                    dims,
                    g,
                    stride,
                    *cells,
                    gr,
                    &mut dx,
                );
                Tensor::new(in_shape, dx).expect("bilstm grad shape")
            }
            (LayerSpec::Sigmoid, Cache::Output(out)) => {
                let dx = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| gv * y * (1.0 - y))
                    .collect();
                Tensor::new(in_shape, dx).expect("sigmoid grad shape")
            }
            (LayerSpec::Relu, Cache::Input(input)) => {
                let dx = g
                    .iter()
                    .zip(input.data())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                Tensor::new(in_shape, dx).expect("relu grad shape")
            }
            (LayerSpec::LeakyRelu { alpha }, Cache::Input(input)) => {
                let dx = g
                    .iter()
                    .zip(input.data())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { alpha * gv })
                    .collect();
                Tensor::new(in_shape, dx).expect("leaky grad shape")
            }
            (LayerSpec::Flatten | LayerSpec::Reshape { .. }, Cache::Nothing) => {
                grad_out.clone().reshape(in_shape).expect("reshape grad")
            }
            _ => unreachable!("cache recorded by a different layer kind"),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Cache {
    Input(Tensor),
    Output(Tensor),
    Lstm {
        input: Tensor,
        fwd: LstmCache,
        bwd: Option<LstmCache>,
    },
    Nothing,
}
