//! Single-direction LSTM over `[batch, time, channels]` sequences.
//!
//! Parameters are laid out as `W_x` (4H x C), `W_h` (4H x H), then the bias
//! (4H), with gate rows ordered input, forget, candidate, output.

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn param_count(channels: usize, cells: usize) -> usize {
    4 * cells * (channels + cells + 1)
}

#[derive(Clone, Debug)]
pub(crate) struct LstmCache {
    /// Post-activation gates per step, `[batch, time, 4H]`, indexed by step.
    gates: Vec<f64>,
    /// Cell state per step, `[batch, time, H]`.
    cell: Vec<f64>,
    /// Hidden state per step, `[batch, time, H]`.
    hidden: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmDims {
    pub batch: usize,
    pub time: usize,
    pub channels: usize,
    pub cells: usize,
    pub reverse: bool,
}

impl LstmDims {
    #[inline]
    fn time_of(&self, step: usize) -> usize {
        if self.reverse {
            self.time - 1 - step
        } else {
            step
        }
    }
}

/// Runs the recurrence and writes hidden states into `out`, which has
/// `out_stride` channels per time step starting at channel `out_offset`.
pub(crate) fn forward(
    params: &[f64],
    input: &[f64],
    dims: LstmDims,
    out: &mut [f64],
    out_stride: usize,
    out_offset: usize,
    record: bool,
) -> Option<LstmCache> {
    let LstmDims {
        batch,
        time,
        channels: c,
        cells: h,
        ..
    } = dims;
    let g4 = 4 * h;
    let (wx, rest) = params.split_at(g4 * c);
    let (wh, bias) = rest.split_at(g4 * h);

    let mut cache = record.then(|| LstmCache {
        gates: vec![0.0; batch * time * g4],
        cell: vec![0.0; batch * time * h],
        hidden: vec![0.0; batch * time * h],
    });

    let mut z = vec![0.0; g4];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for b in 0..batch {
        h_prev.iter_mut().for_each(|v| *v = 0.0);
        c_prev.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..time {
            let t = dims.time_of(s);
            let x = &input[(b * time + t) * c..(b * time + t + 1) * c];
            for r in 0..g4 {
                let mut acc = bias[r];
                let wxr = &wx[r * c..(r + 1) * c];
                for k in 0..c {
                    acc += wxr[k] * x[k];
                }
                let whr = &wh[r * h..(r + 1) * h];
                for k in 0..h {
                    acc += whr[k] * h_prev[k];
                }
                z[r] = acc;
            }
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let g_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                let c_new = f_g * c_prev[j] + i_g * g_g;
                let h_new = o_g * c_new.tanh();
                z[j] = i_g;
                z[h + j] = f_g;
                z[2 * h + j] = g_g;
                z[3 * h + j] = o_g;
                c_prev[j] = c_new;
                h_prev[j] = h_new;
            }
            let o = (b * time + t) * out_stride + out_offset;
            out[o..o + h].copy_from_slice(&h_prev);
            if let Some(cache) = cache.as_mut() {
                let base = b * time + s;
                cache.gates[base * g4..(base + 1) * g4].copy_from_slice(&z);
                cache.cell[base * h..(base + 1) * h].copy_from_slice(&c_prev);
                cache.hidden[base * h..(base + 1) * h].copy_from_slice(&h_prev);
            }
        }
    }
    cache
}

/// Backpropagation through time. Reads the output gradient from `grad_out`
/// (same strided layout as the forward output), accumulates parameter
/// gradients into `grad_params` and input gradients into `grad_in`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    params: &[f64],
    input: &[f64],
    cache: &LstmCache,
    dims: LstmDims,
    grad_out: &[f64],
    out_stride: usize,
    out_offset: usize,
    grad_params: &mut [f64],
    grad_in: &mut [f64],
) {
    let LstmDims {
        batch,
        time,
        channels: c,
        cells: h,
        ..
    } = dims;
    let g4 = 4 * h;
    let (wx, rest) = params.split_at(g4 * c);
    let (wh, _) = rest.split_at(g4 * h);
    let (gwx, grest) = grad_params.split_at_mut(g4 * c);
    let (gwh, gb) = grest.split_at_mut(g4 * h);

    let mut dz = vec![0.0; g4];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zeros = vec![0.0; h];
    for b in 0..batch {
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        dc_next.iter_mut().for_each(|v| *v = 0.0);
        for s in (0..time).rev() {
            let t = dims.time_of(s);
            let base = b * time + s;
            let gates = &cache.gates[base * g4..(base + 1) * g4];
            let cell = &cache.cell[base * h..(base + 1) * h];
            let (c_prev, h_prev) = if s == 0 {
                (&zeros[..], &zeros[..])
            } else {
                let pb = base - 1;
                (
                    &cache.cell[pb * h..(pb + 1) * h],
                    &cache.hidden[pb * h..(pb + 1) * h],
                )
            };
            let go = (b * time + t) * out_stride + out_offset;
            for j in 0..h {
                let dh = grad_out[go + j] + dh_next[j];
                let i_g = gates[j];
                let f_g = gates[h + j];
                let g_g = gates[2 * h + j];
                let o_g = gates[3 * h + j];
                let tc = cell[j].tanh();
                let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                dz[j] = dc * g_g * i_g * (1.0 - i_g);
                dz[h + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
                dz[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                dz[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            let x = &input[(b * time + t) * c..(b * time + t + 1) * c];
            let dx = &mut grad_in[(b * time + t) * c..(b * time + t + 1) * c];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..g4 {
                let d = dz[r];
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                let wxr = &wx[r * c..(r + 1) * c];
                let gwxr = &mut gwx[r * c..(r + 1) * c];
                for k in 0..c {
                    gwxr[k] += d * x[k];
                    dx[k] += d * wxr[k];
                }
                let whr = &wh[r * h..(r + 1) * h];
                let gwhr = &mut gwh[r * h..(r + 1) * h];
                for k in 0..h {
                    gwhr[k] += d * h_prev[k];
                    dh_next[k] += d * whr[k];
                }
            }
        }
    }
}
