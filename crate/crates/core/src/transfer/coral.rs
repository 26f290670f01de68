use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::repr::covariance;

/// CORAL loss value with its gradients with respect to both embedding sets.
#[derive(Clone, Debug)]
pub struct CoralOutput {
    pub loss: f64,
    pub grad_source: Tensor,
    pub grad_target: Tensor,
}

fn centered(x: &Tensor, mean: &[f64]) -> Vec<f64> {
    let d = mean.len();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(d) {
        row.iter_mut().zip(mean).for_each(|(v, m)| *v -= m);
    }
    out
}

fn check(source: &Tensor, target: &Tensor) -> Result<(usize, usize, usize)> {
    let d = source.sample_len();
    if target.sample_len() != d {
        return Err(Error::shape(format!(
            "embedding dimensions differ: {d} vs {}",
            target.sample_len()
        )));
    }
    let (n, m) = (source.batch(), target.batch());
    if n < 2 || m < 2 {
        return Err(Error::invalid(format!(
            "CORAL needs at least two rows per side, got {n} and {m}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("zero-dimensional embedding"));
    }
    Ok((n, m, d))
}

/// `‖C_S − C_T‖²_F / (4d²)` over rows of `[n, ...]` tensors (flattened per
/// row), with sample covariances of divisor `n − 1`.
pub fn coral_loss(source: &Tensor, target: &Tensor) -> Result<CoralOutput> {
    let (n, m, d) = check(source, target)?;
    let (ms, cs) = covariance(source.data(), n, d);
    let (mt, ct) = covariance(target.data(), m, d);
    let diff: Vec<f64> = cs.iter().zip(&ct).map(|(a, b)| a - b).collect();
    let dd = (d * d) as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / (4.0 * dd);

    // dL/dX = ±Xc (C_S − C_T) / ((rows − 1) d²); centring drops out because
    // the columns of Xc sum to zero.
    let grad = |x: &Tensor, mean: &[f64], rows: usize, sign: f64| -> Tensor {
        let xc = centered(x, mean);
        let scale = sign / ((rows - 1) as f64 * dd);
        let mut g = vec![0.0; rows * d];
        for (r, out) in xc.chunks_exact(d).zip(g.chunks_exact_mut(d)) {
            for (i, &ri) in r.iter().enumerate() {
                if ri == 0.0 {
                    continue;
                }
                let drow = &diff[i * d..(i + 1) * d];
                for (o, &dv) in out.iter_mut().zip(drow) {
                    *o += ri * dv;
                }
            }
            out.iter_mut().for_each(|v| *v *= scale);
        }
        Tensor::new(x.shape().to_vec(), g).expect("same shape")
    };
    Ok(CoralOutput {
        loss,
        grad_source: grad(source, &ms, n, 1.0),
        grad_target: grad(target, &mt, m, -1.0),
    })
}

/// `‖C_S − C_T‖_F` over full sets.
pub fn covariance_distance(source: &Tensor, target: &Tensor) -> Result<f64> {
    let (n, m, d) = check(source, target)?;
    let (_, cs) = covariance(source.data(), n, d);
    let (_, ct) = covariance(target.data(), m, d);
    Ok(cs
        .iter()
        .zip(&ct)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}
