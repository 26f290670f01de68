use crate::error::{Error, Result};
use crate::repr::symmetric_eigen;

/// Classical multidimensional scaling of an `m x m` distance matrix
/// (row-major). Returns `m x dims` coordinates, row-major.
pub fn mds_embed(distances: &[f64], m: usize, dims: usize) -> Result<Vec<f64>> {
    if distances.len() != m * m {
        return Err(Error::shape(format!(
            "{} entries for a {m}x{m} matrix",
            distances.len()
        )));
    }
    for i in 0..m {
        if distances[i * m + i] != 0.0 {
            return Err(Error::invalid("distance matrix needs a zero diagonal"));
        }
        for j in 0..m {
            let v = distances[i * m + j];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid("distances must be finite and nonnegative"));
            }
            if (v - distances[j * m + i]).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(Error::invalid("distance matrix is not symmetric"));
            }
        }
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    // B = −½ J D² J with J = I − 11ᵀ/m.
    let sq: Vec<f64> = distances.iter().map(|d| d * d).collect();
    let row_mean: Vec<f64> = (0..m)
        .map(|i| sq[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    let total = row_mean.iter().sum::<f64>() / m as f64;
    let mut b = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            b[i * m + j] = -0.5 * (sq[i * m + j] - row_mean[i] - row_mean[j] + total);
        }
    }
    // Exact symmetry for the eigensolver.
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (b[i * m + j] + b[j * m + i]);
            b[i * m + j] = v;
            b[j * m + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&b, m)?;
    let mut coords = vec![0.0; m * dims];
    for c in 0..dims.min(m) {
        let s = values[c].max(0.0).sqrt();
        for i in 0..m {
            coords[i * dims + c] = s * vectors[c * m + i];
        }
    }
    Ok(coords)
}
