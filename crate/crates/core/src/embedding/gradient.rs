//! Low-dimensional Student-t similarities, the KL cost and its gradient.

use rayon::prelude::*;

use super::{AffinityMatrix, EmbedError, Point2};

#[inline]
fn kernel(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// `Z = sum_{i != j} (1 + |y_i - y_j|^2)^-1`, reduced in a fixed order.
pub(crate) fn normalizer(y: &[Point2]) -> f64 {
    let n = y.len();
    let partial: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = y[i];
            y[i + 1..].iter().map(|&yj| kernel(yi, yj)).sum::<f64>()
        })
        .collect();
    2.0 * partial.iter().sum::<f64>()
}

fn check_len(p: &AffinityMatrix, y: &[Point2]) -> Result<(), EmbedError> {
    if p.n() != y.len() {
        return Err(EmbedError::Input(format!(
            "affinity matrix has {} points but {} positions were given",
            p.n(),
            y.len()
        )));
    }
    Ok(())
}

/// `KL(P || Q)`; pairs with `p_ij = 0` contribute nothing.
pub fn kl_cost(p: &AffinityMatrix, y: &[Point2]) -> Result<f64, EmbedError> {
    check_len(p, y)?;
    Ok(kl_cost_unchecked(p, y))
}

pub(crate) fn kl_cost_unchecked(p: &AffinityMatrix, y: &[Point2]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let ln_z = normalizer(y).ln();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let prow = p.p.row(i);
            let mut s = 0.0;
            for j in 0..n {
                let pij = prow[j];
                if j != i && pij > 0.0 {
                    s += pij * (pij.ln() - kernel(y[i], y[j]).ln() + ln_z);
                }
            }
            s
        })
        .collect();
    rows.iter().sum::<f64>().max(0.0)
}

/// `dC/dy_i = 4 sum_j (p_ij - q_ij) w_ij (y_i - y_j)`.
pub fn tsne_gradient(p: &AffinityMatrix, y: &[Point2]) -> Result<Vec<Point2>, EmbedError> {
    check_len(p, y)?;
    let mut out = vec![[0.0; 2]; y.len()];
    gradient_into(p, y, 1.0, &mut out);
    Ok(out)
}

/// Gradient with P scaled by `exaggeration`, written into `out`.
pub(crate) fn gradient_into(p: &AffinityMatrix, y: &[Point2], exaggeration: f64, out: &mut [Point2]) {
    let n = y.len();
    if n < 2 {
        out.iter_mut().for_each(|g| *g = [0.0; 2]);
        return;
    }
    let inv_z = 1.0 / normalizer(y);
    out.par_iter_mut().enumerate().for_each(|(i, g)| {
        let prow = p.p.row(i);
        let yi = y[i];
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..n {
            if j == i {
                continue;
            }
            let dx = yi[0] - y[j][0];
            let dy = yi[1] - y[j][1];
            let w = 1.0 / (1.0 + dx * dx + dy * dy);
            let coef = (exaggeration * prow[j] - w * inv_z) * w;
            gx += coef * dx;
            gy += coef * dy;
        }
        *g = [4.0 * gx, 4.0 * gy];
    });
}
