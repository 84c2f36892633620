//! Momentum descent over one or more bands.
//!
//! The KL part takes an explicit gradient step. The alignment part is
//! quadratic, so its step is taken implicitly: after the KL step the y
//! coordinates of every alignment chain are replaced by the minimizer of
//! `|y - v|^2 / (2 eta) + penalty(y)`, a tridiagonal solve per chain. This is
//! stable for any lambda (the explicit step diverges once
//! `eta * 2 lambda / |M| > 2`) and coincides with the explicit step to first order.

use super::gradient::{gradient_into, kl_cost_unchecked};
use super::{AffinityMatrix, EmbeddingConfig, Point2};

pub(crate) struct FreeBand<'a> {
    pub p: &'a AffinityMatrix,
    /// Absolute band index, for the x clamp.
    pub band: usize,
    pub pos: Vec<Point2>,
}

/// Instances linked across consecutive free bands (and optionally to a fixed
/// y in a frozen predecessor band).
#[derive(Debug, Clone)]
pub(crate) struct Chain {
    /// `(local band, point index)`, consecutive bands.
    pub nodes: Vec<(usize, usize)>,
    /// `links[m]` is the penalty weight between `nodes[m]` and `nodes[m + 1]`.
    pub links: Vec<f64>,
    /// Fixed predecessor height and weight for `nodes[0]`.
    pub anchor: Option<(f64, f64)>,
}

/// Receives `(0, objective)` for the starting positions and `(s + 1, objective)`
/// after step `s`. The objective is the unexaggerated KL sum plus alignment penalties.
pub type StepObserver<'o> = &'o mut dyn FnMut(usize, f64);

pub(crate) fn objective(bands: &[FreeBand<'_>], chains: &[Chain]) -> f64 {
    let kl: f64 = bands.iter().map(|b| kl_cost_unchecked(b.p, &b.pos)).sum();
    kl + chain_penalty(bands, chains)
}

fn chain_penalty(bands: &[FreeBand<'_>], chains: &[Chain]) -> f64 {
    let mut total = 0.0;
    for c in chains {
        let y = |m: usize| {
            let (b, i) = c.nodes[m];
            bands[b].pos[i][1]
        };
        if let Some((a, w)) = c.anchor {
            total += w * (y(0) - a).powi(2);
        }
        for (m, w) in c.links.iter().enumerate() {
            total += w * (y(m + 1) - y(m)).powi(2);
        }
    }
    total
}

pub(crate) fn run(
    bands: &mut [FreeBand<'_>],
    chains: &[Chain],
    config: &EmbeddingConfig,
    mut observer: Option<StepObserver<'_>>,
) {
    let eta = config.learning_rate;
    let mut vel: Vec<Vec<Point2>> = bands.iter().map(|b| vec![[0.0; 2]; b.pos.len()]).collect();
    let mut grad: Vec<Vec<Point2>> = vel.clone();
    let mut next: Vec<Vec<Point2>> = vel.clone();
    let mut scratch = ThomasScratch::default();
    if let Some(obs) = observer.as_mut() {
        obs(0, objective(bands, chains));
    }

    for step in 0..config.steps {
        let ex = config.exaggeration_at(step);
        let mu = config.momentum_at(step);
        for (b, band) in bands.iter().enumerate() {
            gradient_into(band.p, &band.pos, ex, &mut grad[b]);
        }
        for (b, band) in bands.iter().enumerate() {
            let (lo, hi) = config.band_bounds(band.band);
            for i in 0..band.pos.len() {
                let [x, y] = band.pos[i];
                let [vx, vy] = vel[b][i];
                let [gx, gy] = grad[b][i];
                next[b][i] = [
                    (x + mu * vx - eta * gx).clamp(lo, hi),
                    y + mu * vy - eta * gy,
                ];
            }
        }
        for chain in chains {
            scratch.solve(chain, &mut next, eta);
        }
        for (b, band) in bands.iter_mut().enumerate() {
            for i in 0..band.pos.len() {
                let old = band.pos[i];
                let new = next[b][i];
                vel[b][i] = [new[0] - old[0], new[1] - old[1]];
                band.pos[i] = new;
            }
        }
        if let Some(obs) = observer.as_mut() {
            obs(step + 1, objective(bands, chains));
        }
    }
}

#[derive(Default)]
struct ThomasScratch {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
}

impl ThomasScratch {
    /// Replaces the chain's y values in `pos` with the proximal minimizer.
    fn solve(&mut self, chain: &Chain, pos: &mut [Vec<Point2>], eta: f64) {
        let len = chain.nodes.len();
        let s = 2.0 * eta;
        self.sub.clear();
        self.diag.clear();
        self.sup.clear();
        self.rhs.clear();
        for m in 0..len {
            let (b, i) = chain.nodes[m];
            let left = if m == 0 {
                chain.anchor.map_or(0.0, |(_, w)| w)
            } else {
                chain.links[m - 1]
            };
            let right = if m + 1 < len { chain.links[m] } else { 0.0 };
            let mut r = pos[b][i][1];
            if m == 0 {
                if let Some((a, w)) = chain.anchor {
                    r += s * w * a;
                }
            }
            self.sub.push(if m == 0 { 0.0 } else { -s * left });
            self.sup.push(-s * right);
            self.diag.push(1.0 + s * (left + right));
            self.rhs.push(r);
        }
        // Forward sweep; the system is strictly diagonally dominant.
        for m in 1..len {
            let f = self.sub[m] / self.diag[m - 1];
            self.diag[m] -= f * self.sup[m - 1];
            self.rhs[m] -= f * self.rhs[m - 1];
        }
        let mut y_next = 0.0;
        for m in (0..len).rev() {
            let y = if m + 1 == len {
                self.rhs[m] / self.diag[m]
            } else {
                (self.rhs[m] - self.sup[m] * y_next) / self.diag[m]
            };
            let (b, i) = chain.nodes[m];
            pos[b][i][1] = y;
            y_next = y;
        }
    }
}
