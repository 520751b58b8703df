//! Spectral normalization by persistent power iteration.

use rand::Rng;

use super::graph::DIV_FLOOR;
use super::{Graph, Result, Tensor, Var};

/// Persistent left singular-vector estimate for one weight tensor, viewed as
/// an `out_channels x rest` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralWeight {
    pub u: Vec<f64>,
    pub n_power_iterations: usize,
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > DIV_FLOOR {
        v.iter_mut().for_each(|x| *x /= norm);
        true
    } else {
        false
    }
}

fn rows_cols(w: &Tensor) -> (usize, usize) {
    let rows = w.shape()[0];
    (rows, w.numel() / rows)
}

impl SpectralWeight {
    pub fn new(out_channels: usize, rng: &mut impl Rng) -> Self {
        let mut u: Vec<f64> = (0..out_channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        if !normalize(&mut u) {
            u = vec![0.0; out_channels];
            u[0] = 1.0;
        }
        Self {
            u,
            n_power_iterations: 1,
        }
    }

    /// Right vector `v = normalize(W^T u)` for the current `u`.
    fn right(&self, w: &Tensor) -> Vec<f64> {
        let (rows, cols) = rows_cols(w);
        let d = w.data();
        let mut v = vec![0.0; cols];
        for (r, &ur) in self.u.iter().enumerate().take(rows) {
            for (vc, &wv) in v.iter_mut().zip(&d[r * cols..(r + 1) * cols]) {
                *vc += ur * wv;
            }
        }
        normalize(&mut v);
        v
    }

    /// Run `n_power_iterations` steps, updating `u` in place.
    pub fn power_iterate(&mut self, w: &Tensor) {
        let (rows, cols) = rows_cols(w);
        let d = w.data();
        for _ in 0..self.n_power_iterations {
            let v = self.right(w);
            let mut u: Vec<f64> = (0..rows)
                .map(|r| {
                    d[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(&v)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            if normalize(&mut u) {
                self.u = u;
            }
        }
    }

    /// Current estimate `sigma = u^T W v`, floored at 1e-12.
    pub fn sigma(&self, w: &Tensor) -> f64 {
        let (_, cols) = rows_cols(w);
        let v = self.right(w);
        let s: f64 = self
            .u
            .iter()
            .enumerate()
            .map(|(r, &ur)| {
                ur * w.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum();
        s.max(DIV_FLOOR)
    }

    /// One power-iteration update followed by `W / sigma`.
    pub fn normalize(&mut self, w: &Tensor) -> Tensor {
        self.power_iterate(w);
        let s = self.sigma(w);
        w.map(|x| x / s)
    }

    /// `W / sigma(W)` recorded on the graph with `u` and `v` held constant, so
    /// the gradient flows through both the weight and the estimate.
    pub fn apply(&self, g: &mut Graph, w: Var) -> Result<Var> {
        let wt = g.value(w);
        let (_, cols) = rows_cols(wt);
        let v = self.right(wt);
        let outer = Tensor::from_fn(wt.shape(), |i| self.u[i / cols] * v[i % cols]);
        let outer = g.constant(outer);
        let prod = g.mul(w, outer)?;
        let sigma = g.sum(prod);
        g.div_scalar(w, sigma)
    }
}
