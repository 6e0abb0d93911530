//! L2-regularised multinomial logistic regression fit by full-batch
//! gradient descent with backtracking. Used for the frozen teachers and
//! for linear probes.

use crate::diffcore::{softmax_forward, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub l2: f64,
    /// Stop once the absolute loss change between iterations falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2: 0.0,
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOutcome {
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxRegression {
    pub dim: usize,
    pub classes: usize,
    /// `dim × classes`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            weights: vec![0.0; dim * classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weights[i * self.classes..(i + 1) * self.classes];
            for (zk, w) in z.iter_mut().zip(row) {
                *zk += xi * w;
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let z = Tensor::vector(self.logits(x));
        softmax_forward(&z, 0, false).into_data()
    }

    /// Arg-max class; lowest index wins ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Mean cross-entropy plus `l2/2 ‖W‖²`, and its gradient (weights, bias).
    fn loss_grad(&self, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n = xs.len() as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.classes];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z = self.logits(x);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - z[y];
            for k in 0..self.classes {
                let p = (z[k] - lse).exp();
                let d = (p - if k == y { 1.0 } else { 0.0 }) / n;
                gb[k] += d;
                for (i, &xi) in x.iter().enumerate() {
                    gw[i * self.classes + k] += d * xi;
                }
            }
        }
        loss /= n;
        let reg: f64 = self.weights.iter().map(|w| w * w).sum::<f64>() * 0.5 * l2;
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        (loss + reg, gw, gb)
    }

    pub fn loss(&self, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> f64 {
        self.loss_grad(xs, ys, l2).0
    }

    /// Fits from zero initialisation.
    pub fn fit(xs: &[Vec<f64>], ys: &[usize], classes: usize, opts: FitOptions) -> (Self, FitOutcome) {
        let dim = xs.first().map_or(0, |x| x.len());
        let mut model = Self::zeros(dim, classes);
        if xs.is_empty() {
            return (
                model,
                FitOutcome {
                    iterations: 0,
                    final_loss: 0.0,
                    converged: true,
                },
            );
        }
        let (mut loss, mut gw, mut gb) = model.loss_grad(xs, ys, opts.l2);
        let mut step = 1.0;
        for it in 1..=opts.max_iter {
            let gnorm2: f64 = gw.iter().chain(&gb).map(|g| g * g).sum();
            if gnorm2 == 0.0 {
                return (
                    model,
                    FitOutcome {
                        iterations: it,
                        final_loss: loss,
                        converged: true,
                    },
                );
            }
            // Armijo backtracking from a step that grows after each success.
            step *= 2.0;
            let mut trial;
            let mut trial_loss;
            loop {
                trial = model.clone();
                trial.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
                trial.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= step * g);
                trial_loss = trial.loss(xs, ys, opts.l2);
                if trial_loss <= loss - 0.5 * step * gnorm2 || step < 1e-12 {
                    break;
                }
                step *= 0.5;
            }
            let change = (loss - trial_loss).abs();
            model = trial;
            let (l, w, b) = model.loss_grad(xs, ys, opts.l2);
            loss = l;
            gw = w;
            gb = b;
            if change < opts.tol {
                return (
                    model,
                    FitOutcome {
                        iterations: it,
                        final_loss: loss,
                        converged: true,
                    },
                );
            }
        }
        (
            model,
            FitOutcome {
                iterations: opts.max_iter,
                final_loss: loss,
                converged: false,
            },
        )
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
