//! PCA by cyclic Jacobi eigen-decomposition.
//!
//! When there are fewer samples than raw dimensions the eigenproblem is
//! solved on the sample Gram matrix and mapped back; otherwise on the
//! covariance directly. Both routes apply the same sign convention so they
//! are interchangeable.

use crate::error::{MufiError, Result};

/// Affine map `x ↦ Qᵀ(x − mean)` onto the top principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `raw_dim × dim`, row-major; column `k` is component `k`.
    pub components: Vec<f64>,
    /// Sample-covariance eigenvalues of the kept components, non-increasing.
    pub variances: Vec<f64>,
    pub raw_dim: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenRoute {
    Auto,
    Covariance,
    Gram,
}

impl PcaTransform {
    pub fn component(&self, k: usize) -> Vec<f64> {
        (0..self.raw_dim).map(|i| self.components[i * self.dim + k]).collect()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.raw_dim, "projection input width");
        let mut out = vec![0.0; self.dim];
        for (i, (&xi, &mi)) in x.iter().zip(&self.mean).enumerate() {
            let c = xi - mi;
            let row = &self.components[i * self.dim..(i + 1) * self.dim];
            for (o, q) in out.iter_mut().zip(row) {
                *o += c * q;
            }
        }
        out
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        (0..self.raw_dim)
            .map(|i| {
                let row = &self.components[i * self.dim..(i + 1) * self.dim];
                self.mean[i] + row.iter().zip(z).map(|(q, v)| q * v).sum::<f64>()
            })
            .collect()
    }
}

/// Fits PCA with `dim` components on `samples` (each of equal width).
pub fn fit_pca(samples: &[Vec<f64>], dim: usize) -> Result<PcaTransform> {
    fit_pca_with(samples, dim, EigenRoute::Auto)
}

pub fn fit_pca_with(samples: &[Vec<f64>], dim: usize, route: EigenRoute) -> Result<PcaTransform> {
    let count = samples.len();
    if count == 0 {
        return Err(MufiError::Input("PCA needs at least one sample".into()));
    }
    let raw_dim = samples[0].len();
    if samples.iter().any(|s| s.len() != raw_dim) {
        return Err(MufiError::Input("PCA samples differ in width".into()));
    }
    // A single sample admits one degenerate zero-variance component.
    let max_dim = raw_dim.min(count.saturating_sub(1).max(1));
    if dim == 0 || dim > max_dim {
        return Err(MufiError::Input(format!(
            "PCA dimension {dim} outside 1..={max_dim} for {count} samples of width {raw_dim}"
        )));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MufiError::Input("PCA samples contain non-finite values".into()));
    }

    let mut mean = vec![0.0; raw_dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let denom = count.saturating_sub(1).max(1) as f64;

    let use_gram = match route {
        EigenRoute::Auto => count < raw_dim,
        EigenRoute::Covariance => false,
        EigenRoute::Gram => true,
    };

    let (values, vectors) = if use_gram {
        gram_route(&centered, raw_dim, denom)
    } else {
        covariance_route(&centered, raw_dim, denom)
    };

    let mut components = vec![0.0; raw_dim * dim];
    let mut variances = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut v = vectors[k].clone();
        apply_sign_convention(&mut v);
        for i in 0..raw_dim {
            components[i * dim + k] = v[i];
        }
        variances.push(values[k].max(0.0));
    }
    Ok(PcaTransform {
        mean,
        components,
        variances,
        raw_dim,
        dim,
    })
}

/// Largest-magnitude entry made positive (first such entry on ties).
fn apply_sign_convention(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigenpairs of the covariance, sorted by eigenvalue descending.
fn covariance_route(centered: &[Vec<f64>], d: usize, denom: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut cov = vec![0.0; d * d];
    for x in centered {
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += xi * x[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    sorted_eigen(cov, d)
}

/// Eigenpairs via the `n × n` Gram matrix; zero-variance directions are
/// completed by Gram-Schmidt against the standard basis.
fn gram_route(centered: &[Vec<f64>], d: usize, denom: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = centered.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / denom;
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    let (values, gvecs) = sorted_eigen(gram, n);
    let scale_ref = values.first().copied().unwrap_or(0.0).abs().max(1e-300);

    let mut out_vals = Vec::with_capacity(d);
    let mut out_vecs: Vec<Vec<f64>> = Vec::with_capacity(d);
    for (lambda, u) in values.iter().zip(&gvecs) {
        if *lambda <= scale_ref * 1e-12 || out_vecs.len() == d {
            break;
        }
        let mut q = vec![0.0; d];
        for (ui, x) in u.iter().zip(centered) {
            for (qk, xk) in q.iter_mut().zip(x) {
                *qk += ui * xk;
            }
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q.iter_mut().for_each(|v| *v /= norm);
        out_vals.push(*lambda);
        out_vecs.push(q);
    }
    let mut basis = 0;
    while out_vecs.len() < d && basis < d {
        let mut e = vec![0.0; d];
        e[basis] = 1.0;
        basis += 1;
        for _ in 0..2 {
            for q in &out_vecs {
                let proj: f64 = e.iter().zip(q).map(|(a, b)| a * b).sum();
                e.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            e.iter_mut().for_each(|v| *v /= norm);
            out_vals.push(0.0);
            out_vecs.push(e);
        }
    }
    (out_vals, out_vecs)
}

fn sorted_eigen(a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (values, vectors) = jacobi_eigen(a, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| values[i]).collect();
    let vecs = order
        .iter()
        .map(|&k| (0..n).map(|i| vectors[i * n + k]).collect())
        .collect();
    (vals, vecs)
}

/// Cyclic Jacobi rotations on a symmetric `n × n` matrix.
///
/// Returns eigenvalues and the row-major eigenvector matrix (column `k`
/// pairs with eigenvalue `k`).
pub fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= total * 1e-30 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    (values, v)
}

/// Mean squared reconstruction error over `samples`.
pub fn reconstruction_error(pca: &PcaTransform, samples: &[Vec<f64>]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let r = pca.reconstruct(&pca.project(s));
            s.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum();
    total / samples.len() as f64
}
