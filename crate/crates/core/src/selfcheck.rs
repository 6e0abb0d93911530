//! Numerical self-checks run by the `gradcheck` and `selftest` commands:
//! finite-difference gradients of every loss path, the contrastive loss
//! against direct enumeration, attention normalisation and PCA geometry.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check, Tape, Tensor, Var};
use crate::error::Result;
use crate::linear::FitOptions;
use crate::losses::{inter_facet, intra_l2, intra_nce, pseudo_semantic, sce_loss, total_loss, LossContext, Mode};
use crate::model::{Bound, ModelConfig, MufiModel, Pooling};
use crate::seed;
use crate::semspace::{build_space, fit_pca};
use crate::synthgen::{generate_world, train_teachers, TeacherCache, WorldSpec};

/// Largest accepted relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Rectifier inputs of a gradient-check draw stay at least this far from zero.
const KINK_MARGIN: f64 = 1e-3;

/// A named worst-case error and the bound it must stay under.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.value < self.tolerance
    }
}

fn rng_for(label: &str, index: u64) -> ChaCha8Rng {
    seed::rng(seed::split(seed::derive(0, label), index))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn scaled(mut t: Tensor, k: f64) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v *= k);
    t
}

fn jitter(model: &mut MufiModel, rng: &mut ChaCha8Rng) {
    for p in model.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
    }
}

fn head_model(pooling: Pooling, rng: &mut ChaCha8Rng) -> Result<MufiModel> {
    let mut m = MufiModel::new(
        ModelConfig {
            grid: [1, 2, 3],
            in_channels: 3,
            hidden: 4,
            out_channels: 4,
            space_dim: 3,
            n_facets: 2,
            pooling,
            classifier: None,
        },
        rng.random(),
    )?;
    jitter(&mut m, rng);
    Ok(m)
}

/// Gradient check of one head's projection of a free descriptor grid,
/// reduced to a scalar through fixed random weights.
fn projection_check(pooling: Pooling, s: u64) -> Result<f64> {
    let mut rng = rng_for("gradcheck-projection", s);
    let model = head_model(pooling, &mut rng)?;
    let cfg = model.config.clone();
    let grid = uniform(&mut rng, &[cfg.positions(), cfg.out_channels]);
    let w_embed = uniform(&mut rng, &[cfg.space_dim]);
    let w_attn = uniform(&mut rng, &[cfg.positions()]);
    let mut params = model.params().to_vec();
    params.push(grid);
    let n = model.params().len();
    let r = grad_check(
        |tape, vars| {
            let bound = Bound {
                config: cfg.clone(),
                vars: vars[..n].to_vec(),
            };
            let g = &vars[n];
            match pooling {
                Pooling::Attention => {
                    let (e, a) = bound.attend_project(1, g)?;
                    e.dot(&tape.constant(w_embed.clone()))?
                        .add(&a.dot(&tape.constant(w_attn.clone()))?)
                }
                Pooling::Global => bound.global_project(1, g)?.dot(&tape.constant(w_embed.clone())),
            }
        },
        &params,
        FD_STEP,
    )?;
    Ok(r.max_rel_error)
}

fn inter_check(s: u64) -> Result<f64> {
    let (facets, k, d) = (3, 4, 3);
    let mut rng = rng_for("gradcheck-inter", s);
    let mut params = Vec::new();
    for _ in 0..facets {
        params.push(uniform(&mut rng, &[d]));
        params.push(uniform(&mut rng, &[k]));
        params.push(uniform(&mut rng, &[k, d]));
    }
    let r = grad_check(
        |_tape, vars| {
            let mut emb = Vec::new();
            let mut pseudo = Vec::new();
            for f in 0..facets {
                emb.push(Some(vars[3 * f]));
                let p = vars[3 * f + 1].softmax(0)?;
                pseudo.push(Some(pseudo_semantic(&p, &vars[3 * f + 2])?));
            }
            let terms = inter_facet(&emb, &pseudo, 0, &[0, 1, 2])?;
            let mut total = terms[0].1;
            for (_, t) in &terms[1..] {
                total = total.add(t)?;
            }
            Ok(total)
        },
        &params,
        FD_STEP,
    )?;
    Ok(r.max_rel_error)
}

/// Smallest distance of any encoder rectifier input from zero over the
/// given observations. Central differences across a kink disagree with the
/// one-sided derivative, so draws closer than [`KINK_MARGIN`] are redrawn.
fn rectifier_margin(model: &MufiModel, observations: &[&Tensor]) -> f64 {
    let p = model.params();
    let (w1, b1, w2, b2) = (p[0].data(), p[1].data(), p[2].data(), p[3].data());
    let (hidden, out) = (b1.len(), b2.len());
    let mut margin = f64::INFINITY;
    for obs in observations {
        for r in 0..obs.rows() {
            let x = obs.row(r);
            let h: Vec<f64> = (0..hidden)
                .map(|j| b1[j] + x.iter().enumerate().map(|(i, xi)| xi * w1[i * hidden + j]).sum::<f64>())
                .collect();
            margin = h.iter().fold(margin, |m, v| m.min(v.abs()));
            for k in 0..out {
                let z = b2[k]
                    + h.iter()
                        .enumerate()
                        .map(|(j, hj)| hj.max(0.0) * w2[j * out + k])
                        .sum::<f64>();
                margin = margin.min(z.abs());
            }
        }
    }
    margin
}

fn mufi_total_check(seeds: u64) -> Result<f64> {
    let world = generate_world(&WorldSpec {
        grid: [2, 2, 3, 4],
        region: [1, 1, 1],
        classes_per_facet: vec![3; 6],
        samples_per_facet: 10,
        ..WorldSpec::default()
    })?;
    let space = build_space(&world.labels, 4, 16)?;
    let teachers = train_teachers(&world, FitOptions::default())?;
    let cache = TeacherCache::build(&world, &teachers);
    let intra = world.spec.intra_facets();
    let ctx = LossContext {
        space: &space,
        teachers: Some(&cache),
        intra_facets: &intra,
    };
    let batch: Vec<_> = intra.iter().map(|&f| &world.datasets[f].samples[1]).collect();
    let mut worst: f64 = 0.0;
    let observations: Vec<&Tensor> = batch.iter().map(|s| &s.observation).collect();
    for s in 0..seeds {
        let mut rng = rng_for("gradcheck-total", s);
        let model = loop {
            let mut model = MufiModel::new(
                ModelConfig {
                    grid: [2, 2, 3],
                    in_channels: 4,
                    hidden: 5,
                    out_channels: 4,
                    space_dim: 4,
                    n_facets: 6,
                    pooling: Pooling::Attention,
                    classifier: None,
                },
                rng.random(),
            )?;
            jitter(&mut model, &mut rng);
            if rectifier_margin(&model, &observations) > KINK_MARGIN {
                break model;
            }
        };
        let cfg = model.config.clone();
        let r = grad_check(
            |_tape, vars| {
                let bound = Bound {
                    config: cfg.clone(),
                    vars: vars.to_vec(),
                };
                Ok(total_loss(&bound, &batch, &ctx, Mode::Mufi)?.0)
            },
            model.params(),
            FD_STEP,
        )?;
        worst = worst.max(r.max_rel_error);
    }
    Ok(worst)
}

fn max_over(seeds: u64, mut f: impl FnMut(u64) -> Result<f64>) -> Result<f64> {
    (0..seeds).try_fold(0.0f64, |acc, s| Ok(acc.max(f(s)?)))
}

/// Worst relative gradient error per loss path over `seeds` random draws.
pub fn gradient_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let simple = |name: &str, shapes: &[&[usize]], f: &dyn for<'t> Fn(&[Var<'t>], usize) -> Result<Var<'t>>| {
        max_over(seeds, |s| {
            let mut rng = rng_for(name, s);
            let params: Vec<Tensor> = shapes.iter().map(|sh| uniform(&mut rng, sh)).collect();
            let label = rng.random_range(0..5);
            Ok(grad_check(|_tape, vars| f(vars, label), &params, FD_STEP)?.max_rel_error)
        })
    };
    let sce = simple("sce_loss", &[&[5]], &|v, label| sce_loss(&v[0], label))?;
    let l2 = simple("intra_l2", &[&[4], &[4]], &|v, _| intra_l2(&v[0], &v[1]))?;
    let nce = simple("intra_nce", &[&[4], &[5, 4]], &|v, label| {
        intra_nce(&v[0], &v[1], label)
    })?;
    let entries = [
        ("sce_loss", sce),
        ("intra_l2", l2),
        ("intra_nce", nce),
        ("pseudo_semantic+inter_facet", max_over(seeds, inter_check)?),
        (
            "attend_project",
            max_over(seeds, |s| projection_check(Pooling::Attention, s))?,
        ),
        (
            "global_project",
            max_over(seeds, |s| projection_check(Pooling::Global, s))?,
        ),
        ("total_loss(mufi)", mufi_total_check(seeds)?),
    ];
    Ok(entries
        .into_iter()
        .map(|(n, v)| CheckResult::new(n, v, GRAD_TOLERANCE))
        .collect())
}

/// Contrastive loss against `−log` of an explicitly enumerated softmax on
/// `instances` random draws plus the single-label and uniform cases.
pub fn nce_oracle(instances: u64) -> Result<CheckResult> {
    let enumerated = |q: &[f64], rows: &[Vec<f64>], pos: usize| {
        let scores: Vec<f64> = rows.iter().map(|r| r.iter().zip(q).map(|(a, b)| a * b).sum()).collect();
        let denom: f64 = scores.iter().map(|s| s.exp()).sum();
        -(scores[pos].exp() / denom).ln()
    };
    let eval = |q: &[f64], rows: &[Vec<f64>], pos: usize| -> Result<f64> {
        let tape = Tape::new();
        let qv = tape.constant(Tensor::vector(q.to_vec()));
        let s = tape.constant(Tensor::matrix(rows.len(), q.len(), rows.concat()));
        Ok(intra_nce(&qv, &s, pos)?.item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = rng_for("nce-oracle", i);
        let k = match i {
            0 => 1,
            _ => rng.random_range(1..=8),
        };
        let d = rng.random_range(1..=6);
        let q: Vec<f64> = if i == 1 {
            vec![0.0; d]
        } else {
            (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let pos = rng.random_range(0..k);
        let got = eval(&q, &rows, pos)?;
        let want = match (k, i) {
            (1, _) => 0.0,
            (_, 1) => (k as f64).ln(),
            _ => enumerated(&q, &rows, pos),
        };
        worst = worst.max((got - want).abs());
    }
    Ok(CheckResult::new("intra_nce vs enumeration", worst, 1e-10))
}

/// Attention maps over random grids: normalisation, positivity, the
/// uniform-logit mean, and invariance to a shift of every logit.
pub fn attention_checks(seeds: u64) -> Result<Vec<CheckResult>> {
    let (mut sum_dev, mut positivity, mut mean_dev, mut shift_dev) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for s in 0..seeds {
        let mut rng = rng_for("attention", s);
        let (p, c) = (rng.random_range(1..12), rng.random_range(1..6));
        let tape = Tape::new();
        let grid = tape.constant(scaled(uniform(&mut rng, &[p, c]), 3.0));
        let w = scaled(uniform(&mut rng, &[c, 1]), 2.0);
        let b: f64 = rng.random_range(-5.0..5.0);
        let shift: f64 = rng.random_range(-50.0..50.0);
        let attend = |w: &Tensor, b: f64| -> Result<(Vec<f64>, Vec<f64>)> {
            let logits = grid.matmul(&tape.constant(w.clone()))?.reshape(&[p])?.offset(b);
            let a = logits.softmax(0)?;
            let attended = a.reshape(&[1, p])?.matmul(&grid)?;
            Ok((a.value().into_data(), attended.value().into_data()))
        };
        let (a, _) = attend(&w, b)?;
        sum_dev = sum_dev.max((a.iter().sum::<f64>() - 1.0).abs());
        if a.iter().any(|&v| v <= 0.0) {
            positivity = f64::INFINITY;
        }
        let (shifted, _) = attend(&w, b + shift)?;
        shift_dev = shift_dev.max(a.iter().zip(&shifted).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        let (_, attended) = attend(&Tensor::zeros(&[c, 1]), b)?;
        let g = grid.value();
        for (j, v) in attended.iter().enumerate() {
            let mean = (0..p).map(|r| g.row(r)[j]).sum::<f64>() / p as f64;
            mean_dev = mean_dev.max((v - mean).abs());
        }
    }
    Ok(vec![
        CheckResult::new("attention sums to one", sum_dev, 1e-9),
        CheckResult::new("attention strictly positive", positivity, 1e-9),
        CheckResult::new("uniform attention is the mean", mean_dev, 1e-9),
        CheckResult::new("attention logit-shift invariance", shift_dev, 1e-9),
    ])
}

/// Orthonormal components, non-increasing variances, distance
/// preservation at full dimension, and the y = 2x line.
pub fn pca_checks(seeds: u64) -> Result<Vec<CheckResult>> {
    let (mut ortho, mut order, mut dist) = (0.0f64, 0.0f64, 0.0f64);
    for s in 0..seeds {
        let mut rng = rng_for("pca", s);
        let raw = rng.random_range(2..7);
        let count = rng.random_range(2..12);
        let xs: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..raw).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let rank = raw.min(count - 1);
        let pca = fit_pca(&xs, rank)?;
        for i in 0..rank {
            for j in 0..rank {
                let dot: f64 = pca.component(i).iter().zip(pca.component(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                ortho = ortho.max((dot - want).abs());
            }
        }
        for w in pca.variances.windows(2) {
            order = order.max(w[1] - w[0]);
        }
        let z: Vec<Vec<f64>> = xs.iter().map(|x| pca.project(x)).collect();
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        for i in 0..count {
            for j in 0..i {
                dist = dist.max((sq(&xs[i], &xs[j]) - sq(&z[i], &z[j])).abs());
            }
        }
    }
    let line: Vec<Vec<f64>> = (-5..=5).map(|t| vec![f64::from(t), 2.0 * f64::from(t)]).collect();
    let c = fit_pca(&line, 1)?.component(0);
    let unit = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()];
    let sign = if c[0] < 0.0 { -1.0 } else { 1.0 };
    let line_dev = c
        .iter()
        .zip(unit)
        .map(|(a, b)| (sign * a - b).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        CheckResult::new("pca components orthonormal", ortho, 1e-8),
        CheckResult::new("pca variances non-increasing", order, f64::MIN_POSITIVE),
        CheckResult::new("pca preserves distances", dist, 1e-8),
        CheckResult::new("pca recovers the y=2x line", line_dev, 1e-6),
    ])
}

/// Every check above at its default sample count.
pub fn selftest() -> Result<Vec<CheckResult>> {
    let mut out = gradient_suite(10)?;
    out.push(nce_oracle(100)?);
    out.extend(attention_checks(50)?);
    out.extend(pca_checks(20)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_self_checks_pass() {
        for c in selftest().unwrap() {
            assert!(c.passed(), "{}: {} (tolerance {})", c.name, c.value, c.tolerance);
        }
    }

    #[test]
    fn failing_check_is_reported() {
        assert!(!CheckResult::new("x", 2e-4, GRAD_TOLERANCE).passed());
    }
}
