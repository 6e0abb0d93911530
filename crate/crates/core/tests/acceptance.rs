//! Acceptance suite: one pass/fail line per criterion, then checks on the
//! reference run. Exits nonzero if anything fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mufi_core::diffcore::{Tape, Tensor, Var};
use mufi_core::eval::FacetMatrix;
use mufi_core::linear::FitOptions;
use mufi_core::losses::{inter_facet, intra_l2, intra_nce, pseudo_semantic, sce_loss, total_loss, LossContext, Mode};
use mufi_core::model::{Bound, ModelConfig, MufiModel, Pooling};
use mufi_core::pipeline::{
    forgetting_against, prepare, single_facet_name, table1, zero_shot_facet, ExperimentConfig, Table1,
};
use mufi_core::semspace::{build_space, fit_pca};
use mufi_core::synthgen::{generate_world, train_teachers, TeacherCache, WorldSpec};
use mufi_core::Result;

struct Line {
    label: String,
    passed: bool,
    detail: String,
}

struct Suite {
    lines: Vec<Line>,
}

impl Suite {
    fn record(&mut self, label: impl Into<String>, passed: bool, detail: impl Into<String>) {
        let line = Line {
            label: label.into(),
            passed,
            detail: detail.into(),
        };
        println!(
            "{} {}: {}",
            if line.passed { "PASS" } else { "FAIL" },
            line.label,
            line.detail
        );
        self.lines.push(line);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Worst `|analytic − numeric| / max(1, |analytic|, |numeric|)` with
/// central differences at step 1e-5.
fn fd_error<F>(f: F, params: &[Tensor]) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eps = 1e-5;
    let value = |ps: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| tape.param(p.clone())).collect();
        f(&tape, &vars).unwrap().item()
    };
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&tape, &vars).unwrap();
    let grads = tape.backward(&root).unwrap();
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(v).unwrap().data().to_vec();
        for (j, a) in analytic.iter().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = value(&work);
            work[i].data_mut()[j] = orig - eps;
            let minus = value(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
        }
    }
    worst
}

fn perturbed_model(config: ModelConfig, seed: u64) -> MufiModel {
    let mut m = MufiModel::new(config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for p in m.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.5..0.5));
    }
    m
}

/// Smallest |input| over both encoder rectifiers for the given observations.
fn rectifier_margin(m: &MufiModel, observations: &[&Tensor]) -> f64 {
    let p = m.params();
    let (w1, b1, w2, b2) = (p[0].data(), p[1].data(), p[2].data(), p[3].data());
    let (hidden, out) = (b1.len(), b2.len());
    let mut margin = f64::INFINITY;
    for obs in observations {
        for r in 0..obs.rows() {
            let x = obs.row(r);
            let h: Vec<f64> = (0..hidden)
                .map(|j| b1[j] + (0..x.len()).map(|i| x[i] * w1[i * hidden + j]).sum::<f64>())
                .collect();
            for &v in &h {
                margin = margin.min(v.abs());
            }
            for k in 0..out {
                let z = b2[k] + (0..hidden).map(|j| h[j].max(0.0) * w2[j * out + k]).sum::<f64>();
                margin = margin.min(z.abs());
            }
        }
    }
    margin
}

fn head_config(pooling: Pooling) -> ModelConfig {
    ModelConfig {
        grid: [1, 2, 3],
        in_channels: 3,
        hidden: 4,
        out_channels: 4,
        space_dim: 3,
        n_facets: 2,
        pooling,
        classifier: None,
    }
}

fn criterion_gradients(suite: &mut Suite) {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut track = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name, e)),
    };

    let world = generate_world(&WorldSpec {
        grid: [2, 2, 3, 4],
        region: [1, 1, 1],
        classes_per_facet: vec![3; 6],
        samples_per_facet: 10,
        ..WorldSpec::default()
    })
    .unwrap();
    let space = build_space(&world.labels, 4, 16).unwrap();
    let cache = TeacherCache::build(&world, &train_teachers(&world, FitOptions::default()).unwrap());
    let intra = world.spec.intra_facets();
    let ctx = LossContext {
        space: &space,
        teachers: Some(&cache),
        intra_facets: &intra,
    };
    let batch: Vec<_> = intra.iter().map(|&f| &world.datasets[f].samples[2]).collect();

    for seed in 0..10u64 {
        let mut r = rng(1000 + seed);
        let label = r.random_range(0..5);
        let logits = random(&mut r, &[5], 2.0);
        track("sce_loss", fd_error(|_, v| sce_loss(&v[0], label), &[logits]));

        let (q, s) = (random(&mut r, &[4], 1.0), random(&mut r, &[4], 1.0));
        track("intra_l2", fd_error(|_, v| intra_l2(&v[0], &v[1]), &[q, s]));

        let (q, s) = (random(&mut r, &[4], 1.0), random(&mut r, &[5, 4], 1.0));
        track("intra_nce", fd_error(|_, v| intra_nce(&v[0], &v[1], label), &[q, s]));

        let params: Vec<Tensor> = (0..3)
            .flat_map(|_| {
                [
                    random(&mut r, &[3], 1.0),
                    random(&mut r, &[4], 1.0),
                    random(&mut r, &[4, 3], 1.0),
                ]
            })
            .collect();
        track(
            "pseudo_semantic+inter_facet",
            fd_error(
                |_, v| {
                    let emb: Vec<_> = (0..3).map(|f| Some(v[3 * f])).collect();
                    let pseudo = (0..3)
                        .map(|f| Ok(Some(pseudo_semantic(&v[3 * f + 1].softmax(0)?, &v[3 * f + 2])?)))
                        .collect::<Result<Vec<_>>>()?;
                    let terms = inter_facet(&emb, &pseudo, 1, &[0, 1, 2])?;
                    terms[0].1.add(&terms[1].1)
                },
                &params,
            ),
        );

        for pooling in [Pooling::Attention, Pooling::Global] {
            let m = perturbed_model(head_config(pooling), seed);
            let cfg = m.config.clone();
            let n = m.params().len();
            let mut params = m.params().to_vec();
            params.push(random(&mut r, &[cfg.positions(), cfg.out_channels], 1.0));
            let w = random(&mut r, &[cfg.space_dim], 1.0);
            let wa = random(&mut r, &[cfg.positions()], 1.0);
            let e = fd_error(
                |tape, v| {
                    let b = Bound {
                        config: cfg.clone(),
                        vars: v[..n].to_vec(),
                    };
                    match pooling {
                        Pooling::Attention => {
                            let (emb, attn) = b.attend_project(0, &v[n])?;
                            emb.dot(&tape.constant(w.clone()))?
                                .add(&attn.dot(&tape.constant(wa.clone()))?)
                        }
                        Pooling::Global => b.global_project(0, &v[n])?.dot(&tape.constant(w.clone())),
                    }
                },
                &params,
            );
            track(
                if pooling == Pooling::Attention {
                    "attend_project"
                } else {
                    "global_project"
                },
                e,
            );
        }

        // central differences are only meaningful away from rectifier kinks,
        // so redraw any point with a rectifier input within 1e-3 of zero
        let observations: Vec<&Tensor> = batch.iter().map(|s| &s.observation).collect();
        let m = (0..)
            .map(|k| {
                perturbed_model(
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
                    seed + 100 * k,
                )
            })
            .find(|m| rectifier_margin(m, &observations) > 1e-3)
            .unwrap();
        let cfg = m.config.clone();
        let e = fd_error(
            |_, v| {
                let b = Bound {
                    config: cfg.clone(),
                    vars: v.to_vec(),
                };
                Ok(total_loss(&b, &batch, &ctx, Mode::Mufi)?.0)
            },
            m.params(),
        );
        track("total_loss(mufi)", e);
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let per: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    suite.record(
        "criterion 1 (gradient correctness)",
        max < 1e-4 && secs < 60.0,
        format!(
            "max relative error {max:.2e} over 10 seeds in {secs:.1}s [{}]",
            per.join(", ")
        ),
    );
}

fn criterion_nce(suite: &mut Suite) {
    let mut worst: f64 = 0.0;
    let mut singleton_exact = true;
    for i in 0..100u64 {
        let mut r = rng(2000 + i);
        let k = if i < 5 { 1 } else { r.random_range(2..10) };
        let d = r.random_range(1..8);
        let uniform = (5..10).contains(&i);
        let q: Vec<f64> = if uniform {
            vec![0.0; d]
        } else {
            (0..d).map(|_| r.random_range(-2.0..2.0)).collect()
        };
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let pos = r.random_range(0..k);
        let tape = Tape::new();
        let got = intra_nce(
            &tape.constant(Tensor::vector(q.clone())),
            &tape.constant(Tensor::new(vec![k, d], rows.concat()).unwrap()),
            pos,
        )
        .unwrap()
        .item();
        let scores: Vec<f64> = rows
            .iter()
            .map(|row| row.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect();
        let probs: Vec<f64> = scores
            .iter()
            .map(|s| s.exp() / scores.iter().map(|t| t.exp()).sum::<f64>())
            .collect();
        let want = -probs[pos].ln();
        worst = worst.max((got - want).abs());
        if k == 1 {
            singleton_exact &= got == 0.0;
        }
        if uniform {
            worst = worst.max((got - (k as f64).ln()).abs());
        }
    }
    suite.record(
        "criterion 2 (contrastive loss oracle)",
        worst < 1e-10 && singleton_exact,
        format!("max |loss − enumerated| {worst:.2e} over 100 instances; singleton loss exactly 0: {singleton_exact}"),
    );
}

fn criterion_attention(suite: &mut Suite) {
    let (mut sum_dev, mut min_entry, mut mean_dev, mut shift_dev) = (0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
    for seed in 0..50u64 {
        let mut r = rng(3000 + seed);
        let cfg = ModelConfig {
            grid: [1 + (seed as usize % 2), 2, 3],
            in_channels: 3,
            hidden: 5,
            out_channels: 4,
            space_dim: 3,
            n_facets: 2,
            pooling: Pooling::Attention,
            classifier: None,
        };
        let mut m = perturbed_model(cfg.clone(), seed);
        m.params_mut()[4] = random(&mut r, &[4, 1], 3.0);
        let obs = random(&mut r, &[cfg.positions(), 3], 2.0);
        let a = m.attention_map(0, &obs).unwrap();
        sum_dev = sum_dev.max((a.iter().sum::<f64>() - 1.0).abs());
        min_entry = min_entry.min(a.iter().copied().fold(f64::INFINITY, f64::min));

        let mut shifted = m.clone();
        shifted.params_mut()[5].data_mut()[0] += r.random_range(-20.0..20.0);
        let b = shifted.attention_map(0, &obs).unwrap();
        shift_dev = shift_dev.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));

        // zero attention weights: every logit equals the bias
        let mut flat = m.clone();
        flat.params_mut()[4] = Tensor::zeros(&[4, 1]);
        let tape = Tape::new();
        let bound = flat.bind(&tape, &[]);
        let grid = tape.constant(random(&mut r, &[cfg.positions(), 4], 2.0));
        let (emb, _) = bound.attend_project(0, &grid).unwrap();
        let g = grid.value();
        let p = cfg.positions();
        let mean: Vec<f64> = (0..4)
            .map(|c| (0..p).map(|i| g.row(i)[c]).sum::<f64>() / p as f64)
            .collect();
        let embed = &flat.params()[6];
        let bias = &flat.params()[7];
        for j in 0..3 {
            let want = bias.data()[j] + (0..4).map(|c| mean[c] * embed.row(c)[j]).sum::<f64>();
            mean_dev = mean_dev.max((emb.value().data()[j] - want).abs());
        }
    }
    suite.record(
        "criterion 3 (attention normalisation)",
        sum_dev <= 1e-9 && min_entry > 0.0 && mean_dev <= 1e-9 && shift_dev <= 1e-9,
        format!(
            "|sum − 1| {sum_dev:.1e}, min entry {min_entry:.2e}, uniform vs mean {mean_dev:.1e}, shift {shift_dev:.1e}"
        ),
    );
}

fn criterion_pca(suite: &mut Suite) {
    let (mut ortho, mut increase, mut dist) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for seed in 0..20u64 {
        let mut r = rng(4000 + seed);
        let raw = r.random_range(2..9);
        let count = raw + r.random_range(2..20);
        let xs: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..raw).map(|k| (k + 1) as f64 * r.random_range(-1.0..1.0)).collect())
            .collect();
        let pca = fit_pca(&xs, raw).unwrap();
        for i in 0..raw {
            for j in 0..raw {
                let dot: f64 = pca.component(i).iter().zip(pca.component(j)).map(|(a, b)| a * b).sum();
                ortho = ortho.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        for w in pca.variances.windows(2) {
            increase = increase.max(w[1] - w[0]);
        }
        let z: Vec<Vec<f64>> = xs.iter().map(|x| pca.project(x)).collect();
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        for i in 0..count {
            for j in 0..i {
                dist = dist.max((sq(&xs[i], &xs[j]) - sq(&z[i], &z[j])).abs());
            }
        }
    }
    let line: Vec<Vec<f64>> = (-5..=5).map(|t| vec![f64::from(t), 2.0 * f64::from(t)]).collect();
    let c = fit_pca(&line, 1).unwrap().component(0);
    let s = c[0].signum();
    let line_dev = (s * c[0] - 1.0 / 5f64.sqrt())
        .abs()
        .max((s * c[1] - 2.0 / 5f64.sqrt()).abs());
    suite.record(
        "criterion 4 (PCA correctness)",
        ortho < 1e-8 && increase <= 0.0 && dist <= 1e-8 && line_dev <= 1e-6,
        format!(
            "‖QᵀQ − I‖∞ {ortho:.1e}, largest variance increase {increase:.1e}, distance error {dist:.1e}, y=2x deviation {line_dev:.1e}"
        ),
    );
}

fn avg(t: &Table1, method: &str) -> f64 {
    t.matrix
        .row(method)
        .unwrap_or_else(|| panic!("no row {method}"))
        .average
}

fn csv(m: &FacetMatrix) -> Vec<u8> {
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    buf
}

fn main() -> ExitCode {
    let mut suite = Suite { lines: Vec::new() };
    criterion_gradients(&mut suite);
    criterion_nce(&mut suite);
    criterion_attention(&mut suite);
    criterion_pca(&mut suite);

    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let p = prepare(&cfg).unwrap();
    let t = table1(&cfg, &p, |m| eprintln!("  training {m}")).unwrap();
    let table_secs = start.elapsed().as_secs_f64();
    print!("{}", t.matrix.to_text());

    let intra = p.world.spec.intra_facets();
    let teacher_only: Vec<usize> = (0..p.world.spec.n_facets)
        .filter(|f| p.world.spec.teacher_only[*f])
        .collect();
    let mufi = avg(&t, "mufi");
    let best_single = intra
        .iter()
        .map(|&f| avg(&t, &single_facet_name(f)))
        .fold(0.0, f64::max);
    let (nce, l2) = (avg(&t, "intra-nce"), avg(&t, "intra-l2"));
    let all_row = t.matrix.row("intra-nce+inter-all").unwrap();
    let nce_row = t.matrix.row("intra-nce").unwrap();
    let teacher_ok = teacher_only
        .iter()
        .all(|&f| all_row.accuracies[f] >= nce_row.accuracies[f]);
    suite.record(
        "criterion 5 (per-facet table ordering)",
        mufi - best_single >= 0.05 && nce >= l2 && teacher_ok && table_secs < 600.0,
        format!(
            "mufi {:.2} vs best single-facet {:.2}; intra-nce {:.2} vs intra-l2 {:.2}; inter-all vs intra-nce on teacher-only facets {}; {table_secs:.0}s",
            mufi * 100.0,
            best_single * 100.0,
            nce * 100.0,
            l2 * 100.0,
            teacher_only
                .iter()
                .map(|&f| format!("{:.2}/{:.2}", all_row.accuracies[f] * 100.0, nce_row.accuracies[f] * 100.0))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );

    let mufi_run = t.run("mufi").unwrap();
    let f = forgetting_against(
        &cfg,
        &p,
        Mode::ClassificationMerged,
        &mufi_run.snapshots[0].1,
        &mufi_run.model,
    )
    .unwrap();
    print!("{}{}", f.stages.to_text(), f.joint.to_text());
    // accuracies are multiples of 1/n_val, so allow for rounding in the subtraction
    let (drop, change) = (f.sequential_drop(), f.joint_change());
    suite.record(
        "criterion 6 (sequential forgetting)",
        drop >= 0.05 - 1e-9 && change <= 0.01 + 1e-9,
        format!(
            "facet {} sequential drop {:.2} points; joint midpoint-to-final change {:.2} points",
            f.order[0],
            drop * 100.0,
            change * 100.0
        ),
    );

    let zs: Vec<f64> = intra
        .iter()
        .map(|&n| zero_shot_facet(&mufi_run.model, &p, n).unwrap().accuracy)
        .collect();
    let chance = 1.0 / 8.0;
    suite.record(
        "criterion 7 (zero-shot above twice chance)",
        zs.iter().all(|&a| a > 2.0 * chance),
        format!(
            "intra-facet zero-shot accuracies {:?}",
            zs.iter().map(|a| format!("{:.3}", a)).collect::<Vec<_>>()
        ),
    );

    let mut threaded = cfg.clone();
    threaded.train.threads = 2;
    let t2 = table1(&threaded, &prepare(&threaded).unwrap(), |m| eprintln!("  rerun {m}")).unwrap();
    let same_csv = csv(&t.matrix) == csv(&t2.matrix);
    let same_hashes = t
        .runs
        .iter()
        .zip(&t2.runs)
        .all(|(a, b)| a.method == b.method && a.log.final_hash == b.log.final_hash);
    suite.record(
        "criterion 8 (determinism across runs and threads)",
        same_csv && same_hashes,
        format!(
            "identical report CSV: {same_csv}; identical final parameter hashes over {} runs: {same_hashes}",
            t.runs.len()
        ),
    );

    let (first, last) = mufi_run.log.first_last_epoch_loss().unwrap();
    suite.record(
        "reference: mufi loss halves",
        last < 0.5 * first,
        format!("mean epoch loss {first:.3} -> {last:.3}"),
    );
    let (s1, s2) = (
        f.stages.rows[0].accuracies[f.order[0]],
        f.stages.rows[1].accuracies[f.order[0]],
    );
    suite.record(
        "reference: stage 2 reduces the first facet",
        s2 < s1,
        format!("facet {} probe {:.2} -> {:.2}", f.order[0], s1 * 100.0, s2 * 100.0),
    );
    let family = ["intra-l2", "intra-nce", "intra-nce+inter-video", "intra-nce+inter-all"];
    let best_other = family.iter().map(|m| avg(&t, m)).fold(0.0, f64::max);
    suite.record(
        "reference: mufi tops the embedding family",
        mufi > best_other,
        format!("mufi {:.2} vs best other {:.2}", mufi * 100.0, best_other * 100.0),
    );
    let golden = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../reference/table1.csv");
    let matches = std::fs::read(&golden).map(|g| g == csv(&t.matrix)).unwrap_or(false);
    suite.record(
        "reference: report matches reference/table1.csv",
        matches,
        if matches {
            "byte-identical".to_string()
        } else {
            "differs or missing".to_string()
        },
    );

    let failed = suite.lines.iter().filter(|l| !l.passed).count();
    println!("{} passed, {failed} failed", suite.lines.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
