//! SGD-with-momentum training under any loss mode, plus sequential
//! per-facet fine-tuning.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::diffcore::Tensor;
use crate::error::{MufiError, Result};
use crate::losses::{batch_gradients, LossContext, LossReport, Mode};
use crate::model::{MufiModel, Trainable};
use crate::seed;
use crate::semspace::SemanticSpace;
use crate::synthgen::{FacetSample, Split, TeacherCache, World};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Facets whose train split feeds the run; `None` means every intra facet.
    pub facets: Option<Vec<usize>>,
    /// Keep a copy of the model after each listed epoch (1-based).
    pub snapshot_epochs: Vec<usize>,
    /// Worker threads for per-sample passes; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mufi,
            lr: 0.005,
            momentum: 0.9,
            epochs: 16,
            batch_size: 32,
            seed: 7,
            facets: None,
            snapshot_epochs: Vec::new(),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MufiError::Config(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.threads == 0 {
            return bad("epochs, batch size and threads must be positive".into());
        }
        if matches!(&self.facets, Some(f) if f.is_empty()) {
            return bad("facet list must not be empty".into());
        }
        Ok(())
    }
}

pub fn trainable_for(mode: Mode) -> Trainable {
    Trainable {
        encoder: true,
        heads: !mode.is_classification(),
        attention: mode == Mode::Mufi,
        classifier: mode.is_classification(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub facet: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub mode: Mode,
    pub steps: Vec<StepRecord>,
    /// Samples drawn per facet over the whole run.
    pub samples_seen: Vec<usize>,
    pub initial_hash: String,
    pub final_hash: String,
    pub wall_seconds: f64,
}

impl TrainLog {
    /// Mean total loss over the first and the last epoch.
    pub fn first_last_epoch_loss(&self) -> Option<(f64, f64)> {
        let first = self.steps.first()?.epoch;
        let last = self.steps.last()?.epoch;
        let mean = |e: usize| {
            let v: Vec<f64> = self
                .steps
                .iter()
                .filter(|s| s.epoch == e)
                .map(|s| s.report.total)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        Some((mean(first), mean(last)))
    }

    /// `step,epoch,facet,mode,sce,intra_l2,intra_nce,inter_0..,total`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let n = self.steps.first().map_or(0, |s| s.report.inter.len());
        let inter: Vec<String> = (0..n).map(|m| format!("inter_{m}")).collect();
        let mut header = String::from("step,epoch,facet,mode,sce,intra_l2,intra_nce");
        for c in &inter {
            header.push(',');
            header.push_str(c);
        }
        writeln!(w, "{header},total")?;
        for s in &self.steps {
            let r = &s.report;
            let mut line = format!(
                "{},{},{},{},{:.9},{:.9},{:.9}",
                s.step, s.epoch, s.facet, self.mode, r.sce, r.intra_l2, r.intra_nce
            );
            for v in &r.inter {
                line.push_str(&format!(",{v:.9}"));
            }
            writeln!(w, "{line},{:.9}", r.total)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MufiModel,
    pub log: TrainLog,
    /// `(epoch, model)` for each requested snapshot epoch.
    pub snapshots: Vec<(usize, MufiModel)>,
}

/// Single-facet batches, round-robin over facets in fixed order; each
/// facet's sample order is reshuffled every epoch from the run seed.
fn epoch_batches<'w>(
    world: &'w World,
    facets: &[usize],
    batch_size: usize,
    run_seed: u64,
    epoch: usize,
) -> Vec<(usize, Vec<&'w FacetSample>)> {
    let per_facet: Vec<Vec<Vec<&FacetSample>>> = facets
        .iter()
        .map(|&f| {
            let mut samples: Vec<&FacetSample> = world.datasets[f].split(Split::Train).collect();
            let s = seed::split(seed::split(run_seed, epoch as u64), f as u64);
            samples.shuffle(&mut seed::rng(s));
            samples.chunks(batch_size).map(<[_]>::to_vec).collect()
        })
        .collect();
    let rounds = per_facet.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for (i, &f) in facets.iter().enumerate() {
            if let Some(b) = per_facet[i].get(r) {
                out.push((f, b.clone()));
            }
        }
    }
    out
}

/// Trains `model` in place of a copy. The space and teacher cache are only read.
pub fn train(
    model: &MufiModel,
    world: &World,
    space: &SemanticSpace,
    teachers: Option<&TeacherCache>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let intra = world.spec.intra_facets();
    let facets = config.facets.clone().unwrap_or_else(|| intra.clone());
    if let Some(&f) = facets
        .iter()
        .find(|&&f| f >= world.spec.n_facets || world.spec.teacher_only[f])
    {
        return Err(MufiError::Config(format!("facet {f} cannot supply training samples")));
    }
    if model.config.pooling != config.mode.pooling() {
        return Err(MufiError::Config(format!(
            "mode {} needs {:?} pooling but the model uses {:?}",
            config.mode,
            config.mode.pooling(),
            model.config.pooling
        )));
    }
    if config.mode.uses_teachers() && teachers.is_none() {
        return Err(MufiError::Config(format!(
            "mode {} needs teacher predictions",
            config.mode
        )));
    }
    let ctx = LossContext {
        space,
        teachers,
        intra_facets: &intra,
    };
    let mut model = model.clone();
    let trainable = model.trainable_indices(trainable_for(config.mode));
    let mut velocity: Vec<Tensor> = trainable
        .iter()
        .map(|&i| Tensor::zeros(model.params()[i].shape()))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| MufiError::Config(format!("thread pool: {e}")))?;
    let run_seed = seed::derive(config.seed, "train");
    let initial_hash = model.hash();
    let mut steps = Vec::new();
    let mut snapshots = Vec::new();
    let mut samples_seen = vec![0; world.spec.n_facets];
    let mut step = 0;

    for epoch in 1..=config.epochs {
        for (facet, batch) in epoch_batches(world, &facets, config.batch_size, run_seed, epoch) {
            let (report, grads) = pool.install(|| batch_gradients(&model, &batch, &ctx, config.mode, &trainable))?;
            if let Some(term) = report.non_finite_term() {
                return Err(MufiError::Numeric(format!(
                    "step {step} (epoch {epoch}, facet {facet}): {term} loss is not finite"
                )));
            }
            if let Some(g) = grads.iter().position(|g| !g.all_finite()) {
                let name = &model.param_names()[trainable[g]];
                return Err(MufiError::Numeric(format!(
                    "step {step}: gradient of {name} is not finite"
                )));
            }
            for ((&i, v), g) in trainable.iter().zip(&mut velocity).zip(&grads) {
                let p = &mut model.params_mut()[i];
                for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = config.momentum * *vv + gv;
                    *pv -= config.lr * *vv;
                }
            }
            samples_seen[facet] += batch.len();
            steps.push(StepRecord {
                step,
                epoch,
                facet,
                report,
            });
            step += 1;
        }
        if config.snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, model.clone()));
        }
    }
    let log = TrainLog {
        mode: config.mode,
        steps,
        samples_seen,
        initial_hash,
        final_hash: model.hash(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { model, log, snapshots })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub facet: usize,
    pub model: MufiModel,
    pub log: TrainLog,
}

/// Trains on one facet at a time in `order`, each stage starting from the
/// previous stage's parameters. Classification stages get a fresh
/// classifier head sized for the stage's facet.
pub fn sequential_finetune(
    model: &MufiModel,
    order: &[usize],
    world: &World,
    space: &SemanticSpace,
    teachers: Option<&TeacherCache>,
    config: &TrainConfig,
) -> Result<Vec<Stage>> {
    if order.is_empty() {
        return Err(MufiError::Config(
            "sequential fine-tuning needs at least one facet".into(),
        ));
    }
    let mut current = model.clone();
    let mut stages = Vec::with_capacity(order.len());
    for (k, &facet) in order.iter().enumerate() {
        let stage_model = stage_start(&current, config.mode, facet, world, config.seed, k)?;
        let cfg = TrainConfig {
            facets: Some(vec![facet]),
            snapshot_epochs: Vec::new(),
            ..config.clone()
        };
        let out = train(&stage_model, world, space, teachers, &cfg)?;
        current = out.model.clone();
        stages.push(Stage {
            facet,
            model: out.model,
            log: out.log,
        });
    }
    Ok(stages)
}

/// Model a fine-tuning stage starts from: the previous parameters, with a
/// new classifier head when the mode classifies.
pub fn stage_start(
    previous: &MufiModel,
    mode: Mode,
    facet: usize,
    world: &World,
    seed_value: u64,
    stage: usize,
) -> Result<MufiModel> {
    let layout = mode.layout(&[facet], &world.spec.classes_per_facet);
    previous.with_classifier(
        layout,
        seed::split(seed::derive(seed_value, "stage-head"), stage as u64),
    )
}

#[cfg(test)]
mod tests;
