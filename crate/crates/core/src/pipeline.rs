//! End-to-end experiment presets: world, space, teachers, student runs,
//! and the evaluation tables built from them.

use crate::error::{MufiError, Result};
use crate::eval::{probe_all, zero_shot, EvalReport, FacetMatrix, ZeroShotResult};
use crate::linear::FitOptions;
use crate::losses::Mode;
use crate::model::{ModelConfig, MufiModel};
use crate::seed;
use crate::semspace::{build_space, SemanticSpace};
use crate::synthgen::{generate_world, train_teachers, FacetSample, Split, Teacher, TeacherCache, World, WorldSpec};
use crate::trainer::{sequential_finetune, train, TrainConfig, TrainLog, TrainOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub space_dim: usize,
    pub word_dim: usize,
    pub hidden: usize,
    pub out_channels: usize,
    pub train: TrainConfig,
    /// Learning rate for the classification modes, whose loss scale differs
    /// from the embedding losses.
    pub classification_lr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            space_dim: crate::semspace::DEFAULT_SPACE_DIM,
            word_dim: crate::semspace::DEFAULT_WORD_DIM,
            hidden: 32,
            out_channels: 32,
            train: TrainConfig::default(),
            classification_lr: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn train_config(&self, mode: Mode) -> TrainConfig {
        let lr = if mode.is_classification() {
            self.classification_lr
        } else {
            self.train.lr
        };
        TrainConfig {
            mode,
            lr,
            ..self.train.clone()
        }
    }
}

/// Frozen artifacts every student run reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub world: World,
    pub space: SemanticSpace,
    pub teachers: Vec<Teacher>,
    pub cache: TeacherCache,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let world = generate_world(&cfg.world)?;
    let space = build_space(&world.labels, cfg.space_dim, cfg.word_dim)?;
    let teachers = train_teachers(&world, FitOptions::default())?;
    let cache = TeacherCache::build(&world, &teachers);
    Ok(Prepared {
        world,
        space,
        teachers,
        cache,
    })
}

/// Fresh student for `mode`, classifying over `facets` when the mode needs it.
pub fn initial_model(cfg: &ExperimentConfig, world: &World, mode: Mode, facets: &[usize]) -> Result<MufiModel> {
    let spec = &world.spec;
    MufiModel::new(
        ModelConfig {
            grid: [spec.grid[0], spec.grid[1], spec.grid[2]],
            in_channels: spec.channels(),
            hidden: cfg.hidden,
            out_channels: cfg.out_channels,
            space_dim: cfg.space_dim,
            n_facets: spec.n_facets,
            pooling: mode.pooling(),
            classifier: mode.layout(facets, &spec.classes_per_facet),
        },
        seed::derive(cfg.train.seed, "model"),
    )
}

pub fn run_mode(cfg: &ExperimentConfig, p: &Prepared, mode: Mode, snapshot_epochs: Vec<usize>) -> Result<TrainOutcome> {
    let intra = p.world.spec.intra_facets();
    let model = initial_model(cfg, &p.world, mode, &intra)?;
    let tc = TrainConfig {
        snapshot_epochs,
        ..cfg.train_config(mode)
    };
    train(&model, &p.world, &p.space, Some(&p.cache), &tc)
}

/// Classification on one facet only: the single-facet rows.
pub fn run_single_facet(cfg: &ExperimentConfig, p: &Prepared, facet: usize) -> Result<TrainOutcome> {
    let mode = Mode::ClassificationMerged;
    let model = initial_model(cfg, &p.world, mode, &[facet])?;
    let tc = TrainConfig {
        facets: Some(vec![facet]),
        ..cfg.train_config(mode)
    };
    train(&model, &p.world, &p.space, None, &tc)
}

pub fn single_facet_name(facet: usize) -> String {
    format!("single-facet-{facet}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: String,
    pub model: MufiModel,
    pub log: TrainLog,
    /// Mid-run copies; the mufi run keeps one at the midpoint epoch.
    pub snapshots: Vec<(usize, MufiModel)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1 {
    pub matrix: FacetMatrix,
    pub runs: Vec<MethodRun>,
}

impl Table1 {
    pub fn run(&self, method: &str) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

/// Every loss mode plus one single-facet classification baseline per intra
/// facet, each probed on every facet.
pub fn table1(cfg: &ExperimentConfig, p: &Prepared, mut progress: impl FnMut(&str)) -> Result<Table1> {
    let mut runs = Vec::new();
    for mode in Mode::ALL {
        progress(mode.name());
        let snapshots = if mode == Mode::Mufi {
            vec![midpoint(cfg)]
        } else {
            Vec::new()
        };
        let out = run_mode(cfg, p, mode, snapshots)?;
        runs.push(MethodRun {
            method: mode.name().to_string(),
            model: out.model,
            log: out.log,
            snapshots: out.snapshots,
        });
    }
    for f in p.world.spec.intra_facets() {
        let name = single_facet_name(f);
        progress(&name);
        let out = run_single_facet(cfg, p, f)?;
        runs.push(MethodRun {
            method: name,
            model: out.model,
            log: out.log,
            snapshots: out.snapshots,
        });
    }
    let rows = runs
        .iter()
        .map(|r| probe_all(&r.model, &p.world, &r.method))
        .collect::<Result<Vec<_>>>()?;
    Ok(Table1 {
        matrix: FacetMatrix::new(rows)?,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forgetting {
    /// One row per sequential stage, probed on every facet.
    pub stages: FacetMatrix,
    /// Joint training probed at the midpoint and at the end of the same budget.
    pub joint: FacetMatrix,
    pub order: Vec<usize>,
}

impl Forgetting {
    /// First facet's probe accuracy after stage 1 minus after the last stage.
    pub fn sequential_drop(&self) -> f64 {
        let f = self.order[0];
        self.stages.rows[0].accuracies[f] - self.stages.rows.last().expect("stages").accuracies[f]
    }

    /// Absolute change of the first facet's accuracy from midpoint to end of joint training.
    pub fn joint_change(&self) -> f64 {
        let f = self.order[0];
        (self.joint.rows[0].accuracies[f] - self.joint.rows[1].accuracies[f]).abs()
    }
}

fn midpoint(cfg: &ExperimentConfig) -> usize {
    (cfg.train.epochs / 2).max(1)
}

/// Sequential fine-tuning over the intra facets in index order, against
/// joint mufi training with the same total epoch budget.
pub fn forgetting(cfg: &ExperimentConfig, p: &Prepared, seq_mode: Mode) -> Result<Forgetting> {
    let mid = midpoint(cfg);
    let joint = run_mode(cfg, p, Mode::Mufi, vec![mid])?;
    forgetting_against(cfg, p, seq_mode, &joint.snapshots[0].1, &joint.model)
}

/// As [`forgetting`], reusing an existing joint run's midpoint and final
/// models.
pub fn forgetting_against(
    cfg: &ExperimentConfig,
    p: &Prepared,
    seq_mode: Mode,
    joint_mid: &MufiModel,
    joint_final: &MufiModel,
) -> Result<Forgetting> {
    let order = p.world.spec.intra_facets();
    if order.len() < 2 {
        return Err(MufiError::Config("forgetting needs at least two intra facets".into()));
    }
    let base = initial_model(cfg, &p.world, seq_mode, &order[..1])?;
    let stages = sequential_finetune(
        &base,
        &order,
        &p.world,
        &p.space,
        Some(&p.cache),
        &cfg.train_config(seq_mode),
    )?;
    let rows = stages
        .iter()
        .enumerate()
        .map(|(k, s)| probe_all(&s.model, &p.world, &format!("stage-{}-facet-{}", k + 1, s.facet)))
        .collect::<Result<Vec<_>>>()?;

    // each stage sees one facet's train split for `epochs`; joint sees all
    // facets per epoch, so the same sample budget is `epochs` joint epochs
    let joint_rows = vec![
        probe_all(joint_mid, &p.world, &format!("mufi-epoch-{}", midpoint(cfg)))?,
        probe_all(joint_final, &p.world, &format!("mufi-epoch-{}", cfg.train.epochs))?,
    ];
    Ok(Forgetting {
        stages: FacetMatrix::new(rows)?,
        joint: FacetMatrix::new(joint_rows)?,
        order,
    })
}

/// Zero-shot accuracy of head `facet` on that facet's probe-val split.
pub fn zero_shot_facet(model: &MufiModel, p: &Prepared, facet: usize) -> Result<ZeroShotResult> {
    let samples: Vec<&FacetSample> = p.world.datasets[facet].split(Split::ProbeVal).collect();
    zero_shot(model, &p.space, facet, &samples)
}

/// Zero-shot accuracies as a report row over every facet.
pub fn zero_shot_report(model: &MufiModel, p: &Prepared, method: &str) -> Result<EvalReport> {
    let results = (0..p.world.spec.n_facets)
        .map(|f| zero_shot_facet(model, p, f))
        .collect::<Result<Vec<_>>>()?;
    let n = results.iter().map(|r| r.n).sum();
    EvalReport::new(method, results.iter().map(|r| r.accuracy).collect(), n)
}
