//! Training objectives: classification cross-entropy, intra-facet L2 and
//! contrastive losses, teacher-derived pseudo targets, and the inter-facet
//! distillation term, combined per training mode.

use std::fmt;
use std::str::FromStr;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{MufiError, Result};
use crate::model::{Bound, ClassifierLayout, MufiModel, Pooling};
use crate::semspace::SemanticSpace;
use crate::synthgen::{FacetSample, TeacherCache};

/// Tolerance on teacher distributions summing to one.
pub const PROB_TOLERANCE: f64 = 1e-6;

/// `−log softmax(logits)[label]`.
pub fn sce_loss<'t>(logits: &Var<'t>, label: usize) -> Result<Var<'t>> {
    let k = logits.shape().iter().product::<usize>();
    if label >= k {
        return Err(MufiError::Input(format!("label {label} out of range for {k} logits")));
    }
    Ok(logits
        .reshape(&[k])?
        .log_softmax(0)?
        .index_select(&[label])?
        .sum()
        .neg())
}

/// Squared Euclidean distance.
pub fn intra_l2<'t>(q: &Var<'t>, s: &Var<'t>) -> Result<Var<'t>> {
    Ok(q.sub(s)?.l2_norm_sq())
}

/// Contrastive loss of `q` against every row of `labels`, with the
/// `positive` row as target. Raw dot products, no temperature.
pub fn intra_nce<'t>(q: &Var<'t>, labels: &Var<'t>, positive: usize) -> Result<Var<'t>> {
    let sh = labels.shape();
    if sh.len() != 2 {
        return Err(MufiError::dim(
            "intra_nce",
            format!("label matrix must be 2-D, got {sh:?}"),
        ));
    }
    let (k, d) = (sh[0], sh[1]);
    if positive >= k {
        return Err(MufiError::Input(format!(
            "positive index {positive} out of range for {k} labels"
        )));
    }
    let scores = labels.matmul(&q.reshape(&[d, 1])?)?.reshape(&[k])?;
    Ok(scores.log_softmax(0)?.index_select(&[positive])?.sum().neg())
}

pub fn check_distribution(p: &[f64], classes: usize) -> Result<()> {
    if p.len() != classes {
        return Err(MufiError::Input(format!(
            "distribution has {} entries, facet has {classes} labels",
            p.len()
        )));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(MufiError::Input(format!(
            "distribution entry {v} is negative or not finite"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOLERANCE {
        return Err(MufiError::Input(format!("distribution sums to {s}, not 1")));
    }
    Ok(())
}

/// Probability-weighted sum of label rows, `pᵀS`.
pub fn pseudo_semantic<'t>(p: &Var<'t>, labels: &Var<'t>) -> Result<Var<'t>> {
    let sh = labels.shape();
    if sh.len() != 2 {
        return Err(MufiError::dim(
            "pseudo_semantic",
            format!("label matrix must be 2-D, got {sh:?}"),
        ));
    }
    check_distribution(p.value().data(), sh[0])?;
    p.reshape(&[1, sh[0]])?.matmul(labels)?.reshape(&[sh[1]])
}

/// `Σ ‖embeddings[m] − pseudo[m]‖²` over `facets`, skipping `source`.
/// Both slices are indexed by facet; a `None` pseudo target for a facet
/// in the sum is a data error.
pub fn inter_facet<'t>(
    embeddings: &[Option<Var<'t>>],
    pseudo: &[Option<Var<'t>>],
    source: usize,
    facets: &[usize],
) -> Result<Vec<(usize, Var<'t>)>> {
    let mut terms = Vec::new();
    for &m in facets.iter().filter(|&&m| m != source) {
        let target = pseudo
            .get(m)
            .and_then(Option::as_ref)
            .ok_or_else(|| MufiError::Data(format!("missing teacher prediction for facet {m}")))?;
        let emb = embeddings
            .get(m)
            .and_then(Option::as_ref)
            .ok_or_else(|| MufiError::Data(format!("missing head embedding for facet {m}")))?;
        terms.push((m, emb.sub(target)?.l2_norm_sq()));
    }
    Ok(terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    ClassificationMerged,
    ClassificationMultiFc,
    IntraL2,
    IntraNce,
    IntraNceInterVideo,
    IntraNceInterAll,
    Mufi,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::ClassificationMerged,
        Mode::ClassificationMultiFc,
        Mode::IntraL2,
        Mode::IntraNce,
        Mode::IntraNceInterVideo,
        Mode::IntraNceInterAll,
        Mode::Mufi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::ClassificationMerged => "classification-merged",
            Mode::ClassificationMultiFc => "classification-multi-fc",
            Mode::IntraL2 => "intra-l2",
            Mode::IntraNce => "intra-nce",
            Mode::IntraNceInterVideo => "intra-nce+inter-video",
            Mode::IntraNceInterAll => "intra-nce+inter-all",
            Mode::Mufi => "mufi",
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Mode::ClassificationMerged | Mode::ClassificationMultiFc)
    }

    pub fn uses_teachers(self) -> bool {
        matches!(self, Mode::IntraNceInterVideo | Mode::IntraNceInterAll | Mode::Mufi)
    }

    pub fn pooling(self) -> Pooling {
        if self == Mode::Mufi {
            Pooling::Attention
        } else {
            Pooling::Global
        }
    }

    /// Classifier layout over the given training facets, if the mode has one.
    pub fn layout(self, facets: &[usize], classes: &[usize]) -> Option<ClassifierLayout> {
        let sizes: Vec<usize> = facets.iter().map(|&f| classes[f]).collect();
        match self {
            Mode::ClassificationMerged => Some(ClassifierLayout::Merged {
                facets: facets.to_vec(),
                sizes,
            }),
            Mode::ClassificationMultiFc => Some(ClassifierLayout::MultiFc {
                facets: facets.to_vec(),
                sizes,
            }),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = MufiError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.iter().copied().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
            MufiError::Config(format!("unknown mode {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Frozen inputs shared by every loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub space: &'a SemanticSpace,
    pub teachers: Option<&'a TeacherCache>,
    /// Facets that supply training samples.
    pub intra_facets: &'a [usize],
}

/// Per-term values averaged over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub sce: f64,
    pub intra_l2: f64,
    pub intra_nce: f64,
    /// Indexed by target facet; zero for facets outside the mode's sum.
    pub inter: Vec<f64>,
    pub total: f64,
    pub batch: usize,
}

impl LossReport {
    fn zero(n_facets: usize) -> Self {
        Self {
            sce: 0.0,
            intra_l2: 0.0,
            intra_nce: 0.0,
            inter: vec![0.0; n_facets],
            total: 0.0,
            batch: 0,
        }
    }

    pub fn inter_total(&self) -> f64 {
        self.inter.iter().sum()
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<String> {
        let named = [
            ("sce", self.sce),
            ("intra_l2", self.intra_l2),
            ("intra_nce", self.intra_nce),
        ];
        if let Some((n, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
            return Some(n.to_string());
        }
        if let Some(m) = self.inter.iter().position(|v| !v.is_finite()) {
            return Some(format!("inter[{m}]"));
        }
        (!self.total.is_finite()).then(|| "total".to_string())
    }

    fn accumulate(&mut self, other: &LossReport) {
        self.sce += other.sce;
        self.intra_l2 += other.intra_l2;
        self.intra_nce += other.intra_nce;
        for (a, b) in self.inter.iter_mut().zip(&other.inter) {
            *a += b;
        }
        self.total += other.total;
        self.batch += other.batch;
    }

    fn scaled(mut self, c: f64) -> Self {
        self.sce *= c;
        self.intra_l2 *= c;
        self.intra_nce *= c;
        self.inter.iter_mut().for_each(|v| *v *= c);
        self.total *= c;
        self
    }
}

/// Facets whose heads receive inter-facet supervision under `mode`.
fn inter_facets(mode: Mode, ctx: &LossContext<'_>) -> Vec<usize> {
    match mode {
        Mode::IntraNceInterVideo => ctx.intra_facets.to_vec(),
        Mode::IntraNceInterAll | Mode::Mufi => (0..ctx.space.n_facets()).collect(),
        _ => Vec::new(),
    }
}

/// One sample's objective on `bound`'s tape, with its per-term values.
pub fn sample_loss<'t>(
    bound: &Bound<'t>,
    sample: &FacetSample,
    ctx: &LossContext<'_>,
    mode: Mode,
) -> Result<(Var<'t>, LossReport)> {
    let tape = bound.vars[0].tape();
    let n = sample.source_facet;
    let label = sample.observed_label();
    let mut report = LossReport::zero(ctx.space.n_facets());
    report.batch = 1;
    let grid = bound.encode(&sample.observation)?;

    let loss = if mode.is_classification() {
        let layout = bound
            .config
            .classifier
            .as_ref()
            .ok_or_else(|| MufiError::Config(format!("mode {mode} needs a classifier head")))?;
        let logits = bound.classify(&grid, n)?;
        let target = match layout {
            ClassifierLayout::Merged { .. } => layout.block(n)?.start + label,
            ClassifierLayout::MultiFc { .. } => label,
        };
        let l = sce_loss(&logits, target)?;
        report.sce = l.item();
        l
    } else {
        if bound.config.pooling != mode.pooling() {
            return Err(MufiError::Config(format!(
                "mode {mode} expects {:?} pooling, model has {:?}",
                mode.pooling(),
                bound.config.pooling
            )));
        }
        let labels_n = tape.constant(ctx.space.facets[n].clone());
        let q = bound.project(n, &grid)?;
        let intra = if mode == Mode::IntraL2 {
            let s = labels_n.index_select(&[label])?.reshape(&[ctx.space.dim])?;
            let l = intra_l2(&q, &s)?;
            report.intra_l2 = l.item();
            l
        } else {
            let l = intra_nce(&q, &labels_n, label)?;
            report.intra_nce = l.item();
            l
        };
        let targets = inter_facets(mode, ctx);
        if targets.is_empty() {
            intra
        } else {
            let cache = ctx
                .teachers
                .ok_or_else(|| MufiError::Config(format!("mode {mode} needs teacher predictions")))?;
            let n_facets = ctx.space.n_facets();
            let mut embeddings: Vec<Option<Var<'t>>> = vec![None; n_facets];
            let mut pseudo: Vec<Option<Var<'t>>> = vec![None; n_facets];
            for &m in targets.iter().filter(|&&m| m != n) {
                embeddings[m] = Some(bound.project(m, &grid)?);
                if let Some(p) = cache.get(sample.id, m) {
                    let p = tape.constant(Tensor::vector(p.to_vec()));
                    let s = tape.constant(ctx.space.facets[m].clone());
                    pseudo[m] = Some(pseudo_semantic(&p, &s)?);
                }
            }
            let mut total = intra;
            for (m, term) in inter_facet(&embeddings, &pseudo, n, &targets)? {
                report.inter[m] = term.item();
                total = total.add(&term)?;
            }
            total
        }
    };
    report.total = loss.item();
    Ok((loss, report))
}

/// Batch mean on a single tape. Used for gradient checks and small batches.
pub fn total_loss<'t>(
    bound: &Bound<'t>,
    batch: &[&FacetSample],
    ctx: &LossContext<'_>,
    mode: Mode,
) -> Result<(Var<'t>, LossReport)> {
    if batch.is_empty() {
        return Err(MufiError::Input("empty batch".into()));
    }
    let mut report = LossReport::zero(ctx.space.n_facets());
    let mut sum: Option<Var<'t>> = None;
    for s in batch {
        let (l, r) = sample_loss(bound, s, ctx, mode)?;
        report.accumulate(&r);
        sum = Some(match sum {
            None => l,
            Some(acc) => acc.add(&l)?,
        });
    }
    let k = batch.len() as f64;
    let mean = sum.expect("non-empty batch").scale(1.0 / k);
    let mut report = report.scaled(1.0 / k);
    report.batch = batch.len();
    report.total = mean.item();
    Ok((mean, report))
}

/// Batch-mean loss and its gradient for the `trainable` parameter blocks.
/// Each sample runs on its own tape; per-sample results are reduced in
/// batch order, so the outcome does not depend on how work is scheduled.
pub fn batch_gradients(
    model: &MufiModel,
    batch: &[&FacetSample],
    ctx: &LossContext<'_>,
    mode: Mode,
    trainable: &[usize],
) -> Result<(LossReport, Vec<Tensor>)> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(MufiError::Input("empty batch".into()));
    }
    let per_sample: Vec<Result<(LossReport, Vec<Tensor>)>> = batch
        .par_iter()
        .map(|s| {
            let tape = Tape::new();
            let bound = model.bind(&tape, trainable);
            let (loss, report) = sample_loss(&bound, s, ctx, mode)?;
            let mut grads = tape.backward(&loss)?;
            let g = trainable
                .iter()
                .map(|&i| grads.take(&bound.vars[i]).expect("trainable leaf has a gradient"))
                .collect();
            Ok((report, g))
        })
        .collect();
    let k = batch.len() as f64;
    let mut report = LossReport::zero(ctx.space.n_facets());
    let mut sum: Option<Vec<Tensor>> = None;
    for item in per_sample {
        let (r, g) = item?;
        report.accumulate(&r);
        match &mut sum {
            None => sum = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let mut grads = sum.expect("non-empty batch");
    grads
        .iter_mut()
        .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v /= k));
    let mut report = report.scaled(1.0 / k);
    report.batch = batch.len();
    Ok((report, grads))
}

/// Forward-only batch report, one tape per sample.
pub fn evaluate_loss(
    model: &MufiModel,
    batch: &[&FacetSample],
    ctx: &LossContext<'_>,
    mode: Mode,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(MufiError::Input("empty batch".into()));
    }
    let mut report = LossReport::zero(ctx.space.n_facets());
    for s in batch {
        let tape = Tape::new();
        let bound = model.bind(&tape, &[]);
        report.accumulate(&sample_loss(&bound, s, ctx, mode)?.1);
    }
    let mut report = report.scaled(1.0 / batch.len() as f64);
    report.batch = batch.len();
    Ok(report)
}
