use super::world::{FacetDataset, Region, Split, World};
use crate::diffcore::Tensor;
use crate::error::{MufiError, Result};
use crate::linear::{FitOptions, FitOutcome, SoftmaxRegression};

/// Frozen per-facet classifier. It reads the channel mean over its own
/// facet's region, then applies multinomial logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub facet: usize,
    pub region: Region,
    pub grid: [usize; 4],
    pub model: SoftmaxRegression,
    pub outcome: FitOutcome,
    frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherStatus {
    Converged,
    /// Hit the iteration cap; the final loss is kept in the outcome.
    NotConverged,
}

impl Teacher {
    pub(crate) fn from_parts(
        facet: usize,
        region: Region,
        grid: [usize; 4],
        model: SoftmaxRegression,
        outcome: FitOutcome,
    ) -> Self {
        Self {
            facet,
            region,
            grid,
            model,
            outcome,
            frozen: true,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn status(&self) -> TeacherStatus {
        if self.outcome.converged {
            TeacherStatus::Converged
        } else {
            TeacherStatus::NotConverged
        }
    }

    pub fn features(&self, observation: &Tensor) -> Vec<f64> {
        region_mean(observation, &self.region, &self.grid)
    }

    /// Class distribution for one observation.
    pub fn predict(&self, observation: &Tensor) -> Vec<f64> {
        self.model.predict_proba(&self.features(observation))
    }

    pub fn accuracy<'a>(&self, samples: impl IntoIterator<Item = &'a super::FacetSample>) -> f64 {
        let (mut hit, mut n) = (0usize, 0usize);
        for s in samples {
            n += 1;
            if self.model.predict(&self.features(&s.observation)) == s.latent_labels[self.facet] {
                hit += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    }
}

pub fn region_mean(observation: &Tensor, region: &Region, grid: &[usize; 4]) -> Vec<f64> {
    let c = grid[3];
    let positions = region.positions(grid);
    let mut out = vec![0.0; c];
    for &p in &positions {
        for (o, v) in out.iter_mut().zip(observation.row(p)) {
            *o += v;
        }
    }
    let n = positions.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Fits facet `facet`'s teacher on the train split of its own dataset,
/// labelled with the privileged latent class of that facet.
pub fn train_teacher(world: &World, facet: usize, opts: FitOptions) -> Result<Teacher> {
    let dataset: &FacetDataset = world
        .datasets
        .get(facet)
        .ok_or_else(|| MufiError::Input(format!("no dataset for facet {facet}")))?;
    let region = world.regions[facet];
    let grid = world.spec.grid;
    let (xs, ys): (Vec<Vec<f64>>, Vec<usize>) = dataset
        .split(Split::Train)
        .map(|s| (region_mean(&s.observation, &region, &grid), s.latent_labels[facet]))
        .unzip();
    if xs.is_empty() {
        return Err(MufiError::Data(format!(
            "facet {facet} has no training samples for its teacher"
        )));
    }
    let classes = world.spec.classes_per_facet[facet];
    let (model, outcome) = SoftmaxRegression::fit(&xs, &ys, classes, opts);
    Ok(Teacher::from_parts(facet, region, grid, model, outcome))
}

pub fn train_teachers(world: &World, opts: FitOptions) -> Result<Vec<Teacher>> {
    (0..world.spec.n_facets)
        .map(|f| train_teacher(world, f, opts))
        .collect()
}

/// Precomputed teacher outputs, indexed by sample id then teacher facet.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache {
    probs: Vec<Vec<Vec<f64>>>,
}

impl TeacherCache {
    pub fn build(world: &World, teachers: &[Teacher]) -> Self {
        let probs = world
            .datasets
            .iter()
            .flat_map(|d| &d.samples)
            .map(|s| {
                teachers
                    .iter()
                    .map(|t| renormalize(t.predict(&s.observation)))
                    .collect()
            })
            .collect();
        Self { probs }
    }

    pub fn get(&self, sample_id: u64, facet: usize) -> Option<&[f64]> {
        self.probs
            .get(sample_id as usize)
            .and_then(|per| per.get(facet))
            .map(Vec::as_slice)
    }

    pub fn n_teachers(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }
}

fn renormalize(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}
