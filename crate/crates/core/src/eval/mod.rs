//! Frozen-feature linear probes, zero-shot retrieval, and the method by
//! facet accuracy tables built from them.

mod report;

pub use report::{EvalReport, FacetMatrix};

use crate::error::{MufiError, Result};
use crate::linear::{argmax, FitOptions, SoftmaxRegression};
use crate::model::MufiModel;
use crate::semspace::SemanticSpace;
use crate::synthgen::{FacetSample, Split, World};

/// L2 penalty of the probe classifier.
pub const PROBE_L2: f64 = 1e-3;

pub fn probe_options() -> FitOptions {
    FitOptions {
        l2: PROBE_L2,
        tol: 1e-6,
        max_iter: 5000,
    }
}

/// Pooled encoder features (heads are not involved).
pub fn extract_features(model: &MufiModel, samples: &[&FacetSample]) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|s| model.features(&s.observation)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub n_val: usize,
    /// Probe-train labels held a single class; accuracy is then whatever
    /// predicting that class scores.
    pub degenerate: bool,
    pub converged: bool,
}

/// Per-coordinate mean and standard deviation of the probe-train features;
/// constant coordinates keep unit scale.
fn standardizer(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = xs.first().map_or(0, Vec::len);
    let n = xs.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
    }
    let mut sd = vec![0.0; d];
    for x in xs {
        sd.iter_mut()
            .zip(x.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
    }
    sd.iter_mut().for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
    (mean, sd)
}

fn apply(x: &[f64], mean: &[f64], sd: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mean.iter().zip(sd))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}

/// Standardises on probe-train statistics, fits the regularised softmax
/// probe, and scores top-1 accuracy on probe-val.
pub fn linear_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    val_x: &[Vec<f64>],
    val_y: &[usize],
    classes: usize,
) -> Result<ProbeResult> {
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(MufiError::Input("feature and label counts differ".into()));
    }
    if train_x.is_empty() || val_x.is_empty() {
        return Err(MufiError::Data("probe needs non-empty train and val splits".into()));
    }
    if let Some(&y) = train_y.iter().chain(val_y).find(|&&y| y >= classes) {
        return Err(MufiError::Input(format!(
            "label {y} out of range for {classes} classes"
        )));
    }
    let (mean, sd) = standardizer(train_x);
    let xs: Vec<Vec<f64>> = train_x.iter().map(|x| apply(x, &mean, &sd)).collect();
    let degenerate = train_y.iter().all(|&y| y == train_y[0]);
    let (model, outcome) = SoftmaxRegression::fit(&xs, train_y, classes, probe_options());
    let hits = val_x
        .iter()
        .zip(val_y)
        .filter(|(x, &y)| model.predict(&apply(x, &mean, &sd)) == y)
        .count();
    Ok(ProbeResult {
        accuracy: hits as f64 / val_x.len() as f64,
        n_val: val_x.len(),
        degenerate,
        converged: outcome.converged,
    })
}

/// Probe on `facet`'s probe-train split, scored on its probe-val split,
/// using that facet's latent labels.
pub fn probe_facet(model: &MufiModel, world: &World, facet: usize) -> Result<ProbeResult> {
    let d = world
        .datasets
        .get(facet)
        .ok_or_else(|| MufiError::Input(format!("no dataset for facet {facet}")))?;
    let tr: Vec<&FacetSample> = d.split(Split::ProbeTrain).collect();
    let va: Vec<&FacetSample> = d.split(Split::ProbeVal).collect();
    let labels = |s: &[&FacetSample]| s.iter().map(|x| x.latent_labels[facet]).collect::<Vec<_>>();
    linear_probe(
        &extract_features(model, &tr)?,
        &labels(&tr),
        &extract_features(model, &va)?,
        &labels(&va),
        world.spec.classes_per_facet[facet],
    )
}

/// Probe accuracy on every facet of the world.
pub fn probe_all(model: &MufiModel, world: &World, method: &str) -> Result<EvalReport> {
    let results = (0..world.spec.n_facets)
        .map(|f| probe_facet(model, world, f))
        .collect::<Result<Vec<_>>>()?;
    let n_val = results.iter().map(|r| r.n_val).sum();
    EvalReport::new(method, results.iter().map(|r| r.accuracy).collect(), n_val)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Nearest label row of facet `facet` by cosine; `None` for a zero embedding.
pub fn nearest_label(embedding: &[f64], space: &SemanticSpace, facet: usize) -> Option<usize> {
    let scores: Option<Vec<f64>> = (0..space.classes(facet))
        .map(|c| cosine(embedding, space.row(facet, c)))
        .collect();
    scores.map(|s| argmax(&s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotResult {
    pub accuracy: f64,
    pub n: usize,
    /// Samples whose embedding was the zero vector (counted as errors).
    pub zero_embeddings: usize,
}

/// Classifies each sample by the label row nearest to head `facet`'s
/// embedding. No probe data is used.
pub fn zero_shot(
    model: &MufiModel,
    space: &SemanticSpace,
    facet: usize,
    samples: &[&FacetSample],
) -> Result<ZeroShotResult> {
    if facet >= space.n_facets() || facet >= model.config.n_facets {
        return Err(MufiError::Input(format!("no head or label set for facet {facet}")));
    }
    let (mut hits, mut zeros) = (0, 0);
    for s in samples {
        let e = model.embedding(facet, &s.observation)?;
        match nearest_label(&e, space, facet) {
            Some(c) if c == s.latent_labels[facet] => hits += 1,
            Some(_) => {}
            None => zeros += 1,
        }
    }
    Ok(ZeroShotResult {
        accuracy: if samples.is_empty() {
            0.0
        } else {
            hits as f64 / samples.len() as f64
        },
        n: samples.len(),
        zero_embeddings: zeros,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use crate::model::{ModelConfig, Pooling};
    use crate::semspace::{build_space, LabelText};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_labels_are_flagged_degenerate() {
        let xs = vec![vec![0.1, 0.2], vec![0.3, -0.2], vec![1.0, 0.0]];
        let r = linear_probe(&xs, &[2, 2, 2], &xs, &[2, 2, 2], 3).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn one_hot_features_are_perfectly_probed() {
        let ys: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let xs: Vec<Vec<f64>> = ys
            .iter()
            .map(|&y| (0..4).map(|k| f64::from(u8::from(k == y))).collect())
            .collect();
        let r = linear_probe(&xs, &ys, &xs, &ys, 4).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn random_features_score_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let k = 8;
        let n = 800;
        let mut make = |n: usize| {
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<usize> = (0..n).map(|i| i % k).collect();
            (x, y)
        };
        let (tx, ty) = make(n);
        let (vx, vy) = make(n);
        let r = linear_probe(&tx, &ty, &vx, &vy, k).unwrap();
        let p = 1.0 / k as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((r.accuracy - p).abs() < 3.0 * se, "accuracy {}", r.accuracy);
    }

    fn tiny_model() -> MufiModel {
        MufiModel::new(
            ModelConfig {
                grid: [1, 2, 2],
                in_channels: 3,
                hidden: 4,
                out_channels: 5,
                space_dim: 2,
                n_facets: 1,
                pooling: Pooling::Attention,
                classifier: None,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn features_of_constant_grid_are_the_constant_channels() {
        let mut m = tiny_model();
        // identity-like encoder on non-negative input: relu(x·I) = x
        m.params_mut()[0] = Tensor::matrix(3, 4, vec![1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0.]);
        m.params_mut()[2] = Tensor::matrix(4, 5, {
            let mut v = vec![0.0; 20];
            for i in 0..4 {
                v[i * 5 + i] = 1.0;
            }
            v
        });
        let obs = Tensor::matrix(4, 3, [0.5, 1.5, 2.0].repeat(4));
        let f = m.features(&obs).unwrap();
        assert_eq!(f.len(), 5);
        assert_eq!(f, vec![0.5, 1.5, 2.0, 0.0, 0.0]);
        assert_eq!(f, m.features(&obs).unwrap());
    }

    #[test]
    fn nearest_label_by_cosine() {
        let labels: Vec<LabelText> = ["scene beach", "scene road", "scene snow"]
            .iter()
            .enumerate()
            .map(|(i, t)| LabelText {
                facet_id: 0,
                class_id: i,
                text: t.to_string(),
            })
            .collect();
        let space = build_space(&labels, 2, 16).unwrap();
        for c in 0..3 {
            let row = space.row(0, c).to_vec();
            assert_eq!(nearest_label(&row, &space, 0), Some(c));
            let scaled: Vec<f64> = row.iter().map(|v| v * 7.5).collect();
            assert_eq!(nearest_label(&scaled, &space, 0), Some(c));
        }
        assert_eq!(nearest_label(&[0.0, 0.0], &space, 0), None);
    }

    #[test]
    fn zero_embedding_counts_as_error() {
        let mut m = tiny_model();
        m.params_mut().iter_mut().for_each(|p| p.data_mut().fill(0.0));
        let labels: Vec<LabelText> = ["a cake", "a ball"]
            .iter()
            .enumerate()
            .map(|(i, t)| LabelText {
                facet_id: 0,
                class_id: i,
                text: t.to_string(),
            })
            .collect();
        let space = build_space(&labels, 1, 8).unwrap();
        let sample = FacetSample {
            id: 0,
            observation: Tensor::zeros(&[4, 3]),
            latent_labels: vec![0],
            source_facet: 0,
            split: Split::ProbeVal,
        };
        let r = zero_shot(&m, &space, 0, &[&sample]).unwrap();
        assert_eq!(r.zero_embeddings, 1);
        assert_eq!(r.accuracy, 0.0);
    }
}
