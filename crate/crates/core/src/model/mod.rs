//! The student network: a per-position encoder, one attention projection
//! head per facet, and an optional classifier head for the baselines.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{MufiError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Attention,
    Global,
}

/// How classifier logits are grouped over facets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassifierLayout {
    /// One softmax over the union of the listed facets' classes.
    Merged { facets: Vec<usize>, sizes: Vec<usize> },
    /// Shared weight block, but the softmax only spans the source facet's classes.
    MultiFc { facets: Vec<usize>, sizes: Vec<usize> },
}

impl ClassifierLayout {
    fn parts(&self) -> (&[usize], &[usize]) {
        match self {
            Self::Merged { facets, sizes } | Self::MultiFc { facets, sizes } => (facets, sizes),
        }
    }

    pub fn facets(&self) -> &[usize] {
        self.parts().0
    }

    pub fn total(&self) -> usize {
        self.parts().1.iter().sum()
    }

    /// Logit range belonging to `facet`.
    pub fn block(&self, facet: usize) -> Result<std::ops::Range<usize>> {
        let (facets, sizes) = self.parts();
        let pos = facets
            .iter()
            .position(|&f| f == facet)
            .ok_or_else(|| MufiError::Config(format!("classifier layout has no facet {facet}")))?;
        let start: usize = sizes[..pos].iter().sum();
        Ok(start..start + sizes[pos])
    }

    fn code(&self) -> usize {
        match self {
            Self::Merged { .. } => 1,
            Self::MultiFc { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// `[T, H, W]` of the descriptor grid.
    pub grid: [usize; 3],
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    pub space_dim: usize,
    pub n_facets: usize,
    pub pooling: Pooling,
    pub classifier: Option<ClassifierLayout>,
}

impl ModelConfig {
    pub fn positions(&self) -> usize {
        self.grid.iter().product()
    }
}

/// Parameters in a fixed enumeration order: encoder (w1, b1, w2, b2), then
/// per head (attention weight, attention bias, embedding, embedding bias),
/// then the classifier (weight, bias) if present.
#[derive(Debug, Clone, PartialEq)]
pub struct MufiModel {
    pub config: ModelConfig,
    params: Vec<Tensor>,
}

const ENCODER_PARAMS: usize = 4;
const HEAD_PARAMS: usize = 4;

/// Which blocks a training run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub encoder: bool,
    pub heads: bool,
    pub attention: bool,
    pub classifier: bool,
}

impl MufiModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let ModelConfig {
            in_channels: c,
            hidden: h,
            out_channels: o,
            space_dim: d,
            ..
        } = config;
        if [c, h, o, d, config.n_facets].contains(&0) || config.grid.contains(&0) {
            return Err(MufiError::Config(format!("model extents must be positive: {config:?}")));
        }
        let mut rng = seed::rng(seed::derive(seed, "model-init"));
        let mut uniform = |rows: usize, cols: usize| {
            let r = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-r..r)).collect();
            Tensor::from_parts(vec![rows, cols], data)
        };
        let mut params = vec![uniform(c, h), Tensor::zeros(&[h]), uniform(h, o), Tensor::zeros(&[o])];
        for _ in 0..config.n_facets {
            params.push(Tensor::zeros(&[o, 1]));
            params.push(Tensor::scalar(0.0));
            params.push(uniform(o, d));
            params.push(Tensor::zeros(&[d]));
        }
        if let Some(layout) = &config.classifier {
            if layout.facets().iter().any(|&f| f >= config.n_facets) || layout.total() == 0 {
                return Err(MufiError::Config(format!(
                    "classifier layout {layout:?} does not fit the model"
                )));
            }
            params.push(uniform(o, layout.total()));
            params.push(Tensor::zeros(&[layout.total()]));
        }
        Ok(Self { config, params })
    }

    pub(crate) fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        let template = Self::new(config.clone(), 0)?;
        if template.params.len() != params.len()
            || template.params.iter().zip(&params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(MufiError::Format(
                "parameter blocks do not match the model config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for n in 0..self.config.n_facets {
            for p in ["attn_w", "attn_b", "embed", "embed_b"] {
                names.push(format!("head{n}.{p}"));
            }
        }
        if self.config.classifier.is_some() {
            names.push("classifier.w".into());
            names.push("classifier.b".into());
        }
        names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Indices of the blocks selected by `t`.
    pub fn trainable_indices(&self, t: Trainable) -> Vec<usize> {
        let mut out = Vec::new();
        if t.encoder {
            out.extend(0..ENCODER_PARAMS);
        }
        for n in 0..self.config.n_facets {
            let base = ENCODER_PARAMS + HEAD_PARAMS * n;
            if t.attention {
                out.extend([base, base + 1]);
            }
            if t.heads {
                out.extend([base + 2, base + 3]);
            }
        }
        if t.classifier && self.config.classifier.is_some() {
            let base = ENCODER_PARAMS + HEAD_PARAMS * self.config.n_facets;
            out.extend([base, base + 1]);
        }
        out
    }

    /// Replaces the classifier head with a freshly initialised one.
    pub fn with_classifier(&self, layout: Option<ClassifierLayout>, seed: u64) -> Result<Self> {
        let config = ModelConfig {
            classifier: layout,
            ..self.config.clone()
        };
        let mut fresh = Self::new(config, seed)?;
        let keep = ENCODER_PARAMS + HEAD_PARAMS * self.config.n_facets;
        fresh.params[..keep].clone_from_slice(&self.params[..keep]);
        Ok(fresh)
    }

    /// SHA-256 over parameter names, shapes and little-endian values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.param_names().iter().zip(&self.params) {
            h.update(name.as_bytes());
            for &e in t.shape() {
                h.update((e as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Places every parameter on `tape`; only indices in `trainable` get gradients.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: &[usize]) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.leaf(p.clone(), trainable.contains(&i)))
            .collect();
        Bound {
            config: self.config.clone(),
            vars,
        }
    }
}

/// A model's parameters placed on a tape.
pub struct Bound<'t> {
    pub config: ModelConfig,
    pub vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    fn tape(&self) -> &'t Tape {
        self.vars[0].tape()
    }

    fn head(&self, n: usize) -> Result<&[Var<'t>]> {
        if n >= self.config.n_facets {
            return Err(MufiError::Input(format!("model has no head {n}")));
        }
        let base = ENCODER_PARAMS + HEAD_PARAMS * n;
        Ok(&self.vars[base..base + HEAD_PARAMS])
    }

    /// Per-position two-layer rectified channel mixing: `[P, C]` to `[P, C']`.
    pub fn encode(&self, observation: &Tensor) -> Result<Var<'t>> {
        let p = self.config.positions();
        if observation.shape() != [p, self.config.in_channels] {
            return Err(MufiError::dim(
                "encode",
                format!(
                    "observation {:?} does not match grid {:?} x {} channels",
                    observation.shape(),
                    self.config.grid,
                    self.config.in_channels
                ),
            ));
        }
        let v = &self.vars;
        let x = self.tape().constant(observation.clone());
        let h = x.matmul(&v[0])?.add(&v[1].repeat_rows(p)?)?.relu();
        Ok(h.matmul(&v[2])?.add(&v[3].repeat_rows(p)?)?.relu())
    }

    fn embed(&self, head: &[Var<'t>], pooled: &Var<'t>) -> Result<Var<'t>> {
        let d = self.config.space_dim;
        pooled.matmul(&head[2])?.add(&head[3].reshape(&[1, d])?)?.reshape(&[d])
    }

    /// Softmax attention over positions, attended descriptor, linear embed.
    /// Returns the `d`-vector embedding and the `P`-vector attention map.
    pub fn attend_project(&self, n: usize, grid: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let head = self.head(n)?;
        let p = grid.shape()[0];
        let logits = grid.matmul(&head[0])?.add_scalar(&head[1])?.reshape(&[p])?;
        let attn = logits.softmax(0)?;
        let attended = attn.reshape(&[1, p])?.matmul(grid)?;
        Ok((self.embed(head, &attended)?, attn))
    }

    /// Mean over positions, then the same linear embed.
    pub fn global_project(&self, n: usize, grid: &Var<'t>) -> Result<Var<'t>> {
        let head = self.head(n)?;
        let pooled = self.gap(grid)?;
        self.embed(head, &pooled)
    }

    pub fn project(&self, n: usize, grid: &Var<'t>) -> Result<Var<'t>> {
        match self.config.pooling {
            Pooling::Attention => Ok(self.attend_project(n, grid)?.0),
            Pooling::Global => self.global_project(n, grid),
        }
    }

    /// `[1, C']` mean descriptor.
    pub fn gap(&self, grid: &Var<'t>) -> Result<Var<'t>> {
        let p = grid.shape()[0];
        let uniform = self.tape().constant(Tensor::full(&[1, p], 1.0 / p as f64));
        uniform.matmul(grid)
    }

    /// Logits over the classes visible to a sample from `source_facet`:
    /// the whole merged set, or the source facet's block for multi-fc.
    pub fn classify(&self, grid: &Var<'t>, source_facet: usize) -> Result<Var<'t>> {
        let layout = self
            .config
            .classifier
            .as_ref()
            .ok_or_else(|| MufiError::Config("model has no classifier head".into()))?;
        let base = ENCODER_PARAMS + HEAD_PARAMS * self.config.n_facets;
        let (w, b) = (&self.vars[base], &self.vars[base + 1]);
        let k = layout.total();
        let logits = self.gap(grid)?.matmul(w)?.add(&b.reshape(&[1, k])?)?.reshape(&[k])?;
        match layout {
            ClassifierLayout::Merged { .. } => {
                layout.block(source_facet)?;
                Ok(logits)
            }
            ClassifierLayout::MultiFc { .. } => {
                let idx: Vec<usize> = layout.block(source_facet)?.collect();
                logits.index_select(&idx)
            }
        }
    }
}

/// Forward-only helpers on a frozen model.
impl MufiModel {
    /// Encoder output mean over positions.
    pub fn features(&self, observation: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = self.bind(&tape, &[]);
        let grid = b.encode(observation)?;
        Ok(b.gap(&grid)?.value().into_data())
    }

    pub fn embedding(&self, n: usize, observation: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = self.bind(&tape, &[]);
        let grid = b.encode(observation)?;
        Ok(b.project(n, &grid)?.value().into_data())
    }

    pub fn attention_map(&self, n: usize, observation: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = self.bind(&tape, &[]);
        let grid = b.encode(observation)?;
        Ok(b.attend_project(n, &grid)?.1.value().into_data())
    }
}
