//! The shared semantic label space: pooled word vectors reduced by PCA.

mod io;
mod pca;
mod words;

pub use io::{read_space, write_space, write_space_csv, SPACE_MAGIC};
pub use pca::{fit_pca, fit_pca_with, jacobi_eigen, reconstruction_error, EigenRoute, PcaTransform};
pub use words::{embed_label, embed_word, tokenize, DEFAULT_WORD_DIM};

use std::collections::HashSet;

use crate::diffcore::Tensor;
use crate::error::{MufiError, Result};

/// Default reduced dimension of the label space.
pub const DEFAULT_SPACE_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelText {
    pub facet_id: usize,
    pub class_id: usize,
    pub text: String,
}

/// Frozen per-facet label matrices in a common reduced space.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSpace {
    pub dim: usize,
    pub word_dim: usize,
    /// `facets[n]` is `|L^n| × dim`; row `j` embeds class `j` of facet `n`.
    pub facets: Vec<Tensor>,
    pub labels: Vec<Vec<String>>,
    pub pca: PcaTransform,
}

impl SemanticSpace {
    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn classes(&self, facet: usize) -> usize {
        self.facets[facet].rows()
    }

    pub fn row(&self, facet: usize, class: usize) -> &[f64] {
        self.facets[facet].row(class)
    }
}

/// Embeds and projects every label; PCA is fit on all (facet, class) rows.
pub fn build_space(labels: &[LabelText], dim: usize, word_dim: usize) -> Result<SemanticSpace> {
    if labels.is_empty() {
        return Err(MufiError::Input("no labels to build a space from".into()));
    }
    let n_facets = labels.iter().map(|l| l.facet_id).max().unwrap_or(0) + 1;
    let mut per_facet: Vec<Vec<&LabelText>> = vec![Vec::new(); n_facets];
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert((l.facet_id, l.class_id)) {
            return Err(MufiError::Input(format!(
                "duplicate label for facet {} class {}",
                l.facet_id, l.class_id
            )));
        }
        per_facet[l.facet_id].push(l);
    }
    for (f, ls) in per_facet.iter_mut().enumerate() {
        if ls.is_empty() {
            return Err(MufiError::Input(format!("facet {f} has no labels")));
        }
        ls.sort_by_key(|l| l.class_id);
        if ls.iter().enumerate().any(|(i, l)| l.class_id != i) {
            return Err(MufiError::Input(format!(
                "facet {f} class ids are not contiguous from 0"
            )));
        }
    }

    let raw: Vec<Vec<Vec<f64>>> = per_facet
        .iter()
        .map(|ls| ls.iter().map(|l| embed_label(&l.text, word_dim)).collect())
        .collect::<Result<_>>()?;
    let all: Vec<Vec<f64>> = raw.iter().flatten().cloned().collect();
    let pca = fit_pca(&all, dim)?;

    let facets = raw
        .iter()
        .map(|rows| {
            let data: Vec<f64> = rows.iter().flat_map(|r| pca.project(r)).collect();
            Tensor::new(vec![rows.len(), dim], data)
        })
        .collect::<Result<_>>()?;
    let labels = per_facet
        .iter()
        .map(|ls| ls.iter().map(|l| l.text.clone()).collect())
        .collect();
    Ok(SemanticSpace {
        dim,
        word_dim,
        facets,
        labels,
        pca,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(f: usize, c: usize, t: &str) -> LabelText {
        LabelText {
            facet_id: f,
            class_id: c,
            text: t.into(),
        }
    }

    #[test]
    fn single_label_world() {
        let s = build_space(&[label(0, 0, "cake")], 1, 16).unwrap();
        assert_eq!(s.facets.len(), 1);
        assert_eq!(s.facets[0].shape(), &[1, 1]);
    }

    #[test]
    fn build_is_deterministic() {
        let ls = vec![
            label(0, 0, "action cake"),
            label(0, 1, "action ball"),
            label(1, 0, "scene beach"),
            label(1, 1, "scene road"),
        ];
        assert_eq!(build_space(&ls, 2, 32).unwrap(), build_space(&ls, 2, 32).unwrap());
    }

    #[test]
    fn rows_are_projected_label_embeddings() {
        let ls = vec![label(0, 0, "red ball"), label(0, 1, "blue car"), label(1, 0, "snow")];
        let s = build_space(&ls, 2, 8).unwrap();
        let expect = s.pca.project(&embed_label("blue car", 8).unwrap());
        assert_eq!(s.row(0, 1), &expect[..]);
    }

    #[test]
    fn duplicate_and_missing_labels_rejected() {
        assert!(build_space(&[label(0, 0, "a"), label(0, 0, "b")], 1, 8).is_err());
        assert!(build_space(&[label(0, 0, "a"), label(2, 0, "b")], 1, 8).is_err());
        assert!(build_space(&[label(0, 1, "a"), label(0, 2, "b")], 1, 8).is_err());
    }
}
