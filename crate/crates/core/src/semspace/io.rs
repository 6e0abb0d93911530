use std::io::{Read, Write};

use super::{PcaTransform, SemanticSpace};
use crate::binio::*;
use crate::diffcore::Tensor;
use crate::error::{MufiError, Result};

pub const SPACE_MAGIC: &[u8; 8] = b"MUFISPC1";

/// Layout: magic, `n_facets dim raw_dim word_dim`, per-facet label matrices,
/// PCA mean / components / variances, then label texts.
pub fn write_space<W: Write>(w: &mut W, s: &SemanticSpace) -> Result<()> {
    write_magic(w, SPACE_MAGIC)?;
    write_u32(w, s.n_facets())?;
    write_u32(w, s.dim)?;
    write_u32(w, s.pca.raw_dim)?;
    write_u32(w, s.word_dim)?;
    for m in &s.facets {
        write_u32(w, m.rows())?;
        write_f64s(w, m.data())?;
    }
    write_f64s(w, &s.pca.mean)?;
    write_f64s(w, &s.pca.components)?;
    write_f64s(w, &s.pca.variances)?;
    for facet in &s.labels {
        for text in facet {
            write_str(w, text)?;
        }
    }
    Ok(())
}

pub fn read_space<R: Read>(r: &mut R) -> Result<SemanticSpace> {
    expect_magic(r, SPACE_MAGIC)?;
    let n_facets = read_u32(r)?;
    let dim = read_u32(r)?;
    let raw_dim = read_u32(r)?;
    let word_dim = read_u32(r)?;
    if n_facets == 0 || dim == 0 || dim > raw_dim {
        return Err(MufiError::Format(format!(
            "inconsistent space header: {n_facets} facets, dim {dim}, raw {raw_dim}"
        )));
    }
    let mut facets = Vec::with_capacity(n_facets);
    for _ in 0..n_facets {
        let rows = read_u32(r)?;
        let data = read_f64s(r, rows * dim)?;
        facets.push(Tensor::new(vec![rows, dim], data).map_err(|e| MufiError::Format(e.to_string()))?);
    }
    let mean = read_f64s(r, raw_dim)?;
    let components = read_f64s(r, raw_dim * dim)?;
    let variances = read_f64s(r, dim)?;
    let labels = facets
        .iter()
        .map(|m| (0..m.rows()).map(|_| read_str(r)).collect())
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(SemanticSpace {
        dim,
        word_dim,
        facets,
        labels,
        pca: PcaTransform {
            mean,
            components,
            variances,
            raw_dim,
            dim,
        },
    })
}

/// `facet_id,class_id,text,v0..v{d-1}` for inspection.
pub fn write_space_csv<W: Write>(w: &mut W, s: &SemanticSpace) -> Result<()> {
    let mut header = String::from("facet_id,class_id,text");
    for k in 0..s.dim {
        header.push_str(&format!(",v{k}"));
    }
    writeln!(w, "{header}")?;
    for (f, m) in s.facets.iter().enumerate() {
        for c in 0..m.rows() {
            let vals: Vec<String> = m.row(c).iter().map(|v| format!("{v:.9}")).collect();
            writeln!(w, "{f},{c},{},{}", s.labels[f][c], vals.join(","))?;
        }
    }
    Ok(())
}
