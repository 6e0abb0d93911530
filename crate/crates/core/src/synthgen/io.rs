use std::io::{Read, Write};

use super::teacher::Teacher;
use super::world::{FacetDataset, FacetSample, Region, Split, World, WorldSpec};
use crate::binio::*;
use crate::diffcore::Tensor;
use crate::error::{MufiError, Result};
use crate::linear::{FitOutcome, SoftmaxRegression};

pub const DATASET_MAGIC: &[u8; 8] = b"MUFIDAT1";
pub const TEACHER_MAGIC: &[u8; 8] = b"MUFITCH1";

fn split_code(s: Split) -> usize {
    match s {
        Split::Train => 0,
        Split::ProbeTrain => 1,
        Split::ProbeVal => 2,
    }
}

fn split_from(code: usize) -> Result<Split> {
    match code {
        0 => Ok(Split::Train),
        1 => Ok(Split::ProbeTrain),
        2 => Ok(Split::ProbeVal),
        c => Err(MufiError::Format(format!("unknown split code {c}"))),
    }
}

/// Magic, spec text block, prototypes, then each facet's samples.
pub fn write_world<W: Write>(w: &mut W, world: &World) -> Result<()> {
    write_magic(w, DATASET_MAGIC)?;
    write_str(w, &world.spec.to_text())?;
    for facet in &world.prototypes {
        for proto in facet {
            write_f64s(w, proto)?;
        }
    }
    for d in &world.datasets {
        write_u32(w, d.samples.len())?;
        for s in &d.samples {
            write_u64(w, s.id)?;
            write_u32(w, s.source_facet)?;
            write_u32(w, split_code(s.split))?;
            for &l in &s.latent_labels {
                write_u32(w, l)?;
            }
            write_f64s(w, s.observation.data())?;
        }
    }
    Ok(())
}

pub fn read_world<R: Read>(r: &mut R) -> Result<World> {
    expect_magic(r, DATASET_MAGIC)?;
    let spec = WorldSpec::from_text(&read_str(r)?).map_err(|e| MufiError::Format(e.to_string()))?;
    spec.validate().map_err(|e| MufiError::Format(e.to_string()))?;
    let c = spec.channels();
    let prototypes = spec
        .classes_per_facet
        .iter()
        .map(|&k| (0..k).map(|_| read_f64s(r, c)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let cells = spec.positions() * c;
    let mut datasets = Vec::with_capacity(spec.n_facets);
    for facet in 0..spec.n_facets {
        let n = read_u32(r)?;
        if n != spec.samples_per_facet {
            return Err(MufiError::Format(format!(
                "facet {facet} holds {n} samples, spec says {}",
                spec.samples_per_facet
            )));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let id = read_u64(r)?;
            let source_facet = read_u32(r)?;
            let split = split_from(read_u32(r)?)?;
            let latent_labels = (0..spec.n_facets).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
            for (f, &l) in latent_labels.iter().enumerate() {
                if l >= spec.classes_per_facet[f] {
                    return Err(MufiError::Format(format!(
                        "sample {id}: class {l} out of range for facet {f}"
                    )));
                }
            }
            let observation = Tensor::new(vec![spec.positions(), c], read_f64s(r, cells)?)?;
            samples.push(FacetSample {
                id,
                observation,
                latent_labels,
                source_facet,
                split,
            });
        }
        datasets.push(FacetDataset { facet, samples });
    }
    Ok(World {
        labels: spec.label_texts(),
        regions: spec.regions()?,
        spec,
        prototypes,
        datasets,
    })
}

/// `sample_id,source_facet,split,latent_0..latent_{N-1}`.
pub fn write_manifest_csv<W: Write>(w: &mut W, world: &World) -> Result<()> {
    let latent: Vec<String> = (0..world.spec.n_facets).map(|f| format!("latent_{f}")).collect();
    writeln!(w, "sample_id,source_facet,split,{}", latent.join(","))?;
    for s in world.datasets.iter().flat_map(|d| &d.samples) {
        let split = match s.split {
            Split::Train => "train",
            Split::ProbeTrain => "probe_train",
            Split::ProbeVal => "probe_val",
        };
        let ls: Vec<String> = s.latent_labels.iter().map(|l| l.to_string()).collect();
        writeln!(w, "{},{},{split},{}", s.id, s.source_facet, ls.join(","))?;
    }
    Ok(())
}

pub fn write_teachers<W: Write>(w: &mut W, teachers: &[Teacher]) -> Result<()> {
    write_magic(w, TEACHER_MAGIC)?;
    write_u32(w, teachers.len())?;
    for t in teachers {
        write_u32(w, t.facet)?;
        for &g in &t.grid {
            write_u32(w, g)?;
        }
        for v in t.region.origin.iter().chain(&t.region.size) {
            write_u32(w, *v)?;
        }
        write_u32(w, t.model.dim)?;
        write_u32(w, t.model.classes)?;
        write_f64s(w, &t.model.weights)?;
        write_f64s(w, &t.model.bias)?;
        write_u32(w, t.outcome.iterations)?;
        write_f64s(w, &[t.outcome.final_loss])?;
        write_u32(w, usize::from(t.outcome.converged))?;
    }
    Ok(())
}

pub fn read_teachers<R: Read>(r: &mut R) -> Result<Vec<Teacher>> {
    expect_magic(r, TEACHER_MAGIC)?;
    let n = read_u32(r)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let facet = read_u32(r)?;
        let mut grid = [0; 4];
        for g in &mut grid {
            *g = read_u32(r)?;
        }
        let mut v = [0; 6];
        for x in &mut v {
            *x = read_u32(r)?;
        }
        let region = Region {
            origin: [v[0], v[1], v[2]],
            size: [v[3], v[4], v[5]],
        };
        let dim = read_u32(r)?;
        let classes = read_u32(r)?;
        if dim != grid[3] || classes == 0 {
            return Err(MufiError::Format(format!(
                "teacher {facet}: input dim {dim} vs {} channels, {classes} classes",
                grid[3]
            )));
        }
        let weights = read_f64s(r, dim * classes)?;
        let bias = read_f64s(r, classes)?;
        let iterations = read_u32(r)?;
        let final_loss = read_f64s(r, 1)?[0];
        let converged = read_u32(r)? != 0;
        out.push(Teacher::from_parts(
            facet,
            region,
            grid,
            SoftmaxRegression {
                dim,
                classes,
                weights,
                bias,
            },
            FitOutcome {
                iterations,
                final_loss,
                converged,
            },
        ));
    }
    Ok(out)
}
