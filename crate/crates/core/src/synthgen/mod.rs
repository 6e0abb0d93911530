//! Synthetic multi-facet worlds and their frozen per-facet teachers.

mod io;
mod teacher;
mod world;

pub use io::{
    read_teachers, read_world, write_manifest_csv, write_teachers, write_world, DATASET_MAGIC, TEACHER_MAGIC,
};
pub use teacher::{region_mean, train_teacher, train_teachers, Teacher, TeacherCache, TeacherStatus};
pub use world::{generate_world, FacetDataset, FacetSample, Region, Split, World, WorldSpec};
