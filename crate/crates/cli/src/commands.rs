use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use mufi_core::config::RunConfig;
use mufi_core::eval::{probe_all, EvalReport, FacetMatrix};
use mufi_core::linear::FitOptions;
use mufi_core::losses::Mode;
use mufi_core::model::{read_checkpoint, write_checkpoint, MufiModel};
use mufi_core::pipeline::{forgetting, run_mode, table1, zero_shot_report, Prepared};
use mufi_core::selfcheck::{gradient_suite, selftest, CheckResult};
use mufi_core::semspace::{build_space, read_space, write_space, write_space_csv};
use mufi_core::synthgen::{
    generate_world, read_teachers, read_world, train_teachers, write_manifest_csv, write_teachers, write_world,
    TeacherCache, World,
};
use mufi_core::{MufiError, Result};

use crate::manifest::RunManifest;

pub const WORLD_FILE: &str = "world.mufidat";
pub const SPACE_FILE: &str = "space.mufispc";
pub const TEACHER_FILE: &str = "teachers.mufitch";

/// Shared state of one invocation.
pub struct Ctx {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub json: bool,
}

/// Outcome of a check-style command.
pub enum Status {
    Ok,
    ChecksFailed,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.config.hash(), self.config.experiment.train.seed)
    }

    fn finish(&self, m: &RunManifest) -> Result<()> {
        let path = m.write(&self.dir)?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path(name);
        let file = File::create(&path)?;
        Ok((path, BufWriter::new(file)))
    }
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(MufiError::Data(format!("missing input {}", path.display())))
        }
        Err(e) => Err(e.into()),
    }
}

fn load_world(ctx: &Ctx, m: &mut RunManifest) -> Result<World> {
    let path = ctx.path(WORLD_FILE);
    let world = read_world(&mut open_input(&path)?)?;
    m.input(&path)?;
    Ok(world)
}

fn load_prepared(ctx: &Ctx, m: &mut RunManifest) -> Result<Prepared> {
    let world = load_world(ctx, m)?;
    let space_path = ctx.path(SPACE_FILE);
    let space = read_space(&mut open_input(&space_path)?)?;
    m.input(&space_path)?;
    let teacher_path = ctx.path(TEACHER_FILE);
    let teachers = read_teachers(&mut open_input(&teacher_path)?)?;
    m.input(&teacher_path)?;
    if space.n_facets() != world.spec.n_facets || teachers.len() != world.spec.n_facets {
        return Err(MufiError::Data(format!(
            "space or teachers do not match the {}-facet world in {}",
            world.spec.n_facets,
            ctx.dir.display()
        )));
    }
    let cache = TeacherCache::build(&world, &teachers);
    Ok(Prepared {
        world,
        space,
        teachers,
        cache,
    })
}

fn write_model(ctx: &Ctx, name: &str, model: &MufiModel, world: &World, m: &mut RunManifest) -> Result<()> {
    let (path, mut w) = ctx.create(name)?;
    write_checkpoint(&mut w, model, &world.spec.hash())?;
    w.flush()?;
    drop(w);
    m.output(&path)
}

fn write_matrix(ctx: &Ctx, name: &str, matrix: &FacetMatrix, m: &mut RunManifest) -> Result<()> {
    let (path, mut w) = ctx.create(name)?;
    matrix.write_csv(&mut w)?;
    w.flush()?;
    drop(w);
    m.output(&path)
}

fn report_json(r: &EvalReport) -> Value {
    json!({
        "method": r.method,
        "accuracies": r.accuracies,
        "average": r.average,
        "n_val": r.n_val,
    })
}

fn print_matrix(ctx: &Ctx, matrix: &FacetMatrix) {
    if ctx.json {
        let rows: Vec<Value> = matrix.rows.iter().map(report_json).collect();
        println!("{}", json!({ "rows": rows }));
    } else {
        print!("{}", matrix.to_text());
    }
}

fn print_checks(ctx: &Ctx, checks: &[CheckResult]) -> Status {
    if ctx.json {
        let rows: Vec<Value> = checks
            .iter()
            .map(|c| json!({ "name": c.name, "value": c.value, "tolerance": c.tolerance, "passed": c.passed() }))
            .collect();
        println!("{}", json!({ "checks": rows }));
    } else {
        for c in checks {
            let verdict = if c.passed() { "ok" } else { "FAIL" };
            println!("{:<36} {:>12.3e}  < {:.0e}  {verdict}", c.name, c.value, c.tolerance);
        }
    }
    if checks.iter().all(CheckResult::passed) {
        Status::Ok
    } else {
        Status::ChecksFailed
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

pub fn gen(ctx: &Ctx) -> Result<Status> {
    let mut m = ctx.manifest("gen");
    let world = generate_world(&ctx.config.experiment.world)?;
    let (path, mut w) = ctx.create(WORLD_FILE)?;
    write_world(&mut w, &world)?;
    w.flush()?;
    drop(w);
    m.output(&path)?;
    let (path, mut w) = ctx.create("world_samples.csv")?;
    write_manifest_csv(&mut w, &world)?;
    w.flush()?;
    drop(w);
    m.output(&path)?;
    if ctx.json {
        println!(
            "{}",
            json!({ "spec_hash": hex::encode(world.spec.hash()), "outputs": m.outputs })
        );
    } else {
        for o in &m.outputs {
            println!("{}  {}", o.sha256, o.path);
        }
    }
    ctx.finish(&m)?;
    Ok(Status::Ok)
}

pub fn space(ctx: &Ctx) -> Result<Status> {
    let mut m = ctx.manifest("space");
    let world = load_world(ctx, &mut m)?;
    let e = &ctx.config.experiment;
    let space = build_space(&world.labels, e.space_dim, e.word_dim)?;
    let (path, mut w) = ctx.create(SPACE_FILE)?;
    write_space(&mut w, &space)?;
    w.flush()?;
    drop(w);
    m.output(&path)?;
    let (path, mut w) = ctx.create("space.csv")?;
    write_space_csv(&mut w, &space)?;
    w.flush()?;
    drop(w);
    m.output(&path)?;
    let v = &space.pca.variances;
    if ctx.json {
        println!("{}", json!({ "dim": space.dim, "variances": v }));
    } else {
        println!("semantic space: {} labels -> {} dims", space.labels.len(), space.dim);
        println!(
            "explained variances: {}",
            v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
        );
    }
    ctx.finish(&m)?;
    Ok(Status::Ok)
}

pub fn teach(ctx: &Ctx) -> Result<Status> {
    let mut m = ctx.manifest("teach");
    let world = load_world(ctx, &mut m)?;
    let teachers = train_teachers(&world, FitOptions::default())?;
    let (path, mut w) = ctx.create(TEACHER_FILE)?;
    write_teachers(&mut w, &teachers)?;
    w.flush()?;
    drop(w);
    m.output(&path)?;
    let rows: Vec<(usize, f64, bool)> = teachers
        .iter()
        .map(|t| {
            let train = world.datasets[t.facet]
                .samples
                .iter()
                .filter(|s| s.split == mufi_core::synthgen::Split::Train);
            (t.facet, t.accuracy(train), t.outcome.converged)
        })
        .collect();
    if ctx.json {
        let v: Vec<Value> = rows
            .iter()
            .map(|(f, a, c)| json!({ "facet": f, "train_accuracy": a, "converged": c }))
            .collect();
        println!("{}", json!({ "teachers": v }));
    } else {
        for (f, a, c) in rows {
            println!(
                "teacher {f}: train accuracy {:.2}%{}",
                a * 100.0,
                if c { "" } else { " (not converged)" }
            );
        }
    }
    ctx.finish(&m)?;
    Ok(Status::Ok)
}

pub fn train(ctx: &Ctx, mode: Option<&str>) -> Result<Status> {
    let mut m = ctx.manifest("train");
    let mode: Mode = match mode {
        Some(s) => s.parse()?,
        None => ctx.config.mode,
    };
    let p = load_prepared(ctx, &mut m)?;
    let out = run_mode(&ctx.config.experiment, &p, mode, Vec::new())?;
    write_model(ctx, &format!("model-{mode}.mufickp"), &out.model, &p.world, &mut m)?;
    let (path, mut w) = ctx.create(&format!("train-{mode}.csv"))?;
    out.log.write_csv(&mut w)?;
    w.flush()?;
    drop(w);
    m.output(&path)?;
    let (first, last) = out.log.first_last_epoch_loss().unwrap_or((f64::NAN, f64::NAN));
    if ctx.json {
        println!(
            "{}",
            json!({ "mode": mode.name(), "steps": out.log.steps.len(), "first_epoch_loss": first,
                    "last_epoch_loss": last, "final_hash": out.log.final_hash })
        );
    } else {
        println!(
            "{mode}: {} steps, epoch loss {first:.4} -> {last:.4}",
            out.log.steps.len()
        );
        println!("parameters {}", out.log.final_hash);
    }
    ctx.finish(&m)?;
    Ok(Status::Ok)
}

pub fn finetune_seq(ctx: &Ctx, mode: &str) -> Result<Status> {
    let mut m = ctx.manifest("finetune-seq");
    let mode: Mode = mode.parse()?;
    let p = load_prepared(ctx, &mut m)?;
    let f = forgetting(&ctx.config.experiment, &p, mode)?;
    let mut rows = f.stages.rows.clone();
    rows.extend(f.joint.rows.iter().cloned());
    let matrix = FacetMatrix::new(rows)?;
    write_matrix(ctx, "forgetting.csv", &matrix, &mut m)?;
    if ctx.json {
        let rows: Vec<Value> = matrix.rows.iter().map(report_json).collect();
        println!(
            "{}",
            json!({ "rows": rows, "sequential_drop": f.sequential_drop(), "joint_change": f.joint_change() })
        );
    } else {
        print!("{}", matrix.to_text());
        println!(
            "facet {} drop after sequential fine-tuning: {:.2} points; joint midpoint-to-final change: {:.2} points",
            f.order[0],
            f.sequential_drop() * 100.0,
            f.joint_change() * 100.0
        );
    }
    ctx.finish(&m)?;
    Ok(Status::Ok)
}

fn load_model(path: &Path, world: &World, m: &mut RunManifest) -> Result<MufiModel> {
    let model = read_checkpoint(&mut open_input(path)?, &world.spec.hash())?;
    m.input(path)?;
    Ok(model)
}

pub fn probe(ctx: &Ctx, model_path: &Path) -> Result<Status> {
    let mut m = ctx.manifest("probe");
    let world = load_world(ctx, &mut m)?;
    let model = load_model(model_path, &world, &mut m)?;
    let name = stem(model_path);
    let matrix = FacetMatrix::new(vec![probe_all(&model, &world, &name)?])?;
    write_matrix(ctx, &format!("probe-{name}.csv"), &matrix, &mut m)?;
    print_matrix(ctx, &matrix);
    ctx.finish(&m)?;
    Ok(Status::Ok)
}

pub fn zeroshot(ctx: &Ctx, model_path: &Path) -> Result<Status> {
    let mut m = ctx.manifest("zeroshot");
    let p = load_prepared(ctx, &mut m)?;
    let model = load_model(model_path, &p.world, &mut m)?;
    let name = stem(model_path);
    let matrix = FacetMatrix::new(vec![zero_shot_report(&model, &p, &name)?])?;
    write_matrix(ctx, &format!("zeroshot-{name}.csv"), &matrix, &mut m)?;
    print_matrix(ctx, &matrix);
    ctx.finish(&m)?;
    Ok(Status::Ok)
}

/// Merges report CSVs and re-emits them as CSV, text, JSON or SVG.
pub fn report(ctx: &Ctx, inputs: &[PathBuf], out: Option<&Path>, svg: Option<&Path>) -> Result<Status> {
    if inputs.is_empty() {
        return Err(MufiError::Config("report needs at least one --input".into()));
    }
    let mut m = ctx.manifest("report");
    let mut rows = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => MufiError::Data(format!("missing input {}", path.display())),
            _ => e.into(),
        })?;
        rows.extend(FacetMatrix::read_csv(&text)?.rows);
        m.input(path)?;
    }
    let matrix = FacetMatrix::new(rows)?;
    if let Some(path) = out {
        let mut w = BufWriter::new(File::create(path)?);
        matrix.write_csv(&mut w)?;
        w.flush()?;
        drop(w);
        m.output(path)?;
    }
    if let Some(path) = svg {
        fs::write(path, matrix.to_svg())?;
        m.output(path)?;
    }
    print_matrix(ctx, &matrix);
    if out.is_some() || svg.is_some() {
        ctx.finish(&m)?;
    }
    Ok(Status::Ok)
}

pub fn gradcheck(ctx: &Ctx, seeds: u64) -> Result<Status> {
    Ok(print_checks(ctx, &gradient_suite(seeds)?))
}

pub fn self_test(ctx: &Ctx) -> Result<Status> {
    Ok(print_checks(ctx, &selftest()?))
}

pub fn table1_preset(ctx: &Ctx) -> Result<Status> {
    let mut m = ctx.manifest("table1");
    let p = load_prepared(ctx, &mut m)?;
    let t = table1(&ctx.config.experiment, &p, |name| eprintln!("training {name}"))?;
    for run in &t.runs {
        write_model(
            ctx,
            &format!("model-{}.mufickp", run.method),
            &run.model,
            &p.world,
            &mut m,
        )?;
    }
    write_matrix(ctx, "table1.csv", &t.matrix, &mut m)?;
    let (path, mut w) = ctx.create("table1.svg")?;
    w.write_all(t.matrix.to_svg().as_bytes())?;
    w.flush()?;
    drop(w);
    m.output(&path)?;
    print_matrix(ctx, &t.matrix);
    ctx.finish(&m)?;
    Ok(Status::Ok)
}
