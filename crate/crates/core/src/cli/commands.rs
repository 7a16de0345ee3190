use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::Command;
use crate::coreset::{self, CoresetMethod};
use crate::csi::{load_pack, preprocess, save_pack, split, synth_csi, LabeledDataset};
use crate::distill::{distill, write_loss_csv};
use crate::error::{Error, Result};
use crate::eval::{cross_matrix, evaluate_set, read_reports_csv, render_table, write_reports_csv, EvalConfig, EvalReport};
use crate::expert::{load_trajectory, save_trajectory, train_teacher, TeacherConfig, Trajectory};
use crate::models::ModelKind;
use crate::rng::derive_seed;

type Data = LabeledDataset<f32>;

/// Artifact paths below the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("data/train.pack")
    }

    pub fn test(&self) -> PathBuf {
        self.root.join("data/test.pack")
    }

    pub fn buffer_dir(&self, model: ModelKind) -> PathBuf {
        self.root.join("buffer").join(model.name())
    }

    pub fn expert(dir: &Path, i: usize) -> PathBuf {
        dir.join(format!("expert_{i}.traj"))
    }

    pub fn distilled(&self, model: ModelKind, spc: usize) -> PathBuf {
        self.root.join(format!("distilled/{}_spc{spc}.pack", model.name()))
    }

    pub fn distill_losses(&self, model: ModelKind, spc: usize) -> PathBuf {
        self.root.join(format!("distilled/{}_spc{spc}_loss.csv", model.name()))
    }

    pub fn checkpoints(&self, model: ModelKind, spc: usize) -> PathBuf {
        self.root.join(format!("distilled/{}_spc{spc}_checkpoints", model.name()))
    }

    pub fn coreset_pack(&self, method: CoresetMethod, spc: usize) -> PathBuf {
        self.root.join(format!("coreset/{method}_spc{spc}.pack"))
    }

    pub fn coreset_json(&self, method: CoresetMethod, spc: usize) -> PathBuf {
        self.root.join(format!("coreset/{method}_spc{spc}.json"))
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("reports/eval.csv")
    }

    pub fn cross_csv(&self) -> PathBuf {
        self.root.join("reports/cross.csv")
    }

    pub fn table(&self) -> PathBuf {
        self.root.join("reports/table.txt")
    }
}

pub(super) fn execute(cmd: Command, cfg: &RunConfig) -> Result<Value> {
    let layout = Layout::new(&cfg.output);
    let mut summary = match cmd {
        Command::GenData => gen_data(cfg, &layout)?,
        Command::Buffer => buffer(cfg, &layout)?,
        Command::Distill => distill_cmd(cfg, &layout)?,
        Command::Coreset => coreset_cmd(cfg, &layout)?,
        Command::Eval => eval_cmd(cfg, &layout)?,
        Command::CrossEval => cross_eval(cfg, &layout)?,
        Command::Report => report(&layout)?,
    };
    summary["command"] = cmd.name().into();
    Ok(summary)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(path, io::Error::new(io::ErrorKind::NotFound, format!("{what} not found"))))
    }
}

fn load_split(path: &Path, what: &str) -> Result<Data> {
    require(path, what)?;
    load_pack(path)
}

fn gen_data(cfg: &RunConfig, layout: &Layout) -> Result<Value> {
    let d = &cfg.data;
    let (train, test): (Data, Data) = match (&d.train_pack, &d.test_pack) {
        (Some(tr), Some(te)) => (load_pack(tr)?, load_pack(te)?),
        _ => {
            let per_class = d.train_per_class + d.test_per_class;
            let all: Data = synth_csi(&d.generator(), per_class, derive_seed(cfg.seed, "data", 0))?;
            let frac = d.train_per_class as f64 / per_class as f64;
            split(&all, frac, derive_seed(cfg.seed, "split", 0))?
        }
    };
    let train_p = preprocess(&train, &d.preprocess, &train)?;
    let test_p = preprocess(&test, &d.preprocess, &train)?;
    save_pack(&train_p, &layout.train())?;
    save_pack(&test_p, &layout.test())?;
    Ok(json!({
        "train": train_p.len(),
        "test": test_p.len(),
        "classes": train_p.class_count(),
        "sample_shape": train_p.sample_shape(),
        "train_path": layout.train(),
        "test_path": layout.test(),
    }))
}

fn buffer(cfg: &RunConfig, layout: &Layout) -> Result<Value> {
    let train = load_split(&layout.train(), "training split")?;
    let t = &cfg.teacher;
    let spec = cfg.models.spec(t.model, train.sample_shape(), train.class_count());
    let dir = layout.buffer_dir(t.model);
    let finals = (0..t.trajectories)
        .into_par_iter()
        .map(|i| {
            let tc = TeacherConfig {
                spec: spec.clone(),
                epochs: t.epochs,
                batch_size: t.batch_size,
                lr: t.lr,
                momentum: t.momentum,
                seed: derive_seed(cfg.seed, "teacher", i as u64),
            };
            let traj: Trajectory<f32> = train_teacher(&train, &tc)?;
            save_trajectory(&traj, &Layout::expert(&dir, i))?;
            log::info!("expert {i}: final train accuracy {:.4}", traj.metrics.last().map_or(0.0, |m| m.accuracy));
            Ok(traj.metrics.last().map_or(f64::NAN, |m| m.accuracy))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(json!({
        "model": t.model,
        "trajectories": t.trajectories,
        "epochs": t.epochs,
        "final_train_accuracy": finals,
        "buffer": dir,
    }))
}

fn load_buffer(dir: &Path) -> Result<Vec<Trajectory<f32>>> {
    require(dir, "expert buffer")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "traj"))
        .collect();
    if files.is_empty() {
        return Err(Error::io(
            dir,
            io::Error::new(io::ErrorKind::NotFound, "no expert trajectories in buffer"),
        ));
    }
    files.sort();
    files.iter().map(|p| load_trajectory(p)).collect()
}

fn distill_cmd(cfg: &RunConfig, layout: &Layout) -> Result<Value> {
    let dir = cfg
        .distill
        .buffer
        .clone()
        .unwrap_or_else(|| layout.buffer_dir(cfg.teacher.model));
    let buffer = load_buffer(&dir)?;
    let train = load_split(&layout.train(), "training split")?;
    let model = buffer[0].spec.kind;
    let dc = cfg.distill.config(derive_seed(cfg.seed, "distill", 0));
    let runs = cfg
        .distill
        .spc
        .par_iter()
        .map(|&spc| {
            let ckpt = layout.checkpoints(model, spc);
            let outcome = distill(&train, &buffer, &dc, spc, Some(&ckpt))?;
            let path = layout.distilled(model, spc);
            save_pack(&outcome.to_labeled()?, &path)?;
            write_loss_csv(&layout.distill_losses(model, spc), &outcome.losses)?;
            let tail = outcome.losses.last().map_or(f64::NAN, |r| r.loss);
            Ok(json!({
                "spc": spc,
                "path": path,
                "final_loss": tail,
                "alpha": outcome.synthetic.alpha,
            }))
        })
        .collect::<Result<Vec<Value>>>()?;
    Ok(json!({ "model": model, "iterations": dc.iterations, "runs": runs }))
}

fn coreset_cmd(cfg: &RunConfig, layout: &Layout) -> Result<Value> {
    let train = load_split(&layout.train(), "training split")?;
    let jobs: Vec<(CoresetMethod, usize)> = cfg
        .coreset
        .methods
        .iter()
        .flat_map(|&m| cfg.coreset.spc.iter().map(move |&s| (m, s)))
        .collect();
    let written = jobs
        .par_iter()
        .map(|&(method, spc)| {
            let r = coreset::select(&train, method, spc, derive_seed(cfg.seed, "coreset", 0))?;
            let pack = layout.coreset_pack(method, spc);
            coreset::export(&r, &train, &pack, &layout.coreset_json(method, spc))?;
            Ok(pack)
        })
        .collect::<Result<Vec<PathBuf>>>()?;
    Ok(json!({ "written": written }))
}

fn eval_config(cfg: &RunConfig, kind: ModelKind, test: &Data) -> EvalConfig {
    let e = &cfg.eval;
    EvalConfig {
        spec: cfg.models.spec(kind, test.sample_shape(), test.class_count()),
        epochs: e.epochs,
        lr: e.lr,
        momentum: e.momentum,
        batch_size: e.batch_size,
        seeds: (0..e.repeats as u64).map(|i| derive_seed(cfg.seed, "eval", i)).collect(),
    }
}

/// Every small set on disk that the config refers to, as (method, spc, data).
fn small_sets(cfg: &RunConfig, layout: &Layout) -> Result<Vec<(String, Option<usize>, Data)>> {
    let mut sets = Vec::new();
    for &spc in &cfg.distill.spc {
        let p = layout.distilled(cfg.teacher.model, spc);
        if p.exists() {
            sets.push(("distilled".to_string(), Some(spc), load_pack(&p)?));
        }
    }
    for &method in &cfg.coreset.methods {
        for &spc in &cfg.coreset.spc {
            let p = layout.coreset_pack(method, spc);
            if p.exists() {
                sets.push((method.name().to_string(), Some(spc), load_pack(&p)?));
            }
        }
    }
    if cfg.eval.include_whole {
        sets.push(("whole".to_string(), None, load_split(&layout.train(), "training split")?));
    }
    if sets.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "nothing to evaluate below {}",
            layout.root.display()
        )));
    }
    Ok(sets)
}

fn brief(r: &EvalReport) -> Value {
    json!({ "method": r.method, "spc": r.spc, "model": r.model, "mean": r.mean, "std": r.std })
}

fn eval_cmd(cfg: &RunConfig, layout: &Layout) -> Result<Value> {
    let test = load_split(&layout.test(), "test split")?;
    let sets = small_sets(cfg, layout)?;
    let mut reports = Vec::new();
    for &kind in &cfg.eval.models {
        let ec = eval_config(cfg, kind, &test);
        for (method, spc, data) in &sets {
            let r = evaluate_set(data, &test, &ec, method, *spc)?;
            log::info!("{} spc={:?} {}: {:.4} ± {:.4}", r.method, r.spc, kind.name(), r.mean, r.std);
            reports.push(r);
        }
    }
    write_reports_csv(&layout.eval_csv(), &reports)?;
    Ok(json!({ "csv": layout.eval_csv(), "reports": reports.iter().map(brief).collect::<Vec<_>>() }))
}

fn cross_eval(cfg: &RunConfig, layout: &Layout) -> Result<Value> {
    let test = load_split(&layout.test(), "test split")?;
    let evaluators: Vec<_> = cfg
        .eval
        .models
        .iter()
        .map(|&k| cfg.models.spec(k, test.sample_shape(), test.class_count()))
        .collect();
    let ec = eval_config(cfg, ModelKind::Mlp, &test);
    let mut reports = Vec::new();
    for &spc in &cfg.distill.spc {
        let mut producers = BTreeMap::new();
        for kind in [ModelKind::Mlp, ModelKind::Cnn] {
            let p = layout.distilled(kind, spc);
            if p.exists() {
                producers.insert(kind.name().to_string(), load_pack::<f32>(&p)?);
            }
        }
        if producers.is_empty() {
            continue;
        }
        let m = cross_matrix(&producers, &evaluators, &ec, &test, "distilled")?;
        reports.extend(m.cells.into_iter().flatten());
        let random = layout.coreset_pack(CoresetMethod::Random, spc);
        if random.exists() {
            let mut baseline = BTreeMap::new();
            baseline.insert("real".to_string(), load_pack::<f32>(&random)?);
            let m = cross_matrix(&baseline, &evaluators, &ec, &test, "random")?;
            reports.extend(m.cells.into_iter().flatten());
        }
    }
    if reports.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no distilled sets below {}",
            layout.root.display()
        )));
    }
    write_reports_csv(&layout.cross_csv(), &reports)?;
    Ok(json!({ "csv": layout.cross_csv(), "reports": reports.iter().map(brief).collect::<Vec<_>>() }))
}

fn report(layout: &Layout) -> Result<Value> {
    require(&layout.eval_csv(), "evaluation report")?;
    let mut text = render_table(&read_reports_csv(&layout.eval_csv())?);
    if layout.cross_csv().exists() {
        text.push('\n');
        text.push_str(&render_table(&read_reports_csv(&layout.cross_csv())?));
    }
    let path = layout.table();
    crate::binio::write_atomic(&path, text.as_bytes())?;
    Ok(json!({ "table": path, "text": text }))
}
