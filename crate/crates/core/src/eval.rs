//! Training fresh students on small sets and measuring test accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::LabeledDataset;
use crate::distill::SyntheticDataset;
use crate::error::{Error, Result};
use crate::models::{init_params, ModelKind, ModelSpec, NetworkParams};
use crate::scalar::Scalar;
use crate::train::{dataset_accuracy, train_sgd, SgdSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub spec: ModelSpec,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// One student per seed.
    pub seeds: Vec<u64>,
}

impl EvalConfig {
    /// 150 epochs at lr 0.01 with momentum 0.9, batch 64, `repeats` seeds.
    pub fn new(spec: ModelSpec, repeats: usize, root_seed: u64) -> Self {
        EvalConfig {
            spec,
            epochs: 150,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            seeds: (0..repeats as u64)
                .map(|i| crate::rng::derive_seed(root_seed, "student", i))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("evaluation needs at least one seed".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(
                "evaluation epochs, batch size and lr must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn with_spec(&self, spec: ModelSpec) -> Self {
        EvalConfig { spec, ..self.clone() }
    }
}

/// Anything a student can be trained on.
pub trait TrainingSet<T: Scalar> {
    fn as_labeled(&self) -> Result<LabeledDataset<T>>;
}

impl<T: Scalar> TrainingSet<T> for LabeledDataset<T> {
    fn as_labeled(&self) -> Result<LabeledDataset<T>> {
        Ok(self.clone())
    }
}

impl<T: Scalar> TrainingSet<T> for SyntheticDataset<T> {
    fn as_labeled(&self) -> Result<LabeledDataset<T>> {
        self.to_labeled()
    }
}

/// A fresh network trained on `small` from `init_params(spec, seed)`.
pub fn train_student<T: Scalar>(
    small: &impl TrainingSet<T>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<NetworkParams<T>> {
    cfg.validate()?;
    let data = small.as_labeled()?;
    let init = init_params(&cfg.spec, seed)?;
    let settings = SgdSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        momentum: cfg.momentum,
        track_accuracy: false,
    };
    train_sgd(&data, &cfg.spec, init, settings, seed, |_, _, _| {})
}

/// Like [`train_student`], also returning the mean training loss per epoch.
pub fn train_student_with_losses<T: Scalar>(
    small: &impl TrainingSet<T>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(NetworkParams<T>, Vec<f64>)> {
    cfg.validate()?;
    let data = small.as_labeled()?;
    let init = init_params(&cfg.spec, seed)?;
    let settings = SgdSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        momentum: cfg.momentum,
        track_accuracy: false,
    };
    let mut losses = Vec::with_capacity(cfg.epochs);
    let params = train_sgd(&data, &cfg.spec, init, settings, seed, |_, _, m| losses.push(m.loss))?;
    Ok((params, losses))
}

/// Accuracy of `params` over the whole of `test`.
pub fn evaluate<T: Scalar>(params: &NetworkParams<T>, test: &LabeledDataset<T>, spec: &ModelSpec) -> Result<f64> {
    dataset_accuracy(spec, params, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub spc: Option<usize>,
    pub model: ModelKind,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains one student per seed (in parallel on the current rayon pool) and
/// evaluates each on `test`.
pub fn evaluate_set<T: Scalar>(
    small: &impl TrainingSet<T>,
    test: &LabeledDataset<T>,
    cfg: &EvalConfig,
    method: &str,
    spc: Option<usize>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let data = small.as_labeled()?;
    let accuracies = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let params = train_student(&data, cfg, seed)?;
            evaluate(&params, test, &cfg.spec)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&accuracies);
    Ok(EvalReport {
        method: method.into(),
        spc,
        model: cfg.spec.kind,
        seeds: cfg.seeds.clone(),
        accuracies,
        mean,
        std,
    })
}

/// Reports indexed `[producer][evaluator]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub producers: Vec<String>,
    pub evaluators: Vec<ModelKind>,
    pub cells: Vec<Vec<EvalReport>>,
}

/// Evaluates each producer's set with every evaluator architecture.
pub fn cross_matrix<T: Scalar>(
    sets: &BTreeMap<String, LabeledDataset<T>>,
    evaluators: &[ModelSpec],
    cfg: &EvalConfig,
    test: &LabeledDataset<T>,
    method: &str,
) -> Result<CrossMatrix> {
    let shapes: Vec<&[usize]> = sets.values().map(|d| d.sample_shape()).collect();
    if shapes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidArgument(
            "cross evaluation needs one sample shape across all sets".into(),
        ));
    }
    let mut cells = Vec::with_capacity(sets.len());
    for (producer, ds) in sets {
        let spc = ds.manifest().extra.get("spc").and_then(|v| v.as_u64()).map(|v| v as usize);
        let row = evaluators
            .iter()
            .map(|spec| evaluate_set(ds, test, &cfg.with_spec(spec.clone()), &format!("{method}:{producer}"), spc))
            .collect::<Result<Vec<_>>>()?;
        cells.push(row);
    }
    Ok(CrossMatrix {
        producers: sets.keys().cloned().collect(),
        evaluators: evaluators.iter().map(|s| s.kind).collect(),
        cells,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CsvRow<'a> {
    method: &'a str,
    spc: Option<usize>,
    model: &'a str,
    seed: u64,
    accuracy: f64,
}

/// One CSV row per (report, seed): `method,spc,model,seed,accuracy`.
pub fn write_reports_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for (&seed, &accuracy) in r.seeds.iter().zip(&r.accuracies) {
            w.serialize(CsvRow {
                method: &r.method,
                spc: r.spc,
                model: r.model.name(),
                seed,
                accuracy,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a report CSV back, regrouping rows by (method, spc, model).
pub fn read_reports_csv(path: &Path) -> Result<Vec<EvalReport>> {
    #[derive(Deserialize)]
    struct Row {
        method: String,
        spc: Option<usize>,
        model: ModelKind,
        seed: u64,
        accuracy: f64,
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<EvalReport> = Vec::new();
    for row in r.deserialize() {
        let row: Row = row?;
        match out
            .iter_mut()
            .find(|e| e.method == row.method && e.spc == row.spc && e.model == row.model)
        {
            Some(e) => {
                e.seeds.push(row.seed);
                e.accuracies.push(row.accuracy);
            }
            None => out.push(EvalReport {
                method: row.method,
                spc: row.spc,
                model: row.model,
                seeds: vec![row.seed],
                accuracies: vec![row.accuracy],
                mean: 0.0,
                std: 0.0,
            }),
        }
    }
    for e in &mut out {
        (e.mean, e.std) = mean_std(&e.accuracies);
    }
    Ok(out)
}

/// Methods as rows, spc values as columns, cells `mean ± std` in percent.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<(String, ModelKind)> = Vec::new();
    let mut cols: Vec<Option<usize>> = Vec::new();
    for r in reports {
        if !rows.iter().any(|(m, k)| *m == r.method && *k == r.model) {
            rows.push((r.method.clone(), r.model));
        }
        if !cols.contains(&r.spc) {
            cols.push(r.spc);
        }
    }
    cols.sort();
    let label = |c: &Option<usize>| c.map_or("all".to_string(), |s| format!("spc={s}"));
    let width = rows.iter().map(|(m, k)| m.len() + k.name().len() + 3).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "method");
    for c in &cols {
        let _ = write!(out, " | {:>15}", label(c));
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + cols.len() * 18));
    out.push('\n');
    for (method, kind) in &rows {
        let _ = write!(out, "{:<width$}", format!("{method} ({})", kind.name()));
        for c in &cols {
            let cell = reports
                .iter()
                .find(|r| r.method == *method && r.model == *kind && r.spc == *c)
                .map_or("-".to_string(), |r| format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std));
            let _ = write!(out, " | {cell:>15}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::{preprocess, synth_csi, Manifest, MultipathConfig, PreprocessConfig};
    use crate::tensor::Tensor;

    fn data() -> LabeledDataset<f32> {
        let raw = synth_csi(&MultipathConfig::procedural(3, 4, 6, 3, 0.05, 11), 6, 2).unwrap();
        preprocess(&raw, &PreprocessConfig::default(), &raw).unwrap()
    }

    #[test]
    fn zero_params_give_one_over_c() {
        let ds = data();
        let spec = ModelSpec::mlp(vec![4, 6], 3, vec![8]);
        let acc = evaluate(&NetworkParams::zeros(&spec), &ds, &spec).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn student_training_is_deterministic_and_memorises() {
        let ds = data();
        let spec = ModelSpec::mlp(vec![4, 6], 3, vec![16]);
        let mut cfg = EvalConfig::new(spec.clone(), 1, 0);
        cfg.epochs = 60;
        cfg.lr = 0.05;
        let a = train_student(&ds, &cfg, 7).unwrap();
        let b = train_student(&ds, &cfg, 7).unwrap();
        assert!(a.flat().bit_eq(b.flat()));
        assert_eq!(evaluate(&a, &ds, &spec).unwrap(), 1.0);
    }

    #[test]
    fn report_statistics_and_csv_roundtrip() {
        let (m, s) = mean_std(&[0.5, 0.7, 0.9]);
        assert!((m - 0.7).abs() < 1e-12);
        assert!((s - 0.2).abs() < 1e-12);
        let report = EvalReport {
            method: "random".into(),
            spc: Some(10),
            model: ModelKind::Mlp,
            seeds: vec![1, 2, 3],
            accuracies: vec![0.5, 0.7, 0.9],
            mean: m,
            std: s,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_reports_csv(&path, std::slice::from_ref(&report)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("method,spc,model,seed,accuracy\nrandom,10,mlp,1,0.5\n"));
        assert_eq!(read_reports_csv(&path).unwrap(), vec![report.clone()]);
        let table = render_table(&[report]);
        assert!(table.contains("random (mlp)") && table.contains("70.00 ± 20.00"), "{table}");
    }

    #[test]
    fn cross_matrix_shape() {
        let ds = data();
        let spec = ModelSpec::mlp(vec![4, 6], 3, vec![8]);
        let mut cfg = EvalConfig::new(spec.clone(), 2, 0);
        cfg.epochs = 2;
        let mut sets = BTreeMap::new();
        sets.insert("mlp".to_string(), ds.clone());
        sets.insert("other".to_string(), ds.clone());
        let cnn = ModelSpec::cnn(vec![4, 6], 3, vec![4]);
        let m = cross_matrix(&sets, &[spec.clone(), cnn], &cfg, &ds, "distilled").unwrap();
        assert_eq!(m.cells.len(), 2);
        assert!(m.cells.iter().all(|r| r.len() == 2));
        let plain = evaluate_set(&ds, &ds, &cfg, "x", None).unwrap();
        assert_eq!(m.cells[0][0].accuracies, plain.accuracies);

        let odd = LabeledDataset::new(
            Tensor::<f32>::zeros(&[3, 24]),
            vec![0, 1, 2],
            Manifest::new(3, vec![24], "t", "t"),
        )
        .unwrap();
        sets.insert("flat".into(), odd);
        assert!(cross_matrix(&sets, &[spec], &cfg, &ds, "d").is_err());
    }
}
