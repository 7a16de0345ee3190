//! Run configuration: a TOML file with one table per pipeline stage, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coreset::CoresetMethod;
use crate::csi::{MultipathConfig, PreprocessConfig};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec, DEFAULT_CNN_CHANNELS, DEFAULT_MLP_HIDDEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every derived seed.
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataSection,
    pub models: ModelsSection,
    pub teacher: TeacherSection,
    pub distill: DistillSection,
    pub coreset: CoresetSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            output: PathBuf::from("out"),
            data: DataSection::default(),
            models: ModelsSection::default(),
            teacher: TeacherSection::default(),
            distill: DistillSection::default(),
            coreset: CoresetSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub subcarriers: usize,
    pub time_steps: usize,
    pub paths: usize,
    pub noise_std: f64,
    /// Half-widths of the per-sample uniform jitter on path offsets (m) and velocities (m/s).
    pub d0_jitter: f64,
    pub velocity_jitter: f64,
    /// Seed of the per-class motion laws (the "environment").
    pub layout_seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Use existing raw pack files instead of the generator.
    pub train_pack: Option<PathBuf>,
    pub test_pack: Option<PathBuf>,
    pub preprocess: PreprocessConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            classes: 6,
            subcarriers: 30,
            time_steps: 64,
            paths: 5,
            noise_std: 0.05,
            d0_jitter: MultipathConfig::DEFAULT_D0_JITTER,
            velocity_jitter: MultipathConfig::DEFAULT_VELOCITY_JITTER,
            layout_seed: MultipathConfig::DEFAULT_LAYOUT_SEED,
            train_per_class: 100,
            test_per_class: 50,
            train_pack: None,
            test_pack: None,
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl DataSection {
    pub fn generator(&self) -> MultipathConfig {
        let mut g = MultipathConfig::procedural(
            self.classes,
            self.subcarriers,
            self.time_steps,
            self.paths,
            self.noise_std,
            self.layout_seed,
        );
        g.d0_jitter = self.d0_jitter;
        g.velocity_jitter = self.velocity_jitter;
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    pub mlp_hidden: Vec<usize>,
    pub cnn_channels: Vec<usize>,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            mlp_hidden: DEFAULT_MLP_HIDDEN.to_vec(),
            cnn_channels: DEFAULT_CNN_CHANNELS.to_vec(),
        }
    }
}

impl ModelsSection {
    pub fn spec(&self, kind: ModelKind, input_shape: &[usize], classes: usize) -> ModelSpec {
        match kind {
            ModelKind::Mlp => ModelSpec::mlp(input_shape.to_vec(), classes, self.mlp_hidden.clone()),
            ModelKind::Cnn => ModelSpec::cnn(input_shape.to_vec(), classes, self.cnn_channels.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub model: ModelKind,
    pub trajectories: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            model: ModelKind::Mlp,
            trajectories: 5,
            epochs: 30,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub spc: Vec<usize>,
    pub inner_steps: usize,
    pub expert_epochs: usize,
    pub max_start_epoch: usize,
    pub iterations: usize,
    pub lr_samples: f64,
    pub lr_alpha: f64,
    pub meta_momentum: f64,
    pub alpha_init: f64,
    pub denom_eps: f64,
    pub checkpoint_every: usize,
    /// Directory of expert trajectories; defaults to `<output>/buffer/<model>`.
    pub buffer: Option<PathBuf>,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        DistillSection {
            spc: vec![10],
            inner_steps: d.inner_steps,
            expert_epochs: d.expert_epochs,
            max_start_epoch: d.max_start_epoch,
            iterations: d.iterations,
            lr_samples: d.lr_samples,
            lr_alpha: d.lr_alpha,
            meta_momentum: d.meta_momentum,
            alpha_init: d.alpha_init,
            denom_eps: d.denom_eps,
            checkpoint_every: d.checkpoint_every,
            buffer: None,
        }
    }
}

impl DistillSection {
    pub fn config(&self, seed: u64) -> DistillConfig {
        DistillConfig {
            inner_steps: self.inner_steps,
            expert_epochs: self.expert_epochs,
            max_start_epoch: self.max_start_epoch,
            iterations: self.iterations,
            lr_samples: self.lr_samples,
            lr_alpha: self.lr_alpha,
            meta_momentum: self.meta_momentum,
            alpha_init: self.alpha_init,
            denom_eps: self.denom_eps,
            checkpoint_every: self.checkpoint_every,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoresetSection {
    pub methods: Vec<CoresetMethod>,
    pub spc: Vec<usize>,
}

impl Default for CoresetSection {
    fn default() -> Self {
        CoresetSection {
            methods: CoresetMethod::ALL.to_vec(),
            spc: vec![10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub models: Vec<ModelKind>,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub repeats: usize,
    /// Also train on the whole training split as a reference row.
    pub include_whole: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            models: vec![ModelKind::Mlp],
            epochs: 150,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            repeats: 5,
            include_whole: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes < 2 || d.subcarriers == 0 || d.time_steps == 0 || d.paths == 0 {
            return Err(Error::Config("data needs ≥ 2 classes and positive dimensions".into()));
        }
        if d.train_per_class == 0 || d.test_per_class == 0 {
            return Err(Error::Config("data needs train and test samples in every class".into()));
        }
        if d.train_pack.is_some() != d.test_pack.is_some() {
            return Err(Error::Config("data.train_pack and data.test_pack must be given together".into()));
        }
        for p in [&d.train_pack, &d.test_pack].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{}: no such file", p.display())));
            }
        }
        d.preprocess.validate()?;
        if self.teacher.trajectories == 0 {
            return Err(Error::Config("teacher.trajectories must be positive".into()));
        }
        let spcs = self.distill.spc.iter().chain(&self.coreset.spc);
        if spcs.clone().any(|&s| s == 0) {
            return Err(Error::Config("spc values must be positive".into()));
        }
        self.distill.config(self.seed).validate()?;
        if self.eval.repeats == 0 || self.eval.models.is_empty() {
            return Err(Error::Config("eval needs at least one repeat and one model".into()));
        }
        Ok(())
    }
}

/// Sets `dotted.key` in `root` to `raw`, parsed as a TOML value when possible
/// and as a bare string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Reads `file` (if any), applies `overrides` in order and validates.
pub fn load_config(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
