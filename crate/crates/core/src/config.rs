//! Experiment configuration: one TOML file drives every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::dsp::DspChainConfig;
use crate::error::{Error, Result};
use crate::link::LinkSetup;
use crate::models::{ModelSpec, StudentSpec, TeacherSpec};
use crate::nn::sha256;
use crate::signal::WindowSpec;
use crate::train::{TrainConfig, TrainMode};

/// Receiver chain whose symbols feed the neural equalizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NnInput {
    /// Dispersion-compensated, one sample per symbol.
    Cdc,
    /// Matched filter and decimation only.
    Raw,
}

impl NnInput {
    pub fn chain(self) -> DspChainConfig {
        match self {
            NnInput::Cdc => DspChainConfig::cdc(),
            NnInput::Raw => DspChainConfig::raw(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_symbols: usize,
    pub test_symbols: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub launch_powers_dbm: Vec<f64>,
    pub nn_input: NnInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub teacher: TeacherSpec,
    pub student: StudentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub teacher: TrainConfig,
    pub student_kd: TrainConfig,
    pub student_scratch: TrainConfig,
    pub student_l2: TrainConfig,
}

impl TrainingConfig {
    pub fn for_mode(&self, mode: TrainMode) -> &TrainConfig {
        match mode {
            TrainMode::Teacher => &self.teacher,
            TrainMode::StudentKd => &self.student_kd,
            TrainMode::StudentScratch => &self.student_scratch,
            TrainMode::StudentL2 => &self.student_l2,
        }
    }

    fn for_mode_mut(&mut self, mode: TrainMode) -> &mut TrainConfig {
        match mode {
            TrainMode::Teacher => &mut self.teacher,
            TrainMode::StudentKd => &mut self.student_kd,
            TrainMode::StudentScratch => &mut self.student_scratch,
            TrainMode::StudentL2 => &mut self.student_l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub dbp_steps_per_span: usize,
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the output root given to the pipeline.
    pub output_dir: PathBuf,
    pub link: LinkSetup,
    pub window: WindowSpec,
    pub dataset: DatasetConfig,
    pub models: ModelsConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

fn train_config(mode: TrainMode, epochs: usize, batch_size: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        lr,
        l2_coeff: if mode == TrainMode::StudentL2 { 1e-4 } else { 0.0 },
        seed,
        mode,
        ..TrainConfig::default()
    }
}

impl ExperimentConfig {
    /// Full-scale settings: 2¹⁸ training and 2¹⁶ test symbols per launch
    /// power, 1000 epochs, mini-batches of 1024 windows.
    pub fn full() -> Self {
        Self::profile(1 << 18, 1 << 16, 1000, (1024, 0.00026), (1024, 0.00026))
    }

    /// Reduced settings that run on a single workstation core: 2¹⁵
    /// training symbols, 100 epochs, mini-batches of 16 windows.
    pub fn desk() -> Self {
        Self::profile(1 << 15, 1 << 16, 100, (16, 0.00026), (16, 0.00026))
    }

    /// `teacher` and `student` are `(batch_size, lr)`.
    fn profile(train: usize, test: usize, epochs: usize, teacher: (usize, f64), student: (usize, f64)) -> Self {
        let t = |mode, (batch, lr): (usize, f64)| train_config(mode, epochs, batch, lr, 1);
        Self {
            output_dir: PathBuf::from("runs"),
            link: LinkSetup::default(),
            window: WindowSpec::default(),
            dataset: DatasetConfig {
                train_symbols: train,
                test_symbols: test,
                train_seed: 101,
                test_seed: 202,
                launch_powers_dbm: (-3..=5).map(f64::from).collect(),
                nn_input: NnInput::Cdc,
            },
            models: ModelsConfig {
                teacher: TeacherSpec::default(),
                student: StudentSpec::default(),
            },
            training: TrainingConfig {
                teacher: t(TrainMode::Teacher, teacher),
                student_kd: t(TrainMode::StudentKd, student),
                student_scratch: t(TrainMode::StudentScratch, student),
                student_l2: t(TrainMode::StudentL2, student),
            },
            eval: EvalConfig {
                dbp_steps_per_span: 1,
                histogram_bins: 101,
            },
            bench: BenchConfig::default(),
        }
    }

    pub fn by_profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::config(format!("unknown profile `{other}` (expected full or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.window.validate()?;
        let d = &self.dataset;
        if d.launch_powers_dbm.is_empty() || d.launch_powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("launch_powers_dbm must be a nonempty list of finite values"));
        }
        let mut sorted = d.launch_powers_dbm.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| power_tag(w[0]) == power_tag(w[1])) {
            return Err(Error::config("launch_powers_dbm contains duplicates"));
        }
        for (n, what) in [(d.train_symbols, "train_symbols"), (d.test_symbols, "test_symbols")] {
            if n < self.window.input_len {
                return Err(Error::config(format!(
                    "{what} = {n} is shorter than one {}-symbol window",
                    self.window.input_len
                )));
            }
        }
        ModelSpec::Teacher(self.models.teacher.clone()).validate(&self.window)?;
        ModelSpec::Student(self.models.student.clone()).validate(&self.window)?;
        let mut seeds = vec![d.train_seed, d.test_seed, self.link.ssfm.seed, self.bench.seed];
        for mode in TrainMode::ALL {
            let t = self.training.for_mode(mode);
            t.validate()?;
            if t.mode != mode {
                return Err(Error::config(format!(
                    "training.{mode} declares mode `{}`",
                    t.mode
                )));
            }
            if t.epochs == 0 {
                return Err(Error::config(format!("training.{mode}.epochs must be ≥ 1")));
            }
            seeds.push(t.seed);
        }
        if seeds.iter().any(|&s| s > i64::MAX as u64) {
            return Err(Error::config("seeds must not exceed 2⁶³ − 1"));
        }
        if self.eval.histogram_bins == 0 {
            return Err(Error::config("eval.histogram_bins must be ≥ 1"));
        }
        self.bench.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(self.digest_bytes()?))
    }

    pub fn digest_bytes(&self) -> Result<[u8; 32]> {
        Ok(sha256(self.to_toml()?.as_bytes()))
    }

    /// Sets the seed of one training mode.
    pub fn set_train_seed(&mut self, mode: TrainMode, seed: u64) {
        self.training.for_mode_mut(mode).seed = seed;
    }
}

/// File-name tag of a launch power, e.g. `m1.5` for −1.5 dBm.
pub fn power_tag(p: f64) -> String {
    let s = format!("{}", (p * 1000.0).round() / 1000.0);
    match s.strip_prefix('-') {
        Some(rest) if rest != "0" => format!("m{rest}"),
        _ => s.trim_start_matches('-').to_string(),
    }
}
