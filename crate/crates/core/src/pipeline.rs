//! Stage orchestration: dataset generation, training, evaluation, latency
//! benchmarks and the summary report, with a manifest of every artifact.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{bench_model, emit_bench_report, BenchConfig, BenchReport};
use crate::channel::derive_seed;
use crate::config::{power_tag, ExperimentConfig, NnInput};
use crate::dsp::DspChainConfig;
use crate::error::{Error, Result};
use crate::io::{Dataset, FLAG_LABELS};
use crate::link::simulate_frames;
use crate::metrics::{evaluate_equalizer, weight_histogram, IdentityEqualizer, ModelPair, QSweepReport, QSweepRow};
use crate::models::{build_model, build_windows, pairs_to_symbols, FeatureLayout, Model, ModelSpec, WindowBatch};
use crate::nn::{sha256, Checkpoint};
use crate::signal::{slice_windows, Polarization, SymbolFrame, C64};
use crate::train::{generate_teacher_labels, train_model, write_training_log, TrainMode};

pub const MANIFEST_FILE: &str = "manifest.json";
const DIGEST_PREFIX: &str = "# config_digest: ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub stage: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_clock_s: f64,
}

/// Index of everything a run directory holds, keyed by path relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub tool_version: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub stages: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(config_digest: &str) -> Self {
        Self {
            config_digest: config_digest.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: BTreeMap::new(),
            stages: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Checks that every listed file exists, is unchanged and embeds the
    /// manifest's config digest.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for (rel, entry) in &self.artifacts {
            let path = root.join(rel);
            if !path.exists() {
                return Err(Error::MissingPrerequisite {
                    stage: entry.stage.clone(),
                    path,
                });
            }
            let bytes = std::fs::read(&path)?;
            if hex::encode(sha256(&bytes)) != entry.sha256 {
                return Err(Error::DigestMismatch(format!("{rel} changed since it was recorded")));
            }
            match embedded_digest(&path, &bytes)? {
                Some(d) if d == self.config_digest => {}
                Some(d) => {
                    return Err(Error::DigestMismatch(format!(
                        "{rel} carries config digest {d}, manifest has {}",
                        self.config_digest
                    )))
                }
                None => return Err(Error::DigestMismatch(format!("{rel} carries no config digest"))),
            }
        }
        Ok(())
    }
}

/// Config digest stored inside an artifact, by file type.
pub fn embedded_digest(path: &Path, bytes: &[u8]) -> Result<Option<String>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("oeqd") => Ok(Some(hex::encode(Dataset::read_from(&mut &bytes[..])?.header.config_digest))),
        Some("oeqw") => Ok(Some(hex::encode(Checkpoint::read_from(&mut &bytes[..])?.config_digest))),
        Some("csv") | Some("md") => Ok(std::str::from_utf8(bytes)
            .ok()
            .and_then(|t| t.lines().find_map(|l| l.strip_prefix(DIGEST_PREFIX)))
            .map(|s| s.trim().to_string())),
        Some("json") => {
            let v: serde_json::Value = serde_json::from_slice(bytes)?;
            Ok(v.get("config_digest").and_then(|d| d.as_str()).map(str::to_string))
        }
        _ => Ok(None),
    }
}

/// Runs pipeline stages for one configuration inside one run directory.
#[derive(Debug)]
pub struct Pipeline {
    cfg: ExperimentConfig,
    root: PathBuf,
    digest: String,
    digest_bytes: [u8; 32],
}

/// Bench settings and checkpoints given on the command line.
#[derive(Debug, Clone, Default)]
pub struct BenchOverrides {
    pub config: Option<BenchConfig>,
    pub teacher: Option<PathBuf>,
    pub student: Option<PathBuf>,
}

/// Outcome of a training stage: one entry per (power, polarization).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub launch_power_dbm: f64,
    pub polarization: Polarization,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
}

impl Pipeline {
    /// `output_root` prefixes a relative `output_dir`.
    pub fn new(cfg: ExperimentConfig, output_root: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let root = match output_root {
            Some(r) if cfg.output_dir.is_relative() => r.join(&cfg.output_dir),
            _ => cfg.output_dir.clone(),
        };
        let digest_bytes = cfg.digest_bytes()?;
        Ok(Self {
            digest: hex::encode(digest_bytes),
            digest_bytes,
            cfg,
            root,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn dataset_path(&self, power: f64) -> PathBuf {
        self.root.join("datasets").join(format!("p{}dBm.oeqd", power_tag(power)))
    }

    pub fn baselines_path(&self) -> PathBuf {
        self.root.join("baselines.csv")
    }

    fn run_dir(&self, mode: TrainMode, power: f64, seed: u64) -> PathBuf {
        self.root
            .join("models")
            .join(mode.as_str())
            .join(format!("p{}dBm", power_tag(power)))
            .join(format!("s{seed}"))
    }

    pub fn checkpoint_path(&self, mode: TrainMode, power: f64, seed: u64, pol: Polarization) -> PathBuf {
        self.run_dir(mode, power, seed).join(format!("{}.oeqw", pol.as_str()))
    }

    pub fn training_log_path(&self, mode: TrainMode, power: f64, seed: u64, pol: Polarization) -> PathBuf {
        self.run_dir(mode, power, seed).join(format!("log_{}.csv", pol.as_str()))
    }

    pub fn labels_path(&self, power: f64, teacher_seed: u64) -> PathBuf {
        self.root
            .join("labels")
            .join(format!("p{}dBm_s{teacher_seed}.oeqd", power_tag(power)))
    }

    pub fn q_sweep_path(&self) -> PathBuf {
        self.root.join("eval").join("q_sweep.csv")
    }

    pub fn bench_path(&self) -> PathBuf {
        self.root.join("bench").join("bench.csv")
    }

    fn seed_for(&self, mode: TrainMode, seed: Option<u64>) -> u64 {
        seed.unwrap_or(self.cfg.training.for_mode(mode).seed)
    }

    /// Loads the manifest of this run directory, or starts one. A manifest
    /// written under another configuration is replaced when `reset` and an
    /// error otherwise.
    fn manifest(&self, reset: bool) -> Result<RunManifest> {
        let path = self.manifest_path();
        if path.exists() {
            let m = RunManifest::load(&path)?;
            if m.config_digest != self.digest {
                if reset {
                    return Ok(RunManifest::new(&self.digest));
                }
                return Err(Error::DigestMismatch(format!(
                    "{} belongs to config {}, current config is {}",
                    self.root.display(),
                    m.config_digest,
                    self.digest
                )));
            }
            return Ok(m);
        }
        Ok(RunManifest::new(&self.digest))
    }

    fn record(&self, stage: &str, paths: &[PathBuf], started: Instant, reset: bool) -> Result<()> {
        let mut m = self.manifest(reset)?;
        for p in paths {
            let rel = p
                .strip_prefix(&self.root)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/");
            m.artifacts.insert(
                rel,
                ArtifactEntry {
                    stage: stage.to_string(),
                    sha256: hex::encode(sha256(&std::fs::read(p)?)),
                },
            );
        }
        m.stages.push(StageTiming {
            stage: stage.to_string(),
            wall_clock_s: started.elapsed().as_secs_f64(),
        });
        m.save(&self.manifest_path())
    }

    fn powers(&self, subset: Option<&[f64]>) -> Result<Vec<f64>> {
        let all = &self.cfg.dataset.launch_powers_dbm;
        match subset {
            None => Ok(all.clone()),
            Some(s) => s
                .iter()
                .map(|&p| {
                    all.iter()
                        .copied()
                        .find(|&q| power_tag(q) == power_tag(p))
                        .ok_or_else(|| Error::config(format!("launch power {p} dBm is not in the configuration")))
                })
                .collect(),
        }
    }

    fn dbp_method(&self) -> String {
        format!("DBP{}", self.cfg.eval.dbp_steps_per_span)
    }

    /// Simulates training and test frames for every configured launch power
    /// (or `subset`), writes one dataset container per power and the CDC
    /// and DBP baseline rows of the test frames.
    pub fn datagen(&self, subset: Option<&[f64]>, force: bool) -> Result<Vec<PathBuf>> {
        let started = Instant::now();
        let powers = self.powers(subset)?;
        let mut outputs: Vec<PathBuf> = powers.iter().map(|&p| self.dataset_path(p)).collect();
        if !force {
            if let Some(p) = outputs.iter().find(|p| p.exists()) {
                return Err(Error::OutputExists(p.clone()));
            }
        }
        let _ = self.manifest(force)?;
        std::fs::create_dir_all(self.root.join("datasets"))?;
        let d = &self.cfg.dataset;
        let link = &self.cfg.link;
        let nn_chain = d.nn_input.chain();
        let dbp_chain = DspChainConfig::dbp(self.cfg.eval.dbp_steps_per_span);
        let mut test_chains = vec![nn_chain, dbp_chain];
        if d.nn_input != NnInput::Cdc {
            test_chains.push(DspChainConfig::cdc());
        }
        let method_dbp = self.dbp_method();
        let rows: Vec<Vec<QSweepRow>> = powers
            .par_iter()
            .map(|&p| -> Result<Vec<QSweepRow>> {
                let key = power_key(p);
                log::info!("datagen: simulating {p} dBm");
                let train = simulate_frames(link, p, d.train_symbols, derive_seed(d.train_seed, key), &[nn_chain])?
                    .remove(0);
                let mut test = simulate_frames(link, p, d.test_symbols, derive_seed(d.test_seed, key), &test_chains)?;
                let cdc = if d.nn_input == NnInput::Cdc { test[0].clone() } else { test.remove(2) };
                let dbp = test.remove(1);
                let nn_test = test.remove(0);
                let order = link.constellation.order() as u32;
                Dataset::new(train, nn_test, order, self.digest_bytes, 0).save(&self.dataset_path(p))?;
                let c = &link.constellation;
                Ok(vec![
                    evaluate_equalizer(&IdentityEqualizer, &cdc, &self.cfg.window, c, p, "CDC")?,
                    evaluate_equalizer(&IdentityEqualizer, &dbp, &self.cfg.window, c, p, &method_dbp)?,
                ])
            })
            .collect::<Result<_>>()?;
        // Rows of powers outside this run are kept.
        let mut report = QSweepReport::default();
        if self.baselines_path().exists() {
            let (old, digest) = QSweepReport::read_csv(&self.baselines_path())?;
            if digest.as_deref() == Some(self.digest.as_str()) {
                report.rows = old.rows;
                report
                    .rows
                    .retain(|r| !powers.iter().any(|&p| power_tag(p) == power_tag(r.launch_power_dbm)));
            }
        }
        report.rows.extend(rows.into_iter().flatten());
        report
            .rows
            .sort_by(|a, b| a.launch_power_dbm.total_cmp(&b.launch_power_dbm).then(a.method.cmp(&b.method)));
        outputs.push(self.baselines_path());
        report.write_csv(&self.baselines_path(), &self.digest)?;
        self.record("datagen", &outputs, started, force)?;
        Ok(outputs)
    }

    fn load_dataset(&self, power: f64) -> Result<Dataset> {
        let path = self.dataset_path(power);
        if !path.exists() {
            return Err(Error::MissingPrerequisite {
                stage: "datagen".into(),
                path,
            });
        }
        let ds = Dataset::load(&path)?;
        self.check_digest(&ds.header.config_digest, &path)?;
        Ok(ds)
    }

    fn check_digest(&self, d: &[u8; 32], path: &Path) -> Result<()> {
        if *d != self.digest_bytes {
            return Err(Error::DigestMismatch(format!(
                "{} was produced under config {}, current config is {}",
                path.display(),
                hex::encode(d),
                self.digest
            )));
        }
        Ok(())
    }

    pub fn load_model(&self, mode: TrainMode, power: f64, seed: u64, pol: Polarization) -> Result<Model> {
        let path = self.checkpoint_path(mode, power, seed, pol);
        if !path.exists() {
            return Err(Error::MissingPrerequisite {
                stage: format!("train --mode {mode}"),
                path,
            });
        }
        let ckpt = Checkpoint::load(&path)?;
        self.check_digest(&ckpt.config_digest, &path)?;
        Model::from_checkpoint(&ckpt)
    }

    fn model_spec(&self, mode: TrainMode) -> ModelSpec {
        if mode.is_student() {
            ModelSpec::Student(self.cfg.models.student.clone())
        } else {
            ModelSpec::Teacher(self.cfg.models.teacher.clone())
        }
    }

    /// Teacher predictions on the training windows of both polarizations,
    /// generated on first use and cached as a label store.
    fn teacher_labels(&self, power: f64, teacher_seed: u64, train: &SymbolFrame) -> Result<[Vec<f64>; 2]> {
        let path = self.labels_path(power, teacher_seed);
        let spec = &self.cfg.window;
        if path.exists() {
            let store = Dataset::load(&path)?;
            self.check_digest(&store.header.config_digest, &path)?;
            if !store.header.is_label_store() {
                return Err(Error::Format(format!("{} is not a label store", path.display())));
            }
            let flat = |s: &[C64]| s.iter().flat_map(|c| [c.re, c.im]).collect::<Vec<_>>();
            return Ok([flat(&store.train.rx_symbols_x), flat(&store.train.rx_symbols_y)]);
        }
        let started = Instant::now();
        let mut labels: [Vec<f64>; 2] = Default::default();
        for (k, pol) in Polarization::BOTH.into_iter().enumerate() {
            let teacher = self.load_model(TrainMode::Teacher, power, teacher_seed, pol)?;
            let batch = build_windows(train, spec, FeatureLayout::new(pol))?;
            labels[k] = generate_teacher_labels(&teacher, &batch)?;
        }
        let targets = |s: &[C64]| -> Vec<C64> {
            slice_windows(train, spec)
                .windows
                .iter()
                .flat_map(|w| s[w.target.clone()].iter().copied())
                .collect()
        };
        let store_frame = SymbolFrame::new(
            targets(&train.tx_symbols_x),
            targets(&train.tx_symbols_y),
            pairs_to_symbols(&labels[0]),
            pairs_to_symbols(&labels[1]),
            train.symbol_rate,
        )?;
        let empty = SymbolFrame::new(Vec::new(), Vec::new(), Vec::new(), Vec::new(), train.symbol_rate)?;
        std::fs::create_dir_all(path.parent().expect("label path has a parent"))?;
        let order = self.cfg.link.constellation.order() as u32;
        Dataset::new(store_frame, empty, order, self.digest_bytes, FLAG_LABELS).save(&path)?;
        self.record("label-generation", &[path], started, false)?;
        Ok(labels)
    }

    /// Trains one model per (power, polarization) in `mode`. `seed` replaces
    /// the configured training seed; knowledge distillation then uses the
    /// teacher trained under the same seed.
    pub fn train(&self, mode: TrainMode, subset: Option<&[f64]>, seed: Option<u64>, force: bool) -> Result<Vec<TrainSummary>> {
        let started = Instant::now();
        let powers = self.powers(subset)?;
        let seed = self.seed_for(mode, seed);
        let mut cfg = self.cfg.training.for_mode(mode).clone();
        cfg.seed = seed;
        let mut outputs = Vec::new();
        let mut jobs = Vec::new();
        for &p in &powers {
            let ds = self.load_dataset(p)?;
            let labels = match mode {
                TrainMode::StudentKd => Some(self.teacher_labels(p, seed, &ds.train)?),
                _ => None,
            };
            for (k, pol) in Polarization::BOTH.into_iter().enumerate() {
                let ckpt = self.checkpoint_path(mode, p, seed, pol);
                if ckpt.exists() && !force {
                    return Err(Error::OutputExists(ckpt));
                }
                let batch = build_windows(&ds.train, &self.cfg.window, FeatureLayout::new(pol))?;
                let label = labels.as_ref().map(|l| l[k].clone());
                jobs.push((p, pol, batch, label));
            }
        }
        let spec = self.model_spec(mode);
        let results: Vec<TrainSummary> = jobs
            .into_par_iter()
            .map(|(p, pol, batch, label): (f64, Polarization, WindowBatch, Option<Vec<f64>>)| {
                log::info!("train {mode}: {p} dBm, polarization {}, seed {seed}", pol.as_str());
                let model = build_model(&spec, seed)?;
                let out = train_model(model, &batch, label.as_deref(), &cfg)?;
                let dir = self.run_dir(mode, p, seed);
                std::fs::create_dir_all(&dir)?;
                out.model
                    .to_checkpoint(self.digest_bytes)?
                    .save(&self.checkpoint_path(mode, p, seed, pol))?;
                write_training_log(&self.training_log_path(mode, p, seed, pol), &out.log, &self.digest)?;
                Ok(TrainSummary {
                    launch_power_dbm: p,
                    polarization: pol,
                    best_epoch: out.best_epoch,
                    best_val_loss: out.best_val_loss,
                    final_train_loss: out.log.last().map_or(f64::NAN, |e| e.train_loss),
                })
            })
            .collect::<Result<_>>()?;
        for &p in &powers {
            for pol in Polarization::BOTH {
                outputs.push(self.checkpoint_path(mode, p, seed, pol));
                outputs.push(self.training_log_path(mode, p, seed, pol));
            }
        }
        self.record(&format!("train-{mode}"), &outputs, started, false)?;
        Ok(results)
    }

    /// Q sweep over every trained model pair and the stored baselines, plus
    /// weight histograms of the students. `seed` selects the training seed
    /// of every mode; otherwise each mode's configured seed is used.
    pub fn eval(&self, seed: Option<u64>) -> Result<QSweepReport> {
        let started = Instant::now();
        let baselines = self.baselines_path();
        if !baselines.exists() {
            return Err(Error::MissingPrerequisite {
                stage: "datagen".into(),
                path: baselines,
            });
        }
        let (base, _) = QSweepReport::read_csv(&baselines)?;
        let eval_dir = self.root.join("eval");
        let hist_dir = eval_dir.join("histograms");
        std::fs::create_dir_all(&hist_dir)?;
        let mut rows = Vec::new();
        let mut outputs = Vec::new();
        let mut weight_stats = Vec::new();
        let mut trained_any = false;
        for &p in &self.cfg.dataset.launch_powers_dbm {
            if !self.dataset_path(p).exists() {
                continue;
            }
            let ds = self.load_dataset(p)?;
            for mode in TrainMode::ALL {
                let s = self.seed_for(mode, seed);
                let paths = Polarization::BOTH.map(|pol| self.checkpoint_path(mode, p, s, pol));
                if !paths.iter().all(|q| q.exists()) {
                    continue;
                }
                trained_any = true;
                let pair = ModelPair {
                    x: self.load_model(mode, p, s, Polarization::X)?,
                    y: self.load_model(mode, p, s, Polarization::Y)?,
                };
                rows.push(evaluate_equalizer(
                    &pair,
                    &ds.test,
                    &self.cfg.window,
                    &self.cfg.link.constellation,
                    p,
                    mode.as_str(),
                )?);
                if mode.is_student() {
                    for (pol, model) in [(Polarization::X, &pair.x), (Polarization::Y, &pair.y)] {
                        let tag = format!("{mode}_p{}dBm_s{s}_{}", power_tag(p), pol.as_str());
                        let h = weight_histogram(model.params(), self.cfg.eval.histogram_bins, &tag)?;
                        let path = hist_dir.join(format!("{tag}.csv"));
                        h.write_csv(&path, &self.digest)?;
                        outputs.push(path);
                        weight_stats.push(serde_json::json!({
                            "mode": mode.as_str(),
                            "launch_power_dbm": p,
                            "seed": s,
                            "polarization": pol.as_str(),
                            "stdev": h.stdev,
                            "near_zero_fraction": h.near_zero_fraction,
                        }));
                    }
                }
            }
        }
        if !trained_any {
            return Err(Error::MissingPrerequisite {
                stage: "train".into(),
                path: self.root.join("models"),
            });
        }
        rows.extend(base.rows);
        let report = QSweepReport::new(rows);
        let csv = self.q_sweep_path();
        report.write_csv(&csv, &self.digest)?;
        let json = eval_dir.join("q_sweep.json");
        std::fs::write(&json, report.to_json(&self.digest)?)?;
        let weights = eval_dir.join("weights.json");
        std::fs::write(
            &weights,
            serde_json::to_string_pretty(&serde_json::json!({
                "config_digest": self.digest,
                "models": weight_stats,
            }))?,
        )?;
        outputs.extend([csv, json, weights]);
        self.record("eval", &outputs, started, false)?;
        Ok(report)
    }

    /// Latency of the teacher and the student under the configured bench
    /// block. Trained X-polarization weights are used when present; timing
    /// does not depend on weight values, so freshly initialized models stand
    /// in otherwise.
    pub fn bench(&self) -> Result<BenchReport> {
        self.bench_with(&BenchOverrides::default())
    }

    /// [`Self::bench`] with command-line overrides. The effective bench
    /// settings are recorded in `bench.json`.
    pub fn bench_with(&self, overrides: &BenchOverrides) -> Result<BenchReport> {
        let started = Instant::now();
        let bench_cfg = overrides.config.as_ref().unwrap_or(&self.cfg.bench);
        let mut rows = Vec::new();
        for (name, mode, path) in [
            ("teacher", TrainMode::Teacher, &overrides.teacher),
            ("student", TrainMode::StudentKd, &overrides.student),
        ] {
            let model = match path {
                Some(p) => Model::from_checkpoint(&Checkpoint::load(p)?)?,
                None => self.trained_or_initialized(mode)?,
            };
            let kind = if matches!(model.spec(), ModelSpec::Teacher(_)) { "teacher" } else { "student" };
            if kind != name {
                return Err(Error::config(format!("the {name} checkpoint holds a {kind}")));
            }
            rows.extend(bench_model(&model, name, bench_cfg, &self.cfg.window)?);
        }
        let report = emit_bench_report(rows)?;
        let dir = self.root.join("bench");
        std::fs::create_dir_all(&dir)?;
        let csv = self.bench_path();
        report.write_csv(&csv, &self.digest)?;
        let json = dir.join("bench.json");
        let mut summary: serde_json::Value = serde_json::from_str(&report.summary_json(&self.digest)?)?;
        summary["bench_config"] = serde_json::to_value(bench_cfg)?;
        std::fs::write(&json, serde_json::to_string_pretty(&summary)?)?;
        self.record("bench", &[csv, json], started, false)?;
        Ok(report)
    }

    fn trained_or_initialized(&self, mode: TrainMode) -> Result<Model> {
        let s = self.seed_for(mode, None);
        let trained = self
            .cfg
            .dataset
            .launch_powers_dbm
            .iter()
            .find_map(|&p| self.load_model(mode, p, s, Polarization::X).ok());
        match trained {
            Some(m) => Ok(m),
            None => {
                log::info!("bench: no trained {mode} model found, timing an initialized one");
                build_model(&self.model_spec(mode), s)
            }
        }
    }

    /// Aggregates the baseline, Q-sweep and benchmark CSVs into one summary
    /// table (Markdown and CSV). Missing inputs are skipped; at least one
    /// must exist.
    pub fn report(&self) -> Result<String> {
        let started = Instant::now();
        let q_path = if self.q_sweep_path().exists() {
            self.q_sweep_path()
        } else {
            self.baselines_path()
        };
        if !q_path.exists() {
            return Err(Error::MissingPrerequisite {
                stage: "datagen".into(),
                path: q_path,
            });
        }
        let (q, _) = QSweepReport::read_csv(&q_path)?;
        let mut methods: Vec<String> = Vec::new();
        for r in &q.rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
        let mut powers: Vec<f64> = q.rows.iter().map(|r| r.launch_power_dbm).collect();
        powers.sort_by(f64::total_cmp);
        powers.dedup_by(|a, b| power_tag(*a) == power_tag(*b));
        let cell = |m: &str, p: f64| match q.get(m, p) {
            Some(QSweepRow { q_db: Some(v), .. }) => format!("{v:.2}"),
            Some(QSweepRow { bit_errors: 0, .. }) => "no errors".to_string(),
            Some(_) => "n/a".to_string(),
            None => "-".to_string(),
        };
        let mut md = String::new();
        md.push_str(&format!("{DIGEST_PREFIX}{}\n\n", self.digest));
        md.push_str("## Q factor [dB]\n\n| launch power [dBm] |");
        for m in &methods {
            md.push_str(&format!(" {m} |"));
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(methods.len()));
        md.push('\n');
        let csv_path = self.root.join("report").join("summary.csv");
        std::fs::create_dir_all(csv_path.parent().expect("report dir"))?;
        let mut f = std::fs::File::create(&csv_path)?;
        writeln!(f, "{DIGEST_PREFIX}{}", self.digest)?;
        let mut w = csv::Writer::from_writer(f);
        let mut header = vec!["launch_power_dbm".to_string()];
        header.extend(methods.iter().map(|m| format!("q_db_{m}")));
        w.write_record(&header)?;
        for &p in &powers {
            md.push_str(&format!("| {p} |"));
            let mut rec = vec![p.to_string()];
            for m in &methods {
                let c = cell(m, p);
                md.push_str(&format!(" {c} |"));
                rec.push(c);
            }
            md.push('\n');
            w.write_record(&rec)?;
        }
        w.flush()?;
        if self.bench_path().exists() {
            let text = std::fs::read_to_string(self.bench_path())?;
            let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
            let bench = BenchReport {
                rows: r.deserialize().collect::<std::result::Result<_, _>>()?,
            };
            md.push_str("\n## Latency [ns per recovered symbol]\n\n| model | threads | median | p10 | p90 | speedup vs teacher |\n|---|---|---|---|---|---|\n");
            for b in &bench.rows {
                md.push_str(&format!(
                    "| {} | {} | {:.1} | {:.1} | {:.1} | {:.2} |\n",
                    b.model, b.threads, b.median_ns_per_symbol, b.p10, b.p90, b.speedup_vs_teacher
                ));
            }
        }
        let md_path = self.root.join("report").join("summary.md");
        std::fs::write(&md_path, &md)?;
        self.record("report", &[csv_path, md_path], started, false)?;
        Ok(md)
    }

    /// Verifies the manifest of this run directory.
    pub fn verify(&self) -> Result<RunManifest> {
        let path = self.manifest_path();
        if !path.exists() {
            return Err(Error::MissingPrerequisite {
                stage: "datagen".into(),
                path,
            });
        }
        let m = self.manifest(false)?;
        m.verify(&self.root)?;
        Ok(m)
    }
}

/// Seed stream of a launch power, stable under reordering of the power list.
fn power_key(p: f64) -> u64 {
    (p * 1000.0).round() as i64 as u64
}
