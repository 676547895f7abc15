//! Teacher pre-training, teacher label generation and the three student
//! training modes (distillation, from scratch, L2-regularized).

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::derive_seed;
use crate::error::{Error, Result};
use crate::models::{build_student, build_teacher, Model, ModelSpec, StudentSpec, TeacherSpec, WindowBatch, OUTPUTS};
use crate::nn::{adam_update, mae, mse, AdamConfig, AdamState, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
}

impl LossKind {
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            LossKind::Mse => mse(a, b),
            LossKind::Mae => mae(a, b),
        }
    }

    fn graph(self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        match self {
            LossKind::Mse => g.mse(a, b),
            LossKind::Mae => g.mae(a, b),
        }
    }
}

/// Weighting between the teacher-matching and truth-matching terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdLossParams {
    pub alpha: f64,
    pub teacher_term: LossKind,
    pub truth_term: LossKind,
}

impl Default for KdLossParams {
    fn default() -> Self {
        Self {
            alpha: 0.903,
            teacher_term: LossKind::Mse,
            truth_term: LossKind::Mse,
        }
    }
}

impl KdLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `α·L₁(student, teacher) + (1−α)·L₂(student, truth)`.
pub fn kd_loss(student_pred: &Tensor, teacher_pred: &Tensor, truth: &Tensor, params: &KdLossParams) -> Result<f64> {
    params.validate()?;
    same_shape(student_pred, teacher_pred, "student vs teacher predictions")?;
    same_shape(student_pred, truth, "student predictions vs truth")?;
    let a = params.alpha;
    Ok(a * params.teacher_term.eval(student_pred.data(), teacher_pred.data())
        + (1.0 - a) * params.truth_term.eval(student_pred.data(), truth.data()))
}

/// Graph form of [`kd_loss`]; `teacher` and `truth` must be constant inputs.
pub fn kd_loss_graph(g: &mut Graph, student: Var, teacher: Var, truth: Var, params: &KdLossParams) -> Result<Var> {
    params.validate()?;
    let l1 = params.teacher_term.graph(g, student, teacher)?;
    let l2 = params.truth_term.graph(g, student, truth)?;
    let l1 = g.scale(l1, params.alpha);
    let l2 = g.scale(l2, 1.0 - params.alpha);
    g.add(l1, l2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Teacher,
    StudentKd,
    StudentScratch,
    StudentL2,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [
        TrainMode::Teacher,
        TrainMode::StudentKd,
        TrainMode::StudentScratch,
        TrainMode::StudentL2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Teacher => "teacher",
            TrainMode::StudentKd => "student_kd",
            TrainMode::StudentScratch => "student_scratch",
            TrainMode::StudentL2 => "student_l2",
        }
    }

    pub fn is_student(self) -> bool {
        self != TrainMode::Teacher
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown training mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l2_coeff: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Fraction of windows held out (from the end) for model selection.
    pub validation_fraction: f64,
    pub kd: KdLossParams,
    /// Windows per forward/backward pass; gradients of a mini-batch are
    /// accumulated over its micro-batches. Bounds memory only.
    pub micro_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 1024,
            lr: 0.00026,
            l2_coeff: 0.0,
            seed: 1,
            mode: TrainMode::StudentKd,
            validation_fraction: 0.1,
            kd: KdLossParams::default(),
            micro_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(Error::config("batch_size and micro_batch must be ≥ 1"));
        }
        if !(self.l2_coeff >= 0.0) {
            return Err(Error::config("l2_coeff must be ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must lie in [0, 1)"));
        }
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
        .validate()?;
        self.kd.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub weight_l2_norm: f64,
    /// Seconds since the start of training.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation MSE (initialization included).
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// 0 when the initialization was never beaten.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Training and validation window indices: the last
/// `ceil(fraction·n)` windows validate (at least one train window is kept).
pub fn split_indices(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64 * fraction).ceil() as usize).min(n.saturating_sub(1));
    ((0..n - n_val).collect(), (n - n_val..n).collect())
}

pub fn pretrain_teacher(data: &WindowBatch, spec: &TeacherSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.mode != TrainMode::Teacher {
        return Err(Error::config(format!("pretrain_teacher called with mode {}", cfg.mode)));
    }
    ModelSpec::Teacher(spec.clone()).validate(&data.spec)?;
    let model = build_teacher(spec, cfg.seed)?;
    train_model(model, data, None, cfg)
}

/// Teacher predictions for every window, `[n, output_len, 2]`.
pub fn generate_teacher_labels(teacher: &Model, data: &WindowBatch) -> Result<Vec<f64>> {
    if !matches!(teacher.spec(), ModelSpec::Teacher(_)) {
        return Err(Error::config("teacher labels require a teacher model"));
    }
    teacher.spec().validate(&data.spec)?;
    if data.count == 0 {
        return Ok(Vec::new());
    }
    teacher.predict(&data.inputs, data.count)
}

pub fn train_student(
    data: &WindowBatch,
    labels: Option<&[f64]>,
    spec: &StudentSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    match (cfg.mode, labels.is_some()) {
        (TrainMode::Teacher, _) => {
            return Err(Error::config("train_student called with mode teacher"));
        }
        (TrainMode::StudentKd, false) => {
            return Err(Error::config("student_kd training needs teacher labels"));
        }
        (m, true) if m != TrainMode::StudentKd => {
            return Err(Error::config(format!("teacher labels given for mode {m}")));
        }
        _ => {}
    }
    ModelSpec::Student(spec.clone()).validate(&data.spec)?;
    let model = build_student(spec, cfg.seed)?;
    train_model(model, data, labels, cfg)
}

fn validation_mse(model: &Model, data: &WindowBatch, val: &[usize]) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let sub = data.select(val);
    let pred = model.predict(&sub.inputs, sub.count)?;
    Ok(mse(&pred, &sub.targets))
}

/// Adam over shuffled mini-batches; keeps the parameters with the best
/// validation MSE.
pub fn train_model(mut model: Model, data: &WindowBatch, labels: Option<&[f64]>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.spec().validate(&data.spec)?;
    let out_len = data.spec.output_len * OUTPUTS;
    if let Some(l) = labels {
        if l.len() != data.targets.len() {
            return Err(Error::Dimension {
                axis: "teacher labels".into(),
                expected: data.targets.len(),
                actual: l.len(),
            });
        }
    }
    let (train_idx, val_idx) = split_indices(data.count, cfg.validation_fraction);
    if train_idx.is_empty() && cfg.epochs > 0 {
        return Err(Error::config("no training windows"));
    }
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        model.params(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5348_5546));
    let start = Instant::now();
    let mut best = (validation_mse(&model, data, &val_idx)?, 0usize, model.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            for micro in batch.chunks(cfg.micro_batch) {
                let sub = data.select(micro);
                let weight = micro.len() as f64 / batch.len() as f64;
                let mut g = Graph::new();
                let (pred, pv) = model.forward_graph(&mut g, &sub.inputs, sub.count)?;
                let shape = vec![sub.count, data.spec.output_len, OUTPUTS];
                let truth = g.input(Tensor::new(shape.clone(), sub.targets.clone())?);
                let mut loss = match cfg.mode {
                    TrainMode::StudentKd => {
                        let l = labels.expect("checked above");
                        let t: Vec<f64> = micro
                            .iter()
                            .flat_map(|&i| l[i * out_len..(i + 1) * out_len].iter().copied())
                            .collect();
                        let teacher = g.input(Tensor::new(shape, t)?);
                        kd_loss_graph(&mut g, pred, teacher, truth, &cfg.kd)?
                    }
                    _ => g.mse(pred, truth)?,
                };
                if cfg.mode == TrainMode::StudentL2 {
                    for (v, (name, _)) in pv.iter().zip(model.params().iter()) {
                        if !crate::nn::ParamStore::is_bias(name) {
                            let s = g.sum_squares(*v);
                            let s = g.scale(s, cfg.l2_coeff);
                            loss = g.add(loss, s)?;
                        }
                    }
                }
                let lv = g.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::Divergence(format!(
                        "{} loss became {lv} in epoch {epoch}",
                        cfg.mode
                    )));
                }
                loss_sum += lv * micro.len() as f64;
                seen += micro.len();
                let mut gr = g.backward(loss)?;
                for (acc, v) in grads.iter_mut().zip(&pv) {
                    if let Some(d) = gr.take(*v) {
                        for (a, x) in acc.iter_mut().zip(&d) {
                            *a += weight * x;
                        }
                    }
                }
            }
            adam_update(model.params_mut(), &grads, &mut adam)?;
        }
        if !model.params().all_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }
        let val_loss = validation_mse(&model, data, &val_idx)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            weight_l2_norm: model.params().weight_sum_squares().sqrt(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "{} epoch {epoch}: train {:.5} val {:.5}",
            cfg.mode,
            entry.train_loss,
            entry.val_loss
        );
        log.push(entry);
        if val_loss < best.0 || best.0.is_nan() {
            best = (val_loss, epoch, model.clone());
        }
    }
    if val_idx.is_empty() {
        // nothing to select on: keep the final parameters
        best = (f64::NAN, cfg.epochs, model);
    }
    Ok(TrainOutcome {
        model: best.2,
        log,
        best_epoch: best.1,
        best_val_loss: best.0,
    })
}

/// Writes the training log as CSV with a digest comment line.
pub fn write_training_log(path: &Path, log: &[EpochLog], config_digest: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    use std::io::Write;
    writeln!(file, "# config_digest: {config_digest}")?;
    let mut w = csv::Writer::from_writer(file);
    for e in log {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ConvLayerSpec, FEATURES};
    use crate::nn::Padding;
    use crate::signal::WindowSpec;
    use rand::Rng;

    fn t(v: Vec<f64>) -> Tensor {
        let n = v.len();
        Tensor::new(vec![1, n / 2, 2], v).unwrap()
    }

    #[test]
    fn kd_loss_arithmetic() {
        // MSE(student, teacher) = 1, MSE(student, truth) = 2
        let s = t(vec![0.0, 0.0]);
        let te = t(vec![1.0, 1.0]);
        let tr = t(vec![2.0_f64.sqrt(), -(2.0_f64.sqrt())]);
        let p = KdLossParams::default();
        let l = kd_loss(&s, &te, &tr, &p).unwrap();
        assert_eq!(mse(s.data(), te.data()), 1.0);
        assert!((mse(s.data(), tr.data()) - 2.0).abs() < 1e-15);
        assert!((l - 1.097).abs() < 1e-12, "{l}");
    }

    #[test]
    fn kd_loss_endpoints() {
        let s = t(vec![0.3, -0.1, 0.8, 0.2]);
        let te = t(vec![0.1, 0.1, 0.5, 0.0]);
        let tr = t(vec![1.0, -1.0, 1.0, 1.0]);
        let one = KdLossParams {
            alpha: 1.0,
            ..KdLossParams::default()
        };
        let zero = KdLossParams {
            alpha: 0.0,
            ..KdLossParams::default()
        };
        assert_eq!(kd_loss(&s, &te, &tr, &one).unwrap(), mse(s.data(), te.data()));
        assert_eq!(kd_loss(&s, &te, &tr, &zero).unwrap(), mse(s.data(), tr.data()));
        for a in [0.0, 0.3, 0.903, 1.0] {
            let p = KdLossParams {
                alpha: a,
                ..KdLossParams::default()
            };
            assert_eq!(kd_loss(&s, &s, &s, &p).unwrap(), 0.0);
        }
        let bad = KdLossParams {
            alpha: 1.5,
            ..KdLossParams::default()
        };
        assert!(kd_loss(&s, &te, &tr, &bad).is_err());
        assert!(kd_loss(&s, &t(vec![0.0; 2]), &tr, &one).is_err());
    }

    #[test]
    fn kd_loss_is_convex_along_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut r = |n: usize| t((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (te, tr, a, b) = (r(8), r(8), r(8), r(8));
        let p = KdLossParams::default();
        for k in 1..10 {
            let lam = k as f64 / 10.0;
            let mix = Tensor::from_fn(vec![1, 4, 2], |i| lam * a.data()[i] + (1.0 - lam) * b.data()[i]);
            let lhs = kd_loss(&mix, &te, &tr, &p).unwrap();
            let rhs = lam * kd_loss(&a, &te, &tr, &p).unwrap() + (1.0 - lam) * kd_loss(&b, &te, &tr, &p).unwrap();
            assert!(lhs <= rhs + 1e-12);
        }
    }

    fn tiny_spec() -> (WindowSpec, StudentSpec, TeacherSpec) {
        let w = WindowSpec::new(21, 11, 11).unwrap();
        let s = StudentSpec {
            hidden_layers: vec![ConvLayerSpec::new(4, 5, 1), ConvLayerSpec::new(4, 3, 2)],
            head_kernel: 11,
            ..StudentSpec::default()
        };
        let te = TeacherSpec {
            bilstm_hidden: 4,
            head_kernel: 11,
            ..TeacherSpec::default()
        };
        (w, s, te)
    }

    fn tiny_data(n: usize, seed: u64) -> WindowBatch {
        let (w, ..) = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WindowBatch {
            inputs: (0..n * 21 * FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect(),
            targets: (0..n * 11 * 2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            count: n,
            spec: w,
        }
    }

    fn cfg(mode: TrainMode, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            micro_batch: 3,
            lr: 0.01,
            mode,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (_, _, te) = tiny_spec();
        let d = tiny_data(10, 1);
        let out = pretrain_teacher(&d, &te, &cfg(TrainMode::Teacher, 0)).unwrap();
        assert_eq!(out.model, build_teacher(&te, 3).unwrap());
        assert!(out.log.is_empty());
    }

    #[test]
    fn kd_with_alpha_zero_equals_scratch() {
        let (_, s, _) = tiny_spec();
        let d = tiny_data(12, 2);
        let labels: Vec<f64> = d.targets.iter().map(|v| v * 0.5 + 0.1).collect();
        let mut kd = cfg(TrainMode::StudentKd, 3);
        kd.kd.alpha = 0.0;
        let a = train_student(&d, Some(&labels), &s, &kd).unwrap();
        let b = train_student(&d, None, &s, &cfg(TrainMode::StudentScratch, 3)).unwrap();
        assert_eq!(a.model, b.model);
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
        }
        let mut l2 = cfg(TrainMode::StudentL2, 3);
        l2.l2_coeff = 0.0;
        let c = train_student(&d, None, &s, &l2).unwrap();
        assert_eq!(c.model, b.model);
    }

    #[test]
    fn training_is_reproducible() {
        let (_, s, _) = tiny_spec();
        let d = tiny_data(9, 4);
        let a = train_student(&d, None, &s, &cfg(TrainMode::StudentScratch, 2)).unwrap();
        let b = train_student(&d, None, &s, &cfg(TrainMode::StudentScratch, 2)).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn student_modes_check_labels() {
        let (_, s, _) = tiny_spec();
        let d = tiny_data(4, 5);
        assert!(train_student(&d, None, &s, &cfg(TrainMode::StudentKd, 1)).is_err());
        assert!(train_student(&d, Some(&d.targets), &s, &cfg(TrainMode::StudentScratch, 1)).is_err());
        assert!(train_student(&d, Some(&d.targets[1..]), &s, &cfg(TrainMode::StudentKd, 1)).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (_, s, _) = tiny_spec();
        let mut d = tiny_data(4, 6);
        d.targets[0] = f64::INFINITY;
        let err = train_student(&d, None, &s, &cfg(TrainMode::StudentScratch, 1)).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn l2_mode_shrinks_weights() {
        let (_, s, _) = tiny_spec();
        let d = tiny_data(12, 7);
        let scratch = train_student(&d, None, &s, &cfg(TrainMode::StudentScratch, 5)).unwrap();
        let mut c = cfg(TrainMode::StudentL2, 5);
        c.l2_coeff = 0.05;
        let l2 = train_student(&d, None, &s, &c).unwrap();
        for (a, b) in l2.log.iter().zip(&scratch.log).skip(1) {
            assert!(a.weight_l2_norm <= b.weight_l2_norm);
        }
    }

    #[test]
    fn split_keeps_a_tail_for_validation() {
        assert_eq!(split_indices(10, 0.1), ((0..9).collect(), vec![9]));
        let (t, v) = split_indices(191, 0.1);
        assert_eq!((t.len(), v.len()), (171, 20));
        assert_eq!(split_indices(1, 0.1).1.len(), 0);
    }

    #[test]
    fn student_padding_default_is_same() {
        assert_eq!(StudentSpec::default().hidden_padding, Padding::Same);
    }
}
