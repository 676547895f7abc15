//! Teacher (biLSTM + linear convolution head) and student (dilated
//! convolution stack over a bidirectional input) equalizers.

mod compiled;
mod features;

pub use compiled::{compile_count, CompiledModel, Precision};
pub use features::{
    build_windows, make_bidirectional_input, pairs_to_symbols, FeatureLayout, WindowBatch, FEATURES, OUTPUTS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_output_len, Checkpoint, Graph, Padding, ParamStore, Tensor, Var};
use crate::signal::WindowSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSpec {
    pub input_features: usize,
    pub bilstm_hidden: usize,
    pub head_filters: usize,
    pub head_kernel: usize,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self {
            input_features: FEATURES,
            bilstm_hidden: 100,
            head_filters: OUTPUTS,
            head_kernel: 51,
        }
    }
}

/// `(filters, kernel, dilation)` of one hidden convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvLayerSpec {
    pub const fn new(filters: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            filters,
            kernel,
            dilation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentSpec {
    pub input_features: usize,
    pub hidden_layers: Vec<ConvLayerSpec>,
    pub hidden_padding: Padding,
    pub leaky_slope: f64,
    pub head_filters: usize,
    pub head_kernel: usize,
    pub bidirectional_input: bool,
}

impl Default for StudentSpec {
    fn default() -> Self {
        Self {
            input_features: FEATURES,
            hidden_layers: vec![
                ConvLayerSpec::new(38, 23, 1),
                ConvLayerSpec::new(38, 23, 2),
                ConvLayerSpec::new(38, 23, 4),
            ],
            hidden_padding: Padding::Same,
            leaky_slope: 0.01,
            head_filters: OUTPUTS,
            head_kernel: 51,
            bidirectional_input: true,
        }
    }
}

impl StudentSpec {
    /// Channels entering the first convolution.
    pub fn input_channels(&self) -> usize {
        if self.bidirectional_input {
            2 * self.input_features
        } else {
            self.input_features
        }
    }
}

/// Architecture of either model, serialized with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Teacher(TeacherSpec),
    Student(StudentSpec),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Teacher(_) => "teacher",
            ModelSpec::Student(_) => "student",
        }
    }

    /// Checks the head contract and that `window.input_len` symbols map to
    /// `window.output_len` outputs.
    pub fn validate(&self, window: &WindowSpec) -> Result<()> {
        let (features, head_filters, head_kernel) = match self {
            ModelSpec::Teacher(t) => {
                if t.bilstm_hidden == 0 {
                    return Err(Error::config("teacher bilstm_hidden must be ≥ 1"));
                }
                (t.input_features, t.head_filters, t.head_kernel)
            }
            ModelSpec::Student(s) => {
                if s.hidden_layers.iter().any(|l| l.filters == 0 || l.kernel == 0 || l.dilation == 0) {
                    return Err(Error::config("student layers need positive filters, kernel and dilation"));
                }
                if !(s.leaky_slope >= 0.0) {
                    return Err(Error::config("leaky slope must be ≥ 0"));
                }
                (s.input_features, s.head_filters, s.head_kernel)
            }
        };
        if features != FEATURES {
            return Err(Error::config(format!("models take {FEATURES} features per symbol, spec has {features}")));
        }
        if head_filters != OUTPUTS {
            return Err(Error::config(format!("head must have {OUTPUTS} filters (re, im), spec has {head_filters}")));
        }
        if head_kernel == 0 {
            return Err(Error::config("head kernel must be ≥ 1"));
        }
        let out = self.output_len(window.input_len);
        if out != Some(window.output_len) {
            return Err(Error::config(format!(
                "{} maps {} input symbols to {:?} outputs, window expects {}",
                self.name(),
                window.input_len,
                out,
                window.output_len
            )));
        }
        Ok(())
    }

    /// Output symbols for `input_len` input symbols.
    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        match self {
            ModelSpec::Teacher(t) => conv_output_len(input_len, t.head_kernel, 1, Padding::Valid),
            ModelSpec::Student(s) => {
                let mut len = input_len;
                for l in &s.hidden_layers {
                    len = conv_output_len(len, l.kernel, l.dilation, s.hidden_padding)?;
                }
                conv_output_len(len, s.head_kernel, 1, Padding::Valid)
            }
        }
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("model spec: {e}")))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Glorot-uniform convolution weights `[c_out, c_in, k]`.
fn glorot(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> Tensor {
    let limit = (6.0 / ((c_in * k + c_out * k) as f64)).sqrt();
    Tensor::from_fn(vec![c_out, c_in, k], |_| rng.random_range(-limit..limit))
}

/// A model architecture with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
}

/// Biases start at zero; LSTM arrays are uniform in ±1/√hidden.
pub fn build_teacher(spec: &TeacherSpec, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, h) = (spec.input_features, spec.bilstm_hidden);
    if h == 0 || f == 0 {
        return Err(Error::config("teacher needs positive features and hidden size"));
    }
    let bound = 1.0 / (h as f64).sqrt();
    let mut uni = |shape: Vec<usize>| Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
    let mut params = ParamStore::new();
    for dir in ["lstm_fwd", "lstm_bwd"] {
        params.insert(format!("{dir}.w_ih"), uni(vec![4 * h, f]))?;
        params.insert(format!("{dir}.w_hh"), uni(vec![4 * h, h]))?;
        params.insert(format!("{dir}.bias"), uni(vec![4 * h]))?;
    }
    params.insert("head.weight", glorot(&mut rng, spec.head_filters, 2 * h, spec.head_kernel))?;
    params.insert("head.bias", Tensor::zeros(vec![spec.head_filters]))?;
    Ok(Model {
        spec: ModelSpec::Teacher(spec.clone()),
        params,
    })
}

pub fn build_student(spec: &StudentSpec, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let mut c_in = spec.input_channels();
    for (i, l) in spec.hidden_layers.iter().enumerate() {
        if l.filters == 0 || l.kernel == 0 || l.dilation == 0 {
            return Err(Error::config(format!("student layer {i} has a zero dimension")));
        }
        params.insert(format!("conv{i}.weight"), glorot(&mut rng, l.filters, c_in, l.kernel))?;
        params.insert(format!("conv{i}.bias"), Tensor::zeros(vec![l.filters]))?;
        c_in = l.filters;
    }
    params.insert("head.weight", glorot(&mut rng, spec.head_filters, c_in, spec.head_kernel))?;
    params.insert("head.bias", Tensor::zeros(vec![spec.head_filters]))?;
    Ok(Model {
        spec: ModelSpec::Student(spec.clone()),
        params,
    })
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    match spec {
        ModelSpec::Teacher(t) => build_teacher(t, seed),
        ModelSpec::Student(s) => build_student(s, seed),
    }
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Records the forward pass over `n` windows of `inputs` (`[n, L, 4]`,
    /// time-major). Returns the output node (`[n, L_out, 2]`) and one
    /// trainable node per parameter array, in store order.
    pub fn forward_graph(&self, g: &mut Graph, inputs: &[f64], n: usize) -> Result<(Var, Vec<Var>)> {
        if n == 0 || inputs.len() % (n * FEATURES) != 0 {
            return Err(Error::Dimension {
                axis: "window batch values".into(),
                expected: n * FEATURES,
                actual: inputs.len(),
            });
        }
        let len = inputs.len() / (n * FEATURES);
        let pv: Vec<Var> = self.params.iter().map(|(_, t)| g.param(t)).collect();
        let out = match &self.spec {
            ModelSpec::Teacher(_) => {
                let x = g.input(Tensor::new(vec![n, len, FEATURES], inputs.to_vec())?);
                let fwd = g.lstm(x, pv[0], pv[1], pv[2], false)?;
                let bwd = g.lstm(x, pv[3], pv[4], pv[5], true)?;
                let cat = g.concat_last(fwd, bwd)?;
                let ch = g.swap_last2(cat)?;
                let y = g.conv1d(ch, pv[6], pv[7], 1, Padding::Valid)?;
                g.swap_last2(y)?
            }
            ModelSpec::Student(s) => {
                let x = g.input(student_input(s, inputs, n, len)?);
                let mut h = x;
                for (i, l) in s.hidden_layers.iter().enumerate() {
                    h = g.conv1d(h, pv[2 * i], pv[2 * i + 1], l.dilation, s.hidden_padding)?;
                    h = g.leaky_relu(h, s.leaky_slope);
                }
                let k = s.hidden_layers.len();
                let y = g.conv1d(h, pv[2 * k], pv[2 * k + 1], 1, Padding::Valid)?;
                g.swap_last2(y)?
            }
        };
        Ok((out, pv))
    }

    /// Graph forward pass without recording gradients for later use.
    pub fn forward(&self, inputs: &[f64], n: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let (y, _) = self.forward_graph(&mut g, inputs, n)?;
        Ok(g.value(y).clone())
    }

    pub fn to_checkpoint(&self, config_digest: [u8; 32]) -> Result<Checkpoint> {
        Ok(Checkpoint {
            spec_text: self.spec.to_text()?,
            config_digest,
            params: self.params.clone(),
        })
    }

    /// Rebuilds a model, checking every array name and shape against the
    /// architecture named in the checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec = ModelSpec::from_text(&ckpt.spec_text)?;
        let template = build_model(&spec, 0)?;
        if template.params.len() != ckpt.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} arrays, {} expects {}",
                ckpt.params.len(),
                spec.name(),
                template.params.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in template.params.iter().zip(ckpt.params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Format(format!(
                    "checkpoint array {n2} {:?} does not match {n1} {:?}",
                    t2.shape(),
                    t1.shape()
                )));
            }
        }
        Ok(Self {
            spec,
            params: ckpt.params.clone(),
        })
    }

    /// Compiled inference engine at the given float type.
    pub fn compile<T: num_traits::Float + Send + Sync>(&self) -> Result<CompiledModel<T>> {
        CompiledModel::new(self)
    }

    /// Float64 inference over `n` windows, parallel across windows.
    pub fn predict(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        self.compile::<f64>()?.infer_batch(inputs, n)
    }
}

/// `[n, L, 4]` time-major windows → `[n, C, L]` channel-major student input.
fn student_input(spec: &StudentSpec, inputs: &[f64], n: usize, len: usize) -> Result<Tensor> {
    let c = spec.input_channels();
    let mut data = vec![0.0; n * c * len];
    for i in 0..n {
        let w = &inputs[i * len * FEATURES..(i + 1) * len * FEATURES];
        let src = if spec.bidirectional_input {
            make_bidirectional_input(w, len)?
        } else {
            w.to_vec()
        };
        let dst = &mut data[i * c * len..(i + 1) * c * len];
        for t in 0..len {
            for ch in 0..c {
                dst[ch * len + t] = src[t * c + ch];
            }
        }
    }
    Tensor::new(vec![n, c, len], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_inputs(n: usize, len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * len * FEATURES).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn teacher_parameter_count() {
        let m = build_teacher(&TeacherSpec::default(), 1).unwrap();
        // per direction 4·(H·(F+H) + H); head K·2H·2 + 2
        let (h, f) = (100, 4);
        let lstm = 2 * 4 * (h * (f + h) + h);
        let head = 51 * 2 * h * 2 + 2;
        assert_eq!(lstm, 84_000);
        assert_eq!(head, 20_402);
        assert_eq!(m.parameter_count(), lstm + head);
    }

    #[test]
    fn student_parameter_count_depends_on_input_duplication() {
        let spec = StudentSpec::default();
        let count = |s: &StudentSpec| {
            let mut c_in = s.input_channels();
            let mut total = 0;
            for l in &s.hidden_layers {
                total += l.filters * l.kernel * c_in + l.filters;
                c_in = l.filters;
            }
            total + 2 * 51 * c_in + 2
        };
        let bi = build_student(&spec, 1).unwrap();
        assert_eq!(bi.parameter_count(), count(&spec));
        let uni_spec = StudentSpec {
            bidirectional_input: false,
            ..spec.clone()
        };
        let uni = build_student(&uni_spec, 1).unwrap();
        assert_eq!(uni.parameter_count(), count(&uni_spec));
        assert_ne!(bi.parameter_count(), uni.parameter_count());
        let x = random_inputs(2, 221, 3);
        assert_eq!(bi.forward(&x, 2).unwrap().shape(), uni.forward(&x, 2).unwrap().shape());
    }

    #[test]
    fn default_specs_satisfy_window_contract() {
        let w = WindowSpec::default();
        ModelSpec::Teacher(TeacherSpec::default()).validate(&w).unwrap();
        ModelSpec::Student(StudentSpec::default()).validate(&w).unwrap();
        assert_eq!(StudentSpec::default().hidden_layers[0], ConvLayerSpec::new(38, 23, 1));
        let bad = TeacherSpec {
            head_kernel: 41,
            ..TeacherSpec::default()
        };
        assert!(ModelSpec::Teacher(bad).validate(&w).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        for spec in [
            ModelSpec::Teacher(TeacherSpec::default()),
            ModelSpec::Student(StudentSpec::default()),
        ] {
            let mut m = build_model(&spec, 9).unwrap();
            m.params_mut().zero_all();
            let y = m.forward(&random_inputs(2, 221, 1), 2).unwrap();
            assert_eq!(y.shape(), &[2, 171, 2]);
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = build_student(&StudentSpec::default(), 5).unwrap();
        let b = build_student(&StudentSpec::default(), 5).unwrap();
        let c = build_student(&StudentSpec::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = build_teacher(
            &TeacherSpec {
                bilstm_hidden: 3,
                ..TeacherSpec::default()
            },
            2,
        )
        .unwrap();
        let ck = m.to_checkpoint([1; 32]).unwrap();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Model::from_checkpoint(&Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, m);
        let mut wrong = ck.clone();
        wrong.spec_text = ModelSpec::Teacher(TeacherSpec::default()).to_text().unwrap();
        assert!(Model::from_checkpoint(&wrong).is_err());
    }
}
