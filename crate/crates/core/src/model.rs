//! Multi-task conversion models: the adaptive-information-transfer network
//! and two baselines (independent single-task networks and a chain of
//! conditional probabilities).
//!
//! Every variant reads one `rows x fields` matrix of global feature ids
//! and produces, for each task `t`, the end-to-end probability that the
//! first `t` funnel steps all succeed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::map_ordered;
use crate::nn::{dense_forward, dropout_apply, validate_rate, Activation, DropoutSpec, Mode};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Rows evaluated per tape during batched inference.
pub const PREDICT_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Aitm,
    SingleTask,
    ProbTransfer,
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Aitm => "aitm",
            ModelVariant::SingleTask => "single_task",
            ModelVariant::ProbTransfer => "prob_transfer",
        }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aitm" => Ok(ModelVariant::Aitm),
            "single_task" => Ok(ModelVariant::SingleTask),
            "prob_transfer" => Ok(ModelVariant::ProbTransfer),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected aitm, single_task or prob_transfer)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub tasks: usize,
    pub fields: usize,
    pub embedding_dim: usize,
    pub tower_dims: Vec<usize>,
    pub dropout: Vec<f64>,
    pub ait_dim: usize,
    /// One set of transfer/attention layers for every task pair instead of
    /// one set per pair.
    #[serde(default)]
    pub share_ait: bool,
}

impl ArchitectureConfig {
    /// Towers `[128, 64, 32]` with dropout `[0.1, 0.3, 0.3]`, `d = 5`.
    pub fn new(tasks: usize, fields: usize) -> Self {
        ArchitectureConfig {
            tasks,
            fields,
            embedding_dim: 5,
            tower_dims: vec![128, 64, 32],
            dropout: vec![0.1, 0.3, 0.3],
            ait_dim: 32,
            share_ait: false,
        }
    }

    /// Tower output dimension.
    pub fn k(&self) -> usize {
        self.tower_dims.last().copied().unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.fields * self.embedding_dim
    }

    /// Every violated constraint, or none.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.tasks == 0 {
            out.push("task count must be >= 1".to_string());
        }
        if self.fields == 0 {
            out.push("field count must be >= 1".to_string());
        }
        if self.embedding_dim == 0 {
            out.push("embedding_dim must be >= 1".to_string());
        }
        if self.tower_dims.is_empty() || self.tower_dims.contains(&0) {
            out.push(format!("tower_dims must be non-empty and positive, got {:?}", self.tower_dims));
        }
        if self.dropout.len() != self.tower_dims.len() {
            out.push(format!(
                "dropout has {} rates for {} tower layers",
                self.dropout.len(),
                self.tower_dims.len()
            ));
        }
        for &r in &self.dropout {
            if validate_rate(r).is_err() {
                out.push(format!("dropout rate {r} outside [0, 1)"));
            }
        }
        if self.ait_dim != self.k() {
            out.push(format!(
                "ait_dim {} must equal the last tower dim {}",
                self.ait_dim,
                self.k()
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct DenseIds {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct AitIds {
    transfer: DenseIds,
    value: DenseIds,
    query: DenseIds,
    key: DenseIds,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embeddings: Vec<ParamId>,
    towers: Vec<Vec<DenseIds>>,
    aits: Vec<AitIds>,
    heads: Vec<DenseIds>,
}

/// Recorded handles of one dense layer.
#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

/// Recorded handles of the value, query and key projections `h1`, `h2`, `h3`.
#[derive(Clone, Copy, Debug)]
pub struct AitVars {
    pub value: DenseVars,
    pub query: DenseVars,
    pub key: DenseVars,
}

/// Handles into the tape produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Per task, an `n x 1` column of end-to-end probabilities.
    pub predictions: Vec<Var>,
    /// Per task tower output `q_t`.
    pub towers: Vec<Var>,
    /// Per task attention output `z_t` (aitm only).
    pub states: Vec<Var>,
    /// Per task `t >= 2`, the weights of the transferred and own inputs.
    pub attention: Vec<(Var, Var)>,
}

/// Inference output for a block of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPredictions {
    /// `rows x tasks`, every entry in (0, 1).
    pub values: Tensor,
    /// `rows x (tasks - 1)` pairs `(w_transfer, w_own)` for aitm models.
    pub attention: Option<Vec<(f64, f64)>>,
}

impl TaskPredictions {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn tasks(&self) -> usize {
        self.values.cols()
    }

    /// Attention pairs of one sample, for tasks `2..=T`.
    pub fn attention_row(&self, r: usize) -> Option<&[(f64, f64)]> {
        let pairs = self.tasks() - 1;
        self.attention.as_ref().map(|a| &a[r * pairs..(r + 1) * pairs])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    variant: ModelVariant,
    config: ArchitectureConfig,
    vocab_size: usize,
    params: ParamStore,
    layout: Layout,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.gen_range(-bound..=bound);
    }
    t
}

impl Model {
    /// Randomly initialised model: weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero, embeddings uniform in `±1/sqrt(d)`.
    pub fn new<R: Rng + ?Sized>(
        variant: ModelVariant,
        config: ArchitectureConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(variant, config, vocab_size, &mut |shape, kind| match kind {
            Init::Embedding(d) => uniform(rng, shape, 1.0 / (d as f64).sqrt()),
            Init::Weight(fan_in) => uniform(rng, shape, 1.0 / (fan_in as f64).sqrt()),
            Init::Bias => Tensor::zeros(shape),
        })
    }

    /// Model with every parameter set to zero.
    pub fn zeros(variant: ModelVariant, config: ArchitectureConfig, vocab_size: usize) -> Result<Self> {
        Self::build(variant, config, vocab_size, &mut |shape, _| Tensor::zeros(shape))
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_named(
        variant: ModelVariant,
        config: ArchitectureConfig,
        vocab_size: usize,
        tensors: impl IntoIterator<Item = (String, Tensor)>,
    ) -> Result<Self> {
        let mut model = Self::zeros(variant, config, vocab_size)?;
        let mut seen = vec![false; model.params.len()];
        for (name, value) in tensors {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| Error::Artifact(format!("unexpected parameter `{name}`")))?;
            model.params.assign(&name, value)?;
            seen[id.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Artifact(format!(
                "missing parameter `{}`",
                model.params.name(ParamId(i))
            )));
        }
        Ok(model)
    }

    fn build(
        variant: ModelVariant,
        config: ArchitectureConfig,
        vocab_size: usize,
        init: &mut dyn FnMut(&[usize], Init) -> Tensor,
    ) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary size must be >= 1".into()));
        }
        let tasks = config.tasks;
        let d = config.embedding_dim;
        let k = config.k();
        let mut params = ParamStore::new();
        let dense = |params: &mut ParamStore,
                         init: &mut dyn FnMut(&[usize], Init) -> Tensor,
                         name: String,
                         fan_in: usize,
                         out: usize| DenseIds {
            weight: params.add(format!("{name}.weight"), init(&[fan_in, out], Init::Weight(fan_in))),
            bias: params.add(format!("{name}.bias"), init(&[out], Init::Bias)),
        };

        let mut embeddings = Vec::new();
        let mut towers = Vec::new();
        let mut aits = Vec::new();
        let mut heads = Vec::new();
        let embedding = |params: &mut ParamStore,
                             init: &mut dyn FnMut(&[usize], Init) -> Tensor,
                             name: String|
         -> ParamId { params.add(name, init(&[vocab_size, d], Init::Embedding(d))) };
        match variant {
            ModelVariant::SingleTask => {
                for t in 1..=tasks {
                    embeddings.push(embedding(&mut params, init, format!("task{t}.embedding")));
                }
            }
            _ => embeddings.push(embedding(&mut params, init, "embedding".to_string())),
        }
        for t in 1..=tasks {
            let mut layers = Vec::new();
            let mut fan_in = config.input_dim();
            for (l, &out) in config.tower_dims.iter().enumerate() {
                layers.push(dense(&mut params, init, format!("task{t}.tower.{l}"), fan_in, out));
                fan_in = out;
            }
            towers.push(layers);
        }
        if variant == ModelVariant::Aitm && tasks > 1 {
            let pairs: Vec<String> = if config.share_ait {
                vec!["ait".to_string()]
            } else {
                (2..=tasks).map(|t| format!("ait{t}")).collect()
            };
            for p in pairs {
                aits.push(AitIds {
                    transfer: dense(&mut params, init, format!("{p}.transfer"), k, k),
                    value: dense(&mut params, init, format!("{p}.value"), k, config.ait_dim),
                    query: dense(&mut params, init, format!("{p}.query"), k, config.ait_dim),
                    key: dense(&mut params, init, format!("{p}.key"), k, config.ait_dim),
                });
            }
        }
        for t in 1..=tasks {
            heads.push(dense(&mut params, init, format!("task{t}.head"), k, 1));
        }
        Ok(Model {
            variant,
            config,
            vocab_size,
            params,
            layout: Layout {
                embeddings,
                towers,
                aits,
                heads,
            },
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn tasks(&self) -> usize {
        self.config.tasks
    }

    /// Number of AIT parameter sets (0 for baselines and `T = 1`).
    pub fn ait_modules(&self) -> usize {
        self.layout.aits.len()
    }

    /// Parameter ids of the attention projections (`h1`, `h2`, `h3`).
    pub fn attention_param_ids(&self) -> Vec<ParamId> {
        self.layout
            .aits
            .iter()
            .flat_map(|a| [a.value, a.query, a.key])
            .flat_map(|d| [d.weight, d.bias])
            .collect()
    }

    fn record_dense(&self, tape: &mut Tape, ids: DenseIds) -> DenseVars {
        DenseVars {
            weight: tape.param(&self.params, ids.weight),
            bias: tape.param(&self.params, ids.bias),
        }
    }

    /// Records the forward pass of a `rows x fields` id block.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        ids: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        let fields = self.config.fields;
        if ids.is_empty() || !ids.len().is_multiple_of(fields) {
            return Err(Error::dim("forward ids", &[ids.len()], &[fields]));
        }
        let rows = ids.len() / fields;
        let tasks = self.config.tasks;

        let shared = match self.variant {
            ModelVariant::SingleTask => None,
            _ => {
                let table = tape.param(&self.params, self.layout.embeddings[0]);
                Some(embed(tape, table, ids, rows)?)
            }
        };

        let mut towers = Vec::with_capacity(tasks);
        for t in 0..tasks {
            let v = match shared {
                Some(v) => v,
                None => {
                    let table = tape.param(&self.params, self.layout.embeddings[t]);
                    embed(tape, table, ids, rows)?
                }
            };
            let layers: Vec<DenseVars> = self.layout.towers[t]
                .iter()
                .map(|&l| self.record_dense(tape, l))
                .collect();
            towers.push(tower_forward(tape, v, &layers, &self.config.dropout, mode, rng)?);
        }

        let mut trace = ForwardTrace {
            predictions: Vec::with_capacity(tasks),
            towers: towers.clone(),
            states: Vec::new(),
            attention: Vec::new(),
        };
        match self.variant {
            ModelVariant::Aitm => {
                let mut z = towers[0];
                trace.states.push(z);
                for t in 1..tasks {
                    let ids = self.layout.aits[if self.config.share_ait { 0 } else { t - 1 }];
                    let g = self.record_dense(tape, ids.transfer);
                    let p = transfer(tape, z, g, Activation::Relu)?;
                    let ait = AitVars {
                        value: self.record_dense(tape, ids.value),
                        query: self.record_dense(tape, ids.query),
                        key: self.record_dense(tape, ids.key),
                    };
                    let (zt, wp, wq) = ait_combine(tape, p, towers[t], &ait)?;
                    trace.states.push(zt);
                    trace.attention.push((wp, wq));
                    z = zt;
                }
                for t in 0..tasks {
                    let head = self.record_dense(tape, self.layout.heads[t]);
                    trace.predictions.push(head_forward(tape, trace.states[t], head)?);
                }
            }
            ModelVariant::SingleTask => {
                for t in 0..tasks {
                    let head = self.record_dense(tape, self.layout.heads[t]);
                    trace.predictions.push(head_forward(tape, towers[t], head)?);
                }
            }
            ModelVariant::ProbTransfer => {
                let mut chain: Option<Var> = None;
                for t in 0..tasks {
                    let head = self.record_dense(tape, self.layout.heads[t]);
                    let c = head_forward(tape, towers[t], head)?;
                    let y = match chain {
                        None => c,
                        Some(prev) => tape.mul(prev, c)?,
                    };
                    trace.predictions.push(y);
                    chain = Some(y);
                }
            }
        }
        Ok(trace)
    }

    /// Inference-mode predictions for a `rows x fields` id block. Work is
    /// split into fixed chunks that may run in parallel; output order
    /// matches input order.
    pub fn predict(&self, ids: &[usize]) -> Result<TaskPredictions> {
        let fields = self.config.fields;
        if ids.is_empty() || !ids.len().is_multiple_of(fields) {
            return Err(Error::dim("predict ids", &[ids.len()], &[fields]));
        }
        let chunks: Vec<&[usize]> = ids.chunks(PREDICT_CHUNK * fields).collect();
        let parts = map_ordered(&chunks, |chunk| self.predict_chunk(chunk));
        let tasks = self.tasks();
        let mut values = Vec::with_capacity(ids.len() / fields * tasks);
        let mut attention = (self.variant == ModelVariant::Aitm).then(Vec::new);
        for part in parts {
            let (v, a) = part?;
            values.extend(v);
            if let (Some(all), Some(a)) = (attention.as_mut(), a) {
                all.extend(a);
            }
        }
        let rows = ids.len() / fields;
        Ok(TaskPredictions {
            values: Tensor::matrix(rows, tasks, values)?,
            attention,
        })
    }

    #[allow(clippy::type_complexity)]
    fn predict_chunk(&self, ids: &[usize]) -> Result<(Vec<f64>, Option<Vec<(f64, f64)>>)> {
        let mut tape = Tape::new();
        // Inference never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(&mut tape, ids, Mode::Inference, &mut rng)?;
        let rows = ids.len() / self.config.fields;
        let tasks = self.tasks();
        let mut values = vec![0.0; rows * tasks];
        for (t, &p) in trace.predictions.iter().enumerate() {
            for (r, &v) in tape.value(p).data().iter().enumerate() {
                values[r * tasks + t] = v;
            }
        }
        let attention = (self.variant == ModelVariant::Aitm).then(|| {
            let mut out = Vec::with_capacity(rows * (tasks - 1));
            for r in 0..rows {
                for &(wp, wq) in &trace.attention {
                    out.push((tape.value(wp).data()[r], tape.value(wq).data()[r]));
                }
            }
            out
        });
        Ok((values, attention))
    }
}

#[derive(Clone, Copy)]
enum Init {
    Embedding(usize),
    Weight(usize),
    Bias,
}

/// Looks up and concatenates the embedding rows of every field:
/// `rows x fields` ids give `rows x (fields * d)`.
pub fn embed(tape: &mut Tape, table: Var, ids: &[usize], rows: usize) -> Result<Var> {
    tape.gather(table, ids.to_vec(), rows)
}

/// ReLU MLP with inverted dropout after every layer.
pub fn tower_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    input: Var,
    layers: &[DenseVars],
    dropout: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if layers.len() != dropout.len() {
        return Err(Error::Config(format!(
            "{} dropout rates for {} layers",
            dropout.len(),
            layers.len()
        )));
    }
    let mut h = input;
    for (layer, &rate) in layers.iter().zip(dropout) {
        h = dense_forward(tape, h, layer.weight, layer.bias, Activation::Relu)?;
        h = dropout_apply(tape, h, DropoutSpec::new(rate, mode)?, rng)?;
    }
    Ok(h)
}

/// Single-layer projection deciding what the previous task passes on.
pub fn transfer(tape: &mut Tape, z_prev: Var, g: DenseVars, activation: Activation) -> Result<Var> {
    dense_forward(tape, z_prev, g.weight, g.bias, activation)
}

/// Attention over the transferred input `p` and the task's own tower
/// output `q`. Returns `(z, w_p, w_q)`, with the weights as `n x 1`
/// columns.
pub fn ait_combine(tape: &mut Tape, p: Var, q: Var, ait: &AitVars) -> Result<(Var, Var, Var)> {
    let k = ait.query.bias_len(tape);
    let inv_sqrt_k = 1.0 / (k as f64).sqrt();
    let logit = |tape: &mut Tape, u: Var| -> Result<Var> {
        let qu = dense_forward(tape, u, ait.query.weight, ait.query.bias, Activation::Relu)?;
        let ku = dense_forward(tape, u, ait.key.weight, ait.key.bias, Activation::Relu)?;
        let dot = tape.row_dot(qu, ku)?;
        tape.scale(dot, inv_sqrt_k)
    };
    let lp = logit(tape, p)?;
    let lq = logit(tape, q)?;
    // Two-way softmax: w_p = e^lp / (e^lp + e^lq) = sigmoid(lp - lq).
    let dp = tape.sub(lp, lq)?;
    let dq = tape.sub(lq, lp)?;
    let wp = tape.sigmoid(dp)?;
    let wq = tape.sigmoid(dq)?;
    let vp = dense_forward(tape, p, ait.value.weight, ait.value.bias, Activation::Relu)?;
    let vq = dense_forward(tape, q, ait.value.weight, ait.value.bias, Activation::Relu)?;
    let a = tape.scale_rows(vp, wp)?;
    let b = tape.scale_rows(vq, wq)?;
    let z = tape.add(a, b)?;
    Ok((z, wp, wq))
}

impl DenseVars {
    fn bias_len(&self, tape: &Tape) -> usize {
        tape.value(self.bias).len()
    }
}

/// Linear projection to one logit followed by the logistic function.
pub fn head_forward(tape: &mut Tape, z: Var, head: DenseVars) -> Result<Var> {
    dense_forward(tape, z, head.weight, head.bias, Activation::Sigmoid)
}
