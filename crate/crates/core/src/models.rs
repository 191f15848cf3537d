//! The three networks of the adversarial game: an encoder mapping inputs to
//! (latent, per-task predictions), a decoder mapping (noise, noisy labels)
//! back to inputs, and a discriminator with one stream per variable that
//! produces a joint score plus per-variable marginal scores.
//!
//! All networks are dense (linear + ReLU) multilayer perceptrons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Declaration of one label task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Classification over `classes` categories; labels are class indices,
    /// fed to networks one-hot or as probability vectors.
    Discrete { classes: usize },
    /// Regression over `dim` dimensions, each in `[-1, 1]`.
    Continuous { dim: usize },
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Discrete { classes } if *classes < 2 => Err(Error::InvalidConfig(format!(
                "discrete task needs at least 2 classes, got {classes}"
            ))),
            TaskSpec::Continuous { dim } if *dim < 1 => Err(Error::InvalidConfig(
                "continuous task needs dimension >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Width of the task's vector encoding (K for discrete, d for continuous).
    pub fn width(&self) -> usize {
        match self {
            TaskSpec::Discrete { classes } => *classes,
            TaskSpec::Continuous { dim } => *dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, TaskSpec::Discrete { .. })
    }
}

/// Layer widths for every network. Values here are plumbing, not claims;
/// defaults target minutes-scale CPU training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShapes {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub disc_stream_hidden: Vec<usize>,
    pub disc_embed_dim: usize,
    pub disc_joint_hidden: Vec<usize>,
}

impl Default for ModelShapes {
    fn default() -> Self {
        ModelShapes {
            input_dim: 16,
            latent_dim: 8,
            encoder_hidden: vec![64],
            decoder_hidden: vec![64],
            disc_stream_hidden: vec![32],
            disc_embed_dim: 16,
            disc_joint_hidden: vec![64],
        }
    }
}

impl ModelShapes {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .encoder_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .chain(&self.disc_stream_hidden)
            .chain(&self.disc_joint_hidden)
            .chain([&self.input_dim, &self.latent_dim, &self.disc_embed_dim]);
        for &w in all {
            if w == 0 {
                return Err(Error::InvalidConfig("zero width in model shapes".into()));
            }
        }
        Ok(())
    }
}

/// Symmetric uniform init with bound `sqrt(6 / (fan_in + fan_out))`.
fn init_weight<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::new(vec![rows, cols], values).expect("sized values")
}

/// One dense layer `x @ W + b`, weight shape `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: Parameter::new(format!("{name}.w"), init_weight(fan_in, fan_out, rng)),
            bias: Parameter::new(format!("{name}.b"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = self.weight.bind(tape);
        let b = self.bias.bind(tape);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }

    /// Zero both weight and bias; used by tests that pin a degenerate head.
    pub fn zero(&mut self) {
        self.weight.value.values_mut().fill(0.0);
        self.bias.value.values_mut().fill(0.0);
    }
}

/// Dense stack with ReLU between layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    relu_after_last: bool,
}

impl Mlp {
    fn new<R: Rng>(name: &str, dims: &[usize], relu_after_last: bool, rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.l{i}"), w[0], w[1], rng))
            .collect();
        Mlp {
            layers,
            relu_after_last,
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last || self.relu_after_last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

/// Encoder output for one batch.
#[derive(Debug, Clone, Copy)]
pub struct EncoderStats {
    pub mu: Var,
    pub logvar: Var,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Latent mean, `(m, latent_dim)`.
    pub mu: Var,
    /// Latent log-variance after clamping, `(m, latent_dim)`.
    pub logvar: Var,
    /// Reparameterized latent sample (equals `mu` in deterministic mode).
    pub latent: Var,
    /// One prediction per task: `(m, K)` softmax rows for discrete tasks,
    /// `(m, d)` tanh values for continuous tasks.
    pub predictions: Vec<Var>,
}

/// Bound on the latent log-variance before exponentiation.
const LOGVAR_CLAMP: f64 = 10.0;

/// Encoder: input batch -> latent statistics + one prediction head per task.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub tasks: Vec<TaskSpec>,
    input_dim: usize,
    trunk: Mlp,
    mu_head: Linear,
    logvar_head: Linear,
    pub task_heads: Vec<Linear>,
}

impl Encoder {
    pub fn new<R: Rng>(shapes: &ModelShapes, tasks: &[TaskSpec], rng: &mut R) -> Result<Self> {
        shapes.validate()?;
        if tasks.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one task".into()));
        }
        for t in tasks {
            t.validate()?;
        }
        let mut dims = vec![shapes.input_dim];
        dims.extend(&shapes.encoder_hidden);
        let feat = *dims.last().unwrap();
        let trunk = Mlp::new("enc.trunk", &dims, true, rng);
        let mu_head = Linear::new("enc.mu", feat, shapes.latent_dim, rng);
        let logvar_head = Linear::new("enc.logvar", feat, shapes.latent_dim, rng);
        let task_heads = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| Linear::new(&format!("enc.task{i}"), feat, t.width(), rng))
            .collect();
        Ok(Encoder {
            tasks: tasks.to_vec(),
            input_dim: shapes.input_dim,
            trunk,
            mu_head,
            logvar_head,
            task_heads,
        })
    }

    /// Forward pass. With `rng: Some`, the latent is a reparameterized draw
    /// from `N(mu, sigma^2 I)`; with `None` it is `mu` exactly (evaluation
    /// and sigma-zero test mode).
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        x: Var,
        rng: Option<&mut R>,
    ) -> Result<EncoderOutput> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "encoder_forward",
                lhs: shape.to_vec(),
                rhs: vec![0, self.input_dim],
            });
        }
        let feat = self.trunk.forward(tape, x)?;
        let mu = self.mu_head.forward(tape, feat)?;
        let lv_raw = self.logvar_head.forward(tape, feat)?;
        let lv = tape.min_scalar(lv_raw, LOGVAR_CLAMP);
        let logvar = tape.max_scalar(lv, -LOGVAR_CLAMP);
        let latent = match rng {
            Some(r) => tape.reparameterize_with(mu, logvar, r)?,
            None => mu,
        };
        let mut predictions = Vec::with_capacity(self.tasks.len());
        for (task, head) in self.tasks.iter().zip(&self.task_heads) {
            let raw = head.forward(tape, feat)?;
            let pred = match task {
                TaskSpec::Discrete { .. } => tape.softmax_last_axis(raw)?,
                TaskSpec::Continuous { .. } => tape.tanh(raw),
            };
            predictions.push(pred);
        }
        Ok(EncoderOutput {
            mu,
            logvar,
            latent,
            predictions,
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut ps = self.trunk.params();
        ps.extend(self.mu_head.params());
        ps.extend(self.logvar_head.params());
        for h in &self.task_heads {
            ps.extend(h.params());
        }
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = self.trunk.params_mut();
        ps.extend(self.mu_head.params_mut());
        ps.extend(self.logvar_head.params_mut());
        for h in &mut self.task_heads {
            ps.extend(h.params_mut());
        }
        ps
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}

/// Decoder: (latent noise, one vector per task) -> reconstructed input.
/// The raw output goes through tanh and is mapped affinely onto
/// `[out_lo, out_hi]`.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub tasks: Vec<TaskSpec>,
    latent_dim: usize,
    net: Mlp,
    out_lo: f64,
    out_hi: f64,
}

impl Decoder {
    pub fn new<R: Rng>(
        shapes: &ModelShapes,
        tasks: &[TaskSpec],
        out_range: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        shapes.validate()?;
        let label_width: usize = tasks.iter().map(TaskSpec::width).sum();
        let mut dims = vec![shapes.latent_dim + label_width];
        dims.extend(&shapes.decoder_hidden);
        dims.push(shapes.input_dim);
        if out_range.0 >= out_range.1 {
            return Err(Error::InvalidConfig(format!(
                "decoder output range [{}, {}] is empty",
                out_range.0, out_range.1
            )));
        }
        Ok(Decoder {
            tasks: tasks.to_vec(),
            latent_dim: shapes.latent_dim,
            net: Mlp::new("dec.net", &dims, false, rng),
            out_lo: out_range.0,
            out_hi: out_range.1,
        })
    }

    /// `labels[i]` must be `(m, width_i)`: one-hot rows for discrete tasks,
    /// values in `[-1, 1]` for continuous tasks.
    pub fn forward(&self, tape: &mut Tape, latent: Var, labels: &[Var]) -> Result<Var> {
        if labels.len() != self.tasks.len() {
            return Err(Error::InvalidInput(format!(
                "decoder got {} label tensors for {} tasks",
                labels.len(),
                self.tasks.len()
            )));
        }
        let ls = tape.shape(latent);
        if ls.len() != 2 || ls[1] != self.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "decoder_forward",
                lhs: ls.to_vec(),
                rhs: vec![0, self.latent_dim],
            });
        }
        for (task, &l) in self.tasks.iter().zip(labels) {
            let s = tape.shape(l);
            if s.len() != 2 || s[1] != task.width() {
                return Err(Error::ShapeMismatch {
                    op: "decoder_forward",
                    lhs: s.to_vec(),
                    rhs: vec![0, task.width()],
                });
            }
        }
        let mut parts = vec![latent];
        parts.extend_from_slice(labels);
        let joined = tape.concat_last_axis(&parts)?;
        let raw = self.net.forward(tape, joined)?;
        let squashed = tape.tanh(raw);
        let scaled = tape.mul_scalar(squashed, (self.out_hi - self.out_lo) / 2.0);
        Ok(tape.add_scalar(scaled, (self.out_hi + self.out_lo) / 2.0))
    }

    pub fn output_layer_mut(&mut self) -> &mut Linear {
        self.net.layers.last_mut().expect("decoder has layers")
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.net.params_mut()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}

/// Discriminator scores for one batch: each field is `(m, 1)`.
#[derive(Debug, Clone)]
pub struct Scores {
    /// Joint score over all input variables.
    pub joint: Var,
    /// Marginal score of the input stream.
    pub x: Var,
    /// Marginal scores of the latent stream (index 0) and of each task
    /// stream (indices 1..=T).
    pub y: Vec<Var>,
}

impl Scores {
    /// Marginal scores in canonical order: x, latent, tasks.
    pub fn marginals(&self) -> Vec<Var> {
        let mut v = vec![self.x];
        v.extend(&self.y);
        v
    }
}

#[derive(Debug, Clone)]
struct Stream {
    net: Mlp,
    score: Linear,
}

impl Stream {
    fn new<R: Rng>(name: &str, input: usize, shapes: &ModelShapes, rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend(&shapes.disc_stream_hidden);
        dims.push(shapes.disc_embed_dim);
        Stream {
            net: Mlp::new(&format!("{name}.net"), &dims, false, rng),
            score: Linear::new(&format!("{name}.score"), shapes.disc_embed_dim, 1, rng),
        }
    }

    /// Returns (embedding, marginal score).
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let emb = self.net.forward(tape, x)?;
        let score = self.score.forward(tape, emb)?;
        Ok((emb, score))
    }

    fn params(&self) -> Vec<&Parameter> {
        let mut ps = self.net.params();
        ps.extend(self.score.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = self.net.params_mut();
        ps.extend(self.score.params_mut());
        ps
    }
}

/// Multi-stream discriminator: one stream per variable (input, latent, each
/// task), a marginal score per stream, and a joint head over the
/// concatenated stream embeddings.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub tasks: Vec<TaskSpec>,
    x_stream: Stream,
    latent_stream: Stream,
    label_streams: Vec<Stream>,
    joint: Mlp,
}

impl Discriminator {
    pub fn new<R: Rng>(shapes: &ModelShapes, tasks: &[TaskSpec], rng: &mut R) -> Result<Self> {
        shapes.validate()?;
        let x_stream = Stream::new("disc.x", shapes.input_dim, shapes, rng);
        let latent_stream = Stream::new("disc.latent", shapes.latent_dim, shapes, rng);
        let label_streams = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| Stream::new(&format!("disc.task{i}"), t.width(), shapes, rng))
            .collect::<Vec<_>>();
        let mut joint_dims = vec![(tasks.len() + 2) * shapes.disc_embed_dim];
        joint_dims.extend(&shapes.disc_joint_hidden);
        joint_dims.push(1);
        let joint = Mlp::new("disc.joint", &joint_dims, false, rng);
        Ok(Discriminator {
            tasks: tasks.to_vec(),
            x_stream,
            latent_stream,
            label_streams,
            joint,
        })
    }

    /// Score one tuple `(x, latent, labels...)`. Label tensors are
    /// probability/tanh vectors on the encoder side and one-hot or raw
    /// vectors on the decoder side; both are `(m, width)`.
    pub fn forward(&self, tape: &mut Tape, x: Var, latent: Var, labels: &[Var]) -> Result<Scores> {
        if labels.len() != self.tasks.len() {
            return Err(Error::InvalidInput(format!(
                "discriminator got {} label tensors for {} tasks",
                labels.len(),
                self.tasks.len()
            )));
        }
        let (x_emb, x_score) = self.x_stream.forward(tape, x)?;
        let (l_emb, l_score) = self.latent_stream.forward(tape, latent)?;
        let mut embs = vec![x_emb, l_emb];
        let mut y_scores = vec![l_score];
        for (stream, &lab) in self.label_streams.iter().zip(labels) {
            let (emb, score) = stream.forward(tape, lab)?;
            embs.push(emb);
            y_scores.push(score);
        }
        let joined = tape.concat_last_axis(&embs)?;
        let joint = self.joint.forward(tape, joined)?;
        Ok(Scores {
            joint,
            x: x_score,
            y: y_scores,
        })
    }

    pub fn joint_head_mut(&mut self) -> &mut Mlp {
        &mut self.joint
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut ps = self.x_stream.params();
        ps.extend(self.latent_stream.params());
        for s in &self.label_streams {
            ps.extend(s.params());
        }
        ps.extend(self.joint.params());
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = self.x_stream.params_mut();
        ps.extend(self.latent_stream.params_mut());
        for s in &mut self.label_streams {
            ps.extend(s.params_mut());
        }
        ps.extend(self.joint.params_mut());
        ps
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}

/// Number of parameters of a dense stack over `dims`, biases included.
pub fn mlp_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

// ── checkpointing ───────────────────────────────────────────────────────

const CHECKPOINT_MAGIC: &str = "distmatch-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// On-disk snapshot of a training run: shapes, every parameter array with
/// its optimizer state, the iteration counter, and the experiment seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub shapes: ModelShapes,
    pub tasks: Vec<TaskSpec>,
    pub decoder_range: (f64, f64),
    pub iteration: u64,
    pub seed: u64,
    pub encoder: Vec<Parameter>,
    pub decoder: Option<Vec<Parameter>>,
    pub discriminator: Option<Vec<Parameter>>,
}

impl Checkpoint {
    pub fn new(
        shapes: ModelShapes,
        tasks: Vec<TaskSpec>,
        decoder_range: (f64, f64),
        iteration: u64,
        seed: u64,
        encoder: &Encoder,
        decoder: Option<&Decoder>,
        discriminator: Option<&Discriminator>,
    ) -> Self {
        Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            shapes,
            tasks,
            decoder_range,
            iteration,
            seed,
            encoder: encoder.params().into_iter().cloned().collect(),
            decoder: decoder.map(|d| d.params().into_iter().cloned().collect()),
            discriminator: discriminator.map(|d| d.params().into_iter().cloned().collect()),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if ckpt.magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!("bad magic {:?}", ckpt.magic),
            });
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.display().to_string(),
                found: ckpt.version.to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            });
        }
        Ok(ckpt)
    }

    /// Rebuild the encoder with the stored parameters.
    pub fn encoder(&self) -> Result<Encoder> {
        let mut rng = crate::rng::stream_rng(self.seed, "checkpoint-rebuild");
        let mut enc = Encoder::new(&self.shapes, &self.tasks, &mut rng)?;
        restore_params(enc.params_mut(), &self.encoder, "encoder")?;
        Ok(enc)
    }

    pub fn decoder(&self) -> Result<Option<Decoder>> {
        let stored = match &self.decoder {
            Some(s) => s,
            None => return Ok(None),
        };
        let mut rng = crate::rng::stream_rng(self.seed, "checkpoint-rebuild");
        let mut dec = Decoder::new(&self.shapes, &self.tasks, self.decoder_range, &mut rng)?;
        restore_params(dec.params_mut(), stored, "decoder")?;
        Ok(Some(dec))
    }

    pub fn discriminator(&self) -> Result<Option<Discriminator>> {
        let stored = match &self.discriminator {
            Some(s) => s,
            None => return Ok(None),
        };
        let mut rng = crate::rng::stream_rng(self.seed, "checkpoint-rebuild");
        let mut disc = Discriminator::new(&self.shapes, &self.tasks, &mut rng)?;
        restore_params(disc.params_mut(), stored, "discriminator")?;
        Ok(Some(disc))
    }
}

fn restore_params(
    targets: Vec<&mut Parameter>,
    stored: &[Parameter],
    what: &str,
) -> Result<()> {
    if targets.len() != stored.len() {
        return Err(Error::InvalidInput(format!(
            "{what}: checkpoint has {} parameters, model expects {}",
            stored.len(),
            targets.len()
        )));
    }
    for (dst, src) in targets.into_iter().zip(stored) {
        if dst.name != src.name || dst.value.shape() != src.value.shape() {
            return Err(Error::InvalidInput(format!(
                "{what}: checkpoint parameter `{}` {:?} does not match model `{}` {:?}",
                src.name,
                src.value.shape(),
                dst.name,
                dst.value.shape()
            )));
        }
        *dst = src.clone();
    }
    Ok(())
}
