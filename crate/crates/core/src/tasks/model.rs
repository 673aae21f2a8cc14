//! Per-node classifier with optional non-local blocks.
//!
//! ```text
//! H₀ = relu(X W_e + b_e)
//! Hₛ = blockₛ(Hₛ₋₁)          (residual; identity map at initialization)
//! logits = H_last W_h + b_h
//! ```
//!
//! With no blocks the model is a one-hidden-layer MLP applied to each node on
//! its own. Base weights (`W_e`, `b_e`, `W_h`, `b_h`) are drawn from the same
//! stream for every variant, so a freshly initialized model with blocks makes
//! exactly the predictions of the local-only model with the same seed.

use std::path::Path;

use crate::affinity::{DenseVariant, LatentKind};
use crate::dense::{dense_forward_trace, DenseNonLocalParams, DenseTrace, DENSE_CAP};
use crate::error::{Error, Result};
use crate::grad::{backward, dense_backward};
use crate::io::{decode_f64, describe_layer, encode_f64, layer_skeleton, read_artifact, write_artifact, Manifest, FORMAT_VERSION};
use crate::layer::{forward_stepwise, init_params, ForwardTrace, InitScheme, KernelSpec, LatentGnnParams, LayerDims};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    LocalOnly,
    LatentGnn,
    DenseNl,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::LocalOnly, ModelVariant::LatentGnn, ModelVariant::DenseNl];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::LocalOnly => "local-only",
            ModelVariant::LatentGnn => "latentgnn",
            ModelVariant::DenseNl => "dense-nl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub hidden: usize,
    pub classes: usize,
    pub variant: ModelVariant,
    /// Bottleneck width of each latent block.
    pub reduced: usize,
    /// Latent dims of every kernel, one list per stage.
    pub stages: Vec<Vec<usize>>,
    pub latent: LatentKind,
    pub dense_variant: DenseVariant,
}

impl ModelConfig {
    pub fn new(input_channels: usize, classes: usize, variant: ModelVariant) -> Self {
        ModelConfig {
            input_channels,
            hidden: 16,
            classes,
            variant,
            reduced: 8,
            stages: vec![vec![8]],
            latent: LatentKind::Free,
            dense_variant: DenseVariant::Lap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.hidden == 0 || self.classes < 2 || self.reduced == 0 {
            return Err(Error::Config("model: channels must be positive and classes >= 2".into()));
        }
        if self.variant != ModelVariant::LocalOnly
            && (self.stages.is_empty() || self.stages.iter().any(|s| s.is_empty() || s.contains(&0)))
        {
            return Err(Error::Config("model: every stage needs at least one positive latent dim".into()));
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        match self.variant {
            ModelVariant::LocalOnly => 0,
            _ => self.stages.len(),
        }
    }

    pub fn layer_dims(&self, stage: usize) -> LayerDims {
        let kernels = self.stages[stage]
            .iter()
            .map(|&d| KernelSpec::new(d, self.latent))
            .collect();
        LayerDims::new(self.hidden, self.reduced, kernels)
    }
}

/// `"8,8;4"` for two stages with kernels `[8, 8]` and `[4]`.
pub fn format_stages(stages: &[Vec<usize>]) -> String {
    stages
        .iter()
        .map(|s| s.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_stages(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .map(|stage| {
            stage
                .split(',')
                .map(|d| {
                    d.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad latent dim `{d}` in `{s}`")))
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block<T> {
    Latent(LatentGnnParams<T>),
    Dense(DenseNonLocalParams<T>),
}

#[derive(Clone, Debug)]
pub enum BlockTrace<T> {
    Latent(ForwardTrace<T>),
    Dense(DenseTrace<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    /// `c x H`.
    pub embed_w: Matrix<T>,
    /// `1 x H`.
    pub embed_b: Matrix<T>,
    pub blocks: Vec<Block<T>>,
    /// `H x K`.
    pub head_w: Matrix<T>,
    /// `1 x K`.
    pub head_b: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct ModelTrace<T> {
    pub embed_pre: Matrix<T>,
    /// Input of every block, then the input of the head.
    pub hidden: Vec<Matrix<T>>,
    pub blocks: Vec<BlockTrace<T>>,
    pub logits: Matrix<T>,
}

fn add_bias<T: Scalar>(m: &mut Matrix<T>, bias: &Matrix<T>) {
    for i in 0..m.rows() {
        for (v, &b) in m.row_mut(i).iter_mut().zip(bias.as_slice()) {
            *v += b;
        }
    }
}

fn column_sums<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

impl<T: Scalar> Model<T> {
    /// Kaiming-uniform weights, zero biases, every block starting at `λ = 0`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (c, h, k) = (config.input_channels, config.hidden, config.classes);
        let mut base = SeededRng::stream(seed, 0);
        let embed_w = InitScheme::KaimingUniform.draw(&mut base, c, h);
        let head_w = InitScheme::KaimingUniform.draw(&mut base, h, k);
        let mut blocks = Vec::with_capacity(config.block_count());
        for s in 0..config.block_count() {
            let mut rng = SeededRng::stream(seed, 1 + s as u64);
            blocks.push(match config.variant {
                ModelVariant::LatentGnn => {
                    Block::Latent(init_params(&mut rng, &config.layer_dims(s), InitScheme::KaimingUniform)?)
                }
                _ => Block::Dense(DenseNonLocalParams {
                    w_msg: InitScheme::KaimingUniform.draw(&mut rng, h, h),
                    variant: config.dense_variant,
                    activation: Activation::Relu,
                    lambda: T::zero(),
                }),
            });
        }
        Ok(Model {
            config: config.clone(),
            embed_w,
            embed_b: Matrix::zeros(1, h),
            blocks,
            head_w,
            head_b: Matrix::zeros(1, k),
        })
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<ModelTrace<T>> {
        if x.cols() != self.embed_w.rows() {
            return Err(Error::Shape {
                op: "model input",
                lhs: x.shape(),
                rhs: self.embed_w.shape(),
            });
        }
        let mut embed_pre = x.matmul(&self.embed_w)?;
        add_bias(&mut embed_pre, &self.embed_b);
        let mut hidden = vec![embed_pre.relu()];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let input = hidden.last().expect("non-empty");
            let (trace, out) = match b {
                Block::Latent(p) => {
                    let t = forward_stepwise(input, p)?;
                    let out = t.output.clone();
                    (BlockTrace::Latent(t), out)
                }
                Block::Dense(p) => {
                    let t = dense_forward_trace(input, p, DENSE_CAP)?;
                    let out = t.output.clone();
                    (BlockTrace::Dense(t), out)
                }
            };
            blocks.push(trace);
            hidden.push(out);
        }
        let mut logits = hidden.last().expect("non-empty").matmul(&self.head_w)?;
        add_bias(&mut logits, &self.head_b);
        Ok(ModelTrace {
            embed_pre,
            hidden,
            blocks,
            logits,
        })
    }

    pub fn logits(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward(x)?.logits)
    }

    /// Gradient of `Σ d_logits ⊙ logits`, in a model of the same shape.
    pub fn backward(&self, x: &Matrix<T>, trace: &ModelTrace<T>, d_logits: &Matrix<T>) -> Result<Model<T>> {
        if d_logits.shape() != trace.logits.shape() || trace.blocks.len() != self.blocks.len() {
            return Err(Error::Shape {
                op: "model backward",
                lhs: d_logits.shape(),
                rhs: trace.logits.shape(),
            });
        }
        let mut g = self.zeros_like();
        let last = trace.hidden.last().expect("non-empty");
        g.head_w = last.matmul_tn(d_logits)?;
        g.head_b = column_sums(d_logits);
        let mut d_h = d_logits.matmul_nt(&self.head_w)?;
        for (s, (b, t)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let input = &trace.hidden[s];
            d_h = match (b, t) {
                (Block::Latent(p), BlockTrace::Latent(t)) => {
                    let gs = backward(input, p, t, &d_h)?;
                    g.blocks[s] = Block::Latent(gs.params);
                    gs.input
                }
                (Block::Dense(p), BlockTrace::Dense(t)) => {
                    let gd = dense_backward(input, p, t, &d_h)?;
                    if let Block::Dense(gp) = &mut g.blocks[s] {
                        gp.w_msg = gd.w_msg;
                        gp.lambda = gd.lambda;
                    }
                    gd.input
                }
                _ => {
                    return Err(Error::Config(format!("block {s} does not match its trace")));
                }
            };
        }
        let d_pre = trace.embed_pre.activation_backward(Activation::Relu, &d_h)?;
        g.embed_w = x.matmul_tn(&d_pre)?;
        g.embed_b = column_sums(&d_pre);
        Ok(g)
    }

    pub fn zeros_like(&self) -> Model<T> {
        let mut g = self.clone();
        let n = g.parameter_count();
        g.set_flat(&vec![T::zero(); n]).expect("same layout");
        g
    }

    /// Named blocks of [`to_flat`](Self::to_flat).
    pub fn segments(&self) -> Vec<(String, usize)> {
        let mut s = vec![
            ("embed_w".to_string(), self.embed_w.len()),
            ("embed_b".to_string(), self.embed_b.len()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                Block::Latent(p) => {
                    s.extend(p.segments().into_iter().map(|(n, l)| (format!("block{i}.{n}"), l)));
                }
                Block::Dense(p) => {
                    s.push((format!("block{i}.w_msg"), p.w_msg.len()));
                    s.push((format!("block{i}.lambda"), 1));
                }
            }
        }
        s.push(("head_w".to_string(), self.head_w.len()));
        s.push(("head_b".to_string(), self.head_b.len()));
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.segments().iter().map(|s| s.1).sum()
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.parameter_count());
        v.extend_from_slice(self.embed_w.as_slice());
        v.extend_from_slice(self.embed_b.as_slice());
        for b in &self.blocks {
            match b {
                Block::Latent(p) => v.extend(p.to_flat()),
                Block::Dense(p) => {
                    v.extend_from_slice(p.w_msg.as_slice());
                    v.push(p.lambda);
                }
            }
        }
        v.extend_from_slice(self.head_w.as_slice());
        v.extend_from_slice(self.head_b.as_slice());
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        let expected = self.parameter_count();
        if flat.len() != expected {
            return Err(Error::BufferLength {
                rows: expected,
                cols: 1,
                len: flat.len(),
            });
        }
        let mut rest = flat;
        let mut take = |m: &mut [T]| {
            let (head, tail) = rest.split_at(m.len());
            m.copy_from_slice(head);
            rest = tail;
        };
        take(self.embed_w.as_mut_slice());
        take(self.embed_b.as_mut_slice());
        for b in &mut self.blocks {
            match b {
                Block::Latent(p) => {
                    let mut buf = vec![T::zero(); p.to_flat().len()];
                    take(&mut buf);
                    p.set_flat(&buf)?;
                }
                Block::Dense(p) => {
                    take(p.w_msg.as_mut_slice());
                    let mut l = [T::zero()];
                    take(&mut l);
                    p.lambda = l[0];
                }
            }
        }
        take(self.head_w.as_mut_slice());
        take(self.head_b.as_mut_slice());
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let c = &self.config;
        let mut m = Manifest::new();
        m.push("format", "latentgnn-model");
        m.push("version", FORMAT_VERSION);
        m.push("variant", c.variant.name());
        m.push("input_channels", c.input_channels);
        m.push("hidden", c.hidden);
        m.push("classes", c.classes);
        m.push("reduced", c.reduced);
        m.push("stages", format_stages(&c.stages));
        m.push("latent", c.latent.name());
        m.push("dense_variant", c.dense_variant.name());
        m.push("blocks", self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let prefix = format!("block{i}.");
            match b {
                Block::Latent(p) => describe_layer(&mut m, &prefix, p),
                Block::Dense(p) => {
                    m.push(format!("{prefix}kind"), "dense");
                    m.push(format!("{prefix}variant"), p.variant.name());
                    m.push(format!("{prefix}activation"), p.activation);
                }
            }
        }
        m.push("params", self.parameter_count());
        m
    }

    /// Writes `<base>.manifest` and `<base>.bin`.
    pub fn save(&self, base: &Path) -> Result<()> {
        write_artifact(base, &self.manifest(), &encode_f64(&self.to_flat()))
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (m, blob) = read_artifact(base)?;
        Self::from_parts(&m, &blob)
    }

    pub fn from_parts(m: &Manifest, blob: &[u8]) -> Result<Self> {
        m.expect("format", "latentgnn-model")?;
        m.expect("version", &FORMAT_VERSION.to_string())?;
        let bad = |key: &str, v: &str| Error::Format(format!("unknown {key} `{v}`"));
        let variant_raw = m.get("variant")?;
        let latent_raw = m.get("latent")?;
        let dense_raw = m.get("dense_variant")?;
        let config = ModelConfig {
            input_channels: m.get_parsed("input_channels")?,
            hidden: m.get_parsed("hidden")?,
            classes: m.get_parsed("classes")?,
            variant: ModelVariant::parse(variant_raw).ok_or_else(|| bad("variant", variant_raw))?,
            reduced: m.get_parsed("reduced")?,
            stages: parse_stages(m.get("stages")?)?,
            latent: LatentKind::parse(latent_raw).ok_or_else(|| bad("latent kind", latent_raw))?,
            dense_variant: DenseVariant::parse(dense_raw).ok_or_else(|| bad("dense variant", dense_raw))?,
        };
        config.validate()?;
        let (c, h, k) = (config.input_channels, config.hidden, config.classes);
        let count: usize = m.get_parsed("blocks")?;
        let mut blocks = Vec::with_capacity(count);
        for i in 0..count {
            let prefix = format!("block{i}.");
            let kind = m.get(&format!("{prefix}kind"))?;
            blocks.push(match kind {
                "latentgnn" => Block::Latent(layer_skeleton(m, &prefix)?),
                "dense" => {
                    let v = m.get(&format!("{prefix}variant"))?;
                    let a = m.get(&format!("{prefix}activation"))?;
                    Block::Dense(DenseNonLocalParams {
                        w_msg: Matrix::zeros(h, h),
                        variant: DenseVariant::parse(v).ok_or_else(|| bad("dense variant", v))?,
                        activation: Activation::parse(a).ok_or_else(|| bad("activation", a))?,
                        lambda: T::zero(),
                    })
                }
                other => return Err(bad("block kind", other)),
            });
        }
        let mut model = Model {
            config,
            embed_w: Matrix::zeros(c, h),
            embed_b: Matrix::zeros(1, h),
            blocks,
            head_w: Matrix::zeros(h, k),
            head_b: Matrix::zeros(1, k),
        };
        let values = decode_f64::<T>(blob)?;
        let expected: usize = m.get_parsed("params")?;
        if values.len() != expected {
            return Err(Error::Format(format!("blob holds {} values, manifest says {expected}", values.len())));
        }
        model.set_flat(&values)?;
        Ok(model)
    }
}
