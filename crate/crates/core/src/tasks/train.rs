//! Mini-batch training with per-node softmax cross-entropy.
//!
//! The loop is single-threaded; batch order comes from a ChaCha8 stream keyed
//! by the seed, so identical configs give identical loss curves.

use crate::error::{Error, Result};
use crate::grad::softmax_cross_entropy;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

use super::data::Dataset;
use super::model::{Model, ModelConfig};

/// Named stage layouts: one list of kernel latent dims per stage.
pub fn stage_preset(name: &str) -> Option<Vec<Vec<usize>>> {
    Some(match name {
        "pointcloud" => vec![vec![80], vec![40], vec![20], vec![10]],
        "toy-pointcloud" => vec![vec![16], vec![8], vec![4], vec![2]],
        "toy" => vec![vec![8]],
        "toy-mixture" => vec![vec![8, 8, 8]],
        _ => return None,
    })
}

pub const STAGE_PRESETS: [&str; 4] = ["pointcloud", "toy-pointcloud", "toy", "toy-mixture"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn sgd() -> Self {
        Optimizer::Sgd { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd { .. } => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Samples per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub model: ModelConfig,
    /// Held-out accuracy is recorded every this many steps and at the last step.
    pub eval_every: usize,
    /// Rescales the gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            learning_rate: 0.01,
            optimizer: Optimizer::sgd(),
            seed: 0,
            model,
            eval_every: 100,
            clip_norm: Some(5.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("steps, batch size and eval interval must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        let ok = match self.optimizer {
            Optimizer::Sgd { momentum } => (0.0..1.0).contains(&momentum),
            Optimizer::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if !ok || self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("optimizer hyperparameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean batch loss before this step's update.
    pub loss: f64,
    /// Held-out accuracy after the update, on evaluation steps.
    pub eval_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport<T> {
    pub curve: Vec<CurvePoint>,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub model: Model<T>,
}

/// `step,loss,eval_accuracy` rows; the accuracy is empty on non-evaluation steps.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("step,loss,eval_accuracy\n");
    for p in curve {
        s.push_str(&format!("{},{:.10e},", p.step, p.loss));
        if let Some(a) = p.eval_accuracy {
            s.push_str(&format!("{a:.6}"));
        }
        s.push('\n');
    }
    s
}

/// Fraction of nodes, over the whole dataset, whose argmax logit is the target.
pub fn eval<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<f64> {
    if data.channels != model.config.input_channels || data.classes != model.config.classes {
        return Err(Error::Shape {
            op: "eval",
            lhs: (data.channels, data.classes),
            rhs: (model.config.input_channels, model.config.classes),
        });
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in &data.samples {
        let logits = model.logits(&s.features)?;
        correct += softmax_cross_entropy(&logits, &s.targets)?.correct;
        total += s.targets.len();
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

struct OptState {
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

fn apply_update(opt: Optimizer, lr: f64, state: &mut OptState, params: &mut [f64], grad: &[f64]) {
    state.t += 1;
    match opt {
        Optimizer::Sgd { momentum } => {
            for ((p, v), &g) in params.iter_mut().zip(&mut state.first).zip(grad) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            for (((p, m), v), &g) in params.iter_mut().zip(&mut state.first).zip(&mut state.second).zip(grad) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
}

pub fn train<T: Scalar>(config: &TrainConfig, train_set: &Dataset<T>, eval_set: &Dataset<T>) -> Result<TrainReport<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut model = Model::<T>::init(&config.model, config.seed)?;
    let initial_accuracy = eval(&model, eval_set)?;
    let mut params = to_f64(&model.to_flat());
    let mut state = OptState {
        first: vec![0.0; params.len()],
        second: vec![0.0; params.len()],
        t: 0,
    };
    let mut order_rng = SeededRng::stream(config.seed, u64::MAX);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(config.steps);
    let mut final_accuracy = initial_accuracy;
    let inv_batch = T::one() / T::lit(config.batch_size as f64);

    for step in 1..=config.steps {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            let s = &train_set.samples[order[cursor]];
            cursor += 1;
            let trace = model.forward(&s.features)?;
            let ce = softmax_cross_entropy(&trace.logits, &s.targets)?;
            loss += ce.loss.to_f64().unwrap_or(f64::NAN);
            let g = model.backward(&s.features, &trace, &ce.grad.scale(inv_batch))?;
            for (a, b) in grad.iter_mut().zip(g.to_flat()) {
                *a += b.to_f64().unwrap_or(f64::NAN);
            }
        }
        loss /= config.batch_size as f64;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        if let Some(max) = config.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                grad.iter_mut().for_each(|g| *g *= max / norm);
            }
        }
        apply_update(config.optimizer, config.learning_rate, &mut state, &mut params, &grad);
        let cast: Vec<T> = params.iter().map(|&p| T::lit(p)).collect();
        model.set_flat(&cast)?;

        let eval_accuracy = if step % config.eval_every == 0 || step == config.steps {
            final_accuracy = eval(&model, eval_set)?;
            Some(final_accuracy)
        } else {
            None
        };
        curve.push(CurvePoint {
            step,
            loss,
            eval_accuracy,
        });
    }
    Ok(TrainReport {
        curve,
        initial_accuracy,
        final_accuracy,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::LatentKind;
    use crate::tasks::data::{gen_grid_beacon, BeaconSpec, BEACON_BIAS, BEACON_CLASS_OFFSET, BEACON_FLAG};
    use crate::tasks::model::{Block, ModelVariant};
    use crate::affinity::LatentAffinity;
    use crate::tensor::Matrix;

    fn small_beacon() -> (BeaconSpec, Dataset<f64>, Dataset<f64>) {
        let spec = BeaconSpec::new(4, 4, 8, 3);
        let train = gen_grid_beacon(1, &spec, 0..64).unwrap();
        let eval = gen_grid_beacon(1, &spec, 64..96).unwrap();
        (spec, train, eval)
    }

    fn quick_config(variant: ModelVariant) -> TrainConfig {
        let mut mc = ModelConfig::new(8, 3, variant);
        mc.hidden = 8;
        mc.reduced = 4;
        mc.stages = vec![vec![4]];
        let mut c = TrainConfig::new(mc);
        c.steps = 20;
        c.eval_every = 5;
        c.batch_size = 4;
        c
    }

    #[test]
    fn training_is_reproducible() {
        let (_, train_set, eval_set) = small_beacon();
        for v in ModelVariant::ALL {
            let c = quick_config(v);
            let a = train(&c, &train_set, &eval_set).unwrap();
            let b = train(&c, &train_set, &eval_set).unwrap();
            assert_eq!(curve_csv(&a.curve), curve_csv(&b.curve));
            assert_eq!(a.model, b.model);
            assert_eq!(a.curve.len(), 20);
            assert_eq!(a.curve.iter().filter(|p| p.eval_accuracy.is_some()).count(), 4);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let (_, train_set, eval_set) = small_beacon();
        for opt in [Optimizer::sgd(), Optimizer::adam()] {
            let mut c = quick_config(ModelVariant::LatentGnn);
            c.learning_rate = 0.0;
            c.optimizer = opt;
            let r = train(&c, &train_set, &eval_set).unwrap();
            assert_eq!(r.model, Model::init(&c.model, c.seed).unwrap());
            assert_eq!(r.final_accuracy, r.initial_accuracy);
        }
    }

    #[test]
    fn divergence_reports_the_step() {
        let (_, train_set, eval_set) = small_beacon();
        let mut c = quick_config(ModelVariant::LocalOnly);
        c.learning_rate = 1e300;
        c.clip_norm = None;
        c.optimizer = Optimizer::Sgd { momentum: 0.0 };
        match train(&c, &train_set, &eval_set) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (_, train_set, eval_set) = small_beacon();
        let mut c = quick_config(ModelVariant::LocalOnly);
        c.batch_size = 0;
        assert!(train(&c, &train_set, &eval_set).is_err());
        let mut c = quick_config(ModelVariant::LocalOnly);
        c.optimizer = Optimizer::Sgd { momentum: 1.0 };
        assert!(c.validate().is_err());
        let mut c = quick_config(ModelVariant::LocalOnly);
        c.model.input_channels = 9;
        assert!(train(&c, &train_set, &eval_set).is_err());
    }

    /// Latent node 0 listens only to the beacon, latent node 1 to every node,
    /// and `F` moves node 0's content to node 1, so every node receives the
    /// beacon's features.
    fn oracle_model(spec: &BeaconSpec) -> Model<f64> {
        let c = spec.channels;
        let mut mc = ModelConfig::new(c, spec.classes, ModelVariant::LatentGnn);
        mc.hidden = c;
        mc.reduced = c;
        mc.stages = vec![vec![2]];
        mc.latent = LatentKind::Free;
        let mut m = Model::<f64>::init(&mc, 0).unwrap();
        m.embed_w = Matrix::identity(c);
        m.head_w = Matrix::from_fn(c, spec.classes, |i, j| if i == BEACON_CLASS_OFFSET + j { 1.0 } else { 0.0 });
        let Block::Latent(p) = &mut m.blocks[0] else { unreachable!() };
        p.w_in = Matrix::identity(c);
        p.w_msg = Matrix::identity(c);
        p.w_out = Matrix::identity(c);
        p.mixture = vec![1.0];
        p.lambda = 10.0;
        p.kernels[0].psi.theta = Matrix::from_fn(c, 2, |i, j| {
            if (j == 0 && i == BEACON_FLAG) || (j == 1 && i == BEACON_BIAS) { 1.0 } else { 0.0 }
        });
        p.kernels[0].latent = LatentAffinity::Free(Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]));
        m
    }

    #[test]
    fn oracle_weights_are_perfect() {
        let spec = BeaconSpec::new(6, 6, 9, 4);
        let data = gen_grid_beacon(5, &spec, 0..40).unwrap();
        assert_eq!(eval(&oracle_model(&spec), &data).unwrap(), 1.0);
    }

    #[test]
    fn random_weights_are_near_chance() {
        let spec = BeaconSpec::new(8, 8, 8, 4);
        let data = gen_grid_beacon(6, &spec, 0..200).unwrap();
        let mc = ModelConfig::new(8, 4, ModelVariant::LocalOnly);
        // Averaged over seeds, since a single random head can favour one class.
        let mean: f64 = (0..20)
            .map(|s| eval(&Model::<f64>::init(&mc, s).unwrap(), &data).unwrap())
            .sum::<f64>()
            / 20.0;
        assert!((mean - 0.25).abs() < 0.05, "mean accuracy {mean}");
        let m = Model::<f64>::init(&mc, 3).unwrap();
        assert_eq!(eval(&m, &data).unwrap(), eval(&m, &data).unwrap());
    }

    #[test]
    fn presets_exist() {
        for name in STAGE_PRESETS {
            assert!(stage_preset(name).is_some());
        }
        assert_eq!(stage_preset("pointcloud").unwrap().concat(), vec![80, 40, 20, 10]);
        assert!(stage_preset("nope").is_none());
    }

    #[test]
    fn curve_csv_layout() {
        let curve = [
            CurvePoint { step: 1, loss: 1.5, eval_accuracy: None },
            CurvePoint { step: 2, loss: 0.25, eval_accuracy: Some(0.5) },
        ];
        assert_eq!(
            curve_csv(&curve),
            "step,loss,eval_accuracy\n1,1.5000000000e0,\n2,2.5000000000e-1,0.500000\n"
        );
    }
}
