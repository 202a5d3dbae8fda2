//! Central finite-difference verification of every backward pass.
//!
//! Each check builds a small random `f64` instance, defines a scalar loss,
//! and compares analytic gradients to `(f(θ+ε) - f(θ-ε)) / 2ε` for every
//! input element and every weight. The error of one element is
//! `|a - n| / max(|a| + |n|, floor)`; a check reports the maximum.
//!
//! Layer checks use the loss `Σ R ⊙ layer(x)` with a fixed random `R`.
//! Model checks use softmax cross-entropy on random labels. Dropout masks
//! are replayed across perturbations by reseeding.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    softmax_cross_entropy, BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, LayerKind, MaxPool2x2,
    Mode, Relu,
};
use crate::models::{Architecture, DatasetKind, Network, Topology};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Fault injection: negate the analytic gradients of this layer kind.
    /// Used to confirm the suite can fail.
    pub corrupt: Option<LayerKind>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            eps: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Tensor holding the worst element, e.g. `input` or `trunk.0.weight`.
    pub worst_tensor: String,
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<CheckEntry>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> Vec<&CheckEntry> {
        self.entries
            .iter()
            .filter(|e| e.max_rel_error.is_nan() || e.max_rel_error >= self.tolerance)
            .collect()
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// `Ok(self)` when every check passes, otherwise a [`Error::Check`]
    /// naming the offending tensors.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let msg = self
            .failures()
            .iter()
            .map(|e| format!("{} ({}: {:.3e})", e.name, e.worst_tensor, e.max_rel_error))
            .collect::<Vec<_>>()
            .join(", ");
        Err(Error::Check(msg))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let verdict = if e.max_rel_error < self.tolerance { "ok  " } else { "FAIL" };
            writeln!(
                f,
                "{verdict} {:<24} max rel err {:.3e}  ({} elements, worst in {})",
                e.name, e.max_rel_error, e.elements, e.worst_tensor
            )?;
        }
        Ok(())
    }
}

/// Running maximum of the elementwise relative error.
struct Worst {
    err: f64,
    tensor: String,
    elements: usize,
    floor: f64,
}

impl Worst {
    fn new(floor: f64) -> Self {
        Worst { err: 0.0, tensor: "-".into(), elements: 0, floor }
    }

    fn compare(&mut self, tensor: &str, analytic: &[f64], numeric: &[f64]) {
        for (&a, &n) in analytic.iter().zip(numeric) {
            let err = (a - n).abs() / (a.abs() + n.abs()).max(self.floor);
            // NaN compares false, so treat it explicitly as the worst case
            if err.is_nan() || err > self.err {
                self.err = if err.is_nan() { f64::INFINITY } else { err };
                self.tensor = tensor.to_owned();
            }
        }
        self.elements += analytic.len();
    }

    fn entry(self, name: &str) -> CheckEntry {
        CheckEntry {
            name: name.to_owned(),
            max_rel_error: self.err,
            worst_tensor: self.tensor,
            elements: self.elements,
        }
    }
}

fn random_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("valid dims")
}

/// Central difference of `f` with respect to every element of `values`.
fn numeric_gradient(values: &mut [f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let orig = values[i];
            values[i] = orig + eps;
            let plus = f(values);
            values[i] = orig - eps;
            let minus = f(values);
            values[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

const DROPOUT_REPLAY_SEED: u64 = 17;

fn prepare(layer: &mut Layer<f64>) {
    if let Layer::Dropout(d) = layer {
        d.reseed(DROPOUT_REPLAY_SEED);
    }
}

/// `Σ R ⊙ layer(x)`.
fn weighted_output(layer: &mut Layer<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    prepare(layer);
    let y = layer.forward(x, Mode::Train).expect("forward on a valid shape");
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn check_layer(name: &str, mut layer: Layer<f64>, x: Tensor<f64>, cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<CheckEntry> {
    let out_dims = layer.output_dims(x.dims())?;
    let r = random_tensor(&out_dims, rng);

    prepare(&mut layer);
    layer.zero_grads();
    layer.forward(&x, Mode::Train)?;
    let mut dx = layer.backward(&r)?;
    let mut analytic_params: Vec<(String, Vec<f64>)> = layer
        .params()
        .into_iter()
        .map(|(n, p)| (n.to_owned(), p.grad().data().to_vec()))
        .collect();
    if cfg.corrupt == Some(layer.kind()) {
        dx = dx.scale(-1.0);
        for (_, g) in &mut analytic_params {
            g.iter_mut().for_each(|v| *v = -*v);
        }
    }

    let mut worst = Worst::new(cfg.floor);
    let mut xs = x.data().to_vec();
    let numeric = numeric_gradient(&mut xs, cfg.eps, |v| {
        let xp = Tensor::new(x.dims().to_vec(), v.to_vec()).expect("same dims");
        weighted_output(&mut layer, &xp, &r)
    });
    worst.compare("input", dx.data(), &numeric);

    for (pi, (pname, analytic)) in analytic_params.iter().enumerate() {
        let mut values = layer.params()[pi].1.value().data().to_vec();
        let dims = layer.params()[pi].1.value().dims().to_vec();
        let numeric = numeric_gradient(&mut values, cfg.eps, |v| {
            let t = Tensor::new(dims.clone(), v.to_vec()).expect("same dims");
            layer.params_mut()[pi].1.set_value(t).expect("same shape");
            weighted_output(&mut layer, &x, &r)
        });
        layer.params_mut()[pi].1.set_value(Tensor::new(dims, values)?)?;
        worst.compare(pname, analytic, &numeric);
    }
    Ok(worst.entry(name))
}

fn model_loss(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    net.reseed_dropout(DROPOUT_REPLAY_SEED);
    let (logits, _) = net.forward(x, Mode::Train).expect("forward on a valid batch");
    softmax_cross_entropy(&logits, labels).expect("valid labels").loss
}

fn check_model(topology: Topology, cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<CheckEntry> {
    let arch = Architecture::tiny();
    let mut net = Network::<f64>::build(&arch, DatasetKind::Toy, topology, cfg.seed)?;
    let b = 4;
    let x = Tensor::new(
        [b, arch.input[0], arch.input[1], arch.input[2]],
        (0..b * arch.input.iter().product::<usize>()).map(|_| rng.gen::<f64>()).collect(),
    )?;
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..arch.classes())).collect();

    net.zero_grads();
    net.reseed_dropout(DROPOUT_REPLAY_SEED);
    let (logits, trace) = net.forward(&x, Mode::Train)?;
    let loss = softmax_cross_entropy(&logits, &labels)?;
    net.backward(&trace, &loss.grad)?;

    let mut names = Vec::new();
    let mut analytic = Vec::new();
    for layers in [net.trunk(), net.head()] {
        for layer in layers {
            for (_, p) in layer.params() {
                let mut g = p.grad().data().to_vec();
                if cfg.corrupt == Some(layer.kind()) {
                    g.iter_mut().for_each(|v| *v = -*v);
                }
                analytic.push(g);
            }
        }
    }
    for (name, _) in net.named_params() {
        names.push(name);
    }

    let mut worst = Worst::new(cfg.floor);
    for (pi, name) in names.iter().enumerate() {
        let dims = net.named_params()[pi].1.value().dims().to_vec();
        let mut values = net.named_params()[pi].1.value().data().to_vec();
        let numeric = numeric_gradient(&mut values, cfg.eps, |v| {
            let t = Tensor::new(dims.clone(), v.to_vec()).expect("same dims");
            net.params_mut()[pi].set_value(t).expect("same shape");
            model_loss(&mut net, &x, &labels)
        });
        net.params_mut()[pi].set_value(Tensor::new(dims, values)?)?;
        worst.compare(name, &analytic[pi], &numeric);
    }
    Ok(worst.entry(&format!("model/{}", topology.arch_tag())))
}

fn check_softmax_ce(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<CheckEntry> {
    let (b, k) = (3, 5);
    let logits = random_tensor(&[b, k], rng).scale(3.0);
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
    let analytic = softmax_cross_entropy(&logits, &labels)?.grad;
    let mut values = logits.data().to_vec();
    let numeric = numeric_gradient(&mut values, cfg.eps, |v| {
        let t = Tensor::new([b, k], v.to_vec()).expect("same dims");
        softmax_cross_entropy(&t, &labels).expect("valid labels").loss
    });
    let mut worst = Worst::new(cfg.floor);
    worst.compare("logits", analytic.data(), &numeric);
    Ok(worst.entry("softmax_cross_entropy"))
}

/// Runs every layer-level and model-level check.
///
/// Shapes are drawn at random from the seed, capped at `4×3×6×6`.
pub fn gradcheck_suite(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let b = rng.gen_range(2..=4);
    let c = rng.gen_range(1..=3);
    let side = 2 * rng.gen_range(2..=3); // 4 or 6, even for pooling
    let image = |rng: &mut ChaCha8Rng| random_tensor(&[b, c, side, side], rng);

    let mut entries = Vec::new();

    let cout = rng.gen_range(1..=3);
    let conv = Conv2d::new(c, cout, 1, &mut rng)?;
    let x = image(&mut rng);
    entries.push(check_layer("conv2d", Layer::Conv2d(conv), x, cfg, &mut rng)?);

    let x = image(&mut rng);
    entries.push(check_layer("relu", Layer::Relu(Relu::new()), x, cfg, &mut rng)?);

    let x = image(&mut rng);
    entries.push(check_layer("maxpool2x2", Layer::MaxPool2x2(MaxPool2x2::new()), x, cfg, &mut rng)?);

    let x = image(&mut rng);
    entries.push(check_layer("dropout", Layer::Dropout(Dropout::new(0.2, 0)?), x, cfg, &mut rng)?);

    let mut bn = BatchNorm::new(c)?;
    bn.gamma_mut().set_value(random_tensor(&[c], &mut rng))?;
    bn.beta_mut().set_value(random_tensor(&[c], &mut rng))?;
    let x = image(&mut rng);
    entries.push(check_layer("batchnorm", Layer::BatchNorm(bn), x, cfg, &mut rng)?);

    let features = rng.gen_range(2..=6);
    let mut bn = BatchNorm::new(features)?;
    bn.gamma_mut().set_value(random_tensor(&[features], &mut rng))?;
    let x = random_tensor(&[b, features], &mut rng);
    entries.push(check_layer("batchnorm (dense)", Layer::BatchNorm(bn), x, cfg, &mut rng)?);

    let x = image(&mut rng);
    entries.push(check_layer("flatten", Layer::Flatten(Flatten::new()), x, cfg, &mut rng)?);

    let (fin, fout) = (rng.gen_range(2..=8), rng.gen_range(2..=6));
    let dense = Dense::from_weights(random_tensor(&[fin, fout], &mut rng), random_tensor(&[fout], &mut rng))?;
    let x = random_tensor(&[b, fin], &mut rng);
    entries.push(check_layer("dense", Layer::Dense(dense), x, cfg, &mut rng)?);

    entries.push(check_softmax_ce(cfg, &mut rng)?);
    entries.push(check_model(Topology::Single, cfg, &mut rng)?);
    entries.push(check_model(Topology::Dual, cfg, &mut rng)?);

    Ok(GradcheckReport {
        entries,
        tolerance: cfg.tolerance,
    })
}
