//! Optimizer, training/evaluation loops and the two-arm experiment runner.

mod gradcheck;
mod metrics;

pub use gradcheck::{gradcheck_suite, CheckEntry, GradcheckConfig, GradcheckReport};
pub use metrics::{metrics_csv, write_metrics_csv, MetricsRow, CSV_HEADER};

use std::time::Instant;

use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::layers::{argmax_rows, softmax_cross_entropy, Mode, Param};
use crate::models::{build_model, DatasetKind, Network, Topology};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub topology: Topology,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Cap on the number of training samples (first `n`).
    pub subset: Option<usize>,
    pub precision: Precision,
    /// When false, `wall_time_s` is written as zero so metrics files are
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetKind::Mnist,
            topology: Topology::Dual,
            epochs: 5,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 1,
            subset: None,
            precision: Precision::F32,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.subset == Some(0) {
            return Err(Error::Parameter("subset must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-epoch shuffle seed, shared by both arms of an experiment.
    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed
            .wrapping_mul(0x2545_F491_4F6C_DD1D)
            .wrapping_add(epoch as u64)
    }
}

/// One SGD-with-momentum update: `v = momentum·v + g; w -= lr·v`, then `g = 0`.
pub fn sgd_step<T: Scalar>(param: &mut Param<T>, velocity: &mut Tensor<T>, lr: T, momentum: T) -> Result<()> {
    let (w, g) = param.parts_mut();
    if velocity.shape() != w.shape() {
        return Err(Error::Dimension(format!(
            "velocity {:?} does not match parameter {:?}",
            velocity.dims(),
            w.dims()
        )));
    }
    for ((w, g), v) in w.data_mut().iter_mut().zip(g.data_mut()).zip(velocity.data_mut()) {
        *v = momentum * *v + *g;
        *w -= lr * *v;
        *g = T::zero();
    }
    Ok(())
}

/// Momentum SGD over every trainable tensor of a network.
#[derive(Debug, Clone)]
pub struct Sgd<T = f32> {
    lr: T,
    momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(network: &Network<T>, lr: f64, momentum: f64) -> Self {
        let velocity = network
            .named_params()
            .into_iter()
            .map(|(_, p)| Tensor::zeros_like(p.value()))
            .collect();
        Sgd {
            lr: T::of(lr),
            momentum: T::of(momentum),
            velocity,
        }
    }

    pub fn step(&mut self, network: &mut Network<T>) -> Result<()> {
        let params = network.params_mut();
        if params.len() != self.velocity.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, network has {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (p, v) in params.into_iter().zip(&mut self.velocity) {
            sgd_step(p, v, self.lr, self.momentum)?;
        }
        Ok(())
    }
}

/// Mean loss and accuracy over a pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Batch plan for training; a trailing single-sample batch is merged into
/// its predecessor because batchnorm needs two samples in train mode.
fn training_plan(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut plan = batch_indices(n, batch_size, seed, true)?;
    if plan.len() > 1 && plan.last().is_some_and(|b| b.len() == 1) {
        let last = plan.pop().expect("non-empty plan");
        plan.last_mut().expect("two batches").extend(last);
    }
    Ok(plan)
}

/// One shuffled pass of forward, loss, backward and SGD step.
pub fn train_epoch<T: Scalar>(
    network: &mut Network<T>,
    optimizer: &mut Sgd<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let plan = training_plan(dataset.len(), config.batch_size, config.epoch_seed(epoch))?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (index, idx) in plan.iter().enumerate() {
        let batch = dataset.gather(idx)?;
        let images = batch.images.cast::<T>();
        let (logits, trace) = network.forward(&images, Mode::Train)?;
        let loss = softmax_cross_entropy(&logits, &batch.labels)?;
        let value = loss.loss.to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, batch: index });
        }
        network.backward(&trace, &loss.grad)?;
        optimizer.step(network)?;

        loss_sum += value * batch.len() as f64;
        correct += argmax_rows(&logits)?
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(EpochStats {
        loss: loss_sum / dataset.len() as f64,
        accuracy: correct as f64 / dataset.len() as f64,
    })
}

const EVAL_BATCH: usize = 256;

/// Loss and accuracy in eval mode, unshuffled.
pub fn evaluate<T: Scalar>(network: &mut Network<T>, dataset: &Dataset) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for idx in batch_indices(dataset.len(), EVAL_BATCH, 0, false)? {
        let batch = dataset.gather(&idx)?;
        let (logits, _) = network.forward(&batch.images.cast::<T>(), Mode::Eval)?;
        loss_sum += softmax_cross_entropy(&logits, &batch.labels)?.loss.to_f64_lossy() * batch.len() as f64;
        correct += argmax_rows(&logits)?
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(EpochStats {
        loss: loss_sum / dataset.len() as f64,
        accuracy: correct as f64 / dataset.len() as f64,
    })
}

fn check_dataset(config: &TrainConfig, data: &Dataset) -> Result<()> {
    if data.kind() != config.dataset {
        return Err(Error::Parameter(format!(
            "config is for {} but dataset is {}",
            config.dataset,
            data.kind()
        )));
    }
    Ok(())
}

fn run_arm_typed<T: Scalar>(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<Vec<MetricsRow>> {
    let mut network = build_model::<T>(config.dataset, config.topology, config.seed)?;
    let mut optimizer = Sgd::new(&network, config.learning_rate, config.momentum);
    let start = Instant::now();
    let mut rows = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let tr = train_epoch(&mut network, &mut optimizer, train, config, epoch)?;
        let te = evaluate(&mut network, test)?;
        if !te.loss.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0 });
        }
        rows.push(MetricsRow {
            epoch,
            arch: config.topology,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            test_loss: te.loss,
            test_acc: te.accuracy,
            wall_time_s: if config.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(rows)
}

/// Trains one architecture and returns a metrics row per epoch.
pub fn run_arm(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    check_dataset(config, train)?;
    check_dataset(config, test)?;
    let train = match config.subset {
        Some(n) => train.take(n)?,
        None => train.clone(),
    };
    match config.precision {
        Precision::F32 => run_arm_typed::<f32>(config, &train, test),
        Precision::F64 => run_arm_typed::<f64>(config, &train, test),
    }
}

/// Metrics for both arms of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// Ordered by epoch, baseline before dual-path within an epoch.
    pub rows: Vec<MetricsRow>,
}

impl Experiment {
    fn final_test_acc(&self, topology: Topology) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.arch == topology).map(|r| r.test_acc)
    }

    pub fn final_baseline_acc(&self) -> f64 {
        self.final_test_acc(Topology::Single).unwrap_or(f64::NAN)
    }

    pub fn final_dualpath_acc(&self) -> f64 {
        self.final_test_acc(Topology::Dual).unwrap_or(f64::NAN)
    }

    /// Final-epoch test accuracy of dual-path minus baseline.
    pub fn accuracy_delta(&self) -> f64 {
        self.final_dualpath_acc() - self.final_baseline_acc()
    }

    pub fn to_csv(&self) -> String {
        metrics_csv(&self.rows)
    }
}

/// Trains the baseline and the dual-path network from identical initial
/// weights and identical data order. `config.topology` is ignored.
///
/// The arms run on two threads; each is internally sequential, so results
/// do not depend on scheduling.
pub fn run_experiment(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<Experiment> {
    let arm = |topology| TrainConfig {
        topology,
        ..config.clone()
    };
    let (single, dual) = std::thread::scope(|s| {
        let single = s.spawn(|| run_arm(&arm(Topology::Single), train, test));
        let dual = run_arm(&arm(Topology::Dual), train, test);
        (single.join().expect("baseline arm panicked"), dual)
    });
    let (single, dual) = (single?, dual?);
    let rows = single
        .into_iter()
        .zip(dual)
        .flat_map(|(a, b)| [a, b])
        .collect();
    Ok(Experiment { rows })
}
