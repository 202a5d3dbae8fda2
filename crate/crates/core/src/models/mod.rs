//! Baseline and dual-path networks.
//!
//! Both topologies share one layer layout:
//!
//! ```text
//! trunk: [conv3x3 -> relu -> (maxpool, first block only) -> dropout -> batchnorm]+ -> flatten
//! head:  dense -> ... -> dense(classes)          (softmax cross-entropy applied by the caller)
//! ```
//!
//! The dual-path topology feeds the image *and* its gradient form through
//! the same trunk by stacking them along the batch axis, splits the
//! flattened output back into the two halves and adds them before the head.
//! It therefore has exactly the baseline's parameters.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradinput::gradient_transform;
use crate::layers::{BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2x2, Mode, Param, Relu};
use crate::tensor::{add_elementwise, concat_batch, split_batch, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
    /// Synthetic 1×8×8, 10-class set for fast tests.
    Toy,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Mnist,
        DatasetKind::Cifar10,
        DatasetKind::Cifar100,
        DatasetKind::Toy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Toy => "toy",
        }
    }

    /// `(channels, height, width)` of one image.
    pub fn image_dims(self) -> [usize; 3] {
        match self {
            DatasetKind::Mnist => [1, 28, 28],
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => [3, 32, 32],
            DatasetKind::Toy => [1, 8, 8],
        }
    }

    pub fn classes(self) -> usize {
        match self {
            DatasetKind::Cifar100 => 100,
            _ => 10,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            DatasetKind::Mnist => 0,
            DatasetKind::Cifar10 => 1,
            DatasetKind::Cifar100 => 2,
            DatasetKind::Toy => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Parameter(format!("unknown dataset kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    /// Original image only.
    Single,
    /// Image and gradient image through a shared trunk, summed before the head.
    Dual,
}

impl Topology {
    /// Architecture tag used in metrics output.
    pub fn arch_tag(self) -> &'static str {
        match self {
            Topology::Single => "baseline",
            Topology::Dual => "dualpath",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Topology::Single => 0,
            Topology::Dual => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Topology::Single),
            1 => Some(Topology::Dual),
            _ => None,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.arch_tag())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "single" => Ok(Topology::Single),
            "dualpath" | "dual" => Ok(Topology::Dual),
            _ => Err(Error::Parameter(format!("unknown architecture {s:?}"))),
        }
    }
}

/// What the second branch sees. Only `ImageGradient` is used for training;
/// the stubs exist to test the wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchTransform {
    ImageGradient,
    Identity,
    Zero,
}

impl BranchTransform {
    fn apply<T: Scalar>(self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            BranchTransform::ImageGradient => gradient_transform(batch),
            BranchTransform::Identity => Ok(batch.clone()),
            BranchTransform::Zero => Ok(Tensor::zeros_like(batch)),
        }
    }
}

/// Layer-by-layer description of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// `(channels, height, width)`.
    pub input: [usize; 3],
    /// Output channels of each conv block.
    pub conv_channels: Vec<usize>,
    /// Blocks (by index) followed by a 2×2 max pool.
    pub pool_blocks: Vec<usize>,
    pub dropout: f64,
    /// Widths of the dense stack; the last entry is the class count.
    pub dense: Vec<usize>,
}

impl Architecture {
    /// The reference stack for a dataset.
    pub fn for_kind(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::Mnist | DatasetKind::Toy => Architecture {
                input: kind.image_dims(),
                conv_channels: vec![4],
                pool_blocks: vec![0],
                dropout: 0.2,
                dense: vec![64, 10],
            },
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => Architecture {
                input: kind.image_dims(),
                conv_channels: vec![16, 32, 64],
                pool_blocks: vec![0],
                dropout: 0.2,
                dense: vec![128, 128, kind.classes()],
            },
        }
    }

    /// A small MNIST-shaped stack (2 filters, 8×8 input) for gradient checks.
    pub fn tiny() -> Self {
        Architecture {
            input: [1, 8, 8],
            conv_channels: vec![2],
            pool_blocks: vec![0],
            dropout: 0.2,
            dense: vec![8, 3],
        }
    }

    pub fn classes(&self) -> usize {
        *self.dense.last().expect("architecture has a dense stack")
    }
}

/// Everything the model-level backward needs besides the per-layer caches.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T = f32> {
    generation: u64,
    topology: Topology,
    mode: Mode,
    batch: usize,
    /// Input to the head: trunk output (single) or the branch sum (dual).
    features: Tensor<T>,
    /// Flattened trunk outputs for the original and transformed inputs.
    branches: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// The vector handed to the dense head (the ADD output for dual).
    pub fn head_input(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn branch_features(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.branches.as_ref().map(|(a, b)| (a, b))
    }
}

/// One row of [`Network::layer_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub detail: String,
    pub output: Vec<usize>,
    pub params: usize,
}

/// A trunk/head network in either topology.
#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    kind: DatasetKind,
    topology: Topology,
    arch: Architecture,
    trunk: Vec<Layer<T>>,
    head: Vec<Layer<T>>,
    transform: BranchTransform,
    generation: u64,
    awaiting_backward: bool,
}

/// Dropout layers get decorrelated streams derived from the model seed.
fn dropout_seed(seed: u64, block: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(block as u64 + 1)
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes a network. The same `seed` yields the same
    /// weights for either topology.
    pub fn build(arch: &Architecture, kind: DatasetKind, topology: Topology, seed: u64) -> Result<Self> {
        if arch.conv_channels.is_empty() || arch.dense.is_empty() {
            return Err(Error::Parameter("architecture needs conv and dense layers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::new();
        let mut channels = arch.input[0];
        for (block, &out) in arch.conv_channels.iter().enumerate() {
            trunk.push(Layer::Conv2d(Conv2d::new(channels, out, 1, &mut rng)?));
            trunk.push(Layer::Relu(Relu::new()));
            if arch.pool_blocks.contains(&block) {
                trunk.push(Layer::MaxPool2x2(MaxPool2x2::new()));
            }
            trunk.push(Layer::Dropout(Dropout::new(arch.dropout, dropout_seed(seed, block))?));
            trunk.push(Layer::BatchNorm(BatchNorm::new(out)?));
            channels = out;
        }
        trunk.push(Layer::Flatten(Flatten::new()));

        let mut dims = vec![1, arch.input[0], arch.input[1], arch.input[2]];
        for layer in &trunk {
            dims = layer.output_dims(&dims)?;
        }
        let mut width = dims[1];
        let mut head = Vec::new();
        for &out in &arch.dense {
            head.push(Layer::Dense(Dense::new(width, out, &mut rng)?));
            width = out;
        }

        Ok(Network {
            kind,
            topology,
            arch: arch.clone(),
            trunk,
            head,
            transform: BranchTransform::ImageGradient,
            generation: 0,
            awaiting_backward: false,
        })
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn trunk(&self) -> &[Layer<T>] {
        &self.trunk
    }

    pub fn head(&self) -> &[Layer<T>] {
        &self.head
    }

    pub fn trunk_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.trunk
    }

    pub fn head_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.head
    }

    /// Re-tags the same layers (and weights) with another topology.
    pub fn into_topology(mut self, topology: Topology) -> Self {
        self.topology = topology;
        self.awaiting_backward = false;
        self
    }

    pub fn branch_transform(&self) -> BranchTransform {
        self.transform
    }

    pub fn set_branch_transform(&mut self, transform: BranchTransform) {
        self.transform = transform;
    }

    /// Converts the element type, keeping weights and running statistics.
    pub fn cast<U: Scalar>(&self) -> Result<Network<U>> {
        let mut out = Network::<U>::build(&self.arch, self.kind, self.topology, 0)?;
        out.transform = self.transform;
        for (dst, src) in out.layers_mut().zip(self.layers()) {
            for ((_, d), (_, s)) in dst.params_mut().into_iter().zip(src.params()) {
                d.set_value(s.value().cast())?;
            }
            for ((_, d), (_, s)) in dst.buffers_mut().into_iter().zip(src.buffers()) {
                *d = s.cast();
            }
        }
        Ok(out)
    }

    fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.trunk.iter().chain(&self.head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.trunk.iter_mut().chain(self.head.iter_mut())
    }

    /// Sum of trainable element counts. Running statistics are excluded.
    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    /// Trainable tensors with stable names such as `trunk.0.weight`.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (section, layers) in [("trunk", &self.trunk), ("head", &self.head)] {
            for (i, layer) in layers.iter().enumerate() {
                for (name, p) in layer.params() {
                    out.push((format!("{section}.{i}.{name}"), p));
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers_mut()
            .flat_map(|l| l.params_mut().into_iter().map(|(_, p)| p))
            .collect()
    }

    /// Running statistics with stable names such as `trunk.4.running_mean`.
    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (section, layers) in [("trunk", &self.trunk), ("head", &self.head)] {
            for (i, layer) in layers.iter().enumerate() {
                for (name, t) in layer.buffers() {
                    out.push((format!("{section}.{i}.{name}"), t));
                }
            }
        }
        out
    }

    pub(crate) fn named_tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let mut parts = name.splitn(3, '.');
        let (section, idx, field) = (parts.next()?, parts.next()?, parts.next()?);
        let idx: usize = idx.parse().ok()?;
        let layer = match section {
            "trunk" => self.trunk.get_mut(idx)?,
            "head" => self.head.get_mut(idx)?,
            _ => return None,
        };
        if matches!(field, "running_mean" | "running_var") {
            return layer
                .buffers_mut()
                .into_iter()
                .find(|(n, _)| *n == field)
                .map(|(_, t)| t);
        }
        layer
            .params_mut()
            .into_iter()
            .find(|(n, _)| *n == field)
            .map(|(_, p)| p.parts_mut().0)
    }

    pub fn zero_grads(&mut self) {
        self.layers_mut().for_each(Layer::zero_grads);
    }

    /// Rewinds every dropout generator so the next forward replays the same masks.
    pub fn reseed_dropout(&mut self, seed: u64) {
        let mut block = 0;
        for layer in &mut self.trunk {
            if let Layer::Dropout(d) = layer {
                d.reseed(dropout_seed(seed, block));
                block += 1;
            }
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let dims = batch.dims();
        if dims.len() != 4 || dims[1..] != self.arch.input {
            return Err(Error::Dimension(format!(
                "{} network expects [b, {}, {}, {}] input, got {dims:?}",
                self.kind, self.arch.input[0], self.arch.input[1], self.arch.input[2]
            )));
        }
        Ok(dims[0])
    }

    fn run_trunk(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.trunk.iter_mut().try_fold(x, |h, layer| layer.forward(&h, mode))
    }

    /// Runs the network and returns logits `[b, classes]`.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        let b = self.check_batch(batch)?;
        let (features, branches) = match self.topology {
            Topology::Single => (self.run_trunk(batch.clone(), mode)?, None),
            Topology::Dual => {
                let second = self.transform.apply(batch)?;
                let stacked = concat_batch(batch, &second)?;
                let flat = self.run_trunk(stacked, mode)?;
                let (original, transformed) = split_batch(&flat, b)?;
                let sum = add_elementwise(&original, &transformed)?;
                (sum, Some((original, transformed)))
            }
        };
        let logits = self
            .head
            .iter_mut()
            .try_fold(features.clone(), |h, layer| layer.forward(&h, mode))?;

        self.generation += 1;
        self.awaiting_backward = true;
        let trace = ForwardTrace {
            generation: self.generation,
            topology: self.topology,
            mode,
            batch: b,
            features,
            branches,
        };
        Ok((logits, trace))
    }

    /// Backpropagates `loss_grad` (gradient w.r.t. the logits) and accumulates
    /// into every parameter gradient.
    ///
    /// For the dual topology the gradient at the ADD point reaches both
    /// halves unchanged; the shared trunk then receives both contributions
    /// in one pass over the stacked batch.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, loss_grad: &Tensor<T>) -> Result<()> {
        if !self.awaiting_backward || trace.generation != self.generation {
            return Err(Error::State(
                "backward needs the trace of the most recent forward".into(),
            ));
        }
        self.awaiting_backward = false;

        let mut grad = loss_grad.clone();
        for layer in self.head.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        if trace.topology == Topology::Dual {
            grad = concat_batch(&grad, &grad)?;
        }
        for layer in self.trunk.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(())
    }

    /// Per-layer summary with output shapes for a batch of one.
    pub fn layer_table(&self) -> Result<Vec<LayerRow>> {
        let mut rows = Vec::new();
        let mut dims = vec![1, self.arch.input[0], self.arch.input[1], self.arch.input[2]];
        let push = |rows: &mut Vec<LayerRow>, name: String, layer: &Layer<T>, dims: &mut Vec<usize>| -> Result<()> {
            *dims = layer.output_dims(dims)?;
            rows.push(LayerRow {
                name,
                detail: layer.describe(),
                output: dims[1..].to_vec(),
                params: layer.param_count(),
            });
            Ok(())
        };
        let mut counts = std::collections::HashMap::new();
        let mut label = |layer: &Layer<T>| {
            let n = counts.entry(layer.kind()).or_insert(0);
            *n += 1;
            format!("{}_{}", layer.kind().name(), n)
        };
        if self.topology == Topology::Dual {
            rows.push(LayerRow {
                name: "lambda".into(),
                detail: "image gradient (dx + dy), parallel to the original".into(),
                output: dims[1..].to_vec(),
                params: 0,
            });
        }
        for layer in &self.trunk {
            let name = label(layer);
            push(&mut rows, name, layer, &mut dims)?;
        }
        if self.topology == Topology::Dual {
            rows.push(LayerRow {
                name: "add".into(),
                detail: "sum of both branch feature vectors".into(),
                output: dims[1..].to_vec(),
                params: 0,
            });
        }
        for layer in &self.head {
            let name = label(layer);
            push(&mut rows, name, layer, &mut dims)?;
        }
        Ok(rows)
    }
}

/// The single-input reference network for `kind`.
pub fn build_baseline<T: Scalar>(kind: DatasetKind, seed: u64) -> Result<Network<T>> {
    Network::build(&Architecture::for_kind(kind), kind, Topology::Single, seed)
}

/// The dual-input network for `kind`; same layers and weights as
/// [`build_baseline`] with the same seed.
pub fn build_dualpath<T: Scalar>(kind: DatasetKind, seed: u64) -> Result<Network<T>> {
    Network::build(&Architecture::for_kind(kind), kind, Topology::Dual, seed)
}

pub fn build_model<T: Scalar>(kind: DatasetKind, topology: Topology, seed: u64) -> Result<Network<T>> {
    Network::build(&Architecture::for_kind(kind), kind, topology, seed)
}

pub fn param_count<T: Scalar>(network: &Network<T>) -> usize {
    network.param_count()
}
