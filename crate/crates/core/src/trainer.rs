//! Mini-batch training.
//!
//! Each epoch shuffles the node set into fixed-size batches. An edge
//! belongs to the batch that owns its source node and a triangle to the
//! batch that owns its lowest-id corner, so every objective term is visited
//! exactly once per epoch. A batch step expands the receptive field of the
//! touched nodes, encodes them on a fresh tape, sums the objective over the
//! batch's edges and triangles, backpropagates, and applies one Adam
//! update. Checkpoints capture all parameters (optionally with optimizer
//! state) so an interrupted run can resume and reproduce the uninterrupted
//! loss trace.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{Edge, NodeId, SignedDigraph};
use crate::losses::{total_loss, LossWeights};
use crate::model::{encode, Activation, Aggregator, ModelConfig, ParameterSet, StagedParams};
use crate::numeric::{adam_step, AdamConfig, AdamState, Tape};
use crate::triads::{training_triangle_set, Triad, TrianglePolicy};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Apply weight decay as a separate decay step instead of folding it
    /// into the gradient.
    pub decoupled_weight_decay: bool,
    /// Seeds the per-epoch batch shuffle (parameter init is seeded by the
    /// model config).
    pub seed: u64,
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub triangle_policy: TrianglePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 500,
            lr: 0.001,
            weight_decay: 0.001,
            decoupled_weight_decay: false,
            seed: 0,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            triangle_policy: TrianglePolicy::Both,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 {
            return Err("epoch count must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err("learning rate must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err("weight decay must be nonnegative".into());
        }
        self.weights.validate()?;
        self.model.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            decoupled: self.decoupled_weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} \
         (sign {sign}, direction {direction}, triangle {triangle})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        sign: f64,
        direction: f64,
        triangle: f64,
    },
    #[error("non-finite parameters entering epoch {epoch}, batch {batch}")]
    NonFiniteParameters { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

/// One batch of the per-epoch plan: the owned nodes plus every edge and
/// triangle charged to them.
#[derive(Clone, Debug)]
pub struct Batch {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
    pub triangles: Vec<Triad>,
}

/// Splits the shuffled node set into ceil(|V| / batch_size) batches and
/// routes each edge to its source's batch and each triangle to its first
/// corner's batch.
pub fn assign_to_batches(
    g: &SignedDigraph,
    triangles: &[Triad],
    batch_size: usize,
    seed: u64,
) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be at least 1");
    let n = g.node_count();
    let mut order: Vec<NodeId> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let batch_count = n.div_ceil(batch_size);
    let mut owner = vec![0usize; n];
    let mut batches: Vec<Batch> = Vec::with_capacity(batch_count);
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        for &u in chunk {
            owner[u] = b;
        }
        batches.push(Batch {
            nodes: chunk.to_vec(),
            edges: Vec::new(),
            triangles: Vec::new(),
        });
    }
    for e in g.edges() {
        batches[owner[e.src]].edges.push(*e);
    }
    for t in triangles {
        batches[owner[t.nodes[0]]].triangles.push(t.clone());
    }
    batches
}

/// Per-epoch batch means of the loss terms, in objective units (direction
/// and triangle are unweighted).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub sign: f64,
    pub direction: f64,
    pub triangle: f64,
    pub total: f64,
}

/// Snapshot handed to training observers just before the optimizer step.
pub struct BatchRecord<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub sign: f64,
    pub direction: f64,
    pub triangle: f64,
    pub total: f64,
    pub nodes: &'a [NodeId],
    pub edges: &'a [Edge],
    pub triangles: &'a [Triad],
    /// Parameter values the loss above was computed from.
    pub params: &'a ParameterSet,
}

pub struct TrainOutcome {
    pub params: ParameterSet,
    pub optimizer: AdamState,
    pub trace: Vec<EpochLoss>,
}

/// Decorrelates epochs: each epoch's shuffle gets its own stream so a
/// resumed run can replay epoch k without iterating through 0..k.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut x = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Runs the given absolute epoch range against existing parameters and
/// optimizer state. `train` wraps this for fresh runs; resuming calls it
/// directly with state from a checkpoint.
pub fn train_epochs(
    g: &SignedDigraph,
    cfg: &TrainConfig,
    params: &mut ParameterSet,
    optimizer: &mut AdamState,
    epochs: Range<usize>,
    mut observer: impl FnMut(&BatchRecord),
) -> Result<Vec<EpochLoss>, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    assert_eq!(
        params.node_count(),
        g.node_count(),
        "parameter table does not match the graph"
    );
    let adam_cfg = cfg.adam();
    let triangles = if cfg.weights.lambda2 > 0.0 {
        training_triangle_set(g, cfg.triangle_policy)
    } else {
        Vec::new()
    };

    let mut trace = Vec::with_capacity(epochs.len());
    let mut tape = Tape::new();
    let mut targets: Vec<NodeId> = Vec::new();
    for epoch in epochs {
        let plan = assign_to_batches(g, &triangles, cfg.batch_size, epoch_seed(cfg.seed, epoch));
        let batch_count = plan.len();
        let mut sums = [0.0f64; 4];
        for (batch_idx, batch) in plan.iter().enumerate() {
            if !params.all_finite() {
                return Err(TrainError::NonFiniteParameters {
                    epoch,
                    batch: batch_idx,
                });
            }
            targets.clear();
            targets.extend_from_slice(&batch.nodes);
            for e in &batch.edges {
                targets.push(e.src);
                targets.push(e.dst);
            }
            for t in &batch.triangles {
                targets.extend_from_slice(&t.nodes);
            }
            targets.sort_unstable();
            targets.dedup();

            tape.clear();
            let staged = StagedParams::stage(&mut tape, params);
            let z = encode(&mut tape, g, &staged, &cfg.model, &targets);
            let loss = total_loss(
                &mut tape,
                staged.status_src_weight,
                staged.status_src_bias,
                staged.status_dst_weight,
                staged.status_dst_bias,
                &cfg.weights,
                &z,
                &batch.edges,
                &batch.triangles,
            );
            let sign = tape.scalar(loss.sign);
            let direction = tape.scalar(loss.direction);
            let triangle = tape.scalar(loss.triangle);
            let total = tape.scalar(loss.total);
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    sign,
                    direction,
                    triangle,
                });
            }
            observer(&BatchRecord {
                epoch,
                batch: batch_idx,
                sign,
                direction,
                triangle,
                total,
                nodes: &batch.nodes,
                edges: &batch.edges,
                triangles: &batch.triangles,
                params,
            });

            let grads = tape.backward(loss.total);
            let grad_slices: Vec<&[f64]> =
                staged.leaves().iter().map(|&leaf| grads.wrt(leaf)).collect();
            let mut tensor_refs = params.tensors_mut();
            adam_step(&mut tensor_refs, &grad_slices, optimizer, &adam_cfg);

            sums[0] += sign;
            sums[1] += direction;
            sums[2] += triangle;
            sums[3] += total;
        }
        let k = batch_count as f64;
        trace.push(EpochLoss {
            epoch,
            sign: sums[0] / k,
            direction: sums[1] / k,
            triangle: sums[2] / k,
            total: sums[3] / k,
        });
    }
    Ok(trace)
}

/// Trains from a fresh initialization for the configured number of epochs.
pub fn train(g: &SignedDigraph, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_observed(g, cfg, |_| {})
}

/// [`train`] with a batch observer, for tools and tests that need to watch
/// individual steps.
pub fn train_observed(
    g: &SignedDigraph,
    cfg: &TrainConfig,
    observer: impl FnMut(&BatchRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if g.node_count() == 0 {
        return Err(TrainError::Config("training graph has no nodes".into()));
    }
    let mut params = ParameterSet::init(&cfg.model, g.node_count());
    let mut optimizer = AdamState::new(&params.tensors());
    let trace = train_epochs(g, cfg, &mut params, &mut optimizer, 0..cfg.epochs, observer)?;
    Ok(TrainOutcome {
        params,
        optimizer,
        trace,
    })
}

/// Writes a loss trace as `epoch,sign,direction,triangle,total` CSV.
pub fn write_loss_trace(mut out: impl Write, trace: &[EpochLoss]) -> io::Result<()> {
    writeln!(out, "epoch,sign,direction,triangle,total")?;
    for row in trace {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.epoch, row.sign, row.direction, row.triangle, row.total
        )?;
    }
    Ok(())
}

pub fn save_loss_trace(path: impl AsRef<Path>, trace: &[EpochLoss]) -> io::Result<()> {
    let file = File::create(path)?;
    write_loss_trace(BufWriter::new(file), trace)
}

/// Optimizer state stored alongside parameters so training can continue
/// where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState {
    pub optimizer: AdamState,
    /// First epoch the resumed run should execute.
    pub next_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParameterSet,
    pub resume: Option<ResumeState>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SDGC";
const CHECKPOINT_VERSION: u32 = 1;

fn config_fingerprint(cfg: &ModelConfig) -> u64 {
    let canonical = format!(
        "dim={};layers={};aggregator={};activation={};leaky_slope={:016x};seed={}",
        cfg.dim,
        cfg.layers,
        cfg.aggregator,
        cfg.activation,
        cfg.leaky_slope.to_bits(),
        cfg.seed
    );
    // FNV-1a.
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in canonical.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

struct CheckpointWriter<W: Write>(W);

impl<W: Write> CheckpointWriter<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }

    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }

    fn f64s(&mut self, vs: &[f64]) -> io::Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }

    fn text(&mut self, s: &str) -> io::Result<()> {
        self.u32(s.len() as u32)?;
        self.0.write_all(s.as_bytes())
    }
}

struct CheckpointReader<R: Read>(R);

impl<R: Read> CheckpointReader<R> {
    fn u8(&mut self) -> io::Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> io::Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64s(&mut self, len: usize) -> io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn text(&mut self) -> Result<String, TrainError> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(TrainError::Checkpoint("unreasonable string length".into()));
        }
        let mut buf = vec![0u8; len];
        self.0.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| TrainError::Checkpoint("name is not utf-8".into()))
    }
}

/// Serializes parameters, the model config that shaped them, and (when
/// given) optimizer state for resuming.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &ModelConfig,
    params: &ParameterSet,
    resume: Option<&ResumeState>,
) -> Result<(), TrainError> {
    let file = File::create(path)?;
    let mut w = CheckpointWriter(BufWriter::new(file));
    w.0.write_all(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.u64(model.dim as u64)?;
    w.u64(model.layers as u64)?;
    w.u8(match model.aggregator {
        Aggregator::Mean => 0,
        Aggregator::Attention => 1,
    })?;
    w.u8(match model.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
        Activation::Identity => 2,
    })?;
    w.f64(model.leaky_slope)?;
    w.u64(model.seed)?;
    w.u64(config_fingerprint(model))?;
    w.u64(params.node_count() as u64)?;

    let tensors = params.tensors();
    let names = params.tensor_names();
    w.u64(tensors.len() as u64)?;
    for (tensor, name) in tensors.iter().zip(&names) {
        w.text(name)?;
        w.u64(tensor.rows() as u64)?;
        w.u64(tensor.cols() as u64)?;
        w.f64s(tensor.data())?;
    }

    match resume {
        None => w.u8(0)?,
        Some(state) => {
            w.u8(1)?;
            w.u64(state.optimizer.step_count())?;
            w.u64(state.next_epoch as u64)?;
            let (m, v) = state.optimizer.moments();
            if m.len() != tensors.len() {
                return Err(TrainError::Checkpoint(
                    "optimizer state does not match the parameter set".into(),
                ));
            }
            for (mi, tensor) in m.iter().zip(&tensors) {
                if mi.len() != tensor.len() {
                    return Err(TrainError::Checkpoint(
                        "optimizer moment length does not match its tensor".into(),
                    ));
                }
                w.f64s(mi)?;
            }
            for vi in v {
                w.f64s(vi)?;
            }
        }
    }
    w.0.flush()?;
    Ok(())
}

/// Reads a checkpoint back; everything needed to continue or export is in
/// the file itself.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    let file = File::open(path)?;
    let mut r = CheckpointReader(BufReader::new(file));
    let mut magic = [0u8; 4];
    r.0.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TrainError::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let dim = r.u64()? as usize;
    let layers = r.u64()? as usize;
    let aggregator = match r.u8()? {
        0 => Aggregator::Mean,
        1 => Aggregator::Attention,
        other => {
            return Err(TrainError::Checkpoint(format!(
                "unknown aggregator code {other}"
            )))
        }
    };
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        2 => Activation::Identity,
        other => {
            return Err(TrainError::Checkpoint(format!(
                "unknown activation code {other}"
            )))
        }
    };
    let leaky_slope = r.f64()?;
    let seed = r.u64()?;
    let model = ModelConfig {
        dim,
        layers,
        aggregator,
        activation,
        leaky_slope,
        seed,
    };
    let stored_fingerprint = r.u64()?;
    if stored_fingerprint != config_fingerprint(&model) {
        return Err(TrainError::Checkpoint(
            "config fingerprint does not match the stored config".into(),
        ));
    }
    model.validate().map_err(TrainError::Checkpoint)?;
    let node_count = r.u64()? as usize;

    // Shape validation: the file must describe exactly the parameter set
    // this config would create.
    let mut params = ParameterSet::init(&model, node_count);
    let names = params.tensor_names();
    let tensor_count = r.u64()? as usize;
    if tensor_count != names.len() {
        return Err(TrainError::Checkpoint(format!(
            "expected {} tensors, found {tensor_count}",
            names.len()
        )));
    }
    let mut lens = Vec::with_capacity(tensor_count);
    for (slot, name) in params.tensors_mut().into_iter().zip(&names) {
        let stored_name = r.text()?;
        if stored_name != *name {
            return Err(TrainError::Checkpoint(format!(
                "expected tensor {name}, found {stored_name}"
            )));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if rows != slot.rows() || cols != slot.cols() {
            return Err(TrainError::Checkpoint(format!(
                "tensor {name}: expected {}x{}, found {rows}x{cols}",
                slot.rows(),
                slot.cols()
            )));
        }
        let data = r.f64s(rows * cols)?;
        lens.push(data.len());
        slot.data_mut().copy_from_slice(&data);
    }

    let resume = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let next_epoch = r.u64()? as usize;
            let mut m = Vec::with_capacity(lens.len());
            for &len in &lens {
                m.push(r.f64s(len)?);
            }
            let mut v = Vec::with_capacity(lens.len());
            for &len in &lens {
                v.push(r.f64s(len)?);
            }
            Some(ResumeState {
                optimizer: AdamState::from_parts(m, v, step),
                next_epoch,
            })
        }
        other => {
            return Err(TrainError::Checkpoint(format!(
                "unknown trailer flag {other}"
            )))
        }
    };
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest)? != 0 {
        return Err(TrainError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        model,
        params,
        resume,
    })
}

/// [`load_checkpoint`] plus a config compatibility gate: dimensions, depth,
/// aggregator and the rest must match what the caller was configured for.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
) -> Result<Checkpoint, TrainError> {
    let checkpoint = load_checkpoint(path)?;
    if checkpoint.model != *expected {
        return Err(TrainError::Checkpoint(format!(
            "checkpoint was built for a different model \
             (stored dim {}, layers {}, {}, {}; expected dim {}, layers {}, {}, {})",
            checkpoint.model.dim,
            checkpoint.model.layers,
            checkpoint.model.aggregator,
            checkpoint.model.activation,
            expected.dim,
            expected.layers,
            expected.aggregator,
            expected.activation,
        )));
    }
    Ok(checkpoint)
}
