//! The single-step nowcasting model: learned adjacency, graph
//! convolutions, and gated temporal convolutions assembled into one
//! forecaster, with checkpointing and the input-mean reference forecast.
//!
//! The forward pipeline on an input window `[batch, channels, nodes,
//! steps]` is:
//!
//! 1. a 1×1 convolution projects the input channels to `hidden` width;
//! 2. the adjacency is learned from the node embeddings, pruned to the
//!    strongest `top_k` neighbours per row, and row-normalized — once,
//!    shared by every propagation layer and time step;
//! 3. two rounds of gated inception convolution (which shrinks the step
//!    axis) followed by graph propagation (which mixes nodes);
//! 4. a head convolution spanning the whole remaining step axis maps
//!    `hidden` channels to the single predicted frame `[batch, 1, nodes, 1]`.
//!
//! Training and inference run the same arithmetic: the recorded forward
//! and [`NowcastModel::forward_eval`] call identical kernels in identical
//! order, so their outputs match bitwise.

mod train;

pub use train::{train, EpochRecord, TrainingLog};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::augment::AUGMENTED_CHANNELS;
use crate::data::{Normalizer, NowcastDataset};
use crate::error::{CoreError, Result};
use crate::gcn::{gcn_forward, gcn_forward_eval, GcnLayerParams};
use crate::graph::{
    learn_adjacency, learn_adjacency_eval, normalize_adjacency, topk_prune, NodeEmbeddings,
};
use crate::scalar::Scalar;
use crate::temporal::{gated_forward, gated_forward_eval, GatedBlockParams};
use crate::tensor::checkpoint::{read_records, write_records, Record};
use crate::tensor::{kernels, Param, Tape, Tensor, TensorRef};
use crate::verify::Forecaster;

/// Gated-convolution/graph-propagation rounds in the pipeline.
pub const N_BLOCKS: usize = 2;

/// Name of the checkpoint record holding the embedded JSON metadata.
const META_RECORD: &str = "meta.json";

/// Every knob of the forecaster and its training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NowcastConfig {
    /// Input window length in frames.
    pub input_len: usize,
    /// Forecast horizon in frames beyond the last input.
    pub horizon: usize,
    /// Input channels: 1 (raw) or 5 (raw plus smoothed context).
    pub channels: usize,
    /// Width of each node-embedding vector.
    pub embed_dim: usize,
    /// Neighbours kept per row of the learned adjacency.
    pub top_k: usize,
    /// Propagation hops per graph layer.
    pub gcn_depth: usize,
    /// Kernel lengths of every inception branch.
    pub kernel_lengths: Vec<usize>,
    /// Channel width between the input projection and the head.
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Saturation gain of the adjacency learner.
    pub alpha: f64,
    /// Root of all randomness: initialization and batch shuffling.
    pub seed: u64,
}

impl Default for NowcastConfig {
    fn default() -> Self {
        NowcastConfig {
            input_len: 13,
            horizon: 10,
            channels: AUGMENTED_CHANNELS,
            embed_dim: 40,
            top_k: 20,
            gcn_depth: 2,
            kernel_lengths: vec![2, 3, 6, 7],
            hidden: 32,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 32,
            epochs: 15,
            alpha: 3.0,
            seed: 0,
        }
    }
}

impl NowcastConfig {
    /// Step-axis extents through the pipeline: input length, after each
    /// gated block, ending with the head's kernel length.
    pub fn step_extents(&self) -> Result<Vec<usize>> {
        let max_l = *self
            .kernel_lengths
            .iter()
            .max()
            .ok_or_else(|| CoreError::InvalidConfig("no kernel lengths given".into()))?;
        let mut extents = vec![self.input_len];
        let mut s = self.input_len;
        for block in 0..N_BLOCKS {
            if max_l > s {
                return Err(CoreError::InvalidConfig(format!(
                    "input window of {} steps is exhausted before gated block {}: \
                     {s} steps remain but the longest kernel spans {max_l}",
                    self.input_len,
                    block + 1
                )));
            }
            s = s - max_l + 1;
            extents.push(s);
        }
        Ok(extents)
    }

    /// Rejects configurations the pipeline cannot be built from.
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 9] = [
            ("input_len", self.input_len),
            ("horizon", self.horizon),
            ("embed_dim", self.embed_dim),
            ("top_k", self.top_k),
            ("gcn_depth", self.gcn_depth),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("channels", self.channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        if self.channels != 1 && self.channels != AUGMENTED_CHANNELS {
            return Err(CoreError::InvalidConfig(format!(
                "channels must be 1 or {AUGMENTED_CHANNELS}, got {}",
                self.channels
            )));
        }
        if self.kernel_lengths.is_empty() || self.kernel_lengths.contains(&0) {
            return Err(CoreError::InvalidConfig(
                "kernel lengths must be a non-empty list of positive lengths".into(),
            ));
        }
        if !self.hidden.is_multiple_of(self.kernel_lengths.len()) {
            return Err(CoreError::InvalidConfig(format!(
                "hidden width {} must divide evenly into {} inception branches",
                self.hidden,
                self.kernel_lengths.len()
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "weight decay must be finite and non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "alpha must be finite and positive, got {}",
                self.alpha
            )));
        }
        self.step_extents()?;
        Ok(())
    }
}

/// Checkpoint metadata embedded as a JSON record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    config: NowcastConfig,
    n_node: usize,
    norm_min: f64,
    norm_max: f64,
}

/// The assembled forecaster.
#[derive(Debug, Clone)]
pub struct NowcastModel<T: Scalar> {
    pub config: NowcastConfig,
    pub embeddings: NodeEmbeddings<T>,
    pub input_proj_w: Param<T>,
    pub input_proj_b: Param<T>,
    /// Gated temporal block and graph layer of each round, in order.
    pub blocks: Vec<(GatedBlockParams<T>, GcnLayerParams<T>)>,
    pub head_w: Param<T>,
    pub head_b: Param<T>,
    n_node: usize,
}

impl<T: Scalar> NowcastModel<T> {
    /// Builds a freshly initialized model for a grid of `n_node` cells.
    ///
    /// All weights derive from `config.seed` in a fixed draw order
    /// (embeddings, input projection, blocks in sequence, head), so equal
    /// configurations produce bitwise-equal models. Biases start at zero.
    pub fn new(config: NowcastConfig, n_node: usize) -> Result<Self> {
        config.validate()?;
        if n_node == 0 {
            return Err(CoreError::InvalidConfig(
                "model needs at least one grid cell".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embeddings = NodeEmbeddings::new(
            n_node,
            config.embed_dim,
            T::from_f64(config.alpha),
            &mut rng,
        );
        let proj_std = 1.0 / (config.channels as f64).sqrt();
        let input_proj_w = Param::new(
            "input_proj.weight",
            Tensor::randn(&[config.hidden, config.channels, 1, 1], proj_std, &mut rng),
        );
        let input_proj_b = Param::new("input_proj.bias", Tensor::zeros(&[config.hidden]));
        let mut blocks = Vec::with_capacity(N_BLOCKS);
        for i in 0..N_BLOCKS {
            let gated = GatedBlockParams::new(
                &format!("block{}.gated", i + 1),
                &config.kernel_lengths,
                config.hidden,
                config.hidden,
                &mut rng,
            )?;
            let gcn = GcnLayerParams::new(
                &format!("block{}.gcn", i + 1),
                config.gcn_depth,
                config.hidden,
                config.hidden,
                &mut rng,
            );
            blocks.push((gated, gcn));
        }
        let s_rem = *config.step_extents()?.last().expect("validated extents");
        let head_std = 1.0 / ((config.hidden * s_rem) as f64).sqrt();
        let head_w = Param::new(
            "head.weight",
            Tensor::randn(&[1, config.hidden, 1, s_rem], head_std, &mut rng),
        );
        let head_b = Param::new("head.bias", Tensor::zeros(&[1]));
        Ok(NowcastModel {
            config,
            embeddings,
            input_proj_w,
            input_proj_b,
            blocks,
            head_w,
            head_b,
            n_node,
        })
    }

    /// Grid cells the model was built for.
    pub fn n_node(&self) -> usize {
        self.n_node
    }

    /// Every trainable parameter, in the fixed construction order used by
    /// the optimizer and the checkpoint format.
    pub fn params(&self) -> Vec<Param<T>> {
        let mut out = self.embeddings.params();
        out.push(self.input_proj_w.clone());
        out.push(self.input_proj_b.clone());
        for (gated, gcn) in &self.blocks {
            out.extend(gated.params());
            out.extend(gcn.params());
        }
        out.push(self.head_w.clone());
        out.push(self.head_b.clone());
        out
    }

    /// Total scalar parameter count.
    pub fn n_parameters(&self) -> usize {
        self.params().iter().map(Param::numel).sum()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = [self.config.channels, self.n_node, self.config.input_len];
        if shape.len() != 4 || shape[1..] != want {
            return Err(CoreError::ShapeMismatch {
                op: "nowcast_forward",
                lhs: shape.to_vec(),
                rhs: vec![0, want[0], want[1], want[2]],
            });
        }
        Ok(())
    }

    /// Records the forward pass on `tape`; returns the prediction ref of
    /// shape `[batch, 1, nodes, 1]`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Tensor<T>) -> Result<TensorRef> {
        self.check_input(x.shape())?;
        let xr = tape.constant(x);
        let wp = tape.param(&self.input_proj_w);
        let bp = tape.param(&self.input_proj_b);
        let mut h = tape.conv1d(xr, wp)?;
        h = tape.bias_add(h, bp)?;

        let raw = learn_adjacency(tape, &self.embeddings)?;
        let pruned = tape.topk_rows(raw, self.config.top_k)?;
        let a_norm = tape.row_normalize(pruned)?;

        for (gated, gcn) in &self.blocks {
            h = gated_forward(tape, h, gated)?;
            h = gcn_forward(tape, h, a_norm, gcn)?;
        }

        let wh = tape.param(&self.head_w);
        let bh = tape.param(&self.head_b);
        let out = tape.conv1d(h, wh)?;
        tape.bias_add(out, bh)
    }

    /// Tape-free forward pass — the inference path. Calls the same
    /// kernels in the same order as [`NowcastModel::forward`], so outputs
    /// agree bitwise.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut h = conv_bias_eval(x, &self.input_proj_w, &self.input_proj_b)?;

        let raw = learn_adjacency_eval(&self.embeddings);
        let pruned = topk_prune(&raw, self.config.top_k)?;
        let a_norm = normalize_adjacency(&pruned);

        for (gated, gcn) in &self.blocks {
            h = gated_forward_eval(&h, gated)?;
            h = gcn_forward_eval(&h, &a_norm, gcn)?;
        }

        conv_bias_eval(&h, &self.head_w, &self.head_b)
    }

    /// The pruned, normalized adjacency the model currently encodes.
    pub fn current_adjacency(&self) -> Result<Tensor<T>> {
        let raw = learn_adjacency_eval(&self.embeddings);
        let pruned = topk_prune(&raw, self.config.top_k)?;
        Ok(normalize_adjacency(&pruned))
    }

    /// Writes every parameter plus the config, grid size, and
    /// normalization bounds to one checkpoint file.
    pub fn save(&self, path: &Path, normalizer: &Normalizer) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            n_node: self.n_node,
            norm_min: normalizer.min,
            norm_max: normalizer.max,
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| CoreError::Format(format!("checkpoint metadata failed: {e}")))?;
        let mut records = vec![Record::from_bytes(META_RECORD, json.as_bytes())];
        for p in self.params() {
            let t = p.borrow();
            records.push(Record::new(
                p.name(),
                t.shape().to_vec(),
                t.data().iter().map(|v| v.as_f32()).collect(),
            ));
        }
        write_records(path, &records)
    }

    /// Rebuilds a model and its normalization bounds from a checkpoint.
    ///
    /// The stored config is validated, the model is constructed from it,
    /// and every parameter record must match a parameter by name and
    /// shape — no extras, no gaps.
    pub fn load(path: &Path) -> Result<(Self, Normalizer)> {
        let records = read_records(path)?;
        let Some(meta_rec) = records.iter().find(|r| r.name == META_RECORD) else {
            return Err(CoreError::Format(format!(
                "{}: checkpoint lacks the {META_RECORD} record",
                path.display()
            )));
        };
        let bytes = meta_rec.to_bytes()?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes).map_err(|e| {
            CoreError::Format(format!("{}: malformed checkpoint metadata: {e}", path.display()))
        })?;
        if !(meta.norm_min.is_finite() && meta.norm_max.is_finite() && meta.norm_min < meta.norm_max)
        {
            return Err(CoreError::Format(format!(
                "{}: checkpoint normalization bounds [{}, {}] are invalid",
                path.display(),
                meta.norm_min,
                meta.norm_max
            )));
        }
        let model = NowcastModel::new(meta.config, meta.n_node)?;
        let params = model.params();
        let expected = params.len() + 1;
        if records.len() != expected {
            return Err(CoreError::Format(format!(
                "{}: checkpoint holds {} records but the config implies {expected}",
                path.display(),
                records.len()
            )));
        }
        for p in &params {
            let Some(rec) = records.iter().find(|r| r.name == p.name()) else {
                return Err(CoreError::Format(format!(
                    "{}: checkpoint lacks parameter {}",
                    path.display(),
                    p.name()
                )));
            };
            if rec.shape != p.shape() {
                return Err(CoreError::Format(format!(
                    "{}: parameter {} has shape {:?} but the config implies {:?}",
                    path.display(),
                    p.name(),
                    rec.shape,
                    p.shape()
                )));
            }
            let values: Vec<T> = rec.data.iter().map(|&v| T::from_f32(v)).collect();
            p.set_values(&values)?;
        }
        Ok((
            model,
            Normalizer {
                min: meta.norm_min,
                max: meta.norm_max,
            },
        ))
    }
}

/// Valid convolution along the step axis plus a per-channel bias — the
/// tape-free twin of `conv1d` followed by `bias_add`.
fn conv_bias_eval<T: Scalar>(x: &Tensor<T>, w: &Param<T>, bias: &Param<T>) -> Result<Tensor<T>> {
    let (b, c_in, n, s) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let wt = w.borrow();
    let (c_out, l) = (wt.shape()[0], wt.shape()[3]);
    if wt.shape()[1] != c_in || l > s {
        return Err(CoreError::ShapeMismatch {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: wt.shape().to_vec(),
        });
    }
    let s_out = s - l + 1;
    let mut out = vec![T::zero(); b * c_out * n * s_out];
    kernels::conv1d(x.data(), wt.data(), b, c_in, n, s, c_out, l, &mut out);
    let bt = bias.borrow();
    let slab = n * s_out;
    for bi in 0..b {
        for ci in 0..c_out {
            let bv = bt.data()[ci];
            for v in &mut out[(bi * c_out + ci) * slab..(bi * c_out + ci + 1) * slab] {
                *v += bv;
            }
        }
    }
    Tensor::from_vec(vec![b, c_out, n, s_out], out)
}

/// The reference forecast: the mean of channel 0 over the input window,
/// per node. Input `[batch, channels, nodes, steps]`, output
/// `[batch, 1, nodes, 1]`.
pub fn baseline_input_mean<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(CoreError::ShapeMismatch {
            op: "baseline_input_mean",
            lhs: shape.to_vec(),
            rhs: vec![0, 0, 0, 0],
        });
    }
    let (b, c, n, s) = (shape[0], shape[1], shape[2], shape[3]);
    let inv = T::one() / T::from_usize(s);
    let mut out = vec![T::zero(); b * n];
    for bi in 0..b {
        for ni in 0..n {
            let row = &x.data()[((bi * c) * n + ni) * s..][..s];
            let mut acc = T::zero();
            for &v in row {
                acc += v;
            }
            out[bi * n + ni] = acc * inv;
        }
    }
    Tensor::from_vec(vec![b, 1, n, 1], out)
}

/// Adapter that lets a model serve as a [`Forecaster`] for evaluation.
pub struct ModelForecaster<'a, T: Scalar> {
    pub model: &'a NowcastModel<T>,
}

impl<T: Scalar> Forecaster for ModelForecaster<'_, T> {
    fn predict(&mut self, ds: &NowcastDataset, samples: &[usize]) -> Result<Vec<f32>> {
        if ds.channels() != self.model.config.channels
            || ds.n_node() != self.model.n_node
            || ds.input_len != self.model.config.input_len
        {
            return Err(CoreError::InvalidConfig(format!(
                "dataset ({} channels, {} nodes, {} steps) does not fit the model \
                 ({} channels, {} nodes, {} steps)",
                ds.channels(),
                ds.n_node(),
                ds.input_len,
                self.model.config.channels,
                self.model.n_node,
                self.model.config.input_len
            )));
        }
        let (x, _) = ds.batch::<T>(samples)?;
        let pred = self.model.forward_eval(&x)?;
        Ok(pred.data().iter().map(|v| v.as_f32()).collect())
    }
}
