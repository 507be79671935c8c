//! Image to per-joint score maps: feature extractor, unary maps, message
//! passing among feature groups, per-joint classifier heads, softmax loss
//! and SGD training.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_loopy, plan_flooding, plan_serial_route, to_factor_graph, with_extra_edges, FactorGraph, GraphSpec,
    JointGraph, Schedule, ScheduleKind, VertexKind, LOOPY_DEFAULT_FRACTION, LOOPY_DEFAULT_RADIUS,
};
use crate::message::{run_schedule, PairwiseKernels, Tau, Trace};
use crate::ops;
use crate::params::{clip_global_norm, BoundParams, KernelVars, ModelParams, ParamGrads, Sgd};
use crate::skeleton;
use crate::synth::{self, FigureSample, PckReport, PcpReport};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Output channels of each conv + ReLU layer.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Average-pool window (and stride) applied once.
    pub pool: usize,
    /// Number of conv layers before the pooling stage.
    pub pool_after: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig { channels: vec![8, 16, 16], kernel: 3, pool: 4, pool_after: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauKind {
    ScaledSoftmax,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub graph: GraphSpec,
    pub image_channels: usize,
    pub extractor: ExtractorConfig,
    /// `L`, channels per feature group.
    pub group_channels: usize,
    pub schedule: ScheduleKind,
    /// Serial passes or flooding rounds.
    pub iterations: usize,
    pub tau: TauKind,
    pub alpha: f64,
    /// Defaults to `group_channels`.
    pub beta: Option<f64>,
    pub pairwise_kernel: usize,
    /// One pairwise kernel set reused by every iteration.
    pub share_weights: bool,
    /// Edges added to the tree, by vertex name.
    pub extra_edges: Vec<(String, String)>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            graph: GraphSpec::skeleton14(),
            image_channels: 1,
            extractor: ExtractorConfig::default(),
            group_channels: 4,
            schedule: ScheduleKind::Serial,
            iterations: 1,
            tau: TauKind::ScaledSoftmax,
            alpha: 0.5,
            beta: None,
            pairwise_kernel: 5,
            share_weights: true,
            extra_edges: Vec::new(),
        }
    }
}

/// Loopy-graph construction from training-set joint distances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopySpec {
    pub fraction: f64,
    pub radius: f64,
}

impl Default for LoopySpec {
    fn default() -> Self {
        LoopySpec { fraction: LOOPY_DEFAULT_FRACTION, radius: LOOPY_DEFAULT_RADIUS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Global gradient-norm cap per step; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.05, epochs: 10, batch_size: 8, momentum: 0.9, clip_norm: Some(CLIP_NORM), seed: 0 }
    }
}

pub const CLIP_NORM: f64 = 1.0;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip_norm {c} must be positive and finite")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Adds the loopy edges chosen from `samples` to `config.extra_edges`.
pub fn resolve_loopy(config: &mut ModelConfig, samples: &[FigureSample], loopy: LoopySpec) -> Result<()> {
    let base = config.graph.build()?;
    let d = synth::pairwise_distance_stats(samples, &base)?;
    let g = build_loopy(&base, &d, loopy.fraction, loopy.radius)?;
    for &(a, b) in g.edges_h() {
        if !base.has_edge(a, b) {
            let pair = (base.name(a).to_string(), base.name(b).to_string());
            if !config.extra_edges.contains(&pair) {
                config.extra_edges.push(pair);
            }
        }
    }
    Ok(())
}

/// One predicted joint in image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// A configured network. Stateless: parameters live in [`ModelParams`].
#[derive(Clone, Debug)]
pub struct PoseModel {
    config: ModelConfig,
    graph: JointGraph,
    fg: FactorGraph,
    schedule: Schedule,
    tau: Tau,
}

fn pair_key(graph: &JointGraph, m: Option<usize>, from: usize, to: usize) -> String {
    match m {
        Some(m) => format!("pair/{m}/{}->{}", graph.name(from), graph.name(to)),
        None => format!("pair/{}->{}", graph.name(from), graph.name(to)),
    }
}

impl PoseModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let c = &config;
        let e = &c.extractor;
        if c.image_channels == 0 || c.group_channels == 0 || e.channels.is_empty() || e.channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if e.pool == 0 || e.pool_after > e.channels.len() {
            return Err(Error::Config("pool must be positive and pool_after at most the layer count".into()));
        }
        if e.kernel.is_multiple_of(2) || c.pairwise_kernel.is_multiple_of(2) {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if c.iterations == 0 {
            return Err(Error::ZeroIterations);
        }
        if !(c.alpha.is_finite() && c.beta.is_none_or(|b| b.is_finite() && b > 0.0)) {
            return Err(Error::Config("alpha must be finite and beta positive".into()));
        }
        let base = c.graph.build()?;
        let extra = c
            .extra_edges
            .iter()
            .map(|(a, b)| {
                let find = |n: &str| base.index_of(n).ok_or_else(|| Error::Graph(format!("unknown vertex {n:?}")));
                Ok((find(a)?, find(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let graph = with_extra_edges(&base, &extra)?;
        let fg = to_factor_graph(&graph);
        let schedule = match c.schedule {
            ScheduleKind::Serial => plan_serial_route(&fg, c.graph.root_index()?)
                .map_err(|e| Error::IncompatibleSchedule(format!("serial route: {e}")))?
                .with_iterations(c.iterations)?,
            ScheduleKind::Flooding => plan_flooding(&fg, c.iterations)?,
        };
        let tau = match c.tau {
            TauKind::ScaledSoftmax => Tau::ScaledSoftmax { alpha: c.alpha, beta: c.beta.unwrap_or(c.group_channels as f64) },
            TauKind::Relu => Tau::Relu,
        };
        Ok(PoseModel { config, graph, fg, schedule, tau })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &JointGraph {
        &self.graph
    }

    pub fn factor_graph(&self) -> &FactorGraph {
        &self.fg
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn tau(&self) -> Tau {
        self.tau
    }

    pub fn stride(&self) -> usize {
        self.config.extractor.pool
    }

    /// Parameter names and shapes, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let e = &c.extractor;
        let mut out = Vec::new();
        let mut c_in = c.image_channels;
        for (i, &c_out) in e.channels.iter().enumerate() {
            out.push((format!("feat/conv{i}/w"), vec![c_out, c_in, e.kernel, e.kernel]));
            out.push((format!("feat/conv{i}/b"), vec![c_out]));
            c_in = c_out;
        }
        let l = c.group_channels;
        for v in 0..self.graph.len() {
            out.push((format!("unary/{}/w", self.graph.name(v)), vec![l, c_in, 1, 1]));
            out.push((format!("unary/{}/b", self.graph.name(v)), vec![l]));
        }
        let sets: Vec<Option<usize>> = if c.share_weights { vec![None] } else { (0..c.iterations).map(Some).collect() };
        for m in sets {
            for &(a, b) in self.graph.edges_h() {
                for (s, d) in [(a, b), (b, a)] {
                    let k = c.pairwise_kernel;
                    out.push((format!("{}/w", pair_key(&self.graph, m, s, d)), vec![l, l, k, k]));
                }
            }
        }
        for v in 0..self.graph.len() {
            out.push((format!("head/{}/w", self.graph.name(v)), vec![1, l, 1, 1]));
            out.push((format!("head/{}/b", self.graph.name(v)), vec![1]));
        }
        out
    }

    /// Weights uniform in `[-s, s]` with `s = 1/sqrt(fan_in)`; biases zero.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        for (name, dims) in self.param_shapes() {
            let t = if dims.len() == 1 {
                Tensor::zeros(&dims)
            } else {
                let s = 1.0 / ((dims[1] * dims[2] * dims[3]) as f64).sqrt();
                Tensor::from_fn(&dims, |_| rng.gen_range(-s..=s))
            };
            p.insert(name, t);
        }
        p
    }

    /// Every expected parameter is present with the right shape, and nothing else.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let shapes = self.param_shapes();
        for (name, dims) in &shapes {
            match params.get(name) {
                Some(t) if t.dims() == dims.as_slice() => {}
                Some(t) => return Err(Error::Incompatible(format!("{name}: shape {:?}, model expects {dims:?}", t.dims()))),
                None => return Err(Error::Incompatible(format!("missing parameter {name}"))),
            }
        }
        if params.len() != shapes.len() {
            let extra = params.names().find(|n| !shapes.iter().any(|(s, _)| s == *n)).cloned().unwrap_or_default();
            return Err(Error::Incompatible(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let (c, h, w) = image.chw()?;
        let s = self.stride();
        if c != self.config.image_channels {
            return Err(Error::Shape(format!("image has {c} channels, model expects {}", self.config.image_channels)));
        }
        if h % s != 0 || w % s != 0 {
            return Err(Error::Shape(format!("image {h}x{w} not divisible by stride {s}")));
        }
        Ok(())
    }

    /// Features `f` of an image.
    pub fn features(&self, tape: &mut Tape, p: &BoundParams, image: Var) -> Result<Var> {
        self.check_image(tape.value(image))?;
        let e = &self.config.extractor;
        let mut x = image;
        for i in 0..e.channels.len() {
            if i == e.pool_after {
                x = tape.avg_pool(x, e.pool)?;
            }
            let k = p.kernel(&format!("feat/conv{i}"))?;
            x = tape.conv2d(x, k.w, k.b)?;
            x = tape.relu(x)?;
        }
        if e.pool_after == e.channels.len() {
            x = tape.avg_pool(x, e.pool)?;
        }
        Ok(x)
    }

    fn pairwise(&self, p: &BoundParams) -> Result<PairwiseKernels> {
        let set = |m: Option<usize>| -> Result<HashMap<(usize, usize), KernelVars>> {
            let mut map = HashMap::new();
            for &(a, b) in self.graph.edges_h() {
                for (s, d) in [(a, b), (b, a)] {
                    map.insert((s, d), p.kernel(&pair_key(&self.graph, m, s, d))?);
                }
            }
            Ok(map)
        };
        if self.config.share_weights {
            Ok(PairwiseKernels::shared(set(None)?))
        } else {
            Ok(PairwiseKernels::unshared((0..self.config.iterations).map(|m| set(Some(m))).collect::<Result<_>>()?))
        }
    }

    /// Beliefs `Q(h_i)` for every vertex after message passing.
    pub fn beliefs(&self, tape: &mut Tape, p: &BoundParams, image: Var, trace: Option<&mut Trace>) -> Result<Vec<Var>> {
        let f = self.features(tape, p, image)?;
        let unary = (0..self.graph.len())
            .map(|v| p.kernel(&format!("unary/{}", self.graph.name(v))))
            .collect::<Result<Vec<_>>>()?;
        let kernels = self.pairwise(p)?;
        run_schedule(tape, f, &self.fg, &self.schedule, &kernels, &unary, self.tau, trace, self.graph.names())
    }

    /// Score logits `w_i^T h_i` per vertex, each `[1, H/stride, W/stride]`.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, image: Var, trace: Option<&mut Trace>) -> Result<Vec<Var>> {
        let q = self.beliefs(tape, p, image, trace)?;
        q.iter()
            .enumerate()
            .map(|(v, &h)| {
                let k = p.kernel(&format!("head/{}", self.graph.name(v)))?;
                tape.conv2d(h, k.w, k.b)
            })
            .collect()
    }

    /// Logit maps without recording gradients.
    pub fn infer(&self, params: &ModelParams, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let p = params.bind_constant(&mut tape);
        let x = tape.constant(image.clone());
        let logits = self.forward(&mut tape, &p, x, None)?;
        Ok(logits.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Sigmoid score maps `p(z_i = 1 | h_i, I)`.
    pub fn score_maps(&self, params: &ModelParams, image: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.infer(params, image)?.iter().map(ops::sigmoid).collect())
    }

    /// Argmax joints for the annotated (non-interpolated) vertices.
    pub fn predict(&self, params: &ModelParams, image: &Tensor) -> Result<Vec<Prediction>> {
        let logits = self.infer(params, image)?;
        let mut pred = predict_joints(&logits, self.stride())?;
        pred.truncate(self.graph.joint_count());
        Ok(pred)
    }

    /// Ground-truth `(row, col)` cell per vertex; `None` when not visible.
    pub fn gt_cells(&self, sample: &FigureSample, map_h: usize, map_w: usize) -> Vec<Option<(usize, usize)>> {
        let pos = self.graph.vertex_positions(&sample.positions());
        let visible = |v: usize| match *self.graph.kind(v) {
            VertexKind::Joint(j) => sample.joints[j].visible,
            VertexKind::Interpolated { a, b, .. } => sample.joints[a].visible && sample.joints[b].visible,
        };
        let s = self.stride() as f64;
        (0..self.graph.len())
            .map(|v| {
                visible(v).then(|| {
                    let (x, y) = pos[v];
                    let row = ((y / s).round().max(0.0) as usize).min(map_h - 1);
                    let col = ((x / s).round().max(0.0) as usize).min(map_w - 1);
                    (row, col)
                })
            })
            .collect()
    }

    /// Loss of one sample on `tape`.
    pub fn sample_loss(&self, tape: &mut Tape, p: &BoundParams, sample: &FigureSample) -> Result<(Var, Vec<Var>)> {
        let x = tape.constant(sample.image.clone());
        let logits = self.forward(tape, p, x, None)?;
        let (_, h, w) = tape.value(logits[0]).chw()?;
        let gt = self.gt_cells(sample, h, w);
        Ok((spatial_softmax_loss(tape, &logits, &gt)?, logits))
    }
}

fn check_cell(map: &Tensor, joint: usize, (row, col): (usize, usize)) -> Result<usize> {
    let (_, h, w) = map.chw()?;
    if row >= h || col >= w {
        return Err(Error::OutOfBounds { joint, x: col as i64, y: row as i64, width: w, height: h });
    }
    Ok(row * w + col)
}

/// Mean over visible joints of `-log softmax(logits_i)[gt_i]`, softmax over all cells.
/// Absent joints contribute nothing; with none visible the loss is 0.
pub fn spatial_softmax_loss(tape: &mut Tape, logits: &[Var], gt: &[Option<(usize, usize)>]) -> Result<Var> {
    if logits.len() != gt.len() {
        return Err(Error::Shape(format!("{} maps for {} ground-truth entries", logits.len(), gt.len())));
    }
    let mut terms = Vec::new();
    for (j, (&l, g)) in logits.iter().zip(gt).enumerate() {
        if let Some(cell) = *g {
            let idx = check_cell(tape.value(l), j, cell)?;
            terms.push(tape.spatial_nll(l, idx)?);
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let n = terms.len() as f64;
    let sum = if terms.len() == 1 { terms[0] } else { tape.add(&terms)? };
    tape.scale(sum, 1.0 / n)
}

/// [`spatial_softmax_loss`] on plain tensors.
pub fn spatial_softmax_loss_value(logits: &[Tensor], gt: &[Option<(usize, usize)>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = logits.iter().map(|t| tape.constant(t.clone())).collect();
    let l = spatial_softmax_loss(&mut tape, &vars, gt)?;
    Ok(tape.value(l).data()[0])
}

/// Per map: argmax cell (first in row-major order on ties) scaled by `stride`,
/// with its softmax probability as confidence.
pub fn predict_joints(maps: &[Tensor], stride: usize) -> Result<Vec<Prediction>> {
    maps.iter()
        .map(|m| {
            let (_, _, w) = m.chw()?;
            let d = m.data();
            let mut best = 0;
            for (i, &v) in d.iter().enumerate() {
                if v > d[best] {
                    best = i;
                }
            }
            let confidence = (d[best] - ops::log_sum_exp(d)).exp();
            Ok(Prediction { x: ((best % w) * stride) as f64, y: ((best / w) * stride) as f64, confidence })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub pck: f64,
    pub pcp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pck: PckReport,
    pub pcp: PcpReport,
    pub loss: f64,
}

/// Limbs scored by PCP: the standard limb list for the 14-joint skeleton,
/// otherwise the graph's joint-to-joint edges.
fn pcp_limbs(model: &PoseModel) -> Vec<(usize, usize)> {
    let n = model.graph.joint_count();
    if n == skeleton::JOINT_COUNT && model.graph.names()[..n].iter().zip(skeleton::JOINT_NAMES).all(|(a, b)| a == b) {
        skeleton::limbs()
    } else {
        model.config.graph.edges.iter().filter_map(|(a, b)| Some((model.graph.index_of(a)?, model.graph.index_of(b)?))).collect()
    }
}

/// Torso length for the standard skeleton, else the longest side of the joints' bounding box.
fn pck_normalizer(model: &PoseModel, gt: &[(f64, f64)]) -> f64 {
    if model.graph.joint_count() == skeleton::JOINT_COUNT {
        synth::torso_length(gt)
    } else {
        let (xs, ys): (Vec<f64>, Vec<f64>) = gt.iter().copied().unzip();
        let span = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        span(&xs).max(span(&ys))
    }
}

/// PCK@`pck_threshold` and PCP@`pcp_threshold` of predictions against all annotated joints.
pub fn score_predictions(
    model: &PoseModel,
    preds: &[Vec<(f64, f64)>],
    samples: &[FigureSample],
    pck_threshold: f64,
    pcp_threshold: f64,
) -> Result<(PckReport, PcpReport)> {
    let gt: Vec<Vec<(f64, f64)>> = samples.iter().map(|s| s.positions()).collect();
    let norms: Vec<f64> = gt.iter().map(|g| pck_normalizer(model, g)).collect();
    let pck = synth::pck(preds, &gt, &norms, pck_threshold)?;
    let pcp = synth::pcp(preds, &gt, &pcp_limbs(model), pcp_threshold)?;
    Ok((pck, pcp))
}

pub const PCK_THRESHOLD: f64 = 0.2;
pub const PCP_THRESHOLD: f64 = 0.5;

pub fn evaluate(model: &PoseModel, params: &ModelParams, samples: &[FigureSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for s in samples {
        let logits = model.infer(params, &s.image)?;
        let (_, h, w) = logits[0].chw()?;
        loss += spatial_softmax_loss_value(&logits, &model.gt_cells(s, h, w))?;
        let p = predict_joints(&logits, model.stride())?;
        preds.push(p[..model.graph.joint_count()].iter().map(|p| (p.x, p.y)).collect());
    }
    let (pck, pcp) = score_predictions(model, &preds, samples, PCK_THRESHOLD, PCP_THRESHOLD)?;
    Ok(EvalReport { pck, pcp, loss: loss / samples.len() as f64 })
}

fn divergence(epoch: usize, step: usize, loss: f64) -> Error {
    Error::Divergence { epoch, step, loss }
}

/// Mini-batch SGD on the mean per-sample loss. Per-epoch metrics are the mean
/// training loss plus PCK/PCP on `eval` (or, without it, on the training
/// predictions made during the epoch). `on_epoch` runs after every epoch.
pub fn train(
    model: &PoseModel,
    params: &mut ModelParams,
    data: &[FigureSample],
    eval: Option<&[FigureSample]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &ModelParams) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    model.check_params(params)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut preds = vec![Vec::new(); data.len()];
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<ParamGrads> = None;
            for &i in batch {
                let mut tape = Tape::new();
                let p = params.bind(&mut tape);
                let (loss, logits) = match model.sample_loss(&mut tape, &p, &data[i]) {
                    Ok(v) => v,
                    Err(Error::NonFinite(_)) => return Err(divergence(epoch, step, f64::NAN)),
                    Err(e) => return Err(e),
                };
                let lv = tape.value(loss).data()[0];
                if !lv.is_finite() {
                    return Err(divergence(epoch, step, lv));
                }
                total += lv;
                if eval.is_none() {
                    let maps: Vec<Tensor> = logits.iter().map(|&v| tape.value(v).clone()).collect();
                    let pr = predict_joints(&maps, model.stride())?;
                    preds[i] = pr[..model.graph.joint_count()].iter().map(|p| (p.x, p.y)).collect();
                }
                let g = match tape.backward(loss) {
                    Ok(g) => p.grads(&g, params),
                    Err(Error::NonFinite(_)) => return Err(divergence(epoch, step, lv)),
                    Err(e) => return Err(e),
                };
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => {
                        for (k, t) in a.iter_mut() {
                            t.add_scaled(&g[k], 1.0)?;
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            for t in grads.values_mut() {
                *t = t.map(|v| v * inv);
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            opt.step(params, &grads)?;
            if params.iter().any(|(_, t)| !t.is_finite()) {
                return Err(divergence(epoch, step, f64::NAN));
            }
            step += 1;
        }
        let loss = total / data.len() as f64;
        let (pck, pcp) = match eval {
            Some(e) if !e.is_empty() => {
                let r = evaluate(model, params, e)?;
                (r.pck.mean, r.pcp.mean)
            }
            _ => {
                let (k, p) = score_predictions(model, &preds, data, PCK_THRESHOLD, PCP_THRESHOLD)?;
                (k.mean, p.mean)
            }
        };
        let m = EpochMetrics { epoch, loss, pck, pcp };
        on_epoch(&m, params)?;
        log.push(m);
    }
    Ok(log)
}
