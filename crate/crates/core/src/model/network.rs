use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, Act, BnCache, BnStats, ConvGeom};
use super::spec::{ArchitectureSpec, Downsample, Shortcut};
use crate::error::{Error, Result};
use crate::labeling;
use crate::seed::{self, stream};
use crate::tensor::{Matrix, Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnScale,
    BnShift,
    LinearWeight,
    LinearBias,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Weights that receive weight decay.
    pub fn is_decayed(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::LinearWeight)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub info: ParamInfo,
    pub data: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
struct ConvOp {
    geom: ConvGeom,
    weight: usize,
    bias: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct BnOp {
    scale: usize,
    shift: usize,
    mean: usize,
    var: usize,
}

/// Convolution, optionally followed by batch norm.
#[derive(Clone, Copy, Debug)]
struct Unit {
    conv: ConvOp,
    bn: Option<BnOp>,
}

#[derive(Clone, Copy, Debug)]
enum ShortcutOp {
    Identity,
    ZeroPad { c_out: usize, stride: usize },
    Projection(Unit),
}

#[derive(Clone, Copy, Debug)]
struct Block {
    first: Unit,
    second: Unit,
    shortcut: ShortcutOp,
}

#[derive(Clone, Debug)]
struct Stage {
    pool_before: bool,
    blocks: Vec<Block>,
}

#[derive(Clone, Copy, Debug)]
struct Head {
    weight: usize,
    bias: usize,
    fin: usize,
    fout: usize,
}

#[derive(Clone, Debug, Default)]
struct Plan {
    stem: Option<Unit>,
    stem_pool: bool,
    stages: Vec<Stage>,
    head: Option<Head>,
}

struct PlanBuilder {
    params: Vec<ParamInfo>,
    buffers: Vec<ParamInfo>,
    batch_norm: bool,
}

impl PlanBuilder {
    fn param(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.params.push(ParamInfo { name, shape, kind });
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.buffers.push(ParamInfo { name, shape, kind });
        self.buffers.len() - 1
    }

    fn unit(&mut self, prefix: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Unit {
        let geom = ConvGeom {
            c_in,
            c_out,
            kernel,
            stride,
            pad: kernel / 2,
        };
        let weight = self.param(
            format!("{prefix}.conv.weight"),
            vec![c_out, c_in, kernel, kernel],
            ParamKind::ConvWeight,
        );
        if self.batch_norm {
            let scale = self.param(format!("{prefix}.bn.weight"), vec![c_out], ParamKind::BnScale);
            let shift = self.param(format!("{prefix}.bn.bias"), vec![c_out], ParamKind::BnShift);
            let mean = self.buffer(format!("{prefix}.bn.running_mean"), vec![c_out], ParamKind::RunningMean);
            let var = self.buffer(format!("{prefix}.bn.running_var"), vec![c_out], ParamKind::RunningVar);
            Unit {
                conv: ConvOp {
                    geom,
                    weight,
                    bias: None,
                },
                bn: Some(BnOp {
                    scale,
                    shift,
                    mean,
                    var,
                }),
            }
        } else {
            let bias = self.param(format!("{prefix}.conv.bias"), vec![c_out], ParamKind::ConvBias);
            Unit {
                conv: ConvOp {
                    geom,
                    weight,
                    bias: Some(bias),
                },
                bn: None,
            }
        }
    }
}

fn compile(spec: &ArchitectureSpec) -> (Plan, Vec<ParamInfo>, Vec<ParamInfo>) {
    let mut b = PlanBuilder {
        params: Vec::new(),
        buffers: Vec::new(),
        batch_norm: spec.batch_norm,
    };
    let mut plan = Plan::default();
    let mut channels = spec.input_channels;
    if let Some(stem) = &spec.stem {
        plan.stem = Some(b.unit("stem", channels, stem.channels, stem.kernel, stem.stride));
        plan.stem_pool = stem.pool;
        channels = stem.channels;
    }
    for (s, stage) in spec.stages.iter().enumerate() {
        let downsample = s > 0;
        let mut blocks = Vec::with_capacity(stage.blocks);
        for k in 0..stage.blocks {
            let prefix = format!("stage{}.block{}", s + 1, k + 1);
            let stride = if k == 0 && downsample && spec.downsample == Downsample::StridedConv {
                2
            } else {
                1
            };
            let first = b.unit(&format!("{prefix}.conv1"), channels, stage.channels, 3, stride);
            let second = b.unit(&format!("{prefix}.conv2"), stage.channels, stage.channels, 3, 1);
            let shortcut = if channels == stage.channels && stride == 1 {
                ShortcutOp::Identity
            } else {
                match spec.shortcut {
                    Shortcut::ZeroPad => ShortcutOp::ZeroPad {
                        c_out: stage.channels,
                        stride,
                    },
                    Shortcut::Projection => {
                        ShortcutOp::Projection(b.unit(&format!("{prefix}.shortcut"), channels, stage.channels, 1, stride))
                    }
                }
            };
            blocks.push(Block {
                first,
                second,
                shortcut,
            });
            channels = stage.channels;
        }
        plan.stages.push(Stage {
            pool_before: downsample && spec.downsample == Downsample::MaxPool,
            blocks,
        });
    }
    if spec.output_width > 0 {
        let weight = b.param("fc.weight".into(), vec![spec.output_width, channels], ParamKind::LinearWeight);
        let bias = b.param("fc.bias".into(), vec![spec.output_width], ParamKind::LinearBias);
        plan.head = Some(Head {
            weight,
            bias,
            fin: channels,
            fout: spec.output_width,
        });
    }
    (plan, b.params, b.buffers)
}

/// Parameters and batch-norm running statistics of one network.
#[derive(Clone, Debug)]
pub struct NetworkParams<T> {
    pub spec: ArchitectureSpec,
    pub seed: u64,
    pub params: Vec<Param<T>>,
    pub buffers: Vec<Param<T>>,
    plan: Plan,
}

impl<T: Real> PartialEq for NetworkParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.seed == other.seed && self.params == other.params && self.buffers == other.buffers
    }
}

/// He-initialised network: conv and fully connected weights drawn from
/// `N(0, 2 / fan_in)`, batch-norm scale 1 and shift 0, biases 0.
pub fn build_network<T: Real>(spec: &ArchitectureSpec, seed: u64) -> Result<NetworkParams<T>> {
    spec.validate()?;
    let (plan, infos, buffer_infos) = compile(spec);
    let mut rng = seed::rng(seed, &[stream::INIT]);
    let params = infos
        .into_iter()
        .map(|info| {
            let data = match info.kind {
                ParamKind::ConvWeight | ParamKind::LinearWeight => {
                    let fan_in: usize = info.shape[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..info.len()).map(|_| T::lit(normal.sample(&mut rng))).collect()
                }
                ParamKind::BnScale => vec![T::one(); info.len()],
                _ => vec![T::zero(); info.len()],
            };
            Param { info, data }
        })
        .collect();
    let buffers = buffer_infos
        .into_iter()
        .map(|info| {
            let fill = if info.kind == ParamKind::RunningVar { T::one() } else { T::zero() };
            Param {
                data: vec![fill; info.len()],
                info,
            }
        })
        .collect();
    Ok(NetworkParams {
        spec: spec.clone(),
        seed,
        params,
        buffers,
        plan,
    })
}

/// Total number of trainable scalars.
pub fn count_params<T>(params: &NetworkParams<T>) -> usize {
    params.params.iter().map(|p| p.data.len()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Gradients aligned with [`NetworkParams::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub grads: Vec<Vec<T>>,
}

/// Batch statistics of every batch-norm layer, in buffer order.
#[derive(Clone, Debug)]
pub struct BatchStats {
    layers: Vec<(usize, usize, BnStats)>,
}

pub struct TrainStep<T> {
    pub logits: Matrix<T>,
    /// Mean soft cross-entropy over the batch.
    pub loss: f64,
    pub gradients: Gradients<T>,
    pub batch_stats: BatchStats,
}

struct UnitCache<T> {
    input: Act<T>,
    bn: Option<BnCache<T>>,
}

struct BlockCache<T> {
    input_shape: (usize, usize, usize, usize),
    first: UnitCache<T>,
    mid: Act<T>,
    second: UnitCache<T>,
    shortcut: Option<UnitCache<T>>,
    out: Act<T>,
}

enum StepCache<T> {
    Pool { arg: Vec<u32>, shape: (usize, usize, usize, usize) },
    Block(Box<BlockCache<T>>),
}

struct Tape<T> {
    stem: Option<(UnitCache<T>, Act<T>)>,
    steps: Vec<StepCache<T>>,
    pre_gap_shape: (usize, usize, usize, usize),
    feats: Vec<T>,
    stats: Vec<(usize, usize, BnStats)>,
}

fn shape_of<T: Real>(a: &Act<T>) -> (usize, usize, usize, usize) {
    (a.c, a.n, a.h, a.w)
}

impl<T: Real> NetworkParams<T> {
    pub fn param_infos(&self) -> impl Iterator<Item = &ParamInfo> {
        self.params.iter().map(|p| &p.info)
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            grads: self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    fn p(&self, i: usize) -> &[T] {
        &self.params[i].data
    }

    fn b(&self, i: usize) -> &[T] {
        &self.buffers[i].data
    }

    fn check_input(&self, batch: &Tensor4<T>) -> Result<()> {
        let [n, c, h, w] = batch.shape;
        let s = self.spec.input_size;
        if c != self.spec.input_channels || h != s || w != s || n == 0 {
            return Err(Error::Shape(format!(
                "batch {:?} does not match input {}x{}x{} (non-empty batch)",
                batch.shape, self.spec.input_channels, s, s
            )));
        }
        if batch.data.len() != n * c * h * w {
            return Err(Error::Shape("batch data length".into()));
        }
        Ok(())
    }

    fn unit_forward(&self, unit: &Unit, x: Act<T>, tape: Option<&mut Tape<T>>) -> (Act<T>, Option<UnitCache<T>>) {
        let bias = unit.conv.bias.map(|b| self.p(b));
        let y = layers::conv_forward(&x, self.p(unit.conv.weight), bias, &unit.conv.geom);
        match (unit.bn, tape) {
            (None, tape) => {
                let cache = tape.map(|_| UnitCache { input: x, bn: None });
                (y, cache)
            }
            (Some(bn), None) => (
                layers::bn_forward_eval(&y, self.p(bn.scale), self.p(bn.shift), self.b(bn.mean), self.b(bn.var)),
                None,
            ),
            (Some(bn), Some(tape)) => {
                let (out, cache, stats) = layers::bn_forward_train(&y, self.p(bn.scale), self.p(bn.shift));
                tape.stats.push((bn.mean, bn.var, stats));
                (out, Some(UnitCache { input: x, bn: Some(cache) }))
            }
        }
    }

    fn unit_backward(&self, unit: &Unit, cache: &UnitCache<T>, dy: Act<T>, grads: &mut Gradients<T>, need_dx: bool) -> Option<Act<T>> {
        let dconv = match (&unit.bn, &cache.bn) {
            (Some(bn), Some(bc)) => {
                let (gs, gb) = two_mut(&mut grads.grads, bn.scale, bn.shift);
                layers::bn_backward(bc, self.p(bn.scale), &dy, gs, gb)
            }
            _ => dy,
        };
        let (dw, db) = match unit.conv.bias {
            Some(b) => {
                let (w, bias) = two_mut(&mut grads.grads, unit.conv.weight, b);
                (w, Some(bias))
            }
            None => (grads.grads[unit.conv.weight].as_mut_slice(), None),
        };
        layers::conv_backward(&cache.input, self.p(unit.conv.weight), &unit.conv.geom, &dconv, dw, db, need_dx)
    }

    fn run(&self, batch: &Tensor4<T>, mut tape: Option<&mut Tape<T>>) -> Result<Matrix<T>> {
        self.check_input(batch)?;
        let mut x = Act::from_nchw(batch);
        if let Some(stem) = &self.plan.stem {
            let (mut y, cache) = self.unit_forward(stem, x, tape.as_deref_mut());
            layers::relu_inplace(&mut y);
            if let (Some(t), Some(c)) = (tape.as_deref_mut(), cache) {
                t.stem = Some((c, y.clone()));
            }
            x = y;
            if self.plan.stem_pool {
                x = self.pool(x, tape.as_deref_mut());
            }
        }
        for stage in &self.plan.stages {
            if stage.pool_before {
                x = self.pool(x, tape.as_deref_mut());
            }
            for block in &stage.blocks {
                x = self.block_forward(block, x, tape.as_deref_mut());
            }
        }
        let feats = layers::global_avg_pool(&x);
        let n = x.n;
        let out = match &self.plan.head {
            Some(h) => Matrix {
                rows: n,
                cols: h.fout,
                data: layers::linear_forward(&feats, n, self.p(h.weight), self.p(h.bias), h.fin, h.fout),
            },
            None => Matrix {
                rows: n,
                cols: x.c,
                data: feats.clone(),
            },
        };
        if let Some(t) = tape {
            t.pre_gap_shape = shape_of(&x);
            t.feats = feats;
        }
        Ok(out)
    }

    fn pool(&self, x: Act<T>, tape: Option<&mut Tape<T>>) -> Act<T> {
        let (y, arg) = layers::maxpool_forward(&x);
        if let Some(t) = tape {
            t.steps.push(StepCache::Pool { arg, shape: shape_of(&x) });
        }
        y
    }

    fn block_forward(&self, block: &Block, x: Act<T>, mut tape: Option<&mut Tape<T>>) -> Act<T> {
        let input_shape = shape_of(&x);
        let (sc, sc_cache) = match &block.shortcut {
            ShortcutOp::Identity => (x.clone(), None),
            ShortcutOp::ZeroPad { c_out, stride } => (layers::zero_pad_forward(&x, *c_out, *stride), None),
            ShortcutOp::Projection(u) => self.unit_forward(u, x.clone(), tape.as_deref_mut()),
        };
        let (mut mid, first) = self.unit_forward(&block.first, x, tape.as_deref_mut());
        layers::relu_inplace(&mut mid);
        let (mut out, second) = self.unit_forward(&block.second, mid.clone(), tape.as_deref_mut());
        for (o, s) in out.data.iter_mut().zip(&sc.data) {
            *o += *s;
        }
        layers::relu_inplace(&mut out);
        if let (Some(t), Some(first), Some(second)) = (tape, first, second) {
            t.steps.push(StepCache::Block(Box::new(BlockCache {
                input_shape,
                first,
                mid,
                second,
                shortcut: sc_cache,
                out: out.clone(),
            })));
        }
        out
    }

    /// Logits for a batch. Eval mode is deterministic and uses running
    /// statistics; train mode normalises with the batch's own statistics.
    pub fn forward(&self, batch: &Tensor4<T>, mode: Mode) -> Result<Matrix<T>> {
        match mode {
            Mode::Eval => self.run(batch, None),
            Mode::Train => {
                let mut tape = Tape::new();
                self.run(batch, Some(&mut tape))
            }
        }
    }

    /// Train-mode forward and backward pass for the mean soft cross-entropy
    /// of `targets` (one row per sample).
    pub fn train_step(&self, batch: &Tensor4<T>, targets: &Matrix<T>) -> Result<TrainStep<T>> {
        let head = self.plan.head.ok_or_else(|| Error::Config("network has no head".into()))?;
        if targets.rows != batch.batch() || targets.cols != head.fout {
            return Err(Error::Shape(format!(
                "targets {}x{} do not match batch {} x output {}",
                targets.rows,
                targets.cols,
                batch.batch(),
                head.fout
            )));
        }
        let mut tape = Tape::new();
        let logits = self.run(batch, Some(&mut tape))?;
        let n = logits.rows;
        let inv_n = T::one() / T::lit(n as f64);
        let mut loss = 0.0;
        let mut dlogits = vec![T::zero(); logits.data.len()];
        for i in 0..n {
            let (z, t) = (logits.row(i), targets.row(i));
            loss += labeling::soft_cross_entropy_unchecked(z, t).to_f64().unwrap_or(f64::NAN);
            for (d, g) in dlogits[i * head.fout..(i + 1) * head.fout]
                .iter_mut()
                .zip(labeling::soft_cross_entropy_grad(z, t))
            {
                *d = g * inv_n;
            }
        }
        loss /= n as f64;
        let gradients = self.backward(&tape, &dlogits, n)?;
        Ok(TrainStep {
            logits,
            loss,
            gradients,
            batch_stats: BatchStats { layers: tape.stats },
        })
    }

    /// Backward pass from an arbitrary logit gradient.
    fn backward(&self, tape: &Tape<T>, dlogits: &[T], n: usize) -> Result<Gradients<T>> {
        let head = self.plan.head.ok_or_else(|| Error::Config("network has no head".into()))?;
        let mut grads = self.zero_gradients();
        let (gw, gb) = two_mut(&mut grads.grads, head.weight, head.bias);
        let dfeat = layers::linear_backward(&tape.feats, n, self.p(head.weight), head.fin, head.fout, dlogits, gw, gb);
        let mut dx = layers::global_avg_pool_backward(&dfeat, tape.pre_gap_shape);

        let mut steps = tape.steps.iter().rev();
        for stage in self.plan.stages.iter().rev() {
            for block in stage.blocks.iter().rev() {
                let Some(StepCache::Block(cache)) = steps.next() else {
                    return Err(Error::Shape("tape out of sync".into()));
                };
                dx = self.block_backward(block, cache, dx, &mut grads);
            }
            if stage.pool_before {
                dx = self.pool_backward(steps.next(), dx)?;
            }
        }
        if let Some(stem) = &self.plan.stem {
            if self.plan.stem_pool {
                dx = self.pool_backward(steps.next(), dx)?;
            }
            let (cache, out) = tape.stem.as_ref().ok_or_else(|| Error::Shape("missing stem cache".into()))?;
            layers::relu_backward(out, &mut dx);
            self.unit_backward(stem, cache, dx, &mut grads, false);
        }
        Ok(grads)
    }

    fn pool_backward(&self, step: Option<&StepCache<T>>, dy: Act<T>) -> Result<Act<T>> {
        match step {
            Some(StepCache::Pool { arg, shape }) => Ok(layers::maxpool_backward(arg, *shape, &dy)),
            _ => Err(Error::Shape("tape out of sync".into())),
        }
    }

    fn block_backward(&self, block: &Block, cache: &BlockCache<T>, mut dy: Act<T>, grads: &mut Gradients<T>) -> Act<T> {
        layers::relu_backward(&cache.out, &mut dy);
        let mut dmid = self
            .unit_backward(&block.second, &cache.second, dy.clone(), grads, true)
            .expect("dx requested");
        layers::relu_backward(&cache.mid, &mut dmid);
        let mut dx = self
            .unit_backward(&block.first, &cache.first, dmid, grads, true)
            .expect("dx requested");
        let dsc = match (&block.shortcut, &cache.shortcut) {
            (ShortcutOp::Identity, _) => dy,
            (ShortcutOp::ZeroPad { stride, .. }, _) => layers::zero_pad_backward(&dy, cache.input_shape, *stride),
            (ShortcutOp::Projection(u), Some(c)) => self.unit_backward(u, c, dy, grads, true).expect("dx requested"),
            (ShortcutOp::Projection(_), None) => unreachable!("projection cache recorded in train mode"),
        };
        for (a, b) in dx.data.iter_mut().zip(&dsc.data) {
            *a += *b;
        }
        dx
    }

    /// Exponential moving average of batch-norm statistics:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(&mut self, stats: &BatchStats, momentum: f64) {
        let m = T::lit(momentum);
        let keep = T::one() - m;
        for (mean_i, var_i, s) in &stats.layers {
            for (r, &b) in self.buffers[*mean_i].data.iter_mut().zip(&s.mean) {
                *r = keep * *r + m * T::lit(b);
            }
            for (r, &b) in self.buffers[*var_i].data.iter_mut().zip(&s.var) {
                *r = keep * *r + m * T::lit(b);
            }
        }
    }

    /// Rebuilds a network from named arrays, checking them against the
    /// layout `spec` implies.
    pub fn from_parts(spec: ArchitectureSpec, seed: u64, params: Vec<Param<T>>, buffers: Vec<Param<T>>) -> Result<Self> {
        spec.validate()?;
        let (plan, infos, buffer_infos) = compile(&spec);
        for (what, expected, actual) in [("parameter", &infos, &params), ("buffer", &buffer_infos, &buffers)] {
            if expected.len() != actual.len() {
                return Err(Error::Shape(format!(
                    "expected {} {what} arrays, found {}",
                    expected.len(),
                    actual.len()
                )));
            }
            for (e, a) in expected.iter().zip(actual.iter()) {
                if e != &a.info || a.data.len() != e.len() {
                    return Err(Error::Shape(format!(
                        "{what} `{}` {:?} does not match expected `{}` {:?}",
                        a.info.name, a.info.shape, e.name, e.shape
                    )));
                }
            }
        }
        Ok(NetworkParams {
            spec,
            seed,
            params,
            buffers,
            plan,
        })
    }

    /// Converts every array to another scalar type.
    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let conv = |ps: &[Param<T>]| {
            ps.iter()
                .map(|p| Param {
                    info: p.info.clone(),
                    data: p.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
                })
                .collect()
        };
        NetworkParams {
            spec: self.spec.clone(),
            seed: self.seed,
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            plan: self.plan.clone(),
        }
    }
}

impl<T: Real> Tape<T> {
    fn new() -> Self {
        Tape {
            stem: None,
            steps: Vec::new(),
            pre_gap_shape: (0, 0, 0, 0),
            feats: Vec::new(),
            stats: Vec::new(),
        }
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a != b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}
