//! Model graph: residual encoder plus `unet`, `aspp` or `pyramid` decoder.
//!
//! Every convolutional module (conv + optional batch-norm + activation) has a
//! stable dotted path. Module outputs are taken after the module's
//! nonlinearity; for the second convolution of a residual block that is the
//! block output (after the shortcut addition and ReLU).

use std::fmt;

use serde::{Deserialize, Serialize};

use super::layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, add_inplace, concat_channels, relu_backward, relu_inplace, resize_bilinear,
    resize_bilinear_backward, split_channels, BatchNorm2d, Conv2d,
};
use super::params::{ParamStore, Role};
use super::tensor::{ConvGeometry, Tensor};
use super::ModelError;
use crate::exec::Exec;
use crate::rng::{derive, seeded, Rng};

const INIT_STREAM: u64 = 0x31;
const PYRAMID_BINS: [usize; 3] = [1, 2, 4];
const ASPP_RATES: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub downsample_factor: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec { in_channels: 4, stage_widths: vec![16, 32, 64, 128], blocks_per_stage: 2, downsample_factor: 2 }
    }
}

impl EncoderSpec {
    pub fn output_stride(&self) -> usize {
        self.downsample_factor.pow(self.stage_widths.len() as u32)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &str, reason: &str| Err(ModelError::InvalidSpec { field: field.into(), reason: reason.into() });
        if self.in_channels == 0 {
            return bad("in_channels", "must be positive");
        }
        if self.stage_widths.len() < 2 {
            return bad("stage_widths", "need at least two stages");
        }
        if self.stage_widths.contains(&0) {
            return bad("stage_widths", "widths must be positive");
        }
        if self.blocks_per_stage == 0 {
            return bad("blocks_per_stage", "must be positive");
        }
        if self.downsample_factor != 2 {
            return bad("downsample_factor", "only 2 is supported");
        }
        Ok(())
    }
}

impl fmt::Display for EncoderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in={} widths={:?} blocks={}", self.in_channels, self.stage_widths, self.blocks_per_stage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameworkKind {
    Unet,
    Aspp,
    Pyramid,
}

impl FrameworkKind {
    pub const ALL: [FrameworkKind; 3] = [FrameworkKind::Unet, FrameworkKind::Aspp, FrameworkKind::Pyramid];

    pub fn name(self) -> &'static str {
        match self {
            FrameworkKind::Unet => "unet",
            FrameworkKind::Aspp => "aspp",
            FrameworkKind::Pyramid => "pyramid",
        }
    }
}

impl fmt::Display for FrameworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleInfo {
    pub path: String,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches kept for `backward`.
    Train,
    /// Running statistics, no caches.
    Eval,
}

#[derive(Clone, Copy)]
struct Pass {
    train_bn: bool,
    keep: bool,
    exec: Exec,
}

/// Collected module outputs when enabled.
struct Capture {
    enabled: bool,
    items: Vec<(String, Tensor)>,
}

impl Capture {
    fn push(&mut self, path: &str, t: &Tensor) {
        if self.enabled {
            self.items.push((path.to_string(), t.clone()));
        }
    }
}

fn conv3(stride: usize, dilation: usize) -> ConvGeometry {
    ConvGeometry { kernel: 3, stride, pad: dilation, dilation }
}

fn conv1(stride: usize) -> ConvGeometry {
    ConvGeometry { kernel: 1, stride, pad: 0, dilation: 1 }
}

#[derive(Debug, Clone)]
struct ConvUnit {
    path: String,
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    relu: bool,
    out: Option<Tensor>,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        modules: &mut Vec<ModuleInfo>,
        path: String,
        role: Role,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        relu: bool,
    ) -> Self {
        let is_head = role == Role::Head;
        let conv = Conv2d::new(store, rng, &path, role, cin, cout, geom, is_head);
        let bn = (!is_head).then(|| BatchNorm2d::new(store, &path, role, cout));
        let side = if role == Role::Encoder { Side::Encoder } else { Side::Decoder };
        modules.push(ModuleInfo { path: path.clone(), side });
        ConvUnit { path, conv, bn, relu, out: None }
    }

    fn forward(&mut self, store: &mut ParamStore, x: &Tensor, pass: Pass) -> Tensor {
        let mut y = self.conv.forward(store, x, pass.keep, pass.exec);
        if let Some(bn) = &mut self.bn {
            y = bn.forward(store, y, pass.train_bn, pass.keep);
        }
        if self.relu {
            relu_inplace(&mut y);
            if pass.keep {
                self.out = Some(y.clone());
            }
        }
        y
    }

    fn backward(&mut self, store: &mut ParamStore, mut dy: Tensor, need_dx: bool, exec: Exec) -> Option<Tensor> {
        if self.relu {
            let out = self.out.take().expect("relu backward without cache");
            relu_backward(&mut dy, &out);
        }
        if let Some(bn) = &mut self.bn {
            dy = bn.backward(store, dy);
        }
        self.conv.backward(store, &dy, need_dx, exec)
    }

    fn clear(&mut self) {
        self.out = None;
        self.conv.clear();
        if let Some(bn) = &mut self.bn {
            bn.clear();
        }
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    shortcut: Option<ConvUnit>,
    conv1: ConvUnit,
    conv2: ConvUnit,
    out: Option<Tensor>,
}

impl ResidualBlock {
    fn new(store: &mut ParamStore, rng: &mut Rng, modules: &mut Vec<ModuleInfo>, path: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let shortcut = (stride != 1 || cin != cout)
            .then(|| ConvUnit::new(store, rng, modules, format!("{path}.shortcut"), Role::Encoder, cin, cout, conv1(stride), false));
        let conv1 = ConvUnit::new(store, rng, modules, format!("{path}.conv1"), Role::Encoder, cin, cout, conv3(stride, 1), true);
        let conv2 = ConvUnit::new(store, rng, modules, format!("{path}.conv2"), Role::Encoder, cout, cout, conv3(1, 1), false);
        ResidualBlock { shortcut, conv1, conv2, out: None }
    }

    fn forward(&mut self, store: &mut ParamStore, x: &Tensor, pass: Pass, cap: &mut Capture) -> Tensor {
        let s = match &mut self.shortcut {
            Some(sc) => {
                let s = sc.forward(store, x, pass);
                cap.push(&sc.path, &s);
                s
            }
            None => x.clone(),
        };
        let h = self.conv1.forward(store, x, pass);
        cap.push(&self.conv1.path, &h);
        let mut y = self.conv2.forward(store, &h, pass);
        add_inplace(&mut y, &s);
        relu_inplace(&mut y);
        cap.push(&self.conv2.path, &y);
        if pass.keep {
            self.out = Some(y.clone());
        }
        y
    }

    fn backward(&mut self, store: &mut ParamStore, mut dy: Tensor, need_dx: bool, exec: Exec) -> Option<Tensor> {
        let out = self.out.take().expect("block backward without cache");
        relu_backward(&mut dy, &out);
        let ds = dy.clone();
        let dh = self.conv2.backward(store, dy, true, exec).expect("dx requested");
        let dx = self.conv1.backward(store, dh, need_dx, exec);
        let dsx = match &mut self.shortcut {
            Some(sc) => sc.backward(store, ds, need_dx, exec),
            None => Some(ds),
        };
        match (dx, dsx) {
            (Some(mut a), Some(b)) => {
                add_inplace(&mut a, &b);
                Some(a)
            }
            _ => None,
        }
    }

    fn clear(&mut self) {
        self.out = None;
        for u in [Some(&mut self.conv1), Some(&mut self.conv2), self.shortcut.as_mut()].into_iter().flatten() {
            u.clear();
        }
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    stem: ConvUnit,
    stages: Vec<Vec<ResidualBlock>>,
}

impl Encoder {
    fn new(store: &mut ParamStore, rng: &mut Rng, modules: &mut Vec<ModuleInfo>, spec: &EncoderSpec) -> Self {
        let w0 = spec.stage_widths[0];
        let stem = ConvUnit::new(store, rng, modules, "encoder.stem".into(), Role::Encoder, spec.in_channels, w0, conv3(1, 1), true);
        let mut cin = w0;
        let stages = spec
            .stage_widths
            .iter()
            .enumerate()
            .map(|(s, &w)| {
                (0..spec.blocks_per_stage)
                    .map(|b| {
                        let stride = if b == 0 { spec.downsample_factor } else { 1 };
                        let block = ResidualBlock::new(store, rng, modules, &format!("encoder.stage{}.block{b}", s + 1), cin, w, stride);
                        cin = w;
                        block
                    })
                    .collect()
            })
            .collect();
        Encoder { stem, stages }
    }

    /// Stem output followed by each stage's output.
    fn forward(&mut self, store: &mut ParamStore, x: &Tensor, pass: Pass, cap: &mut Capture) -> Vec<Tensor> {
        let mut feats = Vec::with_capacity(self.stages.len() + 1);
        let mut h = self.stem.forward(store, x, pass);
        cap.push(&self.stem.path, &h);
        feats.push(h.clone());
        for stage in &mut self.stages {
            for block in stage.iter_mut() {
                h = block.forward(store, &h, pass, cap);
            }
            feats.push(h.clone());
        }
        feats
    }

    fn backward(&mut self, store: &mut ParamStore, mut grads: Vec<Option<Tensor>>, exec: Exec) {
        let mut g: Option<Tensor> = grads.pop().flatten();
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                let dy = g.take().expect("gradient reaches every stage");
                g = block.backward(store, dy, true, exec);
            }
            if let Some(extra) = grads.pop().flatten() {
                match &mut g {
                    Some(t) => add_inplace(t, &extra),
                    None => g = Some(extra),
                }
            }
        }
        if let Some(dy) = g {
            self.stem.backward(store, dy, false, exec);
        }
    }

    fn clear(&mut self) {
        self.stem.clear();
        self.stages.iter_mut().flatten().for_each(ResidualBlock::clear);
    }
}

#[derive(Debug, Clone)]
struct UnetLevel {
    skip: usize,
    conv1: ConvUnit,
    conv2: ConvUnit,
    below: (usize, usize, usize),
}

#[derive(Debug, Clone)]
struct AsppDecoder {
    branches: Vec<ConvUnit>,
    project: ConvUnit,
    lowlevel: ConvUnit,
    refine: ConvUnit,
    low_index: usize,
    shapes: Option<(usize, usize, usize, usize)>,
}

#[derive(Debug, Clone)]
struct PyramidDecoder {
    bins: Vec<(usize, ConvUnit)>,
    fuse: ConvUnit,
    input: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone)]
enum Decoder {
    Unet(Vec<UnetLevel>),
    Aspp(AsppDecoder),
    Pyramid(PyramidDecoder),
}

fn add_grad(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => add_inplace(t, &g),
        None => *slot = Some(g),
    }
}

impl Decoder {
    /// Builds the decoder; returns it with its output channel count.
    fn new(store: &mut ParamStore, rng: &mut Rng, modules: &mut Vec<ModuleInfo>, spec: &EncoderSpec, kind: FrameworkKind) -> (Self, usize) {
        let w = &spec.stage_widths;
        let s = w.len();
        // channels of feature i: stem = w[0], stage j = w[j-1]
        let feat_c = |i: usize| if i == 0 { w[0] } else { w[i - 1] };
        let d = Role::Decoder;
        match kind {
            FrameworkKind::Unet => {
                let mut below_c = feat_c(s);
                let mut levels = Vec::new();
                for (k, l) in (0..s).rev().enumerate() {
                    let c = feat_c(l);
                    let p = format!("decoder.up{}", k + 1);
                    let conv1 = ConvUnit::new(store, rng, modules, format!("{p}.conv1"), d, below_c + c, c, conv3(1, 1), true);
                    let conv2 = ConvUnit::new(store, rng, modules, format!("{p}.conv2"), d, c, c, conv3(1, 1), true);
                    levels.push(UnetLevel { skip: l, conv1, conv2, below: (below_c, 0, 0) });
                    below_c = c;
                }
                (Decoder::Unet(levels), feat_c(0))
            }
            FrameworkKind::Aspp => {
                let cb = feat_c(s);
                let a = (cb / 2).max(4);
                let branches = ASPP_RATES
                    .iter()
                    .map(|&r| ConvUnit::new(store, rng, modules, format!("decoder.aspp.rate{r}"), d, cb, a, conv3(1, r), true))
                    .collect();
                let project = ConvUnit::new(store, rng, modules, "decoder.aspp.project".into(), d, 3 * a, a, conv1(1), true);
                let low_index = 2.min(s);
                let lw = w[0];
                let lowlevel = ConvUnit::new(store, rng, modules, "decoder.lowlevel".into(), d, feat_c(low_index), lw, conv1(1), true);
                let refine = ConvUnit::new(store, rng, modules, "decoder.refine".into(), d, a + lw, a, conv3(1, 1), true);
                (Decoder::Aspp(AsppDecoder { branches, project, lowlevel, refine, low_index, shapes: None }), a)
            }
            FrameworkKind::Pyramid => {
                let cb = feat_c(s);
                let q = (cb / 4).max(1);
                let bins = PYRAMID_BINS
                    .iter()
                    .map(|&g| (g, ConvUnit::new(store, rng, modules, format!("decoder.ppm.bin{g}"), d, cb, q, conv1(1), true)))
                    .collect();
                let out_c = (cb / 2).max(4);
                let fuse = ConvUnit::new(store, rng, modules, "decoder.fuse".into(), d, cb + 3 * q, out_c, conv3(1, 1), true);
                (Decoder::Pyramid(PyramidDecoder { bins, fuse, input: None }), out_c)
            }
        }
    }

    fn forward(&mut self, store: &mut ParamStore, feats: &[Tensor], pass: Pass, cap: &mut Capture) -> Tensor {
        match self {
            Decoder::Unet(levels) => {
                let mut x = feats.last().expect("features").clone();
                for level in levels.iter_mut() {
                    let skip = &feats[level.skip];
                    level.below = (x.c, x.h, x.w);
                    let up = resize_bilinear(&x, skip.h, skip.w);
                    let cat = concat_channels(&[&up, skip]);
                    let h = level.conv1.forward(store, &cat, pass);
                    cap.push(&level.conv1.path, &h);
                    x = level.conv2.forward(store, &h, pass);
                    cap.push(&level.conv2.path, &x);
                }
                x
            }
            Decoder::Aspp(dec) => {
                let x = feats.last().expect("features");
                let outs: Vec<Tensor> = dec
                    .branches
                    .iter_mut()
                    .map(|b| {
                        let y = b.forward(store, x, pass);
                        cap.push(&b.path, &y);
                        y
                    })
                    .collect();
                let cat = concat_channels(&outs.iter().collect::<Vec<_>>());
                let p = dec.project.forward(store, &cat, pass);
                cap.push(&dec.project.path, &p);
                let low = dec.lowlevel.forward(store, &feats[dec.low_index], pass);
                cap.push(&dec.lowlevel.path, &low);
                let up = resize_bilinear(&p, low.h, low.w);
                dec.shapes = Some((p.c, p.h, p.w, low.c));
                let cat2 = concat_channels(&[&up, &low]);
                let r = dec.refine.forward(store, &cat2, pass);
                cap.push(&dec.refine.path, &r);
                r
            }
            Decoder::Pyramid(dec) => {
                let x = feats.last().expect("features");
                dec.input = Some((x.c, x.h, x.w));
                let mut ups = Vec::new();
                for (g, unit) in dec.bins.iter_mut() {
                    let pooled = adaptive_avg_pool(x, *g);
                    let y = unit.forward(store, &pooled, pass);
                    cap.push(&unit.path, &y);
                    ups.push(resize_bilinear(&y, x.h, x.w));
                }
                let mut parts = vec![x];
                parts.extend(ups.iter());
                let cat = concat_channels(&parts);
                let y = dec.fuse.forward(store, &cat, pass);
                cap.push(&dec.fuse.path, &y);
                y
            }
        }
    }

    /// Returns gradients for every encoder feature (stem, stage1..stageS).
    fn backward(&mut self, store: &mut ParamStore, dy: Tensor, num_feats: usize, exec: Exec) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; num_feats];
        match self {
            Decoder::Unet(levels) => {
                let mut g = dy;
                for level in levels.iter_mut().rev() {
                    let dh = level.conv2.backward(store, g, true, exec).expect("dx");
                    let dcat = level.conv1.backward(store, dh, true, exec).expect("dx");
                    let (bc, bh, bw) = level.below;
                    let mut parts = split_channels(&dcat, &[bc, dcat.c - bc]).into_iter();
                    let dup = parts.next().expect("two parts");
                    let dskip = parts.next().expect("two parts");
                    add_grad(&mut grads[level.skip], dskip);
                    g = resize_bilinear_backward(&dup, bh, bw);
                }
                add_grad(&mut grads[num_feats - 1], g);
            }
            Decoder::Aspp(dec) => {
                let (pc, ph, pw, lc) = dec.shapes.expect("aspp forward before backward");
                let dcat2 = dec.refine.backward(store, dy, true, exec).expect("dx");
                let mut parts = split_channels(&dcat2, &[pc, lc]).into_iter();
                let dup = parts.next().expect("two parts");
                let dlow = parts.next().expect("two parts");
                let dlow_in = dec.lowlevel.backward(store, dlow, true, exec).expect("dx");
                add_grad(&mut grads[dec.low_index], dlow_in);
                let dp = resize_bilinear_backward(&dup, ph, pw);
                let dcat = dec.project.backward(store, dp, true, exec).expect("dx");
                let widths: Vec<usize> = dec.branches.iter().map(|b| b.conv.cout).collect();
                for (b, part) in dec.branches.iter_mut().zip(split_channels(&dcat, &widths)) {
                    let dx = b.backward(store, part, true, exec).expect("dx");
                    add_grad(&mut grads[num_feats - 1], dx);
                }
            }
            Decoder::Pyramid(dec) => {
                let (c, h, w) = dec.input.expect("pyramid forward before backward");
                let dcat = dec.fuse.backward(store, dy, true, exec).expect("dx");
                let mut widths = vec![c];
                widths.extend(dec.bins.iter().map(|(_, u)| u.conv.cout));
                let mut parts = split_channels(&dcat, &widths).into_iter();
                let mut dx = parts.next().expect("input part");
                for ((g, unit), part) in dec.bins.iter_mut().zip(parts) {
                    let dyb = resize_bilinear_backward(&part, *g, *g);
                    let dpooled = unit.backward(store, dyb, true, exec).expect("dx");
                    add_inplace(&mut dx, &adaptive_avg_pool_backward(&dpooled, h, w));
                }
                add_grad(&mut grads[num_feats - 1], dx);
            }
        }
        grads
    }

    fn clear(&mut self) {
        match self {
            Decoder::Unet(levels) => levels.iter_mut().for_each(|l| {
                l.conv1.clear();
                l.conv2.clear();
            }),
            Decoder::Aspp(d) => {
                d.branches.iter_mut().for_each(ConvUnit::clear);
                d.project.clear();
                d.lowlevel.clear();
                d.refine.clear();
            }
            Decoder::Pyramid(d) => {
                d.bins.iter_mut().for_each(|(_, u)| u.clear());
                d.fuse.clear();
            }
        }
    }
}

/// Encoder + decoder + 1x1 classification head producing full-resolution
/// logits.
#[derive(Debug, Clone)]
pub struct SegmentationModel {
    spec: EncoderSpec,
    kind: FrameworkKind,
    num_classes: usize,
    init_seed: u64,
    pub(crate) store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    head: ConvUnit,
    modules: Vec<ModuleInfo>,
    encoder_trainable: bool,
    exec: Exec,
    pending: Option<PendingBackward>,
}

#[derive(Debug, Clone)]
struct PendingBackward {
    head_hw: (usize, usize),
    num_feats: usize,
    encoder_cached: bool,
}

/// Builds a model whose weights are drawn from `seed` (He-normal
/// convolutions, zero biases, unit/zero batch-norm affine parameters).
pub fn build_model(spec: &EncoderSpec, kind: FrameworkKind, num_classes: usize, seed: u64) -> Result<SegmentationModel, ModelError> {
    spec.validate()?;
    if num_classes < 2 {
        return Err(ModelError::InvalidSpec { field: "num_classes".into(), reason: "need at least 2 classes".into() });
    }
    let mut rng = seeded(derive(seed, INIT_STREAM));
    let mut store = ParamStore::default();
    let mut modules = Vec::new();
    let encoder = Encoder::new(&mut store, &mut rng, &mut modules, spec);
    let (decoder, dec_c) = Decoder::new(&mut store, &mut rng, &mut modules, spec, kind);
    let head = ConvUnit::new(&mut store, &mut rng, &mut modules, "head".into(), Role::Head, dec_c, num_classes, conv1(1), false);
    Ok(SegmentationModel {
        spec: spec.clone(),
        kind,
        num_classes,
        init_seed: seed,
        store,
        encoder,
        decoder,
        head,
        modules,
        encoder_trainable: true,
        exec: Exec::current(),
        pending: None,
    })
}

impl SegmentationModel {
    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn kind(&self) -> FrameworkKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Convolutional modules in forward (topological) order.
    pub fn module_paths(&self) -> &[ModuleInfo] {
        &self.modules
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.store.iter().filter(|p| p.kind.is_trainable()).map(|p| p.value.len()).sum()
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// When `false`, encoder tensors are excluded from optimisation and the
    /// encoder's batch-norm layers run on (and never update) their running
    /// statistics.
    pub fn set_encoder_trainable(&mut self, trainable: bool) {
        self.encoder_trainable = trainable;
    }

    pub fn encoder_trainable(&self) -> bool {
        self.encoder_trainable
    }

    /// Whether optimisation may update the tensor with role `role`.
    pub fn role_trainable(&self, role: Role) -> bool {
        role != Role::Encoder || self.encoder_trainable
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        if x.c != self.spec.in_channels {
            return Err(ModelError::ChannelMismatch { expected: self.spec.in_channels, found: x.c });
        }
        let stride = self.spec.output_stride();
        if x.h == 0 || x.w == 0 || !x.h.is_multiple_of(stride) || !x.w.is_multiple_of(stride) {
            return Err(ModelError::InputNotDivisible { height: x.h, width: x.w, stride });
        }
        Ok(())
    }

    fn run(&mut self, x: &Tensor, mode: Mode, cap: &mut Capture) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let train = mode == Mode::Train;
        let exec = self.exec;
        let enc_pass = Pass { train_bn: train && self.encoder_trainable, keep: train && self.encoder_trainable, exec };
        let dec_pass = Pass { train_bn: train, keep: train, exec };
        self.encoder.clear();
        self.decoder.clear();
        self.head.clear();
        let feats = self.encoder.forward(&mut self.store, x, enc_pass, cap);
        let y = self.decoder.forward(&mut self.store, &feats, dec_pass, cap);
        let logits = self.head.forward(&mut self.store, &y, dec_pass);
        cap.push(&self.head.path, &logits);
        self.pending = train.then_some(PendingBackward {
            head_hw: (logits.h, logits.w),
            num_feats: feats.len(),
            encoder_cached: enc_pass.keep,
        });
        Ok(resize_bilinear(&logits, x.h, x.w))
    }

    /// Logits `[N, K, H, W]` at input resolution.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        let mut cap = Capture { enabled: false, items: Vec::new() };
        self.run(x, mode, &mut cap)
    }

    /// Eval-mode forward returning the logits and each module's output, in
    /// `module_paths` order.
    pub fn forward_capture(&mut self, x: &Tensor) -> Result<(Tensor, Vec<(String, Tensor)>), ModelError> {
        let mut cap = Capture { enabled: true, items: Vec::new() };
        let logits = self.run(x, Mode::Eval, &mut cap)?;
        Ok((logits, cap.items))
    }

    /// Accumulates parameter gradients for the last `Mode::Train` forward.
    pub fn backward(&mut self, dlogits: &Tensor) {
        let pending = self.pending.take().expect("backward requires a preceding Mode::Train forward");
        let exec = self.exec;
        let (hh, hw) = pending.head_hw;
        let dhead = resize_bilinear_backward(dlogits, hh, hw);
        let dy = self.head.backward(&mut self.store, dhead, true, exec).expect("dx");
        let grads = self.decoder.backward(&mut self.store, dy, pending.num_feats, exec);
        if pending.encoder_cached && self.encoder_trainable {
            self.encoder.backward(&mut self.store, grads, exec);
        }
    }

    pub fn zero_grad(&mut self) {
        self.store.zero_grad();
    }
}
