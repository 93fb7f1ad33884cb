//! Epoch loop shared by pretraining and fine-tuning.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::config::{EncoderMode, LabelSource, Phase, TrainConfig};
use super::log::{EpochRecord, EvalRecord, RunLog, StepRecord};
use super::loss::combined_loss;
use super::optim::Adam;
use super::TrainError;
use crate::analysis::evaluate_segmentation;
use crate::data::{augment, ClassMap, ClassMask, Corpus, Image, PatchTriple, Split};
use crate::exec::Exec;
use crate::models::{CheckpointBundle, ImportScope, Mode, Provenance, SegmentationModel, Tensor};
use crate::rng::{derive, seeded};

const SHUFFLE_STREAM: u64 = 0x51;
const AUGMENT_STREAM: u64 = 0x52;
const CROP_STREAM: u64 = 0x53;

/// Training patches grouped by location; each group holds the co-registered
/// appearance variants of one location.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub locations: Vec<Vec<PatchTriple>>,
    /// Needed for [`LabelSource::ExactMapped`].
    pub class_map: Option<ClassMap>,
}

impl TrainingSet {
    pub fn from_corpus(corpus: &Corpus, split: Split) -> Self {
        let locations = corpus.locations(split).into_iter().map(|g| g.into_iter().cloned().collect()).collect();
        TrainingSet { locations, class_map: None }
    }

    pub fn with_class_map(mut self, map: ClassMap) -> Self {
        self.class_map = Some(map);
        self
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    fn label(&self, t: &PatchTriple, source: LabelSource) -> Result<ClassMask, TrainError> {
        match source {
            LabelSource::Noisy => Ok(t.noisy_mask.clone()),
            LabelSource::Exact => Ok(t.exact_mask.clone()),
            LabelSource::ExactMapped => self
                .class_map
                .as_ref()
                .map(|m| m.apply(&t.exact_mask))
                .ok_or_else(|| TrainError::Config { field: "label_source".into(), reason: "exact_mapped needs a class map".into() }),
        }
    }
}

/// Held-out images with reference masks.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub images: Vec<Image>,
    pub masks: Vec<ClassMask>,
    pub class_names: Vec<String>,
}

impl EvalSet {
    /// First variant of every location of `split`, scored against exact
    /// masks on the full class set.
    pub fn from_corpus(corpus: &Corpus, split: Split) -> Self {
        let (images, masks) = corpus.locations(split).into_iter().map(|g| (g[0].image.clone(), g[0].exact_mask.clone())).unzip();
        EvalSet { images, masks, class_names: corpus.class_names.clone() }
    }

    /// Scores against the exact masks relabelled by `map`.
    pub fn mapped(corpus: &Corpus, split: Split, map: &ClassMap) -> Self {
        let mut set = EvalSet::from_corpus(corpus, split);
        set.masks = set.masks.iter().map(|m| map.apply(m)).collect();
        set.class_names = corpus.noisy_class_names.clone();
        set
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: CheckpointBundle,
    pub log: RunLog,
    /// `(epoch, bundle)` at every checkpoint interval.
    pub snapshots: Vec<(usize, CheckpointBundle)>,
}

fn stack_images(images: &[&Image]) -> Tensor {
    let (c, h, w) = (images[0].channels, images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for im in images {
        data.extend_from_slice(&im.data);
    }
    Tensor::from_vec(images.len(), c, h, w, data)
}

/// Arg-max class per pixel (lowest index on ties).
pub fn argmax_masks(logits: &Tensor) -> Vec<ClassMask> {
    let (k, hw) = (logits.c, logits.plane());
    (0..logits.n)
        .map(|i| {
            let s = logits.sample(i);
            let data = (0..hw)
                .map(|j| {
                    let mut best = 0;
                    for c in 1..k {
                        if s[c * hw + j] > s[best * hw + j] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            ClassMask { height: logits.h, width: logits.w, num_classes: k as u8, data }
        })
        .collect()
}

/// Inference-mode predictions in batches of `batch_size`.
pub fn predict_masks(model: &mut SegmentationModel, images: &[Image], batch_size: usize) -> Result<Vec<ClassMask>, TrainError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let x = stack_images(&chunk.iter().collect::<Vec<_>>());
        let logits = model.forward(&x, Mode::Eval)?;
        if !logits.is_finite() {
            return Err(TrainError::NonFiniteLogits);
        }
        out.extend(argmax_masks(&logits));
    }
    Ok(out)
}

fn crop(image: &Image, mask: &ClassMask, size: usize, y0: usize, x0: usize) -> (Image, ClassMask) {
    let c = image.channels;
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let row = (ch * image.height + y) * image.width;
            data.extend_from_slice(&image.data[row + x0..row + x0 + size]);
        }
    }
    let mut m = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        m.extend_from_slice(&mask.data[y * mask.width + x0..y * mask.width + x0 + size]);
    }
    (
        Image { channels: c, height: size, width: size, data },
        ClassMask { height: size, width: size, num_classes: mask.num_classes, data: m },
    )
}

/// Supervised pretraining (default: noisy labels, constant lr 1e-3).
pub fn pretrain(data: &TrainingSet, model: &mut SegmentationModel, config: &TrainConfig) -> Result<TrainOutput, TrainError> {
    if config.phase != Phase::Pretrain {
        return Err(TrainError::Config { field: "phase".into(), reason: "pretrain requires phase = pretrain".into() });
    }
    model.set_encoder_trainable(true);
    run(data, None, model, config)
}

/// Downstream fine-tuning (default: exact labels, cosine schedule from
/// 5e-4). With `init`, the bundle's encoder is imported strictly first.
pub fn finetune(
    data: &TrainingSet,
    eval: Option<&EvalSet>,
    model: &mut SegmentationModel,
    init: Option<&CheckpointBundle>,
    config: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    if config.phase != Phase::Finetune {
        return Err(TrainError::Config { field: "phase".into(), reason: "finetune requires phase = finetune".into() });
    }
    config.validate()?;
    if let Some(bundle) = init {
        model.import_checkpoint(bundle, ImportScope::EncoderOnly, true)?;
    }
    model.set_encoder_trainable(config.encoder_mode == EncoderMode::Finetuned);
    run(data, eval, model, config)
}

fn run(data: &TrainingSet, eval: Option<&EvalSet>, model: &mut SegmentationModel, config: &TrainConfig) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    if let Some(size) = config.crop_size {
        let (h, w) = (data.locations[0][0].height(), data.locations[0][0].width());
        if size == 0 || size > h.min(w) {
            return Err(TrainError::Config { field: "crop_size".into(), reason: format!("must be in 1..={}", h.min(w)) });
        }
    }
    let source = config.labels();
    let schedule = config.resolved_schedule();
    let base_lr = config.lr();
    let n = data.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let provenance = |epoch| Provenance { config_hash: config.hash(), seed: config.seed, epoch };

    let mut log = RunLog::new(config.phase, config.hash());
    let mut adam = Adam::new(config.weight_decay, config.grad_clip);
    let mut shuffle_rng = seeded(derive(config.seed, SHUFFLE_STREAM));
    let aug_root = derive(config.seed, AUGMENT_STREAM);
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let exec = Exec::current();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = base_lr;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<Result<(Image, ClassMask), TrainError>> = exec.map(idx.len(), |pos| {
                let group = &data.locations[idx[pos]];
                let seed = derive(aug_root, (epoch * n + batch * config.batch_size + pos) as u64);
                let t = if config.augment { augment(&group[0], group, seed)? } else { group[0].clone() };
                let mask = data.label(&t, source)?;
                Ok(match config.crop_size {
                    Some(size) => {
                        let mut r = seeded(derive(seed, CROP_STREAM));
                        let y0 = r.random_range(0..=t.height() - size);
                        let x0 = r.random_range(0..=t.width() - size);
                        crop(&t.image, &mask, size, y0, x0)
                    }
                    None => (t.image, mask),
                })
            });
            let samples = samples.into_iter().collect::<Result<Vec<_>, _>>()?;
            let x = stack_images(&samples.iter().map(|s| &s.0).collect::<Vec<_>>());
            let targets: Vec<u8> = samples.iter().flat_map(|s| s.1.data.iter().copied()).collect();

            lr = schedule.lr(step, total_steps, base_lr);
            let logits = model.forward(&x, Mode::Train)?;
            let out = match combined_loss(&logits, &targets, config.loss_weights) {
                Err(TrainError::NonFiniteLogits) => return Err(TrainError::NonFinite { epoch, batch, lr }),
                other => other?,
            };
            if !out.value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch, lr });
            }
            model.zero_grad();
            model.backward(&out.grad);
            adam.step(model, lr);
            loss_sum += out.value;
            log.steps.push(StepRecord { step, epoch, batch, lr, loss: out.value });
            step += 1;
        }
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / batches_per_epoch as f64,
            lr,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        if let Some(ev) = eval {
            if epoch % config.eval_interval == 0 || epoch == config.epochs {
                let preds = predict_masks(model, &ev.images, config.batch_size)?;
                let metrics = evaluate_segmentation(&preds, &ev.masks, &ev.class_names)?;
                log.evals.push(EvalRecord { epoch, metrics });
            }
        }
        if config.checkpoint_interval.is_some_and(|k| epoch % k == 0) {
            snapshots.push((epoch, model.export_checkpoint(provenance(epoch))));
        }
    }
    Ok(TrainOutput { checkpoint: model.export_checkpoint(provenance(config.epochs)), log, snapshots })
}
