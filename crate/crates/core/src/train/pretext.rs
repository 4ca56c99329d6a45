//! Episode sampling, the pretext training loop and pretext evaluation.
//!
//! One episode pairs a source crop with a noise crop, draws a noise mask,
//! splits it over the injection levels and asks the discriminator head to
//! mark, per cell, which features came from the noise image.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentationConfig};
use super::image::{load_dir, normalize, DatasetStats, Image};
use super::optim::{lr_at_epoch, sgd_step, SgdParams, SgdState};
use super::{mix_seed, Supervision, TrainConfig};
use crate::autodiff::{Tape, Var};
use crate::encoder::{BoundNetwork, EncoderConfig, Network};
use crate::error::{Error, Result};
use crate::grid::BinaryGrid;
use crate::io::checkpoint;
use crate::labels::semantic_from_mask;
use crate::layer_split::{split_mask_sites, LayerMaskSet};
use crate::noise_mask::{gen_noise_mask_with, MaskGenConfig, NoiseMask};
use crate::ops::{focal_cell, FocalParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Name of the single tensor that marks an oracle checkpoint.
pub const ORACLE_TENSOR: &str = "oracle.logit";

/// Everything that shapes an episode and a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretextSetup {
    pub mask: MaskGenConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub augment: AugmentationConfig,
}

impl PretextSetup {
    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        self.encoder.validate()?;
        self.encoder.check_crop(self.mask.crop)?;
        self.train.validate()?;
        self.augment.validate()
    }

    /// Spatial dims of the discriminator output and its target.
    pub fn supervision_dims(&self) -> (usize, usize) {
        match self.train.supervision {
            Supervision::Canonical => self.mask.grid_dims(),
            Supervision::Crop => (self.mask.crop[0], self.mask.crop[1]),
        }
    }
}

/// Source and noise images plus the source statistics used to normalize both.
#[derive(Debug, Clone)]
pub struct DatasetPairing {
    pub source: Vec<Image>,
    pub noise: Vec<Image>,
    pub stats: DatasetStats,
}

impl DatasetPairing {
    /// Statistics are computed from `source` only.
    pub fn new(source: Vec<Image>, noise: Vec<Image>) -> Result<Self> {
        if source.is_empty() || noise.is_empty() {
            return Err(Error::Data("source and noise datasets must be non-empty".into()));
        }
        let stats = DatasetStats::compute(&source)?;
        Ok(DatasetPairing { source, noise, stats })
    }

    pub fn from_dirs(source: &Path, noise: &Path) -> Result<Self> {
        Self::new(load_dir(source)?, load_dir(noise)?)
    }

    /// Upscales images smaller than the crop.
    fn fit_crop(&mut self, crop: [usize; 2]) {
        for img in self.source.iter_mut().chain(self.noise.iter_mut()) {
            if img.height < crop[0] || img.width < crop[1] {
                *img = std::mem::replace(img, Image::filled(1, 1, [0.0; 3])).ensure_min_side(crop[0], crop[1]);
            }
        }
    }
}

/// One injection episode, ready for a forward pass.
#[derive(Debug, Clone)]
pub struct Episode<T> {
    /// Augmented source crop before normalization.
    pub source_image: Image,
    pub source: Tensor<T>,
    pub noise: Tensor<T>,
    pub mask: NoiseMask,
    pub layers: LayerMaskSet,
    /// Semantic label at the supervision resolution.
    pub target: BinaryGrid,
}

fn random_crop<R: Rng + ?Sized>(img: &Image, crop: [usize; 2], rng: &mut R) -> Image {
    let y = rng.random_range(0..=img.height - crop[0]);
    let x = rng.random_range(0..=img.width - crop[1]);
    img.crop(y, x, crop[0], crop[1])
}

/// Draws one episode from `rng`. Augmentation is skipped when `augmented` is false.
pub fn sample_episode<T: Scalar, R: Rng + ?Sized>(
    setup: &PretextSetup,
    pairing: &DatasetPairing,
    rng: &mut R,
    augmented: bool,
) -> Result<Episode<T>> {
    let crop = setup.mask.crop;
    let none = AugmentationConfig::none();
    let aug = if augmented { &setup.augment } else { &none };

    let src_idx = rng.random_range(0..pairing.source.len());
    let src_img = augment(&random_crop(&pairing.source[src_idx], crop, rng), aug, rng);
    let source: Tensor<T> = normalize(&src_img, &pairing.stats)?;
    let noise = if setup.train.self_pair {
        source.clone()
    } else {
        let idx = rng.random_range(0..pairing.noise.len());
        let img = augment(&random_crop(&pairing.noise[idx], crop, rng), aug, rng);
        normalize(&img, &pairing.stats)?
    };

    let mask = gen_noise_mask_with(&setup.mask, rng)?;
    let layers = split_mask_sites(
        &mask,
        &setup.encoder.level_dims(crop),
        &setup.encoder.injection_sites(),
        setup.encoder.raster,
        rng,
    )?;
    let (th, tw) = setup.supervision_dims();
    let target = semantic_from_mask(&mask, th, tw)?;
    Ok(Episode {
        source_image: src_img,
        source,
        noise,
        mask,
        layers,
        target,
    })
}

/// Handles produced by one episode forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeVars {
    pub logits: Var,
    pub loss: Var,
}

/// Noise pyramid, injected source encoding, neck, head and focal loss.
pub fn episode_forward<T: Scalar>(
    tape: &mut Tape<T>,
    net: &BoundNetwork,
    episode: &Episode<T>,
    focal: FocalParams,
) -> Result<EpisodeVars> {
    let noise = tape.constant(episode.noise.clone());
    let source = tape.constant(episode.source.clone());
    episode_graph(tape, net, source, noise, &episode.layers, &episode.target, focal)
}

/// [`episode_forward`] over already recorded image leaves.
pub fn episode_graph<T: Scalar>(
    tape: &mut Tape<T>,
    net: &BoundNetwork,
    source: Var,
    noise: Var,
    layers: &LayerMaskSet,
    target: &BinaryGrid,
    focal: FocalParams,
) -> Result<EpisodeVars> {
    let noise = net.encode_plain(tape, noise)?;
    let composite = net.encode_injected(tape, source, &noise, layers)?;
    let fused = net.neck(tape, &composite, target.dims())?;
    let logits = net.head(tape, fused)?;
    let loss = tape.focal_loss(logits, target, focal)?;
    Ok(EpisodeVars { logits, loss })
}

/// Cells whose predicted noise probability exceeds 0.5.
pub fn predict_mask<T: Scalar>(logits: &Tensor<T>, dims: (usize, usize)) -> Result<BinaryGrid> {
    BinaryGrid::from_vec(dims.0, dims.1, logits.data().iter().map(|&z| z > T::zero()).collect())
}

/// Intersection over union; two empty grids score 1.
pub fn iou(pred: &BinaryGrid, truth: &BinaryGrid) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.cells().iter().zip(truth.cells()) {
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub pretext_iou: f64,
}

pub const METRICS_HEADER: &str = "epoch,step,lr,loss,pretext_iou";

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{METRICS_HEADER}").expect("vec write");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.step, r.lr, r.loss, r.pretext_iou).expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub network: Network<T>,
    pub metrics: Vec<MetricRow>,
}

struct SampleResult<T> {
    loss: f64,
    iou: f64,
    grads: Vec<Tensor<T>>,
}

fn run_sample<T: Scalar>(
    setup: &PretextSetup,
    pairing: &DatasetPairing,
    network: &Network<T>,
    seed: u64,
) -> Result<SampleResult<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episode = sample_episode::<T, _>(setup, pairing, &mut rng, true)?;
    let mut tape = Tape::new();
    let net = network.bind(&mut tape, true);
    let vars = episode_forward(&mut tape, &net, &episode, setup.train.focal())?;
    let grads = tape.backward(vars.loss)?;
    let pred = predict_mask(tape.value(vars.logits), episode.target.dims())?;
    Ok(SampleResult {
        loss: tape.value(vars.loss).data()[0].to_f64_lossy(),
        iou: iou(&pred, &episode.target),
        grads: net.vars.iter().map(|&v| grads.grad(&tape, v)).collect(),
    })
}

/// Trains encoder, neck and head on the pretext task.
///
/// Each sample of step `k` draws from a generator seeded by
/// `mix_seed(train.seed, k * batch_size + i)`, so the run is reproducible
/// for any thread count. Checkpoints go to `out_dir` when given.
pub fn train_pretext<T: Scalar>(
    setup: &PretextSetup,
    pairing: &DatasetPairing,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    setup.validate()?;
    let mut pairing = pairing.clone();
    pairing.fit_crop(setup.mask.crop);
    let cfg = &setup.train;
    let mut network = Network::<T>::init(&setup.encoder)?;
    let mut state = SgdState::new();
    let steps_per_epoch = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        pairing.source.len().div_ceil(cfg.batch_size)
    };
    let mut metrics = Vec::new();
    let mut step = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        for _ in 0..steps_per_epoch {
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
            let base = (step * cfg.batch_size) as u64;
            let results: Vec<SampleResult<T>> = (0..cfg.batch_size as u64)
                .into_par_iter()
                .map(|i| run_sample(setup, &pairing, &network, mix_seed(cfg.seed, base + i)))
                .collect::<Result<_>>()?;

            let scale = T::one() / T::from_usize(cfg.batch_size).expect("batch fits");
            let mut grads: Vec<Tensor<T>> = results[0].grads.clone();
            for r in &results[1..] {
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.add_assign(g);
                }
            }
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            let hp = SgdParams {
                lr,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            };
            sgd_step(network.params.iter_mut().map(|(_, t)| t), &grads, hp, &mut state)?;

            let n = results.len() as f64;
            let loss = results.iter().map(|r| r.loss).sum::<f64>() / n;
            if !loss.is_finite() {
                return Err(Error::Data(format!("loss diverged at step {step}")));
            }
            metrics.push(MetricRow {
                epoch,
                step,
                lr,
                loss,
                pretext_iou: results.iter().map(|r| r.iou).sum::<f64>() / n,
            });
            step += 1;
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                checkpoint::write(&dir.join(format!("checkpoint_epoch{:04}.inod", epoch + 1)), &network.params)?;
            }
        }
        log::info!(
            "epoch {epoch}: lr {lr} loss {:.5}",
            metrics.last().map_or(f64::NAN, |m: &MetricRow| m.loss)
        );
    }
    if let Some(dir) = out_dir {
        checkpoint::write(&dir.join("checkpoint.inod"), &network.params)?;
        write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
    }
    Ok(TrainOutcome { network, metrics })
}

/// What produces per-cell logits during evaluation.
#[derive(Debug, Clone)]
pub enum Discriminator<T> {
    Network(Network<T>),
    /// Emits `+logit` on true noise cells and `-logit` elsewhere.
    Oracle { logit: f64 },
}

impl<T: Scalar> Discriminator<T> {
    /// Builds from checkpoint tensors; a lone [`ORACLE_TENSOR`] yields an oracle.
    pub fn from_tensors(tensors: Vec<(String, Tensor<T>)>, encoder: &EncoderConfig) -> Result<Self> {
        if let [(name, t)] = &tensors[..] {
            if name == ORACLE_TENSOR {
                return Ok(Discriminator::Oracle {
                    logit: t.data()[0].to_f64_lossy(),
                });
            }
        }
        let mut net = Network::init(encoder)?;
        net.load_params(tensors)?;
        Ok(Discriminator::Network(net))
    }

    pub fn load(path: &Path, encoder: &EncoderConfig) -> Result<Self> {
        Self::from_tensors(checkpoint::read(path)?, encoder)
    }

    fn logits(&self, episode: &Episode<T>, focal: FocalParams) -> Result<Tensor<T>> {
        match self {
            Discriminator::Oracle { logit } => {
                let z = T::from_f64_lossy(*logit);
                let (h, w) = episode.target.dims();
                let data = episode.target.cells().iter().map(|&t| if t { z } else { -z }).collect();
                Tensor::from_vec(&[1, h, w], data)
            }
            Discriminator::Network(net) => {
                let mut tape = Tape::new();
                let bound = net.bind(&mut tape, false);
                let vars = episode_forward(&mut tape, &bound, episode, focal)?;
                Ok(tape.value(vars.logits).clone())
            }
        }
    }
}

pub fn oracle_checkpoint(logit: f64) -> Vec<(String, Tensor<f64>)> {
    vec![(ORACLE_TENSOR.to_string(), Tensor::scalar(logit))]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub episode: usize,
    pub iou: f64,
    pub loss: f64,
    pub noise_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_iou: f64,
    pub mean_loss: f64,
    /// Fraction of positive target cells pooled over all episodes.
    pub positive_fraction: f64,
    pub samples: Vec<SampleReport>,
}

/// Mean IoU of thresholded predictions over fresh, unaugmented episodes
/// seeded from `train.eval_seed`.
pub fn eval_pretext<T: Scalar>(
    disc: &Discriminator<T>,
    setup: &PretextSetup,
    pairing: &DatasetPairing,
    n_samples: usize,
) -> Result<EvalReport> {
    setup.validate()?;
    if n_samples == 0 {
        return Err(Error::arg("n_samples", "must be positive"));
    }
    if let Discriminator::Network(net) = disc {
        if net.config != setup.encoder {
            return Err(Error::Config("checkpoint network was built from a different encoder config".into()));
        }
    }
    let mut pairing = pairing.clone();
    pairing.fit_crop(setup.mask.crop);
    let focal = setup.train.focal();
    let samples: Vec<(SampleReport, usize, usize)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(setup.train.eval_seed, i as u64));
            let ep = sample_episode::<T, _>(setup, &pairing, &mut rng, false)?;
            let logits = disc.logits(&ep, focal)?;
            let pred = predict_mask(&logits, ep.target.dims())?;
            let loss = logits
                .data()
                .iter()
                .zip(ep.target.cells())
                .map(|(&z, &t)| focal_cell(z, t, focal).0.to_f64_lossy())
                .sum::<f64>()
                / ep.target.len() as f64;
            Ok((
                SampleReport {
                    episode: i,
                    iou: iou(&pred, &ep.target),
                    loss,
                    noise_fraction: crate::noise_mask::mask_fraction(&ep.mask),
                },
                ep.target.count_ones(),
                ep.target.len(),
            ))
        })
        .collect::<Result<_>>()?;
    let n = n_samples as f64;
    let ones: usize = samples.iter().map(|s| s.1).sum();
    let cells: usize = samples.iter().map(|s| s.2).sum();
    let samples: Vec<SampleReport> = samples.into_iter().map(|s| s.0).collect();
    Ok(EvalReport {
        mean_iou: samples.iter().map(|s| s.iou).sum::<f64>() / n,
        mean_loss: samples.iter().map(|s| s.loss).sum::<f64>() / n,
        positive_fraction: ones as f64 / cells as f64,
        samples,
    })
}

/// Best constant prediction when a fraction `positive` of cells is noise.
///
/// Returns `(logit, loss)` minimizing
/// `positive * l(z, 1) + (1 - positive) * l(z, 0)` over constant logits `z`.
pub fn base_rate_loss(positive: f64, focal: FocalParams) -> (f64, f64) {
    let f = |z: f64| positive * focal_cell(z, true, focal).0 + (1.0 - positive) * focal_cell(z, false, focal).0;
    // coarse scan, then golden-section refinement around the best grid point
    let (mut best, mut best_v) = (0.0, f(0.0));
    let mut z = -30.0;
    while z <= 30.0 {
        let v = f(z);
        if v < best_v {
            best = z;
            best_v = v;
        }
        z += 0.01;
    }
    let (mut a, mut b) = (best - 0.02, best + 0.02);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let z = 0.5 * (a + b);
    (z, f(z))
}
