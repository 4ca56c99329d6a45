//! Multi-level convolutional encoder with feature injection, plus the
//! fusion neck and per-cell discriminator head.
//!
//! Level `l` computes `relu(conv_l(previous))`. With injection, the level
//! output is merged with the noise stream's level output under the layer
//! mask before it feeds level `l + 1`, so injected features propagate
//! upward through every later convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::BinaryGrid;
use crate::layer_split::{LayerMaskSet, RasterMode};
use crate::ops;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Channels of the stem conv; 0 disables the stem.
    pub stem_channels: usize,
    pub stem_stride: usize,
    /// Output channels per injection level.
    pub channels: Vec<usize>,
    /// Stride per injection level.
    pub strides: Vec<usize>,
    /// Square kernel side for every stem/level conv; padding is `kernel / 2`.
    pub kernel: usize,
    /// Per-level injection switch; empty means every level injects.
    pub inject: Vec<bool>,
    /// Common channel width of the neck.
    pub neck_channels: usize,
    pub raster: RasterMode,
    /// Weight-init seed.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            stem_channels: 16,
            stem_stride: 2,
            channels: vec![16, 32, 64, 128],
            strides: vec![2, 2, 2, 2],
            kernel: 3,
            inject: Vec::new(),
            neck_channels: 32,
            raster: RasterMode::Coverage,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Cumulative stride (input pixels per cell) of every level.
    pub fn cumulative_strides(&self) -> Vec<usize> {
        let mut s = if self.stem_channels > 0 { self.stem_stride } else { 1 };
        self.strides
            .iter()
            .map(|&st| {
                s *= st;
                s
            })
            .collect()
    }

    pub fn level_dims(&self, crop: [usize; 2]) -> Vec<(usize, usize)> {
        self.cumulative_strides()
            .iter()
            .map(|&s| (crop[0] / s, crop[1] / s))
            .collect()
    }

    pub fn injection_sites(&self) -> Vec<bool> {
        if self.inject.is_empty() {
            vec![true; self.levels()]
        } else {
            self.inject.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.levels() == 0 {
            return cfg("encoder needs at least one level".into());
        }
        if self.strides.len() != self.levels() {
            return cfg(format!(
                "encoder.strides has {} entries for {} levels",
                self.strides.len(),
                self.levels()
            ));
        }
        if !self.inject.is_empty() && self.inject.len() != self.levels() {
            return cfg(format!(
                "encoder.inject has {} entries for {} levels",
                self.inject.len(),
                self.levels()
            ));
        }
        if !self.injection_sites().iter().any(|&b| b) {
            return cfg("encoder.inject disables every level".into());
        }
        if self.kernel == 0 || self.in_channels == 0 || self.neck_channels == 0 {
            return cfg("encoder.kernel, in_channels and neck_channels must be positive".into());
        }
        if self.channels.contains(&0) || self.strides.contains(&0) || self.stem_stride == 0 {
            return cfg("encoder channels and strides must be positive".into());
        }
        Ok(())
    }

    /// Checks that `crop` divides by the cumulative stride at every level.
    pub fn check_crop(&self, crop: [usize; 2]) -> Result<()> {
        for (l, s) in self.cumulative_strides().into_iter().enumerate() {
            if crop[0] % s != 0 || crop[1] % s != 0 {
                return Err(Error::Config(format!(
                    "crop {}x{} is not divisible by level {} cumulative stride {s}",
                    crop[0], crop[1], l + 1
                )));
            }
        }
        Ok(())
    }
}

/// Per-level feature tensors with their cumulative strides.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<Tensor<T>>,
    pub strides: Vec<usize>,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.levels
            .iter()
            .map(|t| (t.shape()[1], t.shape()[2]))
            .collect()
    }
}

/// Named parameter tensor.
pub type NamedTensor<T> = (String, Tensor<T>);

/// Encoder, neck and discriminator head weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: EncoderConfig,
    pub params: Vec<NamedTensor<T>>,
}

/// Parameter handles of a [`Network`] recorded on one tape.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    pub stem: Option<(Var, Var)>,
    pub levels: Vec<(Var, Var)>,
    pub neck: Vec<(Var, Var)>,
    pub head: (Var, Var),
    /// Every handle in parameter order.
    pub vars: Vec<Var>,
    stride_pad: Vec<(usize, usize)>,
    stem_stride: usize,
    padding: usize,
}

impl<T: Scalar> Network<T> {
    /// Uniform fan-in initialisation seeded from `config.seed`; biases start at zero.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.kernel;
        let mut params = Vec::new();
        let mut conv = |name: String, out_c: usize, in_c: usize, k: usize, gain: f64, rng: &mut ChaCha8Rng| {
            let fan_in = (in_c * k * k) as f64;
            let bound = (gain / fan_in).sqrt();
            let w: Vec<T> = (0..out_c * in_c * k * k)
                .map(|_| lit(rng.random_range(-bound..bound)))
                .collect();
            params.push((format!("{name}.weight"), Tensor::from_vec(&[out_c, in_c, k, k], w).expect("shape")));
            params.push((format!("{name}.bias"), Tensor::zeros(&[out_c])));
        };
        let mut in_c = config.in_channels;
        if config.stem_channels > 0 {
            conv("stem".into(), config.stem_channels, in_c, k, 6.0, &mut rng);
            in_c = config.stem_channels;
        }
        for (l, &c) in config.channels.iter().enumerate() {
            conv(format!("level{}", l + 1), c, in_c, k, 6.0, &mut rng);
            in_c = c;
        }
        for (l, &c) in config.channels.iter().enumerate() {
            conv(format!("neck{}", l + 1), config.neck_channels, c, 1, 3.0, &mut rng);
        }
        conv("head".into(), 1, config.neck_channels, 1, 3.0, &mut rng);
        Ok(Network {
            config: config.clone(),
            params,
        })
    }

    /// Replaces parameters with loaded ones after checking names and shapes.
    pub fn load_params(&mut self, loaded: Vec<NamedTensor<T>>) -> Result<()> {
        if loaded.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, encoder config expects {}",
                loaded.len(),
                self.params.len()
            )));
        }
        for ((name, t), (lname, lt)) in self.params.iter().zip(&loaded) {
            if name != lname || t.shape() != lt.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {lname} {:?} does not match expected {name} {:?}",
                    lt.shape(),
                    t.shape()
                )));
            }
        }
        self.params = loaded;
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Records all parameters on `tape`; `trainable` makes them differentiable leaves.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundNetwork {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let mut it = vars.chunks(2).map(|c| (c[0], c[1]));
        let stem = (self.config.stem_channels > 0).then(|| it.next().expect("stem"));
        let levels: Vec<_> = (0..self.config.levels()).map(|_| it.next().expect("level")).collect();
        let neck: Vec<_> = (0..self.config.levels()).map(|_| it.next().expect("neck")).collect();
        let head = it.next().expect("head");
        BoundNetwork {
            stem,
            levels,
            neck,
            head,
            vars,
            stride_pad: self.config.strides.iter().map(|&s| (s, self.config.padding())).collect(),
            stem_stride: self.config.stem_stride,
            padding: self.config.padding(),
        }
    }

    /// Plain encoding without injection.
    pub fn encode_plain(&self, image: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let levels = net.encode_plain(&mut tape, x)?;
        Ok(self.collect(&tape, &levels))
    }

    /// Encodes `source`, merging `noise` level outputs under each layer mask.
    pub fn encode_with_injection(
        &self,
        source: &Tensor<T>,
        noise: &FeaturePyramid<T>,
        masks: &LayerMaskSet,
    ) -> Result<FeaturePyramid<T>> {
        if noise.strides != self.config.cumulative_strides() {
            return Err(Error::Config(format!(
                "noise pyramid strides {:?} do not match encoder strides {:?}",
                noise.strides,
                self.config.cumulative_strides()
            )));
        }
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let x = tape.constant(source.clone());
        let noise_vars: Vec<Var> = noise.levels.iter().map(|t| tape.constant(t.clone())).collect();
        let levels = net.encode_injected(&mut tape, x, &noise_vars, masks)?;
        Ok(self.collect(&tape, &levels))
    }

    /// Fuses a pyramid into one `neck_channels x out_h x out_w` tensor.
    pub fn neck(&self, pyramid: &FeaturePyramid<T>, out_dims: (usize, usize)) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let vars: Vec<Var> = pyramid.levels.iter().map(|t| tape.constant(t.clone())).collect();
        let out = net.neck(&mut tape, &vars, out_dims)?;
        Ok(tape.value(out).clone())
    }

    fn collect(&self, tape: &Tape<T>, levels: &[Var]) -> FeaturePyramid<T> {
        FeaturePyramid {
            levels: levels.iter().map(|&v| tape.value(v).clone()).collect(),
            strides: self.config.cumulative_strides(),
        }
    }
}

/// Composite features: `noise` where `mask` is set, `source` elsewhere.
pub fn inject<T: Scalar>(source: &Tensor<T>, noise: &Tensor<T>, mask: &BinaryGrid) -> Result<Tensor<T>> {
    ops::masked_merge(noise, source, mask)
}

impl BoundNetwork {
    fn stem<T: Scalar>(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        match self.stem {
            Some((w, b)) => {
                let y = tape.conv2d(image, w, b, self.stem_stride, self.padding)?;
                Ok(tape.relu(y))
            }
            None => Ok(image),
        }
    }

    fn level<T: Scalar>(&self, tape: &mut Tape<T>, l: usize, x: Var) -> Result<Var> {
        let (w, b) = self.levels[l];
        let (s, p) = self.stride_pad[l];
        let y = tape.conv2d(x, w, b, s, p)?;
        Ok(tape.relu(y))
    }

    pub fn encode_plain<T: Scalar>(&self, tape: &mut Tape<T>, image: Var) -> Result<Vec<Var>> {
        let mut x = self.stem(tape, image)?;
        let mut out = Vec::with_capacity(self.levels.len());
        for l in 0..self.levels.len() {
            x = self.level(tape, l, x)?;
            out.push(x);
        }
        Ok(out)
    }

    pub fn encode_injected<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        source: Var,
        noise: &[Var],
        masks: &LayerMaskSet,
    ) -> Result<Vec<Var>> {
        if noise.len() != self.levels.len() || masks.levels() != self.levels.len() {
            return Err(Error::Config(format!(
                "encoder has {} levels, noise pyramid {} and layer masks {}",
                self.levels.len(),
                noise.len(),
                masks.levels()
            )));
        }
        let mut x = self.stem(tape, source)?;
        let mut out = Vec::with_capacity(self.levels.len());
        for l in 0..self.levels.len() {
            let s = self.level(tape, l, x)?;
            let grid = &masks.layer_grids[l];
            x = if grid.any() {
                tape.masked_merge(noise[l], s, grid)?
            } else {
                // Nothing to inject; identical to a merge under an empty mask.
                let (_, h, w) = tape.value(s).chw("inject")?;
                if grid.dims() != (h, w) {
                    return Err(Error::dim(
                        "inject",
                        format!("level {} mask {:?} vs features {h}x{w}", l + 1, grid.dims()),
                    ));
                }
                s
            };
            out.push(x);
        }
        Ok(out)
    }

    /// Per-level 1x1 conv, nearest-neighbour resize to `out_dims`, then sum.
    pub fn neck<T: Scalar>(&self, tape: &mut Tape<T>, pyramid: &[Var], out_dims: (usize, usize)) -> Result<Var> {
        if pyramid.len() != self.neck.len() {
            return Err(Error::Config(format!(
                "neck expects {} levels, got {}",
                self.neck.len(),
                pyramid.len()
            )));
        }
        let mut acc: Option<Var> = None;
        for (&x, &(w, b)) in pyramid.iter().zip(&self.neck) {
            let mut y = tape.conv2d(x, w, b, 1, 0)?;
            let (_, h, wd) = tape.value(y).chw("neck")?;
            if (h, wd) != out_dims {
                y = tape.resize(y, out_dims.0, out_dims.1)?;
            }
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        Ok(acc.expect("at least one level"))
    }

    /// 1x1 conv to one logit per cell.
    pub fn head<T: Scalar>(&self, tape: &mut Tape<T>, fused: Var) -> Result<Var> {
        let (w, b) = self.head;
        tape.conv2d(fused, w, b, 1, 0)
    }
}
