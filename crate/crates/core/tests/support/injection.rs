//! Random injection cases and a direct recomputation of the source branch.

use inod::encoder::{EncoderConfig, FeaturePyramid, Network};
use inod::layer_split::{split_mask_sites, LayerMaskSet, RasterMode};
use inod::noise_mask::{gen_noise_mask_with, MaskGenConfig};
use inod::ops;
use inod::{Granularity, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::random_tensor;

pub fn toy(rng: &mut impl Rng) -> EncoderConfig {
    let levels = rng.random_range(1..=4);
    EncoderConfig {
        stem_channels: [0, 2, 4][rng.random_range(0..3)],
        channels: (0..levels).map(|_| rng.random_range(1..=4)).collect(),
        strides: vec![2; levels],
        neck_channels: 3,
        inject: if rng.random_bool(0.3) {
            let mut v: Vec<bool> = (0..levels).map(|_| rng.random_bool(0.5)).collect();
            v[0] = true;
            v
        } else {
            Vec::new()
        },
        raster: if rng.random_bool(0.5) { RasterMode::Coverage } else { RasterMode::Center },
        seed: rng.random(),
        ..EncoderConfig::default()
    }
}

pub struct Case {
    pub net: Network<f64>,
    pub source: Tensor<f64>,
    pub noise: Tensor<f64>,
    pub layers: LayerMaskSet,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let cfg = toy(rng);
    let crop = cfg.cumulative_strides().last().unwrap().max(&16) * rng.random_range(1..=2);
    let mask_cfg = MaskGenConfig {
        crop: [crop, crop],
        granularity: Granularity::new(4).unwrap(),
        target_fraction: rng.random_range(0.15..0.5),
        tolerance: 0.1,
        ..MaskGenConfig::default()
    };
    let mask = gen_noise_mask_with(&mask_cfg, rng).unwrap();
    let layers = split_mask_sites(&mask, &cfg.level_dims(mask_cfg.crop), &cfg.injection_sites(), cfg.raster, rng).unwrap();
    Case {
        net: Network::init(&cfg).unwrap(),
        source: random_tensor(&[3, crop, crop], rng),
        noise: random_tensor(&[3, crop, crop], rng),
        layers,
    }
}

fn relu_conv(net: &Network<f64>, name: &str, x: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let w = net.param(&format!("{name}.weight")).unwrap();
    let b = net.param(&format!("{name}.bias")).unwrap();
    ops::conv2d(x, w, b, stride, net.config.padding()).unwrap().map(|v| v.max(0.0))
}

/// Composite level `l` recomputed directly from conv kernels: the source
/// branch consumes the previous composite level.
pub fn source_branch(net: &Network<f64>, source: &Tensor<f64>, composite: &FeaturePyramid<f64>, l: usize) -> Tensor<f64> {
    let input = if l == 0 {
        if net.config.stem_channels > 0 {
            relu_conv(net, "stem", source, net.config.stem_stride)
        } else {
            source.clone()
        }
    } else {
        composite.levels[l - 1].clone()
    };
    relu_conv(net, &format!("level{}", l + 1), &input, net.config.strides[l])
}

/// Counts cells where the composite disagrees bitwise with noise inside the
/// layer mask or with the recomputed source branch outside it.
pub fn injection_mismatches(case: &Case) -> usize {
    let noise = case.net.encode_plain(&case.noise).unwrap();
    let comp = case.net.encode_with_injection(&case.source, &noise, &case.layers).unwrap();
    let mut bad = 0;
    for l in 0..comp.levels.len() {
        let src = source_branch(&case.net, &case.source, &comp, l);
        let grid = &case.layers.layer_grids[l];
        let (c, h, w) = comp.levels[l].chw("test").unwrap();
        for i in 0..c * h * w {
            let cell = i % (h * w);
            let expect = if grid.get(cell / w, cell % w) { noise.levels[l].data()[i] } else { src.data()[i] };
            if comp.levels[l].data()[i].to_bits() != expect.to_bits() {
                bad += 1;
            }
        }
    }
    bad
}

/// Whether injecting through an all-empty mask reproduces the plain encoding bitwise.
pub fn empty_mask_is_plain(case: &Case) -> bool {
    let canonical = case.layers.canonical_parts[0].dims();
    let empty = LayerMaskSet::empty(canonical, &case.layers.level_dims);
    let noise = case.net.encode_plain(&case.noise).unwrap();
    let comp = case.net.encode_with_injection(&case.source, &noise, &empty).unwrap();
    comp == case.net.encode_plain(&case.source).unwrap()
}
