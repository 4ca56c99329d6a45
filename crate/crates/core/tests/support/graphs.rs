//! Randomized finite-difference trials for each differentiable graph.

use inod::autodiff::Tape;
use inod::encoder::{EncoderConfig, Network};
use inod::layer_split::split_mask_sites;
use inod::noise_mask::{gen_noise_mask_with, MaskGenConfig};
use inod::ops::FocalParams;
use inod::train::pretext::episode_graph;
use inod::{Granularity, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, random_grid, random_tensor, weighted_sum, FdReport};

pub fn conv2d_trials(trials: usize, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    for _ in 0..trials {
        let (ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let k = if rng.random_bool(0.5) { 1 } else { 3 };
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..=k / 2);
        let (h, w) = (rng.random_range(k..=7), rng.random_range(k..=7));
        let x = random_tensor(&[ci, h, w], &mut rng);
        let wt = random_tensor(&[co, ci, k, k], &mut rng);
        let b = random_tensor(&[co], &mut rng);
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let weights = random_tensor(&[co, oh, ow], &mut rng);
        report.merge(check_gradients(&[x, wt, b], 400, &mut rng, |tape, ins| {
            let vars: Vec<_> = ins.iter().map(|t| tape.param(t.clone())).collect();
            let y = tape.conv2d(vars[0], vars[1], vars[2], stride, padding).unwrap();
            (weighted_sum(tape, y, &weights), vars)
        }));
    }
    report
}

pub fn masked_merge_trials(trials: usize, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    for _ in 0..trials {
        let (c, h, w) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=6));
        let mask = random_grid(h, w, rng.random_range(0.0..1.0), &mut rng);
        let a = random_tensor(&[c, h, w], &mut rng);
        let b = random_tensor(&[c, h, w], &mut rng);
        let weights = random_tensor(&[c, h, w], &mut rng);
        report.merge(check_gradients(&[a, b], 400, &mut rng, |tape, ins| {
            let vars: Vec<_> = ins.iter().map(|t| tape.param(t.clone())).collect();
            let y = tape.masked_merge(vars[0], vars[1], &mask).unwrap();
            (weighted_sum(tape, y, &weights), vars)
        }));
    }
    report
}

fn toy_encoder(levels: usize, rng: &mut impl Rng) -> EncoderConfig {
    EncoderConfig {
        stem_channels: rng.random_range(0..=3),
        channels: (0..levels).map(|_| rng.random_range(1..=3)).collect(),
        strides: vec![2; levels],
        neck_channels: rng.random_range(1..=3),
        seed: rng.random(),
        ..EncoderConfig::default()
    }
}

fn network_from(config: &EncoderConfig, names: &[String], tensors: &[Tensor<f64>]) -> Network<f64> {
    Network {
        config: config.clone(),
        params: names.iter().cloned().zip(tensors.iter().cloned()).collect(),
    }
}

/// Neck of a random pyramid: gradients w.r.t. the pyramid and the neck weights.
pub fn neck_trials(trials: usize, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    for _ in 0..trials {
        let levels = rng.random_range(1..=3);
        let cfg = toy_encoder(levels, &mut rng);
        let net = Network::<f64>::init(&cfg).unwrap();
        let base = rng.random_range(1..=2) * (1 << (levels - 1));
        let out = (rng.random_range(1..=2) * base, rng.random_range(1..=2) * base);
        let pyramid: Vec<Tensor<f64>> = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(l, &c)| random_tensor(&[c, base >> l, base >> l], &mut rng))
            .collect();
        let names: Vec<String> = net.params.iter().map(|(n, _)| n.clone()).collect();
        let mut inputs: Vec<Tensor<f64>> = net.params.iter().map(|(_, t)| t.clone()).collect();
        let np = inputs.len();
        inputs.extend(pyramid);
        let weights = random_tensor(&[cfg.neck_channels, out.0, out.1], &mut rng);
        report.merge(check_gradients(&inputs, 200, &mut rng, |tape, ins| {
            let bound = network_from(&cfg, &names, &ins[..np]).bind(tape, true);
            let levels: Vec<_> = ins[np..].iter().map(|t| tape.param(t.clone())).collect();
            let y = bound.neck(tape, &levels, out).unwrap();
            let mut vars = bound.vars.clone();
            vars.extend(levels);
            (weighted_sum(tape, y, &weights), vars)
        }));
    }
    report
}

pub fn focal_trials(trials: usize, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    for _ in 0..trials {
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let target = random_grid(h, w, rng.random_range(0.0..1.0), &mut rng);
        let params = FocalParams {
            alpha: rng.random_range(0.05..0.95),
            gamma: [0.0, 0.5, 1.0, 2.0, 3.0][rng.random_range(0..5)],
        };
        let scale = rng.random_range(0.5..6.0);
        let logits = random_tensor(&[1, h, w], &mut rng).map(|v| v * scale);
        report.merge(check_gradients(&[logits], 400, &mut rng, |tape, ins| {
            let z = tape.param(ins[0].clone());
            (tape.focal_loss(z, &target, params).unwrap(), vec![z])
        }));
    }
    report
}

/// Full episode: noise encoding, injected source encoding, neck, head and
/// focal loss, differentiated w.r.t. every parameter and both images.
pub fn injected_graph_trials(trials: usize, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    for _ in 0..trials {
        let levels = rng.random_range(1..=4);
        let mut cfg = toy_encoder(levels, &mut rng);
        cfg.stem_channels = rng.random_range(1..=3);
        if rng.random_bool(0.5) {
            cfg.inject = (0..levels).map(|_| rng.random_bool(0.7)).collect();
            cfg.inject[rng.random_range(0..levels)] = true;
        }
        let crop = cfg.cumulative_strides()[levels - 1].max(16) * rng.random_range(1..=2);
        let mask_cfg = MaskGenConfig {
            crop: [crop, crop],
            granularity: Granularity::new(4).unwrap(),
            target_fraction: rng.random_range(0.15..0.5),
            tolerance: 0.1,
            ..MaskGenConfig::default()
        };
        let mask = gen_noise_mask_with(&mask_cfg, &mut rng).unwrap();
        let layers = split_mask_sites(
            &mask,
            &cfg.level_dims(mask_cfg.crop),
            &cfg.injection_sites(),
            cfg.raster,
            &mut rng,
        )
        .unwrap();
        let target = mask.grid.clone();
        let net = Network::<f64>::init(&cfg).unwrap();
        let names: Vec<String> = net.params.iter().map(|(n, _)| n.clone()).collect();
        let mut inputs: Vec<Tensor<f64>> = net.params.iter().map(|(_, t)| t.clone()).collect();
        let np = inputs.len();
        inputs.push(random_tensor(&[3, crop, crop], &mut rng));
        inputs.push(random_tensor(&[3, crop, crop], &mut rng));
        let focal = FocalParams::default();
        report.merge(check_gradients(&inputs, 60, &mut rng, |tape: &mut Tape<f64>, ins| {
            let bound = network_from(&cfg, &names, &ins[..np]).bind(tape, true);
            let source = tape.param(ins[np].clone());
            let noise = tape.param(ins[np + 1].clone());
            let out = episode_graph(tape, &bound, source, noise, &layers, &target, focal).unwrap();
            let mut vars = bound.vars.clone();
            vars.extend([source, noise]);
            (out.loss, vars)
        }));
    }
    report
}
