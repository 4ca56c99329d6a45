//! Acceptance suite: one line per criterion, non-zero exit if any fails.
#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use inod::encoder::EncoderConfig;
use inod::labels::{boxes_from_mask, connected_components};
use inod::layer_split::{split_mask_sites, RasterMode};
use inod::noise_mask::{gen_noise_mask, gen_noise_mask_with, grid_fraction, MaskGenConfig, RescaleMode};
use inod::train::augment::AugmentationConfig;
use inod::train::optim::lr_at_epoch;
use inod::train::pretext::{base_rate_loss, eval_pretext, train_pretext, DatasetPairing, Discriminator, PretextSetup};
use inod::train::synthetic::{texture_dataset, Texture};
use inod::train::TrainConfig;
use inod::{BinaryGrid, Granularity, NoiseMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{flood_fill_labels, graphs, injection, random_grid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut failures, mut draws, mut rejected) = (0, 0, 0);
    while draws < 1000 {
        let g = Granularity::ALLOWED[rng.random_range(0..4)];
        let cfg = MaskGenConfig {
            crop: [g as usize * rng.random_range(3..=60), g as usize * rng.random_range(3..=60)],
            granularity: Granularity::new(g).unwrap(),
            target_fraction: rng.random_range(0.1..0.6),
            tolerance: 0.1,
            rescale: if rng.random_bool(0.5) { RescaleMode::Interval } else { RescaleMode::Fixed },
            ..MaskGenConfig::default()
        };
        let Ok(mask) = gen_noise_mask_with(&cfg, &mut rng) else {
            rejected += 1;
            continue;
        };
        draws += 1;
        let levels = rng.random_range(1..=4);
        let (h, w) = mask.dims();
        let dims: Vec<(usize, usize)> = (0..levels).map(|l| (h.div_ceil(1 << l), w.div_ceil(1 << l))).collect();
        let mut sites: Vec<bool> = (0..levels).map(|_| rng.random_bool(0.7)).collect();
        sites[rng.random_range(0..levels)] = true;
        let mode = if rng.random_bool(0.5) { RasterMode::Coverage } else { RasterMode::Center };
        let set = split_mask_sites(&mask, &dims, &sites, mode, &mut rng).unwrap();
        for c in 0..h * w {
            let hits = set.canonical_parts.iter().filter(|p| p.cells()[c]).count();
            if hits != usize::from(mask.grid.cells()[c]) {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("{draws} draws ({rejected} invalid configs redrawn), {failures} cells violate sum == N or disjointness"),
    )
}

fn quantity_control() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    for target in [0.10, 0.20, 0.30, 0.40] {
        for seed in 0..250u64 {
            let cfg = MaskGenConfig {
                crop: [224, 224],
                granularity: Granularity::new([4, 8, 16][seed as usize % 3]).unwrap(),
                target_fraction: target,
                tolerance: 0.02,
                seed,
                ..MaskGenConfig::default()
            };
            let f = grid_fraction(&gen_noise_mask(&cfg).unwrap().grid);
            if !(target - 0.02 - 1e-12..=target + 1e-12).contains(&f) {
                misses += 1;
            }
            worst = worst.max(target - f);
        }
    }
    outcome(misses == 0, format!("{misses}/1000 outside window, largest shortfall {worst:.4}"))
}

fn injection_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mismatched, mut empty_bad) = (0, 0);
    for _ in 0..500 {
        let case = injection::random_case(&mut rng);
        mismatched += injection::injection_mismatches(&case);
        empty_bad += usize::from(!injection::empty_mask_is_plain(&case));
    }
    outcome(
        mismatched == 0 && empty_bad == 0,
        format!("{mismatched} mismatched values, {empty_bad} empty-mask runs differ"),
    )
}

fn label_oracle() -> Outcome {
    let mut labeling = 0;
    for bits in 0u32..1 << 16 {
        let grid = BinaryGrid::from_fn(4, 4, |y, x| bits >> (y * 4 + x) & 1 == 1);
        if connected_components(&grid).ids.cells() != &flood_fill_labels(&grid)[..] {
            labeling += 1;
        }
    }
    let mask = |grid: BinaryGrid| NoiseMask { grid, granularity: Granularity::new(4).unwrap() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut loose = 0;
    for i in 0..1000 {
        let grid = random_grid(56, 56, [0.05, 0.2, 0.4, 0.6][i % 4], &mut rng);
        let oracle = flood_fill_labels(&grid);
        for (k, b) in boxes_from_mask(&mask(grid)).iter().enumerate() {
            let cells: Vec<(usize, usize)> =
                (0..56 * 56).filter(|&c| oracle[c] == k as u32 + 1).map(|c| (c / 56, c % 56)).collect();
            let tight = cells.iter().all(|&(y, x)| b.contains(y, x))
                && cells.iter().any(|&(y, _)| y == b.y0)
                && cells.iter().any(|&(y, _)| y + 1 == b.y1)
                && cells.iter().any(|&(_, x)| x == b.x0)
                && cells.iter().any(|&(_, x)| x + 1 == b.x1);
            loose += usize::from(!tight);
        }
    }
    let mut merged = 0;
    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let grid = BinaryGrid::from_fn(2, 2, |y, x| (y, x) == (dy, dx) || (1 - y, 1 - x) == (dy, dx));
        merged += usize::from(connected_components(&grid).count != 2);
    }
    let board = BinaryGrid::from_fn(8, 8, |y, x| (y + x) % 2 == 0);
    merged += usize::from(connected_components(&board).count != 32);
    outcome(
        labeling == 0 && loose == 0 && merged == 0,
        format!("{labeling} labeling mismatches, {loose} loose boxes, {merged} diagonal merges"),
    )
}

fn gradients() -> Outcome {
    let reports = [
        ("conv2d", graphs::conv2d_trials(100, 51)),
        ("masked_merge", graphs::masked_merge_trials(100, 52)),
        ("neck", graphs::neck_trials(100, 53)),
        ("focal", graphs::focal_trials(100, 54)),
        ("injected", graphs::injected_graph_trials(100, 55)),
    ];
    let pass = reports.iter().all(|(_, r)| r.checked > 0 && r.worst < 1e-4);
    let detail = reports
        .iter()
        .map(|(n, r)| format!("{n} {:.1e} ({} coords)", r.worst, r.checked))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

fn schedule() -> Outcome {
    let mut bad = Vec::new();
    for epochs in [10, 100, 200] {
        let cfg = TrainConfig { epochs, ..TrainConfig::default() };
        for e in 0..epochs {
            let expect = if e * 10 < epochs * 6 {
                0.02
            } else if e * 10 < epochs * 8 {
                0.002
            } else {
                0.0002
            };
            if lr_at_epoch(&cfg, e).unwrap() != expect {
                bad.push(format!("{epochs}:{e}"));
            }
        }
    }
    outcome(bad.is_empty(), format!("{} epochs off schedule {bad:?}", bad.len()))
}

fn learnability_setup(self_pair: bool) -> PretextSetup {
    PretextSetup {
        mask: MaskGenConfig {
            crop: [64, 64],
            granularity: Granularity::new(4).unwrap(),
            target_fraction: 0.2,
            ..MaskGenConfig::default()
        },
        encoder: EncoderConfig {
            channels: vec![32, 32, 64, 64],
            inject: vec![true, false, false, false],
            ..EncoderConfig::default()
        },
        train: TrainConfig {
            epochs: 50,
            steps_per_epoch: 10,
            batch_size: 8,
            base_lr: 0.1,
            lr_milestones: vec![0.8, 0.9],
            self_pair,
            ..TrainConfig::default()
        },
        augment: AugmentationConfig {
            jitter: 0.8,
            saturation: 0.8,
            hue: 0.5,
            grayscale: 0.2,
            ..AugmentationConfig::none()
        },
    }
}

fn learnability() -> Outcome {
    let stripes = texture_dataset(Texture::Stripes, 64, 64, 1);
    let checks = texture_dataset(Texture::Checkerboard, 64, 64, 2);
    let held_stripes = texture_dataset(Texture::Stripes, 32, 64, 101);
    let held_checks = texture_dataset(Texture::Checkerboard, 32, 64, 102);

    let setup = learnability_setup(false);
    let train = DatasetPairing::new(stripes.clone(), checks).unwrap();
    let mut held = DatasetPairing::new(held_stripes.clone(), held_checks).unwrap();
    held.stats = train.stats.clone();
    let net = train_pretext::<f32>(&setup, &train, None).unwrap().network;
    let report = eval_pretext(&Discriminator::Network(net), &setup, &held, 32).unwrap();

    let control = learnability_setup(true);
    let train = DatasetPairing::new(stripes.clone(), stripes).unwrap();
    let mut held = DatasetPairing::new(held_stripes.clone(), held_stripes).unwrap();
    held.stats = train.stats.clone();
    let net = train_pretext::<f32>(&control, &train, None).unwrap().network;
    let ctrl = eval_pretext(&Discriminator::Network(net), &control, &held, 32).unwrap();
    let (_, base) = base_rate_loss(ctrl.positive_fraction, control.train.focal());
    let gap = (ctrl.mean_loss - base).abs() / base;

    outcome(
        report.mean_iou >= 0.9 && gap <= 0.05 && ctrl.mean_iou <= 0.2,
        format!(
            "held-out IoU {:.4}; control loss {:.5} vs base rate {:.5} ({:.1}%), IoU {:.4}",
            report.mean_iou,
            ctrl.mean_loss,
            base,
            gap * 100.0,
            ctrl.mean_iou
        ),
    )
}

fn inod(dir: &Path, threads: &str, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_inod"))
        .args(args)
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn cli_run(dir: &Path, threads: &str) -> bool {
    let tiny = [
        "--set", "mask.crop=[32,32]", "--set", "encoder.channels=[4,4,4]", "--set", "encoder.strides=[2,2,2]",
        "--set", "encoder.stem_channels=4", "--set", "encoder.neck_channels=4", "--set", "train.epochs=2",
        "--set", "train.steps_per_epoch=3", "--set", "train.batch_size=4", "--set", "train.checkpoint_every=1",
        "--set", "paths.source_dir=src", "--set", "paths.noise_dir=noise",
    ];
    let with = |head: &[&'static str]| -> Vec<&'static str> { head.iter().chain(tiny.iter()).copied().collect() };
    let mask = "masks/mask_224x224_g4_seed7.pgm";
    let steps: Vec<Vec<&str>> = vec![
        vec!["mask-gen", "--count", "10", "--out-dir", "masks", "--split-levels", "--set", "mask.seed=7"],
        vec!["labels-gen", "--mask", mask, "--task", "detect", "--out", "labels/boxes.json"],
        vec!["labels-gen", "--mask", mask, "--task", "semantic", "--size", "224x224", "--out", "labels/sem.pgm"],
        vec!["labels-gen", "--mask", mask, "--task", "instance", "--out", "labels/inst.pgm"],
        vec!["synth", "--kind", "stripes", "--count", "6", "--size", "40", "--seed", "1", "--out-dir", "src"],
        vec!["synth", "--kind", "checkerboard", "--count", "6", "--size", "40", "--seed", "2", "--out-dir", "noise"],
        vec!["stats", "--dir", "src", "--out", "stats.json"],
        with(&["pretrain", "--out-dir", "run"]),
        with(&["eval", "--checkpoint", "run/checkpoint.inod", "--episodes", "4", "--out", "eval.json"]),
        with(&["inject-demo", "--source", "src/stripes_0000.png", "--noise", "noise/checkerboard_0000.png", "--out-dir", "demo"]),
        vec!["oracle-checkpoint", "--out", "oracle.inod"],
    ];
    steps.iter().all(|args| inod(dir, threads, args))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if !cli_run(a.path(), "1") || !cli_run(b.path(), "3") {
        return outcome(false, "a subcommand failed");
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<_> = sa.keys().filter(|k| sb.get(*k) != sa.get(*k)).map(|k| k.display().to_string()).collect();
    let pass = differing.is_empty() && sa.len() == sb.len() && sa.keys().any(|k| k.ends_with("metrics.csv"));
    outcome(pass, format!("{} artifacts compared, differing: {differing:?}", sa.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("1 mask conservation", Duration::from_secs(10), conservation),
        ("2 quantity control", Duration::from_secs(30), quantity_control),
        ("3 injection exactness", Duration::from_secs(60), injection_exactness),
        ("4 pseudo-label oracle", Duration::from_secs(60), label_oracle),
        ("5 gradient correctness", Duration::from_secs(300), gradients),
        ("6 schedule fidelity", Duration::from_secs(10), schedule),
        ("7 end-to-end learnability", Duration::from_secs(600), learnability),
        ("8 cli determinism", Duration::from_secs(120), determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let pass = result.pass && took <= budget;
        failed += usize::from(!pass);
        println!(
            "[{}] criterion {name}: {} ({:.1}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
