use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use inod::config::RunConfig;
use inod::encoder::Network;
use inod::io::sidecar::{read_json, write_json, BoxSidecar, LayerSidecar, MaskSidecar};
use inod::io::{checkpoint, pgm};
use inod::labels::{boxes_from_mask, instances_with_rule, semantic_from_mask, InstanceRule};
use inod::layer_split::split_mask_sites;
use inod::noise_mask::{gen_noise_mask_with, mask_fraction};
use inod::train::image::{load_dir, normalize, DatasetStats, Image};
use inod::train::pretext::{eval_pretext, train_pretext, DatasetPairing, Discriminator};
use inod::train::synthetic::{texture_dataset, Texture};
use inod::train::Precision;
use inod::{Error, Granularity, NoiseMask, Scalar, Tensor};

use crate::{ConfigArgs, InstanceRuleArg, Task, TextureArg};

fn load_config(args: &ConfigArgs) -> inod::Result<RunConfig> {
    match &args.config {
        Some(path) => RunConfig::load(path, &args.overrides),
        None => RunConfig::parse("", &args.overrides),
    }
}

fn create_dir(dir: &Path) -> inod::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn create_parent(file: &Path) -> inod::Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct MaskReportEntry {
    file: String,
    seed: u64,
    ones: usize,
    cells: usize,
    fraction: f64,
    within_window: bool,
}

#[derive(Serialize)]
struct MaskReport {
    window: [f64; 2],
    masks: Vec<MaskReportEntry>,
}

pub fn mask_gen(args: &ConfigArgs, count: u64, out_dir: &Path, split_levels: bool) -> Result<()> {
    let cfg = load_config(args)?;
    create_dir(out_dir)?;
    if count == 0 {
        return Ok(());
    }
    let [ch, cw] = cfg.mask.crop;
    let stride = cfg.mask.granularity.stride();
    let window = [cfg.mask.target_fraction - cfg.mask.tolerance, cfg.mask.target_fraction];
    let mut entries = Vec::new();
    for i in 0..count {
        let mut mcfg = cfg.mask.clone();
        mcfg.seed = cfg.mask.seed.wrapping_add(i);
        let mut rng = ChaCha8Rng::seed_from_u64(mcfg.seed);
        let mask = gen_noise_mask_with(&mcfg, &mut rng)?;
        let stem = format!("mask_{ch}x{cw}_g{stride}_seed{}", mcfg.seed);
        pgm::write_mask(&out_dir.join(format!("{stem}.pgm")), &mask.grid)?;
        write_json(&out_dir.join(format!("{stem}.json")), &MaskSidecar::new(&mcfg, &mask))?;

        if split_levels {
            let set = split_mask_sites(
                &mask,
                &cfg.encoder.level_dims(cfg.mask.crop),
                &cfg.encoder.injection_sites(),
                cfg.encoder.raster,
                &mut rng,
            )?;
            let mut files = Vec::new();
            for (l, grid) in set.layer_grids.iter().enumerate() {
                let name = format!("{stem}_level{}.pgm", l + 1);
                pgm::write_mask(&out_dir.join(&name), grid)?;
                files.push(name);
            }
            write_json(&out_dir.join(format!("{stem}_levels.json")), &LayerSidecar::new(&set, files))?;
        }

        let (lo, hi) = mcfg.count_window();
        let ones = mask.grid.count_ones();
        entries.push(MaskReportEntry {
            file: format!("{stem}.pgm"),
            seed: mcfg.seed,
            ones,
            cells: mask.grid.len(),
            fraction: mask_fraction(&mask),
            within_window: (lo..=hi).contains(&ones),
        });
    }
    let inside = entries.iter().filter(|e| e.within_window).count();
    write_json(&out_dir.join("report.json"), &MaskReport { window, masks: entries })?;
    println!("{count} masks written to {}; {inside} within the fraction window", out_dir.display());
    Ok(())
}

/// Reads `N` from a `_g<N>_` or `_g<N>.` tag in the file name.
fn granularity_from_name(path: &Path) -> Option<u32> {
    let name = path.file_name()?.to_str()?;
    name.match_indices("_g").find_map(|(i, _)| {
        let digits: String = name[i + 2..].chars().take_while(|c| c.is_ascii_digit()).collect();
        let rest = &name[i + 2 + digits.len()..];
        if digits.is_empty() || !(rest.starts_with('_') || rest.starts_with('.')) {
            None
        } else {
            digits.parse().ok()
        }
    })
}

pub fn labels_gen(
    mask_path: &Path,
    task: Task,
    out: &Path,
    granularity: Option<u32>,
    size: Option<(usize, usize)>,
    rule: InstanceRuleArg,
) -> Result<()> {
    let grid = pgm::read_mask(mask_path)?;
    let stride = granularity.or_else(|| granularity_from_name(mask_path)).unwrap_or(4);
    let mask = NoiseMask {
        grid,
        granularity: Granularity::new(stride)?,
    };
    create_parent(out)?;
    match task {
        Task::Detect => write_json(out, &BoxSidecar::new(&boxes_from_mask(&mask), &mask))?,
        Task::Semantic => {
            let (h, w) = size.unwrap_or(mask.dims());
            pgm::write_mask(out, &semantic_from_mask(&mask, h, w)?)?;
        }
        Task::Instance => {
            let rule = match rule {
                InstanceRuleArg::Component => InstanceRule::Component,
                InstanceRuleArg::BoxInterior => InstanceRule::BoxInterior,
            };
            let inst = instances_with_rule(&mask, rule);
            pgm::write_bytes(out, &pgm::encode_ids(&inst.ids)?)?;
            write_json(&out.with_extension("json"), &BoxSidecar::new(&inst.boxes, &mask))?;
        }
    }
    Ok(())
}

fn pairing_for(cfg: &RunConfig) -> Result<DatasetPairing> {
    let source = cfg
        .paths
        .source_dir
        .as_deref()
        .ok_or_else(|| Error::Config("paths.source_dir is required".into()))?;
    let noise = match (&cfg.paths.noise_dir, cfg.train.self_pair) {
        (Some(dir), _) => dir.as_path(),
        (None, true) => source,
        (None, false) => return Err(Error::Config("paths.noise_dir is required unless train.self_pair".into()).into()),
    };
    let mut pairing = DatasetPairing::from_dirs(source, noise)?;
    if let Some(path) = &cfg.paths.stats {
        pairing.stats = read_json(path)?;
    }
    Ok(pairing)
}

fn pretrain_as<T: Scalar>(cfg: &RunConfig, pairing: &DatasetPairing, out_dir: &Path) -> Result<()> {
    let outcome = train_pretext::<T>(&cfg.setup(), pairing, Some(out_dir))?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "{} steps; final loss {:.6}, pretext IoU {:.4}; checkpoint in {}",
            last.step + 1,
            last.loss,
            last.pretext_iou,
            out_dir.display()
        );
    }
    Ok(())
}

pub fn pretrain(args: &ConfigArgs, out_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(dir) = out_dir {
        cfg.paths.out_dir = Some(dir);
    }
    let out_dir = cfg
        .paths
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("paths.out_dir is required".into()))?;
    let pairing = pairing_for(&cfg)?;
    create_dir(&out_dir)?;
    let resolved = out_dir.join("config.toml");
    std::fs::write(&resolved, cfg.to_toml()).map_err(|e| Error::Io { path: resolved, source: e })?;
    write_json(&out_dir.join("stats.json"), &pairing.stats)?;
    match cfg.train.precision {
        Precision::F32 => pretrain_as::<f32>(&cfg, &pairing, &out_dir),
        Precision::F64 => pretrain_as::<f64>(&cfg, &pairing, &out_dir),
    }
}

fn eval_as<T: Scalar>(cfg: &RunConfig, checkpoint: &Path, episodes: usize, out: Option<&Path>) -> Result<()> {
    let pairing = pairing_for(cfg)?;
    let disc = Discriminator::<T>::load(checkpoint, &cfg.encoder)?;
    let report = eval_pretext(&disc, &cfg.setup(), &pairing, episodes)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match out {
        Some(path) => {
            create_parent(path)?;
            std::fs::write(path, text).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            println!("mean IoU {:.4}, mean loss {:.6}", report.mean_iou, report.mean_loss);
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn eval(args: &ConfigArgs, checkpoint: &Path, episodes: Option<usize>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(args)?;
    let n = episodes.unwrap_or(cfg.train.eval_episodes);
    match cfg.train.precision {
        Precision::F32 => eval_as::<f32>(&cfg, checkpoint, n, out),
        Precision::F64 => eval_as::<f64>(&cfg, checkpoint, n, out),
    }
}

pub fn stats(dir: &Path, out: Option<&Path>) -> Result<()> {
    let stats = DatasetStats::compute(&load_dir(dir)?)?;
    match out {
        Some(path) => {
            create_parent(path)?;
            write_json(path, &stats)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&stats)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct LevelSummary {
    level: usize,
    stride: usize,
    dims: [usize; 3],
    injected_cells: usize,
    mean: f64,
    std: f64,
    /// Mean over injected cells; null when none.
    masked_mean: Option<f64>,
    unmasked_mean: Option<f64>,
    /// Largest absolute change against the plain source encoding.
    max_abs_change: f64,
}

#[derive(Serialize)]
struct InjectSummary {
    crop: [usize; 2],
    granularity: usize,
    mask_fraction: f64,
    levels: Vec<LevelSummary>,
}

fn summarize<T: Scalar>(level: usize, stride: usize, t: &Tensor<T>, plain: &Tensor<T>, mask: &inod::BinaryGrid) -> LevelSummary {
    let shape = t.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let vals: Vec<f64> = t.data().iter().map(|v| v.to_f64_lossy()).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (mut ms, mut mn, mut us, mut un) = (0.0, 0usize, 0.0, 0usize);
    for (i, v) in vals.iter().enumerate() {
        if mask.cells()[i % plane] {
            ms += v;
            mn += 1;
        } else {
            us += v;
            un += 1;
        }
    }
    let max_abs_change = t
        .data()
        .iter()
        .zip(plain.data())
        .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
        .fold(0.0, f64::max);
    LevelSummary {
        level,
        stride,
        dims: [c, h, w],
        injected_cells: mask.count_ones(),
        mean,
        std,
        masked_mean: (mn > 0).then(|| ms / mn as f64),
        unmasked_mean: (un > 0).then(|| us / un as f64),
        max_abs_change,
    }
}

/// Source pixels under the mask blended halfway toward red.
fn overlay(source: &Image, mask: &NoiseMask) -> Image {
    let mut out = source.clone();
    let s = mask.granularity.stride();
    for y in 0..out.height {
        for x in 0..out.width {
            if mask.grid.get(y / s, x / s) {
                for (c, target) in [1.0f32, 0.0, 0.0].into_iter().enumerate() {
                    let v = out.get(c, y, x);
                    out.set(c, y, x, 0.5 * v + 0.5 * target);
                }
            }
        }
    }
    out
}

fn inject_demo_as<T: Scalar>(
    cfg: &RunConfig,
    source: &Path,
    noise: &Path,
    out_dir: &Path,
    checkpoint_path: Option<&Path>,
) -> Result<()> {
    let [ch, cw] = cfg.mask.crop;
    let load = |p: &Path| -> inod::Result<Image> { Ok(Image::open(p)?.ensure_min_side(ch, cw).center_crop(ch, cw)) };
    let (src_img, noise_img) = (load(source)?, load(noise)?);
    let stats = match &cfg.paths.stats {
        Some(path) => read_json(path)?,
        None => DatasetStats::compute(std::slice::from_ref(&src_img))?,
    };
    let src: Tensor<T> = normalize(&src_img, &stats).context("normalizing the source image")?;
    let nz: Tensor<T> = normalize(&noise_img, &stats).context("normalizing the noise image")?;

    let mut net = Network::<T>::init(&cfg.encoder)?;
    if let Some(path) = checkpoint_path {
        net.load_params(checkpoint::read(path)?)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mask.seed);
    let mask = gen_noise_mask_with(&cfg.mask, &mut rng)?;
    let layers = split_mask_sites(
        &mask,
        &cfg.encoder.level_dims(cfg.mask.crop),
        &cfg.encoder.injection_sites(),
        cfg.encoder.raster,
        &mut rng,
    )?;
    let plain = net.encode_plain(&src)?;
    let noise_pyr = net.encode_plain(&nz)?;
    let composite = net.encode_with_injection(&src, &noise_pyr, &layers)?;

    let levels = composite
        .levels
        .iter()
        .enumerate()
        .map(|(l, t)| summarize(l + 1, composite.strides[l], t, &plain.levels[l], &layers.layer_grids[l]))
        .collect();
    let summary = InjectSummary {
        crop: cfg.mask.crop,
        granularity: cfg.mask.granularity.stride(),
        mask_fraction: mask_fraction(&mask),
        levels,
    };
    create_dir(out_dir)?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    pgm::write_mask(&out_dir.join("mask.pgm"), &mask.grid)?;
    overlay(&src_img, &mask).save_png(&out_dir.join("overlay.png"))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn inject_demo(
    args: &ConfigArgs,
    source: &Path,
    noise: &Path,
    out_dir: &Path,
    checkpoint: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(args)?;
    match cfg.train.precision {
        Precision::F32 => inject_demo_as::<f32>(&cfg, source, noise, out_dir, checkpoint),
        Precision::F64 => inject_demo_as::<f64>(&cfg, source, noise, out_dir, checkpoint),
    }
}

pub fn synth(kind: TextureArg, count: usize, size: usize, seed: u64, out_dir: &Path) -> Result<()> {
    if size == 0 {
        return Err(Error::Config("--size must be positive".into()).into());
    }
    let (texture, prefix) = match kind {
        TextureArg::Stripes => (Texture::Stripes, "stripes"),
        TextureArg::Checkerboard => (Texture::Checkerboard, "checkerboard"),
    };
    create_dir(out_dir)?;
    for (i, img) in texture_dataset(texture, count, size, seed).iter().enumerate() {
        img.save_png(&out_dir.join(format!("{prefix}_{i:04}.png")))?;
    }
    Ok(())
}

pub fn oracle_checkpoint(out: &Path, logit: f64) -> Result<()> {
    if !(logit.is_finite() && logit > 0.0) {
        return Err(Error::Config(format!("--logit must be positive and finite, got {logit}")).into());
    }
    create_parent(out)?;
    checkpoint::write(out, &inod::train::pretext::oracle_checkpoint(logit))?;
    Ok(())
}
