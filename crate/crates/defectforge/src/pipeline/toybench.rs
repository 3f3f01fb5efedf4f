//! The desk-scale stand-in benchmark: procedural grayscale "products".
//!
//! Three families — disk-with-ring, grid-textured plate, bar pattern — with
//! jittered pose and intensity per item, plus deterministic surface noise so
//! each item carries a rich, unique keypoint population. The eval split adds
//! anomalous images from the generative mock's local-edit family (subtler
//! than the service's own band so the detector comparison stays off the
//! ceiling), with seeds disjoint from all training data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::Label;
use crate::genclient::mock::{apply_local_edit, draw_local_edit_with, EditDrawParams};
use crate::imgcore::{save_image, ImageBuffer, Rng};
use crate::pipeline::config::Config;
use crate::pipeline::manifest::{sha256_file, Manifest, ManifestEntry};
use crate::pipeline::{ns, PipelineError};
use crate::rulegen::Provenance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductFamily {
    DiskRing,
    GridPlate,
    Bars,
}

impl ProductFamily {
    pub const ALL: [ProductFamily; 3] =
        [ProductFamily::DiskRing, ProductFamily::GridPlate, ProductFamily::Bars];

    pub fn of_index(i: usize) -> Self {
        Self::ALL[i % Self::ALL.len()]
    }

    pub fn name(self) -> &'static str {
        match self {
            ProductFamily::DiskRing => "diskring",
            ProductFamily::GridPlate => "gridplate",
            ProductFamily::Bars => "bars",
        }
    }
}

/// Edit band used for eval anomalies: the service's own band, so the
/// fine-tuning distribution matches the eval anomaly distribution.
pub fn eval_edit_params() -> EditDrawParams {
    EditDrawParams::default()
}

/// Renders one product image with jittered pose and intensity.
pub fn render_product(
    family: ProductFamily,
    width: u32,
    height: u32,
    rng: &mut Rng,
) -> ImageBuffer {
    let bg = rng.range_u32(38, 50) as u8;
    let mut img = ImageBuffer::filled(width, height, 1, bg);
    let (w, h) = (width as i64, height as i64);

    // The gate's descriptors need a full 31x31 patch, so the informative
    // detail is concentrated in the central region where that patch fits.
    match family {
        ProductFamily::DiskRing => {
            let cx = w / 2 + rng.range_u32(0, 3) as i64 - 1;
            let cy = h / 2 + rng.range_u32(0, 3) as i64 - 1;
            let disk_r = rng.range_u32(11, 13) as i64;
            let ring_r = disk_r + rng.range_u32(4, 6) as i64;
            let ring_t = 2;
            let disk_v = rng.range_u32(148, 163) as u8;
            let ring_v = rng.range_u32(208, 223) as u8;
            for y in 0..h {
                for x in 0..w {
                    let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    if d2 <= disk_r * disk_r {
                        img.set(x as u32, y as u32, 0, disk_v);
                    } else if d2 >= (ring_r - ring_t) * (ring_r - ring_t)
                        && d2 <= ring_r * ring_r
                    {
                        img.set(x as u32, y as u32, 0, ring_v);
                    }
                }
            }
            // Tick marks on the disk give Harris strong, central corners.
            let phase = rng.range_f64(0.0, std::f64::consts::TAU / 6.0);
            for k in 0..6 {
                let angle = phase + k as f64 * std::f64::consts::TAU / 6.0;
                let tx = cx + ((disk_r - 4) as f64 * angle.cos()).round() as i64;
                let ty = cy + ((disk_r - 4) as f64 * angle.sin()).round() as i64;
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (px, py) = (tx + dx, ty + dy);
                        if px >= 0 && py >= 0 && px < w && py < h {
                            img.set(px as u32, py as u32, 0, 245);
                        }
                    }
                }
            }
        }
        ProductFamily::GridPlate => {
            let x0 = 13 + rng.range_u32(0, 3) as i64;
            let y0 = 13 + rng.range_u32(0, 3) as i64;
            let x1 = w - 13 - rng.range_u32(0, 3) as i64;
            let y1 = h - 13 - rng.range_u32(0, 3) as i64;
            let plate_v = rng.range_u32(155, 170) as u8;
            let line_v = rng.range_u32(60, 75) as u8;
            let pitch = rng.range_u32(7, 9) as i64;
            // Per-cell shading and per-line intensities break the plate's
            // periodicity: no two cells or line crossings are
            // interchangeable.
            let cells_x = ((x1 - x0) / pitch + 1) as usize;
            let cells_y = ((y1 - y0) / pitch + 1) as usize;
            let shades: Vec<i32> = (0..cells_x * cells_y)
                .map(|_| rng.range_u32(0, 41) as i32 - 20)
                .collect();
            let col_lines: Vec<i32> =
                (0..cells_x + 1).map(|_| line_v as i32 + rng.range_u32(0, 41) as i32 - 20).collect();
            let row_lines: Vec<i32> =
                (0..cells_y + 1).map(|_| line_v as i32 + rng.range_u32(0, 41) as i32 - 20).collect();
            for y in y0..y1 {
                for x in x0..x1 {
                    let (cx_i, cy_i) = (((x - x0) / pitch) as usize, ((y - y0) / pitch) as usize);
                    let v = if (x - x0) % pitch == 0 {
                        col_lines[cx_i]
                    } else if (y - y0) % pitch == 0 {
                        row_lines[cy_i]
                    } else {
                        plate_v as i32 + shades[cy_i * cells_x + cx_i]
                    };
                    img.set(x as u32, y as u32, 0, v.clamp(0, 255) as u8);
                }
            }
        }
        ProductFamily::Bars => {
            let n_bars = 5;
            let bar_w = rng.range_u32(4, 6) as i64;
            let gap = rng.range_u32(2, 4) as i64;
            let mut x = 16 + rng.range_u32(0, 3) as i64;
            let bar_v = rng.range_u32(190, 210) as u8;
            for _ in 0..n_bars {
                let top = rng.range_u32(17, 21) as i64;
                let bottom = h - 17 - rng.range_u32(0, 4) as i64;
                for y in top..bottom {
                    for bx in x..(x + bar_w).min(w - 16) {
                        img.set(bx as u32, y as u32, 0, bar_v);
                    }
                }
                x += bar_w + gap;
                if x >= w - 17 {
                    break;
                }
            }
        }
    }

    // Machining marks: high-contrast dots on a jittered grid across the
    // whole face. The pitch/jitter combination keeps any two dots at least
    // 3 px apart, outside each other's non-maximum-suppression radius, and
    // full coverage means even a block-scrambled copy still shows corners
    // everywhere. The layout is fixed per family (items of one product share
    // their marks), which keeps the marks predictable for a reconstruction
    // model while still feeding the match gate a dense corner population.
    // Each dot flips toward whichever side of mid-gray has headroom.
    const DOT_PITCH: u32 = 5;
    let mut dot_rng = Rng::new(0xd07_5eed ^ family as u64);
    for gy in 0..height / DOT_PITCH {
        for gx in 0..width / DOT_PITCH {
            if dot_rng.unit_f64() >= 0.8 {
                continue;
            }
            let dx = (gx * DOT_PITCH + dot_rng.range_u32(1, 3)) as i64;
            let dy = (gy * DOT_PITCH + dot_rng.range_u32(1, 3)) as i64;
            for oy in 0..2 {
                for ox in 0..2 {
                    let (px, py) = (dx + ox, dy + oy);
                    if px >= w || py >= h {
                        continue;
                    }
                    let base = img.get(px as u32, py as u32, 0) as i32;
                    let v = if base > 128 { base - 80 } else { base + 80 };
                    img.set(px as u32, py as u32, 0, v.clamp(0, 255) as u8);
                }
            }
        }
    }

    // Per-item illumination: a smooth intensity plane, normal appearance
    // variation the detector must learn to reproduce.
    let gx = rng.range_f64(-0.35, 0.35);
    let gy = rng.range_f64(-0.35, 0.35);
    for y in 0..height {
        for x in 0..width {
            let shade = gx * (x as f64 - width as f64 / 2.0)
                + gy * (y as f64 - height as f64 / 2.0);
            let v = img.get(x, y, 0) as f64 + shade;
            img.set(x, y, 0, v.round().clamp(0.0, 255.0) as u8);
        }
    }

    // Light per-item surface noise keeps every item's descriptors unique.
    for v in img.data_mut() {
        let noisy = *v as i32 + rng.range_u32(0, 17) as i32 - 8;
        *v = noisy.clamp(0, 255) as u8;
    }
    img
}

/// Manifest paths produced by the benchmark builder.
#[derive(Debug, Clone)]
pub struct ToyBenchmark {
    pub normals_manifest: PathBuf,
    pub eval_manifest: PathBuf,
}

fn entry_for_image(
    dir: &Path,
    rel: &str,
    sample_id: &str,
    provenance: Provenance,
    seed: u64,
) -> Result<ManifestEntry, PipelineError> {
    Ok(ManifestEntry {
        sample_id: sample_id.to_string(),
        image_path: rel.to_string(),
        image_hash: sha256_file(&dir.join(rel))?,
        mask_path: None,
        mask_hash: None,
        source_normal_path: None,
        source_normal_hash: None,
        provenance,
        seed,
        label: None,
        prompt: None,
        filter_report: None,
        edit_region: None,
    })
}

fn save_to(dir: &Path, rel: &str, img: &ImageBuffer) -> Result<(), PipelineError> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| PipelineError::Io { path: parent.to_path_buf(), reason: e.to_string() })?;
    }
    save_image(img, &path).map_err(PipelineError::from)
}

/// Builds the benchmark under `out_dir`: `normals/` with training normals and
/// `eval/` with labeled normal and anomalous images. Item streams are keyed
/// by disjoint namespaces of the global seed, so no image repeats across the
/// split.
pub fn build_toy_benchmark(
    out_dir: &Path,
    seed: u64,
    config: &Config,
) -> Result<ToyBenchmark, PipelineError> {
    let root = Rng::new(seed);
    let (w, h) = (config.images.width, config.images.height);
    let config_hash = config.hash();

    // Training normals.
    let normals_dir = out_dir.join("normals");
    let mut normal_entries = Vec::new();
    for i in 0..config.strategies.train_normals {
        let family = ProductFamily::of_index(i);
        let mut rng = root.substream(ns::TRAIN_NORMALS).substream(i as u64);
        let img = render_product(family, w, h, &mut rng);
        let rel = format!("images/normal_{i:04}.png");
        save_to(&normals_dir, &rel, &img)?;
        normal_entries.push(entry_for_image(
            &normals_dir,
            &rel,
            &format!("normal_{i:04}"),
            Provenance::rule(&format!("normal:{}", family.name()), config_hash.clone()),
            i as u64,
        )?);
    }
    let normals_manifest = Manifest {
        dataset_id: format!("toy-normals-seed{seed}"),
        config_hash: config_hash.clone(),
        entries: normal_entries,
    }
    .write(&normals_dir)?;

    // Eval split: labeled normals and local-edit anomalies.
    let eval_dir = out_dir.join("eval");
    let mut eval_entries = Vec::new();
    for i in 0..config.strategies.eval_normals {
        let family = ProductFamily::of_index(i);
        let mut rng = root.substream(ns::EVAL_NORMALS).substream(i as u64);
        let img = render_product(family, w, h, &mut rng);
        let rel = format!("images/eval_normal_{i:03}.png");
        save_to(&eval_dir, &rel, &img)?;
        let mut entry = entry_for_image(
            &eval_dir,
            &rel,
            &format!("eval_normal_{i:03}"),
            Provenance::rule(&format!("normal:{}", family.name()), config_hash.clone()),
            i as u64,
        )?;
        entry.label = Some(Label::Normal);
        eval_entries.push(entry);
    }
    let edit_params = eval_edit_params();
    for i in 0..config.strategies.eval_anomalies {
        let family = ProductFamily::of_index(i);
        let mut src_rng = root.substream(ns::EVAL_ANOM_SRC).substream(i as u64);
        let source = render_product(family, w, h, &mut src_rng);
        let mut edit_rng = root.substream(ns::EVAL_ANOM_EDIT).substream(i as u64);
        let edit = draw_local_edit_with(&edit_params, w, h, &mut edit_rng);
        let anomalous = apply_local_edit(&source, &edit);

        let rel = format!("images/eval_anom_{i:03}.png");
        let src_rel = format!("sources/eval_anom_src_{i:03}.png");
        save_to(&eval_dir, &rel, &anomalous)?;
        save_to(&eval_dir, &src_rel, &source)?;
        let mut entry = entry_for_image(
            &eval_dir,
            &rel,
            &format!("eval_anom_{i:03}"),
            Provenance::rule("eval:local-edit", config_hash.clone()),
            i as u64,
        )?;
        entry.label = Some(Label::Anomalous);
        entry.source_normal_path = Some(src_rel.clone());
        entry.source_normal_hash = Some(sha256_file(&eval_dir.join(&src_rel))?);
        entry.edit_region = Some(edit);
        eval_entries.push(entry);
    }
    let eval_manifest = Manifest {
        dataset_id: format!("toy-eval-seed{seed}"),
        config_hash,
        entries: eval_entries,
    }
    .write(&eval_dir)?;

    Ok(ToyBenchmark { normals_manifest, eval_manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::load_image;
    use crate::matchfilter::{filter_decision, Decision, FilterParams};
    use std::collections::HashSet;

    fn tiny_config() -> Config {
        let mut config = Config::default();
        config.strategies.train_normals = 9;
        config.strategies.eval_normals = 6;
        config.strategies.eval_anomalies = 6;
        config
    }

    #[test]
    fn same_seed_builds_identical_benchmarks() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = tiny_config();
        build_toy_benchmark(dir_a.path(), 7, &config).unwrap();
        build_toy_benchmark(dir_b.path(), 7, &config).unwrap();
        for rel in ["normals/manifest.json", "eval/manifest.json", "normals/images/normal_0000.png"]
        {
            let a = std::fs::read(dir_a.path().join(rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs across identical-seed builds");
        }
    }

    #[test]
    fn eval_anomalies_change_only_inside_recorded_ellipse() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let bench = build_toy_benchmark(dir.path(), 3, &config).unwrap();
        let manifest = Manifest::load(&bench.eval_manifest).unwrap();
        let base = bench.eval_manifest.parent().unwrap();
        let mut checked = 0;
        for entry in manifest.entries.iter().filter(|e| e.label == Some(Label::Anomalous)) {
            let img = load_image(&base.join(&entry.image_path)).unwrap();
            let src = load_image(&base.join(entry.source_normal_path.as_ref().unwrap())).unwrap();
            let edit = entry.edit_region.unwrap();
            let mut changed = 0;
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if img.get(x, y, 0) != src.get(x, y, 0) {
                        changed += 1;
                        assert!(edit.contains(x, y), "change outside ellipse at ({x},{y})");
                    }
                }
            }
            assert!(changed > 0);
            checked += 1;
        }
        assert_eq!(checked, 6);
    }

    #[test]
    fn split_streams_never_collide() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let bench = build_toy_benchmark(dir.path(), 11, &config).unwrap();
        let normals = Manifest::load(&bench.normals_manifest).unwrap();
        let eval = Manifest::load(&bench.eval_manifest).unwrap();
        let mut hashes = HashSet::new();
        for entry in normals.entries.iter().chain(&eval.entries) {
            assert!(hashes.insert(entry.image_hash.clone()), "duplicate image across split");
        }
    }

    #[test]
    fn products_are_gateable() {
        // Every family must give the filter enough keypoints to work with.
        let params = FilterParams::default();
        for (i, family) in ProductFamily::ALL.iter().enumerate() {
            let mut rng = Rng::new(100 + i as u64);
            let img = render_product(*family, 64, 64, &mut rng);
            let report = filter_decision(&img, &img, &params).unwrap();
            assert_eq!(report.decision, Decision::NoAnomaly, "{family:?}");
            assert!(report.k_normal >= 10, "{family:?} has only {} keypoints", report.k_normal);
        }
    }
}
