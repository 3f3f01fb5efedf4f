//! Dataset generation: the rule-based fan-out and the generate→filter→persist
//! loop against the editing service.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::genclient::{build_prompt, GenClient, GenerationOutcome, Prompt};
use crate::imgcore::{load_image, save_image, DefectMask, ImageBuffer, Rng};
use crate::matchfilter::{filter_decision, Decision, FilterReport};
use crate::pipeline::config::Config;
use crate::pipeline::manifest::{sha256_file, Manifest, ManifestEntry};
use crate::pipeline::{ns, PipelineError};
use crate::rulegen::{
    self, fractal_perlin, gaussian_corrupt, params_hash, procedural_texture, threshold_mask,
    PerlinParams, SyntheticSample, TextureKind,
};

/// Loads every image referenced by a normals manifest, in entry order.
fn load_normals(manifest_path: &Path) -> Result<(Manifest, Vec<ImageBuffer>), PipelineError> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.entries.is_empty() {
        return Err(PipelineError::EmptyDataset(manifest_path.display().to_string()));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let images = manifest
        .entries
        .iter()
        .map(|e| load_image(&base.join(&e.image_path)).map_err(PipelineError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, images))
}

/// Relative path from `from_dir` to `target`, for manifest references across
/// sibling dataset directories.
fn relative_path(from_dir: &Path, target: &Path) -> String {
    let from: Vec<_> = from_dir.components().collect();
    let to: Vec<_> = target.components().collect();
    let common = from.iter().zip(&to).take_while(|(a, b)| a == b).count();
    let mut parts: Vec<String> = std::iter::repeat("..".to_string())
        .take(from.len() - common)
        .collect();
    parts.extend(to[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    parts.join("/")
}

/// A Perlin mask redrawn (fresh substreams) until nonempty; cleared on the
/// border when `interior_only` so it can feed the Poisson solver.
fn draw_perlin_mask(
    width: u32,
    height: u32,
    params: &PerlinParams,
    rng: &Rng,
    interior_only: bool,
) -> Result<DefectMask, rulegen::RulegenError> {
    const MAX_ATTEMPTS: u32 = 8;
    for attempt in 0..MAX_ATTEMPTS {
        let field = fractal_perlin(width, height, params, &rng.substream(attempt as u64))?;
        let mut mask = threshold_mask(&field, params.threshold);
        if interior_only {
            for x in 0..width {
                mask.set(x, 0, false);
                mask.set(x, height - 1, false);
            }
            for y in 0..height {
                mask.set(0, y, false);
                mask.set(width - 1, y, false);
            }
        }
        if !mask.is_empty() {
            return Ok(mask);
        }
    }
    Err(rulegen::RulegenError::EmptyMask { attempts: MAX_ATTEMPTS })
}

/// Synthesizes one rule-based sample. Engine choice and all parameters come
/// from the item's own substream, so items are independent of scheduling.
fn rule_sample(
    normals: &[ImageBuffer],
    config: &Config,
    item_rng: &Rng,
) -> Result<SyntheticSample, rulegen::RulegenError> {
    let mut rng = item_rng.clone();
    let normal = &normals[(rng.next_u64() % normals.len() as u64) as usize];
    let weights = &config.rulegen.weights;
    let total = weights.perlin + weights.cutpaste + weights.gaussian + weights.poisson;
    let draw = rng.range_f64(0.0, total);

    if draw < weights.perlin {
        let kind = TextureKind::ALL[(rng.next_u64() % 3) as usize];
        let texture = procedural_texture(
            kind,
            normal.width(),
            normal.height(),
            normal.channels(),
            &mut rng,
        );
        let beta = rng.range_f64(config.rulegen.beta_range.0, config.rulegen.beta_range.1);
        let params = PerlinParams { beta, ..config.rulegen.perlin.clone() };
        rulegen::synthesize_perlin(normal, &texture, &params, &rng.substream(1))
    } else if draw < weights.perlin + weights.cutpaste {
        rulegen::cut_paste(normal, &mut rng, config.rulegen.cutpaste_patch_frac)
    } else if draw < weights.perlin + weights.cutpaste + weights.gaussian {
        let mask = draw_perlin_mask(
            normal.width(),
            normal.height(),
            &config.rulegen.perlin,
            &rng.substream(1),
            false,
        )?;
        gaussian_corrupt(normal, &mask, config.rulegen.gaussian_sigma, &mut rng)
    } else {
        let source = &normals[(rng.next_u64() % normals.len() as u64) as usize];
        let mask = draw_perlin_mask(
            normal.width(),
            normal.height(),
            &config.rulegen.perlin,
            &rng.substream(1),
            true,
        )?;
        let max_iters = rulegen::default_max_iters(mask.area());
        rulegen::poisson_blend(normal, source, &mask, config.rulegen.poisson_tol, max_iters)
    }
}

/// Generates `n` rule-based samples into `out_dir` and writes the manifest.
/// Items fan out over threads; the per-item substream keyed by the item index
/// makes the output independent of scheduling.
pub fn generate_rule_dataset(
    normals_manifest: &Path,
    config: &Config,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf, PipelineError> {
    assert!(n >= 1, "dataset size must be at least 1");
    let (normals_man, normals) = load_normals(normals_manifest)?;
    let root = Rng::new(seed).substream(ns::RULE_DATASET);
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    for dir in [&images_dir, &masks_dir] {
        std::fs::create_dir_all(dir)
            .map_err(|e| PipelineError::Io { path: dir.clone(), reason: e.to_string() })?;
    }
    let normals_base = normals_manifest.parent().unwrap_or_else(|| Path::new("."));

    let results: Vec<Result<ManifestEntry, String>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let item_rng = root.substream(i as u64);
            let sample_id = format!("rule_{i:05}");
            // Re-derive the chosen normal index exactly as rule_sample does.
            let normal_idx =
                (item_rng.clone().next_u64() % normals.len() as u64) as usize;
            let sample = rule_sample(&normals, config, &item_rng)
                .map_err(|e| format!("{sample_id}: {e}"))?
                .with_seed(i as u64);

            let image_rel = format!("images/{sample_id}.png");
            let mask_rel = format!("masks/{sample_id}.png");
            save_image(&sample.image, &out_dir.join(&image_rel))
                .map_err(|e| format!("{sample_id}: {e}"))?;
            save_image(&sample.mask.to_image(), &out_dir.join(&mask_rel))
                .map_err(|e| format!("{sample_id}: {e}"))?;

            let source_entry = &normals_man.entries[normal_idx];
            let source_rel = relative_path(
                out_dir,
                &normals_base.join(&source_entry.image_path),
            );
            Ok(ManifestEntry {
                sample_id,
                image_path: image_rel.clone(),
                image_hash: sha256_file(&out_dir.join(&image_rel))
                    .map_err(|e| e.to_string())?,
                mask_path: Some(mask_rel.clone()),
                mask_hash: Some(
                    sha256_file(&out_dir.join(&mask_rel)).map_err(|e| e.to_string())?,
                ),
                source_normal_path: Some(source_rel),
                source_normal_hash: Some(source_entry.image_hash.clone()),
                provenance: sample.provenance.clone(),
                seed: sample.seed,
                label: None,
                prompt: None,
                filter_report: None,
                edit_region: None,
            })
        })
        .collect();

    let mut entries = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(entry) => entries.push(entry),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(PipelineError::EngineFailure {
            failed: failures.len(),
            total: n,
            examples: failures.into_iter().take(5).collect(),
        });
    }

    let manifest = Manifest {
        dataset_id: format!("rule-n{n}-seed{seed}"),
        config_hash: config.hash(),
        entries,
    };
    manifest.write(out_dir)
}

/// Outcome counters for a generation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenStats {
    pub accepted: usize,
    pub attempts: usize,
    pub rejected_no_anomaly: usize,
    pub rejected_irrelevant: usize,
    pub rejected_degenerate: usize,
    pub acceptance_rate: f64,
}

/// One line of `filter_reports.jsonl`. Paths are relative to the dataset
/// directory except `normal_path`, which is relative like a manifest entry's
/// source reference.
#[derive(Debug, Serialize, Deserialize)]
pub struct AttemptLog {
    pub request_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sample_id: Option<String>,
    pub prompt: String,
    pub normal_path: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub candidate_path: Option<String>,
    pub decision: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<FilterReport>,
}

struct Attempt {
    index: usize,
    request_id: String,
    normal_idx: usize,
    prompt: Prompt,
    outcome: Result<(GenerationOutcome, Result<FilterReport, String>), String>,
}

/// Runs the generate→filter→persist loop until `n_accept` candidates pass the
/// gate. Attempts are independent pure functions of their index, issued in
/// `in_flight`-sized parallel batches but accepted strictly in attempt order,
/// so the result does not depend on scheduling. All evaluated attempts land
/// in `filter_reports.jsonl`; a capped number of rejected candidates is kept
/// under `rejected/` for reporting.
pub fn generate_gen_dataset(
    normals_manifest: &Path,
    config: &Config,
    endpoint: &str,
    n_accept: usize,
    max_attempts: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, GenStats), PipelineError> {
    let (normals_man, normals) = load_normals(normals_manifest)?;
    let normals_base = normals_manifest.parent().unwrap_or_else(|| Path::new("."));
    let client = GenClient::new(endpoint, config.genclient.retry.clone());
    let root = Rng::new(seed).substream(ns::GEN_DATASET);

    let vocabulary: Vec<String> = match &config.genclient.registry.vocabulary {
        Some(v) => v.iter().cloned().collect(),
        None => vec!["scratch".into(), "dent".into(), "stain".into()],
    };

    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| PipelineError::Io { path: images_dir.clone(), reason: e.to_string() })?;

    let run_attempt = |index: usize| -> Attempt {
        let mut rng = root.substream(index as u64);
        let normal_idx = (rng.next_u64() % normals.len() as u64) as usize;
        let normal = &normals[normal_idx];
        let category = normals_man.entries[normal_idx]
            .provenance
            .source
            .split(':')
            .next_back()
            .unwrap_or("product")
            .to_string();
        let defect_type = &vocabulary[index % vocabulary.len()];
        let prompt = build_prompt(&category, defect_type, &config.genclient.registry)
            .unwrap_or_else(|_| Prompt {
                category: category.clone(),
                defect_type: defect_type.clone(),
                template_id: "default".into(),
                rendered: format!("add a {defect_type} defect to the {category}"),
            });
        let request_id = format!("gen-{seed:08x}-{index:06}");
        let outcome = client
            .request_generation(&request_id, &prompt, normal, &config.genclient.guidance)
            .map_err(|e| e.to_string())
            .map(|outcome| {
                let report = filter_decision(normal, &outcome.candidate, &config.filter)
                    .map_err(|e| e.to_string());
                (outcome, report)
            });
        Attempt { index, request_id, normal_idx, prompt, outcome }
    };

    let mut stats = GenStats {
        accepted: 0,
        attempts: 0,
        rejected_no_anomaly: 0,
        rejected_irrelevant: 0,
        rejected_degenerate: 0,
        acceptance_rate: 0.0,
    };
    let mut entries: Vec<ManifestEntry> = Vec::with_capacity(n_accept);
    let mut report_lines: Vec<String> = Vec::new();
    let mut kept_rejected = std::collections::BTreeMap::<String, usize>::new();
    let mut service_error: Option<String> = None;

    let chunk = config.genclient.in_flight.max(1);
    let mut next_attempt = 0usize;
    'outer: while stats.accepted < n_accept && next_attempt < max_attempts {
        let end = (next_attempt + chunk).min(max_attempts);
        let batch: Vec<Attempt> = (next_attempt..end).into_par_iter().map(run_attempt).collect();
        next_attempt = end;

        for attempt in batch {
            if stats.accepted >= n_accept {
                break 'outer; // everything after the cutoff is discarded
            }
            stats.attempts = attempt.index + 1;
            let (outcome, report) = match attempt.outcome {
                Ok(pair) => pair,
                Err(e) => {
                    service_error = Some(e);
                    break 'outer;
                }
            };
            let decision_name;
            let mut accepted_entry = None;
            let mut candidate_rel: Option<String> = None;
            match report {
                Ok(report) => {
                    decision_name = format!("{:?}", report.decision);
                    if report.decision == Decision::Desired {
                        let sample_id = format!("gen_{:05}", stats.accepted);
                        let image_rel = format!("images/{sample_id}.png");
                        save_image(&outcome.candidate, &out_dir.join(&image_rel))?;
                        candidate_rel = Some(image_rel.clone());
                        let source_entry = &normals_man.entries[attempt.normal_idx];
                        let source_rel = relative_path(
                            out_dir,
                            &normals_base.join(&source_entry.image_path),
                        );
                        accepted_entry = Some(ManifestEntry {
                            sample_id: sample_id.clone(),
                            image_path: image_rel.clone(),
                            image_hash: sha256_file(&out_dir.join(&image_rel))?,
                            mask_path: None,
                            mask_hash: None,
                            source_normal_path: Some(source_rel),
                            source_normal_hash: Some(source_entry.image_hash.clone()),
                            provenance: crate::rulegen::Provenance::generated(
                                &attempt.prompt.id(),
                                params_hash(&config.genclient.registry),
                            ),
                            seed: attempt.index as u64,
                            label: None,
                            prompt: Some(attempt.prompt.rendered.clone()),
                            filter_report: Some(report.clone()),
                            edit_region: None,
                        });
                    } else {
                        match report.decision {
                            Decision::NoAnomaly => stats.rejected_no_anomaly += 1,
                            Decision::Irrelevant => stats.rejected_irrelevant += 1,
                            Decision::Desired => unreachable!(),
                        }
                        let kept = kept_rejected.entry(decision_name.clone()).or_insert(0);
                        if *kept < config.genclient.keep_rejected {
                            *kept += 1;
                            let rel = format!(
                                "rejected/{}_{:06}.png",
                                decision_name.to_lowercase(),
                                attempt.index
                            );
                            let path = out_dir.join(&rel);
                            std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| {
                                PipelineError::Io {
                                    path: path.clone(),
                                    reason: e.to_string(),
                                }
                            })?;
                            save_image(&outcome.candidate, &path)?;
                            candidate_rel = Some(rel);
                        }
                    }
                    let log = AttemptLog {
                        request_id: attempt.request_id.clone(),
                        sample_id: accepted_entry.as_ref().map(|e| e.sample_id.clone()),
                        prompt: attempt.prompt.rendered.clone(),
                        normal_path: relative_path(
                            out_dir,
                            &normals_base.join(&normals_man.entries[attempt.normal_idx].image_path),
                        ),
                        candidate_path: candidate_rel.clone(),
                        decision: decision_name,
                        report: Some(report),
                    };
                    report_lines.push(serde_json::to_string(&log).expect("log serializes"));
                }
                Err(filter_error) => {
                    stats.rejected_degenerate += 1;
                    let log = AttemptLog {
                        request_id: attempt.request_id.clone(),
                        sample_id: None,
                        prompt: attempt.prompt.rendered.clone(),
                        normal_path: relative_path(
                            out_dir,
                            &normals_base.join(&normals_man.entries[attempt.normal_idx].image_path),
                        ),
                        candidate_path: None,
                        decision: format!("Ungateable({filter_error})"),
                        report: None,
                    };
                    report_lines.push(serde_json::to_string(&log).expect("log serializes"));
                }
            }
            if let Some(entry) = accepted_entry {
                entries.push(entry);
                stats.accepted += 1;
            }
        }
    }

    stats.acceptance_rate = if stats.attempts > 0 {
        stats.accepted as f64 / stats.attempts as f64
    } else {
        0.0
    };

    let reports_path = out_dir.join("filter_reports.jsonl");
    std::fs::write(&reports_path, report_lines.join("\n") + "\n")
        .map_err(|e| PipelineError::Io { path: reports_path, reason: e.to_string() })?;
    let stats_path = out_dir.join("gen_stats.json");
    std::fs::write(
        &stats_path,
        serde_json::to_string_pretty(&stats).expect("stats serialize"),
    )
    .map_err(|e| PipelineError::Io { path: stats_path, reason: e.to_string() })?;

    if let Some(detail) = service_error {
        return Err(PipelineError::Gen(crate::genclient::GenError::MalformedResponse(detail)));
    }
    if stats.accepted < n_accept {
        return Err(PipelineError::AcceptanceExhausted {
            accepted: stats.accepted,
            target: n_accept,
            attempts: stats.attempts,
            rate: stats.acceptance_rate,
        });
    }

    let manifest = Manifest {
        dataset_id: format!("gen-n{n_accept}-seed{seed}"),
        config_hash: config.hash(),
        entries,
    };
    let path = manifest.write(out_dir)?;
    Ok((path, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclient::mock::{MockMode, MockServer};
    use crate::pipeline::toybench::build_toy_benchmark;

    fn bench_config() -> Config {
        let mut config = Config::default();
        config.strategies.train_normals = 12;
        config.strategies.eval_normals = 4;
        config.strategies.eval_anomalies = 4;
        config
    }

    fn build_bench(dir: &Path, seed: u64, config: &Config) -> PathBuf {
        build_toy_benchmark(dir, seed, config).unwrap().normals_manifest
    }

    #[test]
    fn rule_dataset_is_reproducible_and_valid() {
        let dir = tempfile::tempdir().unwrap();
        let config = bench_config();
        let normals = build_bench(&dir.path().join("bench"), 5, &config);

        let out_a = dir.path().join("rule_a");
        let out_b = dir.path().join("rule_b");
        let man_a = generate_rule_dataset(&normals, &config, 24, 9, &out_a).unwrap();
        let man_b = generate_rule_dataset(&normals, &config, 24, 9, &out_b).unwrap();
        assert_eq!(
            std::fs::read(&man_a).unwrap(),
            std::fs::read(&man_b).unwrap(),
            "manifests differ across identical-seed runs"
        );
        let manifest = Manifest::load(&man_a).unwrap();
        assert_eq!(manifest.entries.len(), 24);
        assert!(manifest.validate(&man_a).unwrap().is_empty());

        // Engine mix: with 24 samples and default weights every engine
        // should appear.
        let sources: std::collections::HashSet<_> =
            manifest.entries.iter().map(|e| e.provenance.source.clone()).collect();
        assert!(sources.contains("rule:perlin"), "sources: {sources:?}");
    }

    #[test]
    fn rule_samples_touch_only_their_masks() {
        let dir = tempfile::tempdir().unwrap();
        let config = bench_config();
        let normals_man = build_bench(&dir.path().join("bench"), 6, &config);
        let out = dir.path().join("rule");
        let man_path = generate_rule_dataset(&normals_man, &config, 16, 3, &out).unwrap();
        let manifest = Manifest::load(&man_path).unwrap();
        for entry in &manifest.entries {
            let img = load_image(&out.join(&entry.image_path)).unwrap();
            let mask = crate::imgcore::DefectMask::from_image(
                &load_image(&out.join(entry.mask_path.as_ref().unwrap())).unwrap(),
            );
            let src =
                load_image(&out.join(entry.source_normal_path.as_ref().unwrap())).unwrap();
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if !mask.get(x, y) {
                        assert_eq!(
                            img.get(x, y, 0),
                            src.get(x, y, 0),
                            "{}: pixel outside mask differs at ({x},{y})",
                            entry.sample_id
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gen_dataset_accepts_local_edits() {
        let dir = tempfile::tempdir().unwrap();
        let config = bench_config();
        let normals = build_bench(&dir.path().join("bench"), 7, &config);
        let server = MockServer::start(MockMode::LocalEdit, 99, 0).unwrap();
        let out = dir.path().join("gen");
        let (man_path, stats) =
            generate_gen_dataset(&normals, &config, &server.url(), 10, 80, 1, &out).unwrap();
        assert_eq!(stats.accepted, 10);
        assert!(stats.acceptance_rate > 0.5, "rate {}", stats.acceptance_rate);
        let manifest = Manifest::load(&man_path).unwrap();
        assert!(manifest.validate(&man_path).unwrap().is_empty());
        assert!(out.join("filter_reports.jsonl").exists());
        assert!(out.join("gen_stats.json").exists());
    }

    #[test]
    fn identity_mock_exhausts_attempts_with_no_anomaly_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let config = bench_config();
        let normals = build_bench(&dir.path().join("bench"), 8, &config);
        let server = MockServer::start(MockMode::Identity, 99, 0).unwrap();
        let out = dir.path().join("gen");
        match generate_gen_dataset(&normals, &config, &server.url(), 5, 12, 1, &out) {
            Err(PipelineError::AcceptanceExhausted { accepted: 0, attempts: 12, rate, .. }) => {
                assert_eq!(rate, 0.0);
            }
            other => panic!("expected AcceptanceExhausted, got {other:?}"),
        }
        let log = std::fs::read_to_string(out.join("filter_reports.jsonl")).unwrap();
        let lines: Vec<&str> = log.trim().lines().collect();
        assert_eq!(lines.len(), 12);
        assert!(lines.iter().all(|l| l.contains("\"NoAnomaly\"")));
    }

    #[test]
    fn scramble_mock_rejections_log_irrelevant() {
        let dir = tempfile::tempdir().unwrap();
        let config = bench_config();
        let normals = build_bench(&dir.path().join("bench"), 9, &config);
        let server = MockServer::start(MockMode::Scramble, 99, 0).unwrap();
        let out = dir.path().join("gen");
        match generate_gen_dataset(&normals, &config, &server.url(), 5, 10, 1, &out) {
            Err(PipelineError::AcceptanceExhausted { accepted: 0, .. }) => {}
            other => panic!("expected AcceptanceExhausted, got {other:?}"),
        }
        let log = std::fs::read_to_string(out.join("filter_reports.jsonl")).unwrap();
        assert!(log.trim().lines().all(|l| l.contains("\"Irrelevant\"")));
    }

    #[test]
    fn relative_paths_walk_up_and_down() {
        assert_eq!(
            relative_path(Path::new("/a/b/rule"), Path::new("/a/b/normals/images/x.png")),
            "../normals/images/x.png"
        );
        assert_eq!(relative_path(Path::new("/a"), Path::new("/a/x.png")), "x.png");
    }
}
