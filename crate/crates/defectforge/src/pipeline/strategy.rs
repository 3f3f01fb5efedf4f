//! The five training schedules and the end-to-end toy experiment.
//!
//! Strategies a-c are single-stage (rule-only, generated-only, mixed);
//! d and e are two-stage, differing only in the stage order: d pre-trains on
//! the small generated set and fine-tunes on the large rule set, e does the
//! reverse. Stage 2 always continues from stage 1 weights on the same model
//! instance.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::{
    anomaly_score, compute_auroc, extract_patches, train, AutoencoderModel, Label, ScoreRecord,
    StageLabel, TrainSchedule,
};
use crate::genclient::mock::{MockMode, MockServer};
use crate::imgcore::{load_image, Rng};
use crate::pipeline::config::Config;
use crate::pipeline::dataset::{generate_gen_dataset, generate_rule_dataset, GenStats};
use crate::pipeline::manifest::Manifest;
use crate::pipeline::toybench::build_toy_benchmark;
use crate::pipeline::{ns, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// (a) one stage on rule-based synthesis only.
    #[serde(rename = "a")]
    SimOnly,
    /// (b) one stage on generated samples only.
    #[serde(rename = "b")]
    GenOnly,
    /// (c) one stage on the concatenated, shuffled union.
    #[serde(rename = "c")]
    Mixed,
    /// (d) pre-train on generated, fine-tune on rule-based.
    #[serde(rename = "d")]
    GenThenSim,
    /// (e) pre-train on rule-based, fine-tune on generated.
    #[serde(rename = "e")]
    SimThenGen,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SimOnly,
        Strategy::GenOnly,
        Strategy::Mixed,
        Strategy::GenThenSim,
        Strategy::SimThenGen,
    ];

    pub fn letter(self) -> char {
        match self {
            Strategy::SimOnly => 'a',
            Strategy::GenOnly => 'b',
            Strategy::Mixed => 'c',
            Strategy::GenThenSim => 'd',
            Strategy::SimThenGen => 'e',
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Strategy::SimOnly => "sim-only",
            Strategy::GenOnly => "gen-only",
            Strategy::Mixed => "mixed",
            Strategy::GenThenSim => "gen-then-sim",
            Strategy::SimThenGen => "sim-then-gen",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "a" | "sim-only" => Some(Strategy::SimOnly),
            "b" | "gen-only" => Some(Strategy::GenOnly),
            "c" | "mixed" => Some(Strategy::Mixed),
            "d" | "gen-then-sim" => Some(Strategy::GenThenSim),
            "e" | "sim-then-gen" => Some(Strategy::SimThenGen),
            _ => None,
        }
    }
}

/// One training stage: which manifests feed it and how it is scheduled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSpec {
    pub datasets: Vec<PathBuf>,
    pub schedule: TrainSchedule,
}

/// Declarative description of one strategy run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyPlan {
    pub strategy: Strategy,
    pub stages: Vec<StageSpec>,
    pub eval_manifest: PathBuf,
    pub global_seed: u64,
}

impl StrategyPlan {
    /// Builds the stage structure for a strategy. Single-stage strategies get
    /// the pre-training schedule; two-stage ones add the derived fine-tuning
    /// schedule for their second stage.
    pub fn new(
        strategy: Strategy,
        rule_manifest: &Path,
        gen_manifest: &Path,
        eval_manifest: &Path,
        config: &Config,
        global_seed: u64,
    ) -> Self {
        let seed_for = |stage_idx: u64| -> u64 {
            let mut rng = Rng::new(global_seed)
                .substream(ns::STRATEGY)
                .substream(strategy.letter() as u64)
                .substream(stage_idx);
            rng.next_u64()
        };
        let pretrain = config.detector.pretrain_schedule(seed_for(0));
        let single = TrainSchedule { stage: StageLabel::Single, ..pretrain.clone() };
        let finetune = TrainSchedule::finetune_from(&pretrain, seed_for(1));
        let rule = rule_manifest.to_path_buf();
        let generated = gen_manifest.to_path_buf();

        let stages = match strategy {
            Strategy::SimOnly => vec![StageSpec { datasets: vec![rule], schedule: single }],
            Strategy::GenOnly => vec![StageSpec { datasets: vec![generated], schedule: single }],
            Strategy::Mixed => {
                vec![StageSpec { datasets: vec![rule, generated], schedule: single }]
            }
            Strategy::GenThenSim => vec![
                StageSpec { datasets: vec![generated], schedule: pretrain },
                StageSpec { datasets: vec![rule], schedule: finetune },
            ],
            Strategy::SimThenGen => vec![
                StageSpec { datasets: vec![rule], schedule: pretrain },
                StageSpec { datasets: vec![generated], schedule: finetune },
            ],
        };
        Self {
            strategy,
            stages,
            eval_manifest: eval_manifest.to_path_buf(),
            global_seed,
        }
    }
}

/// Result of one strategy run. Wall-clock timings are reported but not
/// serialized: the persisted JSON is part of the byte-reproducibility
/// contract and timing is not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub description: String,
    pub stage_loss_curves: Vec<Vec<f64>>,
    pub dataset_sizes: Vec<usize>,
    pub auroc: f64,
    pub global_seed: u64,
    #[serde(skip)]
    pub wall_clock_ms: Vec<u128>,
}

/// Training pairs for one manifest: (corrupted patch, clean patch) per patch
/// position, the clean side coming from the recorded source normal.
pub fn manifest_pairs(
    manifest_path: &Path,
    config: &Config,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, PipelineError> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut pairs = Vec::new();
    for entry in &manifest.entries {
        let defect = load_image(&base.join(&entry.image_path))?;
        let source_rel = entry.source_normal_path.as_ref().ok_or_else(|| {
            PipelineError::BadManifest {
                path: manifest_path.to_path_buf(),
                reason: format!("{}: training entry lacks a source normal", entry.sample_id),
            }
        })?;
        let clean = load_image(&base.join(source_rel))?;
        let defect_patches = extract_patches(&defect, config.detector.patch, config.detector.stride)?;
        let clean_patches = extract_patches(&clean, config.detector.patch, config.detector.stride)?;
        pairs.extend(defect_patches.into_iter().zip(clean_patches));
    }
    if pairs.is_empty() {
        return Err(PipelineError::EmptyDataset(manifest_path.display().to_string()));
    }
    Ok(pairs)
}

/// Scores every eval image and computes AUROC.
pub fn evaluate_model(
    model: &AutoencoderModel,
    eval_manifest: &Path,
    config: &Config,
) -> Result<(f64, Vec<ScoreRecord>), PipelineError> {
    let manifest = Manifest::load(eval_manifest)?;
    let base = eval_manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let label = entry.label.unwrap_or(Label::Normal);
        let img = load_image(&base.join(&entry.image_path))?;
        records.push(anomaly_score(
            model,
            &img,
            &entry.sample_id,
            label,
            config.detector.patch,
            config.detector.stride,
        )?);
    }
    let auroc = compute_auroc(&records)?;
    Ok((auroc, records))
}

/// Executes a plan: stages in order on one model instance, then AUROC on the
/// eval manifest.
pub fn run_strategy(
    plan: &StrategyPlan,
    config: &Config,
) -> Result<(StrategyResult, Vec<ScoreRecord>), PipelineError> {
    let mut model_rng = Rng::new(plan.global_seed).substream(ns::MODEL_INIT);
    let mut model = AutoencoderModel::new(&config.detector.layer_sizes(), &mut model_rng);

    let mut stage_loss_curves = Vec::new();
    let mut dataset_sizes = Vec::new();
    let mut wall_clock_ms = Vec::new();
    for stage in &plan.stages {
        let start = Instant::now();
        let mut pairs = Vec::new();
        for dataset in &stage.datasets {
            pairs.extend(manifest_pairs(dataset, config)?);
        }
        dataset_sizes.push(pairs.len());
        let curve = train(&mut model, &pairs, &stage.schedule)?;
        stage_loss_curves.push(curve);
        wall_clock_ms.push(start.elapsed().as_millis());
    }

    let (auroc, records) = evaluate_model(&model, &plan.eval_manifest, config)?;
    let result = StrategyResult {
        strategy: plan.strategy,
        description: plan.strategy.describe().to_string(),
        stage_loss_curves,
        dataset_sizes,
        auroc,
        global_seed: plan.global_seed,
        wall_clock_ms,
    };
    Ok((result, records))
}

/// Everything the full experiment produced.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub results: Vec<StrategyResult>,
    pub rule_manifest: PathBuf,
    pub gen_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub gen_stats: GenStats,
    pub gen_dir: PathBuf,
}

/// Persists one strategy result (canonical JSON) plus its score records.
pub fn persist_result(
    out_dir: &Path,
    result: &StrategyResult,
    records: &[ScoreRecord],
) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Io { path: out_dir.to_path_buf(), reason: e.to_string() })?;
    let path = out_dir.join(format!("strategy_{}.json", result.strategy.letter()));
    std::fs::write(&path, serde_json::to_string_pretty(result).expect("result serializes"))
        .map_err(|e| PipelineError::Io { path: path.clone(), reason: e.to_string() })?;
    let scores_path = out_dir.join(format!("scores_{}.json", result.strategy.letter()));
    std::fs::write(
        &scores_path,
        serde_json::to_string_pretty(records).expect("records serialize"),
    )
    .map_err(|e| PipelineError::Io { path: scores_path.clone(), reason: e.to_string() })?;
    Ok(path)
}

/// The full toy experiment: benchmark, both datasets (generation against an
/// in-process local-edit mock), all five strategies, and persisted results.
/// Byte-reproducible from the global seed.
pub fn run_full_experiment(
    out_dir: &Path,
    global_seed: u64,
    config: &Config,
) -> Result<ExperimentOutput, PipelineError> {
    let bench = build_toy_benchmark(out_dir, global_seed, config)?;

    let derive = |namespace: u64| -> u64 {
        Rng::new(global_seed).substream(namespace).next_u64()
    };

    let rule_manifest = generate_rule_dataset(
        &bench.normals_manifest,
        config,
        config.strategies.pretrain_size,
        derive(ns::RULE_DATASET),
        &out_dir.join("rule"),
    )?;

    let gen_dir = out_dir.join("gen");
    let server = MockServer::start(MockMode::LocalEdit, derive(ns::GEN_MOCK), 0)?;
    let max_attempts =
        config.strategies.finetune_size * config.genclient.attempts_per_accept as usize;
    let (gen_manifest, gen_stats) = generate_gen_dataset(
        &bench.normals_manifest,
        config,
        &server.url(),
        config.strategies.finetune_size,
        max_attempts,
        derive(ns::GEN_DATASET),
        &gen_dir,
    )?;
    drop(server);

    let strategies_dir = out_dir.join("strategies");
    let mut results = Vec::new();
    for strategy in Strategy::ALL {
        let plan = StrategyPlan::new(
            strategy,
            &rule_manifest,
            &gen_manifest,
            &bench.eval_manifest,
            config,
            global_seed,
        );
        let (result, records) = run_strategy(&plan, config)?;
        persist_result(&strategies_dir, &result, &records)?;
        results.push(result);
    }

    Ok(ExperimentOutput {
        results,
        rule_manifest,
        gen_manifest,
        eval_manifest: bench.eval_manifest,
        gen_stats,
        gen_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_paths() -> (PathBuf, PathBuf, PathBuf) {
        ("rule/manifest.json".into(), "gen/manifest.json".into(), "eval/manifest.json".into())
    }

    #[test]
    fn single_stage_strategies_have_one_stage() {
        let (rule, generated, eval) = fake_paths();
        let config = Config::default();
        for strategy in [Strategy::SimOnly, Strategy::GenOnly, Strategy::Mixed] {
            let plan = StrategyPlan::new(strategy, &rule, &generated, &eval, &config, 7);
            assert_eq!(plan.stages.len(), 1, "{strategy:?}");
            assert_eq!(plan.stages[0].schedule.stage, StageLabel::Single);
        }
    }

    #[test]
    fn two_stage_strategies_order_their_datasets() {
        let (rule, generated, eval) = fake_paths();
        let config = Config::default();

        let d = StrategyPlan::new(Strategy::GenThenSim, &rule, &generated, &eval, &config, 7);
        assert_eq!(d.stages.len(), 2);
        assert_eq!(d.stages[0].datasets, vec![generated.clone()]);
        assert_eq!(d.stages[1].datasets, vec![rule.clone()]);

        let e = StrategyPlan::new(Strategy::SimThenGen, &rule, &generated, &eval, &config, 7);
        assert_eq!(e.stages[0].datasets, vec![rule.clone()]);
        assert_eq!(e.stages[1].datasets, vec![generated.clone()]);
        assert_eq!(e.stages[0].schedule.stage, StageLabel::Pretrain);
        assert_eq!(e.stages[1].schedule.stage, StageLabel::Finetune);
        assert!(
            e.stages[1].schedule.learning_rate < e.stages[0].schedule.learning_rate,
            "fine-tuning must run at a lower learning rate"
        );
    }

    #[test]
    fn mixed_strategy_concatenates_both_datasets() {
        let (rule, generated, eval) = fake_paths();
        let config = Config::default();
        let c = StrategyPlan::new(Strategy::Mixed, &rule, &generated, &eval, &config, 7);
        assert_eq!(c.stages[0].datasets, vec![rule, generated]);
    }

    #[test]
    fn strategy_letters_round_trip() {
        for strategy in Strategy::ALL {
            assert_eq!(Strategy::parse(&strategy.letter().to_string()), Some(strategy));
            assert_eq!(Strategy::parse(strategy.describe()), Some(strategy));
        }
        assert_eq!(Strategy::parse("z"), None);
    }

    #[test]
    fn wall_clock_is_not_serialized() {
        let result = StrategyResult {
            strategy: Strategy::SimOnly,
            description: "sim-only".into(),
            stage_loss_curves: vec![vec![0.5]],
            dataset_sizes: vec![10],
            auroc: 0.9,
            global_seed: 7,
            wall_clock_ms: vec![1234],
        };
        let json = serde_json::to_string(&result).unwrap();
        assert!(!json.contains("wall_clock"));
        assert!(json.contains("\"auroc\""));
    }
}
