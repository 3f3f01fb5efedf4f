//! Command-line entry points for the synthetic-defect pipeline.
//!
//! Every subcommand exits 0 on success; failures print a machine-readable
//! JSON object to stderr (`{"error": {"kind", "message"}}`) and exit nonzero.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use defectforge::detector::{train, AutoencoderModel, StageLabel, TrainSchedule};
use defectforge::genclient::mock::{MockMode, MockServer};
use defectforge::imgcore::{load_image, Rng};
use defectforge::matchfilter::filter_decision;
use defectforge::pipeline::strategy::{evaluate_model, persist_result, ExperimentOutput};
use defectforge::pipeline::{
    build_toy_benchmark, emit_report, generate_gen_dataset, generate_rule_dataset,
    run_full_experiment, run_strategy, Config, PipelineError, Strategy, StrategyPlan,
    StrategyResult,
};

#[derive(Parser)]
#[command(
    name = "defectforge",
    about = "Synthetic-defect datasets, a keypoint-match quality gate, and a two-stage anomaly detector",
    version
)]
struct Cli {
    /// Path to a JSON config file; defaults apply for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the procedural toy benchmark (training normals + labeled eval split).
    ToyBench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Generate a rule-based defect dataset from a normals manifest.
    SynthRule {
        #[arg(long)]
        normals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Generate defect candidates via the editing service and keep the gated ones.
    SynthGen {
        #[arg(long)]
        normals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accepted samples to collect.
        #[arg(long, default_value_t = 60)]
        accept: usize,
        /// Attempt budget; defaults to accept * attempts_per_accept from config.
        #[arg(long)]
        max_attempts: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Service URL, or mock:<mode> for an in-process mock.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Gate one candidate image against its source normal; prints the report.
    Filter {
        #[arg(long)]
        normal: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Train the reconstruction detector on one or more dataset manifests.
    Train {
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long, default_value = "single")]
        stage: String,
        /// Starting checkpoint for fine-tuning.
        #[arg(long)]
        model_in: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Score an eval manifest with a trained model and print the AUROC.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// Run one training strategy (or all five) and persist the results.
    Strategy {
        /// a|b|c|d|e or their names, or "all".
        #[arg(long, default_value = "all")]
        plan: String,
        #[arg(long)]
        rule: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Render the comparison table, loss curves, and decision montages.
    Report {
        /// Directory holding strategy_<letter>.json files.
        #[arg(long)]
        strategies: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Generation dataset directory, for the montage panels.
        #[arg(long)]
        gen: Option<PathBuf>,
    },
    /// The whole toy experiment: benchmark, datasets, five strategies, report.
    Experiment {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Serve the deterministic mock generation service until interrupted.
    ServeMock {
        #[arg(long, default_value = "local-edit")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8077)]
        port: u16,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{payload}");
            std::process::exit(1);
        }
    }
}

/// Resolves `mock:<mode>` endpoints to a live in-process server; the server
/// handle keeps it alive for the caller's lifetime.
fn resolve_endpoint(
    endpoint: &str,
    seed: u64,
) -> Result<(String, Option<MockServer>), PipelineError> {
    if let Some(mode_str) = endpoint.strip_prefix("mock:") {
        let mode: MockMode = mode_str.parse().map_err(|m: String| {
            PipelineError::Gen(defectforge::genclient::GenError::MalformedResponse(m))
        })?;
        let server = MockServer::start(mode, seed, 0)?;
        Ok((server.url(), Some(server)))
    } else {
        Ok((endpoint.to_string(), None))
    }
}

fn manifest_training_pairs(
    datasets: &[PathBuf],
    config: &Config,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, PipelineError> {
    let mut pairs = Vec::new();
    for dataset in datasets {
        pairs.extend(defectforge::pipeline::strategy::manifest_pairs(dataset, config)?);
    }
    Ok(pairs)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = Config::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::ToyBench { out, seed } => {
            let bench = build_toy_benchmark(&out, seed, &config)?;
            println!(
                "{}",
                serde_json::json!({
                    "normals_manifest": bench.normals_manifest,
                    "eval_manifest": bench.eval_manifest,
                })
            );
        }
        Command::SynthRule { normals, out, count, seed } => {
            let manifest = generate_rule_dataset(&normals, &config, count, seed, &out)?;
            println!("{}", serde_json::json!({ "manifest": manifest, "count": count }));
        }
        Command::SynthGen { normals, out, accept, max_attempts, seed, endpoint } => {
            let endpoint = config.effective_endpoint(endpoint.as_deref());
            let (url, _mock) = resolve_endpoint(&endpoint, seed ^ 0x6d6f636b)?;
            let budget = max_attempts
                .unwrap_or(accept * config.genclient.attempts_per_accept as usize);
            let (manifest, stats) =
                generate_gen_dataset(&normals, &config, &url, accept, budget, seed, &out)?;
            println!(
                "{}",
                serde_json::json!({ "manifest": manifest, "stats": stats })
            );
        }
        Command::Filter { normal, candidate } => {
            let normal_img = load_image(&normal)?;
            let candidate_img = load_image(&candidate)?;
            let report = filter_decision(&normal_img, &candidate_img, &config.filter)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Train {
            dataset,
            model_out,
            stage,
            model_in,
            seed,
            epochs,
            learning_rate,
            curve_out,
        } => {
            let mut schedule = match stage.as_str() {
                "pretrain" => config.detector.pretrain_schedule(seed),
                "finetune" => {
                    TrainSchedule::finetune_from(&config.detector.pretrain_schedule(seed), seed)
                }
                _ => TrainSchedule {
                    stage: StageLabel::Single,
                    ..config.detector.pretrain_schedule(seed)
                },
            };
            if let Some(e) = epochs {
                schedule.epochs = e;
            }
            if let Some(lr) = learning_rate {
                schedule.learning_rate = lr;
            }
            let mut model = match model_in {
                Some(path) => AutoencoderModel::load(&path)?,
                None => AutoencoderModel::new(
                    &config.detector.layer_sizes(),
                    &mut Rng::new(seed).substream(0x6d6f64656c),
                ),
            };
            let pairs = manifest_training_pairs(&dataset, &config)?;
            let curve = train(&mut model, &pairs, &schedule)?;
            model.save(&model_out)?;
            if let Some(path) = curve_out {
                std::fs::write(&path, serde_json::to_string_pretty(&curve).expect("curve"))
                    .map_err(|e| PipelineError::Io { path, reason: e.to_string() })?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "model": model_out,
                    "pairs": pairs.len(),
                    "final_loss": curve.last(),
                })
            );
        }
        Command::Eval { model, eval, scores_out } => {
            let model = AutoencoderModel::load(&model)?;
            let (auroc, records) = evaluate_model(&model, &eval, &config)?;
            if let Some(path) = scores_out {
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(&records).expect("records serialize"),
                )
                .map_err(|e| PipelineError::Io { path, reason: e.to_string() })?;
            }
            println!(
                "{}",
                serde_json::json!({ "auroc": auroc, "records": records.len() })
            );
        }
        Command::Strategy { plan, rule, gen, eval, out, seed } => {
            let strategies: Vec<Strategy> = if plan == "all" {
                Strategy::ALL.to_vec()
            } else {
                vec![Strategy::parse(&plan).ok_or_else(|| PipelineError::BadConfig {
                    path: PathBuf::from(&plan),
                    reason: "unknown strategy (a|b|c|d|e|all)".to_string(),
                })?]
            };
            let mut results = Vec::new();
            for strategy in strategies {
                let plan = StrategyPlan::new(strategy, &rule, &gen, &eval, &config, seed);
                let (result, records) = run_strategy(&plan, &config)?;
                persist_result(&out, &result, &records)?;
                println!(
                    "{}",
                    serde_json::json!({
                        "strategy": result.strategy.letter().to_string(),
                        "auroc": result.auroc,
                    })
                );
                results.push(result);
            }
        }
        Command::Report { strategies, out, gen } => {
            let mut results: Vec<StrategyResult> = Vec::new();
            for letter in ['a', 'b', 'c', 'd', 'e'] {
                let path = strategies.join(format!("strategy_{letter}.json"));
                if path.exists() {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| PipelineError::Io { path: path.clone(), reason: e.to_string() })?;
                    results.push(serde_json::from_str(&text).map_err(|e| {
                        PipelineError::BadManifest { path, reason: e.to_string() }
                    })?);
                }
            }
            if results.is_empty() {
                return Err(PipelineError::EmptyDataset(format!(
                    "no strategy_<letter>.json files under {}",
                    strategies.display()
                )));
            }
            let bundle = emit_report(&results, gen.as_deref(), &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "table": bundle.table_txt,
                    "montages": bundle.montages.len(),
                })
            );
        }
        Command::Experiment { out, seed } => {
            let ExperimentOutput { results, gen_stats, gen_dir, .. } =
                run_full_experiment(&out, seed, &config)?;
            let bundle = emit_report(&results, Some(&gen_dir), &out.join("report"))?;
            for result in &results {
                println!(
                    "strategy {} ({}): auroc {:.4}",
                    result.strategy.letter(),
                    result.description,
                    result.auroc
                );
            }
            println!(
                "{}",
                serde_json::json!({
                    "report": bundle.table_txt,
                    "acceptance_rate": gen_stats.acceptance_rate,
                })
            );
        }
        Command::ServeMock { mode, seed, port } => {
            let mode: MockMode = mode.parse().map_err(|m: String| {
                PipelineError::Gen(defectforge::genclient::GenError::MalformedResponse(m))
            })?;
            let server = MockServer::start(mode, seed, port)?;
            println!("mock service listening on {}", server.url());
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
    }
    Ok(())
}
