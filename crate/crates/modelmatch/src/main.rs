use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modelmatch::config::PipelineConfig;
use modelmatch::error::{Error, Result};
use modelmatch::io::{ingest, write_dense_csv, IngestFormat};
use modelmatch::perturb::Checkpoint;
use modelmatch::pipeline;
use modelmatch::synth::SyntheticSpec;

#[derive(Parser)]
#[command(
    name = "modelmatch",
    version,
    about = "Rank model systems against a target cell population, evaluate metrics, \
             predict perturbation combinations, and recommend next experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the distance metric, e.g. l2xlog, emdxzscore
    #[arg(long)]
    metric: Option<String>,
    /// Override the EMD per-side cell cap
    #[arg(long)]
    max_cells: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an expression matrix file and report its shape
    Ingest {
        /// Input matrix file
        #[arg(long)]
        input: PathBuf,
        /// Input format: dense-csv or sparse-triplet
        #[arg(long, default_value = "dense-csv")]
        format: String,
        /// Optional path for a dense CSV copy of the parsed matrix
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank query conditions by distance to the target
    Rank(ConfigArgs),
    /// Corruption sweep comparing all four metric variants
    EvaluateMetrics(ConfigArgs),
    /// Train the perturbational autoencoder on labeled query conditions
    Train(ConfigArgs),
    /// Generate the in-silico combination grid from a trained model
    Predict {
        #[command(flatten)]
        common: ConfigArgs,
        /// Existing checkpoint; trains a fresh model when omitted
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Select k next experiments via constrained k-medoids
    Recommend {
        #[command(flatten)]
        common: ConfigArgs,
        /// Number of new conditions to select
        #[arg(long)]
        k: Option<usize>,
    },
    /// Generate a synthetic study with a planted ranking plus a run config
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_genes: usize,
        #[arg(long, default_value_t = 40)]
        n_signature_genes: usize,
        #[arg(long, default_value_t = 30)]
        cells_per_condition: usize,
        /// Query positions on the suppressiveness axis; must include 1.0
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.8,0.6,0.4,0.2,0.0")]
        positions: Vec<f64>,
        #[arg(long, default_value_t = 5.0)]
        effect_size: f64,
        #[arg(long, default_value_t = 0.1)]
        noise_sigma: f64,
    },
    /// Run the full pipeline: rank, then optional train/predict/recommend
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        /// Override the recommender's k
        #[arg(long)]
        k: Option<usize>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    // flag validation precedes config i/o so a bad flag is a usage error
    if let Some(metric) = &args.metric {
        metric.parse::<modelmatch::distance::DistanceMetricSpec>()?;
    }
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(metric) = &args.metric {
        cfg.metric.spec = metric.clone();
        cfg.metric_spec()?;
    }
    if let Some(max_cells) = args.max_cells {
        cfg.emd.max_cells = Some(max_cells);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, format, out } => {
            let format: IngestFormat = format.parse()?;
            let matrix = ingest(&input, format)?;
            println!(
                "parsed {}: {} cells x {} genes ({})",
                input.display(),
                matrix.n_cells(),
                matrix.n_genes(),
                matrix.norm_state.label()
            );
            if let Some(out) = out {
                write_dense_csv(&matrix, &out)?;
                println!("wrote dense copy to {}", out.display());
            }
        }
        Command::Rank(args) => {
            let cfg = load_config(&args)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            let mut outputs = Vec::new();
            let ranking = pipeline::run_rank(&cfg, &args.out, &mut outputs)?;
            for e in &ranking.entries {
                println!("{:>3}  {:<24} {:.6}", e.rank, e.condition_id, e.distance);
            }
            modelmatch::report::write_summary_json(
                cfg.seed,
                &cfg,
                &outputs,
                &args.out.join("summary.json"),
            )?;
        }
        Command::EvaluateMetrics(args) => {
            let cfg = load_config(&args)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            let mut outputs = Vec::new();
            let sweep = pipeline::run_evaluate(&cfg, &args.out, &mut outputs)?;
            let comparison = modelmatch::ranking::compare_metrics(&sweep)?;
            println!("metric ranking (area under score-vs-fraction):");
            for (i, (spec, area)) in comparison.iter().enumerate() {
                println!("{:>3}  {:<12} {:.6}", i + 1, spec.to_string(), area);
            }
            modelmatch::report::write_summary_json(
                cfg.seed,
                &cfg,
                &outputs,
                &args.out.join("summary.json"),
            )?;
        }
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            let mut outputs = Vec::new();
            let (_, outcome) = pipeline::run_train(&cfg, &args.out, &mut outputs)?;
            println!(
                "trained for {} epochs; final reconstruction loss {:.6}",
                outcome.loss_history.len(),
                outcome.loss_history.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Predict { common, model } => {
            let cfg = load_config(&common)?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            let mut outputs = Vec::new();
            let checkpoint = match model {
                Some(path) => Checkpoint::load(&path)?,
                None => pipeline::run_train(&cfg, &common.out, &mut outputs)?.0,
            };
            let grid = pipeline::run_predict(&cfg, &checkpoint, &common.out, &mut outputs)?;
            println!("generated {} in-silico conditions", grid.len());
        }
        Command::Recommend { common, k } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = k {
                match &mut cfg.recommend {
                    Some(r) => r.k = k,
                    None => {
                        cfg.recommend = Some(modelmatch::config::RecommendSection {
                            k,
                            fixed: None,
                        })
                    }
                }
            }
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            let mut outputs = Vec::new();
            let selection = pipeline::run_recommend(&cfg, &[], &common.out, &mut outputs)?;
            println!(
                "selected {} medoids (total cost {:.6}): {}",
                selection.chosen.len(),
                selection.total_cost,
                selection.chosen.join(", ")
            );
        }
        Command::Synth {
            seed,
            out,
            n_genes,
            n_signature_genes,
            cells_per_condition,
            positions,
            effect_size,
            noise_sigma,
        } => {
            let spec = SyntheticSpec {
                n_genes,
                n_signature_genes,
                cells_per_condition,
                positions,
                effect_size,
                noise_sigma,
                seed,
            };
            let planted = pipeline::emit_synthetic_study(&spec, &out)?;
            println!(
                "wrote synthetic study to {} (planted order: {})",
                out.display(),
                planted.join(" > ")
            );
        }
        Command::Run { common, k } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = k {
                match cfg.recommend.as_mut() {
                    Some(r) => r.k = k,
                    None => {
                        cfg.recommend = Some(modelmatch::config::RecommendSection {
                            k,
                            fixed: None,
                        })
                    }
                }
            }
            let outcome = pipeline::run_pipeline(&cfg, &common.out)?;
            println!("ranking:");
            for e in &outcome.ranking.entries {
                println!("{:>3}  {:<24} {:.6}", e.rank, e.condition_id, e.distance);
            }
            if !outcome.predictions.is_empty() {
                println!("{} in-silico conditions generated", outcome.predictions.len());
            }
            if let Some(sel) = &outcome.selection {
                println!("recommended: {}", sel.chosen.join(", "));
            }
            println!("reports written to {}", common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not failures
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
