//! Flag parsing and dispatch. Every flag that shadows a config key is
//! applied to the loaded config before validation, so overrides are checked
//! by the same rules and show up in the config hash stamped on artifacts.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, EvaluateArgs, StatsArgs};
use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::logging::RunLog;

#[derive(Debug, Parser)]
#[command(
    name = "pairforge",
    version,
    about = "Bilingual corpus-to-training-pairs pipeline with retrieval evaluation"
)]
pub struct Cli {
    /// Pipeline config file (TOML). Defaults to ./pairforge.toml; built-in
    /// defaults apply when the default path does not exist.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Artifact directory (overrides output_dir in the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Concurrent extraction calls (overrides jobs in the config).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Suppress the human summary on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read, validate, and chunk every configured corpus.
    Ingest,
    /// Extract entities, facts, and questions into the knowledge graph.
    BuildKg,
    /// Sample anchor-positive training pairs from the graph.
    GenPairs {
        /// Sampling seed (overrides pairgen.rng_seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Atomic-fact anchors per chunk (overrides pairgen.m_a).
        #[arg(long)]
        m_a: Option<usize>,
        /// Question anchors per chunk (overrides pairgen.m_q).
        #[arg(long)]
        m_q: Option<usize>,
        /// Entity-sentence anchors per chunk (overrides pairgen.m_e).
        #[arg(long)]
        m_e: Option<usize>,
    },
    /// Add translated anchors for every eligible native pair.
    Augment,
    /// Strip the dataset down to anchor-positive text pairs.
    ExportDataset,
    /// Embed every chunk into a searchable vector index.
    Index {
        /// Embedding batch size (overrides eval.batch_size).
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Score retrieval for a query set over a document corpus.
    Evaluate {
        /// Query records (JSONL: query_id, text, language, relevant_doc_ids).
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        /// Corpus records (JSONL: doc_id, text).
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// Dataset label used in the report file names.
        #[arg(long)]
        dataset: String,
        /// Model label for the report (defaults to the backend id).
        #[arg(long)]
        model: Option<String>,
        /// Cut-offs, comma separated and ascending (overrides eval.ks).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        ks: Option<Vec<usize>>,
        /// Embedding batch size (overrides eval.batch_size).
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Rank systems across datasets and test which differences hold up.
    Stats {
        /// Score matrix file (.csv with a model column, or .jsonl cells).
        #[arg(long, value_name = "FILE")]
        scores: Option<PathBuf>,
        /// Build the matrix from this run's eval reports instead.
        #[arg(long)]
        from_reports: bool,
        /// Metric key to pull from eval reports (default acc@3).
        #[arg(long)]
        metric: Option<String>,
        /// Significance level (overrides stats.alpha).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Summarize every artifact in the output directory.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::BuildKg => "build-kg",
            Command::GenPairs { .. } => "gen-pairs",
            Command::Augment => "augment",
            Command::ExportDataset => "export-dataset",
            Command::Index { .. } => "index",
            Command::Evaluate { .. } => "evaluate",
            Command::Stats { .. } => "stats",
            Command::Report => "report",
        }
    }
}

/// Apply config-shadowing flags onto the loaded config.
fn apply_overrides(cli: &Cli, config: &mut PipelineConfig) {
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    match &cli.command {
        Command::GenPairs { seed, m_a, m_q, m_e } => {
            if let Some(seed) = seed {
                config.pairgen.rng_seed = *seed;
            }
            if let Some(m_a) = m_a {
                config.pairgen.m_a = *m_a;
            }
            if let Some(m_q) = m_q {
                config.pairgen.m_q = *m_q;
            }
            if let Some(m_e) = m_e {
                config.pairgen.m_e = *m_e;
            }
        }
        Command::Index { batch_size } => {
            if let Some(batch) = batch_size {
                config.eval.batch_size = *batch;
            }
        }
        Command::Evaluate { ks, batch_size, .. } => {
            if let Some(ks) = ks {
                config.eval.ks = ks.clone();
            }
            if let Some(batch) = batch_size {
                config.eval.batch_size = *batch;
            }
        }
        Command::Stats { alpha, .. } => {
            if let Some(alpha) = alpha {
                config.stats.alpha = *alpha;
            }
        }
        _ => {}
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let explicit = cli.config.is_some();
    let config_path = cli
        .config
        .clone()
        .unwrap_or_else(|| PathBuf::from("pairforge.toml"));
    let mut config = PipelineConfig::load(&config_path, explicit)?;
    apply_overrides(&cli, &mut config);
    config.validate()?;

    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| crate::error::write_error(&config.output_dir, e))?;
    let mut log = RunLog::create(&config.output_dir, cli.command.name(), cli.quiet)?;

    match &cli.command {
        Command::Ingest => commands::cmd_ingest(&config, &mut log)?,
        Command::BuildKg => commands::cmd_build_kg(&config, &mut log)?,
        Command::GenPairs { .. } => commands::cmd_gen_pairs(&config, &mut log)?,
        Command::Augment => commands::cmd_augment(&config, &mut log)?,
        Command::ExportDataset => commands::cmd_export(&config, &mut log)?,
        Command::Index { .. } => commands::cmd_index(&config, &mut log, config.eval.batch_size)?,
        Command::Evaluate {
            queries,
            corpus,
            dataset,
            model,
            ..
        } => {
            let args = EvaluateArgs {
                queries: queries.clone(),
                corpus: corpus.clone(),
                dataset: dataset.clone(),
                model: model.clone(),
            };
            commands::cmd_evaluate(&config, &mut log, &args)?
        }
        Command::Stats {
            scores,
            from_reports,
            metric,
            ..
        } => {
            let args = StatsArgs {
                scores: scores.clone(),
                from_reports: *from_reports,
                metric: metric.clone(),
            };
            commands::cmd_stats(&config, &mut log, &args)?
        }
        Command::Report => commands::cmd_report(&config, &mut log)?,
    };
    Ok(())
}
