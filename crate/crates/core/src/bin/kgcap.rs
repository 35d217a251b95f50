use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kgcap::nn::Mode;
use kgcap::pipeline::{self, RunConfig, RunLog};

#[derive(Parser)]
#[command(name = "kgcap", version, about = "Knowledge-graph conditioned image captioning")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Detection confidence threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Beam width for decoding.
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Input combination, e.g. `image` or `direct+indirect+image`.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the knowledge graph edge list.
    IngestKg,
    /// Retrofit word vectors to the graph.
    Retrofit,
    /// Expand detections into directly and indirectly related terms.
    ExpandTerms,
    /// Pretrain the related-term encoder.
    PretrainEncoder,
    /// Train a caption model for the selected mode.
    Train,
    /// Beam-decode the test split.
    Caption,
    /// Score a results file.
    Evaluate {
        /// Results JSON lines; defaults to the one written by `caption`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Train and score every input combination.
    Ablate {
        /// Train modes on separate threads; output is unchanged.
        #[arg(long)]
        parallel: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::IngestKg => "ingest-kg",
            Command::Retrofit => "retrofit",
            Command::ExpandTerms => "expand-terms",
            Command::PretrainEncoder => "pretrain-encoder",
            Command::Train => "train",
            Command::Caption => "caption",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.threshold {
        cfg.expansion.detection_threshold = t;
    }
    if let Some(b) = c.beam {
        cfg.decode.beam_size = b;
    }
    if let Some(m) = &c.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(o) = &c.out {
        cfg.paths.out = Some(std::env::current_dir()?.join(o));
    }
    cfg.finalize();
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KGCAP_LOG", "warn")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli.common).context("invalid configuration")?;
    let name = cli.command.name();
    let mut log = RunLog::new(name, &cfg)?;
    match &cli.command {
        Command::IngestKg => {
            let g = pipeline::ingest_kg(&cfg, &mut log)?;
            println!("{} terms, {} edges", g.term_count(), g.edge_count());
        }
        Command::Retrofit => {
            let s = pipeline::retrofit_stage(&cfg, &mut log)?;
            println!("{} vectors of dimension {}", s.len(), s.dim());
        }
        Command::ExpandTerms => {
            let lines = pipeline::expand_stage(&cfg, &mut log)?;
            println!("related terms for {} images", lines.len());
        }
        Command::PretrainEncoder => {
            pipeline::pretrain_stage(&cfg, &mut log)?;
            println!(
                "encoder written to {}",
                cfg.out_dir().join(pipeline::ENCODER_FILE).display()
            );
        }
        Command::Train => {
            pipeline::train_stage(&cfg, &mut log)?;
            println!(
                "model written to {}",
                cfg.out_dir().join(pipeline::MODEL_FILE).display()
            );
        }
        Command::Caption => {
            let results = pipeline::caption_stage(&cfg, &mut log)?;
            println!("captioned {} images", results.len());
        }
        Command::Evaluate { results } => {
            let report = pipeline::evaluate_stage(&cfg, results.as_deref(), &mut log)?;
            print!("{}", kgcap::metrics::format_table(&[("candidate".into(), report)]));
        }
        Command::Ablate { parallel } => {
            let rows = pipeline::ablate_stage(&cfg, *parallel, &mut log)?;
            print!("{}", pipeline::ablation_table(&rows));
        }
    }
    let path = log.save(&cfg.out_dir())?;
    log::info!("run log written to {}", path.display());
    Ok(())
}
