use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use geoloc::corpus::{CorpusFormat, StopwordSource};
use geoloc::pipeline::{compare_reports, run_pipeline, write_synthetic_corpus, PipelineConfig, PipelineError, Report, RunSummary, Stage};

#[derive(Parser)]
#[command(name = "geoloc", version, about = "Multiview geolocation of social-media users")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed; every component seed derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file overlaid on the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// geotext, utgeo2011, twitterworld or synthetic.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// `builtin`, `none` or a path to a one-word-per-line file.
    #[arg(long, global = true)]
    stopwords: Option<String>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    stem: Option<bool>,
    /// Input corpus; without one the synthetic generator is used.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// jsonl or tsv.
    #[arg(long, global = true)]
    format: Option<CorpusFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the corpus.
    Ingest,
    /// Write a synthetic corpus.
    Synth {
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Build the tfidf, doc2vec, node2vec and timestamp views.
    Featurize,
    /// Discretize training locations into classes.
    Partition,
    Train,
    /// Score the test split, or compare finished runs.
    Evaluate {
        /// Output directories of finished runs to tabulate side by side.
        #[arg(long, num_args = 1..)]
        compare: Vec<PathBuf>,
    },
    /// Every stage, reusing cached ones.
    Run,
    /// Write the partition as GeoJSON.
    ExportGrid {
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn build_config(g: &Global) -> anyhow::Result<PipelineConfig> {
    let mut config = match &g.config {
        Some(path) => PipelineConfig::load(path, g.preset.as_deref())?,
        None => PipelineConfig::preset(g.preset.as_deref().unwrap_or("synthetic"))?,
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(dir) = &g.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(s) = &g.stopwords {
        config.preprocess.stopwords = match s.as_str() {
            "builtin" => StopwordSource::Builtin,
            "none" => StopwordSource::None,
            path => StopwordSource::File(path.into()),
        };
    }
    if let Some(stem) = g.stem {
        config.preprocess.stem = stem;
    }
    if let Some(path) = &g.corpus {
        config.corpus.path = Some(path.clone());
    }
    if let Some(format) = g.format {
        config.corpus.format = format;
    }
    config.validate()?;
    Ok(config)
}

fn print_summary(summary: &RunSummary) {
    for r in &summary.stages {
        let state = if r.cached { "cached" } else { "ran" };
        eprintln!("{:<10} {:<6} {}", r.stage.as_str(), state, &r.hash[..12]);
    }
    if let Some(report) = &summary.report {
        let t = &report.test;
        println!(
            "test users {}  acc {:.2}%  mean {:.1} km  median {:.1} km  @161 {:.2}%",
            t.num_users, t.accuracy_pct, t.mean_km, t.median_km, t.acc_at_161
        );
        for (km, pct) in &report.acc_within_km {
            println!("@{km} {pct:.2}%");
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = build_config(&cli.global)?;
    let until = match &cli.command {
        Command::Synth { output } => {
            let spec = config.resolved().synth.context("the configured corpus is not synthetic")?;
            write_synthetic_corpus(&spec, output)?;
            return Ok(());
        }
        Command::Evaluate { compare } if !compare.is_empty() => {
            let reports = compare
                .iter()
                .map(|dir| Ok((dir.display().to_string(), Report::load(&dir.join("evaluate/report.json"))?)))
                .collect::<Result<Vec<_>, PipelineError>>()?;
            print!("{}", compare_reports(&reports));
            return Ok(());
        }
        Command::Ingest => Stage::Ingest,
        Command::Featurize => Stage::Featurize,
        Command::Partition | Command::ExportGrid { .. } => Stage::Partition,
        Command::Train => Stage::Train,
        Command::Evaluate { .. } | Command::Run => Stage::Evaluate,
    };
    let summary = run_pipeline(&config, until)?;
    print_summary(&summary);
    if let Command::ExportGrid { output } = &cli.command {
        let src = summary.out_dir.join("partition/partition.geojson");
        std::fs::copy(&src, output).with_context(|| format!("copying {} to {}", src.display(), output.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
