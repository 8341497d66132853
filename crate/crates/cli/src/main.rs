use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cmd;
mod config;
mod failure;

use config::PipelineConfig;
use failure::{CmdResult, Failure};

/// Taxonomy construction, cross-modal matching, fusion and metrics for
/// sound-generation datasets.
#[derive(Parser, Debug)]
#[command(name = "divesound", version, about)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every seeded stage (LLM requests, frame sampling, label table).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build, validate and summarize taxonomies.
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Match clips to subcategories and write the dataset manifest.
    #[command(subcommand, name = "match")]
    Match(MatchCmd),
    /// Evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Conditioning vectors.
    #[command(subcommand)]
    Fuse(FuseCmd),
    /// Create and inspect embedding files.
    #[command(subcommand)]
    Embed(EmbedCmd),
}

#[derive(Subcommand, Debug)]
enum TaxonomyCmd {
    /// Run the two-stage LLM pipeline over a labels file.
    Build(cmd::taxonomy::BuildArgs),
    /// Check a taxonomy file; violations go to standard error.
    Validate {
        path: Option<PathBuf>,
    },
    /// Class count and subcategory statistics.
    Stats {
        path: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum MatchCmd {
    Run(cmd::matching::RunArgs),
}

#[derive(Subcommand, Debug)]
enum MetricsCmd {
    /// Fréchet distance between Gaussians fitted to two embedding files.
    Fad {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
    },
    /// Mean squared pairwise distance per class of a manifest.
    Msd {
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Group clips by class or by class/subcategory.
        #[arg(long, default_value = "class")]
        by: cmd::metrics::Grouping,
    },
    /// Welch's t-test on two samples (files of numbers).
    Ttest(TtestArgs),
}

#[derive(Args, Debug)]
struct TtestArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Subcommand, Debug)]
enum FuseCmd {
    Export(cmd::fuse::ExportArgs),
}

#[derive(Subcommand, Debug)]
enum EmbedCmd {
    /// Pack a JSONL file of {"id", "vector"} records into an embedding file.
    Pack(cmd::embed::PackArgs),
    /// Request embeddings from a provider service.
    Fetch(cmd::embed::FetchArgs),
    /// Write provider request items for the subcategory texts of a taxonomy.
    Texts(cmd::embed::TextsArgs),
    /// Print the header of an embedding file.
    Inspect {
        path: PathBuf,
    },
}

fn load_config(cli: &Cli) -> CmdResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn dispatch(command: Command, ctx: &mut cmd::Ctx) -> CmdResult {
    match command {
        Command::Taxonomy(TaxonomyCmd::Build(args)) => cmd::taxonomy::build(ctx, args),
        Command::Taxonomy(TaxonomyCmd::Validate { path }) => cmd::taxonomy::validate(ctx, path),
        Command::Taxonomy(TaxonomyCmd::Stats { path }) => cmd::taxonomy::stats(ctx, path),
        Command::Match(MatchCmd::Run(args)) => cmd::matching::run(ctx, args),
        Command::Metrics(MetricsCmd::Fad { real, gen }) => cmd::metrics::fad(ctx, &real, &gen),
        Command::Metrics(MetricsCmd::Msd { emb, manifest, by }) => cmd::metrics::msd(ctx, &emb, manifest, by),
        Command::Metrics(MetricsCmd::Ttest(TtestArgs { a, b })) => cmd::metrics::ttest(ctx, &a, &b),
        Command::Fuse(FuseCmd::Export(args)) => cmd::fuse::export(ctx, args),
        Command::Embed(EmbedCmd::Pack(args)) => cmd::embed::pack(ctx, args),
        Command::Embed(EmbedCmd::Fetch(args)) => cmd::embed::fetch(ctx, args),
        Command::Embed(EmbedCmd::Texts(args)) => cmd::embed::texts(ctx, args),
        Command::Embed(EmbedCmd::Inspect { path }) => cmd::embed::inspect(ctx, &path),
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = load_config(&cli)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let command = cli
        .command
        .ok_or_else(|| Failure::validation("no command given (see --help)"))?;
    let mut ctx = cmd::Ctx::new(cfg);
    match cli.threads {
        Some(0) => Err(Failure::validation("--threads must be at least 1")),
        Some(n) => divesound::parallel::with_threads(n, || dispatch(command, &mut ctx)),
        None => dispatch(command, &mut ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
