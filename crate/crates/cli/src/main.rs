//! Command-line front end for the triplet-refinement toolkit.
//!
//! Every pipeline stage is a subcommand on one binary, so the whole flow —
//! embed, rank, refine, plan, train, quantize, evaluate — can be driven from
//! shell scripts or a single JSON config (`pipeline`).  Progress and logging
//! go to stderr; stdout carries one terse result line, or a machine-readable
//! JSON summary when `--json` is given.
//!
//! Exit codes: 0 success, 1 invalid input or config, 2 I/O or provider
//! failure, 64 usage error.

mod commands;
mod pipeline;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tripletforge", version, about = "Refine, batch, and evaluate triplet training data")]
struct Cli {
    /// Emit a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads for parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic corpus with known gold structure
    Fixture(commands::FixtureArgs),
    /// Embed dataset texts through an HTTP provider into a vector store
    Embed(commands::EmbedArgs),
    /// Rank a dataset's corpus against its queries using stored vectors
    Rank(commands::RankArgs),
    /// Run the refinement pipeline over one dataset
    Refine(commands::RefineArgs),
    /// Build a homogeneous-ordered or mixed-task batch plan
    BatchPlan(commands::BatchPlanArgs),
    /// Train the toy linear encoder over saved batch plans
    TrainToy(commands::TrainToyArgs),
    /// Sample queries and build a light evaluation subset
    LightSet(commands::LightSetArgs),
    /// Score retrieval quality with stored vectors or a trained encoder
    Eval(commands::EvalArgs),
    /// Quantize a float vector store to int8
    Quantize(commands::QuantizeArgs),
    /// Run every stage end to end from one JSON config
    Pipeline(commands::PipelineArgs),
    /// Diff two evaluation reports metric by metric
    Compare(commands::CompareArgs),
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = err.print();
            return code;
        }
    };
    if cli.threads > 0 {
        // A second global-pool init in one process is harmless; the first wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let json = cli.json;
    match &cli.command {
        Command::Fixture(args) => commands::fixture(args, json),
        Command::Embed(args) => commands::embed(args, json),
        Command::Rank(args) => commands::rank(args, json),
        Command::Refine(args) => commands::refine(args, json),
        Command::BatchPlan(args) => commands::batch_plan(args, json),
        Command::TrainToy(args) => commands::train_toy(args, json),
        Command::LightSet(args) => commands::light_set(args, json),
        Command::Eval(args) => commands::eval(args, json),
        Command::Quantize(args) => commands::quantize(args, json),
        Command::Pipeline(args) => commands::pipeline(args, json),
        Command::Compare(args) => commands::compare(args, json),
    }
}

/// 2 for anything that smells of a broken environment — file system, wire,
/// corrupt or truncated artifacts; 1 for inputs and configs we understood but
/// rejected.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    use tripletforge::embed::EmbedError;
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<EmbedError>() {
            match e {
                EmbedError::Provider { .. }
                | EmbedError::Transport(_)
                | EmbedError::BadResponse(_)
                | EmbedError::Corrupt { .. }
                | EmbedError::BadMagic { .. }
                | EmbedError::BadVersion { .. } => return 2,
                _ => {}
            }
        }
    }
    1
}
