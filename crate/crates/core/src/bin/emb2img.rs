use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emb2img::pipeline::{self, PipelineError};
use serde_json::json;

/// Turn embedding matrices into images and classify them with a small CNN.
#[derive(Debug, Parser)]
#[command(name = "emb2img", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a feature layout (t-SNE of the transposed matrix, rotated onto a grid)
    Layout(pipeline::LayoutArgs),
    /// Render embeddings through a layout into an image dataset
    Render(pipeline::RenderArgs),
    /// Train the extractor / autoencoder / classifier stack
    Train(pipeline::TrainArgs),
    /// Report checkpoint accuracy on a dataset as JSON
    Eval(pipeline::EvalArgs),
    /// Write one image as an 8-bit grayscale PNG
    Inspect(pipeline::InspectArgs),
    /// Generate a two-class Gaussian embedding file (and optional stand-in weights)
    Synth(pipeline::SynthArgs),
}

fn configure_threads() -> Result<(), PipelineError> {
    let Ok(v) = std::env::var("EMB2IMG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PipelineError::Usage(format!("EMB2IMG_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| PipelineError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    configure_threads()?;
    match cli.command {
        Command::Layout(a) => pipeline::cmd_layout(&a).map(drop),
        Command::Render(a) => pipeline::cmd_render(&a).map(drop),
        Command::Train(a) => {
            let s = pipeline::cmd_train(&a)?;
            println!("{}", json!({ "val_accuracy": s.final_val_accuracy }));
            Ok(())
        }
        Command::Eval(a) => {
            let acc = pipeline::cmd_eval(&a)?;
            println!("{}", json!({ "accuracy": acc }));
            Ok(())
        }
        Command::Inspect(a) => pipeline::cmd_inspect(&a),
        Command::Synth(a) => pipeline::cmd_synth(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
