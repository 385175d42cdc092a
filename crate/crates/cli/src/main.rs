//! `sonohazard <command> <config.toml> [--out DIR] [--set key=value]...`
//!
//! Exit codes: 0 success, 1 usage, 2 configuration, 3 missing or bad input
//! data, 4 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sonohazard::config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "sonohazard", version, about = "Ultrasonic hazard detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Root directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a config value, e.g. `--set corpus.snr_db=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the labeled source clips as WAV files with JSON sidecars.
    Synth(Common),
    /// Render synthesized clips through the microphone array.
    Render(Common),
    /// Delay-and-sum the rendered recordings toward the detection.
    Beamform {
        #[command(flatten)]
        common: Common,
        /// Detections file (`px,py,class_name` lines); one output per detection.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Spectrograms and window batches of the beamformed clips.
    Features(Common),
    /// Train on the configured split and save the weights.
    Train(Common),
    /// Score the saved model on the test clips.
    Eval(Common),
    /// Stratified k-fold cross-validation.
    Kfold(Common),
    /// F1 of the saved model across SNR levels.
    SweepSnr(Common),
    /// F1 of the saved model across reverberant rooms.
    SweepRoom(Common),
    /// Train and score the four ablation variants.
    Ablate(Common),
    /// Time whole-clip inference of the saved model.
    Time(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, common, detections) = match &cli.command {
        Command::Synth(c) => ("synth", c, None),
        Command::Render(c) => ("render", c, None),
        Command::Beamform { common, detections } => ("beamform", common, detections.clone()),
        Command::Features(c) => ("features", c, None),
        Command::Train(c) => ("train", c, None),
        Command::Eval(c) => ("eval", c, None),
        Command::Kfold(c) => ("kfold", c, None),
        Command::SweepSnr(c) => ("sweep-snr", c, None),
        Command::SweepRoom(c) => ("sweep-room", c, None),
        Command::Ablate(c) => ("ablate", c, None),
        Command::Time(c) => ("time", c, None),
    };
    let result = ExperimentConfig::load(&common.config, &common.set)
        .and_then(|cfg| commands::run(name, &cfg, &common.out, detections.as_deref()));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sonohazard {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
