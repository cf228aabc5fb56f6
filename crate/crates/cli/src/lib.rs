//! `viact` command-line driver.

pub mod commands;
pub mod common;
pub mod config;
pub mod render;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{attend, bench, eval, finetune, pretrain, sweep, synth};
use config::{ConfigFile, Global};

#[derive(Debug, Parser)]
#[command(
    name = "viact",
    version,
    about = "Anatomically constrained video transformer toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset into --data-root.
    Synth(synth::SynthArgs),
    /// Masked-autoencoder pre-training of the frame encoder.
    Pretrain(pretrain::PretrainArgs),
    /// Clip classification, one run per seed.
    Finetune(finetune::FinetuneArgs),
    /// Metrics of a classifier checkpoint on one split.
    Eval(eval::EvalArgs),
    /// Mask-ratio and positional-embedding ablation grid.
    Sweep(sweep::SweepArgs),
    /// Pre-training step cost of the anatomical and grid tokenizers.
    Bench(bench::BenchArgs),
    /// Class-token attention over the myocardium points, per frame.
    Attend(attend::AttendArgs),
}

impl Command {
    pub const NAMES: [&'static str; 7] = [
        "synth", "pretrain", "finetune", "eval", "sweep", "bench", "attend",
    ];
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.global.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    file.check_sections(&Command::NAMES)?;
    let global = Global {
        config: cli.global.config.clone(),
        ..file.overlay("", &cli.global)?
    };
    match cli.command {
        Command::Synth(a) => synth::run(&global, &file.overlay("synth", &a)?),
        Command::Pretrain(a) => pretrain::run(&global, &file.overlay("pretrain", &a)?).map(|_| ()),
        Command::Finetune(a) => finetune::run(&global, &file.overlay("finetune", &a)?).map(|_| ()),
        Command::Eval(a) => eval::run(&global, &file.overlay("eval", &a)?).map(|_| ()),
        Command::Sweep(a) => sweep::run(&global, &file.overlay("sweep", &a)?).map(|_| ()),
        Command::Bench(a) => bench::run(&global, &file.overlay("bench", &a)?).map(|_| ()),
        Command::Attend(a) => attend::run(&global, &file.overlay("attend", &a)?).map(|_| ()),
    }
}
