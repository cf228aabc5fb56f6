use std::collections::BTreeMap;
use std::fs;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use viact_core::data::{synth_dataset, Dataset, SynthConfig};

use crate::config::{write_snapshot, Global, SNAPSHOT};

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 512)]
    pub n_train: usize,
    #[arg(long, default_value_t = 128)]
    pub n_val: usize,
    #[arg(long, default_value_t = 128)]
    pub n_test: usize,
    /// Class separation in [0, 1]; 0 makes the classes indistinguishable.
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    /// Frame side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Replace an existing dataset.
    #[arg(long)]
    pub force: bool,
}

pub fn run(global: &Global, args: &SynthArgs) -> Result<()> {
    if args.n_train == 0 {
        bail!("--n-train must be at least 1");
    }
    if !(0.0..=1.0).contains(&args.signal) {
        bail!("--signal must lie in [0, 1]");
    }
    let root = &global.data_root;
    if root.exists() && fs::read_dir(root)?.next().is_some() {
        if !args.force {
            bail!(
                "{} is not empty; pass --force to replace it",
                root.display()
            );
        }
        let clips = root.join(Dataset::CLIP_DIR);
        if clips.exists() {
            fs::remove_dir_all(clips)?;
        }
        for name in [Dataset::MANIFEST, SNAPSHOT] {
            let p = root.join(name);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    }
    let cfg = SynthConfig {
        signal: args.signal,
        ..SynthConfig::new(args.size, args.frames)
    };
    let entries = synth_dataset([args.n_train, args.n_val, args.n_test], global.seed, &cfg)?;
    Dataset::create(root, &entries)?;
    write_snapshot(root, global, "synth", args)?;

    let mut counts: BTreeMap<(String, u8), usize> = BTreeMap::new();
    for (clip, split) in &entries {
        *counts.entry((split.to_string(), clip.label)).or_default() += 1;
    }
    println!("wrote {} clips to {}", entries.len(), root.display());
    for ((split, label), n) in counts {
        println!("  {split:<5} label {label}: {n}");
    }
    Ok(())
}
