use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use viact_core::desk::Desk;
use viact_core::efficiency::{frame_attention_flops, measure_pretrain_step, StepCost, StepSpec};
use viact_core::memtrack;
use viact_core::model::TokenSource;

use crate::common::write_json;
use crate::config::{write_snapshot, Global};

pub const FLOP_MODEL: &str =
    "2 FLOPs per multiply-add. Per block at sequence length m, width k, MLP width h: \
projections 8·m·k², attention 4·m²·k (QKᵀ and AV), MLP 4·m·k·h. Counts are for the forward pass.";

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct BenchArgs {
    /// `anatomical`, `grid` or `both`.
    #[arg(long, default_value = "both")]
    pub model: String,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Timed passes after one warm-up pass.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Desk-scale dimensions instead of the full-size encoder at 224².
    #[arg(long)]
    pub desk: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    #[serde(flatten)]
    pub cost: StepCost,
    pub median_ms: f64,
    /// Per frame, frame-encoder attention including the class token.
    pub encoder_attention_flops: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ratios {
    pub tokens_per_frame: f64,
    pub encoder_attention_flops: f64,
    pub total_flops: f64,
    pub wall_clock: f64,
    pub peak_memory: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub flop_model: &'static str,
    pub memory_tracking: bool,
    pub entries: Vec<Entry>,
    /// Anatomical over grid.
    pub ratios: Option<Ratios>,
}

pub fn spec(source: TokenSource, args: &BenchArgs, seed: u64) -> StepSpec {
    let mut s = StepSpec::full_size(source, args.batch);
    if args.desk {
        let d = Desk::default();
        s.model = d.model();
        s.mae = d.mae();
        s.size = d.size;
    }
    s.repeats = args.repeats;
    s.seed = seed;
    s
}

pub fn measure(source: TokenSource, args: &BenchArgs, seed: u64) -> Result<Entry> {
    let s = spec(source, args, seed);
    let cost = measure_pretrain_step(&s)?;
    Ok(Entry {
        median_ms: cost.median_ms(),
        encoder_attention_flops: frame_attention_flops(&s.model, cost.tokens_per_frame),
        cost,
    })
}

pub fn ratios(anat: &Entry, grid: &Entry) -> Ratios {
    let peak = match (anat.cost.peak_bytes, grid.cost.peak_bytes) {
        (Some(a), Some(g)) => Some(a as f64 / g as f64),
        _ => None,
    };
    Ratios {
        tokens_per_frame: anat.cost.tokens_per_frame as f64 / grid.cost.tokens_per_frame as f64,
        encoder_attention_flops: anat.encoder_attention_flops as f64
            / grid.encoder_attention_flops as f64,
        total_flops: anat.cost.flops.total() as f64 / grid.cost.flops.total() as f64,
        wall_clock: anat.median_ms / grid.median_ms,
        peak_memory: peak,
    }
}

pub fn run(global: &Global, args: &BenchArgs) -> Result<BenchReport> {
    if args.repeats == 0 || args.batch == 0 {
        bail!("--batch and --repeats must be at least 1");
    }
    let sources = match args.model.as_str() {
        "both" => vec![TokenSource::Anatomical, TokenSource::Grid],
        s => vec![s.parse::<TokenSource>()?],
    };
    write_snapshot(&global.out_dir, global, "bench", args)?;
    let mut entries = Vec::new();
    for src in sources {
        let e = measure(src, args, global.seed)?;
        println!(
            "{src:<10} tokens/frame {:>4}  median {:>9.1} ms  peak {}  FLOPs {:.3e}",
            e.cost.tokens_per_frame,
            e.median_ms,
            e.cost.peak_bytes.map_or("n/a".to_string(), |b| format!(
                "{:.1} MiB",
                b as f64 / (1 << 20) as f64
            )),
            e.cost.flops.total() as f64
        );
        entries.push(e);
    }
    let ratios = match entries.as_slice() {
        [a, g] => Some(ratios(a, g)),
        _ => None,
    };
    if let Some(r) = &ratios {
        println!(
            "anatomical/grid: time {:.3}, memory {}, FLOPs {:.3}, attention {:.3}",
            r.wall_clock,
            r.peak_memory
                .map_or("n/a".to_string(), |m| format!("{m:.3}")),
            r.total_flops,
            r.encoder_attention_flops
        );
    }
    let report = BenchReport {
        flop_model: FLOP_MODEL,
        memory_tracking: memtrack::installed(),
        entries,
        ratios,
    };
    write_json(&global.out_dir.join("bench.json"), &report)?;
    Ok(report)
}
