use clap::Parser;
use viact_core::memtrack::TrackingAllocator;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

fn main() -> anyhow::Result<()> {
    viact_cli::run(viact_cli::Cli::parse())
}
