//! Runs one ablation axis and prints the resulting table.
//!
//! ```text
//! cargo run --release --example ablate -- [axis] [out_dir]
//! ```

use std::path::PathBuf;

use clap::ValueEnum;
use vidloc::cli::{cmd_ablate, Axis};
use vidloc::config::parse_config;

fn main() -> vidloc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let axis = match args.first() {
        Some(a) => Axis::from_str(a, true).map_err(vidloc::Error::Config)?,
        None => Axis::Lambda,
    };
    let out = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("vidloc_ablate_{}", axis.name())));
    let cfg = parse_config(None, &[], &[("preset".into(), "tiny".into())])?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    print!("{}", cmd_ablate(&cfg, axis, &out, jobs, true)?);
    println!("runs under {}", out.display());
    Ok(())
}
