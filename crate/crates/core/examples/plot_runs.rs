//! Trains a few small runs with different penalties and plots accuracy
//! against cost.
//!
//! ```text
//! cargo run --release --example plot_runs -- [out_dir]
//! ```

use std::path::PathBuf;

use vidloc::cli::{cmd_plot, cmd_train};
use vidloc::config::parse_config;

fn main() -> vidloc::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vidloc_plot"));
    let mut runs = Vec::new();
    for lambda in ["0.05", "0.1", "0.2"] {
        let cfg = parse_config(None, &[], &[("preset".into(), "tiny".into()), ("lambda".into(), lambda.into())])?;
        let dir = root.join(format!("lambda_{lambda}"));
        cmd_train(&cfg, &dir, true)?;
        runs.push(dir);
    }
    print!("{}", cmd_plot(&runs, &root.join("plot"), true)?);
    println!("scatter at {}", root.join("plot/scatter.svg").display());
    Ok(())
}
