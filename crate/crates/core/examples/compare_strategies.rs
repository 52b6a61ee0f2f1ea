//! Trains the backbone and policy, then compares the adaptive locators with
//! fixed frame selection on the test split.
//!
//! ```text
//! cargo run --release --example compare_strategies -- [preset]
//! ```

use vidloc::config::parse_config;
use vidloc::locator::Mode;
use vidloc::pipeline::{evaluate, load_data, run, RunOptions};

fn main() -> vidloc::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "tiny".into());
    let cfg = parse_config(None, &[], &[("preset".into(), preset)])?;
    let data = load_data(&cfg)?;
    let out = run(&cfg, &data, None, RunOptions::default())?;

    println!("{:<10} {:>6} {:>6} {:>8} {:>8}", "mode", "top1", "mAP", "frames", "GFLOPs");
    let modes = [
        ("adaptive", Mode::Argmax),
        ("all", Mode::All),
        ("uniform25", Mode::Uniform(0.25)),
        ("uniform50", Mode::Uniform(0.5)),
        ("random25", Mode::Random(0.25)),
        ("random50", Mode::Random(0.5)),
    ];
    for (name, mode) in modes {
        let r = evaluate(&out.model, &data.test, mode, cfg.frame_basis, cfg.seed)?.report;
        println!("{name:<10} {:>6.3} {:>6.3} {:>8.2} {:>8.3}", r.top1, r.map, r.frames_mean, r.gflops());
    }
    Ok(())
}
