//! Full three-stage run on synthetic data.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [preset] [key=value ...]
//! ```

use std::time::Instant;

use vidloc::config::parse_config;
use vidloc::pipeline::{load_data, run, RunOptions};

fn main() -> vidloc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().filter(|a| !a.contains('=')).cloned().unwrap_or_else(|| "tiny".into());
    let mut overrides = vec![("preset".to_string(), preset)];
    for a in args.iter().filter(|a| a.contains('=')) {
        let (k, v) = a.split_once('=').unwrap();
        overrides.push((k.to_string(), v.to_string()));
    }
    let cfg = parse_config(None, &[], &overrides)?;
    let data = load_data(&cfg)?;
    let start = Instant::now();
    let out = run(&cfg, &data, None, RunOptions::default())?;
    for l in &out.warmup_logs {
        println!("warmup epoch {} loss {:.4}", l.epoch, l.loss);
    }
    if let Some(last) = out.policy_logs.last() {
        println!(
            "policy steps {} alpha {:.4} reward {:.4} frames {:.2}",
            last.step, last.sac.alpha, last.mean_reward, last.mean_frames
        );
    }
    let b = &out.baseline;
    let s2 = out.stage2.as_ref().unwrap();
    let r = out.report.as_ref().unwrap();
    println!("uniform baseline: top1 {:.3} frames {:.2}", b.top1, b.frames_mean);
    println!("after policy stage: top1 {:.3} frames {:.2}", s2.top1, s2.frames_mean);
    println!("final adaptive: top1 {:.3} mAP {:.3} frames {:.2} GFLOPs {:.2}", r.top1, r.map, r.frames_mean, r.gflops());
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
