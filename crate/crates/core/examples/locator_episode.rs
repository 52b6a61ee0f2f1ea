//! One locator episode on a synthetic video with an untrained model.
//! Prints the per-decision trajectory as CSV.
//!
//! ```text
//! cargo run --release --example locator_episode -- [sample|argmax|uniform:0.25|random:0.25]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidloc::cli::parse_mode;
use vidloc::config::parse_config;
use vidloc::locator::run_episode;
use vidloc::model::Model;
use vidloc::pipeline::{load_data, model_config, trajectory_csv};
use vidloc::Tape;

fn main() -> vidloc::Result<()> {
    let mode = parse_mode(&std::env::args().nth(1).unwrap_or_else(|| "sample".into()))?;
    let cfg = parse_config(None, &[], &[("preset".into(), "tiny".into())])?;
    let data = load_data(&cfg)?;
    let model = Model::new(model_config(&cfg, &data), cfg.seed)?;
    let video = &data.test[0];

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::inference(&model.store);
    let ep = run_episode(&model, &mut tape, video, mode, &mut rng, Some(video.label))?;
    let probs = model.predict(&mut tape, &ep.units)?;

    let rows: Vec<_> = ep.trajectory.iter().map(|r| (0, r.clone())).collect();
    print!("{}", trajectory_csv(&rows));
    for (i, obs) in ep.observed.iter().enumerate() {
        println!("locator {i} observed {obs:?}");
    }
    println!("frames {} decisions {}", ep.frames, ep.decisions);
    if let Some(p0) = ep.p0_gt {
        let path: Vec<String> = ep.rounds.iter().map(|r| format!("{:.3}", r.p_gt)).collect();
        println!("p(label) {p0:.3} -> [{}]", path.join(", "));
    }
    println!("label {} predicted probs {:.3?}", video.label, probs);
    Ok(())
}
