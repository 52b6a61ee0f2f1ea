//! Per-component cost of the full-size model, for an adaptive budget and for
//! every frame.

use vidloc::metrics::{fmt_sig6, CostModel};
use vidloc::model::{Model, ModelConfig};

fn main() -> vidloc::Result<()> {
    let model = Model::new(ModelConfig::default(), 0)?;
    let cost = CostModel::of(&model);
    println!("spatial per frame    {}", fmt_sig6(cost.spatial_per_frame));
    println!("temporal per frame   {}", fmt_sig6(cost.temporal_per_frame));
    println!("policy per decision  {}", fmt_sig6(cost.policy_per_decision));
    println!("integration          {}", fmt_sig6(cost.integration_per_video));
    println!("classifier           {}", fmt_sig6(cost.classifier_per_video));
    for (label, frames) in [("8.52 frames", 8.52), ("3 frames", 3.0), ("all 120 frames", 120.0)] {
        let f = cost.breakdown(frames, frames);
        println!(
            "{label:>15}: total {:.3} GFLOPs (spatial {:.3}, temporal {:.4}, policy {:.4}, integration {:.4})",
            f.total / 1e9,
            f.spatial / 1e9,
            f.temporal / 1e9,
            f.policy / 1e9,
            f.integration / 1e9
        );
    }
    Ok(())
}
