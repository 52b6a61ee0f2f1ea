use std::collections::BTreeSet;
use std::fs;

use vidloc::config::{parse_config, RunConfig};
use vidloc::locator::{budget, regions, Mode};
use vidloc::model::Model;
use vidloc::pipeline::{
    evaluate, load_data, model_config, run, stage1_warmup, stage2_policy, stage3_finetune, RunOptions,
};

fn tiny() -> RunConfig {
    parse_config(None, &[], &[("preset".into(), "tiny".into())]).unwrap()
}

#[test]
fn freeze_contracts_hold_per_stage() {
    let cfg = tiny();
    let data = load_data(&cfg).unwrap();
    let mut model = Model::new(model_config(&cfg, &data), cfg.seed).unwrap();
    let (bb0, rl0) = (model.backbone_checksum(), model.rl_checksum());
    stage1_warmup(&mut model, &data, &cfg).unwrap();
    assert_eq!(model.rl_checksum(), rl0);
    let bb1 = model.backbone_checksum();
    assert_ne!(bb1, bb0);
    stage2_policy(&mut model, &data, &cfg).unwrap();
    assert_eq!(model.backbone_checksum(), bb1);
    assert_ne!(model.rl_checksum(), rl0);
    // stage three checks its own block freezes and errors on a violation
    stage3_finetune(&mut model, &data, &cfg).unwrap();
}

#[test]
fn warmup_uses_random_fraction_budget() {
    let cfg = tiny();
    let data = load_data(&cfg).unwrap();
    let mut model = Model::new(model_config(&cfg, &data), cfg.seed).unwrap();
    let logs = stage1_warmup(&mut model, &data, &cfg).unwrap();
    let per_video: usize = regions(3, 120).unwrap().iter().map(|(s, e)| budget(0.25, e - s)).sum();
    assert_eq!(per_video, 30);
    for l in &logs {
        assert_eq!(l.mean_frames, per_video as f64);
    }
}

#[test]
fn warmup_loss_drops_below_chance() {
    let cfg = parse_config(
        None,
        &[],
        &[("preset".into(), "desk".into()), ("warmup_epochs".into(), "5".into())],
    )
    .unwrap();
    let data = load_data(&cfg).unwrap();
    let mut model = Model::new(model_config(&cfg, &data), cfg.seed).unwrap();
    let logs = stage1_warmup(&mut model, &data, &cfg).unwrap();
    assert!(logs.last().unwrap().loss < (cfg.synthetic.classes as f64).ln());
}

#[test]
fn evaluation_is_deterministic_and_budgeted() {
    let cfg = tiny();
    let data = load_data(&cfg).unwrap();
    let model = Model::new(model_config(&cfg, &data), cfg.seed).unwrap();
    let a = evaluate(&model, &data.test, Mode::Uniform(0.25), 120.0, 0).unwrap();
    let b = evaluate(&model, &data.test, Mode::Uniform(0.25), 120.0, 0).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.frames_mean, 30.0);
    assert_eq!(a.report.frame_rate, 0.25);
    let adaptive = evaluate(&model, &data.test, Mode::Argmax, 120.0, 0).unwrap().report;
    assert!(adaptive.frame_rate > 0.0 && adaptive.frame_rate <= 1.0);
    assert!(evaluate(&model, &[], Mode::Argmax, 120.0, 0).is_err());
}

#[test]
fn full_run_is_reproducible() {
    let cfg = tiny();
    let data = load_data(&cfg).unwrap();
    let a = run(&cfg, &data, None, RunOptions::default()).unwrap();
    let b = run(&cfg, &data, None, RunOptions::default()).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.model.store.checksum_all(), b.model.store.checksum_all());
    assert_eq!(a.stages_run, vec![1, 2, 3]);
}

const LAYOUT: [&str; 12] = [
    "baseline.txt",
    "config.txt",
    "report.txt",
    "stage1.vimc",
    "stage1_loss.csv",
    "stage2.vimc",
    "stage2_policy.csv",
    "stage2_report.txt",
    "stage3.vimc",
    "stage3_backbone.csv",
    "stage3_policy.csv",
    "trajectories.csv",
];

#[test]
fn resume_after_stage_one_and_layout() {
    let cfg = tiny();
    let data = load_data(&cfg).unwrap();
    let whole = run(&cfg, &data, None, RunOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let partial = run(
        &cfg,
        &data,
        Some(dir.path()),
        RunOptions {
            stop_after: Some(1),
            force: false,
        },
    )
    .unwrap();
    assert_eq!(partial.stages_run, vec![1]);
    assert!(!partial.completed());
    let resumed = run(&cfg, &data, Some(dir.path()), RunOptions::default()).unwrap();
    assert_eq!(resumed.stages_run, vec![2, 3]);
    assert_eq!(resumed.report, whole.report);
    assert_eq!(resumed.model.store.checksum_all(), whole.model.store.checksum_all());

    let files: BTreeSet<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(files, LAYOUT.iter().map(|s| s.to_string()).collect());
    let header = fs::read_to_string(dir.path().join("stage2_policy.csv")).unwrap();
    assert!(header.starts_with("step,policy_loss,critic_loss,alpha_loss,alpha,mean_reward,mean_frames\n"));

    // a completed run is left alone unless forced
    assert!(run(&cfg, &data, Some(dir.path()), RunOptions::default()).is_err());
    let mut other = cfg.clone();
    other.lambda = 0.2;
    let fresh = tempfile::tempdir().unwrap();
    run(&cfg, &data, Some(fresh.path()), RunOptions { stop_after: Some(1), force: false }).unwrap();
    assert!(run(&other, &data, Some(fresh.path()), RunOptions::default()).is_err());
    let forced = run(&cfg, &data, Some(dir.path()), RunOptions { stop_after: None, force: true }).unwrap();
    assert_eq!(forced.stages_run, vec![1, 2, 3]);
    assert_eq!(forced.report, whole.report);
}

#[test]
fn disabling_initial_fusion_still_pays_for_the_frame() {
    let mut cfg = tiny();
    cfg.model.initial_fusion = false;
    let data = load_data(&cfg).unwrap();
    let mut model = Model::new(model_config(&cfg, &data), cfg.seed).unwrap();
    for p in &model.policies {
        let last = p.layers.last().unwrap();
        let b = model.store.get_mut(last.bias).values_mut();
        b.copy_from_slice(&[50.0, -50.0, -50.0, -50.0]);
    }
    let r = evaluate(&model, &data.test[..4], Mode::Argmax, 120.0, 0).unwrap();
    assert_eq!(r.report.frames_mean, 3.0);
    // every context was dropped, so all videos get the same prediction
    let first = &r.results[0].probs;
    assert!(r.results.iter().all(|v| &v.probs == first));
}
