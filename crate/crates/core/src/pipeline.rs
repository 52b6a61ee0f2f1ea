//! Three-stage training (random-sampling warm-up, frozen-backbone policy
//! learning, alternating fine-tuning), evaluation, and the run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{Penalty, RunConfig};
use crate::data::{batch_iter, generate_synthetic, load_feature_dir, DatasetSplit, VideoSample};
use crate::error::{Error, Result};
use crate::locator::{run_episode, Episode, Mode, TrajectoryRecord};
use crate::metrics::{summarize, CostModel, CostReport, VideoResult};
use crate::model::{Model, ModelConfig};
use crate::optim::{Adam, AdamConfig};
use crate::sac::{
    compute_reward, ctde_train_step, global_snapshot, ReplayBuffer, SacNets, SacOptimizers, SacReport, Transition,
};
use crate::tape::Tape;

/// Seed for stage-local randomness, so each stage replays identically
/// whether or not earlier stages ran in the same process.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stage.wrapping_mul(0xd1b5_4a32_d192_ed03) ^ 0x5851_f42d_4c95_7f2d
}

pub fn load_data(cfg: &RunConfig) -> Result<DatasetSplit> {
    match &cfg.data_dir {
        Some(dir) => load_feature_dir(dir),
        None => generate_synthetic(&cfg.synthetic),
    }
}

/// Model config with data-dependent widths filled in.
pub fn model_config(cfg: &RunConfig, data: &DatasetSplit) -> ModelConfig {
    ModelConfig {
        frame_dim: data.dim(),
        classes: data.num_classes,
        ..cfg.model.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub mean_frames: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLog {
    pub step: usize,
    pub sac: SacReport,
    pub mean_reward: f64,
    pub mean_frames: f64,
}

fn freeze_violation(what: &str) -> Error {
    Error::InvalidArgument(format!("{what} parameters changed while frozen"))
}

/// One epoch of cross-entropy training of the backbone on episodes in `mode`.
pub fn backbone_epoch(
    model: &mut Model,
    videos: &[VideoSample],
    mode: Mode,
    opt: &mut Adam,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EpochLog> {
    let mut loss_sum = 0.0;
    let mut frames = 0usize;
    for batch in batch_iter(videos.len(), batch_size, seed, epoch, true)? {
        model.store.zero_grad();
        for &i in &batch {
            let video = &videos[i];
            let grads = {
                let mut tape = Tape::new(&model.store);
                let ep = run_episode(model, &mut tape, video, mode, rng, None)?;
                let z = model.logits(&mut tape, &ep.units)?;
                let loss = tape.cross_entropy(z, video.label)?;
                loss_sum += tape.scalar(loss);
                frames += ep.frames;
                tape.backward(loss)?
            };
            grads.accumulate_into(&mut model.store)?;
        }
        opt.step(&mut model.store, 1.0 / batch.len() as f64)?;
        model.store.zero_grad();
    }
    Ok(EpochLog {
        epoch: epoch as usize,
        loss: loss_sum / videos.len() as f64,
        mean_frames: frames as f64 / videos.len() as f64,
    })
}

/// Trains the backbone on random-fraction episodes; every RL parameter must
/// come out bit-identical.
pub fn stage1_warmup(model: &mut Model, data: &DatasetSplit, cfg: &RunConfig) -> Result<Vec<EpochLog>> {
    let seed = stage_seed(cfg.seed, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(&model.store, model.backbone_params(), AdamConfig::with_lr(cfg.stages.lr_warmup));
    let frozen = model.rl_checksum();
    let mut logs = Vec::new();
    for epoch in 0..cfg.stages.warmup_epochs {
        let mode = Mode::Random(cfg.baseline_fraction);
        logs.push(backbone_epoch(
            model,
            &data.train,
            mode,
            &mut opt,
            cfg.stages.video_batch,
            seed,
            epoch as u64,
            &mut rng,
        )?);
    }
    if model.rl_checksum() != frozen {
        return Err(freeze_violation("policy/critic"));
    }
    Ok(logs)
}

/// Shared-reward transitions of one sampled episode.
pub fn episode_transitions(ep: &Episode, lambda: f64, penalty: Penalty) -> Result<Vec<Transition>> {
    let mut prev = ep
        .p0_gt
        .ok_or_else(|| Error::InvalidArgument("episode ran without reward tracking".into()))?;
    let mut out = Vec::new();
    for round in &ep.rounds {
        let n_t = match penalty {
            Penalty::Cumulative => round.frames_total,
            Penalty::PerStep => round.frames_round,
        };
        let r = compute_reward(round.p_gt, prev, lambda, n_t)?;
        prev = round.p_gt;
        let next_global = global_snapshot(&round.next_obs, &vec![None; round.next_obs.len()], None);
        for (i, a) in round.actions.iter().enumerate() {
            let Some(a) = *a else { continue };
            out.push(Transition {
                locator: i,
                obs: round.obs[i].clone(),
                action: a,
                reward: r,
                next_obs: round.next_obs[i].clone(),
                done: round.stopped[i],
                global: global_snapshot(&round.obs, &round.actions, Some(i)),
                next_global: next_global.clone(),
            });
        }
    }
    Ok(out)
}

/// RL state kept across policy epochs of one stage.
pub struct PolicyTrainer {
    pub buffer: ReplayBuffer,
    pub opt: SacOptimizers,
    pub steps: usize,
    pub seed: u64,
    pub rng: ChaCha8Rng,
}

impl PolicyTrainer {
    pub fn new(model: &Model, cfg: &RunConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.sac.capacity, seed ^ 0xb0f)?,
            opt: SacOptimizers::new(&model.store, &model.sac_nets(), &cfg.sac),
            steps: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Collects sampled episodes batch by batch and runs a CTDE step after
    /// each batch once the buffer can fill a SAC batch.
    pub fn epoch(&mut self, model: &mut Model, videos: &[VideoSample], cfg: &RunConfig, epoch: u64) -> Result<Vec<PolicyLog>> {
        let mut logs = Vec::new();
        for batch in batch_iter(videos.len(), cfg.stages.video_batch, self.seed, epoch, true)? {
            let mut reward = 0.0;
            let mut rewards = 0usize;
            let mut frames = 0usize;
            for &i in &batch {
                let video = &videos[i];
                let mut tape = Tape::inference(&model.store);
                let ep = run_episode(model, &mut tape, video, Mode::Sample, &mut self.rng, Some(video.label))?;
                frames += ep.frames;
                for t in episode_transitions(&ep, cfg.lambda, cfg.penalty)? {
                    reward += t.reward;
                    rewards += 1;
                    self.buffer.push(t);
                }
            }
            if self.buffer.len() < cfg.sac.batch_size {
                continue;
            }
            for _ in 0..cfg.stages.updates_per_batch {
                let view = SacNets {
                    policies: &model.policies,
                    critics: &model.critics,
                    log_alpha: model.log_alpha,
                };
                let sac = ctde_train_step(&mut model.store, &view, &mut self.buffer, &mut self.opt, &cfg.sac)?;
                self.steps += 1;
                logs.push(PolicyLog {
                    step: self.steps,
                    sac,
                    mean_reward: if rewards > 0 { reward / rewards as f64 } else { 0.0 },
                    mean_frames: frames as f64 / batch.len() as f64,
                });
            }
        }
        Ok(logs)
    }
}

/// Policy learning on a frozen backbone.
pub fn stage2_policy(model: &mut Model, data: &DatasetSplit, cfg: &RunConfig) -> Result<Vec<PolicyLog>> {
    let seed = stage_seed(cfg.seed, 2);
    let mut trainer = PolicyTrainer::new(model, cfg, seed)?;
    let frozen = model.backbone_checksum();
    let mut logs = Vec::new();
    for epoch in 0..cfg.stages.policy_epochs {
        logs.extend(trainer.epoch(model, &data.train, cfg, epoch as u64)?);
    }
    if model.backbone_checksum() != frozen {
        return Err(freeze_violation("backbone"));
    }
    Ok(logs)
}

#[derive(Debug, Clone, Default)]
pub struct FinetuneLogs {
    /// `(block, epoch log)` for backbone blocks.
    pub backbone: Vec<(usize, EpochLog)>,
    pub policy: Vec<PolicyLog>,
}

/// Alternates backbone blocks (cross-entropy under the argmax policy) with
/// policy blocks, `finetune_period` epochs each.
pub fn stage3_finetune(model: &mut Model, data: &DatasetSplit, cfg: &RunConfig) -> Result<FinetuneLogs> {
    let seed = stage_seed(cfg.seed, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(&model.store, model.backbone_params(), AdamConfig::with_lr(cfg.stages.lr_finetune));
    let mut trainer = PolicyTrainer::new(model, cfg, seed ^ 0x3)?;
    let mut logs = FinetuneLogs::default();
    let period = cfg.stages.finetune_period;
    let mut block = 0;
    let mut epoch = 0u64;
    for _ in 0..cfg.stages.finetune_cycles {
        let order = if cfg.stages.finetune_policy_first { [false, true] } else { [true, false] };
        for backbone in order {
            if backbone {
                let frozen = model.rl_checksum();
                for _ in 0..period {
                    let log = backbone_epoch(
                        model,
                        &data.train,
                        Mode::Argmax,
                        &mut opt,
                        cfg.stages.video_batch,
                        seed,
                        epoch,
                        &mut rng,
                    )?;
                    logs.backbone.push((block, log));
                    epoch += 1;
                }
                if model.rl_checksum() != frozen {
                    return Err(freeze_violation("policy/critic"));
                }
            } else {
                let frozen = model.backbone_checksum();
                for _ in 0..period {
                    logs.policy.extend(trainer.epoch(model, &data.train, cfg, epoch)?);
                    epoch += 1;
                }
                if model.backbone_checksum() != frozen {
                    return Err(freeze_violation("backbone"));
                }
            }
            block += 1;
        }
    }
    Ok(logs)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: CostReport,
    pub results: Vec<VideoResult>,
    /// `(video, record)` rows.
    pub trajectories: Vec<(usize, TrajectoryRecord)>,
}

/// Runs every video in `mode` and aggregates accuracy and cost.
pub fn evaluate(model: &Model, videos: &[VideoSample], mode: Mode, basis: f64, seed: u64) -> Result<Evaluation> {
    if videos.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, 99));
    let mut results = Vec::with_capacity(videos.len());
    let mut trajectories = Vec::new();
    let before = model.spatial.frames();
    for (vid, video) in videos.iter().enumerate() {
        let mut tape = Tape::inference(&model.store);
        let ep = run_episode(model, &mut tape, video, mode, &mut rng, None)?;
        let probs = model.predict(&mut tape, &ep.units)?;
        trajectories.extend(ep.trajectory.iter().cloned().map(|r| (vid, r)));
        results.push(VideoResult {
            probs,
            label: video.label,
            frames: ep.frames,
            decisions: ep.decisions,
        });
    }
    let encoded = model.spatial.frames() - before;
    let observed: usize = results.iter().map(|r| r.frames).sum();
    if encoded != observed as u64 {
        return Err(Error::InvalidArgument(format!(
            "encoder charged {encoded} frames but episodes observed {observed}"
        )));
    }
    let report = summarize(&results, &CostModel::of(model), basis)?;
    Ok(Evaluation {
        report,
        results,
        trajectories,
    })
}

// ---- run directory ----------------------------------------------------------

pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const BASELINE_FILE: &str = "baseline.txt";
pub const STAGE2_REPORT_FILE: &str = "stage2_report.txt";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const WARMUP_LOG: &str = "stage1_loss.csv";
pub const POLICY_LOG: &str = "stage2_policy.csv";
pub const FINETUNE_BACKBONE_LOG: &str = "stage3_backbone.csv";
pub const FINETUNE_POLICY_LOG: &str = "stage3_policy.csv";

pub fn stage_checkpoint(dir: &Path, stage: u8) -> PathBuf {
    dir.join(format!("stage{stage}.vimc"))
}

pub fn policy_csv(logs: &[PolicyLog]) -> String {
    let mut s = String::from("step,policy_loss,critic_loss,alpha_loss,alpha,mean_reward,mean_frames\n");
    for l in logs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            l.step, l.sac.policy_loss, l.sac.critic_loss, l.sac.alpha_loss, l.sac.alpha, l.mean_reward, l.mean_frames
        );
    }
    s
}

pub fn epoch_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,mean_frames\n");
    for l in logs {
        let _ = writeln!(s, "{},{},{}", l.epoch, l.loss, l.mean_frames);
    }
    s
}

pub fn trajectory_csv(rows: &[(usize, TrajectoryRecord)]) -> String {
    let mut s = String::from("video_id,locator,t,position,action,stopped\n");
    for (v, r) in rows {
        let action = r.action.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{v},{},{},{},{action},{}", r.locator, r.t, r.position, r.stopped);
    }
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Return after this stage, as if interrupted.
    pub stop_after: Option<u8>,
    /// Allow overwriting a completed run.
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    /// Uniform-fraction baseline evaluated with the warm-up backbone.
    pub baseline: CostReport,
    pub stage2: Option<CostReport>,
    pub report: Option<CostReport>,
    pub stages_run: Vec<u8>,
    pub warmup_logs: Vec<EpochLog>,
    pub policy_logs: Vec<PolicyLog>,
    pub finetune_logs: FinetuneLogs,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.report.is_some()
    }
}

fn write(dir: Option<&Path>, name: &str, text: &str) -> Result<()> {
    if let Some(d) = dir {
        fs::write(d.join(name), text)?;
    }
    Ok(())
}

fn prepare_dir(dir: &Path, cfg: &RunConfig, force: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let snapshot = cfg.to_text();
    if force {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_file() {
                fs::remove_file(p)?;
            }
        }
    } else if dir.join(REPORT_FILE).exists() {
        return Err(Error::Config(format!(
            "{} holds a completed run; pass --force to overwrite",
            dir.display()
        )));
    } else if let Ok(old) = fs::read_to_string(dir.join(CONFIG_FILE)) {
        if old != snapshot {
            return Err(Error::Config(format!(
                "{} was started with a different config; pass --force to restart",
                dir.display()
            )));
        }
    }
    fs::write(dir.join(CONFIG_FILE), snapshot)?;
    Ok(())
}

/// Loads the stage checkpoint when the run directory has one.
fn resumed(model: &mut Model, dir: Option<&Path>, stage: u8) -> Result<bool> {
    let Some(path) = dir.map(|d| stage_checkpoint(d, stage)).filter(|p| p.exists()) else {
        return Ok(false);
    };
    model.store.load_from(&load_checkpoint(&path)?)?;
    Ok(true)
}

/// Full three-stage run. With a directory, finished stages are resumed from
/// their checkpoints and every artifact is written there.
pub fn run(cfg: &RunConfig, data: &DatasetSplit, dir: Option<&Path>, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    if let Some(d) = dir {
        prepare_dir(d, cfg, opts.force)?;
    }
    let mut model = Model::new(model_config(cfg, data), cfg.seed)?;
    let mut out = RunOutcome {
        baseline: CostReport {
            top1: 0.0,
            map: 0.0,
            frame_rate: 0.0,
            frames_mean: 0.0,
            flops: crate::metrics::Flops::new(0.0, 0.0, 0.0, 0.0, 0.0),
        },
        model: model.clone(),
        stage2: None,
        report: None,
        stages_run: Vec::new(),
        warmup_logs: Vec::new(),
        policy_logs: Vec::new(),
        finetune_logs: FinetuneLogs::default(),
    };

    if !resumed(&mut model, dir, 1)? {
        out.warmup_logs = stage1_warmup(&mut model, data, cfg)?;
        out.stages_run.push(1);
        write(dir, WARMUP_LOG, &epoch_csv(&out.warmup_logs))?;
        if let Some(d) = dir {
            save_checkpoint(&stage_checkpoint(d, 1), &model.store)?;
        }
    }
    let baseline_mode = Mode::Uniform(cfg.baseline_fraction);
    out.baseline = evaluate(&model, &data.test, baseline_mode, cfg.frame_basis, cfg.seed)?.report;
    write(dir, BASELINE_FILE, &out.baseline.to_text())?;
    if opts.stop_after == Some(1) {
        out.model = model;
        return Ok(out);
    }

    if !resumed(&mut model, dir, 2)? {
        out.policy_logs = stage2_policy(&mut model, data, cfg)?;
        out.stages_run.push(2);
        write(dir, POLICY_LOG, &policy_csv(&out.policy_logs))?;
        if let Some(d) = dir {
            save_checkpoint(&stage_checkpoint(d, 2), &model.store)?;
        }
    }
    let s2 = evaluate(&model, &data.test, Mode::Argmax, cfg.frame_basis, cfg.seed)?.report;
    write(dir, STAGE2_REPORT_FILE, &s2.to_text())?;
    out.stage2 = Some(s2);
    if opts.stop_after == Some(2) {
        out.model = model;
        return Ok(out);
    }

    if !resumed(&mut model, dir, 3)? {
        out.finetune_logs = stage3_finetune(&mut model, data, cfg)?;
        out.stages_run.push(3);
        let backbone: Vec<EpochLog> = out.finetune_logs.backbone.iter().map(|(_, l)| l.clone()).collect();
        write(dir, FINETUNE_BACKBONE_LOG, &epoch_csv(&backbone))?;
        write(dir, FINETUNE_POLICY_LOG, &policy_csv(&out.finetune_logs.policy))?;
        if let Some(d) = dir {
            save_checkpoint(&stage_checkpoint(d, 3), &model.store)?;
        }
    }
    let fin = evaluate(&model, &data.test, Mode::Argmax, cfg.frame_basis, cfg.seed)?;
    write(dir, TRAJECTORY_FILE, &trajectory_csv(&fin.trajectories))?;
    write(dir, REPORT_FILE, &fin.report.to_text())?;
    out.report = Some(fin.report);
    out.model = model;
    Ok(out)
}
