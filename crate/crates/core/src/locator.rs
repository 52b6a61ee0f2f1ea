//! Local unit locators: a forward-only movement state machine over the frame
//! axis, a temporal context network, and the lockstep episode loop.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::data::VideoSample;
use crate::error::{shape_err, Error, Result};
use crate::model::Model;
use crate::nn::{Activation, LstmCell, Mlp};
use crate::params::{ParamId, ParamStore};
use crate::tape::{softmax, Tape, Var};

pub const NUM_ACTIONS: usize = 4;

/// Strides `{0, δ, 2δ, 3δ}`; action 0 stops the locator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub delta: usize,
}

impl ActionSpace {
    pub fn new(delta: usize) -> Result<Self> {
        if delta == 0 {
            return Err(Error::InvalidArgument("delta must be >= 1".into()));
        }
        Ok(Self { delta })
    }

    pub fn stride(&self, k: usize) -> Result<usize> {
        if k >= NUM_ACTIONS {
            return Err(Error::InvalidArgument(format!("action {k} outside 0..{NUM_ACTIONS}")));
        }
        Ok(k * self.delta)
    }

    pub fn strides(&self) -> [usize; NUM_ACTIONS] {
        [0, self.delta, 2 * self.delta, 3 * self.delta]
    }
}

/// Start frame of each of `n` locators: `floor(i * T / n)`.
pub fn init_positions(n: usize, frames: usize) -> Result<Vec<usize>> {
    if n == 0 || n > frames {
        return Err(Error::InvalidArgument(format!("{n} locators for {frames} frames")));
    }
    Ok((0..n).map(|i| i * frames / n).collect())
}

/// `[start_i, start_{i+1})`, the last region ending at `T`.
pub fn regions(n: usize, frames: usize) -> Result<Vec<(usize, usize)>> {
    let starts = init_positions(n, frames)?;
    Ok((0..n)
        .map(|i| (starts[i], starts.get(i + 1).copied().unwrap_or(frames)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalKind {
    Lstm,
    MeanPool,
    MaxPool,
    SumPool,
}

/// Running context of one locator. For the LSTM `aux` is the cell state;
/// for pools it is the accumulator.
#[derive(Debug, Clone, Copy)]
pub struct Context {
    pub h: Var,
    pub aux: Option<Var>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct TemporalNet {
    pub kind: TemporalKind,
    pub lstm: Option<LstmCell>,
    pub in_dim: usize,
    pub width: usize,
}

impl TemporalNet {
    pub fn lstm<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            kind: TemporalKind::Lstm,
            lstm: Some(LstmCell::new(store, name, in_dim, hidden, rng)?),
            in_dim,
            width: hidden,
        })
    }

    pub fn pool(kind: TemporalKind, dim: usize) -> Self {
        debug_assert!(kind != TemporalKind::Lstm);
        Self {
            kind,
            lstm: None,
            in_dim: dim,
            width: dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.lstm.as_ref().map(LstmCell::params).unwrap_or_default()
    }

    pub fn flops_per_step(&self) -> u64 {
        match &self.lstm {
            Some(l) => l.flops(),
            None => self.width as u64,
        }
    }

    pub fn zero_context(&self, tape: &mut Tape) -> Context {
        let h = tape.constant_vec(vec![0.0; self.width]);
        let aux = match self.kind {
            TemporalKind::Lstm => Some(tape.constant_vec(vec![0.0; self.width])),
            _ => None,
        };
        Context { h, aux, count: 0 }
    }

    /// Fuses one encoded frame into the context.
    pub fn update(&self, tape: &mut Tape, ctx: &Context, e: Var) -> Result<Context> {
        if tape.shape(e) != [self.in_dim] {
            return shape_err("temporal", format!("embedding {:?} vs {}", tape.shape(e), self.in_dim));
        }
        let count = ctx.count + 1;
        let (h, aux) = match self.kind {
            TemporalKind::Lstm => {
                let c = ctx.aux.expect("lstm cell state");
                let (h, c) = self.lstm.as_ref().expect("lstm").step(tape, e, ctx.h, c)?;
                (h, Some(c))
            }
            TemporalKind::SumPool => {
                let s = match ctx.aux {
                    Some(a) => tape.add(a, e)?,
                    None => e,
                };
                (s, Some(s))
            }
            TemporalKind::MeanPool => {
                let s = match ctx.aux {
                    Some(a) => tape.add(a, e)?,
                    None => e,
                };
                (tape.scale(s, 1.0 / count as f64)?, Some(s))
            }
            TemporalKind::MaxPool => {
                let m = match ctx.aux {
                    Some(a) => tape.maximum(a, e)?,
                    None => e,
                };
                (m, Some(m))
            }
        };
        Ok(Context { h, aux, count })
    }
}

/// One locator's movement state.
#[derive(Debug, Clone)]
pub struct LocatorState {
    pub index: usize,
    pub start: usize,
    pub position: usize,
    pub steps_taken: usize,
    pub n_selected: usize,
    pub max_moves: usize,
    pub stopped: bool,
    pub ctx: Context,
    /// Value of `ctx.h`, kept so decisions never touch the tape.
    pub h: Vec<f64>,
    pub observed: Vec<usize>,
}

impl LocatorState {
    pub fn new(tape: &mut Tape, temporal: &TemporalNet, index: usize, start: usize, max_moves: usize) -> Self {
        let ctx = temporal.zero_context(tape);
        Self {
            index,
            start,
            position: start,
            steps_taken: 0,
            n_selected: 0,
            max_moves,
            stopped: false,
            ctx,
            h: vec![0.0; temporal.width],
            observed: Vec::new(),
        }
    }

    /// Local observation `h ⊕ n/m` fed to the policy.
    pub fn observation(&self) -> Vec<f64> {
        let mut o = self.h.clone();
        o.push(self.n_selected as f64 / self.max_moves as f64);
        o
    }

    /// Encodes the frame at `position` and fuses it into the context.
    pub fn observe(&mut self, tape: &mut Tape, model: &Model, video: &VideoSample) -> Result<()> {
        if self.stopped {
            return Err(Error::Locator(format!("locator {} observed after stopping", self.index)));
        }
        if self.position >= video.frames() || self.observed.last().is_some_and(|&p| p >= self.position) {
            return Err(Error::Locator(format!("invalid position {}", self.position)));
        }
        let e = model.spatial.encode_frame(tape, video.frame(self.position))?;
        self.ctx = model.temporal.update(tape, &self.ctx, e)?;
        self.h = tape.value(self.ctx.h).to_vec();
        self.steps_taken += 1;
        self.n_selected += 1;
        self.observed.push(self.position);
        Ok(())
    }

    /// Drops everything fused so far; counters are kept.
    pub fn reset_context(&mut self, tape: &mut Tape, temporal: &TemporalNet) {
        self.ctx = temporal.zero_context(tape);
        self.h = vec![0.0; temporal.width];
    }

    /// Moves by action `k`. Returns whether a frame should now be observed.
    pub fn apply_action(&mut self, k: usize, space: &ActionSpace, frames: usize, fence: Option<usize>) -> Result<bool> {
        if self.stopped {
            return Err(Error::Locator(format!("locator {} acted after stopping", self.index)));
        }
        let stride = space.stride(k)?;
        if stride == 0 {
            self.stopped = true;
            return Ok(false);
        }
        let next = self.position + stride;
        if next >= frames || fence.is_some_and(|f| next >= f) {
            self.stopped = true;
            return Ok(false);
        }
        self.position = next;
        Ok(true)
    }

    pub fn can_decide(&self) -> bool {
        !self.stopped && self.steps_taken < self.max_moves
    }
}

/// Action distribution of `policy` for a local observation.
pub fn policy_probs(store: &ParamStore, policy: &Mlp, obs: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::inference(store);
    let x = tape.constant_vec(obs.to_vec());
    let z = policy.forward(&mut tape, x)?;
    Ok(softmax(tape.value(z)))
}

/// Policy distribution for one locator; reads that locator's state only.
pub fn decide(store: &ParamStore, policy: &Mlp, state: &LocatorState) -> Result<Vec<f64>> {
    if !state.can_decide() {
        return Err(Error::Locator(format!(
            "locator {} cannot decide (stopped={}, t={}, m={})",
            state.index, state.stopped, state.steps_taken, state.max_moves
        )));
    }
    policy_probs(store, policy, &state.observation())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// How an episode picks frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Sample actions from the policies.
    Sample,
    /// Take the most probable action.
    Argmax,
    /// Evenly spaced fraction of each locator's region.
    Uniform(f64),
    /// Initial frame plus random others, a fixed fraction of each region.
    Random(f64),
    /// Every frame of every region.
    All,
}

impl Mode {
    pub fn is_adaptive(self) -> bool {
        matches!(self, Mode::Sample | Mode::Argmax)
    }
}

/// Number of frames a fixed-budget mode takes from a region of `len` frames.
pub fn budget(fraction: f64, len: usize) -> usize {
    ((fraction * len as f64).round() as usize).clamp(1, len)
}

/// Evenly spaced frames `start + floor(j * len / count)`.
pub fn uniform_frames(start: usize, end: usize, fraction: f64) -> Vec<usize> {
    let len = end - start;
    let count = budget(fraction, len);
    (0..count).map(|j| start + j * len / count).collect()
}

/// The region's first frame plus distinct random others, sorted.
pub fn random_frames<R: Rng>(start: usize, end: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    let len = end - start;
    let count = budget(fraction, len);
    let mut frames: Vec<usize> = sample_indices(rng, len - 1, count - 1)
        .into_iter()
        .map(|o| start + 1 + o)
        .collect();
    frames.push(start);
    frames.sort_unstable();
    frames
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub locator: usize,
    pub t: usize,
    pub position: usize,
    pub action: Option<usize>,
    pub stopped: bool,
}

/// One lockstep decision round of an adaptive episode.
#[derive(Debug, Clone)]
pub struct Round {
    /// Local observations of every locator before the round.
    pub obs: Vec<Vec<f64>>,
    /// Action per locator; `None` for locators that were already inactive.
    pub actions: Vec<Option<usize>>,
    pub next_obs: Vec<Vec<f64>>,
    pub stopped: Vec<bool>,
    /// Frames observed by all locators so far, and during this round.
    pub frames_total: usize,
    pub frames_round: usize,
    /// Ground-truth probability after the round.
    pub p_gt: f64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    /// Final unit embeddings, one per locator.
    pub units: Vec<Var>,
    pub observed: Vec<Vec<usize>>,
    pub trajectory: Vec<TrajectoryRecord>,
    pub frames: usize,
    pub decisions: usize,
    /// Ground-truth probability after the initial observations.
    pub p0_gt: Option<f64>,
    pub rounds: Vec<Round>,
}

/// Runs every locator over `video`. With `reward_label` set, the ground-truth
/// probability is tracked after the initial observations and every round.
pub fn run_episode<R: Rng>(
    model: &Model,
    tape: &mut Tape,
    video: &VideoSample,
    mode: Mode,
    rng: &mut R,
    reward_label: Option<usize>,
) -> Result<Episode> {
    let cfg = &model.config;
    let frames = video.frames();
    let starts = init_positions(cfg.locators, frames)?;
    let bounds = regions(cfg.locators, frames)?;
    let mut states: Vec<LocatorState> = starts
        .iter()
        .enumerate()
        .map(|(i, &s)| LocatorState::new(tape, &model.temporal, i, s, cfg.max_moves))
        .collect();
    let mut trajectory = Vec::new();
    let mut decisions = 0;

    if !mode.is_adaptive() {
        for (st, &(start, end)) in states.iter_mut().zip(&bounds) {
            let picks = match mode {
                Mode::Uniform(p) => uniform_frames(start, end, p),
                Mode::Random(p) => random_frames(start, end, p, rng),
                _ => (start..end).collect(),
            };
            for f in picks {
                st.position = f;
                st.observe(tape, model, video)?;
                trajectory.push(TrajectoryRecord {
                    locator: st.index,
                    t: st.steps_taken,
                    position: f,
                    action: None,
                    stopped: false,
                });
            }
            st.stopped = true;
        }
        let observed = states.iter().map(|s| s.observed.clone()).collect();
        return Ok(Episode {
            units: states.iter().map(|s| s.ctx.h).collect(),
            observed,
            trajectory,
            frames: states.iter().map(|s| s.n_selected).sum(),
            decisions: 0,
            p0_gt: None,
            rounds: Vec::new(),
        });
    }

    for st in &mut states {
        st.observe(tape, model, video)?;
        if st.steps_taken >= st.max_moves {
            st.stopped = true;
        }
        trajectory.push(TrajectoryRecord {
            locator: st.index,
            t: st.steps_taken,
            position: st.position,
            action: None,
            stopped: st.stopped,
        });
    }
    let p_gt = |tape: &mut Tape, states: &[LocatorState]| -> Result<Option<f64>> {
        match reward_label {
            Some(y) => {
                let units: Vec<Var> = states.iter().map(|s| s.ctx.h).collect();
                Ok(Some(model.predict(tape, &units)?[y]))
            }
            None => Ok(None),
        }
    };
    let p0_gt = p_gt(tape, &states)?;
    let mut rounds = Vec::new();
    let mut first_round = true;

    while states.iter().any(LocatorState::can_decide) {
        let obs: Vec<Vec<f64>> = states.iter().map(LocatorState::observation).collect();
        let mut actions = vec![None; states.len()];
        for st in states.iter().filter(|s| s.can_decide()) {
            let probs = decide(&model.store, &model.policies[st.index], st)?;
            actions[st.index] = Some(match mode {
                Mode::Sample => sample_categorical(&probs, rng),
                _ => argmax(&probs),
            });
        }
        let before: usize = states.iter().map(|s| s.n_selected).sum();
        for st in states.iter_mut() {
            let Some(k) = actions[st.index] else { continue };
            decisions += 1;
            let fence = cfg.fence.then(|| bounds[st.index].1);
            let moved = st.apply_action(k, &model.space, frames, fence)?;
            if moved {
                if first_round && !cfg.initial_fusion {
                    st.reset_context(tape, &model.temporal);
                }
                st.observe(tape, model, video)?;
                if st.steps_taken >= st.max_moves {
                    st.stopped = true;
                }
            }
            trajectory.push(TrajectoryRecord {
                locator: st.index,
                t: st.steps_taken,
                position: st.position,
                action: Some(k),
                stopped: st.stopped,
            });
        }
        if first_round && !cfg.initial_fusion {
            // locators that stopped right away keep nothing from the initial frame
            for st in states.iter_mut().filter(|s| s.n_selected == 1) {
                st.reset_context(tape, &model.temporal);
            }
        }
        first_round = false;
        let total: usize = states.iter().map(|s| s.n_selected).sum();
        let p = p_gt(tape, &states)?;
        if let Some(p) = p {
            rounds.push(Round {
                obs,
                actions,
                next_obs: states.iter().map(LocatorState::observation).collect(),
                stopped: states.iter().map(|s| s.stopped).collect(),
                frames_total: total,
                frames_round: total - before,
                p_gt: p,
            });
        }
    }

    Ok(Episode {
        units: states.iter().map(|s| s.ctx.h).collect(),
        observed: states.iter().map(|s| s.observed.clone()).collect(),
        trajectory,
        frames: states.iter().map(|s| s.n_selected).sum(),
        decisions,
        p0_gt,
        rounds,
    })
}

/// Policy MLP over the local observation.
pub fn policy_net<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    context_width: usize,
    layers: usize,
    width: usize,
    rng: &mut R,
) -> Result<Mlp> {
    let mut dims = vec![context_width + 1];
    dims.extend(std::iter::repeat_n(width, layers.saturating_sub(1)));
    dims.push(NUM_ACTIONS);
    Mlp::new(store, name, &dims, Activation::Relu, rng)
}
