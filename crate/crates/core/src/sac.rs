//! Discrete soft actor-critic trained with centralized critics and
//! decentralized per-locator policies.
//!
//! Each locator owns a policy over its local observation and a pair of
//! critics (plus targets) over the global snapshot. The snapshot holds every
//! locator's observation and one-hot action; the owner's action slot is left
//! zero because its critic scores all of the owner's actions at once.

use std::collections::VecDeque;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::locator::NUM_ACTIONS;
use crate::nn::{Activation, Mlp};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `(P_t - P_{t-1}) - λ N_t`.
pub fn compute_reward(p_t: f64, p_prev: f64, lambda: f64, n_t: usize) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} < 0")));
    }
    if !(0.0..=1.0).contains(&p_t) || !(0.0..=1.0).contains(&p_prev) {
        return Err(Error::InvalidArgument(format!("probabilities {p_t}, {p_prev} outside [0,1]")));
    }
    Ok((p_t - p_prev) - lambda * n_t as f64)
}

/// `target <- τ local + (1 - τ) target` for each pair.
pub fn soft_update(store: &mut ParamStore, local: &[ParamId], target: &[ParamId], tau: f64) -> Result<()> {
    if local.len() != target.len() {
        return shape_err("soft_update", format!("{} locals vs {} targets", local.len(), target.len()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0,1]")));
    }
    for (&l, &t) in local.iter().zip(target) {
        if store.get(l).shape() != store.get(t).shape() {
            return shape_err(
                "soft_update",
                format!("{}: {:?} vs {:?}", store.name(l), store.get(l).shape(), store.get(t).shape()),
            );
        }
        let src = store.get(l).values().to_vec();
        for (d, s) in store.get_mut(t).values_mut().iter_mut().zip(src) {
            *d = tau * s + (1.0 - tau) * *d;
        }
    }
    Ok(())
}

/// Default target entropy: 60% of the maximum over four actions.
pub fn default_target_entropy() -> f64 {
    0.6 * (NUM_ACTIONS as f64).ln()
}

/// Concatenation of every locator's observation and one-hot action.
/// The `owner`'s action slot stays zero.
pub fn global_snapshot(obs: &[Vec<f64>], actions: &[Option<usize>], owner: Option<usize>) -> Vec<f64> {
    let mut g = Vec::with_capacity(obs.iter().map(|o| o.len() + NUM_ACTIONS).sum());
    for (j, o) in obs.iter().enumerate() {
        g.extend_from_slice(o);
        let mut slot = [0.0; NUM_ACTIONS];
        if Some(j) != owner {
            if let Some(a) = actions[j] {
                slot[a] = 1.0;
            }
        }
        g.extend_from_slice(&slot);
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub locator: usize,
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub global: Vec<f64>,
    pub next_global: Vec<f64>,
}

/// FIFO ring of transitions with seeded sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform sample without replacement.
    pub fn sample(&mut self, batch: usize) -> Result<Vec<Transition>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::Underfilled {
                have: self.items.len(),
                need: batch.max(1),
            });
        }
        Ok(sample_indices(&mut self.rng, self.items.len(), batch)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }
}

/// Double critics with their targets; each maps a global snapshot to four
/// action values.
#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
}

fn critic_mlp<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, layers: usize, width: usize, rng: &mut R) -> Result<Mlp> {
    let mut dims = vec![in_dim];
    dims.extend(std::iter::repeat_n(width, layers.saturating_sub(1)));
    dims.push(NUM_ACTIONS);
    Mlp::new(store, name, &dims, Activation::Relu, rng)
}

impl CriticEnsemble {
    /// Locals under `{local}.q1/.q2`, targets under `{target}.q1/.q2`,
    /// targets starting as copies of the locals.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        local: &str,
        target: &str,
        in_dim: usize,
        layers: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let q1 = critic_mlp(store, &format!("{local}.q1"), in_dim, layers, width, rng)?;
        let q2 = critic_mlp(store, &format!("{local}.q2"), in_dim, layers, width, rng)?;
        let q1_target = critic_mlp(store, &format!("{target}.q1"), in_dim, layers, width, rng)?;
        let q2_target = critic_mlp(store, &format!("{target}.q2"), in_dim, layers, width, rng)?;
        let ens = Self {
            q1,
            q2,
            q1_target,
            q2_target,
        };
        soft_update(store, &ens.local_params(), &ens.target_params(), 1.0)?;
        Ok(ens)
    }

    pub fn in_dim(&self) -> usize {
        self.q1.in_dim()
    }

    pub fn local_params(&self) -> Vec<ParamId> {
        let mut p = self.q1.params();
        p.extend(self.q2.params());
        p
    }

    pub fn target_params(&self) -> Vec<ParamId> {
        let mut p = self.q1_target.params();
        p.extend(self.q2_target.params());
        p
    }

    pub fn flops(&self) -> u64 {
        self.q1.flops()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub target_entropy: f64,
    pub batch_size: usize,
    pub capacity: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.99,
            target_entropy: default_target_entropy(),
            batch_size: 64,
            capacity: 50_000,
            lr_policy: 1e-5,
            lr_critic: 5e-5,
            lr_alpha: 5e-4,
        }
    }
}

/// Borrowed view of the networks the SAC losses need.
#[derive(Debug, Clone, Copy)]
pub struct SacNets<'a> {
    pub policies: &'a [Mlp],
    pub critics: &'a [CriticEnsemble],
    pub log_alpha: ParamId,
}

impl SacNets<'_> {
    pub fn alpha(&self, store: &ParamStore) -> f64 {
        store.get(self.log_alpha).values()[0].exp()
    }

    pub fn policy_params(&self) -> Vec<ParamId> {
        self.policies.iter().flat_map(Mlp::params).collect()
    }

    pub fn critic_params(&self) -> Vec<ParamId> {
        self.critics.iter().flat_map(CriticEnsemble::local_params).collect()
    }

    pub fn target_params(&self) -> Vec<ParamId> {
        self.critics.iter().flat_map(CriticEnsemble::target_params).collect()
    }
}

fn rows_matrix<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Tensor> {
    let rows: Vec<&[f64]> = rows.collect();
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return shape_err("batch", "ragged rows");
    }
    Tensor::matrix(rows.len(), cols, rows.concat())
}

/// Forward of `net` on a row batch, values only.
pub fn eval_rows(store: &ParamStore, net: &Mlp, rows: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::inference(store);
    let x = tape.constant(rows.clone());
    let y = net.forward(&mut tape, x)?;
    Ok(tape.value(y).to_vec())
}

/// Row-wise `(softmax, log_softmax)` of `[b, 4]` logits.
pub fn policy_rows(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut p = Vec::with_capacity(logits.len());
    let mut lp = Vec::with_capacity(logits.len());
    for row in logits.chunks(NUM_ACTIONS) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        for &z in row {
            lp.push(z - lse);
            p.push((z - lse).exp());
        }
    }
    (p, lp)
}

/// Soft state value `π(s')ᵀ[min_j Q̄_j(g') - α log π(s')]` for one row.
pub fn soft_value(pi: &[f64], log_pi: &[f64], q1: &[f64], q2: &[f64], alpha: f64) -> f64 {
    (0..pi.len())
        .map(|a| pi[a] * (q1[a].min(q2[a]) - alpha * log_pi[a]))
        .sum()
}

fn by_locator<'b>(batch: &'b [Transition], locators: usize) -> Result<Vec<Vec<&'b Transition>>> {
    let mut groups = vec![Vec::new(); locators];
    for t in batch {
        if t.locator >= locators || t.action >= NUM_ACTIONS {
            return Err(Error::InvalidArgument(format!("transition locator {} action {}", t.locator, t.action)));
        }
        groups[t.locator].push(t);
    }
    Ok(groups)
}

/// TD targets `r + γ (1 - done) V(g')` for one locator's transitions.
pub fn td_targets(store: &ParamStore, nets: &SacNets, locator: usize, group: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    let alpha = nets.alpha(store);
    let next_s = rows_matrix(group.iter().map(|t| t.next_obs.as_slice()))?;
    let next_g = rows_matrix(group.iter().map(|t| t.next_global.as_slice()))?;
    let (pi, log_pi) = policy_rows(&eval_rows(store, &nets.policies[locator], &next_s)?);
    let c = &nets.critics[locator];
    let q1 = eval_rows(store, &c.q1_target, &next_g)?;
    let q2 = eval_rows(store, &c.q2_target, &next_g)?;
    Ok(group
        .iter()
        .enumerate()
        .map(|(r, t)| {
            let s = r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS;
            let v = soft_value(&pi[s.clone()], &log_pi[s.clone()], &q1[s.clone()], &q2[s], alpha);
            t.reward + if t.done { 0.0 } else { gamma * v }
        })
        .collect())
}

/// Mean over the batch of `½(Q1[a] - y)² + ½(Q2[a] - y)²`.
pub fn critic_loss(tape: &mut Tape, nets: &SacNets, batch: &[Transition], gamma: f64) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("critic batch"));
    }
    let store = tape.store().ok_or(Error::InvalidArgument("critic loss needs a parameter store".into()))?;
    let mut terms = Vec::new();
    for (i, group) in by_locator(batch, nets.critics.len())?.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let y = td_targets(store, nets, i, group, gamma)?;
        let y = tape.constant_vec(y);
        let g = tape.constant(rows_matrix(group.iter().map(|t| t.global.as_slice()))?);
        let actions: Vec<usize> = group.iter().map(|t| t.action).collect();
        for q in [&nets.critics[i].q1, &nets.critics[i].q2] {
            let values = q.forward(tape, g)?;
            let taken = tape.gather(values, &actions)?;
            let diff = tape.sub(taken, y)?;
            let sq = tape.mul(diff, diff)?;
            terms.push(tape.sum(sq)?);
        }
    }
    let total = tape.concat(&terms)?;
    let total = tape.sum(total)?;
    tape.scale(total, 0.5 / batch.len() as f64)
}

/// Mean over the batch of `π(s)ᵀ[α log π(s) - min_j Q_j(g)]`; critic values
/// enter as constants.
pub fn policy_loss(tape: &mut Tape, nets: &SacNets, batch: &[Transition]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("policy batch"));
    }
    let store = tape.store().ok_or(Error::InvalidArgument("policy loss needs a parameter store".into()))?;
    let alpha = nets.alpha(store);
    let mut terms = Vec::new();
    for (i, group) in by_locator(batch, nets.policies.len())?.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let g = rows_matrix(group.iter().map(|t| t.global.as_slice()))?;
        let q1 = eval_rows(store, &nets.critics[i].q1, &g)?;
        let q2 = eval_rows(store, &nets.critics[i].q2, &g)?;
        let min_q: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).collect();
        let min_q = tape.constant(Tensor::matrix(group.len(), NUM_ACTIONS, min_q)?);
        let s = tape.constant(rows_matrix(group.iter().map(|t| t.obs.as_slice()))?);
        let logits = nets.policies[i].forward(tape, s)?;
        let log_pi = tape.log_softmax(logits)?;
        let pi = tape.exp(log_pi)?;
        let scaled = tape.scale(log_pi, alpha)?;
        let inner = tape.sub(scaled, min_q)?;
        let weighted = tape.mul(pi, inner)?;
        terms.push(tape.sum(weighted)?);
    }
    let total = tape.concat(&terms)?;
    let total = tape.sum(total)?;
    tape.scale(total, 1.0 / batch.len() as f64)
}

/// Mean over the batch of `π(s)ᵀ[-α (log π(s) + H̄)]` with π held fixed;
/// only `log α` receives a gradient.
pub fn alpha_loss(tape: &mut Tape, nets: &SacNets, batch: &[Transition], target_entropy: f64) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("alpha batch"));
    }
    let store = tape.store().ok_or(Error::InvalidArgument("alpha loss needs a parameter store".into()))?;
    let mut coeff = 0.0;
    for (i, group) in by_locator(batch, nets.policies.len())?.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let s = rows_matrix(group.iter().map(|t| t.obs.as_slice()))?;
        let (pi, log_pi) = policy_rows(&eval_rows(store, &nets.policies[i], &s)?);
        coeff += pi
            .iter()
            .zip(&log_pi)
            .map(|(p, lp)| -p * (lp + target_entropy))
            .sum::<f64>();
    }
    let log_alpha = tape.param(nets.log_alpha);
    let alpha = tape.exp(log_alpha)?;
    let alpha = tape.sum(alpha)?;
    tape.scale(alpha, coeff / batch.len() as f64)
}

/// One optimizer per parameter group.
#[derive(Debug, Clone)]
pub struct SacOptimizers {
    pub policy: Adam,
    pub critic: Adam,
    pub alpha: Adam,
}

impl SacOptimizers {
    pub fn new(store: &ParamStore, nets: &SacNets, cfg: &SacConfig) -> Self {
        Self {
            policy: Adam::new(store, nets.policy_params(), AdamConfig::with_lr(cfg.lr_policy)),
            critic: Adam::new(store, nets.critic_params(), AdamConfig::with_lr(cfg.lr_critic)),
            alpha: Adam::new(store, vec![nets.log_alpha], AdamConfig::with_lr(cfg.lr_alpha)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacReport {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
}

/// Samples a batch and takes one step on critics, every policy and `α`,
/// then moves the targets toward the critics.
pub fn ctde_train_step(
    store: &mut ParamStore,
    nets: &SacNets,
    buffer: &mut ReplayBuffer,
    opt: &mut SacOptimizers,
    cfg: &SacConfig,
) -> Result<SacReport> {
    let batch = buffer.sample(cfg.batch_size)?;
    let (report, grads) = {
        let mut tape = Tape::new(store);
        let lc = critic_loss(&mut tape, nets, &batch, cfg.gamma)?;
        let lp = policy_loss(&mut tape, nets, &batch)?;
        let la = alpha_loss(&mut tape, nets, &batch, cfg.target_entropy)?;
        let grads = [tape.backward(lc)?, tape.backward(lp)?, tape.backward(la)?];
        let report = SacReport {
            critic_loss: tape.scalar(lc),
            policy_loss: tape.scalar(lp),
            alpha_loss: tape.scalar(la),
            alpha: nets.alpha(store),
        };
        (report, grads)
    };
    store.zero_grad();
    for g in &grads {
        g.accumulate_into(store)?;
    }
    opt.critic.step(store, 1.0)?;
    opt.policy.step(store, 1.0)?;
    opt.alpha.step(store, 1.0)?;
    store.zero_grad();
    soft_update(store, &nets.critic_params(), &nets.target_params(), cfg.tau)?;
    Ok(report)
}
