use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidloc::locator::{policy_net, policy_probs, NUM_ACTIONS};
use vidloc::nn::{Activation, Mlp};
use vidloc::sac::{
    alpha_loss, compute_reward, critic_loss, ctde_train_step, global_snapshot, policy_loss, soft_update, soft_value,
    CriticEnsemble, ReplayBuffer, SacConfig, SacNets, SacOptimizers, Transition,
};
use vidloc::{Error, ParamId, ParamStore, Tape, Tensor};

// ---- helpers ---------------------------------------------------------------

/// Independent forward pass over raw store values: `W[out,in] x + b`, ReLU
/// between layers.
fn mlp_oracle(store: &ParamStore, net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (li, layer) in net.layers.iter().enumerate() {
        let w = store.get(layer.weight).values();
        let b = store.get(layer.bias).values();
        let mut y = vec![0.0; layer.out_dim];
        for (j, yj) in y.iter_mut().enumerate() {
            let mut acc = b[j];
            for (i, xi) in h.iter().enumerate() {
                acc += w[j * layer.in_dim + i] * xi;
            }
            *yj = acc;
        }
        if li + 1 < net.layers.len() {
            for v in &mut y {
                *v = v.max(0.0);
            }
        }
        h = y;
    }
    h
}

fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Single-layer net whose output is the constant `bias` for any input.
fn constant_net(store: &mut ParamStore, name: &str, in_dim: usize, bias: &[f64]) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::new(store, name, &[in_dim, bias.len()], Activation::Relu, &mut rng).unwrap();
    store.get_mut(net.layers[0].weight).values_mut().fill(0.0);
    store.get_mut(net.layers[0].bias).values_mut().copy_from_slice(bias);
    net
}

fn set_log_alpha(store: &mut ParamStore, alpha: f64) -> ParamId {
    store.add("alpha.log", Tensor::vector(vec![alpha.ln()])).unwrap()
}

struct Fixture {
    store: ParamStore,
    policies: Vec<Mlp>,
    critics: Vec<CriticEnsemble>,
    log_alpha: ParamId,
}

impl Fixture {
    fn random(locators: usize, obs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let global = locators * (obs + NUM_ACTIONS);
        let policies = (0..locators)
            .map(|i| policy_net(&mut store, &format!("policy.{i}"), obs - 1, 2, 6, &mut rng).unwrap())
            .collect();
        let critics = (0..locators)
            .map(|i| {
                CriticEnsemble::new(&mut store, &format!("critic.{i}"), &format!("target.{i}"), global, 2, 6, &mut rng)
                    .unwrap()
            })
            .collect::<Vec<_>>();
        let log_alpha = set_log_alpha(&mut store, 0.3);
        let mut f = Self {
            store,
            policies,
            critics,
            log_alpha,
        };
        // decouple targets from locals so the two are distinguishable
        for c in &f.critics {
            for id in c.target_params() {
                for v in f.store.get_mut(id).values_mut() {
                    *v += rng.random_range(-0.2..0.2);
                }
            }
        }
        f
    }

    fn nets(&self) -> SacNets<'_> {
        SacNets {
            policies: &self.policies,
            critics: &self.critics,
            log_alpha: self.log_alpha,
        }
    }
}

fn random_transition(rng: &mut ChaCha8Rng, locator: usize, locators: usize, obs: usize, done: bool) -> Transition {
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let all_obs: Vec<Vec<f64>> = (0..locators).map(|_| v(obs)).collect();
    let next_obs: Vec<Vec<f64>> = (0..locators).map(|_| v(obs)).collect();
    let actions: Vec<Option<usize>> = (0..locators).map(|j| Some((j + 1) % NUM_ACTIONS)).collect();
    Transition {
        locator,
        obs: all_obs[locator].clone(),
        action: actions[locator].unwrap(),
        reward: v(1)[0],
        next_obs: next_obs[locator].clone(),
        done,
        global: global_snapshot(&all_obs, &actions, Some(locator)),
        next_global: global_snapshot(&next_obs, &vec![None; locators], Some(locator)),
    }
}

// ---- reward and soft update -------------------------------------------------

#[test]
fn reward_examples() {
    let r = compute_reward(0.6, 0.5, 0.1, 4).unwrap();
    assert!((r - (-0.3)).abs() < 1e-12);
    assert_eq!(compute_reward(0.37, 0.37, 0.2, 0).unwrap(), 0.0);
    assert!(compute_reward(0.5, 0.5, -0.1, 1).is_err());
    assert!(compute_reward(1.5, 0.5, 0.1, 1).is_err());
}

#[test]
fn lambda_grid_literal() {
    let grid = [0.05, 0.1, 0.15, 0.2];
    for l in grid {
        assert_eq!(compute_reward(0.5, 0.5, l, 1).unwrap(), -l);
    }
}

#[test]
fn soft_update_examples() {
    let mut s = ParamStore::new();
    let l = s.add("l", Tensor::vector(vec![2.0])).unwrap();
    let t = s.add("t", Tensor::vector(vec![0.0])).unwrap();
    soft_update(&mut s, &[l], &[t], 0.99).unwrap();
    assert!((s.get(t).values()[0] - 1.98).abs() < 1e-12);

    let t0 = s.get(t).values().to_vec();
    soft_update(&mut s, &[l], &[t], 0.0).unwrap();
    assert_eq!(s.get(t).values(), t0.as_slice());
    soft_update(&mut s, &[l], &[t], 1.0).unwrap();
    assert_eq!(s.get(t).values(), s.get(l).values());

    let wide = s.add("w", Tensor::vector(vec![0.0, 1.0])).unwrap();
    assert!(matches!(soft_update(&mut s, &[l], &[wide], 0.5), Err(Error::Shape { .. })));
    assert!(soft_update(&mut s, &[l], &[t], 1.5).is_err());
}

// ---- value, critic, policy, alpha ------------------------------------------

#[test]
fn soft_value_examples() {
    let pi = [0.25; 4];
    let lp = [0.25f64.ln(); 4];
    assert!((soft_value(&pi, &lp, &[1.0; 4], &[3.0; 4], 0.0) - 1.0).abs() < 1e-12);
    assert!((soft_value(&pi, &lp, &[0.0; 4], &[0.0; 4], 1.0) - 4f64.ln()).abs() < 1e-12);
}

/// One locator, constant nets: V(g') through the critic target path.
#[test]
fn critic_target_through_constant_nets() {
    for (q, alpha, expect) in [(1.0, 1e-300, 1.0), (0.0, 1.0, 4f64.ln())] {
        let mut store = ParamStore::new();
        let obs = 2;
        let global = obs + NUM_ACTIONS;
        let policy = constant_net(&mut store, "policy.0", obs, &[0.0; 4]);
        let q1 = constant_net(&mut store, "critic.0.q1", global, &[0.0; 4]);
        let q2 = constant_net(&mut store, "critic.0.q2", global, &[0.0; 4]);
        let q1t = constant_net(&mut store, "target.0.q1", global, &[q; 4]);
        let q2t = constant_net(&mut store, "target.0.q2", global, &[q + 2.0; 4]);
        let log_alpha = set_log_alpha(&mut store, alpha);
        let critics = [CriticEnsemble {
            q1,
            q2,
            q1_target: q1t,
            q2_target: q2t,
        }];
        let policies = [policy];
        let nets = SacNets {
            policies: &policies,
            critics: &critics,
            log_alpha,
        };
        let t = Transition {
            locator: 0,
            obs: vec![0.0; obs],
            action: 2,
            reward: 0.0,
            next_obs: vec![0.0; obs],
            done: false,
            global: vec![0.0; global],
            next_global: vec![0.0; global],
        };
        // Q locals are zero, so loss = ½·2·(γV)² / 1 with γ = 1
        let mut tape = Tape::new(&store);
        let l = critic_loss(&mut tape, &nets, &[t], 1.0).unwrap();
        assert!((tape.scalar(l) - expect * expect).abs() < 1e-9, "{} vs {}", tape.scalar(l), expect);
    }
}

/// Two transitions (one done) against hand evaluation with random nets.
#[test]
fn critic_loss_scalar_oracle() {
    let (locators, obs) = (2, 3);
    let f = Fixture::random(locators, obs, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = vec![
        random_transition(&mut rng, 0, locators, obs, false),
        random_transition(&mut rng, 1, locators, obs, true),
    ];
    let gamma = 0.9;
    let alpha = 0.3;
    let s = &f.store;
    let mut oracle = 0.0;
    for t in &batch {
        let c = &f.critics[t.locator];
        let pi = softmax_oracle(&mlp_oracle(s, &f.policies[t.locator], &t.next_obs));
        let qt1 = mlp_oracle(s, &c.q1_target, &t.next_global);
        let qt2 = mlp_oracle(s, &c.q2_target, &t.next_global);
        let mut v = 0.0;
        for a in 0..4 {
            v += pi[a] * (qt1[a].min(qt2[a]) - alpha * pi[a].ln());
        }
        let y = t.reward + if t.done { 0.0 } else { gamma * v };
        let q1 = mlp_oracle(s, &c.q1, &t.global)[t.action];
        let q2 = mlp_oracle(s, &c.q2, &t.global)[t.action];
        oracle += 0.5 * (q1 - y).powi(2) + 0.5 * (q2 - y).powi(2);
    }
    oracle /= batch.len() as f64;
    let mut tape = Tape::new(&f.store);
    let l = critic_loss(&mut tape, &f.nets(), &batch, gamma).unwrap();
    assert!((tape.scalar(l) - oracle).abs() < 1e-9, "{} vs {oracle}", tape.scalar(l));
}

#[test]
fn policy_and_alpha_scalar_oracle() {
    let (locators, obs) = (3, 4);
    let f = Fixture::random(locators, obs, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch: Vec<Transition> = (0..5)
        .map(|k| random_transition(&mut rng, k % locators, locators, obs, k == 4))
        .collect();
    let alpha = 0.3;
    let h_bar = 0.7;
    let s = &f.store;
    let (mut lp_oracle, mut la_oracle) = (0.0, 0.0);
    for t in &batch {
        let c = &f.critics[t.locator];
        let pi = softmax_oracle(&mlp_oracle(s, &f.policies[t.locator], &t.obs));
        let q1 = mlp_oracle(s, &c.q1, &t.global);
        let q2 = mlp_oracle(s, &c.q2, &t.global);
        for a in 0..4 {
            lp_oracle += pi[a] * (alpha * pi[a].ln() - q1[a].min(q2[a]));
            la_oracle += pi[a] * (-alpha * (pi[a].ln() + h_bar));
        }
    }
    lp_oracle /= 5.0;
    la_oracle /= 5.0;
    let mut tape = Tape::new(&f.store);
    let lp = policy_loss(&mut tape, &f.nets(), &batch).unwrap();
    let la = alpha_loss(&mut tape, &f.nets(), &batch, h_bar).unwrap();
    assert!((tape.scalar(lp) - lp_oracle).abs() < 1e-9);
    assert!((tape.scalar(la) - la_oracle).abs() < 1e-9);
}

fn two_action_policy(store: &mut ParamStore, probs: [f64; 2]) -> Mlp {
    // two live actions, two masked to probability ~0 by very negative logits
    constant_net(store, "policy.0", 1, &[probs[0].ln(), probs[1].ln(), -800.0, -800.0])
}

#[test]
fn policy_loss_half_half_example() {
    let mut store = ParamStore::new();
    let policy = two_action_policy(&mut store, [0.5, 0.5]);
    let global = 1 + NUM_ACTIONS;
    let q = [1.0, 0.0, 0.0, 0.0];
    let critics = [CriticEnsemble {
        q1: constant_net(&mut store, "critic.0.q1", global, &q),
        q2: constant_net(&mut store, "critic.0.q2", global, &[5.0, 0.0, 0.0, 0.0]),
        q1_target: constant_net(&mut store, "target.0.q1", global, &q),
        q2_target: constant_net(&mut store, "target.0.q2", global, &q),
    }];
    let log_alpha = set_log_alpha(&mut store, 1e-300);
    let policies = [policy];
    let nets = SacNets {
        policies: &policies,
        critics: &critics,
        log_alpha,
    };
    let t = Transition {
        locator: 0,
        obs: vec![0.0],
        action: 0,
        reward: 0.0,
        next_obs: vec![0.0],
        done: true,
        global: vec![0.0; global],
        next_global: vec![0.0; global],
    };
    let mut tape = Tape::new(&store);
    let l = policy_loss(&mut tape, &nets, &[t.clone()]).unwrap();
    assert!((tape.scalar(l) + 0.5).abs() < 1e-9, "{}", tape.scalar(l));

    // gradient reaches the policy but never the critics
    let g = tape.backward(l).unwrap();
    assert!(g.param(policies[0].layers[0].bias).is_some());
    for id in critics[0].local_params().into_iter().chain(critics[0].target_params()) {
        assert!(g.param(id).is_none_or(|v| v.iter().all(|x| *x == 0.0)));
    }
    assert!(g.param(log_alpha).is_none_or(|v| v[0] == 0.0));

    // sharper policy with alpha > 0 raises the loss through the α log π term
    let mut losses = Vec::new();
    for p in [0.5, 0.9, 0.999] {
        let mut st = ParamStore::new();
        let policy = two_action_policy(&mut st, [p, 1.0 - p]);
        let zero = [0.0; 4];
        let critics = [CriticEnsemble {
            q1: constant_net(&mut st, "critic.0.q1", global, &zero),
            q2: constant_net(&mut st, "critic.0.q2", global, &zero),
            q1_target: constant_net(&mut st, "target.0.q1", global, &zero),
            q2_target: constant_net(&mut st, "target.0.q2", global, &zero),
        }];
        let log_alpha = set_log_alpha(&mut st, 0.5);
        let policies = [policy];
        let nets = SacNets {
            policies: &policies,
            critics: &critics,
            log_alpha,
        };
        let mut tape = Tape::new(&st);
        let l = policy_loss(&mut tape, &nets, &[t.clone()]).unwrap();
        losses.push(tape.scalar(l));
    }
    assert!(losses[0] < losses[1] && losses[1] < losses[2], "{losses:?}");
}

fn alpha_fixture(probs: [f64; 2], alpha: f64) -> (ParamStore, Vec<Mlp>, Vec<CriticEnsemble>, ParamId) {
    let mut store = ParamStore::new();
    let policy = two_action_policy(&mut store, probs);
    let global = 1 + NUM_ACTIONS;
    let zero = [0.0; 4];
    let critics = vec![CriticEnsemble {
        q1: constant_net(&mut store, "critic.0.q1", global, &zero),
        q2: constant_net(&mut store, "critic.0.q2", global, &zero),
        q1_target: constant_net(&mut store, "target.0.q1", global, &zero),
        q2_target: constant_net(&mut store, "target.0.q2", global, &zero),
    }];
    let log_alpha = set_log_alpha(&mut store, alpha);
    (store, vec![policy], critics, log_alpha)
}

fn dummy_transition() -> Transition {
    Transition {
        locator: 0,
        obs: vec![0.0],
        action: 0,
        reward: 0.0,
        next_obs: vec![0.0],
        done: true,
        global: vec![0.0; 1 + NUM_ACTIONS],
        next_global: vec![0.0; 1 + NUM_ACTIONS],
    }
}

#[test]
fn alpha_loss_examples() {
    for alpha in [0.5, 1.0, 2.0] {
        let (store, policies, critics, log_alpha) = alpha_fixture([0.5, 0.5], alpha);
        let nets = SacNets {
            policies: &policies,
            critics: &critics,
            log_alpha,
        };
        let mut tape = Tape::new(&store);
        let l = alpha_loss(&mut tape, &nets, &[dummy_transition()], 0.5).unwrap();
        let expect = -(0.5f64.ln() + 0.5) * alpha;
        assert!((tape.scalar(l) - expect).abs() < 1e-9);
        assert!((expect / alpha - 0.193).abs() < 5e-4);

        // policy gradients are blocked
        let g = tape.backward(l).unwrap();
        assert!(g.param(policies[0].layers[0].bias).is_none_or(|v| v.iter().all(|x| *x == 0.0)));
    }
}

#[test]
fn alpha_fixed_point_and_sign() {
    // entropy of [0.5, 0.5] is ln 2: zero gradient at H̄ = ln 2
    let (store, policies, critics, log_alpha) = alpha_fixture([0.5, 0.5], 0.7);
    let nets = SacNets {
        policies: &policies,
        critics: &critics,
        log_alpha,
    };
    let mut tape = Tape::new(&store);
    let l = alpha_loss(&mut tape, &nets, &[dummy_transition()], 2f64.ln()).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.param(log_alpha).unwrap()[0].abs() < 1e-12);

    // entropy below target: one optimizer step raises α
    let (mut store, policies, critics, log_alpha) = alpha_fixture([0.95, 0.05], 0.7);
    let nets = SacNets {
        policies: &policies,
        critics: &critics,
        log_alpha,
    };
    let cfg = SacConfig {
        batch_size: 1,
        target_entropy: 1.0,
        lr_alpha: 1e-2,
        ..SacConfig::default()
    };
    let mut buffer = ReplayBuffer::new(4, 0).unwrap();
    buffer.push(dummy_transition());
    let mut opt = SacOptimizers::new(&store, &nets, &cfg);
    let before = nets.alpha(&store);
    ctde_train_step(&mut store, &nets, &mut buffer, &mut opt, &cfg).unwrap();
    assert!(nets.alpha(&store) > before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_stays_positive(start in -6.0f64..4.0, h_bar in -1.0f64..2.0, seed in 0u64..1000) {
        let mut f = Fixture::random(2, 3, seed);
        f.store.get_mut(f.log_alpha).values_mut()[0] = start;
        let cfg = SacConfig { batch_size: 4, target_entropy: h_bar, lr_alpha: 0.5, ..SacConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buffer = ReplayBuffer::new(16, seed).unwrap();
        for k in 0..8 {
            buffer.push(random_transition(&mut rng, k % 2, 2, 3, k % 3 == 0));
        }
        let nets = f.nets();
        let mut store = f.store.clone();
        let mut opt = SacOptimizers::new(&store, &nets, &cfg);
        for _ in 0..20 {
            ctde_train_step(&mut store, &nets, &mut buffer, &mut opt, &cfg).unwrap();
            let a = nets.alpha(&store);
            prop_assert!(a > 0.0 && a.is_finite());
        }
    }

    #[test]
    fn reward_is_shared_formula(p in 0.0f64..1.0, q in 0.0f64..1.0, l in 0.0f64..1.0, n in 0usize..40) {
        let r = compute_reward(p, q, l, n).unwrap();
        prop_assert_eq!(r, (p - q) - l * n as f64);
    }
}

// ---- CTDE structure ---------------------------------------------------------

#[test]
fn critic_sees_other_locator_slot_policy_does_not() {
    let (locators, obs) = (3, 5);
    let f = Fixture::random(locators, obs, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let observations: Vec<Vec<f64>> = (0..locators)
        .map(|_| (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let actions = vec![Some(1), Some(2), Some(3)];
    let (i, j) = (0, 2);
    let g = global_snapshot(&observations, &actions, Some(i));
    let mut perturbed = observations.clone();
    for v in &mut perturbed[j] {
        *v += 0.5;
    }
    let g2 = global_snapshot(&perturbed, &actions, Some(i));
    let q = mlp_oracle(&f.store, &f.critics[i].q1, &g);
    let q_pert = mlp_oracle(&f.store, &f.critics[i].q1, &g2);
    assert_ne!(q, q_pert);

    let pi = policy_probs(&f.store, &f.policies[i], &observations[i]).unwrap();
    let pi2 = policy_probs(&f.store, &f.policies[i], &perturbed[i]).unwrap();
    assert_eq!(pi, pi2);
    // the snapshot layout puts locator j's slot where the critic can see it
    let slot = obs + NUM_ACTIONS;
    assert_ne!(g[j * slot..(j + 1) * slot], g2[j * slot..(j + 1) * slot]);
    assert_eq!(g[..slot], g2[..slot]);
}

#[test]
fn snapshot_zeroes_owner_action() {
    let obs = vec![vec![1.0], vec![2.0]];
    let g = global_snapshot(&obs, &[Some(3), Some(1)], Some(0));
    assert_eq!(g, vec![1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0]);
    let g = global_snapshot(&obs, &[Some(3), None], None);
    assert_eq!(g, vec![1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn train_step_touches_targets_only_by_soft_update() {
    let f = Fixture::random(2, 3, 31);
    let cfg = SacConfig {
        batch_size: 4,
        tau: 0.0,
        ..SacConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut buffer = ReplayBuffer::new(32, 1).unwrap();
    for k in 0..10 {
        buffer.push(random_transition(&mut rng, k % 2, 2, 3, k % 4 == 0));
    }
    let nets = f.nets();
    let mut store = f.store.clone();
    let targets = nets.target_params();
    let locals = nets.critic_params();
    let before_t = store.checksum(&targets);
    let before_l = store.checksum(&locals);
    let mut opt = SacOptimizers::new(&store, &nets, &cfg);
    ctde_train_step(&mut store, &nets, &mut buffer, &mut opt, &cfg).unwrap();
    assert_eq!(store.checksum(&targets), before_t, "tau = 0 must leave targets alone");
    assert_ne!(store.checksum(&locals), before_l);

    let cfg1 = SacConfig { tau: 1.0, ..cfg };
    ctde_train_step(&mut store, &nets, &mut buffer, &mut opt, &cfg1).unwrap();
    for (l, t) in locals.iter().zip(&targets) {
        assert_eq!(store.get(*l).values(), store.get(*t).values());
    }
}

#[test]
fn hundred_steps_stay_finite() {
    let f = Fixture::random(3, 4, 41);
    let cfg = SacConfig {
        batch_size: 16,
        lr_policy: 1e-3,
        lr_critic: 1e-3,
        ..SacConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut buffer = ReplayBuffer::new(256, 2).unwrap();
    for k in 0..128 {
        buffer.push(random_transition(&mut rng, k % 3, 3, 4, k % 5 == 4));
    }
    let nets = f.nets();
    let mut store = f.store.clone();
    let mut opt = SacOptimizers::new(&store, &nets, &cfg);
    for _ in 0..100 {
        let r = ctde_train_step(&mut store, &nets, &mut buffer, &mut opt, &cfg).unwrap();
        assert!(r.critic_loss.is_finite() && r.policy_loss.is_finite() && r.alpha_loss.is_finite());
    }
}

// ---- replay -----------------------------------------------------------------

#[test]
fn replay_fifo_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let items: Vec<Transition> = (0..7).map(|k| random_transition(&mut rng, 0, 1, 2, k == 6)).collect();
    let mut a = ReplayBuffer::new(5, 9).unwrap();
    let mut b = ReplayBuffer::new(5, 9).unwrap();
    for t in &items {
        a.push(t.clone());
        b.push(t.clone());
    }
    assert_eq!(a.len(), 5);
    assert_eq!(a.get(0), Some(&items[2]));
    assert_eq!(a.get(4), Some(&items[6]));
    for _ in 0..3 {
        let sa = a.sample(4).unwrap();
        assert_eq!(sa, b.sample(4).unwrap());
        for (x, y) in sa.iter().enumerate() {
            assert!(!sa[x + 1..].contains(y), "sampled with replacement");
        }
    }
    assert!(matches!(a.sample(6), Err(Error::Underfilled { have: 5, need: 6 })));
    assert!(ReplayBuffer::new(0, 0).is_err());
}
