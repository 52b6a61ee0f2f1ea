//! The full network: shared spatial encoder, temporal net, integrator and
//! classifier (the backbone), per-locator policies, per-locator critic
//! ensembles and the entropy temperature, all in one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::integrate::{Classifier, Integrator, IntegratorKind};
use crate::locator::{policy_net, ActionSpace, TemporalKind, TemporalNet, NUM_ACTIONS};
use crate::nn::{Mlp, TransformerConfig};
use crate::params::{ParamId, ParamStore};
use crate::sac::{CriticEnsemble, SacNets};
use crate::spatial::{SpatialEncoder, SpatialKind, PASSTHROUGH_FLOPS_PER_FRAME};
use crate::tape::{softmax, Tape, Var};
use crate::tensor::Tensor;

pub const BACKBONE: &str = "backbone.";
pub const POLICY: &str = "policy.";
pub const CRITIC: &str = "critic.";
pub const TARGET: &str = "target.";
pub const ALPHA: &str = "alpha.log";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub frame_dim: usize,
    pub classes: usize,
    pub locators: usize,
    pub max_moves: usize,
    pub delta: usize,
    pub spatial: SpatialKind,
    pub spatial_hidden: usize,
    pub spatial_out: usize,
    pub spatial_cost: f64,
    pub temporal: TemporalKind,
    pub lstm_hidden: usize,
    pub integrator: IntegratorKind,
    pub forward_width: usize,
    pub transformer_layers: usize,
    pub transformer_heads: usize,
    pub transformer_dim: usize,
    pub transformer_ff: usize,
    pub position_embeddings: bool,
    pub policy_layers: usize,
    pub policy_width: usize,
    pub critic_layers: usize,
    pub critic_width: usize,
    pub alpha_init: f64,
    /// Fuse the initial-position frame into the unit context.
    pub initial_fusion: bool,
    /// Stop a locator that moves into the next locator's region.
    pub fence: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame_dim: 64,
            classes: 10,
            locators: 3,
            max_moves: 4,
            delta: 3,
            spatial: SpatialKind::Passthrough,
            spatial_hidden: 512,
            spatial_out: 1024,
            spatial_cost: PASSTHROUGH_FLOPS_PER_FRAME,
            temporal: TemporalKind::Lstm,
            lstm_hidden: 256,
            integrator: IntegratorKind::Transformer,
            forward_width: 512,
            transformer_layers: 8,
            transformer_heads: 4,
            transformer_dim: 256,
            transformer_ff: 512,
            position_embeddings: true,
            policy_layers: 4,
            policy_width: 512,
            critic_layers: 5,
            critic_width: 512,
            alpha_init: 1.0,
            initial_fusion: true,
            fence: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.locators == 0 {
            return bad("locators must be >= 1".into());
        }
        if self.max_moves == 0 {
            return bad("max_moves must be >= 1".into());
        }
        if self.delta == 0 {
            return bad("delta must be >= 1".into());
        }
        if self.classes < 2 {
            return bad("need >= 2 classes".into());
        }
        if self.transformer_heads == 0 || self.transformer_dim % self.transformer_heads != 0 {
            return bad(format!(
                "transformer_dim {} not divisible by {} heads",
                self.transformer_dim, self.transformer_heads
            ));
        }
        if self.policy_layers == 0 || self.critic_layers == 0 {
            return bad("policy and critic need >= 1 layer".into());
        }
        if !(self.alpha_init > 0.0) {
            return bad(format!("alpha_init {} must be positive", self.alpha_init));
        }
        Ok(())
    }

    /// Width of a unit context `h`.
    pub fn context_width(&self) -> usize {
        match self.temporal {
            TemporalKind::Lstm => self.lstm_hidden,
            _ => self.embed_width(),
        }
    }

    pub fn embed_width(&self) -> usize {
        match self.spatial {
            SpatialKind::Passthrough => self.frame_dim,
            SpatialKind::Mlp => self.spatial_out,
        }
    }

    /// Width of the global snapshot seen by the critics.
    pub fn global_width(&self) -> usize {
        self.locators * (self.context_width() + 1 + NUM_ACTIONS)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub space: ActionSpace,
    pub spatial: SpatialEncoder,
    pub temporal: TemporalNet,
    pub integrator: Integrator,
    pub classifier: Classifier,
    pub policies: Vec<Mlp>,
    pub critics: Vec<CriticEnsemble>,
    pub log_alpha: ParamId,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let spatial = match c.spatial {
            SpatialKind::Passthrough => SpatialEncoder::passthrough(c.frame_dim, c.spatial_cost),
            SpatialKind::Mlp => SpatialEncoder::mlp(
                &mut store,
                "backbone.spatial",
                c.frame_dim,
                c.spatial_hidden,
                c.spatial_out,
                &mut rng,
            )?,
        };
        let embed = c.embed_width();
        let temporal = match c.temporal {
            TemporalKind::Lstm => TemporalNet::lstm(&mut store, "backbone.temporal", embed, c.lstm_hidden, &mut rng)?,
            kind => TemporalNet::pool(kind, embed),
        };
        let width = temporal.width;
        let integrator = match c.integrator {
            IntegratorKind::MeanPool | IntegratorKind::MaxPool => Integrator::pooling(c.integrator, width, c.locators),
            IntegratorKind::Forward => {
                Integrator::forward_mlp(&mut store, "backbone.integrator", width, c.locators, c.forward_width, &mut rng)?
            }
            IntegratorKind::Transformer => Integrator::transformer(
                &mut store,
                "backbone.integrator",
                width,
                c.locators,
                TransformerConfig {
                    layers: c.transformer_layers,
                    heads: c.transformer_heads,
                    model_dim: c.transformer_dim,
                    ff_dim: c.transformer_ff,
                    max_positions: if c.position_embeddings { c.locators } else { 0 },
                },
                &mut rng,
            )?,
        };
        let classifier = Classifier::new(&mut store, "backbone.classifier", integrator.out_dim, c.classes, &mut rng)?;
        let policies = (0..c.locators)
            .map(|i| policy_net(&mut store, &format!("policy.{i}"), width, c.policy_layers, c.policy_width, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let critics = (0..c.locators)
            .map(|i| {
                CriticEnsemble::new(
                    &mut store,
                    &format!("critic.{i}"),
                    &format!("target.{i}"),
                    c.global_width(),
                    c.critic_layers,
                    c.critic_width,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let log_alpha = store.add(ALPHA, Tensor::vector(vec![c.alpha_init.ln()]))?;
        Ok(Self {
            space: ActionSpace::new(c.delta)?,
            config,
            store,
            spatial,
            temporal,
            integrator,
            classifier,
            policies,
            critics,
            log_alpha,
        })
    }

    pub fn sac_nets(&self) -> SacNets<'_> {
        SacNets {
            policies: &self.policies,
            critics: &self.critics,
            log_alpha: self.log_alpha,
        }
    }

    pub fn backbone_params(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(BACKBONE)
    }

    pub fn policy_params(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(POLICY)
    }

    /// Policies, critics, targets and temperature.
    pub fn rl_params(&self) -> Vec<ParamId> {
        let mut p = self.policy_params();
        p.extend(self.store.ids_with_prefix(CRITIC));
        p.extend(self.store.ids_with_prefix(TARGET));
        p.push(self.log_alpha);
        p
    }

    pub fn backbone_checksum(&self) -> u64 {
        self.store.checksum(&self.backbone_params())
    }

    pub fn rl_checksum(&self) -> u64 {
        self.store.checksum(&self.rl_params())
    }

    pub fn alpha(&self) -> f64 {
        self.store.get(self.log_alpha).values()[0].exp()
    }

    /// Class logits from unit embeddings.
    pub fn logits(&self, tape: &mut Tape, units: &[Var]) -> Result<Var> {
        let g = self.integrator.integrate(tape, units)?;
        self.classifier.logits(tape, g)
    }

    /// Class probabilities from unit embeddings.
    pub fn predict(&self, tape: &mut Tape, units: &[Var]) -> Result<Vec<f64>> {
        let z = self.logits(tape, units)?;
        Ok(softmax(tape.value(z)))
    }
}
