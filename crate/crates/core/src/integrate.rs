//! Multi-unit integration: turns the N unit embeddings into one video
//! representation, and the linear classifier on top of it.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{Activation, Linear, Mlp, TransformerConfig, TransformerEncoder};
use crate::params::{ParamId, ParamStore};
use crate::tape::{softmax, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorKind {
    MeanPool,
    MaxPool,
    /// Two-layer MLP over the concatenated units.
    Forward,
    /// Encoder stack over unit tokens, mean-pooled.
    Transformer,
}

#[derive(Debug, Clone)]
pub struct Integrator {
    pub kind: IntegratorKind,
    pub in_dim: usize,
    pub units: usize,
    pub out_dim: usize,
    pub projection: Option<Linear>,
    pub forward: Option<Mlp>,
    pub encoder: Option<TransformerEncoder>,
}

impl Integrator {
    pub fn pooling(kind: IntegratorKind, in_dim: usize, units: usize) -> Self {
        debug_assert!(matches!(kind, IntegratorKind::MeanPool | IntegratorKind::MaxPool));
        Self {
            kind,
            in_dim,
            units,
            out_dim: in_dim,
            projection: None,
            forward: None,
            encoder: None,
        }
    }

    pub fn forward_mlp<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        units: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Mlp::new(store, name, &[in_dim * units, width, width], Activation::Relu, rng)?;
        Ok(Self {
            kind: IntegratorKind::Forward,
            in_dim,
            units,
            out_dim: width,
            projection: None,
            forward: Some(mlp),
            encoder: None,
        })
    }

    /// Units are projected to `config.model_dim` first when widths differ.
    pub fn transformer<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        units: usize,
        config: TransformerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let projection = if in_dim != config.model_dim {
            Some(Linear::new(store, &format!("{name}.proj"), in_dim, config.model_dim, rng)?)
        } else {
            None
        };
        let encoder = TransformerEncoder::new(store, &format!("{name}.enc"), config, rng)?;
        Ok(Self {
            kind: IntegratorKind::Transformer,
            in_dim,
            units,
            out_dim: config.model_dim,
            projection,
            forward: None,
            encoder: Some(encoder),
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        if let Some(l) = &self.projection {
            p.extend(l.params());
        }
        if let Some(m) = &self.forward {
            p.extend(m.params());
        }
        if let Some(e) = &self.encoder {
            p.extend(e.params());
        }
        p
    }

    /// Video representation `G_v` from unit embeddings.
    pub fn integrate(&self, tape: &mut Tape, units: &[Var]) -> Result<Var> {
        if units.is_empty() {
            return shape_err("integrate", "no units");
        }
        for &u in units {
            if tape.shape(u) != [self.in_dim] {
                return shape_err("integrate", format!("unit {:?} vs width {}", tape.shape(u), self.in_dim));
            }
        }
        match self.kind {
            IntegratorKind::MeanPool => {
                let m = tape.stack_rows(units)?;
                tape.mean_rows(m)
            }
            IntegratorKind::MaxPool => {
                let m = tape.stack_rows(units)?;
                tape.max_rows(m)
            }
            IntegratorKind::Forward => {
                if units.len() != self.units {
                    return shape_err("integrate", format!("{} units for a {}-unit MLP", units.len(), self.units));
                }
                let x = tape.concat(units)?;
                self.forward.as_ref().expect("forward integrator").forward(tape, x)
            }
            IntegratorKind::Transformer => {
                let mut x = tape.stack_rows(units)?;
                if let Some(p) = &self.projection {
                    x = p.forward(tape, x)?;
                }
                let y = self.encoder.as_ref().expect("transformer integrator").forward(tape, x)?;
                tape.mean_rows(y)
            }
        }
    }

    pub fn flops(&self, n: usize) -> u64 {
        let nn = n as u64;
        match self.kind {
            IntegratorKind::MeanPool | IntegratorKind::MaxPool => nn * self.in_dim as u64,
            IntegratorKind::Forward => self.forward.as_ref().map_or(0, Mlp::flops),
            IntegratorKind::Transformer => {
                let proj = self.projection.as_ref().map_or(0, |p| nn * p.flops());
                let enc = self.encoder.as_ref().map_or(0, |e| e.flops(n));
                proj + enc + nn * self.out_dim as u64
            }
        }
    }
}

/// Linear head producing `C` logits.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub head: Linear,
}

impl Classifier {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, classes: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            head: Linear::new(store, name, in_dim, classes, rng)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.head.out_dim
    }

    pub fn logits(&self, tape: &mut Tape, g: Var) -> Result<Var> {
        if tape.shape(g) != [self.head.in_dim] {
            return shape_err("classify", format!("input {:?} vs {}", tape.shape(g), self.head.in_dim));
        }
        self.head.forward(tape, g)
    }

    pub fn classify(&self, tape: &mut Tape, g: Var) -> Result<Vec<f64>> {
        let z = self.logits(tape, g)?;
        Ok(softmax(tape.value(z)))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.head.params()
    }

    pub fn flops(&self) -> u64 {
        self.head.flops() + self.head.out_dim as u64
    }
}
