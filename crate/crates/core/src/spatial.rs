//! Per-frame spatial encoder shared by every locator, with a declared
//! per-frame compute cost and an observed-frame counter.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{Activation, Mlp};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Modeled FLOPs of one frame through a ResNet-50-class backbone.
pub const PASSTHROUGH_FLOPS_PER_FRAME: f64 = 4.54e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialKind {
    /// Frames are precomputed features; returned unchanged.
    Passthrough,
    /// Trainable two-layer MLP embedder.
    Mlp,
}

#[derive(Debug)]
pub struct SpatialEncoder {
    pub kind: SpatialKind,
    pub mlp: Option<Mlp>,
    pub in_dim: usize,
    pub out_dim: usize,
    cost_per_frame: f64,
    frames: AtomicU64,
}

impl Clone for SpatialEncoder {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            mlp: self.mlp.clone(),
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            cost_per_frame: self.cost_per_frame,
            frames: AtomicU64::new(self.frames()),
        }
    }
}

impl SpatialEncoder {
    pub fn passthrough(dim: usize, cost_per_frame: f64) -> Self {
        Self {
            kind: SpatialKind::Passthrough,
            mlp: None,
            in_dim: dim,
            out_dim: dim,
            cost_per_frame,
            frames: AtomicU64::new(0),
        }
    }

    /// `in_dim -> hidden -> out_dim` embedder; its cost is the analytic MLP count.
    pub fn mlp<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Mlp::new(store, name, &[in_dim, hidden, out_dim], Activation::Relu, rng)?;
        let cost = (2 * (in_dim * hidden + hidden * out_dim)) as f64;
        Ok(Self {
            kind: SpatialKind::Mlp,
            mlp: Some(mlp),
            in_dim,
            out_dim,
            cost_per_frame: cost,
            frames: AtomicU64::new(0),
        })
    }

    pub fn declared_cost(&self) -> f64 {
        self.cost_per_frame
    }

    /// Frames encoded since construction or the last [`reset_counter`](Self::reset_counter).
    pub fn frames(&self) -> u64 {
        self.frames.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.frames.store(0, Ordering::Relaxed);
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.mlp.as_ref().map(Mlp::params).unwrap_or_default()
    }

    /// Encodes one frame and charges one frame to the counter.
    pub fn encode_frame(&self, tape: &mut Tape, frame: &[f64]) -> Result<Var> {
        if frame.len() != self.in_dim {
            return shape_err("encode_frame", format!("frame width {} vs encoder {}", frame.len(), self.in_dim));
        }
        self.frames.fetch_add(1, Ordering::Relaxed);
        let x = tape.constant_vec(frame.to_vec());
        match &self.mlp {
            Some(m) => m.forward(tape, x),
            None => Ok(x),
        }
    }
}
