//! Top-1 accuracy, one-vs-rest mean average precision, frame rate and the
//! analytic FLOPs ledger.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Model;

/// Fraction of rows whose argmax equals the label; ties go to the lowest index.
pub fn top1_accuracy(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} predictions, {} labels", scores.len(), labels.len())));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &y)| crate::locator::argmax(s) == y)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Average precision of one ranking, given which ranked items are positive.
pub fn average_precision(ranked_positive: &[bool]) -> Option<f64> {
    let positives = ranked_positive.iter().filter(|&&p| p).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &p) in ranked_positive.iter().enumerate() {
        if p {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Unweighted mean over classes with at least one positive of the AP
/// obtained by ranking videos by that class's score, descending, ties by
/// video index.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} score rows, {} labels", scores.len(), labels.len())));
    }
    let classes = scores[0].len();
    if scores.iter().any(|s| s.len() != classes) {
        return Err(Error::InvalidArgument("score rows differ in width".into()));
    }
    let mut aps = Vec::new();
    for c in 0..classes {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b][c].total_cmp(&scores[a][c]).then(a.cmp(&b)));
        let ranked: Vec<bool> = order.iter().map(|&i| labels[i] == c).collect();
        if let Some(ap) = average_precision(&ranked) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        return Err(Error::InvalidArgument("no class has a positive".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

pub const DEFAULT_FRAME_BASIS: f64 = 120.0;

pub fn frame_rate(frames_mean: f64, basis: f64) -> Result<f64> {
    if !(basis > 0.0) {
        return Err(Error::InvalidArgument(format!("frame basis {basis}")));
    }
    Ok(frames_mean / basis)
}

/// Per-unit costs of a model: per observed frame, per policy decision,
/// and per video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub spatial_per_frame: f64,
    pub temporal_per_frame: f64,
    pub policy_per_decision: f64,
    pub integration_per_video: f64,
    pub classifier_per_video: f64,
}

impl CostModel {
    pub fn of(model: &Model) -> Self {
        let policy = model.policies.first().map_or(0, |p| p.flops()) as f64 + crate::locator::NUM_ACTIONS as f64;
        Self {
            spatial_per_frame: model.spatial.declared_cost(),
            temporal_per_frame: model.temporal.flops_per_step() as f64,
            policy_per_decision: policy,
            integration_per_video: model.integrator.flops(model.config.locators) as f64,
            classifier_per_video: model.classifier.flops() as f64,
        }
    }

    pub fn breakdown(&self, frames: f64, decisions: f64) -> Flops {
        Flops::new(
            self.spatial_per_frame * frames,
            self.temporal_per_frame * frames,
            self.policy_per_decision * decisions,
            self.integration_per_video,
            self.classifier_per_video,
        )
    }
}

/// FLOPs per video by component. `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flops {
    pub total: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub policy: f64,
    pub integration: f64,
    pub classifier: f64,
}

impl Flops {
    pub fn new(spatial: f64, temporal: f64, policy: f64, integration: f64, classifier: f64) -> Self {
        Self {
            total: spatial + temporal + policy + integration + classifier,
            spatial,
            temporal,
            policy,
            integration,
            classifier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub top1: f64,
    pub map: f64,
    pub frame_rate: f64,
    pub frames_mean: f64,
    pub flops: Flops,
}

/// Formats like C's `%.6g`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    };
    let (mantissa, tail) = match s.find('e') {
        Some(i) => s.split_at(i),
        None => (s.as_str(), ""),
    };
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}{tail}")
}

pub const REPORT_KEYS: [&str; 10] = [
    "top1",
    "mAP",
    "frame_rate",
    "frames_mean",
    "flops_total",
    "flops_spatial",
    "flops_temporal",
    "flops_policy",
    "flops_integration",
    "flops_classifier",
];

impl CostReport {
    fn values(&self) -> [f64; 10] {
        let f = &self.flops;
        [
            self.top1,
            self.map,
            self.frame_rate,
            self.frames_mean,
            f.total,
            f.spatial,
            f.temporal,
            f.policy,
            f.integration,
            f.classifier,
        ]
    }

    pub fn gflops(&self) -> f64 {
        self.flops.total / 1e9
    }

    /// Fixed-key `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# FLOPs are modeled per video; spatial cost is a declared per-frame constant\n");
        for (k, v) in REPORT_KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={}", fmt_sig6(v));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vals = [f64::NAN; 10];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("report line {line:?}")))?;
            let i = REPORT_KEYS
                .iter()
                .position(|&key| key == k.trim())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown report key {k}")))?;
            vals[i] = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("report value {v:?}")))?;
        }
        if let Some(i) = vals.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidArgument(format!("report is missing {}", REPORT_KEYS[i])));
        }
        Ok(Self {
            top1: vals[0],
            map: vals[1],
            frame_rate: vals[2],
            frames_mean: vals[3],
            flops: Flops {
                total: vals[4],
                spatial: vals[5],
                temporal: vals[6],
                policy: vals[7],
                integration: vals[8],
                classifier: vals[9],
            },
        })
    }
}

/// Per-video outcome collected during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoResult {
    pub probs: Vec<f64>,
    pub label: usize,
    pub frames: usize,
    pub decisions: usize,
}

pub fn summarize(results: &[VideoResult], cost: &CostModel, basis: f64) -> Result<CostReport> {
    if results.is_empty() {
        return Err(Error::Empty("evaluation results"));
    }
    let n = results.len() as f64;
    let probs: Vec<Vec<f64>> = results.iter().map(|r| r.probs.clone()).collect();
    let labels: Vec<usize> = results.iter().map(|r| r.label).collect();
    let frames_mean = results.iter().map(|r| r.frames as f64).sum::<f64>() / n;
    let decisions_mean = results.iter().map(|r| r.decisions as f64).sum::<f64>() / n;
    Ok(CostReport {
        top1: top1_accuracy(&probs, &labels)?,
        map: mean_average_precision(&probs, &labels)?,
        frame_rate: frame_rate(frames_mean, basis)?,
        frames_mean,
        flops: cost.breakdown(frames_mean, decisions_mean),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.071), "0.071");
        assert_eq!(fmt_sig6(38.68e9), "3.868e10");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(0.123456789), "0.123457");
        assert_eq!(fmt_sig6(123456.7), "123457");
        assert_eq!(fmt_sig6(0.0), "0");
    }

    #[test]
    fn report_round_trip() {
        let r = CostReport {
            top1: 0.75,
            map: 0.5,
            frame_rate: 0.071,
            frames_mean: 8.52,
            flops: Flops::new(3.8e10, 1e6, 2e5, 3e5, 4e3),
        };
        let back = CostReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back.top1, 0.75);
        assert_eq!(back.frames_mean, 8.52);
        assert!(CostReport::from_text("top1=1\n").is_err());
    }
}
