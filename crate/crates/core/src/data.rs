//! Feature-level videos: the synthetic unit-structured generator, `VIMF`
//! feature files, and seeded batching.
//!
//! A synthetic video is `K` disjoint spans ("units") covering `[0, T)`.
//! Each unit carries a motif id; the label is `(sum of motif ids) mod C`,
//! so no single unit determines it. Salient frames show their unit's motif
//! direction at full strength. Every other frame of a span repeats the
//! span's opening frame (a faint motif trace over a per-span scene vector)
//! plus Gaussian noise, and a fraction of them are replaced by pure noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One semantic unit of a synthetic video.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSpec {
    pub start: usize,
    pub end: usize,
    pub motif_id: usize,
    pub salient_frames: Vec<usize>,
}

impl UnitSpec {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    /// `[T, d]` frame features.
    pub features: Tensor,
    pub label: usize,
    pub num_classes: usize,
    pub units: Option<Vec<UnitSpec>>,
}

impl VideoSample {
    pub fn new(features: Tensor, label: usize, num_classes: usize) -> Result<Self> {
        if features.rank() != 2 || features.rows() == 0 || features.cols() == 0 {
            return Err(Error::MalformedHeader(format!(
                "features must be [T>=1, d>=1], got {:?}",
                features.shape()
            )));
        }
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            features,
            label,
            num_classes,
            units: None,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.features.row(t)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
    pub num_classes: usize,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn new(train: Vec<VideoSample>, test: Vec<VideoSample>, num_classes: usize, seed: u64) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty("dataset split"));
        }
        let mut seen = vec![false; num_classes];
        for s in train.iter().chain(&test) {
            if s.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: num_classes,
                });
            }
        }
        train.iter().for_each(|s| seen[s.label] = true);
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("class {c} missing from train split")));
        }
        let dims = |v: &[VideoSample]| v.iter().map(|s| s.dim()).collect::<Vec<_>>();
        let all = [dims(&train), dims(&test)].concat();
        if all.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidArgument("feature widths differ across samples".into()));
        }
        Ok(Self {
            train,
            test,
            num_classes,
            seed,
        })
    }

    pub fn frames(&self) -> usize {
        self.train[0].frames()
    }

    pub fn dim(&self) -> usize {
        self.train[0].dim()
    }
}

/// Synthetic generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub frames: usize,
    pub dim: usize,
    pub classes: usize,
    pub units: usize,
    pub salient_per_unit: usize,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Number of distinct motif ids per unit.
    pub motif_vocab: usize,
    /// Norm of the motif direction in salient frames.
    pub salient_strength: f64,
    /// Norm of the motif trace in a span's opening frame.
    pub context_strength: f64,
    /// Norm of the per-span scene vector in the opening frame.
    pub scene_strength: f64,
    /// Fraction of non-salient frames replaced by pure noise.
    pub distractor_frac: f64,
    /// Span boundaries move by up to this fraction of `T / K`.
    pub span_jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            frames: 120,
            dim: 64,
            classes: 10,
            units: 3,
            salient_per_unit: 2,
            noise_std: 0.3,
            n_train: 2000,
            n_test: 500,
            seed: 0,
            motif_vocab: 5,
            salient_strength: 1.0,
            context_strength: 0.8,
            scene_strength: 0.3,
            distractor_frac: 0.3,
            span_jitter: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.units == 0 || self.units * 2 > self.frames {
            return bad(format!("{} units do not fit in {} frames", self.units, self.frames));
        }
        if self.salient_per_unit == 0 {
            return bad("salient_per_unit must be >= 1".into());
        }
        if self.dim < self.classes {
            return bad(format!("dim {} < classes {}", self.dim, self.classes));
        }
        if self.classes < 2 || self.motif_vocab < 1 {
            return bad("need >= 2 classes and >= 1 motif".into());
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return bad(format!("noise_std {}", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.distractor_frac) || !(0.0..0.5).contains(&self.span_jitter) {
            return bad("distractor_frac must be in [0,1] and span_jitter in [0,0.5)".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("both splits need samples".into());
        }
        Ok(())
    }
}

/// Fixed generator latents shared by every video of a dataset.
#[derive(Debug, Clone)]
pub struct MotifBank {
    pub directions: Vec<Vec<f64>>,
    pub classes: usize,
}

impl MotifBank {
    pub fn new(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let directions = (0..cfg.motif_vocab)
            .map(|_| {
                let v: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(rng)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        Self {
            directions,
            classes: cfg.classes,
        }
    }

    /// Motif whose direction best matches `frame`.
    pub fn decode(&self, frame: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (m, d) in self.directions.iter().enumerate() {
            let s: f64 = d.iter().zip(frame).map(|(a, b)| a * b).sum();
            if s > best.1 {
                best = (m, s);
            }
        }
        best.0
    }

    pub fn label_of(&self, motifs: &[usize]) -> usize {
        motifs.iter().sum::<usize>() % self.classes
    }
}

fn motif_tuples(vocab: usize, units: usize, classes: usize) -> Vec<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); classes];
    let total = vocab.pow(units as u32);
    for code in 0..total {
        let mut c = code;
        let tuple: Vec<usize> = (0..units)
            .map(|_| {
                let m = c % vocab;
                c /= vocab;
                m
            })
            .collect();
        by_class[tuple.iter().sum::<usize>() % classes].push(tuple);
    }
    by_class
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

fn spans(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let (t, k) = (cfg.frames, cfg.units);
    let width = t as f64 / k as f64;
    let mut bounds = vec![0usize];
    for i in 1..k {
        let jitter = rng.random_range(-cfg.span_jitter..=cfg.span_jitter) * width;
        let nominal = (i as f64 * width + jitter).round() as usize;
        let lo = bounds[i - 1] + 2;
        let hi = t - 2 * (k - i);
        bounds.push(nominal.clamp(lo, hi));
    }
    bounds.push(t);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

fn make_video(
    cfg: &SyntheticConfig,
    bank: &MotifBank,
    label: usize,
    tuples: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<VideoSample> {
    let d = cfg.dim;
    let motifs = tuples[rng.random_range(0..tuples.len())].clone();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let distractor = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
    let scene_std = cfg.scene_strength / (d as f64).sqrt();
    let mut values = vec![0.0; cfg.frames * d];
    let mut units = Vec::with_capacity(cfg.units);

    for (k, (start, end)) in spans(cfg, rng).into_iter().enumerate() {
        let motif = motifs[k];
        let dir = &bank.directions[motif];
        let len = end - start;
        let mut offsets: Vec<usize> = (0..len).collect();
        offsets.shuffle(rng);
        let mut salient: Vec<usize> = offsets[..cfg.salient_per_unit.min(len)]
            .iter()
            .map(|o| start + o)
            .collect();
        salient.sort_unstable();

        let opening: Vec<f64> = (0..d)
            .map(|j| cfg.context_strength * dir[j] + scene_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for f in start..end {
            let row = &mut values[f * d..(f + 1) * d];
            if salient.contains(&f) {
                for j in 0..d {
                    row[j] = cfg.salient_strength * dir[j] + noise.sample(rng);
                }
            } else if f != start && rng.random_bool(cfg.distractor_frac) {
                for x in row.iter_mut() {
                    *x = distractor.sample(rng);
                }
            } else {
                for j in 0..d {
                    row[j] = opening[j] + noise.sample(rng);
                }
            }
        }
        units.push(UnitSpec {
            start,
            end,
            motif_id: motif,
            salient_frames: salient,
        });
    }
    debug_assert_eq!(bank.label_of(&motifs), label);
    let values = values.into_iter().map(round_f32).collect();
    let mut sample = VideoSample::new(Tensor::matrix(cfg.frames, d, values)?, label, cfg.classes)?;
    sample.units = Some(units);
    Ok(sample)
}

fn balanced_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

/// Generates a synthetic dataset together with the motif bank that produced it.
pub fn generate_synthetic_with_bank(cfg: &SyntheticConfig) -> Result<(DatasetSplit, MotifBank)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bank = MotifBank::new(cfg, &mut rng);
    let tuples = motif_tuples(cfg.motif_vocab, cfg.units, cfg.classes);
    if let Some(c) = tuples.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!(
            "no motif combination of {} ids over {} units yields class {c}",
            cfg.motif_vocab, cfg.units
        )));
    }
    let mut build = |n: usize| -> Result<Vec<VideoSample>> {
        balanced_labels(n, cfg.classes, &mut rng)
            .into_iter()
            .map(|label| make_video(cfg, &bank, label, &tuples[label], &mut rng))
            .collect()
    };
    let train = build(cfg.n_train)?;
    let test = build(cfg.n_test)?;
    Ok((DatasetSplit::new(train, test, cfg.classes, cfg.seed)?, bank))
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DatasetSplit> {
    generate_synthetic_with_bank(cfg).map(|(d, _)| d)
}

// ---- VIMF feature files -------------------------------------------------

pub const FEATURE_MAGIC: [u8; 4] = *b"VIMF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_feature_file(sample: &VideoSample) -> Vec<u8> {
    let (t, d) = (sample.frames(), sample.dim());
    let mut buf = Vec::with_capacity(HEADER_LEN + t * d * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    for v in [FEATURE_VERSION, t as u32, d as u32, sample.label as u32, sample.num_classes as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &x in sample.features.values() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    buf
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<VideoSample> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("missing magic".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("header is {} of {HEADER_LEN} bytes", bytes.len())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FEATURE_VERSION {
        return Err(Error::Version(version));
    }
    let (t, d, label, classes) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    if t == 0 || d == 0 {
        return Err(Error::MalformedHeader(format!("T={t}, d={d}")));
    }
    if classes == 0 {
        return Err(Error::MalformedHeader("num_classes=0".into()));
    }
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let need = HEADER_LEN + t * d * 4;
    if bytes.len() < need {
        return Err(Error::Truncated(format!("payload has {} of {need} bytes", bytes.len())));
    }
    if bytes.len() > need {
        return Err(Error::MalformedHeader(format!("{} trailing bytes", bytes.len() - need)));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    VideoSample::new(Tensor::matrix(t, d, values)?, label, classes)
}

pub fn write_feature_file(path: &Path, sample: &VideoSample) -> Result<()> {
    fs::write(path, encode_feature_file(sample))?;
    Ok(())
}

pub fn load_feature_file(path: &Path) -> Result<VideoSample> {
    decode_feature_file(&fs::read(path)?)
}

fn vimf_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vimf"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads `<root>/train/*.vimf` and `<root>/test/*.vimf` in file-name order.
pub fn load_feature_dir(root: &Path) -> Result<DatasetSplit> {
    let load = |sub: &str| -> Result<Vec<VideoSample>> {
        vimf_files(&root.join(sub))?.iter().map(|p| load_feature_file(p)).collect()
    };
    let train = load("train")?;
    let test = load("test")?;
    let classes = train.first().map(|s| s.num_classes).ok_or(Error::Empty("train split"))?;
    if train.iter().chain(&test).any(|s| s.num_classes != classes) {
        return Err(Error::InvalidArgument("num_classes differs across feature files".into()));
    }
    DatasetSplit::new(train, test, classes, 0)
}

/// Writes a split as `<root>/{train,test}/NNNNNN.vimf`.
pub fn write_feature_dir(root: &Path, split: &DatasetSplit) -> Result<()> {
    for (sub, samples) in [("train", &split.train), ("test", &split.test)] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir)?;
        for (i, s) in samples.iter().enumerate() {
            write_feature_file(&dir.join(format!("{i:06}.vimf")), s)?;
        }
    }
    Ok(())
}

// ---- batching -------------------------------------------------------------

/// Visit order for one epoch; a seeded shuffle mixed with the epoch counter.
pub fn epoch_order(n: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mixed = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
    }
    order
}

/// Index batches covering every sample exactly once; the last may be short.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::Empty("split"));
    }
    Ok(epoch_order(n, seed, epoch, shuffle)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_train: 40,
            n_test: 10,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn rejects_infeasible_geometry() {
        let cfg = SyntheticConfig {
            frames: 5,
            units: 3,
            ..small()
        };
        assert!(generate_synthetic(&cfg).is_err());
        let cfg = SyntheticConfig {
            motif_vocab: 2,
            units: 2,
            ..small()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn spans_tile_the_video() {
        let data = generate_synthetic(&small()).unwrap();
        for s in data.train.iter().chain(&data.test) {
            let units = s.units.as_ref().unwrap();
            assert_eq!(units[0].start, 0);
            assert_eq!(units.last().unwrap().end, 120);
            for w in units.windows(2) {
                assert_eq!(w[0].end, w[1].start);
            }
            for u in units {
                assert!(u.len() >= 2);
                assert!(!u.salient_frames.is_empty());
                assert!(u.salient_frames.iter().all(|&f| u.contains(f)));
                assert!(u.salient_frames.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn batches_partition_samples() {
        let b = batch_iter(10, 3, 1, 0, false).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        assert_eq!(b.concat(), (0..10).collect::<Vec<_>>());
        assert!(batch_iter(0, 3, 1, 0, true).is_err());
        assert!(batch_iter(3, 0, 1, 0, true).is_err());
    }
}
