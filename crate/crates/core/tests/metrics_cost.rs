use proptest::prelude::*;
use vidloc::metrics::{
    average_precision, fmt_sig6, frame_rate, mean_average_precision, summarize, top1_accuracy, CostModel, CostReport,
    Flops, VideoResult,
};
use vidloc::model::{Model, ModelConfig};
use vidloc::nn::{Linear, LstmCell};
use vidloc::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn top1_examples() {
    let s = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
    assert_eq!(top1_accuracy(&s, &[0, 1]).unwrap(), 1.0);
    assert_eq!(top1_accuracy(&[vec![0.5, 0.5]], &[0]).unwrap(), 1.0);
    assert_eq!(top1_accuracy(&[vec![0.5, 0.5]], &[1]).unwrap(), 0.0);
    let s4 = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    assert_eq!(top1_accuracy(&s4, &[0, 0, 1, 0]).unwrap(), 0.75);
    assert!(top1_accuracy(&[], &[]).is_err());
}

#[test]
fn ap_examples() {
    // scores [0.9, 0.8, 0.1] with positives at ranks 1 and 3
    let scores = vec![vec![0.1, 0.9], vec![0.2, 0.8], vec![0.9, 0.1]];
    let labels = [1, 0, 1];
    let ranked = [true, false, true];
    assert!((average_precision(&ranked).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    let perfect = mean_average_precision(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]).unwrap();
    assert_eq!(perfect, 1.0);
    let m = mean_average_precision(&scores, &labels).unwrap();
    // class 1: 5/6 as above; class 0 ranks [v2, v1, v0], positive v1 at rank 2
    assert!((m - (5.0 / 6.0 + 0.5) / 2.0).abs() < 1e-15);
}

/// AP by enumerating the ranking explicitly: sort with a stable sort on the
/// negated score, then count precision at every positive.
fn brute_force_map(scores: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    let classes = scores[0].len();
    let mut aps = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        // insertion sort, strict comparison keeps index order on ties
        for i in 1..idx.len() {
            let mut j = i;
            while j > 0 && scores[idx[j]][c] > scores[idx[j - 1]][c] {
                idx.swap(j, j - 1);
                j -= 1;
            }
        }
        let pos = labels.iter().filter(|&&l| l == c).count();
        if pos == 0 {
            continue;
        }
        let mut total = 0.0;
        for (k, &v) in idx.iter().enumerate() {
            if labels[v] == c {
                let hits_through_k = idx[..=k].iter().filter(|&&u| labels[u] == c).count();
                total += hits_through_k as f64 / (k + 1) as f64;
            }
        }
        aps.push(total / pos as f64);
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn map_matches_brute_force(
        n in 1usize..=10,
        classes in 1usize..=3,
        raw in prop::collection::vec((0u8..4, 0usize..3), 30),
    ) {
        // coarse scores so ties are common
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|v| (0..classes).map(|c| raw[(v * 3 + c) % 30].0 as f64 / 4.0).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|v| raw[v].1 % classes).collect();
        let oracle = brute_force_map(&scores, &labels);
        let got = mean_average_precision(&scores, &labels).ok();
        prop_assert_eq!(got, oracle);
    }
}

#[test]
fn frame_rate_examples() {
    assert!((frame_rate(8.52, 120.0).unwrap() - 0.071).abs() < 1e-12);
    assert_eq!(frame_rate(120.0, 120.0).unwrap(), 1.0);
    assert_eq!(frame_rate(0.0, 120.0).unwrap(), 0.0);
    assert!(frame_rate(1.0, 0.0).is_err());
}

#[test]
fn layer_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let l = Linear::new(&mut store, "l", 1024, 256, &mut rng).unwrap();
    // 262,144 multiply-adds
    assert_eq!(l.flops(), 524_288);
    for (i, o) in [(3, 7), (64, 10), (1, 1)] {
        let l = Linear::new(&mut store, &format!("l{i}{o}"), i, o, &mut rng).unwrap();
        assert_eq!(l.flops(), 2 * (i * o) as u64);
    }
    let cell = LstmCell::new(&mut store, "c", 64, 256, &mut rng).unwrap();
    assert_eq!(cell.flops(), 8 * (64 + 256) * 256 + 24 * 256);
}

#[test]
fn default_model_calibration() {
    let model = Model::new(ModelConfig::default(), 0).unwrap();
    let cost = CostModel::of(&model);
    // the declared spatial constant is 38.7 GFLOPs spread over 0.071 * 120 frames
    let derived = 38.7e9 / (0.071 * 120.0);
    assert!((cost.spatial_per_frame - derived).abs() / derived < 0.01);
    let frames = 8.52;
    let f = cost.breakdown(frames, frames);
    let total = f.spatial + f.temporal + f.policy + f.integration + f.classifier;
    assert_eq!(f.total, total);
    assert!((f.total - 38.7e9).abs() / 38.7e9 < 0.02, "{}", f.total);
    assert!(f.spatial / f.total > 0.99);

    let doubled = cost.breakdown(2.0 * frames, frames);
    assert_eq!(doubled.spatial, 2.0 * f.spatial);
}

#[test]
fn summarize_and_report_text() {
    let results = vec![
        VideoResult {
            probs: vec![0.7, 0.3],
            label: 0,
            frames: 3,
            decisions: 3,
        },
        VideoResult {
            probs: vec![0.6, 0.4],
            label: 1,
            frames: 5,
            decisions: 4,
        },
    ];
    let cost = CostModel {
        spatial_per_frame: 10.0,
        temporal_per_frame: 1.0,
        policy_per_decision: 2.0,
        integration_per_video: 7.0,
        classifier_per_video: 3.0,
    };
    let r = summarize(&results, &cost, 120.0).unwrap();
    assert_eq!(r.top1, 0.5);
    assert_eq!(r.frames_mean, 4.0);
    assert_eq!(r.frame_rate, 4.0 / 120.0);
    assert_eq!(r.flops, Flops::new(40.0, 4.0, 7.0, 7.0, 3.0));
    assert_eq!(r.flops.total, 61.0);
    let text = r.to_text();
    assert!(text.contains("flops_total=61\n"));
    assert_eq!(CostReport::from_text(&text).unwrap().flops.total, 61.0);
    assert_eq!(fmt_sig6(0.0333333333), "0.0333333");
}
