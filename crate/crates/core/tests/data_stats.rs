//! Statistical checks of the partitioners and the IDX codec.

use fedpoison::data::{parse_idx, partition_noniid, partition_uniform, Dataset, IdxTensor, PartitionPlan};
use fedpoison::derive_stream;
use proptest::prelude::*;

const CLASSES: usize = 10;
const CLIENTS: usize = 100;

fn label_only_dataset(n: usize) -> Dataset {
    let labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    Dataset::new(vec![0.0; n], 1, labels, CLASSES).unwrap()
}

/// `counts[group][label]` with ten contiguous groups of ten clients.
fn group_label_counts(data: &Dataset, plan: &PartitionPlan) -> Vec<Vec<usize>> {
    let per_group = CLIENTS / CLASSES;
    let mut counts = vec![vec![0usize; CLASSES]; CLASSES];
    for (client, shard) in plan.shards.iter().enumerate() {
        for &i in shard {
            counts[client / per_group][data.labels()[i]] += 1;
        }
    }
    counts
}

/// Sum of squared z-scores of the cells against `expected` with per-cell
/// success probability `p` out of `trials`.
fn chi_square(counts: &[Vec<usize>], trials: f64, p: f64) -> f64 {
    let mean = trials * p;
    let var = trials * p * (1.0 - p);
    counts.iter().flatten().map(|&c| (c as f64 - mean).powi(2) / var).sum()
}

#[test]
fn noniid_home_group_share_converges_to_q() {
    let data = label_only_dataset(100_000);
    let per_label = (data.len() / CLASSES) as f64;
    for q in [0.1, 0.5, 0.8] {
        let plan = partition_noniid(&data, CLIENTS, q, &mut derive_stream(5, -1, 1)).unwrap();
        assert!(plan.is_partition_of(data.len()));
        let counts = group_label_counts(&data, &plan);
        let other = (1.0 - q) / (CLASSES - 1) as f64;
        for label in 0..CLASSES {
            for group in 0..CLASSES {
                let share = counts[group][label] as f64 / per_label;
                if group == label {
                    assert!((share - q).abs() < 0.02, "q={q} label {label}: home share {share}");
                } else {
                    assert!((share - other).abs() < 0.01, "q={q} label {label} group {group}: {share}");
                }
            }
        }
    }
}

#[test]
fn noniid_with_q_one_over_c_matches_uniform_histograms() {
    let data = label_only_dataset(50_000);
    let per_label = (data.len() / CLASSES) as f64;
    let p = 1.0 / CLASSES as f64;
    let cells = (CLASSES * CLASSES) as f64;
    let band = 3.0 * (2.0 * cells).sqrt();

    let skewed = partition_noniid(&data, CLIENTS, p, &mut derive_stream(8, -1, 1)).unwrap();
    let uniform = partition_uniform(&data, CLIENTS, &mut derive_stream(8, -1, 2)).unwrap();
    let stat_skewed = chi_square(&group_label_counts(&data, &skewed), per_label, p);
    assert!((stat_skewed - cells).abs() < band, "q=1/C chi-square {stat_skewed}");

    // The uniform split is a permutation, so it can only be tighter than the
    // multinomial; compare the two directly as well.
    let a = group_label_counts(&data, &skewed);
    let b = group_label_counts(&data, &uniform);
    let sigma = (per_label * p * (1.0 - p)).sqrt();
    let diff: f64 = a.iter().flatten().zip(b.iter().flatten()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    // Each cell difference has variance at most 2σ².
    let expected = cells * 2.0 * sigma * sigma;
    assert!(diff < expected + 3.0 * (2.0 * cells).sqrt() * 2.0 * sigma * sigma, "{diff} vs {expected}");
}

#[test]
fn noniid_with_full_skew_keeps_labels_home() {
    let data = label_only_dataset(5_000);
    let plan = partition_noniid(&data, CLIENTS, 1.0, &mut derive_stream(1, -1, 1)).unwrap();
    let counts = group_label_counts(&data, &plan);
    for (group, row) in counts.iter().enumerate() {
        for (label, &c) in row.iter().enumerate() {
            assert_eq!(c > 0, group == label, "group {group} label {label}");
        }
    }
}

proptest! {
    #[test]
    fn idx_round_trip(dims in prop::collection::vec(0usize..6, 0..4), seed in any::<u64>()) {
        let len: usize = dims.iter().product();
        let mut s = derive_stream(seed, 0, 0);
        let data: Vec<u8> = (0..len).map(|_| (s.next_unit() * 256.0) as u8).collect();
        let tensor = IdxTensor { dims, data };
        prop_assert_eq!(parse_idx(&tensor.to_bytes()).unwrap(), tensor);
    }

    #[test]
    fn idx_rejects_any_truncation(dims in prop::collection::vec(1usize..4, 1..3), cut in 1usize..8) {
        let len: usize = dims.iter().product();
        let tensor = IdxTensor { dims, data: vec![7; len] };
        let bytes = tensor.to_bytes();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(parse_idx(&bytes[..keep]).is_err());
    }
}
