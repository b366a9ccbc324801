use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, SeedableRng};

use super::*;
use crate::rng::Rng;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_rich: 30,
        n_poor: 20,
        n_paired: 10,
        seq_len: 12,
        ..SyntheticSpec::benchmark(seed)
    }
}

fn dataset_from(channels: Vec<Vec<f64>>, labels: &[usize], n_classes: usize) -> Dataset {
    // channels[c][i] is the constant level of channel c in sample i
    let n_ch = channels.len();
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut v = Vec::new();
            for ch in &channels {
                v.extend_from_slice(&[ch[i]; 4]);
            }
            TimeSeriesSample::new(i as u64, y, n_ch, 4, v).unwrap()
        })
        .collect();
    Dataset::new("t", DatasetRole::Poor, n_classes, (0..n_ch).collect(), 4, 0, samples).unwrap()
}

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic(&small_spec(7)).unwrap();
    let b = generate_synthetic(&small_spec(7)).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(&small_spec(8)).unwrap();
    assert_ne!(a.rich.samples[0].values, c.rich.samples[0].values);
}

#[test]
fn generated_views_are_disjoint_and_share_labels() {
    let d = generate_synthetic(&small_spec(1)).unwrap();
    assert_eq!(d.rich.len(), 30);
    assert_eq!(d.poor.len(), 20);
    assert_eq!(d.paired.len(), 10);
    assert_eq!(d.rich.n_channels, 8);
    assert_eq!(d.poor.n_channels, 2);
    for (r, p) in d.paired.rich.samples.iter().zip(&d.paired.poor.samples) {
        assert_eq!(r.id, p.id);
        assert_eq!(r.label, p.label);
    }
    assert!(d
        .paired
        .poor
        .channels
        .iter()
        .all(|c| !d.paired.rich.channels.contains(c)));
}

#[test]
fn mirrored_zero_noise_views_are_identical() {
    let mut spec = small_spec(3);
    spec.poor_channels = 8;
    spec.poor_noise = vec![0.0; 8];
    spec.poor_informativeness = vec![1.0; 8];
    spec.rich_noise = vec![0.0; 8];
    spec.mirror_views = true;
    let d = generate_synthetic(&spec).unwrap();
    for (r, p) in d.paired.rich.samples.iter().zip(&d.paired.poor.samples) {
        assert_eq!(r.values, p.values);
    }
}

#[test]
fn label_noise_only_touches_labels() {
    let clean = SyntheticSpec {
        n_rich: 2000,
        ..small_spec(5)
    };
    let noisy = SyntheticSpec {
        label_noise: 0.4,
        ..clean.clone()
    };
    let a = generate_synthetic(&clean).unwrap();
    let b = generate_synthetic(&noisy).unwrap();
    let mut flipped = 0;
    for (x, y) in a.rich.samples.iter().zip(&b.rich.samples) {
        assert_eq!(x.values, y.values);
        flipped += usize::from(x.label != y.label);
    }
    // a replacement keeps the label with probability 1/c
    let expected = 0.4 * 0.75;
    let rate = flipped as f64 / 2000.0;
    assert!((rate - expected).abs() < 0.04, "{rate}");
    for (r, p) in b.paired.rich.samples.iter().zip(&b.paired.poor.samples) {
        assert_eq!(r.label, p.label);
    }
}

#[test]
fn spec_validation() {
    let mut spec = small_spec(0);
    spec.poor_channels = 8;
    spec.poor_noise = vec![1.0; 8];
    spec.poor_informativeness = vec![1.0; 8];
    assert!(generate_synthetic(&spec).is_err());
    let mut spec = small_spec(0);
    spec.rich_noise[0] = -1.0;
    assert!(generate_synthetic(&spec).is_err());
    let mut spec = small_spec(0);
    spec.label_noise = 1.5;
    assert!(generate_synthetic(&spec).is_err());
}

#[test]
fn paired_dataset_rejects_overlapping_channels() {
    let d = generate_synthetic(&small_spec(1)).unwrap();
    let mut poor = d.paired.poor.clone();
    poor.channels = vec![0, 9];
    assert!(PairedDataset::new(d.paired.rich.clone(), poor).is_err());
    let mut poor = d.paired.poor.clone();
    poor.samples[0].label = (poor.samples[0].label + 1) % 4;
    assert!(PairedDataset::new(d.paired.rich.clone(), poor).is_err());
}

#[test]
fn split_sizes_follow_floor_then_remainder() {
    let labels = [0usize; 10];
    let ds = dataset_from(vec![(0..10).map(|i| i as f64).collect()], &labels, 1);
    let (a, b, c) = split(&ds, [0.8, 0.1, 0.1], 4).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    let mut ids: Vec<u64> = a
        .samples
        .iter()
        .chain(&b.samples)
        .chain(&c.samples)
        .map(|s| s.id)
        .collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..10).collect::<Vec<u64>>());
    let (a2, b2, c2) = split(&ds, [0.8, 0.1, 0.1], 4).unwrap();
    assert_eq!((a, b, c), (a2, b2, c2));
    let (a, b, c) = split(&ds, [0.34, 0.33, 0.33], 1).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (4, 3, 3));
}

#[test]
fn split_rejects_bad_fractions() {
    let ds = dataset_from(vec![vec![0.0; 3]], &[0, 0, 0], 1);
    assert!(matches!(split(&ds, [0.5, 0.2, 0.2], 0), Err(Error::Domain(_))));
    assert!(matches!(split(&ds, [1.2, -0.1, -0.1], 0), Err(Error::Domain(_))));
}

#[test]
fn paired_split_moves_views_together() {
    let d = generate_synthetic(&small_spec(2)).unwrap();
    let (a, b, c) = split_paired(&d.paired, [0.6, 0.2, 0.2], 9).unwrap();
    for part in [&a, &b, &c] {
        part.validate().unwrap();
    }
    assert_eq!(a.len() + b.len() + c.len(), 10);
}

#[test]
fn subsample_ratios() {
    let mut spec = small_spec(5);
    spec.n_paired = 100;
    let d = generate_synthetic(&spec).unwrap();
    assert_eq!(subsample_pairs(&d.paired, 1.0, 3).unwrap(), d.paired);
    assert_eq!(subsample_pairs(&d.paired, 0.5, 3).unwrap().len(), 50);
    let small = subsample_pairs(&d.paired, 0.2, 11).unwrap().ids();
    let large = subsample_pairs(&d.paired, 0.4, 11).unwrap().ids();
    assert_eq!(small.len(), 20);
    assert!(small.iter().all(|id| large.contains(id)));
    assert!(subsample_pairs(&d.paired, 0.0, 3).is_err());
    assert!(subsample_pairs(&d.paired, 1.5, 3).is_err());
}

#[test]
fn channel_selection() {
    let d = generate_synthetic(&small_spec(4)).unwrap();
    let all: Vec<usize> = (0..8).collect();
    assert_eq!(select_channels(&d.rich, &all).unwrap(), d.rich);
    let one = select_channels(&d.rich, &[5]).unwrap();
    assert_eq!(one.n_channels, 1);
    assert_eq!(one.channels, vec![5]);
    assert_eq!(one.samples[0].values, d.rich.samples[0].channel(5));
    let first = select_channels(&d.rich, &[6, 1, 3]).unwrap();
    let twice = select_channels(&first, &[2, 0]).unwrap();
    let direct = select_channels(&d.rich, &[3, 6]).unwrap();
    assert_eq!(twice, direct);
    assert!(select_channels(&d.rich, &[8]).is_err());
    assert!(select_channels(&d.rich, &[1, 1]).is_err());
}

/// Independent histogram entropy: bins computed with explicit edges.
fn oracle_entropy(values: &[f64], labels: &[usize], n_classes: usize) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let edges: Vec<f64> = (0..=N_BINS)
        .map(|k| lo + (hi - lo) * k as f64 / N_BINS as f64)
        .collect();
    let bin_of = |v: f64| {
        if hi == lo {
            return 0;
        }
        (0..N_BINS).find(|&k| v < edges[k + 1]).unwrap_or(N_BINS - 1)
    };
    let mut total = 0.0;
    let mut classes = 0;
    for y in 0..n_classes {
        let vs: Vec<f64> = values
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == y)
            .map(|(v, _)| *v)
            .collect();
        if vs.is_empty() {
            continue;
        }
        classes += 1;
        let mut h = 0.0;
        for k in 0..N_BINS {
            let c = vs.iter().filter(|&&v| bin_of(v) == k).count();
            if c > 0 {
                let p = c as f64 / vs.len() as f64;
                h -= p * p.log2();
            }
        }
        total += h;
    }
    total / classes as f64
}

fn oracle_mi(values: &[f64], labels: &[usize], n_classes: usize) -> f64 {
    let bins = discretize(values, N_BINS);
    let n = values.len() as f64;
    let mut mi = 0.0;
    for b in 0..N_BINS {
        for y in 0..n_classes {
            let nby = bins.iter().zip(labels).filter(|(&bb, &l)| bb == b && l == y).count() as f64;
            if nby == 0.0 {
                continue;
            }
            let nb = bins.iter().filter(|&&bb| bb == b).count() as f64;
            let ny = labels.iter().filter(|&&l| l == y).count() as f64;
            mi += nby / n * ((nby * n) / (nb * ny)).log2();
        }
    }
    mi
}

#[test]
fn entropy_ranks_uniform_noise_above_constant() {
    let mut rng = Rng::seed_from_u64(1);
    let n = 400;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let uniform: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let constant = vec![2.5; n];
    let ds = dataset_from(vec![constant, uniform.clone()], &labels, 2);
    let ranking = rank_by_entropy(&ds).unwrap();
    assert_eq!(ranking[0].index, 1);
    assert_eq!(ranking[1].index, 0);
    assert_eq!(ranking[1].score, 0.0);
    let expected = oracle_entropy(&uniform, &labels, 2);
    assert!((ranking[0].score - expected).abs() < 1e-12);
}

#[test]
fn mutual_information_of_label_copy_is_label_entropy() {
    let n = 300;
    let labels: Vec<usize> = (0..n).map(|i| (i * 7) % 3).collect();
    let copy: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let mut rng = Rng::seed_from_u64(2);
    let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let ds = dataset_from(vec![noise.clone(), copy], &labels, 3);
    let ranking = rank_by_mutual_info(&ds).unwrap();
    assert_eq!(ranking[0].index, 1);
    let h_label = {
        let mut h = 0.0;
        for y in 0..3 {
            let p = labels.iter().filter(|&&l| l == y).count() as f64 / n as f64;
            h -= p * p.log2();
        }
        h
    };
    assert!((ranking[0].score - h_label).abs() < 1e-12);
    assert!((ranking[1].score - oracle_mi(&noise, &labels, 3)).abs() < 1e-12);
}

#[test]
fn mutual_information_of_noise_is_small() {
    let n = 2000;
    let mut rng = Rng::seed_from_u64(3);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let ds = dataset_from(vec![noise], &labels, 2);
    let mi = rank_by_mutual_info(&ds).unwrap()[0].score;
    assert!(mi < 0.05, "{mi}");
}

#[test]
fn mutual_information_needs_two_classes() {
    let ds = dataset_from(vec![vec![1.0, 2.0, 3.0]], &[1, 1, 1], 2);
    assert!(rank_by_mutual_info(&ds).is_err());
    let empty = ds.with_samples(vec![]);
    assert!(matches!(rank_by_entropy(&empty), Err(Error::EmptyDataset(_))));
}

#[test]
fn rankings_ignore_sample_order() {
    let d = generate_synthetic(&small_spec(6)).unwrap();
    let mut shuffled = d.rich.clone();
    shuffled.samples.reverse();
    shuffled.samples.swap(0, 7);
    assert_eq!(rank_by_entropy(&d.rich).unwrap(), rank_by_entropy(&shuffled).unwrap());
    assert_eq!(
        rank_by_mutual_info(&d.rich).unwrap(),
        rank_by_mutual_info(&shuffled).unwrap()
    );
}
