use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, SeedableRng};

use super::*;
use crate::data::{generate_synthetic, DatasetRole};
use crate::model::{ConvLayer, ExtractorConfig, ScorerMode};
use crate::rng::Rng;

fn tiny_arch(c: usize, t: usize) -> Architecture {
    Architecture {
        n_channels: c,
        seq_len: t,
        n_classes: 2,
        extractor: ExtractorConfig {
            n_segments: 2,
            conv_layers: vec![ConvLayer {
                filters: 2,
                kernel: 2,
                stride: 1,
            }],
            rnn_hidden: 2,
        },
        scorer: ScorerMode::RawLinear,
        temperature: 1.0,
    }
}

fn one_sample_set(s: &TimeSeriesSample) -> Dataset {
    Dataset::new(
        "h",
        DatasetRole::Poor,
        2,
        (0..s.n_channels).collect(),
        s.seq_len,
        0,
        vec![s.clone()],
    )
    .unwrap()
}

fn random_simplex(rng: &mut Rng, c: usize, sharp: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..c).map(|_| libm::exp(sharp * rng.random::<f64>())).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn required_pairs_oracles() {
    // (c+1)²/(2ε²) = 81/0.02 = 4050
    assert_eq!(required_pairs(8, 0.1, 0.05).unwrap(), 14940);
    assert_eq!(
        required_pairs(2, 0.05, 0.05).unwrap(),
        libm::ceil(1800.0 * libm::log(40.0)) as u64
    );
}

#[test]
fn required_pairs_domain() {
    assert!(matches!(required_pairs(1, 0.1, 0.05), Err(Error::Domain(_))));
    for (e, d) in [
        (0.0, 0.05),
        (1.0, 0.05),
        (0.1, 0.0),
        (0.1, 1.0),
        (-0.1, 0.5),
        (f64::NAN, 0.5),
    ] {
        assert!(matches!(required_pairs(3, e, d), Err(Error::Domain(_))), "{e} {d}");
    }
}

#[test]
fn required_pairs_monotone() {
    let cs = [2, 3, 5, 8, 13];
    let es = [0.05, 0.1, 0.2, 0.3, 0.5];
    let ds = [0.01, 0.05, 0.1, 0.2, 0.5];
    for (i, &c) in cs.iter().enumerate() {
        for (j, &e) in es.iter().enumerate() {
            for (k, &d) in ds.iter().enumerate() {
                let v = required_pairs(c, e, d).unwrap();
                if i + 1 < cs.len() {
                    assert!(required_pairs(cs[i + 1], e, d).unwrap() >= v);
                }
                if j + 1 < es.len() {
                    assert!(required_pairs(c, es[j + 1], d).unwrap() <= v);
                }
                if k + 1 < ds.len() {
                    assert!(required_pairs(c, e, ds[k + 1]).unwrap() <= v);
                }
            }
        }
    }
}

#[test]
fn robustness_oracle() {
    let probs = vec![vec![0.7, 0.2, 0.1], vec![0.4, 0.35, 0.25], vec![0.1, 0.1, 0.8]];
    assert!((robustness_from_probs(&probs).unwrap() - 0.025).abs() < 1e-15);
    // tie at the top gives zero
    assert_eq!(robustness_from_probs(&[vec![0.5, 0.5]]).unwrap(), 0.0);
    assert!(matches!(robustness_from_probs(&[]), Err(Error::EmptyDataset(_))));
}

#[test]
fn agreement_bound_values() {
    assert!((agreement_bound(0.01, 0.05, 0.5).unwrap() - (1.0 - 0.11 / 0.25)).abs() < 1e-15);
    assert!(agreement_bound(0.5, 0.1, 0.1).unwrap() < 0.0);
    assert!(matches!(agreement_bound(0.1, 0.1, 0.0), Err(Error::VacuousBound)));
}

#[test]
fn particular_loss_oracle_and_empty_poor_set() {
    let arch = tiny_arch(1, 4);
    let rich = TransferableModel::init(arch.clone(), 1).unwrap();
    let poor = TransferableModel::init(arch, 2).unwrap();
    let x = TimeSeriesSample::new(0, 1, 1, 4, vec![0.3, -0.2, 0.5, 1.0]).unwrap();
    let h = one_sample_set(&x);
    let t = rich.predict_proba(&x).unwrap();
    let s = poor.predict_proba(&x).unwrap();
    let expected = (t[0] - s[0]).powi(2) + (t[1] - s[1]).powi(2) + (1.0 - s[1]).powi(2);
    let got = particular_loss(&poor, &rich, &x, &x, &h).unwrap();
    assert!((got.value - expected).abs() < 1e-14);
    assert!(!got.empty_poor_set);

    let empty = h.with_samples(Vec::new());
    let got = particular_loss(&poor, &rich, &x, &x, &empty).unwrap();
    assert!(got.empty_poor_set);
    assert!((got.value - (t[0] - s[0]).powi(2) - (t[1] - s[1]).powi(2)).abs() < 1e-14);
}

#[test]
fn empirical_loss_is_mean_of_particular_losses() {
    let spec = SyntheticSpec {
        n_classes: 2,
        seq_len: 4,
        rich_channels: 1,
        poor_channels: 1,
        rich_noise: vec![0.5],
        poor_noise: vec![0.5],
        rich_informativeness: vec![1.0],
        poor_informativeness: vec![1.0],
        n_rich: 0,
        n_poor: 5,
        n_paired: 7,
        mirror_views: true,
        ..SyntheticSpec::benchmark(3)
    };
    let d = generate_synthetic(&spec).unwrap();
    let arch = tiny_arch(1, 4);
    let rich = TransferableModel::init(arch.clone(), 4).unwrap();
    let poor = TransferableModel::init(arch, 5).unwrap();
    let mut acc = 0.0;
    for i in 0..7 {
        acc += particular_loss(
            &poor,
            &rich,
            &d.paired.rich.samples[i],
            &d.paired.poor.samples[i],
            &d.poor,
        )
        .unwrap()
        .value;
    }
    let e = empirical_loss(&poor, &rich, &d.paired, &d.poor).unwrap();
    assert!((e - acc / 7.0).abs() < 1e-13);
    let none = d.paired.take(&[]);
    assert!(matches!(
        empirical_loss(&poor, &rich, &none, &d.poor),
        Err(Error::EmptyDataset(_))
    ));
}

#[test]
fn agreement_never_violated_on_random_distributions() {
    let mut rng = Rng::seed_from_u64(11);
    let mut met = 0;
    for _ in 0..5000 {
        let c = rng.random_range(2..7);
        let n = rng.random_range(1..6);
        let set: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(&mut rng, c, 4.0)).collect();
        let phi = robustness_from_probs(&set).unwrap();
        let t = &set[rng.random_range(0..n)];
        // poor output: small perturbation of the rich output, renormalized
        let scale = phi * rng.random::<f64>() * 2.0;
        let mut s: Vec<f64> = t
            .iter()
            .map(|v| (v + scale * (rng.random::<f64>() - 0.5)).max(0.0))
            .collect();
        let z: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= z);
        let term = rng.random::<f64>() * phi * phi * 0.5;
        let v = check_agreement_from_probs(t, &s, term, phi);
        met += v.condition_met as usize;
        assert!(!v.violated(), "t={t:?} s={s:?} φ={phi} term={term}");
    }
    // the suite must actually exercise the premise
    assert!(met > 500, "premise met only {met} times");
}

#[test]
fn agreement_check_with_models() {
    let arch = tiny_arch(1, 4);
    let mut rng = Rng::seed_from_u64(5);
    let mut met = 0;
    for trial in 0..200u64 {
        let rich = TransferableModel::init(arch.clone(), trial).unwrap();
        let mut poor = rich.clone();
        // nudge the poor model's parameters
        let mut b = poor.bindings();
        let eps = 0.05 * rng.random::<f64>();
        for t in b.values_mut() {
            t.values_mut()
                .iter_mut()
                .for_each(|v| *v += eps * (rng.random::<f64>() - 0.5));
        }
        poor.set_params(&b);
        let x = TimeSeriesSample::new(
            0,
            rng.random_range(0..2),
            1,
            4,
            (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
        )
        .unwrap();
        let h = one_sample_set(&x);
        let phi = robustness_constant(&rich, &h).unwrap();
        let v = check_agreement(&poor, &rich, &x, &x, &h.with_samples(Vec::new()), phi).unwrap();
        met += v.condition_met as usize;
        assert!(!v.violated());
        let v = check_agreement(&poor, &rich, &x, &x, &h, phi).unwrap();
        assert!(!v.violated());
    }
    assert!(met > 20, "premise met only {met} times");
}

#[test]
fn bound_report_shape() {
    let spec = SyntheticSpec {
        n_classes: 2,
        seq_len: 8,
        n_latent: 1,
        rich_channels: 1,
        poor_channels: 1,
        rich_noise: vec![0.1],
        poor_noise: vec![0.1],
        rich_informativeness: vec![1.0],
        poor_informativeness: vec![1.0],
        class_separation: 2.0,
        latent_noise: 0.1,
        mirror_views: true,
        ..SyntheticSpec::benchmark(8)
    };
    let arch = tiny_arch(1, 8);
    let train = TrainConfig {
        max_epochs: 3,
        patience: 2,
        ..TrainConfig::default()
    };
    let cfg = BoundCheckConfig {
        spec,
        rich_arch: arch.clone(),
        poor_arch: arch,
        n_rich_train: 60,
        n_poor: 20,
        n_eval: 30,
        epsilon: 0.5,
        delta: 0.5,
        trials: 2,
        seed: 1,
        rich_train: train.clone(),
        poor_train: train,
        behavior: BehaviorFitConfig::default(),
    };
    let r = verify_agreement_bound(&cfg).unwrap();
    // 9/(2·0.25)·ln 4
    assert_eq!(r.k_required, libm::ceil(18.0 * libm::log(4.0)) as u64);
    assert_eq!(r.trials.len(), 2);
    assert_eq!(
        r.n_evidence + r.n_vacuous,
        r.n_satisfied + r.trials.iter().filter(|t| t.vacuous && !t.satisfied).count()
    );
    for t in &r.trials {
        assert!((0.0..=1.0).contains(&t.empirical_agreement));
        assert!(t.phi >= 0.0 && t.phi <= 0.5);
        if t.vacuous {
            assert!(t.bound.is_none_or(|b| b <= 0.0));
        }
    }
    assert_eq!(r, verify_agreement_bound(&cfg).unwrap());
    assert!(verify_agreement_bound(&BoundCheckConfig { trials: 0, ..cfg }).is_err());
}
