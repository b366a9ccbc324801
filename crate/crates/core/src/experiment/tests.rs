use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::data::DatasetRole;
use crate::data::TimeSeriesSample;
use crate::model::{ConvLayer, ExtractorConfig, ScorerMode};

fn arch(c: usize) -> Architecture {
    Architecture {
        n_channels: c,
        seq_len: 8,
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

fn tiny_config(methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        spec: SyntheticSpec {
            n_classes: 2,
            seq_len: 8,
            rich_channels: 3,
            poor_channels: 2,
            rich_noise: vec![0.3; 3],
            poor_noise: vec![0.8; 2],
            rich_informativeness: vec![1.0; 3],
            poor_informativeness: vec![0.7; 2],
            n_rich: 60,
            n_poor: 40,
            n_paired: 20,
            ..SyntheticSpec::benchmark(2)
        },
        rich_arch: arch(3),
        poor_arch: arch(2),
        train: TrainConfig {
            max_epochs: 3,
            patience: 2,
            batch_size: 8,
            ..TrainConfig::default()
        },
        kd: KdConfig::default(),
        at: AtConfig::default(),
        behavior: BehaviorFitConfig::default(),
        paired_ratio: 0.5,
        channels: ChannelPolicy::All,
        methods,
        seeds: vec![1, 2],
    }
}

fn report(auc: f64) -> MetricsReport {
    MetricsReport {
        accuracy: auc - 0.1,
        macro_f1: auc - 0.2,
        roc_auc: auc,
        pr_auc: auc - 0.05,
        per_class_f1: vec![0.0; 2],
        per_class_roc_auc: vec![Some(auc); 2],
        per_class_pr_auc: vec![Some(auc); 2],
        n_eval: 10,
    }
}

fn seed_result(seed: u64, entries: &[(Method, f64)]) -> SeedResult {
    SeedResult {
        seed,
        channels: vec![0],
        n_pairs: 1,
        results: entries
            .iter()
            .map(|&(method, auc)| MethodResult {
                method,
                metrics: report(auc),
                epochs_run: 1,
                best_epoch: 1,
            })
            .collect(),
        failures: vec![],
    }
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(Method::parse(m.name()).unwrap(), m);
    }
    assert!(Method::parse("teacher").is_err());
}

#[test]
fn config_validation() {
    assert!(tiny_config(vec![Method::Direct]).validate().is_ok());
    assert!(tiny_config(vec![]).validate().is_err());
    let mut c = tiny_config(vec![Method::Direct]);
    c.seeds.clear();
    assert!(c.validate().is_err());
    for r in [0.0, 1.5, f64::NAN] {
        let mut c = tiny_config(vec![Method::Direct]);
        c.paired_ratio = r;
        assert!(c.validate().is_err());
    }
}

#[test]
fn channel_policies() {
    // channel 1 copies the label, channel 0 is constant, channel 2 cycles
    // independently of the label
    let samples = (0..40)
        .map(|i| {
            let y = i % 2;
            let mut v = vec![0.5; 4];
            v.extend([y as f64; 4]);
            v.extend([(i % 5) as f64; 4]);
            TimeSeriesSample::new(i as u64, y, 3, 4, v).unwrap()
        })
        .collect();
    let ds = Dataset::new("p", DatasetRole::Poor, 2, vec![5, 6, 7], 4, 0, samples).unwrap();
    assert_eq!(ChannelPolicy::TopMi(1).select(&ds).unwrap(), vec![1]);
    assert_ne!(ChannelPolicy::BottomMi(1).select(&ds).unwrap(), vec![1]);
    assert_eq!(ChannelPolicy::All.select(&ds).unwrap(), vec![0, 1, 2]);
    assert_eq!(ChannelPolicy::Explicit(vec![2, 0]).select(&ds).unwrap(), vec![2, 0]);
    // within each class only channel 2 varies
    assert_eq!(ChannelPolicy::TopEntropy(1).select(&ds).unwrap(), vec![2]);
    assert_eq!(ChannelPolicy::MiddleEntropy(1).select(&ds).unwrap().len(), 1);
    assert!(ChannelPolicy::TopMi(0).select(&ds).is_err());
    assert!(ChannelPolicy::TopMi(4).select(&ds).is_err());
}

#[test]
fn aggregate_matches_independent_means() {
    let results = vec![
        seed_result(1, &[(Method::Direct, 0.6), (Method::Cheer, 0.7)]),
        seed_result(2, &[(Method::Direct, 0.64), (Method::Cheer, 0.78)]),
        seed_result(3, &[(Method::Direct, 0.62), (Method::Cheer, 0.74)]),
    ];
    let a = aggregate(&results);
    let direct = a.methods.iter().find(|m| m.method == Method::Direct).unwrap();
    assert!((direct.roc_auc.mean - 0.62).abs() < 1e-12);
    assert!((direct.roc_auc.std - 0.02).abs() < 1e-12);
    assert!((direct.accuracy.mean - 0.52).abs() < 1e-12);
    assert_eq!(direct.seeds, vec![1, 2, 3]);
    let p = a.p_values["direct"];
    assert!(p > 0.0 && p < 0.01, "{p}");
    assert!(!a.p_values.contains_key("kd"));
}

#[test]
fn aggregate_identical_methods_give_half() {
    let results = vec![
        seed_result(1, &[(Method::Direct, 0.6), (Method::Cheer, 0.6)]),
        seed_result(2, &[(Method::Direct, 0.7), (Method::Cheer, 0.7)]),
    ];
    assert_eq!(aggregate(&results).p_values["direct"], 0.5);
    // a single seed yields no p-value and a warning
    let one = aggregate(&results[..1]);
    assert!(one.p_values.is_empty());
    assert_eq!(one.warnings.len(), 1);
}

#[test]
fn single_method_single_seed() {
    let cfg = tiny_config(vec![Method::Direct]);
    let r = run_seed(&cfg, 1).unwrap();
    assert_eq!(r.results.len(), 1);
    assert_eq!(r.results[0].method, Method::Direct);
    assert_eq!(r.n_pairs, 10);
}

#[test]
fn full_pipeline_is_deterministic() {
    let cfg = tiny_config(Method::ALL.to_vec());
    let a = run_seed(&cfg, 3).unwrap();
    assert_eq!(
        a.results.iter().map(|r| r.method).collect::<Vec<_>>(),
        Method::ALL.to_vec()
    );
    assert_eq!(a, run_seed(&cfg, 3).unwrap());
    assert_ne!(a, run_seed(&cfg, 4).unwrap());
}

#[test]
fn channel_selection_changes_poor_arch() {
    let mut cfg = tiny_config(vec![Method::Direct, Method::Cheer]);
    cfg.channels = ChannelPolicy::TopMi(1);
    let r = run_seed(&cfg, 1).unwrap();
    assert_eq!(r.channels.len(), 1);
    assert_eq!(r.results.len(), 2);
}

#[test]
fn failing_method_is_recorded_and_others_run() {
    let mut cfg = tiny_config(vec![Method::Direct, Method::Kd, Method::Cheer]);
    cfg.kd.distill_temperature = 0.0;
    let r = run_seed(&cfg, 1).unwrap();
    assert_eq!(
        r.results.iter().map(|m| m.method).collect::<Vec<_>>(),
        vec![Method::Direct, Method::Cheer]
    );
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.failures[0].method, Method::Kd);
}
