use std::fs;
use std::path::Path;

use cheer::io::write_json;
use cheer::report::{
    load_report, render_table, seed_file_name, sha256_hex, write_report, AGGREGATE_JSON, SEEDS_DIR, TABLE_TXT,
};
use cheer::CliError;
use cheer_core::experiment::{Method, MethodResult, SeedResult};
use cheer_core::metrics::MetricsReport;

fn metrics(auc: f64) -> MetricsReport {
    MetricsReport {
        accuracy: auc - 0.1,
        macro_f1: auc - 0.2,
        roc_auc: auc,
        pr_auc: auc - 0.05,
        per_class_f1: vec![],
        per_class_roc_auc: vec![],
        per_class_pr_auc: vec![],
        n_eval: 10,
    }
}

const CHEER: [f64; 5] = [0.81, 0.84, 0.79, 0.86, 0.83];
const DIRECT: [f64; 5] = [0.74, 0.80, 0.77, 0.72, 0.78];

fn write_seeds(dir: &Path) {
    fs::create_dir_all(dir.join(SEEDS_DIR)).unwrap();
    for (s, (&c, &d)) in CHEER.iter().zip(&DIRECT).enumerate() {
        let r = SeedResult {
            seed: s as u64,
            channels: vec![0, 1],
            n_pairs: 50,
            results: [(Method::Direct, d), (Method::Cheer, c)]
                .into_iter()
                .map(|(method, auc)| MethodResult {
                    method,
                    metrics: metrics(auc),
                    epochs_run: 5,
                    best_epoch: 3,
                })
                .collect(),
            failures: vec![],
        };
        write_json(&dir.join(SEEDS_DIR).join(seed_file_name(s as u64)), &r).unwrap();
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Student-t upper tail by Simpson integration of the density.
fn t_upper_tail(t: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let pdf = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    // ∫_0^t, then tail = 1/2 − that
    let n = 20_000;
    let h = t / n as f64;
    let mut s = pdf(0.0) + pdf(t);
    for i in 1..n {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 - s * h / 3.0
}

/// Lanczos approximation (g = 7).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let t = x + 7.5;
    let s = C[1..]
        .iter()
        .enumerate()
        .fold(C[0], |a, (i, c)| a + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

#[test]
fn aggregate_matches_independent_statistics() {
    let dir = tempfile::tempdir().unwrap();
    write_seeds(dir.path());
    let r = write_report(dir.path()).unwrap();
    let cheer = r.aggregate.methods.iter().find(|m| m.method == Method::Cheer).unwrap();
    let (m, s) = mean_std(&CHEER);
    assert!((cheer.roc_auc.mean - m).abs() < 1e-12 && (cheer.roc_auc.std - s).abs() < 1e-12);
    assert!((cheer.accuracy.mean - (m - 0.1)).abs() < 1e-12);
    assert_eq!(cheer.seeds, vec![0, 1, 2, 3, 4]);

    let (md, sd) = mean_std(&DIRECT);
    let (va, vb) = (s * s / 5.0, sd * sd / 5.0);
    let t = (m - md) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / 4.0 + vb * vb / 4.0);
    let p = r.aggregate.p_values["direct"];
    assert!((p - t_upper_tail(t, df)).abs() < 1e-8, "{p} vs {}", t_upper_tail(t, df));
    assert!(r.aggregate.warnings.is_empty());
}

#[test]
fn report_is_idempotent_and_records_sources() {
    let dir = tempfile::tempdir().unwrap();
    write_seeds(dir.path());
    write_report(dir.path()).unwrap();
    let first = fs::read(dir.path().join(AGGREGATE_JSON)).unwrap();
    let table = fs::read(dir.path().join(TABLE_TXT)).unwrap();
    write_report(dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join(AGGREGATE_JSON)).unwrap(), first);
    assert_eq!(fs::read(dir.path().join(TABLE_TXT)).unwrap(), table);

    let r = load_report(dir.path()).unwrap();
    assert_eq!(r.sources.len(), 5);
    for s in &r.sources {
        assert_eq!(s.sha256, sha256_hex(&fs::read(dir.path().join(&s.file)).unwrap()));
    }
    let text = String::from_utf8(table).unwrap();
    assert_eq!(text, render_table(&r.aggregate));
    assert!(text.contains("cheer") && text.contains("p(cheer>)"));
}

#[test]
fn unrelated_files_are_ignored_and_empty_dirs_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(write_report(dir.path()), Err(CliError::Config(_))));
    write_seeds(dir.path());
    fs::write(dir.path().join(SEEDS_DIR).join("notes.json"), "{}").unwrap();
    assert_eq!(write_report(dir.path()).unwrap().sources.len(), 5);
}

#[test]
fn mislabeled_seed_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_seeds(dir.path());
    fs::rename(
        dir.path().join(SEEDS_DIR).join(seed_file_name(4)),
        dir.path().join(SEEDS_DIR).join(seed_file_name(9)),
    )
    .unwrap();
    assert!(matches!(write_report(dir.path()), Err(CliError::Format { .. })));
}
