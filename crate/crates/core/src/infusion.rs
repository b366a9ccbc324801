//! Behavior infusion (regress each poor scoring head onto the matching rich
//! head over paired data) followed by target infusion (fit the poor
//! extractor and aggregator to the rich probabilities on paired data and to
//! the labels on poor data, scorer frozen).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{holdout, split_paired, Dataset, PairedDataset};
use crate::error::{Error, Result};
use crate::model::{ParamGroup, ScorerMode, ScorerParams, TransferableModel};
use crate::rng::{derive_seed, streams};
use crate::tensor::{Bindings, ExprGraph, Tensor};
use crate::train::{fit, LabeledLoss, Objective, PairedLoss, PairedTargets, TrainConfig, TrainData, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorSolver {
    /// Normal equations; raw-linear scorers only.
    Analytic,
    /// Full-batch gradient descent with backtracking line search.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorFitConfig {
    /// Ridge coefficient on the head weights (the intercept is not penalized).
    pub lambda: f64,
    pub solver: BehaviorSolver,
    /// Gradient-descent iteration budget.
    pub max_iters: usize,
    /// Stop when the gradient norm falls below this.
    pub tolerance: f64,
    /// Fit a per-head bias alongside the weights.
    pub fit_intercept: bool,
    /// Ridge coefficient to retry with when `lambda` leaves the normal
    /// equations singular; `None` surfaces the error instead.
    pub fallback_lambda: Option<f64>,
}

impl Default for BehaviorFitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            solver: BehaviorSolver::Analytic,
            max_iters: 5000,
            tolerance: 1e-10,
            fit_intercept: true,
            fallback_lambda: Some(1e-3),
        }
    }
}

/// Poor-view inputs paired with the rich model's score for one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryDataset {
    /// 1-based head index.
    pub head: usize,
    /// Flattened poor views, one per paired sample.
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl AuxiliaryDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `[k][d]` rich scores on the rich views.
pub fn rich_scores(h_o: &PairedDataset, rich: &TransferableModel) -> Result<Vec<Vec<f64>>> {
    if h_o.is_empty() {
        return Err(Error::EmptyDataset("paired set".into()));
    }
    Ok(rich.forward_dataset(&h_o.rich)?.scores)
}

pub fn build_auxiliary(h_o: &PairedDataset, rich: &TransferableModel, head: usize) -> Result<AuxiliaryDataset> {
    let d = rich.arch.d();
    if head == 0 || head > d {
        return Err(Error::HeadIndex { index: head, d });
    }
    let scores = rich_scores(h_o, rich)?;
    Ok(AuxiliaryDataset {
        head,
        inputs: h_o.poor.samples.iter().map(|s| s.values.clone()).collect(),
        targets: scores.iter().map(|s| s[head - 1]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub lambda_used: f64,
    /// The configured λ was singular and the fallback was used.
    pub fell_back: bool,
    pub solver: BehaviorSolver,
    /// Eq. objective value per head at the returned weights.
    pub head_objectives: Vec<f64>,
    pub iterations: usize,
}

/// `½ Σ_t (link(ω·x_t + b) − y_t)² + λ‖ω‖²` for one head.
pub fn behavior_objective(mode: ScorerMode, w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], lambda: f64) -> f64 {
    let mut data = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        let p = if mode == ScorerMode::RawLinear {
            z
        } else {
            libm::tanh(z)
        };
        data += (p - t) * (p - t);
    }
    0.5 * data + lambda * w.iter().map(|v| v * v).sum::<f64>()
}

/// In-place Cholesky of an `n x n` SPD matrix (lower triangle).
fn cholesky(a: &mut [f64], n: usize) -> Option<()> {
    let scale = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        if !(s > 1e-12 * scale) {
            return None;
        }
        let piv = libm::sqrt(s);
        a[j * n + j] = piv;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / piv;
        }
    }
    Some(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Exact ridge solution `(XᵀX + 2λI)ω = Xᵀy` on centered data (when fitting
/// an intercept) for every column of `ys`.
fn solve_ridge(x: &[Vec<f64>], ys: &[Vec<f64>], lambda: f64, intercept: bool) -> Result<HeadFits> {
    let k = x.len();
    let n = x[0].len();
    let kf = k as f64;
    let (xm, ym): (Vec<f64>, Vec<f64>) = if intercept {
        (
            (0..n).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / kf).collect(),
            ys.iter().map(|y| y.iter().sum::<f64>() / kf).collect(),
        )
    } else {
        (vec![0.0; n], vec![0.0; ys.len()])
    };
    let mut gram = vec![0.0; n * n];
    let mut centered = vec![0.0; n];
    for row in x {
        for j in 0..n {
            centered[j] = row[j] - xm[j];
        }
        for i in 0..n {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..=i {
                gram[i * n + j] += ci * centered[j];
            }
        }
    }
    for i in 0..n {
        gram[i * n + i] += 2.0 * lambda;
        for j in 0..i {
            gram[j * n + i] = gram[i * n + j];
        }
    }
    if cholesky(&mut gram, n).is_none() {
        return Err(Error::RankDeficient { rows: k, cols: n });
    }
    ys.iter()
        .zip(&ym)
        .map(|(y, &my)| {
            let mut rhs = vec![0.0; n];
            for (row, &t) in x.iter().zip(y) {
                for j in 0..n {
                    rhs[j] += (row[j] - xm[j]) * (t - my);
                }
            }
            cholesky_solve(&gram, n, &mut rhs);
            let b = if intercept {
                my - xm.iter().zip(&rhs).map(|(a, w)| a * w).sum::<f64>()
            } else {
                0.0
            };
            Ok((rhs, b))
        })
        .collect()
}

/// `(weights, intercept)` per head.
type HeadFits = Vec<(Vec<f64>, f64)>;

/// Gradient descent on all heads jointly (their objectives are separable).
fn solve_gradient(
    mode: ScorerMode,
    x: &[Vec<f64>],
    ys: &[Vec<f64>],
    cfg: &BehaviorFitConfig,
    lambda: f64,
) -> Result<(HeadFits, usize)> {
    let k = x.len();
    let n = x[0].len();
    let d = ys.len();
    let mut g = ExprGraph::new();
    let xi = g.input("X");
    let yi = g.input("Y");
    let w = g.input("W");
    let b = g.input("b");
    let mut z = g.affine(xi, w, b);
    if mode != ScorerMode::RawLinear {
        z = g.tanh(z);
    }
    let diff = g.sub(z, yi);
    let sq = g.mul(diff, diff);
    let data = g.sum(sq);
    let wsq = g.mul(w, w);
    let pen = g.sum(wsq);
    let half = g.scale(data, 0.5);
    let pen = g.scale(pen, lambda);
    let loss = g.add(half, pen);

    let mut bind = Bindings::new();
    bind.insert("X".into(), Tensor::new(vec![k, n], x.concat())?);
    let mut yv = vec![0.0; k * d];
    for (h, col) in ys.iter().enumerate() {
        for (t, &v) in col.iter().enumerate() {
            yv[t * d + h] = v;
        }
    }
    bind.insert("Y".into(), Tensor::new(vec![k, d], yv)?);
    bind.insert("W".into(), Tensor::zeros(&[n, d]));
    bind.insert("b".into(), Tensor::zeros(&[d]));
    let learn_b = cfg.fit_intercept;
    let value = |bind: &Bindings| -> Result<f64> { g.forward(bind, &[loss]).map(|ev| ev.value(loss).unwrap().item()) };
    let mut step = 1.0;
    let mut iters = 0;
    let mut current = value(&bind)?;
    while iters < cfg.max_iters {
        iters += 1;
        let ev = g.forward(&bind, &[loss])?;
        let grads = g.backward_selected(&ev, &bind, loss, |nm| nm == "W" || (learn_b && nm == "b"))?;
        let gw = grads["W"].values();
        let gb: Vec<f64> = if learn_b {
            grads["b"].values().to_vec()
        } else {
            vec![0.0; d]
        };
        let gnorm2: f64 = gw.iter().chain(&gb).map(|v| v * v).sum();
        if libm::sqrt(gnorm2) < cfg.tolerance {
            break;
        }
        // Armijo backtracking; the step grows again after each success
        step *= 2.0;
        loop {
            let mut trial = bind.clone();
            for (p, gv) in trial.get_mut("W").unwrap().values_mut().iter_mut().zip(gw) {
                *p -= step * gv;
            }
            for (p, gv) in trial.get_mut("b").unwrap().values_mut().iter_mut().zip(&gb) {
                *p -= step * gv;
            }
            let v = value(&trial).unwrap_or(f64::INFINITY);
            if v <= current - 0.5 * step * gnorm2 {
                bind = trial;
                current = v;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Ok((unpack(&bind, n, d), iters));
            }
        }
    }
    Ok((unpack(&bind, n, d), iters))
}

fn unpack(bind: &Bindings, n: usize, d: usize) -> Vec<(Vec<f64>, f64)> {
    let w = bind["W"].values();
    let b = bind["b"].values();
    (0..d).map(|h| ((0..n).map(|j| w[j * d + h]).collect(), b[h])).collect()
}

/// Fits every head of `poor_template`'s scorer to the rich heads over `h_o`.
pub fn behavior_infuse(
    rich: &TransferableModel,
    h_o: &PairedDataset,
    poor_template: &TransferableModel,
    cfg: &BehaviorFitConfig,
) -> Result<(ScorerParams, BehaviorReport)> {
    let d = rich.arch.d();
    if poor_template.arch.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "rich model has {d} scoring heads, poor model has {}",
            poor_template.arch.d()
        )));
    }
    if !(cfg.lambda >= 0.0) || cfg.fallback_lambda.is_some_and(|l| !(l > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "ridge coefficient {} must be >= 0",
            cfg.lambda
        )));
    }
    let mode = poor_template.arch.scorer;
    if cfg.solver == BehaviorSolver::Analytic && mode != ScorerMode::RawLinear {
        return Err(Error::ModeMismatch(format!(
            "the analytic solver needs a raw-linear scorer, poor model uses {mode:?}"
        )));
    }
    poor_template.check_dataset(&h_o.poor)?;
    let scores = rich_scores(h_o, rich)?;
    let ys: Vec<Vec<f64>> = (0..d).map(|h| scores.iter().map(|s| s[h]).collect()).collect();
    let x: Vec<Vec<f64>> = match mode {
        ScorerMode::RawLinear | ScorerMode::RawTanh => h_o.poor.samples.iter().map(|s| s.values.clone()).collect(),
        ScorerMode::FeatureAttention => h_o
            .poor
            .samples
            .iter()
            .map(|s| poor_template.extract_features(s).map(|q| q.values))
            .collect::<Result<_>>()?,
    };
    let solve = |lambda: f64| -> Result<(HeadFits, usize)> {
        match cfg.solver {
            BehaviorSolver::Analytic => Ok((solve_ridge(&x, &ys, lambda, cfg.fit_intercept)?, 0)),
            BehaviorSolver::Gradient => solve_gradient(mode, &x, &ys, cfg, lambda),
        }
    };
    let (heads, iterations, lambda_used, fell_back) = match solve(cfg.lambda) {
        Ok((h, it)) => (h, it, cfg.lambda, false),
        Err(Error::RankDeficient { .. }) if cfg.fallback_lambda.is_some() => {
            let l = cfg.fallback_lambda.unwrap();
            let (h, it) = solve(l)?;
            (h, it, l, true)
        }
        Err(e) => return Err(e),
    };
    let mut scorer = ScorerParams::zeros(mode, x[0].len(), d);
    let mut head_objectives = Vec::with_capacity(d);
    for (i, (w, b)) in heads.iter().enumerate() {
        scorer.set_head(i + 1, w, *b)?;
        head_objectives.push(behavior_objective(mode, w, *b, &x, &ys[i], lambda_used));
    }
    Ok((
        scorer,
        BehaviorReport {
            lambda_used,
            fell_back,
            solver: cfg.solver,
            head_objectives,
            iterations,
        },
    ))
}

/// Fits a single auxiliary dataset with the analytic solver (raw-linear).
pub fn fit_auxiliary(aux: &AuxiliaryDataset, lambda: f64, fit_intercept: bool) -> Result<(Vec<f64>, f64)> {
    if aux.is_empty() {
        return Err(Error::EmptyDataset("auxiliary dataset".into()));
    }
    Ok(solve_ridge(&aux.inputs, core::slice::from_ref(&aux.targets), lambda, fit_intercept)?.remove(0))
}

/// Fits a single auxiliary dataset by gradient descent.
pub fn fit_auxiliary_gradient(
    aux: &AuxiliaryDataset,
    mode: ScorerMode,
    cfg: &BehaviorFitConfig,
) -> Result<(Vec<f64>, f64)> {
    if aux.is_empty() {
        return Err(Error::EmptyDataset("auxiliary dataset".into()));
    }
    Ok(
        solve_gradient(mode, &aux.inputs, core::slice::from_ref(&aux.targets), cfg, cfg.lambda)?
            .0
            .remove(0),
    )
}

/// Rich probabilities on the rich views, as paired targets on the poor views.
pub fn rich_probability_targets(h_o: &PairedDataset, rich: &TransferableModel) -> Result<PairedTargets> {
    let c = rich.arch.n_classes;
    let probs = if h_o.is_empty() {
        Vec::new()
    } else {
        rich.forward_dataset(&h_o.rich)?.probs.concat()
    };
    PairedTargets::new(h_o.poor.clone(), probs, c)
}

/// The target-infusion objective: squared probability gap on paired data
/// plus `(1 − S(y|x))²` on poor data.
pub fn target_objective() -> Objective {
    Objective {
        labeled: Some((LabeledLoss::TargetFit, 1.0)),
        paired: Some((PairedLoss::ProbabilityFit, 1.0)),
    }
}

/// Share of each set held out for early stopping.
pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Trains the poor extractor and aggregator with the scorer frozen.
pub fn target_infuse(
    poor: TransferableModel,
    rich: &TransferableModel,
    h_o: &PairedDataset,
    h_p: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TransferableModel, TrainReport)> {
    if h_p.is_empty() {
        return Err(Error::EmptyDataset("poor set".into()));
    }
    if rich.arch.n_classes != poor.arch.n_classes {
        return Err(Error::DimensionMismatch(
            "rich and poor models disagree on class count".into(),
        ));
    }
    if !h_o.is_empty() {
        rich.check_dataset(&h_o.rich)?;
    }
    let (p_train, p_val) = holdout(h_p, HOLDOUT_FRACTION, cfg.seed)?;
    let (o_train, o_val, _) = split_paired(
        h_o,
        [1.0 - HOLDOUT_FRACTION, HOLDOUT_FRACTION, 0.0],
        derive_seed(cfg.seed, streams::HOLDOUT, 1),
    )?;
    let t_train = rich_probability_targets(&o_train, rich)?;
    let t_val = rich_probability_targets(&o_val, rich)?;
    let train = TrainData {
        labeled: Some(&p_train),
        paired: Some(&t_train),
    };
    let val = TrainData {
        labeled: Some(&p_val),
        paired: Some(&t_val),
    };
    fit(
        poor,
        &target_objective(),
        &train,
        &val,
        &[ParamGroup::Extractor, ParamGroup::Aggregator],
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheerReport {
    pub behavior: BehaviorReport,
    pub target: TrainReport,
}

/// Behavior infusion for every head, then target infusion.
pub fn cheer(
    h_p: &Dataset,
    rich: &TransferableModel,
    h_o: &PairedDataset,
    poor_template: TransferableModel,
    behavior: &BehaviorFitConfig,
    train: &TrainConfig,
) -> Result<(TransferableModel, CheerReport)> {
    let (scorer, behavior_report) = behavior_infuse(rich, h_o, &poor_template, behavior)?;
    let poor = poor_template.with_scorer(scorer)?;
    let (model, target) = target_infuse(poor, rich, h_o, h_p, train)?;
    Ok((
        model,
        CheerReport {
            behavior: behavior_report,
            target,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostInputs {
    /// Optimizer iterations.
    pub iters: u64,
    pub k: u64,
    /// Largest head parameter count.
    pub w: u64,
    pub d: u64,
    /// Neurons in the poor extractor and aggregator.
    pub n_p: u64,
    pub m: u64,
    pub p: u64,
    pub c: u64,
}

/// `(iters·k·w·d, iters·n_p·(m·p·c + k·c²))`.
pub fn estimate_costs(ci: &CostInputs) -> (u128, u128) {
    let v = |x: u64| x as u128;
    let behavior = v(ci.iters) * v(ci.k) * v(ci.w) * v(ci.d);
    let target = v(ci.iters) * v(ci.n_p) * (v(ci.m) * v(ci.p) * v(ci.c) + v(ci.k) * v(ci.c) * v(ci.c));
    (behavior, target)
}
