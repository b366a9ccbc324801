//! One Adam/early-stopping loop shared by supervised training, target
//! infusion and the baselines. An objective has an optional labeled term on
//! poor data and an optional paired term on poor views with per-sample
//! targets; each is a batch mean of a per-sample loss.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TimeSeriesSample};
use crate::error::{Error, Result};
use crate::model::{build_forward, input_tensor, ParamGroup, TransferableModel, EVAL_CHUNK};
use crate::rng::{rng_from, streams};
use crate::tensor::{AdamConfig, AdamState, Bindings, ExprGraph, Gradients, NodeId, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            max_epochs: 200,
            patience: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::InvalidConfig(format!("bad Adam settings {:?}", self.adam)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabeledLoss {
    /// `−log S(y|x)`
    CrossEntropy,
    /// `(1 − S(y|x))²`
    TargetFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairedLoss {
    /// `Σ_y (S(y|x) − t_y)²`
    ProbabilityFit,
    /// `−Σ_y t_y log S(y|x)`
    SoftCrossEntropy,
    /// `‖a/‖a‖ − t‖²` with `t` already unit length.
    AttentionMatch,
}

/// Terms with weight 0 are dropped entirely (their data stream is not
/// iterated), so e.g. a zero-weight teacher term reproduces plain training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub labeled: Option<(LabeledLoss, f64)>,
    pub paired: Option<(PairedLoss, f64)>,
}

type ActiveTerms = (Option<(LabeledLoss, f64)>, Option<(PairedLoss, f64)>);

impl Objective {
    fn active(&self) -> ActiveTerms {
        (
            self.labeled.filter(|(_, w)| *w != 0.0),
            self.paired.filter(|(_, w)| *w != 0.0),
        )
    }
}

/// Poor-view inputs with one target row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTargets {
    pub inputs: Dataset,
    /// `[n, width]` row-major.
    pub targets: Vec<f64>,
    pub width: usize,
}

impl PairedTargets {
    pub fn new(inputs: Dataset, targets: Vec<f64>, width: usize) -> Result<Self> {
        if width == 0 || targets.len() != inputs.len() * width {
            return Err(Error::LengthMismatch {
                expected: inputs.len() * width,
                actual: targets.len(),
            });
        }
        if !targets.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("paired targets".into()));
        }
        Ok(Self { inputs, targets, width })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.width..(i + 1) * self.width]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainData<'a> {
    pub labeled: Option<&'a Dataset>,
    pub paired: Option<&'a PairedTargets>,
}

impl<'a> TrainData<'a> {
    pub fn labeled(ds: &'a Dataset) -> Self {
        Self {
            labeled: Some(ds),
            paired: None,
        }
    }

    fn n_labeled(&self) -> usize {
        self.labeled.map_or(0, |d| d.len())
    }

    fn n_paired(&self) -> usize {
        self.paired.map_or(0, |p| p.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 0 means the initial parameters were never improved on.
    pub best_epoch: usize,
    pub initial_objective: f64,
    pub best_objective: f64,
    /// Validation objective after each epoch.
    pub history: Vec<f64>,
    /// The validation split was empty and the training data was monitored.
    pub monitored_train: bool,
}

const XL: &str = "x.labeled";
const YL: &str = "y.labeled";
const XP: &str = "x.paired";
const TP: &str = "t.paired";

struct LossGraph {
    graph: ExprGraph,
    /// Per-sample loss vectors.
    vec_l: Option<NodeId>,
    vec_p: Option<NodeId>,
    loss_l: Option<NodeId>,
    loss_p: Option<NodeId>,
    loss_both: Option<NodeId>,
}

fn build_loss(model: &TransferableModel, objective: &Objective) -> LossGraph {
    let arch = &model.arch;
    let tau = arch.temperature;
    let (lab, pair) = objective.active();
    let mut g = ExprGraph::new();
    let mut vec_l = None;
    let mut loss_l = None;
    if let Some((kind, w)) = lab {
        let x = g.input(XL);
        let y = g.input(YL);
        let f = build_forward(&mut g, arch, x);
        let v = match kind {
            LabeledLoss::CrossEntropy => {
                let lp = g.log_softmax(f.logits, tau);
                let picked = g.mul(y, lp);
                let s = g.sum_last(picked);
                g.scale(s, -1.0)
            }
            LabeledLoss::TargetFit => {
                let picked = g.mul(y, f.probs);
                let s = g.sum_last(picked);
                let r = g.scale_shift(s, -1.0, 1.0);
                g.mul(r, r)
            }
        };
        g.label(v, "labeled term");
        let m = g.mean(v);
        vec_l = Some(v);
        loss_l = Some(g.scale(m, w));
    }
    let mut vec_p = None;
    let mut loss_p = None;
    if let Some((kind, w)) = pair {
        let x = g.input(XP);
        let t = g.input(TP);
        let f = build_forward(&mut g, arch, x);
        let v = match kind {
            PairedLoss::ProbabilityFit => {
                let diff = g.sub(f.probs, t);
                let sq = g.mul(diff, diff);
                g.sum_last(sq)
            }
            PairedLoss::SoftCrossEntropy => {
                let lp = g.log_softmax(f.logits, tau);
                let picked = g.mul(t, lp);
                let s = g.sum_last(picked);
                g.scale(s, -1.0)
            }
            PairedLoss::AttentionMatch => {
                let n = g.l2_normalize(f.scores);
                g.label(n, "student attention");
                let diff = g.sub(n, t);
                let sq = g.mul(diff, diff);
                g.sum_last(sq)
            }
        };
        g.label(v, "paired term");
        let m = g.mean(v);
        vec_p = Some(v);
        loss_p = Some(g.scale(m, w));
    }
    let loss_both = match (loss_l, loss_p) {
        (Some(a), Some(b)) => Some(g.add(a, b)),
        _ => None,
    };
    LossGraph {
        graph: g,
        vec_l,
        vec_p,
        loss_l,
        loss_p,
        loss_both,
    }
}

fn one_hot(samples: &[&TimeSeriesSample], c: usize) -> Result<Tensor> {
    let mut v = vec![0.0; samples.len() * c];
    for (i, s) in samples.iter().enumerate() {
        if s.label >= c {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                n_classes: c,
            });
        }
        v[i * c + s.label] = 1.0;
    }
    Tensor::new(vec![samples.len(), c], v)
}

fn bind_labeled(b: &mut Bindings, ds: &Dataset, idx: &[usize], c: usize) -> Result<()> {
    let s: Vec<&TimeSeriesSample> = idx.iter().map(|&i| &ds.samples[i]).collect();
    b.insert(XL.into(), input_tensor(&s)?);
    b.insert(YL.into(), one_hot(&s, c)?);
    Ok(())
}

fn bind_paired(b: &mut Bindings, p: &PairedTargets, idx: &[usize]) -> Result<()> {
    let s: Vec<&TimeSeriesSample> = idx.iter().map(|&i| &p.inputs.samples[i]).collect();
    let mut t = Vec::with_capacity(idx.len() * p.width);
    for &i in idx {
        t.extend_from_slice(p.row(i));
    }
    b.insert(XP.into(), input_tensor(&s)?);
    b.insert(TP.into(), Tensor::new(vec![idx.len(), p.width], t)?);
    Ok(())
}

/// Maps a zero-norm failure inside a paired batch to the sample position.
fn map_zero_norm(e: Error, idx: &[usize]) -> Error {
    match e {
        Error::ZeroNorm { row, .. } => Error::ZeroNormAttention(idx.get(row).copied().unwrap_or(row)),
        e => e,
    }
}

/// `(labeled sum, paired sum)` of the per-sample losses over whole sets.
fn per_sample_sums(lg: &LossGraph, params: &Bindings, data: &TrainData, c: usize) -> Result<(f64, f64)> {
    let mut sums = (0.0, 0.0);
    if let (Some(node), Some(ds)) = (lg.vec_l, data.labeled) {
        let idx: Vec<usize> = (0..ds.len()).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let mut b = params.clone();
            bind_labeled(&mut b, ds, chunk, c)?;
            let ev = lg.graph.forward(&b, &[node])?;
            sums.0 += ev.value(node).unwrap().values().iter().sum::<f64>();
        }
    }
    if let (Some(node), Some(p)) = (lg.vec_p, data.paired) {
        let idx: Vec<usize> = (0..p.len()).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let mut b = params.clone();
            bind_paired(&mut b, p, chunk)?;
            let ev = lg.graph.forward(&b, &[node]).map_err(|e| map_zero_norm(e, chunk))?;
            sums.1 += ev.value(node).unwrap().values().iter().sum::<f64>();
        }
    }
    Ok(sums)
}

/// Full-set objective value: weighted means of the active terms; a term
/// whose set is empty contributes 0.
pub fn objective_value(model: &TransferableModel, objective: &Objective, data: &TrainData) -> Result<f64> {
    let lg = build_loss(model, objective);
    value_with(&lg, model, objective, &model.bindings(), data)
}

/// Objective value and its gradient with respect to every model parameter,
/// both sets taken as one batch through the graph used by [`fit`].
pub fn objective_gradient(
    model: &TransferableModel,
    objective: &Objective,
    data: &TrainData,
) -> Result<(f64, Gradients)> {
    let lg = build_loss(model, objective);
    let mut b = model.bindings();
    let lab = lg.loss_l.zip(data.labeled.filter(|d| !d.is_empty()));
    let pair = lg.loss_p.zip(data.paired.filter(|p| !p.is_empty()));
    if let Some((_, ds)) = lab {
        bind_labeled(&mut b, ds, &(0..ds.len()).collect::<Vec<_>>(), model.arch.n_classes)?;
    }
    if let Some((_, p)) = pair {
        bind_paired(&mut b, p, &(0..p.len()).collect::<Vec<_>>())?;
    }
    let out = match (lab, pair) {
        (Some(_), Some(_)) => lg.loss_both.expect("both terms active"),
        (Some((n, _)), None) | (None, Some((n, _))) => n,
        (None, None) => return Err(Error::EmptyDataset("no active objective term has data".into())),
    };
    let ev = lg.graph.forward(&b, &[out])?;
    let value = ev.value(out).expect("evaluated").item();
    let mut grads = lg.graph.backward_from(&ev, &b, out)?;
    let names: Vec<String> = model.bindings().into_keys().collect();
    grads.retain(|k, _| names.contains(k));
    Ok((value, grads))
}

fn value_with(
    lg: &LossGraph,
    model: &TransferableModel,
    objective: &Objective,
    params: &Bindings,
    data: &TrainData,
) -> Result<f64> {
    let (lab, pair) = objective.active();
    let (sl, sp) = per_sample_sums(lg, params, data, model.arch.n_classes)?;
    let mut v = 0.0;
    if let Some((_, w)) = lab {
        if data.n_labeled() > 0 {
            v += w * sl / data.n_labeled() as f64;
        }
    }
    if let Some((_, w)) = pair {
        if data.n_paired() > 0 {
            v += w * sp / data.n_paired() as f64;
        }
    }
    Ok(v)
}

/// `steps` contiguous, near-equal chunks of `perm`; some may be empty.
fn chunk_bounds(n: usize, steps: usize, i: usize) -> (usize, usize) {
    (i * n / steps, (i + 1) * n / steps)
}

/// Minimizes `objective` over the parameters in `groups` with Adam,
/// returning the parameters with the best validation objective (the
/// initial ones included).
pub fn fit(
    model: TransferableModel,
    objective: &Objective,
    train: &TrainData,
    val: &TrainData,
    groups: &[ParamGroup],
    cfg: &TrainConfig,
) -> Result<(TransferableModel, TrainReport)> {
    cfg.validate()?;
    let (lab, pair) = objective.active();
    if lab.is_none() && pair.is_none() {
        return Err(Error::InvalidConfig("objective has no active term".into()));
    }
    let n_l = if lab.is_some() { train.n_labeled() } else { 0 };
    let n_p = if pair.is_some() { train.n_paired() } else { 0 };
    if n_l + n_p == 0 {
        return Err(Error::EmptyDataset(
            "no training data for the active objective terms".into(),
        ));
    }
    if let Some(ds) = train.labeled {
        model.check_dataset(ds)?;
    }
    if let Some(p) = train.paired {
        model.check_dataset(&p.inputs)?;
    }
    let c = model.arch.n_classes;
    let lg = build_loss(&model, objective);

    let val_empty = (lab.is_none() || val.n_labeled() == 0) && (pair.is_none() || val.n_paired() == 0);
    let monitor = if val_empty { train } else { val };

    let mut params = model.bindings();
    let trainable: Vec<String> = params
        .keys()
        .filter(|n| groups.contains(&ParamGroup::of(n)))
        .cloned()
        .collect();
    let mut adam: BTreeMap<String, AdamState> = trainable
        .iter()
        .map(|n| (n.clone(), AdamState::new(params[n].len(), cfg.adam)))
        .collect();

    let initial = value_with(&lg, &model, objective, &params, monitor)?;
    let mut best = (initial, params.clone(), 0usize);
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut rng_l = rng_from(cfg.seed, streams::SHUFFLE, 0);
    let mut rng_p = rng_from(cfg.seed, streams::SHUFFLE, 1);
    let mut perm_l: Vec<usize> = (0..n_l).collect();
    let mut perm_p: Vec<usize> = (0..n_p).collect();
    let steps = n_l.max(n_p).div_ceil(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        perm_l.shuffle(&mut rng_l);
        perm_p.shuffle(&mut rng_p);
        for step in 0..steps {
            let (a, b) = chunk_bounds(n_l, steps, step);
            let il = &perm_l[a..b];
            let (a, b) = chunk_bounds(n_p, steps, step);
            let ip = &perm_p[a..b];
            let mut bind = params.clone();
            if !il.is_empty() {
                bind_labeled(&mut bind, train.labeled.unwrap(), il, c)?;
            }
            if !ip.is_empty() {
                bind_paired(&mut bind, train.paired.unwrap(), ip)?;
            }
            let out = match (il.is_empty(), ip.is_empty()) {
                (false, false) => lg.loss_both.unwrap(),
                (false, true) => lg.loss_l.unwrap(),
                (true, false) => lg.loss_p.unwrap(),
                (true, true) => continue,
            };
            let ev = lg.graph.forward(&bind, &[out]).map_err(|e| map_zero_norm(e, ip))?;
            let grads = lg.graph.backward_selected(&ev, &bind, out, |n| adam.contains_key(n))?;
            for (name, state) in adam.iter_mut() {
                let p = params.get_mut(name).unwrap();
                state.step(p.values_mut(), grads[name].values())?;
            }
        }
        let v = value_with(&lg, &model, objective, &params, monitor)?;
        history.push(v);
        if v < best.0 {
            best = (v, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let mut out = model;
    out.set_params(&best.1);
    let report = TrainReport {
        epochs_run: history.len(),
        best_epoch: best.2,
        initial_objective: initial,
        best_objective: best.0,
        history,
        monitored_train: val_empty,
    };
    Ok((out, report))
}
