// Random composite expression graphs and an end-to-end gradient check of
// the infusion objective. Shared by the core integration tests and the
// acceptance target.

use cheer_core::data::{generate_synthetic, SyntheticSpec};
use cheer_core::infusion::{rich_probability_targets, target_objective};
use cheer_core::model::{Architecture, ConvLayer, ExtractorConfig, ScorerMode, TransferableModel};
use cheer_core::rng::rng_from;
use cheer_core::tensor::{grad_check, grad_check_graph, Bindings, ExprGraph, NodeId, Tensor};
use cheer_core::train::{objective_gradient, TrainData};
use rand::Rng;

const ROWS: usize = 4;
const COLS: usize = 3;

fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

pub struct RandomGraph {
    pub graph: ExprGraph,
    pub bindings: Bindings,
    pub loss: NodeId,
    /// Operations used, for failure messages.
    pub ops: Vec<&'static str>,
}

impl RandomGraph {
    /// Worst relative error over every bound input.
    pub fn worst_error(&self) -> f64 {
        self.bindings
            .keys()
            .map(|name| grad_check_graph(&self.graph, &self.bindings, self.loss, name, 1e-5).unwrap())
            .fold(0.0, f64::max)
    }
}

/// A graph over `[4, 3]` matrices mixing the elementwise, dense, softmax,
/// normalization, stacking, recurrent and convolutional operations, reduced
/// to a scalar by a weighted sum.
pub fn random_graph(seed: u64) -> RandomGraph {
    let mut rng = rng_from(seed, 0x6a, 0);
    let mut g = ExprGraph::new();
    let mut b = Bindings::new();
    let mut ops = Vec::new();
    let mut n_inputs = 0;
    let mut fresh = |g: &mut ExprGraph, b: &mut Bindings, rng: &mut _, shape: &[usize], scale: f64| {
        let name = format!("in{n_inputs}");
        n_inputs += 1;
        b.insert(name.clone(), random_tensor(rng, shape, scale));
        g.input(&name)
    };
    let mut pool = vec![fresh(&mut g, &mut b, &mut rng, &[ROWS, COLS], 1.0)];
    let steps = rng.random_range(3..10);
    for _ in 0..steps {
        let pick = |rng: &mut _, pool: &Vec<NodeId>| pool[Rng::random_range(rng, 0..pool.len())];
        let x = pick(&mut rng, &pool);
        let op = rng.random_range(0..17);
        let node = match op {
            0 => {
                let y = pick(&mut rng, &pool);
                ops.push("add");
                g.add(x, y)
            }
            1 => {
                let y = fresh(&mut g, &mut b, &mut rng, &[ROWS, COLS], 1.0);
                ops.push("sub");
                g.sub(y, x)
            }
            2 => {
                let y = pick(&mut rng, &pool);
                ops.push("mul");
                g.mul(x, y)
            }
            3 => {
                ops.push("tanh");
                g.tanh(x)
            }
            4 => {
                ops.push("sigmoid");
                g.sigmoid(x)
            }
            5 => {
                ops.push("relu");
                g.relu(x)
            }
            6 => {
                ops.push("exp");
                let s = g.scale(x, 0.5);
                g.exp(s)
            }
            7 => {
                ops.push("log");
                let s = g.sigmoid(x);
                let p = g.scale_shift(s, 1.0, 0.1);
                g.log(p)
            }
            8 => {
                ops.push("affine");
                let w = fresh(&mut g, &mut b, &mut rng, &[COLS, COLS], 1.0);
                let bias = fresh(&mut g, &mut b, &mut rng, &[COLS], 1.0);
                g.affine(x, w, bias)
            }
            9 => {
                ops.push("softmax");
                let tau = rng.random_range(0.5..3.0);
                g.softmax(x, tau)
            }
            10 => {
                ops.push("log_softmax");
                let tau = rng.random_range(0.5..3.0);
                g.log_softmax(x, tau)
            }
            11 => {
                ops.push("l2_normalize");
                let s = g.scale_shift(x, 1.0, 0.05);
                g.l2_normalize(s)
            }
            12 => {
                ops.push("stack/select");
                let y = pick(&mut rng, &pool);
                let s = g.stack(&[x, y]);
                // stacks along axis 1: [4, 2, 3]
                g.select(s, 1, rng.random_range(0..2))
            }
            13 => {
                ops.push("lstm");
                let wx = fresh(&mut g, &mut b, &mut rng, &[COLS, 4 * COLS], 0.7);
                let wh = fresh(&mut g, &mut b, &mut rng, &[COLS, 4 * COLS], 0.7);
                let bias = fresh(&mut g, &mut b, &mut rng, &[4 * COLS], 0.5);
                let y = pick(&mut rng, &pool);
                let s1 = g.lstm_step(x, None, wx, wh, bias, COLS);
                g.lstm_step(y, Some(s1), wx, wh, bias, COLS).0
            }
            14 => {
                ops.push("segment/conv1d/mean_pool");
                // [1, 2, 8] -> 4 segments of [2, 2] -> conv to 3 filters
                let series = fresh(&mut g, &mut b, &mut rng, &[1, 2, 8], 1.0);
                let w = fresh(&mut g, &mut b, &mut rng, &[COLS, 2, 2], 0.8);
                let bias = fresh(&mut g, &mut b, &mut rng, &[COLS], 0.3);
                let seg = g.segment(series, ROWS);
                let c = g.conv1d(seg, w, bias, 1);
                let r = g.relu(c);
                let p = g.mean_pool(r);
                g.add(p, x)
            }
            15 => {
                ops.push("matmul/slice");
                let w = fresh(&mut g, &mut b, &mut rng, &[COLS, COLS + 2], 1.0);
                let m = g.matmul(x, w);
                g.slice(m, 1, 1, 1 + COLS)
            }
            _ => {
                ops.push("scale_shift");
                let a = rng.random_range(-2.0..2.0);
                let c = rng.random_range(-1.0..1.0);
                g.scale_shift(x, a, c)
            }
        };
        pool.push(node);
    }
    let last = *pool.last().unwrap();
    let weights = g.constant(random_tensor(&mut rng, &[ROWS, COLS], 1.0));
    let weighted = g.mul(last, weights);
    let s = g.sum(weighted);
    // a second path through an earlier node keeps the graph non-linear in shape
    let early = pool[rng.random_range(0..pool.len())];
    let rows = g.sum_last(early);
    let m = g.mean(rows);
    let loss = g.add(s, m);
    RandomGraph {
        graph: g,
        bindings: b,
        loss,
        ops,
    }
}

pub fn toy_arch(n_channels: usize) -> Architecture {
    Architecture {
        n_channels,
        seq_len: 16,
        n_classes: 2,
        extractor: ExtractorConfig {
            n_segments: 4,
            conv_layers: vec![ConvLayer {
                filters: 3,
                kernel: 2,
                stride: 1,
            }],
            rnn_hidden: 3,
        },
        scorer: ScorerMode::RawLinear,
        temperature: 1.0,
    }
}

/// Worst relative error, over every parameter of the poor model, between
/// the analytic and central-difference gradients of the infusion objective
/// (target fit on poor data plus probability fit to rich outputs on pairs)
/// at a toy scale: 2 classes, 16 steps, 4 segments.
pub fn end_to_end_error(seed: u64) -> f64 {
    let spec = SyntheticSpec {
        n_classes: 2,
        seq_len: 16,
        n_latent: 2,
        rich_channels: 3,
        poor_channels: 2,
        rich_noise: vec![0.3; 3],
        poor_noise: vec![0.8; 2],
        rich_informativeness: vec![1.0; 3],
        poor_informativeness: vec![0.7; 2],
        n_rich: 0,
        n_poor: 6,
        n_paired: 5,
        ..SyntheticSpec::benchmark(seed)
    };
    let d = generate_synthetic(&spec).unwrap();
    let rich = TransferableModel::init(toy_arch(3), seed + 1).unwrap();
    let poor = TransferableModel::init(toy_arch(2), seed + 2).unwrap();
    let targets = rich_probability_targets(&d.paired, &rich).unwrap();
    let data = TrainData {
        labeled: Some(&d.poor),
        paired: Some(&targets),
    };
    let objective = target_objective();
    let mut worst: f64 = 0.0;
    for (name, point) in poor.bindings() {
        let err = grad_check(
            |p| {
                let mut m = poor.clone();
                m.set_params(&Bindings::from([(name.clone(), p.clone())]));
                let (v, grads) = objective_gradient(&m, &objective, &data)?;
                Ok((v, grads[&name].clone()))
            },
            &point,
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}
