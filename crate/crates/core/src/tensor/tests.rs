use alloc::string::ToString;
use alloc::vec;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(vec![0], vec![]).is_err());
}

#[test]
fn conv1d_hand_example() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let w = g.input("w");
    let b = g.input("b");
    let y = g.conv1d(x, w, b, 1);
    g.set_output("y", y);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
    bind.insert("w".into(), t(&[1, 1, 2], &[1.0, 1.0]));
    bind.insert("b".into(), t(&[1], &[0.0]));
    let out = g.eval(&bind).unwrap();
    assert_eq!(out["y"].values(), &[3.0, 5.0]);
    assert_eq!(out["y"].shape(), &[1, 1, 2]);
}

#[test]
fn conv1d_stride_and_channels() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let w = g.input("w");
    let b = g.input("b");
    let y = g.conv1d(x, w, b, 2);
    g.set_output("y", y);
    let mut bind = Bindings::new();
    // two channels, length 5, one filter of width 3
    bind.insert(
        "x".into(),
        t(&[1, 2, 5], &[1., 2., 3., 4., 5., 10., 20., 30., 40., 50.]),
    );
    bind.insert("w".into(), t(&[1, 2, 3], &[1., 0., -1., 0., 1., 0.]));
    bind.insert("b".into(), t(&[1], &[0.5]));
    let out = g.eval(&bind).unwrap();
    // o=0: (1-3) + 20 + .5 ; o=1: (3-5) + 40 + .5
    assert_eq!(out["y"].values(), &[18.5, 38.5]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let y = g.softmax(x, 1.0);
    g.set_output("p", y);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[1, 3], &[0.0, 0.0, 0.0]));
    let p = &g.eval(&bind).unwrap()["p"];
    for v in p.values() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn lstm_with_zero_weights_yields_zero_state() {
    let hidden = 3;
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let wx = g.input("wx");
    let wh = g.input("wh");
    let b = g.input("b");
    let (h1, c1) = g.lstm_step(x, None, wx, wh, b, hidden);
    let (h2, _) = g.lstm_step(x, Some((h1, c1)), wx, wh, b, hidden);
    g.set_output("h1", h1);
    g.set_output("h2", h2);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[2, 2], &[0.3, -4.0, 7.0, 1.5]));
    bind.insert("wx".into(), Tensor::zeros(&[2, 4 * hidden]));
    bind.insert("wh".into(), Tensor::zeros(&[hidden, 4 * hidden]));
    bind.insert("b".into(), Tensor::zeros(&[4 * hidden]));
    let out = g.eval(&bind).unwrap();
    assert!(out["h1"].values().iter().all(|&v| v == 0.0));
    assert!(out["h2"].values().iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_of_sum_of_squares() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let sq = g.mul(x, x);
    let s = g.sum(sq);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[1], &[3.0]));
    let grads = g.backward(&bind, s).unwrap();
    assert_eq!(grads["x"].values(), &[6.0]);
}

#[test]
fn gradient_of_probability_mass_is_zero() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let p = g.softmax(x, 0.7);
    let s = g.sum(p);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[1, 4], &[0.2, -1.0, 3.0, 0.5]));
    let grads = g.backward(&bind, s).unwrap();
    for v in grads["x"].values() {
        assert!(v.abs() < 1e-15, "{v}");
    }
}

#[test]
fn unused_bindings_get_zero_gradients() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let _unused = g.input("u");
    let s = g.sum(x);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[2], &[1.0, 2.0]));
    bind.insert("u".into(), t(&[3], &[1.0, 2.0, 3.0]));
    bind.insert("extra".into(), t(&[1], &[1.0]));
    let grads = g.backward(&bind, s).unwrap();
    assert_eq!(grads["u"].values(), &[0.0, 0.0, 0.0]);
    assert_eq!(grads["extra"].values(), &[0.0]);
    assert_eq!(grads["x"].values(), &[1.0, 1.0]);
}

#[test]
fn shape_mismatch_names_the_node() {
    let mut g = ExprGraph::new();
    let a = g.input("a");
    let b = g.input("b");
    let c = g.add(a, b);
    g.label(c, "residual");
    g.set_output("c", c);
    let mut bind = Bindings::new();
    bind.insert("a".into(), t(&[2], &[1.0, 2.0]));
    bind.insert("b".into(), t(&[3], &[1.0, 2.0, 3.0]));
    match g.eval(&bind) {
        Err(Error::ShapeMismatch { node, .. }) => assert!(node.contains("residual"), "{node}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unbound_input_is_reported() {
    let mut g = ExprGraph::new();
    let a = g.input("weights");
    let s = g.sum(a);
    g.set_output("s", s);
    assert_eq!(
        g.eval(&Bindings::new()).unwrap_err(),
        Error::UnboundInput("weights".to_string())
    );
}

#[test]
fn non_scalar_output_is_rejected() {
    let mut g = ExprGraph::new();
    let a = g.input("a");
    let y = g.tanh(a);
    let mut bind = Bindings::new();
    bind.insert("a".into(), t(&[2], &[1.0, 2.0]));
    assert!(matches!(g.backward(&bind, y), Err(Error::NonScalarOutput { .. })));
}

#[test]
fn log_of_zero_is_non_finite() {
    let mut g = ExprGraph::new();
    let a = g.input("a");
    let y = g.log(a);
    g.set_output("y", y);
    let mut bind = Bindings::new();
    bind.insert("a".into(), t(&[1], &[0.0]));
    assert!(matches!(g.eval(&bind), Err(Error::NonFinite(_))));
}

#[test]
fn linear_function_checks_exactly() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let w = g.input("w");
    let b = g.input("b");
    let y = g.affine(x, w, b);
    let s = g.sum(y);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[2, 3], &[1., -2., 0.5, 3., 1., -1.]));
    bind.insert("w".into(), t(&[3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]));
    bind.insert("b".into(), t(&[2], &[0.0, 1.0]));
    for name in ["x", "w", "b"] {
        let err = grad_check_graph(&g, &bind, s, name, 1e-5).unwrap();
        assert!(err < 1e-10, "{name}: {err}");
    }
}

#[test]
fn softmax_dense_passes_gradient_check() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let w = g.input("w");
    let b = g.input("b");
    let y = g.input("y");
    let z = g.affine(x, w, b);
    let p = g.softmax(z, 2.5);
    let d = g.sub(p, y);
    let sq = g.mul(d, d);
    let s = g.sum(sq);
    let lp = g.log_softmax(z, 0.5);
    let ly = g.mul(lp, y);
    let ce = g.sum(ly);
    let total = g.sub(s, ce);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[2, 3], &[1., -2., 0.5, 3., 1., -1.]));
    bind.insert("w".into(), t(&[3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]));
    bind.insert("b".into(), t(&[2], &[0.0, 1.0]));
    bind.insert("y".into(), t(&[2, 2], &[1.0, 0.0, 0.3, 0.7]));
    for name in ["x", "w", "b"] {
        let err = grad_check_graph(&g, &bind, total, name, 1e-5).unwrap();
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn grad_check_rejects_bad_step() {
    let p = Tensor::scalar(1.0);
    assert!(grad_check(|x| Ok((x.item(), Tensor::scalar(1.0))), &p, 0.0).is_err());
    assert!(matches!(
        grad_check(|_| Ok((f64::NAN, Tensor::scalar(1.0))), &p, 1e-5),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn evaluation_is_bitwise_pure() {
    let mut g = ExprGraph::new();
    let x = g.input("x");
    let y = g.sigmoid(x);
    let z = g.softmax(y, 0.3);
    g.set_output("z", z);
    let mut bind = Bindings::new();
    bind.insert("x".into(), t(&[2, 3], &[1., -2., 0.5, 3., 1., -1.]));
    let a = g.eval(&bind).unwrap();
    let b = g.eval(&bind).unwrap();
    assert_eq!(a, b);
}
