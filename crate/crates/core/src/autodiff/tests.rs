use std::collections::HashMap;

use super::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[test]
fn sigmoid_at_zero_is_half() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(0.0)).unwrap();
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.scalar_value(s).unwrap(), 0.5);
    let d = g.grad(s, &[x]).unwrap();
    assert_eq!(g.scalar_value(d.get(x).unwrap()).unwrap(), 0.25);
}

#[test]
fn affine_score_value() {
    let mut g = Graph::new();
    let w = g.variable(Tensor::vector(vec![3.0, 4.0])).unwrap();
    let x = g.vector(vec![1.0, 1.0]).unwrap();
    let b = g.variable(Tensor::scalar(0.0)).unwrap();
    let d = g.dot(w, x).unwrap();
    let f = g.sub(d, b).unwrap();
    assert_eq!(g.scalar_value(f).unwrap(), 7.0);

    let s = g.scalar(4.0).unwrap();
    let one = g.scalar(1.0).unwrap();
    let z = g.mul(s, one).unwrap();
    let sig = g.sigmoid(z).unwrap();
    assert!(close(g.scalar_value(sig).unwrap(), 0.9820, 1e-4));
}

#[test]
fn gradient_of_linear_map_is_weight() {
    let mut g = Graph::new();
    let w = g.constant(Tensor::vector(vec![0.3, -1.7])).unwrap();
    let x = g.variable(Tensor::vector(vec![5.0, -2.0])).unwrap();
    let b = g.scalar(0.25).unwrap();
    let d = g.dot(w, x).unwrap();
    let f = g.sub(d, b).unwrap();
    let grads = g.grad(f, &[x]).unwrap();
    assert_eq!(g.value(grads.get(x).unwrap()).unwrap().data(), &[0.3, -1.7]);
}

#[test]
fn penalty_derivative_through_input_gradient() {
    // f(x) = w·x with scalar w = 3; (|∂f/∂x| − 1)² has d/dw = 2(|w| − 1)·sign(w) = 4.
    let mut g = Graph::new();
    let w = g.variable(Tensor::scalar(3.0)).unwrap();
    let x = g.variable(Tensor::scalar(0.7)).unwrap();
    let f = g.mul(w, x).unwrap();
    let dx = g.grad(f, &[x]).unwrap().get(x).unwrap();
    let a = g.abs(dx).unwrap();
    let m = g.add_scalar(a, -1.0).unwrap();
    let p = g.power(m, 2.0).unwrap();
    assert_eq!(g.scalar_value(p).unwrap(), 4.0);
    let dw = g.grad(p, &[w]).unwrap().get(w).unwrap();
    assert_eq!(g.scalar_value(dw).unwrap(), 4.0);
}

#[test]
fn quotient_is_exact_and_broadcasts() {
    let mut g = Graph::new();
    let v = g.variable(Tensor::vector(vec![7.62148348980618, -3.0])).unwrap();
    let s = g.variable(Tensor::scalar(7.62148348980618)).unwrap();
    let q = g.div(v, s).unwrap();
    assert_eq!(g.value(q).unwrap().data()[0], 1.0);
    let total = g.sum(q).unwrap();
    let grads = g.grad(total, &[v, s]).unwrap();
    let inv = 1.0 / 7.62148348980618;
    let gv = g.value(grads.get(v).unwrap()).unwrap().data().to_vec();
    assert!(gv.iter().all(|x| close(*x, inv, 1e-15)));
    let expected = -(7.62148348980618 - 3.0) * inv * inv;
    assert!(close(g.scalar_value(grads.get(s).unwrap()).unwrap(), expected, 1e-14));
}

#[test]
fn primitive_examples() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(-3.0)).unwrap();
    let a = g.abs(x).unwrap();
    assert_eq!(g.scalar_value(a).unwrap(), 3.0);
    let d = g.grad(a, &[x]).unwrap().get(x).unwrap();
    assert_eq!(g.scalar_value(d).unwrap(), -1.0);

    let v = g.vector(vec![3.0, -4.0, 1.0]).unwrap();
    let m = g.max_reduce(v).unwrap();
    assert_eq!(g.scalar_value(m).unwrap(), 3.0);

    let y = g.scalar(-1.0).unwrap();
    let l = g.leaky_relu(y, 0.2).unwrap();
    assert_eq!(g.scalar_value(l).unwrap(), -0.2);
}

#[test]
fn abs_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(0.0)).unwrap();
    let a = g.abs(x).unwrap();
    let d = g.grad(a, &[x]).unwrap().get(x).unwrap();
    assert_eq!(g.scalar_value(d).unwrap(), 0.0);
}

#[test]
fn max_reduce_ties_route_to_lowest_index() {
    let mut g = Graph::new();
    let v = g.variable(Tensor::vector(vec![1.0, 5.0, 5.0, 5.0])).unwrap();
    let m = g.max_reduce(v).unwrap();
    let d = g.grad(m, &[v]).unwrap().get(v).unwrap();
    assert_eq!(g.value(d).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
}

/// Scalar primitives against central differences of an independent closure.
#[test]
fn unary_rules_match_central_differences() {
    type Build = fn(&mut Graph, NodeId) -> NodeId;
    type Case = (&'static str, Build, fn(f64) -> f64, f64);
    let cases: Vec<Case> = vec![
        ("exp", |g, x| g.exp(x).unwrap(), f64::exp, 0.3),
        ("log", |g, x| g.log(x).unwrap(), f64::ln, 1.7),
        ("sigmoid", |g, x| g.sigmoid(x).unwrap(), |x| 1.0 / (1.0 + (-x).exp()), -0.8),
        ("tanh", |g, x| g.tanh(x).unwrap(), f64::tanh, 0.4),
        ("power", |g, x| g.power(x, 1.5).unwrap(), |x| x.powf(1.5), 2.2),
        ("leaky", |g, x| g.leaky_relu(x, 0.2).unwrap(), |x| if x > 0.0 { x } else { 0.2 * x }, -0.6),
        ("neg", |g, x| g.neg(x).unwrap(), |x| -x, 0.9),
    ];
    for (name, build, reference, at) in cases {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(at)).unwrap();
        let y = build(&mut g, x);
        let first = g.grad(y, &[x]).unwrap().get(x).unwrap();
        let fd = central_diff(reference, at, 1e-6);
        let ad = g.scalar_value(first).unwrap();
        assert!(close(ad, fd, 1e-7 * (1.0 + fd.abs())), "{name}: {ad} vs {fd}");

        // Second derivative through the emitted backward nodes.
        let second = g.grad(first, &[x]).unwrap().get(x).unwrap();
        let fd2 = (reference(at + 1e-4) - 2.0 * reference(at) + reference(at - 1e-4)) / 1e-8;
        let ad2 = g.scalar_value(second).unwrap();
        assert!(close(ad2, fd2, 1e-4 * (1.0 + fd2.abs())), "{name}'': {ad2} vs {fd2}");
    }
}

#[test]
fn matvec_and_outer_rules() {
    // s = sum(tanh(M v)) ; check dM and dv against central differences.
    let m0 = vec![0.2, -0.5, 1.1, 0.7, 0.3, -0.9];
    let v0 = vec![0.4, -1.2];
    let eval = |m: &[f64], v: &[f64]| -> f64 {
        (0..3)
            .map(|i| (m[2 * i] * v[0] + m[2 * i + 1] * v[1]).tanh())
            .sum()
    };
    let mut g = Graph::new();
    let m = g.variable(Tensor::matrix(3, 2, m0.clone())).unwrap();
    let v = g.variable(Tensor::vector(v0.clone())).unwrap();
    let mv = g.matvec(m, v).unwrap();
    let t = g.tanh(mv).unwrap();
    let s = g.sum(t).unwrap();
    let grads = g.grad(s, &[m, v]).unwrap();
    let dm = g.value(grads.get(m).unwrap()).unwrap().data().to_vec();
    let dv = g.value(grads.get(v).unwrap()).unwrap().data().to_vec();
    let h = 1e-6;
    for k in 0..6 {
        let (mut p, mut q) = (m0.clone(), m0.clone());
        p[k] += h;
        q[k] -= h;
        let fd = (eval(&p, &v0) - eval(&q, &v0)) / (2.0 * h);
        assert!(close(dm[k], fd, 1e-8), "dM[{k}]");
    }
    for k in 0..2 {
        let (mut p, mut q) = (v0.clone(), v0.clone());
        p[k] += h;
        q[k] -= h;
        let fd = (eval(&m0, &p) - eval(&m0, &q)) / (2.0 * h);
        assert!(close(dv[k], fd, 1e-8), "dv[{k}]");
    }

    let a = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let b = g.variable(Tensor::vector(vec![3.0, -1.0, 0.5])).unwrap();
    let o = g.outer(a, b).unwrap();
    let sq = g.power(o, 2.0).unwrap();
    let s = g.sum(sq).unwrap();
    let grads = g.grad(s, &[a, b]).unwrap();
    // d/da_i sum_j (a_i b_j)^2 = 2 a_i |b|^2 ; |b|^2 = 10.25
    assert_eq!(g.value(grads.get(a).unwrap()).unwrap().data(), &[20.5, 41.0]);
    // d/db_j = 2 b_j |a|^2 ; |a|^2 = 5
    assert_eq!(g.value(grads.get(b).unwrap()).unwrap().data(), &[30.0, -10.0, 5.0]);
}

#[test]
fn unreachable_variable_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let y = g.variable(Tensor::vector(vec![3.0, 4.0, 5.0])).unwrap();
    let s = g.sum(x).unwrap();
    let grads = g.grad(s, &[x, y]).unwrap();
    assert_eq!(g.value(grads.get(y).unwrap()).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn error_paths() {
    let mut g = Graph::new();
    let v = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let w = g.vector(vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(g.add(v, w), Err(Error::ShapeMismatch { op: OpKind::Add, .. })));
    assert!(matches!(g.grad(v, &[v]), Err(Error::NotScalar(_))));
    let s = g.sum(v).unwrap();
    assert!(matches!(g.grad(s, &[]), Err(Error::EmptyWrt)));
    assert!(matches!(g.grad(s, &[w]), Err(Error::NotVariable(_))));

    let z = g.scalar(0.0).unwrap();
    match g.log(z) {
        Err(Error::NonFinite { op, .. }) => assert_eq!(op, OpKind::Log),
        other => panic!("expected non-finite error, got {other:?}"),
    }

    let mut h = Graph::new();
    let x = h.input(Shape::Scalar);
    let y = h.exp(x).unwrap();
    assert!(h.value(y).is_err());
    assert!(matches!(h.forward(&HashMap::new()), Err(Error::UnboundVariable(id)) if id == x));
    let values = h
        .forward(&HashMap::from([(x, Tensor::scalar(0.0))]))
        .unwrap();
    assert_eq!(values[y.index()].item(), 1.0);
}

#[test]
fn forward_reports_non_finite_node() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(1.0)).unwrap();
    let l = g.log(x).unwrap();
    let err = g
        .forward(&HashMap::from([(x, Tensor::scalar(-1.0))]))
        .unwrap_err();
    match err {
        Error::NonFinite { node, op } => {
            assert_eq!(node, l);
            assert_eq!(op, OpKind::Log);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn forward_is_bit_identical_and_tracks_backward_nodes() {
    let mut g = Graph::new();
    let w = g.variable(Tensor::scalar(0.8)).unwrap();
    let x = g.variable(Tensor::scalar(1.3)).unwrap();
    let z = g.mul(w, x).unwrap();
    let f = g.tanh(z).unwrap();
    let dx = g.grad(f, &[x]).unwrap().get(x).unwrap();
    let bind = HashMap::from([(w, Tensor::scalar(-0.4))]);
    let a = g.forward(&bind).unwrap();
    let b = g.forward(&bind).unwrap();
    assert_eq!(a, b);
    // ∂/∂x tanh(wx) = w(1 − tanh²(wx)), re-evaluated at the new w.
    let t = (-0.4f64 * 1.3).tanh();
    assert!(close(a[dx.index()].item(), -0.4 * (1.0 - t * t), 1e-15));
}

#[test]
fn linearity_of_grad() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![0.3, -0.8, 1.4])).unwrap();
    let t = g.tanh(x).unwrap();
    let f = g.sum(t).unwrap();
    let e = g.exp(x).unwrap();
    let m = g.max_reduce(e).unwrap();
    let sq = g.power(x, 2.0).unwrap();
    let s = g.mean(sq).unwrap();
    let h = g.add(m, s).unwrap();

    for (a, b) in [(0.5, -2.0), (4.0, 0.25), (-1.0, 8.0)] {
        let fa = g.scale(f, a).unwrap();
        let hb = g.scale(h, b).unwrap();
        let combo = g.add(fa, hb).unwrap();
        let gc = g.grad(combo, &[x]).unwrap().get(x).unwrap();
        let gf = g.grad(f, &[x]).unwrap().get(x).unwrap();
        let gh = g.grad(h, &[x]).unwrap().get(x).unwrap();
        let c = g.value(gc).unwrap().data().to_vec();
        let vf = g.value(gf).unwrap().data().to_vec();
        let vh = g.value(gh).unwrap().data().to_vec();
        for i in 0..3 {
            assert_eq!(c[i], a * vf[i] + b * vh[i]);
        }
    }
}

#[test]
fn faulty_rule_is_scaled() {
    let mut g = Graph::with_faulty_rule(OpKind::Tanh);
    let x = g.variable(Tensor::scalar(0.0)).unwrap();
    let t = g.tanh(x).unwrap();
    let d = g.grad(t, &[x]).unwrap().get(x).unwrap();
    assert!(close(g.scalar_value(d).unwrap(), 1.1, 1e-15));
}
