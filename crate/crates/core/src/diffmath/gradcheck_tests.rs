//! Finite-difference checks for every primitive.

use super::*;
use crate::rng::SeededRng;

const H: f64 = 1e-5;

fn random_tensor(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

/// Evaluates `f` with `x` as a parameter and returns (analytic, central-difference) gradients.
fn grads<F>(x: &Tensor, f: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let v = tape.param("x", x).unwrap();
    let out = f(&mut tape, v);
    let analytic = tape.backward(out).unwrap().get("x").unwrap().data().to_vec();

    let eval = |t: &Tensor| {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone()).unwrap();
        let out = f(&mut tape, v);
        tape.value(out).item().unwrap()
    };
    let numeric = (0..x.numel())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += H;
            let mut minus = x.clone();
            minus.data_mut()[i] -= H;
            (eval(&plus) - eval(&minus)) / (2.0 * H)
        })
        .collect();
    (analytic, numeric)
}

fn max_rel_err(a: &[f64], n: &[f64]) -> f64 {
    a.iter()
        .zip(n)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[test]
fn matmul_gradient_both_sides() {
    let mut rng = SeededRng::new(11);
    let a = random_tensor(&mut rng, &[3, 3], -2.0, 2.0);
    let b = random_tensor(&mut rng, &[3, 3], -2.0, 2.0);
    let bb = b.clone();
    let (an, nu) = grads(&a, move |t, x| {
        let bv = t.constant(bb.clone()).unwrap();
        let c = t.matmul(x, bv).unwrap();
        t.sum(c).unwrap()
    });
    assert!(max_rel_err(&an, &nu) < 1e-6);

    let aa = a.clone();
    let (an, nu) = grads(&b, move |t, x| {
        let av = t.constant(aa.clone()).unwrap();
        let c = t.matmul(av, x).unwrap();
        let s = t.square(c).unwrap();
        t.sum(s).unwrap()
    });
    assert!(max_rel_err(&an, &nu) < 1e-6);
}

#[test]
fn tanh_derivative_at_point() {
    let x = Tensor::scalar(0.3);
    let (an, nu) = grads(&x, |t, v| t.tanh(v).unwrap());
    assert!(max_rel_err(&an, &nu) < 1e-6);
    let expected = 1.0 - 0.3f64.tanh().powi(2);
    assert!((an[0] - expected).abs() < 1e-15);
}

#[test]
fn every_elementwise_kind_matches_finite_differences() {
    let mut rng = SeededRng::new(5);
    let unary = [
        ElementwiseKind::Exp,
        ElementwiseKind::Tanh,
        ElementwiseKind::Sigmoid,
        ElementwiseKind::Softplus,
        ElementwiseKind::Neg,
        ElementwiseKind::Square,
    ];
    for _ in 0..20 {
        let x = random_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        let w = random_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        for kind in unary {
            let ww = w.clone();
            let (an, nu) = grads(&x, move |t, v| {
                let y = t.elementwise(kind, v, None).unwrap();
                let wv = t.constant(ww.clone()).unwrap();
                let p = t.mul(y, wv).unwrap();
                t.sum(p).unwrap()
            });
            let tol = if kind == ElementwiseKind::Exp { 1e-4 } else { 1e-5 };
            assert!(max_rel_err(&an, &nu) < tol, "{kind:?}");
        }
        // log on strictly positive inputs
        let pos = random_tensor(&mut rng, &[2, 3], 0.2, 2.0);
        let (an, nu) = grads(&pos, |t, v| {
            let y = t.log(v).unwrap();
            t.sum(y).unwrap()
        });
        assert!(max_rel_err(&an, &nu) < 1e-5);

        for kind in [ElementwiseKind::Add, ElementwiseKind::Sub, ElementwiseKind::Mul] {
            let ww = w.clone();
            // x as left operand
            let (an, nu) = grads(&x, move |t, v| {
                let wv = t.constant(ww.clone()).unwrap();
                let y = t.elementwise(kind, v, Some(wv)).unwrap();
                let sq = t.square(y).unwrap();
                t.sum(sq).unwrap()
            });
            assert!(max_rel_err(&an, &nu) < 1e-5, "{kind:?} lhs");
            let ww = w.clone();
            // x as right operand
            let (an, nu) = grads(&x, move |t, v| {
                let wv = t.constant(ww.clone()).unwrap();
                let y = t.elementwise(kind, wv, Some(v)).unwrap();
                let sq = t.square(y).unwrap();
                t.sum(sq).unwrap()
            });
            assert!(max_rel_err(&an, &nu) < 1e-5, "{kind:?} rhs");
            // broadcast vector operand on either side
            let vec3 = random_tensor(&mut rng, &[3], -2.0, 2.0);
            let xx = x.clone();
            let (an, nu) = grads(&vec3, move |t, v| {
                let xv = t.constant(xx.clone()).unwrap();
                let y = t.elementwise(kind, xv, Some(v)).unwrap();
                let sq = t.square(y).unwrap();
                t.sum(sq).unwrap()
            });
            assert!(max_rel_err(&an, &nu) < 1e-5, "{kind:?} bcast rhs");
            let xx = x.clone();
            let (an, nu) = grads(&vec3, move |t, v| {
                let xv = t.constant(xx.clone()).unwrap();
                let y = t.elementwise(kind, v, Some(xv)).unwrap();
                let sq = t.square(y).unwrap();
                t.sum(sq).unwrap()
            });
            assert!(max_rel_err(&an, &nu) < 1e-5, "{kind:?} bcast lhs");
        }
    }
}

#[test]
fn concat_gradient_splits() {
    let mut rng = SeededRng::new(17);
    let x = random_tensor(&mut rng, &[4, 2], -2.0, 2.0);
    let h = random_tensor(&mut rng, &[4, 3], -2.0, 2.0);
    let w = random_tensor(&mut rng, &[5, 1], -2.0, 2.0);
    let (hh, ww) = (h.clone(), w.clone());
    let (an, nu) = grads(&x, move |t, v| {
        let hv = t.constant(hh.clone()).unwrap();
        let c = t.concat_last(v, hv).unwrap();
        let wv = t.constant(ww.clone()).unwrap();
        let y = t.matmul(c, wv).unwrap();
        let y = t.tanh(y).unwrap();
        t.sum(y).unwrap()
    });
    assert!(max_rel_err(&an, &nu) < 1e-5);
    let (xx, ww) = (x.clone(), w.clone());
    let (an, nu) = grads(&h, move |t, v| {
        let xv = t.constant(xx.clone()).unwrap();
        let c = t.concat_last(xv, v).unwrap();
        let wv = t.constant(ww.clone()).unwrap();
        let y = t.matmul(c, wv).unwrap();
        let y = t.tanh(y).unwrap();
        t.sum(y).unwrap()
    });
    assert!(max_rel_err(&an, &nu) < 1e-5);
}

#[test]
fn slices_and_row_concat() {
    let mut rng = SeededRng::new(23);
    let x = random_tensor(&mut rng, &[4, 5], -2.0, 2.0);
    let (an, nu) = grads(&x, |t, v| {
        let a = t.slice_last(v, 1, 3).unwrap();
        let b = t.slice_rows(v, 2, 4).unwrap();
        let c = t.concat_rows(&[b, v]).unwrap();
        let a2 = t.square(a).unwrap();
        let c2 = t.tanh(c).unwrap();
        let sa = t.sum(a2).unwrap();
        let sc = t.sum(c2).unwrap();
        t.add(sa, sc).unwrap()
    });
    assert!(max_rel_err(&an, &nu) < 1e-5);
}

#[test]
fn mean_of_squares() {
    let mut rng = SeededRng::new(29);
    let x = random_tensor(&mut rng, &[7], -2.0, 2.0);
    let (an, nu) = grads(&x, |t, v| {
        let s = t.square(v).unwrap();
        t.mean(s).unwrap()
    });
    for (i, a) in an.iter().enumerate() {
        assert!((a - 2.0 * x.data()[i] / 7.0).abs() < 1e-15);
    }
    assert!(max_rel_err(&an, &nu) < 1e-6);
}

#[test]
fn axis_reductions() {
    let mut rng = SeededRng::new(31);
    let x = random_tensor(&mut rng, &[2, 3, 4], -2.0, 2.0);
    for axis in 0..3 {
        for kind in [ReduceKind::Sum, ReduceKind::Mean] {
            let (an, nu) = grads(&x, move |t, v| {
                let r = t.reduce(v, kind, Some(axis)).unwrap();
                let r = t.square(r).unwrap();
                t.sum(r).unwrap()
            });
            assert!(max_rel_err(&an, &nu) < 1e-5, "{kind:?} axis {axis}");
        }
    }
}

#[test]
fn scale_and_shift() {
    let x = Tensor::vector(vec![0.4, -1.2]);
    let (an, nu) = grads(&x, |t, v| {
        let a = t.scale(v, -3.0).unwrap();
        let b = t.add_scalar(a, 0.5).unwrap();
        let c = t.one_minus(b).unwrap();
        let d = t.square(c).unwrap();
        t.sum(d).unwrap()
    });
    assert!(max_rel_err(&an, &nu) < 1e-6);
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = SeededRng::new(41);
    let a = random_tensor(&mut rng, &[6, 4], -2.0, 2.0);
    let b = random_tensor(&mut rng, &[4, 3], -2.0, 2.0);
    let run = || {
        let mut tape = Tape::new();
        let av = tape.param("a", &a).unwrap();
        let bv = tape.param("b", &b).unwrap();
        let c = tape.matmul(av, bv).unwrap();
        let c = tape.softplus(c).unwrap();
        let s = tape.mean(c).unwrap();
        tape.backward(s).unwrap()
    };
    let g1 = run();
    let g2 = run();
    for (name, t) in g1.iter() {
        let other = g2.get(name).unwrap();
        for (x, y) in t.data().iter().zip(other.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn independent_tapes_on_threads() {
    let handles: Vec<_> = (0..4)
        .map(|i| {
            std::thread::spawn(move || {
                let mut tape = Tape::new();
                let x = tape.param("x", &Tensor::scalar(i as f64)).unwrap();
                let y = tape.square(x).unwrap();
                tape.backward(y).unwrap().get("x").unwrap().data()[0]
            })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        assert_eq!(h.join().unwrap(), 2.0 * i as f64);
    }
}
