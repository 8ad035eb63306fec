//! Central finite-difference checks for every primitive on the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{params_from, AttnGeom, Graph, Var};
use super::tensor::{ParamSet, Tensor};

const H: f32 = 1e-3;
const TOL: f32 = 1e-2;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn eval(params: &ParamSet, f: &dyn Fn(&mut Graph, &ParamSet) -> Var) -> f32 {
    let mut g = Graph::new();
    let l = f(&mut g, params);
    g.value(l)[0]
}

/// Compares the analytic directional derivative along a random direction
/// with a central difference, for `trials` directions.
fn check_jvp(params: &ParamSet, f: &dyn Fn(&mut Graph, &ParamSet) -> Var, trials: usize, seed: u64) {
    let mut p = params.clone();
    let mut g = Graph::new();
    let loss = f(&mut g, &p);
    g.backward(loss, &mut p).unwrap();
    let grads: Vec<Vec<f32>> = p.iter().map(|(_, t)| t.grad().unwrap().to_vec()).collect();
    let mut r = rng(seed);
    for trial in 0..trials {
        let dirs: Vec<Vec<f32>> = p.iter().map(|(_, t)| (0..t.numel()).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let analytic: f64 = grads
            .iter()
            .zip(&dirs)
            .flat_map(|(g, d)| g.iter().zip(d).map(|(&a, &b)| a as f64 * b as f64))
            .sum();
        let shifted = |sign: f32| {
            let mut q = params.clone();
            for (i, d) in dirs.iter().enumerate() {
                q.tensor_mut(i).data_mut().iter_mut().zip(d).for_each(|(x, &u)| *x += sign * H * u);
            }
            eval(&q, f) as f64
        };
        let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * H as f64);
        let denom = analytic.abs().max(numeric.abs()).max(1e-2);
        let rel = (analytic - numeric).abs() / denom;
        assert!(rel < TOL as f64, "trial {trial}: analytic {analytic} numeric {numeric} rel {rel}");
    }
}

fn probe(g: &mut Graph, out: Var, seed: u64) -> Var {
    let n = g.value(out).len();
    let mut r = rng(seed);
    let w: Vec<f32> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    g.weighted_sum(out, &w).unwrap()
}

#[test]
fn sum_gives_ones_and_constant_gives_zeros() {
    let mut p = params_from(vec![("p", Tensor::full(&[2, 3], 0.3)), ("unused", Tensor::full(&[2], 1.0))]);
    let mut g = Graph::new();
    let v = g.param(&p, 0);
    let s = g.sum(v);
    g.backward(s, &mut p).unwrap();
    assert_eq!(p.tensor(0).grad().unwrap(), &[1.0; 6]);
    assert_eq!(p.tensor(1).grad().unwrap(), &[0.0; 2]);
    assert!(g.is_empty());

    let mut p = params_from(vec![("p", Tensor::full(&[3], 0.3))]);
    let mut g = Graph::new();
    let c = g.input(vec![2], vec![1.0, 2.0]).unwrap();
    let s = g.sum(c);
    g.backward(s, &mut p).unwrap();
    assert_eq!(p.tensor(0).grad().unwrap(), &[0.0; 3]);
}

#[test]
fn backward_without_forward_fails() {
    let mut p = params_from(vec![("p", Tensor::scalar(1.0))]);
    let mut g = Graph::new();
    let v = g.param(&p, 0);
    let s = g.sum(v);
    g.backward(s, &mut p).unwrap();
    assert!(matches!(g.backward(s, &mut p), Err(crate::NnError::NoForward)));
}

#[test]
fn matmul_and_linear() {
    let mut r = rng(1);
    let p = params_from(vec![
        ("a", Tensor::randn(&[4, 5], 1.0, &mut r)),
        ("b", Tensor::randn(&[5, 3], 1.0, &mut r)),
        ("bias", Tensor::randn(&[3], 1.0, &mut r)),
    ]);
    check_jvp(&p, &|g, p| {
        let (a, b) = (g.param(p, 0), g.param(p, 1));
        let y = g.matmul(a, b).unwrap();
        probe(g, y, 10)
    }, 5, 2);
    check_jvp(&p, &|g, p| {
        let (a, b, c) = (g.param(p, 0), g.param(p, 1), g.param(p, 2));
        let y = g.linear(a, b, c).unwrap();
        probe(g, y, 11)
    }, 5, 3);
}

#[test]
fn add_scale_relu() {
    let mut r = rng(2);
    let p = params_from(vec![("a", Tensor::randn(&[3, 4], 1.0, &mut r)), ("b", Tensor::randn(&[3, 4], 1.0, &mut r))]);
    check_jvp(&p, &|g, p| {
        let (a, b) = (g.param(p, 0), g.param(p, 1));
        let s = g.add(a, b).unwrap();
        let s = g.scale(s, 0.7);
        let s = g.add_const(s, &[0.1, -0.2, 0.3, 0.0]).unwrap();
        let y = g.relu(s);
        probe(g, y, 12)
    }, 5, 4);
}

#[test]
fn layer_norm() {
    let mut r = rng(3);
    let p = params_from(vec![
        ("x", Tensor::randn(&[5, 6], 1.0, &mut r)),
        ("g", Tensor::randn(&[6], 1.0, &mut r)),
        ("b", Tensor::randn(&[6], 1.0, &mut r)),
    ]);
    check_jvp(&p, &|g, p| {
        let (x, ga, b) = (g.param(p, 0), g.param(p, 1), g.param(p, 2));
        let y = g.layer_norm(x, ga, b).unwrap();
        probe(g, y, 13)
    }, 8, 5);
}

#[test]
fn embedding_lookup() {
    let mut r = rng(4);
    let p = params_from(vec![("t", Tensor::randn(&[7, 3], 1.0, &mut r))]);
    check_jvp(&p, &|g, p| {
        let t = g.param(p, 0);
        let y = g.embedding(t, &[0, 3, 3, 6, 1]).unwrap();
        probe(g, y, 14)
    }, 5, 6);
    let mut g = Graph::new();
    let t = g.param(&p, 0);
    assert!(g.embedding(t, &[7]).is_err());
}

#[test]
fn softmax_rows() {
    let mut r = rng(5);
    let p = params_from(vec![("x", Tensor::randn(&[4, 5], 1.0, &mut r))]);
    check_jvp(&p, &|g, p| {
        let x = g.param(p, 0);
        let y = g.softmax(x);
        probe(g, y, 15)
    }, 8, 7);
}

#[test]
fn attention_with_masks() {
    let mut r = rng(6);
    let (batch, lq, lk, dim) = (2, 3, 4, 6);
    let p = params_from(vec![
        ("q", Tensor::randn(&[batch * lq, dim], 1.0, &mut r)),
        ("k", Tensor::randn(&[batch * lk, dim], 1.0, &mut r)),
        ("v", Tensor::randn(&[batch * lk, dim], 1.0, &mut r)),
    ]);
    for causal in [false, true] {
        let geom = AttnGeom {
            batch,
            len_q: lq,
            len_k: lk,
            heads: 2,
            key_mask: vec![true, true, true, false, true, true, false, false],
            causal,
        };
        check_jvp(&p, &|g, p| {
            let (q, k, v) = (g.param(p, 0), g.param(p, 1), g.param(p, 2));
            let y = g.attention(q, k, v, geom.clone()).unwrap();
            probe(g, y, 16)
        }, 8, 8);
    }
}

#[test]
fn fully_masked_attention_row_is_zero() {
    let p = params_from(vec![("x", Tensor::full(&[2, 2], 1.0))]);
    let mut g = Graph::new();
    let x = g.param(&p, 0);
    let geom = AttnGeom { batch: 1, len_q: 2, len_k: 2, heads: 1, key_mask: vec![false, false], causal: false };
    let y = g.attention(x, x, x, geom).unwrap();
    assert_eq!(g.value(y), &[0.0; 4]);
}

#[test]
fn cross_entropy_grad() {
    let mut r = rng(7);
    let p = params_from(vec![("l", Tensor::randn(&[6, 7], 1.0, &mut r))]);
    check_jvp(&p, &|g, p| {
        let l = g.param(p, 0);
        g.cross_entropy(l, &[0, 6, 3, 2, 2, 1], &[true, true, false, true, true, true]).unwrap()
    }, 8, 9);
}

#[test]
fn power_norm_grad() {
    let mut r = rng(8);
    let p = params_from(vec![("x", Tensor::randn(&[5, 4], 1.0, &mut r))]);
    check_jvp(&p, &|g, p| {
        let x = g.param(p, 0);
        let y = g.power_norm(x, &[true, false, true, true, false]).unwrap();
        probe(g, y, 17)
    }, 8, 10);
}

#[test]
fn cross_entropy_uniform_logits() {
    let mut g = Graph::new();
    let l = g.input(vec![3, 10], vec![0.25; 30]).unwrap();
    let loss = g.cross_entropy(l, &[1, 4, 9], &[true; 3]).unwrap();
    assert!((g.value(loss)[0] - 10f32.ln()).abs() < 1e-6);
}

#[test]
fn cross_entropy_margin_limit() {
    let mut last = f32::INFINITY;
    for margin in [1.0f32, 5.0, 20.0, 80.0] {
        let mut logits = vec![0.0; 2 * 4];
        logits[2] = margin;
        logits[4 + 1] = margin;
        let mut g = Graph::new();
        let l = g.input(vec![2, 4], logits).unwrap();
        let lv = g.cross_entropy(l, &[2, 1], &[true, true]).unwrap();
        let loss = g.value(lv)[0];
        assert!(loss < last);
        last = loss;
    }
    assert!(last < 1e-6);
}

#[test]
fn cross_entropy_matches_scalar_loop() {
    let mut r = rng(9);
    let (b, l, v) = (2, 3, 7);
    let logits: Vec<f32> = (0..b * l * v).map(|_| r.random_range(-3.0..3.0)).collect();
    let targets: Vec<usize> = (0..b * l).map(|_| r.random_range(0..v)).collect();
    let mask = vec![true, true, false, true, false, true];
    // Direct oracle: softmax probability of the target, then mean of -ln.
    let mut total = 0f64;
    let mut count = 0;
    for row in 0..b * l {
        if !mask[row] {
            continue;
        }
        let xs = &logits[row * v..(row + 1) * v];
        let denom: f64 = xs.iter().map(|&x| (x as f64).exp()).sum();
        total += -((xs[targets[row]] as f64).exp() / denom).ln();
        count += 1;
    }
    let want = total / count as f64;
    let mut g = Graph::new();
    let x = g.input(vec![b * l, v], logits).unwrap();
    let loss = g.cross_entropy(x, &targets, &mask).unwrap();
    assert!((g.value(loss)[0] as f64 - want).abs() < 1e-5);
    let mut g = Graph::new();
    let x = g.input(vec![1, 3], vec![0.0; 3]).unwrap();
    assert!(matches!(g.cross_entropy(x, &[0], &[false]), Err(crate::NnError::EmptyBatch)));
}
