use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_params;
use super::*;
use crate::error::RdmError;

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[1.0, 2.0, 3.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.input(Tensor::randn(&[3, 5], 2.0, &mut rng));
    let loss = g.sum(x);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn non_scalar_loss_is_contract_violation() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(RdmError::Contract(_))));
}

#[test]
fn non_finite_forward_names_the_op() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[1e300, 1.0]));
    let y = g.mul(x, x).unwrap();
    let loss = g.sum(y);
    match g.backward(loss) {
        Err(RdmError::Numeric { op }) => assert_eq!(op, "mul"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    assert!(g.matmul(a, b).is_err());
    let c = g.input(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, c).is_err());
    assert!(g.slice(a, 1, 2, 2).is_err());
}

type Build = fn(&mut Graph, &BoundParams) -> Var;

/// Checks `sum(build(x) ⊙ r)` for a random projection `r`, so that ops with
/// constant sums (softmax) still get a non-trivial gradient.
fn check_op(shapes: &[(&str, &[usize])], build: Build, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: ParamStore = shapes
        .iter()
        .map(|(n, s)| (n.to_string(), Tensor::randn(s, 1.0, &mut rng)))
        .collect();
    let proj_seed = rng.random::<u64>();
    let eval = |p: &ParamStore, grads: bool| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let y = build(&mut g, &bound);
        let mut prng = ChaCha8Rng::seed_from_u64(proj_seed);
        let r = g.constant(Tensor::randn(g.value(y).shape(), 1.0, &mut prng));
        let yr = g.mul(y, r).unwrap();
        let loss = g.sum(yr);
        let value = g.value(loss).item();
        let gm = grads.then(|| g.backward(loss).unwrap().param_grads());
        (value, gm)
    };
    let (_, analytic) = eval(&params, true);
    let report = check_params(&params, &analytic.unwrap(), |p| eval(p, false).0, 1e-5, 64);
    assert!(report.checked > 0);
    report.max_rel_error
}

fn per_op_cases() -> Vec<(&'static str, Vec<(&'static str, &'static [usize])>, Build)> {
    vec![
        ("matmul", vec![("a", &[3, 4]), ("b", &[4, 2])], |g, p| {
            g.matmul(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()
        }),
        ("matmul_nt", vec![("a", &[3, 4]), ("b", &[5, 4])], |g, p| {
            g.matmul_nt(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()
        }),
        ("add_row", vec![("a", &[3, 4]), ("b", &[4])], |g, p| {
            g.add(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()
        }),
        ("sub_same", vec![("a", &[3, 4]), ("b", &[3, 4])], |g, p| {
            g.sub(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()
        }),
        ("mul_row", vec![("a", &[3, 4]), ("b", &[1, 4])], |g, p| {
            g.mul(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()
        }),
        ("mul_scalar", vec![("a", &[3, 4]), ("b", &[1])], |g, p| {
            g.mul(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()
        }),
        ("scale", vec![("a", &[2, 3])], |g, p| g.scale(p.get("a").unwrap(), -0.7)),
        ("softmax", vec![("a", &[3, 5])], |g, p| g.softmax(p.get("a").unwrap())),
        ("log_softmax", vec![("a", &[3, 5])], |g, p| {
            g.log_softmax(p.get("a").unwrap())
        }),
        ("layer_norm", vec![("a", &[3, 6])], |g, p| {
            g.layer_norm(p.get("a").unwrap(), 1e-5)
        }),
        ("silu", vec![("a", &[3, 4])], |g, p| g.silu(p.get("a").unwrap())),
        ("concat_cols", vec![("a", &[3, 2]), ("b", &[3, 3])], |g, p| {
            g.concat(&[p.get("a").unwrap(), p.get("b").unwrap()], 1).unwrap()
        }),
        ("concat_rows", vec![("a", &[2, 3]), ("b", &[1, 3])], |g, p| {
            g.concat(&[p.get("a").unwrap(), p.get("b").unwrap()], 0).unwrap()
        }),
        ("slice_cols", vec![("a", &[3, 6])], |g, p| {
            g.slice(p.get("a").unwrap(), 1, 2, 3).unwrap()
        }),
        ("slice_rows", vec![("a", &[4, 3])], |g, p| {
            g.slice(p.get("a").unwrap(), 0, 1, 2).unwrap()
        }),
        ("mean", vec![("a", &[3, 4])], |g, p| g.mean(p.get("a").unwrap())),
        ("attention_masked", vec![("q", &[2, 4]), ("k", &[5, 4]), ("v", &[5, 3])], |g, p| {
            let m = g.constant(block_mask(&[2, 3]));
            let (q, k, v) = (p.get("q").unwrap(), p.get("k").unwrap(), p.get("v").unwrap());
            g.attention(q, k, v, Some(m)).unwrap()
        }),
    ]
}

#[test]
fn every_op_passes_finite_differences() {
    for (name, shapes, build) in per_op_cases() {
        for seed in 0..3 {
            let err = check_op(&shapes, build, seed);
            assert!(err < 1e-4, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

/// Two-layer net with a cross-attention block: exactly 64 parameters.
fn tiny_cross_attention_net(g: &mut Graph, p: &BoundParams, x: Var, ctx: Var) -> Var {
    let w1 = p.get("w1").unwrap(); // 4x4
    let b1 = p.get("b1").unwrap(); // 4
    let wk = p.get("wk").unwrap(); // 3x4
    let wv = p.get("wv").unwrap(); // 3x4
    let w2 = p.get("w2").unwrap(); // 4x4
    let b2 = p.get("b2").unwrap(); // 4
    let h = g.linear(x, w1, Some(b1)).unwrap();
    let h = g.silu(h);
    let k = g.matmul(ctx, wk).unwrap();
    let v = g.matmul(ctx, wv).unwrap();
    let a = g.attention(h, k, v, None).unwrap();
    let h = g.add(h, a).unwrap();
    let h = g.layer_norm(h, 1e-5);
    g.linear(h, w2, Some(b2)).unwrap()
}

#[test]
fn cross_attention_net_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params: ParamStore = [
        ("w1", vec![4, 4]),
        ("b1", vec![4]),
        ("wk", vec![3, 4]),
        ("wv", vec![3, 4]),
        ("w2", vec![4, 4]),
        ("b2", vec![4]),
    ]
    .into_iter()
    .map(|(n, s)| (n.to_string(), Tensor::randn(&s, 0.7, &mut rng)))
    .collect();
    assert_eq!(params.num_scalars(), 64);
    let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let ctx = Tensor::randn(&[5, 3], 1.0, &mut rng);
    let eval = |p: &ParamStore| {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let xv = g.constant(x.clone());
        let cv = g.constant(ctx.clone());
        let y = tiny_cross_attention_net(&mut g, &b, xv, cv);
        let sq = g.mul(y, y).unwrap();
        let loss = g.mean(sq);
        (g.value(loss).item(), g.backward(loss).unwrap().param_grads())
    };
    let (_, analytic) = eval(&params);
    let report = check_params(&params, &analytic, |p| eval(p).0, 1e-5, usize::MAX);
    assert_eq!(report.checked, 64);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn attention_single_key_returns_value() {
    let q = Tensor::row(&[0.3, -1.2]);
    let v = Tensor::row(&[5.0, -2.0, 7.5]);
    let out = attention(&q, &q, &v).unwrap();
    assert_eq!(out.data(), v.data());
}

#[test]
fn attention_identical_keys_average() {
    let q = Tensor::row(&[0.5, 0.1]);
    let k = Tensor::matrix(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
    let v = Tensor::matrix(2, 2, vec![1.0, 3.0, 5.0, -1.0]).unwrap();
    let out = attention(&q, &k, &v).unwrap();
    assert!((out.data()[0] - 3.0).abs() < 1e-12);
    assert!((out.data()[1] - 1.0).abs() < 1e-12);
}

#[test]
fn attention_dimension_mismatch() {
    let q = Tensor::zeros(&[2, 3]);
    let k = Tensor::zeros(&[4, 2]);
    let v = Tensor::zeros(&[4, 2]);
    assert!(attention(&q, &k, &v).is_err());
    let k = Tensor::zeros(&[4, 3]);
    let v = Tensor::zeros(&[5, 2]);
    assert!(attention(&q, &k, &v).is_err());
}

#[test]
fn attention_weight_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = Tensor::randn(&[4, 8], 1.0, &mut rng);
    let k = Tensor::randn(&[4, 8], 1.0, &mut rng);
    let w = attention_weights(&q, &k).unwrap();
    for i in 0..4 {
        let s: f64 = w.row_slice(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
    }
}

#[test]
fn block_mask_isolates_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = Tensor::randn(&[2, 4], 1.0, &mut rng);
    let k = Tensor::randn(&[5, 4], 1.0, &mut rng);
    let v = Tensor::randn(&[5, 3], 1.0, &mut rng);
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let m = g.constant(block_mask(&[2, 3]));
    let out = g.attention(qv, kv, vv, Some(m)).unwrap();
    let out = g.value(out).clone();
    // row 1 only sees keys 2..5
    let mut g2 = Graph::new();
    let q1 = g2.constant(Tensor::row(q.row_slice(1)));
    let kk = g2.constant(k.clone());
    let k1 = g2.slice(kk, 0, 2, 3).unwrap();
    let vvv = g2.constant(v.clone());
    let v1 = g2.slice(vvv, 0, 2, 3).unwrap();
    let o1 = g2.attention(q1, k1, v1, None).unwrap();
    for (a, b) in out.row_slice(1).iter().zip(g2.value(o1).data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut g = Graph::new();
        let x = g.input(Tensor::randn(&[3, 4], 1.0, &mut rng));
        let w = g.input(Tensor::randn(&[4, 4], 1.0, &mut rng));
        let y = g.matmul(x, w).unwrap();
        let y = g.layer_norm(y, 1e-5);
        let y = g.softmax(y);
        let loss = g.mean(y);
        let grads = g.backward(loss).unwrap();
        grads
            .get(w)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_output_in_convex_hull(seed in any::<u64>(), nq in 1usize..5, nk in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Tensor::randn(&[nq, 4], 2.0, &mut rng);
        let k = Tensor::randn(&[nk, 4], 2.0, &mut rng);
        let v = Tensor::randn(&[nk, 3], 1.0, &mut rng);
        let out = attention(&q, &k, &v).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..nk).map(|i| v.row_slice(i)[j]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..nq {
                let x = out.row_slice(i)[j];
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_normalized(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[3, 7], scale, &mut rng));
        let y = g.softmax(x);
        for i in 0..3 {
            let s: f64 = g.value(y).row_slice(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
