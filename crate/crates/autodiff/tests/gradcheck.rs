use std::rc::Rc;

use gotjepa_autodiff::check::{central_difference, relative_error};
use gotjepa_autodiff::nn::{self, TransformerCfg};
use gotjepa_autodiff::{ConvGeom, Graph, ParamStore, SparseRows, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Checks d f / d x for a graph-building closure over a single input.
fn check(x: Tensor, build: impl Fn(&mut Graph, Var) -> Var, tol: f64) {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let out = build(&mut g, v);
    let analytic = g.backward(out).of(v).cloned().unwrap();
    let numeric = central_difference(
        |p| {
            let mut g = Graph::new();
            let v = g.input(p.clone());
            let out = build(&mut g, v);
            g.scalar(out)
        },
        &x,
        1e-5,
    );
    let err = relative_error(&analytic, &numeric, 1e-10);
    assert!(err < tol, "relative error {err:e}\n{analytic:?}\n{numeric:?}");
}

#[test]
fn elementwise_and_broadcast_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let other = random(&mut rng, 3, 4);
    let row = random(&mut rng, 1, 4);
    let col = random(&mut rng, 3, 1);
    let x = random(&mut rng, 3, 4);
    check(
        x,
        move |g, v| {
            let o = g.constant(other.clone());
            let r = g.constant(row.clone());
            let c = g.constant(col.clone());
            let a = g.mul(v, o);
            let b = g.add_row(a, r);
            let b = g.mul_row(b, r);
            let b = g.mul_col(b, c);
            let s = g.sigmoid(b);
            let t = g.tanh(v);
            let sp = g.softplus(t);
            let e = g.exp(sp);
            let q = g.square(e);
            let d = g.div(q, e);
            let m = g.sub(d, s);
            let ge = g.gelu(m);
            let sq = g.add_scalar(ge, 3.0);
            let l = g.ln(sq);
            let sc = g.scale(l, 0.7);
            g.sum(sc)
        },
        1e-7,
    );
}

#[test]
fn min_max_relu_away_from_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let other = random(&mut rng, 2, 5);
    let mut x = random(&mut rng, 2, 5);
    for (a, b) in x.data_mut().iter_mut().zip(other.data()) {
        if (*a - *b).abs() < 0.05 {
            *a += 0.2;
        }
        if a.abs() < 0.05 {
            *a += 0.1;
        }
    }
    check(
        x,
        move |g, v| {
            let o = g.constant(other.clone());
            let mn = g.min(v, o);
            let mx = g.max(v, o);
            let r = g.relu(v);
            let ab = g.abs(v);
            let p = g.mul(mn, mx);
            let p = g.add(p, r);
            let p = g.add(p, ab);
            let p = g.square(p);
            g.mean(p)
        },
        1e-7,
    );
}

#[test]
fn matmul_variants_and_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random(&mut rng, 4, 3);
    let x = random(&mut rng, 5, 4);
    check(
        x,
        move |g, v| {
            let wv = g.constant(w.clone());
            let a = g.matmul(v, wv); // 5x3
            let b = g.matmul_t(v, v); // 5x5
            let c = g.t_matmul(v, a); // 4x3
            let t = g.transpose(c); // 3x4
            let r = g.rows(v, 1, 3);
            let cc = g.cols(r, 1, 2);
            let cat = g.concat_cols(&[cc, cc]); // 3x4
            let sm = g.softmax_rows(b);
            let s1 = g.sum_rows(sm);
            let s2 = g.sum_cols(a);
            let rr = g.concat_rows(&[t, cat]);
            let rs = g.reshape(rr, 4, 6);
            let q = g.square(rs);
            let l1 = g.sum(q);
            let l2 = g.sum(s1);
            let s2s = g.square(s2);
            let l3 = g.sum(s2s);
            let l = g.add(l1, l2);
            g.add(l, l3)
        },
        1e-7,
    );
}

#[test]
fn layer_norm_gradients_for_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, 3, 6);
    let gamma = random(&mut rng, 1, 6);
    let beta = random(&mut rng, 1, 6);
    let target = random(&mut rng, 3, 6);
    {
        let (gamma, beta, target) = (gamma.clone(), beta.clone(), target.clone());
        check(
            x.clone(),
            move |g, v| {
                let ga = g.constant(gamma.clone());
                let be = g.constant(beta.clone());
                let t = g.constant(target.clone());
                let y = g.layer_norm(v, ga, be);
                let y = g.mul(y, t);
                let y = g.square(y);
                g.sum(y)
            },
            1e-6,
        );
    }
    check(
        gamma,
        move |g, v| {
            let xv = g.constant(x.clone());
            let be = g.constant(beta.clone());
            let t = g.constant(target.clone());
            let y = g.layer_norm(xv, v, be);
            let y = g.mul(y, t);
            let y = g.square(y);
            g.sum(y)
        },
        1e-7,
    );
}

#[test]
fn gather_and_im2col() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 5 * 4, 3);
    let mut map = SparseRows::new(20);
    map.push_row(&[(0, 0.5), (7, 0.25), (19, -1.0)]);
    map.push_row(&[(3, 1.0)]);
    map.push_row(&[(3, 2.0), (4, 0.1)]);
    let map = Rc::new(map);
    let geom = ConvGeom {
        h: 5,
        w: 4,
        cin: 3,
        k: 3,
        stride: 2,
        pad: 1,
    };
    let w = random(&mut rng, 27, 2);
    check(
        x,
        move |g, v| {
            let p = g.gather(v, map.clone());
            let p = g.square(p);
            let cols = g.im2col(v, geom);
            let wv = g.constant(w.clone());
            let y = g.matmul(cols, wv);
            let y = g.tanh(y);
            let a = g.sum(p);
            let b = g.sum(y);
            g.add(a, b)
        },
        1e-7,
    );
}

#[test]
fn transformer_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = TransformerCfg::new(8, 2, 2);
    let mut store = ParamStore::new();
    nn::init_transformer(&mut store, "tr", cfg, &mut rng);
    let x = random(&mut rng, 5, 8);
    let target = random(&mut rng, 5, 8);
    let loss = |store: &ParamStore| -> (f64, std::collections::BTreeMap<String, Tensor>) {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = nn::transformer(&mut g, store, "tr", cfg, xv);
        let t = g.constant(target.clone());
        let d = g.sub(y, t);
        let d = g.square(d);
        let l = g.sum(d);
        let grads = g.backward(l).params();
        (g.scalar(l), grads)
    };
    let (_, grads) = loss(&store);
    for name in ["tr/layer0/attn/qkv/w", "tr/layer1/ffn/fc1/b", "tr/layer0/ln1/gamma"] {
        let p0 = store.get(name).unwrap().clone();
        let numeric = central_difference(
            |p| {
                let mut s = store.clone();
                *s.get_mut(name).unwrap() = p.clone();
                loss(&s).0
            },
            &p0,
            1e-5,
        );
        let err = relative_error(&grads[name], &numeric, 1e-10);
        assert!(err < 1e-6, "{name}: relative error {err:e}");
    }
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    nn::init_linear(&mut store, "frozen/l", 3, 3, &mut rng);
    nn::init_linear(&mut store, "live/l", 3, 1, &mut rng);
    let mut g = Graph::with_trainable(|n| n.starts_with("live/"));
    let x = g.constant(random(&mut rng, 4, 3));
    let h = nn::linear(&mut g, &store, "frozen/l", x);
    let y = nn::linear(&mut g, &store, "live/l", h);
    let l = g.sum(y);
    let grads = g.backward(l).params();
    assert!(grads.contains_key("live/l/w"));
    assert!(!grads.keys().any(|k| k.starts_with("frozen/")));
}

#[test]
fn shared_parameter_accumulates() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::row(vec![2.0]));
    let mut g = Graph::new();
    let a = g.param(&store, "w");
    let b = g.param(&store, "w");
    assert_eq!(a, b);
    let p = g.mul(a, b);
    let l = g.sum(p);
    let grads = g.backward(l).params();
    assert!((grads["w"].data()[0] - 4.0).abs() < 1e-12);
}
