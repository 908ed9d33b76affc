use super::gradcheck::{max_rel_error, numeric_gradient};
use super::*;
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    let n: usize = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Contracts the op output with fixed random weights and compares the
/// analytic input gradients against central differences.
fn check_op(inputs: &[Array<f64>], seed: u64, build: &Build) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let probe = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| t.leaf(a.clone()).unwrap()).collect();
        let y = build(&mut t, &vars).unwrap();
        t.value(y).shape().to_vec()
    };
    let weights = rand_array(&mut rng, &probe);
    let eval = |xs: &[Array<f64>]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|a| t.leaf(a.clone()).unwrap()).collect();
        let y = build(&mut t, &vars).unwrap();
        t.value(y).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| t.leaf(a.clone()).unwrap()).collect();
    let y = build(&mut t, &vars).unwrap();
    let w = t.constant(weights.clone()).unwrap();
    let yw = t.mul(y, w).unwrap();
    let loss = t.sum(yw).unwrap();
    let grads = t.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(inputs[k].shape()));
        let numeric = numeric_gradient(&inputs[k], 1e-5, |x| {
            let mut xs = inputs.to_vec();
            xs[k] = x.clone();
            eval(&xs)
        });
        worst = worst.max(max_rel_error(&analytic, &numeric, 1e-4));
    }
    worst
}

fn check_many(shapes: &[&[usize]], build: &Build) {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Array<f64>> = shapes.iter().map(|s| rand_array(&mut rng, s)).collect();
        let err = check_op(&inputs, seed, build);
        assert!(err < 1e-5, "seed {seed}: rel err {err}");
    }
}

#[test]
fn matmul_examples() {
    let mut t = Tape::<f64>::new();
    let x = Array::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    let i = t.constant(Array::identity(2)).unwrap();
    let xv = t.constant(x.clone()).unwrap();
    let y = t.matmul(i, xv).unwrap();
    assert_eq!(t.value(y), &x);

    let a = t
        .constant(Array::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
        .unwrap();
    let b = t.constant(Array::from_rows(&[vec![1.0], vec![1.0]]).unwrap()).unwrap();
    let y = t.matmul(a, b).unwrap();
    assert_eq!(t.value(y).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Array::zeros(&[2, 3])).unwrap();
    let b = t.constant(Array::zeros(&[2, 3])).unwrap();
    let err = t.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn matmul_gradient_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a64 = rand_array(&mut rng, &[4, 5]);
    let b64 = rand_array(&mut rng, &[5, 3]);
    let w64 = rand_array(&mut rng, &[4, 3]);
    let (a, b, w): (Array<f32>, Array<f32>, Array<f32>) = (a64.cast(), b64.cast(), w64.cast());
    let eval = |a: &Array<f32>, b: &Array<f32>| -> f64 {
        let mut t = Tape::<f32>::new();
        let (av, bv) = (t.constant(a.clone()).unwrap(), t.constant(b.clone()).unwrap());
        let y = t.matmul(av, bv).unwrap();
        t.value(y)
            .data()
            .iter()
            .zip(w.data())
            .map(|(&p, &q)| p as f64 * q as f64)
            .sum()
    };
    let mut t = Tape::<f32>::new();
    let (av, bv) = (t.leaf(a.clone()).unwrap(), t.leaf(b.clone()).unwrap());
    let y = t.matmul(av, bv).unwrap();
    let wv = t.constant(w.clone()).unwrap();
    let yw = t.mul(y, wv).unwrap();
    let loss = t.sum(yw).unwrap();
    let g = t.backward(loss).unwrap();
    let na = numeric_gradient(&a, 1e-3, |x| eval(x, &b));
    let nb = numeric_gradient(&b, 1e-3, |x| eval(&a, x));
    assert!(max_rel_error(g.wrt(av).unwrap(), &na, 1e-3) < 1e-3);
    assert!(max_rel_error(g.wrt(bv).unwrap(), &nb, 1e-3) < 1e-3);
}

#[test]
fn softmax_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Array::from_f64(&[4], &[0.0; 4]).unwrap()).unwrap();
    let p = t.softmax(x, 0).unwrap();
    for &v in t.value(p).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
    let x = t.constant(Array::from_f64(&[2], &[1000.0, 0.0]).unwrap()).unwrap();
    let p = t.softmax(x, 0).unwrap();
    let pv = t.value(p).data();
    assert!((pv[0] - 1.0).abs() < 1e-12 && pv[1] < 1e-300);
    assert!(t.softmax(x, 1).is_err());
}

#[test]
fn softmax_sums_to_one_along_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for axis in 0..3 {
        let mut a = rand_array(&mut rng, &[3, 4, 5]);
        a.scale_in_place(30.0);
        let mut t = Tape::<f64>::new();
        let x = t.constant(a).unwrap();
        let p = t.softmax(x, axis).unwrap();
        let pv = t.value(p);
        let shape = pv.shape().to_vec();
        let (outer, n, inner) = (
            shape[..axis].iter().product::<usize>(),
            shape[axis],
            shape[axis + 1..].iter().product::<usize>(),
        );
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..n).map(|k| pv.data()[(o * n + k) * inner + i]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn cross_entropy_examples() {
    let mut t = Tape::<f64>::new();
    let p = t.constant(Array::from_f64(&[4], &[0.25; 4]).unwrap()).unwrap();
    for i in 0..4 {
        let l = t.cross_entropy(p, i).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }
    let p = t.constant(Array::from_f64(&[3], &[0.0, 1.0, 0.0]).unwrap()).unwrap();
    let l = t.cross_entropy(p, 1).unwrap();
    assert_eq!(t.value(l).item(), 0.0);
    assert!(t.cross_entropy(p, 3).is_err());
}

#[test]
fn softmax_then_cross_entropy_gradient_is_p_minus_onehot() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let logits = rand_array(&mut rng, &[6]);
        let target = trial % 6;
        let mut t = Tape::<f64>::new();
        let z = t.leaf(logits).unwrap();
        let p = t.softmax(z, 0).unwrap();
        let loss = t.cross_entropy(p, target).unwrap();
        let g = t.backward(loss).unwrap();
        let pv = t.value(p).data().to_vec();
        for (k, &gk) in g.wrt(z).unwrap().data().iter().enumerate() {
            let expect = pv[k] - if k == target { 1.0 } else { 0.0 };
            assert!((gk - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn layernorm_and_gelu_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Array::from_f64(&[1, 4], &[3.0; 4]).unwrap()).unwrap();
    let g = t.constant(Array::filled(&[4], 1.0)).unwrap();
    let b = t.constant(Array::zeros(&[4])).unwrap();
    let y = t.layernorm(x, g, b, 1e-5).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    let z = t.constant(Array::scalar(0.0)).unwrap();
    let gz = t.gelu(z).unwrap();
    assert_eq!(t.value(gz).item(), 0.0);
}

#[test]
fn backward_requires_scalar_and_zeroes_unreached() {
    let mut store = ParamStore::<f64>::new();
    let used = store.insert("used", Array::filled(&[2], 1.5)).unwrap();
    let unused = store.insert("unused", Array::filled(&[3], 2.0)).unwrap();
    let mut t = Tape::new();
    let u = t.param(&store, used);
    assert_eq!(t.param(&store, used), u);
    assert!(t.backward(u).is_err());
    let s = t.sum(u).unwrap();
    let g = t.backward(s).unwrap();
    let all = g.for_store(&store);
    assert_eq!(all[used.index()].data(), &[1.0, 1.0]);
    assert_eq!(all[unused.index()].data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut t = Tape::<f32>::new();
    let p = t.constant(Array::from_f64(&[2], &[0.0, 1.0]).unwrap()).unwrap();
    assert!(t.cross_entropy(p, 0).is_err());
    assert!(t.constant(Array::from_f64(&[1], &[f64::NAN]).unwrap()).is_err());
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = Tape::<f32>::new();
        let a = t.leaf(rand_array(&mut rng, &[5, 7]).cast()).unwrap();
        let b = t.leaf(rand_array(&mut rng, &[7, 4]).cast()).unwrap();
        let y = t.matmul(a, b).unwrap();
        let s = t.softmax(y, 1).unwrap();
        let g = t.gelu(s).unwrap();
        let l = t.sum(g).unwrap();
        let gr = t.backward(l).unwrap();
        (gr.wrt(a).unwrap().clone(), gr.wrt(b).unwrap().clone())
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert!(a1.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(b1.data().iter().zip(b2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn dropout_rate_zero_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Array::filled(&[2, 2], 1.0)).unwrap();
    assert_eq!(t.dropout(x, 0.0, &mut rng).unwrap(), x);
    assert!(t.dropout(x, 1.0, &mut rng).is_err());
}

#[test]
fn gradcheck_binary_ops() {
    check_many(&[&[4, 5], &[5, 3]], &|t, v| t.matmul(v[0], v[1]));
    check_many(&[&[4, 5], &[3, 5]], &|t, v| t.matmul_nt(v[0], v[1]));
    check_many(&[&[3, 4], &[3, 4]], &|t, v| t.add(v[0], v[1]));
    check_many(&[&[3, 4], &[4]], &|t, v| t.add_row(v[0], v[1]));
    check_many(&[&[3, 4], &[3, 4]], &|t, v| t.mul(v[0], v[1]));
    check_many(&[&[3, 4]], &|t, v| t.mul(v[0], v[0]));
}

#[test]
fn gradcheck_unary_ops() {
    check_many(&[&[3, 4]], &|t, v| t.transpose(v[0]));
    check_many(&[&[3, 4]], &|t, v| t.scale(v[0], -1.7));
    check_many(&[&[3, 4]], &|t, v| t.gelu(v[0]));
    check_many(&[&[3, 6], &[6], &[6]], &|t, v| t.layernorm(v[0], v[1], v[2], 1e-5));
    check_many(&[&[5]], &|t, v| t.softmax(v[0], 0));
    check_many(&[&[3, 4]], &|t, v| t.softmax(v[0], 1));
    check_many(&[&[2, 3, 4]], &|t, v| t.softmax(v[0], 1));
    check_many(&[&[3, 4]], &|t, v| t.sum(v[0]));
    check_many(&[&[3, 4]], &|t, v| t.mean(v[0]));
}

#[test]
fn gradcheck_losses() {
    check_many(&[&[6]], &|t, v| {
        let p = t.softmax(v[0], 0)?;
        t.cross_entropy(p, 2)
    });
    check_many(&[&[3, 5]], &|t, v| t.softmax_cross_entropy(v[0], &[4, 0, 2]));
    check_many(&[&[1]], &|t, v| t.bce_with_logits(v[0], 1.0));
    check_many(&[&[1]], &|t, v| t.bce_with_logits(v[0], 0.0));
}

#[test]
fn gradcheck_indexing_ops() {
    check_many(&[&[5, 3]], &|t, v| t.embedding(v[0], &[4, 0, 4, 2]));
    check_many(&[&[2, 3], &[4, 3]], &|t, v| t.concat_rows(&[v[0], v[1], v[0]]));
    check_many(&[&[3, 2], &[3, 4]], &|t, v| t.concat_cols(&[v[1], v[0]]));
    check_many(&[&[5, 3]], &|t, v| t.slice_rows(v[0], 1, 4));
    check_many(&[&[3, 6]], &|t, v| t.slice_cols(v[0], 2, 5));
    check_many(&[&[5, 3]], &|t, v| t.gather_rows(v[0], &[3, 3, 0]));
}

#[test]
fn gradcheck_dropout_with_fixed_mask() {
    check_many(&[&[4, 4]], &|t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        t.dropout(v[0], 0.3, &mut rng)
    });
}
