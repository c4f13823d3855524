use gts_core::autodiff::{finite_diff_check, AutodiffError, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res = Result<Var, AutodiffError>;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 2], &[0.0, 0.0]));
    let y = g.row_softmax(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn max_over_rows_takes_columnwise_maximum() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
    let y = g.max_over_axis(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    assert_eq!(g.shape(y), &[2]);
}

#[test]
fn max_gradient_goes_to_first_tied_element() {
    let mut store = ParamStore::new();
    let id = store.insert("x", t(&[3], &[2.0, 2.0, 1.0])).unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let y = g.max_over_axis(x, 0).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(id).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn matmul_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 1]));
    let c = g.constant(Tensor::zeros(&[2, 1]));
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(ab), &[2, 1]);
    let err = g.matmul(a, c).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 1]"), "{msg}");
}

#[test]
fn linear_gradient_is_the_input() {
    let mut store = ParamStore::new();
    let w = store.insert("w", t(&[1, 2], &[1.0, 1.0])).unwrap();
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let x = g.constant(t(&[2, 1], &[2.0, 3.0]));
    let y = g.matmul(wv, x).unwrap();
    let loss = g.sum(y).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[2.0, 3.0]);
}

#[test]
fn unreached_parameter_gets_zero_gradient() {
    let mut store = ParamStore::new();
    let w = store.insert("w", t(&[2], &[1.0, 2.0])).unwrap();
    let b = store.insert("b", t(&[2], &[5.0, 5.0])).unwrap();
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let _bv = g.param(&store, b);
    let loss = g.sum(wv).unwrap();
    let grads = g.backward(loss).unwrap();
    store.accumulate(&grads);
    assert_eq!(store.grad(b).data(), &[0.0, 0.0]);
    assert_eq!(store.grad(w).data(), &[1.0, 1.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarLoss(_))));
}

#[test]
fn dropout_rejects_probability_one() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2]));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    // identity when not training
    assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[20000], 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
    let v = g.value(y);
    assert!(v.data().iter().all(|&e| e == 0.0 || e == 2.0));
    let mean = v.sum() / v.len() as f64;
    assert!((mean - 1.0).abs() < 0.03, "{mean}");
}

#[test]
fn poison_check_reports_non_finite_values() {
    let mut g = Graph::<f64>::new();
    g.set_poison_check(true);
    let x = g.constant(t(&[1], &[0.0]));
    let err = g.log(x, 0.0).unwrap_err();
    assert!(matches!(err, AutodiffError::NonFinite { op: "log" }));
}

#[test]
fn quadratic_matches_analytic_gradient() {
    let mut store = ParamStore::new();
    store.insert("w", t(&[2, 1], &[1.0, 2.0])).unwrap();
    let report = finite_diff_check(
        |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let w = g.param(s, s.id("w").unwrap());
            let wt = g.transpose(w)?;
            let q = g.matmul(wt, w)?;
            g.sum(q)
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
    assert_eq!(report.checked, 2);
}

#[test]
fn row_softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let rows = rng.gen_range(1..6);
        let cols = rng.gen_range(1..8);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::uniform(&[rows, cols], 30.0, &mut rng));
        let y = g.row_softmax(x).unwrap();
        for r in 0..rows {
            let row = g.value(y).row(r);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn f32_tape_runs_the_same_ops() {
    let mut store = ParamStore::<f32>::new();
    let w = store
        .insert("w", Tensor::from_f64(&[1, 2], &[1.0, 1.0]).unwrap())
        .unwrap();
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let x = g.constant(Tensor::from_f64(&[2, 1], &[2.0, 3.0]).unwrap());
    let y = g.matmul(wv, x).unwrap();
    let s = g.sigmoid(y).unwrap();
    let loss = g.sum(s).unwrap();
    let grads = g.backward(loss).unwrap();
    let sig = 1.0f32 / (1.0 + (-5.0f32).exp());
    let d = sig * (1.0 - sig);
    let got = grads.get(w).unwrap().data();
    assert!((got[0] - 2.0 * d).abs() < 1e-6 && (got[1] - 3.0 * d).abs() < 1e-6);
}

/// Random readout weights make every output element matter to the loss.
fn readout(g: &mut Graph<f64>, y: Var, seed: u64) -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(Tensor::uniform(g.shape(y), 1.0, &mut rng));
    let m = g.mul(y, w)?;
    g.sum(m)
}

type OpCase = fn(&mut Graph<f64>, &ParamStore<f64>, &[usize]) -> Res;

fn param(g: &mut Graph<f64>, s: &ParamStore<f64>, name: &str) -> Var {
    g.param(s, s.id(name).unwrap())
}

/// Runs a finite-difference check of `case` over 100 seeds with random shapes.
fn check_op(name: &str, make_params: fn(&mut ChaCha8Rng) -> (ParamStore<f64>, Vec<usize>), case: OpCase) {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut store, dims) = make_params(&mut rng);
        let report = finite_diff_check(
            |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let y = case(g, s, &dims)?;
                readout(g, y, seed)
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "{name} seed {seed}: {report:?}"
        );
    }
}

fn two_mats(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, Vec<usize>) {
    let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
    let mut s = ParamStore::new();
    s.insert("a", Tensor::uniform(&[m, k], 1.0, rng)).unwrap();
    s.insert("b", Tensor::uniform(&[k, n], 1.0, rng)).unwrap();
    (s, vec![m, k, n])
}

fn mat_and_row(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, Vec<usize>) {
    let (m, n) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let mut s = ParamStore::new();
    s.insert("a", Tensor::uniform(&[m, n], 1.0, rng)).unwrap();
    s.insert("b", Tensor::uniform(&[n], 1.0, rng)).unwrap();
    s.insert("c", Tensor::uniform(&[m, n], 1.0, rng)).unwrap();
    (s, vec![m, n])
}

fn one_mat(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, Vec<usize>) {
    let (m, n) = (rng.gen_range(1..5), rng.gen_range(1..6));
    let mut s = ParamStore::new();
    s.insert("a", Tensor::uniform(&[m, n], 2.0, rng)).unwrap();
    (s, vec![m, n])
}

fn cube(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, Vec<usize>) {
    let dims = vec![rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4)];
    let mut s = ParamStore::new();
    s.insert("a", Tensor::uniform(&dims, 1.0, rng)).unwrap();
    let axis = rng.gen_range(0..3);
    let mut d = dims;
    d.push(axis);
    (s, d)
}

#[test]
fn matmul_gradients() {
    check_op("matmul", two_mats, |g, s, _| {
        let (a, b) = (param(g, s, "a"), param(g, s, "b"));
        g.matmul(a, b)
    });
}

#[test]
fn broadcast_add_and_mul_gradients() {
    check_op("add", mat_and_row, |g, s, _| {
        let (a, b) = (param(g, s, "a"), param(g, s, "b"));
        g.add(a, b)
    });
    check_op("mul", mat_and_row, |g, s, _| {
        let (a, b, c) = (param(g, s, "a"), param(g, s, "b"), param(g, s, "c"));
        let ab = g.mul(a, b)?;
        g.mul(ab, c)
    });
}

#[test]
fn scale_and_sum_gradients() {
    check_op("scale", one_mat, |g, s, _| {
        let a = param(g, s, "a");
        let y = g.scale(a, -1.7)?;
        let t = g.sum(y)?;
        g.mul(a, t)
    });
}

#[test]
fn concat_gradients() {
    check_op("concat", mat_and_row, |g, s, _| {
        let (a, c) = (param(g, s, "a"), param(g, s, "c"));
        let ac = g.concat(&[a, c, a])?;
        g.tanh(ac)
    });
    check_op("concat_rows", mat_and_row, |g, s, _| {
        let (a, c) = (param(g, s, "a"), param(g, s, "c"));
        let ac = g.concat_rows(&[c, a])?;
        g.sigmoid(ac)
    });
}

#[test]
fn activation_gradients() {
    check_op("relu", one_mat, |g, s, _| {
        let a = param(g, s, "a");
        g.relu(a)
    });
    check_op("tanh", one_mat, |g, s, _| {
        let a = param(g, s, "a");
        g.tanh(a)
    });
    check_op("sigmoid", one_mat, |g, s, _| {
        let a = param(g, s, "a");
        g.sigmoid(a)
    });
}

#[test]
fn softmax_gradients() {
    check_op("row_softmax", one_mat, |g, s, _| {
        let a = param(g, s, "a");
        g.row_softmax(a)
    });
}

#[test]
fn max_over_axis_gradients() {
    check_op("max_over_axis", cube, |g, s, d| {
        let a = param(g, s, "a");
        g.max_over_axis(a, d[3])
    });
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    check_op("dropout", one_mat, |g, s, _| {
        let a = param(g, s, "a");
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        g.dropout(a, 0.3, true, &mut rng)
    });
}

#[test]
fn gather_and_lookup_gradients() {
    check_op("gather_rows", one_mat, |g, s, d| {
        let a = param(g, s, "a");
        let idx: Vec<usize> = (0..5).map(|i| (i * 7) % d[0]).collect();
        let x = g.gather_rows(a, &idx)?;
        let y = g.lookup(a, d[0] - 1)?;
        let yb = g.reshape(y, &[d[1]])?;
        g.mul(x, yb)
    });
}

#[test]
fn layout_op_gradients() {
    check_op("reshape/transpose", one_mat, |g, s, d| {
        let a = param(g, s, "a");
        let t = g.transpose(a)?;
        let r = g.reshape(t, &[d[0] * d[1]])?;
        g.tanh(r)
    });
    check_op("slice_last", one_mat, |g, s, d| {
        let a = param(g, s, "a");
        let start = d[1] / 2;
        g.slice_last(a, start, d[1] - start)
    });
}

#[test]
fn pick_and_log_gradients() {
    check_op("pick/log", one_mat, |g, s, d| {
        let a = param(g, s, "a");
        let p = g.row_softmax(a)?;
        let idx: Vec<usize> = (0..d[0]).map(|r| (r * 3) % d[1]).collect();
        let picked = g.pick(p, &idx)?;
        g.log(picked, 1e-12)
    });
}
