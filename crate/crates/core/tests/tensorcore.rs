use std::sync::Arc;

use gallon::tensorcore::rng::{seeded, Rng};
use gallon::tensorcore::{AdamConfig, AdamState, SparseMatrix, Tape, Tensor, Var};
use rand::Rng as _;

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor {
        shape: [rows, cols],
        data: (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect(),
    }
}

fn random_sparse(rows: usize, cols: usize, rng: &mut Rng) -> SparseMatrix {
    let nnz = rng.random_range(0..=rows * cols);
    let triplets = (0..nnz)
        .map(|_| (rng.random_range(0..rows), rng.random_range(0..cols), rng.random_range(-2.0..2.0)))
        .collect();
    SparseMatrix::from_triplets(rows, cols, triplets)
}

#[test]
fn spmm_matches_dense_product() {
    let mut rng = seeded(42);
    for _ in 0..50 {
        let (r, c, k) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..6));
        let a = random_sparse(r, c, &mut rng);
        let h = random(c, k, &mut rng);
        let sparse = a.spmm(&h).unwrap();
        let dense = a.to_dense().matmul(&h).unwrap();
        for (x, y) in sparse.data.iter().zip(&dense.data) {
            assert!((x - y).abs() <= 1e-12);
        }
        let g = random(r, k, &mut rng);
        let st = a.spmm_transposed(&g);
        let dt = a.to_dense().transpose().matmul(&g).unwrap();
        for (x, y) in st.data.iter().zip(&dt.data) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

/// Central differences of `f` against reverse mode, relative error
/// `|a − n| / max(|a|, |n|, 1e-4)`.
fn check_gradients(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone()).unwrap()).collect();
        let out = f(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let grads = tape.backward(out).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], x);
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data[j] += h;
            let mut minus = inputs.to_vec();
            minus[k].data[j] -= h;
            let (tp, _, op) = eval(&plus);
            let (tm, _, om) = eval(&minus);
            let numeric = (tp.value(op).item() - tm.value(om).item()) / (2.0 * h);
            let a = analytic.data[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
        }
    }
    worst
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = seeded(7);
    for round in 0..20 {
        let (n, d, k) = (rng.random_range(2..6), rng.random_range(1..4), rng.random_range(1..4));
        let x = random(n, d, &mut rng);
        let w = random(d, k, &mut rng);
        let b = random(1, k, &mut rng);
        let adj = Arc::new(random_sparse(n, n, &mut rng));
        let groups = rng.random_range(1..=n);
        let mut ids: Vec<usize> = (0..n).map(|i| i * groups / n).collect();
        ids.sort_unstable();
        let ids = Arc::new(ids);
        let targets = Arc::new(Tensor {
            shape: [groups, k],
            data: (0..groups * k).map(|_| rng.random_range(0..2) as f64).collect(),
        });
        let mut mask: Vec<bool> = (0..groups * k).map(|_| rng.random_bool(0.7)).collect();
        mask[0] = true;
        let mask = Arc::new(mask);
        let teacher = Arc::new(Tensor {
            shape: [groups, k],
            data: (0..groups * k).map(|_| rng.random_range(0.01..0.99)).collect(),
        });
        let reference = random(groups, k, &mut rng);

        let f = |tape: &mut Tape, v: &[Var]| {
            let xw = tape.matmul(v[0], v[1]).unwrap();
            let prop = tape.spmm(adj.clone(), xw).unwrap();
            let z = tape.add_bias(prop, v[2]).unwrap();
            let a = tape.relu(z).unwrap();
            let s = tape.sigmoid(z).unwrap();
            let mix = tape.mul(a, s).unwrap();
            let mix = tape.sub(mix, z).unwrap();
            let pooled = tape.segment_mean(mix, ids.clone(), groups).unwrap();
            let bce = tape.bce_with_logits(pooled, targets.clone(), mask.clone()).unwrap();
            let kl = tape.bernoulli_kl(pooled, teacher.clone(), None).unwrap();
            let r = tape.constant(reference.clone()).unwrap();
            let rmse = tape.rmse(pooled, r, Some(mask.clone())).unwrap();
            let ls = tape.log_softmax(pooled).unwrap();
            let ls = tape.mean(ls).unwrap();
            let total = tape.add(bce, kl).unwrap();
            let total = tape.add(total, rmse).unwrap();
            let total = tape.add(total, ls).unwrap();
            tape.scale(total, 0.7).unwrap()
        };
        let worst = check_gradients(&[x, w, b], &f);
        assert!(worst < 1e-4, "round {round}: relative error {worst}");
    }
}

#[test]
fn adam_first_step_is_lr_times_sign() {
    let mut p = Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]);
    let g = Tensor::from_rows(&[vec![0.3, -7.0, 1e-3]]);
    let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
    adam.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
    // bias-corrected first step: m̂ = g, v̂ = g², so Δ = lr·g/(|g|+ε)
    let expected: Vec<f64> = [1.0, -2.0, 0.5]
        .iter()
        .zip(&g.data)
        .map(|(x, gi)| x - 1e-3 * gi / (gi.abs() + 1e-8))
        .collect();
    for (a, e) in p.data.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-15);
    }
}

#[test]
fn non_finite_gradient_leaves_parameters_untouched() {
    let mut p = Tensor::from_rows(&[vec![1.0, 2.0]]);
    let before = p.clone();
    let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
    assert!(adam.step(&mut [&mut p], &[Tensor::from_rows(&[vec![0.1, f64::NAN]])]).is_err());
    assert_eq!(p, before);
}
