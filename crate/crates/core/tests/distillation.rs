mod common;

use std::sync::Arc;

use common::oracles::{max_relative_gradient_error, random, teachers, Setup};
use gallon::datasets::TaskKind;
use gallon::distillation::losses::probabilities;
use gallon::distillation::{label_distill_loss, pred_loss, repr_distill_loss, total_loss, TeacherBatch};
use gallon::models::{mlp_forward, ProjectionHeads};
use gallon::tensorcore::rng::seeded;
use gallon::tensorcore::{Tape, Tensor};
use rand::Rng as _;

#[test]
fn composite_objective_gradients_match_finite_differences() {
    let mut rng = seeded(99);
    for round in 0..20 {
        let s = Setup::random(&mut rng);
        let worst = max_relative_gradient_error(&s, 12, &mut rng);
        assert!(worst < 1e-4, "round {round}: relative error {worst}");
    }
}

#[test]
fn zero_weights_total_equals_prediction_loss() {
    let mut rng = seeded(5);
    for _ in 0..100 {
        let mut s = Setup::random(&mut rng);
        s.config.alpha = 0.0;
        s.config.beta = 0.0;
        let mut tape = Tape::new();
        let vars = s.params.register(&mut tape).unwrap();
        let out = mlp_forward(&mut tape, &s.batch, &vars).unwrap();
        let parts = total_loss(&mut tape, out, &s.batch, &s.teachers, None, &s.config, s.kind).unwrap();
        let plain = pred_loss(&mut tape, out.y, s.batch.labels.clone(), s.batch.mask.clone(), s.kind).unwrap();
        assert_eq!(tape.value(parts.total).item(), tape.value(plain).item());
    }
}

#[test]
fn classification_total_is_sum_of_parts() {
    let mut rng = seeded(6);
    let mut done = 0;
    while done < 100 {
        let mut s = Setup::random(&mut rng);
        if s.kind != TaskKind::Classification {
            continue;
        }
        s.config.mode = None;
        let mut tape = Tape::new();
        let vars = s.params.register(&mut tape).unwrap();
        let out = mlp_forward(&mut tape, &s.batch, &vars).unwrap();
        let parts = total_loss(&mut tape, out, &s.batch, &s.teachers, None, &s.config, s.kind).unwrap();
        let l0 = pred_loss(&mut tape, out.y, s.batch.labels.clone(), s.batch.mask.clone(), s.kind).unwrap();
        let ld = label_distill_loss(&mut tape, out.y, &s.teachers, s.config.alpha, s.config.beta, s.kind).unwrap();
        let expected = tape.value(l0).item() + ld.map_or(0.0, |v| tape.value(v).item());
        let total = tape.value(parts.total).item();
        assert!((total - expected).abs() <= 4.0 * f64::EPSILON * expected.abs().max(1.0));
        done += 1;
    }
}

#[test]
fn bernoulli_kl_is_non_negative_and_zero_on_match() {
    let mut rng = seeded(8);
    for _ in 0..200 {
        let g = rng.random_range(1..6);
        let student = random(g, 2, &mut rng);
        let teacher_logits = random(g, 2, &mut rng);
        let mut tape = Tape::new();
        let z = tape.constant(student.clone()).unwrap();
        let kl = tape.bernoulli_kl(z, Arc::new(probabilities(&teacher_logits)), None).unwrap();
        assert!(tape.value(kl).item() >= 0.0);
        let same = tape.bernoulli_kl(z, Arc::new(probabilities(&student)), None).unwrap();
        assert!(tape.value(same).item().abs() < 1e-12);
    }
}

#[test]
fn distillation_losses_ignore_batch_order() {
    let mut rng = seeded(10);
    for _ in 0..50 {
        let g = rng.random_range(2..7);
        let y = random(g, 2, &mut rng);
        let h = random(g, 4, &mut rng);
        let t = teachers(g, 2, 3, 4, &mut rng);
        let heads = ProjectionHeads::init(4, 3, 4, 3, false, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..g).collect();
        perm.reverse();
        perm.rotate_left(rng.random_range(0..g));
        let pt = TeacherBatch {
            y_lm: t.y_lm.as_ref().map(|x| x.select_rows(&perm)),
            h_lm: t.h_lm.as_ref().map(|x| x.select_rows(&perm)),
            y_gnn: t.y_gnn.as_ref().map(|x| x.select_rows(&perm)),
            h_gnn: t.h_gnn.as_ref().map(|x| x.select_rows(&perm)),
        };
        let eval = |y: &Tensor, h: &Tensor, t: &TeacherBatch| {
            let mut tape = Tape::new();
            let yv = tape.constant(y.clone()).unwrap();
            let hv = tape.constant(h.clone()).unwrap();
            let heads_v = heads.register(&mut tape).unwrap();
            let a = label_distill_loss(&mut tape, yv, t, 0.7, 1.3, TaskKind::Classification).unwrap().unwrap();
            let b = label_distill_loss(&mut tape, yv, t, 0.7, 1.3, TaskKind::Regression).unwrap().unwrap();
            let c = repr_distill_loss(&mut tape, hv, t, &heads_v, 0.7, 1.3).unwrap().unwrap();
            [tape.value(a).item(), tape.value(b).item(), tape.value(c).item()]
        };
        let before = eval(&y, &h, &t);
        let after = eval(&y.select_rows(&perm), &h.select_rows(&perm), &pt);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn representation_loss_examples() {
    let identity = |n: usize| {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    };
    let mut heads = ProjectionHeads::init(3, 3, 3, 3, false, &mut seeded(0)).unwrap();
    heads.u_mlp.w = identity(3);
    heads.u_lm.w = identity(3);
    heads.u_gnn.w = identity(3);
    let h = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 4.0]]);
    let shifted = Tensor {
        shape: h.shape,
        data: h.data.iter().map(|x| x + 1.0).collect(),
    };
    let t = TeacherBatch {
        y_lm: None,
        h_lm: Some(shifted),
        y_gnn: None,
        h_gnn: Some(h.clone()),
    };
    let run = |alpha: f64, beta: f64| {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone()).unwrap();
        let heads_v = heads.register(&mut tape).unwrap();
        let l = repr_distill_loss(&mut tape, hv, &t, &heads_v, alpha, beta).unwrap().unwrap();
        tape.value(l).item()
    };
    assert!((run(1.0, 0.0) - 1.0).abs() < 1e-15);
    assert!((run(2.0, 0.0) - 2.0).abs() < 1e-15);
    assert!(run(0.0, 1.0).abs() < 1e-15);
}
