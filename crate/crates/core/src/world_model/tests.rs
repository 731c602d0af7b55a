use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::finite_diff_check;
use crate::nn::{bind_all, collect_grads, Adam};

fn sizes(activation: Activation) -> ModelSizes {
    ModelSizes {
        hidden: 16,
        hidden_layers: 1,
        gru_hidden: 8,
        gru_layers: 2,
        activation,
    }
}

fn random(rng: &mut ChaCha8Rng, dims: [usize; 2], bound: f64) -> Tensor {
    let n = dims[0] * dims[1];
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}

fn linear_corpus(rng: &mut ChaCha8Rng, batch: usize, len: usize) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut states = vec![random(rng, [batch, 1], 1.0)];
    let mut actions = Vec::new();
    for _ in 1..len {
        let u = random(rng, [batch, 1], 1.0);
        let x = states.last().unwrap();
        let next: Vec<f64> = x.data().iter().zip(u.data()).map(|(x, u)| 0.9 * x + 0.1 * u).collect();
        states.push(Tensor::new([batch, 1], next).unwrap());
        actions.push(u);
    }
    (states, actions)
}

#[test]
fn zero_decoder_rollout_is_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = DynamicsModel::new(3, 2, sizes(Activation::Relu), &mut rng).unwrap();
    model.decoder_mut().zero_output_layer();
    let tape = Tape::new();
    let vars = model.bind(&tape, false);
    let x1 = random(&mut rng, [4, 3], 2.0);
    let actions: Vec<Var> = (0..5).map(|_| tape.constant(random(&mut rng, [4, 2], 1.0))).collect();
    let preds = vars.rollout(tape.constant(x1.clone()), &actions).unwrap();
    assert_eq!(preds.len(), 5);
    for p in preds {
        assert_eq!(p.value(), x1);
    }
}

#[test]
fn rollout_has_prefix_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = DynamicsModel::new(2, 1, sizes(Activation::Relu), &mut rng).unwrap();
    let tape = Tape::new();
    let vars = model.bind(&tape, false);
    let x1 = tape.constant(random(&mut rng, [3, 2], 1.0));
    let actions: Vec<Var> = (0..4).map(|_| tape.constant(random(&mut rng, [3, 1], 1.0))).collect();
    let full = vars.rollout(x1, &actions).unwrap();
    for j in 1..=4 {
        let prefix = vars.rollout(x1, &actions[..j]).unwrap();
        for (a, b) in prefix.iter().zip(&full) {
            assert_eq!(a.value(), b.value());
        }
    }
    let mut hidden = vars.initial_state(&tape, 3);
    let single = vars.step(x1, actions[0], &mut hidden).unwrap();
    assert_eq!(single.value(), full[0].value());
    assert!(vars.rollout(x1, &[]).is_err());
}

#[test]
fn rollout_gradient_wrt_initial_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = DynamicsModel::new(2, 1, sizes(Activation::Tanh), &mut rng).unwrap();
    let actions: Vec<Tensor> = (0..3).map(|_| random(&mut rng, [2, 1], 1.0)).collect();
    let x1 = random(&mut rng, [2, 2], 1.0);
    let check = finite_diff_check(
        |tape, p| {
            let vars = model.bind(tape, false);
            let us: Vec<Var> = actions.iter().map(|u| tape.constant(u.clone())).collect();
            let preds = vars.rollout(p[0], &us)?;
            let mut total = tape.scalar(0.0);
            for x in preds {
                total = total.add(x.square()?.sum())?;
            }
            Ok(total)
        },
        &[x1],
        1e-5,
    )
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn dynamics_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = DynamicsModel::new(2, 1, sizes(Activation::Tanh), &mut rng).unwrap();
    let (states, actions) = linear_corpus(&mut rng, 3, 3);
    let states: Vec<Tensor> = states.into_iter().map(|s| Tensor::new([3, 2], s.data().repeat(2)).unwrap()).collect();
    let params: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    let check = finite_diff_check(|tape, p| model.with_vars(p).loss(tape, &states, &actions), &params, 1e-5).unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn dynamics_loss_is_zero_for_static_data_and_zero_decoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = DynamicsModel::new(1, 1, sizes(Activation::Relu), &mut rng).unwrap();
    model.decoder_mut().zero_output_layer();
    let x = random(&mut rng, [6, 1], 1.0);
    let states = vec![x.clone(), x.clone(), x];
    let actions = vec![random(&mut rng, [6, 1], 1.0), random(&mut rng, [6, 1], 1.0)];
    let tape = Tape::new();
    let loss = model.bind(&tape, false).loss(&tape, &states, &actions).unwrap();
    assert_eq!(loss.item(), 0.0);
    assert!(model.bind(&tape, false).loss(&tape, &states[..1], &[]).is_err());
    assert!(model.bind(&tape, false).loss(&tape, &states, &actions[..1]).is_err());
}

/// Adam on a fresh batch each update; returns the final held-out loss.
fn fit_dynamics(model: &mut DynamicsModel, rng: &mut ChaCha8Rng, steps: usize, lr: f64, len: usize) -> f64 {
    let mut opt = Adam::new(lr);
    for _ in 0..steps {
        let (states, actions) = linear_corpus(rng, 64, len);
        let tape = Tape::new();
        let vars = bind_all(&model.params(), &tape, true);
        let loss = model.with_vars(&vars).loss(&tape, &states, &actions).unwrap();
        loss.backward().unwrap();
        let mut grads = collect_grads(&vars);
        opt.step(model.params_mut(), &mut grads).unwrap();
    }
    let (states, actions) = linear_corpus(rng, 512, len);
    let tape = Tape::new();
    model.bind(&tape, false).loss(&tape, &states, &actions).unwrap().item()
}

#[test]
fn dynamics_learns_linear_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = DynamicsModel::new(1, 1, sizes(Activation::Relu), &mut rng).unwrap();
    let loss = fit_dynamics(&mut model, &mut rng, 200, 3e-3, 2);
    assert!(loss < 1e-3, "loss {loss}");
}

#[test]
fn reward_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = RewardModel::new(2, 1, sizes(Activation::Relu), &mut rng).unwrap();
    model.net_mut().zero_output_layer();
    let x = random(&mut rng, [8, 2], 1.0);
    let u = random(&mut rng, [8, 1], 1.0);
    let tape = Tape::new();
    let vars = model.bind(&tape, false);
    let pred = vars.predict(tape.constant(x.clone()), tape.constant(u.clone())).unwrap().value();
    let zero = vars.loss(tape.constant(x.clone()), tape.constant(u.clone()), &pred).unwrap();
    assert_eq!(zero.item(), 0.0);

    let mut r: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = r.iter().sum::<f64>() / 8.0;
    r.iter_mut().for_each(|v| *v -= m);
    let variance = r.iter().map(|v| v * v).sum::<f64>() / 8.0;
    let r = Tensor::new([8, 1], r).unwrap();
    let loss = vars.loss(tape.constant(x), tape.constant(u), &r).unwrap();
    assert!((loss.item() - variance).abs() < 1e-14);
}

#[test]
fn reward_learns_negative_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = RewardModel::new(1, 1, sizes(Activation::Relu), &mut rng).unwrap();
    let mut opt = Adam::new(3e-3);
    let batch = |rng: &mut ChaCha8Rng, n: usize| {
        let x = random(rng, [n, 1], 1.0);
        let u = random(rng, [n, 1], 1.0);
        let r = x.map(|v| -v * v);
        (x, u, r)
    };
    for _ in 0..1500 {
        let (x, u, r) = batch(&mut rng, 64);
        let tape = Tape::new();
        let vars = bind_all(&model.params(), &tape, true);
        let loss = model.with_vars(&vars).loss(tape.constant(x), tape.constant(u), &r).unwrap();
        loss.backward().unwrap();
        opt.step(model.params_mut(), &mut collect_grads(&vars)).unwrap();
    }
    let (x, u, r) = batch(&mut rng, 512);
    let tape = Tape::new();
    let loss = model.bind(&tape, false).loss(tape.constant(x), tape.constant(u), &r).unwrap().item();
    assert!(loss < 1e-3, "loss {loss}");
}

fn constant_termination(logit: f64) -> TerminationModel {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = TerminationModel::new(1, 1, sizes(Activation::Relu), &mut rng).unwrap();
    model.net_mut().zero_output_layer();
    let last = model.net_mut().widths().len() - 2;
    model.net_mut().layer_mut(last).1.data_mut()[0] = logit;
    model
}

#[test]
fn termination_loss_values() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros([1, 1]));
    let one = Tensor::full([1, 1], 1.0);
    let zero = Tensor::zeros([1, 1]);
    let half = constant_termination(0.0).bind(&tape, false);
    assert!((half.prob(x, x).unwrap().item() - 0.5).abs() < 1e-15);
    assert!((half.loss(x, x, &one).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);

    let sure = constant_termination(50.0).bind(&tape, false);
    let right = sure.loss(x, x, &one).unwrap().item();
    let wrong = sure.loss(x, x, &zero).unwrap().item();
    assert!(right.is_finite() && right < 1e-20);
    assert!((wrong - 50.0).abs() < 1e-12);
    let never = constant_termination(-50.0).bind(&tape, false);
    assert!(never.loss(x, x, &zero).unwrap().item() < 1e-20);
    assert!((never.loss(x, x, &one).unwrap().item() - 50.0).abs() < 1e-12);

    assert!(half.loss(x, x, &Tensor::full([1, 1], 0.5)).is_err());
}

#[test]
fn termination_learns_separable_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = TerminationModel::new(2, 1, sizes(Activation::Relu), &mut rng).unwrap();
    let mut opt = Adam::new(3e-3);
    let batch = |rng: &mut ChaCha8Rng, n: usize| {
        let x = random(rng, [n, 2], 1.0);
        let u = random(rng, [n, 1], 1.0);
        let d: Vec<f64> = (0..n)
            .map(|i| f64::from(u8::from(x.row(i)[0] + 0.5 * x.row(i)[1] > 0.2)))
            .collect();
        (x, u, Tensor::new([n, 1], d).unwrap())
    };
    for _ in 0..500 {
        let (x, u, d) = batch(&mut rng, 64);
        let tape = Tape::new();
        let vars = bind_all(&model.params(), &tape, true);
        let loss = model.with_vars(&vars).loss(tape.constant(x), tape.constant(u), &d).unwrap();
        loss.backward().unwrap();
        opt.step(model.params_mut(), &mut collect_grads(&vars)).unwrap();
    }
    let (x, u, d) = batch(&mut rng, 1000);
    let tape = Tape::new();
    let p = model.bind(&tape, false).prob(tape.constant(x), tape.constant(u)).unwrap().value();
    let correct = p.data().iter().zip(d.data()).filter(|(p, d)| (**p > 0.5) == (**d == 1.0)).count();
    assert!(correct > 950, "accuracy {}", correct as f64 / 1000.0);
}
