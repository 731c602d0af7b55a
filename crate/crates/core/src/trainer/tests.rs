use std::fs;

use super::*;
use crate::nn::Module;

/// A configuration small enough for many runs per test.
fn tiny(env: &str) -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.env = env.into();
    c.steps = 160;
    c.warmup_steps = 60;
    c.eval_interval = 40;
    c.eval_episodes = 1;
    c.step_batch = 16;
    c.seq_updates = 2;
    c.seq_batch = 8;
    c.actor_hidden = 8;
    c.critic_hidden = 8;
    c.model_hidden = 8;
    c.gru_hidden = 4;
    c.val_batch = 8;
    c.horizon = 2;
    c
}

fn param_values(l: &Learner) -> Vec<Vec<f64>> {
    l.all_params().iter().map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn one_step_runs_the_updates_in_order() {
    let mut c = tiny("linear");
    c.step_updates = 2;
    c.seq_updates = 3;
    let mut t = Trainer::new(c).unwrap();
    for _ in 0..60 {
        t.step().unwrap();
    }
    t.record_updates();
    t.step().unwrap();
    let single = [
        UpdateEvent::Actor {
            mode: ActorMode::Svg,
            horizon: 2,
        },
        UpdateEvent::Temperature,
        UpdateEvent::Critic(CriticTarget::Bellman),
        UpdateEvent::Reward,
        UpdateEvent::Termination,
        UpdateEvent::TargetEma,
    ];
    let mut expected = single.to_vec();
    expected.extend(single);
    expected.extend([UpdateEvent::Dynamics; 3]);
    assert_eq!(t.update_trace().unwrap(), expected.as_slice());
}

#[test]
fn warmup_steps_run_no_updates() {
    let mut t = Trainer::new(tiny("linear")).unwrap();
    let before = param_values(t.learner());
    t.record_updates();
    for _ in 0..60 {
        t.step().unwrap();
    }
    assert!(t.update_trace().unwrap().is_empty());
    assert_eq!(param_values(t.learner()), before);
}

#[test]
fn model_free_mode_never_touches_the_world_model() {
    let mut c = tiny("pendulum");
    c.actor_mode = ActorMode::ModelFree;
    let mut t = Trainer::new(c).unwrap();
    let world = t.learner().world.clone();
    t.record_updates();
    for _ in 0..80 {
        t.step().unwrap();
    }
    assert_eq!(t.learner().world, world);
    let trace = t.update_trace().unwrap();
    assert!(trace.iter().all(|e| matches!(
        e,
        UpdateEvent::Actor {
            mode: ActorMode::ModelFree,
            horizon: 0
        } | UpdateEvent::Temperature
            | UpdateEvent::Critic(CriticTarget::Bellman)
            | UpdateEvent::TargetEma
    )));
}

#[test]
fn critic_expansion_changes_only_the_critic_target() {
    let traces: Vec<Vec<UpdateEvent>> = [false, true]
        .into_iter()
        .map(|mve| {
            let mut c = tiny("pendulum");
            c.critic_mve = mve;
            let mut t = Trainer::new(c).unwrap();
            t.record_updates();
            for _ in 0..70 {
                t.step().unwrap();
            }
            t.update_trace().unwrap().to_vec()
        })
        .collect();
    assert_eq!(traces[0].len(), traces[1].len());
    for (a, b) in traces[0].iter().zip(&traces[1]) {
        match (a, b) {
            (UpdateEvent::Critic(CriticTarget::Bellman), UpdateEvent::Critic(CriticTarget::Expansion { horizon: 2 })) => {}
            _ => assert_eq!(a, b),
        }
    }
}

#[test]
fn zero_horizon_matches_the_model_free_trajectory() {
    let mut svg = tiny("pendulum");
    svg.horizon = 0;
    let mut sac = svg.clone();
    sac.actor_mode = ActorMode::ModelFree;
    let mut a = Trainer::new(svg).unwrap();
    let mut b = Trainer::new(sac).unwrap();
    for _ in 0..120 {
        a.step().unwrap();
        b.step().unwrap();
        assert_eq!(a.learner().actor, b.learner().actor);
        assert_eq!(a.learner().critics, b.learner().critics);
        assert_eq!(a.learner().temperature, b.learner().temperature);
    }
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let (_, first) = train(tiny("pendulum"), None).unwrap();
    let (_, second) = train(tiny("pendulum"), None).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.iter().map(|r| r.timestep).collect::<Vec<_>>(), vec![0, 40, 80, 120, 160]);
    let mut other = tiny("pendulum");
    other.seed += 1;
    assert_ne!(train(other, None).unwrap().1, first);
}

#[test]
fn parallel_evaluation_leaves_training_unchanged() {
    let (_, serial) = train(tiny("pendulum"), None).unwrap();
    let mut t = Trainer::new(tiny("pendulum")).unwrap();
    t.set_parallel_eval(true);
    assert_eq!(t.run(None).unwrap(), serial);
}

#[test]
fn rows_carry_losses_and_model_error_after_warmup() {
    let (_, rows) = train(tiny("point-mass-gap"), None).unwrap();
    assert!(rows[0].critic_loss.is_none() && rows[0].model_mse.is_none());
    let last = rows.last().unwrap();
    for v in [last.critic_loss, last.actor_loss, last.temperature_loss, last.dynamics_loss, last.reward_loss] {
        assert!(v.unwrap().is_finite());
    }
    assert!(last.model_mse.unwrap() >= 0.0);
    assert_eq!(last.sequence_violations, 0);
    assert!(rows.windows(2).all(|w| w[0].timestep < w[1].timestep));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny("point-mass-gap")).unwrap();
    for _ in 0..90 {
        t.step().unwrap();
    }
    let a = dir.path().join("a");
    save_checkpoint(&t, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(param_values(loaded.learner()), param_values(t.learner()));
    assert_eq!(loaded.learner(), t.learner());
    assert_eq!(loaded.buffer(), t.buffer());
    let b = dir.path().join("b");
    save_checkpoint(&loaded, &b).unwrap();
    for file in ["params.bin", "meta.json", "replay.bin"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn resumed_run_reproduces_the_uninterrupted_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny("pendulum");
    c.checkpoint_interval = 80;
    let (_, full) = train(c.clone(), Some(&dir.path().join("full"))).unwrap();

    // Stop at the first checkpoint, then resume in a fresh trainer.
    let short_dir = dir.path().join("short");
    let mut interrupted = Trainer::new(c.clone()).unwrap();
    let mut head = vec![interrupted.log_row().unwrap()];
    while interrupted.timestep() < 80 {
        interrupted.step().unwrap();
        if interrupted.timestep() % c.eval_interval == 0 {
            head.push(interrupted.log_row().unwrap());
        }
    }
    save_checkpoint(&interrupted, &checkpoint_dir(&short_dir)).unwrap();
    drop(interrupted);

    let mut resumed = load_checkpoint(&checkpoint_dir(&short_dir)).unwrap();
    let tail = resumed.run(None).unwrap();
    head.extend(tail);
    assert_eq!(head, full);
    let logged = read_jsonl(&dir.path().join("full").join("metrics.jsonl")).unwrap();
    assert_eq!(logged, full);
}

#[test]
fn evaluate_reads_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny("linear");
    c.steps = 40;
    train(c, Some(dir.path())).unwrap();
    let ckpt = checkpoint_dir(dir.path());
    let a = evaluate(&ckpt, None, 3, 7).unwrap();
    let b = evaluate(&ckpt, None, 3, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.mean.is_finite() && a.mean < 0.0);
}

#[test]
fn non_finite_loss_aborts_with_a_diagnostic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny("linear")).unwrap();
    for p in t.learner.critics.all_params_mut() {
        p.value.data_mut()[0] = f64::NAN;
    }
    let err = t.run(Some(dir.path())).unwrap_err();
    assert!(matches!(err, crate::Error::NonFinite(_)), "{err}");
    assert!(dir.path().join("diagnostic").join("meta.json").exists());
}

#[test]
fn learner_parameter_names_are_unique() {
    let t = Trainer::new(tiny("pendulum")).unwrap();
    let names: Vec<&str> = t.learner().all_params().iter().map(|p| p.name.as_str()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert!(t.learner().actor.num_params() > 0);
}
