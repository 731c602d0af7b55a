//! Ablation harnesses: model architecture on a fixed corpus, and where the
//! imagined expansion is used during training.

use std::fmt;
use std::fs;
use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ActorMode, TrainConfig};
use super::learner::descend;
use super::metrics::MetricsRow;
use super::plots::emit_plots;
use super::run::train;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp, MlpVars};
use crate::replay::{EpisodeBuffer, NormStats, Normalizer, SequenceBatch, Transition};
use crate::world_model::{DynamicsModel, ModelSizes};

/// How a one-step ensemble produces multi-step predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleRollout {
    /// Every member rolls out on its own predictions; the trajectories are
    /// averaged afterwards.
    MemberMean,
    /// Members predict from the shared mean state at every step.
    MeanState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureConfig {
    /// Number of data phases; phase `p` trains on the first `p + 1` chunks.
    pub phases: usize,
    /// Most recent episodes, never trained on.
    pub test_episodes: usize,
    /// Every `holdout_every`-th episode of a chunk goes to the holdout split.
    pub holdout_every: usize,
    pub updates: usize,
    pub batch: usize,
    /// Transitions per recurrent training sequence.
    pub train_len: usize,
    /// Prediction steps of the reported error.
    pub eval_len: usize,
    pub ensemble_size: usize,
    pub rollout: EnsembleRollout,
    pub hidden: usize,
    pub layers: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub activation: Activation,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            phases: 4,
            test_episodes: 2,
            holdout_every: 4,
            updates: 500,
            batch: 64,
            train_len: 3,
            eval_len: 3,
            ensemble_size: 5,
            rollout: EnsembleRollout::MemberMean,
            hidden: 64,
            layers: 2,
            gru_hidden: 32,
            gru_layers: 1,
            activation: Activation::Relu,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// One cell of the architecture table: `eval_len`-step per-element MSE in
/// the normalized space fitted on that phase's training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureRow {
    pub phase: usize,
    pub model: String,
    pub split: String,
    pub episodes: usize,
    pub mse: f64,
}

/// Rebuilds a buffer holding `episodes` of `corpus`, closed at the end.
fn subset(corpus: &EpisodeBuffer, pick: &[usize]) -> Result<EpisodeBuffer> {
    let episodes: Vec<_> = corpus.episodes().collect();
    let total: usize = pick.iter().map(|&i| episodes[i].len()).sum();
    let mut buf = EpisodeBuffer::new(corpus.state_dim(), corpus.action_dim(), total.max(1))?;
    for &i in pick {
        for t in &episodes[i].transitions {
            buf.push(t.clone())?;
        }
        buf.end_episode();
    }
    Ok(buf)
}

/// Every window of `len` transitions, in corpus order.
fn all_windows(buf: &EpisodeBuffer, len: usize) -> Result<Option<SequenceBatch>> {
    let mut rows = Vec::new();
    for e in buf.episodes() {
        for start in 0..(e.len() + 1).saturating_sub(len) {
            rows.push((e.id, &e.transitions[start..start + len]));
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let stack = |f: &dyn Fn(&[Transition]) -> &[f64]| -> Result<Tensor> {
        let data: Vec<f64> = rows.iter().flat_map(|(_, r)| f(r).iter().copied()).collect();
        let width = data.len() / rows.len();
        Tensor::new([rows.len(), width], data)
    };
    let mut states = Vec::with_capacity(len + 1);
    let mut actions = Vec::with_capacity(len);
    let mut rewards = Vec::with_capacity(len);
    for t in 0..len {
        states.push(stack(&|r| &r[t].state)?);
        actions.push(stack(&|r| &r[t].action)?);
        rewards.push(Tensor::new([rows.len(), 1], rows.iter().map(|(_, r)| r[t].reward).collect())?);
    }
    states.push(stack(&|r| &r[len - 1].next_state)?);
    let origins = buf
        .episodes()
        .flat_map(|e| (0..(e.len() + 1).saturating_sub(len)).map(move |s| (e.id, s)))
        .collect();
    Ok(Some(SequenceBatch {
        states,
        actions,
        rewards,
        origins,
    }))
}

fn per_element_mse(preds: &[Tensor], truth: &[Tensor]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, y) in preds.iter().zip(truth) {
        for (a, b) in p.data().iter().zip(y.data()) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    sum / count as f64
}

/// Five (by default) one-step fully-connected delta predictors.
struct Ensemble {
    members: Vec<Mlp>,
}

fn member_step<'t>(net: &MlpVars<'t>, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
    x.add(net.forward(x.tape().concat(&[x, u])?)?)
}

impl Ensemble {
    fn predict(&self, x1: &Tensor, actions: &[Tensor], mode: EnsembleRollout) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let nets: Vec<MlpVars<'_>> = self.members.iter().map(|m| m.bind(&tape, false)).collect();
        let us: Vec<Var<'_>> = actions.iter().map(|u| tape.constant(u.clone())).collect();
        let k = self.members.len() as f64;
        let mean = |xs: &[Var<'_>]| -> Result<Tensor> {
            let mut acc = xs[0].value();
            for x in &xs[1..] {
                for (a, b) in acc.data_mut().iter_mut().zip(x.value().data()) {
                    *a += b;
                }
            }
            Ok(acc.map(|v| v / k))
        };
        let mut out = Vec::with_capacity(actions.len());
        match mode {
            EnsembleRollout::MemberMean => {
                let mut xs: Vec<Var<'_>> = vec![tape.constant(x1.clone()); nets.len()];
                for &u in &us {
                    for (x, net) in xs.iter_mut().zip(&nets) {
                        *x = member_step(net, *x, u)?;
                    }
                    out.push(mean(&xs)?);
                }
            }
            EnsembleRollout::MeanState => {
                let mut x = x1.clone();
                for &u in &us {
                    let xv = tape.constant(x);
                    let next = nets.iter().map(|n| member_step(n, xv, u)).collect::<Result<Vec<_>>>()?;
                    x = mean(&next)?;
                    out.push(x.clone());
                }
            }
        }
        Ok(out)
    }
}

fn normalized(batch: &SequenceBatch, stats: &NormStats) -> (Vec<Tensor>, Vec<Tensor>) {
    (batch.states.iter().map(|s| stats.normalize_tensor(s)).collect(), batch.actions.clone())
}

/// Trains a recurrent model and a one-step ensemble per phase and reports
/// their multi-step error on the phase's train and holdout splits and on
/// the fixed test split. Episodes keep their corpus (temporal) order.
pub fn ablate_architecture(corpus: &EpisodeBuffer, config: &ArchitectureConfig) -> Result<Vec<ArchitectureRow>> {
    let n_episodes = corpus.num_episodes();
    if config.phases == 0 || config.test_episodes == 0 || config.holdout_every < 2 || config.ensemble_size == 0 {
        return Err(Error::invalid(
            "ablate_architecture",
            "phases, test episodes and ensemble size must be positive and holdout_every at least 2",
        ));
    }
    if config.train_len == 0 || config.eval_len == 0 || config.batch == 0 {
        return Err(Error::invalid("ablate_architecture", "sequence lengths and batch must be positive"));
    }
    let pool = n_episodes.saturating_sub(config.test_episodes);
    if pool < config.phases * config.holdout_every {
        return Err(Error::invalid(
            "ablate_architecture",
            format!(
                "{n_episodes} episodes cannot fill {} test episodes plus {} phases of {} episodes",
                config.test_episodes, config.phases, config.holdout_every
            ),
        ));
    }
    let test = subset(corpus, &(pool..n_episodes).collect::<Vec<_>>())?;
    let (m, n) = (corpus.state_dim(), corpus.action_dim());
    let sizes = ModelSizes {
        hidden: config.hidden,
        hidden_layers: config.layers,
        gru_hidden: config.gru_hidden,
        gru_layers: config.gru_layers,
        activation: config.activation,
    };
    let mut rows = Vec::new();
    for phase in 0..config.phases {
        let end = pool * (phase + 1) / config.phases;
        let (train_ids, holdout_ids): (Vec<usize>, Vec<usize>) =
            (0..end).partition(|i| i % config.holdout_every != config.holdout_every - 1);
        let train_buf = subset(corpus, &train_ids)?;
        let holdout = subset(corpus, &holdout_ids)?;
        if train_buf.sequence_starts(config.train_len.max(config.eval_len)) == 0 {
            return Err(Error::invalid(
                "ablate_architecture",
                format!("phase {phase} has no training episode of {} transitions", config.train_len.max(config.eval_len)),
            ));
        }
        let mut normalizer = Normalizer::new(m, Normalizer::DEFAULT_FLOOR)?;
        for e in train_buf.episodes() {
            for t in &e.transitions {
                normalizer.update(&t.state);
            }
            if let Some(last) = e.transitions.last() {
                normalizer.update(&last.next_state);
            }
        }
        let stats = normalizer.stats();
        let phase_seed = config.seed.wrapping_add(phase as u64);

        let mut rng = ChaCha8Rng::seed_from_u64(phase_seed);
        let mut recurrent = DynamicsModel::new(m, n, sizes, &mut rng)?;
        let mut opt = Adam::new(config.lr);
        for _ in 0..config.updates {
            let batch = train_buf.sample_sequences(config.batch, config.train_len, &mut rng)?;
            let (states, actions) = normalized(&batch, &stats);
            descend(&mut recurrent, &mut opt, "dynamics", |module, tape, vars| {
                module.with_vars(vars).loss(tape, &states, &actions)
            })?;
        }

        let mut members = Vec::with_capacity(config.ensemble_size);
        for k in 0..config.ensemble_size {
            let mut rng = ChaCha8Rng::seed_from_u64(phase_seed);
            rng.set_stream(1 + k as u64);
            let mut net = Mlp::with_hidden(
                &format!("ensemble.{k}"),
                m + n,
                config.hidden,
                config.layers,
                m,
                config.activation,
                1.0,
                &mut rng,
            )?;
            let mut opt = Adam::new(config.lr);
            for _ in 0..config.updates {
                let b = train_buf.sample_steps(config.batch, &mut rng)?;
                let (x, u, y) = (stats.normalize_tensor(&b.states), b.actions, stats.normalize_tensor(&b.next_states));
                descend(&mut net, &mut opt, "ensemble", |module, tape, vars| {
                    let pred = member_step(&module.with_vars(vars), tape.constant(x.clone()), tape.constant(u.clone()))?;
                    Ok(pred.sub(tape.constant(y.clone()))?.square()?.mean())
                })?;
            }
            members.push(net);
        }
        let ensemble = Ensemble { members };

        for (split, buf) in [("train", &train_buf), ("holdout", &holdout), ("test", &test)] {
            let Some(windows) = all_windows(buf, config.eval_len)? else {
                continue;
            };
            let (states, actions) = normalized(&windows, &stats);
            let tape = Tape::new();
            let preds: Vec<Tensor> = recurrent
                .bind(&tape, false)
                .rollout(
                    tape.constant(states[0].clone()),
                    &actions.iter().map(|u| tape.constant(u.clone())).collect::<Vec<_>>(),
                )?
                .iter()
                .map(|v| v.value())
                .collect();
            let ens = ensemble.predict(&states[0], &actions, config.rollout)?;
            for (model, p) in [("recurrent", &preds), ("ensemble", &ens)] {
                let mse = per_element_mse(p, &states[1..]);
                info!("phase {phase} {model} {split}: {mse:.3e}");
                rows.push(ArchitectureRow {
                    phase,
                    model: model.to_string(),
                    split: split.to_string(),
                    episodes: buf.num_episodes(),
                    mse,
                });
            }
        }
    }
    Ok(rows)
}

/// Writes the architecture table as CSV.
pub fn write_architecture_table(rows: &[ArchitectureRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Where the imagined expansion enters training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpansionCombo {
    /// SVG actor, single-step Bellman critic target.
    ActorSvg,
    /// Model-free actor, expanded critic target.
    CriticMve,
    Both,
}

impl ExpansionCombo {
    pub const ALL: [ExpansionCombo; 3] = [ExpansionCombo::ActorSvg, ExpansionCombo::CriticMve, ExpansionCombo::Both];

    pub fn apply(self, config: &mut TrainConfig) {
        let (mode, mve) = match self {
            ExpansionCombo::ActorSvg => (ActorMode::Svg, false),
            ExpansionCombo::CriticMve => (ActorMode::ModelFree, true),
            ExpansionCombo::Both => (ActorMode::Svg, true),
        };
        config.actor_mode = mode;
        config.critic_mve = mve;
    }
}

impl fmt::Display for ExpansionCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpansionCombo::ActorSvg => "actor-svg",
            ExpansionCombo::CriticMve => "critic-mve",
            ExpansionCombo::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionRun {
    pub combo: ExpansionCombo,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl ExpansionRun {
    /// Mean evaluation return over the whole logged curve.
    pub fn curve_mean(&self) -> f64 {
        self.rows.iter().map(|r| r.eval_return).sum::<f64>() / self.rows.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionReport {
    pub runs: Vec<ExpansionRun>,
}

impl ExpansionReport {
    pub fn run(&self, combo: ExpansionCombo, seed: u64) -> Option<&ExpansionRun> {
        self.runs.iter().find(|r| r.combo == combo && r.seed == seed)
    }

    /// Seeds on which `worse`'s curve lies below `better`'s on average.
    pub fn dominated_seeds(&self, worse: ExpansionCombo, better: ExpansionCombo) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        seeds.dedup();
        seeds
            .into_iter()
            .filter(|&s| match (self.run(worse, s), self.run(better, s)) {
                (Some(w), Some(b)) => w.curve_mean() < b.curve_mean(),
                _ => false,
            })
            .collect()
    }
}

/// Trains every combination on every seed from `base`. With `out_dir`, runs
/// log under `<combo>/seed-<s>`, each combination gets return and model-error
/// plots, and `model_error.csv` holds the per-run return and model-error
/// traces.
pub fn ablate_expansion(base: &TrainConfig, seeds: &[u64], out_dir: Option<&Path>) -> Result<ExpansionReport> {
    let mut runs = Vec::new();
    for &seed in seeds {
        for combo in ExpansionCombo::ALL {
            let mut config = base.clone();
            config.seed = seed;
            combo.apply(&mut config);
            let dir = out_dir.map(|d| d.join(combo.to_string()).join(format!("seed-{seed}")));
            let (_, rows) = train(config, dir.as_deref())?;
            runs.push(ExpansionRun { combo, seed, rows });
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        for combo in ExpansionCombo::ALL {
            let logs: Vec<Vec<MetricsRow>> = runs.iter().filter(|r| r.combo == combo).map(|r| r.rows.clone()).collect();
            if !logs.is_empty() {
                emit_plots(&logs, &dir.join(combo.to_string()))?;
            }
        }
        let mut w = csv::Writer::from_path(dir.join("model_error.csv"))?;
        w.write_record(["combo", "seed", "timestep", "eval_return", "model_mse"])?;
        for r in &runs {
            for row in &r.rows {
                w.write_record([
                    r.combo.to_string(),
                    r.seed.to_string(),
                    row.timestep.to_string(),
                    row.eval_return.to_string(),
                    row.model_mse.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(ExpansionReport { runs })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::envs::make_env;
    use crate::replay::Transition;

    /// Random-action episodes of the scalar linear system, oldest first.
    fn linear_corpus(episodes: usize, seed: u64) -> EpisodeBuffer {
        let mut env = make_env("linear").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = EpisodeBuffer::new(1, 1, 1 << 20).unwrap();
        for _ in 0..episodes {
            let mut x = env.reset(rng.random());
            loop {
                let u = vec![rng.random_range(-1.0..=1.0)];
                let s = env.step(&u).unwrap();
                let end = s.done || s.truncated;
                buf.push(Transition {
                    state: x,
                    action: u,
                    reward: s.reward,
                    next_state: s.next_state.clone(),
                    done: s.done,
                    truncated: s.truncated,
                })
                .unwrap();
                if end {
                    break;
                }
                x = s.next_state;
            }
        }
        buf
    }

    fn small() -> ArchitectureConfig {
        ArchitectureConfig {
            phases: 2,
            test_episodes: 2,
            holdout_every: 3,
            updates: 150,
            batch: 32,
            hidden: 16,
            layers: 1,
            gru_hidden: 8,
            seed: 4,
            ..ArchitectureConfig::default()
        }
    }

    #[test]
    fn table_is_complete_and_deterministic() {
        let corpus = linear_corpus(8, 1);
        let config = small();
        let a = ablate_architecture(&corpus, &config).unwrap();
        let b = ablate_architecture(&corpus, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), config.phases * 3 * 2);
        for phase in 0..config.phases {
            for split in ["train", "holdout", "test"] {
                for model in ["recurrent", "ensemble"] {
                    let row = a.iter().find(|r| r.phase == phase && r.split == split && r.model == model).unwrap();
                    assert!(row.mse.is_finite() && row.mse >= 0.0);
                }
            }
        }
        let test_rows: Vec<usize> = a.iter().filter(|r| r.split == "test").map(|r| r.episodes).collect();
        assert!(test_rows.iter().all(|&e| e == config.test_episodes));
        let train_sizes: Vec<usize> = a.iter().filter(|r| r.split == "train" && r.model == "recurrent").map(|r| r.episodes).collect();
        assert!(train_sizes.windows(2).all(|w| w[0] < w[1]), "{train_sizes:?}");
    }

    #[test]
    fn both_families_beat_the_delta_variance_on_a_linear_corpus() {
        let corpus = linear_corpus(10, 2);
        let mut config = small();
        config.updates = 400;
        config.eval_len = 1;
        let rows = ablate_architecture(&corpus, &config).unwrap();

        // Variance of normalized one-step deltas on the test split, with the
        // normalization of the last phase's training split.
        let pool = corpus.num_episodes() - config.test_episodes;
        let train_ids: Vec<usize> = (0..pool).filter(|i| i % config.holdout_every != config.holdout_every - 1).collect();
        let mut norm = Normalizer::new(1, Normalizer::DEFAULT_FLOOR).unwrap();
        for i in &train_ids {
            let e = corpus.episodes().nth(*i).unwrap();
            for t in &e.transitions {
                norm.update(&t.state);
            }
            norm.update(&e.transitions.last().unwrap().next_state);
        }
        let stats = norm.stats();
        let deltas: Vec<f64> = corpus
            .episodes()
            .skip(pool)
            .flat_map(|e| e.transitions.iter())
            .map(|t| stats.normalize(&t.next_state)[0] - stats.normalize(&t.state)[0])
            .collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / deltas.len() as f64;
        for model in ["recurrent", "ensemble"] {
            let r = rows.iter().find(|r| r.phase == config.phases - 1 && r.split == "test" && r.model == model).unwrap();
            assert!(r.mse < var, "{model}: {} vs delta variance {var}", r.mse);
        }
    }

    #[test]
    fn member_mean_averages_independent_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let members: Vec<Mlp> = (0..3)
            .map(|k| Mlp::with_hidden(&format!("m{k}"), 2, 4, 1, 1, Activation::Tanh, 1.0, &mut rng).unwrap())
            .collect();
        let ensemble = Ensemble { members };
        let x1 = Tensor::new([2, 1], vec![0.3, -0.7]).unwrap();
        let us = vec![Tensor::new([2, 1], vec![0.1, 0.2]).unwrap(), Tensor::new([2, 1], vec![-0.5, 0.4]).unwrap()];
        let got = ensemble.predict(&x1, &us, EnsembleRollout::MemberMean).unwrap();

        let mut sums = vec![vec![0.0; 2]; 2];
        for m in &ensemble.members {
            let mut x = x1.clone();
            for (t, u) in us.iter().enumerate() {
                let tape = Tape::new();
                x = member_step(&m.bind(&tape, false), tape.constant(x), tape.constant(u.clone()))
                    .unwrap()
                    .value();
                for (s, v) in sums[t].iter_mut().zip(x.data()) {
                    *s += v / 3.0;
                }
            }
        }
        for (g, s) in got.iter().zip(&sums) {
            for (a, b) in g.data().iter().zip(s) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let shared = ensemble.predict(&x1, &us, EnsembleRollout::MeanState).unwrap();
        assert_eq!(shared[0], got[0]);
        assert_ne!(shared[1], got[1]);
    }

    #[test]
    fn too_small_a_corpus_is_rejected() {
        let corpus = linear_corpus(4, 3);
        assert!(ablate_architecture(&corpus, &small()).is_err());
    }

    fn tiny_expansion() -> TrainConfig {
        let mut c = TrainConfig::desk();
        c.env = "pendulum".into();
        c.steps = 100;
        c.warmup_steps = 50;
        c.eval_interval = 50;
        c.eval_episodes = 1;
        c.step_batch = 16;
        c.seq_batch = 8;
        c.val_batch = 8;
        c.actor_hidden = 8;
        c.critic_hidden = 8;
        c.model_hidden = 8;
        c.gru_hidden = 4;
        c
    }

    #[test]
    fn actor_only_combination_is_the_standard_run() {
        let base = tiny_expansion();
        let dir = tempfile::tempdir().unwrap();
        let report = ablate_expansion(&base, &[11], Some(dir.path())).unwrap();
        assert_eq!(report.runs.len(), 3);
        let mut plain = base.clone();
        plain.seed = 11;
        let (_, rows) = train(plain, None).unwrap();
        assert_eq!(report.run(ExpansionCombo::ActorSvg, 11).unwrap().rows, rows);
        for combo in ExpansionCombo::ALL {
            assert!(dir.path().join(combo.to_string()).join("returns.csv").exists());
            assert!(dir.path().join(combo.to_string()).join("model_mse.svg").exists());
        }
        let trace = fs::read_to_string(dir.path().join("model_error.csv")).unwrap();
        assert_eq!(trace.lines().count(), 1 + 3 * rows.len());
        let dominated = report.dominated_seeds(ExpansionCombo::CriticMve, ExpansionCombo::ActorSvg);
        let expected = report.run(ExpansionCombo::CriticMve, 11).unwrap().curve_mean()
            < report.run(ExpansionCombo::ActorSvg, 11).unwrap().curve_mean();
        assert_eq!(dominated == vec![11], expected);
    }
}
