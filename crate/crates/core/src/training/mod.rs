//! Teacher-forced training: joint first-word plus rest-of-sequence loss,
//! RMSprop updates with global-norm clipping, seeded shuffling, and
//! per-epoch checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DialoguePair, Vocab, EOS_ID};
use crate::error::{Error, Result};
use crate::model::{decode_step, encode, first_word_step, ModelConfig, ModelParams};
use crate::ndcore::{Tape, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub epochs: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-3,
            rmsprop_decay: 0.95,
            rmsprop_eps: 1e-6,
            epochs: 10,
            clip_norm: Some(5.0),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Contract("batch_size must be at least 1".to_string()));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::Contract(format!(
                "rmsprop_decay must lie in (0, 1), got {}",
                self.rmsprop_decay
            )));
        }
        if self.rmsprop_eps <= 0.0 {
            return Err(Error::Contract("rmsprop_eps must be positive".to_string()));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::Contract("clip_norm must be positive".to_string()));
            }
        }
        Ok(())
    }
}

/// Per-parameter squared-gradient accumulators, aligned with the canonical
/// tensor order of the parameters they were created for.
pub struct OptimizerState {
    acc: Vec<Vec<f64>>,
    census: Vec<(&'static str, Vec<usize>)>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> OptimizerState {
        let tensors = params.tensors();
        OptimizerState {
            acc: tensors.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            census: tensors.iter().map(|(n, t)| (*n, t.shape().to_vec())).collect(),
        }
    }

    fn check_census(&self, params: &ModelParams) -> Result<()> {
        let now: Vec<(&'static str, Vec<usize>)> = params
            .tensors()
            .iter()
            .map(|(n, t)| (*n, t.shape().to_vec()))
            .collect();
        if now != self.census {
            return Err(Error::Contract(
                "optimizer state census does not match the parameters".to_string(),
            ));
        }
        Ok(())
    }

    /// Accumulator snapshot (name, values), for inspection in tests.
    pub fn accumulators(&self) -> Vec<(&'static str, &[f64])> {
        self.census
            .iter()
            .zip(&self.acc)
            .map(|((n, _), a)| (*n, a.as_slice()))
            .collect()
    }
}

/// Teacher-forced loss of one pair: NLL of the first response token under
/// the first-word distribution, plus NLL of every following token
/// (including the closing `</s>`) under successive decoder steps fed with
/// gold previous tokens. Normalized by the number of predicted tokens so
/// short and long responses weigh alike.
pub fn sequence_loss(
    tape: &Tape,
    pair: &DialoguePair,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Tensor> {
    if pair.response.len() < 2 || *pair.response.last().unwrap() != EOS_ID {
        return Err(Error::Contract(
            "response must contain at least one token and end with </s>".to_string(),
        ));
    }
    let enc = encode(tape, &pair.post, params, config)?;
    let (mut state, first) = first_word_step(tape, &enc, params, config)?;
    let mut total = tape.cross_entropy(&first, pair.response[0])?;
    for step in pair.response.windows(2) {
        let (next, dist) = decode_step(tape, &state, step[0], &enc, params, config)?;
        state = next;
        total = tape.add(&total, &tape.cross_entropy(&dist, step[1])?)?;
    }
    tape.scale(&total, 1.0 / pair.response.len() as f64)
}

/// Single-tensor RMSprop update rule:
/// `acc <- d*acc + (1-d)*g^2; v <- v - lr*g / sqrt(acc + eps)`.
fn rmsprop_update(values: &mut [f64], grads: &[f64], acc: &mut [f64], config: &TrainConfig) {
    let d = config.rmsprop_decay;
    for i in 0..values.len() {
        let g = grads[i];
        acc[i] = d * acc[i] + (1.0 - d) * g * g;
        values[i] -= config.learning_rate * g / (acc[i] + config.rmsprop_eps).sqrt();
    }
}

/// Apply one RMSprop step using the gradients currently accumulated on the
/// parameters. Gradients are clipped by global norm first when configured.
/// If any gradient is non-finite the whole update is abandoned untouched.
pub fn rmsprop_step(
    params: &ModelParams,
    opt: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    opt.check_census(params)?;
    let tensors = params.tensors();
    let mut grads: Vec<Vec<f64>> = tensors.iter().map(|(_, t)| t.grad_or_zeros()).collect();
    for ((name, _), g) in tensors.iter().zip(&grads) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {name}; batch update aborted"
            )));
        }
    }
    if let Some(clip) = config.clip_norm {
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > clip {
            let k = clip / norm;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= k;
                }
            }
        }
    }
    for (((_, t), g), acc) in tensors.iter().zip(&grads).zip(opt.acc.iter_mut()) {
        t.with_values_mut(|vals| rmsprop_update(vals, g, acc, config));
    }
    Ok(())
}

/// Per-epoch mean losses of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Run the full training loop. Pairs are reshuffled every epoch with a
/// seeded generator; each batch accumulates gradients pair by pair (scaled
/// to the batch mean) and takes one RMSprop step. When `checkpoint_dir` is
/// given, `epoch-NNNN.ckpt` is written after each epoch's update and
/// `model.ckpt` holds the final parameters. `on_epoch` fires once per epoch
/// with the mean loss.
#[allow(clippy::too_many_arguments)]
pub fn train(
    pairs: &[DialoguePair],
    params: &ModelParams,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    vocab: &Vocab,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    train_config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Corpus("training corpus is empty".to_string()));
    }
    let mut opt = OptimizerState::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut epoch_losses = Vec::with_capacity(train_config.epochs);

    for epoch in 1..=train_config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_config.batch_size) {
            params.zero_grads();
            let weight = 1.0 / batch.len() as f64;
            for &idx in batch {
                let tape = Tape::new();
                let loss = sequence_loss(&tape, &pairs[idx], params, model_config)?;
                loss_sum += loss.item();
                let scaled = tape.scale(&loss, weight)?;
                tape.backward(&scaled)?;
            }
            rmsprop_step(params, &mut opt, train_config)?;
        }
        let mean = loss_sum / pairs.len() as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("epoch-{epoch:04}.ckpt"));
            save_checkpoint(&path, params, model_config, vocab)?;
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&dir.join("model.ckpt"), params, model_config, vocab)?;
    }
    Ok(TrainReport { epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_pairs_str;
    use crate::model::{ContextMode, FirstWordMode, ReadoutMode};
    use crate::ndcore::grad_check;

    fn tiny_config(vocab_size: usize, mode: FirstWordMode) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: 3,
            hidden_dim: 4,
            first_word_mode: mode,
            context_mode: ContextMode::LastHidden,
            readout: ReadoutMode::Softmax,
        }
    }

    fn pair(post: Vec<usize>, response: Vec<usize>) -> DialoguePair {
        DialoguePair { post, response }
    }

    #[test]
    fn certain_model_has_near_zero_loss() {
        // First word comes from the head's output bias, the following
        // end-of-sequence token from the readout bias.
        let config = tiny_config(5, FirstWordMode::Lts);
        let params = ModelParams::zeros(&config).unwrap();
        params.b_e.set_values(&[0.0, 0.0, 0.0, 50.0, 0.0]).unwrap();
        let mut b_o = vec![0.0; 5];
        b_o[EOS_ID] = 50.0;
        params.b_o.set_values(&b_o).unwrap();
        let tape = Tape::new();
        let loss = sequence_loss(&tape, &pair(vec![4, EOS_ID], vec![3, EOS_ID]), &params, &config)
            .unwrap();
        assert!(loss.item() < 1e-9, "loss {}", loss.item());
    }

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let config = tiny_config(4, FirstWordMode::Lts);
        let params = ModelParams::zeros(&config).unwrap();
        let tape = Tape::new();
        let loss = sequence_loss(&tape, &pair(vec![3, EOS_ID], vec![3, EOS_ID]), &params, &config)
            .unwrap();
        assert!((loss.item() - 4.0f64.ln()).abs() < 1e-12, "loss {}", loss.item());
    }

    #[test]
    fn empty_response_is_a_contract_error() {
        let config = tiny_config(4, FirstWordMode::Lts);
        let params = ModelParams::zeros(&config).unwrap();
        let tape = Tape::new();
        assert!(matches!(
            sequence_loss(&tape, &pair(vec![3, EOS_ID], vec![EOS_ID]), &params, &config),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            sequence_loss(&tape, &pair(vec![3, EOS_ID], vec![3, 3]), &params, &config),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for mode in [FirstWordMode::Lts, FirstWordMode::StartSymbol] {
            let config = tiny_config(5, mode);
            let params = ModelParams::init(&config, 99).unwrap();
            let p = pair(vec![3, 4, EOS_ID], vec![4, 3, EOS_ID]);
            for (name, theta) in params.tensors() {
                let (params, config, p) = (params.clone(), config, p.clone());
                let err = grad_check(
                    move |tape| sequence_loss(tape, &p, &params, &config),
                    &theta,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "{mode:?} {name}: {err}");
            }
        }
    }

    #[test]
    fn rmsprop_scalar_hand_case() {
        let mut values = vec![1.0];
        let mut acc = vec![0.0];
        let config = TrainConfig {
            learning_rate: 0.1,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            ..TrainConfig::default()
        };
        rmsprop_update(&mut values, &[1.0], &mut acc, &config);
        assert!((acc[0] - 0.1).abs() < 1e-15);
        let expect = 1.0 - 0.1 / (0.1f64 + 1e-8).sqrt();
        assert!((values[0] - expect).abs() < 1e-15);
        assert!((values[0] - 0.6838).abs() < 1e-4);
    }

    #[test]
    fn rmsprop_zero_gradient_leaves_parameters_and_decays_accumulator() {
        let config = tiny_config(4, FirstWordMode::Lts);
        let params = ModelParams::init(&config, 1).unwrap();
        let mut opt = OptimizerState::new(&params);
        let tc = TrainConfig::default();

        // One real step to populate the accumulators.
        let tape = Tape::new();
        let loss = sequence_loss(&tape, &pair(vec![3, EOS_ID], vec![3, EOS_ID]), &params, &config)
            .unwrap();
        tape.backward(&loss).unwrap();
        rmsprop_step(&params, &mut opt, &tc).unwrap();
        let acc_before: Vec<f64> = opt.acc.iter().flatten().copied().collect();
        let values_before: Vec<f64> = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();

        params.zero_grads();
        rmsprop_step(&params, &mut opt, &tc).unwrap();
        let values_after: Vec<f64> = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        assert_eq!(values_before, values_after);
        for (before, after) in acc_before.iter().zip(opt.acc.iter().flatten()) {
            assert!((after - before * tc.rmsprop_decay).abs() < 1e-15);
        }
        assert!(opt.acc.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn rmsprop_rejects_non_finite_gradients_without_updating() {
        let config = tiny_config(4, FirstWordMode::Lts);
        let params = ModelParams::init(&config, 1).unwrap();
        let mut opt = OptimizerState::new(&params);
        let before: Vec<f64> = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        params.w_o.accumulate_grad(&vec![f64::NAN; params.w_o.len()]);
        let err = rmsprop_step(&params, &mut opt, &TrainConfig::default());
        assert!(matches!(err, Err(Error::Numeric(_))));
        let after: Vec<f64> = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn rmsprop_census_mismatch_is_rejected() {
        let config = tiny_config(4, FirstWordMode::Lts);
        let params = ModelParams::init(&config, 1).unwrap();
        let other = ModelParams::init(
            &ModelConfig { context_mode: ContextMode::Attention, ..config },
            1,
        )
        .unwrap();
        let mut opt = OptimizerState::new(&other);
        assert!(matches!(
            rmsprop_step(&params, &mut opt, &TrainConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradient_clipping_rescales_to_the_norm_bound() {
        let config = tiny_config(4, FirstWordMode::Lts);
        let params = ModelParams::zeros(&config).unwrap();
        let mut opt = OptimizerState::new(&params);
        // A single unit gradient on one coordinate of each of two tensors:
        // global norm sqrt(8) with per-coordinate gradient 2.
        let mut g = vec![0.0; params.w_o.len()];
        g[0] = 2.0;
        params.w_o.accumulate_grad(&g);
        let mut g = vec![0.0; params.w_s.len()];
        g[0] = 2.0;
        params.w_s.accumulate_grad(&g);
        let tc = TrainConfig {
            clip_norm: Some(1.0),
            learning_rate: 1.0,
            rmsprop_decay: 0.5,
            rmsprop_eps: 1e-12,
            ..TrainConfig::default()
        };
        rmsprop_step(&params, &mut opt, &tc).unwrap();
        // Clipped gradient per coordinate: 2 / sqrt(8) = 1/sqrt(2).
        // acc = 0.5 * g^2 = 0.25; step = g / sqrt(0.25) = 2g.
        let g_clip = 2.0 / 8.0f64.sqrt();
        let expect = -1.0 * g_clip / (0.5 * g_clip * g_clip + 1e-12).sqrt();
        assert!((params.w_o.get(0) - expect).abs() < 1e-9);
        assert!((params.w_s.get(0) - expect).abs() < 1e-9);
    }

    fn toy_corpus() -> (Vec<DialoguePair>, Vocab, ModelConfig) {
        let text = "\
a b\tc d\n\
a c\td e\n\
b d\te a\n\
c e\ta b\n";
        let (pairs, vocab, _) = load_pairs_str(text, 100).unwrap();
        let config = ModelConfig {
            vocab_size: vocab.size(),
            embed_dim: 3,
            hidden_dim: 4,
            first_word_mode: FirstWordMode::Lts,
            context_mode: ContextMode::LastHidden,
            readout: ReadoutMode::Softmax,
        };
        (pairs, vocab, config)
    }

    #[test]
    fn zero_epochs_touches_nothing() {
        let (pairs, vocab, config) = toy_corpus();
        let params = ModelParams::init(&config, 5).unwrap();
        let before: Vec<f64> = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        let report = train(
            &pairs,
            &params,
            &config,
            &TrainConfig { epochs: 0, ..TrainConfig::default() },
            &vocab,
            None,
            |_, _| {},
        )
        .unwrap();
        assert!(report.epoch_losses.is_empty());
        let after: Vec<f64> = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn same_seed_gives_identical_loss_curves_and_parameters() {
        let (pairs, vocab, config) = toy_corpus();
        let tc = TrainConfig { epochs: 5, batch_size: 2, ..TrainConfig::default() };
        let run = || {
            let params = ModelParams::init(&config, 5).unwrap();
            let report = train(&pairs, &params, &config, &tc, &vocab, None, |_, _| {}).unwrap();
            let flat: Vec<f64> = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
            (report, flat)
        };
        let (r1, p1) = run();
        let (r2, p2) = run();
        assert_eq!(r1, r2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn loss_strictly_decreases_over_first_ten_full_batch_steps() {
        let (pairs, vocab, config) = toy_corpus();
        let params = ModelParams::init(&config, 7).unwrap();
        let tc = TrainConfig {
            epochs: 10,
            batch_size: pairs.len(),
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let report = train(&pairs, &params, &config, &tc, &vocab, None, |_, _| {}).unwrap();
        for window in report.epoch_losses.windows(2) {
            assert!(
                window[1] < window[0],
                "loss did not decrease: {:?}",
                report.epoch_losses
            );
        }
    }
}
