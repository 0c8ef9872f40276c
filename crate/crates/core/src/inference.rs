//! Beam-search N-best and greedy decoding.
//!
//! Scores are raw sums of step log-probabilities with no length
//! normalization, so shorter finished sequences are favored when their
//! probability mass allows it; rankings are computed on those raw sums.
//! Ties break toward the lower token id (and lexicographically earlier
//! sequence) everywhere, which makes decoding fully deterministic.

use std::cmp::Ordering;

use crate::corpus::{TokenId, EOS_ID};
use crate::error::{Error, Result};
use crate::model::{decode_step, encode, first_word_step, DecoderState, ModelConfig, ModelParams};
use crate::ndcore::Tape;

/// Default decode budget; responses in this domain are short.
pub const DEFAULT_MAX_LEN: usize = 20;

/// A partial or finished decode: emitted tokens (the end-of-sequence token
/// appears only as a final element), total log-probability, and the decoder
/// state to continue from.
#[derive(Debug, Clone)]
pub struct BeamHypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub state: DecoderState,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Ranking: higher score first, lexicographically earlier tokens on ties.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .logprob
            .total_cmp(&self.logprob)
            .then_with(|| self.tokens.cmp(&other.tokens))
    }
}

/// Beam-search the `width` best responses for a post.
///
/// Step 0 seeds the beam with the `width` most probable first words; every
/// later step expands each live hypothesis over the whole vocabulary and
/// keeps the global top `width` by total log-probability, with finished
/// hypotheses competing as frozen candidates. Hypotheses still unfinished
/// at `max_len` tokens are returned as-is with `finished == false`.
pub fn beam_search(
    post: &[TokenId],
    params: &ModelParams,
    config: &ModelConfig,
    width: usize,
    max_len: usize,
) -> Result<Vec<BeamHypothesis>> {
    if width == 0 {
        return Err(Error::Contract("beam width must be at least 1".to_string()));
    }
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".to_string()));
    }
    let tape = Tape::new();
    let enc = encode(&tape, post, params, config)?;
    let (state, first) = first_word_step(&tape, &enc, params, config)?;

    let mut beam: Vec<BeamHypothesis> = first
        .to_vec()
        .iter()
        .enumerate()
        .map(|(token, &p)| BeamHypothesis {
            tokens: vec![token],
            logprob: p.ln(),
            state: state.clone(),
            finished: token == EOS_ID,
        })
        .collect();
    beam.sort_by(BeamHypothesis::rank_cmp);
    beam.truncate(width);

    while beam.iter().any(|h| !h.finished && h.tokens.len() < max_len) {
        let mut candidates: Vec<BeamHypothesis> = Vec::with_capacity(beam.len() * config.vocab_size);
        for hyp in &beam {
            if hyp.finished || hyp.tokens.len() >= max_len {
                candidates.push(hyp.clone());
                continue;
            }
            let last = *hyp.tokens.last().expect("hypotheses are never empty");
            let (next_state, dist) = decode_step(&tape, &hyp.state, last, &enc, params, config)?;
            for (token, &p) in dist.to_vec().iter().enumerate() {
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                candidates.push(BeamHypothesis {
                    tokens,
                    logprob: hyp.logprob + p.ln(),
                    state: next_state.clone(),
                    finished: token == EOS_ID,
                });
            }
        }
        candidates.sort_by(BeamHypothesis::rank_cmp);
        candidates.truncate(width);
        beam = candidates;
    }
    Ok(beam)
}

/// Greedy decode: argmax at every step (ties toward the lower token id),
/// stopping at the end-of-sequence token, which is included in the output,
/// or after `max_len` tokens.
pub fn greedy_decode(
    post: &[TokenId],
    params: &ModelParams,
    config: &ModelConfig,
    max_len: usize,
) -> Result<Vec<TokenId>> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".to_string()));
    }
    let tape = Tape::new();
    let enc = encode(&tape, post, params, config)?;
    let (mut state, first) = first_word_step(&tape, &enc, params, config)?;
    let mut tokens = vec![argmax_tie_low(&first.to_vec())];
    while *tokens.last().unwrap() != EOS_ID && tokens.len() < max_len {
        let (next, dist) = decode_step(&tape, &state, *tokens.last().unwrap(), &enc, params, config)?;
        state = next;
        tokens.push(argmax_tie_low(&dist.to_vec()));
    }
    Ok(tokens)
}

fn argmax_tie_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        first_word_distribution, ContextMode, EncoderOutput, FirstWordMode, ReadoutMode,
    };

    fn config(vocab_size: usize, mode: FirstWordMode) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: 3,
            hidden_dim: 4,
            first_word_mode: mode,
            context_mode: ContextMode::LastHidden,
            readout: ReadoutMode::Softmax,
        }
    }

    /// Every sequence the decoder can emit within `max_len` tokens, scored
    /// by replaying the model: end-of-sequence only at the final position,
    /// shorter sequences must end with it.
    fn enumerate_all(
        post: &[TokenId],
        params: &ModelParams,
        cfg: &ModelConfig,
        max_len: usize,
    ) -> Vec<(Vec<TokenId>, f64)> {
        fn recurse(
            tape: &Tape,
            enc: &EncoderOutput,
            params: &ModelParams,
            cfg: &ModelConfig,
            state: &DecoderState,
            prefix: &mut Vec<TokenId>,
            logprob: f64,
            dist: &[f64],
            max_len: usize,
            out: &mut Vec<(Vec<TokenId>, f64)>,
        ) {
            for (token, &p) in dist.iter().enumerate() {
                prefix.push(token);
                let score = logprob + p.ln();
                if token == EOS_ID || prefix.len() == max_len {
                    out.push((prefix.clone(), score));
                } else {
                    let (next, d) = decode_step(tape, state, token, enc, params, cfg).unwrap();
                    recurse(tape, enc, params, cfg, &next, prefix, score, &d.to_vec(), max_len, out);
                }
                prefix.pop();
            }
        }

        let tape = Tape::new();
        let enc = encode(&tape, post, params, cfg).unwrap();
        let (state, first) = first_word_step(&tape, &enc, params, cfg).unwrap();
        let mut out = Vec::new();
        recurse(
            &tape,
            &enc,
            params,
            cfg,
            &state,
            &mut Vec::new(),
            0.0,
            &first.to_vec(),
            max_len,
            &mut out,
        );
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    #[test]
    fn beam_width_one_equals_greedy() {
        for mode in [FirstWordMode::Lts, FirstWordMode::StartSymbol] {
            for seed in 0..5 {
                let cfg = config(5, mode);
                let params = ModelParams::init(&cfg, seed).unwrap();
                let post = vec![3, 4, EOS_ID];
                let beam = beam_search(&post, &params, &cfg, 1, 6).unwrap();
                let greedy = greedy_decode(&post, &params, &cfg, 6).unwrap();
                assert_eq!(beam[0].tokens, greedy, "mode {mode:?} seed {seed}");
            }
        }
    }

    #[test]
    fn three_token_vocab_matches_exhaustive_enumeration() {
        // Vocabulary of three tokens, one of which ends the sequence. A
        // width of 9 never prunes a viable prefix (3 then 7 candidates), so
        // the returned set must equal the top 9 of full enumeration.
        let cfg = config(3, FirstWordMode::Lts);
        let params = ModelParams::init(&cfg, 77).unwrap();
        let post = vec![0, 2, EOS_ID];
        let beam = beam_search(&post, &params, &cfg, 9, 3).unwrap();
        let all = enumerate_all(&post, &params, &cfg, 3);
        assert_eq!(all.len(), 15);
        assert_eq!(beam.len(), 9);
        for (hyp, (tokens, score)) in beam.iter().zip(all.iter().take(9)) {
            assert_eq!(&hyp.tokens, tokens);
            assert!((hyp.logprob - score).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_model_yields_one_dominant_hypothesis() {
        let cfg = config(5, FirstWordMode::Lts);
        let params = ModelParams::zeros(&cfg).unwrap();
        // First word is always token 3, then the readout forces </s>.
        params.b_e.set_values(&[0.0, 0.0, 0.0, 60.0, 0.0]).unwrap();
        let mut b_o = vec![0.0; 5];
        b_o[EOS_ID] = 60.0;
        params.b_o.set_values(&b_o).unwrap();
        let beam = beam_search(&[4, EOS_ID], &params, &cfg, 4, 8).unwrap();
        assert_eq!(beam[0].tokens, vec![3, EOS_ID]);
        assert!(beam[0].finished);
        assert!((beam[0].logprob - 0.0).abs() < 1e-9);
        assert!(beam[1].logprob < -50.0);
    }

    #[test]
    fn zero_width_is_a_contract_error() {
        let cfg = config(5, FirstWordMode::Lts);
        let params = ModelParams::zeros(&cfg).unwrap();
        assert!(matches!(
            beam_search(&[3], &params, &cfg, 0, 5),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            beam_search(&[3], &params, &cfg, 2, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn scores_are_non_increasing_and_replay_consistent() {
        let cfg = config(5, FirstWordMode::StartSymbol);
        let params = ModelParams::init(&cfg, 5).unwrap();
        let post = vec![3, 4, EOS_ID];
        let beam = beam_search(&post, &params, &cfg, 6, 4).unwrap();
        for pair in beam.windows(2) {
            assert!(pair[0].logprob >= pair[1].logprob);
        }
        for hyp in &beam {
            assert!(hyp.logprob <= 0.0);
            // Replay the model over the returned tokens.
            let tape = Tape::new();
            let enc = encode(&tape, &post, &params, &cfg).unwrap();
            let (mut state, first) = first_word_step(&tape, &enc, &params, &cfg).unwrap();
            let mut score = first.to_vec()[hyp.tokens[0]].ln();
            for step in hyp.tokens.windows(2) {
                let (next, dist) = decode_step(&tape, &state, step[0], &enc, &params, &cfg).unwrap();
                state = next;
                score += dist.to_vec()[step[1]].ln();
            }
            assert!((score - hyp.logprob).abs() < 1e-12);
            // The end token never appears before the final position.
            let interior = &hyp.tokens[..hyp.tokens.len() - 1];
            assert!(interior.iter().all(|&t| t != EOS_ID));
        }
    }

    #[test]
    fn widening_the_beam_never_lowers_the_top_score() {
        for seed in 0..10 {
            let cfg = config(4, FirstWordMode::Lts);
            let params = ModelParams::init(&cfg, seed).unwrap();
            let post = vec![3, EOS_ID];
            let mut prev = f64::NEG_INFINITY;
            for width in 1..=8 {
                let beam = beam_search(&post, &params, &cfg, width, 4).unwrap();
                assert!(beam[0].logprob >= prev - 1e-12, "seed {seed} width {width}");
                prev = beam[0].logprob;
            }
        }
    }

    #[test]
    fn uniform_model_greedy_repeats_token_zero_until_budget() {
        let cfg = config(5, FirstWordMode::Lts);
        let params = ModelParams::zeros(&cfg).unwrap();
        let tokens = greedy_decode(&[3, EOS_ID], &params, &cfg, 7).unwrap();
        assert_eq!(tokens, vec![0; 7]);
    }

    #[test]
    fn greedy_respects_max_len_one() {
        let cfg = config(5, FirstWordMode::Lts);
        let params = ModelParams::init(&cfg, 2).unwrap();
        let tokens = greedy_decode(&[3, EOS_ID], &params, &cfg, 1).unwrap();
        assert_eq!(tokens.len(), 1);
    }

    #[test]
    fn first_word_seed_matches_distribution_argmax() {
        let cfg = config(5, FirstWordMode::Lts);
        let params = ModelParams::init(&cfg, 8).unwrap();
        let post = vec![3, 4, EOS_ID];
        let tape = Tape::new();
        let enc = encode(&tape, &post, &params, &cfg).unwrap();
        let dist = first_word_distribution(&tape, &enc, &params, &cfg).unwrap();
        let greedy = greedy_decode(&post, &params, &cfg, 5).unwrap();
        assert_eq!(greedy[0], argmax_tie_low(&dist.to_vec()));
    }
}
