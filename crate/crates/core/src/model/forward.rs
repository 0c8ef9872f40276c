//! Forward computations of the encoder, decoder, attention, and the two
//! first-word mechanisms. All functions record on the caller's tape, so the
//! same code path serves training (followed by `backward`) and inference
//! (tape discarded).

use crate::corpus::{TokenId, START_ID};
use crate::error::{Error, Result};
use crate::model::{
    AttentionWeights, ContextMode, DecoderState, EncoderOutput, FirstWordMode, GateWeights,
    GruWeights, ModelConfig, ModelParams, ReadoutMode,
};
use crate::ndcore::{Tape, Tensor};

/// `W x + U h + b` for one gate.
fn gate_pre(tape: &Tape, g: &GateWeights, x: &Tensor, h: &Tensor) -> Result<Tensor> {
    let wx = tape.matvec(&g.w, x)?;
    let uh = tape.matvec(&g.u, h)?;
    tape.add(&tape.add(&wx, &uh)?, &g.b)
}

/// One GRU step: update gate `z`, reset gate `r`, candidate state, and the
/// convex combination `(1 - z) * h + z * candidate`.
pub fn gru_cell(tape: &Tape, x: &Tensor, h: &Tensor, weights: &GruWeights) -> Result<Tensor> {
    let z = tape.sigmoid(&gate_pre(tape, &weights.update, x, h)?)?;
    let r = tape.sigmoid(&gate_pre(tape, &weights.reset, x, h)?)?;
    let gated = tape.hadamard(&r, h)?;
    let candidate = tape.tanh(&gate_pre(tape, &weights.candidate, x, &gated)?)?;
    let ones = Tensor::new(vec![h.len()], vec![1.0; h.len()])?;
    let keep = tape.sub(&ones, &z)?;
    tape.add(&tape.hadamard(&keep, h)?, &tape.hadamard(&z, &candidate)?)
}

/// Run the encoder over a post. The hidden state starts at zero; every
/// step's state is kept as an annotation and the last one doubles as the
/// context vector.
pub fn encode(
    tape: &Tape,
    post: &[TokenId],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<EncoderOutput> {
    if post.is_empty() {
        return Err(Error::Contract("encode requires a non-empty post".to_string()));
    }
    let mut h = Tensor::zeros(&[config.hidden_dim]);
    let mut annotations = Vec::with_capacity(post.len());
    for &token in post {
        let x = tape.row(&params.e_enc, token)?;
        h = gru_cell(tape, &x, &h, &params.encoder)?;
        annotations.push(h.clone());
    }
    let context = annotations.last().expect("non-empty").clone();
    Ok(EncoderOutput { annotations, context })
}

/// Decoder initial state `tanh(W_s c + b_s)` at step 0.
pub fn init_decoder(tape: &Tape, enc: &EncoderOutput, params: &ModelParams) -> Result<DecoderState> {
    let pre = tape.add(&tape.matvec(&params.w_s, &enc.context)?, &params.b_s)?;
    Ok(DecoderState { s: tape.tanh(&pre)?, t: 0 })
}

/// Alignment scores and mixed context: `e_i = v_a . tanh(W_a s + U_a h_i)`,
/// weights by softmax, context as the weighted sum of annotations. Returns
/// `(context, weights)`.
pub fn attention_context(
    tape: &Tape,
    s_prev: &Tensor,
    annotations: &[Tensor],
    att: &AttentionWeights,
) -> Result<(Tensor, Tensor)> {
    if annotations.is_empty() {
        return Err(Error::Contract("attention over an empty annotation set".to_string()));
    }
    let projected_state = tape.matvec(&att.w_a, s_prev)?;
    let mut energies = Vec::with_capacity(annotations.len());
    for h_i in annotations {
        let mixed = tape.tanh(&tape.add(&projected_state, &tape.matvec(&att.u_a, h_i)?)?)?;
        energies.push(tape.dot(&att.v_a, &mixed)?);
    }
    let weights = tape.softmax(&tape.concat(&energies)?)?;
    let context = tape.weighted_sum(&weights, annotations)?;
    Ok((context, weights))
}

/// Vocabulary logits from a decoder state, through the configured readout.
fn readout(tape: &Tape, s: &Tensor, params: &ModelParams, config: &ModelConfig) -> Result<Tensor> {
    let features = match config.readout {
        ReadoutMode::Softmax => s.clone(),
        ReadoutMode::MaxoutSoftmax => {
            let mx = params
                .maxout
                .as_ref()
                .ok_or_else(|| Error::Contract("maxout readout without maxout weights".to_string()))?;
            let pre = tape.add(&tape.matvec(&mx.w_m, s)?, &mx.b_m)?;
            tape.maxout(&pre)?
        }
    };
    tape.add(&tape.matvec(&params.w_o, &features)?, &params.b_o)
}

/// One decoder step conditioned on the previous token and the context. The
/// cell input is the previous token's embedding concatenated with the
/// context slice selected by the configuration.
pub fn decode_step(
    tape: &Tape,
    state: &DecoderState,
    y_prev: TokenId,
    enc: &EncoderOutput,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(DecoderState, Tensor)> {
    let embedding = tape.row(&params.e_dec, y_prev)?;
    let ctx = match config.context_mode {
        ContextMode::LastHidden => enc.context.clone(),
        ContextMode::Attention | ContextMode::Hybrid => {
            let att = params
                .attention
                .as_ref()
                .ok_or_else(|| Error::Contract("attention context without attention weights".to_string()))?;
            let (mixed, _) = attention_context(tape, &state.s, &enc.annotations, att)?;
            if config.context_mode == ContextMode::Hybrid {
                tape.concat(&[enc.context.clone(), mixed])?
            } else {
                mixed
            }
        }
    };
    let x = tape.concat(&[embedding, ctx])?;
    let s = gru_cell(tape, &x, &state.s, &params.decoder)?;
    let logits = readout(tape, &s, params, config)?;
    let distribution = tape.softmax(&logits)?;
    Ok((DecoderState { s, t: state.t + 1 }, distribution))
}

/// First-word distribution from the learned head:
/// `softmax(E_dec (tanh(W_i c) + b_i) + b_e)`. The inner vector lives in
/// embedding space, so scoring against every decoder embedding row is a
/// single matrix-vector product.
pub fn lts_first_word(tape: &Tape, enc: &EncoderOutput, params: &ModelParams) -> Result<Tensor> {
    let inner = tape.add(&tape.tanh(&tape.matvec(&params.w_i, &enc.context)?)?, &params.b_i)?;
    let logits = tape.add(&tape.matvec(&params.e_dec, &inner)?, &params.b_e)?;
    tape.softmax(&logits)
}

/// Produce the first-word distribution plus the decoder state subsequent
/// steps must continue from. Both training and search go through here, so
/// the two cannot disagree on how a response starts.
///
/// Start-symbol mode spends one decoder step on the start token; the
/// learned head leaves the initial state untouched and the first real word
/// is fed at step 1.
pub fn first_word_step(
    tape: &Tape,
    enc: &EncoderOutput,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(DecoderState, Tensor)> {
    let state = init_decoder(tape, enc, params)?;
    match config.first_word_mode {
        FirstWordMode::StartSymbol => decode_step(tape, &state, START_ID, enc, params, config),
        FirstWordMode::Lts => {
            let distribution = lts_first_word(tape, enc, params)?;
            Ok((state, distribution))
        }
    }
}

/// Just the distribution of [`first_word_step`].
pub fn first_word_distribution(
    tape: &Tape,
    enc: &EncoderOutput,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Tensor> {
    Ok(first_word_step(tape, enc, params, config)?.1)
}
