//! GRU encoder-decoder with switchable first-word mechanism.
//!
//! Two ways to produce the first response word coexist behind one parameter
//! layout: feeding the artificial start symbol through a regular decoder
//! step, or a dedicated head that maps the encoder's final state through a
//! learned similarity against the decoder embedding matrix. Context reaches
//! the decoder either as the encoder's last hidden state, an attention
//! mixture over all encoder states, or both concatenated.

mod forward;

pub use forward::{
    attention_context, decode_step, encode, first_word_distribution, first_word_step, gru_cell,
    init_decoder, lts_first_word,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// How the first response token is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstWordMode {
    /// Feed the start symbol through an ordinary decoder step.
    StartSymbol,
    /// Predict the first word directly from the encoder context.
    Lts,
}

/// What the decoder receives as context at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// The encoder's final hidden state, fixed across steps.
    LastHidden,
    /// An attention-weighted mixture of all encoder states.
    Attention,
    /// Last hidden state and attention mixture concatenated.
    Hybrid,
}

/// Output layer between decoder state and vocabulary logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutMode {
    /// Plain affine projection.
    Softmax,
    /// Two-piece maxout layer before the affine projection.
    MaxoutSoftmax,
}

impl ContextMode {
    /// Width of the context slice appended to the decoder input.
    pub fn context_width(self, hidden_dim: usize) -> usize {
        match self {
            ContextMode::LastHidden | ContextMode::Attention => hidden_dim,
            ContextMode::Hybrid => 2 * hidden_dim,
        }
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, ContextMode::LastHidden)
    }
}

impl fmt::Display for FirstWordMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FirstWordMode::StartSymbol => "start_symbol",
            FirstWordMode::Lts => "lts",
        })
    }
}

impl FromStr for FirstWordMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start_symbol" => Ok(FirstWordMode::StartSymbol),
            "lts" => Ok(FirstWordMode::Lts),
            other => Err(Error::Malformed(format!("unknown first_word_mode {other:?}"))),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::LastHidden => "last_hidden",
            ContextMode::Attention => "attention",
            ContextMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for ContextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_hidden" => Ok(ContextMode::LastHidden),
            "attention" => Ok(ContextMode::Attention),
            "hybrid" => Ok(ContextMode::Hybrid),
            other => Err(Error::Malformed(format!("unknown context_mode {other:?}"))),
        }
    }
}

impl fmt::Display for ReadoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadoutMode::Softmax => "softmax",
            ReadoutMode::MaxoutSoftmax => "maxout_softmax",
        })
    }
}

impl FromStr for ReadoutMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(ReadoutMode::Softmax),
            "maxout_softmax" => Ok(ReadoutMode::MaxoutSoftmax),
            other => Err(Error::Malformed(format!("unknown readout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub first_word_mode: FirstWordMode,
    pub context_mode: ContextMode,
    pub readout: ReadoutMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Contract("model dimensions must be at least 1".to_string()));
        }
        if self.vocab_size < 3 {
            return Err(Error::Contract(
                "vocabulary must hold at least the three special tokens".to_string(),
            ));
        }
        Ok(())
    }

    /// Input width of the decoder GRU cell.
    pub fn decoder_input_dim(&self) -> usize {
        self.embed_dim + self.context_mode.context_width(self.hidden_dim)
    }
}

/// Weights of one GRU gate: input projection, state projection, bias.
#[derive(Debug, Clone)]
pub struct GateWeights {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

/// Update gate, reset gate, and candidate-state weights of one GRU cell.
#[derive(Debug, Clone)]
pub struct GruWeights {
    pub update: GateWeights,
    pub reset: GateWeights,
    pub candidate: GateWeights,
}

/// Alignment network weights for attention scoring.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub w_a: Tensor,
    pub u_a: Tensor,
    pub v_a: Tensor,
}

/// Expansion layer feeding the two-piece maxout readout.
#[derive(Debug, Clone)]
pub struct MaxoutWeights {
    pub w_m: Tensor,
    pub b_m: Tensor,
}

/// Every trainable array. The first-word head (`w_i`, `b_i`, `b_e`) is
/// always present so checkpoints from either first-word mode share one
/// layout; attention and maxout blocks exist only when the configuration
/// calls for them, keeping the parameter census a pure function of
/// [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub e_enc: Tensor,
    pub e_dec: Tensor,
    pub encoder: GruWeights,
    pub decoder: GruWeights,
    pub w_s: Tensor,
    pub b_s: Tensor,
    pub w_i: Tensor,
    pub b_i: Tensor,
    pub b_e: Tensor,
    pub attention: Option<AttentionWeights>,
    pub maxout: Option<MaxoutWeights>,
    pub w_o: Tensor,
    pub b_o: Tensor,
}

/// Weight init range; biases start at zero.
const INIT_BOUND: f64 = 0.08;

impl ModelParams {
    /// Fresh parameters: weights uniform in [-0.08, 0.08], biases zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::construct(config, &mut |shape| {
            let n = shape.iter().product();
            let vals = (0..n).map(|_| rng.gen_range(-INIT_BOUND..=INIT_BOUND)).collect();
            Tensor::new(shape.to_vec(), vals).expect("census shapes are valid")
        })
    }

    /// All-zero parameters (tests, checkpoint loading).
    pub fn zeros(config: &ModelConfig) -> Result<ModelParams> {
        Self::construct(config, &mut |shape| Tensor::zeros(shape))
    }

    /// Builds every weight tensor through `weight`, in the exact order that
    /// `tensors()` reports. Biases are always zero at construction.
    fn construct(
        config: &ModelConfig,
        weight: &mut dyn FnMut(&[usize]) -> Tensor,
    ) -> Result<ModelParams> {
        config.validate()?;
        let v = config.vocab_size;
        let e = config.embed_dim;
        let h = config.hidden_dim;

        let gru = |weight: &mut dyn FnMut(&[usize]) -> Tensor, input_dim: usize| GruWeights {
            update: GateWeights {
                w: weight(&[h, input_dim]),
                u: weight(&[h, h]),
                b: Tensor::zeros(&[h]),
            },
            reset: GateWeights {
                w: weight(&[h, input_dim]),
                u: weight(&[h, h]),
                b: Tensor::zeros(&[h]),
            },
            candidate: GateWeights {
                w: weight(&[h, input_dim]),
                u: weight(&[h, h]),
                b: Tensor::zeros(&[h]),
            },
        };

        let e_enc = weight(&[v, e]);
        let e_dec = weight(&[v, e]);
        let encoder = gru(weight, e);
        let decoder = gru(weight, config.decoder_input_dim());
        Ok(ModelParams {
            e_enc,
            e_dec,
            encoder,
            decoder,
            w_s: weight(&[h, h]),
            b_s: Tensor::zeros(&[h]),
            w_i: weight(&[e, h]),
            b_i: Tensor::zeros(&[e]),
            b_e: Tensor::zeros(&[v]),
            attention: if config.context_mode.uses_attention() {
                Some(AttentionWeights {
                    w_a: weight(&[h, h]),
                    u_a: weight(&[h, h]),
                    v_a: weight(&[h]),
                })
            } else {
                None
            },
            maxout: if matches!(config.readout, ReadoutMode::MaxoutSoftmax) {
                Some(MaxoutWeights {
                    w_m: weight(&[2 * h, h]),
                    b_m: Tensor::zeros(&[2 * h]),
                })
            } else {
                None
            },
            w_o: weight(&[v, h]),
            b_o: Tensor::zeros(&[v]),
        })
    }

    /// Named handles to every trainable tensor, in canonical order. This is
    /// the order used by the optimizer state and the checkpoint manifest.
    pub fn tensors(&self) -> Vec<(&'static str, Tensor)> {
        let mut out: Vec<(&'static str, Tensor)> = Vec::with_capacity(32);
        out.push(("e_enc", self.e_enc.clone()));
        out.push(("e_dec", self.e_dec.clone()));
        let enc = &self.encoder;
        out.push(("enc_w_z", enc.update.w.clone()));
        out.push(("enc_u_z", enc.update.u.clone()));
        out.push(("enc_b_z", enc.update.b.clone()));
        out.push(("enc_w_r", enc.reset.w.clone()));
        out.push(("enc_u_r", enc.reset.u.clone()));
        out.push(("enc_b_r", enc.reset.b.clone()));
        out.push(("enc_w_h", enc.candidate.w.clone()));
        out.push(("enc_u_h", enc.candidate.u.clone()));
        out.push(("enc_b_h", enc.candidate.b.clone()));
        let dec = &self.decoder;
        out.push(("dec_w_z", dec.update.w.clone()));
        out.push(("dec_u_z", dec.update.u.clone()));
        out.push(("dec_b_z", dec.update.b.clone()));
        out.push(("dec_w_r", dec.reset.w.clone()));
        out.push(("dec_u_r", dec.reset.u.clone()));
        out.push(("dec_b_r", dec.reset.b.clone()));
        out.push(("dec_w_h", dec.candidate.w.clone()));
        out.push(("dec_u_h", dec.candidate.u.clone()));
        out.push(("dec_b_h", dec.candidate.b.clone()));
        out.push(("w_s", self.w_s.clone()));
        out.push(("b_s", self.b_s.clone()));
        out.push(("w_i", self.w_i.clone()));
        out.push(("b_i", self.b_i.clone()));
        out.push(("b_e", self.b_e.clone()));
        if let Some(att) = &self.attention {
            out.push(("att_w_a", att.w_a.clone()));
            out.push(("att_u_a", att.u_a.clone()));
            out.push(("att_v_a", att.v_a.clone()));
        }
        if let Some(mx) = &self.maxout {
            out.push(("max_w_m", mx.w_m.clone()));
            out.push(("max_b_m", mx.b_m.clone()));
        }
        out.push(("w_o", self.w_o.clone()));
        out.push(("b_o", self.b_o.clone()));
        out
    }

    /// Parameter names and shapes as a pure function of the configuration.
    pub fn census(config: &ModelConfig) -> Result<Vec<(&'static str, Vec<usize>)>> {
        Ok(Self::zeros(config)?
            .tensors()
            .into_iter()
            .map(|(name, t)| (name, t.shape().to_vec()))
            .collect())
    }

    /// Drop all gradient accumulators.
    pub fn zero_grads(&self) {
        for (_, t) in self.tensors() {
            t.zero_grad();
        }
    }

    /// Total trainable element count.
    pub fn element_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Encoder pass output: one hidden state per source token, plus the fixed
/// context vector (the final state, shared handle).
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub annotations: Vec<Tensor>,
    pub context: Tensor,
}

/// Decoder recurrence position: hidden state and step index.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub s: Tensor,
    pub t: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(context: ContextMode, readout: ReadoutMode) -> ModelConfig {
        ModelConfig {
            vocab_size: 6,
            embed_dim: 4,
            hidden_dim: 8,
            first_word_mode: FirstWordMode::Lts,
            context_mode: context,
            readout,
        }
    }

    #[test]
    fn census_is_determined_by_config() {
        let a = ModelParams::census(&cfg(ContextMode::LastHidden, ReadoutMode::Softmax)).unwrap();
        let b = ModelParams::census(&cfg(ContextMode::LastHidden, ReadoutMode::Softmax)).unwrap();
        assert_eq!(a, b);
        let init = ModelParams::init(&cfg(ContextMode::LastHidden, ReadoutMode::Softmax), 7).unwrap();
        let from_init: Vec<(&str, Vec<usize>)> = init
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        assert_eq!(a, from_init);
    }

    #[test]
    fn census_grows_with_attention_and_maxout() {
        let plain = ModelParams::census(&cfg(ContextMode::LastHidden, ReadoutMode::Softmax)).unwrap();
        let att = ModelParams::census(&cfg(ContextMode::Attention, ReadoutMode::Softmax)).unwrap();
        let hybrid = ModelParams::census(&cfg(ContextMode::Hybrid, ReadoutMode::MaxoutSoftmax)).unwrap();
        assert_eq!(att.len(), plain.len() + 3);
        assert_eq!(hybrid.len(), plain.len() + 5);
        // Hybrid widens the decoder input projections.
        let width = |census: &[(&str, Vec<usize>)], name: &str| {
            census.iter().find(|(n, _)| *n == name).unwrap().1[1]
        };
        assert_eq!(width(&plain, "dec_w_z"), 4 + 8);
        assert_eq!(width(&hybrid, "dec_w_z"), 4 + 16);
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let config = cfg(ContextMode::Hybrid, ReadoutMode::MaxoutSoftmax);
        let a = ModelParams::init(&config, 3).unwrap();
        let b = ModelParams::init(&config, 3).unwrap();
        let c = ModelParams::init(&config, 4).unwrap();
        let flat = |p: &ModelParams| -> Vec<f64> {
            p.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
        assert!(flat(&a).iter().all(|v| v.abs() <= INIT_BOUND));
        for (name, t) in a.tensors() {
            if name.split('_').any(|s| s == "b") {
                assert!(t.to_vec().iter().all(|&v| v == 0.0), "bias {name} not zero");
            }
        }
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in [FirstWordMode::StartSymbol, FirstWordMode::Lts] {
            assert_eq!(m.to_string().parse::<FirstWordMode>().unwrap(), m);
        }
        for m in [ContextMode::LastHidden, ContextMode::Attention, ContextMode::Hybrid] {
            assert_eq!(m.to_string().parse::<ContextMode>().unwrap(), m);
        }
        for m in [ReadoutMode::Softmax, ReadoutMode::MaxoutSoftmax] {
            assert_eq!(m.to_string().parse::<ReadoutMode>().unwrap(), m);
        }
        assert!("bogus".parse::<ContextMode>().is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut config = cfg(ContextMode::LastHidden, ReadoutMode::Softmax);
        config.hidden_dim = 0;
        assert!(ModelParams::init(&config, 0).is_err());
        config.hidden_dim = 8;
        config.vocab_size = 2;
        assert!(ModelParams::init(&config, 0).is_err());
    }
}
