//! Synthetic dialogue corpus generator for first-word experiments.
//!
//! Each post carries exactly one keyword token `k<c>`; the gold response
//! always starts with that class's first word `f<c>`, so the mapping from
//! post to correct first word is deterministic and learnable. The `skew`
//! knob biases class sampling toward class 0, making `f0` a high-frequency
//! opener the way frequent words dominate real dialogue data; at skew 0
//! classes are uniform. Everything else is filler tokens `w<j>`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Generation rule. Only one exists today; the enum keeps the file format
/// of the flag stable if more are added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SynthRule {
    #[default]
    KeywordFirstWord,
}

impl fmt::Display for SynthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("keyword-first-word")
    }
}

impl FromStr for SynthRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keyword-first-word" => Ok(SynthRule::KeywordFirstWord),
            other => Err(Error::Contract(format!("unknown synthesis rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub pairs: usize,
    /// Total distinct tokens: `2 * classes` rule tokens plus fillers.
    pub vocab: usize,
    /// Probability mass shifted onto class 0: class 0 is drawn with
    /// probability `skew + (1 - skew) / classes`.
    pub skew: f64,
    pub classes: usize,
    pub rule: SynthRule,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 {
            return Err(Error::Contract("need at least one pair".to_string()));
        }
        if self.classes == 0 {
            return Err(Error::Contract("need at least one first-word class".to_string()));
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return Err(Error::Contract(format!("skew {} outside [0, 1]", self.skew)));
        }
        if self.vocab < 2 * self.classes + 1 {
            return Err(Error::Contract(format!(
                "vocab {} too small for {} classes (need at least {})",
                self.vocab,
                self.classes,
                2 * self.classes + 1
            )));
        }
        Ok(())
    }
}

/// Produce the corpus text, one `post<TAB>response` pair per line.
pub fn generate(config: &SynthConfig) -> Result<String> {
    config.validate()?;
    let SynthRule::KeywordFirstWord = config.rule;
    let filler_count = config.vocab - 2 * config.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = String::new();

    for _ in 0..config.pairs {
        let class = if rng.gen::<f64>() < config.skew {
            0
        } else {
            rng.gen_range(0..config.classes)
        };

        let post_fillers = rng.gen_range(2..=5);
        let mut post: Vec<String> = (0..post_fillers)
            .map(|_| format!("w{}", rng.gen_range(0..filler_count)))
            .collect();
        post.insert(rng.gen_range(0..=post.len()), format!("k{class}"));

        let mut response = vec![format!("f{class}")];
        for _ in 0..rng.gen_range(1..=2) {
            response.push(format!("w{}", rng.gen_range(0..filler_count)));
        }

        out.push_str(&post.join(" "));
        out.push('\t');
        out.push_str(&response.join(" "));
        out.push('\n');
    }
    Ok(out)
}
