//! Evaluation metrics for first-word behavior and whole responses:
//! R-set hit accuracy with high-frequency filtering (`accw-i`), first-word
//! concentration on frequent words (`div-i`), order-n modified BLEU
//! precision against multiple references, and Fleiss' kappa over annotation
//! files.
//!
//! `BLEU-n` here is the order-n clipped precision itself (no brevity
//! penalty, no geometric-mean cumulation); a conventional brevity penalty
//! can be switched on for corpus scores. Frequency ranks always come from
//! the training corpus, never from test data.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{FrequencyTable, TestSample, TokenId, Vocab, EOS_ID};
use crate::error::{Error, Result};
use crate::inference::{beam_search, DEFAULT_MAX_LEN};
use crate::model::{ModelConfig, ModelParams};

/// Evaluation summary: `accw[i]` is accw-i for `i in 0..=I`, `div[i-1]` is
/// div-i for `i in 1..=I`, `bleu[n-1]` is the corpus BLEU-n for
/// `n in 1..=3`. `kappa` appears when annotations were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub accw: Vec<f64>,
    pub div: Vec<f64>,
    pub bleu: [f64; 3],
    pub sample_count: usize,
    pub kappa: Option<f64>,
}

impl MetricReport {
    /// Flat key=value block, one metric per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples={}", self.sample_count);
        for (i, v) in self.accw.iter().enumerate() {
            let _ = writeln!(out, "accw-{i}={v:.6}");
        }
        for (i, v) in self.div.iter().enumerate() {
            let _ = writeln!(out, "div-{}={v:.6}", i + 1);
        }
        for (n, v) in self.bleu.iter().enumerate() {
            let _ = writeln!(out, "bleu-{}={v:.6}", n + 1);
        }
        if let Some(k) = self.kappa {
            let _ = writeln!(out, "kappa={k:.6}");
        }
        out
    }

    /// Per-i curves as CSV for plotting; div-0 is 0 by definition.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,accw,div\n");
        for (i, v) in self.accw.iter().enumerate() {
            let div = if i == 0 { 0.0 } else { self.div[i - 1] };
            let _ = writeln!(out, "{i},{v:.6},{div:.6}");
        }
        out
    }
}

fn response_first(response: &[TokenId]) -> Option<TokenId> {
    response.first().copied()
}

/// R-set hit accuracy ignoring hits on the top-`i` training-frequency
/// words. `accw(_, _, _, 0)` is the unfiltered accuracy.
pub fn accw(
    samples: &[TestSample],
    responses: &[Vec<TokenId>],
    freq: &FrequencyTable,
    i: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("accw over an empty sample list".to_string()));
    }
    if samples.len() != responses.len() {
        return Err(Error::Contract(format!(
            "{} samples against {} responses",
            samples.len(),
            responses.len()
        )));
    }
    let ignored = freq.top_k(i)?;
    let hits = samples
        .iter()
        .zip(responses)
        .filter(|(sample, response)| {
            response_first(response)
                .map(|first| sample.r_set.contains(&first) && !ignored.contains(&first))
                .unwrap_or(false)
        })
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Share of responses whose first word lies in the top-`i` frequency words.
/// Higher means the model leans harder on frequent openers.
pub fn div_i(responses: &[Vec<TokenId>], freq: &FrequencyTable, i: usize) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::Contract("div-i over an empty response list".to_string()));
    }
    if i == 0 {
        return Err(Error::Contract("div-i needs i >= 1".to_string()));
    }
    let top = freq.top_k(i)?;
    let inside = responses
        .iter()
        .filter(|r| response_first(r).map(|f| top.contains(&f)).unwrap_or(false))
        .count();
    Ok(inside as f64 / responses.len() as f64)
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for one sample.
fn bleu_counts(candidate: &[TokenId], references: &[Vec<TokenId>], n: usize) -> Result<(u64, u64)> {
    if n == 0 {
        return Err(Error::Contract("bleu order must be at least 1".to_string()));
    }
    if references.is_empty() {
        return Err(Error::Contract("bleu needs at least one reference".to_string()));
    }
    if candidate.len() < n {
        return Ok((0, 0));
    }
    let cand = ngram_counts(candidate, n);
    let refs: Vec<HashMap<&[TokenId], u64>> =
        references.iter().map(|r| ngram_counts(r, n)).collect();
    let mut clipped = 0;
    for (gram, &count) in &cand {
        let best = refs.iter().map(|r| r.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
        clipped += count.min(best);
    }
    Ok((clipped, (candidate.len() - n + 1) as u64))
}

/// Order-n modified precision of one candidate against its references:
/// candidate n-gram counts clipped at the per-n-gram maximum over all
/// references, divided by the candidate n-gram total. Candidates shorter
/// than `n` (including empty ones) score 0.
pub fn bleu_n(candidate: &[TokenId], references: &[Vec<TokenId>], n: usize) -> Result<f64> {
    let (clipped, total) = bleu_counts(candidate, references, n)?;
    if total == 0 {
        return Ok(0.0);
    }
    Ok(clipped as f64 / total as f64)
}

/// Corpus-level BLEU-n: clipped matches and candidate totals are summed
/// over all samples before dividing (micro-average). With
/// `brevity_penalty`, the precision is multiplied by `min(1, e^(1-r/c))`
/// where `c` sums candidate lengths and `r` sums closest-reference lengths
/// (ties toward the shorter reference).
pub fn corpus_bleu_n(
    candidates: &[Vec<TokenId>],
    references: &[Vec<Vec<TokenId>>],
    n: usize,
    brevity_penalty: bool,
) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates against {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut clipped = 0u64;
    let mut total = 0u64;
    for (cand, refs) in candidates.iter().zip(references) {
        let (c, t) = bleu_counts(cand, refs, n)?;
        clipped += c;
        total += t;
    }
    if total == 0 {
        return Ok(0.0);
    }
    let mut score = clipped as f64 / total as f64;
    if brevity_penalty {
        let cand_len: u64 = candidates.iter().map(|c| c.len() as u64).sum();
        let ref_len: u64 = candidates
            .iter()
            .zip(references)
            .map(|(cand, refs)| {
                refs.iter()
                    .map(|r| r.len() as u64)
                    .min_by_key(|&len| {
                        let diff = (len as i64 - cand.len() as i64).unsigned_abs();
                        (diff, len)
                    })
                    .unwrap_or(0)
            })
            .sum();
        if cand_len == 0 {
            return Ok(0.0);
        }
        if cand_len < ref_len {
            score *= (1.0 - ref_len as f64 / cand_len as f64).exp();
        }
    }
    Ok(score)
}

/// One rater's judgment of one item on the 0..=2 scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub item: String,
    pub rater: String,
    pub score: u8,
}

const SCORE_LEVELS: usize = 3;

/// Parse `item<TAB>rater<TAB>score` lines.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected item, rater, score; found {} fields", fields.len()),
            });
        }
        let score: u8 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("score {:?} is not a number", fields[2]),
        })?;
        if score as usize >= SCORE_LEVELS {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("score {score} outside 0..=2"),
            });
        }
        records.push(AnnotationRecord {
            item: fields[0].to_string(),
            rater: fields[1].to_string(),
            score,
        });
    }
    Ok(records)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    parse_annotations(&fs::read_to_string(path)?)
}

/// Fleiss' kappa over a fixed-size rater panel: per-item agreement averaged
/// over items, corrected by the chance agreement implied by the category
/// marginals. Total agreement with `P_e = 1` returns 1.
pub fn fleiss_kappa(records: &[AnnotationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("no annotation records".to_string()));
    }
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut items: BTreeMap<&str, [u64; SCORE_LEVELS]> = BTreeMap::new();
    for rec in records {
        if rec.score as usize >= SCORE_LEVELS {
            return Err(Error::Contract(format!(
                "score {} outside the 0..=2 scale on item {:?}",
                rec.score, rec.item
            )));
        }
        if !seen.insert((rec.item.as_str(), rec.rater.as_str())) {
            return Err(Error::Contract(format!(
                "rater {:?} scored item {:?} twice",
                rec.rater, rec.item
            )));
        }
        items.entry(rec.item.as_str()).or_default()[rec.score as usize] += 1;
    }

    let raters: u64 = items.values().next().map(|c| c.iter().sum()).unwrap_or(0);
    if raters < 2 {
        return Err(Error::Contract(format!(
            "Fleiss' kappa needs at least 2 raters per item, found {raters}"
        )));
    }
    for (item, counts) in &items {
        let total: u64 = counts.iter().sum();
        if total != raters {
            return Err(Error::Contract(format!(
                "item {item:?} was rated {total} times, others {raters}"
            )));
        }
    }

    let item_count = items.len() as f64;
    let n = raters as f64;
    let mean_agreement: f64 = items
        .values()
        .map(|counts| {
            let sq: u64 = counts.iter().map(|&c| c * c).sum();
            (sq as f64 - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / item_count;
    let mut chance = 0.0;
    for j in 0..SCORE_LEVELS {
        let share: u64 = items.values().map(|c| c[j]).sum();
        let p = share as f64 / (item_count * n);
        chance += p * p;
    }
    if 1.0 - chance < 1e-12 {
        return Ok(1.0);
    }
    Ok((mean_agreement - chance) / (1.0 - chance))
}

/// Compute the full report from an arbitrary decoder, one response per
/// sample. A trailing end-of-sequence token is stripped before scoring; an
/// empty response counts as a miss everywhere.
pub fn evaluate_with(
    mut decode: impl FnMut(&TestSample) -> Result<Vec<TokenId>>,
    samples: &[TestSample],
    freq: &FrequencyTable,
    max_i: usize,
    brevity_penalty: bool,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluate over an empty test set".to_string()));
    }
    if max_i > freq.len() {
        return Err(Error::Range(format!(
            "accw/div curves up to {max_i} but only {} ranked tokens exist",
            freq.len()
        )));
    }
    let responses: Vec<Vec<TokenId>> = samples
        .iter()
        .map(|s| {
            let mut r = decode(s)?;
            if r.last() == Some(&EOS_ID) {
                r.pop();
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;

    let accw_curve: Vec<f64> = (0..=max_i)
        .map(|i| accw(samples, &responses, freq, i))
        .collect::<Result<_>>()?;
    let div_curve: Vec<f64> = (1..=max_i)
        .map(|i| div_i(&responses, freq, i))
        .collect::<Result<_>>()?;
    let refs: Vec<Vec<Vec<TokenId>>> = samples.iter().map(|s| s.references.clone()).collect();
    let mut bleu = [0.0; 3];
    for n in 1..=3 {
        bleu[n - 1] = corpus_bleu_n(&responses, &refs, n, brevity_penalty)?;
    }
    Ok(MetricReport {
        accw: accw_curve,
        div: div_curve,
        bleu,
        sample_count: samples.len(),
        kappa: None,
    })
}

/// Decode every sample with the top-1 beam result and fill the report.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocab,
    samples: &[TestSample],
    freq: &FrequencyTable,
    max_i: usize,
    beam_width: usize,
    brevity_penalty: bool,
) -> Result<MetricReport> {
    if vocab.size() != config.vocab_size {
        return Err(Error::Compatibility(format!(
            "vocabulary of {} tokens against model vocab_size {}",
            vocab.size(),
            config.vocab_size
        )));
    }
    for sample in samples {
        let ids = sample.post.iter().chain(sample.references.iter().flatten());
        for &id in ids {
            if id >= config.vocab_size {
                return Err(Error::Compatibility(format!(
                    "test set token id {id} outside the model vocabulary ({})",
                    config.vocab_size
                )));
            }
        }
    }
    if let Some((tok, id, _)) = freq.entries().find(|(_, id, _)| *id >= config.vocab_size) {
        return Err(Error::Compatibility(format!(
            "frequency table id {id} ({tok:?}) outside the model vocabulary"
        )));
    }
    evaluate_with(
        |sample| {
            let beam = beam_search(&sample.post, params, config, beam_width, DEFAULT_MAX_LEN)?;
            Ok(beam[0].tokens.clone())
        },
        samples,
        freq,
        max_i,
        brevity_penalty,
    )
}
