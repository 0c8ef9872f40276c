//! Dialogue corpus ingestion: vocabulary, frequency ranks, training pairs,
//! and multi-reference test sets.
//!
//! File formats are line-oriented UTF-8 with LF endings, TAB (0x09) between
//! fields and single spaces between tokens:
//!
//! * pairs:    `post<TAB>response`
//! * test set: `post<TAB>ref1<TAB>ref2...`
//!
//! Tokenization happens upstream; this module never splits tokens further.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";
pub const START_TOKEN: &str = "<s>";

/// The three special tokens occupy the first three ids, in this order.
pub const UNK_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const START_ID: TokenId = 2;

const SPECIALS: [&str; 3] = [UNK_TOKEN, EOS_TOKEN, START_TOKEN];

/// Token to id bijection with dense ids; `<unk>`, `</s>`, `<s>` come first.
/// The start symbol is always present, even for models that never feed it,
/// so both first-word mechanisms share one checkpoint layout.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build from non-special word strings; specials are prepended.
    pub fn from_words<I, S>(words: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(words.into_iter().map(Into::into));
        Vocab::from_full_list(id_to_token)
    }

    /// Rebuild from a complete id-ordered token list (checkpoint load path).
    pub fn from_full_list(id_to_token: Vec<String>) -> Result<Vocab> {
        if id_to_token.len() < SPECIALS.len() {
            return Err(Error::Contract(format!(
                "vocabulary needs at least the {} special tokens",
                SPECIALS.len()
            )));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if id_to_token[i] != *s {
                return Err(Error::Contract(format!(
                    "special token {s:?} must occupy id {i}, found {:?}",
                    id_to_token[i]
                )));
            }
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::Contract(format!("duplicate token {tok:?} in vocabulary")));
            }
        }
        Ok(Vocab { token_to_id, id_to_token })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// All tokens in id order (checkpoint serialization).
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Map tokens to ids, sending out-of-vocabulary tokens to `<unk>`.
    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<TokenId> {
        tokens.into_iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// Inverse of `encode` for in-range ids.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Index(format!("token id {id} in a vocabulary of {}", self.size())))
            })
            .collect()
    }
}

/// Tokens of the training corpus ranked by descending count, ties broken
/// lexicographically; special tokens are excluded.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    // (token, id, count), already sorted.
    ranked: Vec<(String, TokenId, u64)>,
}

impl FrequencyTable {
    /// Rank `counts` restricted to non-special tokens present in `vocab`.
    pub fn from_counts(counts: &HashMap<String, u64>, vocab: &Vocab) -> FrequencyTable {
        let mut ranked: Vec<(String, TokenId, u64)> = counts
            .iter()
            .filter(|(tok, _)| !SPECIALS.contains(&tok.as_str()))
            .filter_map(|(tok, &count)| vocab.id(tok).map(|id| (tok.clone(), id, count)))
            .collect();
        ranked.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        FrequencyTable { ranked }
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    /// Rank-ordered tokens, most frequent first.
    pub fn ranked_tokens(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|(tok, _, _)| tok.as_str())
    }

    /// Rank-ordered `(token, id, count)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (&str, TokenId, u64)> {
        self.ranked.iter().map(|(tok, id, count)| (tok.as_str(), *id, *count))
    }

    pub fn count(&self, token: &str) -> u64 {
        self.ranked
            .iter()
            .find(|(tok, _, _)| tok == token)
            .map(|(_, _, c)| *c)
            .unwrap_or(0)
    }

    /// Ids of the `k` most frequent tokens.
    pub fn top_k(&self, k: usize) -> Result<HashSet<TokenId>> {
        if k > self.ranked.len() {
            return Err(Error::Range(format!(
                "top-{k} requested but only {} ranked tokens exist",
                self.ranked.len()
            )));
        }
        Ok(self.ranked[..k].iter().map(|(_, id, _)| *id).collect())
    }
}

/// One training example; both sides end with `</s>` after encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialoguePair {
    pub post: Vec<TokenId>,
    pub response: Vec<TokenId>,
}

/// One evaluation item: a post, its reference responses, and the set of
/// first tokens across those references (the hit set for first-word
/// accuracy).
#[derive(Debug, Clone)]
pub struct TestSample {
    pub post: Vec<TokenId>,
    pub references: Vec<Vec<TokenId>>,
    pub r_set: HashSet<TokenId>,
}

fn split_tokens<'a>(field: &'a str, line_no: usize, what: &str) -> Result<Vec<&'a str>> {
    if field.is_empty() {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("empty {what}"),
        });
    }
    let tokens: Vec<&str> = field.split(' ').collect();
    if tokens.iter().any(|t| t.is_empty()) {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("{what} contains an empty token (doubled or trailing space)"),
        });
    }
    Ok(tokens)
}

/// Load a `post<TAB>response` corpus, build the vocabulary from the
/// `vocab_cap` most frequent tokens (ties lexicographic), and rank retained
/// tokens by their full pre-capping counts. Everything else encodes to
/// `<unk>`.
pub fn load_pairs(path: &Path, vocab_cap: usize) -> Result<(Vec<DialoguePair>, Vocab, FrequencyTable)> {
    load_pairs_str(&fs::read_to_string(path)?, vocab_cap)
}

pub fn load_pairs_str(text: &str, vocab_cap: usize) -> Result<(Vec<DialoguePair>, Vocab, FrequencyTable)> {
    let mut raw: Vec<(Vec<&str>, Vec<&str>)> = Vec::new();
    let mut counts: HashMap<String, u64> = HashMap::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected exactly one tab, found {}", fields.len() - 1),
            });
        }
        let post = split_tokens(fields[0], line_no, "post")?;
        let response = split_tokens(fields[1], line_no, "response")?;
        for tok in post.iter().chain(response.iter()) {
            if !SPECIALS.contains(tok) {
                *counts.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        raw.push((post, response));
    }
    if raw.is_empty() {
        return Err(Error::Corpus("corpus file contains no pairs".to_string()));
    }

    // Retain the cap most frequent tokens; same ordering as the ranking.
    let mut by_freq: Vec<(&String, u64)> = counts.iter().map(|(t, &c)| (t, c)).collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    by_freq.truncate(vocab_cap);
    let vocab = Vocab::from_words(by_freq.iter().map(|(t, _)| t.as_str()))?;
    let freq = FrequencyTable::from_counts(&counts, &vocab);

    let pairs = raw
        .into_iter()
        .map(|(post, response)| {
            let mut post = vocab.encode(post);
            let mut resp = vocab.encode(response);
            post.push(EOS_ID);
            resp.push(EOS_ID);
            DialoguePair { post, response: resp }
        })
        .collect();
    Ok((pairs, vocab, freq))
}

/// Count non-special tokens of a pairs file without building a vocabulary
/// (frequency-table reconstruction at evaluation time).
pub fn count_tokens(path: &Path) -> Result<HashMap<String, u64>> {
    let text = fs::read_to_string(path)?;
    let mut counts: HashMap<String, u64> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected exactly one tab, found {}", fields.len() - 1),
            });
        }
        for field in fields {
            for tok in split_tokens(field, line_no, "field")? {
                if !SPECIALS.contains(&tok) {
                    *counts.entry(tok.to_string()).or_insert(0) += 1;
                }
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Corpus("corpus file contains no pairs".to_string()));
    }
    Ok(counts)
}

/// Load a one-to-many test set against an existing vocabulary. Posts are
/// EOS-terminated like training posts; references are kept verbatim.
pub fn load_test_set(path: &Path, vocab: &Vocab) -> Result<Vec<TestSample>> {
    load_test_set_str(&fs::read_to_string(path)?, vocab)
}

pub fn load_test_set_str(text: &str, vocab: &Vocab) -> Result<Vec<TestSample>> {
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected a post and at least one reference".to_string(),
            });
        }
        let mut post = vocab.encode(split_tokens(fields[0], line_no, "post")?);
        post.push(EOS_ID);
        let references: Vec<Vec<TokenId>> = fields[1..]
            .iter()
            .enumerate()
            .map(|(ri, field)| {
                Ok(vocab.encode(split_tokens(field, line_no, &format!("reference {}", ri + 1))?))
            })
            .collect::<Result<_>>()?;
        let r_set = references.iter().map(|r| r[0]).collect();
        samples.push(TestSample { post, references, r_set });
    }
    if samples.is_empty() {
        return Err(Error::Corpus("test set contains no samples".to_string()));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_line_file_round_trips() {
        let (pairs, vocab, _) = load_pairs_str("你 好\t我 好\n天 气\t很 差\n", 100).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(vocab.size(), 3 + 7);
        for pair in &pairs {
            assert_eq!(*pair.post.last().unwrap(), EOS_ID);
            assert_eq!(*pair.response.last().unwrap(), EOS_ID);
        }
        let decoded = vocab.decode(&pairs[0].post[..pairs[0].post.len() - 1]).unwrap();
        assert_eq!(decoded, vec!["你", "好"]);
    }

    #[test]
    fn most_frequent_token_ranks_first() {
        let (_, _, freq) = load_pairs_str("我 我 我\t你 好\n我 在\t好 的\n", 100).unwrap();
        assert_eq!(freq.ranked_tokens().next(), Some("我"));
        assert_eq!(freq.count("我"), 4);
    }

    #[test]
    fn line_with_two_tabs_is_a_parse_error_with_line_number() {
        let err = load_pairs_str("a\tb\nx\ty\tz\n", 100).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_corpus_error() {
        assert!(matches!(load_pairs_str("", 100), Err(Error::Corpus(_))));
    }

    #[test]
    fn empty_side_is_a_parse_error() {
        assert!(matches!(load_pairs_str("a\t\n", 100), Err(Error::Parse { .. })));
        assert!(matches!(load_pairs_str("\tb\n", 100), Err(Error::Parse { .. })));
        assert!(matches!(load_pairs_str("a  b\tc\n", 100), Err(Error::Parse { .. })));
    }

    #[test]
    fn vocab_cap_sends_rare_tokens_to_unk() {
        // "我" appears twice, everything else once; cap 1 keeps only "我".
        let (pairs, vocab, freq) = load_pairs_str("我 来\t我 去\n", 1).unwrap();
        assert_eq!(vocab.size(), 4);
        assert_eq!(vocab.id("我"), Some(3));
        assert_eq!(vocab.id("来"), None);
        assert_eq!(pairs[0].post, vec![3, UNK_ID, EOS_ID]);
        // Pre-capping count of the retained token is preserved.
        assert_eq!(freq.len(), 1);
        assert_eq!(freq.count("我"), 2);
    }

    #[test]
    fn test_set_builds_r_set_from_reference_first_tokens() {
        let (_, vocab, _) = load_pairs_str("你 好 在\t吗 好 你\n", 100).unwrap();
        let samples = load_test_set_str("好 吗\t你 好\t你 在\n", &vocab).unwrap();
        assert_eq!(samples.len(), 1);
        let expected: HashSet<TokenId> = [vocab.id("你").unwrap()].into_iter().collect();
        assert_eq!(samples[0].r_set, expected);
        assert_eq!(samples[0].references.len(), 2);
        assert_eq!(*samples[0].post.last().unwrap(), EOS_ID);
    }

    #[test]
    fn single_reference_gives_singleton_r_set() {
        let (_, vocab, _) = load_pairs_str("a b\tc d\n", 100).unwrap();
        let samples = load_test_set_str("a\tc d\n", &vocab).unwrap();
        assert_eq!(samples[0].r_set.len(), 1);
    }

    #[test]
    fn reference_starting_out_of_vocab_hits_unk() {
        let (_, vocab, _) = load_pairs_str("a b\tc d\n", 100).unwrap();
        let samples = load_test_set_str("a\tzzz d\n", &vocab).unwrap();
        assert!(samples[0].r_set.contains(&UNK_ID));
    }

    #[test]
    fn test_set_without_references_is_an_error() {
        let (_, vocab, _) = load_pairs_str("a b\tc d\n", 100).unwrap();
        assert!(matches!(
            load_test_set_str("a b\n", &vocab),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn top_k_zero_is_empty() {
        let (_, _, freq) = load_pairs_str("a a b\tc\n", 100).unwrap();
        assert!(freq.top_k(0).unwrap().is_empty());
    }

    #[test]
    fn top_k_orders_by_count() {
        let (_, vocab, freq) = load_pairs_str("a a a b b\tc\n", 100).unwrap();
        let top2 = freq.top_k(2).unwrap();
        assert_eq!(
            top2,
            [vocab.id("a").unwrap(), vocab.id("b").unwrap()].into_iter().collect()
        );
    }

    #[test]
    fn top_k_breaks_ties_lexicographically() {
        let (_, vocab, freq) = load_pairs_str("b a\ta b\n", 100).unwrap();
        let top1 = freq.top_k(1).unwrap();
        assert_eq!(top1, [vocab.id("a").unwrap()].into_iter().collect());
    }

    #[test]
    fn top_k_beyond_ranked_length_is_a_range_error() {
        let (_, _, freq) = load_pairs_str("a\tb\n", 100).unwrap();
        assert!(matches!(freq.top_k(3), Err(Error::Range(_))));
    }

    proptest! {
        /// encode then decode is the identity on in-vocabulary sequences.
        #[test]
        fn encode_decode_round_trip(indices in proptest::collection::vec(0usize..5, 1..20)) {
            let words = ["alpha", "beta", "gamma", "delta", "eps"];
            let vocab = Vocab::from_words(words).unwrap();
            let tokens: Vec<&str> = indices.iter().map(|&i| words[i]).collect();
            let ids = vocab.encode(tokens.iter().copied());
            let decoded = vocab.decode(&ids).unwrap();
            prop_assert_eq!(decoded, tokens);
        }

        /// top-k sets nest as k grows.
        #[test]
        fn top_k_nests(counts in proptest::collection::vec(1u64..50, 1..15)) {
            let words: Vec<String> = (0..counts.len()).map(|i| format!("w{i}")).collect();
            let vocab = Vocab::from_words(words.iter().cloned()).unwrap();
            let map: HashMap<String, u64> =
                words.iter().cloned().zip(counts.iter().copied()).collect();
            let freq = FrequencyTable::from_counts(&map, &vocab);
            for k in 0..freq.len() {
                let small = freq.top_k(k).unwrap();
                let big = freq.top_k(k + 1).unwrap();
                prop_assert!(small.is_subset(&big));
            }
        }

        /// Every id produced by ingestion is within the vocabulary.
        #[test]
        fn all_ids_in_range(
            lines in proptest::collection::vec(
                (proptest::collection::vec("[a-f]{1,3}", 1..5),
                 proptest::collection::vec("[a-f]{1,3}", 1..5)),
                1..10),
            cap in 0usize..20,
        ) {
            let text: String = lines
                .iter()
                .map(|(p, r)| format!("{}\t{}\n", p.join(" "), r.join(" ")))
                .collect();
            let (pairs, vocab, _) = load_pairs_str(&text, cap).unwrap();
            for pair in &pairs {
                for &id in pair.post.iter().chain(pair.response.iter()) {
                    prop_assert!(id < vocab.size());
                }
            }
        }
    }
}
