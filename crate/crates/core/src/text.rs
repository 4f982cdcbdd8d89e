//! Text preprocessing and vocabulary construction.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Spell out a small number as words ("21" becomes "twenty one").
fn number_words(n: u64) -> Vec<String> {
    const ONES: [&str; 20] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
        "eighteen", "nineteen",
    ];
    const TENS: [&str; 10] = [
        "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];
    if n < 20 {
        vec![ONES[n as usize].to_string()]
    } else if n < 100 {
        let t = TENS[(n / 10) as usize].to_string();
        if n % 10 == 0 {
            vec![t]
        } else {
            vec![t, ONES[(n % 10) as usize].to_string()]
        }
    } else {
        // Long digit strings are spelled digit by digit.
        n.to_string()
            .chars()
            .map(|c| ONES[c.to_digit(10).expect("digit") as usize].to_string())
            .collect()
    }
}

/// Split one whitespace token on its contraction suffix, if it has one:
/// "can't" -> ["ca", "n't"], "it's" -> ["it", "'s"].
fn split_contraction(token: &str) -> Vec<String> {
    const SUFFIXES: [&str; 6] = ["n't", "'s", "'re", "'ve", "'ll", "'m"];
    for suffix in SUFFIXES {
        if let Some(stem) = token.strip_suffix(suffix) {
            if !stem.is_empty() {
                return vec![stem.to_string(), suffix.to_string()];
            }
        }
    }
    // "'d" clashes with possessive-free words rarely; treat it like the rest.
    if let Some(stem) = token.strip_suffix("'d") {
        if !stem.is_empty() {
            return vec![stem.to_string(), "'d".to_string()];
        }
    }
    vec![token.to_string()]
}

/// Lowercase, split contractions into two tokens, convert digit tokens to
/// words, and whitespace-tokenize. Empty input yields an empty list.
pub fn preprocess_text(raw: &str) -> Vec<String> {
    let lower = raw.to_lowercase();
    let mut out = Vec::new();
    for piece in lower.split_whitespace() {
        for token in split_contraction(piece) {
            if !token.is_empty() && token.chars().all(|c| c.is_ascii_digit()) {
                out.extend(number_words(token.parse::<u64>().unwrap_or(0)));
            } else {
                out.push(token);
            }
        }
    }
    out
}

/// Token table with reserved ids 0..=3 and a frequency threshold.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    pub min_count: usize,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const START: usize = 1;
    pub const END: usize = 2;
    pub const UNK: usize = 3;

    /// Count tokens over a training corpus and keep those occurring at least
    /// `min_count` times. Ids are assigned by descending count, ties broken
    /// lexicographically, starting after the reserved ids.
    pub fn build<'a, I, T>(corpus: I, min_count: usize) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut counts: HashMap<&'a String, usize> = HashMap::new();
        let mut any = false;
        for tokens in corpus {
            for tok in tokens {
                any = true;
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::Vocabulary("empty corpus".into()));
        }
        let mut kept: Vec<(&String, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = ["<pad>", "<start>", "<end>", "<unk>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut token_to_id = HashMap::new();
        for (i, name) in id_to_token.iter().enumerate() {
            token_to_id.insert(name.clone(), i);
        }
        for (tok, _) in kept {
            if token_to_id.contains_key(tok) {
                continue; // raw text that collides with a reserved marker
            }
            token_to_id.insert(tok.clone(), id_to_token.len());
            id_to_token.push(tok.clone());
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved ids always exist
    }

    /// Id of a token; unknown tokens map to UNK.
    pub fn encode_token(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode_token(t)).collect()
    }

    pub fn decode_id(&self, id: usize) -> &str {
        self.id_to_token
            .get(id)
            .map(|s| s.as_str())
            .unwrap_or("<unk>")
    }

    /// Token text for a list of ids, skipping PAD/START/END markers.
    pub fn decode_words(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != Self::PAD && id != Self::START && id != Self::END)
            .map(|&id| self.decode_id(id).to_string())
            .collect()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }
}
