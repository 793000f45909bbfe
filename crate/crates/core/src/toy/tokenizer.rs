use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use crate::backend::BackendError;
use crate::text::MASK;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
/// Native mask sentinel of the toy runtimes.
pub const SENTINEL: &str = "<extra_id_0>";

/// Word-level tokenizer: runs of alphanumeric characters, and every other
/// non-space character on its own. The mask placeholder encodes to the
/// sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    unk: Option<u32>,
}

impl WordTokenizer {
    pub fn new(vocab: Vec<String>) -> Result<Self, BackendError> {
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(BackendError::BadConfig(format!("duplicate vocabulary entry '{tok}'")));
            }
        }
        let unk = index.get(UNK).copied();
        Ok(Self { vocab, index, unk })
    }

    /// Reserved tokens followed by every distinct word of `texts`, sorted.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for t in texts {
            for piece in split_pieces(t) {
                if piece != MASK {
                    words.insert(piece.to_string());
                }
            }
        }
        let reserved = [UNK, BOS, SENTINEL];
        let vocab = reserved
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().filter(|w| !reserved.contains(&w.as_str())))
            .collect();
        Self::new(vocab).expect("reserved tokens and a set of words are distinct")
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        split_pieces(text)
            .map(|piece| {
                let piece = if piece == MASK { SENTINEL } else { piece };
                self.id(piece)
                    .or(self.unk)
                    .ok_or_else(|| BackendError::OutOfVocabulary(piece.to_string()))
            })
            .collect()
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for tok in &self.vocab {
            h.update(tok.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Tokens of `text` as string slices, with the mask placeholder kept whole.
pub fn split_pieces(text: &str) -> impl Iterator<Item = &str> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let (head, tail) = match rest.find(MASK) {
            Some(at) => (&rest[..at], Some(&rest[at + MASK.len()..])),
            None => (rest, None),
        };
        split_words(head, &mut out);
        match tail {
            Some(t) => {
                out.push(MASK);
                rest = t;
            }
            None => break,
        }
    }
    out.into_iter()
}

fn split_words<'a>(text: &'a str, out: &mut Vec<&'a str>) {
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pieces() {
        let p: Vec<_> = split_pieces("Dracula, the show <MASK>.").collect();
        assert_eq!(p, vec!["Dracula", ",", "the", "show", MASK, "."]);
        let p: Vec<_> = split_pieces("<MASK>x<MASK>").collect();
        assert_eq!(p, vec![MASK, "x", MASK]);
    }

    #[test]
    fn encode_maps_unknowns_and_mask() {
        let t = WordTokenizer::from_texts(["a b", "b c."]);
        assert_eq!(t.vocab()[..3], [UNK, BOS, SENTINEL]);
        let ids = t.encode("a <MASK> zzz").unwrap();
        assert_eq!(
            ids,
            vec![t.id("a").unwrap(), t.id(SENTINEL).unwrap(), t.id(UNK).unwrap()]
        );
    }

    #[test]
    fn no_unk_means_oov_error() {
        let t = WordTokenizer::new(vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(t.encode("a c"), Err(BackendError::OutOfVocabulary(w)) if w == "c"));
    }
}
