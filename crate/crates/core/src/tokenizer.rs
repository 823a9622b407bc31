//! Byte-pair-encoding subword vocabulary.
//!
//! Text is split on single spaces; every word except the last carries a
//! trailing end-of-word marker (`▁`, U+2581) standing for the space that
//! followed it. Merges never cross word boundaries, and decoding maps the
//! marker back to a space, so `decode(encode(s)) == s` for any `s` made of
//! characters seen in training.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: usize = 4;

const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<s>", "</s>", "<unk>"];
const MARKER: char = '\u{2581}';
const HEADER: &str = "bpe-vocab v1";
const MERGES_SENTINEL: &str = "#merges";

/// Encoded sentence without BOS/EOS.
pub type TokenSeq = Vec<u32>;

/// A learned subword vocabulary. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    merges: Vec<(u32, u32)>,
    /// merge rank keyed by (left id, right id), value = (rank, merged id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

fn words(text: &str) -> Vec<String> {
    let parts: Vec<&str> = text.split(' ').collect();
    let last = parts.len() - 1;
    parts
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut s = w.replace(MARKER, " ");
            if i < last {
                s.push(MARKER);
            }
            s
        })
        .filter(|w| !w.is_empty())
        .collect()
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Corrupt(format!("duplicate token `{t}`")));
            }
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let (Some(ls), Some(rs)) = (tokens.get(l as usize), tokens.get(r as usize)) else {
                return Err(Error::Corrupt(format!("merge {rank} references unknown ids")));
            };
            let merged = format!("{ls}{rs}");
            let Some(&id) = index.get(&merged) else {
                return Err(Error::Corrupt(format!("merge result `{merged}` missing")));
            };
            ranks.insert((l, r), (rank, id));
        }
        Ok(Vocab {
            tokens,
            index,
            merges,
            ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.tokens[l as usize].as_str(), self.tokens[r as usize].as_str()))
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = word
            .chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK)
            })
            .collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&(r, id)| (r, i, id)))
                .min();
            let Some((rank, _, merged)) = best else { break };
            let (l, r) = self.merges[rank];
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        out.extend(syms);
    }

    /// Applies the learned merges. Characters never seen in training map to
    /// UNK. No BOS/EOS are added.
    pub fn encode(&self, text: &str) -> TokenSeq {
        let mut out = Vec::new();
        for w in words(text) {
            self.encode_word(&w, &mut out);
        }
        out
    }

    /// Concatenates token strings, skipping PAD/BOS/EOS.
    pub fn decode(&self, seq: &[u32]) -> Result<String> {
        let mut s = String::new();
        for &id in seq {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::Input(format!("token id {id} outside vocab of {}", self.len())))?;
            if id == PAD || id == BOS || id == EOS {
                continue;
            }
            s.push_str(tok);
        }
        Ok(s.replace(MARKER, " "))
    }

    /// Canonical text serialization.
    pub fn to_file_string(&self) -> String {
        let mut s = format!("{HEADER} {}\n", self.len());
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s.push_str(MERGES_SENTINEL);
        s.push('\n');
        for (l, r) in self.merges() {
            let _ = writeln!(s, "{l}\t{r}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Corrupt("empty vocab file".into()))?;
        let size: usize = header
            .strip_prefix(HEADER)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Corrupt(format!("bad vocab header `{header}`")))?;
        let tokens: Vec<String> = lines.by_ref().take(size).map(str::to_string).collect();
        if tokens.len() != size {
            return Err(Error::Corrupt("vocab file truncated".into()));
        }
        if tokens[..RESERVED] != RESERVED_TOKENS {
            return Err(Error::Corrupt("reserved tokens missing".into()));
        }
        if lines.next() != Some(MERGES_SENTINEL) {
            return Err(Error::Corrupt("missing #merges sentinel".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            index.insert(t.as_str(), i as u32);
        }
        let mut merges = Vec::new();
        for line in lines {
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| Error::Corrupt(format!("bad merge line `{line}`")))?;
            match (index.get(l), index.get(r)) {
                (Some(&a), Some(&b)) => merges.push((a, b)),
                _ => return Err(Error::Corrupt(format!("merge `{line}` uses unknown tokens"))),
            }
        }
        Vocab::from_parts(tokens, merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Number of base symbols `bpe_train` starts from: reserved ids plus the
/// distinct characters of the corpus (spaces count once, as the marker).
pub fn base_vocab_size(corpus: &[String]) -> usize {
    let mut chars: Vec<char> = corpus
        .iter()
        .flat_map(|s| words(s))
        .flat_map(|w| w.chars().collect::<Vec<_>>())
        .collect();
    chars.sort_unstable();
    chars.dedup();
    RESERVED + chars.len()
}

/// Learns a BPE vocabulary of `target_size` entries by repeatedly merging
/// the most frequent adjacent pair. Ties go to the lexicographically
/// smallest `(left, right)` pair. Stops early when no pair is left.
pub fn bpe_train(corpus: &[String], target_size: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot train a vocabulary on an empty corpus".into()));
    }
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for s in corpus {
        for w in words(s) {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    let mut chars: Vec<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
    chars.sort_unstable();
    chars.dedup();
    let base = RESERVED + chars.len();
    if target_size < base {
        return Err(Error::Input(format!(
            "vocab size {target_size} is below the {base} reserved + character symbols"
        )));
    }

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    let mut index: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    let mut segmented: Vec<(Vec<u32>, u64)> = word_freq
        .iter()
        .map(|(w, &f)| (w.chars().map(|c| index[&c.to_string()]).collect(), f))
        .collect();

    let mut merges = Vec::new();
    while tokens.len() < target_size {
        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, f) in &segmented {
            for w in syms.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += f;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), _)) = best else { break };
        let merged = format!("{}{}", tokens[l as usize], tokens[r as usize]);
        let id = match index.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                tokens.push(merged.clone());
                index.insert(merged, id);
                id
            }
        };
        merges.push((l, r));
        for (syms, _) in segmented.iter_mut() {
            let mut i = 0;
            let mut next = Vec::with_capacity(syms.len());
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    next.push(id);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            *syms = next;
        }
    }
    Vocab::from_parts(tokens, merges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn most_frequent_pair_merges_first() {
        // pairs per sentence: (a,a)×2, (a,b)×1
        let v = bpe_train(&corpus(&["aaab", "aaab"]), 8).unwrap();
        let merges: Vec<_> = v.merges().collect();
        assert_eq!(merges[0], ("a", "a"));
        // then (aa,a)×2 and (a,b)×2 tie; "a" < "aa" picks (a,b)
        assert_eq!(merges[1], ("a", "b"));
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn alternating_pair() {
        // (a,b)×2 beats (b,a)×1
        let v = bpe_train(&corpus(&["abab"]), 7).unwrap();
        assert_eq!(v.merges().next(), Some(("a", "b")));
    }

    #[test]
    fn no_budget_means_characters_only() {
        let c = corpus(&["ab ba", "cab"]);
        let base = base_vocab_size(&c);
        assert_eq!(base, 4 + 4); // a b c and the space marker
        let v = bpe_train(&c, base).unwrap();
        assert_eq!(v.num_merges(), 0);
        let ids = v.encode("ab");
        assert_eq!(ids, vec![v.id("a").unwrap(), v.id("b").unwrap()]);
    }

    #[test]
    fn undersized_target_and_empty_corpus_are_rejected() {
        assert!(matches!(bpe_train(&[], 10), Err(Error::Input(_))));
        assert!(matches!(bpe_train(&corpus(&["abc"]), 6), Err(Error::Input(_))));
    }

    #[test]
    fn unknown_characters_become_unk() {
        let v = bpe_train(&corpus(&["abc abc"]), 12).unwrap();
        assert!(v.encode("abz").contains(&UNK));
    }

    #[test]
    fn decode_edge_cases() {
        let v = bpe_train(&corpus(&["hello world"]), 20).unwrap();
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert_eq!(v.decode(&[EOS]).unwrap(), "");
        assert_eq!(v.encode(""), Vec::<u32>::new());
        assert!(matches!(v.decode(&[999]), Err(Error::Input(_))));
    }

    #[test]
    fn whitespace_layout_roundtrips() {
        let c = corpus(&["the cat  sat ", " on the mat"]);
        let v = bpe_train(&c, 30).unwrap();
        for s in c.iter().map(String::as_str).chain(["  ", " ", "mat the", "a"]) {
            if s.contains('a') || s.trim().is_empty() || s.contains("mat") {
                assert_eq!(v.decode(&v.encode(s)).unwrap(), s, "{s:?}");
            }
        }
    }

    #[test]
    fn file_roundtrip_and_hash() {
        let v = bpe_train(&corpus(&["one two three", "two three four"]), 40).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with(&format!("bpe-vocab v1 {}\n", v.len())));
        let back = Vocab::parse(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
        let mut cut = text.len() / 2;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        assert!(Vocab::parse(&text[..cut]).is_err());
    }
}
