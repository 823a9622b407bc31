//! A small templated grammar for desk-scale experiments.
//!
//! Fifty sentence templates with typed slots are filled from fixed word
//! lists. The output is deterministic given the seed, and the lexicon is
//! small enough that a 512-entry subword vocabulary covers most words as
//! single tokens.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOUNS: &[&str] = &[
    "council", "company", "minister", "team", "market", "court", "bank", "school", "union",
    "police", "city", "board", "agency", "festival", "museum", "hospital", "airline", "club",
    "farmer", "mayor",
];
const ADJECTIVES: &[&str] = &[
    "new", "local", "small", "large", "former", "national", "regional", "private", "public",
    "young", "old", "busy",
];
const VERBS: &[&str] = &[
    "approved", "rejected", "announced", "opened", "closed", "funded", "criticised", "praised",
    "delayed", "signed", "won", "lost", "sold", "bought", "planned",
];
const INTRANSITIVE: &[&str] = &[
    "resigned", "collapsed", "recovered", "expanded", "protested", "celebrated", "struck",
    "waited",
];
const OBJECTS: &[&str] = &[
    "plan", "deal", "budget", "report", "bridge", "project", "contract", "road", "law", "match",
    "station", "park",
];
const PLACES: &[&str] = &[
    "london", "paris", "berlin", "madrid", "dublin", "rome", "vienna", "oslo",
];
const TIMES: &[&str] = &["monday", "tuesday", "friday", "today", "yesterday", "tonight"];
const NAMES: &[&str] = &[
    "smith", "jones", "brown", "taylor", "wilson", "evans", "walker", "wright", "green", "hall",
];
const ADVERBS: &[&str] = &[
    "quickly", "finally", "quietly", "again", "suddenly", "formally", "briefly", "openly",
];
const NUMBERS: &[&str] = &["two", "three", "four", "five", "six", "ten", "twenty"];

/// Fifty templates. Slot markers: `N` noun, `A` adjective, `V` transitive
/// verb, `I` intransitive verb, `O` object, `P` place, `T` time, `M` name,
/// `D` adverb, `Q` number. Everything else is a literal word.
pub const TEMPLATES: [&str; 50] = [
    "the N V the O",
    "the A N V the O",
    "the N V the A O",
    "the N in P V the O",
    "the N V the O on T",
    "the N I on T",
    "the A N I in P",
    "mr M V the O",
    "mr M of the N I",
    "the N D V the O",
    "the N I D",
    "the N said the O was A",
    "officials in P V the O",
    "the N V Q O in P",
    "Q A N I on T",
    "the O was V by the N",
    "the A O was V on T",
    "the N and the N V the O",
    "mr M said the N had I",
    "the N will V the O",
    "a A N V a O in P",
    "the N of P I",
    "on T the N V the O",
    "in P the A N I",
    "the N V the O after Q days",
    "mr M V the A O in P",
    "the N D I after the O",
    "the O in P was V",
    "the N has V Q O",
    "a N in P V the O on T",
    "the N V mr M on T",
    "the A N of P V the O",
    "mr M and mr M V the O",
    "the N I as the O was V",
    "Q N I in P on T",
    "the N says the O is A",
    "the N V the O D",
    "the A O of the N was V",
    "the N I before the O",
    "the N V the O in P on T",
    "mr M D V the O",
    "the N has I in P",
    "the N V a A O",
    "the O for the N was V D",
    "the N in P I on T",
    "a A N I",
    "the N V the O of P",
    "mr M of P V the O",
    "the N V the O and the O",
    "the N of the O I",
];

fn fill(template: &str, rng: &mut impl Rng) -> String {
    template
        .split(' ')
        .map(|slot| {
            let list = match slot {
                "N" => NOUNS,
                "A" => ADJECTIVES,
                "V" => VERBS,
                "I" => INTRANSITIVE,
                "O" => OBJECTS,
                "P" => PLACES,
                "T" => TIMES,
                "M" => NAMES,
                "D" => ADVERBS,
                "Q" => NUMBERS,
                literal => return literal,
            };
            list.choose(rng).copied().expect("word lists are non-empty")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` distinct sentences drawn uniformly over templates, in generation
/// order. Deterministic given `seed`.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
        let s = fill(t, &mut rng);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Train / validation / test split of a fresh corpus, disjoint by construction.
pub fn generate_splits(train: usize, valid: usize, test: usize, seed: u64) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut all = generate_corpus(train + valid + test, seed);
    let test_part = all.split_off(train + valid);
    let valid_part = all.split_off(train);
    (all, valid_part, test_part)
}
