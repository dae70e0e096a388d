//! Deterministic inputs shared by the benchmarks.

use gkg_core::metrics::{parse_structured, StructuredItems};
use gkg_core::model::{encode_example, encode_prompt, AdapterRole, Example, Token};
use gkg_core::{ModelConfig, Transformer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: [&str; 8] = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran"];

pub fn words(rng: &mut impl Rng, n: usize) -> String {
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

/// Two random sequences of length `n` over a 4-symbol alphabet.
pub fn token_pair(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = || (0..n).map(|_| rng.random_range(0..4)).collect();
    (seq(), seq())
}

pub fn sentence_pair(n: usize, seed: u64) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (words(&mut rng, n), words(&mut rng, n))
}

/// `n` gold/predicted pairs of single triples.
pub fn triple_pairs(n: usize, seed: u64) -> Vec<(StructuredItems, StructuredItems)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triple = |rng: &mut ChaCha8Rng| format!("<{}, {}, {}>", words(rng, 1), words(rng, 1), words(rng, 1));
    (0..n)
        .map(|_| {
            let (g, p) = (triple(&mut rng), triple(&mut rng));
            (parse_structured(&g, "SRE"), parse_structured(&p, "SRE"))
        })
        .collect()
}

/// The default model with adapters on every projection.
pub fn model() -> Transformer<f32> {
    let config = ModelConfig::default().with_targets(AdapterRole::ALL);
    Transformer::init(&config, 1).expect("default config is valid")
}

pub fn prompt(len: usize) -> Vec<Token> {
    encode_prompt(&"extract the triples: a likes b. ".repeat(len / 32 + 1), len, 0).tokens
}

pub fn batch(n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| encode_example(&format!("sentence {i}: alice knows bob."), "<alice, knows, bob>", 256))
        .collect()
}
