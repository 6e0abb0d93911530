use rand_distr::{Distribution, StandardNormal};

use crate::error::{MufiError, Result};
use crate::seed::{fnv1a, rng};

/// Default per-word vector width.
pub const DEFAULT_WORD_DIM: usize = 64;

const NGRAM: usize = 3;
const HASH_SALT: u64 = 0x4D55_4649_5350_4331;

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Hashed character-trigram word vector.
///
/// The token is wrapped in `<`/`>` boundary markers; each trigram seeds a
/// fixed standard-normal pattern and the patterns are summed and scaled by
/// `1/sqrt(count)` so coordinates keep unit variance. Tokens sharing
/// trigrams share pattern mass.
pub fn embed_word(word: &str, dim: usize) -> Vec<f64> {
    assert!(!word.is_empty(), "embed_word on empty token");
    let chars: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = vec![0.0; dim];
    let grams: Vec<String> = if chars.len() < NGRAM {
        vec![chars.iter().collect()]
    } else {
        chars.windows(NGRAM).map(|w| w.iter().collect()).collect()
    };
    for gram in &grams {
        let mut r = rng(fnv1a(gram.as_bytes()) ^ HASH_SALT);
        for o in out.iter_mut() {
            let v: f64 = StandardNormal.sample(&mut r);
            *o += v;
        }
    }
    let scale = 1.0 / (grams.len() as f64).sqrt();
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Concatenation of element-wise max-pool and mean-pool over word vectors.
pub fn embed_label(text: &str, word_dim: usize) -> Result<Vec<f64>> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(MufiError::Input("label text has no tokens".into()));
    }
    let mut max = vec![f64::NEG_INFINITY; word_dim];
    let mut mean = vec![0.0; word_dim];
    for tok in &tokens {
        let v = embed_word(tok, word_dim);
        for (i, x) in v.into_iter().enumerate() {
            max[i] = max[i].max(x);
            mean[i] += x;
        }
    }
    let n = tokens.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    max.extend(mean);
    Ok(max)
}
