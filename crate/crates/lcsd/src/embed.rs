//! Frozen, deterministic text embedder.
//!
//! Stands in for a pretrained language encoder: unigrams and adjacent
//! bigrams are FNV-1a-hashed into a signed 32-bin histogram which is then
//! L2-normalized. It owns no learnable parameters and never receives
//! gradients.
//!
//! Bigram features carry their position (`"{i}_{a} {b}"`). A pure bag of
//! bigrams cannot tell "move block1 left and move block2 left" from its
//! swapped order (the feature multisets are identical), and the positional
//! tag is what makes every template embed distinctly and token order
//! matter.

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

/// Embedding width. Recorded in checkpoints via the train config.
pub const EMBED_DIM: usize = 32;

/// Unit-norm embedding of one instruction.
#[derive(Clone, Debug, PartialEq)]
pub struct LangEmbedding {
    v: [f64; EMBED_DIM],
}

impl LangEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn cosine(&self, other: &LangEmbedding) -> f64 {
        self.v.iter().zip(&other.v).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                cur.push(lc);
            }
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Hash unigrams and position-tagged adjacent bigrams into a signed
/// histogram, then L2-normalize. Bigram feature strings are
/// `"{position}_{left} {right}"`. Bin = `h mod 32`, sign from bit 32 of the
/// hash.
pub fn embed(text: &str) -> Result<LangEmbedding> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::EmptyInstruction);
    }
    let mut v = [0.0f64; EMBED_DIM];
    let mut put = |feature: &str| {
        let h = fnv1a64(feature.as_bytes());
        let idx = (h % EMBED_DIM as u64) as usize;
        let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    };
    for t in &tokens {
        put(t);
    }
    for (i, pair) in tokens.windows(2).enumerate() {
        put(&format!("{i}_{} {}", pair[0], pair[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Only possible if every hashed feature cancels pairwise.
        return Err(Error::contract(format!(
            "embedding of {text:?} cancelled to the zero vector"
        )));
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(LangEmbedding { v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("Open the drawer."), ["open", "the", "drawer"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("turn   FAUCET right"), ["turn", "faucet", "right"]);
        assert_eq!(tokenize("block1, then-also block2"), ["block1", "then", "also", "block2"]);
    }

    #[test]
    fn embed_is_deterministic_and_unit_norm() {
        let a = embed("open drawer and turn faucet right").unwrap();
        let b = embed("open drawer and turn faucet right").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn embed_empty_is_rejected() {
        assert!(matches!(embed(""), Err(Error::EmptyInstruction)));
        assert!(matches!(embed(" .,! "), Err(Error::EmptyInstruction)));
    }

    #[test]
    fn pinned_cosine_regression_constant() {
        // Computed once by a standalone reference hashing script: integer
        // dot product 2 at squared norms 5 and 5, cosine exactly 2/5.
        let a = embed("open the drawer").unwrap();
        let b = embed("close the drawer").unwrap();
        let cos = a.cosine(&b);
        assert!((cos - 0.4).abs() <= 1e-12, "cosine {cos}");
        assert!(cos < 1.0);
    }

    #[test]
    fn all_environment_templates_embed_distinctly() {
        use crate::env::{all_templates, render_text, Split};
        for split in Split::ALL {
            let mut seen: Vec<(LangEmbedding, String)> = Vec::new();
            for template in all_templates() {
                let text = render_text(&template, split);
                let e = embed(&text).unwrap();
                assert!((e.norm() - 1.0).abs() <= 1e-12);
                for (prev, prev_text) in &seen {
                    assert_ne!(&e, prev, "{text:?} collides with {prev_text:?}");
                }
                seen.push((e, text));
            }
        }
    }

    #[test]
    fn token_order_matters() {
        use crate::env::{all_templates, render_text, Split};
        // Exhaustive over every adjacent bigram the templates can emit:
        // swapping the two tokens must change the embedding.
        let mut attested: Vec<(String, String)> = Vec::new();
        for split in Split::ALL {
            for template in all_templates() {
                let toks = tokenize(&render_text(&template, split));
                for w in toks.windows(2) {
                    let pair = (w[0].clone(), w[1].clone());
                    if !attested.contains(&pair) {
                        attested.push(pair);
                    }
                }
            }
        }
        assert!(attested.len() > 40);
        for (a, b) in &attested {
            let ab = embed(&format!("{a} {b}")).unwrap();
            let ba = embed(&format!("{b} {a}")).unwrap();
            assert_ne!(ab, ba, "order collision for '{a} {b}'");
        }
        // and swapping whole clauses changes composite instructions
        for split in Split::ALL {
            for template in all_templates() {
                if let [x, y] = template[..] {
                    let fwd = embed(&render_text(&[x, y], split)).unwrap();
                    let rev = embed(&render_text(&[y, x], split)).unwrap();
                    assert_ne!(fwd, rev);
                }
            }
        }
    }
}
