use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtp::{Direction, LanguageTag, Sentence};

/// Cipher languages over disjoint integer token ranges.
///
/// Language `k` owns tokens `[k * vocab_size, (k + 1) * vocab_size)`. Each
/// language's cipher `σ_k` maps a shared concept id to a local token, so the
/// ground-truth translation `a → b` sends local token `t` to `σ_b(σ_a⁻¹(t))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldFile", into = "WorldFile")]
pub struct SyntheticWorld {
    vocab_size: usize,
    seed: u64,
    languages: Vec<LanguageTag>,
    ciphers: Vec<Vec<usize>>,
    inverse: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    vocab_size: usize,
    seed: u64,
    languages: Vec<LanguageTag>,
    offsets: Vec<usize>,
    ciphers: Vec<Vec<usize>>,
}

impl TryFrom<WorldFile> for SyntheticWorld {
    type Error = Error;

    fn try_from(f: WorldFile) -> Result<Self> {
        let world = SyntheticWorld::from_ciphers(f.vocab_size, f.seed, f.ciphers)?;
        if f.languages != world.languages {
            return Err(Error::InvalidConfig("world languages must be syn0..synK in order".into()));
        }
        let expected: Vec<usize> = (0..world.languages.len()).map(|k| world.offset(k)).collect();
        if f.offsets != expected {
            return Err(Error::InvalidConfig("world offsets must be k * vocab_size".into()));
        }
        Ok(world)
    }
}

impl From<SyntheticWorld> for WorldFile {
    fn from(w: SyntheticWorld) -> Self {
        WorldFile {
            vocab_size: w.vocab_size,
            seed: w.seed,
            offsets: (0..w.languages.len()).map(|k| w.offset(k)).collect(),
            languages: w.languages,
            ciphers: w.ciphers,
        }
    }
}

impl SyntheticWorld {
    /// Random cipher per language, drawn from `seed`.
    pub fn generate(num_languages: usize, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ciphers = (0..num_languages)
            .map(|_| {
                let mut p: Vec<usize> = (0..vocab_size).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        Self::from_ciphers(vocab_size, seed, ciphers)
    }

    /// Every cipher is the identity, so translation only shifts offsets.
    pub fn identity(num_languages: usize, vocab_size: usize) -> Result<Self> {
        let ciphers = vec![(0..vocab_size).collect(); num_languages];
        Self::from_ciphers(vocab_size, 0, ciphers)
    }

    pub fn from_ciphers(vocab_size: usize, seed: u64, ciphers: Vec<Vec<usize>>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab_size must be positive".into()));
        }
        if ciphers.len() < 2 {
            return Err(Error::InvalidConfig("a world needs at least two languages".into()));
        }
        let mut inverse = Vec::with_capacity(ciphers.len());
        for c in &ciphers {
            let mut inv = vec![usize::MAX; vocab_size];
            if c.len() != vocab_size {
                return Err(Error::InvalidConfig("cipher length differs from vocab_size".into()));
            }
            for (concept, &tok) in c.iter().enumerate() {
                if tok >= vocab_size || inv[tok] != usize::MAX {
                    return Err(Error::InvalidConfig("cipher is not a permutation".into()));
                }
                inv[tok] = concept;
            }
            inverse.push(inv);
        }
        let languages = (0..ciphers.len()).map(LanguageTag::synthetic).collect();
        Ok(Self { vocab_size, seed, languages, ciphers, inverse })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn languages(&self) -> &[LanguageTag] {
        &self.languages
    }

    pub fn cipher(&self, lang: usize) -> &[usize] {
        &self.ciphers[lang]
    }

    pub fn offset(&self, lang: usize) -> usize {
        lang * self.vocab_size
    }

    pub fn lang_index(&self, tag: &LanguageTag) -> Result<usize> {
        tag.synthetic_index()
            .filter(|k| *k < self.languages.len())
            .ok_or_else(|| Error::InvalidConfig(format!("{tag} is not a language of this world")))
    }

    pub fn direction_indices(&self, d: &Direction) -> Result<(usize, usize)> {
        let unsupported =
            || Error::UnsupportedDirection { src: d.src().clone(), tgt: d.tgt().clone() };
        let a = self.lang_index(d.src()).map_err(|_| unsupported())?;
        let b = self.lang_index(d.tgt()).map_err(|_| unsupported())?;
        Ok((a, b))
    }

    /// Ground-truth image of local token `t` under `a → b`.
    pub fn map_local(&self, t: usize, a: usize, b: usize) -> usize {
        self.ciphers[b][self.inverse[a][t]]
    }

    /// Which language's range a global token id falls into.
    pub fn language_of_token(&self, token: usize) -> Option<usize> {
        let k = token / self.vocab_size;
        (k < self.languages.len()).then_some(k)
    }

    /// Parses whitespace-separated global ids into local indices of `lang`.
    pub fn parse_local(&self, text: &str, lang: usize) -> Result<Vec<usize>> {
        let lo = self.offset(lang);
        text.split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .ok()
                    .filter(|v| (lo..lo + self.vocab_size).contains(v))
                    .map(|v| v - lo)
                    .ok_or_else(|| Error::OutOfRangeToken {
                        token: tok.to_string(),
                        lang: self.languages[lang].clone(),
                    })
            })
            .collect()
    }

    pub fn format_local(&self, tokens: &[usize], lang: usize) -> String {
        let lo = self.offset(lang);
        let words: Vec<String> = tokens.iter().map(|t| (lo + t).to_string()).collect();
        words.join(" ")
    }

    pub fn gt_translate(&self, text: &str, direction: &Direction) -> Result<String> {
        let (a, b) = self.direction_indices(direction)?;
        let src = self.parse_local(text, a)?;
        let out: Vec<usize> = src.iter().map(|&t| self.map_local(t, a, b)).collect();
        Ok(self.format_local(&out, b))
    }

    /// Uniformly random sentence of `len` tokens in language `lang`.
    pub fn random_sentence<R: Rng>(&self, lang: usize, len: usize, rng: &mut R) -> Sentence {
        let toks: Vec<usize> = (0..len).map(|_| rng.gen_range(0..self.vocab_size)).collect();
        Sentence::new(self.format_local(&toks, lang), self.languages[lang].clone())
            .expect("len > 0")
    }
}
