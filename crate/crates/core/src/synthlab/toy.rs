use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::TranslateRequest;
use crate::error::{Error, Result};
use crate::mtp::Direction;

use super::world::SyntheticWorld;

/// Logit given to the ground-truth token for a requested accuracy `p`, with
/// every other token at logit 0: `softmax = p` exactly for `p < 1`.
pub fn accuracy_logit(p: f64, vocab_size: usize) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p * (vocab_size as f64 - 1.0) / (1.0 - p)).ln()
}

/// Per-direction categorical translator: each source token independently
/// emits a target token from its own row of logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyTranslator {
    vocab_size: usize,
    num_languages: usize,
    /// `tables[a * L + b]` is a row-major `V x V` logit matrix; empty on the
    /// diagonal.
    tables: Vec<Vec<f64>>,
    /// Logit bonus toward exemplar target tokens, per aligned occurrence.
    pub exemplar_bias: f64,
}

/// Dense gradient accumulator keyed by table index.
#[derive(Clone, Debug, Default)]
pub struct Gradient {
    tables: BTreeMap<usize, Vec<f64>>,
}

impl Gradient {
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, table: usize, idx: usize) -> f64 {
        self.tables.get(&table).map_or(0.0, |t| t[idx])
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.tables
            .iter()
            .flat_map(|(k, t)| t.iter().enumerate().map(move |(i, g)| (*k, i, *g)))
    }

    pub fn norm(&self) -> f64 {
        self.entries().map(|(_, _, g)| g * g).sum::<f64>().sqrt()
    }
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    row[k] - lse
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl ToyTranslator {
    /// Builds tables where direction `a → b` puts probability
    /// `accuracy(a, b)` on the ground-truth token and spreads the rest evenly.
    pub fn with_accuracy(
        world: &SyntheticWorld,
        accuracy: impl Fn(usize, usize) -> f64,
        exemplar_bias: f64,
    ) -> Self {
        let v = world.vocab_size();
        let l = world.languages().len();
        let mut tables = Vec::with_capacity(l * l);
        for a in 0..l {
            for b in 0..l {
                if a == b {
                    tables.push(Vec::new());
                    continue;
                }
                let hit = accuracy_logit(accuracy(a, b), v);
                let mut t = vec![0.0; v * v];
                for s in 0..v {
                    t[s * v + world.map_local(s, a, b)] = hit;
                }
                tables.push(t);
            }
        }
        Self { vocab_size: v, num_languages: l, tables, exemplar_bias }
    }

    /// All-zero logits: every direction is uniform.
    pub fn uniform(world: &SyntheticWorld) -> Self {
        Self::with_accuracy(world, |_, _| 1.0 / world.vocab_size() as f64, 0.0)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn table_index(&self, a: usize, b: usize) -> usize {
        a * self.num_languages + b
    }

    fn check(&self, world: &SyntheticWorld, d: &Direction) -> Result<(usize, usize)> {
        let (a, b) = world.direction_indices(d)?;
        if a >= self.num_languages || b >= self.num_languages || world.vocab_size() != self.vocab_size {
            return Err(Error::UnsupportedDirection { src: d.src().clone(), tgt: d.tgt().clone() });
        }
        Ok((a, b))
    }

    fn row(&self, a: usize, b: usize, s: usize) -> &[f64] {
        let v = self.vocab_size;
        &self.tables[self.table_index(a, b)][s * v..(s + 1) * v]
    }

    pub fn logit(&self, a: usize, b: usize, s: usize, t: usize) -> f64 {
        self.row(a, b, s)[t]
    }

    pub fn logit_mut(&mut self, a: usize, b: usize, s: usize, t: usize) -> &mut f64 {
        let v = self.vocab_size;
        let idx = self.table_index(a, b);
        &mut self.tables[idx][s * v + t]
    }

    /// Exemplar target tokens aligned with each source token, as logit
    /// bonuses per source token.
    fn exemplar_bonus(
        &self,
        world: &SyntheticWorld,
        req: &TranslateRequest,
        a: usize,
        b: usize,
    ) -> BTreeMap<usize, Vec<(usize, f64)>> {
        let mut bonus: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        if self.exemplar_bias == 0.0 {
            return bonus;
        }
        for ex in &req.exemplars {
            let (Ok(src), Ok(tgt)) = (world.parse_local(&ex.src, a), world.parse_local(&ex.tgt, b))
            else {
                continue;
            };
            if src.len() != tgt.len() {
                continue;
            }
            for (s, t) in src.into_iter().zip(tgt) {
                bonus.entry(s).or_default().push((t, self.exemplar_bias));
            }
        }
        bonus
    }

    /// Samples `num_candidates` independent outputs, token by token. A
    /// temperature of 0 decodes greedily.
    pub fn translate(&self, world: &SyntheticWorld, req: &TranslateRequest) -> Result<Vec<String>> {
        let (a, b) = self.check(world, &req.direction)?;
        let src = world.parse_local(&req.text, a)?;
        let bonus = self.exemplar_bonus(world, req, a, b);
        let v = self.vocab_size;

        // one adjusted row per distinct source token
        let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &s in &src {
            rows.entry(s).or_insert_with(|| {
                let mut row = self.row(a, b, s).to_vec();
                for (t, bias) in bonus.get(&s).into_iter().flatten() {
                    row[*t] += bias;
                }
                row
            });
        }

        if req.temperature == 0.0 {
            let out: Vec<usize> = src.iter().map(|s| argmax(&rows[s])).collect();
            return Ok(vec![world.format_local(&out, b); req.num_candidates]);
        }

        let top_k = req.top_k.clamp(1, v);
        let cdfs: BTreeMap<usize, Vec<(usize, f64)>> = rows
            .iter()
            .map(|(s, row)| {
                let mut idx: Vec<usize> = (0..v).collect();
                idx.sort_by(|i, j| row[*j].total_cmp(&row[*i]).then(i.cmp(j)));
                idx.truncate(top_k);
                let scaled: Vec<f64> = idx.iter().map(|i| row[*i] / req.temperature).collect();
                let probs = softmax(&scaled);
                let mut acc = 0.0;
                let cdf = idx
                    .into_iter()
                    .zip(probs)
                    .map(|(i, p)| {
                        acc += p;
                        (i, acc)
                    })
                    .collect();
                (*s, cdf)
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let mut out = Vec::with_capacity(req.num_candidates);
        for _ in 0..req.num_candidates {
            let toks: Vec<usize> = src
                .iter()
                .map(|s| {
                    let cdf = &cdfs[s];
                    let u: f64 = rng.gen();
                    cdf.iter().find(|(_, c)| u < *c).unwrap_or(&cdf[cdf.len() - 1]).0
                })
                .collect();
            out.push(world.format_local(&toks, b));
        }
        Ok(out)
    }

    fn aligned(
        &self,
        world: &SyntheticWorld,
        src: &str,
        out: &str,
        d: &Direction,
    ) -> Result<(usize, usize, Vec<(usize, usize)>)> {
        let (a, b) = self.check(world, d)?;
        let s = world.parse_local(src, a)?;
        let t = world.parse_local(out, b)?;
        if s.len() != t.len() {
            return Err(Error::LengthMismatch { src: s.len(), out: t.len() });
        }
        Ok((a, b, s.into_iter().zip(t).collect()))
    }

    /// Exact `log π(out | src)` at temperature 1, without exemplars.
    pub fn logprob(&self, world: &SyntheticWorld, src: &str, out: &str, d: &Direction) -> Result<f64> {
        let (a, b, pairs) = self.aligned(world, src, out, d)?;
        Ok(pairs.iter().map(|&(s, t)| log_softmax_at(self.row(a, b, s), t)).sum())
    }

    /// Adds `weight * ∂ log π(out | src) / ∂ logits` into `grad` and returns
    /// the log-probability.
    pub fn accumulate_logprob_grad(
        &self,
        world: &SyntheticWorld,
        src: &str,
        out: &str,
        d: &Direction,
        weight: f64,
        grad: &mut Gradient,
    ) -> Result<f64> {
        let (a, b, pairs) = self.aligned(world, src, out, d)?;
        let v = self.vocab_size;
        let key = self.table_index(a, b);
        let g = grad.tables.entry(key).or_insert_with(|| vec![0.0; v * v]);
        let mut lp = 0.0;
        for (s, t) in pairs {
            let row = self.row(a, b, s);
            lp += log_softmax_at(row, t);
            for (k, p) in softmax(row).into_iter().enumerate() {
                let ind = if k == t { 1.0 } else { 0.0 };
                g[s * v + k] += weight * (ind - p);
            }
        }
        Ok(lp)
    }

    /// Gradient-descent step: `logits -= lr * grad`.
    pub fn apply_gradient(&mut self, grad: &Gradient, lr: f64) {
        for (key, g) in &grad.tables {
            for (w, d) in self.tables[*key].iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
    }

    /// Expected fraction of ground-truth tokens when sampling at
    /// temperature 1, averaged uniformly over source tokens.
    pub fn token_accuracy(&self, world: &SyntheticWorld, a: usize, b: usize) -> f64 {
        let v = self.vocab_size;
        (0..v)
            .map(|s| log_softmax_at(self.row(a, b, s), world.map_local(s, a, b)).exp())
            .sum::<f64>()
            / v as f64
    }
}
