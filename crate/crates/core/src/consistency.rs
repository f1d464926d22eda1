//! Cross-lingual semantic consistency.
//!
//! `S(a, b) = (M(a, b) + M(b, a)) / 2` symmetrizes a metric `M`. A candidate's
//! reward is the larger of two averages over its rollout reconstructions:
//! agreement with the original input (literal) and agreement with the
//! candidate's direct back-translation (free).

use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::error::{Error, Result};
use crate::mtp::Sentence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub trajectory: usize,
    pub literal: f64,
    pub free: f64,
}

impl TrajectoryScore {
    pub fn best(&self) -> f64 {
        self.literal.max(self.free)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub literal_mean: f64,
    pub free_mean: f64,
    pub reward: f64,
    pub best_reconstruction: Sentence,
    pub per_trajectory: Vec<TrajectoryScore>,
}

/// Symmetric combination of the two metric directions.
pub fn symmetric(m_ab: f64, m_ba: f64) -> f64 {
    (m_ab + m_ba) / 2.0
}

pub fn consistency_s(x: &Sentence, x2: &Sentence, backends: &Backends) -> Result<f64> {
    let m = backends.score_batch(&[(x, x2), (x2, x)])?;
    Ok(symmetric(m[0], m[1]))
}

impl ConsistencyReport {
    /// Builds the report from per-trajectory scores. `recons[i] == None`
    /// marks a failed branch: it keeps its slot (scored 0) and is never the
    /// best reconstruction. If every branch failed, `fallback` is recorded.
    pub fn from_scores(
        recons: &[Option<Sentence>],
        scores: Vec<TrajectoryScore>,
        fallback: &Sentence,
    ) -> Result<Self> {
        if recons.is_empty() {
            return Err(Error::EmptyReconstructionSet);
        }
        debug_assert_eq!(recons.len(), scores.len());
        let n = scores.len() as f64;
        let literal_mean = scores.iter().map(|s| s.literal).sum::<f64>() / n;
        let free_mean = scores.iter().map(|s| s.free).sum::<f64>() / n;

        let mut best: Option<(usize, f64)> = None;
        for (i, (r, s)) in recons.iter().zip(&scores).enumerate() {
            if r.is_none() {
                continue;
            }
            if best.is_none_or(|(_, v)| s.best() > v) {
                best = Some((i, s.best()));
            }
        }
        let best_reconstruction = match best {
            Some((i, _)) => recons[i].clone().expect("checked above"),
            None => fallback.clone(),
        };
        Ok(Self {
            literal_mean,
            free_mean,
            reward: literal_mean.max(free_mean),
            best_reconstruction,
            per_trajectory: scores,
        })
    }
}

/// Scores every reconstruction against `x` (literal) and `x_d` (free) with a
/// single batched scorer request.
pub fn reward_with_failures(
    x: &Sentence,
    x_d: Option<&Sentence>,
    recons: &[Option<Sentence>],
    backends: &Backends,
) -> Result<ConsistencyReport> {
    if recons.is_empty() {
        return Err(Error::EmptyReconstructionSet);
    }
    if let Some(d) = x_d {
        if d.lang != x.lang {
            return Err(Error::LanguageMismatch(x.lang.clone(), d.lang.clone()));
        }
    }
    let mut pairs = Vec::new();
    for r in recons.iter().flatten() {
        if r.lang != x.lang {
            return Err(Error::LanguageMismatch(x.lang.clone(), r.lang.clone()));
        }
        pairs.push((r, x));
        pairs.push((x, r));
        if let Some(d) = x_d {
            pairs.push((r, d));
            pairs.push((d, r));
        }
    }
    let m = backends.score_batch(&pairs)?;
    let per_recon = if x_d.is_some() { 4 } else { 2 };
    let mut chunks = m.chunks(per_recon);
    let scores = recons
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            None => TrajectoryScore { trajectory: i, literal: 0.0, free: 0.0 },
            Some(_) => {
                let c = chunks.next().expect("one chunk per reconstruction");
                let literal = symmetric(c[0], c[1]);
                let free = if per_recon == 4 { symmetric(c[2], c[3]) } else { 0.0 };
                TrajectoryScore { trajectory: i, literal, free }
            }
        })
        .collect();
    ConsistencyReport::from_scores(recons, scores, x_d.unwrap_or(x))
}

pub fn reward(
    x: &Sentence,
    x_d: &Sentence,
    recons: &[Sentence],
    backends: &Backends,
) -> Result<ConsistencyReport> {
    let wrapped: Vec<Option<Sentence>> = recons.iter().cloned().map(Some).collect();
    reward_with_failures(x, Some(x_d), &wrapped, backends)
}

pub fn best_reconstruction(
    x: &Sentence,
    x_d: &Sentence,
    recons: &[Sentence],
    backends: &Backends,
) -> Result<Sentence> {
    Ok(reward(x, x_d, recons, backends)?.best_reconstruction)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::sync::Arc;

    use super::*;
    use crate::backends::{LanguageDetector, Scorer, TranslateRequest, Translator};
    use crate::mtp::LanguageTag;

    /// Scorer backed by a lookup table keyed on (a, b) text.
    struct Table(HashMap<(String, String), f64>);

    impl Table {
        fn new(entries: &[(&str, &str, f64)]) -> Self {
            Self(entries.iter().map(|(a, b, v)| ((a.to_string(), b.to_string()), *v)).collect())
        }
    }

    impl Scorer for Table {
        fn score_batch(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>> {
            Ok(pairs
                .iter()
                .map(|(a, b)| {
                    if a.text == b.text {
                        1.0
                    } else {
                        *self.0.get(&(a.text.clone(), b.text.clone())).unwrap_or(&0.0)
                    }
                })
                .collect())
        }
    }

    impl Translator for Table {
        fn translate(&self, _: &TranslateRequest) -> Result<Vec<String>> {
            unreachable!()
        }
    }

    impl LanguageDetector for Table {
        fn detect(&self, _: &[&str]) -> Result<Vec<Option<LanguageTag>>> {
            unreachable!()
        }
    }

    fn en(t: &str) -> Sentence {
        Sentence::new(t, LanguageTag::new("en").unwrap()).unwrap()
    }

    fn backends(entries: &[(&str, &str, f64)]) -> Backends {
        Backends::from_shared(Arc::new(Table::new(entries)))
    }

    #[test]
    fn s_is_mean_of_both_directions() {
        let b = backends(&[("a", "b", 0.6), ("b", "a", 0.8)]);
        let s = consistency_s(&en("a"), &en("b"), &b).unwrap();
        assert!((s - 0.7).abs() < 1e-12);
        assert_eq!(s, consistency_s(&en("b"), &en("a"), &b).unwrap());
        assert_eq!(consistency_s(&en("a"), &en("a"), &b).unwrap(), 1.0);
    }

    #[test]
    fn s_rejects_language_mismatch() {
        let b = backends(&[]);
        let de = Sentence::new("a", LanguageTag::new("de").unwrap()).unwrap();
        assert!(matches!(consistency_s(&en("a"), &de, &b), Err(Error::LanguageMismatch(..))));
    }

    #[test]
    fn literal_and_free_means() {
        // literal S: r1 0.8, r2 0.6; free S: r1 0.5, r2 0.9
        let b = backends(&[
            ("r1", "x", 0.8), ("x", "r1", 0.8),
            ("r2", "x", 0.6), ("x", "r2", 0.6),
            ("r1", "xd", 0.5), ("xd", "r1", 0.5),
            ("r2", "xd", 0.9), ("xd", "r2", 0.9),
        ]);
        let rep = reward(&en("x"), &en("xd"), &[en("r1"), en("r2")], &b).unwrap();
        assert!((rep.literal_mean - 0.7).abs() < 1e-12);
        assert!((rep.free_mean - 0.7).abs() < 1e-12);
        assert!((rep.reward - 0.7).abs() < 1e-12);
        // r2 reaches 0.9 on the free side
        assert_eq!(rep.best_reconstruction.text, "r2");
    }

    #[test]
    fn free_translation_wins_when_larger() {
        let b = backends(&[
            ("r1", "x", 0.4), ("x", "r1", 0.4),
            ("r1", "xd", 0.9), ("xd", "r1", 0.9),
        ]);
        let rep = reward(&en("x"), &en("xd"), &[en("r1")], &b).unwrap();
        assert!((rep.literal_mean - 0.4).abs() < 1e-12);
        assert!((rep.reward - 0.9).abs() < 1e-12);
    }

    #[test]
    fn exact_reconstruction_scores_one() {
        let b = backends(&[]);
        let rep = reward(&en("x"), &en("xd"), &[en("x")], &b).unwrap();
        assert_eq!(rep.literal_mean, 1.0);
        assert_eq!(rep.reward, 1.0);
    }

    #[test]
    fn best_reconstruction_argmax_and_ties() {
        let b = backends(&[
            ("r1", "x", 0.9), ("x", "r1", 0.9),
            ("r2", "x", 0.4), ("x", "r2", 0.4),
        ]);
        let best = best_reconstruction(&en("x"), &en("xd"), &[en("r2"), en("r1")], &b).unwrap();
        assert_eq!(best.text, "r1");
        // all scores equal: earliest wins
        let flat = backends(&[]);
        let best = best_reconstruction(&en("x"), &en("xd"), &[en("p"), en("q"), en("r")], &flat)
            .unwrap();
        assert_eq!(best.text, "p");
    }

    #[test]
    fn nine_reconstructions_are_all_considered() {
        let mut entries = Vec::new();
        let names: Vec<String> = (0..9).map(|i| format!("r{i}")).collect();
        for (i, n) in names.iter().enumerate() {
            let v = if i == 7 { 0.95 } else { 0.1 * i as f64 / 9.0 };
            entries.push((n.clone(), "x".to_string(), v));
            entries.push(("x".to_string(), n.clone(), v));
        }
        let refs: Vec<(&str, &str, f64)> =
            entries.iter().map(|(a, b, v)| (a.as_str(), b.as_str(), *v)).collect();
        let b = backends(&refs);
        let recons: Vec<Sentence> = names.iter().map(|n| en(n)).collect();
        let rep = reward(&en("x"), &en("xd"), &recons, &b).unwrap();
        assert_eq!(rep.per_trajectory.len(), 9);
        assert_eq!(rep.best_reconstruction.text, "r7");
    }

    #[test]
    fn empty_set_is_an_error() {
        let b = backends(&[]);
        assert!(matches!(
            reward(&en("x"), &en("xd"), &[], &b),
            Err(Error::EmptyReconstructionSet)
        ));
    }

    #[test]
    fn failed_branches_score_zero_and_keep_their_slot() {
        let b = backends(&[]);
        let recons = vec![None, Some(en("x")), None];
        let rep = reward_with_failures(&en("x"), Some(&en("xd")), &recons, &b).unwrap();
        assert_eq!(rep.per_trajectory.len(), 3);
        assert!((rep.literal_mean - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rep.best_reconstruction.text, "x");

        let rep = reward_with_failures(&en("x"), Some(&en("xd")), &[None, None], &b).unwrap();
        assert_eq!(rep.reward, 0.0);
        assert_eq!(rep.best_reconstruction.text, "xd");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reward_is_bounded_and_permutation_invariant(
                vals in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..12),
                rot in 0usize..12,
            ) {
                let names: Vec<String> = (0..vals.len()).map(|i| format!("r{i}")).collect();
                let mut entries = Vec::new();
                for (n, (l, f)) in names.iter().zip(&vals) {
                    entries.push((n.clone(), "x".to_string(), *l));
                    entries.push(("x".to_string(), n.clone(), *l));
                    entries.push((n.clone(), "xd".to_string(), *f));
                    entries.push(("xd".to_string(), n.clone(), *f));
                }
                let refs: Vec<(&str, &str, f64)> =
                    entries.iter().map(|(a, b, v)| (a.as_str(), b.as_str(), *v)).collect();
                let b = backends(&refs);
                let mut recons: Vec<Sentence> = names.iter().map(|n| en(n)).collect();
                let rep = reward(&en("x"), &en("xd"), &recons, &b).unwrap();
                prop_assert!((0.0..=1.0).contains(&rep.reward));
                prop_assert_eq!(rep.reward, rep.literal_mean.max(rep.free_mean));
                let k = rot % recons.len();
                recons.rotate_left(k);
                let rotated = reward(&en("x"), &en("xd"), &recons, &b).unwrap();
                prop_assert!((rotated.reward - rep.reward).abs() < 1e-12);
            }
        }
    }
}
