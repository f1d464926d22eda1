//! Tree-to-preference extraction and the SPPO objective.
//!
//! A finished tree is flattened breadth-first with duplicate candidates merged
//! into their first occurrence. Selection-sorting the flattened candidates by
//! descending utility yields one candidate pair per swap: the promoted
//! maximum is preferred over the element it displaces. Pairs survive only if
//! the preferred candidate beats both the root's utility and the displaced
//! one; a two-way softmax over utilities gives the win rate.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::PromptTemplate;
use crate::error::Result;
use crate::gmcts::SearchTree;
use crate::mtp::{Direction, LanguageTag, Sentence, SppoSign};

/// One entry of the flattened tree.
#[derive(Clone, Debug, PartialEq)]
pub struct SerializedNode {
    /// Tree ids merged into this entry, first occurrence first.
    pub members: Vec<usize>,
    pub text: String,
    pub lang: LanguageTag,
    pub visits: u64,
    pub cum_reward: f64,
    pub lang_ok: bool,
    /// Utility after the language-detection penalty.
    pub utility: f64,
}

impl SerializedNode {
    pub fn raw_utility(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.cum_reward / self.visits as f64
        }
    }
}

/// Level-order flattening with duplicate `(text, lang)` merging. Position 0
/// is always the root. Nodes that failed detection have their utility
/// multiplied by `detect_penalty`.
pub fn serialize_tree(tree: &SearchTree, detect_penalty: f64) -> Vec<SerializedNode> {
    let mut out: Vec<SerializedNode> = Vec::with_capacity(tree.len());
    let mut index: HashMap<(&str, &LanguageTag), usize> = HashMap::new();
    for id in tree.level_order() {
        let n = tree.node(id);
        if !n.is_root() && (n.is_failed() || n.visits == 0) {
            continue;
        }
        let key = (n.text.as_str(), &n.lang);
        match index.get(&key) {
            Some(&pos) if !n.is_root() => {
                let e = &mut out[pos];
                e.members.push(id);
                e.visits += n.visits;
                e.cum_reward += n.cum_reward;
                e.lang_ok &= n.lang_ok;
            }
            _ => {
                if !n.is_root() {
                    index.insert(key, out.len());
                }
                out.push(SerializedNode {
                    members: vec![id],
                    text: n.text.clone(),
                    lang: n.lang.clone(),
                    visits: n.visits,
                    cum_reward: n.cum_reward,
                    lang_ok: n.is_root() || n.lang_ok,
                    utility: 0.0,
                });
            }
        }
    }
    for e in &mut out {
        let nu = e.raw_utility();
        e.utility = if e.lang_ok { nu } else { nu * detect_penalty };
    }
    out
}

/// `exp(a) / (exp(a) + exp(b))`, computed stably.
pub fn win_rate(nu_i: f64, nu_j: f64) -> f64 {
    1.0 / (1.0 + (nu_j - nu_i).exp())
}

/// Every swap made while selection-sorting `utilities` into descending order,
/// as `(promoted, displaced)` indices into the input. The earliest maximum
/// is promoted on ties.
pub fn selection_sort_swaps(utilities: &[f64]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..utilities.len()).collect();
    let mut swaps = Vec::new();
    for i in 0..order.len() {
        let mut m = i;
        for j in i + 1..order.len() {
            if utilities[order[j]] > utilities[order[m]] {
                m = j;
            }
        }
        if m != i {
            swaps.push((order[m], order[i]));
            order.swap(i, m);
        }
    }
    swaps
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwapPair {
    pub chosen: usize,
    pub rejected: usize,
    pub nu_chosen: f64,
    pub nu_rejected: f64,
    pub win_rate: f64,
}

/// Filtered swap pairs over candidate utilities (root excluded).
pub fn extract_pairs(utilities: &[f64], root_utility: f64) -> Vec<SwapPair> {
    selection_sort_swaps(utilities)
        .into_iter()
        .filter(|&(i, j)| utilities[i] > root_utility && utilities[i] > utilities[j])
        .map(|(i, j)| SwapPair {
            chosen: i,
            rejected: j,
            nu_chosen: utilities[i],
            nu_rejected: utilities[j],
            win_rate: win_rate(utilities[i], utilities[j]),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub source: Sentence,
    pub direction: Direction,
    pub chosen: String,
    pub rejected: String,
    pub win_rate: f64,
    pub instruction_id: String,
    pub chosen_utility: f64,
    pub rejected_utility: f64,
    pub root_utility: f64,
}

/// One line of the preference JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceRecord {
    pub src: String,
    pub src_lang: LanguageTag,
    pub tgt_lang: LanguageTag,
    pub chosen: String,
    pub rejected: String,
    pub win_rate: f64,
    pub instruction: String,
    pub nu_chosen: f64,
    pub nu_rejected: f64,
    pub nu_root: f64,
}

impl From<&PreferencePair> for PreferenceRecord {
    fn from(p: &PreferencePair) -> Self {
        Self {
            src: p.source.text.clone(),
            src_lang: p.direction.src().clone(),
            tgt_lang: p.direction.tgt().clone(),
            chosen: p.chosen.clone(),
            rejected: p.rejected.clone(),
            win_rate: p.win_rate,
            instruction: p.instruction_id.clone(),
            nu_chosen: p.chosen_utility,
            nu_rejected: p.rejected_utility,
            nu_root: p.root_utility,
        }
    }
}

impl TryFrom<PreferenceRecord> for PreferencePair {
    type Error = crate::error::Error;

    fn try_from(r: PreferenceRecord) -> Result<Self> {
        Ok(Self {
            source: Sentence::new(r.src, r.src_lang.clone())?,
            direction: Direction::new(r.src_lang, r.tgt_lang)?,
            chosen: r.chosen,
            rejected: r.rejected,
            win_rate: r.win_rate,
            instruction_id: r.instruction,
            chosen_utility: r.nu_chosen,
            rejected_utility: r.nu_rejected,
            root_utility: r.nu_root,
        })
    }
}

/// Full extraction for one tree. Each pair gets an instruction drawn from
/// `templates` with an RNG seeded from the tree's seed.
pub fn tree_to_preference(
    tree: &SearchTree,
    detect_penalty: f64,
    templates: &[PromptTemplate],
) -> Vec<PreferencePair> {
    let list = serialize_tree(tree, detect_penalty);
    let root_utility = list[0].utility;
    let candidates = &list[1..];
    let utilities: Vec<f64> = candidates.iter().map(|c| c.utility).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tree.seed ^ 0x5eed_9a1e_0f0f_7001);
    extract_pairs(&utilities, root_utility)
        .into_iter()
        .map(|p| PreferencePair {
            source: tree.source.clone(),
            direction: tree.direction.clone(),
            chosen: candidates[p.chosen].text.clone(),
            rejected: candidates[p.rejected].text.clone(),
            win_rate: p.win_rate,
            instruction_id: templates
                .choose(&mut rng)
                .map_or_else(|| "alma".to_string(), |t| t.id.clone()),
            chosen_utility: p.nu_chosen,
            rejected_utility: p.nu_rejected,
            root_utility,
        })
        .collect()
}

/// Log-probabilities of one preference pair under the current and the
/// frozen pre-update policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SppoInputs {
    pub logp_theta_w: f64,
    pub logp_pre_w: f64,
    pub logp_theta_l: f64,
    pub logp_pre_l: f64,
    /// `P(y_w ≻ y_l | x)`.
    pub p_w: f64,
}

impl SppoInputs {
    /// `log π_θ/π_pre - η (P - 1/2)` for the chosen and rejected sides.
    pub fn brackets(&self, eta: f64) -> (f64, f64) {
        let w = (self.logp_theta_w - self.logp_pre_w) - eta * (self.p_w - 0.5);
        let l = (self.logp_theta_l - self.logp_pre_l) - eta * ((1.0 - self.p_w) - 0.5);
        (w, l)
    }
}

pub fn sppo_loss(inputs: &SppoInputs, eta: f64, sign: SppoSign) -> f64 {
    let (w, l) = inputs.brackets(eta);
    match sign {
        SppoSign::SumOfSquares => w * w + l * l,
        SppoSign::Difference => w * w - l * l,
    }
}

/// Partial derivatives of [`sppo_loss`] with respect to each log-probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SppoGrad {
    pub d_theta_w: f64,
    pub d_pre_w: f64,
    pub d_theta_l: f64,
    pub d_pre_l: f64,
}

pub fn sppo_grad(inputs: &SppoInputs, eta: f64, sign: SppoSign) -> SppoGrad {
    let (w, l) = inputs.brackets(eta);
    let sl = match sign {
        SppoSign::SumOfSquares => 1.0,
        SppoSign::Difference => -1.0,
    };
    SppoGrad { d_theta_w: 2.0 * w, d_pre_w: -2.0 * w, d_theta_l: sl * 2.0 * l, d_pre_l: -sl * 2.0 * l }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmcts::Genesis;

    fn tag(s: &str) -> LanguageTag {
        LanguageTag::new(s).unwrap()
    }

    fn tree() -> SearchTree {
        let x = Sentence::new("source", tag("en")).unwrap();
        SearchTree::new(x, Direction::new(tag("en"), tag("zh")).unwrap(), "d".into(), 3)
    }

    fn add(t: &mut SearchTree, parent: usize, text: &str, n: u64, q: f64, ok: bool) -> usize {
        let id = t.add_child(parent, text.into(), Genesis::Init);
        t.nodes[id].visits = n;
        t.nodes[id].cum_reward = q;
        t.nodes[id].lang_ok = ok;
        id
    }

    #[test]
    fn duplicates_merge_into_first_occurrence() {
        let mut t = tree();
        t.nodes[0].visits = 3;
        t.nodes[0].cum_reward = 1.8;
        let a = add(&mut t, 0, "foo", 2, 1.0, true);
        add(&mut t, a, "foo", 1, 0.8, true);
        let list = serialize_tree(&t, 0.5);
        assert_eq!(list.len(), 2);
        assert_eq!(list[1].members, vec![1, 2]);
        assert_eq!(list[1].visits, 3);
        assert!((list[1].cum_reward - 1.8).abs() < 1e-12);
        assert!((list[1].utility - 0.6).abs() < 1e-12);
    }

    #[test]
    fn no_duplicates_keeps_level_order() {
        let mut t = tree();
        t.nodes[0].visits = 1;
        let a = add(&mut t, 0, "a", 1, 0.1, true);
        let b = add(&mut t, 0, "b", 1, 0.2, true);
        let c = add(&mut t, a, "c", 1, 0.3, true);
        let d = add(&mut t, b, "d", 1, 0.3, true);
        let e = add(&mut t, a, "e", 1, 0.3, true);
        let ids: Vec<usize> = serialize_tree(&t, 0.5).iter().map(|e| e.members[0]).collect();
        assert_eq!(ids, vec![0, a, b, c, e, d]);
    }

    #[test]
    fn failed_detection_halves_utility() {
        let mut t = tree();
        add(&mut t, 0, "a", 1, 0.8, false);
        let list = serialize_tree(&t, 0.5);
        assert!((list[1].utility - 0.4).abs() < 1e-12);
        assert!((list[1].raw_utility() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn serialization_is_idempotent_without_duplicates() {
        let mut t = tree();
        t.nodes[0].visits = 2;
        t.nodes[0].cum_reward = 1.0;
        add(&mut t, 0, "a", 1, 0.3, true);
        add(&mut t, 0, "b", 1, 0.7, true);
        let once = serialize_tree(&t, 0.5);
        // rebuild a tree from the serialized list and serialize again
        let mut t2 = tree();
        t2.nodes[0].visits = once[0].visits;
        t2.nodes[0].cum_reward = once[0].cum_reward;
        for e in &once[1..] {
            add(&mut t2, 0, &e.text, e.visits, e.cum_reward, e.lang_ok);
        }
        assert_eq!(serialize_tree(&t2, 0.5), once);
    }

    #[test]
    fn win_rate_goldens() {
        let cases: [(f64, f64, f64); 5] = [
            (1.2290, 0.5595, 0.6614),
            (2.3230, 1.2290, 0.7491),
            (2.3230, 0.5801, 0.8511),
            (0.5626, 0.5275, 0.5088),
            (0.5657, 0.5626, 0.5008),
        ];
        for (a, b, want) in cases {
            // oracle: direct exponentials
            let direct = a.exp() / (a.exp() + b.exp());
            assert!((win_rate(a, b) - direct).abs() < 1e-12);
            assert!((win_rate(a, b) - want).abs() < 5e-4, "{a} vs {b}");
        }
        assert_eq!(win_rate(0.3, 0.3), 0.5);
    }

    #[test]
    fn pairs_from_selection_sort() {
        // [0.6, 1.0, 0.55]: one swap promoting 1.0 over 0.6
        let p = extract_pairs(&[0.6, 1.0, 0.55], 0.5);
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].chosen, p[0].rejected), (1, 0));
        assert!(extract_pairs(&[0.9, 0.7, 0.6], 0.5).is_empty());
        assert!(extract_pairs(&[0.1, 0.3, 0.2], 0.5).is_empty());
        assert!(extract_pairs(&[], 0.5).is_empty());
    }

    #[test]
    fn swaps_follow_textbook_selection_sort() {
        let u = [0.2, 0.9, 0.5, 0.7];
        // i=0: max 0.9 at 1 -> swap(1,0): [0.9,0.2,0.5,0.7]
        // i=1: max 0.7 at 3 -> swap(3,0): [0.9,0.7,0.5,0.2]
        // i=2: max 0.5 in place
        assert_eq!(selection_sort_swaps(&u), vec![(1, 0), (3, 0)]);
    }

    #[test]
    fn tree_extraction_builds_records() {
        let mut t = tree();
        t.nodes[0].visits = 3;
        t.nodes[0].cum_reward = 1.5;
        add(&mut t, 0, "low", 1, 0.2, true);
        add(&mut t, 0, "high", 1, 0.9, true);
        let tpl = crate::backends::default_templates();
        let pairs = tree_to_preference(&t, 0.5, &tpl);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].chosen, "high");
        assert_eq!(pairs[0].rejected, "low");
        assert!((pairs[0].root_utility - 0.5).abs() < 1e-12);
        let rec = PreferenceRecord::from(&pairs[0]);
        let line = serde_json::to_string(&rec).unwrap();
        for key in ["src", "src_lang", "tgt_lang", "chosen", "rejected", "win_rate", "instruction", "nu_chosen", "nu_rejected", "nu_root"] {
            assert!(line.contains(&format!("\"{key}\":")), "{key}");
        }
        let back = PreferencePair::try_from(serde_json::from_str::<PreferenceRecord>(&line).unwrap()).unwrap();
        assert_eq!(back, pairs[0]);
    }

    #[test]
    fn sppo_examples() {
        let zero = SppoInputs { logp_theta_w: -3.0, logp_pre_w: -3.0, logp_theta_l: -5.0, logp_pre_l: -5.0, p_w: 0.5 };
        assert_eq!(sppo_loss(&zero, 10.0, SppoSign::SumOfSquares), 0.0);
        assert_eq!(sppo_loss(&zero, 10.0, SppoSign::Difference), 0.0);

        let worked = SppoInputs { logp_theta_w: 0.1, logp_pre_w: 0.0, logp_theta_l: -0.1, logp_pre_l: 0.0, p_w: 0.6614 };
        let (w, l) = worked.brackets(10.0);
        assert!((w + 1.514).abs() < 1e-9 && (l - 1.514).abs() < 1e-9);
        assert!((sppo_loss(&worked, 10.0, SppoSign::SumOfSquares) - 4.5850).abs() < 1e-3);
        assert!(sppo_loss(&worked, 10.0, SppoSign::Difference).abs() < 1e-3);

        let (w0, l0) = worked.brackets(0.0);
        assert_eq!((w0, l0), (0.1, -0.1));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn win_rate_antisymmetry(a in -5.0f64..5.0, b in -5.0f64..5.0) {
                prop_assert!((win_rate(a, b) + win_rate(b, a) - 1.0).abs() < 1e-12);
                let w = win_rate(a, b);
                prop_assert!(w > 0.0 && w < 1.0);
            }

            #[test]
            fn chosen_always_beats_root_and_rejected(
                u in prop::collection::vec(0.0f64..2.0, 0..15),
                root in 0.0f64..1.5,
            ) {
                for p in extract_pairs(&u, root) {
                    prop_assert!(p.nu_chosen > root);
                    prop_assert!(p.nu_chosen > p.nu_rejected);
                    prop_assert!(p.win_rate > 0.5);
                }
            }

            #[test]
            fn swaps_sort_the_list(u in prop::collection::vec(0.0f64..2.0, 0..15)) {
                let mut order: Vec<usize> = (0..u.len()).collect();
                let mut pos: Vec<usize> = (0..u.len()).collect();
                for (promoted, displaced) in selection_sort_swaps(&u) {
                    let (a, b) = (pos[promoted], pos[displaced]);
                    order.swap(a, b);
                    pos[promoted] = b;
                    pos[displaced] = a;
                }
                let sorted: Vec<f64> = order.iter().map(|i| u[*i]).collect();
                prop_assert!(sorted.windows(2).all(|w| w[0] >= w[1]));
            }

            #[test]
            fn grad_matches_central_differences(
                lt_w in -5.0f64..0.0, lp_w in -5.0f64..0.0,
                lt_l in -5.0f64..0.0, lp_l in -5.0f64..0.0,
                p in 0.01f64..0.99, eta in 0.1f64..10.0, diff in any::<bool>(),
            ) {
                let sign = if diff { SppoSign::Difference } else { SppoSign::SumOfSquares };
                let x = SppoInputs { logp_theta_w: lt_w, logp_pre_w: lp_w, logp_theta_l: lt_l, logp_pre_l: lp_l, p_w: p };
                let g = sppo_grad(&x, eta, sign);
                let h = 1e-5;
                let fd = |f: &dyn Fn(f64) -> SppoInputs| {
                    (sppo_loss(&f(h), eta, sign) - sppo_loss(&f(-h), eta, sign)) / (2.0 * h)
                };
                let checks = [
                    (g.d_theta_w, fd(&|d| SppoInputs { logp_theta_w: lt_w + d, ..x })),
                    (g.d_pre_w, fd(&|d| SppoInputs { logp_pre_w: lp_w + d, ..x })),
                    (g.d_theta_l, fd(&|d| SppoInputs { logp_theta_l: lt_l + d, ..x })),
                    (g.d_pre_l, fd(&|d| SppoInputs { logp_pre_l: lp_l + d, ..x })),
                ];
                for (analytic, numeric) in checks {
                    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
                    prop_assert!((analytic - numeric).abs() / scale < 1e-5, "{analytic} vs {numeric}");
                }
            }
        }
    }
}
