use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtp::{Direction, LanguageTag, Sentence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Genesis {
    Root,
    Init,
    Merge,
    Mutate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Empty when the generation that should have produced it failed.
    pub text: String,
    pub lang: LanguageTag,
    pub visits: u64,
    pub cum_reward: f64,
    /// Greedy back-translation of `text` into the source language.
    pub direct_recon: Option<Sentence>,
    /// Best rollout reconstruction seen so far (`x_d` until simulated).
    pub best_recon: Option<Sentence>,
    pub lang_ok: bool,
    pub genesis: Genesis,
}

impl SearchNode {
    /// `Q / N`, undefined before the first visit.
    pub fn utility(&self) -> Option<f64> {
        (self.visits > 0).then(|| self.cum_reward / self.visits as f64)
    }

    pub fn is_failed(&self) -> bool {
        self.text.trim().is_empty()
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }
}

/// Exploration-adjusted score `ν + 2 sqrt(ln N(parent) / (1 + N(node)))`.
pub fn ucb(node: &SearchNode, parent_visits: u64) -> Result<f64> {
    let nu = node.utility().ok_or(Error::UnvisitedNode(node.id))?;
    Ok(ucb_value(nu, parent_visits.max(1), node.visits))
}

pub fn ucb_value(nu: f64, parent_visits: u64, visits: u64) -> f64 {
    nu + 2.0 * ((parent_visits as f64).ln() / (1.0 + visits as f64)).sqrt()
}

/// Inference accounting for one search.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchCounters {
    /// Every translate request sent to the backend.
    pub translate_calls: u64,
    pub score_calls: u64,
    pub detect_calls: u64,
    pub init_translate: u64,
    pub init_back_translate: u64,
    pub merge_translate: u64,
    pub mutate_translate: u64,
    pub expansion_back_translate: u64,
    pub rollout_translate: u64,
    pub reconstruction_translate: u64,
    /// Sum over merges of (rendered prompt length / plain prompt length).
    pub merge_context_ratio: f64,
    /// Same for mutations.
    pub mutate_context_ratio: f64,
}

impl SearchCounters {
    pub fn add(&mut self, o: &SearchCounters) {
        self.translate_calls += o.translate_calls;
        self.score_calls += o.score_calls;
        self.detect_calls += o.detect_calls;
        self.init_translate += o.init_translate;
        self.init_back_translate += o.init_back_translate;
        self.merge_translate += o.merge_translate;
        self.mutate_translate += o.mutate_translate;
        self.expansion_back_translate += o.expansion_back_translate;
        self.rollout_translate += o.rollout_translate;
        self.reconstruction_translate += o.reconstruction_translate;
        self.merge_context_ratio += o.merge_context_ratio;
        self.mutate_context_ratio += o.mutate_context_ratio;
    }

    pub fn simulation_translate(&self) -> u64 {
        self.rollout_translate + self.reconstruction_translate
    }

    pub fn back_translate(&self) -> u64 {
        self.init_back_translate + self.expansion_back_translate
    }

    pub fn mean_merge_context(&self) -> Option<f64> {
        (self.merge_translate > 0).then(|| self.merge_context_ratio / self.merge_translate as f64)
    }

    pub fn mean_mutate_context(&self) -> Option<f64> {
        (self.mutate_translate > 0).then(|| self.mutate_context_ratio / self.mutate_translate as f64)
    }
}

/// The search state: an arena of nodes, id = index = creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchTree {
    pub source: Sentence,
    pub direction: Direction,
    pub config_digest: String,
    pub seed: u64,
    pub nodes: Vec<SearchNode>,
    pub counters: SearchCounters,
}

impl SearchTree {
    pub fn new(source: Sentence, direction: Direction, config_digest: String, seed: u64) -> Self {
        let root = SearchNode {
            id: 0,
            parent: None,
            children: Vec::new(),
            text: source.text.clone(),
            lang: source.lang.clone(),
            visits: 0,
            cum_reward: 0.0,
            direct_recon: None,
            best_recon: None,
            lang_ok: true,
            genesis: Genesis::Root,
        };
        Self { source, direction, config_digest, seed, nodes: vec![root], counters: SearchCounters::default() }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Number of merge/mutate nodes.
    pub fn expansions(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.genesis, Genesis::Merge | Genesis::Mutate))
            .count()
    }

    pub fn add_child(&mut self, parent: usize, text: String, genesis: Genesis) -> usize {
        let id = self.nodes.len();
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            children: Vec::new(),
            text,
            lang: self.direction.tgt().clone(),
            visits: 0,
            cum_reward: 0.0,
            direct_recon: None,
            best_recon: None,
            lang_ok: false,
            genesis,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Ids from `id` up to and including the root.
    pub fn path_to_root(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path
    }

    pub fn depth(&self, id: usize) -> usize {
        self.path_to_root(id).len() - 1
    }

    /// Breadth-first ids, children in creation order.
    pub fn level_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([0usize]);
        while let Some(id) = queue.pop_front() {
            out.push(id);
            queue.extend(self.nodes[id].children.iter().copied());
        }
        out
    }

    /// Candidate nodes eligible for selection: visited, non-root, non-failed.
    pub fn candidates(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter().skip(1).filter(|n| n.visits > 0 && !n.is_failed())
    }

    /// Non-root node with the highest utility; ties go to the smallest id.
    pub fn argmax_utility(&self) -> Result<usize> {
        argmax_by(self.candidates().map(|n| (n.id, n.utility().unwrap_or(0.0))))
    }

    /// Non-root node with the highest UCB; ties go to the smallest id.
    pub fn argmax_ucb(&self) -> Result<usize> {
        let scored: Result<Vec<(usize, f64)>> = self
            .candidates()
            .map(|n| {
                let parent = n.parent.expect("candidates are non-root");
                Ok((n.id, ucb(n, self.nodes[parent].visits)?))
            })
            .collect();
        argmax_by(scored?.into_iter())
    }

    /// Highest-utility candidate translation, if any.
    pub fn best_candidate(&self) -> Option<&SearchNode> {
        self.argmax_utility().ok().map(|id| &self.nodes[id])
    }

    pub fn to_json(&self) -> TreeJson {
        let src_text = |s: &Option<Sentence>| s.as_ref().map(|s| s.text.clone());
        TreeJson {
            source: self.source.clone(),
            direction: self.direction.clone(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.id,
                    parent: n.parent,
                    text: n.text.clone(),
                    lang: n.lang.clone(),
                    visits: n.visits,
                    cum_reward: n.cum_reward,
                    genesis: n.genesis,
                    lang_ok: n.lang_ok,
                    x_d: src_text(&n.direct_recon),
                    x_prime: src_text(&n.best_recon),
                })
                .collect(),
            counters: self.counters.clone(),
        }
    }

    pub fn from_json(j: TreeJson) -> Result<Self> {
        let src_lang = j.source.lang.clone();
        let sentence = |t: Option<String>| -> Result<Option<Sentence>> {
            t.map(|t| Sentence::new(t, src_lang.clone())).transpose()
        };
        let mut nodes: Vec<SearchNode> = Vec::with_capacity(j.nodes.len());
        for (i, n) in j.nodes.into_iter().enumerate() {
            if n.id != i {
                return Err(Error::InvalidConfig(format!("node ids must be 0..n, found {} at {i}", n.id)));
            }
            match n.parent {
                None if i != 0 => return Err(Error::InvalidConfig(format!("node {i} has no parent"))),
                Some(p) if p >= i => {
                    return Err(Error::InvalidConfig(format!("node {i} has parent {p} created later")))
                }
                Some(_) if i == 0 => return Err(Error::InvalidConfig("root has a parent".into())),
                _ => {}
            }
            nodes.push(SearchNode {
                id: n.id,
                parent: n.parent,
                children: Vec::new(),
                text: n.text,
                lang: n.lang,
                visits: n.visits,
                cum_reward: n.cum_reward,
                direct_recon: sentence(n.x_d)?,
                best_recon: sentence(n.x_prime)?,
                lang_ok: n.lang_ok,
                genesis: n.genesis,
            });
        }
        if nodes.is_empty() {
            return Err(Error::InvalidConfig("tree has no root".into()));
        }
        for i in 1..nodes.len() {
            let p = nodes[i].parent.expect("validated");
            nodes[p].children.push(i);
        }
        Ok(Self {
            source: j.source,
            direction: j.direction,
            config_digest: j.config_digest,
            seed: j.seed,
            nodes,
            counters: j.counters,
        })
    }
}

fn argmax_by(items: impl Iterator<Item = (usize, f64)>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (id, v) in items {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((id, v));
        }
    }
    best.map(|(id, _)| id).ok_or(Error::EmptyTree)
}

/// Adds one visit and `reward` to `node` and every ancestor.
pub fn backpropagate(tree: &mut SearchTree, node: usize, reward: f64) {
    let mut cur = Some(node);
    while let Some(id) = cur {
        let n = &mut tree.nodes[id];
        n.visits += 1;
        n.cum_reward += reward;
        cur = n.parent;
    }
}

/// Global argmax of UCB over candidate nodes.
pub fn select(tree: &SearchTree) -> Result<usize> {
    tree.argmax_ucb()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: usize,
    pub parent: Option<usize>,
    pub text: String,
    pub lang: LanguageTag,
    #[serde(rename = "N")]
    pub visits: u64,
    #[serde(rename = "Q")]
    pub cum_reward: f64,
    pub genesis: Genesis,
    pub lang_ok: bool,
    pub x_d: Option<String>,
    pub x_prime: Option<String>,
}

/// On-disk tree form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub source: Sentence,
    pub direction: Direction,
    pub config_digest: String,
    pub seed: u64,
    pub nodes: Vec<NodeJson>,
    pub counters: SearchCounters,
}
