use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{find_template, render_prompt, Backends, Exemplar, TranslateRequest};
use crate::consistency::{reward_with_failures, symmetric, ConsistencyReport, TrajectoryScore};
use crate::error::{Error, Result};
use crate::mtp::{validate_input, Direction, GateDecision, LanguageTag, SearchConfig, Sentence, Trajectory};

use super::tree::{backpropagate, select, Genesis, SearchTree};

impl Error {
    /// Errors that abort a search instead of degrading one candidate.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            Error::UnsupportedDirection { .. }
                | Error::UnknownTemplate(_)
                | Error::MissingPlaceholder { .. }
                | Error::InvalidConfig(_)
                | Error::SameLanguageDirection(_)
        )
    }
}

/// Turns a recoverable backend failure into `None`, passing fatal ones up.
fn soften<T>(what: &str, r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_fatal() => Err(e),
        Err(e) => {
            warn!("{what} failed: {e}");
            Ok(None)
        }
    }
}

/// One simulated rollout path from the candidate down to a reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutBranch {
    pub id: usize,
    /// Candidate first, then each rollout step, then the reconstruction.
    pub steps: Vec<Sentence>,
    /// `None` when some translation along the branch failed.
    pub reconstruction: Option<Sentence>,
}

impl RolloutBranch {
    pub fn trajectory(&self) -> Option<Trajectory> {
        self.reconstruction.as_ref().map(|_| Trajectory::new(self.steps.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub origin: usize,
    pub branches: Vec<RolloutBranch>,
    pub consistency: ConsistencyReport,
    /// Translate plus score requests issued by this simulation.
    pub inference_calls: u64,
}

impl SimulationReport {
    pub fn reconstructions(&self) -> Vec<Option<&Sentence>> {
        self.branches.iter().map(|b| b.reconstruction.as_ref()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub selected: usize,
    pub argmax_utility: usize,
    pub kind: Genesis,
    pub created: usize,
}

/// Drives one G-MCTS search over its own tree and seeded RNG.
pub struct Searcher<'a> {
    cfg: &'a SearchConfig,
    backends: &'a Backends,
    rng: ChaCha8Rng,
    tree: SearchTree,
    expansions: Vec<ExpansionRecord>,
    reports: Vec<SimulationReport>,
    keep_reports: bool,
}

impl<'a> Searcher<'a> {
    pub fn new(x: Sentence, direction: Direction, cfg: &'a SearchConfig, backends: &'a Backends) -> Result<Self> {
        cfg.validate()?;
        cfg.check_direction(&direction)?;
        if x.lang != *direction.src() {
            return Err(Error::LanguageMismatch(x.lang.clone(), direction.src().clone()));
        }
        let tree = SearchTree::new(x, direction, cfg.digest(), cfg.seed);
        Ok(Self {
            cfg,
            backends,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            tree,
            expansions: Vec::new(),
            reports: Vec::new(),
            keep_reports: false,
        })
    }

    /// Retain every simulation report (off by default).
    pub fn keep_reports(mut self, keep: bool) -> Self {
        self.keep_reports = keep;
        self
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    pub fn tree_mut(&mut self) -> &mut SearchTree {
        &mut self.tree
    }

    pub fn expansions(&self) -> &[ExpansionRecord] {
        &self.expansions
    }

    pub fn reports(&self) -> &[SimulationReport] {
        &self.reports
    }

    pub fn into_tree(self) -> SearchTree {
        self.tree
    }

    fn source(&self) -> &Sentence {
        &self.tree.source
    }

    fn request(&mut self, text: &str, direction: Direction, n: usize, greedy: bool) -> TranslateRequest {
        let tpl = self.backends.templates().choose(&mut self.rng).expect("template set is non-empty");
        let instruction = tpl.id.clone();
        let seed = self.rng.gen();
        let req = TranslateRequest::new(text, direction).with_instruction(instruction).with_seed(seed);
        if greedy {
            req.sampled(n, 0.0, 1)
        } else {
            req.sampled(n, self.cfg.temperature, self.cfg.top_k)
        }
    }

    fn translate(&mut self, req: &TranslateRequest) -> Result<Option<Vec<String>>> {
        self.tree.counters.translate_calls += 1;
        soften("translate", self.backends.translate(req))
    }

    /// Greedy back-translation of candidate `id` into the source language.
    fn back_translate(&mut self, id: usize) -> Result<Option<Sentence>> {
        let text = self.tree.nodes[id].text.clone();
        let dir = self.tree.direction.reversed();
        let req = self.request(&text, dir, 1, true);
        let out = self.translate(&req)?;
        Ok(out.and_then(|mut c| Sentence::new(c.remove(0), self.source().lang.clone()).ok()))
    }

    /// Runs detection over `ids` in one request and records `lang_ok`.
    fn detect(&mut self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Ok(());
        }
        let texts: Vec<String> = ids.iter().map(|i| self.tree.nodes[*i].text.clone()).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        self.tree.counters.detect_calls += 1;
        let detected = soften("detect", self.backends.detect(&refs))?;
        let target = self.tree.direction.tgt().clone();
        for (k, id) in ids.iter().enumerate() {
            let ok = detected.as_ref().is_some_and(|d| d[k].as_ref() == Some(&target));
            self.tree.nodes[*id].lang_ok = ok && !self.tree.nodes[*id].is_failed();
        }
        Ok(())
    }

    /// Root plus up to `b` distinct sampled candidates, each fast-initialized
    /// with `S(x, x_d)` from its back-translation.
    pub fn initialize(&mut self) -> Result<()> {
        if self.tree.len() > 1 {
            return Err(Error::InvalidConfig("tree is already initialized".into()));
        }
        let x = self.source().clone();
        let req = self.request(&x.text, self.tree.direction.clone(), self.cfg.width_b, false);
        self.tree.counters.init_translate += 1;
        let candidates = self.translate(&req)?.unwrap_or_default();

        let mut children = Vec::new();
        for c in candidates {
            if c.is_empty() || self.tree.nodes.iter().skip(1).any(|n| n.text == c) {
                continue;
            }
            children.push(self.tree.add_child(0, c, Genesis::Init));
        }
        for &id in &children {
            self.tree.counters.init_back_translate += 1;
            let xd = self.back_translate(id)?;
            let node = &mut self.tree.nodes[id];
            node.best_recon = xd.clone();
            node.direct_recon = xd;
        }
        self.detect(&children)?;

        let with_recon: Vec<(usize, Sentence)> = children
            .iter()
            .filter_map(|id| self.tree.nodes[*id].direct_recon.clone().map(|d| (*id, d)))
            .collect();
        let mut rewards = vec![0.0; self.tree.len()];
        if !with_recon.is_empty() {
            let pairs: Vec<(&Sentence, &Sentence)> =
                with_recon.iter().flat_map(|(_, d)| [(&x, d), (d, &x)]).collect();
            self.tree.counters.score_calls += 1;
            if let Some(m) = soften("score", self.backends.score_batch(&pairs))? {
                for (k, (id, _)) in with_recon.iter().enumerate() {
                    rewards[*id] = symmetric(m[2 * k], m[2 * k + 1]);
                }
            }
        }
        for &id in &children {
            backpropagate(&mut self.tree, id, rewards[id]);
        }
        debug!("initialized {} children", children.len());
        Ok(())
    }

    /// Adds one merge or mutate child under `selected`.
    pub fn expand(&mut self, selected: usize) -> Result<usize> {
        if self.tree.expansions() >= self.cfg.node_budget {
            return Err(Error::BudgetExhausted(self.cfg.node_budget));
        }
        let best = self.tree.argmax_utility()?;
        let x = self.source().clone();
        let dir = self.tree.direction.clone();
        let (kind, req) = if selected != best {
            let exemplars = [best, selected]
                .iter()
                .map(|id| Exemplar { src: x.text.clone(), tgt: self.tree.nodes[*id].text.clone() })
                .collect();
            let req = self.request(&x.text, dir, 1, false).with_exemplars(exemplars);
            (Genesis::Merge, req)
        } else {
            let node = &self.tree.nodes[selected];
            let variant = node
                .best_recon
                .clone()
                .or_else(|| node.direct_recon.clone())
                .unwrap_or_else(|| x.clone());
            (Genesis::Mutate, self.request(&variant.text, dir, 1, false))
        };

        let ratio = self.context_ratio(&req, &x.text)?;
        match kind {
            Genesis::Merge => {
                self.tree.counters.merge_translate += 1;
                self.tree.counters.merge_context_ratio += ratio;
            }
            _ => {
                self.tree.counters.mutate_translate += 1;
                self.tree.counters.mutate_context_ratio += ratio;
            }
        }
        let text = self.translate(&req)?.map(|mut c| c.remove(0)).unwrap_or_default();
        let id = self.tree.add_child(selected, text, kind);
        if !self.tree.nodes[id].is_failed() {
            self.tree.counters.expansion_back_translate += 1;
            let xd = self.back_translate(id)?;
            let node = &mut self.tree.nodes[id];
            node.best_recon = xd.clone();
            node.direct_recon = xd;
            self.detect(&[id])?;
        }
        self.expansions.push(ExpansionRecord { selected, argmax_utility: best, kind, created: id });
        Ok(id)
    }

    fn context_ratio(&self, req: &TranslateRequest, original: &str) -> Result<f64> {
        let tpl = find_template(self.backends.templates(), &req.instruction_id)?;
        let full = render_prompt(tpl, req)?.chars().count() as f64;
        let plain = TranslateRequest::new(original, req.direction.clone());
        let base = render_prompt(tpl, &plain)?.chars().count() as f64;
        Ok(full / base.max(1.0))
    }

    /// Rolls out a temporary width-`b`, depth-`n` translation tree from
    /// `id` and scores the `b^n` source-language reconstructions.
    pub fn simulate(&mut self, id: usize) -> Result<SimulationReport> {
        if self.tree.nodes[id].is_root() {
            return Err(Error::InvalidConfig("the root cannot be simulated".into()));
        }
        let calls_before = self.tree.counters.translate_calls + self.tree.counters.score_calls;
        let x = self.source().clone();
        let b = self.cfg.width_b;
        let node = &self.tree.nodes[id];
        let start = Sentence::new(node.text.clone(), node.lang.clone()).ok();

        // each partial branch: steps so far, alive flag
        let mut level: Vec<(Vec<Sentence>, bool)> = match &start {
            Some(y) => vec![(vec![y.clone()], true)],
            None => vec![(Vec::new(), false)],
        };
        for _ in 0..self.cfg.sim_depth_n {
            let mut planned: Vec<(usize, Option<TranslateRequest>)> = Vec::with_capacity(level.len() * b);
            for (p, (steps, alive)) in level.iter().enumerate() {
                for _ in 0..b {
                    let req = match steps.last() {
                        Some(last) if *alive => {
                            let lang = self.rollout_language(&last.lang);
                            let dir = Direction::new(last.lang.clone(), lang)?;
                            Some(self.request(&last.text, dir, 1, false))
                        }
                        _ => None,
                    };
                    planned.push((p, req));
                }
            }
            let issued = planned.iter().filter(|(_, r)| r.is_some()).count() as u64;
            self.tree.counters.translate_calls += issued;
            self.tree.counters.rollout_translate += issued;
            let results = self.run_batch(planned.iter().map(|(_, r)| r.as_ref()).collect())?;
            level = planned
                .iter()
                .zip(results)
                .map(|((p, req), out)| {
                    let (steps, alive) = &level[*p];
                    match (req, out.and_then(|t| Sentence::new(t, req.as_ref()?.direction.tgt().clone()).ok())) {
                        (Some(_), Some(s)) if *alive => {
                            let mut next = steps.clone();
                            next.push(s);
                            (next, true)
                        }
                        _ => (steps.clone(), false),
                    }
                })
                .collect();
        }

        // reconstructions: leaves already in the source language are used as is
        let recon_reqs: Vec<Option<TranslateRequest>> = level
            .iter()
            .map(|(steps, alive)| match steps.last() {
                Some(last) if *alive && last.lang != x.lang => {
                    let dir = Direction::new(last.lang.clone(), x.lang.clone()).ok()?;
                    Some(self.request(&last.text, dir, 1, true))
                }
                _ => None,
            })
            .collect();
        let issued = recon_reqs.iter().filter(|r| r.is_some()).count() as u64;
        self.tree.counters.translate_calls += issued;
        self.tree.counters.reconstruction_translate += issued;
        let outs = self.run_batch(recon_reqs.iter().map(Option::as_ref).collect())?;

        let mut branches = Vec::with_capacity(level.len());
        for (i, ((steps, alive), out)) in level.into_iter().zip(outs).enumerate() {
            let last_is_source = steps.last().is_some_and(|s| s.lang == x.lang);
            let reconstruction = if !alive {
                None
            } else if last_is_source {
                steps.last().cloned()
            } else {
                out.and_then(|t| Sentence::new(t, x.lang.clone()).ok())
            };
            let mut steps = steps;
            if let (Some(r), false) = (&reconstruction, last_is_source) {
                steps.push(r.clone());
            }
            branches.push(RolloutBranch { id: i, steps, reconstruction });
        }

        let recons: Vec<Option<Sentence>> = branches.iter().map(|b| b.reconstruction.clone()).collect();
        let x_d = self.tree.nodes[id].direct_recon.clone();
        let consistency = if recons.iter().any(Option::is_some) {
            self.tree.counters.score_calls += 1;
            let scored = reward_with_failures(&x, x_d.as_ref(), &recons, self.backends);
            match soften("score", scored)? {
                Some(c) => c,
                None => zero_report(&recons, x_d.as_ref().unwrap_or(&x))?,
            }
        } else {
            zero_report(&recons, x_d.as_ref().unwrap_or(&x))?
        };
        if recons.iter().any(Option::is_some) {
            self.tree.nodes[id].best_recon = Some(consistency.best_reconstruction.clone());
        }
        let calls_after = self.tree.counters.translate_calls + self.tree.counters.score_calls;
        let report = SimulationReport {
            origin: id,
            branches,
            consistency,
            inference_calls: calls_after - calls_before,
        };
        if self.keep_reports {
            self.reports.push(report.clone());
        }
        Ok(report)
    }

    /// Quality estimation of an externally supplied translation: attaches it
    /// under the root, back-translates it and runs one simulation.
    pub fn score_candidate(&mut self, hypothesis: &str) -> Result<(usize, SimulationReport)> {
        let hyp = Sentence::new(hypothesis, self.tree.direction.tgt().clone())?;
        let id = self.tree.add_child(0, hyp.text, Genesis::Init);
        self.tree.counters.init_back_translate += 1;
        let xd = self.back_translate(id)?;
        let node = &mut self.tree.nodes[id];
        node.best_recon = xd.clone();
        node.direct_recon = xd;
        self.detect(&[id])?;
        let report = self.simulate(id)?;
        backpropagate(&mut self.tree, id, report.consistency.reward);
        Ok((id, report))
    }

    fn rollout_language(&mut self, current: &LanguageTag) -> LanguageTag {
        let options: Vec<&LanguageTag> = self.cfg.languages.iter().filter(|l| *l != current).collect();
        (*options.choose(&mut self.rng).expect("config has at least two languages")).clone()
    }

    /// Issues independent requests concurrently; results keep input order.
    fn run_batch(&self, reqs: Vec<Option<&TranslateRequest>>) -> Result<Vec<Option<String>>> {
        let backends = self.backends;
        let results: Vec<Result<Option<String>>> = reqs
            .par_iter()
            .map(|r| match r {
                None => Ok(None),
                Some(req) => Ok(soften("rollout translate", backends.translate(req))?
                    .map(|mut c| c.remove(0))
                    .filter(|c| !c.is_empty())),
            })
            .collect();
        results.into_iter().collect()
    }

    /// Initialize, then select → expand → simulate → backpropagate until
    /// the node budget is spent or nothing is selectable.
    pub fn run(&mut self) -> Result<()> {
        if self.tree.len() == 1 {
            self.initialize()?;
        }
        while self.tree.expansions() < self.cfg.node_budget {
            let selected = match select(&self.tree) {
                Ok(s) => s,
                Err(Error::EmptyTree) => break,
                Err(e) => return Err(e),
            };
            let id = self.expand(selected)?;
            let reward = if self.tree.nodes[id].is_failed() {
                0.0
            } else {
                self.simulate(id)?.consistency.reward
            };
            backpropagate(&mut self.tree, id, reward);
        }
        Ok(())
    }
}

fn zero_report(recons: &[Option<Sentence>], fallback: &Sentence) -> Result<ConsistencyReport> {
    let scores = (0..recons.len())
        .map(|i| TrajectoryScore { trajectory: i, literal: 0.0, free: 0.0 })
        .collect();
    ConsistencyReport::from_scores(recons, scores, fallback)
}

/// Gate outcome of a search request.
#[derive(Debug)]
pub enum SearchOutcome {
    Done(SearchTree),
    Rejected(GateDecision),
}

/// Full search for `x` in `direction`, after the input gate.
pub fn run_search(x: &Sentence, direction: &Direction, cfg: &SearchConfig, backends: &Backends) -> Result<SearchOutcome> {
    let gate = validate_input(x, cfg);
    if !gate.is_accept() {
        return Ok(SearchOutcome::Rejected(gate));
    }
    let mut s = Searcher::new(x.clone(), direction.clone(), cfg, backends)?;
    s.run()?;
    Ok(SearchOutcome::Done(s.into_tree()))
}

/// Builds the initialized tree only.
pub fn initialize(x: &Sentence, direction: &Direction, cfg: &SearchConfig, backends: &Backends) -> Result<SearchTree> {
    let mut s = Searcher::new(x.clone(), direction.clone(), cfg, backends)?;
    s.initialize()?;
    Ok(s.into_tree())
}
