//! Batch self-play: concurrent searches over a tagged corpus, pair pooling,
//! and in-process preference training of the toy translator.

mod lab;
mod sink;
mod train;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::error::{Error, Result};
use crate::gmcts::{run_search, SearchCounters, SearchOutcome, SearchTree};
use crate::mtp::{validate_input, Direction, GateDecision, LanguageTag, RejectReason, SearchConfig, Sentence};
use crate::preference::{tree_to_preference, PreferencePair};

pub use lab::{run_lab, LabPreset, LabRoundReport, LabRun};
pub use sink::{DirSink, MemorySink, NullSink, RoundSink, TrainingHeader};
pub use train::{train_round, TrainConfig, TrainReport};

/// Inputs handed to a single worker task.
pub const WORKER_BATCH: usize = 10;

/// SplitMix64 over the three coordinates.
pub fn mix_seed(global: u64, round: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(global) ^ round) ^ index)
}

/// Reads `lang<TAB>text` lines. Blank lines and `#` comments are skipped.
pub fn parse_corpus(content: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (no, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (lang, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::InvalidConfig(format!("corpus line {} has no tab separator", no + 1)))?;
        out.push(Sentence::new(text, LanguageTag::new(lang.trim())?)?);
    }
    Ok(out)
}

pub fn format_corpus(sentences: &[Sentence]) -> String {
    sentences.iter().map(|s| format!("{}\t{}\n", s.lang, s.text)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundOptions {
    pub round: u64,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputOutcome {
    Searched { tree: SearchTree, pairs: Vec<PreferencePair> },
    Rejected(RejectReason),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputResult {
    pub index: usize,
    pub source: Sentence,
    pub direction: Option<Direction>,
    pub seed: u64,
    pub outcome: InputOutcome,
}

impl InputResult {
    pub fn tree(&self) -> Option<&SearchTree> {
        match &self.outcome {
            InputOutcome::Searched { tree, .. } => Some(tree),
            _ => None,
        }
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        match &self.outcome {
            InputOutcome::Searched { pairs, .. } => pairs,
            _ => &[],
        }
    }
}

/// Aggregate of one self-play round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayRound {
    pub round: u64,
    pub seed: u64,
    pub config_digest: String,
    pub inputs: usize,
    pub searches_completed: usize,
    pub gate_rejected: usize,
    pub failed: usize,
    pub pairs: usize,
    /// Mean over completed searches of the root's `Q / N`.
    pub mean_root_utility: f64,
    pub counters: SearchCounters,
}

fn search_one(
    index: usize,
    x: &Sentence,
    cfg: &SearchConfig,
    backends: &Backends,
    opts: RoundOptions,
) -> InputResult {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, opts.round, index as u64));
    let mut result = InputResult {
        index,
        source: x.clone(),
        direction: None,
        seed: 0,
        outcome: InputOutcome::Failed(String::new()),
    };
    if let GateDecision::Reject(r) = validate_input(x, cfg) {
        result.outcome = InputOutcome::Rejected(r);
        return result;
    }
    let Some(direction) = cfg.directions_from(&x.lang).choose(&mut rng).cloned() else {
        result.outcome = InputOutcome::Rejected(RejectReason::UnsupportedLanguage(x.lang.clone()));
        return result;
    };
    result.seed = rng.gen();
    result.direction = Some(direction.clone());
    let search_cfg = SearchConfig { seed: result.seed, ..cfg.clone() };
    result.outcome = match run_search(x, &direction, &search_cfg, backends) {
        Ok(SearchOutcome::Done(tree)) => {
            let pairs = tree_to_preference(&tree, cfg.detect_penalty, backends.templates());
            InputOutcome::Searched { tree, pairs }
        }
        Ok(SearchOutcome::Rejected(GateDecision::Reject(r))) => InputOutcome::Rejected(r),
        Ok(SearchOutcome::Rejected(GateDecision::Accept)) => InputOutcome::Failed("gate".into()),
        Err(e) => {
            warn!("input {index} failed: {e}");
            InputOutcome::Failed(e.to_string())
        }
    };
    result
}

/// Searches every corpus line concurrently, then hands results to `sink` in
/// input order once all of them have finished.
pub fn run_round(
    corpus: &[Sentence],
    cfg: &SearchConfig,
    backends: &Backends,
    opts: RoundOptions,
    sink: &mut dyn RoundSink,
) -> Result<SelfPlayRound> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<InputResult> = pool.install(|| {
        corpus
            .par_chunks(WORKER_BATCH)
            .enumerate()
            .flat_map_iter(|(c, chunk)| {
                chunk
                    .iter()
                    .enumerate()
                    .map(move |(k, x)| search_one(c * WORKER_BATCH + k, x, cfg, backends, opts))
            })
            .collect()
    });

    let mut summary = SelfPlayRound {
        round: opts.round,
        seed: opts.seed,
        config_digest: cfg.digest(),
        inputs: corpus.len(),
        ..Default::default()
    };
    let mut root_sum = 0.0;
    for r in &results {
        match &r.outcome {
            InputOutcome::Searched { tree, pairs } => {
                summary.searches_completed += 1;
                summary.pairs += pairs.len();
                summary.counters.add(&tree.counters);
                root_sum += tree.root().utility().unwrap_or(0.0);
            }
            InputOutcome::Rejected(_) => summary.gate_rejected += 1,
            InputOutcome::Failed(_) => summary.failed += 1,
        }
        sink.record(r)?;
    }
    if summary.searches_completed > 0 {
        summary.mean_root_utility = root_sum / summary.searches_completed as f64;
    }
    sink.finish(&summary)?;
    info!(
        "round {}: {} searches, {} pairs, mean root utility {:.4}",
        summary.round, summary.searches_completed, summary.pairs, summary.mean_root_utility
    );
    Ok(summary)
}

/// Translate-call breakdown of one search.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceAccount {
    pub init: u64,
    pub merge: u64,
    pub mutate: u64,
    pub mean_merge_context: Option<f64>,
    pub mean_mutate_context: Option<f64>,
    pub simulation: u64,
    pub back_translation: u64,
    pub translate_total: u64,
    pub score_total: u64,
    pub detect_total: u64,
}

impl InferenceAccount {
    /// Sum of the parts; equals `translate_total` for a consistent tree.
    pub fn parts(&self) -> u64 {
        self.init + self.merge + self.mutate + self.simulation + self.back_translation
    }
}

pub fn account_inference(c: &SearchCounters) -> InferenceAccount {
    InferenceAccount {
        init: c.init_translate,
        merge: c.merge_translate,
        mutate: c.mutate_translate,
        mean_merge_context: c.mean_merge_context(),
        mean_mutate_context: c.mean_mutate_context(),
        simulation: c.simulation_translate(),
        back_translation: c.back_translate(),
        translate_total: c.translate_calls,
        score_total: c.score_calls,
        detect_total: c.detect_calls,
    }
}
