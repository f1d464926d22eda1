use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mtp::{SearchConfig, SppoSign};
use crate::preference::{PreferencePair, PreferenceRecord};

use super::{InputOutcome, InputResult, SelfPlayRound};

/// Receives a round's results in input order, then its summary.
pub trait RoundSink {
    fn record(&mut self, result: &InputResult) -> Result<()>;
    fn finish(&mut self, summary: &SelfPlayRound) -> Result<()>;
}

pub struct NullSink;

impl RoundSink for NullSink {
    fn record(&mut self, _: &InputResult) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, _: &SelfPlayRound) -> Result<()> {
        Ok(())
    }
}

#[derive(Default)]
pub struct MemorySink {
    pub results: Vec<InputResult>,
    pub summary: Option<SelfPlayRound>,
}

impl MemorySink {
    pub fn pairs(&self) -> Vec<PreferencePair> {
        self.results.iter().flat_map(|r| r.pairs().iter().cloned()).collect()
    }
}

impl RoundSink for MemorySink {
    fn record(&mut self, result: &InputResult) -> Result<()> {
        self.results.push(result.clone());
        Ok(())
    }

    fn finish(&mut self, summary: &SelfPlayRound) -> Result<()> {
        self.summary = Some(summary.clone());
        Ok(())
    }
}

#[derive(Serialize)]
struct CounterRow<'a> {
    index: usize,
    status: &'a str,
    src_lang: String,
    tgt_lang: String,
    seed: u64,
    nodes: usize,
    pairs: usize,
    translate_calls: u64,
    score_calls: u64,
    detect_calls: u64,
    init_translate: u64,
    init_back_translate: u64,
    merge_translate: u64,
    mutate_translate: u64,
    expansion_back_translate: u64,
    rollout_translate: u64,
    reconstruction_translate: u64,
    merge_context_ratio: f64,
    mutate_context_ratio: f64,
}

/// Writes `trees.jsonl`, `preferences.jsonl`, `counters.csv` and
/// `summary.json` into one directory.
pub struct DirSink {
    dir: PathBuf,
    trees: BufWriter<File>,
    prefs: BufWriter<File>,
    counters: csv::Writer<File>,
}

impl DirSink {
    pub const TREES: &'static str = "trees.jsonl";
    pub const PREFERENCES: &'static str = "preferences.jsonl";
    pub const COUNTERS: &'static str = "counters.csv";
    pub const SUMMARY: &'static str = "summary.json";

    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            trees: BufWriter::new(File::create(dir.join(Self::TREES))?),
            prefs: BufWriter::new(File::create(dir.join(Self::PREFERENCES))?),
            counters: csv::Writer::from_path(dir.join(Self::COUNTERS)).map_err(std::io::Error::from)?,
            dir,
        })
    }
}

impl RoundSink for DirSink {
    fn record(&mut self, r: &InputResult) -> Result<()> {
        let status = match &r.outcome {
            InputOutcome::Searched { .. } => "searched",
            InputOutcome::Rejected(_) => "rejected",
            InputOutcome::Failed(_) => "failed",
        };
        let default = Default::default();
        let c = r.tree().map_or(&default, |t| &t.counters);
        let (src_lang, tgt_lang) = match &r.direction {
            Some(d) => (d.src().to_string(), d.tgt().to_string()),
            None => (r.source.lang.to_string(), String::new()),
        };
        let row = CounterRow {
            index: r.index,
            status,
            src_lang,
            tgt_lang,
            seed: r.seed,
            nodes: r.tree().map_or(0, |t| t.len()),
            pairs: r.pairs().len(),
            translate_calls: c.translate_calls,
            score_calls: c.score_calls,
            detect_calls: c.detect_calls,
            init_translate: c.init_translate,
            init_back_translate: c.init_back_translate,
            merge_translate: c.merge_translate,
            mutate_translate: c.mutate_translate,
            expansion_back_translate: c.expansion_back_translate,
            rollout_translate: c.rollout_translate,
            reconstruction_translate: c.reconstruction_translate,
            merge_context_ratio: c.merge_context_ratio,
            mutate_context_ratio: c.mutate_context_ratio,
        };
        self.counters.serialize(row).map_err(std::io::Error::from)?;
        if let Some(tree) = r.tree() {
            serde_json::to_writer(&mut self.trees, &tree.to_json())?;
            self.trees.write_all(b"\n")?;
        }
        for p in r.pairs() {
            serde_json::to_writer(&mut self.prefs, &PreferenceRecord::from(p))?;
            self.prefs.write_all(b"\n")?;
        }
        Ok(())
    }

    fn finish(&mut self, summary: &SelfPlayRound) -> Result<()> {
        self.trees.flush()?;
        self.prefs.flush()?;
        self.counters.flush()?;
        let mut f = BufWriter::new(File::create(self.dir.join(Self::SUMMARY))?);
        serde_json::to_writer_pretty(&mut f, summary)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

/// Recommended external-trainer settings, written beside the pair files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHeader {
    pub learning_rate: f64,
    pub batch_pairs: usize,
    pub eta: f64,
    pub sppo_sign: SppoSign,
    pub config_digest: String,
}

impl TrainingHeader {
    pub const FILE: &'static str = "preferences.header.json";

    pub fn for_config(cfg: &SearchConfig) -> Self {
        Self {
            learning_rate: 1e-6,
            batch_pairs: 10_000,
            eta: cfg.eta,
            sppo_sign: cfg.sppo_sign,
            config_digest: cfg.digest(),
        }
    }
}
