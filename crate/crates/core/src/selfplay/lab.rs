use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::error::Result;
use crate::mtp::{LanguageTag, LengthGate, SearchConfig, Sentence};
use crate::synthlab::{LabBackend, SyntheticWorld, ToyTranslator};

use super::sink::{DirSink, MemorySink, RoundSink};
use super::train::{train_round, TrainConfig, TrainReport};
use super::{mix_seed, run_round, InputResult, RoundOptions, SelfPlayRound};

/// Everything needed to replay a desk-scale self-play run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabPreset {
    pub num_languages: usize,
    pub vocab_size: usize,
    pub world_seed: u64,
    pub weak_src: usize,
    pub weak_tgt: usize,
    pub weak_accuracy: f64,
    pub strong_accuracy: f64,
    pub exemplar_bias: f64,
    pub sentences_per_round: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub search: SearchConfig,
}

impl Default for LabPreset {
    fn default() -> Self {
        let num_languages = 4;
        let search = SearchConfig {
            languages: (0..num_languages).map(LanguageTag::synthetic).collect(),
            length_gate: LengthGate::new(1, 1_000_000),
            ..SearchConfig::default()
        };
        Self {
            num_languages,
            vocab_size: 50,
            world_seed: 7,
            weak_src: 0,
            weak_tgt: 1,
            weak_accuracy: 0.5,
            strong_accuracy: 0.95,
            exemplar_bias: 2.0,
            sentences_per_round: 200,
            min_tokens: 3,
            max_tokens: 6,
            rounds: 5,
            learning_rate: 0.05,
            batch_size: 1,
            search,
        }
    }
}

impl LabPreset {
    pub fn world(&self) -> Result<SyntheticWorld> {
        SyntheticWorld::generate(self.num_languages, self.vocab_size, self.world_seed)
    }

    pub fn initial_model(&self, world: &SyntheticWorld) -> ToyTranslator {
        ToyTranslator::with_accuracy(
            world,
            |a, b| {
                if (a, b) == (self.weak_src, self.weak_tgt) {
                    self.weak_accuracy
                } else {
                    self.strong_accuracy
                }
            },
            self.exemplar_bias,
        )
    }

    /// Fresh monolingual sentences in the weak direction's source language.
    pub fn corpus(&self, world: &SyntheticWorld, round: u64) -> Vec<Sentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.search.seed, round, u64::MAX));
        (0..self.sentences_per_round)
            .map(|_| {
                let len = rng.gen_range(self.min_tokens..=self.max_tokens);
                world.random_sentence(self.weak_src, len, &mut rng)
            })
            .collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig::from_search(&self.search, self.learning_rate, self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabRoundReport {
    pub round: u64,
    pub weak_accuracy_before: f64,
    pub weak_accuracy_after: f64,
    pub mean_root_utility: f64,
    pub pairs: usize,
    pub summary: SelfPlayRound,
    pub train: TrainReport,
}

pub struct LabRun {
    pub world: SyntheticWorld,
    pub initial_model: ToyTranslator,
    pub model: ToyTranslator,
    pub rounds: Vec<LabRoundReport>,
}

impl LabRun {
    pub fn initial_weak_accuracy(&self) -> f64 {
        self.rounds.first().map_or(0.0, |r| r.weak_accuracy_before)
    }

    pub fn final_weak_accuracy(&self) -> f64 {
        self.rounds.last().map_or(self.initial_weak_accuracy(), |r| r.weak_accuracy_after)
    }
}

struct Tee<'a> {
    mem: MemorySink,
    dir: Option<&'a mut DirSink>,
}

impl RoundSink for Tee<'_> {
    fn record(&mut self, r: &InputResult) -> Result<()> {
        if let Some(d) = self.dir.as_deref_mut() {
            d.record(r)?;
        }
        self.mem.record(r)
    }

    fn finish(&mut self, s: &SelfPlayRound) -> Result<()> {
        if let Some(d) = self.dir.as_deref_mut() {
            d.finish(s)?;
        }
        self.mem.finish(s)
    }
}

/// Alternates self-play rounds and toy-model training. With `outdir`, each
/// round's files go to `outdir/round-<k>/`. A fixed `corpus` replaces the
/// generated per-round sentences.
pub fn run_lab(
    preset: &LabPreset,
    workers: usize,
    outdir: Option<&Path>,
    corpus: Option<&[Sentence]>,
) -> Result<LabRun> {
    preset.search.validate()?;
    let world = Arc::new(preset.world()?);
    let initial_model = preset.initial_model(&world);
    let mut model = initial_model.clone();
    let train_cfg = preset.train_config();
    let (a, b) = (preset.weak_src, preset.weak_tgt);
    let mut rounds = Vec::with_capacity(preset.rounds);
    for r in 0..preset.rounds as u64 {
        let generated;
        let corpus = match corpus {
            Some(c) => c,
            None => {
                generated = preset.corpus(&world, r);
                &generated[..]
            }
        };
        let backends = Backends::from_shared(Arc::new(LabBackend::new(world.clone(), Arc::new(model.clone()))));
        let mut dir = match outdir {
            Some(d) => Some(DirSink::create(d.join(format!("round-{r}")))?),
            None => None,
        };
        let mut tee = Tee { mem: MemorySink::default(), dir: dir.as_mut() };
        let opts = RoundOptions { round: r, seed: preset.search.seed, workers };
        let summary = run_round(corpus, &preset.search, &backends, opts, &mut tee)?;
        let pairs = tee.mem.pairs();
        let before = model.token_accuracy(&world, a, b);
        let (next, train) = train_round(&pairs, &world, &model, &train_cfg)?;
        model = next;
        let after = model.token_accuracy(&world, a, b);
        log::info!("lab round {r}: weak accuracy {before:.4} -> {after:.4}, {} pairs", pairs.len());
        rounds.push(LabRoundReport {
            round: r,
            weak_accuracy_before: before,
            weak_accuracy_after: after,
            mean_root_utility: summary.mean_root_utility,
            pairs: pairs.len(),
            summary,
            train,
        });
    }
    Ok(LabRun { world: Arc::unwrap_or_clone(world), initial_model, model, rounds })
}
