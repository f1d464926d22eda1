//! Command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{error, info};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::backends::http::{contract_fixtures, HttpBackend, HttpConfig};
use crate::backends::{default_templates, Backends};
use crate::error::{Error, Result};
use crate::gmcts::{run_search, to_dot, SearchOutcome, SearchTree, Searcher, TreeJson};
use crate::mtp::{Direction, GateDecision, LanguageTag, SearchConfig, Sentence};
use crate::preference::{serialize_tree, tree_to_preference, PreferenceRecord};
use crate::selfplay::{
    parse_corpus, run_lab, run_round, DirSink, LabPreset, RoundOptions, TrainingHeader,
};
use crate::synthlab::{LabBackend, ToyTranslator};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "transzero", version, about = "Self-play translation preference mining")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML file overriding the default search configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use the synthetic laboratory instead of an HTTP model server.
    #[arg(long, global = true)]
    pub lab: bool,
    /// TOML file overriding the default lab preset.
    #[arg(long, global = true)]
    pub lab_preset: Option<PathBuf>,
    /// Toy model JSON to serve in lab mode instead of the preset's initial model.
    #[arg(long, global = true)]
    pub lab_model: Option<PathBuf>,
    #[arg(long, global = true, env = "TRANSZERO_BACKEND_URL")]
    pub backend_url: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Expansions per search.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Rollout and initialization width.
    #[arg(long, global = true)]
    pub width: Option<usize>,
    /// Rollout depth.
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search one sentence and print the highest-utility candidate.
    Search {
        text: String,
        #[arg(long)]
        src: String,
        #[arg(long)]
        tgt: String,
        #[arg(long, default_value = "tree.json")]
        out: PathBuf,
    },
    /// Run self-play rounds over a `lang<TAB>text` corpus.
    Selfplay {
        /// Optional in lab mode, where sentences are generated per round.
        corpus: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, default_value = "selfplay-out")]
        outdir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Extract preference pairs from tree JSON or tree JSONL files.
    Extract {
        #[arg(required = true)]
        trees: Vec<PathBuf>,
        #[arg(long, default_value = "preferences.jsonl")]
        out: PathBuf,
    },
    /// Quality estimation: one simulation on a given translation.
    Score {
        src: String,
        hyp: String,
        #[arg(long)]
        src_lang: String,
        #[arg(long)]
        tgt_lang: String,
    },
    /// Summarize a tree or export it as Graphviz DOT.
    Inspect {
        tree: PathBuf,
        #[arg(long)]
        dot: bool,
        /// Collapse duplicate candidates as preference extraction does.
        #[arg(long)]
        merged: bool,
    },
    /// Write the wire-protocol contract fixtures.
    ContractFixtures {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub summary: Option<PathBuf>,
}

impl CommandOutcome {
    fn ok(summary: Option<PathBuf>) -> Self {
        Self { exit_code: EXIT_OK, summary }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::BackendUnreachable(_) | Error::Protocol(_) | Error::EmptyGeneration => EXIT_BACKEND,
        _ => EXIT_ERROR,
    }
}

fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge_toml(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses `text` as a partial TOML document laid over `base`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, text: &str) -> Result<T> {
    let bad = |e: &dyn std::fmt::Display| Error::InvalidConfig(e.to_string());
    let mut value = toml::Value::try_from(base).map_err(|e| bad(&e))?;
    let over: toml::Value = text.parse::<toml::Table>().map_err(|e| bad(&e))?.into();
    merge_toml(&mut value, over);
    value.try_into().map_err(|e| bad(&e))
}

/// Effective configuration after defaults, file and flags, plus the lab
/// preset in lab mode.
pub fn resolve_config(g: &GlobalArgs) -> Result<(SearchConfig, Option<LabPreset>)> {
    let mut preset = if g.lab {
        Some(match &g.lab_preset {
            Some(p) => overlay(&LabPreset::default(), &fs::read_to_string(p)?)?,
            None => LabPreset::default(),
        })
    } else {
        None
    };
    let base = preset.as_ref().map_or_else(SearchConfig::default, |p| p.search.clone());
    let mut cfg = match &g.config {
        Some(p) => overlay(&base, &fs::read_to_string(p)?)?,
        None => base,
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(b) = g.budget {
        cfg.node_budget = b;
    }
    if let Some(w) = g.width {
        cfg.width_b = w;
    }
    if let Some(d) = g.depth {
        cfg.sim_depth_n = d;
    }
    cfg.validate()?;
    if let Some(p) = preset.as_mut() {
        p.search = cfg.clone();
    }
    Ok((cfg, preset))
}

pub fn build_backends(g: &GlobalArgs, preset: Option<&LabPreset>) -> Result<Backends> {
    match preset {
        Some(p) => {
            let world = p.world()?;
            let model: ToyTranslator = match &g.lab_model {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
                None => p.initial_model(&world),
            };
            Ok(Backends::from_shared(Arc::new(LabBackend::new(Arc::new(world), Arc::new(model)))))
        }
        None => {
            let mut http = HttpConfig::default().with_env_override();
            if let Some(url) = &g.backend_url {
                http.base_url = url.clone();
            }
            Ok(Backends::from_shared(Arc::new(HttpBackend::new(http)?)))
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_effective_config(path: &Path, cfg: &SearchConfig) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// `dir/stem.suffix` next to `out`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn cmd_search(g: &GlobalArgs, text: &str, src: &str, tgt: &str, out: &Path) -> Result<CommandOutcome> {
    let (cfg, preset) = resolve_config(g)?;
    let backends = build_backends(g, preset.as_ref())?;
    let src = LanguageTag::new(src)?;
    let dir = Direction::new(src.clone(), LanguageTag::new(tgt)?)?;
    let x = Sentence::new(text, src)?;
    let summary_path = sibling(out, "summary.json");
    let tree = match run_search(&x, &dir, &cfg, &backends)? {
        SearchOutcome::Rejected(GateDecision::Reject(reason)) => {
            error!("input rejected: {reason}");
            let summary = json!({
                "command": "search",
                "status": "rejected",
                "reason": reason.to_string(),
                "config_digest": cfg.digest(),
                "seed": cfg.seed,
            });
            write_json(&summary_path, &summary)?;
            return Ok(CommandOutcome { exit_code: EXIT_REJECTED, summary: Some(summary_path) });
        }
        SearchOutcome::Rejected(GateDecision::Accept) => unreachable!("accepted inputs are searched"),
        SearchOutcome::Done(t) => t,
    };
    write_json(out, &tree.to_json())?;
    write_effective_config(&sibling(out, "config.toml"), &cfg)?;
    let best = tree.best_candidate().cloned();
    let summary = json!({
        "command": "search",
        "status": if best.is_some() { "done" } else { "no_candidate" },
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "tree": out,
        "nodes": tree.len(),
        "expansions": tree.expansions(),
        "best": best.as_ref().map(|b| json!({ "id": b.id, "text": b.text, "utility": b.utility() })),
        "counters": tree.counters,
    });
    write_json(&summary_path, &summary)?;
    match best {
        Some(b) => {
            println!("{}", b.text);
            Ok(CommandOutcome::ok(Some(summary_path)))
        }
        None => {
            error!("no candidate was produced; the backend failed every request");
            Ok(CommandOutcome { exit_code: EXIT_BACKEND, summary: Some(summary_path) })
        }
    }
}

pub fn cmd_selfplay(
    g: &GlobalArgs,
    corpus: Option<&Path>,
    rounds: Option<usize>,
    outdir: &Path,
    workers: Option<usize>,
) -> Result<CommandOutcome> {
    let (cfg, preset) = resolve_config(g)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let sentences = corpus.map(|p| fs::read_to_string(p).map_err(Error::from).and_then(|t| parse_corpus(&t))).transpose()?;
    let rounds = rounds.or(preset.as_ref().map(|p| p.rounds)).unwrap_or(1);
    if rounds == 0 {
        info!("zero rounds requested; nothing to do");
        return Ok(CommandOutcome::ok(None));
    }
    fs::create_dir_all(outdir)?;
    write_effective_config(&outdir.join("effective-config.toml"), &cfg)?;
    write_json(&outdir.join(TrainingHeader::FILE), &TrainingHeader::for_config(&cfg))?;
    let summary_path = outdir.join("summary.json");

    let summary = match preset {
        Some(mut p) => {
            p.rounds = rounds;
            let text = toml::to_string(&p).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            fs::write(outdir.join("lab-preset.toml"), text)?;
            let run = run_lab(&p, workers, Some(outdir), sentences.as_deref())?;
            write_json(&outdir.join("world.json"), &run.world)?;
            write_json(&outdir.join("model.json"), &run.model)?;
            json!({
                "command": "selfplay",
                "mode": "lab",
                "config_digest": cfg.digest(),
                "seed": cfg.seed,
                "rounds": run.rounds,
                "weak_accuracy_initial": run.initial_weak_accuracy(),
                "weak_accuracy_final": run.final_weak_accuracy(),
            })
        }
        None => {
            let sentences = sentences
                .ok_or_else(|| Error::InvalidConfig("a corpus file is required outside lab mode".into()))?;
            let backends = build_backends(g, None)?;
            let mut summaries = Vec::with_capacity(rounds);
            for r in 0..rounds as u64 {
                let mut sink = DirSink::create(outdir.join(format!("round-{r}")))?;
                let opts = RoundOptions { round: r, seed: cfg.seed, workers };
                summaries.push(run_round(&sentences, &cfg, &backends, opts, &mut sink)?);
            }
            json!({
                "command": "selfplay",
                "mode": "http",
                "config_digest": cfg.digest(),
                "seed": cfg.seed,
                "rounds": summaries,
            })
        }
    };
    write_json(&summary_path, &summary)?;
    Ok(CommandOutcome::ok(Some(summary_path)))
}

/// Reads one tree JSON document or a JSONL file of trees.
pub fn read_trees(path: &Path) -> Result<Vec<SearchTree>> {
    let text = fs::read_to_string(path)?;
    if let Ok(j) = serde_json::from_str::<TreeJson>(&text) {
        return Ok(vec![SearchTree::from_json(j)?]);
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| SearchTree::from_json(serde_json::from_str(l)?))
        .collect()
}

pub fn cmd_extract(g: &GlobalArgs, trees: &[PathBuf], out: &Path) -> Result<CommandOutcome> {
    let (cfg, _) = resolve_config(g)?;
    let templates = default_templates();
    let mut lines = String::new();
    let mut count = 0;
    let mut n_trees = 0;
    for path in trees {
        for tree in read_trees(path)? {
            n_trees += 1;
            for p in tree_to_preference(&tree, cfg.detect_penalty, &templates) {
                lines.push_str(&serde_json::to_string(&PreferenceRecord::from(&p))?);
                lines.push('\n');
                count += 1;
            }
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, lines)?;
    let summary_path = sibling(out, "summary.json");
    write_json(
        &summary_path,
        &json!({
            "command": "extract",
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "trees": n_trees,
            "pairs": count,
            "output": out,
        }),
    )?;
    println!("{count}");
    Ok(CommandOutcome::ok(Some(summary_path)))
}

pub fn cmd_score(g: &GlobalArgs, src: &str, hyp: &str, src_lang: &str, tgt_lang: &str) -> Result<CommandOutcome> {
    let (cfg, preset) = resolve_config(g)?;
    let backends = build_backends(g, preset.as_ref())?;
    let src_lang = LanguageTag::new(src_lang)?;
    let dir = Direction::new(src_lang.clone(), LanguageTag::new(tgt_lang)?)?;
    let x = Sentence::new(src, src_lang)?;
    let mut searcher = Searcher::new(x, dir, &cfg, &backends)?;
    let (_, report) = searcher.score_candidate(hyp)?;
    let recon = report.branches.iter().filter(|b| b.reconstruction.is_some()).count();
    let out = json!({
        "command": "score",
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "reward": report.consistency.reward,
        "literal": report.consistency.literal_mean,
        "free": report.consistency.free_mean,
        "reconstructions": recon,
        "trajectories": report.branches.len(),
        "best_reconstruction": report.consistency.best_reconstruction.text,
    });
    println!("{}", serde_json::to_string(&out)?);
    Ok(CommandOutcome::ok(None))
}

pub fn cmd_inspect(g: &GlobalArgs, path: &Path, dot: bool, merged: bool) -> Result<CommandOutcome> {
    let (cfg, _) = resolve_config(g)?;
    let trees = read_trees(path)?;
    for tree in &trees {
        if dot {
            print!("{}", to_dot(tree, merged, cfg.detect_penalty));
        } else {
            let nodes = if merged { serialize_tree(tree, cfg.detect_penalty).len() } else { tree.len() };
            let best = tree.best_candidate();
            let out = json!({
                "source": tree.source.text,
                "direction": tree.direction.to_string(),
                "seed": tree.seed,
                "config_digest": tree.config_digest,
                "nodes": nodes,
                "edges": tree.len() - 1,
                "expansions": tree.expansions(),
                "max_depth": (0..tree.len()).map(|i| tree.depth(i)).max().unwrap_or(0),
                "best": best.map(|b| json!({ "id": b.id, "text": b.text, "utility": b.utility() })),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(CommandOutcome::ok(None))
}

pub fn cmd_contract_fixtures(out: Option<&Path>) -> Result<CommandOutcome> {
    let fixtures = contract_fixtures()?;
    match out {
        Some(p) => write_json(p, &fixtures)?,
        None => println!("{}", serde_json::to_string_pretty(&fixtures)?),
    }
    Ok(CommandOutcome::ok(out.map(Path::to_path_buf)))
}

/// Runs a parsed command line; errors are logged and mapped to exit codes.
pub fn run(cli: &Cli) -> CommandOutcome {
    let g = &cli.global;
    let result = match &cli.command {
        Command::Search { text, src, tgt, out } => cmd_search(g, text, src, tgt, out),
        Command::Selfplay { corpus, rounds, outdir, workers } => {
            cmd_selfplay(g, corpus.as_deref(), *rounds, outdir, *workers)
        }
        Command::Extract { trees, out } => cmd_extract(g, trees, out),
        Command::Score { src, hyp, src_lang, tgt_lang } => cmd_score(g, src, hyp, src_lang, tgt_lang),
        Command::Inspect { tree, dot, merged } => cmd_inspect(g, tree, *dot, *merged),
        Command::ContractFixtures { out } => cmd_contract_fixtures(out.as_deref()),
    };
    result.unwrap_or_else(|e| {
        error!("{e}");
        eprintln!("error: {e}");
        CommandOutcome { exit_code: exit_code_for(&e), summary: None }
    })
}
