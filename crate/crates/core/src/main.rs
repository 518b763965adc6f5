//! Command-line entry points. Every subcommand reads one TOML run config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use chatea::align::{Ablation, RethinkMode};
use chatea::config::{BackendKind, RunConfig};
use chatea::eval::sweep_to_csv;
use chatea::kg::{EntityId, KnowledgeGraph};
use chatea::prompt::{self, templates, DescriptionCache, EntityCard};
use chatea::synthetic::{SyntheticConfig, SyntheticPair};
use chatea::{run, Error, Result};

#[derive(Parser)]
#[command(name = "chatea", version, about = "Entity alignment with embeddings and a chat model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the fused embeddings and write checkpoints.
    Preprocess {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the two-stage loop over the test targets.
    Align {
        #[arg(short, long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: AlignOverrides,
    },
    /// Re-run alignment with replies taken from a recorded transcript.
    Replay {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        transcript: PathBuf,
        #[command(flatten)]
        overrides: AlignOverrides,
    },
    /// Score a results file against gold pairs.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Directory for report.csv, report.json and report.txt.
        #[arg(long)]
        out: PathBuf,
        /// Rounds in the histogram; defaults to the most rounds any target used.
        #[arg(long)]
        rounds: Option<usize>,
        /// Config whose fingerprint goes into the report.
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Show cards, prompts or templates without calling a model.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
    /// Write a synthetic graph pair with known gold alignment.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        entities: usize,
        #[arg(long, default_value_t = 3)]
        facts_per_entity: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        atemporal: bool,
    },
    /// Hits@1 under embedding noise, with and without the loop.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4, 0.6, 0.8])]
        ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct AlignOverrides {
    /// Disable a component; repeatable.
    #[arg(long = "ablate", value_name = "ABLATION")]
    ablate: Vec<Ablation>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    rethink: Option<RethinkArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RethinkArg {
    Llm,
    Rule,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Subcommand)]
enum Inspect {
    /// Render an entity card.
    Card {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "1")]
        kg: Side,
        #[arg(long)]
        entity: u64,
        /// Plain key-value rendering instead of the code literal.
        #[arg(long)]
        plain: bool,
    },
    /// Render the system and reasoning prompts for a pair.
    Prompt {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        target: u64,
        #[arg(long)]
        candidate: u64,
    },
    /// List the prompt templates with their hashes.
    Templates,
}

impl AlignOverrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        cfg.align.ablations.extend(self.ablate.iter().copied());
        if let Some(w) = self.workers {
            cfg.align.workers = w;
        }
        if let Some(r) = self.rethink {
            cfg.align.rethink = match r {
                RethinkArg::Llm => RethinkMode::Llm,
                RethinkArg::Rule => RethinkMode::Rule,
            };
        }
        cfg.validate()
    }
}

fn run_align(cfg: &RunConfig) -> Result<()> {
    let out = run::align(cfg)?;
    print!("{}", out.report.to_text());
    println!("results: {}", out.results_path.display());
    println!("transcript: {}", out.transcript_path.display());
    Ok(())
}

fn card(cfg: &RunConfig, kg: &KnowledgeGraph, e: EntityId, cache: &DescriptionCache) -> Result<EntityCard> {
    let description = if cfg.align.ablated(Ablation::NoDescription) {
        String::new()
    } else {
        cache.get(kg.name(), e, &cfg.backend.model).unwrap_or_default()
    };
    EntityCard::from_kg(kg, e, &description, &cfg.align.card_options())
}

fn inspect(what: Inspect) -> Result<()> {
    let load = |path: &Path| -> Result<(RunConfig, run::Dataset, DescriptionCache)> {
        let cfg = RunConfig::load(path)?;
        let ds = run::load_dataset(&cfg)?;
        let cache = DescriptionCache::load(&cfg.description_cache_path())?;
        Ok((cfg, ds, cache))
    };
    match what {
        Inspect::Card { config, kg, entity, plain } => {
            let (cfg, ds, cache) = load(&config)?;
            let kg = match kg {
                Side::One => &ds.kg1,
                Side::Two => &ds.kg2,
            };
            println!("{}", card(&cfg, kg, EntityId(entity), &cache)?.render(!plain));
        }
        Inspect::Prompt { config, target, candidate } => {
            let (cfg, ds, cache) = load(&config)?;
            let main = card(&cfg, &ds.kg1, EntityId(target), &cache)?;
            let cand = card(&cfg, &ds.kg2, EntityId(candidate), &cache)?;
            let code = !cfg.align.ablated(Ablation::NoCode);
            let system = if code {
                prompt::render_system_prompt(prompt::default_reasoning_case())
            } else {
                prompt::render_system_prompt_plain(prompt::default_reasoning_case())
            };
            println!("=== system ===\n{system}\n=== user ===\n{}", prompt::render_reasoning_prompt(&main, &cand, code));
        }
        Inspect::Templates => {
            for t in templates::ALL {
                println!("{:<20} {}  slots: {}", t.name, t.sha256, t.slots().join(", "));
            }
            println!("digest {}", templates::templates_digest());
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { config } => {
            let cfg = RunConfig::load(&config)?;
            let manifest = run::preprocess(&cfg)?;
            for (file, hash) in &manifest.files {
                println!("{hash}  {file}");
            }
            if let Some(loss) = manifest.final_loss {
                println!("final loss {loss:.6}");
            }
        }
        Command::Align { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg)?;
            run_align(&cfg)?;
        }
        Command::Replay { config, transcript, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.backend.kind = BackendKind::Replay;
            cfg.backend.transcript = Some(transcript);
            overrides.apply(&mut cfg)?;
            run_align(&cfg)?;
        }
        Command::Eval { results, gold, out, rounds, config } => {
            let fingerprint = match config {
                Some(path) => RunConfig::load(&path)?.fingerprint(),
                None => String::new(),
            };
            let report = run::evaluate(&results, &gold, rounds, &fingerprint)?;
            report.write(&out)?;
            print!("{}", report.to_text());
        }
        Command::Inspect { what } => inspect(what)?,
        Command::Synth { out, entities, facts_per_entity, seed, atemporal } => {
            let cfg = SyntheticConfig {
                entities,
                facts_per_entity,
                seed,
                temporal: !atemporal,
                ..Default::default()
            };
            let pair = SyntheticPair::generate(&cfg)?;
            pair.write(&out)?;
            println!(
                "{} entities, {} facts per graph in {}",
                entities,
                pair.kg1.facts().len(),
                out.display()
            );
        }
        Command::Sweep { config, ratios, seeds, out } => {
            let cfg = RunConfig::load(&config)?;
            if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::InvalidArgument("noise ratios must lie in [0, 1]".into()));
            }
            let csv = sweep_to_csv(&run::sweep(&cfg, &ratios, &seeds)?);
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
