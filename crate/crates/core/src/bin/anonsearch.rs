use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use anonsearch::anonymise::{decompose_seeded, DecomposeParams, DEFAULT_N_RELATED, DEFAULT_POOL_SIZE, DEFAULT_REMOVAL_FRACTION};
use anonsearch::attack::{attack, AttackMode, AttackParams};
use anonsearch::corpus::{query_token, read_corpus_jsonl, InvertedIndex};
use anonsearch::embed::EmbeddingStore;
use anonsearch::game::http::{router, serve, with_static_dir};
use anonsearch::game::{GameService, GameSettings, DEFAULT_MIN_RHO};
use anonsearch::harness::{default_queries, run_experiment, ExperimentConfig};
use anonsearch::rng::{seeded_rng, stream};
use anonsearch::synth::{generate, write_world, SynthConfig};

#[derive(Parser)]
#[command(name = "anonsearch", version, about = "Anonymised keyword search toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an inverted index from a JSON Lines corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompose a query into related and distractor terms.
    Decompose {
        #[arg(long)]
        query: String,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_N_RELATED)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "ANONSEARCH_EMBEDDINGS")]
        embeddings: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool_size: usize,
        #[arg(long, default_value_t = DEFAULT_REMOVAL_FRACTION)]
        removal_fraction: f64,
    },
    /// Run an experiment grid described by a JSON config.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cluster a received term list and print the attacker's guesses.
    Attack {
        /// JSON array of received terms.
        #[arg(long)]
        terms: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "ANONSEARCH_EMBEDDINGS")]
        embeddings: PathBuf,
        /// Score the guesses against this query.
        #[arg(long)]
        truth: Option<String>,
    },
    /// Query prediction game.
    Game {
        #[command(subcommand)]
        command: GameCommand,
    },
    /// Write a synthetic embedding file, corpus and experiment config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON overrides for the generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum GameCommand {
    /// Serve the game's JSON API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "ANONSEARCH_EMBEDDINGS")]
        embeddings: PathBuf,
        /// Saved index or JSON Lines corpus.
        #[arg(long)]
        index: PathBuf,
        /// One query per line; defaults to the bundled list.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Event log, replayed on start and appended to.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_RHO)]
        min_rho: f64,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool_size: usize,
        /// Directory of static client files.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Index { corpus, out } => {
            let docs = read_corpus_jsonl(&corpus)?;
            let index = InvertedIndex::build(docs)?;
            index.save(&out)?;
            log::info!(
                "indexed {} documents, {} distinct tokens -> {}",
                index.doc_count(),
                index.vocabulary_size(),
                out.display()
            );
        }
        Command::Decompose {
            query,
            sigma,
            n,
            m,
            seed,
            embeddings,
            pool_size,
            removal_fraction,
        } => {
            let query = query_token(&query)?;
            let store = EmbeddingStore::load(&embeddings, None)?;
            let params = DecomposeParams {
                n_related: n,
                m_distractors: m,
                sigma,
                pool_size,
                removal_fraction,
                seed,
            };
            let d = decompose_seeded(&store, &query, &params)?;
            let out = json!({
                "query": d.original,
                "related": d.related,
                "distractors": d.distractors,
                "order": d.transmission_order,
                "seed": seed,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Eval { config } => {
            let config = ExperimentConfig::load(&config)?;
            let output = run_experiment(&config)?;
            log::info!(
                "{} cells evaluated, {} skipped; results in {}",
                output.records.len(),
                output.skipped.len(),
                config.output_dir.display()
            );
        }
        Command::Attack {
            terms,
            k,
            seed,
            embeddings,
            truth,
        } => {
            let text = fs::read_to_string(&terms).with_context(|| format!("reading {}", terms.display()))?;
            let received: Vec<String> = serde_json::from_str(&text).context("terms file must be a JSON array of strings")?;
            let store = EmbeddingStore::load(&embeddings, None)?;
            let mut rng = seeded_rng(seed, stream::ATTACK_BASE + k as u64);
            let guess = attack(&store, &received, &AttackParams::new(k, seed), &mut rng)?;
            let mut out = json!({
                "k": k,
                "standard": guess.guesses(AttackMode::Standard),
                "conservative": guess.guesses(AttackMode::Conservative),
                "clusters": guess.clustering.clusters(),
                "coherence": guess.per_cluster_coherence.iter()
                    .map(|c| if c.is_finite() { json!(c) } else { json!(null) })
                    .collect::<Vec<_>>(),
            });
            if let Some(truth) = truth {
                let truth = query_token(&truth)?;
                out["standard_hit"] = json!(guess.judge(&truth, AttackMode::Standard).hit);
                out["conservative_hit"] = json!(guess.judge(&truth, AttackMode::Conservative).hit);
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Game {
            command:
                GameCommand::Serve {
                    port,
                    host,
                    embeddings,
                    index,
                    queries,
                    log,
                    min_rho,
                    pool_size,
                    static_dir,
                },
        } => {
            let store = EmbeddingStore::load(&embeddings, None)?;
            let index = InvertedIndex::open(&index)?;
            let pool = match queries {
                Some(path) => fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?
                    .lines()
                    .map(|l| l.trim().to_lowercase())
                    .filter(|l| !l.is_empty())
                    .collect(),
                None => default_queries(),
            };
            let pool: Vec<String> = pool
                .into_iter()
                .filter(|q| store.contains(q) && index.contains_token(q))
                .collect();
            if pool.is_empty() {
                bail!("no pool query is both in the vocabulary and the index");
            }
            let settings = GameSettings {
                min_rho,
                pool_size,
                removal_fraction: DEFAULT_REMOVAL_FRACTION,
            };
            let mut service = GameService::new(Arc::new(store), Arc::new(index), pool, settings);
            if let Some(path) = log {
                service = service.with_event_log(&path)?;
            }
            let mut app = router(Arc::new(service));
            if let Some(dir) = static_dir {
                app = with_static_dir(app, dir);
            }
            let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid host or port")?;
            tokio::runtime::Runtime::new()?.block_on(serve(app, addr))?;
        }
        Command::Synth { out, config, seed } => {
            let mut synth = match config {
                Some(path) => serde_json::from_str(&fs::read_to_string(&path)?)?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                synth.seed = seed;
            }
            let world = generate(&synth)?;
            let files = write_world(&world, &out)?;
            log::info!(
                "wrote {} words and {} documents; run `anonsearch eval --config {}`",
                world.store.len(),
                world.docs.len(),
                files.config.display()
            );
        }
    }
    Ok(())
}
