//! The two-stage query prediction game.
//!
//! A round shows the shuffled related and distractor terms of a hidden
//! query. A wrong first guess removes the distractors and allows one more
//! guess on the related terms alone. Sessions live in memory; every
//! state-changing request is appended to a JSON Lines event log from which
//! the service can be rebuilt.

pub mod http;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymise::{decompose, DecomposeParams, DecomposedQuery, DEFAULT_POOL_SIZE, DEFAULT_REMOVAL_FRACTION};
use crate::corpus::InvertedIndex;
use crate::embed::EmbeddingStore;
use crate::harness::fnv1a64;
use crate::reconstruct::{anonymity, reconstruct_results, reconstructability};
use crate::rng::{seeded_rng, stream, SeededRng};

/// Rounds are only served when the hidden query's result set can be
/// rebuilt with reconstructability above this value.
pub const DEFAULT_MIN_RHO: f64 = 0.3;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{session}` has no round {round}")]
    UnknownRound { session: String, round: usize },
    #[error("round {0} is already finished")]
    RoundFinished(usize),
    #[error("{0}")]
    Validation(String),
    #[error("no query in the pool reaches reconstructability above {0}")]
    NoEligibleQueries(f64),
    #[error(transparent)]
    Core(#[from] crate::Error),
    #[error("event log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    #[serde(rename = "STAGE1")]
    Stage1,
    #[serde(rename = "STAGE2")]
    Stage2,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Pending,
    #[serde(rename = "WIN_STAGE1")]
    WinStage1,
    #[serde(rename = "WIN_STAGE2")]
    WinStage2,
    Loss,
}

#[derive(Debug, Clone)]
pub struct GameRound {
    pub hidden_query: String,
    pub decomposition: DecomposedQuery,
    pub alpha: f64,
    pub rho: f64,
    pub stage: Stage,
    pub outcome: Outcome,
}

/// Parameters a client supplies when opening a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub rounds: usize,
    pub sigma: f64,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GameSession {
    pub session_id: String,
    pub rounds: Vec<GameRound>,
    pub wins: usize,
    pub completed_rounds: usize,
    view_rng: SeededRng,
}

/// What a player sees of a round. Never contains the hidden query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub round: usize,
    pub stage: Stage,
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessResult {
    pub outcome: Outcome,
    pub next_stage: Stage,
    /// Revealed only once the round is finished.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsPoint {
    pub alpha: f64,
    pub outcome: Outcome,
}

impl StatsPoint {
    /// 1 for a win at either stage, 0 for a loss.
    pub fn won(&self) -> f64 {
        match self.outcome {
            Outcome::WinStage1 | Outcome::WinStage2 => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundAudit {
    pub query: String,
    pub related: Vec<String>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    /// `None` until a round is finished.
    pub stage1_rate: Option<f64>,
    pub overall_rate: Option<f64>,
    pub completed_rounds: usize,
    pub total_rounds: usize,
    pub stage1_wins: usize,
    pub stage2_wins: usize,
    pub losses: usize,
    pub points: Vec<StatsPoint>,
}

fn normalize_guess(raw: &str) -> Result<String, GameError> {
    let guess = raw.trim().to_lowercase();
    if guess.is_empty() {
        return Err(GameError::Validation("guess must not be empty".into()));
    }
    Ok(guess)
}

impl GameSession {
    fn round_mut(&mut self, round: usize) -> Result<&mut GameRound, GameError> {
        let session = self.session_id.clone();
        self.rounds
            .get_mut(round)
            .ok_or(GameError::UnknownRound { session, round })
    }

    pub fn view(&mut self, round: usize) -> Result<RoundView, GameError> {
        let r = self.round_mut(round)?;
        let (stage, mut terms) = match r.stage {
            Stage::Done => return Err(GameError::RoundFinished(round)),
            Stage::Stage1 => (Stage::Stage1, r.decomposition.transmission_order.clone()),
            Stage::Stage2 => (Stage::Stage2, r.decomposition.related.clone()),
        };
        if stage == Stage::Stage2 {
            terms.shuffle(&mut self.view_rng);
        }
        Ok(RoundView { round, stage, terms })
    }

    pub fn guess(&mut self, round: usize, raw: &str) -> Result<GuessResult, GameError> {
        let guess = normalize_guess(raw)?;
        let r = self.round_mut(round)?;
        let correct = guess == r.hidden_query;
        let (stage, outcome) = match (r.stage, correct) {
            (Stage::Done, _) => return Err(GameError::RoundFinished(round)),
            (Stage::Stage1, true) => (Stage::Done, Outcome::WinStage1),
            (Stage::Stage1, false) => (Stage::Stage2, Outcome::Pending),
            (Stage::Stage2, true) => (Stage::Done, Outcome::WinStage2),
            (Stage::Stage2, false) => (Stage::Done, Outcome::Loss),
        };
        r.stage = stage;
        r.outcome = outcome;
        let query = (stage == Stage::Done).then(|| r.hidden_query.clone());
        if stage == Stage::Done {
            self.completed_rounds += 1;
            if outcome != Outcome::Loss {
                self.wins += 1;
            }
        }
        Ok(GuessResult {
            outcome,
            next_stage: stage,
            query,
        })
    }

    pub fn stats(&self) -> SessionStats {
        let count = |o: Outcome| self.rounds.iter().filter(|r| r.outcome == o).count();
        let (stage1_wins, stage2_wins, losses) =
            (count(Outcome::WinStage1), count(Outcome::WinStage2), count(Outcome::Loss));
        let completed = self.completed_rounds;
        let rate = |wins: usize| (completed > 0).then(|| wins as f64 / completed as f64);
        SessionStats {
            stage1_rate: rate(stage1_wins),
            overall_rate: rate(stage1_wins + stage2_wins),
            completed_rounds: completed,
            total_rounds: self.rounds.len(),
            stage1_wins,
            stage2_wins,
            losses,
            points: self
                .rounds
                .iter()
                .filter(|r| r.stage == Stage::Done)
                .map(|r| StatsPoint {
                    alpha: r.alpha,
                    outcome: r.outcome,
                })
                .collect(),
        }
    }
}

/// Builds a session's rounds: pool queries are visited in a seeded random
/// order without replacement, decomposed, and kept when their l=1
/// reconstructability exceeds `min_rho`. If the pool runs out, accepted
/// rounds are reused in order.
#[allow(clippy::too_many_arguments)]
pub fn create_session(
    store: &EmbeddingStore,
    index: &InvertedIndex,
    session_id: String,
    round_count: usize,
    params: &DecomposeParams,
    query_pool: &[String],
    seed: u64,
    min_rho: f64,
) -> Result<GameSession, GameError> {
    if round_count == 0 {
        return Err(GameError::Validation("a session needs at least one round".into()));
    }
    if query_pool.is_empty() {
        return Err(GameError::Validation("query pool is empty".into()));
    }
    params.validate()?;

    let mut rng = seeded_rng(seed, stream::GAME);
    let mut order: Vec<&String> = query_pool.iter().collect();
    order.shuffle(&mut rng);

    let mut rounds: Vec<GameRound> = Vec::new();
    for query in order {
        if rounds.len() == round_count {
            break;
        }
        let round_params = DecomposeParams {
            seed: rng.random(),
            ..params.clone()
        };
        let mut round_rng = seeded_rng(round_params.seed, stream::DECOMPOSE);
        let decomposition = match decompose(store, query, &round_params, &mut round_rng) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("skipping pool query {query}: {e}");
                continue;
            }
        };
        let reconstructed = reconstruct_results(index, &decomposition.related, 1)?;
        let Some(rho) = reconstructability(index, query, &reconstructed) else {
            continue;
        };
        if rho <= min_rho {
            continue;
        }
        let alpha = anonymity(store, query, &decomposition.transmission_order)?;
        rounds.push(GameRound {
            hidden_query: query.clone(),
            decomposition,
            alpha,
            rho,
            stage: Stage::Stage1,
            outcome: Outcome::Pending,
        });
    }
    if rounds.is_empty() {
        return Err(GameError::NoEligibleQueries(min_rho));
    }
    let distinct = rounds.len();
    for i in 0..round_count.saturating_sub(distinct) {
        rounds.push(rounds[i % distinct].clone());
    }

    Ok(GameSession {
        session_id,
        rounds,
        wins: 0,
        completed_rounds: 0,
        view_rng: seeded_rng(seed, stream::GAME + 1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSettings {
    pub min_rho: f64,
    pub pool_size: usize,
    pub removal_fraction: f64,
}

impl Default for GameSettings {
    fn default() -> Self {
        GameSettings {
            min_rho: DEFAULT_MIN_RHO,
            pool_size: DEFAULT_POOL_SIZE,
            removal_fraction: DEFAULT_REMOVAL_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    SessionCreated {
        session_id: String,
        request: SessionRequest,
    },
    Guess {
        session_id: String,
        round: usize,
        guess: String,
    },
}

/// Shared game state behind the HTTP API.
pub struct GameService {
    store: Arc<EmbeddingStore>,
    index: Arc<InvertedIndex>,
    query_pool: Vec<String>,
    settings: GameSettings,
    sessions: RwLock<HashMap<String, Arc<Mutex<GameSession>>>>,
    log: Option<Mutex<File>>,
    counter: AtomicU64,
}

impl GameService {
    pub fn new(
        store: Arc<EmbeddingStore>,
        index: Arc<InvertedIndex>,
        query_pool: Vec<String>,
        settings: GameSettings,
    ) -> Self {
        GameService {
            store,
            index,
            query_pool,
            settings,
            sessions: RwLock::new(HashMap::new()),
            log: None,
            counter: AtomicU64::new(0),
        }
    }

    /// Replays `path` if it exists, then appends new events to it.
    pub fn with_event_log(mut self, path: &Path) -> Result<Self, GameError> {
        if path.exists() {
            let file = File::open(path).map_err(|e| GameError::Log(e.to_string()))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| GameError::Log(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line)
                    .map_err(|e| GameError::Log(format!("line {}: {e}", i + 1)))?;
                self.apply(event)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GameError::Log(e.to_string()))?;
        self.log = Some(Mutex::new(file));
        Ok(self)
    }

    fn apply(&self, event: Event) -> Result<(), GameError> {
        match event {
            Event::SessionCreated { session_id, request } => {
                self.counter.fetch_add(1, Ordering::SeqCst);
                let session = self.build_session(session_id.clone(), &request)?;
                self.sessions
                    .write()
                    .unwrap()
                    .insert(session_id, Arc::new(Mutex::new(session)));
            }
            Event::Guess {
                session_id,
                round,
                guess,
            } => {
                self.session(&session_id)?.lock().unwrap().guess(round, &guess)?;
            }
        }
        Ok(())
    }

    fn append(&self, event: &Event) -> Result<(), GameError> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(event).map_err(|e| GameError::Log(e.to_string()))?;
            line.push('\n');
            let mut file = log.lock().unwrap();
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| GameError::Log(e.to_string()))?;
        }
        Ok(())
    }

    fn build_session(&self, session_id: String, request: &SessionRequest) -> Result<GameSession, GameError> {
        let params = DecomposeParams {
            n_related: request.n,
            m_distractors: request.m,
            sigma: request.sigma,
            pool_size: self.settings.pool_size.max(request.m),
            removal_fraction: self.settings.removal_fraction,
            seed: request.seed,
        };
        create_session(
            &self.store,
            &self.index,
            session_id,
            request.rounds,
            &params,
            &self.query_pool,
            request.seed,
            self.settings.min_rho,
        )
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<GameSession>>, GameError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| GameError::UnknownSession(id.to_string()))
    }

    pub fn create(&self, request: SessionRequest) -> Result<String, GameError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let session_id = format!("{:016x}", fnv1a64(format!("{n}|{}", request.seed).as_bytes()));
        let session = self.build_session(session_id.clone(), &request)?;
        self.append(&Event::SessionCreated {
            session_id: session_id.clone(),
            request,
        })?;
        self.sessions
            .write()
            .unwrap()
            .insert(session_id.clone(), Arc::new(Mutex::new(session)));
        Ok(session_id)
    }

    pub fn round(&self, session_id: &str, round: usize) -> Result<RoundView, GameError> {
        self.session(session_id)?.lock().unwrap().view(round)
    }

    pub fn guess(&self, session_id: &str, round: usize, guess: &str) -> Result<GuessResult, GameError> {
        let session = self.session(session_id)?;
        let mut session = session.lock().unwrap();
        let result = session.guess(round, guess)?;
        self.append(&Event::Guess {
            session_id: session_id.to_string(),
            round,
            guess: guess.to_string(),
        })?;
        Ok(result)
    }

    pub fn stats(&self, session_id: &str) -> Result<SessionStats, GameError> {
        Ok(self.session(session_id)?.lock().unwrap().stats())
    }

    /// Hidden query, related terms and ρ of every round, for offline checks.
    pub fn audit(&self, session_id: &str) -> Result<Vec<RoundAudit>, GameError> {
        let session = self.session(session_id)?;
        let session = session.lock().unwrap();
        Ok(session
            .rounds
            .iter()
            .map(|r| RoundAudit {
                query: r.hidden_query.clone(),
                related: r.decomposition.related.clone(),
                rho: r.rho,
            })
            .collect())
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }
}
