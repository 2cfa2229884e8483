//! Seeded experiment grids over queries × σ × m × l, with attacks for every
//! k, written out as CSV.
//!
//! Each grid cell derives its own seed from the master seed and the cell
//! coordinates, so adding or removing cells never changes any other cell.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anonymise::{decompose_seeded, DecomposeParams, DecomposedQuery, DEFAULT_POOL_SIZE, DEFAULT_REMOVAL_FRACTION};
use crate::attack::{attack, AttackMode, AttackOutcome, AttackParams};
use crate::corpus::InvertedIndex;
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::plot;
use crate::reconstruct::{anonymity, reconstruct_results, reconstructability};
use crate::rng::{seeded_rng, stream};
use crate::theory::{fit_relationship, TheoryFit};

/// The query list shipped with the crate, one token per line.
pub const DEFAULT_QUERIES: &str = include_str!("../data/queries50.txt");

const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Shortest round-trip decimal, with `.0` appended to integral values.
pub fn format_real(x: f64) -> String {
    let s = x.to_string();
    if x.is_finite() && !s.contains('.') {
        format!("{s}.0")
    } else {
        s
    }
}

/// `master_seed XOR FNV1a64("query|sigma|m|n|l")`.
pub fn cell_seed(master_seed: u64, query: &str, sigma: f64, m: usize, n: usize, l: usize) -> u64 {
    let key = format!("{query}|{}|{m}|{n}|{l}", format_real(sigma));
    master_seed ^ fnv1a64(key.as_bytes())
}

pub fn default_queries() -> Vec<String> {
    DEFAULT_QUERIES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn default_sigmas() -> Vec<f64> {
    vec![0.0, 0.6, 1.0, 1.4, 1.8]
}
fn default_distractor_counts() -> Vec<usize> {
    vec![0, 20, 40, 60, 120]
}
fn default_n_related() -> usize {
    10
}
fn default_l_values() -> Vec<usize> {
    vec![1]
}
fn default_k_values() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}
fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}
fn default_removal_fraction() -> f64 {
    DEFAULT_REMOVAL_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub embedding_path: PathBuf,
    /// A persisted index or a JSON Lines corpus.
    pub corpus_path: PathBuf,
    #[serde(default = "default_queries")]
    pub queries: Vec<String>,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_distractor_counts")]
    pub distractor_counts: Vec<usize>,
    #[serde(default = "default_n_related")]
    pub n_related: usize,
    #[serde(default = "default_l_values")]
    pub l_values: Vec<usize>,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_removal_fraction")]
    pub removal_fraction: f64,
    /// Vectors used by the attacker; defaults to the defender's store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker_embedding_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(embedding_path: impl Into<PathBuf>, corpus_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            embedding_path: embedding_path.into(),
            corpus_path: corpus_path.into(),
            queries: default_queries(),
            sigmas: default_sigmas(),
            distractor_counts: default_distractor_counts(),
            n_related: default_n_related(),
            l_values: default_l_values(),
            k_values: default_k_values(),
            pool_size: default_pool_size(),
            master_seed: 0,
            output_dir: output_dir.into(),
            removal_fraction: default_removal_fraction(),
            attacker_embedding_path: None,
        }
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.embedding_path);
        resolve(&mut config.corpus_path);
        resolve(&mut config.output_dir);
        if let Some(p) = config.attacker_embedding_path.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(Error::InvalidArgument(format!("config field `{what}` is empty")));
        if self.queries.is_empty() {
            return empty("queries");
        }
        if self.sigmas.is_empty() {
            return empty("sigmas");
        }
        if self.distractor_counts.is_empty() {
            return empty("distractor_counts");
        }
        if self.l_values.is_empty() {
            return empty("l_values");
        }
        if self.k_values.is_empty() {
            return empty("k_values");
        }
        if self.k_values.contains(&0) || self.l_values.contains(&0) {
            return Err(Error::InvalidArgument("k and l values must be positive".into()));
        }
        Ok(())
    }
}

/// One attack with a given k; both modes share the clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct KAttack {
    pub k: usize,
    pub standard: AttackOutcome,
    pub conservative: AttackOutcome,
    pub objective_trace: Vec<f64>,
}

impl KAttack {
    pub fn outcome(&self, mode: AttackMode) -> &AttackOutcome {
        match mode {
            AttackMode::Standard => &self.standard,
            AttackMode::Conservative => &self.conservative,
        }
    }
}

/// One grid cell: a decomposition, its metrics and the attacks on it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub query: String,
    pub sigma: f64,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub cell_seed: u64,
    pub alpha: f64,
    pub rho: Option<f64>,
    pub ground_truth_size: usize,
    pub reconstructed_size: usize,
    pub related_norm_mean: f64,
    pub related_norm_sq_mean: f64,
    pub decomposition: DecomposedQuery,
    pub attacks: Vec<KAttack>,
}

impl EvalRecord {
    /// `ln ρ`, defined only for ρ > 0.
    pub fn log_rho(&self) -> Option<f64> {
        self.rho.filter(|&r| r > 0.0).map(f64::ln)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedCell {
    pub query: String,
    pub sigma: String,
    pub m: usize,
    pub l: usize,
    pub reason: String,
}

/// Least-squares fit for one (σ, m, l) group.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub sigma: f64,
    pub m: usize,
    pub l: usize,
    pub fit: Option<TheoryFit>,
    pub n_points: usize,
    pub dropped_zero_rho: usize,
    pub norm_cv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitRateRow {
    pub sigma: f64,
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub mode: AttackMode,
    pub hits: usize,
    pub total: usize,
}

impl HitRateRow {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<EvalRecord>,
    pub skipped: Vec<SkippedCell>,
    pub fits: Vec<FitRow>,
    pub hit_rates: Vec<HitRateRow>,
}

impl RunOutput {
    pub fn hit_rate(&self, sigma: f64, m: usize, l: usize, k: usize, mode: AttackMode) -> Option<f64> {
        self.hit_rates
            .iter()
            .find(|r| r.sigma == sigma && r.m == m && r.l == l && r.k == k && r.mode == mode)
            .map(HitRateRow::rate)
    }

    pub fn fit(&self, sigma: f64, m: usize, l: usize) -> Option<&FitRow> {
        self.fits.iter().find(|r| r.sigma == sigma && r.m == m && r.l == l)
    }
}

/// Loaded inputs for a grid run.
pub struct Workspace {
    pub store: EmbeddingStore,
    pub attacker_store: Option<EmbeddingStore>,
    pub index: InvertedIndex,
}

impl Workspace {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let store = EmbeddingStore::load(&config.embedding_path, None)?;
        let attacker_store = config
            .attacker_embedding_path
            .as_ref()
            .map(|p| EmbeddingStore::load(p, None))
            .transpose()?;
        let index = InvertedIndex::open(&config.corpus_path)?;
        Ok(Workspace {
            store,
            attacker_store,
            index,
        })
    }

    fn attacker(&self) -> &EmbeddingStore {
        self.attacker_store.as_ref().unwrap_or(&self.store)
    }
}

struct Cell<'a> {
    query: &'a str,
    sigma: f64,
    m: usize,
    l: usize,
}

/// Loads the inputs named by `config`, runs the grid and writes
/// `records.csv`, `attacks.csv`, `fits.csv`, `hitrates.csv`, `skipped.csv`
/// and per-panel plot data under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let workspace = Workspace::load(config)?;
    let output = run_grid(config, &workspace)?;
    write_outputs(config, &output)?;
    Ok(output)
}

/// Runs the grid on already-loaded inputs without touching the filesystem.
pub fn run_grid(config: &ExperimentConfig, workspace: &Workspace) -> Result<RunOutput> {
    config.validate()?;
    let mut skipped = Vec::new();
    let mut cells = Vec::new();
    let queries: Vec<String> = config.queries.iter().map(|q| q.trim().to_lowercase()).collect();
    for query in &queries {
        let reason = if !workspace.store.contains(query) {
            Some("query not in embedding vocabulary")
        } else if !workspace.index.contains_token(query) {
            Some("query not in index")
        } else {
            None
        };
        for &sigma in &config.sigmas {
            for &m in &config.distractor_counts {
                for &l in &config.l_values {
                    match reason {
                        Some(r) => skipped.push(SkippedCell {
                            query: query.clone(),
                            sigma: format_real(sigma),
                            m,
                            l,
                            reason: r.to_string(),
                        }),
                        None => cells.push(Cell { query, sigma, m, l }),
                    }
                }
            }
        }
    }
    info!("running {} cells ({} skipped up front)", cells.len(), skipped.len());

    let results: Vec<(usize, Result<EvalRecord>)> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| (i, run_cell(config, workspace, cell)))
        .collect();

    let mut records = Vec::with_capacity(results.len());
    for (i, result) in results {
        match result {
            Ok(record) => records.push(record),
            Err(e) => {
                let cell = &cells[i];
                warn!("cell {} σ={} m={} l={} failed: {e}", cell.query, cell.sigma, cell.m, cell.l);
                skipped.push(SkippedCell {
                    query: cell.query.to_string(),
                    sigma: format_real(cell.sigma),
                    m: cell.m,
                    l: cell.l,
                    reason: e.to_string(),
                });
            }
        }
    }

    let fits = compute_fits(config, &records);
    let hit_rates = compute_hit_rates(config, &records);
    Ok(RunOutput {
        records,
        skipped,
        fits,
        hit_rates,
    })
}

fn run_cell(config: &ExperimentConfig, workspace: &Workspace, cell: &Cell) -> Result<EvalRecord> {
    let n = config.n_related;
    if cell.l > n {
        return Err(Error::InvalidArgument(format!("l={} exceeds n={n}", cell.l)));
    }
    let seed = cell_seed(config.master_seed, cell.query, cell.sigma, cell.m, n, cell.l);
    let params = DecomposeParams {
        n_related: n,
        m_distractors: cell.m,
        sigma: cell.sigma,
        pool_size: config.pool_size,
        removal_fraction: config.removal_fraction,
        seed,
    };
    let store = &workspace.store;
    let decomposition = decompose_seeded(store, cell.query, &params)?;
    let alpha = anonymity(store, cell.query, &decomposition.transmission_order)?;
    let reconstructed = reconstruct_results(&workspace.index, &decomposition.related, cell.l)?;
    let rho = reconstructability(&workspace.index, cell.query, &reconstructed);

    let norms: Vec<f64> = decomposition
        .related
        .iter()
        .map(|t| store.norm(t).unwrap_or_default())
        .collect();
    let related_norm_mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let related_norm_sq_mean = norms.iter().map(|x| x * x).sum::<f64>() / norms.len() as f64;

    let received = &decomposition.transmission_order;
    let mut attacks = Vec::new();
    for &k in &config.k_values {
        if k > received.len() {
            continue;
        }
        let attack_params = AttackParams::new(k, seed);
        let mut rng = seeded_rng(seed, stream::ATTACK_BASE + k as u64);
        let guess = attack(workspace.attacker(), received, &attack_params, &mut rng)?;
        attacks.push(KAttack {
            k,
            standard: guess.judge(cell.query, AttackMode::Standard),
            conservative: guess.judge(cell.query, AttackMode::Conservative),
            objective_trace: guess.clustering.objective_trace,
        });
    }

    Ok(EvalRecord {
        query: cell.query.to_string(),
        sigma: cell.sigma,
        n,
        m: cell.m,
        l: cell.l,
        cell_seed: seed,
        alpha,
        rho,
        ground_truth_size: workspace.index.postings(cell.query).len(),
        reconstructed_size: reconstructed.len(),
        related_norm_mean,
        related_norm_sq_mean,
        decomposition,
        attacks,
    })
}

/// Fits and norm statistics for one group of records.
pub fn fit_group<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> (Option<TheoryFit>, usize, usize, Option<f64>) {
    let mut points = Vec::new();
    let mut dropped = 0;
    let (mut norm_sum, mut norm_sq_sum, mut count) = (0.0, 0.0, 0usize);
    for r in records {
        norm_sum += r.related_norm_mean;
        norm_sq_sum += r.related_norm_sq_mean;
        count += 1;
        match r.rho {
            Some(rho) if rho > 0.0 => points.push((r.alpha, rho.ln())),
            Some(_) => dropped += 1,
            None => {}
        }
    }
    let norm_cv = norm_cv_from_moments(norm_sum, norm_sq_sum, count);
    let fit = fit_relationship(&points).ok();
    (fit, points.len(), dropped, norm_cv)
}

/// Coefficient of variation from summed per-record first and second moments.
pub fn norm_cv_from_moments(sum: f64, sq_sum: f64, count: usize) -> Option<f64> {
    if count == 0 {
        return None;
    }
    let mean = sum / count as f64;
    if mean == 0.0 {
        return None;
    }
    let var = (sq_sum / count as f64 - mean * mean).max(0.0);
    Some(var.sqrt() / mean)
}

fn compute_fits(config: &ExperimentConfig, records: &[EvalRecord]) -> Vec<FitRow> {
    let mut rows = Vec::new();
    for &sigma in &config.sigmas {
        for &m in &config.distractor_counts {
            for &l in &config.l_values {
                let group = records.iter().filter(|r| r.sigma == sigma && r.m == m && r.l == l);
                let (fit, n_points, dropped_zero_rho, norm_cv) = fit_group(group);
                rows.push(FitRow {
                    sigma,
                    m,
                    l,
                    fit,
                    n_points,
                    dropped_zero_rho,
                    norm_cv,
                });
            }
        }
    }
    rows
}

fn compute_hit_rates(config: &ExperimentConfig, records: &[EvalRecord]) -> Vec<HitRateRow> {
    let mut rows = Vec::new();
    for &sigma in &config.sigmas {
        for &m in &config.distractor_counts {
            for &l in &config.l_values {
                for &k in &config.k_values {
                    for mode in [AttackMode::Standard, AttackMode::Conservative] {
                        let outcomes: Vec<&AttackOutcome> = records
                            .iter()
                            .filter(|r| r.sigma == sigma && r.m == m && r.l == l)
                            .flat_map(|r| r.attacks.iter().filter(|a| a.k == k))
                            .map(|a| a.outcome(mode))
                            .collect();
                        if outcomes.is_empty() {
                            continue;
                        }
                        rows.push(HitRateRow {
                            sigma,
                            m,
                            l,
                            k,
                            mode,
                            hits: outcomes.iter().filter(|o| o.hit).count(),
                            total: outcomes.len(),
                        });
                    }
                }
            }
        }
    }
    rows
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from(
        "query,sigma,n,m,l,cell_seed,alpha,rho,log_rho,ground_truth_size,reconstructed_size,norm_mean,norm_sq_mean,related,distractors\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.query,
            format_real(r.sigma),
            r.n,
            r.m,
            r.l,
            r.cell_seed,
            r.alpha,
            opt(r.rho),
            opt(r.log_rho()),
            r.ground_truth_size,
            r.reconstructed_size,
            r.related_norm_mean,
            r.related_norm_sq_mean,
            r.decomposition.related.join(" "),
            r.decomposition.distractors.join(" "),
        );
    }
    out
}

pub fn attacks_csv(records: &[EvalRecord], k_max: usize) -> String {
    let mut out = String::from("query,sigma,n,m,l,k,mode,hit");
    for i in 1..=k_max {
        let _ = write!(out, ",guess{i}");
    }
    out.push_str(",coherence_max\n");
    for r in records {
        for a in &r.attacks {
            for mode in [AttackMode::Standard, AttackMode::Conservative] {
                let o = a.outcome(mode);
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.query,
                    format_real(r.sigma),
                    r.n,
                    r.m,
                    r.l,
                    a.k,
                    mode.as_str(),
                    u8::from(o.hit)
                );
                for i in 0..k_max {
                    out.push(',');
                    if let Some(g) = o.guesses.get(i) {
                        out.push_str(g);
                    }
                }
                let _ = writeln!(out, ",{}", o.chosen_cluster_coherence);
            }
        }
    }
    out
}

pub fn fits_csv(rows: &[FitRow]) -> String {
    let mut out = String::from("sigma,m,l,slope,intercept,pearson_r,n_points,dropped_zero_rho,norm_cv\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            format_real(row.sigma),
            row.m,
            row.l,
            opt(row.fit.map(|f| f.slope)),
            opt(row.fit.map(|f| f.intercept)),
            opt(row.fit.map(|f| f.pearson_r)),
            row.n_points,
            row.dropped_zero_rho,
            opt(row.norm_cv),
        );
    }
    out
}

pub fn hit_rates_csv(rows: &[HitRateRow]) -> String {
    let mut out = String::from("sigma,m,l,k,mode,hits,total,hit_rate\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            format_real(row.sigma),
            row.m,
            row.l,
            row.k,
            row.mode.as_str(),
            row.hits,
            row.total,
            row.rate()
        );
    }
    out
}

pub fn skipped_csv(rows: &[SkippedCell]) -> String {
    let mut out = String::from("query,sigma,m,l,reason\n");
    for s in rows {
        let reason = s.reason.replace(['"', '\n'], "'");
        let _ = writeln!(out, "{},{},{},{},\"{}\"", s.query, s.sigma, s.m, s.l, reason);
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_outputs(config: &ExperimentConfig, output: &RunOutput) -> Result<()> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k_max = config.k_values.iter().copied().max().unwrap_or(1);
    write_file(&dir.join("records.csv"), &records_csv(&output.records))?;
    write_file(&dir.join("attacks.csv"), &attacks_csv(&output.records, k_max))?;
    write_file(&dir.join("fits.csv"), &fits_csv(&output.fits))?;
    write_file(&dir.join("hitrates.csv"), &hit_rates_csv(&output.hit_rates))?;
    write_file(&dir.join("skipped.csv"), &skipped_csv(&output.skipped))?;
    plot::emit_plot_data(&output.records, &output.hit_rates, &dir.join("plots"))?;
    Ok(())
}

/// Groups records by (σ, m, l), ordered by key.
pub fn group_records(records: &[EvalRecord]) -> BTreeMap<(String, usize, usize), Vec<&EvalRecord>> {
    let mut groups: BTreeMap<(String, usize, usize), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((format_real(r.sigma), r.m, r.l)).or_default().push(r);
    }
    groups
}
