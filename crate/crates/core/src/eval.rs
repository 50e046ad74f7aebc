//! Desk-scale experiments over synthetic worlds: time-to-profile, profile
//! similarity against labeled fraction, throughput against the baseline, and
//! persona profiles. All runs are sequential and deterministic for a fixed
//! seed, except the wall-clock throughput numbers.

use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, EmbedError, EmbeddingModel, ModelConfig, ModelSnapshot};
use crate::par::Exec;
use crate::profiling::{profile_distance, BaselineProfiler, DistanceMetric, ProfileIndex, Similarity};
use crate::splitter::{Key, KeySpec, Splitter};
use crate::synth::{HostRole, SynthError, Trace, World, WorldSpec, MICROS_PER_HOUR};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
    #[error("model: {0}")]
    Model(#[from] EmbedError),
    #[error("invalid eval config: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Elapsed-time buckets for time-to-profile, measured from each user's
/// first request of the evaluation day. `None` is the first request itself.
pub const TIME_BUCKETS: [(&str, Option<u64>); 6] = [
    ("1req", None),
    ("1min", Some(60_000_000)),
    ("10min", Some(600_000_000)),
    ("1h", Some(3_600_000_000)),
    ("6h", Some(21_600_000_000)),
    ("24h", Some(86_400_000_000)),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub world: WorldSpec,
    pub queue_size: usize,
    pub model: ModelConfig,
    /// Training passes over the training trace.
    pub epochs: usize,
    pub k: usize,
    pub similarity: Similarity,
    pub distance: DistanceMetric,
    pub ttp_fractions: Vec<f64>,
    pub similarity_fractions: Vec<f64>,
    pub checkpoints: Vec<usize>,
    /// World for the throughput experiment.
    pub throughput_world: WorldSpec,
    pub throughput_buckets: usize,
    /// Leading tuples of the throughput trace used to train its model.
    pub throughput_train: usize,
    /// Identical passes per profiler; each bucket keeps its fastest pass.
    pub throughput_reps: usize,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            world: WorldSpec::desk(),
            queue_size: 16,
            model: ModelConfig::default(),
            epochs: 1,
            k: 10,
            similarity: Similarity::Cosine,
            distance: DistanceMetric::TotalVariation,
            ttp_fractions: vec![0.0, 0.005, 0.05, 0.25, 0.5],
            similarity_fractions: vec![0.005, 0.05, 0.25, 0.5],
            checkpoints: vec![10, 100, 1000],
            throughput_world: throughput_world(),
            throughput_buckets: 10,
            throughput_train: 100_000,
            throughput_reps: 5,
            exec: Exec::Parallel,
        }
    }
}

/// About 1e6 requests: 2000 users over one day with log-normal rates and
/// Zipf hostname popularity.
pub fn throughput_world() -> WorldSpec {
    let mut w = WorldSpec::desk();
    w.duration_hours = 24.0;
    w.seed = 11;
    for (p, users) in w.personas.iter_mut().zip([667, 667, 666]) {
        p.users = Some(users);
        p.request_rate = 22.0;
        p.rate_sigma = 0.5;
    }
    w
}

impl EvalConfig {
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        EvalConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Invalid(m.to_string()));
        if self.queue_size < 2 {
            return bad("queue_size must be at least 2");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.throughput_buckets == 0 || self.throughput_reps == 0 {
            return bad("throughput_buckets and throughput_reps must be positive");
        }
        let fractions = self.ttp_fractions.iter().chain(&self.similarity_fractions);
        if fractions.clone().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("fractions must lie in [0, 1]");
        }
        if self.similarity_fractions.is_empty() || self.checkpoints.contains(&0) {
            return bad("similarity needs fractions and positive checkpoints");
        }
        self.model.validate()?;
        self.world.validate()?;
        self.throughput_world.validate()?;
        Ok(())
    }
}

fn user_key(world: &World, user: u32) -> Key {
    Key::ip(world.users[user as usize].ip)
}

/// Trains a fresh model on trace events: every request is counted, every
/// full window is an update.
pub fn train_on(
    world: &World,
    events: &[crate::synth::TraceEvent],
    cfg: &EvalConfig,
) -> Result<EmbeddingModel, EvalError> {
    let mut model = EmbeddingModel::new(cfg.model.clone())?;
    let keys: Vec<Key> = (0..world.users.len() as u32).map(|u| user_key(world, u)).collect();
    for epoch in 0..cfg.epochs {
        let mut splitter = Splitter::new(KeySpec::src_ip(), cfg.queue_size, 1).expect("validated queue size");
        for e in events {
            let host = world.hostname(e.host);
            if epoch == 0 {
                model.observe(host);
            }
            if let Some(w) = splitter.push_keyed(keys[e.user as usize].clone(), host.clone(), e.ts_micros).emitted {
                model.update(&w)?;
            }
        }
    }
    Ok(model)
}

fn index_for(snapshot: &ModelSnapshot, world: &World, cfg: &EvalConfig) -> ProfileIndex {
    ProfileIndex::new(snapshot.clone(), Arc::new(world.store.clone()), cfg.k, cfg.similarity)
}

fn split_day(world: &World, trace: &Trace) -> usize {
    let cut = world.spec.start_ts_micros + (24.0 * MICROS_PER_HOUR) as u64;
    trace.events.partition_point(|e| e.ts_micros < cut)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeToProfileRow {
    pub fraction: f64,
    pub elapsed_bucket: &'static str,
    pub pct_users_profiled_model: f64,
    pub pct_users_profiled_baseline: f64,
    pub users: usize,
}

/// Trains on the first day and replays the second through a frozen model
/// and a fresh baseline. A user is profiled by a bucket once a profiler
/// returned a profile at or before that much time after their first
/// second-day request.
pub fn eval_time_to_profile(cfg: &EvalConfig) -> Result<Vec<TimeToProfileRow>, EvalError> {
    cfg.validate()?;
    let world = World::generate(&cfg.world)?;
    let trace = world.generate_trace(cfg.exec);
    let cut = split_day(&world, &trace);
    let (day1, day2) = trace.events.split_at(cut);
    let snapshot = train_on(&world, day1, cfg)?.snapshot();
    let keys: Vec<Key> = (0..world.users.len() as u32).map(|u| user_key(&world, u)).collect();

    let mut rows = Vec::new();
    for &fraction in &cfg.ttp_fractions {
        let labeled = world.relabeled(fraction)?;
        let index = index_for(&snapshot, &labeled, cfg);
        let mut baseline = BaselineProfiler::new(Arc::new(labeled.store.clone()));
        let mut splitter = Splitter::new(KeySpec::src_ip(), cfg.queue_size, 1).expect("validated queue size");
        let users = world.users.len();
        let mut first_ts: Vec<Option<u64>> = vec![None; users];
        // (profiled at the first request, elapsed micros) per profiler.
        let mut model_at: Vec<Option<(bool, u64)>> = vec![None; users];
        let mut base_at: Vec<Option<(bool, u64)>> = vec![None; users];
        for e in day2 {
            let u = e.user as usize;
            let host = labeled.hostname(e.host);
            let first = first_ts[u].is_none();
            let start = *first_ts[u].get_or_insert(e.ts_micros);
            let elapsed = e.ts_micros - start;
            let obs = splitter.push_keyed(keys[u].clone(), host.clone(), e.ts_micros);
            if model_at[u].is_none() && index.profile(&obs.current).is_ok() {
                model_at[u] = Some((first, elapsed));
            }
            baseline.update(&keys[u], host);
            if base_at[u].is_none() && baseline.profile(&keys[u]).is_some() {
                base_at[u] = Some((first, elapsed));
            }
        }
        let active = first_ts.iter().filter(|t| t.is_some()).count();
        let pct = |at: &[Option<(bool, u64)>], bucket: Option<u64>| {
            let hit = at
                .iter()
                .filter(|a| match (a, bucket) {
                    (Some((first, _)), None) => *first,
                    (Some((_, el)), Some(b)) => *el <= b,
                    (None, _) => false,
                })
                .count();
            if active == 0 {
                0.0
            } else {
                100.0 * hit as f64 / active as f64
            }
        };
        for (label, bucket) in TIME_BUCKETS {
            rows.push(TimeToProfileRow {
                fraction,
                elapsed_bucket: label,
                pct_users_profiled_model: pct(&model_at, bucket),
                pct_users_profiled_baseline: pct(&base_at, bucket),
                users: active,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityRow {
    pub fraction: f64,
    pub requests_seen: usize,
    pub mean_distance_to_reference: f64,
    pub users: usize,
}

/// Distance between a user's profile after their first `c` requests under
/// each labeled fraction and under the largest one. A missing profile on
/// exactly one side counts as distance 1; users with fewer than `c`
/// requests are left out of that checkpoint.
pub fn eval_similarity(cfg: &EvalConfig) -> Result<Vec<SimilarityRow>, EvalError> {
    cfg.validate()?;
    let world = World::generate(&cfg.world)?;
    let trace = world.generate_trace(cfg.exec);
    let snapshot = train_on(&world, &trace.events, cfg)?.snapshot();
    let mut history: Vec<Vec<&str>> = vec![Vec::new(); world.users.len()];
    for e in &trace.events {
        history[e.user as usize].push(world.hostname(e.host));
    }
    let reference_fraction = cfg.similarity_fractions.iter().copied().fold(f64::MIN, f64::max);
    let profiles_at = |fraction: f64| -> Result<Vec<Vec<Option<Vec<f64>>>>, EvalError> {
        let index = index_for(&snapshot, &world.relabeled(fraction)?, cfg);
        Ok(cfg
            .checkpoints
            .iter()
            .map(|&c| {
                history
                    .iter()
                    .enumerate()
                    .map(|(u, h)| {
                        if h.len() < c {
                            return None;
                        }
                        let p = index.profile_tokens(user_key(&world, u as u32), h[..c].iter().copied());
                        Some(p.map(|p| p.weights).unwrap_or_default())
                    })
                    .collect()
            })
            .collect())
    };
    let reference = profiles_at(reference_fraction)?;
    let mut rows = Vec::new();
    for &fraction in &cfg.similarity_fractions {
        let cand = profiles_at(fraction)?;
        for (ci, &c) in cfg.checkpoints.iter().enumerate() {
            let (mut sum, mut users) = (0.0, 0usize);
            for (r, p) in reference[ci].iter().zip(&cand[ci]) {
                let (Some(r), Some(p)) = (r, p) else { continue };
                users += 1;
                sum += match (r.is_empty(), p.is_empty()) {
                    (true, true) => 0.0,
                    (false, false) => profile_distance(r, p, cfg.distance).expect("same taxonomy"),
                    _ => 1.0,
                };
            }
            let mean = if users == 0 { f64::NAN } else { sum / users as f64 };
            rows.push(SimilarityRow { fraction, requests_seen: c, mean_distance_to_reference: mean, users });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputRow {
    pub bucket: usize,
    pub tuples: usize,
    pub tuples_per_sec_model: f64,
    pub tuples_per_sec_baseline: f64,
}

/// Profiles every request of a long trace with the frozen model and with
/// the baseline, timing consecutive equal slices of the trace. Passes are
/// repeated and each slice keeps its best rate to suppress scheduler noise.
pub fn eval_throughput_vs_baseline(cfg: &EvalConfig) -> Result<Vec<ThroughputRow>, EvalError> {
    cfg.validate()?;
    let world = World::generate(&cfg.throughput_world)?;
    let trace = world.generate_trace(cfg.exec);
    let train = &trace.events[..cfg.throughput_train.min(trace.len())];
    let snapshot = train_on(&world, train, cfg)?.snapshot();
    let index = index_for(&snapshot, &world, cfg);
    index.precompute(cfg.exec);
    let store = Arc::new(world.store.clone());
    let keys: Vec<Key> = (0..world.users.len() as u32).map(|u| user_key(&world, u)).collect();
    let per = trace.len().div_ceil(cfg.throughput_buckets).max(1);

    let best = |rates: &mut Vec<f64>, pass: Vec<f64>| {
        if rates.is_empty() {
            *rates = pass;
        } else {
            rates.iter_mut().zip(pass).for_each(|(r, p)| *r = r.max(p));
        }
    };
    let mut model_rates = Vec::new();
    let mut base_rates = Vec::new();
    for _ in 0..cfg.throughput_reps {
        let mut splitter = Splitter::new(KeySpec::src_ip(), cfg.queue_size, 1).expect("validated queue size");
        let pass = time_chunks(&trace, per, |e| {
            let obs = splitter.push_keyed(keys[e.user as usize].clone(), world.hostname(e.host).clone(), e.ts_micros);
            let _ = black_box(index.profile(&obs.current));
        });
        best(&mut model_rates, pass);

        let mut baseline = BaselineProfiler::new(store.clone());
        let pass = time_chunks(&trace, per, |e| {
            let key = &keys[e.user as usize];
            baseline.update(key, world.hostname(e.host));
            black_box(baseline.profile(key));
        });
        best(&mut base_rates, pass);
    }

    Ok(trace
        .events
        .chunks(per)
        .zip(model_rates.into_iter().zip(base_rates))
        .enumerate()
        .map(|(bucket, (chunk, (m, b)))| ThroughputRow {
            bucket,
            tuples: chunk.len(),
            tuples_per_sec_model: m,
            tuples_per_sec_baseline: b,
        })
        .collect())
}

/// Tuples per second of `f` over consecutive chunks of the trace.
fn time_chunks(trace: &Trace, per: usize, mut f: impl FnMut(&crate::synth::TraceEvent)) -> Vec<f64> {
    trace
        .events
        .chunks(per)
        .map(|chunk| {
            let start = Instant::now();
            chunk.iter().for_each(&mut f);
            chunk.len() as f64 / start.elapsed().as_secs_f64().max(1e-9)
        })
        .collect()
}

/// Population coefficient of variation.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonaReport {
    pub persona: String,
    pub expected: Vec<String>,
    /// Categories by aggregate weight, best first.
    pub top: Vec<(String, f64)>,
    pub users: usize,
    pub profiled_users: usize,
    /// The model has seen too few updates for the report to mean anything.
    pub below_confidence: bool,
}

impl PersonaReport {
    pub fn top1_matches(&self) -> bool {
        self.top.first().is_some_and(|(c, w)| *w > 0.0 && self.expected.contains(c))
    }

    pub fn expected_in_top(&self, n: usize) -> bool {
        self.expected.iter().all(|e| self.top.iter().take(n).any(|(c, w)| c == e && *w > 0.0))
    }
}

/// Mean whole-history profile of a persona's users.
pub fn persona_report(
    world: &World,
    trace: &Trace,
    model: &EmbeddingModel,
    persona: usize,
    cfg: &EvalConfig,
) -> PersonaReport {
    let snapshot = model.snapshot();
    let index = index_for(&snapshot, world, cfg);
    let mut history: Vec<Vec<&str>> = vec![Vec::new(); world.users.len()];
    for e in &trace.events {
        history[e.user as usize].push(world.hostname(e.host));
    }
    let mut acc = vec![0.0; world.taxonomy.len()];
    let (mut users, mut profiled) = (0, 0);
    for (u, user) in world.users.iter().enumerate() {
        if user.persona != persona {
            continue;
        }
        users += 1;
        if let Ok(p) = index.profile_tokens(user_key(world, u as u32), history[u].iter().copied()) {
            profiled += 1;
            acc.iter_mut().zip(&p.weights).for_each(|(a, w)| *a += w);
        }
    }
    let z: f64 = acc.iter().sum();
    let mut top: Vec<(String, f64)> = acc
        .iter()
        .enumerate()
        .map(|(i, &w)| (world.taxonomy.name(i as u16).unwrap_or("?").to_string(), if z > 0.0 { w / z } else { 0.0 }))
        .collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let p = &world.personas[persona];
    PersonaReport {
        persona: p.spec.name.clone(),
        expected: p.spec.interest_categories.clone(),
        top,
        users,
        profiled_users: profiled,
        below_confidence: (snapshot.updates() as usize) < model.vocab().len() || profiled == 0,
    }
}

/// Trains on the whole trace and reports every persona.
pub fn eval_persona_profile(cfg: &EvalConfig) -> Result<(Vec<PersonaReport>, f64), EvalError> {
    cfg.validate()?;
    let world = World::generate(&cfg.world)?;
    let trace = world.generate_trace(cfg.exec);
    let model = train_on(&world, &trace.events, cfg)?;
    let reports = (0..world.personas.len()).map(|p| persona_report(&world, &trace, &model, p, cfg)).collect();
    Ok((reports, persona_purity(&world, &model, cfg.exec)))
}

/// Share of in-vocabulary pool hostnames whose nearest other pool hostname
/// (by cosine) belongs to the same persona.
pub fn persona_purity(world: &World, model: &EmbeddingModel, exec: Exec) -> f64 {
    let items: Vec<(usize, Vec<f32>)> = world
        .hostnames
        .iter()
        .zip(&world.roles)
        .filter_map(|(h, r)| match r {
            HostRole::Pool { persona, .. } => model.embedding_of(h).map(|v| (*persona as usize, v)),
            _ => None,
        })
        .collect();
    if items.len() < 2 {
        return 0.0;
    }
    let hits = crate::par::map_range(exec, items.len(), |i| {
        let best = (0..items.len())
            .filter(|&j| j != i)
            .map(|j| (cosine(&items[i].1, &items[j].1), j))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, j)| j)
            .expect("at least two items");
        items[best].0 == items[i].0
    });
    hits.iter().filter(|&&h| h).count() as f64 / items.len() as f64
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<(), EvalError> {
    let mut out = csv_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub const TIME_TO_PROFILE_HEADER: &str =
    "fraction,elapsed_bucket,pct_users_profiled_model,pct_users_profiled_baseline,users";
pub const SIMILARITY_HEADER: &str = "fraction,requests_seen,mean_distance_to_reference,users";
pub const THROUGHPUT_HEADER: &str = "bucket,tuples,tuples_per_sec_model,tuples_per_sec_baseline";
pub const PERSONA_HEADER: &str = "persona,rank,category,weight,expected,below_confidence";

pub fn write_time_to_profile<W: Write>(w: W, rows: &[TimeToProfileRow]) -> Result<(), EvalError> {
    write_rows(w, rows)
}

pub fn write_similarity<W: Write>(w: W, rows: &[SimilarityRow]) -> Result<(), EvalError> {
    write_rows(w, rows)
}

pub fn write_throughput<W: Write>(w: W, rows: &[ThroughputRow]) -> Result<(), EvalError> {
    write_rows(w, rows)
}

/// One row per persona and category, ranked.
pub fn write_persona<W: Write>(w: W, reports: &[PersonaReport]) -> Result<(), EvalError> {
    let mut out = csv_writer(w);
    out.write_record(PERSONA_HEADER.split(','))?;
    for r in reports {
        for (rank, (cat, weight)) in r.top.iter().enumerate() {
            out.write_record([
                r.persona.clone(),
                (rank + 1).to_string(),
                cat.clone(),
                weight.to_string(),
                r.expected.contains(cat).to_string(),
                r.below_confidence.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EvalConfig {
        let mut world = WorldSpec::desk();
        world.total_hostnames = 300;
        world.background_hostnames = 30;
        world.duration_hours = 48.0;
        for p in &mut world.personas {
            p.num_hostnames_per_category = 20;
            p.users = Some(4);
            p.request_rate = 4.0;
        }
        let mut tw = world.clone();
        tw.duration_hours = 6.0;
        EvalConfig {
            world,
            throughput_world: tw,
            model: ModelConfig { dim: 8, seed: 2, ..Default::default() },
            queue_size: 4,
            checkpoints: vec![5, 20],
            throughput_buckets: 3,
            throughput_train: 200,
            exec: Exec::Sequential,
            ..EvalConfig::default()
        }
    }

    fn header_of(text: &str) -> &str {
        text.lines().next().unwrap()
    }

    #[test]
    fn time_to_profile_grid_and_invariants() {
        let cfg = small();
        let rows = eval_time_to_profile(&cfg).unwrap();
        assert_eq!(rows.len(), cfg.ttp_fractions.len() * TIME_BUCKETS.len());
        for r in &rows {
            if r.fraction == 0.0 {
                assert_eq!(r.pct_users_profiled_baseline, 0.0);
                assert_eq!(r.pct_users_profiled_model, 0.0);
            }
        }
        for group in rows.chunks(TIME_BUCKETS.len()) {
            for w in group.windows(2) {
                assert!(w[0].pct_users_profiled_model <= w[1].pct_users_profiled_model);
                assert!(w[0].pct_users_profiled_baseline <= w[1].pct_users_profiled_baseline);
            }
        }
        let mut out = Vec::new();
        write_time_to_profile(&mut out, &rows).unwrap();
        assert_eq!(header_of(std::str::from_utf8(&out).unwrap()), TIME_TO_PROFILE_HEADER);
        assert_eq!(eval_time_to_profile(&cfg).unwrap(), rows);
    }

    #[test]
    fn similarity_reference_is_zero() {
        let cfg = small();
        let rows = eval_similarity(&cfg).unwrap();
        assert_eq!(rows.len(), cfg.similarity_fractions.len() * cfg.checkpoints.len());
        for r in rows.iter().filter(|r| r.fraction == 0.5) {
            assert_eq!(r.mean_distance_to_reference, 0.0);
        }
        let mut out = Vec::new();
        write_similarity(&mut out, &rows).unwrap();
        assert_eq!(header_of(std::str::from_utf8(&out).unwrap()), SIMILARITY_HEADER);
    }

    #[test]
    fn throughput_rows_cover_trace() {
        let cfg = small();
        let rows = eval_throughput_vs_baseline(&cfg).unwrap();
        assert_eq!(rows.len(), cfg.throughput_buckets);
        assert!(rows.iter().all(|r| r.tuples_per_sec_model > 0.0 && r.tuples_per_sec_baseline > 0.0));
        let mut out = Vec::new();
        write_throughput(&mut out, &rows).unwrap();
        assert_eq!(header_of(std::str::from_utf8(&out).unwrap()), THROUGHPUT_HEADER);
    }

    #[test]
    fn untrained_model_is_below_confidence() {
        let cfg = small();
        let world = World::generate(&cfg.world).unwrap();
        let trace = world.generate_trace(Exec::Sequential);
        let mut model = EmbeddingModel::new(cfg.model.clone()).unwrap();
        for e in &trace.events {
            model.observe(world.hostname(e.host));
        }
        let r = persona_report(&world, &trace, &model, 0, &cfg);
        assert!(r.below_confidence);
        let mut out = Vec::new();
        write_persona(&mut out, &[r]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(header_of(&text), PERSONA_HEADER);
        assert_eq!(text.lines().count(), 1 + world.taxonomy.len());
    }

    #[test]
    fn cv_of_constant_is_zero() {
        assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]), 0.0);
        assert!((coefficient_of_variation(&[1.0, 3.0]) - 0.5).abs() < 1e-12);
    }
}
