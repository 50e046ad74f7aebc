//! Threaded dataflow: source → parse/route → splitter shards → trainer →
//! profiler, connected by bounded channels.
//!
//! Tuples are routed to shards by key hash before any reordering can happen,
//! so each key's tuples reach the model in capture order. The trainer hands
//! profile requests to the profiler together with the snapshot current at
//! that point of its input, which makes single-shard runs fully
//! deterministic.

mod bench;
mod config;
mod metrics;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::sync::atomic::Ordering::Relaxed;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use thiserror::Error;

use crate::capture::{open_pcap, CaptureError, MemorySource, PacketRecord, PacketSource};
use crate::embed::{EmbedError, EmbeddingModel, ModelSnapshot};
use crate::profiling::{
    load_categories, CategoryFileError, CategoryStore, CategoryTaxonomy, ProfileCsvWriter, ProfileIndex, TaxonomyError,
};
use crate::splitter::{Sequence, Splitter};
use crate::synth::{SynthError, World};
use crate::tuple_gen::{process_batch, FlowTuple, FrameOutcome, TupleCsvError, TupleCsvReader};

pub use bench::{bench_capture, bench_trace, write_bench_csv, BenchMode, BenchRow, PACKET_SIZE_BUCKETS};
pub use config::{
    Backpressure, ConfigError, OutputConfig, PipelineConfig, ProfileTrigger, ProfilerConfig, SourceConfig, SynthFormat,
};
pub use metrics::{write_metrics_csv, Counters, MetricsRow, RunMetrics, Totals, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("capture: {0}")]
    Capture(#[from] CaptureError),
    #[error("tuple log: {0}")]
    TupleLog(#[from] TupleCsvError),
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
    #[error("categories: {0}")]
    Categories(#[from] CategoryFileError),
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("model: {0}")]
    Model(#[from] EmbedError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub model: EmbeddingModel,
}

enum Batch {
    Packets(Vec<PacketRecord>),
    Tuples(Vec<FlowTuple>),
}

enum Input {
    Packets(Box<dyn PacketSource + Send>),
    Tuples(Box<dyn Iterator<Item = Result<FlowTuple, TupleCsvError>> + Send>),
}

struct TrainMsg {
    host: Arc<str>,
    window: Option<Sequence>,
    profile: Option<Sequence>,
}

struct ProfileJob {
    seq: Sequence,
    snapshot: ModelSnapshot,
}

struct Prepared {
    input: Input,
    taxonomy: CategoryTaxonomy,
    store: CategoryStore,
}

fn prepare(cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let mut taxonomy = match &cfg.profiler.taxonomy {
        Some(p) => CategoryTaxonomy::load(p)?,
        None => CategoryTaxonomy::iab_tier1(),
    };
    let mut store = None;
    let input = match &cfg.source {
        SourceConfig::Pcap { path } => Input::Packets(Box::new(open_pcap(path)?)),
        SourceConfig::TupleCsv { path } => {
            let reader = TupleCsvReader::new(std::io::BufReader::new(File::open(path)?))?;
            Input::Tuples(Box::new(reader))
        }
        SourceConfig::Synth { format } => {
            let world = World::generate(&cfg.world_spec())?;
            let trace = world.generate_trace(cfg.exec);
            let input = match format {
                SynthFormat::Pcap => Input::Packets(Box::new(MemorySource::new(trace.packets(&world, cfg.exec)))),
                SynthFormat::Tuples => {
                    let tuples: Vec<FlowTuple> = trace.tuples(&world).collect();
                    Input::Tuples(Box::new(tuples.into_iter().map(Ok)))
                }
            };
            if cfg.profiler.categories.is_none() {
                taxonomy = world.taxonomy.clone();
                store = Some(world.store.clone());
            }
            input
        }
    };
    let store = match (&cfg.profiler.categories, store) {
        (Some(p), _) => load_categories(p, &taxonomy)?,
        (None, Some(s)) => s,
        (None, None) => CategoryStore::new(&taxonomy),
    };
    Ok(Prepared { input, taxonomy, store })
}

/// Runs the configured pipeline to source exhaustion and writes the
/// configured outputs.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let Prepared { input, taxonomy, store } = prepare(cfg)?;
    let model = EmbeddingModel::new(cfg.model.clone())?;
    let profiles_out: Option<Box<dyn Write + Send>> = match &cfg.output.profiles {
        Some(p) => Some(Box::new(BufWriter::new(File::create(p)?))),
        None => None,
    };
    let output = run_with(cfg, input, model, taxonomy, Arc::new(store), profiles_out)?;
    if let Some(p) = &cfg.output.metrics {
        write_metrics_csv(BufWriter::new(File::create(p)?), &output.metrics.rows)?;
    }
    if let Some(p) = &cfg.output.model {
        output.model.save(p)?;
    }
    Ok(output)
}

fn run_with(
    cfg: &PipelineConfig,
    input: Input,
    model: EmbeddingModel,
    taxonomy: CategoryTaxonomy,
    store: Arc<CategoryStore>,
    profiles_out: Option<Box<dyn Write + Send>>,
) -> Result<RunOutput, PipelineError> {
    let counters = Arc::new(Counters::default());
    let cap = cfg.channel_capacity;
    let profiling = cfg.profiler.trigger != ProfileTrigger::Off;

    let (batch_tx, batch_rx) = bounded::<Batch>(cap);
    let shard_chans: Vec<_> = (0..cfg.shards).map(|_| bounded::<Vec<FlowTuple>>(cap)).collect();
    let (train_tx, train_rx) = bounded::<Vec<TrainMsg>>(cap);
    let (prof_tx, prof_rx) = bounded::<Vec<ProfileJob>>(cap);
    let (stop_tx, stop_rx) = bounded::<()>(0);

    let started = Instant::now();
    let depth_rx = (
        batch_rx.clone(),
        shard_chans.iter().map(|c| c.1.clone()).collect::<Vec<_>>(),
        train_rx.clone(),
        prof_rx.clone(),
    );

    let result = thread::scope(|s| {
        let sampler = {
            let counters = counters.clone();
            s.spawn(move || {
                let mut rows = Vec::new();
                loop {
                    match stop_rx.recv_timeout(Duration::from_secs(1)) {
                        Err(RecvTimeoutError::Timeout) => rows.push(MetricsRow {
                            ts: started.elapsed().as_secs_f64(),
                            totals: counters.snapshot(),
                            channel_depths: [
                                depth_rx.0.len(),
                                depth_rx.1.iter().map(Receiver::len).sum(),
                                depth_rx.2.len(),
                                depth_rx.3.len(),
                            ],
                        }),
                        _ => return rows,
                    }
                }
            })
        };

        let source = {
            let counters = counters.clone();
            s.spawn(move || read_source(cfg, input, batch_tx, &counters))
        };

        let router = {
            let counters = counters.clone();
            let senders: Vec<Sender<Vec<FlowTuple>>> = shard_chans.iter().map(|c| c.0.clone()).collect();
            s.spawn(move || route(cfg, batch_rx, senders, &counters))
        };

        let mut shard_handles = Vec::new();
        for (_, rx) in shard_chans {
            let counters = counters.clone();
            let tx = train_tx.clone();
            shard_handles.push(s.spawn(move || shard(cfg, rx, tx, &counters, profiling)));
        }
        drop(train_tx);

        let trainer = {
            let counters = counters.clone();
            let prof_tx = profiling.then_some(prof_tx);
            s.spawn(move || train(cfg, model, train_rx, prof_tx, &counters))
        };

        let profiler = {
            let counters = counters.clone();
            let store = store.clone();
            s.spawn(move || profile(cfg, &taxonomy, store, prof_rx, profiles_out, &counters))
        };

        let source_result = source.join().expect("source thread panicked");
        router.join().expect("router thread panicked");
        for h in shard_handles {
            h.join().expect("shard thread panicked");
        }
        let model = trainer.join().expect("trainer thread panicked");
        let profile_result = profiler.join().expect("profiler thread panicked");
        drop(stop_tx);
        let rows = sampler.join().expect("metrics thread panicked");
        source_result?;
        profile_result?;
        Ok::<_, PipelineError>((model, rows))
    });
    let (model, mut rows) = result?;
    let elapsed_secs = started.elapsed().as_secs_f64();
    let totals = counters.snapshot();
    rows.push(MetricsRow { ts: elapsed_secs, totals, channel_depths: [0; 4] });
    Ok(RunOutput { metrics: RunMetrics { totals, rows, elapsed_secs }, model })
}

/// Sleeps until trace time `ts` is due under real-time pacing.
struct Pacer {
    origin: Option<(u64, Instant)>,
    speedup: f64,
}

impl Pacer {
    fn wait_for(&mut self, ts: u64) -> Option<Duration> {
        let (first, start) = *self.origin.get_or_insert((ts, Instant::now()));
        let due = Duration::from_secs_f64(ts.saturating_sub(first) as f64 / 1e6 / self.speedup);
        due.checked_sub(start.elapsed()).filter(|d| !d.is_zero())
    }
}

fn read_source(
    cfg: &PipelineConfig,
    input: Input,
    tx: Sender<Batch>,
    counters: &Counters,
) -> Result<(), PipelineError> {
    let mut pacer = cfg.realtime.then_some(Pacer { origin: None, speedup: cfg.realtime_speedup });
    let mut pace = |ts: u64, flush: &mut dyn FnMut() -> bool| -> bool {
        if let Some(wait) = pacer.as_mut().and_then(|p| p.wait_for(ts)) {
            if !flush() {
                return false;
            }
            thread::sleep(wait);
        }
        true
    };
    match input {
        Input::Packets(mut src) => {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            loop {
                let pkt = match src.next_packet() {
                    Ok(Some(p)) => p,
                    Ok(None) => break,
                    Err(CaptureError::TruncatedRecord { .. }) => {
                        Counters::add(&counters.source_errors, 1);
                        continue;
                    }
                    Err(e) => {
                        Counters::add(&counters.source_errors, 1);
                        return Err(e.into());
                    }
                };
                let mut flush = || tx.send(Batch::Packets(std::mem::take(&mut batch))).is_ok();
                if !pace(pkt.ts_micros, &mut flush) {
                    return Ok(());
                }
                batch.push(pkt);
                if batch.len() >= cfg.batch_size && tx.send(Batch::Packets(std::mem::take(&mut batch))).is_err() {
                    return Ok(());
                }
            }
            if !batch.is_empty() {
                let _ = tx.send(Batch::Packets(batch));
            }
        }
        Input::Tuples(src) => {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for t in src {
                let t = match t {
                    Ok(t) => t,
                    Err(_) => {
                        Counters::add(&counters.source_errors, 1);
                        continue;
                    }
                };
                let mut flush = || tx.send(Batch::Tuples(std::mem::take(&mut batch))).is_ok();
                if !pace(t.ts_micros, &mut flush) {
                    return Ok(());
                }
                batch.push(t);
                if batch.len() >= cfg.batch_size && tx.send(Batch::Tuples(std::mem::take(&mut batch))).is_err() {
                    return Ok(());
                }
            }
            if !batch.is_empty() {
                let _ = tx.send(Batch::Tuples(batch));
            }
        }
    }
    Ok(())
}

fn route(cfg: &PipelineConfig, rx: Receiver<Batch>, shards: Vec<Sender<Vec<FlowTuple>>>, counters: &Counters) {
    for batch in rx {
        let tuples = match batch {
            Batch::Packets(pkts) => {
                Counters::add(&counters.packets_in, pkts.len() as u64);
                Counters::add(&counters.bytes_in, pkts.iter().map(|p| u64::from(p.original_len)).sum());
                let mut tuples = Vec::with_capacity(pkts.len());
                for outcome in process_batch(cfg.exec, &cfg.filter, &pkts) {
                    match outcome {
                        FrameOutcome::Tuple(t) => {
                            Counters::add(&counters.matched, 1);
                            tuples.push(t);
                        }
                        FrameOutcome::FilteredOut => Counters::add(&counters.filtered_out, 1),
                        FrameOutcome::ParseFailure => Counters::add(&counters.parse_failures, 1),
                        FrameOutcome::Truncated => Counters::add(&counters.truncated, 1),
                    }
                }
                tuples
            }
            Batch::Tuples(t) => t,
        };
        let mut per_shard: Vec<Vec<FlowTuple>> = vec![Vec::new(); shards.len()];
        for t in tuples {
            let i = if shards.len() == 1 { 0 } else { cfg.key.key_of(&t).shard(shards.len()) };
            per_shard[i].push(t);
        }
        for (tx, chunk) in shards.iter().zip(per_shard) {
            if chunk.is_empty() {
                continue;
            }
            let n = chunk.len() as u64;
            let sent = match cfg.backpressure {
                Backpressure::Block => tx.send(chunk).is_ok(),
                Backpressure::Drop => match tx.try_send(chunk) {
                    Ok(()) => true,
                    Err(TrySendError::Full(_)) => {
                        Counters::add(&counters.dropped, n);
                        continue;
                    }
                    Err(TrySendError::Disconnected(_)) => false,
                },
            };
            if !sent {
                return;
            }
            Counters::add(&counters.tuples_out, n);
        }
    }
}

fn shard(
    cfg: &PipelineConfig,
    rx: Receiver<Vec<FlowTuple>>,
    tx: Sender<Vec<TrainMsg>>,
    counters: &Counters,
    profiling: bool,
) {
    let mut splitter = Splitter::new(cfg.key.clone(), cfg.queue_size, cfg.stride).expect("validated config");
    let ttl = cfg.ttl_seconds.saturating_mul(1_000_000);
    let mut since_evict = 0u64;
    let mut latest = 0u64;
    let mut live = 0u64;
    for chunk in rx {
        let mut out = Vec::with_capacity(chunk.len());
        for t in &chunk {
            latest = latest.max(t.ts_micros);
            let obs = splitter.observe(t);
            if obs.emitted.is_some() {
                Counters::add(&counters.sequences_emitted, 1);
            }
            let want_profile = profiling
                && match cfg.profiler.trigger {
                    ProfileTrigger::PerRequest => true,
                    ProfileTrigger::Every { every } => (obs.key_pushes - 1) % every == 0,
                    ProfileTrigger::Off => false,
                };
            out.push(TrainMsg {
                host: t.hostname.clone(),
                window: obs.emitted,
                profile: want_profile.then_some(obs.current),
            });
            since_evict += 1;
            if since_evict >= 4096 || splitter.live_keys() > cfg.max_keys {
                let evicted = splitter.evict_idle(latest, ttl, cfg.max_keys);
                Counters::add(&counters.evicted_keys, evicted.len() as u64);
                since_evict = 0;
            }
        }
        let now = splitter.live_keys() as u64;
        if now >= live {
            Counters::add(&counters.live_keys, now - live);
        } else {
            counters.live_keys.fetch_sub(live - now, Relaxed);
        }
        live = now;
        if tx.send(out).is_err() {
            return;
        }
    }
}

fn train(
    cfg: &PipelineConfig,
    mut model: EmbeddingModel,
    rx: Receiver<Vec<TrainMsg>>,
    prof_tx: Option<Sender<Vec<ProfileJob>>>,
    counters: &Counters,
) -> EmbeddingModel {
    let mut snapshot = model.snapshot();
    let mut since_publish = 0u64;
    let mut profiler_alive = prof_tx.is_some();
    for msgs in rx {
        let mut jobs = Vec::new();
        for m in msgs {
            model.observe(&m.host);
            if let Some(w) = m.window {
                match model.update(&w) {
                    Ok(loss) => {
                        Counters::add(&counters.updates_applied, 1);
                        counters.add_loss(loss);
                        since_publish += 1;
                    }
                    Err(_) => Counters::add(&counters.degenerate, 1),
                }
                if since_publish >= cfg.profiler.snapshot_interval {
                    snapshot = model.snapshot();
                    since_publish = 0;
                }
            }
            if let Some(seq) = m.profile {
                jobs.push(ProfileJob { seq, snapshot: snapshot.clone() });
            }
        }
        if profiler_alive && !jobs.is_empty() {
            profiler_alive = prof_tx.as_ref().is_some_and(|tx| tx.send(jobs).is_ok());
        }
    }
    model
}

fn profile(
    cfg: &PipelineConfig,
    taxonomy: &CategoryTaxonomy,
    store: Arc<CategoryStore>,
    rx: Receiver<Vec<ProfileJob>>,
    out: Option<Box<dyn Write + Send>>,
    counters: &Counters,
) -> Result<(), PipelineError> {
    let mut writer = out.map(|w| ProfileCsvWriter::new(w, taxonomy)).transpose()?;
    let mut index: Option<ProfileIndex> = None;
    for jobs in rx {
        for job in jobs {
            if !index.as_ref().is_some_and(|i| i.snapshot().ptr_eq(&job.snapshot)) {
                index = Some(ProfileIndex::new(job.snapshot, store.clone(), cfg.profiler.k, cfg.profiler.similarity));
            }
            match index.as_ref().unwrap().profile(&job.seq) {
                Ok(p) => {
                    Counters::add(&counters.profiles_emitted, 1);
                    if let Some(w) = writer.as_mut() {
                        w.write(&p, job.seq.ts_micros)?;
                    }
                }
                Err(_) => Counters::add(&counters.no_profile, 1),
            }
        }
    }
    if let Some(w) = writer {
        w.into_inner()?.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::WorldSpec;

    fn tiny_world() -> WorldSpec {
        let mut w = WorldSpec::desk();
        w.total_hostnames = 400;
        w.background_hostnames = 40;
        w.duration_hours = 1.0;
        for p in &mut w.personas {
            p.num_hostnames_per_category = 20;
            p.users = Some(3);
        }
        w
    }

    fn cfg(format: SynthFormat) -> PipelineConfig {
        PipelineConfig {
            source: SourceConfig::Synth { format },
            world: Some(tiny_world()),
            queue_size: 4,
            model: crate::embed::ModelConfig { dim: 8, seed: 1, ..Default::default() },
            profiler: ProfilerConfig { snapshot_interval: 50, ..Default::default() },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn synth_run_accounting() {
        let out = run(&cfg(SynthFormat::Pcap)).unwrap();
        let t = out.metrics.totals;
        assert!(t.packets_in > 0);
        assert!(t.is_balanced());
        assert_eq!(t.matched, t.packets_in);
        assert_eq!(t.tuples_out, t.matched);
        assert_eq!(t.profiles_emitted + t.no_profile, t.tuples_out);
        assert_eq!(out.model.stats().sequences_seen, t.sequences_emitted);
    }

    #[test]
    fn pcap_and_tuple_sources_agree() {
        let a = run(&cfg(SynthFormat::Pcap)).unwrap();
        let b = run(&cfg(SynthFormat::Tuples)).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    }

    #[test]
    fn sharded_run_counts_match() {
        let single = run(&cfg(SynthFormat::Tuples)).unwrap().metrics.totals;
        let sharded = run(&PipelineConfig { shards: 3, ..cfg(SynthFormat::Tuples) }).unwrap().metrics.totals;
        assert_eq!(single.sequences_emitted, sharded.sequences_emitted);
        assert_eq!(single.updates_applied, sharded.updates_applied);
    }

    #[test]
    fn pacer_waits_for_trace_time() {
        let mut p = Pacer { origin: None, speedup: 1e6 };
        assert!(p.wait_for(0).is_none());
        assert!(p.wait_for(10).is_none());
        let mut p = Pacer { origin: None, speedup: 1.0 };
        p.wait_for(0);
        assert!(p.wait_for(60_000_000).is_some());
    }
}
