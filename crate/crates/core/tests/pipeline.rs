use std::fs;
use std::path::Path;

use netvec::capture::{pcap_bytes, PacketRecord};
use netvec::embed::{EmbeddingModel, ModelConfig};
use netvec::par::Exec;
use netvec::pipeline::{
    self, OutputConfig, PipelineConfig, ProfileTrigger, ProfilerConfig, SourceConfig, METRICS_HEADER,
};
use netvec::synth::{World, WorldSpec};

fn world() -> WorldSpec {
    let mut w = WorldSpec::desk();
    w.duration_hours = 2.0;
    w
}

fn config(source: SourceConfig, dir: &Path) -> PipelineConfig {
    PipelineConfig {
        source,
        world: Some(world()),
        queue_size: 8,
        model: ModelConfig { dim: 16, seed: 4, ..ModelConfig::default() },
        output: OutputConfig::in_dir(dir),
        ..PipelineConfig::default()
    }
}

#[test]
fn pcap_file_and_tuple_log_give_the_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let w = World::generate(&world()).unwrap();
    let trace = w.generate_trace(Exec::Sequential);
    let pcap = dir.path().join("trace.pcap");
    let log = dir.path().join("tuples.csv");
    trace.save_pcap(&w, &pcap).unwrap();
    trace.save_tuple_csv(&w, &log).unwrap();

    let cat_path = dir.path().join("categories.tsv");
    let mut cats = Vec::new();
    w.store.write(&mut cats, &w.taxonomy).unwrap();
    fs::write(&cat_path, cats).unwrap();

    let (a_dir, b_dir) = (dir.path().join("a"), dir.path().join("b"));
    fs::create_dir_all(&a_dir).unwrap();
    fs::create_dir_all(&b_dir).unwrap();
    let mut a = config(SourceConfig::Pcap { path: pcap }, &a_dir);
    a.profiler.categories = Some(cat_path.clone());
    let mut b = config(SourceConfig::TupleCsv { path: log }, &b_dir);
    b.profiler.categories = Some(cat_path);
    let ra = pipeline::run(&a).unwrap();
    let rb = pipeline::run(&b).unwrap();

    assert_eq!(ra.metrics.totals.packets_in, trace.len() as u64);
    assert_eq!(ra.metrics.totals.matched, trace.len() as u64);
    assert_eq!(rb.metrics.totals.tuples_out, trace.len() as u64);
    assert_eq!(fs::read(a_dir.join("model.nv2v")).unwrap(), fs::read(b_dir.join("model.nv2v")).unwrap());
    assert_eq!(fs::read(a_dir.join("profiles.csv")).unwrap(), fs::read(b_dir.join("profiles.csv")).unwrap());

    let profiles = fs::read_to_string(a_dir.join("profiles.csv")).unwrap();
    assert_eq!(profiles.lines().count() as u64, 1 + ra.metrics.totals.profiles_emitted);
    assert!(profiles.starts_with("user,Arts & Entertainment,"));

    let metrics = fs::read_to_string(a_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER.join(","));
    let last = metrics.lines().last().unwrap();
    assert_eq!(last.split(',').nth(1).unwrap(), trace.len().to_string());

    let model = EmbeddingModel::load(a_dir.join("model.nv2v")).unwrap();
    assert_eq!(model.stats().sequences_seen, ra.metrics.totals.sequences_emitted);
}

#[test]
fn empty_and_truncated_captures() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.pcap");
    fs::write(&empty, pcap_bytes(&[])).unwrap();
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    let r = pipeline::run(&config(SourceConfig::Pcap { path: empty }, &out)).unwrap();
    assert_eq!(r.metrics.totals.packets_in, 0);
    assert_eq!(EmbeddingModel::load(out.join("model.nv2v")).unwrap().vocab().len(), 2);
    assert_eq!(fs::read_to_string(out.join("profiles.csv")).unwrap().lines().count(), 1);

    let frame = netvec::synth::http_get_frame([10, 0, 0, 1].into(), [198, 18, 0, 1].into(), 5000, "a.example");
    let mut bytes = pcap_bytes(&[PacketRecord::new(1, frame.clone()), PacketRecord::new(2, frame)]);
    bytes.truncate(bytes.len() - 5);
    let cut = dir.path().join("cut.pcap");
    fs::write(&cut, bytes).unwrap();
    let r = pipeline::run(&config(SourceConfig::Pcap { path: cut }, &out)).unwrap();
    assert_eq!(r.metrics.totals.packets_in, 1);
    assert_eq!(r.metrics.totals.source_errors, 1);
}

#[test]
fn trigger_and_backpressure_modes() {
    let dir = tempfile::tempdir().unwrap();
    let base = config(SourceConfig::default(), dir.path());
    let every = PipelineConfig {
        profiler: ProfilerConfig { trigger: ProfileTrigger::Every { every: 5 }, ..ProfilerConfig::default() },
        output: OutputConfig::default(),
        ..base.clone()
    };
    let off = PipelineConfig {
        profiler: ProfilerConfig { trigger: ProfileTrigger::Off, ..ProfilerConfig::default() },
        output: OutputConfig::default(),
        ..base.clone()
    };
    let per_request = pipeline::run(&PipelineConfig { output: OutputConfig::default(), ..base.clone() }).unwrap();
    let sparse = pipeline::run(&every).unwrap();
    let none = pipeline::run(&off).unwrap();
    let total = |r: &pipeline::RunOutput| r.metrics.totals.profiles_emitted + r.metrics.totals.no_profile;
    assert_eq!(total(&per_request), per_request.metrics.totals.tuples_out);
    assert!(total(&sparse) < total(&per_request) / 4);
    assert_eq!(total(&none), 0);
    assert_eq!(none.model.to_bytes(), per_request.model.to_bytes());

    let dropping = PipelineConfig {
        backpressure: pipeline::Backpressure::Drop,
        channel_capacity: 1,
        output: OutputConfig::default(),
        ..base
    };
    let r = pipeline::run(&dropping).unwrap();
    let t = r.metrics.totals;
    assert_eq!(t.tuples_out + t.dropped, t.matched);
}

#[test]
fn json_config_round_trip() {
    let cfg = PipelineConfig::default();
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
}
