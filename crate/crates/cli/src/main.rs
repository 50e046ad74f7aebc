use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use netvec::embed::{cosine, EmbeddingModel};
use netvec::eval::{self, EvalConfig};
use netvec::par::Exec;
use netvec::pipeline::{self, BenchMode, OutputConfig, PipelineConfig, PACKET_SIZE_BUCKETS};
use netvec::synth::{World, WorldSpec};

#[derive(Parser)]
#[command(name = "netvec", version, about = "Packets to hostname embeddings to user interest profiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the streaming pipeline described by a JSON config.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write metrics.csv, profiles.csv and model.nv2v here, replacing the config's outputs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure capture throughput on in-memory traces of fixed-size frames.
    Bench {
        /// Frame sizes in bytes.
        #[arg(long, value_delimiter = ',', default_values_t = PACKET_SIZE_BUCKETS)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Also write the rows as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic world and write its trace and labels.
    Synth {
        /// World spec as JSON; the default desk world when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TraceFormat::Both)]
        format: TraceFormat,
    },
    /// Run an experiment and write its CSV.
    Eval {
        #[arg(value_enum)]
        experiment: Experiment,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest neighbors of a hostname in a saved model.
    InspectModel {
        model: PathBuf,
        hostname: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Pcap,
    Tuples,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    TimeToProfile,
    Similarity,
    Throughput,
    Persona,
    All,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out } => run(config.as_deref(), out.as_deref()),
        Command::Bench { sizes, count, reps, out } => bench(&sizes, count, reps, out.as_deref()),
        Command::Synth { config, out, format } => synth(config.as_deref(), &out, format),
        Command::Eval { experiment, config, out } => run_eval(experiment, config.as_deref(), &out),
        Command::InspectModel { model, hostname, k } => inspect(&model, &hostname, k),
    }
}

fn run(config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        cfg.output = OutputConfig::in_dir(dir);
    }
    let result = pipeline::run(&cfg)?;
    let t = result.metrics.totals;
    println!("elapsed_secs      {:.3}", result.metrics.elapsed_secs);
    println!("packets_in        {}", t.packets_in);
    println!("matched           {}", t.matched);
    println!("filtered_out      {}", t.filtered_out);
    println!("parse_failures    {}", t.parse_failures);
    println!("truncated         {}", t.truncated);
    println!("tuples_out        {}", t.tuples_out);
    println!("dropped           {}", t.dropped);
    println!("sequences_emitted {}", t.sequences_emitted);
    println!("updates_applied   {}", t.updates_applied);
    println!("mean_loss         {:.6}", t.mean_loss());
    println!("profiles_emitted  {}", t.profiles_emitted);
    println!("vocabulary        {}", result.model.vocab().len());
    Ok(())
}

fn bench(sizes: &[usize], count: usize, reps: usize, out: Option<&Path>) -> Result<()> {
    if let Some(&s) = sizes.iter().find(|&&s| s < 54) {
        bail!("frame size {s} is below the 54-byte header minimum");
    }
    let rows = pipeline::bench_capture(sizes, count, reps, &[BenchMode::Discard, BenchMode::Parse])?;
    println!("{:>6} {:>8} {:>10} {:>9} {:>8}", "bytes", "mode", "packets", "Mp/s", "Gb/s");
    for r in &rows {
        let mode = match r.mode {
            BenchMode::Discard => "discard",
            BenchMode::Parse => "parse",
        };
        println!("{:>6} {:>8} {:>10} {:>9.3} {:>8.3}", r.bucket, mode, r.packets, r.mpps, r.gbps);
    }
    if let Some(p) = out {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        pipeline::write_bench_csv(BufWriter::new(f), &rows)?;
    }
    Ok(())
}

fn synth(config: Option<&Path>, out: &Path, format: TraceFormat) -> Result<()> {
    let spec = match config {
        Some(p) => load_world(p)?,
        None => WorldSpec::desk(),
    };
    fs::create_dir_all(out)?;
    let world = World::generate(&spec)?;
    let trace = world.generate_trace(Exec::Parallel);
    if format != TraceFormat::Tuples {
        trace.save_pcap(&world, out.join("trace.pcap"))?;
    }
    if format != TraceFormat::Pcap {
        trace.save_tuple_csv(&world, out.join("tuples.csv"))?;
    }
    let mut cats = BufWriter::new(File::create(out.join("categories.tsv"))?);
    world.store.write(&mut cats, &world.taxonomy)?;
    cats.flush()?;
    println!(
        "{} users, {} hostnames ({} labeled), {} requests",
        world.users.len(),
        world.hostnames.len(),
        world.labeled_count(),
        trace.len()
    );
    Ok(())
}

fn load_world(p: &Path) -> Result<WorldSpec> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing world spec {}", p.display()))
}

fn run_eval(experiment: Experiment, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => EvalConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => EvalConfig::default(),
    };
    fs::create_dir_all(out)?;
    let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(out.join(name))?)) };
    let all = experiment == Experiment::All;
    if all || experiment == Experiment::TimeToProfile {
        let rows = eval::eval_time_to_profile(&cfg)?;
        eval::write_time_to_profile(create("time_to_profile.csv")?, &rows)?;
        for r in &rows {
            println!(
                "time_to_profile fraction={} bucket={} model={:.1}% baseline={:.1}%",
                r.fraction, r.elapsed_bucket, r.pct_users_profiled_model, r.pct_users_profiled_baseline
            );
        }
    }
    if all || experiment == Experiment::Similarity {
        let rows = eval::eval_similarity(&cfg)?;
        eval::write_similarity(create("similarity.csv")?, &rows)?;
        for r in &rows {
            println!(
                "similarity fraction={} requests={} distance={:.4} users={}",
                r.fraction, r.requests_seen, r.mean_distance_to_reference, r.users
            );
        }
    }
    if all || experiment == Experiment::Throughput {
        let rows = eval::eval_throughput_vs_baseline(&cfg)?;
        eval::write_throughput(create("throughput.csv")?, &rows)?;
        for r in &rows {
            println!(
                "throughput bucket={} model={:.0}/s baseline={:.0}/s",
                r.bucket, r.tuples_per_sec_model, r.tuples_per_sec_baseline
            );
        }
        let model: Vec<f64> = rows.iter().map(|r| r.tuples_per_sec_model).collect();
        println!("throughput model_cv={:.4}", eval::coefficient_of_variation(&model));
    }
    if all || experiment == Experiment::Persona {
        let (reports, purity) = eval::eval_persona_profile(&cfg)?;
        eval::write_persona(create("persona.csv")?, &reports)?;
        println!("persona purity={purity:.4}");
        for r in &reports {
            let top: Vec<String> = r.top.iter().take(3).map(|(c, w)| format!("{c} {w:.3}")).collect();
            let flag = if r.below_confidence { " (below confidence)" } else { "" };
            println!("persona {} top1_ok={} top3: {}{flag}", r.persona, r.top1_matches(), top.join(", "));
        }
    }
    Ok(())
}

fn inspect(path: &Path, hostname: &str, k: usize) -> Result<()> {
    let model = EmbeddingModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    let Some(query) = model.embedding_of(hostname) else {
        bail!("{hostname} is not in the model vocabulary");
    };
    let mut scored: Vec<(f64, &str)> = model
        .vocab()
        .tokens()
        .filter(|&(_, t)| t != hostname)
        .filter_map(|(id, t)| model.embedding(id).ok().map(|v| (cosine(&query, &v), t)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    for (sim, host) in scored.into_iter().take(k) {
        println!("{sim:.4}\t{host}");
    }
    Ok(())
}
