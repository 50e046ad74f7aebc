use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::ModelConfig;
use crate::filter::FilterSpec;
use crate::par::Exec;
use crate::profiling::{DistanceMetric, Similarity};
use crate::splitter::KeySpec;
use crate::synth::WorldSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthFormat {
    /// Frames through capture, filter and tuple generation.
    #[default]
    Pcap,
    Tuples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Pcap {
        path: PathBuf,
    },
    TupleCsv {
        path: PathBuf,
    },
    /// Generated from the config's `world`.
    Synth {
        #[serde(default)]
        format: SynthFormat,
    },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Synth { format: SynthFormat::Pcap }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backpressure {
    /// Senders wait for room.
    #[default]
    Block,
    /// Full shard channels drop the tuple and count it.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum ProfileTrigger {
    /// Profile the user on every request.
    #[default]
    PerRequest,
    /// Profile a user on every `every`-th request of theirs (the first
    /// request always triggers).
    Every {
        every: u64,
    },
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilerConfig {
    pub k: usize,
    /// Training updates between model snapshots handed to the profiler.
    pub snapshot_interval: u64,
    pub trigger: ProfileTrigger,
    pub similarity: Similarity,
    pub distance: DistanceMetric,
    /// Category TSV; for synthetic sources the world's labels are used when absent.
    pub categories: Option<PathBuf>,
    /// Taxonomy file; the bundled IAB tier-1 list when absent.
    pub taxonomy: Option<PathBuf>,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        ProfilerConfig {
            k: 10,
            snapshot_interval: 1000,
            trigger: ProfileTrigger::PerRequest,
            similarity: Similarity::Cosine,
            distance: DistanceMetric::TotalVariation,
            categories: None,
            taxonomy: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub metrics: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl OutputConfig {
    /// `metrics.csv`, `profiles.csv` and `model.nv2v` under `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        OutputConfig {
            metrics: Some(dir.join("metrics.csv")),
            profiles: Some(dir.join("profiles.csv")),
            model: Some(dir.join("model.nv2v")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub source: SourceConfig,
    pub filter: FilterSpec,
    pub key: KeySpec,
    pub queue_size: usize,
    pub stride: usize,
    pub shards: usize,
    pub ttl_seconds: u64,
    pub max_keys: usize,
    pub channel_capacity: usize,
    /// Packets per parse batch.
    pub batch_size: usize,
    pub backpressure: Backpressure,
    pub exec: Exec,
    /// Pace replay by trace timestamps.
    pub realtime: bool,
    /// Trace seconds per wall-clock second when `realtime` is set.
    pub realtime_speedup: f64,
    pub model: ModelConfig,
    pub profiler: ProfilerConfig,
    pub output: OutputConfig,
    pub world: Option<WorldSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            source: SourceConfig::default(),
            filter: FilterSpec::tcp_ports(&[80, 443]),
            key: KeySpec::src_ip(),
            queue_size: 16,
            stride: 1,
            shards: 1,
            ttl_seconds: 3600,
            max_keys: 1 << 20,
            channel_capacity: 1024,
            batch_size: 256,
            backpressure: Backpressure::Block,
            exec: Exec::Parallel,
            realtime: false,
            realtime_speedup: 1.0,
            model: ModelConfig::default(),
            profiler: ProfilerConfig::default(),
            output: OutputConfig::default(),
            world: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        PipelineConfig::from_json(&std::fs::read_to_string(path)?)
    }

    /// World used by synthetic sources.
    pub fn world_spec(&self) -> WorldSpec {
        self.world.clone().unwrap_or_else(WorldSpec::desk)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.queue_size < 2 {
            return bad("queue_size must be at least 2");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if self.shards == 0 || self.shards > 1024 {
            return bad("shards must be in 1..=1024");
        }
        if self.max_keys == 0 {
            return bad("max_keys must be positive");
        }
        if self.channel_capacity == 0 || self.batch_size == 0 {
            return bad("channel_capacity and batch_size must be positive");
        }
        if !(self.realtime_speedup.is_finite() && self.realtime_speedup > 0.0) {
            return bad("realtime_speedup must be positive");
        }
        if self.profiler.k == 0 {
            return bad("profiler.k must be at least 1");
        }
        if self.profiler.snapshot_interval == 0 {
            return bad("profiler.snapshot_interval must be positive");
        }
        if let ProfileTrigger::Every { every: 0 } = self.profiler.trigger {
            return bad("profiler.trigger.every must be positive");
        }
        self.filter.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{what} {} does not exist", p.display())))
            }
        };
        match &self.source {
            SourceConfig::Pcap { path } => must_exist(path, "pcap")?,
            SourceConfig::TupleCsv { path } => must_exist(path, "tuple log")?,
            SourceConfig::Synth { .. } => {
                self.world_spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        if let Some(p) = &self.profiler.categories {
            must_exist(p, "category file")?;
        }
        if let Some(p) = &self.profiler.taxonomy {
            must_exist(p, "taxonomy file")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn json_sections() {
        let cfg = PipelineConfig::from_json(
            r#"{
                "source": {"type": "synth", "format": "tuples"},
                "filter": {"proto": "tcp", "dst_ports": [80, 443]},
                "key": ["src_ip"],
                "queue_size": 4,
                "stride": 1,
                "ttl_seconds": 60,
                "max_keys": 100,
                "shards": 2,
                "model": {"dim": 8, "seed": 3},
                "profiler": {"k": 5, "snapshot_interval": 10, "trigger": {"mode": "every", "every": 3}},
                "output": {"profiles": "p.csv"}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.queue_size, 4);
        assert_eq!(cfg.model.dim, 8);
        assert_eq!(cfg.model.lr, 0.025);
        assert_eq!(cfg.profiler.trigger, ProfileTrigger::Every { every: 3 });
        assert_eq!(cfg.source, SourceConfig::Synth { format: SynthFormat::Tuples });
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_json(r#"{"unknown": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"filter": {"dst_ports": []}}"#)
            .map(|c| c.validate().is_err())
            .unwrap_or(true));
        let cfg = PipelineConfig { queue_size: 1, ..PipelineConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            source: SourceConfig::Pcap { path: "/nonexistent/trace.pcap".into() },
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
