use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

/// Shared counters updated by the pipeline stages.
#[derive(Debug, Default)]
pub struct Counters {
    pub packets_in: AtomicU64,
    pub bytes_in: AtomicU64,
    pub matched: AtomicU64,
    pub filtered_out: AtomicU64,
    pub parse_failures: AtomicU64,
    pub truncated: AtomicU64,
    pub source_errors: AtomicU64,
    pub tuples_out: AtomicU64,
    pub dropped: AtomicU64,
    pub sequences_emitted: AtomicU64,
    pub updates_applied: AtomicU64,
    pub degenerate: AtomicU64,
    pub profiles_emitted: AtomicU64,
    pub no_profile: AtomicU64,
    pub evicted_keys: AtomicU64,
    pub live_keys: AtomicU64,
    /// Sum of update losses, stored as f64 bits.
    loss_sum_bits: AtomicU64,
}

impl Counters {
    pub fn add(c: &AtomicU64, n: u64) {
        c.fetch_add(n, Relaxed);
    }

    /// Only the trainer writes this, so a load/store pair is enough.
    pub fn add_loss(&self, loss: f64) {
        let cur = f64::from_bits(self.loss_sum_bits.load(Relaxed));
        self.loss_sum_bits.store((cur + loss).to_bits(), Relaxed);
    }

    pub fn snapshot(&self) -> Totals {
        let g = |c: &AtomicU64| c.load(Relaxed);
        Totals {
            packets_in: g(&self.packets_in),
            bytes_in: g(&self.bytes_in),
            matched: g(&self.matched),
            filtered_out: g(&self.filtered_out),
            parse_failures: g(&self.parse_failures),
            truncated: g(&self.truncated),
            source_errors: g(&self.source_errors),
            tuples_out: g(&self.tuples_out),
            dropped: g(&self.dropped),
            sequences_emitted: g(&self.sequences_emitted),
            updates_applied: g(&self.updates_applied),
            degenerate: g(&self.degenerate),
            profiles_emitted: g(&self.profiles_emitted),
            no_profile: g(&self.no_profile),
            evicted_keys: g(&self.evicted_keys),
            live_keys: g(&self.live_keys),
            loss_sum: f64::from_bits(self.loss_sum_bits.load(Relaxed)),
        }
    }
}

/// Point-in-time copy of the counters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Totals {
    pub packets_in: u64,
    pub bytes_in: u64,
    pub matched: u64,
    pub filtered_out: u64,
    pub parse_failures: u64,
    pub truncated: u64,
    pub source_errors: u64,
    pub tuples_out: u64,
    pub dropped: u64,
    pub sequences_emitted: u64,
    pub updates_applied: u64,
    pub degenerate: u64,
    pub profiles_emitted: u64,
    pub no_profile: u64,
    pub evicted_keys: u64,
    pub live_keys: u64,
    pub loss_sum: f64,
}

impl Totals {
    /// Every packet read is accounted for by exactly one outcome.
    pub fn is_balanced(&self) -> bool {
        self.packets_in == self.matched + self.filtered_out + self.parse_failures + self.truncated
    }

    pub fn mean_loss(&self) -> f64 {
        if self.updates_applied == 0 {
            0.0
        } else {
            self.loss_sum / self.updates_applied as f64
        }
    }
}

/// One sampled metrics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    /// Seconds since the run started.
    pub ts: f64,
    pub totals: Totals,
    /// Queued items per stage: batches, shard tuples, trainer and profiler messages.
    pub channel_depths: [usize; 4],
}

pub const METRICS_HEADER: [&str; 22] = [
    "ts",
    "packets_in",
    "bytes_in",
    "matched",
    "filtered_out",
    "parse_failures",
    "truncated",
    "source_errors",
    "tuples_out",
    "dropped",
    "sequences_emitted",
    "updates_applied",
    "degenerate",
    "profiles_emitted",
    "no_profile",
    "evicted_keys",
    "live_keys",
    "mean_loss",
    "depth_batches",
    "depth_shards",
    "depth_trainer",
    "depth_profiler",
];

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        let t = &r.totals;
        let mut rec = vec![format!("{:.3}", r.ts)];
        rec.extend(
            [
                t.packets_in,
                t.bytes_in,
                t.matched,
                t.filtered_out,
                t.parse_failures,
                t.truncated,
                t.source_errors,
                t.tuples_out,
                t.dropped,
                t.sequences_emitted,
                t.updates_applied,
                t.degenerate,
                t.profiles_emitted,
                t.no_profile,
                t.evicted_keys,
                t.live_keys,
            ]
            .iter()
            .map(u64::to_string),
        );
        rec.push(t.mean_loss().to_string());
        rec.extend(r.channel_depths.iter().map(usize::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Final counters plus the per-second samples.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub totals: Totals,
    pub rows: Vec<MetricsRow>,
    pub elapsed_secs: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_rows() {
        let c = Counters::default();
        Counters::add(&c.packets_in, 3);
        Counters::add(&c.matched, 2);
        Counters::add(&c.filtered_out, 1);
        c.add_loss(1.5);
        Counters::add(&c.updates_applied, 3);
        let totals = c.snapshot();
        assert!(totals.is_balanced());
        assert_eq!(totals.mean_loss(), 0.5);
        let mut out = Vec::new();
        write_metrics_csv(&mut out, &[MetricsRow { ts: 1.0, totals, channel_depths: [0; 4] }]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        assert!(lines[1].starts_with("1.000,3,"));
    }
}
