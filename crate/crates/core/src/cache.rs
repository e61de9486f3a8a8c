//! Trace-driven set-associative LRU cache (single level).

use std::io::Write;

use crate::engine::{address_layout, stage_indices, LINE_BYTES};
use crate::error::{Error, Result};
use crate::workload::{ModelConfig, QueryBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    pub capacity: u64,
    pub ways: u64,
    pub line_size: u64,
}

impl CacheConfig {
    pub fn new(capacity: u64, ways: u64, line_size: u64) -> Result<Self> {
        for (key, v) in [("cache_bytes", capacity), ("cache_ways", ways), ("line_size", line_size)] {
            if !v.is_power_of_two() {
                return Err(Error::config(key, format!("must be a power of two, got {v}")));
            }
        }
        if capacity < ways * line_size {
            return Err(Error::config(
                "cache_bytes",
                format!("{capacity} B cannot hold {ways} ways of {line_size} B lines"),
            ));
        }
        Ok(CacheConfig { capacity, ways, line_size })
    }

    pub fn sets(&self) -> u64 {
        self.capacity / (self.ways * self.line_size)
    }

    pub fn lines(&self) -> u64 {
        self.capacity / self.line_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CacheStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_rate: f64,
    /// Misses per thousand accesses.
    pub mpka: f64,
}

impl CacheStats {
    fn from_counts(accesses: u64, hits: u64) -> Self {
        let misses = accesses - hits;
        let miss_rate = if accesses == 0 { 0.0 } else { misses as f64 / accesses as f64 };
        CacheStats { accesses, hits, misses, miss_rate, mpka: 1000.0 * miss_rate }
    }
}

/// Cache state. Each set keeps its tags most-recently-used first.
#[derive(Debug, Clone)]
pub struct Cache {
    config: CacheConfig,
    sets: Vec<Vec<u64>>,
    set_mask: u64,
    line_shift: u32,
    set_shift: u32,
    accesses: u64,
    hits: u64,
}

impl Cache {
    pub fn new(config: CacheConfig) -> Self {
        let sets = config.sets();
        Cache {
            config,
            sets: vec![Vec::with_capacity(config.ways as usize); sets as usize],
            set_mask: sets - 1,
            line_shift: config.line_size.trailing_zeros(),
            set_shift: sets.trailing_zeros(),
            accesses: 0,
            hits: 0,
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    /// Touches the line holding `addr`; true on a hit.
    pub fn access(&mut self, addr: u64) -> bool {
        let line = addr >> self.line_shift;
        let set = &mut self.sets[(line & self.set_mask) as usize];
        let tag = line >> self.set_shift;
        self.accesses += 1;
        if let Some(pos) = set.iter().position(|&t| t == tag) {
            set[..=pos].rotate_right(1);
            self.hits += 1;
            return true;
        }
        if set.len() as u64 == self.config.ways {
            set.pop();
        }
        set.insert(0, tag);
        false
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats::from_counts(self.accesses, self.hits)
    }

    /// Clears counters, keeps contents.
    pub fn reset_stats(&mut self) {
        self.accesses = 0;
        self.hits = 0;
    }
}

/// Runs `trace` on a cold cache.
pub fn simulate(trace: &[u64], config: &CacheConfig) -> CacheStats {
    let mut cache = Cache::new(*config);
    for &a in trace {
        cache.access(a);
    }
    cache.stats()
}

/// Runs `trace` once to warm the cache, then reports a second identical pass.
pub fn simulate_warm(trace: &[u64], config: &CacheConfig) -> CacheStats {
    let mut cache = Cache::new(*config);
    for &a in trace {
        cache.access(a);
    }
    cache.reset_stats();
    for &a in trace {
        cache.access(a);
    }
    cache.stats()
}

/// Line-aligned addresses of every gather in the batch, in gather-issue order.
pub fn trace_from_batch(cfg: &ModelConfig, batch: &QueryBatch) -> Result<Vec<u64>> {
    batch.validate(cfg)?;
    let regs = address_layout(cfg, batch);
    let lines = regs.row_bytes.div_ceil(LINE_BYTES);
    let mut out = Vec::with_capacity(batch.total_lookups() * lines as usize);
    if batch.batch_size == 0 {
        return Ok(out);
    }
    for fill in stage_indices(batch, usize::MAX)? {
        for ix in fill.iter() {
            let first = regs.row_address(ix.table, ix.row) / LINE_BYTES * LINE_BYTES;
            out.extend((0..lines).map(|i| first + i * LINE_BYTES));
        }
    }
    Ok(out)
}

/// Parses a trace: one hex address per line, optional `0x`, `#` comments.
pub fn parse_trace(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let digits = line
            .strip_prefix("0x")
            .or_else(|| line.strip_prefix("0X"))
            .unwrap_or(line);
        let addr = u64::from_str_radix(digits, 16).map_err(|_| Error::Parse {
            line: i + 1,
            reason: format!("`{line}` is not a hex address"),
        })?;
        out.push(addr);
    }
    Ok(out)
}

pub fn render_trace(trace: &[u64]) -> String {
    trace.iter().map(|a| format!("0x{a:x}\n")).collect()
}

/// Stats for one run; `batch` is empty for raw trace files.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheRow {
    pub batch: Option<usize>,
    pub stats: CacheStats,
}

pub fn write_stats_csv<W: Write>(rows: &[CacheRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["batch", "accesses", "hits", "misses", "miss_rate", "mpka"])?;
    for r in rows {
        let s = &r.stats;
        w.write_record([
            r.batch.map(|b| b.to_string()).unwrap_or_default(),
            s.accesses.to_string(),
            s.hits.to_string(),
            s.misses.to_string(),
            format!("{:?}", s.miss_rate),
            format!("{:?}", s.mpka),
        ])?;
    }
    w.flush()?;
    Ok(())
}
