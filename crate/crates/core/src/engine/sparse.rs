//! Sparse unit: index staging, gather issue and streaming reduction.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::events::{EventLog, Stage, Unit};
use super::regs::BasePointerRegs;
use crate::error::{Error, Result};
use crate::reference::ReducedEmbeddings;
use crate::workload::{Model, QueryBatch, INDEX_BYTES};

/// Gather granularity in bytes.
pub const LINE_BYTES: u64 = 64;

/// One staged sparse index with the segment it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagedIndex {
    pub sample: usize,
    pub table: usize,
    pub position: usize,
    pub row: u32,
}

/// Bounded FIFO of staged indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseIndexBuffer {
    capacity: usize,
    entries: VecDeque<StagedIndex>,
}

impl SparseIndexBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Invalid("index buffer capacity must be at least 1".into()));
        }
        Ok(SparseIndexBuffer { capacity, entries: VecDeque::with_capacity(capacity.min(1 << 16)) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Hands the entry back when the buffer is full.
    pub fn push(&mut self, entry: StagedIndex) -> std::result::Result<(), StagedIndex> {
        if self.is_full() {
            return Err(entry);
        }
        self.entries.push_back(entry);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<StagedIndex> {
        self.entries.pop_front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StagedIndex> {
        self.entries.iter()
    }
}

/// Splits the batch's index stream (sample, then table, then position) into
/// buffer fills of at most `capacity` entries.
pub fn stage_indices(batch: &QueryBatch, capacity: usize) -> Result<Vec<SparseIndexBuffer>> {
    let mut fills = Vec::new();
    let mut current = SparseIndexBuffer::new(capacity)?;
    let offsets: Vec<Vec<usize>> = batch.lookups.iter().map(|l| l.offsets()).collect();
    for sample in 0..batch.batch_size {
        for (table, lookups) in batch.lookups.iter().enumerate() {
            for (position, &row) in lookups.segment(&offsets[table], sample).iter().enumerate() {
                let entry = StagedIndex { sample, table, position, row };
                if let Err(entry) = current.push(entry) {
                    fills.push(std::mem::replace(&mut current, SparseIndexBuffer::new(capacity)?));
                    current.push(entry).expect("fresh buffer has room");
                }
            }
        }
    }
    if !current.is_empty() {
        fills.push(current);
    }
    Ok(fills)
}

/// One embedding-row read issued by the gather unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatherRequest {
    pub table: usize,
    pub sample: usize,
    pub position: usize,
    pub row: u32,
    /// `tables base + table offset + row * row_bytes`.
    pub address: u64,
    /// `ceil(row_bytes / 64)`.
    pub line_count: u32,
}

impl GatherRequest {
    /// Line-aligned addresses this request touches.
    pub fn line_addresses(&self) -> impl Iterator<Item = u64> {
        let first = self.address / LINE_BYTES * LINE_BYTES;
        (0..u64::from(self.line_count)).map(move |i| first + i * LINE_BYTES)
    }
}

pub fn line_count(row_bytes: u64) -> u32 {
    row_bytes.div_ceil(LINE_BYTES) as u32
}

/// Order in which outstanding gathers complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompletionOrder {
    /// Completions return in issue order.
    #[default]
    InOrder,
    /// Completions within each in-flight window return in a seeded random order.
    Shuffled(u64),
}

/// Deliberate faults for exercising the verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The `n`-th gather reads the row after the requested one (wrapping).
    OffByOneIndex { request: usize },
}

/// A completed gather: the request and the row it returned.
#[derive(Debug, Clone, Copy)]
pub struct Gathered<'a> {
    pub request: GatherRequest,
    pub row: &'a [f32],
}

/// Result of draining one buffer fill through the gather unit.
#[derive(Debug)]
pub struct GatherStream<'a> {
    /// Completions in arrival order.
    pub completions: Vec<Gathered<'a>>,
    /// Largest number of requests outstanding at once.
    pub peak_inflight: usize,
}

/// Issues one request per staged index, keeping at most `max_inflight`
/// outstanding. The buffer is drained.
pub fn gather_stream<'a>(
    regs: &BasePointerRegs,
    model: &'a Model,
    buffer: &mut SparseIndexBuffer,
    max_inflight: usize,
    order: CompletionOrder,
    fault: Option<(Fault, usize)>,
) -> Result<GatherStream<'a>> {
    if max_inflight == 0 {
        return Err(Error::Invalid("max_inflight must be at least 1".into()));
    }
    let rows = model.config.rows_per_table;
    let lines = line_count(regs.row_bytes);
    let mut rng = match order {
        CompletionOrder::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        CompletionOrder::InOrder => None,
    };
    // `fault` carries the fault plus the global index of this fill's first request.
    let mut issued = fault.map_or(0, |(_, first)| first);
    let mut completions = Vec::with_capacity(buffer.len());
    let mut window: Vec<Gathered<'a>> = Vec::with_capacity(max_inflight);
    let mut peak = 0usize;
    loop {
        while window.len() < max_inflight {
            let Some(ix) = buffer.pop() else { break };
            if ix.row as usize >= rows || ix.table >= model.tables.len() {
                return Err(Error::IndexOutOfRange {
                    table: ix.table,
                    segment: ix.sample,
                    position: ix.position,
                    row: u64::from(ix.row),
                    rows: rows as u64,
                });
            }
            let mut row = ix.row;
            if let Some((Fault::OffByOneIndex { request }, _)) = fault {
                if request == issued {
                    row = ((row as usize + 1) % rows) as u32;
                }
            }
            issued += 1;
            let request = GatherRequest {
                table: ix.table,
                sample: ix.sample,
                position: ix.position,
                row: ix.row,
                address: regs.row_address(ix.table, ix.row),
                line_count: lines,
            };
            window.push(Gathered { request, row: model.tables[ix.table].row(row as usize) });
        }
        if window.is_empty() {
            break;
        }
        peak = peak.max(window.len());
        if let Some(rng) = rng.as_mut() {
            window.shuffle(rng);
        }
        completions.append(&mut window);
    }
    Ok(GatherStream { completions, peak_inflight: peak })
}

/// Accumulator for one (sample, table) segment.
#[derive(Debug, Default)]
struct Segment {
    next: usize,
    /// Arrivals ahead of `next`, keyed by position.
    pending: BTreeMap<usize, usize>,
}

/// In-place reduction unit. Arrivals may come in any order; each segment is
/// accumulated in ascending position order.
#[derive(Debug)]
pub struct ReductionUnit<'a> {
    lengths: Vec<u32>,
    tables: usize,
    out: ReducedEmbeddings,
    segments: Vec<Segment>,
    parked: Vec<&'a [f32]>,
    free: Vec<usize>,
}

impl<'a> ReductionUnit<'a> {
    /// `lengths` holds one entry per (sample, table), sample-major.
    pub fn new(batch: usize, tables: usize, dim: usize, lengths: Vec<u32>) -> Result<Self> {
        if lengths.len() != batch * tables {
            return Err(Error::StreamMismatch(format!(
                "{} segment lengths for {batch} samples x {tables} tables",
                lengths.len()
            )));
        }
        Ok(ReductionUnit {
            segments: (0..lengths.len()).map(|_| Segment::default()).collect(),
            lengths,
            tables,
            out: ReducedEmbeddings::zeros(batch, tables, dim),
            parked: Vec::new(),
            free: Vec::new(),
        })
    }

    pub fn accept(&mut self, g: Gathered<'a>) -> Result<()> {
        let r = g.request;
        let seg_id = r.sample * self.tables + r.table;
        if r.table >= self.tables || seg_id >= self.segments.len() {
            return Err(Error::StreamMismatch(format!(
                "arrival for sample {}, table {} outside the batch",
                r.sample, r.table
            )));
        }
        let len = self.lengths[seg_id] as usize;
        let seg = &mut self.segments[seg_id];
        if r.position >= len || r.position < seg.next || seg.pending.contains_key(&r.position) {
            return Err(Error::StreamMismatch(format!(
                "unexpected or duplicate arrival: sample {}, table {}, position {} (segment length {len})",
                r.sample, r.table, r.position
            )));
        }
        if g.row.len() != self.out.dim() {
            return Err(Error::StreamMismatch(format!(
                "row of width {} for embedding width {}",
                g.row.len(),
                self.out.dim()
            )));
        }
        if r.position != seg.next {
            let slot = match self.free.pop() {
                Some(s) => {
                    self.parked[s] = g.row;
                    s
                }
                None => {
                    self.parked.push(g.row);
                    self.parked.len() - 1
                }
            };
            seg.pending.insert(r.position, slot);
            return Ok(());
        }
        let acc = self.out.get_mut(r.sample, r.table);
        add(acc, g.row);
        seg.next += 1;
        while let Some(slot) = seg.pending.remove(&seg.next) {
            add(acc, self.parked[slot]);
            self.free.push(slot);
            seg.next += 1;
        }
        Ok(())
    }

    /// Errors when any segment is still missing arrivals.
    pub fn finish(self) -> Result<ReducedEmbeddings> {
        for (i, seg) in self.segments.iter().enumerate() {
            let len = self.lengths[i] as usize;
            if seg.next != len {
                return Err(Error::StreamMismatch(format!(
                    "sample {}, table {}: {} of {len} rows reduced",
                    i / self.tables,
                    i % self.tables,
                    seg.next
                )));
            }
        }
        Ok(self.out)
    }
}

fn add(acc: &mut [f32], row: &[f32]) {
    for (a, v) in acc.iter_mut().zip(row) {
        *a += v;
    }
}

/// Per-(sample, table) lengths in sample-major order.
pub fn segment_lengths(batch: &QueryBatch) -> Vec<u32> {
    let mut out = Vec::with_capacity(batch.batch_size * batch.lookups.len());
    for s in 0..batch.batch_size {
        for l in &batch.lookups {
            out.push(l.lengths[s]);
        }
    }
    out
}

/// Reduces a complete stream against `lengths` (sample-major per table).
pub fn streaming_reduce<'a>(
    stream: impl IntoIterator<Item = Gathered<'a>>,
    batch: usize,
    tables: usize,
    dim: usize,
    lengths: Vec<u32>,
) -> Result<ReducedEmbeddings> {
    let mut unit = ReductionUnit::new(batch, tables, dim, lengths)?;
    for g in stream {
        unit.accept(g)?;
    }
    unit.finish()
}

/// Options for the sparse unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparseOptions {
    pub spid_capacity: usize,
    pub max_inflight: usize,
    pub completion: CompletionOrder,
    pub fault: Option<Fault>,
}

impl Default for SparseOptions {
    fn default() -> Self {
        SparseOptions {
            spid_capacity: 4096,
            max_inflight: 64,
            completion: CompletionOrder::InOrder,
            fault: None,
        }
    }
}

/// What the sparse unit hands on besides its events.
#[derive(Debug)]
pub struct SparseRun {
    pub reduced: ReducedEmbeddings,
    pub requests: Vec<GatherRequest>,
    pub peak_inflight: usize,
}

/// Stages, gathers and reduces the whole batch, logging index fills (IDX),
/// one event per gather request and per reduced segment (EMB).
pub fn run_sparse(
    regs: &BasePointerRegs,
    model: &Model,
    batch: &QueryBatch,
    opts: &SparseOptions,
    log: &mut EventLog,
) -> Result<SparseRun> {
    let cfg = &model.config;
    let fills = stage_indices(batch, opts.spid_capacity)?;
    log.enter(Stage::Idx);
    for fill in &fills {
        log.push(Stage::Idx, Unit::Spid, (fill.len() * INDEX_BYTES) as u64, 0);
    }

    log.enter(Stage::Emb);
    let mut unit = ReductionUnit::new(batch.batch_size, cfg.num_tables, cfg.embedding_dim, segment_lengths(batch))?;
    let mut requests = Vec::with_capacity(batch.total_lookups());
    let mut peak = 0;
    let mut issued = 0usize;
    for (i, mut fill) in fills.into_iter().enumerate() {
        let order = match opts.completion {
            CompletionOrder::Shuffled(seed) => CompletionOrder::Shuffled(seed.wrapping_add(i as u64)),
            o => o,
        };
        let n = fill.len();
        let stream = gather_stream(regs, model, &mut fill, opts.max_inflight, order, opts.fault.map(|f| (f, issued)))?;
        issued += n;
        peak = peak.max(stream.peak_inflight);
        for g in stream.completions {
            log.push(Stage::Emb, Unit::Ebgu, regs.row_bytes, 0);
            requests.push(g.request);
            unit.accept(g)?;
        }
    }
    let reduced = unit.finish()?;
    let dim = cfg.embedding_dim as u64;
    for s in 0..batch.batch_size {
        for l in &batch.lookups {
            log.push(Stage::Emb, Unit::Ebru, 0, u64::from(l.lengths[s]) * dim);
        }
    }
    Ok(SparseRun { reduced, requests, peak_inflight: peak })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::regs::load_base_pointers;
    use crate::reference::reduce_all;
    use crate::tensor::relative_error;
    use crate::workload::{build_model, generate_batch, IndexDistribution, ModelConfig, Preset};

    fn setup(cfg: &ModelConfig, b: usize) -> (Model, QueryBatch) {
        let model = build_model(cfg, 3).unwrap();
        let batch = generate_batch(cfg, b, IndexDistribution::Uniform, 4).unwrap();
        (model, batch)
    }

    fn small_cfg(t: usize, l: usize, d: usize) -> ModelConfig {
        let mut cfg = Preset::by_name("dlrm1").unwrap().config_scaled(4096).unwrap();
        cfg.num_tables = t;
        cfg.gathers_per_table = l;
        cfg.embedding_dim = d;
        cfg.rows_per_table = 8;
        *cfg.bottom_mlp_dims.last_mut().unwrap() = d;
        cfg.top_mlp_dims[0] = crate::workload::interaction_width(t, d);
        cfg
    }

    fn entry(i: usize) -> StagedIndex {
        StagedIndex { sample: 0, table: 0, position: i, row: i as u32 }
    }

    #[test]
    fn buffer_is_bounded_fifo() {
        let mut b = SparseIndexBuffer::new(2).unwrap();
        b.push(entry(0)).unwrap();
        b.push(entry(1)).unwrap();
        assert_eq!(b.push(entry(2)), Err(entry(2)));
        assert_eq!(b.pop(), Some(entry(0)));
        assert_eq!(b.pop(), Some(entry(1)));
        assert_eq!(b.pop(), None);
        assert!(SparseIndexBuffer::new(0).is_err());
    }

    #[test]
    fn fill_sizes_follow_ceiling() {
        let cfg = small_cfg(1, 10, 4);
        let (_, batch) = setup(&cfg, 1);
        let sizes: Vec<usize> = stage_indices(&batch, 4).unwrap().iter().map(|f| f.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(stage_indices(&batch, 10).unwrap().len(), 1);
        assert_eq!(stage_indices(&batch, 1000).unwrap().len(), 1);
    }

    #[test]
    fn fills_concatenate_to_flat_stream() {
        let cfg = small_cfg(3, 5, 4);
        let (_, batch) = setup(&cfg, 2);
        let fills = stage_indices(&batch, 7).unwrap();
        assert_eq!(fills.len(), 5);
        let rows: Vec<u32> = fills.iter().flat_map(|f| f.iter().map(|e| e.row)).collect();
        assert_eq!(rows.len(), 30);
        assert_eq!(rows, batch.flat_indices());
    }

    #[test]
    fn line_counts() {
        assert_eq!(line_count(32 * 4), 2);
        assert_eq!(line_count(16 * 4), 1);
        assert_eq!(line_count(1), 1);
    }

    #[test]
    fn gathers_return_exact_rows_within_inflight_limit() {
        let cfg = small_cfg(2, 6, 16);
        let (model, batch) = setup(&cfg, 5);
        let regs = load_base_pointers(&model, &batch).unwrap();
        let mut fill = stage_indices(&batch, 1000).unwrap().remove(0);
        let stream = gather_stream(&regs, &model, &mut fill, 4, CompletionOrder::InOrder, None).unwrap();
        assert_eq!(stream.completions.len(), 60);
        assert_eq!(stream.peak_inflight, 4);
        for g in &stream.completions {
            let r = g.request;
            assert_eq!(g.row, model.tables[r.table].row(r.row as usize));
            assert_eq!(r.line_count, 1);
            assert_eq!(r.address, regs.row_address(r.table, r.row));
        }
        assert!(fill.is_empty());
    }

    #[test]
    fn dlrm4_single_sample_issues_4000_gathers() {
        let cfg = Preset::by_name("dlrm4").unwrap().config_scaled(1 << 16).unwrap();
        let (model, batch) = setup(&cfg, 1);
        let regs = load_base_pointers(&model, &batch).unwrap();
        let mut log = EventLog::default();
        let run = run_sparse(&regs, &model, &batch, &SparseOptions::default(), &mut log).unwrap();
        assert_eq!(run.requests.len(), 4000);
        assert!(run.requests.iter().all(|r| r.line_count == 2));
        assert!(run.peak_inflight <= 64);
    }

    #[test]
    fn reduce_passthrough_and_sum() {
        let rows = [[1.0f32, 2.0], [3.0, 5.0]];
        let req = |position, row| GatherRequest { table: 0, sample: 0, position, row, address: 0, line_count: 1 };
        let one = streaming_reduce([Gathered { request: req(0, 0), row: &rows[0] }], 1, 1, 2, vec![1]).unwrap();
        assert_eq!(one.get(0, 0), &rows[0]);
        let two = streaming_reduce(
            [Gathered { request: req(1, 1), row: &rows[1] }, Gathered { request: req(0, 0), row: &rows[0] }],
            1,
            1,
            2,
            vec![2],
        )
        .unwrap();
        assert_eq!(two.get(0, 0), &[4.0, 7.0]);
    }

    #[test]
    fn reduce_detects_mismatch() {
        let row = [1.0f32];
        let req = |position| GatherRequest { table: 0, sample: 0, position, row: 0, address: 0, line_count: 1 };
        let g = |p| Gathered { request: req(p), row: &row };
        assert!(matches!(streaming_reduce([g(0)], 1, 1, 1, vec![2]), Err(Error::StreamMismatch(_))));
        assert!(matches!(streaming_reduce([g(0), g(0)], 1, 1, 1, vec![2]), Err(Error::StreamMismatch(_))));
        assert!(matches!(streaming_reduce([g(3)], 1, 1, 1, vec![2]), Err(Error::StreamMismatch(_))));
        assert!(streaming_reduce([g(0)], 1, 1, 1, vec![1, 1]).is_err());
    }

    #[test]
    fn dlrm1_shaped_reduction_matches_reference() {
        let cfg = Preset::by_name("dlrm1").unwrap().config_scaled(64).unwrap();
        let (model, batch) = setup(&cfg, 16);
        let regs = load_base_pointers(&model, &batch).unwrap();
        let want = reduce_all(&model, &batch).unwrap();
        for order in [CompletionOrder::InOrder, CompletionOrder::Shuffled(11)] {
            let opts = SparseOptions { spid_capacity: 100, max_inflight: 7, completion: order, fault: None };
            let run = run_sparse(&regs, &model, &batch, &opts, &mut EventLog::default()).unwrap();
            for (a, b) in run.reduced.as_slice().iter().zip(want.as_slice()) {
                assert!(relative_error(*a, *b) <= 1e-6);
            }
            // Position-ordered accumulation makes arrival order irrelevant.
            assert_eq!(run.reduced, want);
        }
    }

    #[test]
    fn fault_changes_exactly_one_segment() {
        let cfg = small_cfg(2, 3, 4);
        let (model, batch) = setup(&cfg, 2);
        let regs = load_base_pointers(&model, &batch).unwrap();
        let opts = SparseOptions { fault: Some(Fault::OffByOneIndex { request: 7 }), spid_capacity: 5, ..Default::default() };
        let run = run_sparse(&regs, &model, &batch, &opts, &mut EventLog::default()).unwrap();
        let want = reduce_all(&model, &batch).unwrap();
        // Request 7 is sample 1, table 0, position 1.
        let differing: Vec<(usize, usize)> = (0..2)
            .flat_map(|s| (0..2).map(move |t| (s, t)))
            .filter(|&(s, t)| run.reduced.get(s, t) != want.get(s, t))
            .collect();
        assert_eq!(differing, vec![(1, 0)]);
    }
}
