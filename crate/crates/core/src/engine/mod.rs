//! Functional model of the accelerator: sparse gather/reduce unit plus dense
//! tiled-GEMM unit, producing the same results as [`crate::reference`] and an
//! event log for the timing model.

pub mod dense;
pub mod events;
pub mod regs;
pub mod sparse;

use crate::error::Result;
use crate::reference::{sigmoid, InferenceOutput, ReducedEmbeddings};
use crate::tensor::Matrix;
use crate::workload::{Layer, Model, QueryBatch};

pub use dense::{plan_tiles, plan_tiles_on, tiled_gemm, PeGrid, TileOp, TileSchedule, INTERACTION_GRID, MLP_GRID, TILE};
pub use events::{Event, EventLog, LogMeta, LogSummary, Stage, Unit, TILE_FLOPS};
pub use regs::{address_layout, load_base_pointers, BasePointerRegs, Handle};
pub use sparse::{
    gather_stream, line_count, stage_indices, streaming_reduce, CompletionOrder, Fault, GatherRequest,
    Gathered, SparseIndexBuffer, SparseOptions, StagedIndex, LINE_BYTES,
};

/// Everything one accelerated inference produces.
#[derive(Debug)]
pub struct AcceleratedRun {
    pub output: InferenceOutput,
    pub reduced: ReducedEmbeddings,
    pub log: EventLog,
    /// Gather requests in arrival order.
    pub requests: Vec<GatherRequest>,
    pub peak_inflight: usize,
}

/// Runs the accelerator with default sparse-unit options.
pub fn infer_accelerated(model: &Model, batch: &QueryBatch) -> Result<AcceleratedRun> {
    infer_accelerated_with(model, batch, &SparseOptions::default())
}

pub fn infer_accelerated_with(model: &Model, batch: &QueryBatch, opts: &SparseOptions) -> Result<AcceleratedRun> {
    let cfg = &model.config;
    model.validate()?;
    batch.validate(cfg)?;
    let mut log = EventLog::new(LogMeta {
        model: cfg.name.clone(),
        batch: batch.batch_size as u64,
        tables: cfg.num_tables as u64,
        row_bytes: cfg.row_bytes() as u64,
        max_inflight: opts.max_inflight as u64,
    });

    log.enter(Stage::Setup);
    let regs = load_base_pointers(model, batch)?;
    log.push(Stage::Setup, Unit::Bpr, 0, 0);

    let sparse = sparse::run_sparse(&regs, model, batch, opts, &mut log)?;

    log.enter(Stage::Dnf);
    log.push(Stage::Dnf, Unit::Dma, regs.dense.bytes, 0);

    let b = batch.batch_size;
    let mut probabilities = Vec::new();
    if b > 0 {
        log.enter(Stage::BottomMlp);
        let x = Matrix::from_vec(b, cfg.dense_feature_dim, batch.dense_features.clone())?.transpose();
        let bottom = run_mlp(&model.bottom, x, cfg.hidden_activation, Stage::BottomMlp, &mut log)?;

        log.enter(Stage::Interaction);
        let inter = interaction(&bottom, &sparse.reduced, &mut log)?;

        log.enter(Stage::TopMlp);
        let logits = run_mlp(&model.top, inter, cfg.hidden_activation, Stage::TopMlp, &mut log)?;

        log.enter(Stage::Output);
        probabilities = logits.row(0).iter().map(|&z| sigmoid(z)).collect();
        log.push(Stage::Output, Unit::Sigmoid, 0, b as u64);
    } else {
        for stage in [Stage::BottomMlp, Stage::Interaction, Stage::TopMlp, Stage::Output] {
            log.enter(stage);
        }
    }
    Ok(AcceleratedRun {
        output: InferenceOutput { probabilities },
        reduced: sparse.reduced,
        log,
        requests: sparse.requests,
        peak_inflight: sparse.peak_inflight,
    })
}

/// `Y = act(W X + b)` per layer with `X` as `in x B`; last layer affine only.
fn run_mlp(layers: &[Layer], mut x: Matrix, act: crate::workload::Activation, stage: Stage, log: &mut EventLog) -> Result<Matrix> {
    for (i, layer) in layers.iter().enumerate() {
        let schedule = plan_tiles(layer.out_dim(), x.cols(), layer.in_dim())?;
        log.push(stage, Unit::Dispatch, 0, 0);
        for op in &schedule.ops {
            log.push(stage, Unit::MlpPe(op.pe as u8), 0, schedule.raw_flops(op));
        }
        let mut y = tiled_gemm(&layer.weights, &x, &schedule)?;
        let last = i + 1 == layers.len();
        for (o, &bias) in layer.bias.iter().enumerate() {
            for v in y.row_mut(o) {
                *v += bias;
                if !last {
                    *v = act.apply(*v);
                }
            }
        }
        x = y;
    }
    Ok(x)
}

/// Batched interaction: per sample `G = V Vᵀ` on the interaction grid, then the
/// strict lower triangle and the bottom output. Returns `width x B`.
fn interaction(bottom: &Matrix, reduced: &ReducedEmbeddings, log: &mut EventLog) -> Result<Matrix> {
    let (t, d, b) = (reduced.tables(), reduced.dim(), reduced.batch());
    let width = t * (t + 1) / 2 + d;
    let schedule = plan_tiles_on(t + 1, t + 1, d, INTERACTION_GRID)?;
    log.push(Stage::Interaction, Unit::Dispatch, 0, 0);
    let mut out = Matrix::zeros(width, b);
    let mut v = Matrix::zeros(t + 1, d);
    for s in 0..b {
        for k in 0..d {
            v.set(0, k, bottom.get(k, s));
        }
        for table in 0..t {
            v.row_mut(table + 1).copy_from_slice(reduced.get(s, table));
        }
        for op in &schedule.ops {
            log.push(Stage::Interaction, Unit::IntPe(op.pe as u8), 0, schedule.raw_flops(op));
        }
        let g = tiled_gemm(&v, &v.transpose(), &schedule)?;
        let mut row = 0;
        for i in 1..=t {
            for j in 0..i {
                out.set(row, s, g.get(i, j));
                row += 1;
            }
        }
        for k in 0..d {
            out.set(row + k, s, v.get(0, k));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{self, tests::fixture};
    use crate::tensor::relative_error;
    use crate::workload::{build_model, generate_batch, IndexDistribution, Preset, INDEX_BYTES};

    #[test]
    fn fixture_matches_reference() {
        let (model, batch) = fixture();
        let run = infer_accelerated(&model, &batch).unwrap();
        let want = reference::infer(&model, &batch).unwrap();
        assert_eq!(run.output, want);
        run.log.require_complete().unwrap();
    }

    #[test]
    fn log_accounts_bytes_and_flops() {
        let cfg = Preset::by_name("dlrm3").unwrap().config_scaled(1024).unwrap();
        let model = build_model(&cfg, 1).unwrap();
        let b = 5;
        let batch = generate_batch(&cfg, b, IndexDistribution::Uniform, 2).unwrap();
        let run = infer_accelerated(&model, &batch).unwrap();
        let s = run.log.summary();
        let (t, l, d) = (cfg.num_tables, cfg.gathers_per_table, cfg.embedding_dim);
        assert_eq!(s.gather_bytes, (b * t * l * d * 4) as u64);
        assert_eq!(s.index_bytes, (b * t * l * INDEX_BYTES) as u64);
        assert_eq!(s.dense_bytes, (b * cfg.dense_feature_dim * 4) as u64);
        let logged: u64 = run.log.events().iter().map(|e| e.bytes).sum();
        assert_eq!(logged, s.total_bytes());

        let mut raw = 0u64;
        let mut tiles = 0u64;
        for dims in [&cfg.bottom_mlp_dims, &cfg.top_mlp_dims] {
            for w in dims.windows(2) {
                raw += 2 * (w[1] * b * w[0]) as u64;
                tiles += (w[1].div_ceil(32) * b.div_ceil(32) * w[0].div_ceil(32)) as u64;
            }
        }
        assert_eq!(s.mlp_flops, raw);
        assert_eq!(s.padded_mlp_flops(), tiles * TILE_FLOPS);
        assert_eq!(s.interaction_flops, (b * 2 * (t + 1) * (t + 1) * d) as u64);
        assert_eq!(s.gemm_calls, (cfg.bottom_mlp_dims.len() - 1 + cfg.top_mlp_dims.len() - 1 + 1) as u64);
        assert!(run.log.events().windows(2).all(|w| w[1].seq == w[0].seq + 1));
    }

    #[test]
    fn empty_batch_runs_all_stages() {
        let cfg = Preset::by_name("dlrm1").unwrap().config_scaled(4096).unwrap();
        let model = build_model(&cfg, 1).unwrap();
        let run = infer_accelerated(&model, &crate::workload::QueryBatch::empty(&cfg)).unwrap();
        assert!(run.output.probabilities.is_empty());
        run.log.require_complete().unwrap();
        assert_eq!(run.log.summary().total_bytes(), 0);
    }

    #[test]
    fn preset_shaped_run_matches_reference() {
        let cfg = Preset::by_name("dlrm2").unwrap().config_scaled(1 << 14).unwrap();
        let model = build_model(&cfg, 7).unwrap();
        let batch = generate_batch(&cfg, 33, IndexDistribution::Zipf(1.05), 8).unwrap();
        let run = infer_accelerated(&model, &batch).unwrap();
        let want = reference::infer(&model, &batch).unwrap();
        for (a, b) in run.output.probabilities.iter().zip(&want.probabilities) {
            assert!(relative_error(*a, *b) <= 1e-4, "{a} vs {b}");
        }
    }
}
