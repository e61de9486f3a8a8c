//! Dense unit: output-stationary tiled GEMM over a grid of processing engines.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Tile edge in elements.
pub const TILE: usize = 32;

/// Processing-engine grid; output tile `(m, n)` runs on PE `(m mod rows, n mod cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeGrid {
    pub rows: usize,
    pub cols: usize,
}

/// The 16 MLP engines.
pub const MLP_GRID: PeGrid = PeGrid { rows: 4, cols: 4 };
/// The 4 interaction engines.
pub const INTERACTION_GRID: PeGrid = PeGrid { rows: 2, cols: 2 };

impl PeGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn assign(&self, m: usize, n: usize) -> usize {
        (m % self.rows) * self.cols + n % self.cols
    }
}

/// One outer-product step: output tile `(m, n)` accumulates `A[m, k] * B[k, n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileOp {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub pe: usize,
}

/// Tile order for an `M x K` by `K x N` product: `(m, n)` major, `k` ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSchedule {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub grid: PeGrid,
    pub ops: Vec<TileOp>,
}

impl TileSchedule {
    pub fn tiles_m(&self) -> usize {
        self.m.div_ceil(TILE)
    }

    pub fn tiles_n(&self) -> usize {
        self.n.div_ceil(TILE)
    }

    pub fn tiles_k(&self) -> usize {
        self.k.div_ceil(TILE)
    }

    /// Multiply-add FLOPs of `op` over the unpadded region.
    pub fn raw_flops(&self, op: &TileOp) -> u64 {
        let span = |idx: usize, total: usize| (total - idx * TILE).min(TILE) as u64;
        2 * span(op.m, self.m) * span(op.n, self.n) * span(op.k, self.k)
    }
}

/// Plans a GEMM on the MLP grid.
pub fn plan_tiles(m: usize, n: usize, k: usize) -> Result<TileSchedule> {
    plan_tiles_on(m, n, k, MLP_GRID)
}

pub fn plan_tiles_on(m: usize, n: usize, k: usize, grid: PeGrid) -> Result<TileSchedule> {
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::Shape(format!("GEMM dims must be >= 1, got {m}x{n}x{k}")));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("PE grid is empty".into()));
    }
    let (tm, tn, tk) = (m.div_ceil(TILE), n.div_ceil(TILE), k.div_ceil(TILE));
    let mut ops = Vec::with_capacity(tm * tn * tk);
    for mi in 0..tm {
        for ni in 0..tn {
            let pe = grid.assign(mi, ni);
            for ki in 0..tk {
                ops.push(TileOp { m: mi, n: ni, k: ki, pe });
            }
        }
    }
    Ok(TileSchedule { m, n, k, grid, ops })
}

/// Copies the `(ti, tj)` tile of `src`, zero-padding past the edges.
fn load_tile(src: &Matrix, ti: usize, tj: usize, dst: &mut [f32; TILE * TILE]) {
    dst.fill(0.0);
    let r0 = ti * TILE;
    let c0 = tj * TILE;
    let rows = (src.rows() - r0).min(TILE);
    let cols = (src.cols() - c0).min(TILE);
    for r in 0..rows {
        dst[r * TILE..r * TILE + cols].copy_from_slice(&src.row(r0 + r)[c0..c0 + cols]);
    }
}

/// Executes `schedule`; every output element accumulates in ascending `k`.
pub fn tiled_gemm(a: &Matrix, b: &Matrix, schedule: &TileSchedule) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if (a.rows(), b.cols(), a.cols()) != (schedule.m, schedule.n, schedule.k) {
        return Err(Error::Shape(format!(
            "schedule is for {}x{}x{}, operands are {}x{}x{}",
            schedule.m,
            schedule.n,
            schedule.k,
            a.rows(),
            b.cols(),
            a.cols()
        )));
    }
    let tn = schedule.tiles_n();
    let mut acc = vec![[0.0f32; TILE * TILE]; schedule.tiles_m() * tn];
    let mut at = [0.0f32; TILE * TILE];
    let mut bt = [0.0f32; TILE * TILE];
    for op in &schedule.ops {
        load_tile(a, op.m, op.k, &mut at);
        load_tile(b, op.k, op.n, &mut bt);
        let c = &mut acc[op.m * tn + op.n];
        for i in 0..TILE {
            let crow = &mut c[i * TILE..(i + 1) * TILE];
            for kk in 0..TILE {
                let av = at[i * TILE + kk];
                let brow = &bt[kk * TILE..(kk + 1) * TILE];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    let mut out = Matrix::zeros(schedule.m, schedule.n);
    for r in 0..schedule.m {
        let (mi, i) = (r / TILE, r % TILE);
        for c in 0..schedule.n {
            let (ni, j) = (c / TILE, c % TILE);
            out.set(r, c, acc[mi * tn + ni][i * TILE + j]);
        }
    }
    Ok(out)
}
