//! Base-pointer registers and the flat address layout they describe.

use crate::error::{Error, Result};
use crate::workload::{Model, ModelConfig, QueryBatch, INDEX_BYTES};

/// Regions start on this boundary.
pub const REGION_ALIGN: u64 = 4096;
/// First byte address handed out; address zero stays unmapped.
pub const ADDRESS_ORIGIN: u64 = 0x1000_0000;

/// A contiguous region of the flat model address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handle {
    pub base: u64,
    pub bytes: u64,
}

impl Handle {
    pub fn end(&self) -> u64 {
        self.base + self.bytes
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.end()
    }
}

/// The four handles the host writes before the sparse unit may issue a gather.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasePointerRegs {
    pub indices: Handle,
    pub tables: Handle,
    pub weights: Handle,
    pub dense: Handle,
    /// Bytes per embedding row.
    pub row_bytes: u64,
    /// Bytes per table.
    pub table_bytes: u64,
}

fn align_up(x: u64) -> u64 {
    x.div_ceil(REGION_ALIGN) * REGION_ALIGN
}

impl BasePointerRegs {
    /// Byte address of `row` in `table`.
    #[inline]
    pub fn row_address(&self, table: usize, row: u32) -> u64 {
        self.tables.base + table as u64 * self.table_bytes + u64::from(row) * self.row_bytes
    }
}

/// Lays out indices, tables, weights and dense features back to back.
///
/// A pure function of the shapes, so repeated calls return identical handles.
pub fn load_base_pointers(model: &Model, batch: &QueryBatch) -> Result<BasePointerRegs> {
    let cfg = &model.config;
    if model.tables.len() != cfg.num_tables || model.tables.is_empty() {
        return Err(Error::Invalid("model has no materialized embedding tables".into()));
    }
    if model.bottom.is_empty() || model.top.is_empty() {
        return Err(Error::Invalid("model has no materialized MLP weights".into()));
    }
    let dense_len = batch.batch_size * cfg.dense_feature_dim;
    if batch.dense_features.len() != dense_len {
        return Err(Error::Invalid(format!(
            "bottom MLP expects {dense_len} dense feature values, batch carries {}",
            batch.dense_features.len()
        )));
    }
    Ok(address_layout(cfg, batch))
}

/// The address layout alone; needs only shapes, not materialized arrays.
pub fn address_layout(cfg: &ModelConfig, batch: &QueryBatch) -> BasePointerRegs {
    let index_bytes = (batch.total_lookups() * INDEX_BYTES) as u64;
    let dense_bytes = (batch.batch_size * cfg.dense_feature_dim * cfg.element_bytes) as u64;
    let indices = Handle { base: ADDRESS_ORIGIN, bytes: index_bytes };
    let tables = Handle { base: align_up(indices.end()), bytes: cfg.total_table_bytes() };
    let weights = Handle { base: align_up(tables.end()), bytes: cfg.mlp_bytes() };
    let dense = Handle { base: align_up(weights.end()), bytes: dense_bytes };
    BasePointerRegs {
        indices,
        tables,
        weights,
        dense,
        row_bytes: cfg.row_bytes() as u64,
        table_bytes: cfg.table_bytes(),
    }
}
