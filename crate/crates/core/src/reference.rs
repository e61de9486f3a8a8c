//! Straightforward oracle for the full inference pipeline.
//!
//! Every accumulation runs in ascending index order starting from zero, with
//! biases added after the dot product. Nothing here is optimized.

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::workload::{Activation, Layer, Model, QueryBatch};

/// One reduced `D`-vector per (sample, table), stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedEmbeddings {
    batch: usize,
    tables: usize,
    dim: usize,
    data: Vec<f32>,
}

impl ReducedEmbeddings {
    pub fn zeros(batch: usize, tables: usize, dim: usize) -> Self {
        ReducedEmbeddings {
            batch,
            tables,
            dim,
            data: vec![0.0; batch * tables * dim],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, sample: usize, table: usize) -> &[f32] {
        let at = (sample * self.tables + table) * self.dim;
        &self.data[at..at + self.dim]
    }

    pub fn get_mut(&mut self, sample: usize, table: usize) -> &mut [f32] {
        let at = (sample * self.tables + table) * self.dim;
        &mut self.data[at..at + self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Per-sample event probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub probabilities: Vec<f32>,
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `SparseLengthsSum` over one table: one summed row per segment.
///
/// `table_id` only labels errors.
pub fn sparse_lengths_sum(
    table: &Matrix,
    table_id: usize,
    indices: &[u32],
    lengths: &[u32],
) -> Result<Vec<Vec<f32>>> {
    let total: u64 = lengths.iter().map(|&l| u64::from(l)).sum();
    if total != indices.len() as u64 {
        return Err(Error::Shape(format!(
            "table {table_id}: lengths sum to {total} but {} indices given",
            indices.len()
        )));
    }
    let mut out = Vec::with_capacity(lengths.len());
    let mut cursor = 0usize;
    for (segment, &len) in lengths.iter().enumerate() {
        let mut acc = vec![0.0f32; table.cols()];
        for position in 0..len as usize {
            let row = indices[cursor + position];
            if row as usize >= table.rows() {
                return Err(Error::IndexOutOfRange {
                    table: table_id,
                    segment,
                    position,
                    row: u64::from(row),
                    rows: table.rows() as u64,
                });
            }
            for (a, v) in acc.iter_mut().zip(table.row(row as usize)) {
                *a += v;
            }
        }
        cursor += len as usize;
        out.push(acc);
    }
    Ok(out)
}

/// Strict lower triangle of `V Vᵀ` for `V = [bottom_out, reduced...]`, row-major,
/// followed by `bottom_out`.
pub fn feature_interaction(bottom_out: &[f32], reduced: &[&[f32]]) -> Result<Vec<f32>> {
    let dim = bottom_out.len();
    if let Some(bad) = reduced.iter().position(|r| r.len() != dim) {
        return Err(Error::Shape(format!(
            "reduced embedding {bad} has width {}, bottom output has {dim}",
            reduced[bad].len()
        )));
    }
    let mut stack: Vec<&[f32]> = Vec::with_capacity(reduced.len() + 1);
    stack.push(bottom_out);
    stack.extend_from_slice(reduced);
    let t = reduced.len();
    let mut out = Vec::with_capacity(t * (t + 1) / 2 + dim);
    for i in 1..stack.len() {
        for j in 0..i {
            out.push(dot(stack[i], stack[j]));
        }
    }
    out.extend_from_slice(bottom_out);
    Ok(out)
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Affine layers with `activation` between them; the last layer is affine only.
pub fn mlp_forward(input: &[f32], layers: &[Layer], activation: Activation) -> Result<Vec<f32>> {
    let mut x = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        if layer.in_dim() != x.len() {
            return Err(Error::Shape(format!(
                "layer {i} expects width {}, got {}",
                layer.in_dim(),
                x.len()
            )));
        }
        let last = i + 1 == layers.len();
        x = (0..layer.out_dim())
            .map(|o| {
                let y = dot(layer.weights.row(o), &x) + layer.bias[o];
                if last {
                    y
                } else {
                    activation.apply(y)
                }
            })
            .collect();
    }
    Ok(x)
}

/// Reduces every (sample, table) segment of the batch.
pub fn reduce_all(model: &Model, batch: &QueryBatch) -> Result<ReducedEmbeddings> {
    let cfg = &model.config;
    if batch.lookups.len() != cfg.num_tables {
        return Err(Error::Shape(format!(
            "batch has lookups for {} tables, model has {}",
            batch.lookups.len(),
            cfg.num_tables
        )));
    }
    let mut reduced = ReducedEmbeddings::zeros(batch.batch_size, cfg.num_tables, cfg.embedding_dim);
    for (t, (table, lookups)) in model.tables.iter().zip(&batch.lookups).enumerate() {
        if lookups.lengths.len() != batch.batch_size {
            return Err(Error::Shape(format!(
                "table {t} has {} lengths for batch size {}",
                lookups.lengths.len(),
                batch.batch_size
            )));
        }
        let sums = sparse_lengths_sum(table, t, &lookups.indices, &lookups.lengths)?;
        for (s, v) in sums.into_iter().enumerate() {
            reduced.get_mut(s, t).copy_from_slice(&v);
        }
    }
    Ok(reduced)
}

/// Pre-Sigmoid top-MLP output for every sample.
pub fn logits(model: &Model, batch: &QueryBatch) -> Result<Vec<f32>> {
    batch.validate(&model.config)?;
    let cfg = &model.config;
    let reduced = reduce_all(model, batch)?;
    (0..batch.batch_size)
        .map(|s| {
            let dense = batch.dense_row(s, cfg.dense_feature_dim);
            let bottom = mlp_forward(dense, &model.bottom, cfg.hidden_activation)?;
            let rows: Vec<&[f32]> = (0..cfg.num_tables).map(|t| reduced.get(s, t)).collect();
            let inter = feature_interaction(&bottom, &rows)?;
            let top = mlp_forward(&inter, &model.top, cfg.hidden_activation)?;
            Ok(top[0])
        })
        .collect()
}

/// Bottom MLP, interaction, top MLP, Sigmoid, one sample at a time.
pub fn infer(model: &Model, batch: &QueryBatch) -> Result<InferenceOutput> {
    Ok(InferenceOutput {
        probabilities: logits(model, batch)?.into_iter().map(sigmoid).collect(),
    })
}
