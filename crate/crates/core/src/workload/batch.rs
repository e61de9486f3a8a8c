use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Sparse lookups into one table for a whole batch, in `SparseLengthsSum` form:
/// sample `s` owns `lengths[s]` consecutive entries of `indices`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableLookups {
    pub indices: Vec<u32>,
    pub lengths: Vec<u32>,
}

impl TableLookups {
    /// Offset of each sample's first index.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0usize;
        self.lengths
            .iter()
            .map(|&l| {
                let o = acc;
                acc += l as usize;
                o
            })
            .collect()
    }

    pub fn segment(&self, offsets: &[usize], sample: usize) -> &[u32] {
        let start = offsets[sample];
        &self.indices[start..start + self.lengths[sample] as usize]
    }
}

/// Inputs for one batched inference.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub batch_size: usize,
    /// One entry per table.
    pub lookups: Vec<TableLookups>,
    /// `batch_size x dense_feature_dim`, row-major.
    pub dense_features: Vec<f32>,
}

impl QueryBatch {
    /// Checks the batch against a model config.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.lookups.len() != cfg.num_tables {
            return Err(Error::Shape(format!(
                "batch has lookups for {} tables, model has {}",
                self.lookups.len(),
                cfg.num_tables
            )));
        }
        if self.dense_features.len() != self.batch_size * cfg.dense_feature_dim {
            return Err(Error::Shape(format!(
                "dense features hold {} values, expected {} x {}",
                self.dense_features.len(),
                self.batch_size,
                cfg.dense_feature_dim
            )));
        }
        for (t, l) in self.lookups.iter().enumerate() {
            if l.lengths.len() != self.batch_size {
                return Err(Error::Shape(format!(
                    "table {t} has {} lengths for batch size {}",
                    l.lengths.len(),
                    self.batch_size
                )));
            }
            let total: usize = l.lengths.iter().map(|&x| x as usize).sum();
            if total != l.indices.len() {
                return Err(Error::Shape(format!(
                    "table {t}: lengths sum to {total} but {} indices given",
                    l.indices.len()
                )));
            }
            let offsets = l.offsets();
            for s in 0..self.batch_size {
                for (p, &row) in l.segment(&offsets, s).iter().enumerate() {
                    if row as usize >= cfg.rows_per_table {
                        return Err(Error::IndexOutOfRange {
                            table: t,
                            segment: s,
                            position: p,
                            row: u64::from(row),
                            rows: cfg.rows_per_table as u64,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_lookups(&self) -> usize {
        self.lookups.iter().map(|l| l.indices.len()).sum()
    }

    /// True when every (sample, table) has exactly `l` lookups.
    pub fn is_fixed_length(&self, l: usize) -> bool {
        self.lookups
            .iter()
            .all(|t| t.lengths.iter().all(|&x| x as usize == l))
    }

    /// Row IDs in staging order: sample-major, then table, then position.
    pub fn flat_indices(&self) -> Vec<u32> {
        let offsets: Vec<Vec<usize>> = self.lookups.iter().map(TableLookups::offsets).collect();
        let mut out = Vec::with_capacity(self.total_lookups());
        for s in 0..self.batch_size {
            for (t, l) in self.lookups.iter().enumerate() {
                out.extend_from_slice(l.segment(&offsets[t], s));
            }
        }
        out
    }

    pub fn dense_row(&self, sample: usize, dim: usize) -> &[f32] {
        &self.dense_features[sample * dim..(sample + 1) * dim]
    }

    /// A batch with zero samples.
    pub fn empty(cfg: &ModelConfig) -> Self {
        QueryBatch {
            batch_size: 0,
            lookups: vec![
                TableLookups {
                    indices: Vec::new(),
                    lengths: Vec::new(),
                };
                cfg.num_tables
            ],
            dense_features: Vec::new(),
        }
    }
}

/// Distribution of sparse row IDs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum IndexDistribution {
    #[default]
    Uniform,
    /// Zipf over ranks `1..=R` with exponent `s`; rank `k` maps to row `k - 1`.
    Zipf(f64),
}

impl fmt::Display for IndexDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexDistribution::Uniform => f.write_str("uniform"),
            IndexDistribution::Zipf(s) => write!(f, "zipf({s})"),
        }
    }
}

impl FromStr for IndexDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform" {
            return Ok(IndexDistribution::Uniform);
        }
        let exp = s
            .strip_prefix("zipf(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("zipf:"))
            .ok_or_else(|| Error::config("distribution", format!("unknown distribution `{s}`")))?;
        let exp: f64 = exp
            .trim()
            .parse()
            .map_err(|_| Error::config("distribution", format!("bad zipf exponent `{exp}`")))?;
        if !(exp > 0.0 && exp.is_finite()) {
            return Err(Error::config("distribution", "zipf exponent must be positive"));
        }
        Ok(IndexDistribution::Zipf(exp))
    }
}

/// Generates `batch_size` samples with `gathers_per_table` i.i.d. lookups per table.
pub fn generate_batch(
    cfg: &ModelConfig,
    batch_size: usize,
    distribution: IndexDistribution,
    seed: u64,
) -> Result<QueryBatch> {
    cfg.validate()?;
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let rows = cfg.rows_per_table;
    let l = cfg.gathers_per_table;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut draw: Box<dyn FnMut(&mut ChaCha8Rng) -> u32> = match distribution {
        IndexDistribution::Uniform => {
            let d = Uniform::new(0u32, rows as u32).expect("rows >= 1");
            Box::new(move |r| d.sample(r))
        }
        IndexDistribution::Zipf(s) => {
            let d = Zipf::new(rows as f64, s)
                .map_err(|e| Error::config("distribution", e.to_string()))?;
            Box::new(move |r| (d.sample(r) as u32).clamp(1, rows as u32) - 1)
        }
    };

    let mut lookups: Vec<TableLookups> = (0..cfg.num_tables)
        .map(|_| TableLookups {
            indices: Vec::with_capacity(batch_size * l),
            lengths: vec![l as u32; batch_size],
        })
        .collect();
    for _ in 0..batch_size {
        for table in lookups.iter_mut() {
            for _ in 0..l {
                table.indices.push(draw(&mut rng));
            }
        }
    }
    let dense = Uniform::new(-1.0f32, 1.0).expect("non-empty range");
    let dense_features = dense
        .sample_iter(&mut rng)
        .take(batch_size * cfg.dense_feature_dim)
        .collect();
    Ok(QueryBatch {
        batch_size,
        lookups,
        dense_features,
    })
}
