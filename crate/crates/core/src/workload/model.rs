use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One affine layer: `y = weights * x + bias`, weights are `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f32>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f32>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Layer { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// A materialized model: embedding tables plus MLP weights. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub tables: Vec<Matrix>,
    pub bottom: Vec<Layer>,
    pub top: Vec<Layer>,
    pub seed: u64,
}

fn random_matrix(rng: &mut ChaCha8Rng, dist: &Uniform<f32>, rows: usize, cols: usize) -> Matrix {
    let data: Vec<f32> = dist.sample_iter(&mut *rng).take(rows * cols).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn random_layers(rng: &mut ChaCha8Rng, dist: &Uniform<f32>, dims: &[usize]) -> Vec<Layer> {
    dims.windows(2)
        .map(|w| {
            let weights = random_matrix(rng, dist, w[1], w[0]);
            let bias = dist.sample_iter(&mut *rng).take(w[1]).collect();
            Layer { weights, bias }
        })
        .collect()
}

/// Deterministically materializes a model; values are uniform in `[-1, 1)`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(-1.0f32, 1.0).expect("non-empty range");
    let tables = (0..config.num_tables)
        .map(|_| random_matrix(&mut rng, &dist, config.rows_per_table, config.embedding_dim))
        .collect();
    let bottom = random_layers(&mut rng, &dist, &config.bottom_mlp_dims);
    let top = random_layers(&mut rng, &dist, &config.top_mlp_dims);
    Ok(Model {
        config: config.clone(),
        tables,
        bottom,
        top,
        seed,
    })
}

impl Model {
    /// Checks that every materialized array matches the config shapes.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.tables.len() != cfg.num_tables {
            return Err(Error::Shape(format!(
                "{} tables for a config with {}",
                self.tables.len(),
                cfg.num_tables
            )));
        }
        for (i, t) in self.tables.iter().enumerate() {
            if t.rows() != cfg.rows_per_table || t.cols() != cfg.embedding_dim {
                return Err(Error::Shape(format!(
                    "table {i} is {}x{}, expected {}x{}",
                    t.rows(),
                    t.cols(),
                    cfg.rows_per_table,
                    cfg.embedding_dim
                )));
            }
        }
        check_layers("bottom", &self.bottom, &cfg.bottom_mlp_dims)?;
        check_layers("top", &self.top, &cfg.top_mlp_dims)
    }
}

fn check_layers(which: &str, layers: &[Layer], dims: &[usize]) -> Result<()> {
    if layers.len() + 1 != dims.len() {
        return Err(Error::Shape(format!(
            "{which} MLP has {} layers, config lists {} widths",
            layers.len(),
            dims.len()
        )));
    }
    for (i, (layer, w)) in layers.iter().zip(dims.windows(2)).enumerate() {
        if layer.in_dim() != w[0] || layer.out_dim() != w[1] || layer.bias.len() != w[1] {
            return Err(Error::Shape(format!(
                "{which} layer {i} is {}x{}, expected {}x{}",
                layer.out_dim(),
                layer.in_dim(),
                w[1],
                w[0]
            )));
        }
    }
    Ok(())
}
