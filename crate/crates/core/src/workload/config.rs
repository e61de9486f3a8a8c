use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Bytes per embedding/weight element (`f32`).
pub const ELEMENT_BYTES: usize = 4;
/// Bytes per sparse index ID (`u32`).
pub const INDEX_BYTES: usize = 4;
pub const DEFAULT_EMBEDDING_DIM: usize = 32;
pub const DEFAULT_DENSE_FEATURE_DIM: usize = 13;

const KIB: f64 = 1024.0;
const MIB: f64 = 1024.0 * 1024.0;
const GIB: f64 = 1024.0 * 1024.0 * 1024.0;

/// Activation applied after every MLP layer except the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::config(
                "hidden_activation",
                format!("unknown activation `{other}`"),
            )),
        }
    }
}

/// Shape of a recommendation model.
///
/// `bottom_mlp_dims` and `top_mlp_dims` list every layer width including the
/// input width, so a network with `n` weight layers has `n + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub num_tables: usize,
    pub gathers_per_table: usize,
    pub embedding_dim: usize,
    pub rows_per_table: usize,
    pub bottom_mlp_dims: Vec<usize>,
    pub top_mlp_dims: Vec<usize>,
    pub dense_feature_dim: usize,
    pub element_bytes: usize,
    pub hidden_activation: Activation,
}

/// Length of the feature-interaction output for `tables` reduced embeddings of width `dim`.
pub fn interaction_width(tables: usize, dim: usize) -> usize {
    tables * (tables + 1) / 2 + dim
}

/// Rows per table that fit `total_table_bytes` spread over `tables` tables.
pub fn derive_rows(
    total_table_bytes: u64,
    tables: usize,
    dim: usize,
    element_bytes: usize,
) -> Result<u64> {
    if tables == 0 || dim == 0 || element_bytes == 0 || total_table_bytes == 0 {
        return Err(Error::Invalid(
            "derive_rows inputs must all be at least 1".into(),
        ));
    }
    let row_set_bytes = (tables * dim * element_bytes) as u64;
    let rows = total_table_bytes / row_set_bytes;
    if rows == 0 {
        return Err(Error::BudgetTooSmall(format!(
            "{total_table_bytes} bytes cannot hold one row in each of {tables} tables \
             ({row_set_bytes} bytes needed)"
        )));
    }
    Ok(rows)
}

/// Parameter bytes (weights plus biases) of an MLP with the given widths.
pub fn mlp_param_bytes(dims: &[usize]) -> u64 {
    dims.windows(2)
        .map(|w| ((w[0] * w[1] + w[1]) * ELEMENT_BYTES) as u64)
        .sum()
}

fn template_bytes(input: usize, hidden: usize, output: usize) -> u64 {
    mlp_param_bytes(&[input, hidden, hidden / 2, output])
}

/// Sizes the `[input, h, h/2, output]` template to a byte budget.
///
/// `h` is the largest even width whose parameter bytes stay within `target_bytes`.
pub fn derive_mlp_dims(target_bytes: u64, input_dim: usize, output_dim: usize) -> Result<Vec<usize>> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::Invalid("MLP input and output widths must be >= 1".into()));
    }
    let minimal = template_bytes(input_dim, 2, output_dim);
    if target_bytes < minimal {
        return Err(Error::BudgetTooSmall(format!(
            "MLP budget {target_bytes} B is below the minimal [{input_dim}, 2, 1, {output_dim}] \
             network ({minimal} B)"
        )));
    }
    // Bytes grow monotonically in h; bisect on the even widths.
    let (mut lo, mut hi) = (1usize, 2usize);
    while template_bytes(input_dim, 2 * hi, output_dim) <= target_bytes {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if template_bytes(input_dim, 2 * mid, output_dim) <= target_bytes {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h = 2 * lo;
    Ok(vec![input_dim, h, h / 2, output_dim])
}

impl ModelConfig {
    /// Builds a config from Table-I style budgets.
    ///
    /// The bottom MLP receives half of `mlp_bytes`; the top MLP receives what
    /// the realized bottom MLP leaves over.
    pub fn from_budgets(
        name: &str,
        num_tables: usize,
        gathers_per_table: usize,
        table_bytes: u64,
        mlp_bytes: u64,
    ) -> Result<Self> {
        let dim = DEFAULT_EMBEDDING_DIM;
        let rows = derive_rows(table_bytes, num_tables, dim, ELEMENT_BYTES)?;
        let (bottom, top) = split_mlp_budget(mlp_bytes, num_tables, dim, DEFAULT_DENSE_FEATURE_DIM)?;
        let cfg = ModelConfig {
            name: name.to_string(),
            num_tables,
            gathers_per_table,
            embedding_dim: dim,
            rows_per_table: rows as usize,
            bottom_mlp_dims: bottom,
            top_mlp_dims: top,
            dense_feature_dim: DEFAULT_DENSE_FEATURE_DIM,
            element_bytes: ELEMENT_BYTES,
            hidden_activation: Activation::Relu,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_tables", self.num_tables),
            ("gathers_per_table", self.gathers_per_table),
            ("embedding_dim", self.embedding_dim),
            ("rows_per_table", self.rows_per_table),
            ("dense_feature_dim", self.dense_feature_dim),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.element_bytes != ELEMENT_BYTES {
            return Err(Error::config(
                "element_bytes",
                format!("only 32-bit floats are supported (expected {ELEMENT_BYTES})"),
            ));
        }
        if self.rows_per_table > u32::MAX as usize {
            return Err(Error::config("rows_per_table", "row IDs must fit in 32 bits"));
        }
        check_dims("bottom_mlp_dims", &self.bottom_mlp_dims)?;
        check_dims("top_mlp_dims", &self.top_mlp_dims)?;
        if self.bottom_mlp_dims[0] != self.dense_feature_dim {
            return Err(Error::config(
                "bottom_mlp_dims",
                format!(
                    "input width {} must equal dense_feature_dim {}",
                    self.bottom_mlp_dims[0], self.dense_feature_dim
                ),
            ));
        }
        if *self.bottom_mlp_dims.last().unwrap() != self.embedding_dim {
            return Err(Error::config(
                "bottom_mlp_dims",
                format!("output width must equal embedding_dim {}", self.embedding_dim),
            ));
        }
        let inter = interaction_width(self.num_tables, self.embedding_dim);
        if self.top_mlp_dims[0] != inter {
            return Err(Error::config(
                "top_mlp_dims",
                format!("input width must equal T(T+1)/2 + D = {inter}"),
            ));
        }
        if *self.top_mlp_dims.last().unwrap() != 1 {
            return Err(Error::config("top_mlp_dims", "output width must be 1"));
        }
        Ok(())
    }

    pub fn row_bytes(&self) -> usize {
        self.embedding_dim * self.element_bytes
    }

    pub fn table_bytes(&self) -> u64 {
        (self.rows_per_table * self.row_bytes()) as u64
    }

    pub fn total_table_bytes(&self) -> u64 {
        self.table_bytes() * self.num_tables as u64
    }

    pub fn mlp_bytes(&self) -> u64 {
        mlp_param_bytes(&self.bottom_mlp_dims) + mlp_param_bytes(&self.top_mlp_dims)
    }

    pub fn interaction_width(&self) -> usize {
        interaction_width(self.num_tables, self.embedding_dim)
    }

    pub const KEYS: &'static [&'static str] = &[
        "name",
        "preset",
        "table_scale",
        "num_tables",
        "gathers_per_table",
        "embedding_dim",
        "rows_per_table",
        "table_bytes",
        "bottom_mlp_dims",
        "top_mlp_dims",
        "mlp_bytes",
        "dense_feature_dim",
        "element_bytes",
        "hidden_activation",
    ];

    /// Reads a config document.
    ///
    /// Either `preset = dlrm1..dlrm6` (optionally with `table_scale = N` to
    /// divide the table budget) or explicit shape keys. Explicit keys override
    /// the preset. `table_bytes`/`mlp_bytes` derive rows and MLP widths when
    /// `rows_per_table`/`*_mlp_dims` are absent.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.deny_unknown(Self::KEYS)?;
        let preset = match doc.get("preset") {
            Some(name) => Some(
                Preset::by_name(name)
                    .ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))?,
            ),
            None => None,
        };
        let scale: u64 = doc.parse_or("table_scale", 1)?;
        if scale == 0 {
            return Err(Error::config("table_scale", "must be at least 1"));
        }

        let name = doc
            .get("name")
            .map(str::to_string)
            .or_else(|| preset.map(|p| p.name.to_string()))
            .unwrap_or_else(|| "custom".to_string());
        let num_tables = match doc.parse_value("num_tables")? {
            Some(v) => v,
            None => preset.map(|p| p.num_tables).ok_or_else(|| {
                Error::config("num_tables", "required key is missing")
            })?,
        };
        let gathers_per_table = match doc.parse_value("gathers_per_table")? {
            Some(v) => v,
            None => preset.map(|p| p.gathers_per_table).ok_or_else(|| {
                Error::config("gathers_per_table", "required key is missing")
            })?,
        };
        let embedding_dim = doc.parse_or("embedding_dim", DEFAULT_EMBEDDING_DIM)?;
        let element_bytes = doc.parse_or("element_bytes", ELEMENT_BYTES)?;
        let dense_feature_dim = doc.parse_or("dense_feature_dim", DEFAULT_DENSE_FEATURE_DIM)?;
        let hidden_activation = match doc.get("hidden_activation") {
            Some(v) => v.parse()?,
            None => Activation::Relu,
        };
        for (key, v) in [
            ("num_tables", num_tables),
            ("gathers_per_table", gathers_per_table),
            ("embedding_dim", embedding_dim),
            ("element_bytes", element_bytes),
            ("dense_feature_dim", dense_feature_dim),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }

        let rows_per_table = match doc.parse_value::<usize>("rows_per_table")? {
            Some(r) => r,
            None => {
                let budget = match doc.parse_value::<u64>("table_bytes")? {
                    Some(b) => b,
                    None => preset.map(|p| p.table_bytes()).ok_or_else(|| {
                        Error::config("rows_per_table", "set rows_per_table, table_bytes or preset")
                    })?,
                } / scale;
                derive_rows(budget, num_tables, embedding_dim, element_bytes).map_err(|e| {
                    Error::config("table_bytes", e.to_string())
                })? as usize
            }
        };

        let explicit_bottom = doc.parse_list::<usize>("bottom_mlp_dims")?;
        let explicit_top = doc.parse_list::<usize>("top_mlp_dims")?;
        let (bottom, top) = match (explicit_bottom, explicit_top) {
            (Some(b), Some(t)) => (b, t),
            (b, t) => {
                let budget = match doc.parse_value::<u64>("mlp_bytes")? {
                    Some(v) => v,
                    None => preset.map(|p| p.mlp_bytes()).ok_or_else(|| {
                        Error::config("mlp_bytes", "set both *_mlp_dims, mlp_bytes or preset")
                    })?,
                };
                let (db, dt) = split_mlp_budget(budget, num_tables, embedding_dim, dense_feature_dim)
                    .map_err(|e| Error::config("mlp_bytes", e.to_string()))?;
                (b.unwrap_or(db), t.unwrap_or(dt))
            }
        };

        let cfg = ModelConfig {
            name,
            num_tables,
            gathers_per_table,
            embedding_dim,
            rows_per_table,
            bottom_mlp_dims: bottom,
            top_mlp_dims: top,
            dense_feature_dim,
            element_bytes,
            hidden_activation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text)?)
    }

    /// Fully explicit key-value form; parses back to an identical config.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("name", &self.name);
        doc.set("num_tables", self.num_tables);
        doc.set("gathers_per_table", self.gathers_per_table);
        doc.set("embedding_dim", self.embedding_dim);
        doc.set("rows_per_table", self.rows_per_table);
        doc.set("bottom_mlp_dims", join(&self.bottom_mlp_dims));
        doc.set("top_mlp_dims", join(&self.top_mlp_dims));
        doc.set("dense_feature_dim", self.dense_feature_dim);
        doc.set("element_bytes", self.element_bytes);
        doc.set("hidden_activation", self.hidden_activation);
        doc
    }
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn check_dims(key: &str, dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::config(key, "needs at least an input and an output width"));
    }
    if dims.contains(&0) {
        return Err(Error::config(key, "widths must be at least 1"));
    }
    Ok(())
}

fn split_mlp_budget(
    mlp_bytes: u64,
    num_tables: usize,
    dim: usize,
    dense_dim: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let bottom = derive_mlp_dims(mlp_bytes / 2, dense_dim, dim)?;
    let remaining = mlp_bytes.saturating_sub(mlp_param_bytes(&bottom));
    let top = derive_mlp_dims(remaining, interaction_width(num_tables, dim), 1)?;
    Ok((bottom, top))
}

/// One row of the benchmark model table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub num_tables: usize,
    pub gathers_per_table: usize,
    /// Total embedding-table budget in GiB.
    pub table_gib: f64,
    /// Total MLP budget in KiB.
    pub mlp_kib: f64,
}

pub const PRESETS: [Preset; 6] = [
    Preset { name: "dlrm1", num_tables: 5, gathers_per_table: 20, table_gib: 0.125, mlp_kib: 57.4 },
    Preset { name: "dlrm2", num_tables: 50, gathers_per_table: 20, table_gib: 1.28, mlp_kib: 57.4 },
    Preset { name: "dlrm3", num_tables: 5, gathers_per_table: 80, table_gib: 0.125, mlp_kib: 57.4 },
    Preset { name: "dlrm4", num_tables: 50, gathers_per_table: 80, table_gib: 1.28, mlp_kib: 57.4 },
    Preset { name: "dlrm5", num_tables: 50, gathers_per_table: 80, table_gib: 3.2, mlp_kib: 57.4 },
    Preset { name: "dlrm6", num_tables: 5, gathers_per_table: 2, table_gib: 0.125, mlp_kib: 557.0 },
];

/// Table-budget divisor for desk-scale runs.
pub const DESK_TABLE_SCALE: u64 = 64;

impl Preset {
    pub fn by_name(name: &str) -> Option<Preset> {
        let norm = name.to_ascii_lowercase().replace(['(', ')', '-', '_'], "");
        PRESETS.iter().copied().find(|p| p.name == norm)
    }

    pub fn table_bytes(&self) -> u64 {
        (self.table_gib * GIB) as u64
    }

    pub fn mlp_bytes(&self) -> u64 {
        (self.mlp_kib * KIB) as u64
    }

    pub fn config(&self) -> Result<ModelConfig> {
        self.config_scaled(1)
    }

    /// Same shape with the table budget divided by `scale`. Byte counts
    /// per gather are unchanged; only rows per table shrink.
    pub fn config_scaled(&self, scale: u64) -> Result<ModelConfig> {
        ModelConfig::from_budgets(
            self.name,
            self.num_tables,
            self.gathers_per_table,
            self.table_bytes() / scale.max(1),
            self.mlp_bytes(),
        )
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let size = if self.table_gib < 1.0 {
            format!("{} MB", self.table_gib * GIB / MIB)
        } else {
            format!("{} GB", self.table_gib)
        };
        write!(
            f,
            "{}: {} tables x {} gathers, {}, {} KB MLP",
            self.name, self.num_tables, self.gathers_per_table, size, self.mlp_kib
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_rows_examples() {
        // 128 MiB over 5 tables of 128-byte rows.
        assert_eq!(derive_rows(128 << 20, 5, 32, 4).unwrap(), 209_715);
        // 1.28 GiB = 1_374_389_534 bytes.
        assert_eq!(derive_rows(1_374_389_534, 50, 32, 4).unwrap(), 214_748);
        assert_eq!(derive_rows(3_200_000_000, 50, 32, 4).unwrap(), 500_000);
        assert_eq!(derive_rows(128, 1, 32, 4).unwrap(), 1);
    }

    #[test]
    fn derive_rows_rejects_small_budget() {
        let err = derive_rows(127, 1, 32, 4).unwrap_err();
        assert!(err.to_string().contains("table budget too small"), "{err}");
        assert!(derive_rows(0, 1, 1, 1).is_err());
        assert!(derive_rows(100, 0, 1, 1).is_err());
    }

    /// Largest even h by linear enumeration, independent of the bisection.
    fn brute_force_h(target: u64, input: usize, output: usize) -> Option<usize> {
        (1..10_000)
            .map(|k| 2 * k)
            .take_while(|&h| template_bytes(input, h, output) <= target)
            .last()
    }

    #[test]
    fn mlp_dims_57_4_kib() {
        let target = (57.4 * 1024.0) as u64;
        assert_eq!(brute_force_h(target, 38, 1), Some(136));
        let dims = derive_mlp_dims(target, 38, 1).unwrap();
        assert_eq!(dims, vec![38, 136, 68, 1]);
        let bytes = mlp_param_bytes(&dims);
        assert_eq!(bytes, 58_756);
        assert!(bytes <= target);
        assert!(bytes as f64 >= 51.7 * 1024.0);
    }

    #[test]
    fn mlp_dims_557_kib_is_wider() {
        let small = derive_mlp_dims((57.4 * 1024.0) as u64, 38, 1).unwrap()[1];
        let target = 557 * 1024;
        assert_eq!(brute_force_h(target, 38, 1), Some(494));
        let large = derive_mlp_dims(target, 38, 1).unwrap()[1];
        assert_eq!(large, 494);
        let ratio = large as f64 / small as f64;
        assert!((2.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mlp_dims_minimal_and_infeasible() {
        let minimal = template_bytes(2, 2, 1);
        assert_eq!(derive_mlp_dims(minimal, 2, 1).unwrap(), vec![2, 2, 1, 1]);
        assert!(matches!(
            derive_mlp_dims(minimal - 1, 2, 1),
            Err(Error::BudgetTooSmall(_))
        ));
    }

    #[test]
    fn mlp_dims_match_enumeration_over_targets() {
        for target in (200..200_000).step_by(997) {
            let expected = brute_force_h(target, 20, 3);
            match derive_mlp_dims(target, 20, 3) {
                Ok(d) => assert_eq!(Some(d[1]), expected, "target {target}"),
                Err(_) => assert_eq!(expected, None, "target {target}"),
            }
        }
    }

    #[test]
    fn presets_follow_table_budgets() {
        let dlrm1 = Preset::by_name("DLRM(1)").unwrap().config().unwrap();
        assert_eq!(dlrm1.rows_per_table, 209_715);
        assert_eq!(dlrm1.top_mlp_dims[0], 47);
        let dlrm4 = Preset::by_name("dlrm4").unwrap().config().unwrap();
        assert_eq!(dlrm4.rows_per_table, 214_748);
        assert_eq!(dlrm4.top_mlp_dims[0], 1307);
        for p in PRESETS {
            let cfg = p.config().unwrap();
            assert!(cfg.mlp_bytes() <= p.mlp_bytes());
            let desk = p.config_scaled(DESK_TABLE_SCALE).unwrap();
            assert_eq!(desk.rows_per_table, cfg.rows_per_table / 64);
            assert_eq!(desk.top_mlp_dims, cfg.top_mlp_dims);
        }
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        let good = Preset::by_name("dlrm1").unwrap().config().unwrap();
        let mut c = good.clone();
        c.num_tables = 0;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.top_mlp_dims[0] += 1;
        assert!(c.validate().unwrap_err().to_string().contains("top_mlp_dims"));
        let mut c = good.clone();
        *c.bottom_mlp_dims.last_mut().unwrap() = 31;
        assert!(c.validate().is_err());
        let mut c = good;
        *c.top_mlp_dims.last_mut().unwrap() = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_round_trip_and_errors() {
        let cfg = ModelConfig::parse("preset = dlrm3\ntable_scale = 64\n").unwrap();
        assert_eq!(cfg.gathers_per_table, 80);
        assert_eq!(cfg.rows_per_table, 209_715 / 64);
        let text = cfg.to_kv().render();
        assert_eq!(ModelConfig::parse(&text).unwrap(), cfg);

        let err = ModelConfig::parse("num_tables = 5\ngathers_per_table = x").unwrap_err();
        assert!(err.to_string().contains("gathers_per_table"), "{err}");
        let err = ModelConfig::parse("preset = dlrm1\nembeding_dim = 4").unwrap_err();
        assert!(err.to_string().contains("embeding_dim"), "{err}");
        let err = ModelConfig::parse("preset = dlrm1\nnum_tables = 0").unwrap_err();
        assert!(err.to_string().contains("num_tables"), "{err}");
    }
}
