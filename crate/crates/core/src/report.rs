//! Experiment orchestration behind the command-line tool: model generation,
//! oracle verification, latency sweeps and cache sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cache::{parse_trace, simulate, simulate_warm, trace_from_batch, write_stats_csv, CacheConfig, CacheRow, CacheStats};
use crate::engine::{infer_accelerated_with, CompletionOrder, Fault, SparseOptions};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::perf::{summarize, sweep, write_rows, DesignPoint, PlatformParams, ResultRow, SweepOptions, SweepSummary};
use crate::reference;
use crate::tensor::relative_error;
use crate::workload::{build_model, generate_batch, load_model, save_model, IndexDistribution, Model, ModelConfig, Preset, DESK_TABLE_SCALE};

/// Batch sizes swept when none are given.
pub const DEFAULT_BATCHES: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];

/// Largest per-element relative deviation `cmd_verify` tolerates.
pub const VERIFY_TOLERANCE: f64 = 1e-4;

/// Largest batch a verification trial draws.
pub const VERIFY_MAX_BATCH: usize = 32;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::file(path))
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::file(dir))?;
    }
    fs::write(path, contents).map_err(Error::file(path))
}

/// A model named by preset (`dlrm1`..`dlrm6`) or by config file path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelRef {
    Preset(String),
    File(PathBuf),
}

impl ModelRef {
    pub fn new(s: &str) -> Self {
        match Preset::by_name(s) {
            Some(p) => ModelRef::Preset(p.name.to_string()),
            None => ModelRef::File(PathBuf::from(s)),
        }
    }

    /// Presets are divided by `table_scale`; files carry their own scale.
    /// Relative paths resolve against `base`.
    pub fn resolve(&self, base: &Path, table_scale: u64) -> Result<ModelConfig> {
        match self {
            ModelRef::Preset(name) => Preset::by_name(name)
                .ok_or_else(|| Error::config("models", format!("unknown preset `{name}`")))?
                .config_scaled(table_scale),
            ModelRef::File(path) => ModelConfig::parse(&read_text(&base.join(path))?),
        }
    }
}

impl std::fmt::Display for ModelRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelRef::Preset(n) => f.write_str(n),
            ModelRef::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// A sweep description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub models: Vec<ModelRef>,
    pub batches: Vec<usize>,
    pub design_points: Vec<DesignPoint>,
    /// Platform parameter file; shipped defaults when absent.
    pub params: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub table_scale: u64,
    pub distribution: IndexDistribution,
}

impl RunSpec {
    pub const KEYS: &'static [&'static str] =
        &["models", "batches", "design_points", "params", "seed", "out", "table_scale", "distribution"];

    /// All six presets at desk scale over the default batches.
    pub fn defaults(seed: u64) -> Self {
        RunSpec {
            models: crate::workload::PRESETS.iter().map(|p| ModelRef::Preset(p.name.to_string())).collect(),
            batches: DEFAULT_BATCHES.to_vec(),
            design_points: DesignPoint::ALL.to_vec(),
            params: None,
            seed,
            out: None,
            table_scale: DESK_TABLE_SCALE,
            distribution: IndexDistribution::Uniform,
        }
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.deny_unknown(Self::KEYS)?;
        let seed = doc
            .parse_value("seed")?
            .ok_or_else(|| Error::config("seed", "required key is missing"))?;
        let mut spec = RunSpec::defaults(seed);
        spec.models = crate::kv::split_list(doc.require("models")?).map(ModelRef::new).collect();
        if let Some(b) = doc.parse_list("batches")? {
            spec.batches = b;
        }
        if let Some(d) = doc.parse_list("design_points")? {
            spec.design_points = d;
        }
        spec.params = doc.get("params").map(PathBuf::from);
        spec.out = doc.get("out").map(PathBuf::from);
        spec.table_scale = doc.parse_or("table_scale", DESK_TABLE_SCALE)?;
        spec.distribution = doc.parse_or("distribution", IndexDistribution::Uniform)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("models", "needs at least one model"));
        }
        if self.batches.is_empty() {
            return Err(Error::config("batches", "needs at least one batch size"));
        }
        if self.batches.contains(&0) {
            return Err(Error::config("batches", "batch sizes must be at least 1"));
        }
        if self.design_points.is_empty() {
            return Err(Error::config("design_points", "needs at least one design point"));
        }
        if self.table_scale == 0 {
            return Err(Error::config("table_scale", "must be at least 1"));
        }
        if let IndexDistribution::Zipf(s) = self.distribution {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config("distribution", "zipf exponent must be positive"));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let join = |v: Vec<String>| v.join(", ");
        let mut doc = KvDoc::new();
        doc.set("models", join(self.models.iter().map(ToString::to_string).collect()));
        doc.set("batches", join(self.batches.iter().map(ToString::to_string).collect()));
        doc.set("design_points", join(self.design_points.iter().map(ToString::to_string).collect()));
        if let Some(p) = &self.params {
            doc.set("params", p.display());
        }
        doc.set("seed", self.seed);
        if let Some(o) = &self.out {
            doc.set("out", o.display());
        }
        doc.set("table_scale", self.table_scale);
        doc.set("distribution", self.distribution);
        doc
    }
}

/// Builds a model from `cfg` and writes its blob and manifest under `out`.
/// Returns the manifest path.
pub fn cmd_gen(cfg: &ModelConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    let model = build_model(cfg, seed)?;
    save_model(&model, out).map_err(|e| match e {
        Error::Io(source) => Error::File { path: out.to_path_buf(), source },
        e => e,
    })
}

/// Loads a generated model from a directory or manifest path.
pub fn load_artifact(path: &Path) -> Result<Model> {
    load_model(path).map_err(|e| match e {
        Error::Io(source) => Error::File { path: path.to_path_buf(), source },
        e => e,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyReport {
    pub trials: usize,
    pub samples: usize,
    /// Largest per-element relative deviation seen.
    pub max_rel_error: f64,
}

/// Runs `trials` seeded random batches through both engines. Odd trials let
/// gathers complete out of order.
pub fn cmd_verify(model: &Model, seed: u64, trials: usize, fault: Option<Fault>) -> Result<VerifyReport> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = VerifyReport { trials, samples: 0, max_rel_error: 0.0 };
    for trial in 0..trials {
        let b = rng.random_range(1..=VERIFY_MAX_BATCH);
        let batch_seed: u64 = rng.random();
        let batch = generate_batch(cfg, b, IndexDistribution::Uniform, batch_seed)?;
        let completion = if trial % 2 == 1 { CompletionOrder::Shuffled(batch_seed) } else { CompletionOrder::InOrder };
        let opts = SparseOptions { completion, fault, ..SparseOptions::default() };
        let run = infer_accelerated_with(model, &batch, &opts)?;

        let want = reference::reduce_all(model, &batch)?;
        for s in 0..b {
            for t in 0..cfg.num_tables {
                for (e, (&got, &w)) in run.reduced.get(s, t).iter().zip(want.get(s, t)).enumerate() {
                    let err = check(trial, "reduced embedding", s, Some(t), e, got, w)?;
                    report.max_rel_error = report.max_rel_error.max(err);
                }
            }
        }
        let want = reference::infer(model, &batch)?;
        for (s, (&got, &w)) in run.output.probabilities.iter().zip(&want.probabilities).enumerate() {
            let err = check(trial, "probability", s, None, 0, got, w)?;
            report.max_rel_error = report.max_rel_error.max(err);
        }
        report.samples += b;
    }
    Ok(report)
}

fn check(trial: usize, quantity: &'static str, sample: usize, table: Option<usize>, element: usize, got: f32, want: f32) -> Result<f64> {
    let err = relative_error(got, want);
    if err > VERIFY_TOLERANCE || got.is_nan() != want.is_nan() {
        return Err(Error::Mismatch { trial, quantity, sample, table, element, got, want });
    }
    Ok(err)
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub summary: SweepSummary,
    /// The CSV exactly as written to `spec.out`.
    pub csv: String,
}

/// Loads platform parameters from `path`, or the shipped defaults.
pub fn load_params(path: Option<&Path>) -> Result<PlatformParams> {
    match path {
        Some(p) => PlatformParams::parse(&read_text(p)?),
        None => Ok(PlatformParams::default()),
    }
}

/// Runs the sweep in `spec`; relative paths resolve against `base`. Writes
/// the CSV to `spec.out` when set.
pub fn cmd_sweep(spec: &RunSpec, base: &Path) -> Result<SweepOutput> {
    spec.validate()?;
    let params = load_params(spec.params.as_ref().map(|p| base.join(p)).as_deref())?;
    let models = spec
        .models
        .iter()
        .map(|m| m.resolve(base, spec.table_scale))
        .collect::<Result<Vec<_>>>()?;
    let opts = SweepOptions {
        seed: spec.seed,
        distribution: spec.distribution,
        design_points: spec.design_points.clone(),
        sparse: SparseOptions::default(),
    };
    let rows = sweep(&models, &spec.batches, &params, &opts)?;
    let summary = summarize(&rows);

    let mut csv = String::new();
    let _ = writeln!(csv, "# seed={}", spec.seed);
    let _ = writeln!(csv, "# distribution={}", spec.distribution);
    let _ = writeln!(csv, "# table_scale={}", spec.table_scale);
    let _ = writeln!(csv, "# other_us is a constant per-inference overhead, not a measured stage");
    let mut body = Vec::new();
    write_rows(&rows, &mut body)?;
    csv.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    if let Some(out) = &spec.out {
        write_file(&base.join(out), csv.as_bytes())?;
    }
    Ok(SweepOutput { rows, summary, csv })
}

/// Cache sweep settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheSweep {
    pub batches: Vec<usize>,
    pub cache: CacheConfig,
    pub seed: u64,
    pub distribution: IndexDistribution,
}

/// For each batch size: one pass over the batch's gather trace to warm the
/// cache, then statistics over a second identical pass.
pub fn cmd_cachesim(cfg: &ModelConfig, sweep: &CacheSweep) -> Result<Vec<CacheRow>> {
    if sweep.batches.is_empty() || sweep.batches.contains(&0) {
        return Err(Error::config("batches", "needs batch sizes of at least 1"));
    }
    sweep
        .batches
        .par_iter()
        .map(|&b| {
            let batch = generate_batch(cfg, b, sweep.distribution, sweep.seed)?;
            let trace = trace_from_batch(cfg, &batch)?;
            Ok(CacheRow { batch: Some(b), stats: simulate_warm(&trace, &sweep.cache) })
        })
        .collect()
}

/// Cold-cache statistics for a trace file.
pub fn cachesim_trace(path: &Path, cache: &CacheConfig) -> Result<CacheStats> {
    Ok(simulate(&parse_trace(&read_text(path)?)?, cache))
}

/// Cache rows as CSV behind `# key=value` header lines.
pub fn render_cache_csv(header: &[(&str, String)], rows: &[CacheRow]) -> Result<String> {
    let mut out = String::new();
    for (k, v) in header {
        let _ = writeln!(out, "# {k}={v}");
    }
    let mut body = Vec::new();
    write_stats_csv(rows, &mut body)?;
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

/// Process exit status for `err`.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_config() => 2,
        Error::Mismatch { .. } => 3,
        Error::Io(_) | Error::File { .. } => 4,
        Error::Csv(e) if e.is_io_error() => 4,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Preset;

    fn tiny() -> ModelConfig {
        Preset::by_name("dlrm1").unwrap().config_scaled(4096).unwrap()
    }

    #[test]
    fn runspec_round_trip_and_defaults() {
        let spec = RunSpec::parse("models = dlrm1, configs/x.kv\nseed = 9\n").unwrap();
        assert_eq!(spec.models, vec![ModelRef::Preset("dlrm1".into()), ModelRef::File("configs/x.kv".into())]);
        assert_eq!(spec.batches, DEFAULT_BATCHES);
        assert_eq!(spec.design_points, DesignPoint::ALL);
        assert_eq!(spec.table_scale, DESK_TABLE_SCALE);
        assert_eq!(RunSpec::parse(&spec.to_kv().render()).unwrap(), spec);

        let full = "models = DLRM(2)\nbatches = 4, 8\ndesign_points = centaur\nseed = 1\nout = r.csv\n\
                    table_scale = 1\ndistribution = zipf(1.1)\nparams = p.kv\n";
        let spec = RunSpec::parse(full).unwrap();
        assert_eq!(spec.distribution, IndexDistribution::Zipf(1.1));
        assert_eq!(RunSpec::parse(&spec.to_kv().render()).unwrap(), spec);
    }

    #[test]
    fn runspec_rejections_name_the_key() {
        for (text, key) in [
            ("models = dlrm1\n", "seed"),
            ("seed = 1\n", "models"),
            ("models = ,\nseed = 1\n", "models"),
            ("models = dlrm1\nseed = 1\nbatches = 0\n", "batches"),
            ("models = dlrm1\nseed = 1\ndesign_points = tpu\n", "design_points"),
            ("models = dlrm1\nseed = 1\ncolour = red\n", "colour"),
            ("models = dlrm1\nseed = 1\ntable_scale = 0\n", "table_scale"),
        ] {
            let err = RunSpec::parse(text).unwrap_err();
            assert!(matches!(&err, Error::Config { key: k, .. } if k == key), "{text:?}: {err}");
            assert_eq!(exit_code(&err), 2);
        }
    }

    #[test]
    fn gen_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = cmd_gen(&tiny(), 3, &dir.path().join("a")).unwrap();
        let b = cmd_gen(&tiny(), 3, &dir.path().join("b")).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let blob = |p: &Path| fs::read(p.parent().unwrap().join("model.bin")).unwrap();
        assert_eq!(blob(&a), blob(&b));
        let loaded = load_artifact(a.parent().unwrap()).unwrap();
        assert_eq!(loaded, build_model(&tiny(), 3).unwrap());
    }

    #[test]
    fn verify_passes_healthy_engine() {
        let model = build_model(&tiny(), 1).unwrap();
        let r = cmd_verify(&model, 2, 6, None).unwrap();
        assert_eq!(r.trials, 6);
        assert!(r.samples >= 6 && r.max_rel_error <= VERIFY_TOLERANCE);
        assert_eq!(cmd_verify(&model, 2, 0, None).unwrap().samples, 0);
    }

    #[test]
    fn verify_locates_injected_fault() {
        let model = build_model(&tiny(), 1).unwrap();
        let l = model.config.gathers_per_table;
        // Request 2L+1 is sample 0, table 2, position 1.
        let err = cmd_verify(&model, 2, 3, Some(Fault::OffByOneIndex { request: 2 * l + 1 })).unwrap_err();
        match &err {
            Error::Mismatch { trial: 0, quantity: "reduced embedding", sample: 0, table: Some(2), .. } => {}
            other => panic!("unexpected {other}"),
        }
        assert_eq!(exit_code(&err), 3);
        assert!(err.to_string().contains("sample 0, table 2, element"), "{err}");
    }

    #[test]
    fn sweep_writes_deterministic_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = RunSpec::defaults(4);
        spec.models = vec![ModelRef::Preset("dlrm6".into()), ModelRef::Preset("dlrm1".into())];
        spec.batches = vec![1, 8];
        spec.table_scale = 1024;
        spec.out = Some("out/sweep.csv".into());
        let a = cmd_sweep(&spec, dir.path()).unwrap();
        assert_eq!(a.rows.len(), 2 * 2 * 3);
        assert_eq!(a.rows[0].model, "dlrm6");
        let on_disk = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
        assert_eq!(on_disk, a.csv);
        assert_eq!(cmd_sweep(&spec, dir.path()).unwrap().csv, a.csv);
        assert_eq!(crate::perf::read_rows(on_disk.as_bytes()).unwrap(), a.rows);
        assert!(on_disk.lines().any(|l| l.starts_with("model,batch,design_point,idx_us")));
    }

    #[test]
    fn sweep_missing_params_file_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = RunSpec::defaults(0);
        spec.params = Some("nope.kv".into());
        let err = cmd_sweep(&spec, dir.path()).unwrap_err();
        assert_eq!(exit_code(&err), 4);
        assert!(err.to_string().contains("nope.kv"), "{err}");
    }

    #[test]
    fn cachesim_full_residency_is_miss_free() {
        let cfg = tiny();
        let cache = CacheConfig::new(cfg.total_table_bytes().next_power_of_two() * 2, 16, 64).unwrap();
        let sweep = CacheSweep { batches: vec![1, 4, 16], cache, seed: 0, distribution: IndexDistribution::Uniform };
        let rows = cmd_cachesim(&cfg, &sweep).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.stats.misses == 0 && r.stats.accesses > 0));
        let csv = render_cache_csv(&[("model", "dlrm1".into())], &rows).unwrap();
        assert!(csv.starts_with("# model=dlrm1\nbatch,accesses,hits,misses,miss_rate,mpka\n1,"), "{csv}");
    }
}
