use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use centaur_sim::cache::{CacheConfig, CacheRow};
use centaur_sim::engine::Fault;
use centaur_sim::perf::DesignPoint;
use centaur_sim::report::{
    cachesim_trace, cmd_cachesim, cmd_gen, cmd_sweep, cmd_verify, exit_code, load_artifact, load_params, read_text,
    render_cache_csv, write_file, CacheSweep, ModelRef, RunSpec, DEFAULT_BATCHES,
};
use centaur_sim::workload::{build_model, IndexDistribution, ModelConfig};
use centaur_sim::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "centaur-sim", version, about = "Recommendation inference simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a model and write its blob plus manifest.
    Gen(GenArgs),
    /// Check the accelerator model against the reference engine on random batches.
    Verify(VerifyArgs),
    /// Time every (model, batch, design point) and write result rows as CSV.
    Sweep(SweepArgs),
    /// Replay gather traces through an LRU cache.
    Cachesim(CachesimArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model config file or preset name (dlrm1..dlrm6).
    #[arg(long)]
    config: String,
    /// Divides a preset's table budget.
    #[arg(long, default_value_t = 1)]
    table_scale: u64,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        ModelRef::new(&self.config).resolve(Path::new(""), self.table_scale)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for model.kv and model.bin.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Directory or manifest written by `gen`.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    model: Option<PathBuf>,
    /// Build the model from a config file or preset instead.
    #[arg(long)]
    config: Option<String>,
    #[arg(long, default_value_t = 1)]
    table_scale: u64,
    /// Seeds the trial batches, and the weights when building from --config.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Corrupt the row index of this gather request in every trial.
    #[arg(long, hide = true)]
    inject_off_by_one: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Run spec file; the six presets at desk scale when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    batches: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    design_points: Option<Vec<DesignPoint>>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Platform parameter file.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    table_scale: Option<u64>,
    #[arg(long)]
    distribution: Option<IndexDistribution>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CachesimArgs {
    /// Model config file or preset; required unless --trace is given.
    #[arg(long, required_unless_present = "trace")]
    config: Option<String>,
    #[arg(long, default_value_t = 1)]
    table_scale: u64,
    /// Trace file with one hex address per line, simulated on a cold cache.
    #[arg(long, conflicts_with = "config")]
    trace: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    batches: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = IndexDistribution::Uniform)]
    distribution: IndexDistribution,
    /// Platform parameter file supplying the default cache geometry.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    cache_bytes: Option<u64>,
    #[arg(long)]
    ways: Option<u64>,
    #[arg(long)]
    line_size: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::Cachesim(a) => cachesim(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    let manifest = cmd_gen(&cfg, a.seed, &a.out)?;
    let text = read_text(&manifest)?;
    println!("{}", text.lines().next().unwrap_or_default().trim_start_matches("# "));
    println!("wrote {}", manifest.display());
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let model = match (&a.model, &a.config) {
        (Some(dir), _) => load_artifact(dir)?,
        (None, Some(c)) => build_model(&ModelRef::new(c).resolve(Path::new(""), a.table_scale)?, a.seed)?,
        (None, None) => return Err(Error::Invalid("give --model or --config".into())),
    };
    let fault = a.inject_off_by_one.map(|request| Fault::OffByOneIndex { request });
    if a.trials == 0 {
        eprintln!("warning: 0 trials requested, nothing was compared");
    }
    let r = cmd_verify(&model, a.seed, a.trials, fault)?;
    println!(
        "PASS: {} trials, {} samples, max relative error {:e}",
        r.trials, r.samples, r.max_rel_error
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (mut spec, base) = match &a.config {
        Some(path) => {
            let mut spec = RunSpec::parse(&read_text(path)?)?;
            if let Some(seed) = a.seed {
                spec.seed = seed;
            }
            (spec, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (RunSpec::defaults(a.seed.unwrap_or(0)), PathBuf::new()),
    };
    if let Some(m) = a.models {
        spec.models = m
            .iter()
            .map(|s| match ModelRef::new(s) {
                ModelRef::File(p) => Ok(ModelRef::File(std::path::absolute(&p).map_err(Error::file(&p))?)),
                preset => Ok(preset),
            })
            .collect::<Result<_>>()?;
    }
    if let Some(b) = a.batches {
        spec.batches = b;
    }
    if let Some(d) = a.design_points {
        spec.design_points = d;
    }
    if let Some(t) = a.table_scale {
        spec.table_scale = t;
    }
    if let Some(d) = a.distribution {
        spec.distribution = d;
    }
    if let Some(p) = a.params {
        spec.params = Some(std::path::absolute(&p).map_err(Error::file(&p))?);
    }
    if let Some(o) = a.out {
        spec.out = Some(std::path::absolute(&o).map_err(Error::file(&o))?);
    }
    // Command-line paths above are absolute, so only spec-file paths use `base`.
    let out = cmd_sweep(&spec, &base)?;
    if spec.out.is_some() {
        print!("{}", out.summary.render());
    } else {
        std::io::stdout().write_all(out.csv.as_bytes())?;
        eprint!("{}", out.summary.render());
    }
    Ok(())
}

fn cachesim(a: CachesimArgs) -> Result<()> {
    let params = load_params(a.params.as_deref())?;
    let cache = CacheConfig::new(
        a.cache_bytes.unwrap_or(params.llc_bytes),
        a.ways.unwrap_or(u64::from(params.llc_ways)),
        a.line_size.unwrap_or(u64::from(params.line_bytes)),
    )?;
    let geometry = format!("{}B/{}way/{}B", cache.capacity, cache.ways, cache.line_size);
    let csv = match (&a.trace, &a.config) {
        (Some(trace), _) => {
            let stats = cachesim_trace(trace, &cache)?;
            render_cache_csv(
                &[("trace", trace.display().to_string()), ("cache", geometry)],
                &[CacheRow { batch: None, stats }],
            )?
        }
        (None, Some(c)) => {
            let cfg = ModelRef::new(c).resolve(Path::new(""), a.table_scale)?;
            let sweep = CacheSweep {
                batches: a.batches.unwrap_or_else(|| DEFAULT_BATCHES.to_vec()),
                cache,
                seed: a.seed,
                distribution: a.distribution,
            };
            let rows = cmd_cachesim(&cfg, &sweep)?;
            render_cache_csv(
                &[
                    ("model", cfg.name.clone()),
                    ("table_bytes_total", cfg.total_table_bytes().to_string()),
                    ("cache", geometry),
                    ("seed", a.seed.to_string()),
                    ("distribution", a.distribution.to_string()),
                    ("protocol", "warm: stats over a second identical pass".into()),
                ],
                &rows,
            )?
        }
        (None, None) => return Err(Error::Invalid("give --config or --trace".into())),
    };
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes()),
        None => Ok(std::io::stdout().write_all(csv.as_bytes())?),
    }
}
