//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::cell::Cell;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use centaur_sim::cache::{simulate, CacheConfig};
use centaur_sim::engine::{
    infer_accelerated, infer_accelerated_with, plan_tiles, tiled_gemm, CompletionOrder, SparseOptions, Stage, Unit,
};
use centaur_sim::perf::{effective_embedding_throughput, sweep_cells, summarize, rows, DesignPoint, PlatformParams, SweepOptions};
use centaur_sim::reference;
use centaur_sim::report::{cmd_cachesim, CacheSweep, DEFAULT_BATCHES};
use centaur_sim::tensor::{normwise_relative_error, relative_error, Matrix};
use centaur_sim::workload::{
    build_model, generate_batch, interaction_width, Activation, IndexDistribution, ModelConfig, Preset,
    DESK_TABLE_SCALE, PRESETS,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol * target
}

fn small_model_strategy() -> impl Strategy<Value = (ModelConfig, usize, u64, bool)> {
    (
        1usize..=8,
        1usize..=10_000,
        prop::sample::select(vec![8usize, 16, 32, 64]),
        1usize..=12,
        1usize..=32,
        1usize..=24,
        1usize..=24,
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(t, r, d, l, b, hb, ht, seed, shuffled)| {
            let cfg = ModelConfig {
                name: "random".into(),
                num_tables: t,
                gathers_per_table: l,
                embedding_dim: d,
                rows_per_table: r,
                bottom_mlp_dims: vec![5, hb, d],
                top_mlp_dims: vec![interaction_width(t, d), ht, 1],
                dense_feature_dim: 5,
                element_bytes: 4,
                hidden_activation: Activation::Relu,
            };
            (cfg, b, seed, shuffled)
        })
}

fn c1_oracle_equivalence() -> Outcome {
    let worst = Cell::new(0.0f64);
    let result = runner(100).run(&small_model_strategy(), |(cfg, b, seed, shuffled)| {
        let model = build_model(&cfg, seed).unwrap();
        let batch = generate_batch(&cfg, b, IndexDistribution::Uniform, seed ^ 1).unwrap();
        let completion = if shuffled { CompletionOrder::Shuffled(seed) } else { CompletionOrder::InOrder };
        let opts = SparseOptions { completion, ..SparseOptions::default() };
        let run = infer_accelerated_with(&model, &batch, &opts).unwrap();
        let want = reference::infer(&model, &batch).unwrap();
        prop_assert_eq!(run.output.probabilities.len(), b);
        for (g, w) in run.output.probabilities.iter().zip(&want.probabilities) {
            let e = relative_error(*g, *w);
            worst.set(worst.get().max(e));
            prop_assert!(e <= 1e-4, "probability {} vs {}", g, w);
        }
        let reduced = reference::reduce_all(&model, &batch).unwrap();
        for (g, w) in run.reduced.as_slice().iter().zip(reduced.as_slice()) {
            let e = relative_error(*g, *w);
            worst.set(worst.get().max(e));
            prop_assert!(e <= 1e-4, "reduced {} vs {}", g, w);
        }
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, format!("100 models, max relative error {:e} (<= 1e-4)", worst.get())),
        Err(e) => outcome(false, format!("{e}")),
    }
}

fn naive(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0f64;
            for k in 0..a.cols() {
                s += f64::from(a.get(i, k)) * f64::from(b.get(k, j));
            }
            c.set(i, j, s as f32);
        }
    }
    c
}

fn c2_gemm() -> Outcome {
    let worst = Cell::new(0.0f64);
    let strat = (1usize..=128, 1usize..=128, 1usize..=128).prop_flat_map(|(m, n, k)| {
        (
            Just((m, n, k)),
            prop::collection::vec(-1.0f32..1.0, m * k),
            prop::collection::vec(-1.0f32..1.0, k * n),
        )
    });
    let result = runner(200).run(&strat, |((m, n, k), a, b)| {
        let s = plan_tiles(m, n, k).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for op in &s.ops {
            prop_assert!(seen.insert((op.m, op.n, op.k)), "duplicate tile op");
        }
        prop_assert_eq!(seen.len(), m.div_ceil(32) * n.div_ceil(32) * k.div_ceil(32));
        let a = Matrix::from_vec(m, k, a).unwrap();
        let b = Matrix::from_vec(k, n, b).unwrap();
        let e = normwise_relative_error(tiled_gemm(&a, &b, &s).unwrap().as_slice(), naive(&a, &b).as_slice());
        worst.set(worst.get().max(e));
        prop_assert!(e <= 1e-5, "relative error {}", e);
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, format!("200 GEMMs, max relative error {:e} (<= 1e-5), tile counts match", worst.get())),
        Err(e) => outcome(false, format!("{e}")),
    }
}

fn c3_throughput() -> Outcome {
    let mut problems = Vec::new();
    let cases: [(u64, f64, f64); 3] =
        [(8_192_000, 6.883e-4, 8_192_000.0 / 6.883e-4 / 1e9), (0, 2.5, 0.0), (123_456_789, 1.0, 0.123456789)];
    for (bytes, t, want) in cases {
        let got = effective_embedding_throughput(bytes, t).unwrap();
        if got != want {
            problems.push(format!("({bytes} B, {t} s) gave {got}, expected {want}"));
        }
    }
    let hand = effective_embedding_throughput(8_192_000, 6.883e-4).unwrap();
    if !within(hand, 11.9, 0.001) {
        problems.push(format!("DLRM(4) B=16 example gave {hand} GB/s"));
    }
    if effective_embedding_throughput(1, 0.0).is_ok() {
        problems.push("zero latency accepted".into());
    }
    for p in PRESETS {
        let cfg = p.config_scaled(DESK_TABLE_SCALE * 16).unwrap();
        let model = build_model(&cfg, 1).unwrap();
        for b in [1usize, 3, 16] {
            let batch = generate_batch(&cfg, b, IndexDistribution::Uniform, 2).unwrap();
            let run = infer_accelerated(&model, &batch).unwrap();
            let summed: u64 = run
                .log
                .events()
                .iter()
                .filter(|e| e.stage == Stage::Emb && e.unit == Unit::Ebgu)
                .map(|e| e.bytes)
                .sum();
            let want = (b * cfg.num_tables * cfg.gathers_per_table * cfg.embedding_dim * cfg.element_bytes) as u64;
            if summed != want {
                problems.push(format!("{} B={b}: logged {summed} gather bytes, expected {want}", p.name));
            }
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("hand values exact, DLRM(4) B=16 example {hand:.4} GB/s, gather bytes = B*T*L*D*4 for all six shapes")
        } else {
            problems.join("; ")
        },
    )
}

fn desk_sweep() -> Vec<centaur_sim::perf::SweepCell> {
    let models: Vec<_> = PRESETS.iter().map(|p| p.config_scaled(DESK_TABLE_SCALE).unwrap()).collect();
    sweep_cells(&models, &DEFAULT_BATCHES, &PlatformParams::default(), &SweepOptions::default()).unwrap()
}

fn c4_bands(cells: &[centaur_sim::perf::SweepCell]) -> Outcome {
    let s = summarize(&rows(cells));
    let (slo, shi) = s.speedup.unwrap();
    let (elo, ehi) = s.efficiency.unwrap();
    let pass = within(slo, 1.7, 0.15) && within(shi, 17.2, 0.15) && within(elo, 1.7, 0.15) && within(ehi, 19.5, 0.15);
    outcome(
        pass,
        format!(
            "speedup {slo:.3}..{shi:.3} (edges 1.7/17.2 +-15%), efficiency {elo:.3}..{ehi:.3} (edges 1.7/19.5 +-15%)"
        ),
    )
}

fn c5_emb_dominance(cells: &[centaur_sim::perf::SweepCell]) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["dlrm2", "dlrm4", "dlrm5"] {
        let c = cells.iter().find(|c| c.model == name && c.batch == 128).unwrap();
        let f = c.cpu_only.emb / c.cpu_only.total;
        pass &= f >= 0.59;
        parts.push(format!("{name} {f:.3}"));
    }
    outcome(pass, format!("CPU-only EMB fraction at B=128: {} (>= 0.59)", parts.join(", ")))
}

fn c6_design_ordering(cells: &[centaur_sim::perf::SweepCell]) -> Outcome {
    let s = summarize(&rows(cells));
    let lat = s.cpu_gpu_latency_ratio.unwrap();
    let en = s.cpu_gpu_energy_ratio.unwrap();
    outcome(
        within(lat, 1.1, 0.20) && within(en, 1.9, 0.25),
        format!("mean CPU-only over CPU-GPU: speedup {lat:.3} (1.1 +-20%), efficiency {en:.3} (1.9 +-25%)"),
    )
}

fn c7_link_cap(cells: &[centaur_sim::perf::SweepCell]) -> Outcome {
    let p = PlatformParams::default();
    let mut centaur_peak = 0.0f64;
    let mut cpu_peak = 0.0f64;
    for c in cells {
        for pt in &c.points {
            match pt.design_point {
                DesignPoint::Centaur => centaur_peak = centaur_peak.max(pt.eff_gbps),
                DesignPoint::CpuOnly => cpu_peak = cpu_peak.max(pt.eff_gbps),
                DesignPoint::CpuGpu => {}
            }
        }
    }
    outcome(
        centaur_peak <= p.link_bw_eff && within(centaur_peak, 11.9, 0.15) && cpu_peak <= p.cpu_peak_mem_bw,
        format!(
            "centaur peak {centaur_peak:.3} GB/s (11.9 +-15%, <= {}), cpu_only peak {cpu_peak:.3} GB/s (<= {})",
            p.link_bw_eff, p.cpu_peak_mem_bw
        ),
    )
}

fn c8_cache() -> Outcome {
    let mut problems = Vec::new();

    let cold = CacheConfig::new(1 << 20, 8, 64).unwrap();
    let distinct: Vec<u64> = (0..50_000u64).map(|i| i * 64).collect();
    if simulate(&distinct, &cold).miss_rate != 1.0 {
        problems.push("compulsory misses".to_string());
    }

    let w = cold.lines();
    let looped: Vec<u64> = (0..100).flat_map(|_| (0..w).map(|i| i * 64)).collect();
    let s = simulate(&looped, &cold);
    if s.misses != w {
        problems.push(format!("resident loop took {} misses, expected {w}", s.misses));
    }

    let strat = (prop::collection::vec(0u64..8192, 1..4000), 0u32..7, 0u32..5);
    let mono = runner(256).run(&strat, |(lines, ls, lw)| {
        let trace: Vec<u64> = lines.iter().map(|l| l * 64).collect();
        let (sets, ways) = (1u64 << ls, 1u64 << lw);
        let base = simulate(&trace, &CacheConfig::new(sets * ways * 64, ways, 64).unwrap());
        let wider = simulate(&trace, &CacheConfig::new(sets * ways * 128, ways * 2, 64).unwrap());
        let taller = simulate(&trace, &CacheConfig::new(sets * ways * 128, ways, 64).unwrap());
        prop_assert!(wider.misses <= base.misses && taller.misses <= base.misses);
        Ok(())
    });
    if let Err(e) = mono {
        problems.push(format!("LRU capacity monotonicity: {e}"));
    }

    let cfg = Preset::by_name("dlrm2").unwrap().config().unwrap();
    let llc = CacheConfig::new(32 << 20, 16, 64).unwrap();
    if cfg.total_table_bytes() < 10 * llc.capacity {
        problems.push("tables are not 10x the cache".to_string());
    }
    let sweep = CacheSweep {
        batches: DEFAULT_BATCHES.to_vec(),
        cache: llc,
        seed: 0,
        distribution: IndexDistribution::Uniform,
    };
    let trend: Vec<f64> = cmd_cachesim(&cfg, &sweep).unwrap().iter().map(|r| r.stats.miss_rate).collect();
    if !trend.windows(2).all(|w| w[1] >= w[0]) {
        problems.push(format!("miss rate not non-decreasing: {trend:?}"));
    }
    let shown: Vec<String> = trend.iter().map(|m| format!("{m:.4}")).collect();
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "invariants exact; dlrm2 {:.2} GB tables, 32 MiB LRU, miss rate over B=1..128: {}",
                cfg.total_table_bytes() as f64 / 1e9,
                shown.join(" ")
            )
        } else {
            problems.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut check = |id: u32, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let dt = t.elapsed();
        let in_time = dt <= budget;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let timing = if in_time { String::new() } else { format!(" [over {budget:?} budget]") };
        println!(
            "{} criterion {id} ({name}): {} in {:.2}s{timing}",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            dt.as_secs_f64()
        );
    };
    let minute = Duration::from_secs(60);
    check(1, "oracle equivalence", 2 * minute, &mut c1_oracle_equivalence);
    check(2, "GEMM correctness", minute, &mut c2_gemm);
    check(3, "throughput formula", minute, &mut c3_throughput);

    let t = Instant::now();
    let cells = desk_sweep();
    let sweep_time = t.elapsed();
    let sweep_budget = minute.saturating_sub(sweep_time);
    check(4, "speedup and efficiency bands", sweep_budget, &mut || c4_bands(&cells));
    check(5, "CPU-only embedding dominance", minute, &mut || c5_emb_dominance(&cells));
    check(6, "design-point ordering", minute, &mut || c6_design_ordering(&cells));
    check(7, "link cap", minute, &mut || c7_link_cap(&cells));
    check(8, "cache-sim properties", 2 * minute, &mut c8_cache);

    if failed == 0 {
        println!("acceptance: all 8 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 8 criteria failed");
        ExitCode::FAILURE
    }
}
