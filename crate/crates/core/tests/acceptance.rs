//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured value, its pinned tolerance and the wall time against budget.

use std::time::{Duration, Instant};

use busyquiet::bench::run_bench;
use busyquiet::bqn::{build_bqn, BqnConfig, LateralDesign, Pathway};
use busyquiet::disentangle::{busy_input, edge_energy_fraction, quiet_raw, DisentangledPair};
use busyquiet::kernels::NormMode;
use busyquiet::mbpm::{
    bandpass_direct, count_macs, count_params, finite_diff_check, mbpm_apply, InputProbe, MbpmConfig, MbpmParams,
    FD_EPSILON,
};
use busyquiet::synthetic::{moving_edge, random_clip, static_clip};
use busyquiet::tensor::temporal_avg_pool;
use busyquiet::toy::{run_toy, ToyRun};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EQUIVALENCE_TOL: f64 = 1e-5;
const ANNIHILATION_TOL: f64 = 1e-6;
const COMPLEMENT_TOL: f64 = 1e-6;
const GRADIENT_TOL: f64 = 1e-3;
const TRAIN_ACCURACY: f64 = 0.9;
const LOSS_DROP: f64 = 0.5;
const IDENTITY_TOL: f64 = 1e-6;
const EDGE_FRACTION: f64 = 0.7;
const EDGE_RADIUS: f64 = 2.0;
const BENCH_TOL: f64 = 1e-5;

fn verdict(id: u32, name: &str, ok: bool, detail: String, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = ok && in_time;
    println!(
        "{} [{id:02}] {name}: {detail}; {:.2}s of {}s budget",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
    assert!(in_time, "criterion {id} ({name}) over budget: {elapsed:?}");
}

fn secs(n: u64) -> Duration {
    Duration::from_secs(n)
}

#[test]
fn c01_parameter_count() {
    let start = Instant::now();
    let params = MbpmParams::init(3, &MbpmConfig::BUSY, true).unwrap();
    let n = count_params(&params);
    verdict(1, "parameter count", n == 252, format!("{n} params, expected 252"), start, secs(1));
}

#[test]
fn c02_mac_count() {
    let start = Instant::now();
    let params = MbpmParams::init(3, &MbpmConfig::BUSY, false).unwrap();
    let macs = count_macs(&params, (24, 3, 224, 224)).unwrap();
    // t·c·h·w·k² spatial plus t/3·c·h·w·3 temporal
    let spatial: u64 = 24 * 3 * 224 * 224 * 81;
    let temporal: u64 = 8 * 3 * 224 * 224 * 3;
    let ok = temporal == 3_612_672 && macs == spatial + temporal && (macs as f64 / 1e9 * 10.0).round() == 3.0;
    verdict(
        2,
        "MAC count",
        ok,
        format!("{macs} MACs = {spatial} + {temporal}, {:.3} G", macs as f64 / 1e9),
        start,
        secs(1),
    );
}

#[test]
fn c03_separable_direct_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = |c| MbpmParams::init(c, &MbpmConfig::BUSY, false).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let shape = (3 * rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(9..=64), rng.random_range(9..=64));
        let clip = random_clip(&mut rng, shape, 0.0, 1.0).unwrap();
        let sep = mbpm_apply(&clip, &params(shape.1)).unwrap();
        let direct = bandpass_direct(&clip, 1.1, 9, 3, NormMode::Sum1).unwrap();
        worst = worst.max(sep.max_abs_diff(&direct).unwrap());
    }
    verdict(
        3,
        "separable/direct equivalence",
        worst <= EQUIVALENCE_TOL,
        format!("max |diff| {worst:.3e} <= {EQUIVALENCE_TOL:.0e} over 20 clips"),
        start,
        secs(30),
    );
}

#[test]
fn c04_static_annihilation() {
    let start = Instant::now();
    let clip = static_clip((9, 3, 40, 40), |c, y, x| ((c * 31 + y * 17 + x * 7) % 23) as f64 / 22.0).unwrap();
    let mut worst: f64 = 0.0;
    for sigma in [0.9, 1.1] {
        for k in [3, 7, 9] {
            for stride in [3, 1] {
                let cfg = MbpmConfig { sigma, k, stride, norm_mode: NormMode::Sum1 };
                let gamma = mbpm_apply(&clip, &MbpmParams::init(3, &cfg, false).unwrap()).unwrap();
                worst = worst.max(gamma.max_abs());
            }
        }
    }
    verdict(
        4,
        "static-video annihilation",
        worst <= ANNIHILATION_TOL,
        format!("max |Γ| {worst:.3e} <= {ANNIHILATION_TOL:.0e}"),
        start,
        secs(10),
    );
}

#[test]
fn c05_temporal_reduction() {
    let start = Instant::now();
    let params = MbpmParams::init(3, &MbpmConfig::BUSY, false).unwrap();
    let nine = mbpm_apply(&busyquiet::VideoClip::zeros(9, 3, 16, 16).unwrap(), &params).unwrap().t();
    let twenty_four = mbpm_apply(&busyquiet::VideoClip::zeros(24, 3, 16, 16).unwrap(), &params).unwrap().t();
    verdict(
        5,
        "temporal reduction",
        (nine, twenty_four) == (3, 8),
        format!("9 -> {nine}, 24 -> {twenty_four}"),
        start,
        secs(1),
    );
}

#[test]
fn c06_complementarity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = MbpmParams::init(3, &MbpmConfig::BUSY, false).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let shape = (3 * rng.random_range(1..=8), 3, rng.random_range(16..=64), rng.random_range(16..=64));
        let clip = random_clip(&mut rng, shape, 0.0, 1.0).unwrap();
        let gamma = busy_input(&clip, &params).unwrap();
        let recon = quiet_raw(&clip, &gamma).unwrap().add(&gamma).unwrap();
        worst = worst.max(recon.max_abs_diff(&temporal_avg_pool(&clip).unwrap()).unwrap());
    }
    verdict(
        6,
        "busy/quiet complementarity",
        worst <= COMPLEMENT_TOL,
        format!("max |avg3 - (quiet + Γ)| {worst:.3e} <= {COMPLEMENT_TOL:.0e}"),
        start,
        secs(10),
    );
}

#[test]
fn c07_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stride = if seed % 2 == 0 { 3 } else { 1 };
        let cfg = MbpmConfig { k: [3, 5, 9][seed as usize % 3], stride, ..MbpmConfig::BUSY };
        let c = rng.random_range(1..=3);
        let clip = random_clip(&mut rng, (6, c, 12, 12), 0.0, 1.0).unwrap();
        let mut params = MbpmParams::init(c, &cfg, true).unwrap();
        // move off the initial taps so the check is not specific to them
        if seed >= 10 {
            for ch in 0..c {
                params.spatial.channel_mut(ch).iter_mut().for_each(|w| *w += rng.random_range(-0.05..0.05));
                params.temporal.channel_mut(ch).iter_mut().for_each(|w| *w += rng.random_range(-0.05..0.05));
            }
        }
        let report = finite_diff_check(&clip, &params, InputProbe::Sample { count: 64, seed }, FD_EPSILON).unwrap();
        worst = worst.max(report.max_rel_err);
    }
    verdict(
        7,
        "gradient correctness",
        worst <= GRADIENT_TOL,
        format!("max rel err {worst:.3e} <= {GRADIENT_TOL:.0e} over 20 seeds, eps {FD_EPSILON:.0e}"),
        start,
        secs(60),
    );
}

#[test]
fn c08_trainability() {
    let start = Instant::now();
    let run = ToyRun::default();
    assert_eq!((run.task.clips, run.task.frames, run.task.size, run.steps), (200, 6, 32, 500));
    let (report, _) = run_toy(&run).unwrap();
    let (first, last) = (report.loss_curve[0], report.loss_curve[run.steps]);
    let drop = 1.0 - last / first;
    verdict(
        8,
        "toy trainability",
        report.accuracy >= TRAIN_ACCURACY && drop >= LOSS_DROP,
        format!(
            "accuracy {:.3} >= {TRAIN_ACCURACY}, loss {first:.4} -> {last:.4} (drop {:.1}% >= {:.0}%)",
            report.accuracy,
            100.0 * drop,
            100.0 * LOSS_DROP
        ),
        start,
        secs(300),
    );
}

#[test]
fn c09_lateral_init_identity() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let graph = build_bqn(&BqnConfig::toy(10, seed).with_laterals_everywhere(LateralDesign::Bplc)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let pair = DisentangledPair {
            busy: random_clip(&mut rng, (3, 3, 32, 32), -1.0, 1.0).unwrap(),
            quiet: random_clip(&mut rng, (3, 3, 20, 20), 0.0, 1.0).unwrap(),
        };
        let with = graph.forward(&pair).unwrap();
        let without = graph.forward_without_laterals(&pair).unwrap();
        worst = with.iter().zip(&without).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    verdict(
        9,
        "lateral init-identity",
        worst <= IDENTITY_TOL,
        format!("max |score diff| {worst:.3e} <= {IDENTITY_TOL:.0e} over 10 seeds"),
        start,
        secs(30),
    );
}

#[test]
fn c10_alternation_structure() {
    let start = Instant::now();
    let mut checked = 0;
    let mut ok = true;
    for blocks in [vec![1, 1, 1, 1], vec![3, 4, 6, 3]] {
        let mut cfg = BqnConfig::toy(2, 0);
        cfg.blocks = blocks;
        cfg.widths = vec![4, 4, 8, 8];
        let graph = build_bqn(&cfg.with_laterals_everywhere(LateralDesign::Bplc)).unwrap();
        for (i, targets) in graph.fusion_schedule() {
            let want = if i % 2 == 0 { Pathway::Busy } else { Pathway::Quiet };
            ok &= targets == [want];
            checked += 1;
        }
        ok &= graph.fusion_schedule().len() == graph.block_count();
    }
    verdict(
        10,
        "alternation structure",
        ok && checked == 20,
        format!("{checked} laterals: even -> busy, odd -> quiet"),
        start,
        secs(1),
    );
}

#[test]
fn c11_busy_energy_localization() {
    let start = Instant::now();
    let (clip, edges) = moving_edge(24, 1, 32, 96, 20, 2).unwrap();
    let gamma = busy_input(&clip, &MbpmParams::init(1, &MbpmConfig::BUSY, false).unwrap()).unwrap();
    let frac = edge_energy_fraction(&gamma, &edges, EDGE_RADIUS);
    verdict(
        11,
        "busy-energy localization",
        frac >= EDGE_FRACTION,
        format!("{:.1}% of energy within {EDGE_RADIUS} px, need {:.0}%", 100.0 * frac, 100.0 * EDGE_FRACTION),
        start,
        secs(10),
    );
}

#[test]
fn c12_benchmark_sanity() {
    let start = Instant::now();
    let shapes = [(6, 3, 64, 64), (24, 3, 112, 112), (9, 1, 224, 224)];
    let report = run_bench(&shapes, 3, 9).unwrap();
    let worst = report.summaries.iter().map(|s| s.max_abs_diff).fold(0.0, f64::max);
    let recorded = report.cases.len() == 2 * shapes.len()
        && report.cases.iter().all(|c| c.median_seconds > 0.0 && c.macs > 0);
    verdict(
        12,
        "benchmark sanity",
        worst <= BENCH_TOL && recorded,
        format!("max |diff| {worst:.3e} <= {BENCH_TOL:.0e} on {} shapes, timings and MACs recorded", shapes.len()),
        start,
        secs(120),
    );
}
