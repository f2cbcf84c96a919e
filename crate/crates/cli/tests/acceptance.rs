//! Acceptance suite: ten end-to-end criteria, run one after another so the
//! runtime limits are measured without contention. Prints one PASS/FAIL line
//! per criterion and exits nonzero if any fails.
//!
//! `cargo test -p kbal-cli --test acceptance -- 3 5` runs a subset.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kbal::sim::{rate_experiment, EstimatorSettings, Method, Selection, SimScenario, Simulation};
use kbal::{
    balance_operator_step, cssk_grid_balance, hilbert_distance, kde_2d, ksk_balance,
    marginal_kde, select_binsize, sk_balance, ssk_balance, BalanceConfig, ContactPoint, ContactSample, Grid1D,
    GridFunction1D, PositiveVector, SymmetricMatrix, WeightedSample,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_symmetric(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(0.1..10.0);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

fn unit_mean(values: impl Iterator<Item = f64>, grid: Grid1D) -> GridFunction1D {
    GridFunction1D::new(grid, values.collect()).unwrap().unit_mean().unwrap()
}

/// Balancing correctness on random positive symmetric matrices.
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = BalanceConfig::default();
    let (mut worst_residual, mut worst_gap, mut failures) = (0.0f64, 0.0f64, Vec::new());
    for case in 0..200 {
        let n = rng.random_range(3..=50);
        let c = random_symmetric(n, &mut rng);
        let ssk = match ssk_balance(&SymmetricMatrix::new(c.clone()).unwrap(), &cfg) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let sk = sk_balance(&c, &cfg).unwrap();
        let symmetric = ssk.balanced == ssk.balanced.t();
        let factorizes = ssk
            .balanced
            .indexed_iter()
            .all(|((i, j), &p)| (p - ssk.d1[i] * c[[i, j]] * ssk.d1[j]).abs() <= 1e-12 * p);
        let gap = ssk.balanced.iter().zip(&sk.balanced).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_residual = worst_residual.max(ssk.residual);
        worst_gap = worst_gap.max(gap);
        if !symmetric || !factorizes || ssk.residual > 1e-8 || gap > 1e-8 || ssk.iterations > 10_000 {
            failures.push(format!("case {case}: symmetric={symmetric} factorizes={factorizes} gap={gap:e}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!("200 matrices, max residual {worst_residual:.1e}, max |P_ssk - P_sk| {worst_gap:.1e}{}", fail_note(&failures)),
    )
}

fn fail_note(failures: &[String]) -> String {
    match failures.first() {
        None => String::new(),
        Some(f) => format!("; {} failures, first: {f}", failures.len()),
    }
}

/// Hilbert-metric contraction of the balance operator.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(2..=20);
        let c = SymmetricMatrix::new(random_symmetric(n, &mut rng)).unwrap();
        let x = PositiveVector::new((0..n).map(|_| rng.random_range(0.01..100.0)).collect()).unwrap();
        let y = PositiveVector::new((0..n).map(|_| rng.random_range(0.01..100.0)).collect()).unwrap();
        let before = hilbert_distance(&x, &y).unwrap();
        let after =
            hilbert_distance(&balance_operator_step(&c, &x).unwrap(), &balance_operator_step(&c, &y).unwrap()).unwrap();
        worst_ratio = worst_ratio.max(after / before);
        if after.partial_cmp(&before) != Some(std::cmp::Ordering::Less) {
            failures.push(format!("case {case}: {after} >= {before}"));
        }
    }
    outcome(failures.is_empty(), format!("1000 triples, max contraction ratio {worst_ratio:.4}{}", fail_note(&failures)))
}

/// Axis quadrature of the 2D estimate against the 1D marginal.
fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = Grid1D::new(256).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=40);
        let s = ContactSample::new(
            (0..n).map(|_| ContactPoint::new(rng.random(), rng.random(), rng.random_range(1..6) as f64)).collect(),
        )
        .unwrap();
        let ws = WeightedSample::new(&s, (0..n).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap();
        let h = rng.random_range(0.03..0.3);
        let f = kde_2d(&ws, h, grid).unwrap();
        let r = marginal_kde(&ws, h, grid).unwrap();
        worst = worst.max(f.row_marginal().sup_distance(&r).unwrap());
    }
    outcome(worst <= 1e-6, format!("50 samples, max sup-norm gap {worst:.2e} (limit 1e-6)"))
}

/// Kernel balancing against grid balancing of the same 2D estimate.
fn criterion_4() -> Outcome {
    let sim = Simulation::new(SimScenario::with_seed(4)).unwrap();
    let grid = sim.grid();
    let tight = BalanceConfig::new(1e-11, 10_000);
    let mut worst = 0.0f64;
    for rep in 0..20 {
        let s = sim.replicate_sample(2_000, rep).unwrap();
        for h in [0.02, 0.05, 0.1] {
            let ksk = ksk_balance(&s, h, grid, &tight).unwrap();
            let (_, hgrid) = cssk_grid_balance(&kde_2d(&WeightedSample::uniform(&s), h, grid).unwrap(), &tight).unwrap();
            let a = unit_mean(ksk.balancing.values().iter().copied(), grid);
            let b = unit_mean(hgrid.values().iter().copied(), grid);
            worst = worst.max(a.sup_distance(&b).unwrap());
        }
    }
    outcome(worst <= 1e-5, format!("20 samples x 3 bandwidths, max gap after gauge {worst:.2e} (limit 1e-5)"))
}

/// Noise-free round trip through distortion and grid balancing.
fn criterion_5() -> Outcome {
    let sim = Simulation::new(SimScenario::default()).unwrap();
    let grid = sim.grid();
    let (_, h) = cssk_grid_balance(sim.distorted(), &BalanceConfig::new(1e-12, 100_000)).unwrap();
    let recovered = unit_mean(h.values().iter().map(|v| 1.0 / v), grid);
    let err = recovered.sup_distance(&sim.truth().unwrap()).unwrap();
    outcome(err <= 1e-4, format!("m = {}, sup-norm error {err:.2e} (limit 1e-4)", grid.len()))
}

/// KSK against SSK at N = 65 000 with oracle parameters.
fn criterion_6() -> Outcome {
    let sim = Simulation::new(SimScenario::default()).unwrap();
    let settings = EstimatorSettings::default();
    let (mut err_ok, mut width_ok, mut both_ok) = (0, 0, 0);
    let (mut ksk_l2, mut ssk_l2, mut ksk_h, mut ssk_w) = (0.0, 0.0, 0.0, 0.0);
    let reps = 10;
    for rep in 0..reps {
        let k = sim.replicate(65_000, rep, Method::KskKernel, Selection::OracleGrid, &settings).unwrap();
        let s = sim.replicate(65_000, rep, Method::SskHistogram, Selection::OracleGrid, &settings).unwrap();
        let e = k.l2_error < s.l2_error;
        let w = k.parameter.width() > s.parameter.width();
        err_ok += e as usize;
        width_ok += w as usize;
        both_ok += (e && w) as usize;
        ksk_l2 += k.l2_error;
        ssk_l2 += s.l2_error;
        ksk_h += k.parameter.width();
        ssk_w += s.parameter.width();
    }
    let r = reps as f64;
    outcome(
        both_ok >= 9 && ksk_l2 < ssk_l2 && ksk_h > ssk_w,
        format!(
            "mean L2 ksk {:.4} vs ssk {:.4} (error ordering {err_ok}/10); mean bandwidth {:.4} vs bin width {:.4} \
             (width ordering {width_ok}/10); both {both_ok}/10, need 9",
            ksk_l2 / r,
            ssk_l2 / r,
            ksk_h / r,
            ssk_w / r
        ),
    )
}

/// Log-log slopes of the error against sample size.
fn criterion_7() -> Outcome {
    let sim = Simulation::new(SimScenario::default()).unwrap();
    let settings = EstimatorSettings::default();
    let n_list = [4_000, 8_000, 16_000, 32_000, 64_000];
    let ksk = rate_experiment(&sim, &n_list, 10, Method::KskKernel, Selection::OracleGrid, &settings).unwrap();
    let ssk = rate_experiment(&sim, &n_list, 10, Method::SskHistogram, Selection::OracleGrid, &settings).unwrap();
    let (ks, ss) = (ksk.slope.unwrap(), ssk.slope.unwrap());
    let failures: usize = ksk.rows.iter().chain(&ssk.rows).map(|r| r.failures).sum();
    let means = |t: &kbal::sim::RateTable| t.rows.iter().map(|r| format!("{:.4}", r.mean_l2)).collect::<Vec<_>>().join(",");
    outcome(
        (-0.48..=-0.18).contains(&ks) && (-0.40..=-0.10).contains(&ss) && failures == 0,
        format!("slope ksk {ks:.3} in [-0.48,-0.18], ssk {ss:.3} in [-0.40,-0.10]; means ksk [{}] ssk [{}]; failed runs {failures}", means(&ksk), means(&ssk)),
    )
}

/// Cross-validated choices against the error-minimizing grid choice.
fn criterion_8() -> Outcome {
    let sim = Simulation::new(SimScenario::default()).unwrap();
    let settings = EstimatorSettings::default();
    let runs = 30;
    let (mut within, mut ksk_gap, mut ssk_gap) = (0, 0.0, 0.0);
    for i in 0..runs {
        let n = 20_000 + (55_000 * i) / (runs - 1);
        let k = sim.compare_cv_to_oracle(n, i, Method::KskKernel, &settings).unwrap();
        let s = sim.compare_cv_to_oracle(n, i, Method::SskHistogram, &settings).unwrap();
        within += (k.mise_ratio() <= 2.0) as usize;
        ksk_gap += k.mise_ratio() - 1.0;
        ssk_gap += s.mise_ratio() - 1.0;
    }
    let r = runs as f64;
    outcome(
        within * 10 >= runs * 8 && ksk_gap < ssk_gap,
        format!(
            "ksk within 2x of grid-minimal MISE in {within}/{runs} runs (need 80%); mean MISE excess ksk {:.2} vs ssk {:.2}",
            ksk_gap / r,
            ssk_gap / r
        ),
    )
}

/// Zero rows fail the histogram path while kernel balancing still converges.
fn criterion_9() -> Outcome {
    let sim = Simulation::new(SimScenario::default()).unwrap();
    let full = sim.replicate_sample(5_000, 0).unwrap();
    // remove every contact touching [0.4, 0.6)
    let gap = |v: f64| (0.4..0.6).contains(&v);
    let s = ContactSample::new(full.points().iter().copied().filter(|p| !gap(p.x) && !gap(p.y)).collect()).unwrap();
    let report = match select_binsize(&s, &[2, 10, 20, 40], &BalanceConfig::default(), 9) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("bin selection errored: {e}")),
    };
    let failed: Vec<String> = report.candidates.iter().filter(|c| c.failed).map(|c| format!("{:?}", c.parameter)).collect();
    let sparse_failed = report.candidates.iter().filter(|c| !matches!(c.parameter, kbal::Parameter::Bins(2))).all(|c| c.failed);
    let ksk = ksk_balance(&s, 0.05, sim.grid(), &BalanceConfig::kernel());
    let detail = match &ksk {
        Ok(r) => format!("ksk residual {:.1e} after {} iterations", r.residual, r.iterations),
        Err(e) => format!("ksk failed: {e}"),
    };
    outcome(
        sparse_failed && ksk.as_ref().is_ok_and(|r| r.residual <= 1e-6),
        format!("failed bin candidates [{}]; {detail}", failed.join(", ")),
    )
}

fn kbal_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kbal")).args(args).output().unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

/// Every subcommand twice, with different thread counts, byte for byte.
fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    fs::write(root.join("m.tsv"), "n=3\n2\t1\t0.5\n1\t3\t1\n0.5\t1\t4\n").unwrap();
    fs::write(root.join("coo.tsv"), "0\t0\t4\n25000\t75000\t2\n50000\t25000\t1\n").unwrap();
    let setup = kbal_cli(&["simulate", "--n", "4000", "--seed", "10", "--output-dir", &p("data")]);
    if !setup.status.success() {
        return outcome(false, format!("setup failed: {}", String::from_utf8_lossy(&setup.stderr)));
    }
    let sample = p("data/sample.tsv");
    let truth = p("data/truth.tsv");
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("balance-matrix", vec!["balance-matrix", "--input", "M", "--algorithm", "sk"]),
        ("balance-kernel", vec!["balance-kernel", "--input", "S", "--select", "--candidates", "0.02,0.05,0.1"]),
        ("select-bandwidth", vec!["select-bandwidth", "--input", "S", "--candidates", "0.02,0.05"]),
        ("select-binsize", vec!["select-binsize", "--input", "S", "--candidates", "8,16"]),
        ("simulate", vec!["simulate", "--n", "2000", "--rate", "--n-list", "1000,2000", "--reps", "2", "--method", "both"]),
        ("evaluate", vec!["evaluate", "--input", "T"]),
        ("ingest", vec!["ingest", "--input", "C", "--chrom-length", "100000", "--resolution", "25000", "--bins", "4"]),
    ];
    let mut failures = Vec::new();
    for (name, template) in &runs {
        let out = p(&format!("out-{name}"));
        let args: Vec<String> = template
            .iter()
            .map(|a| match *a {
                "M" => p("m.tsv"),
                "S" => sample.clone(),
                "T" => truth.clone(),
                "C" => p("coo.tsv"),
                other => other.to_string(),
            })
            .collect();
        let mut snapshots = Vec::new();
        for threads in ["1", "3"] {
            let _ = fs::remove_dir_all(&out);
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--seed", "21", "--threads", threads, "--output-dir", &out]);
            let o = kbal_cli(&full);
            if !o.status.success() {
                failures.push(format!("{name}: {}", String::from_utf8_lossy(&o.stderr).trim()));
            }
            snapshots.push(read_dir_sorted(Path::new(&out)));
        }
        // the replay reruns the stored configuration into the same directory
        let report = root.join(format!("{name}-report.json"));
        fs::copy(Path::new(&out).join("report.json"), &report).unwrap();
        fs::remove_dir_all(&out).unwrap();
        let o = kbal_cli(&["replay", "--report", &report.to_string_lossy()]);
        if !o.status.success() {
            failures.push(format!("replay {name}: {}", String::from_utf8_lossy(&o.stderr).trim()));
        }
        snapshots.push(read_dir_sorted(Path::new(&out)));
        if snapshots.windows(2).any(|w| w[0] != w[1]) {
            failures.push(format!("{name}: outputs differ"));
        }
    }
    outcome(failures.is_empty(), format!("{} subcommands plus replay compared{}", runs.len(), fail_note(&failures)))
}

type Criterion = (usize, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, criterion_1, Duration::from_secs(10)),
        (2, criterion_2, Duration::from_secs(5)),
        (3, criterion_3, Duration::from_secs(30)),
        (4, criterion_4, Duration::from_secs(120)),
        (5, criterion_5, Duration::from_secs(60)),
        (6, criterion_6, Duration::from_secs(20 * 60)),
        (7, criterion_7, Duration::from_secs(45 * 60)),
        (8, criterion_8, Duration::from_secs(60 * 60)),
        (9, criterion_9, Duration::from_secs(60)),
        (10, criterion_10, Duration::from_secs(120)),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, run, limit) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = result.pass && in_time;
        println!(
            "criterion {id:>2}: {} [{:.1}s of {}s] {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            result.detail
        );
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
