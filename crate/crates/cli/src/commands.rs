//! Subcommand implementations. Each writes its data files into the output
//! directory and returns the `result` section of the run report.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kbal::hic_io::{parse_coordinate_list, PositionConvention};
use kbal::sim::{
    bias_error, oracle_bandwidths, rate_experiment, EstimatorSettings, Method, RateTable, Selection, SimScenario,
    Simulation, ORACLE_BINS,
};
use kbal::{
    bin_sample, histogram_bias, ksk_balance, rescale_to_unit, select_bandwidth, select_binsize, sk_balance,
    ssk_balance, tsv, ChromContext, Grid1D, Parameter, SymmetricMatrix,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    Algorithm, BalanceKernelArgs, BalanceMatrixArgs, Command, EvaluateArgs, IngestArgs, MethodArg, RunConfig,
    SelectBandwidthArgs, SelectBinsizeArgs, SelectionArg, SimulateArgs,
};
use crate::error::{CliError, CliResult};

pub fn run(cfg: &mut RunConfig) -> CliResult<Value> {
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::internal(format!("cannot create {}: {e}", out.display())))?;
    let seed = cfg.seed;
    let matrix_cfg = cfg.matrix_config();
    let kernel_cfg = cfg.kernel_config();
    match &mut cfg.command {
        Command::BalanceMatrix(a) => balance_matrix(a, &out, &matrix_cfg),
        Command::BalanceKernel(a) => balance_kernel(a, &out, &kernel_cfg, seed),
        Command::SelectBandwidth(a) => select_bw(a, &out, &kernel_cfg, seed),
        Command::SelectBinsize(a) => select_bins(a, &out, &matrix_cfg, seed),
        Command::Simulate(a) => simulate(a, &out, cfg.tol, cfg.max_iter, seed),
        Command::Evaluate(a) => evaluate(a, &out, seed),
        Command::Ingest(a) => ingest(a, &out),
        Command::Replay(_) => Err(CliError::input("a replayed report cannot itself be a replay")),
    }
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", path.display())))
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> kbal::Result<()>) -> CliResult<()> {
    let mut w = create(dir, name)?;
    f(&mut w).map_err(CliError::output)?;
    w.flush().map_err(|e| CliError::internal(e.to_string()))
}

pub fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> CliResult<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::internal(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::internal(e.to_string()))
}

/// Opens an input file; any failure while reading it is an input error.
fn read_input<T>(path: &Path, parse: impl FnOnce(Box<dyn std::io::BufRead>) -> kbal::Result<T>) -> CliResult<T> {
    let reader = tsv::open_input(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    parse(reader).map_err(|e| match e {
        kbal::Error::Io(io) => CliError::input(format!("cannot read {}: {io}", path.display())),
        other => CliError::input(format!("{}: {other}", path.display())),
    })
}

fn load_scenario(path: &Option<PathBuf>) -> CliResult<SimScenario> {
    match path {
        None => Ok(SimScenario::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::input(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
        }
    }
}

fn balance_matrix(a: &BalanceMatrixArgs, out: &Path, cfg: &kbal::BalanceConfig) -> CliResult<Value> {
    let c = read_input(&a.input, tsv::read_matrix)?;
    let res = match a.algorithm {
        Algorithm::Sk => sk_balance(&c, cfg)?,
        Algorithm::Ssk => ssk_balance(&SymmetricMatrix::new(c)?, cfg)?,
        Algorithm::Ksk => return Err(CliError::input("--algorithm ksk applies to balance-kernel")),
    };
    write_with(out, "balanced.tsv", |w| tsv::write_matrix(w, &res.balanced))?;
    write_with(out, "vector.tsv", |w| tsv::write_vector(w, &res.d1))?;
    if a.algorithm == Algorithm::Sk {
        write_with(out, "vector_col.tsv", |w| tsv::write_vector(w, &res.d2))?;
    }
    Ok(json!({ "n": res.d1.len(), "iterations": res.iterations, "residual": res.residual }))
}

fn balance_kernel(a: &BalanceKernelArgs, out: &Path, cfg: &kbal::BalanceConfig, seed: u64) -> CliResult<Value> {
    if a.algorithm != Algorithm::Ksk {
        return Err(CliError::input("balance-kernel only supports --algorithm ksk"));
    }
    let sample = read_input(&a.input, tsv::read_sample)?;
    if sample.is_empty() {
        return Err(kbal::Error::EmptySample.into());
    }
    let grid = Grid1D::new(a.grid)?;
    let (bandwidth, selection) = match (a.select, a.bandwidth) {
        (true, _) => {
            let candidates = if a.candidates.is_empty() { oracle_bandwidths() } else { a.candidates.clone() };
            let report = select_bandwidth(&sample, &candidates, grid, cfg, seed)?;
            write_json(out, "selection.json", &report)?;
            (report.chosen.width(), Some(report.chosen))
        }
        (false, Some(h)) => (h, None),
        (false, None) => return Err(CliError::input("give --bandwidth or --select")),
    };
    let res = ksk_balance(&sample, bandwidth, grid, cfg)?;
    write_with(out, "bias.tsv", |w| tsv::write_grid_function(w, &res.bias))?;
    write_with(out, "balancing.tsv", |w| tsv::write_grid_function(w, &res.balancing))?;
    write_with(out, "accumulator.tsv", |w| tsv::write_grid_function(w, &res.accumulator))?;
    Ok(json!({
        "points": sample.len(),
        "total_count": sample.total_count(),
        "bandwidth": bandwidth,
        "selected": selection,
        "iterations": res.iterations,
        "residual": res.residual,
    }))
}

fn select_bw(a: &SelectBandwidthArgs, out: &Path, cfg: &kbal::BalanceConfig, seed: u64) -> CliResult<Value> {
    let sample = read_input(&a.input, tsv::read_sample)?;
    let candidates = if a.candidates.is_empty() { oracle_bandwidths() } else { a.candidates.clone() };
    let report = select_bandwidth(&sample, &candidates, Grid1D::new(a.grid)?, cfg, seed)?;
    write_json(out, "selection.json", &report)?;
    Ok(json!({ "chosen": report.chosen, "failed": report.candidates.iter().filter(|c| c.failed).count() }))
}

fn select_bins(a: &SelectBinsizeArgs, out: &Path, cfg: &kbal::BalanceConfig, seed: u64) -> CliResult<Value> {
    let sample = read_input(&a.input, tsv::read_sample)?;
    let candidates = if a.candidates.is_empty() { ORACLE_BINS.to_vec() } else { a.candidates.clone() };
    let report = select_binsize(&sample, &candidates, cfg, seed)?;
    write_json(out, "selection.json", &report)?;
    let Parameter::Bins(bins) = report.chosen else { unreachable!("bin selection chooses bin counts") };
    let res = ssk_balance(&bin_sample(&sample, bins)?, cfg)?;
    let bias = histogram_bias(&res, Grid1D::new(bins)?)?;
    write_with(out, "bias.tsv", |w| tsv::write_grid_function(w, &bias))?;
    Ok(json!({ "chosen": report.chosen, "failed": report.candidates.iter().filter(|c| c.failed).count() }))
}

fn simulate(
    a: &mut SimulateArgs,
    out: &Path,
    tol: Option<f64>,
    max_iter: Option<usize>,
    seed: u64,
) -> CliResult<Value> {
    let scenario = match &a.resolved_scenario {
        Some(s) => s.clone(),
        None => {
            let mut s = load_scenario(&a.scenario)?;
            s.seed = seed;
            if let Some(m) = a.grid {
                s.grid_m = m;
            }
            s
        }
    };
    a.resolved_scenario = Some(scenario.clone());
    let sim = Simulation::new(scenario.clone())?;
    let sample = if a.n == 0 { kbal::ContactSample::empty() } else { sim.replicate_sample(a.n, 0)? };
    write_with(out, "sample.tsv", |w| tsv::write_sample(w, &sample))?;
    write_with(out, "truth.tsv", |w| tsv::write_grid_function(w, &sim.truth()?))?;

    let mut result = json!({ "n": a.n, "grid_m": scenario.grid_m });
    if a.rate {
        let mut settings = EstimatorSettings::default();
        for c in [&mut settings.kernel, &mut settings.matrix] {
            c.tol = tol.unwrap_or(c.tol);
            c.max_iter = max_iter.unwrap_or(c.max_iter);
        }
        let selection = match a.selection {
            SelectionArg::Cv => Selection::Cv,
            SelectionArg::Oracle => Selection::OracleGrid,
        };
        let methods = match a.method {
            MethodArg::Ksk => vec![Method::KskKernel],
            MethodArg::Ssk => vec![Method::SskHistogram],
            MethodArg::Both => vec![Method::KskKernel, Method::SskHistogram],
        };
        let tables = methods
            .into_iter()
            .map(|m| rate_experiment(&sim, &a.n_list, a.reps, m, selection, &settings))
            .collect::<kbal::Result<Vec<_>>>()?;
        write_with(out, "rate.tsv", |w| write_rate_table(w, &tables))?;
        write_with(out, "rate_runs.tsv", |w| write_rate_runs(w, &tables))?;
        print_rate_summary(&tables);
        result["slopes"] = tables.iter().map(|t| (t.method.name().to_string(), json!(t.slope))).collect();
    }
    Ok(result)
}

fn write_rate_table(w: &mut impl Write, tables: &[RateTable]) -> kbal::Result<()> {
    writeln!(w, "n\tmethod\tparameter\tl2\tfailures")?;
    for t in tables {
        for r in &t.rows {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", r.n, t.method.name(), r.mean_parameter, r.mean_l2, r.failures)?;
        }
    }
    for t in tables {
        match t.slope {
            Some(s) => writeln!(w, "# slope\t{}\t{s}", t.method.name())?,
            None => writeln!(w, "# slope\t{}\tNA", t.method.name())?,
        }
    }
    Ok(())
}

fn write_rate_runs(w: &mut impl Write, tables: &[RateTable]) -> kbal::Result<()> {
    writeln!(w, "n\tmethod\tparameter\tl2")?;
    for t in tables {
        for r in &t.rows {
            for run in &r.runs {
                writeln!(w, "{}\t{}\t{}\t{}", run.n, t.method.name(), run.parameter.width(), run.l2_error)?;
            }
        }
    }
    Ok(())
}

fn print_rate_summary(tables: &[RateTable]) {
    println!("{:>8}  {:<14} {:>10} {:>10}", "n", "method", "parameter", "mean_l2");
    for t in tables {
        for r in &t.rows {
            println!("{:>8}  {:<14} {:>10.5} {:>10.5}", r.n, t.method.name(), r.mean_parameter, r.mean_l2);
        }
    }
    for t in tables {
        match t.slope {
            Some(s) => println!("slope {:<14} {s:.4}", t.method.name()),
            None => println!("slope {:<14} NA", t.method.name()),
        }
    }
}

fn evaluate(a: &mut EvaluateArgs, out: &Path, seed: u64) -> CliResult<Value> {
    let scenario = match &a.resolved_scenario {
        Some(s) => s.clone(),
        None => SimScenario { seed, ..load_scenario(&a.scenario)? },
    };
    a.resolved_scenario = Some(scenario.clone());
    let estimate = read_input(&a.input, tsv::read_grid_function)?;
    let err = bias_error(&estimate, |x| scenario.bias(x))?;
    write_json(out, "evaluation.json", &err)?;
    Ok(json!({ "l2_error": err.l2_error, "mise": err.mise, "grid_m": estimate.grid().len() }))
}

fn ingest(a: &IngestArgs, out: &Path) -> CliResult<Value> {
    let ctx = ChromContext::new(a.chrom_length, a.resolution)?;
    let records = read_input(&a.input, parse_coordinate_list)?;
    let convention = if a.midpoint { PositionConvention::Midpoint } else { PositionConvention::BinStart };
    let sample = rescale_to_unit(&records, &ctx, convention)?;
    write_with(out, "sample.tsv", |w| tsv::write_sample(w, &sample))?;
    if let Some(bins) = a.bins {
        let c = bin_sample(&sample, bins)?;
        write_with(out, "matrix.tsv", |w| tsv::write_matrix(w, c.values()))?;
    }
    Ok(json!({ "records": records.len(), "total_count": sample.total_count(), "bins": a.bins }))
}
