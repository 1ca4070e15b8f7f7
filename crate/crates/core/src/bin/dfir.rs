//! Command-line harness: property verification, benchmarks, demo forward
//! passes, and fixture generation.
//!
//! Exit codes: 0 success, 1 verification failures, 2 usage/config errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dfir_core::bench::{bench_attention, bench_conv};
use dfir_core::config::{RunConfig, BLOCK_CHOICES, DEMO_CHOICES};
use dfir_core::demo::{demo_anup, demo_dcfa, demo_dfpn, demo_firc3, StageStat};
use dfir_core::fft::FftElement;
use dfir_core::io::{read_tensor, write_tensor, AnyTensor};
use dfir_core::report::SuiteReport;
use dfir_core::rng::rand_tensor;
use dfir_core::suite::{run_suite, CaseOutcome, SuiteConfig};
use dfir_core::tensor::Tensor;
use dfir_core::{DType, Element};

#[derive(Parser)]
#[command(name = "dfir", version, about = "Verification harness for the kernel library")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Block selection: dcfa | dfpn | firc3 | all.
    #[arg(long)]
    block: Option<String>,
    /// Element type: f32 | f64.
    #[arg(long)]
    dtype: Option<String>,
    /// Tolerance override applied to every case.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Comma-separated seed list; the DFIR_SEED environment variable
    /// overrides it.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// JSON config file; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 forces fully sequential execution.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected property suites and write a JSON report.
    Verify(CommonArgs),
    /// Measure dense-vs-sparse attention and direct-vs-transform convolution.
    Bench(CommonArgs),
    /// Run one forward pass and print per-stage statistics.
    Demo {
        #[command(flatten)]
        common: CommonArgs,
        /// Input fixture path, or "random".
        #[arg(long, default_value = "random")]
        input: String,
    },
    /// Generate a tensor fixture file.
    FixturesGen {
        /// Extents like 1x16x8x8.
        #[arg(long, default_value = "1x16x8x8")]
        shape: String,
        #[arg(long, default_value = "f64")]
        dtype: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// random | ones | zeros.
        #[arg(long, default_value = "random")]
        fill: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn assemble_config(common: &CommonArgs, allowed: &[&str]) -> Result<RunConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            RunConfig::from_json(&text).map_err(|e| format!("bad config: {e}"))?
        }
        None => RunConfig::default(),
    };
    if let Some(block) = &common.block {
        cfg.block = block.clone();
    }
    if let Some(dtype) = &common.dtype {
        cfg.dtype = dtype.clone();
    }
    if let Some(t) = common.tolerance {
        cfg.tolerance = Some(t);
    }
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.display().to_string());
    }
    if let Ok(env_seed) = std::env::var("DFIR_SEED") {
        let seed: u64 = env_seed
            .parse()
            .map_err(|_| format!("DFIR_SEED '{env_seed}' is not an integer"))?;
        cfg.seeds = vec![seed];
    }
    cfg.validate(allowed).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn write_report(report: &SuiteReport, out: &Option<String>) -> Result<(), String> {
    if let Some(path) = out {
        std::fs::write(path, report.to_json()).map_err(|e| format!("cannot write {path}: {e}"))?;
        eprintln!("report written to {path}");
    }
    Ok(())
}

fn run() -> Result<ExitCode, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Verify(common) => {
            let cfg = assemble_config(&common, &BLOCK_CHOICES)?;
            let suite_cfg = SuiteConfig {
                seeds: cfg.seeds.clone(),
                tolerance_override: cfg.tolerance,
                threads: cfg.threads,
                grid: cfg.grid.clone(),
            };
            let mut report = SuiteReport::new(cfg.clone());
            for name in cfg.selected_suites() {
                let oracle = run_suite(name, &suite_cfg).map_err(|e| e.to_string())?;
                for case in &oracle.cases {
                    match &case.outcome {
                        CaseOutcome::Pass { max_err } => println!(
                            "PASS  {name}/{} max_rel_err={max_err:.3e} tol={:.1e}",
                            case.name, case.tolerance
                        ),
                        CaseOutcome::Fail { max_err } => println!(
                            "FAIL  {name}/{} max_rel_err={max_err:.3e} tol={:.1e}",
                            case.name, case.tolerance
                        ),
                        CaseOutcome::Error { message } => {
                            println!("ERROR {name}/{}: {message}", case.name)
                        }
                    }
                }
                report.absorb(&oracle);
            }
            println!(
                "summary: {} passed, {} failed, {} errored",
                report.summary.pass, report.summary.fail, report.summary.error
            );
            write_report(&report, &report.config.out.clone())?;
            Ok(ExitCode::from(report.exit_code() as u8))
        }
        Command::Bench(common) => {
            let cfg = assemble_config(&common, &BLOCK_CHOICES)?;
            let seed = cfg.seeds[0];
            let mut report = SuiteReport::new(cfg.clone());
            let attn = bench_attention(
                &cfg.bench.attn_n,
                cfg.bench.attn_d,
                &cfg.bench.attn_k_divisors,
                cfg.bench.runs,
                seed,
            )
            .map_err(|e| e.to_string())?;
            let conv = bench_conv(
                &cfg.bench.conv_extents,
                &cfg.bench.conv_kernels,
                cfg.bench.conv_channels,
                cfg.bench.runs,
                seed,
            )
            .map_err(|e| e.to_string())?;
            for rec in attn.iter().chain(conv.iter()) {
                println!(
                    "{:<18} {:>34} median {:>10.3} ms over {} runs",
                    rec.op,
                    format!("{:?}", rec.sizes),
                    rec.median_ms,
                    rec.runs
                );
            }
            // Soft ordering observations; recorded, never asserted.
            for &n in &cfg.bench.attn_n {
                let dense = attn
                    .iter()
                    .find(|r| r.op == "attention_dense" && r.sizes["n"] == n as u64)
                    .map(|r| r.median_ms);
                let mut sweep: Vec<(u64, f64)> = attn
                    .iter()
                    .filter(|r| r.op == "attention_sparse" && r.sizes["n"] == n as u64)
                    .map(|r| (r.sizes["k"], r.median_ms))
                    .collect();
                sweep.sort_by_key(|&(k, _)| k);
                let monotone = sweep.windows(2).all(|w| w[0].1 <= w[1].1);
                println!(
                    "note: N={n}: sparse medians over K {:?}; non-decreasing in K: {monotone}",
                    sweep
                );
                if let (Some(d), Some(&(_, full))) = (dense, sweep.last()) {
                    println!(
                        "note: N={n}: sparse at largest K is {:.2}x dense (soft overhead bound)",
                        full / d
                    );
                }
            }
            report.benchmarks.extend(attn);
            report.benchmarks.extend(conv);
            write_report(&report, &report.config.out.clone())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Demo { common, input } => {
            let cfg = assemble_config(&common, &DEMO_CHOICES)?;
            let seed = cfg.seeds[0];
            let out_path = cfg
                .out
                .clone()
                .unwrap_or_else(|| format!("demo_{}.dfir", cfg.block));
            match cfg.dtype.as_str() {
                "f32" => demo_run::<f32>(&cfg, &input, seed, &out_path)?,
                _ => demo_run::<f64>(&cfg, &input, seed, &out_path)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::FixturesGen {
            shape,
            dtype,
            seed,
            fill,
            out,
        } => {
            let extents = parse_shape(&shape)?;
            let tensor = match (dtype.as_str(), fill.as_str()) {
                ("f32", "random") => AnyTensor::F32(rand_tensor(&extents, seed)),
                ("f32", "ones") => AnyTensor::F32(Tensor::full(&extents, 1.0)),
                ("f32", "zeros") => AnyTensor::F32(Tensor::zeros(&extents)),
                ("f64", "random") => AnyTensor::F64(rand_tensor(&extents, seed)),
                ("f64", "ones") => AnyTensor::F64(Tensor::full(&extents, 1.0)),
                ("f64", "zeros") => AnyTensor::F64(Tensor::zeros(&extents)),
                _ => {
                    return Err(format!(
                        "dtype '{dtype}' must be f32/f64 and fill '{fill}' one of random|ones|zeros"
                    ))
                }
            };
            write_tensor(&out, &tensor).map_err(|e| e.to_string())?;
            println!("wrote {} {} fixture {}", shape, dtype, out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_shape(text: &str) -> Result<Vec<usize>, String> {
    let extents: Result<Vec<usize>, _> = text.split('x').map(str::parse).collect();
    let extents = extents.map_err(|_| format!("bad shape '{text}', expected like 1x16x8x8"))?;
    if extents.is_empty() || extents.contains(&0) {
        return Err(format!("bad shape '{text}': extents must be >= 1"));
    }
    Ok(extents)
}

fn load_input<T: Element>(input: &str, cfg: &RunConfig, seed: u64) -> Result<Tensor<T>, String> {
    if input == "random" {
        return Ok(rand_tensor(&cfg.demo.shape, seed));
    }
    let any = read_tensor(input).map_err(|e| e.to_string())?;
    let as64 = any.to_f64();
    if as64.shape().len() != 4 {
        return Err(format!(
            "demo input must be rank 4, fixture has shape {:?}",
            as64.shape()
        ));
    }
    Ok(Tensor::from_f64_tensor(&as64))
}

fn print_stages(stages: &[StageStat]) {
    println!(
        "{:<20} {:>16} {:>12} {:>12} {:>12} {:>12}",
        "stage", "shape", "min", "max", "mean", "l1"
    );
    for s in stages {
        println!(
            "{:<20} {:>16} {:>12.5} {:>12.5} {:>12.5} {:>12.5}",
            s.name,
            format!("{:?}", s.shape),
            s.min,
            s.max,
            s.mean,
            s.l1
        );
    }
}

fn demo_run<T: FftElement>(
    cfg: &RunConfig,
    input: &str,
    seed: u64,
    out_path: &str,
) -> Result<(), String> {
    let x: Tensor<T> = load_input(input, cfg, seed)?;
    let (out, stages) = match cfg.block.as_str() {
        "dcfa" => demo_dcfa(&x, cfg.demo.depth, seed),
        "dfpn" => demo_dfpn(&x, cfg.demo.scale, seed),
        "firc3" => demo_firc3(&x, cfg.demo.depth, seed),
        "anup" => demo_anup(&x, cfg.demo.scale, seed),
        other => return Err(format!("demo block '{other}' unknown")),
    }
    .map_err(|e| e.to_string())?;
    print_stages(&stages);
    let any = match T::DTYPE {
        DType::F32 => AnyTensor::F32(Tensor::from_f64_tensor(&out.to_f64())),
        DType::F64 => AnyTensor::F64(out.to_f64()),
    };
    write_tensor(out_path, &any).map_err(|e| e.to_string())?;
    println!("output fixture written to {out_path}");
    Ok(())
}
