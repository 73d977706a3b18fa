//! `wpool`: compress networks into a shared weight pool, calibrate them,
//! run the bit-serial engine and sweep the cost model.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use wpool::costmodel::{caching_sweep, model_compression_report, speedup_curve, BenchLayer, ReportConfig};
use wpool::engine::{
    calibrate, run_network, Board, CacheMode, EngineConfig, MemoryModel, PrecomputeMode,
};
use wpool::fixtures::{build_fixture, random_inputs, FixtureKind};
use wpool::model::{load_model, read_raw_tensor, save_model, write_raw_tensor};
use wpool::pooler::{compress_model, load_compressed, save_compressed, Exclusions, PoolConfig, DEFAULT_SEED};
use wpool::quant::{build_lut, encode_lut, LutOrder};
use wpool::{ErrorCategory, Tensor};

#[derive(Parser, Debug)]
#[command(name = "wpool", version, about = "Weight-pool compression and bit-serial lookup inference")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster a WPNN model into a weight pool and write a WPNC container.
    Compress(CompressArgs),
    /// Set per-layer activation ranges from a directory of raw tensors.
    Calibrate(CalibrateArgs),
    /// Run one input through the engine and report modeled costs.
    Run(RunArgs),
    /// Sweep the cost model over bitwidths or filter counts.
    Bench(BenchArgs),
    /// Write the lookup table of a compressed model as a standalone blob.
    GenLut(GenLutArgs),
    /// Write a seeded synthetic model and optional random inputs.
    GenFixture(GenFixtureArgs),
}

#[derive(Args, Debug)]
struct CompressArgs {
    /// WPNN model to compress.
    model: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 64)]
    pool_size: usize,
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    #[arg(long, env = "WPOOL_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Width of the embedded lookup table.
    #[arg(long, default_value_t = 8)]
    lut_bits: u32,
    /// Bits charged per stored index in the report.
    #[arg(long, default_value_t = 8)]
    index_bits: u32,
    /// Pool the first layer too.
    #[arg(long)]
    compress_first: bool,
    /// Pool fully-connected layers too.
    #[arg(long)]
    compress_fc: bool,
    /// Extra layer positions to keep raw.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<usize>,
    /// Also write the compression report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// WPNC container to calibrate.
    model: PathBuf,
    /// Directory of raw input tensors, read in file-name order.
    samples: PathBuf,
    #[arg(long, default_value_t = 8)]
    act_bits: u32,
    /// Output container; defaults to rewriting the input.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecomputeArg {
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OrderArg {
    Input,
    Weight,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BoardArg {
    McLarge,
    McSmall,
    Custom,
}

#[derive(Args, Debug)]
struct EngineArgs {
    #[arg(long, default_value_t = 8)]
    act_bits: u32,
    #[arg(long, default_value_t = 8)]
    lut_bits: u32,
    #[arg(long, value_enum, default_value_t = PrecomputeArg::Auto)]
    precompute: PrecomputeArg,
    /// Never copy table blocks into SRAM.
    #[arg(long, conflicts_with = "force_cache")]
    no_cache: bool,
    /// Always cache, failing when SRAM is too small.
    #[arg(long)]
    force_cache: bool,
    #[arg(long, value_enum, default_value_t = OrderArg::Input)]
    order: OrderArg,
    #[arg(long, value_enum, default_value_t = BoardArg::McLarge)]
    board: BoardArg,
    /// Latency overrides, e.g. flash=4,sram=1,alu=1.
    #[arg(long)]
    mem_latency: Option<String>,
}

impl EngineArgs {
    fn config(&self) -> EngineConfig {
        EngineConfig {
            act_bits: self.act_bits,
            lut_bits: self.lut_bits,
            precompute: match self.precompute {
                PrecomputeArg::Auto => PrecomputeMode::Auto,
                PrecomputeArg::On => PrecomputeMode::On,
                PrecomputeArg::Off => PrecomputeMode::Off,
            },
            cache: if self.no_cache {
                CacheMode::Off
            } else if self.force_cache {
                CacheMode::Force
            } else {
                CacheMode::Auto
            },
            order: match self.order {
                OrderArg::Input => LutOrder::InputOriented,
                OrderArg::Weight => LutOrder::WeightOriented,
            },
            trace: false,
        }
    }

    fn memory(&self) -> Result<MemoryModel> {
        let board = match self.board {
            BoardArg::McLarge => Board::McLarge,
            BoardArg::McSmall => Board::McSmall,
            BoardArg::Custom => Board::Custom,
        };
        let mem = MemoryModel::for_board(board);
        Ok(match &self.mem_latency {
            Some(spec) => mem.with_latencies(spec)?,
            None => mem,
        })
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Calibrated WPNC container.
    model: PathBuf,
    /// Raw input tensor.
    input: PathBuf,
    /// Raw output tensor.
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    /// Write per-layer counters as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Write the memory access trace of every bit-serial layer.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// `bits=1..8`, `bits=8,4,2` or `filters=32,64,128,192`.
    #[arg(long)]
    sweep: String,
    /// Input height and width.
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 128)]
    in_ch: usize,
    /// Filter count for bitwidth sweeps.
    #[arg(long, default_value_t = 128)]
    filters: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 64)]
    pool_size: usize,
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    #[arg(long, env = "WPOOL_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    engine: EngineArgs,
    /// Write the curve as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenLutArgs {
    /// WPNC container holding the pool.
    model: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 8)]
    lut_bits: u32,
    #[arg(long, value_enum, default_value_t = OrderArg::Input)]
    order: OrderArg,
}

#[derive(Args, Debug)]
struct GenFixtureArgs {
    /// resnet10, resnet14, tinyconv, mobilenet or classifier.
    #[arg(long)]
    kind: String,
    #[arg(long, env = "WPOOL_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    /// Directory for random input tensors.
    #[arg(long)]
    inputs: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    count: usize,
}

/// A flag combination clap cannot reject on its own.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

enum Sweep {
    Bits(Vec<u32>),
    Filters(Vec<usize>),
}

fn parse_list<T: std::str::FromStr>(list: &str, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (
                a.trim().parse().map_err(|_| usage(format!("bad {what} range {part:?}")))?,
                b.trim().parse().map_err(|_| usage(format!("bad {what} range {part:?}")))?,
            );
            if a > b {
                return Err(usage(format!("empty {what} range {part:?}")));
            }
            for v in a..=b {
                out.push(v.to_string().parse().map_err(|_| usage(format!("bad {what} {v}")))?);
            }
        } else {
            out.push(part.parse().map_err(|_| usage(format!("bad {what} {part:?}")))?);
        }
    }
    if out.is_empty() {
        return Err(usage(format!("empty {what} sweep")));
    }
    Ok(out)
}

fn parse_sweep(s: &str) -> Result<Sweep> {
    let (key, list) = s
        .split_once('=')
        .ok_or_else(|| usage(format!("sweep {s:?} is not bits=... or filters=...")))?;
    match key.trim() {
        "bits" => Ok(Sweep::Bits(parse_list(list, "bitwidth")?)),
        "filters" => Ok(Sweep::Filters(parse_list(list, "filter")?)),
        other => Err(usage(format!("unknown sweep {other:?}"))),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_compress(a: &CompressArgs) -> Result<()> {
    let graph = load_model(&a.model)?;
    let cfg = PoolConfig {
        group_size: a.group_size,
        pool_size: a.pool_size,
        seed: a.seed,
        max_iter: a.max_iter,
        exclusions: Exclusions {
            first_layer: !a.compress_first,
            fully_connected: !a.compress_fc,
            layers: a.exclude.clone(),
            ..Exclusions::default()
        },
    };
    let (mut model, stats) = compress_model(&graph, &cfg)?;
    if let Some(pool) = &model.pool {
        model.lut = Some(build_lut(pool, a.lut_bits, LutOrder::InputOriented, model.weight_bits)?);
    }
    save_compressed(&model, &a.output)?;
    let report = model_compression_report(
        &model,
        &ReportConfig {
            weight_bits: model.weight_bits,
            lut_bits: a.lut_bits,
            index_bits: a.index_bits,
        },
    )?;
    let mut out = io::stdout().lock();
    write!(out, "{}", report.to_text())?;
    writeln!(
        out,
        "mean cosine distance {:.4} over {} vectors",
        stats.overall.mean_cosine_distance, stats.vectors_clustered
    )?;
    for w in &stats.warnings {
        writeln!(out, "warning: {w}")?;
    }
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(())
}

fn read_samples(dir: &Path) -> Result<Vec<Tensor>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    paths
        .iter()
        .map(|p| read_raw_tensor(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let mut model = load_compressed(&a.model)?;
    let samples = read_samples(&a.samples)?;
    let ranges = calibrate(&mut model, &samples, a.act_bits)?;
    let out = a.output.as_ref().unwrap_or(&a.model);
    save_compressed(&model, out)?;
    let mut stdout = io::stdout().lock();
    for (i, r) in ranges.iter().enumerate() {
        writeln!(stdout, "layer {i:>3}  range [0, {:.6}]", r.hi)?;
    }
    writeln!(stdout, "revision {}", model.revision)?;
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let model = load_compressed(&a.model)?;
    let input = read_raw_tensor(&a.input)?;
    let mut cfg = a.engine.config();
    cfg.trace = a.trace.is_some();
    let mem = a.engine.memory()?;
    let (output, run) = run_network(&model, &input, &cfg, &mem)?;
    write_raw_tensor(&output, &a.output)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:>5}  {:<16} {:<10} {:>4} {:>10} {:>7} {:>14}",
        "layer", "kind", "path", "bits", "precompute", "cached", "cycles"
    )?;
    for l in &run.layers {
        let path = match l.path {
            wpool::engine::ExecPath::BitSerial => "bit-serial",
            wpool::engine::ExecPath::Reference => "reference",
        };
        writeln!(
            out,
            "{:>5}  {:<16} {:<10} {:>4} {:>10} {:>7} {:>14}",
            l.index, l.kind, path, l.executed_bits, l.precompute, l.cached, l.stats.modeled_cycles
        )?;
    }
    writeln!(out, "modeled_cycles {}", run.total.modeled_cycles)?;
    writeln!(out, "output shape {:?}", output.shape())?;
    if let Some(p) = &a.stats {
        write_json(p, &run)?;
    }
    if let Some(p) = &a.trace {
        let mut f = io::BufWriter::new(fs::File::create(p)?);
        for l in &run.layers {
            if let Some(t) = &l.trace {
                t.write_lines(&mut f, &format!("layer{}", l.index))?;
            }
        }
        f.flush()?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let sweep = parse_sweep(&a.sweep)?;
    let layer = BenchLayer {
        size: a.size,
        in_ch: a.in_ch,
        filters: a.filters,
        kernel: a.kernel,
        group_size: a.group_size,
        pool_size: a.pool_size,
        seed: a.seed,
    };
    let cfg = a.engine.config();
    let mem = a.engine.memory()?;
    let curve = match sweep {
        Sweep::Bits(bits) => speedup_curve(&layer, &cfg, &mem, &bits)?,
        Sweep::Filters(filters) => caching_sweep(&layer, &filters, &cfg, &mem)?,
    };
    print!("{}", curve.to_text());
    if let Some(p) = &a.csv {
        curve.write_csv(fs::File::create(p)?)?;
    }
    Ok(())
}

fn cmd_gen_lut(a: &GenLutArgs) -> Result<()> {
    let model = load_compressed(&a.model)?;
    let Some(pool) = &model.pool else {
        bail!(wpool::Error::EmptyPool);
    };
    let order = match a.order {
        OrderArg::Input => LutOrder::InputOriented,
        OrderArg::Weight => LutOrder::WeightOriented,
    };
    let lut = build_lut(pool, a.lut_bits, order, model.weight_bits)?;
    fs::write(&a.output, encode_lut(&lut)?)?;
    println!(
        "{} table: N={} S={} B_l={} scale 2^{} ({} bytes of entries)",
        lut.order(),
        lut.group_size(),
        lut.pool_size(),
        lut.bits(),
        lut.scale_exp(),
        lut.storage_bits() / 8
    );
    Ok(())
}

fn cmd_gen_fixture(a: &GenFixtureArgs) -> Result<()> {
    let kind: FixtureKind = a.kind.parse().map_err(|e: wpool::Error| usage(e.to_string()))?;
    let graph = build_fixture(kind, a.seed)?;
    save_model(&graph, &a.output)?;
    println!("{} with {} weights -> {}", kind.name(), graph.parameter_count(), a.output.display());
    if let Some(dir) = &a.inputs {
        fs::create_dir_all(dir)?;
        for (i, x) in random_inputs(kind.input_shape(), a.count, a.seed ^ 0x1f).iter().enumerate() {
            write_raw_tensor(x, dir.join(format!("input_{i:04}.raw")))?;
        }
        info!("{} inputs -> {}", a.count, dir.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<wpool::Error>().map(wpool::Error::category) {
        Some(ErrorCategory::Config) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Compress(a) => cmd_compress(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::GenLut(a) => cmd_gen_lut(a),
        Command::GenFixture(a) => cmd_gen_fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
