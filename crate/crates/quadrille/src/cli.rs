//! Command-line front end: configuration ranking, step simulation,
//! self-verification, kernel tuning, and efficiency accounting.
//!
//! Every command prints a human-readable summary to stdout and, when an
//! output directory is set (`--out` or the `QUADRILLE_OUT` environment
//! variable), writes machine-readable JSON/CSV files into it. Commands never
//! put wall-clock readings into `simulate` outputs, so identical invocations
//! with identical seeds produce byte-identical files.
//!
//! Exit codes: 0 on success, 1 on bad input or a failed check, 2 when no
//! grid can run the requested model.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops;
use crate::grid::{enumerate_configs, Grid, GridConfig};
use crate::matrix::DenseMatrix;
use crate::overlap::{build_schedule, sweep_schedules, CommCost, OverlapFlags, PhaseCompute};
use crate::perfmodel::{layer_volumes, network_comm_time, rank_configs, CollectiveVolumes, CommEstimate};
use crate::pmm::{
    alternating_specs, measure_step_comm, oracle, tune_matmul_mode, LayerSpec, Network,
    StepCommTimes, WallClockTimer,
};
use crate::simnet::{ClusterSpec, FaultInjection, SimNet};

/// Environment variable consulted for the output directory when `--out` is
/// absent.
pub const OUT_ENV: &str = "QUADRILLE_OUT";

// ---------------------------------------------------------------------------
// Model sources
// ---------------------------------------------------------------------------

/// A bundled transformer proxy: every layer is a square `hidden x hidden`
/// weight, `layers` deep, with transposes alternating so shards chain
/// without redistribution.
#[derive(Debug, Clone, Copy)]
pub struct GptPreset {
    pub name: &'static str,
    pub layers: usize,
    pub hidden: usize,
}

/// Presets named by parameter count.
pub const GPT_PRESETS: [GptPreset; 9] = [
    GptPreset { name: "gpt-5b", layers: 24, hidden: 4096 },
    GptPreset { name: "gpt-10b", layers: 32, hidden: 5120 },
    GptPreset { name: "gpt-20b", layers: 32, hidden: 7168 },
    GptPreset { name: "gpt-40b", layers: 38, hidden: 9216 },
    GptPreset { name: "gpt-60b", layers: 56, hidden: 9216 },
    GptPreset { name: "gpt-80b", layers: 42, hidden: 12288 },
    GptPreset { name: "gpt-160b", layers: 84, hidden: 12288 },
    GptPreset { name: "gpt-320b", layers: 96, hidden: 16384 },
    GptPreset { name: "gpt-640b", layers: 192, hidden: 16384 },
];

pub fn preset_by_name(name: &str) -> Result<&'static GptPreset> {
    let want = name.to_ascii_lowercase();
    let want = want.strip_prefix("gpt-").unwrap_or(&want);
    GPT_PRESETS
        .iter()
        .find(|p| p.name["gpt-".len()..] == *want)
        .ok_or_else(|| {
            let names: Vec<&str> = GPT_PRESETS.iter().map(|p| p.name).collect();
            Error::Config(format!("unknown preset {name:?}; expected one of {}", names.join(", ")))
        })
}

/// On-disk model description: `{"batch_rows": m, "layers": [{"k": .., "n": ..}]}`.
/// Layers may pin `"transposed"`; unset layers alternate by index so the
/// chain stays compatible.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub batch_rows: usize,
    pub layers: Vec<ModelFileLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFileLayer {
    pub k: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transposed: Option<bool>,
}

impl ModelFile {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<ModelFile> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Layer specs with shapes chained and transposes resolved.
    pub fn specs(&self) -> Result<Vec<LayerSpec>> {
        if self.layers.is_empty() {
            return Err(Error::Config("model file lists no layers".into()));
        }
        let mut specs = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            if idx > 0 && layer.k != self.layers[idx - 1].n {
                return Err(Error::Config(format!(
                    "layer {idx} expects {} inputs but layer {} emits {}",
                    layer.k,
                    idx - 1,
                    self.layers[idx - 1].n
                )));
            }
            let transposed = layer.transposed.unwrap_or(idx % 2 == 1);
            specs.push(
                LayerSpec::new(self.batch_rows, layer.k, layer.n).with_transposed(transposed),
            );
        }
        Ok(specs)
    }
}

/// A resolved model: its display name, batch height, and layer stack.
#[derive(Debug, Clone)]
pub struct ModelSource {
    pub name: String,
    pub specs: Vec<LayerSpec>,
}

/// Model selection shared by the commands that need layer shapes.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Bundled proxy model (gpt-5b .. gpt-640b)
    #[arg(long, conflicts_with = "model")]
    preset: Option<String>,

    /// JSON model file: {"batch_rows": m, "layers": [{"k": .., "n": ..}]}
    #[arg(long)]
    model: Option<PathBuf>,

    /// Global batch rows (presets only; analysis commands default to 2048,
    /// numeric simulation to 256)
    #[arg(long)]
    batch_rows: Option<usize>,

    /// Divide preset hidden widths by this factor (numeric simulation
    /// defaults to 64 so a desk machine can execute the step; analysis
    /// commands default to 1)
    #[arg(long)]
    proxy_scale: Option<usize>,
}

impl ModelArgs {
    fn resolve(&self, default_batch: usize, default_scale: usize) -> Result<ModelSource> {
        let scale = self.proxy_scale.unwrap_or(default_scale);
        if scale == 0 {
            return Err(Error::Config("--proxy-scale must be nonzero".into()));
        }
        if let Some(path) = &self.model {
            if self.proxy_scale.is_some() {
                return Err(Error::Config(
                    "--proxy-scale applies to presets; scale the model file instead".into(),
                ));
            }
            let mut file = ModelFile::from_json_file(path)?;
            if let Some(m) = self.batch_rows {
                file.batch_rows = m;
            }
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into());
            return Ok(ModelSource { name, specs: file.specs()? });
        }
        if let Some(preset) = &self.preset {
            let p = preset_by_name(preset)?;
            if p.hidden % scale != 0 {
                return Err(Error::Config(format!(
                    "{} has hidden width {}, not divisible by --proxy-scale {}",
                    p.name, p.hidden, scale
                )));
            }
            let hidden = p.hidden / scale;
            let batch = self.batch_rows.unwrap_or(default_batch);
            let widths = vec![hidden; p.layers + 1];
            let name = if scale == 1 {
                p.name.to_string()
            } else {
                format!("{}/{}", p.name, scale)
            };
            return Ok(ModelSource { name, specs: alternating_specs(batch, &widths) });
        }
        Err(Error::Config("pass --preset <name> or --model <file.json>".into()))
    }
}

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "quadrille", version, about = "Desk-scale simulator for hybrid tensor/data-parallel training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank every feasible grid for a worker count by predicted step
    /// communication time
    RankConfigs(RankConfigsArgs),
    /// Execute training steps on a virtual grid and time the schedule
    Simulate(SimulateArgs),
    /// Sweep small grids and check the distributed execution against serial
    /// oracles
    Verify(VerifyArgs),
    /// Time the matmul operand layouts and pick the fastest
    Tune(TuneArgs),
    /// Flop counting and sustained-efficiency accounting
    Flops(FlopsArgs),
}

#[derive(Debug, Args)]
struct RankConfigsArgs {
    /// Cluster description JSON (bandwidths in GB/s)
    #[arg(long)]
    cluster: PathBuf,

    #[command(flatten)]
    model: ModelArgs,

    /// Total workers to factor into grids
    #[arg(long)]
    workers: usize,

    /// Wire bytes per tensor element
    #[arg(long, default_value_t = 2)]
    bytes_per_element: usize,

    /// Rows to print (files always carry the full ranking)
    #[arg(long, default_value_t = 10)]
    top: usize,

    /// Output directory for rank_configs.{json,csv}
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Cluster description JSON (bandwidths in GB/s)
    #[arg(long)]
    cluster: PathBuf,

    /// Grid factors "gx,gy,gz,gdata"; the product is the worker count
    #[arg(long)]
    config: GridConfig,

    #[command(flatten)]
    model: ModelArgs,

    /// Collectives to overlap: comma list of oar, ors, oag, or "none"
    #[arg(long, default_value = "none")]
    overlap: OverlapFlags,

    /// Seed for weights and batch
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Training steps to execute; the first two are warm-up discards
    #[arg(long, default_value_t = 10)]
    iterations: usize,

    /// Wire bytes per tensor element
    #[arg(long, default_value_t = 2)]
    bytes_per_element: usize,

    /// Worker type for the compute roofline (a100, mi250x-gcd, h100)
    #[arg(long, default_value = "a100")]
    gpu: String,

    /// Output directory for summary.json, traffic.csv, timeline.json,
    /// trace.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Largest worker count to sweep; every factorization is checked
    #[arg(long, default_value_t = 16)]
    max_workers: usize,

    /// Relative tolerance against the serial oracle
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,

    /// Finite-difference gradient instances to run (relative tolerance 1e-4)
    #[arg(long, default_value_t = 20)]
    fd_checks: usize,

    /// Seed for weights and batches
    #[arg(long, default_value_t = 7)]
    seed: u64,

    /// Corrupt one collective on purpose; verification must then fail
    #[arg(long)]
    inject_fault: bool,

    /// Output directory for verify.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    /// Matmul shape "m,k,n"
    #[arg(long, value_parser = parse_shape)]
    shape: Shape,

    /// Timing repetitions per operand layout
    #[arg(long, default_value_t = 9)]
    trials: usize,

    /// Seed for the timed operands
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory for tune.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FlopsArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Workers sharing the load
    #[arg(long)]
    workers: usize,

    /// Worker type whose peaks anchor the percentages (a100, mi250x-gcd,
    /// h100)
    #[arg(long, default_value = "a100")]
    gpu: String,

    /// Measured step wall time; sustained rate = counted flops / seconds
    #[arg(long, conflicts_with = "sustained_pflops")]
    seconds: Option<f64>,

    /// Skip counting and take the sustained aggregate rate directly, in
    /// Pflop/s
    #[arg(long)]
    sustained_pflops: Option<f64>,

    /// Count 8mkn per layer (activation recomputation) instead of 6mkn
    #[arg(long)]
    recompute: bool,

    /// Output directory for flops.{json,csv}
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
struct Shape(usize, usize, usize);

fn parse_shape(s: &str) -> Result<Shape> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("expected \"m,k,n\", got {s:?}")));
    }
    let mut v = [0usize; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad dimension {part:?} in {s:?}")))?;
        if *slot == 0 {
            return Err(Error::Config(format!("dimensions must be nonzero, got {s:?}")));
        }
    }
    Ok(Shape(v[0], v[1], v[2]))
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parses and runs a full invocation; returns the process exit code.
/// 0 = success, 1 = bad input or failed check, 2 = infeasible request.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::RankConfigs(args) => cmd_rank_configs(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Tune(args) => cmd_tune(&args),
        Command::Flops(args) => cmd_flops(&args),
    };
    match result {
        Ok(()) => 0,
        Err(Error::Infeasible(msg)) => {
            eprintln!("error: infeasible: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve_out_dir(flag: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// rank-configs
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RankingReport {
    model: String,
    workers: usize,
    bytes_per_element: usize,
    rankings: Vec<RankingRow>,
}

#[derive(Serialize)]
struct RankingRow {
    rank: usize,
    config: GridConfig,
    predicted_seconds: f64,
}

fn cmd_rank_configs(args: &RankConfigsArgs) -> Result<()> {
    let cluster = ClusterSpec::from_json_file(&args.cluster)?;
    let model = args.model.resolve(2048, 1)?;
    let ranked = rank_configs(&model.specs, args.workers, &cluster, args.bytes_per_element)?;

    println!(
        "{} feasible grid(s) for {} over {} workers, cheapest first:",
        ranked.len(),
        model.name,
        args.workers
    );
    println!("{:>4}  {:<12}  {:>16}", "rank", "config", "predicted (s)");
    for (idx, r) in ranked.iter().take(args.top.max(1)).enumerate() {
        println!("{:>4}  {:<12}  {:>16.6e}", idx + 1, r.config.to_string(), r.predicted_seconds);
    }
    if ranked.len() > args.top {
        println!("  ... {} more", ranked.len() - args.top);
    }

    if let Some(dir) = resolve_out_dir(&args.out) {
        let rows: Vec<RankingRow> = ranked
            .iter()
            .enumerate()
            .map(|(idx, r)| RankingRow {
                rank: idx + 1,
                config: r.config,
                predicted_seconds: r.predicted_seconds,
            })
            .collect();
        let report = RankingReport {
            model: model.name.clone(),
            workers: args.workers,
            bytes_per_element: args.bytes_per_element,
            rankings: rows,
        };
        write_output(&dir, "rank_configs.json", &to_pretty_json(&report))?;

        let mut csv = String::from("rank,g_x,g_y,g_z,g_data,predicted_seconds\n");
        for (idx, r) in ranked.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{},{:e}\n",
                idx + 1,
                r.config.g_x,
                r.config.g_y,
                r.config.g_z,
                r.config.g_data,
                r.predicted_seconds
            ));
        }
        write_output(&dir, "rank_configs.csv", &csv)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateSummary {
    model: String,
    config: String,
    workers: usize,
    g_node: usize,
    seed: u64,
    iterations: usize,
    warmup: usize,
    bytes_per_element: usize,
    gpu: String,
    losses: Vec<f64>,
    mean_loss: f64,
    traffic: TrafficSummary,
    comm: CommSummary,
    compute_per_layer: Vec<PhaseCompute>,
    batch_seconds: Vec<FlagsTime>,
    requested_flags: String,
    requested_batch_seconds: f64,
}

#[derive(Serialize)]
struct TrafficSummary {
    total_bytes: u64,
    intra_bytes: u64,
    inter_bytes: u64,
    per_rank_bytes: Vec<u64>,
    events: usize,
    matches_volume_model: bool,
}

#[derive(Serialize)]
struct CommSummary {
    measured_per_layer: Vec<StepCommTimes>,
    predicted_per_layer: Vec<CommEstimate>,
    volumes_per_layer: Vec<CollectiveVolumes>,
    measured_total_seconds: f64,
    predicted_total_seconds: f64,
}

#[derive(Serialize)]
struct FlagsTime {
    flags: String,
    seconds: f64,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.iterations == 0 {
        return Err(Error::Config("need at least one iteration".into()));
    }
    let cluster = ClusterSpec::from_json_file(&args.cluster)?;
    let config = args.config;
    let workers = config.total();
    let grid = Grid::build(workers, config, cluster.g_node())?;
    let model = args.model.resolve(256, 64)?;
    let peak = flops::peak_by_name(&args.gpu)?;

    for spec in &model.specs {
        if let Err(e) = spec.validate(&config) {
            return Err(Error::Infeasible(format!(
                "{} cannot run on grid {config}: {e}",
                model.name
            )));
        }
    }

    // Numeric execution: the step itself, repeated. Weights stay fixed (no
    // optimizer), so iterations are timing repeats of one step. The 1/sqrt(k)
    // scale keeps activations of deep stacks finite.
    let mut weight_rng = ChaCha8Rng::seed_from_u64(args.seed);
    let weights: Vec<DenseMatrix> = model
        .specs
        .iter()
        .map(|s| DenseMatrix::random(s.k, s.n, &mut weight_rng).scale(1.0 / (s.k as f64).sqrt()))
        .collect();
    let mut net = Network::from_weights(&model.specs, &weights, &grid)?;
    let first = model.specs[0];
    let mut batch_rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x9e37_79b9_7f4a_7c15);
    let batch = DenseMatrix::random(first.m, first.k, &mut batch_rng);
    let mut sim = SimNet::with_bytes_per_element(&grid, args.bytes_per_element);

    let mut losses = Vec::with_capacity(args.iterations);
    let mut step_traffic = None;
    for iter in 0..args.iterations {
        let out = net.step(&batch, &grid, &mut sim)?;
        losses.push(out.loss);
        if iter == 0 {
            step_traffic = Some(sim.take_traffic());
        }
    }
    let traffic = step_traffic.expect("at least one iteration ran");
    let warmup = 2.min(args.iterations - 1);
    let tail = &losses[warmup..];
    let mean_loss = tail.iter().sum::<f64>() / tail.len() as f64;

    // Both timing routes, plus the exact volume model for the byte check.
    let measured = measure_step_comm(&model.specs, &grid, &cluster, args.bytes_per_element)?;
    let predicted = network_comm_time(&model.specs, &config, &cluster, args.bytes_per_element)?;
    let volumes: Vec<CollectiveVolumes> = model
        .specs
        .iter()
        .map(|s| layer_volumes(s, &config, args.bytes_per_element))
        .collect::<Result<_>>()?;
    let expected_per_rank: u128 = volumes.iter().map(CollectiveVolumes::total).sum();
    let matches_volume_model = traffic
        .per_rank_bytes()
        .iter()
        .all(|&b| b as u128 == expected_per_rank);

    let compute: Vec<PhaseCompute> = model
        .specs
        .iter()
        .map(|s| {
            let f = flops::local_phase_flops(s, &config)?;
            let t = flops::compute_seconds(f, peak.empirical)?;
            Ok(PhaseCompute { forward: t, backward_input: t, backward_weight: t })
        })
        .collect::<Result<_>>()?;
    let comm: Vec<CommCost> = measured.iter().map(|&t| CommCost::from(t)).collect();

    let timeline = build_schedule(&compute, &comm, args.overlap)?;
    let sweep = sweep_schedules(&compute, &comm)?;
    let requested_batch_seconds = timeline.batch_time();

    let measured_total: f64 = measured.iter().map(StepCommTimes::total).sum();
    let predicted_total: f64 = predicted.iter().map(CommEstimate::total).sum();

    println!(
        "simulate {} on {} ({} workers, {} per node), seed {}",
        model.name,
        config,
        workers,
        cluster.g_node(),
        args.seed
    );
    println!(
        "  loss {:.12e} (mean of {} post-warm-up iterations)",
        mean_loss,
        tail.len()
    );
    println!(
        "  traffic {} bytes/step per rank, volume model {}",
        traffic.per_rank_bytes().first().copied().unwrap_or(0),
        if matches_volume_model { "agrees" } else { "DISAGREES" }
    );
    println!();
    println!("  {:<10}  {:>14}  {:>14}", "collective", "measured (s)", "predicted (s)");
    let sums = |f: fn(&StepCommTimes) -> f64, g: fn(&CommEstimate) -> f64| {
        (measured.iter().map(f).sum::<f64>(), predicted.iter().map(g).sum::<f64>())
    };
    let rows: [(&str, (f64, f64)); 5] = [
        ("ag_z", sums(|t| t.ag_z, |e| e.ag_z)),
        ("rs_z", sums(|t| t.rs_z, |e| e.rs_z)),
        ("ar_fwd", sums(|t| t.ar_fwd, |e| e.ar_fwd)),
        ("ar_bwd", sums(|t| t.ar_bwd, |e| e.ar_bwd)),
        ("ar_data", sums(|t| t.ar_data, |e| e.ar_data)),
    ];
    for (label, (m, p)) in rows {
        println!("  {label:<10}  {m:>14.6e}  {p:>14.6e}");
    }
    println!("  {:<10}  {:>14.6e}  {:>14.6e}", "total", measured_total, predicted_total);
    println!();
    println!("  {:<12}  {:>14}", "overlap", "batch (s)");
    for (flags, seconds) in &sweep {
        let marker = if *flags == args.overlap { " <- requested" } else { "" };
        println!("  {:<12}  {:>14.6e}{}", flags.to_string(), seconds, marker);
    }

    if let Some(dir) = resolve_out_dir(&args.out) {
        let summary = SimulateSummary {
            model: model.name.clone(),
            config: config.to_string(),
            workers,
            g_node: cluster.g_node(),
            seed: args.seed,
            iterations: args.iterations,
            warmup,
            bytes_per_element: args.bytes_per_element,
            gpu: peak.name.to_string(),
            losses,
            mean_loss,
            traffic: TrafficSummary {
                total_bytes: traffic.total_bytes(),
                intra_bytes: traffic.intra_bytes(),
                inter_bytes: traffic.inter_bytes(),
                per_rank_bytes: traffic.per_rank_bytes().to_vec(),
                events: traffic.events().len(),
                matches_volume_model,
            },
            comm: CommSummary {
                measured_per_layer: measured,
                predicted_per_layer: predicted,
                volumes_per_layer: volumes,
                measured_total_seconds: measured_total,
                predicted_total_seconds: predicted_total,
            },
            compute_per_layer: compute,
            batch_seconds: sweep
                .iter()
                .map(|(flags, seconds)| FlagsTime { flags: flags.to_string(), seconds: *seconds })
                .collect(),
            requested_flags: args.overlap.to_string(),
            requested_batch_seconds,
        };
        write_output(&dir, "summary.json", &to_pretty_json(&summary))?;

        let mut csv = Vec::new();
        traffic.write_csv(&mut csv)?;
        write_output(&dir, "traffic.csv", &String::from_utf8(csv).expect("csv is utf-8"))?;

        write_output(&dir, "timeline.json", &to_pretty_json(&timeline.to_json()))?;

        let mut trace = Vec::new();
        timeline.write_chrome_trace(&mut trace)?;
        write_output(&dir, "trace.json", &String::from_utf8(trace).expect("trace is utf-8"))?;
    }

    if !matches_volume_model {
        return Err(Error::Protocol(
            "recorded traffic disagrees with the closed-form volume model".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct VerifyReport {
    max_workers: usize,
    tolerance: f64,
    oracle_pairs: usize,
    oracle_failures: usize,
    fd_checks: usize,
    fd_failures: usize,
    per_total: Vec<VerifyTotal>,
}

#[derive(Serialize)]
struct VerifyTotal {
    workers: usize,
    configs: usize,
    failures: usize,
}

/// Per-config widths that every extent divides: `hidden` is a multiple of
/// g_x, g_y, and (squared over the tile) g_z; the batch is a multiple of
/// g_z * g_data.
fn verify_shapes(config: &GridConfig, scale: usize) -> (usize, Vec<usize>) {
    let hidden = config.g_x * config.g_y * config.g_z * scale;
    let batch = config.g_z * config.g_data * 2;
    (batch, vec![hidden; 4])
}

fn config_seed(base: u64, config: &GridConfig) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((config.g_x as u64) << 24)
        .wrapping_add((config.g_y as u64) << 16)
        .wrapping_add((config.g_z as u64) << 8)
        .wrapping_add(config.g_data as u64)
}

/// Largest relative mismatch between a distributed result and its oracle.
fn rel_diff(got: &DenseMatrix, want: &DenseMatrix) -> f64 {
    let scale = want.values().iter().map(|v| v.abs()).fold(1.0f64, f64::max);
    got.max_abs_diff(want) / scale
}

/// Runs one distributed step against the serial oracle and returns the
/// largest relative mismatch across loss, output, weight gradients, and the
/// input gradient.
fn oracle_mismatch(
    specs: &[LayerSpec],
    grid: &Grid,
    seed: u64,
    fault: Option<FaultInjection>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<DenseMatrix> =
        specs.iter().map(|s| DenseMatrix::random(s.k, s.n, &mut rng)).collect();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let batch = DenseMatrix::random(specs[0].m, specs[0].k, &mut batch_rng);

    let mut net = Network::from_weights(specs, &weights, grid)?;
    let mut sim = SimNet::new(grid);
    if let Some(f) = fault {
        sim.inject_fault(f);
    }
    let step = net.step(&batch, grid, &mut sim)?;
    let truth = oracle::backward(&weights, &batch);

    let loss_scale = truth.loss.abs().max(1.0);
    let mut worst: f64 = (step.loss - truth.loss).abs() / loss_scale;
    worst = worst.max(rel_diff(
        &step.output.gather(grid)?,
        truth.outputs.last().expect("at least one layer"),
    ));
    for (got, want) in step.weight_grads.iter().zip(&truth.weight_grads) {
        worst = worst.max(rel_diff(&got.gather(grid)?, want));
    }
    worst = worst.max(rel_diff(&step.input_grad.gather(grid)?, &truth.input_grad));
    Ok(worst)
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    if args.max_workers == 0 {
        return Err(Error::Config("--max-workers must be nonzero".into()));
    }

    if args.inject_fault {
        // Negative control: corrupt the first recorded collective and prove
        // the oracle comparison catches it. A 1x1x2x1 grid makes that
        // collective the layer-0 forward all-gather.
        let config = GridConfig::new(1, 1, 2, 1)?;
        let grid = Grid::build(config.total(), config, 2)?;
        let (batch, widths) = verify_shapes(&config, 2);
        let specs = alternating_specs(batch, &widths);
        let mismatch = oracle_mismatch(
            &specs,
            &grid,
            config_seed(args.seed, &config),
            Some(FaultInjection { collective_index: 0 }),
        )?;
        if mismatch > args.tolerance {
            return Err(Error::Protocol(format!(
                "injected fault detected: mismatch {mismatch:.3e} exceeds tolerance {:.1e}",
                args.tolerance
            )));
        }
        return Err(Error::Protocol(
            "injected fault was NOT detected; the oracle comparison is broken".into(),
        ));
    }

    let mut per_total = Vec::new();
    let mut oracle_pairs = 0usize;
    let mut oracle_failures = 0usize;
    for total in 1..=args.max_workers {
        let mut configs = 0usize;
        let mut failures = 0usize;
        for config in enumerate_configs(total) {
            let grid = Grid::build(total, config, 4)?;
            let (batch, widths) = verify_shapes(&config, 2);
            // Depth varies deterministically so the sweep exercises 1..3
            // layers.
            let layers = 1 + (total + config.g_x + config.g_y) % 3;
            let specs = alternating_specs(batch, &widths[..layers + 1]);
            let mismatch =
                oracle_mismatch(&specs, &grid, config_seed(args.seed, &config), None)?;
            configs += 1;
            oracle_pairs += 1;
            if mismatch > args.tolerance {
                failures += 1;
                println!("FAIL {config}: mismatch {mismatch:.3e}");
            }
        }
        println!(
            "workers {total:>2}: {configs:>2} grid(s) checked, {failures} failure(s)"
        );
        oracle_failures += failures;
        per_total.push(VerifyTotal { workers: total, configs, failures });
    }

    // Gradient spot-checks against central finite differences, on the
    // smallest grids so the O(entries) oracle stays cheap.
    let mut fd_done = 0usize;
    let mut fd_failures = 0usize;
    'outer: for total in 1..=args.max_workers.min(8) {
        for config in enumerate_configs(total) {
            if fd_done >= args.fd_checks {
                break 'outer;
            }
            let grid = Grid::build(total, config, 4)?;
            let (batch_rows, widths) = verify_shapes(&config, 1);
            let layers = 1 + total % 2;
            let specs = alternating_specs(batch_rows, &widths[..layers + 1]);

            let seed = config_seed(args.seed ^ 0xfd, &config);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<DenseMatrix> =
                specs.iter().map(|s| DenseMatrix::random(s.k, s.n, &mut rng)).collect();
            let mut batch_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
            let batch = DenseMatrix::random(specs[0].m, specs[0].k, &mut batch_rng);

            let mut net = Network::from_weights(&specs, &weights, &grid)?;
            let mut sim = SimNet::new(&grid);
            let step = net.step(&batch, &grid, &mut sim)?;
            let fd = oracle::finite_difference_weight_grads(&weights, &batch, 1e-5);
            let mut worst: f64 = 0.0;
            for (got, want) in step.weight_grads.iter().zip(&fd) {
                worst = worst.max(rel_diff(&got.gather(&grid)?, want));
            }
            fd_done += 1;
            if worst > 1e-4 {
                fd_failures += 1;
                println!("FAIL fd {config}: mismatch {worst:.3e}");
            }
        }
    }
    println!(
        "finite differences: {fd_done} instance(s) checked, {fd_failures} failure(s)"
    );
    println!(
        "oracle sweep: {oracle_pairs} grid(s) checked, {oracle_failures} failure(s)"
    );

    if let Some(dir) = resolve_out_dir(&args.out) {
        let report = VerifyReport {
            max_workers: args.max_workers,
            tolerance: args.tolerance,
            oracle_pairs,
            oracle_failures,
            fd_checks: fd_done,
            fd_failures,
            per_total,
        };
        write_output(&dir, "verify.json", &to_pretty_json(&report))?;
    }

    if oracle_failures > 0 || fd_failures > 0 {
        return Err(Error::Protocol(format!(
            "{} verification failure(s)",
            oracle_failures + fd_failures
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TuneReport {
    shape: [usize; 3],
    trials: usize,
    seed: u64,
    mode: String,
    median_seconds: [f64; 3],
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let Shape(m, k, n) = args.shape;
    let mut timer = WallClockTimer::new(args.seed);
    let outcome = tune_matmul_mode((m, k, n), &mut timer, args.trials)?;

    println!("tune {m}x{k}x{n}, {} trial(s) per layout:", args.trials);
    for (label, t) in ["nn", "nt", "tn"].iter().zip(outcome.median_seconds) {
        println!("  {label}  median {t:.6e} s");
    }
    println!("fastest layout: {}", outcome.mode);

    if let Some(dir) = resolve_out_dir(&args.out) {
        let report = TuneReport {
            shape: [m, k, n],
            trials: args.trials,
            seed: args.seed,
            mode: outcome.mode.to_string(),
            median_seconds: outcome.median_seconds,
        };
        write_output(&dir, "tune.json", &to_pretty_json(&report))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// flops
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FlopsReport {
    model: String,
    workers: usize,
    gpu: String,
    recompute: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_flops: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_seconds: Option<f64>,
    sustained_pflops: f64,
    pct_advertised: f64,
    pct_empirical: f64,
}

fn cmd_flops(args: &FlopsArgs) -> Result<()> {
    let peak = flops::peak_by_name(&args.gpu)?;
    if !(peak.empirical > 0.0 && peak.empirical <= peak.advertised) {
        eprintln!(
            "warning: {} empirical peak {:.3e} outside (0, advertised {:.3e}]",
            peak.name, peak.empirical, peak.advertised
        );
    }

    let (name, step_flops, rate) = if let Some(pflops) = args.sustained_pflops {
        let name = match (&args.model.preset, &args.model.model) {
            (None, None) => "measured".to_string(),
            _ => args.model.resolve(2048, 1)?.name,
        };
        (name, None, pflops * 1e15)
    } else {
        let model = args.model.resolve(2048, 1)?;
        let seconds = args.seconds.ok_or_else(|| {
            Error::Config("pass --seconds (with a model) or --sustained-pflops".into())
        })?;
        let total = flops::network_flops(&model.specs, args.recompute);
        (model.name, Some(total), flops::sustained(total, seconds)?)
    };
    let eff = flops::efficiency(rate, args.workers, peak)?;
    let row = flops::EfficiencyRow::new(args.workers, &name, &eff);

    if let Some(total) = step_flops {
        println!("{name}: {:.4} Pflop per step", total as f64 / 1e15);
    }
    println!(
        "{name} on {} x {}: {:.4} Pflop/s sustained",
        args.workers, peak.name, row.total_pflops
    );
    println!("  {:.1}% of advertised peak", row.pct_advertised);
    println!("  {:.1}% of empirical peak", row.pct_empirical);

    if let Some(dir) = resolve_out_dir(&args.out) {
        let report = FlopsReport {
            model: name.clone(),
            workers: args.workers,
            gpu: peak.name.to_string(),
            recompute: args.recompute,
            step_flops,
            step_seconds: args.seconds,
            sustained_pflops: row.total_pflops,
            pct_advertised: row.pct_advertised,
            pct_empirical: row.pct_empirical,
        };
        write_output(&dir, "flops.json", &to_pretty_json(&report))?;

        let mut csv = Vec::new();
        flops::write_efficiency_csv(&[row], &mut csv)?;
        write_output(&dir, "flops.csv", &String::from_utf8(csv).expect("csv is utf-8"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // ----- presets and model files -----

    #[test]
    fn preset_lookup_accepts_bare_and_prefixed_names() {
        assert_eq!(preset_by_name("gpt-20b").unwrap().hidden, 7168);
        assert_eq!(preset_by_name("20b").unwrap().layers, 32);
        assert_eq!(preset_by_name("GPT-640B").unwrap().layers, 192);
        assert!(preset_by_name("gpt-7b").is_err());
    }

    #[test]
    fn presets_match_the_published_depth_width_table() {
        let expect = [
            ("gpt-5b", 24, 4096),
            ("gpt-10b", 32, 5120),
            ("gpt-20b", 32, 7168),
            ("gpt-40b", 38, 9216),
            ("gpt-60b", 56, 9216),
            ("gpt-80b", 42, 12288),
            ("gpt-160b", 84, 12288),
            ("gpt-320b", 96, 16384),
            ("gpt-640b", 192, 16384),
        ];
        for (name, layers, hidden) in expect {
            let p = preset_by_name(name).unwrap();
            assert_eq!((p.layers, p.hidden), (layers, hidden), "{name}");
        }
    }

    #[test]
    fn model_file_chains_shapes_and_alternates_transposes() {
        let file = ModelFile {
            batch_rows: 8,
            layers: vec![
                ModelFileLayer { k: 4, n: 6, transposed: None },
                ModelFileLayer { k: 6, n: 4, transposed: None },
                ModelFileLayer { k: 4, n: 2, transposed: Some(false) },
            ],
        };
        let specs = file.specs().unwrap();
        assert_eq!(specs.len(), 3);
        assert!(!specs[0].transposed);
        assert!(specs[1].transposed);
        assert!(!specs[2].transposed);
        assert_eq!((specs[1].m, specs[1].k, specs[1].n), (8, 6, 4));
    }

    #[test]
    fn model_file_rejects_broken_chains() {
        let file = ModelFile {
            batch_rows: 8,
            layers: vec![
                ModelFileLayer { k: 4, n: 6, transposed: None },
                ModelFileLayer { k: 5, n: 4, transposed: None },
            ],
        };
        assert!(matches!(file.specs(), Err(Error::Config(_))));
    }

    #[test]
    fn proxy_scaling_divides_preset_widths() {
        let args = ModelArgs {
            preset: Some("gpt-20b".into()),
            model: None,
            batch_rows: Some(64),
            proxy_scale: Some(64),
        };
        let model = args.resolve(256, 1).unwrap();
        assert_eq!(model.name, "gpt-20b/64");
        assert_eq!(model.specs.len(), 32);
        assert_eq!(model.specs[0].k, 112);
        assert_eq!(model.specs[0].m, 64);

        let bad = ModelArgs {
            preset: Some("gpt-20b".into()),
            model: None,
            batch_rows: None,
            proxy_scale: Some(100),
        };
        assert!(bad.resolve(256, 1).is_err());
    }

    // ----- shape parsing -----

    #[test]
    fn shapes_parse_as_three_nonzero_dims() {
        let Shape(m, k, n) = parse_shape("8, 16,32").unwrap();
        assert_eq!((m, k, n), (8, 16, 32));
        assert!(parse_shape("8,16").is_err());
        assert!(parse_shape("8,0,32").is_err());
        assert!(parse_shape("a,b,c").is_err());
    }

    // ----- verify shape construction -----

    #[test]
    fn verify_shapes_divide_every_extent() {
        for total in 1..=16 {
            for config in enumerate_configs(total) {
                let (batch, widths) = verify_shapes(&config, 2);
                assert!(batch <= 32 && widths[0] <= 32, "{config}");
                for layers in 1..=3 {
                    let specs = alternating_specs(batch, &widths[..layers + 1]);
                    for s in &specs {
                        s.validate(&config).unwrap_or_else(|e| {
                            panic!("{config} rejects {s:?}: {e}");
                        });
                    }
                }
            }
        }
    }

    // ----- exit codes through run() -----

    #[test]
    fn help_exits_zero_and_unknown_flags_exit_one() {
        assert_eq!(run(["quadrille", "--help"]), 0);
        assert_eq!(run(["quadrille", "--version"]), 0);
        assert_eq!(run(["quadrille", "--no-such-flag"]), 1);
        assert_eq!(run(["quadrille", "frobnicate"]), 1);
    }

    #[test]
    fn missing_model_exits_one() {
        // No --preset/--model: argument validation inside the command.
        let dir = tempfile::tempdir().unwrap();
        let cluster = dir.path().join("cluster.json");
        ClusterSpec::synthetic(4, 25.0, 320.0).write_json_file(&cluster).unwrap();
        let code = run([
            "quadrille",
            "rank-configs",
            "--cluster",
            cluster.to_str().unwrap(),
            "--workers",
            "4",
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn infeasible_model_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let cluster = dir.path().join("cluster.json");
        ClusterSpec::synthetic(4, 25.0, 320.0).write_json_file(&cluster).unwrap();
        let model = dir.path().join("model.json");
        // 7 rows over 4 workers: no factorization divides the batch.
        std::fs::write(&model, r#"{"batch_rows": 7, "layers": [{"k": 3, "n": 3}]}"#).unwrap();
        let code = run([
            "quadrille",
            "rank-configs",
            "--cluster",
            cluster.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--workers",
            "4",
        ]);
        assert_eq!(code, 2);
    }
}
