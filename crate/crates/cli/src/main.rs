//! `ettrace` — pipeline CLI: generate, link, convert, validate, feed,
//! simulate, sweep, analyze, dot.
//!
//! Exit codes: 0 success, 1 usage, 2 validation/cycle/semantic error,
//! 3 I/O error. Errors go to stderr as single-line JSON {code, message}.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use ettrace::analyzer;
use ettrace::converter::{convert, ConvertError, ConvertOptions};
use ettrace::dot::{emit_dot, DotOptions};
use ettrace::feeder::{drain_order_windowed, Policy};
use ettrace::generator::{
    generate_micro, generate_random_dag, generate_transformer, host_device_fixture, FixtureKind,
    GenSpec, MicroKind,
};
use ettrace::ingest::{correlate, parse_device_trace, parse_host_trace};
use ettrace::linker::{link, LinkedGraph};
use ettrace::schema::{parse_trace, serialize_trace, validate_trace, CommType, ProcessGroup};
use ettrace::sim::{
    simulate, sweep, sweep_csv, Coeff, NetworkModel, SimConfig, SweepAxis, Topology,
};
use ettrace::ExecutionTrace;

struct CliError {
    code: &'static str,
    message: String,
    exit: u8,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: "USAGE", message: message.into(), exit: 1 }
    }
    fn semantic(code: &'static str, message: impl Into<String>) -> Self {
        CliError { code, message: message.into(), exit: 2 }
    }
    fn io(message: impl Into<String>) -> Self {
        CliError { code: "IO_ERROR", message: message.into(), exit: 3 }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

#[derive(Parser)]
#[command(name = "ettrace", version, about = "execution-trace toolkit", disable_help_subcommand = true)]
struct Cli {
    /// Worker thread budget; results are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Suppress informational stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit synthetic traces or host/device fixtures.
    Generate {
        #[command(subcommand)]
        what: GenerateCmd,
    },
    /// Merge a host trace and a device trace into a linked graph.
    Link(LinkArgs),
    /// Convert a linked graph into a canonical trace.
    Convert(ConvertArgs),
    /// Validate a canonical trace file.
    Validate {
        file: PathBuf,
    },
    /// Stream a trace in dependency order and print the emission order.
    Feed(FeedArgs),
    /// Simulate per-rank traces over a network model.
    Simulate(SimulateArgs),
    /// Run simulate across bandwidth multipliers or topologies.
    Sweep(SweepArgs),
    /// Compute per-trace analyses as CSV.
    Analyze(AnalyzeArgs),
    /// Emit a Graphviz DOT rendering of a trace.
    Dot(DotArgs),
}

#[derive(Subcommand)]
enum GenerateCmd {
    /// Transformer-style multi-rank workload.
    Transformer(TransformerArgs),
    /// Tiny fixed-shape test graphs.
    Micro(MicroArgs),
    /// Seeded random DAG.
    Random(RandomArgs),
    /// Paired host/device ingest fixture.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct TransformerArgs {
    #[arg(long, default_value_t = 4)]
    layers: u64,
    #[arg(long, default_value_t = 1)]
    tp: u64,
    #[arg(long, default_value_t = 1)]
    dp: u64,
    #[arg(long, default_value_t = 1)]
    pp: u64,
    #[arg(long, default_value_t = 1)]
    microbatches: u64,
    #[arg(long, default_value_t = 0)]
    grad_buckets: u64,
    #[arg(long, default_value_t = 10)]
    gemm_us: u64,
    #[arg(long, default_value_t = 8)]
    attn_us: u64,
    #[arg(long, default_value_t = 2)]
    elem_us: u64,
    #[arg(long, default_value_t = 1 << 20)]
    hidden_bytes: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sequence_parallel: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MicroKindArg {
    Chain,
    Diamond,
    Fanout,
    CommPair,
}

#[derive(Args)]
struct MicroArgs {
    kind: MicroKindArg,
    #[arg(long, default_value_t = 3)]
    n: u64,
    #[arg(long, default_value_t = 2)]
    k: u64,
    #[arg(long, default_value_t = 400)]
    size_bytes: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RandomArgs {
    #[arg(long)]
    nodes: u64,
    #[arg(long, default_value_t = 0.001)]
    edge_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    /// Fixture name, e.g. launch_kernel, record_wait, inter_stream_buffer.
    kind: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    host: PathBuf,
    #[arg(long)]
    device: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    /// Input .linked.json file.
    file: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with a process-group table [{"id":0,"ranks":[0,1]}].
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Contract host ops out of the graph.
    #[arg(long)]
    drop_host_ops: bool,
    /// Exact transitive reduction (quadratic; size-gated).
    #[arg(long)]
    full_reduction: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Fifo,
    StartTime,
    CommPriority,
}

#[derive(Args)]
struct FeedArgs {
    file: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Fifo)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 4096)]
    window: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Network model JSON (.net.json).
    #[arg(long)]
    net: PathBuf,
    /// Glob over per-rank trace files, e.g. 'out/trace.rank*.et.json'.
    #[arg(long)]
    ranks: String,
    #[arg(long, default_value_t = 1.0)]
    compute_scale: f64,
    /// Report path; a per-collective CSV lands next to it.
    #[arg(long, default_value = "simreport.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepAxisArg {
    Bandwidth,
    Topology,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    ranks: String,
    #[arg(long, value_enum)]
    axis: SweepAxisArg,
    /// Comma-separated multipliers or topology names.
    #[arg(long)]
    values: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Counts,
    Breakdown,
    Cdf,
    Deps,
    Memory,
}

#[derive(Args)]
struct AnalyzeArgs {
    file: PathBuf,
    #[arg(long, value_enum)]
    report: Option<ReportArg>,
    /// Write every report plus a summary JSON into --out.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DotArgs {
    file: PathBuf,
    #[arg(long, default_value_t = 2000)]
    max_nodes: usize,
    /// Fill nodes by type.
    #[arg(long)]
    color_by_node_type: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version are not errors
            if e.use_stderr() {
                let err = CliError::usage(e.to_string().lines().next().unwrap_or("").to_string());
                eprintln!(
                    "{}",
                    serde_json::json!({"code": err.code, "message": err.message})
                );
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::json!({"code": err.code, "message": err.message}));
            ExitCode::from(err.exit)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Generate { what } => cmd_generate(what, cli.quiet),
        Cmd::Link(a) => cmd_link(a, cli.quiet),
        Cmd::Convert(a) => cmd_convert(a, cli.quiet),
        Cmd::Validate { file } => cmd_validate(&file, cli.quiet),
        Cmd::Feed(a) => cmd_feed(a),
        Cmd::Simulate(a) => cmd_simulate(a, cli.quiet),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Dot(a) => cmd_dot(a),
    }
}

fn write_traces(traces: &[ExecutionTrace], out: &Path, quiet: bool) -> Result<(), CliError> {
    for t in traces {
        let bytes = serialize_trace(t)
            .map_err(|e| CliError::semantic("VALIDATION_FAILED", e.to_string()))?;
        let path = out.join(format!("trace.rank{}.et.json", t.rank));
        write_file(&path, &bytes)?;
        if !quiet {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn cmd_generate(what: GenerateCmd, quiet: bool) -> Result<(), CliError> {
    match what {
        GenerateCmd::Transformer(a) => {
            let spec = GenSpec {
                layers: a.layers,
                tp: a.tp,
                dp: a.dp,
                pp: a.pp,
                microbatches: a.microbatches,
                grad_buckets: a.grad_buckets,
                gemm_us: a.gemm_us,
                attn_us: a.attn_us,
                elem_us: a.elem_us,
                hidden_bytes: a.hidden_bytes,
                seed: a.seed,
                sequence_parallel: a.sequence_parallel,
            };
            let traces = generate_transformer(&spec)
                .map_err(|e| CliError::semantic("INVALID_SPEC", e.to_string()))?;
            write_traces(&traces, &a.out, quiet)
        }
        GenerateCmd::Micro(a) => {
            let kind = match a.kind {
                MicroKindArg::Chain => MicroKind::Chain { n: a.n },
                MicroKindArg::Diamond => MicroKind::Diamond,
                MicroKindArg::Fanout => MicroKind::Fanout { k: a.k },
                MicroKindArg::CommPair => MicroKind::CommPair { size_bytes: a.size_bytes },
            };
            let traces = generate_micro(kind)
                .map_err(|e| CliError::semantic("INVALID_SPEC", e.to_string()))?;
            write_traces(&traces, &a.out, quiet)
        }
        GenerateCmd::Random(a) => {
            let trace = generate_random_dag(a.nodes, a.edge_prob, a.seed)
                .map_err(|e| CliError::semantic("INVALID_SPEC", e.to_string()))?;
            write_traces(std::slice::from_ref(&trace), &a.out, quiet)
        }
        GenerateCmd::Fixture(a) => {
            let kind = FixtureKind::from_name(&a.kind)
                .ok_or_else(|| CliError::semantic("INVALID_SPEC", format!("unknown fixture {}", a.kind)))?;
            let (host, device) = host_device_fixture(kind);
            let hp = a.out.join(format!("{}.host.json", kind.name()));
            let dp = a.out.join(format!("{}.device.json", kind.name()));
            write_file(&hp, &host)?;
            write_file(&dp, &device)?;
            if !quiet {
                println!("{}", hp.display());
                println!("{}", dp.display());
            }
            Ok(())
        }
    }
}

fn cmd_link(a: LinkArgs, quiet: bool) -> Result<(), CliError> {
    let host = parse_host_trace(&read_file(&a.host)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", e.to_string()))?;
    let device = parse_device_trace(&read_file(&a.device)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", e.to_string()))?;
    let cmap = correlate(&host, &device)
        .map_err(|e| CliError::semantic("CORRELATION_FAILED", e.to_string()))?;
    let outcome =
        link(&host, &device, &cmap).map_err(|e| CliError::semantic("LINK_FAILED", e.to_string()))?;
    for w in &outcome.warnings {
        eprintln!("{}", serde_json::json!({"code": "WARNING", "message": format!("{w:?}")}));
    }
    let mut bytes = serde_json::to_vec(&outcome.graph).expect("linked graph serializes");
    bytes.push(b'\n');
    write_file(&a.out, &bytes)?;
    if !quiet {
        println!("{}", a.out.display());
    }
    Ok(())
}

fn parse_groups(path: &Path) -> Result<Vec<ProcessGroup>, CliError> {
    #[derive(Deserialize)]
    struct G {
        id: u64,
        ranks: Vec<u64>,
    }
    let raw: Vec<G> = serde_json::from_slice(&read_file(path)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", format!("{}: {e}", path.display())))?;
    Ok(raw.into_iter().map(|g| ProcessGroup { id: g.id, ranks: g.ranks }).collect())
}

fn cmd_convert(a: ConvertArgs, quiet: bool) -> Result<(), CliError> {
    let graph: LinkedGraph = serde_json::from_slice(&read_file(&a.file)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", format!("{}: {e}", a.file.display())))?;
    let groups = match &a.groups {
        Some(p) => parse_groups(p)?,
        None => Vec::new(),
    };
    let opts = ConvertOptions {
        full_transitive_reduction: a.full_reduction,
        keep_host_ops: !a.drop_host_ops,
        ..Default::default()
    };
    let trace = match convert(&graph, &groups, &opts) {
        Ok(t) => t,
        Err(ConvertError::CycleDetected(witness)) => {
            for id in &witness {
                println!("{id}");
            }
            return Err(CliError::semantic(
                "CYCLE_DETECTED",
                format!("cycle through {} node(s)", witness.len()),
            ));
        }
        Err(e) => return Err(CliError::semantic("CONVERT_FAILED", e.to_string())),
    };
    let bytes =
        serialize_trace(&trace).map_err(|e| CliError::semantic("VALIDATION_FAILED", e.to_string()))?;
    write_file(&a.out, &bytes)?;
    if !quiet {
        println!("{}", a.out.display());
    }
    Ok(())
}

fn cmd_validate(file: &Path, quiet: bool) -> Result<(), CliError> {
    let trace = parse_trace(&read_file(file)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", e.to_string()))?;
    let report = validate_trace(&trace);
    for issue in report.errors.iter().chain(report.warnings.iter()) {
        println!(
            "{}",
            serde_json::json!({"code": format!("{:?}", issue.code), "subject": issue.subject, "message": issue.message})
        );
    }
    if !report.is_valid() {
        return Err(CliError::semantic(
            "VALIDATION_FAILED",
            format!("{} error(s)", report.errors.len()),
        ));
    }
    if !quiet {
        println!("ok");
    }
    Ok(())
}

fn cmd_feed(a: FeedArgs) -> Result<(), CliError> {
    let trace = parse_trace(&read_file(&a.file)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", e.to_string()))?;
    let policy = match a.policy {
        PolicyArg::Fifo => Policy::Fifo,
        PolicyArg::StartTime => Policy::StartTime,
        PolicyArg::CommPriority => Policy::CommPriority,
    };
    let order = drain_order_windowed(&trace, policy, a.window)
        .map_err(|e| CliError::semantic("DEADLOCK", e.to_string()))?;
    let mut out = String::with_capacity(order.len() * 8);
    for id in order {
        let _ = writeln!(out, "{id}");
    }
    print!("{out}");
    Ok(())
}

#[derive(Deserialize)]
struct NetFile {
    topology: String,
    link_bandwidth_bytes_per_us: f64,
    latency_alpha_us: f64,
    #[serde(default)]
    coefficients: BTreeMap<String, BTreeMap<String, CoeffFile>>,
}

#[derive(Deserialize)]
struct CoeffFile {
    lat_steps: f64,
    bw_factor: f64,
}

fn parse_net(path: &Path) -> Result<NetworkModel, CliError> {
    let raw: NetFile = serde_json::from_slice(&read_file(path)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", format!("{}: {e}", path.display())))?;
    let topology = Topology::from_name(&raw.topology)
        .ok_or_else(|| CliError::semantic("INVALID_NET", format!("unknown topology {}", raw.topology)))?;
    if !(raw.link_bandwidth_bytes_per_us > 0.0) {
        return Err(CliError::semantic("INVALID_NET", "link_bandwidth must be > 0".to_string()));
    }
    if raw.latency_alpha_us < 0.0 {
        return Err(CliError::semantic("INVALID_NET", "latency_alpha must be >= 0".to_string()));
    }
    let mut net = NetworkModel::new(topology, raw.link_bandwidth_bytes_per_us, raw.latency_alpha_us);
    for (ct_name, by_n) in raw.coefficients {
        let ct = CommType::from_str(&ct_name).ok_or_else(|| {
            CliError::semantic("INVALID_NET", format!("unknown comm type {ct_name}"))
        })?;
        for (n_str, c) in by_n {
            let n: u64 = n_str.parse().map_err(|_| {
                CliError::semantic("INVALID_NET", format!("bad group size key {n_str}"))
            })?;
            net.coefficients
                .insert((ct, n), Coeff { lat_steps: c.lat_steps, bw_factor: c.bw_factor });
        }
    }
    Ok(net)
}

fn load_ranks(pattern: &str) -> Result<Vec<ExecutionTrace>, CliError> {
    let paths = glob::glob(pattern)
        .map_err(|e| CliError::usage(format!("bad glob {pattern}: {e}")))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::io(e.to_string()))?;
    if paths.is_empty() {
        return Err(CliError::io(format!("no files match {pattern}")));
    }
    let mut traces = Vec::with_capacity(paths.len());
    for p in paths {
        traces.push(
            parse_trace(&read_file(&p)?).map_err(|e| {
                CliError::semantic("MALFORMED_JSON", format!("{}: {e}", p.display()))
            })?,
        );
    }
    traces.sort_by_key(|t| t.rank);
    Ok(traces)
}

fn collectives_csv(report: &ettrace::sim::SimReport) -> String {
    let mut out = String::from("group,sequence,comm_type,size_bytes,start,end,bus_time\n");
    for c in &report.per_collective {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.group,
            c.sequence,
            c.comm_type.as_str(),
            c.size_bytes,
            c.start,
            c.end,
            c.bus_time
        );
    }
    out
}

fn cmd_simulate(a: SimulateArgs, quiet: bool) -> Result<(), CliError> {
    let net = parse_net(&a.net)?;
    let traces = load_ranks(&a.ranks)?;
    let mut cfg = SimConfig::new(net);
    cfg.compute_scale = a.compute_scale;
    let report =
        simulate(&traces, &cfg).map_err(|e| CliError::semantic("SIM_FAILED", e.to_string()))?;
    let mut bytes = serde_json::to_vec(&report).expect("report serializes");
    bytes.push(b'\n');
    write_file(&a.out, &bytes)?;
    let csv_path = a.out.with_extension("collectives.csv");
    write_file(&csv_path, collectives_csv(&report).as_bytes())?;
    if !quiet {
        println!("total_time={}", report.total_time);
        println!("{}", a.out.display());
        println!("{}", csv_path.display());
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let net = parse_net(&a.net)?;
    let traces = load_ranks(&a.ranks)?;
    let cfg = SimConfig::new(net);
    let axis = match a.axis {
        SweepAxisArg::Bandwidth => {
            let mults = a
                .values
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::usage(format!("bad multiplier list: {e}")))?;
            SweepAxis::Bandwidth(mults)
        }
        SweepAxisArg::Topology => {
            let tops = a
                .values
                .split(',')
                .map(|s| {
                    Topology::from_name(s.trim())
                        .ok_or_else(|| CliError::usage(format!("unknown topology {s}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            SweepAxis::Topology(tops)
        }
    };
    let rows =
        sweep(&traces, &cfg, &axis).map_err(|e| CliError::semantic("SIM_FAILED", e.to_string()))?;
    let csv = sweep_csv(&rows);
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn counts_csv(t: &analyzer::CountTable) -> String {
    let mut out = String::from("section,key,count\n");
    for (k, v) in &t.by_node_type {
        let _ = writeln!(out, "node_type,{},{v}", k.as_str());
    }
    for (k, v) in &t.by_comm_type {
        let _ = writeln!(out, "comm_type,{},{v}", k.as_str());
    }
    for (k, v) in &t.by_name_class {
        let _ = writeln!(out, "name_class,{k},{v}");
    }
    out
}

fn breakdown_csv(b: &analyzer::Breakdown) -> String {
    format!(
        "span,compute_busy,exposed_comm,idle\n{},{},{},{}\n",
        b.span, b.compute_busy, b.exposed_comm, b.idle
    )
}

fn cdf_csv(points: &[analyzer::CdfPoint]) -> String {
    let mut out = String::from("duration_micros,numer,denom\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.duration_micros, p.numer, p.denom);
    }
    out
}

fn deps_csv(hist: &BTreeMap<usize, u64>) -> String {
    let mut out = String::from("in_degree,count\n");
    for (k, v) in hist {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

fn memory_csv(m: &analyzer::MemoryTimeline) -> String {
    let mut out = String::from("t_micros,live_bytes\n");
    for (t, b) in &m.samples {
        let _ = writeln!(out, "{t},{b}");
    }
    out
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let trace = parse_trace(&read_file(&a.file)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", e.to_string()))?;
    let missing = |e: analyzer::AnalyzerError| CliError::semantic("MISSING_TIMING", e.to_string());
    if a.all {
        let out = a
            .out
            .as_ref()
            .ok_or_else(|| CliError::usage("--all requires --out dir".to_string()))?;
        let counts = analyzer::op_counts(&trace);
        let breakdown = analyzer::runtime_breakdown(&trace).map_err(missing)?;
        let cdf = analyzer::duration_cdf(&trace).map_err(missing)?;
        let deps = analyzer::dependency_histogram(&trace);
        let memory = analyzer::memory_timeline(&trace).map_err(missing)?;
        write_file(&out.join("counts.csv"), counts_csv(&counts).as_bytes())?;
        write_file(&out.join("breakdown.csv"), breakdown_csv(&breakdown).as_bytes())?;
        write_file(&out.join("cdf.csv"), cdf_csv(&cdf).as_bytes())?;
        write_file(&out.join("deps.csv"), deps_csv(&deps).as_bytes())?;
        write_file(&out.join("memory.csv"), memory_csv(&memory).as_bytes())?;
        let summary = serde_json::json!({
            "counts": counts,
            "breakdown": breakdown,
            "peak_bytes": memory.peak_bytes,
        });
        let mut bytes = serde_json::to_vec(&summary).expect("summary serializes");
        bytes.push(b'\n');
        write_file(&out.join("summary.json"), &bytes)?;
        return Ok(());
    }
    let report = a
        .report
        .ok_or_else(|| CliError::usage("pass --report or --all".to_string()))?;
    let csv = match report {
        ReportArg::Counts => counts_csv(&analyzer::op_counts(&trace)),
        ReportArg::Breakdown => breakdown_csv(&analyzer::runtime_breakdown(&trace).map_err(missing)?),
        ReportArg::Cdf => cdf_csv(&analyzer::duration_cdf(&trace).map_err(missing)?),
        ReportArg::Deps => deps_csv(&analyzer::dependency_histogram(&trace)),
        ReportArg::Memory => memory_csv(&analyzer::memory_timeline(&trace).map_err(missing)?),
    };
    print!("{csv}");
    Ok(())
}

fn cmd_dot(a: DotArgs) -> Result<(), CliError> {
    let trace = parse_trace(&read_file(&a.file)?)
        .map_err(|e| CliError::semantic("MALFORMED_JSON", e.to_string()))?;
    let opts = DotOptions { max_nodes: a.max_nodes, color_by_node_type: a.color_by_node_type };
    print!("{}", emit_dot(&trace, &opts));
    Ok(())
}
