//! Resolved command parameters and their execution.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dgnnflow::event::{read_events, write_events, EventError};
use dgnnflow::model::{
    load_weights, random_weights, run_reference, save_weights, InferenceOptions, ModelConfig, ModelError,
};
use dgnnflow::sim::{run_dataflow, trace_dump, SimError};
use dgnnflow::stats::{batch_amortization, latency_stats, Buckets, GroupStats, Sample, BATCH_SIZES};
use dgnnflow::{Aggregation, Event, GeneratorConfig, ModelWeights, SimConfig, SimTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{Command, CompareArgs, Engine, GenerateArgs, InferArgs, StatsArgs};
use crate::manifest::sha256_hex;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRun {
    pub seed: u64,
    pub count: usize,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub out: PathBuf,
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRun {
    pub dataset: PathBuf,
    pub weights: PathBuf,
    pub delta: f64,
    pub wrap_phi: bool,
    pub mode: Aggregation,
    pub engine: Engine,
    /// Present exactly for the sim engine.
    pub sim: Option<SimConfig>,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRun {
    pub a: PathBuf,
    pub b: PathBuf,
    pub tol: f64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRun {
    pub input: PathBuf,
    pub node_buckets: Vec<usize>,
    pub edge_buckets: Vec<usize>,
    pub batch_overhead_s: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Run {
    Generate(GenerateRun),
    Infer(InferRun),
    Compare(CompareRun),
    Stats(StatsRun),
}

/// What a run printed, and whether a comparison found differences.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub message: String,
    pub mismatch: bool,
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::Usage(format!("bad path {}: {e}", p.display())))
}

fn buckets(spec: &str, what: &str) -> Result<Vec<usize>, CliError> {
    Buckets::parse(spec).map(|b| b.bounds().to_vec()).map_err(|e| CliError::Usage(format!("--{what}-buckets: {e}")))
}

impl Run {
    /// Resolves defaults and paths. `Replay` is not a run.
    pub fn from_command(cmd: &Command) -> Result<Run, CliError> {
        Ok(match cmd {
            Command::Generate(a) => Run::Generate(generate_run(a)?),
            Command::Infer(a) => Run::Infer(infer_run(a)?),
            Command::Compare(a) => Run::Compare(compare_run(a)?),
            Command::Stats(a) => Run::Stats(StatsRun {
                input: absolute(&a.input)?,
                node_buckets: buckets(&a.node_buckets, "node")?,
                edge_buckets: buckets(&a.edge_buckets, "edge")?,
                batch_overhead_s: stats_overhead(a)?,
                out: absolute(&a.out)?,
            }),
            Command::Replay(_) => return Err(CliError::Usage("replay has no manifest of its own".into())),
        })
    }

    pub fn inputs(&self) -> Vec<(&'static str, &Path)> {
        match self {
            Run::Generate(_) => vec![],
            Run::Infer(r) => vec![("dataset", &r.dataset), ("weights", &r.weights)],
            Run::Compare(r) => vec![("a", &r.a), ("b", &r.b)],
            Run::Stats(r) => vec![("input", &r.input)],
        }
    }

    pub fn outputs(&self) -> Vec<(&'static str, &Path)> {
        let mut out: Vec<(&'static str, &Path)> = Vec::new();
        match self {
            Run::Generate(r) => {
                out.push(("events", &r.out));
                out.extend(r.weights_out.as_deref().map(|p| ("weights", p)));
            }
            Run::Infer(r) => {
                out.push(("csv", &r.out));
                out.extend(r.trace.as_deref().map(|p| ("trace", p)));
            }
            Run::Compare(r) => out.extend(r.out.as_deref().map(|p| ("report", p))),
            Run::Stats(r) => out.push(("stats", &r.out)),
        }
        out
    }

    /// The same run with every output moved into `dir`, keeping file names.
    pub fn with_outputs_in(&self, dir: &Path) -> Run {
        let moved = |p: &Path| dir.join(p.file_name().unwrap_or(p.as_os_str()));
        let mut run = self.clone();
        match &mut run {
            Run::Generate(r) => {
                r.out = moved(&r.out);
                r.weights_out = r.weights_out.as_deref().map(moved);
            }
            Run::Infer(r) => {
                r.out = moved(&r.out);
                r.trace = r.trace.as_deref().map(moved);
            }
            Run::Compare(r) => r.out = r.out.as_deref().map(moved),
            Run::Stats(r) => r.out = moved(&r.out),
        }
        run
    }

    pub fn execute(&self) -> Result<Outcome, CliError> {
        match self {
            Run::Generate(r) => generate(r),
            Run::Infer(r) => infer(r),
            Run::Compare(r) => compare(r),
            Run::Stats(r) => stats(r),
        }
    }
}

fn generate_run(a: &GenerateArgs) -> Result<GenerateRun, CliError> {
    let generator =
        GeneratorConfig { min_particles: a.min_particles, max_particles: a.max_particles, ..Default::default() };
    Ok(GenerateRun {
        seed: a.seed,
        count: a.count,
        generator,
        model: ModelConfig::default(),
        out: absolute(&a.out)?,
        weights_out: a.weights_out.as_deref().map(absolute).transpose()?,
    })
}

fn infer_run(a: &InferArgs) -> Result<InferRun, CliError> {
    if !(a.delta.is_finite() && a.delta > 0.0) {
        return Err(CliError::Usage(format!("--delta must be positive, got {}", a.delta)));
    }
    let sim = match a.engine {
        Engine::Reference => {
            let given = a.sim_flags_given();
            if !given.is_empty() {
                return Err(CliError::Usage(format!("{}: only valid with --engine sim", given.join(", "))));
            }
            None
        }
        Engine::Sim => {
            let d = SimConfig::default();
            let cfg = SimConfig {
                p_edge: a.p_edge.unwrap_or(d.p_edge),
                p_node: a.p_node.unwrap_or(d.p_node),
                fifo_depth: a.fifo_depth.unwrap_or(d.fifo_depth),
                mlp_latency_cycles: a.mlp_latency.unwrap_or(d.mlp_latency_cycles),
                clock_hz: a.clock_hz.unwrap_or(d.clock_hz),
                host_transfer_cycles_per_byte: a.transfer_cycles_per_byte.unwrap_or(d.host_transfer_cycles_per_byte),
                ..d
            };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            Some(cfg)
        }
    };
    Ok(InferRun {
        dataset: absolute(&a.events)?,
        weights: absolute(&a.weights)?,
        delta: a.delta,
        wrap_phi: a.wrap_phi,
        mode: a.mode,
        engine: a.engine,
        sim,
        out: absolute(&a.out)?,
        trace: a.trace.as_deref().map(absolute).transpose()?,
    })
}

fn compare_run(a: &CompareArgs) -> Result<CompareRun, CliError> {
    if !(a.tol.is_finite() && a.tol >= 0.0) {
        return Err(CliError::Usage(format!("--tol must be non-negative, got {}", a.tol)));
    }
    Ok(CompareRun {
        a: absolute(&a.a)?,
        b: absolute(&a.b)?,
        tol: a.tol,
        out: a.out.as_deref().map(absolute).transpose()?,
    })
}

fn stats_overhead(a: &StatsArgs) -> Result<f64, CliError> {
    if a.batch_overhead_s.is_finite() && a.batch_overhead_s >= 0.0 {
        Ok(a.batch_overhead_s)
    } else {
        Err(CliError::Usage(format!("--batch-overhead-s must be non-negative, got {}", a.batch_overhead_s)))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn event_error(path: &Path, e: EventError) -> CliError {
    match e {
        EventError::Io(io) => CliError::Usage(format!("cannot read {}: {io}", path.display())),
        EventError::Config(msg) => CliError::Usage(msg),
        other => CliError::Data(format!("{}: {other}", path.display())),
    }
}

fn model_error(path: &Path, e: ModelError) -> CliError {
    match e {
        ModelError::Io(io) => CliError::Usage(format!("cannot read {}: {io}", path.display())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    }
}

fn generate(r: &GenerateRun) -> Result<Outcome, CliError> {
    let events = dgnnflow::event::generate_events(r.seed, r.count, &r.generator).map_err(|e| event_error(&r.out, e))?;
    write_events(&events, &r.out).map_err(|e| match e {
        EventError::Io(io) => CliError::Usage(format!("cannot write {}: {io}", r.out.display())),
        other => CliError::Data(other.to_string()),
    })?;
    let mut message = format!("wrote {} events to {}", events.len(), r.out.display());
    if let Some(path) = &r.weights_out {
        let w = random_weights(r.seed, &r.model).map_err(|e| CliError::Data(e.to_string()))?;
        save_weights(&w, path).map_err(|e| match e {
            ModelError::Io(io) => CliError::Usage(format!("cannot write {}: {io}", path.display())),
            other => CliError::Data(other.to_string()),
        })?;
        write!(message, "\nwrote weights to {}", path.display()).unwrap();
    }
    Ok(Outcome { message, mismatch: false })
}

/// Checksum of a per-particle weight vector: the first 16 hex digits of
/// SHA-256 over the little-endian f32 bytes.
pub fn weight_checksum(weights: &[f32]) -> String {
    let bytes: Vec<u8> = weights.iter().flat_map(|w| w.to_le_bytes()).collect();
    sha256_hex(&bytes)[..16].to_string()
}

pub const REFERENCE_HEADER: [&str; 5] = ["event_id", "nodes", "directed_edges", "met", "weight_checksum"];
pub const SIM_EXTRA_HEADER: [&str; 2] = ["cycles", "modeled_latency_s"];

struct Row {
    event_id: u32,
    nodes: usize,
    directed_edges: usize,
    met: f64,
    checksum: String,
    trace: Option<SimTrace>,
}

fn infer_event(
    event: &Event,
    w: &ModelWeights,
    opts: &InferenceOptions,
    sim: Option<&SimConfig>,
) -> Result<Row, CliError> {
    let fail = |e: String| CliError::Data(format!("event {}: {e}", event.event_id));
    let (result, trace) = match sim {
        None => (run_reference(event, w, opts).map_err(|e| fail(e.to_string()))?, None),
        Some(cfg) => {
            let (r, t) = run_dataflow(event, w, opts, cfg).map_err(|e: SimError| fail(e.to_string()))?;
            (r, Some(t))
        }
    };
    Ok(Row {
        event_id: event.event_id,
        nodes: event.len(),
        directed_edges: result.directed_edges,
        met: result.met,
        checksum: weight_checksum(&result.weights),
        trace,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn infer(r: &InferRun) -> Result<Outcome, CliError> {
    let w = load_weights(&r.weights).map_err(|e| model_error(&r.weights, e))?;
    let events = read_events(&r.dataset, w.cardinalities).map_err(|e| event_error(&r.dataset, e))?;
    let opts = InferenceOptions { delta: r.delta, wrap_phi: r.wrap_phi, mode: r.mode };

    // Parallel over events; collect keeps input order.
    let rows: Vec<Row> =
        events.par_iter().map(|ev| infer_event(ev, &w, &opts, r.sim.as_ref())).collect::<Result<_, _>>()?;

    let mut header: Vec<&str> = REFERENCE_HEADER.to_vec();
    if r.sim.is_some() {
        header.extend(SIM_EXTRA_HEADER);
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(&header).map_err(|e| csv_error(&r.out, e))?;
    for row in &rows {
        let mut rec = vec![
            row.event_id.to_string(),
            row.nodes.to_string(),
            row.directed_edges.to_string(),
            row.met.to_string(),
            row.checksum.clone(),
        ];
        if let (Some(t), Some(cfg)) = (&row.trace, &r.sim) {
            rec.push(t.total_cycles.to_string());
            rec.push(t.latency_seconds(cfg.clock_hz).to_string());
        }
        out.write_record(&rec).map_err(|e| csv_error(&r.out, e))?;
    }
    let bytes = out.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&r.out, &bytes)?;
    let mut message = format!("{} events -> {}", rows.len(), r.out.display());
    if let Some(path) = &r.trace {
        let traces: Vec<SimTrace> = rows.into_iter().filter_map(|row| row.trace).collect();
        write_file(path, trace_dump(&traces).as_bytes())?;
        write!(message, "\ntrace -> {}", path.display()).unwrap();
    }
    Ok(Outcome { message, mismatch: false })
}

/// Rows of an inference CSV by column name.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let header = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(|e| csv_error(path, e))?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn parsed<T: std::str::FromStr>(&self, path: &Path, row: usize, col: usize) -> Result<T, CliError> {
        let raw = &self.rows[row][col];
        raw.parse().map_err(|_| {
            CliError::Data(format!("{}: row {}: cannot parse {} `{raw}`", path.display(), row + 1, self.header[col]))
        })
    }
}

fn met_by_id(path: &Path) -> Result<BTreeMap<u32, f64>, CliError> {
    let t = Table::read(path)?;
    let missing = |c: &str| CliError::Data(format!("{}: no `{c}` column", path.display()));
    let id_col = t.column("event_id").ok_or_else(|| missing("event_id"))?;
    let met_col = t.column("met").ok_or_else(|| missing("met"))?;
    let mut map = BTreeMap::new();
    for i in 0..t.rows.len() {
        let id: u32 = t.parsed(path, i, id_col)?;
        let met: f64 = t.parsed(path, i, met_col)?;
        if map.insert(id, met).is_some() {
            return Err(CliError::Data(format!("{}: duplicate event_id {id}", path.display())));
        }
    }
    Ok(map)
}

fn compare(r: &CompareRun) -> Result<Outcome, CliError> {
    let a = met_by_id(&r.a)?;
    let b = met_by_id(&r.b)?;
    let only_a: Vec<u32> = a.keys().filter(|k| !b.contains_key(k)).copied().collect();
    let only_b: Vec<u32> = b.keys().filter(|k| !a.contains_key(k)).copied().collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(CliError::Data(format!(
            "event_id sets differ: {} only in {}, {} only in {}",
            only_a.len(),
            r.a.display(),
            only_b.len(),
            r.b.display()
        )));
    }
    let mut max_diff = 0f64;
    let mut lines = String::new();
    let mut mismatches = 0;
    for (id, &ma) in &a {
        let mb = b[id];
        let diff = (ma - mb).abs();
        // NaN never compares within tolerance.
        if diff.is_nan() || diff > r.tol {
            mismatches += 1;
            writeln!(lines, "mismatch event_id={id} a={ma} b={mb} diff={diff}").unwrap();
        }
        if diff.is_nan() || diff > max_diff {
            max_diff = diff;
        }
    }
    let mut report =
        format!("events {}\nmax_abs_met_diff {max_diff}\nmismatches {mismatches} tol {}\n", a.len(), r.tol);
    report.push_str(&lines);
    if let Some(path) = &r.out {
        write_file(path, report.as_bytes())?;
    }
    Ok(Outcome { message: report.trim_end().to_string(), mismatch: mismatches > 0 })
}

fn samples_from(path: &Path) -> Result<Vec<Sample>, CliError> {
    let t = Table::read(path)?;
    for c in SIM_EXTRA_HEADER {
        if t.column(c).is_none() {
            return Err(CliError::Usage(format!(
                "{}: no `{c}` column; stats needs a CSV from `infer --engine sim`",
                path.display()
            )));
        }
    }
    let col =
        |name: &str| t.column(name).ok_or_else(|| CliError::Data(format!("{}: no `{name}` column", path.display())));
    let (n, e, c, l) = (col("nodes")?, col("directed_edges")?, col("cycles")?, col("modeled_latency_s")?);
    (0..t.rows.len())
        .map(|i| {
            Ok(Sample {
                nodes: t.parsed(path, i, n)?,
                edges: t.parsed(path, i, e)?,
                cycles: t.parsed(path, i, c)?,
                latency_s: t.parsed(path, i, l)?,
            })
        })
        .collect()
}

pub const STATS_HEADER: [&str; 11] = [
    "group",
    "node_bucket",
    "edge_bucket",
    "batch_size",
    "count",
    "latency_mean_s",
    "latency_median_s",
    "latency_p99_s",
    "cycles_mean",
    "cycles_median",
    "cycles_p99",
];

fn group_record(kind: &str, g: &GroupStats) -> Vec<String> {
    let bucket = |b: Option<dgnnflow::stats::BucketRange>| b.map(|b| b.to_string()).unwrap_or_default();
    vec![
        kind.to_string(),
        bucket(g.nodes),
        bucket(g.edges),
        String::new(),
        g.latency_s.count.to_string(),
        g.latency_s.mean.to_string(),
        g.latency_s.median.to_string(),
        g.latency_s.p99.to_string(),
        g.cycles.mean.to_string(),
        g.cycles.median.to_string(),
        g.cycles.p99.to_string(),
    ]
}

fn stats(r: &StatsRun) -> Result<Outcome, CliError> {
    let samples = samples_from(&r.input)?;
    let node_b = Buckets::new(r.node_buckets.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let edge_b = Buckets::new(r.edge_buckets.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let stats =
        latency_stats(&samples, &node_b, &edge_b).map_err(|e| CliError::Data(format!("{}: {e}", r.input.display())))?;

    let mut out = csv::Writer::from_writer(Vec::new());
    let mut records = vec![group_record("total", &stats.total)];
    records.extend(stats.by_nodes.iter().map(|g| group_record("nodes", g)));
    records.extend(stats.by_edges.iter().map(|g| group_record("edges", g)));
    records.extend(stats.joint.iter().map(|g| group_record("joint", g)));
    for (b, per_graph) in batch_amortization(&samples, r.batch_overhead_s, &BATCH_SIZES) {
        let mut rec = vec![String::new(); STATS_HEADER.len()];
        rec[0] = "batch".into();
        rec[3] = b.to_string();
        rec[4] = samples.len().to_string();
        rec[5] = per_graph.to_string();
        records.push(rec);
    }
    out.write_record(STATS_HEADER).map_err(|e| csv_error(&r.out, e))?;
    for rec in &records {
        out.write_record(rec).map_err(|e| csv_error(&r.out, e))?;
    }
    let bytes = out.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&r.out, &bytes)?;
    let t = &stats.total.latency_s;
    let message = format!(
        "{} events: latency mean {:.3e} s, median {:.3e} s, p99 {:.3e} s -> {}",
        t.count,
        t.mean,
        t.median,
        t.p99,
        r.out.display()
    );
    Ok(Outcome { message, mismatch: false })
}
