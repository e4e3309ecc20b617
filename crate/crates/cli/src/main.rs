use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flashpim::calibrate::{self, CalibrationTargets};
use flashpim::config::{SystemConfig, TechFile};
use flashpim::dse::{self, SweepAxis, SweepSpec};
use flashpim::interconnect::{self, FlashTopology, TransferEvent};
use flashpim::tech::{self, PlaneConfig, TechParams};
use flashpim::tiling;
use flashpim::workload::{self, LlmModel, TpotOptions, TpotReport};
use serde_json::{json, Value};

/// 3D NAND flash PIM simulator and design-space exploration.
#[derive(Parser)]
#[command(name = "flashpim", version)]
struct Cli {
    /// Technology file; defaults to the shipped calibrated parameters.
    #[arg(long, global = true, value_name = "PATH")]
    tech: Option<PathBuf>,
    /// System file (device, cores, baseline, sweep grids).
    #[arg(long, global = true, value_name = "PATH", alias = "topology")]
    system: Option<PathBuf>,
    /// Model zoo file with [[model]] tables.
    #[arg(long, global = true, value_name = "PATH")]
    models: Option<PathBuf>,
    /// Write the event trace of simulating commands to this CSV.
    #[arg(long, global = true, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one plane dimension and write latency, energy and density as CSV.
    Sweep {
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated values; defaults to the system file grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<u32>>,
        /// Output CSV; stdout when absent.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Densest plane whose 8-bit PIM latency fits the budget.
    Select {
        #[arg(long)]
        budget_us: Option<f64>,
    },
    /// Time per output token of one decoding step.
    Tpot {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u32).range(1..))]
        ctx: u32,
        /// Also cost the conventional baseline device.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        lm_head: bool,
        /// Per-operation CSV of one block.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Best tiling plan of an M x N weight matrix.
    Tiling {
        #[arg(long)]
        m: u32,
        #[arg(long)]
        n: u32,
        /// Restrict to one method pattern, e.g. C/C/R/R.
        #[arg(long)]
        notation: Option<String>,
    },
    /// Shared bus against H-tree for one MVM on a single die.
    Bus {
        /// Matrix shape as ROWSxCOLS, e.g. 1024x4096.
        #[arg(long, value_parser = parse_shape)]
        shape: (u32, u32),
        #[arg(long, value_enum, default_value_t = PlaneSize::A)]
        plane: PlaneSize,
        /// Planes in the die; 64 for Size A and 128 for Size B when absent.
        #[arg(long)]
        planes: Option<u32>,
    },
    /// PIM area of one die against the die budget.
    Area,
    /// Years until the SLC region wears out.
    Lifetime {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 32.0)]
        slc_gib: f64,
        #[arg(long, default_value_t = 10_000)]
        pe_cycles: u64,
        #[arg(long, default_value_t = 50.0)]
        retention_boost: f64,
        /// TPOT in ms; estimated at --ctx when absent.
        #[arg(long)]
        tpot_ms: Option<f64>,
        #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u32).range(1..))]
        ctx: u32,
    },
    /// Time to write a prompt's KV cache and the tokens needed to repay it.
    KvOverhead {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u64).range(1..))]
        tokens: u64,
        /// Per-token saving in ms for the break-even count.
        #[arg(long)]
        saving_ms: Option<f64>,
    },
    /// Fit the free technology parameters to the anchors and write a technology file.
    Calibrate {
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlaneSize {
    A,
    B,
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    s.parse().map_err(|e: flashpim::Error| e.to_string())
}

fn parse_shape(s: &str) -> std::result::Result<(u32, u32), String> {
    let (m, n) = s.split_once(['x', 'X']).ok_or_else(|| format!("shape '{s}' is not ROWSxCOLS"))?;
    let m = m.trim().parse::<u32>().map_err(|e| format!("rows: {e}"))?;
    let n = n.trim().parse::<u32>().map_err(|e| format!("cols: {e}"))?;
    if m == 0 || n == 0 {
        return Err(format!("shape '{s}' has a zero dimension"));
    }
    Ok((m, n))
}

/// Failures that are not errors of the library.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Empty(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Empty(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use flashpim::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) | E::Parse(_) => 3,
                E::Infeasible(_) | E::Capacity(_) => 1,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => 2,
                CliError::Empty(_) => 1,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 3;
        }
    }
    2
}

/// Output closed early by the reader, e.g. `| head`.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        let kind = if let Some(e) = c.downcast_ref::<io::Error>() {
            Some(e.kind())
        } else if let Some(flashpim::Error::Io(e)) = c.downcast_ref::<flashpim::Error>() {
            Some(e.kind())
        } else {
            c.downcast_ref::<serde_json::Error>().and_then(|e| e.io_error_kind())
        };
        kind == Some(io::ErrorKind::BrokenPipe)
    })
}

struct Env {
    tech: TechParams,
    system: SystemConfig,
    models: Vec<LlmModel>,
    trace: Option<PathBuf>,
    json: bool,
}

impl Env {
    fn load(cli: &Cli) -> Result<Self> {
        let tech = match &cli.tech {
            Some(p) => TechFile::load(p).with_context(|| format!("loading {}", p.display()))?.tech,
            None => TechFile::shipped().tech,
        };
        let system = match &cli.system {
            Some(p) => SystemConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => SystemConfig::shipped(),
        };
        let models = match &cli.models {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(flashpim::Error::from).with_context(|| format!("reading {}", p.display()))?;
                workload::parse_models(&text).with_context(|| format!("loading {}", p.display()))?
            }
            None => workload::default_models(),
        };
        Ok(Self { tech, system, models, trace: cli.trace.clone(), json: cli.json })
    }

    fn model(&self, name: &str) -> Result<LlmModel> {
        Ok(workload::find_model(&self.models, name)?)
    }

    fn tpot_options(&self, lm_head: bool) -> TpotOptions {
        TpotOptions { cores: self.system.cores.clone(), include_lm_head: lm_head, ..TpotOptions::default() }
    }

    fn tpot(&self, model: &LlmModel, ctx: u32, lm_head: bool) -> Result<TpotReport> {
        let s = &self.system;
        Ok(workload::estimate_tpot(model, &s.topology, &s.plane, &self.tech, ctx, &self.tpot_options(lm_head))?)
    }

    fn write_trace(&self, events: &[TransferEvent]) -> Result<()> {
        if let Some(p) = &self.trace {
            let f = File::create(p).map_err(flashpim::Error::from).with_context(|| format!("creating {}", p.display()))?;
            interconnect::write_trace_csv(events, BufWriter::new(f))?;
        }
        Ok(())
    }

    fn emit(&self, value: &Value, table: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
        let mut out = io::stdout().lock();
        if self.json {
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
        } else {
            table(&mut out)?;
        }
        Ok(())
    }
}

fn plane_json(p: &PlaneConfig) -> Value {
    json!({ "n_row": p.n_row, "n_col": p.n_col, "n_stack": p.n_stack, "bits_per_cell": p.bits_per_cell })
}

fn us(s: f64) -> f64 {
    s * 1e6
}

fn cmd_sweep(env: &Env, axis: SweepAxis, values: Option<Vec<u32>>, out: Option<&Path>) -> Result<()> {
    let grids = &env.system.sweep;
    let spec = SweepSpec {
        axis,
        values: values.unwrap_or_else(|| grids.values(axis).to_vec()),
        fixed: grids.fixed,
    };
    let rows = dse::run_sweep(&spec, &env.tech)?;
    if env.json {
        return env.emit(&serde_json::to_value(&rows)?, |_| Ok(()));
    }
    match out {
        Some(p) => {
            let f = File::create(p).map_err(flashpim::Error::from).with_context(|| format!("creating {}", p.display()))?;
            dse::write_sweep_csv(&rows, BufWriter::new(f))?;
        }
        None => dse::write_sweep_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_select(env: &Env, budget_us: Option<f64>) -> Result<()> {
    let budget = budget_us.map(|b| b * 1e-6).unwrap_or(env.system.sweep.select_budget_s);
    if !(budget > 0.0) {
        bail!(CliError::Usage(format!("latency budget must be > 0, got {budget} s")));
    }
    let Some(cfg) = dse::select_plane(&dse::plane_candidates(), budget, &env.tech)? else {
        bail!(CliError::Empty(format!("no candidate plane meets a {:.3} us budget", us(budget))));
    };
    let lat = tech::pim_latency(&cfg, &env.tech, tiling::DEFAULT_B_INPUT)?.total;
    let density = tech::cell_density(&cfg, &env.tech)?;
    let v = json!({
        "budget_us": us(budget),
        "plane": plane_json(&cfg),
        "pim_latency_us": us(lat),
        "density_gb_per_mm2": density,
    });
    env.emit(&v, |o| {
        writeln!(o, "selected plane   {cfg}")?;
        writeln!(o, "PIM latency      {:.3} us (budget {:.3} us)", us(lat), us(budget))?;
        writeln!(o, "density          {density:.3} Gb/mm2")
    })
}

fn write_op_csv(path: &Path, r: &TpotReport) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(flashpim::Error::from).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "op,kind,unit,latency_us,energy_uj,plan")?;
    for o in &r.per_op {
        writeln!(
            f,
            "{},{:?},{:?},{:.6},{:.6},{}",
            o.name,
            o.kind,
            o.unit,
            us(o.latency_s),
            o.energy_j * 1e6,
            o.plan.as_deref().unwrap_or("")
        )?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_tpot(env: &Env, model: &str, ctx: u32, baseline: bool, lm_head: bool, csv: Option<&Path>) -> Result<()> {
    let m = env.model(model)?;
    let r = env.tpot(&m, ctx, lm_head)?;
    if let Some(p) = csv {
        write_op_csv(p, &r)?;
    }
    let base = if baseline {
        let b = &env.system.baseline;
        let opts = workload::baseline_options(&env.tpot_options(lm_head));
        Some(workload::estimate_tpot(&m, &b.topology, &b.plane, &env.tech, ctx, &opts)?)
    } else {
        None
    };
    let speedup = base.as_ref().map(|b| b.total_tpot_s / r.total_tpot_s);
    let v = json!({
        "report": serde_json::to_value(&r)?,
        "baseline": base.as_ref().map(serde_json::to_value).transpose()?,
        "speedup": speedup,
    });
    env.emit(&v, |o| {
        writeln!(o, "model {}  context {} tokens  {} blocks", r.model, r.l_ctx, r.n_blocks)?;
        writeln!(o, "{:<14} {:<12} {:>14}  plan", "op", "unit", "latency (us)")?;
        for op in &r.per_op {
            writeln!(o, "{:<14} {:<12} {:>14.3}  {}", op.name, format!("{:?}", op.unit), us(op.latency_s), op.plan.as_deref().unwrap_or("-"))?;
        }
        let s = &r.subtotals;
        writeln!(o, "per block        {:.3} us", us(r.per_block_s))?;
        writeln!(o, "sMVM             {:.3} ms", s.smvm_s * 1e3)?;
        writeln!(o, "dMVM             {:.3} ms", s.dmvm_s * 1e3)?;
        writeln!(o, "layernorm        {:.3} ms", s.layernorm_s * 1e3)?;
        writeln!(o, "softmax          {:.3} ms", s.softmax_s * 1e3)?;
        writeln!(o, "other (cores)    {:.3} ms", s.other_cores_s * 1e3)?;
        if r.lm_head_s > 0.0 {
            writeln!(o, "LM head          {:.3} ms", r.lm_head_s * 1e3)?;
        }
        writeln!(o, "TPOT             {:.3} ms", r.total_tpot_s * 1e3)?;
        writeln!(o, "flash energy     {:.3} mJ/token", r.energy_j * 1e3)?;
        if let (Some(b), Some(x)) = (&base, speedup) {
            writeln!(o, "baseline TPOT    {:.3} ms", b.total_tpot_s * 1e3)?;
            writeln!(o, "speedup          {x:.1}x")?;
        }
        Ok(())
    })
}

fn cmd_tiling(env: &Env, m: u32, n: u32, notation: Option<&str>) -> Result<()> {
    let s = &env.system;
    let (plan, cost) = match notation {
        Some(nt) => tiling::best_plan_with_notation(nt, m, n, &s.topology, &s.plane, &env.tech)?,
        None => tiling::best_plan(m, n, &s.topology, &s.plane, &env.tech)?,
    };
    let (_, events) = tiling::cost_tasks(&plan.tasks(&s.topology), &s.topology, &s.plane, &env.tech, env.trace.is_some())?;
    env.write_trace(&events)?;
    let v = json!({
        "m": m,
        "n": n,
        "plan": plan.to_string(),
        "notation": plan.notation(),
        "row_tiles": plan.row_tiles(),
        "col_tiles": plan.col_tiles(),
        "inbound_us": us(cost.inbound_io),
        "pim_us": us(cost.pim),
        "outbound_us": us(cost.outbound_io),
        "total_us": us(cost.total),
        "energy_uj": cost.energy * 1e6,
    });
    env.emit(&v, |o| {
        writeln!(o, "matrix           {m} x {n}")?;
        writeln!(o, "plan             {plan}  ({})", plan.notation())?;
        writeln!(o, "tiles            {} rows x {} cols", plan.row_tiles(), plan.col_tiles())?;
        writeln!(o, "inbound I/O      {:.3} us", us(cost.inbound_io))?;
        writeln!(o, "PIM              {:.3} us", us(cost.pim))?;
        writeln!(o, "outbound I/O     {:.3} us", us(cost.outbound_io))?;
        writeln!(o, "total            {:.3} us", us(cost.total))?;
        writeln!(o, "energy           {:.3} uJ", cost.energy * 1e6)
    })
}

fn cmd_bus(env: &Env, (m, n): (u32, u32), size: PlaneSize, planes: Option<u32>) -> Result<()> {
    let (cfg, default_planes) = match size {
        PlaneSize::A => (PlaneConfig::size_a(), 64),
        PlaneSize::B => (PlaneConfig::size_b(), 128),
    };
    let topo = FlashTopology { n_plane: planes.unwrap_or(default_planes), ..env.system.topology.clone() };
    let spec = tiling::mvm_spec(&topo, &cfg, &env.tech)?;
    let (rows, cols) = tiling::tile_grid(m, n, tiling::unit_cols(&cfg));
    if rows * cols > topo.n_plane {
        bail!(flashpim::Error::Infeasible(format!("{m}x{n} needs {} tiles, the die has {} planes", rows * cols, topo.n_plane)));
    }
    let cmp = interconnect::compare_buses(rows, cols, &spec, &topo)?;
    if env.trace.is_some() {
        let tasks = interconnect::single_die_tasks(rows, cols, topo.n_plane);
        let tree = FlashTopology { bus_topology: interconnect::BusTopology::Htree, ..topo.clone() };
        env.write_trace(&interconnect::simulate_mvm(&tasks, &spec, &tree, true)?.events)?;
    }
    let v = json!({
        "m": m,
        "n": n,
        "plane": plane_json(&cfg),
        "n_planes": topo.n_plane,
        "tiles": rows * cols,
        "shared_us": us(cmp.shared_s),
        "htree_us": us(cmp.htree_s),
        "reduction_pct": cmp.reduction * 100.0,
    });
    env.emit(&v, |o| {
        writeln!(o, "MVM              {m} x {n} on {} planes of {cfg} ({} tiles)", topo.n_plane, rows * cols)?;
        writeln!(o, "shared bus       {:.3} us", us(cmp.shared_s))?;
        writeln!(o, "H-tree           {:.3} us", us(cmp.htree_s))?;
        writeln!(o, "reduction        {:.1} %", cmp.reduction * 100.0)
    })
}

fn cmd_area(env: &Env) -> Result<()> {
    let s = &env.system;
    let r = dse::area_report(&s.plane, &s.topology, &env.tech)?;
    env.emit(&serde_json::to_value(r)?, |o| {
        writeln!(o, "plane area       {:.5} mm2 ({})", r.plane_area_mm2, s.plane)?;
        writeln!(o, "PIM area         {:.3} mm2 over {} planes", r.total_pim_area_mm2, r.n_planes)?;
        writeln!(o, "die budget       {:.1}-{:.1} mm2 ({})", r.budget_low_mm2, r.budget_high_mm2, if r.within_budget { "fits" } else { "exceeds" })?;
        writeln!(o, "HV peripherals   {:.2} %", r.ratios.hv_peri * 100.0)?;
        writeln!(o, "LV peripherals   {:.2} %", r.ratios.lv_peri * 100.0)?;
        writeln!(o, "RPU + H-tree     {:.2} %", r.ratios.rpu_htree * 100.0)?;
        writeln!(o, "peripheral total {:.2} %", r.peripheral_total * 100.0)
    })
}

fn cmd_lifetime(env: &Env, model: &str, slc_gib: f64, pe: u64, boost: f64, tpot_ms: Option<f64>, ctx: u32) -> Result<()> {
    let m = env.model(model)?;
    if !(slc_gib > 0.0) {
        bail!(CliError::Usage(format!("--slc-gib must be > 0, got {slc_gib}")));
    }
    let tpot = match tpot_ms {
        Some(t) => t * 1e-3,
        None => env.tpot(&m, ctx, false)?.total_tpot_s,
    };
    let capacity = (slc_gib * (1u64 << 30) as f64).round() as u64;
    let r = workload::lifetime_projection(capacity, tpot, &m, pe, boost)?;
    env.emit(&serde_json::to_value(&r)?, |o| {
        writeln!(o, "model            {}", m.name)?;
        writeln!(o, "TPOT             {:.3} ms", r.tpot_s * 1e3)?;
        writeln!(o, "KV per token     {} B", r.bytes_per_token)?;
        writeln!(o, "write rate       {:.3} MB/s", r.write_bytes_per_sec / 1e6)?;
        writeln!(o, "SLC capacity     {slc_gib} GiB, {} P/E x {}", r.pe_cycles, r.retention_boost)?;
        writeln!(o, "lifetime         {:.2} years", r.years)?;
        for a in &r.assumptions {
            writeln!(o, "  assumes {a}")?;
        }
        Ok(())
    })
}

fn cmd_kv_overhead(env: &Env, model: &str, tokens: u64, saving_ms: Option<f64>) -> Result<()> {
    let m = env.model(model)?;
    let topo = &env.system.topology;
    let t = workload::kv_write_overhead(&m, tokens, topo)?;
    let be = saving_ms.and_then(|s| workload::break_even_tokens(t, s * 1e-3));
    let v = json!({
        "model": m.name,
        "tokens": tokens,
        "kv_bytes": workload::kv_bytes(&m, tokens),
        "write_bandwidth_bytes_per_s": workload::slc_write_bandwidth(topo),
        "overhead_ms": t * 1e3,
        "saving_ms": saving_ms,
        "break_even_tokens": be,
    });
    env.emit(&v, |o| {
        writeln!(o, "model            {}", m.name)?;
        writeln!(o, "KV bytes         {} B for {tokens} tokens", workload::kv_bytes(&m, tokens))?;
        writeln!(o, "write bandwidth  {:.2} GB/s", workload::slc_write_bandwidth(topo) / 1e9)?;
        writeln!(o, "overhead         {:.3} ms", t * 1e3)?;
        if let Some(s) = saving_ms {
            match be {
                Some(n) => writeln!(o, "break-even       {n} tokens at {s} ms saved per token"),
                None => writeln!(o, "break-even       never (saving {s} ms <= 0)"),
            }?;
        }
        Ok(())
    })
}

fn cmd_calibrate(env: &Env, out: Option<&Path>) -> Result<()> {
    let targets = CalibrationTargets::default();
    let res = calibrate::calibrate(&TechParams::seed(), &targets)?;
    let text = TechFile::from_calibration(&res, &targets).to_toml()?;
    match out {
        Some(p) => std::fs::write(p, &text).map_err(flashpim::Error::from).with_context(|| format!("writing {}", p.display()))?,
        None if !env.json => print!("{text}"),
        None => {}
    }
    if env.json {
        env.emit(&json!({ "iterations": res.iterations, "residuals": serde_json::to_value(&res.residuals)? }), |_| Ok(()))?;
    } else if out.is_some() {
        for r in &res.residuals {
            println!("{:<18} target {:e} achieved {:e} (rel {:.1e})", r.anchor, r.target, r.achieved, r.rel_error);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let env = Env::load(&cli)?;
    match cli.cmd {
        Command::Sweep { axis, values, out } => cmd_sweep(&env, axis, values, out.as_deref()),
        Command::Select { budget_us } => cmd_select(&env, budget_us),
        Command::Tpot { model, ctx, baseline, lm_head, csv } => cmd_tpot(&env, &model, ctx, baseline, lm_head, csv.as_deref()),
        Command::Tiling { m, n, notation } => cmd_tiling(&env, m, n, notation.as_deref()),
        Command::Bus { shape, plane, planes } => cmd_bus(&env, shape, plane, planes),
        Command::Area => cmd_area(&env),
        Command::Lifetime { model, slc_gib, pe_cycles, retention_boost, tpot_ms, ctx } => {
            cmd_lifetime(&env, &model, slc_gib, pe_cycles, retention_boost, tpot_ms, ctx)
        }
        Command::KvOverhead { model, tokens, saving_ms } => cmd_kv_overhead(&env, &model, tokens, saving_ms),
        Command::Calibrate { out } => cmd_calibrate(&env, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source text.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
