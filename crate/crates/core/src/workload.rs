//! Decoder workloads and end-to-end estimates.
//!
//! Static projections run as sMVMs on the QLC dies, attention products
//! against the KV cache run on the SLC-die RPUs, and everything elementwise
//! runs on the controller cores. One decoding step walks every block of the
//! decoder graph in order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interconnect::{FlashTopology, TileTask};
use crate::tech::{self, PlaneConfig, TechParams};
use crate::tiling::{self, AttentionShape};

/// Model zoo shipped with the crate.
pub const DEFAULT_MODELS_TOML: &str = include_str!("../data/models.toml");

pub const SECONDS_PER_YEAR: f64 = 365.25 * 24.0 * 3600.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmModel {
    pub name: String,
    pub n_blocks: u32,
    pub d_model: u32,
    pub n_heads: u32,
    pub d_head: u32,
    pub ffn_dim: u32,
    #[serde(default = "eight")]
    pub weight_bits: u32,
    #[serde(default = "eight")]
    pub act_bits: u32,
    /// Output vocabulary, used only when the LM head is costed.
    #[serde(default)]
    pub vocab: u32,
}

fn eight() -> u32 {
    8
}

impl LlmModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_blocks", self.n_blocks),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("ffn_dim", self.ffn_dim),
            ("weight_bits", self.weight_bits),
            ("act_bits", self.act_bits),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("model {}: {name} must be >= 1", self.name)));
            }
        }
        if self.d_head * self.n_heads != self.d_model {
            return Err(Error::InvalidConfig(format!(
                "model {}: d_head ({}) x n_heads ({}) != d_model ({})",
                self.name, self.d_head, self.n_heads, self.d_model
            )));
        }
        Ok(())
    }

    /// Bytes of static weights at `weight_bits`.
    pub fn weight_bytes(&self) -> u64 {
        let d = self.d_model as u64;
        let per_block = 4 * d * d + 2 * d * self.ffn_dim as u64;
        self.n_blocks as u64 * per_block * self.weight_bits as u64 / 8
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ModelZoo {
    model: Vec<LlmModel>,
}

/// Parse a model zoo file (`[[model]]` tables).
pub fn parse_models(text: &str) -> Result<Vec<LlmModel>> {
    let zoo: ModelZoo = toml::from_str(text)?;
    for m in &zoo.model {
        m.validate()?;
    }
    Ok(zoo.model)
}

pub fn default_models() -> Vec<LlmModel> {
    parse_models(DEFAULT_MODELS_TOML).expect("shipped model zoo parses")
}

/// Case-insensitive lookup.
pub fn find_model(models: &[LlmModel], name: &str) -> Result<LlmModel> {
    models.iter().find(|m| m.name.eq_ignore_ascii_case(name)).cloned().ok_or_else(|| Error::UnknownModel {
        name: name.to_string(),
        available: models.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join(", "),
    })
}

// ---------------------------------------------------------------------------
// Graph

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Layernorm,
    Smvm,
    Qkt,
    Softmax,
    Sv,
    Activation,
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Cores,
    QlcPim,
    SlcRpu,
}

impl OpKind {
    pub fn unit(self) -> Unit {
        match self {
            OpKind::Smvm => Unit::QlcPim,
            OpKind::Qkt | OpKind::Sv => Unit::SlcRpu,
            _ => Unit::Cores,
        }
    }
}

/// Operand sizes. Attention nodes take the context length at costing time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum OpDims {
    /// `m` inputs, `n` outputs.
    Matrix { m: u32, n: u32 },
    /// Per head, `(1 x L) (L x d_head)` or `(1 x d_head) (d_head x L)`.
    Attention { d_head: u32, n_heads: u32 },
    /// One score row of length `L` per head.
    Scores { n_heads: u32 },
    Vector { len: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpNode {
    pub name: String,
    pub kind: OpKind,
    pub dims: OpDims,
    pub unit: Unit,
    /// Nodes sharing a group id read the same input and may run together.
    pub group: Option<u32>,
}

fn node(name: &str, kind: OpKind, dims: OpDims) -> OpNode {
    OpNode { name: name.to_string(), kind, dims, unit: kind.unit(), group: None }
}

/// Nodes of one decoder block, in execution order.
pub fn block_graph(model: &LlmModel) -> Vec<OpNode> {
    let d = model.d_model;
    let f = model.ffn_dim;
    let att = OpDims::Attention { d_head: model.d_head, n_heads: model.n_heads };
    let proj = |name: &str| OpNode { group: Some(0), ..node(name, OpKind::Smvm, OpDims::Matrix { m: d, n: d }) };
    vec![
        node("ln_attn", OpKind::Layernorm, OpDims::Vector { len: d }),
        proj("q_proj"),
        proj("k_proj"),
        proj("v_proj"),
        node("qkt", OpKind::Qkt, att),
        node("softmax", OpKind::Softmax, OpDims::Scores { n_heads: model.n_heads }),
        node("sv", OpKind::Sv, att),
        node("out_proj", OpKind::Smvm, OpDims::Matrix { m: d, n: d }),
        node("residual_attn", OpKind::Residual, OpDims::Vector { len: d }),
        node("ln_ffn", OpKind::Layernorm, OpDims::Vector { len: d }),
        node("ffn1", OpKind::Smvm, OpDims::Matrix { m: d, n: f }),
        node("activation", OpKind::Activation, OpDims::Vector { len: f }),
        node("ffn2", OpKind::Smvm, OpDims::Matrix { m: f, n: d }),
        node("residual_ffn", OpKind::Residual, OpDims::Vector { len: d }),
    ]
}

/// All blocks in order, `n_blocks` copies of [`block_graph`].
pub fn build_decoder_graph(model: &LlmModel) -> Result<Vec<OpNode>> {
    model.validate()?;
    let block = block_graph(model);
    Ok((0..model.n_blocks).flat_map(|_| block.iter().cloned()).collect())
}

// ---------------------------------------------------------------------------
// Cost model

/// Controller cores. Elementwise work spreads over all cores; every op also
/// pays a fixed dispatch and synchronisation cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreParams {
    pub n_cores: u32,
    pub clock_hz: f64,
    pub layernorm_cycles_per_elem: f64,
    pub softmax_cycles_per_elem: f64,
    pub activation_cycles_per_elem: f64,
    pub residual_cycles_per_elem: f64,
    pub op_overhead_s: f64,
}

impl Default for CoreParams {
    fn default() -> Self {
        Self {
            n_cores: 4,
            clock_hz: 1.0e9,
            layernorm_cycles_per_elem: 10.0,
            softmax_cycles_per_elem: 1.0,
            activation_cycles_per_elem: 1.0,
            residual_cycles_per_elem: 1.0,
            op_overhead_s: 1e-6,
        }
    }
}

impl CoreParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_cores == 0 || !(self.clock_hz > 0.0) {
            return Err(Error::InvalidConfig("cores need n_cores >= 1 and clock_hz > 0".into()));
        }
        for v in [
            self.layernorm_cycles_per_elem,
            self.softmax_cycles_per_elem,
            self.activation_cycles_per_elem,
            self.residual_cycles_per_elem,
            self.op_overhead_s,
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("core cost parameters must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn time(&self, elements: u64, cycles_per_elem: f64) -> f64 {
        self.op_overhead_s + elements as f64 * cycles_per_elem / (self.n_cores as f64 * self.clock_hz)
    }
}

/// How static weights are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingPolicy {
    /// Searched tiling across the whole hierarchy; the Q/K/V projections are
    /// fused into one `d x 3d` product.
    Searched,
    /// Every matrix packed into one die, tiles round-robin over its planes;
    /// the Q/K/V projections occupy three dies and run together.
    DieContiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpotOptions {
    pub cores: CoreParams,
    pub mapping: MappingPolicy,
    pub include_lm_head: bool,
}

impl Default for TpotOptions {
    fn default() -> Self {
        Self { cores: CoreParams::default(), mapping: MappingPolicy::Searched, include_lm_head: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCost {
    pub name: String,
    pub kind: OpKind,
    pub unit: Unit,
    pub latency_s: f64,
    pub energy_j: f64,
    /// Text form of the tiling plan for sMVMs.
    pub plan: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subtotals {
    pub smvm_s: f64,
    pub dmvm_s: f64,
    pub layernorm_s: f64,
    pub softmax_s: f64,
    pub other_cores_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TpotReport {
    pub model: String,
    pub l_ctx: u32,
    /// Costs of one block; every block is identical.
    pub per_op: Vec<OpCost>,
    pub per_block_s: f64,
    pub n_blocks: u32,
    pub lm_head_s: f64,
    pub total_tpot_s: f64,
    /// Flash-side energy per token; core energy is not modelled.
    pub energy_j: f64,
    /// Whole-token totals per category.
    pub subtotals: Subtotals,
}

/// Tiles of a `m x n` matrix packed into die `die` of channel 0.
fn die_contiguous_tasks(m: u32, n: u32, die: u32, topo: &FlashTopology, cfg: &PlaneConfig) -> Vec<TileTask> {
    let (rows, cols) = tiling::tile_grid(m, n, tiling::unit_cols(cfg));
    (0..rows * cols)
        .map(|i| {
            let (c, r) = (i / rows, i % rows);
            TileTask { channel: 0, die, plane: i % topo.n_plane, row_seg: r, col_group: c }
        })
        .collect()
}

struct Ctx<'a> {
    topo: &'a FlashTopology,
    cfg: &'a PlaneConfig,
    tech: &'a TechParams,
    opts: &'a TpotOptions,
}

impl Ctx<'_> {
    fn smvm(&self, m: u32, n: u32) -> Result<(f64, f64, String)> {
        match self.opts.mapping {
            MappingPolicy::Searched => {
                let (plan, cost) = tiling::best_plan(m, n, self.topo, self.cfg, self.tech)?;
                Ok((cost.total, cost.energy, plan.to_string()))
            }
            MappingPolicy::DieContiguous => {
                let tasks = die_contiguous_tasks(m, n, 0, self.topo, self.cfg);
                let (cost, _) = tiling::cost_tasks(&tasks, self.topo, self.cfg, self.tech, false)?;
                Ok((cost.total, cost.energy, format!("die-contiguous({} tiles)", tasks.len())))
            }
        }
    }

    /// Q/K/V as one unit; returns the cost of the whole group.
    fn qkv(&self, d: u32, members: u32) -> Result<(f64, f64, String)> {
        match self.opts.mapping {
            MappingPolicy::Searched => self.smvm(d, members * d),
            MappingPolicy::DieContiguous => {
                let mut tasks = Vec::new();
                for k in 0..members {
                    let die = k % self.topo.dies_per_channel();
                    let channel = k / self.topo.dies_per_channel();
                    tasks.extend(
                        die_contiguous_tasks(d, d, die, self.topo, self.cfg)
                            .into_iter()
                            .map(|t| TileTask { channel: channel % self.topo.n_channel, ..t }),
                    );
                }
                let (cost, _) = tiling::cost_tasks(&tasks, self.topo, self.cfg, self.tech, false)?;
                Ok((cost.total, cost.energy, format!("die-contiguous x{members}")))
            }
        }
    }
}

fn kv_page_energy(cfg: &PlaneConfig, tech: &TechParams) -> Result<f64> {
    let slc = cfg.with_bits_per_cell(1);
    let e = tech::energy_components(&slc, tech, 1)?;
    Ok(e.e_dec_wl + e.e_pre + e.e_dec_bls + e.e_sense)
}

/// Time per output token for one decoding step at context length `l_ctx`.
pub fn estimate_tpot(
    model: &LlmModel,
    topo: &FlashTopology,
    cfg: &PlaneConfig,
    tech: &TechParams,
    l_ctx: u32,
    opts: &TpotOptions,
) -> Result<TpotReport> {
    model.validate()?;
    topo.validate()?;
    cfg.validate()?;
    tech.validate()?;
    opts.cores.validate()?;
    if l_ctx == 0 {
        return Err(Error::Precondition("context length must be >= 1".into()));
    }
    let qlc_bytes = topo.qlc_dies() as u64 * topo.n_plane as u64 * cfg.with_bits_per_cell(4).capacity_bytes();
    if model.weight_bytes() > qlc_bytes {
        return Err(Error::Capacity(format!(
            "{} needs {} B of weights, QLC region holds {qlc_bytes} B",
            model.name,
            model.weight_bytes()
        )));
    }

    let ctx = Ctx { topo, cfg, tech, opts };
    let shape = AttentionShape { seq_len: l_ctx, d_head: model.d_head, n_heads: model.n_heads, n_blocks: model.n_blocks };
    let page_energy = kv_page_energy(cfg, tech)?;
    let slc_page = cfg.with_bits_per_cell(1).page_bytes().max(1);
    // Pages of K (or V) touched per block, over all heads.
    let kv_pages = (l_ctx as u64 * model.d_head as u64 * model.n_heads as u64).div_ceil(slc_page) as f64;
    let cores = &opts.cores;

    let graph = block_graph(model);
    let group_size = graph.iter().filter(|n| n.group == Some(0)).count() as u32;
    let mut group_cost: Option<(f64, f64, String)> = None;
    let mut per_op = Vec::with_capacity(graph.len());
    for n in &graph {
        let (latency, energy, plan) = match (n.kind, n.dims) {
            (OpKind::Smvm, OpDims::Matrix { m, n: cols }) if n.group.is_some() => {
                if group_cost.is_none() {
                    group_cost = Some(ctx.qkv(m.max(cols), group_size)?);
                }
                let (t, e, p) = group_cost.clone().expect("set above");
                (t / group_size as f64, e / group_size as f64, Some(p))
            }
            (OpKind::Smvm, OpDims::Matrix { m, n: cols }) => {
                let (t, e, p) = ctx.smvm(m, cols)?;
                (t, e, Some(p))
            }
            (OpKind::Qkt, _) => {
                let (_, c) = tiling::map_qkt(&shape, topo, cfg, tech)?;
                (c.total, page_energy * kv_pages, None)
            }
            (OpKind::Sv, _) => {
                let (_, c) = tiling::map_sv(&shape, topo, cfg, tech)?;
                (c.total, page_energy * kv_pages, None)
            }
            (OpKind::Softmax, OpDims::Scores { n_heads }) => {
                (cores.time(n_heads as u64 * l_ctx as u64, cores.softmax_cycles_per_elem), 0.0, None)
            }
            (OpKind::Layernorm, OpDims::Vector { len }) => (cores.time(len as u64, cores.layernorm_cycles_per_elem), 0.0, None),
            (OpKind::Activation, OpDims::Vector { len }) => {
                (cores.time(len as u64, cores.activation_cycles_per_elem), 0.0, None)
            }
            (OpKind::Residual, OpDims::Vector { len }) => (cores.time(len as u64, cores.residual_cycles_per_elem), 0.0, None),
            (kind, dims) => return Err(Error::InvalidConfig(format!("node {kind:?} cannot take dims {dims:?}"))),
        };
        per_op.push(OpCost { name: n.name.clone(), kind: n.kind, unit: n.unit, latency_s: latency, energy_j: energy, plan });
    }

    let (lm_head_s, lm_head_e) = if opts.include_lm_head {
        if model.vocab == 0 {
            return Err(Error::InvalidConfig(format!("model {} has no vocab size for the LM head", model.name)));
        }
        let (t, e, _) = ctx.smvm(model.d_model, model.vocab)?;
        (t, e)
    } else {
        (0.0, 0.0)
    };

    let per_block_s: f64 = per_op.iter().map(|o| o.latency_s).sum();
    let per_block_e: f64 = per_op.iter().map(|o| o.energy_j).sum();
    let mut total = 0.0;
    let mut energy = 0.0;
    for _ in 0..model.n_blocks {
        total += per_block_s;
        energy += per_block_e;
    }
    total += lm_head_s;
    energy += lm_head_e;

    let nb = model.n_blocks as f64;
    let sum_kind = |pred: &dyn Fn(&OpCost) -> bool| per_op.iter().filter(|o| pred(o)).map(|o| o.latency_s).sum::<f64>() * nb;
    let subtotals = Subtotals {
        smvm_s: sum_kind(&|o| o.kind == OpKind::Smvm) + lm_head_s,
        dmvm_s: sum_kind(&|o| o.unit == Unit::SlcRpu),
        layernorm_s: sum_kind(&|o| o.kind == OpKind::Layernorm),
        softmax_s: sum_kind(&|o| o.kind == OpKind::Softmax),
        other_cores_s: sum_kind(&|o| matches!(o.kind, OpKind::Activation | OpKind::Residual)),
    };

    Ok(TpotReport {
        model: model.name.clone(),
        l_ctx,
        per_op,
        per_block_s,
        n_blocks: model.n_blocks,
        lm_head_s,
        total_tpot_s: total,
        energy_j: energy,
        subtotals,
    })
}

/// Baseline device: conventional planes, shared buses, die-contiguous weights.
pub fn baseline_options(opts: &TpotOptions) -> TpotOptions {
    TpotOptions { mapping: MappingPolicy::DieContiguous, ..opts.clone() }
}

// ---------------------------------------------------------------------------
// KV cache and endurance

/// Bytes of K and V appended for `tokens` tokens.
pub fn kv_bytes(model: &LlmModel, tokens: u64) -> u64 {
    2 * model.n_blocks as u64 * tokens * model.d_model as u64 * (model.act_bits as u64).div_ceil(8)
}

/// Effective SLC program bandwidth: the slower of the channels and the dies.
pub fn slc_write_bandwidth(topo: &FlashTopology) -> f64 {
    (topo.n_channel as f64 * topo.bus_bytes_per_sec).min(topo.slc_write_bytes_per_sec)
}

/// Time to write the KV cache of an `l_in`-token prompt.
pub fn kv_write_overhead(model: &LlmModel, l_in: u64, topo: &FlashTopology) -> Result<f64> {
    model.validate()?;
    topo.validate()?;
    Ok(kv_bytes(model, l_in) as f64 / slc_write_bandwidth(topo))
}

/// Tokens needed before a per-token saving repays `kv_overhead`.
/// `None` when the saving is not positive.
pub fn break_even_tokens(kv_overhead: f64, per_token_saving: f64) -> Option<u64> {
    if !(per_token_saving > 0.0) || !kv_overhead.is_finite() {
        return None;
    }
    if kv_overhead <= 0.0 {
        return Some(0);
    }
    let r = kv_overhead / per_token_saving;
    let near = r.round();
    // Absorb division noise so that exact multiples are not pushed up by one.
    if (r - near).abs() <= 1e-9 * near.max(1.0) {
        Some(near as u64)
    } else {
        Some(r.ceil() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifetimeReport {
    pub years: f64,
    pub slc_capacity_bytes: u64,
    pub tpot_s: f64,
    pub pe_cycles: u64,
    pub retention_boost: f64,
    pub bytes_per_token: u64,
    pub write_bytes_per_sec: f64,
    pub assumptions: Vec<String>,
}

/// Years until the SLC region wears out under continuous generation.
pub fn lifetime_projection(
    slc_capacity_bytes: u64,
    tpot_s: f64,
    model: &LlmModel,
    pe_cycles: u64,
    retention_boost: f64,
) -> Result<LifetimeReport> {
    model.validate()?;
    if slc_capacity_bytes == 0 || pe_cycles == 0 || !(retention_boost > 0.0) || !(tpot_s > 0.0) {
        return Err(Error::Precondition("lifetime inputs must be positive".into()));
    }
    let per_token = kv_bytes(model, 1);
    let rate = per_token as f64 / tpot_s;
    let endurance_bytes = pe_cycles as f64 * retention_boost * slc_capacity_bytes as f64;
    Ok(LifetimeReport {
        years: endurance_bytes / rate / SECONDS_PER_YEAR,
        slc_capacity_bytes,
        tpot_s,
        pe_cycles,
        retention_boost,
        bytes_per_token: per_token,
        write_bytes_per_sec: rate,
        assumptions: vec![
            "ideal wear leveling over the whole SLC region".into(),
            "one K and one V vector appended per block per token".into(),
            "continuous single-batch generation at the given TPOT".into(),
            "relaxed retention multiplies the rated P/E cycles".into(),
        ],
    })
}
