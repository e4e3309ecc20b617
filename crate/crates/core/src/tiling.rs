//! Mapping of matrix-vector products onto the flash hierarchy.
//!
//! A static weight matrix (`M` inputs x `N` outputs) is cut into unit tiles of
//! `128 x n_col/4`. At each of the four levels (channel, way, die, plane) the
//! tiles are split by rows, by columns, or not at all. Row splits scatter the
//! input and need their partial outputs added; column splits broadcast the
//! input and concatenate the outputs.
//!
//! Attention products against the KV cache use a different dataflow that
//! runs on the RPUs of the SLC dies; see [`map_qkt`] and [`map_sv`].

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interconnect::{self, FlashTopology, MvmSpec, TileTask, TransferEvent};
use crate::pim::{self, AdcModel, InputVector};
use crate::tech::{self, PlaneConfig, TechParams};

/// Rows of one unit tile; also the number of rows activated per PIM operation.
pub const UNIT_ROWS: u32 = 128;
/// Bitlines per concurrently sensed output column.
pub const MUX_RATIO: u32 = 4;
/// Input precision of the static products.
pub const DEFAULT_B_INPUT: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Channel,
    Way,
    Die,
    Plane,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Channel, Level::Way, Level::Die, Level::Plane];

    pub fn resources(self, topo: &FlashTopology) -> u32 {
        match self {
            Level::Channel => topo.n_channel,
            Level::Way => topo.n_way,
            Level::Die => topo.n_die,
            Level::Plane => topo.n_plane,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Row,
    Col,
}

impl Method {
    pub fn letter(self) -> char {
        match self {
            Method::None => 'N',
            Method::Row => 'R',
            Method::Col => 'C',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c {
            'N' => Some(Method::None),
            'R' => Some(Method::Row),
            'C' => Some(Method::Col),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelTiling {
    pub method: Method,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TilingPlan {
    /// Channel, way, die, plane.
    pub per_level: [LevelTiling; 4],
    pub unit_rows: u32,
    pub unit_cols: u32,
}

impl TilingPlan {
    /// Method letters only, e.g. `N/C/C/R`.
    pub fn notation(&self) -> String {
        let letters: Vec<String> = self.per_level.iter().map(|l| l.method.letter().to_string()).collect();
        letters.join("/")
    }

    pub fn row_tiles(&self) -> u32 {
        self.product(Method::Row)
    }

    pub fn col_tiles(&self) -> u32 {
        self.product(Method::Col)
    }

    fn product(&self, m: Method) -> u32 {
        self.per_level.iter().filter(|l| l.method == m).map(|l| l.count).product()
    }

    pub fn validate(&self, m: u32, n: u32, topo: &FlashTopology) -> Result<()> {
        for (lvl, lt) in Level::ALL.iter().zip(&self.per_level) {
            if lt.method == Method::None && lt.count != 1 {
                return Err(Error::InvalidConfig(format!("{lvl:?} is untiled but has count {}", lt.count)));
            }
            if lt.method != Method::None && lt.count < 2 {
                return Err(Error::InvalidConfig(format!("{lvl:?} tiles into {} (< 2) pieces", lt.count)));
            }
            if lt.count > lvl.resources(topo) {
                return Err(Error::InvalidConfig(format!(
                    "{lvl:?} count {} exceeds {} available",
                    lt.count,
                    lvl.resources(topo)
                )));
            }
        }
        let (rows, cols) = tile_grid(m, n, self.unit_cols);
        if self.row_tiles() != rows || self.col_tiles() != cols {
            return Err(Error::InvalidConfig(format!(
                "plan {self} covers {}x{} tiles, matrix needs {rows}x{cols}",
                self.row_tiles(),
                self.col_tiles()
            )));
        }
        Ok(())
    }

    /// Placement of every unit tile. Tile indices are spread over the levels
    /// in mixed radix, channel most significant.
    pub fn tasks(&self, topo: &FlashTopology) -> Vec<TileTask> {
        let rows = self.row_tiles();
        let cols = self.col_tiles();
        let mut out = Vec::with_capacity((rows * cols) as usize);
        for c in 0..cols {
            for r in 0..rows {
                let idx = self.digits(r, c);
                out.push(TileTask {
                    channel: idx[0],
                    die: idx[1] * topo.n_die + idx[2],
                    plane: idx[3],
                    row_seg: r,
                    col_group: c,
                });
            }
        }
        out
    }

    fn digits(&self, r: u32, c: u32) -> [u32; 4] {
        let mut idx = [0u32; 4];
        let mut rr = r;
        let mut cc = c;
        for i in (0..4).rev() {
            let lt = self.per_level[i];
            match lt.method {
                Method::Row => {
                    idx[i] = rr % lt.count;
                    rr /= lt.count;
                }
                Method::Col => {
                    idx[i] = cc % lt.count;
                    cc /= lt.count;
                }
                Method::None => {}
            }
        }
        idx
    }
}

impl fmt::Display for TilingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.per_level.iter().map(|l| format!("{}({})", l.method.letter(), l.count)).collect();
        f.write_str(&parts.join("/"))
    }
}

impl TilingPlan {
    /// Parse `R(2)/C(7)/N(1)/R(56)`; unit sizes come from `cfg`.
    pub fn parse(s: &str, cfg: &PlaneConfig) -> Result<Self> {
        let bad = || Error::Parse(format!("malformed plan '{s}', expected e.g. N(1)/C(2)/C(7)/R(56)"));
        let parts: Vec<&str> = s.trim().split('/').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let mut per_level = [LevelTiling { method: Method::None, count: 1 }; 4];
        for (slot, p) in per_level.iter_mut().zip(parts) {
            let mut chars = p.chars();
            let method = chars.next().and_then(Method::from_letter).ok_or_else(bad)?;
            let rest = chars.as_str();
            let count = if rest.is_empty() {
                1
            } else {
                rest.strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(bad)?
            };
            *slot = LevelTiling { method, count };
        }
        Ok(Self { per_level, unit_rows: UNIT_ROWS, unit_cols: unit_cols(cfg) })
    }
}

/// Output columns produced by one plane per operation.
pub fn unit_cols(cfg: &PlaneConfig) -> u32 {
    (cfg.n_col / MUX_RATIO).max(1)
}

/// Row and column tile counts of an `m x n` matrix.
pub fn tile_grid(m: u32, n: u32, unit_cols: u32) -> (u32, u32) {
    (m.div_ceil(UNIT_ROWS), n.div_ceil(unit_cols))
}

/// Ordered factorisations of `target` into `caps.len()` factors, each in
/// `2..=cap`.
fn factorizations(target: u32, caps: &[u32]) -> Vec<Vec<u32>> {
    if caps.is_empty() {
        return if target == 1 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for f in 2..=caps[0].min(target) {
        if target % f == 0 {
            for mut rest in factorizations(target / f, &caps[1..]) {
                rest.insert(0, f);
                out.push(rest);
            }
        }
    }
    out
}

/// Every valid plan, ordered by text form.
pub fn enumerate_plans(m: u32, n: u32, topo: &FlashTopology, cfg: &PlaneConfig) -> Result<Vec<TilingPlan>> {
    if m == 0 || n == 0 {
        return Err(Error::Precondition(format!("matrix must be at least 1x1, got {m}x{n}")));
    }
    topo.validate()?;
    cfg.validate()?;
    let ucols = unit_cols(cfg);
    let (rows, cols) = tile_grid(m, n, ucols);
    let methods = [Method::None, Method::Row, Method::Col];
    let mut plans = Vec::new();
    for code in 0..81u32 {
        let mut assign = [Method::None; 4];
        let mut k = code;
        for a in assign.iter_mut().rev() {
            *a = methods[(k % 3) as usize];
            k /= 3;
        }
        let caps_of = |m: Method| -> Vec<u32> {
            Level::ALL.iter().zip(&assign).filter(|(_, a)| **a == m).map(|(l, _)| l.resources(topo)).collect()
        };
        let row_f = factorizations(rows, &caps_of(Method::Row));
        let col_f = factorizations(cols, &caps_of(Method::Col));
        for rf in &row_f {
            for cf in &col_f {
                let (mut ri, mut ci) = (rf.iter(), cf.iter());
                let per_level = assign.map(|method| {
                    let count = match method {
                        Method::None => 1,
                        Method::Row => *ri.next().expect("factor per row level"),
                        Method::Col => *ci.next().expect("factor per col level"),
                    };
                    LevelTiling { method, count }
                });
                plans.push(TilingPlan { per_level, unit_rows: UNIT_ROWS, unit_cols: ucols });
            }
        }
    }
    if plans.is_empty() {
        return Err(Error::Infeasible(format!(
            "{m}x{n} needs {rows}x{cols} tiles, which the {}-channel topology cannot hold",
            topo.n_channel
        )));
    }
    plans.sort_by_cached_key(|p| p.to_string());
    Ok(plans)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmvmCost {
    /// Arrival of the last input segment.
    pub inbound_io: f64,
    /// One plane's PIM operation.
    pub pim: f64,
    /// Tail from the last PIM completion to the last output transfer.
    pub outbound_io: f64,
    pub total: f64,
    /// PIM energy summed over all tiles.
    pub energy: f64,
}

/// Per-tile timing and sizes of a sMVM on `cfg` planes.
pub fn mvm_spec(topo: &FlashTopology, cfg: &PlaneConfig, tech: &TechParams) -> Result<MvmSpec> {
    let ucols = unit_cols(cfg);
    Ok(MvmSpec {
        pim_s: tech::pim_latency(cfg, tech, DEFAULT_B_INPUT)?.total,
        seg_bytes: UNIT_ROWS as u64 * topo.in_bytes_per_value as u64,
        tile_out_bytes: ucols as u64 * topo.out_bytes_per_value as u64,
        tile_out_elems: ucols as u64,
    })
}

/// Cost of an explicit tile placement.
pub fn cost_tasks(
    tasks: &[TileTask],
    topo: &FlashTopology,
    cfg: &PlaneConfig,
    tech: &TechParams,
    trace: bool,
) -> Result<(SmvmCost, Vec<TransferEvent>)> {
    let spec = mvm_spec(topo, cfg, tech)?;
    let run = interconnect::simulate_mvm(tasks, &spec, topo, trace)?;
    let per_tile = tech::pim_energy(cfg, tech, UNIT_ROWS.min(cfg.n_row), DEFAULT_B_INPUT)?;
    let cost = SmvmCost {
        inbound_io: run.inbound_end,
        pim: spec.pim_s,
        outbound_io: run.completion - run.pim_end,
        total: run.completion,
        energy: per_tile * tasks.len() as f64,
    };
    Ok((cost, run.events))
}

pub fn cost_smvm(plan: &TilingPlan, topo: &FlashTopology, cfg: &PlaneConfig, tech: &TechParams) -> Result<SmvmCost> {
    Ok(cost_tasks(&plan.tasks(topo), topo, cfg, tech, false)?.0)
}

/// Lowest-latency plan; ties go to the smaller text form.
pub fn best_plan(
    m: u32,
    n: u32,
    topo: &FlashTopology,
    cfg: &PlaneConfig,
    tech: &TechParams,
) -> Result<(TilingPlan, SmvmCost)> {
    let plans = enumerate_plans(m, n, topo, cfg)?;
    tech.validate()?;
    let costed: Vec<(TilingPlan, SmvmCost)> = plans
        .into_par_iter()
        .map(|p| {
            let c = cost_smvm(&p, topo, cfg, tech)?;
            Ok((p, c))
        })
        .collect::<Result<_>>()?;
    costed
        .into_iter()
        .min_by(|a, b| a.1.total.total_cmp(&b.1.total).then_with(|| a.0.to_string().cmp(&b.0.to_string())))
        .ok_or_else(|| Error::Infeasible(format!("{m}x{n}")))
}

/// Lowest-latency plan among those with the given method letters, e.g. `C/C/R/R`.
pub fn best_plan_with_notation(
    notation: &str,
    m: u32,
    n: u32,
    topo: &FlashTopology,
    cfg: &PlaneConfig,
    tech: &TechParams,
) -> Result<(TilingPlan, SmvmCost)> {
    let plans: Vec<_> = enumerate_plans(m, n, topo, cfg)?.into_iter().filter(|p| p.notation() == notation).collect();
    let mut best: Option<(TilingPlan, SmvmCost)> = None;
    for p in plans {
        let c = cost_smvm(&p, topo, cfg, tech)?;
        if best.as_ref().is_none_or(|b| c.total < b.1.total) {
            best = Some((p, c));
        }
    }
    best.ok_or_else(|| Error::Infeasible(format!("no {notation} plan for {m}x{n}")))
}

// ---------------------------------------------------------------------------
// Functional tiled MVM

/// Ideal-ADC outputs of every unit tile of `weights` (`M x N`) against `x`.
/// Edge tiles are zero padded. Indexed `[row_tile][col_tile]`.
pub struct TilePartials {
    pub rows: u32,
    pub cols: u32,
    pub unit_cols: u32,
    pub n: usize,
    partials: Vec<Vec<Vec<i64>>>,
}

pub fn tile_partials(weights: ArrayView2<'_, u8>, x: &[u8], unit_cols: u32, adc: &AdcModel) -> Result<TilePartials> {
    let (m, n) = weights.dim();
    if x.len() != m {
        return Err(Error::Dimension(format!("input length {} != {m} weight rows", x.len())));
    }
    let (rows, cols) = tile_grid(m as u32, n as u32, unit_cols);
    let (ur, uc) = (UNIT_ROWS as usize, unit_cols as usize);
    let mut partials = Vec::with_capacity(rows as usize);
    for r in 0..rows as usize {
        let mut xin = vec![0u8; ur];
        for (i, v) in xin.iter_mut().enumerate() {
            if let Some(&xv) = x.get(r * ur + i) {
                *v = xv;
            }
        }
        let xin = InputVector::from_u8(&xin);
        let mut row = Vec::with_capacity(cols as usize);
        for c in 0..cols as usize {
            let tile = Array2::from_shape_fn((ur, uc), |(i, j)| {
                weights.get((r * ur + i, c * uc + j)).copied().unwrap_or(0)
            });
            row.push(pim::pim_dot_product(&pim::pack_weights_u8(tile.view()), &xin, adc)?);
        }
        partials.push(row);
    }
    Ok(TilePartials { rows, cols, unit_cols, n, partials })
}

/// Compose tile partials through the plan's placement: partials of one column
/// group are added, groups are concatenated. Fails on unmapped or duplicated tiles.
pub fn compose(plan: &TilingPlan, parts: &TilePartials, topo: &FlashTopology) -> Result<Vec<i64>> {
    if plan.row_tiles() != parts.rows || plan.col_tiles() != parts.cols || plan.unit_cols != parts.unit_cols {
        return Err(Error::Dimension(format!("plan {plan} does not match a {}x{} tile grid", parts.rows, parts.cols)));
    }
    let uc = parts.unit_cols as usize;
    let mut seen = vec![false; (parts.rows * parts.cols) as usize];
    let mut placed = std::collections::HashSet::new();
    let mut out = vec![0i64; parts.cols as usize * uc];
    for t in plan.tasks(topo) {
        if !placed.insert((t.channel, t.die, t.plane)) {
            return Err(Error::InvalidConfig(format!("plan {plan} puts two tiles on one plane")));
        }
        let id = (t.col_group * parts.rows + t.row_seg) as usize;
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::InvalidConfig(format!("plan {plan} maps tile ({}, {}) twice", t.row_seg, t.col_group)));
        }
        let p = &parts.partials[t.row_seg as usize][t.col_group as usize];
        for (o, v) in out[t.col_group as usize * uc..].iter_mut().zip(p) {
            *o += v;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidConfig(format!("plan {plan} leaves tiles unmapped")));
    }
    out.truncate(parts.n);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Attention products on SLC dies

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmvmKind {
    Qkt,
    Sv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttentionShape {
    pub seq_len: u32,
    pub d_head: u32,
    pub n_heads: u32,
    /// Decoder blocks sharing the SLC dies, for the capacity check.
    pub n_blocks: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DmvmMapping {
    pub kind: DmvmKind,
    pub heads_per_die: u32,
    pub seq_len: u32,
    pub d_head: u32,
    pub plane_pairs: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DmvmCost {
    pub inbound_io: f64,
    /// Reading K or V pages; replaces the PIM stage.
    pub kv_read: f64,
    pub rpu: f64,
    pub outbound_io: f64,
    pub total: f64,
}

/// Bytes of one element for attention operands handled by RPUs.
const RPU_OPERAND_BYTES: u64 = 2;
/// Bytes of one RPU accumulator value.
const RPU_ACC_BYTES: u64 = 4;
/// Bytes of one cached K or V element.
const KV_BYTES: u64 = 1;

fn dmvm_mapping(kind: DmvmKind, shape: &AttentionShape, topo: &FlashTopology, cfg: &PlaneConfig) -> Result<DmvmMapping> {
    topo.validate()?;
    cfg.validate()?;
    if shape.seq_len == 0 || shape.d_head == 0 || shape.n_heads == 0 || shape.n_blocks == 0 {
        return Err(Error::Precondition(format!("attention shape must be positive: {shape:?}")));
    }
    if topo.slc_dies() == 0 {
        return Err(Error::Capacity("topology has no SLC dies for the KV cache".into()));
    }
    let heads_per_die = shape.n_heads.div_ceil(topo.slc_dies());
    if heads_per_die > 2 {
        return Err(Error::Capacity(format!(
            "{} heads over {} SLC dies needs {heads_per_die} heads per die (max 2)",
            shape.n_heads,
            topo.slc_dies()
        )));
    }
    let slc = cfg.with_bits_per_cell(1);
    let die_bytes = slc.capacity_bytes() * topo.n_plane as u64;
    let need = shape.n_blocks as u64 * heads_per_die as u64 * 2 * shape.seq_len as u64 * shape.d_head as u64 * KV_BYTES;
    if need > die_bytes {
        return Err(Error::Capacity(format!(
            "KV cache of {need} B per SLC die exceeds {die_bytes} B at L = {}",
            shape.seq_len
        )));
    }
    let plane_pairs = (topo.n_plane / 2 / heads_per_die).max(1);
    Ok(DmvmMapping { kind, heads_per_die, seq_len: shape.seq_len, d_head: shape.d_head, plane_pairs })
}

struct DmvmTimes {
    rows_per_pair: u64,
    kv_read: f64,
    rpu: f64,
    heads_per_channel: u64,
    depth: u32,
}

fn dmvm_times(map: &DmvmMapping, shape: &AttentionShape, topo: &FlashTopology, cfg: &PlaneConfig, tech: &TechParams) -> Result<DmvmTimes> {
    let slc = cfg.with_bits_per_cell(1);
    let rows_per_pair = (shape.seq_len as u64).div_ceil(map.plane_pairs as u64);
    let pages = (rows_per_pair * shape.d_head as u64 * KV_BYTES).div_ceil(slc.page_bytes().max(1));
    let kv_read = pages as f64 * tech::page_read_latency(&slc, tech)?;
    let rpu = topo.rpu_time(rows_per_pair * shape.d_head as u64);
    let active_pairs = (shape.seq_len as u64).min(map.plane_pairs as u64);
    Ok(DmvmTimes {
        rows_per_pair,
        kv_read,
        rpu,
        heads_per_channel: (shape.n_heads as u64).div_ceil(topo.n_channel as u64),
        depth: (active_pairs as u32).next_power_of_two().trailing_zeros(),
    })
}

/// Store-and-forward time of a tree whose leaf payload doubles per level.
fn concat_tree_time(leaf_bytes: u64, depth: u32, topo: &FlashTopology) -> f64 {
    (0..depth).map(|l| topo.transfer_time(leaf_bytes << l)).sum()
}

/// `q K^T` for one decoding step. `q` is broadcast down each head's tree;
/// every plane pair multiplies it against its share of K rows in the RPU.
pub fn map_qkt(
    shape: &AttentionShape,
    topo: &FlashTopology,
    cfg: &PlaneConfig,
    tech: &TechParams,
) -> Result<(DmvmMapping, DmvmCost)> {
    let map = dmvm_mapping(DmvmKind::Qkt, shape, topo, cfg)?;
    let t = dmvm_times(&map, shape, topo, cfg, tech)?;
    let d_h = shape.d_head as u64;
    // New q, k and v of every head on the channel, then q down the tree.
    let vec_bytes = d_h * RPU_OPERAND_BYTES;
    let inbound = topo.transfer_time(3 * vec_bytes * t.heads_per_channel) + t.depth as f64 * topo.transfer_time(vec_bytes);
    let tree = concat_tree_time(t.rows_per_pair * RPU_ACC_BYTES, t.depth, topo);
    let channel = topo.transfer_time(shape.seq_len as u64 * RPU_ACC_BYTES * t.heads_per_channel);
    let outbound = tree + channel;
    let cost = DmvmCost {
        inbound_io: inbound,
        kv_read: t.kv_read,
        rpu: t.rpu,
        outbound_io: outbound,
        total: inbound + t.kv_read + t.rpu + outbound,
    };
    Ok((map, cost))
}

/// `S V` for one decoding step. Score elements are scattered to the plane
/// pairs holding the matching V rows; scaled rows are added up the tree.
pub fn map_sv(
    shape: &AttentionShape,
    topo: &FlashTopology,
    cfg: &PlaneConfig,
    tech: &TechParams,
) -> Result<(DmvmMapping, DmvmCost)> {
    let map = dmvm_mapping(DmvmKind::Sv, shape, topo, cfg)?;
    let t = dmvm_times(&map, shape, topo, cfg, tech)?;
    let d_h = shape.d_head as u64;
    let channel_in = topo.transfer_time(shape.seq_len as u64 * RPU_OPERAND_BYTES * t.heads_per_channel);
    let scatter = concat_tree_time(t.rows_per_pair * RPU_OPERAND_BYTES, t.depth, topo);
    let inbound = channel_in + scatter;
    let out_bytes = d_h * RPU_ACC_BYTES;
    let tree = t.depth as f64 * topo.transfer_time(out_bytes);
    let outbound = tree + topo.transfer_time(out_bytes * t.heads_per_channel);
    let cost = DmvmCost {
        inbound_io: inbound,
        kv_read: t.kv_read,
        rpu: t.rpu,
        outbound_io: outbound,
        total: inbound + t.kv_read + t.rpu + outbound,
    };
    Ok((map, cost))
}

fn pair_ranges(len: usize, pairs: u32) -> impl Iterator<Item = std::ops::Range<usize>> {
    let per = len.div_ceil(pairs as usize).max(1);
    (0..len).step_by(per).map(move |s| s..(s + per).min(len))
}

/// Functional `q K^T`: each pair's RPU produces dot products for its K rows,
/// the tree concatenates them.
pub fn qkt_functional(map: &DmvmMapping, q: &[i8], k: ArrayView2<'_, i8>) -> Result<Vec<i32>> {
    if k.ncols() != q.len() || k.nrows() != map.seq_len as usize {
        return Err(Error::Dimension(format!("q has {} values, K is {:?}", q.len(), k.dim())));
    }
    let q16: Vec<i16> = q.iter().map(|&v| v as i16).collect();
    let mut scores = Vec::with_capacity(k.nrows());
    for range in pair_ranges(k.nrows(), map.plane_pairs) {
        for row in range {
            let kr: Vec<i16> = k.row(row).iter().map(|&v| v as i16).collect();
            scores.push(interconnect::rpu_dot(&q16, &kr)?);
        }
    }
    Ok(scores)
}

/// Functional `S V`: each pair scales and sums its V rows, the tree adds
/// the pair results in ALU mode.
pub fn sv_functional(map: &DmvmMapping, s: &[i16], v: ArrayView2<'_, i8>) -> Result<Vec<i64>> {
    if v.nrows() != s.len() || s.len() != map.seq_len as usize {
        return Err(Error::Dimension(format!("S has {} values, V is {:?}", s.len(), v.dim())));
    }
    let d = v.ncols();
    let op = interconnect::RpuOp::alu(d);
    let mut level: Vec<Vec<i64>> = Vec::new();
    for range in pair_ranges(s.len(), map.plane_pairs) {
        let mut acc = vec![0i64; d];
        for row in range {
            let vr: Vec<i16> = v.row(row).iter().map(|&x| x as i16).collect();
            let scaled: Vec<i64> = interconnect::rpu_scale(s[row], &vr).into_iter().map(i64::from).collect();
            acc = interconnect::rpu_apply(&op, &acc, Some(&scaled))?;
        }
        level.push(acc);
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            next.push(match pair {
                [a, b] => interconnect::rpu_apply(&op, a, Some(b))?,
                [a] => interconnect::rpu_apply(&interconnect::RpuOp::stream(d), a, None)?,
                _ => unreachable!(),
            });
        }
        level = next;
    }
    Ok(level.pop().unwrap_or_else(|| vec![0; d]))
}
