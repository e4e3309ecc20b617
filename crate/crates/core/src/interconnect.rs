//! Data movement inside the flash hierarchy.
//!
//! Planes of a die are linked either by one shared bus or by a binary H-tree
//! whose junctions hold reconfigurable processing units (RPUs). In ALU mode
//! an RPU adds the two partial vectors arriving from below; in stream mode it
//! forwards them. Each die hangs off a channel bus that is shared by all
//! dies of all ways on that channel. Channels run in parallel.
//!
//! The simulator is event driven and single threaded. Every link moves
//! `bus_bytes_per_sec`. H-tree hops are store-and-forward; the RPU adds
//! at `lanes` elements per clock and overlaps the transfer it rides on.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusTopology {
    Shared,
    Htree,
}

impl std::str::FromStr for BusTopology {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Self::Shared),
            "htree" | "h-tree" => Ok(Self::Htree),
            other => Err(Error::Parse(format!("unknown bus topology '{other}' (shared, htree)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlashTopology {
    pub n_channel: u32,
    /// Ways per channel.
    pub n_way: u32,
    /// Dies per way.
    pub n_die: u32,
    /// Planes per die.
    pub n_plane: u32,
    pub bus_bytes_per_sec: f64,
    pub bus_topology: BusTopology,
    pub slc_dies_per_way: u32,
    pub qlc_dies_per_way: u32,
    pub rpu_clock_hz: f64,
    /// Parallel INT16 multipliers per RPU.
    pub rpu_lanes: u32,
    pub in_bytes_per_value: u32,
    pub out_bytes_per_value: u32,
    /// Aggregate SLC program bandwidth of the device.
    pub slc_write_bytes_per_sec: f64,
}

impl Default for FlashTopology {
    fn default() -> Self {
        Self {
            n_channel: 8,
            n_way: 4,
            n_die: 8,
            n_plane: 256,
            bus_bytes_per_sec: 2.0e9,
            bus_topology: BusTopology::Htree,
            slc_dies_per_way: 2,
            qlc_dies_per_way: 6,
            rpu_clock_hz: 250e6,
            rpu_lanes: 8,
            in_bytes_per_value: 1,
            out_bytes_per_value: 1,
            slc_write_bytes_per_sec: 5.9e9,
        }
    }
}

impl FlashTopology {
    /// A typical storage device: 4 dies per way, 2 planes per die, shared buses.
    pub fn conventional() -> Self {
        Self {
            n_die: 4,
            n_plane: 2,
            bus_topology: BusTopology::Shared,
            slc_dies_per_way: 1,
            qlc_dies_per_way: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_channel", self.n_channel),
            ("n_way", self.n_way),
            ("n_die", self.n_die),
            ("n_plane", self.n_plane),
            ("rpu_lanes", self.rpu_lanes),
            ("in_bytes_per_value", self.in_bytes_per_value),
            ("out_bytes_per_value", self.out_bytes_per_value),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [
            ("bus_bytes_per_sec", self.bus_bytes_per_sec),
            ("rpu_clock_hz", self.rpu_clock_hz),
            ("slc_write_bytes_per_sec", self.slc_write_bytes_per_sec),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.slc_dies_per_way + self.qlc_dies_per_way != self.n_die {
            return Err(Error::InvalidConfig(format!(
                "slc_dies_per_way ({}) + qlc_dies_per_way ({}) must equal n_die ({})",
                self.slc_dies_per_way, self.qlc_dies_per_way, self.n_die
            )));
        }
        Ok(())
    }

    pub fn dies_per_channel(&self) -> u32 {
        self.n_way * self.n_die
    }

    pub fn slc_dies(&self) -> u32 {
        self.n_channel * self.n_way * self.slc_dies_per_way
    }

    pub fn qlc_dies(&self) -> u32 {
        self.n_channel * self.n_way * self.qlc_dies_per_way
    }

    /// Seconds to move `bytes` over one link.
    pub fn transfer_time(&self, bytes: u64) -> f64 {
        bytes as f64 / self.bus_bytes_per_sec
    }

    /// Seconds for one RPU to process `elements` values.
    pub fn rpu_time(&self, elements: u64) -> f64 {
        elements.div_ceil(self.rpu_lanes as u64) as f64 / self.rpu_clock_hz
    }

    /// H-tree levels between a plane and the die port.
    pub fn htree_depth(&self) -> u32 {
        self.n_plane.next_power_of_two().trailing_zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Inbound,
    Pim,
    Hop,
    Rpu,
    Outbound,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Inbound => "inbound",
            Self::Pim => "pim",
            Self::Hop => "hop",
            Self::Rpu => "rpu",
            Self::Outbound => "outbound",
        }
    }
}

/// `die` of a channel-wide broadcast; written as `*` in traces.
pub const BROADCAST: u32 = u32::MAX;

/// One timed activity. `plane` is the source plane, the first leaf under an
/// H-tree node for hops, or the input segment for inbound broadcasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferEvent {
    pub kind: EventKind,
    pub channel: u32,
    pub die: u32,
    pub plane: u32,
    pub bytes: u64,
    pub start: f64,
    pub end: f64,
}

/// Write events as `event,channel,die,plane,bytes,start_s,end_s`.
pub fn write_trace_csv<W: Write>(events: &[TransferEvent], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["event", "channel", "die", "plane", "bytes", "start_s", "end_s"])?;
    for e in events {
        wtr.write_record([
            e.kind.as_str().to_string(),
            e.channel.to_string(),
            if e.die == BROADCAST { "*".to_string() } else { e.die.to_string() },
            e.plane.to_string(),
            e.bytes.to_string(),
            format!("{:e}", e.start),
            format!("{:e}", e.end),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// RPU

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpuMode {
    Alu,
    Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpuOp {
    pub mode: RpuMode,
    /// Accumulator width in bits.
    pub operand_width: u32,
    pub vector_len: usize,
}

impl RpuOp {
    pub fn alu(vector_len: usize) -> Self {
        Self { mode: RpuMode::Alu, operand_width: 32, vector_len }
    }

    pub fn stream(vector_len: usize) -> Self {
        Self { mode: RpuMode::Stream, operand_width: 32, vector_len }
    }
}

fn fits(v: i64, width: u32) -> bool {
    let half = 1i64 << (width - 1);
    (-half..half).contains(&v)
}

/// ALU mode adds `a` and `b` elementwise; stream mode returns `a`.
pub fn rpu_apply(op: &RpuOp, a: &[i64], b: Option<&[i64]>) -> Result<Vec<i64>> {
    if !(1..=63).contains(&op.operand_width) {
        return Err(Error::InvalidConfig(format!("RPU operand width {} out of 1..=63", op.operand_width)));
    }
    if a.len() != op.vector_len {
        return Err(Error::Dimension(format!("operand length {} != vector_len {}", a.len(), op.vector_len)));
    }
    match op.mode {
        RpuMode::Stream => Ok(a.to_vec()),
        RpuMode::Alu => {
            let b = b.ok_or_else(|| Error::Precondition("ALU mode needs two operands".into()))?;
            if b.len() != a.len() {
                return Err(Error::Dimension(format!("operand lengths {} and {} differ", a.len(), b.len())));
            }
            a.iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let s = x + y;
                    if fits(x, op.operand_width) && fits(y, op.operand_width) && fits(s, op.operand_width) {
                        Ok(s)
                    } else {
                        Err(Error::AccumulatorOverflow)
                    }
                })
                .collect()
        }
    }
}

/// INT16 vector-vector product with a 32-bit accumulator.
pub fn rpu_dot(a: &[i16], b: &[i16]) -> Result<i32> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("operand lengths {} and {} differ", a.len(), b.len())));
    }
    let mut acc: i32 = 0;
    for (&x, &y) in a.iter().zip(b) {
        acc = acc.checked_add(x as i32 * y as i32).ok_or(Error::AccumulatorOverflow)?;
    }
    Ok(acc)
}

/// INT16 vector-scalar product.
pub fn rpu_scale(s: i16, v: &[i16]) -> Vec<i32> {
    v.iter().map(|&x| s as i32 * x as i32).collect()
}

// ---------------------------------------------------------------------------
// Single-die pipelines with identical planes

/// Completion of `n_planes` identical PIM operations whose outputs share one
/// bus. Plane `i` starts `i` transfer slots after plane 0.
pub fn simulate_shared_bus(n_planes: u32, per_plane_pim: f64, out_bytes_per_plane: u64, topo: &FlashTopology) -> Result<f64> {
    Ok(simulate_shared_bus_traced(n_planes, per_plane_pim, out_bytes_per_plane, topo)?.0)
}

pub fn simulate_shared_bus_traced(
    n_planes: u32,
    per_plane_pim: f64,
    out_bytes_per_plane: u64,
    topo: &FlashTopology,
) -> Result<(f64, Vec<TransferEvent>)> {
    if n_planes == 0 {
        return Err(Error::Precondition("n_planes must be >= 1".into()));
    }
    topo.validate()?;
    let t_io = topo.transfer_time(out_bytes_per_plane);
    let mut events = Vec::with_capacity(2 * n_planes as usize);
    let mut bus = 0.0f64;
    for p in 0..n_planes {
        let start = p as f64 * t_io;
        let done = start + per_plane_pim;
        events.push(TransferEvent { kind: EventKind::Pim, channel: 0, die: 0, plane: p, bytes: 0, start, end: done });
        let s = bus.max(done);
        bus = s + t_io;
        events.push(TransferEvent {
            kind: EventKind::Outbound,
            channel: 0,
            die: 0,
            plane: p,
            bytes: out_bytes_per_plane,
            start: s,
            end: bus,
        });
    }
    Ok((bus, events))
}

/// Completion of `n_planes` identical PIM operations behind an H-tree.
/// With `reduce` the RPUs accumulate, otherwise they stream.
pub fn simulate_htree(
    n_planes: u32,
    per_plane_pim: f64,
    out_bytes_per_plane: u64,
    topo: &FlashTopology,
    reduce: bool,
) -> Result<f64> {
    Ok(simulate_htree_traced(n_planes, per_plane_pim, out_bytes_per_plane, topo, reduce)?.completion)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeRun {
    pub completion: f64,
    /// Bytes leaving the die port.
    pub bytes_out: u64,
    pub events: Vec<TransferEvent>,
}

pub fn simulate_htree_traced(
    n_planes: u32,
    per_plane_pim: f64,
    out_bytes_per_plane: u64,
    topo: &FlashTopology,
    reduce: bool,
) -> Result<TreeRun> {
    if n_planes == 0 {
        return Err(Error::Precondition("n_planes must be >= 1".into()));
    }
    topo.validate()?;
    let leaves = n_planes.next_power_of_two() as usize;
    let mut events = Vec::new();
    // Padding leaves carry nothing.
    let mut level: Vec<(f64, u64, u32)> = (0..leaves)
        .map(|p| {
            if (p as u32) < n_planes {
                events.push(TransferEvent {
                    kind: EventKind::Pim,
                    channel: 0,
                    die: 0,
                    plane: p as u32,
                    bytes: 0,
                    start: 0.0,
                    end: per_plane_pim,
                });
                (per_plane_pim, out_bytes_per_plane, p as u32)
            } else {
                (0.0, 0, p as u32)
            }
        })
        .collect();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len() / 2);
        for pair in level.chunks(2) {
            let mut ready = 0.0f64;
            for &(t, bytes, plane) in pair.iter().filter(|c| c.1 > 0) {
                let end = t + topo.transfer_time(bytes);
                events.push(TransferEvent { kind: EventKind::Hop, channel: 0, die: 0, plane, bytes, start: t, end });
                ready = ready.max(end);
            }
            let bytes = if reduce { pair[0].1.max(pair[1].1) } else { pair[0].1 + pair[1].1 };
            next.push((ready, bytes, pair[0].2));
        }
        level = next;
    }
    let (ready, bytes, plane) = level[0];
    let completion = ready + topo.transfer_time(bytes);
    events.push(TransferEvent { kind: EventKind::Outbound, channel: 0, die: 0, plane, bytes, start: ready, end: completion });
    Ok(TreeRun { completion, bytes_out: bytes, events })
}

// ---------------------------------------------------------------------------
// Tiled MVM across channels

/// One unit tile placed on one plane. `die` counts dies across all ways of the
/// channel. A plane holding several tasks runs them in list order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct TileTask {
    pub channel: u32,
    pub die: u32,
    pub plane: u32,
    /// Input segment the tile consumes.
    pub row_seg: u32,
    /// Output column group the tile produces.
    pub col_group: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvmSpec {
    /// Latency of one PIM operation on one plane.
    pub pim_s: f64,
    /// Bytes of one input segment.
    pub seg_bytes: u64,
    /// Bytes of one tile's output.
    pub tile_out_bytes: u64,
    /// Outputs of one tile, for RPU timing.
    pub tile_out_elems: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MvmTiming {
    /// Arrival of the last input segment at its plane.
    pub inbound_end: f64,
    /// Completion of the last PIM operation.
    pub pim_end: f64,
    pub completion: f64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub events: Vec<TransferEvent>,
}

struct Bus {
    free: f64,
}

impl Bus {
    fn book(&mut self, ready: f64, dur: f64) -> (f64, f64) {
        let s = self.free.max(ready);
        self.free = s + dur;
        (s, self.free)
    }
}

/// Event-driven run of a tiled MVM. Inbound segments are broadcast once per
/// channel in ascending order; a plane starts when its segment has arrived.
pub fn simulate_mvm(tasks: &[TileTask], spec: &MvmSpec, topo: &FlashTopology, trace: bool) -> Result<MvmTiming> {
    topo.validate()?;
    if tasks.is_empty() {
        return Err(Error::Precondition("no tiles to simulate".into()));
    }
    let dies_per_channel = topo.dies_per_channel();
    if let Some(t) = tasks
        .iter()
        .find(|t| t.channel >= topo.n_channel || t.die >= dies_per_channel || t.plane >= topo.n_plane)
    {
        return Err(Error::Precondition(format!("tile placed outside the topology: {t:?}")));
    }

    let mut by_channel: BTreeMap<u32, Vec<&TileTask>> = BTreeMap::new();
    for t in tasks {
        by_channel.entry(t.channel).or_default().push(t);
    }

    let mut out = MvmTiming {
        inbound_end: 0.0,
        pim_end: 0.0,
        completion: 0.0,
        bytes_in: 0,
        bytes_out: 0,
        events: Vec::new(),
    };
    for (&ch, list) in &by_channel {
        simulate_channel(ch, list, spec, topo, trace, &mut out);
    }
    Ok(out)
}

fn simulate_channel(
    ch: u32,
    tasks: &[&TileTask],
    spec: &MvmSpec,
    topo: &FlashTopology,
    trace: bool,
    out: &mut MvmTiming,
) {
    let t_seg = topo.transfer_time(spec.seg_bytes);
    let htree = topo.bus_topology == BusTopology::Htree;
    let depth = topo.htree_depth();
    let mut bus = Bus { free: 0.0 };
    let push = |events: &mut Vec<TransferEvent>, e: TransferEvent| {
        if trace {
            events.push(e);
        }
    };

    let segs: BTreeSet<u32> = tasks.iter().map(|t| t.row_seg).collect();
    let mut arrival = BTreeMap::new();
    for &s in &segs {
        let (start, end) = bus.book(0.0, t_seg);
        out.bytes_in += spec.seg_bytes;
        push(
            &mut out.events,
            TransferEvent { kind: EventKind::Inbound, channel: ch, die: BROADCAST, plane: s, bytes: spec.seg_bytes, start, end },
        );
        let at = if htree { end + depth as f64 * t_seg } else { end };
        out.inbound_end = out.inbound_end.max(at);
        arrival.insert(s, at);
    }

    // PIM on every plane, tasks in order.
    let mut plane_free: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let mut slot_of: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    // (die, slot) -> leaves (plane, ready, col_group)
    let mut waves: BTreeMap<(u32, u32), Vec<(u32, f64, u32)>> = BTreeMap::new();
    let mut requests: Vec<(f64, u32, u32, u64)> = Vec::new();
    for t in tasks {
        let key = (t.die, t.plane);
        let free = plane_free.get(&key).copied().unwrap_or(0.0);
        let start = free.max(arrival[&t.row_seg]);
        let end = start + spec.pim_s;
        plane_free.insert(key, end);
        out.pim_end = out.pim_end.max(end);
        push(
            &mut out.events,
            TransferEvent { kind: EventKind::Pim, channel: ch, die: t.die, plane: t.plane, bytes: 0, start, end },
        );
        let slot = slot_of.entry(key).or_insert(0);
        if htree {
            waves.entry((t.die, *slot)).or_default().push((t.plane, end, t.col_group));
        } else {
            requests.push((end, t.die, t.plane, spec.tile_out_bytes));
        }
        *slot += 1;
    }

    for (&(die, _), leaves) in &waves {
        let (ready, groups, first) = reduce_tree(ch, die, leaves, spec, topo, &mut |e| push(&mut out.events, e));
        requests.push((ready, die, first, groups * spec.tile_out_bytes));
    }

    requests.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (ready, die, plane, bytes) in requests {
        let (start, end) = bus.book(ready, topo.transfer_time(bytes));
        out.bytes_out += bytes;
        push(&mut out.events, TransferEvent { kind: EventKind::Outbound, channel: ch, die, plane, bytes, start, end });
    }
    out.completion = out.completion.max(bus.free).max(out.pim_end);
}

/// Store-and-forward H-tree over one die. Children carrying the same column
/// group are added by the RPU; different groups are concatenated.
/// Returns (root ready time, column groups at the root, first leaf).
fn reduce_tree(
    ch: u32,
    die: u32,
    leaves: &[(u32, f64, u32)],
    spec: &MvmSpec,
    topo: &FlashTopology,
    emit: &mut dyn FnMut(TransferEvent),
) -> (f64, u64, u32) {
    type Node = Option<(f64, BTreeSet<u32>, u32)>;
    let width = topo.n_plane.next_power_of_two() as usize;
    let mut level: Vec<Node> = vec![None; width];
    for &(plane, ready, group) in leaves {
        level[plane as usize] = Some((ready, BTreeSet::from([group]), plane));
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len() / 2);
        for pair in level.chunks(2) {
            let kids: Vec<_> = pair.iter().flatten().collect();
            if kids.is_empty() {
                next.push(None);
                continue;
            }
            let mut ready = 0.0f64;
            let mut groups = BTreeSet::new();
            for (t, g, plane) in &kids {
                let bytes = g.len() as u64 * spec.tile_out_bytes;
                let end = t + topo.transfer_time(bytes);
                emit(TransferEvent { kind: EventKind::Hop, channel: ch, die, plane: *plane, bytes, start: *t, end });
                ready = ready.max(end);
                groups.extend(g.iter().copied());
            }
            if kids.len() == 2 && !kids[0].1.is_disjoint(&kids[1].1) {
                let shared = kids[0].1.intersection(&kids[1].1).count() as u64;
                let elems = shared * spec.tile_out_elems;
                let start = kids[0].0.max(kids[1].0);
                emit(TransferEvent {
                    kind: EventKind::Rpu,
                    channel: ch,
                    die,
                    plane: kids[0].2,
                    bytes: 0,
                    start,
                    end: start + topo.rpu_time(elems),
                });
            }
            next.push(Some((ready, groups, kids[0].2)));
        }
        level = next;
    }
    let (ready, groups, first) = level.pop().flatten().expect("at least one leaf");
    (ready, groups.len() as u64, first)
}

/// Shared bus against H-tree for one MVM on a single die. Tiles take planes
/// column-group-major so that row tiles of one group are siblings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusComparison {
    pub shared_s: f64,
    pub htree_s: f64,
    /// `1 - htree / shared`.
    pub reduction: f64,
}

pub fn single_die_tasks(row_tiles: u32, col_tiles: u32, n_plane: u32) -> Vec<TileTask> {
    (0..row_tiles * col_tiles)
        .map(|i| {
            let (c, s) = (i / row_tiles, i % row_tiles);
            TileTask { channel: 0, die: 0, plane: i % n_plane, row_seg: s, col_group: c }
        })
        .collect()
}

pub fn compare_buses(row_tiles: u32, col_tiles: u32, spec: &MvmSpec, topo: &FlashTopology) -> Result<BusComparison> {
    let tasks = single_die_tasks(row_tiles, col_tiles, topo.n_plane);
    let shared = FlashTopology { bus_topology: BusTopology::Shared, ..topo.clone() };
    let tree = FlashTopology { bus_topology: BusTopology::Htree, ..topo.clone() };
    let shared_s = simulate_mvm(&tasks, spec, &shared, false)?.completion;
    let htree_s = simulate_mvm(&tasks, spec, &tree, false)?.completion;
    Ok(BusComparison { shared_s, htree_s, reduction: 1.0 - htree_s / shared_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn topo() -> FlashTopology {
        FlashTopology::default()
    }

    #[test]
    fn defaults_are_consistent() {
        topo().validate().unwrap();
        FlashTopology::conventional().validate().unwrap();
        let bad = FlashTopology { slc_dies_per_way: 3, ..topo() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn slot_of_128_bytes_is_64ns() {
        assert_relative_eq!(topo().transfer_time(128), 64e-9, max_relative = 1e-12);
    }

    #[test]
    fn single_plane_cases() {
        let t = topo();
        let s = simulate_shared_bus(1, 2e-6, 512, &t).unwrap();
        assert_relative_eq!(s, 2e-6 + 256e-9, max_relative = 1e-12);
        assert_eq!(simulate_htree(1, 2e-6, 512, &t, true).unwrap(), s);
        assert!(simulate_shared_bus(0, 1.0, 1, &t).is_err());
    }

    #[test]
    fn shared_bus_closed_form() {
        let t = topo();
        let n = 64;
        let t_io = t.transfer_time(512);
        let got = simulate_shared_bus(n, 2e-6, 512, &t).unwrap();
        assert_relative_eq!(got, 2e-6 + n as f64 * t_io, max_relative = 1e-12);
        assert!(got >= (2e-6f64).max(n as f64 * t_io));
    }

    #[test]
    fn htree_conservation_and_padding() {
        let t = topo();
        let red = simulate_htree_traced(6, 1e-6, 100, &t, true).unwrap();
        assert_eq!(red.bytes_out, 100);
        let str_ = simulate_htree_traced(6, 1e-6, 100, &t, false).unwrap();
        assert_eq!(str_.bytes_out, 600);
        // 6 planes pad to 8: three reduced hops plus the port.
        assert_relative_eq!(red.completion, 1e-6 + 4.0 * t.transfer_time(100), max_relative = 1e-12);
    }

    #[test]
    fn rpu_modes() {
        assert_eq!(rpu_apply(&RpuOp::alu(2), &[1, 2], Some(&[3, 4])).unwrap(), vec![4, 6]);
        assert_eq!(rpu_apply(&RpuOp::stream(3), &[7, 8, 9], None).unwrap(), vec![7, 8, 9]);
        assert!(matches!(rpu_apply(&RpuOp::alu(1), &[i32::MAX as i64], Some(&[1])), Err(Error::AccumulatorOverflow)));
        assert!(rpu_apply(&RpuOp::alu(1), &[1], None).is_err());
        assert!(rpu_apply(&RpuOp::alu(2), &[1], Some(&[1])).is_err());
        assert_eq!(rpu_dot(&[1, -2, 3], &[4, 5, -6]).unwrap(), 4 - 10 - 18);
        assert_eq!(rpu_scale(-3, &[1, 2]), vec![-3, -6]);
    }

    #[test]
    fn rpu_keeps_pace_with_bus() {
        let t = topo();
        // 512 one-byte outputs: the adder needs no longer than the link.
        assert!(t.rpu_time(512) <= t.transfer_time(512) + 1e-15);
    }

    #[test]
    fn mvm_single_tile() {
        let t = topo();
        let spec = MvmSpec { pim_s: 2e-6, seg_bytes: 128, tile_out_bytes: 512, tile_out_elems: 512 };
        let tasks = [TileTask { channel: 0, die: 0, plane: 0, row_seg: 0, col_group: 0 }];
        let shared = FlashTopology { bus_topology: BusTopology::Shared, ..t.clone() };
        let r = simulate_mvm(&tasks, &spec, &shared, true).unwrap();
        assert_relative_eq!(r.completion, 64e-9 + 2e-6 + 256e-9, max_relative = 1e-12);
        assert_eq!(r.bytes_in, 128);
        assert_eq!(r.bytes_out, 512);
    }

    #[test]
    fn mvm_rejects_out_of_range_tiles() {
        let spec = MvmSpec { pim_s: 1e-6, seg_bytes: 1, tile_out_bytes: 1, tile_out_elems: 1 };
        let tasks = [TileTask { channel: 8, die: 0, plane: 0, row_seg: 0, col_group: 0 }];
        assert!(simulate_mvm(&tasks, &spec, &topo(), false).is_err());
        assert!(simulate_mvm(&[], &spec, &topo(), false).is_err());
    }

    #[test]
    fn trace_csv_header() {
        let (_, ev) = simulate_shared_bus_traced(2, 1e-6, 8, &topo()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&ev, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("event,channel,die,plane,bytes,start_s,end_s\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
