use flashpim_oracles as common;

use flashpim::interconnect::{self, BusTopology, EventKind, FlashTopology, MvmSpec, RpuOp};
use flashpim::tech::{self, PlaneConfig, TechParams};
use flashpim::tiling;
use proptest::prelude::*;

fn topo_with(bus: f64) -> FlashTopology {
    FlashTopology { bus_bytes_per_sec: bus, ..FlashTopology::default() }
}

fn csv_of(events: &[interconnect::TransferEvent]) -> Vec<u8> {
    let mut buf = Vec::new();
    interconnect::write_trace_csv(events, &mut buf).unwrap();
    buf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn htree_reduce_is_never_slower(n in 2u32..=256, pim in 1e-8f64..1e-4, bytes in 1u64..=4096, bus in 1e8f64..1e10) {
        let t = topo_with(bus);
        let shared = interconnect::simulate_shared_bus(n, pim, bytes, &t).unwrap();
        let tree = interconnect::simulate_htree(n, pim, bytes, &t, true).unwrap();
        prop_assert!(tree <= shared, "tree {tree} > shared {shared}");
    }

    #[test]
    fn bytes_are_conserved(n in 1u32..=256, pim in 1e-8f64..1e-4, bytes in 1u64..=4096) {
        let t = FlashTopology::default();
        let r = interconnect::simulate_htree_traced(n, pim, bytes, &t, true).unwrap();
        prop_assert_eq!(r.bytes_out, bytes);
        let s = interconnect::simulate_htree_traced(n, pim, bytes, &t, false).unwrap();
        prop_assert_eq!(s.bytes_out, n as u64 * bytes);
        let (_, ev) = interconnect::simulate_shared_bus_traced(n, pim, bytes, &t).unwrap();
        let out: u64 = ev.iter().filter(|e| e.kind == EventKind::Outbound).map(|e| e.bytes).sum();
        prop_assert_eq!(out, n as u64 * bytes);
    }

    #[test]
    fn pipelines_respect_their_bounds(n in 1u32..=256, pim in 1e-8f64..1e-4, bytes in 1u64..=4096) {
        let t = FlashTopology::default();
        let io = t.transfer_time(bytes);
        let depth = n.next_power_of_two().trailing_zeros() as f64;
        let eps = 1e-12 * (pim + n as f64 * io);

        let shared = interconnect::simulate_shared_bus(n, pim, bytes, &t).unwrap();
        prop_assert!(shared <= pim + n as f64 * io + eps);
        prop_assert!(shared + eps >= pim.max(n as f64 * io));

        let tree = interconnect::simulate_htree(n, pim, bytes, &t, true).unwrap();
        prop_assert!(tree <= pim + n as f64 * io + depth * io + eps);
        prop_assert!(tree + eps >= pim.max(io));
    }

    #[test]
    fn tiled_mvm_conserves_bytes(rows in 1u32..=16, cols in 1u32..=16) {
        let t = FlashTopology::default();
        let spec = MvmSpec { pim_s: 2e-6, seg_bytes: 128, tile_out_bytes: 512, tile_out_elems: 512 };
        let tasks = interconnect::single_die_tasks(rows, cols, t.n_plane);
        let tree = interconnect::simulate_mvm(&tasks, &spec, &t, false).unwrap();
        prop_assert_eq!(tree.bytes_in, rows as u64 * spec.seg_bytes);
        prop_assert_eq!(tree.bytes_out, cols as u64 * spec.tile_out_bytes);
        let shared_t = FlashTopology { bus_topology: BusTopology::Shared, ..t };
        let shared = interconnect::simulate_mvm(&tasks, &spec, &shared_t, false).unwrap();
        prop_assert_eq!(shared.bytes_out, (rows * cols) as u64 * spec.tile_out_bytes);
        prop_assert!(tree.completion >= tree.pim_end && tree.pim_end >= tree.inbound_end);
    }

    #[test]
    fn rpu_accumulates_like_a_wide_oracle(seed in any::<u64>()) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let a: Vec<i16> = (0..1024).map(|_| r.gen_range(-1024..=1024)).collect();
        let b: Vec<i16> = (0..1024).map(|_| r.gen_range(-1024..=1024)).collect();
        let want: i128 = a.iter().zip(&b).map(|(&x, &y)| x as i128 * y as i128).sum();
        prop_assert_eq!(interconnect::rpu_dot(&a, &b).unwrap() as i128, want);

        let op = RpuOp::alu(1024);
        let scaled: Vec<i64> = interconnect::rpu_scale(a[0], &b).into_iter().map(i64::from).collect();
        let acc = interconnect::rpu_apply(&op, &vec![0; 1024], Some(&scaled)).unwrap();
        let acc = interconnect::rpu_apply(&op, &acc, Some(&scaled)).unwrap();
        for (got, &y) in acc.iter().zip(&b) {
            prop_assert_eq!(*got as i128, 2 * a[0] as i128 * y as i128);
        }
    }
}

#[test]
fn rpu_overflow_is_reported() {
    let a = vec![i16::MAX; 1024];
    assert!(matches!(interconnect::rpu_dot(&a, &a), Err(flashpim::Error::AccumulatorOverflow)));
    let op = RpuOp::alu(1);
    assert!(matches!(
        interconnect::rpu_apply(&op, &[i32::MAX as i64], Some(&[1])),
        Err(flashpim::Error::AccumulatorOverflow)
    ));
    assert_eq!(interconnect::rpu_apply(&RpuOp::stream(2), &[3, 4], None).unwrap(), vec![3, 4]);
    assert!(interconnect::rpu_apply(&op, &[1], None).is_err());
}

#[test]
fn shared_bus_closed_form() {
    // Stagger equal to one transfer keeps the bus busy from the first output on.
    let t = FlashTopology::default();
    let io = t.transfer_time(512);
    for n in [1u32, 2, 16, 64] {
        let got = interconnect::simulate_shared_bus(n, 2e-6, 512, &t).unwrap();
        let want = 2e-6 + n as f64 * io;
        assert!((got - want).abs() < 1e-15, "n = {n}: {got} vs {want}");
    }
}

#[test]
fn replay_is_bit_identical() {
    let tech = TechParams::default();
    let cfg = PlaneConfig::size_a();
    let topo = FlashTopology::default();
    let (plan, _) = tiling::best_plan(4096, 4096, &topo, &cfg, &tech).unwrap();
    let tasks = plan.tasks(&topo);
    let runs: Vec<Vec<u8>> = (0..3).map(|_| csv_of(&tiling::cost_tasks(&tasks, &topo, &cfg, &tech, true).unwrap().1)).collect();
    assert!(runs[0].len() > 100);
    assert!(runs.windows(2).all(|w| w[0] == w[1]));

    let a = interconnect::simulate_htree_traced(64, 2e-6, 512, &topo, true).unwrap();
    let b = interconnect::simulate_htree_traced(64, 2e-6, 512, &topo, true).unwrap();
    assert_eq!(csv_of(&a.events), csv_of(&b.events));
}

#[test]
fn trace_has_expected_header() {
    let text = String::from_utf8(csv_of(&[])).unwrap();
    assert_eq!(text.trim_end(), "event,channel,die,plane,bytes,start_s,end_s");
}

#[test]
fn size_b_planes_compute_faster() {
    let tech = TechParams::default();
    let a = tech::pim_latency(&PlaneConfig::size_a(), &tech, 8).unwrap().total;
    let b = tech::pim_latency(&PlaneConfig::size_b(), &tech, 8).unwrap().total;
    assert!(b < a);
}

#[test]
fn rejects_empty_inputs() {
    let t = FlashTopology::default();
    assert!(interconnect::simulate_shared_bus(0, 1e-6, 1, &t).is_err());
    assert!(interconnect::simulate_htree(0, 1e-6, 1, &t, true).is_err());
    let spec = MvmSpec { pim_s: 1e-6, seg_bytes: 1, tile_out_bytes: 1, tile_out_elems: 1 };
    assert!(interconnect::simulate_mvm(&[], &spec, &t, false).is_err());
    assert!("ring".parse::<BusTopology>().is_err());
}
