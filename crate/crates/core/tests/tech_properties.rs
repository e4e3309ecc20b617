use flashpim_oracles as common;

use approx::assert_relative_eq;
use flashpim::tech::{self, PlaneConfig, TechParams};
use proptest::prelude::*;

fn plane() -> impl Strategy<Value = PlaneConfig> {
    (1u32..=1024, 1u32..=16384, 1u32..=512, prop_oneof![Just(1u8), Just(4u8)])
        .prop_map(|(blocks, c, s, b)| PlaneConfig::new(blocks * 4, c, s, b))
}

fn k_h(tau: f64, t: &TechParams) -> f64 {
    t.horowitz_k * tau * tau.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pim_latency_is_monotone_in_each_dimension(cfg in plane(), b in 1u32..=16, which in 0usize..3, grow in 1u32..=64) {
        let t = TechParams::default();
        let mut bigger = cfg;
        match which {
            0 => bigger.n_row += 4 * grow,
            1 => bigger.n_col += grow,
            _ => bigger.n_stack += grow,
        }
        let a = tech::pim_latency(&cfg, &t, b).unwrap();
        let z = tech::pim_latency(&bigger, &t, b).unwrap();
        prop_assert!(z.total >= a.total);
        prop_assert!(z.t_dec_wl >= a.t_dec_wl && z.t_dec_bls >= a.t_dec_bls && z.t_pre >= a.t_pre);
        prop_assert!(tech::page_read_latency(&bigger, &t).unwrap() >= tech::page_read_latency(&cfg, &t).unwrap());
    }

    #[test]
    fn density_cancels_rows_exactly(cfg in plane(), other_blocks in 1u32..=4096) {
        let t = TechParams::default();
        let moved = PlaneConfig { n_row: other_blocks * 4, ..cfg };
        prop_assert_eq!(tech::cell_density(&cfg, &t).unwrap(), tech::cell_density(&moved, &t).unwrap());
    }

    #[test]
    fn density_matches_first_principles(cfg in plane()) {
        let t = TechParams::default();
        let want = common::density_oracle(
            cfg.n_row as f64, cfg.n_col as f64, cfg.n_stack as f64, cfg.bits_per_cell as f64,
            t.l_cell_per_col, t.l_staircase_per_stack, t.w_per_row,
        );
        let got = tech::cell_density(&cfg, &t).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn horowitz_scales_with_power_one_and_a_half(tau in 1e-15f64..1e-6, k in 1e-3f64..1e3) {
        let t = TechParams::default();
        let a = tech::horowitz_delay(tau, &t).unwrap();
        let b = tech::horowitz_delay(k * tau, &t).unwrap();
        prop_assert!((b - k.powf(1.5) * a).abs() <= 1e-12 * b);
    }

    #[test]
    fn pim_latency_is_affine_in_input_bits(cfg in plane(), b in 1u32..=15) {
        let t = TechParams::default();
        let one = tech::pim_latency(&cfg, &t, b).unwrap();
        let next = tech::pim_latency(&cfg, &t, b + 1).unwrap();
        let pass = next.total - one.total;
        prop_assert!((pass - one.per_bit_pass()).abs() <= 1e-9 * one.total);
    }

    #[test]
    fn pim_energy_is_affine_in_input_bits(cfg in plane(), b in 1u32..=15, rows in 1u32..=128) {
        let t = TechParams::default();
        let rows = rows.min(cfg.n_row);
        let e = tech::energy_components(&cfg, &t, rows).unwrap();
        let got = tech::pim_energy(&cfg, &t, rows, b).unwrap();
        let want = e.e_dec_wl + b as f64 * (e.e_pre + e.e_dec_bls + e.e_sense + e.e_accum);
        prop_assert!((got - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn components_match_closed_form() {
    let t = TechParams::default();
    for cfg in [PlaneConfig::size_a(), PlaneConfig::size_b(), PlaneConfig::conventional()] {
        let (r, c, s) = (cfg.n_row as f64, cfg.n_col as f64, cfg.n_stack as f64);
        let r_bl = t.r_bl_per_row * r;
        let c_bl = t.c_bl_per_row * r;
        let t_pre = k_h(t.r_s * c * t.c_inv, &t) + k_h(r_bl * (c_bl / 2.0 + t.c_string), &t);
        let t_bls = k_h(t.r_bls_per_col * c * t.c_bls_per_col * c / 2.0, &t);
        let t_wl = k_h(t.r_s * (t.c_cell_per_col * c + t.c_stair_per_stack * s), &t);
        let lat = tech::latency_components(&cfg, &t).unwrap();
        assert_relative_eq!(lat.t_pre, t_pre, max_relative = 1e-12);
        assert_relative_eq!(lat.t_dec_bls, t_bls, max_relative = 1e-12);
        assert_relative_eq!(lat.t_dec_wl, t_wl, max_relative = 1e-12);
        let read = t_wl + t_bls.max(t_pre) + t.t_sense + t.t_dis;
        assert_relative_eq!(tech::page_read_latency(&cfg, &t).unwrap(), read, max_relative = 1e-12);
        let pim = t_wl + 8.0 * (t_bls.max(t_pre) + t.t_sense + t.t_accum + t.t_dis);
        assert_relative_eq!(tech::pim_latency(&cfg, &t, 8).unwrap().total, pim, max_relative = 1e-12);
    }
}

#[test]
fn columns_move_density_more_than_stacks_on_the_sweep() {
    let t = TechParams::default();
    let gain = |a: PlaneConfig, b: PlaneConfig| tech::cell_density(&b, &t).unwrap() / tech::cell_density(&a, &t).unwrap();
    let col_axis = [512u32, 1024, 2048, 4096].map(|c| (c, 128));
    let stack_axis = [32u32, 64, 128, 256].map(|s| (1024, s));
    for (c, s) in col_axis.into_iter().chain(stack_axis) {
        let base = PlaneConfig::new(256, c, s, 4);
        let by_col = gain(base, PlaneConfig { n_col: 2 * c, ..base });
        let by_stack = gain(base, PlaneConfig { n_stack: 2 * s, ..base });
        assert!(by_col > by_stack, "{base}: columns x{by_col} vs stacks x{by_stack}");
    }
}

#[test]
fn slc_holds_a_quarter_of_qlc() {
    let t = TechParams::default();
    let q = PlaneConfig::size_a();
    let s = q.with_bits_per_cell(1);
    assert_relative_eq!(tech::cell_density(&s, &t).unwrap() * 4.0, tech::cell_density(&q, &t).unwrap(), max_relative = 1e-12);
    assert_eq!(q.capacity_bytes(), 4 * s.capacity_bytes());
}

#[test]
fn rejects_bad_inputs() {
    let t = TechParams::default();
    assert!(tech::horowitz_delay(-1e-12, &t).is_err());
    assert!(tech::horowitz_delay(f64::NAN, &t).is_err());
    assert!(tech::pim_latency(&PlaneConfig::size_a(), &t, 0).is_err());
    assert!(tech::cell_density(&PlaneConfig::new(0, 1, 1, 4), &t).is_err());
    assert!(tech::cell_density(&PlaneConfig::new(6, 1, 1, 4), &t).is_err());
    assert!(tech::cell_density(&PlaneConfig::new(4, 1, 1, 3), &t).is_err());
}
