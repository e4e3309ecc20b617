use flashpim_oracles as common;

use flashpim::pim::{self, AdcModel, InputVector};
use flashpim::Error;
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Array2<u8>, Vec<u8>)> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(m, n)| {
        (
            proptest::collection::vec(any::<u8>(), m * n).prop_map(move |v| Array2::from_shape_vec((m, n), v).unwrap()),
            proptest::collection::vec(any::<u8>(), m),
        )
    })
}

fn ideal(w: &Array2<u8>, x: &[u8]) -> Vec<i64> {
    pim::pim_dot_product(&pim::pack_weights_u8(w.view()), &InputVector::from_u8(x), &AdcModel::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ideal_adc_matches_integer_oracle((w, x) in matrix(128, 64)) {
        prop_assert_eq!(ideal(&w, &x), common::mvm_oracle(w.view(), &x));
    }

    #[test]
    fn packing_round_trips((w, _) in matrix(64, 64)) {
        let packed = pim::pack_weights_u8(w.view());
        prop_assert_eq!(packed.n_outputs(), w.ncols());
        prop_assert_eq!(packed.cells().ncols(), 2 * w.ncols());
        prop_assert!(packed.cells().iter().all(|&c| c <= 15));
        prop_assert_eq!(packed.unpack(), w.clone());
        let again = pim::WeightArray::from_cells(packed.cells().to_owned()).unwrap();
        prop_assert_eq!(again, packed);
    }

    #[test]
    fn bit_serial_is_linear_in_the_input((w, x) in matrix(128, 32), seed in any::<u64>()) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let a: Vec<u8> = x.iter().map(|&v| r.gen_range(0..=v)).collect();
        let b: Vec<u8> = x.iter().zip(&a).map(|(&v, &p)| v - p).collect();
        let sum: Vec<i64> = ideal(&w, &a).iter().zip(ideal(&w, &b)).map(|(p, q)| p + q).collect();
        prop_assert_eq!(ideal(&w, &x), sum);
    }

    #[test]
    fn nibbles_recombine_with_weight_sixteen((w, x) in matrix(128, 32)) {
        let hi = w.mapv(|v| v & 0xF0);
        let lo = w.mapv(|v| v & 0x0F);
        let hi_only = w.mapv(|v| v >> 4);
        let parts: Vec<i64> = ideal(&hi, &x).iter().zip(ideal(&lo, &x)).map(|(h, l)| h + l).collect();
        prop_assert_eq!(ideal(&w, &x), parts);
        let scaled: Vec<i64> = ideal(&hi_only, &x).iter().map(|v| 16 * v).collect();
        prop_assert_eq!(ideal(&hi, &x), scaled);
    }

    #[test]
    fn quantizer_is_monotone(a in 0u32..4000, d in 0u32..200) {
        let q = AdcModel::quantizing();
        prop_assert!(q.convert(a + d) >= q.convert(a));
    }

    #[test]
    fn quantized_products_stay_within_bound((w, x) in matrix(128, 32)) {
        let q = AdcModel::quantizing();
        let got = pim::pim_dot_product(&pim::pack_weights_u8(w.view()), &InputVector::from_u8(&x), &q).unwrap();
        let bound = pim::quantization_error_bound(&q, 8);
        for (g, e) in got.iter().zip(common::mvm_oracle(w.view(), &x)) {
            prop_assert!((g - e).abs() <= bound, "error {} above bound {bound}", g - e);
        }
    }

    #[test]
    fn signed_weights_match_oracle(m in 1usize..=64, n in 1usize..=16, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let w = Array2::from_shape_fn((m, n), |_| r.gen::<i8>());
        let x: Vec<u8> = (0..m).map(|_| r.gen()).collect();
        let got = pim::pim_dot_product_signed(&pim::pack_weights_signed(w.view()), &InputVector::from_u8(&x), &AdcModel::default()).unwrap();
        let want: Vec<i64> = (0..n).map(|j| (0..m).map(|i| x[i] as i64 * w[[i, j]] as i64).sum()).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn wide_inputs_follow_the_oracle(m in 1usize..=32, n in 1usize..=8, bits in 1u32..=16, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let w = Array2::from_shape_fn((m, n), |_| r.gen::<u8>());
        let x: Vec<u32> = (0..m).map(|_| r.gen_range(0..(1u32 << bits))).collect();
        let got = pim::pim_dot_product(&pim::pack_weights_u8(w.view()), &InputVector::new(x.clone(), bits).unwrap(), &AdcModel::default()).unwrap();
        let want: Vec<i64> = (0..n).map(|j| (0..m).map(|i| x[i] as i64 * w[[i, j]] as i64).sum()).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn quantizer_rounds_half_up_and_clips() {
    let q = AdcModel::quantizing();
    assert_eq!(q.step(), 4);
    assert_eq!(q.convert(0), 0);
    assert_eq!(q.convert(1), 0);
    assert_eq!(q.convert(2), 4);
    assert_eq!(q.convert(6), 8);
    assert_eq!(q.convert(1_000_000), 511 * 4);
}

#[test]
fn activation_limit_is_enforced() {
    let w = Array2::<u8>::zeros((129, 2));
    let x = InputVector::from_u8(&[1u8; 129]);
    let packed = pim::pack_weights_u8(w.view());
    assert!(matches!(
        pim::pim_dot_product(&packed, &x, &AdcModel::default()),
        Err(Error::ActivationLimit { active: 129, limit: 128 })
    ));
    assert!(pim::pim_dot_product_with_limit(&packed, &x, &AdcModel::default(), 256).is_ok());
    assert!(pim::pim_dot_product_with_limit(&packed, &x, &AdcModel::default(), 257).is_err());
}

#[test]
fn rejects_malformed_operands() {
    assert!(pim::pack_weights(Array2::from_elem((2, 2), 256i64).view()).is_err());
    assert!(pim::pack_weights(Array2::from_elem((2, 2), -1i64).view()).is_err());
    assert!(InputVector::new(vec![4], 2).is_err());
    assert!(InputVector::new(vec![1], 0).is_err());
    let packed = pim::pack_weights_u8(Array2::<u8>::zeros((4, 2)).view());
    assert!(matches!(
        pim::pim_dot_product(&packed, &InputVector::from_u8(&[1, 2, 3]), &AdcModel::default()),
        Err(Error::Dimension(_))
    ));
    assert!(pim::WeightArray::from_cells(Array2::from_elem((2, 3), 1u8)).is_err());
    assert!(pim::WeightArray::from_cells(Array2::from_elem((2, 2), 16u8)).is_err());
}

#[test]
fn weight_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(7);
    let w = common::random_u8_matrix(&mut r, 9, 13);
    let raw = dir.path().join("w.bin");
    pim::write_weights_raw(&raw, w.view()).unwrap();
    assert_eq!(pim::read_weights_raw(&raw, 9, 13).unwrap(), w);
    assert!(pim::read_weights_raw(&raw, 9, 14).is_err());
    let csv = dir.path().join("w.csv");
    let wi = w.mapv(i64::from);
    pim::write_weights_csv(&csv, wi.view()).unwrap();
    assert_eq!(pim::read_weights_csv(&csv).unwrap(), wi);
    assert!(pim::read_weights_raw(&dir.path().join("missing.bin"), 1, 1).is_err());
}

#[test]
fn one_sense_per_mux_phase() {
    let x = InputVector::from_u8(&[0u8; 4]);
    let c = pim::pim_cycles(2048, &x, 4).unwrap();
    assert_eq!(c.bit_passes, 8);
    assert_eq!(c.concurrent_columns, 512);
    assert!(pim::pim_cycles(2048, &x, 0).is_err());
}
