//! Bit-exact emulation of the in-plane dot product.
//!
//! An 8-bit weight occupies two adjacent QLC cells on two bitlines: the high
//! nibble on the even BL and the low nibble on the odd BL. Inputs are applied
//! one bit at a time on the BLSs. For every bit pass, each BL sums the cell
//! values of the active rows, the ADC digitises the sum, and the shift adder
//! scales it by `2^b` (and by 16 for high-nibble BLs) before accumulating.
//!
//! Weights are unsigned. Signed W8A8 weights are shifted by a zero point of
//! 128 and the offset term `128 * sum(x)` is removed in the digital domain.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows accumulated per dot product at the default operating point.
pub const DEFAULT_ACTIVATION_LIMIT: usize = 128;
/// Cells per BL beyond which accumulation is unreliable.
pub const MAX_ACTIVATION: usize = 256;
/// Zero point applied to signed 8-bit weights.
pub const WEIGHT_ZERO_POINT: i64 = 128;

const NIBBLE: u32 = 4;
const CELL_MAX: u8 = 15;

/// Weights packed into QLC cells, `n_rows x (2 * n_outputs)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightArray {
    cells: Array2<u8>,
}

impl WeightArray {
    /// Cell grid, one row per string row and two BLs per output.
    pub fn cells(&self) -> ArrayView2<'_, u8> {
        self.cells.view()
    }

    pub fn n_rows(&self) -> usize {
        self.cells.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.cells.ncols() / 2
    }

    /// (high-nibble BL, low-nibble BL) of output `k`.
    pub fn column_pair(k: usize) -> (usize, usize) {
        (2 * k, 2 * k + 1)
    }

    /// Build directly from a cell grid.
    pub fn from_cells(cells: Array2<u8>) -> Result<Self> {
        if cells.ncols() % 2 != 0 {
            return Err(Error::Dimension(format!("cell grid needs an even BL count, got {}", cells.ncols())));
        }
        if let Some(&v) = cells.iter().find(|&&v| v > CELL_MAX) {
            return Err(Error::OutOfRange { what: "QLC cell value", value: v as i64 });
        }
        Ok(Self { cells })
    }

    /// Recover the 8-bit weight matrix, `n_rows x n_outputs`.
    pub fn unpack(&self) -> Array2<u8> {
        Array2::from_shape_fn((self.n_rows(), self.n_outputs()), |(n, k)| {
            let (hi, lo) = Self::column_pair(k);
            (self.cells[(n, hi)] << NIBBLE) | self.cells[(n, lo)]
        })
    }
}

/// Pack an `n_rows x n_outputs` matrix of values in `0..=255`.
pub fn pack_weights(weights: ArrayView2<'_, i64>) -> Result<WeightArray> {
    if let Some(&v) = weights.iter().find(|&&v| !(0..=255).contains(&v)) {
        return Err(Error::OutOfRange { what: "8-bit weight", value: v });
    }
    let (rows, outs) = weights.dim();
    let mut cells = Array2::<u8>::zeros((rows, 2 * outs));
    for ((n, k), &w) in weights.indexed_iter() {
        let (hi, lo) = WeightArray::column_pair(k);
        cells[(n, hi)] = (w >> NIBBLE) as u8;
        cells[(n, lo)] = (w & 0xF) as u8;
    }
    Ok(WeightArray { cells })
}

/// Pack unsigned bytes; cannot fail on range.
pub fn pack_weights_u8(weights: ArrayView2<'_, u8>) -> WeightArray {
    let (rows, outs) = weights.dim();
    let mut cells = Array2::<u8>::zeros((rows, 2 * outs));
    for ((n, k), &w) in weights.indexed_iter() {
        let (hi, lo) = WeightArray::column_pair(k);
        cells[(n, hi)] = w >> NIBBLE;
        cells[(n, lo)] = w & 0xF;
    }
    WeightArray { cells }
}

/// Pack signed weights after adding [`WEIGHT_ZERO_POINT`].
pub fn pack_weights_signed(weights: ArrayView2<'_, i8>) -> WeightArray {
    pack_weights_u8(weights.mapv(|w| (w as i16 + WEIGHT_ZERO_POINT as i16) as u8).view())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputVector {
    values: Vec<u32>,
    bits: u32,
}

impl InputVector {
    pub fn new(values: Vec<u32>, bits: u32) -> Result<Self> {
        if bits == 0 || bits > 16 {
            return Err(Error::OutOfRange { what: "input bit width", value: bits as i64 });
        }
        if let Some(&v) = values.iter().find(|&&v| v >> bits != 0) {
            return Err(Error::OutOfRange { what: "input value", value: v as i64 });
        }
        Ok(Self { values, bits })
    }

    pub fn from_u8(values: &[u8]) -> Self {
        Self { values: values.iter().map(|&v| v as u32).collect(), bits: 8 }
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdcMode {
    Ideal,
    Quantizing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdcModel {
    pub resolution_bits: u32,
    pub mode: AdcMode,
    /// Largest BL sum the converter is scaled for.
    pub full_scale: u32,
}

impl Default for AdcModel {
    fn default() -> Self {
        Self {
            resolution_bits: 9,
            mode: AdcMode::Ideal,
            full_scale: DEFAULT_ACTIVATION_LIMIT as u32 * CELL_MAX as u32,
        }
    }
}

impl AdcModel {
    pub fn quantizing() -> Self {
        Self { mode: AdcMode::Quantizing, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution_bits == 0 || self.resolution_bits > 24 {
            return Err(Error::InvalidConfig(format!("ADC resolution {} out of 1..=24", self.resolution_bits)));
        }
        if self.full_scale == 0 {
            return Err(Error::InvalidConfig("ADC full_scale must be >= 1".into()));
        }
        Ok(())
    }

    /// Quantisation step, `ceil(full_scale / 2^bits)`.
    pub fn step(&self) -> u32 {
        self.full_scale.div_ceil(1 << self.resolution_bits)
    }

    /// Digitised value of one BL sum, in the same units as the sum.
    pub fn convert(&self, sum: u32) -> u32 {
        match self.mode {
            AdcMode::Ideal => sum,
            AdcMode::Quantizing => {
                let step = self.step();
                // Round half up, then clip to the top code.
                let code = ((sum + step / 2) / step).min((1 << self.resolution_bits) - 1);
                code * step
            }
        }
    }
}

fn check_activation(active: usize, limit: usize) -> Result<()> {
    if limit > MAX_ACTIVATION {
        return Err(Error::ActivationLimit { active: limit, limit: MAX_ACTIVATION });
    }
    if active > limit {
        return Err(Error::ActivationLimit { active, limit });
    }
    Ok(())
}

/// Dot products of all outputs against `x` at the default activation limit.
pub fn pim_dot_product(w: &WeightArray, x: &InputVector, adc: &AdcModel) -> Result<Vec<i64>> {
    pim_dot_product_with_limit(w, x, adc, DEFAULT_ACTIVATION_LIMIT)
}

/// As [`pim_dot_product`] with an explicit activation limit (at most 256).
pub fn pim_dot_product_with_limit(
    w: &WeightArray,
    x: &InputVector,
    adc: &AdcModel,
    activation_limit: usize,
) -> Result<Vec<i64>> {
    adc.validate()?;
    if x.len() != w.n_rows() {
        return Err(Error::Dimension(format!(
            "input length {} does not match {} weight rows",
            x.len(),
            w.n_rows()
        )));
    }
    check_activation(x.len(), activation_limit)?;

    let n_bl = w.cells.ncols();
    let mut bl_sum = vec![0u32; n_bl];
    let mut out = vec![0i64; w.n_outputs()];

    for b in 0..x.bits() {
        bl_sum.fill(0);
        for (n, &xv) in x.values().iter().enumerate() {
            if (xv >> b) & 1 == 1 {
                let row = w.cells.row(n);
                let row = row.as_slice().expect("standard layout");
                for (acc, &c) in bl_sum.iter_mut().zip(row) {
                    *acc += c as u32;
                }
            }
        }
        for (k, o) in out.iter_mut().enumerate() {
            let (hi, lo) = WeightArray::column_pair(k);
            let v = ((adc.convert(bl_sum[hi]) as i64) << NIBBLE) + adc.convert(bl_sum[lo]) as i64;
            *o += v << b;
        }
    }
    Ok(out)
}

/// Dot products with signed weights packed by [`pack_weights_signed`].
pub fn pim_dot_product_signed(w: &WeightArray, x: &InputVector, adc: &AdcModel) -> Result<Vec<i64>> {
    let raw = pim_dot_product(w, x, adc)?;
    let offset = WEIGHT_ZERO_POINT * x.values().iter().map(|&v| v as i64).sum::<i64>();
    Ok(raw.into_iter().map(|v| v - offset).collect())
}

/// Worst-case deviation of a quantising ADC from the exact product, per output.
pub fn quantization_error_bound(adc: &AdcModel, b_input: u32) -> i64 {
    let half = (adc.step() / 2) as i64;
    (0..b_input).map(|b| (1i64 << b) * 17 * half).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PimCycles {
    pub bit_passes: u32,
    /// Columns sensed at once in every pass.
    pub concurrent_columns: u32,
}

/// Sensing schedule of one PIM operation. Each 4:1 MUX phase is covered by
/// one `t_sense`.
pub fn pim_cycles(w_cols: u32, x: &InputVector, mux_ratio: u32) -> Result<PimCycles> {
    if mux_ratio == 0 {
        return Err(Error::Precondition("mux_ratio must be >= 1".into()));
    }
    Ok(PimCycles { bit_passes: x.bits(), concurrent_columns: w_cols / mux_ratio })
}

/// Read a row-major matrix of raw bytes (`rows * cols` bytes, no header).
pub fn read_weights_raw(path: &Path, rows: usize, cols: usize) -> Result<Array2<u8>> {
    let mut buf = Vec::with_capacity(rows * cols);
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} holds {} bytes, expected {rows} x {cols}",
            path.display(),
            buf.len()
        )));
    }
    Array2::from_shape_vec((rows, cols), buf).map_err(|e| Error::Dimension(e.to_string()))
}

pub fn write_weights_raw(path: &Path, w: ArrayView2<'_, u8>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for v in w.rows() {
        f.write_all(&v.to_vec())?;
    }
    Ok(())
}

/// Read a headerless CSV of integers, one matrix row per line.
pub fn read_weights_csv(path: &Path) -> Result<Array2<i64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::Dimension(format!("row {rows} has {} fields, expected {c}", rec.len())))
            }
            _ => {}
        }
        for f in rec.iter() {
            data.push(f.parse::<i64>().map_err(|e| Error::Parse(format!("row {rows}: '{f}': {e}")))?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data).map_err(|e| Error::Dimension(e.to_string()))
}

pub fn write_weights_csv(path: &Path, w: ArrayView2<'_, i64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in w.rows() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
