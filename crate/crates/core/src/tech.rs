//! Analytical device model of one 3D NAND plane.
//!
//! Resistances and capacitances are derived from the plane geometry
//! (`rows x columns x stacks`) and fed into a Horowitz-style delay
//! `h(tau) = k * tau^1.5`. From the component latencies we build the
//! page-read latency and the bit-serial PIM latency, the per-operation
//! energies, and the areal cell density.
//!
//! Everything here is SI (ohm, farad, second, joule, metre). Reporting
//! helpers convert to us / nJ / Gb/mm^2 where needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strings (BLSs) sharing one block.
pub const ROWS_PER_BLOCK: u32 = 4;

/// Bits in one "Gb" when reporting density. Density and area figures are
/// quoted against 2^30 bits.
pub const BITS_PER_GB: f64 = (1u64 << 30) as f64;

/// Geometry of one plane: `n_row x n_col x n_stack` cells, `bits_per_cell` each.
/// Fields missing from a config table are taken from [`PlaneConfig::size_a`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneConfig {
    /// Number of bitline-select lines (rows of strings).
    pub n_row: u32,
    /// Number of bitlines (page width in bits).
    pub n_col: u32,
    /// Vertically stacked wordline layers.
    pub n_stack: u32,
    /// 1 for SLC, 4 for QLC.
    pub bits_per_cell: u8,
}

impl PlaneConfig {
    pub const fn new(n_row: u32, n_col: u32, n_stack: u32, bits_per_cell: u8) -> Self {
        Self { n_row, n_col, n_stack, bits_per_cell }
    }

    /// The selected PIM plane, 256 x 2048 x 128 QLC.
    pub const fn size_a() -> Self {
        Self::new(256, 2048, 128, 4)
    }

    /// The smaller comparison plane, 256 x 1024 x 64 QLC.
    pub const fn size_b() -> Self {
        Self::new(256, 1024, 64, 4)
    }

    /// A conventional storage plane: 1400 blocks of 4 rows, 4 KB pages, 128 stacks.
    pub const fn conventional() -> Self {
        Self::new(ROWS_PER_BLOCK * 1400, 32768, 128, 4)
    }

    pub fn with_bits_per_cell(self, bits_per_cell: u8) -> Self {
        Self { bits_per_cell, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_row == 0 || self.n_col == 0 || self.n_stack == 0 {
            return Err(Error::InvalidConfig(format!(
                "plane dimensions must be >= 1, got {}",
                self.label()
            )));
        }
        if self.bits_per_cell != 1 && self.bits_per_cell != 4 {
            return Err(Error::InvalidConfig(format!(
                "bits_per_cell must be 1 (SLC) or 4 (QLC), got {}",
                self.bits_per_cell
            )));
        }
        if self.n_row % ROWS_PER_BLOCK != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_row = {} is not a multiple of {ROWS_PER_BLOCK} rows per block",
                self.n_row
            )));
        }
        Ok(())
    }

    /// `rows x cols x stacks`, e.g. `256x2048x128`.
    pub fn label(&self) -> String {
        format!("{}x{}x{}", self.n_row, self.n_col, self.n_stack)
    }

    /// Total cells in the plane.
    pub fn cells(&self) -> u64 {
        self.n_row as u64 * self.n_col as u64 * self.n_stack as u64
    }

    /// Bytes stored in the plane.
    pub fn capacity_bytes(&self) -> u64 {
        self.cells() * self.bits_per_cell as u64 / 8
    }

    /// Bytes in one page (one BLS row at one wordline), SLC-equivalent.
    pub fn page_bytes(&self) -> u64 {
        (self.n_col as u64 * self.bits_per_cell as u64) / 8
    }
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self::size_a()
    }
}

impl std::fmt::Display for PlaneConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Per-unit electrical and geometric parameters of the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TechParams {
    /// BL resistance per row of strings (ohm).
    pub r_bl_per_row: f64,
    /// BL capacitance per row of strings (F).
    pub c_bl_per_row: f64,
    /// BLS resistance per bitline crossed (ohm).
    pub r_bls_per_col: f64,
    /// BLS capacitance per bitline crossed (F).
    pub c_bls_per_col: f64,
    /// WL capacitance of the cell region per bitline (F).
    pub c_cell_per_col: f64,
    /// WL capacitance of the staircase per stack layer (F).
    pub c_stair_per_stack: f64,
    /// Load of one string on a BL (F).
    pub c_string: f64,
    /// Gate load of one precharge transistor (F).
    pub c_inv: f64,
    /// On-resistance of a switch / pass transistor (ohm).
    pub r_s: f64,
    pub v_pre: f64,
    pub v_pass: f64,
    pub v_read: f64,
    pub t_sense: f64,
    pub t_dis: f64,
    pub t_accum: f64,
    /// Sensing energy per bitline and pass (J).
    pub e_sense_per_col: f64,
    /// Accumulation energy per bitline and pass at zero MUX load (J).
    pub e_accum_per_col: f64,
    /// Column count at which the MUX load doubles the accumulation energy.
    pub accum_mux_ref_cols: f64,
    /// Horowitz calibration constant (s^-0.5): `h(tau) = k * tau^1.5`.
    pub horowitz_k: f64,
    /// Cell-region length per bitline (m).
    pub l_cell_per_col: f64,
    /// Staircase length per stack layer (m).
    pub l_staircase_per_stack: f64,
    /// Plane width per row of strings (m).
    pub w_per_row: f64,
    /// Fraction of zero input bits at the BLS.
    pub alpha_input: f64,
}

impl Default for TechParams {
    /// Calibrated defaults. These are the output of [`crate::calibrate::calibrate`]
    /// run from [`TechParams::seed`]; `data/tech_default.toml` carries the same
    /// values together with the fit residuals.
    fn default() -> Self {
        Self {
            horowitz_k: 5_951_731.120_883_542,
            r_bl_per_row: 1.824_123_934_317_436,
            c_stair_per_stack: 2e-15,
            w_per_row: 7.427_370_065_469_234e-7,
            ..Self::seed()
        }
    }
}

impl TechParams {
    /// Hand-picked physical starting point before calibration.
    ///
    /// BLS (tungsten) is an order of magnitude lighter than BL (copper);
    /// the staircase step is 64 cell pitches so that `L_stair == L_cell`
    /// at 8K bitlines and 128 stacks.
    pub fn seed() -> Self {
        Self {
            r_bl_per_row: 2.0,
            c_bl_per_row: 0.4e-15,
            r_bls_per_col: 0.2,
            c_bls_per_col: 0.05e-15,
            c_cell_per_col: 0.5e-15,
            c_stair_per_stack: 1.5e-15,
            c_string: 0.5e-15,
            c_inv: 0.06e-15,
            r_s: 2.0e3,
            v_pre: 1.0,
            v_pass: 6.0,
            v_read: 2.0,
            t_sense: 80e-9,
            t_dis: 30e-9,
            t_accum: 20e-9,
            e_sense_per_col: 50e-15,
            e_accum_per_col: 20e-15,
            accum_mux_ref_cols: 2048.0,
            horowitz_k: 5.0e6,
            l_cell_per_col: 10e-9,
            l_staircase_per_stack: 640e-9,
            w_per_row: 0.7e-6,
            alpha_input: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_bl_per_row", self.r_bl_per_row),
            ("c_bl_per_row", self.c_bl_per_row),
            ("r_bls_per_col", self.r_bls_per_col),
            ("c_bls_per_col", self.c_bls_per_col),
            ("c_cell_per_col", self.c_cell_per_col),
            ("c_stair_per_stack", self.c_stair_per_stack),
            ("c_string", self.c_string),
            ("c_inv", self.c_inv),
            ("r_s", self.r_s),
            ("v_pre", self.v_pre),
            ("v_pass", self.v_pass),
            ("v_read", self.v_read),
            ("t_sense", self.t_sense),
            ("t_dis", self.t_dis),
            ("t_accum", self.t_accum),
            ("e_sense_per_col", self.e_sense_per_col),
            ("e_accum_per_col", self.e_accum_per_col),
            ("accum_mux_ref_cols", self.accum_mux_ref_cols),
            ("horowitz_k", self.horowitz_k),
            ("l_cell_per_col", self.l_cell_per_col),
            ("l_staircase_per_stack", self.l_staircase_per_stack),
            ("w_per_row", self.w_per_row),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha_input) {
            return Err(Error::InvalidConfig(format!(
                "alpha_input must lie in [0, 1], got {}",
                self.alpha_input
            )));
        }
        Ok(())
    }
}

/// Resistances and capacitances of one plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RcSet {
    pub r_bl: f64,
    pub c_bl: f64,
    pub r_bls: f64,
    pub c_bls: f64,
    pub c_cell: f64,
    pub c_stair: f64,
}

/// Component latencies (s). `total` depends on how the breakdown was built:
/// the page-read composition for [`latency_components`], the bit-serial PIM
/// composition for [`pim_latency`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    pub t_dec_wl: f64,
    pub t_dec_bls: f64,
    pub t_pre: f64,
    pub t_sense: f64,
    pub t_accum: f64,
    pub t_dis: f64,
    pub total: f64,
}

impl LatencyBreakdown {
    /// The per-bit-pass part of a PIM operation.
    pub fn per_bit_pass(&self) -> f64 {
        self.t_dec_bls.max(self.t_pre) + self.t_sense + self.t_accum + self.t_dis
    }
}

/// Component energies of one bit pass (J); `e_dec_wl` is paid once per operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub e_pre: f64,
    pub e_dec_bls: f64,
    pub e_dec_wl: f64,
    pub e_sense: f64,
    pub e_accum: f64,
    pub total: f64,
}

fn validate_pair(cfg: &PlaneConfig, tech: &TechParams) -> Result<()> {
    cfg.validate()?;
    tech.validate()
}

/// Horowitz-style gate delay for RC time constant `tau`.
pub fn horowitz_delay(tau: f64, tech: &TechParams) -> Result<f64> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::Domain(format!("time constant must be >= 0, got {tau}")));
    }
    Ok(tech.horowitz_k * tau.powf(1.5))
}

fn h(tau: f64, tech: &TechParams) -> f64 {
    debug_assert!(tau >= 0.0);
    tech.horowitz_k * tau.powf(1.5)
}

pub fn derive_rc(cfg: &PlaneConfig, tech: &TechParams) -> Result<RcSet> {
    validate_pair(cfg, tech)?;
    Ok(rc_unchecked(cfg, tech))
}

fn rc_unchecked(cfg: &PlaneConfig, tech: &TechParams) -> RcSet {
    let rows = cfg.n_row as f64;
    let cols = cfg.n_col as f64;
    let stacks = cfg.n_stack as f64;
    RcSet {
        r_bl: tech.r_bl_per_row * rows,
        c_bl: tech.c_bl_per_row * rows,
        r_bls: tech.r_bls_per_col * cols,
        c_bls: tech.c_bls_per_col * cols,
        c_cell: tech.c_cell_per_col * cols,
        c_stair: tech.c_stair_per_stack * stacks,
    }
}

/// Dominant-term component latencies. `total` is the page-read composition.
pub fn latency_components(cfg: &PlaneConfig, tech: &TechParams) -> Result<LatencyBreakdown> {
    validate_pair(cfg, tech)?;
    let rc = rc_unchecked(cfg, tech);
    let cols = cfg.n_col as f64;

    let t_pre = h(tech.r_s * cols * tech.c_inv, tech) + h(rc.r_bl * (rc.c_bl / 2.0 + tech.c_string), tech);
    let t_dec_bls = h(rc.r_bls * rc.c_bls / 2.0, tech);
    let t_dec_wl = h(tech.r_s * (rc.c_cell + rc.c_stair), tech);

    let mut lat = LatencyBreakdown {
        t_dec_wl,
        t_dec_bls,
        t_pre,
        t_sense: tech.t_sense,
        t_accum: tech.t_accum,
        t_dis: tech.t_dis,
        total: 0.0,
    };
    lat.total = lat.t_dec_wl + lat.t_dec_bls.max(lat.t_pre) + lat.t_sense + lat.t_dis;
    Ok(lat)
}

/// Latency of a regular page read.
pub fn page_read_latency(cfg: &PlaneConfig, tech: &TechParams) -> Result<f64> {
    Ok(latency_components(cfg, tech)?.total)
}

/// Latency of one bit-serial PIM operation with `b_input`-bit inputs.
pub fn pim_latency(cfg: &PlaneConfig, tech: &TechParams, b_input: u32) -> Result<LatencyBreakdown> {
    if b_input == 0 {
        return Err(Error::Precondition("b_input must be >= 1".into()));
    }
    let mut lat = latency_components(cfg, tech)?;
    lat.total = lat.t_dec_wl + lat.per_bit_pass() * b_input as f64;
    Ok(lat)
}

/// Energy components of one bit pass with `n_row_active` rows driven.
pub fn energy_components(cfg: &PlaneConfig, tech: &TechParams, n_row_active: u32) -> Result<EnergyBreakdown> {
    validate_pair(cfg, tech)?;
    if n_row_active > cfg.n_row {
        return Err(Error::Precondition(format!(
            "n_row_active = {n_row_active} exceeds n_row = {}",
            cfg.n_row
        )));
    }
    let rc = rc_unchecked(cfg, tech);
    let cols = cfg.n_col as f64;
    let active = n_row_active as f64;

    let e_pre = cols * tech.v_pre.powi(2) * (rc.c_bl + tech.c_string * active * (1.0 - tech.alpha_input));
    let e_dec_bls = active * tech.v_pass.powi(2) * rc.c_bls;
    // Printed form: the selected WL at V_read plus the unselected load at V_pass.
    let e_dec_wl = tech.v_read.powi(2) * (rc.c_cell + rc.c_stair) + tech.v_pass.powi(2) * (rc.c_cell + rc.c_stair);
    let e_sense = tech.e_sense_per_col * cols;
    let e_accum = tech.e_accum_per_col * cols * (1.0 + cols / tech.accum_mux_ref_cols);

    Ok(EnergyBreakdown {
        e_pre,
        e_dec_bls,
        e_dec_wl,
        e_sense,
        e_accum,
        total: e_pre + e_dec_bls + e_dec_wl + e_sense + e_accum,
    })
}

/// Energy of a full `b_input`-bit PIM operation: one WL decode plus
/// `b_input` passes of everything else.
pub fn pim_energy(cfg: &PlaneConfig, tech: &TechParams, n_row_active: u32, b_input: u32) -> Result<f64> {
    if b_input == 0 {
        return Err(Error::Precondition("b_input must be >= 1".into()));
    }
    let e = energy_components(cfg, tech, n_row_active)?;
    Ok(e.e_dec_wl + b_input as f64 * (e.e_pre + e.e_dec_bls + e.e_sense + e.e_accum))
}

/// Cell-region and staircase lengths (m) and plane width (m).
pub fn plane_dimensions(cfg: &PlaneConfig, tech: &TechParams) -> (f64, f64, f64) {
    (
        tech.l_cell_per_col * cfg.n_col as f64,
        tech.l_staircase_per_stack * cfg.n_stack as f64,
        tech.w_per_row * cfg.n_row as f64,
    )
}

/// Plane footprint in mm^2.
pub fn plane_area_mm2(cfg: &PlaneConfig, tech: &TechParams) -> Result<f64> {
    validate_pair(cfg, tech)?;
    let (l_cell, l_stair, w) = plane_dimensions(cfg, tech);
    Ok(w * (l_cell + l_stair) * 1e6)
}

/// Areal cell density in Gb/mm^2.
pub fn cell_density(cfg: &PlaneConfig, tech: &TechParams) -> Result<f64> {
    validate_pair(cfg, tech)?;
    let (l_cell, l_stair, _) = plane_dimensions(cfg, tech);
    let per_length = cfg.n_col as f64 * cfg.n_stack as f64 * cfg.bits_per_cell as f64 / (l_cell + l_stair);
    // n_row / (w_per_row * n_row), cancelled before rounding.
    let bits_per_m2 = per_length / tech.w_per_row;
    Ok(bits_per_m2 * 1e-6 / BITS_PER_GB)
}
