//! Sweeps over plane geometry, plane selection and area accounting.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interconnect::FlashTopology;
use crate::tech::{self, EnergyBreakdown, LatencyBreakdown, PlaneConfig, TechParams};
use crate::tiling::{DEFAULT_B_INPUT, UNIT_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NRow,
    NCol,
    NStack,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::NRow, SweepAxis::NCol, SweepAxis::NStack];

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::NRow => "n_row",
            SweepAxis::NCol => "n_col",
            SweepAxis::NStack => "n_stack",
        }
    }

    pub fn default_values(&self) -> Vec<u32> {
        match self {
            SweepAxis::NRow => vec![64, 128, 256, 512, 1024],
            SweepAxis::NCol => vec![512, 1024, 2048, 4096, 8192],
            SweepAxis::NStack => vec![32, 64, 128, 256],
        }
    }

    pub fn apply(&self, base: PlaneConfig, v: u32) -> PlaneConfig {
        match self {
            SweepAxis::NRow => PlaneConfig { n_row: v, ..base },
            SweepAxis::NCol => PlaneConfig { n_col: v, ..base },
            SweepAxis::NStack => PlaneConfig { n_stack: v, ..base },
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown sweep axis '{s}' (n_row, n_col, n_stack)")))
    }
}

/// Plane held fixed while one axis varies.
pub fn sweep_baseline() -> PlaneConfig {
    PlaneConfig::new(256, 1024, 128, 4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<u32>,
    pub fixed: PlaneConfig,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis) -> Self {
        Self { axis, values: axis.default_values(), fixed: sweep_baseline() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep has no values".into()));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!("sweep values must be strictly ascending: {:?}", self.values)));
        }
        self.fixed.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config: PlaneConfig,
    /// PIM latency at 8-bit inputs.
    pub latency: LatencyBreakdown,
    pub read_latency: f64,
    /// Components of one bit pass.
    pub energy: EnergyBreakdown,
    /// Whole PIM operation at 8-bit inputs.
    pub pim_energy: f64,
    pub density: f64,
}

/// Rows active during a PIM operation on `cfg`.
pub fn active_rows(cfg: &PlaneConfig) -> u32 {
    UNIT_ROWS.min(cfg.n_row)
}

pub fn evaluate(cfg: &PlaneConfig, tech: &TechParams) -> Result<SweepRow> {
    let active = active_rows(cfg);
    Ok(SweepRow {
        config: *cfg,
        latency: tech::pim_latency(cfg, tech, DEFAULT_B_INPUT)?,
        read_latency: tech::page_read_latency(cfg, tech)?,
        energy: tech::energy_components(cfg, tech, active)?,
        pim_energy: tech::pim_energy(cfg, tech, active, DEFAULT_B_INPUT)?,
        density: tech::cell_density(cfg, tech)?,
    })
}

/// One row per sweep value, in order.
pub fn run_sweep(spec: &SweepSpec, tech: &TechParams) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    tech.validate()?;
    spec.values.par_iter().map(|&v| evaluate(&spec.axis.apply(spec.fixed, v), tech)).collect()
}

pub const SWEEP_CSV_HEADER: [&str; 20] = [
    "n_row",
    "n_col",
    "n_stack",
    "bits_per_cell",
    "t_dec_wl_us",
    "t_dec_bls_us",
    "t_pre_us",
    "t_sense_us",
    "t_accum_us",
    "t_dis_us",
    "t_read_us",
    "t_pim_us",
    "e_pre_nj",
    "e_dec_bls_nj",
    "e_dec_wl_nj",
    "e_sense_nj",
    "e_accum_nj",
    "e_pim_nj",
    "density_gb_per_mm2",
    "plane_label",
];

/// Energies are per 8-bit PIM operation: WL decode once, the rest per pass.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SWEEP_CSV_HEADER)?;
    let us = |s: f64| format!("{:.6}", s * 1e6);
    let nj = |j: f64| format!("{:.6}", j * 1e9);
    let b = DEFAULT_B_INPUT as f64;
    for r in rows {
        let c = r.config;
        let l = r.latency;
        let e = r.energy;
        wtr.write_record([
            c.n_row.to_string(),
            c.n_col.to_string(),
            c.n_stack.to_string(),
            c.bits_per_cell.to_string(),
            us(l.t_dec_wl),
            us(l.t_dec_bls),
            us(l.t_pre),
            us(l.t_sense),
            us(l.t_accum),
            us(l.t_dis),
            us(r.read_latency),
            us(l.total),
            nj(e.e_pre * b),
            nj(e.e_dec_bls * b),
            nj(e.e_dec_wl),
            nj(e.e_sense * b),
            nj(e.e_accum * b),
            nj(r.pim_energy),
            format!("{:.6}", r.density),
            c.label(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Candidate planes for selection: rows fixed at 64 blocks, every column and
/// stack value of the sweep grids.
pub fn plane_candidates() -> Vec<PlaneConfig> {
    let mut out = Vec::new();
    for &c in &SweepAxis::NCol.default_values() {
        for &s in &SweepAxis::NStack.default_values() {
            out.push(PlaneConfig::new(256, c, s, 4));
        }
    }
    out
}

/// Densest candidate within `latency_budget`; ties go to the faster one.
/// `Ok(None)` when nothing fits.
pub fn select_plane(candidates: &[PlaneConfig], latency_budget: f64, tech: &TechParams) -> Result<Option<PlaneConfig>> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidate planes".into()));
    }
    let mut best: Option<(PlaneConfig, f64, f64)> = None;
    for cfg in candidates {
        let lat = tech::pim_latency(cfg, tech, DEFAULT_B_INPUT)?.total;
        if lat > latency_budget {
            continue;
        }
        let d = tech::cell_density(cfg, tech)?;
        let better = match best {
            None => true,
            Some((bc, bd, bl)) => d > bd || (d == bd && (lat < bl || (lat == bl && cfg.label() < bc.label()))),
        };
        if better {
            best = Some((*cfg, d, lat));
        }
    }
    Ok(best.map(|b| b.0))
}

/// Peripheral share of a plane's footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRatios {
    pub hv_peri: f64,
    pub lv_peri: f64,
    pub rpu_htree: f64,
}

impl Default for AreaRatios {
    fn default() -> Self {
        Self { hv_peri: 0.2162, lv_peri: 0.2316, rpu_htree: 0.0039 }
    }
}

impl AreaRatios {
    pub fn total(&self) -> f64 {
        self.hv_peri + self.lv_peri + self.rpu_htree
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AreaReport {
    pub plane_area_mm2: f64,
    pub n_planes: u32,
    pub total_pim_area_mm2: f64,
    pub budget_low_mm2: f64,
    pub budget_high_mm2: f64,
    pub ratios: AreaRatios,
    pub peripheral_total: f64,
    pub within_budget: bool,
}

pub const DIE_BUDGET_MM2: (f64, f64) = (5.6, 7.5);

pub fn area_report(cfg: &PlaneConfig, topo: &FlashTopology, tech: &TechParams) -> Result<AreaReport> {
    topo.validate()?;
    let plane = tech::plane_area_mm2(cfg, tech)?;
    let total = plane * topo.n_plane as f64;
    let ratios = AreaRatios::default();
    Ok(AreaReport {
        plane_area_mm2: plane,
        n_planes: topo.n_plane,
        total_pim_area_mm2: total,
        budget_low_mm2: DIE_BUDGET_MM2.0,
        budget_high_mm2: DIE_BUDGET_MM2.1,
        ratios,
        peripheral_total: ratios.total(),
        within_budget: total <= DIE_BUDGET_MM2.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!("n_col".parse::<SweepAxis>().unwrap(), SweepAxis::NCol);
        assert!("rows".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn sweep_lengths_and_density_column() {
        let t = TechParams::default();
        let rows = run_sweep(&SweepSpec::new(SweepAxis::NRow), &t).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.windows(2).all(|w| (w[0].density - w[1].density).abs() < 1e-12 * w[0].density));
        let bad = SweepSpec { values: vec![512, 256], ..SweepSpec::new(SweepAxis::NRow) };
        assert!(run_sweep(&bad, &t).is_err());
    }

    #[test]
    fn selection_edge_cases() {
        let t = TechParams::default();
        let cands = plane_candidates();
        let any = select_plane(&cands, f64::INFINITY, &t).unwrap().unwrap();
        let max_d = cands.iter().map(|c| tech::cell_density(c, &t).unwrap()).fold(0.0, f64::max);
        assert_eq!(tech::cell_density(&any, &t).unwrap(), max_d);
        assert_eq!(select_plane(&cands, 1e-9, &t).unwrap(), None);
        assert!(select_plane(&[], 1.0, &t).is_err());
    }

    #[test]
    fn area_ratios() {
        let r = area_report(&PlaneConfig::size_a(), &FlashTopology::default(), &TechParams::default()).unwrap();
        assert_eq!(r.ratios.rpu_htree, 0.0039);
        assert!((r.peripheral_total - 0.4517).abs() < 1e-12);
        assert!(r.peripheral_total < 0.5);
    }

    #[test]
    fn csv_has_units() {
        let rows = run_sweep(&SweepSpec::new(SweepAxis::NStack), &TechParams::default()).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().contains("t_pim_us"));
    }
}
