//! Fit of the process constants that cannot be measured directly.
//!
//! Four parameters are free: the Horowitz constant, the BL resistance per
//! row, the plane width per row and the staircase capacitance per stack.
//! They are fitted in log space with damped Gauss-Newton against four
//! anchors. Every other field of the seed is kept as is.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tech::{self, PlaneConfig, TechParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationTargets {
    /// PIM plane whose latency and density are pinned.
    pub pim_plane: PlaneConfig,
    pub pim_latency_s: f64,
    pub pim_b_input: u32,
    pub pim_density_gb_mm2: f64,
    /// Staircase and cell-region WL loads are equal at these sizes.
    pub stair_match_cols: u32,
    pub stair_match_stacks: u32,
    pub conventional_plane: PlaneConfig,
    /// Chosen inside the 20-50 us band of regular page reads.
    pub conventional_read_s: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            pim_plane: PlaneConfig::size_a(),
            pim_latency_s: 2.0e-6,
            pim_b_input: 8,
            pim_density_gb_mm2: 12.84,
            stair_match_cols: 512,
            stair_match_stacks: 128,
            conventional_plane: PlaneConfig::conventional(),
            conventional_read_s: 45e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub anchor: String,
    pub target: f64,
    pub achieved: f64,
    /// `achieved / target - 1`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub tech: TechParams,
    pub residuals: Vec<Residual>,
    pub iterations: usize,
}

const ANCHORS: [&str; 4] = ["pim_latency", "pim_density", "stair_to_cell", "conventional_read"];

fn apply(seed: &TechParams, logp: &Vector4<f64>) -> TechParams {
    TechParams {
        horowitz_k: logp[0].exp(),
        r_bl_per_row: logp[1].exp(),
        w_per_row: logp[2].exp(),
        c_stair_per_stack: logp[3].exp(),
        ..seed.clone()
    }
}

fn achieved(t: &TechParams, tg: &CalibrationTargets) -> Result<[f64; 4]> {
    let pim = tech::pim_latency(&tg.pim_plane, t, tg.pim_b_input)?.total;
    let density = tech::cell_density(&tg.pim_plane, t)?;
    let stair = t.c_stair_per_stack * tg.stair_match_stacks as f64;
    let cell = t.c_cell_per_col * tg.stair_match_cols as f64;
    let read = tech::page_read_latency(&tg.conventional_plane, t)?;
    Ok([pim, density, stair / cell, read])
}

fn targets_of(tg: &CalibrationTargets) -> [f64; 4] {
    [tg.pim_latency_s, tg.pim_density_gb_mm2, 1.0, tg.conventional_read_s]
}

fn log_residuals(t: &TechParams, tg: &CalibrationTargets) -> Result<Vector4<f64>> {
    let a = achieved(t, tg)?;
    let g = targets_of(tg);
    Ok(Vector4::from_fn(|i, _| (a[i] / g[i]).ln()))
}

/// Fit the free constants of `seed` to `targets`.
pub fn calibrate(seed: &TechParams, targets: &CalibrationTargets) -> Result<CalibrationResult> {
    seed.validate()?;
    targets.pim_plane.validate()?;
    targets.conventional_plane.validate()?;
    let goals = targets_of(targets);
    if goals.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::InvalidConfig("calibration targets must be positive".into()));
    }

    let mut logp = Vector4::new(
        seed.horowitz_k.ln(),
        seed.r_bl_per_row.ln(),
        seed.w_per_row.ln(),
        seed.c_stair_per_stack.ln(),
    );
    let mut r = log_residuals(&apply(seed, &logp), targets)?;
    let mut lambda = 1e-6;
    let mut iterations = 0;
    const STEP: f64 = 1e-6;

    while iterations < 200 && r.norm() > 1e-13 {
        iterations += 1;
        let mut jac = Matrix4::zeros();
        for j in 0..4 {
            let mut p = logp;
            p[j] += STEP;
            let rj = log_residuals(&apply(seed, &p), targets)?;
            jac.set_column(j, &((rj - r) / STEP));
        }
        let jt = jac.transpose();
        let normal = jt * jac + Matrix4::identity() * lambda;
        let Some(delta) = normal.lu().solve(&(-(jt * r))) else {
            return Err(Error::Domain("calibration Jacobian is singular".into()));
        };
        let candidate = logp + delta;
        let rc = log_residuals(&apply(seed, &candidate), targets)?;
        if rc.norm() < r.norm() {
            logp = candidate;
            r = rc;
            lambda = (lambda * 0.1).max(1e-12);
        } else {
            lambda *= 10.0;
            if lambda > 1e6 {
                break;
            }
        }
    }

    let tech = apply(seed, &logp);
    let got = achieved(&tech, targets)?;
    let residuals = ANCHORS
        .iter()
        .zip(goals.iter().zip(got.iter()))
        .map(|(name, (&target, &achieved))| Residual {
            anchor: name.to_string(),
            target,
            achieved,
            rel_error: achieved / target - 1.0,
        })
        .collect();
    Ok(CalibrationResult { tech, residuals, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hits_all_anchors_from_seed() {
        let res = calibrate(&TechParams::seed(), &CalibrationTargets::default()).unwrap();
        for r in &res.residuals {
            assert!(r.rel_error.abs() < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn only_free_fields_move() {
        let seed = TechParams::seed();
        let res = calibrate(&seed, &CalibrationTargets::default()).unwrap();
        let back = TechParams {
            horowitz_k: seed.horowitz_k,
            r_bl_per_row: seed.r_bl_per_row,
            w_per_row: seed.w_per_row,
            c_stair_per_stack: seed.c_stair_per_stack,
            ..res.tech
        };
        assert_eq!(back, seed);
    }

    #[test]
    fn rejects_nonpositive_target() {
        let tg = CalibrationTargets { pim_latency_s: 0.0, ..Default::default() };
        assert!(calibrate(&TechParams::seed(), &tg).is_err());
    }
}
