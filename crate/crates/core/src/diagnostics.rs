//! Distances to the nodal target, overlap integrals, membership flags and
//! residuals of the coupled system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RadialField, RadialGrid};
use crate::nehari::{LambdaVector, MaximizerReport, PulseEnsemble};
use crate::scalar::NodalProfile;

/// `|λ̄_im − 1|` below this counts as lying on the Nehari set.
pub const NEHARI_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub in_x_eps: bool,
    pub in_tilde_x: bool,
    pub in_n_beta: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub d_sigma: f64,
    pub energy: f64,
    pub c_infinity_ref: f64,
    pub per_pulse_norms: Vec<f64>,
    pub overlap_matrix: Vec<Vec<f64>>,
    pub beta_overlap_matrix: Vec<Vec<f64>>,
    pub lambda_bar: LambdaVector,
    pub membership: Membership,
    pub residual_max: f64,
}

/// `d_σ̃ = (Σ_{im} ‖u_im − w_{σ̃⁻¹(im)}‖²)^{1/2}`.
pub fn d_sigma_distance(ens: &PulseEnsemble, profile: &NodalProfile) -> Result<f64> {
    if profile.h != ens.h() {
        return Err(Error::ShapeMismatch {
            expected: ens.h(),
            got: profile.h,
        });
    }
    if **ens.grid() != *profile.grid {
        return Err(Error::GridMismatch);
    }
    let grid = ens.grid();
    let bumps = ens.assignment().pulse_bumps();
    let mut total = 0.0;
    for (p, u) in ens.pulses().iter().enumerate() {
        let diff: Vec<f64> = u
            .values()
            .iter()
            .zip(profile.bumps[bumps[p]].values())
            .map(|(a, b)| a - b)
            .collect();
        total += grid.h1_inner_raw(&diff, &diff);
    }
    Ok(total.sqrt())
}

/// `∫U_i²U_j²` for `i ≠ j` (zero diagonal) and the same matrix times `β`.
pub fn overlap_report(beta: f64, components: &[RadialField]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let k = components.len();
    let mut m = vec![vec![0.0; k]; k];
    if let Some(first) = components.first() {
        for c in components {
            first.check_same_grid(c)?;
        }
        let raw: Vec<&[f64]> = components.iter().map(|c| c.values()).collect();
        m = overlap_raw(first.grid(), &raw);
    }
    let scaled = m.iter().map(|row| row.iter().map(|v| beta * v).collect()).collect();
    Ok((m, scaled))
}

pub(crate) fn overlap_raw(grid: &RadialGrid, comps: &[&[f64]]) -> Vec<Vec<f64>> {
    let k = comps.len();
    let w = grid.quad_weights();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let v: f64 = (0..w.len())
                .map(|n| w[n] * comps[i][n] * comps[i][n] * comps[j][n] * comps[j][n])
                .sum();
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

pub fn max_overlap(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().cloned().fold(0.0, f64::max)
}

/// Flags for `d_σ̃ < ε`, `M_β < c_∞ + min(1, 1/β)` and `max|λ̄ − 1| < 1e-6`.
pub fn membership(
    beta: f64,
    epsilon: f64,
    ens: &PulseEnsemble,
    profile: &NodalProfile,
    report: &MaximizerReport,
) -> Result<Membership> {
    let d = d_sigma_distance(ens, profile)?;
    let slack = if beta > 0.0 { (1.0 / beta).min(1.0) } else { 1.0 };
    Ok(Membership {
        in_x_eps: d < epsilon,
        in_tilde_x: report.m_value < profile.c_value + slack,
        in_n_beta: report.lambda_bar.max_deviation_from_one() < NEHARI_TOL,
    })
}

/// Residual of `−ΔU_i + U_i − U_i³ + βU_i Σ_{j≠i} U_j²` at every non-Dirichlet node,
/// stored node-major (`index = node * k + component`).
pub(crate) fn residual_vector(grid: &RadialGrid, beta: f64, comps: &[&[f64]]) -> Vec<f64> {
    let k = comps.len();
    let m = grid.n_points() - 1;
    let applied: Vec<Vec<f64>> = comps.iter().map(|u| grid.apply_operator(u)).collect();
    let mut out = vec![0.0; m * k];
    for j in 0..m {
        let total_sq: f64 = comps.iter().map(|u| u[j] * u[j]).sum();
        for i in 0..k {
            let u = comps[i][j];
            let others = total_sq - u * u;
            out[j * k + i] = applied[i][j] - u * u * u + beta * u * others;
        }
    }
    out
}

pub(crate) fn residual_max_raw(grid: &RadialGrid, beta: f64, comps: &[&[f64]]) -> f64 {
    residual_vector(grid, beta, comps)
        .iter()
        .fold(0.0, |a: f64, b| a.max(b.abs()))
}

/// Max-norm residual of the coupled system over all components and
/// non-Dirichlet nodes.
pub fn residual_max(beta: f64, components: &[RadialField]) -> Result<f64> {
    let Some(first) = components.first() else { return Ok(0.0) };
    for c in components {
        first.check_same_grid(c)?;
    }
    let raw: Vec<&[f64]> = components.iter().map(|c| c.values()).collect();
    Ok(residual_max_raw(first.grid(), beta, &raw))
}
