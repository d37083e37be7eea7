//! Radial nodal solutions of `-ΔW + W = W^3` and the limit level `c_∞`.
//!
//! Two independent routes produce the K-representative for a bump count `h`:
//!
//! * [`find_nodal_solution`]: shooting on the initial amplitude (nested
//!   bisection on the number of sign changes), a Newton solve of the discrete
//!   equation, then splitting `|W|` at its zeros;
//! * [`compute_c_infinity`]: direct minimisation of the summed annulus
//!   ground-state energies over the separating radii.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l4_raw, RadialField, RadialGrid};
use crate::linalg::BandMatrix;
use crate::ode::{hermite, Dopri5, Tolerances};

/// Relative Nehari defect accepted for each bump.
pub const TOL_NEHARI: f64 = 1e-8;
/// Tail values below this (and decreasing) count as decayed.
pub const DECAY_THRESHOLD: f64 = 1e-8;
/// Values below this magnitude are ignored when counting sign changes.
pub const SIGN_EPS: f64 = 1e-12;
// |w| and |w'| below TAIL_REL * peak: the remaining trajectory is the linear tail
const TAIL_REL: f64 = 1e-5;
const START_RADIUS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminalBehavior {
    Decayed,
    BlewUp,
    Oscillating,
}

#[derive(Debug, Clone)]
pub struct ShotResult {
    pub initial_amplitude: f64,
    pub sign_changes: usize,
    pub terminal_behavior: TerminalBehavior,
    pub trajectory: RadialField,
}

/// `J*(u) = ½‖u‖² − ¼∫u⁴`.
pub fn j_star(grid: &RadialGrid, u: &[f64]) -> f64 {
    0.5 * grid.h1_inner_raw(u, u) - 0.25 * l4_raw(grid, u)
}

fn radial_rhs(dimension: usize) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] {
    let c = dimension as f64 - 1.0;
    move |r, y| [y[1], y[0] - y[0] * y[0] * y[0] - c / r * y[1]]
}

fn series_start(dimension: usize, amplitude: f64) -> (f64, [f64; 2]) {
    let curv = (amplitude - amplitude.powi(3)) / dimension as f64;
    let r0 = START_RADIUS;
    (r0, [amplitude + 0.5 * curv * r0 * r0, curv * r0])
}

/// Integrates the radial ODE from `w(0) = amplitude`, `w'(0) = 0`.
///
/// Once `|w|` and `|w'|` both fall below `1e-5` of the running peak, the
/// rest of the profile is replaced by the linear decaying tail
/// `r^{-(N-1)/2} e^{-r}` matched at that radius.
pub fn shoot(grid: &Arc<RadialGrid>, amplitude: f64) -> Result<ShotResult> {
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(Error::StepFailure(format!("amplitude must be positive, got {amplitude}")));
    }
    let dim = grid.dimension();
    let r_max = grid.r_max();
    let (r0, y0) = series_start(dim, amplitude);
    let mut solver = Dopri5::new(radial_rhs(dim), r0, y0, Tolerances::default());

    // accepted step end points (r, w, w')
    let mut samples: Vec<(f64, f64, f64)> = vec![(0.0, amplitude, 0.0), (r0, y0[0], y0[1])];
    let mut peak = amplitude;
    let mut sign_changes = 0usize;
    let mut last_sign = 1.0f64;
    let mut blew_up = false;
    let mut tail_from: Option<(f64, f64)> = None;

    while solver.t < r_max {
        solver.step(r_max).map_err(Error::StepFailure)?;
        let (r, w, dw) = (solver.t, solver.y[0], solver.y[1]);
        if !w.is_finite() || w.abs() > 1e6 * amplitude.max(1.0) {
            blew_up = true;
            break;
        }
        samples.push((r, w, dw));
        peak = peak.max(w.abs());
        if w.abs() > SIGN_EPS && w.signum() != last_sign {
            sign_changes += 1;
            last_sign = w.signum();
        }
        if w.abs() < TAIL_REL * peak && dw.abs() < TAIL_REL * peak {
            tail_from = Some((r, w));
            break;
        }
    }

    let nodes = grid.nodes();
    let mut values = vec![0.0; nodes.len()];
    let mut k = 0usize;
    let (last_r, last_w, _) = *samples.last().expect("at least the start point");
    let tail = |r: f64| r.powf(-0.5 * (dim as f64 - 1.0)) * (-r).exp();
    for (j, &r) in nodes.iter().enumerate() {
        if r <= last_r {
            while k + 2 < samples.len() && samples[k + 1].0 < r {
                k += 1;
            }
            let (ta, ya, da) = samples[k];
            let (tb, yb, db) = samples[k + 1];
            values[j] = hermite(ta, ya, da, tb, yb, db, r);
        } else if let Some((rs, ws)) = tail_from {
            values[j] = ws * tail(r) / tail(rs);
        } else {
            values[j] = last_w;
        }
    }

    let trajectory = RadialField::new(grid.clone(), values)?;
    let terminal_behavior = if blew_up {
        TerminalBehavior::BlewUp
    } else if decayed(&trajectory) {
        TerminalBehavior::Decayed
    } else {
        TerminalBehavior::Oscillating
    };
    Ok(ShotResult {
        initial_amplitude: amplitude,
        sign_changes,
        terminal_behavior,
        trajectory,
    })
}

fn decayed(field: &RadialField) -> bool {
    let v = field.values();
    let start = (v.len() as f64 * 0.9) as usize;
    let tail = &v[start..];
    tail.iter().all(|x| x.abs() < DECAY_THRESHOLD)
        && tail.windows(2).all(|p| p[1].abs() <= p[0].abs())
}

/// Sign changes before the first interior minimum of `|w|`, capped at `cap`.
/// Returns `(count, reached_cap)`.
fn probe(dimension: usize, r_max: f64, amplitude: f64, cap: usize) -> Result<(usize, bool)> {
    let (r0, y0) = series_start(dimension, amplitude);
    let mut solver = Dopri5::new(radial_rhs(dimension), r0, y0, Tolerances::default());
    let mut count = 0usize;
    let mut prev_w = y0[0];
    let mut prev_s = y0[0] * y0[1];
    while solver.t < r_max {
        solver.step(r_max).map_err(Error::StepFailure)?;
        let (w, dw) = (solver.y[0], solver.y[1]);
        if !w.is_finite() {
            return Err(Error::StepFailure("non-finite state while probing".into()));
        }
        let s = w * dw;
        if w.signum() != prev_w.signum() && w != 0.0 {
            count += 1;
            if count >= cap {
                return Ok((count, true));
            }
        } else if prev_s < 0.0 && s > 0.0 {
            // |w| passed through an interior minimum without crossing zero
            return Ok((count, false));
        }
        prev_w = w;
        prev_s = s;
    }
    Ok((count, false))
}

/// Amplitude of the radial solution with exactly `h - 1` sign changes.
pub fn nodal_amplitude(grid: &RadialGrid, h: usize) -> Result<f64> {
    if h == 0 {
        return Err(Error::InvalidBumpCount);
    }
    let (dim, r_max) = (grid.dimension(), grid.r_max());
    let mut lo = 0.05;
    let (lo_count, lo_over) = probe(dim, r_max, lo, h)?;
    if lo_over || lo_count + 1 > h {
        return Err(Error::BracketingFailure(h - 1));
    }
    let mut hi = lo;
    loop {
        hi *= 1.02;
        if hi > 1e4 {
            return Err(Error::BracketingFailure(h - 1));
        }
        let (_, over) = probe(dim, r_max, hi, h)?;
        if over {
            break;
        }
        lo = hi;
    }
    while hi - lo > 4.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if probe(dim, r_max, mid, h)?.1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (count, over) = probe(dim, r_max, lo, h)?;
    if over || count != h - 1 {
        return Err(Error::BracketingFailure(h - 1));
    }
    Ok(lo)
}

/// Maximum-norm residual of `(-Δ+1)w − w³` over the non-Dirichlet nodes.
pub fn scalar_residual(grid: &RadialGrid, w: &[f64]) -> f64 {
    let aw = grid.apply_operator(w);
    (0..grid.n_points() - 1)
        .map(|j| (aw[j] - w[j].powi(3)).abs())
        .fold(0.0, f64::max)
}

/// Newton's method for the discrete scalar equation, Dirichlet at `r_max`.
pub fn newton_scalar(grid: &RadialGrid, w: &mut [f64], tol: f64, max_iter: usize) -> Result<f64> {
    let n = grid.n_points();
    let m = n - 1;
    w[n - 1] = 0.0;
    let residual_vec = |w: &[f64]| -> Vec<f64> {
        let aw = grid.apply_operator(w);
        (0..m).map(|j| aw[j] - w[j].powi(3)).collect()
    };
    let max_norm = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut f = residual_vec(w);
    let mut res = max_norm(&f);
    for _ in 0..max_iter {
        if res < tol {
            return Ok(res);
        }
        let mut jac = BandMatrix::zeros(m, 1, 1);
        for j in 0..m {
            let (lo, d, up) = grid.stencil(j);
            if j > 0 {
                jac.add(j, j - 1, lo);
            }
            jac.add(j, j, d - 3.0 * w[j] * w[j]);
            if j + 1 < m {
                jac.add(j, j + 1, up);
            }
        }
        let delta = jac
            .solve(&f)
            .ok_or_else(|| Error::NewtonDivergence("singular Jacobian".into()))?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = (0..n)
                .map(|j| if j < m { w[j] - step * delta[j] } else { 0.0 })
                .collect();
            let ft = residual_vec(&trial);
            let rt = max_norm(&ft);
            if rt.is_finite() && (rt < res || rt < tol) {
                w.copy_from_slice(&trial);
                f = ft;
                res = rt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // stagnation at the rounding floor
            return if res < 1e3 * tol {
                Ok(res)
            } else {
                Err(Error::NewtonDivergence(format!("no decrease from residual {res:e}")))
            };
        }
    }
    if res < tol {
        Ok(res)
    } else {
        Err(Error::NewtonDivergence(format!("residual {res:e} after {max_iter} iterations")))
    }
}

/// Returns `λ̄ u` with `λ̄ = (‖u‖² / ∫u⁴)^{1/2}`, the maximiser of `λ ↦ J*(λu)`.
pub fn nehari_project_scalar(grid: &Arc<RadialGrid>, u: &RadialField) -> Result<RadialField> {
    if **u.grid() != **grid {
        return Err(Error::GridMismatch);
    }
    let lambda = nehari_scale(grid, u.values())?;
    Ok(u.scaled(lambda))
}

fn nehari_scale(grid: &RadialGrid, u: &[f64]) -> Result<f64> {
    let a = grid.h1_inner_raw(u, u);
    let b = l4_raw(grid, u);
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::ZeroField);
    }
    Ok((a / b).sqrt())
}

/// Free node range for the annulus whose zero boundary sits on the cut nodes
/// `lo` and `hi`; `lo == 0` means the ball around the origin.
fn free_range(grid: &RadialGrid, lo: usize, hi: usize) -> (usize, usize) {
    let first = if lo == 0 { 0 } else { lo + 1 };
    let last = (hi.max(1) - 1).min(grid.n_points() - 2);
    (first, last)
}

/// Ground state of `J*` on the Nehari set of the annulus with free nodes
/// `first..=last`, by projected gradient descent in the H^1 metric with a
/// projection onto `u ≥ 0` and onto the Nehari set after each step.
/// Returns `(field, energy)`.
pub(crate) fn annulus_solve(
    grid: &RadialGrid,
    first: usize,
    last: usize,
    init: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    let nodes = grid.nodes();
    if last < first || last - first + 1 < 8 {
        return Err(Error::EmptyAnnulus {
            lo: nodes[first.saturating_sub(1)],
            hi: nodes[(last + 1).min(nodes.len() - 1)],
        });
    }
    let n = grid.n_points();
    let mut u = vec![0.0; n];
    match init {
        Some(v) => {
            for j in first..=last {
                u[j] = v[j].max(0.0);
            }
        }
        None => {
            let r_lo = if first == 0 { 0.0 } else { nodes[first - 1] };
            let r_hi = nodes[last + 1].min(r_lo + 8.0);
            for j in first..=last {
                let r = nodes[j];
                if r < r_hi {
                    u[j] = if first == 0 {
                        (0.5 * std::f64::consts::PI * r / r_hi).cos()
                    } else {
                        (std::f64::consts::PI * (r - r_lo) / (r_hi - r_lo)).sin()
                    };
                }
            }
        }
    }
    let project = |u: &mut Vec<f64>| -> Result<f64> {
        let s = nehari_scale(grid, u)?;
        u.iter_mut().for_each(|v| *v *= s);
        Ok(0.25 * grid.h1_inner_raw(u, u))
    };
    let mut energy = project(&mut u)?;
    let mut tau = 1.0f64;
    for _ in 0..20_000 {
        let cubed: Vec<f64> = u.iter().map(|v| v * v * v).collect();
        let target = grid.solve_operator_on(&cubed, first, last);
        let mut accepted = None;
        let mut t = tau;
        for _ in 0..40 {
            let mut cand: Vec<f64> = u
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - t * (a - b)).max(0.0))
                .collect();
            if let Ok(e) = project(&mut cand) {
                if e <= energy {
                    accepted = Some((cand, e));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, e)) = accepted else { break };
        let decrease = energy - e;
        u = cand;
        energy = e;
        tau = (2.0 * t).min(1.0);
        if decrease < 1e-12 {
            break;
        }
    }
    Ok((u, energy))
}

pub fn annulus_ground_state(grid: &Arc<RadialGrid>, r_lo: f64, r_hi: f64) -> Result<RadialField> {
    if !(r_lo >= 0.0 && r_hi > r_lo && r_hi <= grid.r_max() * (1.0 + 1e-12)) {
        return Err(Error::EmptyAnnulus { lo: r_lo, hi: r_hi });
    }
    let (first, last) = free_range(grid, grid.index_of(r_lo), grid.index_of(r_hi));
    let (u, _) = annulus_solve(grid, first, last, None)?;
    RadialField::new(grid.clone(), u)
}

/// The h-bump profile `W = (w_1, ..., w_h)` with everything derived from it.
#[derive(Debug, Clone)]
pub struct NodalProfile {
    pub grid: Arc<RadialGrid>,
    pub h: usize,
    pub bumps: Vec<RadialField>,
    /// Grid indices of the separating zeros, `h - 1` of them.
    pub cut_indices: Vec<usize>,
    pub node_radii: Vec<f64>,
    pub energies: Vec<f64>,
    pub c_value: f64,
    /// Sign-changing solution of the discrete equation, when the profile came from shooting.
    pub signed_solution: Option<RadialField>,
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub dimension: usize,
    pub h: usize,
    pub c_value: f64,
    pub node_radii: Vec<f64>,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub bump_energies: Vec<f64>,
    pub amplitude: Option<f64>,
}

impl NodalProfile {
    fn assemble(
        grid: &Arc<RadialGrid>,
        bumps: Vec<Vec<f64>>,
        cut_indices: Vec<usize>,
        signed_solution: Option<RadialField>,
        amplitude: Option<f64>,
    ) -> Result<Self> {
        let energies: Vec<f64> = bumps.iter().map(|b| j_star(grid, b)).collect();
        let c_value = energies.iter().sum();
        let node_radii = cut_indices.iter().map(|&c| grid.nodes()[c]).collect();
        let bumps = bumps
            .into_iter()
            .map(|b| RadialField::new(grid.clone(), b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.clone(),
            h: bumps.len(),
            bumps,
            cut_indices,
            node_radii,
            energies,
            c_value,
            signed_solution,
            amplitude,
        })
    }

    pub fn bump_norms(&self) -> Vec<f64> {
        self.bumps
            .iter()
            .map(|b| self.grid.h1_inner_raw(b.values(), b.values()).sqrt())
            .collect()
    }

    /// Largest relative Nehari defect `|‖w‖² − ∫w⁴| / ‖w‖²` over the bumps.
    pub fn nehari_defect(&self) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let a = self.grid.h1_inner_raw(b.values(), b.values());
                (a - l4_raw(&self.grid, b.values())).abs() / a
            })
            .fold(0.0, f64::max)
    }

    /// `Σ_l (−1)^{l+1} w_l`, positive near the origin.
    pub fn signed_reconstruction(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_points()];
        for (l, b) in self.bumps.iter().enumerate() {
            let s = if l % 2 == 0 { 1.0 } else { -1.0 };
            for (o, v) in out.iter_mut().zip(b.values()) {
                *o += s * v;
            }
        }
        out
    }

    /// (first, last) node index where each bump is positive.
    pub fn supports(&self) -> Vec<(usize, usize)> {
        self.bumps
            .iter()
            .map(|b| {
                let v = b.values();
                let first = v.iter().position(|&x| x > 0.0).unwrap_or(0);
                let last = v.iter().rposition(|&x| x > 0.0).unwrap_or(0);
                (first, last)
            })
            .collect()
    }

    pub fn summary(&self) -> ProfileSummary {
        let (c1, c2) = bump_constants(self);
        ProfileSummary {
            dimension: self.grid.dimension(),
            h: self.h,
            c_value: self.c_value,
            node_radii: self.node_radii.clone(),
            c1,
            c2,
            bump_energies: self.energies.clone(),
            amplitude: self.amplitude,
        }
    }
}

/// Shooting + Newton route to the h-bump profile.
pub fn find_nodal_solution(grid: &Arc<RadialGrid>, h: usize) -> Result<NodalProfile> {
    let amplitude = nodal_amplitude(grid, h)?;
    let shot = shoot(grid, amplitude)?;
    let mut w = shot.trajectory.into_values();
    newton_scalar(grid, &mut w, 1e-10, 60)?;

    let n = grid.n_points();
    let nodes = grid.nodes();
    // grid intervals (j, j') bracketing each sign change
    let mut brackets = Vec::with_capacity(h.saturating_sub(1));
    let mut prev: Option<(usize, f64)> = None;
    for j in 0..n - 1 {
        if w[j].abs() <= SIGN_EPS {
            continue;
        }
        if let Some((pj, pv)) = prev {
            if pv.signum() != w[j].signum() {
                brackets.push((pj, j));
            }
        }
        prev = Some((j, w[j]));
    }
    if brackets.len() != h - 1 {
        return Err(Error::NewtonDivergence(format!(
            "refined solution has {} sign changes, expected {}",
            brackets.len(),
            h - 1
        )));
    }

    // each zero is aligned to one of its two neighbouring nodes; keep the
    // alignment with the smallest summed bump energy
    let mut part = Partition {
        grid,
        cache: HashMap::new(),
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << brackets.len()) {
        let mut b = vec![0usize];
        b.extend(
            brackets
                .iter()
                .enumerate()
                .map(|(l, &(a, c))| if mask >> l & 1 == 0 { a } else { c }),
        );
        b.push(n - 1);
        if !part.feasible(&b) {
            continue;
        }
        let e = part.total(&b)?;
        if best.as_ref().is_none_or(|(be, _)| e < *be) {
            best = Some((e, b));
        }
    }
    let bounds = best
        .ok_or_else(|| Error::EmptyAnnulus { lo: 0.0, hi: nodes[brackets[0].1] })?
        .1;
    let cuts = bounds[1..h].to_vec();

    let init: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    let mut bumps = Vec::with_capacity(h);
    for l in 0..h {
        let (first, last) = free_range(grid, bounds[l], bounds[l + 1]);
        let (b, _) = annulus_solve(grid, first, last, Some(&init))?;
        bumps.push(b);
    }
    let signed = RadialField::new(grid.clone(), w)?;
    NodalProfile::assemble(grid, bumps, cuts, Some(signed), Some(amplitude))
}

fn golden_int(mut lo: usize, mut hi: usize, mut f: impl FnMut(usize) -> Result<f64>) -> Result<usize> {
    const R: f64 = 0.381_966_011_250_105;
    while hi - lo > 4 {
        let span = (hi - lo) as f64;
        let m1 = lo + ((R * span).round() as usize).max(1);
        let m2 = (hi - ((R * span).round() as usize).max(1)).max(m1 + 1);
        if f(m1)? <= f(m2)? {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mut best = lo;
    let mut best_v = f(lo)?;
    for j in lo + 1..=hi {
        let v = f(j)?;
        if v < best_v {
            best = j;
            best_v = v;
        }
    }
    Ok(best)
}

// at least 8 free nodes per annulus
const MIN_FREE: usize = 8;

/// Cut vectors `0 = b_0 < b_1 < ... < b_h = n - 1` with cached annulus energies.
struct Partition<'a> {
    grid: &'a RadialGrid,
    cache: HashMap<(usize, usize), f64>,
}

impl Partition<'_> {
    fn energy(&mut self, lo: usize, hi: usize) -> Result<f64> {
        if let Some(&e) = self.cache.get(&(lo, hi)) {
            return Ok(e);
        }
        let (first, last) = free_range(self.grid, lo, hi);
        let (_, e) = annulus_solve(self.grid, first, last, None)?;
        self.cache.insert((lo, hi), e);
        Ok(e)
    }

    fn total(&mut self, b: &[usize]) -> Result<f64> {
        let mut t = 0.0;
        for l in 0..b.len() - 1 {
            t += self.energy(b[l], b[l + 1])?;
        }
        Ok(t)
    }

    fn feasible(&self, b: &[usize]) -> bool {
        b[1] >= MIN_FREE
            && b.windows(2).skip(1).all(|p| p[1] >= p[0] + MIN_FREE + 1)
            && b[b.len() - 1] == self.grid.n_points() - 1
    }

    fn coordinate_descent(&mut self, b: &mut [usize]) -> Result<()> {
        let h = b.len() - 1;
        for _sweep in 0..200 {
            let mut moved = false;
            for l in 1..h {
                let (left, right) = (b[l - 1], b[l + 1]);
                let lo = if l == 1 { MIN_FREE } else { left + MIN_FREE + 1 };
                let hi = right - MIN_FREE - 1;
                let best = golden_int(lo, hi, |c| Ok(self.energy(left, c)? + self.energy(c, right)?))?;
                if best != b[l] {
                    b[l] = best;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        Ok(())
    }

    /// The radii are strongly coupled; shift contiguous blocks of cuts together.
    fn block_shifts(&mut self, b: &mut Vec<usize>) -> Result<()> {
        let h = b.len() - 1;
        let mut current = self.total(b)?;
        for first in 1..h {
            for last in first..h {
                for shift in [-1i64, 1] {
                    loop {
                        let mut trial = b.clone();
                        for c in &mut trial[first..=last] {
                            *c = (*c as i64 + shift) as usize;
                        }
                        if !self.feasible(&trial) {
                            break;
                        }
                        let e = self.total(&trial)?;
                        if e >= current {
                            break;
                        }
                        *b = trial;
                        current = e;
                    }
                }
            }
        }
        Ok(())
    }

    fn shifted(&self, b: &[usize], moves: &[(usize, i64)]) -> Option<Vec<usize>> {
        let mut t = b.to_vec();
        for &(l, d) in moves {
            let v = t[l] as i64 + d;
            if v < 0 {
                return None;
            }
            t[l] = v as usize;
        }
        self.feasible(&t).then_some(t)
    }

    /// Newton steps on the cut vector from a finite-difference quadratic model,
    /// rounded to grid nodes.
    fn newton_polish(&mut self, b: &mut Vec<usize>) -> Result<()> {
        let m = b.len() - 2;
        for _ in 0..30 {
            let e0 = self.total(b)?;
            let mut steps = vec![0i64; m];
            for (a, st) in steps.iter_mut().enumerate() {
                for s in [3i64, 2, 1] {
                    if self.shifted(b, &[(a + 1, s)]).is_some() && self.shifted(b, &[(a + 1, -s)]).is_some() {
                        *st = s;
                        break;
                    }
                }
            }
            let mut g = nalgebra::DVector::zeros(m);
            let mut hess = nalgebra::DMatrix::identity(m, m);
            for a in 0..m {
                let s = steps[a];
                if s == 0 {
                    continue;
                }
                let ep = self.total(&self.shifted(b, &[(a + 1, s)]).expect("checked"))?;
                let em = self.total(&self.shifted(b, &[(a + 1, -s)]).expect("checked"))?;
                let sf = s as f64;
                g[a] = (ep - em) / (2.0 * sf);
                hess[(a, a)] = (ep - 2.0 * e0 + em) / (sf * sf);
                for c in 0..a {
                    let t = steps[c];
                    if t == 0 {
                        continue;
                    }
                    let mut corner = [0.0; 4];
                    let mut ok = true;
                    for (q, (da, dc)) in [(s, t), (s, -t), (-s, t), (-s, -t)].into_iter().enumerate() {
                        match self.shifted(b, &[(a + 1, da), (c + 1, dc)]) {
                            Some(tr) => corner[q] = self.total(&tr)?,
                            None => ok = false,
                        }
                    }
                    if ok {
                        let v = (corner[0] - corner[1] - corner[2] + corner[3]) / (4.0 * sf * t as f64);
                        hess[(a, c)] = v;
                        hess[(c, a)] = v;
                    }
                }
            }
            let Some(chol) = hess.clone().cholesky() else { return Ok(()) };
            let delta = chol.solve(&(-g));
            let mut accepted = false;
            let mut scale = 1.0;
            for _ in 0..6 {
                let moves: Vec<(usize, i64)> =
                    (0..m).map(|a| (a + 1, (scale * delta[a]).round() as i64)).collect();
                if moves.iter().all(|&(_, d)| d == 0) {
                    break;
                }
                if let Some(tr) = self.shifted(b, &moves) {
                    if self.total(&tr)? < e0 {
                        *b = tr;
                        accepted = true;
                        break;
                    }
                }
                scale *= 0.5;
            }
            if !accepted {
                return Ok(());
            }
        }
        Ok(())
    }
}

/// Partition route to `c_∞`: coordinate descent on the separating radii, each
/// radius located by golden-section search over grid nodes.
pub fn compute_c_infinity(grid: &Arc<RadialGrid>, h: usize) -> Result<NodalProfile> {
    if h == 0 {
        return Err(Error::InvalidBumpCount);
    }
    let n = grid.n_points();
    let dr = grid.dr();
    let mut part = Partition {
        grid,
        cache: HashMap::new(),
    };
    let mut bounds: Vec<usize> = vec![0; h + 1];
    bounds[h] = n - 1;
    if h > 1 {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for s in 0..=16 {
            let spacing = 1.0 + 0.25 * s as f64;
            let mut b = vec![0usize; h + 1];
            b[h] = n - 1;
            for (l, bl) in b.iter_mut().enumerate().take(h).skip(1) {
                *bl = (l as f64 * spacing / dr).round() as usize;
            }
            if !part.feasible(&b) {
                continue;
            }
            let total = part.total(&b)?;
            if best.as_ref().is_none_or(|(e, _)| total < *e) {
                best = Some((total, b));
            }
        }
        bounds = best
            .ok_or_else(|| Error::EmptyAnnulus { lo: 0.0, hi: grid.r_max() })?
            .1;
        let mut current = part.total(&bounds)?;
        loop {
            part.newton_polish(&mut bounds)?;
            part.coordinate_descent(&mut bounds)?;
            part.block_shifts(&mut bounds)?;
            let e = part.total(&bounds)?;
            if e >= current {
                break;
            }
            current = e;
        }
    }

    let mut bumps = Vec::with_capacity(h);
    for l in 0..h {
        let (first, last) = free_range(grid, bounds[l], bounds[l + 1]);
        bumps.push(annulus_solve(grid, first, last, None)?.0);
    }
    let cuts = bounds[1..h].to_vec();
    NodalProfile::assemble(grid, bumps, cuts, None, None)
}

/// Summed annulus ground-state energies for the given cut nodes.
pub fn partition_energy(grid: &RadialGrid, cuts: &[usize]) -> Result<f64> {
    let mut bounds = vec![0usize];
    bounds.extend(cuts);
    bounds.push(grid.n_points() - 1);
    let mut total = 0.0;
    for l in 0..bounds.len() - 1 {
        let (first, last) = free_range(grid, bounds[l], bounds[l + 1]);
        total += annulus_solve(grid, first, last, None)?.1;
    }
    Ok(total)
}

/// `(C₁, C₂) = (min_l ‖w_l‖, max_l ‖w_l‖)`.
pub fn bump_constants(profile: &NodalProfile) -> (f64, f64) {
    let norms = profile.bump_norms();
    let c1 = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let c2 = norms.iter().cloned().fold(0.0, f64::max);
    (c1, c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn soliton_shot_decays_without_crossing() {
        let g = build_grid(1, 4096, 40.0).unwrap();
        let s = shoot(&g, std::f64::consts::SQRT_2).unwrap();
        assert_eq!(s.sign_changes, 0);
        assert_eq!(s.terminal_behavior, TerminalBehavior::Decayed);
        let err = g
            .nodes()
            .iter()
            .zip(s.trajectory.values())
            .map(|(r, v)| (v - std::f64::consts::SQRT_2 / r.cosh()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn tiny_amplitude_never_crosses() {
        let g = build_grid(1, 4096, 40.0).unwrap();
        let s = shoot(&g, 1e-6).unwrap();
        assert_eq!(s.sign_changes, 0);
        assert!(s.trajectory.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_nonpositive_amplitude() {
        let g = build_grid(1, 64, 10.0).unwrap();
        assert!(shoot(&g, 0.0).is_err());
        assert!(shoot(&g, -1.0).is_err());
    }

    #[test]
    fn projection_closed_form() {
        let g = build_grid(1, 512, 20.0).unwrap();
        let u = RadialField::from_fn(&g, |r| (-r * r).exp());
        let a = g.h1_inner_raw(u.values(), u.values());
        let b = l4_raw(&g, u.values());
        let p = nehari_project_scalar(&g, &u).unwrap();
        let lam = p.values()[0] / u.values()[0];
        assert!((lam - (a / b).sqrt()).abs() < 1e-12);
        assert!((j_star(&g, p.values()) - a * a / (4.0 * b)).abs() < 1e-12 * a);
        let again = nehari_project_scalar(&g, &p).unwrap();
        for (x, y) in again.values().iter().zip(p.values()) {
            assert!((x - y).abs() < 1e-14);
        }
        assert_eq!(
            nehari_project_scalar(&g, &RadialField::zeros(&g)).unwrap_err(),
            Error::ZeroField
        );
    }

    #[test]
    fn empty_annulus_rejected() {
        let g = build_grid(2, 256, 10.0).unwrap();
        let dr = g.dr();
        assert!(matches!(
            annulus_ground_state(&g, 2.0, 2.0 + 5.0 * dr),
            Err(Error::EmptyAnnulus { .. })
        ));
    }

    #[test]
    fn golden_int_finds_discrete_minimum() {
        for target in [3usize, 17, 40, 99] {
            let got = golden_int(0, 100, |j| Ok(((j as f64) - target as f64).powi(2))).unwrap();
            assert_eq!(got, target);
        }
    }

    #[test]
    fn two_bump_profile_structure() {
        let g = build_grid(2, 1024, 20.0).unwrap();
        let p = compute_c_infinity(&g, 2).unwrap();
        let s = find_nodal_solution(&g, 2).unwrap();
        for prof in [&p, &s] {
            assert_eq!(prof.bumps.len(), 2);
            assert_eq!(prof.node_radii.len(), 1);
            assert!(prof.nehari_defect() < TOL_NEHARI);
            assert!((prof.energies.iter().sum::<f64>() - prof.c_value).abs() < 1e-12 * prof.c_value);
            assert!(prof.bumps.iter().all(|b| b.is_nonnegative()));
            let w = prof.signed_reconstruction();
            let flips = w
                .iter()
                .filter(|x| x.abs() > SIGN_EPS)
                .collect::<Vec<_>>()
                .windows(2)
                .filter(|p| p[0].signum() != p[1].signum())
                .count();
            assert_eq!(flips, 1);
        }
        assert!((p.c_value - s.c_value).abs() < 1e-4 * p.c_value);
        let (c1, c2) = bump_constants(&p);
        assert!(0.0 < c1 && c1 <= c2);
    }

    #[test]
    fn more_bumps_cost_more() {
        let g = build_grid(2, 1024, 20.0).unwrap();
        let c: Vec<f64> = (1..=3).map(|h| compute_c_infinity(&g, h).unwrap().c_value).collect();
        assert!(c[0] < c[1] && c[1] < c[2]);
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn optimal_partition_beats_random_cuts(cut in 20usize..480) {
            let g = build_grid(2, 512, 20.0).unwrap();
            let best = compute_c_infinity(&g, 2).unwrap().c_value;
            let e = partition_energy(&g, &[cut]).unwrap();
            prop_assert!(e >= best - 1e-9 * best);
        }
    }
}
