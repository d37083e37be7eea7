//! Coupled k-component solver: descent of `M_β` over pulse ensembles,
//! Newton refinement of the discrete system and continuation in `β`.
//!
//! The unknowns of the descent are the components `U_i`; each component is
//! split into its pulses `u_im` at the minima of `U_i` between consecutive
//! pulse peaks, and every iterate is rescaled by its maximiser `Λ̄` so that
//! it lies on the Nehari-type set `λ̄ = 1`.

use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::diagnostics::{
    d_sigma_distance, max_overlap, membership, overlap_raw, overlap_report, residual_max_raw, residual_vector,
    DiagnosticsReport, NEHARI_TOL,
};
use crate::error::{Error, Result};
use crate::grid::{RadialField, RadialGrid};
use crate::linalg::{solve_tridiagonal, BandMatrix};
use crate::nehari::{j_beta_raw, maximize_phi, LambdaVector, MaximizerReport, PulseEnsemble};
use crate::scalar::NodalProfile;

pub const DEFAULT_BETA_SCHEDULE: [f64; 5] = [1.0, 10.0, 100.0, 1000.0, 10000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub beta_schedule: Vec<f64>,
    pub epsilon: f64,
    pub outer_tol: f64,
    pub newton_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta_schedule: DEFAULT_BETA_SCHEDULE.to_vec(),
            epsilon: 0.5,
            outer_tol: 1e-8,
            newton_tol: 1e-10,
            max_iters: 400,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_schedule.is_empty() {
            return Err(Error::Config("beta_schedule is empty".into()));
        }
        if !self.beta_schedule.iter().all(|b| b.is_finite() && *b >= 0.0) {
            return Err(Error::Config("beta values must be finite and nonnegative".into()));
        }
        if !self.beta_schedule.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("beta_schedule must be strictly increasing".into()));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("outer_tol", self.outer_tol),
            ("newton_tol", self.newton_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolutionRecord {
    pub beta: f64,
    pub ensemble: PulseEnsemble,
    pub lambda_bar: LambdaVector,
    pub energy: f64,
    pub residual: f64,
    pub d_to_k: f64,
    pub overlaps: Vec<Vec<f64>>,
    pub in_nehari: bool,
    pub maximizer: MaximizerReport,
    pub descent_iterations: usize,
    pub newton_residuals: Vec<f64>,
    pub left_neighborhood: bool,
    /// `β` of the stage this record was tracked from when the direct
    /// descent failed.
    pub tracked_from: Option<f64>,
}

/// Scalar part of a [`SolutionRecord`], as written to `record_beta<β>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub beta: f64,
    pub energy: f64,
    pub residual: f64,
    pub d_to_k: f64,
    pub max_overlap: f64,
    pub beta_times_max_overlap: f64,
    pub min_lambda_bar: f64,
    pub in_nehari: bool,
    pub lambda_bar: Vec<f64>,
    pub overlaps: Vec<Vec<f64>>,
    pub hessian_negdef: bool,
    pub radius_sq: f64,
    pub descent_iterations: usize,
    pub newton_iterations: usize,
    pub left_neighborhood: bool,
    pub tracked_from: Option<f64>,
}

impl SolutionRecord {
    pub fn components(&self) -> Vec<RadialField> {
        self.ensemble.components()
    }

    pub fn max_overlap(&self) -> f64 {
        max_overlap(&self.overlaps)
    }

    pub fn diagnostics(&self, profile: &NodalProfile, epsilon: f64) -> Result<DiagnosticsReport> {
        let comps = self.components();
        let (overlap_matrix, beta_overlap_matrix) = overlap_report(self.beta, &comps)?;
        Ok(DiagnosticsReport {
            d_sigma: self.d_to_k,
            energy: self.energy,
            c_infinity_ref: profile.c_value,
            per_pulse_norms: self.ensemble.pulse_norms(),
            overlap_matrix,
            beta_overlap_matrix,
            lambda_bar: self.lambda_bar.clone(),
            membership: membership(self.beta, epsilon, &self.ensemble, profile, &self.maximizer)?,
            residual_max: self.residual,
        })
    }

    pub fn summary(&self) -> RecordSummary {
        RecordSummary {
            beta: self.beta,
            energy: self.energy,
            residual: self.residual,
            d_to_k: self.d_to_k,
            max_overlap: self.max_overlap(),
            beta_times_max_overlap: self.beta * self.max_overlap(),
            min_lambda_bar: self.lambda_bar.min(),
            in_nehari: self.in_nehari,
            lambda_bar: self.lambda_bar.as_slice().to_vec(),
            overlaps: self.overlaps.clone(),
            hessian_negdef: self.maximizer.hessian_negdef,
            radius_sq: self.maximizer.radius_sq,
            descent_iterations: self.descent_iterations,
            newton_iterations: self.newton_residuals.len().saturating_sub(1),
            left_neighborhood: self.left_neighborhood,
            tracked_from: self.tracked_from,
        }
    }
}

/// Pulses `u_im = w_{σ̃⁻¹(i,m)}` taken from the bumps of the profile.
pub fn initial_guess(profile: &NodalProfile, assignment: &Assignment) -> Result<PulseEnsemble> {
    if profile.h != assignment.h() {
        return Err(Error::ShapeMismatch {
            expected: assignment.h(),
            got: profile.h,
        });
    }
    let pulses = assignment
        .pulse_bumps()
        .into_iter()
        .map(|l| profile.bumps[l].clone())
        .collect();
    PulseEnsemble::new(profile.grid.clone(), assignment.clone(), pulses)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = j;
        }
    }
    best
}

/// Index of the minimum of `v[lo..=hi]`; a run of equal minima resolves to its middle.
fn argmin_mid(v: &[f64], lo: usize, hi: usize) -> usize {
    let mut best = lo;
    for j in lo..=hi {
        if v[j] < v[best] {
            best = j;
        }
    }
    let mut end = best;
    while end < hi && v[end + 1] == v[best] {
        end += 1;
    }
    (best + end) / 2
}

/// Node ranges owned by each pulse (lexicographic order), cutting every
/// component at its minimum between consecutive pulse peaks. The Dirichlet
/// node is excluded.
fn territories(asg: &Assignment, comps: &[Vec<f64>], peaks: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); asg.h()];
    for i in 0..asg.k() {
        let count = asg.h_counts()[i];
        let first = asg.flat_index(i + 1, 1);
        let mut start = 0usize;
        for m in 0..count {
            let p = first + m;
            let end = if m + 1 < count {
                let (a, b) = (peaks[p], peaks[p + 1]);
                argmin_mid(&comps[i], a.min(b), a.max(b))
            } else {
                n - 2
            };
            out[p] = (start, end.max(start));
            start = end + 1;
        }
    }
    out
}

fn split_pulses(asg: &Assignment, comps: &[Vec<f64>], terr: &[(usize, usize)], n: usize) -> Vec<Vec<f64>> {
    let comp_of = asg.pulse_components();
    terr.iter()
        .enumerate()
        .map(|(p, &(s, e))| {
            let mut u = vec![0.0; n];
            u[s..=e].copy_from_slice(&comps[comp_of[p]][s..=e]);
            u
        })
        .collect()
}

fn ensemble_from(grid: &Arc<RadialGrid>, asg: &Assignment, pulses: Vec<Vec<f64>>) -> Result<PulseEnsemble> {
    let fields = pulses
        .into_iter()
        .map(|p| RadialField::new(grid.clone(), p))
        .collect::<Result<Vec<_>>>()?;
    PulseEnsemble::new(grid.clone(), asg.clone(), fields)
}

/// Solves `(−Δ + 1 + diag(shift)) x = rhs` on nodes `lo..=hi`, zero outside.
/// Returns the values on `lo..=hi`.
fn solve_shifted(grid: &RadialGrid, rhs: &[f64], shift: &[f64], lo: usize, hi: usize) -> Vec<f64> {
    let m = hi - lo + 1;
    let mut l = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut u = vec![0.0; m];
    for q in 0..m {
        let (a, b, c) = grid.stencil(lo + q);
        l[q] = if q == 0 { 0.0 } else { a };
        d[q] = b + shift[q];
        u[q] = if q + 1 == m { 0.0 } else { c };
    }
    solve_tridiagonal(&l, &d, &u, rhs)
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub ensemble: PulseEnsemble,
    pub m_value: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub left_neighborhood: bool,
    /// `M_β` after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// Projected gradient descent of `M_β(u) = Φ_β(Λ̄(u))`.
///
/// The descent direction for pulse `u_im` is the Riesz representer of
/// `J_β'(Λ̄u)` on the pulse's territory in the metric of
/// `−Δ + 1 + β Σ_{j≠i} U_j²`, which absorbs the stiff coupling term.
/// Negative values are clipped after every step and the iterate is rescaled
/// by its new `Λ̄`. The reported gradient norm is the dual norm
/// `(J_β'(u)[d])^{1/2}` of the projected direction `d`.
pub fn minimize_m_beta(
    beta: f64,
    start: &PulseEnsemble,
    config: &SolverConfig,
    profile: Option<&NodalProfile>,
) -> Result<DescentOutcome> {
    let grid = start.grid().clone();
    let asg = start.assignment().clone();
    let n = grid.n_points();
    let k = asg.k();

    let normalise = |ens: &PulseEnsemble| -> Result<(PulseEnsemble, f64)> {
        let rep = maximize_phi(beta, ens)?;
        Ok((ens.rescaled(rep.lambda_bar.as_slice()), rep.m_value))
    };
    // territories stay fixed during the descent so that M_β is a function of the components
    let start_comps = start.scaled_components(&vec![1.0; asg.h()]);
    let peaks: Vec<usize> = start.pulses().iter().map(|u| argmax(u.values())).collect();
    let terr = territories(&asg, &start_comps, &peaks, n);
    let start = ensemble_from(&grid, &asg, split_pulses(&asg, &start_comps, &terr, n))?;
    let (mut ens, mut m_value) = normalise(&start).map_err(|e| Error::MaximizerFailure(e.to_string()))?;
    let mut history = vec![m_value];
    let mut tau = 1.0f64;
    let mut gradient_norm = f64::INFINITY;
    let mut left = false;
    let mut iterations = 0;

    let check_distance = |ens: &PulseEnsemble, left: &mut bool| {
        if let Some(p) = profile {
            if let Ok(d) = d_sigma_distance(ens, p) {
                if d > config.epsilon && !*left {
                    warn!("beta = {beta}: ensemble left the neighborhood (d = {d:.3e} > {})", config.epsilon);
                    *left = true;
                }
            }
        }
    };

    for it in 0..config.max_iters {
        iterations = it;
        let comps = ens.scaled_components(&vec![1.0; asg.h()]);
        let refs: Vec<&[f64]> = comps.iter().map(|c| c.as_slice()).collect();
        let res = residual_vector(&grid, beta, &refs);

        let total_sq: Vec<f64> = (0..n).map(|j| comps.iter().map(|c| c[j] * c[j]).sum()).collect();
        let mut dirs = vec![vec![0.0; n]; k];
        for (p, &(s, e)) in terr.iter().enumerate() {
            let i = asg.pulse_components()[p];
            let rhs: Vec<f64> = (s..=e).map(|j| res[j * k + i]).collect();
            let shift: Vec<f64> = (s..=e)
                .map(|j| beta * (total_sq[j] - comps[i][j] * comps[i][j]))
                .collect();
            let g = solve_shifted(&grid, &rhs, &shift, s, e);
            dirs[i][s..=e].copy_from_slice(&g);
        }
        // active set: clipped nodes that the step would push further down
        let projected: Vec<Vec<f64>> = dirs
            .iter()
            .zip(&comps)
            .map(|(d, u)| d.iter().zip(u).map(|(&g, &x)| if x <= 0.0 && g > 0.0 { 0.0 } else { g }).collect())
            .collect();
        let slope: f64 = (0..k)
            .map(|i| (0..n - 1).map(|j| grid.quad_weights()[j] * projected[i][j] * res[j * k + i]).sum::<f64>())
            .sum();
        gradient_norm = slope.max(0.0).sqrt();
        if gradient_norm < config.outer_tol {
            break;
        }

        let mut accepted = None;
        let mut t = tau;
        for _ in 0..40 {
            let trial: Vec<Vec<f64>> = comps
                .iter()
                .zip(&projected)
                .map(|(u, d)| u.iter().zip(d).map(|(x, g)| (x - t * g).max(0.0)).collect())
                .collect();
            let pulses = split_pulses(&asg, &trial, &terr, n);
            if let Ok(cand) = ensemble_from(&grid, &asg, pulses) {
                match normalise(&cand) {
                    Ok((cand, m)) => {
                        if m <= m_value - 1e-4 * t * slope {
                            accepted = Some((cand, m));
                            break;
                        }
                        debug!("beta = {beta}: t = {t:e} rejected, M = {m} vs {m_value}");
                    }
                    Err(e) => debug!("beta = {beta}: t = {t:e} maximiser failed: {e}"),
                }
            }
            t *= 0.5;
        }
        let Some((cand, m)) = accepted else {
            debug!("beta = {beta}: line search stalled at iteration {it}");
            break;
        };
        ens = cand;
        m_value = m;
        history.push(m);
        tau = (2.0 * t).min(1.0);
        check_distance(&ens, &mut left);
        iterations = it + 1;
    }
    check_distance(&ens, &mut left);
    Ok(DescentOutcome {
        ensemble: ens,
        m_value,
        iterations,
        gradient_norm,
        left_neighborhood: left,
        history,
    })
}

/// Damped Newton iteration for the coupled system on the components of `ens`,
/// scaled by their `Λ̄`. Returns the components and the residual history.
pub fn newton_components(
    grid: &RadialGrid,
    beta: f64,
    mut comps: Vec<Vec<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let k = comps.len();
    let n = grid.n_points();
    let m = n - 1;
    for c in comps.iter_mut() {
        c[n - 1] = 0.0;
    }
    let res_of = |comps: &[Vec<f64>]| {
        let refs: Vec<&[f64]> = comps.iter().map(|c| c.as_slice()).collect();
        residual_vector(grid, beta, &refs)
    };
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut f = res_of(&comps);
    let mut history = vec![max_abs(&f)];
    let mut last_negative: Option<usize> = None;
    for _ in 0..max_iter {
        let res = *history.last().expect("nonempty");
        if res < tol {
            return Ok((comps, history));
        }
        let mut jac = BandMatrix::zeros(m * k, k, k);
        for j in 0..m {
            let (lo, d, up) = grid.stencil(j);
            let total_sq: f64 = comps.iter().map(|c| c[j] * c[j]).sum();
            for i in 0..k {
                let row = j * k + i;
                let u = comps[i][j];
                if j > 0 {
                    jac.add(row, row - k, lo);
                }
                if j + 1 < m {
                    jac.add(row, row + k, up);
                }
                jac.add(row, row, d - 3.0 * u * u + beta * (total_sq - u * u));
                for (q, other) in comps.iter().enumerate() {
                    if q != i {
                        jac.add(row, j * k + q, 2.0 * beta * u * other[j]);
                    }
                }
            }
        }
        let delta = jac
            .solve(&f)
            .ok_or_else(|| Error::NewtonDivergence("singular Jacobian".into()))?;
        last_negative = None;
        for j in 0..m {
            for i in 0..k {
                let v = comps[i][j] - delta[j * k + i];
                if v < -1e-10 * (1.0 + comps[i][j].abs()) {
                    last_negative.get_or_insert(i);
                }
            }
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    (0..n)
                        .map(|j| if j < m { (comps[i][j] - alpha * delta[j * k + i]).max(0.0) } else { 0.0 })
                        .collect()
                })
                .collect();
            let ft = res_of(&trial);
            let rt = max_abs(&ft);
            if rt.is_finite() && rt < res {
                comps = trial;
                f = ft;
                history.push(rt);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let res = *history.last().expect("nonempty");
    if res < tol {
        return Ok((comps, history));
    }
    match last_negative {
        Some(i) => Err(Error::NegativityPersistent(i + 1)),
        None => Err(Error::NewtonDivergence(format!("residual stalled at {res:e}"))),
    }
}

/// Newton refinement to a solution of the coupled system, followed by
/// re-extraction of the pulses at the minima of each component between
/// consecutive pulse peaks.
pub fn newton_refine(
    beta: f64,
    ens: &PulseEnsemble,
    profile: &NodalProfile,
    config: &SolverConfig,
) -> Result<SolutionRecord> {
    let grid = ens.grid().clone();
    let start = maximize_phi(beta, ens).map_err(|e| Error::MaximizerFailure(e.to_string()))?;
    let comps = ens.scaled_components(start.lambda_bar.as_slice());
    let (comps, newton_residuals) = newton_components(&grid, beta, comps, config.newton_tol, 100)?;

    let peaks: Vec<usize> = ens.pulses().iter().map(|u| argmax(u.values())).collect();
    finish_record(beta, ens, &peaks, comps, newton_residuals, profile, config)
}

fn finish_record(
    beta: f64,
    ens: &PulseEnsemble,
    peaks: &[usize],
    comps: Vec<Vec<f64>>,
    newton_residuals: Vec<f64>,
    profile: &NodalProfile,
    config: &SolverConfig,
) -> Result<SolutionRecord> {
    let grid = ens.grid().clone();
    let asg = ens.assignment().clone();
    let n = grid.n_points();
    let terr = territories(&asg, &comps, peaks, n);
    let refined = ensemble_from(&grid, &asg, split_pulses(&asg, &comps, &terr, n))?;
    let maximizer = maximize_phi(beta, &refined).map_err(|e| Error::MaximizerFailure(e.to_string()))?;
    let refs: Vec<&[f64]> = comps.iter().map(|c| c.as_slice()).collect();
    let energy = j_beta_raw(&grid, beta, &refs);
    let residual = residual_max_raw(&grid, beta, &refs);
    let overlaps = overlap_raw(&grid, &refs);
    let d_to_k = d_sigma_distance(&refined, profile)?;
    let left_neighborhood = d_to_k > config.epsilon;
    if left_neighborhood {
        warn!("beta = {beta}: refined solution at distance {d_to_k:.3e} from the target");
    }
    Ok(SolutionRecord {
        beta,
        in_nehari: maximizer.lambda_bar.max_deviation_from_one() < NEHARI_TOL,
        lambda_bar: maximizer.lambda_bar.clone(),
        maximizer,
        ensemble: refined,
        energy,
        residual,
        d_to_k,
        overlaps,
        descent_iterations: 0,
        newton_residuals,
        left_neighborhood,
        tracked_from: None,
    })
}

/// Follows the solution of `record` to `beta` by Newton steps along a
/// geometric path in `β`, shortening the step on failure.
pub fn track_beta(
    record: &SolutionRecord,
    beta: f64,
    profile: &NodalProfile,
    config: &SolverConfig,
) -> Result<SolutionRecord> {
    let grid = record.ensemble.grid().clone();
    let mut comps: Vec<Vec<f64>> = record.components().into_iter().map(|c| c.into_values()).collect();
    let mut at = record.beta;
    let mut ratio: f64 = 1.25;
    let mut residuals = Vec::new();
    while at != beta {
        let next = if beta < at { (at / ratio).max(beta) } else { (at * ratio).min(beta) };
        match newton_components(&grid, next, comps.clone(), config.newton_tol, 100) {
            Ok((c, r)) => {
                debug!("tracking: beta = {next:.6e} in {} Newton steps", r.len() - 1);
                comps = c;
                at = next;
                residuals = r;
            }
            Err(e) => {
                ratio = ratio.sqrt();
                if ratio < 1.0 + 1e-4 {
                    return Err(e);
                }
            }
        }
    }
    let peaks: Vec<usize> = record.ensemble.pulses().iter().map(|u| argmax(u.values())).collect();
    let mut rec = finish_record(beta, &record.ensemble, &peaks, comps, residuals, profile, config)?;
    rec.tracked_from = Some(record.beta);
    Ok(rec)
}

/// One continuation stage: its `β` and either the record or the error.
#[derive(Debug, Clone)]
pub struct Stage {
    pub beta: f64,
    pub outcome: Result<SolutionRecord>,
}

/// Warm-started descent + Newton over the schedule. When the warm start
/// fails the stage is retried from the target profile and then by tracking
/// the previous record in `β`. Afterwards every stage that still failed is
/// retried by tracking the nearest later successful record back to its `β`;
/// the original error is kept if that also fails.
pub fn continuation(profile: &NodalProfile, assignment: &Assignment, config: &SolverConfig) -> Result<Vec<Stage>> {
    config.validate()?;
    let origin = initial_guess(profile, assignment)?;
    let mut stages: Vec<Stage> = Vec::with_capacity(config.beta_schedule.len());
    let mut last: Option<SolutionRecord> = None;
    for &beta in &config.beta_schedule {
        let warm = last.as_ref().map_or(&origin, |r| &r.ensemble);
        let mut outcome = solve_stage(beta, warm, profile, config);
        if let (Err(e), Some(_)) = (&outcome, &last) {
            warn!("beta = {beta}: warm start failed ({e}), restarting from the target profile");
            outcome = solve_stage(beta, &origin, profile, config);
        }
        if let (Err(e), Some(prev)) = (&outcome, &last) {
            warn!("beta = {beta}: cold start failed ({e}), tracking from beta = {}", prev.beta);
            outcome = track_beta(prev, beta, profile, config);
        }
        match &outcome {
            Ok(rec) => last = Some(rec.clone()),
            Err(e) => warn!("beta = {beta}: stage failed: {e}"),
        }
        stages.push(Stage { beta, outcome });
    }
    for i in (0..stages.len()).rev() {
        if stages[i].outcome.is_ok() {
            continue;
        }
        let Some(source) = stages[i + 1..].iter().find_map(|s| s.outcome.as_ref().ok()) else {
            continue;
        };
        match track_beta(source, stages[i].beta, profile, config) {
            Ok(rec) => {
                warn!("beta = {}: recovered by tracking from beta = {}", stages[i].beta, source.beta);
                stages[i].outcome = Ok(rec);
            }
            Err(e) => warn!("beta = {}: tracking failed: {e}", stages[i].beta),
        }
    }
    Ok(stages)
}

/// Descent from `start` followed by Newton refinement at a single `β`.
pub fn solve_stage(
    beta: f64,
    start: &PulseEnsemble,
    profile: &NodalProfile,
    config: &SolverConfig,
) -> Result<SolutionRecord> {
    let descent = minimize_m_beta(beta, start, config, Some(profile))?;
    debug!(
        "beta = {beta}: descent {} iterations, M = {:.12}, |g| = {:.3e}",
        descent.iterations, descent.m_value, descent.gradient_norm
    );
    let mut rec = newton_refine(beta, &descent.ensemble, profile, config)?;
    rec.descent_iterations = descent.iterations;
    rec.left_neighborhood |= descent.left_neighborhood;
    Ok(rec)
}
