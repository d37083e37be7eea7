//! Finite-dimensional reduction: scaling each pulse by `λ_im` turns the
//! coupled energy into the quartic polynomial
//!
//! ```text
//! Φ_β(Λ) = ½ Λᵀ G Λ + Σ_{abcd} T_abcd λ_a λ_b λ_c λ_d
//! ```
//!
//! with `G` the H¹ Gram matrix of same-component pulses and `T` built from
//! the quartic overlap integrals `∫u_a u_b u_c u_d`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::error::{Error, Result};
use crate::grid::{RadialField, RadialGrid};

/// Gradient tolerance for an accepted maximiser.
pub const GRADIENT_TOL: f64 = 1e-10;
const DEGENERATE_NORM: f64 = 1e-10;
const P4_DIRECTIONS: usize = 64;

/// Nonnegative pulses `u_im`, stored in lexicographic `(i, m)` order.
#[derive(Debug, Clone)]
pub struct PulseEnsemble {
    grid: Arc<RadialGrid>,
    assignment: Assignment,
    pulses: Vec<RadialField>,
}

impl PulseEnsemble {
    pub fn new(grid: Arc<RadialGrid>, assignment: Assignment, pulses: Vec<RadialField>) -> Result<Self> {
        if pulses.len() != assignment.h() {
            return Err(Error::ShapeMismatch {
                expected: assignment.h(),
                got: pulses.len(),
            });
        }
        for (p, u) in pulses.iter().enumerate() {
            if **u.grid() != *grid {
                return Err(Error::GridMismatch);
            }
            if !u.is_nonnegative() {
                return Err(Error::NegativePulse(p));
            }
        }
        Ok(Self {
            grid,
            assignment,
            pulses,
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }
    pub fn pulses(&self) -> &[RadialField] {
        &self.pulses
    }
    pub fn h(&self) -> usize {
        self.pulses.len()
    }
    pub fn k(&self) -> usize {
        self.assignment.k()
    }

    /// Pulse `u_im`, 1-based double index.
    pub fn pulse(&self, i: usize, m: usize) -> &RadialField {
        &self.pulses[self.assignment.flat_index(i, m)]
    }

    /// `U_i = Σ_m λ_im u_im` for every component.
    pub fn scaled_components(&self, lambda: &[f64]) -> Vec<Vec<f64>> {
        let n = self.grid.n_points();
        let mut out = vec![vec![0.0; n]; self.k()];
        for (p, &i) in self.assignment.pulse_components().iter().enumerate() {
            for (o, v) in out[i].iter_mut().zip(self.pulses[p].values()) {
                *o += lambda[p] * v;
            }
        }
        out
    }

    pub fn components(&self) -> Vec<RadialField> {
        self.scaled_components(&vec![1.0; self.h()])
            .into_iter()
            .map(|v| RadialField::new(self.grid.clone(), v).expect("grid length"))
            .collect()
    }

    pub fn pulse_norms(&self) -> Vec<f64> {
        self.pulses
            .iter()
            .map(|u| self.grid.h1_inner_raw(u.values(), u.values()).sqrt())
            .collect()
    }

    /// Every pulse multiplied by its `λ_im`.
    pub fn rescaled(&self, lambda: &[f64]) -> Self {
        Self {
            grid: self.grid.clone(),
            assignment: self.assignment.clone(),
            pulses: self.pulses.iter().zip(lambda).map(|(u, &l)| u.scaled(l)).collect(),
        }
    }

    fn check_nondegenerate(&self) -> Result<()> {
        match self.pulse_norms().iter().position(|&n| !(n >= DEGENERATE_NORM)) {
            Some(p) => Err(Error::DegeneratePulse(p)),
            None => Ok(()),
        }
    }
}

/// Strictly positive pulse scalings, indexed as the pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaVector(Vec<f64>);

impl LambdaVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(Self(entries))
        } else {
            Err(Error::InvalidGrid("scalings must be finite and positive".into()))
        }
    }
    pub fn ones(h: usize) -> Self {
        Self(vec![1.0; h])
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    /// Largest `|λ_im − 1|`.
    pub fn max_deviation_from_one(&self) -> f64 {
        self.0.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for LambdaVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LambdaVector> for Vec<f64> {
    fn from(l: LambdaVector) -> Self {
        l.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaximizerReport {
    pub lambda_bar: LambdaVector,
    pub m_value: f64,
    pub gradient_norm: f64,
    pub hessian_negdef: bool,
    pub min_lambda: f64,
    pub radius_sq: f64,
    pub miranda_box: Option<(f64, f64)>,
}

/// `J_β(U) = Σ_i [½‖U_i‖² − ¼∫U_i⁴] + (β/4) Σ_{i≠j} ∫U_i²U_j²`.
pub fn j_beta(beta: f64, components: &[RadialField]) -> Result<f64> {
    let Some(first) = components.first() else { return Ok(0.0) };
    for c in components {
        first.check_same_grid(c)?;
    }
    let grid = first.grid();
    let raw: Vec<&[f64]> = components.iter().map(|c| c.values()).collect();
    Ok(j_beta_raw(grid, beta, &raw))
}

pub(crate) fn j_beta_raw(grid: &RadialGrid, beta: f64, comps: &[&[f64]]) -> f64 {
    let w = grid.quad_weights();
    let mut total = 0.0;
    for u in comps {
        total += 0.5 * grid.h1_inner_raw(u, u);
    }
    for j in 0..w.len() {
        let sq: Vec<f64> = comps.iter().map(|u| u[j] * u[j]).collect();
        let sum: f64 = sq.iter().sum();
        let self_quartic: f64 = sq.iter().map(|s| s * s).sum();
        // Σ_{i≠j} U_i²U_j² = (ΣU²)² − ΣU⁴
        total += w[j] * (-0.25 * self_quartic + 0.25 * beta * (sum * sum - self_quartic));
    }
    total
}

/// Precomputed coefficients of `Φ_β` for one ensemble.
#[derive(Debug, Clone)]
pub struct PhiModel {
    h: usize,
    gram: DMatrix<f64>,
    // symmetric quartic tensor, row-major h^4
    quartic: Vec<f64>,
}

impl PhiModel {
    pub fn new(beta: f64, ens: &PulseEnsemble) -> Result<Self> {
        let h = ens.h();
        let grid = ens.grid();
        let comp = ens.assignment().pulse_components();
        let pulses: Vec<&[f64]> = ens.pulses().iter().map(|u| u.values()).collect();
        let mut gram = DMatrix::zeros(h, h);
        for a in 0..h {
            for b in a..h {
                if comp[a] == comp[b] {
                    let v = grid.h1_inner_raw(pulses[a], pulses[b]);
                    gram[(a, b)] = v;
                    gram[(b, a)] = v;
                }
            }
        }
        let w = grid.quad_weights();
        let mut quartic = vec![0.0; h * h * h * h];
        let idx = |a: usize, b: usize, c: usize, d: usize| ((a * h + b) * h + c) * h + d;
        for a in 0..h {
            for b in a..h {
                for c in b..h {
                    for d in c..h {
                        let mut ids = [comp[a], comp[b], comp[c], comp[d]];
                        ids.sort_unstable();
                        let coef = if ids[0] == ids[3] {
                            -0.25
                        } else if ids[0] == ids[1] && ids[2] == ids[3] {
                            // one of the three pairings of {i,i,j,j} matches
                            beta / 12.0
                        } else {
                            0.0
                        };
                        if coef == 0.0 {
                            continue;
                        }
                        let q: f64 = (0..w.len())
                            .map(|j| w[j] * pulses[a][j] * pulses[b][j] * pulses[c][j] * pulses[d][j])
                            .sum();
                        let v = coef * q;
                        if v == 0.0 {
                            continue;
                        }
                        for p in permutations([a, b, c, d]) {
                            quartic[idx(p[0], p[1], p[2], p[3])] = v;
                        }
                    }
                }
            }
        }
        Ok(Self { h, gram, quartic })
    }

    pub fn dim(&self) -> usize {
        self.h
    }

    fn check(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.h {
            return Err(Error::ShapeMismatch {
                expected: self.h,
                got: lambda.len(),
            });
        }
        Ok(())
    }

    /// `Σ_{cd} T_abcd λ_c λ_d` for every (a, b).
    fn contract2(&self, l: &[f64]) -> DMatrix<f64> {
        let h = self.h;
        let mut m = DMatrix::zeros(h, h);
        for a in 0..h {
            for b in a..h {
                let base = (a * h + b) * h * h;
                let mut s = 0.0;
                for c in 0..h {
                    let row = &self.quartic[base + c * h..base + c * h + h];
                    let inner: f64 = row.iter().zip(l).map(|(t, x)| t * x).sum();
                    s += l[c] * inner;
                }
                m[(a, b)] = s;
                m[(b, a)] = s;
            }
        }
        m
    }

    /// `P₂(Λ) = ΛᵀGΛ`.
    pub fn p2(&self, l: &[f64]) -> f64 {
        let v = DVector::from_column_slice(l);
        v.dot(&(&self.gram * &v))
    }

    /// `P₄(Λ) = 4 Σ T λλλλ`, so that `Φ(tΛ) = t²P₂/2 + t⁴P₄/4`.
    pub fn p4(&self, l: &[f64]) -> f64 {
        let v = DVector::from_column_slice(l);
        4.0 * v.dot(&(self.contract2(l) * &v))
    }

    pub fn value(&self, l: &[f64]) -> f64 {
        0.5 * self.p2(l) + 0.25 * self.p4(l)
    }

    pub fn gradient(&self, l: &[f64]) -> DVector<f64> {
        let v = DVector::from_column_slice(l);
        &self.gram * &v + 4.0 * (self.contract2(l) * &v)
    }

    pub fn hessian(&self, l: &[f64]) -> DMatrix<f64> {
        &self.gram + 12.0 * self.contract2(l)
    }

    /// Largest diagonal Gram entry, the natural scale of Φ.
    fn scale(&self) -> f64 {
        (0..self.h).map(|a| self.gram[(a, a)]).fold(1.0, f64::max)
    }
}

fn permutations(v: [usize; 4]) -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                if a == b || b == c || a == c {
                    continue;
                }
                let d = 6 - a - b - c;
                out.push([v[a], v[b], v[c], v[d]]);
            }
        }
    }
    out
}

pub fn phi(beta: f64, ens: &PulseEnsemble, lambda: &[f64]) -> Result<f64> {
    let m = PhiModel::new(beta, ens)?;
    m.check(lambda)?;
    Ok(m.value(lambda))
}

pub fn grad_phi(beta: f64, ens: &PulseEnsemble, lambda: &[f64]) -> Result<Vec<f64>> {
    let m = PhiModel::new(beta, ens)?;
    m.check(lambda)?;
    Ok(m.gradient(lambda).iter().cloned().collect())
}

pub fn hess_phi(beta: f64, ens: &PulseEnsemble, lambda: &[f64]) -> Result<DMatrix<f64>> {
    let m = PhiModel::new(beta, ens)?;
    m.check(lambda)?;
    Ok(m.hessian(lambda))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Rejects ensembles with `P₄ ≥ 0` along a sampled positive direction.
fn check_bounded(model: &PhiModel) -> Result<()> {
    let h = model.h;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut dirs = vec![vec![1.0; h]];
    for _ in 0..P4_DIRECTIONS {
        dirs.push(
            (0..h)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x.abs()
                })
                .collect(),
        );
    }
    for d in dirs {
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let unit: Vec<f64> = d.iter().map(|x| x / norm).collect();
        if model.p4(&unit) >= 0.0 {
            return Err(Error::UnboundedEnergy);
        }
    }
    Ok(())
}

fn newton_maximize(model: &PhiModel, start: &[f64], max_iter: usize) -> Option<Vec<f64>> {
    let h = model.h;
    let scale = model.scale();
    let mut l = start.to_vec();
    for _ in 0..max_iter {
        let g = model.gradient(&l);
        if g.norm() < GRADIENT_TOL {
            return Some(l);
        }
        let hess = model.hessian(&l);
        let neg = -&hess;
        let eig_min = SymmetricEigen::new(neg.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let definite = eig_min > 1e-10 * scale;
        let shifted = if definite {
            neg
        } else {
            neg + DMatrix::identity(h, h) * (1e-3 * scale - eig_min)
        };
        let d = shifted.cholesky()?.solve(&g);
        let f0 = model.value(&l);
        let slope = g.dot(&d);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = l.iter().zip(d.iter()).map(|(x, s)| x + alpha * s).collect();
            if trial.iter().all(|&x| x > 0.0) {
                let ft = model.value(&trial);
                // close to the maximum Φ is flat to rounding: accept gradient decrease
                let near = definite && g.norm() < 1e-6 * scale;
                if ft >= f0 + 1e-4 * alpha * slope || (near && model.gradient(&trial).norm() < g.norm()) {
                    l = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return (model.gradient(&l).norm() < GRADIENT_TOL).then_some(l);
        }
    }
    (model.gradient(&l).norm() < GRADIENT_TOL).then_some(l)
}

/// Gradient ascent in `μ = log λ`, which keeps the scalings positive.
fn log_ascent(model: &PhiModel, start: &[f64], max_iter: usize) -> Vec<f64> {
    let mut mu: Vec<f64> = start.iter().map(|x| x.ln()).collect();
    let mut step = 1.0 / model.scale();
    let lam = |mu: &[f64]| mu.iter().map(|m| m.exp()).collect::<Vec<_>>();
    for _ in 0..max_iter {
        let l = lam(&mu);
        let g = model.gradient(&l);
        let gm: Vec<f64> = l.iter().zip(g.iter()).map(|(x, gi)| x * gi).collect();
        let gsq: f64 = gm.iter().map(|x| x * x).sum();
        if gsq.sqrt() < 1e-8 {
            break;
        }
        let f0 = model.value(&l);
        let mut t = step;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = mu.iter().zip(&gm).map(|(m, gi)| m + t * gi).collect();
            if model.value(&lam(&trial)) >= f0 + 1e-4 * t * gsq {
                mu = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        step = 2.0 * t;
    }
    lam(&mu)
}

fn report(model: &PhiModel, l: Vec<f64>) -> Result<MaximizerReport> {
    let gradient_norm = model.gradient(&l).norm();
    if !(gradient_norm < GRADIENT_TOL) {
        return Err(Error::NonConvergence(format!("gradient norm {gradient_norm:e}")));
    }
    let top = max_eigenvalue(&model.hessian(&l));
    if !(top < 0.0) {
        return Err(Error::NonConvergence(format!(
            "critical point is not a maximum (largest Hessian eigenvalue {top:e})"
        )));
    }
    let hessian_negdef = true;
    let lambda_bar = LambdaVector::new(l)?;
    Ok(MaximizerReport {
        m_value: model.value(lambda_bar.as_slice()),
        gradient_norm,
        hessian_negdef,
        min_lambda: lambda_bar.min(),
        radius_sq: lambda_bar.as_slice().iter().map(|x| x * x).sum(),
        lambda_bar,
        miranda_box: None,
    })
}

/// Maximiser of `Φ_β` from a given positive start.
pub fn maximize_from(model: &PhiModel, start: &[f64]) -> Result<MaximizerReport> {
    model.check(start)?;
    if let Some(Ok(rep)) = newton_maximize(model, start, 100).map(|l| report(model, l)) {
        return Ok(rep);
    }
    let warm = log_ascent(model, start, 20_000);
    match newton_maximize(model, &warm, 100) {
        Some(l) => report(model, l),
        None => Err(Error::NonConvergence("Newton failed after log-ascent warm start".into())),
    }
}

/// `Λ̄` and `M_β = Φ_β(Λ̄)`, Newton started at `Λ = 1`.
pub fn maximize_phi(beta: f64, ens: &PulseEnsemble) -> Result<MaximizerReport> {
    ens.check_nondegenerate()?;
    let model = PhiModel::new(beta, ens)?;
    check_bounded(&model)?;
    maximize_from(&model, &vec![1.0; ens.h()])
}

/// Maximisers from `starts` random points of `(0, radius]^h`, in parallel.
pub fn multistart(
    beta: f64,
    ens: &PulseEnsemble,
    starts: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<MaximizerReport>> {
    ens.check_nondegenerate()?;
    let model = PhiModel::new(beta, ens)?;
    check_bounded(&model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(0.0, radius).map_err(|e| Error::Config(e.to_string()))?;
    let points: Vec<Vec<f64>> = (0..starts)
        .map(|_| (0..ens.h()).map(|_| radius - dist.sample(&mut rng)).collect())
        .collect();
    points.par_iter().map(|p| maximize_from(&model, p)).collect()
}

/// Node ranges where each bump's component is positive, in bump order.
fn owner_runs(ens: &PulseEnsemble) -> Result<Vec<(usize, usize, usize)>> {
    let comps = ens.scaled_components(&vec![1.0; ens.h()]);
    let n = ens.grid().n_points();
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    for j in 0..n {
        let mut owner = None;
        for (i, c) in comps.iter().enumerate() {
            if c[j] > 0.0 {
                if owner.is_some() {
                    return Err(Error::OverlappingComponents);
                }
                owner = Some(i);
            }
        }
        if let Some(i) = owner {
            match runs.last_mut() {
                Some((oi, _, end)) if *oi == i && *end + 1 == j => *end = j,
                _ => runs.push((i, j, j)),
            }
        }
    }
    // merge runs of one component separated only by zero nodes
    let mut merged: Vec<(usize, usize, usize)> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if last.0 == r.0 => last.2 = r.2,
            _ => merged.push(r),
        }
    }
    let order: Vec<usize> = merged.iter().map(|r| r.0 + 1).collect();
    if order != ens.assignment().sigma() {
        return Err(Error::OverlappingComponents);
    }
    Ok(merged)
}

/// Sign box `[t, T]^h` for the annulus-restricted Nehari functions
/// `F_im = ‖ṽ_im‖² − ∫ṽ_im⁴`, `ṽ_im = (Λ_i U_i)|_{A_im}`.
///
/// `β` does not enter: with disjoint components the coupling vanishes.
pub fn miranda_box(_beta: f64, ens: &PulseEnsemble) -> Result<(f64, f64)> {
    ens.check_nondegenerate()?;
    let runs = owner_runs(ens)?;
    let grid = ens.grid();
    let asg = ens.assignment();
    let n = grid.n_points();

    // per bump: the pulses of its component masked to its annulus
    struct Face {
        own: usize,
        gram: DMatrix<f64>,
        quartic: Vec<f64>,
    }
    let mut faces = Vec::with_capacity(asg.h());
    for (l, &(i, lo, hi)) in runs.iter().enumerate() {
        let pulses = asg.pulses_of(i + 1)?;
        let masked: Vec<Vec<f64>> = (1..=pulses.len())
            .map(|m| {
                let u = ens.pulse(i + 1, m).values();
                (0..n).map(|j| if (lo..=hi).contains(&j) { u[j] } else { 0.0 }).collect()
            })
            .collect();
        let hi_ = masked.len();
        let mut gram = DMatrix::zeros(hi_, hi_);
        let mut quartic = vec![0.0; hi_.pow(4)];
        for a in 0..hi_ {
            for b in 0..hi_ {
                gram[(a, b)] = grid.h1_inner_raw(&masked[a], &masked[b]);
                for c in 0..hi_ {
                    for d in 0..hi_ {
                        let v: f64 = (lo..=hi)
                            .map(|j| {
                                grid.quad_weights()[j] * masked[a][j] * masked[b][j] * masked[c][j] * masked[d][j]
                            })
                            .sum();
                        quartic[((a * hi_ + b) * hi_ + c) * hi_ + d] = v;
                    }
                }
            }
        }
        let own = asg.sigma_tilde(l + 1).1 - 1;
        faces.push(Face { own, gram, quartic });
    }

    let eval = |f: &Face, l: &[f64]| -> f64 {
        let m = l.len();
        let v = DVector::from_column_slice(l);
        let mut q = 0.0;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    for d in 0..m {
                        q += f.quartic[((a * m + b) * m + c) * m + d] * l[a] * l[b] * l[c] * l[d];
                    }
                }
            }
        }
        v.dot(&(&f.gram * &v)) - q
    };

    'q: for q in 1..=20 {
        let t = 2f64.powi(-q);
        let big = 2f64.powi(q);
        let axis: Vec<f64> = (0..5).map(|s| t + (big - t) * s as f64 / 4.0).collect();
        for f in &faces {
            let m = f.gram.nrows();
            let others = m - 1;
            for (face_val, want_positive) in [(t, true), (big, false)] {
                for code in 0..5usize.pow(others as u32) {
                    let mut l = vec![0.0; m];
                    let mut c = code;
                    for (a, x) in l.iter_mut().enumerate() {
                        if a == f.own {
                            *x = face_val;
                        } else {
                            *x = axis[c % 5];
                            c /= 5;
                        }
                    }
                    let v = eval(f, &l);
                    if (want_positive && !(v > 0.0)) || (!want_positive && !(v < 0.0)) {
                        continue 'q;
                    }
                }
            }
        }
        return Ok((t, big));
    }
    Err(Error::MirandaNotFound)
}
