//! Uniform radial mesh on `[0, r_max]` for radial functions on R^N.
//!
//! The discrete H^1 form and the operator `-Δ + 1` are built from the same
//! ingredients (node masses `w_j` and edge weights `g_{j+1/2}`), so that for
//! every pair of fields vanishing at `r_max`
//!
//! ```text
//! <u, v>_{H^1} = Σ_j w_j v_j ((-Δ+1) u)_j
//! ```
//!
//! holds to rounding. The stencil itself is the usual second-order central
//! difference for `u'' + (N-1)/r u'`, the origin row uses `-Δu(0) = -N u''(0)`
//! with the mirrored ghost `u(-dr) = u(dr)`, and the last node carries the
//! homogeneous Dirichlet condition.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;

pub const DEFAULT_R_MAX: f64 = 40.0;
pub const DEFAULT_N_POINTS: usize = 4096;

#[derive(Debug, Clone)]
pub struct RadialGrid {
    dimension: usize,
    n_points: usize,
    r_max: f64,
    dr: f64,
    nodes: Vec<f64>,
    quad_weights: Vec<f64>,
    // g_{j+1/2}, one per edge (j, j+1)
    edge_weights: Vec<f64>,
    // tridiagonal stencil of (-Δ + 1), row-wise
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension
            && self.n_points == other.n_points
            && self.r_max == other.r_max
    }
}

/// Surface area of the unit sphere in R^N (the factor s_N in the radial measure).
pub fn sphere_factor(dimension: usize) -> f64 {
    match dimension {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    }
}

pub fn build_grid(dimension: usize, n_points: usize, r_max: f64) -> Result<Arc<RadialGrid>> {
    RadialGrid::new(dimension, n_points, r_max).map(Arc::new)
}

impl RadialGrid {
    pub fn new(dimension: usize, n_points: usize, r_max: f64) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return Err(Error::UnsupportedDimension(dimension));
        }
        if n_points < 16 {
            return Err(Error::TooFewPoints(n_points));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::InvalidGrid(format!("r_max must be positive, got {r_max}")));
        }
        let n = n_points;
        let dr = r_max / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n)
            .map(|j| if j == n - 1 { r_max } else { j as f64 * dr })
            .collect();
        let s = sphere_factor(dimension);
        let pi = std::f64::consts::PI;

        let mut quad_weights: Vec<f64> = nodes
            .iter()
            .map(|&r| s * r.powi(dimension as i32 - 1) * dr)
            .collect();
        quad_weights[n - 1] *= 0.5;
        quad_weights[0] = match dimension {
            1 => dr,
            // area of the origin cell; a zero weight here would break the
            // symmetry of the stencil under the discrete measure
            2 => pi * dr * dr / 4.0,
            _ => 0.0,
        };

        let edge_weights: Vec<f64> = (0..n - 1)
            .map(|j| match dimension {
                1 => s,
                2 => s * 0.5 * (nodes[j] + nodes[j + 1]),
                _ => s * nodes[j] * nodes[j + 1],
            })
            .collect();

        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let dr2 = dr * dr;
        for j in 0..n - 1 {
            if j == 0 {
                let c = 2.0 * dimension as f64 / dr2;
                upper[0] = -c;
                diag[0] = c + 1.0;
                continue;
            }
            let lo = edge_weights[j - 1] / (dr * quad_weights[j]);
            let hi = edge_weights[j] / (dr * quad_weights[j]);
            lower[j] = -lo;
            upper[j] = -hi;
            diag[j] = lo + hi + 1.0;
        }
        diag[n - 1] = 1.0;

        Ok(Self {
            dimension,
            n_points,
            r_max,
            dr,
            nodes,
            quad_weights,
            edge_weights,
            lower,
            diag,
            upper,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
    pub fn n_points(&self) -> usize {
        self.n_points
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn dr(&self) -> f64 {
        self.dr
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }
    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    /// Stencil coefficients of row `j` of `-Δ + 1` as (lower, diag, upper).
    pub fn stencil(&self, j: usize) -> (f64, f64, f64) {
        (self.lower[j], self.diag[j], self.upper[j])
    }

    /// Nearest node index to radius `r` (clamped to the grid).
    pub fn index_of(&self, r: f64) -> usize {
        let j = (r / self.dr).round();
        if j <= 0.0 {
            0
        } else {
            (j as usize).min(self.n_points - 1)
        }
    }

    /// `(-Δ + 1) u` on raw node values. The Dirichlet row returns `u[n-1]`.
    pub fn apply_operator(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n_points;
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut v = self.diag[j] * u[j];
            if j > 0 {
                v += self.lower[j] * u[j - 1];
            }
            if j + 1 < n {
                v += self.upper[j] * u[j + 1];
            }
            out[j] = v;
        }
        out
    }

    /// Solves `(-Δ + 1) x = rhs` on the free nodes `lo..=hi`, with `x = 0`
    /// outside. The returned vector spans the whole grid.
    pub fn solve_operator_on(&self, rhs: &[f64], lo: usize, hi: usize) -> Vec<f64> {
        let m = hi - lo + 1;
        let mut l = Vec::with_capacity(m);
        let mut d = Vec::with_capacity(m);
        let mut u = Vec::with_capacity(m);
        for j in lo..=hi {
            l.push(if j == lo { 0.0 } else { self.lower[j] });
            d.push(self.diag[j]);
            u.push(if j == hi { 0.0 } else { self.upper[j] });
        }
        let x = solve_tridiagonal(&l, &d, &u, &rhs[lo..=hi]);
        let mut out = vec![0.0; self.n_points];
        out[lo..=hi].copy_from_slice(&x);
        out
    }

    /// Solves `(-Δ + 1) x = rhs` with the Dirichlet condition at `r_max`.
    pub fn solve_operator(&self, rhs: &[f64]) -> Vec<f64> {
        self.solve_operator_on(rhs, 0, self.n_points - 2)
    }

    pub fn h1_inner_raw(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut grad = 0.0;
        for (j, g) in self.edge_weights.iter().enumerate() {
            grad += g * (u[j + 1] - u[j]) * (v[j + 1] - v[j]);
        }
        let mass: f64 = self
            .quad_weights
            .iter()
            .zip(u.iter().zip(v))
            .map(|(w, (a, b))| w * a * b)
            .sum();
        grad / self.dr + mass
    }

    pub fn integrate_raw(&self, f: &[f64]) -> f64 {
        self.quad_weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Weighted L^2 pairing `Σ w_j a_j b_j`.
    pub fn dot_raw(&self, a: &[f64], b: &[f64]) -> f64 {
        self.quad_weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// Trapezoid integral of `f` over the mesh-aligned annulus `[r_lo, r_hi]`.
    /// The end nodes get half cells, except the origin which keeps its full weight.
    pub fn integrate_annulus(&self, f: &[f64], lo: usize, hi: usize) -> f64 {
        let mut total = 0.0;
        for j in lo..=hi {
            let mut w = self.quad_weights[j];
            let interior_end = (j == lo && j != 0) || (j == hi && j != self.n_points - 1);
            if interior_end && lo != hi {
                w *= 0.5;
            }
            total += w * f[j];
        }
        total
    }
}

/// Node values of a radial function on a shared grid.
#[derive(Debug, Clone)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl PartialEq for RadialField {
    fn eq(&self, other: &Self) -> bool {
        *self.grid == *other.grid && self.values == other.values
    }
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::ShapeMismatch {
                expected: grid.n_points(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Arc<RadialGrid>) -> Self {
        Self {
            values: vec![0.0; grid.n_points()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.nodes().iter().map(|&r| f(r)).collect(),
            grid: grid.clone(),
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_same_grid(&self, other: &RadialField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// CSV with header `r,value` and 17 significant digits per entry.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,value\n");
        for (r, v) in self.grid.nodes().iter().zip(&self.values) {
            let _ = writeln!(s, "{r:.16e},{v:.16e}");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Reads a field written by [`RadialField::to_csv`]; radii must match the grid.
    pub fn read_csv(grid: &Arc<RadialGrid>, reader: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "r,value" => {}
            _ => return Err(Error::Io("missing `r,value` header".into())),
        }
        let mut values = Vec::with_capacity(grid.n_points());
        for (j, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (r, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Io(format!("malformed row {j}")))?;
            let r: f64 = r.trim().parse().map_err(|_| Error::Io(format!("bad radius in row {j}")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Io(format!("bad value in row {j}")))?;
            if j >= grid.n_points() || (r - grid.nodes()[j]).abs() > 1e-9 * grid.r_max() {
                return Err(Error::GridMismatch);
            }
            values.push(v);
        }
        Self::new(grid.clone(), values)
    }
}

/// `(-Δ + 1) u` with the radial Laplacian `u'' + (N-1)/r u'`.
pub fn apply_schrodinger(grid: &Arc<RadialGrid>, u: &RadialField) -> Result<RadialField> {
    if **u.grid() != **grid {
        return Err(Error::GridMismatch);
    }
    Ok(RadialField {
        grid: grid.clone(),
        values: grid.apply_operator(u.values()),
    })
}

pub fn h1_inner(grid: &RadialGrid, u: &RadialField, v: &RadialField) -> Result<f64> {
    u.check_same_grid(v)?;
    if **u.grid() != *grid {
        return Err(Error::GridMismatch);
    }
    Ok(grid.h1_inner_raw(u.values(), v.values()))
}

pub fn h1_norm_sq(grid: &RadialGrid, u: &RadialField) -> Result<f64> {
    h1_inner(grid, u, u)
}

/// `∫ |u|^p dx` over R^N.
pub fn lp_integral(grid: &RadialGrid, u: &RadialField, p: f64) -> f64 {
    grid.quad_weights()
        .iter()
        .zip(u.values())
        .map(|(w, v)| w * v.abs().powf(p))
        .sum()
}

pub(crate) fn l4_raw(grid: &RadialGrid, u: &[f64]) -> f64 {
    grid.quad_weights()
        .iter()
        .zip(u)
        .map(|(w, v)| {
            let s = v * v;
            w * s * s
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn soliton(r: f64) -> f64 {
        std::f64::consts::SQRT_2 / r.cosh()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(build_grid(4, 64, 1.0).unwrap_err(), Error::UnsupportedDimension(4));
        assert_eq!(build_grid(1, 15, 1.0).unwrap_err(), Error::TooFewPoints(15));
        assert!(build_grid(2, 64, -1.0).is_err());
    }

    #[test]
    fn one_dimensional_weights() {
        let g = build_grid(1, 17, 16.0).unwrap();
        assert_eq!(g.dr(), 1.0);
        assert_eq!(g.quad_weights()[5], 2.0);
        assert_eq!(g.quad_weights()[0], 1.0);
    }

    #[test]
    fn nodes_uniform_and_weights_nonnegative() {
        for dim in 1..=3 {
            let g = build_grid(dim, 300, 13.0).unwrap();
            let dr = g.dr();
            for w in g.nodes().windows(2) {
                assert!(((w[1] - w[0]) - dr).abs() <= 1e-12 * dr);
            }
            assert!(g.quad_weights().iter().all(|&w| w >= 0.0));
        }
        assert_eq!(build_grid(3, 64, 1.0).unwrap().quad_weights()[0], 0.0);
    }

    #[test]
    fn disc_area_in_two_dimensions() {
        let g = build_grid(2, 2049, 40.0).unwrap();
        let one = vec![1.0; g.n_points()];
        let j10 = g.index_of(10.0);
        assert!((g.nodes()[j10] - 10.0).abs() < 1e-12);
        let area = g.integrate_annulus(&one, 0, j10);
        assert!((area - 100.0 * PI).abs() < 0.1, "{area}");
    }

    #[test]
    fn ball_volume_second_order() {
        let mut errs = Vec::new();
        for &n in &[201, 401, 801] {
            let g = build_grid(3, n, 10.0).unwrap();
            let one = vec![1.0; n];
            let j = g.index_of(5.0);
            let vol = g.integrate_annulus(&one, 0, j);
            errs.push((vol - 4.0 * PI * 125.0 / 3.0).abs());
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let g = build_grid(3, 64, 8.0).unwrap();
        let z = RadialField::zeros(&g);
        let out = apply_schrodinger(&g, &z).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
        assert_eq!(h1_norm_sq(&g, &z).unwrap(), 0.0);
        assert_eq!(lp_integral(&g, &z, 4.0), 0.0);
    }

    fn soliton_residual(n: usize) -> f64 {
        let g = build_grid(1, n, 20.0).unwrap();
        let u = RadialField::from_fn(&g, soliton);
        let au = apply_schrodinger(&g, &u).unwrap();
        (0..n - 1)
            .map(|j| (au.values()[j] - u.values()[j].powi(3)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn soliton_residual_converges_at_order_two() {
        let e1 = soliton_residual(401);
        let e2 = soliton_residual(801);
        let e3 = soliton_residual(1601);
        assert!(e1 < 1e-2);
        let o1 = (e1 / e2).log2();
        let o2 = (e2 / e3).log2();
        assert!(o1 > 1.9 && o2 > 1.9, "orders {o1} {o2}");
    }

    #[test]
    fn gaussian_against_symbolic_laplacian() {
        // (-Δ + 1) e^{-r^2} = (1 + 2N - 4 r^2) e^{-r^2}
        for dim in 1..=3 {
            let mut errs = Vec::new();
            for &n in &[401, 801] {
                let g = build_grid(dim, n, 8.0).unwrap();
                let u = RadialField::from_fn(&g, |r| (-r * r).exp());
                let au = apply_schrodinger(&g, &u).unwrap();
                let err = g.nodes()[..n - 1]
                    .iter()
                    .zip(au.values())
                    .map(|(&r, &v)| (v - (1.0 + 2.0 * dim as f64 - 4.0 * r * r) * (-r * r).exp()).abs())
                    .fold(0.0, f64::max);
                errs.push(err);
            }
            assert!(errs[0] < 1e-2 && errs[0] / errs[1] > 3.5, "N={dim}: {errs:?}");
        }
    }

    #[test]
    fn soliton_norm_and_quartic_integral() {
        let g = build_grid(1, 4096, 40.0).unwrap();
        let u = RadialField::from_fn(&g, soliton);
        let n2 = h1_norm_sq(&g, &u).unwrap();
        let l4 = lp_integral(&g, &u, 4.0);
        assert!((n2 - 16.0 / 3.0).abs() < 1e-3, "{n2}");
        assert!((l4 - 16.0 / 3.0).abs() < 1e-3, "{l4}");
        let scaled = lp_integral(&g, &u.scaled(1.7), 4.0);
        assert!((scaled - 1.7f64.powi(4) * l4).abs() <= 1e-12 * scaled);
    }

    #[test]
    fn operator_is_self_adjoint_and_matches_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=3 {
            let g = build_grid(dim, 257, 12.0).unwrap();
            let n = g.n_points();
            let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            u[n - 1] = 0.0;
            v[n - 1] = 0.0;
            let au = g.apply_operator(&u);
            let av = g.apply_operator(&v);
            let lhs = g.dot_raw(&au, &v);
            let rhs = g.dot_raw(&u, &av);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "N={dim}: {lhs} {rhs}");
            let form = g.h1_inner_raw(&u, &v);
            assert!((form - lhs).abs() <= 1e-10 * lhs.abs().max(1.0), "N={dim}: {form} {lhs}");
        }
    }

    #[test]
    fn solve_inverts_apply() {
        let g = build_grid(3, 200, 10.0).unwrap();
        let rhs: Vec<f64> = g.nodes().iter().map(|r| (-r).exp()).collect();
        let x = g.solve_operator(&rhs);
        let back = g.apply_operator(&x);
        for j in 0..g.n_points() - 1 {
            assert!((back[j] - rhs[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = build_grid(2, 32, 3.0).unwrap();
        let u = RadialField::from_fn(&g, |r| (1.0 / 3.0) * (-r).exp());
        let text = u.to_csv();
        assert!(text.starts_with("r,value\n"));
        let back = RadialField::read_csv(&g, text.as_bytes()).unwrap();
        assert_eq!(back, u);
    }
}
