//! End-to-end acceptance suite. Every check prints one PASS/FAIL line; the
//! test fails if any check fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::SymmetricEigen;
use nodalsep::cli::{cmd_sweep, read_sweep_csv};
use nodalsep::config::ExperimentConfig;
use nodalsep::coupled::{SolutionRecord, Stage};
use nodalsep::grid::{h1_norm_sq, lp_integral};
use nodalsep::nehari::{grad_phi, hess_phi, j_beta, maximize_phi, multistart, phi, PhiModel, PulseEnsemble};
use nodalsep::scalar::{compute_c_infinity, find_nodal_solution, NodalProfile};
use nodalsep::{build_assignment, build_grid, RadialField, RadialGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

fn soliton_oracle() -> Check {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let mut errors = Vec::new();
    for n in [cfg.n_points / 4, cfg.n_points / 2, cfg.n_points] {
        let g = build_grid(1, n, cfg.r_max).unwrap();
        let p = find_nodal_solution(&g, 1).unwrap();
        errors.push((p.c_value - 4.0 / 3.0).abs());
    }
    let elapsed = start.elapsed();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = errors[2] < 1e-3 && ratios.iter().all(|r| (3.0..5.0).contains(r)) && elapsed < Duration::from_secs(5);
    check(
        "soliton energy 4/3 with second-order refinement",
        pass,
        format!("errors {:?}, ratios {ratios:.3?}, {elapsed:.2?}", errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()),
    )
}

fn cross_method_agreement() -> Check {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let mut worst_rel = 0.0f64;
    let mut worst_radius = 0.0f64;
    let mut failures = Vec::new();
    for n in [2usize, 3] {
        let g = build_grid(n, cfg.n_points, cfg.r_max).unwrap();
        for h in 1..=5 {
            match (compute_c_infinity(&g, h), find_nodal_solution(&g, h)) {
                (Ok(a), Ok(b)) => {
                    let rel = (a.c_value - b.c_value).abs() / a.c_value;
                    worst_rel = worst_rel.max(rel);
                    let dr = a
                        .node_radii
                        .iter()
                        .zip(&b.node_radii)
                        .map(|(x, y)| (x - y).abs() / g.dr())
                        .fold(0.0, f64::max);
                    worst_radius = worst_radius.max(dr);
                    if rel >= 1e-4 || dr > 2.0 || a.node_radii.len() != b.node_radii.len() {
                        failures.push(format!("N={n} h={h}"));
                    }
                }
                (a, b) => failures.push(format!("N={n} h={h}: {:?} {:?}", a.err(), b.err())),
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        "partition and shooting routes agree",
        failures.is_empty() && elapsed < Duration::from_secs(300),
        format!("max rel {worst_rel:.2e}, max radius gap {worst_radius:.1} dr, {elapsed:.1?}, failures {failures:?}"),
    )
}

fn pulse(grid: &Arc<RadialGrid>, centre: f64, width: f64, height: f64) -> RadialField {
    let rm = grid.r_max();
    RadialField::from_fn(grid, |r| {
        if r >= rm {
            0.0
        } else {
            height * (-((r - centre) / width).powi(2)).exp() * (1.0 - r / rm)
        }
    })
}

/// Coarse-to-fine grid search of `Φ` over `[lo, hi]^h`, finishing with step `1e-3`.
fn brute_force_max(model: &PhiModel, lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let h = model.dim();
    let mut best = (vec![lo; h], f64::NEG_INFINITY);
    let mut centre = vec![(lo + hi) / 2.0; h];
    let mut half = (hi - lo) / 2.0;
    for step in [2e-2, 1e-3] {
        let counts = (2.0 * half / step).round() as usize + 1;
        let mut idx = vec![0usize; h];
        loop {
            let l: Vec<f64> = (0..h).map(|d| (centre[d] - half + idx[d] as f64 * step).max(0.0)).collect();
            let v = model.value(&l);
            if v > best.1 {
                best = (l, v);
            }
            let mut d = 0;
            while d < h {
                idx[d] += 1;
                if idx[d] < counts {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == h {
                break;
            }
        }
        centre = best.0.clone();
        half = 0.05;
    }
    best
}

fn nehari_closed_form() -> Check {
    let g = build_grid(2, 1024, 20.0).unwrap();
    let mut notes = Vec::new();
    let mut pass = true;

    for (i, (c, w, a)) in [(0.0, 1.5, 2.0), (4.0, 1.0, 0.7), (2.0, 3.0, 5.0)].iter().enumerate() {
        let u = pulse(&g, *c, *w, *a);
        let aa = h1_norm_sq(&g, &u).unwrap();
        let bb = lp_integral(&g, &u, 4.0);
        let ens = PulseEnsemble::new(g.clone(), build_assignment(&[1]).unwrap(), vec![u]).unwrap();
        let rep = maximize_phi(3.0, &ens).unwrap();
        let lam = (aa / bb).sqrt();
        let val = aa * aa / (4.0 * bb);
        let e1 = (rep.lambda_bar.as_slice()[0] - lam).abs() / lam;
        let e2 = (rep.m_value - val).abs() / val;
        pass &= e1 < 1e-12 && e2 < 1e-12;
        notes.push(format!("single {i}: {e1:.1e}/{e2:.1e}"));
    }

    let cases: [(&[i64], f64, [(f64, f64, f64); 3]); 4] = [
        (&[1, 2], 0.5, [(0.0, 1.5, 2.0), (3.0, 1.2, 1.0), (0.0, 0.0, 0.0)]),
        (&[1, 2, 1], 0.3, [(0.0, 1.2, 2.5), (2.5, 1.0, 1.2), (5.0, 1.5, 0.9)]),
        (&[1, 2, 3], 0.2, [(0.0, 1.2, 2.0), (2.0, 1.0, 1.5), (4.0, 1.0, 1.0)]),
        (&[2, 1, 2], 2.0, [(0.0, 1.0, 3.0), (3.0, 0.8, 1.3), (6.0, 1.0, 0.8)]),
    ];
    for (sigma, beta, shapes) in cases {
        let asg = build_assignment(sigma).unwrap();
        let bumps: Vec<RadialField> = shapes[..sigma.len()].iter().map(|(c, w, a)| pulse(&g, *c, *w, *a)).collect();
        // pulses are stored in (component, rank) order
        let pulses: Vec<RadialField> = asg.pulse_bumps().iter().map(|&l| bumps[l].clone()).collect();
        let ens = PulseEnsemble::new(g.clone(), asg, pulses).unwrap();
        let rep = maximize_phi(beta, &ens).unwrap();
        let model = PhiModel::new(beta, &ens).unwrap();
        let (arg, best) = brute_force_max(&model, 0.0, 3.0);
        let excess = (best - rep.m_value) / rep.m_value.abs();
        let dist = arg
            .iter()
            .zip(rep.lambda_bar.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let ok = excess <= 1e-12 && -excess < 1e-5 && dist <= 1e-3;
        pass &= ok;
        notes.push(format!("sigma {sigma:?}: gap {:.1e}, dist {dist:.1e}", -excess));
    }
    check("Nehari maximiser closed form and grid search", pass, notes.join("; "))
}

fn derivative_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = build_grid(2, 512, 16.0).unwrap();
    let mut worst_g = 0.0f64;
    let mut worst_h = 0.0f64;
    let mut worst_j = 0.0f64;
    for _ in 0..100 {
        let h = rng.random_range(1..=5usize);
        let k = rng.random_range(1..=h.min(3));
        let mut sigma: Vec<i64> = Vec::with_capacity(h);
        while sigma.len() < h {
            let c = rng.random_range(1..=k as i64);
            if sigma.last() != Some(&c) || k == 1 {
                sigma.push(c);
            }
        }
        if k == 1 {
            sigma = vec![1];
        }
        for i in 1..=k as i64 {
            if !sigma.contains(&i) {
                sigma.push(i);
            }
        }
        let Ok(asg) = build_assignment(&sigma) else { continue };
        let hh = asg.h();
        let pulses: Vec<RadialField> = (0..hh)
            .map(|_| {
                pulse(
                    &g,
                    rng.random_range(0.0..8.0),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.3..2.0),
                )
            })
            .collect();
        let ens = PulseEnsemble::new(g.clone(), asg, pulses).unwrap();
        let beta = rng.random_range(0.0..50.0);
        let lam: Vec<f64> = (0..hh).map(|_| rng.random_range(0.5..2.0)).collect();
        let f = |l: &[f64]| phi(beta, &ens, l).unwrap();

        let direct: Vec<RadialField> = ens
            .scaled_components(&lam)
            .into_iter()
            .map(|v| RadialField::new(g.clone(), v).unwrap())
            .collect();
        let jv = j_beta(beta, &direct).unwrap();
        worst_j = worst_j.max((jv - f(&lam)).abs() / (1.0 + jv.abs()));

        let grad = grad_phi(beta, &ens, &lam).unwrap();
        let hess = hess_phi(beta, &ens, &lam).unwrap();
        let gnorm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        let hnorm = hess.norm();
        let s = 1e-2;
        let shifted = |d: &[(usize, f64)]| {
            let mut l = lam.clone();
            for &(i, t) in d {
                l[i] += t;
            }
            f(&l)
        };
        for i in 0..hh {
            // five-point stencil: exact on quartics
            let fd = (-shifted(&[(i, 2.0 * s)]) + 8.0 * shifted(&[(i, s)]) - 8.0 * shifted(&[(i, -s)])
                + shifted(&[(i, -2.0 * s)]))
                / (12.0 * s);
            worst_g = worst_g.max((fd - grad[i]).abs() / (1.0 + gnorm));
            for j in 0..hh {
                let mixed = |t: f64| {
                    if i == j {
                        (shifted(&[(i, t)]) - 2.0 * f(&lam) + shifted(&[(i, -t)])) / (t * t)
                    } else {
                        (shifted(&[(i, t), (j, t)]) - shifted(&[(i, t), (j, -t)]) - shifted(&[(i, -t), (j, t)])
                            + shifted(&[(i, -t), (j, -t)]))
                            / (4.0 * t * t)
                    }
                };
                // Richardson step removes the t² term
                let fd = (4.0 * mixed(s / 2.0) - mixed(s)) / 3.0;
                worst_h = worst_h.max((fd - hess[(i, j)]).abs() / (1.0 + hnorm));
            }
        }
    }
    check(
        "gradient and Hessian match finite differences",
        worst_g < 1e-6 && worst_h < 1e-5 && worst_j < 1e-10,
        format!("grad {worst_g:.1e}, hess {worst_h:.1e}, value vs direct energy {worst_j:.1e}"),
    )
}

fn records(stages: &[Stage]) -> Vec<Option<&SolutionRecord>> {
    stages.iter().map(|s| s.outcome.as_ref().ok()).collect()
}

fn maximiser_structure(stages: &[Stage], profile: &NodalProfile, seed: u64) -> Check {
    let c1 = profile.summary().c1;
    let bound = 4.0 * (profile.c_value + 1.0) / (c1 * c1);
    let mut pass = true;
    let mut notes = Vec::new();
    for (s, stage) in stages.iter().enumerate() {
        let Ok(rec) = &stage.outcome else {
            pass = false;
            notes.push(format!("beta {}: no record", stage.beta));
            continue;
        };
        let lb = rec.lambda_bar.as_slice();
        let spread = match multistart(rec.beta, &rec.ensemble, 32, 2.0, seed + s as u64) {
            Ok(runs) => runs
                .iter()
                .flat_map(|r| r.lambda_bar.as_slice().iter().zip(lb).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        let radius: f64 = lb.iter().map(|x| x * x).sum();
        let hess = hess_phi(rec.beta, &rec.ensemble, lb).unwrap();
        let top = SymmetricEigen::new(hess).eigenvalues.max();
        let min_l = lb.iter().cloned().fold(f64::INFINITY, f64::min);
        let ok = spread < 1e-8 && min_l > 0.5 && radius < bound && top < 0.0;
        pass &= ok;
        notes.push(format!(
            "beta {}: spread {spread:.1e}, min {min_l:.3}, radius {radius:.2}/{bound:.2}, top eig {top:.3e}{}",
            rec.beta,
            if ok { "" } else { " <-" }
        ));
    }
    check("maximiser unique, above 1/2, bounded, nondegenerate", pass, notes.join("; "))
}

fn energy_bounds(stages: &[Stage], c_inf: f64, elapsed: Duration) -> Check {
    let recs = records(stages);
    let energies: Vec<f64> = recs.iter().map(|r| r.map_or(f64::NAN, |r| r.energy)).collect();
    let complete = recs.iter().all(Option::is_some) && recs.len() == 5;
    let monotone = energies.windows(2).all(|w| w[1] >= w[0]);
    let below = energies.iter().all(|e| *e <= c_inf + 1e-4);
    check(
        "energy nondecreasing in beta and below c_inf",
        complete && monotone && below && elapsed < Duration::from_secs(900),
        format!("energies {energies:.6?}, c_inf {c_inf:.6}, sweep {elapsed:.1?}"),
    )
}

fn segregation(stages: &[Stage]) -> Check {
    let recs = records(stages);
    let find = |b: f64| recs.iter().flatten().find(|r| r.beta == b).copied();
    let (Some(r10), Some(r4)) = (find(10.0), find(1e4)) else {
        return check("segregation trends", false, "missing stages".into());
    };
    let drop = r10.max_overlap() / r4.max_overlap();
    let tail: Vec<&SolutionRecord> = recs[recs.len() - 3..].iter().flatten().copied().collect();
    let band: Vec<f64> = tail.iter().map(|r| r.beta * r.max_overlap()).collect();
    let ratio = band.iter().cloned().fold(0.0, f64::max) / band.iter().cloned().fold(f64::INFINITY, f64::min);
    let d: Vec<f64> = tail.iter().map(|r| r.d_to_k).collect();
    let d_ok = d.windows(2).all(|w| w[1] <= w[0]);
    check(
        "segregation trends",
        tail.len() == 3 && drop >= 10.0 && ratio <= 10.0 && d_ok,
        format!("overlap drop {drop:.3e}, beta*overlap {band:.3?}, d {d:.3?}"),
    )
}

fn solution_quality(stages: &[Stage]) -> Check {
    let mut pass = true;
    let mut notes = Vec::new();
    for rec in records(stages).into_iter().flatten() {
        let dev = rec.lambda_bar.max_deviation_from_one();
        let nonneg = rec.components().iter().all(|c| c.values().iter().all(|&v| v >= 0.0));
        let interior = rec.ensemble.pulses().iter().all(|u| {
            let v = u.values();
            match (v.iter().position(|&x| x > 0.0), v.iter().rposition(|&x| x > 0.0)) {
                (Some(a), Some(b)) => v[a..=b].iter().all(|&x| x > 0.0),
                _ => false,
            }
        });
        let ok = rec.residual < 1e-8 && dev < 1e-6 && nonneg && interior;
        pass &= ok;
        notes.push(format!(
            "beta {}: residual {:.1e}, |lambda-1| {dev:.1e}, nonneg {nonneg}, positive inside {interior}",
            rec.beta, rec.residual
        ));
    }
    check("residual, Nehari membership, positivity", pass, notes.join("; "))
}

fn local_maxima(v: &[f64]) -> Vec<usize> {
    let top = v.iter().cloned().fold(0.0, f64::max);
    (0..v.len() - 1)
        .filter(|&j| {
            let left = if j == 0 { f64::NEG_INFINITY } else { v[j - 1] };
            v[j] > left && v[j] >= v[j + 1] && v[j] > 1e-3 * top
        })
        .collect()
}

fn assignment_fidelity(stages: &[Stage], sigma: &[i64]) -> Check {
    let Some(rec) = records(stages).into_iter().flatten().find(|r| r.beta == 1e4) else {
        return check("peak order follows the assignment", false, "missing stage".into());
    };
    let mut peaks: Vec<(usize, i64)> = Vec::new();
    for (i, c) in rec.components().iter().enumerate() {
        peaks.extend(local_maxima(c.values()).into_iter().map(|j| (j, i as i64 + 1)));
    }
    peaks.sort();
    let order: Vec<i64> = peaks.iter().map(|p| p.1).collect();
    let radii: Vec<f64> = peaks.iter().map(|p| rec.ensemble.grid().nodes()[p.0]).collect();
    check(
        "peak order follows the assignment",
        order == sigma,
        format!("order {order:?}, radii {radii:.3?}"),
    )
}

fn determinism(first: &std::path::Path, cfg: &ExperimentConfig) -> Check {
    let (second, _, _) = cmd_sweep(cfg, "repeat").unwrap();
    let a = std::fs::read(first.join("sweep.csv")).unwrap();
    let b = std::fs::read(second.join("sweep.csv")).unwrap();
    let rows = read_sweep_csv(&first.join("sweep.csv")).map(|r| r.len()).unwrap_or(0);
    check(
        "identical seeds give byte-identical sweep.csv",
        a == b && first != second.as_path(),
        format!("{} bytes, {rows} rows", a.len()),
    )
}

#[test]
fn acceptance() {
    let mut results = vec![soliton_oracle(), cross_method_agreement(), nehari_closed_form(), derivative_checks()];

    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: tmp.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let (dir, stages, _) = cmd_sweep(&cfg, "example").unwrap();
    let elapsed = start.elapsed();
    let grid = cfg.grid().unwrap();
    let profile = compute_c_infinity(&grid, cfg.h).unwrap();

    results.push(maximiser_structure(&stages, &profile, cfg.seed));
    results.push(energy_bounds(&stages, profile.c_value, elapsed));
    results.push(segregation(&stages));
    results.push(solution_quality(&stages));
    results.push(assignment_fidelity(&stages, &cfg.sigma));
    results.push(determinism(&dir, &cfg));

    println!();
    for (n, r) in results.iter().enumerate() {
        println!(
            "[{:>2}] {} {}: {}",
            n + 1,
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    assert!(failed.is_empty(), "failed checks: {failed:?}");
}
