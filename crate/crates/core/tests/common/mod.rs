#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{Complex, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use switchguard_core::graph::Topology;
use switchguard_core::scenario::Scenario;

pub type C64 = Complex<f64>;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn load_scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("scenario file")
}

/// One PASS/FAIL line per criterion. Criteria listed in `expected_fail`
/// are reported but do not abort the run; if one of them passes the test
/// fails so the list stays accurate.
pub fn report(id: u32, name: &str, pass: bool, detail: &str, expected_fail: bool) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{verdict} criterion {id} ({name}): {detail}");
    if expected_fail {
        assert!(
            !pass,
            "criterion {id} was recorded as unattainable but passed"
        );
    } else {
        assert!(pass, "criterion {id} failed: {detail}");
    }
}

pub fn random_connected(rng: &mut ChaCha8Rng, id: u32, n: usize, wmin: f64, wmax: f64) -> Topology {
    let mut perm: Vec<usize> = (1..=n).collect();
    perm.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..n {
        let j = perm[rng.gen_range(0..k)];
        let (a, b) = (perm[k].min(j), perm[k].max(j));
        edges.push((a, b, rng.gen_range(wmin..wmax)));
    }
    for i in 1..=n {
        for j in i + 1..=n {
            if !edges.iter().any(|e| e.0 == i && e.1 == j) && rng.gen_bool(0.4) {
                edges.push((i, j, rng.gen_range(wmin..wmax)));
            }
        }
    }
    Topology::from_edges(id, n, &edges).unwrap()
}

/// Copy of `base` with some edge weights redrawn and possibly one extra edge.
pub fn perturbed(rng: &mut ChaCha8Rng, base: &Topology, id: u32) -> Topology {
    let n = base.n();
    let mut edges = base.edges();
    for e in edges.iter_mut() {
        if rng.gen_bool(0.25) {
            e.2 = rng.gen_range(0.2..2.0);
        }
    }
    if rng.gen_bool(0.3) {
        let i = rng.gen_range(1..=n);
        let j = rng.gen_range(1..=n);
        let (a, b) = (i.min(j), i.max(j));
        if a != b && !edges.iter().any(|e| e.0 == a && e.1 == b) {
            edges.push((a, b, rng.gen_range(0.2..2.0)));
        }
    }
    Topology::from_edges(id, n, &edges).unwrap()
}

pub fn random_subset(rng: &mut ChaCha8Rng, n: usize, min: usize, max: usize) -> Vec<usize> {
    let k = rng.gen_range(min..=max.min(n));
    let mut all: Vec<usize> = (1..=n).collect();
    all.shuffle(rng);
    let mut s = all[..k].to_vec();
    s.sort();
    s
}

fn plant(t: &Topology) -> DMatrix<f64> {
    let n = t.n();
    let mut l = DMatrix::zeros(n, n);
    for (i, j, w) in t.edges() {
        l[(i - 1, j - 1)] -= w;
        l[(j - 1, i - 1)] -= w;
        l[(i - 1, i - 1)] += w;
        l[(j - 1, j - 1)] += w;
    }
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
    }
    a.view_mut((n, 0), (n, n)).copy_from(&(-l));
    a
}

/// `[[eta I - A_r, B]; [-C, 0]]` stacked over every topology.
pub fn pencil(set: &[&Topology], observed: &[usize], attacked: &[usize], eta: C64) -> DMatrix<C64> {
    let n = set[0].n();
    let (m, k) = (observed.len(), attacked.len());
    let block = 2 * n + m;
    let mut p = DMatrix::zeros(block * set.len(), 2 * n + k);
    for (r, t) in set.iter().enumerate() {
        let a = plant(t);
        let o = r * block;
        for i in 0..2 * n {
            for j in 0..2 * n {
                let d = if i == j { eta } else { C64::new(0.0, 0.0) };
                p[(o + i, j)] = d - C64::new(a[(i, j)], 0.0);
            }
        }
        for (c, &agent) in attacked.iter().enumerate() {
            p[(o + n + agent - 1, 2 * n + c)] = C64::new(1.0, 0.0);
        }
        for (row, &agent) in observed.iter().enumerate() {
            p[(o + 2 * n + row, agent - 1)] = C64::new(-1.0, 0.0);
        }
    }
    p
}

fn sigma_min(p: &DMatrix<C64>) -> f64 {
    let svd = p.clone().svd(false, false);
    svd.singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest attack-block share among near-kernel right singular vectors.
fn attack_share(p: &DMatrix<C64>, n2: usize, tol: f64) -> f64 {
    let svd = p.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut best: f64 = 0.0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol {
            let row = vt.row(i);
            let g: f64 = row
                .columns(n2, row.len() - n2)
                .iter()
                .map(|c| c.norm_sqr())
                .sum();
            best = best.max(g.sqrt());
        }
    }
    best
}

fn nelder_mead(
    f: impl Fn(f64, f64) -> f64,
    x0: (f64, f64),
    step: f64,
    iters: usize,
) -> ((f64, f64), f64) {
    let mut pts = [x0, (x0.0 + step, x0.1), (x0.0, x0.1 + step)];
    let mut vals = pts.map(|p| f(p.0, p.1));
    for _ in 0..iters {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.map(|i| pts[i]);
        vals = idx.map(|i| vals[i]);
        let c = ((pts[0].0 + pts[1].0) / 2.0, (pts[0].1 + pts[1].1) / 2.0);
        let at = |s: f64| (c.0 + s * (pts[2].0 - c.0), c.1 + s * (pts[2].1 - c.1));
        let r = at(-1.0);
        let fr = f(r.0, r.1);
        if fr < vals[0] {
            let e = at(-2.0);
            let fe = f(e.0, e.1);
            if fe < fr {
                pts[2] = e;
                vals[2] = fe;
            } else {
                pts[2] = r;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            pts[2] = r;
            vals[2] = fr;
        } else {
            let k = at(0.5);
            let fk = f(k.0, k.1);
            if fk < vals[2] {
                pts[2] = k;
                vals[2] = fk;
            } else {
                for i in 1..3 {
                    pts[i] = ((pts[i].0 + pts[0].0) / 2.0, (pts[i].1 + pts[0].1) / 2.0);
                    vals[i] = f(pts[i].0, pts[i].1);
                }
            }
        }
    }
    (pts[0], vals[0])
}

/// Brute-force existence test: scan the complex plane for eta where the
/// stacked pencil loses column rank with a kernel vector that drives the
/// attack channels.
pub fn zda_exists_bruteforce(set: &[&Topology], observed: &[usize], attacked: &[usize]) -> bool {
    let n2 = 2 * set[0].n();
    let scale = 1.0 + set.iter().map(|t| plant(t).norm()).fold(0.0, f64::max);
    let tol = 1e-9 * scale;
    let share_tol = 1e-6;
    let lmax = set
        .iter()
        .map(|t| t.laplacian().symmetric_eigenvalues().max())
        .fold(0.0, f64::max);
    let r = lmax.sqrt() + 0.5;
    let inside = |re: f64, im: f64| re.abs() <= r + 0.5 && im.abs() <= r + 0.5;
    let svals = |re: f64, im: f64| {
        pencil(set, observed, attacked, C64::new(re, im))
            .svd(false, false)
            .singular_values
    };
    let smin = |re: f64, im: f64| sigma_min(&pencil(set, observed, attacked, C64::new(re, im)));
    // Log of the product of singular values: every rank drop is a logarithmic
    // sink, visible from the grid even when it is narrow in sigma_min.
    let logdet = |re: f64, im: f64| {
        if !inside(re, im) {
            return f64::INFINITY;
        }
        let s = svals(re, im);
        if s.iter().all(|x| x.is_finite()) {
            s.iter().map(|x| x.max(1e-300).ln()).sum()
        } else {
            f64::INFINITY
        }
    };
    let check = |re: f64, im: f64| {
        let p = pencil(set, observed, attacked, C64::new(re, im));
        attack_share(&p, n2, 1e3 * tol) > share_tol
    };

    // Rank deficient for every eta.
    let probes = [(0.37, 0.11), (-0.23, 1.7), (1.1, -0.6)];
    if probes.iter().all(|&(a, b)| smin(a, b) <= tol) {
        return probes.iter().any(|&(a, b)| check(a, b));
    }

    let (nre, nim) = (81usize, 81usize);
    let re = |i: usize| -r + 2.0 * r * i as f64 / (nre - 1) as f64;
    let im = |j: usize| -r + 2.0 * r * j as f64 / (nim - 1) as f64;
    let grid: Vec<Vec<f64>> = (0..nre)
        .map(|i| (0..nim).map(|j| logdet(re(i), im(j))).collect())
        .collect();
    let h = 2.0 * r / (nim - 1) as f64;
    for i in 0..nre {
        for j in 0..nim {
            let v = grid[i][j];
            let mut local = true;
            for di in -1i32..=1 {
                for dj in -1i32..=1 {
                    let (a, b) = (i as i32 + di, j as i32 + dj);
                    if (di, dj) != (0, 0)
                        && a >= 0
                        && b >= 0
                        && (a as usize) < nre
                        && (b as usize) < nim
                    {
                        // Strict, so rounding noise on flat regions is skipped.
                        local &= v < grid[a as usize][b as usize] - 1e-8 * (1.0 + v.abs());
                    }
                }
            }
            if !local {
                continue;
            }
            let ((x, y), _) = nelder_mead(logdet, (re(i), im(j)), h / 2.0, 400);
            if smin(x, y) <= tol && check(x, y) {
                return true;
            }
        }
    }
    false
}

/// Classical RK4 for `z' = A z`.
pub fn rk4(a: &DMatrix<f64>, z0: &DVector<f64>, duration: f64, steps: usize) -> DVector<f64> {
    let h = duration / steps as f64;
    let mut z = z0.clone();
    for _ in 0..steps {
        let k1 = a * &z;
        let k2 = a * (&z + &k1 * (h / 2.0));
        let k3 = a * (&z + &k2 * (h / 2.0));
        let k4 = a * (&z + &k3 * h);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    z
}
