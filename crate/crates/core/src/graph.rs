//! Weighted undirected topologies, Laplacian spectra and difference graphs.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default tolerance for deciding that two edge weights differ.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Eigenvalue tolerances are this factor times the Frobenius norm of the Laplacian.
pub const EIG_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub id: u32,
    adjacency: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    id: u32,
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl Topology {
    pub fn from_adjacency(id: u32, adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(Error::InvalidTopology("adjacency must be square".into()));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidTopology(format!(
                    "self-loop at agent {}",
                    i + 1
                )));
            }
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidTopology(format!(
                        "weight ({}, {}) = {w} must be finite and nonnegative",
                        i + 1,
                        j + 1
                    )));
                }
                if w != adjacency[(j, i)] {
                    return Err(Error::InvalidTopology(format!(
                        "adjacency not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Topology { id, adjacency })
    }

    /// Build from 1-based weighted edges. Repeated edges are rejected.
    pub fn from_edges(id: u32, n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({i}, {j}) outside 1..={n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidTopology(format!("self-loop at agent {i}")));
            }
            if a[(i - 1, j - 1)] != 0.0 {
                return Err(Error::InvalidTopology(format!("duplicate edge ({i}, {j})")));
            }
            a[(i - 1, j - 1)] = w;
            a[(j - 1, i - 1)] = w;
        }
        Self::from_adjacency(id, a)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i - 1, j - 1)]
    }

    /// Nonzero edges as 1-based `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.adjacency[(i, j)];
                if w != 0.0 {
                    out.push((i + 1, j + 1, w));
                }
            }
        }
        out
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian(self)
    }
}

impl Serialize for Topology {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TopologyFile {
            id: self.id,
            n: self.n(),
            edges: self.edges(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Topology {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = TopologyFile::deserialize(d)?;
        Topology::from_edges(f.id, f.n, &f.edges).map_err(serde::de::Error::custom)
    }
}

pub fn laplacian(t: &Topology) -> DMatrix<f64> {
    let a = t.adjacency();
    let n = t.n();
    let mut l = -a.clone();
    for i in 0..n {
        l[(i, i)] = a.row(i).sum();
    }
    l
}

#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub connected: bool,
    /// Absolute tolerance used for the connectivity decision.
    pub tol: f64,
}

/// Default absolute eigenvalue tolerance for a Laplacian.
pub fn eig_tol(l: &DMatrix<f64>) -> f64 {
    EIG_RTOL * l.norm()
}

pub fn spectrum(l: &DMatrix<f64>, tol: f64) -> Result<LaplacianSpectrum> {
    let (eigenvalues, eigenvectors) = linalg::sym_eigen(l)?;
    let connected = eigenvalues.get(1).is_none_or(|&l2| l2 > tol);
    Ok(LaplacianSpectrum {
        eigenvalues,
        eigenvectors,
        connected,
        tol,
    })
}

/// Spectrum with the default tolerance.
pub fn topology_spectrum(t: &Topology) -> Result<LaplacianSpectrum> {
    let l = t.laplacian();
    spectrum(&l, eig_tol(&l))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffGraph {
    pub n: usize,
    /// 1-based unordered edges stored as `(i, j)` with `i < j`.
    pub edges: BTreeSet<(usize, usize)>,
}

pub fn difference_graph(r: &Topology, s: &Topology, wtol: f64) -> Result<DiffGraph> {
    if r.n() != s.n() {
        return Err(Error::InvalidInput(format!(
            "topologies {} and {} have different agent counts",
            r.id, s.id
        )));
    }
    let n = r.n();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if (r.adjacency[(i, j)] - s.adjacency[(i, j)]).abs() > wtol {
                edges.insert((i + 1, j + 1));
            }
        }
    }
    Ok(DiffGraph { n, edges })
}

pub fn union_difference_graph(set: &[&Topology], wtol: f64) -> Result<DiffGraph> {
    if set.len() < 2 {
        return Err(Error::InvalidInput(
            "union difference graph needs at least two topologies".into(),
        ));
    }
    let mut g = DiffGraph {
        n: set[0].n(),
        edges: BTreeSet::new(),
    };
    for (a, r) in set.iter().enumerate() {
        for s in &set[a + 1..] {
            g.edges.extend(difference_graph(r, s, wtol)?.edges);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentPartition {
    /// Ascending 1-based member lists, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
}

impl ComponentPartition {
    pub fn trivial(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.components.iter().filter(|c| c.len() == 1)
    }
}

pub fn components(g: &DiffGraph) -> ComponentPartition {
    let n = g.n;
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in &g.edges {
        adj[i - 1].push(j - 1);
        adj[j - 1].push(i - 1);
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(v + 1);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    ComponentPartition { components: out }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Detectability {
    pub ok: bool,
    pub uncovered: Vec<Vec<usize>>,
}

/// Every component of the union difference graph must contain an observed agent.
///
/// A single-topology set has an edgeless difference graph. With
/// `require_trivial_coverage = false` isolated vertices are exempt.
pub fn detectability(
    set: &[&Topology],
    observed: &[usize],
    wtol: f64,
    require_trivial_coverage: bool,
) -> Result<Detectability> {
    let n = set
        .first()
        .ok_or_else(|| Error::InvalidInput("empty topology set".into()))?
        .n();
    check_agent_set(observed, n, "observed")?;
    let g = if set.len() == 1 {
        DiffGraph {
            n,
            edges: BTreeSet::new(),
        }
    } else {
        union_difference_graph(set, wtol)?
    };
    let uncovered: Vec<Vec<usize>> = components(&g)
        .components
        .into_iter()
        .filter(|c| require_trivial_coverage || c.len() > 1)
        .filter(|c| !c.iter().any(|a| observed.contains(a)))
        .collect();
    Ok(Detectability {
        ok: uncovered.is_empty(),
        uncovered,
    })
}

/// Agent sets are ascending, duplicate-free and within `1..=n`.
pub fn check_agent_set(set: &[usize], n: usize, what: &str) -> Result<()> {
    if set.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!(
            "{what} set must be strictly ascending"
        )));
    }
    if set.iter().any(|&a| a == 0 || a > n) {
        return Err(Error::InvalidInput(format!(
            "{what} set must lie in 1..={n}"
        )));
    }
    Ok(())
}

pub fn has_distinct_eigenvalues(spec: &LaplacianSpectrum, septol: f64) -> bool {
    spec.eigenvalues.windows(2).all(|w| w[1] - w[0] > septol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalCertificate {
    pub ok: bool,
    /// Best approximation of `sqrt(lambda_i / lambda_2)` for `i = 2..n`.
    pub ratios: Vec<Fraction>,
    pub lambda2: f64,
}

pub const DEFAULT_MAX_DEN: u64 = 1000;
pub const DEFAULT_RATIO_TOL: f64 = 1e-9;

/// Closest fraction to `x >= 0` with denominator at most `max_den`.
pub fn best_rational(x: f64, max_den: u64) -> Fraction {
    // Continued-fraction convergents, then the best semiconvergent at the bound.
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    loop {
        let a = r.floor();
        if a > 1e15 {
            break;
        }
        let a = a as u64;
        let q2 = q0 + a * q1;
        if q2 > max_den {
            let k = (max_den - q0) / q1;
            let (ps, qs) = (p0 + k * p1, q0 + k * q1);
            let err_s = (x - ps as f64 / qs as f64).abs();
            let err_c = (x - p1 as f64 / q1 as f64).abs();
            return if err_s < err_c {
                reduce(ps, qs)
            } else {
                reduce(p1, q1)
            };
        }
        let p2 = p0 + a * p1;
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - r.floor();
        if frac < 1e-15 || (x - p1 as f64 / q1 as f64).abs() == 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    reduce(p1, q1)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

fn reduce(p: u64, q: u64) -> Fraction {
    let g = gcd(p, q).max(1);
    Fraction {
        num: p / g,
        den: q / g,
    }
}

/// Check that every `sqrt(lambda_i / lambda_2)` is rational within relative `tol`.
pub fn rational_ratio_certificate(
    spec: &LaplacianSpectrum,
    max_den: u64,
    tol: f64,
) -> Result<RationalCertificate> {
    if !spec.connected {
        return Err(Error::InvalidInput(
            "rationality certificate needs a connected graph".into(),
        ));
    }
    let l2 = spec.eigenvalues[1];
    let mut ok = true;
    let mut ratios = Vec::new();
    for &li in &spec.eigenvalues[1..] {
        let x = (li / l2).sqrt();
        let f = best_rational(x, max_den);
        if (f.value() - x).abs() > tol * x {
            ok = false;
        }
        ratios.push(f);
    }
    Ok(RationalCertificate {
        ok,
        ratios,
        lambda2: l2,
    })
}
