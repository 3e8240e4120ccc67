//! Zero-dynamics attack synthesis and the stealthiness oracle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_agent_set, Topology};
use crate::linalg::{self, RankDrops, C64, KERNEL_RTOL};
use crate::schedule::SwitchingSchedule;
use crate::sim::{self, assemble_a, assemble_c, injection_matrix, AttackModel, PlantState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexScalar {
    pub re: f64,
    pub im: f64,
}

impl ComplexScalar {
    pub fn c64(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    fn from_c(v: &DVector<C64>) -> Self {
        ComplexVector {
            re: v.iter().map(|c| c.re).collect(),
            im: v.iter().map(|c| c.im).collect(),
        }
    }

    fn scale(&self, c: f64) -> Self {
        ComplexVector {
            re: self.re.iter().map(|x| x * c).collect(),
            im: self.im.iter().map(|x| x * c).collect(),
        }
    }

    fn c(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.re.len(),
            self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealthCertificate {
    /// `(topology id, relative pencil residual)` over the stealth set.
    pub pencil_residuals: Vec<(u32, f64)>,
    pub observability_residual: f64,
    pub max_output_gap: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZdaAttack {
    pub eta: ComplexScalar,
    pub rho: f64,
    /// Attack amplitude at onset on the attacked channels.
    pub g0: ComplexVector,
    /// Complex discrepancy amplitude at onset; its real part is the state gap at `rho`.
    pub w: ComplexVector,
    pub delta_z0: Vec<f64>,
    pub attacked: Vec<usize>,
    #[serde(default)]
    pub certificate: Option<StealthCertificate>,
}

impl ZdaAttack {
    pub fn model(&self, n: usize) -> Result<AttackModel> {
        AttackModel::new(
            n,
            &self.attacked,
            self.eta.re,
            self.eta.im,
            &self.g0.re,
            &self.g0.im,
            self.rho,
        )
    }

    /// Same attack with amplitude and discrepancy multiplied by `c`.
    pub fn scaled(&self, c: f64) -> ZdaAttack {
        ZdaAttack {
            g0: self.g0.scale(c),
            w: self.w.scale(c),
            delta_z0: self.delta_z0.iter().map(|x| x * c).collect(),
            certificate: None,
            ..self.clone()
        }
    }
}

/// Zero before onset, real part of `g0 exp(eta (t - rho))` afterwards.
pub fn attack_signal(atk: &ZdaAttack, t: f64) -> DVector<f64> {
    let k = atk.attacked.len();
    if t < atk.rho {
        return DVector::zeros(k);
    }
    let e = (atk.eta.c64() * (t - atk.rho)).exp();
    DVector::from_iterator(k, atk.g0.c().iter().map(|g| (g * e).re))
}

/// Attacked state from the clean one: `z(t) + Re(w exp(eta (t - rho)))`,
/// with `Re(w)` given by the discrepancy at onset.
pub fn predicted_state(
    atk: &ZdaAttack,
    clean: &DVector<f64>,
    discrepancy_at_rho: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let e = (atk.eta.c64() * (t - atk.rho)).exp();
    let mut out = clean.clone();
    for i in 0..out.len() {
        let w = C64::new(
            discrepancy_at_rho[i],
            atk.w.im.get(i).copied().unwrap_or(0.0),
        );
        out[i] += (w * e).re;
    }
    out
}

pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut o = DMatrix::zeros(n * p, n);
    let mut blk = c.clone();
    for k in 0..n {
        o.view_mut((k * p, 0), (p, n)).copy_from(&blk);
        blk = &blk * a;
    }
    o
}

/// Intersection of the unobservable subspaces of every mode.
pub fn unobservable_subspace(a_list: &[DMatrix<f64>], c: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = c.ncols();
    let blocks: Vec<DMatrix<f64>> = a_list.iter().map(|a| observability_matrix(a, c)).collect();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut stacked = DMatrix::zeros(rows.max(c.nrows()), n);
    if blocks.is_empty() {
        stacked.view_mut((0, 0), (c.nrows(), n)).copy_from(c);
    }
    let mut r = 0;
    for b in &blocks {
        stacked.view_mut((r, 0), (b.nrows(), n)).copy_from(b);
        r += b.nrows();
    }
    linalg::null_space(&stacked, tol)
}

/// Largest subspace of `ker C` invariant under every mode.
///
/// A state starting there stays unobservable under any switching among the modes.
pub fn common_invariant_unobservable(
    a_list: &[DMatrix<f64>],
    c: &DMatrix<f64>,
    tol: f64,
) -> DMatrix<f64> {
    let n = c.ncols();
    let scale = a_list
        .iter()
        .map(|a| a.norm())
        .fold(c.norm().max(1.0), f64::max);
    let abs_tol = tol * scale;
    let mut v = linalg::null_space(c, tol);
    loop {
        if v.ncols() == 0 {
            return v;
        }
        let proj = DMatrix::<f64>::identity(n, n) - &v * v.transpose();
        let mut stacked = DMatrix::zeros(c.nrows() + n * a_list.len(), n);
        stacked.view_mut((0, 0), (c.nrows(), n)).copy_from(c);
        for (k, a) in a_list.iter().enumerate() {
            stacked
                .view_mut((c.nrows() + k * n, 0), (n, n))
                .copy_from(&(&proj * a));
        }
        // Restrict to v so the iteration is monotone.
        let coords = linalg::null_space_abs(&(&stacked * &v), abs_tol);
        if coords.ncols() == v.ncols() {
            return v;
        }
        v = linalg::orth(&(&v * coords), tol);
    }
}

/// `[[eta I - A, B], [-C, 0]]`.
pub fn rosenbrock_pencil(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    eta: C64,
) -> DMatrix<C64> {
    let n = a.nrows();
    let (p, k) = (c.nrows(), b.ncols());
    let mut m = DMatrix::zeros(n + p, n + k);
    m.view_mut((0, 0), (n, n))
        .copy_from(&(DMatrix::<C64>::identity(n, n) * eta - linalg::to_complex(a)));
    m.view_mut((0, n), (n, k)).copy_from(&linalg::to_complex(b));
    m.view_mut((n, 0), (p, n))
        .copy_from(&(-linalg::to_complex(c)));
    m
}

/// Leading and constant parts of the stacked pencil over several modes.
pub fn stacked_pencil(
    a_list: &[DMatrix<f64>],
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = b.nrows();
    let (p, k) = (c.nrows(), b.ncols());
    let rows = n * a_list.len() + p;
    let mut e = DMatrix::zeros(rows, n + k);
    let mut f = DMatrix::zeros(rows, n + k);
    for (r, a) in a_list.iter().enumerate() {
        e.view_mut((r * n, 0), (n, n)).fill_with_identity();
        f.view_mut((r * n, 0), (n, n)).copy_from(&(-a));
        f.view_mut((r * n, n), (n, k)).copy_from(b);
    }
    f.view_mut((rows - p, 0), (p, n)).copy_from(&(-c));
    (e, f)
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Real probes tried when the stacked pencil is singular for every `eta`.
    pub eta_probes: Vec<f64>,
    pub random_probes: usize,
    pub seed: u64,
    /// Target for the largest attack-channel magnitude.
    pub g_scale: f64,
    pub verify_dt: f64,
    pub residual_tol: f64,
    pub gap_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            eta_probes: vec![],
            random_probes: 3,
            seed: 0,
            g_scale: 1e-2,
            verify_dt: 0.05,
            residual_tol: 1e-8,
            gap_tol: 1e-6,
        }
    }
}

/// Switching history the attacker knows before onset.
#[derive(Debug, Clone, Copy)]
pub struct Prefix<'a> {
    pub topologies: &'a [Topology],
    pub schedule: &'a SwitchingSchedule,
}

struct Candidate {
    eta: C64,
    w: DVector<C64>,
    g: DVector<C64>,
}

fn is_real(eta: C64) -> bool {
    eta.im.abs() <= 1e-9 * (1.0 + eta.norm())
}

/// Candidate ordering: growing modes first, then smaller magnitude.
fn preference(eta: &C64) -> (u8, f64, f64) {
    let class = if eta.re > 1e-9 {
        0
    } else if eta.re.abs() <= 1e-9 {
        1
    } else {
        2
    };
    (class, eta.norm(), -eta.im)
}

fn real_part(m: &DMatrix<C64>) -> DMatrix<f64> {
    m.map(|c| c.re)
}

fn imag_part(m: &DMatrix<C64>) -> DMatrix<f64> {
    m.map(|c| c.im)
}

/// Unit direction `y` maximizing `|m y|`, with the achieved gain.
fn top_direction(m: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let (i, s) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold(
            (0, -1.0),
            |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc },
        );
    (vt.row(i).transpose(), s.max(0.0))
}

/// Kernel element at `eta` with maximal attack part, constrained so that
/// `Re(w)` lies in `allowed` when given.
fn kernel_candidate(
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    n2: usize,
    eta: C64,
    allowed: Option<&DMatrix<f64>>,
) -> Option<Candidate> {
    let k = e.ncols() - n2;
    let (nw, ng, real) = if is_real(eta) {
        let p = e * eta.re + f;
        let ker = linalg::null_space(&p, KERNEL_RTOL);
        if ker.ncols() == 0 {
            return None;
        }
        let c = linalg::to_complex(&ker);
        (
            c.rows(0, n2).into_owned(),
            -c.rows(n2, k).into_owned(),
            true,
        )
    } else {
        let p = linalg::to_complex(e) * eta + linalg::to_complex(f);
        let ker = linalg::null_space_c(&p, KERNEL_RTOL);
        if ker.ncols() == 0 {
            return None;
        }
        (
            ker.rows(0, n2).into_owned(),
            -ker.rows(n2, k).into_owned(),
            false,
        )
    };
    let d = nw.ncols();
    // Real coordinates y map to complex coefficients c = ymap * y.
    let ymap: DMatrix<C64> = if real {
        linalg::to_complex(&DMatrix::identity(d, d))
    } else {
        let mut m = DMatrix::zeros(d, 2 * d);
        for i in 0..d {
            m[(i, i)] = C64::new(1.0, 0.0);
            m[(i, d + i)] = C64::new(0.0, 1.0);
        }
        m
    };
    let mut basis = DMatrix::<f64>::identity(ymap.ncols(), ymap.ncols());
    if let Some(v) = allowed {
        let proj = DMatrix::<f64>::identity(n2, n2) - v * v.transpose();
        let re_w = real_part(&(&nw * &ymap));
        basis = linalg::null_space_abs(&(&proj * re_w), 1e-9);
        if basis.ncols() == 0 {
            return None;
        }
    }
    let gmap = &ng * &ymap * linalg::to_complex(&basis);
    let mut stacked = DMatrix::zeros(2 * gmap.nrows(), gmap.ncols());
    stacked
        .view_mut((0, 0), (gmap.nrows(), gmap.ncols()))
        .copy_from(&real_part(&gmap));
    stacked
        .view_mut((gmap.nrows(), 0), (gmap.nrows(), gmap.ncols()))
        .copy_from(&imag_part(&gmap));
    let (y, gain) = top_direction(&stacked);
    if gain <= 1e-9 {
        return None;
    }
    let by = &basis * y;
    let coef = &ymap * by.map(|x| C64::new(x, 0.0));
    let mut w = &nw * &coef;
    let mut g = &ng * &coef;
    if allowed.is_none() {
        // Put the discrepancy on the real axis as far as possible.
        let re = w.map(|c| c.re).norm();
        let im = w.map(|c| c.im).norm();
        if im > re {
            let i = C64::new(0.0, 1.0);
            w *= i;
            g *= i;
        }
    }
    if w.map(|c| c.re).norm() <= 1e-9 * w.norm().max(1e-300) {
        return None;
    }
    Some(Candidate { eta, w, g })
}

/// Prefix segments clipped to `[0, rho)`.
fn prefix_segments(sched: &SwitchingSchedule, rho: f64) -> Vec<(f64, f64, u32)> {
    sched
        .segments()
        .take_while(|s| s.start < rho)
        .map(|s| (s.start, s.end.min(rho), s.id))
        .collect()
}

/// Synthesize an attack keeping the outputs unchanged against every
/// topology in `stealth`; for `rho > 0` also invisible over the prefix.
pub fn synthesize(
    stealth: &[&Topology],
    observed: &[usize],
    attacked: &[usize],
    rho: f64,
    prefix: Option<Prefix<'_>>,
    opts: &SynthesisOptions,
) -> Result<ZdaAttack> {
    let first = stealth
        .first()
        .ok_or_else(|| Error::InvalidInput("stealth set is empty".into()))?;
    let n = first.n();
    if stealth.iter().any(|t| t.n() != n) {
        return Err(Error::InvalidInput(
            "stealth topologies differ in agent count".into(),
        ));
    }
    if attacked.is_empty() {
        return Err(Error::InvalidInput("no attack channels".into()));
    }
    check_agent_set(attacked, n, "attacked")?;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(
            "attack onset must be finite and nonnegative".into(),
        ));
    }
    let c = assemble_c(observed, n)?;
    let b = injection_matrix(attacked, n)?;
    let n2 = 2 * n;
    let a_list: Vec<DMatrix<f64>> = stealth.iter().map(|t| assemble_a(&t.laplacian())).collect();

    // Pre-onset stealth needs a discrepancy that no prefix mode can reveal.
    let mut prefix_modes = Vec::new();
    let allowed = if rho > 0.0 {
        let p = prefix.ok_or_else(|| {
            Error::InvalidInput("a positive onset needs the switching prefix".into())
        })?;
        if p.schedule.horizon() < rho {
            return Err(Error::InvalidInput(
                "prefix schedule ends before the onset".into(),
            ));
        }
        let map = sim::topology_map(p.topologies);
        for (s, e, id) in prefix_segments(p.schedule, rho) {
            let t = map.get(&id).ok_or_else(|| {
                Error::InvalidInput(format!("prefix references unknown topology {id}"))
            })?;
            prefix_modes.push((s, e, id, assemble_a(&t.laplacian())));
        }
        let mut distinct: Vec<DMatrix<f64>> = Vec::new();
        for (_, _, _, a) in &prefix_modes {
            if !distinct.contains(a) {
                distinct.push(a.clone());
            }
        }
        let v = common_invariant_unobservable(&distinct, &c, KERNEL_RTOL);
        if v.ncols() == 0 {
            return Err(Error::NoStealthyPrefix);
        }
        Some(v)
    } else {
        None
    };

    let (e, f) = stacked_pencil(&a_list, &b, &c);
    let scale = e.norm().max(f.norm());
    // (eta, source) with source 0 = pencil drop, 1 = supplied probe, 2 = random probe.
    let mut etas: Vec<(C64, u8)> = Vec::new();
    let everywhere = match linalg::pencil_rank_drops(&e, &f, KERNEL_RTOL * scale)? {
        RankDrops::Finite(v) => {
            etas.extend(
                v.into_iter()
                    .filter(|x| x.re.is_finite() && x.im.is_finite())
                    .map(|x| (x, 0)),
            );
            false
        }
        RankDrops::Everywhere => true,
    };
    if everywhere || attacked.len() > observed.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        etas.extend(opts.eta_probes.iter().map(|&x| (C64::new(x, 0.0), 1)));
        for _ in 0..opts.random_probes {
            etas.push((C64::new(rng.gen_range(0.01..0.1), 0.0), 2));
        }
    }
    for (x, _) in etas.iter_mut() {
        if is_real(*x) {
            x.im = 0.0;
        }
    }
    etas.sort_by(|a, b| {
        let (ca, ma, ia) = preference(&a.0);
        let (cb, mb, ib) = preference(&b.0);
        (ca, a.1)
            .cmp(&(cb, b.1))
            .then(ma.total_cmp(&mb))
            .then(ia.total_cmp(&ib))
    });
    etas.dedup_by(|a, b| (a.0 - b.0).norm() <= 1e-12 * (1.0 + a.0.norm()));

    for (eta, _) in etas {
        let Some(cand) = kernel_candidate(&e, &f, n2, eta, allowed.as_ref()) else {
            continue;
        };
        let ctx = Context {
            stealth,
            a_list: &a_list,
            b: &b,
            c: &c,
            rho,
            prefix_modes: &prefix_modes,
            prefix,
            attacked,
            opts,
        };
        if let Some(atk) = finish(&cand, &ctx)? {
            return Ok(atk);
        }
    }
    Err(Error::NoZda)
}

struct Context<'a> {
    stealth: &'a [&'a Topology],
    a_list: &'a [DMatrix<f64>],
    b: &'a DMatrix<f64>,
    c: &'a DMatrix<f64>,
    rho: f64,
    prefix_modes: &'a [(f64, f64, u32, DMatrix<f64>)],
    prefix: Option<Prefix<'a>>,
    attacked: &'a [usize],
    opts: &'a SynthesisOptions,
}

/// Scale, back-propagate to the initial discrepancy and certify.
fn finish(cand: &Candidate, ctx: &Context<'_>) -> Result<Option<ZdaAttack>> {
    let Context {
        stealth,
        a_list,
        b,
        c,
        rho,
        prefix_modes,
        prefix,
        attacked,
        opts,
    } = *ctx;
    let n2 = b.nrows();
    let n = n2 / 2;
    let gmax = cand.g.iter().fold(0.0f64, |m, x| m.max(x.norm()));
    let mut s = opts.g_scale / gmax;
    if is_real(cand.eta) {
        let lead = cand.g.iter().fold(
            C64::new(0.0, 0.0),
            |m, x| if x.norm() > m.norm() { *x } else { m },
        );
        if lead.re < 0.0 {
            s = -s;
        }
    }
    let w = &cand.w * C64::new(s, 0.0);
    let g = &cand.g * C64::new(s, 0.0);
    let w_re = w.map(|x| x.re);

    let mut delta = w_re.clone();
    for (s0, e0, _, a) in prefix_modes.iter().rev() {
        delta = linalg::expm(&(a * -(e0 - s0))) * delta;
    }

    let eta = cand.eta;
    let pencil_residuals: Vec<(u32, f64)> = stealth
        .iter()
        .zip(a_list)
        .map(|(t, a)| {
            let lhs = &w * eta - linalg::to_complex(a) * &w - linalg::to_complex(b) * &g;
            (t.id, lhs.norm() / (w.norm() + g.norm()))
        })
        .collect();
    let mut observability_residual = (linalg::to_complex(c) * &w).norm() / w.norm();
    let mut max_output_gap: f64 = 0.0;

    if rho > 0.0 {
        let p = prefix.expect("prefix checked by caller");
        let mut seen: Vec<u32> = Vec::new();
        for (_, _, id, a) in prefix_modes {
            if seen.contains(id) {
                continue;
            }
            seen.push(*id);
            let o = observability_matrix(a, c);
            let scale_o = o.norm() * delta.norm();
            observability_residual = observability_residual.max((&o * &delta).norm() / scale_o);
        }
        let pre = p.schedule.with_horizon(rho)?;
        let tr = sim::simulate(
            p.topologies,
            &pre,
            &PlantState::new(delta.clone())?,
            None,
            &observed_of(c),
            opts.verify_dt,
        )?;
        for y in &tr.outputs {
            max_output_gap = max_output_gap.max(linalg::max_abs(y));
        }
    }

    // After onset: cycle through the stealth set from the onset discrepancy.
    let dwell_of = |id: u32| prefix.and_then(|p| p.schedule.dwell(id)).unwrap_or(1.0);
    let mut order = Vec::new();
    let mut dwell = std::collections::BTreeMap::new();
    for t in stealth {
        if !order.contains(&t.id) {
            order.push(t.id);
            dwell.insert(t.id, dwell_of(t.id));
        }
    }
    let cycle: f64 = dwell.values().sum();
    let post = SwitchingSchedule::new(order, dwell, cycle)?;
    let owned: Vec<Topology> = stealth.iter().map(|t| (*t).clone()).collect();
    let atk = ZdaAttack {
        eta: ComplexScalar {
            re: eta.re,
            im: eta.im,
        },
        rho,
        g0: ComplexVector::from_c(&g),
        w: ComplexVector::from_c(&w),
        delta_z0: delta.iter().copied().collect(),
        attacked: attacked.to_vec(),
        certificate: None,
    };
    let shifted = ZdaAttack {
        rho: 0.0,
        ..atk.clone()
    };
    let tr = sim::simulate(
        &owned,
        &post,
        &PlantState::new(w_re)?,
        Some(&shifted.model(n)?),
        &observed_of(c),
        opts.verify_dt,
    )?;
    for y in &tr.outputs {
        max_output_gap = max_output_gap.max(linalg::max_abs(y));
    }

    let valid = pencil_residuals.iter().all(|(_, r)| *r < opts.residual_tol)
        && observability_residual < opts.residual_tol
        && max_output_gap < opts.gap_tol;
    if !valid {
        return Ok(None);
    }
    Ok(Some(ZdaAttack {
        certificate: Some(StealthCertificate {
            pencil_residuals,
            observability_residual,
            max_output_gap,
            valid,
        }),
        ..atk
    }))
}

fn observed_of(c: &DMatrix<f64>) -> Vec<usize> {
    (0..c.nrows())
        .map(|r| (0..c.ncols()).find(|&j| c[(r, j)] != 0.0).unwrap() + 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observability_examples() {
        let a = assemble_a(&DMatrix::zeros(1, 1));
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(linalg::rank(&observability_matrix(&a, &c), 1e-12), 2);
        let id = DMatrix::<f64>::identity(4, 4);
        let a = assemble_a(
            &Topology::from_edges(1, 2, &[(1, 2, 1.0)])
                .unwrap()
                .laplacian(),
        );
        assert_eq!(linalg::rank(&observability_matrix(&a, &id), 1e-12), 4);
        assert_eq!(unobservable_subspace(&[a], &id, KERNEL_RTOL).ncols(), 0);
    }

    #[test]
    fn path_observability_matches_pbh() {
        let t = Topology::from_edges(1, 3, &[(1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let a = assemble_a(&t.laplacian());
        for m in [vec![1], vec![2], vec![1, 3]] {
            let c = assemble_c(&m, 3).unwrap();
            let rank = linalg::rank(&observability_matrix(&a, &c), 1e-10);
            // PBH: unobservable dimension is the sum of kernel dims of [sI - A; C] over eigenvalues.
            let mut eigs = linalg::eigenvalues(&a).unwrap();
            eigs.sort_by(|x, y| x.im.total_cmp(&y.im));
            eigs.dedup_by(|x, y| (*x - *y).norm() < 1e-6);
            let mut unobs = 0;
            for s in eigs {
                let s = C64::new(0.0, s.im);
                let mut m = DMatrix::zeros(6 + c.nrows(), 6);
                m.view_mut((0, 0), (6, 6))
                    .copy_from(&(DMatrix::<C64>::identity(6, 6) * s - linalg::to_complex(&a)));
                m.view_mut((6, 0), (c.nrows(), 6))
                    .copy_from(&linalg::to_complex(&c));
                unobs += linalg::null_space_c(&m, 1e-8).ncols();
            }
            assert_eq!(rank, 6 - unobs, "observed {m:?}");
        }
        // Middle agent of the path misses the antisymmetric mode.
        let c = assemble_c(&[2], 3).unwrap();
        assert_eq!(unobservable_subspace(&[a], &c, KERNEL_RTOL).ncols(), 2);
    }

    #[test]
    fn hidden_component_is_unobservable() {
        let t = Topology::from_edges(1, 4, &[(1, 2, 1.0), (3, 4, 2.0)]).unwrap();
        let a = assemble_a(&t.laplacian());
        let c = assemble_c(&[1], 4).unwrap();
        let u = unobservable_subspace(std::slice::from_ref(&a), &c, KERNEL_RTOL);
        assert!(u.ncols() >= 2);
        let t2 = Topology::from_edges(2, 4, &[(1, 2, 1.0), (2, 3, 1.0), (3, 4, 2.0)]).unwrap();
        let a2 = assemble_a(&t2.laplacian());
        let both = unobservable_subspace(&[a.clone(), a2.clone()], &c, KERNEL_RTOL);
        assert!(both.ncols() <= u.ncols());
        let vstar = common_invariant_unobservable(&[a, a2], &c, KERNEL_RTOL);
        assert!(vstar.ncols() <= both.ncols());
    }

    #[test]
    fn pencil_toy_example() {
        let z = DMatrix::<f64>::zeros(2, 2);
        let id = DMatrix::<f64>::identity(2, 2);
        let p = rosenbrock_pencil(&z, &id, &id, C64::new(0.0, 0.0));
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[
                0., 0., 1., 0., 0., 0., 0., 1., -1., 0., 0., 0., 0., -1., 0., 0.,
            ],
        );
        assert_eq!(p, linalg::to_complex(&want));
        assert_eq!(linalg::null_space_c(&p, KERNEL_RTOL).ncols(), 0);
    }

    #[test]
    fn fat_pencil_has_kernel() {
        let t = Topology::from_edges(1, 3, &[(1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let a = assemble_a(&t.laplacian());
        let b = injection_matrix(&[1, 2, 3], 3).unwrap();
        let c = assemble_c(&[1], 3).unwrap();
        let p = rosenbrock_pencil(&a, &b, &c, C64::new(0.37, 0.0));
        let k = linalg::null_space_c(&p, KERNEL_RTOL);
        assert!(k.ncols() > 0);
        for j in 0..k.ncols() {
            let v = k.column(j);
            let w = v.rows(0, 6).into_owned();
            let g = -v.rows(6, 3).into_owned();
            let lhs = &w * C64::new(0.37, 0.0) - linalg::to_complex(&a) * &w;
            assert!((lhs - linalg::to_complex(&b) * &g).norm() < 1e-10);
            assert!((linalg::to_complex(&c) * &w).norm() < 1e-10);
        }
    }

    fn undetected_pair() -> (Topology, Topology) {
        // Differ only on edge (2,3), so {2,3} is a component away from agent 1.
        let t1 = Topology::from_edges(
            1,
            4,
            &[
                (1, 2, 1.0),
                (1, 3, 1.0),
                (1, 4, 1.0),
                (2, 3, 15.0),
                (2, 4, 5.0),
                (3, 4, 5.0),
            ],
        )
        .unwrap();
        let t2 = Topology::from_edges(
            2,
            4,
            &[
                (1, 2, 1.0),
                (1, 3, 1.0),
                (1, 4, 1.0),
                (2, 3, 5.0),
                (2, 4, 5.0),
                (3, 4, 5.0),
            ],
        )
        .unwrap();
        (t1, t2)
    }

    #[test]
    fn synthesis_against_undetected_pair() {
        let (t1, t2) = undetected_pair();
        let opts = SynthesisOptions {
            eta_probes: vec![0.05],
            ..Default::default()
        };
        let atk = synthesize(&[&t1, &t2], &[1], &[1, 2, 3, 4], 0.0, None, &opts).unwrap();
        let cert = atk.certificate.as_ref().unwrap();
        assert!(cert.valid);
        assert!(atk.eta.re > 0.0);
        let gmax = atk.g0.re.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((1e-3..=1e-2 + 1e-15).contains(&gmax));
        assert!(atk.g0.re[0].abs() < 1e-12);
    }

    #[test]
    fn synthesis_with_prefix_matches_symmetric_shape() {
        let (t1, t2) = undetected_pair();
        let tops = vec![t1.clone(), t2.clone()];
        let tau = std::f64::consts::FRAC_PI_2 + 0.2;
        let sched = SwitchingSchedule::new(
            vec![1, 2],
            std::collections::BTreeMap::from([(1, tau), (2, tau)]),
            40.0,
        )
        .unwrap();
        let opts = SynthesisOptions {
            eta_probes: vec![0.05],
            ..Default::default()
        };
        let prefix = Prefix {
            topologies: &tops,
            schedule: &sched,
        };
        let atk = synthesize(&[&t1, &t2], &[1], &[1, 2, 3, 4], 20.0, Some(prefix), &opts).unwrap();
        // Onset discrepancy must be proportional to (0, 1, 1, -2) in position.
        let g = &atk.g0.re;
        assert!(g[0].abs() < 1e-12);
        assert!((g[1] - g[2]).abs() < 1e-10 && (g[3] + 2.0 * g[1]).abs() < 1e-10);
        assert!(atk.certificate.unwrap().valid);
        assert!(atk.delta_z0.iter().any(|x| x.abs() > 0.0));
    }

    #[test]
    fn detectable_pair_blocks_synthesis() {
        let (t1, _) = undetected_pair();
        let t3 = Topology::from_edges(3, 4, &[(1, 2, 4.0), (1, 3, 1.0), (2, 3, 1.0), (3, 4, 1.0)])
            .unwrap();
        let r = synthesize(
            &[&t1, &t3],
            &[1],
            &[1, 2, 3, 4],
            0.0,
            None,
            &Default::default(),
        );
        assert!(matches!(r, Err(Error::NoZda)), "{r:?}");
    }

    #[test]
    fn full_observation_blocks_synthesis() {
        let t = Topology::from_edges(1, 3, &[(1, 2, 1.0), (2, 3, 2.0)]).unwrap();
        let r = synthesize(
            &[&t],
            &[1, 2, 3],
            &[1, 2, 3],
            0.0,
            None,
            &Default::default(),
        );
        assert!(matches!(r, Err(Error::NoZda)));
        let r = synthesize(&[&t], &[1], &[], 0.0, None, &Default::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn observable_prefix_has_no_stealthy_start() {
        let t = Topology::from_edges(3, 4, &[(1, 2, 4.0), (1, 3, 1.0), (2, 3, 1.0), (3, 4, 1.0)])
            .unwrap();
        let sched =
            SwitchingSchedule::new(vec![3], std::collections::BTreeMap::from([(3, 1.0)]), 10.0)
                .unwrap();
        let tops = vec![t.clone()];
        let r = synthesize(
            &[&t],
            &[1],
            &[1, 2, 3, 4],
            5.0,
            Some(Prefix {
                topologies: &tops,
                schedule: &sched,
            }),
            &Default::default(),
        );
        assert!(matches!(r, Err(Error::NoStealthyPrefix)));
    }

    #[test]
    fn signal_and_prediction() {
        let atk = ZdaAttack {
            eta: ComplexScalar { re: 0.5, im: 0.0 },
            rho: 2.0,
            g0: ComplexVector {
                re: vec![1.0, -2.0],
                im: vec![0.0, 0.0],
            },
            w: ComplexVector {
                re: vec![1.0, 0.0],
                im: vec![0.0, 0.0],
            },
            delta_z0: vec![1.0, 0.0],
            attacked: vec![1, 2],
            certificate: None,
        };
        assert_eq!(attack_signal(&atk, 1.0), DVector::zeros(2));
        assert_eq!(
            attack_signal(&atk, 2.0),
            DVector::from_column_slice(&[1.0, -2.0])
        );
        let clean = DVector::from_column_slice(&[3.0, 4.0]);
        let zero = DVector::zeros(2);
        assert_eq!(predicted_state(&atk, &clean, &zero, 5.0), clean);
        let d = DVector::from_column_slice(&[1.0, 0.0]);
        let p = predicted_state(&atk, &clean, &d, 2.0);
        assert_eq!(p, DVector::from_column_slice(&[4.0, 4.0]));
    }

    #[test]
    fn complex_signal_matches_mode_block() {
        let atk = ZdaAttack {
            eta: ComplexScalar { re: 0.1, im: 2.0 },
            rho: 0.0,
            g0: ComplexVector {
                re: vec![1.0],
                im: vec![0.5],
            },
            w: ComplexVector {
                re: vec![0.0, 0.0],
                im: vec![0.0, 0.0],
            },
            delta_z0: vec![0.0, 0.0],
            attacked: vec![1],
            certificate: None,
        };
        let m = atk.model(1).unwrap();
        let t = 0.7;
        let mode = linalg::expm(&(&m.exo.mode * t)) * &m.mode0;
        let via_block = (&m.g * mode)[0];
        assert!((via_block - attack_signal(&atk, t)[0]).abs() < 1e-12);
    }

    #[test]
    fn attack_json_round_trip() {
        let (t1, t2) = undetected_pair();
        let opts = SynthesisOptions {
            eta_probes: vec![0.05],
            ..Default::default()
        };
        let atk = synthesize(&[&t1, &t2], &[1], &[2, 3, 4], 0.0, None, &opts).unwrap();
        let s = serde_json::to_string(&atk).unwrap();
        assert!(s.contains("\"eta\":{\"re\":"));
        let back: ZdaAttack = serde_json::from_str(&s).unwrap();
        assert_eq!(back, atk);
    }
}
