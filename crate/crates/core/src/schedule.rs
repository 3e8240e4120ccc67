//! Dwell times from Laplacian modal periods, cyclic switching signals and
//! the dwell-weighted matrix-measure condition.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, LaplacianSpectrum, RationalCertificate, Topology};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellParams {
    pub beta: f64,
    pub alpha: f64,
    pub kappa: u32,
    pub tau_hat_max: f64,
    pub m: u32,
}

impl Default for DwellParams {
    fn default() -> Self {
        let (beta, alpha) = (0.5f64, 1.0);
        DwellParams {
            beta,
            alpha,
            kappa: 1,
            tau_hat_max: (0.9 * -beta.ln() / alpha).min(0.2),
            m: 1,
        }
    }
}

impl DwellParams {
    /// Parameters that keep `tau_hat_max = 0.2` feasible for a given `xi`.
    ///
    /// Laplacians always have a zero eigenvalue, so `xi >= 1` and the
    /// default `alpha = 1` can never exceed it.
    pub fn auto(xi: f64) -> Self {
        let alpha = (2.0 * xi).max(xi + 1.0);
        let tau_hat_max = 0.2;
        DwellParams {
            beta: (-tau_hat_max * alpha / 0.9).exp(),
            alpha,
            kappa: 1000,
            tau_hat_max,
            m: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidParams(format!(
                "beta = {} not in (0, 1)",
                self.beta
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParams(format!(
                "alpha = {} must be positive",
                self.alpha
            )));
        }
        if self.kappa == 0 {
            return Err(Error::InvalidParams(
                "kappa must be a positive integer".into(),
            ));
        }
        let bound = -self.beta.ln() / self.alpha;
        if !(self.tau_hat_max > 0.0 && self.tau_hat_max < bound) {
            return Err(Error::InvalidParams(format!(
                "tau_hat_max = {} must lie in (0, {bound})",
                self.tau_hat_max
            )));
        }
        Ok(())
    }

    /// `(beta^(-1/kappa) - 1) * kappa / (alpha - xi)`, evaluated in log space.
    pub fn side_bound(&self, xi: f64) -> f64 {
        let k = self.kappa as f64;
        (-self.beta.ln() / k).exp_m1() * k / (self.alpha - xi)
    }
}

/// Largest `|lambda_i - 1|` over all spectra.
pub fn xi(spectra: &[&LaplacianSpectrum]) -> f64 {
    spectra
        .iter()
        .flat_map(|s| s.eigenvalues.iter())
        .fold(0.0, |m: f64, &l| m.max((l - 1.0).abs()))
}

/// Least common multiple of the modal periods `2 pi / sqrt(lambda_i)`.
pub fn base_period(cert: &RationalCertificate) -> Result<f64> {
    if !cert.ok {
        return Err(Error::InvalidInput(
            "eigenvalue ratios not rational within tolerance".into(),
        ));
    }
    // P_i / P_2 = q_i / p_i for sqrt(lambda_i / lambda_2) = p_i / q_i.
    let l = cert
        .ratios
        .iter()
        .fold(1u64, |acc, f| graph::lcm(acc, f.den));
    Ok(2.0 * PI / cert.lambda2.sqrt() * l as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dwell {
    pub tau: f64,
    pub m: u32,
}

pub fn dwell_time(p: &DwellParams, period: f64, xi: f64) -> Result<Dwell> {
    p.validate()?;
    if xi >= p.alpha {
        return Err(Error::InapplicableDwell { xi, alpha: p.alpha });
    }
    if !(period > 0.0) {
        return Err(Error::InvalidInput(format!(
            "period {period} must be positive"
        )));
    }
    let bound = p.side_bound(xi);
    let half = period / 2.0;
    let mut m = p.m.max(1);
    let need = ((bound - p.tau_hat_max) / half).floor();
    if need.is_finite() && need >= m as f64 {
        m = (need as u32).saturating_add(1);
    }
    while p.tau_hat_max + m as f64 * half - bound <= 0.0 {
        m += 1;
    }
    Ok(Dwell {
        tau: p.tau_hat_max + m as f64 * half,
        m,
    })
}

/// Eigenvalue test with the real parts strictly below `-tol`.
pub fn is_hurwitz(a: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(linalg::eigenvalues(a)?.iter().all(|l| l.re < -tol))
}

/// Solution of `P A + A^T P = -I`.
pub fn lyapunov(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // Column-major vec: vec(P A) = (A^T kron I) vec P, vec(A^T P) = (I kron A^T) vec P.
    let k = at.kronecker(&id) + id.kronecker(&at);
    let rhs = nalgebra::DVector::from_iterator(n * n, (-&id).iter().copied());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

pub const HURWITZ_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LyapunovWeight {
    pub p: DMatrix<f64>,
    /// Position in the input list of the mode that produced `p`.
    pub index: usize,
}

pub fn lyapunov_weight(a_list: &[DMatrix<f64>]) -> Result<LyapunovWeight> {
    for (index, a) in a_list.iter().enumerate() {
        if is_hurwitz(a, HURWITZ_RTOL * a.norm())? {
            let p = lyapunov(a)?;
            if Cholesky::new(p.clone()).is_none() {
                return Err(Error::NotPositiveDefinite);
            }
            return Ok(LyapunovWeight { p, index });
        }
    }
    Err(Error::NoHurwitzMode)
}

/// Weighted logarithmic norm: largest eigenvalue of the pencil `(P A + A^T P, 2 P)`.
pub fn matrix_measure(a: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(p.clone()).ok_or(Error::NotPositiveDefinite)?;
    let r = chol.l();
    let s = p * a + a.transpose() * p;
    let rinv = r.clone().try_inverse().ok_or(Error::NotPositiveDefinite)?;
    let m = &rinv * s * rinv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let (vals, _) = linalg::sym_eigen(&m)?;
    Ok(vals.last().copied().unwrap_or(f64::NEG_INFINITY) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureReport {
    pub ok: bool,
    pub value: f64,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
}

pub fn measure_condition(
    a_list: &[DMatrix<f64>],
    tau_list: &[f64],
    p: &DMatrix<f64>,
) -> Result<MeasureReport> {
    if a_list.len() != tau_list.len() || a_list.is_empty() {
        return Err(Error::InvalidInput(
            "mode and dwell lists must be nonempty and of equal length".into(),
        ));
    }
    let total: f64 = tau_list.iter().sum();
    let nu: Vec<f64> = tau_list.iter().map(|t| t / total).collect();
    let mu = a_list
        .iter()
        .map(|a| matrix_measure(a, p))
        .collect::<Result<Vec<_>>>()?;
    let value = nu.iter().zip(&mu).map(|(n, m)| n * m).sum::<f64>();
    Ok(MeasureReport {
        ok: value < 0.0,
        value,
        nu,
        mu,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingSchedule {
    order: Vec<u32>,
    dwell: BTreeMap<u32, f64>,
    horizon: f64,
    #[serde(skip)]
    starts: Vec<f64>,
    #[serde(skip)]
    period: f64,
}

#[derive(Deserialize)]
struct ScheduleFile {
    order: Vec<u32>,
    dwell: BTreeMap<u32, f64>,
    horizon: f64,
}

impl<'de> Deserialize<'de> for SwitchingSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ScheduleFile::deserialize(d)?;
        SwitchingSchedule::new(f.order, f.dwell, f.horizon).map_err(serde::de::Error::custom)
    }
}

/// One maximal interval on which a single topology is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub id: u32,
}

impl SwitchingSchedule {
    pub fn new(order: Vec<u32>, dwell: BTreeMap<u32, f64>, horizon: f64) -> Result<Self> {
        if order.is_empty() {
            return Err(Error::InvalidInput("switching order is empty".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon {horizon} must be positive"
            )));
        }
        let mut starts = Vec::with_capacity(order.len());
        let mut acc = 0.0;
        for id in &order {
            let tau = *dwell
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("no dwell time for topology {id}")))?;
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "dwell of topology {id} must be positive"
                )));
            }
            starts.push(acc);
            acc += tau;
        }
        Ok(SwitchingSchedule {
            order,
            dwell,
            horizon,
            starts,
            period: acc,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn dwell(&self, id: u32) -> Option<f64> {
        self.dwell.get(&id).copied()
    }

    pub fn dwell_map(&self) -> &BTreeMap<u32, f64> {
        &self.dwell
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Sum of the dwell times over one pass of the order.
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.order.clone(), self.dwell.clone(), horizon)
    }

    /// Instant `t_k` at which the `k`-th slot begins (`t_0 = 0`).
    pub fn slot_start(&self, k: usize) -> f64 {
        let len = self.order.len();
        (k / len) as f64 * self.period + self.starts[k % len]
    }

    pub fn slot_id(&self, k: usize) -> u32 {
        self.order[k % self.order.len()]
    }

    /// Slot index active at `t`, right-continuous at switch instants.
    pub fn slot_at(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) || t > self.horizon {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        let len = self.order.len();
        let mut k = (t / self.period).floor() as usize * len;
        // Correct for rounding in the floor against the exact slot starts.
        while k > 0 && self.slot_start(k) > t {
            k -= 1;
        }
        while self.slot_start(k + 1) <= t {
            k += 1;
        }
        Ok(k)
    }

    pub fn switching_signal(&self, t: f64) -> Result<u32> {
        Ok(self.slot_id(self.slot_at(t)?))
    }

    /// All slot boundaries `t_k` in `(0, horizon]`.
    pub fn switch_times(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 1;
        loop {
            let t = self.slot_start(k);
            if t > self.horizon {
                break;
            }
            out.push(t);
            k += 1;
        }
        out
    }

    /// Maximal constant-topology intervals covering `[0, horizon]`.
    pub fn segments(&self) -> Segments<'_> {
        Segments { sched: self, k: 0 }
    }
}

pub struct Segments<'a> {
    sched: &'a SwitchingSchedule,
    k: usize,
}

impl Iterator for Segments<'_> {
    type Item = Segment;
    fn next(&mut self) -> Option<Segment> {
        let s = self.sched;
        let start = s.slot_start(self.k);
        if start >= s.horizon && !(self.k == 0 && s.horizon == 0.0) {
            return None;
        }
        let id = s.slot_id(self.k);
        let len = s.order.len();
        if s.order.iter().all(|&o| o == id) {
            // Constant signal: one segment.
            self.k = usize::MAX / 2;
            return Some(Segment {
                start,
                end: s.horizon,
                id,
            });
        }
        let mut k = self.k + 1;
        while s.slot_id(k) == id && k - self.k < len {
            k += 1;
        }
        self.k = k;
        Some(Segment {
            start,
            end: s.slot_start(k).min(s.horizon),
            id,
        })
    }
}

/// Per-topology output of the dwell-time construction.
#[derive(Debug, Clone, Serialize)]
pub struct DwellEntry {
    pub id: u32,
    pub period: f64,
    pub dwell: Dwell,
    pub certificate: RationalCertificate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleBuild {
    pub xi: f64,
    pub params: DwellParams,
    pub entries: Vec<DwellEntry>,
    #[serde(skip)]
    pub schedule: SwitchingSchedule,
}

/// Dwell times for a cyclic order of topologies; `params = None` uses [`DwellParams::auto`].
pub fn build_schedule(
    topologies: &[&Topology],
    params: Option<DwellParams>,
    horizon: f64,
    max_den: u64,
    ratio_tol: f64,
) -> Result<ScheduleBuild> {
    let mut spectra = Vec::new();
    for t in topologies {
        let s = graph::topology_spectrum(t)?;
        if !s.connected {
            return Err(Error::Disconnected(t.id));
        }
        spectra.push(s);
    }
    let xi = xi(&spectra.iter().collect::<Vec<_>>());
    let params = params.unwrap_or_else(|| DwellParams::auto(xi));
    let mut entries: Vec<DwellEntry> = Vec::new();
    let mut dwell = BTreeMap::new();
    for (t, s) in topologies.iter().zip(&spectra) {
        if entries.iter().any(|e| e.id == t.id) {
            continue;
        }
        let certificate = graph::rational_ratio_certificate(s, max_den, ratio_tol)?;
        if !certificate.ok {
            return Err(Error::IrrationalRatio { topology: t.id });
        }
        let period = base_period(&certificate)?;
        let d = dwell_time(&params, period, xi)?;
        dwell.insert(t.id, d.tau);
        entries.push(DwellEntry {
            id: t.id,
            period,
            dwell: d,
            certificate,
        });
    }
    let order = topologies.iter().map(|t| t.id).collect();
    let schedule = SwitchingSchedule::new(order, dwell, horizon)?;
    Ok(ScheduleBuild {
        xi,
        params,
        entries,
        schedule,
    })
}
