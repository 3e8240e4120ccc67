//! Switching Luenberger observer, residuals and the alarm rule.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_agent_set, Topology};
use crate::linalg;
use crate::schedule::SwitchingSchedule;
use crate::sim::{assemble_a, topology_map, ExpCache, PlantState, Trace};

pub const DEFAULT_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverConfig {
    pub observed: Vec<usize>,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
    pub alarm_threshold: f64,
    pub alarm_window: usize,
}

/// The part of the configuration the alarm decision may see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmConfig {
    pub threshold: f64,
    pub window: usize,
}

impl ObserverConfig {
    pub fn new(observed: Vec<usize>, psi: Vec<f64>, theta: Vec<f64>) -> Self {
        ObserverConfig {
            observed,
            psi,
            theta,
            alarm_threshold: DEFAULT_THRESHOLD,
            alarm_window: DEFAULT_WINDOW,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.observed.is_empty() {
            return Err(Error::InvalidInput(
                "observer needs at least one observed agent".into(),
            ));
        }
        check_agent_set(&self.observed, n, "observed")?;
        let m = self.observed.len();
        if self.psi.len() != m || self.theta.len() != m {
            return Err(Error::InvalidInput(
                "one gain pair per observed agent".into(),
            ));
        }
        for (name, g) in [("psi", &self.psi), ("theta", &self.theta)] {
            if g.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "{name} gains must be nonnegative"
                )));
            }
            if g.iter().all(|&x| x == 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} gains must not all vanish"
                )));
            }
        }
        if !(self.alarm_threshold > 0.0) {
            return Err(Error::InvalidInput(
                "alarm threshold must be positive".into(),
            ));
        }
        if self.alarm_window == 0 {
            return Err(Error::InvalidInput(
                "alarm window must be at least one sample".into(),
            ));
        }
        Ok(())
    }

    pub fn alarm(&self) -> AlarmConfig {
        AlarmConfig {
            threshold: self.alarm_threshold,
            window: self.alarm_window,
        }
    }

    /// Diagonal `Phi` and `Theta` with the gains on the observed agents.
    pub fn gain_matrices(&self, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut phi = DMatrix::zeros(n, n);
        let mut theta = DMatrix::zeros(n, n);
        for (k, &i) in self.observed.iter().enumerate() {
            phi[(i - 1, i - 1)] = self.psi[k];
            theta[(i - 1, i - 1)] = self.theta[k];
        }
        (phi, theta)
    }
}

/// Error dynamics `[[0, I], [-L - Phi, -Theta]]`.
pub fn assemble_observer_a(
    l: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    theta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = l.nrows();
    let mut a = assemble_a(&(l + phi));
    a.view_mut((n, n), (n, n)).copy_from(&(-theta));
    a
}

pub fn hurwitz(a: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(linalg::eigenvalues(a)?.iter().all(|l| l.re < -tol))
}

#[derive(Debug, Clone)]
pub struct ResidualTrace {
    pub times: Vec<f64>,
    /// Estimate minus output on each observed channel.
    pub residuals: Vec<DVector<f64>>,
    pub observer_states: Vec<PlantState>,
}

/// Observer estimate errors against the plant for tracking checks.
pub fn estimation_error(tr: &Trace, res: &ResidualTrace) -> Vec<f64> {
    tr.plant_states
        .iter()
        .zip(&res.observer_states)
        .map(|(p, o)| (&o.z - &p.z).norm())
        .collect()
}

/// Runs the observer in lock-step with a recorded plant: every sample interval is
/// integrated exactly together with the plant generator, then the plant part is
/// re-anchored to the next recorded sample.
pub fn run_observer(
    tr: &Trace,
    topologies: &[Topology],
    sched: &SwitchingSchedule,
    cfg: &ObserverConfig,
    initial: &PlantState,
) -> Result<ResidualTrace> {
    let n = tr.n;
    cfg.validate(n)?;
    if cfg.observed != tr.observed {
        return Err(Error::InvalidInput(
            "observer and trace observe different agents".into(),
        ));
    }
    if initial.n() != n {
        return Err(Error::InvalidInput(
            "observer initial state has the wrong size".into(),
        ));
    }
    if tr.is_empty() {
        return Err(Error::InvalidInput("empty trace".into()));
    }
    let (phi, theta) = cfg.gain_matrices(n);
    let map = topology_map(topologies);
    let q = tr.exo.as_ref().map_or(0, |e| e.dim());
    let n2 = 2 * n;
    let p = n2 + q;
    let mut joint: HashMap<u32, DMatrix<f64>> = HashMap::new();
    for &id in sched.order() {
        let t = map.get(&id).ok_or_else(|| Error::ScheduleMismatch {
            time: 0.0,
            detail: format!("unknown topology {id}"),
        })?;
        let l = t.laplacian();
        let a = assemble_a(&l);
        let plant = match &tr.exo {
            Some(e) => e.augment(&a),
            None => a,
        };
        let mut j = DMatrix::zeros(p + n2, p + n2);
        j.view_mut((0, 0), (p, p)).copy_from(&plant);
        j.view_mut((p + n, 0), (n, n)).copy_from(&phi);
        j.view_mut((p + n, n), (n, n)).copy_from(&theta);
        j.view_mut((p, p), (n2, n2))
            .copy_from(&assemble_observer_a(&l, &phi, &theta));
        joint.insert(id, j);
    }
    for (k, &t) in tr.times.iter().enumerate() {
        let id = sched
            .switching_signal(t)
            .map_err(|_| Error::ScheduleMismatch {
                time: t,
                detail: "sample outside the schedule horizon".into(),
            })?;
        if id != tr.switch_marks[k] {
            return Err(Error::ScheduleMismatch {
                time: t,
                detail: format!(
                    "trace has topology {}, schedule has {id}",
                    tr.switch_marks[k]
                ),
            });
        }
    }

    let sel: Vec<usize> = cfg.observed.iter().map(|i| i - 1).collect();
    let residual = |zhat: &DVector<f64>, y: &DVector<f64>| {
        DVector::from_iterator(
            sel.len(),
            sel.iter().enumerate().map(|(k, &i)| zhat[i] - y[k]),
        )
    };
    let mut cache = ExpCache::new();
    let mut zhat = initial.z.clone();
    let mut out = ResidualTrace {
        times: vec![tr.times[0]],
        residuals: vec![residual(&zhat, &tr.outputs[0])],
        observer_states: vec![PlantState { z: zhat.clone() }],
    };
    let mut s = DVector::zeros(p + n2);
    for k in 0..tr.len() - 1 {
        let h = tr.times[k + 1] - tr.times[k];
        let id = tr.switch_marks[k];
        s.rows_mut(0, n2).copy_from(&tr.plant_states[k].z);
        s.rows_mut(n2, q).copy_from(&tr.exo_states[k]);
        s.rows_mut(p, n2).copy_from(&zhat);
        let regular = (h - tr.dt).abs() <= 1e-9 * tr.dt;
        let e = cache.get(id, if regular { tr.dt } else { h }, &joint[&id], regular);
        let next = e * &s;
        let z_next = next.rows(0, n2);
        let z_rec = &tr.plant_states[k + 1].z;
        let gap = (z_next - z_rec).amax();
        if gap > 1e-6 * z_rec.amax().max(1.0) {
            return Err(Error::ScheduleMismatch {
                time: tr.times[k + 1],
                detail: format!("plant record inconsistent with the topologies (gap {gap:e})"),
            });
        }
        zhat = next.rows(p, n2).into_owned();
        if !zhat.iter().all(|x| x.is_finite()) {
            return Err(Error::InstabilityOverflow {
                time: tr.times[k + 1],
            });
        }
        out.times.push(tr.times[k + 1]);
        out.residuals.push(residual(&zhat, &tr.outputs[k + 1]));
        out.observer_states.push(PlantState { z: zhat.clone() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alarm {
    pub time: f64,
    pub sample: usize,
}

/// First sample closing a run of `window` consecutive samples with `|r|_inf > threshold`.
pub fn detect(res: &ResidualTrace, cfg: &AlarmConfig) -> Option<Alarm> {
    let mut run = 0usize;
    for (k, r) in res.residuals.iter().enumerate() {
        if linalg::max_abs(r) > cfg.threshold || r.iter().any(|x| x.is_nan()) {
            run += 1;
            if run >= cfg.window {
                return Some(Alarm {
                    time: res.times[k],
                    sample: k,
                });
            }
        } else {
            run = 0;
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct AlarmRecord {
    pub alarm_time: Option<f64>,
    pub threshold: f64,
}

impl AlarmRecord {
    pub fn new(alarm: Option<Alarm>, cfg: &AlarmConfig) -> Self {
        AlarmRecord {
            alarm_time: alarm.map(|a| a.time),
            threshold: cfg.threshold,
        }
    }
}
