//! Second-order switched plant: assembly, exact piecewise propagation and traces.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{check_agent_set, Topology};
use crate::linalg::expm;
use crate::schedule::SwitchingSchedule;

/// Stacked positions then velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub z: DVector<f64>,
}

impl PlantState {
    pub fn new(z: DVector<f64>) -> Result<Self> {
        if !z.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(
                "plant state must have even length".into(),
            ));
        }
        Ok(PlantState { z })
    }

    pub fn from_parts(x: &[f64], v: &[f64]) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::InvalidInput(
                "position and velocity lengths differ".into(),
            ));
        }
        Ok(PlantState {
            z: DVector::from_iterator(2 * x.len(), x.iter().chain(v).copied()),
        })
    }

    pub fn n(&self) -> usize {
        self.z.len() / 2
    }

    pub fn x(&self) -> &[f64] {
        &self.z.as_slice()[..self.n()]
    }

    pub fn v(&self) -> &[f64] {
        &self.z.as_slice()[self.n()..]
    }
}

pub fn assemble_a(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&(-l));
    a
}

/// Selects the positions of the observed agents.
pub fn assemble_c(observed: &[usize], n: usize) -> Result<DMatrix<f64>> {
    if observed.is_empty() {
        return Err(Error::InvalidInput("observed set is empty".into()));
    }
    check_agent_set(observed, n, "observed")?;
    let mut c = DMatrix::zeros(observed.len(), 2 * n);
    for (k, &i) in observed.iter().enumerate() {
        c[(k, i - 1)] = 1.0;
    }
    Ok(c)
}

/// Injection into the velocity rows of the attacked agents.
pub fn injection_matrix(attacked: &[usize], n: usize) -> Result<DMatrix<f64>> {
    check_agent_set(attacked, n, "attacked")?;
    let mut b = DMatrix::zeros(2 * n, attacked.len());
    for (k, &i) in attacked.iter().enumerate() {
        b[(n + i - 1, k)] = 1.0;
    }
    Ok(b)
}

/// Autonomous generator of the attack input: `m' = mode * m`, input `bg * m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exosystem {
    pub bg: DMatrix<f64>,
    pub mode: DMatrix<f64>,
}

impl Exosystem {
    pub fn dim(&self) -> usize {
        self.mode.nrows()
    }

    /// `[[A, BG], [0, mode]]`.
    pub fn augment(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n2 = a.nrows();
        let q = self.dim();
        let mut m = DMatrix::zeros(n2 + q, n2 + q);
        m.view_mut((0, 0), (n2, n2)).copy_from(a);
        m.view_mut((0, n2), (n2, q)).copy_from(&self.bg);
        m.view_mut((n2, n2), (q, q)).copy_from(&self.mode);
        m
    }
}

/// Everything the plant needs to realize an exponential attack input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackModel {
    pub rho: f64,
    pub attacked: Vec<usize>,
    /// Attack values are `g * m`.
    pub g: DMatrix<f64>,
    pub mode0: DVector<f64>,
    pub exo: Exosystem,
}

impl AttackModel {
    /// Real-valued mode block for `eta`, with `g0 = g_re + i g_im`.
    pub fn new(
        n: usize,
        attacked: &[usize],
        eta_re: f64,
        eta_im: f64,
        g_re: &[f64],
        g_im: &[f64],
        rho: f64,
    ) -> Result<Self> {
        if g_re.len() != attacked.len() || g_im.len() != attacked.len() {
            return Err(Error::InvalidInput(
                "g0 length must match the attacked set".into(),
            ));
        }
        if !(rho >= 0.0) {
            return Err(Error::InvalidInput(
                "attack onset must be nonnegative".into(),
            ));
        }
        let b = injection_matrix(attacked, n)?;
        let k = attacked.len();
        let (g, mode, mode0) = if eta_im == 0.0 {
            (
                DMatrix::from_column_slice(k, 1, g_re),
                DMatrix::from_element(1, 1, eta_re),
                DVector::from_element(1, 1.0),
            )
        } else {
            let mut g = DMatrix::zeros(k, 2);
            g.set_column(0, &DVector::from_column_slice(g_re));
            g.set_column(1, &DVector::from_column_slice(g_im));
            (
                g,
                DMatrix::from_row_slice(2, 2, &[eta_re, eta_im, -eta_im, eta_re]),
                DVector::from_column_slice(&[1.0, 0.0]),
            )
        };
        Ok(AttackModel {
            rho,
            attacked: attacked.to_vec(),
            exo: Exosystem { bg: &b * &g, mode },
            g,
            mode0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub z: DVector<f64>,
    pub mode: DVector<f64>,
}

/// Exact propagation of `[z; m]` over one interval, sampled at `t0 + k dt` and at the end.
pub fn propagate_interval(
    a: &DMatrix<f64>,
    exo: Option<&Exosystem>,
    z0: &DVector<f64>,
    mode0: &DVector<f64>,
    t0: f64,
    dt: f64,
    duration: f64,
) -> Result<Vec<Sample>> {
    if !(duration > 0.0 && dt > 0.0) {
        return Err(Error::InvalidInput(
            "duration and dt must be positive".into(),
        ));
    }
    let n2 = a.nrows();
    let aug = match exo {
        Some(e) => e.augment(a),
        None => a.clone(),
    };
    let q = aug.nrows() - n2;
    if mode0.len() != q || z0.len() != n2 {
        return Err(Error::InvalidInput("state dimensions do not match".into()));
    }
    let step = expm(&(&aug * dt));
    let mut s = DVector::zeros(n2 + q);
    s.rows_mut(0, n2).copy_from(z0);
    s.rows_mut(n2, q).copy_from(mode0);
    let split = |s: &DVector<f64>, t: f64| Sample {
        t,
        z: s.rows(0, n2).into_owned(),
        mode: s.rows(n2, q).into_owned(),
    };
    let mut out = vec![split(&s, t0)];
    let mut k = 1usize;
    while (k as f64) * dt < duration * (1.0 - 1e-12) {
        s = &step * &s;
        out.push(split(&s, t0 + k as f64 * dt));
        k += 1;
    }
    let last = duration - (k - 1) as f64 * dt;
    s = expm(&(&aug * last)) * &s;
    out.push(split(&s, t0 + duration));
    if out.iter().any(|x| !x.z.iter().all(|v| v.is_finite())) {
        let t = out
            .iter()
            .find(|x| !x.z.iter().all(|v| v.is_finite()))
            .unwrap()
            .t;
        return Err(Error::InstabilityOverflow { time: t });
    }
    Ok(out)
}

/// Plant record on a fixed sample grid plus every switch and onset instant.
#[derive(Debug, Clone)]
pub struct Trace {
    pub n: usize,
    /// Nominal sample step.
    pub dt: f64,
    pub observed: Vec<usize>,
    pub times: Vec<f64>,
    pub switch_marks: Vec<u32>,
    pub plant_states: Vec<PlantState>,
    pub outputs: Vec<DVector<f64>>,
    /// Attack channel values, ordered like [`AttackModel::attacked`].
    pub attack_values: Vec<DVector<f64>>,
    /// Exosystem state per sample; empty vectors when unattacked.
    pub exo_states: Vec<DVector<f64>>,
    pub exo: Option<Exosystem>,
    pub attacked: Vec<usize>,
    /// Set when propagation stopped on a non-finite state.
    pub overflow: Option<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Samples closer than this fraction of `dt` to an event are merged into it.
const MERGE_FRAC: f64 = 1e-9;

/// Matrix exponentials keyed by topology and step bits.
pub(crate) struct ExpCache {
    map: HashMap<(u32, u64), DMatrix<f64>>,
}

impl ExpCache {
    pub(crate) fn new() -> Self {
        ExpCache {
            map: HashMap::new(),
        }
    }

    pub(crate) fn get(&mut self, id: u32, h: f64, m: &DMatrix<f64>, cache: bool) -> DMatrix<f64> {
        if !cache {
            return expm(&(m * h));
        }
        self.map
            .entry((id, h.to_bits()))
            .or_insert_with(|| expm(&(m * h)))
            .clone()
    }
}

/// Sample instants in `(start, end]` on the global `k dt` grid, `end` always included.
pub(crate) fn grid_points(start: f64, end: f64, dt: f64, extra: Option<f64>) -> Vec<f64> {
    let eps = MERGE_FRAC * dt;
    let mut out = Vec::new();
    let mut k = (start / dt).floor() as u64 + 1;
    loop {
        let t = k as f64 * dt;
        if t >= end - eps {
            break;
        }
        if t > start + eps {
            out.push(t);
        }
        k += 1;
    }
    if let Some(r) = extra {
        if r > start + eps && r < end - eps {
            out.retain(|&t| (t - r).abs() > eps);
            out.push(r);
            out.sort_by(f64::total_cmp);
        }
    }
    out.push(end);
    out
}

pub(crate) fn topology_map(topologies: &[Topology]) -> HashMap<u32, &Topology> {
    topologies.iter().map(|t| (t.id, t)).collect()
}

/// Plant under the schedule; stops early on overflow and records the time.
pub fn simulate_partial(
    topologies: &[Topology],
    sched: &SwitchingSchedule,
    z0: &PlantState,
    attack: Option<&AttackModel>,
    observed: &[usize],
    dt: f64,
) -> Result<Trace> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let n = z0.n();
    let c = assemble_c(observed, n)?;
    let map = topology_map(topologies);
    let mut amats = HashMap::new();
    for &id in sched.order() {
        let t = map.get(&id).ok_or_else(|| {
            Error::InvalidInput(format!("schedule references unknown topology {id}"))
        })?;
        if t.n() != n {
            return Err(Error::InvalidInput(format!(
                "topology {id} has the wrong agent count"
            )));
        }
        let a = assemble_a(&t.laplacian());
        let aug = match attack {
            Some(atk) => atk.exo.augment(&a),
            None => a,
        };
        amats.insert(id, aug);
    }
    let q = attack.map_or(0, |a| a.exo.dim());
    let rho = attack.map(|a| a.rho);
    let n2 = 2 * n;
    let mut s = DVector::zeros(n2 + q);
    s.rows_mut(0, n2).copy_from(&z0.z);
    if let Some(atk) = attack {
        if atk.rho == 0.0 {
            s.rows_mut(n2, q).copy_from(&atk.mode0);
        }
    }
    let mut tr = Trace {
        n,
        dt,
        observed: observed.to_vec(),
        times: vec![],
        switch_marks: vec![],
        plant_states: vec![],
        outputs: vec![],
        attack_values: vec![],
        exo_states: vec![],
        exo: attack.map(|a| a.exo.clone()),
        attacked: attack.map_or(vec![], |a| a.attacked.clone()),
        overflow: None,
    };
    let record = |tr: &mut Trace, t: f64, id: u32, s: &DVector<f64>| {
        let z = s.rows(0, n2).into_owned();
        let m = s.rows(n2, q).into_owned();
        tr.times.push(t);
        tr.switch_marks.push(id);
        tr.outputs.push(&c * &z);
        tr.attack_values.push(match attack {
            Some(a) => &a.g * &m,
            None => DVector::zeros(0),
        });
        tr.exo_states.push(m);
        tr.plant_states.push(PlantState { z });
    };
    let mut cache = ExpCache::new();
    let mut active = rho == Some(0.0);
    let mut first = true;
    for seg in sched.segments() {
        let aug = &amats[&seg.id];
        if first {
            record(&mut tr, seg.start, seg.id, &s);
            first = false;
        } else {
            // The boundary sample belongs to the incoming topology.
            *tr.switch_marks.last_mut().unwrap() = seg.id;
        }
        let mut t = seg.start;
        for tn in grid_points(seg.start, seg.end, dt, rho) {
            let h = tn - t;
            let regular = (h - dt).abs() <= MERGE_FRAC * dt;
            let e = cache.get(seg.id, if regular { dt } else { h }, aug, regular);
            s = e * &s;
            if let (Some(atk), Some(r)) = (attack, rho) {
                if !active && tn >= r {
                    s.rows_mut(n2, q).copy_from(&atk.mode0);
                    active = true;
                }
            }
            t = tn;
            if !s.iter().all(|v| v.is_finite()) {
                tr.overflow = Some(t);
                return Ok(tr);
            }
            record(&mut tr, t, seg.id, &s);
        }
    }
    Ok(tr)
}

pub fn simulate(
    topologies: &[Topology],
    sched: &SwitchingSchedule,
    z0: &PlantState,
    attack: Option<&AttackModel>,
    observed: &[usize],
    dt: f64,
) -> Result<Trace> {
    let tr = simulate_partial(topologies, sched, z0, attack, observed, dt)?;
    match tr.overflow {
        Some(time) => Err(Error::InstabilityOverflow { time }),
        None => Ok(tr),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusError {
    pub pos_disagreement: Vec<f64>,
    pub vel_disagreement: Vec<f64>,
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Largest pairwise position and velocity gaps per sample.
pub fn consensus_error(tr: &Trace) -> ConsensusError {
    ConsensusError {
        pos_disagreement: tr.plant_states.iter().map(|p| spread(p.x())).collect(),
        vel_disagreement: tr.plant_states.iter().map(|p| spread(p.v())).collect(),
    }
}

/// Optional columns appended to the trace CSV, aligned with its samples.
pub struct CsvExtras<'a> {
    pub residuals: Option<&'a [DVector<f64>]>,
}

/// Trace as CSV with a header row and `{:.16e}` numbers.
pub fn write_csv<W: Write>(tr: &Trace, extras: CsvExtras<'_>, mut w: W) -> Result<()> {
    let mut head = vec!["t".to_string(), "topology".to_string()];
    head.extend((1..=tr.n).map(|i| format!("x{i}")));
    head.extend((1..=tr.n).map(|i| format!("v{i}")));
    head.extend(tr.observed.iter().map(|i| format!("y{i}")));
    if extras.residuals.is_some() {
        head.extend(tr.observed.iter().map(|i| format!("r{i}")));
    }
    head.extend(tr.attacked.iter().map(|k| format!("attack{k}")));
    writeln!(w, "{}", head.join(","))?;
    for k in 0..tr.len() {
        let mut row = format!("{:.16e},{}", tr.times[k], tr.switch_marks[k]);
        let mut push = |x: f64| {
            row.push(',');
            row.push_str(&format!("{x:.16e}"));
        };
        tr.plant_states[k].z.iter().for_each(|&x| push(x));
        tr.outputs[k].iter().for_each(|&x| push(x));
        if let Some(r) = extras.residuals {
            r[k].iter().for_each(|&x| push(x));
        }
        tr.attack_values[k].iter().for_each(|&x| push(x));
        writeln!(w, "{row}")?;
    }
    Ok(())
}
