//! Scenario files and end-to-end orchestration: admissibility checks,
//! attack synthesis, plant and observer runs, reports and parameter sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, check_agent_set, Topology};
use crate::observer::{self, Alarm, AlarmRecord, ObserverConfig, ResidualTrace};
use crate::schedule::{self, DwellParams, ScheduleBuild, SwitchingSchedule};
use crate::sim::{self, CsvExtras, PlantState, Trace};
use crate::zda::{self, Prefix, SynthesisOptions, ZdaAttack};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl InitialState {
    pub fn state(&self) -> Result<PlantState> {
        PlantState::from_parts(&self.x, &self.v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub alarm: f64,
    pub alarm_window: usize,
    /// Disagreement below which the run counts as having reached consensus.
    pub consensus: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            alarm: observer::DEFAULT_THRESHOLD,
            alarm_window: observer::DEFAULT_WINDOW,
            consensus: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeSpec {
    pub stealth_set: Vec<u32>,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub eta_probes: Vec<f64>,
    /// Switching order the attacker assumes before onset; defaults to the running order.
    #[serde(default)]
    pub prefix_order: Option<Vec<u32>>,
    #[serde(default)]
    pub g_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackSpec {
    Synthesize(SynthesizeSpec),
    Explicit(ZdaAttack),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub id: String,
    pub topologies: Vec<Topology>,
    pub order: Vec<u32>,
    /// `None` picks parameters from the spectra.
    #[serde(default)]
    pub dwell_params: Option<DwellParams>,
    pub observed: Vec<usize>,
    #[serde(default)]
    pub attacked: Vec<usize>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    pub initial: InitialState,
    /// State the defender is told; defaults to the true state minus the attack discrepancy.
    #[serde(default)]
    pub reported_initial: Option<InitialState>,
    pub horizon: f64,
    pub dt: f64,
    pub observer: Gains,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "yes")]
    pub require_trivial_coverage: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.check()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path)?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Json(j) => Error::Scenario(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn n(&self) -> usize {
        self.topologies.first().map_or(0, |t| t.n())
    }

    pub fn topology(&self, id: u32) -> Result<&Topology> {
        self.topologies
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Scenario(format!("unknown topology id {id}")))
    }

    /// Topologies in switching order, repeats kept.
    pub fn running(&self) -> Result<Vec<&Topology>> {
        self.order.iter().map(|&id| self.topology(id)).collect()
    }

    /// Distinct running topologies in order of first appearance.
    pub fn running_set(&self) -> Result<Vec<&Topology>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &id in &self.order {
            if seen.insert(id) {
                out.push(self.topology(id)?);
            }
        }
        Ok(out)
    }

    /// Structural invariants; violations are hard errors.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.schema != SCHEMA {
            return bad(format!(
                "unsupported schema {} (expected {SCHEMA})",
                self.schema
            ));
        }
        if self.topologies.is_empty() {
            return bad("no topologies".into());
        }
        let n = self.n();
        let mut ids = BTreeSet::new();
        for t in &self.topologies {
            if !ids.insert(t.id) {
                return bad(format!("duplicate topology id {}", t.id));
            }
            if t.n() != n {
                return bad(format!(
                    "topology {} has {} agents, expected {n}",
                    t.id,
                    t.n()
                ));
            }
        }
        if self.order.is_empty() {
            return bad("switching order is empty".into());
        }
        self.running()?;
        let sets = |set: &[usize], what: &str| {
            check_agent_set(set, n, what).map_err(|e| Error::Scenario(e.to_string()))
        };
        sets(&self.observed, "observed")?;
        if self.observed.is_empty() {
            return bad("observed set is empty".into());
        }
        sets(&self.attacked, "attacked")?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        for (what, s) in [
            ("initial", Some(&self.initial)),
            ("reported_initial", self.reported_initial.as_ref()),
        ] {
            if let Some(s) = s {
                if s.x.len() != n || s.v.len() != n {
                    return bad(format!(
                        "{what} state must have {n} positions and velocities"
                    ));
                }
            }
        }
        let m = self.observed.len();
        if self.observer.psi.len() != m || self.observer.theta.len() != m {
            return bad("one observer gain pair per observed agent".into());
        }
        match &self.attack {
            Some(AttackSpec::Synthesize(s)) => {
                for &id in &s.stealth_set {
                    self.topology(id)?;
                }
                for &id in s.prefix_order.iter().flatten() {
                    if !self.order.contains(&id) {
                        return bad(format!("prefix topology {id} is not in the running order"));
                    }
                }
            }
            Some(AttackSpec::Explicit(a)) => {
                if !self.attacked.is_empty() && a.attacked != self.attacked {
                    return bad("explicit attack channels differ from the attacked set".into());
                }
                sets(&a.attacked, "attack")?;
                if a.delta_z0.len() != 2 * n {
                    return bad("explicit attack discrepancy has the wrong size".into());
                }
            }
            None => {}
        }
        Ok(())
    }

    pub fn observer_config(&self) -> ObserverConfig {
        ObserverConfig {
            observed: self.observed.clone(),
            psi: self.observer.psi.clone(),
            theta: self.observer.theta.clone(),
            alarm_threshold: self.thresholds.alarm,
            alarm_window: self.thresholds.alarm_window,
        }
    }

    pub fn schedule(&self) -> Result<ScheduleBuild> {
        schedule::build_schedule(
            &self.running()?,
            self.dwell_params,
            self.horizon,
            graph::DEFAULT_MAX_DEN,
            graph::DEFAULT_RATIO_TOL,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn push(&mut self, name: impl Into<String>, status: Status, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            status,
            detail: detail.into(),
        });
    }

    pub fn status(&self, name: &str) -> Option<Status> {
        self.checks
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.status)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status == Status::Pass)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<4} {}: {}", c.status, c.name, c.detail)?;
        }
        Ok(())
    }
}

pub const CHECK_RATIONAL: &str = "rational eigenvalue ratios";
pub const CHECK_DISTINCT: &str = "distinct-eigenvalue member";
pub const CHECK_DWELL: &str = "dwell-time construction";
pub const CHECK_HURWITZ: &str = "observer error matrices Hurwitz";
pub const CHECK_MEASURE: &str = "dwell-weighted matrix measure negative";
pub const CHECK_DETECT: &str = "union difference graph covered by observed agents";

fn pass_fail(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// Admissibility of the running set. Failed conditions are reported, not raised.
pub fn validate(sc: &Scenario) -> Result<ValidationReport> {
    sc.check()?;
    let mut rep = ValidationReport::default();
    let set = sc.running_set()?;

    let mut rational = Vec::new();
    let mut distinct = Vec::new();
    for t in &set {
        let spec = graph::topology_spectrum(t)?;
        if !spec.connected {
            rational.push(format!("topology {} disconnected", t.id));
            continue;
        }
        if has_distinct(&spec) {
            distinct.push(t.id);
        }
        let cert = graph::rational_ratio_certificate(
            &spec,
            graph::DEFAULT_MAX_DEN,
            graph::DEFAULT_RATIO_TOL,
        )?;
        if !cert.ok {
            rational.push(format!("topology {}", t.id));
        }
    }
    if rational.is_empty() {
        rep.push(CHECK_RATIONAL, Status::Pass, "every running topology");
    } else {
        rep.push(
            CHECK_RATIONAL,
            Status::Fail,
            format!("fails for {}", rational.join(", ")),
        );
    }
    rep.push(
        CHECK_DISTINCT,
        pass_fail(!distinct.is_empty()),
        if distinct.is_empty() {
            "every running topology has a repeated eigenvalue".to_string()
        } else {
            format!("topologies {distinct:?}")
        },
    );

    let build = sc.schedule();
    match &build {
        Ok(b) => rep.push(
            CHECK_DWELL,
            Status::Pass,
            b.entries
                .iter()
                .map(|e| format!("tau{} = {:.6} (m = {})", e.id, e.dwell.tau, e.dwell.m))
                .collect::<Vec<_>>()
                .join(", "),
        ),
        Err(e) => rep.push(CHECK_DWELL, Status::Fail, e.to_string()),
    }

    let cfg = sc.observer_config();
    let (phi, theta) = cfg.gain_matrices(sc.n());
    let obs: BTreeMap<u32, _> = set
        .iter()
        .map(|t| {
            (
                t.id,
                observer::assemble_observer_a(&t.laplacian(), &phi, &theta),
            )
        })
        .collect();
    let mut bad = Vec::new();
    for (id, a) in &obs {
        if !schedule::is_hurwitz(a, schedule::HURWITZ_RTOL * a.norm())? {
            bad.push(*id);
        }
    }
    rep.push(
        CHECK_HURWITZ,
        pass_fail(bad.is_empty()),
        if bad.is_empty() {
            "every running topology".to_string()
        } else {
            format!("not Hurwitz for topologies {bad:?}")
        },
    );

    match &build {
        Ok(b) => {
            let a_list: Vec<_> = sc.order.iter().map(|id| obs[id].clone()).collect();
            let taus: Vec<f64> = sc
                .order
                .iter()
                .map(|&id| b.schedule.dwell(id).expect("dwell for every running id"))
                .collect();
            match schedule::lyapunov_weight(&a_list)
                .and_then(|w| schedule::measure_condition(&a_list, &taus, &w.p))
            {
                Ok(m) => rep.push(
                    CHECK_MEASURE,
                    pass_fail(m.ok),
                    format!("weighted measure {:.6e}, per slot {:?}", m.value, m.mu),
                ),
                Err(e) => rep.push(CHECK_MEASURE, Status::Fail, e.to_string()),
            }
        }
        Err(_) => rep.push(CHECK_MEASURE, Status::Skip, "no dwell times"),
    }

    let d = graph::detectability(
        &set,
        &sc.observed,
        graph::WEIGHT_TOL,
        sc.require_trivial_coverage,
    )?;
    rep.push(
        CHECK_DETECT,
        pass_fail(d.ok),
        if d.ok {
            "every component holds an observed agent".to_string()
        } else {
            format!("components without observed agents: {:?}", d.uncovered)
        },
    );
    Ok(rep)
}

fn has_distinct(spec: &graph::LaplacianSpectrum) -> bool {
    graph::has_distinct_eigenvalues(spec, spec.tol)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub dt: Option<f64>,
    pub seed: Option<u64>,
}

fn synthesis_options(sc: &Scenario, s: &SynthesizeSpec, seed: Option<u64>) -> SynthesisOptions {
    let mut opts = SynthesisOptions {
        eta_probes: s.eta_probes.clone(),
        seed: seed.unwrap_or(sc.seed),
        ..SynthesisOptions::default()
    };
    if let Some(g) = s.g_scale {
        opts.g_scale = g;
    }
    opts
}

/// Synthesize against `stealth` (ids) with the attacker's prefix taken from the scenario.
pub fn synthesize_cmd(
    sc: &Scenario,
    stealth: Option<&[u32]>,
    seed: Option<u64>,
) -> Result<ZdaAttack> {
    sc.check()?;
    let spec = match &sc.attack {
        Some(AttackSpec::Synthesize(s)) => s.clone(),
        _ => SynthesizeSpec {
            stealth_set: sc.order.clone(),
            rho: 0.0,
            eta_probes: vec![],
            prefix_order: None,
            g_scale: None,
        },
    };
    let ids = stealth.unwrap_or(&spec.stealth_set);
    let set = ids
        .iter()
        .map(|&id| sc.topology(id))
        .collect::<Result<Vec<_>>>()?;
    let opts = synthesis_options(sc, &spec, seed);
    let build = if spec.rho > 0.0 {
        Some(sc.schedule()?)
    } else {
        None
    };
    let prefix_sched = match &build {
        Some(b) => Some(match &spec.prefix_order {
            Some(order) => {
                SwitchingSchedule::new(order.clone(), b.schedule.dwell_map().clone(), spec.rho)?
            }
            None => b.schedule.with_horizon(spec.rho)?,
        }),
        None => None,
    };
    let prefix = prefix_sched.as_ref().map(|s| Prefix {
        topologies: &sc.topologies,
        schedule: s,
    });
    zda::synthesize(&set, &sc.observed, &sc.attacked, spec.rho, prefix, &opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub headline: String,
    pub attack: Option<String>,
    pub alarm_time: Option<f64>,
    pub overflow: Option<f64>,
    pub max_residual: f64,
    /// Largest observed-output gap between the attacked plant and its clean twin.
    pub max_output_gap: f64,
    pub final_pos_disagreement: f64,
    pub final_vel_disagreement: f64,
    pub consensus: bool,
    pub unstable: bool,
}

pub struct RunOutcome {
    pub build: ScheduleBuild,
    pub validation: ValidationReport,
    pub attack: Option<ZdaAttack>,
    pub trace: Trace,
    pub clean: Trace,
    pub residuals: ResidualTrace,
    pub alarm: Option<Alarm>,
    pub alarm_record: AlarmRecord,
    pub summary: RunSummary,
}

fn resolve_attack(sc: &Scenario, seed: Option<u64>) -> Result<Option<ZdaAttack>> {
    match &sc.attack {
        None => Ok(None),
        Some(AttackSpec::Explicit(a)) => Ok(Some(a.clone())),
        Some(AttackSpec::Synthesize(_)) => synthesize_cmd(sc, None, seed).map(Some),
    }
}

fn fmt_time(t: f64) -> String {
    format!("{t:.4}")
}

/// Plant, clean twin and observer over the horizon.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    let validation = validate(sc)?;
    let build = sc.schedule()?;
    let sched = &build.schedule;
    let dt = opts.dt.unwrap_or(sc.dt);
    let n = sc.n();
    let attack = resolve_attack(sc, opts.seed)?;
    let model = attack.as_ref().map(|a| a.model(n)).transpose()?;

    let z0 = sc.initial.state()?;
    let reported = match (&sc.reported_initial, &attack) {
        (Some(r), _) => r.state()?,
        (None, Some(a)) => PlantState::new(&z0.z - DVector::from_column_slice(&a.delta_z0))?,
        (None, None) => z0.clone(),
    };
    let trace =
        sim::simulate_partial(&sc.topologies, sched, &z0, model.as_ref(), &sc.observed, dt)?;
    let clean = sim::simulate_partial(&sc.topologies, sched, &reported, None, &sc.observed, dt)?;

    let cfg = sc.observer_config();
    let residuals = observer::run_observer(&trace, &sc.topologies, sched, &cfg, &reported)?;
    let alarm_cfg = cfg.alarm();
    let alarm = observer::detect(&residuals, &alarm_cfg);
    let alarm_record = AlarmRecord::new(alarm, &alarm_cfg);

    let cons = sim::consensus_error(&trace);
    let max_residual = residuals
        .residuals
        .iter()
        .map(crate::linalg::max_abs)
        .fold(0.0, f64::max);
    let max_output_gap = trace
        .outputs
        .iter()
        .zip(&clean.outputs)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let (fp, fv) = (last(&cons.pos_disagreement), last(&cons.vel_disagreement));
    let start = cons.pos_disagreement[0].max(cons.vel_disagreement[0]);
    let consensus =
        trace.overflow.is_none() && fp < sc.thresholds.consensus && fv < sc.thresholds.consensus;
    let unstable =
        trace.overflow.is_some() || fp.max(fv) > 10.0 * start.max(sc.thresholds.consensus);
    let state = if consensus {
        "consensus reached"
    } else if unstable {
        "unstable"
    } else {
        "no consensus"
    };
    let verdict = match alarm {
        Some(a) => format!("alarm at t = {}", fmt_time(a.time)),
        None => "no alarm".to_string(),
    };
    let headline = match alarm {
        Some(_) => format!("{verdict}, {state}"),
        None => format!("{state}, {verdict}"),
    };
    let summary = RunSummary {
        scenario: sc.id.clone(),
        headline,
        attack: attack.as_ref().map(|a| {
            format!(
                "eta = {:.6e}{:+.6e}i, rho = {}, channels {:?}",
                a.eta.re, a.eta.im, a.rho, a.attacked
            )
        }),
        alarm_time: alarm.map(|a| a.time),
        overflow: trace.overflow,
        max_residual,
        max_output_gap,
        final_pos_disagreement: fp,
        final_vel_disagreement: fv,
        consensus,
        unstable,
    };
    Ok(RunOutcome {
        build,
        validation,
        attack,
        trace,
        clean,
        residuals,
        alarm,
        alarm_record,
        summary,
    })
}

impl RunOutcome {
    /// Human-readable summary naming the property behind each line.
    pub fn report(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let mut line = |l: String| {
            out.push_str(&l);
            out.push('\n');
        };
        line(format!("scenario: {}", s.scenario));
        line(format!("result: {}", s.headline));
        match &s.attack {
            Some(a) => line(format!("attack: {a}")),
            None => line("attack: none".into()),
        }
        if let Some(t) = s.overflow {
            line(format!(
                "state overflow at t = {}; trace is partial",
                fmt_time(t)
            ));
        }
        line(format!(
            "output invariance (attacked vs clean twin): max gap {:.3e}",
            s.max_output_gap
        ));
        line(format!(
            "residual-based detection: max |r| {:.3e}, threshold {:.1e}",
            s.max_residual, self.alarm_record.threshold
        ));
        line(format!(
            "consensus under dwell-time switching: final position gap {:.3e}, velocity gap {:.3e}",
            s.final_pos_disagreement, s.final_vel_disagreement
        ));
        line(format!(
            "schedule: order {:?}, period {:.6}, xi {:.6}",
            self.build.schedule.order(),
            self.build.schedule.period(),
            self.build.xi
        ));
        line("admissibility:".into());
        for c in self.validation.checks.iter() {
            line(format!("  {:<4} {}: {}", c.status, c.name, c.detail));
        }
        out
    }

    /// `trace.csv`, `consensus.csv`, `alarm.json`, `summary.txt`, `summary.json`
    /// and, when present, `attack.json`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join("trace.csv"))?);
        let res = &self.residuals.residuals[..];
        let extras = CsvExtras {
            residuals: (res.len() == self.trace.len()).then_some(res),
        };
        sim::write_csv(&self.trace, extras, &mut w)?;
        w.flush()?;

        let cons = sim::consensus_error(&self.trace);
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join("consensus.csv"))?);
        writeln!(w, "t,position_disagreement,velocity_disagreement")?;
        for k in 0..self.trace.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e}",
                self.trace.times[k], cons.pos_disagreement[k], cons.vel_disagreement[k]
            )?;
        }
        w.flush()?;

        fs::write(
            dir.join("alarm.json"),
            serde_json::to_string_pretty(&self.alarm_record)?,
        )?;
        fs::write(dir.join("summary.txt"), self.report())?;
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&self.summary)?,
        )?;
        if let Some(a) = &self.attack {
            fs::write(dir.join("attack.json"), serde_json::to_string_pretty(a)?)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub m: u32,
    pub period: f64,
    pub switches: usize,
    pub alarm_time: Option<f64>,
    /// Alarm time minus attack onset.
    pub latency: Option<f64>,
    pub switches_before_alarm: Option<usize>,
    pub error: Option<String>,
}

fn count_switches(s: &SwitchingSchedule, until: f64) -> usize {
    let order = s.order();
    if order.iter().all(|&id| id == order[0]) {
        return 0;
    }
    let mut k = 1;
    let mut count = 0;
    while s.slot_start(k) <= until {
        if s.slot_id(k) != s.slot_id(k - 1) {
            count += 1;
        }
        k += 1;
    }
    count
}

/// Runs the scenario for every dwell multiple `m` in `1..=m_max` on worker threads.
pub fn sweep(sc: &Scenario, m_max: u32, opts: &RunOptions) -> Result<BTreeMap<u32, SweepRow>> {
    if m_max == 0 {
        return Err(Error::InvalidInput("m_max must be at least 1".into()));
    }
    let base = match sc.dwell_params {
        Some(p) => p,
        None => sc.schedule()?.params,
    };
    let one = |m: u32| -> SweepRow {
        let mut s = sc.clone();
        s.dwell_params = Some(DwellParams { m, ..base });
        s.id = format!("{}-m{m}", sc.id);
        match run(&s, opts) {
            Ok(out) => {
                let sched = &out.build.schedule;
                let rho = out.attack.as_ref().map(|a| a.rho);
                let alarm_time = out.alarm.map(|a| a.time);
                SweepRow {
                    m,
                    period: sched.period(),
                    switches: count_switches(sched, sched.horizon()),
                    alarm_time,
                    latency: alarm_time.zip(rho).map(|(a, r)| a - r),
                    switches_before_alarm: alarm_time.map(|a| count_switches(sched, a)),
                    error: None,
                }
            }
            Err(e) => SweepRow {
                m,
                period: f64::NAN,
                switches: 0,
                alarm_time: None,
                latency: None,
                switches_before_alarm: None,
                error: Some(e.to_string()),
            },
        }
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(m_max as usize);
    let ms: Vec<u32> = (1..=m_max).collect();
    let mut rows = BTreeMap::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = ms
            .chunks(ms.len().div_ceil(workers))
            .map(|chunk| {
                scope.spawn(move || chunk.iter().map(|&m| (m, one(m))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            rows.extend(h.join().expect("sweep worker panicked"));
        }
    });
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &BTreeMap<u32, SweepRow>, mut w: W) -> Result<()> {
    writeln!(
        w,
        "m,period,switches,alarm_time,latency,switches_before_alarm,error"
    )?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.16e}"));
    for r in rows.values() {
        writeln!(
            w,
            "{},{:.16e},{},{},{},{},{}",
            r.m,
            r.period,
            r.switches,
            opt(r.alarm_time),
            opt(r.latency),
            r.switches_before_alarm
                .map_or(String::new(), |s| s.to_string()),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "id": "t",
            "topologies": [
                {"id": 1, "n": 3, "edges": [[1, 2, 1.0], [2, 3, 1.0]]},
                {"id": 2, "n": 3, "edges": [[1, 2, 1.0], [2, 3, 1.0], [1, 3, 1.0]]}
            ],
            "order": [1, 2],
            "observed": [1],
            "initial": {"x": [1.0, 2.0, 3.0], "v": [0.0, 0.0, 0.0]},
            "horizon": 10.0,
            "dt": 0.1,
            "observer": {"psi": [1.0], "theta": [1.0]}
        })
    }

    fn parse(v: serde_json::Value) -> Result<Scenario> {
        Scenario::from_json(&v.to_string())
    }

    #[test]
    fn parse_and_defaults() {
        let sc = parse(base()).unwrap();
        assert_eq!(sc.n(), 3);
        assert_eq!(sc.thresholds, Thresholds::default());
        assert!(sc.attack.is_none());
    }

    #[test]
    fn structural_errors() {
        let mut v = base();
        v["order"] = serde_json::json!([1, 7]);
        assert!(matches!(parse(v), Err(Error::Scenario(_))));
        let mut v = base();
        v["observed"] = serde_json::json!([4]);
        assert!(parse(v).is_err());
        let mut v = base();
        v["horizon"] = serde_json::json!(0.0);
        assert!(parse(v).is_err());
        let mut v = base();
        v["schema"] = serde_json::json!(2);
        assert!(parse(v).is_err());
        let mut v = base();
        v["unknown_field"] = serde_json::json!(1);
        assert!(parse(v).is_err());
    }

    #[test]
    fn parse_error_has_location() {
        let e = Scenario::from_json("{\n  \"schema\": 1,\n  \"topologies\": [,]\n}").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn repeated_eigenvalues_flagged() {
        let mut v = base();
        // A triangle has eigenvalues {0, 3, 3}.
        v["order"] = serde_json::json!([2]);
        let rep = validate(&parse(v).unwrap()).unwrap();
        assert_eq!(rep.status(CHECK_DISTINCT), Some(Status::Fail));
    }

    #[test]
    fn switch_counts() {
        let s =
            SwitchingSchedule::new(vec![1, 2], BTreeMap::from([(1, 1.0), (2, 1.0)]), 10.0).unwrap();
        assert_eq!(count_switches(&s, 10.0), 10);
        assert_eq!(count_switches(&s, 2.5), 2);
        let s = SwitchingSchedule::new(vec![3], BTreeMap::from([(3, 1.0)]), 1e9).unwrap();
        assert_eq!(count_switches(&s, 1e9), 0);
    }
}
