//! Scenario catalogue: compact-cap convergence (S1), nonpositively-curved
//! targets (S2), expanding-domain constancy proxies (S3), scheme/step
//! stability (S4) and ε-continuation agreement (S5), each with its pinned
//! property checks.

use crate::diagnostics::{self, StepRow};
use crate::error::{PflowError, Result};
use crate::flow::{
    self, FlowConfig, MapState, RunOptions, RunRecord, Scheme,
};
use crate::geometry::{AmbientField, DomainGrid};
use crate::harness::initial::{AngleBump, CapMap};
use crate::rng::SeededRng;
use crate::target::{
    best_cap_delta, delta_p, max_admissible_cap_radius, verify_regular_set, verify_sublevel,
    EmbeddedTarget, RegularBallCert,
};
use std::f64::consts::PI;

/// Required strict margin of the certified δ over δ_p.
pub const DELTA_MARGIN: f64 = 1e-9;
/// Max drift allowed on per-step-projected runs.
pub const PROJECTED_DRIFT_TOL: f64 = 1e-12;
/// Near-boundary start distance for the confinement stress case.
pub const BOUNDARY_GAP: f64 = 1e-3;

/// Calibrated stability constant for the S4 scheme/step comparisons:
/// sup-distance between variants must stay below C·(dt + h²).  Reference runs
/// sit near 6e-6; the bound leaves two orders of margin.
pub const S4_STABILITY_C: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl std::str::FromStr for Scenario {
    type Err = PflowError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "S4" => Ok(Scenario::S4),
            "S5" => Ok(Scenario::S5),
            other => Err(PflowError::InvalidConfig(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub pass: bool,
    pub observed: f64,
    pub threshold: f64,
    pub detail: String,
}

fn property(name: &str, pass: bool, observed: f64, threshold: f64, detail: String) -> PropertyResult {
    PropertyResult {
        name: name.to_string(),
        pass,
        observed,
        threshold,
        detail,
    }
}

pub struct NamedRun {
    pub label: String,
    pub record: RunRecord,
}

pub struct ScenarioOutcome {
    pub id: String,
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
    pub runs: Vec<NamedRun>,
}

impl ScenarioOutcome {
    pub fn pass(&self) -> bool {
        self.properties.iter().all(|p| p.pass)
    }
}

/// Overrides accepted by the scenario builders.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScenarioOptions {
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub seed: Option<u64>,
}

pub struct ScenarioSpec {
    pub id: String,
    pub description: String,
    pub seed: u64,
    plan: Plan,
}

enum Plan {
    S1(S1Setup),
    S2(S2Setup),
    S3(S3Setup),
    S4(S4Setup),
    S5(S5Setup),
}

impl ScenarioSpec {
    pub fn execute(&self) -> Result<ScenarioOutcome> {
        let (properties, runs) = match &self.plan {
            Plan::S1(s) => s.execute()?,
            Plan::S2(s) => s.execute()?,
            Plan::S3(s) => s.execute()?,
            Plan::S4(s) => s.execute()?,
            Plan::S5(s) => s.execute()?,
        };
        Ok(ScenarioOutcome {
            id: self.id.clone(),
            seed: self.seed,
            properties,
            runs,
        })
    }
}

/// Build a scenario, validating certificates and admissibility up front.
pub fn scenario(which: Scenario, opts: ScenarioOptions) -> Result<ScenarioSpec> {
    let seed = opts.seed.unwrap_or(2024);
    match which {
        Scenario::S1 => {
            let p = opts.p.unwrap_or(2.0);
            let setup = S1Setup::build(p, opts.r, seed)?;
            Ok(ScenarioSpec {
                id: format!("S1[p={p}]"),
                description: "compact torus into a certified spherical cap: global convergence"
                    .into(),
                seed,
                plan: Plan::S1(setup),
            })
        }
        Scenario::S2 => {
            let p = opts.p.unwrap_or(2.0);
            Ok(ScenarioSpec {
                id: format!("S2[p={p}]"),
                description: "flat compact target: degree-0 data relax to constants, wraps persist"
                    .into(),
                seed,
                plan: Plan::S2(S2Setup::build(p, seed)?),
            })
        }
        Scenario::S3 => {
            let p = opts.p.unwrap_or(2.0);
            Ok(ScenarioSpec {
                id: format!("S3[p={p}]"),
                description: "expanding tori with a fixed localized bump: energy decay and exhaustion stability".into(),
                seed,
                plan: Plan::S3(S3Setup::build(p, seed)?),
            })
        }
        Scenario::S4 => Ok(ScenarioSpec {
            id: "S4".into(),
            description: "scheme and step-size stability of the discrete evolution".into(),
            seed,
            plan: Plan::S4(S4Setup::build(seed)?),
        }),
        Scenario::S5 => Ok(ScenarioSpec {
            id: "S5".into(),
            description: "two ε-continuation schedules reach the same limit with the energy inequality".into(),
            seed,
            plan: Plan::S5(S5Setup::build(seed)?),
        }),
    }
}

/// Certificate pre-flight shared by every certified scenario.
fn validate_cert_for_flow(
    cert: &RegularBallCert,
    target: &EmbeddedTarget,
    m: usize,
    p: f64,
) -> Result<()> {
    let dp = delta_p(m, p)?;
    if !(cert.delta > dp + DELTA_MARGIN) {
        return Err(PflowError::ScenarioRejected(format!(
            "certified delta {} does not clear delta_p {} by {DELTA_MARGIN}",
            cert.delta, dp
        )));
    }
    let samples = cert.default_samples(target, 64)?;
    let c1 = verify_regular_set(cert, target, &samples)?;
    if !c1.pass {
        return Err(PflowError::ScenarioRejected(format!(
            "concavity condition failed: min eigenvalue {}",
            c1.min_eigenvalue
        )));
    }
    let c2 = verify_sublevel(cert, target, &samples)?;
    if !c2.pass {
        return Err(PflowError::ScenarioRejected(format!(
            "sublevel convexity failed: min eigenvalue {}",
            c2.min_eigenvalue
        )));
    }
    Ok(())
}

fn check_inside(u0: &AmbientField, cert: &RegularBallCert, target: &EmbeddedTarget) -> Result<()> {
    for idx in 0..u0.num_nodes() {
        if !cert.contains(target, u0.node(idx)) {
            return Err(PflowError::ScenarioRejected(format!(
                "initial map leaves the certified set at node {idx}"
            )));
        }
    }
    Ok(())
}

fn max_energy_increase_rel(rows: &[StepRow]) -> f64 {
    if rows.len() < 2 {
        return 0.0;
    }
    let scale = rows[0].energy.abs().max(f64::MIN_POSITIVE);
    rows.windows(2)
        .map(|w| (w[1].energy - w[0].energy) / scale)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn confinement_excess(rows: &[StepRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let initial = rows[0].max_fstar;
    rows.iter()
        .map(|r| r.max_fstar - initial)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn max_phi_step_excess(rows: &[StepRow]) -> f64 {
    rows.windows(2)
        .map(|w| w[1].max_phi / w[0].max_phi.max(f64::MIN_POSITIVE) - 1.0)
        .fold(0.0, f64::max)
}

fn max_drift(rows: &[StepRow]) -> f64 {
    rows.iter().map(|r| r.drift).fold(0.0, f64::max)
}

fn node_mean(u: &AmbientField) -> Vec<f64> {
    let l = u.ambient_dim;
    let n = u.num_nodes();
    let mut mean = vec![0.0; l];
    for idx in 0..n {
        for c in 0..l {
            mean[c] += u.data[idx * l + c];
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);
    mean
}

fn spread_about_mean(u: &AmbientField) -> f64 {
    let mean = node_mean(u);
    let l = u.ambient_dim;
    let mut worst = 0.0f64;
    for idx in 0..u.num_nodes() {
        let mut s = 0.0;
        for c in 0..l {
            let d = u.data[idx * l + c] - mean[c];
            s += d * d;
        }
        worst = worst.max(s);
    }
    worst.sqrt()
}

fn standard_run_properties(label: &str, rec: &RunRecord, out: &mut Vec<PropertyResult>) {
    let rows = &rec.report.rows;
    out.push(property(
        &format!("{label}/energy-nonincreasing"),
        rec.report.flags.energy_monotone,
        max_energy_increase_rel(rows),
        diagnostics::ENERGY_MONOTONE_REL_TOL,
        "max per-step relative energy increase".into(),
    ));
    out.push(property(
        &format!("{label}/confinement"),
        rec.report.flags.confinement,
        confinement_excess(rows),
        diagnostics::CONFINEMENT_TOL,
        "max f* excess over the initial maximum".into(),
    ));
    out.push(property(
        &format!("{label}/phi-max-nonincreasing"),
        rec.report.flags.phi_monotone,
        max_phi_step_excess(rows),
        diagnostics::PHI_MONOTONE_REL_TOL,
        "max relative per-step increase of max φ".into(),
    ));
}

// ---------------------------------------------------------------------------
// S1: compact domain into an admissible spherical cap
// ---------------------------------------------------------------------------

pub struct S1Setup {
    pub p: f64,
    pub r: f64,
    pub grid: DomainGrid,
    pub target: EmbeddedTarget,
    pub cert: RegularBallCert,
    pub cap: CapMap,
    pub flow: FlowConfig,
    pub seed: u64,
}

impl S1Setup {
    pub fn build(p: f64, r_override: Option<f64>, seed: u64) -> Result<Self> {
        Self::build_with_grid(p, r_override, seed, 32)
    }

    pub fn build_with_grid(p: f64, r_override: Option<f64>, seed: u64, n: usize) -> Result<Self> {
        let m = 2;
        let r_max = max_admissible_cap_radius(p, m)?;
        let r = r_override.unwrap_or(if p > 2.0 { 0.02 } else { 0.2 });
        if !(r < r_max) {
            return Err(PflowError::ScenarioRejected(format!(
                "cap radius {r} is not admissible for p = {p} (bound {r_max:.4})"
            )));
        }
        let grid = DomainGrid::build_flat_torus(m, n, 2.0 * PI)?;
        let target = EmbeddedTarget::make_sphere(2)?;
        let (dstar, _) = best_cap_delta(r)?;
        let cert = RegularBallCert::spherical_cap(
            &target,
            vec![0.0, 0.0, 1.0],
            r,
            None,
            Some(dstar - 1e-6),
        )?;
        validate_cert_for_flow(&cert, &target, m, p)?;
        let mut rng = SeededRng::new(seed);
        let cap = CapMap::new(
            &mut rng,
            &target,
            vec![0.0, 0.0, 1.0],
            m,
            grid.periods(),
            2,
            0.7 * r,
        );
        let u0 = cap.materialize(&grid);
        check_inside(&u0, &cert, &target)?;
        let flow = FlowConfig {
            t_end: 400.0,
            ..FlowConfig::new(p)
        };
        Ok(S1Setup {
            p,
            r,
            grid,
            target,
            cert,
            cap,
            flow,
            seed,
        })
    }

    /// The near-boundary variant: same random field, rescaled on this grid so
    /// max f*(u₀) = a − gap, with gap = BOUNDARY_GAP clamped to a/2 for caps
    /// too small to leave the full margin.
    pub fn boundary_initial_map(&self) -> AmbientField {
        let gap = BOUNDARY_GAP.min(self.cert.a / 2.0);
        let rho = (self.cert.a - gap).sqrt();
        let cap = self.cap.clone().rescaled_to_grid(&self.grid, rho);
        cap.materialize(&self.grid)
    }

    pub fn run_main(&self) -> Result<RunRecord> {
        let u0 = self.cap.materialize(&self.grid);
        flow::run(
            &self.grid,
            &self.target,
            u0,
            &self.flow,
            &RunOptions {
                cert: Some(&self.cert),
                history_every: None,
            },
        )
    }

    fn execute(&self) -> Result<(Vec<PropertyResult>, Vec<NamedRun>)> {
        let mut props = Vec::new();
        let mut runs = Vec::new();
        for (label, u0) in [
            ("main", self.cap.materialize(&self.grid)),
            ("near-boundary", self.boundary_initial_map()),
        ] {
            let e0 = diagnostics::p_energy(
                &MapState::new(u0.clone(), 0.0, self.p),
                &self.grid,
            );
            let rec = flow::run(
                &self.grid,
                &self.target,
                u0,
                &self.flow,
                &RunOptions {
                    cert: Some(&self.cert),
                    history_every: None,
                },
            )?;
            standard_run_properties(label, &rec, &mut props);
            let final_resid = rec
                .report
                .rows
                .last()
                .map(|r| r.stationarity_residual)
                .unwrap_or(f64::INFINITY);
            props.push(property(
                &format!("{label}/stationarity-converged"),
                rec.converged() && final_resid < self.flow.stat_tol,
                final_resid,
                self.flow.stat_tol,
                "final stationarity residual".into(),
            ));
            let e_final = diagnostics::p_energy(&rec.final_state, &self.grid);
            props.push(property(
                &format!("{label}/final-energy-below-initial"),
                e_final <= e0 + 1e-12 * e0.abs().max(1.0),
                e_final - e0,
                0.0,
                format!("E_p(final) = {e_final:.3e}, E_p(initial) = {e0:.3e}"),
            ));
            props.push(property(
                &format!("{label}/projected-drift"),
                max_drift(&rec.report.rows) <= PROJECTED_DRIFT_TOL,
                max_drift(&rec.report.rows),
                PROJECTED_DRIFT_TOL,
                "max constraint violation along the run".into(),
            ));
            runs.push(NamedRun {
                label: label.into(),
                record: rec,
            });
        }
        Ok((props, runs))
    }
}

// ---------------------------------------------------------------------------
// S2: flat target, null-homotopic and winding-1 data on the circle
// ---------------------------------------------------------------------------

pub struct S2Setup {
    pub p: f64,
    pub grid: DomainGrid,
    pub target: EmbeddedTarget,
    pub cert: RegularBallCert,
    pub flow: FlowConfig,
}

impl S2Setup {
    pub fn build(p: f64, _seed: u64) -> Result<Self> {
        let grid = DomainGrid::build_flat_torus(1, 64, 2.0 * PI)?;
        let target = EmbeddedTarget::make_clifford_torus();
        let mut cert = RegularBallCert::trivial(2.0)?;
        cert.delta = delta_p(1, p)? + 1.0;
        validate_cert_for_flow(&cert, &target, 1, p)?;
        let flow = FlowConfig {
            t_end: 400.0,
            ..FlowConfig::new(p)
        };
        Ok(S2Setup {
            p,
            grid,
            target,
            cert,
            flow,
        })
    }

    fn angle_map(&self, winding: f64, amp: f64) -> AmbientField {
        let r = 0.5f64.sqrt();
        AmbientField::from_fn(&self.grid, 4, |pos| {
            let a = winding * pos[0] + amp * pos[0].sin();
            vec![r * a.cos(), r * a.sin(), r, 0.0]
        })
    }

    fn execute(&self) -> Result<(Vec<PropertyResult>, Vec<NamedRun>)> {
        let mut props = Vec::new();
        let mut runs = Vec::new();

        // degree 0: alpha = 0.5 sin x relaxes to a constant map
        let u0 = self.angle_map(0.0, 0.5);
        let e0 = diagnostics::p_energy(&MapState::new(u0.clone(), 0.0, self.p), &self.grid);
        let rec = flow::run(
            &self.grid,
            &self.target,
            u0,
            &self.flow,
            &RunOptions {
                cert: Some(&self.cert),
                history_every: None,
            },
        )?;
        standard_run_properties("null-homotopic", &rec, &mut props);
        let spread = spread_about_mean(&rec.final_state.u);
        props.push(property(
            "null-homotopic/constant-limit",
            rec.converged() && spread <= 1e-4,
            spread,
            1e-4,
            "node spread of the final map".into(),
        ));
        let e_final = diagnostics::p_energy(&rec.final_state, &self.grid);
        props.push(property(
            "null-homotopic/energy-collapse",
            e_final <= 1e-8 * e0,
            e_final / e0.max(f64::MIN_POSITIVE),
            1e-8,
            format!("E_p(final)/E_p(initial), E0 = {e0:.3e}"),
        ));
        runs.push(NamedRun {
            label: "null-homotopic".into(),
            record: rec,
        });

        // winding 1: the flow returns to a geodesic wrap, not a constant
        let amp = 0.25;
        let u1 = self.angle_map(1.0, amp);
        let rec1 = flow::run(
            &self.grid,
            &self.target,
            u1,
            &self.flow,
            &RunOptions {
                cert: Some(&self.cert),
                history_every: None,
            },
        )?;
        // the limit phase is the discrete mean of the initial angle offset
        let n = self.grid.num_nodes();
        let mut phase = 0.0;
        for idx in 0..n {
            phase += amp * self.grid.node_position(idx)[0].sin();
        }
        phase /= n as f64;
        let r = 0.5f64.sqrt();
        let wrap = AmbientField::from_fn(&self.grid, 4, |pos| {
            let a = pos[0] + phase;
            vec![r * a.cos(), r * a.sin(), r, 0.0]
        });
        let dist = flow::sup_distance(&rec1.final_state.u, &wrap)?;
        props.push(property(
            "winding-1/wrap-limit",
            rec1.converged() && dist <= 1e-3,
            dist,
            1e-3,
            "sup distance of the final map to the phase-matched wrap".into(),
        ));
        let e_wrap = diagnostics::p_energy(&rec1.final_state, &self.grid);
        props.push(property(
            "winding-1/nonconstant",
            e_wrap > 1e-3,
            e_wrap,
            1e-3,
            "final energy stays bounded away from zero".into(),
        ));
        runs.push(NamedRun {
            label: "winding-1".into(),
            record: rec1,
        });
        Ok((props, runs))
    }
}

// ---------------------------------------------------------------------------
// S3: expanding tori, fixed localized bump
// ---------------------------------------------------------------------------

pub struct S3Setup {
    pub p: f64,
    pub sizes: Vec<(usize, f64)>,
    pub bump: AngleBump,
    pub flow: FlowConfig,
}

impl S3Setup {
    pub fn build(p: f64, _seed: u64) -> Result<Self> {
        let bump = AngleBump {
            center: [0.0, 0.0, 0.0],
            radius: 0.8,
            amplitude: 0.3,
            alpha_base: 0.4,
            beta_base: 0.1,
        };
        let flow = FlowConfig {
            t_end: 400.0,
            ..FlowConfig::new(p)
        };
        Ok(S3Setup {
            p,
            sizes: vec![(32, 2.0 * PI), (64, 4.0 * PI), (128, 8.0 * PI)],
            bump,
            flow,
        })
    }

    fn execute(&self) -> Result<(Vec<PropertyResult>, Vec<NamedRun>)> {
        let target = EmbeddedTarget::make_clifford_torus();
        let mut cert = RegularBallCert::trivial(2.0)?;
        cert.delta = delta_p(2, self.p)? + 1.0;
        let mut props = Vec::new();
        let mut runs = Vec::new();
        let mut finals: Vec<(DomainGrid, AmbientField)> = Vec::new();
        for &(n, period) in &self.sizes {
            let grid = DomainGrid::build_flat_torus(2, n, period)?;
            let u0 = self.bump.materialize(&grid);
            let e0 = diagnostics::p_energy(&MapState::new(u0.clone(), 0.0, self.p), &grid);
            let rec = flow::run(
                &grid,
                &target,
                u0,
                &self.flow,
                &RunOptions {
                    cert: Some(&cert),
                    history_every: None,
                },
            )?;
            let label = format!("period-{:.0}pi", period / PI);
            standard_run_properties(&label, &rec, &mut props);
            let e_final = diagnostics::p_energy(&rec.final_state, &grid);
            props.push(property(
                &format!("{label}/energy-collapse"),
                rec.converged() && e_final <= 1e-8 * e0,
                e_final / e0.max(f64::MIN_POSITIVE),
                1e-8,
                format!("E_p(final)/E_p(initial), E0 = {e0:.4e}"),
            ));
            finals.push((grid, rec.final_state.u.clone()));
            runs.push(NamedRun { label, record: rec });
        }
        // exhaustion stability: restrictions to the fixed ball B(0,1) agree
        for pair in finals.windows(2) {
            let (small_grid, small_u) = &pair[0];
            let (big_grid, big_u) = &pair[1];
            let dist = restriction_distance(small_grid, small_u, big_grid, big_u, 1.0)?;
            props.push(property(
                &format!(
                    "restriction-agreement/{:.0}pi-vs-{:.0}pi",
                    small_grid.periods()[0] / PI,
                    big_grid.periods()[0] / PI
                ),
                dist <= 1e-3,
                dist,
                1e-3,
                "sup distance of final maps on the fixed ball".into(),
            ));
        }
        Ok((props, runs))
    }
}

/// Compare two final maps on the ball B(0, radius): grids share h, so nodes
/// at equal periodic offsets from the origin coincide.
fn restriction_distance(
    small_grid: &DomainGrid,
    small_u: &AmbientField,
    big_grid: &DomainGrid,
    big_u: &AmbientField,
    radius: f64,
) -> Result<f64> {
    let h = small_grid.spacings();
    let hb = big_grid.spacings();
    for a in 0..small_grid.dim() {
        if (h[a] - hb[a]).abs() > 1e-12 {
            return Err(PflowError::Precondition(
                "restriction comparison needs matching spacings".into(),
            ));
        }
    }
    let l = small_u.ambient_dim;
    let sizes_b = big_grid.sizes();
    let mut worst = 0.0f64;
    for idx in 0..small_grid.num_nodes() {
        if small_grid.periodic_dist_sq(idx, &[0.0; 3]) > radius * radius {
            continue;
        }
        let pos = small_grid.node_position(idx);
        let mut coords_b = [0usize; 3];
        for a in 0..small_grid.dim() {
            let delta = small_grid.periodic_delta(a, pos[a], 0.0);
            let steps = (delta / h[a]).round() as i64;
            let nb = sizes_b[a] as i64;
            coords_b[a] = (steps.rem_euclid(nb)) as usize;
        }
        let idx_b = big_grid.node_index(coords_b);
        let mut s = 0.0;
        for c in 0..l {
            let d = small_u.data[idx * l + c] - big_u.data[idx_b * l + c];
            s += d * d;
        }
        worst = worst.max(s);
    }
    Ok(worst.sqrt())
}

// ---------------------------------------------------------------------------
// S4: scheme and step-size stability
// ---------------------------------------------------------------------------

pub struct S4Setup {
    pub grid: DomainGrid,
    pub target: EmbeddedTarget,
    pub cert: RegularBallCert,
    pub u0: AmbientField,
    pub dt0: f64,
    pub horizon: f64,
    pub p: f64,
}

impl S4Setup {
    pub fn build(seed: u64) -> Result<Self> {
        let s1 = S1Setup::build(2.0, None, seed)?;
        let u0 = s1.cap.materialize(&s1.grid);
        // safely inside the CFL bound for both schemes and both halvings
        let h = s1.grid.min_spacing();
        let dt0 = 0.125 * h * h / (2.0 * s1.grid.dim() as f64);
        Ok(S4Setup {
            grid: s1.grid,
            target: s1.target,
            cert: s1.cert,
            u0,
            dt0,
            horizon: 0.5,
            p: 2.0,
        })
    }

    pub fn run_variant(&self, scheme: Scheme, dt: f64) -> Result<RunRecord> {
        let steps = (self.horizon / dt).round();
        let cfg = FlowConfig {
            p: self.p,
            eps_schedule: vec![1e-2],
            dt_safety: 0.25,
            scheme,
            reproject_every: 1,
            t_end: steps * dt,
            stat_tol: 1e-300,
            fixed_dt: Some(dt),
            max_steps_per_leg: flow::DEFAULT_MAX_STEPS_PER_LEG,
        };
        flow::run(
            &self.grid,
            &self.target,
            self.u0.clone(),
            &cfg,
            &RunOptions {
                cert: Some(&self.cert),
                history_every: None,
            },
        )
    }

    fn execute(&self) -> Result<(Vec<PropertyResult>, Vec<NamedRun>)> {
        let mut props = Vec::new();
        let mut runs = Vec::new();
        let h = self.grid.min_spacing();

        let a1 = self.run_variant(Scheme::ExplicitWithForcing, self.dt0)?;
        let a1_repeat = self.run_variant(Scheme::ExplicitWithForcing, self.dt0)?;
        let b1 = self.run_variant(Scheme::ProjectAfterStep, self.dt0)?;
        let a2 = self.run_variant(Scheme::ExplicitWithForcing, self.dt0 / 2.0)?;
        let b2 = self.run_variant(Scheme::ProjectAfterStep, self.dt0 / 2.0)?;

        let d_repeat = flow::sup_distance(&a1.final_state.u, &a1_repeat.final_state.u)?;
        props.push(property(
            "determinism/identical-configs",
            d_repeat == 0.0,
            d_repeat,
            0.0,
            "sup distance between two identical runs".into(),
        ));

        let d1 = flow::sup_distance(&a1.final_state.u, &b1.final_state.u)?;
        let d2 = flow::sup_distance(&a2.final_state.u, &b2.final_state.u)?;
        let bound1 = S4_STABILITY_C * (self.dt0 + h * h);
        let bound2 = S4_STABILITY_C * (self.dt0 / 2.0 + h * h);
        props.push(property(
            "scheme-distance/dt",
            d1 <= bound1,
            d1,
            bound1,
            "scheme-1 vs scheme-2 final distance at dt".into(),
        ));
        props.push(property(
            "scheme-distance/dt-half",
            d2 <= bound2,
            d2,
            bound2,
            "scheme-1 vs scheme-2 final distance at dt/2".into(),
        ));
        let ratio = d1 / d2.max(f64::MIN_POSITIVE);
        props.push(property(
            "dt-order",
            ratio >= 1.7,
            ratio,
            1.7,
            "distance contraction under dt halving (first order)".into(),
        ));

        for (label, rec) in [
            ("scheme1-dt", a1),
            ("scheme2-dt", b1),
            ("scheme1-dt-half", a2),
            ("scheme2-dt-half", b2),
        ] {
            runs.push(NamedRun {
                label: label.into(),
                record: rec,
            });
        }
        Ok((props, runs))
    }
}

// ---------------------------------------------------------------------------
// S5: ε-continuation schedules
// ---------------------------------------------------------------------------

pub struct S5Setup {
    pub grid: DomainGrid,
    pub target: EmbeddedTarget,
    pub cert: RegularBallCert,
    pub u0: AmbientField,
    pub p: f64,
}

impl S5Setup {
    pub fn build(seed: u64) -> Result<Self> {
        let m = 2;
        let p = 2.0;
        let r = 0.2;
        let grid = DomainGrid::build_flat_torus(m, 32, 2.0 * PI)?;
        let target = EmbeddedTarget::make_sphere(2)?;
        let (dstar, _) = best_cap_delta(r)?;
        let cert = RegularBallCert::spherical_cap(
            &target,
            vec![0.0, 0.0, 1.0],
            r,
            None,
            Some(dstar - 1e-6),
        )?;
        validate_cert_for_flow(&cert, &target, m, p)?;
        // low-energy data keep the discrete-in-time dissipation bookkeeping
        // inside the 1e-8 inequality budget
        let mut rng = SeededRng::new(seed);
        let cap = CapMap::new(
            &mut rng,
            &target,
            vec![0.0, 0.0, 1.0],
            m,
            grid.periods(),
            2,
            2e-3,
        );
        let u0 = cap.materialize(&grid);
        check_inside(&u0, &cert, &target)?;
        Ok(S5Setup {
            grid,
            target,
            cert,
            u0,
            p,
        })
    }

    pub fn run_schedule(&self, eps_schedule: Vec<f64>) -> Result<RunRecord> {
        let cfg = FlowConfig {
            p: self.p,
            eps_schedule,
            dt_safety: 0.02,
            scheme: Scheme::ExplicitWithForcing,
            reproject_every: 1,
            t_end: 100.0,
            stat_tol: 1e-6,
            fixed_dt: None,
            max_steps_per_leg: flow::DEFAULT_MAX_STEPS_PER_LEG,
        };
        flow::run(
            &self.grid,
            &self.target,
            self.u0.clone(),
            &cfg,
            &RunOptions {
                cert: Some(&self.cert),
                history_every: None,
            },
        )
    }

    fn execute(&self) -> Result<(Vec<PropertyResult>, Vec<NamedRun>)> {
        let mut props = Vec::new();
        let e0 = diagnostics::p_energy(&MapState::new(self.u0.clone(), 0.0, self.p), &self.grid);

        let long = self.run_schedule(vec![1e-1, 1e-2, 1e-3, 1e-4])?;
        let short = self.run_schedule(vec![1e-2, 1e-3, 1e-4])?;

        let dist = flow::sup_distance(&long.final_state.u, &short.final_state.u)?;
        props.push(property(
            "schedule-agreement",
            long.converged() && short.converged() && dist <= 1e-4,
            dist,
            1e-4,
            "sup distance between final states of the two schedules".into(),
        ));
        let e_long = diagnostics::p_energy(&long.final_state, &self.grid);
        let e_short = diagnostics::p_energy(&short.final_state, &self.grid);
        let rel = (e_long - e_short).abs() / e_long.abs().max(e_short.abs()).max(f64::MIN_POSITIVE);
        props.push(property(
            "final-energy-agreement",
            rel <= 1e-6,
            rel,
            1e-6,
            "relative difference of final energies".into(),
        ));
        for (label, rec) in [("schedule-long", &long), ("schedule-short", &short)] {
            let e_final = diagnostics::p_energy(&rec.final_state, &self.grid);
            let slack = e_final + rec.dissipation_sum - e0;
            props.push(property(
                &format!("{label}/energy-inequality"),
                slack <= 1e-8,
                slack,
                1e-8,
                "E_p(final) + Σ dt ∫|∂_t u|² − E_p(initial)".into(),
            ));
        }
        let runs = vec![
            NamedRun {
                label: "schedule-long".into(),
                record: long,
            },
            NamedRun {
                label: "schedule-short".into(),
                record: short,
            },
        ];
        Ok((props, runs))
    }
}

// ---------------------------------------------------------------------------
// controlled studies reused by the verification suite
// ---------------------------------------------------------------------------

/// Fixed-step dissipation-identity study: residual at dt and dt/2 over a
/// fixed horizon, from the S1 initial data.
pub struct DissipationStudy {
    pub residual_dt: f64,
    pub residual_half: f64,
    pub ratio: f64,
}

pub fn dissipation_dt_study(seed: u64) -> Result<DissipationStudy> {
    let s1 = S1Setup::build(2.0, None, seed)?;
    let run_at = |dt: f64| -> Result<f64> {
        let horizon = 0.25;
        let steps = (horizon / dt).round();
        let cfg = FlowConfig {
            p: 2.0,
            eps_schedule: vec![1e-2],
            dt_safety: 0.25,
            scheme: Scheme::ExplicitWithForcing,
            reproject_every: 1,
            t_end: steps * dt,
            stat_tol: 1e-300,
            fixed_dt: Some(dt),
            max_steps_per_leg: flow::DEFAULT_MAX_STEPS_PER_LEG,
        };
        let rec = flow::run(
            &s1.grid,
            &s1.target,
            s1.cap.materialize(&s1.grid),
            &cfg,
            &RunOptions {
                cert: Some(&s1.cert),
                history_every: None,
            },
        )?;
        Ok(diagnostics::dissipation_residual(&rec))
    };
    let dt0 = 2.5e-3;
    let residual_dt = run_at(dt0)?;
    let residual_half = run_at(dt0 / 2.0)?;
    Ok(DissipationStudy {
        residual_dt,
        residual_half,
        ratio: residual_dt / residual_half.max(f64::MIN_POSITIVE),
    })
}

/// Local-gradient-estimate refinement study: the S1 flow recorded with
/// history on n and 2n grids sharing the same continuum data, evaluated on
/// both time-cylinder branches.
pub struct LocalEstimateStudy {
    pub coarse_interior: diagnostics::LocalEstimateReport,
    pub fine_interior: diagnostics::LocalEstimateReport,
    pub coarse_from_start: diagnostics::LocalEstimateReport,
    pub fine_from_start: diagnostics::LocalEstimateReport,
}

pub fn local_estimate_refinement_study(seed: u64) -> Result<LocalEstimateStudy> {
    let radius = 1.0;
    let t0_interior = 1.5;
    let t0_start = 0.5;
    let mut reports = Vec::new();
    for n in [32usize, 64] {
        let s1 = S1Setup::build_with_grid(2.0, None, seed, n)?;
        let cfg = FlowConfig {
            t_end: 1.6,
            stat_tol: 1e-300,
            ..FlowConfig::new(2.0)
        };
        let stride = if n == 64 { 8 } else { 2 };
        let rec = flow::run(
            &s1.grid,
            &s1.target,
            s1.cap.materialize(&s1.grid),
            &cfg,
            &RunOptions {
                cert: Some(&s1.cert),
                history_every: Some(stride),
            },
        )?;
        let hist = rec.history.as_ref().expect("history requested");
        let center = [PI, PI, 0.0];
        let interior =
            diagnostics::local_gradient_estimate(hist, &s1.grid, 2.0, center, radius, t0_interior)?;
        let from_start =
            diagnostics::local_gradient_estimate(hist, &s1.grid, 2.0, center, radius, t0_start)?;
        reports.push((interior, from_start));
    }
    let (coarse_interior, coarse_from_start) = reports.remove(0);
    let (fine_interior, fine_from_start) = reports.remove(0);
    Ok(LocalEstimateStudy {
        coarse_interior,
        fine_interior,
        coarse_from_start,
        fine_from_start,
    })
}
