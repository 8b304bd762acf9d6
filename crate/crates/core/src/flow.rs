//! Time integration of the regularised evolution
//!
//!   ∂_t u = Δ_{p,ε} u + (|∇u|²+ε)^{(p−2)/2} A(u)(∇u, ∇u),
//!
//! explicit Euler with CFL control, ε-continuation across a decreasing
//! schedule, stationarity residuals and the distance/monotonicity utilities
//! used by the uniqueness and stability experiments.

use crate::diagnostics::{self, MonitorReport, StepRow};
use crate::error::{PflowError, Result};
use crate::geometry::{AmbientField, DomainGrid, Partials, ScalarField};
use crate::target::{EmbeddedTarget, RegularBallCert};

/// Fraction of the tubular radius at which a run is aborted for drift.
const DRIFT_ABORT_FRACTION: f64 = 0.5;

/// Hard cap on steps per ε leg, a guard against mis-configured runs.
pub const DEFAULT_MAX_STEPS_PER_LEG: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    /// u ← u + dt (Δ_{p,ε}u + F^{(p−2)/2} A(u)(∇u,∇u)), optional reprojection.
    #[serde(rename = "explicit-with-a-term")]
    ExplicitWithForcing,
    /// u ← Π(u + dt Δ_{p,ε}u): the constraint force is realised by projection.
    #[serde(rename = "project-after-step")]
    ProjectAfterStep,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    pub p: f64,
    /// Decreasing list of strictly positive regularisations.
    pub eps_schedule: Vec<f64>,
    /// CFL safety factor σ ∈ (0, 1].
    pub dt_safety: f64,
    pub scheme: Scheme,
    /// Reproject to N every k steps under `ExplicitWithForcing`; 0 = never.
    pub reproject_every: usize,
    /// Per-ε time budget.
    pub t_end: f64,
    /// Stationarity residual below which an ε leg stops.
    pub stat_tol: f64,
    /// Fixed time step overriding the CFL bound (convergence studies).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_dt: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps_per_leg: usize,
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS_PER_LEG
}

impl FlowConfig {
    pub fn new(p: f64) -> Self {
        FlowConfig {
            p,
            eps_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4],
            dt_safety: 0.25,
            scheme: Scheme::ExplicitWithForcing,
            reproject_every: 1,
            t_end: 200.0,
            stat_tol: 1e-6,
            fixed_dt: None,
            max_steps_per_leg: DEFAULT_MAX_STEPS_PER_LEG,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 2.0) {
            return Err(PflowError::InvalidConfig(format!("p = {} below 2", self.p)));
        }
        if self.eps_schedule.is_empty() {
            return Err(PflowError::InvalidConfig("empty eps schedule".into()));
        }
        for w in self.eps_schedule.windows(2) {
            if !(w[1] < w[0]) {
                return Err(PflowError::InvalidConfig(
                    "eps schedule must be strictly decreasing".into(),
                ));
            }
        }
        for &e in &self.eps_schedule {
            if !(e > 0.0) {
                return Err(PflowError::InvalidConfig(
                    "eps must stay positive during stepping".into(),
                ));
            }
        }
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return Err(PflowError::InvalidConfig(format!(
                "dt_safety {} outside (0, 1]",
                self.dt_safety
            )));
        }
        if !(self.t_end > 0.0) {
            return Err(PflowError::InvalidConfig("t_end must be positive".into()));
        }
        if !(self.stat_tol > 0.0) {
            return Err(PflowError::InvalidConfig("stat_tol must be positive".into()));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0) {
                return Err(PflowError::InvalidConfig("fixed_dt must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Grid-indexed map into the ambient space of the target, with flow time,
/// current regularisation and flow exponent.
#[derive(Debug, Clone)]
pub struct MapState {
    pub u: AmbientField,
    pub t: f64,
    pub eps: f64,
    pub p: f64,
}

impl MapState {
    pub fn new(u: AmbientField, eps: f64, p: f64) -> Self {
        MapState { u, t: 0.0, eps, p }
    }
}

/// Scratch buffers reused across right-hand-side evaluations.
pub struct FlowWorkspace {
    partials: Partials,
    flux: Partials,
    pub f_field: ScalarField,
    weight: ScalarField,
    pub rhs: AmbientField,
    proj: Vec<f64>,
    sff: Vec<f64>,
    pub drift: f64,
}

impl FlowWorkspace {
    pub fn new(grid: &DomainGrid, ambient_dim: usize) -> Self {
        let n = grid.num_nodes();
        FlowWorkspace {
            partials: Partials::zeros(n, ambient_dim),
            flux: Partials::zeros(n, ambient_dim),
            f_field: ScalarField::zeros(n),
            weight: ScalarField::zeros(n),
            rhs: AmbientField::zeros(n, ambient_dim),
            proj: vec![0.0; ambient_dim],
            sff: vec![0.0; ambient_dim],
            drift: 0.0,
        }
    }

    /// Evaluate F, the weight, the full right-hand side and the drift of the
    /// current state.  The constraint force is evaluated at the projected
    /// point, which is exact on-manifold and stable for small drift.
    pub fn eval(
        &mut self,
        state: &MapState,
        grid: &DomainGrid,
        target: &EmbeddedTarget,
    ) -> Result<()> {
        let l = state.u.ambient_dim;
        let nodes = grid.num_nodes();
        grid.gradient_into(&state.u, &mut self.partials);
        grid.grad_norm_sq_into(&self.partials, &mut self.f_field);
        let expo = (state.p - 2.0) / 2.0;
        for idx in 0..nodes {
            let f = self.f_field.data[idx] + state.eps;
            self.f_field.data[idx] = f;
            self.weight.data[idx] = pow_weight(f, expo);
        }
        grid.div_weighted_into(&self.weight, &self.partials, &mut self.flux, &mut self.rhs);

        self.drift = 0.0;
        if target.codim() > 0 {
            let mut slices: Vec<&[f64]> = Vec::with_capacity(grid.dim());
            for idx in 0..nodes {
                let y = state.u.node(idx);
                let violation = target.constraint_violation(y);
                self.drift = self.drift.max(violation);
                target.project(y, &mut self.proj).map_err(|_| PflowError::OffManifold {
                    violation,
                    tol: DRIFT_ABORT_FRACTION * target.tubular_radius(),
                })?;
                slices.clear();
                for a in 0..grid.dim() {
                    slices.push(&self.partials.per_axis[a].data[idx * l..(idx + 1) * l]);
                }
                self.sff.iter_mut().for_each(|x| *x = 0.0);
                target.sff_contract_unchecked(
                    &self.proj,
                    &slices,
                    grid.metric_inv(idx),
                    grid.dim(),
                    &mut self.sff,
                );
                let w = self.weight.data[idx];
                let row = self.rhs.node_mut(idx);
                for c in 0..l {
                    row[c] += w * self.sff[c];
                }
            }
        }
        if !self.rhs.all_finite() {
            return Err(PflowError::NonFinite("flow right-hand side".into()));
        }
        Ok(())
    }

    /// E_{p,ε} from the cached F field.
    pub fn energy(&self, grid: &DomainGrid, p: f64) -> f64 {
        let mut integrand = ScalarField::zeros(self.f_field.len());
        for idx in 0..self.f_field.len() {
            integrand.data[idx] = pow_weight(self.f_field.data[idx], p / 2.0);
        }
        grid.integrate(&integrand) / p
    }

    /// L² norm of the right-hand side from the cached evaluation.
    pub fn residual(&self, grid: &DomainGrid) -> f64 {
        let l = self.rhs.ambient_dim;
        let mut sq = ScalarField::zeros(self.f_field.len());
        for idx in 0..sq.len() {
            let row = self.rhs.node(idx);
            let mut s = 0.0;
            for c in 0..l {
                s += row[c] * row[c];
            }
            sq.data[idx] = s;
        }
        grid.integrate(&sq).max(0.0).sqrt()
    }

    pub fn max_f(&self) -> f64 {
        self.f_field.max()
    }
}

#[inline]
fn pow_weight(f: f64, expo: f64) -> f64 {
    if expo == 0.0 {
        1.0
    } else if expo == 0.5 {
        f.sqrt()
    } else if expo == 1.0 {
        f
    } else {
        f.powf(expo)
    }
}

/// Regularised p-Laplacian div(√|g| F^{(p−2)/2} g^{ij} ∂_j u)/√|g|.
pub fn p_laplacian_eps(state: &MapState, grid: &DomainGrid) -> AmbientField {
    let partials = grid.gradient(&state.u);
    let gradsq = grid.grad_norm_sq_from(&partials);
    let expo = (state.p - 2.0) / 2.0;
    let weight = ScalarField {
        data: gradsq
            .data
            .iter()
            .map(|g| pow_weight(g + state.eps, expo))
            .collect(),
    };
    grid.div_weighted(&weight, &partials)
}

/// Full right-hand side Δ_{p,ε}u + F^{(p−2)/2} A(u)(∇u,∇u).
pub fn rhs(state: &MapState, grid: &DomainGrid, target: &EmbeddedTarget) -> Result<AmbientField> {
    let mut ws = FlowWorkspace::new(grid, state.u.ambient_dim);
    ws.eval(state, grid, target)?;
    Ok(ws.rhs)
}

/// CFL-controlled step: dt = σ · min h² / (2m · max(F)^{(p−2)/2} · max g^{ii}).
pub fn cfl_dt(state: &MapState, grid: &DomainGrid, config: &FlowConfig) -> Result<f64> {
    config.validate()?;
    let gradsq = grid.grad_norm_sq(&state.u);
    let fmax = gradsq.max() + state.eps;
    Ok(cfl_dt_from_fmax(fmax, grid, config))
}

fn cfl_dt_from_fmax(fmax: f64, grid: &DomainGrid, config: &FlowConfig) -> f64 {
    let h = grid.min_spacing();
    let expo = (config.p - 2.0) / 2.0;
    let wmax = pow_weight(fmax, expo);
    config.dt_safety * h * h / (2.0 * grid.dim() as f64 * wmax * grid.max_metric_inv_diag())
}

/// The uniqueness-argument pairing ⟨|a|^{p−2}a − |b|^{p−2}b, a−b⟩.
///
/// For p ≥ 2 it dominates 2^{2−p}|a−b|^p (sharp at antipodal pairs for p=4);
/// the constant-one variant fails there, so the corrected constant is used in
/// every test built on this quantity.
pub fn monotonicity_gap(a: &[f64], b: &[f64], p: f64) -> f64 {
    assert!(p >= 2.0, "monotonicity gap needs p >= 2");
    assert_eq!(a.len(), b.len());
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let wa = if na == 0.0 { 0.0 } else { na.powf(p - 2.0) };
    let wb = if nb == 0.0 { 0.0 } else { nb.powf(p - 2.0) };
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (wa * a[i] - wb * b[i]) * (a[i] - b[i]);
    }
    s
}

/// Max node-wise Euclidean distance between two fields on the same grid.
pub fn sup_distance(u1: &AmbientField, u2: &AmbientField) -> Result<f64> {
    if u1.ambient_dim != u2.ambient_dim || u1.data.len() != u2.data.len() {
        return Err(PflowError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            u1.num_nodes(),
            u1.ambient_dim,
            u2.num_nodes(),
            u2.ambient_dim
        )));
    }
    let l = u1.ambient_dim;
    let mut worst = 0.0f64;
    for idx in 0..u1.num_nodes() {
        let mut s = 0.0;
        for c in 0..l {
            let d = u1.data[idx * l + c] - u2.data[idx * l + c];
            s += d * d;
        }
        worst = worst.max(s);
    }
    Ok(worst.sqrt())
}

/// L² stationarity residual ‖Δ_{p,ε}u + F^{(p−2)/2}A(u)(∇u,∇u)‖, evaluated
/// at the state's own ε.
pub fn stationarity_residual(
    state: &MapState,
    grid: &DomainGrid,
    target: &EmbeddedTarget,
) -> Result<f64> {
    let mut ws = FlowWorkspace::new(grid, state.u.ambient_dim);
    ws.eval(state, grid, target)?;
    Ok(ws.residual(grid))
}

/// Residual re-evaluated at a different ε (ε = 0 probes the unregularised
/// tension field; stepping never uses ε = 0).
pub fn stationarity_residual_at(
    state: &MapState,
    grid: &DomainGrid,
    target: &EmbeddedTarget,
    eps: f64,
) -> Result<f64> {
    let probe = MapState {
        u: state.u.clone(),
        t: state.t,
        eps,
        p: state.p,
    };
    stationarity_residual(&probe, grid, target)
}

/// One explicit step from the current state, dt from the CFL bound.
pub fn step(
    state: &MapState,
    grid: &DomainGrid,
    target: &EmbeddedTarget,
    config: &FlowConfig,
) -> Result<MapState> {
    config.validate()?;
    let mut ws = FlowWorkspace::new(grid, state.u.ambient_dim);
    ws.eval(state, grid, target)?;
    let dt = config
        .fixed_dt
        .unwrap_or_else(|| cfl_dt_from_fmax(ws.max_f(), grid, config));
    let mut stepper = Stepper::new(grid, target, config.clone());
    let mut next = state.clone();
    stepper.advance(&mut next, &mut ws, dt, 1)?;
    Ok(next)
}

/// In-place step executor shared by `step` and `run`.
struct Stepper<'a> {
    grid: &'a DomainGrid,
    target: &'a EmbeddedTarget,
    config: FlowConfig,
    plap_only: Option<AmbientField>,
    proj: Vec<f64>,
    /// quadrature-weighted squared displacement of the last step
    pub last_delta_sq: f64,
}

impl<'a> Stepper<'a> {
    fn new(grid: &'a DomainGrid, target: &'a EmbeddedTarget, config: FlowConfig) -> Self {
        Stepper {
            grid,
            target,
            config,
            plap_only: None,
            proj: vec![0.0; 8],
            last_delta_sq: 0.0,
        }
    }

    /// Advance `state` by dt using the prepared workspace evaluation.
    /// `step_number` is the 1-based global step count (projection cadence).
    fn advance(
        &mut self,
        state: &mut MapState,
        ws: &mut FlowWorkspace,
        dt: f64,
        step_number: u64,
    ) -> Result<()> {
        let l = state.u.ambient_dim;
        let nodes = self.grid.num_nodes();
        self.proj.resize(l, 0.0);

        let project_now = match self.config.scheme {
            Scheme::ProjectAfterStep => true,
            Scheme::ExplicitWithForcing => {
                self.config.reproject_every > 0
                    && step_number % self.config.reproject_every as u64 == 0
            }
        };
        let update: &AmbientField = match self.config.scheme {
            Scheme::ExplicitWithForcing => &ws.rhs,
            Scheme::ProjectAfterStep => {
                // diffusion only; the constraint force is realised by Π
                let plap = self
                    .plap_only
                    .get_or_insert_with(|| AmbientField::zeros(nodes, l));
                self.grid
                    .div_weighted_into(&ws.weight, &ws.partials, &mut ws.flux, plap);
                plap
            }
        };

        let mut delta_sq = 0.0;
        let mut worst_violation = 0.0f64;
        for idx in 0..nodes {
            let urow = state.u.node_mut(idx);
            let drow = update.node(idx);
            for c in 0..l {
                self.proj[c] = urow[c] + dt * drow[c];
            }
            if project_now && self.target.codim() > 0 {
                let raw = self.proj.clone();
                self.target.project(&raw, &mut self.proj).map_err(|e| match e {
                    PflowError::OffManifold { violation, tol } => PflowError::FlowAborted {
                        t: state.t,
                        reason: format!("drift {violation:.3e} beyond tubular tolerance {tol:.3e}"),
                    },
                    other => other,
                })?;
            }
            let mut node_sq = 0.0;
            for c in 0..l {
                let new = self.proj[c];
                if !new.is_finite() {
                    return Err(PflowError::FlowAborted {
                        t: state.t,
                        reason: "non-finite state value".into(),
                    });
                }
                let d = new - urow[c];
                node_sq += d * d;
                urow[c] = new;
            }
            delta_sq += node_sq * self.grid.node_weight(idx);
            if self.target.codim() > 0 {
                worst_violation = worst_violation.max(self.target.constraint_violation(state.u.node(idx)));
            }
        }
        let drift_tol = DRIFT_ABORT_FRACTION * self.target.tubular_radius();
        if worst_violation > drift_tol {
            return Err(PflowError::FlowAborted {
                t: state.t,
                reason: format!("drift {worst_violation:.3e} beyond tubular tolerance {drift_tol:.3e}"),
            });
        }
        self.last_delta_sq = delta_sq;
        state.t += dt;
        Ok(())
    }
}

/// Reason an ε leg finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    TimeBudget,
    Aborted,
}

/// Optional extras for a run.
#[derive(Default)]
pub struct RunOptions<'a> {
    pub cert: Option<&'a RegularBallCert>,
    /// Keep a state snapshot every k steps (plus the initial state).
    pub history_every: Option<usize>,
}

/// Stored trajectory snapshots for space-time diagnostics.
pub struct FlowHistory {
    pub times: Vec<f64>,
    pub snapshots: Vec<AmbientField>,
    pub initial: AmbientField,
}

/// Full record of one flow run: configuration echo, per-step monitor series,
/// final state and summary flags.
pub struct RunRecord {
    pub config: FlowConfig,
    pub report: MonitorReport,
    pub final_state: MapState,
    pub leg_stops: Vec<(f64, StopReason)>,
    pub dissipation_sum: f64,
    pub abort: Option<String>,
    pub history: Option<FlowHistory>,
    pub wall_time_secs: f64,
    pub version: &'static str,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        self.abort.is_none()
            && self
                .leg_stops
                .iter()
                .all(|(_, r)| *r == StopReason::Converged)
    }
}

/// Integrate the flow across the ε schedule, warm-starting each leg from the
/// previous one.  Monitors are recorded at every accepted step.
pub fn run(
    grid: &DomainGrid,
    target: &EmbeddedTarget,
    u0: AmbientField,
    config: &FlowConfig,
    opts: &RunOptions,
) -> Result<RunRecord> {
    config.validate()?;
    if u0.ambient_dim != target.ambient_dim() {
        return Err(PflowError::ShapeMismatch(format!(
            "map into R^{} vs target ambient R^{}",
            u0.ambient_dim,
            target.ambient_dim()
        )));
    }
    if u0.num_nodes() != grid.num_nodes() {
        return Err(PflowError::ShapeMismatch("initial map vs grid".into()));
    }
    if !u0.all_finite() {
        return Err(PflowError::NonFinite("initial map".into()));
    }
    if let Some(cert) = opts.cert {
        // pre-flight: u0 must map into the certified sublevel set
        for idx in 0..u0.num_nodes() {
            let fs = cert.fstar(target, u0.node(idx));
            if !(fs < cert.a) {
                return Err(PflowError::Precondition(format!(
                    "initial map leaves the sublevel set at node {idx}: f* = {fs} >= a = {}",
                    cert.a
                )));
            }
        }
    }

    let started = std::time::Instant::now();
    let mut state = MapState::new(u0, config.eps_schedule[0], config.p);
    let mut ws = FlowWorkspace::new(grid, state.u.ambient_dim);
    let mut stepper = Stepper::new(grid, target, config.clone());

    let mut rows: Vec<StepRow> = Vec::new();
    let mut leg_stops = Vec::new();
    let mut abort: Option<String> = None;
    let mut history = opts.history_every.map(|_| FlowHistory {
        times: Vec::new(),
        snapshots: Vec::new(),
        initial: state.u.clone(),
    });

    let mut e_ref: Option<f64> = None; // |E| scale for the identity residual
    let mut identity_accum = 0.0;
    let mut diss_sum = 0.0;
    let mut global_step: u64 = 0;
    let mut last_row_t = f64::NEG_INFINITY;

    'legs: for &eps in &config.eps_schedule {
        state.eps = eps;
        let leg_t0 = state.t;
        let mut steps_this_leg = 0usize;
        let mut e_prev: Option<f64> = None;
        let mut pending_diss: Option<f64> = None;

        loop {
            if let Err(e) = ws.eval(&state, grid, target) {
                abort = Some(e.to_string());
                leg_stops.push((eps, StopReason::Aborted));
                break 'legs;
            }
            let energy = ws.energy(grid, config.p);
            let e_scale = *e_ref.get_or_insert(energy.abs().max(f64::MIN_POSITIVE));
            if let (Some(prev), Some(d)) = (e_prev, pending_diss) {
                identity_accum += (energy - prev) + d;
            }
            e_prev = Some(energy);

            let residual = ws.residual(grid);
            let (max_fstar, max_phi) = match opts.cert {
                Some(cert) => match cert.constant_values() {
                    Some((fv, fs)) => (fs, ws.max_f() / (fv * fv)),
                    None => {
                        let mut mf = f64::NEG_INFINITY;
                        let mut mp = f64::NEG_INFINITY;
                        for idx in 0..state.u.num_nodes() {
                            let y = state.u.node(idx);
                            mf = mf.max(cert.fstar(target, y));
                            let f = cert.f(target, y);
                            mp = mp.max(ws.f_field.data[idx] / (f * f));
                        }
                        (mf, mp)
                    }
                },
                None => (0.0, ws.max_f()),
            };

            if state.t > last_row_t {
                rows.push(StepRow {
                    step: global_step,
                    t: state.t,
                    eps,
                    energy,
                    dissipation_residual: identity_accum.abs() / e_scale,
                    max_fstar,
                    max_phi,
                    stationarity_residual: residual,
                    drift: ws.drift,
                });
                last_row_t = state.t;
                if let (Some(h), Some(every)) = (history.as_mut(), opts.history_every) {
                    if global_step % every as u64 == 0 {
                        h.times.push(state.t);
                        h.snapshots.push(state.u.clone());
                    }
                }
            }

            // a run that has reached the sublevel bound did not stay confined;
            // treat it as a scheme failure rather than a physics event
            if let Some(cert) = opts.cert {
                if max_fstar >= cert.a {
                    abort = Some(format!(
                        "confinement violated: max f* = {max_fstar} reached a = {}",
                        cert.a
                    ));
                    leg_stops.push((eps, StopReason::Aborted));
                    break 'legs;
                }
            }

            if residual < config.stat_tol {
                leg_stops.push((eps, StopReason::Converged));
                break;
            }
            if state.t - leg_t0 >= config.t_end * (1.0 - 1e-12) {
                leg_stops.push((eps, StopReason::TimeBudget));
                break;
            }
            if steps_this_leg >= config.max_steps_per_leg {
                abort = Some(format!("step budget exhausted on eps = {eps}"));
                leg_stops.push((eps, StopReason::Aborted));
                break 'legs;
            }

            let dt = config
                .fixed_dt
                .unwrap_or_else(|| cfl_dt_from_fmax(ws.max_f(), grid, config));
            global_step += 1;
            if let Err(e) = stepper.advance(&mut state, &mut ws, dt, global_step) {
                abort = Some(e.to_string());
                leg_stops.push((eps, StopReason::Aborted));
                break 'legs;
            }
            let step_diss = stepper.last_delta_sq / dt;
            diss_sum += step_diss;
            pending_diss = Some(step_diss);
            steps_this_leg += 1;
        }
    }

    let flags = diagnostics::summary_flags(&rows);
    Ok(RunRecord {
        config: config.clone(),
        report: MonitorReport { rows, flags },
        final_state: state,
        leg_stops,
        dissipation_sum: diss_sum,
        abort,
        history,
        wall_time_secs: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::energy;
    use crate::rng::SeededRng;
    use std::f64::consts::PI;

    fn circle(n: usize) -> DomainGrid {
        DomainGrid::build_flat_torus(1, n, 2.0 * PI).unwrap()
    }

    fn sphere_wrap(grid: &DomainGrid, k: f64) -> AmbientField {
        AmbientField::from_fn(grid, 3, |p| vec![(k * p[0]).cos(), (k * p[0]).sin(), 0.0])
    }

    fn clifford_wrap(grid: &DomainGrid, k: f64) -> AmbientField {
        let r = 0.5f64.sqrt();
        AmbientField::from_fn(grid, 4, |p| {
            vec![r * (k * p[0]).cos(), r * (k * p[0]).sin(), r, 0.0]
        })
    }

    #[test]
    fn p2_laplacian_matches_unweighted() {
        let grid = circle(64);
        let u = AmbientField::from_fn(&grid, 2, |p| vec![p[0].sin(), (3.0 * p[0]).cos()]);
        let state = MapState::new(u.clone(), 0.37, 2.0);
        let plap = p_laplacian_eps(&state, &grid);
        let w = ScalarField::constant(grid.num_nodes(), 1.0);
        let lap = grid.div_weighted(&w, &grid.gradient(&u));
        for i in 0..plap.data.len() {
            assert!((plap.data[i] - lap.data[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_map_is_stationary() {
        let grid = DomainGrid::build_flat_torus(2, 8, 2.0 * PI).unwrap();
        let target = EmbeddedTarget::make_sphere(2).unwrap();
        let u = AmbientField::from_fn(&grid, 3, |_| vec![0.0, 0.0, 1.0]);
        let state = MapState::new(u.clone(), 0.01, 3.0);
        let plap = p_laplacian_eps(&state, &grid);
        assert!(plap.data.iter().all(|x| x.abs() < 1e-14));
        let r = rhs(&state, &grid, &target).unwrap();
        assert!(r.data.iter().all(|x| x.abs() < 1e-14));

        let cfg = FlowConfig::new(3.0);
        let next = step(&state, &grid, &target, &cfg).unwrap();
        assert_eq!(sup_distance(&next.u, &u).unwrap(), 0.0);
        let cfg2 = FlowConfig {
            scheme: Scheme::ProjectAfterStep,
            ..FlowConfig::new(3.0)
        };
        let next2 = step(&state, &grid, &target, &cfg2).unwrap();
        assert!(sup_distance(&next2.u, &u).unwrap() < 1e-15);
    }

    #[test]
    fn wrap_p_laplacian_value() {
        let grid = circle(256);
        let k = 1.0;
        for (p, eps) in [(2.0, 0.5), (3.0, 0.01), (4.0, 0.0)] {
            let state = MapState::new(sphere_wrap(&grid, k), eps, p);
            let plap = p_laplacian_eps(&state, &grid);
            let u = sphere_wrap(&grid, k);
            // discrete |u'|^2 is constant, so the operator is a constant
            // multiple of u; compare against (k²+eps)^{(p−2)/2}(−k² u)
            let coeff = (k * k + eps).powf((p - 2.0) / 2.0) * k * k;
            for idx in 0..grid.num_nodes() {
                for c in 0..3 {
                    let got = plap.data[idx * 3 + c];
                    let expect = -coeff * u.data[idx * 3 + c];
                    assert!(
                        (got - expect).abs() <= 2e-3 * coeff.max(1.0),
                        "p={p} eps={eps}: {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn geodesic_wraps_are_discrete_fixed_points() {
        let grid = circle(256);
        let sphere = EmbeddedTarget::make_sphere(2).unwrap();
        let torus = EmbeddedTarget::make_clifford_torus();
        for (p, eps) in [(2.0, 1e-1), (2.0, 1e-6), (3.0, 1e-2), (4.0, 1e-4)] {
            let s1 = MapState::new(sphere_wrap(&grid, 1.0), eps, p);
            let r1 = stationarity_residual(&s1, &grid, &sphere).unwrap();
            assert!(r1 < 1e-10, "sphere wrap residual {r1} (p={p})");

            let s2 = MapState::new(clifford_wrap(&grid, 2.0), eps, p);
            let r2 = stationarity_residual(&s2, &grid, &torus).unwrap();
            assert!(r2 < 1e-9, "clifford wrap residual {r2} (p={p})");
        }
        // residual at eps = 0 likewise vanishes on the wrap
        let s = MapState::new(sphere_wrap(&grid, 1.0), 1e-2, 3.0);
        let r0 = stationarity_residual_at(&s, &grid, &sphere, 0.0).unwrap();
        assert!(r0 < 1e-10);

        // a perturbed wrap is not stationary
        let mut u = sphere_wrap(&grid, 1.0);
        for idx in 0..grid.num_nodes() {
            let x = grid.node_position(idx)[0];
            let th = x + 0.1 * x.sin();
            u.node_mut(idx).copy_from_slice(&[th.cos(), th.sin(), 0.0]);
        }
        let sp = MapState::new(u, 1e-2, 2.0);
        assert!(stationarity_residual(&sp, &grid, &sphere).unwrap() > 1e-2);
    }

    #[test]
    fn cfl_formula() {
        let grid = DomainGrid::build_flat_torus(2, 32, 2.0 * PI).unwrap();
        let u = AmbientField::from_fn(&grid, 3, |_| vec![0.0, 0.0, 1.0]);
        let cfg = FlowConfig::new(2.0);
        let state = MapState::new(u, 0.3, 2.0);
        let dt = cfl_dt(&state, &grid, &cfg).unwrap();
        let h = grid.spacings()[0];
        assert!((dt - cfg.dt_safety * h * h / 4.0).abs() < 1e-15);

        // p = 4: doubling the gradient scale divides dt by 4
        let eps = 1e-12;
        let u1 = AmbientField::from_fn(&grid, 1, |p| vec![p[0].sin()]);
        let u2 = AmbientField::from_fn(&grid, 1, |p| vec![2.0 * p[0].sin()]);
        let cfg4 = FlowConfig::new(4.0);
        let d1 = cfl_dt(&MapState::new(u1, eps, 4.0), &grid, &cfg4).unwrap();
        let d2 = cfl_dt(&MapState::new(u2, eps, 4.0), &grid, &cfg4).unwrap();
        assert!((d1 / d2 - 4.0).abs() < 1e-6);

        let bad = FlowConfig {
            dt_safety: 0.0,
            ..FlowConfig::new(2.0)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::new(2.0).validate().is_ok());
        assert!(FlowConfig { p: 1.5, ..FlowConfig::new(2.0) }.validate().is_err());
        assert!(FlowConfig { eps_schedule: vec![], ..FlowConfig::new(2.0) }
            .validate()
            .is_err());
        assert!(FlowConfig { eps_schedule: vec![1e-2, 1e-1], ..FlowConfig::new(2.0) }
            .validate()
            .is_err());
        assert!(FlowConfig { eps_schedule: vec![1e-2, 0.0], ..FlowConfig::new(2.0) }
            .validate()
            .is_err());
        assert!(FlowConfig { dt_safety: 1.5, ..FlowConfig::new(2.0) }.validate().is_err());
    }

    #[test]
    fn monotonicity_gap_examples() {
        assert!((monotonicity_gap(&[1.0, 0.0], &[0.0, 0.0], 3.0) - 1.0).abs() < 1e-15);
        // p=4 antipodal pair: gap 4 equals 2^{2-4} |a-b|^4 = 16/4 exactly
        let gap = monotonicity_gap(&[1.0, 0.0], &[-1.0, 0.0], 4.0);
        assert!((gap - 4.0).abs() < 1e-12);
        assert!((gap - 0.25 * 16.0).abs() < 1e-12);
        // equal inputs
        assert_eq!(monotonicity_gap(&[0.3, -0.2], &[0.3, -0.2], 2.5), 0.0);
    }

    #[test]
    fn monotonicity_gap_dominates_corrected_bound() {
        let mut rng = SeededRng::new(0xfeed);
        for &p in &[2.0, 2.5, 3.0, 4.0] {
            for _ in 0..20_000 {
                let a = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
                let b = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
                let gap = monotonicity_gap(&a, &b, p);
                let diff: f64 = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                let bound = 2.0f64.powf(2.0 - p) * diff.powf(p);
                assert!(
                    gap >= bound - 1e-12 * bound.max(1.0),
                    "p={p}: gap {gap} < bound {bound}"
                );
            }
        }
    }

    #[test]
    fn sup_distance_basics() {
        let grid = circle(16);
        let u = sphere_wrap(&grid, 1.0);
        assert_eq!(sup_distance(&u, &u).unwrap(), 0.0);
        let mut v = u.clone();
        for idx in 0..grid.num_nodes() {
            v.node_mut(idx)[0] += 0.25;
        }
        assert!((sup_distance(&u, &v).unwrap() - 0.25).abs() < 1e-15);
        let w = AmbientField::zeros(grid.num_nodes(), 2);
        assert!(sup_distance(&u, &w).is_err());
    }

    #[test]
    fn wrap_moves_little_under_stepping() {
        let grid = circle(128);
        let target = EmbeddedTarget::make_clifford_torus();
        let u0 = clifford_wrap(&grid, 1.0);
        let cfg = FlowConfig {
            t_end: 1e9,
            stat_tol: 1e-30,
            ..FlowConfig::new(3.0)
        };
        let mut state = MapState::new(u0.clone(), cfg.eps_schedule[0], 3.0);
        let mut ws = FlowWorkspace::new(&grid, 4);
        let mut stepper = Stepper::new(&grid, &target, cfg.clone());
        for n in 0..100 {
            ws.eval(&state, &grid, &target).unwrap();
            let dt = cfl_dt_from_fmax(ws.max_f(), &grid, &cfg);
            stepper.advance(&mut state, &mut ws, dt, n + 1).unwrap();
        }
        assert!(sup_distance(&state.u, &u0).unwrap() < 1e-12);
    }

    #[test]
    fn energy_decreases_across_one_step() {
        let grid = DomainGrid::build_flat_torus(2, 16, 2.0 * PI).unwrap();
        let target = EmbeddedTarget::make_sphere(2).unwrap();
        let u = AmbientField::from_fn(&grid, 3, |p| {
            let a = 0.2 * p[0].sin() + 0.1 * (p[1]).cos();
            let b = 0.15 * (p[0] + p[1]).sin();
            let n = (1.0 + a * a + b * b).sqrt();
            vec![a / n, b / n, 1.0 / n]
        });
        for p in [2.0, 3.0] {
            let cfg = FlowConfig::new(p);
            let state = MapState::new(u.clone(), 0.01, p);
            let e0 = energy(&state, &grid);
            let next = step(&state, &grid, &target, &cfg).unwrap();
            let e1 = energy(&next, &grid);
            assert!(e1 <= e0 + 1e-12 * e0.abs(), "p={p}: {e1} > {e0}");
        }
    }

    #[test]
    fn run_constant_map_stops_immediately() {
        let grid = DomainGrid::build_flat_torus(2, 8, 2.0 * PI).unwrap();
        let target = EmbeddedTarget::make_sphere(2).unwrap();
        let u0 = AmbientField::from_fn(&grid, 3, |_| vec![0.0, 0.0, 1.0]);
        let cfg = FlowConfig::new(2.0);
        let rec = run(&grid, &target, u0, &cfg, &RunOptions::default()).unwrap();
        assert!(rec.converged());
        assert_eq!(rec.report.rows.len(), 1);
        assert_eq!(rec.final_state.t, 0.0);
        // E_{p,eps} of a constant map: eps^{p/2} Vol / p
        let vol = 4.0 * PI * PI;
        let expect = 0.1f64.powf(1.0) * vol / 2.0;
        assert!((rec.report.rows[0].energy - expect).abs() < 1e-12);
    }

    #[test]
    fn unprojected_drift_stays_bounded() {
        let grid = circle(64);
        let target = EmbeddedTarget::make_sphere(2).unwrap();
        let u0 = AmbientField::from_fn(&grid, 3, |p| {
            let th = p[0] + 0.2 * p[0].sin();
            vec![th.cos(), th.sin(), 0.0]
        });
        let cfg = FlowConfig {
            reproject_every: 0,
            stat_tol: 1e-30,
            t_end: 1e9,
            ..FlowConfig::new(2.0)
        };
        let mut state = MapState::new(u0, cfg.eps_schedule[0], 2.0);
        let mut ws = FlowWorkspace::new(&grid, 3);
        let mut stepper = Stepper::new(&grid, &target, cfg.clone());
        let mut max_rhs = 0.0f64;
        let mut dt_used = 0.0;
        for n in 0..100 {
            ws.eval(&state, &grid, &target).unwrap();
            for idx in 0..grid.num_nodes() {
                let row = ws.rhs.node(idx);
                max_rhs = max_rhs.max(row.iter().map(|x| x * x).sum::<f64>().sqrt());
            }
            let dt = cfl_dt_from_fmax(ws.max_f(), &grid, &cfg);
            dt_used = dt;
            stepper.advance(&mut state, &mut ws, dt, n + 1).unwrap();
        }
        let mut worst = 0.0f64;
        for idx in 0..grid.num_nodes() {
            worst = worst.max(target.constraint_violation(state.u.node(idx)));
        }
        assert!(worst <= 10.0 * dt_used * max_rhs, "drift {worst}");
        assert!(worst > 0.0);
    }

    #[test]
    fn epsilon_schedules_agree_at_shared_tail() {
        let grid = circle(32);
        let target = EmbeddedTarget::make_sphere(2).unwrap();
        let u0 = AmbientField::from_fn(&grid, 3, |p| {
            let v = 0.1 * p[0].sin();
            vec![v.sin(), 0.0, v.cos()]
        });
        let mk = |sched: Vec<f64>| FlowConfig {
            eps_schedule: sched,
            t_end: 1000.0,
            ..FlowConfig::new(3.0)
        };
        let r1 = run(&grid, &target, u0.clone(), &mk(vec![1e-1, 1e-2, 1e-3]), &RunOptions::default()).unwrap();
        let r2 = run(&grid, &target, u0, &mk(vec![1e-2, 1e-3]), &RunOptions::default()).unwrap();
        assert!(r1.converged() && r2.converged());
        let d = sup_distance(&r1.final_state.u, &r2.final_state.u).unwrap();
        assert!(d <= 1e-4, "schedule mismatch {d}");
    }
}
