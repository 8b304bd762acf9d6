//! Seeded initial-map generators.
//!
//! Every generator is a function of continuum position, independent of the
//! evaluation grid, so the same seed yields the same underlying map across
//! resolutions (the refinement studies rely on this).

use crate::geometry::{AmbientField, DomainGrid};
use crate::rng::SeededRng;
use crate::target::EmbeddedTarget;

/// Real trigonometric polynomial Σ a_k cos(⟨k, 2πx/P⟩ + φ_k) over modes with
/// 1 ≤ |k|_∞ ≤ kmax, amplitudes damped by 1/(1+|k|²).
#[derive(Debug, Clone)]
pub struct BandLimitedField {
    modes: Vec<([i32; 3], f64, f64)>,
    periods: [f64; 3],
    m: usize,
}

impl BandLimitedField {
    pub fn new(rng: &mut SeededRng, m: usize, periods: [f64; 3], kmax: i32) -> Self {
        let mut modes = Vec::new();
        let ks = |active: bool| if active { (-kmax, kmax) } else { (0, 0) };
        let (k1lo, k1hi) = ks(m >= 1);
        let (k2lo, k2hi) = ks(m >= 2);
        let (k3lo, k3hi) = ks(m >= 3);
        for k1 in k1lo..=k1hi {
            for k2 in k2lo..=k2hi {
                for k3 in k3lo..=k3hi {
                    if k1 == 0 && k2 == 0 && k3 == 0 {
                        continue;
                    }
                    // one representative per ±k pair keeps the basis real
                    if (k1, k2, k3) < (0, 0, 0) {
                        continue;
                    }
                    let ksq = (k1 * k1 + k2 * k2 + k3 * k3) as f64;
                    let amp = rng.normal() / (1.0 + ksq);
                    let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
                    modes.push(([k1, k2, k3], amp, phase));
                }
            }
        }
        BandLimitedField { modes, periods, m }
    }

    pub fn eval(&self, pos: &[f64; 3]) -> f64 {
        let mut s = 0.0;
        for (k, amp, phase) in &self.modes {
            let mut arg = *phase;
            for a in 0..self.m {
                arg += 2.0 * std::f64::consts::PI * k[a] as f64 * pos[a] / self.periods[a];
            }
            s += amp * arg.cos();
        }
        s
    }

    /// Sup of |field| probed on a fixed fine lattice (grid-independent).
    pub fn sup_abs(&self, probe_per_axis: usize) -> f64 {
        let mut worst = 0.0f64;
        let n = probe_per_axis;
        let steps = |active: bool| if active { n } else { 1 };
        for i in 0..steps(self.m >= 1) {
            for j in 0..steps(self.m >= 2) {
                for k in 0..steps(self.m >= 3) {
                    let pos = [
                        self.periods[0] * i as f64 / n as f64,
                        self.periods[1] * j as f64 / n as f64,
                        self.periods[2] * k as f64 / n as f64,
                    ];
                    worst = worst.max(self.eval(&pos).abs());
                }
            }
        }
        worst
    }
}

/// Map into the geodesic cap B(center, ·) of the unit sphere through the
/// exponential map: u(x) = cos ρ · c + sin ρ · v/|v| with tangent coordinates
/// v = (s·v₁(x), s·v₂(x)) from two band-limited fields.
#[derive(Debug, Clone)]
pub struct CapMap {
    pub center: Vec<f64>,
    frame: [Vec<f64>; 2],
    fields: [BandLimitedField; 2],
    scale: f64,
}

impl CapMap {
    /// Scaled so that sup ρ (probed on a fine lattice) equals `max_rho`.
    pub fn new(
        rng: &mut SeededRng,
        target: &EmbeddedTarget,
        center: Vec<f64>,
        m: usize,
        periods: [f64; 3],
        kmax: i32,
        max_rho: f64,
    ) -> Self {
        let frame_vecs = target.tangent_frame(&center);
        let frame = [frame_vecs[0].clone(), frame_vecs[1].clone()];
        let f1 = BandLimitedField::new(rng, m, periods, kmax);
        let f2 = BandLimitedField::new(rng, m, periods, kmax);
        let mut cap = CapMap {
            center,
            frame,
            fields: [f1, f2],
            scale: 1.0,
        };
        let sup = cap.sup_rho_probe(128);
        cap.scale = if sup > 0.0 { max_rho / sup } else { 0.0 };
        cap
    }

    fn rho_raw(&self, pos: &[f64; 3]) -> (f64, f64, f64) {
        let v1 = self.fields[0].eval(pos);
        let v2 = self.fields[1].eval(pos);
        ((v1 * v1 + v2 * v2).sqrt(), v1, v2)
    }

    fn sup_rho_probe(&self, probe_per_axis: usize) -> f64 {
        let n = probe_per_axis;
        let m = self.fields[0].m;
        let periods = self.fields[0].periods;
        let mut worst = 0.0f64;
        let steps = |active: bool| if active { n } else { 1 };
        for i in 0..steps(m >= 1) {
            for j in 0..steps(m >= 2) {
                for k in 0..steps(m >= 3) {
                    let pos = [
                        periods[0] * i as f64 / n as f64,
                        periods[1] * j as f64 / n as f64,
                        periods[2] * k as f64 / n as f64,
                    ];
                    worst = worst.max(self.rho_raw(&pos).0);
                }
            }
        }
        worst
    }

    pub fn eval(&self, pos: &[f64; 3]) -> Vec<f64> {
        let (rho_raw, v1, v2) = self.rho_raw(pos);
        let rho = self.scale * rho_raw;
        let l = self.center.len();
        let mut out = vec![0.0; l];
        if rho < 1e-14 {
            out.copy_from_slice(&self.center);
            return out;
        }
        let dir1 = v1 / rho_raw;
        let dir2 = v2 / rho_raw;
        for c in 0..l {
            out[c] = rho.cos() * self.center[c]
                + rho.sin() * (dir1 * self.frame[0][c] + dir2 * self.frame[1][c]);
        }
        out
    }

    pub fn materialize(&self, grid: &DomainGrid) -> AmbientField {
        AmbientField::from_fn(grid, self.center.len(), |pos| self.eval(pos))
    }

    /// Rescale so the sup of ρ over this grid's nodes hits `max_rho` exactly
    /// (used to start a run at a prescribed distance from the sublevel bound).
    pub fn rescaled_to_grid(mut self, grid: &DomainGrid, max_rho: f64) -> Self {
        let mut sup = 0.0f64;
        for idx in 0..grid.num_nodes() {
            let pos = grid.node_position(idx);
            sup = sup.max(self.rho_raw(&pos).0);
        }
        self.scale = if sup > 0.0 { max_rho / sup } else { 0.0 };
        self
    }
}

/// Smooth, compactly supported, mean-zero angle bump: an odd lobe
/// A · (d₁/r₀) · exp(−1/(1−s²)) inside the ball of radius r₀ (s = |Δx|/r₀),
/// identically zero outside.  Oddness in the first offset makes the mean
/// vanish exactly, so expanding-domain limits share their asymptotic constant.
#[derive(Debug, Clone)]
pub struct AngleBump {
    pub center: [f64; 3],
    pub radius: f64,
    pub amplitude: f64,
    pub alpha_base: f64,
    pub beta_base: f64,
}

impl AngleBump {
    pub fn offset(&self, grid: &DomainGrid, pos: &[f64; 3]) -> f64 {
        let mut dsq = 0.0;
        let mut d1 = 0.0;
        for a in 0..grid.dim() {
            let d = grid.periodic_delta(a, pos[a], self.center[a]);
            if a == 0 {
                d1 = d;
            }
            dsq += d * d;
        }
        let ssq = dsq / (self.radius * self.radius);
        if ssq >= 1.0 {
            return 0.0;
        }
        self.amplitude * (d1 / self.radius) * (-1.0 / (1.0 - ssq)).exp()
    }

    pub fn materialize(&self, grid: &DomainGrid) -> AmbientField {
        let r = 0.5f64.sqrt();
        AmbientField::from_fn(grid, 4, |pos| {
            let a = self.alpha_base + self.offset(grid, pos);
            let b = self.beta_base;
            vec![r * a.cos(), r * a.sin(), r * b.cos(), r * b.sin()]
        })
    }
}
