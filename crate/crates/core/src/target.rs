//! Embedded target manifolds N ⊂ ℝ^L and regular-ball certification.
//!
//! Targets are cut out by orthogonal constraints Φ_k with closed-form
//! gradients and Hessians.  The second-fundamental-form contraction used by
//! the flow is assembled from the constraints as
//!
//!   Σ_k [ g^{ij} ⟨Hess Φ_k(y) ∂_i u, ∂_j u⟩ / |∇Φ_k(y)|² ] ∇Φ_k(y),
//!
//! with the sign fixed so that constant-speed geodesic wraps are stationary
//! states of the evolution (unit sphere: the contraction equals |∇u|² y).
//!
//! Certification evaluates the concavity condition
//!
//!   −∇²f − K₂ f h  ≥  δ (|∇f|²/f) h        (pinched by C⁻¹ ≤ f ≤ C)
//!
//! and convexity of the sublevel function f* on sample sets, via minimum
//! eigenvalues of the corresponding bilinear forms on orthonormal tangent
//! frames.

use crate::error::{PflowError, Result};
use crate::geometry::sym_index;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

/// Eigenvalue slack for the sampled semidefiniteness checks.
pub const EIG_TOL: f64 = 1e-10;
/// Constraint residual guaranteed by `project`.
pub const PROJECT_TOL: f64 = 1e-12;
/// Largest constraint violation accepted by `sff_contract`.
pub const SFF_DRIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// Unit sphere S^n ⊂ ℝ^{n+1}, constraint (|y|²−1)/2.
    Sphere,
    /// S¹(1/√2) × S¹(1/√2) ⊂ ℝ⁴, constraints (y₁²+y₂²−1/2)/2 and (y₃²+y₄²−1/2)/2.
    CliffordTorus,
    /// ℝ^L itself; no constraints, vanishing second fundamental form.
    Euclidean,
}

#[derive(Debug, Clone)]
pub struct EmbeddedTarget {
    kind: TargetKind,
    ambient_dim: usize,
    codim: usize,
    sect_upper_bound: f64,
    tubular_radius: f64,
}

impl EmbeddedTarget {
    /// Unit sphere of intrinsic dimension n.
    pub fn make_sphere(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(PflowError::InvalidTarget("sphere dimension must be >= 1".into()));
        }
        Ok(EmbeddedTarget {
            kind: TargetKind::Sphere,
            ambient_dim: n + 1,
            codim: 1,
            sect_upper_bound: 1.0,
            tubular_radius: 0.5,
        })
    }

    /// Flat Clifford torus in ℝ⁴.
    pub fn make_clifford_torus() -> Self {
        EmbeddedTarget {
            kind: TargetKind::CliffordTorus,
            ambient_dim: 4,
            codim: 2,
            sect_upper_bound: 0.0,
            tubular_radius: 0.3,
        }
    }

    /// Euclidean control target: every map is unconstrained, A ≡ 0.
    pub fn make_euclidean(ambient_dim: usize) -> Result<Self> {
        if ambient_dim < 1 {
            return Err(PflowError::InvalidTarget("ambient dimension must be >= 1".into()));
        }
        Ok(EmbeddedTarget {
            kind: TargetKind::Euclidean,
            ambient_dim,
            codim: 0,
            sect_upper_bound: 0.0,
            tubular_radius: f64::INFINITY,
        })
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn codim(&self) -> usize {
        self.codim
    }

    /// Upper bound K₂ ≥ 0 on the sectional curvature.
    pub fn sect_upper_bound(&self) -> f64 {
        self.sect_upper_bound
    }

    pub fn tubular_radius(&self) -> f64 {
        self.tubular_radius
    }

    pub fn constraint(&self, k: usize, y: &[f64]) -> f64 {
        match self.kind {
            TargetKind::Sphere => {
                debug_assert_eq!(k, 0);
                (y.iter().map(|c| c * c).sum::<f64>() - 1.0) / 2.0
            }
            TargetKind::CliffordTorus => {
                let o = 2 * k;
                (y[o] * y[o] + y[o + 1] * y[o + 1] - 0.5) / 2.0
            }
            TargetKind::Euclidean => unreachable!("no constraints on Euclidean target"),
        }
    }

    pub fn constraint_grad(&self, k: usize, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        match self.kind {
            TargetKind::Sphere => out.copy_from_slice(y),
            TargetKind::CliffordTorus => {
                let o = 2 * k;
                out[o] = y[o];
                out[o + 1] = y[o + 1];
            }
            TargetKind::Euclidean => unreachable!(),
        }
    }

    /// ⟨Hess Φ_k(y) a, b⟩; the built-in constraints have constant Hessians.
    pub fn constraint_hess_bilinear(&self, k: usize, _y: &[f64], a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            TargetKind::Sphere => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            TargetKind::CliffordTorus => {
                let o = 2 * k;
                a[o] * b[o] + a[o + 1] * b[o + 1]
            }
            TargetKind::Euclidean => unreachable!(),
        }
    }

    /// max_k |Φ_k(y)|; zero constraints ⇒ zero violation.
    pub fn constraint_violation(&self, y: &[f64]) -> f64 {
        (0..self.codim)
            .map(|k| self.constraint(k, y).abs())
            .fold(0.0, f64::max)
    }

    /// Closest-point projection onto N.  Fails outside the tubular
    /// neighbourhood (e.g. at the sphere's centre).
    pub fn project(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        match self.kind {
            TargetKind::Sphere => {
                let norm = y.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm < 0.25 {
                    return Err(PflowError::OffManifold {
                        violation: (norm - 1.0).abs(),
                        tol: 0.75,
                    });
                }
                for (o, c) in out.iter_mut().zip(y) {
                    *o = c / norm;
                }
            }
            TargetKind::CliffordTorus => {
                let radius = 0.5f64.sqrt();
                for blk in 0..2 {
                    let o = 2 * blk;
                    let norm = (y[o] * y[o] + y[o + 1] * y[o + 1]).sqrt();
                    if norm < 0.25 * radius {
                        return Err(PflowError::OffManifold {
                            violation: (norm - radius).abs(),
                            tol: 0.75 * radius,
                        });
                    }
                    out[o] = y[o] * radius / norm;
                    out[o + 1] = y[o + 1] * radius / norm;
                }
            }
            TargetKind::Euclidean => out.copy_from_slice(y),
        }
        Ok(())
    }

    /// Orthonormal tangent frame at y ∈ N, built deterministically by
    /// Gram–Schmidt of the ambient basis against the constraint normals.
    pub fn tangent_frame(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let l = self.ambient_dim;
        let mut normals: Vec<Vec<f64>> = Vec::with_capacity(self.codim);
        let mut buf = vec![0.0; l];
        for k in 0..self.codim {
            self.constraint_grad(k, y, &mut buf);
            let n = buf.iter().map(|c| c * c).sum::<f64>().sqrt();
            normals.push(buf.iter().map(|c| c / n).collect());
        }
        let mut frame: Vec<Vec<f64>> = Vec::with_capacity(l - self.codim);
        let mut used = vec![false; l];
        while frame.len() < l - self.codim {
            // pick the ambient basis vector with the largest residual
            let mut best = (0usize, -1.0f64, vec![0.0; l]);
            for i in 0..l {
                if used[i] {
                    continue;
                }
                let mut v = vec![0.0; l];
                v[i] = 1.0;
                for n in normals.iter().chain(frame.iter()) {
                    let dot: f64 = v.iter().zip(n).map(|(a, b)| a * b).sum();
                    for (c, nc) in v.iter_mut().zip(n) {
                        *c -= dot * nc;
                    }
                }
                let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm > best.1 {
                    best = (i, norm, v);
                }
            }
            used[best.0] = true;
            let norm = best.1;
            frame.push(best.2.iter().map(|c| c / norm).collect());
        }
        frame
    }

    /// Second-fundamental-form contraction g^{ij} A(y)(∂_i u, ∂_j u).
    ///
    /// `partials[a]` is the ambient vector ∂_a u at the node, `ginv` the packed
    /// inverse metric there.  Rejects points farther than `SFF_DRIFT_TOL` from N.
    pub fn sff_contract(
        &self,
        y: &[f64],
        partials: &[&[f64]],
        ginv: &[f64; 6],
        m: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let violation = self.constraint_violation(y);
        if violation > SFF_DRIFT_TOL {
            return Err(PflowError::OffManifold {
                violation,
                tol: SFF_DRIFT_TOL,
            });
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        self.sff_contract_unchecked(y, partials, ginv, m, out);
        Ok(())
    }

    #[inline]
    pub(crate) fn sff_contract_unchecked(
        &self,
        y: &[f64],
        partials: &[&[f64]],
        ginv: &[f64; 6],
        m: usize,
        out: &mut [f64],
    ) {
        match self.kind {
            TargetKind::Euclidean => {}
            TargetKind::Sphere => {
                // contraction = (g^{ab} ⟨∂_a u, ∂_b u⟩ / |y|²) y
                let mut num = 0.0;
                for a in 0..m {
                    for b in 0..m {
                        let gab = ginv[sym_index(a, b)];
                        if gab == 0.0 {
                            continue;
                        }
                        let mut dot = 0.0;
                        for c in 0..self.ambient_dim {
                            dot += partials[a][c] * partials[b][c];
                        }
                        num += gab * dot;
                    }
                }
                let ysq: f64 = y.iter().map(|c| c * c).sum();
                let coeff = num / ysq;
                for (o, c) in out.iter_mut().zip(y) {
                    *o += coeff * c;
                }
            }
            TargetKind::CliffordTorus => {
                for k in 0..2 {
                    let o = 2 * k;
                    let mut num = 0.0;
                    for a in 0..m {
                        for b in 0..m {
                            let gab = ginv[sym_index(a, b)];
                            if gab == 0.0 {
                                continue;
                            }
                            num += gab
                                * (partials[a][o] * partials[b][o]
                                    + partials[a][o + 1] * partials[b][o + 1]);
                        }
                    }
                    let block_sq = y[o] * y[o] + y[o + 1] * y[o + 1];
                    let coeff = num / block_sq;
                    out[o] += coeff * y[o];
                    out[o + 1] += coeff * y[o + 1];
                }
            }
        }
    }
}

/// Admissibility threshold δ_p = 3(p−2)²(√m + 2p + 6)² + 3.
pub fn delta_p(m: usize, p: f64) -> Result<f64> {
    if p < 2.0 {
        return Err(PflowError::InvalidConfig(format!("p = {p} below 2")));
    }
    if m < 1 {
        return Err(PflowError::InvalidConfig("m must be >= 1".into()));
    }
    let s = (m as f64).sqrt() + 2.0 * p + 6.0;
    Ok(3.0 * (p - 2.0) * (p - 2.0) * s * s + 3.0)
}

/// Regularity constant of the spherical cap B(y, r) certified through the
/// intermediate radius r₁: δ = (cos r − cos r₁) cos r₁ / sin² r.
pub fn cap_delta(r: f64, r1: f64) -> Result<f64> {
    if !(0.0 < r && r < r1 && r1 < FRAC_PI_2) {
        return Err(PflowError::InvalidCertificate(format!(
            "need 0 < r < r1 < pi/2, got r={r}, r1={r1}"
        )));
    }
    Ok((r.cos() - r1.cos()) * r1.cos() / (r.sin() * r.sin()))
}

/// Best certificate for the cap of radius r: maximising over r₁ gives
/// δ* = cot²(r)/4 at cos r₁* = cos(r)/2.
pub fn best_cap_delta(r: f64) -> Result<(f64, f64)> {
    if !(0.0 < r && r < FRAC_PI_2) {
        return Err(PflowError::InvalidCertificate(format!(
            "cap radius {r} outside (0, pi/2)"
        )));
    }
    let c = r.cos();
    let delta = (c / r.sin()).powi(2) / 4.0;
    let r1 = (c / 2.0).acos();
    Ok((delta, r1))
}

/// Largest cap radius whose best certificate clears δ_p; admissible caps
/// satisfy r < r_max strictly.  Solves cot²(r)/4 = δ_p.
pub fn max_admissible_cap_radius(p: f64, m: usize) -> Result<f64> {
    let dp = delta_p(m, p)?;
    Ok((1.0 / (2.0 * dp.sqrt())).atan())
}

type ScalarEval = Arc<dyn Fn(&EmbeddedTarget, &[f64]) -> f64 + Send + Sync>;
type VectorEval = Arc<dyn Fn(&EmbeddedTarget, &[f64]) -> Vec<f64> + Send + Sync>;
type BilinearEval = Arc<dyn Fn(&EmbeddedTarget, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// User-supplied certificate evaluators; Hessians are intrinsic bilinear
/// forms evaluated on tangent vectors.
#[derive(Clone)]
pub struct CustomCert {
    pub f: ScalarEval,
    pub grad_f: VectorEval,
    pub hess_f: BilinearEval,
    pub fstar: ScalarEval,
    pub hess_fstar: BilinearEval,
}

#[derive(Clone)]
enum CertKind {
    /// f = cos ρ − cos r₁, f* = ρ² on the geodesic cap B(center, r) of the
    /// unit sphere; Hessians in closed form (∇² cos ρ = −cos ρ · h).
    SphericalCap { center: Vec<f64>, r: f64, r1: f64 },
    /// f = f* = 1 with a > 1: certifies all of a nonpositively-curved target.
    Trivial,
    Custom(CustomCert),
}

/// The certification data (f, f*, a, C, δ) of a generalised regular ball.
#[derive(Clone)]
pub struct RegularBallCert {
    kind: CertKind,
    /// Claimed regularity constant.
    pub delta: f64,
    /// Sublevel bound: Ω = { f* < a }.
    pub a: f64,
    /// Pinching constant with C⁻¹ ≤ f ≤ C on Ω.
    pub pinching: f64,
}

impl RegularBallCert {
    /// Cap certificate on the unit sphere.  Defaults: r₁ maximising δ, and
    /// δ equal to the resulting cap_delta.
    pub fn spherical_cap(
        target: &EmbeddedTarget,
        center: Vec<f64>,
        r: f64,
        r1: Option<f64>,
        delta: Option<f64>,
    ) -> Result<Self> {
        if target.kind() != TargetKind::Sphere {
            return Err(PflowError::InvalidCertificate(
                "cap certificates require a sphere target".into(),
            ));
        }
        if center.len() != target.ambient_dim() {
            return Err(PflowError::InvalidCertificate("center dimension mismatch".into()));
        }
        let norm: f64 = center.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(PflowError::InvalidCertificate("center not on the sphere".into()));
        }
        let r1 = match r1 {
            Some(v) => {
                cap_delta(r, v)?;
                v
            }
            None => best_cap_delta(r)?.1,
        };
        let delta = match delta {
            Some(d) => d,
            None => cap_delta(r, r1)?,
        };
        // f ranges over (cos r − cos r1, 1 − cos r1] on the open cap
        let fmin = r.cos() - r1.cos();
        let fmax = 1.0 - r1.cos();
        let pinching = (1.0 / fmin).max(fmax).max(1.0);
        Ok(RegularBallCert {
            kind: CertKind::SphericalCap { center, r, r1 },
            delta,
            a: r * r,
            pinching,
        })
    }

    /// f = f* = 1 certificate (any δ) for targets with K₂ = 0.
    pub fn trivial(a: f64) -> Result<Self> {
        if !(a > 1.0) {
            return Err(PflowError::InvalidCertificate(
                "trivial certificate needs a > 1".into(),
            ));
        }
        Ok(RegularBallCert {
            kind: CertKind::Trivial,
            delta: 1.0,
            a,
            pinching: 1.0,
        })
    }

    pub fn custom(custom: CustomCert, delta: f64, a: f64, pinching: f64) -> Self {
        RegularBallCert {
            kind: CertKind::Custom(custom),
            delta,
            a,
            pinching,
        }
    }

    /// Override the claimed δ (used when probing the admissibility boundary).
    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    /// For certificates with constant f and f*, their values (f, f*); lets
    /// per-node monitor loops collapse to a single evaluation.
    pub fn constant_values(&self) -> Option<(f64, f64)> {
        match &self.kind {
            CertKind::Trivial => Some((1.0, 1.0)),
            _ => None,
        }
    }

    fn projected<'a>(&self, target: &EmbeddedTarget, y: &'a [f64], buf: &'a mut Vec<f64>) -> &'a [f64] {
        buf.resize(y.len(), 0.0);
        match target.project(y, buf) {
            Ok(()) => &buf[..],
            Err(_) => y,
        }
    }

    /// cos ρ at the projected point, for cap certificates.
    fn cos_rho(center: &[f64], y: &[f64]) -> f64 {
        center
            .iter()
            .zip(y)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .clamp(-1.0, 1.0)
    }

    pub fn f(&self, target: &EmbeddedTarget, y: &[f64]) -> f64 {
        let mut buf = Vec::new();
        let y = self.projected(target, y, &mut buf);
        match &self.kind {
            CertKind::SphericalCap { center, r1, .. } => Self::cos_rho(center, y) - r1.cos(),
            CertKind::Trivial => 1.0,
            CertKind::Custom(c) => (c.f)(target, y),
        }
    }

    /// Intrinsic gradient ∇f as an ambient tangent vector.
    pub fn grad_f(&self, target: &EmbeddedTarget, y: &[f64]) -> Vec<f64> {
        let mut buf = Vec::new();
        let y = self.projected(target, y, &mut buf);
        match &self.kind {
            CertKind::SphericalCap { center, .. } => {
                let cr = Self::cos_rho(center, y);
                center
                    .iter()
                    .zip(y)
                    .map(|(c, yc)| c - cr * yc)
                    .collect()
            }
            CertKind::Trivial => vec![0.0; y.len()],
            CertKind::Custom(c) => (c.grad_f)(target, y),
        }
    }

    pub fn grad_f_norm_sq(&self, target: &EmbeddedTarget, y: &[f64]) -> f64 {
        self.grad_f(target, y).iter().map(|c| c * c).sum()
    }

    /// Intrinsic Hessian ∇²f(y)(a, b) on tangent vectors a, b.
    pub fn hess_f_bilinear(&self, target: &EmbeddedTarget, y: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let mut buf = Vec::new();
        let y = self.projected(target, y, &mut buf);
        match &self.kind {
            CertKind::SphericalCap { center, .. } => {
                let cr = Self::cos_rho(center, y);
                let dot: f64 = a.iter().zip(b).map(|(x, z)| x * z).sum();
                -cr * dot
            }
            CertKind::Trivial => 0.0,
            CertKind::Custom(c) => (c.hess_f)(target, y, a, b),
        }
    }

    pub fn fstar(&self, target: &EmbeddedTarget, y: &[f64]) -> f64 {
        let mut buf = Vec::new();
        let y = self.projected(target, y, &mut buf);
        match &self.kind {
            CertKind::SphericalCap { center, .. } => {
                let rho = Self::cos_rho(center, y).acos();
                rho * rho
            }
            CertKind::Trivial => 1.0,
            CertKind::Custom(c) => (c.fstar)(target, y),
        }
    }

    /// Intrinsic Hessian of f*; for ρ² on the sphere this is
    /// 2 dρ⊗dρ + 2 ρ cot ρ (h − dρ⊗dρ).
    pub fn hess_fstar_bilinear(
        &self,
        target: &EmbeddedTarget,
        y: &[f64],
        a: &[f64],
        b: &[f64],
    ) -> f64 {
        let mut buf = Vec::new();
        let y = self.projected(target, y, &mut buf);
        match &self.kind {
            CertKind::SphericalCap { center, .. } => {
                let cr = Self::cos_rho(center, y);
                let rho = cr.acos();
                let sin_rho = (1.0 - cr * cr).max(0.0).sqrt();
                let dot: f64 = a.iter().zip(b).map(|(x, z)| x * z).sum();
                if sin_rho < 1e-8 {
                    // limit 2 h at the cap centre
                    return 2.0 * dot;
                }
                // ∇ρ = (cos ρ · y − center) / sin ρ as a tangent vector
                let da: f64 = a
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * (cr * y[i] - center[i]))
                    .sum::<f64>()
                    / sin_rho;
                let db: f64 = b
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * (cr * y[i] - center[i]))
                    .sum::<f64>()
                    / sin_rho;
                let t = rho * cr / sin_rho;
                2.0 * da * db + 2.0 * t * (dot - da * db)
            }
            CertKind::Trivial => 0.0,
            CertKind::Custom(c) => (c.hess_fstar)(target, y, a, b),
        }
    }

    /// Whether y (projected to N) lies in Ω = { f* < a }.
    pub fn contains(&self, target: &EmbeddedTarget, y: &[f64]) -> bool {
        self.fstar(target, y) < self.a
    }

    /// Default sample set: tensor grid in intrinsic polar coordinates with
    /// `n_per_dim` points per dimension (caps on S¹/S²), or an angle grid for
    /// the trivial certificate on the Clifford torus.
    pub fn default_samples(&self, target: &EmbeddedTarget, n_per_dim: usize) -> Result<Vec<Vec<f64>>> {
        match (&self.kind, target.kind()) {
            (CertKind::SphericalCap { center, r, .. }, TargetKind::Sphere) => {
                cap_samples(target, center, *r, n_per_dim)
            }
            (_, TargetKind::CliffordTorus) => {
                let radius = 0.5f64.sqrt();
                let mut out = Vec::with_capacity(n_per_dim * n_per_dim);
                for i in 0..n_per_dim {
                    let alpha = 2.0 * PI * i as f64 / n_per_dim as f64;
                    for j in 0..n_per_dim {
                        let beta = 2.0 * PI * j as f64 / n_per_dim as f64;
                        out.push(vec![
                            radius * alpha.cos(),
                            radius * alpha.sin(),
                            radius * beta.cos(),
                            radius * beta.sin(),
                        ]);
                    }
                }
                Ok(out)
            }
            (_, TargetKind::Sphere) => cap_samples(
                target,
                &unit_axis(target.ambient_dim(), target.ambient_dim() - 1),
                FRAC_PI_2 * 0.999,
                n_per_dim,
            ),
            (_, TargetKind::Euclidean) => {
                // unconstrained control case: probe a small lattice
                let l = target.ambient_dim();
                Ok((0..n_per_dim)
                    .map(|i| {
                        let mut y = vec![0.0; l];
                        y[0] = -1.0 + 2.0 * i as f64 / (n_per_dim.max(2) - 1) as f64;
                        y
                    })
                    .collect())
            }
        }
    }
}

fn unit_axis(l: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; l];
    v[axis] = 1.0;
    v
}

/// Polar tensor grid on the geodesic cap B(center, r) ⊂ S^n (n ≤ 2):
/// y = exp_center(ρ · direction), sampled strictly inside the cap.
fn cap_samples(
    target: &EmbeddedTarget,
    center: &[f64],
    r: f64,
    n_per_dim: usize,
) -> Result<Vec<Vec<f64>>> {
    let l = target.ambient_dim();
    let n = l - 1;
    if n > 2 {
        return Err(PflowError::InvalidCertificate(
            "default cap samples implemented for S^1 and S^2; supply samples explicitly".into(),
        ));
    }
    // orthonormal tangent basis at the centre
    let frame = target.tangent_frame(center);
    let mut out = Vec::new();
    let radial = n_per_dim;
    let angular = if n == 2 { n_per_dim } else { 1 };
    for i in 0..radial {
        let rho = r * (i as f64 + 0.5) / radial as f64;
        for j in 0..angular {
            let theta = 2.0 * PI * j as f64 / angular as f64;
            let mut dir = vec![0.0; l];
            for c in 0..l {
                dir[c] = frame[0][c] * theta.cos();
                if n == 2 {
                    dir[c] += frame[1][c] * theta.sin();
                }
            }
            let y: Vec<f64> = (0..l)
                .map(|c| rho.cos() * center[c] + rho.sin() * dir[c])
                .collect();
            out.push(y);
        }
    }
    Ok(out)
}

/// Outcome of a sampled certificate check.
#[derive(Debug, Clone)]
pub struct CertReport {
    pub pass: bool,
    pub samples: usize,
    pub min_eigenvalue: f64,
    pub failures: usize,
    pub pinching_ok: bool,
}

fn min_eigenvalue_sym(mat: &[Vec<f64>]) -> Result<f64> {
    let n = mat.len();
    for row in mat {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(PflowError::NonFinite("certificate Hessian".into()));
        }
    }
    if n == 1 {
        return Ok(mat[0][0]);
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| mat[i][j]);
    let eig = m.symmetric_eigenvalues();
    Ok(eig.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Check condition (c1): at every sample the bilinear form
/// −∇²f − K₂ f h − δ (|∇f|²/f) h must be positive semidefinite (within
/// EIG_TOL) on an orthonormal tangent frame, with the pinching C⁻¹ ≤ f ≤ C.
pub fn verify_regular_set(
    cert: &RegularBallCert,
    target: &EmbeddedTarget,
    samples: &[Vec<f64>],
) -> Result<CertReport> {
    let k2 = target.sect_upper_bound();
    let mut min_eig = f64::INFINITY;
    let mut failures = 0usize;
    let mut pinching_ok = true;
    for (si, y) in samples.iter().enumerate() {
        if !cert.contains(target, y) {
            return Err(PflowError::OutsideDomain(format!(
                "sample {si}: f* = {} >= a = {}",
                cert.fstar(target, y),
                cert.a
            )));
        }
        let fv = cert.f(target, y);
        if !(fv >= 1.0 / cert.pinching - EIG_TOL && fv <= cert.pinching + EIG_TOL) {
            pinching_ok = false;
        }
        let gn = cert.grad_f_norm_sq(target, y);
        let frame = target.tangent_frame(y);
        let dim = frame.len();
        let shift = k2 * fv + cert.delta * gn / fv;
        let mut mat = vec![vec![0.0; dim]; dim];
        for a in 0..dim {
            for b in a..dim {
                let hess = cert.hess_f_bilinear(target, y, &frame[a], &frame[b]);
                let metric = if a == b { 1.0 } else { 0.0 };
                let v = -hess - shift * metric;
                mat[a][b] = v;
                mat[b][a] = v;
            }
        }
        let eig = min_eigenvalue_sym(&mat)?;
        min_eig = min_eig.min(eig);
        if eig < -EIG_TOL {
            failures += 1;
        }
    }
    Ok(CertReport {
        pass: failures == 0 && pinching_ok,
        samples: samples.len(),
        min_eigenvalue: min_eig,
        failures,
        pinching_ok,
    })
}

/// Check condition (c2): f* is convex on Ω (intrinsic Hessian PSD within
/// EIG_TOL) and every sample satisfies f* < a.
pub fn verify_sublevel(
    cert: &RegularBallCert,
    target: &EmbeddedTarget,
    samples: &[Vec<f64>],
) -> Result<CertReport> {
    let mut min_eig = f64::INFINITY;
    let mut failures = 0usize;
    for (si, y) in samples.iter().enumerate() {
        if !cert.contains(target, y) {
            return Err(PflowError::OutsideDomain(format!(
                "sample {si}: f* = {} >= a = {}",
                cert.fstar(target, y),
                cert.a
            )));
        }
        let frame = target.tangent_frame(y);
        let dim = frame.len();
        let mut mat = vec![vec![0.0; dim]; dim];
        for a in 0..dim {
            for b in a..dim {
                let v = cert.hess_fstar_bilinear(target, y, &frame[a], &frame[b]);
                mat[a][b] = v;
                mat[b][a] = v;
            }
        }
        let eig = min_eigenvalue_sym(&mat)?;
        min_eig = min_eig.min(eig);
        if eig < -EIG_TOL {
            failures += 1;
        }
    }
    Ok(CertReport {
        pass: failures == 0,
        samples: samples.len(),
        min_eigenvalue: min_eig,
        failures,
        pinching_ok: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn sphere_projection_and_constraints() {
        let s = EmbeddedTarget::make_sphere(2).unwrap();
        let mut out = vec![0.0; 3];
        s.project(&[2.0, 0.0, 0.0], &mut out).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0]);
        assert_eq!(s.constraint(0, &[1.0, 0.0, 0.0]), 0.0);
        assert!(s.constraint_violation(&out) <= PROJECT_TOL);
        assert!(s.project(&[0.0, 0.0, 0.0], &mut out).is_err());
    }

    #[test]
    fn clifford_constraints_orthogonal() {
        let t = EmbeddedTarget::make_clifford_torus();
        let r = 0.5f64.sqrt();
        let y = [r, 0.0, r, 0.0];
        assert!(t.constraint(0, &y).abs() < 1e-15);
        assert!(t.constraint(1, &y).abs() < 1e-15);
        let mut g0 = vec![0.0; 4];
        let mut g1 = vec![0.0; 4];
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            let a = rng.uniform(0.0, 2.0 * PI);
            let b = rng.uniform(0.0, 2.0 * PI);
            let y = [r * a.cos(), r * a.sin(), r * b.cos(), r * b.sin()];
            t.constraint_grad(0, &y, &mut g0);
            t.constraint_grad(1, &y, &mut g1);
            let dot: f64 = g0.iter().zip(&g1).map(|(x, z)| x * z).sum();
            assert!(dot.abs() < 1e-10);
        }
    }

    #[test]
    fn sphere_sff_is_gradsq_times_y() {
        let s = EmbeddedTarget::make_sphere(2).unwrap();
        let ginv = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let y = [0.0, 0.0, 1.0];
        let x = [1.0, 0.0, 0.0];
        let mut out = vec![0.0; 3];
        s.sff_contract(&y, &[&x], &ginv, 1, &mut out).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 1.0]);

        let y2 = [1.0, 0.0, 0.0];
        let x2 = [0.0, 1.0, 0.0];
        s.sff_contract(&y2, &[&x2], &ginv, 1, &mut out).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0]);

        // zero partials -> zero vector
        let z = [0.0, 0.0, 0.0];
        s.sff_contract(&y, &[&z], &ginv, 1, &mut out).unwrap();
        assert!(out.iter().all(|c| *c == 0.0));

        // far off the manifold -> rejected
        assert!(s.sff_contract(&[1.1, 0.0, 0.0], &[&x], &ginv, 1, &mut out).is_err());
    }

    #[test]
    fn clifford_sff_from_constraint_formula() {
        let t = EmbeddedTarget::make_clifford_torus();
        let ginv = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let r = 0.5f64.sqrt();
        let y = [r, 0.0, r, 0.0];
        let mut out = vec![0.0; 4];

        // wrap tangent at this point: |X|^2 = 1/2 gives the block direction itself
        let xw = [0.0, r, 0.0, 0.0];
        t.sff_contract(&y, &[&xw], &ginv, 1, &mut out).unwrap();
        assert!((out[0] - r).abs() < 1e-14);
        assert!(out[1].abs() < 1e-15 && out[2].abs() < 1e-15 && out[3].abs() < 1e-15);

        // unit X doubles the coefficient: ⟨Hess X, X⟩ / |∇Φ|² = 1 / (1/2) = 2
        let x = [0.0, 1.0, 0.0, 0.0];
        t.sff_contract(&y, &[&x], &ginv, 1, &mut out).unwrap();
        assert!((out[0] - 2.0 * r).abs() < 1e-14);
    }

    #[test]
    fn sff_output_normal_to_tangents() {
        let mut rng = SeededRng::new(11);
        let targets = vec![
            EmbeddedTarget::make_sphere(2).unwrap(),
            EmbeddedTarget::make_clifford_torus(),
        ];
        let ginv = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        for t in &targets {
            let l = t.ambient_dim();
            for _ in 0..20 {
                let raw: Vec<f64> = (0..l).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let mut y = vec![0.0; l];
                if t.project(&raw, &mut y).is_err() {
                    continue;
                }
                let frame = t.tangent_frame(&y);
                let x: Vec<f64> = (0..l).map(|_| rng.uniform(-1.0, 1.0)).collect();
                // make x tangent
                let mut xt = x.clone();
                for n in 0..t.codim() {
                    let mut g = vec![0.0; l];
                    t.constraint_grad(n, &y, &mut g);
                    let gn: f64 = g.iter().map(|c| c * c).sum();
                    let dot: f64 = xt.iter().zip(&g).map(|(a, b)| a * b).sum();
                    for (c, gc) in xt.iter_mut().zip(&g) {
                        *c -= dot / gn * gc;
                    }
                }
                let mut out = vec![0.0; l];
                t.sff_contract(&y, &[&xt], &ginv, 1, &mut out).unwrap();
                for e in &frame {
                    let dot: f64 = out.iter().zip(e).map(|(a, b)| a * b).sum();
                    assert!(dot.abs() < 1e-12, "sff not normal: {dot}");
                }
            }
        }
    }

    #[test]
    fn threshold_values() {
        assert_eq!(delta_p(2, 2.0).unwrap(), 3.0);
        assert_eq!(delta_p(1, 2.0).unwrap(), 3.0);
        assert_eq!(delta_p(3, 2.0).unwrap(), 3.0);
        assert_eq!(delta_p(4, 3.0).unwrap(), 591.0);
        let d23 = delta_p(2, 3.0).unwrap();
        let expect = 3.0 * (2.0f64.sqrt() + 12.0).powi(2) + 3.0;
        assert!((d23 - expect).abs() < 1e-12);
        assert!((d23 - 542.823).abs() < 1e-3);
        assert!(delta_p(2, 1.5).is_err());
        // strictly increasing in p beyond 2
        let mut prev = delta_p(2, 2.0).unwrap();
        for i in 1..=20 {
            let p = 2.0 + 0.2 * i as f64;
            let d = delta_p(2, p).unwrap();
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn cap_delta_values() {
        let d = cap_delta(PI / 4.0, PI / 3.0).unwrap();
        assert!((d - 0.2071068).abs() < 1e-6);
        let d2 = cap_delta(0.1, 0.2).unwrap();
        assert!((d2 - 1.46887).abs() < 1e-5);
        // r1 -> r+ : numerator vanishes
        let d3 = cap_delta(0.3, 0.3 + 1e-9).unwrap();
        assert!(d3 < 1e-7);
        assert!(cap_delta(0.3, 0.2).is_err());
        assert!(cap_delta(0.3, 1.6).is_err());
    }

    #[test]
    fn best_cap_matches_grid_search() {
        // closed form vs brute-force over r1
        let oracle = |r: f64| -> (f64, f64) {
            let n = 1_000_000;
            let mut best = (f64::NEG_INFINITY, r);
            for i in 1..n {
                let r1 = r + (FRAC_PI_2 - r) * i as f64 / n as f64;
                if r1 >= FRAC_PI_2 {
                    break;
                }
                let d = (r.cos() - r1.cos()) * r1.cos() / (r.sin() * r.sin());
                if d > best.0 {
                    best = (d, r1);
                }
            }
            best
        };
        let (d, r1) = best_cap_delta(PI / 4.0).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
        assert!((r1 - (2.0f64.sqrt() / 4.0).acos()).abs() < 1e-15);
        assert!((r1 - 1.2094).abs() < 1e-4);

        let mut rng = SeededRng::new(1234);
        for _ in 0..100 {
            let r = rng.uniform(0.01, FRAC_PI_2 - 0.01);
            let (d_closed, _) = best_cap_delta(r).unwrap();
            let (d_grid, _) = oracle(r);
            assert!(
                (d_closed - d_grid).abs() <= 1e-8,
                "r={r}: closed {d_closed} vs grid {d_grid}"
            );
        }
        // r -> pi/2: delta* -> 0
        assert!(best_cap_delta(FRAC_PI_2 - 1e-6).unwrap().0 < 1e-11);
    }

    #[test]
    fn admissible_radius_against_bisection() {
        let bisect = |p: f64, m: usize| -> f64 {
            let dp = delta_p(m, p).unwrap();
            let g = |r: f64| (r.cos() / r.sin()).powi(2) / 4.0 - dp;
            let (mut lo, mut hi) = (1e-8, FRAC_PI_2 - 1e-8);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let r2 = max_admissible_cap_radius(2.0, 2).unwrap();
        assert!((r2 - bisect(2.0, 2)).abs() < 1e-10);
        assert!((r2 - 0.281).abs() < 1e-3);
        let r3 = max_admissible_cap_radius(3.0, 2).unwrap();
        assert!((r3 - bisect(3.0, 2)).abs() < 1e-10);
        assert!((r3 - 0.02146).abs() < 1e-5);
        // admissibility is strict on either side
        let dp = delta_p(2, 2.0).unwrap();
        assert!(best_cap_delta(r2 - 1e-3).unwrap().0 > dp);
        assert!(best_cap_delta(r2 + 1e-3).unwrap().0 < dp);
        // r_max decreasing in p
        let mut prev = max_admissible_cap_radius(2.0, 2).unwrap();
        for i in 1..=10 {
            let r = max_admissible_cap_radius(2.0 + 0.3 * i as f64, 2).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    fn north() -> Vec<f64> {
        vec![0.0, 0.0, 1.0]
    }

    #[test]
    fn cap_certificate_passes_below_best_delta() {
        let s = EmbeddedTarget::make_sphere(2).unwrap();
        let r = 0.2;
        let (dstar, _) = best_cap_delta(r).unwrap();
        let cert =
            RegularBallCert::spherical_cap(&s, north(), r, None, Some(dstar - 1e-6)).unwrap();
        let samples = cert.default_samples(&s, 64).unwrap();
        let rep = verify_regular_set(&cert, &s, &samples).unwrap();
        assert!(rep.pass, "min eig {}", rep.min_eigenvalue);
        let rep2 = verify_sublevel(&cert, &s, &samples).unwrap();
        assert!(rep2.pass);
    }

    #[test]
    fn cap_certificate_fails_above_best_delta() {
        let s = EmbeddedTarget::make_sphere(2).unwrap();
        let r = 0.2;
        let (dstar, _) = best_cap_delta(r).unwrap();
        let cert =
            RegularBallCert::spherical_cap(&s, north(), r, None, Some(dstar + 0.1)).unwrap();
        let samples = cert.default_samples(&s, 64).unwrap();
        let rep = verify_regular_set(&cert, &s, &samples).unwrap();
        assert!(!rep.pass);
        assert!(rep.min_eigenvalue < -EIG_TOL);
    }

    #[test]
    fn trivial_certificate_passes_iff_flat() {
        let torus = EmbeddedTarget::make_clifford_torus();
        let cert = RegularBallCert::trivial(2.0).unwrap();
        let samples = cert.default_samples(&torus, 16).unwrap();
        let rep = verify_regular_set(&cert, &torus, &samples).unwrap();
        assert!(rep.pass);
        assert!(verify_sublevel(&cert, &torus, &samples).unwrap().pass);

        // on the sphere (K2 = 1) the same certificate fails
        let s = EmbeddedTarget::make_sphere(2).unwrap();
        let samples = cert.default_samples(&s, 8).unwrap();
        let rep = verify_regular_set(&cert, &s, &samples).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn concave_sublevel_function_fails() {
        let s = EmbeddedTarget::make_sphere(2).unwrap();
        let base = RegularBallCert::spherical_cap(&s, north(), 0.3, None, None).unwrap();
        let inner = Arc::new(base.clone());
        let b2 = inner.clone();
        let b3 = inner.clone();
        let b4 = inner.clone();
        let b5 = inner.clone();
        let neg = RegularBallCert::custom(
            CustomCert {
                f: Arc::new(move |t, y| inner.f(t, y)),
                grad_f: Arc::new(move |t, y| b2.grad_f(t, y)),
                hess_f: Arc::new(move |t, y, a, b| b3.hess_f_bilinear(t, y, a, b)),
                fstar: Arc::new(move |t, y| -b4.fstar(t, y)),
                hess_fstar: Arc::new(move |t, y, a, b| -b5.hess_fstar_bilinear(t, y, a, b)),
            },
            base.delta,
            base.a,
            base.pinching,
        );
        let samples = base.default_samples(&s, 16).unwrap();
        let rep = verify_sublevel(&neg, &s, &samples).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn sample_outside_sublevel_is_an_error() {
        let s = EmbeddedTarget::make_sphere(2).unwrap();
        let cert = RegularBallCert::spherical_cap(&s, north(), 0.2, None, None).unwrap();
        let far = vec![vec![1.0, 0.0, 0.0]]; // rho = pi/2 > r
        assert!(verify_regular_set(&cert, &s, &far).is_err());
    }

    #[test]
    fn tangent_frames_are_orthonormal() {
        let mut rng = SeededRng::new(99);
        for t in [
            EmbeddedTarget::make_sphere(2).unwrap(),
            EmbeddedTarget::make_sphere(3).unwrap(),
            EmbeddedTarget::make_clifford_torus(),
        ] {
            let l = t.ambient_dim();
            for _ in 0..10 {
                let raw: Vec<f64> = (0..l).map(|_| rng.uniform(-1.0, 1.0) + 0.1).collect();
                let mut y = vec![0.0; l];
                if t.project(&raw, &mut y).is_err() {
                    continue;
                }
                let frame = t.tangent_frame(&y);
                assert_eq!(frame.len(), l - t.codim());
                for (i, a) in frame.iter().enumerate() {
                    for (j, b) in frame.iter().enumerate() {
                        let dot: f64 = a.iter().zip(b).map(|(x, z)| x * z).sum();
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - expect).abs() < 1e-12);
                    }
                    for k in 0..t.codim() {
                        let mut g = vec![0.0; l];
                        t.constraint_grad(k, &y, &mut g);
                        let dot: f64 = a.iter().zip(&g).map(|(x, z)| x * z).sum();
                        assert!(dot.abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cap_delta_consistency_with_certificate() {
        // at claimed delta = cap_delta(r, r1*) the certificate is boundary-tight:
        // passing with the optimal delta, failing with any meaningful excess
        for r in [0.1, 0.2, 0.5] {
            let s = EmbeddedTarget::make_sphere(2).unwrap();
            let (dstar, r1) = best_cap_delta(r).unwrap();
            assert!((cap_delta(r, r1).unwrap() - dstar).abs() < 1e-14);
            let cert = RegularBallCert::spherical_cap(&s, north(), r, Some(r1), None).unwrap();
            assert!((cert.delta - dstar).abs() < 1e-14);
        }
    }
}
