//! Discrete domain manifolds and the differential operators built on them.
//!
//! Domains are periodic structured grids in up to three dimensions carrying a
//! per-node Riemannian metric g_ij, its inverse and the volume density √|g|.
//! All stencils are centred second-order periodic differences.  The weighted
//! divergence is assembled from node fluxes averaged to cell faces, which is
//! algebraically identical to a centred difference of the node flux; on a
//! periodic grid that operator is the exact negative adjoint of the centred
//! gradient under the quadrature `integrate`, so the discrete
//! integration-by-parts identity
//!
//!   ∫ ⟨div_weighted(w, v), φ⟩  =  −∫ w g^{ij} ⟨v_i, ∂_j φ⟩
//!
//! holds to machine precision for every (w, v, φ).  Energy-dissipation
//! monotonicity of the flow rests on this identity.

use crate::error::{PflowError, Result};

/// Maximum supported spatial dimension.  Unused axes are kept with a single
/// node and unit spacing so every loop runs over a uniform 3-d layout.
pub const MAX_DIM: usize = 3;

/// Packed index for a symmetric 3×3 matrix stored as [g11,g12,g13,g22,g23,g33].
#[inline]
pub fn sym_index(a: usize, b: usize) -> usize {
    const IDX: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    IDX[a][b]
}

/// Grid-indexed scalar values.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { data: vec![0.0; n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        ScalarField { data: vec![c; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Grid-indexed vectors in the ambient space ℝ^L, stored node-major.
#[derive(Debug, Clone)]
pub struct AmbientField {
    pub ambient_dim: usize,
    pub data: Vec<f64>,
}

impl AmbientField {
    pub fn zeros(nodes: usize, ambient_dim: usize) -> Self {
        AmbientField {
            ambient_dim,
            data: vec![0.0; nodes * ambient_dim],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.data.len() / self.ambient_dim
    }

    #[inline]
    pub fn node(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.ambient_dim..(idx + 1) * self.ambient_dim]
    }

    #[inline]
    pub fn node_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.ambient_dim..(idx + 1) * self.ambient_dim]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Fill from a map position → ℝ^L.
    pub fn from_fn(grid: &DomainGrid, ambient_dim: usize, f: impl Fn(&[f64; 3]) -> Vec<f64>) -> Self {
        let mut out = AmbientField::zeros(grid.num_nodes(), ambient_dim);
        for idx in 0..grid.num_nodes() {
            let pos = grid.node_position(idx);
            let v = f(&pos);
            assert_eq!(v.len(), ambient_dim);
            out.node_mut(idx).copy_from_slice(&v);
        }
        out
    }
}

/// One ambient field per coordinate axis: the partials ∂_i u.
#[derive(Debug, Clone)]
pub struct Partials {
    pub per_axis: Vec<AmbientField>,
}

impl Partials {
    pub fn zeros(nodes: usize, ambient_dim: usize) -> Self {
        Partials {
            per_axis: (0..MAX_DIM).map(|_| AmbientField::zeros(nodes, ambient_dim)).collect(),
        }
    }
}

/// Periodic structured grid with per-node metric data.
///
/// `ricci_lower_bound` is the constant K₁ ≥ 0 with Ric ≥ −K₁, supplied as
/// metadata (0 for the flat torus); it is not derived from the metric.
#[derive(Debug, Clone)]
pub struct DomainGrid {
    m: usize,
    sizes: [usize; 3],
    periods: [f64; 3],
    spacings: [f64; 3],
    metric: Vec<[f64; 6]>,
    metric_inv: Vec<[f64; 6]>,
    vol_density: Vec<f64>,
    ricci_lower_bound: f64,
}

impl DomainGrid {
    /// Flat periodic torus of dimension `m` with `n` nodes per axis.
    pub fn build_flat_torus(m: usize, n: usize, period: f64) -> Result<Self> {
        Self::build_flat_torus_anisotropic(m, [n, n, n], [period, period, period])
    }

    /// Flat torus with per-axis node counts and periods (axes beyond `m` are ignored).
    pub fn build_flat_torus_anisotropic(m: usize, n: [usize; 3], period: [f64; 3]) -> Result<Self> {
        Self::with_metric(m, n, period, 0.0, |_| {
            [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]
        })
    }

    /// General periodic grid with a caller-supplied symmetric positive-definite
    /// metric per node (packed [g11,g12,g13,g22,g23,g33] in the position's
    /// coordinates).  Entries on axes ≥ m must form the identity block; the
    /// constructor enforces positive-definiteness and fills inverse / √|g|.
    pub fn with_metric(
        m: usize,
        n: [usize; 3],
        period: [f64; 3],
        ricci_lower_bound: f64,
        metric_fn: impl Fn(&[f64; 3]) -> [f64; 6],
    ) -> Result<Self> {
        if m < 1 || m > MAX_DIM {
            return Err(PflowError::InvalidDomain(format!(
                "dimension m={m} outside 1..=3"
            )));
        }
        if ricci_lower_bound < 0.0 {
            return Err(PflowError::InvalidDomain(
                "ricci_lower_bound K1 must be >= 0".into(),
            ));
        }
        let mut sizes = [1usize; 3];
        let mut periods = [1.0f64; 3];
        let mut spacings = [1.0f64; 3];
        for a in 0..m {
            if n[a] < 4 {
                return Err(PflowError::InvalidDomain(format!(
                    "axis {a}: n={} below stencil width 4",
                    n[a]
                )));
            }
            if !(period[a] > 0.0) {
                return Err(PflowError::InvalidDomain(format!(
                    "axis {a}: period must be positive"
                )));
            }
            sizes[a] = n[a];
            periods[a] = period[a];
            spacings[a] = period[a] / n[a] as f64;
        }
        let nodes = sizes[0] * sizes[1] * sizes[2];
        let mut metric = Vec::with_capacity(nodes);
        let mut metric_inv = Vec::with_capacity(nodes);
        let mut vol_density = Vec::with_capacity(nodes);
        let mut grid = DomainGrid {
            m,
            sizes,
            periods,
            spacings,
            metric: Vec::new(),
            metric_inv: Vec::new(),
            vol_density: Vec::new(),
            ricci_lower_bound,
        };
        for idx in 0..nodes {
            let pos = grid.node_position(idx);
            let g = metric_fn(&pos);
            let (inv, det) = invert_sym3(&g).ok_or_else(|| {
                PflowError::InvalidDomain(format!("metric not invertible at node {idx}"))
            })?;
            if det <= 0.0 || g[0] <= 0.0 {
                return Err(PflowError::InvalidDomain(format!(
                    "metric not positive definite at node {idx}"
                )));
            }
            metric.push(g);
            metric_inv.push(inv);
            vol_density.push(det.sqrt());
        }
        grid.metric = metric;
        grid.metric_inv = metric_inv;
        grid.vol_density = vol_density;
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub fn periods(&self) -> [f64; 3] {
        self.periods
    }

    pub fn spacings(&self) -> [f64; 3] {
        self.spacings
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.m).map(|a| self.spacings[a]).fold(f64::INFINITY, f64::min)
    }

    pub fn ricci_lower_bound(&self) -> f64 {
        self.ricci_lower_bound
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes[0] * self.sizes[1] * self.sizes[2]
    }

    pub fn metric(&self, idx: usize) -> &[f64; 6] {
        &self.metric[idx]
    }

    pub fn metric_inv(&self, idx: usize) -> &[f64; 6] {
        &self.metric_inv[idx]
    }

    pub fn vol_density(&self, idx: usize) -> f64 {
        self.vol_density[idx]
    }

    /// Largest g^{ii} over nodes and axes; enters the CFL bound.
    pub fn max_metric_inv_diag(&self) -> f64 {
        let mut worst = 0.0f64;
        for inv in &self.metric_inv {
            for a in 0..self.m {
                worst = worst.max(inv[sym_index(a, a)]);
            }
        }
        worst
    }

    #[inline]
    pub fn node_index(&self, coords: [usize; 3]) -> usize {
        (coords[0] * self.sizes[1] + coords[1]) * self.sizes[2] + coords[2]
    }

    #[inline]
    pub fn node_coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.sizes[2];
        let rest = idx / self.sizes[2];
        let j = rest % self.sizes[1];
        let i = rest / self.sizes[1];
        [i, j, k]
    }

    pub fn node_position(&self, idx: usize) -> [f64; 3] {
        let c = self.node_coords(idx);
        [
            c[0] as f64 * self.spacings[0],
            c[1] as f64 * self.spacings[1],
            c[2] as f64 * self.spacings[2],
        ]
    }

    /// Index of the node one step along `axis` (periodic), `dir` = ±1.
    #[inline]
    fn neighbor(&self, coords: [usize; 3], axis: usize, dir: isize) -> usize {
        let n = self.sizes[axis];
        let mut c = coords;
        c[axis] = if dir > 0 {
            if c[axis] + 1 == n { 0 } else { c[axis] + 1 }
        } else if c[axis] == 0 {
            n - 1
        } else {
            c[axis] - 1
        };
        self.node_index(c)
    }

    /// Periodic distance between two positions along axis `a`.
    pub fn periodic_delta(&self, a: usize, x: f64, y: f64) -> f64 {
        let p = self.periods[a];
        let mut d = (x - y) % p;
        if d > 0.5 * p {
            d -= p;
        } else if d < -0.5 * p {
            d += p;
        }
        d
    }

    /// Squared periodic Euclidean distance between node `idx` and a point.
    pub fn periodic_dist_sq(&self, idx: usize, x0: &[f64; 3]) -> f64 {
        let pos = self.node_position(idx);
        let mut s = 0.0;
        for a in 0..self.m {
            let d = self.periodic_delta(a, pos[a], x0[a]);
            s += d * d;
        }
        s
    }

    /// Centred second-order periodic partials ∂_i u, one field per axis.
    pub fn gradient(&self, u: &AmbientField) -> Partials {
        let mut out = Partials::zeros(self.num_nodes(), u.ambient_dim);
        self.gradient_into(u, &mut out);
        out
    }

    pub fn gradient_into(&self, u: &AmbientField, out: &mut Partials) {
        let l = u.ambient_dim;
        debug_assert_eq!(u.num_nodes(), self.num_nodes());
        for axis in 0..MAX_DIM {
            let field = &mut out.per_axis[axis];
            if self.sizes[axis] == 1 || axis >= self.m {
                field.data.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let inv2h = 1.0 / (2.0 * self.spacings[axis]);
            for idx in 0..self.num_nodes() {
                let c = self.node_coords(idx);
                let up = self.neighbor(c, axis, 1);
                let dn = self.neighbor(c, axis, -1);
                for comp in 0..l {
                    field.data[idx * l + comp] =
                        (u.data[up * l + comp] - u.data[dn * l + comp]) * inv2h;
                }
            }
        }
    }

    /// |∇u|² = g^{ij} ⟨∂_i u, ∂_j u⟩, from precomputed partials.
    pub fn grad_norm_sq_from(&self, partials: &Partials) -> ScalarField {
        let mut out = ScalarField::zeros(self.num_nodes());
        self.grad_norm_sq_into(partials, &mut out);
        out
    }

    pub fn grad_norm_sq_into(&self, partials: &Partials, out: &mut ScalarField) {
        let l = partials.per_axis[0].ambient_dim;
        for idx in 0..self.num_nodes() {
            let inv = &self.metric_inv[idx];
            let mut s = 0.0;
            for a in 0..self.m {
                let da = &partials.per_axis[a].data[idx * l..(idx + 1) * l];
                for b in 0..self.m {
                    let gab = inv[sym_index(a, b)];
                    if gab == 0.0 {
                        continue;
                    }
                    let db = &partials.per_axis[b].data[idx * l..(idx + 1) * l];
                    let mut dot = 0.0;
                    for comp in 0..l {
                        dot += da[comp] * db[comp];
                    }
                    s += gab * dot;
                }
            }
            out.data[idx] = s;
        }
    }

    /// Convenience: |∇u|² directly from u.
    pub fn grad_norm_sq(&self, u: &AmbientField) -> ScalarField {
        self.grad_norm_sq_from(&self.gradient(u))
    }

    /// Weighted divergence (1/√|g|) ∂_i ( w √|g| g^{ij} v_j ).
    ///
    /// The node flux q^i = w √|g| g^{ij} v_j is averaged to faces and
    /// differenced across them (equivalently: centred difference of q), so the
    /// identity ∫⟨div_weighted(w,v),φ⟩ = −∫ w g^{ij}⟨v_i,∂_jφ⟩ is exact.
    pub fn div_weighted(&self, w: &ScalarField, v: &Partials) -> AmbientField {
        let l = v.per_axis[0].ambient_dim;
        let mut out = AmbientField::zeros(self.num_nodes(), l);
        let mut flux = Partials::zeros(self.num_nodes(), l);
        self.div_weighted_into(w, v, &mut flux, &mut out);
        out
    }

    pub fn div_weighted_into(
        &self,
        w: &ScalarField,
        v: &Partials,
        flux: &mut Partials,
        out: &mut AmbientField,
    ) {
        let l = v.per_axis[0].ambient_dim;
        let nodes = self.num_nodes();
        debug_assert_eq!(w.len(), nodes);
        // node flux q^a = w √|g| g^{ab} v_b
        for a in 0..self.m {
            let qa = &mut flux.per_axis[a];
            for idx in 0..nodes {
                let coeff = w.data[idx] * self.vol_density[idx];
                let inv = &self.metric_inv[idx];
                let row = &mut qa.data[idx * l..(idx + 1) * l];
                row.iter_mut().for_each(|x| *x = 0.0);
                for b in 0..self.m {
                    let gab = coeff * inv[sym_index(a, b)];
                    if gab == 0.0 {
                        continue;
                    }
                    let vb = &v.per_axis[b].data[idx * l..(idx + 1) * l];
                    for comp in 0..l {
                        row[comp] += gab * vb[comp];
                    }
                }
            }
        }
        // centred difference of the flux, divided by √|g|
        out.data.iter_mut().for_each(|x| *x = 0.0);
        for axis in 0..self.m {
            if self.sizes[axis] == 1 {
                continue;
            }
            let inv2h = 1.0 / (2.0 * self.spacings[axis]);
            let qa = &flux.per_axis[axis];
            for idx in 0..nodes {
                let c = self.node_coords(idx);
                let up = self.neighbor(c, axis, 1);
                let dn = self.neighbor(c, axis, -1);
                for comp in 0..l {
                    out.data[idx * l + comp] +=
                        (qa.data[up * l + comp] - qa.data[dn * l + comp]) * inv2h;
                }
            }
        }
        for idx in 0..nodes {
            let inv_sqrtg = 1.0 / self.vol_density[idx];
            for comp in 0..l {
                out.data[idx * l + comp] *= inv_sqrtg;
            }
        }
    }

    /// ∫ field dx = Σ field √|g| Π h_i.
    pub fn integrate(&self, field: &ScalarField) -> f64 {
        debug_assert_eq!(field.len(), self.num_nodes());
        let cell = self.spacings[0] * self.spacings[1] * self.spacings[2];
        let mut s = 0.0;
        for idx in 0..self.num_nodes() {
            s += field.data[idx] * self.vol_density[idx];
        }
        s * cell
    }

    /// Quadrature weight √|g| Π h_i of one node.
    pub fn node_weight(&self, idx: usize) -> f64 {
        self.vol_density[idx] * self.spacings[0] * self.spacings[1] * self.spacings[2]
    }

    /// Total Riemannian volume.
    pub fn volume(&self) -> f64 {
        self.integrate(&ScalarField::constant(self.num_nodes(), 1.0))
    }
}

/// Inverse and determinant of a packed symmetric 3×3 matrix.
fn invert_sym3(g: &[f64; 6]) -> Option<([f64; 6], f64)> {
    let (a, b, c, d, e, f) = (g[0], g[1], g[2], g[3], g[4], g[5]);
    // | a b c |
    // | b d e |
    // | c e f |
    let det = a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let inv = [
        (d * f - e * e) * inv_det,
        (c * e - b * f) * inv_det,
        (b * e - c * d) * inv_det,
        (a * f - c * c) * inv_det,
        (b * c - a * e) * inv_det,
        (a * d - b * b) * inv_det,
    ];
    Some((inv, det))
}
