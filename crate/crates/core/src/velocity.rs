//! Velocity-space quadrature, the discrete normalized Maxwellian and the
//! `dν = M⁻¹ dv` weighted geometry built on top of it.
//!
//! Grids are tensor products of a symmetric 1D rule. Symmetry under
//! `v ↦ −v` is enforced bit-for-bit by mirroring the positive half of the
//! rule, so odd Gaussian moments vanish exactly in floating point.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature family used along each velocity axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    UniformMidpoint,
    GaussHermiteTensor,
}

/// Tensor-product velocity quadrature in `dim ∈ {1, 2}` dimensions.
///
/// Node `k` of a 2D grid is `(axis[k / n], axis[k % n])`; component 0 is the
/// direction normal to the slab walls.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    dim: usize,
    n_axis: usize,
    vmax: f64,
    kind: GridKind,
    axis_nodes: Vec<f64>,
    axis_weights: Vec<f64>,
    nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

/// Builds a velocity grid.
///
/// `n_per_axis` must be even so that no node has a zero normal component
/// and the rule is symmetric. `vmax` is ignored for Gauss–Hermite grids.
pub fn build_grid(dim: usize, n_per_axis: usize, vmax: f64, kind: GridKind) -> Result<VelocityGrid> {
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidConfig(format!(
            "velocity.dim must be 1 or 2, got {dim}"
        )));
    }
    if n_per_axis < 4 {
        return Err(Error::InvalidConfig(format!(
            "velocity.n must be at least 4, got {n_per_axis}"
        )));
    }
    if n_per_axis % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "velocity.n must be even (got {n_per_axis}): odd rules place a node at v = 0 \
             and break the v -> -v pairing used by the wall reflection"
        )));
    }
    let (axis_nodes, axis_weights) = match kind {
        GridKind::UniformMidpoint => {
            if !(vmax > 0.0) || !vmax.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "velocity.vmax must be positive, got {vmax}"
                )));
            }
            uniform_midpoint_rule(n_per_axis, vmax)
        }
        GridKind::GaussHermiteTensor => gauss_hermite_rule(n_per_axis)?,
    };
    let vmax = match kind {
        GridKind::UniformMidpoint => vmax,
        GridKind::GaussHermiteTensor => axis_nodes[n_per_axis - 1],
    };

    let mut nodes = Vec::with_capacity(n_per_axis.pow(dim as u32));
    let mut weights = Vec::with_capacity(nodes.capacity());
    if dim == 1 {
        for (&v, &w) in axis_nodes.iter().zip(&axis_weights) {
            nodes.push([v, 0.0]);
            weights.push(w);
        }
    } else {
        for (&v1, &w1) in axis_nodes.iter().zip(&axis_weights) {
            for (&v2, &w2) in axis_nodes.iter().zip(&axis_weights) {
                nodes.push([v1, v2]);
                weights.push(w1 * w2);
            }
        }
    }

    Ok(VelocityGrid {
        dim,
        n_axis: n_per_axis,
        vmax,
        kind,
        axis_nodes,
        axis_weights,
        nodes,
        weights,
    })
}

fn uniform_midpoint_rule(n: usize, vmax: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * vmax / n as f64;
    let half = n / 2;
    let mut nodes = vec![0.0; n];
    for k in 0..half {
        let v = (k as f64 + 0.5) * h;
        nodes[half + k] = v;
        nodes[half - 1 - k] = -v;
    }
    (nodes, vec![h; n])
}

/// Mirrored half-range Gauss–Hermite rule: the Gauss rule for the weight
/// `e^{-v²/2}` on `[0, ∞)` with `n/2` nodes, reflected to the negative axis
/// and converted to plain quadrature weights (`∫ g dv ≈ Σ w_i g(v_i)`).
///
/// Half-space moments such as `∫_{v>0} v M dv` are then integrated exactly,
/// which a full-line rule cannot do because of the kink of `|v|` at zero.
fn gauss_hermite_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let half = n / 2;
    let (alpha, beta) = half_range_recurrence(half)?;
    let jacobi = DMatrix::from_fn(half, half, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[j].sqrt()
        } else if j + 1 == i {
            beta[i].sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::try_new(jacobi, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("half-range Jacobi eigensolve failed".into()))?;
    let mut pairs: Vec<(f64, f64)> = (0..half)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], beta[0] * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs[0].0 <= 0.0 {
        return Err(Error::NumericalFailure(format!(
            "half-range Gauss-Hermite rule for n = {n} produced a non-positive node"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for (k, (x, lambda)) in pairs.into_iter().enumerate() {
        let w = lambda * (0.5 * x * x).exp();
        nodes[half + k] = x;
        nodes[half - 1 - k] = -x;
        weights[half + k] = w;
        weights[half - 1 - k] = w;
    }
    Ok((nodes, weights))
}

/// Recurrence coefficients `(α_k, β_k)` of the monic orthogonal polynomials
/// for `e^{-v²/2}` on `[0, ∞)`, with `β₀` the total mass, from the
/// discretized Stieltjes procedure on a composite Gauss–Legendre rule.
fn half_range_recurrence(m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (gl_x, gl_w) = gauss_legendre(64)?;
    let panel = 0.5;
    let panels = ((2.0 * (2.0 * m as f64).sqrt() + 12.0) / panel).ceil() as usize;
    let mut x = Vec::with_capacity(panels * gl_x.len());
    let mut w = Vec::with_capacity(x.capacity());
    for p in 0..panels {
        let a = p as f64 * panel;
        for (t, wt) in gl_x.iter().zip(&gl_w) {
            let v = a + 0.5 * panel * (t + 1.0);
            x.push(v);
            w.push(0.5 * panel * wt * (-0.5 * v * v).exp());
        }
    }
    let mut alpha = vec![0.0; m];
    let mut beta = vec![0.0; m];
    let mut p_prev = vec![0.0; x.len()];
    let mut p = vec![1.0; x.len()];
    let mut norm_prev = 1.0;
    for k in 0..m {
        let mut norm = 0.0;
        let mut xnorm = 0.0;
        for i in 0..x.len() {
            let pp = w[i] * p[i] * p[i];
            norm += pp;
            xnorm += x[i] * pp;
        }
        alpha[k] = xnorm / norm;
        beta[k] = if k == 0 { norm } else { norm / norm_prev };
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NumericalFailure("Stieltjes procedure lost positivity".into()));
        }
        // Rescale to keep values O(1); the ratios above are scale-free.
        let scale = 1.0 / norm.sqrt();
        let mut next = vec![0.0; x.len()];
        for i in 0..x.len() {
            next[i] = ((x[i] - alpha[k]) * p[i] - if k == 0 { 0.0 } else { beta[k] * p_prev[i] }) * scale;
            p_prev[i] = p[i] * scale;
        }
        p = next;
        norm_prev = 1.0;
    }
    Ok((alpha, beta))
}

/// Gauss–Legendre rule on `[-1, 1]` by Golub–Welsch.
fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        let k = i.max(j) as f64;
        if i.abs_diff(j) == 1 {
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::try_new(jacobi, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("Gauss-Legendre eigensolve failed".into()))?;
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

impl VelocityGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_axis(&self) -> usize {
        self.n_axis
    }

    /// Total number of velocity nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest absolute node coordinate along an axis.
    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn axis_nodes(&self) -> &[f64] {
        &self.axis_nodes
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }

    /// Normal (wall-facing) velocity component of node `i`.
    #[inline]
    pub fn normal(&self, i: usize) -> f64 {
        self.nodes[i][0]
    }

    /// Squared speed `|v_i|²`.
    #[inline]
    pub fn speed_sq(&self, i: usize) -> f64 {
        let v = self.nodes[i];
        v[0] * v[0] + v[1] * v[1]
    }

    /// Index of the node obtained by flipping the normal component.
    #[inline]
    pub fn specular_image(&self, i: usize) -> usize {
        let n = self.n_axis;
        if self.dim == 1 {
            n - 1 - i
        } else {
            let (a, b) = (i / n, i % n);
            (n - 1 - a) * n + b
        }
    }

    /// Index of `-v_i`.
    #[inline]
    pub fn reflection(&self, i: usize) -> usize {
        self.len() - 1 - i
    }

    /// Axis index of the normal component of node `i`.
    #[inline]
    pub fn normal_axis_index(&self, i: usize) -> usize {
        if self.dim == 1 {
            i
        } else {
            i / self.n_axis
        }
    }

    /// Uniform axis spacing, if the grid is uniform.
    pub fn spacing(&self) -> Option<f64> {
        match self.kind {
            GridKind::UniformMidpoint => Some(self.axis_weights[0]),
            GridKind::GaussHermiteTensor => None,
        }
    }

    /// Largest normal speed on the grid.
    pub fn max_normal_speed(&self) -> f64 {
        self.axis_nodes.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// The Maxwellian `exp(-|v|²/2) / (2π)^{d/2}` sampled on a grid and rescaled
/// by one global factor so its discrete mass is exactly one.
#[derive(Debug, Clone)]
pub struct DiscreteMaxwellian {
    values: Vec<f64>,
    raw: Vec<f64>,
    factor: f64,
}

pub fn maxwellian(grid: &VelocityGrid) -> DiscreteMaxwellian {
    let norm = (2.0 * PI).powf(grid.dim() as f64 / 2.0);
    let raw: Vec<f64> = (0..grid.len())
        .map(|i| (-0.5 * grid.speed_sq(i)).exp() / norm)
        .collect();
    let mass: f64 = raw.iter().zip(grid.weights()).map(|(m, w)| m * w).sum();
    let factor = 1.0 / mass;
    let values: Vec<f64> = raw.iter().map(|m| m * factor).collect();
    DiscreteMaxwellian { values, raw, factor }
}

impl DiscreteMaxwellian {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Unscaled formula values.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Global rescaling factor applied to the raw values.
    pub fn renormalization_factor(&self) -> f64 {
        self.factor
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Result of splitting `f` into its Maxwellian part and the remainder.
#[derive(Debug, Clone)]
pub struct Projection {
    pub rho: f64,
    pub f_perp: Vec<f64>,
}

/// Velocity moments up to order two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub rho: f64,
    pub j: [f64; 2],
    pub s: [[f64; 2]; 2],
    pub s_tilde: [[f64; 2]; 2],
}

/// A velocity grid together with its Maxwellian and the derived weights
/// used by every other module.
#[derive(Debug, Clone)]
pub struct VelocitySpace {
    grid: VelocityGrid,
    maxwellian: DiscreteMaxwellian,
    sqrt_m: Vec<f64>,
    /// `w_i / M_i`, the discrete `dν` weight.
    w_over_m: Vec<f64>,
}

impl VelocitySpace {
    pub fn new(grid: VelocityGrid) -> Self {
        let maxwellian = maxwellian(&grid);
        let sqrt_m = maxwellian.values().iter().map(|m| m.sqrt()).collect();
        let w_over_m = grid
            .weights()
            .iter()
            .zip(maxwellian.values())
            .map(|(w, m)| w / m)
            .collect();
        Self {
            grid,
            maxwellian,
            sqrt_m,
            w_over_m,
        }
    }

    pub fn build(dim: usize, n_per_axis: usize, vmax: f64, kind: GridKind) -> Result<Self> {
        Ok(Self::new(build_grid(dim, n_per_axis, vmax, kind)?))
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn maxwellian(&self) -> &DiscreteMaxwellian {
        &self.maxwellian
    }

    /// Maxwellian values `M_i`.
    pub fn m(&self) -> &[f64] {
        self.maxwellian.values()
    }

    pub fn sqrt_m(&self) -> &[f64] {
        &self.sqrt_m
    }

    pub fn w(&self) -> &[f64] {
        self.grid.weights()
    }

    pub fn w_over_m(&self) -> &[f64] {
        &self.w_over_m
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// `⟨f, g⟩_dν = Σ w_i f_i g_i / M_i`.
    pub fn inner_dnu(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        let mut acc = 0.0;
        for i in 0..f.len() {
            acc += self.w_over_m[i] * f[i] * g[i];
        }
        acc
    }

    pub fn norm_dnu(&self, f: &[f64]) -> f64 {
        self.inner_dnu(f, f).sqrt()
    }

    /// Discrete mass `Σ w_i f_i`, summed over mirror pairs so that data odd
    /// in the normal component has exactly zero mass.
    pub fn mass(&self, f: &[f64]) -> f64 {
        let g = &self.grid;
        let w = g.weights();
        let mut acc = 0.0;
        for i in 0..f.len() {
            if g.normal(i) > 0.0 {
                let p = g.specular_image(i);
                acc += w[i] * f[i] + w[p] * f[p];
            }
        }
        acc
    }

    /// `π_L`: splits `f = ρ M + f⊥`.
    pub fn project_pi(&self, f: &[f64]) -> Projection {
        let rho = self.mass(f);
        let f_perp = f
            .iter()
            .zip(self.m())
            .map(|(fi, mi)| fi - rho * mi)
            .collect();
        Projection { rho, f_perp }
    }

    /// `‖f⊥‖²_dν` without allocating the remainder.
    pub fn perp_norm_sq(&self, f: &[f64]) -> f64 {
        let rho = self.mass(f);
        let m = self.m();
        let mut acc = 0.0;
        for i in 0..f.len() {
            let p = f[i] - rho * m[i];
            acc += self.w_over_m[i] * p * p;
        }
        acc
    }

    /// Moments are accumulated over mirror pairs so that odd moments of
    /// even data cancel exactly.
    pub fn moments(&self, f: &[f64]) -> Moments {
        let g = &self.grid;
        let w = g.weights();
        let nodes = g.nodes();
        let mut rho = 0.0;
        let mut j = [0.0; 2];
        let mut s_tilde = [[0.0; 2]; 2];
        for i in 0..f.len() {
            let v = nodes[i];
            if v[0] < 0.0 {
                continue;
            }
            let p = g.specular_image(i);
            let (a, b) = (w[i] * f[i], w[p] * f[p]);
            debug_assert!(v[0] > 0.0);
            rho += a + b;
            j[0] += v[0] * a + nodes[p][0] * b;
            s_tilde[0][0] += v[0] * v[0] * (a + b);
            s_tilde[0][1] += v[0] * v[1] * a + nodes[p][0] * v[1] * b;
            s_tilde[1][1] += v[1] * v[1] * (a + b);
        }
        if self.dim() == 2 {
            let n = g.n_axis();
            for i in 0..f.len() {
                let v = nodes[i];
                if v[1] < 0.0 {
                    continue;
                }
                let p = (i / n) * n + (n - 1 - i % n);
                j[1] += v[1] * w[i] * f[i] + nodes[p][1] * w[p] * f[p];
            }
        }
        s_tilde[1][0] = s_tilde[0][1];
        let mut s = s_tilde;
        s[0][0] -= rho;
        if self.dim() == 2 {
            s[1][1] -= rho;
        }
        Moments { rho, j, s, s_tilde }
    }

    /// `max_k ‖v_k M‖_dν`, the constant in `|j| ≤ √d · m_v · ‖f⊥‖`.
    pub fn velocity_moment_norm(&self) -> f64 {
        let w = self.grid.weights();
        let m = self.m();
        (0..self.dim())
            .map(|k| {
                (0..self.len())
                    .map(|i| w[i] * self.grid.nodes()[i][k].powi(2) * m[i])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `D_h = ‖(v⊗v − I) M‖_dν` (Frobenius over the tensor components).
    pub fn stress_constant(&self) -> f64 {
        let w = self.grid.weights();
        let m = self.m();
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..self.len() {
            let v = self.grid.nodes()[i];
            for a in 0..d {
                for b in 0..d {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    let e = v[a] * v[b] - delta;
                    acc += w[i] * e * e * m[i];
                }
            }
        }
        acc.sqrt()
    }

    /// Largest entry of `Σ w (v⊗v) M − I`, reported rather than corrected.
    pub fn second_moment_defect(&self) -> f64 {
        let mom = self.moments(self.m());
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                let delta = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((mom.s_tilde[a][b] - delta).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_geometry() {
        let g = build_grid(1, 8, 6.0, GridKind::UniformMidpoint).unwrap();
        assert_eq!(g.len(), 8);
        for &w in g.weights() {
            assert_eq!(w, 12.0 / 8.0);
        }
        for i in 0..8 {
            assert_eq!(g.nodes()[i][0], -g.nodes()[7 - i][0]);
        }
    }

    #[test]
    fn odd_and_degenerate_configs_rejected() {
        assert!(matches!(
            build_grid(1, 7, 6.0, GridKind::UniformMidpoint),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            build_grid(1, 8, 0.0, GridKind::UniformMidpoint),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            build_grid(1, 8, -1.0, GridKind::UniformMidpoint),
            Err(Error::InvalidConfig(_))
        ));
        assert!(build_grid(3, 8, 6.0, GridKind::UniformMidpoint).is_err());
        assert!(build_grid(1, 2, 6.0, GridKind::UniformMidpoint).is_err());
    }

    #[test]
    fn gauss_hermite_integrates_gaussian_before_renormalization() {
        let g = build_grid(1, 16, 0.0, GridKind::GaussHermiteTensor).unwrap();
        let direct: f64 = g
            .nodes()
            .iter()
            .zip(g.weights())
            .map(|(v, w)| w * (-0.5 * v[0] * v[0]).exp() / (2.0 * PI).sqrt())
            .sum();
        assert!((direct - 1.0).abs() < 1e-12, "{direct}");
        // Exactness for polynomial moments up to degree 2n-1.
        let m4: f64 = g
            .nodes()
            .iter()
            .zip(g.weights())
            .map(|(v, w)| w * v[0].powi(4) * (-0.5 * v[0] * v[0]).exp() / (2.0 * PI).sqrt())
            .sum();
        assert!((m4 - 3.0).abs() < 1e-11, "{m4}");
    }

    #[test]
    fn two_dimensional_tensor_symmetry() {
        let g = build_grid(2, 8, 6.0, GridKind::UniformMidpoint).unwrap();
        assert_eq!(g.len(), 64);
        for i in 0..g.len() {
            let v = g.nodes()[i];
            let s = g.specular_image(i);
            assert_eq!(g.nodes()[s], [-v[0], v[1]]);
            assert_eq!(g.weights()[s], g.weights()[i]);
            let r = g.reflection(i);
            assert_eq!(g.nodes()[r], [-v[0], -v[1]]);
        }
    }

    #[test]
    fn maxwellian_renormalization() {
        let gh = VelocitySpace::build(1, 32, 0.0, GridKind::GaussHermiteTensor).unwrap();
        assert!((gh.maxwellian().renormalization_factor() - 1.0).abs() < 1e-12);
        let un = VelocitySpace::build(1, 64, 8.0, GridKind::UniformMidpoint).unwrap();
        assert!((un.maxwellian().renormalization_factor() - 1.0).abs() < 1e-6);
        for sp in [&gh, &un] {
            assert!(sp.maxwellian().min() > 0.0);
            assert!((sp.mass(sp.m()) - 1.0).abs() < 1e-15);
            assert_eq!(sp.moments(sp.m()).j, [0.0, 0.0]);
        }
    }

    #[test]
    fn inner_product_examples() {
        let sp = VelocitySpace::build(1, 32, 0.0, GridKind::GaussHermiteTensor).unwrap();
        let m = sp.m().to_vec();
        assert!((sp.inner_dnu(&m, &m) - 1.0).abs() < 1e-15);
        let vm: Vec<f64> = (0..sp.len()).map(|i| sp.grid().normal(i) * m[i]).collect();
        assert!((sp.inner_dnu(&vm, &vm) - 1.0).abs() < 1e-12);
        let f: Vec<f64> = (0..sp.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!((sp.inner_dnu(&f, &m) - sp.mass(&f)).abs() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let sp = VelocitySpace::build(1, 16, 8.0, GridKind::UniformMidpoint).unwrap();
        let p = sp.project_pi(sp.m());
        assert!((p.rho - 1.0).abs() < 1e-15);
        assert!(p.f_perp.iter().all(|x| x.abs() < 1e-16));

        let vm: Vec<f64> = (0..sp.len()).map(|i| sp.grid().normal(i) * sp.m()[i]).collect();
        let p = sp.project_pi(&vm);
        assert_eq!(p.rho, 0.0);
        assert_eq!(p.f_perp, vm);

        let scaled: Vec<f64> = sp.m().iter().map(|m| 2.5 * m).collect();
        let p = sp.project_pi(&scaled);
        assert!((p.rho - 2.5).abs() < 1e-15);
    }

    #[test]
    fn moment_examples() {
        let sp = VelocitySpace::build(1, 32, 0.0, GridKind::GaussHermiteTensor).unwrap();
        let m = sp.m().to_vec();
        let mom = sp.moments(&m);
        assert!((mom.rho - 1.0).abs() < 1e-15);
        assert_eq!(mom.j[0], 0.0);
        assert!(mom.s[0][0].abs() < 1e-12);
        assert!(sp.second_moment_defect() < 1e-12);

        let vm: Vec<f64> = (0..sp.len()).map(|i| sp.grid().normal(i) * m[i]).collect();
        assert!((sp.moments(&vm).j[0] - 1.0).abs() < 1e-12);

        let h2: Vec<f64> = (0..sp.len())
            .map(|i| (sp.grid().normal(i).powi(2) - 1.0) * m[i])
            .collect();
        let mom = sp.moments(&h2);
        assert!(mom.rho.abs() < 1e-12);
        assert_eq!(mom.j[0], 0.0);
    }

    #[test]
    fn stress_constant_is_sqrt_two_in_1d() {
        let sp = VelocitySpace::build(1, 32, 0.0, GridKind::GaussHermiteTensor).unwrap();
        assert!((sp.stress_constant() - 2f64.sqrt()).abs() < 1e-10);
    }
}
