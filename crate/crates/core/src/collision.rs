//! The linear scattering operator
//! `L(f)(v) = ∫ σ(v, v*, z) (M(v) f(v*) − M(v*) f(v)) dv*`
//! on a velocity grid, its momentum production `j^L`, coercivity checks and
//! the dense spectral machinery used as an oracle and as the exact
//! collisional sub-flow of the time stepper.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::velocity::VelocitySpace;

/// Largest velocity grid accepted by the dense eigensolves.
pub const MAX_DENSE_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaFamily {
    Constant,
    GaussianBump,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZCoupling {
    None,
    Affine,
    Exponential,
}

/// Cross-section family `σ(v, v*, z) = σ₀(v, v*) · g(z)`.
///
/// `σ₀` is `base` (constant), `base + bump_amp · exp(−(|v|² + |v*|²) / 2 bump_width²)`
/// (gaussian-bump) or a symmetric node-indexed table. The z-factor is
/// `1`, `1 + z_coeff·z` or `exp(z_coeff·z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionSpec {
    pub family: SigmaFamily,
    pub base: f64,
    pub bump_amp: f64,
    pub bump_width: f64,
    pub z_coupling: ZCoupling,
    pub z_coeff: f64,
    pub table: Option<Vec<Vec<f64>>>,
    /// Declared lower bound `λ` at `z = 0`; defaults to the family infimum.
    pub lambda_floor: Option<f64>,
}

impl Default for CrossSectionSpec {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

impl CrossSectionSpec {
    pub fn constant(base: f64) -> Self {
        Self {
            family: SigmaFamily::Constant,
            base,
            bump_amp: 0.0,
            bump_width: 1.0,
            z_coupling: ZCoupling::None,
            z_coeff: 0.0,
            table: None,
            lambda_floor: None,
        }
    }

    pub fn gaussian_bump(base: f64, amp: f64, width: f64) -> Self {
        Self {
            family: SigmaFamily::GaussianBump,
            base,
            bump_amp: amp,
            bump_width: width,
            ..Self::constant(base)
        }
    }

    pub fn table(values: Vec<Vec<f64>>) -> Self {
        Self {
            family: SigmaFamily::Table,
            table: Some(values),
            ..Self::constant(1.0)
        }
    }

    pub fn with_floor(mut self, lambda: f64) -> Self {
        self.lambda_floor = Some(lambda);
        self
    }

    pub fn with_coupling(mut self, coupling: ZCoupling, coeff: f64) -> Self {
        self.z_coupling = coupling;
        self.z_coeff = coeff;
        self
    }

    fn family_name(&self) -> &'static str {
        match self.family {
            SigmaFamily::Constant => "constant",
            SigmaFamily::GaussianBump => "gaussian-bump",
            SigmaFamily::Table => "table",
        }
    }

    /// `∂_z^k g(z)`.
    pub fn z_factor_derivative(&self, z: f64, k: usize) -> f64 {
        match self.z_coupling {
            ZCoupling::None => {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            ZCoupling::Affine => match k {
                0 => 1.0 + self.z_coeff * z,
                1 => self.z_coeff,
                _ => 0.0,
            },
            ZCoupling::Exponential => self.z_coeff.powi(k as i32) * (self.z_coeff * z).exp(),
        }
    }

    /// Infimum of `σ₀` over all velocities (not only grid nodes).
    fn base_infimum(&self) -> f64 {
        match self.family {
            SigmaFamily::Constant => self.base,
            SigmaFamily::GaussianBump => self.base + self.bump_amp.min(0.0),
            SigmaFamily::Table => self
                .table
                .as_ref()
                .map(|t| t.iter().flatten().copied().fold(f64::INFINITY, f64::min))
                .unwrap_or(f64::NAN),
        }
    }

    /// The lower bound `λ(z)` of the cross-section.
    pub fn lambda(&self, z: f64) -> f64 {
        self.lambda_floor.unwrap_or_else(|| self.base_infimum()) * self.z_factor_derivative(z, 0)
    }

    fn base_value(&self, space: &VelocitySpace, i: usize, j: usize) -> f64 {
        match self.family {
            SigmaFamily::Constant => self.base,
            SigmaFamily::GaussianBump => {
                let g = space.grid();
                let r2 = g.speed_sq(i) + g.speed_sq(j);
                self.base + self.bump_amp * (-r2 / (2.0 * self.bump_width * self.bump_width)).exp()
            }
            SigmaFamily::Table => self.table.as_ref().expect("validated table")[i][j],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self.family {
            SigmaFamily::Constant | SigmaFamily::GaussianBump => {
                if !self.base.is_finite() || !self.bump_amp.is_finite() {
                    return Err(Error::InvalidConfig("sigma parameters must be finite".into()));
                }
                if self.family == SigmaFamily::GaussianBump && !(self.bump_width > 0.0) {
                    return Err(Error::InvalidConfig("sigma.bump_width must be positive".into()));
                }
            }
            SigmaFamily::Table => {
                let t = self
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("table family needs values".into()))?;
                if t.len() != n || t.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidConfig(format!(
                        "sigma table must be {n} x {n} to match the velocity grid"
                    )));
                }
                for i in 0..n {
                    for j in 0..i {
                        if t[i][j] != t[j][i] {
                            return Err(Error::InvalidConfig(format!(
                                "sigma table is not symmetric at ({i}, {j})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense node-indexed kernel `σ(v_i, v_j, z)` with the quantities needed to
/// apply `L` without re-reading the cross-section.
#[derive(Debug, Clone)]
pub struct CollisionKernel {
    space: Arc<VelocitySpace>,
    sigma: Vec<f64>,
    lambda_bound: f64,
    z: f64,
    /// `M_i σ_ij w_j`, row-major.
    gain: Vec<f64>,
    /// `ν_i = Σ_j w_j σ_ij M_j`.
    loss: Vec<f64>,
}

/// Evaluates `σ(·, ·, z)` on the grid and checks the pointwise lower bound `σ ≥ λ(z)`.
pub fn assemble_kernel(
    spec: &CrossSectionSpec,
    space: &Arc<VelocitySpace>,
    z: f64,
) -> Result<CollisionKernel> {
    let n = space.len();
    spec.validate(n)?;
    let gz = spec.z_factor_derivative(z, 0);
    let lambda = spec.lambda(z);
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "cross-section lower bound lambda(z = {z}) = {lambda} is not positive"
        )));
    }
    let mut sigma = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = spec.base_value(space, i, j) * gz;
            sigma[i * n + j] = s;
            sigma[j * n + i] = s;
        }
    }
    for i in 0..n {
        for j in i..n {
            let s = sigma[i * n + j];
            // The relative tolerance keeps an exact minimum from tripping on
            // the z-scaling.
            if s < lambda * (1.0 - 1e-14) {
                return Err(Error::AssumptionViolation {
                    i,
                    j,
                    value: s,
                    bound: lambda,
                });
            }
        }
    }
    Ok(CollisionKernel::from_sigma(space.clone(), sigma, z))
}

impl CollisionKernel {
    /// Wraps an arbitrary symmetric node matrix; no lower bound is enforced.
    pub fn from_sigma(space: Arc<VelocitySpace>, sigma: Vec<f64>, z: f64) -> Self {
        let n = space.len();
        assert_eq!(sigma.len(), n * n, "sigma must be n x n");
        let w = space.w();
        let m = space.m();
        let mut gain = vec![0.0; n * n];
        let mut loss = vec![0.0; n];
        for i in 0..n {
            let mut nu = 0.0;
            for j in 0..n {
                let s = sigma[i * n + j];
                gain[i * n + j] = m[i] * s * w[j];
                nu += w[j] * s * m[j];
            }
            loss[i] = nu;
        }
        let lambda_bound = sigma.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            space,
            sigma,
            lambda_bound,
            z,
            gain,
            loss,
        }
    }

    pub fn space(&self) -> &Arc<VelocitySpace> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    /// Row-major `σ_ij`.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_at(&self, i: usize, j: usize) -> f64 {
        self.sigma[i * self.len() + j]
    }

    /// Smallest kernel entry.
    pub fn lambda_bound(&self) -> f64 {
        self.lambda_bound
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// Collision frequencies `ν_i`.
    pub fn loss_frequency(&self) -> &[f64] {
        &self.loss
    }

    /// `(Lf)_i = Σ_j w_j σ_ij (M_i f_j − M_j f_i)`, written into `out`.
    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let row = &self.gain[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * f[j];
            }
            out[i] = acc - self.loss[i] * f[i];
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out);
        out
    }

    /// `j^L = Σ_i w_i v_i (Lf)_i`.
    pub fn j_l(&self, f: &[f64]) -> [f64; 2] {
        self.space.moments(&self.apply(f)).j
    }

    /// `Σ_ij w_i w_j σ_ij² M_i M_j (|v_i|² + |v_j|²)`.
    pub fn weighted_sigma_moment(&self) -> f64 {
        let n = self.len();
        let w = self.space.w();
        let m = self.space.m();
        let g = self.space.grid();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let s = self.sigma[i * n + j];
                acc += w[i] * w[j] * s * s * m[i] * m[j] * (g.speed_sq(i) + g.speed_sq(j));
            }
        }
        acc
    }

    /// `C_L,h = √2 · (weighted_sigma_moment)^{1/2}`.
    pub fn constant_cl(&self) -> f64 {
        (2.0 * self.weighted_sigma_moment()).sqrt()
    }

    /// `−½ Σ_ij w_i w_j σ_ij M_i M_j (f_i/M_i − f_j/M_j)²`.
    pub fn h_theorem_form(&self, f: &[f64]) -> f64 {
        let n = self.len();
        let w = self.space.w();
        let m = self.space.m();
        let mut acc = 0.0;
        for i in 0..n {
            let hi = f[i] / m[i];
            for j in 0..n {
                let d = hi - f[j] / m[j];
                acc += w[i] * w[j] * self.sigma[i * n + j] * m[i] * m[j] * d * d;
            }
        }
        -0.5 * acc
    }

    /// `L` conjugated into the `dν`-orthonormal frame:
    /// `A_ij = σ_ij √(w_i w_j M_i M_j) − δ_ij ν_i`. Symmetric.
    pub fn symmetrized_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let w = self.space.w();
        let m = self.space.m();
        let r: Vec<f64> = (0..n).map(|i| (w[i] * m[i]).sqrt()).collect();
        DMatrix::from_fn(n, n, |i, j| {
            let off = self.sigma[i * n + j] * r[i] * r[j];
            if i == j {
                off - self.loss[i]
            } else {
                off
            }
        })
    }

    /// Dense matrix of `L` acting on node values.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            let g = self.gain[i * n + j];
            if i == j {
                g - self.loss[i]
            } else {
                g
            }
        })
    }

    /// `‖L‖` in `L²(dν)`.
    pub fn operator_norm(&self) -> Result<f64> {
        self.check_dense_size()?;
        linalg::symmetric_norm(self.symmetrized_matrix())
    }

    fn check_dense_size(&self) -> Result<()> {
        if self.len() > MAX_DENSE_NODES {
            return Err(Error::TooLarge(format!(
                "{} velocity nodes exceed the dense limit of {MAX_DENSE_NODES}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Smallest nonzero eigenvalue `λ_h` of `−L` on the mass-zero subspace.
    pub fn spectral_gap(&self) -> Result<f64> {
        self.check_dense_size()?;
        let n = self.len();
        let w = self.space.w();
        let m = self.space.m();
        let q: Vec<f64> = (0..n).map(|i| (w[i] * m[i]).sqrt()).collect();
        let a = self.symmetrized_matrix();
        let shift = 2.0 * self.loss.iter().copied().fold(0.0, f64::max) + 1.0;
        // −A plus a large multiple of the projector onto the equilibrium
        // direction, which moves the zero eigenvalue out of the way.
        let b = DMatrix::from_fn(n, n, |i, j| -a[(i, j)] + shift * q[i] * q[j]);
        let (values, _) = linalg::symmetric_eigen_sorted(b)?;
        Ok(values[0])
    }

    /// Microscopic coercivity and the quadratic-form identity for `f`.
    pub fn coercivity_check(&self, f: &[f64]) -> CoercivityCheck {
        let lf = self.apply(f);
        let lhs = self.space.inner_dnu(&lf, f);
        let rhs = -self.lambda_bound * self.space.perp_norm_sq(f);
        let ok = lhs <= rhs + 1e-12 * (1.0 + rhs.abs());
        let form = self.h_theorem_form(f);
        let identity_ok = (lhs - form).abs() <= 1e-10 * lhs.abs().max(form.abs()).max(1e-300)
            || (lhs - form).abs() <= 1e-15;
        CoercivityCheck {
            lhs,
            rhs,
            ok,
            h_theorem: form,
            identity_ok,
        }
    }
}

/// Both sides of `⟨Lf, f⟩_dν ≤ −λ‖f⊥‖²_dν` plus the H-theorem form.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoercivityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
    pub h_theorem: f64,
    pub identity_ok: bool,
}

/// Kernel of `∂_z^k σ` together with the dense norm of the induced operator.
#[derive(Debug, Clone)]
pub struct DerivativeKernel {
    pub order: usize,
    pub kernel: CollisionKernel,
    pub operator_norm: f64,
    pub within_bound: bool,
}

/// Kernels of `∂_z^k σ` for `k = 1..=l_max`, with the derivative-bound check
/// `‖L_z^k‖ ≤ c_tilde`.
pub fn assemble_dz_kernels(
    spec: &CrossSectionSpec,
    space: &Arc<VelocitySpace>,
    z: f64,
    l_max: usize,
    c_tilde: f64,
) -> Result<Vec<DerivativeKernel>> {
    if spec.family == SigmaFamily::Table && l_max >= 1 {
        return Err(Error::UnsupportedDerivative {
            family: spec.family_name(),
            order: l_max,
        });
    }
    spec.validate(space.len())?;
    let n = space.len();
    let mut out = Vec::with_capacity(l_max);
    for k in 1..=l_max {
        let dg = spec.z_factor_derivative(z, k);
        let mut sigma = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let s = spec.base_value(space, i, j) * dg;
                sigma[i * n + j] = s;
                sigma[j * n + i] = s;
            }
        }
        let kernel = CollisionKernel::from_sigma(space.clone(), sigma, z);
        let operator_norm = kernel.operator_norm()?;
        out.push(DerivativeKernel {
            order: k,
            within_bound: operator_norm <= c_tilde,
            kernel,
            operator_norm,
        });
    }
    Ok(out)
}

/// Cached eigendecomposition of the symmetrized operator, used to build
/// `exp(τL)` and its z-derivatives.
#[derive(Debug, Clone)]
pub struct Semigroup {
    n: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    /// `√(w_i / M_i)`: maps node values into the symmetric frame.
    to_sym: Vec<f64>,
}

/// Dense node-space operator, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOp {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseOp {
    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * f[j];
            }
            out[i] = acc;
        }
    }

    /// `out += self · f`.
    pub fn apply_add(&self, f: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * f[j];
            }
            out[i] += acc;
        }
    }
}

impl Semigroup {
    pub fn new(kernel: &CollisionKernel) -> Result<Self> {
        kernel.check_dense_size()?;
        let n = kernel.len();
        let (eigenvalues, eigenvectors) = linalg::symmetric_eigen_sorted(kernel.symmetrized_matrix())?;
        let to_sym = kernel.space.w_over_m().iter().map(|x| x.sqrt()).collect();
        Ok(Self {
            n,
            eigenvalues,
            eigenvectors,
            to_sym,
        })
    }

    /// Eigenvalues of the symmetrized `L`, ascending (all ≤ 0).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `exp(τL)` as a node-space matrix.
    pub fn propagator(&self, tau: f64) -> DenseOp {
        let scale: Vec<f64> = self.eigenvalues.iter().map(|l| (tau * l).exp()).collect();
        self.assemble(&scale)
    }

    /// `∂_z^k exp(τ L_z)` for `k = 0..=l_max`, for kernels of the form
    /// `σ₀ g(z)` so that `L_z = g(z)/g(z₀) · L_{z₀}`. `g_jet[k]` is `∂_z^k g(z₀)`.
    pub fn propagator_jet(&self, tau: f64, g_jet: &[f64], l_max: usize) -> Vec<DenseOp> {
        assert!(g_jet.len() > l_max, "g_jet must hold derivatives up to l_max");
        let g0 = g_jet[0];
        let mut per_order: Vec<Vec<f64>> = vec![vec![0.0; self.n]; l_max + 1];
        for (e, &lam) in self.eigenvalues.iter().enumerate() {
            // u(z) = τ λ g(z) / g(z₀); y = exp(u) with y^{(n+1)} = Σ C(n,k) u^{(k+1)} y^{(n−k)}.
            let u: Vec<f64> = g_jet.iter().map(|g| tau * lam * g / g0).collect();
            let mut y = vec![0.0; l_max + 1];
            y[0] = u[0].exp();
            for order in 0..l_max {
                let mut acc = 0.0;
                for k in 0..=order {
                    acc += binomial(order, k) * u[k + 1] * y[order - k];
                }
                y[order + 1] = acc;
            }
            for (k, yk) in y.into_iter().enumerate() {
                per_order[k][e] = yk;
            }
        }
        per_order.iter().map(|s| self.assemble(s)).collect()
    }

    fn assemble(&self, scale: &[f64]) -> DenseOp {
        let n = self.n;
        let q = &self.eigenvectors;
        let mut data = vec![0.0; n * n];
        // P = S⁻¹ Q diag(scale) Qᵀ S with S = diag(√(w/M)).
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for e in 0..n {
                    acc += q[(i, e)] * scale[e] * q[(j, e)];
                }
                data[i * n + j] = acc * self.to_sym[j] / self.to_sym[i];
            }
        }
        DenseOp { n, data }
    }
}

/// Exact binomial coefficient as `f64` (small arguments only).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc as f64
}
