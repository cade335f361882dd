//! Truncated Karhunen–Loève expansions of a second-order process on
//! `[0, T]`: Nyström eigenpairs of the autocorrelation, Gaussian path
//! sampling, coefficient projection and an empirical orthogonality check.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_sorted;

/// Smallest grid accepted by [`nystrom_eig`].
pub const MIN_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceFamily {
    /// `min(t, s)`.
    Brownian,
    /// `exp(−|t − s| / ℓ)`.
    Exponential,
    /// Values given directly on the grid.
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceKernel {
    pub family: CovarianceFamily,
    pub t_cov: f64,
    pub length: f64,
    pub table: Option<Vec<Vec<f64>>>,
}

impl CovarianceKernel {
    pub fn brownian(t_cov: f64) -> Self {
        Self {
            family: CovarianceFamily::Brownian,
            t_cov,
            length: 1.0,
            table: None,
        }
    }

    pub fn exponential(t_cov: f64, length: f64) -> Self {
        Self {
            family: CovarianceFamily::Exponential,
            t_cov,
            length,
            table: None,
        }
    }

    /// Kernel sampled on the uniform `n`-point grid of `[0, t_cov]`, `n = values.len()`.
    pub fn table(t_cov: f64, values: Vec<Vec<f64>>) -> Self {
        Self {
            family: CovarianceFamily::Table,
            t_cov,
            length: 1.0,
            table: Some(values),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.t_cov > 0.0 && self.t_cov.is_finite()) {
            return Err(Error::InvalidConfig(format!("kl.t_cov must be positive, got {}", self.t_cov)));
        }
        match self.family {
            CovarianceFamily::Exponential if !(self.length > 0.0) => Err(Error::InvalidConfig(format!(
                "kl.length must be positive, got {}",
                self.length
            ))),
            CovarianceFamily::Table => {
                let t = self
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("table kernel needs values".into()))?;
                if t.len() != n || t.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidConfig(format!("table kernel must be {n}x{n}")));
                }
                for i in 0..n {
                    for j in 0..i {
                        if t[i][j] != t[j][i] {
                            return Err(Error::InvalidConfig(format!("table kernel is not symmetric at ({i}, {j})")));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `R(tᵢ, tⱼ)` on the grid.
    fn on_grid(&self, grid: &[f64], i: usize, j: usize) -> f64 {
        let (t, s) = (grid[i], grid[j]);
        match self.family {
            CovarianceFamily::Brownian => t.min(s),
            CovarianceFamily::Exponential => (-(t - s).abs() / self.length).exp(),
            CovarianceFamily::Table => self.table.as_ref().map_or(0.0, |tb| tb[i][j]),
        }
    }
}

/// Eigenpairs of the autocorrelation on a trapezoid grid.
#[derive(Debug, Clone, Serialize)]
pub struct KlBasis {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `eigenfunctions[i][k] = ψᵢ(t_k)`, orthonormal in the weighted sum.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub d: usize,
    /// `Σ_{i≤d} λᵢ / Σ λᵢ` (negative round-off eigenvalues count as zero).
    pub captured: f64,
}

/// Composite trapezoid Nyström eigensolve on `n` uniform points, via the
/// symmetric matrix `W^{1/2} R W^{1/2}`.
pub fn nystrom_eig(kernel: &CovarianceKernel, n: usize) -> Result<KlBasis> {
    if n < MIN_NODES {
        return Err(Error::InvalidConfig(format!("kl.n must be at least {MIN_NODES}, got {n}")));
    }
    kernel.validate(n)?;
    let h = kernel.t_cov / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
    let mut weights = vec![h; n];
    weights[0] *= 0.5;
    weights[n - 1] *= 0.5;
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| sw[i] * kernel.on_grid(&grid, i, j) * sw[j]);
    let trace: f64 = a.diagonal().sum();
    let (values, vectors) = symmetric_eigen_sorted(a)?;
    if values[0] < -1e-10 * trace.abs() {
        return Err(Error::InvalidConfig(format!(
            "covariance kernel is indefinite: smallest Nyström eigenvalue {:e} (trace {trace:e})",
            values[0]
        )));
    }
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenfunctions = Vec::with_capacity(n);
    for col in (0..n).rev() {
        let mut psi: Vec<f64> = (0..n).map(|k| vectors[(k, col)] / sw[k]).collect();
        let mean: f64 = psi.iter().zip(&weights).map(|(p, w)| p * w).sum();
        let leading = psi.iter().copied().find(|p| p.abs() > 1e-12).unwrap_or(0.0);
        if mean < -1e-12 || (mean.abs() <= 1e-12 && leading < 0.0) {
            psi.iter_mut().for_each(|p| *p = -*p);
        }
        eigenvalues.push(values[col]);
        eigenfunctions.push(psi);
    }
    Ok(KlBasis {
        grid,
        weights,
        eigenvalues,
        eigenfunctions,
        d: n,
        captured: 1.0,
    })
}

/// Keeps the smallest `d` with `Σ_{i≤d} λᵢ ≥ energy · Σ λᵢ`; `energy = 1`
/// keeps every mode.
pub fn truncate(basis: &KlBasis, energy: f64) -> Result<KlBasis> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::InvalidConfig(format!("kl.energy must be in (0, 1], got {energy}")));
    }
    let pos: Vec<f64> = basis.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = pos.iter().sum();
    let n = pos.len();
    let d = if energy == 1.0 || total == 0.0 {
        n
    } else {
        let target = energy * total * (1.0 - 1e-12);
        let mut acc = 0.0;
        pos.iter()
            .position(|l| {
                acc += l;
                acc >= target
            })
            .map_or(n, |i| i + 1)
    };
    let captured = if total > 0.0 { pos[..d].iter().sum::<f64>() / total } else { 1.0 };
    Ok(KlBasis {
        grid: basis.grid.clone(),
        weights: basis.weights.clone(),
        eigenvalues: basis.eigenvalues[..d].to_vec(),
        eigenfunctions: basis.eigenfunctions[..d].to_vec(),
        d,
        captured,
    })
}

/// How sampled coefficients are generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientLaw {
    /// Independent `N(0, λᵢ)`.
    Gaussian,
    /// Each coefficient mixes in the first standard normal with weight
    /// `rho`; a negative control for the orthogonality check.
    Correlated { rho: f64 },
}

/// Coefficient vectors for samples `0..n_samples`. Sample `s` draws from
/// its own ChaCha stream so the result does not depend on scheduling.
pub fn sample_coefficients(basis: &KlBasis, law: CoefficientLaw, n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let sd: Vec<f64> = basis.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let xi: Vec<f64> = (0..sd.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            match law {
                CoefficientLaw::Gaussian => xi.iter().zip(&sd).map(|(x, s)| x * s).collect(),
                CoefficientLaw::Correlated { rho } => {
                    let c = (1.0 - rho * rho).max(0.0).sqrt();
                    xi.iter()
                        .zip(&sd)
                        .enumerate()
                        .map(|(i, (x, s))| if i == 0 { x * s } else { (rho * xi[0] + c * x) * s })
                        .collect()
                }
            }
        })
        .collect()
}

/// `Σᵢ ψᵢ Yᵢ` on the grid.
pub fn synthesize(basis: &KlBasis, coeffs: &[f64]) -> Vec<f64> {
    let mut path = vec![0.0; basis.grid.len()];
    for (psi, y) in basis.eigenfunctions.iter().zip(coeffs) {
        for (p, q) in path.iter_mut().zip(psi) {
            *p += y * q;
        }
    }
    path
}

/// Gaussian paths `Y_t = Σ_{i≤d} ψᵢ(t) Yᵢ`, one row per sample.
pub fn sample_paths(basis: &KlBasis, n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    sample_coefficients(basis, CoefficientLaw::Gaussian, n_samples, seed)
        .par_iter()
        .map(|c| synthesize(basis, c))
        .collect()
}

/// `Yᵢ = Σ_k w_k Y(t_k) ψᵢ(t_k)`.
pub fn project_coeffs(path: &[f64], basis: &KlBasis) -> Result<Vec<f64>> {
    if path.len() != basis.grid.len() {
        return Err(Error::InvalidConfig(format!(
            "path has {} points, basis grid has {}",
            path.len(),
            basis.grid.len()
        )));
    }
    Ok(basis
        .eigenfunctions
        .iter()
        .map(|psi| path.iter().zip(psi).zip(&basis.weights).map(|((y, p), w)| y * p * w).sum())
        .collect())
}

/// Largest `|Σ_k w_k ψᵢψⱼ − δᵢⱼ|`.
pub fn orthonormality_defect(basis: &KlBasis) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in basis.eigenfunctions.iter().enumerate() {
        for (j, b) in basis.eigenfunctions.iter().enumerate().take(i + 1) {
            let g: f64 = a.iter().zip(b).zip(&basis.weights).map(|((x, y), w)| x * y * w).sum();
            worst = worst.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

/// `|R(tₐ, t_b) − Σ_{i≤d} λᵢψᵢ(tₐ)ψᵢ(t_b)|` for `d = 1..=d_max` at one grid pair.
pub fn mercer_errors(kernel: &CovarianceKernel, basis: &KlBasis, a: usize, b: usize, d_max: usize) -> Vec<f64> {
    let exact = kernel.on_grid(&basis.grid, a, b);
    let mut acc = 0.0;
    (0..d_max.min(basis.d))
        .map(|i| {
            acc += basis.eigenvalues[i] * basis.eigenfunctions[i][a] * basis.eigenfunctions[i][b];
            (exact - acc).abs()
        })
        .collect()
}

/// Empirical second moments of the sampled coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct OrthogonalityReport {
    pub n_samples: usize,
    pub d: usize,
    pub gram: Vec<Vec<f64>>,
    /// Largest `|Ĝᵢⱼ| / √(λᵢλⱼ)` over `i ≠ j`.
    pub max_offdiag: f64,
    pub offdiag_threshold: f64,
    /// Largest `|Ĝᵢᵢ − λᵢ|` in units of the standard error `λᵢ√(2/n)`.
    pub max_diag_z: f64,
    pub flags: Vec<String>,
    pub ok: bool,
}

/// Samples paths, projects them back onto the basis and compares the
/// empirical Gram matrix of the coefficients with `diag(λ)`.
pub fn verify_orthogonality(
    basis: &KlBasis,
    law: CoefficientLaw,
    n_samples: usize,
    seed: u64,
) -> Result<OrthogonalityReport> {
    if n_samples < 10_000 {
        return Err(Error::InvalidConfig(format!("kl.samples must be at least 10000, got {n_samples}")));
    }
    let d = basis.d;
    let coeffs = sample_coefficients(basis, law, n_samples, seed);
    let gram_flat = coeffs
        .par_chunks(1024)
        .map(|chunk| {
            let mut g = vec![0.0; d * d];
            for c in chunk {
                let y = project_coeffs(&synthesize(basis, c), basis).expect("grid matches basis");
                for i in 0..d {
                    for j in 0..=i {
                        g[i * d + j] += y[i] * y[j];
                    }
                }
            }
            g
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(vec![0.0; d * d], |mut acc, g| {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            acc
        });
    let mut gram = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let v = gram_flat[i * d + j] / n_samples as f64;
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }
    let threshold = 4.0 / (n_samples as f64).sqrt();
    let mut flags = Vec::new();
    let mut max_offdiag: f64 = 0.0;
    let mut max_diag_z: f64 = 0.0;
    for i in 0..d {
        let li = basis.eigenvalues[i];
        let z = (gram[i][i] - li).abs() / (li * (2.0 / n_samples as f64).sqrt());
        max_diag_z = max_diag_z.max(z);
        if z > 3.0 {
            flags.push(format!("variance of Y_{} off by {z:.2} standard errors", i + 1));
        }
        for j in 0..i {
            let r = gram[i][j].abs() / (li * basis.eigenvalues[j]).sqrt();
            max_offdiag = max_offdiag.max(r);
            if r > threshold {
                flags.push(format!("E[Y_{} Y_{}] normalized {r:.4} exceeds {threshold:.4}", i + 1, j + 1));
            }
        }
    }
    Ok(OrthogonalityReport {
        n_samples,
        d,
        gram,
        max_offdiag,
        offdiag_threshold: threshold,
        max_diag_z,
        ok: flags.is_empty(),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn brownian_matches_analytic_pairs() {
        let b = nystrom_eig(&CovarianceKernel::brownian(1.0), 512).unwrap();
        for k in 1..=5 {
            let exact = 1.0 / ((k as f64 - 0.5).powi(2) * PI * PI);
            assert!((b.eigenvalues[k - 1] / exact - 1.0).abs() < 0.01);
        }
        let sup = b
            .grid
            .iter()
            .zip(&b.eigenfunctions[0])
            .map(|(t, p)| (p - 2f64.sqrt() * (PI * t / 2.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-2, "{sup}");
        assert!(orthonormality_defect(&truncate(&b, 0.99).unwrap()) < 1e-10);
    }

    #[test]
    fn truncation_examples() {
        let b = nystrom_eig(&CovarianceKernel::brownian(1.0), 512).unwrap();
        assert_eq!(truncate(&b, 1.0).unwrap().d, 512);
        // Analytic partial sums of 1/((k−½)²π²) first reach 95% of ½ at k = 5.
        let analytic_d = (1..)
            .scan(0.0, |acc, k: i32| {
                *acc += 1.0 / ((k as f64 - 0.5).powi(2) * PI * PI);
                Some((k, *acc))
            })
            .find(|(_, s)| *s >= 0.95 * 0.5)
            .unwrap()
            .0;
        assert_eq!(analytic_d, 5);
        assert_eq!(truncate(&b, 0.95).unwrap().d, 5);
        let n = 16;
        let u: Vec<f64> = (0..n).map(|k| 1.0 + k as f64).collect();
        let rank1 = (0..n).map(|i| (0..n).map(|j| u[i] * u[j]).collect()).collect();
        let r = nystrom_eig(&CovarianceKernel::table(1.0, rank1), n).unwrap();
        for e in [0.01, 0.5, 0.999] {
            assert_eq!(truncate(&r, e).unwrap().d, 1);
        }
        assert!(truncate(&b, 0.0).is_err());
    }

    #[test]
    fn exponential_spectrum_positive_and_decreasing() {
        let b = nystrom_eig(&CovarianceKernel::exponential(1.0, 0.3), 64).unwrap();
        let top = truncate(&b, 0.99).unwrap();
        assert!(top.eigenvalues.iter().all(|l| *l > 0.0));
        assert!(top.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn indefinite_table_rejected() {
        let n = 16;
        let t = (0..n).map(|i| (0..n).map(|j| if i == j { -1.0 } else { 0.0 }).collect()).collect();
        assert!(nystrom_eig(&CovarianceKernel::table(1.0, t), n).is_err());
    }

    #[test]
    fn projection_round_trip() {
        let b = truncate(&nystrom_eig(&CovarianceKernel::brownian(1.0), 128).unwrap(), 0.99).unwrap();
        let e3 = project_coeffs(&b.eigenfunctions[2], &b).unwrap();
        for (i, y) in e3.iter().enumerate() {
            assert!((y - if i == 2 { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        let c: Vec<f64> = (0..b.d).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = project_coeffs(&synthesize(&b, &c), &b).unwrap();
        for (x, y) in c.iter().zip(&back) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_rank_one_paths_are_parallel() {
        let b = truncate(&nystrom_eig(&CovarianceKernel::brownian(1.0), 64).unwrap(), 0.9).unwrap();
        assert_eq!(sample_paths(&b, 50, 7), sample_paths(&b, 50, 7));
        assert_ne!(sample_paths(&b, 50, 7), sample_paths(&b, 50, 8));
        let mut one = b.clone();
        one.d = 1;
        one.eigenvalues.truncate(1);
        one.eigenfunctions.truncate(1);
        for p in sample_paths(&one, 10, 3) {
            let r = p[10] / b.eigenfunctions[0][10];
            for (x, psi) in p.iter().zip(&b.eigenfunctions[0]) {
                assert!((x - r * psi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlated_fixture_is_flagged() {
        let b = truncate(&nystrom_eig(&CovarianceKernel::brownian(1.0), 64).unwrap(), 0.9).unwrap();
        let rep = verify_orthogonality(&b, CoefficientLaw::Correlated { rho: 0.5 }, 10_000, 1).unwrap();
        assert!(!rep.ok && !rep.flags.is_empty());
    }
}
