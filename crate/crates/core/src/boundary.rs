//! Slab geometry `[0, Lx]` and the Maxwell accommodation boundary condition.
//!
//! The left wall has outward normal `−e₁`, the right wall `+e₁`. Traces are
//! full node arrays; only the entries on the relevant half-grid are read.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::velocity::VelocitySpace;

/// Uniform cell-centred mesh of the slab.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabMesh {
    nx: usize,
    lx: f64,
    dx: f64,
    centers: Vec<f64>,
}

impl SlabMesh {
    pub fn new(nx: usize, lx: f64) -> Result<Self> {
        if nx < 4 {
            return Err(Error::InvalidConfig(format!("mesh.nx must be at least 4, got {nx}")));
        }
        if !(lx > 0.0) || !lx.is_finite() {
            return Err(Error::InvalidConfig(format!("mesh.Lx must be positive, got {lx}")));
        }
        let dx = lx / nx as f64;
        let centers = (0..nx).map(|k| (k as f64 + 0.5) * dx).collect();
        Ok(Self { nx, lx, dx, centers })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Position of face `k`, `k = 0..=nx`; faces 0 and `nx` are the walls.
    pub fn face(&self, k: usize) -> f64 {
        k as f64 * self.dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Wall {
    Left,
    Right,
}

impl Wall {
    pub const BOTH: [Wall; 2] = [Wall::Left, Wall::Right];

    /// Sign of the outward normal along `e₁`.
    pub fn normal_sign(self) -> f64 {
        match self {
            Wall::Left => -1.0,
            Wall::Right => 1.0,
        }
    }
}

/// `n·v_i` at `wall`.
#[inline]
pub fn normal_velocity(space: &VelocitySpace, wall: Wall, i: usize) -> f64 {
    wall.normal_sign() * space.grid().normal(i)
}

/// `CM_h = 1 / Σ_{n·v<0} M_i |n·v_i| w_i`.
pub fn discrete_cm(space: &VelocitySpace, wall: Wall) -> Result<f64> {
    let m = space.m();
    let w = space.w();
    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..space.len() {
        let nv = normal_velocity(space, wall, i);
        if nv < 0.0 {
            acc += m[i] * (-nv) * w[i];
            count += 1;
        }
    }
    if count == 0 || !(acc > 0.0) {
        return Err(Error::InvalidGrid(format!("{wall:?} wall has an empty incoming half-grid")));
    }
    Ok(1.0 / acc)
}

/// Maxwell boundary data for both walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxwellBc {
    pub c: f64,
    pub cm_left: f64,
    pub cm_right: f64,
}

impl MaxwellBc {
    pub fn new(space: &VelocitySpace, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidConfig(format!("bc.c must be in [0,1], got {c}")));
        }
        Ok(Self {
            c,
            cm_left: discrete_cm(space, Wall::Left)?,
            cm_right: discrete_cm(space, Wall::Right)?,
        })
    }

    pub fn cm(&self, wall: Wall) -> f64 {
        match wall {
            Wall::Left => self.cm_left,
            Wall::Right => self.cm_right,
        }
    }

    /// Fills the incoming entries (`n·v < 0`) of `out` from the outgoing
    /// entries of `trace`:
    /// `f_in(v) = c·f_out(v*) + (1−c)·CM_h·M(v)·Σ_{n·u>0} f_out(u)(n·u) w_u`.
    pub fn apply(&self, space: &VelocitySpace, wall: Wall, trace: &[f64], out: &mut [f64]) {
        let g = space.grid();
        let m = space.m();
        let w = space.w();
        let mut outflux = 0.0;
        for i in 0..space.len() {
            let nv = normal_velocity(space, wall, i);
            if nv > 0.0 {
                outflux += trace[i] * nv * w[i];
            }
        }
        let diffuse = (1.0 - self.c) * self.cm(wall) * outflux;
        for i in 0..space.len() {
            if normal_velocity(space, wall, i) < 0.0 {
                out[i] = self.c * trace[g.specular_image(i)] + diffuse * m[i];
            }
        }
    }

    /// Full node array at `wall`: outgoing entries copied from `trace`,
    /// incoming entries from the boundary condition.
    pub fn wall_values(&self, space: &VelocitySpace, wall: Wall, trace: &[f64]) -> Vec<f64> {
        let mut out = trace.to_vec();
        self.apply(space, wall, trace, &mut out);
        out
    }
}

/// Net mass flux `Σ_i w_i f_i (n·v_i)` through `wall` for full wall values.
pub fn boundary_flux(space: &VelocitySpace, wall: Wall, wall_values: &[f64]) -> f64 {
    let g = space.grid();
    let w = space.w();
    // Pair each node with its specular image so exact cancellation survives
    // rounding.
    let mut acc = 0.0;
    for i in 0..space.len() {
        let nv = normal_velocity(space, wall, i);
        if nv > 0.0 {
            let p = g.specular_image(i);
            acc += w[i] * wall_values[i] * nv + w[p] * wall_values[p] * normal_velocity(space, wall, p);
        }
    }
    acc
}

/// `⟨h, k⟩_{γ+} = Σ_{n·v>0} h k (n·v) w`.
pub fn gamma_plus_inner(space: &VelocitySpace, wall: Wall, h: &[f64], k: &[f64]) -> f64 {
    let w = space.w();
    let mut acc = 0.0;
    for i in 0..space.len() {
        let nv = normal_velocity(space, wall, i);
        if nv > 0.0 {
            acc += h[i] * k[i] * nv * w[i];
        }
    }
    acc
}

/// `P_γ h = CM_h √M(v) Σ_{n·u>0} h(u) √M(u) (n·u) w_u` on the full grid.
pub fn p_gamma(space: &VelocitySpace, cm: f64, wall: Wall, h: &[f64]) -> Vec<f64> {
    let sqrt_m = space.sqrt_m();
    let coeff = cm * gamma_plus_inner(space, wall, h, sqrt_m);
    sqrt_m.iter().map(|s| coeff * s).collect()
}

/// `h = f / √M`.
pub fn scaled_trace(space: &VelocitySpace, f: &[f64]) -> Vec<f64> {
    f.iter().zip(space.sqrt_m()).map(|(f, s)| f / s).collect()
}

/// `(1−c²)/2 · Σ_{n·v>0} |(I−P_γ)h|² (n·v) w` with `h = f/√M`.
pub fn boundary_dissipation(space: &VelocitySpace, bc: &MaxwellBc, wall: Wall, trace: &[f64]) -> f64 {
    let h = scaled_trace(space, trace);
    let ph = p_gamma(space, bc.cm(wall), wall, &h);
    let r: Vec<f64> = h.iter().zip(&ph).map(|(a, b)| a - b).collect();
    0.5 * (1.0 - bc.c * bc.c) * gamma_plus_inner(space, wall, &r, &r)
}
