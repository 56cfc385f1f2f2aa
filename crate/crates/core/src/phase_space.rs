//! Physical units, the discretized phase-space geometry and the potential field.
//!
//! Everything here is immutable after construction and in SI units. The
//! momentum axis is discretized with step `dp = pi * hbar / lc`, where `lc`
//! is the coherence (cut-off) length that also bounds the kernel's spatial
//! window.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reduced Planck constant, CODATA 2018 (J*s).
pub const HBAR_SI: f64 = 1.054571817e-34;
/// Free electron mass, CODATA 2018 (kg).
pub const ELECTRON_MASS_SI: f64 = 9.1093837015e-31;

/// Physical constants a simulation runs with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants<S: Scalar> {
    /// Reduced Planck constant (J*s).
    pub hbar: S,
    /// Particle mass (kg).
    pub mass: S,
}

impl<S: Scalar> PhysicalConstants<S> {
    /// Free electron in vacuum.
    pub fn electron() -> Self {
        Self { hbar: S::of(HBAR_SI), mass: S::of(ELECTRON_MASS_SI) }
    }

    pub fn new(hbar: S, mass: S) -> Result<Self> {
        if !(hbar > S::zero()) || !hbar.is_finite() {
            return Err(Error::config("hbar must be finite and > 0"));
        }
        if !(mass > S::zero()) || !mass.is_finite() {
            return Err(Error::config("mass must be finite and > 0"));
        }
        Ok(Self { hbar, mass })
    }
}

/// Spatial/momentum discretization of the simulated domain.
///
/// Space is the half-open box `[0, nx*dx) x [0, ny*dy)` split into uniform
/// cells. Momentum lives on the integer lattice `mx in [-np_x, np_x]`,
/// `my in [-np_y, np_y]` with step `dp`; a particle's momentum is always an
/// exact lattice multiple.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<S: Scalar> {
    pub nx: usize,
    pub ny: usize,
    /// Cell size along x (m).
    pub dx: S,
    /// Cell size along y (m).
    pub dy: S,
    /// Coherence length (m). Fixes `dp` and the kernel window.
    pub lc: S,
    /// Momentum step (kg*m/s), `dp * lc = pi * hbar`.
    pub dp: S,
    /// Momentum half-range along x: indices span `[-np_x, +np_x]`.
    pub np_x: i32,
    /// Momentum half-range along y.
    pub np_y: i32,
    /// Kernel window half-width in cells along x: `round(lc / (2 dx))`.
    pub w_x: i32,
    /// Kernel window half-width in cells along y.
    pub w_y: i32,
    /// Reduced Planck constant the grid was built with (J*s).
    pub hbar: S,
}

impl<S: Scalar> GridSpec<S> {
    /// Build a grid with the default momentum half-ranges `nx/2`, `ny/2`.
    pub fn build(
        nx: usize,
        ny: usize,
        dx: S,
        dy: S,
        lc: S,
        constants: &PhysicalConstants<S>,
    ) -> Result<Self> {
        let np_x = (nx / 2).max(1) as i32;
        let np_y = if ny == 1 { 0 } else { (ny / 2).max(1) as i32 };
        Self::build_with_momentum(nx, ny, dx, dy, lc, np_x, np_y, constants)
    }

    /// Build a grid with explicit momentum half-ranges.
    #[allow(clippy::too_many_arguments)]
    pub fn build_with_momentum(
        nx: usize,
        ny: usize,
        dx: S,
        dy: S,
        lc: S,
        np_x: i32,
        np_y: i32,
        constants: &PhysicalConstants<S>,
    ) -> Result<Self> {
        if nx < 1 || ny < 1 {
            return Err(Error::config("grid must have at least one cell per axis"));
        }
        for (name, v) in [("dx", dx), ("dy", dy), ("lc", lc)] {
            if !(v > S::zero()) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and > 0")));
            }
        }
        if np_x < 0 || np_y < 0 {
            return Err(Error::config("momentum half-ranges must be >= 0"));
        }
        let lx = dx * S::of_usize(nx);
        let ly = dy * S::of_usize(ny);
        if lc > lx || lc > ly {
            return Err(Error::config(format!(
                "coherence length {lc} exceeds domain extent ({lx} x {ly})"
            )));
        }
        let w_x = (lc / (dx + dx)).round().as_f64() as i32;
        let w_y = (lc / (dy + dy)).round().as_f64() as i32;
        if w_x < 1 || w_y < 1 {
            return Err(Error::config(
                "coherence length must span at least two cells per axis",
            ));
        }
        let dp = S::pi() * constants.hbar / lc;
        Ok(Self { nx, ny, dx, dy, lc, dp, np_x, np_y, w_x, w_y, hbar: constants.hbar })
    }

    /// Domain extent along x (m).
    #[inline]
    pub fn lx(&self) -> S {
        self.dx * S::of_usize(self.nx)
    }

    /// Domain extent along y (m).
    #[inline]
    pub fn ly(&self) -> S {
        self.dy * S::of_usize(self.ny)
    }

    /// Cell-center coordinates of cell `(i, j)`.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> (S, S) {
        let half = S::of(0.5);
        (
            (S::of_usize(i) + half) * self.dx,
            (S::of_usize(j) + half) * self.dy,
        )
    }

    /// Cell containing `(x, y)`, or `None` outside the half-open domain.
    #[inline]
    pub fn locate_cell(&self, x: S, y: S) -> Option<(usize, usize)> {
        if x < S::zero() || y < S::zero() {
            return None;
        }
        let i = (x / self.dx).floor().as_f64() as i64;
        let j = (y / self.dy).floor().as_f64() as i64;
        if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
            return None;
        }
        // Guard against x/dx rounding up across the upper domain edge.
        if x >= self.lx() || y >= self.ly() {
            return None;
        }
        Some((i as usize, j as usize))
    }

    /// Number of momentum lattice points `(2 np_x + 1)(2 np_y + 1)`.
    #[inline]
    pub fn momentum_cells(&self) -> usize {
        (2 * self.np_x as usize + 1) * (2 * self.np_y as usize + 1)
    }

    /// True if the momentum index pair lies on the lattice.
    #[inline]
    pub fn momentum_in_range(&self, mx: i32, my: i32) -> bool {
        mx.abs() <= self.np_x && my.abs() <= self.np_y
    }

    /// Output-layer weight of the on-demand kernel: `-2 dx dy / (hbar lc^2)`.
    #[inline]
    pub fn output_weight(&self) -> S {
        let two = S::of(2.0);
        -(two * self.dx * self.dy) / (self.hbar * self.lc * self.lc)
    }
}

/// Half-plane barrier geometry: the barrier occupies one side of an interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierGeometry<S: Scalar> {
    /// Interface `x = position`; barrier where `x >= position`.
    AxisX { position: S },
    /// Interface `y = position`; barrier where `y >= position`.
    AxisY { position: S },
    /// Interface through `point` with inward normal at `normal_rad` from +x;
    /// barrier where `(c - point) . n >= 0` for cell centers `c`.
    Oblique { point: (S, S), normal_rad: S },
}

impl<S: Scalar> BarrierGeometry<S> {
    /// Half-plane test against a point (usually a cell center).
    #[inline]
    pub fn barrier_side(&self, x: S, y: S) -> bool {
        match *self {
            BarrierGeometry::AxisX { position } => x >= position,
            BarrierGeometry::AxisY { position } => y >= position,
            BarrierGeometry::Oblique { point, normal_rad } => {
                let (nx, ny) = (normal_rad.cos(), normal_rad.sin());
                (x - point.0) * nx + (y - point.1) * ny >= S::zero()
            }
        }
    }
}

/// Piece-wise-constant potential over the spatial grid (J).
///
/// Queries outside the domain return exactly zero; the kernel window is
/// clipped accordingly.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField<S: Scalar> {
    nx: usize,
    ny: usize,
    values: Vec<S>,
    version: u64,
}

impl<S: Scalar> PotentialField<S> {
    /// All-zero field over the grid.
    pub fn zero(grid: &GridSpec<S>) -> Self {
        Self { nx: grid.nx, ny: grid.ny, values: vec![S::zero(); grid.nx * grid.ny], version: 0 }
    }

    /// Build from explicit row-major (`i` major) values.
    pub fn from_values(grid: &GridSpec<S>, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.nx * grid.ny {
            return Err(Error::config(format!(
                "potential has {} values, grid has {} cells",
                values.len(),
                grid.nx * grid.ny
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("potential contains non-finite values"));
        }
        Ok(Self { nx: grid.nx, ny: grid.ny, values, version: 0 })
    }

    /// Step barrier of the given height on one side of an interface.
    ///
    /// Oblique interfaces are rasterized with a cell-center half-plane test.
    pub fn step_barrier(
        grid: &GridSpec<S>,
        height: S,
        geometry: &BarrierGeometry<S>,
    ) -> Result<Self> {
        if !height.is_finite() {
            return Err(Error::config("barrier height must be finite"));
        }
        let mut values = vec![S::zero(); grid.nx * grid.ny];
        if height != S::zero() {
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    let (cx, cy) = grid.cell_center(i, j);
                    if geometry.barrier_side(cx, cy) {
                        values[i * grid.ny + j] = height;
                    }
                }
            }
        }
        Ok(Self { nx: grid.nx, ny: grid.ny, values, version: 0 })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Value at signed cell indices, zero outside the domain.
    #[inline]
    pub fn get(&self, i: i64, j: i64) -> S {
        if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
            S::zero()
        } else {
            self.values[i as usize * self.ny + j as usize]
        }
    }

    /// In-domain value without the zero-extension branch.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> S {
        self.values[i * self.ny + j]
    }

    /// Overwrite one cell and invalidate kernel caches built on this field.
    pub fn set(&mut self, i: usize, j: usize, value: S) {
        assert!(i < self.nx && j < self.ny, "cell out of range");
        self.values[i * self.ny + j] = value;
        self.version += 1;
    }

    /// Monotone tag used to invalidate per-cell kernel tables.
    #[inline]
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Count of nonzero cells.
    pub fn nonzero_cells(&self) -> usize {
        self.values.iter().filter(|v| **v != S::zero()).count()
    }
}
