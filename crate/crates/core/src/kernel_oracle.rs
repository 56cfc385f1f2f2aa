//! Brute-force kernel computation and the dense 4D baseline.
//!
//! This module is the correctness oracle for the on-demand evaluator and the
//! memory/time baseline it is benchmarked against. It deliberately shares no
//! summation code with `kernel_net`: the double sum below is naive,
//! uncompensated and calls `sin` on the full phase per term.

use crate::error::{Error, Result};
use crate::kernel_net::KernelPoint;
use crate::phase_space::{GridSpec, PotentialField};
use crate::scalar::Scalar;

/// Discretized kernel value by direct double summation over the coherence
/// window, with the potential zero-extended outside the domain.
pub fn kernel_bruteforce<S: Scalar>(
    point: &KernelPoint,
    potential: &PotentialField<S>,
    grid: &GridSpec<S>,
) -> S {
    let two = S::of(2.0);
    let i = point.i as i64;
    let j = point.j as i64;
    let pm = S::of_i64(point.mx as i64) * grid.dp;
    let pn = S::of_i64(point.my as i64) * grid.dp;
    let mut sum = S::zero();
    for m in -(grid.w_x as i64)..=(grid.w_x as i64) {
        for n in -(grid.w_y as i64)..=(grid.w_y as i64) {
            let diff = potential.get(i + m, j + n) - potential.get(i - m, j - n);
            if diff == S::zero() {
                continue;
            }
            let phase = two * (S::of_i64(m) * grid.dx * pm + S::of_i64(n) * grid.dy * pn)
                / grid.hbar;
            sum = sum + phase.sin() * diff;
        }
    }
    -(grid.dx * grid.dy) / (grid.hbar * grid.lc * grid.lc) * sum
}

/// Momentum sum of the positive kernel part at a spatial cell, brute force.
pub fn gamma_bruteforce<S: Scalar>(
    cell: (usize, usize),
    potential: &PotentialField<S>,
    grid: &GridSpec<S>,
) -> S {
    let mut total = S::zero();
    for mx in -grid.np_x..=grid.np_x {
        for my in -grid.np_y..=grid.np_y {
            let v = kernel_bruteforce(
                &KernelPoint { i: cell.0, j: cell.1, mx, my },
                potential,
                grid,
            );
            if v > S::zero() {
                total = total + v;
            }
        }
    }
    total
}

/// Fully precomputed kernel over the discretized phase space.
///
/// This is the representation whose size is cursed by dimensionality; it
/// exists to quantify exactly what the on-demand evaluator avoids.
#[derive(Debug, Clone)]
pub struct DenseKernel<S: Scalar> {
    nx: usize,
    ny: usize,
    np_x: i32,
    np_y: i32,
    values: Vec<S>,
    /// Exact table size: entries * size_of::<S>().
    pub memory_bytes: u64,
}

impl<S: Scalar> DenseKernel<S> {
    #[inline]
    pub fn entries(&self) -> u64 {
        self.values.len() as u64
    }

    #[inline]
    pub fn get(&self, point: &KernelPoint) -> S {
        debug_assert!(point.i < self.nx && point.j < self.ny);
        let spx = 2 * self.np_x as usize + 1;
        let spy = 2 * self.np_y as usize + 1;
        let idx = ((point.i * self.ny + point.j) * spx + (point.mx + self.np_x) as usize) * spy
            + (point.my + self.np_y) as usize;
        self.values[idx]
    }
}

/// Byte count a dense table for this grid would occupy.
pub fn dense_bytes<S: Scalar>(grid: &GridSpec<S>) -> u64 {
    dense_entries(grid) * std::mem::size_of::<S>() as u64
}

/// Entry count of a dense table for this grid.
pub fn dense_entries<S: Scalar>(grid: &GridSpec<S>) -> u64 {
    grid.nx as u64 * grid.ny as u64 * grid.momentum_cells() as u64
}

/// Precompute the dense table, refusing up front if it would exceed
/// `max_bytes`. The refusal reports the would-be size.
pub fn precompute_dense<S: Scalar>(
    potential: &PotentialField<S>,
    grid: &GridSpec<S>,
    max_bytes: u64,
) -> Result<DenseKernel<S>> {
    let entries = dense_entries(grid);
    let required = dense_bytes(grid);
    if required > max_bytes {
        return Err(Error::MemoryCap { required, entries, cap: max_bytes });
    }
    let mut values = Vec::with_capacity(entries as usize);
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            for mx in -grid.np_x..=grid.np_x {
                for my in -grid.np_y..=grid.np_y {
                    values.push(kernel_bruteforce(
                        &KernelPoint { i, j, mx, my },
                        potential,
                        grid,
                    ));
                }
            }
        }
    }
    Ok(DenseKernel { nx: grid.nx, ny: grid.ny, np_x: grid.np_x, np_y: grid.np_y, values, memory_bytes: required })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::PhysicalConstants;

    fn small_grid(n: usize) -> GridSpec<f64> {
        let dx = 1e-9;
        GridSpec::build(n, n, dx, dx, n as f64 * dx, &PhysicalConstants::electron()).unwrap()
    }

    #[test]
    fn zero_potential_gives_zero_kernel() {
        let g = small_grid(8);
        let v = PotentialField::zero(&g);
        for mx in -g.np_x..=g.np_x {
            assert_eq!(
                kernel_bruteforce(&KernelPoint { i: 3, j: 4, mx, my: 1 }, &v, &g),
                0.0
            );
        }
    }

    #[test]
    fn single_cell_matches_closed_form() {
        // One nonzero cell: the double sum collapses to the two mirror terms,
        // i.e. -2 V dx dy / (hbar lc^2) * sin(2 ((i'-i) dx M dp + (j'-j) dy N dp)/hbar).
        let g = small_grid(8);
        let mut v = PotentialField::zero(&g);
        let (ip, jp) = (5usize, 2usize);
        let vv = 3.2e-20;
        v.set(ip, jp, vv);
        for (i, j, mx, my) in [(3, 3, 1, -2), (5, 2, 4, 4), (4, 1, -3, 0), (6, 4, 2, 3)] {
            let got = kernel_bruteforce(&KernelPoint { i, j, mx, my }, &v, &g);
            let pm = mx as f64 * g.dp;
            let pn = my as f64 * g.dp;
            let phase = 2.0
                * ((ip as i64 - i as i64) as f64 * g.dx * pm
                    + (jp as i64 - j as i64) as f64 * g.dy * pn)
                / g.hbar;
            let expected = -2.0 * vv / (g.hbar * g.lc * g.lc) * phase.sin() * g.dx * g.dy;
            let scale = 2.0 * vv * g.dx * g.dy / (g.hbar * g.lc * g.lc);
            assert!(
                (got - expected).abs() <= 1e-13 * got.abs().max(expected.abs()).max(1e-6 * scale),
                "point ({i},{j},{mx},{my}): got {got:e}, expected {expected:e}"
            );
        }
    }

    #[test]
    fn antisymmetric_in_momentum() {
        let g = small_grid(8);
        let mut v = PotentialField::zero(&g);
        v.set(1, 1, 1e-20);
        v.set(6, 3, -2e-20);
        v.set(4, 6, 5e-21);
        for (mx, my) in [(1, 0), (2, -3), (-4, 4), (3, 1)] {
            let a = kernel_bruteforce(&KernelPoint { i: 4, j: 4, mx, my }, &v, &g);
            let b = kernel_bruteforce(&KernelPoint { i: 4, j: 4, mx: -mx, my: -my }, &v, &g);
            assert!((a + b).abs() <= 1e-24, "({mx},{my}): {a:e} vs {b:e}");
        }
    }

    #[test]
    fn dense_precompute_respects_cap() {
        let g = GridSpec::build(100, 100, 1e-9, 1e-9, 100e-9, &PhysicalConstants::electron())
            .unwrap();
        let v = PotentialField::zero(&g);
        let err = precompute_dense(&v, &g, 4_000_000_000).unwrap_err();
        match err {
            Error::MemoryCap { required, entries, cap } => {
                assert_eq!(entries, 100 * 100 * 101 * 101);
                assert_eq!(required, 100 * 100 * 101 * 101 * 8);
                assert_eq!(cap, 4_000_000_000);
            }
            other => panic!("expected MemoryCap, got {other:?}"),
        }
    }

    #[test]
    fn dense_zero_potential_is_all_zero() {
        let g = small_grid(4);
        let v = PotentialField::zero(&g);
        let dense = precompute_dense(&v, &g, u64::MAX).unwrap();
        assert_eq!(dense.entries(), 4 * 4 * 5 * 5);
        assert_eq!(dense.memory_bytes, dense.entries() * 8);
        for i in 0..4 {
            for mx in -2..=2 {
                assert_eq!(dense.get(&KernelPoint { i, j: 2, mx, my: 1 }), 0.0);
            }
        }
    }
}
