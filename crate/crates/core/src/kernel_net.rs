//! On-demand evaluation of the discretized kernel.
//!
//! The kernel over a piece-wise-constant potential decomposes into one
//! sine-activation term per nonzero potential cell inside the coherence
//! window, with a closed-form output weight `-2 dx dy / (hbar lc^2)`. No
//! global table is ever materialized: values, creation rates and momentum
//! samplers are produced per spatial cell, only where particles sit.
//!
//! Phase factors `sin/cos(2 (m dx)(M dp)/hbar)` depend on the grid alone and
//! are tabulated once, so per-cell work is pure multiply-accumulate. Cell
//! scans run in a fixed deterministic order and use compensated accumulation,
//! which keeps runs bit-reproducible for a given seed.

use std::collections::HashMap;

use crate::numerics::KahanSum;
use crate::phase_space::{GridSpec, PotentialField};
use crate::scalar::Scalar;

/// A point of the discretized phase space: spatial cell and momentum indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelPoint {
    pub i: usize,
    pub j: usize,
    /// Momentum index along x (momentum = mx * dp).
    pub mx: i32,
    /// Momentum index along y.
    pub my: i32,
}

/// Single hidden-layer unit of the analytic network: the potential value of
/// one cell under a sine activation, zero outside the clamped coherence
/// window around `(point.i, point.j)`.
pub fn neuron<S: Scalar>(
    l1: usize,
    l2: usize,
    point: &KernelPoint,
    v: S,
    grid: &GridSpec<S>,
) -> S {
    let (lo1, hi1, lo2, hi2) = window(grid, point.i, point.j);
    if l1 < lo1 || l1 > hi1 || l2 < lo2 || l2 > hi2 {
        return S::zero();
    }
    let two = S::of(2.0);
    let du = S::of_i64(l1 as i64 - point.i as i64);
    let dv = S::of_i64(l2 as i64 - point.j as i64);
    let pm = S::of_i64(point.mx as i64) * grid.dp;
    let pn = S::of_i64(point.my as i64) * grid.dp;
    let phase = two * (du * grid.dx * pm + dv * grid.dy * pn) / grid.hbar;
    v * phase.sin()
}

/// Clamped coherence window of a spatial cell: `[max(0, i-w_x), min(nx-1, i+w_x)]`
/// per axis, matching the zero extension of the potential.
#[inline]
fn window<S: Scalar>(grid: &GridSpec<S>, i: usize, j: usize) -> (usize, usize, usize, usize) {
    let lo1 = i.saturating_sub(grid.w_x as usize);
    let hi1 = (i + grid.w_x as usize).min(grid.nx - 1);
    let lo2 = j.saturating_sub(grid.w_y as usize);
    let hi2 = (j + grid.w_y as usize).min(grid.ny - 1);
    (lo1, hi1, lo2, hi2)
}

/// Grid-only tables of `sin/cos(2 (m dx)(M dp)/hbar)` for every window offset
/// and momentum index. Built once per grid.
#[derive(Debug, Clone)]
struct PhaseTables<S: Scalar> {
    sin_x: Vec<S>,
    cos_x: Vec<S>,
    sin_y: Vec<S>,
    cos_y: Vec<S>,
    w_x: i32,
    w_y: i32,
    np_x: i32,
    np_y: i32,
}

impl<S: Scalar> PhaseTables<S> {
    fn build(grid: &GridSpec<S>) -> Self {
        let two = S::of(2.0);
        let spx = (2 * grid.np_x + 1) as usize;
        let spy = (2 * grid.np_y + 1) as usize;
        let mut sin_x = Vec::with_capacity((2 * grid.w_x as usize + 1) * spx);
        let mut cos_x = Vec::with_capacity(sin_x.capacity());
        for m in -grid.w_x..=grid.w_x {
            for mx in -grid.np_x..=grid.np_x {
                let arg = two * (S::of_i64(m as i64) * grid.dx)
                    * (S::of_i64(mx as i64) * grid.dp)
                    / grid.hbar;
                sin_x.push(arg.sin());
                cos_x.push(arg.cos());
            }
        }
        let mut sin_y = Vec::with_capacity((2 * grid.w_y as usize + 1) * spy);
        let mut cos_y = Vec::with_capacity(sin_y.capacity());
        for n in -grid.w_y..=grid.w_y {
            for my in -grid.np_y..=grid.np_y {
                let arg = two * (S::of_i64(n as i64) * grid.dy)
                    * (S::of_i64(my as i64) * grid.dp)
                    / grid.hbar;
                sin_y.push(arg.sin());
                cos_y.push(arg.cos());
            }
        }
        Self { sin_x, cos_x, sin_y, cos_y, w_x: grid.w_x, w_y: grid.w_y, np_x: grid.np_x, np_y: grid.np_y }
    }

    #[inline]
    fn x_index(&self, m: i64, mx: i32) -> usize {
        debug_assert!(m.unsigned_abs() <= self.w_x as u64 && mx.abs() <= self.np_x);
        (m + self.w_x as i64) as usize * (2 * self.np_x as usize + 1)
            + (mx + self.np_x) as usize
    }

    /// Row of sin/cos over all `my` for a fixed y offset `n`.
    #[inline]
    fn y_row(&self, n: i64) -> (&[S], &[S]) {
        debug_assert!(n.unsigned_abs() <= self.w_y as u64);
        let spy = 2 * self.np_y as usize + 1;
        let start = (n + self.w_y as i64) as usize * spy;
        (&self.sin_y[start..start + spy], &self.cos_y[start..start + spy])
    }
}

/// Nonzero potential cells grouped by column, sorted row-major. Rebuilt when
/// the potential version changes.
#[derive(Debug, Clone)]
struct PotentialIndex<S: Scalar> {
    version: u64,
    cols: Vec<Vec<(u32, S)>>,
    nonzero: usize,
}

impl<S: Scalar> PotentialIndex<S> {
    fn build(potential: &PotentialField<S>) -> Self {
        let mut cols = vec![Vec::new(); potential.nx()];
        let mut nonzero = 0usize;
        for (i, col) in cols.iter_mut().enumerate() {
            for j in 0..potential.ny() {
                let v = potential.at(i, j);
                if v != S::zero() {
                    col.push((j as u32, v));
                    nonzero += 1;
                }
            }
        }
        Self { version: potential.version(), cols, nonzero }
    }
}

/// The on-demand kernel evaluator for one grid + potential pair.
#[derive(Debug, Clone)]
pub struct OnDemandKernel<S: Scalar> {
    phase: PhaseTables<S>,
    index: PotentialIndex<S>,
}

impl<S: Scalar> OnDemandKernel<S> {
    pub fn new(grid: &GridSpec<S>, potential: &PotentialField<S>) -> Self {
        Self { phase: PhaseTables::build(grid), index: PotentialIndex::build(potential) }
    }

    /// Re-index the potential if its version moved.
    pub fn refresh(&mut self, potential: &PotentialField<S>) {
        if self.index.version != potential.version() {
            self.index = PotentialIndex::build(potential);
        }
    }

    /// Number of nonzero potential cells currently indexed.
    pub fn nonzero_cells(&self) -> usize {
        self.index.nonzero
    }

    /// Kernel value at one phase-space point.
    ///
    /// Sums the window neurons over nonzero potential cells in row-major
    /// order with compensated accumulation; equal to the brute-force double
    /// sum in real arithmetic.
    pub fn kernel_value(
        &self,
        point: &KernelPoint,
        potential: &PotentialField<S>,
        grid: &GridSpec<S>,
    ) -> S {
        debug_assert_eq!(self.index.version, potential.version(), "stale potential index");
        debug_assert!(grid.momentum_in_range(point.mx, point.my), "momentum off the lattice");
        let (lo1, hi1, lo2, hi2) = window(grid, point.i, point.j);
        let mut acc = KahanSum::new();
        for l1 in lo1..=hi1 {
            let col = &self.index.cols[l1];
            if col.is_empty() {
                continue;
            }
            let u = l1 as i64 - point.i as i64;
            let xi = self.phase.x_index(u, point.mx);
            let (sx, cx) = (self.phase.sin_x[xi], self.phase.cos_x[xi]);
            let start = col.partition_point(|&(l2, _)| (l2 as usize) < lo2);
            for &(l2, v) in &col[start..] {
                if l2 as usize > hi2 {
                    break;
                }
                let n = l2 as i64 - point.j as i64;
                let spy = 2 * self.phase.np_y as usize + 1;
                let yi = (n + self.phase.w_y as i64) as usize * spy
                    + (point.my + self.phase.np_y) as usize;
                // sin(a + b) expanded on tabulated factors.
                acc.add(v * (sx * self.phase.cos_y[yi] + cx * self.phase.sin_y[yi]));
            }
        }
        grid.output_weight() * acc.value()
    }

    /// Pair-creation rate of a spatial cell: momentum sum of the positive
    /// kernel part (1/s).
    pub fn gamma(
        &self,
        cell: (usize, usize),
        potential: &PotentialField<S>,
        grid: &GridSpec<S>,
    ) -> S {
        let mut gamma = KahanSum::new();
        self.scan_cell(cell, potential, grid, |vw| {
            if vw > S::zero() {
                gamma.add(vw);
            }
        });
        gamma.value().max(S::zero())
    }

    /// Build the per-cell creation table: rate plus the normalized cumulative
    /// distribution over the momentum lattice (row-major `mx` then `my`).
    pub fn build_cell_table(
        &self,
        cell: (usize, usize),
        potential: &PotentialField<S>,
        grid: &GridSpec<S>,
    ) -> CellKernelTable<S> {
        let mut gamma = KahanSum::new();
        // Plain running sum for the cdf: monotone by construction and its
        // final entry normalizes to exactly 1.
        let mut running = S::zero();
        let mut cdf = Vec::with_capacity(grid.momentum_cells());
        self.scan_cell(cell, potential, grid, |vw| {
            if vw > S::zero() {
                gamma.add(vw);
                running = running + vw;
            }
            cdf.push(running);
        });
        let gamma = gamma.value().max(S::zero());
        if gamma > S::zero() && running > S::zero() {
            for c in &mut cdf {
                *c = *c / running;
            }
        } else {
            cdf = Vec::new();
        }
        CellKernelTable {
            cell,
            gamma,
            cdf,
            built_potential_version: potential.version(),
            np_x: grid.np_x,
            np_y: grid.np_y,
        }
    }

    /// Evaluate the kernel at every momentum lattice point of one spatial
    /// cell, streaming values in row-major `mx` then `my` order.
    ///
    /// The double sine of `x + y` phases is split over the tabulated factors,
    /// so the momentum scan per cell reduces to one cosine/sine pair of
    /// partial sums per active column (`O(window + momentum)` trig-free
    /// multiply-accumulates instead of `O(window * momentum)` sines).
    fn scan_cell(
        &self,
        cell: (usize, usize),
        potential: &PotentialField<S>,
        grid: &GridSpec<S>,
        mut sink: impl FnMut(S),
    ) {
        debug_assert_eq!(self.index.version, potential.version(), "stale potential index");
        let (i, j) = cell;
        debug_assert!(i < grid.nx && j < grid.ny, "cell out of range");
        let (lo1, hi1, lo2, hi2) = window(grid, i, j);
        let spy = 2 * grid.np_y as usize + 1;
        let spx = 2 * grid.np_x as usize + 1;

        // Per active column l1: partial sums over its nonzero cells of
        // V * cos(phase_y) and V * sin(phase_y), for every my.
        let mut active: Vec<(i64, Vec<S>, Vec<S>)> = Vec::new();
        for l1 in lo1..=hi1 {
            let col = &self.index.cols[l1];
            if col.is_empty() {
                continue;
            }
            let start = col.partition_point(|&(l2, _)| (l2 as usize) < lo2);
            if start == col.len() || col[start].0 as usize > hi2 {
                continue;
            }
            let mut c_row = vec![S::zero(); spy];
            let mut s_row = vec![S::zero(); spy];
            for &(l2, v) in &col[start..] {
                if l2 as usize > hi2 {
                    break;
                }
                let (sin_row, cos_row) = self.phase.y_row(l2 as i64 - j as i64);
                for k in 0..spy {
                    c_row[k] += v * cos_row[k];
                    s_row[k] += v * sin_row[k];
                }
            }
            active.push((l1 as i64 - i as i64, c_row, s_row));
        }

        if active.is_empty() {
            for _ in 0..grid.momentum_cells() {
                sink(S::zero());
            }
            return;
        }

        let weight = grid.output_weight();
        let mut col_phases: Vec<(S, S)> = vec![(S::zero(), S::zero()); active.len()];
        for mxk in 0..spx {
            let mx = mxk as i32 - grid.np_x;
            for (slot, (u, _, _)) in col_phases.iter_mut().zip(active.iter()) {
                let xi = self.phase.x_index(*u, mx);
                *slot = (self.phase.sin_x[xi], self.phase.cos_x[xi]);
            }
            for myk in 0..spy {
                let mut acc = KahanSum::new();
                for ((sx, cx), (_, c_row, s_row)) in col_phases.iter().zip(active.iter()) {
                    acc.add(*sx * c_row[myk] + *cx * s_row[myk]);
                }
                sink(weight * acc.value());
            }
        }
    }
}

/// Creation table of one spatial cell: rate and normalized inverse-CDF data
/// for momentum sampling. `cdf` is empty exactly when `gamma == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellKernelTable<S: Scalar> {
    pub cell: (usize, usize),
    /// Pair-creation rate (1/s).
    pub gamma: S,
    /// Cumulative distribution over the momentum lattice, row-major `mx`
    /// then `my`, final entry exactly 1 when non-empty.
    pub cdf: Vec<S>,
    pub built_potential_version: u64,
    np_x: i32,
    np_y: i32,
}

impl<S: Scalar> CellKernelTable<S> {
    /// Assemble a table from explicit parts (synthetic distributions,
    /// fixtures). `cdf` must be empty exactly when `gamma` is zero.
    pub fn from_parts(
        cell: (usize, usize),
        gamma: S,
        cdf: Vec<S>,
        built_potential_version: u64,
        np_x: i32,
        np_y: i32,
    ) -> Self {
        debug_assert_eq!(gamma > S::zero(), !cdf.is_empty());
        Self { cell, gamma, cdf, built_potential_version, np_x, np_y }
    }

    /// Bytes held by the sampling payload.
    #[inline]
    pub fn payload_bytes(&self) -> u64 {
        (self.cdf.len() * std::mem::size_of::<S>()) as u64
    }
}

/// Inverse-CDF momentum draw. `u` must be uniform in `[0, 1)`; a value that
/// lands exactly on a cdf boundary selects the higher-index entry.
///
/// Calling this on a zero-rate table is a programming error.
pub fn sample_momentum<S: Scalar>(table: &CellKernelTable<S>, u: S) -> (i32, i32) {
    assert!(
        table.gamma > S::zero() && !table.cdf.is_empty(),
        "sample_momentum called on a zero-rate table"
    );
    let k = table.cdf.partition_point(|c| *c <= u);
    let k = k.min(table.cdf.len() - 1);
    let spy = 2 * table.np_y as usize + 1;
    let mx = -table.np_x + (k / spy) as i32;
    let my = -table.np_y + (k % spy) as i32;
    (mx, my)
}

/// Cache retention across steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CachePolicy {
    /// Keep tables for as long as the potential version stands (static
    /// potentials; the default).
    #[default]
    Retain,
    /// Drop everything at the start of each step.
    PerStep,
}

/// Counters exposed to the engine for run metadata.
#[derive(Debug, Clone, Copy, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub builds: u64,
    pub evictions: u64,
    pub bytes: u64,
    pub peak_bytes: u64,
}

/// Per-cell table cache keyed by spatial cell, invalidated on potential
/// version changes.
#[derive(Debug)]
pub struct KernelCache<S: Scalar> {
    slots: Vec<Option<CellKernelTable<S>>>,
    last_used: Vec<u64>,
    free: Vec<u32>,
    by_cell: HashMap<(u32, u32), u32>,
    version: u64,
    policy: CachePolicy,
    max_cells: Option<usize>,
    tick: u64,
    stats: CacheStats,
}

impl<S: Scalar> KernelCache<S> {
    pub fn new(policy: CachePolicy, max_cells: Option<usize>) -> Self {
        Self {
            slots: Vec::new(),
            last_used: Vec::new(),
            free: Vec::new(),
            by_cell: HashMap::new(),
            version: 0,
            policy,
            max_cells,
            tick: 0,
            stats: CacheStats::default(),
        }
    }

    /// Hook for the engine at the start of each step.
    pub fn begin_step(&mut self) {
        if self.policy == CachePolicy::PerStep {
            self.clear();
        }
    }

    pub fn clear(&mut self) {
        self.slots.clear();
        self.last_used.clear();
        self.free.clear();
        self.by_cell.clear();
        self.stats.bytes = 0;
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn entries(&self) -> usize {
        self.by_cell.len()
    }

    #[inline]
    pub fn table(&self, slot: u32) -> &CellKernelTable<S> {
        self.slots[slot as usize].as_ref().expect("live cache slot")
    }

    /// Cached table for a cell, building it on a miss. Returns the slot used
    /// by [`Self::table`]; lookups after a potential version bump rebuild.
    pub fn get_or_build_slot(
        &mut self,
        cell: (usize, usize),
        kernel: &OnDemandKernel<S>,
        potential: &PotentialField<S>,
        grid: &GridSpec<S>,
    ) -> u32 {
        if self.version != potential.version() {
            self.clear();
            self.version = potential.version();
        }
        self.tick += 1;
        let key = (cell.0 as u32, cell.1 as u32);
        if let Some(&slot) = self.by_cell.get(&key) {
            self.stats.hits += 1;
            self.last_used[slot as usize] = self.tick;
            return slot;
        }
        if let Some(cap) = self.max_cells {
            if self.by_cell.len() >= cap.max(1) {
                self.evict_lru();
            }
        }
        let table = kernel.build_cell_table(cell, potential, grid);
        self.stats.builds += 1;
        self.stats.bytes += table.payload_bytes();
        self.stats.peak_bytes = self.stats.peak_bytes.max(self.stats.bytes);
        let slot = match self.free.pop() {
            Some(slot) => {
                self.slots[slot as usize] = Some(table);
                self.last_used[slot as usize] = self.tick;
                slot
            }
            None => {
                self.slots.push(Some(table));
                self.last_used.push(self.tick);
                (self.slots.len() - 1) as u32
            }
        };
        self.by_cell.insert(key, slot);
        slot
    }

    /// Spec-level convenience: cached table reference for a cell.
    pub fn get_or_build(
        &mut self,
        cell: (usize, usize),
        kernel: &OnDemandKernel<S>,
        potential: &PotentialField<S>,
        grid: &GridSpec<S>,
    ) -> &CellKernelTable<S> {
        let slot = self.get_or_build_slot(cell, kernel, potential, grid);
        self.table(slot)
    }

    fn evict_lru(&mut self) {
        let mut oldest: Option<(u32, u64)> = None;
        for (&_key, &slot) in self.by_cell.iter() {
            let used = self.last_used[slot as usize];
            if oldest.map_or(true, |(_, t)| used < t) {
                oldest = Some((slot, used));
            }
        }
        if let Some((slot, _)) = oldest {
            if let Some(table) = self.slots[slot as usize].take() {
                self.stats.bytes -= table.payload_bytes();
                self.by_cell.remove(&(table.cell.0 as u32, table.cell.1 as u32));
                self.free.push(slot);
                self.stats.evictions += 1;
            }
        }
    }
}
