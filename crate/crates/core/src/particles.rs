//! The signed-particle ensemble: field-less drift, pair creation and
//! annihilation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel_net::{sample_momentum, CellKernelTable};
use crate::phase_space::{GridSpec, PhysicalConstants};
use crate::scalar::Scalar;

/// One signed particle: continuous position, lattice momentum, unit sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedParticle<S: Scalar> {
    /// Position (m).
    pub x: S,
    pub y: S,
    /// Momentum index along x (momentum = mx * dp).
    pub mx: i32,
    pub my: i32,
    /// +1 or -1.
    pub sign: i8,
}

impl<S: Scalar> SignedParticle<S> {
    pub fn new(x: S, y: S, mx: i32, my: i32, sign: i8) -> Self {
        debug_assert!(sign == 1 || sign == -1);
        Self { x, y, mx, my, sign }
    }
}

/// Event counters carried by an ensemble across its lifetime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounters {
    pub created_pairs: u64,
    pub discarded_pairs: u64,
    /// Particles removed by annihilation.
    pub annihilated: u64,
    /// Particles removed at absorbing boundaries.
    pub absorbed: u64,
    /// Signed weight carried out at absorbing boundaries.
    pub absorbed_net: i64,
}

/// The particle ensemble plus its bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct Ensemble<S: Scalar> {
    pub particles: Vec<SignedParticle<S>>,
    pub counters: EventCounters,
    /// False while every particle carries the same sign; lets the engine
    /// skip annihilation histograms that cannot match anything.
    mixed_signs: bool,
}

impl<S: Scalar> Ensemble<S> {
    pub fn new(particles: Vec<SignedParticle<S>>) -> Self {
        let mixed = particles.windows(2).any(|w| w[0].sign != w[1].sign);
        Self { particles, counters: EventCounters::default(), mixed_signs: mixed }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Sum of signs currently in the ensemble.
    pub fn net_weight(&self) -> i64 {
        self.particles.iter().map(|p| p.sign as i64).sum()
    }

    pub fn mixed_signs(&self) -> bool {
        self.mixed_signs
    }

    pub(crate) fn note_mixed_signs(&mut self) {
        self.mixed_signs = true;
    }
}

/// Field-less drift over `dt`: `x += (mx dp / mass) dt`, momentum and sign
/// untouched.
#[inline]
pub fn drift<S: Scalar>(
    p: &SignedParticle<S>,
    dt: S,
    grid: &GridSpec<S>,
    constants: &PhysicalConstants<S>,
) -> SignedParticle<S> {
    let scale = grid.dp / constants.mass * dt;
    SignedParticle {
        x: p.x + S::of_i64(p.mx as i64) * scale,
        y: p.y + S::of_i64(p.my as i64) * scale,
        mx: p.mx,
        my: p.my,
        sign: p.sign,
    }
}

/// Pairs produced by one particle over one step.
#[derive(Debug, Clone, Default)]
pub struct CreationBatch<S: Scalar> {
    pub pairs: Vec<(SignedParticle<S>, SignedParticle<S>)>,
    /// Pairs dropped whole because a child fell off the momentum lattice.
    pub discarded_pairs: u64,
}

/// Number of events in a rate-`lambda` window by inverse-transform search.
/// Exact for the guarded range (`lambda <= ~10`); the running product stays
/// well inside normal f64 range there.
pub(crate) fn poisson_count<S: Scalar, R: Rng + ?Sized>(lambda: S, rng: &mut R) -> u64 {
    if lambda <= S::zero() {
        return 0;
    }
    let p0 = (-lambda).exp();
    let u = S::of(rng.random::<f64>());
    let mut count = 0u64;
    let mut prod = p0;
    let mut acc = p0;
    while u > acc && prod > S::zero() && count < 1000 {
        count += 1;
        prod = prod * lambda / S::of_i64(count as i64);
        acc = acc + prod;
    }
    count
}

/// Pair creation for one particle over `dt` against its cell's table.
///
/// The event count is Poisson with mean `gamma * dt`; each event draws a
/// momentum offset from the table and spawns children at the parent's
/// position with momenta `p +/- p'` and signs `+/- sign`. A pair with either
/// child off the momentum lattice is discarded whole, keeping the sign
/// balance intact. The parent persists unchanged.
pub fn creation_events<S: Scalar, R: Rng + ?Sized>(
    p: &SignedParticle<S>,
    table: &CellKernelTable<S>,
    dt: S,
    max_gamma_dt: S,
    grid: &GridSpec<S>,
    rng: &mut R,
) -> Result<CreationBatch<S>> {
    let lambda = table.gamma * dt;
    if lambda > max_gamma_dt {
        return Err(Error::TimestepTooLarge {
            gamma_dt: lambda.as_f64(),
            guard: max_gamma_dt.as_f64(),
            i: table.cell.0,
            j: table.cell.1,
        });
    }
    let mut batch = CreationBatch::default();
    if lambda <= S::zero() {
        return Ok(batch);
    }
    let events = poisson_count(lambda, rng);
    for _ in 0..events {
        let u = S::of(rng.random::<f64>());
        let (dmx, dmy) = sample_momentum(table, u);
        let plus = (p.mx + dmx, p.my + dmy);
        let minus = (p.mx - dmx, p.my - dmy);
        if !grid.momentum_in_range(plus.0, plus.1) || !grid.momentum_in_range(minus.0, minus.1) {
            batch.discarded_pairs += 1;
            continue;
        }
        batch.pairs.push((
            SignedParticle::new(p.x, p.y, plus.0, plus.1, p.sign),
            SignedParticle::new(p.x, p.y, minus.0, minus.1, -p.sign),
        ));
    }
    Ok(batch)
}

/// Reusable buffers for the annihilation pass.
#[derive(Debug, Default)]
pub struct AnnihilationScratch {
    keyed: Vec<(u64, u32)>,
    keep: Vec<bool>,
}

/// Remove opposite-sign particles sharing a discretized phase-space cell.
///
/// Particles are binned by `(i, j, mx, my)`; in each bin the first `|net|`
/// particles of the majority sign survive in insertion order, keeping their
/// exact positions. Per-cell net signed weight is preserved.
pub fn annihilate<S: Scalar>(ensemble: &mut Ensemble<S>, grid: &GridSpec<S>) {
    let mut scratch = AnnihilationScratch::default();
    annihilate_with_scratch(ensemble, grid, &mut scratch);
}

pub fn annihilate_with_scratch<S: Scalar>(
    ensemble: &mut Ensemble<S>,
    grid: &GridSpec<S>,
    scratch: &mut AnnihilationScratch,
) {
    if !ensemble.mixed_signs {
        return; // single-sign ensembles have nothing to cancel
    }
    let n = ensemble.particles.len();
    let spx = (2 * grid.np_x + 1) as u64;
    let spy = (2 * grid.np_y + 1) as u64;
    scratch.keyed.clear();
    scratch.keyed.reserve(n);
    for (idx, p) in ensemble.particles.iter().enumerate() {
        let (i, j) = grid
            .locate_cell(p.x, p.y)
            .expect("annihilate runs after boundary absorption");
        debug_assert!(grid.momentum_in_range(p.mx, p.my));
        let key = ((i as u64 * grid.ny as u64 + j as u64) * spx
            + (p.mx + grid.np_x) as u64)
            * spy
            + (p.my + grid.np_y) as u64;
        scratch.keyed.push((key, idx as u32));
    }
    // Lexicographic sort groups cells; the index component keeps insertion
    // order inside each group.
    scratch.keyed.sort_unstable();

    scratch.keep.clear();
    scratch.keep.resize(n, false);
    let keyed = &scratch.keyed;
    let mut start = 0usize;
    while start < keyed.len() {
        let key = keyed[start].0;
        let mut end = start;
        let mut net = 0i64;
        while end < keyed.len() && keyed[end].0 == key {
            net += ensemble.particles[keyed[end].1 as usize].sign as i64;
            end += 1;
        }
        if net != 0 {
            let majority: i8 = if net > 0 { 1 } else { -1 };
            let mut remaining = net.unsigned_abs();
            for &(_, idx) in &keyed[start..end] {
                if remaining == 0 {
                    break;
                }
                if ensemble.particles[idx as usize].sign == majority {
                    scratch.keep[idx as usize] = true;
                    remaining -= 1;
                }
            }
        }
        start = end;
    }

    let keep = &scratch.keep;
    let mut idx = 0usize;
    let before = ensemble.particles.len();
    ensemble.particles.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
    ensemble.counters.annihilated += (before - ensemble.particles.len()) as u64;
}

/// Remove particles outside the half-open domain, tracking count and signed
/// weight of what left.
pub fn absorb_boundary<S: Scalar>(ensemble: &mut Ensemble<S>, grid: &GridSpec<S>) {
    let mut removed = 0u64;
    let mut removed_net = 0i64;
    ensemble.particles.retain(|p| {
        if grid.locate_cell(p.x, p.y).is_some() {
            true
        } else {
            removed += 1;
            removed_net += p.sign as i64;
            false
        }
    });
    ensemble.counters.absorbed += removed;
    ensemble.counters.absorbed_net += removed_net;
}
