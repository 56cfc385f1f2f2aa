//! Time stepping, initial-condition sampling, observables and the run driver.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel_net::{CachePolicy, CacheStats, KernelCache, OnDemandKernel};
use crate::particles::{
    absorb_boundary, annihilate_with_scratch, creation_events, drift, AnnihilationScratch,
    Ensemble, SignedParticle,
};
use crate::phase_space::{BarrierGeometry, GridSpec, PhysicalConstants, PotentialField};
use crate::scalar::Scalar;

/// Gaussian initial state: position packet of width `sigma` around
/// `(x0, y0)`, momentum packet of width `hbar/sigma` around `(p0x, p0y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition<S: Scalar> {
    pub x0: S,
    pub y0: S,
    /// Mean momentum (kg*m/s).
    pub p0x: S,
    pub p0y: S,
    /// Packet width (m).
    pub sigma: S,
}

/// Everything a run needs. Immutable while stepping.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<S: Scalar> {
    pub grid: GridSpec<S>,
    pub potential: PotentialField<S>,
    /// Interface geometry for reflection metrics, when the potential is a
    /// step barrier.
    pub barrier: Option<BarrierGeometry<S>>,
    pub constants: PhysicalConstants<S>,
    pub ic: InitialCondition<S>,
    /// Time step (s).
    pub dt: S,
    /// End time (s); the run executes every whole step not exceeding it.
    pub t_end: S,
    /// Times at which density snapshots are taken (s).
    pub snapshot_times: Vec<S>,
    pub n_init: usize,
    /// Annihilate every this many steps.
    pub annihilation_period: u32,
    pub seed: u64,
    pub max_particles: usize,
    /// Abort guard on `gamma * dt` per cell.
    pub max_gamma_dt: S,
    pub workers: usize,
    pub cache_policy: CachePolicy,
    pub cache_max_cells: Option<usize>,
}

impl<S: Scalar> SimConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.potential.nx() != self.grid.nx || self.potential.ny() != self.grid.ny {
            return Err(Error::config("potential shape does not match the grid"));
        }
        if !(self.dt > S::zero()) || !self.dt.is_finite() {
            return Err(Error::config("dt must be finite and > 0"));
        }
        if self.t_end < S::zero() || !self.t_end.is_finite() {
            return Err(Error::config("t_end must be finite and >= 0"));
        }
        for t in &self.snapshot_times {
            if *t < S::zero() || *t > self.t_end {
                return Err(Error::config(format!(
                    "snapshot time {t} outside [0, t_end]"
                )));
            }
        }
        if self.n_init < 1 {
            return Err(Error::config("n_init must be >= 1"));
        }
        if self.annihilation_period < 1 {
            return Err(Error::config("annihilation_period must be >= 1"));
        }
        if !(self.ic.sigma > S::zero()) {
            return Err(Error::config("packet sigma must be > 0"));
        }
        if self.max_particles < self.n_init {
            return Err(Error::config("max_particles must be >= n_init"));
        }
        if !(self.max_gamma_dt > S::zero()) {
            return Err(Error::config("max_gamma_dt must be > 0"));
        }
        if self.workers < 1 {
            return Err(Error::config("workers must be >= 1"));
        }
        Ok(())
    }

    /// Number of whole steps the run executes.
    pub fn n_steps(&self) -> u64 {
        step_not_exceeding(self.t_end, self.dt)
    }
}

/// Largest step index whose time does not exceed `t` (with a one-in-1e9
/// tolerance for the division round-off).
pub fn step_not_exceeding<S: Scalar>(t: S, dt: S) -> u64 {
    ((t / dt).as_f64() + 1e-9).floor().max(0.0) as u64
}

/// Signed density over the spatial grid, normalized by the initial count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid<S: Scalar> {
    nx: usize,
    ny: usize,
    /// Row-major (`i` major) normalized signed weight per cell.
    pub values: Vec<S>,
    /// Simulation time of the snapshot (s).
    pub time: S,
    /// Exact in-domain signed weight at the snapshot.
    pub net_weight: i64,
}

impl<S: Scalar> DensityGrid<S> {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> S {
        self.values[i * self.ny + j]
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }
}

/// Density snapshot taken at a configured time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<S: Scalar> {
    /// The configured time (s); the snapshot is taken at the nearest step
    /// not exceeding it.
    pub requested_time: S,
    pub step: u64,
    pub density: DensityGrid<S>,
}

/// Run-level diagnostics in report-friendly types.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub steps: u64,
    pub wall_seconds: f64,
    pub n_init: usize,
    pub final_particles: usize,
    pub peak_particles: usize,
    pub created_pairs: u64,
    pub discarded_pairs: u64,
    pub annihilated: u64,
    pub absorbed: u64,
    pub absorbed_net: i64,
    pub final_net_weight: i64,
    pub gamma_dt_max: f64,
    pub cache: CacheStats,
    pub cache_entries: usize,
    pub momentum_cells: usize,
    pub warnings: Vec<String>,
}

/// Mutable simulation state.
#[derive(Debug)]
pub struct SimState<S: Scalar> {
    pub ensemble: Ensemble<S>,
    /// Simulation clock (s), `step_index * dt`.
    pub clock: S,
    step_index: u64,
    worker_rngs: Vec<ChaCha8Rng>,
    kernel: OnDemandKernel<S>,
    cache: KernelCache<S>,
    // Step scratch: stamped per-cell slots so per-particle lookups are O(1).
    cell_stamp: Vec<u64>,
    cell_slot: Vec<u32>,
    occupied: Vec<u32>,
    stamp: u64,
    annih_scratch: AnnihilationScratch,
    gamma_dt_max: f64,
    peak_particles: usize,
    warnings: Vec<String>,
}

impl<S: Scalar> SimState<S> {
    /// Fresh state with the ensemble sampled from the configured packet.
    pub fn new(config: &SimConfig<S>) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_rng.set_stream(0);
        let ensemble =
            sample_initial(&config.ic, &config.grid, config.n_init, &mut init_rng)?;
        Self::with_ensemble(config, ensemble)
    }

    /// State over a caller-provided ensemble (scripted runs and tests).
    pub fn with_ensemble(config: &SimConfig<S>, ensemble: Ensemble<S>) -> Result<Self> {
        config.validate()?;
        let workers = config.workers.max(1);
        let worker_rngs = (0..workers)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(k as u64 + 1);
                rng
            })
            .collect();
        let cells = config.grid.nx * config.grid.ny;
        let mut warnings = Vec::new();
        if let Some(w) = packet_margin_warning(&config.ic, &config.grid) {
            warnings.push(w);
        }
        let peak = ensemble.len();
        Ok(Self {
            ensemble,
            clock: S::zero(),
            step_index: 0,
            worker_rngs,
            kernel: OnDemandKernel::new(&config.grid, &config.potential),
            cache: KernelCache::new(config.cache_policy, config.cache_max_cells),
            cell_stamp: vec![0; cells],
            cell_slot: vec![0; cells],
            occupied: Vec::new(),
            stamp: 0,
            annih_scratch: AnnihilationScratch::default(),
            gamma_dt_max: 0.0,
            peak_particles: peak,
            warnings,
        })
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    pub fn cache_entries(&self) -> usize {
        self.cache.entries()
    }

    pub fn gamma_dt_max(&self) -> f64 {
        self.gamma_dt_max
    }

    /// Advance one step: group by cell, build tables on demand, create,
    /// drift, absorb, and periodically annihilate.
    pub fn step(&mut self, config: &SimConfig<S>) -> Result<()> {
        let grid = &config.grid;
        let dt = config.dt;
        self.cache.begin_step();
        self.kernel.refresh(&config.potential);

        // (1) occupied spatial cells
        self.stamp += 1;
        self.occupied.clear();
        for p in &self.ensemble.particles {
            let (i, j) = grid
                .locate_cell(p.x, p.y)
                .expect("particles are in-domain at step start");
            let lin = i * grid.ny + j;
            if self.cell_stamp[lin] != self.stamp {
                self.cell_stamp[lin] = self.stamp;
                self.occupied.push(lin as u32);
            }
        }

        // (2) per occupied cell: cached kernel table, guard on gamma*dt
        for &lin in &self.occupied {
            let cell = (lin as usize / grid.ny, lin as usize % grid.ny);
            let slot = self.cache.get_or_build_slot(
                cell,
                &self.kernel,
                &config.potential,
                grid,
            );
            let lambda = (self.cache.table(slot).gamma * dt).as_f64();
            if lambda > self.gamma_dt_max {
                self.gamma_dt_max = lambda;
            }
            if lambda > config.max_gamma_dt.as_f64() {
                return Err(Error::TimestepTooLarge {
                    gamma_dt: lambda,
                    guard: config.max_gamma_dt.as_f64(),
                    i: cell.0,
                    j: cell.1,
                });
            }
            self.cell_slot[lin as usize] = slot;
        }

        // (3) creation + (4) drift of parents and children, chunked over
        // workers with per-worker RNG streams. Creation reads only the
        // particle's own pre-drift state, so fusing the two phases per
        // particle is equivalent to running them ensemble-wide.
        let ctx = ChunkCtx {
            grid,
            constants: &config.constants,
            cache: &self.cache,
            cell_slot: &self.cell_slot,
            dt,
            max_gamma_dt: config.max_gamma_dt,
        };
        let n = self.ensemble.particles.len();
        let workers = self.worker_rngs.len();
        let outcomes: Vec<Result<ChunkOut<S>>> = if workers == 1 || n == 0 {
            vec![process_chunk(
                &mut self.ensemble.particles[..],
                &mut self.worker_rngs[0],
                &ctx,
            )]
        } else {
            let chunk_size = n.div_ceil(workers).max(1);
            let ctx = &ctx;
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .ensemble
                    .particles
                    .chunks_mut(chunk_size)
                    .zip(self.worker_rngs.iter_mut())
                    .map(|(chunk, rng)| scope.spawn(move || process_chunk(chunk, rng, ctx)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker thread panicked"))
                    .collect()
            })
        };
        for outcome in outcomes {
            let out = outcome?;
            self.ensemble.counters.created_pairs += out.created_pairs;
            self.ensemble.counters.discarded_pairs += out.discarded_pairs;
            if out.created_pairs > 0 {
                self.ensemble.note_mixed_signs();
            }
            self.ensemble.particles.extend(out.children);
        }
        if self.ensemble.len() > config.max_particles {
            return Err(Error::CapacityExceeded {
                count: self.ensemble.len(),
                max: config.max_particles,
            });
        }

        // (5) absorbing boundaries
        absorb_boundary(&mut self.ensemble, grid);

        // (6) periodic annihilation
        if self.step_index % config.annihilation_period as u64 == 0 {
            annihilate_with_scratch(&mut self.ensemble, grid, &mut self.annih_scratch);
        }

        self.step_index += 1;
        self.clock = S::of_i64(self.step_index as i64) * dt;
        self.peak_particles = self.peak_particles.max(self.ensemble.len());
        Ok(())
    }

    /// Current density snapshot.
    pub fn density(&self, config: &SimConfig<S>) -> DensityGrid<S> {
        density(&self.ensemble, &config.grid, config.n_init, self.clock)
    }

    fn report(&self, config: &SimConfig<S>, wall_seconds: f64) -> RunReport {
        RunReport {
            steps: self.step_index,
            wall_seconds,
            n_init: config.n_init,
            final_particles: self.ensemble.len(),
            peak_particles: self.peak_particles,
            created_pairs: self.ensemble.counters.created_pairs,
            discarded_pairs: self.ensemble.counters.discarded_pairs,
            annihilated: self.ensemble.counters.annihilated,
            absorbed: self.ensemble.counters.absorbed,
            absorbed_net: self.ensemble.counters.absorbed_net,
            final_net_weight: self.ensemble.net_weight(),
            gamma_dt_max: self.gamma_dt_max,
            cache: self.cache.stats(),
            cache_entries: self.cache.entries(),
            momentum_cells: config.grid.momentum_cells(),
            warnings: self.warnings.clone(),
        }
    }
}

struct ChunkCtx<'a, S: Scalar> {
    grid: &'a GridSpec<S>,
    constants: &'a PhysicalConstants<S>,
    cache: &'a KernelCache<S>,
    cell_slot: &'a [u32],
    dt: S,
    max_gamma_dt: S,
}

struct ChunkOut<S: Scalar> {
    children: Vec<SignedParticle<S>>,
    created_pairs: u64,
    discarded_pairs: u64,
}

fn process_chunk<S: Scalar>(
    chunk: &mut [SignedParticle<S>],
    rng: &mut ChaCha8Rng,
    ctx: &ChunkCtx<'_, S>,
) -> Result<ChunkOut<S>> {
    let mut out = ChunkOut { children: Vec::new(), created_pairs: 0, discarded_pairs: 0 };
    for p in chunk.iter_mut() {
        let (i, j) = ctx.grid.locate_cell(p.x, p.y).expect("in-domain particle");
        let table = ctx.cache.table(ctx.cell_slot[i * ctx.grid.ny + j]);
        if table.gamma > S::zero() {
            let batch = creation_events(p, table, ctx.dt, ctx.max_gamma_dt, ctx.grid, rng)?;
            out.created_pairs += batch.pairs.len() as u64;
            out.discarded_pairs += batch.discarded_pairs;
            for (a, b) in batch.pairs {
                out.children.push(drift(&a, ctx.dt, ctx.grid, ctx.constants));
                out.children.push(drift(&b, ctx.dt, ctx.grid, ctx.constants));
            }
        }
        *p = drift(p, ctx.dt, ctx.grid, ctx.constants);
    }
    Ok(out)
}

/// Warn when the packet center is closer than 3 sigma to a boundary.
pub fn packet_margin_warning<S: Scalar>(
    ic: &InitialCondition<S>,
    grid: &GridSpec<S>,
) -> Option<String> {
    let three = S::of(3.0);
    let m = three * ic.sigma;
    if ic.x0 < m || ic.y0 < m || grid.lx() - ic.x0 < m || grid.ly() - ic.y0 < m {
        Some(format!(
            "initial packet center ({:.3e}, {:.3e}) m is closer than 3 sigma ({:.3e} m) \
             to an absorbing boundary",
            ic.x0.as_f64(),
            ic.y0.as_f64(),
            m.as_f64()
        ))
    } else {
        None
    }
}

/// Normalized inverse-CDF sampler over a 1D weight table.
struct Discrete1d<S: Scalar> {
    cdf: Vec<S>,
}

impl<S: Scalar> Discrete1d<S> {
    fn new(weights: impl Iterator<Item = S>) -> Option<Self> {
        let mut cdf: Vec<S> = Vec::new();
        let mut running = S::zero();
        for w in weights {
            running = running + w;
            cdf.push(running);
        }
        if running > S::zero() {
            for c in &mut cdf {
                *c = *c / running;
            }
            Some(Self { cdf })
        } else {
            None
        }
    }

    #[inline]
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = S::of(rng.random::<f64>());
        self.cdf.partition_point(|c| *c <= u).min(self.cdf.len() - 1)
    }
}

/// Sample the initial ensemble from the Gaussian packet.
///
/// The packet factorizes per axis in both space and momentum, so cells are
/// drawn from four 1D inverse CDFs evaluated on cell centers / lattice
/// points; the position is uniform inside the chosen spatial cell. The
/// packet is positive, so every sign is +1.
pub fn sample_initial<S: Scalar, R: Rng + ?Sized>(
    ic: &InitialCondition<S>,
    grid: &GridSpec<S>,
    n_init: usize,
    rng: &mut R,
) -> Result<Ensemble<S>> {
    if n_init < 1 {
        return Err(Error::config("n_init must be >= 1"));
    }
    let half = S::of(0.5);
    let gauss = |t: S| (-(t * t)).exp();
    let x_axis = Discrete1d::new((0..grid.nx).map(|i| {
        let xc = (S::of_usize(i) + half) * grid.dx;
        gauss((xc - ic.x0) / ic.sigma)
    }));
    let y_axis = Discrete1d::new((0..grid.ny).map(|j| {
        let yc = (S::of_usize(j) + half) * grid.dy;
        gauss((yc - ic.y0) / ic.sigma)
    }));
    // exp(-(p - p0)^2 sigma^2 / hbar^2), evaluated as ((p - p0) sigma / hbar)^2
    // to keep intermediates in range.
    let mx_axis = Discrete1d::new((-grid.np_x..=grid.np_x).map(|m| {
        let p = S::of_i64(m as i64) * grid.dp;
        gauss((p - ic.p0x) * ic.sigma / grid.hbar)
    }));
    let my_axis = Discrete1d::new((-grid.np_y..=grid.np_y).map(|m| {
        let p = S::of_i64(m as i64) * grid.dp;
        gauss((p - ic.p0y) * ic.sigma / grid.hbar)
    }));
    let (x_axis, y_axis, mx_axis, my_axis) = match (x_axis, y_axis, mx_axis, my_axis) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => {
            return Err(Error::config(
                "initial packet underflows to zero everywhere on the grid; \
                 check x0/y0, sigma and the momentum range",
            ))
        }
    };
    let mut particles = Vec::with_capacity(n_init);
    for _ in 0..n_init {
        let i = x_axis.draw(rng);
        let ux = S::of(rng.random::<f64>());
        let j = y_axis.draw(rng);
        let uy = S::of(rng.random::<f64>());
        let mx = x_axis_index_to_momentum(mx_axis.draw(rng), grid.np_x);
        let my = x_axis_index_to_momentum(my_axis.draw(rng), grid.np_y);
        particles.push(SignedParticle::new(
            (S::of_usize(i) + ux) * grid.dx,
            (S::of_usize(j) + uy) * grid.dy,
            mx,
            my,
            1,
        ));
    }
    Ok(Ensemble::new(particles))
}

#[inline]
fn x_axis_index_to_momentum(k: usize, half_range: i32) -> i32 {
    k as i32 - half_range
}

/// Signed density over spatial cells, normalized by `n_init`.
pub fn density<S: Scalar>(
    ensemble: &Ensemble<S>,
    grid: &GridSpec<S>,
    n_init: usize,
    time: S,
) -> DensityGrid<S> {
    let mut net = vec![0i64; grid.nx * grid.ny];
    let mut total = 0i64;
    for p in &ensemble.particles {
        if let Some((i, j)) = grid.locate_cell(p.x, p.y) {
            net[i * grid.ny + j] += p.sign as i64;
            total += p.sign as i64;
        }
    }
    let norm = S::of_usize(n_init);
    let values = net.iter().map(|&w| S::of_i64(w) / norm).collect();
    DensityGrid { nx: grid.nx, ny: grid.ny, values, time, net_weight: total }
}

/// Full run output: snapshots at the configured times plus diagnostics.
#[derive(Debug)]
pub struct RunOutput<S: Scalar> {
    pub snapshots: Vec<Snapshot<S>>,
    pub report: RunReport,
    pub final_state: SimState<S>,
}

/// Execute a configured run, emitting snapshots at the nearest step not
/// exceeding each configured time.
pub fn run<S: Scalar>(config: &SimConfig<S>) -> Result<RunOutput<S>> {
    let start = Instant::now();
    let mut state = SimState::new(config)?;
    let n_steps = config.n_steps();
    let mut snap_at: Vec<(S, u64)> = config
        .snapshot_times
        .iter()
        .map(|&t| (t, step_not_exceeding(t, config.dt).min(n_steps)))
        .collect();
    snap_at.sort_by(|a, b| a.1.cmp(&b.1));
    let mut snapshots = Vec::with_capacity(snap_at.len());
    let mut pending = snap_at.into_iter().peekable();
    for step in 0..=n_steps {
        while pending.peek().is_some_and(|&(_, s)| s == step) {
            let (requested_time, _) = pending.next().unwrap();
            snapshots.push(Snapshot {
                requested_time,
                step,
                density: state.density(config),
            });
        }
        if step < n_steps {
            state.step(config)?;
        }
    }
    let report = state.report(config, start.elapsed().as_secs_f64());
    Ok(RunOutput { snapshots, report, final_state: state })
}

/// Closed-form free evolution of the Gaussian packet's spatial moments.
///
/// The spatial marginal starts at variance `sigma^2/2`, the momentum
/// marginal has variance `hbar^2/(2 sigma^2)`, and free drift shears them:
/// `mean = x0 + (p0/m) t`, `var = sigma^2/2 + (hbar t / (m sigma))^2 / 2`
/// per axis.
pub fn free_packet_moments<S: Scalar>(
    ic: &InitialCondition<S>,
    t: S,
    constants: &PhysicalConstants<S>,
) -> (S, S, S, S) {
    let half = S::of(0.5);
    let mean_x = ic.x0 + ic.p0x / constants.mass * t;
    let mean_y = ic.y0 + ic.p0y / constants.mass * t;
    let spread = constants.hbar * t / (constants.mass * ic.sigma);
    let var = half * ic.sigma * ic.sigma + half * spread * spread;
    (mean_x, mean_y, var, var)
}

/// Reflection metrics of a snapshot relative to a barrier interface:
/// signed weight on the incident (non-barrier) side and on the barrier side.
pub fn reflection_metrics<S: Scalar>(
    snapshot: &DensityGrid<S>,
    geometry: &BarrierGeometry<S>,
    grid: &GridSpec<S>,
) -> (S, S) {
    let mut reflected = S::zero();
    let mut transmitted = S::zero();
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let (cx, cy) = grid.cell_center(i, j);
            let v = snapshot.at(i, j);
            if geometry.barrier_side(cx, cy) {
                transmitted += v;
            } else {
                reflected += v;
            }
        }
    }
    (reflected, transmitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::ELECTRON_MASS_SI;

    const EV: f64 = 1.602176634e-19;

    fn free_config(n_init: usize, t_end: f64) -> SimConfig<f64> {
        let constants = PhysicalConstants::electron();
        let grid = GridSpec::build(100, 100, 1e-9, 1e-9, 100e-9, &constants).unwrap();
        let potential = PotentialField::zero(&grid);
        let p0 = (2.0 * ELECTRON_MASS_SI * 0.025 * EV).sqrt();
        SimConfig {
            ic: InitialCondition { x0: 35e-9, y0: 50e-9, p0x: p0, p0y: 0.0, sigma: 10e-9 },
            grid,
            potential,
            barrier: None,
            constants,
            dt: 1e-16,
            t_end,
            snapshot_times: vec![],
            n_init,
            annihilation_period: 1,
            seed: 99,
            max_particles: 10_000_000,
            max_gamma_dt: 10.0,
            workers: 1,
            cache_policy: CachePolicy::Retain,
            cache_max_cells: None,
        }
    }

    fn barrier_config(n_init: usize, t_end: f64) -> SimConfig<f64> {
        let mut config = free_config(n_init, t_end);
        let geometry = BarrierGeometry::AxisX { position: 60e-9 };
        config.potential =
            PotentialField::step_barrier(&config.grid, 0.3 * EV, &geometry).unwrap();
        config.barrier = Some(geometry);
        config
    }

    #[test]
    fn sample_initial_signs_and_moments() {
        let config = free_config(40_000, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = sample_initial(&config.ic, &config.grid, config.n_init, &mut rng).unwrap();
        assert_eq!(e.len(), 40_000);
        assert!(e.particles.iter().all(|p| p.sign == 1), "Gaussian packet is positive");

        let n = e.len() as f64;
        let mean_x: f64 = e.particles.iter().map(|p| p.x).sum::<f64>() / n;
        let mean_y: f64 = e.particles.iter().map(|p| p.y).sum::<f64>() / n;
        // Standard error of the mean: sigma/sqrt(2 n) per axis.
        let se = config.ic.sigma / (2.0 * n).sqrt();
        assert!((mean_x - config.ic.x0).abs() <= 4.0 * se, "mean_x off: {mean_x:e}");
        assert!((mean_y - config.ic.y0).abs() <= 4.0 * se, "mean_y off: {mean_y:e}");

        let mean_px: f64 =
            e.particles.iter().map(|p| p.mx as f64 * config.grid.dp).sum::<f64>() / n;
        let se_p = config.constants.hbar / (config.ic.sigma * (2.0 * n).sqrt());
        assert!((mean_px - config.ic.p0x).abs() <= 4.0 * se_p, "mean_px off: {mean_px:e}");
    }

    #[test]
    fn sample_initial_rejects_underflowed_packet() {
        let mut config = free_config(10, 0.0);
        config.ic.sigma = 1e-12; // far below a cell: weights vanish between centers
        config.ic.x0 = 35.0e-9 + 0.49e-9;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(sample_initial(&config.ic, &config.grid, 10, &mut rng).is_err());
    }

    #[test]
    fn margin_warning_fires_near_boundary() {
        let config = free_config(10, 0.0);
        assert!(packet_margin_warning(&config.ic, &config.grid).is_none());
        let close = InitialCondition { x0: 5e-9, ..config.ic };
        assert!(packet_margin_warning(&close, &config.grid).is_some());
    }

    #[test]
    fn zero_potential_step_is_pure_drift() {
        let config = free_config(1, 1e-15);
        let start = SignedParticle::new(35e-9, 50e-9, 3, -2, 1);
        let mut state =
            SimState::with_ensemble(&config, Ensemble::new(vec![start])).unwrap();
        state.step(&config).unwrap();
        assert_eq!(state.ensemble.len(), 1);
        let expected = drift(&start, config.dt, &config.grid, &config.constants);
        assert_eq!(state.ensemble.particles[0], expected);
        assert_eq!(state.ensemble.counters.created_pairs, 0);
        assert_eq!(state.cache_stats().builds, 1, "one occupied cell, one table");
    }

    #[test]
    fn one_table_per_occupied_cell() {
        let config = barrier_config(1, 1e-15);
        // Three particles across two distinct cells.
        let particles = vec![
            SignedParticle::new(10.5e-9, 10.5e-9, 0, 0, 1),
            SignedParticle::new(10.7e-9, 10.2e-9, 1, 0, 1),
            SignedParticle::new(40.5e-9, 70.5e-9, 0, 1, 1),
        ];
        let mut state =
            SimState::with_ensemble(&config, Ensemble::new(particles)).unwrap();
        state.step(&config).unwrap();
        assert_eq!(state.cache_stats().builds, 2);
        assert_eq!(state.cache_stats().hits, 0);
    }

    #[test]
    fn fixed_seed_steps_are_bit_identical() {
        let config = barrier_config(2_000, 2e-16);
        let run_once = || {
            let mut state = SimState::new(&config).unwrap();
            state.step(&config).unwrap();
            state.step(&config).unwrap();
            state.ensemble.particles.clone()
        };
        let a = run_once();
        let b = run_once();
        assert_eq!(a, b);
    }

    #[test]
    fn two_workers_fixed_seed_is_deterministic() {
        let mut config = barrier_config(2_000, 2e-16);
        config.workers = 2;
        let run_once = || {
            let mut state = SimState::new(&config).unwrap();
            state.step(&config).unwrap();
            state.step(&config).unwrap();
            state.ensemble.particles.clone()
        };
        assert_eq!(run_once(), run_once());
    }

    #[test]
    fn density_examples() {
        let config = free_config(10, 0.0);
        let empty = Ensemble::new(vec![]);
        let d = density(&empty, &config.grid, 10, 0.0);
        assert!(d.values.iter().all(|&v| v == 0.0));
        assert_eq!(d.net_weight, 0);

        let single = Ensemble::new(vec![SignedParticle::new(5.5e-9, 7.5e-9, 0, 0, 1)]);
        let d = density(&single, &config.grid, 10, 0.0);
        assert_eq!(d.at(5, 7), 0.1);
        assert_eq!(d.net_weight, 1);
        assert_eq!(d.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn density_matches_analytic_marginal_in_l1() {
        // The sampled spatial law is the normalized Gaussian on cell
        // centers; the L1 gap to it is multinomial noise.
        let config = free_config(100_000, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = sample_initial(&config.ic, &config.grid, config.n_init, &mut rng).unwrap();
        let d = density(&e, &config.grid, config.n_init, 0.0);
        let g = &config.grid;
        let mut weights = vec![0.0f64; g.nx * g.ny];
        let mut total = 0.0;
        for i in 0..g.nx {
            for j in 0..g.ny {
                let (cx, cy) = g.cell_center(i, j);
                let w = (-((cx - config.ic.x0) / config.ic.sigma).powi(2)
                    - ((cy - config.ic.y0) / config.ic.sigma).powi(2))
                .exp();
                weights[i * g.ny + j] = w;
                total += w;
            }
        }
        let l1: f64 = weights
            .iter()
            .zip(d.values.iter())
            .map(|(w, v)| (w / total - v).abs())
            .sum();
        let bound = 5.0 * ((g.nx * g.ny) as f64 / config.n_init as f64).sqrt();
        assert!(l1 <= bound, "L1 {l1} exceeds multinomial bound {bound}");
    }

    #[test]
    fn run_with_t_end_zero_returns_initial_density() {
        let mut config = free_config(500, 0.0);
        config.snapshot_times = vec![0.0];
        let out = run(&config).unwrap();
        assert_eq!(out.snapshots.len(), 1);
        assert_eq!(out.snapshots[0].step, 0);
        assert_eq!(out.snapshots[0].density.net_weight, 500);
        assert_eq!(out.report.steps, 0);
    }

    #[test]
    fn snapshot_steps_align_to_requested_times() {
        let mut config = free_config(100, 150e-15);
        config.dt = 0.1e-15;
        config.snapshot_times = vec![50e-15, 100e-15, 150e-15];
        let steps: Vec<u64> = config
            .snapshot_times
            .iter()
            .map(|&t| step_not_exceeding(t, config.dt))
            .collect();
        assert_eq!(steps, vec![500, 1000, 1500]);
        assert_eq!(config.n_steps(), 1500);
    }

    #[test]
    fn conservation_holds_through_a_barrier_run() {
        let mut config = barrier_config(3_000, 3e-15);
        config.snapshot_times = vec![1e-15, 2e-15, 3e-15];
        let out = run(&config).unwrap();
        assert!(out.report.created_pairs > 0, "creation must be active");
        assert!(out.report.annihilated > 0, "annihilation must be active");
        for snap in &out.snapshots {
            assert_eq!(
                snap.density.net_weight + out.report.absorbed_net,
                config.n_init as i64,
                "net weight must be conserved exactly at step {}",
                snap.step
            );
        }
        // On-demand storage bound: never more than one momentum grid per
        // cached cell.
        let bound = out.report.cache.builds * config.grid.momentum_cells() as u64 * 8;
        assert!(out.report.cache.peak_bytes <= bound);
    }

    #[test]
    fn free_packet_moment_examples() {
        let c = PhysicalConstants::electron();
        let ic = InitialCondition {
            x0: 35e-9,
            y0: 50e-9,
            p0x: 8.5424e-26,
            p0y: 0.0,
            sigma: 10e-9,
        };
        let (mx, my, vx, vy) = free_packet_moments(&ic, 0.0, &c);
        assert_eq!((mx, my), (ic.x0, ic.y0));
        assert_eq!(vx, ic.sigma * ic.sigma / 2.0);
        assert_eq!(vx, vy);

        let rest = InitialCondition { p0x: 0.0, ..ic };
        let (mx, my, _, _) = free_packet_moments(&rest, 150e-15, &c);
        assert_eq!((mx, my), (ic.x0, ic.y0));

        // Hand-computed: var = (10 nm)^2/2 + (hbar * 150 fs / (m * 10 nm))^2 / 2
        //              = 5e-17 + 1.50772e-18 m^2.
        let (_, _, vx, _) = free_packet_moments(&ic, 150e-15, &c);
        let spread = 1.054571817e-34 * 150e-15 / (ELECTRON_MASS_SI * 10e-9);
        let expected = 5e-17 + spread * spread / 2.0;
        assert!((vx - expected).abs() <= 1e-15 * expected);
        assert!((vx - 5.150772e-17).abs() < 1e-22, "var = {vx:e}");
    }

    #[test]
    fn reflection_metrics_examples() {
        let config = barrier_config(10, 0.0);
        let geometry = config.barrier.unwrap();
        // All particles on the incident side.
        let e = Ensemble::new(vec![
            SignedParticle::new(10.5e-9, 10.5e-9, 0, 0, 1),
            SignedParticle::new(20.5e-9, 30.5e-9, 0, 0, 1),
        ]);
        let d = density(&e, &config.grid, 10, 0.0);
        let (r, t) = reflection_metrics(&d, &geometry, &config.grid);
        assert_eq!(t, 0.0);
        assert!((r - 0.2).abs() < 1e-15);

        // Weights partition the total density.
        let e = Ensemble::new(vec![
            SignedParticle::new(10.5e-9, 10.5e-9, 0, 0, 1),
            SignedParticle::new(80.5e-9, 30.5e-9, 0, 0, -1),
        ]);
        let d = density(&e, &config.grid, 10, 0.0);
        let (r, t) = reflection_metrics(&d, &geometry, &config.grid);
        let total: f64 = d.values.iter().sum();
        assert!((r + t - total).abs() <= 1e-12);
    }

    #[test]
    fn aborts_when_capacity_exceeded() {
        let mut config = barrier_config(3_000, 1e-15);
        config.max_particles = 3_000; // any creation overflows
        config.ic.x0 = 55e-9; // sit against the interface for a high rate
        let err = run(&config).unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { .. }));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = free_config(10, 1e-15);
        config.dt = 0.0;
        assert!(config.validate().is_err());
        let mut config = free_config(10, 1e-15);
        config.snapshot_times = vec![2e-15];
        assert!(config.validate().is_err());
        let mut config = free_config(10, 1e-15);
        config.annihilation_period = 0;
        assert!(config.validate().is_err());
    }
}
