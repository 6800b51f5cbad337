//! Gaussian fluctuations around the fluid limit.
//!
//! Two approximations of `Q(n)/n` are simulated here:
//!
//! * the CLT limit `V`, solving `dV = J(Q(t)) V dt + dW(Q(t))` with `J` the
//!   Jacobian of the drift and independent Brownian motions run on the clock
//!   `Q_ij(t)`;
//! * the diffusion `Z(n)`, with drift `F` and per-entry noise variance `F/n`.
//!
//! The diffusion can also be driven pathwise alongside the jump process:
//! [`KmtPaths`] builds, for every pair type, a unit-rate Poisson process and
//! a Brownian motion on a shared internal clock through the dyadic quantile
//! construction, so that `J(u) - u - W(u)` stays logarithmic in `u`. Feeding
//! the Poisson arrivals to the time-changed chain and the Brownian motion to
//! `Z_ij(t) = int F_ij + W_ij(n int F_ij) / n` gives a coupled pair of paths.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, DiscreteCDF, Normal, Poisson};

use crate::ctmc::{simulate_time_changed, simulate_with_rng, ArrivalSource, RecordMode, SimTrajectory};
use crate::error::{Error, Result};
use crate::fluid::{drift_into, integrate_fluid, jacobian_into, FluidSolution};
use crate::model::{ModelParams, PairMatrix, PopulationCounts, PopulationFractions, SquareMatrix};
use crate::ode::{self, OdeOptions, StepAction};
use crate::rng::{self, ChaCha8Rng};

/// Largest accepted time step for both simulators.
pub const MAX_DT: f64 = 1e-2;

/// Integrator tolerance for the fluid path the simulators linearize around.
const FLUID_RTOL: f64 = 1e-10;

fn check_dt(dt: f64, t_end: f64) -> Result<usize> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::InvalidArgument(format!("dt = {dt} outside (0, {MAX_DT}]")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end} must be positive")));
    }
    Ok((t_end / dt).ceil() as usize)
}

fn check_k(params: &ModelParams, fractions: &PopulationFractions) -> Result<()> {
    if params.k() != fractions.k() {
        return Err(Error::DimensionMismatch(format!(
            "params have k = {}, fractions have k = {}",
            params.k(),
            fractions.k()
        )));
    }
    Ok(())
}

/// Sampled path of the CLT limit process.
#[derive(Clone, Debug, PartialEq)]
pub struct FluctuationPath {
    pub times: Vec<f64>,
    pub v: Vec<PairMatrix>,
}

/// The fluid path and its Jacobians on a uniform grid, reused across paths.
#[derive(Clone, Debug)]
pub struct CltSimulator {
    k: usize,
    times: Vec<f64>,
    /// `sqrt(Q(t_{m+1}) - Q(t_m))` per step and entry.
    noise_sd: Vec<Vec<f64>>,
    /// `J(Q(t_m))` per step.
    jacobians: Vec<Vec<f64>>,
    dt: f64,
}

impl CltSimulator {
    pub fn new(params: &ModelParams, fractions: &PopulationFractions, t_end: f64, dt: f64) -> Result<Self> {
        check_k(params, fractions)?;
        check_dt(dt, t_end)?;
        let fluid = integrate_fluid(params, fractions, t_end, FLUID_RTOL)?;
        Self::from_fluid(params, fractions, &fluid, t_end, dt)
    }

    /// Uses an existing fluid solution, which must cover `[0, t_end]`.
    pub fn from_fluid(
        params: &ModelParams,
        fractions: &PopulationFractions,
        fluid: &FluidSolution,
        t_end: f64,
        dt: f64,
    ) -> Result<Self> {
        check_k(params, fractions)?;
        let steps = check_dt(dt, t_end)?;
        if fluid.t_end() < t_end || fluid.k() != params.k() {
            return Err(Error::MissingFluidSolution(t_end));
        }
        let k = params.k();
        let h = t_end / steps as f64;
        let times: Vec<f64> = (0..=steps).map(|m| (m as f64 * h).min(t_end)).collect();
        let qs: Vec<PairMatrix> = times
            .iter()
            .map(|&t| fluid.eval(t).ok_or(Error::MissingFluidSolution(t)))
            .collect::<Result<_>>()?;
        let noise_sd = qs
            .windows(2)
            .map(|w| {
                w[1].as_slice()
                    .iter()
                    .zip(w[0].as_slice())
                    .map(|(b, a)| (b - a).max(0.0).sqrt())
                    .collect()
            })
            .collect();
        let jacobians = qs[..steps]
            .iter()
            .map(|q| {
                let mut jac = vec![0.0; k.pow(4)];
                jacobian_into(params.pi(), fractions.x(), fractions.y(), q, &mut jac);
                jac
            })
            .collect();
        Ok(Self {
            k,
            times,
            noise_sd,
            jacobians,
            dt: h,
        })
    }

    /// One Euler-Maruyama path from stream `stream` of `seed`, with every
    /// Brownian increment multiplied by `noise_scale`.
    pub fn path(&self, seed: u64, stream: u64, noise_scale: f64) -> FluctuationPath {
        let mut rng = rng::stream(seed, stream);
        let dim = self.k * self.k;
        let mut v = vec![0.0; dim];
        let mut jv = vec![0.0; dim];
        let mut out = Vec::with_capacity(self.times.len());
        out.push(PairMatrix::zeros(self.k));
        for (jac, sd) in self.jacobians.iter().zip(&self.noise_sd) {
            for (r, o) in jv.iter_mut().enumerate() {
                *o = (0..dim).map(|c| jac[r * dim + c] * v[c]).sum();
            }
            for r in 0..dim {
                let xi: f64 = StandardNormal.sample(&mut rng);
                v[r] += self.dt * jv[r] + noise_scale * sd[r] * xi;
            }
            out.push(PairMatrix::from_row_major(self.k, v.clone()).expect("k*k entries"));
        }
        FluctuationPath {
            times: self.times.clone(),
            v: out,
        }
    }

    /// `V(t_end)` only, for Monte Carlo statistics.
    pub fn endpoint(&self, seed: u64, stream: u64) -> Vec<f64> {
        self.path(seed, stream, 1.0).v.pop().expect("non-empty path").as_slice().to_vec()
    }
}

/// One path of the CLT limit on `[0, t_end]` with step `dt <= 1e-2`.
pub fn simulate_clt_limit(
    params: &ModelParams,
    fractions: &PopulationFractions,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<FluctuationPath> {
    Ok(CltSimulator::new(params, fractions, t_end, dt)?.path(seed, 0, 1.0))
}

/// Exact covariance of `V(t)`, row-major `k^2 x k^2`, from the Lyapunov
/// equation `S' = J S + S J^T + diag(F(Q))`.
pub fn clt_covariance(params: &ModelParams, fractions: &PopulationFractions, t: f64) -> Result<SquareMatrix> {
    check_k(params, fractions)?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t = {t} must be positive")));
    }
    let k = params.k();
    let dim = k * k;
    let (pi, x, y) = (params.pi(), fractions.x(), fractions.y());
    let mut jac = vec![0.0; dim * dim];
    let mut drift = vec![0.0; dim];
    let sol = ode::integrate(
        |_, s, out| {
            let (q, sigma) = s.split_at(dim);
            let (dq, dsigma) = out.split_at_mut(dim);
            drift_into(pi, x, y, q, &mut drift);
            dq.copy_from_slice(&drift);
            let qm = PairMatrix::from_row_major(k, q.to_vec()).expect("k*k entries");
            jacobian_into(pi, x, y, &qm, &mut jac);
            for r in 0..dim {
                for c in 0..dim {
                    let mut acc = 0.0;
                    for l in 0..dim {
                        acc += jac[r * dim + l] * sigma[l * dim + c] + sigma[r * dim + l] * jac[c * dim + l];
                    }
                    if r == c {
                        acc += drift[r];
                    }
                    dsigma[r * dim + c] = acc;
                }
            }
        },
        0.0,
        &vec![0.0; dim + dim * dim],
        t,
        &OdeOptions::new(1e-11, 1e-13),
        |_, _| StepAction::Continue,
    )?;
    SquareMatrix::from_row_major(dim, sol.last_state()[dim..].to_vec())
}

/// Sampled path of the diffusion approximation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionPath {
    pub n: u64,
    pub times: Vec<f64>,
    pub z: Vec<PairMatrix>,
}

impl DiffusionPath {
    /// Linear interpolation between grid points.
    pub fn eval(&self, t: f64) -> Option<PairMatrix> {
        let last = *self.times.last()?;
        if !(t >= 0.0 && t <= last) {
            return None;
        }
        let m = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        if m + 1 >= self.times.len() {
            return Some(self.z[m].clone());
        }
        let (ta, tb) = (self.times[m], self.times[m + 1]);
        let w = (t - ta) / (tb - ta);
        let (a, b) = (&self.z[m], &self.z[m + 1]);
        Some(PairMatrix::from_fn(a.k(), |i, j| a[(i, j)] + w * (b[(i, j)] - a[(i, j)])))
    }
}

/// Drift increment over one step by the classical fourth-order Runge-Kutta
/// rule.
fn rk4_increment(pi: &SquareMatrix, x: &[f64], y: &[f64], z: &[f64], h: f64, out: &mut [f64]) {
    let dim = z.len();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];
    drift_into(pi, x, y, z, &mut k1);
    for d in 0..dim {
        stage[d] = z[d] + 0.5 * h * k1[d];
    }
    drift_into(pi, x, y, &stage, &mut k2);
    for d in 0..dim {
        stage[d] = z[d] + 0.5 * h * k2[d];
    }
    drift_into(pi, x, y, &stage, &mut k3);
    for d in 0..dim {
        stage[d] = z[d] + h * k3[d];
    }
    drift_into(pi, x, y, &stage, &mut k4);
    for d in 0..dim {
        out[d] = h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
    }
}

/// Entrywise clamp into the state space: negative entries go to zero, then
/// any row or column whose sum exceeds its margin is scaled back onto it.
pub fn project_to_state_space(z: &mut [f64], x: &[f64], y: &[f64]) {
    let k = x.len();
    for v in z.iter_mut() {
        *v = v.max(0.0);
    }
    for i in 0..k {
        let s: f64 = z[i * k..(i + 1) * k].iter().sum();
        if s > x[i] {
            let c = if s > 0.0 { x[i] / s } else { 0.0 };
            z[i * k..(i + 1) * k].iter_mut().for_each(|v| *v *= c);
        }
    }
    for j in 0..k {
        let s: f64 = (0..k).map(|i| z[i * k + j]).sum();
        if s > y[j] {
            let c = if s > 0.0 { y[j] / s } else { 0.0 };
            (0..k).for_each(|i| z[i * k + j] *= c);
        }
    }
}

fn check_n(n: u64) -> Result<()> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!("n = {n} must be at least 10")));
    }
    Ok(())
}

/// Diffusion on `[0, t_end]` driven by caller-supplied standard Brownian
/// increments in real time: `noise(step, out)` fills `out` with the `k^2`
/// increments over step `step`, each of variance `h = t_end / steps`.
/// The drift part of each step uses the fourth-order Runge-Kutta rule, the
/// noise part the Euler-Maruyama rule.
pub fn simulate_diffusion_driven(
    params: &ModelParams,
    fractions: &PopulationFractions,
    n: u64,
    t_end: f64,
    steps: usize,
    noise_scale: f64,
    mut noise: impl FnMut(usize, &mut [f64]),
) -> Result<DiffusionPath> {
    check_k(params, fractions)?;
    check_n(n)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let k = params.k();
    let dim = k * k;
    let (pi, x, y) = (params.pi(), fractions.x(), fractions.y());
    let h = t_end / steps as f64;
    let inv_n = 1.0 / n as f64;
    let mut z = vec![0.0; dim];
    let mut drift = vec![0.0; dim];
    let mut incr = vec![0.0; dim];
    let mut db = vec![0.0; dim];
    let mut times = Vec::with_capacity(steps + 1);
    let mut path = Vec::with_capacity(steps + 1);
    times.push(0.0);
    path.push(PairMatrix::zeros(k));
    for step in 0..steps {
        drift_into(pi, x, y, &z, &mut drift);
        rk4_increment(pi, x, y, &z, h, &mut incr);
        noise(step, &mut db);
        for d in 0..dim {
            z[d] += incr[d] + noise_scale * (drift[d].max(0.0) * inv_n).sqrt() * db[d];
        }
        project_to_state_space(&mut z, x, y);
        times.push(((step + 1) as f64 * h).min(t_end));
        path.push(PairMatrix::from_row_major(k, z.clone()).expect("k*k entries"));
    }
    Ok(DiffusionPath { n, times, z: path })
}

/// Diffusion approximation at population size `n >= 10` with step `dt <= 1e-2`.
pub fn simulate_diffusion(
    params: &ModelParams,
    fractions: &PopulationFractions,
    n: u64,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<DiffusionPath> {
    simulate_diffusion_scaled(params, fractions, n, t_end, dt, seed, 1.0)
}

/// [`simulate_diffusion`] with the noise multiplied by `noise_scale`; zero
/// gives the deterministic fluid path.
pub fn simulate_diffusion_scaled(
    params: &ModelParams,
    fractions: &PopulationFractions,
    n: u64,
    t_end: f64,
    dt: f64,
    seed: u64,
    noise_scale: f64,
) -> Result<DiffusionPath> {
    let steps = check_dt(dt, t_end)?;
    let h = t_end / steps as f64;
    let sd = h.sqrt();
    let mut rng = rng::stream(seed, 0);
    simulate_diffusion_driven(params, fractions, n, t_end, steps, noise_scale, |_, out| {
        for o in out.iter_mut() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *o = sd * xi;
        }
    })
}

/// Brownian motions on the internal clocks `u_ij = n int F_ij`, queried
/// forward in `u`.
pub trait BrownianSource {
    /// `W_c(u + du) - W_c(u)` where `u` is the channel's current clock;
    /// advances the clock by `du >= 0`.
    fn increment(&mut self, channel: usize, du: f64) -> f64;
}

/// Diffusion in the time-changed form
/// `Z_ij(t) = int_0^t F_ij(Z) ds + W_ij(n int_0^t F_ij(Z) ds) / n`.
pub fn simulate_diffusion_time_changed<S: BrownianSource>(
    params: &ModelParams,
    fractions: &PopulationFractions,
    n: u64,
    t_end: f64,
    dt: f64,
    source: &mut S,
) -> Result<DiffusionPath> {
    check_k(params, fractions)?;
    check_n(n)?;
    let steps = check_dt(dt, t_end)?;
    let k = params.k();
    let dim = k * k;
    let (pi, x, y) = (params.pi(), fractions.x(), fractions.y());
    let h = t_end / steps as f64;
    let nf = n as f64;
    let mut z = vec![0.0; dim];
    let mut incr = vec![0.0; dim];
    let mut times = Vec::with_capacity(steps + 1);
    let mut path = Vec::with_capacity(steps + 1);
    times.push(0.0);
    path.push(PairMatrix::zeros(k));
    for step in 0..steps {
        rk4_increment(pi, x, y, &z, h, &mut incr);
        for c in 0..dim {
            let du = nf * incr[c].max(0.0);
            z[c] += incr[c] + source.increment(c, du) / nf;
        }
        project_to_state_space(&mut z, x, y);
        times.push(((step + 1) as f64 * h).min(t_end));
        path.push(PairMatrix::from_row_major(k, z.clone()).expect("k*k entries"));
    }
    Ok(DiffusionPath { n, times, z: path })
}

/// `Binomial(n, 1/2)` quantile at `p <= 1/2` by summing the mass function
/// (exact for the small counts met deep in the tree).
fn half_binomial_lower_quantile(n: u64, p: f64) -> u64 {
    if n <= 512 {
        let mut pmf = 0.5f64.powi(n as i32);
        let mut cdf = pmf;
        let mut k = 0;
        while cdf < p && k < n {
            pmf *= (n - k) as f64 / (k + 1) as f64;
            k += 1;
            cdf += pmf;
        }
        k
    } else {
        statrs::distribution::Binomial::new(0.5, n)
            .expect("valid binomial")
            .inverse_cdf(p)
    }
}

/// Quantile coupling of a standard normal `xi` with `Binomial(n, 1/2)`,
/// using the symmetry of both laws so only lower tails are inverted.
fn half_binomial_from_normal(n: u64, xi: f64, normal: &Normal) -> u64 {
    if n == 0 {
        return 0;
    }
    if xi <= 0.0 {
        half_binomial_lower_quantile(n, normal.cdf(xi))
    } else {
        n - half_binomial_lower_quantile(n, normal.cdf(-xi))
    }
}

#[derive(Clone, Debug)]
struct KmtChannel {
    seed: u64,
    blocks: usize,
    /// `W` at the grid points `m * leaf` of the internal clock.
    grid_w: Vec<f64>,
    arrivals: Vec<f64>,
    clock: f64,
    w: f64,
    bridge_rng: ChaCha8Rng,
}

/// Poisson processes and Brownian motions coupled through the dyadic
/// quantile construction on blocks of the internal clock.
///
/// Each block of length `leaf * 2^depth` is an independent tree. The root
/// draws a normal `xi` and sets `W(block) = sqrt(len) xi` and the Poisson
/// count to the `Poisson(len)` quantile of `Phi(xi)`; every node then splits
/// its interval in half, drawing the midpoint of `W` from the Brownian bridge
/// and the left count from the `Binomial(count, 1/2)` quantile of the same
/// normal. Leaves place their arrivals uniformly and fill `W` by bridge
/// sampling on demand.
#[derive(Clone, Debug)]
pub struct KmtPaths {
    leaf: f64,
    depth: u32,
    channels: Vec<KmtChannel>,
    normal: Normal,
}

impl KmtPaths {
    pub fn new(seed: u64, channels: usize, leaf: f64, depth: u32) -> Result<Self> {
        if !(leaf > 0.0 && leaf.is_finite()) || depth > 24 {
            return Err(Error::InvalidArgument(format!(
                "leaf = {leaf}, depth = {depth}: need leaf > 0 and depth <= 24"
            )));
        }
        Ok(Self {
            leaf,
            depth,
            channels: (0..channels)
                .map(|c| {
                    let seed = rng::split(seed, c as u64);
                    KmtChannel {
                        seed,
                        blocks: 0,
                        grid_w: vec![0.0],
                        arrivals: Vec::new(),
                        clock: 0.0,
                        w: 0.0,
                        bridge_rng: rng::stream(seed, u64::MAX),
                    }
                })
                .collect(),
            normal: Normal::standard(),
        })
    }

    /// Default resolution: leaves of length 1/2 in blocks of 2^12 leaves.
    pub fn with_defaults(seed: u64, channels: usize) -> Self {
        Self::new(seed, channels, 0.5, 12).expect("valid defaults")
    }

    fn block_len(&self) -> f64 {
        self.leaf * (1u64 << self.depth) as f64
    }

    fn extend(&mut self, c: usize) {
        let len = self.block_len();
        let (leaf, normal) = (self.leaf, self.normal);
        let ch = &mut self.channels[c];
        let start = ch.blocks as f64 * len;
        let mut rng = rng::rng(rng::split(ch.seed, ch.blocks as u64));
        let xi: f64 = StandardNormal.sample(&mut rng);
        let total_w = len.sqrt() * xi;
        let u = if xi <= 0.0 { normal.cdf(xi) } else { normal.cdf(-xi) };
        let poisson = Poisson::new(len).expect("positive mean");
        let count = if xi <= 0.0 {
            poisson.inverse_cdf(u.max(f64::MIN_POSITIVE))
        } else {
            poisson.inverse_cdf((1.0 - u).min(1.0 - f64::EPSILON))
        };
        // depth-first, left before right, so leaves come out in order
        let mut stack = vec![(start, len, total_w, count)];
        let mut w0 = *ch.grid_w.last().expect("grid starts at 0");
        while let Some((a, l, dw, nn)) = stack.pop() {
            if l <= leaf * 1.000_001 {
                w0 += dw;
                ch.grid_w.push(w0);
                let mut pts: Vec<f64> = (0..nn).map(|_| a + l * rng.random::<f64>()).collect();
                pts.sort_by(f64::total_cmp);
                ch.arrivals.extend(pts);
                continue;
            }
            let xi: f64 = StandardNormal.sample(&mut rng);
            let half = 0.5 * l;
            let left_w = 0.5 * dw + (l / 4.0).sqrt() * xi;
            let left_n = half_binomial_from_normal(nn, xi, &normal);
            stack.push((a + half, half, dw - left_w, nn - left_n));
            stack.push((a, half, left_w, left_n));
        }
        ch.blocks += 1;
    }

    fn ensure_clock(&mut self, c: usize, u: f64) {
        while (self.channels[c].grid_w.len() - 1) as f64 * self.leaf < u {
            self.extend(c);
        }
    }

    /// Brownian motion of channel `c` at internal time `u`, sampled forward
    /// from the channel's current clock by Brownian bridges between grid
    /// points.
    fn advance(&mut self, c: usize, u1: f64) -> f64 {
        self.ensure_clock(c, u1);
        let leaf = self.leaf;
        let ch = &mut self.channels[c];
        if u1 <= ch.clock {
            return ch.w;
        }
        let m = ((u1 / leaf).floor() as usize).min(ch.grid_w.len() - 2);
        let g = m as f64 * leaf;
        if g > ch.clock {
            ch.clock = g;
            ch.w = ch.grid_w[m];
        }
        let (b, wb) = ((m + 1) as f64 * leaf, ch.grid_w[m + 1]);
        let w1 = if u1 >= b {
            wb
        } else {
            let span = b - ch.clock;
            let mean = ch.w + (u1 - ch.clock) / span * (wb - ch.w);
            let var = (u1 - ch.clock) * (b - u1) / span;
            let xi: f64 = StandardNormal.sample(&mut ch.bridge_rng);
            mean + var.max(0.0).sqrt() * xi
        };
        ch.clock = u1;
        ch.w = w1;
        w1
    }

    /// Number of arrivals of channel `c` up to internal time `u`, minus `u`,
    /// minus `W_c(u)` on the grid: the coupling defect at grid points.
    pub fn grid_defect(&mut self, c: usize, m: usize) -> f64 {
        let u = m as f64 * self.leaf;
        self.ensure_clock(c, u + self.leaf);
        let ch = &self.channels[c];
        let count = ch.arrivals.partition_point(|&a| a <= u) as f64;
        count - u - ch.grid_w[m]
    }
}

impl ArrivalSource for KmtPaths {
    fn arrival(&mut self, channel: usize, idx: usize) -> f64 {
        while self.channels[channel].arrivals.len() <= idx {
            self.extend(channel);
        }
        self.channels[channel].arrivals[idx]
    }
}

impl BrownianSource for KmtPaths {
    fn increment(&mut self, channel: usize, du: f64) -> f64 {
        let (u0, w0) = (self.channels[channel].clock, self.channels[channel].w);
        self.advance(channel, u0 + du.max(0.0)) - w0
    }
}

/// Independent Brownian motions on the internal clocks, with no coupling
/// to any jump process.
#[derive(Clone, Debug)]
pub struct IndependentBrownian {
    rng: ChaCha8Rng,
}

impl IndependentBrownian {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: rng::stream(seed, 0),
        }
    }
}

impl BrownianSource for IndependentBrownian {
    fn increment(&mut self, _channel: usize, du: f64) -> f64 {
        let xi: f64 = StandardNormal.sample(&mut self.rng);
        du.max(0.0).sqrt() * xi
    }
}

/// A jump-process path and a diffusion path driven by coupled Poisson and
/// Brownian paths.
pub fn coupled_ctmc_diffusion(
    params: &ModelParams,
    pop: &PopulationCounts,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<(SimTrajectory, DiffusionPath)> {
    let k = params.k();
    let mut paths = KmtPaths::with_defaults(seed, k * k);
    let traj = simulate_time_changed(params, pop, &mut paths, t_end, &RecordMode::FullPath)?;
    let fractions = pop.fractions();
    let diff = simulate_diffusion_time_changed(params, &fractions, pop.n(), t_end, dt, &mut paths)?;
    Ok((traj, diff))
}

/// `sup_t max_ij |Q(n)_ij(t)/n - Z_ij(t)|` over the diffusion grid and both
/// sides of every jump, with `Z` interpolated linearly between grid points.
pub fn ctmc_diffusion_distance(traj: &SimTrajectory, diff: &DiffusionPath) -> f64 {
    let k = traj.pattern.k();
    let n = traj.n as f64;
    let t_end = *diff.times.last().expect("non-empty diffusion path");
    let mut scaled = vec![0.0; k * k];
    let mut worst = 0.0_f64;
    let mut events = traj.events.iter().peekable();
    let compare = |scaled: &[f64], z: &PairMatrix, worst: &mut f64| {
        for (a, b) in scaled.iter().zip(z.as_slice()) {
            *worst = worst.max((a - b).abs());
        }
    };
    for (m, &t) in diff.times.iter().enumerate() {
        while let Some(e) = events.peek() {
            if e.t > t || e.t > t_end {
                break;
            }
            let z = diff.eval(e.t).expect("event inside the grid");
            compare(&scaled, &z, &mut worst);
            scaled[e.i * k + e.j] += 1.0 / n;
            compare(&scaled, &z, &mut worst);
            events.next();
        }
        compare(&scaled, &diff.z[m], &mut worst);
    }
    worst
}

/// Covariances of the scaled fluctuations at one time, from the jump
/// process and from the CLT limit.
#[derive(Clone, Debug, Serialize)]
pub struct CovarianceReport {
    pub n: u64,
    pub t: f64,
    pub replicates: usize,
    /// Mean of `sqrt(n) (Q(n)(t)/n - Q(t))`, row-major over pair types.
    pub mean_empirical: Vec<f64>,
    /// Standard errors of `mean_empirical`.
    pub mean_std_error: Vec<f64>,
    pub cov_empirical: SquareMatrix,
    pub cov_limit: SquareMatrix,
    /// `|cov_empirical - cov_limit| / |cov_limit|`, entrywise.
    pub rel_diff: SquareMatrix,
}

fn covariance(samples: &[Vec<f64>]) -> (Vec<f64>, SquareMatrix) {
    let dim = samples[0].len();
    let m = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b / m);
    }
    let mut cov = SquareMatrix::zeros(dim);
    for s in samples {
        for r in 0..dim {
            for c in 0..dim {
                cov[(r, c)] += (s[r] - mean[r]) * (s[c] - mean[c]) / (m - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Empirical covariance of `sqrt(n) (Q(n)(t)/n - Q(t))` over `replicates`
/// jump-process runs, against the covariance of simulated `V(t)`.
/// Populations are rounded from `fractions`, and both the fluid path and the
/// limit process use the rounded fractions.
pub fn empirical_fluctuations(
    params: &ModelParams,
    fractions: &PopulationFractions,
    n: u64,
    t_probe: f64,
    replicates: usize,
    seed: u64,
) -> Result<CovarianceReport> {
    check_k(params, fractions)?;
    if replicates < 1000 {
        return Err(Error::InvalidArgument(format!("replicates = {replicates} must be at least 1000")));
    }
    if !(t_probe > 0.0 && t_probe.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_probe = {t_probe} must be positive")));
    }
    let pop = PopulationCounts::from_fractions(fractions, n)?;
    let fr = pop.fractions();
    let fluid = integrate_fluid(params, &fr, t_probe, FLUID_RTOL)?;
    let q = fluid.eval(t_probe).ok_or(Error::MissingFluidSolution(t_probe))?;
    let root_n = (n as f64).sqrt();
    let jump_seed = rng::split(seed, 0);
    let empirical: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(jump_seed, r as u64);
            let tr = simulate_with_rng(params, &pop, t_probe, &RecordMode::PatternOnly, &mut g);
            tr.pattern
                .as_slice()
                .iter()
                .zip(q.as_slice())
                .map(|(c, qv)| root_n * (c / n as f64 - qv))
                .collect()
        })
        .collect();
    let dt = (t_probe / 1000.0).min(1e-3);
    let clt = CltSimulator::from_fluid(params, &fr, &fluid, t_probe, dt)?;
    let limit_seed = rng::split(seed, 1);
    let limit: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| clt.endpoint(limit_seed, r as u64))
        .collect();
    let (mean, cov_empirical) = covariance(&empirical);
    let (_, cov_limit) = covariance(&limit);
    let dim = mean.len();
    let mean_std_error = (0..dim)
        .map(|d| (cov_empirical[(d, d)] / replicates as f64).sqrt())
        .collect();
    let rel_diff = SquareMatrix::from_fn(dim, |r, c| {
        let l = cov_limit[(r, c)];
        (cov_empirical[(r, c)] - l).abs() / l.abs()
    });
    Ok(CovarianceReport {
        n,
        t: t_probe,
        replicates,
        mean_empirical: mean,
        mean_std_error,
        cov_empirical,
        cov_limit,
        rel_diff,
    })
}
