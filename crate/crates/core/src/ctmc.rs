//! Exact simulation of the finite-population pair-type chain `Q(n)(t)`.
//!
//! From state `M` the chain jumps to `M + I^ij` at rate
//! `pi_ij (x_i - M_i.) (y_j - M_.j) / (n - M_tot)`, and is absorbed once all
//! `n` pairs have formed. Two samplers are provided:
//!
//! * [`simulate`] uses the direct method (exponential holding time, then a
//!   categorical choice of pair type);
//! * [`simulate_time_changed`] drives every pair type by its own unit-rate
//!   Poisson process run at the integrated rate (next-reaction method).
//!   Feeding the same Poisson paths to several population sizes couples the
//!   runs pathwise, which is what [`simulate_coupled`] does.
//!
//! [`exact_pattern_oracle`] computes the expected mating pattern exactly for
//! small populations by propagating the jump-chain distribution level by
//! level.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fluid::FluidSolution;
use crate::model::{ModelParams, PairMatrix, PopulationCounts, PopulationFractions};
use crate::rng::{self, ChaCha8Rng};

/// Largest number of events stored in [`RecordMode::FullPath`].
pub const MAX_RECORDED_EVENTS: usize = 10_000_000;

/// Largest state space accepted by [`exact_pattern_oracle`].
pub const ORACLE_STATE_LIMIT: usize = 1_000_000;

/// What a simulation keeps besides the final state.
#[derive(Clone, Debug, PartialEq)]
pub enum RecordMode {
    /// Every event, up to [`MAX_RECORDED_EVENTS`].
    FullPath,
    /// Only the final pattern.
    PatternOnly,
    /// The state in force at each of the given (sorted) times.
    Snapshots(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Time horizon; `f64::INFINITY` runs to absorption.
    pub t_max: f64,
    pub record: RecordMode,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            t_max: f64::INFINITY,
            record: RecordMode::PatternOnly,
        }
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_record(mut self, record: RecordMode) -> Self {
        self.record = record;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidArgument(format!("t_max = {} must be positive", self.t_max)));
        }
        if let RecordMode::Snapshots(times) = &self.record {
            if times.iter().any(|t| !(t.is_finite() && *t >= 0.0))
                || times.windows(2).any(|w| w[1] < w[0])
            {
                return Err(Error::InvalidArgument(
                    "snapshot times must be finite, nonnegative and sorted".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One pair formation: at time `t` a type-`i` female pairs with a type-`j` male.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub i: usize,
    pub j: usize,
}

/// Outcome of one run of the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrajectory {
    pub n: u64,
    /// Events in time order (empty unless recording the full path).
    pub events: Vec<Event>,
    /// `true` when the event log hit [`MAX_RECORDED_EVENTS`].
    pub events_truncated: bool,
    /// Pair counts at absorption, or at `t_max` if that came first.
    pub pattern: PairMatrix,
    /// Absorption time `T_n`, when reached before `t_max`.
    pub t_absorb: Option<f64>,
    /// `(t, Q(t))` for each requested snapshot time.
    pub snapshots: Vec<(f64, PairMatrix)>,
}

impl SimTrajectory {
    /// Writes one `t,i,j` row per event, with 1-based type labels.
    pub fn write_events_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,i,j")?;
        for e in &self.events {
            writeln!(w, "{},{},{}", e.t, e.i + 1, e.j + 1)?;
        }
        Ok(())
    }

    /// Piecewise-constant count path: the state just after each event,
    /// starting from zero at time 0.
    pub fn path(&self) -> Vec<(f64, PairMatrix)> {
        let k = self.pattern.k();
        let mut m = PairMatrix::zeros(k);
        let mut out = Vec::with_capacity(self.events.len() + 1);
        out.push((0.0, m.clone()));
        for e in &self.events {
            m[(e.i, e.j)] += 1.0;
            out.push((e.t, m.clone()));
        }
        out
    }
}

// JSON layout: {"n", "events": [[t, i, j], ...], "pattern", "t_absorb"}; type
// labels in events are 1-based like the CSV export.
impl Serialize for SimTrajectory {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let events: Vec<(f64, usize, usize)> =
            self.events.iter().map(|e| (e.t, e.i + 1, e.j + 1)).collect();
        let mut st = s.serialize_struct("SimTrajectory", 5)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("events", &events)?;
        st.serialize_field("pattern", &self.pattern)?;
        st.serialize_field("t_absorb", &self.t_absorb)?;
        st.serialize_field("events_truncated", &self.events_truncated)?;
        st.end()
    }
}

fn check_dims(params: &ModelParams, pop: &PopulationCounts) -> Result<()> {
    if params.k() != pop.k() {
        return Err(Error::DimensionMismatch(format!(
            "params have k = {}, population has k = {}",
            params.k(),
            pop.k()
        )));
    }
    Ok(())
}

/// Mutable chain state: pair counts plus the derived singles.
#[derive(Clone, Debug)]
struct ChainState {
    k: usize,
    counts: Vec<u64>,
    singles_f: Vec<u64>,
    singles_m: Vec<u64>,
    remaining: u64,
}

impl ChainState {
    fn new(pop: &PopulationCounts) -> Self {
        Self {
            k: pop.k(),
            counts: vec![0; pop.k() * pop.k()],
            singles_f: pop.x().to_vec(),
            singles_m: pop.y().to_vec(),
            remaining: pop.n(),
        }
    }

    /// Rates `pi_ij X_i Y_j / R` written into `out`; returns their sum.
    fn rates(&self, pi: &PairMatrix, out: &mut [f64]) -> f64 {
        if self.remaining == 0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return 0.0;
        }
        let r = self.remaining as f64;
        let mut total = 0.0;
        for i in 0..self.k {
            let xi = self.singles_f[i] as f64;
            for j in 0..self.k {
                let v = pi[(i, j)] * xi * self.singles_m[j] as f64 / r;
                out[i * self.k + j] = v;
                total += v;
            }
        }
        total
    }

    fn fire(&mut self, c: usize) {
        let (i, j) = (c / self.k, c % self.k);
        self.counts[c] += 1;
        self.singles_f[i] -= 1;
        self.singles_m[j] -= 1;
        self.remaining -= 1;
    }

    fn matrix(&self) -> PairMatrix {
        PairMatrix::from_row_major(self.k, self.counts.iter().map(|&c| c as f64).collect())
            .expect("k*k counts")
    }
}

/// Rate matrix `rho(M, M + I^ij)` at the integer state `m`.
pub fn transition_rates(params: &ModelParams, pop: &PopulationCounts, m: &PairMatrix) -> Result<PairMatrix> {
    check_dims(params, pop)?;
    let k = pop.k();
    if m.k() != k {
        return Err(Error::DimensionMismatch(format!("state is {}x{}, expected k = {k}", m.k(), m.k())));
    }
    if m.as_slice().iter().any(|v| !(v.is_finite() && *v >= 0.0 && v.fract() == 0.0)) {
        return Err(Error::InvalidState(format!("{m:?} must have nonnegative integer entries")));
    }
    let x: Vec<f64> = pop.x().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = pop.y().iter().map(|&v| v as f64).collect();
    if !m.is_in_state_space(&x, &y, 0.0) {
        return Err(Error::InvalidState(format!("{m:?} exceeds the population margins")));
    }
    let state = ChainState {
        k,
        counts: m.as_slice().iter().map(|&v| v as u64).collect(),
        singles_f: (0..k).map(|i| pop.x()[i] - m.row_sum(i) as u64).collect(),
        singles_m: (0..k).map(|j| pop.y()[j] - m.col_sum(j) as u64).collect(),
        remaining: pop.n() - m.total() as u64,
    };
    let mut out = PairMatrix::zeros(k);
    state.rates(params.pi(), out.as_mut_slice());
    Ok(out)
}

/// Collects events and snapshots as the chain runs.
struct Recorder<'a> {
    mode: &'a RecordMode,
    events: Vec<Event>,
    truncated: bool,
    snapshots: Vec<(f64, PairMatrix)>,
    next_snapshot: usize,
}

impl<'a> Recorder<'a> {
    fn new(mode: &'a RecordMode, n: u64) -> Self {
        let events = match mode {
            RecordMode::FullPath => Vec::with_capacity((n as usize).min(MAX_RECORDED_EVENTS)),
            _ => Vec::new(),
        };
        Self {
            mode,
            events,
            truncated: false,
            snapshots: Vec::new(),
            next_snapshot: 0,
        }
    }

    /// Records snapshots strictly before `t` using the state before the jump.
    fn advance_to(&mut self, t: f64, state: &ChainState) {
        if let RecordMode::Snapshots(times) = self.mode {
            while self.next_snapshot < times.len() && times[self.next_snapshot] < t {
                self.snapshots.push((times[self.next_snapshot], state.matrix()));
                self.next_snapshot += 1;
            }
        }
    }

    fn event(&mut self, t: f64, c: usize, k: usize) {
        if let RecordMode::FullPath = self.mode {
            if self.events.len() < MAX_RECORDED_EVENTS {
                self.events.push(Event { t, i: c / k, j: c % k });
            } else {
                self.truncated = true;
            }
        }
    }

    fn finish(mut self, n: u64, state: &ChainState, t_absorb: Option<f64>) -> SimTrajectory {
        // remaining snapshots see the final state
        self.advance_to(f64::INFINITY, state);
        SimTrajectory {
            n,
            events: self.events,
            events_truncated: self.truncated,
            pattern: state.matrix(),
            t_absorb,
            snapshots: self.snapshots,
        }
    }
}

/// Direct-method simulation driven by an explicit generator.
pub fn simulate_with_rng(
    params: &ModelParams,
    pop: &PopulationCounts,
    t_max: f64,
    record: &RecordMode,
    rng: &mut ChaCha8Rng,
) -> SimTrajectory {
    let pi = params.pi();
    let mut state = ChainState::new(pop);
    let mut rates = vec![0.0; state.k * state.k];
    let mut rec = Recorder::new(record, pop.n());
    let mut t = 0.0;
    let mut t_absorb = None;
    loop {
        let total = state.rates(pi, &mut rates);
        if state.remaining == 0 {
            t_absorb = Some(t);
            break;
        }
        let e: f64 = Exp1.sample(rng);
        let t_next = t + e / total;
        if t_next > t_max {
            break;
        }
        rec.advance_to(t_next, &state);
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        // fall back to the last positive rate if rounding leaves target >= acc
        let mut chosen = None;
        for (c, &r) in rates.iter().enumerate() {
            if r > 0.0 {
                acc += r;
                chosen = Some(c);
                if target < acc {
                    break;
                }
            }
        }
        let c = chosen.expect("positive total rate has a positive entry");
        t = t_next;
        state.fire(c);
        rec.event(t, c, state.k);
    }
    rec.finish(pop.n(), &state, t_absorb)
}

/// Samples one path of the chain with the direct method; replicate 0 of
/// [`simulate_replicates`].
pub fn simulate(params: &ModelParams, pop: &PopulationCounts, config: &SimConfig) -> Result<SimTrajectory> {
    check_dims(params, pop)?;
    config.validate()?;
    let mut rng = rng::stream(config.seed, 0);
    Ok(simulate_with_rng(params, pop, config.t_max, &config.record, &mut rng))
}

/// Independent replicates in parallel; replicate `r` uses stream `r` of the
/// seed, so the output does not depend on thread scheduling.
pub fn simulate_replicates(
    params: &ModelParams,
    pop: &PopulationCounts,
    config: &SimConfig,
    replicates: usize,
) -> Result<Vec<SimTrajectory>> {
    check_dims(params, pop)?;
    config.validate()?;
    Ok((0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(config.seed, r as u64);
            simulate_with_rng(params, pop, config.t_max, &config.record, &mut rng)
        })
        .collect())
}

/// Mean and standard error of the final pattern over replicates, computed
/// without storing trajectories.
pub fn pattern_statistics(
    params: &ModelParams,
    pop: &PopulationCounts,
    seed: u64,
    replicates: usize,
) -> Result<(PairMatrix, PairMatrix)> {
    check_dims(params, pop)?;
    if replicates < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicates".into()));
    }
    let k = pop.k();
    let (sum, sum_sq) = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r as u64);
            let tr = simulate_with_rng(params, pop, f64::INFINITY, &RecordMode::PatternOnly, &mut rng);
            let v = tr.pattern.as_slice().to_vec();
            let sq = v.iter().map(|a| a * a).collect::<Vec<_>>();
            (v, sq)
        })
        .reduce(
            || (vec![0.0; k * k], vec![0.0; k * k]),
            |(mut a, mut b), (c, d)| {
                a.iter_mut().zip(&c).for_each(|(x, y)| *x += y);
                b.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
                (a, b)
            },
        );
    let n = replicates as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    Ok((
        PairMatrix::from_row_major(k, mean)?,
        PairMatrix::from_row_major(k, se)?,
    ))
}

/// Arrival times of unit-rate Poisson processes, one per pair type.
pub trait ArrivalSource {
    /// Arrival number `idx` (0-based) of the process for channel `c = i*k + j`.
    fn arrival(&mut self, channel: usize, idx: usize) -> f64;
}

/// Lazily extended, memoized unit-rate Poisson paths. Channel `c` draws its
/// exponential gaps from its own generator seeded with `split(seed, c)`, so a
/// prefix never changes once generated and is independent of query order.
#[derive(Clone, Debug)]
pub struct PoissonPathStore {
    paths: Vec<Vec<f64>>,
    rngs: Vec<ChaCha8Rng>,
}

impl PoissonPathStore {
    pub fn new(seed: u64, channels: usize) -> Self {
        Self {
            paths: vec![Vec::new(); channels],
            rngs: (0..channels).map(|c| rng::rng(rng::split(seed, c as u64))).collect(),
        }
    }

    /// Number of memoized arrivals of a channel.
    pub fn generated(&self, channel: usize) -> usize {
        self.paths[channel].len()
    }
}

impl ArrivalSource for PoissonPathStore {
    fn arrival(&mut self, channel: usize, idx: usize) -> f64 {
        let path = &mut self.paths[channel];
        let rng = &mut self.rngs[channel];
        while path.len() <= idx {
            let last = path.last().copied().unwrap_or(0.0);
            let gap: f64 = Exp1.sample(rng);
            path.push(last + gap);
        }
        path[idx]
    }
}

/// Next-reaction simulation: channel `c` fires when its internal clock
/// `int_0^t rate_c(s) ds` reaches the next arrival of its Poisson path.
pub fn simulate_time_changed<S: ArrivalSource>(
    params: &ModelParams,
    pop: &PopulationCounts,
    source: &mut S,
    t_max: f64,
    record: &RecordMode,
) -> Result<SimTrajectory> {
    check_dims(params, pop)?;
    let pi = params.pi();
    let mut state = ChainState::new(pop);
    let channels = state.k * state.k;
    let mut rates = vec![0.0; channels];
    let mut internal = vec![0.0; channels];
    let mut fired = vec![0usize; channels];
    let mut next: Vec<f64> = (0..channels).map(|c| source.arrival(c, 0)).collect();
    let mut rec = Recorder::new(record, pop.n());
    let mut t = 0.0;
    let mut t_absorb = None;
    loop {
        state.rates(pi, &mut rates);
        if state.remaining == 0 {
            t_absorb = Some(t);
            break;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for c in 0..channels {
            if rates[c] > 0.0 {
                let dt = (next[c] - internal[c]) / rates[c];
                if dt < best.0 {
                    best = (dt, c);
                }
            }
        }
        let (dt, c) = best;
        let t_next = t + dt.max(0.0);
        if t_next > t_max {
            break;
        }
        rec.advance_to(t_next, &state);
        for (clock, r) in internal.iter_mut().zip(&rates) {
            *clock += r * dt.max(0.0);
        }
        internal[c] = next[c];
        fired[c] += 1;
        next[c] = source.arrival(c, fired[c]);
        t = t_next;
        state.fire(c);
        rec.event(t, c, state.k);
    }
    Ok(rec.finish(pop.n(), &state, t_absorb))
}

/// One run per population size, all driven by the same Poisson paths.
/// Populations are the largest-remainder roundings of `n * fractions`.
pub fn simulate_coupled(
    params: &ModelParams,
    fractions: &PopulationFractions,
    n_list: &[u64],
    config: &SimConfig,
) -> Result<Vec<SimTrajectory>> {
    if params.k() != fractions.k() {
        return Err(Error::DimensionMismatch(format!(
            "params have k = {}, fractions have k = {}",
            params.k(),
            fractions.k()
        )));
    }
    config.validate()?;
    let mut store = PoissonPathStore::new(config.seed, params.k() * params.k());
    n_list
        .iter()
        .map(|&n| {
            let pop = PopulationCounts::from_fractions(fractions, n)?;
            simulate_time_changed(params, &pop, &mut store, config.t_max, &config.record)
        })
        .collect()
}

/// `sup_{t in [0, t_end]} max_ij |Q(n)_ij(t)/n - Q_ij(t)|` for a full-path
/// trajectory. Between events the scaled counts are constant and every fluid
/// entry is monotone, so checking both sides of each jump is exact.
pub fn sup_norm_distance(traj: &SimTrajectory, fluid: &FluidSolution, t_end: f64) -> Result<f64> {
    if fluid.t_end() < t_end {
        return Err(Error::MissingFluidSolution(t_end));
    }
    if traj.events_truncated {
        return Err(Error::InvalidArgument("trajectory event log is truncated".into()));
    }
    let k = traj.pattern.k();
    let n = traj.n as f64;
    let mut scaled = vec![0.0; k * k];
    let mut worst = 0.0_f64;
    let mut compare = |t: f64, scaled: &[f64]| -> Result<()> {
        let q = fluid.eval(t).ok_or(Error::MissingFluidSolution(t))?;
        for (a, b) in scaled.iter().zip(q.as_slice()) {
            worst = worst.max((a - b).abs());
        }
        Ok(())
    };
    for e in &traj.events {
        if e.t > t_end {
            break;
        }
        compare(e.t, &scaled)?;
        scaled[e.i * k + e.j] += 1.0 / n;
        compare(e.t, &scaled)?;
    }
    compare(t_end, &scaled)?;
    Ok(worst)
}

/// Exact `E[Q(n)(T_n)]` by forward propagation of the jump-chain law over
/// the levels `M_tot = 0, 1, ..., n`.
pub fn exact_pattern_oracle(params: &ModelParams, pop: &PopulationCounts) -> Result<PairMatrix> {
    check_dims(params, pop)?;
    let k = pop.k();
    let pi = params.pi();
    let mut level: HashMap<Vec<u32>, f64> = HashMap::new();
    level.insert(vec![0; k * k], 1.0);
    let mut visited = 1usize;
    let mut rates = vec![0.0; k * k];
    for _ in 0..pop.n() {
        let mut next: HashMap<Vec<u32>, f64> = HashMap::with_capacity(level.len() * 2);
        // sorted iteration keeps the floating-point sums reproducible
        let mut states: Vec<_> = level.into_iter().collect();
        states.sort_by(|a, b| a.0.cmp(&b.0));
        for (counts, prob) in states {
            let state = chain_state_from(pop, &counts);
            let total = state.rates(pi, &mut rates);
            for (c, &r) in rates.iter().enumerate() {
                if r > 0.0 {
                    let mut succ = counts.clone();
                    succ[c] += 1;
                    *next.entry(succ).or_insert(0.0) += prob * r / total;
                }
            }
        }
        visited += next.len();
        if visited > ORACLE_STATE_LIMIT {
            return Err(Error::StateSpaceTooLarge {
                limit: ORACLE_STATE_LIMIT,
            });
        }
        level = next;
    }
    let mut expected = PairMatrix::zeros(k);
    let mut states: Vec<_> = level.into_iter().collect();
    states.sort_by(|a, b| a.0.cmp(&b.0));
    for (counts, prob) in states {
        for (e, &c) in expected.as_mut_slice().iter_mut().zip(&counts) {
            *e += prob * c as f64;
        }
    }
    Ok(expected)
}

fn chain_state_from(pop: &PopulationCounts, counts: &[u32]) -> ChainState {
    let k = pop.k();
    let mut singles_f = pop.x().to_vec();
    let mut singles_m = pop.y().to_vec();
    let mut used = 0u64;
    for i in 0..k {
        for j in 0..k {
            let c = counts[i * k + j] as u64;
            singles_f[i] -= c;
            singles_m[j] -= c;
            used += c;
        }
    }
    ChainState {
        k,
        counts: counts.iter().map(|&c| c as u64).collect(),
        singles_f,
        singles_m,
        remaining: pop.n() - used,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pi(rows: &[Vec<f64>]) -> ModelParams {
        ModelParams::from_pi_rows(rows).unwrap()
    }

    fn pop(x: &[u64], y: &[u64]) -> PopulationCounts {
        PopulationCounts::new(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn rate_examples() {
        let p = pi(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let m = PairMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let r = transition_rates(&p, &pop(&[2, 2], &[2, 2]), &m).unwrap();
        let want = [1.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0];
        for (a, b) in r.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }

        let p = pi(&[vec![2.0, 1.0], vec![1.0, 1.0]]);
        let r = transition_rates(&p, &pop(&[1, 1], &[1, 1]), &PairMatrix::zeros(2)).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 0.5, 0.5, 0.5]);

        let full = PairMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = transition_rates(&p, &pop(&[1, 1], &[1, 1]), &full).unwrap();
        assert!(r.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rates_reject_invalid_states() {
        let p = pi(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let pp = pop(&[1, 1], &[1, 1]);
        let frac = PairMatrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(transition_rates(&p, &pp, &frac), Err(Error::InvalidState(_))));
        let over = PairMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(transition_rates(&p, &pp, &over), Err(Error::InvalidState(_))));
    }

    #[test]
    fn oracle_examples() {
        let p = pi(&[vec![2.0, 1.0], vec![1.0, 1.0]]);
        let e = exact_pattern_oracle(&p, &pop(&[1, 1], &[1, 1])).unwrap();
        let want = [0.6, 0.4, 0.4, 0.6];
        for (a, b) in e.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{e:?}");
        }
        let fb = pi(&[vec![2.0, 3.0], vec![3.0, 4.0]]);
        let e = exact_pattern_oracle(&fb, &pop(&[2, 2], &[2, 2])).unwrap();
        assert!(e.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12), "{e:?}");
    }

    #[test]
    fn oracle_refuses_huge_state_spaces() {
        let p = pi(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let big = pop(&[200, 200], &[200, 200]);
        assert!(matches!(
            exact_pattern_oracle(&p, &big),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn simulate_runs_to_absorption_with_margins() {
        let p = pi(&[vec![3.0, 1.0], vec![1.0, 2.0]]);
        let pp = pop(&[7, 5], &[4, 8]);
        let cfg = SimConfig::new(11).with_record(RecordMode::FullPath);
        let tr = simulate(&p, &pp, &cfg).unwrap();
        assert_eq!(tr.events.len(), 12);
        assert!(tr.t_absorb.is_some());
        assert!(tr.events.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(tr.pattern.row_sum(0), 7.0);
        assert_eq!(tr.pattern.col_sum(1), 8.0);
        assert_eq!(tr, simulate(&p, &pp, &cfg).unwrap());
    }

    #[test]
    fn snapshots_and_horizon() {
        let p = pi(&[vec![1.0]]);
        let pp = pop(&[50], &[50]);
        let cfg = SimConfig::new(3)
            .with_t_max(0.5)
            .with_record(RecordMode::Snapshots(vec![0.0, 0.25, 0.5]));
        let tr = simulate(&p, &pp, &cfg).unwrap();
        assert!(tr.t_absorb.is_none());
        assert_eq!(tr.snapshots.len(), 3);
        assert_eq!(tr.snapshots[0].1.total(), 0.0);
        assert!(tr.snapshots[1].1.total() <= tr.snapshots[2].1.total());
        assert_eq!(tr.snapshots[2].1, tr.pattern);
    }

    #[test]
    fn poisson_store_is_memoized() {
        let mut a = PoissonPathStore::new(5, 4);
        let mut b = PoissonPathStore::new(5, 4);
        let late = a.arrival(2, 10);
        // querying in a different order gives the same arrival times
        let early = b.arrival(2, 3);
        assert_eq!(b.arrival(2, 10), late);
        assert_eq!(a.arrival(2, 3), early);
        assert_eq!(a.generated(2), 11);
        assert_eq!(a.generated(0), 0);
    }

    #[test]
    fn coupled_single_type_is_forced() {
        let p = pi(&[vec![0.8]]);
        let f = PopulationFractions::new(vec![1.0], vec![1.0]).unwrap();
        let runs = simulate_coupled(&p, &f, &[10, 100], &SimConfig::new(1)).unwrap();
        assert_eq!(runs[0].pattern[(0, 0)], 10.0);
        assert_eq!(runs[1].pattern[(0, 0)], 100.0);
    }

    #[test]
    fn csv_and_json_exports() {
        let p = pi(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let tr = simulate(
            &p,
            &pop(&[1, 1], &[1, 1]),
            &SimConfig::new(0).with_record(RecordMode::FullPath),
        )
        .unwrap();
        let mut buf = Vec::new();
        tr.write_events_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,i,j\n"));
        assert_eq!(text.lines().count(), 3);
        let json: serde_json::Value = serde_json::to_value(&tr).unwrap();
        assert_eq!(json["events"].as_array().unwrap().len(), 2);
        assert!(json["t_absorb"].is_number());
    }
}
