//! Dormand-Prince 5(4) integrator with step rejection and the standard
//! fourth-order continuous extension for dense output.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

/// What to do after an accepted step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepAction {
    Continue,
    /// The hook modified the state in place; derivatives are re-evaluated.
    Modified,
    Stop,
}

/// Accepted steps of a solution together with the data of the continuous
/// extension on every step.
#[derive(Clone, Debug)]
pub struct DenseSolution {
    pub dim: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    // one correction vector per interval
    corrections: Vec<f64>,
}

impl DenseSolution {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, idx: usize) -> &[f64] {
        &self.states[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn deriv(&self, idx: usize) -> &[f64] {
        &self.derivs[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("solution has at least the initial point")
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Interpolated state at `t`; `None` outside `[t0, t_end]`.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        let (t0, t1) = (self.times[0], self.t_end());
        if !(t >= t0 && t <= t1) {
            return None;
        }
        let idx = match self.times.partition_point(|&s| s <= t) {
            0 => 0,
            p if p >= self.len() => self.len() - 1,
            p => p - 1,
        };
        if idx + 1 >= self.len() || self.times[idx] == t {
            return Some(self.state(idx).to_vec());
        }
        let (ta, tb) = (self.times[idx], self.times[idx + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let s1 = 1.0 - s;
        let (ya, yb) = (self.state(idx), self.state(idx + 1));
        let (da, db) = (self.deriv(idx), self.deriv(idx + 1));
        let corr = &self.corrections[idx * self.dim..(idx + 1) * self.dim];
        Some(
            (0..self.dim)
                .map(|d| {
                    let r2 = yb[d] - ya[d];
                    let r3 = h * da[d] - r2;
                    let r4 = r2 - h * db[d] - r3;
                    ya[d] + s * (r2 + s1 * (r3 + s * (r4 + s1 * corr[d])))
                })
                .collect(),
        )
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
// continuous extension weights
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end`.
///
/// `on_step` runs after every accepted step and may modify the state or stop
/// the integration early.
pub fn integrate<F, H>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    mut on_step: H,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    H: FnMut(f64, &mut [f64]) -> StepAction,
{
    let dim = y0.len();
    if !(t_end > t0) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end} must exceed t0 = {t0}")));
    }
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut y = y0.to_vec();
    let mut t = t0;
    rhs(t, &y, &mut k[0]);

    let mut sol = DenseSolution {
        dim,
        times: vec![t],
        states: y.clone(),
        derivs: k[0].clone(),
        corrections: Vec::new(),
    };
    let mut corr = vec![0.0; dim];

    let scale = |y: &[f64], d: usize| opts.atol + opts.rtol * y[d].abs();
    // initial step guess from the size of y and y'
    let d0 = rms(dim, |d| y[d] / scale(&y, d));
    let d1 = rms(dim, |d| k[0][d] / scale(&y, d));
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(opts.h_max).min(t_end - t0);

    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::ToleranceNotMet(format!(
                "exceeded {} steps at t = {t}",
                opts.max_steps
            )));
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        for s in 1..7 {
            for d in 0..dim {
                let mut acc = 0.0;
                for (r, kr) in k.iter().enumerate().take(s) {
                    acc += A[s][r] * kr[d];
                }
                stage[d] = y[d] + h * acc;
            }
            rhs(t + C[s] * h, &stage, &mut k[s]);
            if s == 6 {
                y_new.copy_from_slice(&stage);
            }
        }
        let err = rms(dim, |d| {
            let e: f64 = (0..7).map(|s| E[s] * k[s][d]).sum::<f64>() * h;
            let sc = opts.atol + opts.rtol * y[d].abs().max(y_new[d].abs());
            e / sc
        });
        if !err.is_finite() {
            h *= 0.25;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::ToleranceNotMet(format!("non-finite error estimate at t = {t}")));
            }
            continue;
        }
        if err <= 1.0 {
            for (d, c) in corr.iter_mut().enumerate() {
                *c = h * (0..7).map(|s| D[s] * k[s][d]).sum::<f64>();
            }
            t = if last { t_end } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            let k7 = std::mem::take(&mut k[6]);
            k[0] = k7;
            k[6] = vec![0.0; dim];
            match on_step(t, &mut y) {
                StepAction::Continue => {}
                StepAction::Modified => rhs(t, &y, &mut k[0]),
                StepAction::Stop => {
                    sol.push(t, &y, &k[0], &corr);
                    break;
                }
            }
            sol.push(t, &y, &k[0], &corr);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(opts.h_max);
        if t < t_end && h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::ToleranceNotMet(format!("step size underflow at t = {t}")));
        }
    }
    Ok(sol)
}

impl DenseSolution {
    /// The solution restricted to components `range`.
    pub fn project(&self, range: std::ops::Range<usize>) -> DenseSolution {
        let pick = |v: &[f64]| -> Vec<f64> {
            v.chunks(self.dim).flat_map(|c| c[range.clone()].iter().copied()).collect()
        };
        DenseSolution {
            dim: range.len(),
            times: self.times.clone(),
            states: pick(&self.states),
            derivs: pick(&self.derivs),
            corrections: pick(&self.corrections),
        }
    }

    fn push(&mut self, t: f64, y: &[f64], dy: &[f64], corr: &[f64]) {
        if *self.times.last().unwrap() == t {
            return;
        }
        self.times.push(t);
        self.corrections.extend_from_slice(corr);
        self.states.extend_from_slice(y);
        self.derivs.extend_from_slice(dy);
    }
}

fn rms(dim: usize, f: impl Fn(usize) -> f64) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    ((0..dim).map(|d| f(d).powi(2)).sum::<f64>() / dim as f64).sqrt()
}
