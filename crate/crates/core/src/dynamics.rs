//! Singles coordinates of the fluid limit.
//!
//! With `X_i = x_i - Q_i.`, `Y_j = y_j - Q_.j` and `Z = sum X = sum Y`, the
//! fluid ODE becomes the Lotka-Volterra system `X' = -X (Pi Y) / Z`,
//! `Y' = -Y (Pi^T X) / Z`. The frequencies `A = X / Z`, `B = Y / Z` then
//! follow replicator equations on the simplex, `Z' = -Z A^T Pi B`, and the
//! pair masses are recovered from `Q_ij' = pi_ij Z A_i B_j`.

use crate::error::{Error, Result};
use crate::fluid::FluidSolution;
use crate::model::{ModelParams, PairMatrix, PopulationFractions, SquareMatrix};
use crate::ode::{self, DenseSolution, OdeOptions, StepAction};

/// Tolerance on `sum A = sum B = 1` for inputs.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Below this singles mass a state counts as absorbed.
const ABSORBED_Z: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct SinglesState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Singles masses and frequencies at the pair state `q`.
pub fn to_singles(fractions: &PopulationFractions, q: &PairMatrix) -> Result<SinglesState> {
    let k = fractions.k();
    if q.k() != k {
        return Err(Error::DimensionMismatch(format!("state is {}x{}, fractions have k = {k}", q.k(), q.k())));
    }
    let z = 1.0 - q.total();
    if z < ABSORBED_Z {
        return Err(Error::Absorbed);
    }
    let x: Vec<f64> = (0..k).map(|i| fractions.x()[i] - q.row_sum(i)).collect();
    let y: Vec<f64> = (0..k).map(|j| fractions.y()[j] - q.col_sum(j)).collect();
    let a = x.iter().map(|v| v / z).collect();
    let b = y.iter().map(|v| v / z).collect();
    Ok(SinglesState { x, y, z, a, b })
}

fn check_k(params: &ModelParams, len: usize) -> Result<()> {
    if params.k() != len {
        return Err(Error::DimensionMismatch(format!("params have k = {}, vector has {len}", params.k())));
    }
    Ok(())
}

fn check_simplex(v: &[f64], name: &str) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|c| !(*c >= -SIMPLEX_TOL)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidSimplexPoint(format!("{name} = {v:?} (sum {sum})")));
    }
    Ok(())
}

/// `(X', Y')` of the Lotka-Volterra system.
pub fn lv_vector_field(params: &ModelParams, state: &SinglesState) -> Result<(Vec<f64>, Vec<f64>)> {
    check_k(params, state.x.len())?;
    check_k(params, state.y.len())?;
    if !(state.z > 0.0) {
        return Err(Error::SingularZ(state.z));
    }
    let pi = params.pi();
    let py = pi.mul_vec(&state.y);
    let ptx = pi.tr_mul_vec(&state.x);
    let dx = state.x.iter().zip(&py).map(|(x, p)| -x * p / state.z).collect();
    let dy = state.y.iter().zip(&ptx).map(|(y, p)| -y * p / state.z).collect();
    Ok((dx, dy))
}

/// Replicator coordinates `C = (A, B) / 2` with the block payoff matrix
/// `[[0, Pi], [Pi^T, 0]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicatorState {
    pub c: Vec<f64>,
    pub pi_hat: SquareMatrix,
}

impl ReplicatorState {
    pub fn new(params: &ModelParams, a: &[f64], b: &[f64]) -> Result<Self> {
        check_k(params, a.len())?;
        check_k(params, b.len())?;
        let c = a.iter().chain(b).map(|v| 0.5 * v).collect();
        Ok(Self {
            c,
            pi_hat: pi_hat(params),
        })
    }

    /// Splits `C` back into `(A, B)`.
    pub fn frequencies(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.c.len() / 2;
        (
            self.c[..k].iter().map(|v| 2.0 * v).collect(),
            self.c[k..].iter().map(|v| 2.0 * v).collect(),
        )
    }
}

/// `[[0, Pi], [Pi^T, 0]]`.
pub fn pi_hat(params: &ModelParams) -> SquareMatrix {
    let k = params.k();
    let pi = params.pi();
    SquareMatrix::from_fn(2 * k, |r, s| match (r < k, s < k) {
        (true, false) => pi[(r, s - k)],
        (false, true) => pi[(s, r - k)],
        _ => 0.0,
    })
}

/// `C_i' = -2 C_i ((Pi_hat C)_i - C^T Pi_hat C)`.
pub fn replicator_vector_field(params: &ModelParams, c: &[f64]) -> Result<Vec<f64>> {
    let k = params.k();
    if c.len() != 2 * k {
        return Err(Error::DimensionMismatch(format!("C has {} entries, expected {}", c.len(), 2 * k)));
    }
    check_simplex(c, "C")?;
    let ph = pi_hat(params);
    let payoff = ph.mul_vec(c);
    let mean: f64 = c.iter().zip(&payoff).map(|(a, b)| a * b).sum();
    Ok(c.iter().zip(&payoff).map(|(ci, p)| -2.0 * ci * (p - mean)).collect())
}

/// `Z' = -Z A^T Pi B`.
pub fn z_vector_field(params: &ModelParams, a: &[f64], b: &[f64], z: f64) -> Result<f64> {
    check_k(params, a.len())?;
    check_k(params, b.len())?;
    check_simplex(a, "A")?;
    check_simplex(b, "B")?;
    Ok(-z * params.pi().bilinear(a, b))
}

/// `Q_ij' = pi_ij Z A_i B_j`.
pub fn reconstruct_q_rate(params: &ModelParams, a: &[f64], b: &[f64], z: f64) -> Result<PairMatrix> {
    check_k(params, a.len())?;
    check_k(params, b.len())?;
    check_simplex(a, "A")?;
    check_simplex(b, "B")?;
    if !(z > 0.0 && z <= 1.0 + SIMPLEX_TOL) {
        return Err(Error::InvalidArgument(format!("Z = {z} outside (0, 1]")));
    }
    let pi = params.pi();
    Ok(PairMatrix::from_fn(params.k(), |i, j| pi[(i, j)] * z * a[i] * b[j]))
}

/// Right-hand side on the packed state `[A, B, Z, Q]`.
fn packed_rhs(pi: &SquareMatrix, k: usize, s: &[f64], out: &mut [f64]) {
    let (a, rest) = s.split_at(k);
    let (b, rest) = rest.split_at(k);
    let z = rest[0];
    let pb = pi.mul_vec(b);
    let pta = pi.tr_mul_vec(a);
    let mean: f64 = a.iter().zip(&pb).map(|(x, y)| x * y).sum();
    for i in 0..k {
        out[i] = -a[i] * (pb[i] - mean);
        out[k + i] = -b[i] * (pta[i] - mean);
    }
    out[2 * k] = -z * mean;
    for i in 0..k {
        for j in 0..k {
            out[2 * k + 1 + i * k + j] = pi[(i, j)] * z * a[i] * b[j];
        }
    }
}

fn renormalize(v: &mut [f64]) {
    for c in v.iter_mut() {
        *c = c.max(0.0);
    }
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|c| *c /= sum);
    }
}

/// Fluid solution computed in `(A, B, Z, Q)` coordinates.
#[derive(Clone, Debug)]
pub struct ReplicatorSolution {
    k: usize,
    dense: DenseSolution,
    pub fluid: FluidSolution,
}

impl ReplicatorSolution {
    /// `(t, A, B, Z)` at accepted steps.
    pub fn singles(&self) -> impl Iterator<Item = (f64, Vec<f64>, Vec<f64>, f64)> + '_ {
        let k = self.k;
        (0..self.dense.len()).map(move |idx| {
            let s = self.dense.state(idx);
            (self.dense.times[idx], s[..k].to_vec(), s[k..2 * k].to_vec(), s[2 * k])
        })
    }

    /// Interpolated `(A, B, Z)` at `t`.
    pub fn singles_at(&self, t: f64) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let k = self.k;
        self.dense
            .eval(t)
            .map(|s| (s[..k].to_vec(), s[k..2 * k].to_vec(), s[2 * k]))
    }
}

/// Integrates the replicator form on `[0, t_end]`, renormalizing `A` and `B`
/// onto the simplex after each accepted step.
pub fn integrate_replicator(
    params: &ModelParams,
    fractions: &PopulationFractions,
    t_end: f64,
    rtol: f64,
) -> Result<ReplicatorSolution> {
    let k = params.k();
    check_k(params, fractions.k())?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end} must be positive")));
    }
    if !(1e-12..=1e-3).contains(&rtol) {
        return Err(Error::InvalidArgument(format!("rtol = {rtol} outside [1e-12, 1e-3]")));
    }
    let pi = params.pi();
    let mut y0 = Vec::with_capacity(2 * k + 1 + k * k);
    y0.extend_from_slice(fractions.x());
    y0.extend_from_slice(fractions.y());
    y0.push(1.0);
    y0.resize(y0.len() + k * k, 0.0);
    let dense = ode::integrate(
        |_, s, out| packed_rhs(pi, k, s, out),
        0.0,
        &y0,
        t_end,
        &OdeOptions::new(0.1 * rtol, 0.01 * rtol),
        |_, s| {
            renormalize(&mut s[..k]);
            renormalize(&mut s[k..2 * k]);
            StepAction::Modified
        },
    )?;
    let q = dense.project(2 * k + 1..2 * k + 1 + k * k);
    Ok(ReplicatorSolution {
        k,
        dense,
        fluid: FluidSolution::from_dense(k, q),
    })
}
