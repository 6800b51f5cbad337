//! Fluid (infinite-population) limit of the pair-type process.
//!
//! The limit `Q(t)` solves `Q' = F(Q)`, `Q(0) = 0`, with
//! `F_ij(M) = pi_ij (x_i - M_i.) (y_j - M_.j) / (1 - M_tot)` on the state
//! space `{M >= 0 : M_i. <= x_i, M_.j <= y_j}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelParams, PairMatrix, PopulationFractions, SquareMatrix};
use crate::ode::{self, DenseSolution, OdeOptions, StepAction};

/// Slack used when validating states passed in by callers.
const STATE_TOL: f64 = 1e-9;

fn check_dims(params: &ModelParams, fractions: &PopulationFractions, m: &PairMatrix) -> Result<()> {
    if params.k() != fractions.k() || params.k() != m.k() {
        return Err(Error::DimensionMismatch(format!(
            "params k = {}, fractions k = {}, state k = {}",
            params.k(),
            fractions.k(),
            m.k()
        )));
    }
    Ok(())
}

fn check_state(params: &ModelParams, fractions: &PopulationFractions, m: &PairMatrix) -> Result<()> {
    check_dims(params, fractions, m)?;
    if !m.is_in_state_space(fractions.x(), fractions.y(), STATE_TOL) {
        return Err(Error::InvalidState(format!("{m:?} violates the margin constraints")));
    }
    Ok(())
}

/// Drift on a row-major state slice; no validation. Zero once the singles
/// mass is exhausted.
pub(crate) fn drift_into(pi: &SquareMatrix, x: &[f64], y: &[f64], m: &[f64], out: &mut [f64]) {
    let k = x.len();
    let mut rows = vec![0.0; k];
    let mut cols = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let v = m[i * k + j];
            rows[i] += v;
            cols[j] += v;
            total += v;
        }
    }
    let z = 1.0 - total;
    if z <= 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    for i in 0..k {
        let xi = x[i] - rows[i];
        for j in 0..k {
            out[i * k + j] = pi[(i, j)] * xi * (y[j] - cols[j]) / z;
        }
    }
}

/// The fluid drift `F(M)`.
pub fn drift_f(params: &ModelParams, fractions: &PopulationFractions, m: &PairMatrix) -> Result<PairMatrix> {
    check_state(params, fractions, m)?;
    let mut out = PairMatrix::zeros(m.k());
    drift_into(params.pi(), fractions.x(), fractions.y(), m.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// `dF_ij / dM_i'j'`, stored as a `k^2 x k^2` row-major matrix with rows
/// indexed by `(i, j)` and columns by `(i', j')`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    k: usize,
    data: Vec<f64>,
}

impl Jacobian {
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, ip: usize, jp: usize) -> f64 {
        let kk = self.k * self.k;
        self.data[(i * self.k + j) * kk + ip * self.k + jp]
    }

    /// The flattened `k^2 x k^2` matrix.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `J v` for a flattened `k x k` vector.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let kk = self.k * self.k;
        for (a, o) in out.iter_mut().enumerate().take(kk) {
            *o = self.data[a * kk..(a + 1) * kk].iter().zip(v).map(|(j, x)| j * x).sum();
        }
    }
}

pub(crate) fn jacobian_into(pi: &SquareMatrix, x: &[f64], y: &[f64], m: &PairMatrix, out: &mut [f64]) {
    let k = m.k();
    let kk = k * k;
    let z = 1.0 - m.total();
    for i in 0..k {
        let a = (x[i] - m.row_sum(i)) / z;
        for j in 0..k {
            let b = (y[j] - m.col_sum(j)) / z;
            let row = (i * k + j) * kk;
            for ip in 0..k {
                for jp in 0..k {
                    let mut v = a * b;
                    if jp == j {
                        v -= a;
                    }
                    if ip == i {
                        v -= b;
                    }
                    out[row + ip * k + jp] = pi[(i, j)] * v;
                }
            }
        }
    }
}

/// Closed-form partial derivatives of the drift. Undefined on the absorbed
/// set `M_tot = 1`.
pub fn jacobian_f(params: &ModelParams, fractions: &PopulationFractions, m: &PairMatrix) -> Result<Jacobian> {
    check_state(params, fractions, m)?;
    if 1.0 - m.total() <= 0.0 {
        return Err(Error::SingularState);
    }
    let k = m.k();
    let mut data = vec![0.0; k.pow(4)];
    jacobian_into(params.pi(), fractions.x(), fractions.y(), m, &mut data);
    Ok(Jacobian { k, data })
}

/// Lower and upper bounds `1 - exp(-c1 t)`, `1 - exp(-c2 t)` on `Q_tot(t)`.
pub fn total_mass_bounds(params: &ModelParams, t: f64) -> (f64, f64) {
    (1.0 - (-params.c1() * t).exp(), 1.0 - (-params.c2() * t).exp())
}

/// Numerical fluid solution with dense output.
#[derive(Clone, Debug)]
pub struct FluidSolution {
    k: usize,
    dense: DenseSolution,
    /// Best available estimate of `Q(inf)`: the state at the final time.
    pub q_infinity: PairMatrix,
    /// `Z(t_end) = 1 - Q_tot(t_end)`, an entrywise bound on `|Q(inf) - Q(t_end)|`.
    pub error_bound: f64,
}

impl FluidSolution {
    pub(crate) fn from_dense(k: usize, dense: DenseSolution) -> Self {
        let q_infinity = PairMatrix::from_row_major(k, dense.last_state().to_vec())
            .expect("dense state has k*k entries");
        let error_bound = (1.0 - q_infinity.total()).max(0.0);
        Self {
            k,
            dense,
            q_infinity,
            error_bound,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t_end(&self) -> f64 {
        self.dense.t_end()
    }

    /// Accepted step times.
    pub fn times(&self) -> &[f64] {
        &self.dense.times
    }

    /// `(t, Q(t))` at accepted steps.
    pub fn samples(&self) -> impl Iterator<Item = (f64, PairMatrix)> + '_ {
        (0..self.dense.len()).map(move |idx| {
            (
                self.dense.times[idx],
                PairMatrix::from_row_major(self.k, self.dense.state(idx).to_vec()).unwrap(),
            )
        })
    }

    /// Interpolated `Q(t)`; `None` beyond the solved range.
    pub fn eval(&self, t: f64) -> Option<PairMatrix> {
        self.dense
            .eval(t)
            .map(|v| PairMatrix::from_row_major(self.k, v).unwrap())
    }

    /// Writes `t,Q11,Q12,...,Qkk` rows at the accepted steps.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::from("t");
        for i in 1..=self.k {
            for j in 1..=self.k {
                header.push_str(&format!(",Q{i}{j}"));
            }
        }
        writeln!(w, "{header}")?;
        for idx in 0..self.dense.len() {
            write!(w, "{}", self.dense.times[idx])?;
            for v in self.dense.state(idx) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn validate_rtol(rtol: f64) -> Result<()> {
    if !(1e-12..=1e-3).contains(&rtol) {
        return Err(Error::InvalidArgument(format!("rtol = {rtol} outside [1e-12, 1e-3]")));
    }
    Ok(())
}

fn solve(
    params: &ModelParams,
    fractions: &PopulationFractions,
    t_end: f64,
    rtol: f64,
    stop_below: Option<f64>,
) -> Result<FluidSolution> {
    check_dims(params, fractions, &PairMatrix::zeros(params.k()))?;
    validate_rtol(rtol)?;
    let k = params.k();
    let (pi, x, y) = (params.pi(), fractions.x(), fractions.y());
    let slack = 10.0 * rtol;
    let mut violation = None;
    let opts = OdeOptions::new(0.1 * rtol, 0.01 * rtol);
    let dense = ode::integrate(
        |_, m, out| drift_into(pi, x, y, m, out),
        0.0,
        &vec![0.0; k * k],
        t_end,
        &opts,
        |t, m| {
            let q_tot: f64 = m.iter().sum();
            let (lower, upper) = total_mass_bounds(params, t);
            if q_tot < lower - slack || q_tot > upper + slack {
                violation = Some(Error::BoundViolation {
                    t,
                    q_tot,
                    lower,
                    upper,
                });
                return StepAction::Stop;
            }
            match stop_below {
                Some(eps) if 1.0 - q_tot <= eps => StepAction::Stop,
                _ => StepAction::Continue,
            }
        },
    )?;
    if let Some(err) = violation {
        return Err(err);
    }
    Ok(FluidSolution::from_dense(k, dense))
}

/// Integrates the fluid ODE on `[0, t_end]` with local relative tolerance `rtol`.
pub fn integrate_fluid(
    params: &ModelParams,
    fractions: &PopulationFractions,
    t_end: f64,
    rtol: f64,
) -> Result<FluidSolution> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end} must be positive")));
    }
    solve(params, fractions, t_end, rtol, None)
}

/// Integrator tolerance used by [`mating_pattern_limit`].
pub const PATTERN_RTOL: f64 = 1e-10;

/// The limiting mating pattern `Q(inf)`, certified to `error_bound <= eps`.
pub fn mating_pattern_limit(
    params: &ModelParams,
    fractions: &PopulationFractions,
    eps: f64,
) -> Result<(PairMatrix, f64)> {
    let sol = mating_pattern_solution(params, fractions, eps, PATTERN_RTOL)?;
    Ok((sol.q_infinity.clone(), sol.error_bound))
}

/// Like [`mating_pattern_limit`], returning the whole solution.
pub fn mating_pattern_solution(
    params: &ModelParams,
    fractions: &PopulationFractions,
    eps: f64,
    rtol: f64,
) -> Result<FluidSolution> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidArgument(format!("eps = {eps} outside (0, 1e-3]")));
    }
    // Z(t) <= exp(-c1 t) guarantees Z <= eps by this time
    let horizon = (1.0 / eps).ln() / params.c1();
    let sol = solve(params, fractions, horizon * 1.05 + 1.0, rtol, Some(eps))?;
    if sol.error_bound > eps {
        return Err(Error::ToleranceNotMet(format!(
            "singles mass {} still above eps = {eps} at t = {}",
            sol.error_bound,
            sol.t_end()
        )));
    }
    Ok(sol)
}

/// Serializable pattern export.
#[derive(Clone, Debug, Serialize)]
pub struct PatternReport {
    pub pattern: PairMatrix,
    pub error_bound: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rows: &[Vec<f64>]) -> ModelParams {
        ModelParams::from_pi_rows(rows).unwrap()
    }

    #[test]
    fn drift_examples() {
        let p = params(&[vec![3.0, 1.0], vec![1.0, 2.0]]);
        let f = PopulationFractions::new(vec![0.3, 0.7], vec![0.4, 0.6]).unwrap();
        let d = drift_f(&p, &f, &PairMatrix::zeros(2)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[(i, j)] - p.pi()[(i, j)] * f.x()[i] * f.y()[j]).abs() < 1e-15);
            }
        }
        // absorbed state
        let full = PairMatrix::from_rows(&[vec![0.3, 0.0], vec![0.1, 0.6]]).unwrap();
        assert_eq!(drift_f(&p, &f, &full).unwrap(), PairMatrix::zeros(2));
        // scalar case
        let p1 = params(&[vec![2.5]]);
        let f1 = PopulationFractions::new(vec![1.0], vec![1.0]).unwrap();
        let d = drift_f(&p1, &f1, &PairMatrix::from_rows(&[vec![0.4]]).unwrap()).unwrap();
        assert!((d[(0, 0)] - 2.5 * 0.6).abs() < 1e-15);
    }

    #[test]
    fn drift_rejects_states_outside_the_space() {
        let p = params(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let f = PopulationFractions::symmetric(vec![0.5, 0.5]).unwrap();
        let bad = PairMatrix::from_rows(&[vec![0.4, 0.2], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(drift_f(&p, &f, &bad), Err(Error::InvalidState(_))));
        let neg = PairMatrix::from_rows(&[vec![-0.1, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(drift_f(&p, &f, &neg), Err(Error::InvalidState(_))));
    }

    #[test]
    fn jacobian_examples() {
        let p1 = params(&[vec![1.7]]);
        let f1 = PopulationFractions::new(vec![1.0], vec![1.0]).unwrap();
        let j = jacobian_f(&p1, &f1, &PairMatrix::from_rows(&[vec![0.3]]).unwrap()).unwrap();
        assert!((j.get(0, 0, 0, 0) + 1.7).abs() < 1e-14);

        let p = params(&[vec![3.0, 1.0], vec![1.0, 2.0]]);
        let f = PopulationFractions::new(vec![0.3, 0.7], vec![0.4, 0.6]).unwrap();
        let j = jacobian_f(&p, &f, &PairMatrix::zeros(2)).unwrap();
        let (x, y) = (f.x(), f.y());
        for i in 0..2 {
            for jj in 0..2 {
                for ip in 0..2 {
                    for jp in 0..2 {
                        let expect = p.pi()[(i, jj)]
                            * (x[i] * y[jj]
                                - if jj == jp { x[i] } else { 0.0 }
                                - if i == ip { y[jj] } else { 0.0 });
                        assert!((j.get(i, jj, ip, jp) - expect).abs() < 1e-14);
                    }
                }
            }
        }
        let full = PairMatrix::from_rows(&[vec![0.3, 0.0], vec![0.1, 0.6]]).unwrap();
        assert_eq!(jacobian_f(&p, &f, &full), Err(Error::SingularState));
    }

    #[test]
    fn scalar_fluid_solution_is_exponential() {
        let p1 = params(&[vec![1.3]]);
        let f1 = PopulationFractions::new(vec![1.0], vec![1.0]).unwrap();
        let rtol = 1e-8;
        let sol = integrate_fluid(&p1, &f1, 4.0, rtol).unwrap();
        for (t, q) in sol.samples() {
            assert!((q[(0, 0)] - (1.0 - (-1.3 * t).exp())).abs() <= rtol);
        }
        let q = sol.eval(2.345).unwrap();
        assert!((q[(0, 0)] - (1.0 - (-1.3f64 * 2.345).exp())).abs() <= rtol);
    }

    #[test]
    fn fine_balance_pair_entry_matches_exponential() {
        let p = params(&[vec![2.0, 3.0], vec![3.0, 4.0]]);
        let f = PopulationFractions::new(vec![0.3, 0.7], vec![0.4, 0.6]).unwrap();
        let rtol = 1e-8;
        let sol = integrate_fluid(&p, &f, 3.0, rtol).unwrap();
        for (t, q) in sol.samples() {
            assert!((q[(0, 0)] - 0.12 * (1.0 - (-2.0 * t).exp())).abs() <= 10.0 * rtol);
        }
    }

    #[test]
    fn pattern_limit_examples() {
        let p1 = params(&[vec![0.7]]);
        let f1 = PopulationFractions::new(vec![1.0], vec![1.0]).unwrap();
        let (q, bound) = mating_pattern_limit(&p1, &f1, 1e-8).unwrap();
        assert!(bound <= 1e-8);
        assert!((q[(0, 0)] - 1.0).abs() <= 1e-8 + 1e-9);

        let p = params(&[vec![3.0, 1.0], vec![1.0, 2.0]]);
        let f = PopulationFractions::symmetric(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let (q, _) = mating_pattern_limit(&p, &f, 1e-9).unwrap();
        assert!((q[(0, 1)] - 2.0 / 15.0).abs() < 1e-7, "{q:?}");
    }

    #[test]
    fn argument_validation() {
        let p1 = params(&[vec![1.0]]);
        let f1 = PopulationFractions::new(vec![1.0], vec![1.0]).unwrap();
        assert!(integrate_fluid(&p1, &f1, 1.0, 1e-2).is_err());
        assert!(integrate_fluid(&p1, &f1, -1.0, 1e-6).is_err());
        assert!(mating_pattern_limit(&p1, &f1, 0.1).is_err());
    }

    #[test]
    fn csv_export_has_row_major_header() {
        let p = params(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let f = PopulationFractions::symmetric(vec![0.5, 0.5]).unwrap();
        let sol = integrate_fluid(&p, &f, 0.5, 1e-6).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,Q11,Q12,Q21,Q22\n0,0,0,0,0\n"));
    }
}
