//! Model parameters, populations and pair matrices.
//!
//! Encounters are driven by the effective pair-formation rates
//! `pi[i][j] = p[i][j] * (alpha[i] + beta[j])`; every other quantity in the
//! crate depends on `(alpha, beta, p)` only through this matrix.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used for all algebraic identities on `pi`.
pub const ALGEBRAIC_RTOL: f64 = 1e-9;

/// Absolute tolerance on the unit sums of population fractions.
pub const FRACTION_SUM_TOL: f64 = 1e-12;

/// Dense `k x k` matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct SquareMatrix {
    k: usize,
    data: Vec<f64>,
}

/// A matrix of pair counts (finite population) or pair masses (fluid limit).
pub type PairMatrix = SquareMatrix;

impl SquareMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            data: vec![0.0; k * k],
        }
    }

    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(k);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::DimensionMismatch("matrix has no rows".into()));
        }
        let mut data = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has length {} in a {k}x{k} matrix",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { k, data })
    }

    /// Builds a matrix from a row-major slice of length `k * k`.
    pub fn from_row_major(k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * k {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries, got {}",
                k * k,
                data.len()
            )));
        }
        Ok(Self { k, data })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.data[i * self.k..(i + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.k).map(|i| self.data[i * self.k + j]).sum()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.k, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            k: self.k,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Max-norm distance `max_ij |a_ij - b_ij|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.k, other.k, "matrix dimensions differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `(M v)_i`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `(M^T v)_j`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|j| (0..self.k).map(|i| self[(i, j)] * v[i]).sum())
            .collect()
    }

    /// `a^T M b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.k {
            for j in 0..self.k {
                s += a[i] * self[(i, j)] * b[j];
            }
        }
        s
    }

    /// Membership in the state space: nonnegative entries, row sums at most
    /// `x_i` and column sums at most `y_j`, all up to `tol`.
    pub fn is_in_state_space(&self, x: &[f64], y: &[f64], tol: f64) -> bool {
        x.len() == self.k
            && y.len() == self.k
            && self.data.iter().all(|&v| v >= -tol)
            && (0..self.k).all(|i| self.row_sum(i) <= x[i] + tol)
            && (0..self.k).all(|j| self.col_sum(j) <= y[j] + tol)
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.k + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.k + j]
    }
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.chunks(self.k)).finish()
    }
}

impl From<SquareMatrix> for Vec<Vec<f64>> {
    fn from(m: SquareMatrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SquareMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

/// Firing rates, acceptance probabilities and the derived rate matrix `pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p: SquareMatrix,
    pi: SquareMatrix,
}

impl ModelParams {
    /// Validates `(alpha, beta, p)` and caches `pi_ij = p_ij (alpha_i + beta_j)`.
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, p: SquareMatrix) -> Result<Self> {
        let k = p.k();
        if k == 0 {
            return Err(Error::DimensionMismatch("k must be at least 1".into()));
        }
        if alpha.len() != k || beta.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "alpha has {} entries, beta has {}, p is {k}x{k}",
                alpha.len(),
                beta.len()
            )));
        }
        for (name, v) in [("alpha", &alpha), ("beta", &beta)] {
            if let Some(r) = v.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {r}"
                )));
            }
        }
        for i in 0..k {
            for j in 0..k {
                let value = p[(i, j)];
                if !(value > 0.0 && value <= 1.0) {
                    return Err(Error::InvalidProbability { i, j, value });
                }
                if alpha[i] + beta[j] <= 0.0 {
                    return Err(Error::DegenerateRate { i, j });
                }
            }
        }
        let pi = SquareMatrix::from_fn(k, |i, j| p[(i, j)] * (alpha[i] + beta[j]));
        Ok(Self { alpha, beta, p, pi })
    }

    /// Builds parameters directly from a positive rate matrix.
    ///
    /// The stored representation is `alpha = 0`, `beta_j = max_i pi_ij`,
    /// `p_ij = pi_ij / beta_j`, i.e. only males fire.
    pub fn from_pi(pi: SquareMatrix) -> Result<Self> {
        let k = pi.k();
        for i in 0..k {
            for j in 0..k {
                let v = pi[(i, j)];
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::DegenerateRate { i, j });
                }
            }
        }
        let beta: Vec<f64> = (0..k)
            .map(|j| (0..k).map(|i| pi[(i, j)]).fold(0.0, f64::max))
            .collect();
        let p = SquareMatrix::from_fn(k, |i, j| (pi[(i, j)] / beta[j]).min(1.0));
        Ok(Self {
            alpha: vec![0.0; k],
            beta,
            p,
            pi,
        })
    }

    pub fn from_pi_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_pi(SquareMatrix::from_rows(rows)?)
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.pi.k()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn p(&self) -> &SquareMatrix {
        &self.p
    }

    #[inline]
    pub fn pi(&self) -> &SquareMatrix {
        &self.pi
    }

    /// `min_ij pi_ij`, the lower decay rate of the singles mass.
    pub fn c1(&self) -> f64 {
        self.pi.min()
    }

    /// `max_ij pi_ij`, the upper decay rate of the singles mass.
    pub fn c2(&self) -> f64 {
        self.pi.max()
    }
}

/// Integer type counts of a finite population of `n` females and `n` males.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationCounts {
    n: u64,
    x: Vec<u64>,
    y: Vec<u64>,
}

impl PopulationCounts {
    pub fn new(x: Vec<u64>, y: Vec<u64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} types, y has {}",
                x.len(),
                y.len()
            )));
        }
        let n: u64 = x.iter().sum();
        let ny: u64 = y.iter().sum();
        if n != ny {
            return Err(Error::InvalidPopulation(format!(
                "{n} females but {ny} males"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidPopulation("population is empty".into()));
        }
        Ok(Self { n, x, y })
    }

    /// Largest-remainder rounding of `n * x_i` (and `n * y_j`), ties going to
    /// the lowest index. Each count is within 1 of `n * x_i`.
    pub fn from_fractions(fractions: &PopulationFractions, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::RoundingInfeasible("n must be positive".into()));
        }
        let x = largest_remainder(fractions.x(), n)?;
        let y = largest_remainder(fractions.y(), n)?;
        Self::new(x, y)
    }

    #[inline]
    pub fn n(&self) -> u64 {
        self.n
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[u64] {
        &self.x
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    /// `x_i / n`, `y_j / n`.
    pub fn fractions(&self) -> PopulationFractions {
        let n = self.n as f64;
        PopulationFractions {
            x: self.x.iter().map(|&v| v as f64 / n).collect(),
            y: self.y.iter().map(|&v| v as f64 / n).collect(),
        }
    }
}

fn largest_remainder(weights: &[f64], n: u64) -> Result<Vec<u64>> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    if assigned > n {
        return Err(Error::RoundingInfeasible(format!(
            "floors sum to {assigned} > {n}"
        )));
    }
    let missing = (n - assigned) as usize;
    if missing > counts.len() {
        return Err(Error::RoundingInfeasible(format!(
            "{missing} units left for {} types",
            counts.len()
        )));
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // stable sort keeps the lowest index first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra)
    });
    for &idx in order.iter().take(missing) {
        counts[idx] += 1;
    }
    Ok(counts)
}

/// Type frequencies of an infinite population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationFractions {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PopulationFractions {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} types, y has {}",
                x.len(),
                y.len()
            )));
        }
        for v in x.iter().chain(&y) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidPopulation(format!(
                    "fractions must be nonnegative, got {v}"
                )));
            }
        }
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        if (sx - 1.0).abs() > FRACTION_SUM_TOL || (sy - 1.0).abs() > FRACTION_SUM_TOL {
            return Err(Error::InvalidPopulation(format!(
                "fractions must sum to 1, got {sx} and {sy}"
            )));
        }
        Ok(Self { x, y })
    }

    /// Normalizes arbitrary nonnegative weights to unit sums.
    pub fn normalized(x: &[f64], y: &[f64]) -> Result<Self> {
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        if !(sx > 0.0 && sy > 0.0) {
            return Err(Error::InvalidPopulation("weights must have positive sum".into()));
        }
        Self::new(
            x.iter().map(|v| v / sx).collect(),
            y.iter().map(|v| v / sy).collect(),
        )
    }

    /// The same frequencies for both sexes.
    pub fn symmetric(x: Vec<f64>) -> Result<Self> {
        Self::new(x.clone(), x)
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// The panmictic pattern `x_i y_j`.
    pub fn outer(&self) -> PairMatrix {
        SquareMatrix::from_fn(self.k(), |i, j| self.x[i] * self.y[j])
    }
}

/// Witness `pi_ij = alpha_bar_i + beta_bar_j` of fine balance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineBalanceDecomposition {
    pub alpha_bar: Vec<f64>,
    pub beta_bar: Vec<f64>,
}

impl FineBalanceDecomposition {
    pub fn pi_entry(&self, i: usize, j: usize) -> f64 {
        self.alpha_bar[i] + self.beta_bar[j]
    }
}

/// Largest violation `|pi_ij + pi_i'j' - pi_ij' - pi_i'j|` over all index quadruples.
pub fn fine_balance_defect(pi: &SquareMatrix) -> f64 {
    let k = pi.k();
    let mut worst = 0.0_f64;
    for i in 0..k {
        for ip in 0..k {
            for j in 0..k {
                for jp in 0..k {
                    let d = pi[(i, j)] + pi[(ip, jp)] - pi[(i, jp)] - pi[(ip, j)];
                    worst = worst.max(d.abs());
                }
            }
        }
    }
    worst
}

/// Returns the gauge-fixed decomposition (`min alpha_bar = 0`) when `pi`
/// satisfies fine balance, `None` otherwise.
pub fn check_fine_balance(params: &ModelParams) -> Option<FineBalanceDecomposition> {
    let pi = params.pi();
    let k = pi.k();
    if fine_balance_defect(pi) > ALGEBRAIC_RTOL * pi.max() {
        return None;
    }
    let mut i_star = 0;
    for i in 1..k {
        if pi[(i, 0)] < pi[(i_star, 0)] {
            i_star = i;
        }
    }
    let base = pi[(i_star, 0)];
    Some(FineBalanceDecomposition {
        alpha_bar: (0..k).map(|i| pi[(i, 0)] - base).collect(),
        beta_bar: (0..k).map(|j| pi[(i_star, j)]).collect(),
    })
}

/// Parameter regimes of the symmetric two-type model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymCase {
    /// `pi11 + pi22 = 2 pi12`.
    FineBalance,
    /// `pi11 = pi12 != pi22`, so `gamma = 1`.
    GammaOne,
    /// `pi22 = pi12 != pi11`, so `gamma = 0`.
    GammaZero,
    Generic,
}

impl fmt::Display for SymCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SymCase::FineBalance => "fine-balance",
            SymCase::GammaOne => "gamma-one",
            SymCase::GammaZero => "gamma-zero",
            SymCase::Generic => "generic",
        };
        f.write_str(s)
    }
}

/// Reduced parameters of the symmetric 2x2 model (`pi12 = pi21`, `x1 = y1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2x2Params {
    pub pi11: f64,
    pub pi12: f64,
    pub pi22: f64,
    /// `(pi22 - pi12) / (pi11 + pi22 - 2 pi12)`; absent under fine balance.
    pub gamma: Option<f64>,
    /// `pi12 / (pi22 - pi12)`.
    pub theta1: Option<f64>,
    /// `pi12 / (pi11 - pi12)`.
    pub theta2: Option<f64>,
    pub case: SymCase,
}

impl Sym2x2Params {
    /// `pi11 + pi22 - 2 pi12`.
    pub fn curvature(&self) -> f64 {
        self.pi11 + self.pi22 - 2.0 * self.pi12
    }

    /// Case dispatch on a symmetric rate triple, without any population.
    /// The diagonal rates may vanish (like pairs never form); `pi12` must be
    /// positive.
    pub fn from_rates(pi11: f64, pi12: f64, pi22: f64) -> Result<Self> {
        let finite = pi11.is_finite() && pi12.is_finite() && pi22.is_finite();
        if !(finite && pi11 >= 0.0 && pi12 > 0.0 && pi22 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need pi11, pi22 >= 0 and pi12 > 0, got ({pi11}, {pi12}, {pi22})"
            )));
        }
        let tol = ALGEBRAIC_RTOL * pi11.max(pi12).max(pi22);
        let s = pi11 + pi22 - 2.0 * pi12;
        let d1 = pi22 - pi12;
        let d2 = pi11 - pi12;
        let case = if s.abs() <= tol {
            SymCase::FineBalance
        } else if d2.abs() <= tol {
            SymCase::GammaOne
        } else if d1.abs() <= tol {
            SymCase::GammaZero
        } else {
            SymCase::Generic
        };
        let gamma = match case {
            SymCase::FineBalance => None,
            SymCase::GammaOne => Some(1.0),
            SymCase::GammaZero => Some(0.0),
            SymCase::Generic => Some(d1 / s),
        };
        let theta1 = (d1.abs() > tol).then(|| pi12 / d1);
        let theta2 = (d2.abs() > tol).then(|| pi12 / d2);
        Ok(Self {
            pi11,
            pi12,
            pi22,
            gamma,
            theta1,
            theta2,
            case,
        })
    }
}

fn require_symmetric_2x2(params: &ModelParams) -> Result<(f64, f64, f64)> {
    if params.k() != 2 {
        return Err(Error::NotTwoByTwo(params.k()));
    }
    let pi = params.pi();
    let (p12, p21) = (pi[(0, 1)], pi[(1, 0)]);
    if (p12 - p21).abs() > ALGEBRAIC_RTOL * pi.max() {
        return Err(Error::SymmetryViolation(format!(
            "pi12 = {p12} differs from pi21 = {p21}"
        )));
    }
    Ok((pi[(0, 0)], 0.5 * (p12 + p21), pi[(1, 1)]))
}

/// Symmetric 2x2 reduction: validates `pi12 = pi21` and `x1 = y1`, then
/// computes `gamma`, `theta1`, `theta2` and the case tag.
pub fn sym2x2_reduce(params: &ModelParams, fractions: &PopulationFractions) -> Result<Sym2x2Params> {
    let (pi11, pi12, pi22) = require_symmetric_2x2(params)?;
    if fractions.k() != 2 {
        return Err(Error::NotTwoByTwo(fractions.k()));
    }
    let (x1, y1) = (fractions.x()[0], fractions.y()[0]);
    if (x1 - y1).abs() > FRACTION_SUM_TOL {
        return Err(Error::SymmetryViolation(format!("x1 = {x1} differs from y1 = {y1}")));
    }
    Sym2x2Params::from_rates(pi11, pi12, pi22)
}

/// Assortativeness of the limiting two-type mating pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatingClass {
    Heterogamous,
    Panmictic,
    Homogamous,
}

impl fmt::Display for MatingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatingClass::Heterogamous => "heterogamous",
            MatingClass::Panmictic => "panmictic",
            MatingClass::Homogamous => "homogamous",
        })
    }
}

/// Classifies a symmetric two-type model by the sign of `pi11 + pi22 - 2 pi12`.
/// The panmictic band `|.| <= 1e-9 max pi` is closed.
pub fn classify_2x2(params: &ModelParams) -> Result<MatingClass> {
    let (pi11, pi12, pi22) = require_symmetric_2x2(params)?;
    let s = pi11 + pi22 - 2.0 * pi12;
    let tol = ALGEBRAIC_RTOL * params.pi().max();
    Ok(if s < -tol {
        MatingClass::Heterogamous
    } else if s.abs() <= tol {
        MatingClass::Panmictic
    } else {
        MatingClass::Homogamous
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(k: usize) -> SquareMatrix {
        SquareMatrix::from_fn(k, |_, _| 1.0)
    }

    #[test]
    fn build_params_examples() {
        let p = ModelParams::new(vec![0.0, 0.0], vec![1.0, 1.0], ones(2)).unwrap();
        assert_eq!(p.pi().to_rows(), vec![vec![1.0, 1.0], vec![1.0, 1.0]]);

        let p = ModelParams::new(vec![1.0, 2.0], vec![1.0, 2.0], ones(2)).unwrap();
        assert_eq!(p.pi().to_rows(), vec![vec![2.0, 3.0], vec![3.0, 4.0]]);

        let err = ModelParams::new(vec![0.0, 0.0], vec![0.0, 1.0], ones(2)).unwrap_err();
        assert_eq!(err, Error::DegenerateRate { i: 0, j: 0 });
    }

    #[test]
    fn build_params_rejects_bad_inputs() {
        let mut p = ones(2);
        p[(1, 0)] = 1.5;
        assert!(matches!(
            ModelParams::new(vec![1.0; 2], vec![1.0; 2], p),
            Err(Error::InvalidProbability { i: 1, j: 0, .. })
        ));
        let mut p = ones(2);
        p[(0, 1)] = 0.0;
        assert!(matches!(
            ModelParams::new(vec![1.0; 2], vec![1.0; 2], p),
            Err(Error::InvalidProbability { .. })
        ));
        assert!(matches!(
            ModelParams::new(vec![1.0; 3], vec![1.0; 2], ones(2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn from_pi_round_trips_the_rate_matrix() {
        let pi = SquareMatrix::from_rows(&[vec![3.0, 1.0], vec![0.5, 2.0]]).unwrap();
        let params = ModelParams::from_pi(pi.clone()).unwrap();
        let rebuilt = ModelParams::new(
            params.alpha().to_vec(),
            params.beta().to_vec(),
            params.p().clone(),
        )
        .unwrap();
        assert!(rebuilt.pi().max_abs_diff(&pi) < 1e-15);
    }

    #[test]
    fn fine_balance_examples() {
        let fb = check_fine_balance(&ModelParams::from_pi_rows(&[vec![2.0, 3.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        assert_eq!(fb.alpha_bar, vec![0.0, 1.0]);
        assert_eq!(fb.beta_bar, vec![2.0, 3.0]);

        let fb = check_fine_balance(&ModelParams::from_pi(ones(2)).unwrap()).unwrap();
        assert_eq!(fb.alpha_bar, vec![0.0, 0.0]);
        assert_eq!(fb.beta_bar, vec![1.0, 1.0]);

        assert!(check_fine_balance(&ModelParams::from_pi_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap()).is_none());
    }

    #[test]
    fn gauge_uses_smallest_first_column_entry() {
        let pi = SquareMatrix::from_fn(3, |i, j| [2.0, 0.5, 1.0][i] + [1.0, 3.0, 0.25][j]);
        let fb = check_fine_balance(&ModelParams::from_pi(pi.clone()).unwrap()).unwrap();
        assert_eq!(fb.alpha_bar[1], 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((fb.pi_entry(i, j) - pi[(i, j)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sym2x2_examples() {
        let half = PopulationFractions::symmetric(vec![0.5, 0.5]).unwrap();
        let s = sym2x2_reduce(&ModelParams::from_pi_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap(), &half).unwrap();
        assert_eq!(s.case, SymCase::Generic);
        assert!((s.gamma.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.theta1, Some(1.0));
        assert_eq!(s.theta2, Some(0.5));

        let s = sym2x2_reduce(&ModelParams::from_pi_rows(&[vec![2.0, 3.0], vec![3.0, 4.0]]).unwrap(), &half).unwrap();
        assert_eq!(s.case, SymCase::FineBalance);
        assert_eq!(s.gamma, None);

        let s = sym2x2_reduce(&ModelParams::from_pi_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap(), &half).unwrap();
        assert_eq!(s.case, SymCase::GammaOne);
        assert_eq!(s.gamma, Some(1.0));
        assert_eq!(s.theta1, Some(1.0));
        assert_eq!(s.theta2, None);

        let s = sym2x2_reduce(&ModelParams::from_pi_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap(), &half).unwrap();
        assert_eq!(s.case, SymCase::GammaZero);
        assert_eq!(s.gamma, Some(0.0));
    }

    #[test]
    fn sym2x2_errors() {
        let half = PopulationFractions::symmetric(vec![0.5, 0.5]).unwrap();
        let skew = ModelParams::from_pi_rows(&[vec![3.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(matches!(sym2x2_reduce(&skew, &half), Err(Error::SymmetryViolation(_))));
        let sym = ModelParams::from_pi_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let uneven = PopulationFractions::new(vec![0.4, 0.6], vec![0.5, 0.5]).unwrap();
        assert!(matches!(sym2x2_reduce(&sym, &uneven), Err(Error::SymmetryViolation(_))));
        let three = ModelParams::from_pi(ones(3)).unwrap();
        assert_eq!(classify_2x2(&three), Err(Error::NotTwoByTwo(3)));
    }

    #[test]
    fn classify_examples() {
        let c = |rows: &[Vec<f64>]| classify_2x2(&ModelParams::from_pi_rows(rows).unwrap()).unwrap();
        assert_eq!(c(&[vec![1.0, 1.0], vec![1.0, 1.0]]), MatingClass::Panmictic);
        assert_eq!(c(&[vec![3.0, 1.0], vec![1.0, 2.0]]), MatingClass::Homogamous);
        assert_eq!(c(&[vec![1.0, 3.0], vec![3.0, 1.0]]), MatingClass::Heterogamous);
        // 0.1 + 0.3 = 2 * 0.2 only up to rounding
        assert_eq!(c(&[vec![0.1, 0.2], vec![0.2, 0.3]]), MatingClass::Panmictic);
    }

    #[test]
    fn population_rounding_uses_largest_remainder() {
        let f = PopulationFractions::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], vec![0.5, 0.25, 0.25]).unwrap();
        let pop = PopulationCounts::from_fractions(&f, 10).unwrap();
        assert_eq!(pop.x(), &[4, 3, 3]);
        assert_eq!(pop.y(), &[5, 3, 2]);
        assert_eq!(pop.n(), 10);
    }

    #[test]
    fn population_validation() {
        assert!(matches!(
            PopulationCounts::new(vec![1, 2], vec![2, 2]),
            Err(Error::InvalidPopulation(_))
        ));
        assert!(PopulationCounts::new(vec![0, 3], vec![1, 2]).is_ok());
        assert!(matches!(
            PopulationFractions::new(vec![0.5, 0.6], vec![0.5, 0.5]),
            Err(Error::InvalidPopulation(_))
        ));
    }

    #[test]
    fn state_space_membership() {
        let m = SquareMatrix::from_rows(&[vec![0.1, 0.2], vec![0.0, 0.3]]).unwrap();
        assert!(m.is_in_state_space(&[0.3, 0.7], &[0.4, 0.6], 1e-12));
        assert!(!m.is_in_state_space(&[0.25, 0.75], &[0.4, 0.6], 0.0));
    }

    #[test]
    fn matrix_serializes_as_nested_rows() {
        let m = SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.0]]");
        let back: SquareMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<SquareMatrix>("[[1.0],[2.0,3.0]]").is_err());
    }
}
