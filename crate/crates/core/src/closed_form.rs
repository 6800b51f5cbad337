//! Exact solutions of the fluid limit.
//!
//! Under fine balance (`pi_ij = alpha_bar_i + beta_bar_j`) every quantity is
//! explicit for any `k`. In the symmetric two-type model (`pi12 = pi21`,
//! `x1 = y1`) the frequency `A1` solves a scalar ODE whose solution is known
//! implicitly; `Z` is then a closed function of `A1`, and `Q12` is a
//! one-dimensional integral. The implicit relations are inverted by bisection
//! and the integrals evaluated by adaptive Simpson quadrature.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    check_fine_balance, classify_2x2, sym2x2_reduce, FineBalanceDecomposition, MatingClass,
    ModelParams, PairMatrix, PopulationFractions, Sym2x2Params, SymCase,
};
use crate::quadrature::simpson;

/// Absolute accuracy targeted for `Q12` values.
pub const Q12_TOL: f64 = 1e-10;

/// `|x1 - gamma|` below this is treated as the stationary case `x1 = gamma`.
pub const STATIONARY_TOL: f64 = 1e-12;

/// Closed-form solution under fine balance.
#[derive(Clone, Debug, PartialEq)]
pub struct FineBalanceSolution {
    pub decomposition: FineBalanceDecomposition,
    pub fractions: PopulationFractions,
    pi: PairMatrix,
}

/// `(A, B, Z, Q)` at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidPoint {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub z: f64,
    pub q: PairMatrix,
}

/// `w_i e^{-r_i t} / sum_l w_l e^{-r_l t}`, shifted by the smallest active
/// rate so that large and infinite `t` stay finite.
fn tilted(w: &[f64], r: &[f64], t: f64) -> Vec<f64> {
    let r_min = w
        .iter()
        .zip(r)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, r)| *r)
        .fold(f64::INFINITY, f64::min);
    let un: Vec<f64> = w
        .iter()
        .zip(r)
        .map(|(&w, &r)| {
            let d = r - r_min;
            if w == 0.0 {
                0.0
            } else if d == 0.0 {
                w
            } else {
                w * (-d * t).exp()
            }
        })
        .collect();
    let sum: f64 = un.iter().sum();
    un.into_iter().map(|v| v / sum).collect()
}

impl FineBalanceSolution {
    pub fn new(params: &ModelParams, fractions: &PopulationFractions) -> Result<Self> {
        if params.k() != fractions.k() {
            return Err(Error::DimensionMismatch(format!(
                "params have k = {}, fractions have k = {}",
                params.k(),
                fractions.k()
            )));
        }
        let decomposition = check_fine_balance(params).ok_or(Error::NotFineBalance)?;
        Ok(Self {
            decomposition,
            fractions: fractions.clone(),
            pi: params.pi().clone(),
        })
    }

    /// Values at time `t >= 0`; `t = f64::INFINITY` gives the limit.
    pub fn eval(&self, t: f64) -> Result<FluidPoint> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("t = {t} must be nonnegative")));
        }
        let (x, y) = (self.fractions.x(), self.fractions.y());
        let k = x.len();
        let decay = |rate: f64| if rate * t == 0.0 { 1.0 } else { (-rate * t).exp() };
        let z = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .map(|(i, j)| x[i] * y[j] * decay(self.pi[(i, j)]))
            .sum();
        let q = PairMatrix::from_fn(k, |i, j| {
            let g = if t.is_infinite() { 1.0 } else { -(-self.pi[(i, j)] * t).exp_m1() };
            x[i] * y[j] * g
        });
        Ok(FluidPoint {
            a: tilted(x, &self.decomposition.alpha_bar, t),
            b: tilted(y, &self.decomposition.beta_bar, t),
            z,
            q,
        })
    }

    /// `Q_ij'(t) = pi_ij x_i y_j e^{-pi_ij t}`.
    pub fn q_rate(&self, t: f64) -> PairMatrix {
        let (x, y) = (self.fractions.x(), self.fractions.y());
        PairMatrix::from_fn(x.len(), |i, j| {
            self.pi[(i, j)] * x[i] * y[j] * (-self.pi[(i, j)] * t).exp()
        })
    }
}

/// `(A, B, Z, Q)(t)` under fine balance.
pub fn fine_balance_eval(sol: &FineBalanceSolution, t: f64) -> Result<FluidPoint> {
    sol.eval(t)
}

/// The coordinate in which the limiting pattern integral is written.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum LimitCoordinate {
    /// `A1` never moves (`x1 = gamma`, or a single type present).
    Stationary,
    /// `zeta(inf)` of the `gamma = 1` case (of the relabeled model when
    /// `gamma = 0`): `+inf` or `0`.
    Zeta(f64),
    /// `xi(inf) = lim (x1 - A1) / (A1 - gamma)`; possibly `+inf`.
    Xi(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Equilibrium {
    pub a1: f64,
    pub limit: LimitCoordinate,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    FineBalance,
    /// `A1 = x1` forever; `Z = exp(-rate t)`.
    Stationary { rate: f64 },
    /// `pi11 = pi12`; `d = pi22 - pi12`.
    GammaOne { d: f64, theta1: f64 },
    /// Solved through the relabeled `gamma = 1` model.
    GammaZero { mirror: Box<Sym2x2Solution> },
    Generic { s: f64, gamma: f64, theta1: f64, theta2: f64 },
}

/// Solution of the symmetric two-type model.
#[derive(Clone, Debug, PartialEq)]
pub struct Sym2x2Solution {
    pub reduced: Sym2x2Params,
    pub x1: f64,
    kind: Kind,
}

impl Sym2x2Solution {
    pub fn new(params: &ModelParams, fractions: &PopulationFractions) -> Result<Self> {
        let reduced = sym2x2_reduce(params, fractions)?;
        Self::from_reduced(reduced, fractions.x()[0])
    }

    /// Builds the solution from reduced rates and `x1 = y1`.
    pub fn from_reduced(reduced: Sym2x2Params, x1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x1) {
            return Err(Error::InvalidArgument(format!("x1 = {x1} outside [0, 1]")));
        }
        let (p11, p12, p22) = (reduced.pi11, reduced.pi12, reduced.pi22);
        let s = reduced.curvature();
        let stationary = |x1: f64| Kind::Stationary {
            rate: s * x1 * x1 - 2.0 * (p22 - p12) * x1 + p22,
        };
        let kind = match reduced.case {
            SymCase::FineBalance => Kind::FineBalance,
            _ if x1 == 0.0 || x1 == 1.0 => stationary(x1),
            SymCase::GammaOne => Kind::GammaOne {
                d: p22 - p12,
                theta1: reduced.theta1.expect("theta1 is defined when pi22 != pi12"),
            },
            SymCase::GammaZero => {
                let mirror = Sym2x2Params::from_rates(p22, p12, p11)?;
                debug_assert_eq!(mirror.case, SymCase::GammaOne);
                Kind::GammaZero {
                    mirror: Box::new(Self::from_reduced(mirror, 1.0 - x1)?),
                }
            }
            SymCase::Generic => {
                let gamma = reduced.gamma.expect("gamma is defined off fine balance");
                if (x1 - gamma).abs() <= STATIONARY_TOL {
                    stationary(x1)
                } else {
                    Kind::Generic {
                        s,
                        gamma,
                        theta1: reduced.theta1.expect("generic case has theta1"),
                        theta2: reduced.theta2.expect("generic case has theta2"),
                    }
                }
            }
        };
        Ok(Self { reduced, x1, kind })
    }

    pub fn case(&self) -> SymCase {
        self.reduced.case
    }

    /// `A1(inf)` and the limiting integration coordinate.
    pub fn equilibrium(&self) -> Result<Equilibrium> {
        let x1 = self.x1;
        let (p11, p12, p22) = (self.reduced.pi11, self.reduced.pi12, self.reduced.pi22);
        Ok(match &self.kind {
            Kind::FineBalance => return Err(Error::FineBalanceExcluded),
            Kind::Stationary { .. } => Equilibrium {
                a1: x1,
                limit: LimitCoordinate::Stationary,
            },
            Kind::GammaOne { d, .. } => {
                if *d > 0.0 {
                    Equilibrium {
                        a1: 1.0,
                        limit: LimitCoordinate::Zeta(f64::INFINITY),
                    }
                } else {
                    Equilibrium {
                        a1: 0.0,
                        limit: LimitCoordinate::Zeta(0.0),
                    }
                }
            }
            Kind::GammaZero { mirror } => {
                let m = mirror.equilibrium()?;
                Equilibrium {
                    a1: 1.0 - m.a1,
                    limit: m.limit,
                }
            }
            Kind::Generic { gamma, .. } => {
                let g = *gamma;
                let to_zero = Equilibrium {
                    a1: 0.0,
                    limit: LimitCoordinate::Xi(-x1 / g),
                };
                let to_one = Equilibrium {
                    a1: 1.0,
                    limit: LimitCoordinate::Xi(-(1.0 - x1) / (1.0 - g)),
                };
                match (p11 > p12, p22 > p12) {
                    (true, true) => Equilibrium {
                        a1: g,
                        limit: LimitCoordinate::Xi(f64::INFINITY),
                    },
                    (false, false) => {
                        if x1 < g {
                            to_zero
                        } else {
                            to_one
                        }
                    }
                    (true, false) => to_zero,
                    (false, true) => to_one,
                }
            }
        })
    }

    /// Time needed for `A1` to travel from `x1` to `a`, from the implicit
    /// solution. Increasing in `|a - x1|` on the way to the equilibrium.
    fn travel_time(&self, a: f64) -> f64 {
        let x1 = self.x1;
        match &self.kind {
            Kind::GammaOne { d, .. } => {
                let lhs = ((1.0 - x1) / (1.0 - a)).ln() + (a / x1).ln() + 1.0 / (1.0 - a)
                    - 1.0 / (1.0 - x1);
                lhs / d
            }
            Kind::Generic {
                gamma,
                theta1,
                theta2,
                ..
            } => {
                let common = ((a - gamma) / (x1 - gamma)).ln();
                let lhs = theta1 * ((x1 / a).ln() + common)
                    + theta2 * (((1.0 - x1) / (1.0 - a)).ln() + common);
                -lhs / self.reduced.pi12
            }
            _ => unreachable!("travel time only exists for moving cases"),
        }
    }

    /// `A1(t)`, by bisection on the implicit relation down to adjacent floats.
    pub fn a1_of_t(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("t = {t} must be nonnegative")));
        }
        match &self.kind {
            Kind::FineBalance => return Err(Error::FineBalanceExcluded),
            Kind::Stationary { .. } => return Ok(self.x1),
            Kind::GammaZero { mirror } => return Ok(1.0 - mirror.a1_of_t(t)?),
            _ => {}
        }
        if t == 0.0 {
            return Ok(self.x1);
        }
        let target = self.equilibrium()?.a1;
        let (mut near, mut far) = (self.x1, target);
        for _ in 0..2000 {
            let mid = 0.5 * (near + far);
            if mid == near || mid == far {
                break;
            }
            let tau = self.travel_time(mid);
            if tau.is_nan() {
                return Err(Error::BracketFailure(format!(
                    "travel time undefined at A1 = {mid} ({} case, x1 = {})",
                    self.case(),
                    self.x1
                )));
            }
            if tau <= t {
                near = mid;
            } else {
                far = mid;
            }
        }
        Ok(near)
    }

    /// `Z` as a function of `A1` along the solution.
    pub fn z_of_a1(&self, a1: f64) -> Result<f64> {
        let x1 = self.x1;
        if a1 == x1 {
            return match self.kind {
                Kind::FineBalance => Err(Error::FineBalanceExcluded),
                _ => Ok(1.0),
            };
        }
        if !(a1 > 0.0 && a1 < 1.0) {
            return Err(Error::DomainError(format!("A1 = {a1} outside (0, 1)")));
        }
        match &self.kind {
            Kind::FineBalance => Err(Error::FineBalanceExcluded),
            Kind::Stationary { .. } => Err(Error::DomainError(format!(
                "A1 stays at {x1}; Z is not a function of A1 here"
            ))),
            Kind::GammaZero { mirror } => mirror.z_of_a1(1.0 - a1),
            Kind::GammaOne { d, theta1 } => {
                if (a1 - x1) * d < 0.0 {
                    return Err(Error::DomainError(format!(
                        "A1 = {a1} lies on the wrong side of x1 = {x1}"
                    )));
                }
                let log_z = theta1 * ((1.0 - a1) / (1.0 - x1)).ln()
                    - (theta1 + 1.0) * (a1 / x1).ln()
                    - theta1 * (1.0 / (1.0 - a1) - 1.0 / (1.0 - x1));
                Ok(log_z.exp())
            }
            Kind::Generic {
                gamma,
                theta1,
                theta2,
                ..
            } => {
                let ratio = (a1 - gamma) / (x1 - gamma);
                if !(ratio > 0.0) {
                    return Err(Error::DomainError(format!(
                        "A1 = {a1} is not on the side of gamma = {gamma} containing x1 = {x1}"
                    )));
                }
                let log_z = -(theta1 + 1.0) * (a1 / x1).ln()
                    - (theta2 + 1.0) * ((1.0 - a1) / (1.0 - x1)).ln()
                    + (theta1 + theta2 + 1.0) * ratio.ln();
                Ok(log_z.exp())
            }
        }
    }

    /// `Z(t)`.
    pub fn z_of_t(&self, t: f64) -> Result<f64> {
        match &self.kind {
            Kind::Stationary { rate } => Ok((-rate * t).exp()),
            _ => self.z_of_a1(self.a1_of_t(t)?),
        }
    }

    /// `Q12(t)`.
    pub fn q12_of_t(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("t = {t} must be nonnegative")));
        }
        match &self.kind {
            Kind::FineBalance => Err(Error::FineBalanceExcluded),
            Kind::Stationary { rate } => Ok(self.stationary_q12(*rate, t)),
            Kind::GammaZero { mirror } => mirror.q12_of_t(t),
            _ if t == 0.0 => Ok(0.0),
            Kind::GammaOne { theta1, .. } => {
                let a = self.a1_of_t(t)?;
                self.gamma_one_integral(*theta1 * (a - self.x1) / (1.0 - a))
            }
            Kind::Generic { gamma, .. } => {
                let a = self.a1_of_t(t)?;
                self.generic_integral((self.x1 - a) / (a - gamma))
            }
        }
    }

    /// `Q12(inf)`, integrating to the known limit of the integration
    /// coordinate rather than evaluating `A1` at infinite time.
    pub fn q12_infinity(&self) -> Result<f64> {
        match &self.kind {
            Kind::FineBalance => Err(Error::FineBalanceExcluded),
            Kind::Stationary { rate } => Ok(self.stationary_q12(*rate, f64::INFINITY)),
            Kind::GammaZero { mirror } => mirror.q12_infinity(),
            Kind::GammaOne { theta1, .. } => {
                let upper = if *theta1 > 0.0 { f64::INFINITY } else { -self.x1 * theta1 };
                self.gamma_one_integral(upper)
            }
            Kind::Generic { .. } => match self.equilibrium()?.limit {
                LimitCoordinate::Xi(xi) => self.generic_integral(xi),
                other => unreachable!("generic case has a xi limit, got {other:?}"),
            },
        }
    }

    /// `Q12(inf)` for every case, with the panmictic value `x1 (1 - x1)`
    /// under fine balance.
    pub fn q12_limit(&self) -> Result<f64> {
        match self.kind {
            Kind::FineBalance => Ok(self.x1 * (1.0 - self.x1)),
            _ => self.q12_infinity(),
        }
    }

    /// The full limiting pattern from `Q12(inf)` and the margins.
    pub fn pattern_infinity(&self) -> Result<PairMatrix> {
        Ok(pattern_from_q12(self.x1, self.q12_infinity()?))
    }

    fn stationary_q12(&self, rate: f64, t: f64) -> f64 {
        let x1 = self.x1;
        let mass = self.reduced.pi12 * x1 * (1.0 - x1) / rate;
        if t.is_infinite() {
            mass
        } else {
            -mass * (-rate * t).exp_m1()
        }
    }

    /// `int_0^upper (1 + y/(x1 theta1))^{-theta1-1} e^{-y/(1-x1)} dy`.
    fn gamma_one_integral(&self, upper: f64) -> Result<f64> {
        let Kind::GammaOne { theta1, .. } = self.kind else {
            unreachable!()
        };
        let x1 = self.x1;
        let c = 1.0 / (x1 * theta1);
        let f = move |y: f64| {
            let base = c * y;
            if base <= -1.0 {
                return 0.0;
            }
            (-(theta1 + 1.0) * base.ln_1p() - y / (1.0 - x1)).exp()
        };
        let scale = 1.0 / ((theta1 + 1.0) * c + 1.0 / (1.0 - x1)).abs();
        integrate_from_zero(f, upper, scale, Q12_TOL)
    }

    /// `pi12/s int_0^upper (1 + gamma y/x1)^{-theta1-1} (1 + (1-gamma) y/(1-x1))^{-theta2-1} dy`.
    fn generic_integral(&self, upper: f64) -> Result<f64> {
        let Kind::Generic {
            s,
            gamma,
            theta1,
            theta2,
        } = self.kind
        else {
            unreachable!()
        };
        let x1 = self.x1;
        let (c1, c2) = (gamma / x1, (1.0 - gamma) / (1.0 - x1));
        let f = move |y: f64| {
            let (b1, b2) = (c1 * y, c2 * y);
            if b1 <= -1.0 || b2 <= -1.0 {
                return 0.0;
            }
            (-(theta1 + 1.0) * b1.ln_1p() - (theta2 + 1.0) * b2.ln_1p()).exp()
        };
        let prefactor = self.reduced.pi12 / s;
        let scale = 1.0 / ((theta1 + 1.0) * c1 + (theta2 + 1.0) * c2).abs();
        Ok(prefactor * integrate_from_zero(f, upper, scale, Q12_TOL / prefactor.abs())?)
    }
}

/// `int_0^upper f` for finite or infinite `upper`. Long positive ranges are
/// mapped to a bounded interval through `y = scale u / (1 - u)`.
fn integrate_from_zero<F: Fn(f64) -> f64>(f: F, upper: f64, scale: f64, tol: f64) -> Result<f64> {
    if upper == 0.0 {
        return Ok(0.0);
    }
    if upper < 0.0 || upper <= 4.0 * scale {
        return simpson(&f, 0.0, upper, tol);
    }
    let u_max = if upper.is_infinite() { 1.0 } else { upper / (scale + upper) };
    simpson(
        |u| {
            if u >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - u;
            let v = f(scale * u / w) * scale / (w * w);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        u_max,
        tol,
    )
}

/// `[[x1 - q12, q12], [q12, 1 - x1 - q12]]`: the pattern with margins
/// `x = y = (x1, 1 - x1)` and off-diagonal mass `q12`.
pub fn pattern_from_q12(x1: f64, q12: f64) -> PairMatrix {
    PairMatrix::from_rows(&[vec![x1 - q12, q12], vec![q12, 1.0 - x1 - q12]])
        .expect("2x2 rows")
}

/// JSON report of the symmetric two-type analysis.
#[derive(Clone, Debug, Serialize)]
pub struct Sym2x2Report {
    pub case: String,
    pub gamma: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub a1_inf: f64,
    pub q12_inf: f64,
    pub pattern: PairMatrix,
    pub class: MatingClass,
}

/// Full symmetric two-type report. Fine-balance inputs are answered with
/// the panmictic pattern `x1 (1 - x1)`.
pub fn sym2x2_report(params: &ModelParams, fractions: &PopulationFractions) -> Result<Sym2x2Report> {
    let sol = Sym2x2Solution::new(params, fractions)?;
    let class = classify_2x2(params)?;
    let x1 = sol.x1;
    let (a1_inf, q12_inf) = match sol.case() {
        SymCase::FineBalance => {
            let fb = FineBalanceSolution::new(params, fractions)?.eval(f64::INFINITY)?;
            (fb.a[0], x1 * (1.0 - x1))
        }
        _ => (sol.equilibrium()?.a1, sol.q12_infinity()?),
    };
    Ok(Sym2x2Report {
        case: sol.case().to_string(),
        gamma: sol.reduced.gamma,
        theta1: sol.reduced.theta1,
        theta2: sol.reduced.theta2,
        a1_inf,
        q12_inf,
        pattern: pattern_from_q12(x1, q12_inf),
        class,
    })
}
