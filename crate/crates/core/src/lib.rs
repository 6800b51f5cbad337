//! Poisson encounter-mating: a finite population of `n` females and `n`
//! males of `k` types forms permanent pairs; type-`ij` pairs form at rate
//! `pi_ij * (single type-i females) * (single type-j males) / (singles)`.
//!
//! [`ctmc`] simulates the pair-type Markov chain exactly. Its large-population
//! limit lives in [`fluid`], with Lotka-Volterra and replicator forms in
//! [`dynamics`] and exact solutions for special rate structures in
//! [`closed_form`]. Gaussian corrections to the limit are in [`fluctuations`].

pub mod closed_form;
pub mod ctmc;
pub mod dynamics;
pub mod error;
pub mod fluctuations;
pub mod fluid;
pub mod model;
pub mod ode;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
pub use model::{
    check_fine_balance, classify_2x2, sym2x2_reduce, FineBalanceDecomposition, MatingClass,
    ModelParams, PairMatrix, PopulationCounts, PopulationFractions, SquareMatrix, Sym2x2Params,
    SymCase,
};
