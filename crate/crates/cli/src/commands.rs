//! One function per subcommand, each returning rendered output.

use std::fmt::Write as _;

use pairsim::closed_form::{sym2x2_report, Sym2x2Solution};
use pairsim::ctmc::{self, pattern_statistics, simulate_coupled, sup_norm_distance, RecordMode, SimConfig};
use pairsim::dynamics::integrate_replicator;
use pairsim::fluctuations::empirical_fluctuations;
use pairsim::fluid::{integrate_fluid, mating_pattern_limit, PatternReport};
use pairsim::model::fine_balance_defect;
use pairsim::{check_fine_balance, classify_2x2, rng, Sym2x2Params};
use rayon::prelude::*;
use serde_json::{json, to_value};

use crate::input::{Input, Population};
use crate::{CliError, Coords, Grid, Output};

fn json(v: impl serde::Serialize) -> Output {
    Output::Json(to_value(v).expect("reports serialize"))
}

pub fn simulate(
    input: &Input,
    seed: u64,
    replicates: usize,
    t_end: Option<f64>,
    n: Option<u64>,
    csv: bool,
) -> Result<Output, CliError> {
    let pop = input.counts(n)?;
    match replicates {
        0 => Err(CliError::Validation("--replicates must be at least 1".into())),
        1 => {
            let config = SimConfig::new(seed)
                .with_t_max(t_end.unwrap_or(f64::INFINITY))
                .with_record(RecordMode::FullPath);
            let traj = ctmc::simulate(&input.params, &pop, &config)?;
            if csv {
                let mut buf = Vec::new();
                traj.write_events_csv(&mut buf)?;
                Ok(Output::Text(String::from_utf8(buf).expect("ASCII output")))
            } else {
                Ok(json(&traj))
            }
        }
        r => {
            if t_end.is_some() {
                return Err(CliError::Validation(
                    "replicate statistics are over absorbed patterns; drop --t-end".into(),
                ));
            }
            let (mean, se) = pattern_statistics(&input.params, &pop, seed, r)?;
            Ok(Output::Json(json!({
                "n": pop.n(),
                "replicates": r,
                "mean": mean,
                "std_error": se,
            })))
        }
    }
}

pub fn fluid(input: &Input, t_end: f64, rtol: f64, coords: Coords) -> Result<Output, CliError> {
    let fractions = input.fractions()?;
    let k = input.params.k();
    match coords {
        Coords::Fluid => {
            let sol = integrate_fluid(&input.params, &fractions, t_end, rtol)?;
            let mut buf = Vec::new();
            sol.write_csv(&mut buf)?;
            Ok(Output::Text(String::from_utf8(buf).expect("ASCII output")))
        }
        Coords::Replicator => {
            let sol = integrate_replicator(&input.params, &fractions, t_end, rtol)?;
            let mut s = String::from("t");
            (1..=k).for_each(|i| write!(s, ",A{i}").unwrap());
            (1..=k).for_each(|j| write!(s, ",B{j}").unwrap());
            s.push_str(",Z");
            for i in 1..=k {
                (1..=k).for_each(|j| write!(s, ",Q{i}{j}").unwrap());
            }
            s.push('\n');
            for ((t, a, b, z), (_, q)) in sol.singles().zip(sol.fluid.samples()) {
                write!(s, "{t}").unwrap();
                a.iter().chain(&b).chain([&z]).chain(q.as_slice()).for_each(|v| write!(s, ",{v}").unwrap());
                s.push('\n');
            }
            Ok(Output::Text(s))
        }
    }
}

pub fn pattern(input: &Input, eps: f64) -> Result<Output, CliError> {
    let (pattern, error_bound) = mating_pattern_limit(&input.params, &input.fractions()?, eps)?;
    Ok(json(PatternReport { pattern, error_bound }))
}

pub fn classify(input: &Input) -> Result<Output, CliError> {
    let class = classify_2x2(&input.params)?;
    let pi = input.params.pi();
    Ok(Output::Json(json!({
        "class": class,
        "curvature": pi[(0, 0)] + pi[(1, 1)] - pi[(0, 1)] - pi[(1, 0)],
    })))
}

pub fn fine_balance(input: &Input) -> Result<Output, CliError> {
    let decomposition = check_fine_balance(&input.params);
    Ok(Output::Json(json!({
        "fine_balance": decomposition.is_some(),
        "defect": fine_balance_defect(input.params.pi()),
        "decomposition": decomposition,
    })))
}

pub fn sym2x2(input: &Input) -> Result<Output, CliError> {
    Ok(json(sym2x2_report(&input.params, &input.fractions()?)?))
}

pub fn converge(input: &Input, seed: u64, replicates: usize, n_list: &[u64], t_end: f64) -> Result<Output, CliError> {
    if replicates == 0 || n_list.is_empty() {
        return Err(CliError::Validation("need at least one replicate and one population size".into()));
    }
    let fractions = input.fractions()?;
    let fluid = integrate_fluid(&input.params, &fractions, t_end, 1e-10)?;
    let per_seed: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let config = SimConfig::new(rng::split(seed, r))
                .with_t_max(t_end)
                .with_record(RecordMode::FullPath);
            simulate_coupled(&input.params, &fractions, n_list, &config)?
                .iter()
                .map(|tr| sup_norm_distance(tr, &fluid, t_end))
                .collect::<pairsim::Result<Vec<f64>>>()
        })
        .collect::<pairsim::Result<_>>()?;
    let rows: Vec<_> = n_list
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let errors: Vec<f64> = per_seed.iter().map(|e| e[idx]).collect();
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            let m = sorted.len();
            let median = if m % 2 == 1 {
                sorted[m / 2]
            } else {
                0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
            };
            json!({"n": n, "median": median, "max": sorted[m - 1], "errors": errors})
        })
        .collect();
    Ok(Output::Json(json!({"t_end": t_end, "replicates": replicates, "rows": rows})))
}

/// Population size for `clt`: `--n`, else the file's size, else 10^4.
pub fn clt(input: &Input, seed: u64, replicates: usize, t_probe: f64, n: Option<u64>) -> Result<Output, CliError> {
    let n = match (n, &input.population) {
        (Some(n), _) => n,
        (None, Some(Population::Counts(c))) => c.n(),
        (None, Some(Population::Fractions { n: Some(n), .. })) => *n,
        _ => 10_000,
    };
    let report = empirical_fluctuations(&input.params, &input.fractions()?, n, t_probe, replicates, seed)?;
    Ok(json(report))
}

pub fn levelcurves(grid: &Grid, pi12: f64, x1: f64, csv: bool) -> Result<Output, CliError> {
    let axis = grid.points();
    let q12: Vec<Vec<f64>> = axis
        .par_iter()
        .map(|&p11| {
            axis.iter()
                .map(|&p22| {
                    let reduced = Sym2x2Params::from_rates(p11, pi12, p22)?;
                    Sym2x2Solution::from_reduced(reduced, x1)?.q12_limit()
                })
                .collect::<pairsim::Result<Vec<f64>>>()
        })
        .collect::<pairsim::Result<_>>()?;
    if csv {
        let mut s = String::from("pi11,pi22,q12\n");
        for (row, &p11) in q12.iter().zip(&axis) {
            for (q, &p22) in row.iter().zip(&axis) {
                writeln!(s, "{p11},{p22},{q}").unwrap();
            }
        }
        return Ok(Output::Text(s));
    }
    Ok(Output::Json(json!({"pi12": pi12, "x1": x1, "axis": axis, "q12": q12})))
}
