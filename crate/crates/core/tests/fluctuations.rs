use pairsim::ctmc::simulate_time_changed;
use pairsim::fluctuations::*;
use pairsim::fluid::integrate_fluid;
use pairsim::{ModelParams, PopulationCounts, PopulationFractions};
use proptest::prelude::*;
use rayon::prelude::*;

fn two_by_two() -> Vec<(ModelParams, PopulationFractions)> {
    vec![
        (
            ModelParams::from_pi_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap(),
            PopulationFractions::new(vec![0.4, 0.6], vec![0.5, 0.5]).unwrap(),
        ),
        (
            ModelParams::from_pi_rows(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap(),
            PopulationFractions::new(vec![0.5, 0.5], vec![0.3, 0.7]).unwrap(),
        ),
        (
            ModelParams::from_pi_rows(&[vec![0.5, 1.5], vec![1.0, 2.0]]).unwrap(),
            PopulationFractions::new(vec![0.7, 0.3], vec![0.6, 0.4]).unwrap(),
        ),
    ]
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn clt_variance_matches_scalar_ode_at_several_times() {
    let p = ModelParams::from_pi_rows(&[vec![1.0]]).unwrap();
    let f = PopulationFractions::new(vec![1.0], vec![1.0]).unwrap();
    for &t in &[0.5, 1.0, 2.0] {
        let sim = CltSimulator::new(&p, &f, t, 1e-3).unwrap();
        let ends: Vec<f64> = (0..10_000u64).into_par_iter().map(|r| sim.endpoint(5, r)[0]).collect();
        let want = (-t).exp() - (-2.0 * t).exp();
        let got = variance(&ends);
        assert!((got / want - 1.0).abs() < 0.05, "t = {t}: {got} vs {want}");
    }
}

#[test]
fn clt_law_is_exchangeable_without_preferences() {
    // equal rates: swapping the female types together with x leaves the law unchanged
    let p = ModelParams::from_pi_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let f = PopulationFractions::new(vec![0.5, 0.5], vec![0.3, 0.7]).unwrap();
    let sim = CltSimulator::new(&p, &f, 1.0, 1e-2).unwrap();
    let ends: Vec<Vec<f64>> = (0..10_000u64).into_par_iter().map(|r| sim.endpoint(8, r)).collect();
    for (a, b) in [(0usize, 2usize), (1, 3)] {
        let va: Vec<f64> = ends.iter().map(|e| e[a]).collect();
        let vb: Vec<f64> = ends.iter().map(|e| e[b]).collect();
        let (sa, sb) = (variance(&va), variance(&vb));
        let se = (sa / 10_000.0).sqrt() + (sb / 10_000.0).sqrt();
        let ma = va.iter().sum::<f64>() / 1e4;
        let mb = vb.iter().sum::<f64>() / 1e4;
        assert!((ma - mb).abs() < 4.0 * se);
        assert!((sa / sb - 1.0).abs() < 0.08, "{sa} vs {sb}");
    }
}

#[test]
fn scalar_diffusion_mean_is_the_fluid_value() {
    let p = ModelParams::from_pi_rows(&[vec![1.0]]).unwrap();
    let f = PopulationFractions::new(vec![1.0], vec![1.0]).unwrap();
    let ends: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|s| *simulate_diffusion(&p, &f, 10_000, 1.0, 1e-2, s).unwrap().z.last().unwrap().as_slice().first().unwrap())
        .collect();
    let mean = ends.iter().sum::<f64>() / 1000.0;
    let se = (variance(&ends) / 1000.0).sqrt();
    let want = 1.0 - (-1.0f64).exp();
    assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want} (se {se})");
}

#[test]
fn diffusion_strong_error_shrinks_at_order_one_half() {
    let (p, f) = two_by_two().remove(0);
    let n = 100;
    let t_end = 1.0;
    let fine = 100_000usize;
    let coarse = [100usize, 200, 400, 800];
    let errors: Vec<f64> = coarse
        .iter()
        .map(|&steps| {
            let ratio = fine / steps;
            let per_path: Vec<f64> = (0..20u64)
                .into_par_iter()
                .map(|s| {
                    let mut g = pairsim::rng::stream(77, s);
                    let sd = (t_end / fine as f64).sqrt();
                    let incr: Vec<[f64; 4]> = (0..fine)
                        .map(|_| {
                            use rand_distr::{Distribution, StandardNormal};
                            std::array::from_fn(|_| { let xi: f64 = StandardNormal.sample(&mut g); sd * xi })
                        })
                        .collect();
                    let reference = simulate_diffusion_driven(&p, &f, n, t_end, fine, 1.0, |m, out| out.copy_from_slice(&incr[m])).unwrap();
                    let approx = simulate_diffusion_driven(&p, &f, n, t_end, steps, 1.0, |m, out| {
                        out.iter_mut().for_each(|o| *o = 0.0);
                        for inc in &incr[m * ratio..(m + 1) * ratio] {
                            out.iter_mut().zip(inc).for_each(|(o, v)| *o += v);
                        }
                    })
                    .unwrap();
                    reference.z.last().unwrap().max_abs_diff(approx.z.last().unwrap())
                })
                .collect();
            per_path.iter().sum::<f64>() / per_path.len() as f64
        })
        .collect();
    let order = (errors[0] / errors[3]).log2() / 3.0;
    eprintln!("strong errors {errors:?}, observed order {order:.3}");
    assert!(errors.windows(2).all(|w| w[1] < w[0]));
    assert!(order > 0.35 && order < 1.3, "observed order {order}");
}

#[test]
fn coupled_diffusion_tracks_the_jump_process() {
    let n = 10_000u64;
    let threshold = 5.0 * (n as f64).ln() / n as f64;
    for (p, f) in two_by_two() {
        let pop = PopulationCounts::from_fractions(&f, n).unwrap();
        let d: Vec<f64> = (0..40u64)
            .into_par_iter()
            .map(|s| {
                let (tr, z) = coupled_ctmc_diffusion(&p, &pop, 1.0, 1e-3, s).unwrap();
                ctmc_diffusion_distance(&tr, &z)
            })
            .collect();
        let ok = d.iter().filter(|&&v| v < threshold).count();
        eprintln!("coupled distances (threshold {threshold:.5}): max {:.5}, pass {ok}/40", d.iter().cloned().fold(0.0, f64::max));
        assert!(ok as f64 >= 0.9 * 40.0);
    }
}

#[test]
fn uncoupled_diffusion_is_farther_than_coupled() {
    let n = 10_000u64;
    let (p, f) = two_by_two().remove(0);
    let pop = PopulationCounts::from_fractions(&f, n).unwrap();
    let (tr, coupled) = coupled_ctmc_diffusion(&p, &pop, 1.0, 1e-3, 3).unwrap();
    let mut indep = IndependentBrownian::new(99);
    let free = simulate_diffusion_time_changed(&p, &pop.fractions(), n, 1.0, 1e-3, &mut indep).unwrap();
    assert!(ctmc_diffusion_distance(&tr, &coupled) < ctmc_diffusion_distance(&tr, &free));
}

#[test]
fn kmt_arrivals_drive_a_valid_chain() {
    let (p, f) = two_by_two().remove(1);
    let pop = PopulationCounts::from_fractions(&f, 200).unwrap();
    let mut paths = KmtPaths::with_defaults(1, 4);
    let tr = simulate_time_changed(&p, &pop, &mut paths, f64::INFINITY, &pairsim::ctmc::RecordMode::PatternOnly).unwrap();
    for (i, &xi) in pop.x().iter().enumerate() {
        assert_eq!(tr.pattern.row_sum(i), xi as f64);
    }
}

#[test]
fn fine_balance_covariance_matches_limit() {
    let p = ModelParams::from_pi_rows(&[vec![1.0, 1.5], vec![2.0, 2.5]]).unwrap();
    let f = PopulationFractions::new(vec![0.4, 0.6], vec![0.5, 0.5]).unwrap();
    let rep = empirical_fluctuations(&p, &f, 10_000, 1.0, 10_000, 21).unwrap();
    let dim = 4;
    for r in 0..dim {
        assert!(rep.mean_empirical[r].abs() < 3.0 * rep.mean_std_error[r] + 1e-12, "entry {r}");
        for c in 0..dim {
            let (a, b) = (rep.cov_limit[(r, r)], rep.cov_limit[(c, c)]);
            if a >= 0.01 && b >= 0.01 && rep.cov_limit[(r, c)].abs() >= 0.01 {
                assert!(rep.rel_diff[(r, c)] <= 0.15, "({r},{c}): {}", rep.rel_diff[(r, c)]);
            }
        }
    }
    let exact = clt_covariance(&p, &f, 1.0).unwrap();
    for r in 0..dim {
        assert!((rep.cov_limit[(r, r)] / exact[(r, r)] - 1.0).abs() < 0.05);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn diffusion_paths_stay_in_state_space(
        pis in proptest::collection::vec(0.1f64..4.0, 4),
        x1 in 0.05f64..0.95,
        y1 in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let p = ModelParams::from_pi_rows(&[vec![pis[0], pis[1]], vec![pis[2], pis[3]]]).unwrap();
        let f = PopulationFractions::new(vec![x1, 1.0 - x1], vec![y1, 1.0 - y1]).unwrap();
        let d = simulate_diffusion(&p, &f, 10, 2.0, 1e-2, seed).unwrap();
        prop_assert!(d.z[0].as_slice().iter().all(|&v| v == 0.0));
        for z in &d.z {
            prop_assert!(z.is_in_state_space(f.x(), f.y(), 1e-12));
        }
    }

    #[test]
    fn clt_paths_double_with_the_noise(
        pis in proptest::collection::vec(0.1f64..4.0, 4),
        x1 in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let p = ModelParams::from_pi_rows(&[vec![pis[0], pis[1]], vec![pis[2], pis[3]]]).unwrap();
        let f = PopulationFractions::new(vec![x1, 1.0 - x1], vec![0.5, 0.5]).unwrap();
        let sim = CltSimulator::new(&p, &f, 1.0, 1e-2).unwrap();
        let a = sim.path(seed, 0, 1.0);
        let b = sim.path(seed, 0, 2.0);
        for (va, vb) in a.v.iter().zip(&b.v) {
            for (x, y) in va.as_slice().iter().zip(vb.as_slice()) {
                prop_assert_eq!(2.0 * x, *y);
            }
        }
    }
}

#[test]
fn clt_rejects_coarse_steps_and_bad_dimensions() {
    let (p, _) = two_by_two().remove(0);
    let f3 = PopulationFractions::new(vec![0.2, 0.3, 0.5], vec![0.2, 0.3, 0.5]).unwrap();
    assert!(simulate_clt_limit(&p, &f3, 1.0, 1e-2, 0).is_err());
    let f = PopulationFractions::new(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
    assert!(simulate_diffusion(&p, &f, 5, 1.0, 1e-2, 0).is_err());
    let fluid = integrate_fluid(&p, &f, 0.5, 1e-8).unwrap();
    assert!(CltSimulator::from_fluid(&p, &f, &fluid, 1.0, 1e-2).is_err());
}
