use proptest::prelude::*;

use smoothing_core::mellin::{evaluate, find_roots, McConfig, Regime};
use smoothing_core::model::{InhomLaw, ModelSpec, OffspringLaw, WeightLaw};
use smoothing_core::parallel::Exec;
use smoothing_core::tail::{
    default_k_grid, estimate_c_plus, fit_tail, hill_plot, pareto_samples, SortedSample, Window,
};
use smoothing_core::tilted::{estimate_sigma2, many_to_one_check, Functional, TiltedLaw, WalkOptions};
use smoothing_core::tree::{PrunePolicy, TreeSimulator};

fn lognormal(n: u32, mu: f64, sigma: f64) -> ModelSpec {
    ModelSpec::new(
        "lognormal",
        OffspringLaw::Fixed { n },
        WeightLaw::Lognormal { mu, sigma },
        InhomLaw::Constant { b: 1.0 },
    )
    .unwrap()
}

fn reference() -> ModelSpec {
    let s2 = 8.0 * 2f64.ln();
    lognormal(2, -0.5 * s2, s2.sqrt())
}

fn finite_model() -> impl Strategy<Value = ModelSpec> {
    (1u32..=3, prop::collection::vec((0.05f64..2.0, 0.1f64..1.0), 1..=4)).prop_map(|(n, atoms)| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        ModelSpec::new(
            "finite",
            OffspringLaw::Fixed { n },
            WeightLaw::FiniteSupport {
                points: atoms.iter().map(|a| a.0).collect(),
                probs: atoms.iter().map(|a| a.1 / total).collect(),
            },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn two_roots_match_quadratic(n in 2u32..6, sigma in 0.3f64..2.0, excess in 0.05f64..3.0) {
        // ln n + mu s + sigma^2 s^2 / 2 = 0 has real roots iff mu^2 > 2 sigma^2 ln n.
        let ln_n = (n as f64).ln();
        let mu = -((2.0 * sigma * sigma * ln_n).sqrt() + excess);
        let disc = (mu * mu - 2.0 * sigma * sigma * ln_n).sqrt();
        let (a, b) = ((-mu - disc) / (sigma * sigma), (-mu + disc) / (sigma * sigma));
        prop_assume!(b < 9.0);
        let report = find_roots(&lognormal(n, mu, sigma), 1e-12).unwrap();
        match report.regime {
            Regime::TwoRoot { alpha, beta } => {
                prop_assert!((alpha - a).abs() < 1e-8, "alpha {alpha} vs {a}");
                prop_assert!((beta - b).abs() < 1e-8, "beta {beta} vs {b}");
            }
            other => prop_assert!(false, "regime {other:?}"),
        }
    }

    #[test]
    fn log_mellin_is_convex(model in finite_model(), s0 in 0.0f64..3.0, h in 0.01f64..0.5) {
        let mc = McConfig::default();
        let lm = |s: f64| evaluate(&model, s, &mc).unwrap().value.ln();
        let second = lm(s0 + h) - 2.0 * lm(s0 + 0.5 * h) + lm(s0);
        prop_assert!(second >= -1e-12, "second difference {second}");
    }

    #[test]
    fn many_to_one_holds(model in finite_model(), alpha in 0.2f64..1.5, depth in 1u32..4, c in -1.0f64..1.0) {
        for f in [Functional::One, Functional::LastBelow(c), Functional::AllAbove(c), Functional::Exceeds(c)] {
            let (lhs, rhs) = many_to_one_check(&model, alpha, depth, f).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300), "{f:?}: {lhs} vs {rhs}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hill_is_scale_invariant(seed in any::<u64>(), alpha in 0.3f64..3.0, k in -20i32..20) {
        let x = pareto_samples(alpha, 1.0, 5000, seed).unwrap();
        let c = 2f64.powi(k);
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        let grid = default_k_grid(x.len());
        let hx = hill_plot(&x, &grid).unwrap();
        let hy = hill_plot(&y, &grid).unwrap();
        for ((kx, ax), (ky, ay)) in hx.iter().zip(&hy) {
            prop_assert_eq!(kx, ky);
            prop_assert!((ax - ay).abs() <= 1e-9 * ax, "k={kx}: {ax} vs {ay}");
        }
    }

    #[test]
    fn c_plus_is_scale_equivariant(seed in any::<u64>(), alpha in 0.3f64..2.0, k in -10i32..10) {
        let x = pareto_samples(alpha, 1.0, 20_000, seed).unwrap();
        let c = 2f64.powi(k);
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        let w = Window::new(2.0, 20.0).unwrap();
        let ex = estimate_c_plus(&x, alpha, &w).unwrap();
        let ey = estimate_c_plus(&y, alpha, &w.scaled(c)).unwrap();
        let scale = c.powf(alpha);
        prop_assert!((ey.value - scale * ex.value).abs() <= 1e-12 * ey.value);
        prop_assert!((ey.stderr - scale * ex.stderr).abs() <= 1e-12 * ey.stderr);
    }

    #[test]
    fn log_term_is_negligible_on_pareto(seed in any::<u64>(), alpha in 0.5f64..2.0) {
        let x = pareto_samples(alpha, 1.0, 200_000, seed).unwrap();
        let sample = SortedSample::new(&x).unwrap();
        let w = Window::new(2.0, 2.0 * 10f64.powf(2.0)).unwrap();
        let plain = fit_tail(&x, &w, false).unwrap();
        let logged = sample.fit_tail(&w, true).unwrap();
        let theta = logged.log_exponent.unwrap();
        prop_assert!(theta.theta_hat.abs() < 4.0 * theta.stderr, "theta {} se {}", theta.theta_hat, theta.stderr);
        prop_assert!((plain.slope_fit.alpha_hat - alpha).abs() < 4.0 * plain.slope_fit.stderr);
    }

    #[test]
    fn walk_is_independent_of_workers(seed in any::<u64>(), workers in 2usize..5) {
        let spec = reference();
        let tl = TiltedLaw::new(&spec, 0.5, 1e-9).unwrap();
        let opts = WalkOptions { paths: 3000, seed, ..WalkOptions::default() };
        let one = estimate_sigma2(&tl, &opts, &Exec::with_workers(1)).unwrap();
        let many = estimate_sigma2(&tl, &opts, &Exec::with_workers(workers)).unwrap();
        prop_assert_eq!(one, many);
    }

    #[test]
    fn tree_samples_are_independent_of_workers(seed in any::<u64>(), workers in 2usize..5) {
        let spec = reference();
        let policy = PrunePolicy::new(1e-4, 100, 100_000).unwrap();
        let sim = TreeSimulator::new(&spec, &policy, seed).unwrap();
        let one = sim.collect(500, &Exec::with_workers(1));
        let many = sim.collect(500, &Exec::with_workers(workers));
        prop_assert_eq!(one, many);
    }
}
