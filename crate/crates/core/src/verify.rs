//! Cross-module verification suite. Each check is self-contained, records
//! its measured values and tolerance, and never aborts the run.

use std::cell::OnceCell;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::laplace::{
    iterate_phi, laplace_bound_ratio, poisson_residual, regular_variation_ratios, renewal_run, Calibration,
    FixpointOptions, GridSpec, LaplacePool, LowerTail, RenewalRun,
};
use crate::mellin::{analyze, choose_delta, derivative, McConfig, MomentMethod, Regime, RootOptions};
use crate::model::{
    analytic_mellin_derivative, make_critical_lognormal, make_two_root_lognormal, InhomLaw, ModelSpec, OffspringLaw,
    WeightLaw,
};
use crate::parallel::Exec;
use crate::rng::{derive_seed, stream, Domain};
use crate::stats::Moments;
use crate::tail::{
    default_k_grid, extrapolate_floors, hill_plateau, pareto_samples, ExceedanceTable, LogPareto, SortedSample, Window,
};
use crate::tilted::{estimate_sigma2, many_to_one_check, w_function, Functional, TiltedLaw, WOptions, WalkOptions};
use crate::tree::{PrunePolicy, TreeSimulator};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    #[default]
    Small,
    Full,
}

impl std::str::FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Budget::Small),
            "full" => Ok(Budget::Full),
            other => Err(Error::InvalidArgument(format!(
                "budget must be small or full, got {other}"
            ))),
        }
    }
}

impl std::fmt::Display for Budget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Budget::Small => "small",
            Budget::Full => "full",
        })
    }
}

/// Sample counts and numerical settings for one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub budget: Budget,
    pub mellin_samples: u64,
    pub m2o_models: usize,
    pub walk_paths: u64,
    pub w_paths: u64,
    pub max_weight_samples: u64,
    pub max_weight_floor: f64,
    pub sidecar_samples: u64,
    pub tree_samples: u64,
    pub tree_floor: f64,
    /// Coarser floors for the extrapolation, coarsest first.
    pub tree_ladder: Vec<f64>,
    pub jackknife_blocks: usize,
    pub laplace_pool: u64,
    pub laplace_pools: usize,
    pub laplace_ppd: usize,
    pub synthetic_samples: usize,
    pub two_root_samples: u64,
}

impl Budget {
    pub fn plan(self) -> BudgetPlan {
        match self {
            Budget::Small => BudgetPlan {
                budget: self,
                mellin_samples: 100_000,
                m2o_models: 20,
                walk_paths: 100_000,
                w_paths: 1_000,
                max_weight_samples: 100_000,
                max_weight_floor: 1e-6,
                sidecar_samples: 20_000,
                tree_samples: 100_000,
                tree_floor: 1e-7,
                tree_ladder: vec![1e-3, 1e-4, 1e-5, 1e-6],
                jackknife_blocks: 20,
                laplace_pool: 100_000,
                laplace_pools: 4,
                laplace_ppd: 50,
                synthetic_samples: 1_000_000,
                two_root_samples: 1_000_000,
            },
            Budget::Full => BudgetPlan {
                budget: self,
                mellin_samples: 1_000_000,
                m2o_models: 20,
                walk_paths: 1_000_000,
                w_paths: 10_000,
                max_weight_samples: 10_000_000,
                max_weight_floor: 1e-6,
                sidecar_samples: 1_000_000,
                tree_samples: 100_000_000,
                tree_floor: 1e-7,
                tree_ladder: vec![1e-3, 1e-4, 1e-5, 1e-6],
                jackknife_blocks: 20,
                laplace_pool: 1_000_000,
                laplace_pools: 4,
                laplace_ppd: 100,
                synthetic_samples: 1_000_000,
                two_root_samples: 10_000_000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Acceptance criterion number, for checks that implement one.
    pub criterion: Option<u8>,
    pub passed: bool,
    pub measured: Value,
    pub tolerance: String,
    pub seconds: f64,
    pub error: Option<String>,
}

impl CheckResult {
    /// One-line summary: status, name, measured values.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        let id = match self.criterion {
            Some(c) => format!("criterion {c:>2}"),
            None => "check       ".to_string(),
        };
        let err = self
            .error
            .as_deref()
            .map(|e| format!(" error: {e}"))
            .unwrap_or_default();
        format!(
            "{tag} {id} {:<26} {:>7.1}s  measured {}  tolerance {}{err}",
            self.name, self.seconds, self.measured, self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub tool_version: String,
    pub model_label: String,
    pub budget: Budget,
    pub seed: u64,
    pub workers: usize,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

type Outcome = Result<(bool, Value)>;

fn run_check(name: &str, criterion: Option<u8>, tolerance: &str, f: impl FnOnce() -> Outcome) -> CheckResult {
    let start = Instant::now();
    let (passed, measured, error) = match f() {
        Ok((p, m)) => (p, m, None),
        Err(e) => (false, Value::Null, Some(e.to_string())),
    };
    CheckResult {
        name: name.to_string(),
        criterion,
        passed,
        measured,
        tolerance: tolerance.to_string(),
        seconds: start.elapsed().as_secs_f64(),
        error,
    }
}

fn reference_model() -> ModelSpec {
    make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 }).expect("valid reference parameters")
}

fn subcritical_sidecar() -> ModelSpec {
    ModelSpec::new(
        "uniform-power-sidecar",
        OffspringLaw::Fixed { n: 2 },
        WeightLaw::Uniform01Power { exponent: 1.5 },
        InhomLaw::Exponential { rate: 1.0 },
    )
    .expect("valid sidecar parameters")
}

/// `E[R]` of the subcritical sidecar: `E[B] / (1 - m(1))`.
const SIDECAR_MEAN: f64 = 5.0;

fn deterministic_half() -> ModelSpec {
    ModelSpec::new(
        "deterministic-half",
        OffspringLaw::Fixed { n: 1 },
        WeightLaw::Deterministic { value: 0.5 },
        InhomLaw::Constant { b: 1.0 },
    )
    .expect("valid deterministic parameters")
}

/// Shared results of the tree run behind the existence and two-route checks.
struct TreeTail {
    table: ExceedanceTable,
    probe_small: ExceedanceTable,
    probe_full: ExceedanceTable,
    floors: Vec<f64>,
    /// `R^gamma` at the finest floor, for the Laplace bound.
    moment: Moments,
    samples: u64,
}

/// Shared results of the Laplace route on the configured model.
struct RenewalSet {
    runs: Vec<(RenewalRun, LaplacePool)>,
    /// `int G` of the first pool at half the grid density.
    coarse_int_g: f64,
}

pub const LAPLACE_GAMMA: f64 = 0.4;

/// Runs the suite on `spec` and returns one result per check, in order.
pub struct Verifier<'a> {
    spec: &'a ModelSpec,
    seed: u64,
    exec: Exec,
    plan: BudgetPlan,
    alpha: OnceCell<std::result::Result<f64, String>>,
    tree: OnceCell<std::result::Result<TreeTail, String>>,
    renewal: OnceCell<std::result::Result<RenewalSet, String>>,
}

impl<'a> Verifier<'a> {
    pub fn new(spec: &'a ModelSpec, budget: Budget, seed: u64, exec: Exec) -> Self {
        Verifier {
            spec,
            seed,
            exec,
            plan: budget.plan(),
            alpha: OnceCell::new(),
            tree: OnceCell::new(),
            renewal: OnceCell::new(),
        }
    }

    pub fn plan(&self) -> &BudgetPlan {
        &self.plan
    }

    fn seed_for(&self, salt: u64) -> u64 {
        derive_seed(self.seed, salt)
    }

    fn alpha(&self) -> Result<f64> {
        self.alpha
            .get_or_init(|| {
                let opts = RootOptions {
                    mc: McConfig {
                        samples: self.plan.mellin_samples,
                        seed: self.seed,
                        force_mc: false,
                        exec: self.exec,
                    },
                    ..RootOptions::default()
                };
                match find_regime(self.spec, &opts) {
                    Ok(Regime::CriticalTangent { alpha }) => Ok(alpha),
                    Ok(other) => Err(format!("configured model is {}, not critical_tangent", other.name())),
                    Err(e) => Err(e.to_string()),
                }
            })
            .clone()
            .map_err(|e| Error::RegimeMismatch { regime: e })
    }

    pub fn checks(&self) -> Vec<(&'static str, Option<u8>)> {
        vec![
            ("criticality_construction", Some(1)),
            ("mellin_regime", None),
            ("many_to_one", Some(2)),
            ("spitzer_sigma2", Some(3)),
            ("w_bounded", None),
            ("max_weight_bound", Some(4)),
            ("tree_moment_identity", None),
            ("existence_bound", Some(5)),
            ("laplace_sanity", Some(6)),
            ("poisson_residual", Some(7)),
            ("integral_g_zero", Some(8)),
            ("c_plus_two_route", Some(9)),
            ("regular_variation", Some(10)),
            ("log_factor", Some(11)),
            ("two_root_tail", Some(12)),
        ]
    }

    /// Runs every check, calling `progress` after each.
    pub fn run(&self, mut progress: impl FnMut(&CheckResult)) -> Vec<CheckResult> {
        let mut out = Vec::new();
        for (name, _) in self.checks() {
            let r = self.run_one(name);
            progress(&r);
            out.push(r);
        }
        out
    }

    pub fn run_one(&self, name: &str) -> CheckResult {
        match name {
            "criticality_construction" => self.criticality_construction(),
            "mellin_regime" => self.mellin_regime(),
            "many_to_one" => self.many_to_one(),
            "spitzer_sigma2" => self.spitzer(),
            "w_bounded" => self.w_bounded(),
            "max_weight_bound" => self.max_weight_bound(),
            "tree_moment_identity" => self.tree_moment_identity(),
            "existence_bound" => self.existence_bound(),
            "laplace_sanity" => self.laplace_sanity(),
            "poisson_residual" => self.poisson_check(),
            "integral_g_zero" => self.integral_g(),
            "c_plus_two_route" => self.c_plus_two_route(),
            "regular_variation" => self.regular_variation(),
            "log_factor" => self.log_factor(),
            "two_root_tail" => self.two_root_tail(),
            other => run_check(other, None, "-", || {
                Err(Error::InvalidArgument(format!("unknown check {other}")))
            }),
        }
    }

    fn criticality_construction(&self) -> CheckResult {
        run_check(
            "criticality_construction",
            Some(1),
            "|m-1|,|m'| <= 1e-9 closed; <= 3 se MC",
            || {
                let spec = make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 })?;
                let m = analytic_mellin_derivative(&spec, 0.5, 0).unwrap_or(f64::NAN);
                let dm = analytic_mellin_derivative(&spec, 0.5, 1).unwrap_or(f64::NAN);
                let mc = McConfig {
                    samples: self.plan.mellin_samples,
                    seed: self.seed_for(1),
                    force_mc: true,
                    exec: self.exec,
                };
                let mm = derivative(&spec, 0.5, 0, &mc)?;
                let mdm = derivative(&spec, 0.5, 1, &mc)?;
                let passed = (m - 1.0).abs() <= 1e-9
                    && dm.abs() <= 1e-9
                    && (mm.value - 1.0).abs() <= 3.0 * mm.stderr
                    && mdm.value.abs() <= 3.0 * mdm.stderr;
                Ok((
                    passed,
                    json!({
                        "closed_m_minus_1": m - 1.0, "closed_m_prime": dm,
                        "mc_m_minus_1": mm.value - 1.0, "mc_m_se": mm.stderr,
                        "mc_m_prime": mdm.value, "mc_m_prime_se": mdm.stderr,
                        "mc_samples": self.plan.mellin_samples,
                    }),
                ))
            },
        )
    }

    fn mellin_regime(&self) -> CheckResult {
        run_check(
            "mellin_regime",
            None,
            "regime critical_tangent, all assumptions hold",
            || {
                let opts = RootOptions {
                    mc: McConfig {
                        samples: self.plan.mellin_samples,
                        seed: self.seed,
                        force_mc: false,
                        exec: self.exec,
                    },
                    ..RootOptions::default()
                };
                let r = analyze(self.spec, &opts, MomentMethod::ClosedFormPreferred)?;
                let critical = matches!(r.regime, Regime::CriticalTangent { .. });
                let f = r.flags;
                Ok((
                    critical && f.en_gt_1 && f.nonarithmetic && f.moments_finite,
                    json!({
                        "regime": r.regime.name(), "alpha": r.alpha(), "m_at_min": r.m_at_min.value,
                        "EN_gt_1": f.en_gt_1, "nonarithmetic": f.nonarithmetic, "moments_finite": f.moments_finite,
                    }),
                ))
            },
        )
    }

    fn many_to_one(&self) -> CheckResult {
        run_check("many_to_one", Some(2), "relative difference <= 1e-10", || {
            let mut rng = stream(self.seed, Domain::Sidecar, 0);
            let mut worst: f64 = 0.0;
            let mut cases = 0usize;
            for i in 0..self.plan.m2o_models {
                let k = rng.random_range(1..=4usize);
                let n = rng.random_range(1..=3u32);
                let alpha: f64 = rng.random_range(0.2..0.9);
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.5)).collect();
                let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = w.iter().sum();
                let probs: Vec<f64> = w.iter().map(|v| v / total).collect();
                let m0: f64 = n as f64 * raw.iter().zip(&probs).map(|(x, p)| p * x.powf(alpha)).sum::<f64>();
                let c = m0.powf(-1.0 / alpha);
                let points: Vec<f64> = raw.iter().map(|x| x * c).collect();
                let spec = ModelSpec::new(
                    format!("m2o-{i}"),
                    OffspringLaw::Fixed { n },
                    WeightLaw::FiniteSupport { points, probs },
                    InhomLaw::Constant { b: 1.0 },
                )?;
                for depth in 1..=4 {
                    let c1: f64 = rng.random_range(-2.0..2.0);
                    let c2: f64 = rng.random_range(-2.0..0.5);
                    let c3: f64 = rng.random_range(0.0..2.0);
                    for f in [
                        Functional::One,
                        Functional::LastBelow(c1),
                        Functional::AllAbove(c2),
                        Functional::Exceeds(c3),
                    ] {
                        let (l, r) = many_to_one_check(&spec, alpha, depth, f)?;
                        let scale = l.abs().max(r.abs());
                        if scale > 0.0 {
                            worst = worst.max((l - r).abs() / scale);
                        }
                        cases += 1;
                    }
                }
            }
            Ok((
                worst <= 1e-10,
                json!({ "max_relative_difference": worst, "cases": cases }),
            ))
        })
    }

    fn tilted(&self) -> Result<(TiltedLaw, f64)> {
        let alpha = self.alpha()?;
        Ok((
            TiltedLaw::new(self.spec, alpha, crate::tilted::NORMALIZATION_TOL)?,
            alpha,
        ))
    }

    fn spitzer(&self) -> CheckResult {
        run_check("spitzer_sigma2", Some(3), "|direct - ladder| <= 3 combined se", || {
            let (tl, alpha) = self.tilted()?;
            let opts = WalkOptions {
                paths: self.plan.walk_paths,
                seed: self.seed_for(3),
                delta: choose_delta(alpha),
                ..WalkOptions::default()
            };
            let s = estimate_sigma2(&tl, &opts, &self.exec)?;
            let diff = (s.sigma2_direct.value - s.sigma2_ladder.value).abs();
            let se = s.sigma2_direct.stderr.hypot(s.sigma2_ladder.stderr);
            Ok((
                diff <= 3.0 * se,
                json!({
                    "sigma2_direct": s.sigma2_direct.value, "sigma2_ladder": s.sigma2_ladder.value,
                    "combined_se": se, "paths": s.paths,
                    "censored": s.censored_l + s.censored_t1,
                }),
            ))
        })
    }

    fn w_bounded(&self) -> CheckResult {
        run_check("w_bounded", None, "sup W finite, changes < 2x when paths x10", || {
            let (tl, alpha) = self.tilted()?;
            let delta = choose_delta(alpha);
            let grid = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0];
            let sup = |paths: u64| {
                let opts = WOptions {
                    paths,
                    seed: self.seed_for(4),
                    ..WOptions::default()
                };
                let pts = w_function(&tl, delta, &grid, &opts, &self.exec);
                let approximate = pts.iter().any(|p| p.approximate);
                (pts.iter().map(|p| p.w).fold(f64::NEG_INFINITY, f64::max), approximate)
            };
            let (small, a1) = sup(self.plan.w_paths);
            let (big, a2) = sup(10 * self.plan.w_paths);
            let ratio = big / small;
            Ok((
                small.is_finite() && big.is_finite() && ratio < 2.0 && ratio > 0.5,
                json!({ "sup_w_small": small, "sup_w_large": big, "ratio": ratio, "approximate": a1 || a2 }),
            ))
        })
    }

    fn max_weight_bound(&self) -> CheckResult {
        run_check("max_weight_bound", Some(4), "t^alpha P[max L > t] <= 1 + 3 se", || {
            let alpha = self.alpha()?;
            let policy = PrunePolicy::new(self.plan.max_weight_floor, 400, 10_000_000)?;
            let sim = TreeSimulator::new(self.spec, &policy, self.seed_for(5))?;
            let ts = [10.0, 100.0, 1000.0];
            let n = self.plan.max_weight_samples;
            let counts = sim.fold(
                n,
                &self.exec,
                [0u64; 3],
                |acc, _, s| {
                    for (c, &t) in acc.iter_mut().zip(&ts) {
                        if s.max_weight > t {
                            *c += 1;
                        }
                    }
                },
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
            let mut passed = true;
            let mut rows = Vec::new();
            for (&t, &c) in ts.iter().zip(&counts) {
                let p = c as f64 / n as f64;
                let w = t.powf(alpha);
                let se = w * (p * (1.0 - p) / n as f64).sqrt();
                passed &= w * p <= 1.0 + 3.0 * se;
                rows.push(json!({ "t": t, "scaled": w * p, "se": se }));
            }
            Ok((
                passed,
                json!({ "points": rows, "samples": n, "floor": self.plan.max_weight_floor }),
            ))
        })
    }

    fn tree_moment_identity(&self) -> CheckResult {
        run_check(
            "tree_moment_identity",
            None,
            "|mean(R + E[R] pruned) - E[R]| <= 3 se",
            || {
                let spec = subcritical_sidecar();
                let policy = PrunePolicy::new(1e-3, 200, 10_000_000)?;
                let sim = TreeSimulator::new(&spec, &policy, self.seed_for(6))?;
                let m = sim.fold(
                    self.plan.sidecar_samples,
                    &self.exec,
                    Moments::default(),
                    |acc, _, s| acc.push(s.r_value + SIDECAR_MEAN * s.pruned_weight),
                    |mut a, b| {
                        a.merge(&b);
                        a
                    },
                );
                Ok((
                    (m.mean - SIDECAR_MEAN).abs() <= 3.0 * m.stderr(),
                    json!({ "mean": m.mean, "se": m.stderr(), "expected": SIDECAR_MEAN, "samples": m.n }),
                ))
            },
        )
    }

    fn tree_tail(&self) -> Result<&TreeTail> {
        self.alpha()?;
        self.tree
            .get_or_init(|| self.compute_tree_tail().map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::InvalidArgument(e.clone()))
    }

    fn compute_tree_tail(&self) -> Result<TreeTail> {
        let mut ladder = self.plan.tree_ladder.clone();
        ladder.sort_by(|a, b| b.total_cmp(a));
        let policy = PrunePolicy::new(self.plan.tree_floor, 400, 10_000_000)?.with_ladder(ladder)?;
        let floors = policy.floors();
        let sim = TreeSimulator::new(self.spec, &policy, self.seed_for(7))?;
        let n = self.plan.tree_samples;
        let small_n = n / 10;
        let table = ExceedanceTable::new(Window::default().grid(), floors.len(), self.plan.jackknife_blocks)?;
        let probe = ExceedanceTable::new(Window::new(10.0, 1e4)?.grid(), 1, 1)?;
        let init = (table, probe.clone(), probe, Moments::default(), Vec::<f64>::new());
        let (table, probe_small, probe_full, moment, _) = sim.fold(
            n,
            &self.exec,
            init,
            |acc, idx, s| {
                let block = acc.0.block_of(idx, n);
                if s.censored(&policy) {
                    acc.0.record_censored(block);
                    acc.2.record_censored(0);
                    if idx < small_n {
                        acc.1.record_censored(0);
                    }
                    return;
                }
                acc.4.clear();
                acc.4.extend_from_slice(&s.r_by_floor);
                acc.4.push(s.r_value);
                acc.0.record(block, &acc.4);
                acc.2.record(0, &[s.r_value]);
                if idx < small_n {
                    acc.1.record(0, &[s.r_value]);
                }
                acc.3.push(s.r_value.powf(LAPLACE_GAMMA));
            },
            |a, b| {
                let mut m = a.3;
                m.merge(&b.3);
                (a.0.merge(&b.0), a.1.merge(&b.1), a.2.merge(&b.2), m, a.4)
            },
        );
        Ok(TreeTail {
            table,
            probe_small,
            probe_full,
            floors,
            moment,
            samples: n,
        })
    }

    fn existence_bound(&self) -> CheckResult {
        run_check(
            "existence_bound",
            Some(5),
            "sup_t t^alpha P[R>t] changes < 20% for budget x10",
            || {
                let alpha = self.alpha()?;
                let tt = self.tree_tail()?;
                let small = tt.probe_small.sup_scaled(0, alpha);
                let full = tt.probe_full.sup_scaled(0, alpha);
                let change = (full.value - small.value).abs() / full.value;
                Ok((
                    full.value.is_finite() && change < 0.2,
                    json!({
                        "sup_small": small.value, "sup_full": full.value, "relative_change": change,
                        "samples_small": tt.samples / 10, "samples_full": tt.samples,
                        "floor": self.plan.tree_floor,
                        "censored_fraction": tt.probe_full.censored_fraction(),
                    }),
                ))
            },
        )
    }

    fn fixpoint_options(&self, ppd: usize) -> FixpointOptions {
        FixpointOptions {
            grid: GridSpec {
                ppd,
                ..GridSpec::default()
            },
            exec: self.exec,
            ..FixpointOptions::default()
        }
    }

    fn renewal(&self) -> Result<&RenewalSet> {
        let alpha = self.alpha()?;
        self.renewal
            .get_or_init(|| {
                let ppd = self.plan.laplace_ppd;
                let mut runs = Vec::new();
                for k in 0..self.plan.laplace_pools {
                    let r = renewal_run(
                        self.spec,
                        alpha,
                        self.plan.laplace_pool,
                        self.seed_for(100 + k as u64),
                        Calibration::Critical,
                        &self.fixpoint_options(ppd),
                    )
                    .map_err(|e| e.to_string())?;
                    runs.push(r);
                }
                let coarse = renewal_run(
                    self.spec,
                    alpha,
                    self.plan.laplace_pool,
                    self.seed_for(100),
                    Calibration::Critical,
                    &self.fixpoint_options(ppd / 2),
                )
                .map_err(|e| e.to_string())?;
                Ok(RenewalSet {
                    runs,
                    coarse_int_g: coarse.0.poisson.int_g,
                })
            })
            .as_ref()
            .map_err(|e| Error::InvalidArgument(e.clone()))
    }

    fn laplace_sanity(&self) -> CheckResult {
        run_check(
            "laplace_sanity",
            Some(6),
            "sup |phi - e^{-2t}| <= 1e-6; 1-phi <= Gamma(1-g) E[R^g] t^g, g = 0.4",
            || {
                let pool = LaplacePool::draw(&deterministic_half(), 16, 0, &self.exec);
                let opts = FixpointOptions {
                    grid: GridSpec {
                        t_min: 1e-8,
                        t_max: 1e2,
                        ppd: 1000,
                    },
                    tol: 1e-13,
                    max_iter: 500,
                    lower_tail: LowerTail::Slope(1.0),
                    exec: self.exec,
                };
                let grid = iterate_phi(&pool, None, &opts)?;
                let err = grid
                    .t
                    .iter()
                    .zip(&grid.phi)
                    .map(|(t, p)| (p - (-2.0 * t).exp()).abs())
                    .fold(0.0, f64::max);
                let det_ratio = laplace_bound_ratio(&grid, LAPLACE_GAMMA, 2f64.powf(LAPLACE_GAMMA));
                let tt = self.tree_tail()?;
                let rs = self.renewal()?;
                let ref_ratio = laplace_bound_ratio(&rs.runs[0].0.grid, LAPLACE_GAMMA, tt.moment.mean);
                Ok((
                    err <= 1e-6 && det_ratio <= 1.0 && ref_ratio <= 1.0,
                    json!({
                        "deterministic_sup_error": err,
                        "deterministic_bound_ratio": det_ratio,
                        "reference_bound_ratio": ref_ratio,
                        "reference_moment": tt.moment.mean,
                    }),
                ))
            },
        )
    }

    fn poisson_check(&self) -> CheckResult {
        run_check(
            "poisson_residual",
            Some(7),
            "relative residual < 1e-3 on the interior",
            || {
                let alpha = self.alpha()?;
                let rs = self.renewal()?;
                let (run, pool) = &rs.runs[0];
                let atoms = pool.tilted_atoms(alpha);
                let res = poisson_residual(&run.poisson, &run.grid, &atoms, self.plan.laplace_ppd, &self.exec);
                Ok((
                    res.relative < 1e-3,
                    json!({ "relative_residual": res.relative, "points": res.points, "grid_residual": run.grid.residual }),
                ))
            },
        )
    }

    fn integral_g(&self) -> CheckResult {
        run_check(
            "integral_g_zero",
            Some(8),
            "|int G| <= 3 noise (pool spread + Richardson)",
            || {
                let rs = self.renewal()?;
                let ig: Moments = rs.runs.iter().map(|(r, _)| r.poisson.int_g).collect();
                let spread = ig.variance().sqrt();
                let richardson = (rs.runs[0].0.poisson.int_g - rs.coarse_int_g).abs() / 3.0;
                let noise = spread.hypot(richardson);
                Ok((
                    ig.mean.abs() <= 3.0 * noise,
                    json!({ "int_g": ig.mean, "pool_spread": spread, "richardson": richardson, "noise": noise }),
                ))
            },
        )
    }

    fn c_plus_two_route(&self) -> CheckResult {
        run_check(
            "c_plus_two_route",
            Some(9),
            "C_tail > 0 and |C_mc - C_tail| / C_tail < 0.15",
            || {
                let alpha = self.alpha()?;
                let rs = self.renewal()?;
                let tt = self.tree_tail()?;
                let ct: Moments = rs.runs.iter().map(|(r, _)| r.poisson.c_tail).collect();
                let plateau = rs.runs.iter().map(|(r, _)| r.plateau.spread).fold(0.0, f64::max);
                let ex = extrapolate_floors(&tt.table, &tt.floors, alpha)?;
                let rel = (ex.c_plus.value - ct.mean).abs() / ct.mean;
                Ok((
                    ct.mean > 0.0 && rel < 0.15,
                    json!({
                        "c_tail": ct.mean, "c_tail_pool_sd": ct.variance().sqrt(), "plateau_spread": plateau,
                        "c_mc": ex.c_plus.value, "c_mc_se": ex.c_plus.stderr,
                        "c_mc_finest_floor": ex.per_floor.last().map(|e| e.value),
                        "relative_difference": rel, "samples": tt.samples,
                        "censored_fraction": tt.table.censored_fraction(),
                    }),
                ))
            },
        )
    }

    fn regular_variation(&self) -> CheckResult {
        run_check(
            "regular_variation",
            Some(10),
            "ratio within 3% of s^alpha, s in {2,5,10}",
            || {
                let alpha = self.alpha()?;
                let rs = self.renewal()?;
                let grid = &rs.runs[0].0.grid;
                // Two decades above t_min, clear of the lower extrapolation.
                let t_index = 2 * self.plan.laplace_ppd;
                let s = [2.0, 5.0, 10.0];
                let ratios = regular_variation_ratios(grid, t_index, &s);
                let worst = s
                    .iter()
                    .zip(&ratios)
                    .map(|(sv, r)| (r / sv.powf(alpha) - 1.0).abs())
                    .fold(0.0, f64::max);
                Ok((
                    worst <= 0.03,
                    json!({ "t": grid.t[t_index], "ratios": ratios, "max_relative_error": worst }),
                ))
            },
        )
    }

    fn log_factor(&self) -> CheckResult {
        run_check(
            "log_factor",
            Some(11),
            "|theta| < 0.3 pure power; theta in [0.6, 1.4] log-corrected",
            || {
                let n = self.plan.synthetic_samples;
                let w = Window::default();
                let pure = SortedSample::new(&pareto_samples(0.5, 1.0, n, self.seed_for(11))?)?.fit_tail(&w, true)?;
                let lp = LogPareto::new(0.5, 1.0)?;
                let logc = SortedSample::new(&lp.samples(n, self.seed_for(12)))?.fit_tail(&w, true)?;
                let tp = pure.log_exponent.map(|l| l.theta_hat).unwrap_or(f64::NAN);
                let tl = logc.log_exponent.map(|l| l.theta_hat).unwrap_or(f64::NAN);
                Ok((
                    tp.abs() < 0.3 && (0.6..=1.4).contains(&tl),
                    json!({ "theta_pure": tp, "theta_log": tl, "condition_number": pure.condition_number, "samples": n }),
                ))
            },
        )
    }

    fn two_root_tail(&self) -> CheckResult {
        run_check("two_root_tail", Some(12), "Hill and slope alpha in 2.75 +- 0.3", || {
            let spec = make_two_root_lognormal(-3.0, 2f64.sqrt(), 2, InhomLaw::Constant { b: 1.0 })?;
            let policy = PrunePolicy::new(1e-6, 400, 10_000_000)?;
            let sim = TreeSimulator::new(&spec, &policy, self.seed_for(13))?;
            let samples: Vec<f64> = sim
                .collect(self.plan.two_root_samples, &self.exec)
                .into_iter()
                .filter(|s| !s.censored(&policy))
                .map(|s| s.r_value)
                .collect();
            let sorted = SortedSample::new(&samples)?;
            let hill = sorted.hill_plot(&default_k_grid(sorted.len()))?;
            let p = hill_plateau(&sorted, &hill, 4, 30)?;
            let fit = sorted.fit_tail(&p.window, false)?;
            let ok = |a: f64| (a - 2.75).abs() <= 0.3;
            Ok((
                ok(p.alpha_hat) && ok(fit.slope_fit.alpha_hat),
                json!({
                    "hill_alpha": p.alpha_hat, "slope_alpha": fit.slope_fit.alpha_hat,
                    "slope_se": fit.slope_fit.stderr, "k_range": [p.k_lo, p.k_hi],
                    "window": [p.window.lo, p.window.hi], "samples": samples.len(),
                }),
            ))
        })
    }
}

fn find_regime(spec: &ModelSpec, opts: &RootOptions) -> Result<Regime> {
    Ok(crate::mellin::find_roots_with(spec, opts)?.regime)
}

/// Default model for `verify` when none is configured.
pub fn default_model() -> ModelSpec {
    reference_model()
}
