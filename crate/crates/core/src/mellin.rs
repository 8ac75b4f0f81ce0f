//! The Mellin function `m(s) = E[sum A_i^s]`: evaluation, roots of
//! `m(s) = 1`, regime classification and the moment conditions of the
//! critical case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::parallel::Exec;
use crate::rng::{stream, Domain};
use crate::stats::Moments;

/// A value with its Monte Carlo standard error (0 for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }
}

/// Monte Carlo settings for quantities lacking a usable closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    /// Ignore closed forms even when available.
    pub force_mc: bool,
    pub exec: Exec,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 100_000,
            seed: 0,
            force_mc: false,
            exec: Exec::default(),
        }
    }
}

/// Fixed set of branch samples storing `log a` per child; `m̂(s)` over a
/// frozen pool is itself a convex function of `s`.
#[derive(Debug, Clone)]
pub struct MellinPool {
    log_a: Vec<f64>,
    offsets: Vec<usize>,
    exec: Exec,
}

impl MellinPool {
    pub fn draw(spec: &ModelSpec, mc: &McConfig) -> Self {
        let chunks = mc.exec.map_reduce(
            mc.samples,
            |c, range| {
                let mut rng = stream(mc.seed, Domain::Mellin, c);
                let mut buf = Vec::new();
                let mut logs = Vec::new();
                let mut counts = Vec::with_capacity((range.end - range.start) as usize);
                for _ in range {
                    spec.sample_into(&mut rng, &mut buf);
                    counts.push(buf.len());
                    logs.extend(buf.iter().map(|a| a.ln()));
                }
                vec![(logs, counts)]
            },
            Vec::new(),
            |mut acc, mut part| {
                acc.append(&mut part);
                acc
            },
        );
        let mut log_a = Vec::new();
        let mut offsets = vec![0usize];
        for (logs, counts) in chunks {
            let mut base = log_a.len();
            log_a.extend(logs);
            for c in counts {
                base += c;
                offsets.push(base);
            }
        }
        MellinPool {
            log_a,
            offsets,
            exec: mc.exec,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean of `sum_i a_i^s (log a_i)^order` over the pool.
    pub fn eval(&self, s: f64, order: u8) -> Estimate {
        let m = self.len() as u64;
        let acc = self.exec.map_reduce(
            m,
            |_, range| {
                let mut mom = Moments::default();
                for k in range {
                    let k = k as usize;
                    let row = &self.log_a[self.offsets[k]..self.offsets[k + 1]];
                    let v: f64 = row.iter().map(|&l| (s * l).exp() * l.powi(order as i32)).sum();
                    mom.push(v);
                }
                mom
            },
            Moments::default(),
            |mut a, b| {
                a.merge(&b);
                a
            },
        );
        Estimate {
            value: acc.mean,
            stderr: acc.stderr(),
        }
    }
}

/// Source of `m`, `m'`, `m''`: closed form or a frozen Monte Carlo pool.
#[derive(Debug, Clone)]
pub enum Evaluator<'a> {
    Closed(&'a ModelSpec),
    Pool(MellinPool),
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a ModelSpec, mc: &McConfig) -> Self {
        if mc.force_mc || crate::model::analytic_mellin(spec, 1.0).is_none() {
            Evaluator::Pool(MellinPool::draw(spec, mc))
        } else {
            Evaluator::Closed(spec)
        }
    }

    pub fn eval(&self, s: f64, order: u8) -> Estimate {
        match self {
            Evaluator::Closed(spec) => {
                Estimate::exact(crate::model::analytic_mellin_derivative(spec, s, order).unwrap_or(f64::NAN))
            }
            Evaluator::Pool(pool) => pool.eval(s, order),
        }
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self, Evaluator::Closed(_))
    }
}

pub fn evaluate(spec: &ModelSpec, s: f64, mc: &McConfig) -> Result<Estimate> {
    derivative(spec, s, 0, mc)
}

/// `d^order m / ds^order` at `s`, `order` in `0..=2`.
pub fn derivative(spec: &ModelSpec, s: f64, order: u8, mc: &McConfig) -> Result<Estimate> {
    if order > 2 {
        return Err(Error::InvalidArgument(format!(
            "derivative order must be at most 2, got {order}"
        )));
    }
    let est = Evaluator::new(spec, mc).eval(s, order);
    if !est.value.is_finite() {
        return Err(Error::MellinDiverged { s });
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub s: f64,
    pub m_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    TwoRoot {
        alpha: f64,
        beta: f64,
    },
    CriticalTangent {
        alpha: f64,
    },
    /// `m < 1` strictly inside `(s_min, s_max)`, with at most one crossing.
    StrictlySubcriticalWindow {
        s_min: f64,
        s_max: f64,
    },
    NoRootBelowOne,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::TwoRoot { .. } => "two_root",
            Regime::CriticalTangent { .. } => "critical_tangent",
            Regime::StrictlySubcriticalWindow { .. } => "strictly_subcritical_window",
            Regime::NoRootBelowOne => "no_root_below_one",
        }
    }

    /// The exponent governing the minimal solution's tail, when defined.
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Regime::TwoRoot { alpha, .. } | Regime::CriticalTangent { alpha } => Some(alpha),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentValues {
    pub en: f64,
    pub en_1_plus_delta: f64,
    pub eb_alpha_plus_delta: f64,
    pub m_minus_delta: f64,
    pub m_alpha_plus_delta: f64,
}

impl MomentValues {
    pub fn all_finite(&self) -> bool {
        [
            self.en,
            self.en_1_plus_delta,
            self.eb_alpha_plus_delta,
            self.m_minus_delta,
            self.m_alpha_plus_delta,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    #[serde(rename = "EN_gt_1")]
    pub en_gt_1: bool,
    pub nonarithmetic: bool,
    pub moments_finite: bool,
    /// `+inf` marks a moment judged infinite; JSON renders it as `null`.
    pub moments: MomentValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MellinReport {
    pub roots: Vec<Root>,
    #[serde(flatten)]
    pub regime: Regime,
    pub delta: Option<f64>,
    pub flags: AssumptionFlags,
    /// Location and value of the minimum of `m` on the finite window.
    pub s_at_min: f64,
    pub m_at_min: Estimate,
    pub s_max: f64,
    pub closed_form: bool,
}

impl MellinReport {
    pub fn alpha(&self) -> Option<f64> {
        self.regime.alpha().or_else(|| self.roots.first().map(|r| r.s))
    }
}

/// Whether moment checks use closed forms or the budget-growth heuristic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentMethod {
    #[default]
    ClosedFormPreferred,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions {
    /// Precision of the located roots in `s`.
    pub tol: f64,
    pub s_max: f64,
    /// Band around 1 for `|min m - 1|` on closed forms.
    pub tangency_tol: f64,
    /// Standard errors allowed for `|min m - 1|` on Monte Carlo pools.
    pub tangency_stderrs: f64,
    pub mc: McConfig,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            tol: 1e-10,
            s_max: 10.0,
            tangency_tol: 1e-9,
            tangency_stderrs: 3.0,
            mc: McConfig::default(),
        }
    }
}

fn bisect(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= tol {
            break;
        }
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn find_roots(spec: &ModelSpec, tol: f64) -> Result<MellinReport> {
    find_roots_with(
        spec,
        &RootOptions {
            tol,
            ..RootOptions::default()
        },
    )
}

pub fn find_roots_with(spec: &ModelSpec, opts: &RootOptions) -> Result<MellinReport> {
    let ev = Evaluator::new(spec, &opts.mc);
    find_roots_on(&ev, spec, opts)
}

/// Root search on a given evaluator. `m` is convex, so `m'` is increasing and
/// the minimum is the unique zero of `m'` (or a window endpoint).
pub fn find_roots_on(ev: &Evaluator<'_>, spec: &ModelSpec, opts: &RootOptions) -> Result<MellinReport> {
    let probes = 64;
    let s_fin = (1..=probes)
        .rev()
        .map(|k| opts.s_max * k as f64 / probes as f64)
        .find(|&s| {
            let v = ev.eval(s, 0).value;
            v.is_finite() && ev.eval(s, 1).value.is_finite()
        })
        .ok_or(Error::NoFiniteWindow { s_max: opts.s_max })?;

    let m = |s: f64| ev.eval(s, 0).value;
    let dm = |s: f64| ev.eval(s, 1).value;
    let tol = opts.tol.max(1e-15);

    let s_star = if dm(0.0) >= 0.0 {
        0.0
    } else if dm(s_fin) <= 0.0 {
        s_fin
    } else {
        bisect(0.0, s_fin, 1e-15, dm)
    };
    let m_min = ev.eval(s_star, 0);
    let band = if ev.is_closed_form() {
        opts.tangency_tol
    } else {
        opts.tangency_stderrs * m_min.stderr
    };

    let mut roots = Vec::new();
    let regime = if (m_min.value - 1.0).abs() <= band && s_star > 0.0 && s_star < s_fin {
        roots.push(Root {
            s: s_star,
            m_prime: dm(s_star),
        });
        Regime::CriticalTangent { alpha: s_star }
    } else if m_min.value > 1.0 {
        Regime::NoRootBelowOne
    } else {
        let left = (m(0.0) > 1.0).then(|| bisect(0.0, s_star, tol, |s| m(s) - 1.0));
        let right = (m(s_fin) > 1.0).then(|| bisect(s_star, s_fin, tol, |s| m(s) - 1.0));
        for s in [left, right].into_iter().flatten() {
            roots.push(Root { s, m_prime: dm(s) });
        }
        match (left, right) {
            (Some(alpha), Some(beta)) => Regime::TwoRoot { alpha, beta },
            (Some(a), None) => Regime::StrictlySubcriticalWindow { s_min: a, s_max: s_fin },
            (None, Some(b)) => Regime::StrictlySubcriticalWindow { s_min: 0.0, s_max: b },
            (None, None) => Regime::StrictlySubcriticalWindow {
                s_min: 0.0,
                s_max: s_fin,
            },
        }
    };

    let mut report = MellinReport {
        roots,
        regime,
        delta: None,
        flags: AssumptionFlags::default(),
        s_at_min: s_star,
        m_at_min: m_min,
        s_max: s_fin,
        closed_form: ev.is_closed_form(),
    };
    report.flags.en_gt_1 = spec.mean_offspring() > 1.0;
    report.flags.nonarithmetic = spec.nonarithmetic();
    Ok(report)
}

/// The moment-condition exponent: `min(0.5 (1 - alpha), 0.25)`.
pub fn choose_delta(alpha: f64) -> f64 {
    (0.5 * (1.0 - alpha)).min(0.25)
}

/// Fills `delta` and the assumption flags of `report`.
pub fn check_assumptions(spec: &ModelSpec, report: &MellinReport, method: MomentMethod, mc: &McConfig) -> MellinReport {
    let mut out = report.clone();
    out.flags.en_gt_1 = spec.mean_offspring() > 1.0;
    out.flags.nonarithmetic = spec.nonarithmetic();
    let Some(alpha) = report.alpha() else {
        out.flags.moments_finite = false;
        return out;
    };
    let delta = choose_delta(alpha);
    out.delta = Some(delta);
    let moments = match method {
        MomentMethod::ClosedFormPreferred => MomentValues {
            en: spec.offspring.mean(),
            en_1_plus_delta: spec.offspring.moment(1.0 + delta),
            eb_alpha_plus_delta: spec.inhom.moment(alpha + delta),
            m_minus_delta: spec.mean_offspring() * spec.weight.log_moment(-delta, 0),
            m_alpha_plus_delta: spec.mean_offspring() * spec.weight.log_moment(alpha + delta, 0),
        },
        MomentMethod::MonteCarlo => mc_moments(spec, alpha, delta, mc),
    };
    out.flags.moments_finite = moments.all_finite();
    out.flags.moments = moments;
    out
}

const GROWTH_BUDGETS: [u64; 3] = [10_000, 100_000, 1_000_000];
const GROWTH_FACTOR: f64 = 3.0;

/// Sample means at nested budgets `10^4, 10^5, 10^6`; a moment is declared
/// infinite when its estimate grows by more than 3x from the first budget to
/// the last. Heuristic only.
fn mc_moments(spec: &ModelSpec, alpha: f64, delta: f64, mc: &McConfig) -> MomentValues {
    let mut rng = stream(mc.seed, Domain::Mellin, u64::MAX);
    let mut sums = [0.0f64; 5];
    let mut at_budget = [[0.0f64; 5]; 3];
    let mut buf = Vec::new();
    let mut done = 0u64;
    for (stage, &budget) in GROWTH_BUDGETS.iter().enumerate() {
        while done < budget {
            let (n, b) = spec.sample_into(&mut rng, &mut buf);
            let nf = n as f64;
            sums[0] += nf;
            sums[1] += nf.powf(1.0 + delta);
            sums[2] += b.powf(alpha + delta);
            sums[3] += buf.iter().map(|a| a.powf(-delta)).sum::<f64>();
            sums[4] += buf.iter().map(|a| a.powf(alpha + delta)).sum::<f64>();
            done += 1;
        }
        for k in 0..5 {
            at_budget[stage][k] = sums[k] / budget as f64;
        }
    }
    let verdict = |k: usize| {
        let first = at_budget[0][k];
        let last = at_budget[2][k];
        if !last.is_finite() || (first > 0.0 && last / first > GROWTH_FACTOR) {
            f64::INFINITY
        } else {
            last
        }
    };
    MomentValues {
        en: verdict(0),
        en_1_plus_delta: verdict(1),
        eb_alpha_plus_delta: verdict(2),
        m_minus_delta: verdict(3),
        m_alpha_plus_delta: verdict(4),
    }
}

/// Root search plus assumption checks with default options.
pub fn analyze(spec: &ModelSpec, opts: &RootOptions, method: MomentMethod) -> Result<MellinReport> {
    let report = find_roots_with(spec, opts)?;
    Ok(check_assumptions(spec, &report, method, &opts.mc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use std::f64::consts::LN_2;

    fn det(a: f64, n: u32) -> ModelSpec {
        ModelSpec::new(
            "det",
            OffspringLaw::Fixed { n },
            WeightLaw::Deterministic { value: a },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap()
    }

    fn crit() -> ModelSpec {
        make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 }).unwrap()
    }

    #[test]
    fn closed_form_evaluation() {
        let mc = McConfig::default();
        assert_eq!(evaluate(&det(0.5, 2), 1.0, &mc).unwrap(), Estimate::exact(1.0));
        let e = evaluate(&crit(), 0.5, &mc).unwrap();
        assert!((e.value - 1.0).abs() < 1e-15 && e.stderr == 0.0);
        let d1 = derivative(&det(0.5, 2), 1.0, 1, &mc).unwrap();
        assert!((d1.value + LN_2).abs() < 1e-15);
        let d2 = derivative(&crit(), 0.5, 2, &mc).unwrap();
        assert!((d2.value - 8.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn forced_mc_matches_closed_form() {
        let mc = McConfig {
            samples: 1_000_000,
            seed: 3,
            force_mc: true,
            exec: Exec::with_workers(1),
        };
        let e = evaluate(&crit(), 0.5, &mc).unwrap();
        assert!(e.stderr > 0.0);
        assert!((e.value - 1.0).abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn regimes() {
        let r = find_roots(&crit(), 1e-8).unwrap();
        match r.regime {
            Regime::CriticalTangent { alpha } => assert!((alpha - 0.5).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
        let r10 = find_roots(&crit(), 1e-9).unwrap();
        assert_eq!(r10.regime.name(), "critical_tangent");

        let spec = make_two_root_lognormal(-3.0, 2f64.sqrt(), 2, InhomLaw::Constant { b: 1.0 }).unwrap();
        let (a, b) = two_root_lognormal_roots(-3.0, 2f64.sqrt(), 2).unwrap();
        let r = find_roots(&spec, 1e-10).unwrap();
        match r.regime {
            Regime::TwoRoot { alpha, beta } => {
                assert!((alpha - a).abs() < 1e-8 && (beta - b).abs() < 1e-8);
                assert!(r.roots[0].m_prime < 0.0 && r.roots[1].m_prime > 0.0);
            }
            other => panic!("{other:?}"),
        }

        let r = find_roots(&det(0.5, 2), 1e-10).unwrap();
        assert_eq!(r.roots.len(), 1);
        assert!((r.roots[0].s - 1.0).abs() < 1e-9);
        assert!((r.roots[0].m_prime + LN_2).abs() < 1e-8);
        assert!(matches!(r.regime, Regime::StrictlySubcriticalWindow { .. }));
        assert!(!r.flags.nonarithmetic);

        let r = find_roots(&det(1.5, 2), 1e-10).unwrap();
        assert_eq!(r.regime, Regime::NoRootBelowOne);
    }

    #[test]
    fn perturbed_critical_model_is_not_tangent() {
        let WeightLaw::Lognormal { mu, sigma } = crit().weight else {
            unreachable!()
        };
        let spec = ModelSpec::new(
            "perturbed",
            OffspringLaw::Fixed { n: 2 },
            WeightLaw::Lognormal { mu: mu * 1.01, sigma },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap();
        let r = find_roots(&spec, 1e-10).unwrap();
        assert_eq!(r.regime.name(), "two_root");
    }

    #[test]
    fn assumptions() {
        let spec = crit();
        let rep = analyze(&spec, &RootOptions::default(), MomentMethod::ClosedFormPreferred).unwrap();
        assert!((rep.delta.unwrap() - 0.25).abs() < 1e-12);
        assert!(rep.flags.en_gt_1 && rep.flags.nonarithmetic && rep.flags.moments_finite);
        assert!((rep.flags.moments.en_1_plus_delta - 2f64.powf(1.25)).abs() < 1e-12);
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["regime"], "critical_tangent");
        assert!(json["flags"]["EN_gt_1"].as_bool().unwrap());
        assert!((json["alpha"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn heavy_inhomogeneity_detected_by_growth() {
        let heavy = ModelSpec::new(
            "pareto-b",
            OffspringLaw::Fixed { n: 2 },
            crit().weight,
            InhomLaw::Pareto {
                scale: 1.0,
                tail_index: 0.3,
            },
        )
        .unwrap();
        let rep = find_roots(&heavy, 1e-10).unwrap();
        let mc = McConfig {
            seed: 5,
            ..McConfig::default()
        };
        let closed = check_assumptions(&heavy, &rep, MomentMethod::ClosedFormPreferred, &mc);
        assert!(!closed.flags.moments_finite);
        let by_mc = check_assumptions(&heavy, &rep, MomentMethod::MonteCarlo, &mc);
        assert!(!by_mc.flags.moments_finite);
        assert!(by_mc.flags.moments.eb_alpha_plus_delta.is_infinite());
        assert!(by_mc.flags.moments.en.is_finite());
    }
}
