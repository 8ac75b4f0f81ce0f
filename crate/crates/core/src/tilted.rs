//! The size-biased step `Y` defined by `E f(Y) = E[sum f(-log A_i) A_i^alpha]`,
//! its random walk `S_n`, first-passage functionals, the function `W`, and
//! the many-to-one identity checked by exhaustive enumeration.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mellin::Estimate;
use crate::model::{ModelSpec, OffspringLaw, WeightLaw};
use crate::parallel::Exec;
use crate::rng::{stream, Domain};
use crate::stats::{Moments, Moments4};

/// Law of a single walk increment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepLaw {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// `Y = scale * E` with `E ~ Exp(rate)`.
    ScaledExp {
        scale: f64,
        rate: f64,
    },
    /// Finite support; `probs` need not be normalized.
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
    /// Self-normalized resample of a branch pool: `values[k]` with
    /// cumulative weight `cdf[k]`.
    Resampled {
        values: Vec<f64>,
        cdf: Vec<f64>,
    },
}

impl StepLaw {
    pub fn constant(y: f64) -> Self {
        StepLaw::Discrete {
            values: vec![y],
            probs: vec![1.0],
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StepLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            StepLaw::ScaledExp { scale, rate } => scale * Exp::new(*rate).expect("positive rate").sample(rng),
            StepLaw::Discrete { values, probs } => {
                if values.len() == 1 {
                    return values[0];
                }
                let total: f64 = probs.iter().sum();
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("non-empty support")
            }
            StepLaw::Resampled { values, cdf } => {
                let u = rng.random::<f64>() * cdf.last().copied().unwrap_or(0.0);
                let k = cdf.partition_point(|&c| c <= u).min(values.len() - 1);
                values[k]
            }
        }
    }

    /// Exact `(E Y, Var Y)` for laws with a closed form.
    pub fn exact_mean_var(&self) -> Option<(f64, f64)> {
        match self {
            StepLaw::Normal { mean, sd } => Some((*mean, sd * sd)),
            StepLaw::ScaledExp { scale, rate } => Some((scale / rate, (scale / rate).powi(2))),
            StepLaw::Discrete { values, probs } => {
                let total: f64 = probs.iter().sum();
                let mean = values.iter().zip(probs).map(|(v, p)| v * p).sum::<f64>() / total;
                let var = values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * (v - mean).powi(2))
                    .sum::<f64>()
                    / total;
                Some((mean, var))
            }
            StepLaw::Resampled { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltedLaw {
    pub base: Option<ModelSpec>,
    pub alpha: f64,
    pub step: StepLaw,
    /// True when `step` is the exact tilted law rather than a resample.
    pub analytic: bool,
}

/// Default tolerance on `|m(alpha) - 1|` for a normalized tilt.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Unnormalized tilted atoms `(y_j, E[N] p_j x_j^alpha)` of a finite weight law.
pub fn tilted_atoms(spec: &ModelSpec, alpha: f64) -> Option<Vec<(f64, f64)>> {
    let en = spec.mean_offspring();
    match &spec.weight {
        WeightLaw::FiniteSupport { points, probs } => Some(
            points
                .iter()
                .zip(probs)
                .map(|(x, p)| (-x.ln(), en * p * x.powf(alpha)))
                .collect(),
        ),
        WeightLaw::Deterministic { value } => Some(vec![(-value.ln(), en * value.powf(alpha))]),
        _ => None,
    }
}

fn exact_step(spec: &ModelSpec, alpha: f64) -> StepLaw {
    match &spec.weight {
        WeightLaw::Lognormal { mu, sigma } => StepLaw::Normal {
            mean: -(mu + alpha * sigma * sigma),
            sd: *sigma,
        },
        WeightLaw::Uniform01Power { exponent } => StepLaw::ScaledExp {
            scale: *exponent,
            rate: 1.0 + alpha * exponent,
        },
        WeightLaw::FiniteSupport { .. } | WeightLaw::Deterministic { .. } => {
            let atoms = tilted_atoms(spec, alpha).expect("finite law");
            StepLaw::Discrete {
                values: atoms.iter().map(|a| a.0).collect(),
                probs: atoms.iter().map(|a| a.1).collect(),
            }
        }
    }
}

impl TiltedLaw {
    /// Exact tilted law; requires `|m(alpha) - 1| <= tol`.
    pub fn new(spec: &ModelSpec, alpha: f64, tol: f64) -> Result<Self> {
        let m = crate::model::analytic_mellin(spec, alpha).unwrap_or(f64::NAN);
        let deviation = (m - 1.0).abs();
        if !(deviation <= tol) {
            return Err(Error::NotNormalized { deviation });
        }
        Ok(Self::normalized(spec, alpha))
    }

    /// Exact tilted law renormalized by `m(alpha)`, whatever its value.
    pub fn normalized(spec: &ModelSpec, alpha: f64) -> Self {
        TiltedLaw {
            base: Some(spec.clone()),
            alpha,
            step: exact_step(spec, alpha),
            analytic: true,
        }
    }

    /// Self-normalized importance resample over `pool` branch samples: each
    /// child `i` enters with weight `a_i^alpha`.
    pub fn resampled(spec: &ModelSpec, alpha: f64, pool: u64, seed: u64, exec: &Exec) -> Result<Self> {
        let parts = exec.map_reduce(
            pool,
            |c, range| {
                let mut rng = stream(seed, Domain::Tilted, c);
                let mut buf = Vec::new();
                let mut out = Vec::new();
                for _ in range {
                    spec.sample_into(&mut rng, &mut buf);
                    out.extend(buf.iter().map(|a| (-a.ln(), a.powf(alpha))));
                }
                out
            },
            Vec::new(),
            |mut a, mut b| {
                a.append(&mut b);
                a
            },
        );
        if parts.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let mut cdf = Vec::with_capacity(parts.len());
        let mut acc = 0.0;
        for &(_, w) in &parts {
            acc += w;
            cdf.push(acc);
        }
        Ok(TiltedLaw {
            base: Some(spec.clone()),
            alpha,
            step: StepLaw::Resampled {
                values: parts.into_iter().map(|p| p.0).collect(),
                cdf,
            },
            analytic: false,
        })
    }

    /// Test law with a prescribed increment distribution.
    pub fn from_step(step: StepLaw) -> Self {
        TiltedLaw {
            base: None,
            alpha: f64::NAN,
            step,
            analytic: true,
        }
    }

    #[inline]
    pub fn sample_y<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.step.sample(rng)
    }
}

/// One realized path with first-passage annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    pub s: Vec<f64>,
    /// `inf{i : S_i < 0}`; `None` when beyond the horizon.
    pub l: Option<usize>,
    /// Weak ascending ladder epochs `T_0 = 0 < T_1 < ...` within the horizon.
    pub ladder: Vec<usize>,
}

pub fn walk_path<R: Rng + ?Sized>(tl: &TiltedLaw, horizon: usize, rng: &mut R) -> WalkPath {
    let mut s = Vec::with_capacity(horizon + 1);
    s.push(0.0);
    let mut l = None;
    let mut ladder = vec![0];
    let mut record = 0.0;
    let mut cur = 0.0;
    for i in 1..=horizon {
        cur += tl.sample_y(rng);
        s.push(cur);
        if l.is_none() && cur < 0.0 {
            l = Some(i);
        }
        if cur >= record {
            ladder.push(i);
            record = cur;
        }
    }
    WalkPath { s, l, ladder }
}

/// Runs the walk until `stop(S_i)` holds or `cap` steps; returns the
/// stopping value, or `None` when censored.
#[inline]
fn first_passage<R: Rng + ?Sized>(tl: &TiltedLaw, cap: u64, rng: &mut R, stop: impl Fn(f64) -> bool) -> Option<f64> {
    let mut s = 0.0;
    for _ in 0..cap {
        s += tl.sample_y(rng);
        if stop(s) {
            return Some(s);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkOptions {
    pub paths: u64,
    pub seed: u64,
    pub delta: f64,
    /// Horizon cap for first-passage paths.
    pub cap: u64,
    /// Largest tolerated fraction of censored paths.
    pub max_censored: f64,
}

impl Default for WalkOptions {
    fn default() -> Self {
        WalkOptions {
            paths: 1_000_000,
            seed: 0,
            delta: 0.25,
            cap: 1 << 20,
            max_censored: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkStats {
    pub sigma2_direct: Estimate,
    pub sigma2_ladder: Estimate,
    pub mean_y: Estimate,
    pub delta: f64,
    /// `E[e^{delta Y}]`.
    pub exp_moment_plus: Estimate,
    /// `E[e^{-delta Y}]`.
    pub exp_moment_minus: Estimate,
    pub neg_s_l: Estimate,
    pub s_t1: Estimate,
    pub paths: u64,
    pub censored_l: u64,
    pub censored_t1: u64,
}

#[derive(Default, Clone, Copy)]
struct LadderAcc {
    neg_s_l: Moments,
    s_t1: Moments,
    censored_l: u64,
    censored_t1: u64,
}

/// Direct moments of `Y` and both sides of `Var Y = 2 E[-S_L] E[S_{T_1}]`.
pub fn estimate_sigma2(tl: &TiltedLaw, opts: &WalkOptions, exec: &Exec) -> Result<WalkStats> {
    let delta = opts.delta;
    let (direct, plus, minus) = exec.map_reduce(
        opts.paths,
        |c, range| {
            let mut rng = stream(opts.seed, Domain::Tilted, c);
            let mut m = Moments4::default();
            let mut p = Moments::default();
            let mut q = Moments::default();
            for _ in range {
                let y = tl.sample_y(&mut rng);
                m.push(y);
                p.push((delta * y).exp());
                q.push((-delta * y).exp());
            }
            (m, p, q)
        },
        (Moments4::default(), Moments::default(), Moments::default()),
        |(mut a, mut b, mut c), (x, y, z)| {
            a.merge(&x);
            b.merge(&y);
            c.merge(&z);
            (a, b, c)
        },
    );

    let ladder = exec.map_reduce(
        opts.paths,
        |_, range| {
            let mut acc = LadderAcc::default();
            for k in range {
                let mut rng = stream(opts.seed, Domain::Walk, 2 * k);
                match first_passage(tl, opts.cap, &mut rng, |s| s < 0.0) {
                    Some(s) => acc.neg_s_l.push(-s),
                    None => acc.censored_l += 1,
                }
                let mut rng = stream(opts.seed, Domain::Walk, 2 * k + 1);
                match first_passage(tl, opts.cap, &mut rng, |s| s >= 0.0) {
                    Some(s) => acc.s_t1.push(s),
                    None => acc.censored_t1 += 1,
                }
            }
            acc
        },
        LadderAcc::default(),
        |mut a, b| {
            a.neg_s_l.merge(&b.neg_s_l);
            a.s_t1.merge(&b.s_t1);
            a.censored_l += b.censored_l;
            a.censored_t1 += b.censored_t1;
            a
        },
    );
    let censored = ladder.censored_l.max(ladder.censored_t1);
    if censored as f64 > opts.max_censored * opts.paths as f64 {
        return Err(Error::CensoringExcess {
            censored,
            total: opts.paths,
        });
    }
    let (a, b) = (ladder.neg_s_l.mean, ladder.s_t1.mean);
    let (sa, sb) = (ladder.neg_s_l.stderr(), ladder.s_t1.stderr());
    Ok(WalkStats {
        sigma2_direct: Estimate {
            value: direct.variance(),
            stderr: direct.variance_stderr(),
        },
        sigma2_ladder: Estimate {
            value: 2.0 * a * b,
            stderr: 2.0 * ((b * sa).powi(2) + (a * sb).powi(2)).sqrt(),
        },
        mean_y: Estimate {
            value: direct.mean,
            stderr: direct.mean_stderr(),
        },
        delta,
        exp_moment_plus: Estimate {
            value: plus.mean,
            stderr: plus.stderr(),
        },
        exp_moment_minus: Estimate {
            value: minus.mean,
            stderr: minus.stderr(),
        },
        neg_s_l: Estimate { value: a, stderr: sa },
        s_t1: Estimate { value: b, stderr: sb },
        paths: opts.paths,
        censored_l: ladder.censored_l,
        censored_t1: ladder.censored_t1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WPoint {
    pub x: f64,
    pub w: f64,
    pub stderr: f64,
    /// Some path hit the length cap before the series settled.
    pub approximate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WOptions {
    pub paths: u64,
    pub seed: u64,
    pub cap: u64,
    /// Trailing window length and mass for truncating the series.
    pub window: usize,
    pub window_mass: f64,
}

impl Default for WOptions {
    fn default() -> Self {
        WOptions {
            paths: 10_000,
            seed: 0,
            cap: 1 << 20,
            window: 1000,
            window_mass: 1e-12,
        }
    }
}

/// Monte Carlo estimate of
/// `W(x) = E[sum_{i>=0} e^{-delta (x + S_i)} 1{S_j + x >= 0 for all j <= i}]`.
pub fn w_function(tl: &TiltedLaw, delta: f64, x_grid: &[f64], opts: &WOptions, exec: &Exec) -> Vec<WPoint> {
    x_grid
        .iter()
        .enumerate()
        .map(|(gi, &x)| {
            if x < 0.0 {
                return WPoint {
                    x,
                    w: 0.0,
                    stderr: 0.0,
                    approximate: false,
                };
            }
            let (mom, approx) = exec.map_reduce(
                opts.paths,
                |_, range| {
                    let mut mom = Moments::default();
                    let mut approx = false;
                    for k in range {
                        let mut rng = stream(opts.seed, Domain::WFunction, (gi as u64) << 40 | k);
                        let (v, capped) = w_path(tl, delta, x, opts, &mut rng);
                        mom.push(v);
                        approx |= capped;
                    }
                    (mom, approx)
                },
                (Moments::default(), false),
                |(mut a, fa), (b, fb)| {
                    a.merge(&b);
                    (a, fa || fb)
                },
            );
            WPoint {
                x,
                w: mom.mean,
                stderr: mom.stderr(),
                approximate: approx,
            }
        })
        .collect()
}

fn w_path<R: Rng + ?Sized>(tl: &TiltedLaw, delta: f64, x: f64, opts: &WOptions, rng: &mut R) -> (f64, bool) {
    let mut total = (-delta * x).exp();
    let mut trail = std::collections::VecDeque::with_capacity(opts.window);
    let mut trail_sum = 0.0;
    let mut s = 0.0;
    for _ in 0..opts.cap {
        s += tl.sample_y(rng);
        if s + x < 0.0 {
            return (total, false);
        }
        let term = (-delta * (x + s)).exp();
        total += term;
        trail.push_back(term);
        trail_sum += term;
        if trail.len() > opts.window {
            trail_sum -= trail.pop_front().unwrap_or(0.0);
        }
        if trail.len() == opts.window && trail_sum.max(0.0) < opts.window_mass {
            return (total, false);
        }
    }
    (total, true)
}

/// Path functionals for the many-to-one identity. Each maps the partial
/// sums `S_1..S_n` (empty at depth 0) to a real number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Functional {
    One,
    /// `1{S_n < c}`, with `S_0 = 0` at depth 0.
    LastBelow(f64),
    /// `1{S_k >= c for all k}`.
    AllAbove(f64),
    /// `1{max_k S_k > level}`.
    Exceeds(f64),
}

impl Functional {
    pub fn eval(&self, path: &[f64]) -> f64 {
        let b = match *self {
            Functional::One => true,
            Functional::LastBelow(c) => path.last().copied().unwrap_or(0.0) < c,
            Functional::AllAbove(c) => path.iter().all(|&s| s >= c),
            Functional::Exceeds(level) => path.is_empty() || path.iter().any(|&s| s > level),
        };
        if b {
            1.0
        } else {
            0.0
        }
    }
}

pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Both sides of the many-to-one identity for a finite-support weight law
/// and fixed offspring count.
///
/// `lhs` enumerates atom paths with tilted weights `E[N] p_j x_j^alpha` and
/// reweights by `e^{alpha S_n}`; its total mass is `m(alpha)^n`, so the
/// identity holds for every `alpha`. `rhs` enumerates child-index paths
/// `v in [N]^n` and their atom assignments directly.
pub fn many_to_one_check(spec: &ModelSpec, alpha: f64, depth: u32, f: Functional) -> Result<(f64, f64)> {
    let OffspringLaw::Fixed { n } = spec.offspring else {
        return Err(Error::InvalidArgument(
            "many-to-one enumeration needs Fixed offspring".into(),
        ));
    };
    let atoms = tilted_atoms(spec, alpha)
        .ok_or_else(|| Error::InvalidArgument("many-to-one enumeration needs a finite weight law".into()))?;
    let (points, probs): (Vec<f64>, Vec<f64>) = match &spec.weight {
        WeightLaw::FiniteSupport { points, probs } => (points.clone(), probs.clone()),
        WeightLaw::Deterministic { value } => (vec![*value], vec![1.0]),
        _ => unreachable!(),
    };
    let k = atoms.len() as u128;
    let terms = (n as u128 * k).checked_pow(depth).unwrap_or(u128::MAX);
    if terms > ENUMERATION_LIMIT {
        return Err(Error::ComplexityExceeded {
            terms,
            limit: ENUMERATION_LIMIT,
        });
    }

    let mut lhs = 0.0;
    let mut path = Vec::with_capacity(depth as usize);
    for code in 0..k.pow(depth) {
        path.clear();
        let (mut c, mut weight, mut s) = (code, 1.0, 0.0);
        for _ in 0..depth {
            let (y, q) = atoms[(c % k) as usize];
            c /= k;
            weight *= q;
            s += y;
            path.push(s);
        }
        lhs += weight * (alpha * s).exp() * f.eval(&path);
    }

    let mut rhs = 0.0;
    let nk = n as u128 * k;
    for code in 0..nk.pow(depth) {
        path.clear();
        let (mut c, mut prob, mut s) = (code, 1.0, 0.0);
        for _ in 0..depth {
            let atom = ((c % nk) % k) as usize;
            c /= nk;
            prob *= probs[atom];
            s -= points[atom].ln();
            path.push(s);
        }
        rhs += prob * f.eval(&path);
    }
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use std::f64::consts::{E, LN_2};

    fn crit() -> ModelSpec {
        make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 }).unwrap()
    }

    fn two_atom() -> ModelSpec {
        ModelSpec::new(
            "two-atom",
            OffspringLaw::Fixed { n: 2 },
            WeightLaw::FiniteSupport {
                points: vec![1.0 / E, E],
                probs: vec![0.5, 0.5],
            },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn critical_tilt_is_centred_gaussian() {
        let tl = TiltedLaw::new(&crit(), 0.5, NORMALIZATION_TOL).unwrap();
        match tl.step {
            StepLaw::Normal { mean, sd } => {
                assert!(mean.abs() < 1e-12);
                assert!((sd * sd - 8.0 * LN_2).abs() < 1e-12);
            }
            ref other => panic!("{other:?}"),
        }
        assert!(matches!(
            TiltedLaw::new(&crit(), 0.4, NORMALIZATION_TOL),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn two_atom_tilt_proportions() {
        let alpha = 0.3;
        let tl = TiltedLaw::normalized(&two_atom(), alpha);
        let StepLaw::Discrete { values, probs } = &tl.step else {
            panic!()
        };
        assert_eq!(values, &vec![1.0, -1.0]);
        let ratio = probs[0] / probs[1];
        assert!((ratio - (-2.0 * alpha).exp()).abs() < 1e-14);
    }

    #[test]
    fn degenerate_paths() {
        let mut rng = stream(0, Domain::Walk, 0);
        let down = TiltedLaw::from_step(StepLaw::constant(-1.0));
        let p = walk_path(&down, 10, &mut rng);
        assert_eq!(p.l, Some(1));
        assert_eq!(p.ladder, vec![0]);
        let up = TiltedLaw::from_step(StepLaw::constant(1.0));
        let p = walk_path(&up, 10, &mut rng);
        assert_eq!(p.l, None);
        assert_eq!(p.ladder, (0..=10).collect::<Vec<_>>());
    }

    #[test]
    fn w_degenerate_and_negative() {
        let down = TiltedLaw::from_step(StepLaw::constant(-1.0));
        let exec = Exec::with_workers(1);
        let opts = WOptions {
            paths: 10,
            ..WOptions::default()
        };
        let w = w_function(&down, 1.0, &[-0.3, 0.5], &opts, &exec);
        assert_eq!(w[0].w, 0.0);
        assert!((w[1].w - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn many_to_one_small_cases() {
        let spec = two_atom();
        for alpha in [0.2, 0.7] {
            let (l, r) = many_to_one_check(&spec, alpha, 2, Functional::LastBelow(0.0)).unwrap();
            assert!((l - r).abs() <= 1e-12 * r.abs().max(1.0), "{l} {r}");
            assert!((r - 1.0).abs() < 1e-12);
            let (l, r) = many_to_one_check(&spec, alpha, 3, Functional::One).unwrap();
            assert!((l - 8.0).abs() < 1e-12 && (r - 8.0).abs() < 1e-12);
        }
        let (l, r) = many_to_one_check(&spec, 0.5, 0, Functional::One).unwrap();
        assert_eq!((l, r), (1.0, 1.0));
    }

    #[test]
    fn enumeration_limit() {
        let spec = ModelSpec::new(
            "big",
            OffspringLaw::Fixed { n: 3 },
            WeightLaw::FiniteSupport {
                points: vec![0.1, 0.2, 0.3, 0.4],
                probs: vec![0.25; 4],
            },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap();
        assert!(matches!(
            many_to_one_check(&spec, 0.5, 7, Functional::One),
            Err(Error::ComplexityExceeded { .. })
        ));
    }

    #[test]
    fn resampled_law_tracks_exact() {
        let exec = Exec::with_workers(1);
        let tl = TiltedLaw::resampled(&crit(), 0.5, 200_000, 9, &exec).unwrap();
        let mut rng = stream(1, Domain::Tilted, 0);
        let m: Moments = (0..50_000).map(|_| tl.sample_y(&mut rng)).collect();
        assert!(m.mean.abs() < 0.1, "{}", m.mean);
    }
}
