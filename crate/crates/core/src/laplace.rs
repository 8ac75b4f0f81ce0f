//! Laplace transform `phi(t) = E[e^{-tR}]` of the minimal solution as the
//! fixed point of `phi(t) = E[e^{-tB} prod phi(t A_i)]` on a log grid, and the
//! renewal-theoretic objects built from it: `D(x) = e^{alpha x}(1 - phi(e^{-x}))`,
//! the Poisson source `G`, and the tail constant `-2 int x G / (sigma^2 Gamma(1 - alpha))`.
//!
//! The state is `u = 1 - phi`, kept as `log u` so that the small-`t` region,
//! where `u ~ t^alpha`, retains full relative precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::parallel::Exec;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    /// Points per decade.
    pub ppd: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            t_min: 1e-10,
            t_max: 1e8,
            ppd: 25,
        }
    }
}

impl GridSpec {
    pub fn decades(&self) -> f64 {
        (self.t_max / self.t_min).log10()
    }

    pub fn step(&self) -> f64 {
        std::f64::consts::LN_10 / self.ppd as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let n = (self.decades() * self.ppd as f64).round() as usize + 1;
        let h = self.step();
        (0..n).map(|j| self.t_min * (j as f64 * h).exp()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_max > self.t_min && self.ppd > 0) {
            return Err(Error::InvalidArgument(format!("invalid grid {self:?}")));
        }
        if self.decades() < 10.0 - 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "grid spans {:.2} decades, at least 10 are needed",
                self.decades()
            )));
        }
        Ok(())
    }
}

/// How the pool's log-weights are adjusted before iterating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Calibration {
    #[default]
    None,
    /// Shift so that the pool satisfies `m(alpha) = 1`.
    Normalize,
    /// Affine map `l -> c2 l + c1` so the pool satisfies `m(alpha) = 1` and
    /// `m'(alpha) = 0` exactly.
    Critical,
}

/// Treatment of `log(1 - phi)` below `t_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LowerTail {
    /// Slope `alpha`, or 1 when no exponent is supplied.
    Alpha,
    /// Fixed slope in `(log t, log u)`.
    Slope(f64),
    /// Slope refitted over the first decade at every iteration.
    LocalFit,
}

/// Branch pool factorized into its marginals. Under i.i.d. weights given `N`
/// and `B` independent, `phi(t) = E[e^{-tB}] E[psi(t)^N]` with
/// `psi(t) = E[phi(tA)]`, so only the three empirical laws are needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacePool {
    pub log_a: Vec<f64>,
    pub n: Vec<u32>,
    pub b: Vec<f64>,
    /// `(c1, c2)` of the applied calibration.
    pub calibration: (f64, f64),
}

impl LaplacePool {
    pub fn draw(spec: &ModelSpec, size: u64, seed: u64, exec: &Exec) -> Self {
        let parts = exec.map_reduce(
            size,
            |c, range| {
                let mut rng = stream(seed, Domain::LaplacePool, c);
                let mut buf = Vec::new();
                let (mut la, mut ns, mut bs) = (Vec::new(), Vec::new(), Vec::new());
                for _ in range {
                    let (n, b) = spec.sample_into(&mut rng, &mut buf);
                    ns.push(n);
                    bs.push(b);
                    la.extend(buf.iter().map(|a| a.ln()));
                }
                vec![(la, ns, bs)]
            },
            Vec::new(),
            |mut a, mut b| {
                a.append(&mut b);
                a
            },
        );
        let mut pool = LaplacePool {
            log_a: Vec::new(),
            n: Vec::new(),
            b: Vec::new(),
            calibration: (0.0, 1.0),
        };
        for (la, ns, bs) in parts {
            pool.log_a.extend(la);
            pool.n.extend(ns);
            pool.b.extend(bs);
        }
        pool
    }

    pub fn mean_n(&self) -> f64 {
        self.n.iter().map(|&n| n as f64).sum::<f64>() / self.n.len() as f64
    }

    /// `log m̂(s)` of the pool.
    pub fn log_mellin(&self, s: f64) -> f64 {
        let k = self.log_a.len() as f64;
        let mx = self.log_a.iter().map(|l| s * l).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self.log_a.iter().map(|l| (s * l - mx).exp()).sum();
        self.mean_n().ln() + mx + (sum / k).ln()
    }

    /// `(psi, psi', psi'')` of the pool's log-Mellin function at `r`.
    fn log_mellin_derivs(&self, r: f64) -> (f64, f64, f64) {
        let mx = self.log_a.iter().map(|l| r * l).fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &self.log_a {
            let w = (r * l - mx).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let k = self.log_a.len() as f64;
        let mean = s1 / s0;
        (self.mean_n().ln() + mx + (s0 / k).ln(), mean, s2 / s0 - mean * mean)
    }

    pub fn calibrate(&mut self, alpha: f64, mode: Calibration) -> Result<()> {
        let (c1, c2) = match mode {
            Calibration::None => (0.0, 1.0),
            Calibration::Normalize => (-self.log_mellin(alpha) / alpha, 1.0),
            Calibration::Critical => {
                // g(r) = psi(r) - r psi'(r) is decreasing with g(0) = log E N.
                let g = |r: f64| {
                    let (p, d, _) = self.log_mellin_derivs(r);
                    p - r * d
                };
                if !(g(0.0) > 0.0) {
                    return Err(Error::RegimeMismatch {
                        regime: "pool with E[N] <= 1".into(),
                    });
                }
                let mut hi = alpha.max(1e-3);
                while g(hi) > 0.0 {
                    hi *= 2.0;
                    if hi > 1e6 {
                        return Err(Error::RegimeMismatch {
                            regime: "pool without a tangent exponent".into(),
                        });
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if g(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let r = 0.5 * (lo + hi);
                let (_, d, _) = self.log_mellin_derivs(r);
                let c2 = r / alpha;
                (-c2 * d, c2)
            }
        };
        for l in &mut self.log_a {
            *l = c2 * *l + c1;
        }
        let (o1, o2) = self.calibration;
        self.calibration = (c2 * o1 + c1, c2 * o2);
        Ok(())
    }

    /// Tilted step atoms `(y, q)` with `y = -log a`, `q = E[N] a^alpha / |A|`.
    pub fn tilted_atoms(&self, alpha: f64) -> Vec<(f64, f64)> {
        let scale = self.mean_n() / self.log_a.len() as f64;
        self.log_a.iter().map(|&l| (-l, scale * (alpha * l).exp())).collect()
    }

    /// Variance of the tilted step, normalized by its total mass.
    pub fn tilted_variance(&self, alpha: f64) -> f64 {
        let atoms = self.tilted_atoms(alpha);
        let mass: f64 = atoms.iter().map(|a| a.1).sum();
        let mean = atoms.iter().map(|(y, q)| y * q).sum::<f64>() / mass;
        atoms.iter().map(|(y, q)| q * (y - mean).powi(2)).sum::<f64>() / mass
    }
}

const TAYLOR_ORDER: usize = 9;
const TAYLOR_MAX_STEP: f64 = 0.25;

/// The smoothing map acting on `u = 1 - phi` at the grid points.
struct Operator {
    j: usize,
    h: f64,
    k_min: i64,
    /// Per cell: `sum_a f_a^p` for `p < TAYLOR_ORDER`.
    moments: Vec<[f64; TAYLOR_ORDER]>,
    fracs: Vec<Vec<f64>>,
    n_atoms: f64,
    /// `(n, P[N = n])`.
    pgf: Vec<(u32, f64)>,
    /// `1 - E[e^{-t_j B}]` per grid point.
    one_minus_lb: Vec<f64>,
}

impl Operator {
    fn new(grid: &[f64], h: f64, pool: &LaplacePool) -> Self {
        let mut cells: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for &l in &pool.log_a {
            let d = l / h;
            let k = d.floor();
            cells.entry(k as i64).or_default().push(d - k);
        }
        let k_min = cells.keys().next().copied().unwrap_or(0);
        let k_max = cells.keys().next_back().copied().unwrap_or(0);
        let width = (k_max - k_min + 1) as usize;
        let mut moments = vec![[0.0; TAYLOR_ORDER]; width];
        let mut fracs = vec![Vec::new(); width];
        for (k, fs) in cells {
            let c = (k - k_min) as usize;
            for &f in &fs {
                let mut p = 1.0;
                for slot in moments[c].iter_mut() {
                    *slot += p;
                    p *= f;
                }
            }
            fracs[c] = fs;
        }
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        for &n in &pool.n {
            *counts.entry(n).or_default() += 1;
        }
        let m = pool.n.len() as f64;
        let pgf = counts.into_iter().map(|(n, c)| (n, c as f64 / m)).collect();
        let one_minus_lb = grid
            .iter()
            .map(|&t| pool.b.iter().map(|&b| -(-t * b).exp_m1()).sum::<f64>() / pool.b.len() as f64)
            .collect();
        Operator {
            j: grid.len(),
            h,
            k_min,
            moments,
            fracs,
            n_atoms: pool.log_a.len() as f64,
            pgf,
            one_minus_lb,
        }
    }

    /// `v_j = E_A[u(t_j A)]` with log-linear interpolation in the grid
    /// index, the given lower-tail slope, and clamping above `t_max`.
    fn mean_u(&self, u: &[f64], lu: &[f64], slope: f64, ext: &[f64], jdx: usize) -> f64 {
        let j = self.j as i64;
        let sh = slope * self.h;
        let mut sum = 0.0;
        for (c, mom) in self.moments.iter().enumerate() {
            if mom[0] == 0.0 {
                continue;
            }
            let i = jdx as i64 + self.k_min + c as i64;
            if i <= -1 {
                sum += u[0] * (sh * i as f64).exp() * ext[c];
            } else if i >= j - 1 {
                sum += u[(j - 1) as usize] * mom[0];
            } else {
                let i = i as usize;
                let d = lu[i + 1] - lu[i];
                if d.abs() <= TAYLOR_MAX_STEP {
                    let mut acc = 0.0;
                    let mut dp = 1.0;
                    let mut fact = 1.0;
                    for (p, m) in mom.iter().enumerate() {
                        if p > 0 {
                            fact *= p as f64;
                            dp *= d;
                        }
                        acc += dp / fact * m;
                    }
                    sum += u[i] * acc;
                } else {
                    sum += self.fracs[c].iter().map(|f| (lu[i] + f * d).exp()).sum::<f64>();
                }
            }
        }
        sum / self.n_atoms
    }

    /// Per cell `sum_a e^{slope h f_a}`, used below `t_min`.
    fn lower_ext(&self, slope: f64) -> Vec<f64> {
        let sh = slope * self.h;
        self.fracs
            .iter()
            .map(|fs| fs.iter().map(|f| (sh * f).exp()).sum())
            .collect()
    }

    /// `Q = 1 - E[(1 - v)^N]`, `E[(1 - v)^N]`, and the excess
    /// `E[N v - 1 + (1 - v)^N]`, all without cancellation.
    fn pgf_terms(&self, v: f64) -> (f64, f64, f64) {
        let l1 = (-v).ln_1p();
        let mut q = 0.0;
        let mut p = 0.0;
        let mut excess = 0.0;
        for &(n, w) in &self.pgf {
            let z = n as f64 * l1;
            q += w * -z.exp_m1();
            p += w * z.exp();
            excess += w * if v < 0.05 {
                n as f64 * log1p_plus(v) + expm1_minus(z)
            } else {
                n as f64 * v - 1.0 + (1.0 - v).powi(n as i32)
            };
        }
        (q, p, excess)
    }

    /// One application of the map; returns `(u_new, v)`.
    fn apply(&self, u: &[f64], lu: &[f64], slope: f64, exec: &Exec) -> (Vec<f64>, Vec<f64>) {
        let ext = self.lower_ext(slope);
        let pairs = exec.map_indexed(self.j as u64, |jdx| {
            let jdx = jdx as usize;
            let v = if u.iter().all(|&x| x == 0.0) {
                0.0
            } else {
                self.mean_u(u, lu, slope, &ext, jdx)
            };
            let (q, _, _) = self.pgf_terms(v);
            let lb = self.one_minus_lb[jdx];
            (lb + (1.0 - lb) * q, v)
        });
        pairs.into_iter().unzip()
    }
}

/// `log(1 - v) + v`.
fn log1p_plus(v: f64) -> f64 {
    if v.abs() < 0.05 {
        let mut term = v;
        let mut acc = 0.0;
        for k in 2..40 {
            term *= v;
            acc -= term / k as f64;
            if term.abs() < 1e-18 * acc.abs() {
                break;
            }
        }
        acc
    } else {
        (-v).ln_1p() + v
    }
}

/// `e^z - 1 - z`.
fn expm1_minus(z: f64) -> f64 {
    if z.abs() < 0.05 {
        let mut term = z;
        let mut acc = 0.0;
        for k in 2..40 {
            term *= z / k as f64;
            acc += term;
            if term.abs() < 1e-18 * acc.abs() {
                break;
            }
        }
        acc
    } else {
        z.exp_m1() - z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixpointOptions {
    pub grid: GridSpec,
    pub tol: f64,
    pub max_iter: usize,
    pub lower_tail: LowerTail,
    pub exec: Exec,
}

impl Default for FixpointOptions {
    fn default() -> Self {
        FixpointOptions {
            grid: GridSpec::default(),
            tol: 1e-9,
            max_iter: 10_000,
            lower_tail: LowerTail::Alpha,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceGrid {
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    /// `1 - phi`, carried separately for relative precision at small `t`.
    pub one_minus_phi: Vec<f64>,
    pub alpha: Option<f64>,
    pub iterations: usize,
    /// Relative sup-norm of the last update of `1 - phi`.
    pub residual: f64,
    pub branch_pool_size: usize,
    pub lower_tail: LowerTail,
    /// Grid points where a shape invariant fails beyond rounding.
    pub invariant_violations: usize,
}

fn lower_slope(mode: LowerTail, alpha: Option<f64>, lu: &[f64], h: f64, ppd: usize) -> f64 {
    match mode {
        LowerTail::Alpha => alpha.unwrap_or(1.0),
        LowerTail::Slope(s) => s,
        LowerTail::LocalFit => {
            let k = ppd.min(lu.len() - 1).max(1);
            if lu[0].is_finite() && lu[k].is_finite() {
                ((lu[k] - lu[0]) / (k as f64 * h)).clamp(0.0, 1.0)
            } else {
                1.0
            }
        }
    }
}

/// Iterates from `phi = 1` to the minimal fixed point on the pool's
/// empirical law.
pub fn iterate_phi(pool: &LaplacePool, alpha: Option<f64>, opts: &FixpointOptions) -> Result<LaplaceGrid> {
    opts.grid.validate()?;
    let t = opts.grid.points();
    let h = opts.grid.step();
    let op = Operator::new(&t, h, pool);
    let mut u = vec![0.0; t.len()];
    let mut lu = vec![f64::NEG_INFINITY; t.len()];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let slope = lower_slope(opts.lower_tail, alpha, &lu, h, opts.grid.ppd);
        let (next, _) = op.apply(&u, &lu, slope, &opts.exec);
        iterations += 1;
        residual = 0.0;
        for (k, (&old, &new)) in u.iter().zip(&next).enumerate() {
            if old - new > 10.0 * f64::EPSILON {
                return Err(Error::MonotonicityViolated {
                    t: t[k],
                    increase: old - new,
                    iteration: iterations,
                });
            }
            if new > 0.0 {
                residual = f64::max(residual, (new - old).abs() / new);
            }
        }
        u = next;
        for (l, &x) in lu.iter_mut().zip(&u) {
            *l = x.ln();
        }
        if residual < opts.tol {
            break;
        }
    }
    if residual >= opts.tol {
        return Err(Error::NotConverged { residual, iterations });
    }
    let phi: Vec<f64> = u.iter().map(|x| 1.0 - x).collect();
    let invariant_violations = shape_violations(&t, &u);
    Ok(LaplaceGrid {
        t,
        phi,
        one_minus_phi: u,
        alpha,
        iterations,
        residual,
        branch_pool_size: pool.n.len(),
        lower_tail: opts.lower_tail,
        invariant_violations,
    })
}

/// Counts failures of: `u` nondecreasing and `u / t` nonincreasing.
fn shape_violations(t: &[f64], u: &[f64]) -> usize {
    let tol = 1e-12;
    (1..t.len())
        .filter(|&k| {
            let inc = u[k] < u[k - 1] * (1.0 - tol) - 1e-300;
            let ratio = u[k] / t[k] > u[k - 1] / t[k - 1] * (1.0 + tol);
            inc || ratio
        })
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonData {
    /// `-log t`, ascending.
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub g: Vec<f64>,
    pub int_g: f64,
    pub int_xg: f64,
    pub sigma2: f64,
    pub alpha: f64,
    pub c_d: f64,
    pub c_tail: f64,
    /// Points where `D e^{-alpha x}` increases or `D e^{(1-alpha) x}` decreases.
    pub invariant_violations: usize,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Contributions of `G` and `x G` beyond both grid ends, assuming `G`
/// continues exponentially at the rate fitted over the outermost decade.
fn edge_tails(x: &[f64], g: &[f64], ppd: usize) -> (f64, f64) {
    let n = x.len();
    let k = ppd.min(n - 1);
    let mut tg = 0.0;
    let mut txg = 0.0;
    // Lower end: G ~ G(x0) e^{r (x - x0)} for x < x0.
    if g[0] != 0.0 && g[k] != 0.0 && g[0].signum() == g[k].signum() {
        let r = (g[k] / g[0]).ln() / (x[k] - x[0]);
        if r > 0.0 {
            tg += g[0] / r;
            txg += g[0] * (x[0] / r - 1.0 / (r * r));
        }
    }
    // Upper end: G ~ G(xn) e^{-r (x - xn)} for x > xn.
    let (a, b) = (n - 1 - k, n - 1);
    if g[a] != 0.0 && g[b] != 0.0 && g[a].signum() == g[b].signum() {
        let r = (g[a] / g[b]).ln() / (x[b] - x[a]);
        if r > 0.0 {
            tg += g[b] / r;
            txg += g[b] * (x[b] / r + 1.0 / (r * r));
        }
    }
    (tg, txg)
}

/// Builds `D` and `G` from a converged grid and the pool it was computed on.
pub fn derive_poisson(grid: &LaplaceGrid, pool: &LaplacePool, exec: &Exec) -> Result<PoissonData> {
    let alpha = grid.alpha.ok_or_else(|| Error::RegimeMismatch {
        regime: "no tail exponent: model is neither critical nor two-root".into(),
    })?;
    let t = &grid.t;
    let u = &grid.one_minus_phi;
    let lu: Vec<f64> = u.iter().map(|x| x.ln()).collect();
    let h = (t[1] / t[0]).ln();
    let ppd = (std::f64::consts::LN_10 / h).round() as usize;
    let op = Operator::new(t, h, pool);
    let slope = lower_slope(grid.lower_tail, grid.alpha, &lu, h, ppd);
    let ext = op.lower_ext(slope);
    let g_rev: Vec<f64> = exec.map_indexed(t.len() as u64, |j| {
        let j = j as usize;
        let v = op.mean_u(u, &lu, slope, &ext, j);
        let (_, p, excess) = op.pgf_terms(v);
        let lb = op.one_minus_lb[j];
        // G = e^{alpha x} [E N v - u_new], u_new = lb + (1 - lb) Q.
        t[j].powf(-alpha) * (excess - lb * p)
    });
    let n = t.len();
    let x: Vec<f64> = (0..n).rev().map(|j| -t[j].ln()).collect();
    let d: Vec<f64> = (0..n).rev().map(|j| u[j] * t[j].powf(-alpha)).collect();
    let g: Vec<f64> = g_rev.into_iter().rev().collect();

    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let edge = g[0].abs().max(g[n - 1].abs());
    if gmax > 0.0 && edge > 1e-3 * gmax {
        return Err(Error::GridTooNarrow {
            edge_ratio: edge / gmax,
        });
    }
    let xg: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a * b).collect();
    let (tail_g, tail_xg) = edge_tails(&x, &g, ppd);
    let int_g = trapezoid(&x, &g) + tail_g;
    let int_xg = trapezoid(&x, &xg) + tail_xg;
    let sigma2 = pool.tilted_variance(alpha);
    let c_d = -2.0 * int_xg / sigma2;
    let tol = 1e-9;
    let invariant_violations = (1..n)
        .filter(|&k| {
            let a = d[k] * (-alpha * x[k]).exp() > d[k - 1] * (-alpha * x[k - 1]).exp() * (1.0 + tol);
            let b = d[k] * ((1.0 - alpha) * x[k]).exp() < d[k - 1] * ((1.0 - alpha) * x[k - 1]).exp() * (1.0 - tol);
            a || b
        })
        .count();
    Ok(PoissonData {
        x,
        d,
        g,
        int_g,
        int_xg,
        sigma2,
        alpha,
        c_d,
        c_tail: c_d / gamma(1.0 - alpha),
        invariant_violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Mean of `D` over the last decade of `x`.
    pub value: f64,
    /// `(max - min) / mean` of `D` over that decade.
    pub spread: f64,
}

pub const PLATEAU_SPREAD: f64 = 0.05;

pub fn plateau(pd: &PoissonData) -> Plateau {
    let x_hi = *pd.x.last().unwrap_or(&0.0);
    let tail: Vec<f64> =
        pd.x.iter()
            .zip(&pd.d)
            .filter(|(x, _)| **x >= x_hi - std::f64::consts::LN_10 - 1e-9)
            .map(|(_, d)| *d)
            .collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Plateau {
        value: mean,
        spread: (hi - lo) / mean,
    }
}

/// `C_tail = C_D / Gamma(1 - alpha)` together with the plateau diagnostic.
pub fn tail_constant_from_laplace(pd: &PoissonData) -> Result<(f64, Plateau)> {
    let p = plateau(pd);
    if !(p.spread < PLATEAU_SPREAD) {
        return Err(Error::NoPlateau { spread: p.spread });
    }
    Ok((pd.c_tail, p))
}

/// Piecewise-linear `D` on the ascending `x` grid: constant beyond the
/// largest `x`, and `e^{alpha x} u(t_max)` below the smallest.
fn d_at(pd: &PoissonData, u_tmax: f64, x: f64) -> f64 {
    let n = pd.x.len();
    if x >= pd.x[n - 1] {
        return pd.d[n - 1];
    }
    if x <= pd.x[0] {
        return (pd.alpha * x).exp() * u_tmax;
    }
    let h = pd.x[1] - pd.x[0];
    let pos = (x - pd.x[0]) / h;
    let k = (pos.floor() as usize).min(n - 2);
    let f = pos - k as f64;
    pd.d[k] * (1.0 - f) + pd.d[k + 1] * f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonResidual {
    /// `max |E D(x+Y) - D(x) - G(x)| / max |D|` over the interior.
    pub relative: f64,
    pub points: usize,
}

/// Checks `E[D(x + Y)] = D(x) + G(x)` with the expectation taken exactly over
/// a tilted step law given as atoms `(y, q)`, on grid points at least
/// `margin` from either end.
pub fn poisson_residual(
    pd: &PoissonData,
    grid: &LaplaceGrid,
    atoms: &[(f64, f64)],
    margin: usize,
    exec: &Exec,
) -> PoissonResidual {
    let n = pd.x.len();
    let u_tmax = *grid.one_minus_phi.last().unwrap_or(&1.0);
    let dmax = pd.d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lo = margin.min(n / 2);
    let hi = n.saturating_sub(margin).max(lo);
    let res = exec.map_indexed((hi - lo) as u64, |k| {
        let i = lo + k as usize;
        let x = pd.x[i];
        let ed: f64 = atoms.iter().map(|&(y, q)| q * d_at(pd, u_tmax, x + y)).sum();
        (ed - pd.d[i] - pd.g[i]).abs()
    });
    PoissonResidual {
        relative: res.iter().fold(0.0f64, |m, &v| m.max(v)) / dmax,
        points: res.len(),
    }
}

/// `(1 - phi(ts)) / (1 - phi(t))` at the grid point `t_index`, for each `s`;
/// `s` must be a power of `10^{1/ppd}` up to rounding, or it is interpolated.
pub fn regular_variation_ratios(grid: &LaplaceGrid, t_index: usize, s: &[f64]) -> Vec<f64> {
    let lt: Vec<f64> = grid.t.iter().map(|t| t.ln()).collect();
    let lu: Vec<f64> = grid.one_minus_phi.iter().map(|u| u.ln()).collect();
    let h = lt[1] - lt[0];
    s.iter()
        .map(|&sv| {
            let pos = t_index as f64 + sv.ln() / h;
            let k = (pos.floor() as usize).min(lt.len() - 2);
            let f = pos - k as f64;
            let target = (lu[k] * (1.0 - f) + lu[k + 1] * f).exp();
            target / grid.one_minus_phi[t_index]
        })
        .collect()
}

/// Largest value over the grid of `(1 - phi(t)) / (Gamma(1 - gamma) E[R^gamma] t^gamma)`;
/// the Laplace-transform bound holds when this is at most 1.
pub fn laplace_bound_ratio(grid: &LaplaceGrid, gamma_exp: f64, moment: f64) -> f64 {
    let c = gamma(1.0 - gamma_exp) * moment;
    grid.t
        .iter()
        .zip(&grid.one_minus_phi)
        .map(|(t, u)| u / (c * t.powf(gamma_exp)))
        .fold(0.0, f64::max)
}

/// Everything the renewal route produces for one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalRun {
    pub grid: LaplaceGrid,
    pub poisson: PoissonData,
    pub plateau: Plateau,
}

/// Draws and calibrates a pool, iterates to the fixed point and derives `D`, `G`.
pub fn renewal_run(
    spec: &ModelSpec,
    alpha: f64,
    pool_size: u64,
    seed: u64,
    calibration: Calibration,
    opts: &FixpointOptions,
) -> Result<(RenewalRun, LaplacePool)> {
    let mut pool = LaplacePool::draw(spec, pool_size, seed, &opts.exec);
    pool.calibrate(alpha, calibration)?;
    let grid = iterate_phi(&pool, Some(alpha), opts)?;
    let poisson = derive_poisson(&grid, &pool, &opts.exec)?;
    let plateau = plateau(&poisson);
    Ok((RenewalRun { grid, poisson, plateau }, pool))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn det_half() -> ModelSpec {
        ModelSpec::new(
            "det",
            OffspringLaw::Fixed { n: 1 },
            WeightLaw::Deterministic { value: 0.5 },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn series_helpers() {
        for v in [1e-8f64, 1e-3, 0.04, 0.3] {
            let direct = (-v).ln_1p() + v;
            assert!((log1p_plus(v) - direct).abs() <= 1e-12 * direct.abs().max(1e-300) + 1e-18);
        }
        for z in [-0.3f64, -1e-4, 1e-6, 0.04] {
            let direct = z.exp_m1() - z;
            assert!((expm1_minus(z) - direct).abs() <= 1e-10 * direct.abs() + 1e-20);
        }
    }

    #[test]
    fn deterministic_fixed_point() {
        let exec = Exec::with_workers(1);
        let pool = LaplacePool::draw(&det_half(), 10, 0, &exec);
        let opts = FixpointOptions {
            grid: GridSpec {
                t_min: 1e-8,
                t_max: 1e2,
                ppd: 1000,
            },
            tol: 1e-13,
            max_iter: 200,
            lower_tail: LowerTail::Slope(1.0),
            exec,
        };
        let grid = iterate_phi(&pool, None, &opts).unwrap();
        let err = grid
            .t
            .iter()
            .zip(&grid.phi)
            .map(|(t, p)| (p - (-2.0 * t).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "sup error {err}");
        assert!((grid.phi[0] - 1.0).abs() < 1e-7);
        assert_eq!(grid.invariant_violations, 0);
    }

    #[test]
    fn critical_calibration_is_exact() {
        let spec = make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 }).unwrap();
        let exec = Exec::with_workers(1);
        let mut pool = LaplacePool::draw(&spec, 20_000, 1, &exec);
        pool.calibrate(0.5, Calibration::Critical).unwrap();
        let (p, d, _) = pool.log_mellin_derivs(0.5);
        assert!(p.abs() < 1e-10, "{p}");
        assert!(d.abs() < 1e-10, "{d}");
        assert!((pool.calibration.1 - 1.0).abs() < 0.05);
    }
}
