//! Tail estimation from positive samples: Hill plots, survival-function
//! regression with an optional `log log t` term, the constant
//! `lim t^alpha P[X > t]`, and its extrapolation over a ladder of weight
//! floors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mellin::Estimate;
use crate::rng::{stream, Domain};

/// Geometric grid density used inside tail windows.
pub const GRID_PER_DECADE: usize = 10;
/// Points above the window start required by the regression.
pub const MIN_POINTS_ABOVE: usize = 100;
/// Samples required for a Hill plot.
pub const MIN_HILL_SAMPLES: usize = 1000;
/// Censored fraction beyond which a report is flagged.
pub const UNRELIABLE_CENSORED: f64 = 0.01;

/// Closed interval `[lo, hi]` of thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "window must satisfy 0 < lo < hi < inf, got [{lo}, {hi}]"
            )));
        }
        Ok(Window { lo, hi })
    }

    pub fn decades(&self) -> f64 {
        (self.hi / self.lo).log10()
    }

    pub fn scaled(&self, c: f64) -> Window {
        Window {
            lo: self.lo * c,
            hi: self.hi * c,
        }
    }

    /// `lo * (hi/lo)^(i/m)` for `i = 0..=m`, about `GRID_PER_DECADE` points
    /// per decade.
    pub fn grid(&self) -> Vec<f64> {
        let m = ((self.decades() * GRID_PER_DECADE as f64).round() as usize).max(1);
        let ratio = self.hi / self.lo;
        (0..=m)
            .map(|i| {
                if i == m {
                    self.hi
                } else {
                    self.lo * ratio.powf(i as f64 / m as f64)
                }
            })
            .collect()
    }
}

impl Default for Window {
    fn default() -> Self {
        Window { lo: 1e2, hi: 1e4 }
    }
}

/// Samples sorted ascending, with the empirical survival function.
#[derive(Debug, Clone)]
pub struct SortedSample {
    sorted: Vec<f64>,
}

impl SortedSample {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if let Some(x) = samples.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::DegenerateSample(format!(
                "samples must be finite and non-negative, found {x}"
            )));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(SortedSample { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.sorted.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.sorted.last().copied().unwrap_or(f64::NAN)
    }

    /// Number of samples strictly above `t`.
    pub fn exceed(&self, t: f64) -> usize {
        self.sorted.len() - self.sorted.partition_point(|&x| x <= t)
    }

    pub fn survival(&self, t: f64) -> f64 {
        self.exceed(t) as f64 / self.sorted.len() as f64
    }

    /// `k`-th largest value, `k >= 1`.
    pub fn order_desc(&self, k: usize) -> f64 {
        self.sorted[self.sorted.len() - k]
    }

    pub fn hill_plot(&self, k_grid: &[usize]) -> Result<Vec<(usize, f64)>> {
        let n = self.sorted.len();
        let positive = n - self.sorted.partition_point(|&x| x <= 0.0);
        if positive < MIN_HILL_SAMPLES {
            return Err(Error::InsufficientSamples {
                needed: MIN_HILL_SAMPLES,
                got: positive,
            });
        }
        k_grid
            .iter()
            .map(|&k| {
                if k == 0 || k >= positive {
                    return Err(Error::InvalidArgument(format!(
                        "Hill order k = {k} must lie in [1, {positive})"
                    )));
                }
                let base = self.order_desc(k + 1);
                let denom: f64 = (1..=k).map(|i| (self.order_desc(i) / base).ln()).sum();
                if denom <= 0.0 {
                    return Err(Error::DegenerateSample(format!(
                        "top {} order statistics are tied",
                        k + 1
                    )));
                }
                Ok((k, k as f64 / denom))
            })
            .collect()
    }

    fn check_window(&self, window: &Window) -> Result<()> {
        let empty = |reason: String| Error::WindowEmpty {
            lo: window.lo,
            hi: window.hi,
            reason,
        };
        if self.is_empty() || window.lo < self.min() {
            return Err(empty(format!("window starts below the sample minimum {}", self.min())));
        }
        if self.exceed(window.hi) == 0 {
            return Err(empty("no sample exceeds the window end".into()));
        }
        Ok(())
    }

    pub fn fit_tail(&self, window: &Window, with_log: bool) -> Result<TailFit> {
        self.check_window(window)?;
        let above = self.exceed(window.lo);
        if above < MIN_POINTS_ABOVE {
            return Err(Error::WindowEmpty {
                lo: window.lo,
                hi: window.hi,
                reason: format!("{above} points above the window start, need {MIN_POINTS_ABOVE}"),
            });
        }
        if with_log && (window.decades() < 2.0 - 1e-9 || window.lo <= 1.0) {
            return Err(Error::WindowEmpty {
                lo: window.lo,
                hi: window.hi,
                reason: "the log log t term needs lo > 1 and a span of at least two decades".into(),
            });
        }
        let grid = window.grid();
        let s: Vec<f64> = grid.iter().map(|&t| self.survival(t)).collect();
        fit_log_survival(&grid, &s, self.len() as f64, with_log, *window)
    }

    pub fn estimate_c_plus(&self, alpha: f64, window: &Window) -> Result<Estimate> {
        check_alpha(alpha)?;
        self.check_window(window)?;
        let grid = window.grid();
        let s: Vec<f64> = grid.iter().map(|&t| self.survival(t)).collect();
        Ok(scaled_average(&grid, &s, self.len() as f64, alpha))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")))
    }
}

/// Mean of `t^alpha S(t)` over the grid; error is the largest per-point
/// binomial error since the points share samples.
fn scaled_average(grid: &[f64], s: &[f64], n: f64, alpha: f64) -> Estimate {
    let mut sum = 0.0;
    let mut err: f64 = 0.0;
    for (&t, &p) in grid.iter().zip(s) {
        let w = t.powf(alpha);
        sum += w * p;
        err = err.max(w * (p * (1.0 - p) / n).sqrt());
    }
    Estimate {
        value: sum / grid.len() as f64,
        stderr: err,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub alpha_hat: f64,
    pub stderr: f64,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogExponent {
    pub theta_hat: f64,
    pub stderr: f64,
}

/// Least-squares fit of `log S(t)` on `{1, log t}` and optionally
/// `log log t`. Errors propagate the multinomial covariance of the
/// empirical survival function through the normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope_fit: SlopeFit,
    pub log_exponent: Option<LogExponent>,
    /// Ratio of extreme singular values of the design matrix.
    pub condition_number: f64,
    pub grid_points: usize,
}

fn fit_log_survival(grid: &[f64], s: &[f64], n: f64, with_log: bool, window: Window) -> Result<TailFit> {
    let m = grid.len();
    let p = if with_log { 3 } else { 2 };
    let x = DMatrix::from_fn(m, p, |i, j| match j {
        0 => 1.0,
        1 => grid[i].ln(),
        _ => grid[i].ln().ln(),
    });
    let y = DVector::from_iterator(m, s.iter().map(|v| v.ln()));
    // Cov(log S_i, log S_j) = (1 - S_a) / (n S_a), a the smaller threshold.
    let cov = DMatrix::from_fn(m, m, |i, j| {
        let a = s[i.min(j)];
        (1.0 - a) / (n * a)
    });
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let condition_number = sv.max() / sv.min();
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::DegenerateSample("singular tail design matrix".into()))?;
    let beta = svd
        .solve(&y, 1e-14)
        .map_err(|e| Error::DegenerateSample(e.to_string()))?;
    let sandwich = &xtx_inv * x.transpose() * cov * &x * &xtx_inv;
    Ok(TailFit {
        slope_fit: SlopeFit {
            alpha_hat: -beta[1],
            stderr: sandwich[(1, 1)].sqrt(),
            window,
        },
        log_exponent: with_log.then(|| LogExponent {
            theta_hat: beta[2],
            stderr: sandwich[(2, 2)].sqrt(),
        }),
        condition_number,
        grid_points: m,
    })
}

pub fn hill_plot(samples: &[f64], k_grid: &[usize]) -> Result<Vec<(usize, f64)>> {
    SortedSample::new(samples)?.hill_plot(k_grid)
}

pub fn fit_tail(samples: &[f64], window: &Window, with_log: bool) -> Result<TailFit> {
    SortedSample::new(samples)?.fit_tail(window, with_log)
}

pub fn estimate_c_plus(samples: &[f64], alpha: f64, window: &Window) -> Result<Estimate> {
    SortedSample::new(samples)?.estimate_c_plus(alpha, window)
}

/// About five orders per decade from 10 up to `n / 10`.
pub fn default_k_grid(n: usize) -> Vec<usize> {
    let top = (n / 10).max(10);
    let mut out: Vec<usize> = (0..)
        .map(|i| (10.0 * 10f64.powf(i as f64 / 5.0)).round() as usize)
        .take_while(|&k| k <= top)
        .collect();
    out.dedup();
    out
}

/// Stretch of the Hill plot where the estimate is flattest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillPlateau {
    pub k_lo: usize,
    pub k_hi: usize,
    pub alpha_hat: f64,
    /// `(max - min) / mean` over the run.
    pub spread: f64,
    /// Threshold window spanned by the order statistics of the run.
    pub window: Window,
}

/// Picks `run` consecutive entries of `hill` (with `k >= k_min`) with the
/// smallest relative spread.
pub fn hill_plateau(sample: &SortedSample, hill: &[(usize, f64)], run: usize, k_min: usize) -> Result<HillPlateau> {
    let usable: Vec<(usize, f64)> = hill.iter().copied().filter(|&(k, _)| k >= k_min).collect();
    if run < 2 || usable.len() < run {
        return Err(Error::InvalidArgument(format!(
            "need {run} Hill points with k >= {k_min}, have {}",
            usable.len()
        )));
    }
    let mut best: Option<HillPlateau> = None;
    for w in usable.windows(run) {
        let lo = w.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = w.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let mean = w.iter().map(|p| p.1).sum::<f64>() / run as f64;
        let spread = (hi - lo) / mean;
        if best.map_or(true, |b| spread < b.spread) {
            let (k_lo, k_hi) = (w[0].0, w[run - 1].0);
            best = Some(HillPlateau {
                k_lo,
                k_hi,
                alpha_hat: mean,
                spread,
                window: Window::new(sample.order_desc(k_hi + 1), sample.order_desc(k_lo + 1))?,
            });
        }
    }
    Ok(best.expect("at least one run"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailOptions {
    pub window: Window,
    pub with_log: bool,
    /// Exponent for the constant estimate; skipped when absent.
    pub alpha: Option<f64>,
    /// Hill orders; the default grid is used when empty.
    #[serde(default)]
    pub k_grid: Vec<usize>,
}

impl Default for TailOptions {
    fn default() -> Self {
        TailOptions {
            window: Window::default(),
            with_log: true,
            alpha: None,
            k_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub hill: Vec<(usize, f64)>,
    pub slope_fit: SlopeFit,
    pub log_exponent: Option<LogExponent>,
    pub condition_number: f64,
    #[serde(rename = "C_plus_hat")]
    pub c_plus_hat: Option<Estimate>,
    pub n_samples: usize,
    pub censored_fraction: f64,
    pub unreliable: bool,
}

/// Full report on uncensored `samples`; `censored` counts the excluded ones.
pub fn tail_report(samples: &[f64], censored: usize, opts: &TailOptions) -> Result<TailReport> {
    let sample = SortedSample::new(samples)?;
    let k_grid = if opts.k_grid.is_empty() {
        default_k_grid(sample.len())
    } else {
        opts.k_grid.clone()
    };
    let hill = sample.hill_plot(&k_grid)?;
    let fit = sample.fit_tail(&opts.window, opts.with_log)?;
    let c_plus_hat = opts
        .alpha
        .map(|a| sample.estimate_c_plus(a, &opts.window))
        .transpose()?;
    let total = sample.len() + censored;
    let censored_fraction = if total == 0 {
        0.0
    } else {
        censored as f64 / total as f64
    };
    Ok(TailReport {
        hill,
        slope_fit: fit.slope_fit,
        log_exponent: fit.log_exponent,
        condition_number: fit.condition_number,
        c_plus_hat,
        n_samples: sample.len(),
        censored_fraction,
        unreliable: censored_fraction > UNRELIABLE_CENSORED,
    })
}

/// Exceedance histograms of several coupled sample columns over a fixed
/// threshold grid, kept per block so that large runs need no sample storage
/// and errors can be jackknifed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceTable {
    pub grid: Vec<f64>,
    pub columns: usize,
    pub blocks: usize,
    /// `[block][column][j]`: samples with exactly `j` grid points below them.
    hist: Vec<u64>,
    totals: Vec<u64>,
    censored: Vec<u64>,
}

impl ExceedanceTable {
    pub fn new(grid: Vec<f64>, columns: usize, blocks: usize) -> Result<Self> {
        if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("grid must be non-empty and increasing".into()));
        }
        if columns == 0 || blocks == 0 {
            return Err(Error::InvalidArgument("columns and blocks must be positive".into()));
        }
        let width = grid.len() + 1;
        Ok(ExceedanceTable {
            hist: vec![0; blocks * columns * width],
            totals: vec![0; blocks],
            censored: vec![0; blocks],
            grid,
            columns,
            blocks,
        })
    }

    /// Block of sample `index` among `total` when blocks are contiguous.
    pub fn block_of(&self, index: u64, total: u64) -> usize {
        ((index as u128 * self.blocks as u128) / total.max(1) as u128) as usize
    }

    fn slot(&self, block: usize, column: usize) -> usize {
        (block * self.columns + column) * (self.grid.len() + 1)
    }

    pub fn record(&mut self, block: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns);
        for (c, &x) in values.iter().enumerate() {
            let j = self.grid.partition_point(|&t| t < x);
            let s = self.slot(block, c);
            self.hist[s + j] += 1;
        }
        self.totals[block] += 1;
    }

    pub fn record_censored(&mut self, block: usize) {
        self.censored[block] += 1;
    }

    pub fn merge(mut self, other: &ExceedanceTable) -> Self {
        debug_assert_eq!(self.hist.len(), other.hist.len());
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        for (a, b) in self.censored.iter_mut().zip(&other.censored) {
            *a += b;
        }
        self
    }

    pub fn samples(&self) -> u64 {
        self.totals.iter().sum()
    }

    pub fn censored_fraction(&self) -> f64 {
        let c: u64 = self.censored.iter().sum();
        let total = c + self.samples();
        if total == 0 {
            0.0
        } else {
            c as f64 / total as f64
        }
    }

    /// Empirical survival of `column` at every grid point, optionally
    /// leaving one block out.
    pub fn survival(&self, column: usize, skip: Option<usize>) -> (Vec<f64>, f64) {
        let g = self.grid.len();
        let mut hist = vec![0u64; g + 1];
        let mut n = 0u64;
        for b in (0..self.blocks).filter(|&b| Some(b) != skip) {
            let s = self.slot(b, column);
            for (h, &c) in hist.iter_mut().zip(&self.hist[s..=s + g]) {
                *h += c;
            }
            n += self.totals[b];
        }
        let nf = n.max(1) as f64;
        let mut above = 0u64;
        let mut out = vec![0.0; g];
        for i in (0..g).rev() {
            above += hist[i + 1];
            out[i] = above as f64 / nf;
        }
        (out, n as f64)
    }

    pub fn c_plus(&self, column: usize, alpha: f64) -> Estimate {
        let (s, n) = self.survival(column, None);
        scaled_average(&self.grid, &s, n, alpha)
    }

    /// `sup_t t^alpha S(t)` over the grid with the binomial error at the
    /// maximiser.
    pub fn sup_scaled(&self, column: usize, alpha: f64) -> Estimate {
        let (s, n) = self.survival(column, None);
        self.grid
            .iter()
            .zip(&s)
            .map(|(&t, &p)| {
                let w = t.powf(alpha);
                Estimate {
                    value: w * p,
                    stderr: w * (p * (1.0 - p) / n).sqrt(),
                }
            })
            .fold(Estimate::exact(f64::NEG_INFINITY), |a, b| {
                if b.value > a.value {
                    b
                } else {
                    a
                }
            })
    }
}

/// Weight-floor extrapolation of the tail constant. With floor `eps` and
/// `L = ln(1/eps)` the truncated constant behaves like
/// `C - b ln(L) / L`; `C` is the intercept of a least-squares fit across
/// the ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorExtrapolation {
    pub floors: Vec<f64>,
    pub per_floor: Vec<Estimate>,
    pub c_plus: Estimate,
    pub slope: f64,
    /// Largest absolute fit residual across the ladder.
    pub max_residual: f64,
}

fn floor_fit(floors: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let x: Vec<f64> = floors
        .iter()
        .map(|f| {
            let l = -f.ln();
            l.ln() / l
        })
        .collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let c = my - slope * mx;
    let resid = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - c - slope * a).abs())
        .fold(0.0, f64::max);
    (c, -slope, resid)
}

/// Extrapolates the columns of `table` (one per floor in `floors`) to a
/// vanishing floor; the error is a leave-one-block-out jackknife.
pub fn extrapolate_floors(table: &ExceedanceTable, floors: &[f64], alpha: f64) -> Result<FloorExtrapolation> {
    check_alpha(alpha)?;
    if floors.len() != table.columns || floors.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need one table column per floor and at least two floors, got {} floors for {} columns",
            floors.len(),
            table.columns
        )));
    }
    if let Some(f) = floors.iter().find(|&&f| !(f > 0.0 && f < (-1.0f64).exp())) {
        return Err(Error::InvalidArgument(format!("floor {f} must lie in (0, 1/e)")));
    }
    if table.blocks < 2 {
        return Err(Error::InvalidArgument("jackknife needs at least two blocks".into()));
    }
    let per_floor: Vec<Estimate> = (0..floors.len()).map(|c| table.c_plus(c, alpha)).collect();
    let y: Vec<f64> = per_floor.iter().map(|e| e.value).collect();
    let (c, slope, max_residual) = floor_fit(floors, &y);
    let mut reps = Vec::with_capacity(table.blocks);
    for b in 0..table.blocks {
        let yb: Vec<f64> = (0..floors.len())
            .map(|col| {
                let (s, n) = table.survival(col, Some(b));
                scaled_average(&table.grid, &s, n, alpha).value
            })
            .collect();
        reps.push(floor_fit(floors, &yb).0);
    }
    let k = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / k;
    let var = (k - 1.0) / k * reps.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>();
    Ok(FloorExtrapolation {
        floors: floors.to_vec(),
        per_floor,
        c_plus: Estimate {
            value: c,
            stderr: var.sqrt(),
        },
        slope,
        max_residual,
    })
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// `n` draws with survival `(t/scale)^(-alpha)` for `t >= scale`.
pub fn pareto_samples(alpha: f64, scale: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let mut rng = stream(seed, Domain::Synthetic, 0);
    Ok((0..n).map(|_| scale * open_unit(&mut rng).powf(-1.0 / alpha)).collect())
}

/// Log-corrected power law with survival
/// `S(t) = (t/t0)^(-alpha) (ln t / ln t0)^theta` for `t >= t0 = exp(theta/alpha)`,
/// the smallest start at which `S` is non-increasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPareto {
    pub alpha: f64,
    pub theta: f64,
}

impl LogPareto {
    pub fn new(alpha: f64, theta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidArgument(format!("theta must be positive, got {theta}")));
        }
        Ok(LogPareto { alpha, theta })
    }

    fn y0(&self) -> f64 {
        self.theta / self.alpha
    }

    pub fn t0(&self) -> f64 {
        self.y0().exp()
    }

    pub fn survival(&self, t: f64) -> f64 {
        let y = t.ln();
        let y0 = self.y0();
        if y <= y0 {
            return 1.0;
        }
        (-self.alpha * (y - y0) + self.theta * (y / y0).ln()).exp()
    }

    /// The `t` with `S(t) = u`, by Newton on `ln t` from the right, where
    /// `-ln S` is convex and increasing.
    pub fn inverse(&self, u: f64) -> f64 {
        let v = -u.ln();
        let y0 = self.y0();
        if v <= 0.0 {
            return self.t0();
        }
        let h = |y: f64| self.alpha * (y - y0) - self.theta * (y / y0).ln();
        let mut y = y0 + v / self.alpha + 1.0;
        while h(y) < v {
            y = y0 + 2.0 * (y - y0);
        }
        for _ in 0..100 {
            let step = (h(y) - v) / (self.alpha - self.theta / y);
            y -= step;
            if step.abs() <= 1e-15 * y {
                break;
            }
        }
        y.exp()
    }

    pub fn samples(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, Domain::Synthetic, 1);
        (0..n).map(|_| self.inverse(open_unit(&mut rng))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spans_window() {
        let g = Window::default().grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 1e2);
        assert_eq!(g[20], 1e4);
        assert!((g[10] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn hill_on_pareto_and_constants() {
        let x = pareto_samples(0.5, 1.0, 1_000_000, 3).unwrap();
        let h = hill_plot(&x, &[10_000]).unwrap();
        assert!((h[0].1 - 0.5).abs() < 0.015, "{h:?}");
        let c = vec![2.0; 2000];
        assert!(matches!(hill_plot(&c, &[100]), Err(Error::DegenerateSample(_))));
        assert!(matches!(
            hill_plot(&c[..10], &[5]),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn hill_on_exponential_is_large() {
        let mut rng = stream(5, Domain::Synthetic, 9);
        let x: Vec<f64> = (0..1_000_000).map(|_| -open_unit(&mut rng).ln()).collect();
        let h = hill_plot(&x, &[1000]).unwrap();
        assert!(h[0].1 > 3.0, "{h:?}");
    }

    #[test]
    fn log_pareto_inverse_round_trips() {
        let lp = LogPareto::new(0.5, 1.0).unwrap();
        assert!((lp.t0() - std::f64::consts::E.powi(2)).abs() < 1e-12);
        for &u in &[0.9, 0.3, 1e-3, 1e-6, 1e-9] {
            let t = lp.inverse(u);
            assert!((lp.survival(t) / u - 1.0).abs() < 1e-12, "u {u} t {t}");
        }
        assert_eq!(lp.inverse(1.0), lp.t0());
    }

    #[test]
    fn exceedance_table_matches_sorted_sample() {
        let x = pareto_samples(0.5, 1.0, 10_000, 1).unwrap();
        let w = Window::default();
        let mut table = ExceedanceTable::new(w.grid(), 1, 4).unwrap();
        for (i, &v) in x.iter().enumerate() {
            let b = table.block_of(i as u64, x.len() as u64);
            table.record(b, &[v]);
        }
        let direct = estimate_c_plus(&x, 0.5, &w).unwrap();
        let counted = table.c_plus(0, 0.5);
        assert!((direct.value - counted.value).abs() < 1e-12);
        assert!((direct.stderr - counted.stderr).abs() < 1e-12);
    }

    #[test]
    fn floor_fit_recovers_synthetic_law() {
        let floors = [1e-3, 1e-4, 1e-5, 1e-6];
        let y: Vec<f64> = floors
            .iter()
            .map(|f: &f64| {
                let l = -f.ln();
                0.8 - 1.5 * l.ln() / l
            })
            .collect();
        let (c, b, r) = floor_fit(&floors, &y);
        assert!((c - 0.8).abs() < 1e-12 && (b - 1.5).abs() < 1e-12 && r < 1e-12);
    }
}
