//! Branch-vector laws `(N, B, A_1, ..., A_N)` and the analytically tractable
//! model families used throughout the laboratory.
//!
//! The weights `A_i` are i.i.d. given `N` and independent of `B`; under that
//! coupling the Mellin function factorizes as `m(s) = E[N] * E[A^s]`, which
//! is what every closed form below relies on.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

/// Law of a single weight `A_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum WeightLaw {
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    FiniteSupport {
        points: Vec<f64>,
        probs: Vec<f64>,
    },
    Deterministic {
        value: f64,
    },
    /// `A = U^exponent` with `U` uniform on `(0, 1]`.
    Uniform01Power {
        exponent: f64,
    },
}

/// Law of the number of children `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum OffspringLaw {
    Fixed {
        n: u32,
    },
    FiniteSupport {
        values: Vec<u32>,
        probs: Vec<f64>,
    },
    /// Geometric on `{1, 2, ...}`: `P[N = k] = p (1 - p)^(k - 1)`.
    Geometric {
        p: f64,
    },
}

/// Law of the inhomogeneous term `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum InhomLaw {
    Constant {
        b: f64,
    },
    Exponential {
        rate: f64,
    },
    FiniteSupport {
        points: Vec<f64>,
        probs: Vec<f64>,
    },
    /// `P[B > x] = (scale / x)^tail_index` for `x >= scale`.
    Pareto {
        scale: f64,
        tail_index: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coupling {
    #[default]
    IIDGivenN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub label: String,
    #[serde(with = "flat_tag")]
    pub offspring: OffspringLaw,
    #[serde(with = "flat_tag")]
    pub weight: WeightLaw,
    #[serde(with = "flat_tag")]
    pub inhom: InhomLaw,
    #[serde(default)]
    pub coupling: Coupling,
}

/// One draw of `(N, B, A_1, ..., A_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSample {
    pub n: u32,
    pub b: f64,
    pub a: Vec<f64>,
}

fn check_simplex(pointer: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::invalid(pointer, "probability vector is empty"));
    }
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
        return Err(Error::invalid(
            format!("{pointer}/{i}"),
            format!("probability {p} is negative or not finite"),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(
            pointer,
            format!("probabilities sum to {total}, expected 1 within {SIMPLEX_TOL:e}"),
        ));
    }
    Ok(())
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Uniform on `(0, 1]`, safe to take logarithms of.
#[inline]
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

impl WeightLaw {
    pub fn validate(&self, pointer: &str) -> Result<()> {
        match self {
            WeightLaw::Lognormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::invalid(format!("{pointer}/mu"), "must be finite"));
                }
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::invalid(
                        format!("{pointer}/sigma"),
                        format!("sigma must be > 0, got {sigma}"),
                    ));
                }
            }
            WeightLaw::FiniteSupport { points, probs } => {
                if points.len() != probs.len() {
                    return Err(Error::invalid(
                        format!("{pointer}/probs"),
                        "points and probs differ in length",
                    ));
                }
                if let Some((i, x)) = points.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
                    return Err(Error::invalid(
                        format!("{pointer}/points/{i}"),
                        format!("weight must be strictly positive, got {x}"),
                    ));
                }
                check_simplex(&format!("{pointer}/probs"), probs)?;
            }
            WeightLaw::Deterministic { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(Error::invalid(
                        format!("{pointer}/value"),
                        format!("weight must be strictly positive, got {value}"),
                    ));
                }
            }
            WeightLaw::Uniform01Power { exponent } => {
                if !(exponent.is_finite() && *exponent > 0.0) {
                    return Err(Error::invalid(
                        format!("{pointer}/exponent"),
                        format!("exponent must be > 0, got {exponent}"),
                    ));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WeightLaw::Lognormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            WeightLaw::FiniteSupport { points, probs } => points[sample_index(rng, probs)],
            WeightLaw::Deterministic { value } => *value,
            WeightLaw::Uniform01Power { exponent } => open_unit(rng).powf(*exponent),
        }
    }

    /// `E[A^s (log A)^order]` for `order` in `0..=2`; `+inf` when the moment
    /// diverges.
    pub fn log_moment(&self, s: f64, order: u8) -> f64 {
        match self {
            WeightLaw::Lognormal { mu, sigma } => {
                let var = sigma * sigma;
                let m = (mu * s + 0.5 * var * s * s).exp();
                let drift = mu + var * s;
                match order {
                    0 => m,
                    1 => drift * m,
                    _ => (drift * drift + var) * m,
                }
            }
            WeightLaw::FiniteSupport { points, probs } => points
                .iter()
                .zip(probs)
                .map(|(x, p)| p * x.powf(s) * x.ln().powi(order as i32))
                .sum(),
            WeightLaw::Deterministic { value } => value.powf(s) * value.ln().powi(order as i32),
            WeightLaw::Uniform01Power { exponent } => {
                let d = 1.0 + exponent * s;
                if d <= 0.0 {
                    return f64::INFINITY;
                }
                match order {
                    0 => 1.0 / d,
                    1 => -exponent / (d * d),
                    _ => 2.0 * exponent * exponent / (d * d * d),
                }
            }
        }
    }

    /// Whether the subgroup generated by the support of `log A` is all of R.
    /// For finite supports this is a heuristic: every pairwise ratio of
    /// non-zero log-points being rational with denominator at most 10^6
    /// marks the law as arithmetic-suspect.
    pub fn nonarithmetic(&self) -> bool {
        match self {
            WeightLaw::Lognormal { .. } | WeightLaw::Uniform01Power { .. } => true,
            WeightLaw::Deterministic { .. } => false,
            WeightLaw::FiniteSupport { points, probs } => {
                let logs: Vec<f64> = points
                    .iter()
                    .zip(probs)
                    .filter(|(x, p)| **p > 0.0 && x.ln() != 0.0)
                    .map(|(x, _)| x.ln())
                    .collect();
                if logs.len() < 2 {
                    return false;
                }
                let base = logs[0];
                !logs[1..].iter().all(|l| is_small_rational(l / base, 1_000_000))
            }
        }
    }
}

/// Continued-fraction test: is `r` within rounding of `p/q` with `q <= max_den`?
pub fn is_small_rational(r: f64, max_den: u64) -> bool {
    if !r.is_finite() {
        return false;
    }
    let tol = 1e-13 * r.abs().max(1.0);
    let (mut h0, mut h1) = (0.0f64, 1.0f64);
    let (mut k0, mut k1) = (1.0f64, 0.0f64);
    let mut x = r;
    for _ in 0..64 {
        let a = x.floor();
        let h2 = a * h1 + h0;
        let k2 = a * k1 + k0;
        if k2 > max_den as f64 {
            return false;
        }
        if (r - h2 / k2).abs() <= tol {
            return true;
        }
        let frac = x - a;
        if frac.abs() < 1e-15 {
            return (r - h2 / k2).abs() <= tol;
        }
        x = 1.0 / frac;
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
    }
    false
}

impl OffspringLaw {
    pub fn validate(&self, pointer: &str) -> Result<()> {
        match self {
            OffspringLaw::Fixed { n } => {
                if *n == 0 {
                    return Err(Error::invalid(
                        format!("{pointer}/n"),
                        "fixed offspring count must be positive",
                    ));
                }
            }
            OffspringLaw::FiniteSupport { values, probs } => {
                if values.len() != probs.len() {
                    return Err(Error::invalid(
                        format!("{pointer}/probs"),
                        "values and probs differ in length",
                    ));
                }
                check_simplex(&format!("{pointer}/probs"), probs)?;
            }
            OffspringLaw::Geometric { p } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::invalid(
                        format!("{pointer}/p"),
                        format!("p must lie in (0, 1), got {p}"),
                    ));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            OffspringLaw::Fixed { n } => *n,
            OffspringLaw::FiniteSupport { values, probs } => values[sample_index(rng, probs)],
            OffspringLaw::Geometric { p } => {
                let k = (open_unit(rng).ln() / (1.0 - p).ln()).floor();
                1 + k.min(u32::MAX as f64 - 1.0) as u32
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1.0)
    }

    /// `E[N^q]`.
    pub fn moment(&self, q: f64) -> f64 {
        match self {
            OffspringLaw::Fixed { n } => (*n as f64).powf(q),
            OffspringLaw::FiniteSupport { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| if *v == 0 { 0.0 } else { p * (*v as f64).powf(q) })
                .sum(),
            OffspringLaw::Geometric { p } => {
                if q == 1.0 {
                    return 1.0 / p;
                }
                let r = 1.0 - p;
                let mut total = 0.0;
                let mut w = *p;
                let mut k = 1.0f64;
                loop {
                    let term = w * k.powf(q);
                    total += term;
                    if term < 1e-17 * total && k > 10.0 {
                        break;
                    }
                    w *= r;
                    k += 1.0;
                    if k > 1e7 {
                        break;
                    }
                }
                total
            }
        }
    }

    pub fn max_value(&self) -> Option<u32> {
        match self {
            OffspringLaw::Fixed { n } => Some(*n),
            OffspringLaw::FiniteSupport { values, .. } => values.iter().copied().max(),
            OffspringLaw::Geometric { .. } => None,
        }
    }
}

impl InhomLaw {
    pub fn validate(&self, pointer: &str) -> Result<()> {
        match self {
            InhomLaw::Constant { b } => {
                if !(b.is_finite() && *b >= 0.0) {
                    return Err(Error::invalid(
                        format!("{pointer}/b"),
                        format!("b must be non-negative, got {b}"),
                    ));
                }
            }
            InhomLaw::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::invalid(
                        format!("{pointer}/rate"),
                        format!("rate must be > 0, got {rate}"),
                    ));
                }
            }
            InhomLaw::FiniteSupport { points, probs } => {
                if points.len() != probs.len() {
                    return Err(Error::invalid(
                        format!("{pointer}/probs"),
                        "points and probs differ in length",
                    ));
                }
                if let Some((i, x)) = points.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
                    return Err(Error::invalid(
                        format!("{pointer}/points/{i}"),
                        format!("b must be non-negative, got {x}"),
                    ));
                }
                check_simplex(&format!("{pointer}/probs"), probs)?;
            }
            InhomLaw::Pareto { scale, tail_index } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::invalid(format!("{pointer}/scale"), "scale must be > 0"));
                }
                if !(tail_index.is_finite() && *tail_index > 0.0) {
                    return Err(Error::invalid(
                        format!("{pointer}/tail_index"),
                        "tail_index must be > 0",
                    ));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InhomLaw::Constant { b } => *b,
            InhomLaw::Exponential { rate } => -open_unit(rng).ln() / rate,
            InhomLaw::FiniteSupport { points, probs } => points[sample_index(rng, probs)],
            InhomLaw::Pareto { scale, tail_index } => scale * open_unit(rng).powf(-1.0 / tail_index),
        }
    }

    /// True when `P[B > 0] = 0`, i.e. the homogeneous equation.
    pub fn is_homogeneous(&self) -> bool {
        match self {
            InhomLaw::Constant { b } => *b == 0.0,
            InhomLaw::FiniteSupport { points, probs } => points.iter().zip(probs).all(|(x, p)| *x == 0.0 || *p == 0.0),
            _ => false,
        }
    }

    /// `E[B^q]` for `q > 0`; `+inf` when infinite.
    pub fn moment(&self, q: f64) -> f64 {
        match self {
            InhomLaw::Constant { b } => b.powf(q),
            InhomLaw::Exponential { rate } => statrs::function::gamma::gamma(1.0 + q) / rate.powf(q),
            InhomLaw::FiniteSupport { points, probs } => points.iter().zip(probs).map(|(x, p)| p * x.powf(q)).sum(),
            InhomLaw::Pareto { scale, tail_index } => {
                if q >= *tail_index {
                    f64::INFINITY
                } else {
                    tail_index * scale.powf(q) / (tail_index - q)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1.0)
    }
}

impl ModelSpec {
    pub fn new(label: impl Into<String>, offspring: OffspringLaw, weight: WeightLaw, inhom: InhomLaw) -> Result<Self> {
        let spec = ModelSpec {
            label: label.into(),
            offspring,
            weight,
            inhom,
            coupling: Coupling::IIDGivenN,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.offspring.validate("/offspring")?;
        self.weight.validate("/weight")?;
        self.inhom.validate("/inhom")?;
        Ok(())
    }

    /// Parses and validates a JSON model; errors carry a JSON pointer.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::invalid("/", e.to_string()))?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(mut value: serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::invalid("/", "model must be a JSON object"))?;
        for key in LAW_FIELDS {
            if let Some(law) = obj.get_mut(key) {
                let nested = flat_tag::nest(law.take())
                    .map_err(|(sub, reason)| Error::invalid(format!("/{key}{sub}"), reason))?;
                *law = nested;
            }
        }
        let raw: RawSpec = serde_path_to_error::deserialize(value)
            .map_err(|e| Error::invalid(path_to_pointer(&e.path().to_string()), e.inner().to_string()))?;
        let spec = ModelSpec {
            label: raw.label,
            offspring: raw.offspring,
            weight: raw.weight,
            inhom: raw.inhom,
            coupling: raw.coupling,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    #[inline]
    pub fn sample_branch<R: Rng + ?Sized>(&self, rng: &mut R) -> BranchSample {
        let mut a = Vec::new();
        let (n, b) = self.sample_into(rng, &mut a);
        BranchSample { n, b, a }
    }

    /// Allocation-free variant of [`sample_branch`](Self::sample_branch);
    /// the weights overwrite `a`. Draw order: `N`, then `B`, then `A_1..A_N`.
    #[inline]
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, a: &mut Vec<f64>) -> (u32, f64) {
        let n = self.offspring.sample(rng);
        let b = self.inhom.sample(rng);
        a.clear();
        a.extend((0..n).map(|_| self.weight.sample(rng)));
        (n, b)
    }

    pub fn mean_offspring(&self) -> f64 {
        self.offspring.mean()
    }

    pub fn nonarithmetic(&self) -> bool {
        self.weight.nonarithmetic()
    }
}

const LAW_FIELDS: [&str; 3] = ["offspring", "weight", "inhom"];

/// Mirror of [`ModelSpec`] with the laws in serde's nested enum form, so that
/// error paths reach the offending leaf field.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    label: String,
    offspring: OffspringLaw,
    weight: WeightLaw,
    inhom: InhomLaw,
    #[serde(default)]
    coupling: Coupling,
}

/// Laws are written flat, `{"family": "Lognormal", "mu": .., "sigma": ..}`,
/// and converted to and from serde's `{"Lognormal": {..}}` form.
mod flat_tag {
    use serde::de::{DeserializeOwned, Error as _};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::{Map, Value};

    pub fn nest(value: Value) -> Result<Value, (String, String)> {
        let Value::Object(mut obj) = value else {
            return Err((String::new(), "expected an object with a \"family\" field".into()));
        };
        let family = match obj.remove("family") {
            Some(Value::String(f)) => f,
            Some(_) => return Err(("/family".into(), "family must be a string".into())),
            None => return Err(("/family".into(), "missing field `family`".into())),
        };
        let mut outer = Map::new();
        outer.insert(family, Value::Object(obj));
        Ok(Value::Object(outer))
    }

    pub fn serialize<T: Serialize, S: Serializer>(law: &T, ser: S) -> Result<S::Ok, S::Error> {
        let nested = serde_json::to_value(law).map_err(serde::ser::Error::custom)?;
        let Value::Object(outer) = nested else {
            return Err(serde::ser::Error::custom("law must serialize as a map"));
        };
        let (family, fields) = outer
            .into_iter()
            .next()
            .ok_or_else(|| serde::ser::Error::custom("empty law"))?;
        let mut flat = Map::new();
        flat.insert("family".into(), Value::String(family));
        if let Value::Object(fields) = fields {
            flat.extend(fields);
        }
        Value::Object(flat).serialize(ser)
    }

    pub fn deserialize<'de, T: DeserializeOwned, D: Deserializer<'de>>(de: D) -> Result<T, D::Error> {
        let value = Value::deserialize(de)?;
        let nested = nest(value).map_err(|(_, reason)| D::Error::custom(reason))?;
        serde_json::from_value(nested).map_err(D::Error::custom)
    }
}

/// serde_path_to_error renders paths as `a.b[0]`; convert to `/a/b/0`,
/// dropping the enum-variant segment that follows a law field.
pub(crate) fn path_to_pointer(path: &str) -> String {
    if path == "." || path.is_empty() {
        return String::from("/");
    }
    let segments: Vec<&str> = path.split('.').collect();
    let mut keep = Vec::with_capacity(segments.len());
    let mut i = 0;
    while i < segments.len() {
        keep.push(segments[i]);
        if LAW_FIELDS.contains(&segments[i]) {
            i += 1;
        }
        i += 1;
    }
    let mut out = String::new();
    for seg in keep {
        let mut rest = seg;
        if let Some(br) = rest.find('[') {
            let (head, tail) = rest.split_at(br);
            if !head.is_empty() {
                out.push('/');
                out.push_str(head);
            }
            rest = tail;
            for idx in rest.split('[').filter(|s| !s.is_empty()) {
                out.push('/');
                out.push_str(idx.trim_end_matches(']'));
            }
        } else {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}

/// `m(s) = E[N] * E[A^s]` in closed form; `None` only for families without
/// one (every built-in weight family has one).
pub fn analytic_mellin(spec: &ModelSpec, s: f64) -> Option<f64> {
    analytic_mellin_derivative(spec, s, 0)
}

/// `d^order m / ds^order = E[N] * E[A^s (log A)^order]` for `order <= 2`.
pub fn analytic_mellin_derivative(spec: &ModelSpec, s: f64, order: u8) -> Option<f64> {
    if order > 2 {
        return None;
    }
    Some(spec.mean_offspring() * spec.weight.log_moment(s, order))
}

/// Lognormal weights with `N = n` fixed, tangent to 1 at `alpha`:
/// `sigma^2 = 2 ln n / alpha^2`, `mu = -sigma^2 alpha`.
pub fn make_critical_lognormal(alpha: f64, n: u32, inhom: InhomLaw) -> Result<ModelSpec> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n must be >= 2, got {n}")));
    }
    let var = 2.0 * (n as f64).ln() / (alpha * alpha);
    ModelSpec::new(
        format!("critical_lognormal(alpha={alpha},n={n})"),
        OffspringLaw::Fixed { n },
        WeightLaw::Lognormal {
            mu: -var * alpha,
            sigma: var.sqrt(),
        },
        inhom,
    )
}

/// Roots of `ln n + mu s + sigma^2 s^2 / 2 = 0`.
pub fn two_root_lognormal_roots(mu: f64, sigma: f64, n: u32) -> Result<(f64, f64)> {
    let var = sigma * sigma;
    let disc = mu * mu - 2.0 * var * (n as f64).ln();
    if !(disc > 0.0) {
        return Err(Error::NoTwoRoots { discriminant: disc });
    }
    let root = disc.sqrt();
    Ok(((-mu - root) / var, (-mu + root) / var))
}

pub fn make_two_root_lognormal(mu: f64, sigma: f64, n: u32, inhom: InhomLaw) -> Result<ModelSpec> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    two_root_lognormal_roots(mu, sigma, n)?;
    ModelSpec::new(
        format!("two_root_lognormal(mu={mu},sigma={sigma},n={n})"),
        OffspringLaw::Fixed { n },
        WeightLaw::Lognormal { mu, sigma },
        inhom,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use crate::stats::Moments;
    use std::f64::consts::LN_2;

    fn det_half() -> ModelSpec {
        ModelSpec::new(
            "det",
            OffspringLaw::Fixed { n: 2 },
            WeightLaw::Deterministic { value: 0.5 },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn degenerate_laws_sample_exactly() {
        let spec = det_half();
        let mut rng = stream(1, Domain::Branch, 0);
        for _ in 0..10 {
            let s = spec.sample_branch(&mut rng);
            assert_eq!(
                s,
                BranchSample {
                    n: 2,
                    b: 1.0,
                    a: vec![0.5, 0.5]
                }
            );
        }
    }

    #[test]
    fn zero_weight_rejected_with_pointer() {
        let err = ModelSpec::new(
            "bad",
            OffspringLaw::Fixed { n: 1 },
            WeightLaw::Deterministic { value: 0.0 },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap_err();
        match err {
            Error::InvalidModel { pointer, .. } => assert_eq!(pointer, "/weight/value"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn critical_lognormal_parameters() {
        let spec = make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 }).unwrap();
        let WeightLaw::Lognormal { mu, sigma } = spec.weight else {
            panic!()
        };
        assert!((sigma * sigma - 8.0 * LN_2).abs() < 1e-12);
        assert!((mu + 4.0 * LN_2).abs() < 1e-12);
        assert!((analytic_mellin(&spec, 0.5).unwrap() - 1.0).abs() <= 1e-12);
        assert!(analytic_mellin_derivative(&spec, 0.5, 1).unwrap().abs() <= 1e-12);
        assert!((analytic_mellin(&spec, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((analytic_mellin(&spec, 0.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(make_critical_lognormal(1.0, 2, InhomLaw::Constant { b: 1.0 }).is_err());
        assert!(make_critical_lognormal(0.5, 1, InhomLaw::Constant { b: 1.0 }).is_err());
    }

    #[test]
    fn critical_lognormal_log_mean_by_sampling() {
        // E[log A] = mu = -4 ln 2; 10^6 draws, 3 standard errors.
        let spec = make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 }).unwrap();
        let mut rng = stream(11, Domain::Branch, 0);
        let m: Moments = (0..1_000_000).map(|_| spec.weight.sample(&mut rng).ln()).collect();
        assert!(
            (m.mean + 4.0 * LN_2).abs() < 3.0 * m.stderr(),
            "{} vs {}",
            m.mean,
            m.stderr()
        );
    }

    #[test]
    fn two_root_constructor() {
        let (a, b) = two_root_lognormal_roots(-3.0, 2f64.sqrt(), 2).unwrap();
        assert!((a - 0.252_259).abs() < 1e-5, "{a}");
        assert!((b - 2.747_740).abs() < 1e-5, "{b}");
        let spec = make_two_root_lognormal(-3.0, 2f64.sqrt(), 2, InhomLaw::Constant { b: 1.0 }).unwrap();
        let m1 = analytic_mellin(&spec, 1.0).unwrap();
        assert!((m1 - 2.0 * (-2.0f64).exp()).abs() < 1e-12);
        match make_two_root_lognormal(0.0, 1.0, 2, InhomLaw::Constant { b: 1.0 }) {
            Err(Error::NoTwoRoots { discriminant }) => {
                assert!((discriminant + 2.0 * LN_2).abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_mellin() {
        let spec = det_half();
        assert_eq!(analytic_mellin(&spec, 1.0), Some(1.0));
        assert_eq!(analytic_mellin(&spec, 0.0), Some(2.0));
        let d = analytic_mellin_derivative(&spec, 1.0, 1).unwrap();
        assert!((d + LN_2).abs() < 1e-15);
    }

    #[test]
    fn nonarithmetic_flags() {
        assert!(!det_half().nonarithmetic());
        let lattice = WeightLaw::FiniteSupport {
            points: vec![(-1.0f64).exp(), 1f64.exp()],
            probs: vec![0.5, 0.5],
        };
        assert!(!lattice.nonarithmetic());
        let irrational = WeightLaw::FiniteSupport {
            points: vec![0.3, 0.5],
            probs: vec![0.5, 0.5],
        };
        assert!(irrational.nonarithmetic());
        let commensurable = WeightLaw::FiniteSupport {
            points: vec![0.25, 0.5, 0.125],
            probs: vec![0.2, 0.3, 0.5],
        };
        assert!(!commensurable.nonarithmetic());
        assert!(WeightLaw::Lognormal { mu: 0.0, sigma: 1.0 }.nonarithmetic());
    }

    #[test]
    fn closed_form_moments() {
        let u = WeightLaw::Uniform01Power { exponent: 2.0 };
        assert!((u.log_moment(1.0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!(u.log_moment(-0.6, 0).is_infinite());
        let geo = OffspringLaw::Geometric { p: 0.4 };
        assert!((geo.mean() - 2.5).abs() < 1e-12);
        // E[N^2] = (2 - p) / p^2
        assert!((geo.moment(2.0) - 1.6 / 0.16).abs() < 1e-9);
        let par = InhomLaw::Pareto {
            scale: 1.0,
            tail_index: 0.5,
        };
        assert!(par.moment(0.6).is_infinite());
        assert!((par.moment(0.25) - 2.0).abs() < 1e-12);
        assert!((InhomLaw::Exponential { rate: 2.0 }.moment(1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn json_schema_round_trip_and_pointer_errors() {
        let spec = make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 }).unwrap();
        let text = spec.to_json_string();
        assert!(text.contains("\"family\": \"Lognormal\""));
        assert_eq!(ModelSpec::from_json_str(&text).unwrap(), spec);

        let bad = r#"{"label":"x","offspring":{"family":"Fixed","n":2},
            "weight":{"family":"Lognormal","mu":-1.0,"sigma":"wide"},
            "inhom":{"family":"Constant","b":1.0}}"#;
        match ModelSpec::from_json_str(bad).unwrap_err() {
            Error::InvalidModel { pointer, .. } => assert_eq!(pointer, "/weight/sigma"),
            other => panic!("{other:?}"),
        }
        let bad_probs = r#"{"label":"x","offspring":{"family":"Fixed","n":2},
            "weight":{"family":"FiniteSupport","points":[0.5,0.7],"probs":[0.5,0.6]},
            "inhom":{"family":"Constant","b":1.0}}"#;
        match ModelSpec::from_json_str(bad_probs).unwrap_err() {
            Error::InvalidModel { pointer, .. } => assert_eq!(pointer, "/weight/probs"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pointer_conversion() {
        assert_eq!(path_to_pointer("weight.FiniteSupport.points[1]"), "/weight/points/1");
        assert_eq!(path_to_pointer("label"), "/label");
    }
}
