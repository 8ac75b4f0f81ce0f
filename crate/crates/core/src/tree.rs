//! Direct simulation of the minimal solution `R = sum_v L(v) B(v)` on the
//! weighted branching tree, the maximal weight `max_v L(v)`, and the
//! population-dynamics pool iteration of the smoothing transform.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::parallel::Exec;
use crate::rng::{derive_seed, stream, Domain, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePolicy {
    /// Children with weight below this are pruned.
    pub weight_floor: f64,
    pub depth_cap: u32,
    pub node_cap: u64,
    /// Coarser floors evaluated on the same traversal; each must exceed
    /// `weight_floor`.
    #[serde(default)]
    pub floor_ladder: Vec<f64>,
    /// Samples whose pruned weight exceeds this are censored.
    #[serde(default = "default_censor")]
    pub censor_pruned_weight: f64,
}

fn default_censor() -> f64 {
    1.0
}

impl Default for PrunePolicy {
    fn default() -> Self {
        PrunePolicy {
            weight_floor: 1e-10,
            depth_cap: 200,
            node_cap: 10_000_000,
            floor_ladder: Vec::new(),
            censor_pruned_weight: default_censor(),
        }
    }
}

impl PrunePolicy {
    pub fn new(weight_floor: f64, depth_cap: u32, node_cap: u64) -> Result<Self> {
        let p = PrunePolicy {
            weight_floor,
            depth_cap,
            node_cap,
            ..PrunePolicy::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_ladder(mut self, floors: Vec<f64>) -> Result<Self> {
        self.floor_ladder = floors;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_floor > 0.0 && self.weight_floor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight_floor must be positive, got {}",
                self.weight_floor
            )));
        }
        if self.depth_cap == 0 || self.node_cap == 0 {
            return Err(Error::InvalidArgument("depth_cap and node_cap must be positive".into()));
        }
        if let Some(f) = self.floor_ladder.iter().find(|&&f| !(f > self.weight_floor)) {
            return Err(Error::InvalidArgument(format!(
                "ladder floor {f} must exceed weight_floor {}",
                self.weight_floor
            )));
        }
        Ok(())
    }

    /// All floors, coarsest first, ending with `weight_floor`.
    pub fn floors(&self) -> Vec<f64> {
        let mut f = self.floor_ladder.clone();
        f.sort_by(|a, b| b.total_cmp(a));
        f.push(self.weight_floor);
        f
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeSample {
    pub r_value: f64,
    /// Sum of `L(v)` over pruned children.
    pub pruned_weight: f64,
    /// Largest weight generated anywhere, including pruned children.
    pub max_weight: f64,
    pub nodes_expanded: u64,
    /// Depth or node cap was hit.
    pub capped: bool,
    /// `R` under each ladder floor (in `floor_ladder` order), from the same
    /// traversal.
    pub r_by_floor: Vec<f64>,
    pub max_by_floor: Vec<f64>,
    /// `sum L(v) min(B(v), cap)` when a cap on `B` was requested.
    pub r_clipped: Option<f64>,
}

impl TreeSample {
    pub fn censored(&self, policy: &PrunePolicy) -> bool {
        self.capped || self.pruned_weight > policy.censor_pruned_weight
    }
}

#[derive(Clone, Copy)]
struct Node {
    w: f64,
    depth: u32,
    path_min: f64,
}

/// Reusable traversal buffers.
#[derive(Default)]
pub struct Scratch {
    stack: Vec<Node>,
    a: Vec<f64>,
}

/// A validated `(model, policy)` pair producing samples by stream index.
#[derive(Debug, Clone)]
pub struct TreeSimulator {
    pub spec: ModelSpec,
    pub policy: PrunePolicy,
    pub seed: u64,
    pub b_cap: Option<f64>,
}

impl TreeSimulator {
    pub fn new(spec: &ModelSpec, policy: &PrunePolicy, seed: u64) -> Result<Self> {
        spec.validate()?;
        policy.validate()?;
        if spec.inhom.is_homogeneous() {
            return Err(Error::InvalidArgument(
                "B = 0 almost surely: the minimal solution is identically 0".into(),
            ));
        }
        Ok(TreeSimulator {
            spec: spec.clone(),
            policy: policy.clone(),
            seed,
            b_cap: None,
        })
    }

    /// Also accumulate `sum L(v) min(B(v), cap)` on the same randomness.
    pub fn with_b_cap(mut self, cap: f64) -> Self {
        self.b_cap = Some(cap);
        self
    }

    pub fn rng(&self, index: u64) -> StreamRng {
        stream(self.seed, Domain::Tree, index)
    }

    pub fn sample(&self, index: u64) -> TreeSample {
        let mut scratch = Scratch::default();
        let mut out = TreeSample::default();
        self.sample_with(&mut self.rng(index), &mut scratch, &mut out);
        out
    }

    /// Depth-first traversal; children are visited in index order and each
    /// node draws its own `(N, B, A)` when expanded.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Scratch, out: &mut TreeSample) {
        let p = &self.policy;
        let k = p.floor_ladder.len();
        out.r_value = 0.0;
        out.pruned_weight = 0.0;
        out.max_weight = 1.0;
        out.nodes_expanded = 0;
        out.capped = false;
        out.r_by_floor.clear();
        out.r_by_floor.resize(k, 0.0);
        out.max_by_floor.clear();
        out.max_by_floor.resize(k, 1.0);
        let mut clipped = 0.0;

        let stack = &mut scratch.stack;
        stack.clear();
        stack.push(Node {
            w: 1.0,
            depth: 0,
            path_min: 1.0,
        });
        while let Some(node) = stack.pop() {
            if out.nodes_expanded >= p.node_cap {
                out.capped = true;
                out.pruned_weight += node.w;
                continue;
            }
            out.nodes_expanded += 1;
            let (n, b) = self.spec.sample_into(rng, &mut scratch.a);
            let c = node.w * b;
            out.r_value += c;
            if let Some(cap) = self.b_cap {
                clipped += node.w * b.min(cap);
            }
            for j in 0..k {
                if node.path_min >= p.floor_ladder[j] {
                    out.r_by_floor[j] += c;
                }
            }
            for i in (0..n as usize).rev() {
                let cw = node.w * scratch.a[i];
                if cw > out.max_weight {
                    out.max_weight = cw;
                }
                for j in 0..k {
                    if node.path_min >= p.floor_ladder[j] && cw > out.max_by_floor[j] {
                        out.max_by_floor[j] = cw;
                    }
                }
                if cw < p.weight_floor {
                    out.pruned_weight += cw;
                } else if node.depth >= p.depth_cap {
                    out.capped = true;
                    out.pruned_weight += cw;
                } else {
                    stack.push(Node {
                        w: cw,
                        depth: node.depth + 1,
                        path_min: node.path_min.min(cw),
                    });
                }
            }
        }
        out.r_clipped = self.b_cap.map(|_| clipped);
    }

    /// Whether some weight exceeds `t`, expanding nodes with `L(v)` at or above
    /// the floor and stopping at the first exceedance.
    pub fn max_weight_exceeds<R: Rng + ?Sized>(&self, t: f64, rng: &mut R, scratch: &mut Scratch) -> bool {
        if t < 1.0 {
            return true;
        }
        let p = &self.policy;
        let stack = &mut scratch.stack;
        stack.clear();
        stack.push(Node {
            w: 1.0,
            depth: 0,
            path_min: 1.0,
        });
        let mut expanded = 0u64;
        while let Some(node) = stack.pop() {
            if expanded >= p.node_cap {
                return false;
            }
            expanded += 1;
            let (n, _) = self.spec.sample_into(rng, &mut scratch.a);
            for i in (0..n as usize).rev() {
                let cw = node.w * scratch.a[i];
                if cw > t {
                    return true;
                }
                if cw >= p.weight_floor && node.depth < p.depth_cap {
                    stack.push(Node {
                        w: cw,
                        depth: node.depth + 1,
                        path_min: 1.0,
                    });
                }
            }
        }
        false
    }

    /// Samples `index_range` and folds each into an accumulator per chunk.
    pub fn fold<A, F, M>(&self, count: u64, exec: &Exec, init: A, fold: F, merge: M) -> A
    where
        A: Send + Clone + Sync,
        F: Fn(&mut A, u64, &TreeSample) + Sync + Send,
        M: Fn(A, A) -> A,
    {
        exec.map_reduce(
            count,
            |_, range| {
                let mut acc = init.clone();
                let mut scratch = Scratch::default();
                let mut out = TreeSample::default();
                for idx in range {
                    self.sample_with(&mut self.rng(idx), &mut scratch, &mut out);
                    fold(&mut acc, idx, &out);
                }
                acc
            },
            init.clone(),
            merge,
        )
    }

    pub fn collect(&self, count: u64, exec: &Exec) -> Vec<TreeSample> {
        exec.map_indexed(count, |i| self.sample(i))
    }
}

pub fn sample_r(spec: &ModelSpec, policy: &PrunePolicy, seed: u64, index: u64) -> Result<TreeSample> {
    Ok(TreeSimulator::new(spec, policy, seed)?.sample(index))
}

pub fn sample_max_weight(spec: &ModelSpec, t: f64, policy: &PrunePolicy, seed: u64, index: u64) -> Result<bool> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {t}")));
    }
    let sim = TreeSimulator::new(spec, policy, seed)?;
    let mut rng = stream(seed, Domain::MaxWeight, index);
    Ok(sim.max_weight_exceeds(t, &mut rng, &mut Scratch::default()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePool {
    pub values: Vec<f64>,
    pub generation: u32,
}

impl SamplePool {
    pub fn zeros(size: usize) -> Self {
        SamplePool {
            values: vec![0.0; size],
            generation: 0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Empirical quantile by order statistic `ceil(q M)`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
        v[k - 1]
    }
}

/// One application of the smoothing transform to the pool's empirical law:
/// `X' = sum a_i X_i + b` with `X_i` drawn uniformly with replacement.
pub fn pool_iterate(spec: &ModelSpec, pool: &SamplePool, seed: u64, exec: &Exec) -> SamplePool {
    let m = pool.values.len() as u64;
    let gen_seed = derive_seed(seed, pool.generation as u64);
    let values = exec.map_reduce(
        m,
        |c, range| {
            let mut rng = stream(gen_seed, Domain::Pool, c);
            let mut a = Vec::new();
            let mut out = Vec::with_capacity((range.end - range.start) as usize);
            for _ in range {
                let (_, b) = spec.sample_into(&mut rng, &mut a);
                let mut x = b;
                for &ai in &a {
                    x += ai * pool.values[rng.random_range(0..m as usize)];
                }
                out.push(x);
            }
            out
        },
        Vec::with_capacity(m as usize),
        |mut acc, mut part| {
            acc.append(&mut part);
            acc
        },
    );
    SamplePool {
        values,
        generation: pool.generation + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use crate::stats::Moments;

    fn det(a: f64, n: u32) -> ModelSpec {
        ModelSpec::new(
            "det",
            OffspringLaw::Fixed { n },
            WeightLaw::Deterministic { value: a },
            InhomLaw::Constant { b: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn geometric_series() {
        let policy = PrunePolicy::new(1e-12, 10_000, 10_000_000).unwrap();
        let s = sample_r(&det(0.5, 1), &policy, 0, 0).unwrap();
        assert!((s.r_value - 2.0).abs() < 1e-9);
        assert!(s.pruned_weight < 1e-12 && !s.capped);
        assert_eq!(s.max_weight, 1.0);
    }

    #[test]
    fn binary_subcritical_mean() {
        // Each pruned child at weight w carries an independent copy of R, so
        // r_value + E[R] * pruned_weight is unbiased for E[R] = 5.
        let policy = PrunePolicy::new(1e-6, 200, 10_000_000).unwrap();
        let sim = TreeSimulator::new(&det(0.4, 2), &policy, 1).unwrap();
        let s = sim.sample(0);
        assert!((s.r_value + 5.0 * s.pruned_weight - 5.0).abs() < 1e-9);

        let random = ModelSpec::new(
            "uniform-power",
            OffspringLaw::Fixed { n: 2 },
            WeightLaw::Uniform01Power { exponent: 1.5 },
            InhomLaw::Exponential { rate: 1.0 },
        )
        .unwrap();
        let policy = PrunePolicy::new(1e-3, 200, 10_000_000).unwrap();
        let sim = TreeSimulator::new(&random, &policy, 1).unwrap();
        let m: Moments = sim
            .collect(20_000, &Exec::with_workers(1))
            .iter()
            .map(|s| s.r_value + 5.0 * s.pruned_weight)
            .collect();
        assert!((m.mean - 5.0).abs() < 3.0 * m.stderr(), "{} +- {}", m.mean, m.stderr());
    }

    #[test]
    fn homogeneous_rejected() {
        let spec = ModelSpec::new(
            "homog",
            OffspringLaw::Fixed { n: 2 },
            WeightLaw::Deterministic { value: 0.5 },
            InhomLaw::Constant { b: 0.0 },
        )
        .unwrap();
        assert!(TreeSimulator::new(&spec, &PrunePolicy::default(), 0).is_err());
    }

    #[test]
    fn ladder_matches_separate_runs() {
        let spec = make_critical_lognormal(0.5, 2, InhomLaw::Exponential { rate: 1.0 }).unwrap();
        let fine = PrunePolicy::new(1e-5, 200, 1_000_000)
            .unwrap()
            .with_ladder(vec![1e-2, 1e-3])
            .unwrap();
        for idx in 0..50 {
            let a = TreeSimulator::new(&spec, &fine, 4).unwrap().sample(idx);
            // Each floor's value can only grow as the floor is lowered.
            assert!(a.r_by_floor[0] <= a.r_by_floor[1] + 1e-12);
            assert!(a.r_by_floor[1] <= a.r_value + 1e-12);
            assert!(a.max_by_floor[0] <= a.max_weight);
        }
    }

    #[test]
    fn max_weight_trivial_cases() {
        let policy = PrunePolicy::default();
        assert!(sample_max_weight(&det(0.5, 2), 0.5, &policy, 0, 0).unwrap());
        let policy = PrunePolicy::new(1e-6, 200, 1_000_000).unwrap();
        assert!(!sample_max_weight(&det(0.5, 2), 1.0, &policy, 0, 0).unwrap());
    }

    #[test]
    fn clipped_b_is_dominated() {
        let spec = make_critical_lognormal(0.5, 2, InhomLaw::Exponential { rate: 0.5 }).unwrap();
        let policy = PrunePolicy::new(1e-4, 200, 1_000_000).unwrap();
        let sim = TreeSimulator::new(&spec, &policy, 2).unwrap().with_b_cap(1.0);
        for idx in 0..200 {
            let s = sim.sample(idx);
            assert!(s.r_clipped.unwrap() <= s.r_value);
        }
    }

    #[test]
    fn pool_recursion() {
        let exec = Exec::with_workers(1);
        let spec = det(0.5, 1);
        let mut pool = SamplePool::zeros(64);
        for k in 1..=10 {
            pool = pool_iterate(&spec, &pool, 3, &exec);
            let expect: f64 = (0..k).map(|j| 0.5f64.powi(j)).sum();
            assert!((pool.mean() - expect).abs() < 1e-12);
        }
        assert_eq!(pool.generation, 10);
    }

    #[test]
    fn parallel_matches_serial() {
        let spec = make_critical_lognormal(0.5, 2, InhomLaw::Constant { b: 1.0 }).unwrap();
        let policy = PrunePolicy::new(1e-4, 200, 1_000_000).unwrap();
        let sim = TreeSimulator::new(&spec, &policy, 8).unwrap();
        let a = sim.collect(3000, &Exec::with_workers(1));
        let b = sim.collect(3000, &Exec::with_workers(3));
        assert_eq!(a, b);
    }
}
