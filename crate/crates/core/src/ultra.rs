//! Ultrametric trees and the tree process `Z`.
//!
//! For a finite ultrametric space with diameter `D` and `eps_n = 2^-n D`, the
//! balls of radius `eps_n` partition the space. Level `n` of the tree has one
//! node per ball, `theta_n(t)` is the center of the ball holding `t` and
//! `delta(s, t) = eps_{n(s,t)}` where `n(s,t)` is the last level at which
//! `s` and `t` share a node; then `delta / 2 < d <= delta`.
//!
//! `Z(t) = sum_n eps_n g_{n, theta_n(t)}`. Below the deepest level every leaf
//! carries its own infinite branch, so each leaf has an extra independent
//! term of variance `sum_{n > depth} eps_n^2 = eps_depth^2 / 3`.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::chaining::{mm_lower_exponent, FiniteChain, MajorizingMeasure, MmExponent, PartitionChain, WeightSequence};
use crate::covernum::{assign_to_centers, greedy_cover, FiniteMetricSpace};
use crate::error::{domain, invalid, Error, Result};
use crate::exec::Execution;
use crate::gaussmath::log_std_normal_interval;

/// Deepest level attempted when building from a metric space.
pub const MAX_TREE_DEPTH: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UltrametricTree {
    diameter: f64,
    /// `centers[n]`: point indices of the level-`n` nodes.
    centers: Vec<Vec<usize>>,
    /// `theta[n][t]`: node of `t` at level `n`.
    theta: Vec<Vec<u32>>,
    /// `parent[n][k]`: level `n-1` node above node `k` (empty at level 0).
    parent: Vec<Vec<u32>>,
}

impl UltrametricTree {
    /// Builds the tree of balls of a finite ultrametric space, stopping at the
    /// first level where every point is its own node. Fails with
    /// [`Error::Invariant`] when the covers do not form a tree, which is what
    /// happens for non-ultrametric input.
    pub fn from_space(space: &FiniteMetricSpace, exec: Execution) -> Result<Self> {
        let n_pts = space.n_points();
        if n_pts == 0 {
            return domain("empty space");
        }
        let diameter = space.diameter(exec);
        let mut centers = vec![vec![0usize]];
        let mut theta = vec![vec![0u32; n_pts]];
        let mut parent = vec![Vec::new()];
        if n_pts > 1 && diameter == 0.0 {
            return Err(Error::Invariant("distinct points at distance 0".into()));
        }
        let mut n = 0;
        while centers[n].len() < n_pts {
            n += 1;
            if n > MAX_TREE_DEPTH {
                return Err(Error::Invariant(format!(
                    "points still unresolved at depth {MAX_TREE_DEPTH}"
                )));
            }
            let eps = diameter * 2f64.powi(-(n as i32));
            let cover = greedy_cover(space, eps)?;
            let th: Vec<u32> = assign_to_centers(space, &cover.centers)
                .into_iter()
                .map(|k| k as u32)
                .collect();
            let par: Vec<u32> = cover.centers.iter().map(|&c| theta[n - 1][c]).collect();
            centers.push(cover.centers);
            theta.push(th);
            parent.push(par);
        }
        let tree = Self {
            diameter,
            centers,
            theta,
            parent,
        };
        tree.check_invariants(space)?;
        Ok(tree)
    }

    /// Balanced `branching`-ary tree of the given depth; leaves `s != t` are at
    /// distance `2^-k D` where `k` is the length of their common prefix.
    pub fn balanced(branching: usize, depth: usize, diameter: f64) -> Result<Self> {
        if branching < 2 {
            return invalid("branching must be >= 2");
        }
        if depth == 0 || depth > 30 {
            return invalid("depth must be in 1..=30");
        }
        if !(diameter > 0.0 && diameter.is_finite()) {
            return invalid("diameter must be positive");
        }
        let n_leaves = (branching as u128).pow(depth as u32);
        if n_leaves > 1 << 24 {
            return Err(Error::Budget {
                what: "tree leaves",
                requested: n_leaves,
                limit: 1 << 24,
            });
        }
        let n_leaves = n_leaves as usize;
        let mut centers = Vec::with_capacity(depth + 1);
        let mut theta = Vec::with_capacity(depth + 1);
        let mut parent = Vec::with_capacity(depth + 1);
        for n in 0..=depth {
            let block = branching.pow((depth - n) as u32);
            centers.push((0..n_leaves).step_by(block).collect());
            theta.push((0..n_leaves).map(|t| (t / block) as u32).collect());
            parent.push(if n == 0 {
                Vec::new()
            } else {
                (0..n_leaves / block).map(|k| (k / branching) as u32).collect()
            });
        }
        Ok(Self {
            diameter,
            centers,
            theta,
            parent,
        })
    }

    /// Checks nesting, `theta_{n-1} = parent o theta_n`, that every point is
    /// within `eps_n` of its node center, and the sandwich
    /// `delta / 2 < d <= delta` for every pair.
    pub fn check_invariants(&self, space: &FiniteMetricSpace) -> Result<()> {
        let n_pts = self.n_leaves();
        if space.n_points() != n_pts {
            return invalid("space and tree differ in size");
        }
        let tol = 1e-12 * self.diameter;
        for n in 1..=self.depth() {
            for t in 0..n_pts {
                let k = self.theta[n][t] as usize;
                if self.parent[n][k] != self.theta[n - 1][t] {
                    return Err(Error::Invariant(format!(
                        "point {t}: level {n} node does not sit below its level {} node",
                        n - 1
                    )));
                }
                if space.dist(t, self.centers[n][k]) > self.eps(n) + tol {
                    return Err(Error::Invariant(format!(
                        "point {t} is farther than eps_{n} from its center"
                    )));
                }
            }
        }
        for s in 0..n_pts {
            for t in 0..s {
                let d = space.dist(s, t);
                let delta = self.delta(s, t);
                if d > delta + tol || d <= 0.5 * delta - tol {
                    return Err(Error::Invariant(format!(
                        "pair ({s}, {t}): d = {d} outside (delta/2, delta] with delta = {delta}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn depth(&self) -> usize {
        self.centers.len() - 1
    }

    pub fn n_leaves(&self) -> usize {
        self.theta[0].len()
    }

    pub fn eps(&self, n: usize) -> f64 {
        self.diameter * 2f64.powi(-(n as i32))
    }

    pub fn n_nodes(&self, n: usize) -> usize {
        self.centers[n].len()
    }

    pub fn theta(&self, n: usize, t: usize) -> usize {
        self.theta[n][t] as usize
    }

    pub fn parent(&self, n: usize, k: usize) -> usize {
        self.parent[n][k] as usize
    }

    pub fn center(&self, n: usize, k: usize) -> usize {
        self.centers[n][k]
    }

    /// Last level at which `s` and `t` share a node (`depth` when `s == t`).
    pub fn split_level(&self, s: usize, t: usize) -> usize {
        (0..=self.depth())
            .rev()
            .find(|&n| self.theta[n][s] == self.theta[n][t])
            .unwrap_or(0)
    }

    /// `eps_{n(s,t)}`, and 0 on the diagonal.
    pub fn delta(&self, s: usize, t: usize) -> f64 {
        if s == t {
            0.0
        } else {
            self.eps(self.split_level(s, t))
        }
    }

    /// Children of node `k` at level `n`, as level `n+1` nodes.
    pub fn children(&self, n: usize, k: usize) -> Vec<usize> {
        if n >= self.depth() {
            return Vec::new();
        }
        (0..self.n_nodes(n + 1))
            .filter(|&c| self.parent(n + 1, c) == k)
            .collect()
    }

    /// The tree as a chain of partitions of the leaves, with the given
    /// diameter scale.
    pub fn to_chain(&self, diameter: f64) -> Result<PartitionChain> {
        let labels = self
            .theta
            .iter()
            .map(|l| l.iter().map(|&k| k as usize).collect())
            .collect();
        PartitionChain::from_assignments(diameter, labels)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Invariant(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let tree: Self = serde_json::from_str(s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let ok = !tree.theta.is_empty()
            && tree.theta.len() == tree.centers.len()
            && tree.parent.len() == tree.centers.len()
            && tree.theta.iter().all(|l| l.len() == tree.theta[0].len());
        if !ok {
            return invalid("inconsistent tree levels");
        }
        Ok(tree)
    }
}

/// Random ultrametric on `n_points` points from a random dendrogram: each
/// cluster splits into 2..=4 random nonempty groups and the merge height
/// shrinks by a random factor in `[0.3, 0.9)` per generation.
pub fn random_ultrametric_space(n_points: usize, seed: u64) -> Result<FiniteMetricSpace> {
    if n_points == 0 {
        return domain("need at least one point");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let mut d = vec![0.0; n_points * n_points];
    let mut stack = vec![((0..n_points).collect::<Vec<_>>(), 1.0f64)];
    while let Some((pts, h)) = stack.pop() {
        if pts.len() < 2 {
            continue;
        }
        let k = (2 + (uniform() * 3.0) as usize).min(pts.len());
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &p) in pts.iter().enumerate() {
            let g = if i < k { i } else { (uniform() * k as f64) as usize };
            groups[g].push(p);
        }
        for a in 0..k {
            for b in 0..a {
                for &s in &groups[a] {
                    for &t in &groups[b] {
                        d[s * n_points + t] = h;
                        d[t * n_points + s] = h;
                    }
                }
            }
        }
        for g in groups {
            let shrink = 0.3 + 0.6 * uniform();
            stack.push((g, h * shrink));
        }
    }
    FiniteMetricSpace::from_matrix(n_points, d)
}

/// Whether the leaf tails of `Z` are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZTail {
    /// Sum over tree levels `0..=depth` only.
    Truncated,
    /// Each leaf also carries the independent term of variance
    /// `eps_depth^2 / 3`.
    Infinite,
}

/// The tree process `Z` with coefficients indexed by tree nodes (and leaf
/// tails).
#[derive(Debug, Clone)]
pub struct ZProcess {
    tree: Arc<UltrametricTree>,
    tail: ZTail,
    offsets: Vec<usize>,
}

impl ZProcess {
    pub fn new(tree: Arc<UltrametricTree>) -> Self {
        Self::with_tail(tree, ZTail::Infinite)
    }

    pub fn with_tail(tree: Arc<UltrametricTree>, tail: ZTail) -> Self {
        let mut offsets = Vec::with_capacity(tree.depth() + 2);
        let mut acc = 0;
        for n in 0..=tree.depth() {
            offsets.push(acc);
            acc += tree.n_nodes(n);
        }
        offsets.push(acc);
        Self { tree, tail, offsets }
    }

    pub fn tree(&self) -> &UltrametricTree {
        &self.tree
    }

    pub fn tail(&self) -> ZTail {
        self.tail
    }

    pub fn n_leaves(&self) -> usize {
        self.tree.n_leaves()
    }

    pub fn n_coeffs(&self) -> usize {
        let nodes = self.offsets[self.tree.depth() + 1];
        match self.tail {
            ZTail::Truncated => nodes,
            ZTail::Infinite => nodes + self.n_leaves(),
        }
    }

    fn tail_variance(&self) -> f64 {
        match self.tail {
            ZTail::Truncated => 0.0,
            ZTail::Infinite => self.tree.eps(self.tree.depth()).powi(2) / 3.0,
        }
    }

    fn check_leaf(&self, i: usize) -> Result<()> {
        if i >= self.n_leaves() {
            return Err(Error::OutOfRange(format!("leaf {i} of {}", self.n_leaves())));
        }
        Ok(())
    }

    /// Coefficients of `Z(t_i)`, sorted by coefficient index.
    pub fn leaf_weights(&self, i: usize) -> Result<Vec<(u32, f64)>> {
        self.check_leaf(i)?;
        let t = &self.tree;
        let mut w: Vec<(u32, f64)> = (0..=t.depth())
            .map(|n| ((self.offsets[n] + t.theta(n, i)) as u32, t.eps(n)))
            .collect();
        if self.tail == ZTail::Infinite {
            w.push(((self.offsets[t.depth() + 1] + i) as u32, self.tail_variance().sqrt()));
        }
        Ok(w)
    }

    /// `E Z(s) Z(t)`.
    pub fn covariance(&self, s: usize, t: usize) -> Result<f64> {
        self.check_leaf(s)?;
        self.check_leaf(t)?;
        let n = self.tree.split_level(s, t);
        let shared: f64 = (0..=n).map(|m| self.tree.eps(m).powi(2)).sum();
        Ok(if s == t {
            shared + self.tail_variance()
        } else {
            shared
        })
    }

    pub fn variance(&self, i: usize) -> Result<f64> {
        self.covariance(i, i)
    }

    /// `||Z(s) - Z(t)||_2`.
    pub fn distance(&self, s: usize, t: usize) -> Result<f64> {
        if s == t {
            self.check_leaf(s)?;
            return Ok(0.0);
        }
        self.check_leaf(t)?;
        // the coefficients below the split level, summed small to large
        let n = self.tree.split_level(s, t);
        let own: f64 = (n + 1..=self.tree.depth())
            .rev()
            .fold(self.tail_variance(), |acc, m| acc + self.tree.eps(m).powi(2));
        Ok((2.0 * own).sqrt())
    }

    /// Largest standard deviation over the leaves.
    pub fn sigma(&self) -> f64 {
        (0..self.n_leaves())
            .map(|i| self.variance(i).expect("leaf in range").sqrt())
            .fold(0.0, f64::max)
    }

    /// Diameter of the leaves under the intrinsic metric.
    pub fn intrinsic_diameter(&self) -> f64 {
        if self.n_leaves() < 2 {
            return 0.0;
        }
        let d0 = self.tree.eps(0);
        match self.tail {
            ZTail::Infinite => (2.0f64 / 3.0).sqrt() * d0,
            ZTail::Truncated => {
                let s: f64 = (1..=self.tree.depth()).map(|m| self.tree.eps(m).powi(2)).sum();
                (2.0 * s).sqrt()
            }
        }
    }
}

/// `E Z(s) Z(t)`.
pub fn z_covariance(z: &ZProcess, s: usize, t: usize) -> Result<f64> {
    z.covariance(s, t)
}

fn level_for(tree: &UltrametricTree, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) {
        return domain("epsilon must be positive");
    }
    if epsilon > tree.diameter() {
        return domain(format!("epsilon {epsilon} exceeds the diameter {}", tree.diameter()));
    }
    // eps_{n+1} < epsilon <= eps_n
    let n = (tree.diameter() / epsilon).log2().floor() as usize;
    let n = if tree.eps(n) < epsilon { n.saturating_sub(1) } else { n };
    Ok(n.min(tree.depth()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZUpperBound {
    pub level: usize,
    pub n_pairs: usize,
    /// Standard deviation of each pair difference.
    pub pair_sd: f64,
    pub log_bound: f64,
}

/// One representative leaf per level-`n` node, paired with the next child
/// of the same parent (an odd child out is dropped).
pub fn sibling_pairs(tree: &UltrametricTree, n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if n == 0 || n > tree.depth() {
        return pairs;
    }
    let mut kids = vec![Vec::new(); tree.n_nodes(n - 1)];
    for c in 0..tree.n_nodes(n) {
        kids[tree.parent(n, c)].push(c);
    }
    for ch in &kids {
        for w in ch.chunks_exact(2) {
            pairs.push((tree.center(n, w[0]), tree.center(n, w[1])));
        }
    }
    pairs
}

/// Upper bound on `log P{sup_{s,t} |Z(s) - Z(t)| <= eps}`.
///
/// At the level `n` with `eps_{n+1} < eps <= eps_n`, the level-`n` nodes are
/// paired with siblings (consecutive children of the same parent), one leaf
/// per node. Sibling differences only involve disjoint subtrees, so they are
/// independent, each with standard deviation `v_n`, and the bound is
/// `n_pairs * log P{|g| <= eps_n / v_n}`.
pub fn z_small_ball_upper(z: &ZProcess, epsilon: f64) -> Result<ZUpperBound> {
    let tree = z.tree();
    let n = level_for(tree, epsilon)?;
    let pairs = sibling_pairs(tree, n);
    if pairs.is_empty() {
        return Ok(ZUpperBound {
            level: n,
            n_pairs: 0,
            pair_sd: 0.0,
            log_bound: 0.0,
        });
    }
    let (a, b) = pairs[0];
    let v = z.distance(a, b)?;
    let half = tree.eps(n) / v;
    Ok(ZUpperBound {
        level: n,
        n_pairs: pairs.len(),
        pair_sd: v,
        log_bound: pairs.len() as f64 * log_std_normal_interval(half)?,
    })
}

/// Chaining lower exponent for `Z`: the tree levels form a chain whose
/// level-`n` cells have intrinsic diameter at most `2^-n D_Z`, with `D_Z` the
/// intrinsic diameter; `sigma` is the largest leaf standard deviation.
pub fn z_small_ball_lower(
    z: &ZProcess,
    mu: &MajorizingMeasure,
    v: &WeightSequence,
    epsilon: f64,
) -> Result<MmExponent> {
    let d_z = z.intrinsic_diameter();
    if d_z == 0.0 {
        return domain("a single leaf has no small-ball exponent");
    }
    let chain = z.tree().to_chain(d_z)?;
    let fc = FiniteChain {
        chain,
        mu: mu.clone(),
        v: v.clone(),
        depth_cutoff: z.tree().depth(),
    };
    mm_lower_exponent(&fc, epsilon, z.sigma())
}

/// Leaf metric of a tree as a finite metric space: `d = delta`.
pub fn tree_metric(tree: &UltrametricTree) -> Result<FiniteMetricSpace> {
    let n = tree.n_leaves();
    let mut d = vec![0.0; n * n];
    for s in 0..n {
        for t in 0..n {
            d[s * n + t] = tree.delta(s, t);
        }
    }
    FiniteMetricSpace::from_matrix(n, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn balanced_space(b: usize, depth: usize, perm_seed: u64) -> FiniteMetricSpace {
        let tree = UltrametricTree::balanced(b, depth, 1.0).unwrap();
        let n = tree.n_leaves();
        // shuffle labels so the builder cannot rely on ordering
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        let mut d = vec![0.0; n * n];
        for s in 0..n {
            for t in 0..n {
                d[s * n + t] = tree.delta(perm[s], perm[t]);
            }
        }
        FiniteMetricSpace::from_matrix(n, d).unwrap()
    }

    #[test]
    fn balanced_levels() {
        let t = UltrametricTree::balanced(3, 5, 2.0).unwrap();
        assert_eq!(t.n_leaves(), 243);
        for n in 0..=5 {
            assert_eq!(t.n_nodes(n), 3usize.pow(n as u32));
        }
        assert_eq!(t.delta(0, 1), 2.0 / 16.0);
        assert_eq!(t.delta(0, 242), 2.0);
        assert_eq!(t.children(0, 0), vec![0, 1, 2]);
    }

    #[test]
    fn builder_recovers_shuffled_tree() {
        let space = balanced_space(3, 3, 7);
        let tree = UltrametricTree::from_space(&space, Execution::Sequential).unwrap();
        assert_eq!(tree.depth(), 3);
        for s in 0..27 {
            for t in 0..27 {
                assert_eq!(tree.delta(s, t), space.dist(s, t));
            }
        }
    }

    #[test]
    fn non_ultrametric_is_rejected() {
        let s = FiniteMetricSpace::from_points_1d(&[0.0, 0.3, 0.6, 1.0]).unwrap();
        assert!(matches!(
            UltrametricTree::from_space(&s, Execution::Sequential),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn z_metric_ratio_is_constant() {
        let tree = Arc::new(UltrametricTree::balanced(2, 6, 1.0).unwrap());
        let z = ZProcess::new(tree.clone());
        let r = (2.0f64 / 3.0).sqrt();
        for s in 0..64 {
            for t in 0..s {
                let got = z.distance(s, t).unwrap() / tree.delta(s, t);
                assert!((got - r).abs() < 1e-12);
            }
        }
        assert!((z.sigma() - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        let zt = ZProcess::with_tail(tree.clone(), ZTail::Truncated);
        let var: f64 = (0..=6).map(|n| tree.eps(n).powi(2)).sum();
        assert!((zt.variance(5).unwrap() - var).abs() < 1e-15);
    }

    #[test]
    fn weights_match_covariance() {
        let tree = Arc::new(UltrametricTree::balanced(3, 3, 1.5).unwrap());
        let z = ZProcess::new(tree);
        for (s, t) in [(0, 0), (0, 1), (0, 5), (3, 26), (26, 26)] {
            let a = z.leaf_weights(s).unwrap();
            let b = z.leaf_weights(t).unwrap();
            let mut c = 0.0;
            for &(i, x) in &a {
                for &(j, y) in &b {
                    if i == j {
                        c += x * y;
                    }
                }
            }
            assert!((c - z.covariance(s, t).unwrap()).abs() < 1e-14);
        }
        assert!(matches!(z.leaf_weights(27), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn upper_bound_edge_cases() {
        let tree = Arc::new(UltrametricTree::balanced(2, 4, 1.0).unwrap());
        let z = ZProcess::new(tree);
        assert_eq!(z_small_ball_upper(&z, 1.0).unwrap().log_bound, 0.0);
        assert!(z_small_ball_upper(&z, 1.5).is_err());
        let b = z_small_ball_upper(&z, 0.25).unwrap();
        assert_eq!(b.level, 2);
        assert_eq!(b.n_pairs, 2);
        assert!(b.log_bound < 0.0);
        let b3 = z_small_ball_upper(&z, 0.2).unwrap();
        assert_eq!(b3.level, 2);
    }

    #[test]
    fn lower_exponent_exists() {
        let tree = Arc::new(UltrametricTree::balanced(2, 8, 1.0).unwrap());
        let z = ZProcess::new(tree);
        let mu = MajorizingMeasure::uniform(256);
        let e = z_small_ball_lower(&z, &mu, &WeightSequence::Square, 0.5).unwrap();
        assert!(e.level >= 1);
    }

    #[test]
    fn json_round_trip() {
        let t = UltrametricTree::balanced(2, 3, 1.0).unwrap();
        let back = UltrametricTree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(t, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_ultrametrics_satisfy_invariants(n in 2usize..40, seed in any::<u64>()) {
            let space = random_ultrametric_space(n, seed).unwrap();
            let tree = UltrametricTree::from_space(&space, Execution::Sequential).unwrap();
            prop_assert!(tree.check_invariants(&space).is_ok());
            let z = ZProcess::new(Arc::new(tree.clone()));
            for s in 0..n {
                for t in 0..s {
                    let r = z.distance(s, t).unwrap() / tree.delta(s, t);
                    prop_assert!((r - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
                }
            }
        }
    }
}
