//! Tail matching: exhaustive scan and an exact kd-tree over sample tails.
//!
//! Both paths evaluate the same squared distance expression in the same
//! order and rank by `(distance², index)`, so they return identical results.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{History, PointCloud};
use crate::error::{Error, Result};
use crate::uq::Ensemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchStrategy {
    #[default]
    Scan,
    KdTree,
}

/// Scaled squared distance between a sample tail and the history target.
#[inline]
fn dist2(tail: &[f64], target: &[f64], scale: &[f64]) -> f64 {
    let d = scale.len();
    let mut acc = 0.0;
    for (i, (a, b)) in tail.iter().zip(target).enumerate() {
        let r = (a - b) * scale[i % d];
        acc += r * r;
    }
    acc
}

fn target<'h>(cloud: &PointCloud, history: &'h History) -> Result<&'h [f64]> {
    if history.dim() != cloud.dim() {
        return Err(Error::DimensionMismatch { expected: cloud.dim(), got: history.dim() });
    }
    history.last_rows(cloud.rows_per_sample() - 1)
}

/// Closest sample by tail distance; ties go to the lowest index.
pub fn match_best(cloud: &PointCloud, history: &History) -> Result<(usize, f64)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let t = target(cloud, history)?;
    let scale = cloud.metric_scale();
    let mut best = (0, f64::INFINITY);
    for j in 0..cloud.len() {
        let d2 = dist2(cloud.tail(j), t, scale);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    Ok((best.0, best.1.sqrt()))
}

/// The `k` samples with smallest tail distance, ascending, as an ensemble.
pub fn top_k_match(cloud: &PointCloud, history: &History, k: usize) -> Result<Ensemble> {
    top_k_with(cloud, None, history, k)
}

pub(crate) fn top_k_with(cloud: &PointCloud, tree: Option<&KdTree>, history: &History, k: usize) -> Result<Ensemble> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if k > cloud.len() {
        return Err(Error::KTooLarge { k, n: cloud.len() });
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let t = target(cloud, history)?;
    let ranked = match tree {
        Some(tree) if !t.is_empty() => tree.nearest(cloud, t, k),
        _ => scan(cloud, t, k),
    };
    let mut members = Vec::with_capacity(k * cloud.sample(0).len());
    let mut distances = Vec::with_capacity(k);
    let mut indices = Vec::with_capacity(k);
    for (d2, j) in ranked {
        members.extend_from_slice(cloud.sample(j));
        distances.push(d2.sqrt());
        indices.push(j);
    }
    Ensemble::new(members, cloud.rows_per_sample(), cloud.dim(), distances, indices)
}

fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn scan(cloud: &PointCloud, t: &[f64], k: usize) -> Vec<(f64, usize)> {
    let scale = cloud.metric_scale();
    let mut all: Vec<(f64, usize)> = (0..cloud.len()).map(|j| (dist2(cloud.tail(j), t, scale), j)).collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, rank);
        all.truncate(k);
    }
    all.sort_by(rank);
    all
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked(f64, usize);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        rank(&(self.0, self.1), &(other.0, other.1))
    }
}

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact k-nearest-neighbour index over the tails of one cloud.
#[derive(Debug, Clone)]
pub struct KdTree {
    order: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Self {
        let mut tree = Self { order: (0..cloud.len()).collect(), nodes: Vec::new(), root: 0 };
        let dims = if cloud.is_empty() { 0 } else { cloud.tail(0).len() };
        if dims == 0 {
            tree.nodes.push(Node::Leaf { start: 0, end: cloud.len() });
            return tree;
        }
        let n = cloud.len();
        tree.root = tree.split(cloud, 0, n, dims);
        tree
    }

    fn split(&mut self, cloud: &PointCloud, start: usize, end: usize, dims: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        // widest axis of this subset
        let mut axis = 0;
        let mut widest = -1.0;
        for a in 0..dims {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &j in &self.order[start..end] {
                let v = cloud.tail(j)[a];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > widest {
                widest = hi - lo;
                axis = a;
            }
        }
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&x, &y| cloud.tail(x)[axis].total_cmp(&cloud.tail(y)[axis]));
        let value = cloud.tail(self.order[mid])[axis];
        let left = self.split(cloud, start, mid, dims);
        let right = self.split(cloud, mid, end, dims);
        self.nodes.push(Node::Split { axis, value, left, right });
        self.nodes.len() - 1
    }

    fn nearest(&self, cloud: &PointCloud, t: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
        self.visit(self.root, cloud, t, k, &mut heap);
        let mut out: Vec<(f64, usize)> = heap.into_iter().map(|r| (r.0, r.1)).collect();
        out.sort_by(rank);
        out
    }

    fn visit(&self, node: usize, cloud: &PointCloud, t: &[f64], k: usize, heap: &mut BinaryHeap<Ranked>) {
        let scale = cloud.metric_scale();
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.order[start..end] {
                    let cand = Ranked(dist2(cloud.tail(j), t, scale), j);
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("k ≥ 1") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = (t[axis] - value) * scale[axis % scale.len()];
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near, cloud, t, k, heap);
                // equality is kept so that equal-distance, lower-index points are still reached
                let bound = diff * diff * (1.0 - 1e-12);
                if heap.len() < k || bound <= heap.peek().expect("non-empty").0 {
                    self.visit(far, cloud, t, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::CloudOrigin;
    use crate::rng::{stream, Stage};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
        let mut rng = stream(seed, Stage::Test, 0);
        let v = (0..n * 2 * d).map(|_| rng.sample(StandardNormal)).collect();
        PointCloud::new(v, 2, d, CloudOrigin::Oracle).unwrap()
    }

    fn history(v: &[f64]) -> History {
        History::new(v.to_vec(), v.len(), 0.1, 0.0).unwrap()
    }

    #[test]
    fn exact_member_matches_at_zero() {
        let cloud = random_cloud(50, 3, 1);
        let h = history(cloud.tail(17));
        assert_eq!(match_best(&cloud, &h).unwrap(), (17, 0.0));
    }

    #[test]
    fn single_sample_always_wins() {
        let cloud = random_cloud(1, 3, 2);
        assert_eq!(match_best(&cloud, &history(&[100.0, 0.0, 0.0])).unwrap().0, 0);
    }

    #[test]
    fn errors() {
        let empty = PointCloud::new(vec![], 2, 3, CloudOrigin::Oracle).unwrap();
        assert!(matches!(match_best(&empty, &history(&[0.0; 3])), Err(Error::EmptyCloud)));
        let cloud = random_cloud(4, 3, 3);
        assert!(matches!(top_k_match(&cloud, &history(&[0.0; 3]), 5), Err(Error::KTooLarge { k: 5, n: 4 })));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cloud = PointCloud::new(vec![1.0, 9.0, -1.0, 8.0, 1.0, 7.0, -1.0, 6.0], 2, 1, CloudOrigin::Oracle).unwrap();
        let h = history(&[0.0]);
        assert_eq!(match_best(&cloud, &h).unwrap(), (0, 1.0));
        let ens = top_k_match(&cloud, &h, 3).unwrap();
        assert_eq!(ens.indices, vec![0, 1, 2]);
        assert_eq!(top_k_match(&cloud, &h, 1).unwrap().head(0), &[9.0]);
        let tree = KdTree::build(&cloud);
        assert_eq!(top_k_with(&cloud, Some(&tree), &h, 3).unwrap(), ens);
    }

    #[test]
    fn scan_matches_brute_force_and_full_sort() {
        let cloud = random_cloud(100, 3, 4);
        let h = history(&[0.2, -0.1, 0.5]);
        let brute: Vec<f64> = (0..100)
            .map(|j| cloud.tail(j).iter().zip(h.last()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        let mut best = 0;
        for j in 1..100 {
            if brute[j] < brute[best] {
                best = j;
            }
        }
        let (j, dist) = match_best(&cloud, &h).unwrap();
        assert_eq!(j, best);
        assert!((dist - brute[best]).abs() < 1e-14);

        let mut sorted: Vec<usize> = (0..100).collect();
        sorted.sort_by(|&a, &b| brute[a].total_cmp(&brute[b]));
        let ens = top_k_match(&cloud, &h, 10).unwrap();
        assert_eq!(ens.indices, sorted[..10]);
        let all = top_k_match(&cloud, &h, 100).unwrap();
        assert_eq!(all.indices, sorted);
    }

    #[test]
    fn metric_scale_weights_components() {
        let cloud = PointCloud::new(vec![0.0, 3.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 2, 2, CloudOrigin::Oracle)
            .unwrap()
            .with_metric_scale(vec![1.0, 0.1])
            .unwrap();
        // unscaled, sample 1 is closer; scaled, sample 0's offset on the damped axis wins
        assert_eq!(match_best(&cloud, &history(&[0.0, 0.0])).unwrap().0, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn kd_tree_equals_scan(seed in any::<u64>(), n in 1usize..400, d in 1usize..5, k_frac in 0.0f64..1.0, grid in any::<bool>()) {
            let mut cloud = random_cloud(n, d, seed);
            if grid {
                // coarse lattice values force many exact ties
                let v: Vec<f64> = cloud.samples().iter().map(|x| (x * 2.0).round() / 2.0).collect();
                cloud = PointCloud::new(v, 2, d, CloudOrigin::Oracle).unwrap();
            }
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let mut rng = stream(seed, Stage::Test, 1);
            let t: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let h = history(&t);
            let tree = KdTree::build(&cloud);
            prop_assert_eq!(top_k_with(&cloud, Some(&tree), &h, k).unwrap(), top_k_match(&cloud, &h, k).unwrap());
        }
    }
}
