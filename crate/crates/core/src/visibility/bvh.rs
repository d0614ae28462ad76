//! Median-split bounding volume hierarchy over Gaussian 3σ boxes.

use super::{combine_hits, Blocker};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::{Aabb, Gaussian};

#[derive(Clone, Debug)]
pub enum Node {
    Leaf { bounds: Aabb, gaussian: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    pub fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bvh {
    pub nodes: Vec<Node>,
    pub blockers: Vec<Blocker>,
}

fn build(nodes: &mut Vec<Node>, blockers: &[Blocker], items: &mut [usize]) -> usize {
    if items.len() == 1 {
        nodes.push(Node::Leaf {
            bounds: blockers[items[0]].bounds,
            gaussian: items[0],
        });
        return nodes.len() - 1;
    }
    let mut centroids = Aabb::empty();
    for &i in items.iter() {
        centroids.grow(&blockers[i].mean);
    }
    let ext = centroids.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    items.sort_by(|&a, &b| blockers[a].mean[axis].total_cmp(&blockers[b].mean[axis]).then(a.cmp(&b)));
    let mid = items.len() / 2;
    let slot = nodes.len();
    nodes.push(Node::Leaf {
        bounds: Aabb::empty(),
        gaussian: usize::MAX,
    });
    let (lo, hi) = items.split_at_mut(mid);
    let left = build(nodes, blockers, lo);
    let right = build(nodes, blockers, hi);
    let bounds = nodes[left].bounds().union(nodes[right].bounds());
    nodes[slot] = Node::Inner { bounds, left, right };
    slot
}

/// Slab test of the ray segment `[0, t_max]` against a box.
fn hits_box(b: &Aabb, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> bool {
    let mut t0: f64 = 0.0;
    let mut t1 = t_max;
    for k in 0..3 {
        let a = (b.min[k] - origin[k]) * inv_dir[k];
        let c = (b.max[k] - origin[k]) * inv_dir[k];
        let (near, far) = if a <= c { (a, c) } else { (c, a) };
        // NaN arises for a zero direction component with the origin on a slab plane.
        if near.is_nan() || far.is_nan() {
            if origin[k] < b.min[k] || origin[k] > b.max[k] {
                return false;
            }
            continue;
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return false;
        }
    }
    true
}

impl Bvh {
    pub fn build(gaussians: &[Gaussian]) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::EmptyScene);
        }
        let blockers: Vec<Blocker> = gaussians.iter().map(Blocker::new).collect();
        let mut items: Vec<usize> = (0..gaussians.len()).collect();
        let mut nodes = Vec::with_capacity(2 * gaussians.len());
        build(&mut nodes, &blockers, &mut items);
        Ok(Self { nodes, blockers })
    }

    /// Recomputes every box for moved Gaussians while keeping the tree topology.
    pub fn refit(&mut self, gaussians: &[Gaussian]) -> Result<()> {
        if gaussians.len() != self.blockers.len() {
            return Err(Error::Shape {
                what: "bvh refit",
                expected: self.blockers.len(),
                actual: gaussians.len(),
            });
        }
        self.blockers = gaussians.iter().map(Blocker::new).collect();
        for i in (0..self.nodes.len()).rev() {
            let bounds = match &self.nodes[i] {
                Node::Leaf { gaussian, .. } => self.blockers[*gaussian].bounds,
                Node::Inner { left, right, .. } => self.nodes[*left].bounds().union(self.nodes[*right].bounds()),
            };
            match &mut self.nodes[i] {
                Node::Leaf { bounds: b, .. } | Node::Inner { bounds: b, .. } => *b = bounds,
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.blockers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blockers.is_empty()
    }

    /// Indices of Gaussians whose box the ray segment touches.
    pub fn candidates(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Vec<usize> {
        let inv = dir.map(|d| 1.0 / d);
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !hits_box(node.bounds(), origin, &inv, t_max) {
                continue;
            }
            match node {
                Node::Leaf { gaussian, .. } => out.push(*gaussian),
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    /// Transmittance along `origin + t·dir` for `t ∈ [0, t_max]`, skipping `exclude`.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3, exclude: Option<usize>, t_max: f64) -> f64 {
        let hits = self
            .candidates(origin, dir, t_max)
            .into_iter()
            .filter(|&i| Some(i) != exclude)
            .filter_map(|i| self.blockers[i].peak_alpha(origin, dir, t_max).map(|a| (i, a)))
            .collect();
        combine_hits(hits)
    }

    /// Leaf reached by descending through boxes containing `p`, if any.
    pub fn leaf_containing(&self, p: &Vec3) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bounds().contains(p) {
                continue;
            }
            match node {
                Node::Leaf { gaussian, .. } => out.push(*gaussian),
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }
}

/// Brute-force box test used to validate [`Bvh::candidates`].
pub fn box_candidates(blockers: &[super::Blocker], origin: &Vec3, dir: &Vec3, t_max: f64) -> Vec<usize> {
    let inv = dir.map(|d| 1.0 / d);
    (0..blockers.len())
        .filter(|&i| hits_box(&blockers[i].bounds, origin, &inv, t_max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianInit;

    fn at(p: Vec3) -> Gaussian {
        Gaussian::new(&GaussianInit {
            mean: p,
            scale: Vec3::repeat(0.1),
            ..Default::default()
        })
    }

    #[test]
    fn empty_scene_is_an_error() {
        assert!(matches!(Bvh::build(&[]), Err(Error::EmptyScene)));
    }

    #[test]
    fn single_gaussian_is_one_leaf() {
        let bvh = Bvh::build(&[at(Vec3::zeros())]).unwrap();
        assert_eq!(bvh.nodes.len(), 1);
        assert!(matches!(bvh.nodes[0], Node::Leaf { gaussian: 0, .. }));
    }

    #[test]
    fn two_distant_gaussians_have_disjoint_leaves() {
        let bvh = Bvh::build(&[at(Vec3::zeros()), at(Vec3::new(5.0, 0.0, 0.0))]).unwrap();
        assert_eq!(bvh.nodes.len(), 3);
        let (l, r) = match &bvh.nodes[0] {
            Node::Inner { left, right, .. } => (*left, *right),
            _ => panic!("root should be inner"),
        };
        let (a, b) = (bvh.nodes[l].bounds(), bvh.nodes[r].bounds());
        assert!(a.max[0] < b.min[0] || b.max[0] < a.min[0]);
    }

    #[test]
    fn parents_contain_children() {
        let gs: Vec<Gaussian> = (0..37).map(|i| at(Vec3::new((i as f64 * 0.37).sin(), (i as f64).cos(), i as f64 * 0.01))).collect();
        let bvh = Bvh::build(&gs).unwrap();
        let mut seen = vec![0; gs.len()];
        for n in &bvh.nodes {
            match n {
                Node::Inner { bounds, left, right } => {
                    assert!(bounds.contains_box(bvh.nodes[*left].bounds()));
                    assert!(bounds.contains_box(bvh.nodes[*right].bounds()));
                }
                Node::Leaf { gaussian, .. } => seen[*gaussian] += 1,
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        for (i, g) in gs.iter().enumerate() {
            assert!(bvh.leaf_containing(&g.mean).contains(&i));
        }
    }
}
