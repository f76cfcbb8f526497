//! Camera visibility graph and its multilevel recursive bisection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::Block;

/// Cameras are nodes; an edge carries the number of points two cameras share.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityGraph {
    pub weights: Vec<f64>,
    /// Sorted neighbour lists `(camera, shared points)`.
    pub adjacency: Vec<Vec<(usize, u64)>>,
}

impl VisibilityGraph {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<u64> {
        let row = &self.adjacency[a];
        row.binary_search_by_key(&b, |e| e.0).ok().map(|p| row[p].1)
    }
}

/// Node weight is the cube root of the summed observation counts of the
/// points a camera sees.
pub fn build_visibility_graph(block: &Block) -> VisibilityGraph {
    let adj = block.adjacency();
    let m = block.cameras.len();
    let mut sums = vec![0usize; m];
    let mut edges: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); m];
    let mut cams = Vec::new();
    for obs in &adj.by_point {
        cams.clear();
        cams.extend(obs.iter().map(|&k| block.observations[k].camera));
        cams.sort_unstable();
        cams.dedup();
        for &c in &cams {
            sums[c] += obs.len();
        }
        for (x, &a) in cams.iter().enumerate() {
            for &b in &cams[x + 1..] {
                *edges[a].entry(b).or_default() += 1;
                *edges[b].entry(a).or_default() += 1;
            }
        }
    }
    VisibilityGraph {
        weights: sums.iter().map(|&s| (s as f64).cbrt()).collect(),
        adjacency: edges.into_iter().map(|e| e.into_iter().collect()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub parts: usize,
    /// Largest part weight over the mean part weight.
    pub balance: f64,
}

impl Partition {
    pub fn from_assignment(graph: &VisibilityGraph, assignment: Vec<usize>) -> Partition {
        let parts = assignment.iter().max().map_or(1, |m| m + 1);
        let balance = balance(graph, &assignment, parts);
        Partition {
            assignment,
            parts,
            balance,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.parts];
        for &l in &self.assignment {
            s[l] += 1;
        }
        s
    }

    pub fn members(&self, l: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == l).collect()
    }

    pub fn cut_weight(&self, graph: &VisibilityGraph) -> u64 {
        let mut cut = 0;
        for (a, row) in graph.adjacency.iter().enumerate() {
            for &(b, w) in row {
                if a < b && self.assignment[a] != self.assignment[b] {
                    cut += w;
                }
            }
        }
        cut
    }
}

fn balance(graph: &VisibilityGraph, assignment: &[usize], parts: usize) -> f64 {
    let mut w = vec![0.0; parts];
    for (i, &l) in assignment.iter().enumerate() {
        w[l] += graph.weights[i];
    }
    let mean = w.iter().sum::<f64>() / parts as f64;
    if mean > 0.0 {
        w.iter().cloned().fold(0.0, f64::max) / mean
    } else {
        1.0
    }
}

/// Number of sub-blocks actually used for `cameras` cameras.
pub fn effective_parts(cameras: usize, requested: usize, min_cameras: usize) -> usize {
    requested.min(cameras / min_cameras.max(1)).max(1)
}

/// Splits the cameras into sub-blocks of at least `min_cameras` cameras with
/// a small cut, balancing node weights. Deterministic for a given seed.
pub fn partition(graph: &VisibilityGraph, requested: usize, min_cameras: usize, seed: u64) -> Partition {
    let m = graph.len();
    let parts = effective_parts(m, requested, min_cameras);
    let mut assignment = vec![0; m];
    if parts > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<usize> = (0..m).collect();
        split(graph, &all, parts, 0, min_cameras.max(1), &mut rng, &mut assignment);
    }
    Partition::from_assignment(graph, assignment)
}

/// Working graph of one bisection level.
#[derive(Debug, Clone)]
struct Graph {
    vwgt: Vec<f64>,
    count: Vec<usize>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    fn induced(graph: &VisibilityGraph, vertices: &[usize]) -> Graph {
        let mut local = vec![usize::MAX; graph.len()];
        for (i, &v) in vertices.iter().enumerate() {
            local[v] = i;
        }
        let adj = vertices
            .iter()
            .map(|&v| {
                graph.adjacency[v]
                    .iter()
                    .filter(|(u, _)| local[*u] != usize::MAX)
                    .map(|&(u, w)| (local[u], w as f64))
                    .collect()
            })
            .collect();
        Graph {
            vwgt: vertices.iter().map(|&v| graph.weights[v]).collect(),
            count: vec![1; vertices.len()],
            adj,
        }
    }

    fn len(&self) -> usize {
        self.vwgt.len()
    }

    /// Heavy-edge matching; returns the coarse graph and the fine→coarse map.
    fn coarsen(&self, rng: &mut ChaCha8Rng) -> (Graph, Vec<usize>) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut mate = vec![usize::MAX; n];
        for &v in &order {
            if mate[v] != usize::MAX {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for &(u, w) in &self.adj[v] {
                if mate[u] == usize::MAX && u != v && best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((u, w));
                }
            }
            match best {
                Some((u, _)) => {
                    mate[v] = u;
                    mate[u] = v;
                }
                None => mate[v] = v,
            }
        }
        let mut map = vec![usize::MAX; n];
        let mut nc = 0;
        for v in 0..n {
            if map[v] == usize::MAX {
                map[v] = nc;
                map[mate[v]] = nc;
                nc += 1;
            }
        }
        let mut vwgt = vec![0.0; nc];
        let mut count = vec![0; nc];
        let mut edges: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nc];
        for v in 0..n {
            let c = map[v];
            vwgt[c] += self.vwgt[v];
            count[c] += self.count[v];
            for &(u, w) in &self.adj[v] {
                let cu = map[u];
                if cu != c {
                    *edges[c].entry(cu).or_default() += w;
                }
            }
        }
        let coarse = Graph {
            vwgt,
            count,
            adj: edges.into_iter().map(|e| e.into_iter().collect()).collect(),
        };
        (coarse, map)
    }
}

/// Targets of one bisection: weight share of side 0 and camera minimums.
#[derive(Debug, Clone, Copy)]
struct Targets {
    weight0: f64,
    tolerance: f64,
    min_count: [usize; 2],
}

struct Bisection<'a> {
    g: &'a Graph,
    side: Vec<u8>,
    weight: [f64; 2],
    count: [usize; 2],
}

impl<'a> Bisection<'a> {
    fn new(g: &'a Graph, side: Vec<u8>) -> Self {
        let mut weight = [0.0; 2];
        let mut count = [0; 2];
        for v in 0..g.len() {
            weight[side[v] as usize] += g.vwgt[v];
            count[side[v] as usize] += g.count[v];
        }
        Bisection { g, side, weight, count }
    }

    fn gain(&self, v: usize) -> f64 {
        let s = self.side[v];
        self.g.adj[v]
            .iter()
            .map(|&(u, w)| if self.side[u] == s { -w } else { w })
            .sum()
    }

    fn cut(&self) -> f64 {
        let mut c = 0.0;
        for v in 0..self.g.len() {
            for &(u, w) in &self.g.adj[v] {
                if v < u && self.side[v] != self.side[u] {
                    c += w;
                }
            }
        }
        c
    }

    fn imbalance(&self, t: &Targets) -> f64 {
        (self.weight[0] - t.weight0).abs()
    }

    fn feasible_counts(&self, t: &Targets) -> bool {
        self.count[0] >= t.min_count[0] && self.count[1] >= t.min_count[1]
    }

    fn move_vertex(&mut self, v: usize) {
        let s = self.side[v] as usize;
        self.weight[s] -= self.g.vwgt[v];
        self.weight[1 - s] += self.g.vwgt[v];
        self.count[s] -= self.g.count[v];
        self.count[1 - s] += self.g.count[v];
        self.side[v] = 1 - s as u8;
    }

    fn allows(&self, v: usize, t: &Targets) -> bool {
        let s = self.side[v] as usize;
        if self.count[s] < t.min_count[s] + self.g.count[v] {
            return false;
        }
        let w0 = if s == 0 { self.weight[0] - self.g.vwgt[v] } else { self.weight[0] + self.g.vwgt[v] };
        let after = (w0 - t.weight0).abs();
        after <= t.tolerance || after < self.imbalance(t)
    }

    fn boundary(&self) -> Vec<usize> {
        (0..self.g.len())
            .filter(|&v| self.g.adj[v].iter().any(|&(u, _)| self.side[u] != self.side[v]))
            .collect()
    }

    /// Greedy boundary passes: positive-gain moves that keep the balance.
    fn refine(&mut self, t: &Targets) {
        for _ in 0..10 {
            let mut moved = false;
            let mut cands: Vec<(f64, usize)> = self.boundary().into_iter().map(|v| (self.gain(v), v)).collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (_, v) in cands {
                let g = self.gain(v);
                if g > 0.0 && self.allows(v, t) {
                    self.move_vertex(v);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }

    /// Moves the cheapest vertices off the side that is too heavy or keeps
    /// the other side below its camera minimum.
    fn rebalance(&mut self, t: &Targets) {
        for _ in 0..self.g.len() {
            let from = if self.count[0] < t.min_count[0] {
                1
            } else if self.count[1] < t.min_count[1] {
                0
            } else if self.imbalance(t) > t.tolerance {
                usize::from(self.weight[0] < t.weight0)
            } else {
                return;
            };
            let mut cands: Vec<usize> = self.boundary().into_iter().filter(|&v| self.side[v] as usize == from).collect();
            if cands.is_empty() {
                cands = (0..self.g.len()).filter(|&v| self.side[v] as usize == from).collect();
            }
            let counts_ok = self.feasible_counts(t);
            let best = cands
                .into_iter()
                .filter(|&v| self.count[from] >= self.g.count[v] + t.min_count[from])
                .filter(|&v| !counts_ok || self.allows(v, t))
                .max_by(|&a, &b| self.gain(a).total_cmp(&self.gain(b)).then(b.cmp(&a)));
            match best {
                Some(v) => self.move_vertex(v),
                None => return,
            }
        }
    }
}

/// Greedy growing of side 0 from `seed` until it holds its weight share.
fn grow(g: &Graph, seed: usize, t: &Targets) -> Vec<u8> {
    let n = g.len();
    let mut side = vec![1u8; n];
    let mut w0 = 0.0;
    let mut conn = vec![0.0f64; n];
    let mut in_frontier = vec![false; n];
    let mut frontier: Vec<usize> = vec![seed];
    in_frontier[seed] = true;
    loop {
        let pick = if frontier.is_empty() {
            (0..n).find(|&v| side[v] == 1)
        } else {
            let (pos, _) = frontier
                .iter()
                .enumerate()
                .max_by(|a, b| conn[*a.1].total_cmp(&conn[*b.1]).then(b.1.cmp(a.1)))
                .expect("non-empty frontier");
            Some(frontier.swap_remove(pos))
        };
        let Some(v) = pick else { break };
        if w0 + g.vwgt[v] / 2.0 > t.weight0 {
            break;
        }
        side[v] = 0;
        w0 += g.vwgt[v];
        for &(u, w) in &g.adj[v] {
            conn[u] += w;
            if side[u] == 1 && !in_frontier[u] {
                in_frontier[u] = true;
                frontier.push(u);
            }
        }
    }
    side
}

fn bisect(g: &Graph, t: &Targets, rng: &mut ChaCha8Rng) -> Vec<u8> {
    const COARSEST: usize = 40;
    if g.len() > COARSEST {
        let (coarse, map) = g.coarsen(rng);
        if coarse.len() < g.len() * 19 / 20 {
            let coarse_side = bisect(&coarse, t, rng);
            let side: Vec<u8> = map.iter().map(|&c| coarse_side[c]).collect();
            let mut b = Bisection::new(g, side);
            b.rebalance(t);
            b.refine(t);
            return b.side;
        }
    }
    let mut best: Option<(bool, f64, f64, Vec<u8>)> = None;
    let mut seeds: Vec<usize> = (0..g.len()).collect();
    seeds.shuffle(rng);
    for &seed in seeds.iter().take(8) {
        let mut b = Bisection::new(g, grow(g, seed, t));
        b.rebalance(t);
        b.refine(t);
        let ok = b.feasible_counts(t) && b.imbalance(t) <= t.tolerance;
        let key = (ok, b.cut(), b.imbalance(t));
        let better = match &best {
            None => true,
            Some((bok, bcut, bimb, _)) => (key.0 && !bok) || (key.0 == *bok && (key.1, key.2) < (*bcut, *bimb)),
        };
        if better {
            best = Some((key.0, key.1, key.2, b.side));
        }
    }
    best.map(|b| b.3).unwrap_or_else(|| vec![0; g.len()])
}

fn split(
    graph: &VisibilityGraph,
    vertices: &[usize],
    parts: usize,
    first_label: usize,
    min_cameras: usize,
    rng: &mut ChaCha8Rng,
    assignment: &mut [usize],
) {
    if parts == 1 {
        for &v in vertices {
            assignment[v] = first_label;
        }
        return;
    }
    let k0 = parts / 2;
    let g = Graph::induced(graph, vertices);
    let total: f64 = g.vwgt.iter().sum();
    let targets = Targets {
        weight0: total * k0 as f64 / parts as f64,
        tolerance: 0.03 * total / parts as f64,
        min_count: [k0 * min_cameras, (parts - k0) * min_cameras],
    };
    let side = bisect(&g, &targets, rng);
    let mut b = Bisection::new(&g, side);
    b.rebalance(&targets);
    let left: Vec<usize> = vertices.iter().enumerate().filter(|(i, _)| b.side[*i] == 0).map(|(_, &v)| v).collect();
    let right: Vec<usize> = vertices.iter().enumerate().filter(|(i, _)| b.side[*i] == 1).map(|(_, &v)| v).collect();
    split(graph, &left, k0, first_label, min_cameras, rng, assignment);
    split(graph, &right, parts - k0, first_label + k0, min_cameras, rng, assignment);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockio::{generate, GeneratorSpec};
    use crate::model::{Camera, Intrinsics, Observation, Point3D};
    use nalgebra::{Rotation3, Vector2, Vector3};

    fn grid_graph(strips: usize, per_strip: usize, points: usize) -> VisibilityGraph {
        let spec = GeneratorSpec {
            strips,
            cameras_per_strip: per_strip,
            points_per_camera: points,
            ..Default::default()
        };
        build_visibility_graph(&generate(&spec).unwrap().ground_truth)
    }

    fn toy_block(cameras: usize, obs: &[(usize, usize)]) -> Block {
        let points = obs.iter().map(|o| o.1).max().map_or(0, |m| m + 1);
        Block {
            cameras: (0..cameras)
                .map(|_| Camera::new(Rotation3::identity(), Vector3::zeros(), Intrinsics::PoseOnly))
                .collect(),
            points: (0..points).map(|_| Point3D::new(Vector3::zeros())).collect(),
            observations: obs.iter().map(|&(c, p)| Observation::new(c, p, Vector2::zeros())).collect(),
            shared_calibration: None,
        }
    }

    #[test]
    fn weight_is_cube_root_of_observation_count() {
        let b = toy_block(4, &[(0, 0), (1, 0), (2, 0), (3, 1), (2, 1)]);
        let g = build_visibility_graph(&b);
        assert_eq!(g.weights[0], 3f64.cbrt());
        assert_eq!(g.weights[2], 5f64.cbrt());
        assert_eq!(g.edge(0, 3), None);
        assert_eq!(g.edge(0, 1), Some(1));
        assert_eq!(g.edge(2, 3), Some(1));
    }

    #[test]
    fn weights_match_double_loop_recount() {
        let spec = GeneratorSpec {
            strips: 2,
            cameras_per_strip: 6,
            points_per_camera: 30,
            ..Default::default()
        };
        let b = generate(&spec).unwrap().ground_truth;
        let g = build_visibility_graph(&b);
        for i in 0..b.cameras.len() {
            let mut sum = 0usize;
            for oi in b.observations.iter().filter(|o| o.camera == i) {
                sum += b.observations.iter().filter(|o| o.point == oi.point).count();
            }
            assert!((g.weights[i] - (sum as f64).cbrt()).abs() < 1e-12);
            for j in 0..b.cameras.len() {
                if i == j {
                    continue;
                }
                let shared = b
                    .observations
                    .iter()
                    .filter(|o| o.camera == i)
                    .filter(|o| b.observations.iter().any(|p| p.camera == j && p.point == o.point))
                    .count() as u64;
                assert_eq!(g.edge(i, j).unwrap_or(0), shared);
            }
        }
    }

    #[test]
    fn one_part_requested() {
        let g = grid_graph(2, 10, 10);
        let p = partition(&g, 1, 70, 0);
        assert!(p.assignment.iter().all(|&l| l == 0));
        assert_eq!(p.parts, 1);
    }

    #[test]
    fn minimum_size_caps_the_part_count() {
        assert_eq!(effective_parts(363, 24, 70), 5);
        assert_eq!(effective_parts(139, 4, 70), 1);
        let g = grid_graph(3, 121, 10);
        let p = partition(&g, 24, 70, 1);
        assert_eq!(p.parts, 5);
        assert!(p.sizes().iter().all(|&s| s >= 70), "{:?}", p.sizes());
        assert!(p.balance <= 1.5, "{}", p.balance);
    }

    #[test]
    fn disjoint_components_are_separated() {
        let mut obs = Vec::new();
        for c in 0..100 {
            obs.push((c, c));
            obs.push(((c + 1) % 100, c));
            obs.push((100 + c, 100 + c));
            obs.push((100 + (c + 1) % 100, 100 + c));
        }
        let g = build_visibility_graph(&toy_block(200, &obs));
        let p = partition(&g, 2, 50, 3);
        assert_eq!(p.cut_weight(&g), 0);
        assert!(p.assignment[..100].iter().all(|&l| l == p.assignment[0]));
        assert!(p.assignment[100..].iter().all(|&l| l == p.assignment[100]));
        assert_ne!(p.assignment[0], p.assignment[100]);
    }

    #[test]
    fn same_seed_same_assignment() {
        let g = grid_graph(5, 40, 10);
        let a = partition(&g, 4, 40, 9);
        let b = partition(&g, 4, 40, 9);
        assert_eq!(a, b);
        assert_eq!(a.parts, 4);
        assert!(a.balance <= 1.5);
        assert!(a.sizes().iter().all(|&s| s >= 40));
    }
}
