//! McShane envelopes `x -> inf_w f(w) + λ|x − w|` over finite point sets
//! and polyline chains, with a bounding-volume tree for pruning.

use crate::linalg::Point;

use super::ExtensionError;

/// Points with values that are `constant`-Lipschitz among themselves.
#[derive(Debug, Clone)]
pub struct LipschitzSample {
    points: Vec<Point>,
    values: Vec<f64>,
    constant: f64,
}

impl LipschitzSample {
    /// Validates all pairs; the offending pair is reported on failure.
    pub fn new(points: Vec<Point>, values: Vec<f64>, constant: f64) -> Result<Self, ExtensionError> {
        if points.is_empty() || points.len() != values.len() {
            return Err(ExtensionError::EmptySample);
        }
        if !(constant > 0.0 && constant.is_finite()) {
            return Err(ExtensionError::InvalidConstant(constant));
        }
        let sample = LipschitzSample { points, values, constant };
        Envelope::build(constant, &sample.points, &sample.values, &[])?;
        Ok(sample)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn envelope(&self) -> Envelope {
        Envelope::build(self.constant, &self.points, &self.values, &[]).expect("validated on construction")
    }
}

/// Direct evaluation of the envelope (linear in the sample size).
pub fn mcshane_extend(sample: &LipschitzSample, x: &Point) -> f64 {
    sample
        .points
        .iter()
        .zip(&sample.values)
        .map(|(p, v)| v + sample.constant * (x - p).norm())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy)]
enum Prim {
    Vertex(usize),
    Segment(usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    vmin: f64,
    /// Children, or the primitive range for leaves.
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Inner(usize, usize),
    Leaf(usize, usize),
}

const LEAF_SIZE: usize = 8;

/// Envelope over vertices and straight segments between vertices, with
/// values interpolated linearly along each segment.
#[derive(Debug, Clone)]
pub struct Envelope {
    lambda: f64,
    dim: usize,
    coords: Vec<f64>,
    values: Vec<f64>,
    prims: Vec<Prim>,
    nodes: Vec<Node>,
}

impl Envelope {
    /// Builds the tree and checks that the envelope reproduces every vertex
    /// value (equivalent to pairwise consistency of the vertices).
    pub fn build(lambda: f64, points: &[Point], values: &[f64], segments: &[(usize, usize)]) -> Result<Self, ExtensionError> {
        if points.is_empty() {
            return Err(ExtensionError::EmptySample);
        }
        let dim = points[0].len();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            coords.extend(p.iter());
        }
        let mut prims: Vec<Prim> = (0..points.len()).map(Prim::Vertex).collect();
        prims.extend(segments.iter().map(|&(a, b)| Prim::Segment(a, b)));
        let mut env = Envelope { lambda, dim, coords, values: values.to_vec(), prims, nodes: Vec::new() };
        let n = env.prims.len();
        env.build_node(0, n);
        env.check_vertices()?;
        Ok(env)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn vertex_count(&self) -> usize {
        self.values.len()
    }

    fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn centroid(&self, p: Prim, k: usize) -> f64 {
        match p {
            Prim::Vertex(i) => self.vertex(i)[k],
            Prim::Segment(a, b) => 0.5 * (self.vertex(a)[k] + self.vertex(b)[k]),
        }
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut vmin = f64::INFINITY;
        for p in &self.prims[start..end] {
            let ids = match *p {
                Prim::Vertex(i) => [i, i],
                Prim::Segment(a, b) => [a, b],
            };
            for i in ids {
                for k in 0..dim {
                    let c = self.coords[i * dim + k];
                    lo[k] = lo[k].min(c);
                    hi[k] = hi[k].max(c);
                }
                vmin = vmin.min(self.values[i]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { lo: lo.clone(), hi: hi.clone(), vmin, kind: NodeKind::Leaf(start, end) });
        if end - start > LEAF_SIZE {
            let axis = (0..dim).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
            let mid = (start + end) / 2;
            let mut slice = self.prims[start..end].to_vec();
            slice.select_nth_unstable_by(mid - start, |&p, &q| self.centroid(p, axis).total_cmp(&self.centroid(q, axis)));
            self.prims[start..end].copy_from_slice(&slice);
            let l = self.build_node(start, mid);
            let r = self.build_node(mid, end);
            self.nodes[id].kind = NodeKind::Inner(l, r);
        }
        id
    }

    fn box_dist(&self, node: &Node, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.dim {
            let d = (node.lo[k] - x[k]).max(x[k] - node.hi[k]).max(0.0);
            s += d * d;
        }
        s.sqrt()
    }

    fn prim_value(&self, p: Prim, x: &[f64]) -> f64 {
        match p {
            Prim::Vertex(i) => self.values[i] + self.lambda * dist(self.vertex(i), x),
            Prim::Segment(a, b) => self.segment_value(a, b, x),
        }
    }

    /// Minimum over the segment of `g(s) + λ|x − s|`, `g` linear.
    fn segment_value(&self, a: usize, b: usize, x: &[f64]) -> f64 {
        let (pa, pb) = (self.vertex(a), self.vertex(b));
        let (ga, gb) = (self.values[a], self.values[b]);
        let mut len2 = 0.0;
        let mut proj = 0.0;
        let mut xa2 = 0.0;
        for k in 0..self.dim {
            let d = pb[k] - pa[k];
            let e = x[k] - pa[k];
            len2 += d * d;
            proj += d * e;
            xa2 += e * e;
        }
        let ends = (ga + self.lambda * xa2.sqrt()).min(gb + self.lambda * dist(pb, x));
        if len2 == 0.0 {
            return ends;
        }
        let len = len2.sqrt();
        let tau0 = proj / len;
        let h = (xa2 - tau0 * tau0).max(0.0).sqrt();
        let slope = (gb - ga) / len;
        let q = -slope / self.lambda;
        if q.abs() >= 1.0 {
            return ends;
        }
        let tau = (tau0 + q * h / (1.0 - q * q).sqrt()).clamp(0.0, len);
        let off = tau - tau0;
        ends.min(ga + slope * tau + self.lambda * (off * off + h * h).sqrt())
    }

    /// Envelope value and the index of a minimizing vertex (the nearer
    /// endpoint for segments).
    pub fn eval_with_witness(&self, x: &Point) -> (f64, usize) {
        let x = x.as_slice();
        let mut best = f64::INFINITY;
        let mut witness = 0;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.vmin + self.lambda * self.box_dist(node, x) >= best {
                continue;
            }
            match node.kind {
                NodeKind::Leaf(s, e) => {
                    for &p in &self.prims[s..e] {
                        let v = self.prim_value(p, x);
                        if v < best {
                            best = v;
                            witness = match p {
                                Prim::Vertex(i) => i,
                                Prim::Segment(a, b) => {
                                    if dist(self.vertex(a), x) <= dist(self.vertex(b), x) {
                                        a
                                    } else {
                                        b
                                    }
                                }
                            };
                        }
                    }
                }
                NodeKind::Inner(l, r) => {
                    let bl = self.nodes[l].vmin + self.lambda * self.box_dist(&self.nodes[l], x);
                    let br = self.nodes[r].vmin + self.lambda * self.box_dist(&self.nodes[r], x);
                    if bl < br {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
            }
        }
        (best, witness)
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.eval_with_witness(x).0
    }

    fn check_vertices(&self) -> Result<(), ExtensionError> {
        use rayon::prelude::*;
        let bad = (0..self.values.len()).into_par_iter().find_map_any(|i| {
            let p = Point::from_column_slice(self.vertex(i));
            let (v, j) = self.eval_with_witness(&p);
            let tol = 1e-12 * (1.0 + self.values[i].abs());
            if v < self.values[i] - tol {
                Some((i, j))
            } else {
                None
            }
        });
        match bad {
            None => Ok(()),
            Some((i, j)) => {
                let d = dist(self.vertex(i), self.vertex(j));
                Err(ExtensionError::InconsistentSample {
                    first: self.vertex(i).to_vec(),
                    second: self.vertex(j).to_vec(),
                    ratio: (self.values[i] - self.values[j]).abs() / (self.lambda * d),
                })
            }
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;
    use rand::Rng;

    use super::*;
    use crate::sampling::rng;

    fn pt(v: &[f64]) -> Point {
        DVector::from_vec(v.to_vec())
    }

    #[test]
    fn single_point() {
        let s = LipschitzSample::new(vec![pt(&[0.0, 0.0])], vec![0.0], 2.0).unwrap();
        assert_eq!(mcshane_extend(&s, &pt(&[3.0, 4.0])), 10.0);
        assert_eq!(s.envelope().eval(&pt(&[3.0, 4.0])), 10.0);
    }

    #[test]
    fn two_points_on_line() {
        let s = LipschitzSample::new(vec![pt(&[0.0]), pt(&[2.0])], vec![0.0, 1.0], 1.0).unwrap();
        assert_eq!(mcshane_extend(&s, &pt(&[1.0])), 1.0);
        assert_eq!(s.envelope().eval(&pt(&[1.0])), 1.0);
    }

    #[test]
    fn inconsistent_pair_reported() {
        match LipschitzSample::new(vec![pt(&[0.0]), pt(&[2.0])], vec![0.0, 3.0], 1.0) {
            Err(ExtensionError::InconsistentSample { first, second, ratio }) => {
                let mut pair = [first[0], second[0]];
                pair.sort_by(f64::total_cmp);
                assert_eq!(pair, [0.0, 2.0]);
                assert!((ratio - 1.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tree_matches_brute_force() {
        let mut r = rng(3);
        let pts: Vec<Point> = (0..3000).map(|_| pt(&[r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)])).collect();
        let vals: Vec<f64> = pts.iter().map(|p| (p[0] * 0.7).sin() + 0.3 * p[1]).collect();
        let s = LipschitzSample::new(pts, vals, 1.5).unwrap();
        let env = s.envelope();
        for _ in 0..2000 {
            let x = pt(&[r.gen_range(-8.0..8.0), r.gen_range(-8.0..8.0)]);
            assert_eq!(env.eval(&x), mcshane_extend(&s, &x));
        }
        for (p, v) in s.points().iter().zip(s.values()) {
            assert_eq!(env.eval(p), *v);
        }
    }

    #[test]
    fn segment_minimum_matches_dense_sampling() {
        let mut r = rng(9);
        for _ in 0..200 {
            let a = pt(&[r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]);
            let b = pt(&[r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]);
            let lambda = 2.0;
            let ga = r.gen_range(-1.0..1.0);
            let gb = ga + r.gen_range(-1.0..1.0) * lambda * (&b - &a).norm();
            let env = Envelope::build(lambda, &[a.clone(), b.clone()], &[ga, gb], &[(0, 1)]).unwrap();
            let x = pt(&[r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)]);
            let dense = (0..=20000)
                .map(|k| {
                    let s = k as f64 / 20000.0;
                    ga + s * (gb - ga) + lambda * (&x - (&a + (&b - &a) * s)).norm()
                })
                .fold(f64::INFINITY, f64::min);
            let v = env.eval(&x);
            assert!(v <= dense + 1e-12 && v >= dense - 1e-6, "{v} vs {dense}");
        }
    }
}
