use std::collections::HashMap;

use super::{Correspondence, ImageId, Provenance};
use crate::geometry::PixelCoord;

/// A ray: one pixel position in one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub image: ImageId,
    pub pixel: PixelCoord<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    /// Vertex indices with `a < b`.
    pub a: usize,
    pub b: usize,
    pub confidence: f64,
    /// The correspondence that supplied the kept confidence.
    pub source: Correspondence,
}

type VertexKey = (ImageId, u64, u64);

fn key(image: ImageId, p: &PixelCoord<f64>) -> VertexKey {
    // +0.0 folds -0.0 into 0.0
    (image, (p.u + 0.0).to_bits(), (p.v + 0.0).to_bits())
}

/// Undirected correspondence graph over rays; one edge per vertex pair.
#[derive(Clone, Debug, Default)]
pub struct CorrespondenceGraph {
    vertices: Vec<Vertex>,
    vertex_index: HashMap<VertexKey, usize>,
    edges: Vec<Edge>,
    edge_index: HashMap<(usize, usize), usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl CorrespondenceGraph {
    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbours of a vertex as `(vertex, edge)` index pairs.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    /// Confidence of the edge between two vertices, in either order.
    pub fn edge_confidence(&self, a: usize, b: usize) -> Option<f64> {
        self.edge_index
            .get(&(a.min(b), a.max(b)))
            .map(|&e| self.edges[e].confidence)
    }

    pub fn vertex_id(&self, image: ImageId, pixel: &PixelCoord<f64>) -> Option<usize> {
        self.vertex_index.get(&key(image, pixel)).copied()
    }

    fn vertex(&mut self, image: ImageId, pixel: PixelCoord<f64>) -> usize {
        let k = key(image, &pixel);
        if let Some(&i) = self.vertex_index.get(&k) {
            return i;
        }
        let i = self.vertices.len();
        self.vertices.push(Vertex { image, pixel });
        self.vertex_index.insert(k, i);
        self.adjacency.push(Vec::new());
        i
    }

    fn add(&mut self, c: &Correspondence) {
        let q = self.vertex(c.image_q, c.p_q);
        let s = self.vertex(c.image_s, c.p_s);
        let (a, b) = (q.min(s), q.max(s));
        match self.edge_index.get(&(a, b)) {
            Some(&e) => {
                if c.confidence > self.edges[e].confidence {
                    self.edges[e].confidence = c.confidence;
                    self.edges[e].source = *c;
                }
            }
            None => {
                let e = self.edges.len();
                self.edges.push(Edge { a, b, confidence: c.confidence, source: *c });
                self.edge_index.insert((a, b), e);
                self.adjacency[a].push((b, e));
                self.adjacency[b].push((a, e));
            }
        }
    }
}

/// One vertex per distinct (image, pixel) and one undirected edge per
/// correspondence; repeated pairs keep the highest confidence.
pub fn build_graph(correspondences: &[Correspondence]) -> CorrespondenceGraph {
    let mut g = CorrespondenceGraph::default();
    for c in correspondences {
        g.add(c);
    }
    for adj in &mut g.adjacency {
        adj.sort_unstable();
    }
    g
}

/// All original edges followed by propagated pairs.
///
/// A pair of vertices in different images at shortest-path distance `d` with
/// `2 ≤ d ≤ d_max` gains a correspondence whose confidence is the product of
/// the edge confidences along the best shortest path. Propagated pairs are
/// ordered by source vertex, then target vertex.
pub fn propagate(graph: &CorrespondenceGraph, d_max: usize) -> Vec<Correspondence> {
    assert!(d_max >= 1, "d_max must be at least 1");
    let mut out: Vec<Correspondence> = graph
        .edges
        .iter()
        .map(|e| Correspondence { confidence: e.confidence, ..e.source })
        .collect();
    if d_max == 1 {
        return out;
    }

    let n = graph.vertices.len();
    let mut dist = vec![usize::MAX; n];
    let mut best = vec![0.0f64; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();
    let mut next: Vec<usize> = Vec::new();
    let mut found: Vec<usize> = Vec::new();

    for src in 0..n {
        dist[src] = 0;
        best[src] = 1.0;
        touched.push(src);
        frontier.clear();
        frontier.push(src);
        found.clear();
        for depth in 1..=d_max {
            next.clear();
            for &u in &frontier {
                for &(v, e) in &graph.adjacency[u] {
                    let cand = best[u] * graph.edges[e].confidence;
                    if dist[v] == usize::MAX {
                        dist[v] = depth;
                        best[v] = cand;
                        touched.push(v);
                        next.push(v);
                    } else if dist[v] == depth && cand > best[v] {
                        best[v] = cand;
                    }
                }
            }
            if depth >= 2 {
                found.extend(next.iter().copied().filter(|&v| v > src));
            }
            std::mem::swap(&mut frontier, &mut next);
            if frontier.is_empty() {
                break;
            }
        }
        found.sort_unstable();
        let vs = graph.vertices[src];
        for &v in &found {
            let vt = graph.vertices[v];
            if vt.image == vs.image {
                continue;
            }
            let c = Correspondence {
                image_q: vs.image,
                image_s: vt.image,
                p_q: vs.pixel,
                p_s: vt.pixel,
                confidence: best[v],
                provenance: Provenance::Propagated,
            };
            out.push(c.canonical());
        }
        for &t in &touched {
            dist[t] = usize::MAX;
        }
        touched.clear();
    }
    out
}
