use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bandwidth in kbit/s. Integer units keep reservation sums exact.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Bandwidth(pub u64);

impl Bandwidth {
    pub const ZERO: Bandwidth = Bandwidth(0);

    pub fn from_mbps(mbps: u64) -> Self {
        Bandwidth(mbps * 1_000)
    }

    pub fn kbps(self) -> u64 {
        self.0
    }

    pub fn as_mbps(self) -> f64 {
        self.0 as f64 / 1_000.0
    }
}

impl std::ops::Add for Bandwidth {
    type Output = Bandwidth;
    fn add(self, rhs: Bandwidth) -> Bandwidth {
        Bandwidth(self.0 + rhs.0)
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Mbps", self.as_mbps())
    }
}

/// 1GbE links.
pub const LINK_CAPACITY: Bandwidth = Bandwidth(1_000_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl VertexId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Which neighbours a grid vertex links to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    /// Up, down, left, right.
    #[default]
    VonNeumann,
    /// Additionally the four diagonals.
    Moore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("grid must be at least 2x2, got {rows}x{cols}")]
    TooSmall { rows: u32, cols: u32 },
}

/// A directed grid. Vertices are numbered row-major; each adjacency yields
/// one edge per direction.
#[derive(Debug, Clone)]
pub struct Topology {
    rows: u32,
    cols: u32,
    neighborhood: Neighborhood,
    capacity: Bandwidth,
    edges: Vec<Edge>,
    // (neighbour, edge), sorted by neighbour
    out_adj: Vec<Vec<(VertexId, EdgeId)>>,
    in_adj: Vec<Vec<(VertexId, EdgeId)>>,
}

impl Topology {
    pub fn grid(rows: u32, cols: u32) -> Result<Self, TopologyError> {
        Self::grid_with(rows, cols, Neighborhood::VonNeumann, LINK_CAPACITY)
    }

    pub fn grid_with(
        rows: u32,
        cols: u32,
        neighborhood: Neighborhood,
        capacity: Bandwidth,
    ) -> Result<Self, TopologyError> {
        if rows < 2 || cols < 2 {
            return Err(TopologyError::TooSmall { rows, cols });
        }
        let n = (rows * cols) as usize;
        let offsets: &[(i64, i64)] = match neighborhood {
            Neighborhood::VonNeumann => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Neighborhood::Moore => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        };
        let mut edges = Vec::new();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for r in 0..rows as i64 {
            for c in 0..cols as i64 {
                let u = VertexId((r * cols as i64 + c) as u32);
                for (dr, dc) in offsets {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    let v = VertexId((nr * cols as i64 + nc) as u32);
                    let e = EdgeId(edges.len() as u32);
                    edges.push(Edge { src: u, dst: v });
                    out_adj[u.index()].push((v, e));
                    in_adj[v.index()].push((u, e));
                }
            }
        }
        for adj in out_adj.iter_mut().chain(in_adj.iter_mut()) {
            adj.sort_unstable();
        }
        Ok(Topology {
            rows,
            cols,
            neighborhood,
            capacity,
            edges,
            out_adj,
            in_adj,
        })
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn neighborhood(&self) -> Neighborhood {
        self.neighborhood
    }

    pub fn capacity(&self) -> Bandwidth {
        self.capacity
    }

    pub fn vertex_count(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: EdgeId) -> Edge {
        self.edges[e.index()]
    }

    pub fn out_edges(&self, v: VertexId) -> &[(VertexId, EdgeId)] {
        &self.out_adj[v.index()]
    }

    pub fn in_edges(&self, v: VertexId) -> &[(VertexId, EdgeId)] {
        &self.in_adj[v.index()]
    }

    pub fn find_edge(&self, u: VertexId, v: VertexId) -> Option<EdgeId> {
        self.out_edges(u).iter().find(|(w, _)| *w == v).map(|(_, e)| *e)
    }

    pub fn vertex_at(&self, row: u32, col: u32) -> VertexId {
        VertexId(row * self.cols + col)
    }
}
