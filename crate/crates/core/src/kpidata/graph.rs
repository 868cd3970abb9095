use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::KpiError;

/// A cell and its position in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSite {
    pub cell_id: u32,
    pub x_km: f64,
    pub y_km: f64,
}

/// Undirected edge, stored with `cell_a < cell_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub cell_a: u32,
    pub cell_b: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum GraphRule {
    /// Each cell linked to its `k` nearest cells, symmetrized by union.
    KNearest { k: usize },
    /// Cells within `r_km` of each other are linked.
    Radius { r_km: f64 },
}

/// Undirected cell adjacency. Node indices follow the order of `cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    cells: Vec<CellSite>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
    index: HashMap<u32, usize>,
}

impl CellGraph {
    /// Checks ids are distinct, edges reference known cells and contain no
    /// self-loops. Duplicate and reversed edges are merged.
    pub fn new(cells: Vec<CellSite>, edges: &[(u32, u32)]) -> Result<Self, KpiError> {
        let mut index = HashMap::with_capacity(cells.len());
        for (i, c) in cells.iter().enumerate() {
            if !(c.x_km.is_finite() && c.y_km.is_finite()) {
                return Err(KpiError::Parameter(format!(
                    "cell {} has a non-finite position",
                    c.cell_id
                )));
            }
            if index.insert(c.cell_id, i).is_some() {
                return Err(KpiError::Parameter(format!(
                    "duplicate cell id {}",
                    c.cell_id
                )));
            }
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(KpiError::Parameter(format!("self-loop on cell {a}")));
            }
            for id in [a, b] {
                if !index.contains_key(&id) {
                    return Err(KpiError::Parameter(format!(
                        "edge endpoint {id} is not a cell"
                    )));
                }
            }
            set.insert(Edge {
                cell_a: a.min(b),
                cell_b: a.max(b),
            });
        }
        let edges: Vec<Edge> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); cells.len()];
        for e in &edges {
            let (i, j) = (index[&e.cell_a], index[&e.cell_b]);
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            cells,
            edges,
            adjacency,
            index,
        })
    }

    pub fn cells(&self) -> &[CellSite] {
        &self.cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn index_of(&self, cell_id: u32) -> Option<usize> {
        self.index.get(&cell_id).copied()
    }

    /// Neighbor node indices of node `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Hop counts from node `from`; `None` for unreachable nodes.
    pub fn hop_distances(&self, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells.len()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("visited");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Same cells, no edges.
    pub fn without_edges(&self) -> Self {
        Self::new(self.cells.clone(), &[]).expect("cells already validated")
    }

    pub fn distance_km(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.cells[i], &self.cells[j]);
        (a.x_km - b.x_km).hypot(a.y_km - b.y_km)
    }
}

pub fn build_graph(coords: &[CellSite], rule: GraphRule) -> Result<CellGraph, KpiError> {
    let n = coords.len();
    let dist = |i: usize, j: usize| {
        (coords[i].x_km - coords[j].x_km).hypot(coords[i].y_km - coords[j].y_km)
    };
    let mut edges = Vec::new();
    match rule {
        GraphRule::KNearest { k } => {
            if k >= n {
                return Err(KpiError::Parameter(format!(
                    "k = {k} needs more than {n} cells"
                )));
            }
            for i in 0..n {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| {
                    dist(i, a)
                        .total_cmp(&dist(i, b))
                        .then(coords[a].cell_id.cmp(&coords[b].cell_id))
                });
                edges.extend(
                    others[..k]
                        .iter()
                        .map(|&j| (coords[i].cell_id, coords[j].cell_id)),
                );
            }
        }
        GraphRule::Radius { r_km } => {
            if !(r_km >= 0.0) {
                return Err(KpiError::Parameter("radius must be >= 0".into()));
            }
            for i in 0..n {
                for j in i + 1..n {
                    if dist(i, j) <= r_km {
                        edges.push((coords[i].cell_id, coords[j].cell_id));
                    }
                }
            }
        }
    }
    CellGraph::new(coords.to_vec(), &edges)
}
