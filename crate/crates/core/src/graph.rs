//! Station network: stations, undirected links, neighborhoods, and the
//! symmetric-normalized adjacency `D^-1/2 (A + I) D^-1/2`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::io::{self, IoError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown station id `{0}`")]
    UnknownStation(String),
    #[error("edge from `{0}` to itself; use the self_loops flag instead")]
    SelfEdge(String),
    #[error("duplicate station id `{0}`")]
    DuplicateStation(String),
    #[error("station `{id}` has invalid coordinates ({latitude}, {longitude})")]
    InvalidCoordinate { id: String, latitude: f64, longitude: f64 },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    #[serde(rename = "station_id")]
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, latitude: f64, longitude: f64) -> Self {
        Self { id: id.into(), latitude, longitude }
    }
}

/// Immutable station graph. Node `i` is `stations[i]`; all tensors index
/// stations in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitGraph {
    stations: Vec<Station>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    self_loops: bool,
    index: HashMap<String, usize>,
}

impl TransitGraph {
    /// Builds the graph; duplicate links (in either direction) collapse to one.
    pub fn build<S: AsRef<str>>(
        stations: Vec<Station>,
        edge_list: &[(S, S)],
        self_loops: bool,
    ) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            let lat_ok = (-90.0..=90.0).contains(&s.latitude);
            let lon_ok = (-180.0..=180.0).contains(&s.longitude);
            if !lat_ok || !lon_ok {
                return Err(GraphError::InvalidCoordinate {
                    id: s.id.clone(),
                    latitude: s.latitude,
                    longitude: s.longitude,
                });
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateStation(s.id.clone()));
            }
        }
        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| GraphError::UnknownStation(id.to_string()));
        let mut set = BTreeSet::new();
        for (a, b) in edge_list {
            let (i, j) = (lookup(a.as_ref())?, lookup(b.as_ref())?);
            if i == j {
                return Err(GraphError::SelfEdge(a.as_ref().to_string()));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let neighbors = Self::neighbor_lists(stations.len(), &edges, self_loops);
        Ok(Self { stations, edges, neighbors, self_loops, index })
    }

    fn neighbor_lists(n: usize, edges: &[(usize, usize)], self_loops: bool) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); n];
        for &(i, j) in edges {
            lists[i].push(j);
            lists[j].push(i);
        }
        for (i, l) in lists.iter_mut().enumerate() {
            if self_loops {
                l.push(i);
            }
            l.sort_unstable();
        }
        lists
    }

    /// Same stations and links with the self-loop flag replaced.
    pub fn with_self_loops(&self, self_loops: bool) -> Self {
        let neighbors = Self::neighbor_lists(self.stations.len(), &self.edges, self_loops);
        Self { neighbors, self_loops, ..self.clone() }
    }

    /// Relabels nodes so that new node `k` is old node `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.len(), "permutation length");
        let stations = order.iter().map(|&o| self.stations[o].clone()).collect::<Vec<_>>();
        let edges: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|&(i, j)| (self.stations[i].id.clone(), self.stations[j].id.clone()))
            .collect();
        Self::build(stations, &edges, self.self_loops).expect("permutation of a valid graph")
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Undirected links as `(lo, hi)` index pairs, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    /// Sorted neighborhood of `i`, including `i` itself when self-loops are on.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `A + I` as a dense matrix.
    pub fn adjacency_with_identity(&self) -> Tensor {
        let n = self.len();
        let mut a = Tensor::identity(n);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }

    /// `D^-1/2 (A + I) D^-1/2` where `D` is the degree matrix of `A + I`.
    pub fn normalize_adjacency(&self) -> Tensor {
        let n = self.len();
        let mut degree = vec![1.0_f64; n];
        for &(i, j) in &self.edges {
            degree[i] += 1.0;
            degree[j] += 1.0;
        }
        let entry = |i: usize, j: usize| 1.0 / (degree[i] * degree[j]).sqrt();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            out.set(i, i, entry(i, i));
        }
        for &(i, j) in &self.edges {
            let v = entry(i, j);
            out.set(i, j, v);
            out.set(j, i, v);
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    from_id: String,
    to_id: String,
}

pub fn read_stations(path: &Path) -> Result<Vec<Station>, GraphError> {
    let mut rdr = io::csv_reader(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row.map_err(|e| IoError::csv(path, e))?);
    }
    Ok(out)
}

pub fn read_edges(path: &Path) -> Result<Vec<(String, String)>, GraphError> {
    let mut rdr = io::csv_reader(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<EdgeRow>() {
        let row = row.map_err(|e| IoError::csv(path, e))?;
        out.push((row.from_id, row.to_id));
    }
    Ok(out)
}

pub fn write_stations(path: &Path, stations: &[Station], comment: Option<&str>) -> Result<(), GraphError> {
    let mut w = io::csv_writer(path, comment)?;
    for s in stations {
        w.serialize(s).map_err(|e| IoError::csv(path, e))?;
    }
    Ok(io::finish(path, w)?)
}

pub fn write_edges(path: &Path, graph: &TransitGraph, comment: Option<&str>) -> Result<(), GraphError> {
    let mut w = io::csv_writer(path, comment)?;
    for &(i, j) in graph.edges() {
        let row = EdgeRow { from_id: graph.stations[i].id.clone(), to_id: graph.stations[j].id.clone() };
        w.serialize(row).map_err(|e| IoError::csv(path, e))?;
    }
    Ok(io::finish(path, w)?)
}

/// Reads the station and edge files and builds the graph.
pub fn load_graph(stations: &Path, edges: &Path, self_loops: bool) -> Result<TransitGraph, GraphError> {
    let s = read_stations(stations)?;
    let e = read_edges(edges)?;
    TransitGraph::build(s, &e, self_loops)
}
