//! Static sensor network: positions, undirected links and consensus weights.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum separation between two sensors, in meters.
pub const DEFAULT_COINCIDENCE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    Cycle,
    Complete,
    EdgeList { edges: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    positions: Option<Vec<Vector3<f64>>>,
    weights: Option<DMatrix<f64>>,
}

impl SensorNetwork {
    /// Builds the link structure. Positions and weights are left unset.
    pub fn build(topology: &Topology, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::param(format!(
                "network needs at least 2 sensors, got {n}"
            )));
        }
        let edges: Vec<(usize, usize)> = match topology {
            Topology::Cycle if n == 2 => vec![(0, 1)],
            Topology::Cycle => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            Topology::Complete => (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .collect(),
            Topology::EdgeList { edges } => edges.clone(),
        };
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::param(format!(
                    "edge ({a}, {b}) references a node >= {n}"
                )));
            }
            if a == b {
                return Err(Error::param(format!("self-loop on node {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::param(format!("duplicate edge ({a}, {b})")));
            }
        }
        let edges: Vec<_> = seen.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(SensorNetwork {
            n,
            edges,
            neighbors,
            positions: None,
            weights: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Undirected edges as `(lo, hi)` pairs in ascending order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn positions(&self) -> Option<&[Vector3<f64>]> {
        self.positions.as_deref()
    }

    pub fn weights(&self) -> Option<&DMatrix<f64>> {
        self.weights.as_ref()
    }

    pub(crate) fn require_positions(&self) -> Result<&[Vector3<f64>]> {
        self.positions
            .as_deref()
            .ok_or_else(|| Error::param("sensor positions are not placed"))
    }

    pub(crate) fn require_weights(&self) -> Result<&DMatrix<f64>> {
        self.weights
            .as_ref()
            .ok_or_else(|| Error::param("consensus weights are not designed"))
    }

    pub fn place_sensors(self, positions: Vec<Vector3<f64>>) -> Result<Self> {
        self.place_sensors_with_eps(positions, DEFAULT_COINCIDENCE_EPS)
    }

    pub fn place_sensors_with_eps(
        mut self,
        positions: Vec<Vector3<f64>>,
        eps: f64,
    ) -> Result<Self> {
        if positions.len() != self.n {
            return Err(Error::param(format!(
                "expected {} sensor positions, got {}",
                self.n,
                positions.len()
            )));
        }
        if positions.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::param("sensor position has non-finite coordinates"));
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if (positions[i] - positions[j]).norm() <= eps {
                    return Err(Error::param(format!(
                        "sensors {i} and {j} coincide (separation <= {eps})"
                    )));
                }
            }
        }
        self.positions = Some(positions);
        Ok(self)
    }

    /// Uniform placement in the cube `[lo, hi]³`.
    pub fn place_uniform<R: Rng + ?Sized>(self, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::param(format!(
                "placement range [{lo}, {hi}] is empty"
            )));
        }
        let positions = (0..self.n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(lo..hi)))
            .collect();
        self.place_sensors(positions)
    }

    /// Undirected, so connected and strongly connected coincide.
    pub fn is_strongly_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Metropolis-Hastings weights: `w_ij = 1 / (1 + max(d_i, d_j))` on links,
    /// the diagonal takes the residual so rows and columns sum to one.
    pub fn design_weights(mut self) -> Result<Self> {
        if !self.is_strongly_connected() {
            return Err(Error::InvalidTopology(
                "consensus weights need a connected network".into(),
            ));
        }
        let mut w = DMatrix::zeros(self.n, self.n);
        for &(a, b) in &self.edges {
            let v = 1.0 / (1.0 + self.degree(a).max(self.degree(b)) as f64);
            w[(a, b)] = v;
            w[(b, a)] = v;
        }
        for i in 0..self.n {
            let off: f64 = self.neighbors[i].iter().map(|&j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        self.weights = Some(w);
        Ok(self)
    }

    /// Installs externally designed weights after checking the consensus invariants.
    pub fn with_weights(mut self, w: DMatrix<f64>) -> Result<Self> {
        validate_weights(&self, &w)?;
        self.weights = Some(w);
        Ok(self)
    }
}

fn validate_weights(net: &SensorNetwork, w: &DMatrix<f64>) -> Result<()> {
    let n = net.len();
    if w.shape() != (n, n) {
        return Err(Error::param(format!("weight matrix must be {n}x{n}")));
    }
    for i in 0..n {
        for j in 0..n {
            let v = w[(i, j)];
            if v != w[(j, i)] {
                return Err(Error::param(format!("weights not symmetric at ({i}, {j})")));
            }
            if i == j {
                if v < 0.0 {
                    return Err(Error::param(format!("negative self weight at {i}")));
                }
            } else if net.has_edge(i, j) {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::param(format!(
                        "link weight ({i}, {j}) = {v} outside (0, 1)"
                    )));
                }
            } else if v != 0.0 {
                return Err(Error::param(format!("weight on non-link ({i}, {j})")));
            }
        }
        let row: f64 = w.row(i).sum();
        if (row - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("row {i} sums to {row}")));
        }
    }
    Ok(())
}
