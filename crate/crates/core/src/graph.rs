//! Periodic regular graphs and a uniform adjacency view.
//!
//! Every builder returns the same [`Graph`] type. Vertices of 2D builds are
//! indexed row-major (`x + nx * y`), 3D builds stack layers on top of that
//! (`x + nx * (y + ny * z)`).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Undirected simple graph with compressed neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    adjacency: Vec<usize>,
    descriptor: String,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Self-loops and duplicate
    /// edges (in either orientation) are rejected.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        descriptor: impl Into<String>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("graph needs at least one vertex".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Graph(format!("edge ({a},{b}) out of range for n={n}")));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop at vertex {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(Error::Graph(format!("duplicate edge ({},{})", e.0, e.1)));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();

        let mut lists = vec![Vec::new(); n];
        for &(a, b) in &edges {
            lists[a].push(b);
            lists[b].push(a);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut adjacency = Vec::with_capacity(2 * edges.len());
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            adjacency.extend_from_slice(&list);
            offsets.push(adjacency.len());
        }
        Ok(Self {
            n,
            edges,
            offsets,
            adjacency,
            descriptor: descriptor.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges as `(i, j)` with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of vertex `i`.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Common degree if every vertex has the same number of neighbors.
    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.degree(0);
        (1..self.n).all(|i| self.degree(i) == d).then_some(d)
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    /// Two-column `i j` text listing, one edge per line.
    pub fn edge_list_text(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 8);
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    fn expect_regular(self, d: usize) -> Result<Self> {
        match self.regular_degree() {
            Some(got) if got == d => Ok(self),
            _ => Err(Error::Graph(format!(
                "construction {} is not {d}-regular at this size",
                self.descriptor
            ))),
        }
    }
}

/// Periodic 1D cluster: edges `(i, i+1 mod n)`.
pub fn build_ring(n: usize) -> Result<Graph> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Graph(format!(
            "1d-cluster needs an even number of vertices n >= 4 (got n={n})"
        )));
    }
    Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)), format!("1d-cluster:{n}"))?
        .expect_regular(2)
}

/// Edge set of one periodic 2D layer, in local (layer) indices.
fn layer_edges(d: usize, nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let idx = |x: usize, y: usize| (x % nx) + nx * (y % ny);
    let mut edges = Vec::with_capacity(nx * ny * d / 2);
    for y in 0..ny {
        for x in 0..nx {
            let here = idx(x, y);
            let even_col = x % 2 == 0;
            // Horizontal bonds; the brick wall keeps only those at even x+y.
            if d != 3 || (x + y) % 2 == 0 {
                edges.push((here, idx(x + 1, y)));
            }
            edges.push((here, idx(x, y + 1)));
            // "/" diagonal of the plaquette with lower-left corner (x, y).
            let slash = match d {
                6..=8 => true,
                5 => even_col,
                _ => false,
            };
            if slash {
                edges.push((here, idx(x + 1, y + 1)));
            }
            // "\" diagonal of the same plaquette.
            let backslash = match d {
                8 => true,
                7 => even_col,
                _ => false,
            };
            if backslash {
                edges.push((idx(x, y + 1), idx(x + 1, y)));
            }
        }
    }
    edges
}

fn check_layer(d: usize, nx: usize, ny: usize) -> Result<()> {
    if !(3..=8).contains(&d) {
        return Err(Error::Graph(format!("2D degree must lie in 3..=8 (got d={d})")));
    }
    if nx < 3 || ny < 3 {
        return Err(Error::Graph(format!(
            "2D layer needs nx >= 3 and ny >= 3 (got {nx}x{ny})"
        )));
    }
    if d % 2 == 1 && nx % 2 != 0 {
        return Err(Error::Graph(format!(
            "nx must be even when d is odd under periodic boundaries (got d={d}, nx={nx})"
        )));
    }
    Ok(())
}

/// Periodic 2D `d`-regular graph for `3 <= d <= 8`.
///
/// Layouts: d=4 square lattice; d=3 brick wall (horizontal bonds only at
/// even `x+y`); d=6 square plus every "/" diagonal; d=8 square plus both
/// diagonals; d=5 square plus "/" on even-`x` plaquettes; d=7 the d=6 layout
/// plus "\" on even-`x` plaquettes.
pub fn build_2d_regular(d: usize, nx: usize, ny: usize) -> Result<Graph> {
    check_layer(d, nx, ny)?;
    Graph::from_edges(
        nx * ny,
        layer_edges(d, nx, ny),
        format!("2d-regular:d={d}:{nx}x{ny}:periodic"),
    )?
    .expect_regular(d)
}

/// Stack of `nz` periodic 2D layers of degree `d2`, each vertex joined to its
/// copies in the layers above and below. Result is `(d2 + 2)`-regular.
pub fn build_3d_stack(d2: usize, nx: usize, ny: usize, nz: usize) -> Result<Graph> {
    if !(3..=6).contains(&d2) {
        return Err(Error::Graph(format!("3D stack layer degree must lie in 3..=6 (got d={d2})")));
    }
    check_layer(d2, nx, ny)?;
    if nz < 3 {
        return Err(Error::Graph(format!("3D stack needs nz >= 3 (got nz={nz})")));
    }
    let layer = nx * ny;
    let in_plane = layer_edges(d2, nx, ny);
    let mut edges = Vec::with_capacity(layer * nz * (d2 + 2) / 2);
    for z in 0..nz {
        let base = z * layer;
        edges.extend(in_plane.iter().map(|&(a, b)| (base + a, base + b)));
        let up = ((z + 1) % nz) * layer;
        edges.extend((0..layer).map(|v| (base + v, up + v)));
    }
    Graph::from_edges(
        layer * nz,
        edges,
        format!("3d-regular:d={}:{nx}x{ny}x{nz}:layer-d={d2}:periodic", d2 + 2),
    )?
    .expect_regular(d2 + 2)
}

/// Complete graph on `n` vertices.
pub fn build_complete(n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Graph("complete graph needs n >= 1".into()));
    }
    let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    Graph::from_edges(n, edges, format!("complete:{n}"))
}
