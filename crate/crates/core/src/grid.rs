//! Spatial grids and the entity spaces that discrete fields live on.
//!
//! Two backends are supported. The periodic backend is a collocated 3-torus:
//! every field component sits on the nodes. The bounded staggered backend is
//! a box with nodes, edges, faces and cells; the homogeneous boundary
//! conditions are imposed by dropping boundary entities.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Periodic,
    BoundedStaggered,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Periodic => f.write_str("periodic"),
            Backend::BoundedStaggered => f.write_str("bounded_staggered"),
        }
    }
}

/// Uniform cubic grid on a box or a torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub backend: Backend,
    pub cells: [usize; 3],
    pub h: f64,
}

impl GridSpec {
    pub fn new(backend: Backend, cells: [usize; 3], h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        let min = match backend {
            Backend::Periodic => 2,
            Backend::BoundedStaggered => 3,
        };
        if let Some(n) = cells.iter().find(|&&n| n < min) {
            return Err(Error::InvalidGrid(format!(
                "{backend} grids need at least {min} cells per direction, got {n}"
            )));
        }
        Ok(Self { backend, cells, h })
    }

    pub fn periodic(cells: [usize; 3], h: f64) -> Result<Self> {
        Self::new(Backend::Periodic, cells, h)
    }

    pub fn bounded(cells: [usize; 3], h: f64) -> Result<Self> {
        Self::new(Backend::BoundedStaggered, cells, h)
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.cells.map(|n| n as f64 * self.h)
    }

    /// Weight of the discrete L2 inner product.
    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    /// Number of collocation points of the periodic backend.
    pub fn periodic_points(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn require(&self, backend: Backend, op: &'static str) -> Result<()> {
        if self.backend != backend {
            return Err(Error::WrongBackend {
                op,
                expected: match backend {
                    Backend::Periodic => "periodic",
                    Backend::BoundedStaggered => "bounded staggered",
                },
            });
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        let [a, b, c] = self.cells;
        (a + 1) * (b + 1) * (c + 1)
    }

    pub fn interior_node_count(&self) -> usize {
        let [a, b, c] = self.cells;
        (a - 1) * (b - 1) * (c - 1)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    NodeScalar,
    EdgeVector,
    FaceVector,
    CellScalar,
    /// `k` components per collocation point (periodic backend).
    Collocated(usize),
    /// Concatenation of several slot spaces (flattened block layouts).
    Stacked(usize),
}

/// Whether boundary entities are part of the space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Support {
    Full,
    /// Boundary entities removed (homogeneous boundary condition).
    Interior,
}

/// A finite-dimensional Hilbert space of grid fields, with inner product
/// `h^3` times the Euclidean dot product.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntitySpace {
    pub kind: EntityKind,
    pub support: Support,
    pub dofs: usize,
    pub boundary_mask: Vec<usize>,
}

impl EntitySpace {
    pub fn new(kind: EntityKind, support: Support, dofs: usize) -> Self {
        Self {
            kind,
            support,
            dofs,
            boundary_mask: Vec::new(),
        }
    }

    pub fn with_boundary(mut self, mask: Vec<usize>) -> Self {
        debug_assert!(mask.iter().all(|&i| i < self.dofs));
        self.boundary_mask = mask;
        self
    }

    pub fn collocated(points: usize, components: usize) -> Self {
        Self::new(
            EntityKind::Collocated(components),
            Support::Full,
            points * components,
        )
    }

    pub fn stacked(slots: usize, dofs: usize) -> Self {
        Self::new(EntityKind::Stacked(slots), Support::Full, dofs)
    }

    /// Number of field components per point, for scalar/vector-valued kinds.
    pub fn components(&self) -> usize {
        match self.kind {
            EntityKind::NodeScalar | EntityKind::CellScalar => 1,
            EntityKind::EdgeVector | EntityKind::FaceVector => 3,
            EntityKind::Collocated(k) => k,
            EntityKind::Stacked(_) => 1,
        }
    }
}

impl fmt::Display for EntitySpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let support = match self.support {
            Support::Full => "",
            Support::Interior => " (interior)",
        };
        write!(f, "{:?}{}[{}]", self.kind, support, self.dofs)
    }
}

/// Lexicographic indexing of the staggered entity families.
///
/// Entities of each family are numbered x-oriented first, then y, then z;
/// within an orientation the first index runs fastest.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StaggeredIndex {
    pub n: [usize; 3],
}

impl StaggeredIndex {
    pub fn new(grid: &GridSpec) -> Self {
        Self { n: grid.cells }
    }

    #[inline]
    fn lin(dims: [usize; 3], i: usize, j: usize, k: usize) -> usize {
        i + dims[0] * (j + dims[1] * k)
    }

    pub fn node_dims(&self) -> [usize; 3] {
        self.n.map(|n| n + 1)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        Self::lin(self.node_dims(), i, j, k)
    }

    /// Dimensions of the edge family oriented along `dir`.
    pub fn edge_dims(&self, dir: usize) -> [usize; 3] {
        let mut d = self.node_dims();
        d[dir] = self.n[dir];
        d
    }

    /// Dimensions of the face family whose normal is `dir`.
    pub fn face_dims(&self, dir: usize) -> [usize; 3] {
        let mut d = self.n;
        d[dir] = self.n[dir] + 1;
        d
    }

    pub fn edge_count(&self, dir: usize) -> usize {
        self.edge_dims(dir).iter().product()
    }

    pub fn face_count(&self, dir: usize) -> usize {
        self.face_dims(dir).iter().product()
    }

    pub fn edge(&self, dir: usize, p: [usize; 3]) -> usize {
        let offset: usize = (0..dir).map(|d| self.edge_count(d)).sum();
        offset + Self::lin(self.edge_dims(dir), p[0], p[1], p[2])
    }

    pub fn face(&self, dir: usize, p: [usize; 3]) -> usize {
        let offset: usize = (0..dir).map(|d| self.face_count(d)).sum();
        offset + Self::lin(self.face_dims(dir), p[0], p[1], p[2])
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        Self::lin(self.n, i, j, k)
    }

    pub fn total_edges(&self) -> usize {
        (0..3).map(|d| self.edge_count(d)).sum()
    }

    pub fn total_faces(&self) -> usize {
        (0..3).map(|d| self.face_count(d)).sum()
    }

    pub fn node_on_boundary(&self, p: [usize; 3]) -> bool {
        (0..3).any(|d| p[d] == 0 || p[d] == self.n[d])
    }

    /// An edge lies on the boundary when a transverse coordinate is extremal.
    pub fn edge_on_boundary(&self, dir: usize, p: [usize; 3]) -> bool {
        (0..3)
            .filter(|&d| d != dir)
            .any(|d| p[d] == 0 || p[d] == self.n[d])
    }

    /// A face lies on the boundary when its normal coordinate is extremal.
    pub fn face_on_boundary(&self, dir: usize, p: [usize; 3]) -> bool {
        p[dir] == 0 || p[dir] == self.n[dir]
    }

    pub fn for_each(dims: [usize; 3], mut f: impl FnMut([usize; 3])) {
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    f([i, j, k]);
                }
            }
        }
    }
}
