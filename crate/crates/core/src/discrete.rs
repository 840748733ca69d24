//! Discrete grad/curl/div complexes.
//!
//! The operators marked `interior` (`grad_int`, `curl_int`, `div_int`) carry
//! homogeneous boundary conditions; the unmarked ones are their negative
//! adjoints (`div = -grad_int^T`, `curl = curl_int^T`, `grad = -div_int^T`).
//! On the periodic backend there is no boundary and both families coincide.

use crate::error::Result;
use crate::grid::{Backend, EntityKind, EntitySpace, GridSpec, StaggeredIndex, Support};
use crate::sparse::SparseOp;

/// Centered periodic differences `(f(i+1) - f(i-1)) / 2h` along each axis.
///
/// Each returned operator is exactly skew and the three commute exactly.
pub fn periodic_partials(grid: &GridSpec) -> Result<[SparseOp; 3]> {
    grid.require(Backend::Periodic, "periodic_partials")?;
    let n = grid.cells;
    let points = grid.periodic_points();
    let space = EntitySpace::collocated(points, 1);
    let c = 1.0 / (2.0 * grid.h);
    let idx = |p: [usize; 3]| p[0] + n[0] * (p[1] + n[1] * p[2]);

    let build = |dir: usize| {
        let mut t = Vec::with_capacity(2 * points);
        StaggeredIndex::for_each(n, |p| {
            let row = idx(p);
            let mut fwd = p;
            fwd[dir] = (p[dir] + 1) % n[dir];
            let mut bwd = p;
            bwd[dir] = (p[dir] + n[dir] - 1) % n[dir];
            t.push((row, idx(fwd), c));
            t.push((row, idx(bwd), -c));
        });
        SparseOp::from_triplets(space.clone(), space.clone(), t)
    };
    Ok([build(0), build(1), build(2)])
}

/// The six operators of a discrete complex together with the four slot
/// spaces `scalar0 -> vector1 -> vector2 -> scalar3` they connect.
#[derive(Debug, Clone)]
pub struct ComplexOps {
    pub grid: GridSpec,
    pub scalar0: EntitySpace,
    pub vector1: EntitySpace,
    pub vector2: EntitySpace,
    pub scalar3: EntitySpace,
    /// scalar0 -> vector1
    pub grad_int: SparseOp,
    /// vector1 -> vector2
    pub curl_int: SparseOp,
    /// vector2 -> scalar3
    pub div_int: SparseOp,
    /// vector1 -> scalar0, equals `-grad_int^T`
    pub div: SparseOp,
    /// vector2 -> vector1, equals `curl_int^T`
    pub curl: SparseOp,
    /// scalar3 -> vector2, equals `-div_int^T`
    pub grad: SparseOp,
    /// Periodic partial derivatives, when available.
    pub partials: Option<[SparseOp; 3]>,
}

impl ComplexOps {
    pub fn build(grid: &GridSpec) -> Result<Self> {
        match grid.backend {
            Backend::Periodic => periodic_complex(grid),
            Backend::BoundedStaggered => staggered_complex(grid),
        }
    }

    /// Max-norm residuals of `curl_int grad_int`, `div_int curl_int`,
    /// `curl grad` and `div curl`.
    pub fn exact_sequence_residuals(&self) -> Result<[f64; 4]> {
        Ok([
            self.curl_int.compose(&self.grad_int)?.max_abs(),
            self.div_int.compose(&self.curl_int)?.max_abs(),
            self.curl.compose(&self.grad)?.max_abs(),
            self.div.compose(&self.curl)?.max_abs(),
        ])
    }

    /// Componentwise Laplacian `sum_k D_k^2` (periodic only).
    pub fn periodic_laplacian(&self) -> Option<SparseOp> {
        let d = self.partials.as_ref()?;
        let mut lap = d[0].compose(&d[0]).ok()?;
        for dk in &d[1..] {
            lap = lap.add(&dk.compose(dk).ok()?).ok()?;
        }
        Some(lap)
    }
}

/// Collocated complex on the torus built from the centered partials.
pub fn periodic_complex(grid: &GridSpec) -> Result<ComplexOps> {
    let d = periodic_partials(grid)?;
    let np = grid.periodic_points();
    let scalar = EntitySpace::collocated(np, 1);
    let vector = EntitySpace::collocated(np, 3);

    // grad: scalar -> vector, component-major stacking.
    let mut t = Vec::new();
    for (k, dk) in d.iter().enumerate() {
        t.extend(dk.triplets().map(|(r, c, v)| (k * np + r, c, v)));
    }
    let grad = SparseOp::from_triplets(vector.clone(), scalar.clone(), t);
    let div = grad.adjoint().neg();

    // curl w = (D2 w3 - D3 w2, D3 w1 - D1 w3, D1 w2 - D2 w1)
    let mut t = Vec::new();
    for i in 0..3 {
        let a = (i + 1) % 3;
        let b = (i + 2) % 3;
        t.extend(d[a].triplets().map(|(r, c, v)| (i * np + r, b * np + c, v)));
        t.extend(d[b].triplets().map(|(r, c, v)| (i * np + r, a * np + c, -v)));
    }
    let curl = SparseOp::from_triplets(vector.clone(), vector.clone(), t);

    Ok(ComplexOps {
        grid: *grid,
        scalar0: scalar.clone(),
        vector1: vector.clone(),
        vector2: vector,
        scalar3: scalar,
        grad_int: grad.clone(),
        curl_int: curl.clone(),
        div_int: div.clone(),
        div,
        curl,
        grad,
        partials: Some(d),
    })
}

/// Mimetic complex on a box with the boundary entities removed.
///
/// The full node-to-edge, edge-to-face and face-to-cell incidence operators
/// are assembled first; the interior operators are obtained by zero
/// extension from the retained entities and restriction to the retained
/// entities of the target. All stencils are `+-1/h`, so the compositions
/// telescope to exact zeros.
pub fn staggered_complex(grid: &GridSpec) -> Result<ComplexOps> {
    grid.require(Backend::BoundedStaggered, "staggered_complex")?;
    let ix = StaggeredIndex::new(grid);
    let inv_h = 1.0 / grid.h;

    let full_grad = full_gradient(&ix, inv_h);
    let full_curl = full_curl(&ix, inv_h);
    let full_div = full_divergence(&ix, inv_h);

    // Retained entities, in ascending full index.
    let mut nodes = Vec::new();
    StaggeredIndex::for_each(ix.node_dims(), |p| {
        if !ix.node_on_boundary(p) {
            nodes.push(ix.node(p[0], p[1], p[2]));
        }
    });
    let mut edges = Vec::new();
    for dir in 0..3 {
        StaggeredIndex::for_each(ix.edge_dims(dir), |p| {
            if !ix.edge_on_boundary(dir, p) {
                edges.push(ix.edge(dir, p));
            }
        });
    }
    let mut faces = Vec::new();
    for dir in 0..3 {
        StaggeredIndex::for_each(ix.face_dims(dir), |p| {
            if !ix.face_on_boundary(dir, p) {
                faces.push(ix.face(dir, p));
            }
        });
    }
    let cells = grid.cell_count();

    let scalar0 = EntitySpace::new(EntityKind::NodeScalar, Support::Interior, nodes.len());
    let vector1 = EntitySpace::new(EntityKind::EdgeVector, Support::Interior, edges.len());
    let vector2 = EntitySpace::new(EntityKind::FaceVector, Support::Interior, faces.len());
    let scalar3 = EntitySpace::new(EntityKind::CellScalar, Support::Full, cells);

    let all_cells: Vec<usize> = (0..cells).collect();
    let grad_int = restrict(&full_grad, &edges, &nodes, &vector1, &scalar0);
    let curl_int = restrict(&full_curl, &faces, &edges, &vector2, &vector1);
    let div_int = restrict(&full_div, &all_cells, &faces, &scalar3, &vector2);

    let div = grad_int.adjoint().neg();
    let curl = curl_int.adjoint();
    let grad = div_int.adjoint().neg();

    Ok(ComplexOps {
        grid: *grid,
        scalar0,
        vector1,
        vector2,
        scalar3,
        grad_int,
        curl_int,
        div_int,
        div,
        curl,
        grad,
        partials: None,
    })
}

fn full_spaces(ix: &StaggeredIndex) -> (EntitySpace, EntitySpace, EntitySpace, EntitySpace) {
    let mut nb = Vec::new();
    let mut i = 0;
    StaggeredIndex::for_each(ix.node_dims(), |p| {
        if ix.node_on_boundary(p) {
            nb.push(i);
        }
        i += 1;
    });
    let nodes = EntitySpace::new(
        EntityKind::NodeScalar,
        Support::Full,
        ix.node_dims().iter().product(),
    )
    .with_boundary(nb);
    let mut eb = Vec::new();
    for dir in 0..3 {
        StaggeredIndex::for_each(ix.edge_dims(dir), |p| {
            if ix.edge_on_boundary(dir, p) {
                eb.push(ix.edge(dir, p));
            }
        });
    }
    eb.sort_unstable();
    let edges =
        EntitySpace::new(EntityKind::EdgeVector, Support::Full, ix.total_edges()).with_boundary(eb);
    let mut fb = Vec::new();
    for dir in 0..3 {
        StaggeredIndex::for_each(ix.face_dims(dir), |p| {
            if ix.face_on_boundary(dir, p) {
                fb.push(ix.face(dir, p));
            }
        });
    }
    fb.sort_unstable();
    let faces =
        EntitySpace::new(EntityKind::FaceVector, Support::Full, ix.total_faces()).with_boundary(fb);
    let cells = EntitySpace::new(EntityKind::CellScalar, Support::Full, ix.n.iter().product());
    (nodes, edges, faces, cells)
}

fn full_gradient(ix: &StaggeredIndex, inv_h: f64) -> SparseOp {
    let (nodes, edges, _, _) = full_spaces(ix);
    let mut t = Vec::new();
    for dir in 0..3 {
        StaggeredIndex::for_each(ix.edge_dims(dir), |p| {
            let e = ix.edge(dir, p);
            let mut q = p;
            q[dir] += 1;
            t.push((e, ix.node(q[0], q[1], q[2]), inv_h));
            t.push((e, ix.node(p[0], p[1], p[2]), -inv_h));
        });
    }
    SparseOp::from_triplets(edges, nodes, t)
}

fn full_curl(ix: &StaggeredIndex, inv_h: f64) -> SparseOp {
    let (_, edges, faces, _) = full_spaces(ix);
    let mut t = Vec::new();
    for dir in 0..3 {
        // Face normal to `dir`, spanned by directions a and b (right-handed).
        let a = (dir + 1) % 3;
        let b = (dir + 2) % 3;
        StaggeredIndex::for_each(ix.face_dims(dir), |p| {
            let f = ix.face(dir, p);
            // (curl E)_dir = d_a E_b - d_b E_a
            let mut pa = p;
            pa[a] += 1;
            t.push((f, ix.edge(b, pa), inv_h));
            t.push((f, ix.edge(b, p), -inv_h));
            let mut pb = p;
            pb[b] += 1;
            t.push((f, ix.edge(a, pb), -inv_h));
            t.push((f, ix.edge(a, p), inv_h));
        });
    }
    SparseOp::from_triplets(faces, edges, t)
}

fn full_divergence(ix: &StaggeredIndex, inv_h: f64) -> SparseOp {
    let (_, _, faces, cells) = full_spaces(ix);
    let mut t = Vec::new();
    StaggeredIndex::for_each(ix.n, |p| {
        let c = ix.cell(p[0], p[1], p[2]);
        for dir in 0..3 {
            let mut q = p;
            q[dir] += 1;
            t.push((c, ix.face(dir, q), inv_h));
            t.push((c, ix.face(dir, p), -inv_h));
        }
    });
    SparseOp::from_triplets(cells, faces, t)
}

/// `R_rows * op * Z_cols`: keep the listed rows and columns of `op`.
fn restrict(
    op: &SparseOp,
    keep_rows: &[usize],
    keep_cols: &[usize],
    row_space: &EntitySpace,
    col_space: &EntitySpace,
) -> SparseOp {
    let mut col_map = vec![usize::MAX; op.ncols()];
    for (new, &old) in keep_cols.iter().enumerate() {
        col_map[old] = new;
    }
    let mut t = Vec::new();
    for (new_r, &old_r) in keep_rows.iter().enumerate() {
        for (c, v) in op.row(old_r) {
            let nc = col_map[c];
            if nc != usize::MAX {
                t.push((new_r, nc, v));
            }
        }
    }
    SparseOp::from_triplets(row_space.clone(), col_space.clone(), t)
}

/// Physical position of every dof of a slot space of `grid`, in dof order.
///
/// Staggered entities sit at their midpoints; collocated components share
/// the node position.
pub fn dof_positions(grid: &GridSpec, space: &EntitySpace) -> Vec<[f64; 3]> {
    let h = grid.h;
    let at = |p: [usize; 3], shift: [f64; 3]| {
        [0, 1, 2].map(|d| (p[d] as f64 + shift[d]) * h)
    };
    let mut out = Vec::with_capacity(space.dofs);
    match space.kind {
        EntityKind::Collocated(k) => {
            for _ in 0..k {
                StaggeredIndex::for_each(grid.cells, |p| out.push(at(p, [0.0; 3])));
            }
        }
        EntityKind::NodeScalar | EntityKind::EdgeVector | EntityKind::FaceVector | EntityKind::CellScalar => {
            let ix = StaggeredIndex::new(grid);
            let interior = space.support == Support::Interior;
            match space.kind {
                EntityKind::NodeScalar => StaggeredIndex::for_each(ix.node_dims(), |p| {
                    if !(interior && ix.node_on_boundary(p)) {
                        out.push(at(p, [0.0; 3]));
                    }
                }),
                EntityKind::EdgeVector => {
                    for dir in 0..3 {
                        let mut s = [0.0; 3];
                        s[dir] = 0.5;
                        StaggeredIndex::for_each(ix.edge_dims(dir), |p| {
                            if !(interior && ix.edge_on_boundary(dir, p)) {
                                out.push(at(p, s));
                            }
                        });
                    }
                }
                EntityKind::FaceVector => {
                    for dir in 0..3 {
                        let mut s = [0.5; 3];
                        s[dir] = 0.0;
                        StaggeredIndex::for_each(ix.face_dims(dir), |p| {
                            if !(interior && ix.face_on_boundary(dir, p)) {
                                out.push(at(p, s));
                            }
                        });
                    }
                }
                _ => StaggeredIndex::for_each(ix.n, |p| out.push(at(p, [0.5; 3]))),
            }
        }
        EntityKind::Stacked(_) => panic!("dof_positions: stacked spaces have no geometry"),
    }
    debug_assert_eq!(out.len(), space.dofs);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_rejects_staggered() {
        let g = GridSpec::bounded([3, 3, 3], 1.0).unwrap();
        assert!(periodic_partials(&g).is_err());
        let p = GridSpec::periodic([3, 3, 3], 1.0).unwrap();
        assert!(staggered_complex(&p).is_err());
    }

    #[test]
    fn constant_field_is_annihilated() {
        let g = GridSpec::periodic([3, 4, 5], 0.3).unwrap();
        let d = periodic_partials(&g).unwrap();
        let c = vec![2.5; g.periodic_points()];
        for dk in &d {
            assert!(dk.apply(&c).unwrap().iter().all(|&v| v == 0.0));
            assert_eq!(dk.skew_defect(), 0.0);
        }
    }

    #[test]
    fn two_point_periodic_difference_vanishes() {
        // f(i+1) and f(i-1) coincide when n = 2.
        let g = GridSpec::periodic([2, 2, 2], 1.0).unwrap();
        let d = periodic_partials(&g).unwrap();
        assert!(d.iter().all(|dk| dk.is_zero()));
    }

    #[test]
    fn sine_mode_oracle() {
        // Brute-force stencil application, independent of the sparse assembly.
        let g = GridSpec::periodic([4, 4, 4], 1.0).unwrap();
        let d = periodic_partials(&g).unwrap();
        let n = 4usize;
        let f = |j1: usize| (2.0 * std::f64::consts::PI * j1 as f64 / 4.0).sin();
        let mut x = vec![0.0; 64];
        StaggeredIndex::for_each([4, 4, 4], |p| x[p[0] + 4 * (p[1] + 4 * p[2])] = f(p[0]));
        let y = d[0].apply(&x).unwrap();
        StaggeredIndex::for_each([4, 4, 4], |p| {
            let brute = (f((p[0] + 1) % n) - f((p[0] + n - 1) % n)) / 2.0;
            let closed = (2.0 * std::f64::consts::PI * p[0] as f64 / 4.0).cos()
                * (2.0 * std::f64::consts::PI / 4.0).sin();
            let got = y[p[0] + 4 * (p[1] + 4 * p[2])];
            assert!((got - brute).abs() < 1e-15);
            assert!((got - closed).abs() < 1e-15);
        });
    }

    #[test]
    fn interior_gradient_of_one_node() {
        let g = GridSpec::bounded([4, 3, 3], 0.5).unwrap();
        let ops = staggered_complex(&g).unwrap();
        assert_eq!(ops.scalar0.dofs, 3 * 2 * 2);
        let mut x = vec![0.0; ops.scalar0.dofs];
        x[5] = 1.0;
        let y = ops.grad_int.apply(&x).unwrap();
        let mut nz: Vec<f64> = y.iter().copied().filter(|v| *v != 0.0).collect();
        nz.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(nz, vec![-2.0, -2.0, -2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn interior_counts_three_cube() {
        let g = GridSpec::bounded([3, 3, 3], 1.0).unwrap();
        let ops = staggered_complex(&g).unwrap();
        assert_eq!(ops.grad_int.ncols(), 8);
        // non-boundary edges: 3 orientations * 3 * 2 * 2
        assert_eq!(ops.vector1.dofs, 36);
        // non-boundary faces: 3 orientations * 2 * 3 * 3
        assert_eq!(ops.vector2.dofs, 54);
        assert_eq!(ops.scalar3.dofs, 27);
    }

    #[test]
    fn positions_match_dof_counts() {
        let g = GridSpec::bounded([3, 4, 3], 0.5).unwrap();
        let ops = staggered_complex(&g).unwrap();
        for s in [&ops.scalar0, &ops.vector1, &ops.vector2, &ops.scalar3] {
            let p = dof_positions(&g, s);
            assert_eq!(p.len(), s.dofs);
            assert!(p.iter().all(|x| (0..3).all(|d| x[d] > 0.0 && x[d] < g.lengths()[d])));
        }
        let g = GridSpec::periodic([2, 3, 2], 1.0).unwrap();
        let p = dof_positions(&g, &EntitySpace::collocated(12, 3));
        assert_eq!(p[1], [1.0, 0.0, 0.0]);
        assert_eq!(p[13], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn adjoint_pairs() {
        let g = GridSpec::bounded([3, 4, 3], 0.25).unwrap();
        let ops = staggered_complex(&g).unwrap();
        assert_eq!(ops.div.add(&ops.grad_int.adjoint()).unwrap().max_abs(), 0.0);
        assert_eq!(ops.grad.add(&ops.div_int.adjoint()).unwrap().max_abs(), 0.0);
        assert_eq!(ops.curl.sub(&ops.curl_int.adjoint()).unwrap().max_abs(), 0.0);
    }
}
