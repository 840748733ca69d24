//! Block operators over slot layouts and the algebraic identities between
//! the acoustic and Maxwell parts of the extended operator.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::discrete::ComplexOps;
use crate::error::{Error, Result};
use crate::grid::{Backend, EntityKind, GridSpec};
use crate::layout::Layout;
use crate::pointwise::PointwiseWeight;
use crate::sparse::SparseOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockTag {
    ADac,
    ANac,
    AMax,
    Aac,
    Extended,
    Gem,
    Dirac,
    Custom,
}

impl fmt::Display for BlockTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Square block operator; absent blocks are zero.
#[derive(Debug, Clone)]
pub struct BlockOp {
    grid: GridSpec,
    layout: Layout,
    blocks: BTreeMap<(usize, usize), SparseOp>,
    tag: BlockTag,
}

impl BlockOp {
    pub fn zero(grid: GridSpec, layout: Layout, tag: BlockTag) -> Self {
        Self {
            grid,
            layout,
            blocks: BTreeMap::new(),
            tag,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tag(&self) -> BlockTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: BlockTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    /// Store block `(i, j)`, checking it maps slot `j` into slot `i`.
    pub fn set(&mut self, i: usize, j: usize, op: SparseOp) -> Result<()> {
        if op.rows() != self.layout.slot(i) || op.cols() != self.layout.slot(j) {
            return Err(Error::LayoutMismatch {
                op: "BlockOp::set",
                detail: format!(
                    "block ({i},{j}) maps {} -> {}, layout expects {} -> {}",
                    op.cols(),
                    op.rows(),
                    self.layout.slot(j),
                    self.layout.slot(i)
                ),
            });
        }
        if op.is_zero() {
            self.blocks.remove(&(i, j));
        } else {
            self.blocks.insert((i, j), op);
        }
        Ok(())
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&SparseOp> {
        self.blocks.get(&(i, j))
    }

    /// Block `(i, j)`, materializing zero blocks.
    pub fn block_or_zero(&self, i: usize, j: usize) -> SparseOp {
        self.block(i, j).cloned().unwrap_or_else(|| {
            SparseOp::zero(self.layout.slot(i).clone(), self.layout.slot(j).clone())
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &SparseOp)> {
        self.blocks.iter()
    }

    /// Flattened operator on the concatenated vector.
    pub fn to_sparse(&self) -> SparseOp {
        let space = self.layout.stacked_space();
        let mut t = Vec::new();
        for (&(i, j), op) in &self.blocks {
            let (ro, co) = (self.layout.offset(i), self.layout.offset(j));
            t.extend(op.triplets().map(|(r, c, v)| (ro + r, co + c, v)));
        }
        SparseOp::from_triplets(space.clone(), space, t)
    }

    /// Split a flattened operator into blocks of `layout`.
    pub fn from_sparse(grid: GridSpec, layout: Layout, tag: BlockTag, op: &SparseOp) -> Result<Self> {
        if op.nrows() != layout.total() || op.ncols() != layout.total() {
            return Err(Error::DimensionMismatch {
                op: "BlockOp::from_sparse",
                left: format!("layout[{}]", layout.total()),
                right: format!("{}x{}", op.nrows(), op.ncols()),
            });
        }
        let slot_of = |k: usize| {
            let s = (0..layout.len()).find(|&s| layout.range(s).contains(&k)).unwrap();
            (s, k - layout.offset(s))
        };
        let mut parts: BTreeMap<(usize, usize), Vec<(usize, usize, f64)>> = BTreeMap::new();
        for (r, c, v) in op.triplets() {
            let (i, lr) = slot_of(r);
            let (j, lc) = slot_of(c);
            parts.entry((i, j)).or_default().push((lr, lc, v));
        }
        let mut out = Self::zero(grid, layout, tag);
        for ((i, j), t) in parts {
            let b = SparseOp::from_triplets(out.layout.slot(i).clone(), out.layout.slot(j).clone(), t);
            out.set(i, j, b)?;
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.to_sparse().to_dense()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zero(self.grid, self.layout.clone(), self.tag);
        for (&(i, j), op) in &self.blocks {
            out.blocks.insert((j, i), op.adjoint());
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.grid, self.layout.clone(), self.tag);
        if s != 0.0 {
            for (&k, op) in &self.blocks {
                out.blocks.insert(k, op.scale(s));
            }
        }
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if !self.layout.same_spaces(&other.layout) {
            return Err(Error::LayoutMismatch {
                op,
                detail: format!(
                    "{} slots vs {} slots ({} vs {} dofs)",
                    self.layout.len(),
                    other.layout.len(),
                    self.layout.total(),
                    other.layout.total()
                ),
            });
        }
        Ok(())
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same(other, "BlockOp::axpby")?;
        let tag = if self.tag == other.tag { self.tag } else { BlockTag::Custom };
        let mut out = Self::zero(self.grid, self.layout.clone(), tag);
        let keys: std::collections::BTreeSet<_> =
            self.blocks.keys().chain(other.blocks.keys()).copied().collect();
        for (i, j) in keys {
            let op = match (self.block(i, j), other.block(i, j)) {
                (Some(x), Some(y)) => x.axpby(a, y, b)?,
                (Some(x), None) => x.scale(a),
                (None, Some(y)) => y.scale(b),
                (None, None) => unreachable!(),
            };
            out.set(i, j, op)?;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpby(1.0, other, -1.0)
    }

    /// Block product `self * other`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "BlockOp::mul")?;
        let n = self.layout.len();
        let mut out = Self::zero(self.grid, self.layout.clone(), BlockTag::Custom);
        for i in 0..n {
            for j in 0..n {
                let mut acc: Option<SparseOp> = None;
                for k in 0..n {
                    if let (Some(x), Some(y)) = (self.block(i, k), other.block(k, j)) {
                        let p = x.compose(y)?;
                        acc = Some(match acc {
                            None => p,
                            Some(a) => a.add(&p)?,
                        });
                    }
                }
                if let Some(a) = acc {
                    out.set(i, j, a)?;
                }
            }
        }
        Ok(out)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.layout.check_vec(x, "BlockOp::apply")?;
        let mut y = vec![0.0; self.dim()];
        let mut tmp = Vec::new();
        for (&(i, j), op) in &self.blocks {
            tmp.resize(op.nrows(), 0.0);
            op.apply_into(&x[self.layout.range(j)], &mut tmp);
            for (yr, t) in y[self.layout.range(i)].iter_mut().zip(&tmp) {
                *yr += t;
            }
        }
        Ok(y)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.values().map(|b| b.max_abs()).fold(0.0, f64::max)
    }

    /// max |(A + A^T)_ij|.
    pub fn skew_defect(&self) -> f64 {
        self.add(&self.transpose()).map(|s| s.max_abs()).unwrap_or(f64::INFINITY)
    }

    /// Conjugate by a slot permutation: slot `perm[k]` of `self` becomes slot `k`.
    pub fn permute_slots(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.layout.len());
        let mut inv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let layout = self.layout.select(perm);
        let mut out = Self::zero(self.grid, layout, self.tag);
        for (&(i, j), op) in &self.blocks {
            out.blocks.insert((inv[i], inv[j]), op.clone());
        }
        out
    }
}

/// Assemble one of the standard block operators on the extended layout
/// `scalar ⊕ vector ⊕ vector ⊕ scalar`.
pub fn assemble_block(tag: BlockTag, ops: &ComplexOps) -> Result<BlockOp> {
    let layout = Layout::extended(ops);
    let mut a = BlockOp::zero(ops.grid, layout, tag);
    let dac = matches!(tag, BlockTag::ADac | BlockTag::Aac | BlockTag::Extended);
    let nac = matches!(tag, BlockTag::ANac | BlockTag::Aac | BlockTag::Extended);
    let max = matches!(tag, BlockTag::AMax | BlockTag::Extended);
    if !(dac || nac || max) {
        return Err(Error::UnsupportedTag {
            op: "assemble_block",
            tag: tag.to_string(),
        });
    }
    if dac {
        a.set(0, 1, ops.div.clone())?;
        a.set(1, 0, ops.grad_int.clone())?;
    }
    if nac {
        a.set(2, 3, ops.grad.clone())?;
        a.set(3, 2, ops.div_int.clone())?;
    }
    if max {
        a.set(1, 2, ops.curl.neg())?;
        a.set(2, 1, ops.curl_int.clone())?;
    }
    debug_assert_eq!(a.skew_defect(), 0.0);
    Ok(a)
}

/// Max-norm of the product `a * b`.
pub fn verify_annihilation(a: &BlockOp, b: &BlockOp) -> Result<f64> {
    Ok(a.mul(b)?.max_abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSide {
    /// `sqrt(E)^-1 A sqrt(E)^-1`
    Inverse,
    /// `sqrt(E) A sqrt(E)`
    Direct,
}

/// Sum of the weighted conjugations of each part.
pub fn conjugate_weighted(parts: &[(&BlockOp, WeightSide)], weight: &PointwiseWeight) -> Result<BlockOp> {
    let first = parts.first().ok_or_else(|| Error::LayoutMismatch {
        op: "conjugate_weighted",
        detail: "no parts given".into(),
    })?;
    let grid = *first.0.grid();
    let layout = first.0.layout().clone();
    if grid.backend == Backend::BoundedStaggered && weight.is_mixing() {
        return Err(Error::MixingWeightOnStaggered);
    }
    let root = weight.sqrt().to_sparse(&layout)?;
    let inv_root = weight.inv_sqrt().to_sparse(&layout)?;
    let mut acc: Option<SparseOp> = None;
    for (op, side) in parts {
        if !op.layout().same_spaces(&layout) {
            return Err(Error::LayoutMismatch {
                op: "conjugate_weighted",
                detail: "parts have different layouts".into(),
            });
        }
        let w = match side {
            WeightSide::Inverse => &inv_root,
            WeightSide::Direct => &root,
        };
        let term = w.compose(&op.to_sparse())?.compose(w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    let tag = if parts.len() == 1 { first.0.tag() } else { BlockTag::Custom };
    BlockOp::from_sparse(grid, layout, tag, &acc.unwrap())
}

/// Componentwise Laplacian on every slot of the extended layout.
pub fn blockdiag_laplacian(ops: &ComplexOps) -> Result<BlockOp> {
    ops.grid.require(Backend::Periodic, "blockdiag_laplacian")?;
    let lap = ops.periodic_laplacian().expect("periodic complex has partials");
    let layout = Layout::extended(ops);
    let mut out = BlockOp::zero(ops.grid, layout.clone(), BlockTag::Custom);
    let np = ops.grid.periodic_points();
    for s in 0..layout.len() {
        let k = layout.slot(s).components();
        let mut t = Vec::with_capacity(k * lap.nnz());
        for c in 0..k {
            t.extend(lap.triplets().map(|(r, cc, v)| (c * np + r, c * np + cc, v)));
        }
        let sp = layout.slot(s).clone();
        out.set(s, s, SparseOp::from_triplets(sp.clone(), sp, t))?;
    }
    Ok(out)
}

/// `max |a^2 - blockdiag(Δ)|` for an operator on the periodic extended layout.
pub fn wave_residual_of(a: &BlockOp, ops: &ComplexOps) -> Result<f64> {
    let lap = blockdiag_laplacian(ops)?;
    Ok(a.mul(a)?.sub(&lap)?.max_abs())
}

/// `max |(A_Max + A_ac)^2 - blockdiag(Δ)|` on a periodic grid.
pub fn wave_identity_residual(grid: &GridSpec) -> Result<f64> {
    grid.require(Backend::Periodic, "wave_identity_residual")?;
    let ops = ComplexOps::build(grid)?;
    let a = assemble_block(BlockTag::Extended, &ops)?;
    wave_residual_of(&a, &ops)
}

/// The unitary selfadjoint slot permutation exchanging the two scalar slots.
pub const HAMILTONIAN_PERMUTATION: [[i32; 4]; 4] =
    [[0, 0, 0, 1], [0, 1, 0, 0], [0, 0, 1, 0], [1, 0, 0, 0]];

/// Conjugate an extended-layout operator by [`HAMILTONIAN_PERMUTATION`].
///
/// For `A_Max + A_ac` the result has the off-diagonal form
/// `[[0, -C^T], [C, 0]]` with `C = [[grad, curl_int], [0, div]]`.
pub fn hamiltonian_transform(a: &BlockOp) -> Result<BlockOp> {
    let l = a.layout();
    let scalar = |k: EntityKind| {
        matches!(k, EntityKind::NodeScalar | EntityKind::CellScalar | EntityKind::Collocated(1))
    };
    let vector = |k: EntityKind| {
        matches!(k, EntityKind::EdgeVector | EntityKind::FaceVector | EntityKind::Collocated(3))
    };
    let ok = l.len() == 4
        && scalar(l.slot(0).kind)
        && vector(l.slot(1).kind)
        && vector(l.slot(2).kind)
        && scalar(l.slot(3).kind);
    if !ok {
        return Err(Error::LayoutMismatch {
            op: "hamiltonian_transform",
            detail: "expected scalar ⊕ vector ⊕ vector ⊕ scalar".into(),
        });
    }
    let perm: Vec<usize> = HAMILTONIAN_PERMUTATION
        .iter()
        .map(|row| row.iter().position(|&v| v == 1).unwrap())
        .collect();
    Ok(a.permute_slots(&perm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointwise::PointwiseMatrix;

    fn periodic(n: [usize; 3]) -> ComplexOps {
        ComplexOps::build(&GridSpec::periodic(n, 1.0).unwrap()).unwrap()
    }

    fn bounded(n: [usize; 3]) -> ComplexOps {
        ComplexOps::build(&GridSpec::bounded(n, 0.5).unwrap()).unwrap()
    }

    #[test]
    fn amax_blocks() {
        let ops = bounded([3, 3, 3]);
        let a = assemble_block(BlockTag::AMax, &ops).unwrap();
        assert_eq!(a.blocks().count(), 2);
        assert_eq!(a.block(1, 2).unwrap(), &ops.curl.neg());
        assert_eq!(a.block(2, 1).unwrap(), &ops.curl_int);
    }

    #[test]
    fn all_tags_skew_and_annihilate() {
        for ops in [periodic([3, 3, 3]), bounded([3, 4, 3]), periodic([2, 2, 2])] {
            for tag in [BlockTag::ADac, BlockTag::ANac, BlockTag::AMax, BlockTag::Aac, BlockTag::Extended] {
                assert_eq!(assemble_block(tag, &ops).unwrap().skew_defect(), 0.0);
            }
            let m = assemble_block(BlockTag::AMax, &ops).unwrap();
            let ac = assemble_block(BlockTag::Aac, &ops).unwrap();
            assert_eq!(verify_annihilation(&m, &ac).unwrap(), 0.0);
            assert_eq!(verify_annihilation(&ac, &m).unwrap(), 0.0);
        }
    }

    #[test]
    fn amax_squared_is_curl_curl() {
        let ops = bounded([3, 3, 3]);
        let m = assemble_block(BlockTag::AMax, &ops).unwrap();
        let sq = m.mul(&m).unwrap();
        let cc = ops.curl.compose(&ops.curl_int).unwrap().neg();
        assert!(sq.max_abs() > 0.0);
        assert_eq!(sq.block(1, 1).unwrap(), &cc);
    }

    #[test]
    fn aac_action_on_scalars() {
        let ops = bounded([3, 3, 3]);
        let a = assemble_block(BlockTag::Aac, &ops).unwrap();
        let l = a.layout().clone();
        let phi: Vec<f64> = (0..l.slot(0).dofs).map(|i| i as f64 + 1.0).collect();
        let psi: Vec<f64> = (0..l.slot(3).dofs).map(|i| (i as f64).sin()).collect();
        let x = l.join(&[&phi, &vec![0.0; l.slot(1).dofs], &vec![0.0; l.slot(2).dofs], &psi]);
        let y = a.apply(&x).unwrap();
        assert!(y[l.range(0)].iter().all(|&v| v == 0.0));
        assert_eq!(&y[l.range(1)], &ops.grad_int.apply(&phi).unwrap()[..]);
        assert_eq!(&y[l.range(2)], &ops.grad.apply(&psi).unwrap()[..]);
        assert!(y[l.range(3)].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_tag_rejected() {
        let ops = periodic([2, 2, 2]);
        assert!(matches!(
            assemble_block(BlockTag::Dirac, &ops),
            Err(Error::UnsupportedTag { .. })
        ));
    }

    #[test]
    fn weighted_scalar_multiples() {
        let ops = periodic([3, 3, 3]);
        let l = Layout::extended(&ops);
        let m = assemble_block(BlockTag::AMax, &ops).unwrap();
        let ac = assemble_block(BlockTag::Aac, &ops).unwrap();
        let id = PointwiseWeight::identity(&l);
        let w = conjugate_weighted(&[(&m, WeightSide::Inverse), (&ac, WeightSide::Direct)], &id).unwrap();
        assert_eq!(w.sub(&m.add(&ac).unwrap()).unwrap().max_abs(), 0.0);

        let four = PointwiseWeight::new(PointwiseMatrix::scalar(&l, 4.0)).unwrap();
        let wm = conjugate_weighted(&[(&m, WeightSide::Inverse)], &four).unwrap();
        let wac = conjugate_weighted(&[(&ac, WeightSide::Direct)], &four).unwrap();
        assert_eq!(wm.sub(&m.scale(0.25)).unwrap().max_abs(), 0.0);
        assert_eq!(wac.sub(&ac.scale(4.0)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn mixing_weight_rejected_on_staggered() {
        let p = periodic([2, 2, 2]);
        let lp = Layout::extended(&p);
        let dense = PointwiseWeight::new(
            PointwiseMatrix::dense_constant(&lp, &DMatrix::identity(8, 8)).unwrap(),
        )
        .unwrap();
        let b = bounded([3, 3, 3]);
        let m = assemble_block(BlockTag::AMax, &b).unwrap();
        assert!(matches!(
            conjugate_weighted(&[(&m, WeightSide::Inverse)], &dense),
            Err(Error::MixingWeightOnStaggered)
        ));
    }

    #[test]
    fn wave_identity_and_negative_control() {
        assert_eq!(wave_identity_residual(&GridSpec::periodic([4, 4, 4], 1.0).unwrap()).unwrap(), 0.0);
        let ops = periodic([4, 4, 4]);
        let partial = assemble_block(BlockTag::AMax, &ops)
            .unwrap()
            .add(&assemble_block(BlockTag::ANac, &ops).unwrap())
            .unwrap();
        assert!(wave_residual_of(&partial, &ops).unwrap() > 0.1);
        assert!(wave_identity_residual(&GridSpec::bounded([3, 3, 3], 1.0).unwrap()).is_err());
    }

    #[test]
    fn hamiltonian_form() {
        for ops in [periodic([3, 3, 3]), bounded([3, 3, 4])] {
            let a = assemble_block(BlockTag::Extended, &ops).unwrap();
            let t = hamiltonian_transform(&a).unwrap();
            // Layout after the swap: (s3, v1, v2, s0); lower-left is rows (v2, s0), cols (s3, v1).
            assert_eq!(t.block(2, 0).unwrap(), &ops.grad);
            assert_eq!(t.block(2, 1).unwrap(), &ops.curl_int);
            assert!(t.block(3, 0).is_none());
            assert_eq!(t.block(3, 1).unwrap(), &ops.div);
            assert!(t.block(0, 0).is_none() && t.block(1, 1).is_none());
            assert!(t.block(0, 1).is_none() && t.block(1, 0).is_none());
            let back = hamiltonian_transform(&t).unwrap();
            assert!(back.layout().same_spaces(a.layout()));
            assert_eq!(back.sub(&a).unwrap().max_abs(), 0.0);
        }
    }
}
