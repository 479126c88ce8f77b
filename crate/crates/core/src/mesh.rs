//! Structured Cartesian meshes, domain embedding and refinement hierarchies.
//!
//! Cells are numbered lexicographically with the x index fastest. Faces are
//! numbered axis by axis (all x-normal faces, then y, then z); within one
//! axis the same lexicographic rule applies to the face lattice, which has
//! one extra layer along its normal axis.

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianMesh {
    dim: usize,
    origin: [f64; 3],
    counts: [usize; 3],
    sizes: [f64; 3],
    face_offsets: [usize; 4],
}

/// Low or high end of an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Low,
    High,
}

impl Side {
    /// Sign of the outward normal relative to the positive axis direction.
    pub fn outward_sign(self) -> f64 {
        match self {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }
}

/// Validated constructor. `origin`, `extents` and `cell_counts` must have
/// length `dim`.
pub fn build_cartesian_mesh(
    dim: usize,
    origin: &[f64],
    extents: &[f64],
    cell_counts: &[usize],
) -> Result<CartesianMesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::invalid(format!("dimension must be 2 or 3, got {dim}")));
    }
    if origin.len() != dim || extents.len() != dim || cell_counts.len() != dim {
        return Err(Error::invalid("origin, extents and cell counts must have one entry per axis"));
    }
    let mut o = [0.0; 3];
    let mut n = [1usize; 3];
    let mut h = [1.0; 3];
    for k in 0..dim {
        if !(extents[k] > 0.0) || !extents[k].is_finite() {
            return Err(Error::invalid(format!("extent on axis {k} must be positive, got {}", extents[k])));
        }
        if cell_counts[k] == 0 {
            return Err(Error::invalid(format!("cell count on axis {k} must be at least 1")));
        }
        if !origin[k].is_finite() {
            return Err(Error::invalid("origin must be finite"));
        }
        o[k] = origin[k];
        n[k] = cell_counts[k];
        h[k] = extents[k] / cell_counts[k] as f64;
    }
    Ok(CartesianMesh::from_parts(dim, o, n, h))
}

impl CartesianMesh {
    fn from_parts(dim: usize, origin: [f64; 3], counts: [usize; 3], sizes: [f64; 3]) -> Self {
        let mut face_offsets = [0usize; 4];
        for a in 0..3 {
            let nf = if a < dim {
                let mut m = counts;
                m[a] += 1;
                m[0] * m[1] * m[2]
            } else {
                0
            };
            face_offsets[a + 1] = face_offsets[a] + nf;
        }
        CartesianMesh {
            dim,
            origin,
            counts,
            sizes,
            face_offsets,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn cell_counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn cell_sizes(&self) -> &[f64] {
        &self.sizes[..self.dim]
    }

    pub fn extents(&self) -> Vec<f64> {
        (0..self.dim).map(|a| self.sizes[a] * self.counts[a] as f64).collect()
    }

    pub fn num_cells(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn num_faces(&self) -> usize {
        self.face_offsets[self.dim]
    }

    pub fn num_faces_axis(&self, axis: usize) -> usize {
        self.face_offsets[axis + 1] - self.face_offsets[axis]
    }

    pub fn face_offset(&self, axis: usize) -> usize {
        self.face_offsets[axis]
    }

    pub fn cell_volume(&self) -> f64 {
        self.sizes[..self.dim].iter().product()
    }

    /// Area (length in 2D) of a face normal to `axis`.
    pub fn face_area(&self, axis: usize) -> f64 {
        self.cell_volume() / self.sizes[axis]
    }

    pub fn cell_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.counts[0] * (ijk[1] + self.counts[1] * ijk[2])
    }

    pub fn cell_coords(&self, id: usize) -> [usize; 3] {
        let i = id % self.counts[0];
        let rest = id / self.counts[0];
        [i, rest % self.counts[1], rest / self.counts[1]]
    }

    pub fn cell_centroid(&self, id: usize) -> Point {
        let c = self.cell_coords(id);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.origin[a] + (c[a] as f64 + 0.5) * self.sizes[a];
        }
        p
    }

    /// Face normal to `axis` at lattice position `ijk` (`ijk[axis]` ranges
    /// over `0..=counts[axis]`).
    pub fn face_index(&self, axis: usize, ijk: [usize; 3]) -> usize {
        let mut m = self.counts;
        m[axis] += 1;
        self.face_offsets[axis] + ijk[0] + m[0] * (ijk[1] + m[1] * ijk[2])
    }

    /// Axis and lattice position of a face id.
    pub fn face_coords(&self, face: usize) -> (usize, [usize; 3]) {
        let axis = (0..self.dim)
            .find(|&a| face < self.face_offsets[a + 1])
            .expect("face id out of range");
        let local = face - self.face_offsets[axis];
        let mut m = self.counts;
        m[axis] += 1;
        let i = local % m[0];
        let rest = local / m[0];
        (axis, [i, rest % m[1], rest / m[1]])
    }

    /// Face of cell `cell` on the given side of `axis`.
    pub fn cell_face(&self, cell: usize, axis: usize, side: Side) -> usize {
        let mut c = self.cell_coords(cell);
        if side == Side::High {
            c[axis] += 1;
        }
        self.face_index(axis, c)
    }

    /// Cells below and above a face along its normal axis.
    pub fn face_cells(&self, face: usize) -> (Option<usize>, Option<usize>) {
        let (axis, ijk) = self.face_coords(face);
        let below = (ijk[axis] > 0).then(|| {
            let mut c = ijk;
            c[axis] -= 1;
            self.cell_index(c)
        });
        let above = (ijk[axis] < self.counts[axis]).then(|| self.cell_index(ijk));
        (below, above)
    }

    pub fn is_boundary_face(&self, face: usize) -> bool {
        let (axis, ijk) = self.face_coords(face);
        ijk[axis] == 0 || ijk[axis] == self.counts[axis]
    }

    /// Faces on one side of the bounding box, in face-id order.
    pub fn boundary_faces(&self, axis: usize, side: Side) -> Vec<usize> {
        let layer = match side {
            Side::Low => 0,
            Side::High => self.counts[axis],
        };
        (self.face_offsets[axis]..self.face_offsets[axis + 1])
            .filter(|&f| self.face_coords(f).1[axis] == layer)
            .collect()
    }

    pub fn all_boundary_faces(&self) -> Vec<usize> {
        (0..self.num_faces()).filter(|&f| self.is_boundary_face(f)).collect()
    }

    /// Uniform refinement by 2 along every axis.
    pub fn refined(&self) -> CartesianMesh {
        let mut n = self.counts;
        let mut h = self.sizes;
        for a in 0..self.dim {
            n[a] *= 2;
            h[a] *= 0.5;
        }
        CartesianMesh::from_parts(self.dim, self.origin, n, h)
    }

    /// Unrefined parent; every count must be even.
    fn coarsened(&self) -> Option<CartesianMesh> {
        let mut n = self.counts;
        let mut h = self.sizes;
        for a in 0..self.dim {
            if !n[a].is_multiple_of(2) {
                return None;
            }
            n[a] /= 2;
            h[a] *= 2.0;
        }
        Some(CartesianMesh::from_parts(self.dim, self.origin, n, h))
    }

    /// Number of whole cells on `axis` covering at least `length`.
    pub fn cells_covering(&self, axis: usize, length: f64) -> usize {
        let r = length / self.sizes[axis];
        let nearest = r.round();
        if (r - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            r.ceil() as usize
        }
    }
}

/// Map from a physical mesh into the padded mesh that contains it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    physical: CartesianMesh,
    offset_cells: [usize; 3],
    padding: [f64; 3],
    cell_index_map: Vec<usize>,
}

impl EmbeddingMap {
    fn new(physical: CartesianMesh, embedded: &CartesianMesh, offset_cells: [usize; 3]) -> Self {
        let mut padding = [0.0; 3];
        for a in 0..physical.dim {
            padding[a] = offset_cells[a] as f64 * physical.sizes[a];
        }
        let cell_index_map = (0..physical.num_cells())
            .map(|c| {
                let ijk = physical.cell_coords(c);
                let mut e = [0usize; 3];
                for a in 0..3 {
                    e[a] = ijk[a] + offset_cells[a];
                }
                embedded.cell_index(e)
            })
            .collect();
        EmbeddingMap {
            physical,
            offset_cells,
            padding,
            cell_index_map,
        }
    }

    pub fn physical(&self) -> &CartesianMesh {
        &self.physical
    }

    /// Padding cells on each side of every axis.
    pub fn offset_cells(&self) -> &[usize] {
        &self.offset_cells[..self.physical.dim]
    }

    pub fn padding(&self) -> &[f64] {
        &self.padding[..self.physical.dim]
    }

    /// Physical bounding box as (low corner, high corner).
    pub fn physical_box(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.physical.origin().to_vec();
        let hi = lo.iter().zip(self.physical.extents()).map(|(o, e)| o + e).collect();
        (lo, hi)
    }

    /// Embedded cell id of every physical cell.
    pub fn cell_index_map(&self) -> &[usize] {
        &self.cell_index_map
    }

    pub fn is_identity(&self) -> bool {
        self.offset_cells.iter().all(|&o| o == 0)
    }

    /// Restrict an embedded cell vector to the physical cells.
    pub fn restrict(&self, embedded_values: &[f64]) -> Vec<f64> {
        self.cell_index_map.iter().map(|&e| embedded_values[e]).collect()
    }

    /// The same embedding on both meshes refined once.
    pub fn refined(&self, embedded_fine: &CartesianMesh) -> EmbeddingMap {
        let mut off = self.offset_cells;
        for o in off.iter_mut().take(self.physical.dim) {
            *o *= 2;
        }
        EmbeddingMap::new(self.physical.refined(), embedded_fine, off)
    }
}

/// Pad `physical` by `padding[a]` on both sides of axis `a`. Padding must be
/// a whole number of cells.
pub fn embed_mesh(physical: &CartesianMesh, padding: &[f64]) -> Result<(CartesianMesh, EmbeddingMap)> {
    let dim = physical.dim;
    if padding.len() != dim {
        return Err(Error::invalid("padding needs one entry per axis"));
    }
    let mut off = [0usize; 3];
    for a in 0..dim {
        let p = padding[a];
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::invalid(format!("padding on axis {a} must be non-negative, got {p}")));
        }
        let cells = p / physical.sizes[a];
        let whole = cells.round();
        if (cells - whole).abs() > 1e-9 * whole.max(1.0) {
            return Err(Error::invalid(format!(
                "padding {p} on axis {a} is not a whole number of cells of size {}",
                physical.sizes[a]
            )));
        }
        off[a] = whole as usize;
    }
    Ok(embed_mesh_cells(physical, &off[..dim]))
}

/// Pad by a whole number of cells on both sides of each axis.
pub fn embed_mesh_cells(physical: &CartesianMesh, pad_cells: &[usize]) -> (CartesianMesh, EmbeddingMap) {
    let dim = physical.dim;
    let mut off = [0usize; 3];
    let mut origin = physical.origin;
    let mut counts = physical.counts;
    off[..dim].copy_from_slice(&pad_cells[..dim]);
    for a in 0..dim {
        origin[a] -= pad_cells[a] as f64 * physical.sizes[a];
        counts[a] += 2 * pad_cells[a];
    }
    let embedded = CartesianMesh::from_parts(dim, origin, counts, physical.sizes);
    let map = EmbeddingMap::new(physical.clone(), &embedded, off);
    (embedded, map)
}

/// Uniformly refined levels, ℓ = 0 finest to ℓ = L coarsest, with the
/// canonical inter-level prolongations.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    levels: Vec<CartesianMesh>,
    p_theta: Vec<CsrMatrix>,
    p_u: Vec<CsrMatrix>,
}

/// Refine `coarsest` until `num_levels` levels exist.
pub fn refine_hierarchy(coarsest: &CartesianMesh, num_levels: usize) -> Result<MeshHierarchy> {
    if num_levels == 0 {
        return Err(Error::invalid("a hierarchy needs at least one level"));
    }
    let mut coarse_to_fine = vec![coarsest.clone()];
    for _ in 1..num_levels {
        let next = coarse_to_fine.last().unwrap().refined();
        coarse_to_fine.push(next);
    }
    coarse_to_fine.reverse();
    let levels = coarse_to_fine;
    let p_theta = (0..num_levels - 1)
        .map(|l| cell_prolongation(&levels[l], &levels[l + 1]))
        .collect();
    let p_u = (0..num_levels - 1)
        .map(|l| face_prolongation(&levels[l], &levels[l + 1]))
        .collect();
    Ok(MeshHierarchy { levels, p_theta, p_u })
}

impl MeshHierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Index of the coarsest level, L.
    pub fn coarsest_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &CartesianMesh {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[CartesianMesh] {
        &self.levels
    }

    /// Cell prolongation from level `l+1` to level `l`.
    pub fn p_theta(&self, l: usize) -> &CsrMatrix {
        &self.p_theta[l]
    }

    /// Face prolongation from level `l+1` to level `l`.
    pub fn p_u(&self, l: usize) -> &CsrMatrix {
        &self.p_u[l]
    }
}

/// Constant injection: each fine cell takes its parent's value.
pub fn cell_prolongation(fine: &CartesianMesh, coarse: &CartesianMesh) -> CsrMatrix {
    debug_assert_eq!(fine.coarsened().as_ref(), Some(coarse));
    let triplets: Vec<_> = (0..fine.num_cells())
        .map(|c| {
            let f = fine.cell_coords(c);
            let parent = coarse.cell_index([f[0] / 2, f[1] / 2, f[2] / 2]);
            (c, parent, 1.0)
        })
        .collect();
    CsrMatrix::from_triplets(fine.num_cells(), coarse.num_cells(), &triplets)
}

/// Interpolation of the lowest-order face element from `coarse` onto
/// `fine`, with flux dofs. A coarse basis function with unit flux has
/// normal component `1/A` on its own face and varies linearly to zero on
/// the opposite face of each adjacent coarse cell, so
///
/// * fine faces lying on the coarse face carry flux `1/2^(d-1)`;
/// * fine faces on the mid-plane of each adjacent coarse cell carry `1/2^d`;
/// * fine faces of the other orientations carry nothing.
pub fn face_prolongation(fine: &CartesianMesh, coarse: &CartesianMesh) -> CsrMatrix {
    let dim = coarse.dim;
    let on_face = 1.0 / (1usize << (dim - 1)) as f64;
    let mid_plane = 1.0 / (1usize << dim) as f64;
    let mut triplets = Vec::with_capacity(coarse.num_faces() * (1 << dim) * 2);
    for cf in 0..coarse.num_faces() {
        let (axis, ijk) = coarse.face_coords(cf);
        let transverse: Vec<usize> = (0..dim).filter(|&b| b != axis).collect();
        let n_sub = 1usize << (dim - 1);
        for sub in 0..n_sub {
            let mut base = [0usize; 3];
            for (bit, &b) in transverse.iter().enumerate() {
                base[b] = 2 * ijk[b] + ((sub >> bit) & 1);
            }
            let mut coincident = base;
            coincident[axis] = 2 * ijk[axis];
            triplets.push((fine.face_index(axis, coincident), cf, on_face));
            if ijk[axis] > 0 {
                let mut m = base;
                m[axis] = 2 * ijk[axis] - 1;
                triplets.push((fine.face_index(axis, m), cf, mid_plane));
            }
            if ijk[axis] < coarse.counts[axis] {
                let mut m = base;
                m[axis] = 2 * ijk[axis] + 1;
                triplets.push((fine.face_index(axis, m), cf, mid_plane));
            }
        }
    }
    CsrMatrix::from_triplets(fine.num_faces(), coarse.num_faces(), &triplets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, n: usize) -> CartesianMesh {
        build_cartesian_mesh(dim, &vec![0.0; dim], &vec![1.0; dim], &vec![n; dim]).unwrap()
    }

    #[test]
    fn spe10_layer_mesh() {
        let m = build_cartesian_mesh(2, &[0.0, 0.0], &[1200.0, 2200.0], &[60, 220]).unwrap();
        assert_eq!(m.num_cells(), 13200);
        assert_eq!(m.cell_sizes(), &[20.0, 10.0]);
        assert_eq!(m.cell_volume(), 200.0);
    }

    #[test]
    fn single_cell_has_four_faces() {
        let m = unit(2, 1);
        assert_eq!(m.num_cells(), 1);
        assert_eq!(m.num_faces(), 4);
        assert_eq!(m.all_boundary_faces().len(), 4);
    }

    #[test]
    fn unit_cube_64_cells() {
        let m = unit(3, 4);
        assert_eq!(m.num_cells(), 64);
        assert_eq!(m.num_faces_axis(2), 4 * 4 * 5);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(build_cartesian_mesh(2, &[0.0, 0.0], &[0.0, 1.0], &[1, 1]).is_err());
        assert!(build_cartesian_mesh(2, &[0.0, 0.0], &[1.0, -1.0], &[1, 1]).is_err());
        assert!(build_cartesian_mesh(2, &[0.0, 0.0], &[1.0, 1.0], &[0, 1]).is_err());
        assert!(build_cartesian_mesh(4, &[0.0; 4], &[1.0; 4], &[1; 4]).is_err());
    }

    #[test]
    fn face_adjacency_counts() {
        for dim in [2, 3] {
            let m = build_cartesian_mesh(dim, &vec![0.0; dim], &vec![1.0; dim], &[3, 2, 4][..dim]).unwrap();
            let mut per_cell = vec![0; m.num_cells()];
            for f in 0..m.num_faces() {
                let (lo, hi) = m.face_cells(f);
                let n = lo.is_some() as usize + hi.is_some() as usize;
                assert_eq!(n, if m.is_boundary_face(f) { 1 } else { 2 });
                for c in [lo, hi].into_iter().flatten() {
                    per_cell[c] += 1;
                }
                let (axis, ijk) = m.face_coords(f);
                assert_eq!(m.face_index(axis, ijk), f);
            }
            assert!(per_cell.iter().all(|&k| k == 2 * dim));
        }
    }

    #[test]
    fn spe10_embedding() {
        let m = build_cartesian_mesh(2, &[0.0, 0.0], &[1200.0, 2200.0], &[60, 220]).unwrap();
        let (e, map) = embed_mesh(&m, &[100.0, 100.0]).unwrap();
        assert_eq!(e.origin(), &[-100.0, -100.0]);
        let ext = e.extents();
        assert_eq!([e.origin()[0] + ext[0], e.origin()[1] + ext[1]], [1300.0, 2300.0]);
        assert_eq!(map.offset_cells(), &[5, 10]);
    }

    #[test]
    fn zero_padding_is_identity() {
        let m = unit(2, 5);
        let (e, map) = embed_mesh(&m, &[0.0, 0.0]).unwrap();
        assert_eq!(e, m);
        assert!(map.is_identity());
        assert_eq!(map.cell_index_map(), (0..25).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn unit_square_four_cell_padding() {
        let m = unit(2, 16);
        let (e, map) = embed_mesh(&m, &[0.25, 0.25]).unwrap();
        assert_eq!(e.cell_counts(), &[24, 24]);
        assert_eq!(map.offset_cells(), &[4, 4]);
        // physical (0,0) -> embedded (4,4); physical (15,15) -> (19,19)
        assert_eq!(map.cell_index_map()[0], 4 + 24 * 4);
        assert_eq!(map.cell_index_map()[255], 19 + 24 * 19);
    }

    #[test]
    fn partial_cell_padding_rejected() {
        let m = unit(2, 16);
        assert!(embed_mesh(&m, &[0.1, 0.0]).is_err());
        assert!(embed_mesh(&m, &[-0.0625, 0.0]).is_err());
    }

    #[test]
    fn hierarchy_shapes() {
        let c = build_cartesian_mesh(2, &[0.0, 0.0], &[1200.0, 2200.0], &[60, 220]).unwrap();
        let h = refine_hierarchy(&c, 4).unwrap();
        assert_eq!(h.level(0).cell_counts(), &[480, 1760]);
        assert_eq!(h.level(3).cell_counts(), &[60, 220]);
        let one = refine_hierarchy(&unit(2, 1), 2).unwrap();
        let p = one.p_theta(0).to_dense();
        assert_eq!(p.shape(), (4, 1));
        assert!(p.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn prolongated_face_flux_is_conserved() {
        for dim in [2, 3] {
            let h = refine_hierarchy(&unit(dim, 2), 2).unwrap();
            let coarse = h.level(1);
            let fine = h.level(0);
            for cf in 0..coarse.num_faces() {
                let mut e = vec![0.0; coarse.num_faces()];
                e[cf] = 1.0;
                let u = h.p_u(0).mul_vec(&e);
                let (axis, ijk) = coarse.face_coords(cf);
                // fine faces coincident with the coarse face
                let total: f64 = (0..fine.num_faces())
                    .filter(|&f| {
                        let (fa, fijk) = fine.face_coords(f);
                        fa == axis
                            && fijk[axis] == 2 * ijk[axis]
                            && (0..dim).filter(|&b| b != axis).all(|b| fijk[b] / 2 == ijk[b])
                    })
                    .map(|f| u[f])
                    .sum();
                assert!((total - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn children_volumes_sum_to_parent() {
        let h = refine_hierarchy(&unit(3, 2), 2).unwrap();
        let vf = vec![h.level(0).cell_volume(); h.level(0).num_cells()];
        let vc = h.p_theta(0).mul_vec_transpose(&vf);
        for v in vc {
            assert!((v - h.level(1).cell_volume()).abs() < 1e-15);
        }
    }

    #[test]
    fn p_theta_columns_have_2_pow_d_ones() {
        for dim in [2, 3] {
            let h = refine_hierarchy(&unit(dim, 3), 2).unwrap();
            let pt = h.p_theta(0).transpose();
            for c in 0..pt.nrows() {
                let (cols, vals) = pt.row(c);
                assert_eq!(cols.len(), 1 << dim);
                assert!(vals.iter().all(|&v| v == 1.0));
            }
        }
    }
}
