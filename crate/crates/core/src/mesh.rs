//! Radial (1D in `r`, with the `r^{n-1}` surface factor) and tensor-grid meshes.
//!
//! Both kinds expose the same element view: an element carries its node list,
//! constant gradient coefficients and volume. Radial cells are single elements;
//! tensor boxes are split into the `n!` Kuhn simplices so that nodal fields
//! have a piecewise-affine interpolant without hourglass modes.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::{lit, quadrature, to_f64, Error, Real, Result};

/// Minimum total number of cells accepted by [`Mesh::build`].
pub const MIN_CELLS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum MeshSpec<T> {
    /// Shells `inner <= |x| <= outer` in `R^dim`. `grading` is the ratio between
    /// adjacent cell widths, growing outward (refines toward the inner radius).
    Radial {
        dim: usize,
        inner: T,
        outer: T,
        cells: usize,
        grading: Option<T>,
    },
    /// Axis-aligned box `[lower, upper]` split into `cells[k]` intervals per axis.
    Tensor {
        lower: Vec<T>,
        upper: Vec<T>,
        cells: Vec<usize>,
    },
}

impl<T: Real> MeshSpec<T> {
    pub fn radial(dim: usize, inner: T, outer: T, cells: usize) -> Self {
        MeshSpec::Radial {
            dim,
            inner,
            outer,
            cells,
            grading: None,
        }
    }

    pub fn graded(dim: usize, inner: T, outer: T, cells: usize, grading: T) -> Self {
        MeshSpec::Radial {
            dim,
            inner,
            outer,
            cells,
            grading: Some(grading),
        }
    }

    pub fn unit_box(dim: usize, per_axis: usize) -> Self {
        MeshSpec::Tensor {
            lower: vec![T::zero(); dim],
            upper: vec![T::one(); dim],
            cells: vec![per_axis; dim],
        }
    }
}

/// Geometric extent of a mesh or subdomain.
#[derive(Clone, Debug, PartialEq)]
pub enum Region<T> {
    Annulus { inner: T, outer: T },
    Box { lower: Vec<T>, upper: Vec<T> },
}

impl<T: Real> Region<T> {
    pub fn contains(&self, other: &Region<T>) -> bool {
        match (self, other) {
            (Region::Annulus { inner, outer }, Region::Annulus { inner: i2, outer: o2 }) => {
                *i2 >= *inner && *o2 <= *outer
            }
            (Region::Box { lower, upper }, Region::Box { lower: l2, upper: u2 }) => lower
                .iter()
                .zip(l2)
                .all(|(a, b)| b >= a)
                && upper.iter().zip(u2).all(|(a, b)| b <= a),
            _ => false,
        }
    }

    /// Distance from `inner_region` to the complement of `self`; negative when not contained.
    pub fn gap(&self, inner_region: &Region<T>) -> T {
        match (self, inner_region) {
            (Region::Annulus { inner, outer }, Region::Annulus { inner: i2, outer: o2 }) => {
                let lo = if *inner > T::zero() { *i2 - *inner } else { T::infinity() };
                lo.min(*outer - *o2)
            }
            (Region::Box { lower, upper }, Region::Box { lower: l2, upper: u2 }) => {
                let mut g = T::infinity();
                for k in 0..lower.len() {
                    g = g.min(l2[k] - lower[k]).min(upper[k] - u2[k]);
                }
                g
            }
            _ => -T::infinity(),
        }
    }

    /// Distance from a point to the boundary of the region (radial points are radii).
    pub fn distance_to_boundary(&self, point: &[T]) -> T {
        match self {
            Region::Annulus { inner, outer } => {
                let r = point[0];
                let lo = if *inner > T::zero() { r - *inner } else { T::infinity() };
                lo.min(*outer - r)
            }
            Region::Box { lower, upper } => {
                let mut d = T::infinity();
                for k in 0..lower.len() {
                    d = d.min(point[k] - lower[k]).min(upper[k] - point[k]);
                }
                d
            }
        }
    }

    /// Whether the closed ball `B(center, radius)` lies in the closed region.
    ///
    /// On annuli the center is a radius `ρ`; a ball at `ρ > 0` covers radii
    /// `[ρ - radius, ρ + radius]` and must not wrap around the origin.
    pub fn contains_ball(&self, center: &[T], radius: T) -> bool {
        let tol = lit::<T>(1e-12) * (T::one() + radius);
        match self {
            Region::Annulus { inner, outer } => {
                let rho = center[0];
                if rho + radius > *outer + tol {
                    return false;
                }
                if rho == T::zero() {
                    *inner == T::zero()
                } else {
                    rho - radius >= *inner - tol
                }
            }
            Region::Box { .. } => self.distance_to_boundary(center) >= radius - tol,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Element<T> {
    pub cell: usize,
    pub nodes: Vec<usize>,
    /// Gradient coefficients, `nodes.len() × grad_dim`, row per node.
    pub grad: Vec<T>,
    pub volume: T,
}

impl<T: Real> Element<T> {
    /// Constant gradient of the nodal field `u` on this element.
    pub fn gradient_into(&self, u: &[T], gdim: usize, out: &mut [T]) {
        out.iter_mut().for_each(|g| *g = T::zero());
        for (j, &node) in self.nodes.iter().enumerate() {
            let uj = u[node];
            for k in 0..gdim {
                out[k] = out[k] + self.grad[j * gdim + k] * uj;
            }
        }
    }

    /// Value at the element centroid (mean of its nodes).
    pub fn midpoint_value(&self, u: &[T]) -> T {
        let s: T = self.nodes.iter().map(|&i| u[i]).sum();
        s / lit(self.nodes.len() as f64)
    }

    /// Weight of each node's hat function at the element centroid.
    pub fn hat_weight(&self) -> T {
        T::one() / lit(self.nodes.len() as f64)
    }
}

#[derive(Clone, Debug)]
enum Geometry<T> {
    Radial { nodes: Vec<T> },
    Tensor { lower: Vec<T>, upper: Vec<T>, counts: Vec<usize>, spacing: Vec<T> },
}

#[derive(Clone, Debug)]
pub struct Mesh<T> {
    id: u64,
    dim: usize,
    geometry: Geometry<T>,
    grading: Option<T>,
    node_coords: Vec<T>,
    boundary: Vec<bool>,
    centroids: Vec<T>,
    volumes: Vec<T>,
    elements: Vec<Element<T>>,
    cell_elements: Vec<(usize, usize)>,
}

/// A submesh together with the index maps back into its parent.
#[derive(Clone, Debug)]
pub struct SubMesh<T> {
    pub mesh: Mesh<T>,
    pub node_map: Vec<usize>,
    pub cell_map: Vec<usize>,
}

impl<T: Real> SubMesh<T> {
    pub fn restrict_nodes(&self, parent_values: &[T]) -> Vec<T> {
        self.node_map.iter().map(|&i| parent_values[i]).collect()
    }

    pub fn restrict_cells(&self, parent_values: &[T]) -> Vec<T> {
        self.cell_map.iter().map(|&c| parent_values[c]).collect()
    }
}

pub fn build_mesh<T: Real>(spec: &MeshSpec<T>) -> Result<Mesh<T>> {
    Mesh::build(spec)
}

impl<T: Real> Mesh<T> {
    pub fn build(spec: &MeshSpec<T>) -> Result<Self> {
        match spec {
            MeshSpec::Radial { dim, inner, outer, cells, grading } => {
                if *inner < T::zero() || !(*outer > *inner) || !outer.is_finite() {
                    return Err(Error::Mesh(format!(
                        "radial extent must satisfy 0 <= inner < outer, got [{inner}, {outer}]"
                    )));
                }
                if *cells < MIN_CELLS {
                    return Err(Error::Mesh(format!(
                        "cell count {cells} below minimum {MIN_CELLS}"
                    )));
                }
                let nodes = radial_nodes(*inner, *outer, *cells, *grading)?;
                let mut mesh = Self::radial_from_nodes(*dim, nodes)?;
                mesh.grading = *grading;
                Ok(mesh)
            }
            MeshSpec::Tensor { lower, upper, cells } => {
                Self::tensor(lower.clone(), upper.clone(), cells.clone())
            }
        }
    }

    /// Radial mesh through the given strictly increasing radii.
    pub fn radial_from_nodes(dim: usize, nodes: Vec<T>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Mesh(format!("dimension must be >= 2, got {dim}")));
        }
        if nodes.len() < 2 {
            return Err(Error::Mesh("need at least two radial nodes".into()));
        }
        if nodes[0] < T::zero() || nodes.iter().any(|r| !r.is_finite()) {
            return Err(Error::Mesh("radii must be finite and nonnegative".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Mesh("radial nodes must be strictly increasing".into()));
        }
        let ncell = nodes.len() - 1;
        let area = quadrature::sphere_area::<T>(dim);
        let nd = lit::<T>(dim as f64);
        let mut centroids = Vec::with_capacity(ncell);
        let mut volumes = Vec::with_capacity(ncell);
        let mut elements = Vec::with_capacity(ncell);
        for c in 0..ncell {
            let (a, b) = (nodes[c], nodes[c + 1]);
            let w = b - a;
            let vol = area * (b.powi(dim as i32) - a.powi(dim as i32)) / nd;
            if !(vol > T::zero()) {
                return Err(Error::Mesh(format!("degenerate cell {c}")));
            }
            centroids.push((a + b) / lit(2.0));
            volumes.push(vol);
            elements.push(Element {
                cell: c,
                nodes: vec![c, c + 1],
                grad: vec![-T::one() / w, T::one() / w],
                volume: vol,
            });
        }
        let mut boundary = vec![false; nodes.len()];
        if nodes[0] > T::zero() {
            boundary[0] = true;
        }
        boundary[ncell] = true;
        let cell_elements = (0..ncell).map(|c| (c, c + 1)).collect();
        let id = hash_values(&[&[dim as f64], &nodes.iter().map(|&x| to_f64(x)).collect::<Vec<_>>()[..]]);
        Ok(Self {
            id,
            dim,
            node_coords: nodes.clone(),
            geometry: Geometry::Radial { nodes },
            grading: None,
            boundary,
            centroids,
            volumes,
            elements,
            cell_elements,
        })
    }

    fn tensor(lower: Vec<T>, upper: Vec<T>, counts: Vec<usize>) -> Result<Self> {
        let dim = lower.len();
        if dim < 2 || upper.len() != dim || counts.len() != dim {
            return Err(Error::Mesh(format!(
                "tensor mesh needs matching lower/upper/cells of dimension >= 2 (got {}, {}, {})",
                lower.len(),
                upper.len(),
                counts.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(*u > *l) || !u.is_finite() || !l.is_finite()) {
            return Err(Error::Mesh("tensor extents must be positive".into()));
        }
        let total: usize = counts.iter().product();
        if counts.iter().any(|&c| c == 0) || total < MIN_CELLS {
            return Err(Error::Mesh(format!(
                "cell count {total} below minimum {MIN_CELLS}"
            )));
        }
        let spacing: Vec<T> = (0..dim)
            .map(|k| (upper[k] - lower[k]) / lit(counts[k] as f64))
            .collect();
        let npc: Vec<usize> = counts.iter().map(|c| c + 1).collect();
        let nnodes: usize = npc.iter().product();

        let mut node_coords = Vec::with_capacity(nnodes * dim);
        let mut boundary = Vec::with_capacity(nnodes);
        for idx in 0..nnodes {
            let multi = unravel(idx, &npc);
            let mut on_bd = false;
            for k in 0..dim {
                node_coords.push(lower[k] + spacing[k] * lit(multi[k] as f64));
                on_bd |= multi[k] == 0 || multi[k] == counts[k];
            }
            boundary.push(on_bd);
        }

        let perms = permutations(dim);
        let cell_vol: T = spacing.iter().fold(T::one(), |a, &h| a * h);
        let simplex_vol = cell_vol / lit(perms.len() as f64);
        let mut centroids = Vec::with_capacity(total * dim);
        let mut volumes = Vec::with_capacity(total);
        let mut elements = Vec::with_capacity(total * perms.len());
        let mut cell_elements = Vec::with_capacity(total);
        for c in 0..total {
            let multi = unravel(c, &counts);
            for k in 0..dim {
                centroids.push(lower[k] + spacing[k] * (lit::<T>(multi[k] as f64) + lit(0.5)));
            }
            volumes.push(cell_vol);
            let start = elements.len();
            for perm in &perms {
                let mut vertex = multi.clone();
                let mut nodes = vec![ravel(&vertex, &npc)];
                let mut grad = vec![T::zero(); (dim + 1) * dim];
                for (step, &axis) in perm.iter().enumerate() {
                    vertex[axis] += 1;
                    nodes.push(ravel(&vertex, &npc));
                    let inv = T::one() / spacing[axis];
                    grad[(step + 1) * dim + axis] = grad[(step + 1) * dim + axis] + inv;
                    grad[step * dim + axis] = grad[step * dim + axis] - inv;
                }
                elements.push(Element { cell: c, nodes, grad, volume: simplex_vol });
            }
            cell_elements.push((start, elements.len()));
        }
        let mut key: Vec<f64> = lower.iter().chain(&upper).map(|&x| to_f64(x)).collect();
        key.extend(counts.iter().map(|&c| c as f64));
        let id = hash_values(&[&key]);
        Ok(Self {
            id,
            dim,
            geometry: Geometry::Tensor { lower, upper, counts, spacing },
            grading: None,
            node_coords,
            boundary,
            centroids,
            volumes,
            elements,
            cell_elements,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Spatial dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.geometry, Geometry::Radial { .. })
    }

    /// Number of stored coordinates per point: 1 (radius) or `n`.
    pub fn coord_dim(&self) -> usize {
        if self.is_radial() {
            1
        } else {
            self.dim
        }
    }

    /// Number of stored gradient components: 1 (radial component) or `n`.
    pub fn grad_dim(&self) -> usize {
        self.coord_dim()
    }

    pub fn grading(&self) -> Option<T> {
        self.grading
    }

    pub fn num_nodes(&self) -> usize {
        self.boundary.len()
    }

    pub fn num_cells(&self) -> usize {
        self.volumes.len()
    }

    pub fn node(&self, i: usize) -> &[T] {
        let d = self.coord_dim();
        &self.node_coords[i * d..(i + 1) * d]
    }

    pub fn centroid(&self, c: usize) -> &[T] {
        let d = self.coord_dim();
        &self.centroids[c * d..(c + 1) * d]
    }

    /// Euclidean norm of a node position (its radius on radial meshes).
    pub fn node_radius(&self, i: usize) -> T {
        norm(self.node(i))
    }

    pub fn centroid_radius(&self, c: usize) -> T {
        norm(self.centroid(c))
    }

    pub fn volume(&self, c: usize) -> T {
        self.volumes[c]
    }

    pub fn volumes(&self) -> &[T] {
        &self.volumes
    }

    pub fn total_volume(&self) -> T {
        self.volumes.iter().copied().sum()
    }

    pub fn elements(&self) -> &[Element<T>] {
        &self.elements
    }

    pub fn cell_elements(&self, c: usize) -> &[Element<T>] {
        let (a, b) = self.cell_elements[c];
        &self.elements[a..b]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    /// Radii of the nodes on radial meshes.
    pub fn radial_nodes(&self) -> Option<&[T]> {
        match &self.geometry {
            Geometry::Radial { nodes } => Some(nodes),
            Geometry::Tensor { .. } => None,
        }
    }

    /// Cell widths on radial meshes, per-axis spacing repeated otherwise.
    pub fn widths(&self) -> Vec<T> {
        match &self.geometry {
            Geometry::Radial { nodes } => nodes.windows(2).map(|w| w[1] - w[0]).collect(),
            Geometry::Tensor { spacing, .. } => spacing.clone(),
        }
    }

    /// Largest cell diameter.
    pub fn max_cell_size(&self) -> T {
        match &self.geometry {
            Geometry::Radial { nodes } => nodes
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(T::zero(), T::max),
            Geometry::Tensor { spacing, .. } => spacing.iter().map(|h| *h * *h).sum::<T>().sqrt(),
        }
    }

    pub fn tensor_counts(&self) -> Option<&[usize]> {
        match &self.geometry {
            Geometry::Tensor { counts, .. } => Some(counts),
            Geometry::Radial { .. } => None,
        }
    }

    pub fn region(&self) -> Region<T> {
        match &self.geometry {
            Geometry::Radial { nodes } => Region::Annulus {
                inner: nodes[0],
                outer: nodes[nodes.len() - 1],
            },
            Geometry::Tensor { lower, upper, .. } => Region::Box {
                lower: lower.clone(),
                upper: upper.clone(),
            },
        }
    }

    /// Cell containing `point`, if any (radial points are radii).
    pub fn locate(&self, point: &[T]) -> Option<usize> {
        match &self.geometry {
            Geometry::Radial { nodes } => {
                let r = point[0];
                if r < nodes[0] || r > nodes[nodes.len() - 1] {
                    return None;
                }
                let i = nodes.partition_point(|x| *x <= r);
                Some(i.saturating_sub(1).min(nodes.len() - 2))
            }
            Geometry::Tensor { lower, upper, counts, spacing } => {
                let mut multi = Vec::with_capacity(self.dim);
                for k in 0..self.dim {
                    if point[k] < lower[k] || point[k] > upper[k] {
                        return None;
                    }
                    let i = ((point[k] - lower[k]) / spacing[k]).floor().to_usize().unwrap_or(0);
                    multi.push(i.min(counts[k] - 1));
                }
                Some(ravel(&multi, counts))
            }
        }
    }

    /// Nodes and cells lying inside `region`; the region is snapped outward to mesh lines.
    pub fn submesh(&self, region: &Region<T>) -> Result<SubMesh<T>> {
        let tol = lit::<T>(1e-9);
        match (&self.geometry, region) {
            (Geometry::Radial { nodes }, Region::Annulus { inner, outer }) => {
                let scale = nodes[nodes.len() - 1];
                let lo = nodes.partition_point(|r| *r < *inner - tol * scale);
                let hi = nodes.partition_point(|r| *r <= *outer + tol * scale);
                if hi < lo + 2 {
                    return Err(Error::Mesh("submesh region contains fewer than two nodes".into()));
                }
                let sub_nodes = nodes[lo..hi].to_vec();
                let mesh = Self::radial_from_nodes(self.dim, sub_nodes)?;
                Ok(SubMesh {
                    mesh,
                    node_map: (lo..hi).collect(),
                    cell_map: (lo..hi - 1).collect(),
                })
            }
            (Geometry::Tensor { lower, spacing, counts, .. }, Region::Box { lower: l2, upper: u2 }) => {
                let mut first = Vec::with_capacity(self.dim);
                let mut last = Vec::with_capacity(self.dim);
                for k in 0..self.dim {
                    let a = ((l2[k] - lower[k]) / spacing[k] + tol).floor().to_isize().unwrap_or(0);
                    let b = ((u2[k] - lower[k]) / spacing[k] - tol).ceil().to_isize().unwrap_or(0);
                    let a = a.clamp(0, counts[k] as isize) as usize;
                    let b = b.clamp(0, counts[k] as isize) as usize;
                    if b <= a {
                        return Err(Error::Mesh("empty tensor submesh".into()));
                    }
                    first.push(a);
                    last.push(b);
                }
                let sub_counts: Vec<usize> = (0..self.dim).map(|k| last[k] - first[k]).collect();
                let sub_lower: Vec<T> = (0..self.dim)
                    .map(|k| lower[k] + spacing[k] * lit(first[k] as f64))
                    .collect();
                let sub_upper: Vec<T> = (0..self.dim)
                    .map(|k| lower[k] + spacing[k] * lit(last[k] as f64))
                    .collect();
                let mesh = Self::tensor(sub_lower, sub_upper, sub_counts.clone())?;
                let npc: Vec<usize> = counts.iter().map(|c| c + 1).collect();
                let sub_npc: Vec<usize> = sub_counts.iter().map(|c| c + 1).collect();
                let node_map = (0..mesh.num_nodes())
                    .map(|i| {
                        let m: Vec<usize> =
                            unravel(i, &sub_npc).iter().zip(&first).map(|(a, b)| a + b).collect();
                        ravel(&m, &npc)
                    })
                    .collect();
                let cell_map = (0..mesh.num_cells())
                    .map(|c| {
                        let m: Vec<usize> =
                            unravel(c, &sub_counts).iter().zip(&first).map(|(a, b)| a + b).collect();
                        ravel(&m, counts)
                    })
                    .collect();
                Ok(SubMesh { mesh, node_map, cell_map })
            }
            _ => Err(Error::Mesh("region kind does not match mesh kind".into())),
        }
    }

    /// Distance between two points in mesh coordinates (radial: difference of radii).
    pub fn distance(&self, a: &[T], b: &[T]) -> T {
        a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum::<T>().sqrt()
    }
}

pub(crate) fn norm<T: Real>(x: &[T]) -> T {
    x.iter().map(|v| *v * *v).sum::<T>().sqrt()
}

fn radial_nodes<T: Real>(inner: T, outer: T, cells: usize, grading: Option<T>) -> Result<Vec<T>> {
    let len = outer - inner;
    match grading {
        None => Ok((0..=cells)
            .map(|i| {
                if i == cells {
                    outer
                } else {
                    inner + len * lit(i as f64) / lit(cells as f64)
                }
            })
            .collect()),
        Some(g) => {
            if !(g > T::zero()) || !g.is_finite() {
                return Err(Error::Mesh(format!("grading must be positive, got {g}")));
            }
            if (g - T::one()).abs() < lit(1e-14) {
                return radial_nodes(inner, outer, cells, None);
            }
            let w0 = len * (g - T::one()) / (g.powi(cells as i32) - T::one());
            let mut nodes = Vec::with_capacity(cells + 1);
            let mut r = inner;
            let mut w = w0;
            nodes.push(r);
            for _ in 0..cells - 1 {
                r = r + w;
                nodes.push(r);
                w = w * g;
            }
            nodes.push(outer);
            Ok(nodes)
        }
    }
}

fn unravel(mut idx: usize, counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .map(|&c| {
            let i = idx % c;
            idx /= c;
            i
        })
        .collect()
}

fn ravel(multi: &[usize], counts: &[usize]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for (m, c) in multi.iter().zip(counts) {
        idx += m * stride;
        stride *= c;
    }
    idx
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn hash_values(parts: &[&[f64]]) -> u64 {
    let mut h = DefaultHasher::new();
    for part in parts {
        for x in *part {
            x.to_bits().hash(&mut h);
        }
        0xffu8.hash(&mut h);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_radial_widths() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 1.0, 2.0, 4)).unwrap();
        for w in m.widths() {
            assert_relative_eq!(w, 0.25, epsilon = 1e-15);
        }
        assert!(m.is_boundary(0) && m.is_boundary(4) && !m.is_boundary(2));
    }

    #[test]
    fn graded_radial_ratio() {
        let m = Mesh::build(&MeshSpec::<f64>::graded(3, 0.1, 1.0, 16, 1.2)).unwrap();
        let w = m.widths();
        for pair in w.windows(2) {
            assert_relative_eq!(pair[1] / pair[0], 1.2, epsilon = 1e-12);
        }
        assert_relative_eq!(m.radial_nodes().unwrap()[16], 1.0);
    }

    #[test]
    fn unit_square_volume() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 16)).unwrap();
        assert_eq!(m.num_cells(), 256);
        assert_relative_eq!(m.total_volume(), 1.0, epsilon = 1e-12);
        assert_eq!(m.elements().len(), 512);
    }

    #[test]
    fn radial_volumes_sum_to_shell() {
        let m = Mesh::build(&MeshSpec::<f64>::graded(3, 0.2, 1.5, 64, 1.05)).unwrap();
        let exact = 4.0 * std::f64::consts::PI / 3.0 * (1.5f64.powi(3) - 0.2f64.powi(3));
        assert_relative_eq!(m.total_volume(), exact, max_relative = 1e-10);
        assert!(m.volumes().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(Mesh::build(&MeshSpec::<f64>::radial(3, 1.0, 1.0, 8)).is_err());
        assert!(Mesh::build(&MeshSpec::<f64>::radial(3, -1.0, 1.0, 8)).is_err());
        assert!(Mesh::build(&MeshSpec::<f64>::radial(3, 0.0, 1.0, 3)).is_err());
        assert!(Mesh::build(&MeshSpec::<f64>::unit_box(2, 1)).is_err());
        assert!(Mesh::build(&MeshSpec::Tensor {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 0.0],
            cells: vec![4, 4]
        })
        .is_err());
    }

    #[test]
    fn kuhn_split_count_3d() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(3, 2)).unwrap();
        assert_eq!(m.elements().len(), 8 * 6);
        let v: f64 = m.elements().iter().map(|e| e.volume).sum();
        assert_relative_eq!(v, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn submesh_maps() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.0, 1.0, 10)).unwrap();
        let s = m.submesh(&Region::Annulus { inner: 0.2, outer: 0.8 }).unwrap();
        assert_eq!(s.node_map, (2..=8).collect::<Vec<_>>());
        assert!(s.mesh.is_boundary(0));

        let t = Mesh::build(&MeshSpec::<f64>::unit_box(2, 8)).unwrap();
        let s = t
            .submesh(&Region::Box { lower: vec![0.25, 0.25], upper: vec![0.75, 0.5] })
            .unwrap();
        assert_eq!(s.mesh.num_cells(), 8);
        for (i, &g) in s.node_map.iter().enumerate() {
            assert_eq!(s.mesh.node(i), t.node(g));
        }
        for (c, &g) in s.cell_map.iter().enumerate() {
            assert_eq!(s.mesh.centroid(c), t.centroid(g));
        }
    }

    #[test]
    fn locate_cells() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(2, 1.0, 2.0, 4)).unwrap();
        assert_eq!(m.locate(&[1.3]), Some(1));
        assert_eq!(m.locate(&[2.0]), Some(3));
        assert_eq!(m.locate(&[2.1]), None);
        let t = Mesh::build(&MeshSpec::<f64>::unit_box(2, 4)).unwrap();
        assert_eq!(t.locate(&[0.3, 0.6]), Some(1 + 2 * 4));
    }

    #[test]
    fn ball_containment() {
        let ann = Region::Annulus { inner: 0.1, outer: 1.0 };
        assert!(ann.contains_ball(&[0.5], 0.4));
        assert!(!ann.contains_ball(&[0.5], 0.45));
        assert!(!ann.contains_ball(&[0.0], 0.5));
        let ball = Region::Annulus { inner: 0.0, outer: 1.0 };
        assert!(ball.contains_ball(&[0.0], 1.0));
    }
}
