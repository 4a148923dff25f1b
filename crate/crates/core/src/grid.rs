//! Uniform square meshes of the unit square and the nested coarse / fine /
//! control hierarchy.
//!
//! Meshes are implicit: a mesh with `n` subdivisions per side has nodes
//! `(i/n, j/n)` numbered `i + j (n + 1)` and elements numbered `ex + ey n`.
//! Degrees of freedom are the interior nodes only, numbered row by row:
//! node `(ix, iy)` with `1 <= ix, iy <= n - 1` is DOF `(iy - 1)(n - 1) + ix - 1`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("mesh resolution must be at least 1")]
    EmptyMesh,
    #[error("fine resolution {fine} is not divisible by {what} resolution {coarse}")]
    NotDivisible {
        fine: usize,
        coarse: usize,
        what: &'static str,
    },
    #[error("element {id} out of range (mesh has {count} elements)")]
    InvalidElement { id: usize, count: usize },
    #[error("node {id} out of range (mesh has {count} nodes)")]
    InvalidNode { id: usize, count: usize },
    #[error("vertex {0} lies on the boundary")]
    BoundaryVertex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuredMesh {
    n: usize,
}

impl StructuredMesh {
    pub fn new(n: usize) -> Result<Self, GridError> {
        if n == 0 {
            return Err(GridError::EmptyMesh);
        }
        Ok(Self { n })
    }

    /// Subdivisions per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn element_count(&self) -> usize {
        self.n * self.n
    }

    pub fn interior_node_count(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    #[inline]
    pub fn node_id(&self, ix: usize, iy: usize) -> usize {
        ix + iy * (self.n + 1)
    }

    #[inline]
    pub fn node_index(&self, node: usize) -> (usize, usize) {
        (node % (self.n + 1), node / (self.n + 1))
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.node_index(node);
        (ix as f64 * self.h(), iy as f64 * self.h())
    }

    #[inline]
    pub fn element_id(&self, ex: usize, ey: usize) -> usize {
        ex + ey * self.n
    }

    #[inline]
    pub fn element_index(&self, e: usize) -> (usize, usize) {
        (e % self.n, e / self.n)
    }

    /// Corner node ids, counterclockwise from the lower-left corner.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ex, ey) = self.element_index(e);
        [
            self.node_id(ex, ey),
            self.node_id(ex + 1, ey),
            self.node_id(ex + 1, ey + 1),
            self.node_id(ex, ey + 1),
        ]
    }

    pub fn element_centroid(&self, e: usize) -> (f64, f64) {
        let (ex, ey) = self.element_index(e);
        ((ex as f64 + 0.5) * self.h(), (ey as f64 + 0.5) * self.h())
    }

    pub fn is_boundary_index(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix == self.n || iy == self.n
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let (ix, iy) = self.node_index(node);
        self.is_boundary_index(ix, iy)
    }

    /// DOF number of node `(ix, iy)`, or `None` on the boundary.
    #[inline]
    pub fn dof(&self, ix: usize, iy: usize) -> Option<usize> {
        if self.is_boundary_index(ix, iy) {
            None
        } else {
            Some((iy - 1) * (self.n - 1) + ix - 1)
        }
    }

    #[inline]
    pub fn dof_index(&self, dof: usize) -> (usize, usize) {
        (dof % (self.n - 1) + 1, dof / (self.n - 1) + 1)
    }

    pub fn node_dof(&self, node: usize) -> Option<usize> {
        let (ix, iy) = self.node_index(node);
        self.dof(ix, iy)
    }

    pub fn interior_node_ids(&self) -> Vec<usize> {
        (0..self.interior_node_count())
            .map(|d| {
                let (ix, iy) = self.dof_index(d);
                self.node_id(ix, iy)
            })
            .collect()
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.node_count()).map(|v| self.is_boundary(v)).collect()
    }
}

/// Half-open rectangle of elements `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl ElementRect {
    /// Vertex star of `(vx, vy)` grown by `layers` rings, clipped to an `n x n` mesh.
    pub fn around_vertex(n: usize, vx: usize, vy: usize, layers: usize) -> Self {
        Self {
            x0: vx.saturating_sub(1 + layers),
            x1: (vx + 1 + layers).min(n),
            y0: vy.saturating_sub(1 + layers),
            y1: (vy + 1 + layers).min(n),
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn element_count(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains_element(&self, ex: usize, ey: usize) -> bool {
        ex >= self.x0 && ex < self.x1 && ey >= self.y0 && ey < self.y1
    }

    /// Grows by `layers` element rings, clipped to an `n x n` mesh.
    pub fn grow(&self, layers: usize, n: usize) -> Self {
        Self {
            x0: self.x0.saturating_sub(layers),
            x1: (self.x1 + layers).min(n),
            y0: self.y0.saturating_sub(layers),
            y1: (self.y1 + layers).min(n),
        }
    }

    /// Interior fine nodes in the closed rectangle, as inclusive index bounds
    /// `(ix_lo, ix_hi, iy_lo, iy_hi)` on a mesh refined by `ratio` with `nh`
    /// subdivisions. `None` if empty.
    pub fn closed_fine_nodes(&self, ratio: usize, nh: usize) -> Option<NodeBox> {
        NodeBox::new(
            (self.x0 * ratio).max(1),
            (self.x1 * ratio).min(nh - 1),
            (self.y0 * ratio).max(1),
            (self.y1 * ratio).min(nh - 1),
        )
    }

    /// Interior fine nodes strictly inside the rectangle.
    pub fn open_fine_nodes(&self, ratio: usize, nh: usize) -> Option<NodeBox> {
        NodeBox::new(
            (self.x0 * ratio + 1).max(1),
            (self.x1 * ratio).saturating_sub(1).min(nh - 1),
            (self.y0 * ratio + 1).max(1),
            (self.y1 * ratio).saturating_sub(1).min(nh - 1),
        )
    }

    /// Inclusive range of mesh vertices `(x_lo, x_hi, y_lo, y_hi)` of the closed rectangle.
    pub fn vertex_bounds(&self) -> (usize, usize, usize, usize) {
        (self.x0, self.x1, self.y0, self.y1)
    }
}

/// Inclusive box of fine node indices; every node inside is an interior node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeBox {
    pub ix_lo: usize,
    pub ix_hi: usize,
    pub iy_lo: usize,
    pub iy_hi: usize,
}

impl NodeBox {
    pub fn new(ix_lo: usize, ix_hi: usize, iy_lo: usize, iy_hi: usize) -> Option<Self> {
        if ix_lo > ix_hi || iy_lo > iy_hi {
            None
        } else {
            Some(Self {
                ix_lo,
                ix_hi,
                iy_lo,
                iy_hi,
            })
        }
    }

    pub fn width(&self) -> usize {
        self.ix_hi - self.ix_lo + 1
    }

    pub fn height(&self) -> usize {
        self.iy_hi - self.iy_lo + 1
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.ix_lo && ix <= self.ix_hi && iy >= self.iy_lo && iy <= self.iy_hi
    }

    pub fn intersect(&self, other: &NodeBox) -> Option<NodeBox> {
        NodeBox::new(
            self.ix_lo.max(other.ix_lo),
            self.ix_hi.min(other.ix_hi),
            self.iy_lo.max(other.iy_lo),
            self.iy_hi.min(other.iy_hi),
        )
    }

    /// Position of node `(ix, iy)` in the row-major box layout.
    #[inline]
    pub fn local(&self, ix: usize, iy: usize) -> usize {
        (iy - self.iy_lo) * self.width() + (ix - self.ix_lo)
    }

    /// Global DOF ranges (one contiguous range per fine row) on a mesh with `nh` subdivisions.
    pub fn dof_rows(&self, nh: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let stride = nh - 1;
        (self.iy_lo..=self.iy_hi).map(move |iy| {
            let start = (iy - 1) * stride + self.ix_lo - 1;
            start..start + self.width()
        })
    }

    /// All DOF ids in row-major order.
    pub fn dofs(&self, nh: usize) -> Vec<usize> {
        self.dof_rows(nh).flatten().collect()
    }
}

/// Nested coarse (`1/H`), fine (`1/h`) and control (`1/rho`) meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshHierarchy {
    pub coarse: StructuredMesh,
    pub fine: StructuredMesh,
    pub control: StructuredMesh,
    /// `H / h`
    pub coarse_ratio: usize,
    /// `rho / h`
    pub control_ratio: usize,
}

pub fn build_hierarchy(n_coarse: usize, n_fine: usize, n_control: usize) -> Result<MeshHierarchy, GridError> {
    let coarse = StructuredMesh::new(n_coarse)?;
    let fine = StructuredMesh::new(n_fine)?;
    let control = StructuredMesh::new(n_control)?;
    if n_fine % n_coarse != 0 {
        return Err(GridError::NotDivisible {
            fine: n_fine,
            coarse: n_coarse,
            what: "coarse",
        });
    }
    if n_fine % n_control != 0 {
        return Err(GridError::NotDivisible {
            fine: n_fine,
            coarse: n_control,
            what: "control",
        });
    }
    Ok(MeshHierarchy {
        coarse,
        fine,
        control,
        coarse_ratio: n_fine / n_coarse,
        control_ratio: n_fine / n_control,
    })
}

impl MeshHierarchy {
    /// Coarse element containing fine element `e`.
    pub fn coarse_parent(&self, fine_element: usize) -> usize {
        let (ex, ey) = self.fine.element_index(fine_element);
        self.coarse
            .element_id(ex / self.coarse_ratio, ey / self.coarse_ratio)
    }

    /// Control cell containing fine element `e`.
    pub fn control_parent(&self, fine_element: usize) -> usize {
        let (ex, ey) = self.fine.element_index(fine_element);
        self.control
            .element_id(ex / self.control_ratio, ey / self.control_ratio)
    }

    /// Number of coarse interior vertices (the multiscale basis size).
    pub fn coarse_dofs(&self) -> usize {
        self.coarse.interior_node_count()
    }
}

/// Fine elements tiling a coarse element, row-major within the coarse element.
pub fn coarse_to_fine_elements(hier: &MeshHierarchy, coarse_element: usize) -> Result<Vec<usize>, GridError> {
    if coarse_element >= hier.coarse.element_count() {
        return Err(GridError::InvalidElement {
            id: coarse_element,
            count: hier.coarse.element_count(),
        });
    }
    let r = hier.coarse_ratio;
    let (cx, cy) = hier.coarse.element_index(coarse_element);
    let mut out = Vec::with_capacity(r * r);
    for fy in cy * r..(cy + 1) * r {
        for fx in cx * r..(cx + 1) * r {
            out.push(hier.fine.element_id(fx, fy));
        }
    }
    Ok(out)
}

/// Coarse vertex patch grown by element rings (Moore neighbourhood).
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Global coarse node id of the center vertex.
    pub center_vertex: usize,
    pub layers: usize,
    pub rect: ElementRect,
    pub coarse_elements: Vec<usize>,
    /// Fine interior DOFs strictly inside the patch.
    pub fine_dofs: Vec<usize>,
}

pub fn expand_patch(hier: &MeshHierarchy, vertex: usize, layers: usize) -> Result<Patch, GridError> {
    let coarse = &hier.coarse;
    if vertex >= coarse.node_count() {
        return Err(GridError::InvalidNode {
            id: vertex,
            count: coarse.node_count(),
        });
    }
    if coarse.is_boundary(vertex) {
        return Err(GridError::BoundaryVertex(vertex));
    }
    let (vx, vy) = coarse.node_index(vertex);
    let rect = ElementRect::around_vertex(coarse.n(), vx, vy, layers);
    let mut coarse_elements = Vec::with_capacity(rect.element_count());
    for ey in rect.y0..rect.y1 {
        for ex in rect.x0..rect.x1 {
            coarse_elements.push(coarse.element_id(ex, ey));
        }
    }
    let fine_dofs = rect
        .open_fine_nodes(hier.coarse_ratio, hier.fine.n())
        .map(|b| b.dofs(hier.fine.n()))
        .unwrap_or_default();
    Ok(Patch {
        center_vertex: vertex,
        layers,
        rect,
        coarse_elements,
        fine_dofs,
    })
}
